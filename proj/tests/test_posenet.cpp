#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>

#include "pampose/checkpoint.hpp"
#include "pampose/data.hpp"
#include "pampose/losses.hpp"
#include "pampose/posenet.hpp"
#include "support/oracles.hpp"

using namespace pampose;
using ag::Graph;
using ag::Tensor;
using geometry::PointCloud;
using geometry::Vec3;

namespace {

posenet::NetConfig tiny_config(bool with_pam = true) {
    posenet::NetConfig cfg;
    cfg.appearance_dim = 3;
    cfg.geometry_widths = {8, 12};
    cfg.appearance_widths = {8, 12};
    cfg.head_widths = {10, 6};
    cfg.pam.reduction_ratio = 2;
    cfg.pam.gap_conv_count = 3;
    cfg.pam.enable_cap = with_pam;
    cfg.pam.enable_gap = with_pam;
    cfg.pam.insertion_points = {"geo1", "app1"};
    return cfg;
}

PointCloud random_cloud(Rng& rng, int n, int feature_dim = 3) {
    PointCloud cloud;
    cloud.feature_dim = feature_dim;
    for (int i = 0; i < n; ++i) {
        cloud.points.push_back(
            Vec3{rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3)});
        for (int d = 0; d < feature_dim; ++d) cloud.features.push_back(rng.uniform());
    }
    return cloud;
}

Tensor find_param(Graph& g, const std::string& name) {
    for (Tensor t : g.parameters()) {
        if (g.name(t) == name) return t;
    }
    REQUIRE_MESSAGE(false, "no parameter named " << name);
    return {};
}

void overwrite(Graph& g, const std::string& name, double value) {
    auto v = g.leaf_values(find_param(g, name));
    std::fill(v.begin(), v.end(), value);
}

void overwrite(Graph& g, const std::string& name, const std::vector<double>& values) {
    auto v = g.leaf_values(find_param(g, name));
    REQUIRE(v.size() == values.size());
    std::copy(values.begin(), values.end(), v.begin());
}

PointCloud permute_cloud(const PointCloud& cloud, const std::vector<int>& perm) {
    PointCloud out;
    out.feature_dim = cloud.feature_dim;
    for (int idx : perm) {
        out.points.push_back(cloud.points[static_cast<std::size_t>(idx)]);
        for (int d = 0; d < cloud.feature_dim; ++d)
            out.features.push_back(
                cloud.features[static_cast<std::size_t>(idx) * cloud.feature_dim + d]);
    }
    return out;
}

}  // namespace

TEST_CASE("extract_features on a single point: global equals the fused feature") {
    Graph g;
    Rng rng(1);
    posenet::PoseNet net(g, tiny_config(), rng);
    PointCloud cloud = random_cloud(rng, 1);
    Tensor f = net.extract_features(g, cloud);
    const auto v = g.values(f);
    const int fused = 24;  // 12 + 12
    REQUIRE(g.shape(f) == ag::Shape{2 * fused, 1});
    for (int i = 0; i < fused; ++i)
        CHECK(v[static_cast<std::size_t>(i)] == v[static_cast<std::size_t>(fused + i)]);
}

TEST_CASE("extract_features is permutation-equivariant") {
    Graph g;
    Rng rng(2);
    posenet::PoseNet net(g, tiny_config(), rng);
    const int n = 7;
    PointCloud cloud = random_cloud(rng, n);
    std::vector<int> perm{3, 1, 6, 0, 2, 5, 4};
    PointCloud permuted = permute_cloud(cloud, perm);

    const auto a = g.values(net.extract_features(g, cloud));
    const auto b = g.values(net.extract_features(g, permuted));
    const int rows = 48;
    for (int r = 0; r < rows; ++r)
        for (int j = 0; j < n; ++j)
            CHECK(b[static_cast<std::size_t>(r) * n + j] ==
                  a[static_cast<std::size_t>(r) * n + perm[static_cast<std::size_t>(j)]]);
}

TEST_CASE("missing appearance features raise an input error") {
    Graph g;
    Rng rng(3);
    posenet::PoseNet net(g, tiny_config(), rng);
    PointCloud bare = random_cloud(rng, 5, 0);
    CHECK_THROWS_AS(net.extract_features(g, bare), InputError);
}

TEST_CASE("attention disabled matches a straight-line no-attention oracle bit-exactly") {
    Graph g;
    Rng rng(4);
    posenet::NetConfig cfg = tiny_config(false);  // no attention blocks at all
    posenet::PoseNet net(g, cfg, rng);
    PointCloud cloud = random_cloud(rng, 6);
    const auto got = g.values(net.extract_features(g, cloud));

    // read the parameters back and re-run the whole stack with plain loops
    auto conv = [&](const std::vector<double>& input, int cin, int n, const std::string& name) {
        const auto w = g.values(find_param(g, name + ".w"));
        const auto b = g.values(find_param(g, name + ".b"));
        const int cout = static_cast<int>(b.size());
        std::vector<double> out(static_cast<std::size_t>(cout) * n);
        for (int c = 0; c < cout; ++c)
            for (int j = 0; j < n; ++j) {
                double acc = b[static_cast<std::size_t>(c)];
                for (int k = 0; k < cin; ++k)
                    acc += w[static_cast<std::size_t>(c) * cin + k] *
                           input[static_cast<std::size_t>(k) * n + j];
                out[static_cast<std::size_t>(c) * n + j] = std::max(0.0, acc);
            }
        return out;
    };
    const int n = 6;
    std::vector<double> xyz(3 * n), app(3 * n);
    for (int i = 0; i < n; ++i)
        for (int d = 0; d < 3; ++d) {
            xyz[static_cast<std::size_t>(d) * n + i] = cloud.points[static_cast<std::size_t>(i)][d];
            app[static_cast<std::size_t>(d) * n + i] =
                cloud.features[static_cast<std::size_t>(i) * 3 + d];
        }
    auto geo = conv(conv(xyz, 3, n, "net.geo.conv1"), 8, n, "net.geo.conv2");
    auto apf = conv(conv(app, 3, n, "net.app.conv1"), 8, n, "net.app.conv2");
    std::vector<double> fused;
    fused.insert(fused.end(), geo.begin(), geo.end());
    fused.insert(fused.end(), apf.begin(), apf.end());
    // pooling contract: sorted-order accumulation
    std::vector<double> global(24, 0.0);
    for (int c = 0; c < 24; ++c) {
        std::vector<double> row(fused.begin() + c * n, fused.begin() + (c + 1) * n);
        std::sort(row.begin(), row.end());
        for (double v : row) global[static_cast<std::size_t>(c)] += v;
        global[static_cast<std::size_t>(c)] /= n;
    }
    std::vector<double> expect = fused;
    for (int c = 0; c < 24; ++c)
        for (int j = 0; j < n; ++j) expect.push_back(global[static_cast<std::size_t>(c)]);

    REQUIRE(got.size() == expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i) CHECK(got[i] == expect[i]);
}

TEST_CASE("prediction heads: bias-only behaviors") {
    Graph g;
    Rng rng(5);
    posenet::NetConfig cfg = tiny_config();
    posenet::PoseNet net(g, cfg, rng);

    // zero the final layers, then set the documented biases
    overwrite(g, "net.head.rot.fc3.w", 0.0);
    overwrite(g, "net.head.rot.fc3.b", std::vector<double>{1, 0, 0, 0});
    overwrite(g, "net.head.trans.fc3.w", 0.0);
    overwrite(g, "net.head.trans.fc3.b", std::vector<double>{0, 0, 0});
    overwrite(g, "net.head.conf.fc3.w", 0.0);
    overwrite(g, "net.head.conf.fc3.b", std::vector<double>{0});

    PointCloud cloud = random_cloud(rng, 5);
    Tensor feats = net.extract_features(g, cloud);
    const auto nodes = net.predict_dense(g, feats, cloud);
    const posenet::PredictionSet preds = net.prediction_values(g, nodes);
    REQUIRE(preds.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(preds.rotations[i][0] == 1.0);  // identity quaternion
        CHECK(preds.rotations[i][1] == 0.0);
        for (int d = 0; d < 3; ++d)
            CHECK(preds.translations[i][d] == cloud.points[i][d]);  // anchored offsets
        CHECK(preds.confidences[i] == 0.5);
    }
}

TEST_CASE("dense predictions have unit quaternions and finite values") {
    Graph g;
    Rng rng(6);
    posenet::PoseNet net(g, tiny_config(), rng);
    PointCloud cloud = random_cloud(rng, 9);
    const auto nodes = net.predict_dense(g, net.extract_features(g, cloud), cloud);
    const posenet::PredictionSet preds = net.prediction_values(g, nodes);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto& q = preds.rotations[i];
        const double norm = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
        CHECK(std::abs(norm - 1.0) <= 1e-9);
        CHECK(preds.confidences[i] > 0.0);
        CHECK(preds.confidences[i] < 1.0);
        for (int d = 0; d < 3; ++d) CHECK(std::isfinite(preds.translations[i][d]));
    }
}

TEST_CASE("select_pose argmax semantics") {
    posenet::PredictionSet preds;
    preds.rotations = {geometry::Quat{1, 0, 0, 0}, geometry::Quat{1, 0, 0, 0},
                       geometry::Quat{1, 0, 0, 0}};
    preds.translations = {Vec3{0, 0, 0}, Vec3{1, 1, 1}, Vec3{2, 2, 2}};
    preds.confidences = {0.1, 0.9, 0.3};
    CHECK(posenet::select_pose(preds).second == 1);

    preds.confidences = {0.4, 0.4, 0.4};
    CHECK(posenet::select_pose(preds).second == 0);  // tie -> lowest index

    // a monotone remap of confidences keeps the argmax
    preds.confidences = {0.1, 0.9, 0.3};
    for (double& c : preds.confidences) c = c * 0.5 + 0.2;
    CHECK(posenet::select_pose(preds).second == 1);

    posenet::PredictionSet empty;
    CHECK_THROWS_AS(posenet::select_pose(empty), InputError);
}

TEST_CASE("end-to-end gradient check through features, heads and the dense loss") {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        Graph g;
        Rng rng(seed * 31);
        posenet::NetConfig cfg;
        cfg.appearance_dim = 3;
        cfg.geometry_widths = {4, 6};
        cfg.appearance_widths = {4, 6};
        cfg.head_widths = {5};
        cfg.pam.reduction_ratio = 2;
        cfg.pam.insertion_points = {"geo1", "app1"};
        posenet::PoseNet net(g, cfg, rng);

        losses::ObjectModel model;
        model.id = "m";
        for (int i = 0; i < 6; ++i)
            model.cloud.points.push_back(
                Vec3{rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2)});
        model.diameter = losses::max_pairwise_distance(model.cloud.points);
        const geometry::Pose gt = oracles::random_pose(rng, 0.1);

        PointCloud cloud = random_cloud(rng, 4);
        const auto nodes = net.predict_dense(g, net.extract_features(g, cloud), cloud);
        Tensor loss = losses::dense_pose_loss(g, nodes.rotations, nodes.translations,
                                              nodes.confidences, model, gt,
                                              losses::LossConfig{});
        const auto params = g.parameters();
        const double err = oracles::max_fd_rel_err(g, loss, params);
        INFO("seed " << seed << " rel err " << err);
        CHECK(err <= 1e-4);
    }
}

TEST_CASE("classifier scores sum to one and ignore point order") {
    Graph g;
    Rng rng(7);
    posenet::ClassifierConfig cfg;
    cfg.widths = {8, 12, 16};
    cfg.head_widths = {10};
    cfg.pam.reduction_ratio = 2;
    posenet::ShapeClassifier cls(g, cfg, rng);

    PointCloud cloud = random_cloud(rng, 10, 0);
    const auto probs = cls.classify(g, cloud);
    REQUIRE(probs.size() == 3);
    double acc = 0.0;
    for (double p : probs) acc += p;
    CHECK(std::abs(acc - 1.0) <= 1e-12);

    std::vector<int> perm{9, 3, 5, 0, 7, 1, 8, 2, 6, 4};
    const auto probs2 = cls.classify(g, permute_cloud(cloud, perm));
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(probs[i] == doctest::Approx(probs2[i]).epsilon(1e-12));
}

TEST_CASE("refiner starts as an exact identity and wires both clouds") {
    Graph g;
    Rng rng(8);
    posenet::RefinerNet refiner(g, tiny_config(), rng);
    PointCloud a = random_cloud(rng, 6);
    PointCloud b = random_cloud(rng, 6);
    const geometry::Pose res = refiner.predict(g, a, b);
    CHECK(res.q[0] == 1.0);
    CHECK(res.q[1] == 0.0);
    CHECK(res.q[2] == 0.0);
    CHECK(res.q[3] == 0.0);
    for (int d = 0; d < 3; ++d) CHECK(res.t[d] == 0.0);
}

TEST_CASE("checkpoint round trip is value-exact and validates on load") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "pampose_ckpt_test.bin").string();

    Graph g;
    Rng rng(9);
    posenet::PoseNet net(g, tiny_config(), rng);
    std::map<std::string, std::string> cfg{{"seed", "9"}};
    checkpoint::save(path, g, cfg);

    const checkpoint::Checkpoint loaded = checkpoint::read(path);
    CHECK(loaded.config.at("seed") == "9");
    CHECK(loaded.entries.size() == g.parameters().size());

    // restore into an identically-shaped net with different values
    Graph g2;
    Rng rng2(10);
    posenet::PoseNet net2(g2, tiny_config(), rng2);
    checkpoint::restore(g2, loaded);
    for (Tensor t : g.parameters()) {
        Tensor t2 = find_param(g2, g.name(t));
        const auto a = g.values(t);
        const auto b = g2.values(t2);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    }

    // a structurally different net rejects the checkpoint
    Graph g3;
    Rng rng3(11);
    posenet::NetConfig other = tiny_config();
    other.head_widths = {6};
    posenet::PoseNet net3(g3, other, rng3);
    CHECK_THROWS_AS(checkpoint::restore(g3, loaded), VersionError);

    std::remove(path.c_str());
}

TEST_CASE("checkpoint with a bad magic is rejected") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "pampose_bad_ckpt.bin").string();
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOTMAGIC.............";
    }
    CHECK_THROWS_AS(checkpoint::read(path), VersionError);
    std::remove(path.c_str());
}
