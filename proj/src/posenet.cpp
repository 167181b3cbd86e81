#include "pampose/posenet.hpp"

#include <algorithm>
#include <cmath>

namespace pampose::posenet {

void validate(const NetConfig& config) {
    if (config.geometry_widths.empty() || config.appearance_widths.empty()) {
        throw ValidationError("net: branch width lists must be non-empty");
    }
    if (config.geometry_widths.back() != config.appearance_widths.back()) {
        throw ValidationError("net: branch output widths differ (" +
                              std::to_string(config.geometry_widths.back()) + " vs " +
                              std::to_string(config.appearance_widths.back()) +
                              "); per-point fusion needs equal widths");
    }
    if (config.appearance_dim < 1) {
        throw ValidationError("net: appearance_dim must be >= 1");
    }
}

ag::Tensor xyz_constant(ag::Graph& g, const PointCloud& cloud) {
    if (cloud.points.empty()) {
        throw InputError("network input: empty point cloud");
    }
    const int n = static_cast<int>(cloud.points.size());
    std::vector<double> vals(static_cast<std::size_t>(3) * n);
    for (int i = 0; i < n; ++i) {
        for (int d = 0; d < 3; ++d)
            vals[static_cast<std::size_t>(d) * n + i] = cloud.points[static_cast<std::size_t>(i)][d];
    }
    return g.constant({3, n}, std::move(vals));
}

ag::Tensor feature_constant(ag::Graph& g, const PointCloud& cloud, int expected_dim) {
    if (cloud.feature_dim != expected_dim || cloud.features.size() !=
                                                 cloud.points.size() *
                                                     static_cast<std::size_t>(expected_dim)) {
        throw InputError("network input: cloud carries " + std::to_string(cloud.feature_dim) +
                         "-dim appearance features, expected " + std::to_string(expected_dim));
    }
    const int n = static_cast<int>(cloud.points.size());
    std::vector<double> vals(static_cast<std::size_t>(expected_dim) * n);
    for (int i = 0; i < n; ++i) {
        for (int d = 0; d < expected_dim; ++d) {
            vals[static_cast<std::size_t>(d) * n + i] =
                cloud.features[static_cast<std::size_t>(i) * expected_dim + d];
        }
    }
    return g.constant({expected_dim, n}, std::move(vals));
}

namespace detail {

namespace {

std::vector<double> uniform_init(Rng& rng, std::size_t n, int fan_in) {
    const double bound = std::sqrt(1.0 / fan_in);
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-bound, bound);
    return v;
}

DenseLayer make_layer(ag::Graph& g, Rng& rng, int out, int in, const std::string& name) {
    return DenseLayer{
        g.parameter({out, in}, uniform_init(rng, static_cast<std::size_t>(out) * in, in),
                    name + ".w"),
        g.parameter({out}, uniform_init(rng, static_cast<std::size_t>(out), in), name + ".b")};
}

DenseLayer make_zero_layer(ag::Graph& g, int out, int in, std::vector<double> bias,
                           const std::string& name) {
    return DenseLayer{
        g.parameter({out, in}, std::vector<double>(static_cast<std::size_t>(out) * in, 0.0),
                    name + ".w"),
        g.parameter({out}, std::move(bias), name + ".b")};
}

Head make_head(ag::Graph& g, Rng& rng, int in, const std::vector<int>& widths, int out,
               const std::string& name, std::vector<double> zero_bias = {}) {
    Head h;
    int cur = in;
    for (std::size_t i = 0; i < widths.size(); ++i) {
        h.layers.push_back(make_layer(g, rng, widths[i], cur, name + ".fc" + std::to_string(i + 1)));
        cur = widths[i];
    }
    const std::string last = name + ".fc" + std::to_string(widths.size() + 1);
    if (!zero_bias.empty()) {
        h.layers.push_back(make_zero_layer(g, out, cur, std::move(zero_bias), last));
    } else {
        h.layers.push_back(make_layer(g, rng, out, cur, last));
    }
    return h;
}

ag::Tensor apply_head(ag::Graph& g, const Head& head, ag::Tensor x) {
    ag::Tensor h = x;
    for (std::size_t i = 0; i < head.layers.size(); ++i) {
        h = g.pointwise_conv(h, head.layers[i].w, head.layers[i].b);
        if (i + 1 < head.layers.size()) h = g.relu(h);
    }
    return h;
}

// "geo2" -> (branch geo, layer 2)
std::pair<int, int> parse_insertion(const std::string& name,
                                    const std::vector<int>& geo_widths,
                                    const std::vector<int>& app_widths) {
    int branch;
    std::size_t digits;
    if (name.rfind("geo", 0) == 0) {
        branch = 0;
        digits = 3;
    } else if (name.rfind("app", 0) == 0) {
        branch = 1;
        digits = 3;
    } else {
        throw ValidationError("pam.insertion_points: unknown point '" + name +
                              "' (expected geo<k> or app<k>)");
    }
    int layer = 0;
    try {
        layer = std::stoi(name.substr(digits));
    } catch (...) {
        throw ValidationError("pam.insertion_points: malformed point '" + name + "'");
    }
    const auto& widths = branch == 0 ? geo_widths : app_widths;
    if (layer < 1 || layer > static_cast<int>(widths.size())) {
        throw ValidationError("pam.insertion_points: '" + name + "' outside branch with " +
                              std::to_string(widths.size()) + " layers");
    }
    return {branch, layer};
}

}  // namespace

Encoder::Encoder(ag::Graph& g, const NetConfig& cfg, Rng& rng, const std::string& prefix)
    : config(cfg) {
    validate(config);
    int cur = 3;
    for (std::size_t i = 0; i < config.geometry_widths.size(); ++i) {
        geo_layers.push_back(make_layer(g, rng, config.geometry_widths[i], cur,
                                        prefix + ".geo.conv" + std::to_string(i + 1)));
        cur = config.geometry_widths[i];
    }
    cur = config.appearance_dim;
    for (std::size_t i = 0; i < config.appearance_widths.size(); ++i) {
        app_layers.push_back(make_layer(g, rng, config.appearance_widths[i], cur,
                                        prefix + ".app.conv" + std::to_string(i + 1)));
        cur = config.appearance_widths[i];
    }
    fused_width_ = config.geometry_widths.back() + config.appearance_widths.back();

    if (config.pam.enable_cap || config.pam.enable_gap) {
        for (const std::string& name : config.pam.insertion_points) {
            const auto [branch, layer] =
                parse_insertion(name, config.geometry_widths, config.appearance_widths);
            pam::PamConfig inst = config.pam;
            inst.channels = branch == 0 ? config.geometry_widths[static_cast<std::size_t>(layer - 1)]
                                        : config.appearance_widths[static_cast<std::size_t>(layer - 1)];
            pam_blocks.emplace_back(name, inst,
                                    pam::init_params(g, inst, rng, prefix + ".pam." + name));
        }
    }
}

namespace {

ag::Tensor run_branch(ag::Graph& g, ag::Tensor input, const std::vector<DenseLayer>& layers,
                      const char* branch_tag,
                      const std::vector<std::tuple<std::string, pam::PamConfig, pam::PamParams>>&
                          pam_blocks) {
    ag::Tensor h = input;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        h = g.relu(g.pointwise_conv(h, layers[i].w, layers[i].b));
        const std::string point = std::string(branch_tag) + std::to_string(i + 1);
        for (const auto& [name, cfg, params] : pam_blocks) {
            if (name == point) h = pam::pam_apply(g, h, cfg, params);
        }
    }
    return h;
}

}  // namespace

ag::Tensor Encoder::fused(ag::Graph& g, const PointCloud& cloud) const {
    ag::Tensor geo = run_branch(g, xyz_constant(g, cloud), geo_layers, "geo", pam_blocks);
    ag::Tensor app = run_branch(g, feature_constant(g, cloud, config.appearance_dim), app_layers,
                                "app", pam_blocks);
    return g.concat_rows(geo, app);
}

ag::Tensor Encoder::with_global(ag::Graph& g, const PointCloud& cloud) const {
    ag::Tensor per_point = fused(g, cloud);
    const int n = g.cols(per_point);
    ag::Tensor global = g.global_avg_pool(per_point);
    return g.concat_rows(per_point, g.tile_cols(global, n));
}

ag::Tensor Encoder::global_feature(ag::Graph& g, const PointCloud& cloud) const {
    return g.global_avg_pool(fused(g, cloud));
}

std::int64_t Encoder::pam_param_total() const {
    std::int64_t total = 0;
    for (const auto& [name, cfg, params] : pam_blocks) total += pam::pam_param_count(cfg);
    return total;
}

}  // namespace detail

// --- PoseNet -----------------------------------------------------------------

PoseNet::PoseNet(ag::Graph& g, const NetConfig& config, Rng& rng) : config_(config) {
    const std::size_t before = g.mark();
    const std::int64_t params_before = g.parameter_count();
    (void)before;
    encoder_ = detail::Encoder(g, config_, rng, "net");
    const int in = encoder_.fused_width() * 2;  // per-point + tiled global
    rot_head_ = detail::make_head(g, rng, in, config_.head_widths, 4, "net.head.rot");
    trans_head_ = detail::make_head(g, rng, in, config_.head_widths, 3, "net.head.trans");
    conf_head_ = detail::make_head(g, rng, in, config_.head_widths, 1, "net.head.conf");
    param_count_ = g.parameter_count() - params_before;
}

ag::Tensor PoseNet::extract_features(ag::Graph& g, const PointCloud& cloud) const {
    return encoder_.with_global(g, cloud);
}

PoseNet::DenseNodes PoseNet::predict_dense(ag::Graph& g, ag::Tensor features,
                                           const PointCloud& cloud) const {
    if (g.cols(features) != static_cast<int>(cloud.points.size())) {
        throw DimensionError("predict_dense: features " + ag::shape_str(g.shape(features)) +
                             " vs cloud with " + std::to_string(cloud.points.size()) + " points");
    }
    DenseNodes out;
    out.rotations = g.normalize_cols(detail::apply_head(g, rot_head_, features));
    // translation offsets are anchored at each point's own coordinates
    ag::Tensor offsets = detail::apply_head(g, trans_head_, features);
    out.translations = g.add(offsets, xyz_constant(g, cloud));
    out.confidences = g.sigmoid(detail::apply_head(g, conf_head_, features));
    return out;
}

PredictionSet PoseNet::prediction_values(const ag::Graph& g, const DenseNodes& nodes) const {
    PredictionSet set;
    const auto rot = g.values(nodes.rotations);
    const auto trans = g.values(nodes.translations);
    const auto conf = g.values(nodes.confidences);
    const std::size_t n = conf.size();
    set.rotations.reserve(n);
    set.translations.reserve(n);
    set.confidences.assign(conf.begin(), conf.end());
    for (std::size_t i = 0; i < n; ++i) {
        set.rotations.push_back(
            geometry::Quat{rot[0 * n + i], rot[1 * n + i], rot[2 * n + i], rot[3 * n + i]});
        set.translations.push_back(
            geometry::Vec3{trans[0 * n + i], trans[1 * n + i], trans[2 * n + i]});
    }
    return set;
}

std::pair<Pose, std::size_t> select_pose(const PredictionSet& preds) {
    if (preds.confidences.empty()) {
        throw InputError("select_pose: empty prediction set");
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < preds.confidences.size(); ++i) {
        if (preds.confidences[i] > preds.confidences[best]) best = i;
    }
    return {geometry::make_pose(preds.rotations[best], preds.translations[best]), best};
}

// --- RefinerNet ----------------------------------------------------------------

RefinerNet::RefinerNet(ag::Graph& g, const NetConfig& config, Rng& rng) {
    const std::int64_t params_before = g.parameter_count();
    encoder_ = detail::Encoder(g, config, rng, "refiner");
    const int in = encoder_.fused_width() * 2;  // moved-model global + observed global
    rot_head_ = detail::make_head(g, rng, in, config.head_widths, 4, "refiner.head.rot",
                                  std::vector<double>{1.0, 0.0, 0.0, 0.0});
    trans_head_ = detail::make_head(g, rng, in, config.head_widths, 3, "refiner.head.trans",
                                    std::vector<double>{0.0, 0.0, 0.0});
    param_count_ = g.parameter_count() - params_before;
}

RefinerNet::ResidualNodes RefinerNet::forward(ag::Graph& g, const PointCloud& moved_model,
                                              const PointCloud& observed) const {
    ag::Tensor gm = encoder_.global_feature(g, moved_model);
    ag::Tensor go = encoder_.global_feature(g, observed);
    const int w = encoder_.fused_width();
    ag::Tensor joint = g.concat_rows(g.reshape(gm, {w, 1}), g.reshape(go, {w, 1}));
    ResidualNodes out;
    out.quat = g.normalize_cols(detail::apply_head(g, rot_head_, joint));
    out.trans = detail::apply_head(g, trans_head_, joint);
    return out;
}

Pose RefinerNet::predict(ag::Graph& g, const PointCloud& moved_model,
                         const PointCloud& observed) const {
    const std::size_t scratch = g.mark();
    const ResidualNodes nodes = forward(g, moved_model, observed);
    const auto q = g.values(nodes.quat);
    const auto t = g.values(nodes.trans);
    const Pose res = geometry::make_pose(geometry::Quat{q[0], q[1], q[2], q[3]},
                                         geometry::Vec3{t[0], t[1], t[2]});
    g.truncate(scratch);
    return res;
}

// --- ShapeClassifier -----------------------------------------------------------

ShapeClassifier::ShapeClassifier(ag::Graph& g, const ClassifierConfig& config, Rng& rng)
    : config_(config) {
    if (config_.widths.empty() || config_.n_classes < 2) {
        throw ValidationError("classifier: needs conv widths and >= 2 classes");
    }
    const std::int64_t params_before = g.parameter_count();
    int cur = 3;
    for (std::size_t i = 0; i < config_.widths.size(); ++i) {
        conv_layers_.push_back(detail::make_layer(g, rng, config_.widths[i], cur,
                                                  "cls.conv" + std::to_string(i + 1)));
        cur = config_.widths[i];
    }
    pam_after_ = static_cast<int>(config_.widths.size()) / 2;  // after the middle conv
    if (config_.pam.enable_cap || config_.pam.enable_gap) {
        pam_config_ = config_.pam;
        pam_config_.channels = config_.widths[static_cast<std::size_t>(pam_after_)];
        pam_params_ = pam::init_params(g, pam_config_, rng, "cls.pam");
    }
    head_ = detail::make_head(g, rng, config_.widths.back(), config_.head_widths,
                              config_.n_classes, "cls.head");
    param_count_ = g.parameter_count() - params_before;
}

ag::Tensor ShapeClassifier::logits(ag::Graph& g, const PointCloud& cloud) const {
    ag::Tensor h = xyz_constant(g, cloud);
    for (std::size_t i = 0; i < conv_layers_.size(); ++i) {
        h = g.relu(g.pointwise_conv(h, conv_layers_[i].w, conv_layers_[i].b));
        if (static_cast<int>(i) == pam_after_ &&
            (config_.pam.enable_cap || config_.pam.enable_gap)) {
            h = pam::pam_apply(g, h, pam_config_, pam_params_);
        }
    }
    ag::Tensor global = g.reshape(g.max_pool_cols(h), {config_.widths.back(), 1});
    return detail::apply_head(g, head_, global);
}

std::vector<double> ShapeClassifier::classify(ag::Graph& g, const PointCloud& cloud) const {
    const std::size_t scratch = g.mark();
    ag::Tensor log_probs = g.log_softmax(logits(g, cloud));
    const auto lp = g.values(log_probs);
    std::vector<double> probs(lp.size());
    for (std::size_t i = 0; i < lp.size(); ++i) probs[i] = std::exp(lp[i]);
    g.truncate(scratch);
    return probs;
}

}  // namespace pampose::posenet
