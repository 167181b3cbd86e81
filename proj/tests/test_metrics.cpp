#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pampose/metrics.hpp"
#include "support/oracles.hpp"

using namespace pampose;
using geometry::Pose;
using geometry::Quat;
using geometry::Vec3;
using losses::ObjectModel;

namespace {

ObjectModel random_model(Rng& rng, int m, bool symmetric) {
    ObjectModel model;
    model.id = symmetric ? "sym" : "asym";
    model.symmetric = symmetric;
    for (int i = 0; i < m; ++i)
        model.cloud.points.push_back(
            Vec3{rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2)});
    model.diameter = losses::max_pairwise_distance(model.cloud.points);
    return model;
}

}  // namespace

TEST_CASE("pose_error dispatches on the symmetry flag") {
    Rng rng(1);
    for (bool symmetric : {false, true}) {
        ObjectModel model = random_model(rng, 25, symmetric);
        const Pose p = oracles::random_pose(rng);
        CHECK(metrics::pose_error(model, p, p) == 0.0);
        const Pose q = oracles::random_pose(rng);
        const double expect = symmetric ? losses::adds_loss(model, p, q)
                                        : losses::add_loss(model, p, q);
        CHECK(std::abs(metrics::pose_error(model, p, q) - expect) <= 1e-12);
    }

    // symmetric square with a 90-degree in-plane rotation: zero error
    ObjectModel square;
    square.id = "square";
    square.symmetric = true;
    square.cloud.points = {Vec3{0.5, 0.5, 0}, Vec3{-0.5, 0.5, 0}, Vec3{-0.5, -0.5, 0},
                           Vec3{0.5, -0.5, 0}};
    square.diameter = losses::max_pairwise_distance(square.cloud.points);
    const double s = std::sqrt(0.5);
    const Pose gt = oracles::random_pose(rng);
    const Pose pred = geometry::compose_poses(gt, geometry::make_pose(Quat{s, 0, 0, s},
                                                                      Vec3{0, 0, 0}));
    CHECK(metrics::pose_error(square, gt, pred) <= 1e-12);
}

TEST_CASE("auc_curve trivial extremes") {
    const std::vector<double> zeros{0.0, 0.0, 0.0};
    CHECK(metrics::auc_curve(zeros).auc == doctest::Approx(1.0).epsilon(1e-15));

    const std::vector<double> far{0.10, 0.2, 5.0};
    CHECK(metrics::auc_curve(far).auc == 0.0);

    CHECK_THROWS_AS(metrics::auc_curve(std::vector<double>{}), InputError);
}

TEST_CASE("auc_curve worked two-error example") {
    const std::vector<double> errors{0.01, 0.05};
    const auto curve = metrics::auc_curve(errors);
    // acc: 0 on [0, 0.01), 0.5 on [0.01, 0.05), 1 on [0.05, 0.10]
    CHECK(curve.auc == doctest::Approx(0.7).epsilon(1e-12));
    REQUIRE(curve.steps.size() == 4);
    CHECK(curve.steps[0] == std::pair<double, double>{0.0, 0.0});
    CHECK(curve.steps[1] == std::pair<double, double>{0.01, 0.5});
    CHECK(curve.steps[2] == std::pair<double, double>{0.05, 1.0});
    CHECK(curve.steps[3].first == 0.10);
}

TEST_CASE("auc_curve matches a 10000-step Riemann oracle") {
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> errors = oracles::random_values(rng, 37, 0.0, 0.15);
        const double exact = metrics::auc_curve(errors).auc;
        const double riemann = oracles::riemann_auc(errors, 0.10, 10000);
        CHECK(std::abs(exact - riemann) <= 1e-6 * 10);  // midpoint rule is itself ~n/steps
        CHECK(std::abs(exact - oracles::riemann_auc(errors, 0.10, 200000)) <= 1e-6);
    }
}

TEST_CASE("auc monotone when an error shrinks") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> errors = oracles::random_values(rng, 15, 0.0, 0.2);
        const double before = metrics::auc_curve(errors).auc;
        const std::size_t idx = rng.uniform_index(errors.size());
        errors[idx] *= rng.uniform();
        CHECK(metrics::auc_curve(errors).auc >= before - 1e-15);
    }
}

TEST_CASE("accuracy_at_threshold strict boundary") {
    const std::vector<double> zeros{0.0, 0.0};
    CHECK(metrics::accuracy_at_threshold(zeros) == 1.0);
    const std::vector<double> mid{0.01, 0.03};
    CHECK(metrics::accuracy_at_threshold(mid) == 0.5);
    const std::vector<double> edge{0.02};
    CHECK(metrics::accuracy_at_threshold(edge) == 0.0);  // e == threshold fails
    CHECK_THROWS_AS(metrics::accuracy_at_threshold(std::vector<double>{}), InputError);
}

namespace {

metrics::MetricReport sample_report(bool with_refined) {
    metrics::ObjectErrorSet a;
    a.id = "sphere";
    a.diameter = 0.5;
    a.add_errors = {0.01, 0.02, 0.005};
    a.adds_errors = {0.005, 0.01, 0.004};
    a.pose_errors = {0.005, 0.01, 0.004};
    metrics::ObjectErrorSet b;
    b.id = "box";
    b.diameter = 0.374;
    b.add_errors = {0.03, 0.012, 0.09};
    b.adds_errors = {0.02, 0.01, 0.05};
    b.pose_errors = {0.03, 0.012, 0.09};
    metrics::MetricReport report;
    report.seed = 42;
    report.config_hash = "deadbeef00000000";
    report.parameter_counts["total"] = 1234;
    report.unrefined = metrics::summarize({a, b});
    if (with_refined) report.refined = metrics::summarize({a, b});
    return report;
}

}  // namespace

TEST_CASE("report JSON passes its own schema validation") {
    const auto report = sample_report(true);
    const std::string text = metrics::report_to_json(report);
    CHECK_NOTHROW(metrics::validate_report_json(text));

    const auto no_refined = sample_report(false);
    CHECK_NOTHROW(metrics::validate_report_json(metrics::report_to_json(no_refined)));
}

TEST_CASE("report schema validation rejects malformed documents") {
    CHECK_THROWS_AS(metrics::validate_report_json("not json at all"), ValidationError);
    CHECK_THROWS_AS(metrics::validate_report_json("{}"), ValidationError);
    CHECK_THROWS_AS(metrics::validate_report_json(R"({"schema":"pampose-report-v7"})"),
                    VersionError);
    // auc outside [0,1]
    std::string text = metrics::report_to_json(sample_report(false));
    const auto pos = text.find("\"add_auc\"");
    REQUIRE(pos != std::string::npos);
    std::string broken = text;
    broken.replace(pos, std::string("\"add_auc\"").size(), "\"add_auc_missing\"");
    CHECK_THROWS_AS(metrics::validate_report_json(broken), ValidationError);
}

TEST_CASE("csv has one row per object plus the aggregate") {
    const auto report = sample_report(true);
    const std::string csv = metrics::report_to_csv(report);
    std::size_t rows = 0;
    for (char c : csv)
        if (c == '\n') ++rows;
    CHECK(rows == 1 + 2 + 1);  // header + objects + MEAN
    CHECK(csv.find("refined_add_auc") != std::string::npos);
    CHECK(csv.find("MEAN") != std::string::npos);
}

TEST_CASE("aggregate is the scene-weighted mean") {
    const auto report = sample_report(false);
    const auto& agg = report.unrefined.aggregate;
    CHECK(agg.scenes == 6);
    const auto& per = report.unrefined.per_object;
    const double expect =
        (per[0].mean_error * 3 + per[1].mean_error * 3) / 6.0;
    CHECK(agg.mean_error == doctest::Approx(expect).epsilon(1e-12));
}
