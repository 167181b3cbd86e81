#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pampose/losses.hpp"

namespace pampose::metrics {

using losses::ObjectModel;
using geometry::Pose;

// ADD for asymmetric objects, ADD-S for symmetric ones; same math as the
// loss module, evaluated on plain values.
double pose_error(const ObjectModel& model, const Pose& gt, const Pose& pred);

struct AucCurve {
    double auc = 0.0;
    // (threshold, accuracy on [threshold, next)) breakpoints, starting at 0
    std::vector<std::pair<double, double>> steps;
};

// Area under accuracy-vs-threshold over [0, max_threshold], normalized to
// [0, 1] and integrated exactly from the sorted piecewise-constant form.
// acc(tau) = |{e_i < tau}| / n; errors >= max_threshold add no area.
AucCurve auc_curve(std::span<const double> errors, double max_threshold = 0.10);

// |{e_i < threshold}| / n (strict inequality)
double accuracy_at_threshold(std::span<const double> errors, double threshold = 0.02);

struct ObjectMetrics {
    std::string id;
    double add_auc = 0.0;
    double adds_auc = 0.0;
    double acc_at_2cm = 0.0;
    double mean_error = 0.0;        // symmetric-aware pose_error, meters
    double mean_error_ratio = 0.0;  // mean_error / object diameter
    double diameter = 0.0;
    int scenes = 0;
};

struct SectionMetrics {
    std::vector<ObjectMetrics> per_object;
    ObjectMetrics aggregate;  // id = "MEAN", diameter-weighted per scene
};

struct MetricReport {
    std::uint64_t seed = 0;
    std::string config_hash;
    std::map<std::string, std::int64_t> parameter_counts;
    SectionMetrics unrefined;
    std::optional<SectionMetrics> refined;
};

// Raw per-scene errors grouped per object, folded into SectionMetrics.
struct ObjectErrorSet {
    std::string id;
    double diameter = 0.0;
    std::vector<double> add_errors;
    std::vector<double> adds_errors;
    std::vector<double> pose_errors;  // symmetric-aware
};

SectionMetrics summarize(const std::vector<ObjectErrorSet>& per_object);

std::string report_to_json(const MetricReport& report);
// Table-style CSV: one row per object plus a MEAN row; unrefined columns
// first, refined columns when present.
std::string report_to_csv(const MetricReport& report);

// Throws VersionError / ValidationError when the document does not conform
// to the report schema (missing keys, bad types, out-of-range values).
void validate_report_json(const std::string& json_text);

}  // namespace pampose::metrics
