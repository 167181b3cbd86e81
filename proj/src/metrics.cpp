#include "pampose/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

namespace pampose::metrics {

double pose_error(const ObjectModel& model, const Pose& gt, const Pose& pred) {
    return losses::pose_point_distance(model, gt, pred);
}

AucCurve auc_curve(std::span<const double> errors, double max_threshold) {
    if (errors.empty()) {
        throw InputError("auc_curve: empty error list");
    }
    if (max_threshold <= 0.0) {
        throw ContractError("auc_curve: max_threshold must be > 0");
    }
    for (double e : errors) {
        if (e < 0.0 || !std::isfinite(e)) {
            throw ContractError("auc_curve: errors must be finite and >= 0");
        }
    }
    std::vector<double> sorted(errors.begin(), errors.end());
    std::sort(sorted.begin(), sorted.end());
    const double n = static_cast<double>(sorted.size());

    AucCurve out;
    out.steps.emplace_back(0.0, 0.0);
    double area = 0.0;
    double prev_threshold = 0.0;
    double prev_acc = 0.0;
    std::size_t i = 0;
    while (i < sorted.size() && sorted[i] < max_threshold) {
        const double u = sorted[i];
        std::size_t j = i;
        while (j < sorted.size() && sorted[j] == u) ++j;  // merge ties
        area += prev_acc * (u - prev_threshold);
        prev_threshold = u;
        prev_acc = static_cast<double>(j) / n;  // acc on (u, next]
        if (u == 0.0) {
            out.steps.back().second = prev_acc;  // acc jumps at 0 itself
        } else {
            out.steps.emplace_back(u, prev_acc);
        }
        i = j;
    }
    area += prev_acc * (max_threshold - prev_threshold);
    out.steps.emplace_back(max_threshold, prev_acc);
    out.auc = area / max_threshold;
    return out;
}

double accuracy_at_threshold(std::span<const double> errors, double threshold) {
    if (errors.empty()) {
        throw InputError("accuracy_at_threshold: empty error list");
    }
    std::size_t hits = 0;
    for (double e : errors) {
        if (e < threshold) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(errors.size());
}

namespace {

double mean_of(const std::vector<double>& v) {
    double acc = 0.0;
    for (double x : v) acc += x;
    return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

}  // namespace

SectionMetrics summarize(const std::vector<ObjectErrorSet>& per_object) {
    SectionMetrics out;
    ObjectMetrics agg;
    agg.id = "MEAN";
    double ratio_acc = 0.0;
    int total_scenes = 0;
    for (const ObjectErrorSet& obj : per_object) {
        ObjectMetrics m;
        m.id = obj.id;
        m.diameter = obj.diameter;
        m.scenes = static_cast<int>(obj.pose_errors.size());
        m.add_auc = auc_curve(obj.add_errors).auc;
        m.adds_auc = auc_curve(obj.adds_errors).auc;
        m.acc_at_2cm = accuracy_at_threshold(obj.pose_errors, 0.02);
        m.mean_error = mean_of(obj.pose_errors);
        m.mean_error_ratio = obj.diameter > 0.0 ? m.mean_error / obj.diameter : 0.0;
        out.per_object.push_back(m);

        agg.add_auc += m.add_auc * m.scenes;
        agg.adds_auc += m.adds_auc * m.scenes;
        agg.acc_at_2cm += m.acc_at_2cm * m.scenes;
        agg.mean_error += m.mean_error * m.scenes;
        ratio_acc += m.mean_error_ratio * m.scenes;
        total_scenes += m.scenes;
    }
    if (total_scenes > 0) {
        agg.add_auc /= total_scenes;
        agg.adds_auc /= total_scenes;
        agg.acc_at_2cm /= total_scenes;
        agg.mean_error /= total_scenes;
        agg.mean_error_ratio = ratio_acc / total_scenes;
    }
    agg.scenes = total_scenes;
    out.aggregate = agg;
    return out;
}

namespace {

using nlohmann::json;

json object_to_json(const ObjectMetrics& m) {
    return json{{"id", m.id},
                {"add_auc", m.add_auc},
                {"adds_auc", m.adds_auc},
                {"acc_at_2cm", m.acc_at_2cm},
                {"mean_error", m.mean_error},
                {"mean_error_ratio", m.mean_error_ratio},
                {"diameter", m.diameter},
                {"scenes", m.scenes}};
}

json section_to_json(const SectionMetrics& s) {
    json per = json::array();
    for (const ObjectMetrics& m : s.per_object) per.push_back(object_to_json(m));
    return json{{"per_object", per}, {"aggregate", object_to_json(s.aggregate)}};
}

void require_metric_object(const json& o) {
    static const char* keys[] = {"id",         "add_auc",          "adds_auc", "acc_at_2cm",
                                 "mean_error", "mean_error_ratio", "diameter", "scenes"};
    for (const char* k : keys) {
        if (!o.contains(k)) {
            throw ValidationError(std::string("report: metric object missing key '") + k + "'");
        }
    }
    for (const char* k : {"add_auc", "adds_auc", "acc_at_2cm"}) {
        const double v = o.at(k).get<double>();
        if (v < 0.0 || v > 1.0) {
            throw ValidationError(std::string("report: ") + k + " outside [0, 1]");
        }
    }
    if (o.at("mean_error").get<double>() < 0.0) {
        throw ValidationError("report: negative mean_error");
    }
}

void require_section(const json& s) {
    if (!s.contains("per_object") || !s.at("per_object").is_array() || !s.contains("aggregate")) {
        throw ValidationError("report: section needs per_object[] and aggregate");
    }
    for (const json& o : s.at("per_object")) require_metric_object(o);
    require_metric_object(s.at("aggregate"));
}

}  // namespace

std::string report_to_json(const MetricReport& report) {
    json doc;
    doc["schema"] = "pampose-report-v1";
    doc["run"] = json{{"seed", report.seed},
                      {"config_hash", report.config_hash},
                      {"parameter_counts", report.parameter_counts}};
    doc["unrefined"] = section_to_json(report.unrefined);
    if (report.refined) doc["refined"] = section_to_json(*report.refined);
    return doc.dump(2) + "\n";
}

std::string report_to_csv(const MetricReport& report) {
    std::ostringstream os;
    os.setf(std::ios::fmtflags(0), std::ios::floatfield);
    os.precision(17);
    const bool has_refined = report.refined.has_value();
    os << "object,add_auc,adds_auc,acc_at_2cm,mean_error,mean_error_ratio";
    if (has_refined) {
        os << ",refined_add_auc,refined_adds_auc,refined_acc_at_2cm,refined_mean_error,"
              "refined_mean_error_ratio";
    }
    os << "\n";
    auto row = [&](const ObjectMetrics& m, const ObjectMetrics* r) {
        os << m.id << ',' << m.add_auc << ',' << m.adds_auc << ',' << m.acc_at_2cm << ','
           << m.mean_error << ',' << m.mean_error_ratio;
        if (has_refined && r) {
            os << ',' << r->add_auc << ',' << r->adds_auc << ',' << r->acc_at_2cm << ','
               << r->mean_error << ',' << r->mean_error_ratio;
        }
        os << "\n";
    };
    for (std::size_t i = 0; i < report.unrefined.per_object.size(); ++i) {
        const ObjectMetrics* r =
            has_refined && i < report.refined->per_object.size() ? &report.refined->per_object[i]
                                                                 : nullptr;
        row(report.unrefined.per_object[i], r);
    }
    row(report.unrefined.aggregate, has_refined ? &report.refined->aggregate : nullptr);
    return os.str();
}

void validate_report_json(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const std::exception& e) {
        throw ValidationError(std::string("report: not valid JSON: ") + e.what());
    }
    if (!doc.contains("schema") || !doc.at("schema").is_string()) {
        throw ValidationError("report: missing schema tag");
    }
    if (doc.at("schema").get<std::string>() != "pampose-report-v1") {
        throw VersionError("report: unknown schema '" + doc.at("schema").get<std::string>() + "'");
    }
    if (!doc.contains("run") || !doc.at("run").contains("seed") ||
        !doc.at("run").contains("config_hash") || !doc.at("run").contains("parameter_counts")) {
        throw ValidationError("report: run block needs seed, config_hash, parameter_counts");
    }
    if (!doc.contains("unrefined")) {
        throw ValidationError("report: missing unrefined section");
    }
    require_section(doc.at("unrefined"));
    if (doc.contains("refined")) require_section(doc.at("refined"));
}

}  // namespace pampose::metrics
