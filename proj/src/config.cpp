#include "pampose/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace pampose::config {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream is(s);
    while (std::getline(is, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::string join_list(const std::vector<std::string>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += v[i];
    }
    return out;
}

std::string join_ints(const std::vector<int>& v) {
    std::vector<std::string> s;
    for (int x : v) s.push_back(std::to_string(x));
    return join_list(s);
}

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

int parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const int x = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return x;
    } catch (...) {
        throw ValidationError("config: key '" + key + "': expected integer, got '" + v + "'");
    }
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const unsigned long long x = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return x;
    } catch (...) {
        throw ValidationError("config: key '" + key + "': expected unsigned integer, got '" + v +
                              "'");
    }
}

double parse_float(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return x;
    } catch (...) {
        throw ValidationError("config: key '" + key + "': expected number, got '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ValidationError("config: key '" + key + "': expected true/false, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    for (const std::string& item : split_list(v)) out.push_back(parse_int(key, item));
    return out;
}

}  // namespace

const std::vector<KeySpec>& schema() {
    static const std::vector<KeySpec> kSchema = {
        {"seed", "uint", "42", "master seed for init, data streams and eval"},
        {"epochs", "int", "30", "training epochs for the pose network"},
        {"scenes_per_epoch", "int", "200", "scenes generated per epoch"},
        {"eval_scenes", "int", "100", "held-out scenes for the final report"},
        {"learning_rate", "float", "0.001", "adaptive-moment step size"},
        {"objects", "string-list", "sphere,box,cylinder", "object shapes in the task"},
        {"model_points", "int", "500", "surface points sampled per object model"},
        {"scene_points", "int", "96", "observed points per scene before occlusion"},
        {"occlusion", "float", "0.2", "fraction of points removed behind a random plane"},
        {"noise_sigma", "float", "0.001", "isotropic observation noise, meters"},
        {"translation_range", "float", "0.1", "uniform translation range, meters"},
        {"loss.w", "float", "0.015", "confidence regularization weight"},
        {"loss.model_points", "int", "64", "model points entering the training objective"},
        {"refine.iters", "int", "2", "refinement iterations K at evaluation"},
        {"refiner.enabled", "bool", "true", "train and evaluate the pose refiner"},
        {"refiner.epochs", "int", "4", "refiner epochs after the main network"},
        {"net.appearance_dim", "int", "3", "per-point appearance feature width"},
        {"net.geometry_widths", "int-list", "64,128", "geometry branch layer widths"},
        {"net.appearance_widths", "int-list", "64,128", "appearance branch layer widths"},
        {"net.head_widths", "int-list", "128,64", "hidden widths of the prediction heads"},
        {"pam.reduction_ratio", "int", "16", "attention bottleneck C -> C/r"},
        {"pam.gap_convs", "int", "3", "convolutions in the geometric attention path"},
        {"pam.insertion_points", "string-list", "geo1,app1", "layers that receive attention"},
        {"pam.enable_cap", "bool", "true", "enable the channel attention path"},
        {"pam.enable_gap", "bool", "true", "enable the geometric attention path"},
        {"classify.epochs", "int", "40", "classification training epochs"},
        {"classify.train_samples", "int", "300", "classification training clouds"},
        {"classify.eval_samples", "int", "120", "classification held-out clouds"},
        {"classify.points", "int", "64", "points per classification cloud"},
        {"classify.learning_rate", "float", "0.001", "classifier step size"},
        {"classify.noise_sigma", "float", "0.002", "classification cloud noise, meters"},
    };
    return kSchema;
}

std::map<std::string, std::string> parse_text(const std::string& text,
                                              const std::string& origin) {
    std::map<std::string, std::string> kv;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ValidationError(origin + ":" + std::to_string(lineno) +
                                  ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ValidationError(origin + ":" + std::to_string(lineno) + ": empty key");
        }
        kv[key] = value;
    }
    return kv;
}

std::map<std::string, std::string> parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) {
        throw ValidationError("config: cannot open '" + path + "'");
    }
    std::stringstream buf;
    buf << is.rdbuf();
    return parse_text(buf.str(), path);
}

RunConfig from_kv(const std::map<std::string, std::string>& kv) {
    // reject unknown keys first
    for (const auto& [key, value] : kv) {
        const bool known = std::any_of(schema().begin(), schema().end(),
                                       [&](const KeySpec& s) { return s.key == key; });
        if (!known) {
            throw ValidationError("config: unknown key '" + key + "'");
        }
    }
    RunConfig c;
    auto get = [&](const char* key) -> const std::string* {
        auto it = kv.find(key);
        return it == kv.end() ? nullptr : &it->second;
    };
    if (auto v = get("seed")) c.seed = parse_uint("seed", *v);
    if (auto v = get("epochs")) c.epochs = parse_int("epochs", *v);
    if (auto v = get("scenes_per_epoch")) c.scenes_per_epoch = parse_int("scenes_per_epoch", *v);
    if (auto v = get("eval_scenes")) c.eval_scenes = parse_int("eval_scenes", *v);
    if (auto v = get("learning_rate")) c.learning_rate = parse_float("learning_rate", *v);
    if (auto v = get("objects")) c.objects = split_list(*v);
    if (auto v = get("model_points")) c.model_points = parse_int("model_points", *v);
    if (auto v = get("scene_points")) c.scene_points = parse_int("scene_points", *v);
    if (auto v = get("occlusion")) c.occlusion = parse_float("occlusion", *v);
    if (auto v = get("noise_sigma")) c.noise_sigma = parse_float("noise_sigma", *v);
    if (auto v = get("translation_range"))
        c.translation_range = parse_float("translation_range", *v);
    if (auto v = get("loss.w")) c.loss_w = parse_float("loss.w", *v);
    if (auto v = get("loss.model_points"))
        c.loss_model_points = parse_int("loss.model_points", *v);
    if (auto v = get("refine.iters")) c.refine_iters = parse_int("refine.iters", *v);
    if (auto v = get("refiner.enabled")) c.refiner_enabled = parse_bool("refiner.enabled", *v);
    if (auto v = get("refiner.epochs")) c.refiner_epochs = parse_int("refiner.epochs", *v);
    if (auto v = get("net.appearance_dim"))
        c.net.appearance_dim = parse_int("net.appearance_dim", *v);
    if (auto v = get("net.geometry_widths"))
        c.net.geometry_widths = parse_int_list("net.geometry_widths", *v);
    if (auto v = get("net.appearance_widths"))
        c.net.appearance_widths = parse_int_list("net.appearance_widths", *v);
    if (auto v = get("net.head_widths")) c.net.head_widths = parse_int_list("net.head_widths", *v);
    if (auto v = get("pam.reduction_ratio"))
        c.net.pam.reduction_ratio = parse_int("pam.reduction_ratio", *v);
    if (auto v = get("pam.gap_convs")) c.net.pam.gap_conv_count = parse_int("pam.gap_convs", *v);
    if (auto v = get("pam.insertion_points")) c.net.pam.insertion_points = split_list(*v);
    if (auto v = get("pam.enable_cap")) c.net.pam.enable_cap = parse_bool("pam.enable_cap", *v);
    if (auto v = get("pam.enable_gap")) c.net.pam.enable_gap = parse_bool("pam.enable_gap", *v);
    if (auto v = get("classify.epochs")) c.classify.epochs = parse_int("classify.epochs", *v);
    if (auto v = get("classify.train_samples"))
        c.classify.train_samples = parse_int("classify.train_samples", *v);
    if (auto v = get("classify.eval_samples"))
        c.classify.eval_samples = parse_int("classify.eval_samples", *v);
    if (auto v = get("classify.points")) c.classify.points = parse_int("classify.points", *v);
    if (auto v = get("classify.learning_rate"))
        c.classify.learning_rate = parse_float("classify.learning_rate", *v);
    if (auto v = get("classify.noise_sigma"))
        c.classify.noise_sigma = parse_float("classify.noise_sigma", *v);

    if (c.epochs < 1) throw ValidationError("config: epochs must be >= 1");
    if (c.scenes_per_epoch < 1) throw ValidationError("config: scenes_per_epoch must be >= 1");
    if (c.eval_scenes < 1) throw ValidationError("config: eval_scenes must be >= 1");
    if (c.refine_iters < 0) throw ValidationError("config: refine.iters must be >= 0");
    if (c.loss_w <= 0.0) throw ValidationError("config: loss.w must be > 0");
    if (c.objects.empty()) throw ValidationError("config: objects must be non-empty");
    if (c.model_points < 8) throw ValidationError("config: model_points must be >= 8");
    if (c.occlusion < 0.0 || c.occlusion > 0.9)
        throw ValidationError("config: occlusion must be in [0, 0.9]");
    posenet::validate(c.net);
    return c;
}

std::map<std::string, std::string> to_kv(const RunConfig& c) {
    std::map<std::string, std::string> kv;
    kv["seed"] = std::to_string(c.seed);
    kv["epochs"] = std::to_string(c.epochs);
    kv["scenes_per_epoch"] = std::to_string(c.scenes_per_epoch);
    kv["eval_scenes"] = std::to_string(c.eval_scenes);
    kv["learning_rate"] = fmt_double(c.learning_rate);
    kv["objects"] = join_list(c.objects);
    kv["model_points"] = std::to_string(c.model_points);
    kv["scene_points"] = std::to_string(c.scene_points);
    kv["occlusion"] = fmt_double(c.occlusion);
    kv["noise_sigma"] = fmt_double(c.noise_sigma);
    kv["translation_range"] = fmt_double(c.translation_range);
    kv["loss.w"] = fmt_double(c.loss_w);
    kv["loss.model_points"] = std::to_string(c.loss_model_points);
    kv["refine.iters"] = std::to_string(c.refine_iters);
    kv["refiner.enabled"] = c.refiner_enabled ? "true" : "false";
    kv["refiner.epochs"] = std::to_string(c.refiner_epochs);
    kv["net.appearance_dim"] = std::to_string(c.net.appearance_dim);
    kv["net.geometry_widths"] = join_ints(c.net.geometry_widths);
    kv["net.appearance_widths"] = join_ints(c.net.appearance_widths);
    kv["net.head_widths"] = join_ints(c.net.head_widths);
    kv["pam.reduction_ratio"] = std::to_string(c.net.pam.reduction_ratio);
    kv["pam.gap_convs"] = std::to_string(c.net.pam.gap_conv_count);
    kv["pam.insertion_points"] = join_list(c.net.pam.insertion_points);
    kv["pam.enable_cap"] = c.net.pam.enable_cap ? "true" : "false";
    kv["pam.enable_gap"] = c.net.pam.enable_gap ? "true" : "false";
    kv["classify.epochs"] = std::to_string(c.classify.epochs);
    kv["classify.train_samples"] = std::to_string(c.classify.train_samples);
    kv["classify.eval_samples"] = std::to_string(c.classify.eval_samples);
    kv["classify.points"] = std::to_string(c.classify.points);
    kv["classify.learning_rate"] = fmt_double(c.classify.learning_rate);
    kv["classify.noise_sigma"] = fmt_double(c.classify.noise_sigma);
    return kv;
}

std::string render_kv(const std::map<std::string, std::string>& kv) {
    std::string out;
    for (const auto& [k, v] : kv) {
        out += k;
        out += " = ";
        out += v;
        out += "\n";
    }
    return out;
}

std::string config_hash(const RunConfig& config) {
    const auto kv = to_kv(config);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&](const std::string& s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& [k, v] : kv) {
        feed(k);
        feed("=");
        feed(v);
        feed("\n");
    }
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace pampose::config
