#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pampose/posenet.hpp"

namespace pampose::config {

// Full run configuration. Every field is reachable through the flat
// `key = value` config format (see schema() and docs/formats.md).
struct RunConfig {
    std::uint64_t seed = 42;
    int epochs = 30;
    int scenes_per_epoch = 200;
    int eval_scenes = 100;
    double learning_rate = 1e-3;

    std::vector<std::string> objects{"sphere", "box", "cylinder"};
    int model_points = 500;   // points sampled per object model
    int scene_points = 96;    // observed points per scene (before occlusion)
    double occlusion = 0.2;
    double noise_sigma = 0.001;
    double translation_range = 0.1;

    double loss_w = 0.015;
    int loss_model_points = 64;  // model points entering the training objective

    int refine_iters = 2;  // K
    bool refiner_enabled = true;
    int refiner_epochs = 4;

    posenet::NetConfig net;

    // classification experiment
    struct Classify {
        int epochs = 40;
        int train_samples = 300;
        int eval_samples = 120;
        int points = 64;
        double learning_rate = 1e-3;
        double noise_sigma = 0.002;
    } classify;
};

struct KeySpec {
    std::string key;
    std::string type;  // int | uint | float | bool | string-list | int-list
    std::string default_value;
    std::string help;
};

// The explicit schema: every accepted key with type, default and one-line help.
const std::vector<KeySpec>& schema();

// Parses `key = value` lines ('#' comments, blank lines ignored).
// Unknown keys and malformed lines throw ValidationError with the line number.
std::map<std::string, std::string> parse_file(const std::string& path);
std::map<std::string, std::string> parse_text(const std::string& text, const std::string& origin);

// Defaults, overlaid with the given key-value pairs. Unknown keys, bad
// types and out-of-range values throw ValidationError.
RunConfig from_kv(const std::map<std::string, std::string>& kv);

// Canonical flat form of a config (every schema key present, normalized
// values); basis for hashing and the checkpoint config echo.
std::map<std::string, std::string> to_kv(const RunConfig& config);

// FNV-1a over the canonical "key=value\n" serialization.
std::string config_hash(const RunConfig& config);

std::string render_kv(const std::map<std::string, std::string>& kv);

}  // namespace pampose::config
