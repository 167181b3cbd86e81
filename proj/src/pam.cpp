#include "pampose/pam.hpp"

#include <cmath>

namespace pampose::pam {

namespace {

std::vector<double> uniform_init(Rng& rng, std::size_t n, int fan_in) {
    const double bound = std::sqrt(1.0 / fan_in);
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-bound, bound);
    return v;
}

std::pair<ag::Tensor, ag::Tensor> dense_params(ag::Graph& g, Rng& rng, int out, int in,
                                               const std::string& name) {
    ag::Tensor w = g.parameter({out, in}, uniform_init(rng, static_cast<std::size_t>(out) * in, in),
                               name + ".w");
    ag::Tensor b = g.parameter({out}, uniform_init(rng, static_cast<std::size_t>(out), in),
                               name + ".b");
    return {w, b};
}

}  // namespace

void validate(const PamConfig& config) {
    if (config.channels < 1) {
        throw ValidationError("pam: channels must be >= 1, got " +
                              std::to_string(config.channels));
    }
    if (config.reduction_ratio < 1 || config.channels % config.reduction_ratio != 0) {
        throw ValidationError("pam: reduction_ratio must be >= 1 and divide channels (C=" +
                              std::to_string(config.channels) + ", r=" +
                              std::to_string(config.reduction_ratio) + ")");
    }
    if (config.gap_conv_count < 2) {
        throw ValidationError("pam: gap_conv_count must be >= 2, got " +
                              std::to_string(config.gap_conv_count));
    }
}

PamParams init_params(ag::Graph& g, const PamConfig& config, Rng& rng,
                      const std::string& prefix) {
    validate(config);
    const int c = config.channels;
    const int cr = c / config.reduction_ratio;
    PamParams p;
    if (config.enable_cap) {
        auto [w1, b1] = dense_params(g, rng, cr, c, prefix + ".cap.fc1");
        auto [w2, b2] = dense_params(g, rng, c, cr, prefix + ".cap.fc2");
        p.cap_w1 = w1;
        p.cap_b1 = b1;
        p.cap_w2 = w2;
        p.cap_b2 = b2;
        p.has_cap = true;
    }
    if (config.enable_gap) {
        p.gap_layers.push_back(dense_params(g, rng, cr, c, prefix + ".gap.conv1"));
        for (int i = 0; i < config.gap_conv_count - 2; ++i) {
            p.gap_layers.push_back(
                dense_params(g, rng, cr, cr, prefix + ".gap.conv" + std::to_string(i + 2)));
        }
        p.gap_layers.push_back(dense_params(
            g, rng, 1, cr, prefix + ".gap.conv" + std::to_string(config.gap_conv_count)));
        p.has_gap = true;
    }
    return p;
}

ag::Tensor cap_forward(ag::Graph& g, ag::Tensor feature_map, const PamParams& params) {
    if (!params.has_cap) {
        throw ContractError("cap_forward: channel path has no parameters");
    }
    const int c = g.rows(feature_map);
    ag::Tensor pooled = g.reshape(g.global_avg_pool(feature_map), {c, 1});
    ag::Tensor hidden = g.relu(g.pointwise_conv(pooled, params.cap_w1, params.cap_b1));
    ag::Tensor logits = g.pointwise_conv(hidden, params.cap_w2, params.cap_b2);
    return g.reshape(logits, {c});
}

ag::Tensor gap_forward(ag::Graph& g, ag::Tensor feature_map, const PamParams& params) {
    if (!params.has_gap) {
        throw ContractError("gap_forward: geometric path has no parameters");
    }
    ag::Tensor h = feature_map;
    for (std::size_t i = 0; i < params.gap_layers.size(); ++i) {
        h = g.pointwise_conv(h, params.gap_layers[i].first, params.gap_layers[i].second);
        if (i + 1 < params.gap_layers.size()) h = g.relu(h);
    }
    return h;  // [1 x N]
}

ag::Tensor combine_paths(ag::Graph& g, ag::Tensor cap_logits, ag::Tensor gap_logits) {
    const int c = g.shape(cap_logits)[0];
    // [C] -> [C x 1] against [1 x N]: broadcast to [C x N], one sigmoid after the sum
    ag::Tensor cap_col = g.reshape(cap_logits, {c, 1});
    return g.sigmoid(g.add(cap_col, gap_logits, /*broadcast=*/true));
}

ag::Tensor apply_attention(ag::Graph& g, ag::Tensor feature_map, ag::Tensor attention) {
    if (g.shape(feature_map) != g.shape(attention)) {
        throw DimensionError("apply_attention: feature map " +
                             ag::shape_str(g.shape(feature_map)) + " vs attention " +
                             ag::shape_str(g.shape(attention)));
    }
    ag::Tensor one = g.constant_scalar(1.0);
    return g.mul(feature_map, g.add(attention, one, /*broadcast=*/true));
}

ag::Tensor pam_apply(ag::Graph& g, ag::Tensor feature_map, const PamConfig& config,
                     const PamParams& params) {
    if (!config.enable_cap && !config.enable_gap) return feature_map;
    const int c = g.rows(feature_map);
    const int n = g.cols(feature_map);
    ag::Tensor cap_logits = config.enable_cap
                                ? cap_forward(g, feature_map, params)
                                : g.constant({c}, std::vector<double>(static_cast<std::size_t>(c)));
    ag::Tensor gap_logits = config.enable_gap
                                ? gap_forward(g, feature_map, params)
                                : g.constant({1, n}, std::vector<double>(static_cast<std::size_t>(n)));
    ag::Tensor attention = combine_paths(g, cap_logits, gap_logits);
    return apply_attention(g, feature_map, attention);
}

std::int64_t cap_param_count(int channels, int reduction_ratio) {
    const std::int64_t c = channels;
    const std::int64_t cr = channels / reduction_ratio;
    return (c * cr + cr) + (cr * c + c);
}

std::int64_t gap_param_count(int channels, int reduction_ratio, int gap_conv_count) {
    const std::int64_t c = channels;
    const std::int64_t cr = channels / reduction_ratio;
    std::int64_t total = c * cr + cr;                             // reduce
    total += static_cast<std::int64_t>(gap_conv_count - 2) * (cr * cr + cr);  // mid
    total += cr * 1 + 1;                                          // output projection
    return total;
}

std::int64_t pam_param_count(const PamConfig& config) {
    validate(config);
    std::int64_t total = 0;
    if (config.enable_cap) total += cap_param_count(config.channels, config.reduction_ratio);
    if (config.enable_gap)
        total += gap_param_count(config.channels, config.reduction_ratio, config.gap_conv_count);
    return total;
}

}  // namespace pampose::pam
