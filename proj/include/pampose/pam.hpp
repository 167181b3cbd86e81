#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pampose/autograd.hpp"
#include "pampose/rng.hpp"

namespace pampose::pam {

// Point attention block: a channel path (pool -> bottleneck MLP, one logit
// per channel) and a geometric path (pointwise conv stack, one logit per
// point) are broadcast together, summed, squashed once with a sigmoid and
// applied residually: F' = F + F * A(F).
struct PamConfig {
    int channels = 0;          // C of the feature map the block sits on
    int reduction_ratio = 16;  // bottleneck C -> C/r
    int gap_conv_count = 3;    // reduce + (count-2) mid + output projection
    bool enable_cap = true;
    bool enable_gap = true;
    std::vector<std::string> insertion_points = {"geo1", "app1"};
};

// Throws ValidationError unless r >= 1, C % r == 0, gap_conv_count >= 2.
void validate(const PamConfig& config);

struct PamParams {
    // channel path: C -> C/r -> C
    ag::Tensor cap_w1, cap_b1, cap_w2, cap_b2;
    // geometric path: C -> C/r, (gap_conv_count-2) x (C/r -> C/r), C/r -> 1
    std::vector<std::pair<ag::Tensor, ag::Tensor>> gap_layers;
    bool has_cap = false;
    bool has_gap = false;
};

// Allocates parameters for the enabled paths in the graph, uniform
// (-sqrt(1/fan_in), +sqrt(1/fan_in)) init. `prefix` namespaces checkpoint keys.
PamParams init_params(ag::Graph& g, const PamConfig& config, Rng& rng,
                      const std::string& prefix);

// Pre-sigmoid channel logits A_C(F): pool -> dense -> relu -> dense, [C].
ag::Tensor cap_forward(ag::Graph& g, ag::Tensor feature_map, const PamParams& params);

// Pre-sigmoid per-point logits A_G(F): conv stack with relu between layers, [1 x N].
ag::Tensor gap_forward(ag::Graph& g, ag::Tensor feature_map, const PamParams& params);

// A[c, n] = sigmoid(cap[c] + gap[0, n]); cap is [C], gap is [1 x N].
ag::Tensor combine_paths(ag::Graph& g, ag::Tensor cap_logits, ag::Tensor gap_logits);

// F'[c, n] = F[c, n] * (1 + A[c, n]); shapes must match.
ag::Tensor apply_attention(ag::Graph& g, ag::Tensor feature_map, ag::Tensor attention);

// Full block honoring the enable flags. With both paths disabled the input
// is returned untouched (no parameters, bit-exact baseline). With one path
// disabled its logits are an all-zero constant, which is what a missing
// summand contributes.
ag::Tensor pam_apply(ag::Graph& g, ag::Tensor feature_map, const PamConfig& config,
                     const PamParams& params);

// Exact weight+bias count across the enabled paths.
std::int64_t pam_param_count(const PamConfig& config);
std::int64_t cap_param_count(int channels, int reduction_ratio);
std::int64_t gap_param_count(int channels, int reduction_ratio, int gap_conv_count);

}  // namespace pampose::pam
