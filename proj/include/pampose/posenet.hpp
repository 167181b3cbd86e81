#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pampose/autograd.hpp"
#include "pampose/geometry.hpp"
#include "pampose/pam.hpp"
#include "pampose/rng.hpp"

namespace pampose::posenet {

using geometry::PointCloud;
using geometry::Pose;

struct NetConfig {
    int appearance_dim = 3;
    std::vector<int> geometry_widths{64, 128};
    std::vector<int> appearance_widths{64, 128};
    std::vector<int> head_widths{128, 64};
    pam::PamConfig pam;  // template; channels filled per insertion point
    bool refiner = true;
};

// Branch output widths must match so per-point fusion by concatenation works.
void validate(const NetConfig& config);

// Dense per-point predictions extracted from the graph.
struct PredictionSet {
    std::vector<geometry::Quat> rotations;  // unit, one per point
    std::vector<geometry::Vec3> translations;
    std::vector<double> confidences;  // strictly in (0, 1)

    std::size_t size() const { return confidences.size(); }
};

// Pose at argmax confidence; ties break to the lowest index.
std::pair<Pose, std::size_t> select_pose(const PredictionSet& preds);

namespace detail {

struct DenseLayer {
    ag::Tensor w, b;
};

struct Head {
    std::vector<DenseLayer> layers;
};

// Shared two-branch pointwise encoder: geometry on xyz, appearance on the
// feature channels, attention blocks at the configured insertion points,
// per-point fusion by concatenation.
struct Encoder {
    Encoder() = default;
    Encoder(ag::Graph& g, const NetConfig& config, Rng& rng, const std::string& prefix);

    // fused per-point map [2W x N]
    ag::Tensor fused(ag::Graph& g, const PointCloud& cloud) const;
    // fused plus the pooled global feature tiled back onto every point
    ag::Tensor with_global(ag::Graph& g, const PointCloud& cloud) const;
    // pooled global feature only, [2W]
    ag::Tensor global_feature(ag::Graph& g, const PointCloud& cloud) const;

    int fused_width() const { return fused_width_; }
    std::int64_t pam_param_total() const;

    NetConfig config;
    std::vector<DenseLayer> geo_layers, app_layers;
    // (insertion name, per-instance config, params); ordered geo then app
    std::vector<std::tuple<std::string, pam::PamConfig, pam::PamParams>> pam_blocks;
    int fused_width_ = 0;
};

}  // namespace detail

// Dense pose-regression network: per-point features with attention, a pooled
// global feature, and rotation / translation / confidence heads.
class PoseNet {
public:
    PoseNet(ag::Graph& g, const NetConfig& config, Rng& rng);

    struct DenseNodes {
        ag::Tensor rotations;     // [4 x N], unit columns
        ag::Tensor translations;  // [3 x N], anchored at each point
        ag::Tensor confidences;   // [1 x N], sigmoid
    };

    ag::Tensor extract_features(ag::Graph& g, const PointCloud& cloud) const;
    DenseNodes predict_dense(ag::Graph& g, ag::Tensor features, const PointCloud& cloud) const;
    PredictionSet prediction_values(const ag::Graph& g, const DenseNodes& nodes) const;

    const NetConfig& config() const { return config_; }
    std::int64_t parameter_count() const { return param_count_; }
    std::int64_t pam_param_total() const { return encoder_.pam_param_total(); }

private:
    NetConfig config_;
    detail::Encoder encoder_;
    detail::Head rot_head_, trans_head_, conf_head_;
    std::int64_t param_count_ = 0;
};

// Residual-pose head over pooled features of the moved model cloud and the
// observed cloud. Final head layers start at zero so the untrained refiner
// is an exact identity.
class RefinerNet {
public:
    RefinerNet(ag::Graph& g, const NetConfig& config, Rng& rng);

    struct ResidualNodes {
        ag::Tensor quat;   // [4 x 1], unit
        ag::Tensor trans;  // [3 x 1]
    };

    ResidualNodes forward(ag::Graph& g, const PointCloud& moved_model,
                          const PointCloud& observed) const;
    // Inference wrapper; builds scratch nodes and truncates them again.
    Pose predict(ag::Graph& g, const PointCloud& moved_model, const PointCloud& observed) const;

    std::int64_t parameter_count() const { return param_count_; }

private:
    detail::Encoder encoder_;
    detail::Head rot_head_, trans_head_;
    std::int64_t param_count_ = 0;
};

struct ClassifierConfig {
    std::vector<int> widths{64, 128, 256};
    std::vector<int> head_widths{128};
    int n_classes = 3;
    pam::PamConfig pam;  // attention after the middle conv layer
};

// Pointwise stack on xyz with attention at the mid layer, global max pool,
// dense classifier head.
class ShapeClassifier {
public:
    ShapeClassifier(ag::Graph& g, const ClassifierConfig& config, Rng& rng);

    ag::Tensor logits(ag::Graph& g, const PointCloud& cloud) const;  // [n_classes x 1]
    // softmax scores (sum to 1); builds scratch nodes and truncates them
    std::vector<double> classify(ag::Graph& g, const PointCloud& cloud) const;

    const ClassifierConfig& config() const { return config_; }
    std::int64_t parameter_count() const { return param_count_; }

private:
    ClassifierConfig config_;
    std::vector<detail::DenseLayer> conv_layers_;
    pam::PamConfig pam_config_;
    pam::PamParams pam_params_;
    detail::Head head_;
    int pam_after_ = 0;
    std::int64_t param_count_ = 0;
};

// Camera-frame xyz rows as a [3 x N] constant; requires a non-empty cloud.
ag::Tensor xyz_constant(ag::Graph& g, const PointCloud& cloud);
// Appearance rows as a [d_a x N] constant; throws InputError when the cloud
// carries no features of the expected width.
ag::Tensor feature_constant(ag::Graph& g, const PointCloud& cloud, int expected_dim);

}  // namespace pampose::posenet
