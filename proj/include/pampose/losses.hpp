#pragma once

#include <span>
#include <string>
#include <vector>

#include "pampose/autograd.hpp"
#include "pampose/geometry.hpp"

namespace pampose::losses {

using geometry::PointCloud;
using geometry::Pose;
using geometry::Vec3;

// Sampled object model in its own frame. The diameter is the exact maximum
// pairwise distance of the sampled points.
struct ObjectModel {
    std::string id;
    PointCloud cloud;
    double diameter = 0.0;
    bool symmetric = false;
};

// Throws ContractError unless M >= 4 and the stored diameter matches the
// points within 1e-9.
void validate_model(const ObjectModel& model);

double max_pairwise_distance(const std::vector<Vec3>& points);

struct LossConfig {
    double w = 0.015;  // confidence regularization weight
};

// mean_j || (R x_j + t) - (R~ x_j + t~) ||
double add_loss(const ObjectModel& model, const Pose& gt, const Pose& pred);

// mean_j min_k || (R x_j + t) - (R~ x_k + t~) ||, k over all M points
double adds_loss(const ObjectModel& model, const Pose& gt, const Pose& pred);

// Symmetric-aware dispatch used by both training and evaluation.
double pose_point_distance(const ObjectModel& model, const Pose& gt, const Pose& pred);

// (1/N) sum_i (L_i c_i - w log c_i); c_i clamped to >= 1e-8 before the log.
// Throws ContractError when any c_i <= 0 or >= 1.
double confidence_weighted_loss(std::span<const double> per_point_losses,
                                std::span<const double> confidences, const LossConfig& config);

// --- graph-building versions (differentiable w.r.t. predictions) -----------

// Flattens model points and their ground-truth-transformed targets, then
// emits per-point-pose distances [1 x N] for dense predictions
// (quats [4 x N], trans [3 x N]). `loss_points` limits how many model points
// enter the objective (0 = all); selection is the deterministic prefix of the
// model ordering, which gen_object already randomizes.
ag::Tensor distances(ag::Graph& g, ag::Tensor quats, ag::Tensor trans, const ObjectModel& model,
                     const Pose& gt, bool symmetric, int loss_points = 0);

// Scalar Eq.-style objective: mean_i (L_i c_i - w log c_i) with L_i the
// ADD/ADD-S distance of pose hypothesis i.
ag::Tensor dense_pose_loss(ag::Graph& g, ag::Tensor quats, ag::Tensor trans, ag::Tensor confs,
                           const ObjectModel& model, const Pose& gt, const LossConfig& config,
                           int loss_points = 0);

// Single-pose variant (refiner training): mean distance as a scalar node.
ag::Tensor pose_loss(ag::Graph& g, ag::Tensor quat_col, ag::Tensor trans_col,
                     const std::vector<Vec3>& model_pts, const std::vector<Vec3>& target_pts,
                     bool symmetric);

}  // namespace pampose::losses
