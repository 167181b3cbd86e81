#include "pampose/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pampose::losses {

double max_pairwise_distance(const std::vector<Vec3>& points) {
    double best = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        for (std::size_t j = i + 1; j < points.size(); ++j) {
            const double dx = points[i][0] - points[j][0];
            const double dy = points[i][1] - points[j][1];
            const double dz = points[i][2] - points[j][2];
            best = std::max(best, dx * dx + dy * dy + dz * dz);
        }
    }
    return std::sqrt(best);
}

void validate_model(const ObjectModel& model) {
    if (model.cloud.points.size() < 4) {
        throw ContractError("object model '" + model.id + "': needs M >= 4 points, got " +
                            std::to_string(model.cloud.points.size()));
    }
    const double d = max_pairwise_distance(model.cloud.points);
    if (std::abs(d - model.diameter) > 1e-9) {
        throw ContractError("object model '" + model.id + "': stored diameter " +
                            std::to_string(model.diameter) + " != max pairwise " +
                            std::to_string(d));
    }
}

namespace {

double dist(const Vec3& a, const Vec3& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

}  // namespace

double add_loss(const ObjectModel& model, const Pose& gt, const Pose& pred) {
    if (model.cloud.points.empty()) {
        throw InputError("add_loss: empty model");
    }
    double acc = 0.0;
    for (const Vec3& x : model.cloud.points) {
        acc += dist(geometry::apply_pose(gt, x), geometry::apply_pose(pred, x));
    }
    return acc / static_cast<double>(model.cloud.points.size());
}

double adds_loss(const ObjectModel& model, const Pose& gt, const Pose& pred) {
    if (model.cloud.points.empty()) {
        throw InputError("adds_loss: empty model");
    }
    std::vector<Vec3> pred_pts;
    pred_pts.reserve(model.cloud.points.size());
    for (const Vec3& x : model.cloud.points) pred_pts.push_back(geometry::apply_pose(pred, x));
    double acc = 0.0;
    for (const Vec3& x : model.cloud.points) {
        const Vec3 g = geometry::apply_pose(gt, x);
        double best = std::numeric_limits<double>::infinity();
        for (const Vec3& y : pred_pts) best = std::min(best, dist(g, y));
        acc += best;
    }
    return acc / static_cast<double>(model.cloud.points.size());
}

double pose_point_distance(const ObjectModel& model, const Pose& gt, const Pose& pred) {
    return model.symmetric ? adds_loss(model, gt, pred) : add_loss(model, gt, pred);
}

double confidence_weighted_loss(std::span<const double> per_point_losses,
                                std::span<const double> confidences, const LossConfig& config) {
    if (config.w <= 0.0) {
        throw ContractError("confidence_weighted_loss: w must be > 0");
    }
    if (per_point_losses.empty() || per_point_losses.size() != confidences.size()) {
        throw ContractError("confidence_weighted_loss: need equal, non-empty loss/confidence lists");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < per_point_losses.size(); ++i) {
        const double c = confidences[i];
        if (c <= 0.0) {
            throw ContractError("confidence_weighted_loss: confidence " + std::to_string(c) +
                                " is not positive");
        }
        acc += per_point_losses[i] * c - config.w * std::log(std::max(c, 1e-8));
    }
    return acc / static_cast<double>(per_point_losses.size());
}

namespace {

// model points (optionally subsampled) and the same points moved by gt
std::pair<std::vector<double>, std::vector<double>> flatten_pairs(const ObjectModel& model,
                                                                  const Pose& gt,
                                                                  int loss_points) {
    std::size_t m = model.cloud.points.size();
    if (loss_points > 0) m = std::min(m, static_cast<std::size_t>(loss_points));
    if (m == 0) {
        throw InputError("pose loss: empty model");
    }
    std::vector<double> mp, tp;
    mp.reserve(3 * m);
    tp.reserve(3 * m);
    for (std::size_t j = 0; j < m; ++j) {
        const Vec3& x = model.cloud.points[j];
        const Vec3 g = geometry::apply_pose(gt, x);
        mp.insert(mp.end(), {x[0], x[1], x[2]});
        tp.insert(tp.end(), {g[0], g[1], g[2]});
    }
    return {std::move(mp), std::move(tp)};
}

}  // namespace

ag::Tensor distances(ag::Graph& g, ag::Tensor quats, ag::Tensor trans, const ObjectModel& model,
                     const Pose& gt, bool symmetric, int loss_points) {
    auto [mp, tp] = flatten_pairs(model, gt, loss_points);
    return symmetric ? g.pose_adds_distances(quats, trans, std::move(mp), std::move(tp))
                     : g.pose_add_distances(quats, trans, std::move(mp), std::move(tp));
}

ag::Tensor dense_pose_loss(ag::Graph& g, ag::Tensor quats, ag::Tensor trans, ag::Tensor confs,
                           const ObjectModel& model, const Pose& gt, const LossConfig& config,
                           int loss_points) {
    if (config.w <= 0.0) {
        throw ContractError("dense_pose_loss: w must be > 0");
    }
    ag::Tensor d = distances(g, quats, trans, model, gt, model.symmetric, loss_points);
    ag::Tensor weighted = g.mul(d, confs);
    ag::Tensor reg = g.scale(g.log_clamped(confs), -config.w);
    return g.mean(g.add(weighted, reg));
}

ag::Tensor pose_loss(ag::Graph& g, ag::Tensor quat_col, ag::Tensor trans_col,
                     const std::vector<Vec3>& model_pts, const std::vector<Vec3>& target_pts,
                     bool symmetric) {
    if (model_pts.empty() || target_pts.empty()) {
        throw InputError("pose_loss: empty point lists");
    }
    std::vector<double> mp, tp;
    mp.reserve(3 * model_pts.size());
    tp.reserve(3 * target_pts.size());
    for (const Vec3& x : model_pts) mp.insert(mp.end(), {x[0], x[1], x[2]});
    for (const Vec3& x : target_pts) tp.insert(tp.end(), {x[0], x[1], x[2]});
    ag::Tensor d = symmetric ? g.pose_adds_distances(quat_col, trans_col, std::move(mp), std::move(tp))
                             : g.pose_add_distances(quat_col, trans_col, std::move(mp), std::move(tp));
    return g.mean(d);
}

}  // namespace pampose::losses
