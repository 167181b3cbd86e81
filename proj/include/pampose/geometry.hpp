#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pampose/errors.hpp"

namespace pampose::geometry {

using Vec3 = std::array<double, 3>;
using Quat = std::array<double, 4>;  // (w, x, y, z)
using Mat3 = std::array<double, 9>;  // row-major

// Rigid transform: rotation as a unit quaternion (canonical w >= 0) plus a
// translation in meters.
struct Pose {
    Quat q{1.0, 0.0, 0.0, 0.0};
    Vec3 t{0.0, 0.0, 0.0};
};

// Builds a pose from a possibly unnormalized quaternion; renormalizes and
// flips to the w >= 0 representative. Throws DegenerateError for |q| < 1e-12.
Pose make_pose(const Quat& q, const Vec3& t);

Pose identity_pose();

// Unit-quaternion -> rotation matrix. Renormalizes internally; requires
// |q| within 1e-6 of 1 and throws DegenerateError below 1e-12.
Mat3 quat_to_rotmat(const Quat& q);

Quat quat_multiply(const Quat& a, const Quat& b);

Vec3 apply_pose(const Pose& p, const Vec3& x);

// result applies inner first, then outer: R = Ro*Ri, t = Ro*ti + to
Pose compose_poses(const Pose& outer, const Pose& inner);

Pose inverse_pose(const Pose& p);

// Geodesic rotation distance in radians and translation distance in meters.
double rotation_angle_between(const Pose& a, const Pose& b);
double translation_distance(const Pose& a, const Pose& b);

// Point cloud in meters with optional per-point appearance features
// (row-major, feature_dim values per point).
struct PointCloud {
    std::vector<Vec3> points;
    int feature_dim = 0;
    std::vector<double> features;

    std::size_t size() const { return points.size(); }
    bool has_features() const { return feature_dim > 0; }
};

PointCloud transform_points(const Pose& pose, const PointCloud& cloud);

// Best rigid transform mapping source[i] -> target[i] (index-aligned),
// closed form via the unit-quaternion formulation of the absolute
// orientation problem. Throws DegenerateError when the source points are
// rank-deficient (all identical).
Pose best_rigid_transform(const std::vector<Vec3>& source, const std::vector<Vec3>& target);

struct IcpResult {
    Pose pose;
    double residual = 0.0;  // mean nearest-neighbor distance at the accepted pose
    int iterations = 0;
};

// Point-to-point ICP with exhaustive nearest-neighbor correspondence and
// monotone acceptance: an update that increases the mean residual is
// rejected and iteration stops.
IcpResult icp_align(const PointCloud& source, const PointCloud& target, const Pose& init,
                    int max_iters = 50, double tol = 1e-7);

}  // namespace pampose::geometry
