#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "pampose/losses.hpp"
#include "pampose/rng.hpp"

namespace pampose::data {

using geometry::PointCloud;
using geometry::Pose;
using geometry::Vec3;
using losses::ObjectModel;

enum class ShapeKind { Sphere, Box, Cylinder };

ShapeKind shape_from_string(const std::string& name);
std::string shape_to_string(ShapeKind kind);

// Surface samplers. Every model carries a 3-channel procedural appearance
// feature (a smooth seeded colormap over the model frame) so networks can
// read model-frame position cues off the points. Diameters are the exact
// max pairwise distance of the sampled points.
ObjectModel gen_sphere(int points, std::uint64_t seed, double radius = 0.5);
// corners are always included, so the diameter is the exact box diagonal
ObjectModel gen_box(int points, std::uint64_t seed,
                    const Vec3& extents = Vec3{0.1, 0.2, 0.3});
ObjectModel gen_cylinder(int points, std::uint64_t seed, double radius = 0.08,
                         double height = 0.25);
ObjectModel gen_object(ShapeKind kind, int points, std::uint64_t seed);

struct PoseRange {
    double translation = 0.1;  // uniform in [-translation, +translation]^3
};

Pose random_pose(const PoseRange& range, Rng& rng);

struct SceneSample {
    std::string object_id;
    PointCloud observed;  // camera frame
    Pose gt;
    double occlusion = 0.0;
    double noise_sigma = 0.0;
};

// Draws a pose, cuts away `occlusion` of the points on one side of a random
// plane, optionally subsamples to n_points, transforms into the camera frame
// and adds isotropic Gaussian noise. Appearance features ride along
// untouched. Throws DegenerateError when fewer than 8 points survive.
SceneSample gen_scene(const ObjectModel& model, const PoseRange& range, double occlusion,
                      double noise_sigma, std::uint64_t seed, int n_points = 0);

// ASCII PLY subset: double-precision x y z and optionally red green blue,
// full 17-significant-digit text so round trips are value-exact.
void write_cloud(const std::string& path, const PointCloud& cloud);
PointCloud read_cloud(const std::string& path);

// 7 whitespace-separated numbers: qw qx qy qz tx ty tz
void write_pose(const std::string& path, const Pose& pose);
Pose read_pose(const std::string& path);

}  // namespace pampose::data
