#include "pampose/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace pampose::data {

namespace {

// Smooth seeded colormap over the model frame; values stay inside (0, 1).
struct Colormap {
    std::array<double, 3> freq;
    std::array<double, 3> phase;

    explicit Colormap(std::uint64_t seed, double scale) {
        Rng rng(Rng::mix(seed, 0xC0102A9ULL));
        for (int c = 0; c < 3; ++c) {
            freq[c] = rng.uniform(4.0, 9.0) / std::max(scale, 1e-6);
            phase[c] = rng.uniform(0.0, 2.0 * M_PI);
        }
    }

    std::array<double, 3> operator()(const Vec3& p) const {
        std::array<double, 3> rgb;
        for (int c = 0; c < 3; ++c) {
            rgb[c] = 0.5 + 0.45 * std::sin(freq[c] * (p[0] + 0.7 * p[1] + 0.4 * p[2] + 0.13 * c) +
                                           phase[c]);
        }
        return rgb;
    }
};

ObjectModel finish_model(std::string id, std::vector<Vec3> points, bool symmetric,
                         std::uint64_t seed, double scale) {
    ObjectModel model;
    model.id = std::move(id);
    model.symmetric = symmetric;
    model.cloud.points = std::move(points);
    model.cloud.feature_dim = 3;
    const Colormap cm(seed, scale);
    model.cloud.features.reserve(model.cloud.points.size() * 3);
    for (const Vec3& p : model.cloud.points) {
        const auto rgb = cm(p);
        model.cloud.features.insert(model.cloud.features.end(), rgb.begin(), rgb.end());
    }
    model.diameter = losses::max_pairwise_distance(model.cloud.points);
    losses::validate_model(model);
    return model;
}

}  // namespace

ShapeKind shape_from_string(const std::string& name) {
    if (name == "sphere") return ShapeKind::Sphere;
    if (name == "box") return ShapeKind::Box;
    if (name == "cylinder") return ShapeKind::Cylinder;
    throw ValidationError("unknown shape '" + name + "' (expected sphere, box or cylinder)");
}

std::string shape_to_string(ShapeKind kind) {
    switch (kind) {
        case ShapeKind::Sphere: return "sphere";
        case ShapeKind::Box: return "box";
        case ShapeKind::Cylinder: return "cylinder";
    }
    return "?";
}

ObjectModel gen_sphere(int points, std::uint64_t seed, double radius) {
    if (points < 4) {
        throw ContractError("gen_sphere: need at least 4 points");
    }
    Rng rng(Rng::mix(seed, 0x5B43E1ULL));
    std::vector<Vec3> pts;
    pts.reserve(static_cast<std::size_t>(points));
    for (int i = 0; i < points; ++i) {
        Vec3 p{rng.normal(), rng.normal(), rng.normal()};
        double n = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
        while (n < 1e-9) {
            p = {rng.normal(), rng.normal(), rng.normal()};
            n = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
        }
        pts.push_back(Vec3{radius * p[0] / n, radius * p[1] / n, radius * p[2] / n});
    }
    return finish_model("sphere", std::move(pts), /*symmetric=*/true, seed, 2.0 * radius);
}

ObjectModel gen_box(int points, std::uint64_t seed, const Vec3& extents) {
    if (points < 8) {
        throw ContractError("gen_box: need at least 8 points (corners included)");
    }
    Rng rng(Rng::mix(seed, 0xB0C5EDULL));
    const double hx = extents[0] / 2.0, hy = extents[1] / 2.0, hz = extents[2] / 2.0;
    std::vector<Vec3> pts;
    pts.reserve(static_cast<std::size_t>(points));
    for (int sx : {-1, 1})
        for (int sy : {-1, 1})
            for (int sz : {-1, 1}) pts.push_back(Vec3{sx * hx, sy * hy, sz * hz});
    // remaining points uniform over faces, area-weighted
    const double ax = extents[1] * extents[2];
    const double ay = extents[0] * extents[2];
    const double az = extents[0] * extents[1];
    const double total = 2.0 * (ax + ay + az);
    while (pts.size() < static_cast<std::size_t>(points)) {
        const double u = rng.uniform(0.0, total);
        const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
        Vec3 p;
        if (u < 2.0 * ax) {
            p = {side * hx, rng.uniform(-hy, hy), rng.uniform(-hz, hz)};
        } else if (u < 2.0 * (ax + ay)) {
            p = {rng.uniform(-hx, hx), side * hy, rng.uniform(-hz, hz)};
        } else {
            p = {rng.uniform(-hx, hx), rng.uniform(-hy, hy), side * hz};
        }
        pts.push_back(p);
    }
    const double diag = std::sqrt(extents[0] * extents[0] + extents[1] * extents[1] +
                                  extents[2] * extents[2]);
    return finish_model("box", std::move(pts), /*symmetric=*/false, seed, diag);
}

ObjectModel gen_cylinder(int points, std::uint64_t seed, double radius, double height) {
    if (points < 4) {
        throw ContractError("gen_cylinder: need at least 4 points");
    }
    Rng rng(Rng::mix(seed, 0xC1111DULL));
    const double side_area = 2.0 * M_PI * radius * height;
    const double cap_area = M_PI * radius * radius;
    const double total = side_area + 2.0 * cap_area;
    std::vector<Vec3> pts;
    pts.reserve(static_cast<std::size_t>(points));
    for (int i = 0; i < points; ++i) {
        const double u = rng.uniform(0.0, total);
        const double theta = rng.uniform(0.0, 2.0 * M_PI);
        if (u < side_area) {
            pts.push_back(Vec3{radius * std::cos(theta), radius * std::sin(theta),
                               rng.uniform(-height / 2.0, height / 2.0)});
        } else {
            const double r = radius * std::sqrt(rng.uniform());
            const double z = (u < side_area + cap_area) ? height / 2.0 : -height / 2.0;
            pts.push_back(Vec3{r * std::cos(theta), r * std::sin(theta), z});
        }
    }
    const double diam = std::max(2.0 * radius,
                                 std::sqrt(4.0 * radius * radius + height * height));
    return finish_model("cylinder", std::move(pts), /*symmetric=*/true, seed, diam);
}

ObjectModel gen_object(ShapeKind kind, int points, std::uint64_t seed) {
    switch (kind) {
        case ShapeKind::Sphere: return gen_sphere(points, seed);
        case ShapeKind::Box: return gen_box(points, seed);
        case ShapeKind::Cylinder: return gen_cylinder(points, seed);
    }
    throw ContractError("gen_object: bad shape kind");
}

Pose random_pose(const PoseRange& range, Rng& rng) {
    const auto q = rng.unit_quaternion();
    const Vec3 t{rng.uniform(-range.translation, range.translation),
                 rng.uniform(-range.translation, range.translation),
                 rng.uniform(-range.translation, range.translation)};
    return geometry::make_pose(geometry::Quat{q[0], q[1], q[2], q[3]}, t);
}

SceneSample gen_scene(const ObjectModel& model, const PoseRange& range, double occlusion,
                      double noise_sigma, std::uint64_t seed, int n_points) {
    if (occlusion < 0.0 || occlusion > 0.9) {
        throw ContractError("gen_scene: occlusion must be in [0, 0.9], got " +
                            std::to_string(occlusion));
    }
    if (noise_sigma < 0.0) {
        throw ContractError("gen_scene: noise_sigma must be >= 0");
    }
    Rng rng(Rng::mix(seed, 0x5CE11EULL));
    SceneSample scene;
    scene.object_id = model.id;
    scene.occlusion = occlusion;
    scene.noise_sigma = noise_sigma;
    scene.gt = random_pose(range, rng);

    const std::size_t m = model.cloud.points.size();
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);

    // occlusion: drop the floor(f*m) points deepest on one side of a random plane
    const std::size_t drop = static_cast<std::size_t>(std::floor(occlusion * static_cast<double>(m)));
    if (drop > 0) {
        Vec3 dir{rng.normal(), rng.normal(), rng.normal()};
        const double dn = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
        for (double& d : dir) d /= std::max(dn, 1e-12);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            const Vec3& pa = model.cloud.points[a];
            const Vec3& pb = model.cloud.points[b];
            return pa[0] * dir[0] + pa[1] * dir[1] + pa[2] * dir[2] <
                   pb[0] * dir[0] + pb[1] * dir[1] + pb[2] * dir[2];
        });
        order.resize(m - drop);
    }
    if (order.size() < 8) {
        throw DegenerateError("gen_scene: occlusion left only " + std::to_string(order.size()) +
                              " points");
    }

    // optional subsample (seeded partial Fisher-Yates)
    if (n_points > 0 && static_cast<std::size_t>(n_points) < order.size()) {
        for (std::size_t i = 0; i < static_cast<std::size_t>(n_points); ++i) {
            const std::size_t j = i + rng.uniform_index(order.size() - i);
            std::swap(order[i], order[j]);
        }
        order.resize(static_cast<std::size_t>(n_points));
    }

    scene.observed.feature_dim = model.cloud.feature_dim;
    scene.observed.points.reserve(order.size());
    for (std::size_t idx : order) {
        Vec3 p = geometry::apply_pose(scene.gt, model.cloud.points[idx]);
        if (noise_sigma > 0.0) {
            p[0] += noise_sigma * rng.normal();
            p[1] += noise_sigma * rng.normal();
            p[2] += noise_sigma * rng.normal();
        }
        scene.observed.points.push_back(p);
        if (model.cloud.feature_dim > 0) {
            const auto* f = model.cloud.features.data() + idx * model.cloud.feature_dim;
            scene.observed.features.insert(scene.observed.features.end(), f,
                                           f + model.cloud.feature_dim);
        }
    }
    return scene;
}

// --- file IO -----------------------------------------------------------------

namespace {

void fmt_double(std::ostream& os, double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    os << buf;
}

[[noreturn]] void parse_fail(const std::string& path, int line, const std::string& what) {
    throw IoError(path + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

void write_cloud(const std::string& path, const PointCloud& cloud) {
    if (cloud.feature_dim != 0 && cloud.feature_dim != 3) {
        throw IoError("write_cloud: PLY subset stores 0 or 3 feature channels, got " +
                      std::to_string(cloud.feature_dim));
    }
    std::ofstream os(path);
    if (!os) {
        throw IoError("write_cloud: cannot open '" + path + "'");
    }
    os << "ply\nformat ascii 1.0\nelement vertex " << cloud.points.size() << "\n";
    os << "property double x\nproperty double y\nproperty double z\n";
    if (cloud.feature_dim == 3) {
        os << "property double red\nproperty double green\nproperty double blue\n";
    }
    os << "end_header\n";
    for (std::size_t i = 0; i < cloud.points.size(); ++i) {
        fmt_double(os, cloud.points[i][0]);
        os << ' ';
        fmt_double(os, cloud.points[i][1]);
        os << ' ';
        fmt_double(os, cloud.points[i][2]);
        if (cloud.feature_dim == 3) {
            for (int c = 0; c < 3; ++c) {
                os << ' ';
                fmt_double(os, cloud.features[i * 3 + c]);
            }
        }
        os << '\n';
    }
    if (!os) {
        throw IoError("write_cloud: write failed for '" + path + "'");
    }
}

PointCloud read_cloud(const std::string& path) {
    std::ifstream is(path);
    if (!is) {
        throw IoError("read_cloud: cannot open '" + path + "'");
    }
    std::string line;
    int lineno = 0;
    auto next_line = [&]() -> bool {
        if (!std::getline(is, line)) return false;
        ++lineno;
        return true;
    };
    if (!next_line() || line != "ply") parse_fail(path, lineno, "expected 'ply' magic");
    if (!next_line() || line != "format ascii 1.0")
        parse_fail(path, lineno, "expected 'format ascii 1.0'");

    std::size_t vertex_count = 0;
    std::vector<std::string> properties;
    while (next_line()) {
        if (line == "end_header") break;
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "element") {
            std::string what;
            ls >> what >> vertex_count;
            if (what != "vertex") parse_fail(path, lineno, "only vertex elements supported");
        } else if (tok == "property") {
            std::string type, name;
            ls >> type >> name;
            if (type != "double") parse_fail(path, lineno, "only double properties supported");
            properties.push_back(name);
        } else if (tok == "comment") {
            continue;
        } else {
            parse_fail(path, lineno, "unexpected header line '" + line + "'");
        }
    }
    const std::vector<std::string> xyz{"x", "y", "z"};
    const std::vector<std::string> xyzrgb{"x", "y", "z", "red", "green", "blue"};
    int feature_dim = 0;
    if (properties == xyz) {
        feature_dim = 0;
    } else if (properties == xyzrgb) {
        feature_dim = 3;
    } else {
        parse_fail(path, lineno, "expected x y z [red green blue] double properties");
    }

    PointCloud cloud;
    cloud.feature_dim = feature_dim;
    cloud.points.reserve(vertex_count);
    for (std::size_t i = 0; i < vertex_count; ++i) {
        if (!next_line()) parse_fail(path, lineno + 1, "unexpected end of file");
        std::istringstream ls(line);
        Vec3 p;
        if (!(ls >> p[0] >> p[1] >> p[2])) parse_fail(path, lineno, "malformed vertex row");
        cloud.points.push_back(p);
        if (feature_dim == 3) {
            double r, g, b;
            if (!(ls >> r >> g >> b)) parse_fail(path, lineno, "malformed color columns");
            cloud.features.insert(cloud.features.end(), {r, g, b});
        }
        std::string extra;
        if (ls >> extra) parse_fail(path, lineno, "trailing tokens on vertex row");
    }
    return cloud;
}

void write_pose(const std::string& path, const Pose& pose) {
    std::ofstream os(path);
    if (!os) {
        throw IoError("write_pose: cannot open '" + path + "'");
    }
    fmt_double(os, pose.q[0]);
    for (int i = 1; i < 4; ++i) {
        os << ' ';
        fmt_double(os, pose.q[i]);
    }
    for (int i = 0; i < 3; ++i) {
        os << ' ';
        fmt_double(os, pose.t[i]);
    }
    os << '\n';
    if (!os) {
        throw IoError("write_pose: write failed for '" + path + "'");
    }
}

Pose read_pose(const std::string& path) {
    std::ifstream is(path);
    if (!is) {
        throw IoError("read_pose: cannot open '" + path + "'");
    }
    geometry::Quat q;
    Vec3 t;
    if (!(is >> q[0] >> q[1] >> q[2] >> q[3] >> t[0] >> t[1] >> t[2])) {
        throw IoError(path + ":1: expected 7 numbers 'qw qx qy qz tx ty tz'");
    }
    return geometry::make_pose(q, t);
}

}  // namespace pampose::data
