#include "pampose/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pampose::geometry {

namespace {

double quat_norm(const Quat& q) {
    return std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
}

Quat normalize_canonical(const Quat& q) {
    const double n = quat_norm(q);
    if (n < 1e-12) {
        throw DegenerateError("degenerate rotation: quaternion norm " + std::to_string(n));
    }
    Quat out{q[0] / n, q[1] / n, q[2] / n, q[3] / n};
    // skip the division when already unit to the last bit; keeps round trips exact
    const double n2 = q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3];
    if (std::abs(n2 - 1.0) < 4e-16) out = q;
    if (out[0] < 0.0) {
        for (double& v : out) v = -v;
    }
    return out;
}

// Largest-eigenvalue eigenvector of a symmetric 4x4 matrix via cyclic Jacobi.
std::array<double, 4> dominant_eigenvector_sym4(std::array<std::array<double, 4>, 4> a) {
    std::array<std::array<double, 4>, 4> v{};
    for (int i = 0; i < 4; ++i) v[i][i] = 1.0;
    for (int sweep = 0; sweep < 50; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < 4; ++p)
            for (int q = p + 1; q < 4; ++q) off += a[p][q] * a[p][q];
        if (off < 1e-30) break;
        for (int p = 0; p < 4; ++p) {
            for (int q = p + 1; q < 4; ++q) {
                if (std::abs(a[p][q]) < 1e-300) continue;
                const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < 4; ++k) {
                    const double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (int k = 0; k < 4; ++k) {
                    const double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for (int k = 0; k < 4; ++k) {
                    const double vkp = v[k][p], vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    int best = 0;
    for (int i = 1; i < 4; ++i)
        if (a[i][i] > a[best][best]) best = i;
    return {v[0][best], v[1][best], v[2][best], v[3][best]};
}

}  // namespace

Pose make_pose(const Quat& q, const Vec3& t) {
    Pose p;
    p.q = normalize_canonical(q);
    p.t = t;
    return p;
}

Pose identity_pose() { return Pose{}; }

Mat3 quat_to_rotmat(const Quat& q_in) {
    const double n = quat_norm(q_in);
    if (n < 1e-12) {
        throw DegenerateError("degenerate rotation: quaternion norm " + std::to_string(n));
    }
    const double w = q_in[0] / n, x = q_in[1] / n, y = q_in[2] / n, z = q_in[3] / n;
    return Mat3{1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
                2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
                2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)};
}

Quat quat_multiply(const Quat& a, const Quat& b) {
    return Quat{a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
                a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
                a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
                a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}

Vec3 apply_pose(const Pose& p, const Vec3& x) {
    const Mat3 r = quat_to_rotmat(p.q);
    return Vec3{r[0] * x[0] + r[1] * x[1] + r[2] * x[2] + p.t[0],
                r[3] * x[0] + r[4] * x[1] + r[5] * x[2] + p.t[1],
                r[6] * x[0] + r[7] * x[1] + r[8] * x[2] + p.t[2]};
}

Pose compose_poses(const Pose& outer, const Pose& inner) {
    Pose out;
    out.q = normalize_canonical(quat_multiply(outer.q, inner.q));
    const Mat3 r = quat_to_rotmat(outer.q);
    out.t = Vec3{r[0] * inner.t[0] + r[1] * inner.t[1] + r[2] * inner.t[2] + outer.t[0],
                 r[3] * inner.t[0] + r[4] * inner.t[1] + r[5] * inner.t[2] + outer.t[1],
                 r[6] * inner.t[0] + r[7] * inner.t[1] + r[8] * inner.t[2] + outer.t[2]};
    return out;
}

Pose inverse_pose(const Pose& p) {
    const Quat qc{p.q[0], -p.q[1], -p.q[2], -p.q[3]};
    const Mat3 r = quat_to_rotmat(qc);
    Pose out;
    out.q = normalize_canonical(qc);
    out.t = Vec3{-(r[0] * p.t[0] + r[1] * p.t[1] + r[2] * p.t[2]),
                 -(r[3] * p.t[0] + r[4] * p.t[1] + r[5] * p.t[2]),
                 -(r[6] * p.t[0] + r[7] * p.t[1] + r[8] * p.t[2])};
    return out;
}

double rotation_angle_between(const Pose& a, const Pose& b) {
    // relative quaternion r = a * conj(b); atan2 stays accurate near zero
    const Quat r = quat_multiply(a.q, Quat{b.q[0], -b.q[1], -b.q[2], -b.q[3]});
    const double vec = std::sqrt(r[1] * r[1] + r[2] * r[2] + r[3] * r[3]);
    return 2.0 * std::atan2(vec, std::abs(r[0]));
}

double translation_distance(const Pose& a, const Pose& b) {
    const double dx = a.t[0] - b.t[0], dy = a.t[1] - b.t[1], dz = a.t[2] - b.t[2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

PointCloud transform_points(const Pose& pose, const PointCloud& cloud) {
    PointCloud out;
    out.feature_dim = cloud.feature_dim;
    out.features = cloud.features;
    out.points.reserve(cloud.points.size());
    const Mat3 r = quat_to_rotmat(pose.q);
    for (const Vec3& x : cloud.points) {
        out.points.push_back(Vec3{r[0] * x[0] + r[1] * x[1] + r[2] * x[2] + pose.t[0],
                                  r[3] * x[0] + r[4] * x[1] + r[5] * x[2] + pose.t[1],
                                  r[6] * x[0] + r[7] * x[1] + r[8] * x[2] + pose.t[2]});
    }
    return out;
}

Pose best_rigid_transform(const std::vector<Vec3>& source, const std::vector<Vec3>& target) {
    if (source.empty() || source.size() != target.size()) {
        throw InputError("best_rigid_transform: need equal, non-empty point sets");
    }
    const double n = static_cast<double>(source.size());
    Vec3 cs{0, 0, 0}, ct{0, 0, 0};
    for (std::size_t i = 0; i < source.size(); ++i) {
        for (int d = 0; d < 3; ++d) {
            cs[d] += source[i][d];
            ct[d] += target[i][d];
        }
    }
    for (int d = 0; d < 3; ++d) {
        cs[d] /= n;
        ct[d] /= n;
    }

    double extent = 0.0;
    for (const Vec3& p : source) {
        for (int d = 0; d < 3; ++d) extent = std::max(extent, std::abs(p[d] - cs[d]));
    }
    if (extent < 1e-12) {
        throw DegenerateError("best_rigid_transform: source points are rank-deficient");
    }

    // cross-covariance H = sum (s - cs)(t - ct)^T
    double h[9] = {0, 0, 0, 0, 0, 0, 0, 0, 0};
    for (std::size_t i = 0; i < source.size(); ++i) {
        const double sx = source[i][0] - cs[0], sy = source[i][1] - cs[1],
                     sz = source[i][2] - cs[2];
        const double tx = target[i][0] - ct[0], ty = target[i][1] - ct[1],
                     tz = target[i][2] - ct[2];
        h[0] += sx * tx; h[1] += sx * ty; h[2] += sx * tz;
        h[3] += sy * tx; h[4] += sy * ty; h[5] += sy * tz;
        h[6] += sz * tx; h[7] += sz * ty; h[8] += sz * tz;
    }

    // symmetric 4x4 whose dominant eigenvector is the optimal quaternion
    const double tr = h[0] + h[4] + h[8];
    std::array<std::array<double, 4>, 4> m{};
    m[0][0] = tr;
    m[0][1] = h[5] - h[7];
    m[0][2] = h[6] - h[2];
    m[0][3] = h[1] - h[3];
    m[1][1] = h[0] - h[4] - h[8];
    m[1][2] = h[1] + h[3];
    m[1][3] = h[2] + h[6];
    m[2][2] = -h[0] + h[4] - h[8];
    m[2][3] = h[5] + h[7];
    m[3][3] = -h[0] - h[4] + h[8];
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < i; ++j) m[i][j] = m[j][i];

    const std::array<double, 4> ev = dominant_eigenvector_sym4(m);
    const Quat q = normalize_canonical(Quat{ev[0], ev[1], ev[2], ev[3]});
    const Mat3 r = quat_to_rotmat(q);
    const Vec3 t{ct[0] - (r[0] * cs[0] + r[1] * cs[1] + r[2] * cs[2]),
                 ct[1] - (r[3] * cs[0] + r[4] * cs[1] + r[5] * cs[2]),
                 ct[2] - (r[6] * cs[0] + r[7] * cs[1] + r[8] * cs[2])};
    Pose p;
    p.q = q;
    p.t = t;
    return p;
}

namespace {

double mean_nn_residual(const std::vector<Vec3>& moved, const std::vector<Vec3>& target,
                        std::vector<int>& match) {
    match.resize(moved.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < moved.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        int bk = 0;
        for (std::size_t k = 0; k < target.size(); ++k) {
            const double dx = moved[i][0] - target[k][0];
            const double dy = moved[i][1] - target[k][1];
            const double dz = moved[i][2] - target[k][2];
            const double d2 = dx * dx + dy * dy + dz * dz;
            if (d2 < best) {
                best = d2;
                bk = static_cast<int>(k);
            }
        }
        match[i] = bk;
        acc += std::sqrt(best);
    }
    return acc / static_cast<double>(moved.size());
}

std::vector<Vec3> apply_to_all(const Pose& p, const std::vector<Vec3>& pts) {
    std::vector<Vec3> out;
    out.reserve(pts.size());
    const Mat3 r = quat_to_rotmat(p.q);
    for (const Vec3& x : pts) {
        out.push_back(Vec3{r[0] * x[0] + r[1] * x[1] + r[2] * x[2] + p.t[0],
                           r[3] * x[0] + r[4] * x[1] + r[5] * x[2] + p.t[1],
                           r[6] * x[0] + r[7] * x[1] + r[8] * x[2] + p.t[2]});
    }
    return out;
}

}  // namespace

IcpResult icp_align(const PointCloud& source, const PointCloud& target, const Pose& init,
                    int max_iters, double tol) {
    if (source.points.empty() || target.points.empty()) {
        throw InputError("icp_align: clouds must be non-empty");
    }
    if (max_iters < 1) {
        throw ContractError("icp_align: max_iters must be >= 1");
    }
    {
        double extent = 0.0;
        const Vec3& p0 = source.points.front();
        for (const Vec3& p : source.points)
            for (int d = 0; d < 3; ++d) extent = std::max(extent, std::abs(p[d] - p0[d]));
        if (extent < 1e-12) {
            throw DegenerateError("icp_align: source points are rank-deficient");
        }
    }

    IcpResult res;
    res.pose = init;
    std::vector<int> match;
    std::vector<Vec3> moved = apply_to_all(res.pose, source.points);
    res.residual = mean_nn_residual(moved, target.points, match);

    for (int it = 0; it < max_iters; ++it) {
        std::vector<Vec3> matched(moved.size());
        for (std::size_t i = 0; i < moved.size(); ++i)
            matched[i] = target.points[static_cast<std::size_t>(match[i])];
        const Pose delta = best_rigid_transform(moved, matched);
        const Pose candidate = compose_poses(delta, res.pose);
        std::vector<Vec3> cand_moved = apply_to_all(candidate, source.points);
        std::vector<int> cand_match;
        const double cand_res = mean_nn_residual(cand_moved, target.points, cand_match);
        if (cand_res > res.residual) break;  // never accept a worse pose
        const double improvement = res.residual - cand_res;
        res.pose = candidate;
        res.residual = cand_res;
        res.iterations = it + 1;
        moved = std::move(cand_moved);
        match = std::move(cand_match);
        if (improvement < tol) break;
    }
    return res;
}

}  // namespace pampose::geometry
