#pragma once

// Independent reference implementations used as test oracles. Everything in
// here must stay decoupled from the library's own compute paths: different
// formulas, different accumulation structure, or an external library.

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "pampose/autograd.hpp"
#include "pampose/geometry.hpp"
#include "pampose/rng.hpp"

namespace oracles {

using pampose::Rng;
namespace ag = pampose::ag;
namespace geo = pampose::geometry;

// plain triple-loop matmul-plus-bias, accumulation over k innermost
inline std::vector<double> naive_conv(std::span<const double> w, std::span<const double> x,
                                      std::span<const double> b, int cout, int cin, int n) {
    std::vector<double> y(static_cast<std::size_t>(cout) * n);
    for (int c = 0; c < cout; ++c) {
        for (int j = 0; j < n; ++j) {
            double acc = b[static_cast<std::size_t>(c)];
            for (int k = 0; k < cin; ++k) {
                acc += w[static_cast<std::size_t>(c) * cin + k] *
                       x[static_cast<std::size_t>(k) * n + j];
            }
            y[static_cast<std::size_t>(c) * n + j] = acc;
        }
    }
    return y;
}

// quaternion sandwich q p q^-1 (no rotation matrix involved)
inline geo::Vec3 rotate_by_quat(const geo::Quat& q, const geo::Vec3& p) {
    const geo::Quat pq{0.0, p[0], p[1], p[2]};
    const geo::Quat qc{q[0], -q[1], -q[2], -q[3]};
    const geo::Quat r = geo::quat_multiply(geo::quat_multiply(q, pq), qc);
    return geo::Vec3{r[1], r[2], r[3]};
}

// 4x4 homogeneous matrix utilities
using Mat4 = std::array<double, 16>;

inline Mat4 pose_to_mat4(const geo::Pose& p) {
    const geo::Mat3 r = geo::quat_to_rotmat(p.q);
    return Mat4{r[0], r[1], r[2], p.t[0], r[3], r[4], r[5], p.t[1],
                r[6], r[7], r[8], p.t[2], 0.0,  0.0,  0.0,  1.0};
}

inline Mat4 mat4_mul(const Mat4& a, const Mat4& b) {
    Mat4 c{};
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 4; ++k) acc += a[i * 4 + k] * b[k * 4 + j];
            c[i * 4 + j] = acc;
        }
    return c;
}

inline geo::Vec3 mat4_apply(const Mat4& m, const geo::Vec3& x) {
    return geo::Vec3{m[0] * x[0] + m[1] * x[1] + m[2] * x[2] + m[3],
                     m[4] * x[0] + m[5] * x[1] + m[6] * x[2] + m[7],
                     m[8] * x[0] + m[9] * x[1] + m[10] * x[2] + m[11]};
}

// random helpers
inline std::vector<double> random_values(Rng& rng, std::size_t n, double lo = -1.0,
                                         double hi = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(lo, hi);
    return v;
}

inline geo::Pose random_pose(Rng& rng, double translation = 0.3) {
    const auto q = rng.unit_quaternion();
    return geo::make_pose(geo::Quat{q[0], q[1], q[2], q[3]},
                          geo::Vec3{rng.uniform(-translation, translation),
                                    rng.uniform(-translation, translation),
                                    rng.uniform(-translation, translation)});
}

// --- finite differences -------------------------------------------------------

// Max relative error |analytic - central difference| / max(1, |analytic|)
// over every entry of every probed leaf. The graph must already hold the
// loss; probes must be leaves.
inline double max_fd_rel_err(ag::Graph& g, ag::Tensor loss, std::span<const ag::Tensor> probes,
                             double h = 1e-5) {
    g.backward(loss);
    std::vector<std::vector<double>> analytic;
    for (ag::Tensor p : probes) {
        auto grad = g.grad(p);
        analytic.emplace_back(grad.begin(), grad.end());
    }
    double worst = 0.0;
    for (std::size_t pi = 0; pi < probes.size(); ++pi) {
        auto vals = g.leaf_values(probes[pi]);
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double saved = vals[i];
            vals[i] = saved + h;
            g.recompute();
            const double up = g.value_scalar(loss);
            vals[i] = saved - h;
            g.recompute();
            const double down = g.value_scalar(loss);
            vals[i] = saved;
            const double fd = (up - down) / (2.0 * h);
            const double a = analytic[pi].empty() ? 0.0 : analytic[pi][i];
            worst = std::max(worst, ag::grad_rel_err(a, fd));
        }
    }
    g.recompute();  // restore forward values
    return worst;
}

// exact step-function integral by brute-force Riemann sum
inline double riemann_auc(std::span<const double> errors, double max_threshold, int steps) {
    double area = 0.0;
    const double dt = max_threshold / steps;
    for (int s = 0; s < steps; ++s) {
        const double tau = (s + 0.5) * dt;
        std::size_t hits = 0;
        for (double e : errors)
            if (e < tau) ++hits;
        area += dt * static_cast<double>(hits) / static_cast<double>(errors.size());
    }
    return area / max_threshold;
}

}  // namespace oracles
