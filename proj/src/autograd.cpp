#include "pampose/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <numeric>
#include <sstream>

namespace pampose::ag {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << " x ";
        os << s[i];
    }
    os << ']';
    return os.str();
}

std::int64_t numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

double grad_rel_err(double analytic, double fd) {
    return std::abs(analytic - fd) / std::max(1.0, std::abs(analytic));
}

namespace {

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Row-major 3x3 rotation from a unit quaternion (w, x, y, z).
void quat_matrix(double w, double x, double y, double z, double r[9]) {
    r[0] = 1.0 - 2.0 * (y * y + z * z);
    r[1] = 2.0 * (x * y - w * z);
    r[2] = 2.0 * (x * z + w * y);
    r[3] = 2.0 * (x * y + w * z);
    r[4] = 1.0 - 2.0 * (x * x + z * z);
    r[5] = 2.0 * (y * z - w * x);
    r[6] = 2.0 * (x * z - w * y);
    r[7] = 2.0 * (y * z + w * x);
    r[8] = 1.0 - 2.0 * (x * x + y * y);
}

// Accumulates d(R(q) p)^T u into dq for the polynomial above.
//   d/dw = 2 (v x p) . u
//   d/dv = 2 [ (v.p) u + p (v.u) - 2 v (p.u) + w (p x u) ]
void accum_quat_backward(const double q[4], const double p[3], const double u[3], double scale,
                         double dq[4]) {
    const double w = q[0];
    const double vx = q[1], vy = q[2], vz = q[3];
    const double vxp0 = vy * p[2] - vz * p[1];
    const double vxp1 = vz * p[0] - vx * p[2];
    const double vxp2 = vx * p[1] - vy * p[0];
    dq[0] += scale * 2.0 * (vxp0 * u[0] + vxp1 * u[1] + vxp2 * u[2]);

    const double vp = vx * p[0] + vy * p[1] + vz * p[2];
    const double vu = vx * u[0] + vy * u[1] + vz * u[2];
    const double pu = p[0] * u[0] + p[1] * u[1] + p[2] * u[2];
    const double pxu0 = p[1] * u[2] - p[2] * u[1];
    const double pxu1 = p[2] * u[0] - p[0] * u[2];
    const double pxu2 = p[0] * u[1] - p[1] * u[0];
    dq[1] += scale * 2.0 * (vp * u[0] + p[0] * vu - 2.0 * vx * pu + w * pxu0);
    dq[2] += scale * 2.0 * (vp * u[1] + p[1] * vu - 2.0 * vy * pu + w * pxu1);
    dq[3] += scale * 2.0 * (vp * u[2] + p[2] * vu - 2.0 * vz * pu + w * pxu2);
}

struct BroadcastPlan {
    Shape out;
    std::vector<std::int64_t> stride_a, stride_b;
    int rank = 0;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, bool broadcast) {
    if (!broadcast) {
        if (a != b) {
            throw DimensionError("elementwise: shapes differ, " + shape_str(a) + " vs " +
                                 shape_str(b) + " (broadcast disabled)");
        }
        BroadcastPlan p;
        p.out = a;
        p.rank = static_cast<int>(a.size());
        p.stride_a.assign(p.rank, 0);
        p.stride_b.assign(p.rank, 0);
        std::int64_t st = 1;
        for (int d = p.rank - 1; d >= 0; --d) {
            p.stride_a[d] = st;
            p.stride_b[d] = st;
            st *= a[d];
        }
        return p;
    }
    const int rank = static_cast<int>(std::max(a.size(), b.size()));
    // pad with trailing 1s so a [C] vector lines up with the rows of [C x N]
    Shape pa(a), pb(b);
    pa.resize(rank, 1);
    pb.resize(rank, 1);
    BroadcastPlan p;
    p.rank = rank;
    p.out.resize(rank);
    for (int d = 0; d < rank; ++d) {
        if (pa[d] != pb[d] && pa[d] != 1 && pb[d] != 1) {
            throw DimensionError("elementwise broadcast: incompatible shapes " + shape_str(a) +
                                 " vs " + shape_str(b));
        }
        p.out[d] = std::max(pa[d], pb[d]);
    }
    p.stride_a.assign(rank, 0);
    p.stride_b.assign(rank, 0);
    std::int64_t sa = 1, sb = 1;
    for (int d = rank - 1; d >= 0; --d) {
        p.stride_a[d] = (pa[d] == 1) ? 0 : sa;
        p.stride_b[d] = (pb[d] == 1) ? 0 : sb;
        sa *= pa[d];
        sb *= pb[d];
    }
    return p;
}

// walk flat output index -> (ia, ib) flat input indices
template <typename F>
void for_broadcast(const BroadcastPlan& p, F&& f) {
    const std::int64_t n = numel(p.out);
    std::array<std::int64_t, 8> idx{};
    for (std::int64_t flat = 0; flat < n; ++flat) {
        std::int64_t rem = flat;
        std::int64_t ia = 0, ib = 0;
        for (int d = p.rank - 1; d >= 0; --d) {
            idx[d] = rem % p.out[d];
            rem /= p.out[d];
            ia += idx[d] * p.stride_a[d];
            ib += idx[d] * p.stride_b[d];
        }
        f(flat, ia, ib);
    }
}

}  // namespace

const Graph::Node& Graph::node(int id) const {
    if (id < 0 || id >= static_cast<int>(nodes_.size())) {
        throw ContractError("invalid tensor handle (id " + std::to_string(id) + ")");
    }
    return nodes_[static_cast<std::size_t>(id)];
}

Graph::Node& Graph::node(int id) {
    if (id < 0 || id >= static_cast<int>(nodes_.size())) {
        throw ContractError("invalid tensor handle (id " + std::to_string(id) + ")");
    }
    return nodes_[static_cast<std::size_t>(id)];
}

namespace {
const char* kind_name(OpKind k) {
    switch (k) {
        case OpKind::Leaf: return "leaf";
        case OpKind::PointwiseConv: return "pointwise_conv";
        case OpKind::GlobalAvgPool: return "global_avg_pool";
        case OpKind::Act: return "activation";
        case OpKind::Ew: return "elementwise";
        case OpKind::ConcatRows: return "concat_rows";
        case OpKind::TileCols: return "tile_cols";
        case OpKind::MaxPoolCols: return "max_pool_cols";
        case OpKind::NormalizeCols: return "normalize_cols";
        case OpKind::Reshape: return "reshape";
        case OpKind::LogSoftmax: return "log_softmax";
        case OpKind::LogClamped: return "log_clamped";
        case OpKind::Sum: return "sum";
        case OpKind::Mean: return "mean";
        case OpKind::PoseAddDistances: return "pose_add_distances";
        case OpKind::PoseAddSDistances: return "pose_adds_distances";
    }
    return "?";
}
}  // namespace

void Graph::check_finite(const Node& n) const {
    for (double v : n.values) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string("non-finite value produced by op ") +
                               kind_name(n.kind));
        }
    }
}

Tensor Graph::push(Node n) {
    if (n.kind != OpKind::Leaf) {
        eval_into(n);
        check_finite(n);
        for (int i = 0; i < n.n_in; ++i) {
            if (node(n.in[i]).requires_grad) n.requires_grad = true;
        }
    }
    nodes_.push_back(std::move(n));
    return Tensor{static_cast<int>(nodes_.size()) - 1};
}

Tensor Graph::constant(Shape shape, std::vector<double> values) {
    if (numel(shape) != static_cast<std::int64_t>(values.size())) {
        throw DimensionError("constant: shape " + shape_str(shape) + " needs " +
                             std::to_string(numel(shape)) + " values, got " +
                             std::to_string(values.size()));
    }
    Node n;
    n.kind = OpKind::Leaf;
    n.shape = std::move(shape);
    n.values = std::move(values);
    return push(std::move(n));
}

Tensor Graph::parameter(Shape shape, std::vector<double> values, std::string name) {
    Tensor t = constant(std::move(shape), std::move(values));
    Node& n = node(t.id);
    n.requires_grad = true;
    n.is_param = true;
    n.name = std::move(name);
    return t;
}

std::span<double> Graph::leaf_values(Tensor t) {
    Node& n = node(t.id);
    if (n.kind != OpKind::Leaf) {
        throw ContractError("leaf_values: node is not a leaf");
    }
    return n.values;
}

std::vector<Tensor> Graph::parameters() const {
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].is_param) out.push_back(Tensor{static_cast<int>(i)});
    }
    return out;
}

std::int64_t Graph::parameter_count() const {
    std::int64_t n = 0;
    for (const Node& nd : nodes_) {
        if (nd.is_param) n += static_cast<std::int64_t>(nd.values.size());
    }
    return n;
}

void Graph::truncate(std::size_t mark) {
    if (mark > nodes_.size()) {
        throw ContractError("truncate: mark beyond graph size");
    }
    nodes_.resize(mark);
}

// --- op builders -----------------------------------------------------------

Tensor Graph::pointwise_conv(Tensor input, Tensor weights, Tensor bias) {
    const Node& x = node(input.id);
    const Node& w = node(weights.id);
    const Node& b = node(bias.id);
    if (x.shape.size() != 2 || w.shape.size() != 2 || b.shape.size() != 1 ||
        w.shape[1] != x.shape[0] || b.shape[0] != w.shape[0]) {
        throw DimensionError("pointwise_conv: input " + shape_str(x.shape) + ", weights " +
                             shape_str(w.shape) + ", bias " + shape_str(b.shape));
    }
    Node n;
    n.kind = OpKind::PointwiseConv;
    n.shape = {w.shape[0], x.shape[1]};
    n.in = {input.id, weights.id, bias.id};
    n.n_in = 3;
    return push(std::move(n));
}

Tensor Graph::global_avg_pool(Tensor input) {
    const Node& x = node(input.id);
    if (x.shape.size() != 2) {
        throw DimensionError("global_avg_pool: expected [C x N], got " + shape_str(x.shape));
    }
    if (x.shape[1] < 1) {
        throw InputError("global_avg_pool: empty input (N = 0)");
    }
    Node n;
    n.kind = OpKind::GlobalAvgPool;
    n.shape = {x.shape[0]};
    n.in = {input.id, -1, -1};
    n.n_in = 1;
    return push(std::move(n));
}

Tensor Graph::activation(Tensor input, Activation kind) {
    Node n;
    n.kind = OpKind::Act;
    n.act = kind;
    n.shape = node(input.id).shape;
    n.in = {input.id, -1, -1};
    n.n_in = 1;
    return push(std::move(n));
}

Tensor Graph::elementwise(Tensor a, Tensor b, Elementwise kind, bool broadcast) {
    BroadcastPlan plan = plan_broadcast(node(a.id).shape, node(b.id).shape, broadcast);
    Node n;
    n.kind = OpKind::Ew;
    n.ew = kind;
    n.broadcast = broadcast;
    n.shape = plan.out;
    n.in = {a.id, b.id, -1};
    n.n_in = 2;
    return push(std::move(n));
}

Tensor Graph::concat_rows(Tensor a, Tensor b) {
    const Node& na = node(a.id);
    const Node& nb = node(b.id);
    if (na.shape.size() != 2 || nb.shape.size() != 2 || na.shape[1] != nb.shape[1]) {
        throw DimensionError("concat_rows: " + shape_str(na.shape) + " vs " + shape_str(nb.shape));
    }
    Node n;
    n.kind = OpKind::ConcatRows;
    n.shape = {na.shape[0] + nb.shape[0], na.shape[1]};
    n.in = {a.id, b.id, -1};
    n.n_in = 2;
    return push(std::move(n));
}

Tensor Graph::tile_cols(Tensor vec, int cols) {
    const Node& v = node(vec.id);
    const bool ok = (v.shape.size() == 1) || (v.shape.size() == 2 && v.shape[1] == 1);
    if (!ok || cols < 1) {
        throw DimensionError("tile_cols: expected [C] or [C x 1], got " + shape_str(v.shape) +
                             " (cols " + std::to_string(cols) + ")");
    }
    Node n;
    n.kind = OpKind::TileCols;
    n.shape = {v.shape[0], cols};
    n.in = {vec.id, -1, -1};
    n.n_in = 1;
    return push(std::move(n));
}

Tensor Graph::max_pool_cols(Tensor input) {
    const Node& x = node(input.id);
    if (x.shape.size() != 2 || x.shape[1] < 1) {
        throw DimensionError("max_pool_cols: expected [C x N], N >= 1, got " +
                             shape_str(x.shape));
    }
    Node n;
    n.kind = OpKind::MaxPoolCols;
    n.shape = {x.shape[0]};
    n.in = {input.id, -1, -1};
    n.n_in = 1;
    return push(std::move(n));
}

Tensor Graph::normalize_cols(Tensor input) {
    const Node& x = node(input.id);
    if (x.shape.size() != 2) {
        throw DimensionError("normalize_cols: expected [K x N], got " + shape_str(x.shape));
    }
    Node n;
    n.kind = OpKind::NormalizeCols;
    n.shape = x.shape;
    n.in = {input.id, -1, -1};
    n.n_in = 1;
    return push(std::move(n));
}

Tensor Graph::reshape(Tensor input, Shape shape) {
    const Node& x = node(input.id);
    if (numel(shape) != numel(x.shape)) {
        throw DimensionError("reshape: " + shape_str(x.shape) + " -> " + shape_str(shape) +
                             " changes element count");
    }
    Node n;
    n.kind = OpKind::Reshape;
    n.shape = std::move(shape);
    n.in = {input.id, -1, -1};
    n.n_in = 1;
    return push(std::move(n));
}

Tensor Graph::log_softmax(Tensor input) {
    const Node& x = node(input.id);
    if (x.values.empty()) {
        throw InputError("log_softmax: empty input");
    }
    Node n;
    n.kind = OpKind::LogSoftmax;
    n.shape = x.shape;
    n.in = {input.id, -1, -1};
    n.n_in = 1;
    return push(std::move(n));
}

Tensor Graph::log_clamped(Tensor input, double floor) {
    if (floor <= 0.0) {
        throw ContractError("log_clamped: floor must be positive");
    }
    Node n;
    n.kind = OpKind::LogClamped;
    n.scalar_aux = floor;
    n.shape = node(input.id).shape;
    n.in = {input.id, -1, -1};
    n.n_in = 1;
    return push(std::move(n));
}

Tensor Graph::sum(Tensor input) {
    Node n;
    n.kind = OpKind::Sum;
    n.shape = {1};
    n.in = {input.id, -1, -1};
    n.n_in = 1;
    return push(std::move(n));
}

Tensor Graph::mean(Tensor input) {
    if (node(input.id).values.empty()) {
        throw InputError("mean: empty input");
    }
    Node n;
    n.kind = OpKind::Mean;
    n.shape = {1};
    n.in = {input.id, -1, -1};
    n.n_in = 1;
    return push(std::move(n));
}

namespace {
void check_pose_args(const Graph::Node& q, const Graph::Node& t, std::size_t model_sz,
                     std::size_t target_sz, bool aligned) {
    if (q.shape.size() != 2 || q.shape[0] != 4 || t.shape.size() != 2 || t.shape[0] != 3 ||
        q.shape[1] != t.shape[1]) {
        throw DimensionError("pose distances: quats " + shape_str(q.shape) + ", trans " +
                             shape_str(t.shape));
    }
    if (model_sz == 0 || model_sz % 3 != 0 || target_sz == 0 || target_sz % 3 != 0) {
        throw InputError("pose distances: model/target point lists must be non-empty xyz triples");
    }
    if (aligned && model_sz != target_sz) {
        throw DimensionError("pose add distances: model has " + std::to_string(model_sz / 3) +
                             " points, target has " + std::to_string(target_sz / 3));
    }
}
}  // namespace

Tensor Graph::pose_add_distances(Tensor quats, Tensor trans, std::vector<double> model_pts,
                                 std::vector<double> target_pts) {
    check_pose_args(node(quats.id), node(trans.id), model_pts.size(), target_pts.size(), true);
    Node n;
    n.kind = OpKind::PoseAddDistances;
    n.shape = {1, node(quats.id).shape[1]};
    n.in = {quats.id, trans.id, -1};
    n.n_in = 2;
    n.aux = std::move(model_pts);
    n.aux.insert(n.aux.end(), target_pts.begin(), target_pts.end());
    n.scalar_aux = static_cast<double>(n.aux.size() / 2);  // split point
    return push(std::move(n));
}

Tensor Graph::pose_adds_distances(Tensor quats, Tensor trans, std::vector<double> model_pts,
                                  std::vector<double> target_pts) {
    check_pose_args(node(quats.id), node(trans.id), model_pts.size(), target_pts.size(), false);
    Node n;
    n.kind = OpKind::PoseAddSDistances;
    n.shape = {1, node(quats.id).shape[1]};
    n.in = {quats.id, trans.id, -1};
    n.n_in = 2;
    n.scalar_aux = static_cast<double>(model_pts.size());  // split point
    n.aux = std::move(model_pts);
    n.aux.insert(n.aux.end(), target_pts.begin(), target_pts.end());
    return push(std::move(n));
}

// --- forward kernels ---------------------------------------------------------

void Graph::eval_into(Node& n) {
    const std::int64_t count = numel(n.shape);
    n.values.assign(static_cast<std::size_t>(count), 0.0);
    switch (n.kind) {
        case OpKind::Leaf:
            throw ContractError("eval on leaf");
        case OpKind::PointwiseConv: {
            const Node& x = node(n.in[0]);
            const Node& w = node(n.in[1]);
            const Node& b = node(n.in[2]);
            const int cin = x.shape[0], cols = x.shape[1], cout = w.shape[0];
            for (int c = 0; c < cout; ++c) {
                double* yrow = n.values.data() + static_cast<std::size_t>(c) * cols;
                const double bias = b.values[static_cast<std::size_t>(c)];
                for (int j = 0; j < cols; ++j) yrow[j] = bias;
                const double* wrow = w.values.data() + static_cast<std::size_t>(c) * cin;
                for (int k = 0; k < cin; ++k) {
                    const double wk = wrow[k];
                    const double* xrow = x.values.data() + static_cast<std::size_t>(k) * cols;
                    for (int j = 0; j < cols; ++j) yrow[j] += wk * xrow[j];
                }
            }
            break;
        }
        case OpKind::GlobalAvgPool: {
            const Node& x = node(n.in[0]);
            const int c = x.shape[0], cols = x.shape[1];
            // accumulate in sorted order so the pooled value is exactly
            // invariant under point permutations
            std::vector<double> scratch(static_cast<std::size_t>(cols));
            for (int i = 0; i < c; ++i) {
                const double* row = x.values.data() + static_cast<std::size_t>(i) * cols;
                std::copy(row, row + cols, scratch.begin());
                std::sort(scratch.begin(), scratch.end());
                double acc = 0.0;
                for (double v : scratch) acc += v;
                n.values[static_cast<std::size_t>(i)] = acc / cols;
            }
            break;
        }
        case OpKind::Act: {
            const Node& x = node(n.in[0]);
            if (n.act == Activation::Sigmoid) {
                for (std::size_t i = 0; i < x.values.size(); ++i)
                    n.values[i] = stable_sigmoid(x.values[i]);
            } else {
                for (std::size_t i = 0; i < x.values.size(); ++i)
                    n.values[i] = x.values[i] > 0.0 ? x.values[i] : 0.0;
            }
            break;
        }
        case OpKind::Ew: {
            const Node& a = node(n.in[0]);
            const Node& b = node(n.in[1]);
            BroadcastPlan plan = plan_broadcast(a.shape, b.shape, n.broadcast);
            if (n.ew == Elementwise::Add) {
                for_broadcast(plan, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
                    n.values[static_cast<std::size_t>(o)] =
                        a.values[static_cast<std::size_t>(ia)] +
                        b.values[static_cast<std::size_t>(ib)];
                });
            } else {
                for_broadcast(plan, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
                    n.values[static_cast<std::size_t>(o)] =
                        a.values[static_cast<std::size_t>(ia)] *
                        b.values[static_cast<std::size_t>(ib)];
                });
            }
            break;
        }
        case OpKind::ConcatRows: {
            const Node& a = node(n.in[0]);
            const Node& b = node(n.in[1]);
            std::copy(a.values.begin(), a.values.end(), n.values.begin());
            std::copy(b.values.begin(), b.values.end(),
                      n.values.begin() + static_cast<std::ptrdiff_t>(a.values.size()));
            break;
        }
        case OpKind::TileCols: {
            const Node& v = node(n.in[0]);
            const int c = n.shape[0], cols = n.shape[1];
            for (int i = 0; i < c; ++i) {
                const double val = v.values[static_cast<std::size_t>(i)];
                double* row = n.values.data() + static_cast<std::size_t>(i) * cols;
                for (int j = 0; j < cols; ++j) row[j] = val;
            }
            break;
        }
        case OpKind::MaxPoolCols: {
            const Node& x = node(n.in[0]);
            const int c = x.shape[0], cols = x.shape[1];
            n.iaux.assign(static_cast<std::size_t>(c), 0);
            for (int i = 0; i < c; ++i) {
                const double* row = x.values.data() + static_cast<std::size_t>(i) * cols;
                int best = 0;
                for (int j = 1; j < cols; ++j)
                    if (row[j] > row[best]) best = j;
                n.iaux[static_cast<std::size_t>(i)] = best;
                n.values[static_cast<std::size_t>(i)] = row[best];
            }
            break;
        }
        case OpKind::NormalizeCols: {
            const Node& x = node(n.in[0]);
            const int k = x.shape[0], cols = x.shape[1];
            for (int j = 0; j < cols; ++j) {
                double norm2 = 0.0;
                for (int i = 0; i < k; ++i) {
                    const double v = x.values[static_cast<std::size_t>(i) * cols + j];
                    norm2 += v * v;
                }
                const double norm = std::sqrt(norm2);
                if (norm < 1e-12) {
                    throw DegenerateError("normalize_cols: column " + std::to_string(j) +
                                          " has near-zero norm (degenerate rotation)");
                }
                for (int i = 0; i < k; ++i) {
                    const std::size_t idx = static_cast<std::size_t>(i) * cols + j;
                    n.values[idx] = x.values[idx] / norm;
                }
            }
            break;
        }
        case OpKind::Reshape: {
            const Node& x = node(n.in[0]);
            std::copy(x.values.begin(), x.values.end(), n.values.begin());
            break;
        }
        case OpKind::LogSoftmax: {
            const Node& x = node(n.in[0]);
            double m = -std::numeric_limits<double>::infinity();
            for (double v : x.values) m = std::max(m, v);
            double z = 0.0;
            for (double v : x.values) z += std::exp(v - m);
            const double logz = std::log(z);
            for (std::size_t i = 0; i < x.values.size(); ++i)
                n.values[i] = x.values[i] - m - logz;
            break;
        }
        case OpKind::LogClamped: {
            const Node& x = node(n.in[0]);
            for (std::size_t i = 0; i < x.values.size(); ++i)
                n.values[i] = std::log(std::max(x.values[i], n.scalar_aux));
            break;
        }
        case OpKind::Sum: {
            const Node& x = node(n.in[0]);
            double acc = 0.0;
            for (double v : x.values) acc += v;
            n.values[0] = acc;
            break;
        }
        case OpKind::Mean: {
            const Node& x = node(n.in[0]);
            double acc = 0.0;
            for (double v : x.values) acc += v;
            n.values[0] = acc / static_cast<double>(x.values.size());
            break;
        }
        case OpKind::PoseAddDistances: {
            const Node& q = node(n.in[0]);
            const Node& t = node(n.in[1]);
            const int cols = q.shape[1];
            const std::size_t split = static_cast<std::size_t>(n.scalar_aux);
            const double* model = n.aux.data();
            const double* target = n.aux.data() + split;
            const int m = static_cast<int>(split / 3);
            for (int i = 0; i < cols; ++i) {
                double r[9];
                quat_matrix(q.values[0 * cols + i], q.values[1 * cols + i],
                            q.values[2 * cols + i], q.values[3 * cols + i], r);
                const double tx = t.values[0 * cols + i];
                const double ty = t.values[1 * cols + i];
                const double tz = t.values[2 * cols + i];
                double acc = 0.0;
                for (int j = 0; j < m; ++j) {
                    const double* p = model + 3 * j;
                    const double* g = target + 3 * j;
                    const double dx = r[0] * p[0] + r[1] * p[1] + r[2] * p[2] + tx - g[0];
                    const double dy = r[3] * p[0] + r[4] * p[1] + r[5] * p[2] + ty - g[1];
                    const double dz = r[6] * p[0] + r[7] * p[1] + r[8] * p[2] + tz - g[2];
                    acc += std::sqrt(dx * dx + dy * dy + dz * dz);
                }
                n.values[static_cast<std::size_t>(i)] = acc / m;
            }
            break;
        }
        case OpKind::PoseAddSDistances: {
            const Node& q = node(n.in[0]);
            const Node& t = node(n.in[1]);
            const int cols = q.shape[1];
            const std::size_t split = static_cast<std::size_t>(n.scalar_aux);
            const double* model = n.aux.data();
            const double* target = n.aux.data() + split;
            const int mk = static_cast<int>(split / 3);
            const int mj = static_cast<int>((n.aux.size() - split) / 3);
            n.iaux.assign(static_cast<std::size_t>(cols) * mj, 0);
            std::vector<double> pred(static_cast<std::size_t>(mk) * 3);
            for (int i = 0; i < cols; ++i) {
                double r[9];
                quat_matrix(q.values[0 * cols + i], q.values[1 * cols + i],
                            q.values[2 * cols + i], q.values[3 * cols + i], r);
                const double tx = t.values[0 * cols + i];
                const double ty = t.values[1 * cols + i];
                const double tz = t.values[2 * cols + i];
                for (int k = 0; k < mk; ++k) {
                    const double* p = model + 3 * k;
                    pred[3 * k + 0] = r[0] * p[0] + r[1] * p[1] + r[2] * p[2] + tx;
                    pred[3 * k + 1] = r[3] * p[0] + r[4] * p[1] + r[5] * p[2] + ty;
                    pred[3 * k + 2] = r[6] * p[0] + r[7] * p[1] + r[8] * p[2] + tz;
                }
                double acc = 0.0;
                for (int j = 0; j < mj; ++j) {
                    const double* g = target + 3 * j;
                    double best = std::numeric_limits<double>::infinity();
                    int best_k = 0;
                    for (int k = 0; k < mk; ++k) {
                        const double dx = g[0] - pred[3 * k + 0];
                        const double dy = g[1] - pred[3 * k + 1];
                        const double dz = g[2] - pred[3 * k + 2];
                        const double d2 = dx * dx + dy * dy + dz * dz;
                        if (d2 < best) {
                            best = d2;
                            best_k = k;
                        }
                    }
                    n.iaux[static_cast<std::size_t>(i) * mj + j] = best_k;
                    acc += std::sqrt(best);
                }
                n.values[static_cast<std::size_t>(i)] = acc / mj;
            }
            break;
        }
    }
}

void Graph::recompute() {
    for (Node& n : nodes_) {
        if (n.kind == OpKind::Leaf) continue;
        eval_into(n);
        check_finite(n);
    }
}

// --- backward kernels --------------------------------------------------------

namespace {
void ensure_grad(Graph::Node& n) {
    if (n.grad.size() != n.values.size()) n.grad.assign(n.values.size(), 0.0);
}
}  // namespace

void Graph::backprop(const Node& n) {
    switch (n.kind) {
        case OpKind::Leaf:
            return;
        case OpKind::PointwiseConv: {
            Node& x = node(n.in[0]);
            Node& w = node(n.in[1]);
            Node& b = node(n.in[2]);
            const int cin = x.shape[0], cols = x.shape[1], cout = w.shape[0];
            if (x.requires_grad) {
                ensure_grad(x);
                for (int k = 0; k < cin; ++k) {
                    double* gx = x.grad.data() + static_cast<std::size_t>(k) * cols;
                    for (int c = 0; c < cout; ++c) {
                        const double wv = w.values[static_cast<std::size_t>(c) * cin + k];
                        const double* gy = n.grad.data() + static_cast<std::size_t>(c) * cols;
                        for (int j = 0; j < cols; ++j) gx[j] += wv * gy[j];
                    }
                }
            }
            if (w.requires_grad) {
                ensure_grad(w);
                for (int c = 0; c < cout; ++c) {
                    const double* gy = n.grad.data() + static_cast<std::size_t>(c) * cols;
                    double* gw = w.grad.data() + static_cast<std::size_t>(c) * cin;
                    for (int k = 0; k < cin; ++k) {
                        const double* xr = x.values.data() + static_cast<std::size_t>(k) * cols;
                        double acc = 0.0;
                        for (int j = 0; j < cols; ++j) acc += gy[j] * xr[j];
                        gw[k] += acc;
                    }
                }
            }
            if (b.requires_grad) {
                ensure_grad(b);
                for (int c = 0; c < cout; ++c) {
                    const double* gy = n.grad.data() + static_cast<std::size_t>(c) * cols;
                    double acc = 0.0;
                    for (int j = 0; j < cols; ++j) acc += gy[j];
                    b.grad[static_cast<std::size_t>(c)] += acc;
                }
            }
            return;
        }
        case OpKind::GlobalAvgPool: {
            Node& x = node(n.in[0]);
            if (!x.requires_grad) return;
            ensure_grad(x);
            const int c = x.shape[0], cols = x.shape[1];
            for (int i = 0; i < c; ++i) {
                const double g = n.grad[static_cast<std::size_t>(i)] / cols;
                double* row = x.grad.data() + static_cast<std::size_t>(i) * cols;
                for (int j = 0; j < cols; ++j) row[j] += g;
            }
            return;
        }
        case OpKind::Act: {
            Node& x = node(n.in[0]);
            if (!x.requires_grad) return;
            ensure_grad(x);
            if (n.act == Activation::Sigmoid) {
                for (std::size_t i = 0; i < x.values.size(); ++i) {
                    const double s = n.values[i];
                    x.grad[i] += n.grad[i] * s * (1.0 - s);
                }
            } else {
                for (std::size_t i = 0; i < x.values.size(); ++i) {
                    if (x.values[i] > 0.0) x.grad[i] += n.grad[i];
                }
            }
            return;
        }
        case OpKind::Ew: {
            Node& a = node(n.in[0]);
            Node& b = node(n.in[1]);
            BroadcastPlan plan = plan_broadcast(a.shape, b.shape, n.broadcast);
            const bool ga = a.requires_grad, gb = b.requires_grad;
            if (ga) ensure_grad(a);
            if (gb) ensure_grad(b);
            if (n.ew == Elementwise::Add) {
                for_broadcast(plan, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
                    const double g = n.grad[static_cast<std::size_t>(o)];
                    if (ga) a.grad[static_cast<std::size_t>(ia)] += g;
                    if (gb) b.grad[static_cast<std::size_t>(ib)] += g;
                });
            } else {
                for_broadcast(plan, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
                    const double g = n.grad[static_cast<std::size_t>(o)];
                    if (ga)
                        a.grad[static_cast<std::size_t>(ia)] +=
                            g * b.values[static_cast<std::size_t>(ib)];
                    if (gb)
                        b.grad[static_cast<std::size_t>(ib)] +=
                            g * a.values[static_cast<std::size_t>(ia)];
                });
            }
            return;
        }
        case OpKind::ConcatRows: {
            Node& a = node(n.in[0]);
            Node& b = node(n.in[1]);
            if (a.requires_grad) {
                ensure_grad(a);
                for (std::size_t i = 0; i < a.values.size(); ++i) a.grad[i] += n.grad[i];
            }
            if (b.requires_grad) {
                ensure_grad(b);
                const std::size_t off = a.values.size();
                for (std::size_t i = 0; i < b.values.size(); ++i) b.grad[i] += n.grad[off + i];
            }
            return;
        }
        case OpKind::TileCols: {
            Node& v = node(n.in[0]);
            if (!v.requires_grad) return;
            ensure_grad(v);
            const int c = n.shape[0], cols = n.shape[1];
            for (int i = 0; i < c; ++i) {
                const double* row = n.grad.data() + static_cast<std::size_t>(i) * cols;
                double acc = 0.0;
                for (int j = 0; j < cols; ++j) acc += row[j];
                v.grad[static_cast<std::size_t>(i)] += acc;
            }
            return;
        }
        case OpKind::MaxPoolCols: {
            Node& x = node(n.in[0]);
            if (!x.requires_grad) return;
            ensure_grad(x);
            const int c = x.shape[0], cols = x.shape[1];
            for (int i = 0; i < c; ++i) {
                x.grad[static_cast<std::size_t>(i) * cols + n.iaux[static_cast<std::size_t>(i)]] +=
                    n.grad[static_cast<std::size_t>(i)];
            }
            return;
        }
        case OpKind::NormalizeCols: {
            Node& x = node(n.in[0]);
            if (!x.requires_grad) return;
            ensure_grad(x);
            const int k = x.shape[0], cols = x.shape[1];
            for (int j = 0; j < cols; ++j) {
                double norm2 = 0.0, dot = 0.0;
                for (int i = 0; i < k; ++i) {
                    const std::size_t idx = static_cast<std::size_t>(i) * cols + j;
                    norm2 += x.values[idx] * x.values[idx];
                    dot += n.values[idx] * n.grad[idx];
                }
                const double norm = std::sqrt(norm2);
                for (int i = 0; i < k; ++i) {
                    const std::size_t idx = static_cast<std::size_t>(i) * cols + j;
                    x.grad[idx] += (n.grad[idx] - n.values[idx] * dot) / norm;
                }
            }
            return;
        }
        case OpKind::Reshape: {
            Node& x = node(n.in[0]);
            if (!x.requires_grad) return;
            ensure_grad(x);
            for (std::size_t i = 0; i < x.values.size(); ++i) x.grad[i] += n.grad[i];
            return;
        }
        case OpKind::LogSoftmax: {
            Node& x = node(n.in[0]);
            if (!x.requires_grad) return;
            ensure_grad(x);
            double gsum = 0.0;
            for (double g : n.grad) gsum += g;
            for (std::size_t i = 0; i < x.values.size(); ++i) {
                x.grad[i] += n.grad[i] - std::exp(n.values[i]) * gsum;
            }
            return;
        }
        case OpKind::LogClamped: {
            Node& x = node(n.in[0]);
            if (!x.requires_grad) return;
            ensure_grad(x);
            for (std::size_t i = 0; i < x.values.size(); ++i) {
                if (x.values[i] > n.scalar_aux) x.grad[i] += n.grad[i] / x.values[i];
            }
            return;
        }
        case OpKind::Sum: {
            Node& x = node(n.in[0]);
            if (!x.requires_grad) return;
            ensure_grad(x);
            const double g = n.grad[0];
            for (std::size_t i = 0; i < x.values.size(); ++i) x.grad[i] += g;
            return;
        }
        case OpKind::Mean: {
            Node& x = node(n.in[0]);
            if (!x.requires_grad) return;
            ensure_grad(x);
            const double g = n.grad[0] / static_cast<double>(x.values.size());
            for (std::size_t i = 0; i < x.values.size(); ++i) x.grad[i] += g;
            return;
        }
        case OpKind::PoseAddDistances:
        case OpKind::PoseAddSDistances: {
            Node& q = node(n.in[0]);
            Node& t = node(n.in[1]);
            const bool gq = q.requires_grad, gt = t.requires_grad;
            if (!gq && !gt) return;
            if (gq) ensure_grad(q);
            if (gt) ensure_grad(t);
            const int cols = q.shape[1];
            const std::size_t split = static_cast<std::size_t>(n.scalar_aux);
            const double* model = n.aux.data();
            const double* target = n.aux.data() + split;
            const int mj = static_cast<int>((n.aux.size() - split) / 3);
            const bool symmetric = n.kind == OpKind::PoseAddSDistances;
            for (int i = 0; i < cols; ++i) {
                const double qv[4] = {q.values[0 * cols + i], q.values[1 * cols + i],
                                      q.values[2 * cols + i], q.values[3 * cols + i]};
                double r[9];
                quat_matrix(qv[0], qv[1], qv[2], qv[3], r);
                const double tx = t.values[0 * cols + i];
                const double ty = t.values[1 * cols + i];
                const double tz = t.values[2 * cols + i];
                const double scale = n.grad[static_cast<std::size_t>(i)] / mj;
                if (scale == 0.0) continue;
                double dq[4] = {0, 0, 0, 0};
                double dt[3] = {0, 0, 0};
                for (int j = 0; j < mj; ++j) {
                    const int k = symmetric ? n.iaux[static_cast<std::size_t>(i) * mj + j] : j;
                    const double* p = model + 3 * k;
                    const double* g = target + 3 * j;
                    double u[3];
                    u[0] = r[0] * p[0] + r[1] * p[1] + r[2] * p[2] + tx - g[0];
                    u[1] = r[3] * p[0] + r[4] * p[1] + r[5] * p[2] + ty - g[1];
                    u[2] = r[6] * p[0] + r[7] * p[1] + r[8] * p[2] + tz - g[2];
                    const double d = std::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
                    if (d < 1e-18) continue;  // subgradient 0 at coincident points
                    u[0] /= d;
                    u[1] /= d;
                    u[2] /= d;
                    dt[0] += u[0];
                    dt[1] += u[1];
                    dt[2] += u[2];
                    accum_quat_backward(qv, p, u, 1.0, dq);
                }
                if (gt) {
                    t.grad[0 * cols + i] += scale * dt[0];
                    t.grad[1 * cols + i] += scale * dt[1];
                    t.grad[2 * cols + i] += scale * dt[2];
                }
                if (gq) {
                    q.grad[0 * cols + i] += scale * dq[0];
                    q.grad[1 * cols + i] += scale * dq[1];
                    q.grad[2 * cols + i] += scale * dq[2];
                    q.grad[3 * cols + i] += scale * dq[3];
                }
            }
            return;
        }
    }
}

void Graph::backward(Tensor loss) {
    const Node& l = node(loss.id);
    if (numel(l.shape) != 1) {
        throw ContractError("backward: loss must be scalar, got " + shape_str(l.shape));
    }
    // fresh gradients on every call
    for (int i = 0; i <= loss.id; ++i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.grad.empty()) std::fill(n.grad.begin(), n.grad.end(), 0.0);
    }
    Node& lnode = node(loss.id);
    if (!lnode.requires_grad) {
        throw ContractError("backward: loss does not depend on any parameter");
    }
    ensure_grad(lnode);
    lnode.grad[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
        const Node& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.requires_grad || n.grad.empty() || n.kind == OpKind::Leaf) continue;
        backprop(n);
    }
}

}  // namespace pampose::ag
