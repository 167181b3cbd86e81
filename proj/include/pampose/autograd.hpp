#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pampose/errors.hpp"

namespace pampose::ag {

// Shape of a dense row-major tensor. Rank is 1 or 2 everywhere in this
// project ([C] vectors and [C x N] maps); the kernels stay generic anyway.
using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::int64_t numel(const Shape& s);

// Handle into a Graph. Cheap to copy; owns nothing.
struct Tensor {
    int id = -1;
    bool valid() const { return id >= 0; }
};

enum class Activation { Sigmoid, Relu };
enum class Elementwise { Add, Mul };

enum class OpKind {
    Leaf,
    PointwiseConv,
    GlobalAvgPool,
    Act,
    Ew,
    ConcatRows,
    TileCols,
    MaxPoolCols,
    NormalizeCols,
    Reshape,
    LogSoftmax,
    LogClamped,
    Sum,
    Mean,
    PoseAddDistances,
    PoseAddSDistances,
};

// Reverse-mode differentiation graph. Nodes are appended in evaluation
// order, so the node vector itself is the topological order; backward is a
// single reverse sweep. One graph per training run, single-threaded.
class Graph {
public:
    struct Node {
        OpKind kind = OpKind::Leaf;
        Shape shape;
        std::vector<double> values;
        std::vector<double> grad;  // sized lazily in backward
        std::array<int, 3> in{-1, -1, -1};
        int n_in = 0;
        bool requires_grad = false;
        bool is_param = false;
        std::string name;  // parameters only

        Activation act = Activation::Relu;
        Elementwise ew = Elementwise::Add;
        bool broadcast = false;
        double scalar_aux = 0.0;          // clamp floor
        std::vector<double> aux;          // constant payload (model / target points)
        std::vector<int> iaux;            // saved argmax / argmin indices
    };

    // --- leaves ---------------------------------------------------------
    Tensor constant(Shape shape, std::vector<double> values);
    Tensor constant_scalar(double v) { return constant({1}, {v}); }
    Tensor parameter(Shape shape, std::vector<double> values, std::string name);

    // --- forward ops ------------------------------------------------------
    // output[c, n] = bias[c] + sum_k weights[c, k] * input[k, n]
    Tensor pointwise_conv(Tensor input, Tensor weights, Tensor bias);
    // [C x N] -> [C], mean over points. Accumulates each row in sorted
    // value order, so the result is exactly invariant under column
    // permutations.
    Tensor global_avg_pool(Tensor input);
    Tensor activation(Tensor input, Activation kind);
    // re-usable spellings
    Tensor relu(Tensor t) { return activation(t, Activation::Relu); }
    Tensor sigmoid(Tensor t) { return activation(t, Activation::Sigmoid); }
    // broadcast = false requires identical shapes. broadcast = true pads the
    // shorter shape with trailing 1s, then every dim must match or be 1; the
    // result shape is the per-dim max.
    Tensor elementwise(Tensor a, Tensor b, Elementwise kind, bool broadcast = false);
    Tensor add(Tensor a, Tensor b, bool broadcast = false) {
        return elementwise(a, b, Elementwise::Add, broadcast);
    }
    Tensor mul(Tensor a, Tensor b, bool broadcast = false) {
        return elementwise(a, b, Elementwise::Mul, broadcast);
    }
    Tensor scale(Tensor a, double s) { return mul(a, constant_scalar(s), true); }
    Tensor sub(Tensor a, Tensor b, bool broadcast = false) {
        return add(a, scale(b, -1.0), broadcast);
    }
    // stack two [C1 x N], [C2 x N] maps into [(C1+C2) x N]
    Tensor concat_rows(Tensor a, Tensor b);
    // repeat a [C] or [C x 1] vector into [C x n]
    Tensor tile_cols(Tensor vec, int n);
    // [C x N] -> [C], max over points (saves argmax; first max wins)
    Tensor max_pool_cols(Tensor input);
    // each column scaled to unit L2 norm; throws DegenerateError below 1e-12
    Tensor normalize_cols(Tensor input);
    Tensor reshape(Tensor input, Shape shape);
    // log softmax over all entries (used on [K] / [K x 1] logit vectors)
    Tensor log_softmax(Tensor input);
    // log(max(x, floor)); gradient zero in the clamped region
    Tensor log_clamped(Tensor input, double floor = 1e-8);
    Tensor sum(Tensor input);
    Tensor mean(Tensor input);

    // Per-point pose distances for the dense objective. quats is [4 x N]
    // (unit columns), trans is [3 x N]; model_pts / target_pts hold M points
    // each as flat xyz triples. Output [1 x N]:
    //   add : out[i]  = 1/M sum_j  || R(q_i) x_j + t_i - g_j ||
    //   adds: out[i]  = 1/M sum_j min_k || g_j - (R(q_i) x_k + t_i) ||
    Tensor pose_add_distances(Tensor quats, Tensor trans, std::vector<double> model_pts,
                              std::vector<double> target_pts);
    Tensor pose_adds_distances(Tensor quats, Tensor trans, std::vector<double> model_pts,
                               std::vector<double> target_pts);

    // --- differentiation -------------------------------------------------
    // Reverse sweep from a scalar loss; gradients of every requires-grad
    // node are (re)written. Throws ContractError if loss is not scalar.
    void backward(Tensor loss);

    // Re-run every forward kernel in order (after mutating leaf values).
    void recompute();

    // --- access -----------------------------------------------------------
    const Shape& shape(Tensor t) const { return node(t.id).shape; }
    int rows(Tensor t) const { return node(t.id).shape[0]; }
    int cols(Tensor t) const {
        const Shape& s = node(t.id).shape;
        return s.size() > 1 ? s[1] : 1;
    }
    std::span<const double> values(Tensor t) const { return node(t.id).values; }
    std::span<double> leaf_values(Tensor t);  // leaves only; for optimizer / FD probes
    std::span<const double> grad(Tensor t) const { return node(t.id).grad; }
    double value_scalar(Tensor t) const { return node(t.id).values.at(0); }
    const std::string& name(Tensor t) const { return node(t.id).name; }

    std::vector<Tensor> parameters() const;
    std::int64_t parameter_count() const;

    // Watermark/truncate: parameters live below the mark, per-scene forward
    // nodes above it are dropped between steps.
    std::size_t mark() const { return nodes_.size(); }
    void truncate(std::size_t mark);

    std::size_t size() const { return nodes_.size(); }

private:
    const Node& node(int id) const;
    Node& node(int id);
    Tensor push(Node n);
    void eval_into(Node& n);      // compute n.values from inputs
    void backprop(const Node& n); // backward kernel dispatch
    void check_finite(const Node& n) const;

    std::vector<Node> nodes_;
};

// Relative-error criterion used by all gradient checks:
// |analytic - fd| / max(1, |analytic|)
double grad_rel_err(double analytic, double fd);

}  // namespace pampose::ag
