#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "pampose/autograd.hpp"

namespace pampose::ag {

// Adaptive moment estimation over a fixed parameter list. Parameters with an
// empty gradient buffer (not touched by the last backward) are skipped so a
// frozen sub-network keeps its moments untouched.
class Adam {
public:
    explicit Adam(Graph& graph, std::vector<Tensor> params, double lr = 1e-3,
                  double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : graph_(graph),
          params_(std::move(params)),
          lr_(lr),
          beta1_(beta1),
          beta2_(beta2),
          eps_(eps) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            const std::size_t n = graph_.values(params_[i]).size();
            m_[i].assign(n, 0.0);
            v_[i].assign(n, 0.0);
        }
    }

    void step() {
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, t_);
        const double c2 = 1.0 - std::pow(beta2_, t_);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto g = graph_.grad(params_[i]);
            if (g.empty()) continue;
            auto x = graph_.leaf_values(params_[i]);
            for (std::size_t k = 0; k < x.size(); ++k) {
                m_[i][k] = beta1_ * m_[i][k] + (1.0 - beta1_) * g[k];
                v_[i][k] = beta2_ * v_[i][k] + (1.0 - beta2_) * g[k] * g[k];
                const double mhat = m_[i][k] / c1;
                const double vhat = v_[i][k] / c2;
                x[k] += -lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

    double learning_rate() const { return lr_; }

private:
    Graph& graph_;
    std::vector<Tensor> params_;
    double lr_, beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace pampose::ag
