// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <cmath>
#include <vector>

namespace dreamreader {

// Adam over a fixed set of parameter matrices. Parameters are registered
// once; step() consumes gradients in the same order.
class AdamOptimizer {
  public:
    explicit AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999,
                           double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void add_param(Eigen::MatrixXd* p) {
        params_.push_back(p);
        m_.emplace_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
        v_.emplace_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
    }

    void step(const std::vector<Eigen::MatrixXd>& grads) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (size_t i = 0; i < params_.size(); ++i) {
            m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
            v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i].cwiseProduct(grads[i]);
            params_[i]->array() -=
                lr_ * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + eps_);
        }
    }

    size_t num_params() const { return params_.size(); }

  private:
    double lr_, beta1_, beta2_, eps_;
    int t_ = 0;
    std::vector<Eigen::MatrixXd*> params_;
    std::vector<Eigen::MatrixXd> m_, v_;
};

}  // namespace dreamreader
