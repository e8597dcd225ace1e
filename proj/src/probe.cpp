// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#include "dreamreader/probe.hpp"

#include <cmath>

#include "dreamreader/errors.hpp"
#include "dreamreader/optim.hpp"
#include "dreamreader/rng.hpp"

namespace dreamreader {

Eigen::Vector2d probe_logits(const ProbeParams& p, const Eigen::VectorXd& h) {
    require(h.size() == p.w1.cols(), Errc::dim_mismatch,
            "probe input dim " + std::to_string(h.size()) + " vs " + std::to_string(p.w1.cols()));
    Eigen::VectorXd a = (p.w1 * h + p.b1).array().tanh();
    return p.w2 * a + p.b2;
}

ProbeParams train_probe_core(const Eigen::MatrixXd& x, const std::vector<int>& labels,
                             const ProbeHyperparams& hp) {
    const int64_t n = x.rows();
    const int64_t d = x.cols();
    require(n == static_cast<int64_t>(labels.size()), Errc::dim_mismatch,
            "labels/sample count mismatch");
    int64_t count[2] = {0, 0};
    for (int y : labels) {
        require(y == 0 || y == 1, Errc::degenerate_labels, "labels must be 0 or 1");
        ++count[y];
    }
    require(count[0] >= 2 && count[1] >= 2, Errc::degenerate_labels,
            "need at least two examples per class (got " + std::to_string(count[0]) + "/" +
                std::to_string(count[1]) + ")");

    SeededRng rng(hp.seed);
    ProbeParams p;
    p.hp = hp;
    p.w1 = normal_matrix<double>(rng, hp.hidden_dim, d, 1.0 / std::sqrt(static_cast<double>(d)));
    p.b1 = Eigen::VectorXd::Zero(hp.hidden_dim);
    p.w2 = normal_matrix<double>(rng, 2, hp.hidden_dim,
                                 1.0 / std::sqrt(static_cast<double>(hp.hidden_dim)));
    p.b2 = Eigen::VectorXd::Zero(2);

    Eigen::MatrixXd b1m = p.b1, b2m = p.b2;  // column views for the optimizer
    AdamOptimizer opt(hp.learning_rate);
    opt.add_param(&p.w1);
    opt.add_param(&b1m);
    opt.add_param(&p.w2);
    opt.add_param(&b2m);

    const Eigen::MatrixXd xt = x.transpose();  // d x N
    for (int step = 0; step < hp.steps; ++step) {
        p.b1 = b1m;
        p.b2 = b2m;
        Eigen::MatrixXd pre = (p.w1 * xt).colwise() + p.b1;  // hidden x N
        Eigen::MatrixXd act = pre.array().tanh();
        Eigen::MatrixXd logits = (p.w2 * act).colwise() + p.b2;  // 2 x N

        // softmax + cross-entropy gradient
        Eigen::MatrixXd dlogits(2, n);
        for (int64_t i = 0; i < n; ++i) {
            double mx = logits.col(i).maxCoeff();
            Eigen::Vector2d e = (logits.col(i).array() - mx).exp();
            Eigen::Vector2d prob = e / e.sum();
            prob(labels[static_cast<size_t>(i)]) -= 1.0;
            dlogits.col(i) = prob / static_cast<double>(n);
        }

        Eigen::MatrixXd g_w2 = dlogits * act.transpose();
        Eigen::MatrixXd g_b2 = dlogits.rowwise().sum();
        Eigen::MatrixXd dact = p.w2.transpose() * dlogits;
        Eigen::MatrixXd dpre = dact.array() * (1.0 - act.array().square());
        Eigen::MatrixXd g_w1 = dpre * x;
        Eigen::MatrixXd g_b1 = dpre.rowwise().sum();
        opt.step({g_w1, g_b1, g_w2, g_b2});
    }
    p.b1 = b1m;
    p.b2 = b2m;

    int64_t correct = 0;
    for (int64_t i = 0; i < n; ++i) {
        Eigen::Vector2d logit = probe_logits(p, x.row(i).transpose());
        int pred = logit(1) > logit(0) ? 1 : 0;
        if (pred == labels[static_cast<size_t>(i)]) ++correct;
    }
    p.final_train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    return p;
}

Eigen::VectorXd kst_direction(const ProbeParams& p, const Eigen::VectorXd& h, int target_class) {
    require(target_class == 0 || target_class == 1, Errc::index_out_of_range,
            "target class must be 0 or 1");
    require(h.size() == p.w1.cols(), Errc::dim_mismatch, "probe input dim mismatch");
    Eigen::VectorXd pre = p.w1 * h + p.b1;
    Eigen::VectorXd act = pre.array().tanh();
    // d logit_k / dh = W1^T ((1 - act^2) .* W2_k^T)
    Eigen::VectorXd gate =
        (1.0 - act.array().square()) * p.w2.row(target_class).transpose().array();
    Eigen::VectorXd grad = p.w1.transpose() * gate;
    double norm = grad.norm();
    require(norm > 1e-12, Errc::zero_gradient, "probe gradient vanished at this activation");
    return grad / norm;
}

}  // namespace dreamreader
