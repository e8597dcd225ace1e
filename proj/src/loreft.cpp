// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#include "dreamreader/loreft.hpp"

#include <Eigen/QR>
#include <algorithm>

#include "dreamreader/errors.hpp"
#include "dreamreader/optim.hpp"
#include "dreamreader/rng.hpp"

namespace dreamreader {

Eigen::VectorXd loreft_apply(const LoReftParams& p, const Eigen::VectorXd& h) {
    require(h.size() == p.r.cols(), Errc::dim_mismatch,
            "loreft input dim " + std::to_string(h.size()) + " vs " + std::to_string(p.r.cols()));
    return h + p.r.transpose() * (p.w * h + p.b - p.r * h);
}

void reorthonormalize_rows(Eigen::MatrixXd& r) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(r.transpose());  // d x rank
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(r.cols(), r.rows());
    Eigen::MatrixXd fac = qr.matrixQR().topRows(r.rows()).triangularView<Eigen::Upper>();
    // keep q continuous across steps: force positive diagonal of the R factor
    for (Eigen::Index j = 0; j < q.cols(); ++j)
        if (fac(j, j) < 0) q.col(j) = -q.col(j);
    r = q.transpose();
}

namespace {

double loreft_loss(const LoReftParams& p, const Eigen::MatrixXd& src_t,
                   const Eigen::MatrixXd& tgt_t) {
    // columns are samples
    Eigen::MatrixXd u = (p.w * src_t).colwise() + p.b;
    u -= p.r * src_t;
    Eigen::MatrixXd err = src_t + p.r.transpose() * u - tgt_t;
    return err.squaredNorm() / static_cast<double>(err.cols());
}

}  // namespace

LoReftParams fit_loreft(const Eigen::MatrixXd& source, const Eigen::MatrixXd& target, int rank,
                        const LoReftHyperparams& hp) {
    const int64_t n = source.rows();
    const int64_t d = source.cols();
    require(target.rows() == n && target.cols() == d, Errc::dim_mismatch,
            "paired activation matrices must have equal shapes");
    require(n >= 1, Errc::empty_set, "no training pairs");
    require(rank >= 1 && rank <= d, Errc::rank_too_large,
            "rank " + std::to_string(rank) + " exceeds feature dim " + std::to_string(d));

    SeededRng rng(hp.seed);
    LoReftParams p;
    p.rank = rank;
    p.hp = hp;
    p.r = normal_matrix<double>(rng, rank, d);
    reorthonormalize_rows(p.r);
    p.w = p.r;  // identity-initialized intervention
    p.b = Eigen::VectorXd::Zero(rank);

    const Eigen::MatrixXd src_t = source.transpose();  // d x N
    const Eigen::MatrixXd tgt_t = target.transpose();
    p.initial_loss = loreft_loss(p, src_t, tgt_t);

    Eigen::MatrixXd bm = p.b;
    AdamOptimizer opt(hp.learning_rate);
    opt.add_param(&p.w);
    opt.add_param(&bm);
    opt.add_param(&p.r);

    const int64_t batch = std::min<int64_t>(std::max(1, hp.batch_size), n);
    std::vector<int64_t> order = random_permutation(rng, n);
    int64_t cursor = 0;

    for (int step = 0; step < hp.steps; ++step) {
        Eigen::MatrixXd h(d, batch), y(d, batch);
        for (int64_t i = 0; i < batch; ++i) {
            if (cursor == n) {
                order = random_permutation(rng, n);
                cursor = 0;
            }
            h.col(i) = src_t.col(order[static_cast<size_t>(cursor)]);
            y.col(i) = tgt_t.col(order[static_cast<size_t>(cursor)]);
            ++cursor;
        }
        p.b = bm;
        Eigen::MatrixXd u = ((p.w * h).colwise() + p.b) - p.r * h;  // rank x B
        Eigen::MatrixXd err = h + p.r.transpose() * u - y;          // d x B
        const double scale = 2.0 / static_cast<double>(batch);
        Eigen::MatrixXd gu = scale * (p.r * err);  // rank x B
        Eigen::MatrixXd g_w = gu * h.transpose();
        Eigen::MatrixXd g_b = gu.rowwise().sum();
        Eigen::MatrixXd g_r =
            scale * (u * err.transpose() - (p.r * err) * h.transpose());
        opt.step({g_w, g_b, g_r});
        reorthonormalize_rows(p.r);
    }
    p.b = bm;
    p.final_loss = loreft_loss(p, src_t, tgt_t);

    if (p.initial_loss > 1e-12)
        require(p.final_loss < p.initial_loss, Errc::no_decrease,
                "loss did not decrease (" + std::to_string(p.initial_loss) + " -> " +
                    std::to_string(p.final_loss) + "); adjust hyperparameters");
    return p;
}

}  // namespace dreamreader
