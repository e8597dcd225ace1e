// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#include "dreamreader/mapper.hpp"

#include <Eigen/LU>
#include <algorithm>
#include <cmath>

#include "dreamreader/activation_store.hpp"
#include "dreamreader/errors.hpp"
#include "dreamreader/fileio.hpp"
#include "dreamreader/optim.hpp"
#include "dreamreader/rng.hpp"

namespace dreamreader {

const char* mapper_family_name(MapperFamily f) {
    switch (f) {
        case MapperFamily::identity: return "identity";
        case MapperFamily::affine_ridge: return "affine_ridge";
        case MapperFamily::mlp: return "mlp";
    }
    return "?";
}

MapperFamily mapper_family_from_name(const std::string& name) {
    if (name == "identity") return MapperFamily::identity;
    if (name == "affine_ridge") return MapperFamily::affine_ridge;
    if (name == "mlp") return MapperFamily::mlp;
    fail(Errc::parse_error, "unknown mapper family '" + name + "'");
}

void MapperSpec::validate() const {
    require(input_dim >= 1 && output_dim >= 1, Errc::dim_mismatch,
            "mapper dims must be positive");
    if (family == MapperFamily::identity)
        require(input_dim == output_dim, Errc::dim_mismatch,
                "identity mapper needs input_dim == output_dim, got " +
                    std::to_string(input_dim) + " vs " + std::to_string(output_dim));
    if (family == MapperFamily::mlp)
        require(hidden_dim >= 1, Errc::dim_mismatch, "mlp mapper needs hidden_dim >= 1");
    require(lambda >= 0.0, Errc::dim_mismatch, "ridge lambda must be non-negative");
    require(hp.steps >= 0 && hp.log_interval >= 1 && hp.batch_size >= 1, Errc::dim_mismatch,
            "bad mapper training hyperparameters");
    require(hp.val_fraction >= 0.0 && hp.val_fraction < 1.0, Errc::dim_mismatch,
            "val_fraction must lie in [0, 1)");
}

Eigen::VectorXd TrainedMapper::apply(const Eigen::VectorXd& x) const {
    require(x.size() == spec.input_dim, Errc::dim_mismatch,
            "mapper input dim " + std::to_string(x.size()) + " != " +
                std::to_string(spec.input_dim));
    switch (spec.family) {
        case MapperFamily::identity:
            return x;
        case MapperFamily::affine_ridge:
            return affine.topRows(spec.input_dim).transpose() * x +
                   affine.row(spec.input_dim).transpose();
        case MapperFamily::mlp: {
            Eigen::VectorXd h = (w1.transpose() * x + b1).cwiseMax(0.0);
            return w2.transpose() * h + b2;
        }
    }
    fail(Errc::dim_mismatch, "unreachable mapper family");
}

Eigen::MatrixXd TrainedMapper::apply_batch(const Eigen::MatrixXd& xs) const {
    require(xs.cols() == spec.input_dim, Errc::dim_mismatch,
            "mapper batch input dim " + std::to_string(xs.cols()) + " != " +
                std::to_string(spec.input_dim));
    switch (spec.family) {
        case MapperFamily::identity:
            return xs;
        case MapperFamily::affine_ridge: {
            Eigen::MatrixXd out = xs * affine.topRows(spec.input_dim);
            out.rowwise() += affine.row(spec.input_dim);
            return out;
        }
        case MapperFamily::mlp: {
            Eigen::MatrixXd h = (xs * w1).rowwise() + b1.transpose();
            h = h.cwiseMax(0.0);
            Eigen::MatrixXd out = h * w2;
            out.rowwise() += b2.transpose();
            return out;
        }
    }
    fail(Errc::dim_mismatch, "unreachable mapper family");
}

TrainedMapper make_identity_mapper(int dim) {
    TrainedMapper m;
    m.spec.family = MapperFamily::identity;
    m.spec.input_dim = dim;
    m.spec.output_dim = dim;
    m.spec.validate();
    return m;
}

TrainedMapper fit_affine_ridge(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                               double lambda) {
    require(x.rows() >= 1, Errc::empty_set, "fit_affine_ridge: no rows");
    require(x.rows() == y.rows(), Errc::count_mismatch,
            "fit_affine_ridge: " + std::to_string(x.rows()) + " source vs " +
                std::to_string(y.rows()) + " target rows");
    require(lambda >= 0.0, Errc::dim_mismatch, "ridge lambda must be non-negative");
    const Eigen::Index n = x.rows(), p = x.cols();

    Eigen::MatrixXd aug(n, p + 1);
    aug.leftCols(p) = x;
    aug.col(p).setOnes();

    Eigen::MatrixXd normal = aug.transpose() * aug;
    for (Eigen::Index i = 0; i < p; ++i) normal(i, i) += lambda;  // bias row unpenalized

    Eigen::FullPivLU<Eigen::MatrixXd> lu(normal);
    require(lu.isInvertible(), Errc::singular_system,
            "ridge normal matrix is singular (lambda = " + std::to_string(lambda) + ")");

    TrainedMapper m;
    m.spec.family = MapperFamily::affine_ridge;
    m.spec.input_dim = static_cast<int>(p);
    m.spec.output_dim = static_cast<int>(y.cols());
    m.spec.lambda = lambda;
    m.affine = lu.solve(aug.transpose() * y);
    return m;
}

double mapper_mse(const TrainedMapper& mapper, const Eigen::MatrixXd& x,
                  const Eigen::MatrixXd& y) {
    require(x.rows() == y.rows() && x.rows() >= 1, Errc::count_mismatch, "mapper_mse rows");
    return (mapper.apply_batch(x) - y).rowwise().squaredNorm().mean();
}

TrainedMapper train_mlp_mapper(PairedBatchIterator& pairs, const MapperSpec& spec) {
    require(spec.family == MapperFamily::mlp, Errc::dim_mismatch,
            "train_mlp_mapper requires an mlp-family spec");
    spec.validate();

    // Drain the iterator once; rows keep the iterator's order, indices keep
    // the originating record positions.
    Eigen::MatrixXd xs, ys;
    std::vector<int64_t> record_indices;
    pairs.reset();
    {
        std::vector<Eigen::MatrixXd> xb, yb;
        int64_t total = 0;
        while (auto batch = pairs.next()) {
            total += batch->source.rows();
            xb.push_back(batch->source.cast<double>());
            yb.push_back(batch->target.cast<double>());
            for (int64_t idx : batch->indices) record_indices.push_back(idx);
        }
        require(total >= 1, Errc::empty_set, "train_mlp_mapper: iterator yielded no rows");
        xs.resize(total, xb.front().cols());
        ys.resize(total, yb.front().cols());
        Eigen::Index row = 0;
        for (size_t i = 0; i < xb.size(); ++i) {
            xs.middleRows(row, xb[i].rows()) = xb[i];
            ys.middleRows(row, yb[i].rows()) = yb[i];
            row += xb[i].rows();
        }
    }
    require(xs.cols() == spec.input_dim && ys.cols() == spec.output_dim, Errc::dim_mismatch,
            "iterator dims " + std::to_string(xs.cols()) + "->" + std::to_string(ys.cols()) +
                " do not match spec " + std::to_string(spec.input_dim) + "->" +
                std::to_string(spec.output_dim));

    const int64_t n = xs.rows();
    int64_t n_val = static_cast<int64_t>(std::llround(spec.hp.val_fraction * static_cast<double>(n)));
    if (spec.hp.val_fraction > 0.0 && n >= 2) n_val = std::max<int64_t>(n_val, 1);
    n_val = std::min(n_val, n - 1 >= 0 ? n - 1 : int64_t{0});

    SeededRng split_rng(mix_seed(spec.hp.seed, "mapper_split"));
    std::vector<int64_t> order = random_permutation(split_rng, n);
    std::vector<int64_t> val_rows(order.begin(), order.begin() + n_val);
    std::vector<int64_t> train_rows(order.begin() + n_val, order.end());
    if (val_rows.empty()) val_rows = train_rows;  // degenerate: validate on train
    std::sort(val_rows.begin(), val_rows.end());

    auto gather = [](const Eigen::MatrixXd& m, const std::vector<int64_t>& rows) {
        Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
        for (size_t i = 0; i < rows.size(); ++i)
            out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
        return out;
    };
    Eigen::MatrixXd xv = gather(xs, val_rows), yv = gather(ys, val_rows);
    Eigen::MatrixXd xt = gather(xs, train_rows), yt = gather(ys, train_rows);

    TrainedMapper m;
    m.spec = spec;
    for (int64_t r : val_rows) m.val_indices.push_back(record_indices[static_cast<size_t>(r)]);

    SeededRng init_rng(mix_seed(spec.hp.seed, "mapper_init"));
    m.w1 = normal_matrix<double>(init_rng, spec.input_dim, spec.hidden_dim,
                                 1.0 / std::sqrt(static_cast<double>(spec.input_dim)));
    m.b1 = Eigen::VectorXd::Zero(spec.hidden_dim);
    m.w2 = normal_matrix<double>(init_rng, spec.hidden_dim, spec.output_dim,
                                 1.0 / std::sqrt(static_cast<double>(spec.hidden_dim)));
    m.b2 = Eigen::VectorXd::Zero(spec.output_dim);

    m.initial_val_loss = mapper_mse(m, xv, yv);
    m.curve.push_back({0, mapper_mse(m, xt, yt), m.initial_val_loss});

    Eigen::MatrixXd b1m = m.b1, b2m = m.b2;
    AdamOptimizer opt(spec.hp.learning_rate);
    opt.add_param(&m.w1);
    opt.add_param(&b1m);
    opt.add_param(&m.w2);
    opt.add_param(&b2m);

    const int64_t n_train = xt.rows();
    const int64_t batch = std::min<int64_t>(spec.hp.batch_size, n_train);
    SeededRng batch_rng(mix_seed(spec.hp.seed, "mapper_batch"));
    std::vector<int64_t> perm = random_permutation(batch_rng, n_train);
    size_t cursor = 0;

    for (int step = 1; step <= spec.hp.steps; ++step) {
        Eigen::MatrixXd xb(batch, spec.input_dim), yb(batch, spec.output_dim);
        for (int64_t i = 0; i < batch; ++i) {
            if (cursor >= perm.size()) {
                perm = random_permutation(batch_rng, n_train);
                cursor = 0;
            }
            xb.row(i) = xt.row(perm[cursor]);
            yb.row(i) = yt.row(perm[cursor]);
            ++cursor;
        }

        m.b1 = b1m.col(0);
        m.b2 = b2m.col(0);
        Eigen::MatrixXd pre = (xb * m.w1).rowwise() + m.b1.transpose();
        Eigen::MatrixXd h = pre.cwiseMax(0.0);
        Eigen::MatrixXd err = ((h * m.w2).rowwise() + m.b2.transpose()) - yb;
        const double scale = 2.0 / static_cast<double>(batch);

        Eigen::MatrixXd d_pred = scale * err;
        Eigen::MatrixXd g_w2 = h.transpose() * d_pred;
        Eigen::MatrixXd g_b2 = d_pred.colwise().sum().transpose();
        Eigen::MatrixXd dh =
            (d_pred * m.w2.transpose()).cwiseProduct((pre.array() > 0.0).cast<double>().matrix());
        Eigen::MatrixXd g_w1 = xb.transpose() * dh;
        Eigen::MatrixXd g_b1 = dh.colwise().sum().transpose();

        opt.step({g_w1, g_b1, g_w2, g_b2});
        m.b1 = b1m.col(0);
        m.b2 = b2m.col(0);

        if (step % spec.hp.log_interval == 0 || step == spec.hp.steps)
            m.curve.push_back({step, mapper_mse(m, xt, yt), mapper_mse(m, xv, yv)});
    }

    m.final_val_loss = mapper_mse(m, xv, yv);
    if (spec.hp.steps > 0 && m.initial_val_loss > 1e-12)
        require(m.final_val_loss < m.initial_val_loss, Errc::no_decrease,
                "mlp mapper validation loss did not decrease (" +
                    std::to_string(m.initial_val_loss) + " -> " +
                    std::to_string(m.final_val_loss) + ")");
    return m;
}

// ---------------------------------------------------------------------------

namespace {
constexpr char kMapMagic[7] = "DRMAP1";

std::vector<float> to_block(const Eigen::MatrixXd& m) {
    std::vector<float> out(static_cast<size_t>(m.size()));
    size_t p = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) out[p++] = static_cast<float>(m(r, c));
    return out;
}

Eigen::MatrixXd from_block(const std::vector<float>& v, Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    size_t p = 0;
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = v[p++];
    return m;
}
}  // namespace

void save_mapper(const TrainedMapper& m, const std::filesystem::path& path) {
    nlohmann::json curve = nlohmann::json::array();
    for (const LossPoint& pt : m.curve)
        curve.push_back({{"step", pt.step}, {"train", pt.train_loss}, {"val", pt.val_loss}});

    nlohmann::json header{
        {"format", "drmap"},
        {"dtype", "f32"},
        {"family", mapper_family_name(m.spec.family)},
        {"input_dim", m.spec.input_dim},
        {"output_dim", m.spec.output_dim},
        {"hidden_dim", m.spec.hidden_dim},
        {"lambda", m.spec.lambda},
        {"hyperparams",
         {{"steps", m.spec.hp.steps},
          {"learning_rate", m.spec.hp.learning_rate},
          {"log_interval", m.spec.hp.log_interval},
          {"batch_size", m.spec.hp.batch_size},
          {"val_fraction", m.spec.hp.val_fraction},
          {"seed", m.spec.hp.seed},
          {"precision", m.spec.hp.precision}}},
        {"curve", curve},
        {"val_indices", m.val_indices},
        {"source_fingerprint", m.source_fingerprint},
        {"target_fingerprint", m.target_fingerprint},
    };
    // NaN marks "never validated" (e.g. closed-form ridge); JSON has no NaN.
    if (std::isfinite(m.initial_val_loss)) header["initial_val_loss"] = m.initial_val_loss;
    if (std::isfinite(m.final_val_loss)) header["final_val_loss"] = m.final_val_loss;

    std::vector<std::vector<float>> blocks;
    if (m.spec.family == MapperFamily::affine_ridge) {
        blocks.push_back(to_block(m.affine));
    } else if (m.spec.family == MapperFamily::mlp) {
        blocks.push_back(to_block(m.w1));
        blocks.push_back(to_block(m.b1));
        blocks.push_back(to_block(m.w2));
        blocks.push_back(to_block(m.b2));
    }
    std::vector<const std::vector<float>*> refs;
    for (const auto& b : blocks) refs.push_back(&b);
    write_envelope(path, kMapMagic, header, refs);
}

TrainedMapper load_mapper(const std::filesystem::path& path) {
    RawEnvelope env = read_envelope(path, kMapMagic);
    const auto& h = env.header;
    TrainedMapper m;
    m.spec.family = mapper_family_from_name(h.at("family").get<std::string>());
    m.spec.input_dim = h.at("input_dim").get<int>();
    m.spec.output_dim = h.at("output_dim").get<int>();
    m.spec.hidden_dim = h.value("hidden_dim", 0);
    m.spec.lambda = h.value("lambda", 0.0);
    if (h.contains("hyperparams")) {
        const auto& hp = h.at("hyperparams");
        m.spec.hp.steps = hp.value("steps", 0);
        m.spec.hp.learning_rate = hp.value("learning_rate", 1e-4);
        m.spec.hp.log_interval = hp.value("log_interval", 100);
        m.spec.hp.batch_size = hp.value("batch_size", 32);
        m.spec.hp.val_fraction = hp.value("val_fraction", 0.2);
        m.spec.hp.seed = hp.value("seed", uint64_t{0});
        m.spec.hp.precision = hp.value("precision", std::string{"f32"});
    }
    for (const auto& pt : h.value("curve", nlohmann::json::array()))
        m.curve.push_back({pt.at("step").get<int>(), pt.at("train").get<double>(),
                           pt.at("val").get<double>()});
    m.val_indices = h.value("val_indices", std::vector<int64_t>{});
    if (h.contains("initial_val_loss")) m.initial_val_loss = h.at("initial_val_loss").get<double>();
    if (h.contains("final_val_loss")) m.final_val_loss = h.at("final_val_loss").get<double>();
    m.source_fingerprint = h.value("source_fingerprint", std::string{});
    m.target_fingerprint = h.value("target_fingerprint", std::string{});

    const int64_t p = m.spec.input_dim, q = m.spec.output_dim, hid = m.spec.hidden_dim;
    if (m.spec.family == MapperFamily::affine_ridge) {
        auto blocks = split_blocks(env, {(p + 1) * q});
        m.affine = from_block(blocks[0], p + 1, q);
    } else if (m.spec.family == MapperFamily::mlp) {
        auto blocks = split_blocks(env, {p * hid, hid, hid * q, q});
        m.w1 = from_block(blocks[0], p, hid);
        m.b1 = from_block(blocks[1], hid, 1).col(0);
        m.w2 = from_block(blocks[2], hid, q);
        m.b2 = from_block(blocks[3], q, 1).col(0);
    } else {
        auto blocks = split_blocks(env, {});
        (void)blocks;
    }
    m.spec.validate();
    return m;
}

}  // namespace dreamreader
