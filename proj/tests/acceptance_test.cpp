// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0
//
// Release gate: nine end-to-end checks over the whole toolkit, one PASS/FAIL
// line each. The exit code is the number of failing checks, so CI can gate
// on zero. Tolerances are pinned here, next to the claims they guard.

#include <Eigen/QR>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "dreamreader/activation_store.hpp"
#include "dreamreader/config.hpp"
#include "dreamreader/fingerprint.hpp"
#include "dreamreader/localization.hpp"
#include "dreamreader/mapper.hpp"
#include "dreamreader/metrics.hpp"
#include "dreamreader/pipeline.hpp"
#include "dreamreader/rng.hpp"
#include "dreamreader/sae.hpp"
#include "dreamreader/steering.hpp"
#include "dreamreader/stitching.hpp"
#include "dreamreader/toy_fixture.hpp"
#include "test_util.hpp"

using namespace dreamreader;
using dtest::make_fixture;
using dtest::site_all;
using dtest::TempDir;
using nlohmann::json;

namespace {

// Records the first failing condition; later ones are usually side effects.
void expect(bool ok, const std::string& what, std::string& why) {
    if (!ok && why.empty()) why = what;
}

bool bits_equal(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape && a.data == b.data;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), {});
}

// Reference ridge solve: bias-augmented normal equations with the bias row
// unpenalized, through a rank-revealing decomposition.
Eigen::MatrixXd ridge_oracle(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double lambda) {
    Eigen::MatrixXd xa(x.rows(), x.cols() + 1);
    xa << x, Eigen::VectorXd::Ones(x.rows());
    Eigen::MatrixXd gram = xa.transpose() * xa;
    for (int j = 0; j < x.cols(); ++j) gram(j, j) += lambda;
    return gram.completeOrthogonalDecomposition().solve(xa.transpose() * y);
}

// One flattened activation record per matrix row, persisted for the mapper
// training entry points that read paired files.
ActivationFile rows_to_file(const Eigen::MatrixXd& m, const std::string& path) {
    HookSite site = site_all("denoiser.mid.cross_attn");
    std::vector<ActivationRecord> out;
    for (int i = 0; i < m.rows(); ++i) {
        ActivationRecord r;
        r.site = site;
        r.prompt_id = "p" + std::to_string(i);
        r.value = Tensor({static_cast<int>(m.cols())}, {});
        for (int j = 0; j < m.cols(); ++j) r.value.data.push_back(static_cast<float>(m(i, j)));
        out.push_back(std::move(r));
    }
    return write_records(out, path);
}

SAEBundle random_bundle(int d, int m, int k, uint64_t seed) {
    SAEBundle b;
    b.d = d;
    b.m = m;
    b.k = k;
    SeededRng rng(seed);
    b.w_enc = normal_matrix<double>(rng, m, d, 1.0);
    b.b_enc = normal_vector<double>(rng, m, 0.1);
    b.w_dec = normal_matrix<double>(rng, d, m, 1.0);
    for (int j = 0; j < m; ++j) b.w_dec.col(j).normalize();
    b.b_dec = normal_vector<double>(rng, d, 0.1);
    return b;
}

struct PlantedData {
    Eigen::MatrixXd dictionary;
    std::vector<ActivationSample> samples;
};

PlantedData planted_data(int d, int m_true, int k_true, int n, uint64_t seed) {
    PlantedData out;
    SeededRng rng(seed);
    out.dictionary = normal_matrix<double>(rng, d, m_true, 1.0);
    for (int j = 0; j < m_true; ++j) out.dictionary.col(j).normalize();
    for (int i = 0; i < n; ++i) {
        std::set<int> atoms;
        while (static_cast<int>(atoms.size()) < k_true)
            atoms.insert(static_cast<int>(rng.uniform_int(static_cast<uint64_t>(m_true))));
        Eigen::VectorXd x = Eigen::VectorXd::Zero(d);
        for (int a : atoms) x += (0.5 + rng.uniform()) * out.dictionary.col(a);
        ActivationSample s;
        s.x = x.cast<float>();
        s.prompt_id = "s" + std::to_string(i);
        s.timestep = i % 4;
        out.samples.push_back(std::move(s));
    }
    return out;
}

double relative_mse(const std::vector<ActivationSample>& samples, const SAEBundle& b) {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(b.d);
    for (const auto& s : samples) mean += s.x.cast<double>();
    mean /= static_cast<double>(samples.size());
    double err = 0.0, var = 0.0;
    for (const auto& s : samples) {
        Eigen::VectorXd x = s.x.cast<double>();
        err += (sae_decode(b, sae_encode(b, x)) - x).squaredNorm();
        var += (x - mean).squaredNorm();
    }
    return err / var;
}

json steer_doc() {
    return {{"config_version", 1},
            {"workflow", "steer"},
            {"sites", {"denoiser.mid.cross_attn"}},
            {"method", {{"strength", 0.7}}},
            {"dataset",
             {{"prompt_triples",
               {"a photo of a sunflower field|a photo of a field|a photo of a field",
                "a sunflower in a vase|a vase on a table|a vase on a table"}}}},
            {"metrics", {"alignment", "ssim", "perceptual"}}};
}

// ---------------------------------------------------------------------------
// 1. Every intervention mode at neutral settings reproduces the plain
//    generation bit-for-bit, within a one-minute budget.

std::string check_null_interventions() {
    std::string why;
    const auto t0 = std::chrono::steady_clock::now();

    ToyDiffusionAdapter adapter = make_fixture();
    ToyDiffusionAdapter twin = make_fixture();
    const Prompt prompt = adapter.make_prompt("p0", "a photo of a lighthouse at dusk");
    const uint64_t seed = 11;
    const Tensor base = generate(adapter, prompt, seed).image;

    std::vector<InterventionSpec> unit_scale;
    for (const char* s : {"denoiser.down.0", "denoiser.mid.cross_attn", "decoder"})
        unit_scale.push_back({site_all(s), ScaleEdit{1.0}});
    expect(bits_equal(generate(adapter, prompt, seed, unit_scale).image, base),
           "scale(1.0) altered the image", why);

    SeededRng rng(5);
    SteeringVector vec;
    vec.site = site_all("denoiser.mid.cross_attn");
    vec.direction = normal_vector<float>(rng, 8);
    expect(bits_equal(apply_steering(adapter, prompt, seed, vec, {}, 0.0), base),
           "zero-strength steering altered the image", why);

    LoReftParams ident;
    ident.rank = 2;
    ident.r = Eigen::MatrixXd::Zero(2, 8);
    ident.r(0, 0) = 1.0;
    ident.r(1, 1) = 1.0;
    ident.w = ident.r;
    ident.b = Eigen::VectorXd::Zero(2);
    ident.sites = {site_all("denoiser.mid.cross_attn")};
    expect(bits_equal(apply_steering(adapter, prompt, seed, ident, 1.0), base),
           "identity-initialized low-rank edit altered the image", why);

    LoReftParams off = ident;
    off.w = normal_matrix<double>(rng, 2, 8);
    off.b = normal_vector<double>(rng, 2);
    expect(bits_equal(apply_steering(adapter, prompt, seed, off, 0.0), base),
           "zero-strength low-rank edit altered the image", why);

    const SAEBundle bundle = random_bundle(2, 4, 2, 17);
    const HookSite mid = site_all("denoiser.mid");
    const Tensor recon =
        generate(adapter, prompt, seed, {sae_edit_intervention(bundle, {}, mid)}).image;
    const Tensor recon_again =
        generate(adapter, prompt, seed, {sae_edit_intervention(bundle, {}, mid)}).image;
    expect(bits_equal(recon, recon_again), "autoencoder reconstruction is not deterministic", why);
    const Tensor recon_scale1 =
        generate(adapter, prompt, seed,
                 {sae_edit_intervention(bundle, {{0, FeatureEdit::Mode::scale, 1.0}}, mid)})
            .image;
    expect(bits_equal(recon, recon_scale1),
           "empty edit list differs from a unit-scale feature edit", why);

    const Tensor stitched = stitch_generate(adapter, twin, make_identity_mapper(128),
                                            site_all("denoiser.mid"), site_all("denoiser.mid"),
                                            prompt, seed);
    expect(bits_equal(stitched, base), "identity self-stitch altered the image", why);

    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    expect(secs < 60.0, "null-intervention suite exceeded its one-minute budget", why);
    return why;
}

// ---------------------------------------------------------------------------
// 2. The closed-form ridge fit agrees with an independent normal-equations
//    solve, and interpolates exactly when the augmented system is square.

std::string check_ridge_oracle() {
    std::string why;
    SeededRng rng(41);
    const double lambdas[] = {0.0, 0.1, 10.0};
    for (int t = 0; t < 20; ++t) {
        const Eigen::MatrixXd x = normal_matrix<double>(rng, 50, 8);
        const Eigen::MatrixXd y = normal_matrix<double>(rng, 50, 8);
        const double lambda = lambdas[t % 3];
        const TrainedMapper m = fit_affine_ridge(x, y, lambda);
        const double gap = (m.affine - ridge_oracle(x, y, lambda)).cwiseAbs().maxCoeff();
        expect(gap <= 1e-6,
               "ridge solution off the oracle by " + std::to_string(gap) + " at lambda " +
                   std::to_string(lambda),
               why);
    }
    for (int t = 0; t < 5; ++t) {
        const Eigen::MatrixXd x = normal_matrix<double>(rng, 9, 8);  // square once augmented
        const Eigen::MatrixXd y = normal_matrix<double>(rng, 9, 8);
        const TrainedMapper m = fit_affine_ridge(x, y, 0.0);
        const double resid = (m.apply_batch(x) - y).cwiseAbs().maxCoeff();
        expect(resid <= 1e-8, "unregularized square system left residual " + std::to_string(resid),
               why);
    }
    return why;
}

// ---------------------------------------------------------------------------
// 3. Probe steering directions match central finite differences of the
//    target logit, and recover a planted class axis at the mean activation.

std::string check_probe_gradients() {
    std::string why;
    const int d = 8;
    SeededRng rng(7);
    Eigen::VectorXd axis = normal_vector<double>(rng, d);
    axis.normalize();
    const Eigen::MatrixXd x = normal_matrix<double>(rng, 400, d);
    std::vector<int> labels;
    for (int i = 0; i < x.rows(); ++i) labels.push_back(x.row(i).dot(axis) > 0.0 ? 1 : 0);

    const ProbeHyperparams hp;  // hidden 16, 400 steps, lr 1e-2, seed 0
    const ProbeParams probe = train_probe_core(x, labels, hp);
    expect(probe.final_train_accuracy >= 0.9,
           "probe accuracy only " + std::to_string(probe.final_train_accuracy), why);

    SeededRng point_rng(8);
    const double eps = 1e-3;
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const Eigen::VectorXd h = normal_vector<double>(point_rng, d);
        const Eigen::VectorXd dir = kst_direction(probe, h, 1);
        Eigen::VectorXd fd(d);
        for (int j = 0; j < d; ++j) {
            Eigen::VectorXd hi = h, lo = h;
            hi[j] += eps;
            lo[j] -= eps;
            fd[j] = (probe_logits(probe, hi)[1] - probe_logits(probe, lo)[1]) / (2.0 * eps);
        }
        worst = std::max(worst, (dir - fd / fd.norm()).norm());
    }
    expect(worst <= 1e-3, "finite-difference gap " + std::to_string(worst), why);

    const Eigen::VectorXd mean = x.colwise().mean();
    const double cosine = kst_direction(probe, mean, 1).dot(axis);
    expect(cosine >= 0.95, "axis cosine only " + std::to_string(cosine), why);
    return why;
}

// ---------------------------------------------------------------------------
// 4. Low-rank representation edits keep orthonormal rows, confine their
//    offsets to the learned subspace, reach the least-squares solution at
//    full rank, and push held-out generations toward a planted concept.

std::string check_low_rank_edits() {
    std::string why;

    {
        SeededRng rng(19);
        const Eigen::MatrixXd src = normal_matrix<double>(rng, 300, 8);
        const Eigen::MatrixXd map = normal_matrix<double>(rng, 8, 8);
        Eigen::MatrixXd dst = src * map.transpose();
        dst.rowwise() += normal_vector<double>(rng, 8).transpose();

        LoReftHyperparams hp;
        hp.steps = 800;
        hp.learning_rate = 5e-3;
        const LoReftParams p = fit_loreft(src, dst, 2, hp);

        const double orth =
            (p.r * p.r.transpose() - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff();
        expect(orth <= 1e-5, "row orthonormality off by " + std::to_string(orth), why);

        SeededRng probe_rng(20);
        for (int trial = 0; trial < 100; ++trial) {
            const Eigen::VectorXd h = normal_vector<double>(probe_rng, 8);
            const Eigen::VectorXd res = loreft_apply(p, h) - h;
            const double escape = (res - p.r.transpose() * (p.r * res)).norm();
            expect(escape <= 1e-5 * std::max(1.0, res.norm()),
                   "offset escaped the subspace by " + std::to_string(escape), why);
        }
    }

    {
        SeededRng rng(11);
        const int d = 6, n = 400;
        const Eigen::MatrixXd x = normal_matrix<double>(rng, n, d);
        const Eigen::MatrixXd a = normal_matrix<double>(rng, d, d);
        const Eigen::VectorXd c = normal_vector<double>(rng, d);
        Eigen::MatrixXd y = x * a.transpose() + 0.01 * normal_matrix<double>(rng, n, d);
        y.rowwise() += c.transpose();

        LoReftHyperparams hp;
        hp.steps = 2000;
        hp.learning_rate = 5e-3;
        const LoReftParams p = fit_loreft(x, y, d, hp);
        const Eigen::MatrixXd beta = ridge_oracle(x, y, 0.0);

        SeededRng point_rng(12);
        double worst = 0.0;
        for (int trial = 0; trial < 100; ++trial) {
            const Eigen::VectorXd h = normal_vector<double>(point_rng, d);
            const Eigen::VectorXd ls = beta.topRows(d).transpose() * h + beta.row(d).transpose();
            worst = std::max(worst, (loreft_apply(p, h) - ls).cwiseAbs().maxCoeff());
        }
        expect(worst <= 1e-2, "full-rank fit off least squares by " + std::to_string(worst), why);
    }

    {
        ToyDiffusionAdapter adapter = make_fixture();
        const FixtureEmbedder embedder;
        const std::vector<std::string> fillers = {
            "barn",    "river",   "mountain", "harbor",     "forest",   "desert",
            "garden",  "bridge",  "castle",   "valley",     "island",   "meadow",
            "lantern", "market",  "tower",    "canyon",     "glacier",  "orchard",
            "village", "lighthouse", "windmill", "waterfall", "prairie", "cottage"};
        std::vector<std::pair<Prompt, Prompt>> pairs;
        for (int i = 0; i < 16; ++i)
            pairs.push_back({adapter.make_prompt("c" + std::to_string(i),
                                                 "a photo of a sunflower " + fillers[i]),
                             adapter.make_prompt("p" + std::to_string(i),
                                                 "a photo of a " + fillers[i])});
        const std::vector<HookSite> sites = {site_all("denoiser.down.0.cross_attn"),
                                             site_all("denoiser.mid.cross_attn"),
                                             site_all("denoiser.up.1.cross_attn")};
        LoReftHyperparams hp;
        hp.steps = 2000;
        hp.learning_rate = 5e-3;
        const LoReftParams params = train_loreft(adapter, pairs, sites, 4, hp);
        expect(params.final_loss < params.initial_loss, "concept fit failed to reduce loss", why);

        int moved = 0, total = 0;
        for (size_t i = 16; i < fillers.size(); ++i) {
            const std::string concept_text = "a photo of a sunflower " + fillers[i];
            const Prompt plain = adapter.make_prompt("h" + std::to_string(i),
                                                     "a photo of a " + fillers[i]);
            const Prompt with_concept = adapter.make_prompt("hc" + std::to_string(i), concept_text);
            const uint64_t seed = 7;
            const std::vector<int> tokens = adapter.tokenize(concept_text);
            const double base =
                alignment_score(embedder, generate(adapter, plain, seed).image, tokens);
            const double target =
                alignment_score(embedder, generate(adapter, with_concept, seed).image, tokens);
            const double steered = alignment_score(
                embedder, apply_steering(adapter, plain, seed, params, 1.0), tokens);
            ++total;
            if (target > base ? steered > base : steered < base) ++moved;
        }
        expect(5 * moved >= 4 * total,  // at least 80 percent of held-out prompts
               "only " + std::to_string(moved) + "/" + std::to_string(total) +
                   " held-out prompts moved toward the concept",
               why);
    }
    return why;
}

// ---------------------------------------------------------------------------
// 5. Top-k autoencoders: exact sparsity on random inputs, unit decoder
//    columns after any training length, recovery of a planted dictionary,
//    and a dead-feature rate that matches a brute-force recount.

std::string check_sparse_autoencoders() {
    std::string why;

    const SAEBundle rb = random_bundle(16, 48, 6, 13);
    SeededRng rng(14);
    for (int trial = 0; trial < 1000; ++trial) {
        const Eigen::VectorXd x = normal_vector<double>(rng, 16, 1.0);
        const Eigen::VectorXd pre = rb.w_enc * (x - rb.b_dec) + rb.b_enc;
        int positive = 0;
        for (int j = 0; j < rb.m; ++j)
            if (pre[j] > 0.0) ++positive;
        const Eigen::VectorXd z = sae_encode(rb, x);
        int nonzero = 0;
        bool values_ok = true;
        for (int j = 0; j < rb.m; ++j)
            if (z[j] != 0.0) {
                ++nonzero;
                values_ok = values_ok && z[j] == pre[j];
            }
        expect(nonzero == std::min(rb.k, positive), "code is not exactly k-sparse", why);
        expect(values_ok, "kept coefficients differ from the pre-activations", why);
    }

    const PlantedData small = planted_data(4, 8, 2, 256, 29);
    for (int steps : {1, 2, 25}) {
        SAEHyperparams hp;
        hp.steps = steps;
        VectorSampleStream stream(small.samples);
        const SAEBundle b = train_sae(stream, 4, 8, 2, hp);
        for (int j = 0; j < b.m; ++j)
            expect(std::fabs(b.w_dec.col(j).norm() - 1.0) <= 1e-10,
                   "decoder column drifted off unit norm after " + std::to_string(steps) +
                       " steps",
                   why);
    }

    const PlantedData data = planted_data(8, 16, 2, 4096, 21);
    SAEHyperparams hp;
    hp.steps = 8000;
    hp.batch_size = 64;
    hp.learning_rate = 1e-3;
    hp.seed = 3;
    VectorSampleStream stream(data.samples);
    const SAEBundle b = train_sae(stream, 8, 16, 2, hp);
    const double rel = relative_mse(data.samples, b);
    expect(rel <= 0.1, "planted dictionary recovered at relative error " + std::to_string(rel),
           why);

    const PlantedData tail = planted_data(4, 16, 1, 20, 31);
    SAEHyperparams tail_hp;
    tail_hp.steps = 50;
    tail_hp.dead_window = 7;
    VectorSampleStream tail_stream(tail.samples);
    const SAEBundle tb = train_sae(tail_stream, 4, 16, 1, tail_hp);
    std::vector<bool> alive(16, false);
    const int n = static_cast<int>(tail.samples.size());
    const int window = std::min(tail_hp.dead_window, n);
    for (int i = n - window; i < n; ++i) {
        const Eigen::VectorXd z = sae_encode(tb, tail.samples[i].x.cast<double>());
        for (int j = 0; j < 16; ++j)
            if (z[j] != 0.0) alive[j] = true;
    }
    int dead = 0;
    for (int j = 0; j < 16; ++j)
        if (!alive[j]) ++dead;
    expect(tb.stats.dead_feature_rate == static_cast<double>(dead) / 16.0,
           "dead-feature rate disagrees with the recount", why);
    return why;
}

// ---------------------------------------------------------------------------
// 6. Image metrics: structural similarity is exactly 1 on itself, the
//    distribution distance vanishes on identical statistics and reduces to
//    (sigma1 - sigma2)^2 in one dimension, alignment ignores image rescaling,
//    and every metric is bitwise deterministic.

std::string check_metric_identities() {
    std::string why;
    const FixtureEmbedder embedder;
    SeededRng rng(3);
    auto random_image = [&rng]() {
        Tensor img = Tensor::zeros({3, 8, 8});
        for (auto& v : img.data) v = static_cast<float>(rng.uniform() * 2.0 - 1.0);
        return img;
    };

    const Tensor a = random_image();
    const Tensor b = random_image();
    const Tensor c = random_image();
    for (const Tensor& img : {a, b, c})
        expect(ssim(img, img) == 1.0, "self-similarity is not exactly 1", why);
    expect(ssim(a, b) == ssim(b, a), "structural similarity is not symmetric", why);
    expect(perceptual_distance(embedder, a, a) == 0.0, "self perceptual distance nonzero", why);

    const Eigen::MatrixXd rows = normal_matrix<double>(rng, 40, 6);
    const FeatureStats stats = feature_stats(rows);
    expect(frechet_distance(stats, stats) <= 1e-8, "self distribution distance above 1e-8", why);

    FeatureStats g1, g2;
    g1.mu = Eigen::VectorXd::Constant(1, 0.3);
    g1.sigma = Eigen::MatrixXd::Constant(1, 1, 0.8 * 0.8);
    g1.n = 10;
    g2.mu = Eigen::VectorXd::Constant(1, 0.3);
    g2.sigma = Eigen::MatrixXd::Constant(1, 1, 1.5 * 1.5);
    g2.n = 10;
    const double scalar_gap = std::fabs(frechet_distance(g1, g2) - (0.8 - 1.5) * (0.8 - 1.5));
    expect(scalar_gap <= 1e-8, "scalar distribution distance off by " + std::to_string(scalar_gap),
           why);

    // Power-of-two pixel scaling is exact in float, so alignment must not
    // move at all; a non-binary factor only adds input rounding noise.
    const std::vector<int> tokens = {3, 17, 42, 7, 0, 0, 0, 0};
    Tensor doubled = a;
    for (auto& v : doubled.data) v *= 2.0f;
    expect(alignment_score(embedder, doubled, tokens) == alignment_score(embedder, a, tokens),
           "alignment moved under exact power-of-two rescaling", why);
    Tensor tripled = a;
    for (auto& v : tripled.data) v *= 3.0f;
    const double rescale_gap =
        std::fabs(alignment_score(embedder, tripled, tokens) - alignment_score(embedder, a, tokens));
    expect(rescale_gap <= 1e-6, "alignment moved under rescaling by " + std::to_string(rescale_gap),
           why);

    expect(alignment_score(embedder, a, tokens) == alignment_score(embedder, a, tokens),
           "alignment is not deterministic", why);
    expect(ssim(a, b) == ssim(a, b), "structural similarity is not deterministic", why);
    expect(frechet_distance(stats, feature_stats(rows)) ==
               frechet_distance(stats, feature_stats(rows)),
           "distribution distance is not deterministic", why);
    expect(perceptual_distance(embedder, a, b) == perceptual_distance(embedder, a, b),
           "perceptual distance is not deterministic", why);
    const DiversitySummary d1 = diversity_summary(embedder, {a, b, c});
    const DiversitySummary d2 = diversity_summary(embedder, {a, b, c});
    expect(d1.mean_pairwise_distance == d2.mean_pairwise_distance &&
               d1.embedding_trace_variance == d2.embedding_trace_variance,
           "diversity summary is not deterministic", why);
    return why;
}

// ---------------------------------------------------------------------------
// 7. Cross-model transport: affine transfer ignores the anchor exactly,
//    trained nonlinear mappers beat their own frozen initialization across
//    seeds, and site-compatibility grids are diagonal-minimal on twins.

std::string check_mapper_transport() {
    std::string why;

    {
        SeededRng rng(23);
        const Eigen::MatrixXd x = normal_matrix<double>(rng, 60, 8);
        const Eigen::MatrixXd y = normal_matrix<double>(rng, 60, 8);
        const TrainedMapper mapper = fit_affine_ridge(x, y, 0.1);
        SteeringVector v;
        v.site = site_all("denoiser.mid.cross_attn");
        v.direction = normal_vector<float>(rng, 8);
        const Eigen::VectorXf anchor1 = normal_vector<float>(rng, 8);
        const Eigen::VectorXf anchor2 = 100.0f * normal_vector<float>(rng, 8);
        const SteeringVector t1 = transfer_steering(v, mapper, anchor1);
        const SteeringVector t2 = transfer_steering(v, mapper, anchor2);
        expect((t1.direction.array() == t2.direction.array()).all(),
               "affine transfer depends on the anchor", why);
    }

    for (uint64_t seed = 0; seed < 3; ++seed) {
        TempDir tmp;
        SeededRng rng(100 + seed);
        const int p = 6, q = 4, n = 200;
        const Eigen::MatrixXd x = normal_matrix<double>(rng, n, p);
        const Eigen::MatrixXd a = normal_matrix<double>(rng, q, p);
        const Eigen::MatrixXd y =
            x * a.transpose() + 0.05 * normal_matrix<double>(rng, n, q);
        const ActivationFile src = rows_to_file(x, tmp.file("src.dract"));
        const ActivationFile tgt = rows_to_file(y, tmp.file("tgt.dract"));

        MapperSpec spec;
        spec.family = MapperFamily::mlp;
        spec.input_dim = p;
        spec.output_dim = q;
        spec.hidden_dim = 16;
        spec.hp.steps = 1500;
        spec.hp.learning_rate = 3e-3;
        spec.hp.batch_size = 32;
        spec.hp.seed = seed;
        PairedBatchIterator pairs(src, tgt, spec.hp.batch_size, spec.hp.seed);
        const TrainedMapper trained = train_mlp_mapper(pairs, spec);

        MapperSpec frozen_spec = spec;
        frozen_spec.hp.steps = 0;
        PairedBatchIterator frozen_pairs(src, tgt, frozen_spec.hp.batch_size,
                                         frozen_spec.hp.seed);
        const TrainedMapper frozen = train_mlp_mapper(frozen_pairs, frozen_spec);

        Eigen::MatrixXd xv(trained.val_indices.size(), p), yv(trained.val_indices.size(), q);
        for (size_t i = 0; i < trained.val_indices.size(); ++i) {
            xv.row(static_cast<Eigen::Index>(i)) = x.row(trained.val_indices[i]);
            yv.row(static_cast<Eigen::Index>(i)) = y.row(trained.val_indices[i]);
        }
        const double untouched = mapper_mse(frozen, xv, yv);
        expect(trained.final_val_loss < untouched,
               "seed " + std::to_string(seed) + ": training did not beat its init", why);
    }

    {
        ToyDiffusionAdapter a = make_fixture();
        ToyDiffusionAdapter b = make_fixture();
        std::vector<Prompt> prompts;
        for (int i = 0; i < 8; ++i)
            prompts.push_back(a.make_prompt("p" + std::to_string(i), "view " + std::to_string(i)));
        const std::vector<HookSite> sites = {site_all("denoiser.down.0"),
                                             site_all("denoiser.mid"), site_all("denoiser.up.1")};
        MapperSpec spec;
        spec.family = MapperFamily::affine_ridge;
        spec.lambda = 0.1;
        const CompatibilityHeatmap heat = compatibility_sweep(a, b, sites, sites, prompts, spec);
        for (int i = 0; i < heat.val_loss.rows(); ++i)
            for (int j = 0; j < heat.val_loss.cols(); ++j)
                if (i != j)
                    expect(heat.val_loss(i, i) < heat.val_loss(i, j),
                           "grid row " + std::to_string(i) + " is not diagonal-minimal", why);
    }
    return why;
}

// ---------------------------------------------------------------------------
// 8. Reruns of one config are byte-identical, every identity-bearing config
//    field moves the fingerprint, and a sweep aggregates into one report
//    with a row per coordinate.

std::string check_reproducibility() {
    std::string why;

    {
        TempDir root;
        const ExperimentConfig cfg = make_config(steer_doc());
        const RunReport rep = run_job(cfg, root.path);
        const std::filesystem::path summary =
            root.path / RunFingerprint{rep.fingerprint}.short_id() / "summary.json";
        const std::string first = slurp(summary);
        run_job(cfg, root.path);
        expect(!first.empty() && slurp(summary) == first,
               "rerunning the same config changed summary.json", why);
    }

    {
        const std::vector<std::string> overrides = {
            "seed=17",
            "model.weight_seed=5",
            "model.num_steps=3",
            "model.revision=rev2",
            "model.target_weight_seed=7",
            "dataset.name=alt-prompts",
            "dataset.version=v2",
            "dataset.split_seed=4",
            "method.strength=1.5",
            "metrics=[\"ssim\"]"};
        std::set<std::string> prints;
        prints.insert(fingerprint_config(make_config(steer_doc()).resolved).hex);
        for (const std::string& o : overrides)
            prints.insert(fingerprint_config(make_config(steer_doc(), {o}).resolved).hex);
        expect(prints.size() == overrides.size() + 1,
               "only " + std::to_string(prints.size()) + " distinct fingerprints from " +
                   std::to_string(overrides.size() + 1) + " configs",
               why);
    }

    {
        TempDir root;
        json doc = steer_doc();
        doc["sweep"] = {{"method.strength", {0.0, 0.5, 1.0, 2.0}}};
        const RunReport agg = run_multirun(make_config(std::move(doc)), root.path);
        expect(agg.tables.at("runs").size() == 4, "sweep did not yield four run rows", why);
        expect(agg.tables.at("by_coordinate").size() == 4,
               "sweep did not yield four coordinate rows", why);
        std::set<std::string> coords;
        for (const json& row : agg.tables.at("runs"))
            coords.insert(canonical_dump(row.at("coordinate")));
        expect(coords.size() == 4, "sweep coordinates are not distinct", why);
        expect(std::filesystem::exists(root.path /
                                       ("aggregate-" + agg.fingerprint.substr(0, 16)) /
                                       "report/aggregate.json"),
               "combined report missing", why);
    }
    return why;
}

// ---------------------------------------------------------------------------
// 9. Localization: a head made causally inert by weight surgery shows zero
//    influence and ranks below every live site, and unit scaling registers
//    no influence anywhere.

std::string check_localization_ranks() {
    std::string why;
    const FixtureEmbedder embedder;

    {
        ToyDiffusionAdapter adapter = make_fixture();
        LocalizationPlan plan;
        plan.kind = LocalizationPlan::Kind::scale;
        plan.strength = 1.0;
        plan.sites = {site_all("denoiser.down.0"), site_all("denoiser.mid.cross_attn")};
        plan.schedules = {TimestepSchedule::all(4)};
        plan.prompts = {adapter.make_prompt("p0", "a red barn"),
                        adapter.make_prompt("p1", "a blue harbor")};
        plan.metrics = {"alignment", "ssim", "perceptual"};
        plan.seed = 5;
        const InfluenceReport report = run_localization(adapter, plan, embedder);
        for (const InfluenceEntry& e : report.entries)
            for (const std::string& m : plan.metrics) {
                expect(e.delta_mean.at(m) == 0.0, "scale(1.0) shows influence at " + e.site, why);
                expect(e.delta_std.at(m) == 0.0, "scale(1.0) shows spread at " + e.site, why);
            }
    }

    {
        ToyDiffusionAdapter adapter = make_fixture();
        adapter.zero_attention_head("denoiser.mid", 1);
        LocalizationPlan plan;
        plan.kind = LocalizationPlan::Kind::zero;
        plan.sites = {site_all("denoiser.mid.cross_attn#0"), site_all("denoiser.mid.cross_attn#1"),
                      site_all("denoiser.down.0"), site_all("denoiser.up.1")};
        plan.schedules = {TimestepSchedule::all(4)};
        plan.prompts = {adapter.make_prompt("p0", "a red barn"),
                        adapter.make_prompt("p1", "a blue harbor")};
        plan.metrics = {"alignment", "ssim", "perceptual"};
        plan.seed = 5;
        const InfluenceReport report = run_localization(adapter, plan, embedder);
        expect(report.entries.size() == 4, "unexpected entry count", why);
        for (const InfluenceEntry& e : report.entries) {
            if (e.site == "denoiser.mid.cross_attn#1") {
                expect(e.rank == static_cast<int>(report.entries.size()),
                       "dead head did not rank last", why);
                for (const std::string& m : plan.metrics)
                    expect(e.delta_mean.at(m) == 0.0, "dead head shows influence on " + m, why);
            } else {
                expect(std::fabs(e.delta_mean.at("alignment")) > 0.0,
                       "live site " + e.site + " shows no influence", why);
            }
        }
    }
    return why;
}

}  // namespace

int main() {
    struct Check {
        int id;
        const char* label;
        std::function<std::string()> body;
    };
    const std::vector<Check> checks = {
        {1, "null interventions reproduce baselines bit-for-bit", check_null_interventions},
        {2, "closed-form ridge matches the normal-equations oracle", check_ridge_oracle},
        {3, "probe gradients pass finite-difference and axis-recovery checks",
         check_probe_gradients},
        {4, "low-rank edits stay in-subspace and steer held-out prompts", check_low_rank_edits},
        {5, "top-k autoencoders keep exact sparsity and recover a planted dictionary",
         check_sparse_autoencoders},
        {6, "image metrics satisfy their self-identities deterministically",
         check_metric_identities},
        {7, "mapper transport is anchor-invariant and beats its init", check_mapper_transport},
        {8, "runs are byte-reproducible with distinguishing fingerprints",
         check_reproducibility},
        {9, "localization ranks a weight-dead head last", check_localization_ranks},
    };

    int failures = 0;
    std::printf("acceptance: %zu checks\n", checks.size());
    for (const Check& c : checks) {
        const auto t0 = std::chrono::steady_clock::now();
        std::string why;
        try {
            why = c.body();
        } catch (const std::exception& e) {
            why = std::string("unexpected exception: ") + e.what();
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (why.empty()) {
            std::printf("PASS %d %s (%.2fs)\n", c.id, c.label, secs);
        } else {
            std::printf("FAIL %d %s: %s\n", c.id, c.label, why.c_str());
            ++failures;
        }
    }
    std::printf("acceptance: %d/%zu passed\n",
                static_cast<int>(checks.size()) - failures, checks.size());
    return failures;
}
