// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#include "dreamreader/stitching.hpp"

#include <algorithm>

#include "dreamreader/activation_store.hpp"
#include "dreamreader/rng.hpp"

namespace dreamreader {

namespace {
int64_t prod(const std::vector<int>& shape) {
    int64_t p = 1;
    for (int s : shape) p *= s;
    return p;
}
}  // namespace

Tensor stitch_generate(DiffusionAdapter& adapter_a, DiffusionAdapter& adapter_b,
                       const TrainedMapper& mapper, const HookSite& site_a,
                       const HookSite& site_b, const Prompt& prompt, uint64_t seed) {
    const std::vector<int> shape_a = site_capture_shape(adapter_a, site_a);
    const std::vector<int> shape_b = site_capture_shape(adapter_b, site_b);
    require(prod(shape_a) == mapper.spec.input_dim, Errc::dim_mismatch,
            "stitch: site_a " + shape_str(shape_a) + " flattens to " +
                std::to_string(prod(shape_a)) + ", mapper expects " +
                std::to_string(mapper.spec.input_dim));
    require(prod(shape_b) == mapper.spec.output_dim, Errc::dim_mismatch,
            "stitch: site_b " + shape_str(shape_b) + " flattens to " +
                std::to_string(prod(shape_b)) + ", mapper emits " +
                std::to_string(mapper.spec.output_dim));

    GenerateResult src = adapter_a.run(prompt, seed, {}, {site_a});

    ReplaceEdit replace;
    for (const ActivationRecord& rec : src.trace) {
        Eigen::VectorXd mapped = mapper.apply(rec.value.as_vector().cast<double>());
        Tensor donor;
        donor.shape = shape_b;
        donor.data.resize(static_cast<size_t>(mapped.size()));
        for (Eigen::Index i = 0; i < mapped.size(); ++i)
            donor.data[static_cast<size_t>(i)] = static_cast<float>(mapped[i]);
        replace.donor_by_timestep[rec.timestep] = std::move(donor);
    }
    // Inject on site_b's own schedule; the donor for each scheduled timestep
    // must exist (same-length schedules), else MissingDonor surfaces.
    std::vector<InterventionSpec> edits{{site_b, std::move(replace)}};
    return generate(adapter_b, prompt, seed, edits).image;
}

SteeringVector transfer_steering(const SteeringVector& vector, const TrainedMapper& mapper,
                                 const Eigen::VectorXf& anchor,
                                 std::optional<HookSite> target_site) {
    require(vector.direction.size() == mapper.spec.input_dim, Errc::dim_mismatch,
            "transfer: vector dim " + std::to_string(vector.direction.size()) +
                " != mapper input dim " + std::to_string(mapper.spec.input_dim));
    require(anchor.size() == mapper.spec.input_dim, Errc::dim_mismatch,
            "transfer: anchor dim " + std::to_string(anchor.size()) +
                " != mapper input dim " + std::to_string(mapper.spec.input_dim));

    // For affine families M(anchor+v) - M(anchor) == W^T v algebraically; compute
    // the linear part directly so the result is exactly anchor-independent.
    Eigen::VectorXd direction;
    switch (mapper.spec.family) {
        case MapperFamily::identity:
            direction = vector.direction.cast<double>();
            break;
        case MapperFamily::affine_ridge:
            direction = mapper.affine.topRows(mapper.spec.input_dim).transpose() *
                        vector.direction.cast<double>();
            break;
        case MapperFamily::mlp: {
            Eigen::VectorXd at_anchor = mapper.apply(anchor.cast<double>());
            Eigen::VectorXd shifted = mapper.apply(anchor.cast<double>() +
                                                   vector.direction.cast<double>());
            direction = shifted - at_anchor;
            break;
        }
    }

    SteeringVector out;
    out.site = target_site ? *target_site : vector.site;
    out.direction = direction.cast<float>();
    out.method = vector.method;
    out.norm = direction.norm();
    out.provenance = {{"transferred_from", vector.site.display()},
                      {"mapper_family", mapper_family_name(mapper.spec.family)},
                      {"source_provenance", vector.provenance}};
    return out;
}

CompatibilityHeatmap compatibility_sweep(DiffusionAdapter& adapter_a,
                                         DiffusionAdapter& adapter_b,
                                         const std::vector<HookSite>& source_sites,
                                         const std::vector<HookSite>& target_sites,
                                         const std::vector<Prompt>& prompts,
                                         const MapperSpec& spec) {
    require(!source_sites.empty() && !target_sites.empty(), Errc::empty_set,
            "compatibility_sweep: empty site list");
    require(!prompts.empty(), Errc::empty_set, "compatibility_sweep: no prompts");

    CompatibilityHeatmap heat;
    for (const HookSite& s : source_sites) heat.source_sites.push_back(s.display());
    for (const HookSite& s : target_sites) heat.target_sites.push_back(s.display());
    heat.val_loss.resize(static_cast<Eigen::Index>(source_sites.size()),
                         static_cast<Eigen::Index>(target_sites.size()));

    const uint64_t seed = spec.hp.seed;
    // Capture each side once; in-memory ActivationFiles feed the iterator.
    auto capture_side = [&](DiffusionAdapter& adapter, const HookSite& site) {
        ActivationFile f;
        f.site = site;
        f.shape = site_capture_shape(adapter, site);
        f.seed = seed;
        f.model_id = adapter.model_id();
        f.records = capture(adapter, prompts, seed, {site});
        return f;
    };
    std::vector<ActivationFile> sources, targets;
    for (const HookSite& s : source_sites) sources.push_back(capture_side(adapter_a, s));
    for (const HookSite& s : target_sites) targets.push_back(capture_side(adapter_b, s));

    for (size_t i = 0; i < sources.size(); ++i) {
        for (size_t j = 0; j < targets.size(); ++j) {
            const ActivationFile& src = sources[i];
            const ActivationFile& tgt = targets[j];

            MapperSpec cell = spec;
            cell.input_dim = static_cast<int>(prod(src.shape));
            cell.output_dim = static_cast<int>(prod(tgt.shape));
            cell.validate();

            double val = 0.0;
            if (cell.family == MapperFamily::mlp) {
                PairedBatchIterator it(src, tgt, cell.hp.batch_size,
                                       mix_seed(seed, "sweep_shuffle"));
                TrainedMapper m = train_mlp_mapper(it, cell);
                val = m.final_val_loss;
            } else {
                // Closed-form families: seeded split, fit on train, score val.
                Eigen::MatrixXd x = flattened_matrix(src).cast<double>();
                Eigen::MatrixXd y = flattened_matrix(tgt).cast<double>();
                require(x.rows() == y.rows(), Errc::count_mismatch,
                        "compatibility_sweep: capture count mismatch");
                const int64_t n = x.rows();
                SeededRng split_rng(mix_seed(seed, "sweep_split"));
                std::vector<int64_t> order = random_permutation(split_rng, n);
                int64_t n_val = std::max<int64_t>(
                    1, static_cast<int64_t>(std::llround(cell.hp.val_fraction *
                                                         static_cast<double>(n))));
                n_val = std::min(n_val, n - 1);
                if (n_val < 1) n_val = n;  // single-row degenerate case

                Eigen::MatrixXd xt(n - n_val >= 1 ? n - n_val : n, x.cols());
                Eigen::MatrixXd yt(xt.rows(), y.cols());
                Eigen::MatrixXd xv(n_val, x.cols());
                Eigen::MatrixXd yv(n_val, y.cols());
                for (int64_t k = 0; k < n_val; ++k) {
                    xv.row(k) = x.row(order[static_cast<size_t>(k)]);
                    yv.row(k) = y.row(order[static_cast<size_t>(k)]);
                }
                if (n - n_val >= 1) {
                    for (int64_t k = n_val; k < n; ++k) {
                        xt.row(k - n_val) = x.row(order[static_cast<size_t>(k)]);
                        yt.row(k - n_val) = y.row(order[static_cast<size_t>(k)]);
                    }
                } else {
                    xt = xv;
                    yt = yv;
                }

                TrainedMapper m = cell.family == MapperFamily::identity
                                      ? make_identity_mapper(cell.input_dim)
                                      : fit_affine_ridge(xt, yt, cell.lambda);
                val = mapper_mse(m, xv, yv);
            }
            heat.val_loss(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = val;
        }
    }
    return heat;
}

}  // namespace dreamreader
