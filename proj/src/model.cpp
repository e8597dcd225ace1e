// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#include "dreamreader/model.hpp"

#include <algorithm>
#include <cmath>

#include "dreamreader/rng.hpp"

namespace dreamreader {

const char* intervention_kind_name(const InterventionOp& op) {
    struct Visitor {
        const char* operator()(const ScaleEdit&) const { return "scale"; }
        const char* operator()(const ZeroEdit&) const { return "zero"; }
        const char* operator()(const CorruptEdit&) const { return "corrupt"; }
        const char* operator()(const ReplaceEdit&) const { return "replace"; }
        const char* operator()(const AddDirectionEdit&) const { return "add_direction"; }
        const char* operator()(const KSteerEdit&) const { return "ksteer"; }
        const char* operator()(const LoReftEdit&) const { return "loreft"; }
        const char* operator()(const SaeEdit&) const { return "sae_edit"; }
    };
    return std::visit(Visitor{}, op);
}

InterventionSpec sae_edit_intervention(SAEBundle bundle, std::vector<FeatureEdit> edits,
                                       HookSite site) {
    for (const FeatureEdit& e : edits)
        require(e.index >= 0 && e.index < bundle.m, Errc::index_out_of_range,
                "feature edit index " + std::to_string(e.index) + " outside [0, " +
                    std::to_string(bundle.m) + ")");
    InterventionSpec spec;
    spec.site = std::move(site);
    spec.op = SaeEdit{std::move(bundle), std::move(edits)};
    return spec;
}

const ModuleNode& resolve_site(const DiffusionAdapter& adapter, const std::string& path) {
    for (const ModuleNode& m : adapter.modules())
        if (m.path == path) return m;
    fail(Errc::unknown_path, "no submodule at path '" + path + "' in model '" +
                                 adapter.model_id() + "'");
}

void validate_site(const DiffusionAdapter& adapter, const HookSite& site) {
    const ModuleNode& node = resolve_site(adapter, site.path);
    if (site.role == TensorRole::input)
        require(!node.input_shape.empty(), Errc::invalid_intervention,
                "module '" + site.path + "' has no float input tensor (input-role hook invalid)");
    if (site.head_index) {
        require(site.role == TensorRole::output, Errc::invalid_intervention,
                "head_index is only valid on output-role hooks: " + site.display());
        require(node.num_heads > 0, Errc::invalid_intervention,
                "module '" + site.path + "' has no head axis");
        require(*site.head_index >= 0 && *site.head_index < node.num_heads,
                Errc::invalid_intervention,
                "head index " + std::to_string(*site.head_index) + " >= num_heads " +
                    std::to_string(node.num_heads) + " at '" + site.path + "'");
    }
    site.schedule.validate(adapter.num_steps());
}

std::vector<int> site_capture_shape(const DiffusionAdapter& adapter, const HookSite& site) {
    validate_site(adapter, site);
    const ModuleNode& node = resolve_site(adapter, site.path);
    if (site.role == TensorRole::input) return node.input_shape;
    if (site.head_index)
        return std::vector<int>(node.output_shape.begin() + 1, node.output_shape.end());
    return node.output_shape;
}

int site_feature_axis(const DiffusionAdapter& adapter, const HookSite& site) {
    const ModuleNode& node = resolve_site(adapter, site.path);
    if (site.role == TensorRole::input) return node.input_feature_axis;
    if (site.head_index) return static_cast<int>(node.output_shape.size()) - 2;
    return node.output_feature_axis;
}

GenerateResult generate(DiffusionAdapter& adapter, const Prompt& prompt, uint64_t seed,
                        const std::vector<InterventionSpec>& edits) {
    return adapter.run(prompt, seed, edits, {});
}

std::vector<ActivationRecord> capture(DiffusionAdapter& adapter,
                                      const std::vector<Prompt>& prompts, uint64_t seed,
                                      const std::vector<HookSite>& sites) {
    std::vector<ActivationRecord> all;
    for (const Prompt& p : prompts) {
        GenerateResult r = adapter.run(p, seed, {}, sites);
        for (auto& rec : r.trace) all.push_back(std::move(rec));
    }
    return all;
}

// ---------------------------------------------------------------------------

void apply_op(const InterventionOp& op, const std::string& site_path, int timestep,
              int feature_axis, Tensor& h) {
    struct Visitor {
        const std::string& path;
        int t;
        int axis;
        Tensor& h;

        void operator()(const ScaleEdit& e) const {
            const float a = static_cast<float>(e.strength);
            for (float& v : h.data) v = a * v;
        }
        void operator()(const ZeroEdit&) const {
            std::fill(h.data.begin(), h.data.end(), 0.0f);
        }
        void operator()(const CorruptEdit& e) const {
            // Population std over all entries sets the noise scale.
            double mean = 0.0;
            for (float v : h.data) mean += v;
            mean /= static_cast<double>(h.data.size());
            double var = 0.0;
            for (float v : h.data) var += (v - mean) * (v - mean);
            var /= static_cast<double>(h.data.size());
            const double sigma = e.strength * std::sqrt(var);
            SeededRng rng(mix_seed(e.noise_seed, path, t));
            for (float& v : h.data) v += static_cast<float>(sigma * rng.normal());
        }
        void operator()(const ReplaceEdit& e) const {
            auto it = e.donor_by_timestep.find(t);
            require(it != e.donor_by_timestep.end(), Errc::missing_donor,
                    "replace at '" + path + "' has no donor for timestep " + std::to_string(t));
            require(it->second.same_shape(h), Errc::shape_mismatch,
                    "replace donor shape " + shape_str(it->second.shape) +
                        " != site shape " + shape_str(h.shape) + " at '" + path + "'");
            h.data = it->second.data;
        }
        void operator()(const AddDirectionEdit& e) const {
            add_direction_broadcast(h, axis, e.direction, static_cast<float>(e.strength));
        }
        void operator()(const KSteerEdit& e) const {
            Eigen::VectorXf dir;
            if (e.fixed) {
                dir = e.fixed_direction;
                require(dir.size() == h.shape[static_cast<size_t>(axis)], Errc::dim_mismatch,
                        "fixed K-Steer direction dim mismatch at '" + path + "'");
            } else {
                Eigen::VectorXd hv = mean_feature_vector(h, axis).cast<double>();
                dir = kst_direction(e.probe, hv, e.target_class).cast<float>();
            }
            add_direction_broadcast(h, axis, dir, static_cast<float>(e.strength));
        }
        void operator()(const LoReftEdit& e) const {
            Eigen::MatrixXf rows = gather_feature_vectors(h, axis);
            require(rows.cols() == e.params.dim(), Errc::dim_mismatch,
                    "LoReFT dim " + std::to_string(e.params.dim()) + " vs feature dim " +
                        std::to_string(rows.cols()) + " at '" + path + "'");
            for (Eigen::Index i = 0; i < rows.rows(); ++i) {
                Eigen::VectorXd hv = rows.row(i).transpose().cast<double>();
                Eigen::VectorXd phi = loreft_apply(e.params, hv);
                Eigen::VectorXd out = hv + e.strength * (phi - hv);
                rows.row(i) = out.cast<float>().transpose();
            }
            scatter_feature_vectors(h, axis, rows);
        }
        void operator()(const SaeEdit& e) const {
            Eigen::MatrixXf rows = gather_feature_vectors(h, axis);
            require(rows.cols() == e.bundle.d, Errc::dim_mismatch,
                    "SAE d " + std::to_string(e.bundle.d) + " vs feature dim " +
                        std::to_string(rows.cols()) + " at '" + path + "'");
            for (Eigen::Index i = 0; i < rows.rows(); ++i) {
                Eigen::VectorXd xv = rows.row(i).transpose().cast<double>();
                rows.row(i) = sae_edit_apply(e.bundle, e.edits, xv).cast<float>().transpose();
            }
            scatter_feature_vectors(h, axis, rows);
        }
    };
    std::visit(Visitor{site_path, timestep, feature_axis, h}, op);
}

HookContext::HookContext(const DiffusionAdapter& adapter,
                         const std::vector<InterventionSpec>& edits,
                         const std::vector<HookSite>& captures, std::string prompt_id,
                         uint64_t seed)
    : edits_(edits), captures_(captures), prompt_id_(std::move(prompt_id)), seed_(seed) {
    for (const InterventionSpec& e : edits_) validate_site(adapter, e.site);
    for (const HookSite& c : captures_) validate_site(adapter, c);
}

void HookContext::tap(const ModuleNode& node, TensorRole role, int timestep, Tensor& h) {
    const int axis = role == TensorRole::output ? node.output_feature_axis
                                                : node.input_feature_axis;
    for (const InterventionSpec& e : edits_) {
        const HookSite& s = e.site;
        if (s.path != node.path || s.role != role || !s.schedule.contains(timestep)) continue;
        if (s.head_index) {
            Tensor head = slice_axis0(h, *s.head_index);
            // Sliced head tensor (positions, d_head): feature axis is last.
            apply_op(e.op, s.display(), timestep, head.rank() - 1, head);
            assign_axis0(h, *s.head_index, head);
        } else {
            apply_op(e.op, s.display(), timestep, axis, h);
        }
    }
    for (size_t i = 0; i < captures_.size(); ++i) {
        const HookSite& s = captures_[i];
        if (s.path != node.path || s.role != role || !s.schedule.contains(timestep)) continue;
        ActivationRecord rec;
        rec.site = s;
        rec.timestep = timestep;
        rec.value = s.head_index ? slice_axis0(h, *s.head_index) : h;
        rec.prompt_id = prompt_id_;
        rec.seed = seed_;
        records_.emplace_back(i, std::move(rec));
    }
}

std::vector<ActivationRecord> HookContext::take_records() {
    std::stable_sort(records_.begin(), records_.end(),
                     [](const auto& a, const auto& b) {
                         if (a.first != b.first) return a.first < b.first;
                         return a.second.timestep < b.second.timestep;
                     });
    std::vector<ActivationRecord> out;
    out.reserve(records_.size());
    for (auto& [idx, rec] : records_) out.push_back(std::move(rec));
    records_.clear();
    return out;
}

}  // namespace dreamreader
