// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#include "dreamreader/localization.hpp"

#include <algorithm>
#include <cmath>

namespace dreamreader {

const char* localization_kind_name(LocalizationPlan::Kind k) {
    switch (k) {
        case LocalizationPlan::Kind::scale: return "scale";
        case LocalizationPlan::Kind::zero: return "zero";
        case LocalizationPlan::Kind::corrupt: return "corrupt";
        case LocalizationPlan::Kind::replace: return "replace";
    }
    return "?";
}

void LocalizationPlan::validate(const DiffusionAdapter& adapter) const {
    require(!sites.empty(), Errc::empty_set, "localization plan has no sites");
    require(!schedules.empty(), Errc::empty_set, "localization plan has no schedules");
    require(!prompts.empty(), Errc::empty_set, "localization plan has no prompts");
    require(!metrics.empty(), Errc::empty_set, "localization plan has no metrics");
    if (kind == Kind::scale)
        require(strength >= 0.0 && strength <= 10.0, Errc::invalid_intervention,
                "scale strength " + std::to_string(strength) + " outside validated [0, 10]");
    if (kind == Kind::replace)
        require(donor != nullptr, Errc::missing_donor,
                "replace plan needs a donor activation file");
    for (const std::string& m : metrics)
        require(m == "alignment" || m == "ssim" || m == "perceptual", Errc::unknown_key,
                "localization metric '" + m +
                    "' is not per-image (use alignment/ssim/perceptual)");
    for (const HookSite& s : sites) {
        HookSite probe = s;
        for (const TimestepSchedule& sched : schedules) {
            probe.schedule = sched;
            validate_site(adapter, probe);
        }
    }
}

Tensor apply_intervention(LocalizationPlan::Kind kind, double strength, const Tensor& h,
                          const Tensor* donor, uint64_t noise_seed,
                          const std::string& site_tag, int timestep) {
    Tensor out = h;
    switch (kind) {
        case LocalizationPlan::Kind::scale:
            apply_op(ScaleEdit{strength}, site_tag, timestep, 0, out);
            break;
        case LocalizationPlan::Kind::zero:
            apply_op(ZeroEdit{}, site_tag, timestep, 0, out);
            break;
        case LocalizationPlan::Kind::corrupt:
            apply_op(CorruptEdit{strength, noise_seed}, site_tag, timestep, 0, out);
            break;
        case LocalizationPlan::Kind::replace: {
            require(donor != nullptr, Errc::missing_donor,
                    "apply_intervention: replace without donor");
            ReplaceEdit e;
            e.donor_by_timestep[timestep] = *donor;
            apply_op(e, site_tag, timestep, 0, out);
            break;
        }
    }
    return out;
}

namespace {

double metric_vs_baseline(const std::string& name, const Embedder& embedder,
                          const Tensor& baseline, const Tensor& image,
                          const std::vector<int>& tokens) {
    if (name == "alignment") return alignment_score(embedder, image, tokens);
    if (name == "ssim") return ssim(baseline, image);
    if (name == "perceptual") return perceptual_distance(embedder, baseline, image);
    fail(Errc::unknown_key, "metric '" + name + "'");
}

struct RunningStat {
    double sum = 0.0, sumsq = 0.0;
    int64_t n = 0;
    void add(double v) {
        sum += v;
        sumsq += v * v;
        ++n;
    }
    double mean() const { return sum / static_cast<double>(n); }
    double stddev() const {
        const double m = mean();
        const double var = sumsq / static_cast<double>(n) - m * m;
        return std::sqrt(std::max(var, 0.0));
    }
};

// First donor record in file order carrying the scheduled timestep.
const Tensor* donor_for_timestep(const ActivationFile& file, int t) {
    for (const ActivationRecord& r : file.records)
        if (r.timestep == t) return &r.value;
    return nullptr;
}

}  // namespace

InfluenceReport run_localization(DiffusionAdapter& adapter, const LocalizationPlan& plan,
                                 const Embedder& embedder) {
    plan.validate(adapter);

    InfluenceReport report;
    report.metrics = plan.metrics;

    // Per-prompt baselines share the run seed with every intervened run.
    std::vector<Tensor> baseline_images;
    baseline_images.reserve(plan.prompts.size());
    for (const Prompt& p : plan.prompts)
        baseline_images.push_back(generate(adapter, p, plan.seed).image);

    for (const std::string& m : plan.metrics) {
        RunningStat stat;
        for (size_t i = 0; i < plan.prompts.size(); ++i)
            stat.add(metric_vs_baseline(m, embedder, baseline_images[i], baseline_images[i],
                                        plan.prompts[i].tokens));
        report.baseline_mean[m] = stat.mean();
        report.baseline_std[m] = stat.stddev();
    }

    for (const HookSite& site : plan.sites) {
        for (const TimestepSchedule& schedule : plan.schedules) {
            HookSite bound = site;
            bound.schedule = schedule;

            InterventionSpec spec;
            spec.site = bound;
            switch (plan.kind) {
                case LocalizationPlan::Kind::scale:
                    spec.op = ScaleEdit{plan.strength};
                    break;
                case LocalizationPlan::Kind::zero:
                    spec.op = ZeroEdit{};
                    break;
                case LocalizationPlan::Kind::corrupt:
                    spec.op = CorruptEdit{plan.strength, plan.noise_seed};
                    break;
                case LocalizationPlan::Kind::replace: {
                    ReplaceEdit e;
                    for (int t : schedule.selected) {
                        const Tensor* donor = donor_for_timestep(*plan.donor, t);
                        require(donor != nullptr, Errc::missing_donor,
                                "donor file has no record for timestep " + std::to_string(t));
                        e.donor_by_timestep[t] = *donor;
                    }
                    spec.op = std::move(e);
                    break;
                }
            }

            InfluenceEntry entry;
            entry.site = bound.display();
            entry.schedule = schedule.selected;
            std::map<std::string, RunningStat> stats;
            for (size_t i = 0; i < plan.prompts.size(); ++i) {
                Tensor image = generate(adapter, plan.prompts[i], plan.seed, {spec}).image;
                for (const std::string& m : plan.metrics) {
                    const double base = metric_vs_baseline(m, embedder, baseline_images[i],
                                                           baseline_images[i],
                                                           plan.prompts[i].tokens);
                    const double now = metric_vs_baseline(m, embedder, baseline_images[i],
                                                          image, plan.prompts[i].tokens);
                    stats[m].add(now - base);
                }
            }
            for (const std::string& m : plan.metrics) {
                entry.delta_mean[m] = stats[m].mean();
                entry.delta_std[m] = stats[m].stddev();
            }
            report.entries.push_back(std::move(entry));
        }
    }

    // Rank: |mean delta of the primary metric| descending; ties by site path
    // then schedule, so the order is total and deterministic.
    const std::string& primary = plan.metrics.front();
    std::vector<size_t> idx(report.entries.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
        const double da = std::abs(report.entries[a].delta_mean.at(primary));
        const double db = std::abs(report.entries[b].delta_mean.at(primary));
        if (da != db) return da > db;
        if (report.entries[a].site != report.entries[b].site)
            return report.entries[a].site < report.entries[b].site;
        return report.entries[a].schedule < report.entries[b].schedule;
    });
    for (size_t r = 0; r < idx.size(); ++r) report.entries[idx[r]].rank = static_cast<int>(r + 1);
    std::sort(report.entries.begin(), report.entries.end(),
              [](const InfluenceEntry& a, const InfluenceEntry& b) { return a.rank < b.rank; });
    return report;
}

nlohmann::json InfluenceReport::to_json() const {
    nlohmann::json entries_json = nlohmann::json::array();
    for (const InfluenceEntry& e : entries) {
        entries_json.push_back({{"site", e.site},
                                {"schedule", e.schedule},
                                {"delta_mean", e.delta_mean},
                                {"delta_std", e.delta_std},
                                {"rank", e.rank}});
    }
    return {{"metrics", metrics},
            {"baseline_mean", baseline_mean},
            {"baseline_std", baseline_std},
            {"entries", entries_json}};
}

}  // namespace dreamreader
