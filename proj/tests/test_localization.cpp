// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>

#include "dreamreader/activation_store.hpp"
#include "dreamreader/localization.hpp"
#include "dreamreader/metrics.hpp"
#include "dreamreader/toy_fixture.hpp"
#include "test_util.hpp"

using namespace dreamreader;
using dtest::make_fixture;
using dtest::site_all;
using dtest::site_at;
using dtest::TempDir;
using dtest::thrown;

namespace {

LocalizationPlan base_plan(const ToyDiffusionAdapter& adapter) {
    LocalizationPlan plan;
    plan.sites = {site_all("denoiser.mid.cross_attn")};
    plan.schedules = {TimestepSchedule::all(4)};
    plan.prompts = {adapter.make_prompt("p0", "a photo of a cat"),
                    adapter.make_prompt("p1", "a painting of a tree")};
    plan.metrics = {"alignment", "ssim", "perceptual"};
    plan.seed = 5;
    return plan;
}

}  // namespace

TEST_SUITE_BEGIN("localization");

TEST_CASE("apply_intervention covers the four ablation kinds") {
    Tensor h({2, 3}, {1.0f, -2.0f, 3.0f, 0.5f, 4.0f, -1.0f});

    CHECK(apply_intervention(LocalizationPlan::Kind::zero, 1.0, h) == Tensor::zeros({2, 3}));
    CHECK(apply_intervention(LocalizationPlan::Kind::scale, 1.0, h) == h);
    CHECK(apply_intervention(LocalizationPlan::Kind::scale, 0.0, h) == Tensor::zeros({2, 3}));

    Tensor doubled = apply_intervention(LocalizationPlan::Kind::scale, 2.0, h);
    for (size_t i = 0; i < h.data.size(); ++i) CHECK(doubled.data[i] == 2.0f * h.data[i]);

    Tensor c1 = apply_intervention(LocalizationPlan::Kind::corrupt, 1.0, h, nullptr, 7, "site", 1);
    Tensor c2 = apply_intervention(LocalizationPlan::Kind::corrupt, 1.0, h, nullptr, 7, "site", 1);
    Tensor c3 = apply_intervention(LocalizationPlan::Kind::corrupt, 1.0, h, nullptr, 7, "site", 2);
    CHECK(c1 == c2);
    CHECK(c1 != h);
    CHECK(c1 != c3);

    Tensor donor = Tensor::zeros({2, 3});
    donor.data[0] = 9.0f;
    CHECK(apply_intervention(LocalizationPlan::Kind::replace, 1.0, h, &donor) == donor);
    CHECK(thrown([&] { apply_intervention(LocalizationPlan::Kind::replace, 1.0, h); }) ==
          Errc::missing_donor);
}

TEST_CASE("plan validation rejects malformed sweeps") {
    auto adapter = make_fixture();
    auto plan = base_plan(adapter);
    CHECK(!thrown([&] { plan.validate(adapter); }));

    auto bad = plan;
    bad.sites.clear();
    CHECK(thrown([&] { bad.validate(adapter); }) == Errc::empty_set);

    bad = plan;
    bad.schedules.clear();
    CHECK(thrown([&] { bad.validate(adapter); }) == Errc::empty_set);

    bad = plan;
    bad.prompts.clear();
    CHECK(thrown([&] { bad.validate(adapter); }) == Errc::empty_set);

    bad = plan;
    bad.metrics.clear();
    CHECK(thrown([&] { bad.validate(adapter); }) == Errc::empty_set);

    bad = plan;
    bad.metrics = {"frechet"};  // distribution metrics have no per-prompt delta
    CHECK(thrown([&] { bad.validate(adapter); }) == Errc::unknown_key);

    bad = plan;
    bad.strength = 11.0;
    CHECK(thrown([&] { bad.validate(adapter); }) == Errc::invalid_intervention);
    bad.strength = -0.5;
    CHECK(thrown([&] { bad.validate(adapter); }) == Errc::invalid_intervention);

    bad = plan;
    bad.kind = LocalizationPlan::Kind::replace;  // donor left null
    CHECK(thrown([&] { bad.validate(adapter); }) == Errc::missing_donor);

    bad = plan;
    bad.sites = {site_all("denoiser.down.9")};
    CHECK(thrown([&] { bad.validate(adapter); }) == Errc::unknown_path);

    bad = plan;
    bad.schedules = {TimestepSchedule::list({7})};
    CHECK(thrown([&] { bad.validate(adapter); }) == Errc::invalid_intervention);
}

TEST_CASE("identity-strength scaling produces exactly zero deltas") {
    auto adapter = make_fixture();
    auto plan = base_plan(adapter);
    plan.kind = LocalizationPlan::Kind::scale;
    plan.strength = 1.0;
    plan.sites = {site_all("denoiser.mid.cross_attn"), site_all("denoiser.down.0")};
    plan.schedules = {TimestepSchedule::all(4), TimestepSchedule::list({0})};

    FixtureEmbedder embedder;
    InfluenceReport report = run_localization(adapter, plan, embedder);
    REQUIRE(report.entries.size() == 4);
    for (const auto& entry : report.entries) {
        for (const auto& metric : plan.metrics) {
            CHECK(entry.delta_mean.at(metric) == 0.0);
            CHECK(entry.delta_std.at(metric) == 0.0);
        }
    }

    // Ranks stay a deterministic 1..N permutation ordered by site then schedule.
    CHECK(report.entries[0].rank == 1);
    CHECK(report.entries[1].rank == 2);
    CHECK(report.entries[2].rank == 3);
    CHECK(report.entries[3].rank == 4);
    CHECK(report.entries[0].site == "denoiser.down.0");
    CHECK(report.entries[0].schedule == std::vector<int>{0});
    CHECK(report.entries[1].site == "denoiser.down.0");
    CHECK(report.entries[1].schedule == std::vector<int>{0, 1, 2, 3});
    CHECK(report.entries[2].site == "denoiser.mid.cross_attn");

    InfluenceReport again = run_localization(adapter, plan, embedder);
    CHECK(report.to_json() == again.to_json());
}

TEST_CASE("zero ablation ranks sites by influence with full stats") {
    auto adapter = make_fixture();
    auto plan = base_plan(adapter);
    plan.kind = LocalizationPlan::Kind::zero;
    plan.sites = {site_all("denoiser.mid.cross_attn"), site_all("denoiser.up.1")};
    plan.schedules = {TimestepSchedule::all(4), TimestepSchedule::list({0, 1})};

    FixtureEmbedder embedder;
    InfluenceReport report = run_localization(adapter, plan, embedder);
    REQUIRE(report.entries.size() == 4);

    CHECK(report.metrics == plan.metrics);
    for (const auto& metric : plan.metrics) {
        CHECK(report.baseline_mean.count(metric) == 1);
        CHECK(report.baseline_std.count(metric) == 1);
    }
    CHECK(report.baseline_std.at("perceptual") == 0.0);  // baseline-vs-baseline is 0

    std::set<int> ranks;
    double prev = std::numeric_limits<double>::infinity();
    for (const auto& entry : report.entries) {
        ranks.insert(entry.rank);
        double influence = std::fabs(entry.delta_mean.at(plan.metrics.front()));
        CHECK(influence <= prev);
        prev = influence;
        CHECK(std::fabs(entry.delta_mean.at("ssim")) > 0.0);
    }
    CHECK(ranks == std::set<int>{1, 2, 3, 4});

    auto j = report.to_json();
    CHECK(j.contains("entries"));
    CHECK(j["entries"].size() == 4);
    CHECK(j["entries"][0].contains("delta_mean"));
}

TEST_CASE("cross-prompt replacement registers as influence") {
    auto adapter = make_fixture();
    Prompt donor_prompt = adapter.make_prompt("donor", "a storm over the sea");
    auto donor_recs = capture(adapter, {donor_prompt}, 5, {site_all("denoiser.mid")});

    TempDir tmp;
    ActivationFile donor = write_records(donor_recs, tmp.file("donor.dract"));

    auto plan = base_plan(adapter);
    plan.kind = LocalizationPlan::Kind::replace;
    plan.sites = {site_all("denoiser.mid")};
    plan.donor = &donor;
    plan.prompts = {adapter.make_prompt("p0", "a photo of a cat")};

    FixtureEmbedder embedder;
    InfluenceReport report = run_localization(adapter, plan, embedder);
    REQUIRE(report.entries.size() == 1);
    CHECK(std::fabs(report.entries[0].delta_mean.at("perceptual")) > 0.0);
}

TEST_CASE("a weight-dead head shows zero influence and ranks last") {
    auto adapter = make_fixture();
    adapter.zero_attention_head("denoiser.mid", 1);

    auto plan = base_plan(adapter);
    plan.kind = LocalizationPlan::Kind::zero;
    plan.sites = {site_all("denoiser.mid.cross_attn#0"), site_all("denoiser.mid.cross_attn#1")};
    plan.schedules = {TimestepSchedule::all(4)};

    FixtureEmbedder embedder;
    InfluenceReport report = run_localization(adapter, plan, embedder);
    REQUIRE(report.entries.size() == 2);

    CHECK(report.entries[0].site == "denoiser.mid.cross_attn#0");
    CHECK(report.entries[0].rank == 1);
    CHECK(std::fabs(report.entries[0].delta_mean.at("alignment")) > 0.0);

    CHECK(report.entries[1].site == "denoiser.mid.cross_attn#1");
    CHECK(report.entries[1].rank == 2);
    for (const auto& metric : plan.metrics) {
        CHECK(report.entries[1].delta_mean.at(metric) == 0.0);
        CHECK(report.entries[1].delta_std.at(metric) == 0.0);
    }
}

TEST_SUITE_END();
