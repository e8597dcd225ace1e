// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "dreamreader/activation_store.hpp"
#include "dreamreader/rng.hpp"
#include "dreamreader/toy_fixture.hpp"
#include "test_util.hpp"

using namespace dreamreader;
using dtest::make_fixture;
using dtest::site_all;
using dtest::site_at;
using dtest::TempDir;
using dtest::thrown;

namespace {

std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), {});
}

// Hand-built homogeneous record set: `per_prompt` timesteps for each prompt id,
// payload values seeded off the record index.
std::vector<ActivationRecord> synthetic_records(const std::vector<std::string>& prompt_ids,
                                                int per_prompt, std::vector<int> shape,
                                                uint64_t value_seed) {
    HookSite site = site_at("denoiser.mid.cross_attn#0",
                            TimestepSchedule::range(0, per_prompt - 1));
    std::vector<ActivationRecord> out;
    SeededRng rng(value_seed);
    for (const auto& id : prompt_ids) {
        for (int t = 0; t < per_prompt; ++t) {
            ActivationRecord r;
            r.site = site;
            r.timestep = t;
            r.prompt_id = id;
            r.seed = 3;
            r.value = Tensor::zeros(shape);
            for (auto& v : r.value.data) v = static_cast<float>(rng.normal());
            out.push_back(std::move(r));
        }
    }
    return out;
}

}  // namespace

TEST_SUITE_BEGIN("activation_store");

TEST_CASE("capture round-trips through the activation file format") {
    auto adapter = make_fixture();
    Prompt p0 = adapter.make_prompt("p0", "a cat");
    Prompt p1 = adapter.make_prompt("p1", "a dog");
    auto recs = capture(adapter, {p0, p1}, 6, {site_all("denoiser.mid.cross_attn")});
    REQUIRE(recs.size() == 8);

    TempDir tmp;
    auto path = tmp.file("caps.dract");
    ActivationFile written = write_records(recs, path, adapter.model_id(), "1");
    CHECK(written.records.size() == 8);
    CHECK(written.shape == std::vector<int>{2, 64, 8});
    CHECK(written.seed == 6);
    CHECK(written.model_id == adapter.model_id());
    CHECK(written.dataset_version == "1");

    auto loaded = read_records(path);
    REQUIRE(loaded.size() == recs.size());
    for (size_t i = 0; i < recs.size(); ++i) CHECK(loaded[i] == recs[i]);

    ActivationFile reopened = open_activation_file(path);
    CHECK(reopened.site == recs[0].site);
    CHECK(reopened.model_id == adapter.model_id());
    CHECK(reopened.records.size() == 8);
}

TEST_CASE("writes are byte-identical for identical inputs") {
    auto recs = synthetic_records({"p0", "p1"}, 2, {4, 3}, 11);
    TempDir tmp;
    write_records(recs, tmp.file("a.dract"));
    write_records(recs, tmp.file("b.dract"));
    CHECK(read_bytes(tmp.file("a.dract")) == read_bytes(tmp.file("b.dract")));

    // write -> read -> write is idempotent.
    auto loaded = read_records(tmp.file("a.dract"));
    write_records(loaded, tmp.file("c.dract"));
    CHECK(read_bytes(tmp.file("a.dract")) == read_bytes(tmp.file("c.dract")));
}

TEST_CASE("heterogeneous record sets are rejected") {
    TempDir tmp;
    auto recs = synthetic_records({"p0"}, 2, {4, 3}, 1);

    auto mixed_shape = recs;
    mixed_shape.push_back(recs[0]);
    mixed_shape.back().value = Tensor::zeros({3, 4});
    CHECK(thrown([&] { write_records(mixed_shape, tmp.file("x.dract")); }) ==
          Errc::heterogeneous_records);

    auto mixed_site = recs;
    mixed_site.back().site.path = "denoiser.up.0.cross_attn";
    CHECK(thrown([&] { write_records(mixed_site, tmp.file("x.dract")); }) ==
          Errc::heterogeneous_records);

    auto mixed_seed = recs;
    mixed_seed.back().seed = 99;
    CHECK(thrown([&] { write_records(mixed_seed, tmp.file("x.dract")); }) ==
          Errc::heterogeneous_records);

    CHECK(thrown([&] { write_records({}, tmp.file("x.dract")); }) == Errc::empty_set);
}

TEST_CASE("corrupt and truncated files fail with precise codes") {
    TempDir tmp;
    auto recs = synthetic_records({"p0"}, 2, {4, 3}, 2);
    auto path = tmp.file("f.dract");
    write_records(recs, path);

    auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size - 4);
    CHECK(thrown([&] { read_records(path); }) == Errc::truncated_body);

    write_records(recs, path);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.put('X');
    }
    CHECK(thrown([&] { read_records(path); }) == Errc::corrupt_header);

    CHECK(thrown([&] { read_records(tmp.file("missing.dract")); }) == Errc::io_failure);
}

TEST_CASE("file stems flatten the site display string") {
    auto s = site_at("denoiser.mid.cross_attn#0@input", TimestepSchedule::all(4));
    CHECK(activation_file_stem(s) == "denoiser__mid__cross_attn_h0_input");
    CHECK(activation_file_stem(site_all("denoiser.down.1")) == "denoiser__down__1");
    CHECK(activation_file_stem(site_all("decoder")) == "decoder");
}

TEST_CASE("flattened_matrix preserves row-major payload order") {
    auto recs = synthetic_records({"p0", "p1"}, 1, {2, 3}, 5);
    TempDir tmp;
    auto file = write_records(recs, tmp.file("f.dract"));
    Eigen::MatrixXf m = flattened_matrix(file);
    REQUIRE(m.rows() == 2);
    REQUIRE(m.cols() == 6);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 6; ++j)
            CHECK(m(i, j) == recs[static_cast<size_t>(i)].value.data[static_cast<size_t>(j)]);
}

TEST_CASE("paired iterator batches ceil(N/B) with a short tail") {
    TempDir tmp;
    auto src = write_records(synthetic_records({"a", "b", "c", "d", "e"}, 2, {3}, 1),
                             tmp.file("s.dract"));
    auto tgt = write_records(synthetic_records({"a", "b", "c", "d", "e"}, 2, {2}, 2),
                             tmp.file("t.dract"));

    PairedBatchIterator it(src, tgt, 4, 0);
    CHECK(it.num_records() == 10);
    CHECK(it.num_batches() == 3);

    std::vector<int64_t> sizes;
    int64_t seen = 0;
    while (auto batch = it.next()) {
        CHECK(batch->source.cols() == 3);
        CHECK(batch->target.cols() == 2);
        CHECK(batch->source.rows() == batch->target.rows());
        CHECK(static_cast<int64_t>(batch->indices.size()) == batch->source.rows());
        sizes.push_back(batch->source.rows());
        seen += batch->source.rows();
    }
    CHECK(sizes == std::vector<int64_t>{4, 4, 2});
    CHECK(seen == 10);
    CHECK(!it.next());
}

TEST_CASE("paired iterator aligns rows and verifies the pairing") {
    TempDir tmp;
    auto src_recs = synthetic_records({"a", "b", "c"}, 2, {3}, 1);
    auto tgt_recs = synthetic_records({"a", "b", "c"}, 2, {2}, 2);
    auto src = write_records(src_recs, tmp.file("s.dract"));
    auto tgt = write_records(tgt_recs, tmp.file("t.dract"));

    PairedBatchIterator it(src, tgt, 6, 3);
    auto batch = it.next();
    REQUIRE(batch);
    for (int i = 0; i < batch->source.rows(); ++i) {
        auto idx = static_cast<size_t>(batch->indices[static_cast<size_t>(i)]);
        // Row i of both sides comes from the same record position.
        for (int j = 0; j < 3; ++j) CHECK(batch->source(i, j) == src_recs[idx].value.data[static_cast<size_t>(j)]);
        for (int j = 0; j < 2; ++j) CHECK(batch->target(i, j) == tgt_recs[idx].value.data[static_cast<size_t>(j)]);
    }

    auto short_tgt = write_records(synthetic_records({"a", "b"}, 2, {2}, 2), tmp.file("u.dract"));
    CHECK(thrown([&] { PairedBatchIterator bad(src, short_tgt, 4, 0); }) == Errc::count_mismatch);

    auto renamed = synthetic_records({"a", "b", "c"}, 2, {2}, 2);
    renamed[2].prompt_id = "z";
    auto bad_tgt = write_records(renamed, tmp.file("v.dract"));
    CHECK(thrown([&] { PairedBatchIterator bad(src, bad_tgt, 4, 0); }) == Errc::pairing_mismatch);
}

TEST_CASE("shuffling permutes whole prompt groups deterministically") {
    TempDir tmp;
    auto src = write_records(synthetic_records({"a", "b", "c", "d"}, 3, {2}, 1),
                             tmp.file("s.dract"));
    auto tgt = write_records(synthetic_records({"a", "b", "c", "d"}, 3, {2}, 9),
                             tmp.file("t.dract"));

    auto order_for = [&](uint64_t seed) {
        PairedBatchIterator it(src, tgt, 12, seed);
        auto batch = it.next();
        REQUIRE(batch);
        return batch->indices;
    };

    auto o1 = order_for(1);
    CHECK(o1 == order_for(1));  // pure function of the seed

    // Records of one prompt stay contiguous and keep their timestep order.
    for (size_t i = 0; i < o1.size(); i += 3) {
        CHECK(o1[i + 1] == o1[i] + 1);
        CHECK(o1[i + 2] == o1[i] + 2);
    }

    bool any_different = false;
    for (uint64_t seed = 2; seed < 12 && !any_different; ++seed)
        any_different = order_for(seed) != o1;
    CHECK(any_different);

    // reset() replays the same order.
    PairedBatchIterator it(src, tgt, 5, 1);
    std::vector<int64_t> first, second;
    while (auto b = it.next()) first.insert(first.end(), b->indices.begin(), b->indices.end());
    it.reset();
    while (auto b = it.next()) second.insert(second.end(), b->indices.begin(), b->indices.end());
    CHECK(first == second);
}

TEST_CASE("file sample streams emit one sample per feature vector") {
    TempDir tmp;
    auto recs = synthetic_records({"p0", "p1"}, 1, {2, 3}, 4);
    auto file = write_records(recs, tmp.file("f.dract"));

    FileSampleStream stream(file, 1);  // feature axis 1 -> rows of length 3
    std::vector<ActivationSample> samples;
    while (auto s = stream.next()) samples.push_back(*s);
    REQUIRE(samples.size() == 4);
    CHECK(samples[0].prompt_id == "p0");
    CHECK(samples[0].timestep == 0);
    CHECK(samples[2].prompt_id == "p1");
    for (const auto& s : samples) CHECK(s.x.size() == 3);

    // Sample values come from gather_feature_vectors on each record.
    Eigen::MatrixXf rows0 = gather_feature_vectors(recs[0].value, 1);
    CHECK((samples[0].x.transpose().array() == rows0.row(0).array()).all());
    CHECK((samples[1].x.transpose().array() == rows0.row(1).array()).all());

    stream.reset();
    auto replay = stream.next();
    REQUIRE(replay);
    CHECK((replay->x.array() == samples[0].x.array()).all());
}

TEST_SUITE_END();
