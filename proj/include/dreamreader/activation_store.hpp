// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dreamreader/model.hpp"
#include "dreamreader/sae.hpp"

namespace dreamreader {

// A persisted homogeneous record set: one site, one shape, one seed, any
// number of (prompt, timestep) payloads.
struct ActivationFile {
    HookSite site;
    Dtype dtype = Dtype::f32;
    std::vector<int> shape;  // per-record payload shape
    uint64_t seed = 0;
    std::string model_id;
    std::string dataset_version;
    std::vector<ActivationRecord> records;
};

// Writes a .dract file; byte-identical output for identical inputs. All
// records must agree on site, shape, dtype and seed (HeterogeneousRecords).
ActivationFile write_records(const std::vector<ActivationRecord>& records,
                             const std::filesystem::path& destination,
                             const std::string& model_id = "",
                             const std::string& dataset_version = "");

std::vector<ActivationRecord> read_records(const std::filesystem::path& path);
ActivationFile open_activation_file(const std::filesystem::path& path);

// "denoiser.mid.cross_attn#0@input" -> "denoiser__mid__cross_attn_h0_input"
std::string activation_file_stem(const HookSite& site);

// Record payloads flattened row-major into an N x prod(shape) matrix.
Eigen::MatrixXf flattened_matrix(const ActivationFile& file);

struct PairedBatch {
    Eigen::MatrixXf source;        // B x p, flattened payloads
    Eigen::MatrixXf target;        // B x q
    std::vector<int64_t> indices;  // positions into the files' record lists
};

// Streams aligned source/target batches. Shuffling permutes whole prompt-id
// groups, never individual records, so row i of both sides always comes from
// the same prompt; iteration order is a pure function of shuffle_seed and
// reset() replays it.
class PairedBatchIterator {
  public:
    PairedBatchIterator(const ActivationFile& source, const ActivationFile& target,
                        int batch_size, uint64_t shuffle_seed);

    std::optional<PairedBatch> next();
    void reset() { cursor_ = 0; }

    int64_t num_records() const { return static_cast<int64_t>(order_.size()); }
    int num_batches() const;
    int batch_size() const { return batch_size_; }

  private:
    const ActivationFile& source_;
    const ActivationFile& target_;
    int batch_size_;
    std::vector<int64_t> order_;
    size_t cursor_ = 0;
};

// Adapts an ActivationFile to the SAE SampleStream interface, emitting one
// sample per feature vector along feature_axis of each record.
class FileSampleStream final : public SampleStream {
  public:
    FileSampleStream(const ActivationFile& file, int feature_axis);
    std::optional<ActivationSample> next() override;
    void reset() override {
        record_ = 0;
        row_ = 0;
        buffered_ = false;
    }

  private:
    const ActivationFile& file_;
    int feature_axis_;
    size_t record_ = 0;
    Eigen::Index row_ = 0;
    Eigen::MatrixXf current_;
    bool buffered_ = false;
};

}  // namespace dreamreader
