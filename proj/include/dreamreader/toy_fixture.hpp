// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dreamreader/model.hpp"

namespace dreamreader {

// Desk-scale deterministic diffusion stack: token embedding text encoder,
// five denoiser blocks (down.0, down.1, mid, up.0, up.1) each holding one
// multi-head cross-attention over the text sequence, a DDIM-like scheduler
// with sigma_t = 1 - t/num_steps, and a per-pixel linear decoder. Every
// weight is a pure function of weight_seed.
struct ToyFixtureConfig {
    int vocab_size = 64;
    int seq_len = 8;     // L
    int d_text = 16;
    int latent_c = 2;
    int latent_h = 8;
    int latent_w = 8;
    int d_model = 16;
    int n_heads = 2;     // d_head = d_model / n_heads
    int num_steps = 4;
    uint64_t weight_seed = 0;
};

class ToyDiffusionAdapter final : public DiffusionAdapter {
  public:
    explicit ToyDiffusionAdapter(const ToyFixtureConfig& config);

    std::string model_id() const override { return model_id_; }
    std::string revision() const override { return "1"; }
    int num_steps() const override { return cfg_.num_steps; }
    const std::vector<ModuleNode>& modules() const override { return modules_; }
    std::vector<int> image_shape() const override { return {3, cfg_.latent_h, cfg_.latent_w}; }

    GenerateResult run(const Prompt& prompt, uint64_t seed,
                       const std::vector<InterventionSpec>& edits,
                       const std::vector<HookSite>& captures) override;

    const ToyFixtureConfig& config() const { return cfg_; }

    // Whitespace tokenizer: hashed word ids in [1, vocab), zero-padded /
    // truncated to seq_len.
    std::vector<int> tokenize(const std::string& text) const;
    Prompt make_prompt(const std::string& id, const std::string& text) const;

    // Test surgery: wipes the w_out rows fed by one attention head, making
    // that head's output causally inert while still capturable.
    void zero_attention_head(const std::string& block_path, int head);

    // Order-stable FNV digest of all weights; equal seeds give equal digests.
    uint64_t weights_digest() const;

  private:
    struct BlockWeights {
        MatXf w_in;                 // c x d_model
        MatXf time_embed;           // num_steps x d_model
        std::vector<MatXf> w_q;     // per head: d_model x d_head
        std::vector<MatXf> w_k;     // per head: d_text x d_head
        std::vector<MatXf> w_v;     // per head: d_text x d_head
        MatXf w_out;                // (n_heads*d_head) x d_model
        MatXf w_back;               // d_model x c
    };

    Tensor encode_text(const Prompt& prompt) const;
    Tensor denoise_block(size_t block_idx, const Tensor& z, const Tensor& text, int t,
                         HookContext& hooks) const;

    ToyFixtureConfig cfg_;
    std::string model_id_;
    std::vector<ModuleNode> modules_;
    std::vector<std::string> block_paths_;

    MatXf embed_;   // vocab x d_text
    MatXf pos_;     // L x d_text
    std::vector<BlockWeights> blocks_;
    MatXf dec_w_;   // 3 x c
    Eigen::VectorXf dec_b_;  // 3
};

}  // namespace dreamreader
