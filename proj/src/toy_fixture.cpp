// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#include "dreamreader/toy_fixture.hpp"

#include <cmath>
#include <sstream>

#include "dreamreader/rng.hpp"

namespace dreamreader {

namespace {
const char* kBlockNames[] = {"down.0", "down.1", "mid", "up.0", "up.1"};

MatXf draw(uint64_t weight_seed, const std::string& tag, int rows, int cols, float stddev) {
    SeededRng rng(mix_seed(weight_seed, tag));
    return normal_matrix<float>(rng, rows, cols, stddev);
}
}  // namespace

ToyDiffusionAdapter::ToyDiffusionAdapter(const ToyFixtureConfig& config) : cfg_(config) {
    require(cfg_.d_model % cfg_.n_heads == 0, Errc::dim_mismatch,
            "d_model must divide evenly into heads");
    require(cfg_.vocab_size >= 2 && cfg_.seq_len >= 1 && cfg_.num_steps >= 1,
            Errc::dim_mismatch, "degenerate fixture config");
    model_id_ = "toy-diffusion-" + std::to_string(cfg_.weight_seed);

    const int c = cfg_.latent_c;
    const int hw = cfg_.latent_h * cfg_.latent_w;
    const int d_head = cfg_.d_model / cfg_.n_heads;
    const uint64_t ws = cfg_.weight_seed;

    embed_ = draw(ws, "embed", cfg_.vocab_size, cfg_.d_text, 1.0f);
    pos_ = draw(ws, "pos", cfg_.seq_len, cfg_.d_text,
                1.0f / std::sqrt(static_cast<float>(cfg_.d_text)));

    for (const char* name : kBlockNames) {
        const std::string path = std::string("denoiser.") + name;
        block_paths_.push_back(path);
        BlockWeights b;
        b.w_in = draw(ws, "w_in:" + path, c, cfg_.d_model,
                      1.0f / std::sqrt(static_cast<float>(c)));
        b.time_embed = draw(ws, "time:" + path, cfg_.num_steps, cfg_.d_model, 0.5f);
        for (int h = 0; h < cfg_.n_heads; ++h) {
            const std::string head_tag = path + ":" + std::to_string(h);
            b.w_q.push_back(draw(ws, "w_q:" + head_tag, cfg_.d_model, d_head,
                                 1.0f / std::sqrt(static_cast<float>(cfg_.d_model))));
            b.w_k.push_back(draw(ws, "w_k:" + head_tag, cfg_.d_text, d_head,
                                 1.0f / std::sqrt(static_cast<float>(cfg_.d_text))));
            b.w_v.push_back(draw(ws, "w_v:" + head_tag, cfg_.d_text, d_head,
                                 1.0f / std::sqrt(static_cast<float>(cfg_.d_text))));
        }
        b.w_out = draw(ws, "w_out:" + path, cfg_.n_heads * d_head, cfg_.d_model,
                       1.0f / std::sqrt(static_cast<float>(cfg_.n_heads * d_head)));
        b.w_back = draw(ws, "w_back:" + path, cfg_.d_model, c,
                        1.0f / std::sqrt(static_cast<float>(cfg_.d_model)));
        blocks_.push_back(std::move(b));
    }

    dec_w_ = draw(ws, "dec_w", 3, c, 1.0f / std::sqrt(static_cast<float>(c)));
    SeededRng dec_rng(mix_seed(ws, "dec_b"));
    dec_b_ = normal_vector<float>(dec_rng, 3, 0.1f);

    // Module tree: every float-tensor-producing submodule is addressable.
    ModuleNode text;
    text.path = "text_encoder";
    text.kind = ModuleKind::text_encoder;
    text.output_shape = {cfg_.seq_len, cfg_.d_text};
    text.output_feature_axis = 1;
    modules_.push_back(text);

    for (const std::string& path : block_paths_) {
        ModuleNode blk;
        blk.path = path;
        blk.kind = ModuleKind::block;
        blk.output_shape = {c, cfg_.latent_h, cfg_.latent_w};
        blk.output_feature_axis = 0;  // channels
        blk.input_shape = blk.output_shape;
        blk.input_feature_axis = 0;
        modules_.push_back(blk);

        ModuleNode attn;
        attn.path = path + ".cross_attn";
        attn.kind = ModuleKind::cross_attn;
        attn.output_shape = {cfg_.n_heads, hw, d_head};
        attn.output_feature_axis = 2;
        attn.num_heads = cfg_.n_heads;
        attn.input_shape = {hw, cfg_.d_model};  // query-side tokens
        attn.input_feature_axis = 1;
        modules_.push_back(attn);
    }

    ModuleNode dec;
    dec.path = "decoder";
    dec.kind = ModuleKind::decoder;
    dec.output_shape = {3, cfg_.latent_h, cfg_.latent_w};
    dec.output_feature_axis = 0;
    dec.input_shape = {c, cfg_.latent_h, cfg_.latent_w};
    dec.input_feature_axis = 0;
    modules_.push_back(dec);
}

std::vector<int> ToyDiffusionAdapter::tokenize(const std::string& text) const {
    std::vector<int> ids;
    std::istringstream in(text);
    std::string word;
    while (in >> word && static_cast<int>(ids.size()) < cfg_.seq_len)
        ids.push_back(1 + static_cast<int>(fnv1a(word) %
                                           static_cast<uint64_t>(cfg_.vocab_size - 1)));
    while (static_cast<int>(ids.size()) < cfg_.seq_len) ids.push_back(0);
    return ids;
}

Prompt ToyDiffusionAdapter::make_prompt(const std::string& id, const std::string& text) const {
    return Prompt{id, tokenize(text)};
}

void ToyDiffusionAdapter::zero_attention_head(const std::string& block_path, int head) {
    const int d_head = cfg_.d_model / cfg_.n_heads;
    for (size_t i = 0; i < block_paths_.size(); ++i) {
        if (block_paths_[i] != block_path) continue;
        require(head >= 0 && head < cfg_.n_heads, Errc::index_out_of_range,
                "head " + std::to_string(head) + " out of range");
        blocks_[i].w_out.middleRows(head * d_head, d_head).setZero();
        return;
    }
    fail(Errc::unknown_path, "no block at '" + block_path + "'");
}

uint64_t ToyDiffusionAdapter::weights_digest() const {
    uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](const MatXf& m) {
        h = fnv1a(std::string_view(reinterpret_cast<const char*>(m.data()),
                                   sizeof(float) * static_cast<size_t>(m.size())),
                  h);
    };
    mix(embed_);
    mix(pos_);
    for (const BlockWeights& b : blocks_) {
        mix(b.w_in);
        mix(b.time_embed);
        for (const MatXf& m : b.w_q) mix(m);
        for (const MatXf& m : b.w_k) mix(m);
        for (const MatXf& m : b.w_v) mix(m);
        mix(b.w_out);
        mix(b.w_back);
    }
    mix(dec_w_);
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(dec_b_.data()),
                               sizeof(float) * static_cast<size_t>(dec_b_.size())),
              h);
    return h;
}

Tensor ToyDiffusionAdapter::encode_text(const Prompt& prompt) const {
    require(static_cast<int>(prompt.tokens.size()) == cfg_.seq_len, Errc::shape_mismatch,
            "prompt must carry exactly seq_len token ids");
    Tensor out = Tensor::zeros({cfg_.seq_len, cfg_.d_text});
    auto m = out.as_matrix(cfg_.seq_len, cfg_.d_text);
    for (int i = 0; i < cfg_.seq_len; ++i) {
        int id = prompt.tokens[static_cast<size_t>(i)];
        require(id >= 0 && id < cfg_.vocab_size, Errc::index_out_of_range,
                "token id " + std::to_string(id) + " outside vocab");
        m.row(i) = embed_.row(id) + pos_.row(i);
    }
    return out;
}

Tensor ToyDiffusionAdapter::denoise_block(size_t block_idx, const Tensor& z,
                                          const Tensor& text, int t,
                                          HookContext& hooks) const {
    const BlockWeights& bw = blocks_[block_idx];
    const ModuleNode& attn_node = modules_[2 + 2 * block_idx];  // block at 1+2i, attn at 2+2i
    const int c = cfg_.latent_c;
    const int hw = cfg_.latent_h * cfg_.latent_w;
    const int d_head = cfg_.d_model / cfg_.n_heads;

    // Latent pixels as a position-major token matrix (hw x c).
    MatXf positions(hw, c);
    {
        auto zm = z.as_matrix(c, hw);  // channel-major rows
        positions = zm.transpose();
    }

    Tensor x{{hw, cfg_.d_model}, std::vector<float>(static_cast<size_t>(hw) * cfg_.d_model)};
    {
        auto xm = x.as_matrix(hw, cfg_.d_model);
        xm = positions * bw.w_in;
        xm.rowwise() += bw.time_embed.row(t);
    }
    hooks.tap(attn_node, TensorRole::input, t, x);

    const auto xm = x.as_matrix(hw, cfg_.d_model);
    const auto em = text.as_matrix(cfg_.seq_len, cfg_.d_text);
    Tensor heads = Tensor::zeros({cfg_.n_heads, hw, d_head});
    for (int h = 0; h < cfg_.n_heads; ++h) {
        MatXf q = xm * bw.w_q[static_cast<size_t>(h)];   // hw x d_head
        MatXf k = em * bw.w_k[static_cast<size_t>(h)];   // L x d_head
        MatXf v = em * bw.w_v[static_cast<size_t>(h)];   // L x d_head
        MatXf scores = q * k.transpose() / std::sqrt(static_cast<float>(d_head));
        for (int p = 0; p < hw; ++p) {
            float m = scores.row(p).maxCoeff();
            Eigen::Array<float, 1, Eigen::Dynamic> e = (scores.row(p).array() - m).exp();
            scores.row(p) = (e / e.sum()).matrix();
        }
        MatXf a = scores * v;  // hw x d_head
        Tensor head_t{{hw, d_head},
                      std::vector<float>(a.data(), a.data() + a.size())};
        assign_axis0(heads, h, head_t);
    }
    hooks.tap(attn_node, TensorRole::output, t, heads);

    // Concatenate heads per position, project back to channels, residual-add.
    MatXf concat(hw, cfg_.n_heads * d_head);
    for (int h = 0; h < cfg_.n_heads; ++h) {
        auto hm = MapConstMatXf(heads.data.data() + static_cast<size_t>(h) * hw * d_head, hw,
                                d_head);
        concat.middleCols(h * d_head, d_head) = hm;
    }
    MatXf delta = concat * bw.w_out * bw.w_back;  // hw x c

    Tensor out = z;
    auto om = out.as_matrix(c, hw);
    om += delta.transpose();
    return out;
}

GenerateResult ToyDiffusionAdapter::run(const Prompt& prompt, uint64_t seed,
                                        const std::vector<InterventionSpec>& edits,
                                        const std::vector<HookSite>& captures) {
    HookContext hooks(*this, edits, captures, prompt.id, seed);
    const int c = cfg_.latent_c;
    const int hw = cfg_.latent_h * cfg_.latent_w;

    Tensor text = encode_text(prompt);
    hooks.tap(modules_[0], TensorRole::output, 0, text);

    Tensor z = Tensor::zeros({c, cfg_.latent_h, cfg_.latent_w});
    {
        SeededRng rng(mix_seed(seed, "init_latent"));
        for (float& v : z.data) v = static_cast<float>(rng.normal());
    }

    for (int t = 0; t < cfg_.num_steps; ++t) {
        Tensor u = z;
        for (size_t i = 0; i < blocks_.size(); ++i) {
            const ModuleNode& block_node = modules_[1 + 2 * i];
            hooks.tap(block_node, TensorRole::input, t, u);
            Tensor next = denoise_block(i, u, text, t, hooks);
            hooks.tap(block_node, TensorRole::output, t, next);
            u = std::move(next);
        }
        // sigma_t = 1 - t/num_steps: constant decrements on a decreasing grid.
        const float sigma_t = 1.0f - static_cast<float>(t) / cfg_.num_steps;
        const float sigma_next = 1.0f - static_cast<float>(t + 1) / cfg_.num_steps;
        auto zm = z.as_matrix(c, hw);
        zm -= (sigma_t - sigma_next) * u.as_matrix(c, hw);
    }

    const ModuleNode& dec_node = modules_.back();
    hooks.tap(dec_node, TensorRole::input, 0, z);
    Tensor image = Tensor::zeros({3, cfg_.latent_h, cfg_.latent_w});
    image.as_matrix(3, hw) = dec_w_ * z.as_matrix(c, hw);
    for (int ch = 0; ch < 3; ++ch)
        image.as_matrix(3, hw).row(ch).array() += dec_b_[ch];
    hooks.tap(dec_node, TensorRole::output, 0, image);

    GenerateResult result;
    result.image = std::move(image);
    result.trace = hooks.take_records();
    return result;
}

}  // namespace dreamreader
