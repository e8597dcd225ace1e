// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "dreamreader/loreft.hpp"
#include "dreamreader/probe.hpp"
#include "dreamreader/sae.hpp"
#include "dreamreader/site.hpp"
#include "dreamreader/tensor.hpp"

namespace dreamreader {

enum class ModuleKind { text_encoder, block, cross_attn, decoder };

// One addressable submodule. `output_shape` is the tensor seen by output-role
// hooks; `input_shape` is what input-role hooks see (empty when the module's
// input is not a float tensor, e.g. token ids). Attention modules expose an
// explicit head axis as axis 0 of their output.
struct ModuleNode {
    std::string path;
    ModuleKind kind = ModuleKind::block;
    std::vector<int> output_shape;
    int output_feature_axis = 0;
    std::vector<int> input_shape;
    int input_feature_axis = 0;
    int num_heads = 0;
};

struct Prompt {
    std::string id;
    std::vector<int> tokens;
};

// Captured tensor with full provenance; the unit every downstream module
// consumes and the record the activation store persists.
struct ActivationRecord {
    HookSite site;
    int timestep = 0;
    Dtype dtype = Dtype::f32;
    Tensor value;
    std::string prompt_id;
    uint64_t seed = 0;

    bool operator==(const ActivationRecord&) const = default;
};

// ---------------------------------------------------------------------------
// Interventions

struct ScaleEdit {
    double strength = 1.0;
};

struct ZeroEdit {};

// h + noise(seed, strength * std(h)); noise is re-drawn per timestep from a
// seed mixed with the site path, so runs are order-independent.
struct CorruptEdit {
    double strength = 1.0;
    uint64_t noise_seed = 0;
};

struct ReplaceEdit {
    std::map<int, Tensor> donor_by_timestep;
};

struct AddDirectionEdit {
    Eigen::VectorXf direction;
    double strength = 0.0;
};

// Gradient steering: pushes along the probe's target-class logit gradient.
// Live mode recomputes the gradient at each scheduled activation (reduced to
// its mean feature vector); fixed mode reuses a precomputed unit direction.
struct KSteerEdit {
    ProbeParams probe;
    int target_class = 1;
    double strength = 0.0;
    bool fixed = false;
    Eigen::VectorXf fixed_direction;
};

struct LoReftEdit {
    LoReftParams params;
    double strength = 1.0;  // h' = h + strength * (phi(h) - h)
};

struct SaeEdit {
    SAEBundle bundle;
    std::vector<FeatureEdit> edits;  // empty list still routes through the SAE
};

using InterventionOp = std::variant<ScaleEdit, ZeroEdit, CorruptEdit, ReplaceEdit,
                                    AddDirectionEdit, KSteerEdit, LoReftEdit, SaeEdit>;

struct InterventionSpec {
    HookSite site;
    InterventionOp op;
};

const char* intervention_kind_name(const InterventionOp& op);

// Validates edit indices eagerly (IndexOutOfRange) and binds the SAE to a site.
InterventionSpec sae_edit_intervention(SAEBundle bundle, std::vector<FeatureEdit> edits,
                                       HookSite site);

// ---------------------------------------------------------------------------
// Adapter interface

struct GenerateResult {
    Tensor image;
    std::vector<ActivationRecord> trace;
};

// A text-to-image diffusion stack behind a uniform surface: a module tree for
// addressing, and a run() that honors edits and captures at hook sites.
class DiffusionAdapter {
  public:
    virtual ~DiffusionAdapter() = default;
    virtual std::string model_id() const = 0;
    virtual std::string revision() const = 0;
    virtual int num_steps() const = 0;
    virtual const std::vector<ModuleNode>& modules() const = 0;
    virtual std::vector<int> image_shape() const = 0;
    virtual GenerateResult run(const Prompt& prompt, uint64_t seed,
                               const std::vector<InterventionSpec>& edits,
                               const std::vector<HookSite>& captures) = 0;
};

// Exact-match lookup over the adapter's module tree; throws UnknownPath.
const ModuleNode& resolve_site(const DiffusionAdapter& adapter, const std::string& path);

// Checks path, role, head index and schedule against the adapter.
void validate_site(const DiffusionAdapter& adapter, const HookSite& site);

// Shape of the tensor a capture at `site` yields (head slices drop the head
// axis; input-role sites expose the module's input shape).
std::vector<int> site_capture_shape(const DiffusionAdapter& adapter, const HookSite& site);

// Feature axis of that same tensor.
int site_feature_axis(const DiffusionAdapter& adapter, const HookSite& site);

GenerateResult generate(DiffusionAdapter& adapter, const Prompt& prompt, uint64_t seed,
                        const std::vector<InterventionSpec>& edits = {});

// One record per (prompt, site, scheduled timestep), ordered prompt-major,
// then by requested site, then timestep ascending.
std::vector<ActivationRecord> capture(DiffusionAdapter& adapter,
                                      const std::vector<Prompt>& prompts, uint64_t seed,
                                      const std::vector<HookSite>& sites);

// ---------------------------------------------------------------------------
// Hook engine (used by adapter implementations)

// Routes every tensor surfaced by an adapter's forward pass: applies matching
// edits in config order, then records matching captures. Validates all sites
// up front so invalid specs fail before any compute.
class HookContext {
  public:
    HookContext(const DiffusionAdapter& adapter, const std::vector<InterventionSpec>& edits,
                const std::vector<HookSite>& captures, std::string prompt_id, uint64_t seed);

    // Adapter calls this at each (module, role, timestep) tensor point.
    void tap(const ModuleNode& node, TensorRole role, int timestep, Tensor& h);

    // Captured records sorted by (requested site index, timestep).
    std::vector<ActivationRecord> take_records();

  private:
    const std::vector<InterventionSpec>& edits_;
    const std::vector<HookSite>& captures_;
    std::string prompt_id_;
    uint64_t seed_ = 0;
    std::vector<std::pair<size_t, ActivationRecord>> records_;  // (capture index, record)
};

// Applies one intervention op to a tensor whose feature axis is given; the
// shared primitive behind both the hook engine and localization.
void apply_op(const InterventionOp& op, const std::string& site_path, int timestep,
              int feature_axis, Tensor& h);

}  // namespace dreamreader
