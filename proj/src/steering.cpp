// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#include "dreamreader/steering.hpp"

#include <algorithm>

#include "dreamreader/fileio.hpp"

namespace dreamreader {

const char* steering_method_name(SteeringVector::Method m) {
    switch (m) {
        case SteeringVector::Method::caa: return "caa";
        case SteeringVector::Method::ksteer: return "ksteer";
        case SteeringVector::Method::external: return "external";
    }
    return "?";
}

Eigen::VectorXd mean_activation(const std::vector<ActivationRecord>& records,
                                int feature_axis) {
    require(!records.empty(), Errc::empty_set, "mean_activation: no records");
    std::vector<const ActivationRecord*> ordered;
    ordered.reserve(records.size());
    for (const ActivationRecord& r : records) ordered.push_back(&r);
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const ActivationRecord* a, const ActivationRecord* b) {
                         if (a->prompt_id != b->prompt_id) return a->prompt_id < b->prompt_id;
                         return a->timestep < b->timestep;
                     });

    Eigen::VectorXd sum;
    for (const ActivationRecord* r : ordered) {
        Eigen::VectorXd v = mean_feature_vector(r->value, feature_axis).cast<double>();
        if (sum.size() == 0)
            sum = v;
        else {
            require(v.size() == sum.size(), Errc::dim_mismatch,
                    "records mix feature dims " + std::to_string(sum.size()) + " and " +
                        std::to_string(v.size()));
            sum += v;
        }
    }
    return sum / static_cast<double>(records.size());
}

SteeringVector extract_caa(const std::vector<ActivationRecord>& positive,
                           const std::vector<ActivationRecord>& negative,
                           const HookSite& site, int feature_axis) {
    require(!positive.empty(), Errc::empty_set, "extract_caa: empty positive set");
    require(!negative.empty(), Errc::empty_set, "extract_caa: empty negative set");
    for (const auto* set : {&positive, &negative})
        for (const ActivationRecord& r : *set)
            require(r.site.path == site.path, Errc::heterogeneous_records,
                    "extract_caa: record from '" + r.site.path + "', expected '" + site.path +
                        "'");

    Eigen::VectorXd direction = mean_activation(positive, feature_axis) -
                                mean_activation(negative, feature_axis);
    const double norm = direction.norm();
    require(norm > 1e-12, Errc::zero_direction,
            "extract_caa: positive and negative means coincide");

    SteeringVector v;
    v.site = site;
    v.direction = direction.cast<float>();
    v.method = SteeringVector::Method::caa;
    v.norm = norm;
    auto prompt_ids = [](const std::vector<ActivationRecord>& rs) {
        std::vector<std::string> ids;
        for (const ActivationRecord& r : rs)
            if (std::find(ids.begin(), ids.end(), r.prompt_id) == ids.end())
                ids.push_back(r.prompt_id);
        std::sort(ids.begin(), ids.end());
        return ids;
    };
    v.provenance = {{"positive_prompts", prompt_ids(positive)},
                    {"negative_prompts", prompt_ids(negative)}};
    return v;
}

ProbeParams train_probe(const std::vector<ActivationRecord>& records,
                        const std::vector<int>& labels, int feature_axis,
                        const ProbeHyperparams& hp) {
    require(records.size() == labels.size(), Errc::count_mismatch,
            "train_probe: " + std::to_string(records.size()) + " records vs " +
                std::to_string(labels.size()) + " labels");
    require(!records.empty(), Errc::empty_set, "train_probe: no records");
    const Eigen::Index d = mean_feature_vector(records.front().value, feature_axis).size();
    Eigen::MatrixXd x(static_cast<Eigen::Index>(records.size()), d);
    for (size_t i = 0; i < records.size(); ++i) {
        Eigen::VectorXf v = mean_feature_vector(records[i].value, feature_axis);
        require(v.size() == d, Errc::heterogeneous_records, "train_probe: mixed feature dims");
        x.row(static_cast<Eigen::Index>(i)) = v.cast<double>().transpose();
    }
    return train_probe_core(x, labels, hp);
}

Eigen::VectorXf fixed_ksteer_direction(const std::vector<ActivationRecord>& records,
                                       int feature_axis, const ProbeParams& probe,
                                       int target_class) {
    Eigen::VectorXd mean = mean_activation(records, feature_axis);
    return kst_direction(probe, mean, target_class).cast<float>();
}

LoReftParams train_loreft(DiffusionAdapter& adapter,
                          const std::vector<std::pair<Prompt, Prompt>>& concept_plain_pairs,
                          const std::vector<HookSite>& sites, int rank,
                          const LoReftHyperparams& hp) {
    require(!concept_plain_pairs.empty(), Errc::empty_set, "train_loreft: no prompt pairs");
    require(!sites.empty(), Errc::empty_set, "train_loreft: no sites");
    for (const HookSite& s : sites) validate_site(adapter, s);

    // Feature dims must agree across sites: one Phi serves them all.
    std::vector<int> axes;
    for (const HookSite& s : sites) axes.push_back(site_feature_axis(adapter, s));

    std::vector<Eigen::VectorXf> plain_rows, concept_rows;
    for (const auto& [concept_prompt, plain_prompt] : concept_plain_pairs) {
        GenerateResult concept_run = adapter.run(concept_prompt, hp.seed, {}, sites);
        GenerateResult plain_run = adapter.run(plain_prompt, hp.seed, {}, sites);
        require(concept_run.trace.size() == plain_run.trace.size(), Errc::count_mismatch,
                "train_loreft: capture size mismatch between paired prompts");
        for (size_t i = 0; i < plain_run.trace.size(); ++i) {
            // Records are ordered by requested site then timestep on both
            // sides, so index i is the aligned pair.
            const ActivationRecord& p = plain_run.trace[i];
            const ActivationRecord& c = concept_run.trace[i];
            require(p.site == c.site && p.timestep == c.timestep, Errc::pairing_mismatch,
                    "train_loreft: misaligned captures");
            size_t site_idx = 0;
            while (site_idx < sites.size() && !(sites[site_idx] == p.site)) ++site_idx;
            require(site_idx < sites.size(), Errc::pairing_mismatch,
                    "train_loreft: capture from unrequested site");
            const int axis = axes[site_idx];
            Eigen::MatrixXf pv = gather_feature_vectors(p.value, axis);
            Eigen::MatrixXf cv = gather_feature_vectors(c.value, axis);
            for (Eigen::Index r = 0; r < pv.rows(); ++r) {
                plain_rows.push_back(pv.row(r).transpose());
                concept_rows.push_back(cv.row(r).transpose());
            }
        }
    }
    require(!plain_rows.empty(), Errc::empty_set, "train_loreft: captures yielded no vectors");
    const Eigen::Index d = plain_rows.front().size();
    for (const auto& v : plain_rows)
        require(v.size() == d, Errc::dim_mismatch,
                "train_loreft: sites expose different feature dims");

    Eigen::MatrixXd source(static_cast<Eigen::Index>(plain_rows.size()), d);
    Eigen::MatrixXd target(static_cast<Eigen::Index>(concept_rows.size()), d);
    for (size_t i = 0; i < plain_rows.size(); ++i) {
        source.row(static_cast<Eigen::Index>(i)) = plain_rows[i].cast<double>().transpose();
        target.row(static_cast<Eigen::Index>(i)) = concept_rows[i].cast<double>().transpose();
    }

    LoReftParams params = fit_loreft(source, target, rank, hp);
    params.sites = sites;
    return params;
}

Tensor apply_steering(DiffusionAdapter& adapter, const Prompt& prompt, uint64_t seed,
                      const SteeringVector& vector, const std::vector<HookSite>& sites,
                      double strength) {
    std::vector<HookSite> where = sites.empty() ? std::vector<HookSite>{vector.site} : sites;
    std::vector<InterventionSpec> edits;
    for (const HookSite& s : where)
        edits.push_back({s, AddDirectionEdit{vector.direction, strength}});
    return generate(adapter, prompt, seed, edits).image;
}

Tensor apply_steering(DiffusionAdapter& adapter, const Prompt& prompt, uint64_t seed,
                      const ProbeParams& probe, int target_class,
                      const std::vector<HookSite>& sites, double strength,
                      const Eigen::VectorXf* fixed_direction) {
    std::vector<InterventionSpec> edits;
    for (const HookSite& s : sites) {
        KSteerEdit e;
        e.probe = probe;
        e.target_class = target_class;
        e.strength = strength;
        if (fixed_direction) {
            e.fixed = true;
            e.fixed_direction = *fixed_direction;
        }
        edits.push_back({s, std::move(e)});
    }
    return generate(adapter, prompt, seed, edits).image;
}

Tensor apply_steering(DiffusionAdapter& adapter, const Prompt& prompt, uint64_t seed,
                      const LoReftParams& params, double strength) {
    require(!params.sites.empty(), Errc::empty_set,
            "apply_steering: LoReFT params carry no sites");
    std::vector<InterventionSpec> edits;
    for (const HookSite& s : params.sites)
        edits.push_back({s, LoReftEdit{params, strength}});
    return generate(adapter, prompt, seed, edits).image;
}

// ---------------------------------------------------------------------------

namespace {
constexpr char kVecMagic[7] = "DRVEC1";
constexpr char kFtMagic[7] = "DRFT01";

nlohmann::json site_to_json(const HookSite& s) {
    return {{"path", s.path},
            {"role", role_name(s.role)},
            {"head_index", s.head_index ? nlohmann::json(*s.head_index) : nlohmann::json()},
            {"schedule", s.schedule.selected}};
}

HookSite site_from_json(const nlohmann::json& j) {
    HookSite s;
    s.path = j.at("path").get<std::string>();
    s.role = j.at("role").get<std::string>() == "input" ? TensorRole::input
                                                        : TensorRole::output;
    if (j.contains("head_index") && !j.at("head_index").is_null())
        s.head_index = j.at("head_index").get<int>();
    s.schedule = TimestepSchedule::list(j.at("schedule").get<std::vector<int>>());
    return s;
}
}  // namespace

void save_steering_vector(const SteeringVector& v, const std::filesystem::path& path) {
    nlohmann::json header{
        {"format", "drvec"},
        {"dtype", "f32"},
        {"site", site_to_json(v.site)},
        {"method", steering_method_name(v.method)},
        {"dim", v.direction.size()},
        {"norm", v.norm},
        {"provenance", v.provenance},
    };
    std::vector<float> body(v.direction.data(), v.direction.data() + v.direction.size());
    write_envelope(path, kVecMagic, header, {&body});
}

SteeringVector load_steering_vector(const std::filesystem::path& path) {
    RawEnvelope env = read_envelope(path, kVecMagic);
    const auto& h = env.header;
    SteeringVector v;
    v.site = site_from_json(h.at("site"));
    const std::string method = h.at("method").get<std::string>();
    if (method == "caa")
        v.method = SteeringVector::Method::caa;
    else if (method == "ksteer")
        v.method = SteeringVector::Method::ksteer;
    else
        v.method = SteeringVector::Method::external;
    v.norm = h.at("norm").get<double>();
    v.provenance = h.value("provenance", nlohmann::json::object());
    const int64_t dim = h.at("dim").get<int64_t>();
    auto blocks = split_blocks(env, {dim});
    v.direction = Eigen::Map<const Eigen::VectorXf>(blocks[0].data(), dim);
    return v;
}

void save_loreft(const LoReftParams& p, const std::filesystem::path& path) {
    nlohmann::json sites = nlohmann::json::array();
    for (const HookSite& s : p.sites) sites.push_back(site_to_json(s));
    nlohmann::json header{
        {"format", "drft"},
        {"dtype", "f32"},
        {"rank", p.rank},
        {"dim", p.dim()},
        {"sites", sites},
        {"hyperparams",
         {{"steps", p.hp.steps},
          {"learning_rate", p.hp.learning_rate},
          {"batch_size", p.hp.batch_size},
          {"seed", p.hp.seed}}},
        {"initial_loss", p.initial_loss},
        {"final_loss", p.final_loss},
    };
    const auto rank = static_cast<size_t>(p.rank);
    const auto d = static_cast<size_t>(p.dim());
    std::vector<float> rb(rank * d), wb(rank * d), bb(rank);
    for (size_t i = 0; i < rank; ++i) {
        for (size_t j = 0; j < d; ++j) {
            rb[i * d + j] = static_cast<float>(p.r(static_cast<Eigen::Index>(i),
                                                   static_cast<Eigen::Index>(j)));
            wb[i * d + j] = static_cast<float>(p.w(static_cast<Eigen::Index>(i),
                                                   static_cast<Eigen::Index>(j)));
        }
        bb[i] = static_cast<float>(p.b(static_cast<Eigen::Index>(i)));
    }
    write_envelope(path, kFtMagic, header, {&rb, &wb, &bb});
}

LoReftParams load_loreft(const std::filesystem::path& path) {
    RawEnvelope env = read_envelope(path, kFtMagic);
    const auto& h = env.header;
    LoReftParams p;
    p.rank = h.at("rank").get<int>();
    const int d = h.at("dim").get<int>();
    for (const auto& sj : h.value("sites", nlohmann::json::array()))
        p.sites.push_back(site_from_json(sj));
    if (h.contains("hyperparams")) {
        const auto& hp = h.at("hyperparams");
        p.hp.steps = hp.value("steps", 0);
        p.hp.learning_rate = hp.value("learning_rate", 1e-2);
        p.hp.batch_size = hp.value("batch_size", 1024);
        p.hp.seed = hp.value("seed", uint64_t{0});
    }
    p.initial_loss = h.value("initial_loss", 0.0);
    p.final_loss = h.value("final_loss", 0.0);

    const int64_t rd = static_cast<int64_t>(p.rank) * d;
    auto blocks = split_blocks(env, {rd, rd, p.rank});
    p.r.resize(p.rank, d);
    p.w.resize(p.rank, d);
    p.b.resize(p.rank);
    for (int i = 0; i < p.rank; ++i) {
        for (int j = 0; j < d; ++j) {
            p.r(i, j) = blocks[0][static_cast<size_t>(i) * d + j];
            p.w(i, j) = blocks[1][static_cast<size_t>(i) * d + j];
        }
        p.b(i) = blocks[2][static_cast<size_t>(i)];
    }
    return p;
}

}  // namespace dreamreader
