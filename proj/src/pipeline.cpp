// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#include "dreamreader/pipeline.hpp"

#include <sys/resource.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "dreamreader/activation_store.hpp"
#include "dreamreader/errors.hpp"
#include "dreamreader/fingerprint.hpp"
#include "dreamreader/image_io.hpp"
#include "dreamreader/localization.hpp"
#include "dreamreader/mapper.hpp"
#include "dreamreader/metrics.hpp"
#include "dreamreader/rng.hpp"
#include "dreamreader/sae.hpp"
#include "dreamreader/steering.hpp"
#include "dreamreader/stitching.hpp"
#include "dreamreader/toy_fixture.hpp"

namespace dreamreader {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path runs_root() {
    const char* env = std::getenv("DREAMREADER_RUNS_DIR");
    if (env != nullptr && *env != '\0') return fs::path(env);
    return fs::path("runs");
}

json RunReport::to_json() const {
    return {{"artifacts", artifacts},
            {"fingerprint", fingerprint},
            {"metrics", metrics},
            {"status", status},
            {"sweep_coordinate", sweep_coordinate},
            {"tables", tables},
            {"workflow", workflow}};
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), Errc::io_failure, "cannot open " + path.string() + " for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    require(out.good(), Errc::io_failure, "short write to " + path.string());
}

void write_json_file(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

fs::path sub(const fs::path& dir, const char* name) {
    fs::path p = dir / name;
    fs::create_directories(p);
    return p;
}

ToyDiffusionAdapter make_adapter(const ExperimentConfig& cfg, bool target) {
    const std::string id = cfg.gets(target ? "model.target_id" : "model.id");
    require(id == "toy-diffusion", Errc::unknown_path,
            "unknown model id '" + id + "' (this build ships the toy-diffusion fixture)");
    ToyFixtureConfig fc;
    fc.weight_seed =
        static_cast<uint64_t>(cfg.geti(target ? "model.target_weight_seed" : "model.weight_seed"));
    fc.num_steps = static_cast<int>(cfg.geti("model.num_steps"));
    return ToyDiffusionAdapter(fc);
}

std::vector<Prompt> make_prompts(const ToyDiffusionAdapter& adapter, const json& texts,
                                 const char* prefix) {
    std::vector<Prompt> out;
    int i = 0;
    for (const json& t : texts)
        out.push_back(adapter.make_prompt(prefix + std::to_string(i++), t.get<std::string>()));
    return out;
}

struct Triple {
    std::string concept_text;
    std::string plain_text;
    std::string gen_text;
};

std::vector<Triple> parse_triples(const ExperimentConfig& cfg) {
    std::vector<Triple> out;
    for (const json& t : cfg.at("dataset.prompt_triples")) {
        const std::string s = t.get<std::string>();
        const size_t a = s.find('|');
        const size_t b = s.find('|', a + 1);
        out.push_back({s.substr(0, a), s.substr(a + 1, b - a - 1), s.substr(b + 1)});
    }
    return out;
}

std::vector<std::string> metric_list(const ExperimentConfig& cfg) {
    std::vector<std::string> out;
    for (const json& m : cfg.at("metrics")) {
        const std::string name = m.get<std::string>();
        require(is_known_metric(name), Errc::unknown_key, "unknown metric '" + name + "'");
        out.push_back(name);
    }
    return out;
}

bool wants(const std::vector<std::string>& which, const char* name) {
    return std::find(which.begin(), which.end(), name) != which.end();
}

std::vector<HookSite> config_sites(const ExperimentConfig& cfg, const TimestepSchedule& schedule) {
    std::vector<HookSite> out;
    for (const json& s : cfg.at("sites"))
        out.push_back(parse_site_string(s.get<std::string>(), schedule));
    return out;
}

// Shared before/after evaluation for the steering-flavoured workflows:
// per-prompt rows plus flat means. Alignment is scored against the
// per-image target tokens; set metrics need at least two images.
void comparison_metrics(const std::vector<std::string>& which, const Embedder& embedder,
                        const std::vector<Tensor>& baseline, const std::vector<Tensor>& steered,
                        const std::vector<std::vector<int>>& target_tokens, json& metrics_out,
                        json& rows_out) {
    const size_t n = baseline.size();
    double a_base = 0.0, a_steer = 0.0, ssim_sum = 0.0, pd_sum = 0.0;
    rows_out = json::array();
    for (size_t i = 0; i < n; ++i) {
        json row{{"index", static_cast<int>(i)}};
        if (wants(which, "alignment")) {
            const double b = alignment_score(embedder, baseline[i], target_tokens[i]);
            const double s = alignment_score(embedder, steered[i], target_tokens[i]);
            a_base += b;
            a_steer += s;
            row["alignment_base"] = b;
            row["alignment_steered"] = s;
        }
        if (wants(which, "ssim")) {
            const double v = ssim(baseline[i], steered[i]);
            ssim_sum += v;
            row["ssim"] = v;
        }
        if (wants(which, "perceptual")) {
            const double v = perceptual_distance(embedder, baseline[i], steered[i]);
            pd_sum += v;
            row["perceptual"] = v;
        }
        rows_out.push_back(std::move(row));
    }
    const double dn = static_cast<double>(n);
    if (wants(which, "alignment")) {
        metrics_out["alignment_base"] = a_base / dn;
        metrics_out["alignment_steered"] = a_steer / dn;
        metrics_out["alignment_delta"] = (a_steer - a_base) / dn;
    }
    if (wants(which, "ssim")) metrics_out["ssim"] = ssim_sum / dn;
    if (wants(which, "perceptual")) metrics_out["perceptual"] = pd_sum / dn;
    if (wants(which, "frechet") && n >= 2) {
        const int dim = static_cast<int>(embedder.image_embed(baseline[0]).size());
        Eigen::MatrixXd eb(n, dim), es(n, dim);
        for (size_t i = 0; i < n; ++i) {
            eb.row(static_cast<Eigen::Index>(i)) = embedder.image_embed(baseline[i]).transpose();
            es.row(static_cast<Eigen::Index>(i)) = embedder.image_embed(steered[i]).transpose();
        }
        metrics_out["frechet"] = frechet_distance(feature_stats(eb), feature_stats(es));
    }
    if (wants(which, "diversity") && n >= 2) {
        const DiversitySummary d = diversity_summary(embedder, steered);
        metrics_out["diversity_pairwise"] = d.mean_pairwise_distance;
        metrics_out["diversity_trace_var"] = d.embedding_trace_variance;
    }
}

void write_comparison_images(const ExperimentConfig& cfg, const fs::path& dir,
                             const std::vector<Tensor>& baseline,
                             const std::vector<Tensor>& steered) {
    if (!cfg.getb("report.images")) return;
    const fs::path images = sub(dir, "images");
    const Tensor base_grid = image_grid(baseline);
    const Tensor steer_grid = image_grid(steered);
    write_ppm((images / "baseline.ppm").string(), base_grid);
    write_ppm((images / "steered.ppm").string(), steer_grid);
    write_ppm((images / "comparison.ppm").string(), stack_rows({base_grid, steer_grid}));
}

json inventory(const fs::path& dir) {
    std::vector<std::string> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string rel = fs::relative(entry.path(), dir).generic_string();
        if (rel == "summary.json" || rel == "timing.json") continue;
        files.push_back(rel);
    }
    std::sort(files.begin(), files.end());
    json out = json::array();
    for (const std::string& rel : files)
        out.push_back({{"path", rel}, {"sha256", file_sha256((dir / rel).string())}});
    return out;
}

// ---------------------------------------------------------------------------
// Workflow handlers

void run_localize_job(const ExperimentConfig& cfg, const fs::path& dir, RunReport& rep) {
    ToyDiffusionAdapter adapter = make_adapter(cfg, false);
    const FixtureEmbedder embedder;
    const int num_steps = adapter.num_steps();

    LocalizationPlan plan;
    const std::string kind = cfg.gets("method.kind");
    plan.kind = kind == "scale"     ? LocalizationPlan::Kind::scale
                : kind == "zero"    ? LocalizationPlan::Kind::zero
                : kind == "corrupt" ? LocalizationPlan::Kind::corrupt
                                    : LocalizationPlan::Kind::replace;
    plan.strength = cfg.getd("method.strength");
    plan.noise_seed = static_cast<uint64_t>(cfg.geti("method.noise_seed"));
    plan.seed = static_cast<uint64_t>(cfg.geti("seed"));
    plan.sites = config_sites(cfg, TimestepSchedule::all(num_steps));
    for (const json& s : cfg.at("method.schedules"))
        plan.schedules.push_back(parse_schedule_spec(s.get<std::string>(), num_steps));
    plan.prompts = make_prompts(adapter, cfg.at("dataset.prompts"), "p");
    plan.metrics = metric_list(cfg);

    ActivationFile donor_file;
    if (plan.kind == LocalizationPlan::Kind::replace) {
        donor_file = open_activation_file(cfg.gets("method.donor"));
        plan.donor = &donor_file;
    }

    const InfluenceReport influence = run_localization(adapter, plan, embedder);
    write_json_file(sub(dir, "report") / "influence.json", influence.to_json());

    if (cfg.getb("report.images")) {
        std::vector<Tensor> baselines;
        for (const Prompt& p : plan.prompts)
            baselines.push_back(generate(adapter, p, plan.seed).image);
        write_ppm((sub(dir, "images") / "baseline.ppm").string(), image_grid(baselines));
    }

    const std::string& primary = plan.metrics.front();
    for (const std::string& m : plan.metrics)
        rep.metrics["baseline_" + m] = influence.baseline_mean.at(m);
    rep.metrics["top_abs_delta"] = std::abs(influence.entries.front().delta_mean.at(primary));
    rep.tables["influence"] = influence.to_json();
}

void run_steer_job(const ExperimentConfig& cfg, const fs::path& dir, RunReport& rep) {
    ToyDiffusionAdapter adapter = make_adapter(cfg, false);
    const FixtureEmbedder embedder;
    const uint64_t seed = static_cast<uint64_t>(cfg.geti("seed"));
    const double strength = cfg.getd("method.strength");
    const TimestepSchedule schedule =
        parse_schedule_spec(cfg.gets("method.schedule"), adapter.num_steps());
    const std::vector<HookSite> sites = config_sites(cfg, schedule);
    const HookSite& site = sites.front();
    const int feature_axis = site_feature_axis(adapter, site);

    const std::vector<Triple> triples = parse_triples(cfg);
    std::vector<Prompt> concept_prompts, plain_prompts, gen_prompts;
    std::vector<std::vector<int>> target_tokens;
    for (size_t i = 0; i < triples.size(); ++i) {
        concept_prompts.push_back(
            adapter.make_prompt("c" + std::to_string(i), triples[i].concept_text));
        plain_prompts.push_back(adapter.make_prompt("n" + std::to_string(i), triples[i].plain_text));
        gen_prompts.push_back(adapter.make_prompt("g" + std::to_string(i), triples[i].gen_text));
        target_tokens.push_back(adapter.tokenize(triples[i].concept_text));
    }

    const std::vector<ActivationRecord> positive = capture(adapter, concept_prompts, seed, {site});
    const std::vector<ActivationRecord> negative = capture(adapter, plain_prompts, seed, {site});

    const fs::path checkpoints = sub(dir, "checkpoints");
    const std::string method = cfg.gets("method.steer_method");
    std::vector<Tensor> steered;
    if (method == "caa") {
        const SteeringVector v = extract_caa(positive, negative, site, feature_axis);
        save_steering_vector(v, checkpoints / "steering.drvec");
        for (const Prompt& p : gen_prompts)
            steered.push_back(apply_steering(adapter, p, seed, v, sites, strength));
    } else if (method == "ksteer") {
        std::vector<ActivationRecord> records = positive;
        records.insert(records.end(), negative.begin(), negative.end());
        std::vector<int> labels(positive.size(), 1);
        labels.insert(labels.end(), negative.size(), 0);
        ProbeHyperparams hp;
        hp.steps = static_cast<int>(cfg.geti("method.probe_steps"));
        hp.learning_rate = cfg.getd("method.probe_lr");
        hp.seed = seed;
        const ProbeParams probe = train_probe(records, labels, feature_axis, hp);
        const int target_class = static_cast<int>(cfg.geti("method.target_class"));
        if (cfg.getb("method.fixed")) {
            const Eigen::VectorXf direction =
                fixed_ksteer_direction(records, feature_axis, probe, target_class);
            SteeringVector v;
            v.site = site;
            v.direction = direction;
            v.method = SteeringVector::Method::ksteer;
            v.norm = direction.norm();
            v.provenance = {{"mode", "fixed"}, {"target_class", target_class}};
            save_steering_vector(v, checkpoints / "steering.drvec");
            for (const Prompt& p : gen_prompts)
                steered.push_back(apply_steering(adapter, p, seed, probe, target_class, sites,
                                                 strength, &direction));
        } else {
            for (const Prompt& p : gen_prompts)
                steered.push_back(
                    apply_steering(adapter, p, seed, probe, target_class, sites, strength));
        }
        rep.metrics["probe_train_accuracy"] = probe.final_train_accuracy;
    } else {  // loreft
        std::vector<std::pair<Prompt, Prompt>> pairs;
        for (size_t i = 0; i < triples.size(); ++i)
            pairs.emplace_back(concept_prompts[i], plain_prompts[i]);
        LoReftHyperparams hp;
        hp.steps = static_cast<int>(cfg.geti("method.loreft_steps"));
        hp.learning_rate = cfg.getd("method.loreft_lr");
        hp.batch_size = static_cast<int>(cfg.geti("method.loreft_batch"));
        hp.seed = seed;
        const LoReftParams params =
            train_loreft(adapter, pairs, sites, static_cast<int>(cfg.geti("method.rank")), hp);
        save_loreft(params, checkpoints / "loreft.drft");
        for (const Prompt& p : gen_prompts)
            steered.push_back(apply_steering(adapter, p, seed, params, strength));
        rep.metrics["loreft_initial_loss"] = params.initial_loss;
        rep.metrics["loreft_final_loss"] = params.final_loss;
    }

    std::vector<Tensor> baseline;
    for (const Prompt& p : gen_prompts) baseline.push_back(generate(adapter, p, seed).image);

    json rows;
    comparison_metrics(metric_list(cfg), embedder, baseline, steered, target_tokens, rep.metrics,
                       rows);
    rep.tables["per_prompt"] = std::move(rows);
    write_comparison_images(cfg, dir, baseline, steered);
}

void run_stitch_train_job(const ExperimentConfig& cfg, const fs::path& dir, RunReport& rep) {
    ToyDiffusionAdapter source = make_adapter(cfg, false);
    ToyDiffusionAdapter target = make_adapter(cfg, true);
    const uint64_t seed = static_cast<uint64_t>(cfg.geti("seed"));
    const TimestepSchedule all_steps = TimestepSchedule::all(source.num_steps());
    const HookSite source_site = parse_site_string(cfg.gets("method.source_site"), all_steps);
    const HookSite target_site = parse_site_string(cfg.gets("method.target_site"), all_steps);

    const std::vector<Prompt> prompts = make_prompts(source, cfg.at("dataset.prompts"), "p");
    const std::string dataset_version = cfg.gets("dataset.version");

    const fs::path src_path =
        sub(dir, "activations/source") / (activation_file_stem(source_site) + ".dract");
    const fs::path tgt_path =
        sub(dir, "activations/target") / (activation_file_stem(target_site) + ".dract");
    const ActivationFile src_file = write_records(capture(source, prompts, seed, {source_site}),
                                                  src_path, source.model_id(), dataset_version);
    const ActivationFile tgt_file = write_records(capture(target, prompts, seed, {target_site}),
                                                  tgt_path, target.model_id(), dataset_version);

    const Eigen::MatrixXd x = flattened_matrix(src_file).cast<double>();
    const Eigen::MatrixXd y = flattened_matrix(tgt_file).cast<double>();

    const std::string family = cfg.gets("method.family");
    TrainedMapper mapper;
    if (family == "identity") {
        require(x.cols() == y.cols(), Errc::dim_mismatch,
                "identity mapper needs equal site dims, got " + std::to_string(x.cols()) +
                    " and " + std::to_string(y.cols()));
        mapper = make_identity_mapper(static_cast<int>(x.cols()));
    } else if (family == "affine_ridge") {
        mapper = fit_affine_ridge(x, y, cfg.getd("method.lambda"));
    } else {  // mlp
        MapperSpec spec;
        spec.family = MapperFamily::mlp;
        spec.input_dim = static_cast<int>(x.cols());
        spec.output_dim = static_cast<int>(y.cols());
        spec.hidden_dim = static_cast<int>(cfg.geti("method.hidden_dim"));
        spec.hp.steps = static_cast<int>(cfg.geti("method.steps"));
        spec.hp.learning_rate = cfg.getd("method.lr");
        spec.hp.log_interval = static_cast<int>(cfg.geti("method.log_interval"));
        spec.hp.batch_size = static_cast<int>(cfg.geti("method.batch_size"));
        spec.hp.val_fraction = cfg.getd("method.val_fraction");
        spec.hp.seed = seed;
        PairedBatchIterator pairs(src_file, tgt_file, spec.hp.batch_size,
                                  mix_seed(seed, "stitch_shuffle"));
        mapper = train_mlp_mapper(pairs, spec);
        json curve = json::array();
        for (const LossPoint& p : mapper.curve)
            curve.push_back(
                {{"step", p.step}, {"train_loss", p.train_loss}, {"val_loss", p.val_loss}});
        rep.tables["curve"] = std::move(curve);
        if (std::isfinite(mapper.initial_val_loss))
            rep.metrics["initial_val_loss"] = mapper.initial_val_loss;
        if (std::isfinite(mapper.final_val_loss))
            rep.metrics["final_val_loss"] = mapper.final_val_loss;
    }
    mapper.source_fingerprint = file_sha256(src_path.string());
    mapper.target_fingerprint = file_sha256(tgt_path.string());
    save_mapper(mapper, sub(dir, "checkpoints") / "mapper.drmap");
    rep.metrics["train_mse"] = mapper_mse(mapper, x, y);
}

void run_stitch_steer_job(const ExperimentConfig& cfg, const fs::path& dir, RunReport& rep) {
    ToyDiffusionAdapter source = make_adapter(cfg, false);
    ToyDiffusionAdapter target = make_adapter(cfg, true);
    const FixtureEmbedder embedder;
    const uint64_t seed = static_cast<uint64_t>(cfg.geti("seed"));
    const double strength = cfg.getd("method.strength");
    const TimestepSchedule schedule =
        parse_schedule_spec(cfg.gets("method.schedule"), source.num_steps());
    const HookSite source_site = parse_site_string(cfg.gets("method.source_site"), schedule);
    const HookSite target_site = parse_site_string(cfg.gets("method.target_site"), schedule);
    const int fa_source = site_feature_axis(source, source_site);
    const int fa_target = site_feature_axis(target, target_site);

    const std::vector<Triple> triples = parse_triples(cfg);
    std::vector<Prompt> cap_prompts, gen_prompts;
    std::vector<std::vector<int>> target_tokens;
    for (size_t i = 0; i < triples.size(); ++i) {
        cap_prompts.push_back(source.make_prompt("c" + std::to_string(i), triples[i].concept_text));
        cap_prompts.push_back(source.make_prompt("n" + std::to_string(i), triples[i].plain_text));
        cap_prompts.push_back(source.make_prompt("g" + std::to_string(i), triples[i].gen_text));
        gen_prompts.push_back(source.make_prompt("g" + std::to_string(i), triples[i].gen_text));
        target_tokens.push_back(source.tokenize(triples[i].concept_text));
    }
    for (const json& t : cfg.at("dataset.prompts"))
        cap_prompts.push_back(source.make_prompt("p" + std::to_string(cap_prompts.size()),
                                                 t.get<std::string>()));

    const std::vector<ActivationRecord> src_rec = capture(source, cap_prompts, seed, {source_site});
    const std::vector<ActivationRecord> tgt_rec = capture(target, cap_prompts, seed, {target_site});
    require(src_rec.size() == tgt_rec.size(), Errc::pairing_mismatch,
            "source and target capture counts differ");

    // Paired feature-vector training set, aligned record by record.
    std::vector<Eigen::MatrixXf> xs, ys;
    int64_t rows = 0;
    for (size_t i = 0; i < src_rec.size(); ++i) {
        require(src_rec[i].prompt_id == tgt_rec[i].prompt_id &&
                    src_rec[i].timestep == tgt_rec[i].timestep,
                Errc::pairing_mismatch, "capture order diverged between models");
        xs.push_back(gather_feature_vectors(src_rec[i].value, fa_source));
        ys.push_back(gather_feature_vectors(tgt_rec[i].value, fa_target));
        require(xs.back().rows() == ys.back().rows(), Errc::pairing_mismatch,
                "feature-vector counts differ between sites");
        rows += xs.back().rows();
    }
    Eigen::MatrixXd x(rows, xs.front().cols()), y(rows, ys.front().cols());
    int64_t at = 0;
    for (size_t i = 0; i < xs.size(); ++i) {
        x.middleRows(at, xs[i].rows()) = xs[i].cast<double>();
        y.middleRows(at, ys[i].rows()) = ys[i].cast<double>();
        at += xs[i].rows();
    }
    const TrainedMapper mapper = fit_affine_ridge(x, y, cfg.getd("method.lambda"));

    std::vector<ActivationRecord> positive, negative;
    for (const ActivationRecord& r : src_rec) {
        if (!r.prompt_id.empty() && r.prompt_id[0] == 'c') positive.push_back(r);
        if (!r.prompt_id.empty() && r.prompt_id[0] == 'n') negative.push_back(r);
    }
    const SteeringVector vec = extract_caa(positive, negative, source_site, fa_source);
    const Eigen::VectorXf anchor = x.colwise().mean().cast<float>();
    const SteeringVector transferred = transfer_steering(vec, mapper, anchor, target_site);

    const fs::path checkpoints = sub(dir, "checkpoints");
    save_mapper(mapper, checkpoints / "mapper.drmap");
    save_steering_vector(vec, checkpoints / "steering.drvec");
    save_steering_vector(transferred, checkpoints / "transferred.drvec");

    std::vector<Tensor> baseline, steered;
    for (const Prompt& p : gen_prompts) {
        baseline.push_back(generate(target, p, seed).image);
        steered.push_back(apply_steering(target, p, seed, transferred, {target_site}, strength));
    }

    json rows_out;
    comparison_metrics(metric_list(cfg), embedder, baseline, steered, target_tokens, rep.metrics,
                       rows_out);
    rep.tables["per_prompt"] = std::move(rows_out);
    rep.metrics["mapper_train_mse"] = mapper_mse(mapper, x, y);
    rep.metrics["transferred_norm"] = transferred.norm;
    write_comparison_images(cfg, dir, baseline, steered);
}

void run_sae_train_job(const ExperimentConfig& cfg, const fs::path& dir, RunReport& rep) {
    ToyDiffusionAdapter adapter = make_adapter(cfg, false);
    const uint64_t seed = static_cast<uint64_t>(cfg.geti("seed"));
    const TimestepSchedule all_steps = TimestepSchedule::all(adapter.num_steps());
    const HookSite site = config_sites(cfg, all_steps).front();
    const int feature_axis = site_feature_axis(adapter, site);
    const int d = site_capture_shape(adapter, site)[static_cast<size_t>(feature_axis)];

    const std::vector<Prompt> prompts = make_prompts(adapter, cfg.at("dataset.prompts"), "p");
    const fs::path act_path =
        sub(dir, "activations") / (activation_file_stem(site) + ".dract");
    const ActivationFile file = write_records(capture(adapter, prompts, seed, {site}), act_path,
                                              adapter.model_id(), cfg.gets("dataset.version"));

    SAEHyperparams hp;
    const std::string variant = cfg.gets("method.variant");
    hp.variant = variant == "topk"    ? SAEVariant::topk
                 : variant == "gated" ? SAEVariant::gated
                                      : SAEVariant::matryoshka;
    hp.steps = static_cast<int>(cfg.geti("method.steps"));
    hp.batch_size = static_cast<int>(cfg.geti("method.batch_size"));
    hp.learning_rate = cfg.getd("method.lr");
    hp.seed = seed;
    hp.dead_window = static_cast<int>(cfg.geti("method.dead_window"));

    FileSampleStream stream(file, feature_axis);
    SAEBundle bundle = train_sae(stream, d, static_cast<int>(cfg.geti("method.features")),
                                 static_cast<int>(cfg.geti("method.k")), hp);
    bundle.source_site = site.display();
    save_sae(bundle, sub(dir, "checkpoints") / "sae.drsae");

    stream.reset();
    json cards = json::array();
    for (const FeatureCard& c : build_feature_cards(bundle, stream, 5)) {
        json top = json::array();
        for (const auto& hit : c.top)
            top.push_back({{"prompt_id", hit.prompt_id},
                           {"timestep", hit.timestep},
                           {"value", hit.value}});
        cards.push_back({{"feature", c.feature},
                         {"mean_activation", c.mean_activation},
                         {"frequency", c.frequency},
                         {"dead", c.dead},
                         {"top", std::move(top)}});
    }
    write_json_file(sub(dir, "report") / "features.json", cards);
    rep.tables["feature_cards"] = std::move(cards);

    rep.metrics["initial_loss"] = bundle.stats.initial_loss;
    rep.metrics["final_loss"] = bundle.stats.final_loss;
    rep.metrics["dead_feature_rate"] = bundle.stats.dead_feature_rate;
    rep.metrics["max_col_norm_dev"] = bundle.stats.max_col_norm_dev;
}

void run_sae_intervene_job(const ExperimentConfig& cfg, const fs::path& dir, RunReport& rep) {
    ToyDiffusionAdapter adapter = make_adapter(cfg, false);
    const FixtureEmbedder embedder;
    const uint64_t seed = static_cast<uint64_t>(cfg.geti("seed"));
    const SAEBundle bundle = load_sae(cfg.gets("method.checkpoint"));
    const TimestepSchedule schedule =
        parse_schedule_spec(cfg.gets("method.schedule"), adapter.num_steps());

    HookSite site;
    if (!cfg.at("sites").empty())
        site = config_sites(cfg, schedule).front();
    else
        site = parse_site_string(bundle.source_site, schedule);

    std::vector<FeatureEdit> edits;
    for (const json& e : cfg.at("method.edits")) {
        FeatureEdit edit;
        edit.index = e.at("feature").get<int>();
        edit.mode = e.at("mode").get<std::string>() == "scale" ? FeatureEdit::Mode::scale
                                                               : FeatureEdit::Mode::ablate;
        edit.factor = e.value("factor", 1.0);
        edits.push_back(edit);
    }
    const InterventionSpec spec = sae_edit_intervention(bundle, edits, site);

    const std::vector<Prompt> prompts = make_prompts(adapter, cfg.at("dataset.prompts"), "p");
    std::vector<Tensor> baseline, edited;
    std::vector<std::vector<int>> target_tokens;
    for (const Prompt& p : prompts) {
        baseline.push_back(generate(adapter, p, seed).image);
        edited.push_back(generate(adapter, p, seed, {spec}).image);
        target_tokens.push_back(p.tokens);
    }

    json rows;
    comparison_metrics(metric_list(cfg), embedder, baseline, edited, target_tokens, rep.metrics,
                       rows);
    rep.tables["per_prompt"] = std::move(rows);
    write_comparison_images(cfg, dir, baseline, edited);
}

void dispatch(const ExperimentConfig& cfg, const fs::path& dir, RunReport& rep) {
    switch (cfg.workflow) {
        case Workflow::localize: return run_localize_job(cfg, dir, rep);
        case Workflow::steer: return run_steer_job(cfg, dir, rep);
        case Workflow::stitch_train: return run_stitch_train_job(cfg, dir, rep);
        case Workflow::stitch_steer: return run_stitch_steer_job(cfg, dir, rep);
        case Workflow::sae_train: return run_sae_train_job(cfg, dir, rep);
        case Workflow::sae_intervene: return run_sae_intervene_job(cfg, dir, rep);
    }
}

double peak_rss_kb() {
    rusage usage{};
    getrusage(RUSAGE_SELF, &usage);
    return static_cast<double>(usage.ru_maxrss);
}

}  // namespace

RunReport run_job(const ExperimentConfig& cfg, const fs::path& root) {
    const RunFingerprint fp = fingerprint_config(cfg.resolved);
    const fs::path dir = root / fp.short_id();
    fs::create_directories(dir);
    write_json_file(dir / "config.snapshot.json", cfg.resolved);

    RunReport rep;
    rep.fingerprint = fp.hex;
    rep.workflow = workflow_name(cfg.workflow);
    rep.sweep_coordinate = cfg.sweep_coordinate;

    const auto started = std::chrono::steady_clock::now();
    auto finish = [&](RunReport& r) {
        r.artifacts = inventory(dir);
        write_json_file(dir / "summary.json", r.to_json());
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        write_json_file(dir / "timing.json",
                        {{"wall_clock_sec", secs}, {"peak_rss_kb", peak_rss_kb()}});
    };

    try {
        dispatch(cfg, dir, rep);
    } catch (const Error& e) {
        rep.status = "incomplete";
        rep.tables["error"] = e.what();
        finish(rep);
        throw Error(e.code(), "job " + fp.short_id() + ": " + e.what());
    } catch (const std::exception& e) {
        rep.status = "incomplete";
        rep.tables["error"] = e.what();
        finish(rep);
        fail(Errc::job_error, "job " + fp.short_id() + ": " + e.what());
    }
    finish(rep);
    return rep;
}

RunReport aggregate_reports(const std::vector<fs::path>& run_dirs) {
    require(!run_dirs.empty(), Errc::empty_set, "no run directories to aggregate");

    struct Row {
        std::string coord_key;
        json coordinate;
        std::string fingerprint;
        json metrics;
    };
    std::vector<Row> rows;
    std::string workflow;
    for (const fs::path& dir : run_dirs) {
        const fs::path summary_path = dir / "summary.json";
        std::ifstream in(summary_path);
        require(in.good(), Errc::io_failure, "cannot open " + summary_path.string());
        json summary = json::parse(in, nullptr, /*allow_exceptions=*/false);
        require(!summary.is_discarded(), Errc::corrupt_header,
                summary_path.string() + " is not valid JSON");
        const std::string w = summary.at("workflow").get<std::string>();
        if (workflow.empty()) workflow = w;
        require(w == workflow, Errc::mixed_workflows,
                "cannot aggregate " + workflow + " with " + w + " runs");
        Row row;
        row.coordinate = summary.at("sweep_coordinate");
        row.coord_key = canonical_dump(row.coordinate);
        row.fingerprint = summary.at("fingerprint").get<std::string>();
        row.metrics = summary.at("metrics");
        rows.push_back(std::move(row));
    }
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
        if (a.coord_key != b.coord_key) return a.coord_key < b.coord_key;
        return a.fingerprint < b.fingerprint;
    });

    json run_rows = json::array();
    for (const Row& r : rows)
        run_rows.push_back({{"coordinate", r.coordinate},
                            {"fingerprint", r.fingerprint},
                            {"metrics", r.metrics}});

    // Mean/std per metric within each coordinate group (population std; a
    // single run per coordinate reports std 0).
    json by_coordinate = json::array();
    for (size_t i = 0; i < rows.size();) {
        size_t j = i;
        while (j < rows.size() && rows[j].coord_key == rows[i].coord_key) ++j;
        std::map<std::string, std::vector<double>> values;
        for (size_t r = i; r < j; ++r)
            for (const auto& [name, value] : rows[r].metrics.items())
                if (value.is_number()) values[name].push_back(value.get<double>());
        json stats = json::object();
        for (const auto& [name, vs] : values) {
            double mean = 0.0;
            for (double v : vs) mean += v;
            mean /= static_cast<double>(vs.size());
            double var = 0.0;
            for (double v : vs) var += (v - mean) * (v - mean);
            var /= static_cast<double>(vs.size());
            stats[name] = {{"mean", mean}, {"std", std::sqrt(var)}};
        }
        by_coordinate.push_back({{"coordinate", rows[i].coordinate},
                                 {"n", static_cast<int>(j - i)},
                                 {"metrics", std::move(stats)}});
        i = j;
    }

    // Overall mean of each metric across all runs.
    std::map<std::string, std::pair<double, int>> overall;
    for (const Row& r : rows)
        for (const auto& [name, value] : r.metrics.items())
            if (value.is_number()) {
                overall[name].first += value.get<double>();
                overall[name].second += 1;
            }

    RunReport agg;
    std::string joined;
    for (const Row& r : rows) joined += r.fingerprint + "\n";
    agg.fingerprint = sha256_hex(joined);
    agg.workflow = workflow;
    for (const auto& [name, acc] : overall)
        agg.metrics[name] = acc.first / static_cast<double>(acc.second);
    agg.tables["runs"] = std::move(run_rows);
    agg.tables["by_coordinate"] = std::move(by_coordinate);
    return agg;
}

void write_aggregate_report(const RunReport& aggregate, const std::vector<fs::path>& run_dirs,
                            const fs::path& out_dir) {
    write_json_file(sub(out_dir, "report") / "aggregate.json", aggregate.to_json());

    // One grid row per run, in the aggregate's sorted row order.
    std::map<std::string, fs::path> by_short;
    for (const fs::path& dir : run_dirs) by_short[dir.filename().string()] = dir;
    std::vector<Tensor> grids;
    for (const json& row : aggregate.tables.at("runs")) {
        const std::string short_id = row.at("fingerprint").get<std::string>().substr(0, 16);
        auto it = by_short.find(short_id);
        if (it == by_short.end()) continue;
        for (const char* name : {"images/comparison.ppm", "images/baseline.ppm"}) {
            const fs::path img = it->second / name;
            if (fs::exists(img)) {
                grids.push_back(read_ppm(img.string()));
                break;
            }
        }
    }
    if (!grids.empty()) {
        try {
            write_ppm((sub(out_dir, "report") / "grid.ppm").string(), stack_rows(grids));
        } catch (const Error&) {
            // Mixed grid widths (e.g. differing prompt counts per run): the
            // combined strip is skipped, the tables stand alone.
        }
    }
}

RunReport run_multirun(const ExperimentConfig& cfg, const fs::path& root) {
    const std::vector<ExperimentConfig> jobs = expand_sweep(cfg);
    std::vector<fs::path> dirs;
    for (const ExperimentConfig& job : jobs) {
        const RunReport rep = run_job(job, root);
        dirs.push_back(root / rep.fingerprint.substr(0, 16));
    }
    RunReport agg = aggregate_reports(dirs);
    write_aggregate_report(agg, dirs, root / ("aggregate-" + agg.fingerprint.substr(0, 16)));
    return agg;
}

}  // namespace dreamreader
