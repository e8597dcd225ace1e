// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#include "dreamreader/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "dreamreader/errors.hpp"

namespace dreamreader {

using nlohmann::json;

const char* workflow_name(Workflow w) {
    switch (w) {
        case Workflow::localize: return "localize";
        case Workflow::steer: return "steer";
        case Workflow::stitch_train: return "stitch-train";
        case Workflow::stitch_steer: return "stitch-steer";
        case Workflow::sae_train: return "sae-train";
        case Workflow::sae_intervene: return "sae-intervene";
    }
    return "?";
}

Workflow workflow_from_name(const std::string& name) {
    for (Workflow w : {Workflow::localize, Workflow::steer, Workflow::stitch_train,
                       Workflow::stitch_steer, Workflow::sae_train, Workflow::sae_intervene})
        if (name == workflow_name(w)) return w;
    fail(Errc::parse_error, "unknown workflow '" + name + "'");
}

const json* find_by_path(const json& root, const std::string& dotted) {
    const json* cur = &root;
    size_t start = 0;
    while (true) {
        const size_t dot = dotted.find('.', start);
        const std::string key = dotted.substr(start, dot == std::string::npos
                                                         ? std::string::npos
                                                         : dot - start);
        if (!cur->is_object() || !cur->contains(key)) return nullptr;
        cur = &(*cur)[key];
        if (dot == std::string::npos) return cur;
        start = dot + 1;
    }
}

void set_by_path(json& root, const std::string& dotted, json value) {
    require(!dotted.empty() && dotted.front() != '.' && dotted.back() != '.', Errc::parse_error,
            "bad config path '" + dotted + "'");
    json* cur = &root;
    size_t start = 0;
    while (true) {
        const size_t dot = dotted.find('.', start);
        const std::string key = dotted.substr(start, dot == std::string::npos
                                                         ? std::string::npos
                                                         : dot - start);
        require(!key.empty(), Errc::parse_error, "bad config path '" + dotted + "'");
        if (dot == std::string::npos) {
            require(cur->is_object(), Errc::type_error_for_key,
                    "'" + dotted + "' descends into a non-object");
            (*cur)[key] = std::move(value);
            return;
        }
        if (!cur->contains(key)) (*cur)[key] = json::object();
        cur = &(*cur)[key];
        require(cur->is_object(), Errc::type_error_for_key,
                "'" + dotted + "' descends into a non-object");
        start = dot + 1;
    }
}

json parse_override_value(const std::string& text) {
    json v = json::parse(text, nullptr, /*allow_exceptions=*/false);
    if (v.is_discarded()) return json(text);
    return v;
}

namespace {

enum class Ty { integer, number, string, boolean, str_array, any_array, object };

const char* ty_name(Ty t) {
    switch (t) {
        case Ty::integer: return "an integer";
        case Ty::number: return "a number";
        case Ty::string: return "a string";
        case Ty::boolean: return "a boolean";
        case Ty::str_array: return "an array of strings";
        case Ty::any_array: return "an array";
        case Ty::object: return "an object";
    }
    return "?";
}

bool ty_ok(const json& v, Ty t) {
    switch (t) {
        case Ty::integer: return v.is_number_integer();
        case Ty::number: return v.is_number();
        case Ty::string: return v.is_string();
        case Ty::boolean: return v.is_boolean();
        case Ty::str_array:
            return v.is_array() &&
                   std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_string(); });
        case Ty::any_array: return v.is_array();
        case Ty::object: return v.is_object();
    }
    return false;
}

struct Field {
    const char* key;
    Ty type;
};

void check_section(const json& obj, const std::string& prefix, const std::vector<Field>& fields) {
    for (const auto& [key, value] : obj.items()) {
        const Field* match = nullptr;
        for (const Field& f : fields)
            if (key == f.key) {
                match = &f;
                break;
            }
        require(match != nullptr, Errc::unknown_key, "unknown config key '" + prefix + key + "'");
        require(ty_ok(value, match->type), Errc::type_error_for_key,
                "'" + prefix + key + "' must be " + ty_name(match->type));
    }
}

std::vector<Field> method_fields(Workflow w) {
    switch (w) {
        case Workflow::localize:
            return {{"kind", Ty::string},        {"strength", Ty::number},
                    {"schedules", Ty::str_array}, {"noise_seed", Ty::integer},
                    {"donor", Ty::string}};
        case Workflow::steer:
            return {{"steer_method", Ty::string}, {"strength", Ty::number},
                    {"schedule", Ty::string},     {"target_class", Ty::integer},
                    {"rank", Ty::integer},        {"fixed", Ty::boolean},
                    {"probe_steps", Ty::integer}, {"probe_lr", Ty::number},
                    {"loreft_steps", Ty::integer}, {"loreft_lr", Ty::number},
                    {"loreft_batch", Ty::integer}};
        case Workflow::stitch_train:
            return {{"family", Ty::string},       {"lambda", Ty::number},
                    {"hidden_dim", Ty::integer},  {"steps", Ty::integer},
                    {"lr", Ty::number},           {"log_interval", Ty::integer},
                    {"batch_size", Ty::integer},  {"val_fraction", Ty::number},
                    {"source_site", Ty::string},  {"target_site", Ty::string}};
        case Workflow::stitch_steer:
            return {{"strength", Ty::number},
                    {"lambda", Ty::number},
                    {"source_site", Ty::string},
                    {"target_site", Ty::string},
                    {"schedule", Ty::string}};
        case Workflow::sae_train:
            return {{"variant", Ty::string},     {"features", Ty::integer},
                    {"k", Ty::integer},          {"steps", Ty::integer},
                    {"lr", Ty::number},          {"batch_size", Ty::integer},
                    {"dead_window", Ty::integer}};
        case Workflow::sae_intervene:
            return {{"checkpoint", Ty::string}, {"edits", Ty::any_array}, {"schedule", Ty::string}};
    }
    return {};
}

json method_defaults(Workflow w) {
    switch (w) {
        case Workflow::localize:
            return {{"kind", "zero"},
                    {"strength", 1.0},
                    {"schedules", json::array({"all"})},
                    {"noise_seed", 0},
                    {"donor", ""}};
        case Workflow::steer:
            return {{"steer_method", "caa"},
                    {"strength", 1.0},
                    {"schedule", "all"},
                    {"target_class", 1},
                    {"rank", 2},
                    {"fixed", false},
                    {"probe_steps", 400},
                    {"probe_lr", 1e-2},
                    {"loreft_steps", 300},
                    {"loreft_lr", 1e-2},
                    {"loreft_batch", 1024}};
        case Workflow::stitch_train:
            return {{"family", "affine_ridge"},
                    {"lambda", 0.1},
                    {"hidden_dim", 32},
                    {"steps", 1000},
                    {"lr", 1e-4},
                    {"log_interval", 100},
                    {"batch_size", 32},
                    {"val_fraction", 0.2},
                    {"source_site", ""},
                    {"target_site", ""}};
        case Workflow::stitch_steer:
            return {{"strength", 1.0},
                    {"lambda", 0.1},
                    {"source_site", ""},
                    {"target_site", ""},
                    {"schedule", "all"}};
        case Workflow::sae_train:
            return {{"variant", "topk"}, {"features", 64},    {"k", 8},
                    {"steps", 2000},     {"lr", 1e-3},        {"batch_size", 64},
                    {"dead_window", 1000}};
        case Workflow::sae_intervene:
            return {{"checkpoint", ""}, {"edits", json::array()}, {"schedule", "all"}};
    }
    return json::object();
}

json defaults_for(Workflow w) {
    return {{"model",
             {{"id", "toy-diffusion"},
              {"revision", "1"},
              {"weight_seed", 0},
              {"num_steps", 4},
              {"target_id", "toy-diffusion"},
              {"target_revision", "1"},
              {"target_weight_seed", 1}}},
            {"dataset",
             {{"name", "fixture-prompts"},
              {"version", "1"},
              {"prompts", json::array()},
              {"prompt_triples", json::array()},
              {"split_seed", 0}}},
            {"sites", json::array()},
            {"method", method_defaults(w)},
            {"metrics", json::array({"alignment"})},
            {"seed", 0},
            {"sweep", json::object()},
            {"report", {{"images", true}, {"formats", json::array({"json"})}}}};
}

// Defaults fill gaps only; explicit settings always win, recursing into
// shared objects.
void merge_defaults(json& dst, const json& defs) {
    for (const auto& [key, value] : defs.items()) {
        if (!dst.contains(key))
            dst[key] = value;
        else if (dst[key].is_object() && value.is_object())
            merge_defaults(dst[key], value);
    }
}

void check_triple(const std::string& triple) {
    const size_t bars = static_cast<size_t>(std::count(triple.begin(), triple.end(), '|'));
    require(bars == 2, Errc::parse_error,
            "prompt triple '" + triple + "' must have three '|'-separated parts");
}

void check_enum_value(const json& method, const char* key,
                      std::initializer_list<const char*> allowed) {
    const std::string v = method.at(key).get<std::string>();
    for (const char* a : allowed)
        if (v == a) return;
    std::string options;
    for (const char* a : allowed) options += std::string(options.empty() ? "" : "/") + a;
    fail(Errc::type_error_for_key, std::string("'method.") + key + "' must be one of " + options);
}

void check_nonempty(const json& c, const char* dotted, Workflow w) {
    const json* v = find_by_path(c, dotted);
    require(v != nullptr && ((v->is_string() && !v->get<std::string>().empty()) ||
                             (v->is_array() && !v->empty())),
            Errc::type_error_for_key, std::string("'") + dotted + "' must be non-empty for the " +
                                          workflow_name(w) + " workflow");
}

// Per-workflow semantic checks beyond key/type shape: enum-valued knobs and
// the inputs a workflow cannot run without.
void validate_workflow_values(const json& c, Workflow w) {
    const json& method = c.at("method");
    switch (w) {
        case Workflow::localize:
            check_enum_value(method, "kind", {"scale", "zero", "corrupt", "replace"});
            check_nonempty(c, "sites", w);
            check_nonempty(c, "dataset.prompts", w);
            check_nonempty(c, "metrics", w);
            break;
        case Workflow::steer:
            check_enum_value(method, "steer_method", {"caa", "ksteer", "loreft"});
            check_nonempty(c, "sites", w);
            check_nonempty(c, "dataset.prompt_triples", w);
            break;
        case Workflow::stitch_train:
            check_enum_value(method, "family", {"identity", "affine_ridge", "mlp"});
            check_nonempty(c, "method.source_site", w);
            check_nonempty(c, "method.target_site", w);
            check_nonempty(c, "dataset.prompts", w);
            break;
        case Workflow::stitch_steer:
            check_nonempty(c, "method.source_site", w);
            check_nonempty(c, "method.target_site", w);
            check_nonempty(c, "dataset.prompt_triples", w);
            break;
        case Workflow::sae_train:
            check_enum_value(method, "variant", {"topk", "gated", "matryoshka"});
            check_nonempty(c, "sites", w);
            check_nonempty(c, "dataset.prompts", w);
            break;
        case Workflow::sae_intervene:
            check_nonempty(c, "method.checkpoint", w);
            check_nonempty(c, "dataset.prompts", w);
            break;
    }
}

void validate_resolved(const json& c, Workflow w) {
    check_section(c, "",
                  {{"config_version", Ty::integer},
                   {"workflow", Ty::string},
                   {"model", Ty::object},
                   {"dataset", Ty::object},
                   {"sites", Ty::str_array},
                   {"method", Ty::object},
                   {"metrics", Ty::str_array},
                   {"seed", Ty::integer},
                   {"sweep", Ty::object},
                   {"report", Ty::object}});
    require(c.at("config_version").get<int64_t>() == 1, Errc::type_error_for_key,
            "unsupported config_version (this build reads version 1)");
    check_section(c.at("model"), "model.",
                  {{"id", Ty::string},
                   {"revision", Ty::string},
                   {"weight_seed", Ty::integer},
                   {"num_steps", Ty::integer},
                   {"target_id", Ty::string},
                   {"target_revision", Ty::string},
                   {"target_weight_seed", Ty::integer}});
    const int num_steps = c.at("model").at("num_steps").get<int>();
    require(num_steps > 0, Errc::type_error_for_key, "'model.num_steps' must be positive");
    check_section(c.at("dataset"), "dataset.",
                  {{"name", Ty::string},
                   {"version", Ty::string},
                   {"prompts", Ty::str_array},
                   {"prompt_triples", Ty::str_array},
                   {"split_seed", Ty::integer}});
    for (const json& t : c.at("dataset").at("prompt_triples"))
        check_triple(t.get<std::string>());
    for (const json& s : c.at("sites"))
        parse_site_string(s.get<std::string>(), TimestepSchedule::all(num_steps));
    check_section(c.at("method"), "method.", method_fields(w));
    if (w == Workflow::localize)
        for (const json& s : c.at("method").at("schedules")) parse_schedule_spec(s, num_steps);
    if (w == Workflow::sae_intervene)
        for (const json& e : c.at("method").at("edits")) {
            require(e.is_object(), Errc::type_error_for_key,
                    "'method.edits' entries must be objects");
            check_section(e, "method.edits.",
                          {{"feature", Ty::integer}, {"mode", Ty::string}, {"factor", Ty::number}});
            require(e.contains("feature") && e.contains("mode"), Errc::type_error_for_key,
                    "'method.edits' entries need 'feature' and 'mode'");
            const std::string mode = e.at("mode").get<std::string>();
            require(mode == "ablate" || mode == "scale", Errc::type_error_for_key,
                    "'method.edits.mode' must be 'ablate' or 'scale'");
        }
    check_section(c.at("report"), "report.",
                  {{"images", Ty::boolean}, {"formats", Ty::str_array}});
    validate_workflow_values(c, w);
    if (w == Workflow::stitch_train || w == Workflow::stitch_steer) {
        parse_site_string(c.at("method").at("source_site").get<std::string>(),
                          TimestepSchedule::all(num_steps));
        parse_site_string(c.at("method").at("target_site").get<std::string>(),
                          TimestepSchedule::all(num_steps));
    }
    for (const auto& [axis, values] : c.at("sweep").items()) {
        require(values.is_array(), Errc::type_error_for_key,
                "sweep axis '" + axis + "' must list values in an array");
        require(axis != "workflow" && axis != "config_version" &&
                    axis.rfind("sweep", 0) != 0,
                Errc::type_error_for_key, "sweep axis may not target '" + axis + "'");
        require(find_by_path(c, axis) != nullptr, Errc::unknown_key,
                "sweep axis references unknown key '" + axis + "'");
    }
}

int parse_int_strict(const std::string& text) {
    size_t pos = 0;
    int v = 0;
    try {
        v = std::stoi(text, &pos);
    } catch (const std::exception&) {
        fail(Errc::parse_error, "'" + text + "' is not an integer");
    }
    require(pos == text.size(), Errc::parse_error, "'" + text + "' is not an integer");
    return v;
}

}  // namespace

const json& ExperimentConfig::at(const std::string& dotted) const {
    const json* v = find_by_path(resolved, dotted);
    require(v != nullptr, Errc::unknown_key, "config has no key '" + dotted + "'");
    return *v;
}

int64_t ExperimentConfig::geti(const std::string& dotted) const {
    const json& v = at(dotted);
    require(v.is_number_integer(), Errc::type_error_for_key, "'" + dotted + "' must be an integer");
    return v.get<int64_t>();
}

double ExperimentConfig::getd(const std::string& dotted) const {
    const json& v = at(dotted);
    require(v.is_number(), Errc::type_error_for_key, "'" + dotted + "' must be a number");
    return v.get<double>();
}

std::string ExperimentConfig::gets(const std::string& dotted) const {
    const json& v = at(dotted);
    require(v.is_string(), Errc::type_error_for_key, "'" + dotted + "' must be a string");
    return v.get<std::string>();
}

bool ExperimentConfig::getb(const std::string& dotted) const {
    const json& v = at(dotted);
    require(v.is_boolean(), Errc::type_error_for_key, "'" + dotted + "' must be a boolean");
    return v.get<bool>();
}

ExperimentConfig make_config(nlohmann::json raw, const std::vector<std::string>& overrides) {
    require(raw.is_object(), Errc::type_error_for_key, "config root must be an object");
    for (const std::string& item : overrides) {
        const size_t eq = item.find('=');
        require(eq != std::string::npos && eq > 0, Errc::parse_error,
                "override must look like key=value, got '" + item + "'");
        set_by_path(raw, item.substr(0, eq), parse_override_value(item.substr(eq + 1)));
    }
    require(raw.contains("workflow") && raw.at("workflow").is_string(), Errc::type_error_for_key,
            "config needs a string 'workflow' key");
    const Workflow w = workflow_from_name(raw.at("workflow").get<std::string>());
    require(raw.contains("config_version"), Errc::type_error_for_key,
            "config needs a 'config_version' key");
    json merged = std::move(raw);
    merge_defaults(merged, defaults_for(w));
    validate_resolved(merged, w);
    ExperimentConfig cfg;
    cfg.workflow = w;
    cfg.resolved = std::move(merged);
    return cfg;
}

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    require(in.good(), Errc::parse_error, "cannot open config '" + path + "'");
    std::ostringstream text;
    text << in.rdbuf();
    json raw = json::parse(text.str(), nullptr, /*allow_exceptions=*/false);
    require(!raw.is_discarded(), Errc::parse_error, "'" + path + "' is not valid JSON");
    return make_config(std::move(raw), overrides);
}

std::vector<ExperimentConfig> expand_sweep(const ExperimentConfig& cfg) {
    // nlohmann objects iterate sorted, giving the lexicographic axis order.
    std::vector<std::pair<std::string, json>> axes;
    for (const auto& [axis, values] : cfg.at("sweep").items()) {
        require(!values.empty(), Errc::empty_axis_values,
                "sweep axis '" + axis + "' has no values");
        axes.emplace_back(axis, values);
    }
    if (axes.empty()) {
        ExperimentConfig one = cfg;
        one.sweep_coordinate = json::object();
        return {one};
    }
    std::vector<size_t> stride(axes.size(), 1);
    for (size_t a = axes.size() - 1; a > 0; --a)
        stride[a - 1] = stride[a] * axes[a].second.size();
    const size_t total = stride[0] * axes[0].second.size();
    std::vector<ExperimentConfig> jobs;
    jobs.reserve(total);
    for (size_t n = 0; n < total; ++n) {
        json doc = cfg.resolved;
        json coord = json::object();
        for (size_t a = 0; a < axes.size(); ++a) {
            const json& value = axes[a].second[(n / stride[a]) % axes[a].second.size()];
            set_by_path(doc, axes[a].first, value);
            coord[axes[a].first] = value;
        }
        doc["sweep"] = json::object();
        ExperimentConfig job;
        job.workflow = cfg.workflow;
        job.resolved = std::move(doc);
        job.sweep_coordinate = std::move(coord);
        jobs.push_back(std::move(job));
    }
    return jobs;
}

TimestepSchedule parse_schedule_spec(const std::string& spec, int num_steps) {
    require(!spec.empty(), Errc::parse_error, "empty schedule spec");
    if (spec == "all") return TimestepSchedule::all(num_steps);
    TimestepSchedule s;
    const size_t dash = spec.find('-');
    if (dash != std::string::npos) {
        const int first = parse_int_strict(spec.substr(0, dash));
        const int last = parse_int_strict(spec.substr(dash + 1));
        require(first <= last, Errc::parse_error, "descending schedule range '" + spec + "'");
        s = TimestepSchedule::range(first, last);
    } else {
        std::vector<int> steps;
        size_t start = 0;
        while (true) {
            const size_t comma = spec.find(',', start);
            steps.push_back(parse_int_strict(
                spec.substr(start, comma == std::string::npos ? std::string::npos
                                                              : comma - start)));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        s = TimestepSchedule::list(std::move(steps));
    }
    s.validate(num_steps);
    return s;
}

}  // namespace dreamreader
