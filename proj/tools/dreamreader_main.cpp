// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dreamreader/config.hpp"
#include "dreamreader/errors.hpp"
#include "dreamreader/fingerprint.hpp"
#include "dreamreader/pipeline.hpp"

namespace {

constexpr int kExitConfigError = 2;
constexpr int kExitJobError = 3;

bool is_config_error(dreamreader::Errc c) {
    using dreamreader::Errc;
    return c == Errc::parse_error || c == Errc::unknown_key || c == Errc::type_error_for_key ||
           c == Errc::empty_axis_values;
}

int do_run(const std::string& config_path, const std::vector<std::string>& overrides,
           bool multirun) {
    const dreamreader::ExperimentConfig cfg = dreamreader::load_config(config_path, overrides);
    const std::filesystem::path root = dreamreader::runs_root();
    if (multirun) {
        const dreamreader::RunReport agg = dreamreader::run_multirun(cfg, root);
        std::printf("aggregate %s (%zu runs)\n", agg.fingerprint.substr(0, 16).c_str(),
                    agg.tables.at("runs").size());
        std::printf("%s\n", agg.to_json().dump(2).c_str());
    } else {
        const dreamreader::RunReport rep = dreamreader::run_job(cfg, root);
        const std::filesystem::path dir = root / rep.fingerprint.substr(0, 16);
        std::printf("run %s -> %s\n", rep.fingerprint.substr(0, 16).c_str(), dir.string().c_str());
        std::printf("%s\n", rep.metrics.dump(2).c_str());
    }
    return 0;
}

int do_report(const std::vector<std::string>& run_dirs) {
    std::vector<std::filesystem::path> dirs(run_dirs.begin(), run_dirs.end());
    const dreamreader::RunReport agg = dreamreader::aggregate_reports(dirs);
    std::printf("%s\n", agg.to_json().dump(2).c_str());
    return 0;
}

int do_validate(const std::string& config_path, const std::vector<std::string>& overrides) {
    const dreamreader::ExperimentConfig cfg = dreamreader::load_config(config_path, overrides);
    const dreamreader::RunFingerprint fp = dreamreader::fingerprint_config(cfg.resolved);
    std::printf("ok %s %s\n", dreamreader::workflow_name(cfg.workflow), fp.hex.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dreamreader: diffusion interpretability workflows"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    std::vector<std::string> run_dirs;
    bool multirun = false;

    CLI::App* run = app.add_subcommand("run", "execute a config as one job or a sweep");
    run->add_option("config", config_path, "config file (JSON)")->required();
    run->add_option("--set", overrides, "override as key=value (repeatable)");
    run->add_flag("--multirun", multirun, "expand the sweep section and aggregate");

    CLI::App* report = app.add_subcommand("report", "aggregate finished run directories");
    report->add_option("run_dirs", run_dirs, "run directories")->required();

    CLI::App* validate = app.add_subcommand("validate", "schema-check a config and print its fingerprint");
    validate->add_option("config", config_path, "config file (JSON)")->required();
    validate->add_option("--set", overrides, "override as key=value (repeatable)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return do_run(config_path, overrides, multirun);
        if (report->parsed()) return do_report(run_dirs);
        if (validate->parsed()) return do_validate(config_path, overrides);
    } catch (const dreamreader::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return is_config_error(e.code()) ? kExitConfigError : kExitJobError;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitJobError;
    }
    return 0;
}
