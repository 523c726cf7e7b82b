// Command line front end. Every subcommand maps onto one pipeline entry
// point; artifacts land in the configured run directory and logs go to
// stderr. Exit codes: 0 success, 1 usage or input problem, 2 internal fault.
#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "replyfx/errors.hpp"
#include "replyfx/ingest.hpp"
#include "replyfx/pipeline.hpp"
#include "replyfx/synth.hpp"

namespace {

using replyfx::pipeline::PipelineConfig;

void log_warning(const std::string& msg) { std::cerr << "warning: " << msg << "\n"; }

PipelineConfig load_config(const std::string& path, std::uint64_t seed_override, bool has_seed) {
    auto config = replyfx::pipeline::load_config_file(path);
    if (has_seed) config.seed = seed_override;
    return config;
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw replyfx::InputError("cannot write file: " + path);
    out << content;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"observational reply-effects pipeline"};
    app.require_subcommand(1);

    // synth: render a synthetic corpus (and optionally its ground truth).
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic corpus");
    std::string synth_spec_path, synth_out = "corpus.jsonl", synth_truth;
    std::uint64_t synth_seed = 0;
    synth_cmd->add_option("--spec", synth_spec_path, "synthetic world spec (JSON)");
    auto* synth_seed_opt = synth_cmd->add_option("--seed", synth_seed, "world seed");
    synth_cmd->add_option("--out", synth_out, "output corpus path (JSONL)");
    synth_cmd->add_option("--truth", synth_truth, "also write ground truth JSON here");

    // run: execute one stage (or the whole chain) against a config.
    auto* run_cmd = app.add_subcommand("run", "run a pipeline stage");
    std::string run_config, run_stage = "all";
    std::uint64_t run_seed = 0;
    run_cmd->add_option("--config", run_config, "pipeline config (JSON)")->required();
    run_cmd->add_option("--stage", run_stage,
                        "label, ingest, match, balance, estimate, followups, adjust, or all");
    auto* run_seed_opt = run_cmd->add_option("--seed", run_seed, "override config seed");

    auto* sweep_cmd = app.add_subcommand("sweep", "run a robustness sweep over one axis");
    std::string sweep_config, sweep_axis;
    sweep_cmd->add_option("--config", sweep_config, "pipeline config (JSON)")->required();
    sweep_cmd
        ->add_option("--axis", sweep_axis,
                     "threshold, matching-type, min-pairs, outcome, or ordinal")
        ->required();

    auto* report_cmd = app.add_subcommand("report", "emit a report from existing artifacts");
    std::string report_config, report_format = "both";
    report_cmd->add_option("--config", report_config, "pipeline config (JSON)")->required();
    report_cmd->add_option("--format", report_format, "structured, plain-table, or both");

    auto* init_cmd = app.add_subcommand("init", "write the default config");
    std::string init_out = "config.json";
    init_cmd->add_option("--out", init_out, "where to write the config");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (synth_cmd->parsed()) {
            replyfx::synth::SynthSpec spec;
            if (!synth_spec_path.empty()) {
                std::ifstream in(synth_spec_path, std::ios::binary);
                if (!in) throw replyfx::InputError("cannot open file: " + synth_spec_path);
                std::string text((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
                spec = replyfx::pipeline::synth_spec_from_json_text(text);
            }
            if (synth_seed_opt->count() > 0) spec.seed = synth_seed;
            spec.validate();
            const auto comments = replyfx::synth::generate_threads(spec);
            std::ofstream out(synth_out, std::ios::binary | std::ios::trunc);
            if (!out) throw replyfx::InputError("cannot write file: " + synth_out);
            replyfx::ingest::write_comments(out, comments);
            std::cerr << "wrote " << comments.size() << " comments to " << synth_out << "\n";
            if (!synth_truth.empty()) {
                const auto cohort = replyfx::synth::generate_cohort(spec);
                write_text(synth_truth,
                           replyfx::pipeline::ground_truth_to_json_text(cohort.truth));
                std::cerr << "wrote ground truth to " << synth_truth << "\n";
            }
        } else if (run_cmd->parsed()) {
            const auto stage = replyfx::pipeline::stage_from_name(run_stage);
            if (!stage) throw replyfx::ConfigError("unknown stage: " + run_stage);
            const auto config = load_config(run_config, run_seed, run_seed_opt->count() > 0);
            replyfx::pipeline::run(config, *stage, log_warning);
            std::cerr << "stage " << run_stage << " complete; artifacts in "
                      << config.paths.run_dir << "\n";
        } else if (sweep_cmd->parsed()) {
            const auto axis = replyfx::pipeline::sweep_axis_from_name(sweep_axis);
            if (!axis) throw replyfx::ConfigError("unknown sweep axis: " + sweep_axis);
            const auto config = load_config(sweep_config, 0, false);
            const auto report = replyfx::pipeline::robustness_sweep(config, *axis, log_warning);
            for (const auto& point : report.points)
                std::cerr << sweep_axis << "=" << point.setting << ": "
                          << (point.ok ? "ok" : point.error) << "\n";
        } else if (report_cmd->parsed()) {
            replyfx::pipeline::ReportFormat format;
            if (report_format == "structured")
                format = replyfx::pipeline::ReportFormat::Structured;
            else if (report_format == "plain-table")
                format = replyfx::pipeline::ReportFormat::PlainTable;
            else if (report_format == "both")
                format = replyfx::pipeline::ReportFormat::Both;
            else
                throw replyfx::ConfigError("unknown report format: " + report_format);
            const auto config = load_config(report_config, 0, false);
            replyfx::pipeline::emit_report(config, format, log_warning);
            std::cerr << "report written to " << config.paths.run_dir << "\n";
        } else if (init_cmd->parsed()) {
            write_text(init_out, replyfx::pipeline::config_to_json_text(PipelineConfig{}));
            std::cerr << "wrote default config to " << init_out << "\n";
        }
    } catch (const replyfx::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
