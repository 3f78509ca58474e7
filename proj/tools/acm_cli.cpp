// SPDX-License-Identifier: Apache-2.0
//
// Command-line surface: pretrain, run (with resume), eval, probe, report.
// Exit codes: 0 success, 1 configuration/usage error, 2 runtime failure.

#include <CLI11.hpp>

#include "acm/config.hpp"
#include "acm/runner.hpp"

#include <exception>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace {

acm::RunConfig load_with_overrides(const std::string& config_path,
                                   const std::vector<std::string>& overrides) {
    acm::RunConfig cfg = acm::load_config(config_path);
    for (const std::string& kv : overrides) acm::apply_override(cfg, kv);
    cfg.hyper.seed = cfg.seed;
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"acm: continual sequence generation with adaptive compositional adapter modules"};
    app.require_subcommand(1);

    std::string config_path, ckpt_path, task_name, task_a, task_b, report_dir, out_csv;
    std::vector<std::string> overrides;
    bool resume = false;
    int stop_after = -1;

    CLI::App* c_pre = app.add_subcommand("pretrain", "build and freeze the backbone for a task list");
    c_pre->add_option("--config", config_path, "config file")->required();
    c_pre->add_option("--set", overrides, "override hyper fields, key=value");

    CLI::App* c_run = app.add_subcommand("run", "execute a continual run over the task sequence");
    c_run->add_option("--config", config_path, "config file")->required();
    c_run->add_option("--set", overrides, "override hyper fields, key=value");
    c_run->add_flag("--resume", resume, "continue from the latest per-task checkpoint");
    c_run->add_option("--stop-after", stop_after, "stop after N tasks (crash simulation / debugging)");

    CLI::App* c_eval = app.add_subcommand("eval", "score one task from a run checkpoint");
    c_eval->add_option("--ckpt", ckpt_path, "checkpoint directory")->required();
    c_eval->add_option("--task", task_name, "task name")->required();

    CLI::App* c_probe = app.add_subcommand("probe", "module-swap probe between two trained tasks");
    c_probe->add_option("--ckpt", ckpt_path, "checkpoint directory")->required();
    c_probe->add_option("--task-a", task_a, "old task")->required();
    c_probe->add_option("--task-b", task_b, "new task")->required();
    c_probe->add_option("--out", out_csv, "write the CSV here instead of stdout");

    CLI::App* c_rep = app.add_subcommand("report", "aggregate multi-seed run outputs");
    c_rep->add_option("--dir", report_dir, "output root holding <method>/<seed>/ runs")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        app.exit(e);
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help() << "\n";
        return 1;
    }

    try {
        if (c_pre->parsed()) {
            acm::RunConfig cfg = load_with_overrides(config_path, overrides);
            acm::run_pretrain(cfg);
            return 0;
        }
        if (c_run->parsed()) {
            acm::RunConfig cfg = load_with_overrides(config_path, overrides);
            acm::RunOutcome out = acm::run_continual(cfg, resume, stop_after);
            std::cout << "run complete: " << out.dir << "\n";
            return 0;
        }
        if (c_eval->parsed()) {
            acm::TaskScore s = acm::eval_checkpoint(ckpt_path, task_name);
            std::printf("%s: em %.4f f1 %.4f\n", task_name.c_str(), s.em, s.f1);
            return 0;
        }
        if (c_probe->parsed()) {
            std::vector<acm::ProbeRow> rows = acm::probe_checkpoint(ckpt_path, task_a, task_b);
            if (out_csv.empty()) {
                acm::write_probe_csv(std::cout, rows);
            } else {
                std::ofstream os(out_csv);
                if (!os) throw std::runtime_error("probe: cannot write " + out_csv);
                acm::write_probe_csv(os, rows);
            }
            return 0;
        }
        if (c_rep->parsed()) {
            acm::json rep = acm::aggregate_report(report_dir);
            std::ofstream os(report_dir + "/report.json");
            os << rep.dump(2) << "\n";
            std::cout << rep.dump(2) << "\n";
            return 0;
        }
    } catch (const acm::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
