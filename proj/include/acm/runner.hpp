// SPDX-License-Identifier: Apache-2.0
//
// Run lifecycle: pretraining, continual runs with per-task checkpoints and
// resume, report emission, checkpoint evaluation, the module-swap probe
// and multi-seed aggregation.

#pragma once

#include "acm/config.hpp"
#include "acm/engine.hpp"
#include "acm/model_io.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace acm {

namespace fs = std::filesystem;

struct RunData {
    std::vector<std::pair<std::string, TaskData>> named;
    std::vector<TaskData> fillers;
    Tokenizer tokenizer;
    std::vector<std::string> gen_names; // run tasks then fillers, tokenizer order
};

// Filler domains are key/value echo corpora in the reserved seed band
// [380, 400): real task distributions never leak into pretraining.
inline RunData build_run_data(const RunConfig& cfg) {
    RunData rd;
    for (const TaskEntry& t : cfg.tasks) {
        TaskSpec spec = make_task(t.family, t.domain_seed, t.name, t.n_train, t.n_test);
        rd.named.emplace_back(t.name, build_task_data(spec));
    }
    if (cfg.pretrain.filler_domains > 20) {
        throw ConfigError("config: filler_domains is capped at 20");
    }
    for (int j = 0; j < cfg.pretrain.filler_domains; ++j) {
        const std::uint64_t seed = 380 + j;
        rd.fillers.push_back(filler::build(
            seed, std::max(cfg.pretrain.structure_per_filler, 8), "filler" + std::to_string(seed)));
    }
    std::vector<std::string> words, names;
    for (const auto& [name, data] : rd.named) {
        auto v = task_vocabulary(data);
        words.insert(words.end(), v.begin(), v.end());
        names.push_back(name);
    }
    // fillers get [GEN_*] rows too: pretraining covers the generation grammar
    for (const TaskData& f : rd.fillers) {
        auto v = task_vocabulary(f);
        words.insert(words.end(), v.begin(), v.end());
        names.push_back(f.spec.name);
    }
    rd.tokenizer = Tokenizer(words, names);
    rd.gen_names = std::move(names);
    return rd;
}

inline std::vector<TaskData> rd_tasks(const RunData& rd) {
    std::vector<TaskData> out;
    for (const auto& [name, data] : rd.named) out.push_back(data);
    return out;
}

// ---------------------------------------------------------------------------
// pretrain

inline PretrainReport run_pretrain(const RunConfig& cfg, bool verbose = true) {
    cfg.validate();
    if (cfg.backbone_ckpt.empty()) throw ConfigError("config: [run] backbone path missing");
    RunData rd = build_run_data(cfg);
    auto lines_txt = build_pretrain_corpus(rd_tasks(rd), rd.fillers, cfg.pretrain.drill_per_task,
                                           cfg.pretrain.echo_per_task,
                                           cfg.pretrain.structure_per_filler,
                                           derive_seed(cfg.seed, "corpus"));
    std::vector<std::vector<int>> lines;
    lines.reserve(lines_txt.size());
    for (const auto& l : lines_txt) lines.push_back(rd.tokenizer.encode(l));
    if (static_cast<int>(lines.size()) <= cfg.pretrain.heldout_lines) {
        throw ConfigError("config: pretrain corpus smaller than the held-out split");
    }
    std::vector<std::vector<int>> heldout(lines.begin(), lines.begin() + cfg.pretrain.heldout_lines);
    std::vector<std::vector<int>> train(lines.begin() + cfg.pretrain.heldout_lines, lines.end());

    BackboneConfig bc = cfg.backbone;
    bc.vocab_size = rd.tokenizer.vocab_size();
    bc.n_base = rd.tokenizer.n_base();
    Backbone bb(bc, derive_seed(cfg.seed, "pretrain_init"));
    PretrainReport rep = pretrain_backbone(bb, train, heldout, cfg.pretrain.epochs,
                                           cfg.pretrain.batch_size, cfg.pretrain.lr, cfg.seed);
    json task_list = json::array();
    for (const TaskEntry& t : cfg.tasks) {
        task_list.push_back({{"name", t.name},
                             {"family", family_to_string(t.family)},
                             {"domain_seed", t.domain_seed},
                             {"n_train", t.n_train},
                             {"n_test", t.n_test}});
    }
    json extra = {{"pretrain_report",
                   {{"initial_heldout_loss", rep.initial_heldout_loss},
                    {"heldout_loss", rep.heldout_loss},
                    {"ln_vocab", std::log(static_cast<double>(bc.vocab_size))},
                    {"epochs", rep.epochs}}},
                  {"tasks", task_list},
                  {"seed", cfg.seed}};
    save_backbone(cfg.backbone_ckpt, bb, rd.tokenizer, rd.gen_names, extra);
    if (verbose) {
        std::printf("pretrained backbone: heldout loss %.4f (untrained %.4f, ln V %.4f) -> %s\n",
                    rep.heldout_loss, rep.initial_heldout_loss,
                    std::log(static_cast<double>(bc.vocab_size)), cfg.backbone_ckpt.c_str());
    }
    return rep;
}

// ---------------------------------------------------------------------------
// run checkpoints

inline json artifacts_to_json(const RunArtifacts& art) {
    json growth = json::array();
    for (const TaskGrowth& g : art.growth) {
        json decisions = json::array();
        for (const LayerDecision& d : g.decisions) {
            json rec = {{"layer", d.layer + 1},
                        {"action", d.is_new ? "new" : (d.module_id == kPass ? "pass" : "reuse")},
                        {"module", d.module_id == kPass ? json(nullptr) : json(d.module_id)},
                        {"lambda", d.lambda}};
            decisions.push_back(rec);
        }
        growth.push_back({{"task", g.task}, {"decisions", decisions}});
    }
    json params = json::array();
    for (const LearnableRecord& r : art.params) {
        params.push_back({{"task", r.task},
                          {"module_params", r.module_params},
                          {"special_params", r.special_params},
                          {"full_model_params", r.full_model_params}});
    }
    return json{{"em_rows", art.em_rows},   {"f1_rows", art.f1_rows},
                {"growth", growth},         {"params", params},
                {"replay_counts", art.replay_counts}, {"warnings", art.warnings}};
}

inline RunArtifacts artifacts_from_json(const json& j) {
    RunArtifacts art;
    art.em_rows = j.at("em_rows").get<std::vector<std::vector<double>>>();
    art.f1_rows = j.at("f1_rows").get<std::vector<std::vector<double>>>();
    for (const json& g : j.at("growth")) {
        TaskGrowth tg;
        tg.task = g.at("task");
        for (const json& d : g.at("decisions")) {
            LayerDecision dec;
            dec.layer = d.at("layer").get<int>() - 1;
            const std::string action = d.at("action");
            dec.is_new = action == "new";
            dec.module_id = d.at("module").is_null() ? kPass : d.at("module").get<int>();
            dec.lambda = d.at("lambda").get<std::vector<double>>();
            tg.decisions.push_back(std::move(dec));
        }
        art.growth.push_back(std::move(tg));
    }
    for (const json& p : j.at("params")) {
        LearnableRecord r;
        r.task = p.at("task");
        r.module_params = p.at("module_params");
        r.special_params = p.at("special_params");
        r.full_model_params = p.at("full_model_params");
        art.params.push_back(std::move(r));
    }
    art.replay_counts = j.at("replay_counts").get<std::vector<std::size_t>>();
    art.warnings = j.at("warnings").get<std::vector<std::string>>();
    return art;
}

inline std::string adapter_tensor_prefix(const AdapterModule& m) {
    return "adapters/" + std::to_string(m.layer + 1) + "/" + std::to_string(m.module_id) + "/";
}

inline void save_run_checkpoint(const std::string& dir, const ContinualModel& model,
                                const RunConfig& cfg, const RunArtifacts& art,
                                const std::vector<std::string>& gen_tasks) {
    fs::create_directories(dir);
    std::vector<ArchiveEntry> entries;
    json freeze = json::object();
    for (const NamedParam& p : model.backbone.named_params()) {
        entries.push_back({p.name, p.tensor.shape(), p.tensor.value()});
        freeze[p.name] = p.frozen();
    }
    static const char* kAdapterTensors[8] = {"mh_down_w", "mh_down_b", "mh_up_w", "mh_up_b",
                                             "ff_down_w", "ff_down_b", "ff_up_w", "ff_up_b"};
    json modules = json::array();
    for (const auto& m : model.registry.all()) {
        auto params = m->params();
        const std::string prefix = adapter_tensor_prefix(*m);
        for (int i = 0; i < 8; ++i) {
            entries.push_back({prefix + kAdapterTensors[i], params[i].shape(), params[i].value()});
        }
        modules.push_back(
            {{"id", m->module_id}, {"layer", m->layer + 1}, {"reduce_factor", m->reduce_factor}});
    }
    write_tensor_archive(dir + "/tensors.bin", entries);

    json archs = json::array();
    for (const ArchitectureMap& a : model.archs) {
        json layers = json::array();
        for (int id : a.layers) layers.push_back(id == kPass ? json(nullptr) : json(id));
        archs.push_back({{"task", a.task}, {"layers", layers}});
    }
    json task_list = json::array();
    for (const TaskEntry& t : cfg.tasks) {
        task_list.push_back({{"name", t.name},
                             {"family", family_to_string(t.family)},
                             {"domain_seed", t.domain_seed},
                             {"n_train", t.n_train},
                             {"n_test", t.n_test}});
    }
    json manifest = {{"format_version", "v1"},
                     {"kind", "run"},
                     {"method", cfg.method},
                     {"seed", cfg.seed},
                     {"config", backbone_config_to_json(model.backbone.config())},
                     {"tokenizer", tokenizer_to_json(model.tokenizer, gen_tasks)},
                     {"modules", modules},
                     {"next_module_id", model.registry.next_id()},
                     {"archs", archs},
                     {"tasks", task_list},
                     {"completed_tasks", model.archs.size()},
                     {"artifacts", artifacts_to_json(art)}};
    std::ofstream os(dir + "/manifest.json");
    os << manifest.dump(2) << "\n";
    if (!os) throw std::runtime_error("checkpoint: cannot write manifest in " + dir);
}

struct RestoredRun {
    ContinualModel model;
    std::vector<TaskRuntime> tasks;
    RunArtifacts artifacts;
    int completed_tasks = 0;
    json manifest;
};

inline std::vector<TaskEntry> task_entries_from_json(const json& arr) {
    std::vector<TaskEntry> out;
    for (const json& t : arr) {
        TaskEntry e;
        e.name = t.at("name");
        e.family = family_from_string(t.at("family"));
        e.domain_seed = t.at("domain_seed");
        e.n_train = t.at("n_train");
        e.n_test = t.at("n_test");
        out.push_back(std::move(e));
    }
    return out;
}

inline RestoredRun load_run_checkpoint(const std::string& dir) {
    std::ifstream is(dir + "/manifest.json");
    if (!is) throw std::runtime_error("checkpoint: cannot open " + dir + "/manifest.json");
    json manifest = json::parse(is);
    if (manifest.at("format_version") != "v1") throw std::runtime_error("checkpoint: unknown format version");
    if (manifest.at("kind") != "run") throw std::runtime_error("checkpoint: not a run checkpoint");

    RestoredRun rr;
    rr.manifest = manifest;
    Tokenizer tok = tokenizer_from_json(manifest.at("tokenizer"));
    BackboneConfig bc = backbone_config_from_json(manifest.at("config"));
    Backbone bb(bc, 0);
    auto entries = read_tensor_archive(dir + "/tensors.bin");
    fill_params_from_archive(bb.named_params(), entries, "checkpoint");
    bb.set_all_trainable(false);

    std::vector<TaskEntry> tasks = task_entries_from_json(manifest.at("tasks"));
    std::vector<std::pair<std::string, TaskData>> named;
    for (const TaskEntry& t : tasks) {
        named.emplace_back(t.name,
                           build_task_data(make_task(t.family, t.domain_seed, t.name, t.n_train, t.n_test)));
    }
    PreparedRun prep = prepare_run(std::move(bb), tok, named);
    rr.model = std::move(prep.model);
    rr.tasks = std::move(prep.tasks);

    std::map<std::string, const ArchiveEntry*> by_name;
    for (const ArchiveEntry& e : entries) by_name[e.name] = &e;
    std::mt19937_64 dummy(0);
    for (const json& mj : manifest.at("modules")) {
        auto m = make_adapter(mj.at("layer").get<int>() - 1, bc.d_model, mj.at("reduce_factor"), dummy);
        const int id = rr.model.registry.register_module(m);
        if (id != mj.at("id").get<int>()) throw std::runtime_error("checkpoint: module id mismatch");
        auto params = m->params();
        static const char* kAdapterTensors[8] = {"mh_down_w", "mh_down_b", "mh_up_w", "mh_up_b",
                                                 "ff_down_w", "ff_down_b", "ff_up_w", "ff_up_b"};
        const std::string prefix = adapter_tensor_prefix(*m);
        for (int i = 0; i < 8; ++i) {
            auto it = by_name.find(prefix + kAdapterTensors[i]);
            if (it == by_name.end()) throw std::runtime_error("checkpoint: missing " + prefix + kAdapterTensors[i]);
            params[i].value() = it->second->data;
        }
        m->set_trainable(false);
    }
    rr.model.registry.set_next_id(manifest.at("next_module_id"));

    for (const json& aj : manifest.at("archs")) {
        ArchitectureMap a;
        a.task = aj.at("task");
        for (const json& l : aj.at("layers")) a.layers.push_back(l.is_null() ? kPass : l.get<int>());
        rr.model.archs.push_back(std::move(a));
    }
    rr.artifacts = artifacts_from_json(manifest.at("artifacts"));
    rr.completed_tasks = manifest.at("completed_tasks");
    return rr;
}

// ---------------------------------------------------------------------------
// report emission

namespace detail_report {

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

} // namespace detail_report

inline void emit_reports(const std::string& dir, const RunConfig& cfg,
                         const std::vector<TaskRuntime>& tasks, const RunArtifacts& art) {
    fs::create_directories(dir);
    const std::size_t n = art.em_rows.size();
    if (n == 0) throw std::runtime_error("emit_reports: no completed tasks");
    const std::vector<double>& final_em = art.em_rows.back();
    const std::vector<double>& final_f1 = art.f1_rows.back();
    Aggregate agg = aggregate(final_em);

    { // metrics.csv: one row per task plus summary rows
        std::ofstream os(dir + "/metrics.csv");
        os << "task,em,f1\n";
        for (std::size_t j = 0; j < final_em.size(); ++j) {
            os << tasks[j].desc.name << "," << detail_report::fmt(final_em[j]) << ","
               << detail_report::fmt(final_f1[j]) << "\n";
        }
        Aggregate agg_f1 = aggregate(final_f1);
        os << "mean," << detail_report::fmt(agg.mean) << "," << detail_report::fmt(agg_f1.mean) << "\n";
        if (agg.geomean) {
            os << "geomean," << detail_report::fmt(*agg.geomean) << ",";
            if (agg_f1.geomean) os << detail_report::fmt(*agg_f1.geomean);
            os << "\n";
        }
        if (!os) throw std::runtime_error("emit_reports: cannot write metrics.csv");
    }
    { // score_matrix.csv: R_{i,j}
        std::ofstream os(dir + "/score_matrix.csv");
        os << "after_task";
        for (std::size_t j = 0; j < n; ++j) os << "," << tasks[j].desc.name;
        os << "\n";
        for (std::size_t i = 0; i < n; ++i) {
            os << tasks[i].desc.name;
            for (std::size_t j = 0; j < n; ++j) {
                os << ",";
                if (j < art.em_rows[i].size()) os << detail_report::fmt(art.em_rows[i][j]);
            }
            os << "\n";
        }
    }
    { // growth.json: array of per-task decision records
        json growth = artifacts_to_json(art).at("growth");
        std::ofstream os(dir + "/growth.json");
        os << growth.dump(2) << "\n";
    }
    { // params.csv
        std::ofstream os(dir + "/params.csv");
        os << "task,module_params,special_params,total\n";
        for (const LearnableRecord& r : art.params) {
            os << r.task << "," << r.module_params << "," << r.special_params << "," << r.total() << "\n";
        }
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.1f", average_learnable(art.params));
        os << "average,,," << buf << "\n";
    }
    { // metrics.json
        json bwt_obj = json::object();
        double final_bwt = 0.0;
        for (std::size_t k = 2; k <= n; ++k) {
            final_bwt = bwt(art.em_rows, static_cast<int>(k));
            bwt_obj[std::to_string(k)] = final_bwt;
        }
        json tasks_json = json::array();
        for (std::size_t j = 0; j < final_em.size(); ++j) {
            tasks_json.push_back(
                {{"name", tasks[j].desc.name}, {"em", final_em[j]}, {"f1", final_f1[j]}});
        }
        json m = {{"format_version", "v1"},
                  {"method", cfg.method},
                  {"seed", cfg.seed},
                  {"tasks", tasks_json},
                  {"mean", agg.mean},
                  {"geomean", agg.geomean ? json(*agg.geomean) : json(nullptr)},
                  {"bwt", bwt_obj},
                  {"mean_bwt", n >= 2 ? format_mean_bwt(agg.mean, final_bwt) : format_mean_bwt(agg.mean, 0.0)},
                  {"avg_learnable", average_learnable(art.params)},
                  {"replay_counts", art.replay_counts},
                  {"warnings", art.warnings}};
        std::ofstream os(dir + "/metrics.json");
        os << m.dump(2) << "\n";
        if (!os) throw std::runtime_error("emit_reports: cannot write metrics.json");
    }
}

// ---------------------------------------------------------------------------
// run command

struct RunOutcome {
    std::string dir;
    RunArtifacts artifacts;
};

inline RunOutcome run_continual(const RunConfig& cfg, bool resume = false, int stop_after = -1,
                                bool verbose = true) {
    cfg.validate();
    const Method method = method_from_string(cfg.method);
    const std::string run_dir = cfg.output + "/" + cfg.method + "/" + std::to_string(cfg.seed);
    fs::create_directories(run_dir);

    ContinualModel model;
    std::vector<TaskRuntime> tasks;
    RunArtifacts carry;
    std::vector<std::string> gen_tasks; // full tokenizer [GEN_*] list, incl. fillers
    int start_task = 0;

    if (resume) {
        int latest = -1;
        for (int i = static_cast<int>(cfg.tasks.size()); i >= 1; --i) {
            if (fs::exists(run_dir + "/ckpt_task_" + std::to_string(i) + "/manifest.json")) {
                latest = i;
                break;
            }
        }
        if (latest < 0) throw std::runtime_error("resume: no checkpoint found under " + run_dir);
        RestoredRun rr = load_run_checkpoint(run_dir + "/ckpt_task_" + std::to_string(latest));
        if (rr.manifest.at("method") != cfg.method || rr.manifest.at("seed") != cfg.seed) {
            throw ConfigError("resume: checkpoint method/seed does not match the config");
        }
        model = std::move(rr.model);
        tasks = std::move(rr.tasks);
        carry = std::move(rr.artifacts);
        gen_tasks = rr.manifest.at("tokenizer").at("gen_tasks").get<std::vector<std::string>>();
        start_task = rr.completed_tasks;
        if (verbose) std::printf("resuming after %d completed task(s)\n", start_task);
    } else {
        if (cfg.backbone_ckpt.empty()) throw ConfigError("config: [run] backbone path missing");
        if (!fs::exists(cfg.backbone_ckpt + "/manifest.json")) {
            throw ConfigError("config: backbone checkpoint not found: " + cfg.backbone_ckpt);
        }
        LoadedBackbone lb = load_backbone(cfg.backbone_ckpt);
        std::vector<std::pair<std::string, TaskData>> named;
        for (const TaskEntry& t : cfg.tasks) {
            named.emplace_back(t.name,
                               build_task_data(make_task(t.family, t.domain_seed, t.name, t.n_train, t.n_test)));
        }
        for (const auto& [name, data] : named) {
            if (!lb.tokenizer.contains(Tokenizer::gen_token_name(name))) {
                throw ConfigError("config: backbone tokenizer lacks [GEN_" + name +
                                  "]; pretrain with the same task list");
            }
            for (const std::string& w : task_vocabulary(data)) {
                if (!lb.tokenizer.contains(w)) {
                    throw ConfigError("config: word '" + w + "' missing from the backbone tokenizer");
                }
            }
        }
        PreparedRun prep = prepare_run(std::move(lb.backbone), lb.tokenizer, named);
        model = std::move(prep.model);
        tasks = std::move(prep.tasks);
        gen_tasks = lb.gen_tasks;
    }

    const int n_run =
        stop_after > 0 ? std::min<int>(stop_after, static_cast<int>(tasks.size())) : static_cast<int>(tasks.size());

    // run_method drives the whole window; the callback persists a checkpoint
    // (with artifacts collected so far) after every completed task
    std::vector<TaskRuntime> window(tasks.begin(), tasks.begin() + n_run);
    auto on_task_done = [&](int i, const RunArtifacts& so_far) {
        save_run_checkpoint(run_dir + "/ckpt_task_" + std::to_string(i + 1), model, cfg, so_far,
                            gen_tasks);
        if (verbose) {
            std::printf("[%s seed %llu] task %d/%d (%s) done; em:", cfg.method.c_str(),
                        static_cast<unsigned long long>(cfg.seed), i + 1, n_run,
                        tasks[i].desc.name.c_str());
            for (double v : so_far.em_rows.back()) std::printf(" %.1f", v);
            std::printf("\n");
        }
    };
    RunArtifacts result =
        run_method(model, method, window, cfg.hyper, on_task_done, start_task, std::move(carry));

    if (stop_after <= 0 || n_run == static_cast<int>(tasks.size())) {
        emit_reports(run_dir, cfg, tasks, result);
    }
    return {run_dir, std::move(result)};
}

// ---------------------------------------------------------------------------
// eval / probe / report commands

inline TaskScore eval_checkpoint(const std::string& ckpt_dir, const std::string& task_name) {
    RestoredRun rr = load_run_checkpoint(ckpt_dir);
    for (std::size_t i = 0; i < rr.tasks.size(); ++i) {
        if (rr.tasks[i].desc.name != task_name) continue;
        if (i >= rr.model.archs.size()) throw std::runtime_error("eval: task not yet trained in checkpoint");
        return score_task(rr.model, rr.tasks[i], rr.model.archs[i]);
    }
    throw std::runtime_error("eval: unknown task " + task_name);
}

inline std::vector<ProbeRow> probe_checkpoint(const std::string& ckpt_dir, const std::string& task_a,
                                              const std::string& task_b) {
    RestoredRun rr = load_run_checkpoint(ckpt_dir);
    int ia = -1, ib = -1;
    for (std::size_t i = 0; i < rr.tasks.size(); ++i) {
        if (rr.tasks[i].desc.name == task_a) ia = static_cast<int>(i);
        if (rr.tasks[i].desc.name == task_b) ib = static_cast<int>(i);
    }
    if (ia < 0 || ib < 0) throw std::runtime_error("probe: unknown task name");
    if (ia >= static_cast<int>(rr.model.archs.size()) || ib >= static_cast<int>(rr.model.archs.size())) {
        throw std::runtime_error("probe: both tasks must be trained in the checkpoint");
    }
    std::vector<ProbeRow> rows;
    const int L = rr.model.backbone.config().n_layers;
    for (int l = 0; l < L; ++l) {
        const int ma = rr.model.archs[ia].layers[l];
        const int mb = rr.model.archs[ib].layers[l];
        if (ma == kPass || mb == kPass || ma == mb) continue; // no swap possible at this layer
        rows.push_back(
            module_swap_probe(rr.model, rr.tasks[ia], rr.tasks[ib], rr.model.archs[ia], rr.model.archs[ib], l));
    }
    if (rows.empty()) throw std::runtime_error("probe: no layer has distinct modules for both tasks");
    return rows;
}

inline void write_probe_csv(std::ostream& os, const std::vector<ProbeRow>& rows) {
    os << "layer,O_A,M_A,O_B,M_B\n";
    for (const ProbeRow& r : rows) {
        os << r.layer << "," << detail_report::fmt(r.o_a) << "," << detail_report::fmt(r.m_a) << ","
           << detail_report::fmt(r.o_b) << "," << detail_report::fmt(r.m_b) << "\n";
    }
}

// Aggregates <root>/<method>/<seed>/metrics.json into per-method mean/stdev
// plus paired per-seed differences between methods.
inline json aggregate_report(const std::string& root) {
    std::map<std::string, std::map<long, double>> by_method; // method -> seed -> mean em
    for (const auto& method_dir : fs::directory_iterator(root)) {
        if (!method_dir.is_directory()) continue;
        for (const auto& seed_dir : fs::directory_iterator(method_dir.path())) {
            const fs::path mpath = seed_dir.path() / "metrics.json";
            if (!fs::exists(mpath)) continue;
            std::ifstream is(mpath);
            json m = json::parse(is);
            long seed = 0;
            try {
                seed = std::stol(seed_dir.path().filename().string());
            } catch (...) {
                continue;
            }
            by_method[method_dir.path().filename().string()][seed] = m.at("mean").get<double>();
        }
    }
    if (by_method.empty()) throw std::runtime_error("report: no metrics.json found under " + root);
    json methods = json::object();
    for (const auto& [method, seeds] : by_method) {
        double mean = 0.0;
        for (const auto& [s, v] : seeds) mean += v;
        mean /= static_cast<double>(seeds.size());
        double var = 0.0;
        for (const auto& [s, v] : seeds) var += (v - mean) * (v - mean);
        const double stdev = seeds.size() > 1 ? std::sqrt(var / (seeds.size() - 1)) : 0.0;
        methods[method] = {{"runs", seeds.size()}, {"mean", mean}, {"stdev", stdev}};
    }
    json pairs = json::array();
    for (auto a = by_method.begin(); a != by_method.end(); ++a) {
        for (auto b = std::next(a); b != by_method.end(); ++b) {
            std::vector<double> diffs;
            for (const auto& [seed, va] : a->second) {
                auto it = b->second.find(seed);
                if (it != b->second.end()) diffs.push_back(va - it->second);
            }
            if (diffs.empty()) continue;
            double mean_diff = 0.0;
            for (double d : diffs) mean_diff += d;
            mean_diff /= static_cast<double>(diffs.size());
            pairs.push_back({{"method_a", a->first},
                             {"method_b", b->first},
                             {"paired_seeds", diffs.size()},
                             {"mean_diff", mean_diff},
                             {"per_seed_diff", diffs}});
        }
    }
    return json{{"format_version", "v1"}, {"methods", methods}, {"paired", pairs}};
}

} // namespace acm
