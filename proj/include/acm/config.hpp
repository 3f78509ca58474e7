// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: sectioned key/value text plus a [tasks] table, with
// --set overrides for every hyperparameter field.

#pragma once

#include "acm/engine.hpp"
#include "acm/model.hpp"
#include "acm/taskgen.hpp"
#include "acm/util.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace acm {

// Configuration problems exit with code 1; runtime failures with code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TaskEntry {
    std::string name;
    TaskFamily family = TaskFamily::slot2text;
    std::uint64_t domain_seed = 0;
    int n_train = 500;
    int n_test = 200;
};

struct PretrainOptions {
    int epochs = 8;
    int batch_size = 8;
    double lr = 3e-3;
    int drill_per_task = 30;
    int echo_per_task = 60;
    int structure_per_filler = 120;
    int heldout_lines = 40;
    int filler_domains = 4;
};

struct RunConfig {
    std::string method = "acm";
    std::uint64_t seed = 1;
    std::string output;        // defaults to $ACM_OUT or "runs"
    std::string backbone_ckpt; // checkpoint directory
    BackboneConfig backbone;   // vocab fields filled at pretrain time
    PretrainOptions pretrain;
    Hyper hyper;
    std::vector<TaskEntry> tasks;

    void validate() const {
        if (tasks.empty()) throw ConfigError("config: no tasks given");
        std::set<std::string> names;
        for (const TaskEntry& t : tasks) {
            if (!names.insert(t.name).second) throw ConfigError("config: duplicate task name " + t.name);
            if (t.domain_seed >= 380) {
                throw ConfigError("config: task domain seeds must be < 380 (fillers use 380+)");
            }
        }
        try {
            hyper.validate();
        } catch (const std::exception& e) {
            throw ConfigError(e.what());
        }
    }
};

namespace detail_cfg {

inline double to_double(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (...) {
        throw ConfigError("config: bad numeric value for " + key + ": " + v);
    }
}
inline long to_long(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        long l = std::stol(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return l;
    } catch (...) {
        throw ConfigError("config: bad integer value for " + key + ": " + v);
    }
}

inline std::vector<int> to_int_list(const std::string& v, const std::string& key) {
    std::vector<int> out;
    std::string item;
    std::stringstream ss(v);
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(static_cast<int>(to_long(item, key)));
    }
    return out;
}

} // namespace detail_cfg

// Applies one "key=value" to the hyper block (plus method/seed/output).
inline void apply_override(RunConfig& cfg, const std::string& kv) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got: " + kv);
    std::string key = trim(kv.substr(0, eq));
    std::string value = trim(kv.substr(eq + 1));
    if (key.rfind("hyper.", 0) == 0) key = key.substr(6);
    using namespace detail_cfg;
    Hyper& h = cfg.hyper;
    if (key == "lr") h.lr = to_double(value, key);
    else if (key == "decision_epochs") h.decision_epochs = static_cast<int>(to_long(value, key));
    else if (key == "train_epochs") h.train_epochs = static_cast<int>(to_long(value, key));
    else if (key == "c_prior") h.c_prior = to_double(value, key);
    else if (key == "gamma") h.gamma = to_double(value, key);
    else if (key == "eta") h.eta = to_double(value, key);
    else if (key == "top_k") h.top_k = static_cast<int>(to_long(value, key));
    else if (key == "sample_rate") h.sample_rate = to_double(value, key);
    else if (key == "pseudo_batch_fraction") h.pseudo_batch_fraction = to_double(value, key);
    else if (key == "batch_size") h.batch_size = static_cast<int>(to_long(value, key));
    else if (key == "reduce_factor") h.reduce_factor = static_cast<int>(to_long(value, key));
    else if (key == "drop_layers") h.drop_layers = to_int_list(value, key);
    else if (key == "seed") { cfg.seed = static_cast<std::uint64_t>(to_long(value, key)); h.seed = cfg.seed; }
    else if (key == "method") cfg.method = value;
    else if (key == "output") cfg.output = value;
    else throw ConfigError("--set: unknown key " + key);
}

inline RunConfig parse_config(std::istream& is, const std::string& origin = "<config>") {
    RunConfig cfg;
    const char* env_out = std::getenv("ACM_OUT");
    cfg.output = env_out ? env_out : "runs";

    std::string section;
    std::string line;
    int lineno = 0;
    using namespace detail_cfg;
    while (std::getline(is, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(origin + ":" + std::to_string(lineno) + ": bad section");
            section = line.substr(1, line.size() - 2);
            continue;
        }
        if (section == "tasks") {
            // rows: name family domain_seed [n_train n_test]
            std::vector<std::string> f = split_ws(line);
            if (f.size() != 3 && f.size() != 5) {
                throw ConfigError(origin + ":" + std::to_string(lineno) +
                                  ": task rows need 'name family domain_seed [n_train n_test]'");
            }
            TaskEntry t;
            t.name = f[0];
            try {
                t.family = family_from_string(f[1]);
            } catch (const std::exception& e) {
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
            }
            t.domain_seed = static_cast<std::uint64_t>(to_long(f[2], "domain_seed"));
            if (f.size() == 5) {
                t.n_train = static_cast<int>(to_long(f[3], "n_train"));
                t.n_test = static_cast<int>(to_long(f[4], "n_test"));
            }
            cfg.tasks.push_back(std::move(t));
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (section == "run") {
            if (key == "method") cfg.method = value;
            else if (key == "seed") { cfg.seed = static_cast<std::uint64_t>(to_long(value, key)); }
            else if (key == "output") cfg.output = value;
            else if (key == "backbone") cfg.backbone_ckpt = value;
            else throw ConfigError(origin + ": unknown [run] key " + key);
        } else if (section == "backbone") {
            if (key == "n_layers") cfg.backbone.n_layers = static_cast<int>(to_long(value, key));
            else if (key == "d_model") cfg.backbone.d_model = static_cast<int>(to_long(value, key));
            else if (key == "n_heads") cfg.backbone.n_heads = static_cast<int>(to_long(value, key));
            else if (key == "d_ff") cfg.backbone.d_ff = static_cast<int>(to_long(value, key));
            else if (key == "max_seq_len") cfg.backbone.max_seq_len = static_cast<int>(to_long(value, key));
            else throw ConfigError(origin + ": unknown [backbone] key " + key);
        } else if (section == "pretrain") {
            if (key == "epochs") cfg.pretrain.epochs = static_cast<int>(to_long(value, key));
            else if (key == "batch_size") cfg.pretrain.batch_size = static_cast<int>(to_long(value, key));
            else if (key == "lr") cfg.pretrain.lr = to_double(value, key);
            else if (key == "drill_per_task") cfg.pretrain.drill_per_task = static_cast<int>(to_long(value, key));
            else if (key == "echo_per_task") cfg.pretrain.echo_per_task = static_cast<int>(to_long(value, key));
            else if (key == "structure_per_filler")
                cfg.pretrain.structure_per_filler = static_cast<int>(to_long(value, key));
            else if (key == "heldout_lines") cfg.pretrain.heldout_lines = static_cast<int>(to_long(value, key));
            else if (key == "filler_domains")
                cfg.pretrain.filler_domains = static_cast<int>(to_long(value, key));
            else throw ConfigError(origin + ": unknown [pretrain] key " + key);
        } else if (section == "hyper") {
            apply_override(cfg, key + "=" + value);
        } else {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": unknown section [" + section + "]");
        }
    }
    cfg.hyper.seed = cfg.seed;
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open " + path);
    return parse_config(is, path);
}

} // namespace acm
