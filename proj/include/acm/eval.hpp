// SPDX-License-Identifier: Apache-2.0
//
// Scoring (exact match + a softer token-F1 diagnostic), the aggregate
// metrics (mean, geometric mean, backward transfer), learnable-parameter
// accounting, and the module-swap probe.

#pragma once

#include "acm/model.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace acm {

struct TaskScore {
    double em = 0.0; // percent exact match
    double f1 = 0.0; // percent token-overlap F1
};

// Greedy decode from "[GEN_i] input [QSEP] question [ASEP]"; exact match
// against the reference output.
inline TaskScore score_task(const ContinualModel& model, const TaskRuntime& task,
                            const ArchitectureMap& arch) {
    RowHooks hooks = row_hooks_for_arch(model.registry, arch);
    const int eos = model.tokenizer.eos_id();
    long matches = 0;
    double f1_sum = 0.0;
    for (const RawExample& ex : task.data.test) {
        std::vector<int> prefix = format_prefix(model.tokenizer, task.desc, ex.input);
        GenerateResult gen = greedy_generate(model.backbone, hooks, prefix, eos);
        std::vector<int> want = model.tokenizer.encode(ex.output);
        if (gen.generated == want) ++matches;
        // token-overlap F1 over multisets
        std::map<int, int> ref_counts;
        for (int id : want) ++ref_counts[id];
        long overlap = 0;
        for (int id : gen.generated) {
            auto it = ref_counts.find(id);
            if (it != ref_counts.end() && it->second > 0) {
                --it->second;
                ++overlap;
            }
        }
        const std::size_t denom = gen.generated.size() + want.size();
        f1_sum += denom == 0 ? 0.0 : 2.0 * overlap / static_cast<double>(denom);
    }
    const double n = static_cast<double>(task.data.test.size());
    return {100.0 * matches / n, 100.0 * f1_sum / n};
}

// ---------------------------------------------------------------------------
// aggregate metrics

struct Aggregate {
    double mean = 0.0;
    std::optional<double> geomean; // absent when any score is zero
};

inline Aggregate aggregate(const std::vector<double>& scores) {
    if (scores.empty()) throw std::invalid_argument("aggregate: no scores");
    Aggregate a;
    bool any_zero = false;
    double log_sum = 0.0;
    for (double s : scores) {
        a.mean += s;
        if (s <= 0.0) {
            any_zero = true;
        } else {
            log_sum += std::log(s);
        }
    }
    a.mean /= static_cast<double>(scores.size());
    if (!any_zero) a.geomean = std::exp(log_sum / static_cast<double>(scores.size()));
    return a;
}

// BWT_k = mean over i in [1, k-1] of R[k][i] - R[i][i]; rows are 0-based
// internally, k counts trained tasks.
inline double bwt(const std::vector<std::vector<double>>& rows, int k) {
    if (k < 2) throw std::invalid_argument("BWT undefined for single task");
    if (static_cast<int>(rows.size()) < k || static_cast<int>(rows[k - 1].size()) < k) {
        throw std::invalid_argument("bwt: score matrix row " + std::to_string(k) + " not filled");
    }
    double acc = 0.0;
    for (int i = 1; i < k; ++i) acc += rows[k - 1][i - 1] - rows[i - 1][i - 1];
    return acc / (k - 1);
}

// Table shape "66.1 (+2.1)"
inline std::string format_mean_bwt(double mean, double bwt_value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.1f (%+.1f)", mean, bwt_value);
    return buf;
}

// ---------------------------------------------------------------------------
// learnable parameter accounting

// Per task: parameters newly created for and trained on that task. Modules
// plus the task's own special-token row; decision-stage coefficients and
// discarded candidates never count. Full-model methods count everything.
struct LearnableRecord {
    std::string task;
    long module_params = 0;
    long special_params = 0;
    long full_model_params = 0;

    long total() const { return full_model_params > 0 ? full_model_params : module_params + special_params; }
};

inline double average_learnable(const std::vector<LearnableRecord>& records) {
    if (records.empty()) return 0.0;
    double acc = 0.0;
    for (const LearnableRecord& r : records) acc += static_cast<double>(r.total());
    return acc / static_cast<double>(records.size());
}

// ---------------------------------------------------------------------------
// module swap probe

namespace detail_eval {

inline std::map<std::string, double> l2_word_freq(const std::vector<std::vector<std::string>>& docs) {
    std::map<std::string, double> freq;
    for (const auto& doc : docs)
        for (const std::string& w : doc) freq[w] += 1.0;
    double norm = 0.0;
    for (const auto& [w, c] : freq) norm += c * c;
    norm = std::sqrt(norm);
    if (norm > 0) {
        for (auto& [w, c] : freq) c /= norm;
    }
    return freq;
}

inline double cosine(const std::map<std::string, double>& a, const std::map<std::string, double>& b) {
    double dot = 0.0;
    for (const auto& [w, c] : a) {
        auto it = b.find(w);
        if (it != b.end()) dot += c * it->second;
    }
    return dot;
}

inline std::map<std::string, double> corpus_freq(const TaskRuntime& task) {
    std::vector<std::vector<std::string>> docs;
    for (const RawExample& ex : task.data.train) {
        docs.push_back(ex.input);
        docs.push_back(task.data.question);
        docs.push_back(ex.output);
    }
    return l2_word_freq(docs);
}

} // namespace detail_eval

struct ProbeRow {
    int layer = 0; // 1-based in reports
    double o_a = 0.0, m_a = 0.0; // similarity of original/modified outputs to task A's corpus
    double o_b = 0.0, m_b = 0.0; // and to task B's corpus
};

// Decode task B's test inputs under its original architecture (O) and with
// the layer-k module swapped for task A's module (M); compare output
// word-frequency vectors against both tasks' corpora.
inline ProbeRow module_swap_probe(const ContinualModel& model, const TaskRuntime& task_a,
                                  const TaskRuntime& task_b, const ArchitectureMap& arch_a,
                                  const ArchitectureMap& arch_b, int layer) {
    const int L = model.backbone.config().n_layers;
    if (layer < 0 || layer >= L) throw std::invalid_argument("probe: layer out of range");
    const int mod_b = arch_b.layers[layer];
    const int mod_a = arch_a.layers[layer];
    if (mod_b == kPass || mod_a == kPass || mod_a == mod_b) {
        throw std::invalid_argument("probe: layer " + std::to_string(layer + 1) +
                                    " lacks a new module for task B and an old module for task A");
    }
    ArchitectureMap modified = arch_b;
    modified.layers[layer] = mod_a;

    auto decode_all = [&](const ArchitectureMap& arch) {
        RowHooks hooks = row_hooks_for_arch(model.registry, arch);
        std::vector<std::vector<std::string>> outputs;
        for (const RawExample& ex : task_b.data.test) {
            std::vector<int> prefix = format_prefix(model.tokenizer, task_b.desc, ex.input);
            GenerateResult gen =
                greedy_generate(model.backbone, hooks, prefix, model.tokenizer.eos_id());
            std::vector<std::string> words;
            for (int id : gen.generated) {
                if (!model.tokenizer.is_special(id)) words.push_back(model.tokenizer.word_of(id));
            }
            outputs.push_back(std::move(words));
        }
        return detail_eval::l2_word_freq(outputs);
    };

    auto freq_o = decode_all(arch_b);
    auto freq_m = decode_all(modified);
    auto corpus_a = detail_eval::corpus_freq(task_a);
    auto corpus_b = detail_eval::corpus_freq(task_b);
    ProbeRow row;
    row.layer = layer + 1;
    row.o_a = detail_eval::cosine(freq_o, corpus_a);
    row.m_a = detail_eval::cosine(freq_m, corpus_a);
    row.o_b = detail_eval::cosine(freq_o, corpus_b);
    row.m_b = detail_eval::cosine(freq_m, corpus_b);
    return row;
}

} // namespace acm
