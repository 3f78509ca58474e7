// SPDX-License-Identifier: Apache-2.0
//
// Run-time model state shared by the training stages and evaluation:
// frozen backbone, tokenizer, adapter registry, per-task architecture maps
// and task descriptors, plus example formatting and autoregressive decoding.

#pragma once

#include "acm/adapters.hpp"
#include "acm/backbone.hpp"
#include "acm/taskgen.hpp"
#include "acm/tokenizer.hpp"

#include <algorithm>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace acm {

struct Hyper {
    double lr = 1.75e-4;
    int decision_epochs = 6;
    int train_epochs = 8;
    double c_prior = 0.15; // 0.05 for similar scenarios, 0.15 for dissimilar
    double gamma = 0.05;
    double eta = 0.25;
    int top_k = 20;
    double sample_rate = 0.2;
    double pseudo_batch_fraction = 0.5;
    int batch_size = 8;
    int reduce_factor = 16;
    std::uint64_t seed = 1;
    std::vector<int> drop_layers = {1, 2, 3}; // 1-based, adapter_drop only

    void validate() const {
        if (lr <= 0 || decision_epochs <= 0 || train_epochs <= 0 || c_prior <= 0 || gamma <= 0 ||
            eta < 0 || top_k <= 0 || sample_rate <= 0 || batch_size <= 0 || reduce_factor <= 0) {
            throw std::invalid_argument("hyper: fields must be positive");
        }
        if (pseudo_batch_fraction < 0.0 || pseudo_batch_fraction >= 1.0) {
            throw std::invalid_argument("hyper: pseudo_batch_fraction must lie in [0,1)");
        }
    }
};

struct TaskDescriptor {
    int index = 0;
    std::string name;
    std::vector<std::string> question;
    int gen_token_id = -1;
};

// x' = [GEN_i] input [QSEP] question [ASEP] output [EOS]
struct FormattedExample {
    std::vector<int> tokens;
    int answer_start = 0; // index of the first output token
    int origin_task = 0;
};

inline FormattedExample format_example(const Tokenizer& tok, const TaskDescriptor& desc,
                                       const std::vector<std::string>& input,
                                       const std::vector<std::string>& output) {
    if (output.empty()) throw std::invalid_argument("format_example: empty output");
    FormattedExample ex;
    ex.origin_task = desc.index;
    ex.tokens.push_back(desc.gen_token_id);
    for (const std::string& w : input) ex.tokens.push_back(tok.id_of(w));
    ex.tokens.push_back(tok.qsep_id());
    for (const std::string& w : desc.question) ex.tokens.push_back(tok.id_of(w));
    ex.tokens.push_back(tok.asep_id());
    ex.answer_start = static_cast<int>(ex.tokens.size());
    for (const std::string& w : output) ex.tokens.push_back(tok.id_of(w));
    ex.tokens.push_back(tok.eos_id());
    return ex;
}

// Prefix used at inference: everything up to and including [ASEP].
inline std::vector<int> format_prefix(const Tokenizer& tok, const TaskDescriptor& desc,
                                      const std::vector<std::string>& input) {
    std::vector<int> ids;
    ids.push_back(desc.gen_token_id);
    for (const std::string& w : input) ids.push_back(tok.id_of(w));
    ids.push_back(tok.qsep_id());
    for (const std::string& w : desc.question) ids.push_back(tok.id_of(w));
    ids.push_back(tok.asep_id());
    return ids;
}

struct TaskRuntime {
    TaskDescriptor desc;
    TaskData data;
    std::vector<FormattedExample> train;
};

struct ContinualModel {
    Backbone backbone;
    Tokenizer tokenizer;
    LayerRegistry registry;
    std::vector<TaskDescriptor> descriptors; // all tasks of the run, in order
    std::vector<ArchitectureMap> archs;      // grows as tasks complete

    ArchitectureMap pass_arch(const std::string& task) const {
        return ArchitectureMap{task, std::vector<int>(backbone.config().n_layers, kPass)};
    }

    void freeze_everything() {
        backbone.set_all_trainable(false);
        for (const auto& m : registry.all()) m->set_trainable(false);
    }
};

inline TaskRuntime make_task_runtime(const Tokenizer& tok, int index, const std::string& name,
                                     TaskData data) {
    TaskRuntime rt;
    rt.desc.index = index;
    rt.desc.name = name;
    rt.desc.question = data.question;
    rt.desc.gen_token_id = tok.gen_id(name);
    rt.data = std::move(data);
    rt.train.reserve(rt.data.train.size());
    for (const RawExample& ex : rt.data.train) {
        rt.train.push_back(format_example(tok, rt.desc, ex.input, ex.output));
    }
    return rt;
}

struct PreparedRun {
    ContinualModel model;
    std::vector<TaskRuntime> tasks;
};

// Assembles run state from a (pretrained) backbone, its tokenizer and the
// ordered task list. Task names must match the tokenizer's [GEN_*] set.
inline PreparedRun prepare_run(Backbone backbone, Tokenizer tokenizer,
                               const std::vector<std::pair<std::string, TaskData>>& named_tasks) {
    PreparedRun prep;
    prep.model.backbone = std::move(backbone);
    prep.model.tokenizer = std::move(tokenizer);
    prep.model.registry = LayerRegistry(prep.model.backbone.config().n_layers);
    int index = 0;
    for (const auto& [name, data] : named_tasks) {
        TaskRuntime rt = make_task_runtime(prep.model.tokenizer, index, name, data);
        prep.model.descriptors.push_back(rt.desc);
        prep.tasks.push_back(std::move(rt));
        ++index;
    }
    prep.model.freeze_everything();
    return prep;
}

// ---------------------------------------------------------------------------
// decoding

struct GenerateResult {
    std::vector<int> generated; // tokens after the prefix, [EOS] excluded
    bool hit_eos = false;
};

// Greedy when top_k == 1 (ties resolved toward the lower id); otherwise
// top-k sampling by inverse CDF over the renormalized top-k softmax.
inline GenerateResult generate_tokens(const Backbone& bb, const RowHooks& hooks,
                                      const std::vector<int>& prefix, int eos_id, int top_k,
                                      std::mt19937_64* rng) {
    if (prefix.empty()) throw std::invalid_argument("generate: empty prefix");
    if (top_k > 1 && rng == nullptr) throw std::invalid_argument("generate: sampling needs an rng");
    Decoder dec(bb, hooks);
    std::vector<double> logits;
    for (std::size_t i = 0; i < prefix.size(); ++i) logits = dec.step(prefix[i]);
    GenerateResult out;
    const int max_len = bb.config().max_seq_len;
    int remaining = max_len - static_cast<int>(prefix.size());
    while (remaining-- > 0) {
        int next;
        if (top_k <= 1) {
            next = 0;
            for (std::size_t v = 1; v < logits.size(); ++v)
                if (logits[v] > logits[next]) next = static_cast<int>(v);
        } else {
            const int k = std::min<int>(top_k, static_cast<int>(logits.size()));
            std::vector<int> idx(logits.size());
            for (std::size_t v = 0; v < idx.size(); ++v) idx[v] = static_cast<int>(v);
            std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
                if (logits[a] != logits[b]) return logits[a] > logits[b];
                return a < b;
            });
            double mx = logits[idx[0]];
            double z = 0.0;
            std::vector<double> p(k);
            for (int j = 0; j < k; ++j) {
                p[j] = std::exp(logits[idx[j]] - mx);
                z += p[j];
            }
            const double u = std::uniform_real_distribution<double>(0.0, 1.0)(*rng) * z;
            double acc = 0.0;
            next = idx[k - 1];
            for (int j = 0; j < k; ++j) {
                acc += p[j];
                if (u < acc) {
                    next = idx[j];
                    break;
                }
            }
        }
        if (next == eos_id) {
            out.hit_eos = true;
            break;
        }
        out.generated.push_back(next);
        if (remaining > 0) logits = dec.step(next);
    }
    return out;
}

inline GenerateResult greedy_generate(const Backbone& bb, const RowHooks& hooks,
                                      const std::vector<int>& prefix, int eos_id) {
    return generate_tokens(bb, hooks, prefix, eos_id, 1, nullptr);
}

} // namespace acm
