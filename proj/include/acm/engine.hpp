// SPDX-License-Identifier: Apache-2.0
//
// The two-stage continual-learning method plus every baseline mode:
//   decision stage  — insert one candidate module per layer, train mixing
//                     coefficients and candidates only, select per layer by
//                     the largest mixing weight;
//   training stage  — train the selected architecture with the combined
//                     solve/generate loss and pseudo experience replay.

#pragma once

#include "acm/eval.hpp"
#include "acm/model.hpp"
#include "acm/optim.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace acm {

enum class Method { finetune, lamol, adapter_cl, adapter_drop, adapter_lamol, acm };

inline Method method_from_string(const std::string& s) {
    if (s == "finetune") return Method::finetune;
    if (s == "lamol") return Method::lamol;
    if (s == "adapter_cl") return Method::adapter_cl;
    if (s == "adapter_drop") return Method::adapter_drop;
    if (s == "adapter_lamol") return Method::adapter_lamol;
    if (s == "acm") return Method::acm;
    throw std::invalid_argument("unknown method: " + s);
}

inline std::string method_to_string(Method m) {
    switch (m) {
        case Method::finetune: return "finetune";
        case Method::lamol: return "lamol";
        case Method::adapter_cl: return "adapter_cl";
        case Method::adapter_drop: return "adapter_drop";
        case Method::adapter_lamol: return "adapter_lamol";
        case Method::acm: return "acm";
    }
    return "?";
}

inline bool method_uses_replay(Method m) {
    return m == Method::lamol || m == Method::adapter_lamol || m == Method::acm;
}
inline bool method_uses_adapters(Method m) {
    return m == Method::adapter_cl || m == Method::adapter_drop || m == Method::adapter_lamol ||
           m == Method::acm;
}

// ---------------------------------------------------------------------------
// losses

using HooksFn = std::function<const Hooks*(int origin_task)>;

struct BatchLoss {
    Tensor train;     // L_finetune + eta * L_gen
    double finetune = 0.0;
    double gen = 0.0;
    int skipped = 0; // examples with an empty supervision window
};

// One forward per example; both losses share it. Means are taken over all
// masked positions of the batch.
inline BatchLoss batch_losses(Tape* tape, const ContinualModel& model,
                              const std::vector<const FormattedExample*>& batch, const HooksFn& hooks_fn,
                              double eta) {
    BatchLoss out;
    Tensor ft_sum = Tensor::scalar(0.0);
    Tensor gen_sum = Tensor::scalar(0.0);
    long ft_count = 0, gen_count = 0;
    for (const FormattedExample* ex : batch) {
        const int n = static_cast<int>(ex->tokens.size());
        if (n < 2 || ex->answer_start >= n) {
            ++out.skipped;
            continue;
        }
        std::vector<int> in(ex->tokens.begin(), ex->tokens.end() - 1);
        std::vector<int> tg(ex->tokens.begin() + 1, ex->tokens.end());
        std::vector<int> gen_mask(n - 1, 1);
        std::vector<int> ft_mask(n - 1, 0);
        for (int t = ex->answer_start - 1; t < n - 1; ++t) ft_mask[t] = 1;
        const Hooks* hooks = hooks_fn(ex->origin_task);
        Tensor logits = model.backbone.forward(tape, in, hooks);
        ft_sum = add(tape, ft_sum, cross_entropy_masked_sum(tape, logits, tg, ft_mask));
        if (eta != 0.0) {
            gen_sum = add(tape, gen_sum, cross_entropy_masked_sum(tape, logits, tg, gen_mask));
        }
        ft_count += n - ex->answer_start;
        gen_count += n - 1;
    }
    if (ft_count == 0) throw std::invalid_argument("empty supervision window");
    Tensor ft_mean = scale(tape, ft_sum, 1.0 / static_cast<double>(ft_count));
    out.finetune = ft_mean.item();
    if (eta != 0.0) {
        Tensor gen_mean = scale(tape, gen_sum, 1.0 / static_cast<double>(gen_count));
        out.gen = gen_mean.item();
        out.train = add(tape, ft_mean, scale(tape, gen_mean, eta));
    } else {
        out.train = ft_mean;
    }
    return out;
}

inline Tensor loss_finetune(Tape* tape, const ContinualModel& model,
                            const std::vector<const FormattedExample*>& batch, const HooksFn& hooks_fn) {
    return batch_losses(tape, model, batch, hooks_fn, 0.0).train;
}

inline Tensor loss_gen(Tape* tape, const ContinualModel& model,
                       const std::vector<const FormattedExample*>& batch, const HooksFn& hooks_fn) {
    Tensor gen_sum = Tensor::scalar(0.0);
    long gen_count = 0;
    for (const FormattedExample* ex : batch) {
        const int n = static_cast<int>(ex->tokens.size());
        if (n < 2) continue;
        std::vector<int> in(ex->tokens.begin(), ex->tokens.end() - 1);
        std::vector<int> tg(ex->tokens.begin() + 1, ex->tokens.end());
        std::vector<int> mask(n - 1, 1);
        Tensor logits = model.backbone.forward(tape, in, hooks_fn(ex->origin_task));
        gen_sum = add(tape, gen_sum, cross_entropy_masked_sum(tape, logits, tg, mask));
        gen_count += n - 1;
    }
    if (gen_count == 0) throw std::invalid_argument("loss_gen: empty batch");
    return scale(tape, gen_sum, 1.0 / static_cast<double>(gen_count));
}

inline Tensor loss_train(Tape* tape, const ContinualModel& model,
                         const std::vector<const FormattedExample*>& batch, const HooksFn& hooks_fn,
                         double eta) {
    return batch_losses(tape, model, batch, hooks_fn, eta).train;
}

// ---------------------------------------------------------------------------
// decision stage

struct LayerDecision {
    int layer = 0; // 0-based internally; reported 1-based externally
    bool is_new = false;
    int module_id = kPass;
    std::vector<double> lambda;
};

struct DecisionResult {
    ArchitectureMap arch;
    std::vector<LayerDecision> decisions;
    int new_modules = 0;
};

inline DecisionResult decision_stage(ContinualModel& model, const TaskRuntime& task, const Hyper& hyper,
                                     std::uint64_t run_seed) {
    if (task.train.empty()) throw std::invalid_argument("decision_stage: no training data");
    const int L = model.backbone.config().n_layers;
    const int d = model.backbone.config().d_model;

    model.freeze_everything();

    // one fresh candidate per layer (identity at step 0) + prior-initialized
    // coefficients over [old modules..., candidate]
    std::vector<std::shared_ptr<AdapterModule>> candidates(L);
    std::vector<Tensor> coeffs(L);
    std::vector<Tensor> trainables;
    for (int l = 0; l < L; ++l) {
        std::mt19937_64 rng = make_rng(run_seed, "candidate_init", task.desc.index, l);
        candidates[l] = make_adapter(l, d, hyper.reduce_factor, rng);
        candidates[l]->set_trainable(true);
        const int k = static_cast<int>(model.registry.at_layer(l).size());
        coeffs[l] = init_coefficients(k, hyper.c_prior);
        for (const Tensor& t : candidates[l]->params()) trainables.push_back(t);
        trainables.push_back(coeffs[l]);
    }

    Hooks mix_hooks(L);
    for (int l = 0; l < L; ++l) {
        std::vector<std::shared_ptr<AdapterModule>> cands = model.registry.at_layer(l);
        cands.push_back(candidates[l]);
        Tensor c = coeffs[l];
        mix_hooks[l].mh = [cands, c](Tape* tp, const Tensor& o) {
            return mix_apply(tp, cands, softmax_lastdim(tp, c), Site::MH, o);
        };
        mix_hooks[l].ff = [cands, c](Tape* tp, const Tensor& o) {
            return mix_apply(tp, cands, softmax_lastdim(tp, c), Site::FF, o);
        };
    }
    HooksFn hooks_fn = [&mix_hooks](int) { return &mix_hooks; };

    AdamW opt(hyper.lr);
    opt.add_params(trainables);

    std::vector<std::size_t> order(task.train.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < hyper.decision_epochs; ++epoch) {
        std::mt19937_64 rng = make_rng(run_seed, "decision_order", task.desc.index, epoch);
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
            const std::size_t end = std::min(order.size(), start + hyper.batch_size);
            std::vector<const FormattedExample*> batch;
            for (std::size_t i = start; i < end; ++i) batch.push_back(&task.train[order[i]]);
            Tape tape;
            BatchLoss bl = batch_losses(&tape, model, batch, hooks_fn, hyper.eta);
            Tensor loss = add(&tape, bl.train, entropy_penalty(&tape, coeffs, hyper.gamma));
            tape.backward(loss);
            opt.step();
        }
    }

    // selection: per layer, argmax lambda; ties go to the oldest candidate
    DecisionResult res;
    res.arch.task = task.desc.name;
    res.arch.layers.assign(L, kPass);
    for (int l = 0; l < L; ++l) {
        const auto& old_mods = model.registry.at_layer(l);
        std::vector<double> lam = softmax_values(coeffs[l].value());
        std::size_t best = 0;
        for (std::size_t i = 1; i < lam.size(); ++i)
            if (lam[i] > lam[best]) best = i;
        LayerDecision dec;
        dec.layer = l;
        dec.lambda = lam;
        if (best == lam.size() - 1) {
            candidates[l]->set_trainable(false);
            dec.module_id = model.registry.register_module(candidates[l]); // keeps learned weights
            dec.is_new = true;
            ++res.new_modules;
        } else {
            dec.module_id = old_mods[best]->module_id;
            dec.is_new = false;
        }
        res.arch.layers[l] = dec.module_id;
        res.decisions.push_back(std::move(dec));
    }
    return res;
}

// ---------------------------------------------------------------------------
// pseudo experience replay

struct ReplayBuffer {
    std::map<int, std::vector<FormattedExample>> by_task;
    std::vector<std::string> warnings;

    bool empty() const {
        for (const auto& [t, v] : by_task)
            if (!v.empty()) return false;
        return true;
    }
    std::size_t total() const {
        std::size_t n = 0;
        for (const auto& [t, v] : by_task) n += v.size();
        return n;
    }
};

// Sequence shape check + question fidelity; returns a re-validated example.
inline std::optional<FormattedExample> parse_pseudo_sample(const Tokenizer& tok,
                                                           const TaskDescriptor& desc,
                                                           const std::vector<int>& generated,
                                                           bool hit_eos) {
    if (!hit_eos) return std::nullopt; // length overflow
    int qsep = -1, asep = -1;
    for (std::size_t i = 0; i < generated.size(); ++i) {
        const int id = generated[i];
        if (id == tok.qsep_id()) {
            if (qsep >= 0) return std::nullopt;
            qsep = static_cast<int>(i);
        } else if (id == tok.asep_id()) {
            if (asep >= 0) return std::nullopt;
            asep = static_cast<int>(i);
        } else if (tok.is_special(id)) {
            return std::nullopt; // stray [EOS]/[PAD]/[GEN_*] inside the body
        }
    }
    if (qsep < 0 || asep < 0 || asep < qsep) return std::nullopt;
    if (asep + 1 >= static_cast<int>(generated.size())) return std::nullopt; // empty output
    // question section must match the task descriptor
    std::vector<int> want;
    for (const std::string& w : desc.question) want.push_back(tok.id_of(w));
    if (static_cast<int>(want.size()) != asep - qsep - 1) return std::nullopt;
    for (int i = 0; i < static_cast<int>(want.size()); ++i) {
        if (generated[qsep + 1 + i] != want[i]) return std::nullopt;
    }
    if (qsep == 0) return std::nullopt; // empty input
    FormattedExample ex;
    ex.origin_task = desc.index;
    ex.tokens.push_back(desc.gen_token_id);
    ex.tokens.insert(ex.tokens.end(), generated.begin(), generated.end());
    ex.tokens.push_back(tok.eos_id());
    ex.answer_start = 1 + asep + 1; // [GEN] shifts all positions by one
    return ex;
}

// Old tasks qualify when they share at least one module with the current
// architecture (every old task qualifies for lamol). The total target is
// round(sample_rate * |current train set|), split evenly across qualifying
// tasks; malformed samples are discarded and attempts are capped.
inline ReplayBuffer generate_pseudo(const ContinualModel& model, int current_task,
                                    const ArchitectureMap& current_arch, Method method,
                                    int current_train_size, const Hyper& hyper, std::uint64_t run_seed) {
    ReplayBuffer buf;
    if (!method_uses_replay(method) || current_task == 0) return buf;
    std::vector<int> qualifying;
    for (int t = 0; t < current_task; ++t) {
        const bool shares = method == Method::lamol || current_arch.shares_module_with(model.archs[t]);
        if (shares) qualifying.push_back(t);
    }
    if (qualifying.empty()) return buf;

    const long target_total = std::lround(hyper.sample_rate * current_train_size);
    const long base = target_total / static_cast<long>(qualifying.size());
    long remainder = target_total % static_cast<long>(qualifying.size());

    for (int old_task : qualifying) {
        const long quota = base + (remainder-- > 0 ? 1 : 0);
        if (quota <= 0) continue;
        const TaskDescriptor& desc = model.descriptors[old_task];
        RowHooks hooks = row_hooks_for_arch(model.registry, model.archs[old_task]);
        std::mt19937_64 rng = make_rng(run_seed, "pseudo_sample", current_task, old_task);
        std::vector<FormattedExample> kept;
        const long cap = 20 * quota;
        for (long attempt = 0; attempt < cap && static_cast<long>(kept.size()) < quota; ++attempt) {
            GenerateResult gen = generate_tokens(model.backbone, hooks, {desc.gen_token_id},
                                                 model.tokenizer.eos_id(), hyper.top_k, &rng);
            auto parsed = parse_pseudo_sample(model.tokenizer, desc, gen.generated, gen.hit_eos);
            if (parsed) kept.push_back(std::move(*parsed));
        }
        if (static_cast<long>(kept.size()) * 2 < quota) {
            buf.warnings.push_back("pseudo yield for task '" + desc.name + "' below half of target: " +
                                   std::to_string(kept.size()) + "/" + std::to_string(quota));
        }
        buf.by_task[old_task] = std::move(kept);
    }
    return buf;
}

// ---------------------------------------------------------------------------
// training stage

struct TrainStats {
    int current_batches = 0;
    int pseudo_batches = 0;
    int skipped_examples = 0;
    double last_loss = 0.0;
};

// Trainable set for one task's training stage: for adapter methods the
// modules referenced by the architecture plus the special-token embedding
// rows; for full-model methods everything.
inline std::vector<Tensor> stage_trainables(ContinualModel& model, Method method,
                                            const ArchitectureMap& arch) {
    model.freeze_everything();
    std::vector<Tensor> out;
    if (method == Method::finetune || method == Method::lamol) {
        model.backbone.set_all_trainable(true);
        for (const NamedParam& p : model.backbone.named_params()) out.push_back(p.tensor);
        return out;
    }
    std::set<int> ids;
    for (int id : arch.layers)
        if (id != kPass) ids.insert(id);
    for (int id : ids) {
        auto m = model.registry.find(id);
        m->set_trainable(true);
        for (const Tensor& t : m->params()) out.push_back(t);
    }
    model.backbone.emb_special().set_requires_grad(true);
    out.push_back(model.backbone.emb_special());
    return out;
}

inline TrainStats train_stage(ContinualModel& model, const TaskRuntime& task,
                              const ArchitectureMap& arch, const ReplayBuffer& replay, Method method,
                              const Hyper& hyper, std::uint64_t run_seed) {
    TrainStats stats;
    std::vector<Tensor> trainables = stage_trainables(model, method, arch);
    AdamW opt(hyper.lr);
    opt.add_params(trainables);

    // hooks per origin task; replay examples route through their own maps
    std::map<int, Hooks> hooks_by_task;
    hooks_by_task[task.desc.index] = hooks_for_arch(model.registry, arch);
    for (const auto& [old_task, examples] : replay.by_task) {
        hooks_by_task[old_task] = hooks_for_arch(model.registry, model.archs[old_task]);
    }
    HooksFn hooks_fn = [&hooks_by_task](int origin) -> const Hooks* {
        auto it = hooks_by_task.find(origin);
        if (it == hooks_by_task.end()) throw std::logic_error("train_stage: no hooks for origin task");
        return &it->second;
    };

    std::vector<const FormattedExample*> pseudo_pool;
    for (const auto& [old_task, examples] : replay.by_task) {
        for (const FormattedExample& ex : examples) pseudo_pool.push_back(&ex);
    }

    std::vector<std::size_t> order(task.train.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t pseudo_cursor = 0;
    for (int epoch = 0; epoch < hyper.train_epochs; ++epoch) {
        std::mt19937_64 rng = make_rng(run_seed, "train_order", task.desc.index, epoch);
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<std::size_t> pseudo_order(pseudo_pool.size());
        std::iota(pseudo_order.begin(), pseudo_order.end(), 0);
        std::mt19937_64 prng = make_rng(run_seed, "pseudo_order", task.desc.index, epoch);
        std::shuffle(pseudo_order.begin(), pseudo_order.end(), prng);

        const int n_current = static_cast<int>((order.size() + hyper.batch_size - 1) / hyper.batch_size);
        const double f = pseudo_pool.empty() ? 0.0 : hyper.pseudo_batch_fraction;
        const double ratio = f > 0.0 ? f / (1.0 - f) : 0.0;

        double acc = 0.0;
        std::size_t cur = 0;
        auto run_batch = [&](const std::vector<const FormattedExample*>& batch) {
            Tape tape;
            BatchLoss bl = batch_losses(&tape, model, batch, hooks_fn, hyper.eta);
            stats.skipped_examples += bl.skipped;
            stats.last_loss = bl.train.item();
            tape.backward(bl.train);
            opt.step();
        };
        for (int b = 0; b < n_current; ++b) {
            std::vector<const FormattedExample*> batch;
            for (int i = 0; i < hyper.batch_size && cur < order.size(); ++i, ++cur) {
                batch.push_back(&task.train[order[cur]]);
            }
            run_batch(batch);
            ++stats.current_batches;
            acc += ratio;
            while (acc >= 1.0 - 1e-9) {
                acc -= 1.0;
                std::vector<const FormattedExample*> pbatch;
                for (int i = 0; i < hyper.batch_size; ++i) {
                    pbatch.push_back(pseudo_pool[pseudo_order[pseudo_cursor % pseudo_order.size()]]);
                    ++pseudo_cursor;
                }
                run_batch(pbatch);
                ++stats.pseudo_batches;
            }
        }
    }
    model.freeze_everything();
    return stats;
}

// ---------------------------------------------------------------------------
// method dispatch over a task sequence

struct TaskGrowth {
    std::string task;
    std::vector<LayerDecision> decisions;
};

struct RunArtifacts {
    std::vector<std::vector<double>> em_rows; // R_{i,j}: row i = scores after task i
    std::vector<std::vector<double>> f1_rows;
    std::vector<TaskGrowth> growth;
    std::vector<LearnableRecord> params;
    std::vector<std::size_t> replay_counts;
    std::vector<std::string> warnings;
};

using TaskDoneCallback = std::function<void(int task_index, const RunArtifacts& so_far)>;

// Runs the full sequence (or resumes at start_task with carried artifacts).
// After each task every seen task is scored through its own architecture.
inline RunArtifacts run_method(ContinualModel& model, Method method,
                               const std::vector<TaskRuntime>& tasks, const Hyper& hyper,
                               const TaskDoneCallback& on_task_done = {}, int start_task = 0,
                               RunArtifacts carry = {}) {
    hyper.validate();
    if (model.descriptors.size() < tasks.size()) {
        throw std::invalid_argument("run_method: descriptors must cover every task");
    }
    const int L = model.backbone.config().n_layers;
    const int d = model.backbone.config().d_model;
    if (method == Method::adapter_drop) {
        for (int dl : hyper.drop_layers) {
            if (dl < 1 || dl > L) throw std::invalid_argument("run_method: drop layer out of range");
        }
    }
    RunArtifacts art = std::move(carry);

    for (int i = start_task; i < static_cast<int>(tasks.size()); ++i) {
        const TaskRuntime& task = tasks[i];
        ArchitectureMap arch = model.pass_arch(task.desc.name);
        TaskGrowth growth{task.desc.name, {}};
        long new_module_params = 0;

        auto fresh_adapter_arch = [&](const std::vector<int>& skip_1based) {
            for (int l = 0; l < L; ++l) {
                const bool skip =
                    std::find(skip_1based.begin(), skip_1based.end(), l + 1) != skip_1based.end();
                LayerDecision dec;
                dec.layer = l;
                if (skip) {
                    dec.module_id = kPass;
                    dec.is_new = false;
                } else {
                    std::mt19937_64 rng = make_rng(hyper.seed, "adapter_init", i, l);
                    auto m = make_adapter(l, d, hyper.reduce_factor, rng);
                    dec.module_id = model.registry.register_module(m);
                    dec.is_new = true;
                    new_module_params += m->param_count();
                    arch.layers[l] = dec.module_id;
                }
                growth.decisions.push_back(dec);
            }
        };

        switch (method) {
            case Method::finetune:
            case Method::lamol: {
                for (int l = 0; l < L; ++l) growth.decisions.push_back({l, false, kPass, {}});
                break;
            }
            case Method::adapter_cl:
                fresh_adapter_arch({});
                break;
            case Method::adapter_drop:
                fresh_adapter_arch(hyper.drop_layers);
                break;
            case Method::adapter_lamol: {
                if (i == 0) {
                    fresh_adapter_arch({});
                } else {
                    arch = model.archs[0];
                    arch.task = task.desc.name;
                    for (int l = 0; l < L; ++l) growth.decisions.push_back({l, false, arch.layers[l], {}});
                }
                break;
            }
            case Method::acm: {
                DecisionResult res = decision_stage(model, task, hyper, hyper.seed);
                arch = res.arch;
                growth.decisions = std::move(res.decisions);
                for (const LayerDecision& dec : growth.decisions) {
                    if (dec.is_new) new_module_params += model.registry.find(dec.module_id)->param_count();
                }
                break;
            }
        }

        ReplayBuffer replay = generate_pseudo(model, i, arch, method, static_cast<int>(task.train.size()),
                                              hyper, hyper.seed);
        for (const std::string& w : replay.warnings) art.warnings.push_back(w);
        art.replay_counts.push_back(replay.total());

        train_stage(model, task, arch, replay, method, hyper, hyper.seed);
        model.archs.push_back(arch);
        art.growth.push_back(std::move(growth));

        LearnableRecord rec;
        rec.task = task.desc.name;
        if (method == Method::finetune || method == Method::lamol) {
            for (const NamedParam& p : model.backbone.named_params()) {
                rec.full_model_params += p.tensor.numel();
            }
        } else {
            rec.module_params = new_module_params;
            rec.special_params = d; // the task's own [GEN] row
        }
        art.params.push_back(rec);

        std::vector<double> em_row, f1_row;
        for (int j = 0; j <= i; ++j) {
            TaskScore s = score_task(model, tasks[j], model.archs[j]);
            em_row.push_back(s.em);
            f1_row.push_back(s.f1);
        }
        art.em_rows.push_back(std::move(em_row));
        art.f1_rows.push_back(std::move(f1_row));

        if (on_task_done) on_task_done(i, art);
    }
    return art;
}

} // namespace acm
