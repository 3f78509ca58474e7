// SPDX-License-Identifier: Apache-2.0
//
// Backbone pretraining and checkpoint directories (tensors.bin +
// manifest.json, format version "v1").

#pragma once

#include "acm/backbone.hpp"
#include "acm/checkpoint.hpp"
#include "acm/optim.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace acm {

using json = nlohmann::json;

inline double corpus_loss(const Backbone& bb, const std::vector<std::vector<int>>& lines) {
    double total = 0.0;
    long count = 0;
    for (const std::vector<int>& ids : lines) {
        if (ids.size() < 2) continue;
        std::vector<int> in(ids.begin(), ids.end() - 1);
        std::vector<int> tg(ids.begin() + 1, ids.end());
        Tensor logits = bb.forward(nullptr, in);
        std::vector<int> mask(tg.size(), 1);
        total += cross_entropy_masked_sum(nullptr, logits, tg, mask).item();
        count += static_cast<long>(tg.size());
    }
    if (count == 0) throw std::runtime_error("corpus_loss: empty corpus");
    return total / static_cast<double>(count);
}

struct PretrainReport {
    double initial_heldout_loss = 0.0;
    double heldout_loss = 0.0;
    int epochs = 0;
};

// Next-token training over the corpus with linear warmup (post-norm layers
// train poorly without it); freezes every parameter afterwards.
inline PretrainReport pretrain_backbone(Backbone& bb, const std::vector<std::vector<int>>& train_lines,
                                        const std::vector<std::vector<int>>& heldout_lines, int epochs,
                                        int batch_size, double lr, std::uint64_t seed,
                                        int warmup_steps = 200) {
    if (train_lines.empty()) throw std::invalid_argument("pretrain: corpus empty");
    PretrainReport rep;
    rep.epochs = epochs;
    rep.initial_heldout_loss = corpus_loss(bb, heldout_lines);

    bb.set_all_trainable(true);
    AdamW opt(lr);
    for (const NamedParam& p : bb.named_params()) opt.add_param(p.tensor);

    std::vector<std::size_t> order(train_lines.size());
    std::iota(order.begin(), order.end(), 0);
    for (int e = 0; e < epochs; ++e) {
        std::mt19937_64 rng = make_rng(seed, "pretrain_order", e);
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            const std::size_t end = std::min(order.size(), start + batch_size);
            Tape tape;
            Tensor total = Tensor::scalar(0.0);
            long count = 0;
            for (std::size_t i = start; i < end; ++i) {
                const std::vector<int>& ids = train_lines[order[i]];
                if (ids.size() < 2) continue;
                std::vector<int> in(ids.begin(), ids.end() - 1);
                std::vector<int> tg(ids.begin() + 1, ids.end());
                std::vector<int> mask(tg.size(), 1);
                Tensor logits = bb.forward(&tape, in);
                total = add(&tape, total, cross_entropy_masked_sum(&tape, logits, tg, mask));
                count += static_cast<long>(tg.size());
            }
            if (count == 0) continue;
            Tensor loss = scale(&tape, total, 1.0 / static_cast<double>(count));
            tape.backward(loss);
            if (warmup_steps > 0) {
                const double t = static_cast<double>(opt.step_count() + 1);
                opt.set_lr(lr * std::min(1.0, t / warmup_steps));
            }
            opt.step();
        }
    }
    rep.heldout_loss = corpus_loss(bb, heldout_lines);
    bb.set_all_trainable(false);
    return rep;
}

// ---------------------------------------------------------------------------
// checkpoint directories

inline json tokenizer_to_json(const Tokenizer& tok, const std::vector<std::string>& gen_tasks) {
    return json{{"words", tok.words()}, {"gen_tasks", gen_tasks}};
}

inline Tokenizer tokenizer_from_json(const json& j) {
    return Tokenizer(j.at("words").get<std::vector<std::string>>(),
                     j.at("gen_tasks").get<std::vector<std::string>>());
}

inline json backbone_config_to_json(const BackboneConfig& c) {
    return json{{"n_layers", c.n_layers}, {"d_model", c.d_model},   {"n_heads", c.n_heads},
                {"d_ff", c.d_ff},         {"vocab_size", c.vocab_size}, {"n_base", c.n_base},
                {"max_seq_len", c.max_seq_len}};
}

inline BackboneConfig backbone_config_from_json(const json& j) {
    BackboneConfig c;
    c.n_layers = j.at("n_layers");
    c.d_model = j.at("d_model");
    c.n_heads = j.at("n_heads");
    c.d_ff = j.at("d_ff");
    c.vocab_size = j.at("vocab_size");
    c.n_base = j.at("n_base");
    c.max_seq_len = j.at("max_seq_len");
    return c;
}

inline void save_backbone(const std::string& dir, const Backbone& bb, const Tokenizer& tok,
                          const std::vector<std::string>& gen_tasks, const json& extra = json::object()) {
    std::filesystem::create_directories(dir);
    std::vector<ArchiveEntry> entries;
    json freeze = json::object();
    for (const NamedParam& p : bb.named_params()) {
        entries.push_back({p.name, p.tensor.shape(), p.tensor.value()});
        freeze[p.name] = p.frozen();
    }
    write_tensor_archive(dir + "/tensors.bin", entries);
    json manifest = {{"format_version", "v1"},
                     {"kind", "backbone"},
                     {"config", backbone_config_to_json(bb.config())},
                     {"tokenizer", tokenizer_to_json(tok, gen_tasks)},
                     {"frozen", freeze}};
    for (auto& [k, v] : extra.items()) manifest[k] = v;
    std::ofstream os(dir + "/manifest.json");
    os << manifest.dump(2) << "\n";
    if (!os) throw std::runtime_error("save_backbone: cannot write manifest in " + dir);
}

struct LoadedBackbone {
    Backbone backbone;
    Tokenizer tokenizer;
    std::vector<std::string> gen_tasks;
    json manifest;
};

inline void fill_params_from_archive(std::vector<NamedParam> params,
                                     const std::vector<ArchiveEntry>& entries,
                                     const std::string& what) {
    std::map<std::string, const ArchiveEntry*> by_name;
    for (const ArchiveEntry& e : entries) by_name[e.name] = &e;
    for (NamedParam& p : params) {
        auto it = by_name.find(p.name);
        if (it == by_name.end()) throw std::runtime_error(what + ": missing tensor " + p.name);
        if (it->second->shape != p.tensor.shape()) throw std::runtime_error(what + ": shape mismatch for " + p.name);
        const_cast<Tensor&>(p.tensor).value() = it->second->data;
    }
}

inline LoadedBackbone load_backbone(const std::string& dir) {
    std::ifstream is(dir + "/manifest.json");
    if (!is) throw std::runtime_error("load_backbone: cannot open " + dir + "/manifest.json");
    json manifest = json::parse(is);
    if (manifest.at("format_version") != "v1") throw std::runtime_error("load_backbone: unknown format version");
    LoadedBackbone out;
    out.manifest = manifest;
    out.gen_tasks = manifest.at("tokenizer").at("gen_tasks").get<std::vector<std::string>>();
    out.tokenizer = tokenizer_from_json(manifest.at("tokenizer"));
    BackboneConfig cfg = backbone_config_from_json(manifest.at("config"));
    out.backbone = Backbone(cfg, /*init_seed=*/0);
    fill_params_from_archive(out.backbone.named_params(), read_tensor_archive(dir + "/tensors.bin"),
                             "load_backbone");
    out.backbone.set_all_trainable(false);
    return out;
}

} // namespace acm
