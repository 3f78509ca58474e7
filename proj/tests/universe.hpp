// SPDX-License-Identifier: Apache-2.0
//
// Shared fixtures: small task universes with a random or pretrained frozen
// backbone, sized for fast tests.

#pragma once

#include "acm/engine.hpp"
#include "acm/model.hpp"
#include "acm/model_io.hpp"
#include "acm/taskgen.hpp"

#include <string>
#include <utility>
#include <vector>

namespace testing_universe {

struct Universe {
    acm::PreparedRun prep;
    acm::Hyper hyper;

    acm::ContinualModel& model() { return prep.model; }
    std::vector<acm::TaskRuntime>& tasks() { return prep.tasks; }
};

inline acm::Tokenizer tokenizer_for(const std::vector<std::pair<std::string, acm::TaskData>>& named,
                                    const std::vector<acm::TaskData>& extra_vocab = {}) {
    std::vector<std::string> words, names;
    for (const auto& [name, data] : named) {
        auto v = acm::task_vocabulary(data);
        words.insert(words.end(), v.begin(), v.end());
        names.push_back(name);
    }
    for (const acm::TaskData& d : extra_vocab) {
        auto v = acm::task_vocabulary(d);
        words.insert(words.end(), v.begin(), v.end());
    }
    return acm::Tokenizer(words, names);
}

// Random frozen backbone; adequate for mechanics tests that do not need a
// competent language model.
inline Universe make_universe(const std::vector<std::pair<std::string, acm::TaskSpec>>& specs,
                              int n_layers = 2, int d_model = 32, std::uint64_t seed = 1) {
    std::vector<std::pair<std::string, acm::TaskData>> named;
    for (const auto& [name, spec] : specs) named.emplace_back(name, acm::build_task_data(spec));
    acm::Tokenizer tok = tokenizer_for(named);

    acm::BackboneConfig cfg;
    cfg.n_layers = n_layers;
    cfg.d_model = d_model;
    cfg.n_heads = 2;
    cfg.d_ff = 2 * d_model;
    cfg.vocab_size = tok.vocab_size();
    cfg.n_base = tok.n_base();
    cfg.max_seq_len = 64;
    acm::Backbone bb(cfg, seed);
    bb.set_all_trainable(false);

    Universe u;
    u.prep = acm::prepare_run(std::move(bb), tok, named);
    u.hyper.seed = seed;
    u.hyper.lr = 3e-3;
    u.hyper.batch_size = 8;
    u.hyper.decision_epochs = 2;
    u.hyper.train_epochs = 2;
    u.hyper.reduce_factor = 8;
    return u;
}

} // namespace testing_universe
