// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include "acm/backbone.hpp"
#include "acm/model_io.hpp"
#include "acm/taskgen.hpp"

#include <cstring>
#include <filesystem>
#include <random>

using namespace acm;

namespace {

BackboneConfig tiny_config(int vocab = 40, int n_base = 34) {
    BackboneConfig cfg;
    cfg.n_layers = 2;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.d_ff = 32;
    cfg.vocab_size = vocab;
    cfg.n_base = n_base;
    cfg.max_seq_len = 24;
    return cfg;
}

std::vector<int> random_ids(std::mt19937_64& rng, int n, int vocab) {
    std::uniform_int_distribution<int> d(0, vocab - 1);
    std::vector<int> ids(n);
    for (int& v : ids) v = d(rng);
    return ids;
}

} // namespace

TEST_CASE("identity hooks equal hook-free forward exactly") {
    Backbone bb(tiny_config(), 1);
    std::mt19937_64 rng(2);
    auto ids = random_ids(rng, 10, 40);
    Tensor plain = bb.forward(nullptr, ids);
    Hooks hooks(2); // null hooks = identity
    Tensor hooked = bb.forward(nullptr, ids, &hooks);
    REQUIRE(plain.value().size() == hooked.value().size());
    for (std::size_t i = 0; i < plain.value().size(); ++i) CHECK(plain.value()[i] == hooked.value()[i]);
}

TEST_CASE("causal mask: perturbing a later token leaves earlier logits unchanged") {
    Backbone bb(tiny_config(), 3);
    std::mt19937_64 rng(5);
    auto ids = random_ids(rng, 12, 40);
    Tensor before = bb.forward(nullptr, ids);
    const int t = 6;
    auto ids2 = ids;
    ids2[t + 1] = (ids2[t + 1] + 7) % 40;
    Tensor after = bb.forward(nullptr, ids2);
    const int V = 40;
    for (int p = 0; p <= t; ++p)
        for (int v = 0; v < V; ++v)
            CHECK(before.value()[p * V + v] == after.value()[p * V + v]);
    // and the perturbed position itself does change
    double diff = 0.0;
    for (int v = 0; v < V; ++v) diff += std::abs(before.value()[(t + 1) * V + v] - after.value()[(t + 1) * V + v]);
    CHECK(diff > 1e-6);
}

TEST_CASE("hook locality: a layer hook does not disturb activations below it") {
    Backbone bb(tiny_config(), 7);
    std::mt19937_64 rng(9);
    auto ids = random_ids(rng, 8, 40);

    std::vector<double> seen_layer0;
    Hooks recording(2);
    recording[0].mh = [&](Tape* tp, const Tensor& o) {
        seen_layer0 = o.value();
        return o;
    };
    bb.forward(nullptr, ids, &recording);
    std::vector<double> base = seen_layer0;

    Hooks perturbing(2);
    perturbing[0].mh = recording[0].mh;
    perturbing[1].ff = [](Tape* tp, const Tensor& o) {
        Tensor shift = Tensor::from(o.shape(), std::vector<double>(o.numel(), 0.5));
        return add(tp, o, shift);
    };
    bb.forward(nullptr, ids, &perturbing);
    REQUIRE(base.size() == seen_layer0.size());
    for (std::size_t i = 0; i < base.size(); ++i) CHECK(base[i] == seen_layer0[i]);
}

TEST_CASE("sequence longer than max_seq_len is rejected") {
    Backbone bb(tiny_config(), 1);
    std::vector<int> ids(25, 1);
    CHECK_THROWS(bb.forward(nullptr, ids));
}

TEST_CASE("incremental decoder matches full forward within 1e-9") {
    Backbone bb(tiny_config(), 21);
    std::mt19937_64 rng(31);
    auto ids = random_ids(rng, 14, 40);
    Tensor full = bb.forward(nullptr, ids);
    Decoder dec(bb);
    const int V = 40;
    for (int t = 0; t < 14; ++t) {
        auto row = dec.step(ids[t]);
        REQUIRE(static_cast<int>(row.size()) == V);
        for (int v = 0; v < V; ++v) {
            CHECK(std::abs(row[v] - full.value()[t * V + v]) < 1e-9);
        }
    }
}

TEST_CASE("pretraining: loss near ln V untrained, drops with training, deterministic") {
    // small synthetic universe
    std::vector<TaskData> tasks = {build_task_data(make_task(TaskFamily::slot2text, 1, "a", 30, 8))};
    std::vector<TaskData> fillers = {build_task_data(make_task(TaskFamily::slot2text, 390, "fill", 30, 8))};
    std::vector<std::string> words = task_vocabulary(tasks[0]);
    auto fw = task_vocabulary(fillers[0]);
    words.insert(words.end(), fw.begin(), fw.end());
    Tokenizer tok(words, {"a"});

    auto lines_txt = build_pretrain_corpus(tasks, fillers, 40, 20, 20, 77);
    std::vector<std::vector<int>> lines;
    for (auto& l : lines_txt) lines.push_back(tok.encode(l));
    std::vector<std::vector<int>> heldout(lines.begin(), lines.begin() + 8);
    std::vector<std::vector<int>> train(lines.begin() + 8, lines.end());

    BackboneConfig cfg;
    cfg.n_layers = 2;
    cfg.d_model = 32;
    cfg.n_heads = 2;
    cfg.d_ff = 64;
    cfg.vocab_size = tok.vocab_size();
    cfg.n_base = tok.n_base();
    cfg.max_seq_len = 64;

    auto run = [&](int epochs) {
        Backbone bb(cfg, 5);
        PretrainReport rep = pretrain_backbone(bb, train, heldout, epochs, 8, 3e-3, 5);
        return std::pair<Backbone, PretrainReport>(std::move(bb), rep);
    };

    auto [bb1, rep1] = run(2);
    const double lnv = std::log(static_cast<double>(tok.vocab_size()));
    CHECK(std::abs(rep1.initial_heldout_loss - lnv) < 0.05 * lnv);
    CHECK(rep1.heldout_loss < rep1.initial_heldout_loss);

    auto [bb2, rep2] = run(2);
    CHECK(rep2.heldout_loss == rep1.heldout_loss);
    auto p1 = bb1.named_params(), p2 = bb2.named_params();
    for (std::size_t i = 0; i < p1.size(); ++i) {
        REQUIRE(p1[i].tensor.value().size() == p2[i].tensor.value().size());
        CHECK(std::memcmp(p1[i].tensor.value().data(), p2[i].tensor.value().data(),
                          p1[i].tensor.value().size() * sizeof(double)) == 0);
        CHECK(p1[i].frozen()); // everything frozen after pretraining
    }

    SECTION("checkpoint round trip is bit exact") {
        const std::string dir = (std::filesystem::temp_directory_path() / "acm_bb_test").string();
        save_backbone(dir, bb1, tok, {"a"});
        LoadedBackbone lb = load_backbone(dir);
        std::mt19937_64 rng(3);
        auto ids = random_ids(rng, 9, tok.vocab_size());
        Tensor a = bb1.forward(nullptr, ids);
        Tensor b = lb.backbone.forward(nullptr, ids);
        for (std::size_t i = 0; i < a.value().size(); ++i) CHECK(a.value()[i] == b.value()[i]);
        CHECK(lb.tokenizer.vocab_size() == tok.vocab_size());
        CHECK(lb.tokenizer.gen_id("a") == tok.gen_id("a"));
        std::filesystem::remove_all(dir);
    }
}
