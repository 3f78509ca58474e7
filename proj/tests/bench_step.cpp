// SPDX-License-Identifier: Apache-2.0
// Rough throughput probe for one training step at desk scale.
#include "acm/backbone.hpp"
#include "acm/model_io.hpp"

#include <chrono>
#include <cstdio>
#include <random>

using namespace acm;

int main() {
    BackboneConfig cfg;
    cfg.n_layers = 4;
    cfg.d_model = 64;
    cfg.n_heads = 4;
    cfg.d_ff = 256;
    cfg.vocab_size = 420;
    cfg.n_base = 400;
    cfg.max_seq_len = 128;
    Backbone bb(cfg, 1);
    bb.set_all_trainable(true);
    AdamW opt(1e-3);
    for (auto& p : bb.named_params()) opt.add_param(p.tensor);

    std::mt19937_64 rng(7);
    std::uniform_int_distribution<int> tok(0, cfg.vocab_size - 1);
    const int T = 30, B = 8, steps = 30;

    auto t0 = std::chrono::steady_clock::now();
    for (int s = 0; s < steps; ++s) {
        Tape tape;
        Tensor total = Tensor::scalar(0.0);
        long count = 0;
        for (int b = 0; b < B; ++b) {
            std::vector<int> ids(T);
            for (int& v : ids) v = tok(rng);
            std::vector<int> in(ids.begin(), ids.end() - 1);
            std::vector<int> tg(ids.begin() + 1, ids.end());
            std::vector<int> mask(tg.size(), 1);
            Tensor logits = bb.forward(&tape, in);
            total = add(&tape, total, cross_entropy_masked_sum(&tape, logits, tg, mask));
            count += static_cast<long>(tg.size());
        }
        Tensor loss = scale(&tape, total, 1.0 / count);
        tape.backward(loss);
        opt.step();
    }
    auto t1 = std::chrono::steady_clock::now();
    double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    std::printf("%d steps of %d examples (T=%d): %.1f ms total, %.2f ms/example\n", steps, B, T, ms,
                ms / (steps * B));

    // generation throughput
    Decoder dec(bb);
    auto g0 = std::chrono::steady_clock::now();
    int n_tok = 0;
    for (int i = 0; i < 40; ++i) {
        Decoder d2(bb);
        for (int t = 0; t < 30; ++t) {
            d2.step(tok(rng));
            ++n_tok;
        }
    }
    auto g1 = std::chrono::steady_clock::now();
    double gms = std::chrono::duration<double, std::milli>(g1 - g0).count();
    std::printf("decode: %.3f ms/token (%d tokens)\n", gms / n_tok, n_tok);
    return 0;
}
