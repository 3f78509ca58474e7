// SPDX-License-Identifier: Apache-2.0
//
// Autodiff core: forward values against scalar-loop references, gradients
// against central finite differences, determinism and freeze discipline.

#include <catch2/catch_amalgamated.hpp>

#include "acm/optim.hpp"
#include "acm/tensor.hpp"
#include "oracles.hpp"

#include <cmath>
#include <cstring>
#include <random>

using acm::Tape;
using acm::Tensor;

namespace {

acm::Tensor sum_to_scalar(Tape* tp, const Tensor& t) { return acm::sum_all(tp, t); }

} // namespace

TEST_CASE("softmax forward basics") {
    Tensor x = Tensor::from({2}, {0.0, 0.0});
    Tensor y = acm::softmax_lastdim(nullptr, x);
    CHECK(y.value()[0] == Catch::Approx(0.5).margin(1e-15));
    CHECK(y.value()[1] == Catch::Approx(0.5).margin(1e-15));

    Tensor x2 = Tensor::from({2}, {0.15, -0.15});
    Tensor y2 = acm::softmax_lastdim(nullptr, x2);
    CHECK(y2.value()[0] / y2.value()[1] == Catch::Approx(std::exp(0.3)).epsilon(1e-12));

    std::mt19937_64 rng(7);
    Tensor r = oracle::random_tensor(rng, {5, 9}, 2.0, false);
    Tensor s = acm::softmax_lastdim(nullptr, r);
    for (int i = 0; i < 5; ++i) {
        double row = 0.0;
        for (int j = 0; j < 9; ++j) {
            const double v = s.value()[i * 9 + j];
            CHECK(v > 0.0);
            row += v;
        }
        CHECK(row == Catch::Approx(1.0).margin(1e-9));
    }
}

TEST_CASE("layer norm of constant vector is all zeros before rescale") {
    Tensor x = Tensor::from({1, 4}, {3.0, 3.0, 3.0, 3.0});
    Tensor g = Tensor::from({4}, {1.0, 1.0, 1.0, 1.0});
    Tensor b = Tensor::from({4}, {0.0, 0.0, 0.0, 0.0});
    Tensor y = acm::layer_norm(nullptr, x, g, b);
    for (double v : y.value()) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("layer norm matches scalar reference") {
    std::mt19937_64 rng(11);
    Tensor x = oracle::random_tensor(rng, {3, 8}, 1.5, false);
    Tensor g = oracle::random_tensor(rng, {8}, 1.0, false);
    Tensor b = oracle::random_tensor(rng, {8}, 1.0, false);
    Tensor y = acm::layer_norm(nullptr, x, g, b);
    for (int r = 0; r < 3; ++r) {
        std::vector<double> row(x.value().begin() + r * 8, x.value().begin() + (r + 1) * 8);
        auto ref = oracle::ref_layer_norm_row(row, g.value(), b.value());
        for (int c = 0; c < 8; ++c) CHECK(y.value()[r * 8 + c] == Catch::Approx(ref[c]).margin(1e-12));
    }
}

TEST_CASE("matmul matches scalar reference") {
    std::mt19937_64 rng(3);
    Tensor a = oracle::random_tensor(rng, {4, 6}, 1.0, false);
    Tensor b = oracle::random_tensor(rng, {6, 5}, 1.0, false);
    Tensor c = acm::matmul(nullptr, a, b);
    auto ref = oracle::ref_matmul(a.value(), b.value(), 4, 6, 5);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(c.value()[i] == Catch::Approx(ref[i]).margin(1e-12));

    Tensor bt = Tensor::zeros({5, 6});
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 5; ++j) bt.value()[j * 6 + i] = b.value()[i * 5 + j];
    Tensor c2 = acm::matmul_nt(nullptr, a, bt);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(c2.value()[i] == Catch::Approx(ref[i]).margin(1e-12));

    CHECK_THROWS(acm::matmul(nullptr, a, a));
}

TEST_CASE("cross entropy forward cases") {
    SECTION("uniform logits give ln V") {
        Tensor logits = Tensor::zeros({1, 4});
        double loss = acm::cross_entropy_masked(nullptr, logits, {2}, {1}).item();
        CHECK(loss == Catch::Approx(std::log(4.0)).margin(1e-12));
    }
    SECTION("saturated correct prediction gives ~0") {
        Tensor logits = Tensor::zeros({1, 5});
        logits.value()[3] = 1e6;
        double loss = acm::cross_entropy_masked(nullptr, logits, {3}, {1}).item();
        CHECK(loss < 1e-9);
    }
    SECTION("random case matches scalar loop to 1e-12") {
        std::mt19937_64 rng(23);
        Tensor logits = oracle::random_tensor(rng, {3, 5}, 2.0, false);
        std::vector<int> targets = {4, 0, 2};
        std::vector<int> mask = {1, 0, 1};
        double loss = acm::cross_entropy_masked(nullptr, logits, targets, mask).item();
        double ref = oracle::ref_cross_entropy(logits.value(), targets, mask, 3, 5);
        CHECK(loss == Catch::Approx(ref).margin(1e-12));
    }
    SECTION("all-zero mask is an error") {
        Tensor logits = Tensor::zeros({2, 3});
        CHECK_THROWS_WITH(acm::cross_entropy_masked(nullptr, logits, {0, 1}, {0, 0}),
                          "empty supervision window");
    }
}

TEST_CASE("backward product rule on x*y") {
    Tensor x = Tensor::scalar(2.0, true);
    Tensor y = Tensor::scalar(3.0, true);
    Tape tape;
    Tensor loss = acm::mul(&tape, x, y);
    tape.backward(loss);
    CHECK(x.grad()[0] == Catch::Approx(3.0));
    CHECK(y.grad()[0] == Catch::Approx(2.0));
}

TEST_CASE("backward requires scalar loss") {
    Tensor x = Tensor::zeros({2, 2}, true);
    Tape tape;
    Tensor y = acm::scale(&tape, x, 2.0);
    CHECK_THROWS(tape.backward(y));
}

TEST_CASE("frozen leaves receive no gradient") {
    std::mt19937_64 rng(5);
    Tensor a = oracle::random_tensor(rng, {3, 3}, 1.0, false); // frozen
    Tensor b = oracle::random_tensor(rng, {3, 3}, 1.0, true);
    Tape tape;
    Tensor loss = sum_to_scalar(&tape, acm::matmul(&tape, a, b));
    tape.backward(loss);
    CHECK_FALSE(a.has_grad());
    CHECK(b.has_grad());

    // Graph with only frozen leaves records nothing.
    Tensor c = oracle::random_tensor(rng, {3, 3}, 1.0, false);
    Tape t2;
    Tensor out = acm::matmul(&t2, a, c);
    CHECK(t2.size() == 0);
    CHECK_FALSE(out.requires_grad());
}

TEST_CASE("finite differences: every primitive") {
    std::mt19937_64 rng(42);
    const double tol = 1e-4;
    int total_cases = 0;

    auto run = [&](const std::function<Tensor(Tape*)>& build, const std::vector<Tensor>& leaves) {
        auto rep = oracle::check_gradients(build, leaves, 1e-5, tol);
        CHECK(rep.max_err <= tol);
        ++total_cases;
    };

    for (int rep = 0; rep < 10; ++rep) {
        // add / mul / scale / add_rowvec
        {
            Tensor a = oracle::random_tensor(rng, {3, 4});
            Tensor b = oracle::random_tensor(rng, {3, 4});
            Tensor v = oracle::random_tensor(rng, {4});
            run([&](Tape* tp) {
                return sum_to_scalar(tp, acm::mul(tp, acm::add(tp, a, b), acm::add_rowvec(tp, a, v)));
            }, {a, b, v});
        }
        // matmul / matmul_nt
        {
            Tensor a = oracle::random_tensor(rng, {3, 5});
            Tensor b = oracle::random_tensor(rng, {5, 2});
            Tensor c = oracle::random_tensor(rng, {4, 2});
            run([&](Tape* tp) {
                Tensor m = acm::matmul(tp, a, b);       // 3x2
                Tensor n = acm::matmul_nt(tp, m, c);    // 3x4
                return sum_to_scalar(tp, acm::gelu(tp, n));
            }, {a, b, c});
        }
        // softmax + scale
        {
            Tensor a = oracle::random_tensor(rng, {2, 6}, 2.0);
            Tensor w = oracle::random_tensor(rng, {2, 6});
            run([&](Tape* tp) {
                return sum_to_scalar(tp, acm::mul(tp, acm::softmax_lastdim(tp, a), w));
            }, {a, w});
        }
        // layer_norm
        {
            Tensor x = oracle::random_tensor(rng, {3, 7}, 1.3);
            Tensor g = oracle::random_tensor(rng, {7});
            Tensor b = oracle::random_tensor(rng, {7});
            Tensor w = oracle::random_tensor(rng, {3, 7});
            run([&](Tape* tp) {
                return sum_to_scalar(tp, acm::mul(tp, acm::layer_norm(tp, x, g, b), w));
            }, {x, g, b, w});
        }
        // concat / slice
        {
            Tensor a = oracle::random_tensor(rng, {2, 3});
            Tensor b = oracle::random_tensor(rng, {2, 2});
            run([&](Tape* tp) {
                Tensor cat = acm::concat_cols(tp, {a, b});
                Tensor s = acm::slice_cols(tp, cat, 1, 3);
                return sum_to_scalar(tp, acm::mul(tp, s, s));
            }, {a, b});
        }
        // slice_rows
        {
            Tensor a = oracle::random_tensor(rng, {5, 3});
            run([&](Tape* tp) {
                Tensor s = acm::slice_rows(tp, a, 1, 3);
                return sum_to_scalar(tp, acm::gelu(tp, s));
            }, {a});
        }
        // embedding (base + special rows)
        {
            Tensor base = oracle::random_tensor(rng, {6, 4});
            Tensor spec = oracle::random_tensor(rng, {3, 4});
            std::vector<int> ids = {0, 7, 5, 2, 8, 0};
            Tensor w = oracle::random_tensor(rng, {6, 4});
            run([&](Tape* tp) {
                return sum_to_scalar(tp, acm::mul(tp, acm::embedding(tp, base, spec, ids), w));
            }, {base, spec});
        }
        // log / sum / scale_by_elem
        {
            Tensor lam = oracle::random_tensor(rng, {3}, 0.3);
            for (double& v : lam.value()) v = std::abs(v) + 0.2;
            Tensor y = oracle::random_tensor(rng, {2, 3});
            run([&](Tape* tp) {
                Tensor sm = acm::softmax_lastdim(tp, lam);
                Tensor ent = acm::sum_all(tp, acm::mul(tp, sm, acm::log_elem(tp, sm)));
                Tensor mixed = acm::scale_by_elem(tp, y, sm, 1);
                return acm::add(tp, acm::scale(tp, ent, -0.5), sum_to_scalar(tp, mixed));
            }, {lam, y});
        }
        // cross entropy (sum and mean forms)
        {
            Tensor logits = oracle::random_tensor(rng, {4, 6}, 1.5);
            std::vector<int> targets = {1, 5, 0, 3};
            std::vector<int> mask = {1, 0, 1, 1};
            run([&](Tape* tp) {
                return acm::cross_entropy_masked(tp, logits, targets, mask);
            }, {logits});
        }
    }
    CHECK(total_cases >= 90);
}

TEST_CASE("determinism: same seed and op sequence is bit-identical") {
    auto run_once = [] {
        std::mt19937_64 rng(99);
        Tensor a = oracle::random_tensor(rng, {8, 8});
        Tensor b = oracle::random_tensor(rng, {8, 8});
        Tape tape;
        Tensor out = acm::softmax_lastdim(&tape, acm::matmul(&tape, acm::gelu(&tape, a), b));
        Tensor loss = acm::sum_all(&tape, out);
        tape.backward(loss);
        std::vector<double> snap = out.value();
        snap.insert(snap.end(), a.grad().begin(), a.grad().end());
        return snap;
    };
    auto r1 = run_once();
    auto r2 = run_once();
    REQUIRE(r1.size() == r2.size());
    for (std::size_t i = 0; i < r1.size(); ++i) {
        CHECK(std::memcmp(&r1[i], &r2[i], sizeof(double)) == 0);
    }
}

TEST_CASE("adamw: descent, scalar reference, freeze discipline") {
    SECTION("descent direction") {
        Tensor p = Tensor::scalar(1.0, true);
        p.raw()->ensure_grad();
        p.grad()[0] = 1.0;
        acm::AdamW opt(0.1, 0.9, 0.999, 1e-8, 0.0);
        opt.add_param(p);
        opt.step();
        CHECK(p.value()[0] < 1.0);
        CHECK_FALSE(p.has_grad()); // grads cleared
    }
    SECTION("matches hand-coded scalar AdamW over several steps") {
        Tensor p = Tensor::scalar(1.0, true);
        acm::AdamW opt(0.1);
        opt.add_param(p);
        double ref_p = 1.0;
        oracle::RefAdamWState st;
        std::mt19937_64 rng(4);
        std::normal_distribution<double> nd(0.0, 1.0);
        for (int i = 0; i < 12; ++i) {
            const double g = nd(rng);
            p.raw()->ensure_grad();
            p.grad()[0] = g;
            opt.step();
            ref_p = oracle::ref_adamw_step(ref_p, g, st, 0.1);
            CHECK(p.value()[0] == Catch::Approx(ref_p).margin(1e-15));
        }
    }
    SECTION("frozen param with stray grad buffer is untouched") {
        Tensor p = Tensor::scalar(5.0, false);
        p.raw()->ensure_grad();
        p.grad()[0] = 123.0;
        acm::AdamW opt(0.5);
        opt.add_param(p);
        opt.step();
        CHECK(p.value()[0] == 5.0);
    }
}
