// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include "acm/engine.hpp"
#include "acm/eval.hpp"
#include "universe.hpp"

#include <cmath>

using namespace acm;
using testing_universe::make_universe;
using testing_universe::Universe;

TEST_CASE("bwt on the worked 2x2 example is exactly -10") {
    std::vector<std::vector<double>> rows = {{90.0}, {80.0, 95.0}};
    CHECK(bwt(rows, 2) == -10.0);
}

TEST_CASE("bwt is zero without forgetting and fails for single tasks") {
    std::vector<std::vector<double>> rows = {{70.0}, {70.0, 60.0}, {70.0, 60.0, 50.0}};
    CHECK(bwt(rows, 2) == 0.0);
    CHECK(bwt(rows, 3) == 0.0);
    CHECK_THROWS_WITH(bwt(rows, 1), "BWT undefined for single task");
}

TEST_CASE("bwt is invariant under constant shifts") {
    std::vector<std::vector<double>> rows = {{90.0}, {82.0, 88.0}, {80.5, 83.25, 91.0}};
    const double base = bwt(rows, 3);
    for (auto& row : rows)
        for (double& v : row) v += 4.25;
    CHECK(bwt(rows, 3) == Catch::Approx(base).margin(1e-12));
}

TEST_CASE("mean (+BWT) formatting") {
    CHECK(format_mean_bwt(66.1, 2.1) == "66.1 (+2.1)");
    CHECK(format_mean_bwt(58.2, -10.0) == "58.2 (-10.0)");
    CHECK(format_mean_bwt(100.0, 0.0) == "100.0 (+0.0)");
}

TEST_CASE("aggregate mean and geometric mean") {
    Aggregate a = aggregate({50.0, 50.0, 50.0});
    CHECK(a.mean == 50.0);
    REQUIRE(a.geomean.has_value());
    CHECK(*a.geomean == Catch::Approx(50.0).margin(1e-9));

    Aggregate b = aggregate({40.0, 90.0});
    CHECK(b.mean == 65.0);
    REQUIRE(b.geomean.has_value());
    CHECK(*b.geomean == Catch::Approx(60.0).margin(1e-9)); // sqrt(3600)

    Aggregate c = aggregate({40.0, 0.0, 90.0});
    CHECK(c.mean == Catch::Approx(130.0 / 3).margin(1e-12));
    CHECK_FALSE(c.geomean.has_value());

    // AM-GM whenever defined
    Aggregate d = aggregate({31.0, 62.5, 97.0, 44.0});
    REQUIRE(d.geomean.has_value());
    CHECK(*d.geomean <= d.mean);
}

TEST_CASE("learnable record totals and averaging") {
    std::vector<LearnableRecord> recs;
    recs.push_back({"a", 4640, 64, 0});
    recs.push_back({"b", 1160, 64, 0});
    CHECK(recs[0].total() == 4704);
    CHECK(average_learnable(recs) == Catch::Approx((4704 + 1224) / 2.0));
    LearnableRecord full{"c", 0, 0, 123456};
    CHECK(full.total() == 123456);
}

namespace {

Universe probe_universe() {
    Universe u = make_universe({{"a", make_task(TaskFamily::slot2text, 1, "a", 16, 6)},
                                {"b", make_task(TaskFamily::slot2text, 2, "b", 16, 6)}});
    auto& model = u.model();
    const int d = model.backbone.config().d_model;
    // task a: fresh modules everywhere (identity); task b: fresh modules too
    for (int task = 0; task < 2; ++task) {
        ArchitectureMap arch{model.descriptors[task].name, {}};
        for (int l = 0; l < model.backbone.config().n_layers; ++l) {
            std::mt19937_64 rng = make_rng(9, "probe_adapter", task, l);
            arch.layers.push_back(model.registry.register_module(make_adapter(l, d, 8, rng)));
        }
        model.archs.push_back(arch);
    }
    return u;
}

} // namespace

TEST_CASE("score_task: immediate EOS scores zero; scoring is deterministic") {
    Universe u = probe_universe();
    auto& model = u.model();
    TaskScore s1 = score_task(model, u.tasks()[0], model.archs[0]);
    TaskScore s2 = score_task(model, u.tasks()[0], model.archs[0]);
    CHECK(s1.em == s2.em);
    CHECK(s1.f1 == s2.f1);
    CHECK(s1.em >= 0.0);
    CHECK(s1.em <= 100.0);

    // blow up the [EOS] embedding row so greedy decoding stops immediately
    Tensor& spec = model.backbone.emb_special();
    const int d = model.backbone.config().d_model;
    const int eos_row = model.tokenizer.eos_id() - model.tokenizer.n_base();
    for (int c = 0; c < d; ++c) spec.value()[eos_row * d + c] = 1e4;
    TaskScore s3 = score_task(model, u.tasks()[0], model.archs[0]);
    CHECK(s3.em == 0.0);
    CHECK(s3.f1 == 0.0);
}

TEST_CASE("module swap probe: identity modules swap cleanly, O column constant") {
    Universe u = probe_universe();
    auto& model = u.model();
    const auto& arch_a = model.archs[0];
    const auto& arch_b = model.archs[1];

    ProbeRow r0 = module_swap_probe(model, u.tasks()[0], u.tasks()[1], arch_a, arch_b, 0);
    ProbeRow r1 = module_swap_probe(model, u.tasks()[0], u.tasks()[1], arch_a, arch_b, 1);
    // identity-initialized modules: modified equals original exactly
    CHECK(r0.m_a == r0.o_a);
    CHECK(r0.m_b == r0.o_b);
    // the original-architecture column does not depend on the probed layer
    CHECK(r0.o_a == r1.o_a);
    CHECK(r0.o_b == r1.o_b);
    CHECK(r0.layer == 1);
    CHECK(r1.layer == 2);

    SECTION("layer without both modules is an error") {
        ArchitectureMap shared = arch_b;
        shared.layers[0] = arch_a.layers[0];
        CHECK_THROWS(module_swap_probe(model, u.tasks()[0], u.tasks()[1], arch_a, shared, 0));
        ArchitectureMap pass = arch_a;
        pass.layers[1] = kPass;
        CHECK_THROWS(module_swap_probe(model, u.tasks()[0], u.tasks()[1], pass, arch_b, 1));
    }
}
