// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include "acm/taskgen.hpp"
#include "acm/tokenizer.hpp"

#include <algorithm>
#include <set>

using namespace acm;

namespace {

std::set<std::string> vocab_of(const TaskData& d) {
    auto v = task_vocabulary(d);
    return {v.begin(), v.end()};
}

} // namespace

TEST_CASE("slot2text examples follow the template") {
    TaskSpec spec = make_task(TaskFamily::slot2text, 3, "", 40, 10);
    TaskData d = build_task_data(spec);
    for (const RawExample& ex : d.train) {
        // independent template oracle: re-map the pairs by hand
        std::map<std::string, std::string> kv;
        for (std::size_t i = 0; i + 2 < ex.input.size(); i += 4) kv[ex.input[i]] = ex.input[i + 2];
        std::vector<std::string> want = {kv["name"], "is", "a", kv["type"]};
        if (kv.count("area")) { want.push_back("at"); want.push_back(kv["area"]); }
        if (kv.count("near")) { want.push_back("beside"); want.push_back(kv["near"]); }
        if (kv.count("price")) { want.push_back("priced"); want.push_back(kv["price"]); }
        want.push_back(".");
        CHECK(ex.output == want);
    }
}

TEST_CASE("query template reproduces the reference pattern") {
    // spec instantiation of the pattern with concrete words
    std::vector<std::string> input = {"which", "team", "has", "pick", "13", "in", "round", "2", "?"};
    auto out = taskgen::ground_truth_query(input);
    CHECK(join_ws(out) == "select team from table where pick = 13 and round = 2");

    TaskSpec spec = make_task(TaskFamily::query, 5, "", 40, 10);
    TaskData d = build_task_data(spec);
    for (const RawExample& ex : d.train) {
        CHECK(ex.output == taskgen::ground_truth(TaskFamily::query, ex.input));
        CHECK(ex.output[0] == "select");
    }
}

TEST_CASE("extract and state ground truths") {
    TaskSpec es = make_task(TaskFamily::extract, 7, "", 40, 10);
    for (const RawExample& ex : build_task_data(es).train) {
        REQUIRE(std::count(ex.input.begin(), ex.input.end(), std::string("announces")) == 1);
        CHECK(std::count(ex.output.begin(), ex.output.end(), std::string("announces")) == 1);
        CHECK(ex.output.back() == "!");
        CHECK(ex.output.size() == 4);
    }
    TaskSpec ss = make_task(TaskFamily::state, 9, "", 40, 10);
    for (const RawExample& ex : build_task_data(ss).train) {
        CHECK(ex.output.size() == 8);
        CHECK(ex.output[3] == ";");
        CHECK(ex.output[0] == ex.input[0]);
    }
}

TEST_CASE("generated outputs always match the rule-based oracle") {
    for (TaskFamily f : {TaskFamily::slot2text, TaskFamily::query, TaskFamily::extract, TaskFamily::state}) {
        TaskData d = build_task_data(make_task(f, 11, "", 60, 20));
        for (const auto* split : {&d.train, &d.test}) {
            for (const RawExample& ex : *split) {
                CHECK(ex.output == taskgen::ground_truth(f, ex.input));
            }
        }
    }
}

TEST_CASE("generate_split determinism, sizes and disjointness") {
    TaskSpec spec = make_task(TaskFamily::slot2text, 2, "", 80, 30);
    auto t1 = generate_split(spec, Split::train, 0);
    auto t2 = generate_split(spec, Split::train, 0);
    REQUIRE(t1.size() == 80);
    bool identical = t1.size() == t2.size();
    for (std::size_t i = 0; identical && i < t1.size(); ++i) {
        identical = t1[i].input == t2[i].input && t1[i].output == t2[i].output;
    }
    CHECK(identical);

    auto test = generate_split(spec, Split::test, 0);
    REQUIRE(test.size() == 30);
    std::set<std::string> train_keys;
    for (const auto& ex : t1) train_keys.insert(join_ws(ex.input));
    CHECK(train_keys.size() == t1.size()); // duplicate-free
    for (const auto& ex : test) CHECK(train_keys.count(join_ws(ex.input)) == 0);
}

TEST_CASE("requested size beyond the combinatorial space fails") {
    TaskSpec spec = make_task(TaskFamily::state, 1, "", 5000, 100);
    CHECK_THROWS(generate_split(spec, Split::train, 0));
}

TEST_CASE("domain value vocabularies are disjoint across seeds") {
    TaskData a = build_task_data(make_task(TaskFamily::slot2text, 1, "", 60, 10));
    TaskData b = build_task_data(make_task(TaskFamily::slot2text, 2, "", 60, 10));
    auto va = vocab_of(a), vb = vocab_of(b);
    std::vector<std::string> shared;
    std::set_intersection(va.begin(), va.end(), vb.begin(), vb.end(), std::back_inserter(shared));
    // only structural words remain; no coded value words (family letter prefix + syllables)
    for (const std::string& w : shared) CHECK(w[0] != 'v');
}

TEST_CASE("slot2text and state tasks share no vocabulary at all") {
    TaskData a = build_task_data(make_task(TaskFamily::slot2text, 1, "", 60, 10));
    TaskData b = build_task_data(make_task(TaskFamily::state, 2, "", 60, 10));
    auto va = vocab_of(a), vb = vocab_of(b);
    std::vector<std::string> shared;
    std::set_intersection(va.begin(), va.end(), vb.begin(), vb.end(), std::back_inserter(shared));
    CHECK(shared.empty());
}

TEST_CASE("similarity matrix properties") {
    std::vector<TaskData> tasks;
    tasks.push_back(build_task_data(make_task(TaskFamily::slot2text, 1, "", 60, 10)));
    tasks.push_back(build_task_data(make_task(TaskFamily::slot2text, 2, "", 60, 10)));
    tasks.push_back(build_task_data(make_task(TaskFamily::query, 3, "", 60, 10)));
    tasks.push_back(build_task_data(make_task(TaskFamily::state, 4, "", 60, 10)));
    auto sim = similarity_matrix(tasks);
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        CHECK(sim[i][i] == 1.0);
        for (std::size_t j = 0; j < tasks.size(); ++j) {
            CHECK(sim[i][j] == sim[j][i]);
            CHECK(sim[i][j] >= 0.0);
            CHECK(sim[i][j] <= 1.0);
        }
    }
    // same family >> cross family; disjoint pair exactly zero
    CHECK(sim[0][1] > sim[0][2]);
    CHECK(sim[0][1] > sim[0][3]);
    CHECK(sim[0][3] == 0.0);
}

TEST_CASE("tokenizer layout and round trip") {
    std::vector<std::string> words = {"b", "a", "c", "a"};
    Tokenizer tok(words, {"t1", "t2"});
    CHECK(tok.n_base() == 4); // a b c + [PAD]
    CHECK(tok.vocab_size() == 4 + 3 + 2);
    CHECK(tok.id_of("a") == 0);
    CHECK(tok.pad_id() == 3);
    CHECK(tok.eos_id() == 4);
    CHECK(tok.gen_id("t2") == tok.vocab_size() - 1);
    CHECK(tok.word_of(tok.gen_id("t1")) == "[GEN_t1]");
    auto ids = tok.encode({"c", "b", "a"});
    CHECK(tok.decode(ids) == std::vector<std::string>{"c", "b", "a"});
    CHECK_THROWS(tok.id_of("missing"));
    CHECK(tok.is_special(tok.pad_id()));
    CHECK_FALSE(tok.is_special(tok.id_of("c")));
}
