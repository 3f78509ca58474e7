// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthetic task families. Each family has a rule-based
// ground-truth mapping from input to output; generated examples always
// satisfy it. Domain value words are coded from (family, domain seed) so
// distinct domains never share value vocabulary.

#pragma once

#include "acm/util.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace acm {

enum class TaskFamily { slot2text, query, extract, state };

inline TaskFamily family_from_string(const std::string& s) {
    if (s == "slot2text") return TaskFamily::slot2text;
    if (s == "query") return TaskFamily::query;
    if (s == "extract") return TaskFamily::extract;
    if (s == "state") return TaskFamily::state;
    throw std::invalid_argument("unknown task family: " + s);
}

inline std::string family_to_string(TaskFamily f) {
    switch (f) {
        case TaskFamily::slot2text: return "slot2text";
        case TaskFamily::query: return "query";
        case TaskFamily::extract: return "extract";
        case TaskFamily::state: return "state";
    }
    return "?";
}

struct TaskSpec {
    TaskFamily family = TaskFamily::slot2text;
    std::uint64_t domain_seed = 0;
    std::string name;
    int n_train = 500;
    int n_test = 200;
};

struct RawExample {
    std::vector<std::string> input;
    std::vector<std::string> output;
};

struct TaskData {
    TaskSpec spec;
    std::vector<std::string> question;
    std::vector<RawExample> train;
    std::vector<RawExample> test;
};

namespace taskgen {

// ---------------------------------------------------------------------------
// coded domain vocabulary

inline const char* kSyllables[20] = {"ba", "be", "bi", "bo", "bu", "da", "de", "di", "do", "du",
                                     "ga", "ge", "gi", "go", "gu", "ka", "ke", "ki", "ko", "ku"};

inline char family_letter(TaskFamily f) {
    switch (f) {
        case TaskFamily::slot2text: return 'v';
        case TaskFamily::query: return 'c';
        case TaskFamily::extract: return 'w';
        case TaskFamily::state: return 'm';
    }
    return 'x';
}

// Injective over (prefix, seed < 400, index < 400); guarantees disjoint
// value vocabularies across domains.
inline std::string coded_word(char prefix, std::uint64_t seed, int index) {
    if (seed >= 400) throw std::invalid_argument("domain seed must be < 400");
    if (index < 0 || index >= 400) throw std::invalid_argument("coded word index out of range");
    std::string w;
    w.push_back(prefix);
    w += kSyllables[(seed / 20) % 20];
    w += kSyllables[seed % 20];
    w += kSyllables[(index / 20) % 20];
    w += kSyllables[index % 20];
    return w;
}

inline std::string coded_word(TaskFamily f, std::uint64_t seed, int index) {
    return coded_word(family_letter(f), seed, index);
}

inline std::vector<std::string> question_for(TaskFamily f) {
    switch (f) {
        case TaskFamily::slot2text: return {"what", "is", "the", "natural", "language", "form", "?"};
        case TaskFamily::query: return {"give", "sql", "for", "this", "request", "?"};
        case TaskFamily::extract: return {"headline", "sentence", "only", "!"};
        case TaskFamily::state: return {"track", "booking", "state", "now"};
    }
    return {};
}

// slot2text value pools (shared slot names, per-domain values)
inline const std::vector<std::string>& slot_names() {
    static const std::vector<std::string> s = {"name", "type", "area", "near", "price"};
    return s;
}
struct SlotPools {
    std::vector<std::string> name, type, area, near, price;
};
inline SlotPools slot_pools(std::uint64_t seed) {
    SlotPools p;
    int idx = 0;
    for (int i = 0; i < 8; ++i) p.name.push_back(coded_word(TaskFamily::slot2text, seed, idx++));
    for (int i = 0; i < 6; ++i) p.type.push_back(coded_word(TaskFamily::slot2text, seed, idx++));
    for (int i = 0; i < 5; ++i) p.area.push_back(coded_word(TaskFamily::slot2text, seed, idx++));
    for (int i = 0; i < 5; ++i) p.near.push_back(coded_word(TaskFamily::slot2text, seed, idx++));
    for (int i = 0; i < 5; ++i) p.price.push_back(coded_word(TaskFamily::slot2text, seed, idx++));
    return p;
}

// ---------------------------------------------------------------------------
// ground truth rules (parse the input, nothing else)

inline std::vector<std::string> ground_truth_slot2text(const std::vector<std::string>& input) {
    std::map<std::string, std::string> kv;
    std::size_t i = 0;
    while (i < input.size()) {
        if (i + 3 > input.size() || input[i + 1] != "=") throw std::invalid_argument("slot2text: bad pair");
        kv[input[i]] = input[i + 2];
        i += 3;
        if (i < input.size()) {
            if (input[i] != ",") throw std::invalid_argument("slot2text: expected comma");
            ++i;
        }
    }
    std::vector<std::string> out = {kv.at("name"), "is", "a", kv.at("type")};
    if (kv.count("area")) { out.push_back("at"); out.push_back(kv.at("area")); }
    if (kv.count("near")) { out.push_back("beside"); out.push_back(kv.at("near")); }
    if (kv.count("price")) { out.push_back("priced"); out.push_back(kv.at("price")); }
    out.push_back(".");
    return out;
}

// "which C1 has C2 N1 [in C3 N2] ?" -> "select C1 from table where C2 = N1 [and C3 = N2]"
inline std::vector<std::string> ground_truth_query(const std::vector<std::string>& input) {
    if (input.size() < 5 || input.front() != "which" || input.back() != "?" || input[2] != "has") {
        throw std::invalid_argument("query: bad input shape");
    }
    std::vector<std::string> out = {"select", input[1], "from", "table", "where", input[3], "=", input[4]};
    if (input.size() > 6) {
        if (input[5] != "in" || input.size() != 9) throw std::invalid_argument("query: bad second condition");
        out.push_back("and");
        out.push_back(input[6]);
        out.push_back("=");
        out.push_back(input[7]);
    }
    return out;
}

// sentences end with "!"; exactly one uses the marker verb "announces"
inline std::vector<std::string> ground_truth_extract(const std::vector<std::string>& input) {
    std::vector<std::string> sentence;
    std::vector<std::string> found;
    bool has_marker = false;
    for (const std::string& w : input) {
        sentence.push_back(w);
        if (w == "announces") has_marker = true;
        if (w == "!") {
            if (has_marker) {
                if (!found.empty()) throw std::invalid_argument("extract: multiple marker sentences");
                found = sentence;
            }
            sentence.clear();
            has_marker = false;
        }
    }
    if (found.empty()) throw std::invalid_argument("extract: no marker sentence");
    return found;
}

// "D turnone guest seeks V1 S1 turntwo guest also seeks V2 S2"
//   -> "D S1 V1 ; D S2 V2 ;"
inline std::vector<std::string> ground_truth_state(const std::vector<std::string>& input) {
    if (input.size() != 12 || input[1] != "turnone" || input[6] != "turntwo") {
        throw std::invalid_argument("state: bad input shape");
    }
    const std::string& dom = input[0];
    return {dom, input[5], input[4], ";", dom, input[11], input[10], ";"};
}

inline std::vector<std::string> ground_truth(TaskFamily f, const std::vector<std::string>& input) {
    switch (f) {
        case TaskFamily::slot2text: return ground_truth_slot2text(input);
        case TaskFamily::query: return ground_truth_query(input);
        case TaskFamily::extract: return ground_truth_extract(input);
        case TaskFamily::state: return ground_truth_state(input);
    }
    throw std::invalid_argument("unknown family");
}

// ---------------------------------------------------------------------------
// example sampling

inline std::vector<std::string> sample_input(const TaskSpec& spec, std::mt19937_64& rng) {
    auto pick = [&rng](const std::vector<std::string>& pool) {
        return pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
    };
    switch (spec.family) {
        case TaskFamily::slot2text: {
            SlotPools pools = slot_pools(spec.domain_seed);
            auto val = [&](const std::vector<std::string>& pool) { return pick(pool); };
            std::vector<std::string> in = {"name", "=", val(pools.name), ",", "type", "=", val(pools.type)};
            // optional subset of {area, near, price}, at most two
            const int extra = std::uniform_int_distribution<int>(0, 2)(rng);
            std::vector<int> opts = {0, 1, 2};
            std::shuffle(opts.begin(), opts.end(), rng);
            opts.resize(extra);
            std::sort(opts.begin(), opts.end()); // canonical slot order
            for (int o : opts) {
                in.push_back(",");
                if (o == 0) { in.push_back("area"); in.push_back("="); in.push_back(val(pools.area)); }
                if (o == 1) { in.push_back("near"); in.push_back("="); in.push_back(val(pools.near)); }
                if (o == 2) { in.push_back("price"); in.push_back("="); in.push_back(val(pools.price)); }
            }
            return in;
        }
        case TaskFamily::query: {
            std::vector<std::string> cols;
            for (int i = 0; i < 6; ++i) cols.push_back(coded_word(spec.family, spec.domain_seed, i));
            std::shuffle(cols.begin(), cols.end(), rng);
            auto num = [&rng] {
                return std::to_string(std::uniform_int_distribution<int>(2, 29)(rng));
            };
            const bool two = std::uniform_int_distribution<int>(0, 3)(rng) > 0;
            std::vector<std::string> in = {"which", cols[0], "has", cols[1], num()};
            if (two) { in.push_back("in"); in.push_back(cols[2]); in.push_back(num()); }
            in.push_back("?");
            return in;
        }
        case TaskFamily::extract: {
            std::vector<std::string> subj, obj;
            for (int i = 0; i < 6; ++i) subj.push_back(coded_word(spec.family, spec.domain_seed, i));
            for (int i = 0; i < 8; ++i) obj.push_back(coded_word(spec.family, spec.domain_seed, 6 + i));
            static const std::vector<std::string> fillers = {"reports", "mentions", "notes", "spots"};
            const int n_sent = std::uniform_int_distribution<int>(3, 4)(rng);
            const int marker_at = std::uniform_int_distribution<int>(0, n_sent - 1)(rng);
            std::vector<std::string> in;
            for (int s = 0; s < n_sent; ++s) {
                in.push_back(pick(subj));
                in.push_back(s == marker_at ? "announces" : pick(fillers));
                in.push_back(pick(obj));
                in.push_back("!");
            }
            return in;
        }
        case TaskFamily::state: {
            const std::string dom = coded_word(spec.family, spec.domain_seed, 0);
            std::vector<std::string> slots, vals;
            for (int i = 0; i < 5; ++i) slots.push_back(coded_word(spec.family, spec.domain_seed, 1 + i));
            for (int i = 0; i < 8; ++i) vals.push_back(coded_word(spec.family, spec.domain_seed, 6 + i));
            std::size_t s1 = std::uniform_int_distribution<std::size_t>(0, slots.size() - 1)(rng);
            std::size_t s2 = std::uniform_int_distribution<std::size_t>(0, slots.size() - 2)(rng);
            if (s2 >= s1) ++s2;
            return {dom, "turnone", "guest", "seeks", pick(vals), slots[s1],
                    "turntwo", "guest", "also", "seeks", pick(vals), slots[s2]};
        }
    }
    throw std::invalid_argument("unknown family");
}

} // namespace taskgen

inline TaskSpec make_task(TaskFamily family, std::uint64_t domain_seed, std::string name = "",
                          int n_train = 500, int n_test = 200) {
    if (domain_seed >= 400) throw std::invalid_argument("domain seed must be < 400");
    TaskSpec spec;
    spec.family = family;
    spec.domain_seed = domain_seed;
    spec.name = name.empty() ? family_to_string(family) + std::to_string(domain_seed) : std::move(name);
    spec.n_train = n_train;
    spec.n_test = n_test;
    return spec;
}

enum class Split { train, test };

// Deterministic, duplicate-free within a split, disjoint across splits: a
// single seeded candidate stream is deduplicated, the first n_train unique
// examples form the train split and the next n_test form the test split.
inline std::vector<RawExample> generate_split(const TaskSpec& spec, Split split,
                                              std::uint64_t seed = 0) {
    const int want = spec.n_train + spec.n_test;
    std::mt19937_64 rng = make_rng(spec.domain_seed, "taskgen", static_cast<int>(spec.family), seed);
    std::set<std::string> seen;
    std::vector<RawExample> all;
    const long cap = 200L * want;
    for (long attempt = 0; attempt < cap && static_cast<int>(all.size()) < want; ++attempt) {
        RawExample ex;
        ex.input = taskgen::sample_input(spec, rng);
        const std::string key = join_ws(ex.input);
        if (!seen.insert(key).second) continue;
        ex.output = taskgen::ground_truth(spec.family, ex.input);
        all.push_back(std::move(ex));
    }
    if (static_cast<int>(all.size()) < want) {
        throw std::runtime_error("generate_split: requested size exceeds combinatorial space for task " +
                                 spec.name);
    }
    if (split == Split::train) return {all.begin(), all.begin() + spec.n_train};
    return {all.begin() + spec.n_train, all.end()};
}

inline TaskData build_task_data(const TaskSpec& spec, std::uint64_t seed = 0) {
    TaskData d;
    d.spec = spec;
    d.question = taskgen::question_for(spec.family);
    d.train = generate_split(spec, Split::train, seed);
    d.test = generate_split(spec, Split::test, seed);
    return d;
}

// All words a task can produce, for tokenizer construction.
inline std::vector<std::string> task_vocabulary(const TaskData& d) {
    std::set<std::string> words(d.question.begin(), d.question.end());
    for (const auto* split : {&d.train, &d.test}) {
        for (const RawExample& ex : *split) {
            words.insert(ex.input.begin(), ex.input.end());
            words.insert(ex.output.begin(), ex.output.end());
        }
    }
    return {words.begin(), words.end()};
}

// Filler pretraining family: key/value inputs whose outputs interleave a
// per-key glue word with the copied value. Teaches the generation protocol
// (GEN prefix, delimiters, EOS), keyed lookup and value copying without
// exposing any real task family's grammar. Keys appear in random order and
// values come from one shared pool, so nothing ties glue choice to value
// identity.
namespace filler {

using taskgen::coded_word;

inline std::vector<std::string> question() { return {"echo", "fields", "back"}; }

// Each domain realizes its keys through a fixed glue program: up to two glue
// words before the copied value, up to one after, plus an optional sentence
// terminator. Programs vary by domain so pretraining covers the pattern
// class rather than any one task family's grammar.
struct GlueProgram {
    std::vector<std::string> pre, post; // per key
};

inline GlueProgram glue_program(std::uint64_t seed, int key_index) {
    GlueProgram p;
    const std::uint64_t h = derive_seed(seed, "filler_glue", key_index);
    const int pre_len = static_cast<int>(h % 3);           // 0..2
    const int post_len = static_cast<int>((h >> 8) % 2);   // 0..1
    for (int i = 0; i < pre_len; ++i) p.pre.push_back(coded_word('g', seed, 16 + 2 * key_index + i));
    if (post_len) p.post.push_back(coded_word('g', seed, 52 + key_index));
    return p;
}

inline bool has_terminator(std::uint64_t seed) { return derive_seed(seed, "filler_term") % 2 == 0; }

inline std::vector<std::string> ground_truth(const std::vector<std::string>& input,
                                             std::uint64_t seed) {
    std::map<std::string, int> key_index;
    for (int i = 0; i < 8; ++i) key_index[coded_word('g', seed, i)] = i;
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i + 2 < input.size() + 1) {
        const GlueProgram p = glue_program(seed, key_index.at(input[i]));
        out.insert(out.end(), p.pre.begin(), p.pre.end());
        out.push_back(input[i + 2]);
        out.insert(out.end(), p.post.begin(), p.post.end());
        i += 4; // skip "k = v ,"
    }
    if (has_terminator(seed)) out.push_back(coded_word('g', seed, 61));
    return out;
}

inline RawExample sample(std::uint64_t seed, std::mt19937_64& rng) {
    std::vector<int> keys = {0, 1, 2, 3, 4, 5, 6, 7};
    std::shuffle(keys.begin(), keys.end(), rng);
    const int n_pairs = std::uniform_int_distribution<int>(2, 4)(rng);
    std::uniform_int_distribution<int> val(32, 51);
    RawExample ex;
    for (int p = 0; p < n_pairs; ++p) {
        if (p) ex.input.push_back(",");
        ex.input.push_back(coded_word('g', seed, keys[p]));
        ex.input.push_back("=");
        ex.input.push_back(coded_word('g', seed, val(rng)));
    }
    ex.output = ground_truth(ex.input, seed);
    return ex;
}

inline TaskData build(std::uint64_t seed, int n, const std::string& name) {
    TaskData d;
    d.spec.family = TaskFamily::slot2text; // unused; filler data never trains tasks
    d.spec.domain_seed = seed;
    d.spec.name = name;
    d.spec.n_train = n;
    d.spec.n_test = 0;
    d.question = question();
    std::mt19937_64 rng = make_rng(seed, "filler_gen");
    std::set<std::string> seen;
    long cap = 200L * n;
    while (static_cast<int>(d.train.size()) < n && cap-- > 0) {
        RawExample ex = sample(seed, rng);
        if (seen.insert(join_ws(ex.input)).second) d.train.push_back(std::move(ex));
    }
    if (static_cast<int>(d.train.size()) < n) throw std::runtime_error("filler: space exhausted");
    return d;
}

} // namespace filler

// Pretraining text: vocabulary drill and repetition lines over every task's
// word list plus formatted flows from filler domains (real task
// distributions never leak). Repetition lines teach content-general copying,
// which frozen attention must supply before adapters can specialize.
// Structure lines use the literal delimiter specials so their embeddings and
// the surrounding machinery are pretrained.
inline std::vector<std::vector<std::string>> build_pretrain_corpus(
    const std::vector<TaskData>& tasks, const std::vector<TaskData>& fillers, int drill_per_task,
    int echo_per_task, int structure_per_filler, std::uint64_t seed) {
    std::vector<std::vector<std::string>> lines;
    std::mt19937_64 rng = make_rng(seed, "pretrain_corpus");
    std::vector<const TaskData*> word_sources;
    for (const TaskData& t : tasks) word_sources.push_back(&t);
    for (const TaskData& f : fillers) word_sources.push_back(&f);
    for (const TaskData* t : word_sources) {
        std::vector<std::string> words = task_vocabulary(*t);
        std::uniform_int_distribution<int> len(8, 14);
        std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
        for (int i = 0; i < drill_per_task; ++i) {
            std::vector<std::string> line;
            const int n = len(rng);
            for (int j = 0; j < n; ++j) line.push_back(words[pick(rng)]);
            lines.push_back(std::move(line));
        }
        std::uniform_int_distribution<int> echo_len(3, 7);
        for (int i = 0; i < echo_per_task; ++i) {
            std::vector<std::string> half;
            const int n = echo_len(rng);
            for (int j = 0; j < n; ++j) half.push_back(words[pick(rng)]);
            std::vector<std::string> line = half;
            line.insert(line.end(), half.begin(), half.end());
            lines.push_back(std::move(line));
        }
    }
    for (const TaskData& f : fillers) {
        for (int i = 0; i < structure_per_filler && i < static_cast<int>(f.train.size()); ++i) {
            const RawExample& ex = f.train[i];
            std::vector<std::string> line = {"[GEN_" + f.spec.name + "]"};
            line.insert(line.end(), ex.input.begin(), ex.input.end());
            line.push_back("[QSEP]");
            line.insert(line.end(), f.question.begin(), f.question.end());
            line.push_back("[ASEP]");
            line.insert(line.end(), ex.output.begin(), ex.output.end());
            line.push_back("[EOS]");
            lines.push_back(std::move(line));
        }
    }
    std::shuffle(lines.begin(), lines.end(), rng);
    return lines;
}

// Cosine similarity of word-frequency distributions; diagonal 1, entries in
// [0,1]. Counts cover input, question and output tokens of the train split.
inline std::vector<std::vector<double>> similarity_matrix(const std::vector<TaskData>& tasks) {
    if (tasks.size() < 2) throw std::invalid_argument("similarity_matrix: need at least 2 tasks");
    std::vector<std::map<std::string, double>> freq(tasks.size());
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        for (const RawExample& ex : tasks[i].train) {
            for (const std::string& w : ex.input) freq[i][w] += 1.0;
            for (const std::string& w : tasks[i].question) freq[i][w] += 1.0;
            for (const std::string& w : ex.output) freq[i][w] += 1.0;
        }
        double norm = 0.0;
        for (auto& [w, c] : freq[i]) norm += c * c;
        norm = std::sqrt(norm);
        for (auto& [w, c] : freq[i]) c /= norm;
    }
    std::vector<std::vector<double>> sim(tasks.size(), std::vector<double>(tasks.size(), 0.0));
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        for (std::size_t j = i; j < tasks.size(); ++j) {
            double dot = 0.0;
            for (const auto& [w, c] : freq[i]) {
                auto it = freq[j].find(w);
                if (it != freq[j].end()) dot += c * it->second;
            }
            sim[i][j] = sim[j][i] = (i == j) ? 1.0 : dot;
        }
    }
    return sim;
}

} // namespace acm
