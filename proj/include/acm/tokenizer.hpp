// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "acm/taskgen.hpp"

#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace acm {

// Word-level tokenizer over a closed vocabulary. Layout, in id order:
//   [0 .. n_words)  sorted words, then [PAD]           -> frozen embedding block
//   [n_base ..)     [EOS], [QSEP], [ASEP], [GEN_*]...  -> trainable embedding block
class Tokenizer {
public:
    Tokenizer() = default;

    Tokenizer(std::vector<std::string> words, std::vector<std::string> gen_task_names) {
        std::set<std::string> uniq(words.begin(), words.end());
        words_.assign(uniq.begin(), uniq.end());
        for (const std::string& w : words_) {
            if (w.empty() || w.front() == '[') throw std::invalid_argument("tokenizer: reserved word " + w);
        }
        specials_ = {"[EOS]", "[QSEP]", "[ASEP]"};
        for (const std::string& t : gen_task_names) specials_.push_back(gen_token_name(t));
        int id = 0;
        for (const std::string& w : words_) to_id_[w] = id++;
        pad_id_ = id++;
        to_id_["[PAD]"] = pad_id_;
        for (const std::string& s : specials_) {
            if (!to_id_.emplace(s, id++).second) throw std::invalid_argument("tokenizer: duplicate special " + s);
        }
        n_total_ = id;
    }

    static std::string gen_token_name(const std::string& task) { return "[GEN_" + task + "]"; }

    int vocab_size() const { return n_total_; }
    int n_base() const { return static_cast<int>(words_.size()) + 1; } // words + [PAD]
    int n_special() const { return n_total_ - n_base(); }

    int pad_id() const { return pad_id_; }
    int eos_id() const { return n_base(); }
    int qsep_id() const { return n_base() + 1; }
    int asep_id() const { return n_base() + 2; }
    int gen_id(const std::string& task) const { return id_of(gen_token_name(task)); }

    int id_of(const std::string& w) const {
        auto it = to_id_.find(w);
        if (it == to_id_.end()) throw std::out_of_range("tokenizer: unknown word '" + w + "'");
        return it->second;
    }
    bool contains(const std::string& w) const { return to_id_.count(w) > 0; }

    const std::string& word_of(int id) const {
        if (id < 0 || id >= n_total_) throw std::out_of_range("tokenizer: id out of range");
        if (id < static_cast<int>(words_.size())) return words_[id];
        if (id == pad_id_) {
            static const std::string pad = "[PAD]";
            return pad;
        }
        return specials_[id - n_base()];
    }

    bool is_special(int id) const { return id >= pad_id_; }

    std::vector<int> encode(const std::vector<std::string>& ws) const {
        std::vector<int> ids;
        ids.reserve(ws.size());
        for (const std::string& w : ws) ids.push_back(id_of(w));
        return ids;
    }
    std::vector<std::string> decode(const std::vector<int>& ids) const {
        std::vector<std::string> ws;
        ws.reserve(ids.size());
        for (int id : ids) ws.push_back(word_of(id));
        return ws;
    }

    const std::vector<std::string>& words() const { return words_; }
    const std::vector<std::string>& specials() const { return specials_; }

private:
    std::vector<std::string> words_;
    std::vector<std::string> specials_;
    std::unordered_map<std::string, int> to_id_;
    int pad_id_ = 0;
    int n_total_ = 0;
};

} // namespace acm
