#pragma once

// Oracle sentence labels: the subset of sentences maximizing
// mean(ROUGE-1 F1, ROUGE-2 F1) against the abstract.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "extsum/corpus.hpp"
#include "extsum/error.hpp"
#include "extsum/rouge.hpp"

namespace extsum {

struct OracleLabels {
    std::vector<int> labels;
    double achieved_score = 0.0;
    std::vector<std::size_t> selection_order;
};

inline constexpr std::size_t kUnlimited = std::numeric_limits<std::size_t>::max();
inline constexpr std::size_t kBruteForceMaxSentences = 20;

/// Sentences and abstract interned to integer ids so repeated scoring avoids
/// string comparisons.
class OracleScorer {
public:
    explicit OracleScorer(const Document& doc) {
        if (doc.abstract.empty()) throw ValidationError("document '" + doc.id + "' has an empty abstract");
        std::unordered_map<std::string, int> ids;
        auto intern = [&](const std::vector<std::string>& toks) {
            std::vector<int> out;
            out.reserve(toks.size());
            for (const auto& t : toks) out.push_back(ids.emplace(t, static_cast<int>(ids.size())).first->second);
            return out;
        };
        reference_ = intern(scoring_tokens(doc.abstract));
        for (const auto& s : doc.sentences) sentences_.push_back(intern(scoring_tokens(s)));
    }

    std::size_t sentence_count() const noexcept { return sentences_.size(); }

    /// Score of the given sentence indices, concatenated in document order.
    /// `selected` must be sorted ascending.
    double score(const std::vector<std::size_t>& selected) const {
        std::vector<int> cand;
        for (const auto i : selected) cand.insert(cand.end(), sentences_[i].begin(), sentences_[i].end());
        return 0.5 * (rouge_n(cand, reference_, 1).f1 + rouge_n(cand, reference_, 2).f1);
    }

private:
    std::vector<int> reference_;
    std::vector<std::vector<int>> sentences_;
};

/// mean(R1-F1, R2-F1) of a label vector's selection, recomputed from scratch.
inline double oracle_objective(const Document& doc, const std::vector<int>& labels) {
    std::vector<std::string> chosen;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == 1) chosen.push_back(doc.sentences.at(i));
    const auto cand = scoring_tokens(chosen);
    const auto ref = scoring_tokens(doc.abstract);
    return 0.5 * (rouge_n(cand, ref, 1).f1 + rouge_n(cand, ref, 2).f1);
}

namespace detail {

inline void insert_sorted(std::vector<std::size_t>& v, std::size_t x) {
    auto it = v.begin();
    while (it != v.end() && *it < x) ++it;
    v.insert(it, x);
}

}  // namespace detail

/// Greedily add the sentence with the best resulting score until no candidate
/// strictly improves it or max_sentences is reached. Ties go to the lowest index.
inline OracleLabels greedy_oracle(const Document& doc, std::size_t max_sentences = kUnlimited) {
    if (doc.sentences.empty()) throw ValidationError("document '" + doc.id + "' has no sentences");
    if (max_sentences == 0) throw ConfigError("greedy_oracle: max_sentences must be positive");
    const OracleScorer scorer(doc);
    const std::size_t n = scorer.sentence_count();

    OracleLabels out;
    out.labels.assign(n, 0);
    std::vector<std::size_t> selected;
    double best = 0.0;
    while (selected.size() < max_sentences && selected.size() < n) {
        std::optional<std::size_t> pick;
        double pick_score = best;
        for (std::size_t i = 0; i < n; ++i) {
            if (out.labels[i]) continue;
            auto trial = selected;
            detail::insert_sorted(trial, i);
            const double s = scorer.score(trial);
            if (s > pick_score) {
                pick_score = s;
                pick = i;
            }
        }
        if (!pick) break;
        detail::insert_sorted(selected, *pick);
        out.labels[*pick] = 1;
        out.selection_order.push_back(*pick);
        best = pick_score;
    }
    out.achieved_score = best;
    return out;
}

/// Exhaustive search over subsets of size <= max_sentences. Ties go to the
/// smaller subset, then to the lexicographically smallest index tuple.
inline OracleLabels brute_force_oracle(const Document& doc, std::size_t max_sentences = kUnlimited) {
    if (doc.sentences.empty()) throw ValidationError("document '" + doc.id + "' has no sentences");
    if (doc.sentences.size() > kBruteForceMaxSentences) {
        throw ConfigError("brute_force_oracle: " + std::to_string(doc.sentences.size()) +
                          " sentences exceeds the exhaustive limit of " +
                          std::to_string(kBruteForceMaxSentences) + "; use greedy_oracle");
    }
    if (max_sentences == 0) throw ConfigError("brute_force_oracle: max_sentences must be positive");
    const OracleScorer scorer(doc);
    const std::size_t n = scorer.sentence_count();
    const std::size_t cap = std::min(max_sentences, n);

    std::vector<std::size_t> best_set;
    double best = 0.0;
    // Sizes ascending, combinations in lexicographic order; only strict
    // improvements replace the incumbent, which realizes the tie rule.
    for (std::size_t k = 1; k <= cap; ++k) {
        std::vector<std::size_t> comb(k);
        for (std::size_t i = 0; i < k; ++i) comb[i] = i;
        while (true) {
            const double s = scorer.score(comb);
            if (s > best) {
                best = s;
                best_set = comb;
            }
            std::size_t i = k;
            while (i > 0 && comb[i - 1] == n - k + (i - 1)) --i;
            if (i == 0) break;
            ++comb[i - 1];
            for (std::size_t j = i; j < k; ++j) comb[j] = comb[j - 1] + 1;
        }
    }
    OracleLabels out;
    out.labels.assign(n, 0);
    for (const auto i : best_set) out.labels[i] = 1;
    out.selection_order = best_set;
    out.achieved_score = best;
    return out;
}

}  // namespace extsum
