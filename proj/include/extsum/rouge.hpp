#pragma once

// ROUGE-N and ROUGE-L (plain LCS) F1 over token sequences.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace extsum {

struct RougeScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;

    static RougeScore from_pr(double p, double r) {
        return {p, r, (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0};
    }
};

/// ROUGE-L here is sentence-level LCS over the flattened token sequence,
/// not the summary-level union-LCS variant.
inline constexpr bool kRougeLSummaryLevel = false;

/// Lowercase, split on every non-alphanumeric ASCII character, drop empties.
/// No stemming and no stopword removal.
inline std::vector<std::string> scoring_tokens(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    for (const char ch : s) {
        const auto c = static_cast<unsigned char>(ch);
        if (c < 0x80 && std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

/// Scoring tokens of several texts concatenated in order.
inline std::vector<std::string> scoring_tokens(const std::vector<std::string>& texts) {
    std::vector<std::string> out;
    for (const auto& t : texts) {
        auto toks = scoring_tokens(t);
        out.insert(out.end(), std::make_move_iterator(toks.begin()), std::make_move_iterator(toks.end()));
    }
    return out;
}

namespace detail {

template <typename Tok>
std::map<std::vector<Tok>, std::size_t> ngram_counts(const std::vector<Tok>& toks, std::size_t n) {
    std::map<std::vector<Tok>, std::size_t> counts;
    if (toks.size() < n) return counts;
    for (std::size_t i = 0; i + n <= toks.size(); ++i) {
        ++counts[std::vector<Tok>(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                  toks.begin() + static_cast<std::ptrdiff_t>(i + n))];
    }
    return counts;
}

}  // namespace detail

/// Clipped n-gram overlap. Empty n-gram set on either side scores zero.
template <typename Tok>
RougeScore rouge_n(const std::vector<Tok>& candidate, const std::vector<Tok>& reference, std::size_t n) {
    if (n == 0) return {};
    if (candidate.size() < n || reference.size() < n) return {};
    const auto cand = detail::ngram_counts(candidate, n);
    const auto ref = detail::ngram_counts(reference, n);
    std::size_t overlap = 0;
    for (const auto& [gram, c] : cand) {
        if (const auto it = ref.find(gram); it != ref.end()) overlap += std::min(c, it->second);
    }
    const double p = static_cast<double>(overlap) / static_cast<double>(candidate.size() - n + 1);
    const double r = static_cast<double>(overlap) / static_cast<double>(reference.size() - n + 1);
    return RougeScore::from_pr(p, r);
}

/// Longest common subsequence length, O(|a||b|) time and O(min) memory.
template <typename Tok>
std::size_t lcs_length(const std::vector<Tok>& a, const std::vector<Tok>& b) {
    const auto& outer = a.size() >= b.size() ? a : b;
    const auto& inner = a.size() >= b.size() ? b : a;
    if (inner.empty()) return 0;
    std::vector<std::size_t> prev(inner.size() + 1, 0), cur(inner.size() + 1, 0);
    for (std::size_t i = 1; i <= outer.size(); ++i) {
        for (std::size_t j = 1; j <= inner.size(); ++j) {
            cur[j] = outer[i - 1] == inner[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[inner.size()];
}

template <typename Tok>
RougeScore rouge_l(const std::vector<Tok>& candidate, const std::vector<Tok>& reference) {
    if (candidate.empty() || reference.empty()) return {};
    const auto lcs = static_cast<double>(lcs_length(candidate, reference));
    return RougeScore::from_pr(lcs / static_cast<double>(candidate.size()),
                               lcs / static_cast<double>(reference.size()));
}

struct RougeTriple {
    RougeScore rouge1;
    RougeScore rouge2;
    RougeScore rougeL;
};

template <typename Tok>
RougeTriple rouge_all(const std::vector<Tok>& candidate, const std::vector<Tok>& reference) {
    return {rouge_n(candidate, reference, 1), rouge_n(candidate, reference, 2), rouge_l(candidate, reference)};
}

inline RougeTriple rouge_text(std::string_view candidate, std::string_view reference) {
    return rouge_all(scoring_tokens(candidate), scoring_tokens(reference));
}

}  // namespace extsum
