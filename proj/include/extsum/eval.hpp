#pragma once

// Sentence selection at inference, corpus ROUGE evaluation, LEAD-k and the
// relative-position histogram.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "extsum/corpus.hpp"
#include "extsum/error.hpp"
#include "extsum/model.hpp"
#include "extsum/rouge.hpp"
#include "extsum/train.hpp"

namespace extsum {

struct SelectionResult {
    std::string doc_id;
    std::vector<std::size_t> chosen_indices;  // ascending
    std::vector<double> probabilities;        // one per source sentence
    std::size_t k = 0;
    std::size_t n_sentences = 0;
};

struct PositionHistogram {
    std::size_t bin_count = 0;
    std::vector<std::size_t> bin_counts;
    std::size_t total_selections = 0;
};

struct DocScores {
    std::string doc_id;
    RougeTriple scores;
    std::vector<std::size_t> chosen_indices;
    std::size_t n_sentences = 0;
};

struct EvalReport {
    RougeScore rouge1, rouge2, rougeL;
    std::vector<DocScores> per_doc;
    std::size_t skipped_empty_abstract = 0;
};

inline constexpr std::size_t kDefaultBins = 20;

/// Rank order: higher probability first, lower index on ties.
inline std::vector<std::size_t> rank_by_probability(const std::vector<double>& probs) {
    std::vector<std::size_t> order(probs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
    return order;
}

/// Indices of the k largest probabilities, ascending.
inline std::vector<std::size_t> select_top_k(const std::vector<double>& probs, std::size_t k) {
    if (probs.empty()) throw ValidationError("select_top_k: empty probability list");
    if (k == 0) throw ConfigError("select_top_k: k must be at least 1");
    auto order = rank_by_probability(probs);
    order.resize(std::min(k, order.size()));
    std::sort(order.begin(), order.end());
    return order;
}

inline std::set<std::vector<std::string>> trigram_set(const std::string& sentence) {
    const auto toks = scoring_tokens(sentence);
    std::set<std::vector<std::string>> out;
    for (std::size_t i = 0; i + 3 <= toks.size(); ++i) out.insert({toks[i], toks[i + 1], toks[i + 2]});
    return out;
}

/// Greedy selection in probability order that skips a sentence sharing any
/// trigram with the already accepted ones.
inline std::vector<std::size_t> select_top_k_trigram_blocked(const std::vector<double>& probs,
                                                             const std::vector<std::string>& sentences, std::size_t k) {
    if (probs.empty()) throw ValidationError("select_top_k_trigram_blocked: empty probability list");
    if (k == 0) throw ConfigError("select_top_k_trigram_blocked: k must be at least 1");
    if (probs.size() != sentences.size()) throw ShapeError("select_top_k_trigram_blocked: probs/sentences length mismatch");
    std::set<std::vector<std::string>> seen;
    std::vector<std::size_t> chosen;
    for (const auto i : rank_by_probability(probs)) {
        if (chosen.size() >= k) break;
        const auto tri = trigram_set(sentences[i]);
        const bool blocked = std::any_of(tri.begin(), tri.end(), [&](const auto& t) { return seen.count(t) != 0; });
        if (blocked) continue;
        seen.insert(tri.begin(), tri.end());
        chosen.push_back(i);
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

inline SelectionResult lead_k(const Document& doc, std::size_t k) {
    if (k == 0) throw ConfigError("lead_k: k must be at least 1");
    SelectionResult r;
    r.doc_id = doc.id;
    r.k = k;
    r.n_sentences = doc.sentences.size();
    r.probabilities.assign(doc.sentences.size(), 1.0);
    for (std::size_t i = 0; i < std::min(k, doc.sentences.size()); ++i) r.chosen_indices.push_back(i);
    return r;
}

/// Selection from stored labels (the oracle summary).
inline SelectionResult label_selection(const Document& doc) {
    if (!doc.labels) throw ValidationError("document '" + doc.id + "' has no labels");
    SelectionResult r;
    r.doc_id = doc.id;
    r.n_sentences = doc.sentences.size();
    for (std::size_t i = 0; i < doc.labels->size(); ++i) {
        r.probabilities.push_back(static_cast<double>((*doc.labels)[i]));
        if ((*doc.labels)[i] == 1) r.chosen_indices.push_back(i);
    }
    r.k = r.chosen_indices.size();
    return r;
}

/// Per-sentence model probabilities mapped back to source sentence indices.
/// Sentences removed during encoding get probability 0.
inline std::vector<double> sentence_probabilities(const Document& doc, const Vocab& vocab, const ModelParams& params,
                                                  const ModelConfig& cfg, std::size_t max_len, bool use_adapters = true) {
    const auto td = encode_document(doc, vocab, max_len);
    ForwardOptions opts;
    opts.use_adapters = use_adapters;
    const auto fwd = forward_document(td, params, cfg, opts);
    std::vector<double> probs(doc.sentences.size(), 0.0);
    for (std::size_t s = 0; s < td.sentence_index.size(); ++s) probs[td.sentence_index[s]] = fwd.probs[s];
    return probs;
}

inline SelectionResult model_selection(const Document& doc, const Vocab& vocab, const ModelParams& params,
                                       const ModelConfig& cfg, std::size_t max_len, std::size_t k,
                                       bool trigram_blocking = false, bool use_adapters = true) {
    SelectionResult r;
    r.doc_id = doc.id;
    r.k = k;
    r.n_sentences = doc.sentences.size();
    r.probabilities = sentence_probabilities(doc, vocab, params, cfg, max_len, use_adapters);
    r.chosen_indices = trigram_blocking ? select_top_k_trigram_blocked(r.probabilities, doc.sentences, k)
                                        : select_top_k(r.probabilities, k);
    return r;
}

using Selector = std::function<SelectionResult(const Document&)>;

/// Score every document's selection (sentences joined in document order)
/// against its abstract and average. Documents with an empty abstract are
/// skipped and counted.
inline EvalReport evaluate_corpus(const std::vector<Document>& docs, const Selector& selector, std::size_t workers = 1) {
    std::vector<std::optional<DocScores>> slots(docs.size());
    parallel_for(docs.size(), workers, [&](std::size_t i) {
        const Document& d = docs[i];
        if (d.abstract.empty()) return;
        const SelectionResult sel = selector(d);
        std::vector<std::string> chosen;
        for (const auto idx : sel.chosen_indices) {
            if (idx >= d.sentences.size()) throw ValidationError("selection index out of range in '" + d.id + "'");
            chosen.push_back(d.sentences[idx]);
        }
        DocScores ds;
        ds.doc_id = d.id;
        ds.scores = rouge_all(scoring_tokens(chosen), scoring_tokens(d.abstract));
        ds.chosen_indices = sel.chosen_indices;
        ds.n_sentences = d.sentences.size();
        slots[i] = std::move(ds);
    });

    EvalReport rep;
    for (auto& s : slots) {
        if (!s) {
            ++rep.skipped_empty_abstract;
            continue;
        }
        rep.per_doc.push_back(std::move(*s));
    }
    if (rep.per_doc.empty()) return rep;
    auto accumulate = [&](auto member) {
        RougeScore m;
        for (const auto& d : rep.per_doc) {
            const RougeScore& s = d.scores.*member;
            m.precision += s.precision;
            m.recall += s.recall;
            m.f1 += s.f1;
        }
        const double n = static_cast<double>(rep.per_doc.size());
        m.precision /= n;
        m.recall /= n;
        m.f1 /= n;
        return m;
    };
    rep.rouge1 = accumulate(&RougeTriple::rouge1);
    rep.rouge2 = accumulate(&RougeTriple::rouge2);
    rep.rougeL = accumulate(&RougeTriple::rougeL);
    return rep;
}

/// Count selections per relative-position bin: index i of an n-sentence
/// document lands in floor((i / n) * bins), clamped to the last bin.
inline PositionHistogram position_histogram(const std::vector<SelectionResult>& selections,
                                            const std::vector<std::size_t>& doc_lengths, std::size_t bin_count) {
    if (bin_count == 0) throw ConfigError("position_histogram: bin_count must be at least 1");
    if (selections.size() != doc_lengths.size()) throw ShapeError("position_histogram: one length per selection required");
    PositionHistogram h;
    h.bin_count = bin_count;
    h.bin_counts.assign(bin_count, 0);
    for (std::size_t s = 0; s < selections.size(); ++s) {
        const std::size_t n = doc_lengths[s];
        for (const auto i : selections[s].chosen_indices) {
            if (i >= n) {
                throw ValidationError("selection index " + std::to_string(i) + " outside document '" +
                                      selections[s].doc_id + "' of length " + std::to_string(n));
            }
            auto bin = static_cast<std::size_t>(std::floor(static_cast<double>(i) / static_cast<double>(n) *
                                                           static_cast<double>(bin_count)));
            bin = std::min(bin, bin_count - 1);
            ++h.bin_counts[bin];
            ++h.total_selections;
        }
    }
    return h;
}

// ---------------------------------------------------------------------------
// Serialization

inline double round6(double x) { return std::round(x * 1e6) / 1e6; }

inline nlohmann::ordered_json score_json(const RougeScore& s) {
    nlohmann::ordered_json j;
    j["precision"] = round6(s.precision);
    j["recall"] = round6(s.recall);
    j["f1"] = round6(s.f1);
    return j;
}

inline nlohmann::ordered_json triple_json(const RougeTriple& t) {
    nlohmann::ordered_json j;
    j["rouge1"] = score_json(t.rouge1);
    j["rouge2"] = score_json(t.rouge2);
    j["rougeL"] = score_json(t.rougeL);
    return j;
}

inline nlohmann::ordered_json report_json(const EvalReport& rep, const PositionHistogram& hist) {
    nlohmann::ordered_json j;
    j["rouge1"] = score_json(rep.rouge1);
    j["rouge2"] = score_json(rep.rouge2);
    j["rougeL"] = score_json(rep.rougeL);
    j["per_doc"] = nlohmann::ordered_json::array();
    for (const auto& d : rep.per_doc) {
        nlohmann::ordered_json e;
        e["doc_id"] = d.doc_id;
        e["n_sentences"] = d.n_sentences;
        e["chosen_indices"] = d.chosen_indices;
        e["rouge1"] = score_json(d.scores.rouge1);
        e["rouge2"] = score_json(d.scores.rouge2);
        e["rougeL"] = score_json(d.scores.rougeL);
        j["per_doc"].push_back(std::move(e));
    }
    j["histogram"] = hist.bin_counts;
    j["skipped_empty_abstract"] = rep.skipped_empty_abstract;
    return j;
}

inline std::string histogram_csv(const PositionHistogram& h) {
    std::ostringstream os;
    os << "bin_index,count\n";
    for (std::size_t i = 0; i < h.bin_counts.size(); ++i) os << i << ',' << h.bin_counts[i] << '\n';
    return os.str();
}

/// Selections from either an eval report ({"per_doc": [...]}) or a bare array
/// of {"doc_id", "chosen_indices", "n_sentences"} objects.
inline std::pair<std::vector<SelectionResult>, std::vector<std::size_t>> selections_from_json(
    const nlohmann::ordered_json& j) {
    const nlohmann::ordered_json* arr = &j;
    if (j.is_object()) {
        if (!j.contains("per_doc")) throw ValidationError("selections JSON object has no \"per_doc\" array");
        arr = &j.at("per_doc");
    }
    if (!arr->is_array()) throw ValidationError("selections JSON must be an array");
    std::vector<SelectionResult> sels;
    std::vector<std::size_t> lengths;
    for (const auto& e : *arr) {
        try {
            SelectionResult s;
            s.doc_id = e.value("doc_id", std::string());
            s.chosen_indices = e.at("chosen_indices").get<std::vector<std::size_t>>();
            s.n_sentences = e.at("n_sentences").get<std::size_t>();
            lengths.push_back(s.n_sentences);
            sels.push_back(std::move(s));
        } catch (const nlohmann::json::exception& ex) {
            throw ValidationError(std::string("malformed selection entry: ") + ex.what());
        }
    }
    return {std::move(sels), std::move(lengths)};
}

}  // namespace extsum
