#pragma once

// Small synthetic documents and toy models for tests and the gradcheck command.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "extsum/corpus.hpp"
#include "extsum/model.hpp"
#include "extsum/random.hpp"
#include "extsum/train.hpp"

namespace extsum::synthetic {

inline const std::vector<std::string>& word_bank() {
    static const std::vector<std::string> words = {
        "alpha", "beta",  "gamma", "delta", "omega", "sigma", "kappa", "theta", "lambda", "zeta",
        "cell",  "gene",  "blood", "heart", "lung",  "risk",  "dose",  "trial", "model",  "data"};
    return words;
}

/// Random sentence of `len` words drawn from the first `vocab` bank words.
inline std::string random_sentence(Rng& rng, std::size_t len, std::size_t vocab) {
    const auto& bank = word_bank();
    vocab = std::min(vocab, bank.size());
    std::string s;
    for (std::size_t i = 0; i < len; ++i) {
        std::string w = bank[rng.below(vocab)];
        if (i == 0) w[0] = static_cast<char>(w[0] - 'a' + 'A');
        if (i) s += ' ';
        s += w;
    }
    return s + ".";
}

/// Document whose abstract is stitched from fragments of some sentences plus
/// noise, giving non-trivial oracle problems.
inline Document random_document(Rng& rng, std::size_t n_sentences, const std::string& id = "synthetic") {
    Document d;
    d.id = id;
    for (std::size_t i = 0; i < n_sentences; ++i) d.sentences.push_back(random_sentence(rng, 3 + rng.below(6), 12));
    const std::size_t parts = 1 + rng.below(3);
    for (std::size_t p = 0; p < parts; ++p) {
        const auto toks = tokenize_words(d.sentences[rng.below(n_sentences)]);
        std::string a;
        for (const auto& t : toks) {
            if (t == "." || rng.uniform() < 0.25) continue;
            a += (a.empty() ? "" : " ") + t;
        }
        a += " " + random_sentence(rng, 1 + rng.below(3), 20);
        d.abstract.push_back(a);
    }
    return d;
}

/// A toy model plus one labeled document: non-zero adapters so that every
/// adapter gradient is exercised.
struct ToySetup {
    ModelConfig config;
    ModelParams params;
    LabeledExample example;
};

inline ToySetup gradcheck_setup(std::uint64_t seed, AttentionMode mode = AttentionMode::causal) {
    ToySetup s;
    s.config.vocab_size = 24;
    s.config.d_model = 16;
    s.config.n_layers = 2;
    s.config.n_heads = 2;
    s.config.d_ff = 32;
    s.config.lora_rank = 2;
    s.config.pretrain_context = 64;
    s.config.runtime_context = 512;
    s.config.attention_mode = mode;
    s.config.attention_block = 4;
    s.params = init_model_params(s.config, seed);
    Rng rng(seed + 1);
    for (auto& t : s.params.trainable())
        for (auto& v : t.tensor->data()) v = rng.uniform(-0.5, 0.5);

    TokenizedDocument& td = s.example.doc;
    td.doc_id = "gradcheck";
    const std::size_t lengths[] = {4, 3, 5};
    for (std::size_t i = 0; i < 3; ++i) {
        const std::size_t start = td.token_ids.size();
        for (std::size_t j = 0; j < lengths[i]; ++j)
            td.token_ids.push_back(static_cast<std::int32_t>(2 + rng.below(s.config.vocab_size - 2)));
        td.spans.push_back({start, td.token_ids.size()});
        td.sentence_index.push_back(i);
    }
    s.example.labels = {1, 0, 1};
    return s;
}

}  // namespace extsum::synthetic
