#pragma once

// Dataset ingestion: JSONL documents, sentence segmentation, a word-level
// vocabulary and token encoding with per-sentence spans.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

#include "extsum/error.hpp"

namespace extsum {

struct Document {
    std::string id;
    std::vector<std::string> sentences;
    std::vector<std::string> abstract;
    std::optional<std::vector<int>> labels;
    /// Fields not interpreted by the loader (e.g. "oracle_score"); kept for round-tripping.
    nlohmann::ordered_json extra = nlohmann::ordered_json::object();
};

/// Half-open token range [start, end) of one sentence.
struct Span {
    std::size_t start = 0;
    std::size_t end = 0;
    std::size_t size() const noexcept { return end - start; }
    friend bool operator==(const Span&, const Span&) = default;
};

struct TokenizedDocument {
    std::string doc_id;
    std::vector<std::int32_t> token_ids;
    std::vector<Span> spans;
    /// Source sentence index of each span.
    std::vector<std::size_t> sentence_index;
    /// Sentences dropped because they produced no tokens.
    std::vector<std::size_t> dropped_empty;
    /// Sentences dropped because they did not fit in max_len.
    std::vector<std::size_t> dropped_truncated;

    std::size_t size() const noexcept { return token_ids.size(); }
};

namespace text {

inline bool is_space(unsigned char c) { return std::isspace(c) != 0; }

inline std::string trim(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && is_space(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && is_space(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

inline bool is_terminator(char c) { return c == '.' || c == '!' || c == '?'; }

/// Bytes >= 0x80 belong to UTF-8 sequences and are treated as word characters.
inline bool is_word_byte(unsigned char c) { return std::isalnum(c) != 0 || c >= 0x80; }

inline bool is_ignorable(unsigned char c) { return c < 0x20 || c == 0x7f; }

}  // namespace text

/// Split raw text at a terminator (. ! ?) that is followed by whitespace and
/// then an uppercase letter. Pieces are trimmed; empty pieces are skipped.
inline std::vector<std::string> split_sentences(std::string_view input) {
    std::vector<std::string> out;
    std::size_t begin = 0;
    auto emit = [&](std::size_t end) {
        std::string s = text::trim(input.substr(begin, end - begin));
        if (!s.empty()) out.push_back(std::move(s));
        begin = end;
    };
    for (std::size_t i = 0; i < input.size(); ++i) {
        if (!text::is_terminator(input[i])) continue;
        std::size_t j = i + 1;
        while (j < input.size() && text::is_terminator(input[j])) ++j;  // "?!" and "..."
        std::size_t k = j;
        while (k < input.size() && text::is_space(static_cast<unsigned char>(input[k]))) ++k;
        if (k > j && k < input.size() && std::isupper(static_cast<unsigned char>(input[k]))) {
            emit(j);
        }
        i = j - 1;
    }
    emit(input.size());
    return out;
}

/// Lowercased word tokens; every punctuation character is its own token and
/// control characters are ignored.
inline std::vector<std::string> tokenize_words(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) out.push_back(std::move(cur));
        cur.clear();
    };
    for (const char ch : s) {
        const auto c = static_cast<unsigned char>(ch);
        if (text::is_space(c) || text::is_ignorable(c)) {
            flush();
        } else if (text::is_word_byte(c)) {
            cur.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
        } else {
            flush();
            out.emplace_back(1, ch);
        }
    }
    flush();
    return out;
}

class Vocab {
public:
    static constexpr std::int32_t kPad = 0;
    static constexpr std::int32_t kUnk = 1;
    static constexpr const char* kPadToken = "<pad>";
    static constexpr const char* kUnkToken = "<unk>";

    Vocab() : tokens_{kPadToken, kUnkToken} {
        index_.emplace(kPadToken, kPad);
        index_.emplace(kUnkToken, kUnk);
    }

    /// Build from an id-ordered token list whose first two entries are the reserved tokens.
    static Vocab from_tokens(const std::vector<std::string>& tokens) {
        if (tokens.size() < 2 || tokens[0] != kPadToken || tokens[1] != kUnkToken) {
            throw ValidationError("vocabulary must start with <pad> and <unk>");
        }
        Vocab v;
        for (std::size_t i = 2; i < tokens.size(); ++i) v.add(tokens[i]);
        return v;
    }

    std::int32_t id(const std::string& token) const {
        const auto it = index_.find(token);
        return it == index_.end() ? kUnk : it->second;
    }

    bool contains(const std::string& token) const { return index_.count(token) != 0; }

    const std::string& token(std::int32_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }

    std::size_t size() const noexcept { return tokens_.size(); }

    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

    void add(const std::string& token) {
        if (token.empty()) throw ValidationError("vocabulary token must be non-empty");
        if (token.find('\n') != std::string::npos) throw ValidationError("vocabulary token contains newline");
        if (!index_.emplace(token, static_cast<std::int32_t>(tokens_.size())).second) {
            throw ValidationError("duplicate vocabulary token '" + token + "'");
        }
        tokens_.push_back(token);
    }

    friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::int32_t> index_;
};

/// PAD, UNK, then the (max_size - 2) most frequent sentence tokens; ties go
/// to the lexicographically smaller token.
inline Vocab build_vocab(const std::vector<Document>& docs, std::size_t max_size) {
    if (max_size < 3) throw ConfigError("build_vocab: max_size must be at least 3");
    std::map<std::string, std::size_t> counts;
    for (const auto& d : docs)
        for (const auto& s : d.sentences)
            for (auto& t : tokenize_words(s)) ++counts[t];
    counts.erase(Vocab::kPadToken);
    counts.erase(Vocab::kUnkToken);

    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocab v;
    for (const auto& [tok, _] : ranked) {
        if (v.size() >= max_size) break;
        v.add(tok);
    }
    return v;
}

inline void save_vocab(const Vocab& vocab, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write vocabulary file '" + path + "'");
    for (const auto& t : vocab.tokens()) out << t << '\n';
    if (!out) throw IoError("failed writing vocabulary file '" + path + "'");
}

inline Vocab load_vocab(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open vocabulary file '" + path + "'");
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) tokens.push_back(line);
    return Vocab::from_tokens(tokens);
}

/// Concatenate sentence tokens, mapping out-of-vocabulary words to UNK.
/// Sentences without tokens are dropped; the sequence is cut at the last
/// sentence boundary that fits in max_len.
inline TokenizedDocument encode_document(const Document& doc, const Vocab& vocab, std::size_t max_len) {
    if (doc.sentences.empty()) throw ValidationError("document '" + doc.id + "' has no sentences");
    if (max_len == 0) throw ConfigError("encode_document: max_len must be positive");
    TokenizedDocument td;
    td.doc_id = doc.id;
    bool full = false;
    for (std::size_t i = 0; i < doc.sentences.size(); ++i) {
        const auto toks = tokenize_words(doc.sentences[i]);
        if (toks.empty()) {
            td.dropped_empty.push_back(i);
            continue;
        }
        if (full || td.token_ids.size() + toks.size() > max_len) {
            full = true;
            td.dropped_truncated.push_back(i);
            continue;
        }
        const std::size_t start = td.token_ids.size();
        for (const auto& t : toks) td.token_ids.push_back(vocab.id(t));
        td.spans.push_back({start, td.token_ids.size()});
        td.sentence_index.push_back(i);
    }
    if (td.spans.empty()) {
        throw DegenerateDocumentError("document '" + doc.id + "' has no sentence that fits after encoding");
    }
    return td;
}

/// Labels of the sentences that survived encoding, aligned with spans.
inline std::vector<int> aligned_labels(const Document& doc, const TokenizedDocument& td) {
    if (!doc.labels) throw ValidationError("document '" + doc.id + "' is unlabeled");
    std::vector<int> out;
    out.reserve(td.sentence_index.size());
    for (const auto i : td.sentence_index) out.push_back((*doc.labels)[i]);
    return out;
}

inline void validate_document(const Document& d) {
    if (d.labels) {
        if (d.sentences.empty()) throw ValidationError("labels present but no sentences");
        if (d.labels->size() != d.sentences.size()) {
            throw ValidationError("labels length " + std::to_string(d.labels->size()) +
                                  " does not match sentences length " + std::to_string(d.sentences.size()));
        }
        for (const int y : *d.labels)
            if (y != 0 && y != 1) throw ValidationError("labels must be 0 or 1");
    }
    for (const auto& s : d.sentences)
        if (text::trim(s).empty()) throw ValidationError("empty sentence");
}

inline Document document_from_json(const nlohmann::ordered_json& j, std::size_t line) {
    if (!j.is_object()) throw ParseError(line, "expected a JSON object");
    Document d;
    auto string_array = [&](const char* key) {
        const auto it = j.find(key);
        if (it == j.end()) throw ParseError(line, std::string("missing required field \"") + key + "\"");
        if (!it->is_array()) throw ParseError(line, std::string("field \"") + key + "\" must be an array");
        std::vector<std::string> v;
        for (const auto& e : *it) {
            if (!e.is_string()) throw ParseError(line, std::string("field \"") + key + "\" must hold strings");
            v.push_back(e.get<std::string>());
        }
        return v;
    };
    if (const auto it = j.find("id"); it != j.end()) {
        if (it->is_string()) {
            d.id = it->get<std::string>();
        } else if (it->is_number_integer()) {
            d.id = std::to_string(it->get<long long>());
        } else {
            throw ParseError(line, "field \"id\" must be a string");
        }
    } else {
        d.id = std::to_string(line);
    }
    d.sentences = string_array("sentences");
    d.abstract = string_array("abstract");
    if (const auto it = j.find("labels"); it != j.end() && !it->is_null()) {
        if (!it->is_array()) throw ParseError(line, "field \"labels\" must be an array");
        std::vector<int> labels;
        for (const auto& e : *it) {
            if (!e.is_number_integer()) throw ParseError(line, "labels must be integers 0 or 1");
            labels.push_back(e.get<int>());
        }
        d.labels = std::move(labels);
    }
    for (const auto& [k, v] : j.items()) {
        if (k != "id" && k != "sentences" && k != "abstract" && k != "labels") d.extra[k] = v;
    }
    try {
        validate_document(d);
    } catch (const ValidationError& e) {
        throw RecordValidationError(line, e.what());
    }
    return d;
}

inline nlohmann::ordered_json document_to_json(const Document& d) {
    nlohmann::ordered_json j;
    j["id"] = d.id;
    j["sentences"] = d.sentences;
    j["abstract"] = d.abstract;
    if (d.labels) j["labels"] = *d.labels;
    for (const auto& [k, v] : d.extra.items()) j[k] = v;
    return j;
}

inline std::vector<Document> parse_jsonl(std::istream& in) {
    std::vector<Document> docs;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        nlohmann::ordered_json j;
        try {
            j = nlohmann::ordered_json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(lineno, std::string("invalid JSON: ") + e.what());
        }
        docs.push_back(document_from_json(j, lineno));
    }
    return docs;
}

inline std::vector<Document> load_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open dataset '" + path + "'");
    return parse_jsonl(in);
}

inline void write_jsonl(std::ostream& out, const std::vector<Document>& docs) {
    for (const auto& d : docs) out << document_to_json(d).dump() << '\n';
}

inline void save_jsonl(const std::vector<Document>& docs, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write dataset '" + path + "'");
    write_jsonl(out, docs);
    if (!out) throw IoError("failed writing dataset '" + path + "'");
}

}  // namespace extsum
