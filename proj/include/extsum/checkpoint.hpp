#pragma once

// Checkpoint container (all integers little-endian):
//
//   magic        8 bytes  "EXTSUMCK"
//   version      u32
//   config_len   u64, followed by config_len bytes of UTF-8 JSON
//   tensor_count u32
//   manifest     tensor_count x { name_len u32, name bytes, dtype u8 (0 = f64),
//                                 ndim u32, dims u64[ndim] }
//   payloads     raw tensor data in manifest order
//
// The JSON block holds the model and training configuration, the optimizer
// step, the best validation loss and the vocabulary.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "extsum/error.hpp"
#include "extsum/model.hpp"
#include "extsum/train.hpp"

namespace extsum {

inline constexpr std::array<char, 8> kCheckpointMagic = {'E', 'X', 'T', 'S', 'U', 'M', 'C', 'K'};
inline constexpr std::uint8_t kDtypeF64 = 0;

inline nlohmann::ordered_json to_json(const ModelConfig& c) {
    nlohmann::ordered_json j;
    j["vocab_size"] = c.vocab_size;
    j["d_model"] = c.d_model;
    j["n_layers"] = c.n_layers;
    j["n_heads"] = c.n_heads;
    j["d_ff"] = c.d_ff;
    j["pretrain_context"] = c.pretrain_context;
    j["runtime_context"] = c.runtime_context;
    j["rope_scaling"] = c.rope_scaling();
    j["rope_base"] = c.rope_base;
    j["lora_rank"] = c.lora_rank;
    j["attention_mode"] = to_string(c.attention_mode);
    j["tiled_attention"] = c.tiled_attention;
    j["attention_block"] = c.attention_block;
    j["norm_eps"] = c.norm_eps;
    return j;
}

inline ModelConfig model_config_from_json(const nlohmann::ordered_json& j) {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.pretrain_context = j.at("pretrain_context").get<std::size_t>();
    c.runtime_context = j.at("runtime_context").get<std::size_t>();
    c.rope_base = j.at("rope_base").get<double>();
    c.lora_rank = j.at("lora_rank").get<std::size_t>();
    c.attention_mode = parse_attention_mode(j.at("attention_mode").get<std::string>());
    c.tiled_attention = j.at("tiled_attention").get<bool>();
    c.attention_block = j.at("attention_block").get<std::size_t>();
    c.norm_eps = j.at("norm_eps").get<double>();
    return c;
}

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
    nlohmann::ordered_json j;
    j["learning_rate"] = c.learning_rate;
    j["accumulation_steps"] = c.accumulation_steps;
    j["epochs"] = c.epochs;
    j["validation_interval"] = c.validation_interval;
    j["beta1"] = c.beta1;
    j["beta2"] = c.beta2;
    j["adam_eps"] = c.adam_eps;
    j["seed"] = c.seed;
    j["data_fraction"] = c.data_fraction;
    j["max_steps"] = c.max_steps;
    j["frozen"] = c.frozen;
    j["workers"] = c.workers;
    return j;
}

inline TrainConfig train_config_from_json(const nlohmann::ordered_json& j) {
    TrainConfig c;
    c.learning_rate = j.at("learning_rate").get<double>();
    c.accumulation_steps = j.at("accumulation_steps").get<std::size_t>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.validation_interval = j.at("validation_interval").get<double>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.adam_eps = j.at("adam_eps").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.data_fraction = j.at("data_fraction").get<double>();
    c.max_steps = j.at("max_steps").get<std::size_t>();
    c.frozen = j.at("frozen").get<bool>();
    c.workers = j.at("workers").get<std::size_t>();
    return c;
}

namespace detail {

class Writer {
public:
    void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }

    template <typename U>
    void uint(U v) {
        for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }

    void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }

    const std::string& str() const { return buf_; }

private:
    std::string buf_;
};

class Reader {
public:
    explicit Reader(std::string data) : data_(std::move(data)) {}

    const char* take(std::size_t n) {
        if (data_.size() - pos_ < n) throw TruncatedError("checkpoint truncated at byte " + std::to_string(pos_));
        const char* p = data_.data() + pos_;
        pos_ += n;
        return p;
    }

    template <typename U>
    U uint() {
        const auto* p = reinterpret_cast<const unsigned char*>(take(sizeof(U)));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
        return v;
    }

    double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }

    std::string string(std::size_t n) { return std::string(take(n), n); }

    std::size_t remaining() const { return data_.size() - pos_; }

private:
    std::string data_;
    std::size_t pos_ = 0;
};

struct ManifestEntry {
    std::string name;
    std::size_t rows;
    std::size_t cols;
};

inline std::vector<std::pair<std::string, const Mat*>> checkpoint_tensors(const Checkpoint& ck) {
    std::vector<std::pair<std::string, const Mat*>> out;
    for (const auto& t : ck.params.tensors()) out.emplace_back(t.name, t.tensor);
    const auto tr = ck.params.trainable();
    for (std::size_t i = 0; i < tr.size(); ++i) out.emplace_back("optimizer.m." + tr[i].name, &ck.optimizer.m.at(i));
    for (std::size_t i = 0; i < tr.size(); ++i) out.emplace_back("optimizer.v." + tr[i].name, &ck.optimizer.v.at(i));
    return out;
}

inline std::vector<ManifestEntry> expected_manifest(const ModelConfig& cfg) {
    // Names come from a zero-size skeleton; shapes from the config.
    ModelParams skeleton;
    skeleton.layers.resize(cfg.n_layers);
    const auto shapes = expected_shapes(cfg);
    const auto all = skeleton.tensors();
    std::vector<ManifestEntry> out;
    std::vector<ManifestEntry> trainable;
    for (std::size_t i = 0; i < all.size(); ++i) {
        out.push_back({all[i].name, shapes[i].first, shapes[i].second});
        if (all[i].trainable) trainable.push_back(out.back());
    }
    for (const auto& t : trainable) out.push_back({"optimizer.m." + t.name, t.rows, t.cols});
    for (const auto& t : trainable) out.push_back({"optimizer.v." + t.name, t.rows, t.cols});
    return out;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
    detail::Writer w;
    w.bytes(kCheckpointMagic.data(), kCheckpointMagic.size());
    w.uint<std::uint32_t>(ck.format_version);

    nlohmann::ordered_json cfg;
    cfg["model"] = to_json(ck.model_config);
    cfg["train"] = to_json(ck.train_config);
    cfg["optimizer_step"] = ck.optimizer.step;
    cfg["best_val_loss"] = std::isfinite(ck.best_val_loss) ? nlohmann::ordered_json(ck.best_val_loss) : nullptr;
    cfg["vocab"] = ck.vocab.tokens();
    const std::string cfg_text = cfg.dump();
    w.uint<std::uint64_t>(cfg_text.size());
    w.bytes(cfg_text.data(), cfg_text.size());

    const auto tensors = detail::checkpoint_tensors(ck);
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, m] : tensors) {
        w.uint<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
        w.bytes(name.data(), name.size());
        w.uint<std::uint8_t>(kDtypeF64);
        w.uint<std::uint32_t>(2);
        w.uint<std::uint64_t>(m->rows());
        w.uint<std::uint64_t>(m->cols());
    }
    for (const auto& [name, m] : tensors)
        for (const double v : m->data()) w.f64(v);
    return w.str();
}

/// Parse a checkpoint. If `expected` is given, the stored tensors must match
/// the shapes that configuration implies.
inline Checkpoint deserialize_checkpoint(std::string data, const std::optional<ModelConfig>& expected = std::nullopt) {
    detail::Reader r(std::move(data));
    if (r.remaining() < kCheckpointMagic.size() ||
        std::memcmp(r.take(kCheckpointMagic.size()), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0) {
        throw FormatError("not a checkpoint file (bad magic bytes)");
    }
    Checkpoint ck;
    ck.format_version = r.uint<std::uint32_t>();
    if (ck.format_version != kCheckpointVersion) {
        throw VersionError("unsupported checkpoint version " + std::to_string(ck.format_version) + " (expected " +
                           std::to_string(kCheckpointVersion) + ")");
    }
    const auto cfg_len = r.uint<std::uint64_t>();
    nlohmann::ordered_json cfg;
    try {
        cfg = nlohmann::ordered_json::parse(r.string(cfg_len));
        ck.model_config = model_config_from_json(cfg.at("model"));
        ck.train_config = train_config_from_json(cfg.at("train"));
        ck.optimizer.step = cfg.at("optimizer_step").get<std::uint64_t>();
        const auto& bvl = cfg.at("best_val_loss");
        ck.best_val_loss = bvl.is_null() ? std::numeric_limits<double>::infinity() : bvl.get<double>();
        ck.vocab = Vocab::from_tokens(cfg.at("vocab").get<std::vector<std::string>>());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed checkpoint config block: ") + e.what());
    }

    const auto want = detail::expected_manifest(ck.model_config);
    const auto count = r.uint<std::uint32_t>();
    std::vector<detail::ManifestEntry> manifest;
    for (std::uint32_t i = 0; i < count; ++i) {
        detail::ManifestEntry e;
        e.name = r.string(r.uint<std::uint32_t>());
        if (r.uint<std::uint8_t>() != kDtypeF64) throw FormatError("tensor '" + e.name + "' has unsupported dtype");
        if (r.uint<std::uint32_t>() != 2) throw FormatError("tensor '" + e.name + "' is not 2-dimensional");
        e.rows = r.uint<std::uint64_t>();
        e.cols = r.uint<std::uint64_t>();
        manifest.push_back(std::move(e));
    }
    if (manifest.size() != want.size()) {
        throw ShapeError("checkpoint holds " + std::to_string(manifest.size()) + " tensors, configuration implies " +
                         std::to_string(want.size()));
    }
    for (std::size_t i = 0; i < want.size(); ++i) {
        if (manifest[i].name != want[i].name || manifest[i].rows != want[i].rows || manifest[i].cols != want[i].cols) {
            throw ShapeError("checkpoint tensor '" + manifest[i].name + "' " +
                             Mat::shape_string(manifest[i].rows, manifest[i].cols) + " does not match expected '" +
                             want[i].name + "' " + Mat::shape_string(want[i].rows, want[i].cols));
        }
    }
    if (expected) {
        const auto exp = detail::expected_manifest(*expected);
        if (exp.size() != manifest.size()) throw ShapeError("checkpoint tensor count does not match the requested configuration");
        for (std::size_t i = 0; i < exp.size(); ++i) {
            if (exp[i].name != manifest[i].name || exp[i].rows != manifest[i].rows || exp[i].cols != manifest[i].cols) {
                throw ShapeError("checkpoint tensor '" + manifest[i].name + "' " +
                                 Mat::shape_string(manifest[i].rows, manifest[i].cols) +
                                 " does not fit the requested configuration " +
                                 Mat::shape_string(exp[i].rows, exp[i].cols));
            }
        }
    }

    std::vector<Mat> payloads;
    for (const auto& e : manifest) {
        Mat m(e.rows, e.cols);
        for (auto& v : m.data()) v = r.f64();
        payloads.push_back(std::move(m));
    }
    if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint payload");

    ck.params.layers.resize(ck.model_config.n_layers);
    auto tensors = ck.params.tensors();
    std::size_t k = 0;
    for (auto& t : tensors) *t.tensor = std::move(payloads[k++]);
    const std::size_t nt = ck.params.trainable().size();
    for (std::size_t i = 0; i < nt; ++i) ck.optimizer.m.push_back(std::move(payloads[k++]));
    for (std::size_t i = 0; i < nt; ++i) ck.optimizer.v.push_back(std::move(payloads[k++]));
    return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    const std::string bytes = serialize_checkpoint(ck);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint '" + path + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path, const std::optional<ModelConfig>& expected = std::nullopt) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize_checkpoint(ss.str(), expected);
}

}  // namespace extsum
