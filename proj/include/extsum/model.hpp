#pragma once

// Decoder-style transformer sentence scorer: LoRA-adapted attention
// projections, rotary position embeddings with position interpolation,
// sentence mean pooling and a sigmoid head. Forward and reverse passes.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "extsum/attention.hpp"
#include "extsum/corpus.hpp"
#include "extsum/error.hpp"
#include "extsum/numerics.hpp"
#include "extsum/random.hpp"

namespace extsum {

struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t d_model = 64;
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    std::size_t d_ff = 128;
    /// Context length the base model was "pretrained" at (L).
    std::size_t pretrain_context = 512;
    /// Context length served at runtime (L'); positions are interpolated by L / L'.
    std::size_t runtime_context = 4096;
    double rope_base = 10000.0;
    std::size_t lora_rank = 8;
    AttentionMode attention_mode = AttentionMode::causal;
    bool tiled_attention = true;
    std::size_t attention_block = 64;
    double norm_eps = 1e-6;

    std::size_t head_dim() const { return d_model / n_heads; }

    /// Position scaling ratio alpha = L / L'. The common "scale factor 8"
    /// convention is the reciprocal L' / L.
    double rope_scaling() const {
        return static_cast<double>(pretrain_context) / static_cast<double>(runtime_context);
    }

    void validate() const {
        if (vocab_size < 2) throw ConfigError("vocab_size must be at least 2");
        if (d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0) {
            throw ConfigError("d_model, n_layers, n_heads and d_ff must be positive");
        }
        if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
        if (head_dim() % 2 != 0) throw ConfigError("head_dim must be even for rotary embeddings");
        if (pretrain_context == 0 || runtime_context == 0) throw ConfigError("context lengths must be positive");
        if (!(rope_base > 1.0)) throw ConfigError("rope_base must exceed 1");
        if (lora_rank == 0) throw ConfigError("lora_rank must be at least 1");
        // Every adapted matrix is d_model x d_model.
        if (lora_rank > d_model / 2) {
            throw ConfigError("lora_rank " + std::to_string(lora_rank) + " must not exceed d_model/2 = " +
                              std::to_string(d_model / 2));
        }
        if (attention_block == 0) throw ConfigError("attention_block must be positive");
        if (!(norm_eps > 0.0)) throw ConfigError("norm_eps must be positive");
    }
};

/// Low-rank update delta W = B A for a d x p base matrix: A is r x p, B is d x r.
struct LoraAdapter {
    Mat a;
    Mat b;
};

struct DecoderLayerParams {
    Mat w_q, w_k, w_v, w_o;
    LoraAdapter lora_q, lora_k, lora_v, lora_o;
    /// Gated feed-forward: rows [0, d_ff) are the value half, [d_ff, 2 d_ff) the SiLU gate.
    Mat mlp_up;
    Mat mlp_down;
    Mat norm_attn;  // 1 x d_model
    Mat norm_mlp;   // 1 x d_model
};

struct NamedTensor {
    std::string name;
    Mat* tensor;
    bool trainable;
};

struct ConstNamedTensor {
    std::string name;
    const Mat* tensor;
    bool trainable;
};

struct ModelParams {
    Mat embedding;
    std::vector<DecoderLayerParams> layers;
    Mat final_norm;    // 1 x d_model
    Mat classifier_w;  // 1 x d_model
    Mat classifier_b;  // 1 x 1

    /// Every tensor in a stable order. Trainable tensors appear in the
    /// same relative order as in trainable().
    std::vector<NamedTensor> tensors() {
        std::vector<NamedTensor> out;
        out.push_back({"embedding", &embedding, false});
        for (std::size_t l = 0; l < layers.size(); ++l) {
            auto& L = layers[l];
            const std::string p = "layers." + std::to_string(l) + ".";
            out.push_back({p + "w_q", &L.w_q, false});
            out.push_back({p + "w_k", &L.w_k, false});
            out.push_back({p + "w_v", &L.w_v, false});
            out.push_back({p + "w_o", &L.w_o, false});
            out.push_back({p + "lora_q.a", &L.lora_q.a, true});
            out.push_back({p + "lora_q.b", &L.lora_q.b, true});
            out.push_back({p + "lora_k.a", &L.lora_k.a, true});
            out.push_back({p + "lora_k.b", &L.lora_k.b, true});
            out.push_back({p + "lora_v.a", &L.lora_v.a, true});
            out.push_back({p + "lora_v.b", &L.lora_v.b, true});
            out.push_back({p + "lora_o.a", &L.lora_o.a, true});
            out.push_back({p + "lora_o.b", &L.lora_o.b, true});
            out.push_back({p + "mlp_up", &L.mlp_up, false});
            out.push_back({p + "mlp_down", &L.mlp_down, false});
            out.push_back({p + "norm_attn", &L.norm_attn, false});
            out.push_back({p + "norm_mlp", &L.norm_mlp, false});
        }
        out.push_back({"final_norm", &final_norm, false});
        out.push_back({"classifier.w", &classifier_w, true});
        out.push_back({"classifier.b", &classifier_b, true});
        return out;
    }

    std::vector<ConstNamedTensor> tensors() const {
        std::vector<ConstNamedTensor> out;
        for (const auto& t : const_cast<ModelParams*>(this)->tensors()) out.push_back({t.name, t.tensor, t.trainable});
        return out;
    }

    std::vector<NamedTensor> trainable() {
        std::vector<NamedTensor> out;
        for (auto& t : tensors())
            if (t.trainable) out.push_back(t);
        return out;
    }

    std::vector<ConstNamedTensor> trainable() const {
        std::vector<ConstNamedTensor> out;
        for (const auto& t : tensors())
            if (t.trainable) out.push_back(t);
        return out;
    }

    friend bool operator==(const ModelParams& a, const ModelParams& b) {
        const auto ta = a.tensors();
        const auto tb = b.tensors();
        if (ta.size() != tb.size()) return false;
        for (std::size_t i = 0; i < ta.size(); ++i)
            if (ta[i].name != tb[i].name || !(*ta[i].tensor == *tb[i].tensor)) return false;
        return true;
    }
};

/// Trainable-tensor index layout: per layer q.a, q.b, k.a, k.b, v.a, v.b,
/// o.a, o.b; then classifier.w and classifier.b.
namespace trainable_index {
inline constexpr std::size_t kPerLayer = 8;
inline std::size_t adapter(std::size_t layer, std::size_t proj, bool b) { return layer * kPerLayer + proj * 2 + (b ? 1 : 0); }
inline std::size_t classifier_w(std::size_t n_layers) { return n_layers * kPerLayer; }
inline std::size_t classifier_b(std::size_t n_layers) { return n_layers * kPerLayer + 1; }
}  // namespace trainable_index

/// Gradients aligned with ModelParams::trainable().
struct GradientSet {
    std::vector<Mat> tensors;

    static GradientSet zeros_like(const ModelParams& p) {
        GradientSet g;
        for (const auto& t : p.trainable()) g.tensors.emplace_back(t.tensor->rows(), t.tensor->cols());
        return g;
    }

    GradientSet& operator+=(const GradientSet& o) {
        if (o.tensors.size() != tensors.size()) throw ShapeError("gradient set size mismatch");
        for (std::size_t i = 0; i < tensors.size(); ++i) tensors[i] += o.tensors[i];
        return *this;
    }

    GradientSet& operator*=(double s) {
        for (auto& t : tensors) t *= s;
        return *this;
    }
};

namespace detail {

inline Mat uniform_matrix(Rng& rng, std::size_t rows, std::size_t cols, double bound) {
    Mat m(rows, cols);
    for (auto& v : m.data()) v = rng.uniform(-bound, bound);
    return m;
}

inline Mat linear_init(Rng& rng, std::size_t out, std::size_t in) {
    return uniform_matrix(rng, out, in, 1.0 / std::sqrt(static_cast<double>(in)));
}

inline LoraAdapter lora_init(Rng& rng, std::size_t out, std::size_t in, std::size_t rank) {
    return {uniform_matrix(rng, rank, in, 1.0 / std::sqrt(static_cast<double>(in))), Mat(out, rank)};
}

}  // namespace detail

/// Random frozen base model plus fresh adapters (B = 0) and head. Base
/// weights, adapters and head draw from separate streams, so base model and
/// head are the same for every lora_rank.
inline ModelParams init_model_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng base(seed);
    Rng adapters(seed ^ 0x9e3779b97f4a7c15ULL);
    Rng head(seed ^ 0xc2b2ae3d27d4eb4fULL);
    const std::size_t d = cfg.d_model;
    ModelParams p;
    p.embedding = detail::uniform_matrix(base, cfg.vocab_size, d, 1.0);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        DecoderLayerParams L;
        L.w_q = detail::linear_init(base, d, d);
        L.w_k = detail::linear_init(base, d, d);
        L.w_v = detail::linear_init(base, d, d);
        L.w_o = detail::linear_init(base, d, d);
        L.mlp_up = detail::linear_init(base, 2 * cfg.d_ff, d);
        L.mlp_down = detail::linear_init(base, d, cfg.d_ff);
        L.norm_attn = Mat(1, d, 1.0);
        L.norm_mlp = Mat(1, d, 1.0);
        L.lora_q = detail::lora_init(adapters, d, d, cfg.lora_rank);
        L.lora_k = detail::lora_init(adapters, d, d, cfg.lora_rank);
        L.lora_v = detail::lora_init(adapters, d, d, cfg.lora_rank);
        L.lora_o = detail::lora_init(adapters, d, d, cfg.lora_rank);
        p.layers.push_back(std::move(L));
    }
    p.final_norm = Mat(1, d, 1.0);
    p.classifier_w = detail::linear_init(head, 1, d);
    p.classifier_b = Mat(1, 1, 0.0);
    return p;
}

/// Expected shape of every tensor for a configuration, in tensors() order.
inline std::vector<std::pair<std::size_t, std::size_t>> expected_shapes(const ModelConfig& cfg) {
    cfg.validate();
    const std::size_t d = cfg.d_model, r = cfg.lora_rank;
    std::vector<std::pair<std::size_t, std::size_t>> out;
    out.emplace_back(cfg.vocab_size, d);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        for (int i = 0; i < 4; ++i) out.emplace_back(d, d);
        for (int i = 0; i < 4; ++i) {
            out.emplace_back(r, d);
            out.emplace_back(d, r);
        }
        out.emplace_back(2 * cfg.d_ff, d);
        out.emplace_back(d, cfg.d_ff);
        out.emplace_back(1, d);
        out.emplace_back(1, d);
    }
    out.emplace_back(1, d);
    out.emplace_back(1, d);
    out.emplace_back(1, 1);
    return out;
}

// ---------------------------------------------------------------------------
// Building blocks

/// (W + B A) x as two thin products; BA is never formed.
inline Vec lora_project(std::span<const double> x, const Mat& base, const LoraAdapter& adapter) {
    if (x.size() != base.cols() || adapter.a.cols() != base.cols() || adapter.b.rows() != base.rows() ||
        adapter.a.rows() != adapter.b.cols()) {
        throw ShapeError("lora_project: x(" + std::to_string(x.size()) + "), W " + base.shape() + ", A " +
                         adapter.a.shape() + ", B " + adapter.b.shape());
    }
    Vec y(base.rows(), 0.0);
    for (std::size_t i = 0; i < base.rows(); ++i) y[i] = detail::dot(base.row(i).data(), x.data(), x.size());
    Vec ax(adapter.a.rows(), 0.0);
    for (std::size_t i = 0; i < adapter.a.rows(); ++i) ax[i] = detail::dot(adapter.a.row(i).data(), x.data(), x.size());
    for (std::size_t i = 0; i < base.rows(); ++i) y[i] += detail::dot(adapter.b.row(i).data(), ax.data(), ax.size());
    return y;
}

/// Row-wise projection of a token matrix: X W^T + (X A^T) B^T.
inline Mat lora_project_rows(const Mat& x, const Mat& base, const LoraAdapter& adapter, bool use_adapter) {
    Mat y = matmul_nt(x, base);
    if (use_adapter) y += matmul_nt(matmul_nt(x, adapter.a), adapter.b);
    return y;
}

struct LoraGrads {
    Mat dx;
    Mat da;
    Mat db;
};

inline LoraGrads lora_project_rows_backward(const Mat& x, const Mat& dy, const Mat& base, const LoraAdapter& adapter,
                                            bool use_adapter) {
    LoraGrads g;
    g.dx = matmul(dy, base);
    if (use_adapter) {
        const Mat xa = matmul_nt(x, adapter.a);  // n x r
        const Mat dxa = matmul(dy, adapter.b);   // n x r
        g.db = matmul_tn(dy, xa);
        g.da = matmul_tn(dxa, x);
        g.dx += matmul(dxa, adapter.a);
    } else {
        g.da = Mat(adapter.a.rows(), adapter.a.cols());
        g.db = Mat(adapter.b.rows(), adapter.b.cols());
    }
    return g;
}

/// Frequency of rotary pair i (0-based): base^(-2i / head_dim).
inline double rope_frequency(std::size_t pair, std::size_t head_dim, double base) {
    return std::pow(base, -2.0 * static_cast<double>(pair) / static_cast<double>(head_dim));
}

/// Rotate adjacent pairs (x_{2i}, x_{2i+1}) by angle position * theta_i.
/// `position` is the effective (already interpolated) position and may be
/// fractional or negative.
inline Vec rope_rotate_at(std::span<const double> x, double position, double base = 10000.0) {
    if (x.size() % 2 != 0) throw ShapeError("rope: odd dimension " + std::to_string(x.size()));
    Vec y(x.size());
    for (std::size_t i = 0; i < x.size() / 2; ++i) {
        const double angle = position * rope_frequency(i, x.size(), base);
        const double c = std::cos(angle), s = std::sin(angle);
        const double x0 = x[2 * i], x1 = x[2 * i + 1];
        y[2 * i] = x0 * c - x1 * s;
        y[2 * i + 1] = x0 * s + x1 * c;
    }
    return y;
}

/// Rotary embedding at token position m with position interpolation m * alpha.
inline Vec rope_rotate(std::span<const double> x, std::size_t m, const ModelConfig& cfg) {
    if (x.size() != cfg.head_dim()) {
        throw ShapeError("rope: vector length " + std::to_string(x.size()) + " != head_dim " +
                         std::to_string(cfg.head_dim()));
    }
    return rope_rotate_at(x, static_cast<double>(m) * cfg.rope_scaling(), cfg.rope_base);
}

/// cos/sin of every (position, pair) angle for a sequence.
class RopeTable {
public:
    RopeTable(std::size_t n, const ModelConfig& cfg) : half_(cfg.head_dim() / 2), cos_(n * half_), sin_(n * half_) {
        const double alpha = cfg.rope_scaling();
        for (std::size_t m = 0; m < n; ++m) {
            const double pos = static_cast<double>(m) * alpha;
            for (std::size_t i = 0; i < half_; ++i) {
                const double angle = pos * rope_frequency(i, cfg.head_dim(), cfg.rope_base);
                cos_[m * half_ + i] = std::cos(angle);
                sin_[m * half_ + i] = std::sin(angle);
            }
        }
    }

    /// In-place rotation of x (length head_dim) at position m; inverse rotates by -angle.
    void apply(std::span<double> x, std::size_t m, bool inverse = false) const {
        for (std::size_t i = 0; i < half_; ++i) {
            const double c = cos_[m * half_ + i];
            const double s = inverse ? -sin_[m * half_ + i] : sin_[m * half_ + i];
            const double x0 = x[2 * i], x1 = x[2 * i + 1];
            x[2 * i] = x0 * c - x1 * s;
            x[2 * i + 1] = x0 * s + x1 * c;
        }
    }

private:
    std::size_t half_;
    std::vector<double> cos_, sin_;
};

/// s_i = mean of the hidden rows in span i.
inline Mat mean_pool(const Mat& hidden, const std::vector<Span>& spans) {
    if (spans.empty()) throw ValidationError("mean_pool: no spans");
    Mat out(spans.size(), hidden.cols());
    for (std::size_t s = 0; s < spans.size(); ++s) {
        const auto& sp = spans[s];
        if (sp.end <= sp.start) throw DegenerateDocumentError("mean_pool: empty span " + std::to_string(s));
        if (sp.end > hidden.rows()) throw ShapeError("mean_pool: span exceeds sequence length");
        auto o = out.row(s);
        for (std::size_t r = sp.start; r < sp.end; ++r) {
            const auto h = hidden.row(r);
            for (std::size_t c = 0; c < o.size(); ++c) o[c] += h[c];
        }
        const double inv = 1.0 / static_cast<double>(sp.size());
        for (auto& v : o) v *= inv;
    }
    return out;
}

inline double classify_logit(std::span<const double> sentence_vec, const ModelParams& params) {
    if (sentence_vec.size() != params.classifier_w.cols()) throw ShapeError("classify_head: dimension mismatch");
    return detail::dot(params.classifier_w.row(0).data(), sentence_vec.data(), sentence_vec.size()) +
           params.classifier_b(0, 0);
}

/// sigmoid(W_c s + b).
inline double classify_head(std::span<const double> sentence_vec, const ModelParams& params) {
    return sigmoid(classify_logit(sentence_vec, params));
}

namespace detail {

/// Row-wise RMS norm; also returns each row's inverse RMS for the reverse pass.
inline Mat rms_norm_rows(const Mat& x, const Mat& gain, double eps, std::vector<double>& inv) {
    Mat y(x.rows(), x.cols());
    inv.resize(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        inv[r] = inv_rms(x.row(r), eps);
        for (std::size_t c = 0; c < x.cols(); ++c) y(r, c) = gain(0, c) * x(r, c) * inv[r];
    }
    return y;
}

/// dx for y = g * x * s with s = (mean(x^2) + eps)^(-1/2).
inline Mat rms_norm_rows_backward(const Mat& x, const Mat& gain, const std::vector<double>& inv, const Mat& dy) {
    Mat dx(x.rows(), x.cols());
    const double n = static_cast<double>(x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const double s = inv[r];
        double dot_gx = 0.0;
        for (std::size_t c = 0; c < x.cols(); ++c) dot_gx += gain(0, c) * dy(r, c) * x(r, c);
        const double k = s * s * s * dot_gx / n;
        for (std::size_t c = 0; c < x.cols(); ++c) dx(r, c) = s * gain(0, c) * dy(r, c) - x(r, c) * k;
    }
    return dx;
}

inline Mat head_slice(const Mat& m, std::size_t head, std::size_t hd) {
    Mat out(m.rows(), hd);
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < hd; ++c) out(r, c) = m(r, head * hd + c);
    return out;
}

inline void head_store(Mat& m, const Mat& part, std::size_t head, std::size_t hd) {
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < hd; ++c) m(r, head * hd + c) = part(r, c);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Full document pass

struct ForwardOptions {
    /// When false the adapters are bypassed entirely (the frozen base model).
    bool use_adapters = true;
    AttentionStats* attention_stats = nullptr;
};

struct LayerCache {
    Mat x;                      // layer input
    std::vector<double> inv1;   // inverse RMS of x rows
    Mat h1;                     // normalized input
    Mat q, k, v;                // post-rope q, k; v
    Mat attn;                   // concatenated head outputs
    Mat x1;                     // after attention residual
    std::vector<double> inv2;
    Mat h2;
    Mat up;                     // n x 2 d_ff pre-activation
    Mat act;                    // n x d_ff gated activation
};

struct ForwardCache {
    std::vector<LayerCache> layers;
    Mat x_final;
    std::vector<double> inv_final;
    Mat h_final;
    Mat pooled;
    std::vector<Span> spans;
    std::size_t seq_len = 0;
    bool use_adapters = true;
};

struct ForwardResult {
    std::vector<double> probs;
    std::vector<double> logits;
    ForwardCache cache;
};

inline ForwardResult forward_document(const TokenizedDocument& tdoc, const ModelParams& params, const ModelConfig& cfg,
                                      const ForwardOptions& opts = {}) {
    const std::size_t n = tdoc.token_ids.size();
    if (n == 0) throw DegenerateDocumentError("document '" + tdoc.doc_id + "' has no tokens");
    if (n > cfg.runtime_context) {
        throw ContextLengthError("document '" + tdoc.doc_id + "' has " + std::to_string(n) +
                                 " tokens, exceeding the runtime context of " + std::to_string(cfg.runtime_context));
    }
    if (params.layers.size() != cfg.n_layers) throw ShapeError("parameter layer count does not match config");
    const std::size_t d = cfg.d_model, hd = cfg.head_dim(), f = cfg.d_ff;

    ForwardResult res;
    ForwardCache& cache = res.cache;
    cache.spans = tdoc.spans;
    cache.seq_len = n;
    cache.use_adapters = opts.use_adapters;

    Mat x(n, d);
    for (std::size_t t = 0; t < n; ++t) {
        const auto id = tdoc.token_ids[t];
        if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) {
            throw ValidationError("token id " + std::to_string(id) + " outside vocabulary in document '" +
                                  tdoc.doc_id + "'");
        }
        const auto e = params.embedding.row(static_cast<std::size_t>(id));
        std::copy(e.begin(), e.end(), x.row(t).begin());
    }

    const RopeTable rope(n, cfg);
    for (const auto& P : params.layers) {
        LayerCache c;
        c.x = x;
        c.h1 = detail::rms_norm_rows(x, P.norm_attn, cfg.norm_eps, c.inv1);
        c.q = lora_project_rows(c.h1, P.w_q, P.lora_q, opts.use_adapters);
        c.k = lora_project_rows(c.h1, P.w_k, P.lora_k, opts.use_adapters);
        c.v = lora_project_rows(c.h1, P.w_v, P.lora_v, opts.use_adapters);
        for (std::size_t t = 0; t < n; ++t) {
            for (std::size_t h = 0; h < cfg.n_heads; ++h) {
                rope.apply(c.q.row(t).subspan(h * hd, hd), t);
                rope.apply(c.k.row(t).subspan(h * hd, hd), t);
            }
        }
        c.attn = Mat(n, d);
        for (std::size_t h = 0; h < cfg.n_heads; ++h) {
            const Mat qh = detail::head_slice(c.q, h, hd);
            const Mat kh = detail::head_slice(c.k, h, hd);
            const Mat vh = detail::head_slice(c.v, h, hd);
            const Mat oh = cfg.tiled_attention
                               ? attention_tiled(qh, kh, vh, cfg.attention_mode, cfg.attention_block, opts.attention_stats)
                               : attention_naive(qh, kh, vh, cfg.attention_mode);
            detail::head_store(c.attn, oh, h, hd);
        }
        c.x1 = x + lora_project_rows(c.attn, P.w_o, P.lora_o, opts.use_adapters);
        c.h2 = detail::rms_norm_rows(c.x1, P.norm_mlp, cfg.norm_eps, c.inv2);
        c.up = matmul_nt(c.h2, P.mlp_up);
        c.act = Mat(n, f);
        for (std::size_t t = 0; t < n; ++t)
            for (std::size_t j = 0; j < f; ++j) c.act(t, j) = c.up(t, j) * silu(c.up(t, f + j));
        x = c.x1 + matmul_nt(c.act, P.mlp_down);
        cache.layers.push_back(std::move(c));
    }

    cache.x_final = x;
    cache.h_final = detail::rms_norm_rows(x, params.final_norm, cfg.norm_eps, cache.inv_final);
    cache.pooled = mean_pool(cache.h_final, tdoc.spans);
    for (std::size_t s = 0; s < tdoc.spans.size(); ++s) {
        const double z = classify_logit(cache.pooled.row(s), params);
        res.logits.push_back(z);
        res.probs.push_back(sigmoid(z));
    }
    return res;
}

/// Exact gradients of the mean per-sentence BCE with respect to every
/// trainable tensor. Frozen tensors receive none.
inline GradientSet backward_document(const ForwardResult& fwd, const std::vector<int>& labels,
                                     const ModelParams& params, const ModelConfig& cfg) {
    const ForwardCache& cache = fwd.cache;
    const std::size_t ns = cache.spans.size();
    if (labels.size() != ns) {
        throw ValidationError("backward_document: " + std::to_string(labels.size()) + " labels for " +
                              std::to_string(ns) + " sentences");
    }
    const std::size_t n = cache.seq_len, d = cfg.d_model, hd = cfg.head_dim(), f = cfg.d_ff, L = cfg.n_layers;
    GradientSet grads = GradientSet::zeros_like(params);

    // Head: dloss/dz_i = (p_i - y_i) / N.
    Mat dh(n, d);
    Mat& gw = grads.tensors[trainable_index::classifier_w(L)];
    Mat& gb = grads.tensors[trainable_index::classifier_b(L)];
    for (std::size_t s = 0; s < ns; ++s) {
        const double dz = (fwd.probs[s] - static_cast<double>(labels[s])) / static_cast<double>(ns);
        gb(0, 0) += dz;
        const auto pooled = cache.pooled.row(s);
        for (std::size_t c = 0; c < d; ++c) gw(0, c) += dz * pooled[c];
        const auto& sp = cache.spans[s];
        const double scale = dz / static_cast<double>(sp.size());
        for (std::size_t t = sp.start; t < sp.end; ++t)
            for (std::size_t c = 0; c < d; ++c) dh(t, c) += scale * params.classifier_w(0, c);
    }
    // With adapters bypassed nothing below the head is trainable.
    if (!cache.use_adapters) return grads;

    Mat dx = detail::rms_norm_rows_backward(cache.x_final, params.final_norm, cache.inv_final, dh);

    const RopeTable rope(n, cfg);
    for (std::size_t li = L; li-- > 0;) {
        const LayerCache& c = cache.layers[li];
        const DecoderLayerParams& P = params.layers[li];

        // Feed-forward block.
        const Mat dact = matmul(dx, P.mlp_down);
        Mat dup(n, 2 * f);
        for (std::size_t t = 0; t < n; ++t) {
            for (std::size_t j = 0; j < f; ++j) {
                const double a = c.up(t, j), g = c.up(t, f + j);
                dup(t, j) = dact(t, j) * silu(g);
                dup(t, f + j) = dact(t, j) * a * silu_grad(g);
            }
        }
        const Mat dh2 = matmul(dup, P.mlp_up);
        Mat dx1 = dx;
        dx1 += detail::rms_norm_rows_backward(c.x1, P.norm_mlp, c.inv2, dh2);

        // Attention block.
        auto grad_of = [&](std::size_t proj, bool b) -> Mat& {
            return grads.tensors[trainable_index::adapter(li, proj, b)];
        };
        const LoraGrads go = lora_project_rows_backward(c.attn, dx1, P.w_o, P.lora_o, cache.use_adapters);
        grad_of(3, false) += go.da;
        grad_of(3, true) += go.db;

        Mat dq(n, d), dk(n, d), dv(n, d);
        for (std::size_t h = 0; h < cfg.n_heads; ++h) {
            const auto g = attention_backward(detail::head_slice(c.q, h, hd), detail::head_slice(c.k, h, hd),
                                              detail::head_slice(c.v, h, hd), detail::head_slice(go.dx, h, hd),
                                              cfg.attention_mode);
            detail::head_store(dq, g.dq, h, hd);
            detail::head_store(dk, g.dk, h, hd);
            detail::head_store(dv, g.dv, h, hd);
        }
        // The rotation is orthogonal: its transpose is the inverse rotation.
        for (std::size_t t = 0; t < n; ++t) {
            for (std::size_t h = 0; h < cfg.n_heads; ++h) {
                rope.apply(dq.row(t).subspan(h * hd, hd), t, true);
                rope.apply(dk.row(t).subspan(h * hd, hd), t, true);
            }
        }
        const LoraGrads gq = lora_project_rows_backward(c.h1, dq, P.w_q, P.lora_q, cache.use_adapters);
        const LoraGrads gk = lora_project_rows_backward(c.h1, dk, P.w_k, P.lora_k, cache.use_adapters);
        const LoraGrads gv = lora_project_rows_backward(c.h1, dv, P.w_v, P.lora_v, cache.use_adapters);
        grad_of(0, false) += gq.da;
        grad_of(0, true) += gq.db;
        grad_of(1, false) += gk.da;
        grad_of(1, true) += gk.db;
        grad_of(2, false) += gv.da;
        grad_of(2, true) += gv.db;

        Mat dh1 = gq.dx;
        dh1 += gk.dx;
        dh1 += gv.dx;
        dx = std::move(dx1);
        dx += detail::rms_norm_rows_backward(c.x, P.norm_attn, c.inv1, dh1);
    }
    return grads;
}

}  // namespace extsum
