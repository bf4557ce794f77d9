#pragma once

// BCE loss, Adam over the trainable tensors, the accumulation training loop
// and a central-difference gradient check.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "extsum/corpus.hpp"
#include "extsum/error.hpp"
#include "extsum/model.hpp"
#include "extsum/random.hpp"

namespace extsum {

struct TrainConfig {
    double learning_rate = 3e-5;
    std::size_t accumulation_steps = 32;
    std::size_t epochs = 5;
    /// Validate every this fraction of an epoch.
    double validation_interval = 0.2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    double data_fraction = 1.0;
    /// Stop after this many optimizer steps; 0 means no limit.
    std::size_t max_steps = 0;
    /// Classifier-only training with adapters bypassed.
    bool frozen = false;
    std::size_t workers = 1;

    void validate() const {
        if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
        if (accumulation_steps == 0) throw ConfigError("accumulation_steps must be positive");
        if (epochs == 0) throw ConfigError("epochs must be positive");
        if (!(validation_interval > 0.0 && validation_interval <= 1.0)) {
            throw ConfigError("validation_interval must lie in (0, 1]");
        }
        if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in (0, 1)");
        if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
        if (!(data_fraction > 0.0 && data_fraction <= 1.0)) throw ConfigError("data_fraction must lie in (0, 1]");
        if (workers == 0) throw ConfigError("workers must be positive");
    }
};

struct OptimizerState {
    std::vector<Mat> m;
    std::vector<Mat> v;
    std::uint64_t step = 0;

    static OptimizerState zeros_like(const ModelParams& p) {
        OptimizerState s;
        for (const auto& t : p.trainable()) {
            s.m.emplace_back(t.tensor->rows(), t.tensor->cols());
            s.v.emplace_back(t.tensor->rows(), t.tensor->cols());
        }
        return s;
    }

    friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    std::uint32_t format_version = kCheckpointVersion;
    ModelConfig model_config;
    ModelParams params;
    OptimizerState optimizer;
    TrainConfig train_config;
    double best_val_loss = std::numeric_limits<double>::infinity();
    Vocab vocab;
};

inline constexpr double kProbClamp = 1e-12;

/// Mean over sentences of -[y ln p + (1-y) ln(1-p)], p clamped to [1e-12, 1-1e-12].
inline double bce_loss(const std::vector<double>& probs, const std::vector<int>& labels) {
    if (probs.size() != labels.size()) {
        throw ValidationError("bce_loss: " + std::to_string(probs.size()) + " probabilities vs " +
                              std::to_string(labels.size()) + " labels");
    }
    if (probs.empty()) throw ValidationError("bce_loss: empty input");
    double total = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double p = std::clamp(probs[i], kProbClamp, 1.0 - kProbClamp);
        total -= labels[i] ? std::log(p) : std::log1p(-p);
    }
    return total / static_cast<double>(probs.size());
}

inline bool is_adapter_tensor(std::size_t trainable_idx, std::size_t n_layers) {
    return trainable_idx < trainable_index::classifier_w(n_layers);
}

/// One bias-corrected Adam update. In frozen mode adapter tensors are left alone.
inline void adam_step(ModelParams& params, const GradientSet& grads, OptimizerState& state, const TrainConfig& cfg) {
    auto tensors = params.trainable();
    if (grads.tensors.size() != tensors.size() || state.m.size() != tensors.size() || state.v.size() != tensors.size()) {
        throw ShapeError("adam_step: gradient/state count does not match trainable tensors");
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        Mat& p = *tensors[i].tensor;
        const Mat& g = grads.tensors[i];
        if (!p.same_shape(g) || !p.same_shape(state.m[i]) || !p.same_shape(state.v[i])) {
            throw ShapeError("adam_step: shape mismatch for " + tensors[i].name + ": param " + p.shape() + ", grad " +
                             g.shape());
        }
        if (cfg.frozen && is_adapter_tensor(i, params.layers.size())) continue;
        auto& m = state.m[i].data();
        auto& v = state.v[i].data();
        auto& w = p.data();
        const auto& gd = g.data();
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gd[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gd[j] * gd[j];
            const double mhat = m[j] / c1;
            const double vhat = v[j] / c2;
            w[j] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
    }
}

/// An encoded document with labels aligned to its spans.
struct LabeledExample {
    TokenizedDocument doc;
    std::vector<int> labels;
};

inline std::vector<LabeledExample> prepare_examples(const std::vector<Document>& docs, const Vocab& vocab,
                                                    std::size_t max_len) {
    std::vector<LabeledExample> out;
    out.reserve(docs.size());
    for (const auto& d : docs) {
        if (!d.labels) throw ValidationError("document '" + d.id + "' has no labels; run the oracle labeler first");
        validate_document(d);
        LabeledExample ex{encode_document(d, vocab, max_len), {}};
        ex.labels = aligned_labels(d, ex.doc);
        out.push_back(std::move(ex));
    }
    return out;
}

/// Run fn(i) for i in [0, count) on up to `workers` threads. Each index is
/// handled by exactly one thread; callers write to per-index slots.
inline void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& fn) {
    workers = std::max<std::size_t>(1, std::min(workers, count));
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < count; i += workers) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

inline double document_loss(const LabeledExample& ex, const ModelParams& params, const ModelConfig& cfg,
                            bool use_adapters = true) {
    ForwardOptions opts;
    opts.use_adapters = use_adapters;
    return bce_loss(forward_document(ex.doc, params, cfg, opts).probs, ex.labels);
}

/// Mean over documents of the per-document mean sentence BCE.
inline double mean_loss(const std::vector<LabeledExample>& data, const ModelParams& params, const ModelConfig& cfg,
                        bool use_adapters = true, std::size_t workers = 1) {
    if (data.empty()) throw ValidationError("mean_loss: empty dataset");
    std::vector<double> losses(data.size());
    parallel_for(data.size(), workers, [&](std::size_t i) { losses[i] = document_loss(data[i], params, cfg, use_adapters); });
    double total = 0.0;
    for (const double l : losses) total += l;
    return total / static_cast<double>(data.size());
}

/// Indices of the training subset for a data fraction: round(fraction * n),
/// at least one, drawn by a seeded shuffle and returned ascending.
inline std::vector<std::size_t> select_fraction(std::size_t n, double fraction, std::uint64_t seed) {
    if (n == 0) return {};
    const auto count = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))), 1, n);
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(seed ^ 0x5bd1e995ULL);
    rng.shuffle(idx);
    idx.resize(count);
    std::sort(idx.begin(), idx.end());
    return idx;
}

struct TrainLogEntry {
    std::uint64_t step = 0;
    double train_loss = 0.0;
    std::optional<double> val_loss;
    double timestamp = 0.0;
};

struct TrainResult {
    Checkpoint best;
    ModelParams final_params;
    std::vector<TrainLogEntry> log;
    std::size_t train_documents = 0;
    std::uint64_t steps = 0;
};

struct GradientResult {
    GradientSet grads;
    double loss = 0.0;
};

inline GradientResult document_gradients(const LabeledExample& ex, const ModelParams& params, const ModelConfig& cfg,
                                         bool use_adapters) {
    ForwardOptions opts;
    opts.use_adapters = use_adapters;
    const auto fwd = forward_document(ex.doc, params, cfg, opts);
    return {backward_document(fwd, ex.labels, params, cfg), bce_loss(fwd.probs, ex.labels)};
}

/// Seeded-shuffle training with gradient accumulation (mean over the window),
/// periodic validation and best-validation-loss retention. A window cut short
/// by the end of an epoch is applied with the mean over the documents it has.
inline TrainResult train_loop(const std::vector<LabeledExample>& dataset, const std::vector<LabeledExample>& validation,
                              ModelParams params, const TrainConfig& cfg, const ModelConfig& model_cfg,
                              const Vocab& vocab = {}) {
    cfg.validate();
    model_cfg.validate();
    if (dataset.empty()) throw ValidationError("train_loop: empty training set");
    for (const auto& ex : dataset) {
        if (ex.labels.size() != ex.doc.spans.size()) {
            throw ValidationError("document '" + ex.doc.doc_id + "' is unlabeled or misaligned");
        }
    }

    const auto subset = select_fraction(dataset.size(), cfg.data_fraction, cfg.seed);
    std::vector<LabeledExample> train_set;
    for (const auto i : subset) train_set.push_back(dataset[i]);
    const auto& val_set = validation.empty() ? train_set : validation;
    const bool use_adapters = !cfg.frozen;

    TrainResult result;
    result.train_documents = train_set.size();
    OptimizerState opt = OptimizerState::zeros_like(params);
    Rng rng(cfg.seed);

    const std::size_t val_every = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(cfg.validation_interval * static_cast<double>(train_set.size()))));
    std::size_t docs_seen = 0;
    std::size_t next_validation = val_every;
    bool have_best = false;

    auto now = [] {
        return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
    };
    auto validate_and_keep = [&](TrainLogEntry& entry) {
        const double vl = mean_loss(val_set, params, model_cfg, use_adapters, cfg.workers);
        entry.val_loss = vl;
        if (!have_best || vl < result.best.best_val_loss) {
            have_best = true;
            result.best.best_val_loss = vl;
            result.best.params = params;
            result.best.optimizer = opt;
        }
    };

    bool stop = false;
    bool validated_last = false;
    for (std::size_t epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
        std::vector<std::size_t> order(train_set.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);

        for (std::size_t w0 = 0; w0 < order.size() && !stop; w0 += cfg.accumulation_steps) {
            const std::size_t wn = std::min(cfg.accumulation_steps, order.size() - w0);
            std::vector<GradientResult> parts(wn);
            parallel_for(wn, cfg.workers, [&](std::size_t j) {
                parts[j] = document_gradients(train_set[order[w0 + j]], params, model_cfg, use_adapters);
            });
            GradientSet total = GradientSet::zeros_like(params);
            double loss = 0.0;
            for (std::size_t j = 0; j < wn; ++j) {
                if (!std::isfinite(parts[j].loss)) {
                    throw NumericError("non-finite loss on document '" + train_set[order[w0 + j]].doc.doc_id + "'");
                }
                total += parts[j].grads;
                loss += parts[j].loss;
            }
            total *= 1.0 / static_cast<double>(wn);
            adam_step(params, total, opt, cfg);

            TrainLogEntry entry;
            entry.step = opt.step;
            entry.train_loss = loss / static_cast<double>(wn);
            docs_seen += wn;
            validated_last = false;
            if (docs_seen >= next_validation) {
                while (next_validation <= docs_seen) next_validation += val_every;
                validate_and_keep(entry);
                validated_last = true;
            }
            if (cfg.max_steps != 0 && opt.step >= cfg.max_steps) stop = true;
            entry.timestamp = now();
            result.log.push_back(entry);
        }
    }
    if (!validated_last) validate_and_keep(result.log.back());

    result.steps = opt.step;
    result.final_params = std::move(params);
    result.best.model_config = model_cfg;
    result.best.train_config = cfg;
    result.best.vocab = vocab;
    return result;
}

// ---------------------------------------------------------------------------
// Finite-difference verification

struct TensorCheck {
    std::string name;
    std::size_t scalars = 0;
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    std::size_t non_finite = 0;
};

struct GradCheckReport {
    std::vector<TensorCheck> tensors;
    double tolerance = 0.0;
    bool passed = false;

    double max_rel_error() const {
        double m = 0.0;
        for (const auto& t : tensors) m = std::max(m, t.max_rel_error);
        return m;
    }
};

/// Below this magnitude relative error is measured against the floor, so
/// vanishing gradients are judged on absolute agreement.
inline constexpr double kGradCheckFloor = 1e-6;

inline double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
}

/// Central differences (loss(w+h) - loss(w-h)) / 2h for every trainable
/// scalar, compared against backward_document.
inline GradCheckReport finite_diff_check(const LabeledExample& ex, ModelParams params, const ModelConfig& cfg,
                                         double step_size, double tolerance) {
    if (!(step_size > 0.0)) throw ConfigError("finite_diff_check: step size must be positive");
    const auto fwd = forward_document(ex.doc, params, cfg);
    const GradientSet analytic = backward_document(fwd, ex.labels, params, cfg);

    GradCheckReport report;
    report.tolerance = tolerance;
    report.passed = true;
    auto tensors = params.trainable();
    for (std::size_t ti = 0; ti < tensors.size(); ++ti) {
        TensorCheck tc;
        tc.name = tensors[ti].name;
        auto& w = tensors[ti].tensor->data();
        tc.scalars = w.size();
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double orig = w[j];
            w[j] = orig + step_size;
            const double lp = document_loss(ex, params, cfg);
            w[j] = orig - step_size;
            const double lm = document_loss(ex, params, cfg);
            w[j] = orig;
            const double numeric = (lp - lm) / (2.0 * step_size);
            if (!std::isfinite(numeric)) {
                ++tc.non_finite;
                report.passed = false;
                continue;
            }
            const double err = relative_error(analytic.tensors[ti].data()[j], numeric);
            if (err > tc.max_rel_error) {
                tc.max_rel_error = err;
                tc.worst_index = j;
            }
        }
        if (tc.max_rel_error > tolerance) report.passed = false;
        report.tensors.push_back(tc);
    }
    return report;
}

}  // namespace extsum
