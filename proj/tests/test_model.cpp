#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "extsum/attention.hpp"
#include "extsum/model.hpp"
#include "extsum/random.hpp"
#include "extsum/synthetic.hpp"

using namespace extsum;

namespace {

Mat random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
    Mat m(r, c);
    for (auto& v : m.data()) v = rng.uniform(-scale, scale);
    return m;
}

Vec random_vec(Rng& rng, std::size_t n) {
    Vec v(n);
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

ModelConfig toy_config(std::size_t vocab = 30) {
    ModelConfig c;
    c.vocab_size = vocab;
    c.d_model = 16;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_ff = 24;
    c.lora_rank = 2;
    c.pretrain_context = 64;
    c.runtime_context = 256;
    c.attention_block = 5;
    return c;
}

TokenizedDocument toy_doc(Rng& rng, std::size_t vocab, std::vector<std::size_t> lengths) {
    TokenizedDocument td;
    td.doc_id = "toy";
    for (std::size_t s = 0; s < lengths.size(); ++s) {
        const std::size_t start = td.token_ids.size();
        for (std::size_t j = 0; j < lengths[s]; ++j)
            td.token_ids.push_back(static_cast<std::int32_t>(2 + rng.below(vocab - 2)));
        td.spans.push_back({start, td.token_ids.size()});
        td.sentence_index.push_back(s);
    }
    return td;
}

}  // namespace

TEST(ModelConfig, ValidationAndScaling) {
    ModelConfig c = toy_config();
    EXPECT_NO_THROW(c.validate());
    c.pretrain_context = 512;
    c.runtime_context = 4096;
    EXPECT_NEAR(c.rope_scaling(), 0.125, 1e-12);
    auto bad = toy_config();
    bad.n_heads = 3;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = toy_config();
    bad.n_heads = 16;  // head_dim 1 is odd
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = toy_config();
    bad.lora_rank = 9;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad.lora_rank = 0;
    EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(ModelParams, TrainableSetIsAdaptersAndClassifier) {
    const auto cfg = toy_config();
    ModelParams p = init_model_params(cfg, 1);
    std::vector<std::string> names;
    for (const auto& t : p.trainable()) names.push_back(t.name);
    std::vector<std::string> expected;
    for (std::size_t l = 0; l < cfg.n_layers; ++l)
        for (const char* proj : {"q", "k", "v", "o"})
            for (const char* ab : {"a", "b"})
                expected.push_back("layers." + std::to_string(l) + ".lora_" + proj + "." + ab);
    expected.push_back("classifier.w");
    expected.push_back("classifier.b");
    EXPECT_EQ(names, expected);
    EXPECT_EQ(p.tensors().size(), 1 + cfg.n_layers * 16 + 3);
}

TEST(ModelParams, InitializationContract) {
    const auto cfg = toy_config();
    const ModelParams p = init_model_params(cfg, 7);
    EXPECT_TRUE(p == init_model_params(cfg, 7));
    EXPECT_FALSE(p == init_model_params(cfg, 8));
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    for (const auto& layer : p.layers) {
        for (const auto* ad : {&layer.lora_q, &layer.lora_k, &layer.lora_v, &layer.lora_o}) {
            EXPECT_EQ(ad->a.rows(), cfg.lora_rank);
            EXPECT_EQ(ad->a.cols(), cfg.d_model);
            EXPECT_EQ(ad->b.rows(), cfg.d_model);
            EXPECT_EQ(ad->b.cols(), cfg.lora_rank);
            for (const double v : ad->b.data()) EXPECT_EQ(v, 0.0);
            for (const double v : ad->a.data()) EXPECT_LE(std::abs(v), bound);
        }
    }
    const auto shapes = expected_shapes(cfg);
    const auto tensors = p.tensors();
    ASSERT_EQ(shapes.size(), tensors.size());
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        EXPECT_EQ(tensors[i].tensor->rows(), shapes[i].first) << tensors[i].name;
        EXPECT_EQ(tensors[i].tensor->cols(), shapes[i].second) << tensors[i].name;
    }
}

TEST(Lora, ZeroBIsBase) {
    Rng rng(1);
    const Mat w = random_matrix(rng, 4, 6);
    LoraAdapter ad{random_matrix(rng, 2, 6), Mat(4, 2)};
    const Vec x = random_vec(rng, 6);
    const Vec y = lora_project(x, w, ad);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(y[i], detail::dot(w.row(i).data(), x.data(), 6));
}

TEST(Lora, HandExample) {
    const Mat w(2, 2);
    const LoraAdapter ad{Mat::from_rows({{1, 0}}), Mat::from_rows({{2}, {0}})};
    const Vec x{5, 7};
    EXPECT_EQ(lora_project(x, w, ad), (Vec{10, 0}));
}

TEST(Lora, MatchesDenseReconstruction) {
    Rng rng(2);
    for (int t = 0; t < 20; ++t) {
        const std::size_t d = 2 + rng.below(6), p = 2 + rng.below(6), r = 1 + rng.below(3);
        const Mat w = random_matrix(rng, d, p);
        const LoraAdapter ad{random_matrix(rng, r, p), random_matrix(rng, d, r)};
        const Mat dense = w + matmul(ad.b, ad.a);
        const Vec x = random_vec(rng, p);
        const Vec y = lora_project(x, w, ad);
        for (std::size_t i = 0; i < d; ++i) EXPECT_NEAR(y[i], detail::dot(dense.row(i).data(), x.data(), p), 1e-12);

        Mat xs = random_matrix(rng, 3, p);
        const Mat rows = lora_project_rows(xs, w, ad, true);
        for (std::size_t n = 0; n < 3; ++n) {
            const Vec yn = lora_project(xs.row(n), w, ad);
            for (std::size_t i = 0; i < d; ++i) EXPECT_NEAR(rows(n, i), yn[i], 1e-12);
        }
    }
}

TEST(Lora, ShapeMismatch) {
    const Mat w(3, 4);
    const LoraAdapter ad{Mat(2, 4), Mat(3, 2)};
    EXPECT_THROW(lora_project(Vec(5, 1.0), w, ad), ShapeError);
    EXPECT_THROW(lora_project(Vec(4, 1.0), w, LoraAdapter{Mat(2, 4), Mat(3, 1)}), ShapeError);
}

TEST(Rope, Examples) {
    ModelConfig cfg = toy_config();
    Rng rng(3);
    const Vec x = random_vec(rng, cfg.head_dim());
    EXPECT_EQ(rope_rotate(x, 0, cfg), x);

    const Vec q = rope_rotate_at(Vec{1.0, 0.0}, std::numbers::pi / 2);
    EXPECT_NEAR(q[0], 0.0, 1e-15);
    EXPECT_NEAR(q[1], 1.0, 1e-15);

    ModelConfig half = cfg, unit = cfg;
    half.pretrain_context = 64;
    half.runtime_context = 128;
    unit.pretrain_context = unit.runtime_context = 128;
    EXPECT_EQ(rope_rotate(x, 10, half), rope_rotate(x, 5, unit));

    EXPECT_THROW(rope_rotate_at(Vec(3, 1.0), 1.0), ShapeError);
    EXPECT_THROW(rope_rotate(Vec(4, 1.0), 1, cfg), ShapeError);
}

TEST(Rope, FrequenciesStartAtOne) {
    EXPECT_EQ(rope_frequency(0, 8, 10000.0), 1.0);
    EXPECT_NEAR(rope_frequency(1, 8, 10000.0), std::pow(10000.0, -0.25), 1e-15);
}

TEST(Rope, NormAndRelativePosition) {
    Rng rng(4);
    for (int t = 0; t < 200; ++t) {
        const std::size_t hd = 2 * (1 + rng.below(32));
        const Vec q = random_vec(rng, hd), k = random_vec(rng, hd);
        const double m = static_cast<double>(rng.below(4097)), l = static_cast<double>(rng.below(4097));
        const Vec rq = rope_rotate_at(q, m);
        EXPECT_NEAR(norm(rq), norm(q), 1e-12);
        EXPECT_NEAR(dot(rq, rope_rotate_at(k, l)), dot(rope_rotate_at(q, m - l), rope_rotate_at(k, 0.0)), 1e-9);
    }
}

TEST(Rope, TableMatchesDirectRotation) {
    ModelConfig cfg = toy_config();
    const RopeTable table(50, cfg);
    Rng rng(5);
    for (std::size_t m : {0u, 1u, 17u, 49u}) {
        Vec x = random_vec(rng, cfg.head_dim());
        const Vec expected = rope_rotate(x, m, cfg);
        Vec y = x;
        table.apply(y, m);
        for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], expected[i], 1e-15);
        table.apply(y, m, true);
        for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i], 1e-14);
    }
}

TEST(Attention, NaiveExamples) {
    Rng rng(6);
    const Mat v1 = random_matrix(rng, 1, 4);
    EXPECT_EQ(attention_naive(random_matrix(rng, 1, 4), random_matrix(rng, 1, 4), v1, AttentionMode::causal), v1);

    const Mat q = random_matrix(rng, 2, 4);
    Mat k = random_matrix(rng, 2, 4);
    for (std::size_t c = 0; c < 4; ++c) k(1, c) = k(0, c);
    const Mat v = random_matrix(rng, 2, 4);
    const Mat o = attention_naive(q, k, v, AttentionMode::bidirectional);
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(o(r, c), 0.5 * (v(0, c) + v(1, c)), 1e-15);

    const Mat oc = attention_naive(q, k, v, AttentionMode::causal);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(oc(0, c), v(0, c));
    EXPECT_THROW(attention_naive(q, random_matrix(rng, 3, 4), v, AttentionMode::causal), ShapeError);
}

TEST(Attention, TiledMatchesNaive) {
    Rng rng(7);
    for (const auto mode : {AttentionMode::causal, AttentionMode::bidirectional}) {
        for (const std::size_t n : {1u, 2u, 5u, 64u, 257u}) {
            const Mat q = random_matrix(rng, n, 8, 2.0), k = random_matrix(rng, n, 8, 2.0), v = random_matrix(rng, n, 8);
            const Mat ref = attention_naive(q, k, v, mode);
            for (const std::size_t bs : {std::size_t{1}, std::size_t{3}, std::size_t{16}, std::size_t{64}, n}) {
                AttentionStats stats;
                const Mat out = attention_tiled(q, k, v, mode, bs, &stats);
                EXPECT_LE(max_abs_diff(out, ref), bs == n ? 1e-12 : 1e-10) << "n=" << n << " bs=" << bs;
                EXPECT_LE(stats.peak_score_rows, bs);
                EXPECT_LE(stats.peak_score_elements, bs * bs);
            }
        }
    }
    EXPECT_THROW(attention_tiled(Mat(2, 2), Mat(2, 2), Mat(2, 2), AttentionMode::causal, 0), ConfigError);
}

TEST(Attention, CausalRowsIgnoreLaterValues) {
    Rng rng(8);
    const std::size_t n = 12;
    const Mat q = random_matrix(rng, n, 4), k = random_matrix(rng, n, 4);
    Mat v = random_matrix(rng, n, 4);
    const Mat before = attention_tiled(q, k, v, AttentionMode::causal, 4);
    for (std::size_t c = 0; c < 4; ++c) v(7, c) += 3.0;
    const Mat after = attention_tiled(q, k, v, AttentionMode::causal, 4);
    for (std::size_t r = 0; r < 7; ++r)
        for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(before(r, c), after(r, c));
    EXPECT_NE(before(7, 0), after(7, 0));
}

TEST(Attention, BackwardMatchesFiniteDifferences) {
    Rng rng(9);
    const std::size_t n = 6, hd = 4;
    for (const auto mode : {AttentionMode::causal, AttentionMode::bidirectional}) {
        Mat q = random_matrix(rng, n, hd), k = random_matrix(rng, n, hd), v = random_matrix(rng, n, hd);
        const Mat w = random_matrix(rng, n, hd);  // loss = sum(w .* out)
        const auto g = attention_backward(q, k, v, w, mode);
        auto loss = [&] {
            const Mat o = attention_naive(q, k, v, mode);
            double s = 0.0;
            for (std::size_t i = 0; i < o.size(); ++i) s += o.data()[i] * w.data()[i];
            return s;
        };
        const double h = 1e-6;
        for (auto [m, grad] : {std::pair{&q, &g.dq}, std::pair{&k, &g.dk}, std::pair{&v, &g.dv}}) {
            for (std::size_t i = 0; i < m->size(); ++i) {
                const double old = m->data()[i];
                m->data()[i] = old + h;
                const double lp = loss();
                m->data()[i] = old - h;
                const double lm = loss();
                m->data()[i] = old;
                EXPECT_NEAR(grad->data()[i], (lp - lm) / (2 * h), 1e-7);
            }
        }
    }
}

TEST(MeanPool, Examples) {
    const Mat h = Mat::from_rows({{1, 0}, {0, 1}, {4, 4}});
    const Mat p = mean_pool(h, {{0, 2}, {2, 3}});
    EXPECT_EQ(p(0, 0), 0.5);
    EXPECT_EQ(p(0, 1), 0.5);
    EXPECT_EQ(p(1, 0), 4.0);
    const Mat same = Mat::from_rows({{2, 3}, {2, 3}, {2, 3}});
    const Mat q = mean_pool(same, {{0, 1}, {1, 3}});
    for (std::size_t s = 0; s < 2; ++s) {
        EXPECT_EQ(q(s, 0), 2.0);
        EXPECT_EQ(q(s, 1), 3.0);
    }
    EXPECT_THROW(mean_pool(h, {{1, 1}}), DegenerateDocumentError);
}

TEST(ClassifyHead, Examples) {
    ModelParams p = init_model_params(toy_config(), 1);
    p.classifier_w = Mat(1, 16);
    const Vec s(16, 0.3);
    EXPECT_EQ(classify_head(s, p), 0.5);
    p.classifier_b(0, 0) = std::log(3.0);
    EXPECT_NEAR(classify_head(s, p), 0.75, 1e-15);
    Rng rng(10);
    p.classifier_w = random_matrix(rng, 1, 16);
    p.classifier_b(0, 0) = 0.0;
    Vec neg = s;
    for (auto& x : neg) x = -x;
    EXPECT_NEAR(classify_head(s, p) + classify_head(neg, p), 1.0, 1e-15);
}

TEST(Forward, ZeroClassifierGivesHalf) {
    const auto cfg = toy_config();
    ModelParams p = init_model_params(cfg, 2);
    p.classifier_w = Mat(1, cfg.d_model);
    Rng rng(11);
    const auto td = toy_doc(rng, cfg.vocab_size, {3, 5, 1, 4});
    const auto r = forward_document(td, p, cfg);
    ASSERT_EQ(r.probs.size(), 4u);
    for (const double v : r.probs) EXPECT_EQ(v, 0.5);
}

TEST(Forward, DeterministicAndShaped) {
    const auto cfg = toy_config();
    const ModelParams p = init_model_params(cfg, 3);
    Rng rng(12);
    for (int t = 0; t < 5; ++t) {
        std::vector<std::size_t> lengths(1 + rng.below(6));
        for (auto& l : lengths) l = 1 + rng.below(8);
        const auto td = toy_doc(rng, cfg.vocab_size, lengths);
        const auto a = forward_document(td, p, cfg), b = forward_document(td, p, cfg);
        EXPECT_EQ(a.probs.size(), lengths.size());
        EXPECT_EQ(a.probs, b.probs);
        for (const double v : a.probs) {
            EXPECT_GT(v, 0.0);
            EXPECT_LT(v, 1.0);
        }
    }
}

TEST(Forward, TiledAndNaiveAgree) {
    auto cfg = synthetic::gradcheck_setup(4).config;
    const auto setup = synthetic::gradcheck_setup(4);
    for (const auto mode : {AttentionMode::causal, AttentionMode::bidirectional}) {
        cfg.attention_mode = mode;
        cfg.tiled_attention = true;
        const auto a = forward_document(setup.example.doc, setup.params, cfg);
        cfg.tiled_attention = false;
        const auto b = forward_document(setup.example.doc, setup.params, cfg);
        for (std::size_t i = 0; i < a.probs.size(); ++i) EXPECT_NEAR(a.probs[i], b.probs[i], 1e-12);
    }
}

TEST(Forward, ZeroAdaptersIndependentOfRank) {
    Rng rng(13);
    auto cfg = toy_config();
    const auto td = toy_doc(rng, cfg.vocab_size, {4, 2, 6});
    cfg.lora_rank = 1;
    const ModelParams p1 = init_model_params(cfg, 5);
    cfg.lora_rank = 8;
    const ModelParams p8 = init_model_params(cfg, 5);
    const auto a = forward_document(td, p1, cfg), b = forward_document(td, p8, cfg);
    for (std::size_t i = 0; i < a.probs.size(); ++i) EXPECT_NEAR(a.probs[i], b.probs[i], 1e-12);
}

TEST(Forward, Errors) {
    auto cfg = toy_config();
    const ModelParams p = init_model_params(cfg, 6);
    Rng rng(14);
    const auto long_doc = toy_doc(rng, cfg.vocab_size, {200, 57});
    EXPECT_THROW(forward_document(long_doc, p, cfg), ContextLengthError);
    auto bad = toy_doc(rng, cfg.vocab_size, {3});
    bad.token_ids[1] = static_cast<std::int32_t>(cfg.vocab_size);
    EXPECT_THROW(forward_document(bad, p, cfg), ValidationError);
}

TEST(Backward, BiasGradientClosedForm) {
    const auto setup = synthetic::gradcheck_setup(21);
    const auto fwd = forward_document(setup.example.doc, setup.params, setup.config);
    const auto g = backward_document(fwd, setup.example.labels, setup.params, setup.config);
    double expected = 0.0;
    for (std::size_t i = 0; i < fwd.probs.size(); ++i) expected += fwd.probs[i] - setup.example.labels[i];
    expected /= static_cast<double>(fwd.probs.size());
    EXPECT_NEAR(g.tensors[trainable_index::classifier_b(setup.config.n_layers)](0, 0), expected, 1e-12);
    EXPECT_EQ(g.tensors.size(), setup.params.trainable().size());
}

TEST(Backward, SaturatedPredictionsGiveTinyGradients) {
    auto setup = synthetic::gradcheck_setup(22);
    setup.params.classifier_w = Mat(1, setup.config.d_model);
    setup.params.classifier_b(0, 0) = 40.0;
    const std::vector<int> ones(setup.example.doc.spans.size(), 1);
    const auto fwd = forward_document(setup.example.doc, setup.params, setup.config);
    const auto g = backward_document(fwd, ones, setup.params, setup.config);
    for (const auto& t : g.tensors)
        for (const double v : t.data()) EXPECT_LT(std::abs(v), 1e-15);
}

TEST(Backward, FrozenModeOnlyTouchesClassifier) {
    const auto setup = synthetic::gradcheck_setup(23);
    ForwardOptions opts;
    opts.use_adapters = false;
    const auto fwd = forward_document(setup.example.doc, setup.params, setup.config, opts);
    const auto g = backward_document(fwd, setup.example.labels, setup.params, setup.config);
    const std::size_t L = setup.config.n_layers;
    for (std::size_t i = 0; i < trainable_index::classifier_w(L); ++i)
        for (const double v : g.tensors[i].data()) EXPECT_EQ(v, 0.0);
    double mag = 0.0;
    for (const double v : g.tensors[trainable_index::classifier_w(L)].data()) mag += std::abs(v);
    EXPECT_GT(mag, 0.0);
}

TEST(Backward, LabelMisalignment) {
    const auto setup = synthetic::gradcheck_setup(24);
    const auto fwd = forward_document(setup.example.doc, setup.params, setup.config);
    EXPECT_THROW(backward_document(fwd, {1, 0}, setup.params, setup.config), ValidationError);
}
