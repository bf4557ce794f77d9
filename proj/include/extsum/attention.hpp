#pragma once

// Scaled dot-product attention: a reference implementation that builds the
// full score matrix, and a tiled online-softmax version whose auxiliary
// storage is one block_size x block_size score tile.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "extsum/error.hpp"
#include "extsum/numerics.hpp"

namespace extsum {

enum class AttentionMode { causal, bidirectional };

inline std::string to_string(AttentionMode m) { return m == AttentionMode::causal ? "causal" : "bidirectional"; }

inline AttentionMode parse_attention_mode(const std::string& s) {
    if (s == "causal") return AttentionMode::causal;
    if (s == "bidirectional") return AttentionMode::bidirectional;
    throw ConfigError("unknown attention mode '" + s + "' (expected causal or bidirectional)");
}

/// Instrumentation for the tiled kernel: the largest score buffer ever live.
struct AttentionStats {
    std::size_t peak_score_rows = 0;
    std::size_t peak_score_cols = 0;
    std::size_t peak_score_elements = 0;
    std::size_t tiles = 0;
};

namespace detail {

template <typename T>
void check_qkv(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v) {
    if (!q.same_shape(k) || !q.same_shape(v)) {
        throw ShapeError("attention: Q " + q.shape() + ", K " + k.shape() + ", V " + v.shape() +
                         " must share one shape");
    }
}

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

}  // namespace detail

/// o = softmax(Q K^T / sqrt(head_dim) + mask) V, with -inf above the diagonal in causal mode.
template <typename T>
Matrix<T> attention_naive(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v, AttentionMode mode) {
    detail::check_qkv(q, k, v);
    const std::size_t n = q.rows();
    const T scale = T(1) / std::sqrt(static_cast<T>(q.cols()));
    Matrix<T> scores = matmul_nt(q, k);
    scores *= scale;
    if (mode == AttentionMode::causal) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) scores(i, j) = -std::numeric_limits<T>::infinity();
    }
    return matmul(softmax_rows(std::move(scores)), v);
}

/// Same function as attention_naive computed block by block with a running
/// row max, running denominator and rescaled accumulator. If `lse` is given
/// it receives the per-row log-sum-exp of the scaled scores.
template <typename T>
Matrix<T> attention_tiled(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v, AttentionMode mode,
                          std::size_t block_size, AttentionStats* stats = nullptr,
                          std::vector<T>* lse = nullptr) {
    detail::check_qkv(q, k, v);
    if (block_size == 0) throw ConfigError("attention_tiled: block_size must be positive");
    const std::size_t n = q.rows();
    const std::size_t hd = q.cols();
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));
    constexpr T kNegInf = -std::numeric_limits<T>::infinity();

    Matrix<T> out(n, hd);
    if (lse) lse->assign(n, T(0));

    const std::size_t bs = std::min(block_size, n);
    std::vector<T> tile(bs * bs);
    std::vector<T> row_max(bs), row_sum(bs);
    std::vector<T> acc(bs * hd);
    if (stats) {
        stats->peak_score_rows = std::max(stats->peak_score_rows, bs);
        stats->peak_score_cols = std::max(stats->peak_score_cols, bs);
        stats->peak_score_elements = std::max(stats->peak_score_elements, tile.size());
    }

    for (std::size_t q0 = 0; q0 < n; q0 += bs) {
        const std::size_t qn = std::min(bs, n - q0);
        std::fill(row_max.begin(), row_max.end(), kNegInf);
        std::fill(row_sum.begin(), row_sum.end(), T(0));
        std::fill(acc.begin(), acc.end(), T(0));

        for (std::size_t k0 = 0; k0 < n; k0 += bs) {
            if (mode == AttentionMode::causal && k0 > q0 + qn - 1) break;
            const std::size_t kn = std::min(bs, n - k0);
            if (stats) ++stats->tiles;

            for (std::size_t i = 0; i < qn; ++i) {
                const T* qi = q.row(q0 + i).data();
                for (std::size_t j = 0; j < kn; ++j) {
                    const bool masked = mode == AttentionMode::causal && k0 + j > q0 + i;
                    tile[i * bs + j] = masked ? kNegInf : detail::dot(qi, k.row(k0 + j).data(), hd) * scale;
                }
            }

            for (std::size_t i = 0; i < qn; ++i) {
                T* srow = &tile[i * bs];
                T tmax = kNegInf;
                for (std::size_t j = 0; j < kn; ++j) tmax = std::max(tmax, srow[j]);
                if (tmax == kNegInf) continue;  // fully masked for this row
                const T new_max = std::max(row_max[i], tmax);
                const T correction = row_max[i] == kNegInf ? T(0) : std::exp(row_max[i] - new_max);
                T* a = &acc[i * hd];
                T tsum = T(0);
                for (std::size_t d = 0; d < hd; ++d) a[d] *= correction;
                for (std::size_t j = 0; j < kn; ++j) {
                    if (srow[j] == kNegInf) continue;
                    const T p = std::exp(srow[j] - new_max);
                    tsum += p;
                    const T* vj = v.row(k0 + j).data();
                    for (std::size_t d = 0; d < hd; ++d) a[d] += p * vj[d];
                }
                row_sum[i] = row_sum[i] * correction + tsum;
                row_max[i] = new_max;
            }
        }

        for (std::size_t i = 0; i < qn; ++i) {
            T* o = out.row(q0 + i).data();
            const T inv = T(1) / row_sum[i];
            for (std::size_t d = 0; d < hd; ++d) o[d] = acc[i * hd + d] * inv;
            if (lse) (*lse)[q0 + i] = row_max[i] + std::log(row_sum[i]);
        }
    }
    return out;
}

struct AttentionGrads {
    Mat dq;
    Mat dk;
    Mat dv;
};

/// Reverse pass of attention given the upstream gradient of the output.
/// Probabilities are recomputed one query row at a time, so storage stays O(n).
inline AttentionGrads attention_backward(const Mat& q, const Mat& k, const Mat& v, const Mat& d_out,
                                         AttentionMode mode) {
    detail::check_qkv(q, k, v);
    Mat::require_same_shape(q, d_out, "attention_backward");
    const std::size_t n = q.rows();
    const std::size_t hd = q.cols();
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    AttentionGrads g{Mat(n, hd), Mat(n, hd), Mat(n, hd)};
    std::vector<double> p(n), dp(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t kn = mode == AttentionMode::causal ? i + 1 : n;
        const double* qi = q.row(i).data();
        const double* doi = d_out.row(i).data();
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < kn; ++j) {
            p[j] = detail::dot(qi, k.row(j).data(), hd) * scale;
            mx = std::max(mx, p[j]);
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < kn; ++j) {
            p[j] = std::exp(p[j] - mx);
            sum += p[j];
        }
        double dsum = 0.0;
        for (std::size_t j = 0; j < kn; ++j) {
            p[j] /= sum;
            dp[j] = detail::dot(doi, v.row(j).data(), hd);
            dsum += p[j] * dp[j];
        }
        double* dqi = g.dq.row(i).data();
        for (std::size_t j = 0; j < kn; ++j) {
            const double ds = p[j] * (dp[j] - dsum) * scale;
            const double* kj = k.row(j).data();
            double* dkj = g.dk.row(j).data();
            double* dvj = g.dv.row(j).data();
            for (std::size_t d = 0; d < hd; ++d) {
                dqi[d] += ds * kj[d];
                dkj[d] += ds * qi[d];
                dvj[d] += p[j] * doi[d];
            }
        }
    }
    return g;
}

}  // namespace extsum
