#pragma once

// Transformer building blocks with explicit forward caches and backward passes.
// Activations are (rows x features) row-major matrices where rows enumerate
// (batch, position) pairs: row = b * seq_len + t.

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "qbt/core.hpp"

namespace qbt {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Col = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// ---------------------------------------------------------------------------
// Linear: y = x W + b, W is (in x out), b is (1 x out).

template <typename T>
struct LinearParams {
  Mat<T> weight;
  Mat<T> bias;
};

template <typename T>
Mat<T> linear_forward(const LinearParams<T>& p, const Mat<T>& x) {
  Mat<T> y = x * p.weight;
  y.rowwise() += p.bias.row(0);
  return y;
}

template <typename T>
Mat<T> linear_backward(const LinearParams<T>& p, const Mat<T>& x, const Mat<T>& dy, LinearParams<T>& grad) {
  grad.weight.noalias() += x.transpose() * dy;
  grad.bias += dy.colwise().sum();
  return dy * p.weight.transpose();
}

// ---------------------------------------------------------------------------
// LayerNorm over the feature axis.

template <typename T>
struct LayerNormParams {
  Mat<T> gain;  // 1 x d
  Mat<T> bias;  // 1 x d
};

template <typename T>
struct LayerNormCache {
  Mat<T> normalized;
  Col<T> inv_std;
};

inline constexpr double kLayerNormEps = 1e-5;

template <typename T>
Mat<T> layer_norm_forward(const LayerNormParams<T>& p, const Mat<T>& x, LayerNormCache<T>* cache) {
  const auto d = x.cols();
  Col<T> mean = x.rowwise().mean();
  Mat<T> centered = x.colwise() - mean;
  Col<T> var = centered.array().square().rowwise().sum() / static_cast<T>(d);
  Col<T> inv_std = (var.array() + static_cast<T>(kLayerNormEps)).rsqrt();
  Mat<T> normalized = centered.array().colwise() * inv_std.array();
  Mat<T> y = normalized.array().rowwise() * p.gain.row(0).array();
  y.rowwise() += p.bias.row(0);
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename T>
Mat<T> layer_norm_backward(const LayerNormParams<T>& p, const LayerNormCache<T>& cache, const Mat<T>& dy,
                           LayerNormParams<T>& grad) {
  const T d = static_cast<T>(dy.cols());
  grad.gain += (dy.array() * cache.normalized.array()).colwise().sum().matrix();
  grad.bias += dy.colwise().sum();
  Mat<T> dn = dy.array().rowwise() * p.gain.row(0).array();
  Col<T> mean_dn = dn.rowwise().sum() / d;
  Col<T> mean_dn_n = (dn.array() * cache.normalized.array()).rowwise().sum() / d;
  Mat<T> dx = dn;
  dx.colwise() -= mean_dn;
  dx.array() -= cache.normalized.array().colwise() * mean_dn_n.array();
  dx.array().colwise() *= cache.inv_std.array();
  return dx;
}

// ---------------------------------------------------------------------------
// Dropout (inverted). A null rng means evaluation mode.

template <typename T>
struct DropoutMask {
  Mat<T> scale;  // empty when inactive
  bool active() const { return scale.size() != 0; }
};

template <typename T>
void dropout_forward(Mat<T>& x, double prob, Rng* rng, DropoutMask<T>* mask) {
  if (!rng || prob <= 0.0) return;
  // Each 64-bit draw yields four 16-bit uniforms.
  const auto threshold = static_cast<std::uint64_t>(prob * 65536.0);
  const T kept = static_cast<T>(1.0 / (1.0 - prob));
  Mat<T> scale(x.rows(), x.cols());
  std::uint64_t bits = 0;
  for (Eigen::Index i = 0; i < scale.size(); ++i) {
    if (i % 4 == 0) bits = (*rng)();
    scale.data()[i] = (bits & 0xffff) >= threshold ? kept : T(0);
    bits >>= 16;
  }
  x.array() *= scale.array();
  if (mask) mask->scale = std::move(scale);
}

template <typename T>
void dropout_backward(Mat<T>& dx, const DropoutMask<T>& mask) {
  if (mask.active()) dx.array() *= mask.scale.array();
}

// ---------------------------------------------------------------------------
// Multi-head attention.

template <typename T>
struct AttentionParams {
  LinearParams<T> query, key, value, output;
};

// Which keys a query may see: key j of batch row b is visible iff
// j < key_lengths[b] and, when causal, j <= query position.
struct AttentionMask {
  const std::vector<int>* key_lengths = nullptr;
  bool causal = false;
  int query_offset = 0;  // absolute position of query 0 (incremental decoding)
};

template <typename T>
struct AttentionCache {
  Mat<T> query_input, kv_input;
  Mat<T> q, k, v;
  Mat<T> probs;    // (batch * heads * q_len) x k_len
  Mat<T> context;  // (batch * q_len) x d
  int batch = 0, q_len = 0, k_len = 0, heads = 0;
};

namespace detail {

// Masked softmax of one score row in place; fully masked rows become zero.
template <typename RowT>
void masked_softmax_row(RowT&& row, int visible) {
  using T = typename std::decay_t<RowT>::Scalar;
  const auto n = row.size();
  if (visible <= 0) {
    row.setZero();
    return;
  }
  auto head = row.head(visible).array();
  head = (head - head.maxCoeff()).exp();
  head /= head.sum();
  row.tail(n - visible).setZero();
}

inline int visible_keys(const AttentionMask& mask, int b, int q, int k_len) {
  int visible = mask.key_lengths ? std::min(k_len, (*mask.key_lengths)[b]) : k_len;
  if (mask.causal) visible = std::min(visible, mask.query_offset + q + 1);
  return visible;
}

}  // namespace detail

// Core scaled dot-product attention over already-projected q, k, v.
template <typename T>
Mat<T> attend(const Mat<T>& q, const Mat<T>& k, const Mat<T>& v, int batch, int q_len, int k_len, int heads,
              const AttentionMask& mask, Mat<T>* probs_out) {
  const int d = static_cast<int>(q.cols());
  const int dh = d / heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  Mat<T> context = Mat<T>::Zero(static_cast<Eigen::Index>(batch) * q_len, d);
  if (probs_out) probs_out->resize(static_cast<Eigen::Index>(batch) * heads * q_len, k_len);
  Mat<T> scores(q_len, k_len);
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      const auto qb = q.block(b * q_len, h * dh, q_len, dh);
      const auto kb = k.block(b * k_len, h * dh, k_len, dh);
      const auto vb = v.block(b * k_len, h * dh, k_len, dh);
      scores.noalias() = (qb * kb.transpose()) * scale;
      for (int i = 0; i < q_len; ++i) detail::masked_softmax_row(scores.row(i), detail::visible_keys(mask, b, i, k_len));
      context.block(b * q_len, h * dh, q_len, dh).noalias() = scores * vb;
      if (probs_out) probs_out->block((b * heads + h) * q_len, 0, q_len, k_len) = scores;
    }
  }
  return context;
}

template <typename T>
Mat<T> attention_forward(const AttentionParams<T>& p, const Mat<T>& query_input, const Mat<T>& kv_input, int batch,
                         int q_len, int k_len, int heads, const AttentionMask& mask, AttentionCache<T>* cache) {
  Mat<T> q = linear_forward(p.query, query_input);
  Mat<T> k = linear_forward(p.key, kv_input);
  Mat<T> v = linear_forward(p.value, kv_input);
  Mat<T> probs;
  Mat<T> context = attend(q, k, v, batch, q_len, k_len, heads, mask, cache ? &probs : nullptr);
  Mat<T> out = linear_forward(p.output, context);
  if (cache) {
    cache->query_input = query_input;
    cache->kv_input = kv_input;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->context = std::move(context);
    cache->batch = batch;
    cache->q_len = q_len;
    cache->k_len = k_len;
    cache->heads = heads;
  }
  return out;
}

// Returns {d_query_input, d_kv_input}.
template <typename T>
std::pair<Mat<T>, Mat<T>> attention_backward(const AttentionParams<T>& p, const AttentionCache<T>& c, const Mat<T>& dout,
                                             AttentionParams<T>& grad) {
  const int d = static_cast<int>(c.q.cols());
  const int dh = d / c.heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  Mat<T> dcontext = linear_backward(p.output, c.context, dout, grad.output);
  Mat<T> dq = Mat<T>::Zero(c.q.rows(), d);
  Mat<T> dk = Mat<T>::Zero(c.k.rows(), d);
  Mat<T> dv = Mat<T>::Zero(c.v.rows(), d);
  Mat<T> dprobs(c.q_len, c.k_len);
  for (int b = 0; b < c.batch; ++b) {
    for (int h = 0; h < c.heads; ++h) {
      const auto P = c.probs.block((b * c.heads + h) * c.q_len, 0, c.q_len, c.k_len);
      const auto dctx = dcontext.block(b * c.q_len, h * dh, c.q_len, dh);
      const auto qb = c.q.block(b * c.q_len, h * dh, c.q_len, dh);
      const auto kb = c.k.block(b * c.k_len, h * dh, c.k_len, dh);
      const auto vb = c.v.block(b * c.k_len, h * dh, c.k_len, dh);
      dv.block(b * c.k_len, h * dh, c.k_len, dh).noalias() += P.transpose() * dctx;
      dprobs.noalias() = dctx * vb.transpose();
      // softmax backward: dS = P * (dP - rowsum(dP * P))
      Col<T> inner = (dprobs.array() * P.array()).rowwise().sum();
      Mat<T> dscores = (P.array() * (dprobs.colwise() - inner).array()).matrix() * scale;
      dq.block(b * c.q_len, h * dh, c.q_len, dh).noalias() += dscores * kb;
      dk.block(b * c.k_len, h * dh, c.k_len, dh).noalias() += dscores.transpose() * qb;
    }
  }
  Mat<T> dquery_input = linear_backward(p.query, c.query_input, dq, grad.query);
  Mat<T> dkv_input = linear_backward(p.key, c.kv_input, dk, grad.key);
  dkv_input += linear_backward(p.value, c.kv_input, dv, grad.value);
  return {std::move(dquery_input), std::move(dkv_input)};
}

// ---------------------------------------------------------------------------
// Position-wise feed-forward: relu(x W1 + b1) W2 + b2.

template <typename T>
struct FeedForwardParams {
  LinearParams<T> inner, outer;
};

template <typename T>
struct FeedForwardCache {
  Mat<T> input;
  Mat<T> activated;
};

template <typename T>
Mat<T> feed_forward_forward(const FeedForwardParams<T>& p, const Mat<T>& x, FeedForwardCache<T>* cache) {
  Mat<T> hidden = linear_forward(p.inner, x).cwiseMax(T(0));
  Mat<T> y = linear_forward(p.outer, hidden);
  if (cache) {
    cache->input = x;
    cache->activated = std::move(hidden);
  }
  return y;
}

template <typename T>
Mat<T> feed_forward_backward(const FeedForwardParams<T>& p, const FeedForwardCache<T>& c, const Mat<T>& dy,
                             FeedForwardParams<T>& grad) {
  Mat<T> dhidden = linear_backward(p.outer, c.activated, dy, grad.outer);
  dhidden.array() *= (c.activated.array() > T(0)).template cast<T>();
  return linear_backward(p.inner, c.input, dhidden, grad.inner);
}

}  // namespace qbt
