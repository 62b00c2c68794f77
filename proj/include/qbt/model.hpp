#pragma once

// Encoder-decoder Transformer whose encoder doubles as a non-autoregressive
// translator through an output head tied to its input embedding.
//
// Layers are pre-norm: x += Sublayer(LayerNorm(x)), with a final LayerNorm on
// each stack. Inputs are token + learned position + language embeddings.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "qbt/core.hpp"
#include "qbt/layers.hpp"
#include "qbt/synthdata.hpp"

namespace qbt {

struct ModelConfig {
  int n_enc_layers = 2;
  int n_dec_layers = 2;
  int d_model = 64;
  int d_ff = 256;
  int n_heads = 4;
  int max_positions = 128;
  int vocab_size = kNumSpecials + 2 * 200;
  double dropout = 0.1;
  bool tie_encoder_head = true;          // encoder head aliases the encoder embedding
  bool tie_decoder_head = true;          // decoder head aliases the decoder embedding
  bool share_enc_dec_embeddings = false;  // decoder embedding aliases the encoder embedding
  bool encoder_target_lang = false;       // add a target-language embedding to encoder inputs

  void validate() const {
    if (n_enc_layers < 1 || n_dec_layers < 1) throw ConfigError("layer counts must be >= 1");
    if (d_model < 1 || d_ff < 1 || n_heads < 1) throw ConfigError("dimensions must be positive");
    if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
    if (max_positions < 2) throw ConfigError("max_positions must be >= 2");
    if (vocab_size <= kNumSpecials) throw ConfigError("vocab_size must exceed the special ids");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
  }

  bool operator==(const ModelConfig&) const = default;
};

enum class ParamGroup { Encoder, Decoder };

inline std::string_view to_string(ParamGroup g) { return g == ParamGroup::Encoder ? "encoder" : "decoder"; }

template <typename T>
struct EncoderLayerParams {
  LayerNormParams<T> norm1;
  AttentionParams<T> self_attn;
  LayerNormParams<T> norm2;
  FeedForwardParams<T> ffn;
};

template <typename T>
struct DecoderLayerParams {
  LayerNormParams<T> norm1;
  AttentionParams<T> self_attn;
  LayerNormParams<T> norm2;
  AttentionParams<T> cross_attn;
  LayerNormParams<T> norm3;
  FeedForwardParams<T> ffn;
};

// All model parameters. Tied heads and shared embeddings are not separate
// storage: the accessors return the matrix they alias, so an update through
// one name is visible through the other. The same type doubles as the
// gradient and optimizer-moment container.
template <typename T>
struct ModelParams {
  ModelConfig config;

  Mat<T> enc_embed;        // V x d
  Mat<T> enc_pos;          // P x d
  Mat<T> enc_lang;         // 2 x d
  Mat<T> enc_target_lang;  // 2 x d, only with config.encoder_target_lang
  std::vector<EncoderLayerParams<T>> enc_layers;
  LayerNormParams<T> enc_norm;
  Mat<T> enc_head_own;  // only when the encoder head is untied

  Mat<T> dec_embed_own;  // only when embeddings are not shared
  Mat<T> dec_pos;
  Mat<T> dec_lang;
  std::vector<DecoderLayerParams<T>> dec_layers;
  LayerNormParams<T> dec_norm;
  Mat<T> dec_head_own;  // only when the decoder head is untied

  Mat<T>& dec_embed() { return config.share_enc_dec_embeddings ? enc_embed : dec_embed_own; }
  const Mat<T>& dec_embed() const { return config.share_enc_dec_embeddings ? enc_embed : dec_embed_own; }
  Mat<T>& enc_head() { return config.tie_encoder_head ? enc_embed : enc_head_own; }
  const Mat<T>& enc_head() const { return config.tie_encoder_head ? enc_embed : enc_head_own; }
  Mat<T>& dec_head() { return config.tie_decoder_head ? dec_embed() : dec_head_own; }
  const Mat<T>& dec_head() const { return config.tie_decoder_head ? dec_embed() : dec_head_own; }

  static ModelParams zeros(const ModelConfig& config);
  static ModelParams initialized(const ModelConfig& config, std::uint64_t seed);
};

// Visits every distinct parameter tensor exactly once, in a fixed order.
// `P` is ModelParams<T> or const ModelParams<T>.
template <typename P, typename F>
void for_each_tensor(P& p, F&& f) {
  auto linear = [&](const std::string& name, ParamGroup g, auto& lin) {
    f(name + ".weight", g, lin.weight);
    f(name + ".bias", g, lin.bias);
  };
  auto norm = [&](const std::string& name, ParamGroup g, auto& ln) {
    f(name + ".gain", g, ln.gain);
    f(name + ".bias", g, ln.bias);
  };
  auto attention = [&](const std::string& name, ParamGroup g, auto& a) {
    linear(name + ".query", g, a.query);
    linear(name + ".key", g, a.key);
    linear(name + ".value", g, a.value);
    linear(name + ".output", g, a.output);
  };
  auto ffn = [&](const std::string& name, ParamGroup g, auto& m) {
    linear(name + ".inner", g, m.inner);
    linear(name + ".outer", g, m.outer);
  };
  constexpr auto E = ParamGroup::Encoder;
  constexpr auto D = ParamGroup::Decoder;
  const ModelConfig& c = p.config;

  f("enc.embed", E, p.enc_embed);
  f("enc.pos", E, p.enc_pos);
  f("enc.lang", E, p.enc_lang);
  if (c.encoder_target_lang) f("enc.target_lang", E, p.enc_target_lang);
  for (std::size_t l = 0; l < p.enc_layers.size(); ++l) {
    const std::string base = "enc.layer" + std::to_string(l);
    auto& layer = p.enc_layers[l];
    norm(base + ".norm1", E, layer.norm1);
    attention(base + ".self_attn", E, layer.self_attn);
    norm(base + ".norm2", E, layer.norm2);
    ffn(base + ".ffn", E, layer.ffn);
  }
  norm("enc.norm", E, p.enc_norm);
  if (!c.tie_encoder_head) f("enc.head", E, p.enc_head_own);

  if (!c.share_enc_dec_embeddings) f("dec.embed", D, p.dec_embed_own);
  f("dec.pos", D, p.dec_pos);
  f("dec.lang", D, p.dec_lang);
  for (std::size_t l = 0; l < p.dec_layers.size(); ++l) {
    const std::string base = "dec.layer" + std::to_string(l);
    auto& layer = p.dec_layers[l];
    norm(base + ".norm1", D, layer.norm1);
    attention(base + ".self_attn", D, layer.self_attn);
    norm(base + ".norm2", D, layer.norm2);
    attention(base + ".cross_attn", D, layer.cross_attn);
    norm(base + ".norm3", D, layer.norm3);
    ffn(base + ".ffn", D, layer.ffn);
  }
  norm("dec.norm", D, p.dec_norm);
  if (!c.tie_decoder_head) f("dec.head", D, p.dec_head_own);
}

namespace detail {

template <typename T>
struct ParamFactory {
  const ModelConfig& c;
  std::function<Mat<T>(Eigen::Index, Eigen::Index)> weight;

  LinearParams<T> linear(int in, int out) const { return {weight(in, out), Mat<T>::Zero(1, out)}; }
  LayerNormParams<T> norm() const { return {Mat<T>::Ones(1, c.d_model), Mat<T>::Zero(1, c.d_model)}; }
  AttentionParams<T> attention() const {
    return {linear(c.d_model, c.d_model), linear(c.d_model, c.d_model), linear(c.d_model, c.d_model),
            linear(c.d_model, c.d_model)};
  }
  FeedForwardParams<T> ffn() const { return {linear(c.d_model, c.d_ff), linear(c.d_ff, c.d_model)}; }

  ModelParams<T> build() const {
    ModelParams<T> p;
    p.config = c;
    p.enc_embed = weight(c.vocab_size, c.d_model);
    p.enc_pos = weight(c.max_positions, c.d_model);
    p.enc_lang = weight(2, c.d_model);
    if (c.encoder_target_lang) p.enc_target_lang = weight(2, c.d_model);
    for (int l = 0; l < c.n_enc_layers; ++l) p.enc_layers.push_back({norm(), attention(), norm(), ffn()});
    p.enc_norm = norm();
    if (!c.tie_encoder_head) p.enc_head_own = weight(c.vocab_size, c.d_model);
    if (!c.share_enc_dec_embeddings) p.dec_embed_own = weight(c.vocab_size, c.d_model);
    p.dec_pos = weight(c.max_positions, c.d_model);
    p.dec_lang = weight(2, c.d_model);
    for (int l = 0; l < c.n_dec_layers; ++l)
      p.dec_layers.push_back({norm(), attention(), norm(), attention(), norm(), ffn()});
    p.dec_norm = norm();
    if (!c.tie_decoder_head) p.dec_head_own = weight(c.vocab_size, c.d_model);
    return p;
  }
};

}  // namespace detail

template <typename T>
ModelParams<T> ModelParams<T>::zeros(const ModelConfig& config) {
  config.validate();
  detail::ParamFactory<T> factory{config, [](Eigen::Index r, Eigen::Index c) { return Mat<T>::Zero(r, c); }};
  ModelParams<T> p = factory.build();
  // Gradients and moments start at zero everywhere, including norm gains.
  for_each_tensor(p, [](const std::string&, ParamGroup, Mat<T>& m) { m.setZero(); });
  return p;
}

inline constexpr double kInitStddev = 0.02;

template <typename T>
ModelParams<T> ModelParams<T>::initialized(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, kInitStddev);
  detail::ParamFactory<T> factory{config, [&](Eigen::Index r, Eigen::Index c) {
                                    Mat<T> m(r, c);
                                    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(normal(rng));
                                    return m;
                                  }};
  return factory.build();
}

template <typename T>
std::size_t parameter_count(const ModelParams<T>& p) {
  std::size_t n = 0;
  for_each_tensor(p, [&](const std::string&, ParamGroup, const Mat<T>& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

// Pure function of the configuration.
inline std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t d = c.d_model, f = c.d_ff, v = c.vocab_size, pos = c.max_positions;
  const std::size_t linear_dd = d * d + d;
  const std::size_t attention = 4 * linear_dd;
  const std::size_t norm = 2 * d;
  const std::size_t ffn = d * f + f + f * d + d;
  std::size_t n = v * d + pos * d + 2 * d + (c.encoder_target_lang ? 2 * d : 0);
  n += c.n_enc_layers * (2 * norm + attention + ffn) + norm;
  if (!c.tie_encoder_head) n += v * d;
  if (!c.share_enc_dec_embeddings) n += v * d;
  n += pos * d + 2 * d;
  n += c.n_dec_layers * (3 * norm + 2 * attention + ffn) + norm;
  if (!c.tie_decoder_head) n += v * d;
  return n;
}

template <typename U, typename T>
ModelParams<U> cast_params(const ModelParams<T>& src) {
  ModelParams<U> dst = ModelParams<U>::zeros(src.config);
  std::vector<Mat<U>*> out;
  for_each_tensor(dst, [&](const std::string&, ParamGroup, Mat<U>& m) { out.push_back(&m); });
  std::size_t i = 0;
  for_each_tensor(src, [&](const std::string&, ParamGroup, const Mat<T>& m) { *out[i++] = m.template cast<U>(); });
  return dst;
}

template <typename T>
std::uint64_t params_hash(const ModelParams<T>& p, std::optional<ParamGroup> only = std::nullopt) {
  Fnv1a h;
  for_each_tensor(p, [&](const std::string& name, ParamGroup g, const Mat<T>& m) {
    if (only && *only != g) return;
    h.update(name);
    h.update(m.data(), static_cast<std::size_t>(m.size()) * sizeof(T));
  });
  return h.digest();
}

// ---------------------------------------------------------------------------
// Forward/backward passes

template <typename T>
struct HiddenStates {
  Mat<T> values;  // (batch * len) x d_model
  int batch = 0;
  int len = 0;
  std::vector<int> lengths;  // valid positions per row; the rest is padding

  bool all_finite() const { return values.allFinite(); }
};

template <typename T>
struct LogitsOutput {
  Mat<T> values;  // (batch * len) x vocab
  int batch = 0;
  int len = 0;
};

template <typename T>
struct EncoderLayerTrace {
  LayerNormCache<T> norm1;
  AttentionCache<T> attn;
  DropoutMask<T> drop1;
  LayerNormCache<T> norm2;
  FeedForwardCache<T> ffn;
  DropoutMask<T> drop2;
};

template <typename T>
struct EncoderTrace {
  std::vector<int> ids;
  int batch = 0, len = 0;
  Lang source_lang = Lang::S;
  std::optional<Lang> target_lang;
  DropoutMask<T> embed_drop;
  std::vector<EncoderLayerTrace<T>> layers;
  LayerNormCache<T> final_norm;
};

template <typename T>
struct DecoderLayerTrace {
  LayerNormCache<T> norm1;
  AttentionCache<T> self_attn;
  DropoutMask<T> drop1;
  LayerNormCache<T> norm2;
  AttentionCache<T> cross_attn;
  DropoutMask<T> drop2;
  LayerNormCache<T> norm3;
  FeedForwardCache<T> ffn;
  DropoutMask<T> drop3;
};

template <typename T>
struct DecoderTrace {
  std::vector<int> ids;
  int batch = 0, len = 0, src_len = 0;
  Lang target_lang = Lang::T;
  DropoutMask<T> embed_drop;
  std::vector<DecoderLayerTrace<T>> layers;
  LayerNormCache<T> final_norm;
  Mat<T> hidden;  // final normalized states, input of the head
};

// Encoder head trace: just the hidden states fed to the head.
template <typename T>
struct HeadTrace {
  Mat<T> hidden;
};

namespace detail {

inline void check_batch(const Batch& batch, const ModelConfig& c, const char* what) {
  if (batch.cols() > c.max_positions)
    throw InvalidInput(std::string(what) + ": sequence length " + std::to_string(batch.cols()) +
                       " exceeds max_positions " + std::to_string(c.max_positions));
  for (int id : batch.ids())
    if (id < 0 || id >= c.vocab_size) throw InvalidInput(std::string(what) + ": token id out of vocabulary");
}

template <typename T>
Mat<T> embed(const Mat<T>& table, const Mat<T>& pos, const Mat<T>& lang_row_src, int lang_row, const Batch& batch,
             const Mat<T>* extra, int extra_row) {
  const int L = batch.cols();
  Mat<T> x(static_cast<Eigen::Index>(batch.rows()) * L, table.cols());
  for (int b = 0; b < batch.rows(); ++b)
    for (int t = 0; t < L; ++t) {
      auto row = x.row(b * L + t);
      row = table.row(batch.id(b, t)) + pos.row(t) + lang_row_src.row(lang_row);
      if (extra) row += extra->row(extra_row);
    }
  return x;
}

}  // namespace detail

// Bidirectional encoder. With `trace` set, caches activations for encode_backward;
// with `rng` set, applies dropout (training mode).
template <typename T>
HiddenStates<T> encode(const ModelParams<T>& p, const Batch& batch, std::optional<Lang> target_lang = std::nullopt,
                       EncoderTrace<T>* trace = nullptr, Rng* rng = nullptr) {
  const ModelConfig& c = p.config;
  detail::check_batch(batch, c, "encode");
  const int B = batch.rows(), L = batch.cols();
  const Lang src = batch.language();
  const bool use_target = c.encoder_target_lang;
  const Lang tgt = target_lang.value_or(other(src));
  Mat<T> x = detail::embed(p.enc_embed, p.enc_pos, p.enc_lang, index(src), batch,
                           use_target ? &p.enc_target_lang : nullptr, index(tgt));
  if (trace) {
    trace->ids = batch.ids();
    trace->batch = B;
    trace->len = L;
    trace->source_lang = src;
    trace->target_lang = use_target ? std::optional<Lang>(tgt) : std::nullopt;
    trace->layers.assign(p.enc_layers.size(), {});
  }
  dropout_forward(x, c.dropout, rng, trace ? &trace->embed_drop : nullptr);
  const AttentionMask mask{&batch.lengths(), false, 0};
  for (std::size_t l = 0; l < p.enc_layers.size(); ++l) {
    const auto& layer = p.enc_layers[l];
    EncoderLayerTrace<T>* lt = trace ? &trace->layers[l] : nullptr;
    Mat<T> a = layer_norm_forward(layer.norm1, x, lt ? &lt->norm1 : nullptr);
    Mat<T> att = attention_forward(layer.self_attn, a, a, B, L, L, c.n_heads, mask, lt ? &lt->attn : nullptr);
    dropout_forward(att, c.dropout, rng, lt ? &lt->drop1 : nullptr);
    x += att;
    Mat<T> n2 = layer_norm_forward(layer.norm2, x, lt ? &lt->norm2 : nullptr);
    Mat<T> f = feed_forward_forward(layer.ffn, n2, lt ? &lt->ffn : nullptr);
    dropout_forward(f, c.dropout, rng, lt ? &lt->drop2 : nullptr);
    x += f;
  }
  HiddenStates<T> out;
  out.values = layer_norm_forward(p.enc_norm, x, trace ? &trace->final_norm : nullptr);
  out.batch = B;
  out.len = L;
  out.lengths = batch.lengths();
  return out;
}

// Accumulates parameter gradients of the encoder given dLoss/dHidden.
template <typename T>
void encode_backward(const ModelParams<T>& p, const EncoderTrace<T>& trace, const Mat<T>& d_hidden, ModelParams<T>& grad) {
  Mat<T> dx = layer_norm_backward(p.enc_norm, trace.final_norm, d_hidden, grad.enc_norm);
  for (std::size_t li = p.enc_layers.size(); li-- > 0;) {
    const auto& layer = p.enc_layers[li];
    auto& g = grad.enc_layers[li];
    const auto& lt = trace.layers[li];
    Mat<T> df = dx;
    dropout_backward(df, lt.drop2);
    Mat<T> dn2 = feed_forward_backward(layer.ffn, lt.ffn, df, g.ffn);
    dx += layer_norm_backward(layer.norm2, lt.norm2, dn2, g.norm2);
    Mat<T> datt = dx;
    dropout_backward(datt, lt.drop1);
    auto [dq, dkv] = attention_backward(layer.self_attn, lt.attn, datt, g.self_attn);
    dq += dkv;
    dx += layer_norm_backward(layer.norm1, lt.norm1, dq, g.norm1);
  }
  dropout_backward(dx, trace.embed_drop);
  const int L = trace.len;
  for (int b = 0; b < trace.batch; ++b)
    for (int t = 0; t < L; ++t) {
      const auto row = dx.row(b * L + t);
      grad.enc_embed.row(trace.ids[b * L + t]) += row;
      grad.enc_pos.row(t) += row;
      grad.enc_lang.row(index(trace.source_lang)) += row;
      if (trace.target_lang) grad.enc_target_lang.row(index(*trace.target_lang)) += row;
    }
}

// Encoder output head: logits = hidden * W_head^T, W_head = encoder embedding when tied.
template <typename T>
LogitsOutput<T> encoder_logits(const ModelParams<T>& p, const HiddenStates<T>& h) {
  return {h.values * p.enc_head().transpose(), h.batch, h.len};
}

template <typename T>
Mat<T> encoder_logits_backward(const ModelParams<T>& p, const HiddenStates<T>& h, const Mat<T>& d_logits,
                               ModelParams<T>& grad) {
  grad.enc_head().noalias() += d_logits.transpose() * h.values;
  return d_logits * p.enc_head();
}

// Teacher-forced decoder over a BOS-prefixed target batch.
template <typename T>
LogitsOutput<T> decode_teacher_forced(const ModelParams<T>& p, const Batch& target_in, const HiddenStates<T>& enc_out,
                                      Lang target_lang, DecoderTrace<T>* trace = nullptr, Rng* rng = nullptr) {
  const ModelConfig& c = p.config;
  detail::check_batch(target_in, c, "decode");
  if (target_in.rows() != enc_out.batch) throw InvalidInput("decode: batch size mismatch with encoder output");
  const int B = target_in.rows(), L = target_in.cols(), S = enc_out.len;
  Mat<T> x = detail::embed(p.dec_embed(), p.dec_pos, p.dec_lang, index(target_lang), target_in,
                           static_cast<const Mat<T>*>(nullptr), 0);
  if (trace) {
    trace->ids = target_in.ids();
    trace->batch = B;
    trace->len = L;
    trace->src_len = S;
    trace->target_lang = target_lang;
    trace->layers.assign(p.dec_layers.size(), {});
  }
  dropout_forward(x, c.dropout, rng, trace ? &trace->embed_drop : nullptr);
  const AttentionMask self_mask{&target_in.lengths(), true, 0};
  const AttentionMask cross_mask{&enc_out.lengths, false, 0};
  for (std::size_t l = 0; l < p.dec_layers.size(); ++l) {
    const auto& layer = p.dec_layers[l];
    DecoderLayerTrace<T>* lt = trace ? &trace->layers[l] : nullptr;
    Mat<T> a = layer_norm_forward(layer.norm1, x, lt ? &lt->norm1 : nullptr);
    Mat<T> att = attention_forward(layer.self_attn, a, a, B, L, L, c.n_heads, self_mask, lt ? &lt->self_attn : nullptr);
    dropout_forward(att, c.dropout, rng, lt ? &lt->drop1 : nullptr);
    x += att;
    Mat<T> n2 = layer_norm_forward(layer.norm2, x, lt ? &lt->norm2 : nullptr);
    Mat<T> cross = attention_forward(layer.cross_attn, n2, enc_out.values, B, L, S, c.n_heads, cross_mask,
                                     lt ? &lt->cross_attn : nullptr);
    dropout_forward(cross, c.dropout, rng, lt ? &lt->drop2 : nullptr);
    x += cross;
    Mat<T> n3 = layer_norm_forward(layer.norm3, x, lt ? &lt->norm3 : nullptr);
    Mat<T> f = feed_forward_forward(layer.ffn, n3, lt ? &lt->ffn : nullptr);
    dropout_forward(f, c.dropout, rng, lt ? &lt->drop3 : nullptr);
    x += f;
  }
  Mat<T> hidden = layer_norm_forward(p.dec_norm, x, trace ? &trace->final_norm : nullptr);
  LogitsOutput<T> out{hidden * p.dec_head().transpose(), B, L};
  if (trace) trace->hidden = std::move(hidden);
  return out;
}

// Accumulates decoder gradients; returns dLoss/d(encoder output).
template <typename T>
Mat<T> decode_backward(const ModelParams<T>& p, const DecoderTrace<T>& trace, const Mat<T>& d_logits,
                       ModelParams<T>& grad) {
  grad.dec_head().noalias() += d_logits.transpose() * trace.hidden;
  Mat<T> dhidden = d_logits * p.dec_head();
  Mat<T> dx = layer_norm_backward(p.dec_norm, trace.final_norm, dhidden, grad.dec_norm);
  Mat<T> d_enc = Mat<T>::Zero(static_cast<Eigen::Index>(trace.batch) * trace.src_len, p.config.d_model);
  for (std::size_t li = p.dec_layers.size(); li-- > 0;) {
    const auto& layer = p.dec_layers[li];
    auto& g = grad.dec_layers[li];
    const auto& lt = trace.layers[li];
    Mat<T> df = dx;
    dropout_backward(df, lt.drop3);
    Mat<T> dn3 = feed_forward_backward(layer.ffn, lt.ffn, df, g.ffn);
    dx += layer_norm_backward(layer.norm3, lt.norm3, dn3, g.norm3);
    Mat<T> dcross = dx;
    dropout_backward(dcross, lt.drop2);
    auto [dq2, dkv2] = attention_backward(layer.cross_attn, lt.cross_attn, dcross, g.cross_attn);
    d_enc += dkv2;
    dx += layer_norm_backward(layer.norm2, lt.norm2, dq2, g.norm2);
    Mat<T> datt = dx;
    dropout_backward(datt, lt.drop1);
    auto [dq, dkv] = attention_backward(layer.self_attn, lt.self_attn, datt, g.self_attn);
    dq += dkv;
    dx += layer_norm_backward(layer.norm1, lt.norm1, dq, g.norm1);
  }
  dropout_backward(dx, trace.embed_drop);
  const int L = trace.len;
  Mat<T>& embed_grad = grad.dec_embed();
  for (int b = 0; b < trace.batch; ++b)
    for (int t = 0; t < L; ++t) {
      const auto row = dx.row(b * L + t);
      embed_grad.row(trace.ids[b * L + t]) += row;
      grad.dec_pos.row(t) += row;
      grad.dec_lang.row(index(trace.target_lang)) += row;
    }
  return d_enc;
}

// ---------------------------------------------------------------------------
// Loss

struct LossValue {
  double loss = 0.0;       // mean NLL over counted positions
  std::size_t count = 0;  // number of counted positions
};

// Row r of `logits` is scored against targets[r]; negative targets are ignored.
// Writes scale * dLoss/dLogits into `d_logits` when given.
template <typename T>
LossValue cross_entropy(const Mat<T>& logits, const std::vector<int>& targets, Mat<T>* d_logits, double scale = 1.0) {
  if (static_cast<Eigen::Index>(targets.size()) != logits.rows())
    throw InvalidInput("cross_entropy: target count does not match logits rows");
  std::size_t count = 0;
  for (int t : targets) count += t >= 0;
  if (d_logits) d_logits->setZero(logits.rows(), logits.cols());
  if (count == 0) return {0.0, 0};
  double total = 0.0;
  const T g = static_cast<T>(scale / static_cast<double>(count));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int target = targets[r];
    if (target < 0) continue;
    if (target >= logits.cols()) throw InvalidInput("cross_entropy: target id out of vocabulary");
    const auto row = logits.row(r);
    const T max_v = row.maxCoeff();
    const T sum = (row.array() - max_v).exp().sum();
    const T log_z = max_v + std::log(sum);
    total += static_cast<double>(log_z - row(target));
    if (d_logits) {
      auto drow = d_logits->row(r);
      drow = ((row.array() - log_z).exp() * g).matrix();
      drow(target) -= g;
    }
  }
  if (!std::isfinite(total)) throw NumericalError("cross_entropy: non-finite loss");
  return {total / static_cast<double>(count), count};
}

// Flattened targets of a batch, padding marked -1.
inline std::vector<int> loss_targets(const Batch& targets) {
  std::vector<int> out(targets.ids().size());
  for (int b = 0; b < targets.rows(); ++b)
    for (int t = 0; t < targets.cols(); ++t) out[b * targets.cols() + t] = targets.valid(b, t) ? targets.id(b, t) : -1;
  return out;
}

template <typename T>
LossValue cross_entropy_loss(const LogitsOutput<T>& logits, const Batch& targets, Mat<T>* d_logits = nullptr) {
  if (logits.batch != targets.rows() || logits.len != targets.cols())
    throw InvalidInput("cross_entropy_loss: logits shape does not match targets");
  return cross_entropy(logits.values, loss_targets(targets), d_logits);
}

// Decoder input (BOS + z) and output (z + EOS) for a batch of sentences.
inline std::pair<Batch, Batch> decoder_io(const Batch& z) {
  std::vector<Sequence> in, out;
  in.reserve(z.rows());
  out.reserve(z.rows());
  for (int i = 0; i < z.rows(); ++i) {
    Sequence s = z.row(i);
    Sequence a{kBos};
    a.insert(a.end(), s.begin(), s.end());
    s.push_back(kEos);
    in.push_back(std::move(a));
    out.push_back(std::move(s));
  }
  return {Batch::from_sequences(in, z.language()), Batch::from_sequences(out, z.language())};
}

// ---------------------------------------------------------------------------
// Generation

struct GenerationStats {
  std::size_t encoder_passes = 0;
  std::size_t decoder_forward_calls = 0;
  std::size_t generated_tokens = 0;
};

// Position-wise argmax over valid positions; padding stays PAD.
template <typename T>
Batch argmax_batch(const LogitsOutput<T>& logits, const std::vector<int>& lengths, Lang language) {
  std::vector<Sequence> rows(logits.batch);
  for (int b = 0; b < logits.batch; ++b) {
    rows[b].resize(lengths[b]);
    for (int t = 0; t < lengths[b]; ++t) {
      Eigen::Index best;
      logits.values.row(b * logits.len + t).maxCoeff(&best);
      rows[b][t] = static_cast<int>(best);
    }
  }
  return Batch::from_sequences(rows, language);
}

// Non-autoregressive translation with the encoder: one encoder pass, then an
// independent argmax per position. Output length equals input length.
template <typename T>
Batch encoder_generate_nar(const ModelParams<T>& p, const Batch& batch, GenerationStats* stats = nullptr) {
  const Lang target = other(batch.language());
  const HiddenStates<T> h = encode(p, batch, target);
  if (stats) {
    ++stats->encoder_passes;
    stats->generated_tokens += batch.token_count();
  }
  return argmax_batch(encoder_logits(p, h), batch.lengths(), target);
}

struct GreedyOptions {
  int max_len = 0;          // 0: per-sequence min(ceil(1.5 * source length) + 2, max_positions)
  bool stop_at_eos = true;  // false forces exactly max_len steps (benchmarking)
};

inline int default_max_len(int source_len, int max_positions) {
  return std::min((3 * source_len + 1) / 2 + 2, max_positions);
}

namespace detail {

// Attention for one new query per row against the first `visible[b]` cached keys.
template <typename T>
Mat<T> attend_step(const Mat<T>& q, const Mat<T>& k, const Mat<T>& v, int stride, const std::vector<int>& visible,
                   int heads) {
  const int B = static_cast<int>(q.rows());
  const int d = static_cast<int>(q.cols());
  const int dh = d / heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  Mat<T> context(B, d);
  Eigen::Matrix<T, 1, Eigen::Dynamic> scores;
  for (int b = 0; b < B; ++b) {
    const int n = visible[b];
    for (int h = 0; h < heads; ++h) {
      const auto kb = k.block(static_cast<Eigen::Index>(b) * stride, h * dh, n, dh);
      const auto vb = v.block(static_cast<Eigen::Index>(b) * stride, h * dh, n, dh);
      scores.noalias() = (q.block(b, h * dh, 1, dh) * kb.transpose()) * scale;
      masked_softmax_row(scores, n);
      context.block(b, h * dh, 1, dh).noalias() = scores * vb;
    }
  }
  return context;
}

}  // namespace detail

// Greedy autoregressive translation with the decoder. Each generated position
// costs one incremental decoder forward over cached keys/values.
template <typename T>
Batch decoder_generate_greedy(const ModelParams<T>& p, const Batch& src, Lang target_lang, GreedyOptions options = {},
                              GenerationStats* stats = nullptr) {
  const ModelConfig& c = p.config;
  const int B = src.rows();
  if (options.max_len > c.max_positions) throw InvalidInput("greedy: max_len exceeds max_positions");
  const HiddenStates<T> enc = encode(p, src, target_lang);
  if (stats) ++stats->encoder_passes;

  std::vector<int> limit(B);
  int cap = 0;
  for (int b = 0; b < B; ++b) {
    limit[b] = options.max_len > 0 ? options.max_len : default_max_len(src.lengths()[b], c.max_positions);
    cap = std::max(cap, limit[b]);
  }
  const int d = c.d_model;
  const int S = enc.len;
  const auto n_layers = p.dec_layers.size();
  std::vector<Mat<T>> self_k(n_layers, Mat<T>(static_cast<Eigen::Index>(B) * std::max(cap, 1), d));
  std::vector<Mat<T>> self_v(n_layers, Mat<T>(static_cast<Eigen::Index>(B) * std::max(cap, 1), d));
  std::vector<Mat<T>> cross_k(n_layers), cross_v(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    cross_k[l] = linear_forward(p.dec_layers[l].cross_attn.key, enc.values);
    cross_v[l] = linear_forward(p.dec_layers[l].cross_attn.value, enc.values);
  }

  std::vector<Sequence> out(B);
  std::vector<int> current(B, kBos);
  std::vector<bool> done(B, false);
  std::vector<int> self_visible(B), cross_visible(src.lengths());
  const Mat<T>& embed = p.dec_embed();
  const Mat<T>& head = p.dec_head();
  int remaining = 0;
  for (int b = 0; b < B; ++b) {
    done[b] = limit[b] == 0;
    remaining += !done[b];
  }

  for (int t = 0; t < cap && remaining > 0; ++t) {
    Mat<T> x(B, d);
    for (int b = 0; b < B; ++b)
      x.row(b) = embed.row(current[b]) + p.dec_pos.row(t) + p.dec_lang.row(index(target_lang));
    std::fill(self_visible.begin(), self_visible.end(), t + 1);
    for (std::size_t l = 0; l < n_layers; ++l) {
      const auto& layer = p.dec_layers[l];
      Mat<T> a = layer_norm_forward<T>(layer.norm1, x, nullptr);
      Mat<T> q = linear_forward(layer.self_attn.query, a);
      Mat<T> k = linear_forward(layer.self_attn.key, a);
      Mat<T> v = linear_forward(layer.self_attn.value, a);
      for (int b = 0; b < B; ++b) {
        self_k[l].row(static_cast<Eigen::Index>(b) * cap + t) = k.row(b);
        self_v[l].row(static_cast<Eigen::Index>(b) * cap + t) = v.row(b);
      }
      x += linear_forward(layer.self_attn.output,
                          detail::attend_step<T>(q, self_k[l], self_v[l], cap, self_visible, c.n_heads));
      Mat<T> n2 = layer_norm_forward<T>(layer.norm2, x, nullptr);
      Mat<T> q2 = linear_forward(layer.cross_attn.query, n2);
      x += linear_forward(layer.cross_attn.output,
                          detail::attend_step<T>(q2, cross_k[l], cross_v[l], S, cross_visible, c.n_heads));
      Mat<T> n3 = layer_norm_forward<T>(layer.norm3, x, nullptr);
      x += feed_forward_forward<T>(layer.ffn, n3, nullptr);
    }
    Mat<T> logits = layer_norm_forward<T>(p.dec_norm, x, nullptr) * head.transpose();
    if (stats) ++stats->decoder_forward_calls;
    for (int b = 0; b < B; ++b) {
      if (done[b]) continue;
      Eigen::Index best;
      logits.row(b).maxCoeff(&best);
      const int token = static_cast<int>(best);
      if (options.stop_at_eos && token == kEos) {
        done[b] = true;
        --remaining;
        continue;
      }
      out[b].push_back(token);
      current[b] = token;
      if (static_cast<int>(out[b].size()) >= limit[b]) {
        done[b] = true;
        --remaining;
      }
    }
  }
  if (stats)
    for (const auto& s : out) stats->generated_tokens += s.size();
  return Batch::from_sequences(out, target_lang);
}

}  // namespace qbt
