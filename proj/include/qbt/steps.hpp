#pragma once

// Single training steps: BT, EBT, EBTD, DAE and the random-pair encoder warmup.
//
// Every step follows the same pattern: an optional no-gradient generation
// phase producing pseudo sources, a traced forward/backward pass against the
// real monolingual batch, and one Adam update restricted to the step's
// trainable group.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "qbt/model.hpp"
#include "qbt/optim.hpp"

namespace qbt {

enum class StepKind { Warmup, Dae, Ebt, Ebtd, Bt };

inline std::string_view to_string(StepKind k) {
  switch (k) {
    case StepKind::Warmup: return "WARMUP";
    case StepKind::Dae: return "DAE";
    case StepKind::Ebt: return "EBT";
    case StepKind::Ebtd: return "EBTD";
    case StepKind::Bt: return "BT";
  }
  return "?";
}

inline FreezeMask trainable_set(StepKind k) {
  switch (k) {
    case StepKind::Warmup:
    case StepKind::Ebt: return FreezeMask::encoder_only();
    case StepKind::Ebtd: return FreezeMask::decoder_only();
    case StepKind::Dae:
    case StepKind::Bt: return FreezeMask::all();
  }
  return FreezeMask::all();
}

// Inverse-NLL penalty against copying the source during EBT.
struct CopyPenaltyConfig {
  bool enabled = false;
  double weight = 0.05;
  double epsilon = 0.1;

  void validate() const {
    if (weight < 0) throw ConfigError("copy penalty weight must be >= 0");
    if (epsilon <= 0) throw ConfigError("copy penalty epsilon must be > 0");
  }
};

// penalty = weight / (copy_nll + epsilon)
inline double copy_penalty(double copy_nll, const CopyPenaltyConfig& c) { return c.weight / (copy_nll + c.epsilon); }
inline double copy_penalty_slope(double copy_nll, const CopyPenaltyConfig& c) {
  const double denom = copy_nll + c.epsilon;
  return -c.weight / (denom * denom);
}

struct NoiseConfig {
  double drop_prob = 0.1;
  int shuffle_window = 3;
};

struct StepRecord {
  StepKind kind = StepKind::Bt;
  Lang language = Lang::S;  // language of the real batch z
  double loss = 0.0;        // total objective, including any penalty
  double penalty = 0.0;
  std::size_t sequences = 0;
  std::size_t tokens = 0;
  std::size_t skipped = 0;  // pairs dropped because generation produced nothing
};

// Mutable training state: parameters, gradient buffer, optimizer, dropout rng.
template <typename T>
struct TrainState {
  ModelParams<T> params;
  ModelParams<T> grads;
  OptimizerState<T> optimizer;
  Rng rng;
  bool dropout = true;

  TrainState(ModelParams<T> p, AdamConfig hp, std::uint64_t seed)
      : params(std::move(p)), grads(ModelParams<T>::zeros(params.config)), optimizer(params.config, hp), rng(seed) {}

  Rng* dropout_rng() { return dropout ? &rng : nullptr; }
};

enum class GradScope { Full, DecoderOnly };

// Teacher-forced src -> z pass through the full model; accumulates gradients
// into state.grads. With DecoderOnly the encoder runs untraced.
template <typename T>
LossValue translation_loss(TrainState<T>& state, const Batch& src, const Batch& z, GradScope scope) {
  const auto& p = state.params;
  EncoderTrace<T> enc_trace;
  const bool full = scope == GradScope::Full;
  const HiddenStates<T> enc = encode(p, src, z.language(), full ? &enc_trace : nullptr, full ? state.dropout_rng() : nullptr);
  const auto [dec_in, dec_out] = decoder_io(z);
  DecoderTrace<T> dec_trace;
  const LogitsOutput<T> logits = decode_teacher_forced(p, dec_in, enc, z.language(), &dec_trace, state.dropout_rng());
  Mat<T> d_logits;
  const LossValue loss = cross_entropy_loss(logits, dec_out, &d_logits);
  Mat<T> d_enc = decode_backward(p, dec_trace, d_logits, state.grads);
  if (full) encode_backward(p, enc_trace, d_enc, state.grads);
  return loss;
}

namespace detail {

template <typename T>
StepRecord finish_step(TrainState<T>& state, StepKind kind, const Batch& z, double loss) {
  adam_step(state.params, state.grads, state.optimizer, trainable_set(kind));
  StepRecord r;
  r.kind = kind;
  r.language = z.language();
  r.loss = loss;
  r.sequences = static_cast<std::size_t>(z.rows());
  r.tokens = z.token_count();
  return r;
}

inline void check_nonempty(const Batch& z, const char* what) {
  if (z.rows() == 0) throw InvalidInput(std::string(what) + ": empty batch");
  for (int len : z.lengths())
    if (len == 0) throw InvalidInput(std::string(what) + ": batch contains an empty sentence");
}

}  // namespace detail

// Back-translation: greedy-decode z into the other language without gradients,
// then train pseudo-source -> z through all parameters.
template <typename T>
StepRecord bt_step(TrainState<T>& state, const Batch& z, GenerationStats* stats = nullptr) {
  detail::check_nonempty(z, "bt_step");
  const Batch generated = decoder_generate_greedy(state.params, z, other(z.language()), {}, stats);
  std::vector<Sequence> src_rows, tgt_rows;
  for (int i = 0; i < z.rows(); ++i) {
    if (generated.lengths()[i] == 0) continue;
    src_rows.push_back(generated.row(i));
    tgt_rows.push_back(z.row(i));
  }
  StepRecord r;
  r.kind = StepKind::Bt;
  r.language = z.language();
  r.skipped = static_cast<std::size_t>(z.rows()) - src_rows.size();
  if (src_rows.empty()) return r;
  const Batch src = Batch::from_sequences(src_rows, other(z.language()));
  const Batch tgt = Batch::from_sequences(tgt_rows, z.language());
  zero_grads(state.grads);
  const LossValue loss = translation_loss(state, src, tgt, GradScope::Full);
  const std::size_t skipped = r.skipped;
  r = detail::finish_step(state, StepKind::Bt, tgt, loss.loss);
  r.skipped = skipped;
  return r;
}

// Encoder back-translation: z' = NAR(z); the encoder then predicts z from z'.
// Only the encoder and its embedding are updated.
template <typename T>
StepRecord ebt_step(TrainState<T>& state, const Batch& z, const CopyPenaltyConfig& penalty = {}) {
  detail::check_nonempty(z, "ebt_step");
  const auto& p = state.params;
  zero_grads(state.grads);

  // Generation pass: deterministic (no dropout). It is traced only when the
  // copy penalty needs gradients through it.
  EncoderTrace<T> gen_trace;
  const HiddenStates<T> gen_hidden = encode(p, z, other(z.language()), penalty.enabled ? &gen_trace : nullptr);
  const LogitsOutput<T> gen_logits = encoder_logits(p, gen_hidden);
  const Batch z_prime = argmax_batch(gen_logits, z.lengths(), other(z.language()));

  EncoderTrace<T> trace;
  const HiddenStates<T> hidden = encode(p, z_prime, z.language(), &trace, state.dropout_rng());
  const LogitsOutput<T> logits = encoder_logits(p, hidden);
  Mat<T> d_logits;
  const LossValue rec = cross_entropy_loss(logits, z, &d_logits);
  encode_backward(p, trace, encoder_logits_backward(p, hidden, d_logits, state.grads), state.grads);

  double pen = 0.0;
  if (penalty.enabled) {
    // NLL of the generation distribution against the source itself.
    const LossValue copy = cross_entropy_loss(gen_logits, z);
    pen = copy_penalty(copy.loss, penalty);
    Mat<T> d_gen;
    cross_entropy(gen_logits.values, loss_targets(z), &d_gen, copy_penalty_slope(copy.loss, penalty));
    encode_backward(p, gen_trace, encoder_logits_backward(p, gen_hidden, d_gen, state.grads), state.grads);
  }
  StepRecord r = detail::finish_step(state, StepKind::Ebt, z, rec.loss + pen);
  r.penalty = pen;
  return r;
}

// Encoder back-translated distillation: z' = NAR(z); the full model is run
// z' -> z but only the decoder and its embedding are updated.
template <typename T>
StepRecord ebtd_step(TrainState<T>& state, const Batch& z, GenerationStats* stats = nullptr) {
  detail::check_nonempty(z, "ebtd_step");
  const Batch z_prime = encoder_generate_nar(state.params, z, stats);
  zero_grads(state.grads);
  const LossValue loss = translation_loss(state, z_prime, z, GradScope::DecoderOnly);
  return detail::finish_step(state, StepKind::Ebtd, z, loss.loss);
}

// Token dropout then bounded local shuffle: position i moves to the rank of
// i + U[0, shuffle_window). Keeps at least one token.
inline Sequence corrupt(const Sequence& s, const NoiseConfig& noise, Rng& rng) {
  std::bernoulli_distribution drop(noise.drop_prob);
  Sequence kept;
  for (int id : s)
    if (noise.drop_prob <= 0.0 || !drop(rng)) kept.push_back(id);
  if (kept.empty() && !s.empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, s.size() - 1);
    kept.push_back(s[pick(rng)]);
  }
  if (noise.shuffle_window <= 1) return kept;
  std::uniform_real_distribution<double> jitter(0.0, static_cast<double>(noise.shuffle_window));
  std::vector<std::pair<double, int>> keyed(kept.size());
  for (std::size_t i = 0; i < kept.size(); ++i) keyed[i] = {static_cast<double>(i) + jitter(rng), kept[i]};
  std::stable_sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t i = 0; i < kept.size(); ++i) kept[i] = keyed[i].second;
  return kept;
}

// Denoising autoencoding: reconstruct z from a corrupted copy, all parameters.
template <typename T>
StepRecord dae_step(TrainState<T>& state, const Batch& z, const NoiseConfig& noise) {
  detail::check_nonempty(z, "dae_step");
  std::vector<Sequence> noisy;
  noisy.reserve(z.rows());
  for (int i = 0; i < z.rows(); ++i) noisy.push_back(corrupt(z.row(i), noise, state.rng));
  const Batch src = Batch::from_sequences(noisy, z.language());
  zero_grads(state.grads);
  // The encoder sees the corrupted sentence tagged with its own language.
  const auto& p = state.params;
  EncoderTrace<T> enc_trace;
  const HiddenStates<T> enc = encode(p, src, z.language(), &enc_trace, state.dropout_rng());
  const auto [dec_in, dec_out] = decoder_io(z);
  DecoderTrace<T> dec_trace;
  const LogitsOutput<T> logits = decode_teacher_forced(p, dec_in, enc, z.language(), &dec_trace, state.dropout_rng());
  Mat<T> d_logits;
  const LossValue loss = cross_entropy_loss(logits, dec_out, &d_logits);
  encode_backward(p, enc_trace, decode_backward(p, dec_trace, d_logits, state.grads), state.grads);
  return detail::finish_step(state, StepKind::Dae, z, loss.loss);
}

// Truncates each (x, y) pair to the shorter of the two lengths.
inline std::pair<Batch, Batch> truncate_pairs(const Batch& x, const Batch& y) {
  if (x.rows() != y.rows()) throw InvalidInput("truncate_pairs: batch sizes differ");
  std::vector<Sequence> xs, ys;
  for (int i = 0; i < x.rows(); ++i) {
    const int n = std::min(x.lengths()[i], y.lengths()[i]);
    Sequence a = x.row(i), b = y.row(i);
    a.resize(n);
    b.resize(n);
    xs.push_back(std::move(a));
    ys.push_back(std::move(b));
  }
  return {Batch::from_sequences(xs, x.language()), Batch::from_sequences(ys, y.language())};
}

// Encoder warmup on randomly paired sentences x (source) and y (other language).
template <typename T>
StepRecord warmup_step(TrainState<T>& state, const Batch& x, const Batch& y) {
  detail::check_nonempty(x, "warmup_step");
  detail::check_nonempty(y, "warmup_step");
  if (x.language() == y.language()) throw InvalidInput("warmup_step: pairs must span both languages");
  const auto [xs, ys] = truncate_pairs(x, y);
  const auto& p = state.params;
  zero_grads(state.grads);
  EncoderTrace<T> trace;
  const HiddenStates<T> hidden = encode(p, xs, ys.language(), &trace, state.dropout_rng());
  Mat<T> d_logits;
  const LossValue loss = cross_entropy_loss(encoder_logits(p, hidden), ys, &d_logits);
  encode_backward(p, trace, encoder_logits_backward(p, hidden, d_logits, state.grads), state.grads);
  StepRecord r = detail::finish_step(state, StepKind::Warmup, xs, loss.loss);
  return r;
}

}  // namespace qbt
