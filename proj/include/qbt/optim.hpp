#pragma once

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "qbt/model.hpp"

namespace qbt {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-8;
};

// Bias-corrected Adam update of one contiguous block; `step` is 1-based.
template <typename T>
void adam_update(T* param, const T* grad, T* m, T* v, std::size_t n, long step, const AdamConfig& hp) {
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(step));
  const T b1 = static_cast<T>(hp.beta1), b2 = static_cast<T>(hp.beta2);
  const T lr = static_cast<T>(hp.lr), eps = static_cast<T>(hp.epsilon);
  const T inv_c1 = static_cast<T>(1.0 / c1), inv_c2 = static_cast<T>(1.0 / c2);
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = b1 * m[i] + (T(1) - b1) * grad[i];
    v[i] = b2 * v[i] + (T(1) - b2) * grad[i] * grad[i];
    param[i] -= lr * (m[i] * inv_c1) / (std::sqrt(v[i] * inv_c2) + eps);
  }
}

// Which parameters an optimizer step may touch.
struct FreezeMask {
  bool encoder_trainable = true;
  bool decoder_trainable = true;
  std::set<std::string> frozen_names;  // additional individually frozen tensors

  static FreezeMask all() { return {}; }
  static FreezeMask encoder_only() { return {true, false, {}}; }
  static FreezeMask decoder_only() { return {false, true, {}}; }

  bool trainable(const std::string& name, ParamGroup group) const {
    if (frozen_names.count(name)) return false;
    return group == ParamGroup::Encoder ? encoder_trainable : decoder_trainable;
  }
};

template <typename T>
struct OptimizerState {
  AdamConfig hp;
  long step = 0;
  ModelParams<T> m;
  ModelParams<T> v;

  OptimizerState() = default;
  OptimizerState(const ModelConfig& config, AdamConfig hp_) : hp(hp_), m(ModelParams<T>::zeros(config)), v(ModelParams<T>::zeros(config)) {}
};

namespace detail {

template <typename T>
std::vector<Mat<T>*> tensor_pointers(ModelParams<T>& p) {
  std::vector<Mat<T>*> out;
  for_each_tensor(p, [&](const std::string&, ParamGroup, Mat<T>& m) { out.push_back(&m); });
  return out;
}

}  // namespace detail

// One Adam step over the trainable tensors. Frozen tensors (and their moments)
// are left bitwise untouched. A non-finite gradient in any trainable tensor
// aborts the whole step before anything is modified.
template <typename T>
void adam_step(ModelParams<T>& params, ModelParams<T>& grads, OptimizerState<T>& state, const FreezeMask& mask) {
  struct Entry {
    std::string name;
    ParamGroup group;
    Mat<T>* param;
  };
  std::vector<Entry> entries;
  for_each_tensor(params, [&](const std::string& name, ParamGroup g, Mat<T>& m) { entries.push_back({name, g, &m}); });
  auto grad_ptrs = detail::tensor_pointers(grads);
  auto m_ptrs = detail::tensor_pointers(state.m);
  auto v_ptrs = detail::tensor_pointers(state.v);
  if (grad_ptrs.size() != entries.size() || m_ptrs.size() != entries.size())
    throw InvalidInput("adam_step: parameter/gradient layouts differ");

  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!mask.trainable(entries[i].name, entries[i].group)) continue;
    if (!grad_ptrs[i]->allFinite()) throw NumericalError("adam_step: non-finite gradient in " + entries[i].name);
  }
  ++state.step;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!mask.trainable(entries[i].name, entries[i].group)) continue;
    Mat<T>& p = *entries[i].param;
    adam_update(p.data(), grad_ptrs[i]->data(), m_ptrs[i]->data(), v_ptrs[i]->data(), static_cast<std::size_t>(p.size()),
                state.step, state.hp);
  }
}

template <typename T>
void zero_grads(ModelParams<T>& grads) {
  for_each_tensor(grads, [](const std::string&, ParamGroup, Mat<T>& m) { m.setZero(); });
}

}  // namespace qbt
