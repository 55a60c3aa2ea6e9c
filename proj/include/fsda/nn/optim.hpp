#pragma once

#include <cmath>

#include "fsda/nn/params.hpp"

namespace fsda::nn {

/// SGD with momentum and L2 weight decay (decay added to the gradient, then
/// buf = m * buf + g; p -= lr * buf).
template <typename S>
class Sgd {
 public:
  Sgd() = default;
  Sgd(const ParamStore<S>& store, double momentum, double weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay), buf_(store.zero_grads()) {}

  void step(ParamStore<S>& store, const Grads<S>& grads, double lr) {
    for (int i = 0; i < store.size(); ++i) {
      Mat<S> g = grads[i];
      if (weight_decay_ != 0.0) g += S(weight_decay_) * store.value(i);
      if (momentum_ != 0.0) {
        buf_[i] = S(momentum_) * buf_[i] + g;
        store.value(i) -= S(lr) * buf_[i];
      } else {
        store.value(i) -= S(lr) * g;
      }
    }
  }

  const Grads<S>& buffers() const { return buf_; }
  Grads<S>& buffers() { return buf_; }

 private:
  double momentum_ = 0.9;
  double weight_decay_ = 0.0;
  Grads<S> buf_;
};

/// Adam with bias-corrected moments (beta1 0.9, beta2 0.999, eps 1e-8).
template <typename S>
class Adam {
 public:
  Adam() = default;
  explicit Adam(const ParamStore<S>& store, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps), m_(store.zero_grads()), v_(store.zero_grads()) {}

  void step(ParamStore<S>& store, const Grads<S>& grads, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    for (int i = 0; i < store.size(); ++i) {
      m_[i] = S(beta1_) * m_[i] + S(1 - beta1_) * grads[i];
      v_[i] = S(beta2_) * v_[i] + S(1 - beta2_) * grads[i].cwiseProduct(grads[i]);
      const auto denom = ((v_[i].array() / S(c2)).sqrt() + S(eps_));
      store.value(i).array() -= S(lr) * (m_[i].array() / S(c1)) / denom;
    }
  }

  long steps() const { return t_; }
  Grads<S>& first_moments() { return m_; }
  Grads<S>& second_moments() { return v_; }
  const Grads<S>& first_moments() const { return m_; }
  const Grads<S>& second_moments() const { return v_; }
  void set_steps(long t) { t_ = t; }

 private:
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  long t_ = 0;
  Grads<S> m_;
  Grads<S> v_;
};

}  // namespace fsda::nn
