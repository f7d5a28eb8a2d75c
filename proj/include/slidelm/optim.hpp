#pragma once

// AdamW with decoupled weight decay, global-norm gradient clipping, and the
// warmup + cosine decay learning-rate schedule.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "slidelm/tensor.hpp"

namespace slidelm::nn {

struct LrSchedule {
  double base_lr = 2e-4;
  int64_t warmup_steps = 2000;
  int64_t total_steps = 24000;
};

// Linear ramp to base_lr over warmup, then cosine decay to 0 at total_steps.
inline double cosine_lr(int64_t step, const LrSchedule& sched) {
  if (step < 0) throw std::invalid_argument("cosine_lr: negative step");
  if (sched.warmup_steps > 0 && step < sched.warmup_steps)
    return sched.base_lr * static_cast<double>(step) /
           static_cast<double>(sched.warmup_steps);
  if (step >= sched.total_steps) return 0.0;
  const double progress =
      static_cast<double>(step - sched.warmup_steps) /
      static_cast<double>(sched.total_steps - sched.warmup_steps);
  return sched.base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

// Scales all gradients by max_norm/norm when the global l2 norm exceeds
// max_norm. Returns the applied scale factor.
template <class S>
double clip_grad_norm(std::vector<Tensor<S>>& params, double max_norm) {
  if (!(max_norm > 0)) throw std::invalid_argument("clip_grad_norm: max_norm <= 0");
  double sq = 0;
  for (auto& p : params) {
    if (!p.requires_grad()) continue;
    const S* g = p.grad();
    for (int64_t i = 0; i < p.numel(); ++i)
      sq += static_cast<double>(g[i]) * static_cast<double>(g[i]);
  }
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return 1.0;
  const double scale = max_norm / norm;
  for (auto& p : params) {
    if (!p.requires_grad()) continue;
    S* g = p.grad();
    for (int64_t i = 0; i < p.numel(); ++i) g[i] = static_cast<S>(g[i] * scale);
  }
  return scale;
}

template <class S>
double grad_global_norm(const std::vector<Tensor<S>>& params) {
  double sq = 0;
  for (const auto& p : params) {
    if (!p.requires_grad()) continue;
    const S* g = p.grad();
    for (int64_t i = 0; i < p.numel(); ++i)
      sq += static_cast<double>(g[i]) * static_cast<double>(g[i]);
  }
  return std::sqrt(sq);
}

template <class S>
class AdamW {
 public:
  AdamW() = default;
  AdamW(double beta1, double beta2, double eps, double weight_decay)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  void register_params(const std::vector<Tensor<S>>& params) {
    m_.clear();
    v_.clear();
    for (const auto& p : params) {
      m_.emplace_back(static_cast<size_t>(p.numel()), S(0));
      v_.emplace_back(static_cast<size_t>(p.numel()), S(0));
    }
    step_count_ = 0;
  }

  // One decoupled-weight-decay update with bias correction at learning rate lr.
  void step(std::vector<Tensor<S>>& params, double lr) {
    if (params.size() != m_.size())
      throw std::invalid_argument("adamw: parameter set does not match state");
    ++step_count_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
    for (size_t k = 0; k < params.size(); ++k) {
      auto& p = params[k];
      if (!p.requires_grad()) continue;
      if (static_cast<int64_t>(m_[k].size()) != p.numel())
        throw std::invalid_argument("adamw: moment shape mismatch");
      S* w = p.data();
      const S* g = p.grad();
      S* m = m_[k].data();
      S* v = v_[k].data();
      for (int64_t i = 0; i < p.numel(); ++i) {
        const double gi = static_cast<double>(g[i]);
        const double mi = beta1_ * static_cast<double>(m[i]) + (1.0 - beta1_) * gi;
        const double vi = beta2_ * static_cast<double>(v[i]) + (1.0 - beta2_) * gi * gi;
        m[i] = static_cast<S>(mi);
        v[i] = static_cast<S>(vi);
        const double mhat = mi / bc1;
        const double vhat = vi / bc2;
        double wi = static_cast<double>(w[i]);
        wi -= lr * weight_decay_ * wi;
        wi -= lr * mhat / (std::sqrt(vhat) + eps_);
        w[i] = static_cast<S>(wi);
      }
    }
  }

  int64_t step_count() const { return step_count_; }
  void set_step_count(int64_t c) { step_count_ = c; }
  std::vector<std::vector<S>>& moments_m() { return m_; }
  std::vector<std::vector<S>>& moments_v() { return v_; }
  double beta1() const { return beta1_; }
  double beta2() const { return beta2_; }
  double weight_decay() const { return weight_decay_; }

 private:
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  double weight_decay_ = 1e-6;
  int64_t step_count_ = 0;
  std::vector<std::vector<S>> m_;
  std::vector<std::vector<S>> v_;
};

}  // namespace slidelm::nn
