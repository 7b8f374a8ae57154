#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "unisep/nn.hpp"

namespace unisep {

/// L2 norm over the gradients of all trainable parameters.
template <typename T>
double global_grad_norm(const std::vector<ad::Parameter<T>*>& ps) {
  double s = 0;
  for (const auto* p : ps) s += p->grad.template cast<double>().squaredNorm();
  return std::sqrt(s);
}

/// Rescales gradients so the global norm is at most `max_norm`; returns the
/// norm before clipping.
template <typename T>
double clip_grad_norm(const std::vector<ad::Parameter<T>*>& ps, double max_norm) {
  const double n = global_grad_norm(ps);
  if (n > max_norm && n > 0) {
    const T s = static_cast<T>(max_norm / n);
    for (auto* p : ps) p->grad *= s;
  }
  return n;
}

template <typename T>
class Adam {
 public:
  struct Moments {
    Matrix<T> m, v;
  };

  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  long steps() const { return t_; }

  void step(const std::vector<ad::Parameter<T>*>& ps) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    const T a = static_cast<T>(lr_ * std::sqrt(c2) / c1);
    const T b1 = static_cast<T>(b1_), b2 = static_cast<T>(b2_), e = static_cast<T>(eps_ * std::sqrt(c2));
    for (auto* p : ps) {
      auto& s = state_[p->name];
      if (s.m.size() == 0) {
        s.m = Matrix<T>::Zero(p->value.rows(), p->value.cols());
        s.v = Matrix<T>::Zero(p->value.rows(), p->value.cols());
      }
      s.m = b1 * s.m + (T(1) - b1) * p->grad;
      s.v = b2 * s.v + (T(1) - b2) * p->grad.cwiseAbs2();
      p->value.array() -= a * s.m.array() / (s.v.array().sqrt() + e);
    }
  }

  std::map<std::string, Moments>& state() { return state_; }
  const std::map<std::string, Moments>& state() const { return state_; }
  void set_steps(long t) { t_ = t; }

 private:
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace unisep
