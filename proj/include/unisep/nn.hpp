#pragma once

#include <cmath>
#include <deque>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "unisep/ops.hpp"
#include "unisep/rng.hpp"

namespace unisep::nn {

using ad::Parameter;
using ad::RowGroups;
using ad::Tape;
using ad::Var;

/// Owns all parameters of a model. Element addresses are stable.
template <typename T>
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;

  Parameter<T>* add(std::string name, Matrix<T> init, bool trainable = true) {
    for (const auto& p : params_) {
      if (p.name == name) throw Error("duplicate parameter name: " + name);
    }
    params_.emplace_back(std::move(name), std::move(init), trainable);
    return &params_.back();
  }

  std::vector<Parameter<T>*> all() {
    std::vector<Parameter<T>*> out;
    for (auto& p : params_) out.push_back(&p);
    return out;
  }

  std::vector<Parameter<T>*> trainable() {
    std::vector<Parameter<T>*> out;
    for (auto& p : params_) {
      if (p.trainable) out.push_back(&p);
    }
    return out;
  }

  Parameter<T>* find(const std::string& name) {
    for (auto& p : params_) {
      if (p.name == name) return &p;
    }
    return nullptr;
  }

  size_t count_scalars(bool trainable_only = true) const {
    size_t n = 0;
    for (const auto& p : params_) {
      if (!trainable_only || p.trainable) n += static_cast<size_t>(p.value.size());
    }
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::deque<Parameter<T>> params_;
};

template <typename T>
Matrix<T> xavier_uniform(int rows, int cols, Rng& rng, T gain = T(1)) {
  const T bound = gain * std::sqrt(T(6) / static_cast<T>(rows + cols));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(u(rng)) * bound;
  return m;
}

template <typename T>
struct Linear {
  Parameter<T>* weight = nullptr;  // in x out
  Parameter<T>* bias = nullptr;    // 1 x out

  static Linear create(ParameterSet<T>& ps, const std::string& name, int in, int out, Rng& rng,
                       T gain = T(1)) {
    Linear l;
    l.weight = ps.add(name + ".w", xavier_uniform<T>(in, out, rng, gain));
    l.bias = ps.add(name + ".b", Matrix<T>::Zero(1, out));
    return l;
  }

  Var<T> operator()(Tape<T>& t, const Var<T>& x) const {
    return ad::linear(x, t.parameter(*weight), t.parameter(*bias));
  }
};

template <typename T>
struct LayerNorm {
  Parameter<T>* gamma = nullptr;
  Parameter<T>* beta = nullptr;

  static LayerNorm create(ParameterSet<T>& ps, const std::string& name, int dim) {
    LayerNorm n;
    n.gamma = ps.add(name + ".gamma", Matrix<T>::Ones(1, dim));
    n.beta = ps.add(name + ".beta", Matrix<T>::Zero(1, dim));
    return n;
  }

  Var<T> operator()(Tape<T>& t, const Var<T>& x) const {
    return ad::layer_norm(x, t.parameter(*gamma), t.parameter(*beta));
  }
};

template <typename T>
struct MultiHeadAttention {
  Linear<T> q, k, v, o;
  int heads = 1;

  static MultiHeadAttention create(ParameterSet<T>& ps, const std::string& name, int dim, int heads,
                                   Rng& rng) {
    if (heads <= 0 || dim % heads != 0) throw Error(name + ": head count must divide D");
    MultiHeadAttention m;
    m.q = Linear<T>::create(ps, name + ".q", dim, dim, rng);
    m.k = Linear<T>::create(ps, name + ".k", dim, dim, rng);
    m.v = Linear<T>::create(ps, name + ".v", dim, dim, rng);
    m.o = Linear<T>::create(ps, name + ".o", dim, dim, rng);
    m.heads = heads;
    return m;
  }

  Var<T> operator()(Tape<T>& t, const Var<T>& query, const Var<T>& keyval, const RowGroups& qg,
                    const RowGroups& kg) const {
    Var<T> qq = q(t, query);
    Var<T> kk = k(t, keyval);
    Var<T> vv = v(t, keyval);
    return o(t, ad::attention(qq, kk, vv, heads, qg, kg));
  }
};

template <typename T>
struct FeedForward {
  Linear<T> up, down;

  static FeedForward create(ParameterSet<T>& ps, const std::string& name, int dim, int hidden, Rng& rng) {
    FeedForward f;
    f.up = Linear<T>::create(ps, name + ".up", dim, hidden, rng);
    f.down = Linear<T>::create(ps, name + ".down", hidden, dim, rng);
    return f;
  }

  Var<T> operator()(Tape<T>& t, const Var<T>& x) const { return down(t, ad::relu(up(t, x))); }
};

/// Pre-norm transformer block without positional terms:
/// x + MHA(LN(x)), then + FFN(LN(.)). Attention runs inside the row groups.
template <typename T>
struct TransformerBlock {
  LayerNorm<T> norm_attn, norm_ff;
  MultiHeadAttention<T> attn;
  FeedForward<T> ff;

  static TransformerBlock create(ParameterSet<T>& ps, const std::string& name, int dim, int heads,
                                 int ff_hidden, Rng& rng) {
    TransformerBlock b;
    b.norm_attn = LayerNorm<T>::create(ps, name + ".ln1", dim);
    b.attn = MultiHeadAttention<T>::create(ps, name + ".attn", dim, heads, rng);
    b.norm_ff = LayerNorm<T>::create(ps, name + ".ln2", dim);
    b.ff = FeedForward<T>::create(ps, name + ".ff", dim, ff_hidden, rng);
    return b;
  }

  Var<T> operator()(Tape<T>& t, const Var<T>& x, const RowGroups& groups) const {
    Var<T> h = norm_attn(t, x);
    Var<T> y = ad::add(x, attn(t, h, h, groups, groups));
    return ad::add(y, ff(t, norm_ff(t, y)));
  }
};

/// Single-layer LSTM with gates in (input, forget, cell, output) order.
template <typename T>
struct Lstm {
  Parameter<T>* w_input = nullptr;   // in x 4H
  Parameter<T>* w_hidden = nullptr;  // H x 4H
  Parameter<T>* bias = nullptr;      // 1 x 4H
  int hidden = 0;

  static Lstm create(ParameterSet<T>& ps, const std::string& name, int in, int hidden, Rng& rng) {
    Lstm l;
    l.hidden = hidden;
    l.w_input = ps.add(name + ".wx", xavier_uniform<T>(in, 4 * hidden, rng));
    l.w_hidden = ps.add(name + ".wh", xavier_uniform<T>(hidden, 4 * hidden, rng));
    Matrix<T> b = Matrix<T>::Zero(1, 4 * hidden);
    b.middleCols(hidden, hidden).setOnes();  // forget-gate bias
    l.bias = ps.add(name + ".b", std::move(b));
    return l;
  }

  /// One step given the precomputed input projection x*Wx + b (1 x 4H).
  std::pair<Var<T>, Var<T>> step(Tape<T>& t, const Var<T>& x_proj, const Var<T>& h, const Var<T>& c) const {
    Var<T> gates = ad::add(x_proj, ad::matmul(h, t.parameter(*w_hidden)));
    Var<T> hc = ad::lstm_pointwise(gates, c);
    return {ad::slice_cols(hc, 0, hidden), ad::slice_cols(hc, hidden, hidden)};
  }

  /// Input projection for all rows of x at once.
  Var<T> project(Tape<T>& t, const Var<T>& x) const {
    return ad::linear(x, t.parameter(*w_input), t.parameter(*bias));
  }
};

}  // namespace unisep::nn
