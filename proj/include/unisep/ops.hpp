#pragma once

// Differentiable operations on `ad::Var`. Forward values are computed eagerly;
// each op registers a closure that maps the output gradient to its inputs.
// Closures capture node handles, never references into the tape, because the
// tape's storage may move while the forward pass is still recording.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include "unisep/autograd.hpp"

namespace unisep::ad {

namespace detail {
template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
}
}  // namespace detail

namespace detail {
template <typename T>
Matrix<T> product(const Tape<T>& t, const Matrix<T>& a, const Matrix<T>& b) {
  const Eigen::Index rb = t.row_block();
  if (rb <= 0 || a.rows() <= rb || a.rows() % rb != 0) return a * b;
  Matrix<T> v(a.rows(), b.cols());
  for (Eigen::Index r = 0; r < a.rows(); r += rb) v.middleRows(r, rb).noalias() = a.middleRows(r, rb) * b;
  return v;
}
}  // namespace detail

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimension mismatch");
  Tape<T>* t = a.tape();
  Matrix<T> v = detail::product(*t, a.value(), b.value());
  return t->record(std::move(v), {a, b}, [t, a, b](const Matrix<T>& g) {
    t->accumulate(a, g * b.value().transpose());
    t->accumulate(b, a.value().transpose() * g);
  });
}

/// a * b^T.
template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_nt: inner dimension mismatch");
  Tape<T>* t = a.tape();
  Matrix<T> v = a.value() * b.value().transpose();
  return t->record(std::move(v), {a, b}, [t, a, b](const Matrix<T>& g) {
    t->accumulate(a, g * b.value());
    t->accumulate(b, g.transpose() * a.value());
  });
}

/// x[P x in] * w[in x out] + bias[1 x out].
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
  if (x.cols() != w.rows() || bias.cols() != w.cols() || bias.rows() != 1) {
    throw ShapeError("linear: shape mismatch");
  }
  Tape<T>* t = x.tape();
  Matrix<T> v = detail::product(*t, x.value(), w.value());
  v.rowwise() += bias.value().row(0);
  return t->record(std::move(v), {x, w, bias}, [t, x, w, bias](const Matrix<T>& g) {
    t->accumulate(x, g * w.value().transpose());
    t->accumulate(w, x.value().transpose() * g);
    t->accumulate(bias, g.colwise().sum());
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "add");
  Tape<T>* t = a.tape();
  return t->record(a.value() + b.value(), {a, b}, [t, a, b](const Matrix<T>& g) {
    t->accumulate(a, g);
    t->accumulate(b, g);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "sub");
  Tape<T>* t = a.tape();
  return t->record(a.value() - b.value(), {a, b}, [t, a, b](const Matrix<T>& g) {
    t->accumulate(a, g);
    t->accumulate(b, -g);
  });
}

/// Element-wise product.
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "mul");
  Tape<T>* t = a.tape();
  Matrix<T> v = a.value().cwiseProduct(b.value());
  return t->record(std::move(v), {a, b}, [t, a, b](const Matrix<T>& g) {
    t->accumulate(a, g.cwiseProduct(b.value()));
    t->accumulate(b, g.cwiseProduct(a.value()));
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tape<T>* t = a.tape();
  return t->record(a.value() * s, {a}, [t, a, s](const Matrix<T>& g) { t->accumulate(a, g * s); });
}

/// Sum of scalars (1x1 vars) with weights.
template <typename T>
Var<T> weighted_scalar_sum(const std::vector<Var<T>>& xs, const std::vector<T>& w) {
  if (xs.empty() || xs.size() != w.size()) throw ShapeError("weighted_scalar_sum: size mismatch");
  Tape<T>* t = xs.front().tape();
  T acc = 0;
  for (size_t i = 0; i < xs.size(); ++i) acc += w[i] * xs[i].item();
  Matrix<T> v(1, 1);
  v(0, 0) = acc;
  return t->record(std::move(v), xs, [t, xs, w](const Matrix<T>& g) {
    for (size_t i = 0; i < xs.size(); ++i) t->accumulate(xs[i], g * w[i]);
  });
}

/// x[P x D] scaled row-wise by r[1 x D].
template <typename T>
Var<T> mul_row(const Var<T>& x, const Var<T>& r) {
  if (r.rows() != 1 || r.cols() != x.cols()) throw ShapeError("mul_row: shape mismatch");
  Tape<T>* t = x.tape();
  Matrix<T> v = x.value().array().rowwise() * r.value().row(0).array();
  return t->record(std::move(v), {x, r}, [t, x, r](const Matrix<T>& g) {
    t->accumulate(x, (g.array().rowwise() * r.value().row(0).array()).matrix());
    t->accumulate(r, g.cwiseProduct(x.value()).colwise().sum());
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tape<T>* t = x.tape();
  Matrix<T> v = x.value().cwiseMax(T(0));
  return t->record(std::move(v), {x}, [t, x](const Matrix<T>& g) {
    t->accumulate(x, (x.value().array() > T(0)).select(g, T(0)).matrix());
  });
}

/// Parametric ReLU with one shared slope (alpha is 1x1).
template <typename T>
Var<T> prelu(const Var<T>& x, const Var<T>& alpha) {
  if (alpha.rows() != 1 || alpha.cols() != 1) throw ShapeError("prelu: alpha must be 1x1");
  Tape<T>* t = x.tape();
  const T a = alpha.item();
  Matrix<T> v = (x.value().array() > T(0)).select(x.value(), x.value() * a);
  return t->record(std::move(v), {x, alpha}, [t, x, alpha](const Matrix<T>& g) {
    const T a = alpha.item();
    const auto pos = x.value().array() > T(0);
    t->accumulate(x, pos.select(g, g * a).matrix());
    Matrix<T> ga(1, 1);
    ga(0, 0) = pos.select(Matrix<T>::Zero(g.rows(), g.cols()), g.cwiseProduct(x.value())).sum();
    t->accumulate(alpha, ga);
  });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  Tape<T>* t = x.tape();
  Matrix<T> v = x.value().array().tanh().matrix();
  return t->record_with_output(std::move(v), {x}, [t, x](const Matrix<T>& g, const Matrix<T>& y) {
    t->accumulate(x, g.cwiseProduct((T(1) - y.array().square()).matrix()));
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tape<T>* t = x.tape();
  Matrix<T> v = (T(1) / (T(1) + (-x.value().array()).exp())).matrix();
  return t->record_with_output(std::move(v), {x}, [t, x](const Matrix<T>& g, const Matrix<T>& y) {
    t->accumulate(x, g.cwiseProduct((y.array() * (T(1) - y.array())).matrix()));
  });
}

/// Row-wise layer normalization with affine gain/bias (both 1 x D).
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
  const Eigen::Index P = x.rows(), D = x.cols();
  if (gamma.cols() != D || beta.cols() != D) throw ShapeError("layer_norm: shape mismatch");
  Tape<T>* t = x.tape();
  auto xhat = std::make_shared<Matrix<T>>(P, D);
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(P));
  Matrix<T> v(P, D);
  const auto& xv = x.value();
  for (Eigen::Index i = 0; i < P; ++i) {
    const T mean = xv.row(i).mean();
    const T var = (xv.row(i).array() - mean).square().mean();
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[static_cast<size_t>(i)] = is;
    xhat->row(i) = (xv.row(i).array() - mean) * is;
  }
  v = (xhat->array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
  return t->record(std::move(v), {x, gamma, beta}, [t, x, gamma, beta, xhat, inv_std](const Matrix<T>& g) {
    t->accumulate(gamma, g.cwiseProduct(*xhat).colwise().sum());
    t->accumulate(beta, g.colwise().sum());
    if (Matrix<T>* gx = t->grad_buffer(x)) {
      const Eigen::Index P = g.rows();
      const Eigen::Index D = g.cols();
      Matrix<T> gxhat = g.array().rowwise() * gamma.value().row(0).array();
      for (Eigen::Index i = 0; i < P; ++i) {
        const T m1 = gxhat.row(i).mean();
        const T m2 = gxhat.row(i).cwiseProduct(xhat->row(i)).sum() / static_cast<T>(D);
        gx->row(i).array() +=
            (gxhat.row(i).array() - m1 - xhat->row(i).array() * m2) * (*inv_std)[static_cast<size_t>(i)];
      }
    }
  });
}

/// Grouping of rows for attention. Rows `order[g*size .. (g+1)*size)` form
/// group g; attention runs independently inside each group.
struct RowGroups {
  std::vector<int> order;
  int size = 0;
  int count() const { return size == 0 ? 0 : static_cast<int>(order.size()) / size; }
};

inline RowGroups contiguous_groups(int total_rows, int group_size) {
  RowGroups g;
  g.size = group_size;
  g.order.resize(static_cast<size_t>(total_rows));
  for (int i = 0; i < total_rows; ++i) g.order[static_cast<size_t>(i)] = i;
  return g;
}

namespace detail {

/// Key groups up to this size take the order-independent path below.
inline constexpr int kCanonicalGroup = 8;

/// Softmax over each row of S (in place) and O = S * V, where every sum runs
/// over keys sorted by (score, value row). The result is then bitwise
/// independent of the order in which keys arrive, which keeps the
/// cross-channel path exactly equivariant to reordering the sources.
template <typename T, typename VB, typename OB>
void canonical_softmax_mix(Matrix<T>& S, const VB& V, OB O) {
  const Eigen::Index nk = S.cols();
  std::array<int, kCanonicalGroup> idx{};
  for (Eigen::Index i = 0; i < S.rows(); ++i) {
    for (int j = 0; j < nk; ++j) idx[static_cast<size_t>(j)] = j;
    std::sort(idx.begin(), idx.begin() + nk, [&](int a, int b) {
      if (S(i, a) != S(i, b)) return S(i, a) < S(i, b);
      for (Eigen::Index d = 0; d < V.cols(); ++d) {
        if (V(a, d) != V(b, d)) return V(a, d) < V(b, d);
      }
      return false;
    });
    const T m = S(i, idx[static_cast<size_t>(nk - 1)]);
    T denom = 0;
    for (int r = 0; r < nk; ++r) {
      const int j = idx[static_cast<size_t>(r)];
      S(i, j) = std::exp(S(i, j) - m);
      denom += S(i, j);
    }
    for (int j = 0; j < nk; ++j) S(i, j) /= denom;
    for (Eigen::Index d = 0; d < V.cols(); ++d) {
      T acc = 0;
      for (int r = 0; r < nk; ++r) {
        const int j = idx[static_cast<size_t>(r)];
        acc += S(i, j) * V(j, d);
      }
      O(i, d) = acc;
    }
  }
}

}  // namespace detail

/// Scaled dot-product multi-head attention on already-projected Q, K, V.
/// Query group q and key group q are paired; both groupings must have the
/// same group count. No masking and no positional terms.
template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads, const RowGroups& qg,
                 const RowGroups& kg) {
  const Eigen::Index D = q.cols();
  if (k.cols() != D || v.cols() != D || k.rows() != v.rows()) throw ShapeError("attention: shape mismatch");
  if (heads <= 0 || D % heads != 0) throw ShapeError("attention: head count must divide D");
  if (qg.count() != kg.count()) throw ShapeError("attention: group count mismatch");
  if (static_cast<Eigen::Index>(qg.order.size()) != q.rows() ||
      static_cast<Eigen::Index>(kg.order.size()) != k.rows()) {
    throw ShapeError("attention: grouping does not cover all rows");
  }
  Tape<T>* t = q.tape();
  const int G = qg.count();
  const int gq = qg.size, gk = kg.size;
  const Eigen::Index dh = D / heads;
  const T sc = T(1) / std::sqrt(static_cast<T>(dh));
  const bool keep = t->grad_enabled();
  auto probs = std::make_shared<std::vector<Matrix<T>>>();
  if (keep) probs->reserve(static_cast<size_t>(G * heads));

  Matrix<T> out(q.rows(), D);
  Matrix<T> Qg(gq, D), Kg(gk, D), Vg(gk, D), Og(gq, D);
  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();
  for (int grp = 0; grp < G; ++grp) {
    for (int i = 0; i < gq; ++i) Qg.row(i) = qv.row(qg.order[static_cast<size_t>(grp * gq + i)]);
    for (int i = 0; i < gk; ++i) {
      const int r = kg.order[static_cast<size_t>(grp * gk + i)];
      Kg.row(i) = kv.row(r);
      Vg.row(i) = vv.row(r);
    }
    for (int h = 0; h < heads; ++h) {
      Matrix<T> S = (Qg.middleCols(h * dh, dh) * Kg.middleCols(h * dh, dh).transpose()) * sc;
      if (gk <= detail::kCanonicalGroup) {
        detail::canonical_softmax_mix(S, Vg.middleCols(h * dh, dh), Og.middleCols(h * dh, dh));
      } else {
        for (Eigen::Index i = 0; i < S.rows(); ++i) {
          const T m = S.row(i).maxCoeff();
          S.row(i) = (S.row(i).array() - m).exp();
          S.row(i) /= S.row(i).sum();
        }
        Og.middleCols(h * dh, dh).noalias() = S * Vg.middleCols(h * dh, dh);
      }
      if (keep) probs->push_back(std::move(S));
    }
    for (int i = 0; i < gq; ++i) out.row(qg.order[static_cast<size_t>(grp * gq + i)]) = Og.row(i);
  }

  return t->record(std::move(out), {q, k, v}, [t, q, k, v, heads, qg, kg, probs, sc](const Matrix<T>& g) {
    const Eigen::Index D = q.cols();
    const Eigen::Index dh = D / heads;
    const int G = qg.count();
    const int gq = qg.size, gk = kg.size;
    Matrix<T>* gqb = t->grad_buffer(q);
    Matrix<T>* gkb = t->grad_buffer(k);
    Matrix<T>* gvb = t->grad_buffer(v);
    Matrix<T> Qg(gq, D), Kg(gk, D), Vg(gk, D), dO(gq, D);
    Matrix<T> dQ(gq, D), dK(gk, D), dV(gk, D);
    for (int grp = 0; grp < G; ++grp) {
      for (int i = 0; i < gq; ++i) {
        const int r = qg.order[static_cast<size_t>(grp * gq + i)];
        Qg.row(i) = q.value().row(r);
        dO.row(i) = g.row(r);
      }
      for (int i = 0; i < gk; ++i) {
        const int r = kg.order[static_cast<size_t>(grp * gk + i)];
        Kg.row(i) = k.value().row(r);
        Vg.row(i) = v.value().row(r);
      }
      for (int h = 0; h < heads; ++h) {
        const Matrix<T>& P = (*probs)[static_cast<size_t>(grp * heads + h)];
        auto dOh = dO.middleCols(h * dh, dh);
        dV.middleCols(h * dh, dh).noalias() = P.transpose() * dOh;
        Matrix<T> dP = dOh * Vg.middleCols(h * dh, dh).transpose();
        Matrix<T> dS = P.cwiseProduct(dP);
        const Eigen::Matrix<T, Eigen::Dynamic, 1> rs = dS.rowwise().sum();
        dS -= (P.array().colwise() * rs.array()).matrix();
        dS *= sc;
        dQ.middleCols(h * dh, dh).noalias() = dS * Kg.middleCols(h * dh, dh);
        dK.middleCols(h * dh, dh).noalias() = dS.transpose() * Qg.middleCols(h * dh, dh);
      }
      for (int i = 0; i < gq; ++i) {
        if (gqb) gqb->row(qg.order[static_cast<size_t>(grp * gq + i)]) += dQ.row(i);
      }
      for (int i = 0; i < gk; ++i) {
        const int r = kg.order[static_cast<size_t>(grp * gk + i)];
        if (gkb) gkb->row(r) += dK.row(i);
        if (gvb) gvb->row(r) += dV.row(i);
      }
    }
  });
}

/// out.row(i) = x.row(index[i]), or zeros where index[i] < 0.
template <typename T>
Var<T> gather_rows(const Var<T>& x, std::vector<int> index) {
  Tape<T>* t = x.tape();
  const Eigen::Index D = x.cols();
  Matrix<T> v(static_cast<Eigen::Index>(index.size()), D);
  for (size_t i = 0; i < index.size(); ++i) {
    const int r = index[i];
    if (r >= x.rows()) throw ShapeError("gather_rows: index out of range");
    if (r >= 0) {
      v.row(static_cast<Eigen::Index>(i)) = x.value().row(r);
    } else {
      v.row(static_cast<Eigen::Index>(i)).setZero();
    }
  }
  auto idx = std::make_shared<std::vector<int>>(std::move(index));
  return t->record(std::move(v), {x}, [t, x, idx](const Matrix<T>& g) {
    if (Matrix<T>* gx = t->grad_buffer(x)) {
      for (size_t i = 0; i < idx->size(); ++i) {
        const int r = (*idx)[i];
        if (r >= 0) gx->row(r) += g.row(static_cast<Eigen::Index>(i));
      }
    }
  });
}

/// out.row(index[i]) += weight[i] * x.row(i); out has `out_rows` rows.
template <typename T>
Var<T> scatter_rows(const Var<T>& x, std::vector<int> index, std::vector<T> weight, int out_rows) {
  if (static_cast<Eigen::Index>(index.size()) != x.rows() || weight.size() != index.size()) {
    throw ShapeError("scatter_rows: index size mismatch");
  }
  Tape<T>* t = x.tape();
  Matrix<T> v = Matrix<T>::Zero(out_rows, x.cols());
  for (size_t i = 0; i < index.size(); ++i) {
    const int r = index[i];
    if (r >= out_rows) throw ShapeError("scatter_rows: index out of range");
    if (r >= 0) v.row(r) += weight[i] * x.value().row(static_cast<Eigen::Index>(i));
  }
  auto idx = std::make_shared<std::vector<int>>(std::move(index));
  auto wt = std::make_shared<std::vector<T>>(std::move(weight));
  return t->record(std::move(v), {x}, [t, x, idx, wt](const Matrix<T>& g) {
    if (Matrix<T>* gx = t->grad_buffer(x)) {
      for (size_t i = 0; i < idx->size(); ++i) {
        const int r = (*idx)[i];
        if (r >= 0) gx->row(static_cast<Eigen::Index>(i)) += (*wt)[i] * g.row(r);
      }
    }
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw ShapeError("concat_rows: empty input");
  Tape<T>* t = xs.front().tape();
  const Eigen::Index D = xs.front().cols();
  Eigen::Index total = 0;
  for (const auto& x : xs) {
    if (x.cols() != D) throw ShapeError("concat_rows: column mismatch");
    total += x.rows();
  }
  Matrix<T> v(total, D);
  Eigen::Index off = 0;
  for (const auto& x : xs) {
    v.middleRows(off, x.rows()) = x.value();
    off += x.rows();
  }
  return t->record(std::move(v), xs, [t, xs](const Matrix<T>& g) {
    Eigen::Index off = 0;
    for (const auto& x : xs) {
      t->accumulate(x, g.middleRows(off, x.rows()));
      off += x.rows();
    }
  });
}

template <typename T>
Var<T> slice_rows(const Var<T>& x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > x.rows()) throw ShapeError("slice_rows: out of range");
  Tape<T>* t = x.tape();
  Matrix<T> v = x.value().middleRows(start, count);
  return t->record(std::move(v), {x}, [t, x, start, count](const Matrix<T>& g) {
    if (Matrix<T>* gx = t->grad_buffer(x)) gx->middleRows(start, count) += g;
  });
}

template <typename T>
Var<T> slice_cols(const Var<T>& x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > x.cols()) throw ShapeError("slice_cols: out of range");
  Tape<T>* t = x.tape();
  Matrix<T> v = x.value().middleCols(start, count);
  return t->record(std::move(v), {x}, [t, x, start, count](const Matrix<T>& g) {
    if (Matrix<T>* gx = t->grad_buffer(x)) gx->middleCols(start, count) += g;
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  Tape<T>* t = x.tape();
  Matrix<T> v(1, 1);
  v(0, 0) = x.value().sum();
  return t->record(std::move(v), {x}, [t, x](const Matrix<T>& g) {
    t->accumulate(x, Matrix<T>::Constant(x.rows(), x.cols(), g(0, 0)));
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.value().size()));
}

/// Column means: [P x D] -> [1 x D].
template <typename T>
Var<T> mean_rows(const Var<T>& x) {
  Tape<T>* t = x.tape();
  const T inv = T(1) / static_cast<T>(x.rows());
  Matrix<T> v = x.value().colwise().sum() * inv;
  return t->record(std::move(v), {x}, [t, x, inv](const Matrix<T>& g) {
    t->accumulate(x, g.replicate(x.rows(), 1) * inv);
  });
}

/// Softmax-weighted mixture: sum_l softmax(logits)_l * xs[l]; logits is 1 x n.
template <typename T>
Var<T> softmax_mixture(const std::vector<Var<T>>& xs, const Var<T>& logits) {
  const size_t n = xs.size();
  if (n == 0 || logits.rows() != 1 || static_cast<size_t>(logits.cols()) != n) {
    throw ShapeError("softmax_mixture: shape mismatch");
  }
  Tape<T>* t = logits.tape();
  Eigen::Matrix<T, 1, Eigen::Dynamic> a = logits.value().row(0);
  a = (a.array() - a.maxCoeff()).exp();
  a /= a.sum();
  Matrix<T> v = Matrix<T>::Zero(xs.front().rows(), xs.front().cols());
  for (size_t l = 0; l < n; ++l) {
    detail::require_same_shape(xs[l], xs.front(), "softmax_mixture");
    v += a(static_cast<Eigen::Index>(l)) * xs[l].value();
  }
  std::vector<Var<T>> inputs = xs;
  inputs.push_back(logits);
  return t->record(std::move(v), inputs, [t, xs, logits, a](const Matrix<T>& g) {
    Eigen::Matrix<T, 1, Eigen::Dynamic> ga(a.size());
    for (size_t l = 0; l < xs.size(); ++l) {
      const auto li = static_cast<Eigen::Index>(l);
      t->accumulate(xs[l], g * a(li));
      ga(li) = g.cwiseProduct(xs[l].value()).sum();
    }
    const T dot = ga.dot(a);
    Matrix<T> gl = (a.array() * (ga.array() - dot)).matrix();
    t->accumulate(logits, gl);
  });
}

/// Attention pooling within consecutive groups of `group` rows: scores are
/// x.row(i) . w (w is D x 1), softmax-normalized per group. Output has one
/// row per group.
template <typename T>
Var<T> attention_pool(const Var<T>& x, const Var<T>& w, int group) {
  const Eigen::Index P = x.rows(), D = x.cols();
  if (group <= 0 || P % group != 0) throw ShapeError("attention_pool: rows not divisible by group");
  if (w.rows() != D || w.cols() != 1) throw ShapeError("attention_pool: score vector must be D x 1");
  Tape<T>* t = x.tape();
  const Eigen::Index G = P / group;
  auto alpha = std::make_shared<Eigen::Matrix<T, Eigen::Dynamic, 1>>(P);
  Eigen::Matrix<T, Eigen::Dynamic, 1> s = x.value() * w.value();
  Matrix<T> v(G, D);
  for (Eigen::Index c = 0; c < G; ++c) {
    auto seg = s.segment(c * group, group);
    const T m = seg.maxCoeff();
    Eigen::Matrix<T, Eigen::Dynamic, 1> e = (seg.array() - m).exp();
    e /= e.sum();
    alpha->segment(c * group, group) = e;
    v.row(c) = e.transpose() * x.value().middleRows(c * group, group);
  }
  return t->record(std::move(v), {x, w}, [t, x, w, alpha, group](const Matrix<T>& g) {
    const Eigen::Index G = g.rows();
    Matrix<T>* gx = t->grad_buffer(x);
    Eigen::Matrix<T, Eigen::Dynamic, 1> gw = Eigen::Matrix<T, Eigen::Dynamic, 1>::Zero(w.rows());
    for (Eigen::Index c = 0; c < G; ++c) {
      auto xs = x.value().middleRows(c * group, group);
      auto a = alpha->segment(c * group, group);
      Eigen::Matrix<T, Eigen::Dynamic, 1> ga = xs * g.row(c).transpose();
      const T dot = ga.dot(a);
      Eigen::Matrix<T, Eigen::Dynamic, 1> gs = (a.array() * (ga.array() - dot)).matrix();
      if (gx) {
        gx->middleRows(c * group, group) += a * g.row(c);
        gx->middleRows(c * group, group) += gs * w.value().transpose();
      }
      gw += xs.transpose() * gs;
    }
    t->accumulate(w, gw);
  });
}

/// Frames a set of signals (rows of x, each of length L) into
/// [rows * N x kernel] with N = floor((L - kernel) / stride) + 1.
template <typename T>
Var<T> frame_signal(const Var<T>& x, int kernel, int stride) {
  const Eigen::Index L = x.cols();
  if (kernel <= 0 || stride <= 0) throw ShapeError("frame_signal: bad kernel/stride");
  if (L < kernel) throw InvalidInput("frame_signal: signal shorter than one frame");
  const Eigen::Index N = (L - kernel) / stride + 1;
  const Eigen::Index S = x.rows();
  Tape<T>* t = x.tape();
  Matrix<T> v(S * N, kernel);
  for (Eigen::Index s = 0; s < S; ++s) {
    for (Eigen::Index n = 0; n < N; ++n) v.row(s * N + n) = x.value().row(s).segment(n * stride, kernel);
  }
  return t->record(std::move(v), {x}, [t, x, kernel, stride, N](const Matrix<T>& g) {
    if (Matrix<T>* gx = t->grad_buffer(x)) {
      for (Eigen::Index s = 0; s < gx->rows(); ++s) {
        for (Eigen::Index n = 0; n < N; ++n) gx->row(s).segment(n * stride, kernel) += g.row(s * N + n);
      }
    }
  });
}

/// Inverse of `frame_signal` by summation: [signals * N x kernel] ->
/// [signals x out_len]. Samples past the last frame stay zero.
template <typename T>
Var<T> overlap_add_frames(const Var<T>& f, int signals, int stride, Eigen::Index out_len) {
  const Eigen::Index kernel = f.cols();
  if (signals <= 0 || f.rows() % signals != 0) throw ShapeError("overlap_add_frames: bad signal count");
  const Eigen::Index N = f.rows() / signals;
  Tape<T>* t = f.tape();
  Matrix<T> v = Matrix<T>::Zero(signals, out_len);
  for (Eigen::Index s = 0; s < signals; ++s) {
    for (Eigen::Index n = 0; n < N; ++n) {
      const Eigen::Index start = n * stride;
      const Eigen::Index len = std::min<Eigen::Index>(kernel, out_len - start);
      if (len <= 0) break;
      v.row(s).segment(start, len) += f.value().row(s * N + n).head(len);
    }
  }
  return t->record(std::move(v), {f}, [t, f, stride, N, out_len](const Matrix<T>& g) {
    if (Matrix<T>* gf = t->grad_buffer(f)) {
      const Eigen::Index kernel = f.cols();
      const Eigen::Index S = g.rows();
      for (Eigen::Index s = 0; s < S; ++s) {
        for (Eigen::Index n = 0; n < N; ++n) {
          const Eigen::Index start = n * stride;
          const Eigen::Index len = std::min<Eigen::Index>(kernel, out_len - start);
          if (len <= 0) break;
          gf->row(s * N + n).head(len) += g.row(s).segment(start, len);
        }
      }
    }
  });
}

/// 10*log10(|ref|^2 / (|est - ref|^2 + eps)), capped at `clamp_db`. Inputs
/// are 1 x L rows. The cap has zero gradient once active.
template <typename T>
Var<T> snr_db(const Var<T>& ref, const Var<T>& est, T eps, T clamp_db) {
  detail::require_same_shape(ref, est, "snr_db");
  Tape<T>* t = ref.tape();
  const T sig = ref.value().squaredNorm();
  const T err = (est.value() - ref.value()).squaredNorm();
  const T raw = T(10) * std::log10(sig / (err + eps));
  const bool clamped = raw > clamp_db;
  Matrix<T> v(1, 1);
  v(0, 0) = clamped ? clamp_db : raw;
  return t->record(std::move(v), {ref, est}, [t, ref, est, eps, sig, err, clamped](const Matrix<T>& g) {
    if (clamped) return;
    const T k = T(10) / std::log(T(10)) * g(0, 0);
    const Matrix<T> diff = est.value() - ref.value();
    t->accumulate(est, diff * (-T(2) * k / (err + eps)));
    t->accumulate(ref, ref.value() * (T(2) * k / sig) + diff * (T(2) * k / (err + eps)));
  });
}

template <typename T>
Var<T> l2_normalize_rows(const Var<T>& x, T eps = T(1e-12)) {
  Tape<T>* t = x.tape();
  auto norms = std::make_shared<Eigen::Matrix<T, Eigen::Dynamic, 1>>(x.value().rowwise().norm());
  Matrix<T> v = x.value();
  for (Eigen::Index i = 0; i < v.rows(); ++i) v.row(i) /= std::max((*norms)(i), eps);
  return t->record_with_output(std::move(v), {x}, [t, x, norms, eps](const Matrix<T>& g, const Matrix<T>& y) {
    Matrix<T> gx(g.rows(), g.cols());
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      const T n = std::max((*norms)(i), eps);
      gx.row(i) = (g.row(i) - y.row(i) * y.row(i).dot(g.row(i))) / n;
    }
    t->accumulate(x, gx);
  });
}

template <typename T>
Var<T> log_softmax_rows(const Var<T>& x) {
  Tape<T>* t = x.tape();
  Matrix<T> v = x.value();
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    const T m = v.row(i).maxCoeff();
    const T lse = m + std::log((v.row(i).array() - m).exp().sum());
    v.row(i).array() -= lse;
  }
  return t->record_with_output(std::move(v), {x}, [t, x](const Matrix<T>& g, const Matrix<T>& y) {
    Matrix<T> sm = y.array().exp().matrix();
    Eigen::Matrix<T, Eigen::Dynamic, 1> rs = g.rowwise().sum();
    t->accumulate(x, g - (sm.array().colwise() * rs.array()).matrix());
  });
}

/// Scalar entry x(r, c) as a 1x1 var.
template <typename T>
Var<T> pick(const Var<T>& x, Eigen::Index r, Eigen::Index c) {
  Tape<T>* t = x.tape();
  Matrix<T> v(1, 1);
  v(0, 0) = x.value()(r, c);
  return t->record(std::move(v), {x}, [t, x, r, c](const Matrix<T>& g) {
    if (Matrix<T>* gx = t->grad_buffer(x)) (*gx)(r, c) += g(0, 0);
  });
}

/// Summed binary cross-entropy of probabilities p (n x 1) against labels,
/// with p clamped to [eps, 1 - eps]. Clamped entries pass no gradient.
template <typename T>
Var<T> bce_sum(const Var<T>& p, std::vector<bool> labels, T eps) {
  if (p.cols() != 1 || static_cast<size_t>(p.rows()) != labels.size()) {
    throw ShapeError("bce_sum: labels/probabilities length mismatch");
  }
  Tape<T>* t = p.tape();
  T acc = 0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const T pc = std::clamp(p.value()(i, 0), eps, T(1) - eps);
    acc -= labels[static_cast<size_t>(i)] ? std::log(pc) : std::log(T(1) - pc);
  }
  Matrix<T> v(1, 1);
  v(0, 0) = acc;
  return t->record(std::move(v), {p}, [t, p, labels, eps](const Matrix<T>& g) {
    Matrix<T> gp = Matrix<T>::Zero(p.rows(), 1);
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      const T pv = p.value()(i, 0);
      if (pv < eps || pv > T(1) - eps) continue;
      gp(i, 0) = labels[static_cast<size_t>(i)] ? -g(0, 0) / pv : g(0, 0) / (T(1) - pv);
    }
    t->accumulate(p, gp);
  });
}

/// LSTM pointwise stage. gates is 1 x 4H in (input, forget, cell, output)
/// order, c is 1 x H. Returns 1 x 2H holding [h_next | c_next].
template <typename T>
Var<T> lstm_pointwise(const Var<T>& gates, const Var<T>& c) {
  const Eigen::Index H = c.cols();
  if (gates.cols() != 4 * H || gates.rows() != c.rows()) throw ShapeError("lstm_pointwise: shape mismatch");
  Tape<T>* t = gates.tape();
  const auto& z = gates.value();
  auto sig = [](const auto& a) { return (T(1) / (T(1) + (-a).exp())).eval(); };
  auto act = std::make_shared<Matrix<T>>(z.rows(), 5 * H);  // i, f, g, o, tanh(c')
  Matrix<T> v(z.rows(), 2 * H);
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    auto i = sig(z.row(r).segment(0, H).array());
    auto f = sig(z.row(r).segment(H, H).array());
    auto gg = z.row(r).segment(2 * H, H).array().tanh().eval();
    auto o = sig(z.row(r).segment(3 * H, H).array());
    auto cn = (f * c.value().row(r).array() + i * gg).eval();
    auto tc = cn.tanh().eval();
    act->row(r) << i.matrix(), f.matrix(), gg.matrix(), o.matrix(), tc.matrix();
    v.row(r) << (o * tc).matrix(), cn.matrix();
  }
  return t->record(std::move(v), {gates, c}, [t, gates, c, act, H](const Matrix<T>& g) {
    Matrix<T> gz(g.rows(), 4 * H);
    Matrix<T> gc(g.rows(), H);
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      auto i = act->row(r).segment(0, H).array();
      auto f = act->row(r).segment(H, H).array();
      auto gg = act->row(r).segment(2 * H, H).array();
      auto o = act->row(r).segment(3 * H, H).array();
      auto tc = act->row(r).segment(4 * H, H).array();
      auto gh = g.row(r).segment(0, H).array();
      auto gcn = (g.row(r).segment(H, H).array() + gh * o * (T(1) - tc.square())).eval();
      gz.row(r).segment(0, H) = (gcn * gg * i * (T(1) - i)).matrix();
      gz.row(r).segment(H, H) = (gcn * c.value().row(r).array() * f * (T(1) - f)).matrix();
      gz.row(r).segment(2 * H, H) = (gcn * i * (T(1) - gg.square())).matrix();
      gz.row(r).segment(3 * H, H) = (gh * tc * o * (T(1) - o)).matrix();
      gc.row(r) = (gcn * f).matrix();
    }
    t->accumulate(gates, gz);
    t->accumulate(c, gc);
  });
}

}  // namespace unisep::ad
