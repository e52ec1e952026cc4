#pragma once

// Reverse-mode differentiation over a per-example tape. Every op records its
// value eagerly and an adjoint closure; `backward` replays the closures in
// reverse creation order, which is a valid topological order.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <unsupported/Eigen/SpecialFunctions>

#include "webformer/numerics/tensor.hpp"

namespace webformer::num {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Compressed neighbor lists: query i attends to keys
/// index[offsets[i] .. offsets[i+1]). `bias_id`, when non-empty, selects a
/// row of the key-offset table per entry (-1 for none).
struct NeighborLists {
  std::vector<int> offsets{0};
  std::vector<int> index;
  std::vector<int> bias_id;

  std::size_t queries() const { return offsets.size() - 1; }
  std::size_t nnz() const { return index.size(); }

  void push(int key, int bias = -1) {
    index.push_back(key);
    bias_id.push_back(bias);
  }
  void close_row() { offsets.push_back(static_cast<int>(index.size())); }

  std::span<const int> row(std::size_t i) const {
    return {index.data() + offsets[i], static_cast<std::size_t>(offsets[i + 1] - offsets[i])};
  }
};

template <typename T>
class Tape {
 public:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    Param<T>* param = nullptr;
    bool requires_grad = false;
    std::function<void(Tape&)> backward;
  };

  explicit Tape(bool train = false, std::uint64_t seed = 0) : train_(train), rng_(seed) {}

  bool train() const { return train_; }
  std::mt19937_64& rng() { return rng_; }

  Var constant(Tensor<T> value) {
    Node n;
    n.value = std::move(value);
    return push(std::move(n));
  }

  /// Leaf bound to a parameter; gradients flow straight into `param.grad`.
  Var param(Param<T>& p) {
    auto it = param_vars_.find(&p);
    if (it != param_vars_.end()) return it->second;
    Node n;
    n.param = &p;
    n.requires_grad = true;
    Var v = push(std::move(n));
    param_vars_[&p] = v;
    return v;
  }

  Var param(ParamStore<T>& store, const std::string& name) { return param(store.get(name)); }

  const Tensor<T>& value(Var v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.id)];
    return n.param ? n.param->value : n.value;
  }

  bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }

  Tensor<T>& grad(Var v) {
    Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.param) return n.param->grad;
    if (n.grad.size() != n.value.size() || n.grad.shape() != n.value.shape()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  /// Records an op result. `backward` runs only when some input needs grad.
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, std::function<void(Tape&)> backward) {
    Node n;
    n.value = std::move(value);
    for (Var in : inputs) n.requires_grad = n.requires_grad || (in.valid() && requires_grad(in));
    if (n.requires_grad) n.backward = std::move(backward);
    return push(std::move(n));
  }

  int current_id() const { return static_cast<int>(nodes_.size()); }

  /// Seeds d(loss)/d(loss) = 1 and accumulates gradients into every
  /// parameter reached. A tape supports one backward pass per reset.
  void backward(Var loss) {
    if (backward_done_) throw StaleTapeError("backward called twice without reset");
    backward_done_ = true;
    if (value(loss).size() != 1) throw ShapeError("backward expects a scalar loss, got " + shape_string(value(loss).shape()));
    grad(loss)[0] += T(1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.backward || n.grad.size() == 0) continue;
      n.backward(*this);
    }
  }

  void reset() {
    nodes_.clear();
    param_vars_.clear();
    backward_done_ = false;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  bool train_;
  std::mt19937_64 rng_;
  std::vector<Node> nodes_;
  std::unordered_map<const Param<T>*, Var> param_vars_;
  bool backward_done_ = false;
};

namespace ops {

namespace detail {
inline void require(bool ok, const std::string& op, const Shape& a, const Shape& b) {
  if (!ok) throw ShapeError(op + ": incompatible shapes " + shape_string(a) + " and " + shape_string(b));
}
}  // namespace detail

template <typename T>
Var matmul(Tape<T>& tape, Var a, Var b) {
  const auto& A = tape.value(a);
  const auto& B = tape.value(b);
  detail::require(A.cols() == B.rows(), "matmul", A.shape(), B.shape());
  Tensor<T> out(A.rows(), B.cols());
  out.mat().noalias() = A.mat() * B.mat();
  return tape.record(std::move(out), {a, b}, [a, b, self = tape.current_id()](Tape<T>& t) {
    const auto& G = t.grad(Var{self});
    if (t.requires_grad(a)) t.grad(a).mat().noalias() += G.mat() * t.value(b).mat().transpose();
    if (t.requires_grad(b)) t.grad(b).mat().noalias() += t.value(a).mat().transpose() * G.mat();
  });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  const auto& A = tape.value(a);
  const auto& B = tape.value(b);
  detail::require(A.shape() == B.shape(), "add", A.shape(), B.shape());
  Tensor<T> out = A;
  out.mat() += B.mat();
  return tape.record(std::move(out), {a, b}, [a, b, self = tape.current_id()](Tape<T>& t) {
    const auto& G = t.grad(Var{self});
    if (t.requires_grad(a)) t.grad(a).mat() += G.mat();
    if (t.requires_grad(b)) t.grad(b).mat() += G.mat();
  });
}

/// a + broadcast(row) where `row` has a.cols() entries.
template <typename T>
Var add_row(Tape<T>& tape, Var a, Var row) {
  const auto& A = tape.value(a);
  const auto& R = tape.value(row);
  detail::require(R.size() == A.cols(), "add_row", A.shape(), R.shape());
  Tensor<T> out = A;
  ConstMatrixMap<T> r(R.data(), 1, static_cast<Eigen::Index>(R.size()));
  out.mat().rowwise() += r.row(0);
  return tape.record(std::move(out), {a, row}, [a, row, self = tape.current_id()](Tape<T>& t) {
    const auto& G = t.grad(Var{self});
    if (t.requires_grad(a)) t.grad(a).mat() += G.mat();
    if (t.requires_grad(row)) {
      auto& gr = t.grad(row);
      MatrixMap<T>(gr.data(), 1, static_cast<Eigen::Index>(gr.size())).row(0) += G.mat().colwise().sum();
    }
  });
}

template <typename T>
Var scale(Tape<T>& tape, Var a, T s) {
  Tensor<T> out = tape.value(a);
  out.mat() *= s;
  return tape.record(std::move(out), {a}, [a, s, self = tape.current_id()](Tape<T>& t) {
    t.grad(a).mat() += s * t.grad(Var{self}).mat();
  });
}

/// Rows of `table` selected by `ids`.
template <typename T>
Var gather_rows(Tape<T>& tape, Var table, std::vector<int> ids) {
  const auto& W = tape.value(table);
  const std::size_t c = W.cols();
  Tensor<T> out(ids.size(), c);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= W.rows())
      throw VocabError("id " + std::to_string(ids[r]) + " outside table of " + std::to_string(W.rows()) + " rows");
    std::copy_n(W.data() + static_cast<std::size_t>(ids[r]) * c, c, out.data() + r * c);
  }
  return tape.record(std::move(out), {table}, [table, ids = std::move(ids), c, self = tape.current_id()](Tape<T>& t) {
    const auto& G = t.grad(Var{self});
    auto& GW = t.grad(table);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      T* dst = GW.data() + static_cast<std::size_t>(ids[r]) * c;
      const T* src = G.data() + r * c;
      for (std::size_t k = 0; k < c; ++k) dst[k] += src[k];
    }
  });
}

/// [a | b] column-wise; both operands need the same row count.
template <typename T>
Var concat_cols(Tape<T>& tape, Var a, Var b) {
  const auto& A = tape.value(a);
  const auto& B = tape.value(b);
  detail::require(A.rows() == B.rows(), "concat_cols", A.shape(), B.shape());
  const auto ca = static_cast<Eigen::Index>(A.cols());
  const auto cb = static_cast<Eigen::Index>(B.cols());
  Tensor<T> out(A.rows(), A.cols() + B.cols());
  out.mat().leftCols(ca) = A.mat();
  out.mat().rightCols(cb) = B.mat();
  return tape.record(std::move(out), {a, b}, [a, b, ca, cb, self = tape.current_id()](Tape<T>& t) {
    const auto& G = t.grad(Var{self});
    if (t.requires_grad(a)) t.grad(a).mat() += G.mat().leftCols(ca);
    if (t.requires_grad(b)) t.grad(b).mat() += G.mat().rightCols(cb);
  });
}

/// [a ; b] row-wise; both operands need the same column count.
template <typename T>
Var concat_rows(Tape<T>& tape, Var a, Var b) {
  const auto& A = tape.value(a);
  const auto& B = tape.value(b);
  detail::require(A.cols() == B.cols(), "concat_rows", A.shape(), B.shape());
  const auto ra = static_cast<Eigen::Index>(A.rows());
  const auto rb = static_cast<Eigen::Index>(B.rows());
  Tensor<T> out(A.rows() + B.rows(), A.cols());
  out.mat().topRows(ra) = A.mat();
  out.mat().bottomRows(rb) = B.mat();
  return tape.record(std::move(out), {a, b}, [a, b, ra, rb, self = tape.current_id()](Tape<T>& t) {
    const auto& G = t.grad(Var{self});
    if (t.requires_grad(a)) t.grad(a).mat() += G.mat().topRows(ra);
    if (t.requires_grad(b)) t.grad(b).mat() += G.mat().bottomRows(rb);
  });
}

template <typename T>
Var slice_rows(Tape<T>& tape, Var a, std::size_t start, std::size_t count) {
  const auto& A = tape.value(a);
  if (start + count > A.rows())
    throw ShapeError("slice_rows: rows [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") outside " + shape_string(A.shape()));
  Tensor<T> out(count, A.cols());
  out.mat() = A.mat().middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count));
  return tape.record(std::move(out), {a}, [a, start, count, self = tape.current_id()](Tape<T>& t) {
    t.grad(a).mat().middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count)) +=
        t.grad(Var{self}).mat();
  });
}

/// Row-wise layer normalization followed by the affine map gamma * x + beta.
template <typename T>
Var layer_norm(Tape<T>& tape, Var x, Var gamma, Var beta, T eps = T(1e-5)) {
  const auto& X = tape.value(x);
  const auto& Gm = tape.value(gamma);
  const auto& Bt = tape.value(beta);
  const std::size_t n = X.rows();
  const std::size_t d = X.cols();
  detail::require(Gm.size() == d && Bt.size() == d, "layer_norm", X.shape(), Gm.shape());
  Tensor<T> out(X.shape());
  auto xhat = std::make_shared<Tensor<T>>(X.shape());
  auto inv_std = std::make_shared<std::vector<T>>(n);
  for (std::size_t r = 0; r < n; ++r) {
    const T* xr = X.data() + r * d;
    T mean = 0;
    for (std::size_t c = 0; c < d; ++c) mean += xr[c];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    T* hr = xhat->data() + r * d;
    T* orow = out.data() + r * d;
    for (std::size_t c = 0; c < d; ++c) {
      hr[c] = (xr[c] - mean) * is;
      orow[c] = hr[c] * Gm[c] + Bt[c];
    }
  }
  return tape.record(std::move(out), {x, gamma, beta},
                     [x, gamma, beta, xhat, inv_std, n, d, self = tape.current_id()](Tape<T>& t) {
                       const auto& G = t.grad(Var{self});
                       const auto& Gm = t.value(gamma);
                       const bool gx = t.requires_grad(x);
                       Tensor<T>* dX = gx ? &t.grad(x) : nullptr;
                       Tensor<T>* dG = t.requires_grad(gamma) ? &t.grad(gamma) : nullptr;
                       Tensor<T>* dB = t.requires_grad(beta) ? &t.grad(beta) : nullptr;
                       std::vector<T> dh(d);
                       for (std::size_t r = 0; r < n; ++r) {
                         const T* g = G.data() + r * d;
                         const T* h = xhat->data() + r * d;
                         T sum_dh = 0, sum_dh_h = 0;
                         for (std::size_t c = 0; c < d; ++c) {
                           if (dG) (*dG)[c] += g[c] * h[c];
                           if (dB) (*dB)[c] += g[c];
                           dh[c] = g[c] * Gm[c];
                           sum_dh += dh[c];
                           sum_dh_h += dh[c] * h[c];
                         }
                         if (!gx) continue;
                         const T is = (*inv_std)[r];
                         const T inv_d = T(1) / static_cast<T>(d);
                         T* dx = dX->data() + r * d;
                         for (std::size_t c = 0; c < d; ++c)
                           dx[c] += is * (dh[c] - inv_d * sum_dh - h[c] * inv_d * sum_dh_h);
                       }
                     });
}

/// Exact (erf-based) GELU.
template <typename T>
Var gelu(Tape<T>& tape, Var x) {
  const auto& X = tape.value(x);
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  const Eigen::Map<const Arr> xs(X.data(), static_cast<Eigen::Index>(X.size()));
  auto cdf = std::make_shared<Arr>(T(0.5) * (T(1) + (xs * T(0.70710678118654752440)).erf()));
  Tensor<T> out(X.shape());
  Eigen::Map<Arr>(out.data(), xs.size()) = xs * *cdf;
  return tape.record(std::move(out), {x}, [x, cdf, self = tape.current_id()](Tape<T>& t) {
    const auto& X = t.value(x);
    const auto n = static_cast<Eigen::Index>(X.size());
    const Eigen::Map<const Arr> xs(X.data(), n);
    const Eigen::Map<const Arr> g(t.grad(Var{self}).data(), n);
    Eigen::Map<Arr> dx(t.grad(x).data(), n);
    dx += g * (*cdf + xs * T(0.39894228040143267794) * (T(-0.5) * xs.square()).exp());
  });
}

/// Inverted dropout: identity when the tape is in eval mode or p == 0.
template <typename T>
Var dropout(Tape<T>& tape, Var x, T p) {
  if (p < T(0) || p >= T(1)) throw ConfigError("dropout probability must lie in [0, 1)");
  if (!tape.train() || p == T(0)) return x;
  const auto& X = tape.value(x);
  auto mask = std::make_shared<std::vector<T>>(X.size());
  std::bernoulli_distribution keep(1.0 - static_cast<double>(p));
  const T s = T(1) / (T(1) - p);
  Tensor<T> out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) {
    (*mask)[i] = keep(tape.rng()) ? s : T(0);
    out[i] = X[i] * (*mask)[i];
  }
  return tape.record(std::move(out), {x}, [x, mask, self = tape.current_id()](Tape<T>& t) {
    const auto& G = t.grad(Var{self});
    auto& dX = t.grad(x);
    for (std::size_t i = 0; i < G.size(); ++i) dX[i] += G[i] * (*mask)[i];
  });
}

/// Softmax of a logit vector restricted to `index_set`; returns one
/// probability per member, in the order given.
template <typename T>
Var softmax_indexed(Tape<T>& tape, Var logits, std::vector<int> index_set) {
  const auto& L = tape.value(logits);
  if (index_set.empty()) throw ShapeError("softmax_indexed: empty index set");
  T mx = -std::numeric_limits<T>::infinity();
  for (int i : index_set) {
    if (i < 0 || static_cast<std::size_t>(i) >= L.size())
      throw ShapeError("softmax_indexed: index " + std::to_string(i) + " outside " + shape_string(L.shape()));
    mx = std::max(mx, L[static_cast<std::size_t>(i)]);
  }
  Tensor<T> out(Shape{index_set.size()});
  T z = 0;
  for (std::size_t k = 0; k < index_set.size(); ++k) {
    out[k] = std::exp(L[static_cast<std::size_t>(index_set[k])] - mx);
    z += out[k];
  }
  for (std::size_t k = 0; k < index_set.size(); ++k) out[k] /= z;
  return tape.record(std::move(out), {logits}, [logits, idx = std::move(index_set), self = tape.current_id()](Tape<T>& t) {
    const auto& P = t.value(Var{self});
    const auto& G = t.grad(Var{self});
    T dot = 0;
    for (std::size_t k = 0; k < idx.size(); ++k) dot += P[k] * G[k];
    auto& dL = t.grad(logits);
    for (std::size_t k = 0; k < idx.size(); ++k) dL[static_cast<std::size_t>(idx[k])] += P[k] * (G[k] - dot);
  });
}

/// -log softmax(logits)[target] over all entries of `logits`; entries equal
/// to -inf take no probability mass.
template <typename T>
Var cross_entropy(Tape<T>& tape, Var logits, std::size_t target) {
  const auto& L = tape.value(logits);
  if (target >= L.size()) throw ShapeError("cross_entropy: target outside " + shape_string(L.shape()));
  if (!std::isfinite(L[target])) throw LabelError("cross_entropy: target logit is not finite");
  T mx = -std::numeric_limits<T>::infinity();
  for (std::size_t i = 0; i < L.size(); ++i) mx = std::max(mx, L[i]);
  auto probs = std::make_shared<std::vector<T>>(L.size());
  T z = 0;
  for (std::size_t i = 0; i < L.size(); ++i) {
    (*probs)[i] = std::isfinite(L[i]) ? std::exp(L[i] - mx) : T(0);
    z += (*probs)[i];
  }
  for (auto& p : *probs) p /= z;
  Tensor<T> out(Shape{1});
  out[0] = -(L[target] - mx - std::log(z));
  return tape.record(std::move(out), {logits}, [logits, probs, target, self = tape.current_id()](Tape<T>& t) {
    const T g = t.grad(Var{self})[0];
    auto& dL = t.grad(logits);
    for (std::size_t i = 0; i < probs->size(); ++i) dL[i] += g * (*probs)[i];
    dL[target] -= g;
  });
}

template <typename T>
Var sum(Tape<T>& tape, Var a) {
  const auto& A = tape.value(a);
  Tensor<T> out(Shape{1});
  out[0] = A.mat().sum();
  return tape.record(std::move(out), {a}, [a, self = tape.current_id()](Tape<T>& t) {
    const T g = t.grad(Var{self})[0];
    t.grad(a).mat().array() += g;
  });
}

namespace detail {

template <typename T>
class DropoutDraw {
 public:
  explicit DropoutDraw(T p) : threshold_(static_cast<std::uint64_t>(static_cast<double>(p) * 18446744073709551615.0)),
                              scale_(T(1) / (T(1) - p)) {}
  T operator()(std::mt19937_64& rng) const { return rng() >= threshold_ ? scale_ : T(0); }

 private:
  std::uint64_t threshold_;
  T scale_;
};

// Every query attends to every key: one GEMM per head.
template <typename T>
Var dense_attention(Tape<T>& tape, Var q, Var k, Var v, std::size_t heads, T dropout_p) {
  const auto& Q = tape.value(q);
  const auto& K = tape.value(k);
  const auto& V = tape.value(v);
  const auto d = static_cast<Eigen::Index>(Q.cols());
  const auto dh = d / static_cast<Eigen::Index>(heads);
  const auto nq = static_cast<Eigen::Index>(Q.rows());
  const auto nk = static_cast<Eigen::Index>(K.rows());
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const bool use_dropout = tape.train() && dropout_p > T(0);
  auto probs = std::make_shared<std::vector<RowMatrix<T>>>(heads);
  auto masks = std::make_shared<std::vector<RowMatrix<T>>>(use_dropout ? heads : 0);
  Tensor<T> out(Q.rows(), Q.cols());
  DropoutDraw<T> draw(use_dropout ? dropout_p : T(0));
  for (std::size_t h = 0; h < heads; ++h) {
    const auto c0 = static_cast<Eigen::Index>(h) * dh;
    RowMatrix<T>& P = (*probs)[h];
    P.noalias() = (Q.mat().middleCols(c0, dh) * K.mat().middleCols(c0, dh).transpose()) * scale;
    for (Eigen::Index i = 0; i < nq; ++i) {
      auto row = P.row(i);
      row.array() = (row.array() - row.maxCoeff()).exp();
      row /= row.sum();
    }
    if (use_dropout) {
      RowMatrix<T>& M = (*masks)[h];
      M.resize(nq, nk);
      for (Eigen::Index i = 0; i < M.size(); ++i) M.data()[i] = draw(tape.rng());
      out.mat().middleCols(c0, dh).noalias() = P.cwiseProduct(M) * V.mat().middleCols(c0, dh);
    } else {
      out.mat().middleCols(c0, dh).noalias() = P * V.mat().middleCols(c0, dh);
    }
  }
  return tape.record(std::move(out), {q, k, v}, [=, self = tape.current_id()](Tape<T>& t) {
    const auto& G = t.grad(Var{self});
    const auto& Q = t.value(q);
    const auto& K = t.value(k);
    const auto& V = t.value(v);
    RowMatrix<T> Pm, dP, dS;
    for (std::size_t h = 0; h < heads; ++h) {
      const auto c0 = static_cast<Eigen::Index>(h) * dh;
      const RowMatrix<T>& P = (*probs)[h];
      if (use_dropout) Pm = P.cwiseProduct((*masks)[h]);
      const RowMatrix<T>& Pw = use_dropout ? Pm : P;
      auto Gh = G.mat().middleCols(c0, dh);
      if (t.requires_grad(v)) t.grad(v).mat().middleCols(c0, dh).noalias() += Pw.transpose() * Gh;
      if (!t.requires_grad(q) && !t.requires_grad(k)) continue;
      dP.noalias() = Gh * V.mat().middleCols(c0, dh).transpose();
      if (use_dropout) dP = dP.cwiseProduct((*masks)[h]);
      dS = P.cwiseProduct(dP);
      const Eigen::Matrix<T, Eigen::Dynamic, 1> rs = dS.rowwise().sum();
      dS -= P.cwiseProduct(rs.replicate(1, P.cols()));
      dS *= scale;
      if (t.requires_grad(q)) t.grad(q).mat().middleCols(c0, dh).noalias() += dS * K.mat().middleCols(c0, dh);
      if (t.requires_grad(k)) t.grad(k).mat().middleCols(c0, dh).noalias() += dS.transpose() * Q.mat().middleCols(c0, dh);
    }
  });
}

}  // namespace detail

/// Multi-head scaled dot-product attention over explicit neighbor lists.
/// For query row i and head h the logit of neighbor j is
///   q_i^h . (k_j^h + bias[b_ij]) / sqrt(d_head)
/// and the softmax runs over the neighbors of i only. `bias_table`
/// (rows x d_head) is shared by all heads and may be an invalid Var. A null
/// `neighbors` pointer means every query sees every key. Queries with no
/// neighbors produce a zero row. `neighbors` must outlive the backward pass.
template <typename T>
Var indexed_attention(Tape<T>& tape, Var q, Var k, Var v, const NeighborLists* neighbors, Var bias_table,
                      std::size_t heads, T dropout_p = T(0)) {
  const auto& Q = tape.value(q);
  const auto& K = tape.value(k);
  const auto& V = tape.value(v);
  const std::size_t d = Q.cols();
  detail::require(K.cols() == d && V.cols() == d && K.rows() == V.rows(), "indexed_attention", Q.shape(), K.shape());
  if (heads == 0 || d % heads != 0) throw ConfigError("hidden size must be divisible by head count");
  if (dropout_p < T(0) || dropout_p >= T(1)) throw ConfigError("dropout probability must lie in [0, 1)");
  if (neighbors == nullptr) return detail::dense_attention(tape, q, k, v, heads, dropout_p);

  const std::size_t dh = d / heads;
  const std::size_t nq = Q.rows();
  if (neighbors->queries() != nq)
    throw ShapeError("indexed_attention: neighbor lists cover " + std::to_string(neighbors->queries()) +
                     " queries, got " + std::to_string(nq));
  for (int key : neighbors->index)
    if (key < 0 || static_cast<std::size_t>(key) >= K.rows())
      throw ShapeError("indexed_attention: key " + std::to_string(key) + " outside " + shape_string(K.shape()));
  const Tensor<T>* A = bias_table.valid() ? &tape.value(bias_table) : nullptr;
  if (A && A->cols() != dh) throw ShapeError("indexed_attention: bias table width must equal head size");
  const bool use_dropout = tape.train() && dropout_p > T(0);
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const std::size_t nnz = neighbors->nnz();

  // probs[s * heads + h]: softmax weight; kept[s * heads + h]: dropout scale.
  auto probs = std::make_shared<std::vector<T>>(nnz * heads);
  auto kept = std::make_shared<std::vector<T>>(use_dropout ? nnz * heads : 0);
  detail::DropoutDraw<T> draw(use_dropout ? dropout_p : T(0));

  Tensor<T> out(nq, d);
  std::vector<T> mx(heads), z(heads);
  for (std::size_t i = 0; i < nq; ++i) {
    const std::size_t b = static_cast<std::size_t>(neighbors->offsets[i]);
    const std::size_t e = static_cast<std::size_t>(neighbors->offsets[i + 1]);
    if (b == e) continue;
    const T* qi = Q.data() + i * d;
    std::fill(mx.begin(), mx.end(), -std::numeric_limits<T>::infinity());
    for (std::size_t s = b; s < e; ++s) {
      const T* kj = K.data() + static_cast<std::size_t>(neighbors->index[s]) * d;
      const int bid = A ? neighbors->bias_id[s] : -1;
      const T* a = bid >= 0 ? A->data() + static_cast<std::size_t>(bid) * dh : nullptr;
      T* ps = probs->data() + s * heads;
      for (std::size_t h = 0; h < heads; ++h) {
        const T* qh = qi + h * dh;
        const T* kh = kj + h * dh;
        T acc = 0;
        if (a) {
          for (std::size_t c = 0; c < dh; ++c) acc += qh[c] * (kh[c] + a[c]);
        } else {
          for (std::size_t c = 0; c < dh; ++c) acc += qh[c] * kh[c];
        }
        ps[h] = acc * scale;
        mx[h] = std::max(mx[h], ps[h]);
      }
    }
    std::fill(z.begin(), z.end(), T(0));
    for (std::size_t s = b; s < e; ++s) {
      T* ps = probs->data() + s * heads;
      for (std::size_t h = 0; h < heads; ++h) {
        ps[h] = std::exp(ps[h] - mx[h]);
        z[h] += ps[h];
      }
    }
    T* oi = out.data() + i * d;
    for (std::size_t s = b; s < e; ++s) {
      T* ps = probs->data() + s * heads;
      const T* vj = V.data() + static_cast<std::size_t>(neighbors->index[s]) * d;
      for (std::size_t h = 0; h < heads; ++h) {
        ps[h] /= z[h];
        T w = ps[h];
        if (use_dropout) {
          const T m = draw(tape.rng());
          (*kept)[s * heads + h] = m;
          w *= m;
        }
        for (std::size_t c = 0; c < dh; ++c) oi[h * dh + c] += w * vj[h * dh + c];
      }
    }
  }

  return tape.record(std::move(out), {q, k, v, bias_table}, [=, self = tape.current_id()](Tape<T>& t) {
    const auto& G = t.grad(Var{self});
    const auto& Q = t.value(q);
    const auto& K = t.value(k);
    const auto& V = t.value(v);
    const Tensor<T>* A = bias_table.valid() ? &t.value(bias_table) : nullptr;
    T* dQ = t.requires_grad(q) ? t.grad(q).data() : nullptr;
    T* dK = t.requires_grad(k) ? t.grad(k).data() : nullptr;
    T* dV = t.requires_grad(v) ? t.grad(v).data() : nullptr;
    T* dA = (A && t.requires_grad(bias_table)) ? t.grad(bias_table).data() : nullptr;
    std::vector<T> dlogit;
    std::vector<T> dot(heads);
    for (std::size_t i = 0; i < nq; ++i) {
      const std::size_t b = static_cast<std::size_t>(neighbors->offsets[i]);
      const std::size_t e = static_cast<std::size_t>(neighbors->offsets[i + 1]);
      if (b == e) continue;
      dlogit.resize((e - b) * heads);
      const T* gi = G.data() + i * d;
      const T* qi = Q.data() + i * d;
      std::fill(dot.begin(), dot.end(), T(0));
      for (std::size_t s = b; s < e; ++s) {
        const std::size_t j = static_cast<std::size_t>(neighbors->index[s]);
        const T* vj = V.data() + j * d;
        T* dvj = dV ? dV + j * d : nullptr;
        for (std::size_t h = 0; h < heads; ++h) {
          const T p = (*probs)[s * heads + h];
          const T m = use_dropout ? (*kept)[s * heads + h] : T(1);
          T dp = 0;
          for (std::size_t c = 0; c < dh; ++c) dp += gi[h * dh + c] * vj[h * dh + c];
          dp *= m;
          dlogit[(s - b) * heads + h] = dp;
          dot[h] += p * dp;
          if (dvj) {
            const T w = p * m;
            for (std::size_t c = 0; c < dh; ++c) dvj[h * dh + c] += w * gi[h * dh + c];
          }
        }
      }
      for (std::size_t s = b; s < e; ++s) {
        const std::size_t j = static_cast<std::size_t>(neighbors->index[s]);
        const T* kj = K.data() + j * d;
        const int bid = A ? neighbors->bias_id[s] : -1;
        const T* a = bid >= 0 ? A->data() + static_cast<std::size_t>(bid) * dh : nullptr;
        T* da = (dA && bid >= 0) ? dA + static_cast<std::size_t>(bid) * dh : nullptr;
        for (std::size_t h = 0; h < heads; ++h) {
          const T g = (*probs)[s * heads + h] * (dlogit[(s - b) * heads + h] - dot[h]) * scale;
          if (g == T(0)) continue;
          if (dQ) {
            T* dqi = dQ + i * d + h * dh;
            const T* kh = kj + h * dh;
            if (a) {
              for (std::size_t c = 0; c < dh; ++c) dqi[c] += g * (kh[c] + a[c]);
            } else {
              for (std::size_t c = 0; c < dh; ++c) dqi[c] += g * kh[c];
            }
          }
          if (dK) {
            T* dkj = dK + j * d + h * dh;
            for (std::size_t c = 0; c < dh; ++c) dkj[c] += g * qi[h * dh + c];
          }
          if (da)
            for (std::size_t c = 0; c < dh; ++c) da[c] += g * qi[h * dh + c];
        }
      }
    }
  });
}

}  // namespace ops
}  // namespace webformer::num
