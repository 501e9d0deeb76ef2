#pragma once

// Reverse-mode autodiff over dense arrays. The op set is exactly what the
// training objectives need: 2-d convolution (1-d convs are expressed as
// height-1 images), batch norm, pooling, linear maps, the episodic-metric
// pieces (segment means, pairwise distances, row softmaxes) and the scalar
// reductions the losses are built from. Heavy lifting (GEMM) is delegated to
// Eigen through column-major views of the row-major buffers.

#include <Eigen/Core>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "s4l/array.hpp"
#include "s4l/errors.hpp"
#include "s4l/rng.hpp"

namespace s4l {
namespace ag {

template <class T>
struct Node;

template <class T>
using Var = std::shared_ptr<Node<T>>;

template <class T>
struct Node {
  Arr<T> value;
  Arr<T> grad;  // allocated lazily, same shape as value
  bool requires_grad = false;
  std::vector<Var<T>> parents;
  std::function<void(Node<T>&)> backprop;

  explicit Node(Arr<T> v) : value(std::move(v)) {}
};

// Graph recording can be suspended for inference passes; ops then return
// detached leaves and intermediate activations are freed as they go out of
// scope.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGrad {
  bool prev;
  NoGrad() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGrad() { grad_mode() = prev; }
};

template <class T>
Var<T> constant(Arr<T> v) {
  return std::make_shared<Node<T>>(std::move(v));
}

template <class T>
Var<T> parameter(Arr<T> v) {
  auto n = std::make_shared<Node<T>>(std::move(v));
  n->requires_grad = true;
  return n;
}

template <class T>
void ensure_grad(Node<T>& n) {
  if (n.grad.numel() == 0) n.grad = Arr<T>::zeros(n.value.shape);
}

namespace detail {

template <class T>
Var<T> make_op(Arr<T> value, std::vector<Var<T>> parents,
               std::function<void(Node<T>&)> backprop) {
  bool need = false;
  if (grad_mode()) {
    for (const auto& p : parents) need = need || p->requires_grad;
  }
  auto n = std::make_shared<Node<T>>(std::move(value));
  if (need) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}

// Row-major buffers seen through column-major Eigen maps (a row-major MxN
// buffer is exactly the NxM column-major transpose, so no copies are made).
template <class T>
using CMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
template <class T>
using MapCM = Eigen::Map<CMat<T>>;
template <class T>
using CMapCM = Eigen::Map<const CMat<T>>;

// C(MxN) = A(MxK) * B(KxN)
template <class T>
void gemm_nn(T* c, const T* a, const T* b, int64_t m, int64_t n, int64_t k,
             bool accumulate) {
  MapCM<T> C(c, n, m);
  CMapCM<T> A(a, k, m), B(b, n, k);
  if (accumulate)
    C.noalias() += B * A;
  else
    C.noalias() = B * A;
}

// C(MxN) = A(MxP) * B(NxP)^T
template <class T>
void gemm_nt(T* c, const T* a, const T* b, int64_t m, int64_t n, int64_t p,
             bool accumulate) {
  MapCM<T> C(c, n, m);
  CMapCM<T> A(a, p, m), B(b, p, n);
  if (accumulate)
    C.noalias() += B.transpose() * A;
  else
    C.noalias() = B.transpose() * A;
}

// C(MxN) = A(PxM)^T * B(PxN)
template <class T>
void gemm_tn(T* c, const T* a, const T* b, int64_t m, int64_t n, int64_t p,
             bool accumulate) {
  MapCM<T> C(c, n, m);
  CMapCM<T> A(a, m, p), B(b, n, p);
  if (accumulate)
    C.noalias() += B * A.transpose();
  else
    C.noalias() = B * A.transpose();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

template <class T>
void backward(const Var<T>& loss) {
  if (loss->value.numel() != 1)
    raise(ErrorKind::Contract, "backward requires a scalar loss");
  if (!loss->requires_grad) return;

  // Iterative post-order over the subgraph that requires grad.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.push_back({loss.get(), 0});
  visited.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  ensure_grad(*loss);
  loss->grad.v[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backprop) {
      ensure_grad(*n);
      n->backprop(*n);
    }
  }
}

// ---------------------------------------------------------------------------
// elementwise and scalar ops
// ---------------------------------------------------------------------------

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (!a->value.same_shape(b->value))
    raise(ErrorKind::Shape, "add: shape mismatch");
  Arr<T> out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += b->value[i];
  auto ap = a, bp = b;
  return detail::make_op<T>(std::move(out), {a, b}, [ap, bp](Node<T>& n) {
    for (auto& p : {ap, bp}) {
      if (!p->requires_grad) continue;
      ensure_grad(*p);
      for (int64_t i = 0; i < n.grad.numel(); ++i) p->grad[i] += n.grad[i];
    }
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  if (!a->value.same_shape(b->value))
    raise(ErrorKind::Shape, "sub: shape mismatch");
  Arr<T> out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
  auto ap = a, bp = b;
  return detail::make_op<T>(std::move(out), {a, b}, [ap, bp](Node<T>& n) {
    if (ap->requires_grad) {
      ensure_grad(*ap);
      for (int64_t i = 0; i < n.grad.numel(); ++i) ap->grad[i] += n.grad[i];
    }
    if (bp->requires_grad) {
      ensure_grad(*bp);
      for (int64_t i = 0; i < n.grad.numel(); ++i) bp->grad[i] -= n.grad[i];
    }
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  if (!a->value.same_shape(b->value))
    raise(ErrorKind::Shape, "mul: shape mismatch");
  Arr<T> out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
  auto ap = a, bp = b;
  return detail::make_op<T>(std::move(out), {a, b}, [ap, bp](Node<T>& n) {
    if (ap->requires_grad) {
      ensure_grad(*ap);
      for (int64_t i = 0; i < n.grad.numel(); ++i)
        ap->grad[i] += n.grad[i] * bp->value[i];
    }
    if (bp->requires_grad) {
      ensure_grad(*bp);
      for (int64_t i = 0; i < n.grad.numel(); ++i)
        bp->grad[i] += n.grad[i] * ap->value[i];
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T c) {
  Arr<T> out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= c;
  auto ap = a;
  return detail::make_op<T>(std::move(out), {a}, [ap, c](Node<T>& n) {
    ensure_grad(*ap);
    for (int64_t i = 0; i < n.grad.numel(); ++i) ap->grad[i] += c * n.grad[i];
  });
}

template <class T>
Var<T> neg(const Var<T>& a) {
  return scale(a, T(-1));
}

template <class T>
Var<T> relu(const Var<T>& a) {
  int64_t m = a->value.numel();
  Arr<T> out = a->value;
#pragma omp parallel for schedule(static) if (m > 65536)
  for (int64_t i = 0; i < m; ++i)
    if (out[i] < T(0)) out[i] = T(0);
  auto ap = a;
  return detail::make_op<T>(std::move(out), {a}, [ap, m](Node<T>& n) {
    ensure_grad(*ap);
#pragma omp parallel for schedule(static) if (m > 65536)
    for (int64_t i = 0; i < m; ++i)
      if (ap->value[i] > T(0)) ap->grad[i] += n.grad[i];
  });
}

// ln(max(x, eps)); below the clamp the derivative is zero.
template <class T>
Var<T> log_clamped(const Var<T>& a, T eps) {
  Arr<T> out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] = std::log(std::max(out[i], eps));
  auto ap = a;
  return detail::make_op<T>(std::move(out), {a}, [ap, eps](Node<T>& n) {
    ensure_grad(*ap);
    for (int64_t i = 0; i < n.grad.numel(); ++i)
      if (ap->value[i] > eps) ap->grad[i] += n.grad[i] / ap->value[i];
  });
}

template <class T>
Var<T> sum_all(const Var<T>& a) {
  T s = 0;
  for (int64_t i = 0; i < a->value.numel(); ++i) s += a->value[i];
  auto ap = a;
  return detail::make_op<T>(Arr<T>::scalar(s), {a}, [ap](Node<T>& n) {
    ensure_grad(*ap);
    T g = n.grad[0];
    for (int64_t i = 0; i < ap->grad.numel(); ++i) ap->grad[i] += g;
  });
}

template <class T>
Var<T> mean_all(const Var<T>& a) {
  int64_t m = a->value.numel();
  T s = 0;
  for (int64_t i = 0; i < m; ++i) s += a->value[i];
  s /= static_cast<T>(m);
  auto ap = a;
  return detail::make_op<T>(Arr<T>::scalar(s), {a}, [ap, m](Node<T>& n) {
    ensure_grad(*ap);
    T g = n.grad[0] / static_cast<T>(m);
    for (int64_t i = 0; i < ap->grad.numel(); ++i) ap->grad[i] += g;
  });
}

// Mean over rows of a [B][M] matrix -> [M].
template <class T>
Var<T> mean_dim0(const Var<T>& a) {
  if (a->value.ndim() != 2) raise(ErrorKind::Shape, "mean_dim0: want 2-d");
  int64_t b = a->value.dim(0), m = a->value.dim(1);
  Arr<T> out({m});
  for (int64_t i = 0; i < b; ++i)
    for (int64_t j = 0; j < m; ++j) out[j] += a->value[i * m + j];
  for (int64_t j = 0; j < m; ++j) out[j] /= static_cast<T>(b);
  auto ap = a;
  return detail::make_op<T>(std::move(out), {a}, [ap, b, m](Node<T>& n) {
    ensure_grad(*ap);
    for (int64_t i = 0; i < b; ++i)
      for (int64_t j = 0; j < m; ++j)
        ap->grad[i * m + j] += n.grad[j] / static_cast<T>(b);
  });
}

template <class T>
Var<T> reshape(const Var<T>& a, std::vector<int64_t> shape) {
  if (Arr<T>::numel_of(shape) != a->value.numel())
    raise(ErrorKind::Shape, "reshape: numel mismatch");
  Arr<T> out(std::move(shape), a->value.v);
  auto ap = a;
  return detail::make_op<T>(std::move(out), {a}, [ap](Node<T>& n) {
    ensure_grad(*ap);
    for (int64_t i = 0; i < n.grad.numel(); ++i) ap->grad[i] += n.grad[i];
  });
}

// Rows [lo, hi) of a 2-d matrix.
template <class T>
Var<T> slice_rows(const Var<T>& a, int64_t lo, int64_t hi) {
  if (a->value.ndim() != 2) raise(ErrorKind::Shape, "slice_rows: 2-d");
  int64_t n = a->value.dim(0), d = a->value.dim(1);
  if (lo < 0 || hi > n || lo >= hi)
    raise(ErrorKind::Shape, "slice_rows: bad range");
  Arr<T> out({hi - lo, d});
  std::copy(a->value.data() + lo * d, a->value.data() + hi * d, out.data());
  auto ap = a;
  return detail::make_op<T>(std::move(out), {a}, [ap, lo, d](Node<T>& nd) {
    ensure_grad(*ap);
    for (int64_t i = 0; i < nd.grad.numel(); ++i)
      ap->grad[lo * d + i] += nd.grad[i];
  });
}

// Concatenate two [N][*] matrices along the feature axis.
template <class T>
Var<T> concat_cols(const Var<T>& a, const Var<T>& b) {
  if (a->value.ndim() != 2 || b->value.ndim() != 2 ||
      a->value.dim(0) != b->value.dim(0))
    raise(ErrorKind::Shape, "concat_cols: want [N][p], [N][q]");
  int64_t n = a->value.dim(0), p = a->value.dim(1), q = b->value.dim(1);
  Arr<T> out({n, p + q});
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < p; ++j) out[i * (p + q) + j] = a->value[i * p + j];
    for (int64_t j = 0; j < q; ++j)
      out[i * (p + q) + p + j] = b->value[i * q + j];
  }
  auto ap = a, bp = b;
  return detail::make_op<T>(std::move(out), {a, b}, [ap, bp, n, p, q](Node<T>& nd) {
    if (ap->requires_grad) {
      ensure_grad(*ap);
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < p; ++j)
          ap->grad[i * p + j] += nd.grad[i * (p + q) + j];
    }
    if (bp->requires_grad) {
      ensure_grad(*bp);
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < q; ++j)
          bp->grad[i * q + j] += nd.grad[i * (p + q) + p + j];
    }
  });
}

// ---------------------------------------------------------------------------
// row softmaxes and label selection
// ---------------------------------------------------------------------------

template <class T>
Var<T> row_log_softmax(const Var<T>& a) {
  if (a->value.ndim() != 2) raise(ErrorKind::Shape, "row_log_softmax: 2-d");
  int64_t n = a->value.dim(0), m = a->value.dim(1);
  Arr<T> out = a->value;
  for (int64_t i = 0; i < n; ++i) {
    T* row = out.data() + i * m;
    T mx = row[0];
    for (int64_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
    T s = 0;
    for (int64_t j = 0; j < m; ++j) s += std::exp(row[j] - mx);
    T lse = mx + std::log(s);
    for (int64_t j = 0; j < m; ++j) row[j] -= lse;
  }
  auto ap = a;
  return detail::make_op<T>(std::move(out), {a}, [ap, n, m](Node<T>& nd) {
    ensure_grad(*ap);
    for (int64_t i = 0; i < n; ++i) {
      T gsum = 0;
      for (int64_t j = 0; j < m; ++j) gsum += nd.grad[i * m + j];
      for (int64_t j = 0; j < m; ++j)
        ap->grad[i * m + j] +=
            nd.grad[i * m + j] - std::exp(nd.value[i * m + j]) * gsum;
    }
  });
}

template <class T>
Var<T> row_softmax(const Var<T>& a) {
  if (a->value.ndim() != 2) raise(ErrorKind::Shape, "row_softmax: 2-d");
  int64_t n = a->value.dim(0), m = a->value.dim(1);
  Arr<T> out = a->value;
  for (int64_t i = 0; i < n; ++i) {
    T* row = out.data() + i * m;
    T mx = row[0];
    for (int64_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
    T s = 0;
    for (int64_t j = 0; j < m; ++j) {
      row[j] = std::exp(row[j] - mx);
      s += row[j];
    }
    for (int64_t j = 0; j < m; ++j) row[j] /= s;
  }
  auto ap = a;
  return detail::make_op<T>(std::move(out), {a}, [ap, n, m](Node<T>& nd) {
    ensure_grad(*ap);
    for (int64_t i = 0; i < n; ++i) {
      T dot = 0;
      for (int64_t j = 0; j < m; ++j)
        dot += nd.grad[i * m + j] * nd.value[i * m + j];
      for (int64_t j = 0; j < m; ++j)
        ap->grad[i * m + j] +=
            nd.value[i * m + j] * (nd.grad[i * m + j] - dot);
    }
  });
}

enum class Reduction { Sum, Mean };

// Negative log likelihood of per-row labels over a log-probability matrix.
template <class T>
Var<T> nll_rows(const Var<T>& logp, const std::vector<int>& labels,
                Reduction red) {
  if (logp->value.ndim() != 2) raise(ErrorKind::Shape, "nll_rows: 2-d");
  int64_t n = logp->value.dim(0), m = logp->value.dim(1);
  if (static_cast<int64_t>(labels.size()) != n)
    raise(ErrorKind::Contract, "nll_rows: label count mismatch");
  T s = 0;
  for (int64_t i = 0; i < n; ++i) {
    int l = labels[i];
    if (l < 0 || l >= m) raise(ErrorKind::Contract, "nll_rows: label range");
    s -= logp->value[i * m + l];
  }
  T w = red == Reduction::Mean ? T(1) / static_cast<T>(n) : T(1);
  s *= w;
  auto lp = logp;
  auto labels_copy = labels;
  return detail::make_op<T>(
      Arr<T>::scalar(s), {logp}, [lp, labels_copy, m, w](Node<T>& nd) {
        ensure_grad(*lp);
        T g = nd.grad[0] * w;
        for (size_t i = 0; i < labels_copy.size(); ++i)
          lp->grad[static_cast<int64_t>(i) * m + labels_copy[i]] -= g;
      });
}

// ---------------------------------------------------------------------------
// metric-learning ops
// ---------------------------------------------------------------------------

// Per-class arithmetic mean of feature rows; labels are 0..n_classes-1 and
// every class must occur.
template <class T>
Var<T> segment_mean_rows(const Var<T>& x, const std::vector<int>& labels,
                         int n_classes) {
  if (x->value.ndim() != 2) raise(ErrorKind::Shape, "segment_mean_rows: 2-d");
  int64_t n = x->value.dim(0), d = x->value.dim(1);
  if (static_cast<int64_t>(labels.size()) != n)
    raise(ErrorKind::Contract, "segment_mean_rows: label count mismatch");
  std::vector<int64_t> count(n_classes, 0);
  for (int l : labels) {
    if (l < 0 || l >= n_classes)
      raise(ErrorKind::Contract, "segment_mean_rows: label range");
    ++count[l];
  }
  for (int c = 0; c < n_classes; ++c)
    if (count[c] == 0)
      raise(ErrorKind::Contract,
            "segment_mean_rows: class " + std::to_string(c) + " missing");
  Arr<T> out({n_classes, d});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j)
      out[labels[i] * d + j] += x->value[i * d + j];
  for (int c = 0; c < n_classes; ++c)
    for (int64_t j = 0; j < d; ++j)
      out[c * d + j] /= static_cast<T>(count[c]);
  auto xp = x;
  auto labels_copy = labels;
  return detail::make_op<T>(
      std::move(out), {x}, [xp, labels_copy, d, count](Node<T>& nd) {
        ensure_grad(*xp);
        for (size_t i = 0; i < labels_copy.size(); ++i) {
          int c = labels_copy[i];
          T inv = T(1) / static_cast<T>(count[c]);
          for (int64_t j = 0; j < d; ++j)
            xp->grad[static_cast<int64_t>(i) * d + j] +=
                nd.grad[c * d + j] * inv;
        }
      });
}

// Pairwise distances between query rows and prototype rows: out[i][j] =
// ||q_i - p_j|| (or the squared form). The unsquared backward clamps the
// norm away from zero.
template <class T>
Var<T> pairwise_dist(const Var<T>& q, const Var<T>& p, bool squared) {
  if (q->value.ndim() != 2 || p->value.ndim() != 2 ||
      q->value.dim(1) != p->value.dim(1))
    raise(ErrorKind::Shape, "pairwise_dist: want [q][d], [N][d]");
  int64_t nq = q->value.dim(0), np = p->value.dim(0), d = q->value.dim(1);
  Arr<T> out({nq, np});
  for (int64_t i = 0; i < nq; ++i)
    for (int64_t j = 0; j < np; ++j) {
      T s = 0;
      const T* qi = q->value.data() + i * d;
      const T* pj = p->value.data() + j * d;
      for (int64_t k = 0; k < d; ++k) {
        T diff = qi[k] - pj[k];
        s += diff * diff;
      }
      out[i * np + j] = squared ? s : std::sqrt(s);
    }
  auto qp = q, pp = p;
  return detail::make_op<T>(
      std::move(out), {q, p}, [qp, pp, nq, np, d, squared](Node<T>& nd) {
        const T eps = static_cast<T>(1e-12);
        if (qp->requires_grad) ensure_grad(*qp);
        if (pp->requires_grad) ensure_grad(*pp);
        for (int64_t i = 0; i < nq; ++i)
          for (int64_t j = 0; j < np; ++j) {
            T g = nd.grad[i * np + j];
            if (g == T(0)) continue;
            T coeff = squared
                          ? T(2) * g
                          : g / std::max(nd.value[i * np + j], eps);
            const T* qi = qp->value.data() + i * d;
            const T* pj = pp->value.data() + j * d;
            for (int64_t k = 0; k < d; ++k) {
              T diff = coeff * (qi[k] - pj[k]);
              if (qp->requires_grad) qp->grad[i * d + k] += diff;
              if (pp->requires_grad) pp->grad[j * d + k] -= diff;
            }
          }
      });
}

// ---------------------------------------------------------------------------
// linear layer
// ---------------------------------------------------------------------------

// y[N][out] = x[N][in] * w[out][in]^T + b[out]
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  if (x->value.ndim() != 2 || w->value.ndim() != 2)
    raise(ErrorKind::Shape, "linear: want 2-d input and weight");
  int64_t n = x->value.dim(0), in = x->value.dim(1);
  int64_t out = w->value.dim(0);
  if (w->value.dim(1) != in || b->value.numel() != out)
    raise(ErrorKind::Shape, "linear: weight/bias shape mismatch");
  Arr<T> y({n, out});
  detail::gemm_nt(y.data(), x->value.data(), w->value.data(), n, out, in,
                  false);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < out; ++j) y[i * out + j] += b->value[j];
  auto xp = x, wp = w, bp = b;
  return detail::make_op<T>(
      std::move(y), {x, w, b}, [xp, wp, bp, n, in, out](Node<T>& nd) {
        if (xp->requires_grad) {
          ensure_grad(*xp);
          detail::gemm_nn(xp->grad.data(), nd.grad.data(), wp->value.data(),
                          n, in, out, true);
        }
        if (wp->requires_grad) {
          ensure_grad(*wp);
          detail::gemm_tn(wp->grad.data(), nd.grad.data(), xp->value.data(),
                          out, in, n, true);
        }
        if (bp->requires_grad) {
          ensure_grad(*bp);
          for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < out; ++j)
              bp->grad[j] += nd.grad[i * out + j];
        }
      });
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

struct ConvSpec {
  int64_t stride_h = 1, stride_w = 1;
  int64_t pad_h = 0, pad_w = 0;
};

namespace detail {

inline int64_t conv_out(int64_t in, int64_t k, int64_t stride, int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// Per-sample column buffer: col[p][k] with p = oy*OW + ox and
// k = (c*KH + ki)*KW + kj. Convolutions fuse im2col and GEMM one sample at a
// time so the column data stays cache-resident; the batch is parallelized
// across threads and per-thread weight-gradient partials are reduced in
// thread order.
template <class T>
void im2col_sample(const Arr<T>& x, int64_t n, int64_t kh, int64_t kw,
                   const ConvSpec& s, T* col) {
  int64_t C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int64_t OH = conv_out(H, kh, s.stride_h, s.pad_h);
  int64_t OW = conv_out(W, kw, s.stride_w, s.pad_w);
  const T* xs = x.data() + n * C * H * W;
  for (int64_t oy = 0; oy < OH; ++oy)
    for (int64_t ox = 0; ox < OW; ++ox) {
      T* dst = col + (oy * OW + ox) * C * kh * kw;
      for (int64_t c = 0; c < C; ++c)
        for (int64_t ki = 0; ki < kh; ++ki) {
          int64_t iy = oy * s.stride_h - s.pad_h + ki;
          T* drow = dst + (c * kh + ki) * kw;
          if (iy < 0 || iy >= H) {
            for (int64_t kj = 0; kj < kw; ++kj) drow[kj] = T(0);
            continue;
          }
          const T* srow = xs + (c * H + iy) * W;
          for (int64_t kj = 0; kj < kw; ++kj) {
            int64_t ix = ox * s.stride_w - s.pad_w + kj;
            drow[kj] = (ix >= 0 && ix < W) ? srow[ix] : T(0);
          }
        }
    }
}

template <class T>
void col2im_sample_add(const T* col, int64_t n, int64_t kh, int64_t kw,
                       const ConvSpec& s, Arr<T>& dx) {
  int64_t C = dx.dim(1), H = dx.dim(2), W = dx.dim(3);
  int64_t OH = conv_out(H, kh, s.stride_h, s.pad_h);
  int64_t OW = conv_out(W, kw, s.stride_w, s.pad_w);
  T* xs = dx.data() + n * C * H * W;
  for (int64_t oy = 0; oy < OH; ++oy)
    for (int64_t ox = 0; ox < OW; ++ox) {
      const T* src = col + (oy * OW + ox) * C * kh * kw;
      for (int64_t c = 0; c < C; ++c)
        for (int64_t ki = 0; ki < kh; ++ki) {
          int64_t iy = oy * s.stride_h - s.pad_h + ki;
          if (iy < 0 || iy >= H) continue;
          const T* srow = src + (c * kh + ki) * kw;
          T* drow = xs + (c * H + iy) * W;
          for (int64_t kj = 0; kj < kw; ++kj) {
            int64_t ix = ox * s.stride_w - s.pad_w + kj;
            if (ix >= 0 && ix < W) drow[ix] += srow[kj];
          }
        }
    }
}

}  // namespace detail

// x [N][C][H][W], w [OC][C][KH][KW], b [OC] -> y [N][OC][OH][OW].
// Column buffers are rebuilt in the backward pass instead of being saved.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b,
              const ConvSpec& spec) {
  if (x->value.ndim() != 4 || w->value.ndim() != 4)
    raise(ErrorKind::Shape, "conv2d: want 4-d input and weight");
  int64_t N = x->value.dim(0), C = x->value.dim(1);
  int64_t H = x->value.dim(2), W = x->value.dim(3);
  int64_t OC = w->value.dim(0), KH = w->value.dim(2), KW = w->value.dim(3);
  if (w->value.dim(1) != C)
    raise(ErrorKind::Shape, "conv2d: channel mismatch (got " +
                                std::to_string(C) + " channels, weight wants " +
                                std::to_string(w->value.dim(1)) + ")");
  if (b->value.numel() != OC) raise(ErrorKind::Shape, "conv2d: bias size");
  int64_t OH = detail::conv_out(H, KH, spec.stride_h, spec.pad_h);
  int64_t OW = detail::conv_out(W, KW, spec.stride_w, spec.pad_w);
  if (OH <= 0 || OW <= 0) raise(ErrorKind::Shape, "conv2d: empty output");
  int64_t K = C * KH * KW, OHW = OH * OW;

  Arr<T> y({N, OC, OH, OW});
#pragma omp parallel
  {
    std::unique_ptr<T[]> col(new T[static_cast<size_t>(OHW) * K]);
    std::unique_ptr<T[]> out(new T[static_cast<size_t>(OHW) * OC]);
#pragma omp for schedule(static)
    for (int64_t n = 0; n < N; ++n) {
      detail::im2col_sample(x->value, n, KH, KW, spec, col.get());
      // out[p][oc] = col[p][k] * w[oc][k], in the wide (OC x OHW) view
      detail::MapCM<T> out_cm(out.get(), OC, OHW);
      detail::CMapCM<T> w_cm(w->value.data(), K, OC);
      detail::CMapCM<T> col_cm(col.get(), K, OHW);
      out_cm.noalias() = w_cm.transpose() * col_cm;
      for (int64_t oc = 0; oc < OC; ++oc) {
        T* dst = y.data() + (n * OC + oc) * OHW;
        T bias = b->value[oc];
        const T* src = out.get() + oc;
        for (int64_t q = 0; q < OHW; ++q) dst[q] = src[q * OC] + bias;
      }
    }
  }

  auto xp = x, wp = w, bp = b;
  return detail::make_op<T>(
      std::move(y), {x, w, b},
      [xp, wp, bp, spec, N, OC, KH, KW, OH, OW, K](Node<T>& nd) {
        int64_t OHW = OH * OW;
        if (bp->requires_grad) ensure_grad(*bp);
        if (wp->requires_grad) ensure_grad(*wp);
        if (xp->requires_grad) ensure_grad(*xp);
        int max_threads = 1;
#ifdef _OPENMP
        max_threads = omp_get_max_threads();
#endif
        // per-thread partials, reduced in thread order afterwards
        std::vector<std::vector<double>> dw_part, db_part;
        if (wp->requires_grad)
          dw_part.assign(max_threads, std::vector<double>(OC * K, 0.0));
        if (bp->requires_grad)
          db_part.assign(max_threads, std::vector<double>(OC, 0.0));
#pragma omp parallel
        {
          int tid = 0;
#ifdef _OPENMP
          tid = omp_get_thread_num();
#endif
          std::unique_ptr<T[]> buf(new T[static_cast<size_t>(OHW) * K]);
          std::unique_ptr<T[]> dw_local(
              wp->requires_grad ? new T[static_cast<size_t>(OC) * K] : nullptr);
#pragma omp for schedule(static)
          for (int64_t n = 0; n < N; ++n) {
            // the sample's NCHW gradient plane [OC][OHW] feeds the products
            // directly through its (OHW x OC) column-major view
            detail::CMapCM<T> dy_cm(nd.grad.data() + n * OC * OHW, OHW, OC);
            if (bp->requires_grad) {
              for (int64_t oc = 0; oc < OC; ++oc) {
                const T* src = nd.grad.data() + (n * OC + oc) * OHW;
                double s = 0;
                for (int64_t q = 0; q < OHW; ++q) s += src[q];
                db_part[tid][oc] += s;
              }
            }
            if (wp->requires_grad) {
              detail::im2col_sample(xp->value, n, KH, KW, spec, buf.get());
              // dW partial in the (K x OC) view of an [OC][K] buffer
              detail::MapCM<T> dw_cm(dw_local.get(), K, OC);
              detail::CMapCM<T> col_cm(buf.get(), K, OHW);
              dw_cm.noalias() = col_cm * dy_cm;
              auto& acc = dw_part[tid];
              for (int64_t i = 0; i < OC * K; ++i) acc[i] += dw_local[i];
            }
            if (xp->requires_grad) {
              // dcol[p][k] = dy^T * w, computed in the (K x OHW) view
              detail::MapCM<T> dcol_cm(buf.get(), K, OHW);
              detail::CMapCM<T> w_cm(wp->value.data(), K, OC);
              dcol_cm.noalias() = w_cm * dy_cm.transpose();
              detail::col2im_sample_add(buf.get(), n, KH, KW, spec, xp->grad);
            }
          }
        }
        if (bp->requires_grad)
          for (int t = 0; t < max_threads; ++t)
            for (int64_t oc = 0; oc < OC; ++oc)
              bp->grad[oc] += static_cast<T>(db_part[t][oc]);
        if (wp->requires_grad) {
          // the (K x OC) column-major view shares memory with [OC][K] rows
          for (int t = 0; t < max_threads; ++t)
            for (int64_t i = 0; i < OC * K; ++i)
              wp->grad[i] += static_cast<T>(dw_part[t][i]);
        }
      });
}

// 2x2 stride-2 max pooling (floor mode).
template <class T>
Var<T> maxpool2x2(const Var<T>& x) {
  if (x->value.ndim() != 4) raise(ErrorKind::Shape, "maxpool2x2: 4-d");
  int64_t N = x->value.dim(0), C = x->value.dim(1);
  int64_t H = x->value.dim(2), W = x->value.dim(3);
  int64_t OH = H / 2, OW = W / 2;
  if (OH == 0 || OW == 0) raise(ErrorKind::Shape, "maxpool2x2: too small");
  Arr<T> y({N, C, OH, OW});
  auto arg = std::make_shared<std::vector<int64_t>>(N * C * OH * OW);
#pragma omp parallel for schedule(static)
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* src = x->value.data() + nc * H * W;
    T* dst = y.data() + nc * OH * OW;
    int64_t* am = arg->data() + nc * OH * OW;
    for (int64_t oy = 0; oy < OH; ++oy)
      for (int64_t ox = 0; ox < OW; ++ox) {
        int64_t base = (2 * oy) * W + 2 * ox;
        int64_t best = base;
        T bv = src[base];
        for (int64_t dy = 0; dy < 2; ++dy)
          for (int64_t dx = 0; dx < 2; ++dx) {
            int64_t idx = base + dy * W + dx;
            if (src[idx] > bv) {
              bv = src[idx];
              best = idx;
            }
          }
        dst[oy * OW + ox] = bv;
        am[oy * OW + ox] = nc * H * W + best;
      }
  }
  auto xp = x;
  return detail::make_op<T>(std::move(y), {x}, [xp, arg](Node<T>& nd) {
    ensure_grad(*xp);
    for (int64_t i = 0; i < nd.grad.numel(); ++i)
      xp->grad[(*arg)[i]] += nd.grad[i];
  });
}

// ---------------------------------------------------------------------------
// batch norm
// ---------------------------------------------------------------------------

// Normalizes [N][C][H][W] over (N, H, W) per channel. In training mode the
// batch statistics are used and the running buffers are updated in place; in
// inference mode the running buffers are used, which makes the forward pass
// batch-size invariant.
template <class T>
Var<T> batchnorm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                 Arr<T>* running_mean, Arr<T>* running_var, bool training,
                 T momentum = T(0.1), T eps = T(1e-5)) {
  if (x->value.ndim() != 4) raise(ErrorKind::Shape, "batchnorm: 4-d");
  int64_t N = x->value.dim(0), C = x->value.dim(1);
  int64_t H = x->value.dim(2), W = x->value.dim(3);
  if (gamma->value.numel() != C || beta->value.numel() != C ||
      running_mean->numel() != C || running_var->numel() != C)
    raise(ErrorKind::Shape, "batchnorm: channel parameter mismatch");
  int64_t HW = H * W;
  int64_t m = N * HW;

  Arr<T> mean({C}), invstd({C});
  if (training) {
    for (int64_t c = 0; c < C; ++c) {
      double s = 0;
      for (int64_t n = 0; n < N; ++n) {
        const T* p = x->value.data() + (n * C + c) * HW;
        for (int64_t q = 0; q < HW; ++q) s += p[q];
      }
      double mu = s / m;
      double v = 0;
      for (int64_t n = 0; n < N; ++n) {
        const T* p = x->value.data() + (n * C + c) * HW;
        for (int64_t q = 0; q < HW; ++q) {
          double d = p[q] - mu;
          v += d * d;
        }
      }
      v /= m;
      mean[c] = static_cast<T>(mu);
      invstd[c] = static_cast<T>(1.0 / std::sqrt(v + static_cast<double>(eps)));
      double unbiased = m > 1 ? v * m / (m - 1) : v;
      (*running_mean)[c] = (T(1) - momentum) * (*running_mean)[c] +
                           momentum * static_cast<T>(mu);
      (*running_var)[c] = (T(1) - momentum) * (*running_var)[c] +
                          momentum * static_cast<T>(unbiased);
    }
  } else {
    for (int64_t c = 0; c < C; ++c) {
      mean[c] = (*running_mean)[c];
      invstd[c] = T(1) / std::sqrt((*running_var)[c] + eps);
    }
  }

  Arr<T> y({N, C, H, W});
#pragma omp parallel for schedule(static)
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* p = x->value.data() + (n * C + c) * HW;
      T* q = y.data() + (n * C + c) * HW;
      T mu = mean[c], is = invstd[c], g = gamma->value[c], bb = beta->value[c];
      for (int64_t i = 0; i < HW; ++i) q[i] = g * (p[i] - mu) * is + bb;
    }

  auto xp = x, gp = gamma, bp = beta;
  auto mean_s = std::make_shared<Arr<T>>(std::move(mean));
  auto invstd_s = std::make_shared<Arr<T>>(std::move(invstd));
  return detail::make_op<T>(
      std::move(y), {x, gamma, beta},
      [xp, gp, bp, mean_s, invstd_s, N, C, HW, m, training](Node<T>& nd) {
        for (int64_t c = 0; c < C; ++c) {
          T mu = (*mean_s)[c], is = (*invstd_s)[c];
          double dg = 0, db = 0;
          for (int64_t n = 0; n < N; ++n) {
            const T* gr = nd.grad.data() + (n * C + c) * HW;
            const T* xv = xp->value.data() + (n * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) {
              db += gr[i];
              dg += gr[i] * (xv[i] - mu) * is;
            }
          }
          if (gp->requires_grad) {
            ensure_grad(*gp);
            gp->grad[c] += static_cast<T>(dg);
          }
          if (bp->requires_grad) {
            ensure_grad(*bp);
            bp->grad[c] += static_cast<T>(db);
          }
          if (xp->requires_grad) {
            ensure_grad(*xp);
            T g = gp->value[c];
            if (training) {
              T k1 = g * is / static_cast<T>(m);
              for (int64_t n = 0; n < N; ++n) {
                const T* gr = nd.grad.data() + (n * C + c) * HW;
                const T* xv = xp->value.data() + (n * C + c) * HW;
                T* dx = xp->grad.data() + (n * C + c) * HW;
                for (int64_t i = 0; i < HW; ++i) {
                  T xhat = (xv[i] - mu) * is;
                  dx[i] += k1 * (static_cast<T>(m) * gr[i] -
                                 static_cast<T>(db) - xhat * static_cast<T>(dg));
                }
              }
            } else {
              T k = g * is;
              for (int64_t n = 0; n < N; ++n) {
                const T* gr = nd.grad.data() + (n * C + c) * HW;
                T* dx = xp->grad.data() + (n * C + c) * HW;
                for (int64_t i = 0; i < HW; ++i) dx[i] += k * gr[i];
              }
            }
          }
        }
      });
}

// Inverted dropout; identity in inference mode.
template <class T>
Var<T> dropout(const Var<T>& x, double p, bool training, Rng& rng) {
  if (!training || p <= 0.0) return x;
  if (p >= 1.0) raise(ErrorKind::Config, "dropout: p must be < 1");
  T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  auto mask = std::make_shared<Arr<T>>(x->value.shape);
  Arr<T> y = x->value;
  for (int64_t i = 0; i < y.numel(); ++i) {
    T mi = rng.bernoulli(p) ? T(0) : keep_scale;
    (*mask)[i] = mi;
    y[i] *= mi;
  }
  auto xp = x;
  return detail::make_op<T>(std::move(y), {x}, [xp, mask](Node<T>& nd) {
    ensure_grad(*xp);
    for (int64_t i = 0; i < nd.grad.numel(); ++i)
      xp->grad[i] += nd.grad[i] * (*mask)[i];
  });
}

}  // namespace ag
}  // namespace s4l
