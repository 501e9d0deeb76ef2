#pragma once

// Scalar training objectives. Episode losses sum over queries; the RM task
// averages over instances; masked reconstruction averages over samples and
// bands alike. All logarithms are natural and clamped below at 1e-8.

#include <cmath>
#include <vector>

#include "s4l/autograd.hpp"

namespace s4l {
namespace losses {

constexpr double kLogEps = 1e-8;

// Per-class arithmetic mean of support features, class order = local labels.
template <class T>
ag::Var<T> class_prototypes(const ag::Var<T>& features,
                            const std::vector<int>& local_labels, int ways) {
  return ag::segment_mean_rows(features, local_labels, ways);
}

// Rows of log softmax over negative Euclidean distances to the prototypes.
// The squared-distance variant is kept behind a flag for ablation.
template <class T>
ag::Var<T> proto_log_probs(const ag::Var<T>& query_feats,
                           const ag::Var<T>& protos, bool squared = false) {
  auto d = ag::pairwise_dist(query_feats, protos, squared);
  return ag::row_log_softmax(ag::neg(d));
}

// Sum over queries of -log p(true class).
template <class T>
ag::Var<T> fsl_episode_loss(const ag::Var<T>& log_probs,
                            const std::vector<int>& true_local_labels) {
  return ag::nll_rows(log_probs, true_local_labels, ag::Reduction::Sum);
}

// Mean cross entropy over transform predictions; labels use the 1-based
// transform ids.
template <class T>
ag::Var<T> rm_loss(const ag::Var<T>& logits, const std::vector<int>& labels) {
  int64_t ways = logits->value.dim(1);
  std::vector<int> zero_based(labels.size());
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 1 || labels[i] > ways)
      raise(ErrorKind::Contract, "rm label out of range");
    zero_based[i] = labels[i] - 1;
  }
  return ag::nll_rows(ag::row_log_softmax(logits), zero_based,
                      ag::Reduction::Mean);
}

// Mean over samples of the per-band mean squared error; the error covers all
// bands, masked and visible alike.
template <class T>
ag::Var<T> mr_loss(const ag::Var<T>& target, const ag::Var<T>& recon) {
  if (!target->value.same_shape(recon->value))
    raise(ErrorKind::Contract, "mr_loss: shape mismatch");
  auto diff = ag::sub(recon, target);
  return ag::mean_all(ag::mul(diff, diff));
}

template <class T>
void check_prob_rows(const Arr<T>& z) {
  if (z.ndim() != 2) raise(ErrorKind::Contract, "probability matrix must be 2-d");
  int64_t n = z.dim(0), m = z.dim(1);
  for (int64_t i = 0; i < n; ++i) {
    double sum = 0;
    for (int64_t j = 0; j < m; ++j) {
      double v = z[i * m + j];
      if (v < -1e-6) raise(ErrorKind::Contract, "negative probability entry");
      sum += v;
    }
    if (std::fabs(sum - 1.0) > 1e-5)
      raise(ErrorKind::Contract, "probability row does not sum to 1");
  }
}

namespace detail {

// L(a||b) = mean_i KL(a_i||b_i) + mean_i H(a_i) - H(mean_i a_i)
template <class T>
ag::Var<T> consistency_directed(const ag::Var<T>& a, const ag::Var<T>& b) {
  T inv_rows = T(1) / static_cast<T>(a->value.dim(0));
  auto la = ag::log_clamped(a, static_cast<T>(kLogEps));
  auto lb = ag::log_clamped(b, static_cast<T>(kLogEps));
  auto kl = ag::scale(ag::sum_all(ag::mul(a, ag::sub(la, lb))), inv_rows);
  auto sharpness = ag::scale(ag::sum_all(ag::mul(a, la)), -inv_rows);
  auto m = ag::mean_dim0(a);
  auto neg_diversity = ag::sum_all(
      ag::mul(m, ag::log_clamped(m, static_cast<T>(kLogEps))));
  return ag::add(ag::add(kl, sharpness), neg_diversity);
}

}  // namespace detail

// Symmetrized view-consistency loss with sharpness and diversity terms.
template <class T>
ag::Var<T> sslcl_loss(const ag::Var<T>& z1, const ag::Var<T>& z2) {
  if (!z1->value.same_shape(z2->value))
    raise(ErrorKind::Contract, "sslcl_loss: shape mismatch");
  check_prob_rows(z1->value);
  check_prob_rows(z2->value);
  auto l12 = detail::consistency_directed(z1, z2);
  auto l21 = detail::consistency_directed(z2, z1);
  return ag::scale(ag::add(l12, l21), T(0.5));
}

// Stage totals are unweighted sums of the two per-stage components.
template <class T>
ag::Var<T> stage_total(const ag::Var<T>& fsl_term, const ag::Var<T>& ssl_term) {
  return ag::add(fsl_term, ssl_term);
}

}  // namespace losses
}  // namespace s4l
