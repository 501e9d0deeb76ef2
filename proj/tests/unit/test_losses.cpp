#include <doctest.h>

#include <cmath>

#include "s4l/losses.hpp"

using namespace s4l;
using ag::Var;

// Brute-force oracles, written as straight loops independent of the graph
// implementations they check.
namespace oracle {

std::vector<double> prototypes(const Arr<double>& feats,
                               const std::vector<int>& labels, int ways) {
  int64_t n = feats.dim(0), d = feats.dim(1);
  std::vector<double> sum(ways * d, 0.0);
  std::vector<int> count(ways, 0);
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < d; ++j) sum[labels[i] * d + j] += feats[i * d + j];
    ++count[labels[i]];
  }
  for (int c = 0; c < ways; ++c)
    for (int64_t j = 0; j < d; ++j) sum[c * d + j] /= count[c];
  return sum;
}

std::vector<double> softmax_of_neg_distances(const Arr<double>& q,
                                             const std::vector<double>& protos,
                                             int ways, bool squared) {
  int64_t nq = q.dim(0), d = q.dim(1);
  std::vector<double> probs(nq * ways);
  for (int64_t i = 0; i < nq; ++i) {
    std::vector<double> e(ways);
    double z = 0.0;
    for (int c = 0; c < ways; ++c) {
      double s = 0.0;
      for (int64_t j = 0; j < d; ++j) {
        double diff = q[i * d + j] - protos[c * d + j];
        s += diff * diff;
      }
      double dist = squared ? s : std::sqrt(s);
      e[c] = std::exp(-dist);
      z += e[c];
    }
    for (int c = 0; c < ways; ++c) probs[i * ways + c] = e[c] / z;
  }
  return probs;
}

double episode_nll(const std::vector<double>& probs, int ways,
                   const std::vector<int>& labels) {
  double loss = 0.0;
  for (size_t i = 0; i < labels.size(); ++i)
    loss -= std::log(probs[i * ways + labels[i]]);
  return loss;
}

double cross_entropy_mean(const Arr<double>& logits,
                          const std::vector<int>& labels_one_based) {
  int64_t n = logits.dim(0), m = logits.dim(1);
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double z = 0.0;
    for (int64_t j = 0; j < m; ++j) z += std::exp(logits[i * m + j]);
    total -= std::log(std::exp(logits[i * m + labels_one_based[i] - 1]) / z);
  }
  return total / n;
}

double mse(const Arr<double>& x, const Arr<double>& xhat) {
  double s = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    double d = x[i] - xhat[i];
    s += d * d;
  }
  return s / x.numel();
}

double entropy(const double* p, int64_t n) {
  double h = 0.0;
  for (int64_t i = 0; i < n; ++i) h -= p[i] * std::log(std::max(p[i], 1e-8));
  return h;
}

double kl(const double* a, const double* b, int64_t n) {
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i)
    s += a[i] * (std::log(std::max(a[i], 1e-8)) - std::log(std::max(b[i], 1e-8)));
  return s;
}

double directed(const Arr<double>& z1, const Arr<double>& z2) {
  int64_t bs = z1.dim(0), n = z1.dim(1);
  double kl_term = 0.0, sharp = 0.0;
  std::vector<double> mean(n, 0.0);
  for (int64_t i = 0; i < bs; ++i) {
    kl_term += kl(z1.data() + i * n, z2.data() + i * n, n);
    sharp += entropy(z1.data() + i * n, n);
    for (int64_t j = 0; j < n; ++j) mean[j] += z1[i * n + j] / bs;
  }
  return kl_term / bs + sharp / bs - entropy(mean.data(), n);
}

double sslcl(const Arr<double>& z1, const Arr<double>& z2) {
  return 0.5 * (directed(z1, z2) + directed(z2, z1));
}

}  // namespace oracle

namespace {

Arr<double> random_arr(std::vector<int64_t> shape, Rng& rng, double scale = 1.0) {
  Arr<double> a(std::move(shape));
  for (int64_t i = 0; i < a.numel(); ++i) a[i] = scale * rng.normal();
  return a;
}

Arr<double> random_prob_rows(int64_t rows, int64_t cols, Rng& rng) {
  Arr<double> z({rows, cols});
  for (int64_t i = 0; i < rows; ++i) {
    double sum = 0.0;
    for (int64_t j = 0; j < cols; ++j) {
      z[i * cols + j] = std::exp(rng.normal());
      sum += z[i * cols + j];
    }
    for (int64_t j = 0; j < cols; ++j) z[i * cols + j] /= sum;
  }
  return z;
}

std::vector<int> random_labels(int64_t n, int ways, Rng& rng,
                               bool all_present = false) {
  std::vector<int> labels(n);
  if (all_present)
    for (int64_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % ways);
  else
    for (int64_t i = 0; i < n; ++i)
      labels[i] = static_cast<int>(rng.uniform_int(ways));
  return labels;
}

}  // namespace

TEST_SUITE_BEGIN("losses");

TEST_CASE("class_prototypes: trivial anchors and brute-force agreement") {
  SUBCASE("one-shot prototype equals its support feature") {
    auto f = ag::constant(Arr<double>({2, 3}, {1, 2, 3, 4, 5, 6}));
    auto p = losses::class_prototypes(f, {0, 1}, 2);
    for (int64_t i = 0; i < 6; ++i) CHECK(p->value[i] == f->value[i]);
  }
  SUBCASE("two features average") {
    auto f = ag::constant(Arr<double>({2, 2}, {0, 0, 2, 4}));
    auto p = losses::class_prototypes(f, {0, 0}, 1);
    CHECK(p->value[0] == 1.0);
    CHECK(p->value[1] == 2.0);
  }
  SUBCASE("random against accumulate/divide oracle") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      auto feats = random_arr({64, 16}, rng);
      auto labels = random_labels(64, 4, rng, true);
      auto p = losses::class_prototypes(ag::constant(feats), labels, 4);
      auto want = oracle::prototypes(feats, labels, 4);
      for (size_t i = 0; i < want.size(); ++i)
        CHECK(std::fabs(p->value[static_cast<int64_t>(i)] - want[i]) < 1e-12);
    }
  }
  SUBCASE("missing class is a contract error") {
    auto f = ag::constant(Arr<double>({2, 2}, {1, 2, 3, 4}));
    try {
      losses::class_prototypes(f, {0, 0}, 2);
      FAIL("expected contract error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Contract);
    }
  }
}

TEST_CASE("proto_log_probs anchors") {
  SUBCASE("equidistant prototypes give a uniform row") {
    // query at origin, prototypes on the unit axes
    auto q = ag::constant(Arr<double>({1, 3}, {0, 0, 0}));
    auto c = ag::constant(Arr<double>({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
    auto lp = losses::proto_log_probs(q, c);
    for (int j = 0; j < 3; ++j)
      CHECK(std::exp(lp->value[j]) == doctest::Approx(1.0 / 3).epsilon(1e-9));
  }
  SUBCASE("distances (0, 10) give the two-point softmax") {
    auto q = ag::constant(Arr<double>({1, 1}, {0.0}));
    auto c = ag::constant(Arr<double>({2, 1}, {0.0, 10.0}));
    auto lp = losses::proto_log_probs(q, c);
    double p0 = 1.0 / (1.0 + std::exp(-10.0));
    CHECK(std::exp(lp->value[0]) == doctest::Approx(p0).epsilon(1e-9));
    CHECK(std::exp(lp->value[1]) == doctest::Approx(1.0 - p0).epsilon(1e-9));
    CHECK(std::exp(lp->value[0]) == doctest::Approx(0.9999546).epsilon(1e-6));
    CHECK(std::exp(lp->value[1]) == doctest::Approx(4.54e-5).epsilon(1e-2));
  }
  SUBCASE("rows exponentiate to one") {
    Rng rng(9);
    auto q = random_arr({7, 5}, rng);
    auto c = random_arr({4, 5}, rng);
    auto lp = losses::proto_log_probs(ag::constant(q), ag::constant(c));
    for (int64_t i = 0; i < 7; ++i) {
      double s = 0.0;
      for (int64_t j = 0; j < 4; ++j) s += std::exp(lp->value[i * 4 + j]);
      CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
  SUBCASE("random against the brute-force softmax oracle") {
    Rng rng(11);
    for (bool squared : {false, true}) {
      for (int trial = 0; trial < 50; ++trial) {
        auto q = random_arr({6, 8}, rng);
        auto cfeats = random_arr({5, 8}, rng);
        auto lp = losses::proto_log_probs(ag::constant(q), ag::constant(cfeats),
                                          squared);
        std::vector<double> cp(cfeats.v.begin(), cfeats.v.end());
        auto want = oracle::softmax_of_neg_distances(q, cp, 5, squared);
        for (size_t i = 0; i < want.size(); ++i)
          CHECK(std::fabs(std::exp(lp->value[static_cast<int64_t>(i)]) -
                          want[i]) < 1e-9);
      }
    }
  }
  SUBCASE("argmax is invariant under a common distance shift") {
    Rng rng(13);
    auto q = random_arr({4, 3}, rng);
    auto c = random_arr({5, 3}, rng);
    auto d = ag::pairwise_dist(ag::constant(q), ag::constant(c), false);
    auto lp1 = ag::row_log_softmax(ag::neg(d));
    Arr<double> shifted = d->value;
    for (int64_t i = 0; i < shifted.numel(); ++i) shifted[i] += 3.7;
    auto lp2 = ag::row_log_softmax(ag::neg(ag::constant(shifted)));
    for (int64_t i = 0; i < 4; ++i) {
      int a1 = 0, a2 = 0;
      for (int64_t j = 0; j < 5; ++j) {
        if (lp1->value[i * 5 + j] > lp1->value[i * 5 + a1]) a1 = static_cast<int>(j);
        if (lp2->value[i * 5 + j] > lp2->value[i * 5 + a2]) a2 = static_cast<int>(j);
      }
      CHECK(a1 == a2);
    }
  }
}

TEST_CASE("fsl_episode_loss anchors and properties") {
  SUBCASE("perfect log probabilities give zero loss") {
    Arr<double> lp({3, 2}, {0, -1000, 0, -1000, 0, -1000});
    auto loss = losses::fsl_episode_loss(ag::constant(lp), {0, 0, 0});
    CHECK(loss->value[0] == 0.0);
  }
  SUBCASE("uniform rows, 9 ways, 171 queries = 171 ln 9") {
    Arr<double> lp({171, 9});
    for (int64_t i = 0; i < lp.numel(); ++i) lp[i] = std::log(1.0 / 9);
    Rng rng(1);
    auto labels = random_labels(171, 9, rng);
    auto loss = losses::fsl_episode_loss(ag::constant(lp), labels);
    CHECK(loss->value[0] == doctest::Approx(171 * std::log(9.0)).epsilon(1e-12));
    CHECK(loss->value[0] == doctest::Approx(375.73).epsilon(1e-4));
  }
  SUBCASE("random against naive summation, permutation invariant") {
    Rng rng(3);
    auto q = random_arr({12, 6}, rng);
    auto c = random_arr({4, 6}, rng);
    auto labels = random_labels(12, 4, rng);
    auto lp = losses::proto_log_probs(ag::constant(q), ag::constant(c));
    auto loss = losses::fsl_episode_loss(lp, labels);
    std::vector<double> cp(c.v.begin(), c.v.end());
    auto probs = oracle::softmax_of_neg_distances(q, cp, 4, false);
    CHECK(std::fabs(loss->value[0] - oracle::episode_nll(probs, 4, labels)) <
          1e-9);

    // permute query order
    std::vector<int64_t> perm = {5, 2, 9, 0, 11, 3, 7, 1, 10, 4, 8, 6};
    Arr<double> q2({12, 6});
    std::vector<int> labels2(12);
    for (int64_t i = 0; i < 12; ++i) {
      for (int64_t j = 0; j < 6; ++j) q2[i * 6 + j] = q[perm[i] * 6 + j];
      labels2[i] = labels[perm[i]];
    }
    auto loss2 = losses::fsl_episode_loss(
        losses::proto_log_probs(ag::constant(q2), ag::constant(c)), labels2);
    CHECK(loss2->value[0] == doctest::Approx(loss->value[0]).epsilon(1e-12));
  }
}

TEST_CASE("rm_loss anchors") {
  SUBCASE("saturated logits give near-zero loss") {
    Arr<double> logits({2, 6});
    logits[0 * 6 + 3] = 1000.0;
    logits[1 * 6 + 0] = 1000.0;
    auto loss = losses::rm_loss(ag::constant(logits), {4, 1});
    CHECK(loss->value[0] == doctest::Approx(0.0).epsilon(1e-9));
  }
  SUBCASE("all-zero logits give ln 6") {
    Arr<double> logits({5, 6});
    auto loss = losses::rm_loss(ag::constant(logits), {1, 2, 3, 4, 5});
    CHECK(loss->value[0] == doctest::Approx(std::log(6.0)).epsilon(1e-12));
    CHECK(loss->value[0] == doctest::Approx(1.7918).epsilon(1e-4));
  }
  SUBCASE("random against the naive oracle") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
      auto logits = random_arr({10, 6}, rng);
      std::vector<int> labels(10);
      for (auto& l : labels) l = 1 + static_cast<int>(rng.uniform_int(6));
      auto loss = losses::rm_loss(ag::constant(logits), labels);
      CHECK(std::fabs(loss->value[0] -
                      oracle::cross_entropy_mean(logits, labels)) < 1e-9);
    }
  }
  SUBCASE("label out of range is a contract error") {
    Arr<double> logits({1, 6});
    CHECK_THROWS_AS(losses::rm_loss(ag::constant(logits), {7}), Error);
    CHECK_THROWS_AS(losses::rm_loss(ag::constant(logits), {0}), Error);
  }
}

TEST_CASE("mr_loss anchors") {
  SUBCASE("exact reconstruction gives zero") {
    Rng rng(9);
    auto x = random_arr({4, 16}, rng);
    auto loss = losses::mr_loss(ag::constant(x), ag::constant(x));
    CHECK(loss->value[0] == 0.0);
  }
  SUBCASE("zeros vs ones gives one for any band count") {
    for (int64_t b : {1, 7, 103}) {
      auto x = ag::constant(Arr<double>::zeros({3, b}));
      auto xhat = ag::constant(Arr<double>::full({3, b}, 1.0));
      auto loss = losses::mr_loss(x, xhat);
      CHECK(loss->value[0] == 1.0);
    }
  }
  SUBCASE("random against the naive oracle at 1e-9") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
      auto x = random_arr({8, 32}, rng);
      auto xhat = random_arr({8, 32}, rng);
      auto loss = losses::mr_loss(ag::constant(x), ag::constant(xhat));
      CHECK(std::fabs(loss->value[0] - oracle::mse(x, xhat)) < 1e-9);
    }
  }
  SUBCASE("shape mismatch is a contract error") {
    auto x = ag::constant(Arr<double>::zeros({2, 4}));
    auto y = ag::constant(Arr<double>::zeros({2, 5}));
    try {
      losses::mr_loss(x, y);
      FAIL("expected contract error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Contract);
    }
  }
}

TEST_CASE("sslcl_loss analytic anchors") {
  SUBCASE("identical uniform rows give zero") {
    for (int64_t n : {2, 4, 9, 16}) {
      auto z = ag::constant(Arr<double>::full({6, n}, 1.0 / n));
      auto loss = losses::sslcl_loss(z, z);
      CHECK(std::fabs(loss->value[0]) < 1e-9);
    }
  }
  SUBCASE("identical one-hot batch gives zero") {
    Arr<double> z({5, 4});
    for (int64_t i = 0; i < 5; ++i) z[i * 4 + 2] = 1.0;
    auto zv = ag::constant(z);
    auto loss = losses::sslcl_loss(zv, zv);
    CHECK(std::fabs(loss->value[0]) < 1e-9);
  }
  SUBCASE("distinct one-hots with identical views give -ln N") {
    for (int64_t n : {2, 4, 9, 16}) {
      Arr<double> z({n, n});
      for (int64_t i = 0; i < n; ++i) z[i * n + i] = 1.0;
      auto zv = ag::constant(z);
      auto loss = losses::sslcl_loss(zv, zv);
      CHECK(loss->value[0] ==
            doctest::Approx(-std::log(static_cast<double>(n))).epsilon(1e-9));
    }
    // the stated N = 4 value
    Arr<double> z({4, 4});
    for (int64_t i = 0; i < 4; ++i) z[i * 4 + i] = 1.0;
    auto zv = ag::constant(z);
    CHECK(losses::sslcl_loss(zv, zv)->value[0] ==
          doctest::Approx(-1.38629).epsilon(1e-4));
  }
}

TEST_CASE("sslcl_loss against the brute-force oracle and its bounds") {
  Rng rng(21);
  SUBCASE("random agreement at 1e-9") {
    for (int trial = 0; trial < 100; ++trial) {
      auto z1 = random_prob_rows(6, 5, rng);
      auto z2 = random_prob_rows(6, 5, rng);
      auto loss = losses::sslcl_loss(ag::constant(z1), ag::constant(z2));
      CHECK(std::fabs(loss->value[0] - oracle::sslcl(z1, z2)) < 1e-9);
    }
  }
  SUBCASE("KL/cross-entropy identity") {
    for (int trial = 0; trial < 100; ++trial) {
      auto a = random_prob_rows(4, 6, rng);
      auto b = random_prob_rows(4, 6, rng);
      for (int64_t i = 0; i < 4; ++i) {
        double kl = oracle::kl(a.data() + i * 6, b.data() + i * 6, 6);
        double h = oracle::entropy(a.data() + i * 6, 6);
        double ce = 0.0;
        for (int64_t j = 0; j < 6; ++j)
          ce -= a[i * 6 + j] * std::log(std::max(b[i * 6 + j], 1e-8));
        CHECK(std::fabs(kl + h - ce) < 1e-9);
      }
    }
  }
  SUBCASE("identical views never dip below -ln N") {
    for (int trial = 0; trial < 1000; ++trial) {
      int64_t n = 2 + rng.uniform_int(7);
      int64_t rows = 1 + rng.uniform_int(8);
      auto z = random_prob_rows(rows, n, rng);
      auto zv = ag::constant(z);
      auto loss = losses::sslcl_loss(zv, zv);
      CHECK(loss->value[0] >=
            -std::log(static_cast<double>(n)) - 1e-9);
    }
  }
  SUBCASE("malformed rows are a contract error") {
    Arr<double> bad({2, 3}, {0.5, 0.5, 0.5, 0.2, 0.4, 0.4});
    auto good = random_prob_rows(2, 3, rng);
    try {
      losses::sslcl_loss(ag::constant(bad), ag::constant(good));
      FAIL("expected contract error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Contract);
    }
  }
}

TEST_CASE("stage totals are unweighted sums with additive gradients") {
  auto a = ag::parameter(Arr<double>::scalar(2.0));
  auto b = ag::parameter(Arr<double>::scalar(3.0));
  auto total = losses::stage_total(a, b);
  CHECK(total->value[0] == 5.0);
  ag::backward(total);
  CHECK(a->grad[0] == 1.0);
  CHECK(b->grad[0] == 1.0);

  auto zero = losses::stage_total(ag::constant(Arr<double>::scalar(0.0)),
                                  ag::constant(Arr<double>::scalar(0.0)));
  CHECK(zero->value[0] == 0.0);
}

TEST_SUITE_END();
