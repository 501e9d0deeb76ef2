#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "s4l/nn.hpp"

using namespace s4l;
using ag::Var;

namespace {

Arr<double> random_arr(std::vector<int64_t> shape, Rng& rng, double scale = 1.0) {
  Arr<double> a(std::move(shape));
  for (int64_t i = 0; i < a.numel(); ++i) a[i] = scale * rng.normal();
  return a;
}

// direct convolution, no GEMM, for cross-checking the im2col path
Arr<double> naive_conv2d(const Arr<double>& x, const Arr<double>& w,
                         const Arr<double>& b, ag::ConvSpec s) {
  int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int64_t OC = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  int64_t OH = (H + 2 * s.pad_h - KH) / s.stride_h + 1;
  int64_t OW = (W + 2 * s.pad_w - KW) / s.stride_w + 1;
  Arr<double> y({N, OC, OH, OW});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t oc = 0; oc < OC; ++oc)
      for (int64_t oy = 0; oy < OH; ++oy)
        for (int64_t ox = 0; ox < OW; ++ox) {
          double acc = b[oc];
          for (int64_t c = 0; c < C; ++c)
            for (int64_t ki = 0; ki < KH; ++ki)
              for (int64_t kj = 0; kj < KW; ++kj) {
                int64_t iy = oy * s.stride_h - s.pad_h + ki;
                int64_t ix = ox * s.stride_w - s.pad_w + kj;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += x[((n * C + c) * H + iy) * W + ix] *
                       w[((oc * C + c) * KH + ki) * KW + kj];
              }
          y[((n * OC + oc) * OH + oy) * OW + ox] = acc;
        }
  return y;
}

}  // namespace

TEST_SUITE_BEGIN("engine");

TEST_CASE("conv2d forward matches a naive direct convolution") {
  Rng rng(42);
  for (auto spec : {ag::ConvSpec{1, 1, 1, 1}, ag::ConvSpec{2, 2, 0, 0},
                    ag::ConvSpec{1, 2, 0, 3}}) {
    auto x = random_arr({2, 3, 7, 9}, rng);
    auto w = random_arr({4, 3, 3, 3}, rng);
    auto b = random_arr({4}, rng);
    auto got = ag::conv2d(ag::constant(x), ag::constant(w), ag::constant(b), spec);
    auto want = naive_conv2d(x, w, b, spec);
    REQUIRE(got->value.shape == want.shape);
    for (int64_t i = 0; i < want.numel(); ++i)
      CHECK(got->value[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d height-1 layout matches 1-d convolution arithmetic") {
  Rng rng(3);
  auto x = random_arr({2, 1, 1, 103}, rng);
  auto w = random_arr({24, 1, 1, 7}, rng);
  auto b = random_arr({24}, rng);
  auto y = ag::conv2d(ag::constant(x), ag::constant(w), ag::constant(b),
                      {1, 2, 0, 0});
  CHECK(y->value.shape == std::vector<int64_t>{2, 24, 1, 49});
  auto want = naive_conv2d(x, w, b, {1, 2, 0, 0});
  for (int64_t i = 0; i < want.numel(); ++i)
    CHECK(y->value[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("conv2d gradients pass finite differences") {
  Rng rng(7);
  auto x = ag::parameter(random_arr({2, 3, 6, 6}, rng));
  auto w = ag::parameter(random_arr({4, 3, 3, 3}, rng, 0.5));
  auto b = ag::parameter(random_arr({4}, rng, 0.1));
  auto make_loss = [&] {
    auto y = ag::conv2d(x, w, b, {1, 1, 1, 1});
    return ag::mean_all(ag::mul(y, y));
  };
  auto res = gradcheck(make_loss, {x, w, b}, 6);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("maxpool, batchnorm and dropout gradients pass finite differences") {
  Rng rng(11);
  auto x = ag::parameter(random_arr({3, 2, 6, 6}, rng));
  auto gamma = ag::parameter(random_arr({2}, rng, 0.2));
  auto beta = ag::parameter(random_arr({2}, rng, 0.2));
  for (int64_t i = 0; i < 2; ++i) gamma->value[i] += 1.0;
  Arr<double> rm({2}), rv = Arr<double>::full({2}, 1.0);

  SUBCASE("training mode") {
    auto make_loss = [&] {
      Arr<double> rm_copy = rm, rv_copy = rv;
      auto y = ag::batchnorm(x, gamma, beta, &rm_copy, &rv_copy, true);
      y = ag::maxpool2x2(y);
      return ag::mean_all(ag::mul(y, y));
    };
    auto res = gradcheck(make_loss, {x, gamma, beta}, 8);
    CHECK(res.max_rel_err < 1e-5);
  }
  SUBCASE("inference mode") {
    rm[0] = 0.3;
    rm[1] = -0.2;
    rv[0] = 1.7;
    rv[1] = 0.6;
    auto make_loss = [&] {
      Arr<double> rm_copy = rm, rv_copy = rv;
      auto y = ag::batchnorm(x, gamma, beta, &rm_copy, &rv_copy, false);
      return ag::mean_all(ag::mul(y, y));
    };
    auto res = gradcheck(make_loss, {x, gamma, beta}, 8);
    CHECK(res.max_rel_err < 1e-6);
  }
  SUBCASE("dropout with a pinned mask") {
    auto make_loss = [&] {
      Rng drop_rng(99);
      auto y = ag::dropout(x, 0.4, true, drop_rng);
      return ag::mean_all(ag::mul(y, y));
    };
    auto res = gradcheck(make_loss, {x}, 8);
    CHECK(res.max_rel_err < 1e-6);
  }
}

TEST_CASE("row softmaxes, nll, segment means and distances pass finite differences") {
  Rng rng(13);
  auto x = ag::parameter(random_arr({6, 5}, rng));
  std::vector<int> labels = {0, 1, 2, 0, 1, 2};

  SUBCASE("log softmax + nll") {
    auto make_loss = [&] {
      return ag::nll_rows(ag::row_log_softmax(x), {1, 0, 3, 2, 4, 1},
                          ag::Reduction::Mean);
    };
    CHECK(gradcheck(make_loss, {x}, 10).max_rel_err < 1e-6);
  }
  SUBCASE("softmax") {
    auto make_loss = [&] {
      auto p = ag::row_softmax(x);
      return ag::sum_all(ag::mul(p, p));
    };
    CHECK(gradcheck(make_loss, {x}, 10).max_rel_err < 1e-6);
  }
  SUBCASE("prototype pipeline: segment mean + pairwise distance") {
    auto q = ag::parameter(random_arr({4, 5}, rng));
    for (bool squared : {false, true}) {
      auto make_loss = [&] {
        auto protos = ag::segment_mean_rows(x, labels, 3);
        auto d = ag::pairwise_dist(q, protos, squared);
        return ag::nll_rows(ag::row_log_softmax(ag::neg(d)), {0, 1, 2, 0},
                            ag::Reduction::Sum);
      };
      CHECK(gradcheck(make_loss, {x, q}, 10).max_rel_err < 1e-5);
    }
  }
  SUBCASE("elementwise chain with shared operand") {
    auto make_loss = [&] {
      auto y = ag::mul(x, x);  // same node twice
      y = ag::sub(y, ag::scale(x, 0.5));
      return ag::mean_all(y);
    };
    CHECK(gradcheck(make_loss, {x}, 10).max_rel_err < 1e-7);
    // d/dx mean(x^2 - x/2) = (2x - 1/2) / n
    x->grad = Arr<double>();
    auto loss = make_loss();
    ag::backward(loss);
    for (int64_t i = 0; i < x->value.numel(); ++i)
      CHECK(x->grad[i] ==
            doctest::Approx((2.0 * x->value[i] - 0.5) / 30.0).epsilon(1e-10));
  }
  SUBCASE("concat, slice, mean_dim0, log_clamped") {
    auto y = ag::parameter(random_arr({6, 3}, rng));
    auto make_loss = [&] {
      auto c = ag::concat_cols(x, y);
      auto s = ag::slice_rows(c, 1, 5);
      auto m = ag::mean_dim0(ag::mul(s, s));
      return ag::sum_all(ag::log_clamped(m, 1e-8));
    };
    CHECK(gradcheck(make_loss, {x, y}, 10).max_rel_err < 1e-6);
  }
}

TEST_CASE("linear gradients and values") {
  Rng rng(17);
  auto x = ag::parameter(random_arr({4, 6}, rng));
  auto w = ag::parameter(random_arr({3, 6}, rng));
  auto b = ag::parameter(random_arr({3}, rng));
  auto y = ag::linear(x, w, b);
  // value oracle
  for (int64_t i = 0; i < 4; ++i)
    for (int64_t j = 0; j < 3; ++j) {
      double want = b->value[j];
      for (int64_t k = 0; k < 6; ++k)
        want += x->value[i * 6 + k] * w->value[j * 6 + k];
      CHECK(y->value[i * 3 + j] == doctest::Approx(want).epsilon(1e-12));
    }
  auto make_loss = [&] { return ag::mean_all(ag::mul(ag::linear(x, w, b),
                                                     ag::linear(x, w, b))); };
  CHECK(gradcheck(make_loss, {x, w, b}, 8).max_rel_err < 1e-6);
}

TEST_CASE("frozen parameters receive no gradient") {
  Rng rng(19);
  auto x = ag::parameter(random_arr({2, 3}, rng));
  auto w = ag::parameter(random_arr({2, 3}, rng));
  w->requires_grad = false;
  auto loss = ag::sum_all(ag::mul(x, w));
  ag::backward(loss);
  CHECK(x->grad.numel() == 3 * 2);
  CHECK(w->grad.numel() == 0);
}

TEST_CASE("loss constant in a parameter yields zero gradient") {
  Rng rng(23);
  auto x = ag::parameter(random_arr({2, 3}, rng));
  auto y = ag::parameter(random_arr({2, 3}, rng));
  auto loss = ag::sum_all(ag::mul(x, x));
  ag::backward(loss);
  CHECK(y->grad.numel() == 0);  // y never touched the graph
}

TEST_CASE("zero-weight linear layer: bias gradient equals summed upstream gradient") {
  Rng rng(29);
  auto x = ag::parameter(random_arr({5, 4}, rng));
  auto w = ag::parameter(Arr<double>::zeros({3, 4}));
  auto b = ag::parameter(Arr<double>::zeros({3}));
  // loss = mean of outputs -> upstream gradient 1/(5*3) per element
  auto loss = ag::mean_all(ag::linear(x, w, b));
  ag::backward(loss);
  for (int64_t j = 0; j < 3; ++j)
    CHECK(b->grad[j] == doctest::Approx(5.0 / 15.0).epsilon(1e-12));
}

TEST_CASE("no-grad scope detaches the graph") {
  Rng rng(31);
  auto x = ag::parameter(random_arr({2, 2}, rng));
  {
    ag::NoGrad guard;
    auto y = ag::mul(x, x);
    CHECK_FALSE(y->requires_grad);
    CHECK(y->parents.empty());
  }
  auto y = ag::mul(x, x);
  CHECK(y->requires_grad);
}

TEST_CASE("adam minimizes a quadratic") {
  auto x = ag::parameter(Arr<double>({4}, {5.0, -3.0, 2.0, 10.0}));
  nn::Adam<double> opt({x}, 0.1);
  for (int i = 0; i < 500; ++i) {
    opt.zero_grad();
    auto loss = ag::sum_all(ag::mul(x, x));
    ag::backward(loss);
    opt.step();
  }
  for (int64_t i = 0; i < 4; ++i) CHECK(std::fabs(x->value[i]) < 1e-2);
}

TEST_CASE("batchnorm inference is batch-size invariant") {
  Rng rng(37);
  nn::ParamRegistry<double> reg;
  auto bn = nn::BatchNorm<double>(reg, "bn", 3);
  // push some statistics through training mode
  for (int i = 0; i < 5; ++i) {
    auto x = ag::constant(random_arr({4, 3, 2, 2}, rng));
    bn.forward(x, true);
  }
  auto a = random_arr({1, 3, 2, 2}, rng);
  auto b = random_arr({1, 3, 2, 2}, rng);
  Arr<double> both({2, 3, 2, 2});
  std::copy(a.v.begin(), a.v.end(), both.v.begin());
  std::copy(b.v.begin(), b.v.end(), both.v.begin() + a.numel());
  auto ya = bn.forward(ag::constant(a), false);
  auto yb = bn.forward(ag::constant(b), false);
  auto yab = bn.forward(ag::constant(both), false);
  for (int64_t i = 0; i < a.numel(); ++i) {
    CHECK(yab->value[i] == ya->value[i]);
    CHECK(yab->value[a.numel() + i] == yb->value[i]);
  }
}

TEST_SUITE_END();
