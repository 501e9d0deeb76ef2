#include <doctest.h>

#include <cmath>

#include "s4l/augment.hpp"
#include "s4l/synthetic.hpp"

using namespace s4l;

namespace {

Patch random_patch(int size, int bands, uint64_t seed) {
  Rng rng(seed);
  Patch p;
  p.size = size;
  p.bands = bands;
  p.window.resize(static_cast<size_t>(size) * size * bands);
  for (auto& v : p.window) v = static_cast<float>(rng.normal());
  return p;
}

Patch constant_patch(int size, int bands, float value) {
  Patch p;
  p.size = size;
  p.bands = bands;
  p.window.assign(static_cast<size_t>(size) * size * bands, value);
  return p;
}

}  // namespace

TEST_SUITE_BEGIN("augment");

TEST_CASE("noise_augment realizes alpha * x + n / 25 draw for draw") {
  std::vector<float> x(64);
  Rng seed_rng(7);
  for (auto& v : x) v = static_cast<float>(seed_rng.normal());
  Rng r1(42);
  auto out = noise_augment(x, r1);
  Rng r2(42);
  float alpha = static_cast<float>(r2.uniform(0.9, 1.1));
  for (size_t i = 0; i < x.size(); ++i) {
    float noise = static_cast<float>(r2.normal());
    CHECK(out[i] == alpha * x[i] + noise / 25.0f);
  }
  // degenerate case: alpha = 1 and n = 0 gives the identity by the formula
  for (size_t i = 0; i < x.size(); ++i)
    CHECK(1.0f * x[i] + 0.0f / 25.0f == x[i]);
}

TEST_CASE("noise_augment on a zero input has variance 1/625") {
  std::vector<float> zero(100, 0.0f);
  Rng rng(11);
  double sum = 0.0, sum_sq = 0.0;
  int64_t n = 0;
  for (int call = 0; call < 1000; ++call) {
    auto out = noise_augment(zero, rng);
    for (float v : out) {
      sum += v;
      sum_sq += static_cast<double>(v) * v;
      ++n;
    }
  }
  double mean = sum / n;
  double var = sum_sq / n - mean * mean;
  CHECK(std::fabs(var - 1.0 / 625.0) < 0.05 / 625.0);  // within 5%
}

TEST_CASE("noise_augment scaling factor averages 1.0") {
  // estimate alpha per call as <out, x> / <x, x> on a large-norm input
  std::vector<float> x(100, 1000.0f);
  double xx = 0.0;
  for (float v : x) xx += static_cast<double>(v) * v;
  Rng rng(13);
  double alpha_sum = 0.0;
  const int calls = 10000;
  for (int call = 0; call < calls; ++call) {
    auto out = noise_augment(x, rng);
    double dot = 0.0;
    for (size_t i = 0; i < x.size(); ++i)
      dot += static_cast<double>(out[i]) * x[i];
    alpha_sum += dot / xx;
  }
  CHECK(std::fabs(alpha_sum / calls - 1.0) < 0.01);
}

TEST_CASE("rotation-mirror group identities hold exactly") {
  for (int size : {3, 33}) {
    Patch p = random_patch(size, 2, size);
    SUBCASE("k = 1 is the identity") {
      CHECK(rm_transform(p, {1}).window == p.window);
    }
    SUBCASE("rot90 applied four times is the identity") {
      Patch q = p;
      for (int i = 0; i < 4; ++i) q = rm_transform(q, {2});
      CHECK(q.window == p.window);
    }
    SUBCASE("flips are involutions") {
      CHECK(rm_transform(rm_transform(p, {5}), {5}).window == p.window);
      CHECK(rm_transform(rm_transform(p, {6}), {6}).window == p.window);
    }
    SUBCASE("hflip then vflip equals rot180") {
      Patch a = rm_transform(rm_transform(p, {5}), {6});
      Patch b = rm_transform(p, {3});
      CHECK(a.window == b.window);
    }
    SUBCASE("rot270 equals rot90 three times") {
      Patch q = p;
      for (int i = 0; i < 3; ++i) q = rm_transform(q, {2});
      CHECK(q.window == rm_transform(p, {4}).window);
    }
    SUBCASE("every transform is a permutation of pixels") {
      // index-permutation oracle: distinct values must be conserved
      Patch idx;
      idx.size = size;
      idx.bands = 1;
      idx.window.resize(static_cast<size_t>(size) * size);
      for (size_t i = 0; i < idx.window.size(); ++i)
        idx.window[i] = static_cast<float>(i);
      for (int k = 1; k <= 6; ++k) {
        auto out = rm_transform(idx, {k}).window;
        std::sort(out.begin(), out.end());
        CHECK(out == idx.window);
      }
    }
    SUBCASE("the center pixel is a fixed point of all six transforms") {
      int mid = size / 2;
      for (int k = 1; k <= 6; ++k) {
        Patch t = rm_transform(p, {k});
        for (int b = 0; b < p.bands; ++b)
          CHECK(t.at(mid, mid, b) == p.at(mid, mid, b));
      }
    }
  }
}

TEST_CASE("rm_transform keeps the band axis and label untouched") {
  Patch p = random_patch(5, 4, 3);
  p.label = 7;
  Patch t = rm_transform(p, {2});
  CHECK(t.label == 7);
  // spectra move together: the spectrum at a rotated position is intact
  for (int b = 0; b < 4; ++b) CHECK(t.at(0, 0, b) == p.at(0, 4, b));
}

TEST_CASE("rm_expand emits input-major, k-ascending") {
  std::vector<Patch> batch;
  for (int i = 0; i < 128; ++i) batch.push_back(random_patch(5, 1, i));
  auto out = rm_expand(batch);
  CHECK(out.size() == 768);
  for (size_t i = 0; i < batch.size(); ++i)
    for (int k = 1; k <= 6; ++k) {
      CHECK(out[i * 6 + (k - 1)].second == k);
      if (k == 1) CHECK(out[i * 6].first.window == batch[i].window);
    }

  SUBCASE("one input produces each label once") {
    auto single = rm_expand({batch[0]});
    CHECK(single.size() == 6);
    for (int k = 1; k <= 6; ++k) CHECK(single[k - 1].second == k);
  }
  SUBCASE("rotation-only variant emits four") {
    auto r4 = rot4_expand({batch[0], batch[1]});
    CHECK(r4.size() == 8);
    for (int i = 0; i < 2; ++i)
      for (int k = 1; k <= 4; ++k) CHECK(r4[i * 4 + (k - 1)].second == k);
  }
}

TEST_CASE("mask_spectrum masks an exact count") {
  Rng data_rng(5);
  SUBCASE("128 bands at 0.75 masks 96") {
    std::vector<float> x(128);
    for (auto& v : x) v = static_cast<float>(data_rng.normal());
    Rng rng(9);
    MaskedSpectrum m = mask_spectrum(x, 0.75, rng);
    int64_t count = 0;
    for (auto b : m.mask) count += b;
    CHECK(count == 96);
    for (size_t i = 0; i < x.size(); ++i)
      CHECK(m.masked[i] == (m.mask[i] ? 0.0f : x[i]));
  }
  SUBCASE("ratio 0 and ratio 1") {
    std::vector<float> x(40);
    for (auto& v : x) v = static_cast<float>(data_rng.normal()) + 2.0f;
    Rng rng(3);
    MaskedSpectrum none = mask_spectrum(x, 0.0, rng);
    CHECK(none.masked == x);
    for (auto b : none.mask) CHECK(b == 0);
    MaskedSpectrum all = mask_spectrum(x, 1.0, rng);
    for (auto v : all.masked) CHECK(v == 0.0f);
    for (auto b : all.mask) CHECK(b == 1);
  }
  SUBCASE("exact count across sizes and ratios") {
    Rng rng(77);
    for (int64_t b : {1, 2, 3, 7, 64, 127, 511, 512}) {
      for (double ratio : {0.0, 0.25, 0.5, 0.75, 1.0}) {
        std::vector<float> x(b, 1.0f);
        MaskedSpectrum m = mask_spectrum(x, ratio, rng);
        int64_t count = 0;
        for (auto bit : m.mask) count += bit;
        CHECK(count == static_cast<int64_t>(std::floor(ratio * b)));
      }
    }
  }
}

TEST_CASE("bicubic_resize is exact on identity and constants") {
  Patch p = random_patch(9, 2, 21);
  auto same = bicubic_resize(p.window, 9, 9, 2, 9, 9);
  for (size_t i = 0; i < p.window.size(); ++i)
    CHECK(same[i] == doctest::Approx(p.window[i]).epsilon(1e-6));

  std::vector<float> flat(7 * 5 * 3, 0.37f);
  auto up = bicubic_resize(flat, 7, 5, 3, 33, 33);
  for (float v : up) CHECK(v == doctest::Approx(0.37f).epsilon(1e-5));
}

TEST_CASE("sslcl_augment keeps the patch shape") {
  Patch p = random_patch(33, 6, 31);
  Rng rng(15);
  for (int i = 0; i < 50; ++i) {
    Patch v = sslcl_augment(p, rng);
    CHECK(v.size == 33);
    CHECK(v.bands == 6);
    CHECK(v.window.size() == p.window.size());
  }
}

TEST_CASE("sslcl_augment takes the crop branch half the time") {
  // on a constant patch the crop branch is (numerically) the identity while
  // the noise branch almost surely is not
  Patch flat = constant_patch(33, 2, 0.5f);
  Rng rng(2025);
  int crop = 0;
  const int calls = 10000;
  for (int i = 0; i < calls; ++i) {
    Patch v = sslcl_augment(flat, rng);
    bool is_const = true;
    for (float x : v.window)
      if (std::fabs(x - 0.5f) > 1e-4f) {
        is_const = false;
        break;
      }
    crop += is_const;
  }
  double freq = static_cast<double>(crop) / calls;
  CHECK(std::fabs(freq - 0.5) < 0.02);
}

TEST_CASE("sslcl_augment noise branch matches the noise formula") {
  Patch p = random_patch(33, 3, 8);
  // find a seed whose first draw lands on the noise branch, then replay
  for (uint64_t seed = 1; seed < 50; ++seed) {
    Rng probe(seed);
    if (probe.bernoulli(0.5)) continue;  // crop branch, skip
    Rng r1(seed);
    Patch out = sslcl_augment(p, r1);
    Rng r2(seed);
    (void)r2.bernoulli(0.5);
    float alpha = static_cast<float>(r2.uniform(0.9, 1.1));
    for (size_t i = 0; i < p.window.size(); ++i) {
      float noise = static_cast<float>(r2.normal());
      CHECK(out.window[i] == alpha * p.window[i] + noise / 25.0f);
    }
    return;
  }
  FAIL("no noise-branch seed found in 50 tries");
}

TEST_CASE("sslcl_augment is reproducible under a fixed stream") {
  Patch p = random_patch(33, 4, 77);
  Rng a(5), b(5);
  for (int i = 0; i < 20; ++i)
    CHECK(sslcl_augment(p, a).window == sslcl_augment(p, b).window);
}

TEST_SUITE_END();
