#include <doctest.h>

#include <zlib.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "s4l/metrics.hpp"
#include "s4l/rng.hpp"
#include "s4l/synthetic.hpp"

using namespace s4l;
namespace fs = std::filesystem;

// independent loop implementation of OA/AA/kappa
namespace oracle {

struct Result {
  double oa, aa, kappa;
};

Result metrics(const std::vector<int>& truth, const std::vector<int>& pred,
               int n) {
  std::vector<std::vector<int64_t>> c(n, std::vector<int64_t>(n, 0));
  for (size_t i = 0; i < truth.size(); ++i) ++c[truth[i] - 1][pred[i] - 1];
  double total = static_cast<double>(truth.size());
  double trace = 0.0, aa = 0.0, pe = 0.0;
  for (int i = 0; i < n; ++i) {
    trace += c[i][i];
    double row = 0.0, col = 0.0;
    for (int j = 0; j < n; ++j) {
      row += c[i][j];
      col += c[j][i];
    }
    aa += c[i][i] / row;
    pe += row * col;
  }
  pe /= total * total;
  double oa = trace / total;
  return {oa, aa / n, (oa - pe) / (1.0 - pe)};
}

}  // namespace oracle

TEST_SUITE_BEGIN("metrics");

TEST_CASE("perfect prediction scores one everywhere") {
  std::vector<int> truth = {1, 2, 3, 1, 2, 3, 2};
  MetricsReport r = compute_metrics(truth, truth, 3);
  CHECK(r.oa == 1.0);
  CHECK(r.aa == 1.0);
  CHECK(r.kappa == 1.0);
  CHECK(r.n_test == 7);
}

TEST_CASE("hand-evaluated kappa on the half-right constant predictor") {
  // confusion [[50, 0], [50, 0]]
  std::vector<int> truth, pred;
  for (int i = 0; i < 50; ++i) {
    truth.push_back(1);
    pred.push_back(1);
  }
  for (int i = 0; i < 50; ++i) {
    truth.push_back(2);
    pred.push_back(1);
  }
  MetricsReport r = compute_metrics(truth, pred, 2);
  CHECK(r.oa == 0.5);
  CHECK(r.aa == 0.5);
  CHECK(r.kappa == 0.0);
  CHECK(r.cell(0, 0) == 50);
  CHECK(r.cell(1, 0) == 50);
}

TEST_CASE("constant predictors always land at kappa zero") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    int n = 2 + static_cast<int>(rng.uniform_int(6));
    std::vector<int> truth, pred;
    for (int c = 1; c <= n; ++c)
      for (int i = 0; i < 3 + rng.uniform_int(40); ++i) {
        truth.push_back(c);
        pred.push_back(1);
      }
    MetricsReport r = compute_metrics(truth, pred, n);
    CHECK(r.kappa == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("random confusion settings agree with the brute-force oracle") {
  Rng rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    int n = 2 + static_cast<int>(rng.uniform_int(7));
    std::vector<int> truth, pred;
    for (int c = 1; c <= n; ++c) {
      int count = 1 + static_cast<int>(rng.uniform_int(30));
      for (int i = 0; i < count; ++i) {
        truth.push_back(c);
        pred.push_back(1 + static_cast<int>(rng.uniform_int(n)));
      }
    }
    MetricsReport r = compute_metrics(truth, pred, n);
    auto want = oracle::metrics(truth, pred, n);
    CHECK(std::fabs(r.oa - want.oa) < 1e-9);
    CHECK(std::fabs(r.aa - want.aa) < 1e-9);
    CHECK(std::fabs(r.kappa - want.kappa) < 1e-9);
  }
}

TEST_CASE("metrics are invariant under consistent relabeling") {
  Rng rng(11);
  std::vector<int> truth, pred;
  for (int i = 0; i < 200; ++i) {
    truth.push_back(1 + static_cast<int>(rng.uniform_int(4)));
    pred.push_back(1 + static_cast<int>(rng.uniform_int(4)));
  }
  MetricsReport a = compute_metrics(truth, pred, 4);
  int perm[5] = {0, 3, 1, 4, 2};
  std::vector<int> truth2, pred2;
  for (size_t i = 0; i < truth.size(); ++i) {
    truth2.push_back(perm[truth[i]]);
    pred2.push_back(perm[pred[i]]);
  }
  MetricsReport b = compute_metrics(truth2, pred2, 4);
  CHECK(a.oa == doctest::Approx(b.oa).epsilon(1e-12));
  CHECK(a.aa == doctest::Approx(b.aa).epsilon(1e-12));
  CHECK(a.kappa == doctest::Approx(b.kappa).epsilon(1e-12));
}

TEST_CASE("metric errors: empty input and missing class") {
  try {
    compute_metrics({}, {}, 2);
    FAIL("expected metric error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Metric);
  }
  try {
    compute_metrics({1, 1}, {1, 2}, 2);  // class 2 never true
    FAIL("expected metric error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Metric);
  }
}

TEST_CASE("aggregate_runs: two-point standard deviation and invariances") {
  MetricsReport a, b;
  a.n_classes = b.n_classes = 2;
  a.per_class_acc = {0.9, 0.9};
  b.per_class_acc = {0.94, 0.94};
  a.oa = 0.90;
  b.oa = 0.94;
  a.aa = 0.90;
  b.aa = 0.94;
  a.kappa = 0.8;
  b.kappa = 0.9;
  RunAggregate agg = aggregate_runs({a, b});
  CHECK(agg.oa.mean == doctest::Approx(0.92).epsilon(1e-12));
  CHECK(agg.oa.stddev == doctest::Approx(0.02828427).epsilon(1e-6));

  RunAggregate flipped = aggregate_runs({b, a});
  CHECK(flipped.oa.mean == agg.oa.mean);
  CHECK(flipped.oa.stddev == agg.oa.stddev);

  RunAggregate single = aggregate_runs({a});
  CHECK(single.oa.stddev == 0.0);

  MetricsReport c;
  c.n_classes = 3;
  c.per_class_acc = {1, 1, 1};
  CHECK_THROWS_AS(aggregate_runs({a, c}), Error);
}

TEST_CASE("aggregate serialization carries the table schema") {
  MetricsReport a;
  a.n_classes = 2;
  a.per_class_acc = {0.5, 1.0};
  a.oa = 0.75;
  a.aa = 0.75;
  a.kappa = 0.5;
  RunAggregate agg = aggregate_runs({a, a});
  std::string js = aggregate_to_json(agg);
  for (const char* key : {"\"oa\"", "\"aa\"", "\"kappa\"", "\"per_class\"",
                          "\"mean\"", "\"std\"", "\"n_runs\""})
    CHECK(js.find(key) != std::string::npos);
  std::string table = aggregate_to_table(agg);
  CHECK(table.find("OA") != std::string::npos);
  CHECK(table.find("Kappa") != std::string::npos);
  CHECK(table.find("+-") != std::string::npos);
}

// --- classification map ------------------------------------------------------

namespace {

// decode the writer's fixed-layout PNG: IHDR / one IDAT / IEND, filter 0 rows
std::vector<uint8_t> decode_png_rgb(const fs::path& path, int64_t& w,
                                    int64_t& h) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  auto u32 = [&](size_t off) {
    return (uint32_t(bytes[off]) << 24) | (uint32_t(bytes[off + 1]) << 16) |
           (uint32_t(bytes[off + 2]) << 8) | uint32_t(bytes[off + 3]);
  };
  REQUIRE(bytes.size() > 45);
  w = u32(16);
  h = u32(20);
  size_t idat_len = u32(33);
  REQUIRE(std::string(bytes.begin() + 37, bytes.begin() + 41) == "IDAT");
  std::vector<uint8_t> raw(static_cast<size_t>(h) * (1 + w * 3));
  uLongf out_len = static_cast<uLongf>(raw.size());
  REQUIRE(uncompress(raw.data(), &out_len, bytes.data() + 41,
                     static_cast<uLong>(idat_len)) == Z_OK);
  std::vector<uint8_t> rgb(static_cast<size_t>(h) * w * 3);
  for (int64_t y = 0; y < h; ++y) {
    REQUIRE(raw[y * (1 + w * 3)] == 0);  // filter byte
    std::copy(raw.begin() + y * (1 + w * 3) + 1,
              raw.begin() + (y + 1) * (1 + w * 3), rgb.begin() + y * w * 3);
  }
  return rgb;
}

}  // namespace

TEST_CASE("render_map colors match predictions pixel for pixel") {
  GroundTruthMap gt = make_synthetic_gt({12, 10, 4, 3}, "map");
  // punch a few unlabeled holes
  gt.at(0, 0) = 0;
  gt.at(5, 5) = 0;
  std::vector<int> pred(gt.labels.begin(), gt.labels.end());
  pred[7 * 10 + 3] = 2;  // one disagreement; still a valid class

  auto dir = fs::temp_directory_path() / "s4l_map_test";
  fs::create_directories(dir);
  auto palette = default_palette(3);
  render_map(gt, pred, palette, (dir / "map.png").string());

  int64_t w = 0, h = 0;
  auto rgb = decode_png_rgb(dir / "map.png", w, h);
  REQUIRE(w == 10);
  REQUIRE(h == 12);

  // histogram oracle: color counts equal per-class prediction counts
  std::map<int, int64_t> pred_counts;
  for (int64_t i = 0; i < static_cast<int64_t>(gt.labels.size()); ++i)
    if (gt.labels[i] != 0) ++pred_counts[pred[i]];
  std::map<int, int64_t> color_counts;
  int64_t black = 0;
  for (int64_t i = 0; i < w * h; ++i) {
    Rgb px{rgb[i * 3], rgb[i * 3 + 1], rgb[i * 3 + 2]};
    bool matched = false;
    for (auto& [cls, color] : palette)
      if (px.r == color.r && px.g == color.g && px.b == color.b) {
        ++color_counts[cls];
        matched = true;
        break;
      }
    if (!matched) {
      CHECK(px.r == 0);
      CHECK(px.g == 0);
      CHECK(px.b == 0);
      ++black;
    }
  }
  CHECK(black == 2);
  for (auto& [cls, count] : pred_counts) CHECK(color_counts[cls] == count);
}

TEST_CASE("render_map error paths") {
  GroundTruthMap gt = make_synthetic_gt({6, 6, 4, 2}, "bad");
  std::vector<int> pred(gt.labels.begin(), gt.labels.end());
  auto dir = fs::temp_directory_path() / "s4l_map_test";
  fs::create_directories(dir);

  SUBCASE("palette missing a class") {
    auto palette = default_palette(1);  // class 2 missing
    try {
      render_map(gt, pred, palette, (dir / "x.png").string());
      FAIL("expected render error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Render);
    }
  }
  SUBCASE("labeled pixel without prediction") {
    pred[3] = 0;
    try {
      render_map(gt, pred, default_palette(2), (dir / "x.png").string());
      FAIL("expected render error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Render);
    }
  }
}

TEST_SUITE_END();
