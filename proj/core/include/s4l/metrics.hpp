#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "s4l/hsi_data.hpp"

namespace s4l {

// Confusion-matrix evaluation; rows are true classes. oa = trace fraction,
// aa = mean per-class recall, kappa = (p_o - p_e) / (1 - p_e).
struct MetricsReport {
  int n_classes = 0;
  int64_t n_test = 0;
  std::vector<int64_t> confusion;      // [N][N]
  std::vector<double> per_class_acc;   // recall per class
  double oa = 0.0, aa = 0.0, kappa = 0.0;

  int64_t cell(int t, int p) const { return confusion[t * n_classes + p]; }
};

// Labels in 1..N, equal lengths.
MetricsReport compute_metrics(const std::vector<int>& truth,
                              const std::vector<int>& predicted, int n_classes);

struct Stat {
  double mean = 0.0, stddev = 0.0;
  std::vector<double> values;
};

struct RunAggregate {
  int n_runs = 0;
  int n_classes = 0;
  Stat oa, aa, kappa;
  std::vector<Stat> per_class;
};

// Mean and sample standard deviation (n-1 denominator, 0 for a single run).
RunAggregate aggregate_runs(const std::vector<MetricsReport>& reports);

struct Rgb {
  uint8_t r = 0, g = 0, b = 0;
};

// Deterministic per-class colors; class 0 (unlabeled) is black.
std::map<int, Rgb> default_palette(int n_classes);

// Renders the predicted class of every labeled pixel with the palette color;
// unlabeled pixels stay black. `predictions` is a full-size row-major map
// with 0 on unlabeled ground.
void render_map(const GroundTruthMap& gt, const std::vector<int>& predictions,
                const std::map<int, Rgb>& palette, const std::string& png_path);

std::string metrics_to_json(const MetricsReport& r);
std::string aggregate_to_json(const RunAggregate& a);
// Paper-style table: one row per class, then OA/AA/Kappa with +- std.
std::string aggregate_to_table(const RunAggregate& a);

}  // namespace s4l
