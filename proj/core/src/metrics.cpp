#include "s4l/metrics.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "s4l/errors.hpp"
#include "s4l/png_write.hpp"

namespace s4l {

using nlohmann::json;

MetricsReport compute_metrics(const std::vector<int>& truth,
                              const std::vector<int>& predicted, int n_classes) {
  if (truth.empty()) raise(ErrorKind::Metric, "empty evaluation input");
  if (truth.size() != predicted.size())
    raise(ErrorKind::Metric, "label vectors differ in length");
  if (n_classes < 1) raise(ErrorKind::Metric, "n_classes must be >= 1");

  MetricsReport r;
  r.n_classes = n_classes;
  r.n_test = static_cast<int64_t>(truth.size());
  r.confusion.assign(static_cast<size_t>(n_classes) * n_classes, 0);
  for (size_t i = 0; i < truth.size(); ++i) {
    int t = truth[i], p = predicted[i];
    if (t < 1 || t > n_classes || p < 1 || p > n_classes)
      raise(ErrorKind::Metric, "label outside 1..n_classes");
    ++r.confusion[(t - 1) * n_classes + (p - 1)];
  }

  std::vector<int64_t> row_sum(n_classes, 0), col_sum(n_classes, 0);
  int64_t trace = 0;
  for (int t = 0; t < n_classes; ++t)
    for (int p = 0; p < n_classes; ++p) {
      int64_t c = r.confusion[t * n_classes + p];
      row_sum[t] += c;
      col_sum[p] += c;
      if (t == p) trace += c;
    }
  for (int t = 0; t < n_classes; ++t)
    if (row_sum[t] == 0)
      raise(ErrorKind::Metric,
            "class " + std::to_string(t + 1) + " missing from evaluation input");

  double n = static_cast<double>(r.n_test);
  r.oa = static_cast<double>(trace) / n;
  r.per_class_acc.resize(n_classes);
  double acc_sum = 0.0;
  for (int t = 0; t < n_classes; ++t) {
    r.per_class_acc[t] = static_cast<double>(r.confusion[t * n_classes + t]) /
                         static_cast<double>(row_sum[t]);
    acc_sum += r.per_class_acc[t];
  }
  r.aa = acc_sum / n_classes;

  double pe = 0.0;
  for (int m = 0; m < n_classes; ++m)
    pe += static_cast<double>(row_sum[m]) * static_cast<double>(col_sum[m]);
  pe /= n * n;
  if (std::fabs(1.0 - pe) < 1e-15) {
    // degenerate chance agreement: every prediction and truth in one class
    r.kappa = r.oa >= 1.0 ? 1.0 : 0.0;
  } else {
    r.kappa = (r.oa - pe) / (1.0 - pe);
  }
  return r;
}

RunAggregate aggregate_runs(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) raise(ErrorKind::Contract, "aggregate_runs: no reports");
  int n_classes = reports[0].n_classes;
  for (const auto& r : reports)
    if (r.n_classes != n_classes)
      raise(ErrorKind::Contract, "aggregate_runs: inconsistent class counts");

  auto stat_of = [](std::vector<double> values) {
    Stat s;
    s.values = std::move(values);
    double sum = 0.0;
    for (double v : s.values) sum += v;
    s.mean = sum / static_cast<double>(s.values.size());
    if (s.values.size() > 1) {
      double ss = 0.0;
      for (double v : s.values) ss += (v - s.mean) * (v - s.mean);
      s.stddev = std::sqrt(ss / static_cast<double>(s.values.size() - 1));
    }
    return s;
  };

  RunAggregate agg;
  agg.n_runs = static_cast<int>(reports.size());
  agg.n_classes = n_classes;
  std::vector<double> oa, aa, kappa;
  for (const auto& r : reports) {
    oa.push_back(r.oa);
    aa.push_back(r.aa);
    kappa.push_back(r.kappa);
  }
  agg.oa = stat_of(std::move(oa));
  agg.aa = stat_of(std::move(aa));
  agg.kappa = stat_of(std::move(kappa));
  for (int c = 0; c < n_classes; ++c) {
    std::vector<double> v;
    for (const auto& r : reports) v.push_back(r.per_class_acc[c]);
    agg.per_class.push_back(stat_of(std::move(v)));
  }
  return agg;
}

std::map<int, Rgb> default_palette(int n_classes) {
  // fixed land-cover-style colors, then a deterministic golden-angle wheel
  static const Rgb base[] = {
      {216, 191, 216}, {0, 255, 0},     {0, 255, 255},  {45, 138, 86},
      {255, 0, 255},   {255, 165, 0},   {159, 31, 239}, {255, 0, 0},
      {255, 255, 0},   {100, 149, 237}, {0, 0, 255},    {139, 69, 19},
      {0, 128, 128},   {144, 238, 144}, {205, 92, 92},  {128, 0, 0}};
  std::map<int, Rgb> palette;
  for (int c = 1; c <= n_classes; ++c) {
    if (c <= 16) {
      palette[c] = base[c - 1];
    } else {
      double h = std::fmod(0.618033988749895 * c, 1.0) * 6.0;
      int i = static_cast<int>(h);
      double f = h - i;
      auto ch = [](double v) { return static_cast<uint8_t>(55 + 200 * v); };
      switch (i % 6) {
        case 0: palette[c] = {ch(1), ch(f), ch(0)}; break;
        case 1: palette[c] = {ch(1 - f), ch(1), ch(0)}; break;
        case 2: palette[c] = {ch(0), ch(1), ch(f)}; break;
        case 3: palette[c] = {ch(0), ch(1 - f), ch(1)}; break;
        case 4: palette[c] = {ch(f), ch(0), ch(1)}; break;
        default: palette[c] = {ch(1), ch(0), ch(1 - f)}; break;
      }
    }
  }
  return palette;
}

void render_map(const GroundTruthMap& gt, const std::vector<int>& predictions,
                const std::map<int, Rgb>& palette, const std::string& png_path) {
  if (predictions.size() != gt.labels.size())
    raise(ErrorKind::Render, "prediction map size does not match ground truth");
  std::vector<uint8_t> rgb(gt.labels.size() * 3, 0);
  for (size_t i = 0; i < gt.labels.size(); ++i) {
    if (gt.labels[i] == 0) continue;
    int p = predictions[i];
    if (p == 0)
      raise(ErrorKind::Render, "labeled pixel without prediction at index " +
                                   std::to_string(i));
    auto it = palette.find(p);
    if (it == palette.end())
      raise(ErrorKind::Render, "palette missing class " + std::to_string(p));
    rgb[i * 3] = it->second.r;
    rgb[i * 3 + 1] = it->second.g;
    rgb[i * 3 + 2] = it->second.b;
  }
  write_png_rgb8(png_path, gt.width, gt.height, rgb.data());
}

std::string metrics_to_json(const MetricsReport& r) {
  json j{{"n_classes", r.n_classes}, {"n_test", r.n_test},
         {"oa", r.oa},               {"aa", r.aa},
         {"kappa", r.kappa},         {"per_class_acc", r.per_class_acc},
         {"confusion", r.confusion}};
  return j.dump(2);
}

namespace {
json stat_json(const Stat& s) {
  return json{{"mean", s.mean}, {"std", s.stddev}, {"values", s.values}};
}
}  // namespace

std::string aggregate_to_json(const RunAggregate& a) {
  json per = json::array();
  for (const auto& s : a.per_class) per.push_back(stat_json(s));
  json j{{"n_runs", a.n_runs},     {"n_classes", a.n_classes},
         {"oa", stat_json(a.oa)},  {"aa", stat_json(a.aa)},
         {"kappa", stat_json(a.kappa)}, {"per_class", per}};
  return j.dump(2);
}

std::string aggregate_to_table(const RunAggregate& a) {
  std::ostringstream os;
  os << std::fixed;
  os << "Class      Accuracy (%)\n";
  os << "-------------------------------\n";
  for (int c = 0; c < a.n_classes; ++c)
    os << std::setw(5) << (c + 1) << "    " << std::setprecision(2)
       << std::setw(6) << 100.0 * a.per_class[c].mean << " +- "
       << std::setprecision(2) << 100.0 * a.per_class[c].stddev << "\n";
  os << "-------------------------------\n";
  auto line = [&](const char* name, const Stat& s, double scale) {
    os << std::setw(5) << name << "    " << std::setprecision(2) << std::setw(6)
       << scale * s.mean << " +- " << std::setprecision(2) << scale * s.stddev
       << "\n";
  };
  line("OA", a.oa, 100.0);
  line("AA", a.aa, 100.0);
  line("Kappa", a.kappa, 100.0);
  os << "(" << a.n_runs << " runs, mean +- std)\n";
  return os.str();
}

}  // namespace s4l
