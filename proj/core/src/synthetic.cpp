#include "s4l/synthetic.hpp"

#include <cmath>

namespace s4l {

HsiCube make_synthetic_cube(const SyntheticSpec& spec, const std::string& name,
                            uint64_t seed) {
  Rng rng(seed);
  HsiCube cube;
  cube.name = name;
  cube.height = spec.height;
  cube.width = spec.width;
  cube.bands = spec.bands;
  cube.values.resize(static_cast<size_t>(spec.height * spec.width * spec.bands));

  // one Gaussian bump per class, centers spread over the spectral axis
  std::vector<std::vector<double>> signature(spec.n_classes);
  double sigma_b = static_cast<double>(spec.bands) / (3.0 * spec.n_classes);
  for (int c = 0; c < spec.n_classes; ++c) {
    signature[c].resize(spec.bands);
    double center = (c + 0.5) * spec.bands / spec.n_classes;
    for (int64_t b = 0; b < spec.bands; ++b) {
      double d = (b - center) / sigma_b;
      signature[c][b] = 0.2 + std::exp(-0.5 * d * d);
    }
  }

  GroundTruthMap gt = make_synthetic_gt(spec, name);
  for (int64_t y = 0; y < spec.height; ++y)
    for (int64_t x = 0; x < spec.width; ++x) {
      int c = gt.at(y, x) - 1;
      double tex = 1.0 + spec.texture * std::sin(2.0 * M_PI * x / 7.0) *
                             std::sin(2.0 * M_PI * y / 5.0);
      for (int64_t b = 0; b < spec.bands; ++b)
        cube.at(y, x, b) = static_cast<float>(
            signature[c][b] * tex + spec.noise_sigma * rng.normal());
    }
  return cube;
}

GroundTruthMap make_synthetic_gt(const SyntheticSpec& spec,
                                 const std::string& name) {
  GroundTruthMap gt;
  gt.name = name;
  gt.height = spec.height;
  gt.width = spec.width;
  gt.n_classes = spec.n_classes;
  gt.labels.resize(static_cast<size_t>(spec.height * spec.width));
  // contiguous horizontal strips, one per class
  for (int64_t y = 0; y < spec.height; ++y) {
    int c = static_cast<int>(y * spec.n_classes / spec.height);
    if (c >= spec.n_classes) c = spec.n_classes - 1;
    for (int64_t x = 0; x < spec.width; ++x)
      gt.at(y, x) = static_cast<uint16_t>(c + 1);
  }
  return gt;
}

std::vector<std::vector<Patch>> make_synthetic_hetero_pool(int n_classes,
                                                           int per_class,
                                                           uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<Patch>> pool(n_classes);
  const int s = 33;
  for (int c = 0; c < n_classes; ++c) {
    for (int i = 0; i < per_class; ++i) {
      Patch p;
      p.size = s;
      p.bands = 3;
      p.label = c + 1;
      p.window.resize(static_cast<size_t>(s) * s * 3);
      double phase = rng.uniform(0.0, 2.0 * M_PI);
      double freq = 0.3 + 0.1 * (c % 3);
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
          // class-dependent oriented structure in each channel
          double u, v;
          switch (c % 4) {
            case 0: u = x; v = y; break;
            case 1: u = y; v = x; break;
            case 2: u = x + y; v = x - y; break;
            default: u = std::hypot(x - 16.0, y - 16.0); v = x; break;
          }
          double base = 0.5 + 0.4 * std::sin(freq * u + phase);
          double alt = 0.5 + 0.3 * std::cos(0.2 * v + phase);
          p.at(y, x, 0) = static_cast<float>(base + 0.02 * rng.normal());
          p.at(y, x, 1) = static_cast<float>(alt + 0.02 * rng.normal());
          p.at(y, x, 2) = static_cast<float>(
              0.5 * (base + alt) * (0.4 + 0.2 * (c % 5)) + 0.02 * rng.normal());
        }
      pool[c].push_back(std::move(p));
    }
  }
  return pool;
}

}  // namespace s4l
