#include "s4l/patch_sampler.hpp"

#include <algorithm>

#include "s4l/errors.hpp"

namespace s4l {

namespace {

// Reflect-without-repeat index map: ... 2 1 | 0 1 2 ... n-1 | n-2 n-3 ...
int64_t reflect(int64_t i, int64_t n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

}  // namespace

Patch extract_patch(const HsiCube& cube, int y, int x, int size) {
  if (size % 2 == 0 || size < 1)
    raise(ErrorKind::Config, "patch size must be odd, got " + std::to_string(size));
  if (size > 2 * std::min(cube.height, cube.width))
    raise(ErrorKind::Config, "patch size " + std::to_string(size) +
                                 " exceeds twice the smaller cube dimension");
  if (y < 0 || y >= cube.height || x < 0 || x >= cube.width)
    raise(ErrorKind::Contract, "patch center outside cube");

  Patch p;
  p.size = size;
  p.bands = static_cast<int>(cube.bands);
  p.center = {y, x};
  p.window.resize(static_cast<size_t>(size) * size * cube.bands);
  int half = size / 2;
  for (int dy = 0; dy < size; ++dy) {
    int64_t sy = reflect(y - half + dy, cube.height);
    for (int dx = 0; dx < size; ++dx) {
      int64_t sx = reflect(x - half + dx, cube.width);
      const float* src = cube.spectrum(sy, sx);
      float* dst = &p.at(dy, dx, 0);
      std::copy(src, src + cube.bands, dst);
    }
  }
  return p;
}

std::vector<float> center_spectrum(const Patch& patch) {
  int mid = patch.size / 2;
  std::vector<float> spec(patch.bands);
  for (int b = 0; b < patch.bands; ++b) spec[b] = patch.at(mid, mid, b);
  return spec;
}

Episode sample_episode(const std::vector<int64_t>& class_sizes, int ways,
                       int shots, int queries, Rng& rng) {
  if (ways < 1 || shots < 1 || queries < 0)
    raise(ErrorKind::Config, "episode shape must satisfy N>=1, K>=1, C>=0");
  int64_t need = shots + queries;
  std::vector<int> qualifying;
  for (size_t c = 0; c < class_sizes.size(); ++c)
    if (class_sizes[c] >= need) qualifying.push_back(static_cast<int>(c));
  if (static_cast<int>(qualifying.size()) < ways) {
    for (size_t c = 0; c < class_sizes.size(); ++c)
      if (class_sizes[c] < need)
        raise(ErrorKind::Episode,
              "class " + std::to_string(c) + " has " +
                  std::to_string(class_sizes[c]) + " items, episode needs " +
                  std::to_string(need));
    raise(ErrorKind::Episode, "pool has " + std::to_string(qualifying.size()) +
                                  " classes, episode needs " +
                                  std::to_string(ways));
  }

  Episode ep;
  ep.ways = ways;
  ep.shots = shots;
  ep.queries = queries;
  auto class_pick =
      rng.sample_without_replacement(static_cast<int64_t>(qualifying.size()), ways);
  for (int local = 0; local < ways; ++local) {
    int cls = qualifying[class_pick[local]];
    ep.class_map.push_back(cls);
    auto items = rng.sample_without_replacement(class_sizes[cls], need);
    for (int i = 0; i < shots; ++i)
      ep.support.push_back({cls, static_cast<int>(items[i]), local});
    for (int i = 0; i < queries; ++i)
      ep.query.push_back({cls, static_cast<int>(items[shots + i]), local});
  }
  return ep;
}

}  // namespace s4l
