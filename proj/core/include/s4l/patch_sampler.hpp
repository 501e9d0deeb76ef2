#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "s4l/hsi_data.hpp"
#include "s4l/rng.hpp"

namespace s4l {

// Square window around a center pixel, [size][size][bands] layout. The label
// is the center pixel's class (0 = none).
struct Patch {
  int size = 0;
  int bands = 0;
  Coord center;
  int label = 0;
  std::vector<float> window;  // [size][size][bands]

  float at(int y, int x, int b) const {
    return window[(static_cast<int64_t>(y) * size + x) * bands + b];
  }
  float& at(int y, int x, int b) {
    return window[(static_cast<int64_t>(y) * size + x) * bands + b];
  }
};

// size x size neighborhood of (y, x) with mirror (reflect-without-repeat)
// padding at the borders; window[mid][mid] always equals the cube spectrum
// at the center.
Patch extract_patch(const HsiCube& cube, int y, int x, int size = 33);

// The center spectrum as an independent vector of length bands.
std::vector<float> center_spectrum(const Patch& patch);

// One N-way K-shot C-query task. Items are (class, index-within-class)
// references into whatever pool the caller samples from; local labels are
// assigned in draw order.
struct EpisodeItem {
  int cls = 0;    // pool class index
  int index = 0;  // item index within that class
  int local = 0;  // 0..N-1
};

struct Episode {
  int ways = 0, shots = 0, queries = 0;
  std::vector<EpisodeItem> support;  // N*K entries
  std::vector<EpisodeItem> query;    // N*C entries
  std::vector<int> class_map;        // local label -> pool class index
};

// Draws N classes uniformly without replacement from those with at least
// K + C items, then K + C items per class without replacement (first K ->
// support, rest -> query).
Episode sample_episode(const std::vector<int64_t>& class_sizes, int ways,
                       int shots, int queries, Rng& rng);

}  // namespace s4l
