#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "s4l/errors.hpp"
#include "s4l/rng.hpp"

namespace s4l {

struct Coord {
  int y = 0, x = 0;
  bool operator==(const Coord&) const = default;
  bool operator<(const Coord& o) const {
    return y != o.y ? y < o.y : x < o.x;
  }
};

// Radiance cube in canonical [h][w][b] layout. File form is a JSON sidecar
// (<name>.cube.json) plus a raw little-endian f32 payload (<name>.cube.bin).
struct HsiCube {
  std::string name;
  int64_t height = 0, width = 0, bands = 0;
  std::vector<float> values;  // [h][w][b]
  bool normalized = false;

  float at(int64_t y, int64_t x, int64_t b) const {
    return values[(y * width + x) * bands + b];
  }
  float& at(int64_t y, int64_t x, int64_t b) {
    return values[(y * width + x) * bands + b];
  }
  const float* spectrum(int64_t y, int64_t x) const {
    return values.data() + (y * width + x) * bands;
  }
};

// Per-pixel class ids; 0 marks unlabeled ground.
struct GroundTruthMap {
  std::string name;
  int64_t height = 0, width = 0;
  int n_classes = 0;
  std::vector<uint16_t> labels;  // [h][w]

  uint16_t at(int64_t y, int64_t x) const { return labels[y * width + x]; }
  uint16_t& at(int64_t y, int64_t x) { return labels[y * width + x]; }
};

// K0-per-class labeled coordinates plus the disjoint test remainder.
struct SplitSpec {
  std::string name;
  uint64_t seed = 0;
  int k0 = 0;
  double subsample_fraction = 1.0;
  int n_classes = 0;
  std::map<int, std::vector<Coord>> labeled;      // class -> D_l coords
  std::vector<std::pair<Coord, int>> test;        // D_u coords with class
};

// Expansion plan for the augmented labeled set: the originals plus seeded
// noise-augmented copies, materialized lazily from (source coord, seed).
struct AugmentedEntry {
  Coord src;
  uint64_t aug_seed = 0;
  bool original = false;
};

struct AugmentedLabeledSet {
  int target_count = 0;
  std::map<int, std::vector<AugmentedEntry>> per_class;
};

// Layout metadata for foreign raw payloads.
struct CubeDescriptor {
  int64_t height = 0, width = 0, bands = 0;
  std::string dtype = "f32le";  // f32le | f64le | u16le | i16le
  std::string order = "hwb";    // any permutation of h, w, b
};

struct GtDescriptor {
  int64_t height = 0, width = 0;
  std::string dtype = "u16le";  // u16le | u8
};

// --- ingestion ------------------------------------------------------------

HsiCube import_cube(const std::string& payload_path,
                    const CubeDescriptor& desc, const std::string& name);
GroundTruthMap import_gt(const std::string& payload_path,
                         const GtDescriptor& desc, const std::string& name);

// Canonical container round trip. `sidecar_path` is the .json file; the .bin
// payload sits next to it.
void save_cube(const HsiCube& cube, const std::string& sidecar_path);
HsiCube load_cube(const std::string& sidecar_path);
void save_gt(const GroundTruthMap& gt, const std::string& sidecar_path);
GroundTruthMap load_gt(const std::string& sidecar_path);
void save_split(const SplitSpec& split, const std::string& path);
SplitSpec load_split(const std::string& path);
void save_augmented_set(const AugmentedLabeledSet& aug, const std::string& path);
AugmentedLabeledSet load_augmented_set(const std::string& path);

// --- operations -----------------------------------------------------------

// Per-band min-max scaling to [0,1]; a constant band maps to all zeros.
// Idempotent: re-normalizing a normalized cube is the identity.
HsiCube normalize_cube(HsiCube cube);

// Retains round(fraction * count) pixels per class (floor of one), chosen
// uniformly without replacement; dropped pixels are relabeled 0.
GroundTruthMap subsample_classes(const GroundTruthMap& gt, double fraction,
                                 Rng& rng);

// K0 uniform draws per class without replacement -> labeled; rest -> test.
SplitSpec build_splits(const GroundTruthMap& gt, int k0, uint64_t seed);

// Plan for D_l1: the K0 originals plus seeded noise-augmented copies per
// class up to target_count.
AugmentedLabeledSet build_augmented_set(const SplitSpec& split,
                                        int target_count, Rng& rng);

void validate_gt(const GroundTruthMap& gt);
std::vector<std::vector<Coord>> class_coordinates(const GroundTruthMap& gt);

}  // namespace s4l
