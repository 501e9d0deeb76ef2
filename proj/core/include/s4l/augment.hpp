#pragma once

#include <cstdint>
#include <vector>

#include "s4l/patch_sampler.hpp"
#include "s4l/rng.hpp"

namespace s4l {

// The six-element rotation-mirror group: 1..4 are rotations by 0/90/180/270
// degrees, 5 is a horizontal flip, 6 a vertical flip.
struct RmTransformId {
  int k = 1;
};
constexpr int kRmTransformCount = 6;

// alpha * x + n / 25 with one alpha ~ U(0.9, 1.1) per call and n elementwise
// standard normal. Draw order: alpha first, then n in element order.
std::vector<float> noise_augment(const std::vector<float>& x, Rng& rng);
Patch noise_augment(const Patch& p, Rng& rng);

// Spatial axes permuted/reflected per id; band axis and label untouched.
Patch rm_transform(const Patch& p, RmTransformId id);

// All six transforms of every input, input-major then k-ascending.
std::vector<std::pair<Patch, int>> rm_expand(const std::vector<Patch>& batch);

// Rotation-only variant (k in 1..4) used by the v0 ablation.
std::vector<std::pair<Patch, int>> rot4_expand(const std::vector<Patch>& batch);

// Spectrum with an exact-count random band mask (1 = masked).
struct MaskedSpectrum {
  std::vector<float> original;
  std::vector<float> masked;  // original with masked bands zeroed
  std::vector<uint8_t> mask;
};

// Exactly floor(ratio * B) positions drawn uniformly without replacement.
MaskedSpectrum mask_spectrum(const std::vector<float>& x, double ratio,
                             Rng& rng);

// View generator for the target-domain consistency task: either a random
// resized crop (area U(0.7,1.0), aspect U(3/4,4/3), bicubic back to the
// original size, then flips/90-degree rotation each with probability 0.5)
// or noise augmentation, branch chosen with probability 0.5.
Patch sslcl_augment(const Patch& p, Rng& rng);

// Bicubic (Catmull-Rom) resize of an [h][w][bands] window.
std::vector<float> bicubic_resize(const std::vector<float>& src, int sh, int sw,
                                  int bands, int dh, int dw);

// Materializes an augmented-set entry: the source patch itself when the
// entry is an original, otherwise its seeded noise-augmented copy.
Patch materialize_entry(const HsiCube& cube, const AugmentedEntry& entry,
                        int label, int patch_size = 33);

}  // namespace s4l
