#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "s4l/hsi_data.hpp"
#include "s4l/patch_sampler.hpp"

namespace s4l {

// Synthetic dataset generators for demos and end-to-end tests: class
// signatures are well-separated Gaussian spectral bumps, pixels get mild
// multiplicative spatial texture plus additive noise, and the ground truth
// partitions the scene into contiguous per-class regions.
struct SyntheticSpec {
  int64_t height = 48, width = 48, bands = 16;
  int n_classes = 3;
  double noise_sigma = 0.02;
  double texture = 0.1;
};

HsiCube make_synthetic_cube(const SyntheticSpec& spec, const std::string& name,
                            uint64_t seed);
GroundTruthMap make_synthetic_gt(const SyntheticSpec& spec,
                                 const std::string& name);

// 33x33x3 class-structured images (oriented gradients and stripes), grouped
// by class, for exercising the heterogeneous pretraining stage.
std::vector<std::vector<Patch>> make_synthetic_hetero_pool(int n_classes,
                                                           int per_class,
                                                           uint64_t seed);

}  // namespace s4l
