#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace s4l {

// Named-tensor checkpoint container: a JSON manifest (<stage>.ckpt.json)
// listing {name, shape, offset} plus a concatenated little-endian f32
// payload (<stage>.ckpt.bin). Offsets count f32 elements and are strictly
// increasing; names are unique slash-delimited paths.
struct TensorEntry {
  std::string name;
  std::vector<int64_t> shape;
  int64_t offset = 0;

  int64_t numel() const {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
  }
};

struct TensorArchive {
  std::vector<TensorEntry> entries;
  std::vector<float> payload;

  void add(const std::string& name, std::vector<int64_t> shape,
           const float* data);
  const TensorEntry* find(const std::string& name) const;
  const float* tensor_data(const TensorEntry& e) const {
    return payload.data() + e.offset;
  }

  // Files are written to temporaries and renamed into place.
  void save(const std::string& sidecar_path) const;
  static TensorArchive load(const std::string& sidecar_path);
};

}  // namespace s4l
