#include "s4l/hsi_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace s4l {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<char> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) raise(ErrorKind::Io, "cannot open " + path);
  f.seekg(0, std::ios::end);
  auto n = f.tellg();
  f.seekg(0);
  std::vector<char> buf(static_cast<size_t>(n));
  f.read(buf.data(), n);
  if (!f) raise(ErrorKind::Io, "short read on " + path);
  return buf;
}

void write_file(const std::string& path, const void* data, size_t n) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) raise(ErrorKind::Io, "cannot open " + path + " for writing");
  f.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!f) raise(ErrorKind::Io, "short write on " + path);
}

std::string bin_path_for(const std::string& sidecar) {
  if (sidecar.size() < 5 || sidecar.substr(sidecar.size() - 5) != ".json")
    raise(ErrorKind::Io, "sidecar path must end in .json: " + sidecar);
  return sidecar.substr(0, sidecar.size() - 5) + ".bin";
}

json load_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) raise(ErrorKind::Io, "cannot open " + path);
  json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    raise(ErrorKind::Format, path + ": " + e.what());
  }
  return j;
}

void write_json(const json& j, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) raise(ErrorKind::Io, "cannot open " + path + " for writing");
  f << j.dump(2) << "\n";
}

size_t dtype_size(const std::string& dtype) {
  if (dtype == "f32le") return 4;
  if (dtype == "f64le") return 8;
  if (dtype == "u16le" || dtype == "i16le") return 2;
  if (dtype == "u8") return 1;
  raise(ErrorKind::Format, "unknown dtype " + dtype);
}

float decode_elem(const char* p, const std::string& dtype) {
  if (dtype == "f32le") {
    float v;
    std::memcpy(&v, p, 4);
    return v;
  }
  if (dtype == "f64le") {
    double v;
    std::memcpy(&v, p, 8);
    return static_cast<float>(v);
  }
  if (dtype == "u16le") {
    uint16_t v;
    std::memcpy(&v, p, 2);
    return static_cast<float>(v);
  }
  if (dtype == "i16le") {
    int16_t v;
    std::memcpy(&v, p, 2);
    return static_cast<float>(v);
  }
  if (dtype == "u8") return static_cast<float>(*reinterpret_cast<const uint8_t*>(p));
  raise(ErrorKind::Format, "unknown dtype " + dtype);
}

}  // namespace

HsiCube import_cube(const std::string& payload_path, const CubeDescriptor& desc,
                    const std::string& name) {
  if (desc.height <= 0 || desc.width <= 0 || desc.bands < 1)
    raise(ErrorKind::Format, "descriptor dimensions must be positive");
  std::string order = desc.order;
  std::string sorted = order;
  std::sort(sorted.begin(), sorted.end());
  if (order.size() != 3 || sorted != "bhw")
    raise(ErrorKind::Format, "order must be a permutation of hwb, got " + order);

  auto bytes = read_file(payload_path);
  size_t es = dtype_size(desc.dtype);
  int64_t n_elem = desc.height * desc.width * desc.bands;
  if (bytes.size() != static_cast<size_t>(n_elem) * es)
    raise(ErrorKind::Format,
          "payload holds " + std::to_string(bytes.size() / es) +
              " elements, descriptor declares " + std::to_string(n_elem));

  // axis extents and strides of the source layout
  auto extent = [&](char a) -> int64_t {
    return a == 'h' ? desc.height : a == 'w' ? desc.width : desc.bands;
  };
  int64_t stride[3];
  stride[2] = 1;
  stride[1] = extent(order[2]);
  stride[0] = extent(order[1]) * extent(order[2]);
  int64_t sh = 0, sw = 0, sb = 0;
  for (int i = 0; i < 3; ++i) {
    if (order[i] == 'h') sh = stride[i];
    if (order[i] == 'w') sw = stride[i];
    if (order[i] == 'b') sb = stride[i];
  }

  HsiCube cube;
  cube.name = name;
  cube.height = desc.height;
  cube.width = desc.width;
  cube.bands = desc.bands;
  cube.values.resize(static_cast<size_t>(n_elem));
  for (int64_t y = 0; y < desc.height; ++y)
    for (int64_t x = 0; x < desc.width; ++x)
      for (int64_t b = 0; b < desc.bands; ++b) {
        int64_t src = y * sh + x * sw + b * sb;
        float v = decode_elem(bytes.data() + src * es, desc.dtype);
        if (!std::isfinite(v))
          raise(ErrorKind::Data, "non-finite value at element " +
                                     std::to_string(src));
        cube.at(y, x, b) = v;
      }
  return cube;
}

GroundTruthMap import_gt(const std::string& payload_path,
                         const GtDescriptor& desc, const std::string& name) {
  auto bytes = read_file(payload_path);
  size_t es = dtype_size(desc.dtype);
  int64_t n_elem = desc.height * desc.width;
  if (bytes.size() != static_cast<size_t>(n_elem) * es)
    raise(ErrorKind::Format,
          "gt payload holds " + std::to_string(bytes.size() / es) +
              " elements, descriptor declares " + std::to_string(n_elem));
  GroundTruthMap gt;
  gt.name = name;
  gt.height = desc.height;
  gt.width = desc.width;
  gt.labels.resize(static_cast<size_t>(n_elem));
  int max_label = 0;
  for (int64_t i = 0; i < n_elem; ++i) {
    float v = decode_elem(bytes.data() + i * es, desc.dtype);
    gt.labels[i] = static_cast<uint16_t>(v);
    max_label = std::max(max_label, static_cast<int>(gt.labels[i]));
  }
  gt.n_classes = max_label;
  validate_gt(gt);
  return gt;
}

void validate_gt(const GroundTruthMap& gt) {
  std::vector<int64_t> counts(gt.n_classes + 1, 0);
  for (uint16_t l : gt.labels) {
    if (l > gt.n_classes)
      raise(ErrorKind::Data, "label " + std::to_string(l) + " exceeds n_classes");
    ++counts[l];
  }
  for (int c = 1; c <= gt.n_classes; ++c)
    if (counts[c] == 0)
      raise(ErrorKind::Data, "class " + std::to_string(c) + " has no pixels");
}

void save_cube(const HsiCube& cube, const std::string& sidecar_path) {
  json j{{"name", cube.name},
         {"height", cube.height},
         {"width", cube.width},
         {"bands", cube.bands},
         {"dtype", "f32le"},
         {"order", "hwb"},
         {"normalized", cube.normalized}};
  write_json(j, sidecar_path);
  write_file(bin_path_for(sidecar_path), cube.values.data(),
             cube.values.size() * sizeof(float));
}

HsiCube load_cube(const std::string& sidecar_path) {
  json j = load_json(sidecar_path);
  CubeDescriptor d;
  d.height = j.at("height").get<int64_t>();
  d.width = j.at("width").get<int64_t>();
  d.bands = j.at("bands").get<int64_t>();
  d.dtype = j.at("dtype").get<std::string>();
  d.order = j.at("order").get<std::string>();
  HsiCube cube = import_cube(bin_path_for(sidecar_path), d,
                             j.value("name", std::string{}));
  cube.normalized = j.value("normalized", false);
  return cube;
}

void save_gt(const GroundTruthMap& gt, const std::string& sidecar_path) {
  json j{{"name", gt.name},
         {"height", gt.height},
         {"width", gt.width},
         {"n_classes", gt.n_classes},
         {"dtype", "u16le"},
         {"order", "hw"}};
  write_json(j, sidecar_path);
  write_file(bin_path_for(sidecar_path), gt.labels.data(),
             gt.labels.size() * sizeof(uint16_t));
}

GroundTruthMap load_gt(const std::string& sidecar_path) {
  json j = load_json(sidecar_path);
  GtDescriptor d;
  d.height = j.at("height").get<int64_t>();
  d.width = j.at("width").get<int64_t>();
  d.dtype = j.value("dtype", "u16le");
  GroundTruthMap gt = import_gt(bin_path_for(sidecar_path), d,
                                j.value("name", std::string{}));
  gt.n_classes = j.at("n_classes").get<int>();
  validate_gt(gt);
  return gt;
}

HsiCube normalize_cube(HsiCube cube) {
  int64_t pixels = cube.height * cube.width;
  for (int64_t b = 0; b < cube.bands; ++b) {
    float lo = cube.values[b], hi = cube.values[b];
    for (int64_t p = 1; p < pixels; ++p) {
      float v = cube.values[p * cube.bands + b];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    float range = hi - lo;
    if (range == 0.0f) {
      for (int64_t p = 0; p < pixels; ++p) cube.values[p * cube.bands + b] = 0.0f;
    } else {
      for (int64_t p = 0; p < pixels; ++p) {
        float& v = cube.values[p * cube.bands + b];
        v = (v - lo) / range;
      }
    }
  }
  cube.normalized = true;
  return cube;
}

std::vector<std::vector<Coord>> class_coordinates(const GroundTruthMap& gt) {
  std::vector<std::vector<Coord>> coords(gt.n_classes + 1);
  for (int64_t y = 0; y < gt.height; ++y)
    for (int64_t x = 0; x < gt.width; ++x) {
      uint16_t l = gt.at(y, x);
      if (l > 0) coords[l].push_back({static_cast<int>(y), static_cast<int>(x)});
    }
  return coords;
}

GroundTruthMap subsample_classes(const GroundTruthMap& gt, double fraction,
                                 Rng& rng) {
  if (fraction <= 0.0 || fraction > 1.0)
    raise(ErrorKind::Config, "subsample fraction must be in (0, 1]");
  if (fraction == 1.0) return gt;
  GroundTruthMap out = gt;
  std::fill(out.labels.begin(), out.labels.end(), uint16_t(0));
  auto coords = class_coordinates(gt);
  for (int c = 1; c <= gt.n_classes; ++c) {
    int64_t count = static_cast<int64_t>(coords[c].size());
    if (count == 0)
      raise(ErrorKind::Split, "class " + std::to_string(c) + " is empty");
    int64_t keep = std::max<int64_t>(1, std::llround(fraction * count));
    auto idx = rng.sample_without_replacement(count, keep);
    for (int64_t i : idx) out.at(coords[c][i].y, coords[c][i].x) = c;
  }
  return out;
}

SplitSpec build_splits(const GroundTruthMap& gt, int k0, uint64_t seed) {
  if (k0 < 1) raise(ErrorKind::Config, "k0 must be >= 1");
  Rng rng(seed);
  auto coords = class_coordinates(gt);
  SplitSpec split;
  split.name = gt.name;
  split.seed = seed;
  split.k0 = k0;
  split.n_classes = gt.n_classes;
  for (int c = 1; c <= gt.n_classes; ++c) {
    int64_t count = static_cast<int64_t>(coords[c].size());
    if (count <= k0)
      raise(ErrorKind::Split, "class " + std::to_string(c) + " has " +
                                  std::to_string(count) +
                                  " pixels, need more than " + std::to_string(k0));
    auto idx = rng.sample_without_replacement(count, k0);
    std::vector<char> is_labeled(count, 0);
    for (int64_t i : idx) is_labeled[i] = 1;
    auto& lab = split.labeled[c];
    for (int64_t i = 0; i < count; ++i) {
      if (is_labeled[i])
        lab.push_back(coords[c][i]);
      else
        split.test.emplace_back(coords[c][i], c);
    }
  }
  return split;
}

AugmentedLabeledSet build_augmented_set(const SplitSpec& split,
                                        int target_count, Rng& rng) {
  if (target_count < split.k0)
    raise(ErrorKind::Config, "target_count " + std::to_string(target_count) +
                                 " is below k0 " + std::to_string(split.k0));
  AugmentedLabeledSet aug;
  aug.target_count = target_count;
  for (const auto& [cls, coords] : split.labeled) {
    auto& entries = aug.per_class[cls];
    for (const Coord& c : coords) entries.push_back({c, 0, true});
    int extra = target_count - static_cast<int>(coords.size());
    for (int i = 0; i < extra; ++i) {
      const Coord& src = coords[static_cast<size_t>(i) % coords.size()];
      entries.push_back({src, rng.next_u64(), false});
    }
  }
  return aug;
}

void save_split(const SplitSpec& split, const std::string& path) {
  json lab = json::object();
  for (const auto& [cls, coords] : split.labeled) {
    json arr = json::array();
    for (const Coord& c : coords) arr.push_back({c.y, c.x});
    lab[std::to_string(cls)] = arr;
  }
  json test = json::array();
  for (const auto& [c, cls] : split.test) test.push_back({c.y, c.x, cls});
  json j{{"name", split.name},
         {"seed", split.seed},
         {"k0", split.k0},
         {"subsample_fraction", split.subsample_fraction},
         {"n_classes", split.n_classes},
         {"labeled", lab},
         {"test", test}};
  write_json(j, path);
}

SplitSpec load_split(const std::string& path) {
  json j = load_json(path);
  SplitSpec s;
  s.name = j.value("name", std::string{});
  s.seed = j.at("seed").get<uint64_t>();
  s.k0 = j.at("k0").get<int>();
  s.subsample_fraction = j.value("subsample_fraction", 1.0);
  s.n_classes = j.at("n_classes").get<int>();
  for (auto& [key, arr] : j.at("labeled").items()) {
    auto& coords = s.labeled[std::stoi(key)];
    for (auto& c : arr) coords.push_back({c.at(0).get<int>(), c.at(1).get<int>()});
  }
  for (auto& t : j.at("test"))
    s.test.emplace_back(Coord{t.at(0).get<int>(), t.at(1).get<int>()},
                        t.at(2).get<int>());
  return s;
}

void save_augmented_set(const AugmentedLabeledSet& aug, const std::string& path) {
  json per = json::object();
  for (const auto& [cls, entries] : aug.per_class) {
    json arr = json::array();
    for (const auto& e : entries)
      arr.push_back({{"src", {e.src.y, e.src.x}},
                     {"seed", e.aug_seed},
                     {"original", e.original}});
    per[std::to_string(cls)] = arr;
  }
  write_json(json{{"target_count", aug.target_count}, {"per_class", per}}, path);
}

AugmentedLabeledSet load_augmented_set(const std::string& path) {
  json j = load_json(path);
  AugmentedLabeledSet aug;
  aug.target_count = j.at("target_count").get<int>();
  for (auto& [key, arr] : j.at("per_class").items()) {
    auto& entries = aug.per_class[std::stoi(key)];
    for (auto& e : arr)
      entries.push_back({{e.at("src").at(0).get<int>(), e.at("src").at(1).get<int>()},
                         e.at("seed").get<uint64_t>(),
                         e.at("original").get<bool>()});
  }
  return aug;
}

}  // namespace s4l
