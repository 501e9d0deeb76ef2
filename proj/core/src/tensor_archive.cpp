#include "s4l/tensor_archive.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "s4l/errors.hpp"

namespace s4l {

namespace fs = std::filesystem;
using nlohmann::json;

void TensorArchive::add(const std::string& name, std::vector<int64_t> shape,
                        const float* data) {
  if (find(name)) raise(ErrorKind::Contract, "duplicate tensor name " + name);
  TensorEntry e;
  e.name = name;
  e.shape = std::move(shape);
  e.offset = static_cast<int64_t>(payload.size());
  entries.push_back(e);
  payload.insert(payload.end(), data, data + entries.back().numel());
}

const TensorEntry* TensorArchive::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

void TensorArchive::save(const std::string& sidecar_path) const {
  if (sidecar_path.size() < 5 ||
      sidecar_path.substr(sidecar_path.size() - 5) != ".json")
    raise(ErrorKind::Io, "checkpoint path must end in .json");
  std::string bin_path = sidecar_path.substr(0, sidecar_path.size() - 5) + ".bin";

  json tensors = json::array();
  for (const auto& e : entries)
    tensors.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", e.offset}});
  json j{{"dtype", "f32le"}, {"tensors", tensors}};

  std::string json_tmp = sidecar_path + ".tmp";
  std::string bin_tmp = bin_path + ".tmp";
  {
    std::ofstream f(json_tmp, std::ios::trunc);
    if (!f) raise(ErrorKind::Io, "cannot write " + json_tmp);
    f << j.dump(2) << "\n";
  }
  {
    std::ofstream f(bin_tmp, std::ios::binary | std::ios::trunc);
    if (!f) raise(ErrorKind::Io, "cannot write " + bin_tmp);
    f.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
  }
  fs::rename(json_tmp, sidecar_path);
  fs::rename(bin_tmp, bin_path);
}

TensorArchive TensorArchive::load(const std::string& sidecar_path) {
  std::ifstream f(sidecar_path);
  if (!f) raise(ErrorKind::Io, "cannot open " + sidecar_path);
  json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    raise(ErrorKind::Checkpoint, std::string("manifest parse: ") + e.what());
  }
  if (j.value("dtype", "") != "f32le")
    raise(ErrorKind::Checkpoint, "unsupported checkpoint dtype");

  TensorArchive a;
  int64_t expected_offset = 0;
  for (auto& t : j.at("tensors")) {
    TensorEntry e;
    e.name = t.at("name").get<std::string>();
    e.shape = t.at("shape").get<std::vector<int64_t>>();
    e.offset = t.at("offset").get<int64_t>();
    if (a.find(e.name))
      raise(ErrorKind::Checkpoint, "duplicate tensor name " + e.name);
    if (e.offset != expected_offset)
      raise(ErrorKind::Checkpoint,
            "offset of " + e.name + " inconsistent with preceding shapes");
    expected_offset += e.numel();
    a.entries.push_back(std::move(e));
  }

  std::string bin_path = sidecar_path.substr(0, sidecar_path.size() - 5) + ".bin";
  std::ifstream b(bin_path, std::ios::binary);
  if (!b) raise(ErrorKind::Io, "cannot open " + bin_path);
  b.seekg(0, std::ios::end);
  int64_t bytes = static_cast<int64_t>(b.tellg());
  b.seekg(0);
  if (bytes != expected_offset * static_cast<int64_t>(sizeof(float)))
    raise(ErrorKind::Checkpoint,
          "payload holds " + std::to_string(bytes / sizeof(float)) +
              " elements, manifest declares " + std::to_string(expected_offset));
  a.payload.resize(static_cast<size_t>(expected_offset));
  b.read(reinterpret_cast<char*>(a.payload.data()), bytes);
  if (!b) raise(ErrorKind::Io, "short read on " + bin_path);
  return a;
}

}  // namespace s4l
