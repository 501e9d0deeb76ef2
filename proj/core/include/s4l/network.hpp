#pragma once

// The spectral-spatial model family plus the auxiliary heads used by the
// pretraining stages. Three assemblies exist:
//   Stage1Model - spatial encoder on 3-channel inputs + rotation-mirror head
//   Stage2Model - spectral mapper + spectral encoder + FSL linear + decoder
//   FusedModel  - spatial (with band mapping) + spectral encoders fused into
//                 the target-domain FSL and consistency heads
// Parameter names are slash-delimited; stage-3 transfer copies exactly the
// spatial backbone+head and the spectral encoder, never the band mapping
// layer or the auxiliary heads.

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "s4l/nn.hpp"
#include "s4l/patch_sampler.hpp"
#include "s4l/tensor_archive.hpp"

namespace s4l {

using ShapeTrace = std::vector<std::pair<std::string, std::vector<int64_t>>>;

inline int64_t spectral_reduced_len(int64_t bands) {
  return (bands - 7) / 2 + 1;
}

// --- batch assembly ---------------------------------------------------------

template <class T>
Arr<T> patches_to_spatial_input(const std::vector<Patch>& batch) {
  if (batch.empty()) raise(ErrorKind::Contract, "empty patch batch");
  int s = batch[0].size, b = batch[0].bands;
  Arr<T> out({static_cast<int64_t>(batch.size()), b, s, s});
  for (size_t n = 0; n < batch.size(); ++n) {
    const Patch& p = batch[n];
    if (p.size != s || p.bands != b)
      raise(ErrorKind::Shape, "mixed patch shapes in batch");
    for (int c = 0; c < b; ++c)
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x)
          out[((static_cast<int64_t>(n) * b + c) * s + y) * s + x] =
              static_cast<T>(p.at(y, x, c));
  }
  return out;
}

template <class T>
Arr<T> patches_to_center_spectra(const std::vector<Patch>& batch) {
  if (batch.empty()) raise(ErrorKind::Contract, "empty patch batch");
  int b = batch[0].bands, mid = batch[0].size / 2;
  Arr<T> out({static_cast<int64_t>(batch.size()), 1, 1, b});
  for (size_t n = 0; n < batch.size(); ++n)
    for (int k = 0; k < b; ++k)
      out[static_cast<int64_t>(n) * b + k] =
          static_cast<T>(batch[n].at(mid, mid, k));
  return out;
}

template <class T>
Arr<T> spectra_to_input(const std::vector<std::vector<float>>& spectra) {
  if (spectra.empty()) raise(ErrorKind::Contract, "empty spectrum batch");
  int64_t b = static_cast<int64_t>(spectra[0].size());
  Arr<T> out({static_cast<int64_t>(spectra.size()), 1, 1, b});
  for (size_t n = 0; n < spectra.size(); ++n) {
    if (static_cast<int64_t>(spectra[n].size()) != b)
      raise(ErrorKind::Shape, "mixed spectrum lengths in batch");
    for (int64_t k = 0; k < b; ++k)
      out[static_cast<int64_t>(n) * b + k] = static_cast<T>(spectra[n][k]);
  }
  return out;
}

// --- encoders ---------------------------------------------------------------

// VGG-style spatial path: optional 1x1 band-mapping to 3 channels, seven 3x3
// convolutions (64,64,[pool],128,128,[pool],256,256,256,[pool]), then the
// 512-channel head collapsing 33x33 inputs to a 100-d feature.
template <class T>
struct SpatialEncoder {
  int in_channels = 3;
  bool has_mapping = false;
  nn::Conv2d<T> map_conv;
  nn::BatchNorm<T> map_bn;
  std::array<nn::Conv2d<T>, 7> conv;
  nn::Conv2d<T> head_conv;
  nn::BatchNorm<T> head_bn;
  nn::Linear<T> head_fc;

  SpatialEncoder() = default;
  SpatialEncoder(nn::ParamRegistry<T>& reg, int input_bands, bool with_mapping,
                 Rng& rng) {
    in_channels = input_bands;
    has_mapping = with_mapping;
    if (with_mapping) {
      map_conv = nn::Conv2d<T>(reg, "spatial/mapping/conv", input_bands, 3, 1, 1,
                               {1, 1, 0, 0}, rng);
      map_bn = nn::BatchNorm<T>(reg, "spatial/mapping/bn", 3);
    } else if (input_bands != 3) {
      raise(ErrorKind::Config, "spatial encoder without mapping needs 3 channels");
    }
    const int plan_in[7] = {3, 64, 64, 128, 128, 256, 256};
    const int plan_out[7] = {64, 64, 128, 128, 256, 256, 256};
    for (int i = 0; i < 7; ++i)
      conv[i] = nn::Conv2d<T>(reg, "spatial/backbone/conv" + std::to_string(i + 1),
                              plan_in[i], plan_out[i], 3, 3, {1, 1, 1, 1}, rng);
    head_conv =
        nn::Conv2d<T>(reg, "spatial/head/conv", 256, 512, 3, 3, {1, 1, 0, 0}, rng);
    head_bn = nn::BatchNorm<T>(reg, "spatial/head/bn", 512);
    head_fc = nn::Linear<T>(reg, "spatial/head/fc", 512, 100, rng);
  }

  // [n][C][33][33] -> [n][100]
  ag::Var<T> forward(ag::Var<T> x, bool training, ShapeTrace* trace = nullptr) const {
    if (x->value.dim(1) != in_channels)
      raise(ErrorKind::Shape,
            "spatial input has " + std::to_string(x->value.dim(1)) +
                " channels, encoder configured for " + std::to_string(in_channels));
    if (has_mapping) {
      x = map_bn.forward(map_conv.forward(x), training);
      if (trace) trace->emplace_back("mapping", x->value.shape);
    }
    for (int i = 0; i < 7; ++i) {
      x = ag::relu(conv[i].forward(x));
      if (i == 1 || i == 3 || i == 6) x = ag::maxpool2x2(x);
    }
    if (trace) trace->emplace_back("backbone", x->value.shape);
    x = head_bn.forward(head_conv.forward(x), training);
    if (trace) trace->emplace_back("head_conv", x->value.shape);
    x = ag::maxpool2x2(x);
    if (trace) trace->emplace_back("head_pool", x->value.shape);
    x = ag::reshape(x, {x->value.dim(0), x->value.dim(1)});
    x = head_fc.forward(x);
    if (trace) trace->emplace_back("embedding", x->value.shape);
    return x;
  }
};

// 1-d convolutional spectral path with one residual block. The final
// convolution's kernel spans the whole reduced length, collapsing it to 1.
template <class T>
struct SpectralEncoder {
  int64_t bands = 0;
  nn::Conv2d<T> stem_conv;
  nn::BatchNorm<T> stem_bn;
  nn::Conv2d<T> res_conv1, res_conv2;
  nn::BatchNorm<T> res_bn1, res_bn2;
  nn::Conv2d<T> collapse_conv;
  nn::BatchNorm<T> collapse_bn;
  nn::Linear<T> fc;

  SpectralEncoder() = default;
  SpectralEncoder(nn::ParamRegistry<T>& reg, int64_t n_bands, Rng& rng)
      : bands(n_bands) {
    if (n_bands < 9)
      raise(ErrorKind::Config, "spectral encoder needs at least 9 bands");
    int64_t reduced = spectral_reduced_len(n_bands);
    stem_conv = nn::Conv2d<T>(reg, "spectral/stem/conv", 1, 24, 1, 7,
                              {1, 2, 0, 0}, rng);
    stem_bn = nn::BatchNorm<T>(reg, "spectral/stem/bn", 24);
    res_conv1 = nn::Conv2d<T>(reg, "spectral/res/conv1", 24, 24, 1, 7,
                              {1, 1, 0, 3}, rng);
    res_bn1 = nn::BatchNorm<T>(reg, "spectral/res/bn1", 24);
    res_conv2 = nn::Conv2d<T>(reg, "spectral/res/conv2", 24, 24, 1, 7,
                              {1, 1, 0, 3}, rng);
    res_bn2 = nn::BatchNorm<T>(reg, "spectral/res/bn2", 24);
    collapse_conv = nn::Conv2d<T>(reg, "spectral/collapse/conv", 24, 128, 1,
                                  reduced, {1, 1, 0, 0}, rng);
    collapse_bn = nn::BatchNorm<T>(reg, "spectral/collapse/bn", 128);
    fc = nn::Linear<T>(reg, "spectral/fc", 128, 100, rng);
  }

  // [n][1][1][B] -> [n][100]
  ag::Var<T> forward(ag::Var<T> x, bool training, ShapeTrace* trace = nullptr) const {
    if (x->value.dim(3) != bands)
      raise(ErrorKind::Shape,
            "spectrum length " + std::to_string(x->value.dim(3)) +
                ", encoder configured for " + std::to_string(bands));
    x = ag::relu(stem_bn.forward(stem_conv.forward(x), training));
    if (trace) trace->emplace_back("stem", x->value.shape);
    auto skip = x;
    auto h = ag::relu(res_bn1.forward(res_conv1.forward(x), training));
    h = res_bn2.forward(res_conv2.forward(h), training);
    x = ag::relu(ag::add(h, skip));
    if (trace) trace->emplace_back("residual", x->value.shape);
    x = ag::relu(collapse_bn.forward(collapse_conv.forward(x), training));
    if (trace) trace->emplace_back("collapse", x->value.shape);
    x = ag::reshape(x, {x->value.dim(0), x->value.dim(1)});
    x = fc.forward(x);
    if (trace) trace->emplace_back("embedding", x->value.shape);
    return x;
  }
};

// Aligns foreign spectral dimensions to the target band count: a fixed
// piecewise-linear resample followed by a learnable k=1 convolution on the
// single channel.
inline std::vector<float> resample_linear(const std::vector<float>& x,
                                          int64_t out_len) {
  int64_t n = static_cast<int64_t>(x.size());
  if (n < 2) raise(ErrorKind::Contract, "resample needs length >= 2");
  std::vector<float> out(static_cast<size_t>(out_len));
  if (out_len == 1) {
    out[0] = x[0];
    return out;
  }
  double scale = static_cast<double>(n - 1) / static_cast<double>(out_len - 1);
  for (int64_t j = 0; j < out_len; ++j) {
    double pos = j * scale;
    int64_t i0 = static_cast<int64_t>(pos);
    if (i0 >= n - 1) i0 = n - 2;
    double t = pos - i0;
    out[j] = static_cast<float>((1.0 - t) * x[i0] + t * x[i0 + 1]);
  }
  return out;
}

template <class T>
struct SpectralMapper {
  int64_t in_len = 0, out_len = 0;
  nn::Conv2d<T> conv;  // 1 -> 1, k = 1

  SpectralMapper() = default;
  SpectralMapper(nn::ParamRegistry<T>& reg, int64_t b_in, int64_t b_out, Rng& rng)
      : in_len(b_in), out_len(b_out) {
    conv = nn::Conv2d<T>(reg, "mapper/conv", 1, 1, 1, 1, {1, 1, 0, 0}, rng);
  }

  Arr<T> resample_batch(const std::vector<std::vector<float>>& spectra) const {
    Arr<T> out({static_cast<int64_t>(spectra.size()), 1, 1, out_len});
    for (size_t n = 0; n < spectra.size(); ++n) {
      if (static_cast<int64_t>(spectra[n].size()) != in_len)
        raise(ErrorKind::Shape, "mapper input length mismatch");
      auto r = resample_linear(spectra[n], out_len);
      for (int64_t k = 0; k < out_len; ++k)
        out[static_cast<int64_t>(n) * out_len + k] = static_cast<T>(r[k]);
    }
    return out;
  }

  ag::Var<T> forward(const std::vector<std::vector<float>>& spectra) const {
    return conv.forward(ag::constant(resample_batch(spectra)));
  }
};

// --- stage assemblies --------------------------------------------------------

template <class T>
struct Stage1Model {
  nn::ParamRegistry<T> reg;
  SpatialEncoder<T> spatial;
  nn::Linear<T> rm_head;
  int rm_ways = 6;

  Stage1Model(int rm_classes, uint64_t init_seed) : rm_ways(rm_classes) {
    Rng rng(derive_seed(init_seed, 0x5741));
    spatial = SpatialEncoder<T>(reg, 3, false, rng);
    rm_head = nn::Linear<T>(reg, "heads/rm", 100, rm_classes, rng);
  }

  ag::Var<T> embed(const std::vector<Patch>& batch, bool training) const {
    return spatial.forward(ag::constant(patches_to_spatial_input<T>(batch)),
                           training);
  }

  ag::Var<T> rm_logits(const std::vector<Patch>& batch, bool training) const {
    return rm_head.forward(embed(batch, training));
  }
};

template <class T>
struct Stage2Model {
  nn::ParamRegistry<T> reg;
  int64_t b_source = 0, b_target = 0;
  SpectralMapper<T> mapper;
  SpectralEncoder<T> spectral;
  nn::Linear<T> fsl_linear;
  nn::Linear<T> decoder_fc1, decoder_fc2;

  Stage2Model(int64_t source_bands, int64_t target_bands, uint64_t init_seed)
      : b_source(source_bands), b_target(target_bands) {
    Rng rng(derive_seed(init_seed, 0x5742));
    mapper = SpectralMapper<T>(reg, source_bands, target_bands, rng);
    spectral = SpectralEncoder<T>(reg, target_bands, rng);
    fsl_linear = nn::Linear<T>(reg, "heads/fsl_linear", 100, 64, rng);
    decoder_fc1 = nn::Linear<T>(reg, "heads/decoder/fc1", 100, 256, rng);
    decoder_fc2 = nn::Linear<T>(reg, "heads/decoder/fc2", 256, source_bands, rng);
  }

  // spectra of length b_source -> 64-d metric features
  ag::Var<T> embed(const std::vector<std::vector<float>>& spectra,
                   bool training) const {
    auto x = spectral.forward(mapper.forward(spectra), training);
    return fsl_linear.forward(x);
  }

  // masked spectra of length b_source -> reconstructions of length b_source
  ag::Var<T> reconstruct(const std::vector<std::vector<float>>& masked,
                         bool training) const {
    auto z = spectral.forward(mapper.forward(masked), training);
    return decoder_fc2.forward(ag::relu(decoder_fc1.forward(z)));
  }
};

// Target-domain spectral-spatial network. Both heads read the same 200-d
// fusion of the two encoder outputs.
template <class T>
struct FusedModel {
  nn::ParamRegistry<T> reg;
  int64_t bands = 0;
  int n_classes = 0;
  double p_fsl = 0.5;
  double p_sslcl = 0.15;
  SpatialEncoder<T> spatial;
  SpectralEncoder<T> spectral;
  nn::Linear<T> fsl_fc1, fsl_fc2;
  nn::Linear<T> sslcl_fc1, sslcl_fc2;
  nn::BatchNorm<T> sslcl_bn;

  FusedModel(int64_t n_bands, int classes, double sslcl_dropout,
             uint64_t init_seed)
      : bands(n_bands), n_classes(classes), p_sslcl(sslcl_dropout) {
    Rng rng(derive_seed(init_seed, 0x5743));
    spatial = SpatialEncoder<T>(reg, static_cast<int>(n_bands), true, rng);
    spectral = SpectralEncoder<T>(reg, n_bands, rng);
    fsl_fc1 = nn::Linear<T>(reg, "fusion/fsl/fc1", 200, 64, rng);
    fsl_fc2 = nn::Linear<T>(reg, "fusion/fsl/fc2", 64, classes, rng);
    sslcl_fc1 = nn::Linear<T>(reg, "fusion/sslcl/fc1", 200, 64, rng);
    sslcl_fc2 = nn::Linear<T>(reg, "fusion/sslcl/fc2", 64, classes, rng);
    sslcl_bn = nn::BatchNorm<T>(reg, "fusion/sslcl/bn", classes);
  }

  // [n][200] fusion of spatial and spectral features
  ag::Var<T> trunk(const std::vector<Patch>& batch, bool training,
                   ShapeTrace* trace = nullptr) const {
    auto spa = spatial.forward(ag::constant(patches_to_spatial_input<T>(batch)),
                               training, trace);
    auto spe = spectral.forward(
        ag::constant(patches_to_center_spectra<T>(batch)), training, trace);
    auto fused = ag::concat_cols(spa, spe);
    if (trace) trace->emplace_back("fusion", fused->value.shape);
    return fused;
  }

  // FSL embedding head: linear, relu, dropout, linear -> [n][n_classes]
  ag::Var<T> fsl_embedding(const ag::Var<T>& fused, bool training,
                           Rng& rng) const {
    auto h = ag::relu(fsl_fc1.forward(fused));
    h = ag::dropout(h, p_fsl, training, rng);
    return fsl_fc2.forward(h);
  }

  // Consistency head: dropout, linear, relu, linear, batch norm, softmax.
  ag::Var<T> sslcl_probs(const ag::Var<T>& fused, bool training, Rng& rng) const {
    auto h = ag::dropout(fused, p_sslcl, training, rng);
    h = ag::relu(sslcl_fc1.forward(h));
    h = sslcl_fc2.forward(h);
    int64_t n = h->value.dim(0);
    h = ag::reshape(h, {n, static_cast<int64_t>(n_classes), 1, 1});
    h = sslcl_bn.forward(h, training);
    h = ag::reshape(h, {n, static_cast<int64_t>(n_classes)});
    return ag::row_softmax(h);
  }

  std::pair<ag::Var<T>, ag::Var<T>> forward_fused(const std::vector<Patch>& batch,
                                                  bool training, Rng& rng) const {
    auto fused = trunk(batch, training);
    return {fsl_embedding(fused, training, rng), sslcl_probs(fused, training, rng)};
  }
};

// --- checkpointing -----------------------------------------------------------

template <class T>
TensorArchive archive_from_registry(const nn::ParamRegistry<T>& reg) {
  TensorArchive a;
  for (const auto& [name, var] : reg.params) {
    auto f32 = var->value.template cast<float>();
    a.add(name, var->value.shape, f32.data());
  }
  for (const auto& [name, buf] : reg.buffers) {
    auto f32 = buf->template cast<float>();
    a.add(name, buf->shape, f32.data());
  }
  return a;
}

template <class T>
void save_checkpoint(const nn::ParamRegistry<T>& reg, const std::string& path) {
  archive_from_registry(reg).save(path);
}

struct TransferReport {
  std::vector<std::string> loaded;
  std::vector<std::string> model_unmatched;    // wanted but absent in archive
  std::vector<std::string> archive_unmatched;  // present but not consumed
};

inline bool name_matches(const std::string& name,
                         const std::vector<std::string>& prefixes) {
  if (prefixes.empty()) return true;
  for (const auto& p : prefixes)
    if (name.rfind(p, 0) == 0) return true;
  return false;
}

// Copies archive tensors into registry entries whose names match any of the
// given prefixes (all names when empty). Under strict mode a matching model
// tensor missing from the archive is a transfer error.
template <class T>
TransferReport load_checkpoint(nn::ParamRegistry<T>& reg,
                               const TensorArchive& archive,
                               const std::vector<std::string>& prefixes = {},
                               bool strict = true) {
  TransferReport report;
  auto consume = [&](const std::string& name, Arr<T>& dst) {
    const TensorEntry* e = archive.find(name);
    if (!e) {
      report.model_unmatched.push_back(name);
      if (strict)
        raise(ErrorKind::Transfer, "archive is missing tensor " + name);
      return;
    }
    if (e->shape != dst.shape)
      raise(ErrorKind::Checkpoint, "shape mismatch for " + name);
    const float* src = archive.tensor_data(*e);
    for (int64_t i = 0; i < dst.numel(); ++i) dst[i] = static_cast<T>(src[i]);
    report.loaded.push_back(name);
  };
  for (auto& [name, var] : reg.params)
    if (name_matches(name, prefixes)) consume(name, var->value);
  for (auto& [name, buf] : reg.buffers)
    if (name_matches(name, prefixes)) consume(name, *buf);
  for (const auto& e : archive.entries) {
    bool used = false;
    for (const auto& n : report.loaded) used = used || n == e.name;
    if (!used) report.archive_unmatched.push_back(e.name);
  }
  return report;
}

}  // namespace s4l
