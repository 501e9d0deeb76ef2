#include "s4l/augment.hpp"

#include <algorithm>
#include <cmath>

#include "s4l/errors.hpp"

namespace s4l {

std::vector<float> noise_augment(const std::vector<float>& x, Rng& rng) {
  float alpha = static_cast<float>(rng.uniform(0.9, 1.1));
  std::vector<float> out(x.size());
  for (size_t i = 0; i < x.size(); ++i)
    out[i] = alpha * x[i] + static_cast<float>(rng.normal()) / 25.0f;
  return out;
}

Patch noise_augment(const Patch& p, Rng& rng) {
  Patch out = p;
  out.window = noise_augment(p.window, rng);
  return out;
}

Patch rm_transform(const Patch& p, RmTransformId id) {
  if (id.k < 1 || id.k > kRmTransformCount)
    raise(ErrorKind::Contract, "rm transform id out of range");
  if (p.size < 1 || p.window.size() !=
                        static_cast<size_t>(p.size) * p.size * p.bands)
    raise(ErrorKind::Shape, "rm_transform requires a square patch");
  if (id.k == 1) return p;

  int s = p.size;
  Patch out = p;
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      int sy = y, sx = x;
      switch (id.k) {
        case 2:  // rot 90
          sy = x;
          sx = s - 1 - y;
          break;
        case 3:  // rot 180
          sy = s - 1 - y;
          sx = s - 1 - x;
          break;
        case 4:  // rot 270
          sy = s - 1 - x;
          sx = y;
          break;
        case 5:  // horizontal flip
          sy = y;
          sx = s - 1 - x;
          break;
        case 6:  // vertical flip
          sy = s - 1 - y;
          sx = x;
          break;
      }
      const float* src = &p.window[(static_cast<int64_t>(sy) * s + sx) * p.bands];
      float* dst = &out.window[(static_cast<int64_t>(y) * s + x) * p.bands];
      std::copy(src, src + p.bands, dst);
    }
  return out;
}

std::vector<std::pair<Patch, int>> rm_expand(const std::vector<Patch>& batch) {
  std::vector<std::pair<Patch, int>> out;
  out.reserve(batch.size() * kRmTransformCount);
  for (const Patch& p : batch)
    for (int k = 1; k <= kRmTransformCount; ++k)
      out.emplace_back(rm_transform(p, {k}), k);
  return out;
}

std::vector<std::pair<Patch, int>> rot4_expand(const std::vector<Patch>& batch) {
  std::vector<std::pair<Patch, int>> out;
  out.reserve(batch.size() * 4);
  for (const Patch& p : batch)
    for (int k = 1; k <= 4; ++k) out.emplace_back(rm_transform(p, {k}), k);
  return out;
}

MaskedSpectrum mask_spectrum(const std::vector<float>& x, double ratio,
                             Rng& rng) {
  if (ratio < 0.0 || ratio > 1.0)
    raise(ErrorKind::Config, "mask ratio must be in [0, 1]");
  int64_t b = static_cast<int64_t>(x.size());
  int64_t n_masked = static_cast<int64_t>(std::floor(ratio * b));
  MaskedSpectrum m;
  m.original = x;
  m.masked = x;
  m.mask.assign(x.size(), 0);
  for (int64_t i : rng.sample_without_replacement(b, n_masked)) {
    m.mask[i] = 1;
    m.masked[i] = 0.0f;
  }
  return m;
}

namespace {

// Catmull-Rom cubic kernel (a = -0.5).
inline float cubic_weight(float t) {
  const float a = -0.5f;
  t = std::fabs(t);
  if (t <= 1.0f) return ((a + 2.0f) * t - (a + 3.0f)) * t * t + 1.0f;
  if (t < 2.0f) return (((t - 5.0f) * t + 8.0f) * t - 4.0f) * a;
  return 0.0f;
}

inline int clampi(int v, int lo, int hi) { return std::min(std::max(v, lo), hi); }

}  // namespace

std::vector<float> bicubic_resize(const std::vector<float>& src, int sh, int sw,
                                  int bands, int dh, int dw) {
  std::vector<float> out(static_cast<size_t>(dh) * dw * bands);
  float sy_scale = static_cast<float>(sh) / dh;
  float sx_scale = static_cast<float>(sw) / dw;
  for (int y = 0; y < dh; ++y) {
    float fy = (y + 0.5f) * sy_scale - 0.5f;
    int iy = static_cast<int>(std::floor(fy));
    float ty = fy - iy;
    float wy[4];
    for (int i = 0; i < 4; ++i) wy[i] = cubic_weight(ty - (i - 1));
    for (int x = 0; x < dw; ++x) {
      float fx = (x + 0.5f) * sx_scale - 0.5f;
      int ix = static_cast<int>(std::floor(fx));
      float tx = fx - ix;
      float wx[4];
      for (int i = 0; i < 4; ++i) wx[i] = cubic_weight(tx - (i - 1));
      for (int b = 0; b < bands; ++b) {
        float acc = 0.0f;
        for (int i = 0; i < 4; ++i) {
          int yy = clampi(iy - 1 + i, 0, sh - 1);
          float row = 0.0f;
          for (int j = 0; j < 4; ++j) {
            int xx = clampi(ix - 1 + j, 0, sw - 1);
            row += wx[j] * src[(static_cast<int64_t>(yy) * sw + xx) * bands + b];
          }
          acc += wy[i] * row;
        }
        out[(static_cast<int64_t>(y) * dw + x) * bands + b] = acc;
      }
    }
  }
  return out;
}

Patch sslcl_augment(const Patch& p, Rng& rng) {
  if (p.size < 1 || p.window.size() !=
                        static_cast<size_t>(p.size) * p.size * p.bands)
    raise(ErrorKind::Shape, "sslcl_augment requires a square patch");

  if (!rng.bernoulli(0.5)) {
    // noise branch
    return noise_augment(p, rng);
  }

  // crop branch: area fraction U(0.7, 1.0), aspect U(3/4, 4/3)
  int s = p.size;
  double area = rng.uniform(0.7, 1.0) * s * s;
  double aspect = rng.uniform(3.0 / 4.0, 4.0 / 3.0);
  int cw = clampi(static_cast<int>(std::lround(std::sqrt(area * aspect))), 1, s);
  int ch = clampi(static_cast<int>(std::lround(std::sqrt(area / aspect))), 1, s);
  int oy = static_cast<int>(rng.uniform_int(s - ch + 1));
  int ox = static_cast<int>(rng.uniform_int(s - cw + 1));

  std::vector<float> crop(static_cast<size_t>(ch) * cw * p.bands);
  for (int y = 0; y < ch; ++y)
    for (int x = 0; x < cw; ++x) {
      const float* src = &p.window[(static_cast<int64_t>(oy + y) * s + ox + x) * p.bands];
      std::copy(src, src + p.bands,
                &crop[(static_cast<int64_t>(y) * cw + x) * p.bands]);
    }

  Patch out = p;
  out.window = bicubic_resize(crop, ch, cw, p.bands, s, s);

  // extra transforms ride only on the crop branch, each at probability 0.5
  if (rng.bernoulli(0.5)) out = rm_transform(out, {5});  // horizontal flip
  if (rng.bernoulli(0.5)) out = rm_transform(out, {6});  // vertical flip
  if (rng.bernoulli(0.5)) {
    int rot = static_cast<int>(rng.uniform_int(4));  // multiples of 90 deg
    if (rot > 0) out = rm_transform(out, {1 + rot});
  }
  return out;
}

Patch materialize_entry(const HsiCube& cube, const AugmentedEntry& entry,
                        int label, int patch_size) {
  Patch p = extract_patch(cube, entry.src.y, entry.src.x, patch_size);
  p.label = label;
  if (!entry.original) {
    Rng rng(entry.aug_seed);
    p = noise_augment(p, rng);
  }
  return p;
}

}  // namespace s4l
