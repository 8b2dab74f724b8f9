#pragma once

// Training-time augmentations on image batches: shift-crop, horizontal flip,
// mixup, cutmix and label smoothing. Every function returns a new batch.

#include <cmath>
#include <random>
#include <vector>

#include "mkd/data.hpp"

namespace mkd {

struct AugmentConfig {
  bool crop_flip = false;
  std::size_t pad = 4;
  double mixup_alpha = 0.0;   // 0 disables
  double cutmix_alpha = 0.0;  // 0 disables
  double label_smoothing = 0.0;

  bool empty() const {
    return !crop_flip && mixup_alpha == 0.0 && cutmix_alpha == 0.0 && label_smoothing == 0.0;
  }
};

namespace detail {

inline void require_image(const Batch& b, const char* who) {
  if (!b.is_image()) throw DimensionError(std::string(who) + ": needs image-shaped inputs (n, H, W)");
}

inline void require_pair(const Batch& a, const Batch& b, const char* who) {
  if (a.x.shape() != b.x.shape() || a.y.shape() != b.y.shape()) {
    throw DimensionError(std::string(who) + ": batches " + shape_str(a.x.shape()) + " and " +
                         shape_str(b.x.shape()) + " differ in shape");
  }
}

inline Batch with_x(const Batch& b, std::vector<double> x) {
  Batch out = b;
  out.x = Tensor(b.x.shape(), std::move(x));
  return out;
}

}  // namespace detail

/// Mirror the selected samples left to right.
inline Batch flip_horizontal(const Batch& b, const std::vector<bool>& flip) {
  detail::require_image(b, "flip_horizontal");
  if (flip.size() != b.size()) throw DimensionError("flip_horizontal: one decision per sample required");
  std::size_t h = b.height, w = b.width;
  std::vector<double> x(b.x.values());
  for (std::size_t s = 0; s < b.size(); ++s) {
    if (!flip[s]) continue;
    for (std::size_t r = 0; r < h; ++r) {
      double* row = &x[s * h * w + r * w];
      std::reverse(row, row + w);
    }
  }
  return detail::with_x(b, std::move(x));
}

/// Translate each sample by (dy, dx) with zero fill; identical to cropping a
/// zero-padded image at offset (pad + dy, pad + dx).
inline Batch shift_crop(const Batch& b, const std::vector<std::pair<int, int>>& offsets) {
  detail::require_image(b, "shift_crop");
  if (offsets.size() != b.size()) throw DimensionError("shift_crop: one offset per sample required");
  auto h = static_cast<long>(b.height), w = static_cast<long>(b.width);
  auto src = b.x.data();
  std::vector<double> x(src.size(), 0.0);
  for (std::size_t s = 0; s < b.size(); ++s) {
    auto [dy, dx] = offsets[s];
    std::size_t base = s * b.height * b.width;
    for (long r = 0; r < h; ++r) {
      long sr = r + dy;
      if (sr < 0 || sr >= h) continue;
      for (long c = 0; c < w; ++c) {
        long sc = c + dx;
        if (sc < 0 || sc >= w) continue;
        x[base + static_cast<std::size_t>(r * w + c)] = src[base + static_cast<std::size_t>(sr * w + sc)];
      }
    }
  }
  return detail::with_x(b, std::move(x));
}

inline Batch random_crop_flip(const Batch& b, std::size_t pad, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> off(-static_cast<int>(pad), static_cast<int>(pad));
  std::bernoulli_distribution coin(0.5);
  std::vector<std::pair<int, int>> offsets(b.size());
  std::vector<bool> flips(b.size());
  for (std::size_t s = 0; s < b.size(); ++s) {
    offsets[s].first = off(rng);
    offsets[s].second = off(rng);
    flips[s] = coin(rng);
  }
  return flip_horizontal(shift_crop(b, offsets), flips);
}

/// Beta(alpha, alpha) from two gamma draws.
inline double sample_beta(double alpha, std::mt19937_64& rng) {
  if (!(alpha > 0.0)) throw ConfigError("Beta sampling needs alpha > 0");
  std::gamma_distribution<double> g(alpha, 1.0);
  double a = g(rng), b = g(rng);
  if (a + b == 0.0) return 0.5;
  return a / (a + b);
}

/// x = lam * x_a + (1 - lam) * x_b, labels likewise.
inline Batch mixup_with_lambda(const Batch& a, const Batch& b, double lam) {
  detail::require_pair(a, b, "mixup");
  if (!(lam >= 0.0 && lam <= 1.0)) throw DomainError("mixup: lambda must lie in [0, 1]");
  Batch out = a;
  auto mix = [lam](const Tensor& p, const Tensor& q) {
    std::vector<double> v(p.values());
    auto qd = q.data();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = lam * v[i] + (1.0 - lam) * qd[i];
    return Tensor(p.shape(), std::move(v));
  };
  out.x = mix(a.x, b.x);
  out.y = mix(a.y, b.y);
  return out;
}

inline Batch mixup(const Batch& a, const Batch& b, double alpha, std::mt19937_64& rng) {
  return mixup_with_lambda(a, b, sample_beta(alpha, rng));
}

/// Half-open pixel rectangle [y0, y1) x [x0, x1).
struct CutBox {
  std::size_t y0 = 0, y1 = 0, x0 = 0, x1 = 0;
  std::size_t area() const { return (y1 - y0) * (x1 - x0); }
};

/// Box with sides floor(H sqrt(1 - lam)) and floor(W sqrt(1 - lam)) centred
/// at (cy, cx), clipped to the image.
inline CutBox cut_box(std::size_t h, std::size_t w, double lam, std::size_t cy, std::size_t cx) {
  double r = std::sqrt(1.0 - lam);
  auto ch = static_cast<long>(std::floor(static_cast<double>(h) * r));
  auto cw = static_cast<long>(std::floor(static_cast<double>(w) * r));
  auto clip = [](long v, std::size_t hi) { return static_cast<std::size_t>(std::clamp(v, 0L, static_cast<long>(hi))); };
  auto y = static_cast<long>(cy), x = static_cast<long>(cx);
  return {clip(y - ch / 2, h), clip(y - ch / 2 + ch, h), clip(x - cw / 2, w), clip(x - cw / 2 + cw, w)};
}

/// Paste `box` from b into a. The label weight on b is the realized area
/// fraction of the box.
inline Batch cutmix_with_box(const Batch& a, const Batch& b, const CutBox& box) {
  detail::require_image(a, "cutmix");
  detail::require_pair(a, b, "cutmix");
  if (b.height != a.height || b.width != a.width) throw DimensionError("cutmix: image sizes differ");
  if (box.y1 > a.height || box.x1 > a.width || box.y0 > box.y1 || box.x0 > box.x1) {
    throw DomainError("cutmix: box outside the image");
  }
  std::size_t h = a.height, w = a.width;
  std::vector<double> x(a.x.values());
  auto bx = b.x.data();
  for (std::size_t s = 0; s < a.size(); ++s)
    for (std::size_t r = box.y0; r < box.y1; ++r)
      for (std::size_t c = box.x0; c < box.x1; ++c) x[s * h * w + r * w + c] = bx[s * h * w + r * w + c];
  double weight_b = static_cast<double>(box.area()) / static_cast<double>(h * w);
  Batch out = mixup_with_lambda(a, b, 1.0 - weight_b);
  out.x = Tensor(a.x.shape(), std::move(x));
  return out;
}

inline Batch cutmix(const Batch& a, const Batch& b, double alpha, std::mt19937_64& rng) {
  detail::require_image(a, "cutmix");
  double lam = sample_beta(alpha, rng);
  std::uniform_int_distribution<std::size_t> py(0, a.height - 1), px(0, a.width - 1);
  std::size_t cy = py(rng);
  std::size_t cx = px(rng);
  return cutmix_with_box(a, b, cut_box(a.height, a.width, lam, cy, cx));
}

/// The batch with its samples permuted: the mixing partner of every sample.
inline Batch shuffled_partner(const Batch& b, std::mt19937_64& rng) {
  std::vector<std::size_t> perm(b.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  std::size_t d = b.x.size(1), c = b.y.size(1);
  std::vector<double> x(b.x.numel()), y(b.y.numel());
  Batch out = b;
  auto xs = b.x.data();
  auto ys = b.y.data();
  for (std::size_t i = 0; i < perm.size(); ++i) {
    std::copy_n(xs.begin() + static_cast<std::ptrdiff_t>(perm[i] * d), d, x.begin() + static_cast<std::ptrdiff_t>(i * d));
    std::copy_n(ys.begin() + static_cast<std::ptrdiff_t>(perm[i] * c), c, y.begin() + static_cast<std::ptrdiff_t>(i * c));
    out.labels[i] = b.labels[perm[i]];
  }
  out.x = Tensor(b.x.shape(), std::move(x));
  out.y = Tensor(b.y.shape(), std::move(y));
  return out;
}

/// crop/flip, then one of mixup/cutmix (fair coin when both are on), then
/// label smoothing. `labels` keeps the raw ids of the primary samples.
inline Batch augment_pipeline(const Batch& batch, const AugmentConfig& cfg, std::mt19937_64& rng) {
  Batch b = batch;
  if (cfg.crop_flip) b = random_crop_flip(b, cfg.pad, rng);
  bool use_mixup = cfg.mixup_alpha > 0.0, use_cutmix = cfg.cutmix_alpha > 0.0;
  if (use_mixup && use_cutmix) {
    bool pick_mixup = std::bernoulli_distribution(0.5)(rng);
    use_mixup = pick_mixup;
    use_cutmix = !pick_mixup;
  }
  if (use_mixup) b = mixup(b, shuffled_partner(b, rng), cfg.mixup_alpha, rng);
  if (use_cutmix) b = cutmix(b, shuffled_partner(b, rng), cfg.cutmix_alpha, rng);
  if (cfg.label_smoothing > 0.0) b.y = label_smooth(b.y, cfg.label_smoothing);
  return b;
}

}  // namespace mkd
