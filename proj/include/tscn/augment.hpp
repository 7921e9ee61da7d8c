#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "error.hpp"
#include "rng.hpp"

namespace tscn {

/// 8-bit RGB image, channel-planar (R plane, G plane, B plane, rows row-major).
struct ImageU8 {
  static constexpr std::size_t channels = 3;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;

  ImageU8() = default;
  ImageU8(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), pixels(3 * h * w, fill) {}
  ImageU8(std::size_t h, std::size_t w, std::vector<std::uint8_t> px) : height(h), width(w), pixels(std::move(px)) {
    if (pixels.size() != 3 * h * w)
      throw ShapeError("ImageU8: buffer has " + std::to_string(pixels.size()) + " bytes, expected " +
                       std::to_string(3 * h * w));
  }

  std::uint8_t& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
  std::uint8_t at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }

  friend bool operator==(const ImageU8&, const ImageU8&) = default;
};

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct JitterStrengths {
  double brightness = 0.0;
  double contrast = 0.0;
  double saturation = 0.0;
  double hue = 0.0;  // fraction of a full hue turn, <= 0.5
};

struct AugmentPolicy {
  Range crop_scale{0.08, 1.0};
  Range crop_aspect{3.0 / 4.0, 4.0 / 3.0};
  double flip_p = 0.5;
  JitterStrengths jitter{0.4, 0.4, 0.4, 0.1};
  double jitter_p = 0.8;
  double grayscale_p = 0.2;

  /// No augmentation at all: full-frame crop, every probability zero.
  static AugmentPolicy none() { return {{1.0, 1.0}, {1.0, 1.0}, 0.0, {}, 0.0, 0.0}; }

  void validate() const {
    auto prob = [](double p, const char* name) {
      if (!(p >= 0.0 && p <= 1.0))
        throw ValidationError(std::string("AugmentPolicy: ") + name + " must be in [0,1], got " + std::to_string(p));
    };
    prob(flip_p, "flip_p");
    prob(jitter_p, "jitter_p");
    prob(grayscale_p, "grayscale_p");
    if (!(crop_scale.lo > 0.0 && crop_scale.lo <= crop_scale.hi && crop_scale.hi <= 1.0))
      throw ValidationError("AugmentPolicy: crop scale range must satisfy 0 < lo <= hi <= 1");
    if (!(crop_aspect.lo > 0.0 && crop_aspect.lo <= crop_aspect.hi))
      throw ValidationError("AugmentPolicy: crop aspect range must satisfy 0 < lo <= hi");
    if (jitter.brightness < 0 || jitter.contrast < 0 || jitter.saturation < 0 || jitter.hue < 0 || jitter.hue > 0.5)
      throw ValidationError("AugmentPolicy: jitter strengths must be >= 0 (hue <= 0.5)");
  }
};

namespace detail {

inline std::uint8_t to_u8(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
}

inline double luma(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

inline std::array<double, 3> rgb_to_hsv(double r, double g, double b) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double delta = mx - mn;
  double h = 0.0;
  if (delta > 0.0) {
    if (mx == r) h = std::fmod((g - b) / delta, 6.0);
    else if (mx == g) h = (b - r) / delta + 2.0;
    else h = (r - g) / delta + 4.0;
    h /= 6.0;
    if (h < 0.0) h += 1.0;
  }
  const double s = mx > 0.0 ? delta / mx : 0.0;
  return {h, s, mx};
}

inline std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  const double hh = (h - std::floor(h)) * 6.0;
  const int sector = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1.0 - s), q = v * (1.0 - s * f), t = v * (1.0 - s * (1.0 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

} // namespace detail

/// Bilinear resampling of the sub-rectangle (top, left, h, w) to out_h x out_w.
/// Pixel-center aligned; samples outside the rectangle clamp to its border.
inline ImageU8 resize_bilinear(const ImageU8& img, std::size_t top, std::size_t left, std::size_t h, std::size_t w,
                               std::size_t out_h, std::size_t out_w) {
  ImageU8 out(out_h, out_w);
  auto axis = [](std::size_t o, std::size_t origin, std::size_t len, std::size_t out_len) {
    double s = static_cast<double>(origin) + (static_cast<double>(o) + 0.5) * static_cast<double>(len) /
                                                 static_cast<double>(out_len) - 0.5;
    s = std::clamp(s, static_cast<double>(origin), static_cast<double>(origin + len - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(s));
    const std::size_t i1 = std::min(i0 + 1, origin + len - 1);
    return std::tuple{i0, i1, s - static_cast<double>(i0)};
  };
  for (std::size_t y = 0; y < out_h; ++y) {
    const auto [y0, y1, fy] = axis(y, top, h, out_h);
    for (std::size_t x = 0; x < out_w; ++x) {
      const auto [x0, x1, fx] = axis(x, left, w, out_w);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top_v = (1.0 - fx) * img.at(c, y0, x0) + fx * img.at(c, y0, x1);
        const double bot_v = (1.0 - fx) * img.at(c, y1, x0) + fx * img.at(c, y1, x1);
        out.at(c, y, x) = detail::to_u8((1.0 - fy) * top_v + fy * bot_v);
      }
    }
  }
  return out;
}

/// Crop with area fraction ~ U(scale) and log-uniform aspect ratio w/h, then
/// rescale to the original size. Crop sides are clamped to [1, side].
inline ImageU8 random_resized_crop(const ImageU8& img, const AugmentPolicy& policy, RandomStream& rng) {
  const double H = static_cast<double>(img.height), W = static_cast<double>(img.width);
  const double area = rng.uniform(policy.crop_scale.lo, policy.crop_scale.hi) * H * W;
  const double aspect =
      std::exp(rng.uniform(std::log(policy.crop_aspect.lo), std::log(policy.crop_aspect.hi)));
  const auto w = static_cast<std::size_t>(std::clamp(std::round(std::sqrt(area * aspect)), 1.0, W));
  const auto h = static_cast<std::size_t>(std::clamp(std::round(std::sqrt(area / aspect)), 1.0, H));
  const std::size_t top = rng.below(img.height - h + 1);
  const std::size_t left = rng.below(img.width - w + 1);
  return resize_bilinear(img, top, left, h, w, img.height, img.width);
}

inline ImageU8 hflip(const ImageU8& img) {
  ImageU8 out = img;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
  return out;
}

inline ImageU8 adjust_brightness(const ImageU8& img, double factor) {
  ImageU8 out = img;
  for (auto& p : out.pixels) p = detail::to_u8(p * factor);
  return out;
}

/// Blends every channel with the mean luma of the whole image.
inline ImageU8 adjust_contrast(const ImageU8& img, double factor) {
  const std::size_t hw = img.height * img.width;
  double mean = 0.0;
  for (std::size_t i = 0; i < hw; ++i)
    mean += detail::luma(img.pixels[i], img.pixels[hw + i], img.pixels[2 * hw + i]);
  mean /= static_cast<double>(hw);
  ImageU8 out = img;
  for (auto& p : out.pixels) p = detail::to_u8(factor * p + (1.0 - factor) * mean);
  return out;
}

/// Blends every pixel with its own luma.
inline ImageU8 adjust_saturation(const ImageU8& img, double factor) {
  const std::size_t hw = img.height * img.width;
  ImageU8 out = img;
  for (std::size_t i = 0; i < hw; ++i) {
    const double g = detail::luma(img.pixels[i], img.pixels[hw + i], img.pixels[2 * hw + i]);
    for (std::size_t c = 0; c < 3; ++c) out.pixels[c * hw + i] = detail::to_u8(factor * img.pixels[c * hw + i] + (1.0 - factor) * g);
  }
  return out;
}

/// Rotates hue by `shift` turns in HSV space.
inline ImageU8 adjust_hue(const ImageU8& img, double shift) {
  const std::size_t hw = img.height * img.width;
  ImageU8 out = img;
  for (std::size_t i = 0; i < hw; ++i) {
    auto [h, s, v] = detail::rgb_to_hsv(img.pixels[i], img.pixels[hw + i], img.pixels[2 * hw + i]);
    const auto rgb = detail::hsv_to_rgb(h + shift, s, v);
    for (std::size_t c = 0; c < 3; ++c) out.pixels[c * hw + i] = detail::to_u8(rgb[c]);
  }
  return out;
}

/// ITU-R 601 luma replicated to all three channels.
inline ImageU8 to_grayscale(const ImageU8& img) {
  const std::size_t hw = img.height * img.width;
  ImageU8 out = img;
  for (std::size_t i = 0; i < hw; ++i) {
    const auto g = detail::to_u8(detail::luma(img.pixels[i], img.pixels[hw + i], img.pixels[2 * hw + i]));
    out.pixels[i] = out.pixels[hw + i] = out.pixels[2 * hw + i] = g;
  }
  return out;
}

/// Brightness, contrast, saturation, then hue. Factors are drawn from
/// [max(0, 1 - s), 1 + s], the hue shift from [-s_hue, s_hue]. Always consumes
/// four draws; a neutral factor leaves the image untouched.
inline ImageU8 color_jitter(const ImageU8& img, const JitterStrengths& s, RandomStream& rng) {
  auto factor = [&](double strength) { return rng.uniform(std::max(0.0, 1.0 - strength), 1.0 + strength); };
  const double fb = factor(s.brightness);
  const double fc = factor(s.contrast);
  const double fs = factor(s.saturation);
  const double fh = rng.uniform(-s.hue, s.hue);
  ImageU8 out = img;
  if (fb != 1.0) out = adjust_brightness(out, fb);
  if (fc != 1.0) out = adjust_contrast(out, fc);
  if (fs != 1.0) out = adjust_saturation(out, fs);
  if (fh != 0.0) out = adjust_hue(out, fh);
  return out;
}

/// One draw of crop -> flip -> jitter -> grayscale.
inline ImageU8 augment_view(const ImageU8& img, const AugmentPolicy& policy, RandomStream& rng) {
  ImageU8 out = random_resized_crop(img, policy, rng);
  if (rng.bernoulli(policy.flip_p)) out = hflip(out);
  if (rng.bernoulli(policy.jitter_p)) out = color_jitter(out, policy.jitter, rng);
  if (rng.bernoulli(policy.grayscale_p)) out = to_grayscale(out);
  return out;
}

/// Pixels scaled to [0, 1], same channel-planar layout.
template <typename T>
void to_unit_float(const ImageU8& img, std::span<T> out) {
  for (std::size_t i = 0; i < img.pixels.size(); ++i) out[i] = static_cast<T>(img.pixels[i]) / T{255};
}

template <typename T>
std::vector<T> to_unit_float(const ImageU8& img) {
  std::vector<T> v(img.pixels.size());
  to_unit_float<T>(img, std::span<T>(v));
  return v;
}

template <typename T>
struct ViewPair {
  std::vector<T> a;
  std::vector<T> b;
};

/// Two independent views; view A uses rng.child(0), view B rng.child(1).
template <typename T>
ViewPair<T> augment_pair(const ImageU8& img, const AugmentPolicy& policy, const RandomStream& rng) {
  RandomStream ra = rng.child(0), rb = rng.child(1);
  return {to_unit_float<T>(augment_view(img, policy, ra)), to_unit_float<T>(augment_view(img, policy, rb))};
}

} // namespace tscn
