#pragma once

// Pixel-level transforms: the color, quality, filter and hue families. Every
// transform is a pure function of (image, spec); randomness inside a spec is
// carried by its seed.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "json.hpp"

#include "dataeff/error.hpp"
#include "dataeff/image.hpp"
#include "dataeff/random.hpp"

namespace dataeff {

enum class FilterKind { detail, edge_enhance, smooth, median, mode };

struct Brightness {
  double factor = 1.0;
  friend bool operator==(const Brightness&, const Brightness&) = default;
};
struct ColorJitter {
  std::array<double, 3> gains{1.0, 1.0, 1.0};
  friend bool operator==(const ColorJitter&, const ColorJitter&) = default;
};
struct Saturation {
  double factor = 1.0;
  friend bool operator==(const Saturation&, const Saturation&) = default;
};
struct Sharpen {
  double amount = 0.0;
  friend bool operator==(const Sharpen&, const Sharpen&) = default;
};
struct Blur {
  double sigma = 0.0;
  friend bool operator==(const Blur&, const Blur&) = default;
};
struct Noise {
  double sigma = 0.0;
  std::uint64_t seed = 0;
  friend bool operator==(const Noise&, const Noise&) = default;
};
struct ShufflePixels {
  int tile = 4;
  std::uint64_t seed = 0;
  friend bool operator==(const ShufflePixels&, const ShufflePixels&) = default;
};
struct Pixelization {
  int factor = 1;
  friend bool operator==(const Pixelization&, const Pixelization&) = default;
};
struct Filter {
  FilterKind kind = FilterKind::smooth;
  friend bool operator==(const Filter&, const Filter&) = default;
};
struct Hue {
  double delta_degrees = 0.0;
  friend bool operator==(const Hue&, const Hue&) = default;
};

using PixelTransformSpec = std::variant<Brightness, ColorJitter, Saturation, Sharpen, Blur, Noise,
                                        ShufflePixels, Pixelization, Filter, Hue>;

inline const char* filter_name(FilterKind k) {
  switch (k) {
    case FilterKind::detail: return "detail";
    case FilterKind::edge_enhance: return "edge_enhance";
    case FilterKind::smooth: return "smooth";
    case FilterKind::median: return "median";
    case FilterKind::mode: return "mode";
  }
  return "?";
}

inline FilterKind filter_from_name(const std::string& s) {
  for (auto k : {FilterKind::detail, FilterKind::edge_enhance, FilterKind::smooth,
                 FilterKind::median, FilterKind::mode})
    if (s == filter_name(k)) return k;
  throw ValidationError("unknown filter kind '" + s + "'");
}

inline const char* spec_kind(const PixelTransformSpec& spec) {
  static constexpr const char* names[] = {"brightness", "color_jitter", "saturation",
                                          "sharpen",    "blur",         "noise",
                                          "shuffle_pixels", "pixelization", "filter", "hue"};
  return names[spec.index()];
}

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(what);
}

inline bool finite_nonneg(double v) { return std::isfinite(v) && v >= 0.0; }
inline bool finite_pos(double v) { return std::isfinite(v) && v > 0.0; }

}  // namespace detail

inline void validate(const PixelTransformSpec& spec) {
  using detail::require;
  std::visit(
      [](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Brightness>) {
          require(detail::finite_pos(s.factor), "brightness factor must be > 0");
        } else if constexpr (std::is_same_v<T, ColorJitter>) {
          for (double g : s.gains) require(detail::finite_pos(g), "color jitter gains must be > 0");
        } else if constexpr (std::is_same_v<T, Saturation>) {
          require(detail::finite_nonneg(s.factor), "saturation factor must be >= 0");
        } else if constexpr (std::is_same_v<T, Sharpen>) {
          require(detail::finite_nonneg(s.amount), "sharpen amount must be >= 0");
        } else if constexpr (std::is_same_v<T, Blur>) {
          require(detail::finite_nonneg(s.sigma), "blur sigma must be >= 0");
        } else if constexpr (std::is_same_v<T, Noise>) {
          require(detail::finite_nonneg(s.sigma), "noise sigma must be >= 0");
        } else if constexpr (std::is_same_v<T, ShufflePixels>) {
          require(s.tile >= 2, "shuffle tile must be >= 2");
        } else if constexpr (std::is_same_v<T, Pixelization>) {
          require(s.factor >= 1, "pixelization factor must be >= 1");
        } else if constexpr (std::is_same_v<T, Hue>) {
          require(std::isfinite(s.delta_degrees), "hue delta must be finite");
        }
      },
      spec);
}

// ---------------------------------------------------------------------------
// Individual transforms

template <typename Fn>
ImageBuffer map_pixels(const ImageBuffer& img, Fn&& fn) {
  require_valid(img);
  ImageBuffer out = img;
  for (std::size_t i = 0; i < out.pixels.size(); i += 3) {
    const std::array<double, 3> in{double(img.pixels[i]), double(img.pixels[i + 1]),
                                   double(img.pixels[i + 2])};
    const std::array<double, 3> v = fn(in);
    out.pixels[i] = to_u8(v[0]);
    out.pixels[i + 1] = to_u8(v[1]);
    out.pixels[i + 2] = to_u8(v[2]);
  }
  return out;
}

inline ImageBuffer apply_brightness(const ImageBuffer& img, double factor) {
  validate(Brightness{factor});
  return map_pixels(img, [&](std::array<double, 3> p) {
    return std::array<double, 3>{p[0] * factor, p[1] * factor, p[2] * factor};
  });
}

inline ImageBuffer apply_color_jitter(const ImageBuffer& img, const std::array<double, 3>& gains) {
  validate(ColorJitter{gains});
  return map_pixels(img, [&](std::array<double, 3> p) {
    return std::array<double, 3>{p[0] * gains[0], p[1] * gains[1], p[2] * gains[2]};
  });
}

// Luma-anchored; factor 0 is exact grayscale.
inline ImageBuffer apply_saturation(const ImageBuffer& img, double factor) {
  validate(Saturation{factor});
  return map_pixels(img, [&](std::array<double, 3> p) {
    const double l = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
    return std::array<double, 3>{l + factor * (p[0] - l), l + factor * (p[1] - l),
                                 l + factor * (p[2] - l)};
  });
}

// Unrounded Gaussian blur with edge replication; one plane per channel.
inline std::vector<double> gaussian_blur_plane(const ImageBuffer& img, double sigma) {
  const int w = img.width, h = img.height;
  std::vector<double> src(img.pixels.begin(), img.pixels.end());
  if (sigma <= 0.0 || w == 0 || h == 0) return src;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i)
    kernel[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
  const double norm = std::accumulate(kernel.begin(), kernel.end(), 0.0);
  for (auto& k : kernel) k /= norm;

  std::vector<double> tmp(src.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int xx = std::clamp(x + i, 0, w - 1);
          acc += kernel[i + radius] * src[img.index(xx, y) + c];
        }
        tmp[img.index(x, y) + c] = acc;
      }
  std::vector<double> out(src.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int yy = std::clamp(y + i, 0, h - 1);
          acc += kernel[i + radius] * tmp[img.index(x, yy) + c];
        }
        out[img.index(x, y) + c] = acc;
      }
  return out;
}

inline ImageBuffer apply_blur(const ImageBuffer& img, double sigma) {
  validate(Blur{sigma});
  require_valid(img);
  if (sigma == 0.0) return img;
  const auto blurred = gaussian_blur_plane(img, sigma);
  ImageBuffer out = img;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = to_u8(blurred[i]);
  return out;
}

// Unsharp mask against a sigma-1 Gaussian.
inline ImageBuffer apply_sharpen(const ImageBuffer& img, double amount) {
  validate(Sharpen{amount});
  require_valid(img);
  if (amount == 0.0) return img;
  const auto blurred = gaussian_blur_plane(img, 1.0);
  ImageBuffer out = img;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    const double v = img.pixels[i];
    out.pixels[i] = to_u8(v + amount * (v - blurred[i]));
  }
  return out;
}

inline ImageBuffer apply_noise(const ImageBuffer& img, double sigma, std::uint64_t seed) {
  validate(Noise{sigma, seed});
  require_valid(img);
  if (sigma == 0.0) return img;
  Rng rng(seed);
  ImageBuffer out = img;
  for (std::size_t i = 0; i < out.pixels.size(); ++i)
    out.pixels[i] = to_u8(img.pixels[i] + sigma * rng.normal());
  return out;
}

// Permutes pixels within each tile×tile block; edge blocks may be smaller.
inline ImageBuffer apply_shuffle_pixels(const ImageBuffer& img, int tile, std::uint64_t seed) {
  validate(ShufflePixels{tile, seed});
  require_valid(img);
  Rng rng(seed);
  ImageBuffer out = img;
  std::vector<std::size_t> slots;
  for (int ty = 0; ty < img.height; ty += tile)
    for (int tx = 0; tx < img.width; tx += tile) {
      slots.clear();
      for (int y = ty; y < std::min(ty + tile, img.height); ++y)
        for (int x = tx; x < std::min(tx + tile, img.width); ++x) slots.push_back(img.index(x, y));
      std::vector<std::size_t> perm = slots;
      for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
      for (std::size_t i = 0; i < slots.size(); ++i)
        for (int c = 0; c < 3; ++c) out.pixels[slots[i] + c] = img.pixels[perm[i] + c];
    }
  return out;
}

inline ImageBuffer apply_pixelization(const ImageBuffer& img, int factor) {
  validate(Pixelization{factor});
  require_valid(img);
  if (factor == 1) return img;
  ImageBuffer out = img;
  for (int by = 0; by < img.height; by += factor)
    for (int bx = 0; bx < img.width; bx += factor) {
      const int ey = std::min(by + factor, img.height), ex = std::min(bx + factor, img.width);
      std::array<double, 3> sum{0, 0, 0};
      for (int y = by; y < ey; ++y)
        for (int x = bx; x < ex; ++x)
          for (int c = 0; c < 3; ++c) sum[c] += img.at(x, y, c);
      const double n = double(ey - by) * double(ex - bx);
      for (int y = by; y < ey; ++y)
        for (int x = bx; x < ex; ++x)
          for (int c = 0; c < 3; ++c) out.at(x, y, c) = to_u8(sum[c] / n);
    }
  return out;
}

struct Kernel3 {
  std::array<int, 9> weights;
  double scale;
};

inline const Kernel3& filter_kernel(FilterKind k) {
  static const Kernel3 smooth{{1, 1, 1, 1, 5, 1, 1, 1, 1}, 13.0};
  static const Kernel3 detail{{0, -1, 0, -1, 10, -1, 0, -1, 0}, 6.0};
  static const Kernel3 edge{{-1, -1, -1, -1, 10, -1, -1, -1, -1}, 2.0};
  switch (k) {
    case FilterKind::detail: return detail;
    case FilterKind::edge_enhance: return edge;
    default: return smooth;
  }
}

inline ImageBuffer apply_filter(const ImageBuffer& img, FilterKind kind) {
  require_valid(img);
  ImageBuffer out = img;
  const int w = img.width, h = img.height;
  std::array<std::uint8_t, 9> window{};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx)
            window[(dy + 1) * 3 + dx + 1] =
                img.at(std::clamp(x + dx, 0, w - 1), std::clamp(y + dy, 0, h - 1), c);
        if (kind == FilterKind::median) {
          auto sorted = window;
          std::nth_element(sorted.begin(), sorted.begin() + 4, sorted.end());
          out.at(x, y, c) = sorted[4];
        } else if (kind == FilterKind::mode) {
          // Most frequent value; ties go to the smallest.
          auto sorted = window;
          std::sort(sorted.begin(), sorted.end());
          std::uint8_t best = sorted[0];
          int best_run = 0;
          for (std::size_t i = 0; i < sorted.size();) {
            std::size_t j = i;
            while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
            if (static_cast<int>(j - i) > best_run) {
              best_run = static_cast<int>(j - i);
              best = sorted[i];
            }
            i = j;
          }
          out.at(x, y, c) = best;
        } else {
          const Kernel3& k = filter_kernel(kind);
          int acc = 0;
          for (int i = 0; i < 9; ++i) acc += k.weights[i] * window[i];
          out.at(x, y, c) = to_u8(acc / k.scale);
        }
      }
  return out;
}

inline std::array<double, 3> rgb_to_hsv(double r, double g, double b) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  double hue = 0.0;
  if (d > 0.0) {
    if (mx == r)
      hue = 60.0 * ((g - b) / d);
    else if (mx == g)
      hue = 60.0 * ((b - r) / d + 2.0);
    else
      hue = 60.0 * ((r - g) / d + 4.0);
    if (hue < 0.0) hue += 360.0;
  }
  const double sat = mx > 0.0 ? d / mx : 0.0;
  return {hue, sat, mx};
}

inline std::array<double, 3> hsv_to_rgb(double hue, double sat, double val) {
  const double sector = hue / 60.0;
  const int i = static_cast<int>(std::floor(sector)) % 6;
  const double f = sector - std::floor(sector);
  const double p = val * (1.0 - sat);
  const double q = val * (1.0 - sat * f);
  const double t = val * (1.0 - sat * (1.0 - f));
  switch (i) {
    case 0: return {val, t, p};
    case 1: return {q, val, p};
    case 2: return {p, val, t};
    case 3: return {p, q, val};
    case 4: return {t, p, val};
    default: return {val, p, q};
  }
}

inline ImageBuffer apply_hue(const ImageBuffer& img, double delta_degrees) {
  validate(Hue{delta_degrees});
  return map_pixels(img, [&](std::array<double, 3> p) {
    auto hsv = rgb_to_hsv(p[0], p[1], p[2]);
    if (hsv[1] == 0.0) return p;
    double hue = std::fmod(hsv[0] + delta_degrees, 360.0);
    if (hue < 0.0) hue += 360.0;
    if (hue >= 360.0) hue -= 360.0;
    return hsv_to_rgb(hue, hsv[1], hsv[2]);
  });
}

inline ImageBuffer apply_pixel_transform(const ImageBuffer& img, const PixelTransformSpec& spec) {
  validate(spec);
  return std::visit(
      [&](const auto& s) -> ImageBuffer {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Brightness>) return apply_brightness(img, s.factor);
        else if constexpr (std::is_same_v<T, ColorJitter>) return apply_color_jitter(img, s.gains);
        else if constexpr (std::is_same_v<T, Saturation>) return apply_saturation(img, s.factor);
        else if constexpr (std::is_same_v<T, Sharpen>) return apply_sharpen(img, s.amount);
        else if constexpr (std::is_same_v<T, Blur>) return apply_blur(img, s.sigma);
        else if constexpr (std::is_same_v<T, Noise>) return apply_noise(img, s.sigma, s.seed);
        else if constexpr (std::is_same_v<T, ShufflePixels>)
          return apply_shuffle_pixels(img, s.tile, s.seed);
        else if constexpr (std::is_same_v<T, Pixelization>) return apply_pixelization(img, s.factor);
        else if constexpr (std::is_same_v<T, Filter>) return apply_filter(img, s.kind);
        else return apply_hue(img, s.delta_degrees);
      },
      spec);
}

// ---------------------------------------------------------------------------
// JSON form: {"kind": ..., params...}

inline nlohmann::ordered_json spec_to_json(const PixelTransformSpec& spec) {
  nlohmann::ordered_json j;
  j["kind"] = spec_kind(spec);
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Brightness> || std::is_same_v<T, Saturation>) {
          j["factor"] = s.factor;
        } else if constexpr (std::is_same_v<T, ColorJitter>) {
          j["gains"] = s.gains;
        } else if constexpr (std::is_same_v<T, Sharpen>) {
          j["amount"] = s.amount;
        } else if constexpr (std::is_same_v<T, Blur>) {
          j["sigma"] = s.sigma;
        } else if constexpr (std::is_same_v<T, Noise>) {
          j["sigma"] = s.sigma;
          j["seed"] = s.seed;
        } else if constexpr (std::is_same_v<T, ShufflePixels>) {
          j["tile"] = s.tile;
          j["seed"] = s.seed;
        } else if constexpr (std::is_same_v<T, Pixelization>) {
          j["factor"] = s.factor;
        } else if constexpr (std::is_same_v<T, Filter>) {
          j["filter"] = filter_name(s.kind);
        } else {
          j["delta_degrees"] = s.delta_degrees;
        }
      },
      spec);
  return j;
}

inline PixelTransformSpec spec_from_json(const nlohmann::ordered_json& j) {
  try {
    const auto kind = j.at("kind").get<std::string>();
    PixelTransformSpec spec;
    if (kind == "brightness") spec = Brightness{j.at("factor").get<double>()};
    else if (kind == "color_jitter") spec = ColorJitter{j.at("gains").get<std::array<double, 3>>()};
    else if (kind == "saturation") spec = Saturation{j.at("factor").get<double>()};
    else if (kind == "sharpen") spec = Sharpen{j.at("amount").get<double>()};
    else if (kind == "blur") spec = Blur{j.at("sigma").get<double>()};
    else if (kind == "noise")
      spec = Noise{j.at("sigma").get<double>(), j.at("seed").get<std::uint64_t>()};
    else if (kind == "shuffle_pixels")
      spec = ShufflePixels{j.at("tile").get<int>(), j.at("seed").get<std::uint64_t>()};
    else if (kind == "pixelization") spec = Pixelization{j.at("factor").get<int>()};
    else if (kind == "filter") spec = Filter{filter_from_name(j.at("filter").get<std::string>())};
    else if (kind == "hue") spec = Hue{j.at("delta_degrees").get<double>()};
    else throw ValidationError("unknown transform kind '" + kind + "'");
    validate(spec);
    return spec;
  } catch (const nlohmann::ordered_json::exception& e) {
    throw ValidationError(std::string("invalid transform spec: ") + e.what());
  }
}

}  // namespace dataeff
