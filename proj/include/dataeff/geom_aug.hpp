#pragma once

// Online geometric augmentations. Each keeps annotations consistent with the
// pixels it produces, except grid-mask, which occludes pixels only.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "dataeff/coco.hpp"
#include "dataeff/error.hpp"
#include "dataeff/image.hpp"
#include "dataeff/random.hpp"

namespace dataeff {

struct GridMaskConfig {
  int unit = 96;
  double ratio = 0.5;
  int offset_x = 0;
  int offset_y = 0;
  Rgb fill{0, 0, 0};
};

struct CropConfig {
  int target_w = 1920;
  int target_h = 1440;
  double min_visibility = 0.25;
};

struct JitterConfig {
  double magnitude = 0.05;
};

using AnnotatedImage = std::pair<ImageBuffer, std::vector<Annotation>>;

inline void validate(const GridMaskConfig& c) {
  if (c.unit < 2) throw ValidationError("grid-mask unit must be >= 2");
  if (!(c.ratio > 0.0 && c.ratio < 1.0)) throw ValidationError("grid-mask ratio must be in (0,1)");
  if (c.offset_x < 0 || c.offset_x >= c.unit || c.offset_y < 0 || c.offset_y >= c.unit)
    throw ValidationError("grid-mask offsets must be in [0, unit)");
}

inline void validate(const CropConfig& c) {
  if (c.target_w < 1 || c.target_h < 1) throw ValidationError("crop target must be >= 1x1");
  if (!(c.min_visibility >= 0.0 && c.min_visibility <= 1.0))
    throw ValidationError("crop min_visibility must be in [0,1]");
}

inline void validate(const JitterConfig& c) {
  if (!(c.magnitude >= 0.0 && c.magnitude <= 0.5))
    throw ValidationError("jitter magnitude must be in [0, 0.5]");
}

namespace detail {

inline void require_within(const Annotation& a, int width, int height) {
  constexpr double eps = 1e-6;
  const auto& b = a.bbox;
  if (b.x < -eps || b.y < -eps || b.x + b.w > width + eps || b.y + b.h > height + eps)
    throw ValidationError("annotation " + std::to_string(a.id) + " box lies outside the " +
                          std::to_string(width) + "x" + std::to_string(height) + " image");
  for (const auto& poly : a.segmentation.polygons)
    for (const auto& p : poly)
      if (p.x < -eps || p.y < -eps || p.x > width + eps || p.y > height + eps)
        throw ValidationError("annotation " + std::to_string(a.id) +
                              " polygon lies outside the image");
  if (a.segmentation.rle &&
      (a.segmentation.rle->width != width || a.segmentation.rle->height != height))
    throw ValidationError("annotation " + std::to_string(a.id) +
                          " RLE size does not match the image");
}

inline BinaryMask mirror(const BinaryMask& m) {
  BinaryMask out(m.width, m.height);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) out.set(m.width - 1 - x, y, m.at(x, y));
  return out;
}

}  // namespace detail

inline ImageBuffer hflip_image(const ImageBuffer& img) {
  require_valid(img);
  ImageBuffer out = img;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(img.width - 1 - x, y, c) = img.at(x, y, c);
  return out;
}

inline Rle hflip_rle(const Rle& r) { return rle_encode(detail::mirror(rle_decode(r))); }

inline Annotation hflip_annotation(const Annotation& a, int width) {
  Annotation out = a;
  const double w = width;
  out.bbox.x = w - a.bbox.x - a.bbox.w;
  for (auto& poly : out.segmentation.polygons)
    for (auto& p : poly) p.x = w - p.x;
  if (a.segmentation.rle) out.segmentation.rle = hflip_rle(*a.segmentation.rle);
  return out;
}

inline AnnotatedImage hflip(const ImageBuffer& img, const std::vector<Annotation>& anns) {
  require_valid(img);
  std::vector<Annotation> out;
  out.reserve(anns.size());
  for (const auto& a : anns) {
    detail::require_within(a, img.width, img.height);
    out.push_back(hflip_annotation(a, img.width));
  }
  return {hflip_image(img), std::move(out)};
}

// Crops to the target size at a seeded uniform origin, padding bottom/right
// with black when the input is smaller. Surviving annotations are re-encoded
// as RLE at crop size with box and area recomputed from the mask.
inline AnnotatedImage random_crop(const ImageBuffer& img, const std::vector<Annotation>& anns,
                                  const CropConfig& cfg, std::uint64_t seed) {
  require_valid(img);
  validate(cfg);
  if (img.width == cfg.target_w && img.height == cfg.target_h) return {img, anns};

  const int padded_w = std::max(img.width, cfg.target_w);
  const int padded_h = std::max(img.height, cfg.target_h);
  Rng rng(seed);
  const int ox = static_cast<int>(rng.between(0, padded_w - cfg.target_w));
  const int oy = static_cast<int>(rng.between(0, padded_h - cfg.target_h));

  ImageBuffer out(cfg.target_w, cfg.target_h);
  for (int y = 0; y < cfg.target_h; ++y)
    for (int x = 0; x < cfg.target_w; ++x) {
      const int sx = x + ox, sy = y + oy;
      if (sx >= img.width || sy >= img.height) continue;
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(sx, sy, c);
    }

  std::vector<Annotation> kept;
  for (const auto& a : anns) {
    const BinaryMask full = segmentation_to_mask(a.segmentation, a.bbox, img.height, img.width);
    const std::uint64_t before = full.count();
    if (before == 0) continue;
    BinaryMask cropped(cfg.target_w, cfg.target_h);
    for (int y = 0; y < cfg.target_h; ++y)
      for (int x = 0; x < cfg.target_w; ++x) {
        const int sx = x + ox, sy = y + oy;
        if (sx < img.width && sy < img.height && full.at(sx, sy)) cropped.set(x, y);
      }
    const std::uint64_t after = cropped.count();
    if (after == 0 || static_cast<double>(after) / static_cast<double>(before) < cfg.min_visibility)
      continue;
    Annotation b = a;
    b.segmentation = Segmentation{{}, rle_encode(cropped)};
    b.bbox = bbox_from_mask(cropped);
    b.area = static_cast<double>(after);
    kept.push_back(std::move(b));
  }
  return {std::move(out), std::move(kept)};
}

// Displaces each box edge by U[-m*side, +m*side], then clips to the image.
// Segmentation and area are left alone.
inline std::vector<Annotation> bbox_jitter(const std::vector<Annotation>& anns,
                                           const JitterConfig& cfg, std::uint64_t seed,
                                           int img_w, int img_h) {
  validate(cfg);
  Rng rng(seed);
  std::vector<Annotation> out = anns;
  const double m = cfg.magnitude;
  for (auto& a : out) {
    const double dx0 = rng.uniform(-m, m) * a.bbox.w;
    const double dx1 = rng.uniform(-m, m) * a.bbox.w;
    const double dy0 = rng.uniform(-m, m) * a.bbox.h;
    const double dy1 = rng.uniform(-m, m) * a.bbox.h;
    if (m == 0.0) continue;
    double x0 = std::clamp(a.bbox.x + dx0, 0.0, double(img_w));
    double x1 = std::clamp(a.bbox.x + a.bbox.w + dx1, 0.0, double(img_w));
    double y0 = std::clamp(a.bbox.y + dy0, 0.0, double(img_h));
    double y1 = std::clamp(a.bbox.y + a.bbox.h + dy1, 0.0, double(img_h));
    a.bbox = {x0, y0, std::max(0.0, x1 - x0), std::max(0.0, y1 - y0)};
  }
  return out;
}

// Number of masked pixels per unit along one axis.
inline int grid_span(const GridMaskConfig& cfg) {
  return static_cast<int>(std::round(cfg.ratio * cfg.unit));
}

inline bool grid_masked(const GridMaskConfig& cfg, int x, int y) {
  const int span = grid_span(cfg);
  return (x + cfg.offset_x) % cfg.unit < span && (y + cfg.offset_y) % cfg.unit < span;
}

inline ImageBuffer grid_mask(const ImageBuffer& img, const GridMaskConfig& cfg) {
  require_valid(img);
  validate(cfg);
  ImageBuffer out = img;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      if (grid_masked(cfg, x, y))
        for (int c = 0; c < 3; ++c) out.at(x, y, c) = cfg.fill[c];
  return out;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::ordered_json to_json(const GridMaskConfig& c) {
  return {{"unit", c.unit},         {"ratio", c.ratio}, {"offset_x", c.offset_x},
          {"offset_y", c.offset_y}, {"fill", c.fill}};
}

inline nlohmann::ordered_json to_json(const CropConfig& c) {
  return {{"target_w", c.target_w}, {"target_h", c.target_h}, {"min_visibility", c.min_visibility}};
}

inline nlohmann::ordered_json to_json(const JitterConfig& c) {
  return {{"magnitude", c.magnitude}};
}

inline CropConfig crop_config_from_json(const nlohmann::ordered_json& j, CropConfig c = {}) {
  c.target_w = j.value("target_w", c.target_w);
  c.target_h = j.value("target_h", c.target_h);
  c.min_visibility = j.value("min_visibility", c.min_visibility);
  validate(c);
  return c;
}

inline JitterConfig jitter_config_from_json(const nlohmann::ordered_json& j, JitterConfig c = {}) {
  c.magnitude = j.value("magnitude", c.magnitude);
  validate(c);
  return c;
}

}  // namespace dataeff
