#pragma once

// Detection postprocessing: IoU, soft-NMS, and test-time-augmentation fusion
// over flipped and rescaled views.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "dataeff/coco.hpp"
#include "dataeff/error.hpp"
#include "dataeff/geom_aug.hpp"

namespace dataeff {

enum class SoftNmsMethod { linear, gaussian };

struct SoftNmsConfig {
  SoftNmsMethod method = SoftNmsMethod::gaussian;
  double sigma = 0.5;
  double iou_threshold = 0.3;
  double score_threshold = 0.001;
  int max_per_image = 100;
};

inline void validate(const SoftNmsConfig& c) {
  if (!(c.sigma > 0.0)) throw ValidationError("soft-NMS sigma must be > 0");
  if (!(c.iou_threshold >= 0.0 && c.iou_threshold <= 1.0))
    throw ValidationError("soft-NMS iou_threshold must be in [0,1]");
  if (!(c.score_threshold >= 0.0 && c.score_threshold <= 1.0))
    throw ValidationError("soft-NMS score_threshold must be in [0,1]");
  if (c.max_per_image < 0) throw ValidationError("soft-NMS max_per_image must be >= 0");
}

namespace detail {

// Area from corner differences, so a box's overlap with itself equals its area.
inline double corner_area(const BBox& b) { return ((b.x + b.w) - b.x) * ((b.y + b.h) - b.y); }

}  // namespace detail

inline double box_iou(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x);
  const double ih = std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = detail::corner_area(a) + detail::corner_area(b) - inter;
  return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

// Intersection of two box areas over the first box's area, for crowd regions.
inline double box_crowd_overlap(const BBox& det, const BBox& crowd) {
  const double iw = std::min(det.x + det.w, crowd.x + crowd.w) - std::max(det.x, crowd.x);
  const double ih = std::min(det.y + det.h, crowd.y + crowd.h) - std::max(det.y, crowd.y);
  const double area = detail::corner_area(det);
  if (iw <= 0.0 || ih <= 0.0 || area <= 0.0) return 0.0;
  return std::clamp(iw * ih / area, 0.0, 1.0);
}

// Foreground overlap of two same-size RLEs, walked run by run.
inline std::uint64_t rle_intersection(const Rle& a, const Rle& b) {
  if (a.height != b.height || a.width != b.width)
    throw ValidationError("mask IoU on different sizes [" + std::to_string(a.height) + "," +
                          std::to_string(a.width) + "] vs [" + std::to_string(b.height) + "," +
                          std::to_string(b.width) + "]");
  std::size_t ia = 0, ib = 0;
  std::uint64_t ra = a.counts.empty() ? 0 : a.counts[0];
  std::uint64_t rb = b.counts.empty() ? 0 : b.counts[0];
  std::uint64_t inter = 0;
  while (ia < a.counts.size() && ib < b.counts.size()) {
    if (ra == 0) {
      if (++ia < a.counts.size()) ra = a.counts[ia];
      continue;
    }
    if (rb == 0) {
      if (++ib < b.counts.size()) rb = b.counts[ib];
      continue;
    }
    const std::uint64_t step = std::min(ra, rb);
    if (ia % 2 == 1 && ib % 2 == 1) inter += step;
    ra -= step;
    rb -= step;
  }
  return inter;
}

// With b_is_crowd, returns |a ∩ b| / |a|.
inline double mask_iou(const Rle& a, const Rle& b, bool b_is_crowd = false) {
  const std::uint64_t inter = rle_intersection(a, b);
  const std::uint64_t denom = b_is_crowd ? a.area() : a.area() + b.area() - inter;
  return denom == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(denom);
}

namespace detail {

struct Candidate {
  std::size_t input_index;
  double score;
  double original_score;
};

inline bool ranks_before(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.original_score != b.original_score) return a.original_score > b.original_score;
  return a.input_index < b.input_index;
}

}  // namespace detail

// Greedy soft-NMS, per category. Output is sorted by final score with ties
// broken by original score, then input order; capped at max_per_image.
inline std::vector<Detection> soft_nms(const std::vector<Detection>& dets,
                                       const SoftNmsConfig& cfg = {}) {
  validate(cfg);
  if (dets.empty()) return {};
  for (const auto& d : dets)
    if (d.image_id != dets.front().image_id)
      throw ValidationError("soft_nms input mixes image ids " +
                            std::to_string(dets.front().image_id) + " and " +
                            std::to_string(d.image_id));

  std::map<std::int64_t, std::vector<detail::Candidate>> by_category;
  for (std::size_t i = 0; i < dets.size(); ++i)
    by_category[dets[i].category_id].push_back({i, dets[i].score, dets[i].score});

  std::vector<detail::Candidate> emitted;
  for (auto& [cat, pool] : by_category) {
    pool.erase(std::remove_if(pool.begin(), pool.end(),
                              [&](const auto& c) { return c.score < cfg.score_threshold; }),
               pool.end());
    while (!pool.empty()) {
      auto best = std::min_element(pool.begin(), pool.end(), detail::ranks_before);
      const detail::Candidate top = *best;
      pool.erase(best);
      emitted.push_back(top);
      const BBox& tb = dets[top.input_index].bbox;
      for (auto& c : pool) {
        const double iou = box_iou(tb, dets[c.input_index].bbox);
        if (cfg.method == SoftNmsMethod::gaussian)
          c.score *= std::exp(-(iou * iou) / cfg.sigma);
        else if (iou > cfg.iou_threshold)
          c.score *= 1.0 - iou;
      }
      pool.erase(std::remove_if(pool.begin(), pool.end(),
                                [&](const auto& c) { return c.score < cfg.score_threshold; }),
                 pool.end());
    }
  }
  std::sort(emitted.begin(), emitted.end(), detail::ranks_before);
  if (emitted.size() > static_cast<std::size_t>(cfg.max_per_image))
    emitted.resize(static_cast<std::size_t>(cfg.max_per_image));

  std::vector<Detection> out;
  out.reserve(emitted.size());
  for (const auto& c : emitted) {
    Detection d = dets[c.input_index];
    d.score = c.score;
    out.push_back(std::move(d));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Test-time augmentation

struct TtaView {
  double scale = 1.0;
  bool flipped = false;
  int view_width = 0;
  int view_height = 0;
  friend bool operator==(const TtaView&, const TtaView&) = default;
};

// View of an original image at the given scale, dimensions rounded.
inline TtaView make_view(double scale, bool flipped, int orig_w, int orig_h) {
  if (!(scale > 0.0)) throw ValidationError("view scale must be > 0");
  return {scale, flipped, static_cast<int>(std::lround(orig_w * scale)),
          static_cast<int>(std::lround(orig_h * scale))};
}

inline void validate_view(const TtaView& v, int orig_w, int orig_h) {
  if (!(v.scale > 0.0)) throw ValidationError("view scale must be > 0");
  if (v.view_width != std::lround(orig_w * v.scale) ||
      v.view_height != std::lround(orig_h * v.scale))
    throw ValidationError("view size " + std::to_string(v.view_width) + "x" +
                          std::to_string(v.view_height) + " inconsistent with scale " +
                          std::to_string(v.scale) + " of " + std::to_string(orig_w) + "x" +
                          std::to_string(orig_h));
}

// Nearest-neighbour resample of a binary mask to a new size.
inline BinaryMask resize_nearest(const BinaryMask& m, int width, int height) {
  BinaryMask out(width, height);
  if (m.width == 0 || m.height == 0) return out;
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(m.height - 1, static_cast<int>((y + 0.5) * m.height / height));
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(m.width - 1, static_cast<int>((x + 0.5) * m.width / width));
      if (m.at(sx, sy)) out.set(x, y);
    }
  }
  return out;
}

// Maps detections from view space back onto the original image: undo the
// flip in view space, then undo the scale.
inline std::vector<Detection> backproject_view(const std::vector<Detection>& dets,
                                               const TtaView& view, int orig_w, int orig_h) {
  validate_view(view, orig_w, orig_h);
  std::vector<Detection> out;
  out.reserve(dets.size());
  for (const auto& d : dets) {
    Detection b = d;
    if (view.flipped) b.bbox.x = view.view_width - d.bbox.x - d.bbox.w;
    b.bbox = {b.bbox.x / view.scale, b.bbox.y / view.scale, b.bbox.w / view.scale,
              b.bbox.h / view.scale};
    if (d.mask) {
      const auto& m = *d.mask;
      if (m.width != view.view_width || m.height != view.view_height)
        throw ValidationError("detection mask size does not match its view");
      BinaryMask bits = rle_decode(m);
      if (view.flipped) bits = detail::mirror(bits);
      b.mask = rle_encode(resize_nearest(bits, orig_w, orig_h));
    }
    out.push_back(std::move(b));
  }
  return out;
}

// Inverse of backproject_view: original image space into view space.
inline std::vector<Detection> forward_project_view(const std::vector<Detection>& dets,
                                                   const TtaView& view, int orig_w, int orig_h) {
  validate_view(view, orig_w, orig_h);
  std::vector<Detection> out;
  out.reserve(dets.size());
  for (const auto& d : dets) {
    Detection f = d;
    f.bbox = {d.bbox.x * view.scale, d.bbox.y * view.scale, d.bbox.w * view.scale,
              d.bbox.h * view.scale};
    if (view.flipped) f.bbox.x = view.view_width - f.bbox.x - f.bbox.w;
    if (d.mask) {
      if (d.mask->width != orig_w || d.mask->height != orig_h)
        throw ValidationError("detection mask size does not match the original image");
      BinaryMask bits = resize_nearest(rle_decode(*d.mask), view.view_width, view.view_height);
      if (view.flipped) bits = detail::mirror(bits);
      f.mask = rle_encode(bits);
    }
    out.push_back(std::move(f));
  }
  return out;
}

using ViewDetections = std::pair<TtaView, std::vector<Detection>>;

// Back-project every view, pool, and soft-NMS the pool. Emitted detections
// keep their own masks.
inline std::vector<Detection> fuse_tta(const std::vector<ViewDetections>& views,
                                       const SoftNmsConfig& cfg, int orig_w, int orig_h) {
  std::vector<Detection> pool;
  for (const auto& [view, dets] : views) {
    auto back = backproject_view(dets, view, orig_w, orig_h);
    pool.insert(pool.end(), std::make_move_iterator(back.begin()),
                std::make_move_iterator(back.end()));
  }
  return soft_nms(pool, cfg);
}

}  // namespace dataeff
