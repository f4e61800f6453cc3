#pragma once

// COCO-protocol average precision over IoU thresholds, for boxes or masks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dataeff/coco.hpp"
#include "dataeff/error.hpp"
#include "dataeff/postproc.hpp"

namespace dataeff {

enum class IouKind { box, mask };

inline std::vector<double> coco_iou_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back((50 + 5 * i) / 100.0);
  return t;
}

struct EvalConfig {
  std::vector<double> iou_thresholds = coco_iou_thresholds();
  IouKind iou_kind = IouKind::box;
  int max_dets = 100;
  int recall_points = 101;
};

inline void validate(const EvalConfig& c) {
  if (c.iou_thresholds.empty()) throw ValidationError("at least one IoU threshold is required");
  for (std::size_t i = 0; i < c.iou_thresholds.size(); ++i) {
    const double t = c.iou_thresholds[i];
    if (!(t > 0.0 && t <= 1.0)) throw ValidationError("IoU thresholds must lie in (0,1]");
    if (i > 0 && !(t > c.iou_thresholds[i - 1]))
      throw ValidationError("IoU thresholds must be strictly increasing");
  }
  if (c.max_dets < 1) throw ValidationError("max_dets must be >= 1");
  if (c.recall_points < 2) throw ValidationError("recall_points must be >= 2");
}

// "start:step:stop", inclusive; values snapped to 1e-6 so 0.6 is 0.6.
inline std::vector<double> parse_thresholds(const std::string& text) {
  std::vector<double> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ':')) {
    try {
      std::size_t used = 0;
      parts.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError("bad threshold spec '" + text + "'");
    }
  }
  if (parts.size() == 1) return parts;
  if (parts.size() != 3 || !(parts[1] > 0.0) || parts[2] < parts[0])
    throw ValidationError("threshold spec must be start:step:stop, got '" + text + "'");
  const long n = std::lround((parts[2] - parts[0]) / parts[1]) + 1;
  std::vector<double> out;
  for (long i = 0; i < n; ++i)
    out.push_back(std::round((parts[0] + i * parts[1]) * 1e6) / 1e6);
  return out;
}

struct Match {
  std::size_t det = 0;
  std::optional<std::size_t> gt;
  bool ignored = false;  // matched a crowd region
  bool is_tp() const { return gt.has_value() && !ignored; }
};

// IoU rows per detection, columns per ground truth. Crowd columns hold the
// fraction of the detection covered by the crowd region.
inline std::vector<std::vector<double>> iou_matrix(const std::vector<Detection>& dets,
                                                   const std::vector<Annotation>& gts,
                                                   IouKind kind, int height, int width) {
  std::vector<std::vector<double>> m(dets.size(), std::vector<double>(gts.size(), 0.0));
  if (kind == IouKind::box) {
    for (std::size_t d = 0; d < dets.size(); ++d)
      for (std::size_t g = 0; g < gts.size(); ++g)
        m[d][g] = gts[g].iscrowd ? box_crowd_overlap(dets[d].bbox, gts[g].bbox)
                                 : box_iou(dets[d].bbox, gts[g].bbox);
    return m;
  }
  std::vector<Rle> gt_masks;
  for (const auto& g : gts)
    gt_masks.push_back(rle_encode(segmentation_to_mask(g.segmentation, g.bbox, height, width)));
  for (std::size_t d = 0; d < dets.size(); ++d) {
    if (!dets[d].mask)
      throw ValidationError("mask evaluation needs a segmentation on every detection (image " +
                            std::to_string(dets[d].image_id) + ")");
    for (std::size_t g = 0; g < gts.size(); ++g)
      m[d][g] = mask_iou(*dets[d].mask, gt_masks[g], gts[g].iscrowd);
  }
  return m;
}

// Greedy COCO matching for one (image, category) at threshold t. Detections
// must be sorted by score, descending. Each takes the unmatched non-crowd
// ground truth of highest IoU >= t (ties to the lower gt id); failing that,
// a crowd region with IoU >= t marks it ignored.
inline std::vector<Match> match_with_ious(const std::vector<Detection>& dets,
                                          const std::vector<Annotation>& gts,
                                          const std::vector<std::vector<double>>& ious, double t) {
  for (std::size_t i = 1; i < dets.size(); ++i)
    if (dets[i].score > dets[i - 1].score)
      throw ValidationError("detections must be sorted by score, descending");
  const double thr = std::min(t, 1.0 - 1e-10);
  std::vector<bool> taken(gts.size(), false);
  std::vector<Match> out;
  out.reserve(dets.size());
  for (std::size_t d = 0; d < dets.size(); ++d) {
    Match m{d, std::nullopt, false};
    for (bool crowd_pass : {false, true}) {
      double best = -1.0;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (gts[g].iscrowd != crowd_pass) continue;
        if (!crowd_pass && taken[g]) continue;
        const double iou = ious[d][g];
        if (iou < thr) continue;
        if (iou > best || (iou == best && gts[g].id < gts[*m.gt].id)) {
          best = iou;
          m.gt = g;
        }
      }
      if (m.gt) {
        m.ignored = crowd_pass;
        if (!crowd_pass) taken[*m.gt] = true;
        break;
      }
    }
    out.push_back(m);
  }
  return out;
}

inline std::vector<Match> match_detections(const std::vector<Detection>& dets,
                                           const std::vector<Annotation>& gts, double t,
                                           IouKind kind, int height = 0, int width = 0) {
  return match_with_ious(dets, gts, iou_matrix(dets, gts, kind, height, width), t);
}

struct ScoredMatch {
  double score = 0.0;
  bool tp = false;
};

// Interpolated AP over `recall_points` evenly spaced recalls. nullopt when
// there is no ground truth to recall.
inline std::optional<double> average_precision(std::vector<ScoredMatch> matches, std::size_t n_gt,
                                               int recall_points = 101) {
  if (n_gt == 0) return std::nullopt;
  std::stable_sort(matches.begin(), matches.end(),
                   [](const ScoredMatch& a, const ScoredMatch& b) { return a.score > b.score; });
  std::vector<double> recall, precision;
  std::size_t tp = 0, fp = 0;
  for (const auto& m : matches) {
    (m.tp ? tp : fp) += 1;
    recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
  }
  for (std::size_t i = precision.size(); i-- > 1;)
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double sum = 0.0;
  for (int k = 0; k < recall_points; ++k) {
    const double r = static_cast<double>(k) / (recall_points - 1);
    const auto it = std::lower_bound(recall.begin(), recall.end(), r);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / recall_points;
}

struct CategoryResult {
  std::map<double, double> ap_per_threshold;
  double mean_ap = 0.0;
};

struct EvalResult {
  std::map<double, double> ap_per_threshold;
  double mean_ap = 0.0;
  std::map<std::int64_t, CategoryResult> per_category;
};

inline EvalResult evaluate(const CocoDataset& gt, const DetectionFile& dets,
                           const EvalConfig& cfg = {}) {
  validate(cfg);
  std::map<std::int64_t, const ImageRecord*> images;
  for (const auto& im : gt.images) images[im.id] = &im;
  std::set<std::int64_t> categories;
  for (const auto& c : gt.categories) categories.insert(c.id);
  for (const auto& d : dets.entries) {
    if (!images.count(d.image_id))
      throw ValidationError("detection references missing image_id " + std::to_string(d.image_id));
    if (!categories.count(d.category_id))
      throw ValidationError("detection references missing category_id " +
                            std::to_string(d.category_id));
  }

  using Key = std::pair<std::int64_t, std::int64_t>;  // (category, image)
  std::map<Key, std::vector<Annotation>> gt_groups;
  for (const auto& a : gt.annotations) gt_groups[{a.category_id, a.image_id}].push_back(a);
  std::map<Key, std::vector<Detection>> det_groups;
  for (const auto& d : dets.entries) det_groups[{d.category_id, d.image_id}].push_back(d);

  EvalResult res;
  const std::size_t nt = cfg.iou_thresholds.size();
  for (std::int64_t cat : categories) {
    std::size_t n_gt = 0;
    std::vector<std::vector<ScoredMatch>> pooled(nt);
    for (const auto& [img_id, img] : images) {
      const Key key{cat, img_id};
      const auto git = gt_groups.find(key);
      const std::vector<Annotation> no_gts;
      const auto& gts = git == gt_groups.end() ? no_gts : git->second;
      for (const auto& g : gts) n_gt += g.iscrowd ? 0 : 1;
      auto dit = det_groups.find(key);
      if (dit == det_groups.end()) continue;
      std::vector<Detection> ds = dit->second;
      std::stable_sort(ds.begin(), ds.end(),
                       [](const Detection& a, const Detection& b) { return a.score > b.score; });
      if (ds.size() > static_cast<std::size_t>(cfg.max_dets)) ds.resize(cfg.max_dets);
      const auto ious = iou_matrix(ds, gts, cfg.iou_kind, img->height, img->width);
      for (std::size_t ti = 0; ti < nt; ++ti)
        for (const auto& m : match_with_ious(ds, gts, ious, cfg.iou_thresholds[ti]))
          if (!m.ignored) pooled[ti].push_back({ds[m.det].score, m.is_tp()});
    }
    if (n_gt == 0) continue;
    CategoryResult cr;
    double sum = 0.0;
    for (std::size_t ti = 0; ti < nt; ++ti) {
      const double ap = *average_precision(pooled[ti], n_gt, cfg.recall_points);
      cr.ap_per_threshold[cfg.iou_thresholds[ti]] = ap;
      sum += ap;
    }
    cr.mean_ap = sum / static_cast<double>(nt);
    res.per_category[cat] = std::move(cr);
  }

  double total = 0.0;
  for (double t : cfg.iou_thresholds) {
    double s = 0.0;
    for (const auto& [cat, cr] : res.per_category) s += cr.ap_per_threshold.at(t);
    const double ap = res.per_category.empty() ? 0.0 : s / static_cast<double>(res.per_category.size());
    res.ap_per_threshold[t] = ap;
    total += ap;
  }
  res.mean_ap = total / static_cast<double>(nt);
  return res;
}

inline Json to_json(const EvalResult& r, IouKind kind) {
  auto table = [](const std::map<double, double>& m) {
    Json arr = Json::array();
    for (const auto& [t, ap] : m) arr.push_back({{"iou", t}, {"ap", ap}});
    return arr;
  };
  Json j;
  j["iou_kind"] = kind == IouKind::box ? "box" : "mask";
  j["mean_ap"] = r.mean_ap;
  j["ap_per_threshold"] = table(r.ap_per_threshold);
  j["per_category"] = Json::array();
  for (const auto& [cat, cr] : r.per_category)
    j["per_category"].push_back(
        {{"category_id", cat}, {"mean_ap", cr.mean_ap}, {"ap_per_threshold", table(cr.ap_per_threshold)}});
  return j;
}

}  // namespace dataeff
