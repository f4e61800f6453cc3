#pragma once

// COCO annotation model: datasets, results files, run-length masks and
// polygon rasterization.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "dataeff/error.hpp"

namespace dataeff {

using Json = nlohmann::ordered_json;

// Top-left origin, xywh.
struct BBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double area() const { return w * h; }
  friend bool operator==(const BBox&, const BBox&) = default;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

using Polygon = std::vector<Point>;

// Alternating background/foreground runs over column-major pixels, starting
// with background.
struct Rle {
  int height = 0;
  int width = 0;
  std::vector<std::uint32_t> counts;

  std::uint64_t area() const {
    std::uint64_t a = 0;
    for (std::size_t i = 1; i < counts.size(); i += 2) a += counts[i];
    return a;
  }
  friend bool operator==(const Rle&, const Rle&) = default;
};

// Row-major boolean raster.
struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(int w, int h) : width(w), height(h), bits(static_cast<std::size_t>(w) * h, 0) {}

  bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int x, int y, bool v = true) {
    bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0;
  }
  std::uint64_t count() const {
    return static_cast<std::uint64_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
  }
  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

// Either a polygon list or an RLE; both empty means "no segmentation".
struct Segmentation {
  std::vector<Polygon> polygons;
  std::optional<Rle> rle;

  bool empty() const { return polygons.empty() && !rle; }
  friend bool operator==(const Segmentation&, const Segmentation&) = default;
};

struct ImageRecord {
  std::int64_t id = 0;
  std::string file_name;
  int width = 0;
  int height = 0;
  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct Category {
  std::int64_t id = 0;
  std::string name;
  std::string supercategory;
  friend bool operator==(const Category&, const Category&) = default;
};

struct Annotation {
  std::int64_t id = 0;
  std::int64_t image_id = 0;
  std::int64_t category_id = 0;
  BBox bbox;
  Segmentation segmentation;
  double area = 0.0;
  bool iscrowd = false;
  friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct CocoDataset {
  std::vector<ImageRecord> images;
  std::vector<Annotation> annotations;
  std::vector<Category> categories;
  // Passed through untouched.
  Json info;
  Json licenses;

  const ImageRecord* find_image(std::int64_t id) const {
    for (const auto& im : images)
      if (im.id == id) return &im;
    return nullptr;
  }
  friend bool operator==(const CocoDataset&, const CocoDataset&) = default;
};

// One scored detection; also the entry type of a COCO results file.
struct Detection {
  std::int64_t image_id = 0;
  std::int64_t category_id = 0;
  BBox bbox;
  double score = 0.0;
  std::optional<Rle> mask;
  friend bool operator==(const Detection&, const Detection&) = default;
};

struct DetectionFile {
  std::vector<Detection> entries;
  friend bool operator==(const DetectionFile&, const DetectionFile&) = default;
};

// ---------------------------------------------------------------------------
// RLE

inline void validate_rle(const Rle& r) {
  if (r.height < 0 || r.width < 0) throw ValidationError("RLE size must be non-negative");
  std::uint64_t sum = 0;
  for (auto c : r.counts) sum += c;
  const std::uint64_t expected = static_cast<std::uint64_t>(r.height) * r.width;
  if (sum != expected)
    throw ValidationError("RLE counts sum to " + std::to_string(sum) + ", expected " +
                          std::to_string(expected) + " for size [" + std::to_string(r.height) +
                          "," + std::to_string(r.width) + "]");
}

inline Rle rle_encode(const BinaryMask& m) {
  if (m.bits.size() != static_cast<std::size_t>(m.width) * m.height)
    throw ValidationError("mask bits length does not match its dimensions");
  Rle r{m.height, m.width, {}};
  std::uint8_t current = 0;
  std::uint32_t run = 0;
  for (int x = 0; x < m.width; ++x) {
    for (int y = 0; y < m.height; ++y) {
      const std::uint8_t v = m.at(x, y) ? 1 : 0;
      if (v != current) {
        r.counts.push_back(run);
        run = 0;
        current = v;
      }
      ++run;
    }
  }
  r.counts.push_back(run);
  return r;
}

inline BinaryMask rle_decode(const Rle& r) {
  validate_rle(r);
  BinaryMask m(r.width, r.height);
  std::size_t k = 0;
  const std::size_t h = static_cast<std::size_t>(r.height);
  for (std::size_t i = 0; i < r.counts.size(); ++i) {
    if (i % 2 == 1) {
      for (std::size_t j = k; j < k + r.counts[i]; ++j)
        m.bits[(j % h) * r.width + j / h] = 1;
    }
    k += r.counts[i];
  }
  return m;
}

// COCO compressed RLE string: per count, 5 data bits per character, low bits
// first, 0x20 continuation flag, sign carried by 0x10 in the final group,
// offset by 48. Counts from index 3 on are stored as deltas to count[i-2].
inline std::string rle_to_string(const Rle& r) {
  std::string s;
  for (std::size_t i = 0; i < r.counts.size(); ++i) {
    std::int64_t x = r.counts[i];
    if (i > 2) x -= static_cast<std::int64_t>(r.counts[i - 2]);
    bool more = true;
    while (more) {
      char c = static_cast<char>(x & 0x1f);
      x >>= 5;
      more = (c & 0x10) ? x != -1 : x != 0;
      if (more) c |= 0x20;
      s.push_back(static_cast<char>(c + 48));
    }
  }
  return s;
}

inline std::vector<std::uint32_t> rle_counts_from_string(std::string_view s) {
  std::vector<std::uint32_t> counts;
  std::size_t p = 0;
  while (p < s.size()) {
    std::int64_t x = 0;
    int k = 0;
    bool more = true;
    while (more) {
      if (p >= s.size()) throw ParseError("truncated compressed RLE string", p);
      const int c = static_cast<unsigned char>(s[p]) - 48;
      if (c < 0 || c > 63) throw ParseError("invalid character in compressed RLE string", p);
      if (k >= 12) throw ParseError("compressed RLE count too long", p);
      x |= static_cast<std::int64_t>(c & 0x1f) << (5 * k);
      more = (c & 0x20) != 0;
      ++p;
      ++k;
      if (!more && (c & 0x10)) x |= static_cast<std::int64_t>(-1) * (std::int64_t{1} << (5 * k));
    }
    if (counts.size() > 2) x += counts[counts.size() - 2];
    if (x < 0 || x > UINT32_MAX) throw ParseError("compressed RLE count out of range", p);
    counts.push_back(static_cast<std::uint32_t>(x));
  }
  return counts;
}

// ---------------------------------------------------------------------------
// Polygons and boxes

namespace detail {

inline bool on_segment(const Point& a, const Point& b, double px, double py) {
  const double cross = (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x);
  if (cross != 0.0) return false;
  return px >= std::min(a.x, b.x) && px <= std::max(a.x, b.x) && py >= std::min(a.y, b.y) &&
         py <= std::max(a.y, b.y);
}

inline int clamped_index(double v, int limit) {
  return static_cast<int>(std::clamp(v, -2.0, static_cast<double>(limit) + 2.0));
}

// Even-odd scanline fill of one polygon at height py into row.
inline void fill_polygon_row(const Polygon& poly, double py, int width,
                             std::vector<double>& crossings, std::vector<std::uint8_t>& row) {
  crossings.clear();
  const std::size_t n = poly.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Point& pi = poly[i];
    const Point& pj = poly[j];
    if ((pi.y > py) != (pj.y > py))
      crossings.push_back((pj.x - pi.x) * (py - pi.y) / (pj.y - pi.y) + pi.x);
  }
  std::fill(row.begin(), row.end(), std::uint8_t{0});
  if (crossings.empty()) return;
  std::sort(crossings.begin(), crossings.end());
  // Only pixels whose center lies left of some crossing can be inside.
  const double last = crossings.back();
  const int col_end = std::min(width, clamped_index(std::ceil(last), width) + 1);
  auto it = crossings.begin();
  for (int col = std::max(0, clamped_index(std::floor(crossings.front() - 0.5), width));
       col < col_end; ++col) {
    const double px = col + 0.5;
    it = std::upper_bound(it, crossings.end(), px);
    const auto right = crossings.end() - it;
    if (right % 2 == 1) row[col] = 1;
  }
  // Centers on the boundary are outside.
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Point& a = poly[j];
    const Point& b = poly[i];
    if (py < std::min(a.y, b.y) || py > std::max(a.y, b.y)) continue;
    int lo, hi;
    if (a.y == b.y) {
      lo = clamped_index(std::floor(std::min(a.x, b.x) - 0.5), width);
      hi = clamped_index(std::ceil(std::max(a.x, b.x) - 0.5), width);
    } else {
      const double xs = a.x + (py - a.y) * (b.x - a.x) / (b.y - a.y);
      lo = clamped_index(std::floor(xs - 0.5), width) - 1;
      hi = lo + 3;
    }
    for (int col = std::max(lo, 0); col <= std::min(hi, width - 1); ++col)
      if (row[col] && on_segment(a, b, col + 0.5, py)) row[col] = 0;
  }
}

}  // namespace detail

inline void validate_polygon(const Polygon& poly) {
  if (poly.size() < 3)
    throw ValidationError("polygon needs at least 3 vertices, got " + std::to_string(poly.size()));
  for (const auto& p : poly)
    if (!std::isfinite(p.x) || !std::isfinite(p.y))
      throw ValidationError("polygon has a non-finite coordinate");
}

// Pixel (row, col) is foreground iff its center (col+0.5, row+0.5) is strictly
// inside some polygon under the even-odd rule.
inline BinaryMask polygons_to_mask(const std::vector<Polygon>& polys, int height, int width) {
  if (height < 0 || width < 0) throw ValidationError("mask dimensions must be non-negative");
  BinaryMask m(width, height);
  std::vector<double> crossings;
  std::vector<std::uint8_t> row(static_cast<std::size_t>(width));
  for (const auto& poly : polys) {
    validate_polygon(poly);
    double ymin = poly[0].y, ymax = poly[0].y;
    for (const auto& p : poly) {
      ymin = std::min(ymin, p.y);
      ymax = std::max(ymax, p.y);
    }
    const int r0 = std::max(0, detail::clamped_index(std::floor(ymin - 0.5), height));
    const int r1 = std::min(height - 1, detail::clamped_index(std::ceil(ymax - 0.5), height));
    for (int r = r0; r <= r1; ++r) {
      detail::fill_polygon_row(poly, r + 0.5, width, crossings, row);
      for (int c = 0; c < width; ++c)
        if (row[c]) m.set(c, r);
    }
  }
  return m;
}

inline BBox bbox_from_mask(const BinaryMask& m) {
  int x0 = m.width, y0 = m.height, x1 = -1, y1 = -1;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (m.at(x, y)) {
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
      }
  if (x1 < 0) return {};
  return {static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(x1 - x0 + 1),
          static_cast<double>(y1 - y0 + 1)};
}

// Foreground raster of a segmentation at the given image size; annotations
// without segmentation fall back to their box.
inline BinaryMask segmentation_to_mask(const Segmentation& seg, const BBox& box, int height,
                                       int width) {
  if (seg.rle) {
    if (seg.rle->height != height || seg.rle->width != width)
      throw ValidationError("RLE size [" + std::to_string(seg.rle->height) + "," +
                            std::to_string(seg.rle->width) + "] does not match image [" +
                            std::to_string(height) + "," + std::to_string(width) + "]");
    return rle_decode(*seg.rle);
  }
  if (!seg.polygons.empty()) return polygons_to_mask(seg.polygons, height, width);
  Polygon rect{{box.x, box.y}, {box.x + box.w, box.y}, {box.x + box.w, box.y + box.h},
               {box.x, box.y + box.h}};
  return polygons_to_mask({rect}, height, width);
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline Json bbox_to_json(const BBox& b) { return Json::array({b.x, b.y, b.w, b.h}); }

inline BBox bbox_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 4) throw ValidationError("bbox must be an array of 4 numbers");
  BBox b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  if (!(b.w >= 0.0) || !(b.h >= 0.0)) throw ValidationError("bbox width/height must be >= 0");
  return b;
}

inline Rle rle_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("size") || !j.contains("counts"))
    throw ValidationError("RLE must be an object with size and counts");
  const auto& size = j.at("size");
  if (!size.is_array() || size.size() != 2) throw ValidationError("RLE size must be [h, w]");
  Rle r;
  r.height = size[0].get<int>();
  r.width = size[1].get<int>();
  const auto& counts = j.at("counts");
  if (counts.is_string()) {
    r.counts = rle_counts_from_string(counts.get<std::string>());
  } else if (counts.is_array()) {
    for (const auto& c : counts) {
      if (!c.is_number_integer() || c.get<std::int64_t>() < 0)
        throw ValidationError("RLE counts must be non-negative integers");
      r.counts.push_back(c.get<std::uint32_t>());
    }
  } else {
    throw ValidationError("RLE counts must be a list or a string");
  }
  validate_rle(r);
  return r;
}

inline Json rle_to_json(const Rle& r, bool compressed) {
  Json j;
  j["size"] = Json::array({r.height, r.width});
  if (compressed)
    j["counts"] = rle_to_string(r);
  else
    j["counts"] = r.counts;
  return j;
}

inline Segmentation segmentation_from_json(const Json& j) {
  Segmentation s;
  if (j.is_null()) return s;
  if (j.is_object()) {
    s.rle = rle_from_json(j);
    return s;
  }
  if (!j.is_array()) throw ValidationError("segmentation must be a polygon list or an RLE");
  for (const auto& flat : j) {
    if (!flat.is_array() || flat.size() % 2 != 0)
      throw ValidationError("polygon must be a flat list of x,y pairs");
    Polygon poly;
    for (std::size_t i = 0; i < flat.size(); i += 2)
      poly.push_back({flat[i].get<double>(), flat[i + 1].get<double>()});
    validate_polygon(poly);
    s.polygons.push_back(std::move(poly));
  }
  return s;
}

inline Json segmentation_to_json(const Segmentation& s) {
  if (s.rle) return rle_to_json(*s.rle, false);
  Json arr = Json::array();
  for (const auto& poly : s.polygons) {
    Json flat = Json::array();
    for (const auto& p : poly) {
      flat.push_back(p.x);
      flat.push_back(p.y);
    }
    arr.push_back(std::move(flat));
  }
  return arr;
}

template <typename Fn>
auto with_json_errors(Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what(), e.byte);
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("invalid JSON content: ") + e.what());
  }
}

}  // namespace detail

inline void validate_dataset(const CocoDataset& d) {
  std::map<std::int64_t, const ImageRecord*> images;
  for (const auto& im : d.images) {
    if (im.width < 1 || im.height < 1)
      throw ValidationError("image " + std::to_string(im.id) + " has non-positive dimensions");
    if (!images.emplace(im.id, &im).second)
      throw ValidationError("duplicate image id " + std::to_string(im.id));
  }
  std::set<std::int64_t> categories;
  for (const auto& c : d.categories)
    if (!categories.insert(c.id).second)
      throw ValidationError("duplicate category id " + std::to_string(c.id));
  std::set<std::int64_t> ann_ids;
  for (const auto& a : d.annotations) {
    if (!ann_ids.insert(a.id).second)
      throw ValidationError("duplicate annotation id " + std::to_string(a.id));
    const auto im = images.find(a.image_id);
    if (im == images.end())
      throw ValidationError("annotation " + std::to_string(a.id) + " references missing image_id " +
                            std::to_string(a.image_id));
    if (!categories.count(a.category_id))
      throw ValidationError("annotation " + std::to_string(a.id) +
                            " references missing category_id " + std::to_string(a.category_id));
    if (!(a.bbox.w >= 0.0) || !(a.bbox.h >= 0.0))
      throw ValidationError("annotation " + std::to_string(a.id) + " has negative box size");
    if (a.segmentation.rle &&
        (a.segmentation.rle->height != im->second->height ||
         a.segmentation.rle->width != im->second->width))
      throw ValidationError("annotation " + std::to_string(a.id) +
                            " RLE size does not match its image");
  }
}

// Mask area of an annotation in pixels, or its stored area when it carries
// no segmentation.
inline double mask_area(const Annotation& a, const ImageRecord& im) {
  if (a.segmentation.rle) return static_cast<double>(a.segmentation.rle->area());
  if (!a.segmentation.polygons.empty())
    return static_cast<double>(
        polygons_to_mask(a.segmentation.polygons, im.height, im.width).count());
  return a.area;
}

inline CocoDataset dataset_from_json(const Json& j) {
  return detail::with_json_errors([&] {
    if (!j.is_object()) throw ValidationError("dataset JSON must be an object");
    CocoDataset d;
    for (const auto& ji : j.value("images", Json::array())) {
      ImageRecord im;
      im.id = ji.at("id").get<std::int64_t>();
      im.file_name = ji.at("file_name").get<std::string>();
      im.width = ji.at("width").get<int>();
      im.height = ji.at("height").get<int>();
      d.images.push_back(std::move(im));
    }
    for (const auto& jc : j.value("categories", Json::array())) {
      Category c;
      c.id = jc.at("id").get<std::int64_t>();
      c.name = jc.value("name", std::string{});
      c.supercategory = jc.value("supercategory", std::string{});
      d.categories.push_back(std::move(c));
    }
    for (const auto& ja : j.value("annotations", Json::array())) {
      Annotation a;
      a.id = ja.at("id").get<std::int64_t>();
      a.image_id = ja.at("image_id").get<std::int64_t>();
      a.category_id = ja.at("category_id").get<std::int64_t>();
      a.bbox = detail::bbox_from_json(ja.at("bbox"));
      if (ja.contains("segmentation")) a.segmentation = detail::segmentation_from_json(ja["segmentation"]);
      a.area = ja.value("area", a.bbox.area());
      const int crowd = ja.value("iscrowd", 0);
      if (crowd != 0 && crowd != 1) throw ValidationError("iscrowd must be 0 or 1");
      a.iscrowd = crowd == 1;
      d.annotations.push_back(std::move(a));
    }
    if (j.contains("info")) d.info = j["info"];
    if (j.contains("licenses")) d.licenses = j["licenses"];
    validate_dataset(d);
    for (auto& a : d.annotations) a.area = mask_area(a, *d.find_image(a.image_id));
    return d;
  });
}

inline CocoDataset parse_dataset(std::string_view bytes) {
  return detail::with_json_errors([&] { return dataset_from_json(Json::parse(bytes)); });
}

inline Json dataset_to_json(const CocoDataset& d) {
  Json j;
  if (!d.info.is_null()) j["info"] = d.info;
  if (!d.licenses.is_null()) j["licenses"] = d.licenses;
  j["images"] = Json::array();
  for (const auto& im : d.images) {
    Json ji;
    ji["id"] = im.id;
    ji["file_name"] = im.file_name;
    ji["width"] = im.width;
    ji["height"] = im.height;
    j["images"].push_back(std::move(ji));
  }
  j["annotations"] = Json::array();
  for (const auto& a : d.annotations) {
    Json ja;
    ja["id"] = a.id;
    ja["image_id"] = a.image_id;
    ja["category_id"] = a.category_id;
    ja["bbox"] = detail::bbox_to_json(a.bbox);
    ja["segmentation"] = detail::segmentation_to_json(a.segmentation);
    ja["area"] = a.area;
    ja["iscrowd"] = a.iscrowd ? 1 : 0;
    j["annotations"].push_back(std::move(ja));
  }
  j["categories"] = Json::array();
  for (const auto& c : d.categories) {
    Json jc;
    jc["id"] = c.id;
    jc["name"] = c.name;
    if (!c.supercategory.empty()) jc["supercategory"] = c.supercategory;
    j["categories"].push_back(std::move(jc));
  }
  return j;
}

inline std::string serialize_dataset(const CocoDataset& d) { return dataset_to_json(d).dump(); }

// ---------------------------------------------------------------------------
// Results files

inline DetectionFile detections_from_json(const Json& j) {
  return detail::with_json_errors([&] {
    if (!j.is_array()) throw ValidationError("detection file must be a JSON array");
    DetectionFile f;
    for (const auto& je : j) {
      Detection d;
      d.image_id = je.at("image_id").get<std::int64_t>();
      d.category_id = je.at("category_id").get<std::int64_t>();
      d.bbox = detail::bbox_from_json(je.at("bbox"));
      d.score = je.at("score").get<double>();
      if (!(d.score >= 0.0 && d.score <= 1.0))
        throw ValidationError("detection score " + std::to_string(d.score) +
                              " outside [0,1] for image " + std::to_string(d.image_id));
      if (je.contains("segmentation") && !je["segmentation"].is_null())
        d.mask = detail::rle_from_json(je["segmentation"]);
      f.entries.push_back(std::move(d));
    }
    return f;
  });
}

inline DetectionFile parse_detections(std::string_view bytes) {
  return detail::with_json_errors([&] { return detections_from_json(Json::parse(bytes)); });
}

inline Json detections_to_json(const DetectionFile& f) {
  Json j = Json::array();
  for (const auto& d : f.entries) {
    Json je;
    je["image_id"] = d.image_id;
    je["category_id"] = d.category_id;
    je["bbox"] = detail::bbox_to_json(d.bbox);
    je["score"] = d.score;
    if (d.mask) je["segmentation"] = detail::rle_to_json(*d.mask, true);
    j.push_back(std::move(je));
  }
  return j;
}

inline std::string serialize_detections(const DetectionFile& f) {
  return detections_to_json(f).dump();
}

}  // namespace dataeff
