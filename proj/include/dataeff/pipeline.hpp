#pragma once

// Offline augmentation: every source image yields N variants through a fixed
// color -> quality -> filter -> hue chain. Also the per-epoch online mode
// (flip, crop, box jitter, grid-mask).

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"

#include "dataeff/coco.hpp"
#include "dataeff/error.hpp"
#include "dataeff/geom_aug.hpp"
#include "dataeff/image.hpp"
#include "dataeff/imgproc.hpp"
#include "dataeff/random.hpp"

namespace dataeff {

using Range = std::pair<double, double>;

// Parameter ranges the chain sampler draws from.
struct SamplingRanges {
  Range brightness{0.6, 1.4};
  Range color_gain{0.8, 1.2};
  Range saturation{0.5, 1.5};
  Range sharpen{0.5, 2.0};
  Range blur_sigma{0.5, 1.5};
  Range noise_sigma{5.0, 15.0};
  int shuffle_tile = 4;
  std::pair<int, int> pixelization{2, 4};
  Range hue_mild{-30.0, 30.0};
  // Chance of a full-circle hue draw U[0,360) instead of a mild one.
  double hue_wide_probability = 0.5;
};

struct ChainSpec {
  PixelTransformSpec color = Brightness{1.0};
  PixelTransformSpec quality = Pixelization{1};
  PixelTransformSpec filter = Filter{FilterKind::smooth};
  PixelTransformSpec hue = Hue{0.0};
  friend bool operator==(const ChainSpec&, const ChainSpec&) = default;
};

inline bool is_color_family(const PixelTransformSpec& s) {
  return std::holds_alternative<Brightness>(s) || std::holds_alternative<ColorJitter>(s) ||
         std::holds_alternative<Saturation>(s) || std::holds_alternative<Sharpen>(s);
}

inline bool is_quality_family(const PixelTransformSpec& s) {
  return std::holds_alternative<Blur>(s) || std::holds_alternative<Noise>(s) ||
         std::holds_alternative<ShufflePixels>(s) || std::holds_alternative<Pixelization>(s);
}

inline void validate(const ChainSpec& c) {
  if (!is_color_family(c.color)) throw ValidationError("chain color stage has the wrong family");
  if (!is_quality_family(c.quality))
    throw ValidationError("chain quality stage has the wrong family");
  if (!std::holds_alternative<Filter>(c.filter))
    throw ValidationError("chain filter stage has the wrong family");
  if (!std::holds_alternative<Hue>(c.hue)) throw ValidationError("chain hue stage has the wrong family");
  for (const auto* s : {&c.color, &c.quality, &c.filter, &c.hue}) validate(*s);
}

inline ChainSpec sample_chain(Rng& rng, const SamplingRanges& r = {}) {
  ChainSpec c;
  switch (rng.below(4)) {
    case 0: c.color = Brightness{rng.uniform(r.brightness.first, r.brightness.second)}; break;
    case 1: {
      ColorJitter j;
      for (auto& g : j.gains) g = rng.uniform(r.color_gain.first, r.color_gain.second);
      c.color = j;
      break;
    }
    case 2: c.color = Saturation{rng.uniform(r.saturation.first, r.saturation.second)}; break;
    default: c.color = Sharpen{rng.uniform(r.sharpen.first, r.sharpen.second)}; break;
  }
  switch (rng.below(4)) {
    case 0: c.quality = Blur{rng.uniform(r.blur_sigma.first, r.blur_sigma.second)}; break;
    case 1: {
      const double sigma = rng.uniform(r.noise_sigma.first, r.noise_sigma.second);
      c.quality = Noise{sigma, rng.next_u64()};
      break;
    }
    case 2: c.quality = ShufflePixels{r.shuffle_tile, rng.next_u64()}; break;
    default:
      c.quality = Pixelization{
          static_cast<int>(rng.between(r.pixelization.first, r.pixelization.second))};
      break;
  }
  static constexpr FilterKind kinds[] = {FilterKind::detail, FilterKind::edge_enhance,
                                         FilterKind::smooth, FilterKind::median, FilterKind::mode};
  c.filter = Filter{kinds[rng.below(5)]};
  if (rng.uniform() < r.hue_wide_probability)
    c.hue = Hue{rng.uniform(0.0, 360.0)};
  else
    c.hue = Hue{rng.uniform(r.hue_mild.first, r.hue_mild.second)};
  return c;
}

// All four stages touch pixels only, so annotations pass through.
inline AnnotatedImage augment_one(const ImageBuffer& img, const std::vector<Annotation>& anns,
                                  const ChainSpec& chain) {
  validate(chain);
  ImageBuffer out = apply_pixel_transform(img, chain.color);
  out = apply_pixel_transform(out, chain.quality);
  out = apply_pixel_transform(out, chain.filter);
  out = apply_pixel_transform(out, chain.hue);
  return {std::move(out), anns};
}

struct ManifestEntry {
  std::int64_t source_image_id = 0;
  int variant_index = 0;
  ChainSpec chain;
  std::string output_file_name;
  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct AugManifest {
  std::uint64_t master_seed = 0;
  std::vector<ManifestEntry> entries;
  friend bool operator==(const AugManifest&, const AugManifest&) = default;
};

inline Json chain_to_json(const ChainSpec& c) {
  return {{"color", spec_to_json(c.color)},
          {"quality", spec_to_json(c.quality)},
          {"filter", spec_to_json(c.filter)},
          {"hue", spec_to_json(c.hue)}};
}

inline ChainSpec chain_from_json(const Json& j) {
  ChainSpec c{spec_from_json(j.at("color")), spec_from_json(j.at("quality")),
              spec_from_json(j.at("filter")), spec_from_json(j.at("hue"))};
  validate(c);
  return c;
}

inline Json manifest_to_json(const AugManifest& m) {
  Json j;
  j["master_seed"] = m.master_seed;
  j["entries"] = Json::array();
  for (const auto& e : m.entries)
    j["entries"].push_back({{"source_image_id", e.source_image_id},
                            {"variant_index", e.variant_index},
                            {"chain", chain_to_json(e.chain)},
                            {"output_file_name", e.output_file_name}});
  return j;
}

inline AugManifest manifest_from_json(const Json& j) {
  return detail::with_json_errors([&] {
    AugManifest m;
    m.master_seed = j.at("master_seed").get<std::uint64_t>();
    for (const auto& e : j.at("entries"))
      m.entries.push_back({e.at("source_image_id").get<std::int64_t>(),
                           e.at("variant_index").get<int>(), chain_from_json(e.at("chain")),
                           e.at("output_file_name").get<std::string>()});
    return m;
  });
}

inline SamplingRanges sampling_ranges_from_json(const Json& j, SamplingRanges r = {}) {
  auto range = [&](const char* key, Range& out) {
    if (!j.contains(key)) return;
    const auto v = j.at(key).get<std::vector<double>>();
    if (v.size() != 2 || !(v[0] <= v[1]))
      throw ValidationError(std::string("sampling range '") + key + "' must be [lo, hi]");
    out = {v[0], v[1]};
  };
  return detail::with_json_errors([&] {
    range("brightness", r.brightness);
    range("color_gain", r.color_gain);
    range("saturation", r.saturation);
    range("sharpen", r.sharpen);
    range("blur_sigma", r.blur_sigma);
    range("noise_sigma", r.noise_sigma);
    range("hue_mild", r.hue_mild);
    r.shuffle_tile = j.value("shuffle_tile", r.shuffle_tile);
    if (j.contains("pixelization")) {
      const auto v = j.at("pixelization").get<std::vector<int>>();
      if (v.size() != 2 || v[0] < 1 || v[0] > v[1])
        throw ValidationError("sampling range 'pixelization' must be [lo, hi] with lo >= 1");
      r.pixelization = {v[0], v[1]};
    }
    r.hue_wide_probability = j.value("hue_wide_probability", r.hue_wide_probability);
    return r;
  });
}

// ---------------------------------------------------------------------------
// Parallel driver

namespace detail {

// Runs fn(i) for i in [0, n) on up to `workers` threads. The exception from
// the lowest failing index is rethrown, so failures are deterministic too.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto run = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int threads = std::max(1, std::min<int>(workers, static_cast<int>(n)));
  if (threads <= 1) {
    run();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(run);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline void prepare_out_dir(const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir))
    throw IoError("cannot create output directory " + out_dir.string());
}

inline std::map<std::int64_t, std::vector<const Annotation*>> annotations_by_image(
    const CocoDataset& d) {
  std::map<std::int64_t, std::vector<const Annotation*>> by_image;
  for (const auto& a : d.annotations) by_image[a.image_id].push_back(&a);
  return by_image;
}

inline std::int64_t max_annotation_id(const CocoDataset& d) {
  std::int64_t m = 0;
  for (const auto& a : d.annotations) m = std::max(m, a.id);
  return m;
}

inline void require_unique_ids(const CocoDataset& d) {
  std::set<std::int64_t> ids;
  for (const auto& im : d.images)
    if (!ids.insert(im.id).second)
      throw ValidationError("derived image id " + std::to_string(im.id) +
                            " collides with an existing image id");
}

inline void require_unique_names(const std::vector<std::string>& names) {
  std::set<std::string> seen;
  for (const auto& n : names)
    if (!seen.insert(n).second) throw ValidationError("output file name collision: " + n);
}

}  // namespace detail

inline constexpr std::int64_t kVariantIdStride = 1000;

inline std::int64_t variant_image_id(std::int64_t source_id, int variant_index) {
  return source_id * kVariantIdStride + variant_index;
}

inline std::uint64_t variant_seed(std::uint64_t master_seed, std::int64_t image_id,
                                  int variant_index) {
  return derive_seed(master_seed, {static_cast<std::uint64_t>(image_id),
                                   static_cast<std::uint64_t>(variant_index)});
}

inline std::string variant_file_name(const std::string& source_file, int variant_index) {
  return std::filesystem::path(source_file).stem().string() + "_aug" +
         std::to_string(variant_index) + ".png";
}

struct OfflineOptions {
  int workers = 1;
  SamplingRanges ranges;
};

struct OfflineResult {
  CocoDataset dataset;
  AugManifest manifest;
};

// Output holds every original followed by its variants, in input order.
// Originals are copied byte-for-byte into out_dir.
inline OfflineResult run_offline(const CocoDataset& dataset, const std::filesystem::path& image_dir,
                                 const std::filesystem::path& out_dir, int variants,
                                 std::uint64_t master_seed, const OfflineOptions& opts = {}) {
  validate_dataset(dataset);
  if (variants < 0 || variants >= kVariantIdStride)
    throw ValidationError("variants must be in [0, " + std::to_string(kVariantIdStride - 1) + "]");
  if (opts.workers < 1) throw ValidationError("workers must be >= 1");
  for (const auto& im : dataset.images)
    if (!std::filesystem::exists(image_dir / im.file_name))
      throw IoError("image file not found: " + (image_dir / im.file_name).string());
  detail::prepare_out_dir(out_dir);

  std::vector<std::string> names;
  for (const auto& im : dataset.images) {
    names.push_back(std::filesystem::path(im.file_name).lexically_normal().string());
    for (int v = 1; v <= variants; ++v) names.push_back(variant_file_name(im.file_name, v));
  }
  detail::require_unique_names(names);

  struct PerImage {
    std::vector<ManifestEntry> entries;
  };
  std::vector<PerImage> results(dataset.images.size());
  detail::parallel_for(dataset.images.size(), opts.workers, [&](std::size_t i) {
    const auto& im = dataset.images[i];
    const auto src = image_dir / im.file_name;
    const auto dst = out_dir / im.file_name;
    std::error_code ec;
    std::filesystem::create_directories(dst.parent_path(), ec);
    if (std::filesystem::weakly_canonical(src) != std::filesystem::weakly_canonical(dst)) {
      std::filesystem::copy_file(src, dst, std::filesystem::copy_options::overwrite_existing, ec);
      if (ec) throw IoError("cannot copy " + src.string() + " to " + dst.string());
    }
    if (variants == 0) return;
    const ImageBuffer source = read_image(src);
    if (source.width != im.width || source.height != im.height)
      throw ValidationError("image " + src.string() + " is " + std::to_string(source.width) + "x" +
                            std::to_string(source.height) + ", annotations say " +
                            std::to_string(im.width) + "x" + std::to_string(im.height));
    for (int v = 1; v <= variants; ++v) {
      Rng rng(variant_seed(master_seed, im.id, v));
      const ChainSpec chain = sample_chain(rng, opts.ranges);
      const ImageBuffer augmented = augment_one(source, {}, chain).first;
      const std::string name = variant_file_name(im.file_name, v);
      write_png(augmented, out_dir / name);
      results[i].entries.push_back({im.id, v, chain, name});
    }
  });

  OfflineResult out;
  out.manifest.master_seed = master_seed;
  out.dataset.categories = dataset.categories;
  out.dataset.info = dataset.info;
  out.dataset.licenses = dataset.licenses;
  const auto by_image = detail::annotations_by_image(dataset);
  std::int64_t next_ann = detail::max_annotation_id(dataset) + 1;
  for (std::size_t i = 0; i < dataset.images.size(); ++i) {
    const auto& im = dataset.images[i];
    out.dataset.images.push_back(im);
    const auto it = by_image.find(im.id);
    if (it != by_image.end())
      for (const auto* a : it->second) out.dataset.annotations.push_back(*a);
    for (const auto& e : results[i].entries) {
      ImageRecord rec = im;
      rec.id = variant_image_id(im.id, e.variant_index);
      rec.file_name = e.output_file_name;
      out.dataset.images.push_back(rec);
      if (it != by_image.end())
        for (const auto* a : it->second) {
          Annotation copy = *a;
          copy.id = next_ann++;
          copy.image_id = rec.id;
          out.dataset.annotations.push_back(std::move(copy));
        }
      out.manifest.entries.push_back(e);
    }
  }
  detail::require_unique_ids(out.dataset);
  std::sort(out.manifest.entries.begin(), out.manifest.entries.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) {
              return std::pair(a.source_image_id, a.variant_index) <
                     std::pair(b.source_image_id, b.variant_index);
            });
  return out;
}

// ---------------------------------------------------------------------------
// Online mode

struct OnlineConfig {
  bool flip = false;
  bool crop = false;
  bool jitter = false;
  bool gridmask = false;
  double flip_probability = 0.5;
  CropConfig crop_cfg;
  JitterConfig jitter_cfg;
  int grid_unit_min = 96;
  int grid_unit_max = 224;
  double grid_ratio = 0.5;
  Rgb grid_fill{0, 0, 0};
};

struct OnlineStep {
  bool flipped = false;
  bool cropped = false;
  std::uint64_t crop_seed = 0;
  bool jittered = false;
  std::uint64_t jitter_seed = 0;
  std::optional<GridMaskConfig> grid;
};

inline Json to_json(const OnlineStep& s) {
  Json j;
  j["flipped"] = s.flipped;
  if (s.cropped) j["crop_seed"] = s.crop_seed;
  if (s.jittered) j["jitter_seed"] = s.jitter_seed;
  if (s.grid) j["gridmask"] = to_json(*s.grid);
  return j;
}

// Applies the enabled online ops in order flip, crop, jitter, grid-mask.
inline std::pair<AnnotatedImage, OnlineStep> apply_online(const ImageBuffer& img,
                                                          const std::vector<Annotation>& anns,
                                                          const OnlineConfig& cfg,
                                                          std::uint64_t seed) {
  Rng rng(seed);
  OnlineStep step;
  AnnotatedImage cur{img, anns};
  const double flip_draw = rng.uniform();
  if (cfg.flip && flip_draw < cfg.flip_probability) {
    cur = hflip(cur.first, cur.second);
    step.flipped = true;
  }
  const std::uint64_t crop_seed = rng.next_u64();
  if (cfg.crop) {
    cur = random_crop(cur.first, cur.second, cfg.crop_cfg, crop_seed);
    step.cropped = true;
    step.crop_seed = crop_seed;
  }
  const std::uint64_t jitter_seed = rng.next_u64();
  if (cfg.jitter) {
    cur.second = bbox_jitter(cur.second, cfg.jitter_cfg, jitter_seed, cur.first.width,
                             cur.first.height);
    step.jittered = true;
    step.jitter_seed = jitter_seed;
  }
  GridMaskConfig grid;
  grid.unit = static_cast<int>(rng.between(cfg.grid_unit_min, cfg.grid_unit_max));
  grid.ratio = cfg.grid_ratio;
  grid.offset_x = static_cast<int>(rng.below(static_cast<std::uint64_t>(grid.unit)));
  grid.offset_y = static_cast<int>(rng.below(static_cast<std::uint64_t>(grid.unit)));
  grid.fill = cfg.grid_fill;
  if (cfg.gridmask) {
    cur.first = grid_mask(cur.first, grid);
    step.grid = grid;
  }
  return {std::move(cur), step};
}

struct OnlineResult {
  CocoDataset dataset;
  Json manifest;
};

inline std::string epoch_file_name(const std::string& source_file, int epoch) {
  return std::filesystem::path(source_file).stem().string() + "_e" + std::to_string(epoch) +
         ".png";
}

// One transformed copy of every image per epoch; epochs are 1-based.
inline OnlineResult run_online(const CocoDataset& dataset, const std::filesystem::path& image_dir,
                               const std::filesystem::path& out_dir, const OnlineConfig& cfg,
                               int epochs, std::uint64_t master_seed, int workers = 1) {
  validate_dataset(dataset);
  if (epochs < 1 || epochs >= kVariantIdStride)
    throw ValidationError("epochs must be in [1, " + std::to_string(kVariantIdStride - 1) + "]");
  if (cfg.grid_unit_min < 2 || cfg.grid_unit_min > cfg.grid_unit_max)
    throw ValidationError("grid-mask unit range must satisfy 2 <= min <= max");
  if (workers < 1) throw ValidationError("workers must be >= 1");
  for (const auto& im : dataset.images)
    if (!std::filesystem::exists(image_dir / im.file_name))
      throw IoError("image file not found: " + (image_dir / im.file_name).string());
  detail::prepare_out_dir(out_dir);

  std::vector<std::string> names;
  for (const auto& im : dataset.images)
    for (int e = 1; e <= epochs; ++e) names.push_back(epoch_file_name(im.file_name, e));
  detail::require_unique_names(names);

  const auto by_image = detail::annotations_by_image(dataset);
  struct Produced {
    ImageRecord record;
    std::vector<Annotation> anns;
    Json entry;
  };
  std::vector<std::vector<Produced>> results(dataset.images.size());
  detail::parallel_for(dataset.images.size(), workers, [&](std::size_t i) {
    const auto& im = dataset.images[i];
    const ImageBuffer source = read_image(image_dir / im.file_name);
    std::vector<Annotation> anns;
    if (auto it = by_image.find(im.id); it != by_image.end())
      for (const auto* a : it->second) anns.push_back(*a);
    for (int e = 1; e <= epochs; ++e) {
      auto [out, step] = apply_online(source, anns, cfg, variant_seed(master_seed, im.id, e));
      const std::string name = epoch_file_name(im.file_name, e);
      write_png(out.first, out_dir / name);
      ImageRecord rec{variant_image_id(im.id, e), name, out.first.width, out.first.height};
      Json entry = {{"source_image_id", im.id}, {"epoch", e}, {"output_file_name", name}};
      entry["ops"] = to_json(step);
      results[i].push_back({rec, std::move(out.second), std::move(entry)});
    }
  });

  OnlineResult res;
  res.dataset.categories = dataset.categories;
  res.dataset.info = dataset.info;
  res.dataset.licenses = dataset.licenses;
  res.manifest["master_seed"] = master_seed;
  res.manifest["entries"] = Json::array();
  std::int64_t next_ann = 1;
  for (auto& per_image : results)
    for (auto& p : per_image) {
      res.dataset.images.push_back(p.record);
      for (auto& a : p.anns) {
        a.id = next_ann++;
        a.image_id = p.record.id;
        res.dataset.annotations.push_back(std::move(a));
      }
      res.manifest["entries"].push_back(std::move(p.entry));
    }
  detail::require_unique_ids(res.dataset);
  return res;
}

}  // namespace dataeff
