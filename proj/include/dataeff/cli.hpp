#pragma once

// `dataeff` command line: augment | soft-nms | tta-fuse | evaluate |
// swa-average | inspect. Exit codes: 0 ok, 1 validation/usage, 2 I/O.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "dataeff/coco.hpp"
#include "dataeff/error.hpp"
#include "dataeff/evalap.hpp"
#include "dataeff/pipeline.hpp"
#include "dataeff/postproc.hpp"
#include "dataeff/swa.hpp"

namespace dataeff::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitIo = 2;

struct GlobalConfig {
  std::uint64_t seed = 0;
  int workers = 1;
  std::string log_level = "info";
  bool json = false;
};

namespace detail {

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  if (p.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(p.parent_path(), ec);
  }
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
  if (!out) throw IoError("cannot write " + p.string());
}

inline Json read_json(const std::filesystem::path& p) {
  const std::string text = read_text(p);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ParseError("malformed JSON in " + p.string() + ": " + e.what(), e.byte);
  }
}

inline std::shared_ptr<spdlog::logger> make_logger(const std::string& level) {
  auto logger = spdlog::get("dataeff");
  if (!logger) logger = spdlog::stderr_color_mt("dataeff");
  logger->set_pattern("[%l] %v");
  std::string effective = level;
  if (const char* env = std::getenv("DATAEFF_LOG")) effective = env;
  const auto lvl = spdlog::level::from_str(effective);
  logger->set_level(lvl == spdlog::level::off && effective != "off" ? spdlog::level::info : lvl);
  return logger;
}

inline std::string fixed3(double v) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(3) << v;
  return ss.str();
}

struct SoftNmsArgs {
  std::string method = "gaussian";
  SoftNmsConfig cfg;

  void add_to(CLI::App& app) {
    app.add_option("--method", method, "gaussian or linear")->check(CLI::IsMember({"gaussian", "linear"}));
    app.add_option("--sigma", cfg.sigma, "gaussian decay sigma");
    app.add_option("--iou-threshold", cfg.iou_threshold, "linear decay IoU threshold");
    app.add_option("--score-threshold", cfg.score_threshold, "discard below this score");
    app.add_option("--max-per-image", cfg.max_per_image, "emission cap per image");
  }
  SoftNmsConfig resolve() const {
    SoftNmsConfig c = cfg;
    c.method = method == "linear" ? SoftNmsMethod::linear : SoftNmsMethod::gaussian;
    validate(c);
    return c;
  }
};

inline std::map<std::int64_t, std::vector<Detection>> group_by_image(const DetectionFile& f) {
  std::map<std::int64_t, std::vector<Detection>> g;
  for (const auto& d : f.entries) g[d.image_id].push_back(d);
  return g;
}

// {"images": [...]} as in a COCO dataset, or {"<image_id>": [w, h]}.
inline std::map<std::int64_t, std::pair<int, int>> read_sizes(const std::filesystem::path& p) {
  const Json j = read_json(p);
  return dataeff::detail::with_json_errors([&] {
    std::map<std::int64_t, std::pair<int, int>> sizes;
    if (j.is_object() && j.contains("images")) {
      for (const auto& im : j.at("images"))
        sizes[im.at("id").get<std::int64_t>()] = {im.at("width").get<int>(), im.at("height").get<int>()};
    } else if (j.is_object()) {
      for (const auto& [key, v] : j.items()) {
        std::int64_t id = 0;
        try {
          id = std::stoll(key);
        } catch (const std::exception&) {
          throw ValidationError("size map key '" + key + "' is not an image id");
        }
        if (v.is_array())
          sizes[id] = {v.at(0).get<int>(), v.at(1).get<int>()};
        else
          sizes[id] = {v.at("width").get<int>(), v.at("height").get<int>()};
      }
    } else {
      throw ValidationError("orig-sizes file must be a JSON object");
    }
    for (const auto& [id, wh] : sizes)
      if (wh.first < 1 || wh.second < 1)
        throw ValidationError("image " + std::to_string(id) + " has non-positive size");
    return sizes;
  });
}

struct ViewArg {
  std::filesystem::path file;
  double scale = 1.0;
  bool flipped = false;
};

// "<file>:<scale>:<flip|noflip>"; the file part may itself contain ':'.
inline ViewArg parse_view_arg(const std::string& s) {
  const auto last = s.rfind(':');
  const auto mid = last == std::string::npos ? std::string::npos : s.rfind(':', last - 1);
  if (last == std::string::npos || mid == std::string::npos || last == 0)
    throw ValidationError("view must be <file>:<scale>:<flip|noflip>, got '" + s + "'");
  ViewArg v;
  v.file = s.substr(0, mid);
  const std::string scale = s.substr(mid + 1, last - mid - 1);
  const std::string flip = s.substr(last + 1);
  try {
    std::size_t used = 0;
    v.scale = std::stod(scale, &used);
    if (used != scale.size()) throw std::invalid_argument(scale);
  } catch (const std::exception&) {
    throw ValidationError("bad view scale '" + scale + "'");
  }
  if (!(v.scale > 0.0)) throw ValidationError("view scale must be > 0");
  if (flip == "flip")
    v.flipped = true;
  else if (flip != "noflip")
    throw ValidationError("view flip flag must be flip or noflip, got '" + flip + "'");
  return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------

inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  CLI::App app{"Data-efficient instance segmentation tooling", "dataeff"};
  app.set_help_all_flag("--help-all");
  app.require_subcommand(0, 1);
  app.fallthrough();

  GlobalConfig global;
  app.add_option("--seed", global.seed, "master seed for every random draw");
  app.add_option("--workers", global.workers, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--log-level", global.log_level, "trace|debug|info|warn|error|off");
  app.add_flag("--json", global.json, "machine-readable JSON report on stdout");

  // augment
  auto* augment = app.add_subcommand("augment", "offline x N augmentation, or online epochs");
  std::string aug_ann, aug_images, aug_out, aug_online, aug_config;
  int aug_variants = 10, aug_epochs = 1;
  augment->add_option("--ann", aug_ann, "COCO annotations")->required();
  augment->add_option("--images", aug_images, "source image directory")->required();
  augment->add_option("--out", aug_out, "output directory")->required();
  augment->add_option("--variants", aug_variants, "augmented variants per image");
  augment->add_option("--online", aug_online, "comma list of flip,crop,jitter,gridmask");
  augment->add_option("--epochs", aug_epochs, "online epochs to emit");
  augment->add_option("--config", aug_config, "JSON parameter overrides");

  // soft-nms
  auto* nms = app.add_subcommand("soft-nms", "soft non-maximum suppression on a results file");
  std::string nms_in, nms_out;
  detail::SoftNmsArgs nms_args;
  nms->add_option("--in", nms_in, "COCO results JSON")->required();
  nms->add_option("--out", nms_out, "output results JSON")->required();
  nms_args.add_to(*nms);

  // tta-fuse
  auto* tta = app.add_subcommand("tta-fuse", "fuse flipped / rescaled view detections");
  std::vector<std::string> tta_views;
  std::string tta_sizes, tta_out;
  detail::SoftNmsArgs tta_args;
  tta->add_option("--views", tta_views, "<file>:<scale>:<flip|noflip> ...")->required();
  tta->add_option("--orig-sizes", tta_sizes, "original image sizes JSON")->required();
  tta->add_option("--out", tta_out, "fused results JSON")->required();
  tta_args.add_to(*tta);

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "COCO AP@[0.50:0.95]");
  std::string ev_gt, ev_dets, ev_kind = "box", ev_thresholds = "0.5:0.05:0.95", ev_report;
  int ev_max_dets = 100;
  eval->add_option("--gt", ev_gt, "ground-truth COCO annotations")->required();
  eval->add_option("--dets", ev_dets, "COCO results JSON")->required();
  eval->add_option("--kind", ev_kind, "box or mask")->check(CLI::IsMember({"box", "mask"}));
  eval->add_option("--thresholds", ev_thresholds, "start:step:stop");
  eval->add_option("--max-dets", ev_max_dets, "detections per image and category");
  eval->add_option("--report", ev_report, "write the JSON report here");

  // swa-average
  auto* swa = app.add_subcommand("swa-average", "elementwise mean of checkpoints");
  std::vector<std::string> swa_inputs;
  std::string swa_out;
  swa->add_option("--inputs", swa_inputs, "checkpoint files")->required();
  swa->add_option("--out", swa_out, "averaged checkpoint")->required();

  // inspect
  auto* inspect = app.add_subcommand("inspect", "dataset statistics");
  std::string ins_ann;
  inspect->add_option("--ann", ins_ann, "COCO annotations")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitValidation;
  }
  if (app.get_subcommands().empty()) {
    err << app.help();
    return kExitValidation;
  }

  auto log = detail::make_logger(global.log_level);
  Json report;
  std::ostringstream human;

  try {
    if (augment->parsed()) {
      const CocoDataset ds = parse_dataset(detail::read_text(aug_ann));
      Json config = Json::object();
      if (!aug_config.empty()) config = detail::read_json(aug_config);
      Json written;
      if (aug_online.empty()) {
        OfflineOptions opts;
        opts.workers = global.workers;
        if (config.contains("sampling"))
          opts.ranges = sampling_ranges_from_json(config["sampling"]);
        log->info("augmenting {} images x {} variants with {} worker(s)", ds.images.size(),
                  aug_variants, global.workers);
        const auto res = run_offline(ds, aug_images, aug_out, aug_variants, global.seed, opts);
        detail::write_text(std::filesystem::path(aug_out) / "annotations.json",
                           serialize_dataset(res.dataset));
        detail::write_text(std::filesystem::path(aug_out) / "manifest.json",
                           manifest_to_json(res.manifest).dump(2));
        report = {{"mode", "offline"},
                  {"source_images", ds.images.size()},
                  {"images", res.dataset.images.size()},
                  {"annotations", res.dataset.annotations.size()},
                  {"manifest_entries", res.manifest.entries.size()}};
        human << "wrote " << res.dataset.images.size() << " images, "
              << res.dataset.annotations.size() << " annotations to " << aug_out << "\n";
      } else {
        OnlineConfig oc;
        std::stringstream ss(aug_online);
        std::string op;
        while (std::getline(ss, op, ',')) {
          if (op == "flip") oc.flip = true;
          else if (op == "crop") oc.crop = true;
          else if (op == "jitter") oc.jitter = true;
          else if (op == "gridmask") oc.gridmask = true;
          else throw ValidationError("unknown online op '" + op + "'");
        }
        dataeff::detail::with_json_errors([&] {
          if (config.contains("crop")) oc.crop_cfg = crop_config_from_json(config["crop"]);
          if (config.contains("jitter")) oc.jitter_cfg = jitter_config_from_json(config["jitter"]);
          if (config.contains("flip_probability"))
            oc.flip_probability = config["flip_probability"].get<double>();
          if (config.contains("gridmask")) {
            const auto& g = config["gridmask"];
            oc.grid_unit_min = g.value("unit_min", oc.grid_unit_min);
            oc.grid_unit_max = g.value("unit_max", oc.grid_unit_max);
            oc.grid_ratio = g.value("ratio", oc.grid_ratio);
            if (g.contains("fill")) oc.grid_fill = g["fill"].get<Rgb>();
          }
          return 0;
        });
        log->info("online augmentation of {} images for {} epoch(s)", ds.images.size(), aug_epochs);
        const auto res =
            run_online(ds, aug_images, aug_out, oc, aug_epochs, global.seed, global.workers);
        detail::write_text(std::filesystem::path(aug_out) / "annotations.json",
                           serialize_dataset(res.dataset));
        detail::write_text(std::filesystem::path(aug_out) / "manifest.json", res.manifest.dump(2));
        report = {{"mode", "online"},
                  {"images", res.dataset.images.size()},
                  {"annotations", res.dataset.annotations.size()}};
        human << "wrote " << res.dataset.images.size() << " images, "
              << res.dataset.annotations.size() << " annotations to " << aug_out << "\n";
      }
    } else if (nms->parsed()) {
      const auto cfg = nms_args.resolve();
      const DetectionFile in = parse_detections(detail::read_text(nms_in));
      DetectionFile result;
      for (const auto& [img, dets] : detail::group_by_image(in)) {
        auto kept = soft_nms(dets, cfg);
        result.entries.insert(result.entries.end(), kept.begin(), kept.end());
      }
      detail::write_text(nms_out, serialize_detections(result));
      report = {{"input", in.entries.size()}, {"output", result.entries.size()}};
      human << "soft-nms: " << in.entries.size() << " -> " << result.entries.size()
            << " detections\n";
    } else if (tta->parsed()) {
      const auto cfg = tta_args.resolve();
      const auto sizes = detail::read_sizes(tta_sizes);
      std::vector<std::pair<detail::ViewArg, std::map<std::int64_t, std::vector<Detection>>>> views;
      for (const auto& v : tta_views) {
        auto arg = detail::parse_view_arg(v);
        auto grouped = detail::group_by_image(parse_detections(detail::read_text(arg.file)));
        for (const auto& [img, dets] : grouped)
          if (!sizes.count(img))
            throw ValidationError("image " + std::to_string(img) + " in " + arg.file.string() +
                                  " has no entry in " + tta_sizes);
        views.emplace_back(std::move(arg), std::move(grouped));
      }
      DetectionFile result;
      for (const auto& [img, wh] : sizes) {
        std::vector<ViewDetections> per_view;
        for (const auto& [arg, grouped] : views) {
          const auto it = grouped.find(img);
          per_view.emplace_back(make_view(arg.scale, arg.flipped, wh.first, wh.second),
                                it == grouped.end() ? std::vector<Detection>{} : it->second);
        }
        auto fused = fuse_tta(per_view, cfg, wh.first, wh.second);
        result.entries.insert(result.entries.end(), fused.begin(), fused.end());
      }
      detail::write_text(tta_out, serialize_detections(result));
      report = {{"views", views.size()}, {"output", result.entries.size()}};
      human << "tta-fuse: " << views.size() << " views -> " << result.entries.size()
            << " detections\n";
    } else if (eval->parsed()) {
      const CocoDataset gt = parse_dataset(detail::read_text(ev_gt));
      const DetectionFile dets = parse_detections(detail::read_text(ev_dets));
      EvalConfig cfg;
      cfg.iou_thresholds = parse_thresholds(ev_thresholds);
      cfg.iou_kind = ev_kind == "mask" ? IouKind::mask : IouKind::box;
      cfg.max_dets = ev_max_dets;
      const EvalResult res = evaluate(gt, dets, cfg);
      report = to_json(res, cfg.iou_kind);
      if (!ev_report.empty()) detail::write_text(ev_report, report.dump(2));
      human << "IoU    AP\n";
      for (const auto& [t, ap] : res.ap_per_threshold)
        human << std::fixed << std::setprecision(2) << t << "   " << detail::fixed3(ap) << "\n";
      human << "mean AP " << detail::fixed3(res.mean_ap) << "\n";
    } else if (swa->parsed()) {
      std::vector<Checkpoint> cks;
      for (const auto& p : swa_inputs) cks.push_back(load_checkpoint(p));
      const Checkpoint avg = average_checkpoints(cks);
      save_checkpoint(avg, swa_out);
      report = {{"inputs", cks.size()}, {"tensors", avg.tensors.size()}};
      human << "averaged " << cks.size() << " checkpoints (" << avg.tensors.size()
            << " tensors) into " << swa_out << "\n";
    } else if (inspect->parsed()) {
      const CocoDataset ds = parse_dataset(detail::read_text(ins_ann));
      std::map<std::int64_t, std::size_t> hist;
      for (const auto& c : ds.categories) hist[c.id] = 0;
      for (const auto& a : ds.annotations) ++hist[a.category_id];
      report = {{"images", ds.images.size()},
                {"annotations", ds.annotations.size()},
                {"categories", ds.categories.size()}};
      report["instances_per_category"] = Json::array();
      human << "images:      " << ds.images.size() << "\n"
            << "annotations: " << ds.annotations.size() << "\n"
            << "categories:  " << ds.categories.size() << "\n";
      for (const auto& c : ds.categories) {
        report["instances_per_category"].push_back(
            {{"category_id", c.id}, {"name", c.name}, {"instances", hist[c.id]}});
        human << "  " << std::setw(6) << c.id << "  " << std::setw(8) << hist[c.id] << "  "
              << c.name << "\n";
      }
    }
  } catch (const IoError& e) {
    log->error("{}", e.what());
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    log->error("{}", e.what());
    return kExitIo;
  } catch (const ValidationError& e) {
    log->error("{}", e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    log->error("{}", e.what());
    return kExitValidation;
  }

  if (global.json)
    out << report.dump(2) << "\n";
  else
    out << human.str();
  return kExitOk;
}

}  // namespace dataeff::cli
