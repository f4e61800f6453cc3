#pragma once

// Synthetic datasets written to scratch directories.

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <unistd.h>

#include "dataeff/coco.hpp"
#include "dataeff/image.hpp"
#include "oracles.hpp"

namespace fixture {

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("dataeff_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// n images of w x h with two annotations each, PNGs written into image_dir.
inline dataeff::CocoDataset make_dataset(int n, const std::filesystem::path& image_dir,
                                         int w = 12, int h = 10, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  dataeff::CocoDataset d;
  d.categories = {{1, "vehicle", "thing"}, {2, "person", "thing"}};
  std::int64_t ann_id = 1;
  for (int i = 0; i < n; ++i) {
    const std::int64_t id = i + 1;
    const std::string name = "img_" + std::to_string(id) + ".png";
    dataeff::write_png(oracle::random_image(w, h, rng), image_dir / name);
    d.images.push_back({id, name, w, h});
    dataeff::Annotation a;
    a.id = ann_id++;
    a.image_id = id;
    a.category_id = 1;
    a.bbox = {1, 1, 4, 3};
    a.segmentation.polygons = {{{1, 1}, {5, 1}, {5, 4}, {1, 4}}};
    a.area = 12;
    d.annotations.push_back(a);
    dataeff::Annotation b;
    b.id = ann_id++;
    b.image_id = id;
    b.category_id = 2;
    b.bbox = {6, 2, 3, 5};
    b.area = 15;
    d.annotations.push_back(b);
  }
  return d;
}

inline std::map<std::string, std::string> directory_bytes(const std::filesystem::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
    if (e.is_regular_file())
      out[std::filesystem::relative(e.path(), dir).string()] = read_text(e.path());
  return out;
}

}  // namespace fixture
