#include <random>
#include <string>

#include <gtest/gtest.h>

#include "dataeff/coco.hpp"
#include "oracles.hpp"

using namespace dataeff;

namespace {

BinaryMask mask_from_rows(std::initializer_list<std::initializer_list<int>> rows) {
  const int h = static_cast<int>(rows.size());
  const int w = static_cast<int>(rows.begin()->size());
  BinaryMask m(w, h);
  int y = 0;
  for (const auto& row : rows) {
    int x = 0;
    for (int v : row) m.set(x++, y, v != 0);
    ++y;
  }
  return m;
}

CocoDataset random_dataset(std::mt19937_64& rng) {
  CocoDataset d;
  std::uniform_int_distribution<int> n_img(1, 4), n_ann(0, 6), dim(4, 24), kind(0, 2);
  d.categories = {{1, "player", "person"}, {2, "ball", ""}};
  const int ni = n_img(rng);
  for (int i = 0; i < ni; ++i) d.images.push_back({10 + i * 7, "img_" + std::to_string(i) + ".jpg", dim(rng), dim(rng)});
  const int na = n_ann(rng);
  for (int k = 0; k < na; ++k) {
    const auto& im = d.images[std::uniform_int_distribution<int>(0, ni - 1)(rng)];
    Annotation a;
    a.id = 100 + k;
    a.image_id = im.id;
    a.category_id = 1 + k % 2;
    a.iscrowd = k % 5 == 4;
    switch (kind(rng)) {
      case 0: a.segmentation.rle = rle_encode(oracle::random_mask(im.width, im.height, 0.3, rng)); break;
      case 1: a.segmentation.polygons = {oracle::random_polygon(im.width, im.height, rng)}; break;
      default: a.area = 12.5; break;
    }
    a.bbox = {1.25, 2.0, 3.5, 1.0};
    d.annotations.push_back(a);
  }
  d.info = Json{{"description", "fixture"}};
  return d;
}

}  // namespace

TEST(Rle, AllBackgroundIsSingleRun) {
  const Rle r = rle_encode(BinaryMask(2, 2));
  EXPECT_EQ(r.counts, (std::vector<std::uint32_t>{4}));
}

TEST(Rle, DiagonalMaskWorkedExample) {
  const BinaryMask m = mask_from_rows({{1, 0}, {0, 1}});
  const Rle r = rle_encode(m);
  EXPECT_EQ(r.counts, (std::vector<std::uint32_t>{0, 1, 2, 1}));
  EXPECT_EQ(r.height, 2);
  EXPECT_EQ(r.width, 2);
  EXPECT_EQ(rle_decode(r), m);
}

TEST(Rle, DecodeExamples) {
  EXPECT_EQ(rle_decode({2, 2, {4}}), BinaryMask(2, 2));
  EXPECT_EQ(rle_decode({2, 2, {0, 4}}), mask_from_rows({{1, 1}, {1, 1}}));
}

TEST(Rle, DecodeRejectsCountMismatch) {
  EXPECT_THROW(rle_decode({2, 2, {1, 2}}), ValidationError);
}

TEST(Rle, ColumnMajorOrderOnNonSquareMask) {
  // 2 rows x 3 cols, foreground in the top row only: column sequence 1,0,1,0,1,0.
  const BinaryMask m = mask_from_rows({{1, 1, 1}, {0, 0, 0}});
  EXPECT_EQ(rle_encode(m).counts, oracle::runs_of(m));
  EXPECT_EQ(rle_encode(m).counts, (std::vector<std::uint32_t>{0, 1, 1, 1, 1, 1, 1}));
}

TEST(Rle, RoundTripAndRunInvariantsOnRandomMasks) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    const int w = std::uniform_int_distribution<int>(0, 40)(rng);
    const int h = std::uniform_int_distribution<int>(0, 40)(rng);
    const double density = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const BinaryMask m = oracle::random_mask(w, h, density, rng);
    const Rle r = rle_encode(m);
    ASSERT_EQ(r.counts, oracle::runs_of(m));
    std::uint64_t sum = 0;
    for (std::size_t i = 0; i < r.counts.size(); ++i) {
      sum += r.counts[i];
      if (i > 0) {
        ASSERT_GE(r.counts[i], 1u);
      }
    }
    ASSERT_EQ(sum, std::uint64_t(w) * h);
    ASSERT_EQ(rle_decode(r), m);
    ASSERT_EQ(r.area(), oracle::pixel_count(m));
  }
}

TEST(Rle, CompressedStringRoundTrip) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const BinaryMask m = oracle::random_mask(37, 23, 0.5, rng);
    const Rle r = rle_encode(m);
    EXPECT_EQ(rle_counts_from_string(rle_to_string(r)), r.counts);
  }
  // Large counts and negative deltas.
  const Rle big{1000, 1000, {5, 999000, 3, 990, 2}};
  EXPECT_EQ(rle_counts_from_string(rle_to_string(big)), big.counts);
}

TEST(Rle, CompressedStringKnownEncoding) {
  // Counts below 16 need one character each: value + 48. Index 3 is a delta.
  const Rle r{2, 2, {0, 1, 2, 1}};
  // 0 -> '0', 1 -> '1', 2 -> '2', 1-1=0 -> '0'
  EXPECT_EQ(rle_to_string(r), "0120");
  // 40 = 0b101000: low group 01000 (8) with continuation -> 8+32+48 = 'X',
  // then 1 -> '1'.
  EXPECT_EQ(rle_to_string(Rle{40, 1, {40}}), "X1");
  EXPECT_THROW(rle_counts_from_string("X"), ParseError);
}

TEST(Polygon, SquareInFourByFourGrid) {
  const BinaryMask m = polygons_to_mask({{{0, 0}, {2, 0}, {2, 2}, {0, 2}}}, 4, 4);
  EXPECT_EQ(m, mask_from_rows({{1, 1, 0, 0}, {1, 1, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 0}}));
}

TEST(Polygon, DegenerateTriangleIsEmpty) {
  const BinaryMask m = polygons_to_mask({{{0, 0}, {2, 2}, {4, 4}}}, 6, 6);
  EXPECT_EQ(m.count(), 0u);
}

TEST(Polygon, DisjointSquaresUnion) {
  const Polygon a{{0, 0}, {3, 0}, {3, 3}, {0, 3}};
  const Polygon b{{5, 4}, {8, 4}, {8, 7}, {5, 7}};
  const BinaryMask both = polygons_to_mask({a, b}, 8, 9);
  const BinaryMask ma = polygons_to_mask({a}, 8, 9);
  const BinaryMask mb = polygons_to_mask({b}, 8, 9);
  for (std::size_t i = 0; i < both.bits.size(); ++i)
    EXPECT_EQ(both.bits[i], ma.bits[i] | mb.bits[i]);
}

TEST(Polygon, CentersOnEdgesAreOutside) {
  // Edges run through pixel centers at x = 1.5 and y = 1.5.
  const BinaryMask m = polygons_to_mask({{{1.5, 1.5}, {3.5, 1.5}, {3.5, 3.5}, {1.5, 3.5}}}, 5, 5);
  EXPECT_EQ(m, oracle::rasterize({{{1.5, 1.5}, {3.5, 1.5}, {3.5, 3.5}, {1.5, 3.5}}}, 5, 5));
  EXPECT_EQ(m.count(), 1u);
  EXPECT_TRUE(m.at(2, 2));
}

TEST(Polygon, RejectsTooFewVertices) {
  EXPECT_THROW(polygons_to_mask({{{0, 0}, {1, 1}}}, 4, 4), ValidationError);
}

TEST(Polygon, MatchesBruteForceOnRandomPolygons) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 400; ++trial) {
    const int w = std::uniform_int_distribution<int>(1, 32)(rng);
    const int h = std::uniform_int_distribution<int>(1, 32)(rng);
    std::vector<Polygon> polys{oracle::random_polygon(w, h, rng)};
    if (trial % 3 == 0) polys.push_back(oracle::random_polygon(w, h, rng));
    // Half the trials snap vertices to the half-pixel lattice so edges pass
    // exactly through pixel centers.
    if (trial % 2 == 0)
      for (auto& p : polys)
        for (auto& v : p) {
          v.x = std::round(v.x * 2) / 2;
          v.y = std::round(v.y * 2) / 2;
        }
    ASSERT_EQ(polygons_to_mask(polys, h, w), oracle::rasterize(polys, h, w)) << "trial " << trial;
  }
}

TEST(BBoxFromMask, Examples) {
  EXPECT_EQ(bbox_from_mask(BinaryMask(4, 4)), (BBox{0, 0, 0, 0}));
  BinaryMask one(8, 6);
  one.set(5, 3);
  EXPECT_EQ(bbox_from_mask(one), (BBox{5, 3, 1, 1}));
  BinaryMask full(4, 4);
  std::fill(full.bits.begin(), full.bits.end(), 1);
  EXPECT_EQ(bbox_from_mask(full), (BBox{0, 0, 4, 4}));
}

TEST(BBoxFromMask, MatchesScanOracle) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const BinaryMask m = oracle::random_blob(20, 15, rng);
    EXPECT_EQ(bbox_from_mask(m), oracle::scan_bbox(m));
  }
}

TEST(Dataset, MinimalParse) {
  const auto d = parse_dataset(
      R"({"images":[{"id":1,"file_name":"a.png","width":4,"height":3}],"annotations":[],)"
      R"("categories":[{"id":1,"name":"ball"}]})");
  EXPECT_EQ(d.images.size(), 1u);
  EXPECT_EQ(d.annotations.size(), 0u);
  EXPECT_EQ(d.categories.size(), 1u);
}

TEST(Dataset, DanglingImageReferenceNamesId) {
  try {
    parse_dataset(
        R"({"images":[{"id":1,"file_name":"a.png","width":4,"height":3}],)"
        R"("annotations":[{"id":5,"image_id":99,"category_id":1,"bbox":[0,0,1,1]}],)"
        R"("categories":[{"id":1,"name":"ball"}]})");
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("99"), std::string::npos);
  }
}

TEST(Dataset, DuplicateIdsRejected) {
  EXPECT_THROW(parse_dataset(R"({"images":[{"id":1,"file_name":"a","width":1,"height":1},)"
                             R"({"id":1,"file_name":"b","width":1,"height":1}]})"),
               ValidationError);
  EXPECT_THROW(parse_dataset(R"({"images":[{"id":1,"file_name":"a","width":4,"height":4}],)"
                             R"("categories":[{"id":1}],"annotations":[)"
                             R"({"id":2,"image_id":1,"category_id":1,"bbox":[0,0,1,1]},)"
                             R"({"id":2,"image_id":1,"category_id":1,"bbox":[0,0,1,1]}]})"),
               ValidationError);
}

TEST(Dataset, MalformedJsonReportsOffset) {
  try {
    parse_dataset(R"({"images": [1, 2,)");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_GT(e.byte_offset(), 0u);
  }
}

TEST(Dataset, AreaRecomputedFromSegmentation) {
  const auto d = parse_dataset(
      R"({"images":[{"id":1,"file_name":"a.png","width":4,"height":4}],)"
      R"("annotations":[{"id":1,"image_id":1,"category_id":1,"bbox":[0,0,2,2],)"
      R"("segmentation":[[0,0,2,0,2,2,0,2]],"area":999}],"categories":[{"id":1}]})");
  EXPECT_EQ(d.annotations[0].area, 4.0);
}

TEST(Dataset, EmptySerializesThreeArrays) {
  const Json j = Json::parse(serialize_dataset(CocoDataset{}));
  EXPECT_TRUE(j["images"].is_array() && j["images"].empty());
  EXPECT_TRUE(j["annotations"].is_array() && j["annotations"].empty());
  EXPECT_TRUE(j["categories"].is_array() && j["categories"].empty());
}

TEST(Dataset, SerializedImageHasFileName) {
  CocoDataset d;
  d.images.push_back({1, "x.png", 2, 2});
  EXPECT_NE(serialize_dataset(d).find("\"file_name\""), std::string::npos);
}

TEST(Dataset, RoundTripOnRandomDatasets) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const CocoDataset src = random_dataset(rng);
    const CocoDataset once = parse_dataset(serialize_dataset(src));
    const CocoDataset twice = parse_dataset(serialize_dataset(once));
    ASSERT_EQ(once, twice);
    ASSERT_EQ(once.images, src.images);
    ASSERT_EQ(once.annotations.size(), src.annotations.size());
    for (std::size_t i = 0; i < src.annotations.size(); ++i)
      ASSERT_EQ(once.annotations[i].segmentation, src.annotations[i].segmentation);
  }
}

TEST(Dataset, CompressedRleSegmentationAccepted) {
  const auto d = parse_dataset(
      R"({"images":[{"id":1,"file_name":"a.png","width":2,"height":2}],)"
      R"("annotations":[{"id":1,"image_id":1,"category_id":1,"bbox":[0,0,2,2],)"
      R"("segmentation":{"size":[2,2],"counts":"0120"}}],"categories":[{"id":1}]})");
  EXPECT_EQ(d.annotations[0].segmentation.rle->counts, (std::vector<std::uint32_t>{0, 1, 2, 1}));
  EXPECT_EQ(d.annotations[0].area, 2.0);
}

TEST(Detections, RoundTripWithCompressedMasks) {
  DetectionFile f;
  f.entries.push_back({1, 2, {1, 2, 3, 4}, 0.75, Rle{2, 2, {0, 1, 2, 1}}});
  f.entries.push_back({1, 1, {0, 0, 1, 1}, 0.5, std::nullopt});
  const std::string text = serialize_detections(f);
  EXPECT_NE(text.find("\"0120\""), std::string::npos);
  EXPECT_EQ(parse_detections(text), f);
}

TEST(Detections, ScoreOutOfRangeRejected) {
  EXPECT_THROW(parse_detections(R"([{"image_id":1,"category_id":1,"bbox":[0,0,1,1],"score":1.5}])"),
               ValidationError);
}
