#include <cmath>
#include <map>
#include <random>
#include <thread>

#include <gtest/gtest.h>

#include "dataeff/imgproc.hpp"
#include "oracles.hpp"

using namespace dataeff;

namespace {

ImageBuffer uniform(int w, int h, std::uint8_t v) { return ImageBuffer(w, h, {v, v, v}); }

std::vector<PixelTransformSpec> identity_specs() {
  return {Brightness{1.0}, ColorJitter{{1.0, 1.0, 1.0}}, Saturation{1.0}, Sharpen{0.0},
          Blur{0.0},       Noise{0.0, 42},               Pixelization{1}, Hue{0.0}};
}

std::vector<PixelTransformSpec> assorted_specs() {
  return {Brightness{1.37},        ColorJitter{{0.8, 1.1, 1.2}}, Saturation{0.0},
          Saturation{1.5},         Sharpen{1.7},                 Blur{1.2},
          Noise{12.0, 5},          ShufflePixels{4, 9},          Pixelization{3},
          Filter{FilterKind::detail}, Filter{FilterKind::edge_enhance}, Filter{FilterKind::smooth},
          Filter{FilterKind::median}, Filter{FilterKind::mode},        Hue{-25.0},
          Hue{200.0}};
}

}  // namespace

TEST(PixelTransform, IdentityParametersAreBitExactNoOps) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const ImageBuffer img = oracle::random_image(17, 11, rng);
    for (const auto& spec : identity_specs())
      EXPECT_EQ(apply_pixel_transform(img, spec), img) << spec_kind(spec);
  }
}

TEST(PixelTransform, BrightnessScalesUniformGray) {
  EXPECT_EQ(apply_pixel_transform(uniform(5, 5, 100), Brightness{1.5}), uniform(5, 5, 150));
  EXPECT_EQ(apply_pixel_transform(uniform(5, 5, 200), Brightness{1.5}), uniform(5, 5, 255));
}

TEST(PixelTransform, DimensionsPreservedAndOutputsInRange) {
  std::mt19937_64 rng(2);
  std::vector<ImageBuffer> inputs{oracle::random_image(13, 7, rng), uniform(6, 9, 0),
                                  uniform(6, 9, 255), ImageBuffer(1, 1, {255, 0, 255})};
  for (const auto& img : inputs)
    for (const auto& spec : assorted_specs()) {
      const ImageBuffer out = apply_pixel_transform(img, spec);
      EXPECT_EQ(out.width, img.width);
      EXPECT_EQ(out.height, img.height);
      EXPECT_TRUE(out.valid());
    }
}

TEST(PixelTransform, ExtremeGainsClamp) {
  EXPECT_EQ(apply_pixel_transform(uniform(3, 3, 250), Brightness{4.0}), uniform(3, 3, 255));
  EXPECT_EQ(apply_pixel_transform(uniform(3, 3, 10), Sharpen{2.0}), uniform(3, 3, 10));
  std::mt19937_64 rng(3);
  const ImageBuffer img = oracle::random_image(16, 16, rng);
  const ImageBuffer noisy = apply_pixel_transform(img, Noise{400.0, 1});
  EXPECT_TRUE(noisy.valid());
}

TEST(PixelTransform, OutOfBoundsParametersRejected) {
  const ImageBuffer img = uniform(2, 2, 9);
  EXPECT_THROW(apply_pixel_transform(img, Brightness{0.0}), ValidationError);
  EXPECT_THROW(apply_pixel_transform(img, ColorJitter{{1.0, -1.0, 1.0}}), ValidationError);
  EXPECT_THROW(apply_pixel_transform(img, Saturation{-0.1}), ValidationError);
  EXPECT_THROW(apply_pixel_transform(img, Sharpen{-1.0}), ValidationError);
  EXPECT_THROW(apply_pixel_transform(img, Blur{-1.0}), ValidationError);
  EXPECT_THROW(apply_noise(img, -1.0, 0), ValidationError);
  EXPECT_THROW(apply_pixel_transform(img, ShufflePixels{1, 0}), ValidationError);
  EXPECT_THROW(apply_pixelization(img, 0), ValidationError);
}

TEST(PixelTransform, DeterministicAcrossThreads) {
  std::mt19937_64 rng(4);
  const ImageBuffer img = oracle::random_image(40, 30, rng);
  const auto specs = assorted_specs();
  std::vector<ImageBuffer> serial;
  for (const auto& s : specs) serial.push_back(apply_pixel_transform(img, s));
  std::vector<ImageBuffer> threaded(specs.size());
  {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < specs.size(); ++i)
      pool.emplace_back([&, i] { threaded[i] = apply_pixel_transform(img, specs[i]); });
  }
  EXPECT_EQ(serial, threaded);
}

TEST(PixelTransform, SpecJsonRoundTrip) {
  for (const auto& spec : assorted_specs()) EXPECT_EQ(spec_from_json(spec_to_json(spec)), spec);
  EXPECT_THROW(spec_from_json(nlohmann::ordered_json{{"kind", "warp"}}), ValidationError);
  EXPECT_THROW(spec_from_json(nlohmann::ordered_json{{"kind", "blur"}, {"sigma", -2.0}}),
               ValidationError);
}

TEST(Saturation, ZeroFactorGivesLumaGray) {
  std::mt19937_64 rng(5);
  const ImageBuffer img = oracle::random_image(9, 9, rng);
  const ImageBuffer out = apply_saturation(img, 0.0);
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 9; ++x) {
      const double l = 0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) + 0.114 * img.at(x, y, 2);
      for (int c = 0; c < 3; ++c) EXPECT_EQ(out.at(x, y, c), oracle::round_clamp(l));
    }
}

TEST(Hue, ZeroDeltaIsIdentityAndFullTurnNearIdentity) {
  std::mt19937_64 rng(6);
  const ImageBuffer img = oracle::random_image(64, 64, rng);
  EXPECT_EQ(apply_hue(img, 0.0), img);
  const ImageBuffer turned = apply_hue(img, 360.0);
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    EXPECT_LE(std::abs(int(turned.pixels[i]) - int(img.pixels[i])), 1);
}

TEST(Hue, RedRotatesToGreen) {
  const ImageBuffer red(1, 1, {255, 0, 0});
  EXPECT_EQ(apply_hue(red, 120.0), ImageBuffer(1, 1, {0, 255, 0}));
  EXPECT_EQ(apply_hue(red, 240.0), ImageBuffer(1, 1, {0, 0, 255}));
  EXPECT_EQ(apply_hue(red, -120.0), ImageBuffer(1, 1, {0, 0, 255}));
}

TEST(Hue, GrayIsFixedForAnyDelta) {
  for (double delta : {-300.0, -17.5, 45.0, 181.0, 359.0})
    for (std::uint8_t v : {0, 1, 127, 254, 255})
      EXPECT_EQ(apply_hue(uniform(2, 2, v), delta), uniform(2, 2, v));
}

TEST(Noise, SigmaZeroIdentityAndSeedDeterminism) {
  std::mt19937_64 rng(7);
  const ImageBuffer img = oracle::random_image(20, 20, rng);
  EXPECT_EQ(apply_noise(img, 0.0, 99), img);
  EXPECT_EQ(apply_noise(img, 8.0, 99), apply_noise(img, 8.0, 99));
  EXPECT_NE(apply_noise(img, 8.0, 99), apply_noise(img, 8.0, 100));
}

TEST(Noise, EmpiricalSigmaMatches) {
  const ImageBuffer gray = uniform(600, 600, 128);  // 1.08e6 samples
  const ImageBuffer out = apply_noise(gray, 10.0, 2024);
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0, sq = 0.0;
    const double n = 600.0 * 600.0;
    for (int y = 0; y < 600; ++y)
      for (int x = 0; x < 600; ++x) {
        const double d = out.at(x, y, c) - 128.0;
        sum += d;
        sq += d * d;
      }
    const double mean = sum / n;
    const double sd = std::sqrt(sq / n - mean * mean);
    EXPECT_NEAR(sd, 10.0, 0.5) << "channel " << c;
    EXPECT_NEAR(mean, 0.0, 0.1) << "channel " << c;
  }
}

TEST(ShufflePixels, PermutesWithinTiles) {
  std::mt19937_64 rng(8);
  const ImageBuffer img = oracle::random_image(10, 7, rng);
  const ImageBuffer out = apply_shuffle_pixels(img, 4, 77);
  EXPECT_NE(out, img);
  for (int ty = 0; ty < 7; ty += 4)
    for (int tx = 0; tx < 10; tx += 4) {
      std::multiset<std::array<int, 3>> a, b;
      for (int y = ty; y < std::min(ty + 4, 7); ++y)
        for (int x = tx; x < std::min(tx + 4, 10); ++x) {
          a.insert({img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2)});
          b.insert({out.at(x, y, 0), out.at(x, y, 1), out.at(x, y, 2)});
        }
      EXPECT_EQ(a, b);
    }
}

TEST(Pixelization, BlockMeansOnFourByFour) {
  std::mt19937_64 rng(9);
  const ImageBuffer img = oracle::random_image(4, 4, rng);
  const ImageBuffer out = apply_pixelization(img, 2);
  for (int by = 0; by < 4; by += 2)
    for (int bx = 0; bx < 4; bx += 2)
      for (int c = 0; c < 3; ++c) {
        int sum = 0;
        for (int y = by; y < by + 2; ++y)
          for (int x = bx; x < bx + 2; ++x) sum += img.at(x, y, c);
        const std::uint8_t expect = oracle::round_clamp(sum / 4.0);
        for (int y = by; y < by + 2; ++y)
          for (int x = bx; x < bx + 2; ++x) EXPECT_EQ(out.at(x, y, c), expect);
      }
}

TEST(Pixelization, OversizedFactorGivesOneColor) {
  std::mt19937_64 rng(10);
  const ImageBuffer img = oracle::random_image(5, 3, rng);
  const ImageBuffer out = apply_pixelization(img, 8);
  for (int c = 0; c < 3; ++c) {
    int sum = 0;
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 5; ++x) sum += img.at(x, y, c);
    const std::uint8_t expect = oracle::round_clamp(sum / 15.0);
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 5; ++x) EXPECT_EQ(out.at(x, y, c), expect);
  }
}

TEST(Filter, SmoothFixesUniformImage) {
  EXPECT_EQ(apply_filter(uniform(6, 6, 77), FilterKind::smooth), uniform(6, 6, 77));
}

TEST(Filter, MedianRemovesSaltPixel) {
  ImageBuffer img = uniform(7, 7, 40);
  for (int c = 0; c < 3; ++c) img.at(3, 3, c) = 255;
  EXPECT_EQ(apply_filter(img, FilterKind::median), uniform(7, 7, 40));
}

TEST(Filter, ModeBreaksTiesTowardSmallestValue) {
  // 3x3 image whose center window holds values 1..9 once each.
  ImageBuffer img(3, 3);
  for (int y = 0, k = 9; y < 3; ++y)
    for (int x = 0; x < 3; ++x, --k)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<std::uint8_t>(k);
  const ImageBuffer out = apply_filter(img, FilterKind::mode);
  EXPECT_EQ(out.at(1, 1, 0), 1);
  // Corner (0,0) window under edge replication: 9 x4, 8 x2, 6 x2, 5 x1.
  EXPECT_EQ(out.at(0, 0, 0), 9);
}

TEST(Filter, ConvolutionsMatchNaiveOracle) {
  static const int smooth[3][3] = {{1, 1, 1}, {1, 5, 1}, {1, 1, 1}};
  static const int detail[3][3] = {{0, -1, 0}, {-1, 10, -1}, {0, -1, 0}};
  static const int edge[3][3] = {{-1, -1, -1}, {-1, 10, -1}, {-1, -1, -1}};
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 25; ++trial) {
    const ImageBuffer img = oracle::random_image(8, 8, rng);
    EXPECT_EQ(apply_filter(img, FilterKind::smooth), oracle::convolve3x3(img, smooth, 13.0));
    EXPECT_EQ(apply_filter(img, FilterKind::detail), oracle::convolve3x3(img, detail, 6.0));
    EXPECT_EQ(apply_filter(img, FilterKind::edge_enhance), oracle::convolve3x3(img, edge, 2.0));
  }
}

TEST(Filter, MedianMatchesSortOracle) {
  std::mt19937_64 rng(12);
  const ImageBuffer img = oracle::random_image(9, 6, rng);
  const ImageBuffer out = apply_filter(img, FilterKind::median);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 9; ++x)
      for (int c = 0; c < 3; ++c) {
        std::vector<int> w;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx)
            w.push_back(img.at(std::clamp(x + dx, 0, 8), std::clamp(y + dy, 0, 5), c));
        std::sort(w.begin(), w.end());
        EXPECT_EQ(out.at(x, y, c), w[4]);
      }
}

TEST(Blur, UniformImageUnchanged) {
  EXPECT_EQ(apply_blur(uniform(10, 10, 90), 1.3), uniform(10, 10, 90));
}

TEST(Blur, ReducesVarianceOfNoise) {
  std::mt19937_64 rng(13);
  const ImageBuffer img = oracle::random_image(32, 32, rng);
  const ImageBuffer out = apply_blur(img, 1.5);
  auto variance = [](const ImageBuffer& im) {
    double s = 0, q = 0;
    for (auto p : im.pixels) {
      s += p;
      q += double(p) * p;
    }
    const double n = im.pixels.size();
    return q / n - (s / n) * (s / n);
  };
  EXPECT_LT(variance(out), variance(img) / 4);
}
