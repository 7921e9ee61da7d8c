#include <gtest/gtest.h>

#include <cmath>

#include "gen.hpp"
#include "tscn/augment.hpp"

using namespace tscn;

namespace {

ImageU8 random_image(gen::Source& g, std::size_t h, std::size_t w) {
  ImageU8 img(h, w);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(g.index(256));
  return img;
}

ImageU8 checkerboard2x2() {
  ImageU8 img(2, 2);
  for (std::size_t c = 0; c < 3; ++c) {
    img.at(c, 0, 1) = 255;
    img.at(c, 1, 0) = 255;
  }
  return img;
}

bool is_gray(const ImageU8& img) {
  const std::size_t hw = img.height * img.width;
  for (std::size_t i = 0; i < hw; ++i)
    if (img.pixels[i] != img.pixels[hw + i] || img.pixels[i] != img.pixels[2 * hw + i]) return false;
  return true;
}

// Oracle: bilinear sample with pixel-centre alignment, border clamp.
double bilinear_oracle(const ImageU8& img, std::size_t c, double sy, double sx) {
  sy = std::clamp(sy, 0.0, static_cast<double>(img.height - 1));
  sx = std::clamp(sx, 0.0, static_cast<double>(img.width - 1));
  const auto y0 = static_cast<std::size_t>(sy), x0 = static_cast<std::size_t>(sx);
  const std::size_t y1 = std::min(y0 + 1, img.height - 1), x1 = std::min(x0 + 1, img.width - 1);
  const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
  return (1 - fy) * ((1 - fx) * img.at(c, y0, x0) + fx * img.at(c, y0, x1)) +
         fy * ((1 - fx) * img.at(c, y1, x0) + fx * img.at(c, y1, x1));
}

} // namespace

TEST(Crop, FullFrameIsIdentity) {
  gen::Source g(1);
  const auto img = random_image(g, 8, 8);
  AugmentPolicy p = AugmentPolicy::none();
  RandomStream rng(3);
  EXPECT_EQ(random_resized_crop(img, p, rng), img);
  // non-square: full frame when the aspect range pins the image's own w/h
  const auto tall = random_image(g, 9, 7);
  p.crop_aspect = {7.0 / 9.0, 7.0 / 9.0};
  EXPECT_EQ(random_resized_crop(tall, p, rng), tall);
}

TEST(Crop, DeterministicForFixedStream) {
  gen::Source g(2);
  const auto img = random_image(g, 16, 16);
  RandomStream a(9), b(9);
  EXPECT_EQ(random_resized_crop(img, AugmentPolicy{}, a), random_resized_crop(img, AugmentPolicy{}, b));
}

TEST(Crop, CheckerboardUpscaleHandValues) {
  const auto up = resize_bilinear(checkerboard2x2(), 0, 0, 2, 2, 4, 4);
  const std::uint8_t row0[4] = {0, 64, 191, 255};
  const std::uint8_t row1[4] = {64, 96, 159, 191};
  for (std::size_t x = 0; x < 4; ++x) {
    EXPECT_EQ(up.at(0, 0, x), row0[x]) << x;
    EXPECT_EQ(up.at(0, 1, x), row1[x]) << x;
    EXPECT_EQ(up.at(2, 3, 3 - x), row0[x]) << x;  // the pattern is point-symmetric
  }
}

TEST(Crop, ResizeMatchesOracleOnRandomImages) {
  gen::Source g(3);
  for (int t = 0; t < 20; ++t) {
    const auto img = random_image(g, 3 + g.index(10), 3 + g.index(10));
    const std::size_t oh = 1 + g.index(20), ow = 1 + g.index(20);
    const auto out = resize_bilinear(img, 0, 0, img.height, img.width, oh, ow);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          const double sy = (y + 0.5) * img.height / oh - 0.5, sx = (x + 0.5) * img.width / ow - 0.5;
          EXPECT_NEAR(out.at(c, y, x), bilinear_oracle(img, c, sy, sx), 0.5 + 1e-9);
        }
  }
}

TEST(Crop, TinyScaleStillProducesFullSizeImage) {
  gen::Source g(4);
  const auto img = random_image(g, 5, 5);
  AugmentPolicy p;
  p.crop_scale = {1e-6, 1e-6};
  RandomStream rng(1);
  const auto out = random_resized_crop(img, p, rng);
  EXPECT_EQ(out.height, 5u);
  EXPECT_EQ(out.width, 5u);
  // a 1x1 crop is a constant image
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 25; ++i) EXPECT_EQ(out.pixels[c * 25 + i], out.pixels[c * 25]);
}

TEST(Flip, InvolutionAndRowExample) {
  gen::Source g(5);
  const auto img = random_image(g, 4, 6);
  EXPECT_EQ(hflip(hflip(img)), img);
  ImageU8 row(1, 2);
  row.at(0, 0, 0) = 10;
  row.at(0, 0, 1) = 20;
  const auto f = hflip(row);
  EXPECT_EQ(f.at(0, 0, 0), 20);
  EXPECT_EQ(f.at(0, 0, 1), 10);
}

TEST(Flip, SymmetricImageUnchanged) {
  gen::Source g(6);
  auto img = random_image(g, 3, 6);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 3; ++y)
      for (std::size_t x = 0; x < 3; ++x) img.at(c, y, 5 - x) = img.at(c, y, x);
  EXPECT_EQ(hflip(img), img);
}

TEST(Color, ZeroStrengthsAreIdentity) {
  gen::Source g(7);
  const auto img = random_image(g, 5, 5);
  RandomStream rng(2);
  for (int t = 0; t < 10; ++t) EXPECT_EQ(color_jitter(img, {}, rng), img);
}

TEST(Color, GrayscaleOfGrayIsIdentity) {
  gen::Source g(8);
  ImageU8 img(4, 4);
  for (std::size_t i = 0; i < 16; ++i) img.pixels[i] = img.pixels[16 + i] = img.pixels[32 + i] = static_cast<std::uint8_t>(g.index(256));
  EXPECT_EQ(to_grayscale(img), img);
  EXPECT_TRUE(is_gray(to_grayscale(random_image(g, 4, 4))));
}

TEST(Color, GrayscaleUsesRec601Weights) {
  ImageU8 img(1, 1);
  img.pixels = {200, 100, 50};
  // 0.299*200 + 0.587*100 + 0.114*50 = 124.2
  EXPECT_EQ(to_grayscale(img).pixels[0], 124);
}

TEST(Color, BrightnessSaturatesAt255) {
  ImageU8 img(1, 1);
  img.pixels = {200, 100, 0};
  const auto out = adjust_brightness(img, 2.0);
  EXPECT_EQ(out.pixels[0], 255);
  EXPECT_EQ(out.pixels[1], 200);
  EXPECT_EQ(out.pixels[2], 0);
}

TEST(Color, ContrastZeroGivesMeanLuma) {
  gen::Source g(9);
  const auto img = random_image(g, 3, 3);
  const auto out = adjust_contrast(img, 0.0);
  for (auto p : out.pixels) EXPECT_EQ(p, out.pixels[0]);
}

TEST(Color, FullHueTurnIsNearIdentity) {
  gen::Source g(10);
  const auto img = random_image(g, 4, 4);
  const auto out = adjust_hue(img, 1.0);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_NEAR(out.pixels[i], img.pixels[i], 1);
}

TEST(Color, HueShiftOfThirdRotatesPrimaries) {
  ImageU8 red(1, 1);
  red.pixels = {255, 0, 0};
  const auto out = adjust_hue(red, 1.0 / 3.0);
  EXPECT_EQ(out.pixels, (std::vector<std::uint8_t>{0, 255, 0}));
}

TEST(Pair, NoAugmentationReturnsScaledInput) {
  gen::Source g(11);
  const auto img = random_image(g, 6, 6);
  const auto pair = augment_pair<double>(img, AugmentPolicy::none(), RandomStream(4));
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    EXPECT_EQ(pair.a[i], img.pixels[i] / 255.0);
    EXPECT_EQ(pair.b[i], img.pixels[i] / 255.0);
  }
}

TEST(Pair, ReproducibleAndInUnitRange) {
  gen::Source g(12);
  const auto img = random_image(g, 16, 16);
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto p1 = augment_pair<float>(img, AugmentPolicy{}, RandomStream(s, 3));
    const auto p2 = augment_pair<float>(img, AugmentPolicy{}, RandomStream(s, 3));
    EXPECT_EQ(p1.a, p2.a);
    EXPECT_EQ(p1.b, p2.b);
    for (float v : p1.a) {
      ASSERT_TRUE(std::isfinite(v));
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
  }
}

TEST(Pair, FlipFrequencyPerView) {
  // Left half dark, right half bright; everything except the flip disabled.
  ImageU8 img(4, 4);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 2; x < 4; ++x) img.at(c, y, x) = 255;
  AugmentPolicy p = AugmentPolicy::none();
  p.flip_p = 0.5;
  int flips_a = 0, flips_b = 0;
  const int n = 1000;
  for (int t = 0; t < n; ++t) {
    const auto pair = augment_pair<double>(img, p, RandomStream(77, static_cast<std::uint64_t>(t)));
    flips_a += pair.a[0] > 0.5;
    flips_b += pair.b[0] > 0.5;
  }
  EXPECT_NEAR(flips_a / double(n), 0.5, 0.05);
  EXPECT_NEAR(flips_b / double(n), 0.5, 0.05);
}

TEST(Pair, GrayscaleFrequencyWithinThreeStandardErrors) {
  gen::Source g(13);
  const auto img = random_image(g, 4, 4);
  AugmentPolicy p = AugmentPolicy::none();
  p.grayscale_p = 0.2;
  RandomStream root(5);
  int gray = 0;
  const int n = 2000;
  for (int t = 0; t < n; ++t) {
    RandomStream r = root.child(static_cast<std::uint64_t>(t));
    gray += is_gray(augment_view(img, p, r));
  }
  const double se = std::sqrt(0.2 * 0.8 / n);
  EXPECT_NEAR(gray / double(n), 0.2, 3 * se);
}

TEST(Policy, Validation) {
  AugmentPolicy p;
  p.flip_p = 1.5;
  EXPECT_THROW(p.validate(), ValidationError);
  p = {};
  p.crop_scale = {0.5, 0.2};
  EXPECT_THROW(p.validate(), ValidationError);
  p = {};
  p.crop_scale = {0.0, 1.0};
  EXPECT_THROW(p.validate(), ValidationError);
  EXPECT_NO_THROW(AugmentPolicy{}.validate());
  EXPECT_NO_THROW(AugmentPolicy::none().validate());
}

TEST(Image, BufferLengthIsChecked) {
  EXPECT_THROW(ImageU8(2, 2, std::vector<std::uint8_t>(11)), ShapeError);
}
