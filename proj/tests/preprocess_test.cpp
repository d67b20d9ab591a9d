#include "fogsight/preprocess.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace fogsight;

namespace {

PpmImage pattern_image(int w, int h) {
  PpmImage img;
  img.width = w;
  img.height = h;
  img.pixels.resize(static_cast<std::size_t>(w) * h * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = (static_cast<std::size_t>(y) * w + x) * 3;
      img.pixels[i] = static_cast<std::uint8_t>((x * 7 + y * 13) & 0xFF);
      img.pixels[i + 1] = static_cast<std::uint8_t>((x * 29 + y * 3) & 0xFF);
      img.pixels[i + 2] = static_cast<std::uint8_t>((x + y * 31) & 0xFF);
    }
  }
  return img;
}

ImagePayload ppm_payload(const std::string& id, const PpmImage& img) {
  ImagePayload p;
  p.image_id = id;
  p.width = img.width;
  p.height = img.height;
  p.format = ImageFormat::PpmP6;
  p.bytes = make_bytes(write_ppm(img));
  return p;
}

TEST(ModeStrings, RoundTrip) {
  EXPECT_EQ(to_string(Mode::HighAccuracy), "accuracy");
  EXPECT_EQ(to_string(Mode::LowLatency), "latency");
  EXPECT_EQ(parse_mode("accuracy"), Mode::HighAccuracy);
  EXPECT_EQ(parse_mode("latency"), Mode::LowLatency);
  EXPECT_FALSE(parse_mode("turbo").has_value());
  EXPECT_EQ(parse_image_format("ppm"), ImageFormat::PpmP6);
  EXPECT_EQ(parse_image_format("opaque"), ImageFormat::Opaque);
  EXPECT_FALSE(parse_image_format("png").has_value());
}

TEST(RescaleDims, PinnedCases) {
  EXPECT_EQ(rescale_dims(4000, 2192, 200), (Dims{200, 110}));
  EXPECT_EQ(rescale_dims(2192, 4000, 200), (Dims{110, 200}));
  EXPECT_EQ(rescale_dims(100, 100, 100), (Dims{100, 100}));
  EXPECT_EQ(rescale_dims(3, 1000, 200), (Dims{1, 200}));    // short side clamps to >= 1
  EXPECT_EQ(rescale_dims(1, 1000, 200), (Dims{1, 200}));
  EXPECT_EQ(rescale_dims(4, 2, 3), (Dims{3, 2}));           // 1.5 rounds half-up to 2
  EXPECT_EQ(rescale_dims(50, 50, 200), (Dims{200, 200}));   // upscale allowed
  EXPECT_THROW(rescale_dims(0, 10, 200), std::invalid_argument);
  EXPECT_THROW(rescale_dims(10, 10, 0), std::invalid_argument);
}

TEST(RescaleDims, LongSideAlwaysHitsTargetExactly) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 2000; ++i) {
    const int w = 1 + static_cast<int>(rng() % 5000);
    const int h = 1 + static_cast<int>(rng() % 5000);
    const int t = 1 + static_cast<int>(rng() % 1000);
    const Dims d = rescale_dims(w, h, t);
    EXPECT_EQ(std::max(d.width, d.height), t);
    EXPECT_GE(std::min(d.width, d.height), 1);
    // Aspect ratio is preserved to within the half-pixel rounding, except
    // when the ideal short side falls below 1 and the >= 1 clamp applies.
    const double want = w >= h ? static_cast<double>(h) * t / w : static_cast<double>(w) * t / h;
    const int got = w >= h ? d.height : d.width;
    const bool clamped = got == 1 && want < 1.0;
    EXPECT_TRUE(clamped || std::abs(got - want) <= 0.5 + 1e-9) << w << "x" << h << " @" << t;
  }
}

TEST(Ppm, WriteParseRoundTrip) {
  PpmImage img = pattern_image(13, 7);
  auto bytes = write_ppm(img);
  PpmImage back = parse_ppm(bytes);
  EXPECT_EQ(back.width, 13);
  EXPECT_EQ(back.height, 7);
  EXPECT_EQ(back.pixels, img.pixels);
}

TEST(Ppm, HeaderCommentsAreWhitespace) {
  PpmImage img = pattern_image(2, 2);
  std::string head = "P6 # comment\n# another\n2 2\n255\n";
  std::vector<std::uint8_t> bytes(head.begin(), head.end());
  bytes.insert(bytes.end(), img.pixels.begin(), img.pixels.end());
  PpmImage back = parse_ppm(bytes);
  EXPECT_EQ(back.width, 2);
  EXPECT_EQ(back.pixels, img.pixels);
}

TEST(Ppm, ParseErrorsCarryByteOffsets) {
  auto expect_error_at = [](const std::string& head, std::size_t pixel_bytes,
                            std::size_t min_offset) {
    std::vector<std::uint8_t> bytes(head.begin(), head.end());
    bytes.insert(bytes.end(), pixel_bytes, 0);
    try {
      parse_ppm(bytes);
      FAIL() << "expected PpmParseError for header: " << head;
    } catch (const PpmParseError& e) {
      EXPECT_GE(e.byte_offset, min_offset) << head;
    }
  };
  expect_error_at("P5\n2 2\n255\n", 12, 0);        // wrong magic
  expect_error_at("P6\nx 2\n255\n", 12, 3);        // non-numeric width
  expect_error_at("P6\n2 2\n254\n", 12, 6);        // unsupported maxval
  expect_error_at("P6\n2 2\n255\n", 11, 0);        // truncated pixels
  expect_error_at("P6\n2 2\n255\n", 13, 0);        // trailing bytes
  expect_error_at("P6\n0 2\n255\n", 0, 3);         // zero dimension
}

TEST(ResizeNearest, FourToTwoSamplesBlockCenters) {
  // floor((i + 0.5) * 4 / 2) = 1 for i = 0 and 3 for i = 1, so the 2x2 output
  // picks source pixels (1,1), (3,1), (1,3), (3,3).
  PpmImage img = pattern_image(4, 4);
  PpmImage out = resize_nearest(img, 2, 2);
  auto px = [&](const PpmImage& m, int x, int y) {
    return std::vector<std::uint8_t>{m.pixels[(y * m.width + x) * 3],
                                     m.pixels[(y * m.width + x) * 3 + 1],
                                     m.pixels[(y * m.width + x) * 3 + 2]};
  };
  EXPECT_EQ(px(out, 0, 0), px(img, 1, 1));
  EXPECT_EQ(px(out, 1, 0), px(img, 3, 1));
  EXPECT_EQ(px(out, 0, 1), px(img, 1, 3));
  EXPECT_EQ(px(out, 1, 1), px(img, 3, 3));
}

TEST(ResizeNearest, IdentityWhenSameSize) {
  PpmImage img = pattern_image(9, 5);
  PpmImage out = resize_nearest(img, 9, 5);
  EXPECT_EQ(out.pixels, img.pixels);
}

TEST(ResizeNearest, UpscaleStaysInBounds) {
  PpmImage img = pattern_image(2, 2);
  PpmImage out = resize_nearest(img, 5, 7);
  EXPECT_EQ(out.width, 5);
  EXPECT_EQ(out.height, 7);
  // Every output pixel equals one of the four source pixels.
  for (int y = 0; y < 7; ++y) {
    for (int x = 0; x < 5; ++x) {
      bool found = false;
      for (int sy = 0; sy < 2 && !found; ++sy) {
        for (int sx = 0; sx < 2 && !found; ++sx) {
          found = std::equal(out.pixels.begin() + (y * 5 + x) * 3,
                             out.pixels.begin() + (y * 5 + x) * 3 + 3,
                             img.pixels.begin() + (sy * 2 + sx) * 3);
        }
      }
      EXPECT_TRUE(found) << x << "," << y;
    }
  }
}

TEST(Prepare, HighAccuracyIsByteIdenticalPassThrough) {
  ImagePayload p = ppm_payload("img-1", pattern_image(8, 4));
  ImagePayload out = prepare(p, Mode::HighAccuracy, 200);
  EXPECT_EQ(out.byte_len(), p.byte_len());
  EXPECT_EQ(out.bytes.get(), p.bytes.get());  // same buffer, no copy
  EXPECT_EQ(out.width, 8);

  ImagePayload opaque;
  opaque.image_id = "blob-1";
  opaque.format = ImageFormat::Opaque;
  opaque.bytes = make_bytes(std::vector<std::uint8_t>(1234, 0x5A));
  EXPECT_EQ(prepare(opaque, Mode::HighAccuracy, 200).byte_len(), 1234u);
}

TEST(Prepare, LowLatencyRescalesPpm) {
  ImagePayload p = ppm_payload("img-2", pattern_image(400, 220));
  ImagePayload out = prepare(p, Mode::LowLatency, 200);
  EXPECT_EQ(out.width, 200);
  EXPECT_EQ(out.height, 110);
  PpmImage img = parse_ppm(*out.bytes);
  EXPECT_EQ(img.width, 200);
  EXPECT_EQ(img.height, 110);
  EXPECT_EQ(img.pixels.size(), 200u * 110u * 3u);
  EXPECT_EQ(out.image_id, "img-2");

  // Already at target size: dimension-identical output.
  ImagePayload again = prepare(out, Mode::LowLatency, 200);
  EXPECT_EQ(again.width, 200);
  EXPECT_EQ(again.height, 110);
  EXPECT_EQ(*again.bytes, *out.bytes);
}

TEST(Prepare, FullSizeFrameRescalesTo66000PixelBytes) {
  ImagePayload p = ppm_payload("img-big", pattern_image(4000, 2192));
  ImagePayload out = prepare(p, Mode::LowLatency, 200);
  EXPECT_EQ(out.width, 200);
  EXPECT_EQ(out.height, 110);
  PpmImage img = parse_ppm(*out.bytes);
  EXPECT_EQ(img.pixels.size(), 66000u);  // 200 * 110 * 3
}

TEST(Prepare, LowLatencyErrors) {
  ImagePayload opaque;
  opaque.image_id = "blob-2";
  opaque.format = ImageFormat::Opaque;
  opaque.bytes = make_bytes(std::vector<std::uint8_t>(10, 1));
  EXPECT_THROW(prepare(opaque, Mode::LowLatency, 200), UnsupportedFormatError);

  ImagePayload corrupt = ppm_payload("img-3", pattern_image(4, 4));
  auto broken = *corrupt.bytes;
  broken[1] = '7';  // P7
  corrupt.bytes = make_bytes(std::move(broken));
  EXPECT_THROW(prepare(corrupt, Mode::LowLatency, 200), PpmParseError);

  ImagePayload mismatched = ppm_payload("img-4", pattern_image(4, 4));
  mismatched.width = 5;  // declared dims disagree with the embedded header
  EXPECT_THROW(prepare(mismatched, Mode::LowLatency, 200), PpmParseError);
}

}  // namespace
