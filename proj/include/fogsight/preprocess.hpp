#pragma once

// Image payloads, the two service modes, and the low-latency downscale path.
// High-accuracy mode forwards payloads byte-identically; low-latency mode
// nearest-neighbor-rescales binary PPM (P6) images so the long side equals a
// configured target.

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fogsight {

enum class Mode { HighAccuracy, LowLatency };

inline std::string to_string(Mode m) {
  return m == Mode::HighAccuracy ? "accuracy" : "latency";
}

inline std::optional<Mode> parse_mode(std::string_view s) {
  if (s == "accuracy") return Mode::HighAccuracy;
  if (s == "latency") return Mode::LowLatency;
  return std::nullopt;
}

enum class ImageFormat { PpmP6, Opaque };

inline std::string to_string(ImageFormat f) {
  return f == ImageFormat::PpmP6 ? "ppm" : "opaque";
}

inline std::optional<ImageFormat> parse_image_format(std::string_view s) {
  if (s == "ppm") return ImageFormat::PpmP6;
  if (s == "opaque") return ImageFormat::Opaque;
  return std::nullopt;
}

using SharedBytes = std::shared_ptr<const std::vector<std::uint8_t>>;

inline SharedBytes make_bytes(std::vector<std::uint8_t> v) {
  return std::make_shared<const std::vector<std::uint8_t>>(std::move(v));
}

// width/height are declared metadata; for PpmP6 payloads they must match the
// embedded header, for Opaque payloads they are informational only.
struct ImagePayload {
  std::string image_id;
  int width = 0;
  int height = 0;
  ImageFormat format = ImageFormat::Opaque;
  SharedBytes bytes;

  std::size_t byte_len() const { return bytes ? bytes->size() : 0; }
};

struct Dims {
  int width = 0;
  int height = 0;
  bool operator==(const Dims&) const = default;
};

// Long side becomes exactly target_long_side; the short side scales
// proportionally with round-half-up, clamped to at least 1. Integer
// arithmetic throughout: round_half_up(a/b) == (2a + b) / 2b.
inline Dims rescale_dims(int width, int height, int target_long_side) {
  if (width < 1 || height < 1 || target_long_side < 1) {
    throw std::invalid_argument("rescale_dims: dimensions and target must be >= 1");
  }
  auto short_side = [target_long_side](std::int64_t s, std::int64_t l) {
    const std::int64_t v = (2 * s * target_long_side + l) / (2 * l);
    return static_cast<int>(std::max<std::int64_t>(1, v));
  };
  if (width >= height) return Dims{target_long_side, short_side(height, width)};
  return Dims{short_side(width, height), target_long_side};
}

// ---------------------------------------------------------------------------
// Binary PPM (P6): "P6", whitespace, width, height, maxval 255, one
// whitespace byte, then width*height*3 raw RGB bytes. '#' comments are
// allowed inside the header whitespace, per netpbm.
// ---------------------------------------------------------------------------

class PpmParseError : public std::runtime_error {
 public:
  PpmParseError(const std::string& msg, std::size_t byte_offset)
      : std::runtime_error(msg + " (at byte " + std::to_string(byte_offset) + ")"),
        byte_offset(byte_offset) {}
  std::size_t byte_offset;
};

struct PpmImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // RGB, row-major, 3 bytes per pixel
};

inline PpmImage parse_ppm(const std::uint8_t* data, std::size_t len) {
  std::size_t pos = 0;
  auto fail = [&](const std::string& msg) -> void { throw PpmParseError(msg, pos); };
  auto is_ws = [](std::uint8_t c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  auto skip_ws = [&] {
    while (pos < len) {
      if (is_ws(data[pos])) {
        ++pos;
      } else if (data[pos] == '#') {
        while (pos < len && data[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> long {
    skip_ws();
    if (pos >= len || data[pos] < '0' || data[pos] > '9') fail("expected decimal integer");
    long v = 0;
    while (pos < len && data[pos] >= '0' && data[pos] <= '9') {
      v = v * 10 + (data[pos] - '0');
      if (v > 1000000000L) fail("integer out of range");
      ++pos;
    }
    return v;
  };

  if (len < 2 || data[0] != 'P' || data[1] != '6') fail("missing P6 magic");
  pos = 2;
  const long w = read_int();
  const long h = read_int();
  if (w < 1 || h < 1) fail("dimensions must be >= 1");
  const std::size_t maxval_at = pos;
  const long maxval = read_int();
  if (maxval != 255) {
    pos = maxval_at;
    fail("unsupported maxval (must be 255)");
  }
  if (pos >= len || !is_ws(data[pos])) fail("expected single whitespace after maxval");
  ++pos;
  const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3;
  if (len - pos != need) {
    fail("pixel data length mismatch: expected " + std::to_string(need) + " bytes, have " +
         std::to_string(len - pos));
  }
  PpmImage img;
  img.width = static_cast<int>(w);
  img.height = static_cast<int>(h);
  img.pixels.assign(data + pos, data + len);
  return img;
}

inline PpmImage parse_ppm(const std::vector<std::uint8_t>& bytes) {
  return parse_ppm(bytes.data(), bytes.size());
}

inline std::vector<std::uint8_t> write_ppm(const PpmImage& img) {
  const std::string header =
      "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out;
  out.reserve(header.size() + img.pixels.size());
  out.insert(out.end(), header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

// Nearest-neighbor: output pixel i samples source index
// floor((i + 0.5) * src / dst), computed as (2i + 1) * src / (2 * dst).
inline PpmImage resize_nearest(const PpmImage& src, int dst_w, int dst_h) {
  if (dst_w < 1 || dst_h < 1) throw std::invalid_argument("resize_nearest: target must be >= 1");
  PpmImage out;
  out.width = dst_w;
  out.height = dst_h;
  out.pixels.resize(static_cast<std::size_t>(dst_w) * dst_h * 3);
  for (int y = 0; y < dst_h; ++y) {
    const std::int64_t sy = (2LL * y + 1) * src.height / (2LL * dst_h);
    for (int x = 0; x < dst_w; ++x) {
      const std::int64_t sx = (2LL * x + 1) * src.width / (2LL * dst_w);
      const std::size_t s = (static_cast<std::size_t>(sy) * src.width + sx) * 3;
      const std::size_t d = (static_cast<std::size_t>(y) * dst_w + x) * 3;
      out.pixels[d] = src.pixels[s];
      out.pixels[d + 1] = src.pixels[s + 1];
      out.pixels[d + 2] = src.pixels[s + 2];
    }
  }
  return out;
}

class UnsupportedFormatError : public std::runtime_error {
 public:
  explicit UnsupportedFormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Mode-dependent payload preparation. High-accuracy returns the payload
// untouched (same byte buffer, byte-identical). Low-latency rescales PPM
// payloads to rescale_dims(...) and refuses opaque payloads.
inline ImagePayload prepare(const ImagePayload& p, Mode mode, int target_long_side) {
  if (mode == Mode::HighAccuracy) return p;
  if (p.format != ImageFormat::PpmP6) {
    throw UnsupportedFormatError("cannot rescale opaque payload \"" + p.image_id + "\"");
  }
  if (!p.bytes) throw PpmParseError("empty payload", 0);
  PpmImage img = parse_ppm(*p.bytes);
  if (img.width != p.width || img.height != p.height) {
    throw PpmParseError("header dimensions " + std::to_string(img.width) + "x" +
                            std::to_string(img.height) + " do not match declared " +
                            std::to_string(p.width) + "x" + std::to_string(p.height),
                        2);
  }
  const Dims d = rescale_dims(img.width, img.height, target_long_side);
  PpmImage small = resize_nearest(img, d.width, d.height);
  ImagePayload out;
  out.image_id = p.image_id;
  out.width = d.width;
  out.height = d.height;
  out.format = ImageFormat::PpmP6;
  out.bytes = make_bytes(write_ppm(small));
  return out;
}

}  // namespace fogsight
