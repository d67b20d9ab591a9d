#pragma once

// Framed master<->worker protocol and the HTTP ingestion contract.
//
// Frame layout, all integers big-endian:
//   total_len  u32   byte count of everything after this field
//   msg_type   u8    0x01 REGISTER 0x02 TASK 0x03 RESULT 0x04 HEARTBEAT 0x05 ERROR
//   header_len u32
//   header     UTF-8 JSON, header_len bytes
//   payload    raw bytes, total_len - 5 - header_len bytes
//
// total_len = 5 + header_len + payload_len. The decoder is streaming-safe:
// partial input yields a "need N more bytes" outcome instead of an error,
// and declared lengths above the frame cap are rejected before any payload
// allocation happens.

#include <cstdint>
#include <cstring>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fogsight/detection.hpp"
#include "fogsight/preprocess.hpp"

namespace fogsight {

inline constexpr std::uint8_t kMsgRegister = 0x01;
inline constexpr std::uint8_t kMsgTask = 0x02;
inline constexpr std::uint8_t kMsgResult = 0x03;
inline constexpr std::uint8_t kMsgHeartbeat = 0x04;
inline constexpr std::uint8_t kMsgError = 0x05;

inline constexpr std::size_t kDefaultMaxFrameBytes = 64ull * 1024 * 1024;

class ProtocolError : public std::runtime_error {
 public:
  explicit ProtocolError(const std::string& msg) : std::runtime_error(msg) {}
};

class FrameSizeError : public std::runtime_error {
 public:
  explicit FrameSizeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct Frame {
  std::uint8_t msg_type = 0;
  std::string header;                 // exact JSON text as transmitted
  std::vector<std::uint8_t> payload;
};

inline bool known_msg_type(std::uint8_t t) { return t >= kMsgRegister && t <= kMsgError; }

// On-the-wire size of a frame, including the 4-byte length prefix.
inline std::size_t frame_wire_size(std::size_t header_len, std::size_t payload_len) {
  return 4 + 5 + header_len + payload_len;
}

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline std::uint32_t get_be32(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

inline std::vector<std::uint8_t> encode_frame(std::uint8_t msg_type, std::string_view header,
                                              const std::uint8_t* payload, std::size_t payload_len,
                                              std::size_t max_frame = kDefaultMaxFrameBytes) {
  if (!known_msg_type(msg_type)) throw ProtocolError("encode: unknown msg_type");
  if (!nlohmann::json::accept(header)) throw ProtocolError("encode: header is not valid JSON");
  if (payload_len >= (1ull << 31)) throw FrameSizeError("encode: payload length >= 2^31");
  const std::size_t total = 5 + header.size() + payload_len;
  if (4 + total > max_frame) throw FrameSizeError("encode: frame exceeds size cap");
  std::vector<std::uint8_t> out;
  out.reserve(4 + total);
  put_be32(out, static_cast<std::uint32_t>(total));
  out.push_back(msg_type);
  put_be32(out, static_cast<std::uint32_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  if (payload_len > 0) out.insert(out.end(), payload, payload + payload_len);
  return out;
}

inline std::vector<std::uint8_t> encode_frame(std::uint8_t msg_type, std::string_view header,
                                              const std::vector<std::uint8_t>& payload = {},
                                              std::size_t max_frame = kDefaultMaxFrameBytes) {
  return encode_frame(msg_type, header, payload.data(), payload.size(), max_frame);
}

// Outcome of a single decode attempt over a byte buffer.
//   frame set:      one complete frame; `consumed` bytes were used.
//   frame not set:  incomplete input; `need` more bytes are required.
// Protocol violations throw ProtocolError.
struct DecodeOutcome {
  std::optional<Frame> frame;
  std::size_t need = 0;
  std::size_t consumed = 0;
};

inline DecodeOutcome decode_frame(const std::uint8_t* data, std::size_t len,
                                  std::size_t max_frame = kDefaultMaxFrameBytes) {
  DecodeOutcome out;
  if (len < 4) {
    out.need = 4 - len;
    return out;
  }
  const std::uint64_t total = get_be32(data);
  if (total < 5) throw ProtocolError("decode: declared length too small to hold a frame");
  if (4 + total > max_frame) throw ProtocolError("decode: declared length exceeds frame cap");
  if (len < 4 + total) {
    out.need = 4 + total - len;
    return out;
  }
  const std::uint8_t msg_type = data[4];
  if (!known_msg_type(msg_type)) throw ProtocolError("decode: unknown msg_type");
  const std::uint64_t header_len = get_be32(data + 5);
  if (5 + header_len > total) throw ProtocolError("decode: header_len exceeds declared length");
  Frame f;
  f.msg_type = msg_type;
  f.header.assign(reinterpret_cast<const char*>(data + 9), header_len);
  if (!nlohmann::json::accept(f.header)) throw ProtocolError("decode: header is not valid JSON");
  const std::size_t payload_len = static_cast<std::size_t>(total - 5 - header_len);
  f.payload.assign(data + 9 + header_len, data + 9 + header_len + payload_len);
  out.frame = std::move(f);
  out.consumed = static_cast<std::size_t>(4 + total);
  return out;
}

inline DecodeOutcome decode_frame(const std::vector<std::uint8_t>& buf,
                                  std::size_t max_frame = kDefaultMaxFrameBytes) {
  return decode_frame(buf.data(), buf.size(), max_frame);
}

// Incremental decoder for a byte stream: feed() arbitrary chunks, then pull
// complete frames with next(). Byte-at-a-time feeding yields exactly the same
// frames as feeding whole buffers.
class FrameDecoder {
 public:
  explicit FrameDecoder(std::size_t max_frame = kDefaultMaxFrameBytes) : max_frame_(max_frame) {}

  void feed(const std::uint8_t* data, std::size_t len) {
    buf_.insert(buf_.end(), data, data + len);
  }
  void feed(const std::vector<std::uint8_t>& data) { feed(data.data(), data.size()); }

  std::optional<Frame> next() {
    DecodeOutcome out = decode_frame(buf_.data() + pos_, buf_.size() - pos_, max_frame_);
    if (!out.frame) {
      need_ = out.need;
      compact();
      return std::nullopt;
    }
    pos_ += out.consumed;
    need_ = 0;
    compact();
    return std::move(out.frame);
  }

  // Bytes required before the frame currently being assembled can complete.
  std::size_t bytes_needed() const { return need_; }
  std::size_t buffered() const { return buf_.size() - pos_; }

 private:
  void compact() {
    if (pos_ == 0) return;
    if (pos_ == buf_.size()) {
      buf_.clear();
    } else if (pos_ > 4096) {
      buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(pos_));
    } else {
      return;
    }
    pos_ = 0;
  }

  std::size_t max_frame_;
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
  std::size_t need_ = 4;
};

// ---------------------------------------------------------------------------
// Envelope headers. Worker tiers ride in REGISTER frames, so the type lives
// here alongside the envelope codecs.
// ---------------------------------------------------------------------------

enum class Tier { Fog, Cloud };

inline std::string to_string(Tier t) { return t == Tier::Fog ? "fog" : "cloud"; }

inline std::optional<Tier> parse_tier(std::string_view s) {
  if (s == "fog") return Tier::Fog;
  if (s == "cloud") return Tier::Cloud;
  return std::nullopt;
}

inline nlohmann::json detection_to_json(const Detection& d) {
  return nlohmann::json{{"class_id", d.class_id}, {"score", d.score}, {"cx", d.box.cx},
                        {"cy", d.box.cy},         {"w", d.box.w},     {"h", d.box.h}};
}

inline Detection detection_from_json(const nlohmann::json& j) {
  Detection d;
  d.class_id = j.at("class_id").get<int>();
  d.score = j.at("score").get<double>();
  d.box.cx = j.at("cx").get<double>();
  d.box.cy = j.at("cy").get<double>();
  d.box.w = j.at("w").get<double>();
  d.box.h = j.at("h").get<double>();
  return d;
}

inline nlohmann::json detections_to_json(const std::vector<Detection>& dets) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Detection& d : dets) arr.push_back(detection_to_json(d));
  return arr;
}

inline std::vector<Detection> detections_from_json(const nlohmann::json& arr) {
  std::vector<Detection> out;
  for (const auto& j : arr) out.push_back(detection_from_json(j));
  return out;
}

struct RegisterEnvelope {
  std::string worker_id;
  Tier tier = Tier::Fog;
  int slots = 1;
};

inline std::string register_header(const RegisterEnvelope& r) {
  return nlohmann::json{{"worker_id", r.worker_id}, {"tier", to_string(r.tier)}, {"slots", r.slots}}
      .dump();
}

inline RegisterEnvelope parse_register_header(const nlohmann::json& j) {
  RegisterEnvelope r;
  r.worker_id = j.at("worker_id").get<std::string>();
  auto tier = parse_tier(j.at("tier").get<std::string>());
  if (!tier) throw ProtocolError("register: unknown tier");
  r.tier = *tier;
  r.slots = j.value("slots", 1);
  if (r.slots < 1) throw ProtocolError("register: slots must be >= 1");
  return r;
}

struct TaskEnvelope {
  std::string task_id;
  std::string image_id;
  Mode mode = Mode::HighAccuracy;
  int attempt = 1;
  int width = 0;
  int height = 0;
  ImageFormat format = ImageFormat::Opaque;
  SharedBytes payload;  // raw image bytes, shipped as the frame payload
};

inline std::string task_header(const TaskEnvelope& t) {
  return nlohmann::json{{"task_id", t.task_id}, {"image_id", t.image_id},
                        {"mode", to_string(t.mode)}, {"attempt", t.attempt},
                        {"width", t.width},     {"height", t.height},
                        {"format", to_string(t.format)}}
      .dump();
}

inline TaskEnvelope parse_task_header(const nlohmann::json& j) {
  TaskEnvelope t;
  t.task_id = j.at("task_id").get<std::string>();
  t.image_id = j.at("image_id").get<std::string>();
  auto mode = parse_mode(j.at("mode").get<std::string>());
  if (!mode) throw ProtocolError("task: unknown mode");
  t.mode = *mode;
  t.attempt = j.at("attempt").get<int>();
  t.width = j.value("width", 0);
  t.height = j.value("height", 0);
  auto fmt = parse_image_format(j.at("format").get<std::string>());
  if (!fmt) throw ProtocolError("task: unknown format");
  t.format = *fmt;
  return t;
}

struct ResultEnvelope {
  std::string task_id;
  std::string worker_id;
  std::vector<Detection> detections;
  double compute_ms = 0.0;
};

inline std::string result_header(const ResultEnvelope& r) {
  return nlohmann::json{{"task_id", r.task_id},
                        {"worker_id", r.worker_id},
                        {"compute_ms", r.compute_ms},
                        {"detections", detections_to_json(r.detections)}}
      .dump();
}

inline ResultEnvelope parse_result_header(const nlohmann::json& j) {
  ResultEnvelope r;
  r.task_id = j.at("task_id").get<std::string>();
  r.worker_id = j.at("worker_id").get<std::string>();
  r.compute_ms = j.at("compute_ms").get<double>();
  r.detections = detections_from_json(j.at("detections"));
  return r;
}

struct ErrorEnvelope {
  std::string task_id;  // empty when the error is not task-specific
  std::string worker_id;
  std::string message;
};

inline std::string error_header(const ErrorEnvelope& e) {
  nlohmann::json j{{"worker_id", e.worker_id}, {"message", e.message}};
  if (!e.task_id.empty()) j["task_id"] = e.task_id;
  return j.dump();
}

inline ErrorEnvelope parse_error_header(const nlohmann::json& j) {
  ErrorEnvelope e;
  e.task_id = j.value("task_id", "");
  e.worker_id = j.value("worker_id", "");
  e.message = j.value("message", "");
  return e;
}

inline std::string heartbeat_header(const std::string& worker_id) {
  return nlohmann::json{{"worker_id", worker_id}}.dump();
}

// ---------------------------------------------------------------------------
// HTTP ingestion contract (the gateway-facing side of the master).
// ---------------------------------------------------------------------------

inline constexpr const char* kDetectPath = "/v1/detect";
inline constexpr const char* kHealthPath = "/v1/health";
inline constexpr const char* kHdrImageId = "X-Image-Id";
inline constexpr const char* kHdrMode = "X-Mode";
inline constexpr const char* kHdrWidth = "X-Width";
inline constexpr const char* kHdrHeight = "X-Height";
inline constexpr const char* kHdrFormat = "X-Format";
inline constexpr const char* kHdrPreRescaled = "X-Pre-Rescaled";

inline nlohmann::json detect_response_json(const std::string& image_id,
                                           const std::vector<Detection>& dets, double total_ms,
                                           double compute_ms, const std::string& worker_id) {
  return nlohmann::json{{"image_id", image_id},
                        {"detections", detections_to_json(dets)},
                        {"timing", {{"total_ms", total_ms},
                                    {"compute_ms", compute_ms},
                                    {"worker_id", worker_id}}}};
}

inline nlohmann::json error_response_json(const std::string& image_id, const std::string& error) {
  return nlohmann::json{{"image_id", image_id}, {"error", error}};
}

}  // namespace fogsight
