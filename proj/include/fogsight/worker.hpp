#pragma once

// Worker-side core, sans-I/O like the master's: the transport feeds frames
// and timer ticks in, and takes out frames to send plus "start a detection,
// call back after X ms" requests. Detection outcomes and latency samples are
// computed deterministically at task arrival, so a simulated run and a real
// socket run of the same script produce identical results.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "fogsight/clock.hpp"
#include "fogsight/detection.hpp"
#include "fogsight/preprocess.hpp"
#include "fogsight/wire.hpp"

namespace fogsight {

// --- Detection latency model --------------------------------------------------

struct LatencyModel {
  enum class Kind { Fixed, Uniform };
  Kind kind = Kind::Fixed;
  double base_ms = 0.0;
  double spread_ms = 0.0;  // uniform adds [0, spread) on top of base
};

// "fixed:BASE_MS" or "uniform:BASE_MS:SPREAD_MS".
inline LatencyModel parse_latency_model(const std::string& text) {
  LatencyModel m;
  const auto fail = [&]() {
    throw std::invalid_argument("latency model must be fixed:MS or uniform:MS:SPREAD, got '" +
                                text + "'");
  };
  const auto c1 = text.find(':');
  if (c1 == std::string::npos) fail();
  const std::string kind = text.substr(0, c1);
  try {
    if (kind == "fixed") {
      m.kind = LatencyModel::Kind::Fixed;
      std::size_t used = 0;
      m.base_ms = std::stod(text.substr(c1 + 1), &used);
      if (used != text.size() - c1 - 1) fail();
    } else if (kind == "uniform") {
      const auto c2 = text.find(':', c1 + 1);
      if (c2 == std::string::npos) fail();
      m.kind = LatencyModel::Kind::Uniform;
      m.base_ms = std::stod(text.substr(c1 + 1, c2 - c1 - 1));
      std::size_t used = 0;
      m.spread_ms = std::stod(text.substr(c2 + 1), &used);
      if (used != text.size() - c2 - 1) fail();
    } else {
      fail();
    }
  } catch (const std::invalid_argument&) {
    fail();
  } catch (const std::out_of_range&) {
    fail();
  }
  if (m.base_ms < 0 || m.spread_ms < 0) fail();
  return m;
}

inline std::string to_string(const LatencyModel& m) {
  char buf[64];
  if (m.kind == LatencyModel::Kind::Fixed) {
    std::snprintf(buf, sizeof(buf), "fixed:%g", m.base_ms);
  } else {
    std::snprintf(buf, sizeof(buf), "uniform:%g:%g", m.base_ms, m.spread_ms);
  }
  return buf;
}

// --- Detector -----------------------------------------------------------------

// Mock detector: returns a canned detection list after a modeled delay.
struct MockDetector {
  LatencyModel latency;
  std::vector<Detection> canned;
};

// Grid-fixture detector: loads <dir>/<image_id>.grid, decodes the prediction
// grid, and runs per-class suppression. The delay is still modeled so runs
// stay reproducible.
struct TensorFileDetector {
  std::string dir;
  double score_threshold = kDefaultScoreThreshold;
  double iou_threshold = kDefaultIouThreshold;
  LatencyModel latency;  // defaults to fixed:0
};

using DetectorSpec = std::variant<MockDetector, TensorFileDetector>;

struct DetectOutcome {
  std::vector<Detection> detections;
  std::string error;  // non-empty means the attempt failed
  bool ok() const { return error.empty(); }
};

// --- Worker core actions --------------------------------------------------------

struct WSendFrame {
  std::uint8_t msg_type = 0;
  std::string header;
  SharedBytes payload;  // null for control frames
  std::string task_id;
  std::string image_id;
};

// Ask the transport to call on_detect_done(task_id) after delay_us.
struct WStartDetect {
  std::string task_id;
  std::string image_id;
  micros_t delay_us = 0;
};

struct WLog {
  std::string line;
};

using WorkerAction = std::variant<WSendFrame, WStartDetect, WLog>;

// --- Core -----------------------------------------------------------------------

class WorkerCore {
 public:
  WorkerCore(std::string worker_id, Tier tier, int slots, DetectorSpec detector,
             std::uint64_t seed,
             micros_t heartbeat_interval_us = 2'000'000)
      : worker_id_(std::move(worker_id)),
        tier_(tier),
        slots_(slots),
        detector_(std::move(detector)),
        rng_(seed),
        heartbeat_interval_us_(heartbeat_interval_us) {
    if (slots_ < 1) throw std::invalid_argument("worker needs at least one slot");
  }

  const std::string& worker_id() const { return worker_id_; }
  int slots() const { return slots_; }
  int busy() const { return busy_; }

  void on_start(micros_t now) {
    RegisterEnvelope reg{worker_id_, tier_, slots_};
    actions_.push_back(WSendFrame{kMsgRegister, register_header(reg), nullptr, "", ""});
    last_heartbeat_sent_us_ = now;
    log(now, "registered");
  }

  void on_frame(micros_t now, const Frame& frame) {
    switch (frame.msg_type) {
      case kMsgTask:
        on_task(now, frame);
        break;
      case kMsgError: {
        // The master refused us (for example a duplicate id); surface it.
        log(now, "master_error");
        rejected_ = true;
        break;
      }
      default:
        log(now, "unexpected_frame");
        break;
    }
  }

  void on_detect_done(micros_t now, const std::string& task_id) {
    auto it = pending_.find(task_id);
    if (it == pending_.end()) return;
    Pending p = std::move(it->second);
    pending_.erase(it);
    --busy_;
    if (p.outcome.ok()) {
      ResultEnvelope res;
      res.task_id = task_id;
      res.worker_id = worker_id_;
      res.detections = p.outcome.detections;
      res.compute_ms = p.compute_ms;
      actions_.push_back(
          WSendFrame{kMsgResult, result_header(res), nullptr, task_id, p.image_id});
      log(now, "result_sent task=" + task_id);
    } else {
      ErrorEnvelope err{task_id, worker_id_, p.outcome.error};
      actions_.push_back(WSendFrame{kMsgError, error_header(err), nullptr, task_id, p.image_id});
      log(now, "error_sent task=" + task_id);
    }
  }

  void on_tick(micros_t now) {
    if (now - last_heartbeat_sent_us_ >= heartbeat_interval_us_) {
      actions_.push_back(
          WSendFrame{kMsgHeartbeat, heartbeat_header(worker_id_), nullptr, "", ""});
      last_heartbeat_sent_us_ = now;
    }
  }

  bool rejected() const { return rejected_; }
  std::vector<WorkerAction> take_actions() { return std::exchange(actions_, {}); }

  // The modeled delay for the next detection; exposed for tests.
  double sample_latency_ms(const LatencyModel& m) {
    if (m.kind == LatencyModel::Kind::Fixed) return m.base_ms;
    return m.base_ms + uniform01(rng_) * m.spread_ms;
  }

 private:
  struct Pending {
    std::string image_id;
    DetectOutcome outcome;
    double compute_ms = 0.0;
  };

  void on_task(micros_t now, const Frame& frame) {
    TaskEnvelope env;
    try {
      nlohmann::json j = nlohmann::json::parse(frame.header);
      env = parse_task_header(j);
    } catch (const std::exception&) {
      log(now, "bad_task_header");
      return;
    }
    if (busy_ >= slots_) {
      ErrorEnvelope err{env.task_id, worker_id_, "no free slot"};
      actions_.push_back(
          WSendFrame{kMsgError, error_header(err), nullptr, env.task_id, env.image_id});
      log(now, "slot_rejected task=" + env.task_id);
      return;
    }
    ++busy_;
    Pending p;
    p.image_id = env.image_id;
    p.outcome = run_detector(env, frame.payload);
    p.compute_ms = sample_latency_ms(latency_model());
    const micros_t delay = static_cast<micros_t>(std::llround(p.compute_ms * 1000.0));
    pending_[env.task_id] = std::move(p);
    actions_.push_back(WStartDetect{env.task_id, env.image_id, delay});
    log(now, "detect_started task=" + env.task_id);
  }

  const LatencyModel& latency_model() const {
    if (const auto* mock = std::get_if<MockDetector>(&detector_)) return mock->latency;
    return std::get<TensorFileDetector>(detector_).latency;
  }

  DetectOutcome run_detector(const TaskEnvelope& env, const std::vector<std::uint8_t>& payload) {
    DetectOutcome out;
    if (const auto* mock = std::get_if<MockDetector>(&detector_)) {
      out.detections = mock->canned;
      return out;
    }
    const auto& tf = std::get<TensorFileDetector>(detector_);
    const std::string path = tf.dir + "/" + env.image_id + ".grid";
    try {
      GridTensor tensor = read_grid_file(path);
      std::vector<Detection> dets = decode(tensor, tf.score_threshold);
      out.detections = nms(dets, tf.iou_threshold);
    } catch (const std::exception& e) {
      out.error = e.what();
    }
    return out;
  }

  void log(micros_t now, const std::string& what) {
    actions_.push_back(
        WLog{"ts_us=" + std::to_string(now) + " worker=" + worker_id_ + " " + what});
  }

  std::string worker_id_;
  Tier tier_;
  int slots_;
  DetectorSpec detector_;
  std::uint64_t rng_;
  micros_t heartbeat_interval_us_;
  micros_t last_heartbeat_sent_us_ = 0;
  int busy_ = 0;
  bool rejected_ = false;
  std::map<std::string, Pending> pending_;
  std::vector<WorkerAction> actions_;
};

}  // namespace fogsight
