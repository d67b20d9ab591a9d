#pragma once

// Scenario-driven simulation of a full deployment: a client/gateway, the
// master, and a set of workers joined by modeled links, all running on a
// virtual microsecond clock. The master and worker cores are the same objects
// the socket transport drives, so simulated runs exercise the real
// orchestration logic; only time, links, and the detector delay are modeled.
//
// Wire accounting:
//  * gateway <-> master rides a compact binary envelope: requests carry a
//    16-byte fixed header (u32 total, u8 mode, u8 format, u8 flags, u8 id_len,
//    u32 width, u32 height) plus the image id and the raw body; responses
//    carry a 9-byte header (u32 total, u8 status, u32 json_len) plus JSON.
//  * master <-> worker legs are counted at the exact framed size the socket
//    transport would send.
//
// A link transfer takes latency_ms plus size/bandwidth, rounded up to whole
// microseconds.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "fogsight/clock.hpp"
#include "fogsight/master.hpp"
#include "fogsight/metrics.hpp"
#include "fogsight/preprocess.hpp"
#include "fogsight/wire.hpp"
#include "fogsight/worker.hpp"

namespace fogsight {

class ScenarioError : public std::runtime_error {
 public:
  explicit ScenarioError(const std::string& msg) : std::runtime_error(msg) {}
};

// --- Links ---------------------------------------------------------------------

struct LinkModel {
  double latency_ms = 0.0;
  std::int64_t bandwidth_bytes_per_s = 0;

  micros_t transfer_us(std::uint64_t bytes) const {
    const micros_t prop = static_cast<micros_t>(std::llround(latency_ms * 1000.0));
    const std::int64_t b = static_cast<std::int64_t>(bytes);
    const micros_t serial =
        (b * 1'000'000 + bandwidth_bytes_per_s - 1) / bandwidth_bytes_per_s;
    return prop + serial;
  }
};

// Gateway envelope sizes (see the header comment).
inline std::uint64_t sim_request_bytes(std::size_t image_id_len, std::uint64_t body_len) {
  return 16 + image_id_len + body_len;
}
inline std::uint64_t sim_response_bytes(std::size_t json_len) { return 9 + json_len; }

// --- Scenario ------------------------------------------------------------------

struct PayloadSpec {
  ImageFormat format = ImageFormat::Opaque;
  std::uint64_t bytes = 943718;          // opaque body size as captured
  std::uint64_t rescaled_bytes = 4956;   // opaque body size after client-side rescale
  int width = 3840;
  int height = 2160;
  bool client_rescale = false;  // client shrinks the body before sending
};

struct ScenarioWorker {
  std::string worker_id;
  Tier tier = Tier::Fog;
  int slots = 4;
  std::string latency_model = "fixed:100";
  LinkModel link;
  PowerParams power;
  std::string grid_dir;  // non-empty: grid-fixture detector instead of the mock
};

struct Fault {
  enum class Kind { Kill, Stall };
  Kind kind = Kind::Kill;
  std::string worker;
  double at_s = 0.0;                  // kill: instant of permanent silence
  double from_s = 0.0, until_s = 0.0; // stall: outbound frames held in [from, until)
};

inline std::vector<Detection> default_canned_detections() {
  Detection d;
  d.class_id = 0;
  d.score = 0.9;
  d.box = {0.5, 0.5, 0.2, 0.2};
  return {d};
}

struct Scenario {
  std::string name;
  Mode mode = Mode::HighAccuracy;
  std::uint64_t seed = 7;
  double duration_s = 600.0;
  double rate_per_min = 10.0;
  LinkModel client_link{2.0, 12'500'000};
  PayloadSpec payload;
  std::vector<ScenarioWorker> workers;
  PowerParams master_power{10.0, 15.0};
  PowerParams gateway_power{2.0, 3.0};
  std::vector<Fault> faults;
  // What mock workers report. Empty is normalized to the single default box.
  std::vector<Detection> canned_detections = default_canned_detections();
};

// --- Scenario JSON -------------------------------------------------------------

inline nlohmann::json link_to_json(const LinkModel& l) {
  return {{"latency_ms", l.latency_ms}, {"bandwidth_bytes_per_s", l.bandwidth_bytes_per_s}};
}
inline LinkModel link_from_json(const nlohmann::json& j) {
  return {j.at("latency_ms").get<double>(), j.at("bandwidth_bytes_per_s").get<std::int64_t>()};
}
inline nlohmann::json power_to_json(const PowerParams& p) {
  return {{"idle_watts", p.idle_watts}, {"busy_watts", p.busy_watts}};
}
inline PowerParams power_from_json(const nlohmann::json& j) {
  return {j.at("idle_watts").get<double>(), j.at("busy_watts").get<double>()};
}

inline nlohmann::json scenario_to_json(const Scenario& sc) {
  nlohmann::json workers = nlohmann::json::array();
  for (const ScenarioWorker& w : sc.workers) {
    workers.push_back({{"worker_id", w.worker_id},
                       {"tier", to_string(w.tier)},
                       {"slots", w.slots},
                       {"latency_model", w.latency_model},
                       {"link", link_to_json(w.link)},
                       {"power", power_to_json(w.power)},
                       {"grid_dir", w.grid_dir}});
  }
  nlohmann::json faults = nlohmann::json::array();
  for (const Fault& f : sc.faults) {
    if (f.kind == Fault::Kind::Kill) {
      faults.push_back({{"kind", "kill"}, {"worker", f.worker}, {"at_s", f.at_s}});
    } else {
      faults.push_back(
          {{"kind", "stall"}, {"worker", f.worker}, {"from_s", f.from_s}, {"until_s", f.until_s}});
    }
  }
  return nlohmann::json{{"name", sc.name},
                        {"mode", to_string(sc.mode)},
                        {"seed", sc.seed},
                        {"duration_s", sc.duration_s},
                        {"rate_per_min", sc.rate_per_min},
                        {"client_link", link_to_json(sc.client_link)},
                        {"payload",
                         {{"format", to_string(sc.payload.format)},
                          {"bytes", sc.payload.bytes},
                          {"rescaled_bytes", sc.payload.rescaled_bytes},
                          {"width", sc.payload.width},
                          {"height", sc.payload.height},
                          {"client_rescale", sc.payload.client_rescale}}},
                        {"workers", workers},
                        {"master_power", power_to_json(sc.master_power)},
                        {"gateway_power", power_to_json(sc.gateway_power)},
                        {"faults", faults},
                        {"canned_detections", detections_to_json(sc.canned_detections)}};
}

inline Scenario scenario_from_json(const nlohmann::json& j) {
  Scenario sc;
  try {
    sc.name = j.at("name").get<std::string>();
    auto mode = parse_mode(j.at("mode").get<std::string>());
    if (!mode) throw ScenarioError("unknown mode: " + j.at("mode").get<std::string>());
    sc.mode = *mode;
    sc.seed = j.at("seed").get<std::uint64_t>();
    sc.duration_s = j.at("duration_s").get<double>();
    sc.rate_per_min = j.at("rate_per_min").get<double>();
    sc.client_link = link_from_json(j.at("client_link"));
    const nlohmann::json& p = j.at("payload");
    auto fmt = parse_image_format(p.at("format").get<std::string>());
    if (!fmt) throw ScenarioError("unknown payload format");
    sc.payload.format = *fmt;
    sc.payload.bytes = p.at("bytes").get<std::uint64_t>();
    sc.payload.rescaled_bytes = p.value("rescaled_bytes", std::uint64_t{4956});
    sc.payload.width = p.at("width").get<int>();
    sc.payload.height = p.at("height").get<int>();
    sc.payload.client_rescale = p.value("client_rescale", false);
    for (const nlohmann::json& wj : j.at("workers")) {
      ScenarioWorker w;
      w.worker_id = wj.at("worker_id").get<std::string>();
      auto tier = parse_tier(wj.at("tier").get<std::string>());
      if (!tier) throw ScenarioError("unknown tier for worker " + w.worker_id);
      w.tier = *tier;
      w.slots = wj.at("slots").get<int>();
      w.latency_model = wj.at("latency_model").get<std::string>();
      w.link = link_from_json(wj.at("link"));
      w.power = power_from_json(wj.at("power"));
      w.grid_dir = wj.value("grid_dir", "");
      sc.workers.push_back(std::move(w));
    }
    sc.master_power = power_from_json(j.at("master_power"));
    sc.gateway_power = power_from_json(j.at("gateway_power"));
    for (const nlohmann::json& fj : j.value("faults", nlohmann::json::array())) {
      Fault f;
      const std::string kind = fj.at("kind").get<std::string>();
      f.worker = fj.at("worker").get<std::string>();
      if (kind == "kill") {
        f.kind = Fault::Kind::Kill;
        f.at_s = fj.at("at_s").get<double>();
      } else if (kind == "stall") {
        f.kind = Fault::Kind::Stall;
        f.from_s = fj.at("from_s").get<double>();
        f.until_s = fj.at("until_s").get<double>();
      } else {
        throw ScenarioError("unknown fault kind: " + kind);
      }
      sc.faults.push_back(f);
    }
    if (j.contains("canned_detections")) {
      sc.canned_detections.clear();
      for (const nlohmann::json& dj : j.at("canned_detections")) {
        sc.canned_detections.push_back(detection_from_json(dj));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ScenarioError(std::string("scenario json: ") + e.what());
  }
  if (sc.canned_detections.empty()) sc.canned_detections = default_canned_detections();
  return sc;
}

inline void validate_scenario(const Scenario& sc) {
  const auto bad = [&](const std::string& what) {
    throw ScenarioError("scenario '" + sc.name + "': " + what);
  };
  if (sc.name.empty()) throw ScenarioError("scenario needs a name");
  for (char c : sc.name) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-' && c != '.') {
      bad("name must be filesystem-safe ([A-Za-z0-9._-])");
    }
  }
  if (!(sc.duration_s >= 0) || !std::isfinite(sc.duration_s)) bad("duration must be >= 0");
  if (!(sc.rate_per_min >= 0) || !std::isfinite(sc.rate_per_min)) bad("rate must be >= 0");
  const auto check_link = [&](const LinkModel& l, const std::string& which) {
    if (!(l.latency_ms >= 0)) bad(which + ": latency must be >= 0");
    if (l.bandwidth_bytes_per_s <= 0) bad(which + ": bandwidth must be positive");
  };
  const auto check_power = [&](const PowerParams& p, const std::string& which) {
    if (p.idle_watts < 0 || p.busy_watts < p.idle_watts) {
      bad(which + ": power must satisfy 0 <= idle <= busy");
    }
  };
  check_link(sc.client_link, "client link");
  check_power(sc.master_power, "master power");
  check_power(sc.gateway_power, "gateway power");
  if (sc.payload.bytes < 1 || sc.payload.rescaled_bytes < 1) bad("payload sizes must be >= 1");
  if (sc.payload.width < 1 || sc.payload.height < 1) bad("payload dims must be >= 1");
  std::set<std::string> ids;
  for (const ScenarioWorker& w : sc.workers) {
    if (w.worker_id.empty()) bad("worker id must not be empty");
    if (w.worker_id == "master" || w.worker_id == "gateway") {
      bad("worker id '" + w.worker_id + "' is reserved");
    }
    if (!ids.insert(w.worker_id).second) bad("duplicate worker id " + w.worker_id);
    if (w.slots < 1) bad("worker " + w.worker_id + ": slots must be >= 1");
    try {
      parse_latency_model(w.latency_model);
    } catch (const std::invalid_argument& e) {
      bad("worker " + w.worker_id + ": " + e.what());
    }
    check_link(w.link, "worker " + w.worker_id + " link");
    check_power(w.power, "worker " + w.worker_id + " power");
  }
  for (const Fault& f : sc.faults) {
    if (!ids.count(f.worker)) bad("fault names unknown worker " + f.worker);
    if (f.kind == Fault::Kind::Kill) {
      if (!(f.at_s >= 0)) bad("kill time must be >= 0");
    } else {
      if (!(f.from_s >= 0) || !(f.until_s > f.from_s)) bad("stall window must be 0 <= from < until");
    }
  }
}

inline Scenario load_scenario_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ScenarioError("cannot open scenario: " + path);
  nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
  if (j.is_discarded()) throw ScenarioError("scenario is not valid JSON: " + path);
  Scenario sc = scenario_from_json(j);
  validate_scenario(sc);
  return sc;
}

inline void save_scenario_file(const std::string& path, const Scenario& sc) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ScenarioError("cannot write scenario: " + path);
  f << scenario_to_json(sc).dump(2) << '\n';
}

// Client request instants: evenly spaced from t=0, rate_per_min per minute,
// strictly inside the scenario window.
inline std::vector<micros_t> injection_schedule(double rate_per_min, micros_t duration_us) {
  std::vector<micros_t> out;
  if (rate_per_min <= 0 || duration_us <= 0) return out;
  for (std::uint64_t i = 0;; ++i) {
    const micros_t t = static_cast<micros_t>(std::llround(static_cast<double>(i) * 60e6 /
                                                          rate_per_min));
    if (t >= duration_us) break;
    out.push_back(t);
  }
  return out;
}

// --- Run result ------------------------------------------------------------------

struct GatewayRecord {
  std::uint64_t submission_id = 0;
  std::string image_id;
  micros_t inject_us = 0;
  std::optional<micros_t> response_us;
  int http_status = 0;
  nlohmann::json body;
};

struct RunResult {
  Scenario scenario;
  MetricsReport report;
  RunLedger ledger;
  std::vector<std::string> task_log;
  std::vector<GatewayRecord> gateway;
};

namespace detail {

// What the client actually puts on the wire for every request of a scenario.
struct MaterializedBody {
  SharedBytes bytes;
  int width = 0;
  int height = 0;
  ImageFormat format = ImageFormat::Opaque;
  bool pre_rescaled = false;
};

inline std::vector<std::uint8_t> deterministic_bytes(std::size_t n, std::uint64_t seed) {
  std::vector<std::uint8_t> out(n);
  std::uint64_t rng = seed;
  std::size_t i = 0;
  while (i + 8 <= n) {
    const std::uint64_t x = splitmix64(rng);
    for (int b = 0; b < 8; ++b) out[i++] = static_cast<std::uint8_t>(x >> (8 * b));
  }
  std::uint64_t x = splitmix64(rng);
  while (i < n) {
    out[i++] = static_cast<std::uint8_t>(x);
    x >>= 8;
  }
  return out;
}

inline MaterializedBody materialize_body(const PayloadSpec& p, Mode mode, std::uint64_t seed) {
  MaterializedBody m;
  m.format = p.format;
  const bool shrink = mode == Mode::LowLatency && p.client_rescale;
  if (p.format == ImageFormat::Opaque) {
    const std::uint64_t n = shrink ? p.rescaled_bytes : p.bytes;
    m.bytes = make_bytes(deterministic_bytes(static_cast<std::size_t>(n), seed));
    if (shrink) {
      const Dims d = rescale_dims(p.width, p.height, 200);
      m.width = d.width;
      m.height = d.height;
      m.pre_rescaled = true;
    } else {
      m.width = p.width;
      m.height = p.height;
    }
    return m;
  }
  PpmImage img;
  img.width = p.width;
  img.height = p.height;
  img.pixels = deterministic_bytes(static_cast<std::size_t>(p.width) * p.height * 3, seed);
  ImagePayload full;
  full.image_id = "body";
  full.width = p.width;
  full.height = p.height;
  full.format = ImageFormat::PpmP6;
  full.bytes = make_bytes(write_ppm(img));
  if (shrink) {
    ImagePayload small = prepare(full, Mode::LowLatency, 200);
    m.bytes = small.bytes;
    m.width = small.width;
    m.height = small.height;
    m.pre_rescaled = true;
  } else {
    m.bytes = full.bytes;
    m.width = full.width;
    m.height = full.height;
  }
  return m;
}

class SimDriver {
 public:
  explicit SimDriver(const Scenario& sc) : sc_(sc) {
    validate_scenario(sc_);
    duration_us_ = static_cast<micros_t>(std::llround(sc_.duration_s * 1e6));
    grace_deadline_us_ = duration_us_ + 120'000'000;
  }

  RunResult run() {
    for (const ScenarioWorker& w : sc_.workers) {
      if (!w.grid_dir.empty() && !std::filesystem::is_directory(w.grid_dir)) {
        throw ScenarioError("worker " + w.worker_id + ": grid_dir does not exist: " + w.grid_dir);
      }
    }
    build_workers();
    schedule_faults();

    body_ = materialize_body(sc_.payload, sc_.mode, derive_seed(sc_.seed, 0xb0d7));
    const std::vector<micros_t> schedule = injection_schedule(sc_.rate_per_min, duration_us_);
    records_.resize(schedule.size());
    for (std::size_t i = 0; i < schedule.size(); ++i) {
      records_[i].submission_id = i + 1;
      records_[i].image_id = "img-" + std::to_string(i + 1);
      records_[i].inject_us = schedule[i];
      clock_.schedule_at(schedule[i], [this, i] { inject(i); });
    }

    for (std::size_t i = 0; i < workers_.size(); ++i) {
      clock_.schedule_at(0, [this, i] {
        workers_[i].core->on_start(clock_.now());
        process_worker_actions(i);
      });
      clock_.schedule_at(kHeartbeatIntervalUs, [this, i] { worker_tick(i); });
    }
    clock_.schedule_at(1'000'000, [this] { master_tick(); });

    if (records_.empty()) halted_ = true;
    while (clock_.step()) {
      if (!halted_ && resolved_ == records_.size()) halted_ = true;
    }
    for (const GatewayRecord& r : records_) {
      if (!r.response_us) {
        throw std::runtime_error("scenario '" + sc_.name + "' did not converge: request " +
                                 r.image_id + " never resolved");
      }
    }
    return finish();
  }

 private:
  static constexpr micros_t kHeartbeatIntervalUs = 2'000'000;

  struct SimWorker {
    std::unique_ptr<WorkerCore> core;
    std::string id;
    Tier tier = Tier::Fog;
    int conn = 0;
    LinkModel link;
    PowerParams power;
    std::vector<std::pair<micros_t, micros_t>> stalls;  // [from, until)
    bool killed = false;
    int active = 0;
    micros_t busy_since = 0;
    micros_t busy_us = 0;
  };

  void build_workers() {
    for (std::size_t i = 0; i < sc_.workers.size(); ++i) {
      const ScenarioWorker& spec = sc_.workers[i];
      DetectorSpec det;
      if (spec.grid_dir.empty()) {
        MockDetector mock;
        mock.latency = parse_latency_model(spec.latency_model);
        mock.canned = sc_.canned_detections;
        det = mock;
      } else {
        TensorFileDetector tf;
        tf.dir = spec.grid_dir;
        tf.latency = parse_latency_model(spec.latency_model);
        det = tf;
      }
      SimWorker w;
      w.core = std::make_unique<WorkerCore>(spec.worker_id, spec.tier, spec.slots, det,
                                            derive_seed(sc_.seed, i), kHeartbeatIntervalUs);
      w.id = spec.worker_id;
      w.tier = spec.tier;
      w.conn = static_cast<int>(i) + 1;
      w.link = spec.link;
      w.power = spec.power;
      workers_.push_back(std::move(w));
    }
  }

  void schedule_faults() {
    for (const Fault& f : sc_.faults) {
      const std::size_t idx = worker_index(f.worker);
      if (f.kind == Fault::Kind::Kill) {
        clock_.schedule_at(static_cast<micros_t>(std::llround(f.at_s * 1e6)),
                           [this, idx] { kill_worker(idx); });
      } else {
        workers_[idx].stalls.push_back({static_cast<micros_t>(std::llround(f.from_s * 1e6)),
                                        static_cast<micros_t>(std::llround(f.until_s * 1e6))});
      }
    }
  }

  std::size_t worker_index(const std::string& id) const {
    for (std::size_t i = 0; i < workers_.size(); ++i) {
      if (workers_[i].id == id) return i;
    }
    throw ScenarioError("unknown worker: " + id);
  }

  void kill_worker(std::size_t idx) {
    if (halted_) return;
    SimWorker& w = workers_[idx];
    if (w.killed) return;
    w.killed = true;
    if (w.active > 0) {
      close_busy_interval(w, clock_.now());
      w.active = 0;
    }
  }

  void close_busy_interval(SimWorker& w, micros_t now) {
    // Energy is integrated over [0, duration]; clip the interval to it.
    const micros_t start = std::min(w.busy_since, duration_us_);
    const micros_t end = std::min(now, duration_us_);
    if (end > start) w.busy_us += end - start;
  }

  void inject(std::size_t i) {
    if (halted_) return;
    GatewayRecord& rec = records_[i];
    const std::uint64_t wire = sim_request_bytes(rec.image_id.size(), body_.bytes->size());
    const micros_t now = clock_.now();
    const micros_t arrive = now + sc_.client_link.transfer_us(wire);
    ledger_.entries.push_back(
        {"", rec.image_id, Direction::GatewayToMaster, wire, now, arrive});
    clock_.schedule_at(arrive, [this, i] {
      if (halted_) return;
      GatewayRecord& r = records_[i];
      Submission s;
      s.submission_id = r.submission_id;
      s.image_id = r.image_id;
      s.mode = sc_.mode;
      s.format = body_.format;
      s.width = body_.width;
      s.height = body_.height;
      s.pre_rescaled = body_.pre_rescaled;
      s.payload = body_.bytes;
      master_.submit(clock_.now(), s);
      process_master_actions();
    });
  }

  void master_tick() {
    if (halted_) return;
    master_.on_tick(clock_.now());
    process_master_actions();
    if (clock_.now() + 1'000'000 <= grace_deadline_us_) {
      clock_.schedule_in(1'000'000, [this] { master_tick(); });
    }
  }

  void worker_tick(std::size_t idx) {
    if (halted_ || workers_[idx].killed) return;
    workers_[idx].core->on_tick(clock_.now());
    process_worker_actions(idx);
    if (clock_.now() + kHeartbeatIntervalUs <= grace_deadline_us_) {
      clock_.schedule_in(kHeartbeatIntervalUs, [this, idx] { worker_tick(idx); });
    }
  }

  void process_master_actions() {
    for (MasterAction& a : master_.take_actions()) {
      if (auto* send = std::get_if<SendFrame>(&a)) {
        deliver_to_worker(*send);
      } else if (auto* done = std::get_if<CompleteAction>(&a)) {
        send_response(*done);
      } else {
        const std::string& line = std::get<LogAction>(a).line;
        task_log_.push_back(line);
        record_failure_if_any(line);
      }
    }
  }

  void record_failure_if_any(const std::string& line) {
    auto kv = parse_log_line(line);
    const std::string ev = kv.count("event") ? kv["event"] : "";
    if (ev != "task_failed" && ev != "submission_rejected") return;
    FailureEntry f;
    f.task_id = kv["task"] == "-" ? "" : kv["task"];
    f.image_id = kv["image"] == "-" ? "" : kv["image"];
    f.time_us = kv.count("ts_us") ? std::stoll(kv["ts_us"]) : 0;
    f.reason = kv.count("reason") ? kv["reason"] : "";
    ledger_.failures.push_back(std::move(f));
  }

  void deliver_to_worker(const SendFrame& send) {
    const std::size_t idx = static_cast<std::size_t>(send.conn_id - 1);
    SimWorker& w = workers_[idx];
    const std::uint64_t wire =
        frame_wire_size(send.header.size(), send.payload ? send.payload->size() : 0);
    const micros_t now = clock_.now();
    const micros_t arrive = now + w.link.transfer_us(wire);
    ledger_.entries.push_back(
        {send.task_id, send.image_id, Direction::MasterToWorker, wire, now, arrive});
    // Copy shared payload bytes into the frame the worker core sees.
    Frame frame;
    frame.msg_type = send.msg_type;
    frame.header = send.header;
    if (send.payload) frame.payload = *send.payload;
    clock_.schedule_at(arrive, [this, idx, frame = std::move(frame)] {
      if (halted_ || workers_[idx].killed) return;
      workers_[idx].core->on_frame(clock_.now(), frame);
      process_worker_actions(idx);
    });
  }

  void send_response(const CompleteAction& done) {
    const std::size_t i = static_cast<std::size_t>(done.submission_id - 1);
    GatewayRecord& rec = records_[i];
    const std::string body = done.body.dump();
    const std::uint64_t wire = sim_response_bytes(body.size());
    const micros_t now = clock_.now();
    const micros_t arrive = now + sc_.client_link.transfer_us(wire);
    ledger_.entries.push_back(
        {"", rec.image_id, Direction::MasterToGateway, wire, now, arrive});
    clock_.schedule_at(arrive, [this, i, status = done.http_status, payload = done.body] {
      GatewayRecord& r = records_[i];
      r.response_us = clock_.now();
      r.http_status = status;
      r.body = payload;
      ++resolved_;
    });
  }

  void process_worker_actions(std::size_t idx) {
    SimWorker& w = workers_[idx];
    for (WorkerAction& a : w.core->take_actions()) {
      if (auto* start = std::get_if<WStartDetect>(&a)) {
        if (w.active++ == 0) w.busy_since = clock_.now();
        clock_.schedule_in(start->delay_us, [this, idx, task = start->task_id] {
          SimWorker& w2 = workers_[idx];
          if (halted_ || w2.killed) return;
          if (--w2.active == 0) close_busy_interval(w2, clock_.now());
          w2.core->on_detect_done(clock_.now(), task);
          process_worker_actions(idx);
        });
      } else if (auto* send = std::get_if<WSendFrame>(&a)) {
        send_worker_frame(idx, *send);
      }
      // WLog entries are transport-level chatter; the master log is the record.
    }
  }

  void send_worker_frame(std::size_t idx, const WSendFrame& send) {
    SimWorker& w = workers_[idx];
    micros_t wire_at = clock_.now();
    for (const auto& [from, until] : w.stalls) {
      if (wire_at >= from && wire_at < until) {
        wire_at = until;  // held by the fault, flushed when the window ends
        break;
      }
    }
    clock_.schedule_at(wire_at, [this, idx, send] {
      SimWorker& w2 = workers_[idx];
      if (halted_ || w2.killed) return;
      const std::uint64_t wire =
          frame_wire_size(send.header.size(), send.payload ? send.payload->size() : 0);
      const micros_t now = clock_.now();
      const micros_t arrive = now + w2.link.transfer_us(wire);
      ledger_.entries.push_back(
          {send.task_id, send.image_id, Direction::WorkerToMaster, wire, now, arrive});
      Frame frame;
      frame.msg_type = send.msg_type;
      frame.header = send.header;
      if (send.payload) frame.payload = *send.payload;
      clock_.schedule_at(arrive, [this, idx, frame = std::move(frame)] {
        if (halted_) return;
        master_.on_frame(clock_.now(), workers_[idx].conn, frame);
        process_master_actions();
      });
    });
  }

  RunResult finish() {
    RunResult out;
    out.scenario = sc_;
    out.ledger = std::move(ledger_);
    out.task_log = std::move(task_log_);
    out.gateway = std::move(records_);

    // Close out any busy interval still open at the horizon (a compute whose
    // result was never needed, for example a stalled duplicate).
    for (SimWorker& w : workers_) {
      if (w.active > 0 && !w.killed) close_busy_interval(w, duration_us_);
    }

    std::istringstream log_stream(join_lines(out.task_log));
    out.ledger.completions = completions_from_task_log(log_stream);

    MetricsReport& r = out.report;
    r.scenario = sc_.name;
    r.mode = to_string(sc_.mode);
    r.seed = sc_.seed;
    r.duration_s = sc_.duration_s;
    r.injected = out.gateway.size();

    std::vector<const GatewayRecord*> oks;
    for (const GatewayRecord& g : out.gateway) {
      if (g.http_status == 200) oks.push_back(&g);
    }
    r.completed = oks.size();
    r.failed = r.injected - r.completed;
    if (r.completed != out.ledger.completions.size()) {
      throw std::logic_error("completion accounting mismatch: gateway saw " +
                             std::to_string(r.completed) + ", task log has " +
                             std::to_string(out.ledger.completions.size()));
    }
    std::sort(oks.begin(), oks.end(), [](const GatewayRecord* a, const GatewayRecord* b) {
      if (*a->response_us != *b->response_us) return *a->response_us < *b->response_us;
      return a->submission_id < b->submission_id;
    });
    std::vector<double> resp_ms;
    std::vector<micros_t> done_at;
    for (const GatewayRecord* g : oks) {
      resp_ms.push_back(static_cast<double>(*g->response_us - g->inject_us) / 1000.0);
      done_at.push_back(*g->response_us);
    }
    double sum = 0.0;
    for (double v : resp_ms) sum += v;
    r.mean_response_ms = resp_ms.empty() ? 0.0 : sum / static_cast<double>(resp_ms.size());
    r.jitter_ms = resp_ms.size() >= 2 ? jitter_ms(resp_ms) : 0.0;
    r.fpm = duration_us_ > 0 ? fpm(done_at, duration_us_) : 0.0;

    for (int d = 0; d < 4; ++d) {
      const Direction dir = static_cast<Direction>(d);
      bool any = false;
      for (const LedgerEntry& e : out.ledger.entries) {
        if (e.send_time_us > e.recv_time_us) throw std::logic_error("ledger entry goes backwards");
        any = any || e.direction == dir;
      }
      if (any && duration_us_ > 0) {
        BandwidthStat st = bandwidth(out.ledger.entries, dir, duration_us_);
        r.bytes_by_dir[d] = st.total_bytes;
        r.bpm_by_dir[d] = st.bytes_per_minute;
      }
    }

    std::map<std::string, double> busy;
    std::map<std::string, PowerParams> power;
    for (const SimWorker& w : workers_) {
      busy[w.id] = static_cast<double>(w.busy_us) / 1e6;
      power[w.id] = w.power;
    }
    busy["master"] = 0.0;   // orchestration cost is modeled as idle draw
    busy["gateway"] = 0.0;
    power["master"] = sc_.master_power;
    power["gateway"] = sc_.gateway_power;
    EnergyResult e = energy(busy, power, sc_.duration_s);
    r.energy_master_j = e.per_node_j.at("master");
    r.energy_gateway_j = e.per_node_j.at("gateway");
    for (const SimWorker& w : workers_) {
      (w.tier == Tier::Fog ? r.energy_fog_j : r.energy_cloud_j) += e.per_node_j.at(w.id);
    }
    r.energy_total_j = e.total_j;
    return out;
  }

  static std::string join_lines(const std::vector<std::string>& lines) {
    std::string out;
    for (const std::string& l : lines) {
      out += l;
      out += '\n';
    }
    return out;
  }

  Scenario sc_;
  micros_t duration_us_ = 0;
  micros_t grace_deadline_us_ = 0;
  VirtualClock clock_;
  MasterCore master_;
  std::vector<SimWorker> workers_;
  std::vector<GatewayRecord> records_;
  MaterializedBody body_;
  RunLedger ledger_;
  std::vector<std::string> task_log_;
  std::size_t resolved_ = 0;
  bool halted_ = false;
};

}  // namespace detail

inline RunResult run_scenario(const Scenario& sc) { return detail::SimDriver(sc).run(); }

// Writes <dir>/<name>.scenario.json, .ledger.csv, .completions.csv,
// .failures.csv, .report.csv, and .task_log.txt.
inline void write_run_artifacts(const std::string& dir, const RunResult& r) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const std::string base = (fs::path(dir) / r.scenario.name).string();
  save_scenario_file(base + ".scenario.json", r.scenario);
  {
    std::ofstream f(base + ".ledger.csv", std::ios::trunc);
    write_ledger_csv(f, r.ledger.entries);
  }
  {
    std::ofstream f(base + ".completions.csv", std::ios::trunc);
    write_completions_csv(f, r.ledger.completions);
  }
  {
    std::ofstream f(base + ".failures.csv", std::ios::trunc);
    write_failures_csv(f, r.ledger.failures);
  }
  {
    std::ofstream f(base + ".report.csv", std::ios::trunc);
    write_report_csv(f, r.report);
  }
  {
    std::ofstream f(base + ".task_log.txt", std::ios::trunc);
    for (const std::string& line : r.task_log) f << line << '\n';
  }
}

// --- Reference suite --------------------------------------------------------------

// Eight scenarios: {single fog node, two fog nodes, near cloud, far cloud}
// x {accuracy, latency}. Rates, sizes, link speeds, compute times, and power
// draws are the suite's pinned defaults.
inline std::vector<Scenario> default_suite() {
  std::vector<Scenario> out;
  struct Topo {
    std::string name;
    int fog_count;
    bool cloud;
    double cloud_latency_ms;
  };
  const std::vector<Topo> topos = {
      {"fog_x1", 1, false, 0.0},
      {"fog_x2", 2, false, 0.0},
      {"cloud_near", 0, true, 50.0},
      {"cloud_far", 0, true, 150.0},
  };
  for (const Topo& topo : topos) {
    for (Mode mode : {Mode::HighAccuracy, Mode::LowLatency}) {
      Scenario sc;
      sc.name = topo.name + "_" + to_string(mode);
      sc.mode = mode;
      sc.seed = 7;
      sc.duration_s = 600.0;
      sc.rate_per_min = 10.0;
      sc.client_link = {2.0, 12'500'000};
      sc.payload.format = ImageFormat::Opaque;
      sc.payload.bytes = 943718;
      sc.payload.rescaled_bytes = 4956;
      sc.payload.width = 3840;
      sc.payload.height = 2160;
      sc.payload.client_rescale = mode == Mode::LowLatency;
      const std::string base_ms = mode == Mode::HighAccuracy ? "600" : "100";
      for (int i = 0; i < topo.fog_count; ++i) {
        ScenarioWorker w;
        w.worker_id = "fog-" + std::to_string(i + 1);
        w.tier = Tier::Fog;
        w.slots = 4;
        w.latency_model = "fixed:" + base_ms;
        w.link = {2.0, 12'500'000};
        w.power = {5.0, 10.0};
        sc.workers.push_back(w);
      }
      if (topo.cloud) {
        ScenarioWorker w;
        w.worker_id = "cloud-1";
        w.tier = Tier::Cloud;
        w.slots = 8;
        w.latency_model = "uniform:" + base_ms + ":80";
        w.link = {topo.cloud_latency_ms, 2'500'000};
        w.power = {50.0, 100.0};
        sc.workers.push_back(w);
      }
      sc.master_power = {10.0, 15.0};
      sc.gateway_power = {2.0, 3.0};
      sc.canned_detections = default_canned_detections();
      out.push_back(std::move(sc));
    }
  }
  return out;
}

// --- Cross-run sanity -----------------------------------------------------------

// Structural expectations over the reference suite's results: reduced-payload
// mode is faster than full-payload mode, fog beats cloud on response time,
// fixed fog compute keeps jitter near zero while cloud jitter is visible,
// cloud deployments burn more energy, doubling fog hardware roughly doubles
// fog energy, and throughput matches the offered rate everywhere. Returns
// human-readable violations; empty means consistent.
inline std::vector<std::string> consistency_violations(const std::vector<RunResult>& runs) {
  std::map<std::string, const RunResult*> by_name;
  for (const RunResult& r : runs) by_name[r.report.scenario] = &r;
  std::vector<std::string> out;
  const auto get = [&](const std::string& name) -> const RunResult* {
    auto it = by_name.find(name);
    return it == by_name.end() ? nullptr : it->second;
  };
  const auto need = [&](const std::string& name) -> const MetricsReport* {
    const RunResult* r = get(name);
    if (!r) out.push_back("missing scenario: " + name);
    return r ? &r->report : nullptr;
  };
  char buf[256];
  for (const std::string& topo : {"fog_x1", "fog_x2", "cloud_near", "cloud_far"}) {
    const MetricsReport* acc = need(topo + "_accuracy");
    const MetricsReport* lat = need(topo + "_latency");
    if (!acc || !lat) continue;
    if (!(lat->mean_response_ms < acc->mean_response_ms)) {
      std::snprintf(buf, sizeof(buf), "%s: latency mode (%.3f ms) not faster than accuracy (%.3f ms)",
                    topo.c_str(), lat->mean_response_ms, acc->mean_response_ms);
      out.push_back(buf);
    }
    // Request bytes must shrink by the payload ratio, within 1%.
    const RunResult* acc_run = get(topo + "_accuracy");
    const double want_ratio = static_cast<double>(acc_run->scenario.payload.bytes) /
                              static_cast<double>(acc_run->scenario.payload.rescaled_bytes);
    const auto dir = static_cast<int>(Direction::GatewayToMaster);
    if (lat->bytes_by_dir[dir] == 0) {
      out.push_back(topo + ": no request traffic in latency mode");
    } else {
      const double got_ratio = static_cast<double>(acc->bytes_by_dir[dir]) /
                               static_cast<double>(lat->bytes_by_dir[dir]);
      if (std::abs(got_ratio / want_ratio - 1.0) > 0.01) {
        std::snprintf(buf, sizeof(buf),
                      "%s: request byte ratio %.4f deviates from payload ratio %.4f by more than 1%%",
                      topo.c_str(), got_ratio, want_ratio);
        out.push_back(buf);
      }
    }
  }
  for (const std::string& mode : {"accuracy", "latency"}) {
    const MetricsReport* f1 = need("fog_x1_" + mode);
    const MetricsReport* f2 = need("fog_x2_" + mode);
    const MetricsReport* cn = need("cloud_near_" + mode);
    const MetricsReport* cf = need("cloud_far_" + mode);
    if (!f1 || !f2 || !cn || !cf) continue;
    if (!(f2->mean_response_ms <= f1->mean_response_ms * 1.001)) {
      out.push_back("fog_x2_" + mode + " slower than fog_x1_" + mode);
    }
    if (!(f1->mean_response_ms < cn->mean_response_ms)) {
      out.push_back("fog_x1_" + mode + " not faster than cloud_near_" + mode);
    }
    if (!(cn->mean_response_ms < cf->mean_response_ms)) {
      out.push_back("cloud_near_" + mode + " not faster than cloud_far_" + mode);
    }
    if (!(f1->jitter_ms < 0.5) || !(f2->jitter_ms < 0.5)) {
      out.push_back("fog jitter not near zero in " + mode + " mode");
    }
    if (!(cn->jitter_ms > 1.0) || !(cf->jitter_ms > 1.0)) {
      out.push_back("cloud jitter not visible in " + mode + " mode");
    }
    if (!(cn->energy_total_j > f1->energy_total_j)) {
      out.push_back("cloud_near_" + mode + " does not cost more energy than fog_x1_" + mode);
    }
    if (f1->energy_fog_j > 0) {
      const double ratio = f2->energy_fog_j / (2.0 * f1->energy_fog_j);
      if (std::abs(ratio - 1.0) > 0.10) {
        std::snprintf(buf, sizeof(buf),
                      "fog energy does not scale with node count in %s mode (ratio %.4f)",
                      mode.c_str(), ratio);
        out.push_back(buf);
      }
    }
  }
  for (const RunResult& r : runs) {
    if (std::abs(r.report.fpm - r.scenario.rate_per_min) > 0.1) {
      std::snprintf(buf, sizeof(buf), "%s: throughput %.3f frames/min, offered %.3f",
                    r.report.scenario.c_str(), r.report.fpm, r.scenario.rate_per_min);
      out.push_back(buf);
    }
  }
  return out;
}

inline std::string compare_reports_text(const MetricsReport& a, const MetricsReport& b) {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-26s %18s %18s %14s\n", "metric", a.scenario.c_str(),
                b.scenario.c_str(), "delta");
  os << buf;
  const auto row = [&](const char* name, double va, double vb) {
    std::snprintf(buf, sizeof(buf), "%-26s %18.3f %18.3f %14.3f\n", name, va, vb, vb - va);
    os << buf;
  };
  row("injected", static_cast<double>(a.injected), static_cast<double>(b.injected));
  row("completed", static_cast<double>(a.completed), static_cast<double>(b.completed));
  row("failed", static_cast<double>(a.failed), static_cast<double>(b.failed));
  row("mean_response_ms", a.mean_response_ms, b.mean_response_ms);
  row("jitter_ms", a.jitter_ms, b.jitter_ms);
  row("frames_per_min", a.fpm, b.fpm);
  row("req_bytes(gw->master)", static_cast<double>(a.bytes_by_dir[0]),
      static_cast<double>(b.bytes_by_dir[0]));
  row("task_bytes(master->wkr)", static_cast<double>(a.bytes_by_dir[1]),
      static_cast<double>(b.bytes_by_dir[1]));
  row("result_bytes(wkr->master)", static_cast<double>(a.bytes_by_dir[2]),
      static_cast<double>(b.bytes_by_dir[2]));
  row("resp_bytes(master->gw)", static_cast<double>(a.bytes_by_dir[3]),
      static_cast<double>(b.bytes_by_dir[3]));
  row("energy_total_j", a.energy_total_j, b.energy_total_j);
  row("energy_fog_j", a.energy_fog_j, b.energy_fog_j);
  row("energy_cloud_j", a.energy_cloud_j, b.energy_cloud_j);
  return os.str();
}

}  // namespace fogsight
