#pragma once

// Run accounting and evaluation: the per-message ledger, PASCAL-VOC style
// detection quality (greedy matching, all-point interpolated AP, mAP), and
// the operational quantities derived from a run (frames per minute, jitter,
// bandwidth, modeled energy).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fogsight/clock.hpp"
#include "fogsight/detection.hpp"

namespace fogsight {

// ---------------------------------------------------------------------------
// Run ledger
// ---------------------------------------------------------------------------

enum class Direction { GatewayToMaster, MasterToWorker, WorkerToMaster, MasterToGateway };

inline std::string to_string(Direction d) {
  switch (d) {
    case Direction::GatewayToMaster: return "gateway_to_master";
    case Direction::MasterToWorker: return "master_to_worker";
    case Direction::WorkerToMaster: return "worker_to_master";
    case Direction::MasterToGateway: return "master_to_gateway";
  }
  return "?";
}

inline std::optional<Direction> parse_direction(const std::string& s) {
  if (s == "gateway_to_master") return Direction::GatewayToMaster;
  if (s == "master_to_worker") return Direction::MasterToWorker;
  if (s == "worker_to_master") return Direction::WorkerToMaster;
  if (s == "master_to_gateway") return Direction::MasterToGateway;
  return std::nullopt;
}

// One message on the wire. bytes counts the full serialized message,
// including framing and headers, not just the payload. Control frames
// (REGISTER, HEARTBEAT) carry empty task_id/image_id.
struct LedgerEntry {
  std::string task_id;
  std::string image_id;
  Direction direction = Direction::GatewayToMaster;
  std::uint64_t bytes = 0;
  micros_t send_time_us = 0;
  micros_t recv_time_us = 0;
};

struct CompletionEntry {
  std::string task_id;
  std::string image_id;
  std::string worker_id;
  micros_t enqueue_time_us = 0;
  micros_t done_time_us = 0;
  double compute_ms = 0.0;
};

struct FailureEntry {
  std::string task_id;  // empty when the submission was rejected before a task existed
  std::string image_id;
  micros_t time_us = 0;
  std::string reason;
};

struct RunLedger {
  std::vector<LedgerEntry> entries;
  std::vector<CompletionEntry> completions;
  std::vector<FailureEntry> failures;
};

class CsvError : public std::runtime_error {
 public:
  explicit CsvError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}
// Identifiers and reasons land in CSV cells unquoted; strip the delimiter.
inline std::string csv_safe(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  }
  return s;
}
}  // namespace detail

inline void write_ledger_csv(std::ostream& os, const std::vector<LedgerEntry>& entries) {
  os << "task_id,image_id,direction,bytes,send_time_us,recv_time_us\n";
  for (const LedgerEntry& e : entries) {
    os << detail::csv_safe(e.task_id) << ',' << detail::csv_safe(e.image_id) << ','
       << to_string(e.direction) << ',' << e.bytes << ',' << e.send_time_us << ','
       << e.recv_time_us << '\n';
  }
}

inline std::vector<LedgerEntry> read_ledger_csv(std::istream& is) {
  std::vector<LedgerEntry> out;
  std::string line;
  if (!std::getline(is, line)) throw CsvError("ledger csv: missing header row");
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != 6) throw CsvError("ledger csv: bad column count at line " + std::to_string(lineno));
    LedgerEntry e;
    e.task_id = f[0];
    e.image_id = f[1];
    auto dir = parse_direction(f[2]);
    if (!dir) throw CsvError("ledger csv: unknown direction at line " + std::to_string(lineno));
    e.direction = *dir;
    e.bytes = std::stoull(f[3]);
    e.send_time_us = std::stoll(f[4]);
    e.recv_time_us = std::stoll(f[5]);
    out.push_back(std::move(e));
  }
  return out;
}

inline void write_completions_csv(std::ostream& os, const std::vector<CompletionEntry>& cs) {
  os << "task_id,image_id,worker_id,enqueue_time_us,done_time_us,compute_ms\n";
  for (const CompletionEntry& c : cs) {
    os << detail::csv_safe(c.task_id) << ',' << detail::csv_safe(c.image_id) << ','
       << detail::csv_safe(c.worker_id) << ',' << c.enqueue_time_us << ',' << c.done_time_us << ','
       << detail::fmt_double(c.compute_ms) << '\n';
  }
}

inline void write_failures_csv(std::ostream& os, const std::vector<FailureEntry>& fs) {
  os << "task_id,image_id,time_us,reason\n";
  for (const FailureEntry& f : fs) {
    os << detail::csv_safe(f.task_id) << ',' << detail::csv_safe(f.image_id) << ',' << f.time_us
       << ',' << detail::csv_safe(f.reason) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Ground truth
// ---------------------------------------------------------------------------

struct Annotation {
  int class_id = 0;
  BoundingBox box;
};

struct GroundTruthImage {
  std::string image_id;
  std::vector<Annotation> annotations;
};

class GroundTruthError : public std::runtime_error {
 public:
  explicit GroundTruthError(const std::string& msg) : std::runtime_error(msg) {}
};

// One JSON document per image, one document per line:
//   {"image_id": "...", "annotations": [{"class_id": 0, "cx": .., "cy": .., "w": .., "h": ..}]}
inline std::vector<GroundTruthImage> load_ground_truth(std::istream& is) {
  std::vector<GroundTruthImage> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw GroundTruthError("ground truth: invalid JSON at line " + std::to_string(lineno));
    }
    try {
      GroundTruthImage g;
      g.image_id = j.at("image_id").get<std::string>();
      for (const auto& a : j.at("annotations")) {
        Annotation ann;
        ann.class_id = a.at("class_id").get<int>();
        ann.box.cx = a.at("cx").get<double>();
        ann.box.cy = a.at("cy").get<double>();
        ann.box.w = a.at("w").get<double>();
        ann.box.h = a.at("h").get<double>();
        g.annotations.push_back(ann);
      }
      out.push_back(std::move(g));
    } catch (const nlohmann::json::exception& e) {
      throw GroundTruthError("ground truth: line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<GroundTruthImage> load_ground_truth_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw GroundTruthError("cannot open ground truth file: " + path);
  return load_ground_truth(f);
}

// ---------------------------------------------------------------------------
// Detection quality
// ---------------------------------------------------------------------------

inline constexpr double kDefaultMatchIouThreshold = 0.5;

// Flags are in descending-score order (ties keep input order).
struct MatchResult {
  std::vector<bool> tp_flags;
  int n_gt = 0;
};

// Greedy matching for one image and one class: walk detections by descending
// score; each one matches the not-yet-matched ground-truth box with the
// highest IoU when that IoU reaches the threshold (IoU ties pick the lowest
// ground-truth index). Matched: TP. Otherwise: FP. Each ground-truth box
// matches at most once.
inline MatchResult match_detections(const std::vector<Detection>& dets,
                                    const std::vector<BoundingBox>& ground_truth,
                                    double iou_threshold = kDefaultMatchIouThreshold) {
  if (!(iou_threshold >= 0.0 && iou_threshold <= 1.0)) {
    throw std::invalid_argument("match_detections: iou_threshold must be in [0,1]");
  }
  std::vector<std::size_t> order(dets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  std::vector<bool> gt_matched(ground_truth.size(), false);
  MatchResult res;
  res.n_gt = static_cast<int>(ground_truth.size());
  res.tp_flags.reserve(dets.size());
  for (std::size_t i : order) {
    double best = -1.0;
    std::size_t best_gt = 0;
    for (std::size_t g = 0; g < ground_truth.size(); ++g) {
      if (gt_matched[g]) continue;
      const double v = iou(dets[i].box, ground_truth[g]);
      if (v > best) {
        best = v;
        best_gt = g;
      }
    }
    if (best >= iou_threshold && best >= 0.0 && !ground_truth.empty()) {
      gt_matched[best_gt] = true;
      res.tp_flags.push_back(true);
    } else {
      res.tp_flags.push_back(false);
    }
  }
  return res;
}

// All-point interpolated average precision over score-ordered TP/FP flags.
// The precision curve is replaced by its running maximum from the right, and
// AP is the area under that envelope across recall. Returns nullopt when the
// class has no ground truth and no detections (AP undefined); zero when it
// has detections but no ground truth.
inline std::optional<double> average_precision(const std::vector<bool>& flags, int n_gt) {
  if (n_gt < 0) throw std::invalid_argument("average_precision: n_gt must be >= 0");
  if (n_gt == 0) {
    if (flags.empty()) return std::nullopt;
    for (bool f : flags) {
      if (f) throw std::invalid_argument("average_precision: TP flag with zero ground truth");
    }
    return 0.0;
  }
  if (flags.empty()) return 0.0;
  const std::size_t n = flags.size();
  std::vector<double> prec(n), rec(n);
  int tp = 0, fp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    flags[i] ? ++tp : ++fp;
    prec[i] = static_cast<double>(tp) / (tp + fp);
    rec[i] = static_cast<double>(tp) / n_gt;
  }
  for (std::size_t i = n - 1; i-- > 0;) prec[i] = std::max(prec[i], prec[i + 1]);
  double ap = 0.0, prev_rec = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (rec[i] > prev_rec) {
      ap += (rec[i] - prev_rec) * prec[i];
      prev_rec = rec[i];
    }
  }
  return ap;
}

// Mean over the classes whose AP is defined.
inline double mean_ap(const std::map<int, std::optional<double>>& per_class) {
  double sum = 0.0;
  int n = 0;
  for (const auto& [cls, ap] : per_class) {
    if (!ap) continue;
    sum += *ap;
    ++n;
  }
  if (n == 0) throw std::invalid_argument("mean_ap: no class has a defined AP");
  return sum / n;
}

// Full corpus evaluation: detections are matched per image per class, then
// pooled across images by descending score (ties: image id, then per-image
// rank) before the AP integration.
inline std::map<int, std::optional<double>> evaluate_dataset(
    const std::map<std::string, std::vector<Detection>>& detections_by_image,
    const std::vector<GroundTruthImage>& ground_truth,
    double iou_threshold = kDefaultMatchIouThreshold) {
  std::map<std::string, const GroundTruthImage*> gt_by_image;
  std::map<int, int> gt_count;
  for (const GroundTruthImage& g : ground_truth) {
    if (!gt_by_image.emplace(g.image_id, &g).second) {
      throw GroundTruthError("duplicate ground truth for image " + g.image_id);
    }
    for (const Annotation& a : g.annotations) ++gt_count[a.class_id];
  }
  std::map<int, bool> classes;  // class -> has detections
  for (const auto& [cls, cnt] : gt_count) classes[cls] = false;
  for (const auto& [img, dets] : detections_by_image) {
    for (const Detection& d : dets) classes[d.class_id] = true;
  }

  std::set<std::string> image_ids;
  for (const auto& [img, dets] : detections_by_image) image_ids.insert(img);
  for (const auto& [img, gt] : gt_by_image) image_ids.insert(img);

  std::map<int, std::optional<double>> out;
  for (const auto& [cls, has_dets] : classes) {
    struct Pooled {
      double score;
      std::string image_id;
      std::size_t rank;
      bool tp;
    };
    std::vector<Pooled> pooled;
    for (const std::string& img : image_ids) {
      std::vector<Detection> dets;
      if (auto it = detections_by_image.find(img); it != detections_by_image.end()) {
        for (const Detection& d : it->second) {
          if (d.class_id == cls) dets.push_back(d);
        }
      }
      std::vector<BoundingBox> gts;
      if (auto it = gt_by_image.find(img); it != gt_by_image.end()) {
        for (const Annotation& a : it->second->annotations) {
          if (a.class_id == cls) gts.push_back(a.box);
        }
      }
      MatchResult m = match_detections(dets, gts, iou_threshold);
      // match_detections orders flags by descending score; reproduce that
      // order here so flags line up with the pooled scores.
      std::vector<std::size_t> order(dets.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return dets[a].score > dets[b].score;
      });
      for (std::size_t i = 0; i < order.size(); ++i) {
        pooled.push_back({dets[order[i]].score, img, i, m.tp_flags[i]});
      }
    }
    std::sort(pooled.begin(), pooled.end(), [](const Pooled& a, const Pooled& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.image_id != b.image_id) return a.image_id < b.image_id;
      return a.rank < b.rank;
    });
    std::vector<bool> flags;
    flags.reserve(pooled.size());
    for (const Pooled& p : pooled) flags.push_back(p.tp);
    const int n_gt = gt_count.count(cls) ? gt_count[cls] : 0;
    out[cls] = average_precision(flags, n_gt);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Operational metrics
// ---------------------------------------------------------------------------

// Completions per minute over a window starting at t = 0.
inline double fpm(const std::vector<micros_t>& completion_times_us, micros_t window_us) {
  if (window_us <= 0) throw std::invalid_argument("fpm: window must be positive");
  std::size_t n = 0;
  for (micros_t t : completion_times_us) {
    if (t >= 0 && t <= window_us) ++n;
  }
  return static_cast<double>(n) / (static_cast<double>(window_us) / 60e6);
}

// Mean absolute difference between successive response times, in the order
// the responses completed.
inline double jitter_ms(const std::vector<double>& latencies_ms) {
  if (latencies_ms.size() < 2) {
    throw std::invalid_argument("jitter: needs at least two samples");
  }
  double sum = 0.0;
  for (std::size_t i = 1; i < latencies_ms.size(); ++i) {
    sum += std::abs(latencies_ms[i] - latencies_ms[i - 1]);
  }
  return sum / static_cast<double>(latencies_ms.size() - 1);
}

struct BandwidthStat {
  std::uint64_t total_bytes = 0;
  micros_t duration_us = 0;
  double bytes_per_minute = 0.0;
};

// Byte totals and rate for one ledger direction. duration_us = 0 derives the
// window from the filtered entries themselves.
inline BandwidthStat bandwidth(const std::vector<LedgerEntry>& entries, Direction dir,
                               micros_t duration_us = 0) {
  BandwidthStat st;
  micros_t lo = 0, hi = 0;
  bool any = false;
  for (const LedgerEntry& e : entries) {
    if (e.direction != dir) continue;
    st.total_bytes += e.bytes;
    if (!any) {
      lo = e.send_time_us;
      hi = e.recv_time_us;
      any = true;
    } else {
      lo = std::min(lo, e.send_time_us);
      hi = std::max(hi, e.recv_time_us);
    }
  }
  if (!any) throw std::invalid_argument("bandwidth: no ledger entries for direction");
  st.duration_us = duration_us > 0 ? duration_us : hi - lo;
  st.bytes_per_minute = st.duration_us > 0
                            ? static_cast<double>(st.total_bytes) /
                                  (static_cast<double>(st.duration_us) / 60e6)
                            : 0.0;
  return st;
}

struct PowerParams {
  double idle_watts = 0.0;
  double busy_watts = 0.0;
};

struct EnergyResult {
  std::map<std::string, double> per_node_j;
  double total_j = 0.0;
};

// Two-state power model per node: idle_watts over the whole run plus the
// busy/idle difference over the node's busy time.
inline EnergyResult energy(const std::map<std::string, double>& busy_seconds,
                           const std::map<std::string, PowerParams>& power, double duration_s) {
  if (duration_s < 0) throw std::invalid_argument("energy: duration must be >= 0");
  for (const auto& [node, busy] : busy_seconds) {
    if (!power.count(node)) throw std::invalid_argument("energy: no power params for " + node);
    if (busy < 0 || busy > duration_s + 1e-9) {
      throw std::invalid_argument("energy: busy time outside [0, duration] for " + node);
    }
  }
  EnergyResult out;
  for (const auto& [node, p] : power) {
    if (p.idle_watts < 0 || p.busy_watts < p.idle_watts) {
      throw std::invalid_argument("energy: power params must satisfy 0 <= idle <= busy");
    }
    const double busy = busy_seconds.count(node) ? busy_seconds.at(node) : 0.0;
    const double joules = p.idle_watts * duration_s + (p.busy_watts - p.idle_watts) * busy;
    out.per_node_j[node] = joules;
    out.total_j += joules;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scenario report
// ---------------------------------------------------------------------------

struct MetricsReport {
  std::string scenario;
  std::string mode;  // "accuracy" | "latency"
  std::uint64_t seed = 0;
  double duration_s = 0.0;
  std::uint64_t injected = 0;
  std::uint64_t completed = 0;
  std::uint64_t failed = 0;
  double mean_response_ms = 0.0;
  double jitter_ms = 0.0;
  double fpm = 0.0;
  std::uint64_t bytes_by_dir[4] = {0, 0, 0, 0};   // indexed by Direction
  double bpm_by_dir[4] = {0.0, 0.0, 0.0, 0.0};
  double energy_gateway_j = 0.0;
  double energy_master_j = 0.0;
  double energy_fog_j = 0.0;
  double energy_cloud_j = 0.0;
  double energy_total_j = 0.0;
};

inline const char* kReportColumns =
    "scenario,mode,seed,duration_s,injected,completed,failed,mean_response_ms,jitter_ms,fpm,"
    "bytes_gateway_to_master,bytes_master_to_worker,bytes_worker_to_master,bytes_master_to_gateway,"
    "bpm_gateway_to_master,bpm_master_to_worker,bpm_worker_to_master,bpm_master_to_gateway,"
    "energy_gateway_j,energy_master_j,energy_fog_j,energy_cloud_j,energy_total_j";

inline void write_report_csv(std::ostream& os, const MetricsReport& r) {
  os << kReportColumns << '\n';
  os << detail::csv_safe(r.scenario) << ',' << r.mode << ',' << r.seed << ','
     << detail::fmt_double(r.duration_s) << ',' << r.injected << ',' << r.completed << ','
     << r.failed << ',' << detail::fmt_double(r.mean_response_ms) << ','
     << detail::fmt_double(r.jitter_ms) << ',' << detail::fmt_double(r.fpm);
  for (int i = 0; i < 4; ++i) os << ',' << r.bytes_by_dir[i];
  for (int i = 0; i < 4; ++i) os << ',' << detail::fmt_double(r.bpm_by_dir[i]);
  os << ',' << detail::fmt_double(r.energy_gateway_j) << ','
     << detail::fmt_double(r.energy_master_j) << ',' << detail::fmt_double(r.energy_fog_j) << ','
     << detail::fmt_double(r.energy_cloud_j) << ',' << detail::fmt_double(r.energy_total_j)
     << '\n';
}

inline MetricsReport read_report_csv(std::istream& is) {
  std::string header, row;
  if (!std::getline(is, header) || !std::getline(is, row)) {
    throw CsvError("report csv: expected header plus one data row");
  }
  if (header != kReportColumns) throw CsvError("report csv: unexpected column layout");
  auto f = detail::split_csv_line(row);
  if (f.size() != 23) throw CsvError("report csv: bad column count");
  MetricsReport r;
  r.scenario = f[0];
  r.mode = f[1];
  r.seed = std::stoull(f[2]);
  r.duration_s = std::stod(f[3]);
  r.injected = std::stoull(f[4]);
  r.completed = std::stoull(f[5]);
  r.failed = std::stoull(f[6]);
  r.mean_response_ms = std::stod(f[7]);
  r.jitter_ms = std::stod(f[8]);
  r.fpm = std::stod(f[9]);
  for (int i = 0; i < 4; ++i) r.bytes_by_dir[i] = std::stoull(f[10 + i]);
  for (int i = 0; i < 4; ++i) r.bpm_by_dir[i] = std::stod(f[14 + i]);
  r.energy_gateway_j = std::stod(f[18]);
  r.energy_master_j = std::stod(f[19]);
  r.energy_fog_j = std::stod(f[20]);
  r.energy_cloud_j = std::stod(f[21]);
  r.energy_total_j = std::stod(f[22]);
  return r;
}

inline MetricsReport read_report_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw CsvError("cannot open report: " + path);
  return read_report_csv(f);
}

inline std::string report_summary(const MetricsReport& r) {
  std::ostringstream os;
  os << "scenario " << r.scenario << " (mode=" << r.mode << ", seed=" << r.seed << ", "
     << detail::fmt_double(r.duration_s) << " s)\n"
     << "  tasks: injected=" << r.injected << " completed=" << r.completed
     << " failed=" << r.failed << "\n"
     << "  response: mean=" << detail::fmt_double(r.mean_response_ms)
     << " ms, jitter=" << detail::fmt_double(r.jitter_ms)
     << " ms, throughput=" << detail::fmt_double(r.fpm) << " frames/min\n";
  static const char* dir_names[4] = {"gateway->master", "master->worker", "worker->master",
                                     "master->gateway"};
  for (int i = 0; i < 4; ++i) {
    os << "  bytes " << dir_names[i] << ": " << r.bytes_by_dir[i] << " ("
       << detail::fmt_double(r.bpm_by_dir[i]) << " B/min)\n";
  }
  os << "  energy: total=" << detail::fmt_double(r.energy_total_j)
     << " J (gateway=" << detail::fmt_double(r.energy_gateway_j)
     << ", master=" << detail::fmt_double(r.energy_master_j)
     << ", fog=" << detail::fmt_double(r.energy_fog_j)
     << ", cloud=" << detail::fmt_double(r.energy_cloud_j) << ")\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Task-transition log parsing. The master emits one line per task state
// transition: space-separated key=value pairs in fixed order
//   ts_us=<int> event=<name> task=<id> image=<id> worker=<id|-> attempt=<n> [extras]
// Completions are reconstructed from task_queued/task_done pairs.
// ---------------------------------------------------------------------------

inline std::map<std::string, std::string> parse_log_line(const std::string& line) {
  std::map<std::string, std::string> kv;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) continue;
    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return kv;
}

inline std::vector<CompletionEntry> completions_from_task_log(std::istream& is) {
  std::map<std::string, CompletionEntry> open;
  std::vector<CompletionEntry> done;
  std::string line;
  while (std::getline(is, line)) {
    auto kv = parse_log_line(line);
    if (!kv.count("event") || !kv.count("task") || !kv.count("ts_us")) continue;
    const std::string& ev = kv["event"];
    if (ev == "task_queued") {
      CompletionEntry c;
      c.task_id = kv["task"];
      c.image_id = kv.count("image") ? kv["image"] : "";
      c.enqueue_time_us = std::stoll(kv["ts_us"]);
      open[c.task_id] = c;
    } else if (ev == "task_done") {
      auto it = open.find(kv["task"]);
      if (it == open.end()) continue;
      it->second.done_time_us = std::stoll(kv["ts_us"]);
      it->second.worker_id = kv.count("worker") ? kv["worker"] : "";
      it->second.compute_ms = kv.count("compute_ms") ? std::stod(kv["compute_ms"]) : 0.0;
      done.push_back(it->second);
      open.erase(it);
    }
  }
  return done;
}

}  // namespace fogsight
