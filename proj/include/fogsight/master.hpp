#pragma once

// Orchestration core for the master node, written sans-I/O: callers feed it
// timestamped events (submissions, decoded frames, closed connections, timer
// ticks) and drain a list of actions (frames to send, submissions to
// complete, log lines). The same core runs under the real socket transport
// and under the virtual-clock simulation, which is what makes the two
// executions comparable.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "fogsight/clock.hpp"
#include "fogsight/preprocess.hpp"
#include "fogsight/wire.hpp"

namespace fogsight {

struct MasterConfig {
  micros_t heartbeat_interval_us = 2'000'000;
  int heartbeat_timeout_intervals = 3;  // dead after strictly more than interval * this
  int max_attempts = 5;
  micros_t queue_wait_timeout_us = 10'000'000;
  int rescale_target = 200;  // long-side pixels for reduced-payload dispatch
};

struct Submission {
  std::uint64_t submission_id = 0;
  std::string image_id;
  Mode mode = Mode::HighAccuracy;
  ImageFormat format = ImageFormat::Opaque;
  int width = 0;
  int height = 0;
  bool pre_rescaled = false;  // client already shrank the payload
  SharedBytes payload;
};

enum class TaskState { Queued, Dispatched, Done, Failed };

inline const char* to_string(TaskState s) {
  switch (s) {
    case TaskState::Queued: return "queued";
    case TaskState::Dispatched: return "dispatched";
    case TaskState::Done: return "done";
    case TaskState::Failed: return "failed";
  }
  return "?";
}

// --- Actions emitted by the core --------------------------------------------

// Send one frame on a worker connection. task_id/image_id ride along so
// transports can account bytes against the right task without re-parsing the
// header.
struct SendFrame {
  int conn_id = -1;
  std::uint8_t msg_type = 0;
  std::string header;
  SharedBytes payload;  // may be null (control frames)
  std::string task_id;
  std::string image_id;
};

// Resolve a pending submission. http_status mirrors the ingestion contract:
// 200 done, 503 no capacity, 500 gave up, 400 bad input.
struct CompleteAction {
  std::uint64_t submission_id = 0;
  int http_status = 200;
  nlohmann::json body;
};

struct LogAction {
  std::string line;
};

using MasterAction = std::variant<SendFrame, CompleteAction, LogAction>;

// --- Core --------------------------------------------------------------------

class MasterCore {
 public:
  explicit MasterCore(MasterConfig cfg = {}) : cfg_(cfg) {}

  const MasterConfig& config() const { return cfg_; }

  // Accept a detection request. Returns the task id, or nullopt when the
  // submission was rejected outright (a CompleteAction with the error is
  // queued either way the submission ends).
  std::optional<std::string> submit(micros_t now, const Submission& s) {
    Submission prepared = s;
    if (s.mode == Mode::LowLatency && !s.pre_rescaled) {
      if (s.format != ImageFormat::PpmP6) {
        complete_error(s.submission_id, 400, s.image_id,
                       "reduced-latency mode needs a ppm payload or a pre-rescaled image");
        log(now, "submission_rejected", "-", s.image_id, "-", 0,
            " reason=payload_not_rescalable");
        return std::nullopt;
      }
      try {
        ImagePayload img;
        img.image_id = s.image_id;
        img.width = s.width;
        img.height = s.height;
        img.format = s.format;
        img.bytes = s.payload;
        ImagePayload out = prepare(img, Mode::LowLatency, cfg_.rescale_target);
        prepared.width = out.width;
        prepared.height = out.height;
        prepared.payload = out.bytes;
      } catch (const std::exception& e) {
        complete_error(s.submission_id, 400, s.image_id, e.what());
        log(now, "submission_rejected", "-", s.image_id, "-", 0, " reason=preprocess_error");
        return std::nullopt;
      }
    }

    TaskRecord t;
    t.task_id = "t-" + std::to_string(++task_seq_);
    t.submission = prepared;
    t.state = TaskState::Queued;
    t.enqueue_us = now;
    const std::string id = t.task_id;
    tasks_[id] = std::move(t);
    queue_.push_back(id);
    log(now, "task_queued", id, prepared.image_id, "-", 0);
    pump(now);
    return id;
  }

  void on_frame(micros_t now, int conn_id, const Frame& frame) {
    refresh_conn_heartbeat(now, conn_id);
    nlohmann::json header = nlohmann::json::parse(frame.header, nullptr, false);
    if (header.is_discarded()) {
      log(now, "bad_frame", "-", "-", conn_worker_name(conn_id), 0, " reason=header_not_json");
      return;
    }
    switch (frame.msg_type) {
      case kMsgRegister:
        on_register(now, conn_id, header);
        break;
      case kMsgHeartbeat:
        on_heartbeat(now, header);
        break;
      case kMsgResult:
        on_result(now, header);
        break;
      case kMsgError:
        on_error(now, header);
        break;
      default:
        log(now, "bad_frame", "-", "-", conn_worker_name(conn_id), 0,
            " reason=unexpected_msg_type");
        break;
    }
    pump(now);
  }

  void on_conn_closed(micros_t now, int conn_id) {
    auto it = conn_to_worker_.find(conn_id);
    if (it == conn_to_worker_.end()) return;
    const std::string worker_id = it->second;
    conn_to_worker_.erase(it);
    WorkerRecord& w = workers_.at(worker_id);
    if (w.live && w.conn_id == conn_id) {
      mark_dead(now, w, "conn_closed");
    }
    pump(now);
  }

  // Periodic maintenance: reap silent workers, fail tasks stuck in the queue.
  void on_tick(micros_t now) {
    const micros_t deadline =
        cfg_.heartbeat_interval_us * static_cast<micros_t>(cfg_.heartbeat_timeout_intervals);
    for (auto& [id, w] : workers_) {
      if (w.live && now - w.last_heartbeat_us > deadline) {
        mark_dead(now, w, "heartbeat_timeout");
      }
    }
    // Collect first: failing a task mutates the queue.
    std::vector<std::string> expired;
    for (const std::string& id : queue_) {
      const TaskRecord& t = tasks_.at(id);
      if (now - t.enqueue_us > cfg_.queue_wait_timeout_us) expired.push_back(id);
    }
    for (const std::string& id : expired) {
      fail_task(now, tasks_.at(id), 503, "queue_timeout");
    }
    pump(now);
  }

  std::vector<MasterAction> take_actions() { return std::exchange(actions_, {}); }

  // --- Introspection ---------------------------------------------------------

  nlohmann::json health() const {
    std::uint64_t queued = 0, dispatched = 0, done = 0, failed = 0;
    for (const auto& [id, t] : tasks_) {
      switch (t.state) {
        case TaskState::Queued: ++queued; break;
        case TaskState::Dispatched: ++dispatched; break;
        case TaskState::Done: ++done; break;
        case TaskState::Failed: ++failed; break;
      }
    }
    nlohmann::json workers = nlohmann::json::array();
    for (const auto& [id, w] : workers_) {
      workers.push_back({{"worker_id", id},
                         {"tier", to_string(w.tier)},
                         {"slots", w.slots},
                         {"outstanding", w.outstanding.size()},
                         {"live", w.live}});
    }
    return nlohmann::json{{"status", "ok"},
                          {"queued", queued},
                          {"dispatched", dispatched},
                          {"done", done},
                          {"failed", failed},
                          {"workers", workers}};
  }

  std::optional<TaskState> task_state(const std::string& task_id) const {
    auto it = tasks_.find(task_id);
    if (it == tasks_.end()) return std::nullopt;
    return it->second.state;
  }

  int task_attempts(const std::string& task_id) const { return tasks_.at(task_id).attempts; }
  bool worker_live(const std::string& id) const {
    auto it = workers_.find(id);
    return it != workers_.end() && it->second.live;
  }
  std::size_t worker_outstanding(const std::string& id) const {
    return workers_.at(id).outstanding.size();
  }
  std::size_t queued_count() const { return queue_.size(); }
  std::size_t live_worker_count() const {
    std::size_t n = 0;
    for (const auto& [id, w] : workers_) n += w.live ? 1 : 0;
    return n;
  }

  // Largest minus smallest outstanding count across live workers; the load
  // balance checks watch this stay small.
  std::size_t max_live_outstanding_spread() const {
    std::size_t lo = SIZE_MAX, hi = 0;
    bool any = false;
    for (const auto& [id, w] : workers_) {
      if (!w.live) continue;
      any = true;
      lo = std::min(lo, w.outstanding.size());
      hi = std::max(hi, w.outstanding.size());
    }
    return any ? hi - lo : 0;
  }

  // Internal consistency: every dispatched task is owned by exactly one live
  // worker within its slot budget, the queue holds exactly the queued tasks,
  // and terminal tasks own nothing. Throws std::logic_error on violation.
  void check_invariants() const {
    std::map<std::string, std::string> owner;
    for (const auto& [wid, w] : workers_) {
      if (w.outstanding.size() > static_cast<std::size_t>(w.slots)) {
        throw std::logic_error("worker over slot budget: " + wid);
      }
      if (!w.live && !w.outstanding.empty()) {
        throw std::logic_error("dead worker holds tasks: " + wid);
      }
      for (const std::string& t : w.outstanding) {
        if (!owner.emplace(t, wid).second) {
          throw std::logic_error("task owned twice: " + t);
        }
      }
    }
    std::set<std::string> queued(queue_.begin(), queue_.end());
    if (queued.size() != queue_.size()) throw std::logic_error("queue holds duplicates");
    for (const auto& [tid, t] : tasks_) {
      const bool in_queue = queued.count(tid) > 0;
      const bool owned = owner.count(tid) > 0;
      switch (t.state) {
        case TaskState::Queued:
          if (!in_queue || owned) throw std::logic_error("queued task misplaced: " + tid);
          break;
        case TaskState::Dispatched:
          if (in_queue || !owned) throw std::logic_error("dispatched task misplaced: " + tid);
          if (owner.at(tid) != t.worker_id) throw std::logic_error("owner mismatch: " + tid);
          break;
        case TaskState::Done:
        case TaskState::Failed:
          if (in_queue || owned) throw std::logic_error("terminal task still active: " + tid);
          break;
      }
    }
    for (const auto& [tid, wid] : owner) {
      if (!tasks_.count(tid)) throw std::logic_error("worker owns unknown task: " + tid);
    }
  }

 private:
  struct WorkerRecord {
    std::string worker_id;
    int conn_id = -1;
    Tier tier = Tier::Fog;
    int slots = 1;
    std::uint64_t registered_seq = 0;
    micros_t last_heartbeat_us = 0;
    bool live = false;
    std::set<std::string> outstanding;
  };

  struct TaskRecord {
    std::string task_id;
    Submission submission;
    TaskState state = TaskState::Queued;
    int attempts = 0;  // dispatches so far
    micros_t enqueue_us = 0;
    std::string worker_id;  // current owner while dispatched
  };

  // --- Frame handlers ----------------------------------------------------------

  void on_register(micros_t now, int conn_id, const nlohmann::json& header) {
    RegisterEnvelope reg;
    try {
      reg = parse_register_header(header);
    } catch (const std::exception&) {
      log(now, "bad_frame", "-", "-", "-", 0, " reason=bad_register_header");
      return;
    }
    auto it = workers_.find(reg.worker_id);
    if (it != workers_.end() && it->second.live && it->second.conn_id != conn_id) {
      // The name is taken by a live worker elsewhere; refuse the newcomer.
      ErrorEnvelope err{"", "master", "worker id already registered: " + reg.worker_id};
      actions_.push_back(SendFrame{conn_id, kMsgError, error_header(err), nullptr, "", ""});
      log(now, "register_rejected", "-", "-", reg.worker_id, 0, " reason=duplicate_live");
      return;
    }
    WorkerRecord& w = workers_[reg.worker_id];
    const bool fresh = w.worker_id.empty();
    w.worker_id = reg.worker_id;
    w.conn_id = conn_id;
    w.tier = reg.tier;
    w.slots = reg.slots;
    w.registered_seq = ++register_seq_;
    w.last_heartbeat_us = now;
    w.live = true;
    conn_to_worker_[conn_id] = reg.worker_id;
    log(now, fresh ? "worker_registered" : "worker_reregistered", "-", "-", reg.worker_id, 0,
        " tier=" + std::string(to_string(w.tier)) + " slots=" + std::to_string(w.slots));
  }

  void on_heartbeat(micros_t now, const nlohmann::json& header) {
    const std::string id = header.value("worker_id", "");
    auto it = workers_.find(id);
    if (it == workers_.end() || !it->second.live) {
      log(now, "stale_heartbeat", "-", "-", id.empty() ? "-" : id, 0);
      return;
    }
    it->second.last_heartbeat_us = now;
  }

  void on_result(micros_t now, const nlohmann::json& header) {
    ResultEnvelope res;
    try {
      res = parse_result_header(header);
    } catch (const std::exception&) {
      log(now, "bad_frame", "-", "-", "-", 0, " reason=bad_result_header");
      return;
    }
    auto it = tasks_.find(res.task_id);
    if (it == tasks_.end()) {
      log(now, "result_unknown_task", res.task_id, "-", res.worker_id, 0);
      return;
    }
    TaskRecord& t = it->second;
    if (t.state == TaskState::Done || t.state == TaskState::Failed) {
      log(now, "duplicate_discarded", t.task_id, t.submission.image_id, res.worker_id,
          t.attempts);
      return;
    }
    // First result wins, whoever sent it: release the task everywhere and
    // answer the client.
    if (t.state == TaskState::Queued) {
      queue_.erase(std::remove(queue_.begin(), queue_.end(), t.task_id), queue_.end());
    }
    for (auto& [wid, w] : workers_) w.outstanding.erase(t.task_id);
    t.state = TaskState::Done;
    t.worker_id = res.worker_id;
    const double total_ms = static_cast<double>(now - t.enqueue_us) / 1000.0;
    actions_.push_back(CompleteAction{
        t.submission.submission_id, 200,
        detect_response_json(t.submission.image_id, res.detections, total_ms, res.compute_ms,
                             res.worker_id)});
    char extra[64];
    std::snprintf(extra, sizeof(extra), " compute_ms=%.6f", res.compute_ms);
    log(now, "task_done", t.task_id, t.submission.image_id, res.worker_id, t.attempts, extra);
  }

  void on_error(micros_t now, const nlohmann::json& header) {
    ErrorEnvelope err;
    try {
      err = parse_error_header(header);
    } catch (const std::exception&) {
      log(now, "bad_frame", "-", "-", "-", 0, " reason=bad_error_header");
      return;
    }
    if (err.task_id.empty()) {
      log(now, "worker_error", "-", "-", err.worker_id, 0);
      return;
    }
    auto it = tasks_.find(err.task_id);
    if (it == tasks_.end() || it->second.state == TaskState::Done ||
        it->second.state == TaskState::Failed) {
      log(now, "stale_worker_error", err.task_id, "-", err.worker_id, 0);
      return;
    }
    TaskRecord& t = it->second;
    if (t.state == TaskState::Dispatched) {
      for (auto& [wid, w] : workers_) w.outstanding.erase(t.task_id);
      log(now, "attempt_failed", t.task_id, t.submission.image_id, err.worker_id, t.attempts,
          " reason=worker_error");
      requeue_or_fail(now, t);
    }
  }

  // --- State transitions -------------------------------------------------------

  void mark_dead(micros_t now, WorkerRecord& w, const std::string& reason) {
    w.live = false;
    log(now, "worker_dead", "-", "-", w.worker_id, 0, " reason=" + reason);
    std::vector<std::string> orphaned(w.outstanding.begin(), w.outstanding.end());
    w.outstanding.clear();
    for (const std::string& tid : orphaned) {
      TaskRecord& t = tasks_.at(tid);
      if (t.state != TaskState::Dispatched) continue;
      log(now, "attempt_failed", t.task_id, t.submission.image_id, w.worker_id, t.attempts,
          " reason=worker_lost");
      requeue_or_fail(now, t);
    }
  }

  void requeue_or_fail(micros_t now, TaskRecord& t) {
    t.worker_id.clear();
    if (t.attempts >= cfg_.max_attempts) {
      fail_task(now, t, 500, "max_attempts");
      return;
    }
    t.state = TaskState::Queued;
    queue_.push_back(t.task_id);
    log(now, "task_requeued", t.task_id, t.submission.image_id, "-", t.attempts);
  }

  void fail_task(micros_t now, TaskRecord& t, int http_status, const std::string& reason) {
    if (t.state == TaskState::Queued) {
      queue_.erase(std::remove(queue_.begin(), queue_.end(), t.task_id), queue_.end());
    }
    for (auto& [wid, w] : workers_) w.outstanding.erase(t.task_id);
    t.state = TaskState::Failed;
    t.worker_id.clear();
    complete_error(t.submission.submission_id, http_status, t.submission.image_id, reason);
    log(now, "task_failed", t.task_id, t.submission.image_id, "-", t.attempts,
        " reason=" + reason);
  }

  void complete_error(std::uint64_t submission_id, int status, const std::string& image_id,
                      const std::string& reason) {
    actions_.push_back(CompleteAction{submission_id, status, error_response_json(image_id, reason)});
  }

  // Least-loaded live worker with a free slot; ties rotate by registration
  // order, continuing after the worker picked last time.
  std::optional<std::string> select_worker() {
    std::vector<const WorkerRecord*> candidates;
    for (const auto& [id, w] : workers_) {
      if (w.live && w.outstanding.size() < static_cast<std::size_t>(w.slots)) {
        candidates.push_back(&w);
      }
    }
    if (candidates.empty()) return std::nullopt;
    std::size_t least = SIZE_MAX;
    for (const WorkerRecord* w : candidates) least = std::min(least, w->outstanding.size());
    std::vector<const WorkerRecord*> tied;
    for (const WorkerRecord* w : candidates) {
      if (w->outstanding.size() == least) tied.push_back(w);
    }
    std::sort(tied.begin(), tied.end(), [](const WorkerRecord* a, const WorkerRecord* b) {
      return a->registered_seq < b->registered_seq;
    });
    const WorkerRecord* pick = nullptr;
    for (const WorkerRecord* w : tied) {
      if (w->registered_seq > last_pick_seq_) {
        pick = w;
        break;
      }
    }
    if (!pick) pick = tied.front();
    last_pick_seq_ = pick->registered_seq;
    return pick->worker_id;
  }

  void pump(micros_t now) {
    while (!queue_.empty()) {
      std::optional<std::string> wid = select_worker();
      if (!wid) return;
      const std::string tid = queue_.front();
      queue_.pop_front();
      TaskRecord& t = tasks_.at(tid);
      WorkerRecord& w = workers_.at(*wid);
      t.state = TaskState::Dispatched;
      t.worker_id = w.worker_id;
      ++t.attempts;
      w.outstanding.insert(tid);
      TaskEnvelope env;
      env.task_id = t.task_id;
      env.image_id = t.submission.image_id;
      env.mode = t.submission.mode;
      env.attempt = t.attempts;
      env.width = t.submission.width;
      env.height = t.submission.height;
      env.format = t.submission.format;
      env.payload = t.submission.payload;
      actions_.push_back(SendFrame{w.conn_id, kMsgTask, task_header(env), t.submission.payload,
                                   t.task_id, t.submission.image_id});
      log(now, "task_dispatched", t.task_id, t.submission.image_id, w.worker_id, t.attempts);
    }
  }

  void refresh_conn_heartbeat(micros_t now, int conn_id) {
    auto it = conn_to_worker_.find(conn_id);
    if (it == conn_to_worker_.end()) return;
    auto wit = workers_.find(it->second);
    if (wit != workers_.end() && wit->second.live) wit->second.last_heartbeat_us = now;
  }

  std::string conn_worker_name(int conn_id) const {
    auto it = conn_to_worker_.find(conn_id);
    return it == conn_to_worker_.end() ? "-" : it->second;
  }

  void log(micros_t now, const std::string& event, const std::string& task,
           const std::string& image, const std::string& worker, int attempt,
           const std::string& extra = "") {
    std::string line = "ts_us=" + std::to_string(now) + " event=" + event +
                       " task=" + (task.empty() ? "-" : task) +
                       " image=" + (image.empty() ? "-" : image) +
                       " worker=" + (worker.empty() ? "-" : worker) +
                       " attempt=" + std::to_string(attempt) + extra;
    actions_.push_back(LogAction{std::move(line)});
  }

  MasterConfig cfg_;
  std::map<std::string, WorkerRecord> workers_;
  std::map<int, std::string> conn_to_worker_;
  std::map<std::string, TaskRecord> tasks_;
  std::deque<std::string> queue_;
  std::vector<MasterAction> actions_;
  std::uint64_t task_seq_ = 0;
  std::uint64_t register_seq_ = 0;
  std::uint64_t last_pick_seq_ = 0;
};

}  // namespace fogsight
