#pragma once

// Socket transports wrapping the orchestration cores. The master server
// accepts detection requests over HTTP and talks the length-prefixed frame
// protocol to workers over TCP; the worker agent dials in, registers, and
// serves tasks. All scheduling decisions stay inside the cores — this layer
// only moves bytes, fans threads out, and stamps wall-clock time.

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <queue>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "fogsight/clock.hpp"
#include "fogsight/master.hpp"
#include "fogsight/wire.hpp"
#include "fogsight/worker.hpp"

namespace fogsight {

inline micros_t steady_now_us() {
  return std::chrono::duration_cast<std::chrono::microseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// "host:port" with a 1-65535 port. IPv6 literals are out of scope.
inline std::pair<std::string, int> parse_host_port(const std::string& s) {
  const std::size_t colon = s.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == s.size()) {
    throw std::invalid_argument("expected host:port, got \"" + s + "\"");
  }
  const std::string host = s.substr(0, colon);
  int port = 0;
  try {
    std::size_t used = 0;
    port = std::stoi(s.substr(colon + 1), &used);
    if (used != s.size() - colon - 1) throw std::invalid_argument("");
  } catch (const std::exception&) {
    throw std::invalid_argument("bad port in \"" + s + "\"");
  }
  if (port < 1 || port > 65535) throw std::invalid_argument("port out of range in \"" + s + "\"");
  return {host, port};
}

namespace detail {

inline bool send_all(int fd, const std::uint8_t* data, std::size_t len) {
  while (len > 0) {
    const ssize_t n = ::send(fd, data, len, MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    data += n;
    len -= static_cast<std::size_t>(n);
  }
  return true;
}

inline void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

inline std::string header_or(const httplib::Request& req, const std::string& key,
                             const std::string& fallback) {
  return req.has_header(key) ? req.get_header_value(key) : fallback;
}

inline int make_listener(const std::string& host, int port, int* bound_port) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw std::runtime_error("socket() failed");
  int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    throw std::runtime_error("bad listen address: " + host);
  }
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
      ::listen(fd, 64) != 0) {
    ::close(fd);
    throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
  }
  sockaddr_in got{};
  socklen_t len = sizeof(got);
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&got), &len);
  *bound_port = ntohs(got.sin_port);
  return fd;
}

inline int connect_to(const std::string& host, int port) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0 || !res) {
    throw std::runtime_error("cannot resolve " + host);
  }
  int fd = -1;
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw std::runtime_error("cannot connect to " + host + ":" + std::to_string(port));
  set_nodelay(fd);
  return fd;
}

}  // namespace detail

// --- Master server ---------------------------------------------------------------

struct MasterServerConfig {
  std::string bind_host = "127.0.0.1";
  int worker_port = 0;  // 0 picks an ephemeral port
  int http_port = 0;
  MasterConfig core;
  micros_t tick_period_us = 200'000;
  // Upper bound on how long a detect request may block. The core resolves
  // every submission on its own (queue timeout, retry cap), so this only
  // guards against a stalled server.
  micros_t submit_wait_cap_us = 120'000'000;
  std::function<void(const std::string&)> on_log;  // optional tap, called unlocked
};

class MasterServer {
 public:
  explicit MasterServer(MasterServerConfig cfg = {}) : cfg_(std::move(cfg)), core_(cfg_.core) {}

  ~MasterServer() { stop(); }
  MasterServer(const MasterServer&) = delete;
  MasterServer& operator=(const MasterServer&) = delete;

  void start() {
    listen_fd_ = detail::make_listener(cfg_.bind_host, cfg_.worker_port, &worker_port_);
    accept_thread_ = std::thread([this] { accept_loop(); });
    tick_thread_ = std::thread([this] { tick_loop(); });

    http_.new_task_queue = [] { return new httplib::ThreadPool(32); };
    http_.Get(kHealthPath, [this](const httplib::Request&, httplib::Response& res) {
      nlohmann::json h;
      {
        std::lock_guard<std::mutex> lk(core_mu_);
        h = core_.health();
      }
      res.set_content(h.dump(), "application/json");
    });
    http_.Post(kDetectPath, [this](const httplib::Request& req, httplib::Response& res) {
      handle_detect(req, res);
    });
    http_port_ = cfg_.http_port != 0 ? cfg_.http_port : 0;
    if (cfg_.http_port != 0) {
      if (!http_.bind_to_port(cfg_.bind_host, cfg_.http_port)) {
        throw std::runtime_error("cannot bind http port " + std::to_string(cfg_.http_port));
      }
      http_port_ = cfg_.http_port;
    } else {
      http_port_ = http_.bind_to_any_port(cfg_.bind_host);
      if (http_port_ <= 0) throw std::runtime_error("cannot bind an http port");
    }
    http_thread_ = std::thread([this] { http_.listen_after_bind(); });
    http_.wait_until_ready();
  }

  void stop() {
    if (stopping_.exchange(true)) return;
    // Order matters: stop producing completions, then release anything still
    // waiting, then tear the HTTP front door down.
    if (listen_fd_ >= 0) ::shutdown(listen_fd_, SHUT_RDWR);
    {
      std::lock_guard<std::mutex> lk(conns_mu_);
      for (auto& [id, conn] : conns_) ::shutdown(conn->fd, SHUT_RDWR);
    }
    if (accept_thread_.joinable()) accept_thread_.join();
    for (std::thread& t : readers_) {
      if (t.joinable()) t.join();
    }
    if (tick_thread_.joinable()) tick_thread_.join();
    {
      std::lock_guard<std::mutex> lk(pending_mu_);
      for (auto& [id, pr] : pending_) {
        pr.set_value({503, error_response_json("", "server shutting down")});
      }
      pending_.clear();
    }
    http_.stop();
    if (http_thread_.joinable()) http_thread_.join();
    if (listen_fd_ >= 0) {
      ::close(listen_fd_);
      listen_fd_ = -1;
    }
    std::lock_guard<std::mutex> lk(conns_mu_);
    for (auto& [id, conn] : conns_) ::close(conn->fd);
    conns_.clear();
  }

  int worker_port() const { return worker_port_; }
  int http_port() const { return http_port_; }

  std::uint64_t bytes_to_workers() const { return bytes_to_workers_.load(); }
  std::uint64_t bytes_from_workers() const { return bytes_from_workers_.load(); }

  std::vector<std::string> task_log() const {
    std::lock_guard<std::mutex> lk(log_mu_);
    return log_;
  }

  nlohmann::json health_json() {
    std::lock_guard<std::mutex> lk(core_mu_);
    return core_.health();
  }

  std::size_t live_worker_count() {
    std::lock_guard<std::mutex> lk(core_mu_);
    return core_.live_worker_count();
  }

  std::size_t max_live_outstanding_spread() {
    std::lock_guard<std::mutex> lk(core_mu_);
    return core_.max_live_outstanding_spread();
  }

 private:
  struct Conn {
    int fd = -1;
    std::mutex write_mu;
  };

  void accept_loop() {
    for (;;) {
      const int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) {
        if (errno == EINTR) continue;
        return;  // listener shut down
      }
      detail::set_nodelay(fd);
      auto conn = std::make_shared<Conn>();
      conn->fd = fd;
      const int conn_id = ++conn_seq_;
      {
        std::lock_guard<std::mutex> lk(conns_mu_);
        conns_[conn_id] = conn;
      }
      readers_.emplace_back([this, conn_id, conn] { reader_loop(conn_id, conn); });
    }
  }

  void reader_loop(int conn_id, const std::shared_ptr<Conn>& conn) {
    std::vector<std::uint8_t> buf(64 * 1024);
    FrameDecoder decoder;
    for (;;) {
      const ssize_t n = ::recv(conn->fd, buf.data(), buf.size(), 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) break;
      decoder.feed(buf.data(), static_cast<std::size_t>(n));
      try {
        std::vector<MasterAction> acts;
        while (std::optional<Frame> f = decoder.next()) {
          bytes_from_workers_ += frame_wire_size(f->header.size(), f->payload.size());
          std::lock_guard<std::mutex> lk(core_mu_);
          core_.on_frame(steady_now_us(), conn_id, *f);
          for (MasterAction& a : core_.take_actions()) acts.push_back(std::move(a));
        }
        perform(acts);
      } catch (const ProtocolError&) {
        break;  // poisoned stream; drop the connection
      }
    }
    std::vector<MasterAction> acts;
    {
      std::lock_guard<std::mutex> lk(core_mu_);
      core_.on_conn_closed(steady_now_us(), conn_id);
      acts = core_.take_actions();
    }
    perform(acts);
    ::close(conn->fd);
    std::lock_guard<std::mutex> lk(conns_mu_);
    conns_.erase(conn_id);
  }

  void tick_loop() {
    while (!stopping_.load()) {
      std::this_thread::sleep_for(std::chrono::microseconds(cfg_.tick_period_us));
      std::vector<MasterAction> acts;
      {
        std::lock_guard<std::mutex> lk(core_mu_);
        core_.on_tick(steady_now_us());
        acts = core_.take_actions();
      }
      perform(acts);
    }
  }

  void handle_detect(const httplib::Request& req, httplib::Response& res) {
    const std::string image_id = req.get_header_value(kHdrImageId);
    const auto mode = parse_mode(detail::header_or(req, kHdrMode, "accuracy"));
    const auto format = parse_image_format(detail::header_or(req, kHdrFormat, "opaque"));
    if (image_id.empty() || !mode || !format || stopping_.load()) {
      res.status = stopping_.load() ? 503 : 400;
      res.set_content(
          error_response_json(image_id, stopping_.load() ? "server shutting down"
                                                         : "need X-Image-Id plus valid X-Mode/X-Format")
              .dump(),
          "application/json");
      return;
    }
    Submission s;
    s.submission_id = ++submission_seq_;
    s.image_id = image_id;
    s.mode = *mode;
    s.format = *format;
    s.width = std::atoi(detail::header_or(req, kHdrWidth, "0").c_str());
    s.height = std::atoi(detail::header_or(req, kHdrHeight, "0").c_str());
    const std::string pre = detail::header_or(req, kHdrPreRescaled, "0");
    s.pre_rescaled = pre == "1" || pre == "true";
    s.payload = make_bytes(std::vector<std::uint8_t>(req.body.begin(), req.body.end()));

    std::future<std::pair<int, nlohmann::json>> done;
    {
      std::lock_guard<std::mutex> lk(pending_mu_);
      done = pending_[s.submission_id].get_future();
    }
    std::vector<MasterAction> acts;
    {
      std::lock_guard<std::mutex> lk(core_mu_);
      core_.submit(steady_now_us(), s);
      acts = core_.take_actions();
    }
    perform(acts);

    if (done.wait_for(std::chrono::microseconds(cfg_.submit_wait_cap_us)) !=
        std::future_status::ready) {
      {
        std::lock_guard<std::mutex> lk(pending_mu_);
        pending_.erase(s.submission_id);
      }
      res.status = 504;
      res.set_content(error_response_json(image_id, "server stalled").dump(), "application/json");
      return;
    }
    const auto [status, body] = done.get();
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  void perform(std::vector<MasterAction>& acts) {
    for (MasterAction& a : acts) {
      if (auto* send = std::get_if<SendFrame>(&a)) {
        std::shared_ptr<Conn> conn;
        {
          std::lock_guard<std::mutex> lk(conns_mu_);
          auto it = conns_.find(send->conn_id);
          if (it != conns_.end()) conn = it->second;
        }
        if (!conn) continue;  // reader already tore it down; the core will notice
        static const std::vector<std::uint8_t> kEmpty;
        const std::vector<std::uint8_t> bytes =
            encode_frame(send->msg_type, send->header, send->payload ? *send->payload : kEmpty);
        std::lock_guard<std::mutex> wk(conn->write_mu);
        if (detail::send_all(conn->fd, bytes.data(), bytes.size())) {
          bytes_to_workers_ += bytes.size();
        }
      } else if (auto* complete = std::get_if<CompleteAction>(&a)) {
        std::optional<std::promise<std::pair<int, nlohmann::json>>> pr;
        {
          std::lock_guard<std::mutex> lk(pending_mu_);
          auto it = pending_.find(complete->submission_id);
          if (it != pending_.end()) {
            pr = std::move(it->second);
            pending_.erase(it);
          }
        }
        if (pr) pr->set_value({complete->http_status, std::move(complete->body)});
      } else {
        const std::string& line = std::get<LogAction>(a).line;
        {
          std::lock_guard<std::mutex> lk(log_mu_);
          log_.push_back(line);
        }
        if (cfg_.on_log) cfg_.on_log(line);
      }
    }
    acts.clear();
  }

  MasterServerConfig cfg_;
  MasterCore core_;
  std::mutex core_mu_;

  int listen_fd_ = -1;
  int worker_port_ = 0;
  int http_port_ = 0;
  std::atomic<bool> stopping_{false};
  std::atomic<int> conn_seq_{0};
  std::atomic<std::uint64_t> submission_seq_{0};
  std::atomic<std::uint64_t> bytes_to_workers_{0};
  std::atomic<std::uint64_t> bytes_from_workers_{0};

  std::mutex conns_mu_;
  std::map<int, std::shared_ptr<Conn>> conns_;
  std::vector<std::thread> readers_;
  std::thread accept_thread_;
  std::thread tick_thread_;
  std::thread http_thread_;
  httplib::Server http_;

  std::mutex pending_mu_;
  std::map<std::uint64_t, std::promise<std::pair<int, nlohmann::json>>> pending_;

  mutable std::mutex log_mu_;
  std::vector<std::string> log_;
};

// --- Worker agent ----------------------------------------------------------------

struct WorkerAgentConfig {
  std::string worker_id = "worker-1";
  Tier tier = Tier::Fog;
  int slots = 4;
  DetectorSpec detector = MockDetector{};
  std::uint64_t seed = 1;
  micros_t heartbeat_interval_us = 2'000'000;
  micros_t tick_period_us = 200'000;
};

class WorkerAgent {
 public:
  WorkerAgent(std::string host, int port, WorkerAgentConfig cfg)
      : host_(std::move(host)),
        port_(port),
        core_(cfg.worker_id, cfg.tier, cfg.slots, cfg.detector, cfg.seed,
              cfg.heartbeat_interval_us),
        tick_period_us_(cfg.tick_period_us) {}

  ~WorkerAgent() { stop(); }
  WorkerAgent(const WorkerAgent&) = delete;
  WorkerAgent& operator=(const WorkerAgent&) = delete;

  void start() {
    fd_ = detail::connect_to(host_, port_);
    std::vector<WorkerAction> acts;
    {
      std::lock_guard<std::mutex> lk(core_mu_);
      core_.on_start(steady_now_us());
      acts = core_.take_actions();
    }
    perform(acts);
    reader_thread_ = std::thread([this] { reader_loop(); });
    tick_thread_ = std::thread([this] { tick_loop(); });
    timer_thread_ = std::thread([this] { timer_loop(); });
  }

  void stop() {
    if (stopping_.exchange(true)) return;
    {
      // Taking the lock pairs the flag with the wait and closes the window
      // where the timer checks stopping_ and then sleeps forever.
      std::lock_guard<std::mutex> lk(timer_mu_);
    }
    timer_cv_.notify_all();
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
    if (reader_thread_.joinable()) reader_thread_.join();
    if (tick_thread_.joinable()) tick_thread_.join();
    if (timer_thread_.joinable()) timer_thread_.join();
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }

  bool rejected() {
    std::lock_guard<std::mutex> lk(core_mu_);
    return core_.rejected();
  }

 private:
  void reader_loop() {
    std::vector<std::uint8_t> buf(64 * 1024);
    FrameDecoder decoder;
    for (;;) {
      const ssize_t n = ::recv(fd_, buf.data(), buf.size(), 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) return;
      decoder.feed(buf.data(), static_cast<std::size_t>(n));
      try {
        std::vector<WorkerAction> acts;
        while (std::optional<Frame> f = decoder.next()) {
          std::lock_guard<std::mutex> lk(core_mu_);
          core_.on_frame(steady_now_us(), *f);
          for (WorkerAction& a : core_.take_actions()) acts.push_back(std::move(a));
        }
        perform(acts);
      } catch (const ProtocolError&) {
        return;
      }
    }
  }

  void tick_loop() {
    while (!stopping_.load()) {
      std::this_thread::sleep_for(std::chrono::microseconds(tick_period_us_));
      std::vector<WorkerAction> acts;
      {
        std::lock_guard<std::mutex> lk(core_mu_);
        core_.on_tick(steady_now_us());
        acts = core_.take_actions();
      }
      perform(acts);
    }
  }

  // Sleeps until the earliest pending detection deadline, then reports it done.
  void timer_loop() {
    std::unique_lock<std::mutex> lk(timer_mu_);
    while (!stopping_.load()) {
      if (deadlines_.empty()) {
        timer_cv_.wait(lk);
        continue;
      }
      const auto [due, task_id] = deadlines_.top();
      const micros_t now = steady_now_us();
      if (now < due) {
        timer_cv_.wait_for(lk, std::chrono::microseconds(due - now));
        continue;
      }
      deadlines_.pop();
      lk.unlock();
      std::vector<WorkerAction> acts;
      {
        std::lock_guard<std::mutex> ck(core_mu_);
        core_.on_detect_done(steady_now_us(), task_id);
        acts = core_.take_actions();
      }
      perform(acts);
      lk.lock();
    }
  }

  void perform(std::vector<WorkerAction>& acts) {
    for (WorkerAction& a : acts) {
      if (auto* send = std::get_if<WSendFrame>(&a)) {
        static const std::vector<std::uint8_t> kEmpty;
        const std::vector<std::uint8_t> bytes =
            encode_frame(send->msg_type, send->header, send->payload ? *send->payload : kEmpty);
        std::lock_guard<std::mutex> lk(write_mu_);
        detail::send_all(fd_, bytes.data(), bytes.size());
      } else if (auto* start = std::get_if<WStartDetect>(&a)) {
        {
          std::lock_guard<std::mutex> lk(timer_mu_);
          deadlines_.push({steady_now_us() + start->delay_us, start->task_id});
        }
        timer_cv_.notify_all();
      }
      // WLog lines are transport chatter; the master's log is the record.
    }
    acts.clear();
  }

  using Deadline = std::pair<micros_t, std::string>;
  struct DeadlineAfter {
    bool operator()(const Deadline& a, const Deadline& b) const { return a.first > b.first; }
  };

  std::string host_;
  int port_ = 0;
  int fd_ = -1;
  WorkerCore core_;
  std::mutex core_mu_;
  std::mutex write_mu_;
  micros_t tick_period_us_;
  std::atomic<bool> stopping_{false};

  std::mutex timer_mu_;
  std::condition_variable timer_cv_;
  std::priority_queue<Deadline, std::vector<Deadline>, DeadlineAfter> deadlines_;

  std::thread reader_thread_;
  std::thread tick_thread_;
  std::thread timer_thread_;
};

// --- Client helpers ----------------------------------------------------------------

struct DetectReply {
  int status = 0;
  nlohmann::json body;
};

inline DetectReply http_detect(const std::string& host, int port, const std::string& image_id,
                               Mode mode, ImageFormat format, int width, int height,
                               bool pre_rescaled, const std::vector<std::uint8_t>& payload,
                               int timeout_s = 150) {
  httplib::Client cli(host, port);
  cli.set_read_timeout(timeout_s, 0);
  cli.set_write_timeout(timeout_s, 0);
  httplib::Headers headers{{kHdrImageId, image_id},
                           {kHdrMode, to_string(mode)},
                           {kHdrFormat, to_string(format)},
                           {kHdrWidth, std::to_string(width)},
                           {kHdrHeight, std::to_string(height)},
                           {kHdrPreRescaled, pre_rescaled ? "1" : "0"}};
  auto res = cli.Post(kDetectPath, headers,
                      reinterpret_cast<const char*>(payload.data()), payload.size(),
                      "application/octet-stream");
  if (!res) throw std::runtime_error("detect request failed: " + to_string(res.error()));
  DetectReply out;
  out.status = res->status;
  out.body = nlohmann::json::parse(res->body, nullptr, false);
  if (out.body.is_discarded()) throw std::runtime_error("detect reply is not JSON");
  return out;
}

inline nlohmann::json http_health(const std::string& host, int port, int timeout_s = 10) {
  httplib::Client cli(host, port);
  cli.set_read_timeout(timeout_s, 0);
  auto res = cli.Get(kHealthPath);
  if (!res || res->status != 200) throw std::runtime_error("health request failed");
  nlohmann::json j = nlohmann::json::parse(res->body, nullptr, false);
  if (j.is_discarded()) throw std::runtime_error("health reply is not JSON");
  return j;
}

}  // namespace fogsight
