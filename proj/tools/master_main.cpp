// Orchestrator daemon: accepts worker connections on one port and detection
// requests over HTTP on another, and prints its task log to stderr.
#include "fogsight/net.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <string>
#include <thread>

namespace {
std::atomic<bool> g_stop{false};
void handle_signal(int) { g_stop.store(true); }
}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fogsight master: schedules detection tasks across fog/cloud workers"};
  fogsight::MasterServerConfig cfg;
  long heartbeat_ms = cfg.core.heartbeat_interval_us / 1000;
  long queue_timeout_ms = cfg.core.queue_wait_timeout_us / 1000;
  bool quiet = false;
  app.add_option("--bind", cfg.bind_host, "Address to bind both listeners to")
      ->capture_default_str();
  app.add_option("--worker-port", cfg.worker_port, "Port for worker connections (0 = ephemeral)")
      ->capture_default_str();
  app.add_option("--http-port", cfg.http_port, "Port for the HTTP API (0 = ephemeral)")
      ->capture_default_str();
  app.add_option("--heartbeat-interval-ms", heartbeat_ms,
                 "Expected worker heartbeat period")
      ->capture_default_str();
  app.add_option("--heartbeat-timeout-intervals", cfg.core.heartbeat_timeout_intervals,
                 "Silence longer than interval*this marks a worker dead")
      ->capture_default_str();
  app.add_option("--max-attempts", cfg.core.max_attempts,
                 "Give up on a task after this many dispatch attempts")
      ->capture_default_str();
  app.add_option("--queue-timeout-ms", queue_timeout_ms,
                 "Reject tasks that wait longer than this for a free slot")
      ->capture_default_str();
  app.add_option("--rescale-target", cfg.core.rescale_target,
                 "Long-side pixel target for reduced-latency preprocessing")
      ->capture_default_str();
  app.add_flag("--quiet", quiet, "Suppress the task log on stderr");
  CLI11_PARSE(app, argc, argv);

  cfg.core.heartbeat_interval_us = heartbeat_ms * 1000;
  cfg.core.queue_wait_timeout_us = queue_timeout_ms * 1000;
  if (!quiet) {
    cfg.on_log = [](const std::string& line) { std::fprintf(stderr, "%s\n", line.c_str()); };
  }

  fogsight::MasterServer server(cfg);
  try {
    server.start();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "failed to start: %s\n", e.what());
    return 1;
  }
  std::printf("worker_port=%d http_port=%d\n", server.worker_port(), server.http_port());
  std::fflush(stdout);

  std::signal(SIGINT, handle_signal);
  std::signal(SIGTERM, handle_signal);
  while (!g_stop.load()) {
    std::this_thread::sleep_for(std::chrono::milliseconds(200));
  }
  server.stop();
  return 0;
}
