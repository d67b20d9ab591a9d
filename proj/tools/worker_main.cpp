// Worker daemon: connects to a master, registers its slots, and serves
// detection tasks either from canned results or from grid tensor files.
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
  CLI::App app{"fogsight worker: executes detection tasks for a master"};
  std::string master_addr = "127.0.0.1:7401";
  std::string tier_str = "fog";
  std::string latency_str = "fixed:100";
  std::string grid_dir;
  double score_threshold = 0.25;
  double iou_threshold = 0.45;
  long heartbeat_ms = 2000;
  fogsight::WorkerAgentConfig cfg;
  app.add_option("--master", master_addr, "Master worker endpoint as host:port")
      ->capture_default_str();
  app.add_option("--id", cfg.worker_id, "Unique worker id")->capture_default_str();
  app.add_option("--tier", tier_str, "Placement tier: fog or cloud")->capture_default_str();
  app.add_option("--slots", cfg.slots, "Concurrent task capacity")->capture_default_str();
  app.add_option("--latency", latency_str,
                 "Simulated compute latency: fixed:MS or uniform:MS:SPREAD")
      ->capture_default_str();
  app.add_option("--seed", cfg.seed, "Seed for the latency sampler")->capture_default_str();
  app.add_option("--heartbeat-interval-ms", heartbeat_ms, "Heartbeat period")
      ->capture_default_str();
  app.add_option("--grid-dir", grid_dir,
                 "Directory of <image_id>.grid tensors; omitted = one canned detection");
  app.add_option("--score-threshold", score_threshold, "Grid decode score cutoff")
      ->capture_default_str();
  app.add_option("--iou-threshold", iou_threshold, "Grid decode overlap cutoff")
      ->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  std::string host;
  int port = 0;
  try {
    std::tie(host, port) = fogsight::parse_host_port(master_addr);
    const auto tier = fogsight::parse_tier(tier_str);
    if (!tier) throw std::invalid_argument("tier must be fog or cloud");
    cfg.tier = *tier;
    const fogsight::LatencyModel model = fogsight::parse_latency_model(latency_str);
    if (grid_dir.empty()) {
      fogsight::MockDetector det;
      det.latency = model;
      fogsight::Detection canned;
      canned.class_id = 0;
      canned.score = 0.9;
      canned.box = {0.5, 0.5, 0.2, 0.2};
      det.canned = {canned};
      cfg.detector = det;
    } else {
      fogsight::TensorFileDetector det;
      det.dir = grid_dir;
      det.score_threshold = score_threshold;
      det.iou_threshold = iou_threshold;
      det.latency = model;
      cfg.detector = det;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "bad arguments: %s\n", e.what());
    return 2;
  }
  cfg.heartbeat_interval_us = heartbeat_ms * 1000;

  fogsight::WorkerAgent agent(host, port, cfg);
  try {
    agent.start();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "failed to connect to %s: %s\n", master_addr.c_str(), e.what());
    return 1;
  }
  std::printf("worker %s connected to %s\n", cfg.worker_id.c_str(), master_addr.c_str());
  std::fflush(stdout);

  std::signal(SIGINT, handle_signal);
  std::signal(SIGTERM, handle_signal);
  while (!g_stop.load()) {
    if (agent.rejected()) {
      std::fprintf(stderr, "master rejected registration (duplicate id?)\n");
      agent.stop();
      return 1;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(200));
  }
  agent.stop();
  return 0;
}
