// Acceptance gate: one test per release criterion, each printing a PASS/FAIL
// verdict line. Tolerances are pinned here, next to the assertions they bound.
#include "fogsight/detection.hpp"
#include "fogsight/harness.hpp"
#include "fogsight/metrics.hpp"
#include "fogsight/net.hpp"
#include "fogsight/preprocess.hpp"
#include "fogsight/wire.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

using namespace fogsight;

namespace {

// Prints the criterion verdict even when an ASSERT bails out of the test body.
struct Verdict {
  int n;
  const char* what;
  ~Verdict() {
    std::printf("[criterion %d] %s  %s\n", n, ::testing::Test::HasFailure() ? "FAIL" : "PASS",
                what);
    std::fflush(stdout);
  }
};

// The eight-scenario reference suite, simulated once and shared by the
// criteria that read it. Wall time covers the simulations only.
struct SuiteRuns {
  std::vector<RunResult> runs;
  double wall_ms = 0.0;

  const RunResult* find(const std::string& name) const {
    for (const RunResult& r : runs) {
      if (r.scenario.name == name) return &r;
    }
    return nullptr;
  }
};

const SuiteRuns& suite_runs() {
  static const SuiteRuns cached = [] {
    SuiteRuns out;
    const auto t0 = std::chrono::steady_clock::now();
    for (const Scenario& sc : default_suite()) out.runs.push_back(run_scenario(sc));
    out.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return out;
  }();
  return cached;
}

std::uint64_t dir_bytes(const RunResult& r, Direction d) {
  return r.report.bytes_by_dir[static_cast<int>(d)];
}

ScenarioWorker fog_worker(const std::string& id, const std::string& model) {
  ScenarioWorker w;
  w.worker_id = id;
  w.tier = Tier::Fog;
  w.slots = 4;
  w.latency_model = model;
  w.link = {2.0, 12'500'000};
  w.power = {5.0, 10.0};
  return w;
}

// Independent NMS formulation: instead of testing each candidate against a
// kept list, repeatedly pick the best remaining box and erase everything of
// its class that it overlaps. Score ties keep the earliest input position.
std::vector<Detection> nms_oracle(const std::vector<Detection>& dets, double thr) {
  std::vector<char> alive(dets.size(), 1);
  std::vector<Detection> out;
  for (;;) {
    int best = -1;
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (alive[i] && (best < 0 || dets[i].score > dets[static_cast<std::size_t>(best)].score)) {
        best = static_cast<int>(i);
      }
    }
    if (best < 0) break;
    const auto b = static_cast<std::size_t>(best);
    out.push_back(dets[b]);
    alive[b] = 0;
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (alive[i] && dets[i].class_id == dets[b].class_id && iou(dets[b].box, dets[i].box) >= thr) {
        alive[i] = 0;
      }
    }
  }
  return out;
}

// Naive re-derivation of the greedy matcher, walking ranks and ground truths
// with explicit loops: rank by (score desc, input order), give each detection
// the free ground-truth box of highest IoU, lowest index on ties.
MatchResult match_oracle(const std::vector<Detection>& dets,
                         const std::vector<BoundingBox>& gts, double thr) {
  std::vector<std::size_t> order(dets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    return a < b;
  });
  std::vector<char> used(gts.size(), 0);
  MatchResult res;
  res.n_gt = static_cast<int>(gts.size());
  for (std::size_t i : order) {
    double best = -1.0;
    int pick = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g]) continue;
      const double v = iou(dets[i].box, gts[g]);
      if (v > best) {
        best = v;
        pick = static_cast<int>(g);
      }
    }
    if (pick >= 0 && best >= thr) {
      used[static_cast<std::size_t>(pick)] = 1;
      res.tp_flags.push_back(true);
    } else {
      res.tp_flags.push_back(false);
    }
  }
  return res;
}

bool same_detections(const std::vector<Detection>& a, const std::vector<Detection>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].class_id != b[i].class_id || a[i].score != b[i].score ||
        a[i].box.cx != b[i].box.cx || a[i].box.cy != b[i].box.cy || a[i].box.w != b[i].box.w ||
        a[i].box.h != b[i].box.h) {
      return false;
    }
  }
  return true;
}

// Hand-assembled frame bytes, written independently of the codec.
std::vector<std::uint8_t> golden_frame(std::uint8_t type, const std::string& header,
                                       const std::vector<std::uint8_t>& payload) {
  const std::uint32_t total = static_cast<std::uint32_t>(5 + header.size() + payload.size());
  const std::uint32_t hlen = static_cast<std::uint32_t>(header.size());
  std::vector<std::uint8_t> out;
  out.push_back(static_cast<std::uint8_t>(total >> 24));
  out.push_back(static_cast<std::uint8_t>(total >> 16));
  out.push_back(static_cast<std::uint8_t>(total >> 8));
  out.push_back(static_cast<std::uint8_t>(total));
  out.push_back(type);
  out.push_back(static_cast<std::uint8_t>(hlen >> 24));
  out.push_back(static_cast<std::uint8_t>(hlen >> 16));
  out.push_back(static_cast<std::uint8_t>(hlen >> 8));
  out.push_back(static_cast<std::uint8_t>(hlen));
  out.insert(out.end(), header.begin(), header.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

std::filesystem::path fresh_dir(const std::string& leaf) {
  const auto dir = std::filesystem::temp_directory_path() / ("fogsight_gate_" + leaf);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Gate, C1RescaleFidelity) {
  Verdict v{1, "reduced-latency preprocessing maps 4000x2192 to exactly 200x110"};
  const Dims d = rescale_dims(4000, 2192, 200);
  EXPECT_EQ(d.width, 200);
  EXPECT_EQ(d.height, 110);
  const Dims flipped = rescale_dims(2192, 4000, 200);
  EXPECT_EQ(flipped.width, 110);
  EXPECT_EQ(flipped.height, 200);
}

TEST(Gate, C2RequestByteRatio) {
  Verdict v{2, "full vs reduced payload request bytes track the payload ratio within 1%"};
  const SuiteRuns& s = suite_runs();
  const RunResult* acc = s.find("fog_x1_accuracy");
  const RunResult* lat = s.find("fog_x1_latency");
  ASSERT_NE(acc, nullptr);
  ASSERT_NE(lat, nullptr);
  // Ten submissions per minute for ten simulated minutes, in both modes.
  ASSERT_EQ(acc->report.injected, 100u);
  ASSERT_EQ(lat->report.injected, 100u);
  const std::uint64_t acc_bytes = dir_bytes(*acc, Direction::GatewayToMaster);
  const std::uint64_t lat_bytes = dir_bytes(*lat, Direction::GatewayToMaster);
  // Pinned totals: 100 x (16-byte envelope + image id + body) with ids
  // img-1..img-100 (592 id bytes) and bodies of 943718 / 4956 bytes.
  EXPECT_EQ(acc_bytes, 94373992u);
  EXPECT_EQ(lat_bytes, 497792u);
  const double payload_ratio = 943718.0 / 4956.0;
  const double got_ratio = static_cast<double>(acc_bytes) / static_cast<double>(lat_bytes);
  EXPECT_LE(std::abs(got_ratio / payload_ratio - 1.0), 0.01)
      << "measured " << got_ratio << " vs payload " << payload_ratio;
}

TEST(Gate, C3SuiteOrderings) {
  Verdict v{3, "reference suite reproduces the response/jitter/energy orderings in <10s"};
  const SuiteRuns& s = suite_runs();
  ASSERT_EQ(s.runs.size(), 8u);
  EXPECT_LT(s.wall_ms, 10'000.0) << "suite simulation took " << s.wall_ms << " ms";
  for (const std::string& violation : consistency_violations(s.runs)) {
    ADD_FAILURE() << violation;
  }
  for (const std::string& mode : {"accuracy", "latency"}) {
    const MetricsReport& f1 = s.find("fog_x1_" + mode)->report;
    const MetricsReport& f2 = s.find("fog_x2_" + mode)->report;
    const MetricsReport& cn = s.find("cloud_near_" + mode)->report;
    const MetricsReport& cf = s.find("cloud_far_" + mode)->report;
    // Mean response: fog_x2 <= fog_x1 < cloud_near < cloud_far.
    EXPECT_LE(f2.mean_response_ms, f1.mean_response_ms + 1e-9) << mode;
    EXPECT_LT(f1.mean_response_ms, cn.mean_response_ms) << mode;
    EXPECT_LT(cn.mean_response_ms, cf.mean_response_ms) << mode;
    // Jitter: fog deployments sit below cloud deployments; fog_x2 <= fog_x1.
    EXPECT_LE(f2.jitter_ms, f1.jitter_ms + 1e-9) << mode;
    EXPECT_LT(std::max(f1.jitter_ms, f2.jitter_ms), std::min(cn.jitter_ms, cf.jitter_ms)) << mode;
    // Energy: cloud deployments cost more overall; twin fog nodes draw about
    // double the fog energy of one node (10% band) at this utilization.
    EXPECT_GT(cn.energy_total_j, f1.energy_total_j) << mode;
    EXPECT_GT(cn.energy_total_j, f2.energy_total_j) << mode;
    EXPECT_GT(cf.energy_total_j, f1.energy_total_j) << mode;
    EXPECT_GT(cf.energy_total_j, f2.energy_total_j) << mode;
    ASSERT_GT(f1.energy_fog_j, 0.0) << mode;
    EXPECT_LE(std::abs(f2.energy_fog_j / (2.0 * f1.energy_fog_j) - 1.0), 0.10) << mode;
  }
  for (const std::string& topo : {"fog_x1", "fog_x2", "cloud_near", "cloud_far"}) {
    const MetricsReport& acc = s.find(topo + "_accuracy")->report;
    const MetricsReport& lat = s.find(topo + "_latency")->report;
    EXPECT_LT(lat.mean_response_ms, acc.mean_response_ms) << topo;
  }
}

TEST(Gate, C4DetectionOracles) {
  Verdict v{4, "suppression/matching equal brute-force oracles; pinned AP values; mAP 1.0"};

  // Suppression vs the erase-style oracle on 1000 seeded lattice instances,
  // n <= 12, with degenerate zero-area boxes and frequent score ties.
  std::uint64_t rng = 0xC4A11u;
  const double nms_thrs[] = {0.0, 0.3, 0.45, 0.5, 1.0};
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = static_cast<int>(splitmix64(rng) % 13);
    std::vector<Detection> dets;
    for (int i = 0; i < n; ++i) {
      Detection d;
      d.class_id = static_cast<int>(splitmix64(rng) % 2);
      d.score = 0.1 * (1.0 + static_cast<double>(splitmix64(rng) % 9));
      d.box.cx = 0.1 + 0.2 * static_cast<double>(splitmix64(rng) % 5);
      d.box.cy = 0.1 + 0.2 * static_cast<double>(splitmix64(rng) % 5);
      d.box.w = 0.1 * static_cast<double>(splitmix64(rng) % 5);
      d.box.h = 0.1 * static_cast<double>(splitmix64(rng) % 5);
      dets.push_back(d);
    }
    const double thr = nms_thrs[trial % 5];
    ASSERT_TRUE(same_detections(nms(dets, thr), nms_oracle(dets, thr)))
        << "trial " << trial << " thr " << thr;
  }

  // Matching vs the naive oracle on 2000 seeded instances, <=5 detections and
  // <=3 ground truths on a coarse lattice so IoU ties actually happen.
  rng = 0xD47C8u;
  const double match_thrs[] = {0.0, 0.25, 0.5};
  for (int trial = 0; trial < 2000; ++trial) {
    const int nd = static_cast<int>(splitmix64(rng) % 6);
    const int ng = static_cast<int>(splitmix64(rng) % 4);
    std::vector<Detection> dets;
    for (int i = 0; i < nd; ++i) {
      Detection d;
      d.class_id = 0;
      d.score = 0.1 * (1.0 + static_cast<double>(splitmix64(rng) % 9));
      d.box.cx = 0.2 * (1.0 + static_cast<double>(splitmix64(rng) % 3));
      d.box.cy = 0.2 * (1.0 + static_cast<double>(splitmix64(rng) % 3));
      d.box.w = 0.2 * (1.0 + static_cast<double>(splitmix64(rng) % 2));
      d.box.h = 0.2 * (1.0 + static_cast<double>(splitmix64(rng) % 2));
      dets.push_back(d);
    }
    std::vector<BoundingBox> gts;
    for (int g = 0; g < ng; ++g) {
      BoundingBox b;
      b.cx = 0.2 * (1.0 + static_cast<double>(splitmix64(rng) % 3));
      b.cy = 0.2 * (1.0 + static_cast<double>(splitmix64(rng) % 3));
      b.w = 0.2 * (1.0 + static_cast<double>(splitmix64(rng) % 2));
      b.h = 0.2 * (1.0 + static_cast<double>(splitmix64(rng) % 2));
      gts.push_back(b);
    }
    const double thr = match_thrs[trial % 3];
    const MatchResult got = match_detections(dets, gts, thr);
    const MatchResult want = match_oracle(dets, gts, thr);
    ASSERT_EQ(got.n_gt, want.n_gt) << "trial " << trial;
    ASSERT_EQ(got.tp_flags, want.tp_flags) << "trial " << trial << " thr " << thr;
  }

  // The three pinned precision-recall examples, to 1e-12.
  EXPECT_NEAR(average_precision({true}, 1).value(), 1.0, 1e-12);
  EXPECT_NEAR(average_precision({false, true}, 1).value(), 0.5, 1e-12);
  EXPECT_NEAR(average_precision({true, false}, 1).value(), 1.0, 1e-12);

  // Perfect detections over a 20-class corpus: mAP exactly 1.0. Eight images
  // keep every class's recall steps on exact binary fractions.
  rng = 0x20C1A55u;
  std::vector<GroundTruthImage> gt;
  std::map<std::string, std::vector<Detection>> dets_by_image;
  for (int img = 0; img < 8; ++img) {
    GroundTruthImage g;
    g.image_id = "corpus-" + std::to_string(img + 1);
    for (int cls = 0; cls < 20; ++cls) {
      Annotation a;
      a.class_id = cls;
      a.box = {(cls + 1) / 25.0, (img + 1) / 10.0, 0.02, 0.02};
      g.annotations.push_back(a);
      Detection d;
      d.class_id = cls;
      d.score = 0.5 + static_cast<double>(splitmix64(rng) % 1000) / 2000.0;
      d.box = a.box;
      dets_by_image[g.image_id].push_back(d);
    }
    gt.push_back(g);
  }
  const auto per_class = evaluate_dataset(dets_by_image, gt, kDefaultMatchIouThreshold);
  ASSERT_EQ(per_class.size(), 20u);
  for (const auto& [cls, ap] : per_class) {
    ASSERT_TRUE(ap.has_value()) << "class " << cls;
    EXPECT_EQ(*ap, 1.0) << "class " << cls;
  }
  EXPECT_EQ(mean_ap(per_class), 1.0);
}

TEST(Gate, C5ProtocolConformance) {
  Verdict v{5, "golden frames round-trip, streaming equals whole-buffer, fuzz stays capped"};

  const std::vector<std::uint8_t> task_payload = {0xDE, 0xAD, 0xBE, 0xEF};
  RegisterEnvelope reg;
  reg.worker_id = "w-a";
  reg.tier = Tier::Fog;
  reg.slots = 4;
  TaskEnvelope task;
  task.task_id = "t-9";
  task.image_id = "img-9";
  task.mode = Mode::HighAccuracy;
  task.attempt = 1;
  task.width = 7;
  task.height = 3;
  task.format = ImageFormat::Opaque;
  ResultEnvelope result;
  result.task_id = "t-9";
  result.worker_id = "w-a";
  result.detections = default_canned_detections();
  result.compute_ms = 12.5;
  ErrorEnvelope err;
  err.task_id = "t-9";
  err.worker_id = "w-a";
  err.message = "no free slot";

  struct Golden {
    std::uint8_t type;
    std::string built_header;
    std::string pinned_header;
    std::vector<std::uint8_t> payload;
  };
  const std::vector<Golden> goldens = {
      {kMsgRegister, register_header(reg), R"({"slots":4,"tier":"fog","worker_id":"w-a"})", {}},
      {kMsgTask, task_header(task),
       R"({"attempt":1,"format":"opaque","height":3,"image_id":"img-9","mode":"accuracy","task_id":"t-9","width":7})",
       task_payload},
      {kMsgResult, result_header(result),
       R"({"compute_ms":12.5,"detections":[{"class_id":0,"cx":0.5,"cy":0.5,"h":0.2,"score":0.9,"w":0.2}],"task_id":"t-9","worker_id":"w-a"})",
       {}},
      {kMsgHeartbeat, heartbeat_header("w-a"), R"({"worker_id":"w-a"})", {}},
      {kMsgError, error_header(err),
       R"({"message":"no free slot","task_id":"t-9","worker_id":"w-a"})", {}},
  };

  std::vector<std::uint8_t> stream;
  std::vector<Frame> whole_buffer;
  for (const Golden& g : goldens) {
    ASSERT_EQ(g.built_header, g.pinned_header) << "type " << int(g.type);
    const std::vector<std::uint8_t> bytes = golden_frame(g.type, g.pinned_header, g.payload);
    EXPECT_EQ(encode_frame(g.type, g.built_header, g.payload), bytes) << "type " << int(g.type);
    const DecodeOutcome out = decode_frame(bytes);
    ASSERT_TRUE(out.frame.has_value());
    EXPECT_EQ(out.consumed, bytes.size());
    EXPECT_EQ(out.frame->msg_type, g.type);
    EXPECT_EQ(out.frame->header, g.pinned_header);
    EXPECT_EQ(out.frame->payload, g.payload);
    whole_buffer.push_back(*out.frame);
    stream.insert(stream.end(), bytes.begin(), bytes.end());
  }
  // Envelope round-trips through the parsers.
  {
    const RegisterEnvelope r2 = parse_register_header(nlohmann::json::parse(goldens[0].pinned_header));
    EXPECT_EQ(r2.worker_id, reg.worker_id);
    EXPECT_EQ(r2.tier, reg.tier);
    EXPECT_EQ(r2.slots, reg.slots);
    const TaskEnvelope t2 = parse_task_header(nlohmann::json::parse(goldens[1].pinned_header));
    EXPECT_EQ(t2.task_id, task.task_id);
    EXPECT_EQ(t2.image_id, task.image_id);
    EXPECT_EQ(t2.mode, task.mode);
    EXPECT_EQ(t2.attempt, task.attempt);
    EXPECT_EQ(t2.width, task.width);
    EXPECT_EQ(t2.height, task.height);
    EXPECT_EQ(t2.format, task.format);
    const ResultEnvelope res2 = parse_result_header(nlohmann::json::parse(goldens[2].pinned_header));
    EXPECT_EQ(res2.task_id, result.task_id);
    EXPECT_EQ(res2.worker_id, result.worker_id);
    EXPECT_EQ(res2.compute_ms, result.compute_ms);
    ASSERT_TRUE(same_detections(res2.detections, result.detections));
    const ErrorEnvelope e2 = parse_error_header(nlohmann::json::parse(goldens[4].pinned_header));
    EXPECT_EQ(e2.task_id, err.task_id);
    EXPECT_EQ(e2.worker_id, err.worker_id);
    EXPECT_EQ(e2.message, err.message);
  }

  // One byte at a time equals the whole concatenated buffer.
  FrameDecoder dec;
  std::vector<Frame> streamed;
  for (std::uint8_t b : stream) {
    dec.feed(&b, 1);
    while (auto f = dec.next()) streamed.push_back(*f);
  }
  ASSERT_EQ(streamed.size(), whole_buffer.size());
  for (std::size_t i = 0; i < streamed.size(); ++i) {
    EXPECT_EQ(streamed[i].msg_type, whole_buffer[i].msg_type);
    EXPECT_EQ(streamed[i].header, whole_buffer[i].header);
    EXPECT_EQ(streamed[i].payload, whole_buffer[i].payload);
  }
  EXPECT_EQ(dec.buffered(), 0u);

  // A declared length past the cap is refused from the prefix alone, before
  // any body bytes could pile up in the decoder.
  {
    FrameDecoder big;
    const std::vector<std::uint8_t> prefix = {0x04, 0x00, 0x00, 0x00, kMsgTask, 0, 0, 0, 2};
    big.feed(prefix);
    EXPECT_THROW(big.next(), ProtocolError);
    EXPECT_LE(big.buffered(), prefix.size());
  }

  // 10000-case fuzz: random garbage, bit flips, truncations, and hostile
  // length fields may only yield frames or ProtocolError, and the decoder
  // never buffers past the cap plus one feed chunk.
  std::uint64_t rng = 0xF022u;
  FrameDecoder fuzz_dec;
  int decoded = 0, rejected = 0;
  for (int i = 0; i < 10'000; ++i) {
    std::vector<std::uint8_t> chunk;
    switch (i % 4) {
      case 0: {  // raw noise
        const std::size_t n = splitmix64(rng) % 64;
        for (std::size_t k = 0; k < n; ++k) chunk.push_back(static_cast<std::uint8_t>(splitmix64(rng)));
        break;
      }
      case 1: {  // valid frame with one byte flipped
        chunk = golden_frame(goldens[i % 5].type, goldens[i % 5].pinned_header,
                             goldens[i % 5].payload);
        chunk[splitmix64(rng) % chunk.size()] ^= static_cast<std::uint8_t>(1 + splitmix64(rng) % 255);
        break;
      }
      case 2: {  // truncated valid frame
        chunk = golden_frame(goldens[i % 5].type, goldens[i % 5].pinned_header,
                             goldens[i % 5].payload);
        chunk.resize(splitmix64(rng) % chunk.size());
        break;
      }
      default: {  // hostile length fields
        const std::uint32_t total = static_cast<std::uint32_t>(splitmix64(rng));
        const std::uint32_t hlen = static_cast<std::uint32_t>(splitmix64(rng));
        chunk = {static_cast<std::uint8_t>(total >> 24), static_cast<std::uint8_t>(total >> 16),
                 static_cast<std::uint8_t>(total >> 8),  static_cast<std::uint8_t>(total),
                 static_cast<std::uint8_t>(1 + splitmix64(rng) % 7),
                 static_cast<std::uint8_t>(hlen >> 24),  static_cast<std::uint8_t>(hlen >> 16),
                 static_cast<std::uint8_t>(hlen >> 8),   static_cast<std::uint8_t>(hlen)};
        break;
      }
    }
    try {
      fuzz_dec.feed(chunk);
      while (auto f = fuzz_dec.next()) ++decoded;
    } catch (const ProtocolError&) {
      ++rejected;
      fuzz_dec = FrameDecoder();  // a real reader drops the connection here
    }
    ASSERT_LE(fuzz_dec.buffered(), kDefaultMaxFrameBytes + 4096) << "iteration " << i;
    if (i % 10 == 0) {  // a clean connection still decodes intact frames
      const Golden& g = goldens[(i / 10) % 5];
      FrameDecoder clean;
      clean.feed(golden_frame(g.type, g.pinned_header, g.payload));
      const auto f = clean.next();
      ASSERT_TRUE(f.has_value()) << "iteration " << i;
      ASSERT_EQ(f->header, g.pinned_header) << "iteration " << i;
      ++decoded;
    }
  }
  EXPECT_GT(decoded, 0);
  EXPECT_GT(rejected, 0);
}

TEST(Gate, C6SchedulerAndFailover) {
  Verdict v{6, "balanced dispatch, exactly-once completion under a kill, duplicates dropped"};
  const SuiteRuns& s = suite_runs();

  // 100 tasks over two equal fog nodes: split 50 +/- 5, and the replayed
  // outstanding counts never drift more than one task apart.
  const RunResult* f2 = s.find("fog_x2_accuracy");
  ASSERT_NE(f2, nullptr);
  ASSERT_EQ(f2->report.completed, 100u);
  std::map<std::string, int> per_worker;
  for (const CompletionEntry& c : f2->ledger.completions) per_worker[c.worker_id]++;
  ASSERT_EQ(per_worker.size(), 2u);
  for (const auto& [worker, count] : per_worker) {
    EXPECT_GE(count, 45) << worker;
    EXPECT_LE(count, 55) << worker;
  }
  std::map<std::string, int> outstanding;
  int max_spread = 0;
  for (const std::string& line : f2->task_log) {
    const auto kv = parse_log_line(line);
    const auto ev = kv.find("event");
    const auto wk = kv.find("worker");
    if (ev == kv.end() || wk == kv.end() || wk->second == "-") continue;
    if (ev->second == "task_dispatched") outstanding[wk->second]++;
    else if (ev->second == "task_done" || ev->second == "attempt_failed") outstanding[wk->second]--;
    else continue;
    const int a = outstanding["fog-1"];
    const int b = outstanding["fog-2"];
    max_spread = std::max(max_spread, std::abs(a - b));
  }
  EXPECT_LE(max_spread, 1);

  // Kill one of two workers halfway through 50 tasks: every image still
  // completes exactly once and nothing is reported failed.
  Scenario kill_sc;
  kill_sc.name = "gate_kill";
  kill_sc.mode = Mode::HighAccuracy;
  kill_sc.seed = 7;
  kill_sc.duration_s = 300.0;
  kill_sc.rate_per_min = 10.0;
  kill_sc.client_link = {2.0, 12'500'000};
  kill_sc.payload.format = ImageFormat::Opaque;
  kill_sc.payload.bytes = 943718;
  kill_sc.workers.push_back(fog_worker("fog-1", "fixed:600"));
  kill_sc.workers.push_back(fog_worker("fog-2", "fixed:600"));
  Fault kill;
  kill.kind = Fault::Kind::Kill;
  kill.worker = "fog-1";
  kill.at_s = 150.05;
  kill_sc.faults.push_back(kill);
  const RunResult killed = run_scenario(kill_sc);
  EXPECT_EQ(killed.report.injected, 50u);
  EXPECT_EQ(killed.report.completed, 50u);
  EXPECT_EQ(killed.report.failed, 0u);
  std::set<std::string> kill_images;
  for (const CompletionEntry& c : killed.ledger.completions) kill_images.insert(c.image_id);
  EXPECT_EQ(kill_images.size(), 50u);
  std::set<std::string> responded;
  for (const GatewayRecord& g : killed.gateway) {
    EXPECT_EQ(g.http_status, 200) << g.image_id;
    EXPECT_TRUE(responded.insert(g.image_id).second) << "duplicate response " << g.image_id;
  }
  EXPECT_EQ(responded.size(), 50u);

  // A stalled worker's late results surface after its tasks were re-run
  // elsewhere; first result wins and the replays are discarded.
  Scenario stall_sc;
  stall_sc.name = "gate_stall";
  stall_sc.mode = Mode::HighAccuracy;
  stall_sc.seed = 7;
  stall_sc.duration_s = 60.0;
  stall_sc.rate_per_min = 10.0;
  stall_sc.client_link = {2.0, 12'500'000};
  stall_sc.payload.format = ImageFormat::Opaque;
  stall_sc.payload.bytes = 943718;
  stall_sc.workers.push_back(fog_worker("fog-1", "fixed:600"));
  stall_sc.workers.push_back(fog_worker("fog-2", "fixed:600"));
  Fault stall;
  stall.kind = Fault::Kind::Stall;
  stall.worker = "fog-1";
  stall.from_s = 9.05;
  stall.until_s = 25.0;
  stall_sc.faults.push_back(stall);
  const RunResult stalled = run_scenario(stall_sc);
  EXPECT_EQ(stalled.report.completed, 10u);
  EXPECT_EQ(stalled.report.failed, 0u);
  bool saw_duplicate = false;
  for (const std::string& line : stalled.task_log) {
    if (line.find("event=duplicate_discarded") != std::string::npos) saw_duplicate = true;
  }
  EXPECT_TRUE(saw_duplicate);
  std::set<std::string> stall_images;
  for (const CompletionEntry& c : stalled.ledger.completions) stall_images.insert(c.image_id);
  EXPECT_EQ(stall_images.size(), 10u);
}

TEST(Gate, C7Determinism) {
  Verdict v{7, "same-seed suite reruns produce byte-identical artifacts"};
  const auto dir_a = fresh_dir("det_a");
  const auto dir_b = fresh_dir("det_b");
  for (const Scenario& sc : default_suite()) write_run_artifacts(dir_a.string(), run_scenario(sc));
  for (const Scenario& sc : default_suite()) write_run_artifacts(dir_b.string(), run_scenario(sc));
  int compared = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir_a)) {
    const auto leaf = entry.path().filename();
    ASSERT_TRUE(std::filesystem::exists(dir_b / leaf)) << leaf;
    EXPECT_EQ(slurp(entry.path()), slurp(dir_b / leaf)) << leaf;
    ++compared;
  }
  EXPECT_EQ(compared, 8 * 6);  // six artifact files per scenario
  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);
}

TEST(Gate, C8SimRealAgreement) {
  Verdict v{8, "virtual-clock run matches the live-socket run: counts, payloads, 50ms slack"};

  Scenario sc;
  sc.name = "gate_sim_real";
  sc.mode = Mode::HighAccuracy;
  sc.seed = 7;
  sc.duration_s = 3.0;
  sc.rate_per_min = 200.0;  // ten submissions, 300 ms apart
  sc.client_link = {0.5, 100'000'000};
  sc.payload.format = ImageFormat::Opaque;
  sc.payload.bytes = 1000;
  sc.payload.rescaled_bytes = 1000;
  sc.payload.width = 64;
  sc.payload.height = 48;
  ScenarioWorker w;
  w.worker_id = "fog-1";
  w.tier = Tier::Fog;
  w.slots = 4;
  w.latency_model = "fixed:100";
  w.link = {0.5, 100'000'000};
  w.power = {5.0, 10.0};
  sc.workers.push_back(w);

  const RunResult sim = run_scenario(sc);
  ASSERT_EQ(sim.report.injected, 10u);
  ASSERT_EQ(sim.report.completed, 10u);
  std::map<std::string, const GatewayRecord*> sim_by_image;
  for (const GatewayRecord& g : sim.gateway) sim_by_image[g.image_id] = &g;
  std::uint64_t sim_task_bytes = 0;
  for (const LedgerEntry& e : sim.ledger.entries) {
    if (e.direction == Direction::MasterToWorker) sim_task_bytes += e.bytes;
  }

  // The same workload over real loopback sockets.
  MasterServerConfig mcfg;
  mcfg.tick_period_us = 100'000;
  MasterServer master(mcfg);
  master.start();
  WorkerAgentConfig wcfg;
  wcfg.worker_id = "fog-1";
  wcfg.tier = Tier::Fog;
  wcfg.slots = 4;
  MockDetector det;
  det.latency = parse_latency_model("fixed:100");
  det.canned = default_canned_detections();
  wcfg.detector = det;
  wcfg.tick_period_us = 100'000;
  WorkerAgent worker("127.0.0.1", master.worker_port(), wcfg);
  worker.start();
  const auto registered = [&] { return master.live_worker_count() == 1; };
  const auto reg_deadline = std::chrono::steady_clock::now() + std::chrono::seconds(5);
  while (!registered() && std::chrono::steady_clock::now() < reg_deadline) {
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  ASSERT_TRUE(registered());

  const std::vector<std::uint8_t> body(1000, 0x5A);
  const std::vector<micros_t> schedule = injection_schedule(sc.rate_per_min, 3'000'000);
  ASSERT_EQ(schedule.size(), 10u);
  struct RealResult {
    DetectReply reply;
    double response_ms = 0.0;
  };
  const auto base = std::chrono::steady_clock::now() + std::chrono::milliseconds(50);
  std::vector<std::future<RealResult>> futs;
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    futs.push_back(std::async(std::launch::async, [&, i] {
      std::this_thread::sleep_until(base + std::chrono::microseconds(schedule[i]));
      const auto t0 = std::chrono::steady_clock::now();
      RealResult rr;
      rr.reply = http_detect("127.0.0.1", master.http_port(), "img-" + std::to_string(i + 1),
                             Mode::HighAccuracy, ImageFormat::Opaque, 64, 48, false, body);
      rr.response_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      return rr;
    }));
  }
  int real_completed = 0;
  for (std::size_t i = 0; i < futs.size(); ++i) {
    const std::string image_id = "img-" + std::to_string(i + 1);
    RealResult rr;
    try {
      rr = futs[i].get();
    } catch (const std::exception& e) {
      ADD_FAILURE() << image_id << ": " << e.what();
      continue;
    }
    EXPECT_EQ(rr.reply.status, 200) << image_id;
    if (rr.reply.status == 200) ++real_completed;
    const auto it = sim_by_image.find(image_id);
    ASSERT_NE(it, sim_by_image.end()) << image_id;
    const GatewayRecord& g = *it->second;
    EXPECT_EQ(g.http_status, 200) << image_id;
    // Detection payloads are identical, not merely close.
    EXPECT_EQ(rr.reply.body.at("detections"), g.body.at("detections")) << image_id;
    EXPECT_EQ(rr.reply.body.at("timing").at("worker_id"), g.body.at("timing").at("worker_id"))
        << image_id;
    ASSERT_TRUE(g.response_us.has_value()) << image_id;
    const double sim_ms = static_cast<double>(*g.response_us - g.inject_us) / 1000.0;
    EXPECT_LE(std::abs(rr.response_ms - sim_ms), 50.0)
        << image_id << ": real " << rr.response_ms << " ms vs simulated " << sim_ms << " ms";
  }
  EXPECT_EQ(static_cast<std::uint64_t>(real_completed), sim.report.completed);
  // Every dispatched byte is accounted for identically in both transports.
  EXPECT_EQ(master.bytes_to_workers(), sim_task_bytes);
  worker.stop();
  master.stop();
}

TEST(Gate, C9ThroughputSustainment) {
  Verdict v{9, "10 submissions/min are sustained at 10.0 +/- 0.1 frames/min everywhere"};
  const SuiteRuns& s = suite_runs();
  ASSERT_EQ(s.runs.size(), 8u);
  for (const RunResult& r : s.runs) {
    // Service times here are far below the saturation point for this rate.
    EXPECT_LT(r.report.mean_response_ms, 6000.0) << r.scenario.name;
    EXPECT_NEAR(r.report.fpm, 10.0, 0.1) << r.scenario.name;
  }
}
