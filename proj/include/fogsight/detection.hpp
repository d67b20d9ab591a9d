#pragma once

// Grid-based detection decoding, IoU, and greedy per-class non-maximum
// suppression. A detector output tensor is an s x s grid where every cell
// predicts one candidate box: [confidence, cx, cy, w, h, p_1 .. p_k].
// All box coordinates are center-format and normalized to [0, 1].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fogsight {

struct GridSpec {
  int side = 7;         // cells per axis
  int num_classes = 20;

  int cell_len() const { return 5 + num_classes; }
  std::size_t cell_count() const { return static_cast<std::size_t>(side) * side; }
  std::size_t element_count() const { return cell_count() * cell_len(); }
  bool valid() const { return side >= 1 && num_classes >= 1; }
  bool operator==(const GridSpec&) const = default;
};

struct CellPrediction {
  double confidence = 0.0;
  double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;
  std::vector<double> class_probs;
};

// Row-major cells: index = row * side + col.
struct GridTensor {
  GridSpec spec;
  std::vector<CellPrediction> cells;
};

struct BoundingBox {
  double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;

  double x1() const { return cx - w / 2.0; }
  double y1() const { return cy - h / 2.0; }
  double x2() const { return cx + w / 2.0; }
  double y2() const { return cy + h / 2.0; }
  // Derived from corners so that iou(b, b) == 1.0 holds exactly.
  double area() const { return (x2() - x1()) * (y2() - y1()); }
};

struct Detection {
  BoundingBox box;
  int class_id = 0;
  double score = 0.0;
};

// Malformed tensor; row/col name the offending cell, -1 for tensor-level faults.
class TensorValidationError : public std::runtime_error {
 public:
  TensorValidationError(const std::string& msg, int row, int col)
      : std::runtime_error(msg), row(row), col(col) {}
  int row;
  int col;
};

// Two detections mapped to the same grid cell during encoding.
class CellConflictError : public std::runtime_error {
 public:
  CellConflictError(const std::string& msg, int row, int col)
      : std::runtime_error(msg), row(row), col(col) {}
  int row;
  int col;
};

inline double iou(const BoundingBox& a, const BoundingBox& b) {
  const double ix = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
  const double iy = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
  const double inter = (ix > 0.0 && iy > 0.0) ? ix * iy : 0.0;
  const double uni = a.area() + b.area() - inter;
  if (uni > 0.0) return inter / uni;
  // Zero-area union: identical corners count as a full match, anything else as none.
  const bool same = a.x1() == b.x1() && a.y1() == b.y1() && a.x2() == b.x2() && a.y2() == b.y2();
  return same ? 1.0 : 0.0;
}

inline void validate_tensor(const GridTensor& t) {
  if (!t.spec.valid()) {
    throw TensorValidationError("grid spec invalid: side and num_classes must be >= 1", -1, -1);
  }
  if (t.cells.size() != t.spec.cell_count()) {
    std::ostringstream os;
    os << "cell count " << t.cells.size() << " does not match grid " << t.spec.side << "x"
       << t.spec.side;
    throw TensorValidationError(os.str(), -1, -1);
  }
  for (std::size_t i = 0; i < t.cells.size(); ++i) {
    const int row = static_cast<int>(i) / t.spec.side;
    const int col = static_cast<int>(i) % t.spec.side;
    const CellPrediction& c = t.cells[i];
    auto fail = [&](const char* what) {
      std::ostringstream os;
      os << "cell (" << row << "," << col << "): " << what;
      throw TensorValidationError(os.str(), row, col);
    };
    if (!std::isfinite(c.confidence) || !std::isfinite(c.cx) || !std::isfinite(c.cy) ||
        !std::isfinite(c.w) || !std::isfinite(c.h)) {
      fail("non-finite value");
    }
    if (c.confidence < 0.0 || c.confidence > 1.0) fail("confidence outside [0,1]");
    if (c.w < 0.0 || c.h < 0.0) fail("negative box dimension");
    if (c.class_probs.size() != static_cast<std::size_t>(t.spec.num_classes)) {
      fail("class_probs length does not match num_classes");
    }
    for (double p : c.class_probs) {
      if (!std::isfinite(p) || p < 0.0 || p > 1.0) fail("class probability outside [0,1]");
    }
  }
}

// One candidate per cell: score = confidence * max class prob, class = argmax
// (ties -> lowest index). Candidates with score < score_threshold are dropped;
// output is ordered by descending score, ties by row-major cell index.
inline std::vector<Detection> decode(const GridTensor& t, double score_threshold) {
  validate_tensor(t);
  if (!(score_threshold >= 0.0 && score_threshold <= 1.0)) {
    throw std::invalid_argument("decode: score_threshold must be in [0,1]");
  }
  struct Cand {
    Detection det;
    std::size_t cell;
  };
  std::vector<Cand> cands;
  cands.reserve(t.cells.size());
  for (std::size_t i = 0; i < t.cells.size(); ++i) {
    const CellPrediction& c = t.cells[i];
    int best = 0;
    for (int k = 1; k < t.spec.num_classes; ++k) {
      if (c.class_probs[k] > c.class_probs[best]) best = k;
    }
    const double score = c.confidence * c.class_probs[best];
    if (score < score_threshold) continue;
    cands.push_back({Detection{BoundingBox{c.cx, c.cy, c.w, c.h}, best, score}, i});
  }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.det.score != b.det.score) return a.det.score > b.det.score;
    return a.cell < b.cell;
  });
  std::vector<Detection> out;
  out.reserve(cands.size());
  for (const Cand& c : cands) out.push_back(c.det);
  return out;
}

// Greedy per-class suppression: boxes of a different class never suppress each
// other. Input order does not matter; output is sorted by descending score.
inline std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
  if (!(iou_threshold >= 0.0 && iou_threshold <= 1.0)) {
    throw std::invalid_argument("nms: iou_threshold must be in [0,1]");
  }
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<Detection> kept;
  for (const Detection& d : dets) {
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (k.class_id == d.class_id && iou(k.box, d.box) >= iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

inline constexpr double kDefaultScoreThreshold = 0.25;
inline constexpr double kDefaultIouThreshold = 0.45;

// Inverse of decode, for building fixtures: each detection lands in the cell
// holding its center (col = floor(cx * side), row = floor(cy * side), clamped
// so that cx == 1.0 stays inside the grid), with confidence = score and a
// one-hot class probability row.
inline GridTensor encode(const std::vector<Detection>& dets, const GridSpec& spec) {
  if (!spec.valid()) {
    throw TensorValidationError("grid spec invalid: side and num_classes must be >= 1", -1, -1);
  }
  GridTensor t;
  t.spec = spec;
  t.cells.resize(spec.cell_count());
  for (CellPrediction& c : t.cells) c.class_probs.assign(spec.num_classes, 0.0);
  std::vector<bool> used(spec.cell_count(), false);
  for (const Detection& d : dets) {
    if (d.class_id < 0 || d.class_id >= spec.num_classes) {
      throw std::invalid_argument("encode: class_id outside [0, num_classes)");
    }
    if (!(d.score >= 0.0 && d.score <= 1.0)) {
      throw std::invalid_argument("encode: score outside [0,1]");
    }
    if (d.box.cx < 0.0 || d.box.cx > 1.0 || d.box.cy < 0.0 || d.box.cy > 1.0) {
      throw std::invalid_argument("encode: box center outside the grid");
    }
    const int col = std::min(spec.side - 1, static_cast<int>(std::floor(d.box.cx * spec.side)));
    const int row = std::min(spec.side - 1, static_cast<int>(std::floor(d.box.cy * spec.side)));
    const std::size_t idx = static_cast<std::size_t>(row) * spec.side + col;
    if (used[idx]) {
      std::ostringstream os;
      os << "two detections map to cell (" << row << "," << col << ")";
      throw CellConflictError(os.str(), row, col);
    }
    used[idx] = true;
    CellPrediction& c = t.cells[idx];
    c.confidence = d.score;
    c.cx = d.box.cx;
    c.cy = d.box.cy;
    c.w = d.box.w;
    c.h = d.box.h;
    c.class_probs[d.class_id] = 1.0;
  }
  return t;
}

// ---------------------------------------------------------------------------
// Grid fixture files: line 1 is "S K"; then S*S lines of 5+K floats in
// row-major cell order, each line [confidence cx cy w h p_1 .. p_k].
// UTF-8, LF line endings.
// ---------------------------------------------------------------------------

class GridFileError : public std::runtime_error {
 public:
  explicit GridFileError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void write_grid(std::ostream& os, const GridTensor& t) {
  validate_tensor(t);
  os << t.spec.side << " " << t.spec.num_classes << "\n";
  char buf[40];
  auto put = [&](double v, bool lead_space) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    if (lead_space) os << ' ';
    os << buf;
  };
  for (const CellPrediction& c : t.cells) {
    put(c.confidence, false);
    put(c.cx, true);
    put(c.cy, true);
    put(c.w, true);
    put(c.h, true);
    for (double p : c.class_probs) put(p, true);
    os << "\n";
  }
}

inline void write_grid_file(const std::string& path, const GridTensor& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw GridFileError("cannot open for writing: " + path);
  write_grid(f, t);
  if (!f) throw GridFileError("write failed: " + path);
}

inline GridTensor read_grid(std::istream& is, const std::string& origin = "<stream>") {
  auto fail = [&](const std::string& what) { throw GridFileError(origin + ": " + what); };
  GridSpec spec;
  if (!(is >> spec.side >> spec.num_classes)) fail("missing or malformed 'S K' header line");
  if (!spec.valid()) fail("side and num_classes must be >= 1");
  GridTensor t;
  t.spec = spec;
  t.cells.resize(spec.cell_count());
  for (std::size_t i = 0; i < t.cells.size(); ++i) {
    CellPrediction& c = t.cells[i];
    c.class_probs.resize(spec.num_classes);
    double* fields[5] = {&c.confidence, &c.cx, &c.cy, &c.w, &c.h};
    for (double* f : fields) {
      if (!(is >> *f)) fail("truncated or non-numeric value in cell " + std::to_string(i));
    }
    for (int k = 0; k < spec.num_classes; ++k) {
      if (!(is >> c.class_probs[k])) {
        fail("truncated or non-numeric value in cell " + std::to_string(i));
      }
    }
  }
  double extra;
  if (is >> extra) fail("trailing values after the last cell");
  return t;
}

inline GridTensor read_grid_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw GridFileError("cannot open: " + path);
  return read_grid(f, path);
}

}  // namespace fogsight
