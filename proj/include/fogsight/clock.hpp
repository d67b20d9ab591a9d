#pragma once

// Deterministic discrete-event clock plus the small seeded-RNG helpers shared
// by the simulator and the mock detector. Simulated time is int64 microseconds.

#include <cstdint>
#include <functional>
#include <queue>
#include <vector>

namespace fogsight {

using micros_t = std::int64_t;

inline micros_t ms_to_us(double ms) { return static_cast<micros_t>(ms * 1000.0 + 0.5); }

// Events run in (time, insertion order). Two events scheduled for the same
// instant therefore run in the order they were scheduled.
class VirtualClock {
 public:
  micros_t now() const { return now_; }

  void schedule_at(micros_t at, std::function<void()> fn) {
    queue_.push(Event{at < now_ ? now_ : at, seq_++, std::move(fn)});
  }
  void schedule_in(micros_t delay, std::function<void()> fn) {
    schedule_at(now_ + delay, std::move(fn));
  }

  bool empty() const { return queue_.empty(); }
  std::size_t pending() const { return queue_.size(); }

  // Runs the earliest event; returns false when no events remain.
  bool step() {
    if (queue_.empty()) return false;
    Event ev = std::move(const_cast<Event&>(queue_.top()));
    queue_.pop();
    now_ = ev.at;
    ev.fn();
    return true;
  }

  void drain_pending() {
    while (!queue_.empty()) queue_.pop();
  }

 private:
  struct Event {
    micros_t at;
    std::uint64_t seq;
    std::function<void()> fn;
    bool operator>(const Event& o) const {
      if (at != o.at) return at > o.at;
      return seq > o.seq;
    }
  };

  micros_t now_ = 0;
  std::uint64_t seq_ = 0;
  std::priority_queue<Event, std::vector<Event>, std::greater<Event>> queue_;
};

// splitmix64: tiny, well-mixed generator. Used instead of <random> engines so
// that seeded sequences are identical on every platform and standard library.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Uniform double in [0, 1) with 53 bits of randomness.
inline double uniform01(std::uint64_t& state) {
  return static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
}

// Stable per-component sub-seed derivation.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t salt) {
  std::uint64_t s = root ^ (0xA0761D6478BD642Full * (salt + 1));
  return splitmix64(s);
}

}  // namespace fogsight
