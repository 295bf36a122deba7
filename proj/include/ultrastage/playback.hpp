#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stop_token>
#include <string>
#include <thread>
#include <vector>

#include "ultrastage/sequence.hpp"

namespace ultrastage {

using Nanos = std::chrono::nanoseconds;

// Time source for playback. sleep_until returns early (false) when stop is
// requested.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual Nanos now() = 0;
  virtual bool sleep_until(Nanos deadline, std::stop_token stop) = 0;
};

class SteadyClock final : public Clock {
 public:
  Nanos now() override {
    return std::chrono::duration_cast<Nanos>(std::chrono::steady_clock::now().time_since_epoch());
  }
  bool sleep_until(Nanos deadline, std::stop_token stop) override {
    std::mutex m;
    std::condition_variable_any cv;
    std::unique_lock lock(m);
    const auto tp = std::chrono::steady_clock::time_point(
        std::chrono::duration_cast<std::chrono::steady_clock::duration>(deadline));
    cv.wait_until(lock, stop, tp, [] { return false; });
    return !stop.stop_requested();
  }
};

// Virtual time that jumps straight to every deadline: playback runs as fast
// as the sink allows with zero lateness.
class SimulatedClock final : public Clock {
 public:
  explicit SimulatedClock(Nanos start = Nanos{0}) : now_(start.count()) {}
  Nanos now() override { return Nanos{now_.load()}; }
  bool sleep_until(Nanos deadline, std::stop_token stop) override {
    if (stop.stop_requested()) return false;
    std::int64_t cur = now_.load();
    while (cur < deadline.count() && !now_.compare_exchange_weak(cur, deadline.count())) {
    }
    return true;
  }
  // Lets a test inject sink processing time.
  void advance(Nanos d) { now_ += d.count(); }

 private:
  std::atomic<std::int64_t> now_;
};

// Virtual time moved only by the test. Sleepers block until advance_to passes
// their deadline.
class ManualClock final : public Clock {
 public:
  explicit ManualClock(Nanos start = Nanos{0}) : now_(start) {}

  Nanos now() override {
    std::lock_guard lock(m_);
    return now_;
  }

  bool sleep_until(Nanos deadline, std::stop_token stop) override {
    std::unique_lock lock(m_);
    ++sleepers_;
    waiting_deadline_ = deadline;
    idle_cv_.notify_all();
    const bool reached = cv_.wait(lock, stop, [&] { return now_ >= deadline; });
    --sleepers_;
    return reached;
  }

  void advance_to(Nanos t) {
    std::lock_guard lock(m_);
    now_ = std::max(now_, t);
    cv_.notify_all();
  }

  void advance(Nanos d) {
    std::lock_guard lock(m_);
    now_ += d;
    cv_.notify_all();
  }

  // Blocks until some thread is sleeping on a deadline still in the future.
  bool wait_idle(std::chrono::milliseconds timeout = std::chrono::milliseconds(5000)) {
    std::unique_lock lock(m_);
    return idle_cv_.wait_for(lock, timeout, [&] { return sleepers_ > 0 && waiting_deadline_ > now_; });
  }

 private:
  std::mutex m_;
  std::condition_variable_any cv_;
  std::condition_variable_any idle_cv_;
  Nanos now_;
  Nanos waiting_deadline_{0};
  int sleepers_ = 0;
};

struct FrameInfo {
  std::uint64_t frame_no = 0;
  double t = 0.0;        // sequence time of the frame
  Nanos scheduled{0};    // absolute target time
  Nanos emitted{0};      // clock time at emission
  Nanos lateness{0};     // emitted - scheduled
  bool late = false;     // deadline had already passed when the frame came up
};

using FrameSink = std::function<void(const LightMap&, const FrameInfo&)>;

// Lateness histogram bucket upper bounds in microseconds; the last bucket is
// open-ended.
inline constexpr std::array<std::int64_t, 6> kLatenessBucketsUs{100, 500, 1000, 2000, 4000, 8000};

struct PlaybackStats {
  std::uint64_t frames = 0;
  std::uint64_t late_frames = 0;
  std::array<std::uint64_t, kLatenessBucketsUs.size() + 1> histogram{};
  std::vector<Nanos> lateness;  // per frame
};

struct PlaybackOptions {
  double start_t = 0.0;                   // sequence time of frame 0
  std::optional<std::uint64_t> max_frames;  // default: cover [start_t, duration)
  bool record_lateness = true;
};

// Sequence time covered when no frame limit is given: until the last
// keyframe, one frame past time zero for single-keyframe sequences.
inline std::uint64_t default_frame_count(const Sequence& seq, double start_t) {
  const double remaining = seq.duration() - start_t;
  if (remaining <= 0.0) return 1;
  return static_cast<std::uint64_t>(std::ceil(remaining * seq.fps() - 1e-9));
}

// Schedule of frame n: t0 + n / fps, computed in integer nanoseconds from t0
// so no error accumulates.
inline Nanos frame_deadline(Nanos t0, std::uint64_t n, double fps) {
  const auto ns = static_cast<std::int64_t>(std::llround(static_cast<double>(n) * 1e9 / fps));
  return t0 + Nanos{ns};
}

class PlaybackHandle {
 public:
  PlaybackHandle() = default;
  PlaybackHandle(const PlaybackHandle&) = delete;
  PlaybackHandle& operator=(const PlaybackHandle&) = delete;
  ~PlaybackHandle() { stop(); }

  void stop() {
    if (thread_.joinable()) {
      thread_.request_stop();
      thread_.join();
    }
  }
  void wait() {
    if (thread_.joinable()) thread_.join();
  }
  bool running() const { return !finished_.load(); }
  std::uint64_t frames_emitted() const { return frames_.load(); }
  std::uint64_t late_frames() const { return late_.load(); }
  double current_t() const {
    std::lock_guard lock(m_);
    return current_t_;
  }

  // Error raised by the sink, if playback stopped because of it.
  std::exception_ptr error() const {
    std::lock_guard lock(m_);
    return error_;
  }

  PlaybackStats stats() const {
    std::lock_guard lock(m_);
    return stats_;
  }

  // Swaps the sequence between frames.
  void swap_sequence(std::shared_ptr<const Sequence> seq) {
    std::lock_guard lock(m_);
    seq_ = std::move(seq);
  }

 private:
  friend std::unique_ptr<PlaybackHandle> start_playback(std::shared_ptr<const Sequence>, FrameSink,
                                                        std::shared_ptr<Clock>, PlaybackOptions);

  void run(std::stop_token stop, FrameSink sink, std::shared_ptr<Clock> clock, PlaybackOptions opts,
           std::uint64_t total) {
    const double fps = snapshot()->fps();
    const Nanos t0 = clock->now();
    for (std::uint64_t n = 0; n < total && !stop.stop_requested(); ++n) {
      const Nanos deadline = frame_deadline(t0, n, fps);
      bool late = clock->now() > deadline;
      if (!late && !clock->sleep_until(deadline, stop)) break;
      const std::shared_ptr<const Sequence> seq = snapshot();
      const double t = opts.start_t + static_cast<double>(n) / fps;
      FrameInfo info;
      info.frame_no = n;
      info.t = t;
      info.scheduled = deadline;
      const LightMap frame = seq->sample(t);
      info.emitted = clock->now();
      info.lateness = info.emitted - deadline;
      info.late = late;
      try {
        sink(frame, info);
      } catch (...) {
        std::lock_guard lock(m_);
        error_ = std::current_exception();
        break;
      }
      record(info, opts.record_lateness);
    }
    finished_ = true;
  }

  std::shared_ptr<const Sequence> snapshot() const {
    std::lock_guard lock(m_);
    return seq_;
  }

  void record(const FrameInfo& info, bool keep_series) {
    std::lock_guard lock(m_);
    current_t_ = info.t;
    ++stats_.frames;
    if (info.late) ++stats_.late_frames;
    const auto us = std::chrono::duration_cast<std::chrono::microseconds>(info.lateness).count();
    std::size_t b = 0;
    while (b < kLatenessBucketsUs.size() && us >= kLatenessBucketsUs[b]) ++b;
    ++stats_.histogram[b];
    if (keep_series) stats_.lateness.push_back(info.lateness);
    frames_ = stats_.frames;
    late_ = stats_.late_frames;
  }

  mutable std::mutex m_;
  std::shared_ptr<const Sequence> seq_;
  PlaybackStats stats_;
  double current_t_ = 0.0;
  std::exception_ptr error_;
  std::atomic<std::uint64_t> frames_{0};
  std::atomic<std::uint64_t> late_{0};
  std::atomic<bool> finished_{false};
  std::jthread thread_;
};

// Plays seq into sink on a dedicated thread. Frame n is due at t0 + n/fps;
// late frames go out immediately and are counted, never dropped.
inline std::unique_ptr<PlaybackHandle> start_playback(std::shared_ptr<const Sequence> seq, FrameSink sink,
                                                      std::shared_ptr<Clock> clock,
                                                      PlaybackOptions opts = {}) {
  if (!seq) throw InvariantError("no sequence to play");
  if (!(seq->fps() >= 1.0 && seq->fps() <= 240.0)) throw RangeError("fps must be in [1, 240]");
  const std::uint64_t total = opts.max_frames.value_or(default_frame_count(*seq, opts.start_t));
  auto handle = std::make_unique<PlaybackHandle>();
  handle->seq_ = std::move(seq);
  handle->current_t_ = opts.start_t;
  PlaybackHandle* h = handle.get();
  handle->thread_ = std::jthread([h, sink = std::move(sink), clock = std::move(clock), opts,
                                  total](std::stop_token st) mutable {
    h->run(st, std::move(sink), std::move(clock), opts, total);
  });
  return handle;
}

}  // namespace ultrastage
