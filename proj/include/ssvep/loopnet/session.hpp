#pragma once

#include <array>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "ssvep/dsp.hpp"
#include "ssvep/eegio.hpp"
#include "ssvep/loopnet/protocol.hpp"
#include "ssvep/ssvepnet.hpp"
#include "ssvep/synth.hpp"

namespace ssvep::loopnet {

using Clock = std::chrono::steady_clock;

// ---------------------------------------------------------------------------
// Signal sources

class SourceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SignalSource {
 public:
  virtual ~SignalSource() = default;
  /// `n_samples` of raw single-channel signal for the stimulus window of
  /// `junction_id`. Throws SourceError when no signal is available.
  virtual std::vector<double> acquire(std::uint32_t junction_id, std::size_t n_samples) = 0;
};

/// Synthetic headset driven by an operator's selected target. The selected
/// class frequency is read when the stimulus window closes; with nothing
/// selected the window carries noise only, at the level a selected target
/// would have. Each window is seeded with derive_seed(seed, junction_id).
class OperatorSynthSource : public SignalSource {
 public:
  OperatorSynthSource(std::vector<double> class_freqs, synth::SynthConfig templ)
      : class_freqs_(std::move(class_freqs)), templ_(templ) {
    std::sort(class_freqs_.begin(), class_freqs_.end());
  }

  void select(std::size_t target) {
    if (target >= class_freqs_.size()) throw std::out_of_range("target out of range");
    std::lock_guard lock(mu_);
    selected_ = target;
  }
  void deselect() {
    std::lock_guard lock(mu_);
    selected_.reset();
  }
  std::optional<std::size_t> selected() const {
    std::lock_guard lock(mu_);
    return selected_;
  }
  const std::vector<double>& class_freqs() const { return class_freqs_; }

  std::vector<double> acquire(std::uint32_t junction_id, std::size_t n_samples) override {
    const auto target = selected();
    synth::SynthConfig cfg = templ_;
    cfg.duration_s = static_cast<double>(n_samples) / cfg.fs_hz;
    cfg.seed = derive_seed(templ_.seed, junction_id);
    cfg.stim_freq_hz = class_freqs_[target.value_or(0)];
    Rng phase_rng(cfg.seed ^ 1ULL);
    cfg.phase_rad = 2.0 * std::numbers::pi * phase_rng.uniform();
    try {
      auto parts = synth::generate_trial_parts(cfg);
      if (!target) return parts.noise;
      return parts.mixed();
    } catch (const synth::Error& e) {
      throw SourceError(e.what());
    }
  }

 private:
  std::vector<double> class_freqs_;
  synth::SynthConfig templ_;
  mutable std::mutex mu_;
  std::optional<std::size_t> selected_;
};

/// Serves successive trials of a recording, one per stimulus window,
/// taking the first n_samples of each trial.
class ReplaySource : public SignalSource {
 public:
  ReplaySource(eegio::EegRecording rec, std::string channel)
      : rec_(std::move(rec)), channel_(rec_.channel_index(channel)) {}

  static std::unique_ptr<ReplaySource> from_file(const std::filesystem::path& path, const std::string& channel) {
    return std::make_unique<ReplaySource>(eegio::read_recording(path), channel);
  }

  std::vector<double> acquire(std::uint32_t, std::size_t n_samples) override {
    std::lock_guard lock(mu_);
    if (next_ >= rec_.trials.size()) throw SourceError("replay recording exhausted");
    const auto& t = rec_.trials[next_];
    if (t.length_samples < n_samples) throw SourceError("replay trial shorter than the stimulus window");
    ++next_;
    return rec_.channel_segment(channel_, t.onset_sample, n_samples);
  }

  std::size_t remaining() const {
    std::lock_guard lock(mu_);
    return rec_.trials.size() - next_;
  }

 private:
  eegio::EegRecording rec_;
  std::size_t channel_;
  mutable std::mutex mu_;
  std::size_t next_ = 0;
};

// ---------------------------------------------------------------------------
// Classifier

struct Decision {
  std::uint8_t command = 0;
  double confidence = 0.0;
  std::array<double, 3> probs{};
};

/// Features + network; masked argmax over open directions.
class Classifier {
 public:
  Classifier(dsp::Pipeline pipeline, net::Network network)
      : pipeline_(std::move(pipeline)), network_(std::move(network)) {
    if (network_.config().n_classes != 3) throw std::invalid_argument("closed loop needs a 3-class model");
    if (network_.config().input_len != pipeline_.feature_len()) {
      throw net::Error(net::Error::Kind::length_mismatch,
                       "model input_len " + std::to_string(network_.config().input_len) +
                           " does not match the pipeline's " + std::to_string(pipeline_.feature_len()) + " bins");
    }
  }

  const dsp::Pipeline& pipeline() const { return pipeline_; }
  std::size_t window_samples() const { return pipeline_.config().window.window_len; }

  /// With `mask_blocked`, classes whose bit is clear in `open_dirs` are not
  /// eligible; confidence is the unmasked softmax probability of the pick.
  Decision decide(std::span<const double> segment, std::uint8_t open_dirs, bool mask_blocked) const {
    const auto fv = pipeline_.live_features(segment);
    const auto probs = net::softmax(network_.forward(fv.values));
    Decision d;
    std::copy(probs.begin(), probs.end(), d.probs.begin());
    std::optional<std::size_t> best;
    for (std::size_t c = 0; c < 3; ++c) {
      if (mask_blocked && !((open_dirs >> c) & 1u)) continue;
      if (!best || probs[c] > probs[*best]) best = c;
    }
    d.command = static_cast<std::uint8_t>(best.value_or(net::argmax(probs)));
    d.confidence = probs[d.command];
    return d;
  }

 private:
  dsp::Pipeline pipeline_;
  net::Network network_;
};

// ---------------------------------------------------------------------------
// Session

enum class Phase { Idle, Stimulus, Decided };

inline const char* phase_name(Phase p) {
  constexpr const char* names[] = {"idle", "stimulus", "decided"};
  return names[static_cast<int>(p)];
}

/// Consistent copy of the session state.
struct SessionSnapshot {
  Phase phase = Phase::Idle;
  std::uint32_t junction_id = 0;  // current (or last) junction, 0 = none yet
  std::uint8_t open_dirs = 0;
  Clock::time_point stimulus_start{};
  Clock::time_point deadline{};
  Clock::time_point decided_at{};
  std::optional<Decision> decision;
  std::optional<std::string> failure;  // source failure of junction_id
  std::uint64_t version = 0;
};

struct ServiceConfig {
  std::chrono::milliseconds stimulus{3000};
  bool mask_blocked = true;
};

/// The closed-loop command service. One worker thread owns every mutation
/// of the session; request handlers hand it work by message and read
/// state only through snapshot().
///
///   JUNCTION id dirs -> PENDING id, stimulus window starts
///   POLL id          -> PENDING id during the window, CMD id after it,
///                       ERR for an unknown/stale id or a failed window
class CommandService {
 public:
  CommandService(std::shared_ptr<const Classifier> classifier, std::shared_ptr<SignalSource> source,
                 ServiceConfig config)
      : classifier_(std::move(classifier)), source_(std::move(source)), config_(config) {
    worker_ = std::jthread([this](std::stop_token st) { run(st); });
  }

  ~CommandService() { stop(); }

  CommandService(const CommandService&) = delete;
  CommandService& operator=(const CommandService&) = delete;

  void stop() {
    if (!worker_.joinable()) return;
    worker_.request_stop();
    worker_.join();
  }

  SessionSnapshot snapshot() const {
    std::lock_guard lock(state_mu_);
    return state_;
  }

  /// Blocks until the snapshot version exceeds `version` or timeout.
  SessionSnapshot wait_for_change(std::uint64_t version, std::chrono::milliseconds timeout) const {
    std::unique_lock lock(state_mu_);
    state_cv_.wait_for(lock, timeout, [&] { return state_.version > version; });
    return state_;
  }

  const ServiceConfig& config() const { return config_; }
  const Classifier& classifier() const { return *classifier_; }

  Frame handle(const Frame& request) {
    if (const auto* j = std::get_if<frame::Junction>(&request)) return on_junction(*j);
    if (const auto* p = std::get_if<frame::Poll>(&request)) return on_poll(*p);
    return frame::Err{kErrUnexpected, std::string("unexpected verb ") + verb_of(request)};
  }

 private:
  struct Job {
    frame::Junction junction;
    std::promise<Frame> reply;
  };

  Frame on_junction(const frame::Junction& j) {
    const auto snap = snapshot();
    if (snap.phase == Phase::Stimulus) {
      return frame::Err{kErrBusy, "stimulus window for junction " + std::to_string(snap.junction_id) + " still open"};
    }
    Job job{j, {}};
    auto fut = job.reply.get_future();
    {
      std::lock_guard lock(queue_mu_);
      if (stopped_) return frame::Err{kErrUnexpected, "service shutting down"};
      jobs_.push_back(std::move(job));
    }
    queue_cv_.notify_one();
    return fut.get();
  }

  Frame on_poll(const frame::Poll& p) const {
    const auto snap = snapshot();
    if (snap.junction_id == 0) return frame::Err{kErrNoSession, "no session"};
    if (p.junction_id != snap.junction_id) {
      return frame::Err{kErrStaleId, "stale or unknown junction id " + std::to_string(p.junction_id)};
    }
    if (snap.failure) return frame::Err{kErrSourceFailure, "signal source failure: " + *snap.failure};
    switch (snap.phase) {
      case Phase::Stimulus: return frame::Pending{p.junction_id};
      case Phase::Decided:
        return frame::Cmd{p.junction_id, snap.decision->command, quantize_confidence(snap.decision->confidence)};
      case Phase::Idle: break;
    }
    return frame::Err{kErrNoSession, "no session"};
  }

  template <typename F>
  void mutate(F&& fn) {
    {
      std::lock_guard lock(state_mu_);
      fn(state_);
      ++state_.version;
    }
    state_cv_.notify_all();
  }

  void run(std::stop_token st) {
    while (!st.stop_requested()) {
      Job job;
      {
        std::unique_lock lock(queue_mu_);
        queue_cv_.wait(lock, st, [&] { return !jobs_.empty(); });
        if (st.stop_requested()) break;
        job = std::move(jobs_.front());
        jobs_.pop_front();
      }
      process(job, st);
    }
    std::lock_guard lock(queue_mu_);
    stopped_ = true;
    for (auto& job : jobs_) job.reply.set_value(frame::Err{kErrUnexpected, "service shutting down"});
    jobs_.clear();
  }

  void process(Job& job, const std::stop_token& st) {
    const auto id = job.junction.junction_id;
    const auto last = snapshot().junction_id;
    if (id <= last) {
      job.reply.set_value(frame::Err{kErrStaleId, "junction id " + std::to_string(id) + " not increasing"});
      return;
    }
    const auto start = Clock::now();
    const auto deadline = start + config_.stimulus;
    mutate([&](SessionSnapshot& s) {
      s.phase = Phase::Stimulus;
      s.junction_id = id;
      s.open_dirs = job.junction.open_dirs;
      s.stimulus_start = start;
      s.deadline = deadline;
      s.decision.reset();
      s.failure.reset();
    });
    job.reply.set_value(frame::Pending{id});

    {
      // Interruptible sleep until the window closes.
      std::mutex m;
      std::unique_lock lock(m);
      std::condition_variable_any cv;
      cv.wait_until(lock, st, deadline, [] { return false; });
    }
    if (st.stop_requested()) return;
    while (Clock::now() < deadline) std::this_thread::sleep_until(deadline);

    try {
      const auto segment = source_->acquire(id, classifier_->window_samples());
      const auto decision = classifier_->decide(segment, job.junction.open_dirs, config_.mask_blocked);
      const auto now = Clock::now();
      mutate([&](SessionSnapshot& s) {
        s.phase = Phase::Decided;
        s.decision = decision;
        s.decided_at = now;
      });
    } catch (const std::exception& e) {
      mutate([&](SessionSnapshot& s) {
        s.phase = Phase::Idle;
        s.failure = e.what();
      });
    }
  }

  std::shared_ptr<const Classifier> classifier_;
  std::shared_ptr<SignalSource> source_;
  ServiceConfig config_;

  mutable std::mutex state_mu_;
  mutable std::condition_variable state_cv_;
  SessionSnapshot state_;

  std::mutex queue_mu_;
  std::condition_variable_any queue_cv_;
  std::deque<Job> jobs_;
  bool stopped_ = false;
  std::jthread worker_;
};

}  // namespace ssvep::loopnet
