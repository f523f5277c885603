#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "ssvep/eegio.hpp"
#include "ssvep/feature.hpp"

namespace ssvep::dsp {

using cplx = std::complex<double>;

class Error : public std::runtime_error {
 public:
  enum class Kind {
    invalid_band,
    invalid_order,
    unstable,
    non_finite,
    invalid_window,
    signal_too_short,
    bad_fft_size,
    empty_band,
  };

  Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// ---------------------------------------------------------------------------
// Band-pass filter

/// Normalized biquad: y = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2).
struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0;
  double a1 = 0.0, a2 = 0.0;

  cplx response(double omega) const {
    const cplx z1 = std::polar(1.0, -omega);
    const cplx z2 = z1 * z1;
    return (b0 + b1 * z1 + b2 * z2) / (1.0 + a1 * z1 + a2 * z2);
  }

  /// Poles strictly inside the unit circle (Jury conditions for a monic quadratic).
  bool stable() const { return std::abs(a2) < 1.0 && std::abs(a1) < 1.0 + a2; }

  bool operator==(const Biquad&) const = default;
};

struct BandpassFilter {
  double fs_hz = 0.0;
  double f_lo = 0.0;
  double f_hi = 0.0;
  int order = 0;
  std::vector<Biquad> sections;

  /// Complex response at frequency f (Hz).
  cplx response(double f_hz) const {
    const double omega = 2.0 * std::numbers::pi * f_hz / fs_hz;
    cplx h = 1.0;
    for (const auto& s : sections) h *= s.response(omega);
    return h;
  }

  double gain_db(double f_hz) const { return 20.0 * std::log10(std::abs(response(f_hz))); }
};

/// Butterworth band-pass of total order `order` (2, 4 or 8), realized as
/// order/2 second-order sections.
///
/// Analog prototype poles exp(i*pi*(2k+n+1)/(2n)), n = order/2, are mapped
/// to the pre-warped analog band [w1, w2] with s -> (s^2 + w0^2)/(bw*s),
/// then to z by the bilinear transform. Each section carries one zero at
/// z=1 and one at z=-1. The overall gain is set to unity at the digital
/// image of the analog center frequency and spread evenly over sections.
inline BandpassFilter design_bandpass(double fs_hz, double f_lo, double f_hi, int order) {
  if (!(fs_hz > 0.0) || !(f_lo > 0.0) || !(f_lo < f_hi) || !(f_hi < fs_hz / 2.0)) {
    throw Error(Error::Kind::invalid_band, "invalid band edges");
  }
  if (order != 2 && order != 4 && order != 8) {
    throw Error(Error::Kind::invalid_order, "band-pass order must be 2, 4 or 8");
  }
  const double pi = std::numbers::pi;
  const int n = order / 2;
  const double k2 = 2.0 * fs_hz;
  const double w1 = k2 * std::tan(pi * f_lo / fs_hz);
  const double w2 = k2 * std::tan(pi * f_hi / fs_hz);
  const double w0 = std::sqrt(w1 * w2);
  const double bw = w2 - w1;

  std::vector<cplx> upper;  // one z-pole of each conjugate pair
  std::vector<double> real_poles;
  for (int k = 0; k < n; ++k) {
    const cplx p = std::polar(1.0, pi * (2.0 * k + n + 1.0) / (2.0 * n));
    const cplx half = p * bw / 2.0;
    const cplx root = std::sqrt(half * half - w0 * w0);
    for (const cplx s : {half + root, half - root}) {
      const cplx z = (k2 + s) / (k2 - s);
      if (z.imag() > 1e-12) {
        upper.push_back(z);
      } else if (std::abs(z.imag()) <= 1e-12) {
        real_poles.push_back(z.real());
      }
    }
  }
  std::sort(real_poles.begin(), real_poles.end());

  BandpassFilter filt{fs_hz, f_lo, f_hi, order, {}};
  for (const cplx z : upper) {
    filt.sections.push_back({1.0, 0.0, -1.0, -2.0 * z.real(), std::norm(z)});
  }
  for (std::size_t i = 0; i + 1 < real_poles.size(); i += 2) {
    const double p1 = real_poles[i], p2 = real_poles[i + 1];
    filt.sections.push_back({1.0, 0.0, -1.0, -(p1 + p2), p1 * p2});
  }
  if (filt.sections.size() != static_cast<std::size_t>(n)) {
    throw Error(Error::Kind::unstable, "pole pairing failed");
  }

  const double omega_center = 2.0 * std::atan(w0 / k2);
  cplx h = 1.0;
  for (const auto& s : filt.sections) h *= s.response(omega_center);
  const double per_section = std::pow(1.0 / std::abs(h), 1.0 / n);
  for (auto& s : filt.sections) {
    s.b0 *= per_section;
    s.b1 *= per_section;
    s.b2 *= per_section;
    if (!s.stable()) throw Error(Error::Kind::unstable, "unstable section");
  }
  return filt;
}

/// Causal cascade, direct form II transposed, zero initial state.
inline std::vector<double> filter_apply(const BandpassFilter& filt, std::span<const double> x) {
  for (double v : x) {
    if (!std::isfinite(v)) throw Error(Error::Kind::non_finite, "non-finite filter input");
  }
  std::vector<double> y(x.begin(), x.end());
  for (const auto& s : filt.sections) {
    double z1 = 0.0, z2 = 0.0;
    for (double& v : y) {
      const double in = v;
      const double out = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * out + z2;
      z2 = s.b2 * in - s.a2 * out;
      v = out;
    }
  }
  return y;
}

// ---------------------------------------------------------------------------
// Windowing

struct WindowSpec {
  std::size_t window_len = 768;
  std::size_t offset = 16;

  void validate() const {
    if (window_len == 0 || offset == 0 || offset > window_len) {
      throw Error(Error::Kind::invalid_window, "window spec requires 0 < offset <= window_len");
    }
  }
};

inline std::size_t window_count(std::size_t signal_len, const WindowSpec& spec) {
  spec.validate();
  if (signal_len < spec.window_len) return 0;
  return (signal_len - spec.window_len) / spec.offset + 1;
}

inline std::vector<std::vector<double>> segment_windows(std::span<const double> x,
                                                        const WindowSpec& spec) {
  spec.validate();
  if (x.size() < spec.window_len) {
    throw Error(Error::Kind::signal_too_short,
                "signal shorter than window (" + std::to_string(x.size()) + " < " +
                    std::to_string(spec.window_len) + ")");
  }
  const std::size_t count = window_count(x.size(), spec);
  std::vector<std::vector<double>> out;
  out.reserve(count);
  for (std::size_t w = 0; w < count; ++w) {
    const auto first = x.begin() + static_cast<std::ptrdiff_t>(w * spec.offset);
    out.emplace_back(first, first + static_cast<std::ptrdiff_t>(spec.window_len));
  }
  return out;
}

// ---------------------------------------------------------------------------
// FFT

inline bool is_power_of_two(std::size_t n) { return n != 0 && std::has_single_bit(n); }

/// In-place iterative radix-2 decimation-in-time FFT. `inverse` uses the
/// conjugate kernel and scales by 1/N.
inline void fft_inplace(std::span<cplx> a, bool inverse = false) {
  const std::size_t n = a.size();
  if (!is_power_of_two(n)) throw Error(Error::Kind::bad_fft_size, "FFT size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  const double sign = inverse ? 1.0 : -1.0;
  // Twiddles are evaluated directly per index; a running product would
  // accumulate rounding error across the butterfly span.
  std::vector<cplx> twiddle(n / 2);
  for (std::size_t k = 0; k < n / 2; ++k) {
    twiddle[k] = std::polar(1.0, sign * 2.0 * std::numbers::pi * static_cast<double>(k) /
                                     static_cast<double>(n));
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t stride = n / len;
    for (std::size_t start = 0; start < n; start += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const cplx t = twiddle[k * stride] * a[start + k + half];
        a[start + k + half] = a[start + k] - t;
        a[start + k] += t;
      }
    }
  }
  if (inverse) {
    for (auto& v : a) v /= static_cast<double>(n);
  }
}

/// Complex spectrum of a real signal zero-padded to n_fft.
inline std::vector<cplx> fft_real(std::span<const double> x, std::size_t n_fft) {
  if (!is_power_of_two(n_fft)) throw Error(Error::Kind::bad_fft_size, "n_fft must be a power of two");
  if (x.size() > n_fft) throw Error(Error::Kind::bad_fft_size, "n_fft smaller than the window");
  std::vector<cplx> buf(n_fft);
  std::copy(x.begin(), x.end(), buf.begin());
  fft_inplace(buf);
  return buf;
}

/// |X[k]| for k = 0 .. n_fft/2.
inline std::vector<double> fft_magnitude(std::span<const double> window, std::size_t n_fft) {
  const auto spectrum = fft_real(window, n_fft);
  std::vector<double> mag(n_fft / 2 + 1);
  for (std::size_t k = 0; k < mag.size(); ++k) mag[k] = std::abs(spectrum[k]);
  return mag;
}

// ---------------------------------------------------------------------------
// Features

/// Inclusive band slice of `mag`, min-max scaled to [0, 1]. A flat slice
/// maps to all zeros.
inline FeatureVector extract_features(std::span<const double> mag, double fs_hz, std::size_t n_fft,
                                      double f_lo, double f_hi) {
  if (!(f_hi <= fs_hz / 2.0) || !(f_lo <= f_hi)) {
    throw Error(Error::Kind::invalid_band, "feature band outside Nyquist");
  }
  FeatureVector fv;
  fv.fs_hz = fs_hz;
  fv.n_fft = n_fft;
  const double df = fs_hz / static_cast<double>(n_fft);
  constexpr double tol = 1e-9;
  for (std::size_t k = 0; k < mag.size(); ++k) {
    const double f = static_cast<double>(k) * df;
    if (f >= f_lo - tol && f <= f_hi + tol) {
      fv.values.push_back(mag[k]);
      fv.bin_freqs_hz.push_back(f);
    }
  }
  if (fv.values.empty()) throw Error(Error::Kind::empty_band, "no FFT bins inside the feature band");
  const auto [lo_it, hi_it] = std::minmax_element(fv.values.begin(), fv.values.end());
  const double lo = *lo_it, range = *hi_it - *lo_it;
  for (double& v : fv.values) v = range > 0.0 ? (v - lo) / range : 0.0;
  return fv;
}

/// Number of bins extract_features keeps for a band.
inline std::size_t feature_length(double fs_hz, std::size_t n_fft, double f_lo, double f_hi) {
  std::vector<double> dummy(n_fft / 2 + 1, 0.0);
  return extract_features(dummy, fs_hz, n_fft, f_lo, f_hi).size();
}

// ---------------------------------------------------------------------------
// Pipeline

struct PipelineConfig {
  std::string channel = "Oz";
  WindowSpec window{};
  std::size_t n_fft = 1024;
  double band_lo = 8.0;
  double band_hi = 16.0;
  int filter_order = 4;
  std::vector<double> class_freqs{9.25, 11.25, 13.25};
};

/// Filter + FFT feature pipeline bound to a sampling rate.
class Pipeline {
 public:
  Pipeline(PipelineConfig config, double fs_hz)
      : config_(std::move(config)),
        fs_hz_(fs_hz),
        filter_(design_bandpass(fs_hz, config_.band_lo, config_.band_hi, config_.filter_order)) {
    config_.window.validate();
    if (config_.window.window_len > config_.n_fft) {
      throw Error(Error::Kind::bad_fft_size, "n_fft smaller than the window");
    }
  }

  const PipelineConfig& config() const { return config_; }
  const BandpassFilter& filter() const { return filter_; }
  double fs_hz() const { return fs_hz_; }
  std::size_t feature_len() const {
    return feature_length(fs_hz_, config_.n_fft, config_.band_lo, config_.band_hi);
  }

  FeatureVector window_features(std::span<const double> window) const {
    const auto mag = fft_magnitude(window, config_.n_fft);
    return extract_features(mag, fs_hz_, config_.n_fft, config_.band_lo, config_.band_hi);
  }

  /// Online path: filter the acquired segment, featurize its first window.
  FeatureVector live_features(std::span<const double> segment) const {
    const auto y = filter_apply(filter_, segment);
    if (y.size() < config_.window.window_len) {
      throw Error(Error::Kind::signal_too_short, "acquired segment shorter than window");
    }
    return window_features(std::span<const double>(y).first(config_.window.window_len));
  }

  /// Filter the whole trial segment, then featurize every window.
  std::vector<LabeledExample> preprocess_trial(const eegio::EegRecording& rec,
                                               const eegio::TrialMarker& trial) const {
    const std::size_t ch = rec.channel_index(config_.channel);
    const auto label = eegio::label_of_frequency(trial.stim_freq_hz, config_.class_freqs);
    const auto segment = rec.channel_segment(ch, trial.onset_sample, trial.length_samples);
    const auto filtered = filter_apply(filter_, segment);
    std::vector<LabeledExample> out;
    for (const auto& w : segment_windows(filtered, config_.window)) {
      out.push_back({window_features(w), label});
    }
    return out;
  }

  /// All trials of a recording in marker order. With threads > 1 trials
  /// are featurized concurrently; output order is unchanged.
  std::vector<LabeledExample> preprocess_recording(const eegio::EegRecording& rec,
                                                   unsigned threads = 1) const {
    std::vector<std::vector<LabeledExample>> per_trial(rec.trials.size());
    if (threads <= 1) {
      for (std::size_t t = 0; t < rec.trials.size(); ++t) {
        per_trial[t] = preprocess_trial(rec, rec.trials[t]);
      }
    } else {
      std::vector<std::jthread> workers;
      std::vector<std::exception_ptr> errors(threads);
      for (unsigned w = 0; w < threads; ++w) {
        workers.emplace_back([&, w] {
          try {
            for (std::size_t t = w; t < rec.trials.size(); t += threads) {
              per_trial[t] = preprocess_trial(rec, rec.trials[t]);
            }
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      }
      workers.clear();
      for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
      }
    }
    std::vector<LabeledExample> out;
    for (auto& chunk : per_trial) {
      out.insert(out.end(), std::make_move_iterator(chunk.begin()),
                 std::make_move_iterator(chunk.end()));
    }
    return out;
  }

 private:
  PipelineConfig config_;
  double fs_hz_;
  BandpassFilter filter_;
};

/// Free-function form of Pipeline::preprocess_trial.
inline std::vector<LabeledExample> preprocess_trial(const eegio::EegRecording& rec,
                                                    const eegio::TrialMarker& trial,
                                                    const PipelineConfig& config) {
  return Pipeline(config, rec.fs_hz).preprocess_trial(rec, trial);
}

}  // namespace ssvep::dsp
