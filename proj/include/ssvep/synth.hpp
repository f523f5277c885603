#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssvep/dsp.hpp"
#include "ssvep/eegio.hpp"
#include "ssvep/rng.hpp"

namespace ssvep::synth {

class Error : public std::runtime_error {
 public:
  enum class Kind { invalid_config, unsatisfiable_snr, frequency_outside_band };

  Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline constexpr double kNoNoise = std::numeric_limits<double>::infinity();
inline constexpr double kBandLo = 8.0;
inline constexpr double kBandHi = 16.0;

/// Harmonic h has amplitude base_amp_uv / h^harmonic_decay. `snr_db` is the
/// in-band SNR as reported by measure_band_snr; +inf disables noise. A zero
/// base amplitude is only valid with snr_db = -inf and yields noise with
/// RMS `noise_rms_uv`.
struct SynthConfig {
  double stim_freq_hz = 11.25;
  int n_harmonics = 2;
  double harmonic_decay = 1.0;
  double base_amp_uv = 1.0;
  double phase_rad = 0.0;
  double snr_db = 0.0;
  double noise_rms_uv = 1.0;
  double fs_hz = 256.0;
  double duration_s = 4.0;
  std::uint64_t seed = 0;

  std::size_t n_samples() const {
    return static_cast<std::size_t>(std::llround(duration_s * fs_hz));
  }

  void validate() const {
    if (!(fs_hz > 0.0)) throw Error(Error::Kind::invalid_config, "fs_hz must be positive");
    if (!(stim_freq_hz > 0.0 && stim_freq_hz < fs_hz / 2.0)) {
      throw Error(Error::Kind::invalid_config, "stimulus frequency must lie in (0, fs/2)");
    }
    if (!(duration_s > 0.0) || n_samples() == 0) {
      throw Error(Error::Kind::invalid_config, "duration must be positive");
    }
    if (!(base_amp_uv >= 0.0)) throw Error(Error::Kind::invalid_config, "negative amplitude");
    if (n_harmonics < 1) throw Error(Error::Kind::invalid_config, "need at least one harmonic");
    if (std::isnan(snr_db)) throw Error(Error::Kind::invalid_config, "snr_db is NaN");
  }
};

inline std::size_t next_pow2(std::size_t n) { return std::bit_ceil(std::max<std::size_t>(n, 1)); }

namespace detail {

struct BandBins {
  std::vector<std::size_t> fundamental;  // k0-1 .. k0+1
  std::vector<std::size_t> rest;         // remaining in-band bins
};

inline BandBins band_bins(std::size_t n_fft, double fs_hz, double f_hz) {
  if (!(f_hz >= kBandLo && f_hz <= kBandHi)) {
    throw Error(Error::Kind::frequency_outside_band, "frequency outside the 8-16 Hz analysis band");
  }
  const double df = fs_hz / static_cast<double>(n_fft);
  const auto k0 = static_cast<std::size_t>(std::llround(f_hz / df));
  BandBins bins;
  for (std::size_t k = 0; k <= n_fft / 2; ++k) {
    const double f = static_cast<double>(k) * df;
    const bool fund = k + 1 >= k0 && k <= k0 + 1;
    if (fund) {
      bins.fundamental.push_back(k);
    } else if (f >= kBandLo - 1e-9 && f <= kBandHi + 1e-9) {
      bins.rest.push_back(k);
    }
  }
  return bins;
}

inline double bins_dot(const std::vector<dsp::cplx>& a, const std::vector<dsp::cplx>& b,
                       const std::vector<std::size_t>& bins) {
  double s = 0.0;
  for (auto k : bins) s += (a[k] * std::conj(b[k])).real();
  return s;
}

inline std::vector<double> white(Rng& rng, std::size_t n) {
  std::vector<double> w(n);
  for (auto& v : w) v = rng.normal();
  return w;
}

/// White Gaussian noise shaped to a 1/f power spectrum (amplitude 1/sqrt(f),
/// DC removed), computed on the next power-of-two length and truncated.
inline std::vector<double> pink(Rng& rng, std::size_t n, double fs_hz) {
  const std::size_t m = next_pow2(n);
  std::vector<dsp::cplx> spec(m);
  for (auto& v : spec) v = rng.normal();
  dsp::fft_inplace(spec);
  spec[0] = 0.0;
  for (std::size_t k = 1; k < m; ++k) {
    const std::size_t kk = k <= m / 2 ? k : m - k;
    spec[k] /= std::sqrt(static_cast<double>(kk) * fs_hz / static_cast<double>(m));
  }
  dsp::fft_inplace(spec, true);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = spec[i].real();
  return out;
}

inline void normalize_rms(std::vector<double>& x) {
  double ss = 0.0;
  for (double v : x) ss += v * v;
  const double rms = std::sqrt(ss / static_cast<double>(x.size()));
  if (rms > 0.0) {
    for (double& v : x) v /= rms;
  }
}

}  // namespace detail

/// In-band SNR in dB: power in the fundamental's FFT bin +-1 over the power
/// in the remaining 8-16 Hz bins. The FFT length is the next power of two
/// of the signal length. Returns +inf when the remainder is negligible
/// (ratio above 1e12) and -inf when the fundamental bins hold no power.
inline double measure_band_snr(std::span<const double> x, double fs_hz, double f_hz) {
  const std::size_t n_fft = next_pow2(x.size());
  const auto bins = detail::band_bins(n_fft, fs_hz, f_hz);
  const auto spec = dsp::fft_real(x, n_fft);
  double pf = 0.0, pr = 0.0;
  for (auto k : bins.fundamental) pf += std::norm(spec[k]);
  for (auto k : bins.rest) pr += std::norm(spec[k]);
  if (pf <= 0.0) return -std::numeric_limits<double>::infinity();
  if (pr <= pf * 1e-12) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(pf / pr);
}

struct TrialParts {
  std::vector<double> clean;
  std::vector<double> noise;  // already scaled

  std::vector<double> mixed() const {
    std::vector<double> out(clean.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = clean[i] + noise[i];
    return out;
  }
};

/// Clean harmonic series plus scaled noise. The noise is an equal-power mix
/// of unit-RMS white and 1/f Gaussian noise; its gain solves
/// measure_band_snr(clean + g*noise) = snr_db exactly (a quadratic in g,
/// cross terms included).
inline TrialParts generate_trial_parts(const SynthConfig& config) {
  config.validate();
  const std::size_t n = config.n_samples();
  const double two_pi = 2.0 * std::numbers::pi;
  TrialParts parts;
  parts.clean.assign(n, 0.0);
  if (config.base_amp_uv > 0.0) {
    for (int h = 1; h <= config.n_harmonics; ++h) {
      const double fh = h * config.stim_freq_hz;
      if (fh >= config.fs_hz / 2.0) break;
      const double amp = config.base_amp_uv / std::pow(static_cast<double>(h), config.harmonic_decay);
      for (std::size_t i = 0; i < n; ++i) {
        parts.clean[i] +=
            amp * std::sin(two_pi * fh * static_cast<double>(i) / config.fs_hz + config.phase_rad);
      }
    }
  }
  parts.noise.assign(n, 0.0);
  if (config.snr_db == kNoNoise) {
    if (config.base_amp_uv == 0.0) {
      throw Error(Error::Kind::unsatisfiable_snr, "no signal and no noise requested");
    }
    return parts;
  }

  Rng rng(config.seed);
  auto draw_unit_noise = [&] {
    auto w = detail::white(rng, n);
    auto p = detail::pink(rng, n, config.fs_hz);
    detail::normalize_rms(w);
    detail::normalize_rms(p);
    std::vector<double> unit(n);
    for (std::size_t i = 0; i < n; ++i) unit[i] = std::sqrt(0.5) * (w[i] + p[i]);
    return unit;
  };

  if (config.base_amp_uv == 0.0) {
    if (config.snr_db != -std::numeric_limits<double>::infinity()) {
      throw Error(Error::Kind::unsatisfiable_snr,
                  "finite SNR requested for a trial with zero signal amplitude");
    }
    auto unit = draw_unit_noise();
    detail::normalize_rms(unit);
    for (std::size_t i = 0; i < n; ++i) parts.noise[i] = config.noise_rms_uv * unit[i];
    return parts;
  }
  if (config.snr_db == -std::numeric_limits<double>::infinity()) {
    throw Error(Error::Kind::unsatisfiable_snr, "SNR of -inf requires zero signal amplitude");
  }

  const std::size_t n_fft = next_pow2(n);
  const auto bins = detail::band_bins(n_fft, config.fs_hz, config.stim_freq_hz);
  const auto S = dsp::fft_real(parts.clean, n_fft);
  const double r = std::pow(10.0, config.snr_db / 10.0);
  // A noise draw whose own power is concentrated in the fundamental bins
  // can make the target unreachable; such draws are discarded and the
  // stream continues, so the result is still a pure function of the seed.
  constexpr int kMaxDraws = 16;
  for (int attempt = 0; attempt < kMaxDraws; ++attempt) {
    const auto unit = draw_unit_noise();
    const auto N = dsp::fft_real(unit, n_fft);
    // (A_F - r A_R) + 2g (C_F - r C_R) + g^2 (B_F - r B_R) = 0
    const double a = detail::bins_dot(N, N, bins.fundamental) - r * detail::bins_dot(N, N, bins.rest);
    const double b = 2.0 * (detail::bins_dot(S, N, bins.fundamental) - r * detail::bins_dot(S, N, bins.rest));
    const double c = detail::bins_dot(S, S, bins.fundamental) - r * detail::bins_dot(S, S, bins.rest);
    double gain = -1.0;
    if (a != 0.0) {
      const double disc = b * b - 4.0 * a * c;
      if (disc >= 0.0) {
        const double sq = std::sqrt(disc);
        const double r1 = (-b - sq) / (2.0 * a), r2 = (-b + sq) / (2.0 * a);
        for (double root : {std::min(r1, r2), std::max(r1, r2)}) {
          if (root > 0.0) {
            gain = root;
            break;
          }
        }
      }
    } else if (b != 0.0 && -c / b > 0.0) {
      gain = -c / b;
    }
    if (gain > 0.0 && std::isfinite(gain)) {
      for (std::size_t i = 0; i < n; ++i) parts.noise[i] = gain * unit[i];
      return parts;
    }
  }
  throw Error(Error::Kind::unsatisfiable_snr,
              "cannot reach " + std::to_string(config.snr_db) + " dB in-band SNR for this trial");
}

inline std::vector<double> generate_trial(const SynthConfig& config) {
  return generate_trial_parts(config).mixed();
}

/// trials_per_class trials per frequency, concatenated; trial t has class
/// t % n_classes (classes ordered as given), seed derive_seed(seed, t) and a
/// uniform random phase drawn from derive_seed(seed, t) ^ 1.
inline eegio::EegRecording generate_dataset(std::span<const double> class_freqs,
                                            std::size_t trials_per_class,
                                            const SynthConfig& templ) {
  templ.validate();
  if (class_freqs.empty() || trials_per_class == 0) {
    throw Error(Error::Kind::invalid_config, "need at least one class and one trial per class");
  }
  const double fs_rounded = std::round(templ.fs_hz);
  if (fs_rounded != templ.fs_hz) {
    throw Error(Error::Kind::invalid_config, "recordings need an integer sampling rate");
  }
  eegio::EegRecording rec;
  rec.fs_hz = static_cast<std::uint32_t>(templ.fs_hz);
  rec.channel_labels = {"Oz"};
  const std::size_t len = templ.n_samples();
  const std::size_t n_trials = class_freqs.size() * trials_per_class;
  rec.data.reserve(n_trials * len);
  for (std::size_t t = 0; t < n_trials; ++t) {
    SynthConfig cfg = templ;
    cfg.stim_freq_hz = class_freqs[t % class_freqs.size()];
    cfg.seed = derive_seed(templ.seed, t);
    Rng phase_rng(cfg.seed ^ 1ULL);
    cfg.phase_rad = 2.0 * std::numbers::pi * phase_rng.uniform();
    const auto x = generate_trial(cfg);
    rec.trials.push_back({static_cast<std::uint64_t>(t * len), len, cfg.stim_freq_hz});
    rec.data.insert(rec.data.end(), x.begin(), x.end());
  }
  return rec;
}

}  // namespace ssvep::synth
