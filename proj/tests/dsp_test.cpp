#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "ssvep/dsp.hpp"
#include "ssvep/rng.hpp"
#include "ssvep/synth.hpp"

using namespace ssvep;
using dsp::Error;

namespace {

template <typename F>
Error::Kind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no dsp::Error thrown";
  return Error::Kind::empty_band;
}

std::vector<double> random_signal(Rng& r, std::size_t n) {
  std::vector<double> x(n);
  for (auto& v : x) v = r.normal();
  return x;
}

double rel_err(const std::vector<double>& mag, const std::vector<std::complex<double>>& ref) {
  double scale = 0, err = 0;
  for (std::size_t k = 0; k < mag.size(); ++k) {
    scale = std::max(scale, std::abs(ref[k]));
    err = std::max(err, std::abs(mag[k] - std::abs(ref[k])));
  }
  return scale == 0 ? err : err / scale;
}

}  // namespace

// --- filter ---------------------------------------------------------------

TEST(Bandpass, MatchesClosedFormButterworth) {
  for (int order : {2, 4, 8}) {
    const auto f = dsp::design_bandpass(256, 8, 16, order);
    ASSERT_EQ(f.sections.size(), static_cast<std::size_t>(order / 2));
    for (double hz = 0.5; hz < 128; hz += 0.25) {
      const double want = oracle::butterworth_bandpass_gain(hz, 256, 8, 16, order);
      EXPECT_NEAR(std::abs(f.response(hz)), want, 1e-9) << "order " << order << " at " << hz;
    }
  }
}

TEST(Bandpass, DirectTransferFunctionAgrees) {
  const auto f = dsp::design_bandpass(256, 8, 16, 4);
  const auto tf = oracle::TransferFunction::from_sections(f.sections);
  for (double hz : {1.0, 2.0, 8.0, 9.25, 11.25, 12.0, 13.25, 16.0, 40.0, 64.0, 100.0}) {
    EXPECT_NEAR(std::abs(f.response(hz) - tf.at(hz, 256)), 0.0, 1e-12);
  }
}

TEST(Bandpass, PassbandAndStopband) {
  const auto f = dsp::design_bandpass(256, 8, 16, 4);
  const auto tf = oracle::TransferFunction::from_sections(f.sections);
  EXPECT_NEAR(tf.gain_db(12, 256), 0.0, 1.0);
  for (double hz : {9.25, 11.25, 13.25}) EXPECT_NEAR(tf.gain_db(hz, 256), 0.0, 1.0);
  EXPECT_LE(tf.gain_db(2, 256), -20.0);
  EXPECT_LE(tf.gain_db(64, 256), -20.0);
  // Edges sit at -3 dB by construction.
  EXPECT_NEAR(tf.gain_db(8, 256), -3.0103, 1e-3);
  EXPECT_NEAR(tf.gain_db(16, 256), -3.0103, 1e-3);
}

TEST(Bandpass, MonotoneOutsideBand) {
  const auto f = dsp::design_bandpass(256, 8, 16, 4);
  double prev = -1e9;
  for (double hz = 0.25; hz <= 8.0; hz += 0.25) {
    const double g = f.gain_db(hz);
    EXPECT_GT(g, prev);
    prev = g;
  }
  prev = 1e9;
  for (double hz = 16.0; hz < 128.0; hz += 0.25) {
    const double g = f.gain_db(hz);
    EXPECT_LT(g, prev);
    prev = g;
  }
}

TEST(Bandpass, SectionsStable) {
  for (int order : {2, 4, 8}) {
    for (const auto& s : dsp::design_bandpass(250, 1, 40, order).sections) {
      EXPECT_TRUE(s.stable());
      // roots of z^2 + a1 z + a2
      const std::complex<double> disc = std::sqrt(std::complex<double>(s.a1 * s.a1 - 4 * s.a2));
      EXPECT_LT(std::abs((-s.a1 + disc) / 2.0), 1.0);
      EXPECT_LT(std::abs((-s.a1 - disc) / 2.0), 1.0);
    }
  }
}

TEST(Bandpass, InvalidInputs) {
  EXPECT_EQ(kind_of([] { dsp::design_bandpass(256, 16, 8, 4); }), Error::Kind::invalid_band);
  try {
    dsp::design_bandpass(256, 16, 8, 4);
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "invalid band edges");
  }
  EXPECT_EQ(kind_of([] { dsp::design_bandpass(256, 8, 128, 4); }), Error::Kind::invalid_band);
  EXPECT_EQ(kind_of([] { dsp::design_bandpass(256, 0, 16, 4); }), Error::Kind::invalid_band);
  EXPECT_EQ(kind_of([] { dsp::design_bandpass(256, 8, 16, 3); }), Error::Kind::invalid_order);
  EXPECT_EQ(kind_of([] { dsp::design_bandpass(256, 8, 16, 6); }), Error::Kind::invalid_order);
}

TEST(FilterApply, ConstantInputDecays) {
  const auto f = dsp::design_bandpass(256, 8, 16, 4);
  EXPECT_LT(std::abs(oracle::TransferFunction::from_sections(f.sections).at(0.0, 256)), 1e-12);
  const auto y = dsp::filter_apply(f, std::vector<double>(4096, 1.0));
  ASSERT_EQ(y.size(), 4096u);
  for (std::size_t i = 4096 - 256; i < 4096; ++i) EXPECT_LT(std::abs(y[i]), 0.01);
}

TEST(FilterApply, ImpulseResponseSpectrumMatchesTransferFunction) {
  const auto f = dsp::design_bandpass(256, 8, 16, 4);
  const auto tf = oracle::TransferFunction::from_sections(f.sections);
  std::vector<double> impulse(4096, 0.0);
  impulse[0] = 1.0;
  const auto h = dsp::filter_apply(f, impulse);
  const auto H = dsp::fft_real(h, 4096);
  for (std::size_t k = 0; k <= 2048; k += 7) {
    const double hz = 256.0 * static_cast<double>(k) / 4096.0;
    EXPECT_NEAR(std::abs(H[k] - tf.at(hz, 256)), 0.0, 1e-6) << hz;
  }
}

TEST(FilterApply, ImpulseEnergyDecays) {
  const auto f = dsp::design_bandpass(256, 8, 16, 4);
  std::vector<double> impulse(8192, 0.0);
  impulse[0] = 1.0;
  const auto h = dsp::filter_apply(f, impulse);
  double total = 0, tail = 0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    total += h[i] * h[i];
    if (i >= 4096) tail += h[i] * h[i];
  }
  EXPECT_LT(tail, 1e-12 * total);
}

TEST(FilterApply, ZeroInZeroOutAndLinearity) {
  const auto f = dsp::design_bandpass(256, 8, 16, 4);
  for (double v : dsp::filter_apply(f, std::vector<double>(500, 0.0))) EXPECT_EQ(v, 0.0);
  Rng r(2);
  const auto x = random_signal(r, 300), z = random_signal(r, 300);
  std::vector<double> sum(300);
  for (int i = 0; i < 300; ++i) sum[i] = 2.0 * x[i] + z[i];
  const auto yx = dsp::filter_apply(f, x), yz = dsp::filter_apply(f, z), ys = dsp::filter_apply(f, sum);
  for (int i = 0; i < 300; ++i) EXPECT_NEAR(ys[i], 2.0 * yx[i] + yz[i], 1e-12);
}

TEST(FilterApply, RejectsNonFinite) {
  const auto f = dsp::design_bandpass(256, 8, 16, 4);
  std::vector<double> x(10, 0.0);
  x[3] = INFINITY;
  EXPECT_EQ(kind_of([&] { dsp::filter_apply(f, x); }), Error::Kind::non_finite);
}

// --- windows --------------------------------------------------------------

TEST(Windows, DefaultTrialCount) {
  std::vector<double> x(1024);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i);
  const auto w = dsp::segment_windows(x, {768, 16});
  ASSERT_EQ(w.size(), 17u);
  EXPECT_EQ(w[1].front(), 16.0);
  EXPECT_EQ(w[16].front(), 256.0);
  EXPECT_EQ(w[16].back(), 1023.0);
}

TEST(Windows, Boundaries) {
  EXPECT_EQ(dsp::segment_windows(std::vector<double>(768), {768, 16}).size(), 1u);
  EXPECT_EQ(kind_of([] { dsp::segment_windows(std::vector<double>(767), {768, 16}); }),
            Error::Kind::signal_too_short);
  EXPECT_EQ(kind_of([] { dsp::segment_windows(std::vector<double>(100), {10, 11}); }), Error::Kind::invalid_window);
  EXPECT_EQ(kind_of([] { dsp::segment_windows(std::vector<double>(100), {10, 0}); }), Error::Kind::invalid_window);
}

TEST(Windows, CountFormulaProperty) {
  for (std::size_t len = 1; len <= 70; ++len)
    for (std::size_t wl = 1; wl <= len; wl += 3)
      for (std::size_t off = 1; off <= wl; off += 2) {
        const auto n = dsp::segment_windows(std::vector<double>(len), {wl, off}).size();
        ASSERT_EQ(n, (len - wl) / off + 1);
        ASSERT_EQ(n, dsp::window_count(len, {wl, off}));
      }
  EXPECT_EQ(dsp::window_count(1024, {512, 16}), 33u);
  EXPECT_EQ(dsp::window_count(1024, {256, 16}), 49u);
}

// --- FFT ------------------------------------------------------------------

TEST(Fft, MatchesNaiveDft) {
  Rng r(4);
  for (std::size_t n = 1; n <= 1024; n *= 2) {
    for (int rep = 0; rep < 3; ++rep) {
      const auto x = random_signal(r, n - r.below(n / 2 + 1));
      EXPECT_LT(rel_err(dsp::fft_magnitude(x, n), oracle::naive_dft(x, n)), 1e-9) << n;
    }
  }
}

TEST(Fft, ComplexMatchesAndInverse) {
  Rng r(6);
  const auto x = random_signal(r, 256);
  const auto X = dsp::fft_real(x, 256);
  const auto ref = oracle::naive_dft(x, 256);
  for (int k = 0; k < 256; ++k) EXPECT_NEAR(std::abs(X[k] - ref[k]), 0.0, 1e-10);
  auto back = X;
  dsp::fft_inplace(back, true);
  for (int i = 0; i < 256; ++i) EXPECT_NEAR(back[i].real(), x[i], 1e-12);
}

TEST(Fft, CosineAt925LandsOnBin37) {
  std::vector<double> x(768);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::cos(2 * std::numbers::pi * 9.25 * i / 256.0);
  const auto mag = dsp::fft_magnitude(x, 1024);
  ASSERT_EQ(mag.size(), 513u);
  std::size_t best = 1;
  for (std::size_t k = 1; k < mag.size(); ++k)
    if (mag[k] > mag[best]) best = k;
  EXPECT_EQ(best, 37u);
}

TEST(Fft, ZeroWindowAndErrors) {
  for (double v : dsp::fft_magnitude(std::vector<double>(100, 0.0), 128)) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(kind_of([] { dsp::fft_magnitude(std::vector<double>(100), 100); }), Error::Kind::bad_fft_size);
  EXPECT_EQ(kind_of([] { dsp::fft_magnitude(std::vector<double>(200), 128); }), Error::Kind::bad_fft_size);
}

TEST(Fft, ParsevalAndLinearity) {
  Rng r(8);
  const auto x = random_signal(r, 1024);
  const auto X = dsp::fft_real(x, 1024);
  double ex = 0, eX = 0;
  for (double v : x) ex += v * v;
  for (auto c : X) eX += std::norm(c);
  EXPECT_NEAR(ex, eX / 1024.0, 1e-9 * ex);
  std::vector<double> ax(x);
  for (auto& v : ax) v *= 3.5;
  const auto m1 = dsp::fft_magnitude(x, 1024), m2 = dsp::fft_magnitude(ax, 1024);
  for (std::size_t k = 0; k < m1.size(); ++k) EXPECT_NEAR(m2[k], 3.5 * m1[k], 1e-9 * (1 + m2[k]));
}

// --- features ---------------------------------------------------------------

TEST(Features, DefaultBandHas33Bins) {
  std::vector<double> mag(513);
  for (std::size_t k = 0; k < mag.size(); ++k) mag[k] = static_cast<double>((k * 37) % 101);
  const auto fv = dsp::extract_features(mag, 256, 1024, 8, 16);
  ASSERT_EQ(fv.size(), 33u);
  EXPECT_EQ(dsp::feature_length(256, 1024, 8, 16), 33u);
  EXPECT_DOUBLE_EQ(fv.bin_freqs_hz.front(), 8.0);
  EXPECT_DOUBLE_EQ(fv.bin_freqs_hz[1], 8.25);
  EXPECT_DOUBLE_EQ(fv.bin_freqs_hz.back(), 16.0);
  EXPECT_EQ(fv.n_fft, 1024u);
  EXPECT_EQ(*std::min_element(fv.values.begin(), fv.values.end()), 0.0);
  EXPECT_EQ(*std::max_element(fv.values.begin(), fv.values.end()), 1.0);
  for (std::size_t i = 1; i < fv.size(); ++i) EXPECT_GT(fv.bin_freqs_hz[i], fv.bin_freqs_hz[i - 1]);
}

TEST(Features, FlatBandGivesZeros) {
  const auto fv = dsp::extract_features(std::vector<double>(513, 4.2), 256, 1024, 8, 16);
  for (double v : fv.values) EXPECT_EQ(v, 0.0);
}

TEST(Features, DominantBin) {
  std::vector<double> mag(513, 1.0);
  for (std::size_t k = 0; k < mag.size(); ++k) mag[k] += 0.01 * static_cast<double>(k % 5);
  mag[45] = 50.0;
  const auto fv = dsp::extract_features(mag, 256, 1024, 8, 16);
  EXPECT_EQ(fv.values[45 - 32], 1.0);
  for (std::size_t i = 0; i < fv.size(); ++i) {
    if (i != 13) {
      EXPECT_LT(fv.values[i], 1.0);
    }
  }
}

TEST(Features, ScaleInvariant) {
  Rng r(12);
  std::vector<double> mag(513);
  for (auto& v : mag) v = r.uniform();
  auto scaled = mag;
  for (auto& v : scaled) v *= 7.25;
  const auto a = dsp::extract_features(mag, 256, 1024, 8, 16);
  const auto b = dsp::extract_features(scaled, 256, 1024, 8, 16);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.values[i], b.values[i], 1e-12);
}

TEST(Features, EmptyBand) {
  EXPECT_EQ(kind_of([] { dsp::extract_features(std::vector<double>(9), 256, 16, 8.1, 8.2); }), Error::Kind::empty_band);
}

// --- pipeline ----------------------------------------------------------------

TEST(Pipeline, TrialGives17SameClassExamples) {
  synth::SynthConfig t;
  t.snr_db = synth::kNoNoise;
  const std::vector<double> freqs{9.25, 11.25, 13.25};
  const auto rec = synth::generate_dataset(freqs, 1, t);
  const auto ex = dsp::preprocess_trial(rec, rec.trials[1], dsp::PipelineConfig{});
  ASSERT_EQ(ex.size(), 17u);
  for (const auto& e : ex) {
    EXPECT_EQ(e.class_index, 1u);
    EXPECT_EQ(dsp::PipelineConfig{}.class_freqs[1], 11.25);
    const auto best = std::max_element(e.features.values.begin(), e.features.values.end()) - e.features.values.begin();
    EXPECT_EQ(best + 32, 45);
  }
}

TEST(Pipeline, ParallelPreservesOrder) {
  synth::SynthConfig t;
  t.seed = 3;
  const std::vector<double> freqs{9.25, 11.25, 13.25};
  const auto rec = synth::generate_dataset(freqs, 4, t);
  const dsp::Pipeline p({}, rec.fs_hz);
  EXPECT_EQ(p.preprocess_recording(rec, 1), p.preprocess_recording(rec, 4));
  EXPECT_EQ(p.preprocess_recording(rec).size(), 12u * 17u);
}

TEST(Pipeline, MissingChannel) {
  synth::SynthConfig t;
  const std::vector<double> freqs{9.25};
  const auto rec = synth::generate_dataset(freqs, 1, t);
  dsp::PipelineConfig pc;
  pc.channel = "Cz";
  pc.class_freqs = {9.25};
  EXPECT_THROW(dsp::preprocess_trial(rec, rec.trials[0], pc), eegio::Error);
}
