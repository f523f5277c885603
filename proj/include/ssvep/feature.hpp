#pragma once

#include <cstddef>
#include <vector>

namespace ssvep {

/// Normalized FFT-magnitude band slice fed to the classifier.
/// `values[i]` is the scaled magnitude at `bin_freqs_hz[i]`.
struct FeatureVector {
  std::vector<double> values;
  std::vector<double> bin_freqs_hz;
  double fs_hz = 0.0;
  std::size_t n_fft = 0;

  std::size_t size() const { return values.size(); }
  bool operator==(const FeatureVector&) const = default;
};

struct LabeledExample {
  FeatureVector features;
  std::size_t class_index = 0;

  bool operator==(const LabeledExample&) const = default;
};

}  // namespace ssvep
