#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ssvep/feature.hpp"
#include "ssvep/rng.hpp"

// Canonical recording file (all integers and floats little-endian):
//
//   "SSVEPREC"            8 bytes magic
//   u16 version           = 1
//   u32 fs_hz
//   u16 n_channels
//   n_channels × 8 bytes  ASCII label, right-padded with spaces
//   u64 n_samples
//   u32 n_trials
//   n_trials × { u64 onset, u64 length, f64 stim_freq_hz }
//   n_samples × n_channels × f64, time-major (sample 0 ch 0, sample 0 ch 1, ...)

namespace ssvep::eegio {

static_assert(std::endian::native == std::endian::little,
              "recording I/O assumes a little-endian host");

inline constexpr std::string_view kMagic = "SSVEPREC";
inline constexpr std::uint16_t kVersion = 1;
inline constexpr std::size_t kLabelWidth = 8;

class Error : public std::runtime_error {
 public:
  enum class Kind {
    io,
    bad_magic,
    bad_version,
    malformed_header,
    truncated,
    non_finite,
    marker_out_of_bounds,
    invalid_recording,
    unknown_frequency,
    invalid_split,
  };

  Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct TrialMarker {
  std::uint64_t onset_sample = 0;
  std::uint64_t length_samples = 0;
  double stim_freq_hz = 0.0;

  bool operator==(const TrialMarker&) const = default;
};

/// Multi-channel recording, samples stored time-major:
/// `data[sample * n_channels + channel]`, microvolts.
struct EegRecording {
  std::uint32_t fs_hz = 0;
  std::vector<std::string> channel_labels;
  std::vector<double> data;
  std::vector<TrialMarker> trials;

  std::size_t n_channels() const { return channel_labels.size(); }
  std::size_t n_samples() const {
    return channel_labels.empty() ? 0 : data.size() / channel_labels.size();
  }
  double at(std::size_t sample, std::size_t channel) const {
    return data[sample * n_channels() + channel];
  }

  std::size_t channel_index(std::string_view label) const {
    for (std::size_t i = 0; i < channel_labels.size(); ++i) {
      if (channel_labels[i] == label) return i;
    }
    throw Error(Error::Kind::invalid_recording, "no channel labelled '" + std::string(label) + "'");
  }

  /// Copy of one channel over [onset, onset + length).
  std::vector<double> channel_segment(std::size_t channel, std::uint64_t onset,
                                      std::uint64_t length) const {
    std::vector<double> out(length);
    for (std::uint64_t i = 0; i < length; ++i) out[i] = at(onset + i, channel);
    return out;
  }

  bool operator==(const EegRecording&) const = default;
};

/// Throws Error describing the first violated invariant.
inline void validate(const EegRecording& rec) {
  using K = Error::Kind;
  if (rec.fs_hz == 0) throw Error(K::invalid_recording, "fs_hz must be positive");
  if (rec.channel_labels.empty()) throw Error(K::invalid_recording, "recording has no channels");
  for (const auto& label : rec.channel_labels) {
    if (label.empty() || label.size() > kLabelWidth) {
      throw Error(K::invalid_recording, "channel label must be 1..8 characters: '" + label + "'");
    }
  }
  if (rec.data.size() % rec.channel_labels.size() != 0) {
    throw Error(K::invalid_recording, "data size is not a multiple of channel count");
  }
  for (double v : rec.data) {
    if (!std::isfinite(v)) throw Error(K::non_finite, "non-finite sample");
  }
  const std::uint64_t n = rec.n_samples();
  for (const auto& t : rec.trials) {
    if (t.length_samples == 0) throw Error(K::invalid_recording, "trial with zero length");
    if (t.onset_sample >= n || t.length_samples > n - t.onset_sample) {
      throw Error(K::marker_out_of_bounds, "marker out of bounds");
    }
    if (!std::isfinite(t.stim_freq_hz) || t.stim_freq_hz <= 0.0) {
      throw Error(K::invalid_recording, "trial stimulus frequency must be positive");
    }
  }
}

namespace detail {

template <typename T>
void put(std::string& buf, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  buf.append(bytes, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    if (bytes_.size() - pos_ < sizeof(T)) {
      throw Error(Error::Kind::truncated, std::string("truncated while reading ") + what);
    }
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string_view take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw Error(Error::Kind::truncated, std::string("truncated while reading ") + what);
    }
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Error::Kind::io, "cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Error::Kind::io, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Error::Kind::io, "write failed: " + path.string());
}

}  // namespace detail

inline std::string encode_recording(const EegRecording& rec) {
  validate(rec);
  std::string buf;
  buf.reserve(64 + rec.trials.size() * 24 + rec.data.size() * 8);
  buf.append(kMagic);
  detail::put<std::uint16_t>(buf, kVersion);
  detail::put<std::uint32_t>(buf, rec.fs_hz);
  detail::put<std::uint16_t>(buf, static_cast<std::uint16_t>(rec.n_channels()));
  for (const auto& label : rec.channel_labels) {
    std::string padded = label;
    padded.resize(kLabelWidth, ' ');
    buf.append(padded);
  }
  detail::put<std::uint64_t>(buf, rec.n_samples());
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(rec.trials.size()));
  for (const auto& t : rec.trials) {
    detail::put<std::uint64_t>(buf, t.onset_sample);
    detail::put<std::uint64_t>(buf, t.length_samples);
    detail::put<double>(buf, t.stim_freq_hz);
  }
  for (double v : rec.data) detail::put<double>(buf, v);
  return buf;
}

inline EegRecording decode_recording(std::string_view bytes) {
  using K = Error::Kind;
  detail::Reader in(bytes);
  if (in.remaining() < kMagic.size() || in.take(kMagic.size(), "magic") != kMagic) {
    throw Error(K::bad_magic, "not a recording file (bad magic)");
  }
  const auto version = in.get<std::uint16_t>("version");
  if (version != kVersion) {
    throw Error(K::bad_version, "unsupported recording version " + std::to_string(version));
  }
  EegRecording rec;
  rec.fs_hz = in.get<std::uint32_t>("fs_hz");
  const auto n_channels = in.get<std::uint16_t>("n_channels");
  if (rec.fs_hz == 0) throw Error(K::malformed_header, "malformed header: fs_hz is zero");
  if (n_channels == 0) throw Error(K::malformed_header, "malformed header: zero channels");
  for (std::uint16_t c = 0; c < n_channels; ++c) {
    std::string label(in.take(kLabelWidth, "channel label"));
    label.erase(label.find_last_not_of(' ') + 1);
    if (label.empty()) throw Error(K::malformed_header, "malformed header: blank channel label");
    rec.channel_labels.push_back(std::move(label));
  }
  const auto n_samples = in.get<std::uint64_t>("n_samples");
  const auto n_trials = in.get<std::uint32_t>("n_trials");
  if (static_cast<std::uint64_t>(n_trials) * 24 > in.remaining()) {
    throw Error(K::truncated, "truncated trial table");
  }
  rec.trials.resize(n_trials);
  for (auto& t : rec.trials) {
    t.onset_sample = in.get<std::uint64_t>("trial onset");
    t.length_samples = in.get<std::uint64_t>("trial length");
    t.stim_freq_hz = in.get<double>("trial frequency");
  }
  const std::uint64_t n_values = n_samples * n_channels;
  if (n_samples != 0 && n_values / n_channels != n_samples) {
    throw Error(K::malformed_header, "malformed header: sample count overflows");
  }
  if (in.remaining() / 8 < n_values) throw Error(K::truncated, "truncated sample payload");
  if (in.remaining() != n_values * 8) {
    throw Error(K::malformed_header, "malformed header: trailing bytes after payload");
  }
  rec.data.resize(n_values);
  for (auto& v : rec.data) v = in.get<double>("sample");
  validate(rec);
  return rec;
}

inline void write_recording(const EegRecording& rec, const std::filesystem::path& path) {
  detail::write_file(path, encode_recording(rec));
}

inline EegRecording read_recording(const std::filesystem::path& path) {
  return decode_recording(detail::read_file(path));
}

/// Class index of `f` given class frequencies; classes are numbered by
/// ascending frequency regardless of the input order.
inline std::size_t label_of_frequency(double f, std::span<const double> class_freqs) {
  std::vector<double> sorted(class_freqs.begin(), class_freqs.end());
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (std::abs(sorted[i] - f) <= 1e-9) return i;
  }
  throw Error(Error::Kind::unknown_frequency, "unknown stimulus frequency " + std::to_string(f));
}

struct DatasetSplit {
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> test;
  std::uint64_t seed = 0;
};

/// Indices of `labels` grouped by class, each group in input order.
inline std::map<std::size_t, std::vector<std::size_t>> group_by_class(
    std::span<const std::size_t> labels) {
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(i);
  return groups;
}

/// Per-class train quotas: floor(n_c * f) each, then the remaining slots up
/// to round(N * f) go to the classes with the largest fractional parts
/// (ties to the lower class). Every class keeps at least one example on
/// each side.
inline std::vector<std::size_t> stratified_quotas(std::span<const std::size_t> class_sizes,
                                                  double train_fraction) {
  std::size_t total = 0;
  for (auto n : class_sizes) total += n;
  const auto target = static_cast<std::size_t>(std::llround(static_cast<double>(total) * train_fraction));
  std::vector<std::size_t> quota(class_sizes.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < class_sizes.size(); ++c) {
    const double exact = static_cast<double>(class_sizes[c]) * train_fraction;
    quota[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[c];
    remainders.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < target && i < remainders.size(); ++i, ++assigned) {
    ++quota[remainders[i].second];
  }
  for (std::size_t c = 0; c < class_sizes.size(); ++c) {
    quota[c] = std::clamp<std::size_t>(quota[c], 1, class_sizes[c] - 1);
  }
  return quota;
}

/// Stratified split of example indices. Each class (ascending index) is
/// shuffled with its own xorshift64* stream seeded by derive_seed(seed, class)
/// and its first quota members go to train. Both outputs are sorted so the
/// original example order is kept.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::span<const std::size_t> labels, double train_fraction, std::uint64_t seed) {
  using K = Error::Kind;
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error(K::invalid_split, "train fraction must be in (0, 1)");
  }
  if (labels.empty()) throw Error(K::invalid_split, "cannot split an empty dataset");
  auto groups = group_by_class(labels);
  std::vector<std::size_t> sizes;
  for (const auto& [cls, members] : groups) {
    if (members.size() < 2) {
      throw Error(K::invalid_split, "class " + std::to_string(cls) + " has fewer than 2 examples");
    }
    sizes.push_back(members.size());
  }
  const auto quotas = stratified_quotas(sizes, train_fraction);
  std::vector<std::size_t> train, test;
  std::size_t g = 0;
  for (auto& [cls, members] : groups) {
    Rng rng(derive_seed(seed, cls));
    rng.shuffle(std::span<std::size_t>(members));
    const auto n_train = static_cast<std::ptrdiff_t>(quotas[g++]);
    train.insert(train.end(), members.begin(), members.begin() + n_train);
    test.insert(test.end(), members.begin() + n_train, members.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {std::move(train), std::move(test)};
}

inline DatasetSplit split_dataset(std::span<const LabeledExample> examples, double train_fraction,
                                  std::uint64_t seed) {
  std::vector<std::size_t> labels;
  labels.reserve(examples.size());
  for (const auto& ex : examples) labels.push_back(ex.class_index);
  auto [train_idx, test_idx] = split_indices(labels, train_fraction, seed);
  DatasetSplit split;
  split.seed = seed;
  split.train.reserve(train_idx.size());
  split.test.reserve(test_idx.size());
  for (auto i : train_idx) split.train.push_back(examples[i]);
  for (auto i : test_idx) split.test.push_back(examples[i]);
  return split;
}

}  // namespace ssvep::eegio
