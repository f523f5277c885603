#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ssvep/eegio.hpp"
#include "ssvep/feature.hpp"
#include "ssvep/rng.hpp"

namespace ssvep::net {

class Error : public std::runtime_error {
 public:
  enum class Kind {
    invalid_config,
    length_mismatch,
    empty_dataset,
    diverged,
    too_few_examples,
    io,
    bad_magic,
    bad_version,
    shape_mismatch,
    truncated,
  };

  Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Conv(valid, stride 1, ReLU) x2 -> dropout -> max-pool -> flatten ->
/// dense+ReLU -> dense logits. Both conv layers use `conv_filters` filters.
struct CnnConfig {
  std::size_t input_len = 33;
  std::size_t conv_filters = 8;
  std::size_t kernel_size = 3;
  double dropout_rate = 0.25;
  std::size_t pool_size = 2;
  std::size_t hidden_units = 64;
  std::size_t n_classes = 3;

  std::size_t conv1_len() const { return input_len - kernel_size + 1; }
  std::size_t conv2_len() const { return conv1_len() - kernel_size + 1; }
  std::size_t pooled_len() const { return conv2_len() / pool_size; }
  std::size_t flatten_len() const { return pooled_len() * conv_filters; }

  void validate() const {
    if (input_len == 0 || conv_filters == 0 || kernel_size == 0 || pool_size == 0 ||
        hidden_units == 0 || n_classes == 0) {
      throw Error(Error::Kind::invalid_config, "all layer sizes must be positive");
    }
    if (input_len < 2 * (kernel_size - 1) + pool_size) {
      throw Error(Error::Kind::invalid_config, "input too short for two convolutions and a pool");
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
      throw Error(Error::Kind::invalid_config, "dropout rate must be in [0, 1)");
    }
  }

  bool operator==(const CnnConfig&) const = default;
};

/// All network weights, row-major:
/// conv1_w[f][0][k], conv2_w[g][f][k], dense1_w[h][flat], dense2_w[c][h].
struct CnnParams {
  std::vector<double> conv1_w, conv1_b;
  std::vector<double> conv2_w, conv2_b;
  std::vector<double> dense1_w, dense1_b;
  std::vector<double> dense2_w, dense2_b;

  static CnnParams zeros(const CnnConfig& c) {
    const std::size_t f = c.conv_filters, k = c.kernel_size;
    CnnParams p;
    p.conv1_w.assign(f * k, 0.0);
    p.conv1_b.assign(f, 0.0);
    p.conv2_w.assign(f * f * k, 0.0);
    p.conv2_b.assign(f, 0.0);
    p.dense1_w.assign(c.hidden_units * c.flatten_len(), 0.0);
    p.dense1_b.assign(c.hidden_units, 0.0);
    p.dense2_w.assign(c.n_classes * c.hidden_units, 0.0);
    p.dense2_b.assign(c.n_classes, 0.0);
    return p;
  }

  /// Visits every tensor in file/declaration order.
  template <typename Self, typename F>
  static void visit(Self& self, F&& fn) {
    fn("conv1_w", self.conv1_w);
    fn("conv1_b", self.conv1_b);
    fn("conv2_w", self.conv2_w);
    fn("conv2_b", self.conv2_b);
    fn("dense1_w", self.dense1_w);
    fn("dense1_b", self.dense1_b);
    fn("dense2_w", self.dense2_w);
    fn("dense2_b", self.dense2_b);
  }
  template <typename F>
  void for_each(F&& fn) { visit(*this, std::forward<F>(fn)); }
  template <typename F>
  void for_each(F&& fn) const { visit(*this, std::forward<F>(fn)); }

  std::size_t size() const {
    std::size_t n = 0;
    for_each([&](std::string_view, const std::vector<double>& t) { n += t.size(); });
    return n;
  }

  bool operator==(const CnnParams&) const = default;
};

/// He-normal weights (N(0, 2/fan_in)) drawn tensor by tensor in declaration
/// order from one xorshift64* stream; biases zero.
inline CnnParams init_params(const CnnConfig& config, std::uint64_t seed) {
  config.validate();
  auto p = CnnParams::zeros(config);
  Rng rng(seed);
  auto fill = [&](std::vector<double>& w, std::size_t fan_in) {
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : w) v = sd * rng.normal();
  };
  fill(p.conv1_w, config.kernel_size);
  fill(p.conv2_w, config.conv_filters * config.kernel_size);
  fill(p.dense1_w, config.flatten_len());
  fill(p.dense2_w, config.hidden_units);
  return p;
}

/// Intermediate activations kept for backpropagation.
struct ForwardCache {
  std::vector<double> input;
  std::vector<double> conv1;          // post-ReLU [F][L1]
  std::vector<double> conv2;          // post-ReLU [F][L2]
  std::vector<double> dropout_scale;  // [F][L2]; empty in eval mode
  std::vector<double> dropped;        // [F][L2]
  std::vector<std::size_t> pool_src;  // [F][Lp] index into `dropped`
  std::vector<double> flat;           // [F*Lp]
  std::vector<double> hidden;         // post-ReLU [H]
  std::vector<double> logits;         // [C]
};

inline double relu(double v) { return v > 0.0 ? v : 0.0; }

/// Max over each non-overlapping window of `size`; the trailing partial
/// window is dropped. Ties resolve to the earliest element.
inline std::vector<double> max_pool(std::span<const double> in, std::size_t size,
                                    std::vector<std::size_t>* src = nullptr) {
  const std::size_t out_len = in.size() / size;
  std::vector<double> out(out_len);
  if (src) src->resize(out_len);
  for (std::size_t j = 0; j < out_len; ++j) {
    std::size_t best = j * size;
    for (std::size_t t = 1; t < size; ++t) {
      if (in[j * size + t] > in[best]) best = j * size + t;
    }
    out[j] = in[best];
    if (src) (*src)[j] = best;
  }
  return out;
}

class Network {
 public:
  Network(CnnConfig config, CnnParams params) : config_(config), params_(std::move(params)) {
    config_.validate();
    check_shapes(config_, params_);
  }

  static void check_shapes(const CnnConfig& c, const CnnParams& p) {
    const auto expected = CnnParams::zeros(c);
    bool ok = true;
    std::string bad;
    std::size_t i = 0;
    std::vector<std::size_t> sizes;
    expected.for_each([&](std::string_view, const std::vector<double>& t) { sizes.push_back(t.size()); });
    p.for_each([&](std::string_view name, const std::vector<double>& t) {
      if (ok && t.size() != sizes[i]) {
        ok = false;
        bad = std::string(name);
      }
      ++i;
    });
    if (!ok) throw Error(Error::Kind::shape_mismatch, "parameter shape mismatch in " + bad);
  }

  const CnnConfig& config() const { return config_; }
  const CnnParams& params() const { return params_; }
  CnnParams& mutable_params() { return params_; }

  /// Eval mode when `dropout_rng` is null.
  std::vector<double> forward(std::span<const double> x, Rng* dropout_rng = nullptr,
                              ForwardCache* cache = nullptr) const {
    const auto& c = config_;
    const auto& p = params_;
    if (x.size() != c.input_len) {
      throw Error(Error::Kind::length_mismatch, "feature length " + std::to_string(x.size()) +
                                                    " does not match network input " +
                                                    std::to_string(c.input_len));
    }
    const std::size_t F = c.conv_filters, K = c.kernel_size;
    const std::size_t L1 = c.conv1_len(), L2 = c.conv2_len(), Lp = c.pooled_len();
    const std::size_t H = c.hidden_units, C = c.n_classes, flat_len = c.flatten_len();

    std::vector<double> a1(F * L1);
    for (std::size_t f = 0; f < F; ++f) {
      for (std::size_t i = 0; i < L1; ++i) {
        double z = p.conv1_b[f];
        for (std::size_t k = 0; k < K; ++k) z += p.conv1_w[f * K + k] * x[i + k];
        a1[f * L1 + i] = relu(z);
      }
    }
    std::vector<double> a2(F * L2);
    for (std::size_t g = 0; g < F; ++g) {
      for (std::size_t i = 0; i < L2; ++i) {
        double z = p.conv2_b[g];
        for (std::size_t f = 0; f < F; ++f) {
          const double* w = &p.conv2_w[(g * F + f) * K];
          const double* in = &a1[f * L1 + i];
          for (std::size_t k = 0; k < K; ++k) z += w[k] * in[k];
        }
        a2[g * L2 + i] = relu(z);
      }
    }
    std::vector<double> scale;
    std::vector<double> dropped = a2;
    if (dropout_rng && c.dropout_rate > 0.0) {
      const double keep = 1.0 / (1.0 - c.dropout_rate);
      scale.resize(a2.size());
      for (std::size_t i = 0; i < a2.size(); ++i) {
        scale[i] = dropout_rng->uniform() < c.dropout_rate ? 0.0 : keep;
        dropped[i] = a2[i] * scale[i];
      }
    }
    std::vector<double> flat(flat_len);
    std::vector<std::size_t> src(flat_len);
    for (std::size_t g = 0; g < F; ++g) {
      std::vector<std::size_t> local;
      const auto pooled =
          max_pool(std::span<const double>(dropped).subspan(g * L2, L2), c.pool_size, &local);
      for (std::size_t j = 0; j < Lp; ++j) {
        flat[g * Lp + j] = pooled[j];
        src[g * Lp + j] = g * L2 + local[j];
      }
    }
    std::vector<double> hidden(H);
    for (std::size_t h = 0; h < H; ++h) {
      double z = p.dense1_b[h];
      const double* w = &p.dense1_w[h * flat_len];
      for (std::size_t j = 0; j < flat_len; ++j) z += w[j] * flat[j];
      hidden[h] = relu(z);
    }
    std::vector<double> logits(C);
    for (std::size_t k = 0; k < C; ++k) {
      double z = p.dense2_b[k];
      for (std::size_t h = 0; h < H; ++h) z += p.dense2_w[k * H + h] * hidden[h];
      logits[k] = z;
    }
    if (cache) {
      cache->input.assign(x.begin(), x.end());
      cache->conv1 = std::move(a1);
      cache->conv2 = std::move(a2);
      cache->dropout_scale = std::move(scale);
      cache->dropped = std::move(dropped);
      cache->pool_src = std::move(src);
      cache->flat = std::move(flat);
      cache->hidden = std::move(hidden);
      cache->logits = logits;
    }
    return logits;
  }

  /// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(logits).
  void backward(const ForwardCache& cache, std::span<const double> dlogits, CnnParams& grads) const {
    const auto& c = config_;
    const auto& p = params_;
    const std::size_t F = c.conv_filters, K = c.kernel_size;
    const std::size_t L1 = c.conv1_len(), L2 = c.conv2_len();
    const std::size_t H = c.hidden_units, C = c.n_classes, flat_len = c.flatten_len();

    std::vector<double> dhidden(H, 0.0);
    for (std::size_t k = 0; k < C; ++k) {
      grads.dense2_b[k] += dlogits[k];
      for (std::size_t h = 0; h < H; ++h) {
        grads.dense2_w[k * H + h] += dlogits[k] * cache.hidden[h];
        dhidden[h] += dlogits[k] * p.dense2_w[k * H + h];
      }
    }
    std::vector<double> dflat(flat_len, 0.0);
    for (std::size_t h = 0; h < H; ++h) {
      if (cache.hidden[h] <= 0.0) continue;
      const double d = dhidden[h];
      grads.dense1_b[h] += d;
      double* gw = &grads.dense1_w[h * flat_len];
      const double* w = &p.dense1_w[h * flat_len];
      for (std::size_t j = 0; j < flat_len; ++j) {
        gw[j] += d * cache.flat[j];
        dflat[j] += d * w[j];
      }
    }
    std::vector<double> da2(F * L2, 0.0);
    for (std::size_t j = 0; j < flat_len; ++j) da2[cache.pool_src[j]] += dflat[j];
    if (!cache.dropout_scale.empty()) {
      for (std::size_t i = 0; i < da2.size(); ++i) da2[i] *= cache.dropout_scale[i];
    }
    for (std::size_t i = 0; i < da2.size(); ++i) {
      if (cache.conv2[i] <= 0.0) da2[i] = 0.0;
    }
    std::vector<double> da1(F * L1, 0.0);
    for (std::size_t g = 0; g < F; ++g) {
      for (std::size_t i = 0; i < L2; ++i) {
        const double d = da2[g * L2 + i];
        if (d == 0.0) continue;
        grads.conv2_b[g] += d;
        for (std::size_t f = 0; f < F; ++f) {
          for (std::size_t k = 0; k < K; ++k) {
            grads.conv2_w[(g * F + f) * K + k] += d * cache.conv1[f * L1 + i + k];
            da1[f * L1 + i + k] += d * p.conv2_w[(g * F + f) * K + k];
          }
        }
      }
    }
    for (std::size_t f = 0; f < F; ++f) {
      for (std::size_t i = 0; i < L1; ++i) {
        if (cache.conv1[f * L1 + i] <= 0.0) continue;
        const double d = da1[f * L1 + i];
        grads.conv1_b[f] += d;
        for (std::size_t k = 0; k < K; ++k) grads.conv1_w[f * K + k] += d * cache.input[i + k];
      }
    }
  }

 private:
  CnnConfig config_;
  CnnParams params_;
};

inline std::vector<double> softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += out[i] = std::exp(logits[i] - mx);
  for (auto& v : out) v /= sum;
  return out;
}

/// -log softmax(logits)[label], via log-sum-exp.
inline double cross_entropy(std::span<const double> logits, std::size_t label) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  return mx + std::log(sum) - logits[label];
}

/// Index of the largest value; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

struct LossAndGrads {
  double loss = 0.0;
  CnnParams grads;
};

/// Mean softmax cross-entropy over the batch and its exact gradient.
/// `dropout_rng` null means dropout off.
inline LossAndGrads loss_and_grads(const Network& net, std::span<const LabeledExample> batch,
                                   Rng* dropout_rng = nullptr) {
  if (batch.empty()) throw Error(Error::Kind::empty_dataset, "empty batch");
  LossAndGrads out{0.0, CnnParams::zeros(net.config())};
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  ForwardCache cache;
  for (const auto& ex : batch) {
    net.forward(ex.features.values, dropout_rng, &cache);
    out.loss += cross_entropy(cache.logits, ex.class_index) * inv_b;
    auto dlogits = softmax(cache.logits);
    dlogits[ex.class_index] -= 1.0;
    for (auto& d : dlogits) d *= inv_b;
    net.backward(cache, dlogits, out.grads);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

struct Metrics {
  double accuracy = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  double mean_cross_entropy = 0.0;

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& row : confusion) n += std::accumulate(row.begin(), row.end(), std::size_t{0});
    return n;
  }
};

inline Metrics evaluate(const Network& net, std::span<const LabeledExample> dataset) {
  if (dataset.empty()) throw Error(Error::Kind::empty_dataset, "cannot evaluate an empty dataset");
  const std::size_t C = net.config().n_classes;
  Metrics m;
  m.confusion.assign(C, std::vector<std::size_t>(C, 0));
  std::size_t correct = 0;
  for (const auto& ex : dataset) {
    const auto logits = net.forward(ex.features.values);
    const auto pred = argmax(logits);
    ++m.confusion[ex.class_index][pred];
    correct += pred == ex.class_index;
    m.mean_cross_entropy += cross_entropy(logits, ex.class_index);
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(dataset.size());
  m.mean_cross_entropy /= static_cast<double>(dataset.size());
  return m;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t epochs = 50;
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(learning_rate >= 0.0) || batch_size == 0 || epochs == 0) {
      throw Error(Error::Kind::invalid_config, "need learning_rate >= 0, batch_size >= 1, epochs >= 1");
    }
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  std::optional<double> val_loss;
  std::optional<double> val_acc;
};

struct TrainResult {
  CnnParams params;
  std::vector<EpochRecord> history;
};

class Adam {
 public:
  Adam(const CnnConfig& c, const TrainConfig& t)
      : cfg_(t), m_(CnnParams::zeros(c)), v_(CnnParams::zeros(c)) {}

  void step(CnnParams& params, const CnnParams& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    std::vector<std::vector<double>*> p, m, v;
    std::vector<const std::vector<double>*> g;
    params.for_each([&](std::string_view, std::vector<double>& t) { p.push_back(&t); });
    m_.for_each([&](std::string_view, std::vector<double>& t) { m.push_back(&t); });
    v_.for_each([&](std::string_view, std::vector<double>& t) { v.push_back(&t); });
    grads.for_each([&](std::string_view, const std::vector<double>& t) { g.push_back(&t); });
    for (std::size_t k = 0; k < p.size(); ++k) {
      for (std::size_t i = 0; i < p[k]->size(); ++i) {
        const double gi = (*g[k])[i];
        double& mi = (*m[k])[i];
        double& vi = (*v[k])[i];
        mi = cfg_.beta1 * mi + (1.0 - cfg_.beta1) * gi;
        vi = cfg_.beta2 * vi + (1.0 - cfg_.beta2) * gi * gi;
        (*p[k])[i] -= cfg_.learning_rate * (mi / bc1) / (std::sqrt(vi / bc2) + cfg_.epsilon);
      }
    }
  }

 private:
  TrainConfig cfg_;
  CnnParams m_, v_;
  std::uint64_t t_ = 0;
};

/// Mini-batch Adam. Parameters come from init_params(net_config,
/// derive_seed(seed, 0)); each epoch reshuffles with the stream
/// derive_seed(seed, 1) and dropout masks come from derive_seed(seed, 2).
/// History losses/accuracies are eval-mode passes after each epoch.
inline TrainResult train(std::span<const LabeledExample> train_set, const TrainConfig& config,
                         const CnnConfig& net_config,
                         std::span<const LabeledExample> val_set = {},
                         const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  config.validate();
  net_config.validate();
  if (train_set.empty()) throw Error(Error::Kind::empty_dataset, "empty training set");
  Network net(net_config, init_params(net_config, derive_seed(config.seed, 0)));
  Adam adam(net_config, config);
  Rng shuffle_rng(derive_seed(config.seed, 1));
  Rng dropout_rng(derive_seed(config.seed, 2));

  std::vector<std::size_t> order(train_set.size());
  std::vector<LabeledExample> batch;
  TrainResult result;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(train_set[order[i]]);
      auto lg = loss_and_grads(net, batch, &dropout_rng);
      if (!std::isfinite(lg.loss)) {
        throw Error(Error::Kind::diverged, "training diverged (non-finite loss) at epoch " +
                                               std::to_string(epoch));
      }
      adam.step(net.mutable_params(), lg.grads);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    const auto tm = evaluate(net, train_set);
    rec.train_loss = tm.mean_cross_entropy;
    rec.train_acc = tm.accuracy;
    if (!std::isfinite(rec.train_loss)) {
      throw Error(Error::Kind::diverged,
                  "training diverged (non-finite loss) at epoch " + std::to_string(epoch));
    }
    if (!val_set.empty()) {
      const auto vm = evaluate(net, val_set);
      rec.val_loss = vm.mean_cross_entropy;
      rec.val_acc = vm.accuracy;
    }
    if (on_epoch) on_epoch(rec);
    result.history.push_back(rec);
  }
  result.params = net.params();
  return result;
}

// ---------------------------------------------------------------------------
// Cross-validation

/// Fold index per example: each class is shuffled with
/// derive_seed(seed, class) and dealt round-robin into k folds.
inline std::vector<std::size_t> stratified_folds(std::span<const LabeledExample> examples,
                                                 std::size_t k, std::uint64_t seed) {
  if (k < 2) throw Error(Error::Kind::invalid_config, "k-fold needs k >= 2");
  if (examples.size() < k) throw Error(Error::Kind::too_few_examples, "fewer examples than folds");
  std::vector<std::size_t> labels;
  for (const auto& ex : examples) labels.push_back(ex.class_index);
  std::vector<std::size_t> fold(examples.size());
  for (auto& [cls, members] : eegio::group_by_class(labels)) {
    if (members.size() < k) {
      throw Error(Error::Kind::too_few_examples,
                  "class " + std::to_string(cls) + " has fewer examples than folds");
    }
    Rng rng(derive_seed(seed, cls));
    rng.shuffle(std::span<std::size_t>(members));
    for (std::size_t j = 0; j < members.size(); ++j) fold[members[j]] = j % k;
  }
  return fold;
}

struct FoldResult {
  Metrics train;
  Metrics val;
  std::vector<EpochRecord> history;
};

/// Fold i validates on part i and trains a freshly initialized network on
/// the rest with seed derive_seed(train seed, i + 1).
inline std::vector<FoldResult> cross_validate(std::span<const LabeledExample> examples,
                                              std::size_t k, const TrainConfig& train_config,
                                              const CnnConfig& net_config) {
  const auto fold = stratified_folds(examples, k, train_config.seed);
  std::vector<FoldResult> results;
  for (std::size_t i = 0; i < k; ++i) {
    std::vector<LabeledExample> tr, va;
    for (std::size_t j = 0; j < examples.size(); ++j) {
      (fold[j] == i ? va : tr).push_back(examples[j]);
    }
    TrainConfig tc = train_config;
    tc.seed = derive_seed(train_config.seed, i + 1);
    auto res = train(tr, tc, net_config, va);
    Network net(net_config, res.params);
    results.push_back({evaluate(net, tr), evaluate(net, va), std::move(res.history)});
  }
  return results;
}

// ---------------------------------------------------------------------------
// Persistence
//
// Model file (little-endian):
//   "SSVEPCNN" magic, u16 version = 1,
//   u32 input_len, u32 conv_filters, u32 kernel_size, u32 pool_size,
//   u32 hidden_units, u32 n_classes, f64 dropout_rate,
//   f64 weights: conv1_w, conv1_b, conv2_w, conv2_b, dense1_w, dense1_b,
//   dense2_w, dense2_b (shapes implied by the config).

inline constexpr std::string_view kModelMagic = "SSVEPCNN";
inline constexpr std::uint16_t kModelVersion = 1;

inline std::string encode_model(const CnnParams& params, const CnnConfig& config) {
  Network::check_shapes(config, params);
  std::string buf(kModelMagic);
  auto put = [&](auto v) {
    char bytes[sizeof(v)];
    std::memcpy(bytes, &v, sizeof(v));
    buf.append(bytes, sizeof(v));
  };
  put(kModelVersion);
  for (auto n : {config.input_len, config.conv_filters, config.kernel_size, config.pool_size,
                 config.hidden_units, config.n_classes}) {
    put(static_cast<std::uint32_t>(n));
  }
  put(config.dropout_rate);
  params.for_each([&](std::string_view, const std::vector<double>& t) {
    for (double v : t) put(v);
  });
  return buf;
}

struct Model {
  CnnParams params;
  CnnConfig config;
};

inline Model decode_model(std::string_view bytes) {
  using K = Error::Kind;
  if (bytes.size() < kModelMagic.size() || bytes.substr(0, kModelMagic.size()) != kModelMagic) {
    throw Error(K::bad_magic, "not a model file (bad magic)");
  }
  std::size_t pos = kModelMagic.size();
  auto get = [&]<typename T>(T& out) {
    if (bytes.size() - pos < sizeof(T)) throw Error(K::truncated, "truncated model file");
    std::memcpy(&out, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
  };
  std::uint16_t version = 0;
  get(version);
  if (version != kModelVersion) {
    throw Error(K::bad_version, "unsupported model version " + std::to_string(version));
  }
  Model m;
  for (std::size_t* field : {&m.config.input_len, &m.config.conv_filters, &m.config.kernel_size,
                             &m.config.pool_size, &m.config.hidden_units, &m.config.n_classes}) {
    std::uint32_t v = 0;
    get(v);
    *field = v;
  }
  get(m.config.dropout_rate);
  try {
    m.config.validate();
  } catch (const Error& e) {
    throw Error(K::shape_mismatch, std::string("model config inconsistent: ") + e.what());
  }
  m.params = CnnParams::zeros(m.config);
  const std::size_t needed = m.params.size() * sizeof(double);
  const std::size_t have = bytes.size() - pos;
  if (have < needed) throw Error(K::truncated, "truncated model file");
  if (have > needed) {
    throw Error(K::shape_mismatch, "model weights do not match the stored configuration");
  }
  m.params.for_each([&](std::string_view, std::vector<double>& t) {
    for (double& v : t) get(v);
  });
  return m;
}

inline void save_model(const CnnParams& params, const CnnConfig& config,
                       const std::filesystem::path& path) {
  const auto bytes = encode_model(params, config);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Error::Kind::io, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Error::Kind::io, "write failed: " + path.string());
}

inline Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Error::Kind::io, "cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_model(bytes);
}

}  // namespace ssvep::net
