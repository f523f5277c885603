#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "oracles.hpp"
#include "ssvep/dsp.hpp"
#include "ssvep/ssvepnet.hpp"
#include "ssvep/synth.hpp"

using namespace ssvep;
using net::Error;

namespace {

template <typename F>
Error::Kind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no net::Error thrown";
  return Error::Kind::io;
}

LabeledExample example(std::vector<double> v, std::size_t label) {
  LabeledExample e;
  e.features.values = std::move(v);
  e.class_index = label;
  return e;
}

std::vector<LabeledExample> random_batch(Rng& r, std::size_t n, std::size_t len) {
  std::vector<LabeledExample> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(len);
    for (auto& x : v) x = r.uniform();
    out.push_back(example(v, r.below(3)));
  }
  return out;
}

std::vector<double*> flat_view(net::CnnParams& p) {
  std::vector<double*> out;
  p.for_each([&](std::string_view, std::vector<double>& t) {
    for (auto& v : t) out.push_back(&v);
  });
  return out;
}

/// Noiseless synthetic examples, `per_class` windows per class.
std::vector<LabeledExample> noiseless_examples(std::size_t trials_per_class, std::uint64_t seed) {
  synth::SynthConfig t;
  t.snr_db = synth::kNoNoise;
  t.seed = seed;
  const std::vector<double> freqs{9.25, 11.25, 13.25};
  const auto rec = synth::generate_dataset(freqs, trials_per_class, t);
  return dsp::Pipeline({}, rec.fs_hz).preprocess_recording(rec);
}

}  // namespace

TEST(CnnConfig, FlattenLength) {
  net::CnnConfig c;
  EXPECT_EQ(c.flatten_len(), 112u);
  const auto p = net::init_params(c, 1);
  EXPECT_EQ(p.dense1_w.size(), 64u * 112u);
  EXPECT_EQ(p.conv1_w.size(), 8u * 3u);
  EXPECT_EQ(p.conv2_w.size(), 8u * 8u * 3u);
  EXPECT_EQ(p.dense2_w.size(), 3u * 64u);
  c.input_len = 12;
  EXPECT_EQ(c.flatten_len(), 32u);
  c.input_len = 5;
  EXPECT_EQ(kind_of([&] { c.validate(); }), Error::Kind::invalid_config);
}

TEST(Init, DeterministicHeNormalZeroBias) {
  net::CnnConfig c;
  const auto a = net::init_params(c, 5), b = net::init_params(c, 5), d = net::init_params(c, 6);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, d);
  for (auto* bias : {&a.conv1_b, &a.conv2_b, &a.dense1_b, &a.dense2_b})
    for (double v : *bias) EXPECT_EQ(v, 0.0);
  double s2 = 0;
  for (double v : a.dense1_w) s2 += v * v;
  EXPECT_NEAR(s2 / a.dense1_w.size(), 2.0 / 112.0, 0.1 * 2.0 / 112.0);
}

TEST(Forward, ZeroWeightsGiveBias) {
  net::CnnConfig c;
  const net::Network n(c, net::CnnParams::zeros(c));
  const auto logits = n.forward(std::vector<double>(33, 0.0));
  EXPECT_EQ(logits, (std::vector<double>{0, 0, 0}));
  const auto lg = net::loss_and_grads(n, std::vector<LabeledExample>{example(std::vector<double>(33, 0.3), 1)});
  EXPECT_NEAR(lg.loss, std::log(3.0), 1e-15);
}

// Tiny network worked out by hand:
//   x = 1..8; conv1 w=[.5,0,.5] b=-1 -> x_i (6 values 1..6)
//   conv2 w=[1,-1,1] b=0 -> a_i - a_{i+1} + a_{i+2} = 2,3,4,5
//   pool 2 -> [3,5]; dense1 [[1,1],[1,-1]] -> relu([8,-2]) = [8,0]
//   dense2 [[1,0],[0,1],[-1,2]] + [.5,0,0] -> [8.5, 0, -8]
TEST(Forward, HandComputedTrace) {
  net::CnnConfig c;
  c.input_len = 8;
  c.conv_filters = 1;
  c.hidden_units = 2;
  net::CnnParams p = net::CnnParams::zeros(c);
  p.conv1_w = {0.5, 0.0, 0.5};
  p.conv1_b = {-1.0};
  p.conv2_w = {1.0, -1.0, 1.0};
  p.conv2_b = {0.0};
  p.dense1_w = {1.0, 1.0, 1.0, -1.0};
  p.dense1_b = {0.0, 0.0};
  p.dense2_w = {1.0, 0.0, 0.0, 1.0, -1.0, 2.0};
  p.dense2_b = {0.5, 0.0, 0.0};
  const net::Network n(c, p);
  net::ForwardCache cache;
  const auto logits = n.forward(std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8}, nullptr, &cache);
  EXPECT_EQ(cache.conv1, (std::vector<double>{1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(cache.conv2, (std::vector<double>{2, 3, 4, 5}));
  EXPECT_EQ(cache.flat, (std::vector<double>{3, 5}));
  EXPECT_EQ(cache.hidden, (std::vector<double>{8, 0}));
  EXPECT_EQ(logits, (std::vector<double>{8.5, 0, -8}));
}

TEST(Forward, FlattenIsChannelMajor) {
  net::CnnConfig c;
  c.input_len = 8;
  c.conv_filters = 2;
  c.hidden_units = 4;
  net::CnnParams p = net::CnnParams::zeros(c);
  // conv1: filter0 passes x through its middle tap, filter1 is zero
  p.conv1_w = {0, 1, 0, 0, 0, 0};
  // conv2: g0 copies f0's middle tap, g1 copies it scaled by 10
  p.conv2_w = {0, 1, 0, 0, 0, 0, 0, 10, 0, 0, 0, 0};
  const net::Network n(c, p);
  net::ForwardCache cache;
  n.forward(std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8}, nullptr, &cache);
  // conv1 f0 = x[1..6] = 2..7; conv2 g0 = 3..6, g1 = 30..60; pooled: [4,6] and [40,60]
  EXPECT_EQ(cache.flat, (std::vector<double>{4, 6, 40, 60}));
}

TEST(Forward, EvalDeterministicAndLengthChecked) {
  net::CnnConfig c;
  const net::Network n(c, net::init_params(c, 3));
  Rng r(1);
  std::vector<double> x(33);
  for (auto& v : x) v = r.uniform();
  EXPECT_EQ(n.forward(x), n.forward(x));
  EXPECT_EQ(kind_of([&] { n.forward(std::vector<double>(32)); }), Error::Kind::length_mismatch);
}

TEST(Forward, DropoutZeroTrainEqualsEval) {
  net::CnnConfig c;
  c.dropout_rate = 0.0;
  const net::Network n(c, net::init_params(c, 3));
  Rng r(1), d(2);
  std::vector<double> x(33);
  for (auto& v : x) v = r.uniform();
  const auto a = n.forward(x), b = n.forward(x, &d);
  EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)), 0);
}

TEST(Forward, InvertedDropoutScalesSurvivors) {
  net::CnnConfig c;
  const net::Network n(c, net::init_params(c, 3));
  Rng r(1), d(2);
  std::vector<double> x(33);
  for (auto& v : x) v = r.uniform();
  net::ForwardCache cache;
  n.forward(x, &d, &cache);
  std::size_t dropped = 0;
  for (std::size_t i = 0; i < cache.conv2.size(); ++i) {
    const double s = cache.dropout_scale[i];
    EXPECT_TRUE(s == 0.0 || std::abs(s - 1.0 / 0.75) < 1e-15);
    EXPECT_EQ(cache.dropped[i], cache.conv2[i] * s);
    dropped += s == 0.0;
  }
  EXPECT_GT(dropped, 0u);
  EXPECT_LT(dropped, cache.conv2.size());
}

TEST(MaxPool, BruteForce) {
  Rng r(7);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> v(2 + r.below(40));
    for (auto& x : v) x = r.normal();
    const auto out = net::max_pool(v, 2);
    ASSERT_EQ(out.size(), v.size() / 2);
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], std::max(v[2 * i], v[2 * i + 1]));
  }
}

TEST(Softmax, SumsToOneShiftInvariant) {
  Rng r(8);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> z(3), zs(3);
    for (int i = 0; i < 3; ++i) z[i] = 10 * r.normal();
    const double shift = 100 * r.normal();
    for (int i = 0; i < 3; ++i) zs[i] = z[i] + shift;
    const auto p = net::softmax(z), ps = net::softmax(zs);
    EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-12);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(p[i], ps[i], 1e-12);
  }
}

TEST(Argmax, TiesGoLow) {
  EXPECT_EQ(net::argmax(std::vector<double>{1, 1, 1}), 0u);
  EXPECT_EQ(net::argmax(std::vector<double>{0, 2, 2}), 1u);
}

TEST(Gradients, MatchCentralDifferences) {
  net::CnnConfig c;
  c.input_len = 12;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    net::Network n(c, net::init_params(c, seed));
    Rng r(seed + 100);
    const auto batch = random_batch(r, 4, 12);
    const auto analytic = net::loss_and_grads(n, batch);
    auto grads = analytic.grads;
    auto params = flat_view(n.mutable_params());
    auto g = flat_view(grads);
    const double h = 1e-5;
    double worst = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double orig = *params[i];
      *params[i] = orig + h;
      const double lp = net::loss_and_grads(n, batch).loss;
      *params[i] = orig - h;
      const double lm = net::loss_and_grads(n, batch).loss;
      *params[i] = orig;
      const double fd = (lp - lm) / (2 * h);
      worst = std::max(worst, std::abs(*g[i] - fd) / std::max(1.0, std::abs(*g[i])));
    }
    EXPECT_LT(worst, 1e-4) << "seed " << seed;
  }
}

TEST(Gradients, DuplicateExampleSameGradient) {
  net::CnnConfig c;
  const net::Network n(c, net::init_params(c, 4));
  Rng r(4);
  const auto one = random_batch(r, 1, 33);
  const std::vector<LabeledExample> two{one[0], one[0]};
  const auto a = net::loss_and_grads(n, one), b = net::loss_and_grads(n, two);
  EXPECT_NEAR(a.loss, b.loss, 1e-14);
  auto ga = a.grads, gb = b.grads;
  const auto va = flat_view(ga), vb = flat_view(gb);
  for (std::size_t i = 0; i < va.size(); ++i) EXPECT_NEAR(*va[i], *vb[i], 1e-14);
}

TEST(Evaluate, ConfusionInvariants) {
  net::CnnConfig c;
  const net::Network zero(c, net::CnnParams::zeros(c));
  Rng r(9);
  std::vector<LabeledExample> data;
  for (int i = 0; i < 30; ++i) {
    std::vector<double> v(33);
    for (auto& x : v) x = r.uniform();
    data.push_back(example(v, i % 3));
  }
  const auto m = net::evaluate(zero, data);
  EXPECT_NEAR(m.accuracy, 1.0 / 3.0, 1e-12);  // constant model predicts class 0
  EXPECT_EQ(m.total(), 30u);
  for (std::size_t t = 0; t < 3; ++t) {
    std::size_t row = 0;
    for (auto v : m.confusion[t]) row += v;
    EXPECT_EQ(row, 10u);
  }
  const auto one = net::evaluate(zero, std::vector<LabeledExample>{data[0]});
  EXPECT_EQ(one.accuracy, 1.0);
  EXPECT_EQ(one.confusion[0][0], 1u);
  EXPECT_EQ(kind_of([&] { net::evaluate(zero, {}); }), Error::Kind::empty_dataset);
}

TEST(Train, SeparableToySet) {
  auto all = noiseless_examples(2, 1);
  // 20 per class: the first 20 windows of each class
  std::vector<LabeledExample> set;
  std::size_t count[3] = {};
  for (const auto& e : all)
    if (count[e.class_index]++ < 20) set.push_back(e);
  ASSERT_EQ(set.size(), 60u);
  net::TrainConfig tc;
  tc.epochs = 30;
  const auto res = net::train(set, tc, net::CnnConfig{});
  ASSERT_EQ(res.history.size(), 30u);
  EXPECT_EQ(res.history.back().train_acc, 1.0);
}

TEST(Train, DeterministicAndZeroLearningRate) {
  Rng r(10);
  const auto set = random_batch(r, 50, 33);
  net::TrainConfig tc;
  tc.epochs = 3;
  const auto a = net::train(set, tc, net::CnnConfig{});
  const auto b = net::train(set, tc, net::CnnConfig{});
  EXPECT_EQ(net::encode_model(a.params, {}), net::encode_model(b.params, {}));
  tc.learning_rate = 0.0;
  const auto z = net::train(set, tc, net::CnnConfig{});
  EXPECT_EQ(z.params, net::init_params(net::CnnConfig{}, derive_seed(tc.seed, 0)));
  for (const auto& h : z.history) EXPECT_EQ(h.train_loss, z.history.front().train_loss);
}

TEST(Train, DivergenceReportsEpoch) {
  Rng r(11);
  const auto set = random_batch(r, 40, 33);
  net::TrainConfig tc;
  tc.learning_rate = 1e300;
  tc.epochs = 5;
  try {
    net::train(set, tc, net::CnnConfig{});
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), Error::Kind::diverged);
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
}

TEST(CrossValidate, FoldsPartitionAndAreStratified) {
  Rng r(12);
  auto set = random_batch(r, 100, 33);
  for (std::size_t i = 0; i < set.size(); ++i) set[i].class_index = i % 2;
  const auto fold = net::stratified_folds(set, 5, 3);
  std::size_t sizes[5] = {};
  for (auto f : fold) ++sizes[f];
  for (auto s : sizes) EXPECT_EQ(s, 20u);
  EXPECT_EQ(fold, net::stratified_folds(set, 5, 3));
  EXPECT_EQ(kind_of([&] { net::stratified_folds(std::span(set).first(4), 5, 1); }), Error::Kind::too_few_examples);
}

TEST(CrossValidate, NoiselessFoldsPerfect) {
  const auto set = noiseless_examples(2, 2);
  net::TrainConfig tc;
  tc.epochs = 15;
  const auto folds = net::cross_validate(set, 5, tc, net::CnnConfig{});
  ASSERT_EQ(folds.size(), 5u);
  for (const auto& f : folds) {
    EXPECT_EQ(f.val.accuracy, 1.0);
    EXPECT_EQ(f.history.size(), 15u);
    EXPECT_TRUE(f.history.back().val_acc.has_value());
  }
}

TEST(ModelFile, RoundTripBitwise) {
  oracle::TempDir dir;
  net::CnnConfig c;
  const auto p = net::init_params(c, 21);
  net::save_model(p, c, dir / "m.bin");
  const auto m = net::load_model(dir / "m.bin");
  EXPECT_EQ(m.config, c);
  EXPECT_EQ(net::encode_model(m.params, m.config), net::encode_model(p, c));
  EXPECT_EQ(std::filesystem::file_size(dir / "m.bin"), 8u + 2 + 6 * 4 + 8 + 8 * p.size());
}

TEST(ModelFile, Errors) {
  net::CnnConfig c;
  const auto bytes = net::encode_model(net::init_params(c, 1), c);
  auto magic = bytes;
  magic[3] = 'x';
  EXPECT_EQ(kind_of([&] { net::decode_model(magic); }), Error::Kind::bad_magic);
  auto version = bytes;
  version[8] = 2;
  EXPECT_EQ(kind_of([&] { net::decode_model(version); }), Error::Kind::bad_version);
  EXPECT_EQ(kind_of([&] { net::decode_model(bytes.substr(0, bytes.size() - 8)); }), Error::Kind::truncated);
  // input_len 34 in the header: the weight block no longer matches
  auto shape = bytes;
  const std::uint32_t len34 = 34;
  std::memcpy(shape.data() + 10, &len34, 4);
  const auto k = kind_of([&] { net::decode_model(shape); });
  EXPECT_TRUE(k == Error::Kind::shape_mismatch || k == Error::Kind::truncated);
  EXPECT_EQ(kind_of([] { net::load_model("/nonexistent/model.bin"); }), Error::Kind::io);
}
