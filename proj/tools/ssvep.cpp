// ssvep: data generation, training, evaluation, cross-validation,
// headless closed-loop simulation and the live command service.
//
// Exit codes: 0 success, 2 usage error, 1 runtime failure.

#include <pthread.h>
#include <signal.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ssvep/dsp.hpp"
#include "ssvep/eegio.hpp"
#include "ssvep/loopnet/closed_loop.hpp"
#include "ssvep/loopnet/robot.hpp"
#include "ssvep/loopnet/server.hpp"
#include "ssvep/loopnet/session.hpp"
#include "ssvep/mazebot.hpp"
#include "ssvep/ssvepnet.hpp"
#include "ssvep/synth.hpp"

namespace fs = std::filesystem;
using namespace ssvep;

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::optional<double> parse_db(const std::string& s) {
  if (s == "inf" || s == "+inf" || s == "off") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::string db_validator(const std::string& s) {
  return parse_db(s) ? std::string() : "expected a number in dB, 'inf' (noise off) or '-inf'";
}

// ---------------------------------------------------------------------------
// Shared option groups

struct PipelineOpts {
  int window_seconds = 3;
  std::size_t offset = 16;
  double band_lo = 8.0;
  double band_hi = 16.0;
  std::size_t nfft = 1024;
  unsigned threads = 1;

  void add(CLI::App* app) {
    app->add_option("--window-seconds", window_seconds, "Analysis window length in seconds")
        ->check(CLI::IsMember({1, 2, 3}))
        ->envname("SSVEP_WINDOW_SECONDS")
        ->capture_default_str();
    app->add_option("--offset", offset, "Stride between window starts, samples")
        ->check(CLI::PositiveNumber)
        ->envname("SSVEP_OFFSET")
        ->capture_default_str();
    app->add_option("--band-lo", band_lo, "Band lower edge, Hz")->envname("SSVEP_BAND_LO")->capture_default_str();
    app->add_option("--band-hi", band_hi, "Band upper edge, Hz")->envname("SSVEP_BAND_HI")->capture_default_str();
    app->add_option("--nfft", nfft, "FFT length (power of two)")->envname("SSVEP_NFFT")->capture_default_str();
    app->add_option("--threads", threads, "Worker threads for window preprocessing")
        ->check(CLI::Range(1u, 256u))
        ->envname("SSVEP_THREADS")
        ->capture_default_str();
  }

  dsp::PipelineConfig config(std::uint32_t fs_hz) const {
    dsp::PipelineConfig pc;
    pc.window.window_len = static_cast<std::size_t>(window_seconds) * fs_hz;
    pc.window.offset = offset;
    pc.band_lo = band_lo;
    pc.band_hi = band_hi;
    pc.n_fft = nfft;
    return pc;
  }
};

struct TrainOpts {
  double lr = 1e-3;
  std::size_t batch = 32;
  std::size_t epochs = 50;

  void add(CLI::App* app) {
    app->add_option("--lr", lr, "Adam learning rate")->envname("SSVEP_LR")->capture_default_str();
    app->add_option("--batch", batch, "Mini-batch size")
        ->check(CLI::PositiveNumber)
        ->envname("SSVEP_BATCH")
        ->capture_default_str();
    app->add_option("--epochs", epochs, "Training epochs")
        ->check(CLI::PositiveNumber)
        ->envname("SSVEP_EPOCHS")
        ->capture_default_str();
  }

  net::TrainConfig config(std::uint64_t seed) const {
    net::TrainConfig tc;
    tc.learning_rate = lr;
    tc.batch_size = batch;
    tc.epochs = epochs;
    tc.seed = seed;
    return tc;
  }
};

void add_seed(CLI::App* app, std::uint64_t& seed) {
  app->add_option("--seed", seed, "Seed for every random choice")->envname("SSVEP_SEED")->capture_default_str();
}

void add_snr(CLI::App* app, std::string& snr, const std::string& help) {
  app->add_option("--snr-db", snr, help)->check(CLI::Validator(db_validator, "DB"))->envname("SSVEP_SNR_DB")->capture_default_str();
}

void add_mask(CLI::App* app, bool& mask) {
  app->add_option("--mask-blocked", mask, "Exclude closed directions before argmax")
      ->envname("SSVEP_MASK_BLOCKED")
      ->capture_default_str();
}

// ---------------------------------------------------------------------------
// Reports

void write_history_csv(const fs::path& path, const std::vector<net::EpochRecord>& history) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,train_loss,train_acc,val_loss,val_acc\n";
  for (const auto& r : history) {
    out << r.epoch << ',' << fmt("%.10g", r.train_loss) << ',' << fmt("%.10g", r.train_acc) << ','
        << (r.val_loss ? fmt("%.10g", *r.val_loss) : "") << ',' << (r.val_acc ? fmt("%.10g", *r.val_acc) : "")
        << '\n';
  }
}

std::string metrics_table(const std::string& title, const net::Metrics& m) {
  std::ostringstream os;
  os << title << "\n";
  os << "  examples       " << m.total() << "\n";
  os << "  accuracy       " << fmt("%.6f", m.accuracy) << "\n";
  os << "  cross-entropy  " << fmt("%.6f", m.mean_cross_entropy) << "\n";
  os << "  confusion (rows true, cols predicted)\n";
  for (std::size_t i = 0; i < m.confusion.size(); ++i) {
    os << "    " << i << ":";
    for (auto c : m.confusion[i]) os << ' ' << fmt("%6.0f", static_cast<double>(c));
    os << "\n";
  }
  return os.str();
}

std::string metrics_csv(const std::string& set, const net::Metrics& m) {
  std::ostringstream os;
  os << set << ",accuracy," << fmt("%.10g", m.accuracy) << "\n";
  os << set << ",cross_entropy," << fmt("%.10g", m.mean_cross_entropy) << "\n";
  os << set << ",examples," << m.total() << "\n";
  for (std::size_t i = 0; i < m.confusion.size(); ++i) {
    for (std::size_t j = 0; j < m.confusion[i].size(); ++j) {
      os << set << ",confusion_" << i << '_' << j << ',' << m.confusion[i][j] << "\n";
    }
  }
  return os.str();
}

void emit_metrics_csv(const std::string& csv, const std::string& path) {
  const std::string full = "set,metric,value\n" + csv;
  if (path.empty()) {
    std::cout << "\n" << full;
  } else {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << full;
  }
}

struct LoadedData {
  eegio::EegRecording rec;
  dsp::PipelineConfig pc;
  std::vector<LabeledExample> examples;
};

LoadedData load_examples(const std::string& data_path, const PipelineOpts& po) {
  LoadedData d;
  d.rec = eegio::read_recording(data_path);
  d.pc = po.config(d.rec.fs_hz);
  const dsp::Pipeline pipeline(d.pc, d.rec.fs_hz);
  d.examples = pipeline.preprocess_recording(d.rec, po.threads);
  return d;
}

maze::Maze maze_from(const std::string& path, int size, std::uint64_t seed) {
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read maze " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return maze::load_maze(ss.str());
  }
  return maze::generate_maze(size, size, seed);
}

net::Model model_or_quick(const std::string& model_path, const dsp::PipelineConfig& pc, std::uint64_t seed) {
  if (!model_path.empty()) return net::load_model(model_path);
  std::cerr << "no --model given; training a small model on synthetic data (0 dB, 3x50 trials, 15 epochs)\n";
  loopnet::QuickModelConfig q;
  q.seed = seed;
  return loopnet::train_quick_model(pc, q);
}

std::shared_ptr<const loopnet::Classifier> make_classifier(const net::Model& model, const dsp::PipelineConfig& pc,
                                                           double fs_hz) {
  return std::make_shared<const loopnet::Classifier>(dsp::Pipeline(pc, fs_hz),
                                                     net::Network(model.config, model.params));
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SSVEP maze-robot toolkit: synthetic data, feature pipeline, CNN, closed loop"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  std::uint64_t seed = 1;
  PipelineOpts po;
  TrainOpts to;
  std::string data_path, model_path, maze_path, trace_path, history_path, metrics_path;
  std::string snr = "0";
  bool mask_blocked = true;
  double train_fraction = 0.8;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic recording");
  std::size_t trials_per_class = 150;
  double duration_s = 4.0;
  gen->add_option("--data", data_path, "Output recording path")->required()->envname("SSVEP_DATA");
  gen->add_option("--trials-per-class", trials_per_class, "Trials per stimulus frequency")
      ->check(CLI::PositiveNumber)
      ->envname("SSVEP_TRIALS_PER_CLASS")
      ->capture_default_str();
  gen->add_option("--duration-s", duration_s, "Trial length in seconds")
      ->check(CLI::PositiveNumber)
      ->envname("SSVEP_DURATION_S")
      ->capture_default_str();
  add_snr(gen, snr, "In-band SNR of each trial; 'inf' disables noise");
  add_seed(gen, seed);

  // train
  auto* tr = app.add_subcommand("train", "Train the CNN on a recording (80/20 split)");
  tr->add_option("--data", data_path, "Recording")->required()->check(CLI::ExistingFile)->envname("SSVEP_DATA");
  tr->add_option("--model", model_path, "Output model path")->required()->envname("SSVEP_MODEL");
  tr->add_option("--history", history_path, "Per-epoch CSV")->envname("SSVEP_HISTORY");
  tr->add_option("--metrics", metrics_path, "Metrics CSV path (default: stdout)")->envname("SSVEP_METRICS");
  tr->add_option("--train-fraction", train_fraction, "Training share of the split")
      ->check(CLI::Range(0.0, 1.0))
      ->envname("SSVEP_TRAIN_FRACTION")
      ->capture_default_str();
  po.add(tr);
  to.add(tr);
  add_seed(tr, seed);

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a model on a recording");
  std::string eval_set = "test";
  ev->add_option("--data", data_path, "Recording")->required()->check(CLI::ExistingFile)->envname("SSVEP_DATA");
  ev->add_option("--model", model_path, "Model file")->required()->check(CLI::ExistingFile)->envname("SSVEP_MODEL");
  ev->add_option("--set", eval_set, "Which examples: the held-out 'test' split or 'all'")
      ->check(CLI::IsMember({"test", "all"}))
      ->envname("SSVEP_SET")
      ->capture_default_str();
  ev->add_option("--metrics", metrics_path, "Metrics CSV path (default: stdout)")->envname("SSVEP_METRICS");
  ev->add_option("--train-fraction", train_fraction, "Training share of the split")
      ->check(CLI::Range(0.0, 1.0))
      ->envname("SSVEP_TRAIN_FRACTION")
      ->capture_default_str();
  po.add(ev);
  add_seed(ev, seed);

  // cv
  auto* cv = app.add_subcommand("cv", "Stratified k-fold cross-validation on the training split");
  std::size_t folds = 5;
  std::string history_dir;
  cv->add_option("--data", data_path, "Recording")->required()->check(CLI::ExistingFile)->envname("SSVEP_DATA");
  cv->add_option("--folds", folds, "Number of folds")->check(CLI::Range(2, 100))->envname("SSVEP_FOLDS")->capture_default_str();
  cv->add_option("--history-dir", history_dir, "Directory for fold_<i>.csv curves")->envname("SSVEP_HISTORY_DIR");
  cv->add_option("--metrics", metrics_path, "Metrics CSV path (default: stdout)")->envname("SSVEP_METRICS");
  cv->add_option("--train-fraction", train_fraction, "Share of the data used for CV (the rest is held out)")
      ->check(CLI::Range(0.0, 1.0))
      ->envname("SSVEP_TRAIN_FRACTION")
      ->capture_default_str();
  po.add(cv);
  to.add(cv);
  add_seed(cv, seed);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Headless closed loop with a scripted BFS operator");
  int maze_size = 10;
  long stimulus_ms = 50;
  long poll_ms = 10;
  std::string sim_snr = "inf";
  sim->add_option("--maze", maze_path, "Maze file (default: generated)")->check(CLI::ExistingFile)->envname("SSVEP_MAZE");
  sim->add_option("--maze-size", maze_size, "Side of the generated maze")
      ->check(CLI::Range(2, 200))
      ->envname("SSVEP_MAZE_SIZE")
      ->capture_default_str();
  sim->add_option("--model", model_path, "Model file (default: train a small one)")
      ->check(CLI::ExistingFile)
      ->envname("SSVEP_MODEL");
  sim->add_option("--trace", trace_path, "Trace JSON output")->envname("SSVEP_TRACE");
  sim->add_option("--stimulus-ms", stimulus_ms, "Stimulus phase duration")
      ->check(CLI::Range(0L, 60000L))
      ->envname("SSVEP_STIMULUS_MS")
      ->capture_default_str();
  sim->add_option("--poll-ms", poll_ms, "Robot poll interval")
      ->check(CLI::Range(1L, 10000L))
      ->envname("SSVEP_POLL_MS")
      ->capture_default_str();
  add_snr(sim, sim_snr, "Operator signal SNR; 'inf' disables noise");
  add_mask(sim, mask_blocked);
  po.add(sim);
  add_seed(sim, seed);

  // serve
  auto* srv = app.add_subcommand("serve", "Live command service with the operator console stream");
  std::string host = "127.0.0.1";
  std::uint16_t port_robot = 7071, port_console = 7072;
  std::string serve_snr = "inf";
  std::string replay_path;
  bool no_robot = false;
  long serve_poll_ms = 250;
  srv->add_option("--host", host, "Listen address")->envname("SSVEP_HOST")->capture_default_str();
  srv->add_option("--port-robot", port_robot, "Robot protocol port")->envname("SSVEP_PORT_ROBOT")->capture_default_str();
  srv->add_option("--port-console", port_console, "Console stream port")->envname("SSVEP_PORT_CONSOLE")->capture_default_str();
  srv->add_option("--model", model_path, "Model file (default: train a small one)")
      ->check(CLI::ExistingFile)
      ->envname("SSVEP_MODEL");
  srv->add_option("--replay", replay_path, "Serve trials from a recording instead of the operator synth")
      ->check(CLI::ExistingFile)
      ->envname("SSVEP_REPLAY");
  srv->add_option("--maze", maze_path, "Maze for the in-process robot (default: generated)")
      ->check(CLI::ExistingFile)
      ->envname("SSVEP_MAZE");
  srv->add_option("--maze-size", maze_size, "Side of the generated maze")
      ->check(CLI::Range(2, 200))
      ->envname("SSVEP_MAZE_SIZE")
      ->capture_default_str();
  srv->add_flag("--no-robot", no_robot, "Do not run the in-process robot; wait for an external one")->envname("SSVEP_NO_ROBOT");
  srv->add_option("--poll-ms", serve_poll_ms, "In-process robot poll interval")
      ->check(CLI::Range(1L, 10000L))
      ->envname("SSVEP_POLL_MS")
      ->capture_default_str();
  srv->add_option("--stimulus-ms", stimulus_ms, "Stimulus phase duration (default: the window length)")
      ->check(CLI::Range(0L, 60000L))
      ->envname("SSVEP_STIMULUS_MS");
  add_snr(srv, serve_snr, "Operator signal SNR; 'inf' disables noise");
  add_mask(srv, mask_blocked);
  po.add(srv);
  add_seed(srv, seed);

  // robot
  auto* rob = app.add_subcommand("robot", "Robot client against a running service");
  std::string robot_host = "127.0.0.1";
  long robot_poll_ms = 250;
  int retries = 3;
  rob->add_option("--host", robot_host, "Service address")->envname("SSVEP_HOST")->capture_default_str();
  rob->add_option("--port-robot", port_robot, "Robot protocol port")->envname("SSVEP_PORT_ROBOT")->capture_default_str();
  rob->add_option("--maze", maze_path, "Maze file (default: generated)")->check(CLI::ExistingFile)->envname("SSVEP_MAZE");
  rob->add_option("--maze-size", maze_size, "Side of the generated maze")
      ->check(CLI::Range(2, 200))
      ->envname("SSVEP_MAZE_SIZE")
      ->capture_default_str();
  rob->add_option("--poll-ms", robot_poll_ms, "Poll interval")
      ->check(CLI::Range(1L, 10000L))
      ->envname("SSVEP_POLL_MS")
      ->capture_default_str();
  rob->add_option("--retries", retries, "Reconnect attempts before aborting")
      ->check(CLI::Range(0, 100))
      ->envname("SSVEP_RETRIES")
      ->capture_default_str();
  rob->add_option("--trace", trace_path, "Trace JSON output")->envname("SSVEP_TRACE");
  add_seed(rob, seed);

  // filter-coeffs
  auto* fc = app.add_subcommand("filter-coeffs", "Print band-pass SOS coefficients");
  double fs_hz = 256.0;
  int order = 4;
  fc->add_option("--fs", fs_hz, "Sampling rate, Hz")->envname("SSVEP_FS")->capture_default_str();
  fc->add_option("--order", order, "Filter order")->check(CLI::IsMember({2, 4, 8}))->envname("SSVEP_ORDER")->capture_default_str();
  fc->add_option("--band-lo", po.band_lo, "Band lower edge, Hz")->envname("SSVEP_BAND_LO")->capture_default_str();
  fc->add_option("--band-hi", po.band_hi, "Band upper edge, Hz")->envname("SSVEP_BAND_HI")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      synth::SynthConfig t;
      t.snr_db = *parse_db(snr);
      t.duration_s = duration_s;
      t.seed = seed;
      const dsp::PipelineConfig defaults;
      const auto rec = synth::generate_dataset(defaults.class_freqs, trials_per_class, t);
      eegio::write_recording(rec, data_path);
      std::cout << "wrote " << data_path << ": " << rec.trials.size() << " trials, " << rec.n_samples()
                << " samples at " << rec.fs_hz << " Hz\n";
      return 0;
    }

    if (*tr) {
      const auto d = load_examples(data_path, po);
      const auto split = eegio::split_dataset(d.examples, train_fraction, seed);
      net::CnnConfig nc;
      nc.input_len = dsp::feature_length(d.rec.fs_hz, d.pc.n_fft, d.pc.band_lo, d.pc.band_hi);
      nc.n_classes = d.pc.class_freqs.size();
      std::cout << d.examples.size() << " examples (" << split.train.size() << " train / " << split.test.size()
                << " test), " << nc.input_len << " bins\n";
      const auto res = net::train(split.train, to.config(seed), nc, split.test, [](const net::EpochRecord& r) {
        std::cerr << "epoch " << r.epoch << " loss " << fmt("%.4f", r.train_loss) << " acc "
                  << fmt("%.4f", r.train_acc) << " val_acc " << fmt("%.4f", r.val_acc.value_or(0.0)) << "\n";
      });
      net::save_model(res.params, nc, model_path);
      if (!history_path.empty()) write_history_csv(history_path, res.history);
      const net::Network n(nc, res.params);
      const auto mtr = net::evaluate(n, split.train);
      const auto mte = net::evaluate(n, split.test);
      std::cout << metrics_table("train", mtr) << metrics_table("test", mte);
      emit_metrics_csv(metrics_csv("train", mtr) + metrics_csv("test", mte), metrics_path);
      std::cout << "model written to " << model_path << "\n";
      return 0;
    }

    if (*ev) {
      const auto model = net::load_model(model_path);
      const auto d = load_examples(data_path, po);
      const auto bins = dsp::feature_length(d.rec.fs_hz, d.pc.n_fft, d.pc.band_lo, d.pc.band_hi);
      if (bins != model.config.input_len) {
        throw net::Error(net::Error::Kind::shape_mismatch,
                         "shape mismatch: model expects input_len " + std::to_string(model.config.input_len) +
                             " but the pipeline produces " + std::to_string(bins) + " bins");
      }
      std::vector<LabeledExample> set;
      if (eval_set == "all") {
        set = d.examples;
      } else {
        set = eegio::split_dataset(d.examples, train_fraction, seed).test;
      }
      const auto m = net::evaluate(net::Network(model.config, model.params), set);
      std::cout << metrics_table(eval_set, m);
      emit_metrics_csv(metrics_csv(eval_set, m), metrics_path);
      return 0;
    }

    if (*cv) {
      const auto d = load_examples(data_path, po);
      const auto pool = eegio::split_dataset(d.examples, train_fraction, seed).train;
      net::CnnConfig nc;
      nc.input_len = dsp::feature_length(d.rec.fs_hz, d.pc.n_fft, d.pc.band_lo, d.pc.band_hi);
      nc.n_classes = d.pc.class_freqs.size();
      std::cout << folds << "-fold CV over " << pool.size() << " training examples\n";
      const auto results = net::cross_validate(pool, folds, to.config(seed), nc);
      if (!history_dir.empty()) fs::create_directories(history_dir);
      std::string csv;
      std::cout << "fold  train_acc  val_acc\n";
      double sum = 0.0;
      for (std::size_t i = 0; i < results.size(); ++i) {
        const auto& r = results[i];
        std::cout << "  " << i << "   " << fmt("%.6f", r.train.accuracy) << "   " << fmt("%.6f", r.val.accuracy) << "\n";
        sum += r.val.accuracy;
        csv += metrics_csv("fold" + std::to_string(i) + "_train", r.train);
        csv += metrics_csv("fold" + std::to_string(i) + "_val", r.val);
        if (!history_dir.empty()) {
          write_history_csv(fs::path(history_dir) / ("fold_" + std::to_string(i) + ".csv"), r.history);
        }
      }
      std::cout << "mean val_acc " << fmt("%.6f", sum / static_cast<double>(results.size())) << "\n";
      emit_metrics_csv(csv, metrics_path);
      return 0;
    }

    if (*sim) {
      const auto m = maze_from(maze_path, maze_size, seed);
      const auto pc = po.config(256);
      const auto model = model_or_quick(model_path, pc, seed);
      loopnet::SimConfig sc;
      sc.source.snr_db = *parse_db(sim_snr);
      sc.source.seed = seed;
      sc.service.stimulus = std::chrono::milliseconds(stimulus_ms);
      sc.service.mask_blocked = mask_blocked;
      sc.poll_interval = std::chrono::milliseconds(poll_ms);
      const auto r = loopnet::run_simulation(m, make_classifier(model, pc, 256), sc);
      if (!trace_path.empty()) {
        auto j = r.trace.to_json();
        j["summary"] = r.summary_json();
        write_text(trace_path, j.dump(2) + "\n");
      }
      std::cout << "finished          " << (r.trace.finished ? "yes" : "no") << "\n"
                << "junctions         " << r.junctions << "\n"
                << "command accuracy  " << fmt("%.6f", r.command_accuracy()) << "\n"
                << "rejected          " << r.rejected << "\n"
                << "steps             " << r.trace.steps << "\n"
                << "moves             " << r.trace.moves << "\n"
                << "shortest path     " << r.shortest_path << "\n"
                << "wall time (s)     " << fmt("%.3f", r.wall_s) << "\n";
      if (r.trace.aborted) {
        std::cerr << "aborted: " << r.trace.abort_reason << "\n";
        return 1;
      }
      return 0;
    }

    if (*srv) {
      // Signals are taken synchronously by the main thread only.
      sigset_t sigs;
      sigemptyset(&sigs);
      sigaddset(&sigs, SIGINT);
      sigaddset(&sigs, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &sigs, nullptr);

      const auto pc = po.config(256);
      const auto model = model_or_quick(model_path, pc, seed);
      const auto classifier = make_classifier(model, pc, 256);
      std::shared_ptr<loopnet::SignalSource> source;
      std::shared_ptr<loopnet::OperatorSynthSource> operator_source;
      if (!replay_path.empty()) {
        source = loopnet::ReplaySource::from_file(replay_path, pc.channel);
      } else {
        synth::SynthConfig t;
        t.snr_db = *parse_db(serve_snr);
        t.seed = seed;
        operator_source = std::make_shared<loopnet::OperatorSynthSource>(pc.class_freqs, t);
        source = operator_source;
      }
      loopnet::ServiceConfig svc;
      svc.stimulus = srv->count("--stimulus-ms") ? std::chrono::milliseconds(stimulus_ms)
                                                  : std::chrono::milliseconds(1000L * po.window_seconds);
      svc.mask_blocked = mask_blocked;
      loopnet::CommandService service(classifier, source, svc);
      loopnet::StatusHub hub;
      loopnet::RobotServer robot_server(service, host, port_robot);
      loopnet::ConsoleServer console(service, hub, operator_source.get(), host, port_console);
      std::cout << "robot protocol on " << host << ":" << robot_server.port() << "\n"
                << "console stream on " << host << ":" << console.port() << "\n"
                << "stimulus " << svc.stimulus.count() << " ms, press Ctrl-C to stop" << std::endl;

      std::optional<maze::Maze> m;
      std::jthread robot_thread;
      if (!no_robot) {
        m = maze_from(maze_path, maze_size, seed);
        hub.set_maze(*m);
        robot_thread = std::jthread([&] {
          loopnet::RobotClientConfig rc;
          rc.host = host == "0.0.0.0" ? "127.0.0.1" : host;
          rc.port = robot_server.port();
          rc.poll_interval = std::chrono::milliseconds(serve_poll_ms);
          rc.max_announce_attempts = std::numeric_limits<int>::max();
          loopnet::RobotHooks hooks;
          hooks.on_update = [&](const maze::Robot& r) { hub.set_pose(r.pose, maze::state_name(r.state)); };
          const auto trace = loopnet::RobotClient(*m, rc, hooks).run();
          std::cout << (trace.finished ? "robot reached the exit" : "robot stopped: " + trace.abort_reason) << std::endl;
        });
      }

      int sig = 0;
      sigwait(&sigs, &sig);
      std::cout << "shutting down" << std::endl;
      console.stop();
      robot_server.stop();
      service.stop();
      if (robot_thread.joinable()) robot_thread.join();
      return 0;
    }

    if (*rob) {
      const auto m = maze_from(maze_path, maze_size, seed);
      loopnet::RobotClientConfig rc;
      rc.host = robot_host;
      rc.port = port_robot;
      rc.poll_interval = std::chrono::milliseconds(robot_poll_ms);
      rc.max_retries = retries;
      const auto trace = loopnet::RobotClient(m, rc).run();
      if (!trace_path.empty()) write_text(trace_path, trace.to_json().dump(2) + "\n");
      std::cout << "finished " << (trace.finished ? "yes" : "no") << ", steps " << trace.steps << ", moves "
                << trace.moves << ", commands " << trace.commands.size() << "\n";
      if (!trace.finished) {
        std::cerr << "aborted: " << trace.abort_reason << "\n";
        return 1;
      }
      return 0;
    }

    if (*fc) {
      const auto f = dsp::design_bandpass(fs_hz, po.band_lo, po.band_hi, order);
      std::printf("# fs=%.17g f_lo=%.17g f_hi=%.17g order=%d\n# b0 b1 b2 a1 a2\n", fs_hz, po.band_lo, po.band_hi, order);
      for (const auto& s : f.sections) {
        std::printf("%.17g %.17g %.17g %.17g %.17g\n", s.b0, s.b1, s.b2, s.a1, s.a2);
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
