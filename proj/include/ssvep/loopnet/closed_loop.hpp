#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include <json.hpp>

#include "ssvep/dsp.hpp"
#include "ssvep/eegio.hpp"
#include "ssvep/loopnet/robot.hpp"
#include "ssvep/loopnet/server.hpp"
#include "ssvep/loopnet/session.hpp"
#include "ssvep/mazebot.hpp"
#include "ssvep/ssvepnet.hpp"
#include "ssvep/synth.hpp"

namespace ssvep::loopnet {

/// Headless closed loop: command service + robot server on an ephemeral
/// loopback port, a robot client, and a scripted BFS operator that selects
/// the target matching its intent before every announcement.
struct SimConfig {
  synth::SynthConfig source{};  // snr_db, seed; stim_freq/duration are set per window
  ServiceConfig service{std::chrono::milliseconds(50), true};
  std::chrono::milliseconds poll_interval{10};
  std::size_t step_limit = 0;
};

struct SimResult {
  SessionTrace trace;
  std::size_t junctions = 0;
  std::size_t correct = 0;
  std::size_t rejected = 0;
  int shortest_path = 0;
  double wall_s = 0.0;

  double command_accuracy() const {
    return junctions == 0 ? 1.0 : static_cast<double>(correct) / static_cast<double>(junctions);
  }

  nlohmann::json summary_json() const {
    return {{"finished", trace.finished},
            {"aborted", trace.aborted},
            {"abort_reason", trace.abort_reason},
            {"junctions", junctions},
            {"correct", correct},
            {"command_accuracy", command_accuracy()},
            {"rejected", rejected},
            {"steps", trace.steps},
            {"moves", trace.moves},
            {"shortest_path", shortest_path},
            {"wall_s", wall_s}};
  }
};

inline SimResult run_simulation(const maze::Maze& m, std::shared_ptr<const Classifier> classifier,
                                const SimConfig& config, StatusHub* hub = nullptr) {
  const auto t0 = Clock::now();
  auto source = std::make_shared<OperatorSynthSource>(classifier->pipeline().config().class_freqs, config.source);
  CommandService service(classifier, source, config.service);
  RobotServer server(service, "127.0.0.1", 0);
  if (hub) hub->set_maze(m);

  const maze::OracleOperator oracle(m);
  RobotClientConfig rc;
  rc.port = server.port();
  rc.poll_interval = config.poll_interval;
  rc.step_limit = config.step_limit;
  RobotHooks hooks;
  hooks.on_announce = [&](std::uint32_t, const maze::Pose& pose, maze::OpenDirs dirs) -> std::optional<int> {
    const int intent = oracle(pose, dirs);
    source->select(static_cast<std::size_t>(intent));
    return intent;
  };
  if (hub) {
    hooks.on_update = [hub](const maze::Robot& r) { hub->set_pose(r.pose, maze::state_name(r.state)); };
  }

  SimResult out;
  out.trace = RobotClient(m, rc, hooks).run();
  server.stop();
  service.stop();
  for (const auto& c : out.trace.commands) {
    ++out.junctions;
    if (c.intent && *c.intent == c.command) ++out.correct;
    if (c.rejected) ++out.rejected;
  }
  out.shortest_path = maze::shortest_path_length(m);
  out.wall_s = std::chrono::duration<double>(Clock::now() - t0).count();
  return out;
}

/// Small model trained on a synthetic recording (classes x trials_per_class
/// trials at `snr_db`), enough to drive the loop when no model file is given.
struct QuickModelConfig {
  double snr_db = 0.0;
  std::size_t trials_per_class = 50;
  std::size_t epochs = 15;
  std::uint64_t seed = 1;
};

inline net::Model train_quick_model(const dsp::PipelineConfig& pipeline_config, const QuickModelConfig& q = {}) {
  synth::SynthConfig templ;
  templ.snr_db = q.snr_db;
  templ.seed = q.seed;
  const auto rec = synth::generate_dataset(pipeline_config.class_freqs, q.trials_per_class, templ);
  const dsp::Pipeline pipeline(pipeline_config, rec.fs_hz);
  const auto examples = pipeline.preprocess_recording(rec);
  net::CnnConfig nc;
  nc.input_len = pipeline.feature_len();
  nc.n_classes = pipeline_config.class_freqs.size();
  net::TrainConfig tc;
  tc.epochs = q.epochs;
  tc.seed = q.seed;
  return {net::train(examples, tc, nc).params, nc};
}

}  // namespace ssvep::loopnet
