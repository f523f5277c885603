#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ssvep/loopnet/protocol.hpp"
#include "ssvep/loopnet/tcp.hpp"
#include "ssvep/mazebot.hpp"

namespace ssvep::loopnet {

using Clock = std::chrono::steady_clock;

struct RobotClientConfig {
  std::string host = "127.0.0.1";
  std::uint16_t port = 7071;
  std::chrono::milliseconds poll_interval{250};
  std::chrono::milliseconds reply_timeout{10000};
  int max_retries = 3;
  std::chrono::milliseconds retry_backoff{200};
  int max_announce_attempts = 20;  // per junction, across ERR replies
  std::size_t step_limit = 0;      // 0: 16 * width * height
};

struct RobotHooks {
  /// Called before each JUNCTION is sent; may return the operator's intent.
  std::function<std::optional<int>(std::uint32_t wire_id, const maze::Pose&, maze::OpenDirs)> on_announce;
  /// Called after every state-machine step.
  std::function<void(const maze::Robot&)> on_update;
};

struct CommandRecord {
  std::uint32_t junction_id = 0;
  maze::Pose pose;
  std::uint8_t open_dirs = 0;
  int command = -1;
  double confidence = 0.0;
  std::optional<int> intent;
  bool rejected = false;
  double wait_ms = 0.0;  // JUNCTION sent -> CMD received
};

struct SessionTrace {
  nlohmann::json events = nlohmann::json::array();
  std::vector<CommandRecord> commands;
  std::size_t steps = 0;
  std::size_t moves = 0;
  std::size_t announcements = 0;
  bool finished = false;
  bool aborted = false;
  std::string abort_reason;
  maze::Robot final_robot;

  nlohmann::json to_json() const {
    nlohmann::json cmds = nlohmann::json::array();
    for (const auto& c : commands) {
      cmds.push_back({{"junction_id", c.junction_id},
                      {"col", c.pose.cell.col},
                      {"row", c.pose.cell.row},
                      {"heading", std::string(1, maze::heading_char(c.pose.heading))},
                      {"open_dirs", c.open_dirs},
                      {"command", c.command},
                      {"confidence", c.confidence},
                      {"intent", c.intent ? nlohmann::json(*c.intent) : nlohmann::json(nullptr)},
                      {"rejected", c.rejected},
                      {"wait_ms", c.wait_ms}});
    }
    return {{"finished", finished},
            {"aborted", aborted},
            {"abort_reason", abort_reason},
            {"steps", steps},
            {"moves", moves},
            {"announcements", announcements},
            {"commands", cmds},
            {"events", events}};
  }
};

/// Drives the navigation state machine against a command server: at each
/// AwaitingCommand it announces the junction with a fresh wire id, polls
/// every poll_interval until CMD arrives and applies it. Lost connections
/// are retried max_retries times with retry_backoff between attempts; after
/// that the session aborts and the partial trace is returned.
class RobotClient {
 public:
  RobotClient(const maze::Maze& m, RobotClientConfig config, RobotHooks hooks = {})
      : maze_(m), config_(std::move(config)), hooks_(std::move(hooks)) {
    if (config_.step_limit == 0) config_.step_limit = static_cast<std::size_t>(16 * m.width * m.height);
  }

  SessionTrace run() {
    start_ = Clock::now();
    trace_ = {};
    maze::Robot robot = maze::Robot::at_start(maze_);
    if (hooks_.on_update) hooks_.on_update(robot);
    try {
      reconnect();
      while (!std::holds_alternative<maze::state::Finished>(robot.state)) {
        if (trace_.steps >= config_.step_limit) {
          abort("step limit of " + std::to_string(config_.step_limit) + " exceeded");
          break;
        }
        std::optional<int> cmd;
        if (const auto* aw = std::get_if<maze::state::AwaitingCommand>(&robot.state)) {
          cmd = request_command(robot.pose, aw->open_dirs);
          if (!cmd) break;
        }
        auto res = maze::step(robot, maze_, cmd);
        robot = res.robot;
        ++trace_.steps;
        for (const auto& e : res.events) {
          record_event(e);
          if (e.kind == maze::Event::Kind::moved) ++trace_.moves;
          if (e.kind == maze::Event::Kind::rejected && !trace_.commands.empty()) trace_.commands.back().rejected = true;
        }
        if (hooks_.on_update) hooks_.on_update(robot);
      }
    } catch (const NetError& e) {
      abort(e.what());
    }
    trace_.finished = std::holds_alternative<maze::state::Finished>(robot.state);
    trace_.final_robot = robot;
    return std::move(trace_);
  }

 private:
  double now_ms() const {
    return std::chrono::duration<double, std::milli>(Clock::now() - start_).count();
  }

  void abort(const std::string& reason) {
    trace_.aborted = true;
    trace_.abort_reason = reason;
    trace_.events.push_back({{"t_ms", now_ms()}, {"kind", "abort"}, {"reason", reason}});
  }

  void record_event(const maze::Event& e) {
    nlohmann::json j{{"t_ms", now_ms()},
                     {"kind", maze::event_name(e.kind)},
                     {"col", e.pose.cell.col},
                     {"row", e.pose.cell.row},
                     {"heading", std::string(1, maze::heading_char(e.pose.heading))}};
    if (e.kind == maze::Event::Kind::junction || e.kind == maze::Event::Kind::awaiting_command) {
      j["open_dirs"] = e.open_dirs.mask;
    }
    if (e.junction_id) j["junction_id"] = e.junction_id;
    if (e.command >= 0) j["command"] = e.command;
    trace_.events.push_back(std::move(j));
  }

  void reconnect() {
    conn_.reset();
    for (int attempt = 0;; ++attempt) {
      try {
        conn_.emplace(connect_tcp(config_.host, config_.port));
        return;
      } catch (const NetError& e) {
        trace_.events.push_back({{"t_ms", now_ms()}, {"kind", "connect_failed"}, {"attempt", attempt + 1}, {"error", e.what()}});
        if (attempt >= config_.max_retries) throw NetError("server unreachable after " + std::to_string(attempt + 1) + " attempts");
        std::this_thread::sleep_for(config_.retry_backoff);
      }
    }
  }

  /// One request/response exchange; reconnects (bounded) on I/O failure
  /// and reports that with nullopt so the caller re-announces.
  std::optional<Frame> exchange(const Frame& request) {
    try {
      if (!conn_) reconnect();
      conn_->write_all(encode_frame(request));
      const auto line = conn_->read_line(config_.reply_timeout);
      if (!line) throw NetError("connection closed or reply timed out");
      return decode_frame(*line);
    } catch (const ProtocolError& e) {
      trace_.events.push_back({{"t_ms", now_ms()}, {"kind", "bad_reply"}, {"error", e.what()}});
      return std::nullopt;
    } catch (const NetError& e) {
      trace_.events.push_back({{"t_ms", now_ms()}, {"kind", "connection_lost"}, {"error", e.what()}});
      if (++lost_ > config_.max_retries) throw NetError(std::string("connection lost: ") + e.what());
      std::this_thread::sleep_for(config_.retry_backoff);
      reconnect();
      return std::nullopt;
    }
  }

  std::optional<int> request_command(const maze::Pose& pose, maze::OpenDirs dirs) {
    for (int attempt = 0; attempt < config_.max_announce_attempts; ++attempt) {
      const std::uint32_t id = ++wire_id_;
      std::optional<int> intent;
      if (hooks_.on_announce) intent = hooks_.on_announce(id, pose, dirs);
      const auto sent_at = Clock::now();
      const auto ack = exchange(frame::Junction{id, dirs.mask});
      trace_.events.push_back({{"t_ms", now_ms()}, {"kind", "announce"}, {"junction_id", id}, {"open_dirs", dirs.mask}});
      ++trace_.announcements;
      if (!ack) continue;
      if (const auto* err = std::get_if<frame::Err>(&*ack)) {
        trace_.events.push_back({{"t_ms", now_ms()}, {"kind", "server_error"}, {"code", err->code}, {"text", err->text}});
        std::this_thread::sleep_for(config_.poll_interval);
        continue;
      }
      while (true) {
        std::this_thread::sleep_for(config_.poll_interval);
        const auto reply = exchange(frame::Poll{id});
        if (!reply) break;
        if (std::holds_alternative<frame::Pending>(*reply)) continue;
        if (const auto* c = std::get_if<frame::Cmd>(&*reply); c && c->junction_id == id) {
          CommandRecord rec;
          rec.junction_id = id;
          rec.pose = pose;
          rec.open_dirs = dirs.mask;
          rec.command = c->command;
          rec.confidence = c->confidence;
          rec.intent = intent;
          rec.wait_ms = std::chrono::duration<double, std::milli>(Clock::now() - sent_at).count();
          trace_.commands.push_back(rec);
          trace_.events.push_back({{"t_ms", now_ms()}, {"kind", "command"}, {"junction_id", id},
                                   {"command", c->command}, {"confidence", c->confidence}});
          return c->command;
        }
        if (const auto* err = std::get_if<frame::Err>(&*reply)) {
          trace_.events.push_back({{"t_ms", now_ms()}, {"kind", "server_error"}, {"code", err->code}, {"text", err->text}});
        }
        break;
      }
    }
    abort("no command obtained after " + std::to_string(config_.max_announce_attempts) + " announcements");
    return std::nullopt;
  }

  const maze::Maze& maze_;
  RobotClientConfig config_;
  RobotHooks hooks_;
  std::optional<Connection> conn_;
  std::uint32_t wire_id_ = 0;
  int lost_ = 0;
  Clock::time_point start_;
  SessionTrace trace_;
};

}  // namespace ssvep::loopnet
