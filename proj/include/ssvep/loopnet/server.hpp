#pragma once

#include <openssl/evp.h>
#include <openssl/sha.h>

#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "ssvep/loopnet/protocol.hpp"
#include "ssvep/loopnet/session.hpp"
#include "ssvep/loopnet/tcp.hpp"
#include "ssvep/mazebot.hpp"

namespace ssvep::loopnet {

using json = nlohmann::json;

/// Robot protocol endpoint: one reply line per request line.
class RobotServer {
 public:
  RobotServer(CommandService& service, const std::string& host, std::uint16_t port)
      : service_(service), server_(host, port, [this](Connection& c, const std::atomic<bool>& stop) { serve(c, stop); }) {}

  std::uint16_t port() const { return server_.port(); }
  void stop() { server_.stop(); }

 private:
  void serve(Connection& conn, const std::atomic<bool>& stopping) {
    while (!stopping) {
      if (!conn.wait_readable(std::chrono::milliseconds(100))) continue;
      std::optional<std::string> line;
      try {
        line = conn.read_line(std::chrono::milliseconds(1000));
      } catch (const NetError&) {
        conn.write_all(encode_frame(frame::Err{kErrBadFrame, "line too long"}));
        return;
      }
      if (!line) return;
      Frame reply;
      try {
        reply = service_.handle(decode_frame(*line));
      } catch (const ProtocolError& e) {
        reply = frame::Err{kErrBadFrame, e.what()};
      }
      conn.write_all(encode_frame(reply));
    }
  }

  CommandService& service_;
  TcpServer server_;
};

/// World view published by whoever drives the robot in-process.
class StatusHub {
 public:
  void set_maze(const maze::Maze& m) {
    std::lock_guard lock(mu_);
    maze_text_ = maze::render_maze(m);
    ++version_;
  }
  void set_pose(const maze::Pose& p, std::string robot_state) {
    std::lock_guard lock(mu_);
    pose_ = p;
    robot_state_ = std::move(robot_state);
    ++version_;
  }
  std::uint64_t version() const {
    std::lock_guard lock(mu_);
    return version_;
  }

  json world_json() const {
    std::lock_guard lock(mu_);
    json j;
    j["maze"] = maze_text_ ? json(*maze_text_) : json(nullptr);
    if (pose_) {
      j["pose"] = {{"col", pose_->cell.col},
                   {"row", pose_->cell.row},
                   {"heading", std::string(1, maze::heading_char(pose_->heading))}};
    } else {
      j["pose"] = nullptr;
    }
    j["robot_state"] = robot_state_ ? json(*robot_state_) : json(nullptr);
    return j;
  }

 private:
  mutable std::mutex mu_;
  std::optional<std::string> maze_text_;
  std::optional<maze::Pose> pose_;
  std::optional<std::string> robot_state_;
  std::uint64_t version_ = 0;
};

/// {"type":"state", maze, pose, phase, countdown_ms, probs, ...}
inline json state_message(const SessionSnapshot& s, const StatusHub& hub, const OperatorSynthSource* source) {
  json j = hub.world_json();
  j["type"] = "state";
  j["phase"] = phase_name(s.phase);
  j["junction_id"] = s.junction_id;
  j["open_dirs"] = s.open_dirs;
  long long countdown = 0;
  if (s.phase == Phase::Stimulus) {
    countdown = std::max<long long>(
        0, std::chrono::duration_cast<std::chrono::milliseconds>(s.deadline - Clock::now()).count());
  }
  j["countdown_ms"] = countdown;
  if (s.decision) {
    j["probs"] = {s.decision->probs[0], s.decision->probs[1], s.decision->probs[2]};
    j["command"] = s.decision->command;
    j["confidence"] = quantize_confidence(s.decision->confidence);
  } else {
    j["probs"] = nullptr;
    j["command"] = nullptr;
    j["confidence"] = nullptr;
  }
  j["error"] = s.failure ? json(*s.failure) : json(nullptr);
  if (source) {
    const auto sel = source->selected();
    j["selected"] = sel ? json(*sel) : json(nullptr);
    j["class_freqs"] = source->class_freqs();
  }
  return j;
}

namespace ws {

inline constexpr std::string_view kGuid = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";

inline std::string accept_key(std::string_view client_key) {
  const std::string joined = std::string(client_key) + std::string(kGuid);
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(joined.data()), joined.size(), digest);
  unsigned char out[4 * ((SHA_DIGEST_LENGTH + 2) / 3) + 1];
  const int n = EVP_EncodeBlock(out, digest, SHA_DIGEST_LENGTH);
  return std::string(reinterpret_cast<char*>(out), static_cast<std::size_t>(n));
}

inline std::string text_frame(std::string_view payload) {
  std::string f;
  f.push_back(static_cast<char>(0x81));
  if (payload.size() < 126) {
    f.push_back(static_cast<char>(payload.size()));
  } else if (payload.size() <= 0xFFFF) {
    f.push_back(static_cast<char>(126));
    f.push_back(static_cast<char>((payload.size() >> 8) & 0xFF));
    f.push_back(static_cast<char>(payload.size() & 0xFF));
  } else {
    f.push_back(static_cast<char>(127));
    for (int i = 7; i >= 0; --i) f.push_back(static_cast<char>((payload.size() >> (8 * i)) & 0xFF));
  }
  f.append(payload);
  return f;
}

struct Message {
  std::uint8_t opcode = 0;
  std::string payload;
};

/// One client frame (masked per RFC 6455); nullopt on close/timeout.
inline std::optional<Message> read_frame(Connection& c, std::chrono::milliseconds timeout) {
  const auto head = c.read_exact(2, timeout);
  if (!head) return std::nullopt;
  Message m;
  m.opcode = static_cast<std::uint8_t>((*head)[0]) & 0x0F;
  const bool masked = static_cast<std::uint8_t>((*head)[1]) & 0x80;
  std::uint64_t len = static_cast<std::uint8_t>((*head)[1]) & 0x7F;
  if (len == 126 || len == 127) {
    const auto ext = c.read_exact(len == 126 ? 2 : 8, timeout);
    if (!ext) return std::nullopt;
    len = 0;
    for (char ch : *ext) len = (len << 8) | static_cast<std::uint8_t>(ch);
  }
  if (len > (1u << 20)) throw NetError("websocket frame too large");
  std::string mask(4, '\0');
  if (masked) {
    const auto k = c.read_exact(4, timeout);
    if (!k) return std::nullopt;
    mask = *k;
  }
  auto body = c.read_exact(static_cast<std::size_t>(len), timeout);
  if (!body) return std::nullopt;
  for (std::size_t i = 0; i < body->size(); ++i) (*body)[i] ^= mask[i % 4];
  m.payload = std::move(*body);
  return m;
}

}  // namespace ws

/// Status + operator stream. Raw TCP clients exchange newline-delimited
/// JSON; a client whose first line is an HTTP GET with a WebSocket upgrade
/// gets the same messages as text frames. The server pushes a state message
/// whenever the session or world changes and at least every `tick`.
///
/// Client messages: {"type":"select","target":0|1|2} and {"type":"deselect"}.
/// Anything else is answered with {"type":"error","message":...}.
class ConsoleServer {
 public:
  ConsoleServer(const CommandService& service, const StatusHub& hub, OperatorSynthSource* source,
                const std::string& host, std::uint16_t port,
                std::chrono::milliseconds tick = std::chrono::milliseconds(100))
      : service_(service),
        hub_(hub),
        source_(source),
        tick_(tick),
        server_(host, port, [this](Connection& c, const std::atomic<bool>& stop) { serve(c, stop); }) {}

  std::uint16_t port() const { return server_.port(); }
  void stop() { server_.stop(); }

  /// Applies one operator message; returns an error message to send back, if any.
  static std::optional<json> apply_operator_message(std::string_view text, OperatorSynthSource* source) {
    json msg;
    try {
      msg = json::parse(text);
    } catch (const json::parse_error&) {
      return json{{"type", "error"}, {"message", "malformed JSON"}};
    }
    if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string()) {
      return json{{"type", "error"}, {"message", "message needs a string 'type'"}};
    }
    const auto type = msg["type"].get<std::string>();
    if (!source) return json{{"type", "error"}, {"message", "no operator-driven source in this session"}};
    if (type == "select") {
      if (!msg.contains("target") || !msg["target"].is_number_unsigned() || msg["target"].get<std::uint64_t>() > 2) {
        return json{{"type", "error"}, {"message", "select needs target 0, 1 or 2"}};
      }
      source->select(msg["target"].get<std::size_t>());
      return std::nullopt;
    }
    if (type == "deselect") {
      source->deselect();
      return std::nullopt;
    }
    return json{{"type", "error"}, {"message", "unknown message type '" + type + "'"}};
  }

 private:
  void serve(Connection& conn, const std::atomic<bool>& stopping) {
    const bool websocket = conn.peek(4, std::chrono::milliseconds(200)).starts_with("GET ");
    if (websocket && !handshake(conn)) return;
    auto send = [&](const json& j) {
      const auto text = j.dump();
      conn.write_all(websocket ? ws::text_frame(text) : text + "\n");
    };

    std::uint64_t seen_session = ~0ULL, seen_world = ~0ULL;
    auto last_push = Clock::now() - tick_;
    while (!stopping) {
      const auto snap = service_.snapshot();
      const auto world = hub_.version();
      if (snap.version != seen_session || world != seen_world || Clock::now() - last_push >= tick_) {
        send(state_message(snap, hub_, source_));
        seen_session = snap.version;
        seen_world = world;
        last_push = Clock::now();
      }
      if (conn.wait_readable(std::chrono::milliseconds(20))) {
        if (websocket) {
          const auto msg = ws::read_frame(conn, std::chrono::milliseconds(1000));
          if (!msg) return;
          if (msg->opcode == 0x8) {
            conn.write_all(std::string("\x88\x00", 2));
            return;
          }
          if (msg->opcode == 0x9) {
            std::string pong = ws::text_frame(msg->payload);
            pong[0] = static_cast<char>(0x8A);
            conn.write_all(pong);
            continue;
          }
          if (msg->opcode != 0x1) continue;
          if (auto err = apply_operator_message(msg->payload, source_)) send(*err);
        } else {
          auto line = conn.read_line(std::chrono::milliseconds(1000), 1 << 16);
          if (!line) return;
          if (auto err = apply_operator_message(*line, source_)) send(*err);
        }
      }
    }
  }

  static bool handshake(Connection& conn) {
    std::string key;
    while (true) {
      const auto line = conn.read_line(std::chrono::milliseconds(2000), 8192);
      if (!line) return false;
      std::string_view l(*line);
      while (!l.empty() && (l.back() == '\n' || l.back() == '\r')) l.remove_suffix(1);
      if (l.empty()) break;
      const auto colon = l.find(':');
      if (colon == std::string_view::npos) continue;
      std::string name(l.substr(0, colon));
      for (auto& ch : name) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
      auto value = l.substr(colon + 1);
      while (!value.empty() && value.front() == ' ') value.remove_prefix(1);
      if (name == "sec-websocket-key") key = std::string(value);
    }
    if (key.empty()) {
      conn.write_all("HTTP/1.1 400 Bad Request\r\nContent-Length: 0\r\n\r\n");
      return false;
    }
    conn.write_all("HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
                   "Sec-WebSocket-Accept: " + ws::accept_key(key) + "\r\n\r\n");
    return true;
  }

  const CommandService& service_;
  const StatusHub& hub_;
  OperatorSynthSource* source_;
  std::chrono::milliseconds tick_;
  TcpServer server_;
};

}  // namespace ssvep::loopnet
