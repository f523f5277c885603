#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ssvep/rng.hpp"

namespace ssvep::maze {

class Error : public std::runtime_error {
 public:
  enum class Kind {
    invalid_maze,
    parse,
    ragged_rows,
    asymmetric_walls,
    missing_marker,
    bad_dimensions,
    bad_command,
    protocol,
    step_limit,
  };

  Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

enum class Heading : std::uint8_t { N = 0, E = 1, S = 2, W = 3 };

inline Heading turn_left(Heading h) { return static_cast<Heading>((static_cast<int>(h) + 3) % 4); }
inline Heading turn_right(Heading h) { return static_cast<Heading>((static_cast<int>(h) + 1) % 4); }
inline Heading reverse(Heading h) { return static_cast<Heading>((static_cast<int>(h) + 2) % 4); }
inline std::uint8_t bit(Heading h) { return static_cast<std::uint8_t>(1u << static_cast<int>(h)); }

inline char heading_char(Heading h) {
  constexpr char chars[] = {'N', 'E', 'S', 'W'};
  return chars[static_cast<int>(h)];
}

struct Cell {
  int col = 0;
  int row = 0;
  bool operator==(const Cell&) const = default;
};

inline Cell neighbor(Cell c, Heading h) {
  switch (h) {
    case Heading::N: return {c.col, c.row - 1};
    case Heading::E: return {c.col + 1, c.row};
    case Heading::S: return {c.col, c.row + 1};
    case Heading::W: return {c.col - 1, c.row};
  }
  return c;
}

struct Pose {
  Cell cell;
  Heading heading = Heading::E;
  bool operator==(const Pose&) const = default;
};

/// Grid world. `open[row * width + col]` holds one bit per absolute
/// direction (bit(Heading)), set when the passage that way is open.
struct Maze {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> open;
  Cell start;
  Heading start_heading = Heading::E;
  Cell exit;

  static Maze closed(int width, int height) {
    if (width < 1 || height < 1) throw Error(Error::Kind::bad_dimensions, "maze dimensions must be positive");
    Maze m;
    m.width = width;
    m.height = height;
    m.open.assign(static_cast<std::size_t>(width * height), 0);
    m.exit = {width - 1, height - 1};
    return m;
  }

  bool in_bounds(Cell c) const { return c.col >= 0 && c.row >= 0 && c.col < width && c.row < height; }
  std::size_t index(Cell c) const { return static_cast<std::size_t>(c.row * width + c.col); }

  bool is_open(Cell c, Heading h) const { return (open[index(c)] & bit(h)) != 0; }

  /// Opens or closes the edge on both sides.
  void set_open(Cell c, Heading h, bool value) {
    const Cell n = neighbor(c, h);
    if (!in_bounds(c) || !in_bounds(n)) throw Error(Error::Kind::invalid_maze, "edge leaves the grid");
    auto apply = [&](Cell cell, Heading dir) {
      auto& flags = open[index(cell)];
      flags = value ? (flags | bit(dir)) : (flags & static_cast<std::uint8_t>(~bit(dir)));
    };
    apply(c, h);
    apply(n, reverse(h));
  }

  /// Number of open interior edges, each counted once.
  std::size_t open_edge_count() const {
    std::size_t n = 0;
    for (int r = 0; r < height; ++r) {
      for (int c = 0; c < width; ++c) {
        n += is_open({c, r}, Heading::E);
        n += is_open({c, r}, Heading::S);
      }
    }
    return n;
  }

  void validate() const {
    if (width < 1 || height < 1 || open.size() != static_cast<std::size_t>(width * height)) {
      throw Error(Error::Kind::bad_dimensions, "maze dimensions do not match cell data");
    }
    for (int r = 0; r < height; ++r) {
      for (int c = 0; c < width; ++c) {
        const Cell cell{c, r};
        if (open[index(cell)] & 0xF0) throw Error(Error::Kind::invalid_maze, "stray wall flag bits");
        for (Heading h : {Heading::N, Heading::E, Heading::S, Heading::W}) {
          if (!is_open(cell, h)) continue;
          const Cell n = neighbor(cell, h);
          if (!in_bounds(n)) throw Error(Error::Kind::invalid_maze, "border edge is open");
          if (!is_open(n, reverse(h))) {
            throw Error(Error::Kind::asymmetric_walls, "asymmetric walls between neighbouring cells");
          }
        }
      }
    }
    if (!in_bounds(start) || !in_bounds(exit)) throw Error(Error::Kind::invalid_maze, "start or exit out of bounds");
    if (start == exit) throw Error(Error::Kind::invalid_maze, "start and exit coincide");
  }

  bool operator==(const Maze&) const = default;
};

/// Perfect maze by iterative recursive backtracking from (0,0). Unvisited
/// neighbours are considered in N, E, S, W order and one is picked with
/// Rng::below. Start (0,0) heading E, exit at the opposite corner.
inline Maze generate_maze(int width, int height, std::uint64_t seed) {
  if (width < 2 || height < 2) throw Error(Error::Kind::bad_dimensions, "maze dimensions must be at least 2");
  Maze m = Maze::closed(width, height);
  m.start = {0, 0};
  m.start_heading = Heading::E;
  m.exit = {width - 1, height - 1};
  std::vector<bool> visited(m.open.size(), false);
  std::vector<Cell> stack{{0, 0}};
  visited[0] = true;
  Rng rng(seed);
  while (!stack.empty()) {
    const Cell cur = stack.back();
    Heading options[4];
    std::size_t count = 0;
    for (Heading h : {Heading::N, Heading::E, Heading::S, Heading::W}) {
      const Cell n = neighbor(cur, h);
      if (m.in_bounds(n) && !visited[m.index(n)]) options[count++] = h;
    }
    if (count == 0) {
      stack.pop_back();
      continue;
    }
    const Heading h = options[rng.below(count)];
    const Cell next = neighbor(cur, h);
    m.set_open(cur, h, true);
    visited[m.index(next)] = true;
    stack.push_back(next);
  }
  return m;
}

// ---------------------------------------------------------------------------
// ASCII format
//
//   +--+--+--+     corners '+', horizontal walls "--" (open "  ")
//   |S>   |  |     vertical walls '|' (open ' '), 2-char cells
//   +  +--+  +
//   |        E|
//   +--+--+--+
//
// The start cell reads 'S' followed by its heading: '^' N, '>' E, 'v' S,
// '<' W. The exit cell reads "E ". Border walls must be closed.

inline char heading_arrow(Heading h) {
  constexpr char arrows[] = {'^', '>', 'v', '<'};
  return arrows[static_cast<int>(h)];
}

inline std::string render_maze(const Maze& m) {
  std::ostringstream out;
  auto horizontal = [&](int row_above) {
    out << '+';
    for (int c = 0; c < m.width; ++c) {
      const bool open = row_above >= 0 && row_above + 1 < m.height && m.is_open({c, row_above}, Heading::S);
      out << (open ? "  " : "--") << '+';
    }
    out << '\n';
  };
  horizontal(-1);
  for (int r = 0; r < m.height; ++r) {
    out << '|';
    for (int c = 0; c < m.width; ++c) {
      const Cell cell{c, r};
      if (cell == m.start) {
        out << 'S' << heading_arrow(m.start_heading);
      } else if (cell == m.exit) {
        out << "E ";
      } else {
        out << "  ";
      }
      out << (m.is_open(cell, Heading::E) ? ' ' : '|');
    }
    out << '\n';
    horizontal(r);
  }
  return out.str();
}

inline Maze load_maze(std::string_view text) {
  using K = Error::Kind;
  std::vector<std::string> lines;
  {
    std::string line;
    std::istringstream in{std::string(text)};
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      lines.push_back(line);
    }
    while (!lines.empty() && lines.back().find_first_not_of(" \t") == std::string::npos) lines.pop_back();
  }
  if (lines.size() < 3 || lines.size() % 2 == 0) {
    throw Error(K::parse, "maze text needs 2*height+1 lines");
  }
  const std::size_t line_len = lines[0].size();
  if (line_len < 4 || (line_len - 1) % 3 != 0) throw Error(K::parse, "maze line length must be 3*width+1");
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].size() != line_len) {
      throw Error(K::ragged_rows, "ragged row at line " + std::to_string(i + 1));
    }
  }
  Maze m = Maze::closed(static_cast<int>((line_len - 1) / 3), static_cast<int>((lines.size() - 1) / 2));
  auto fail = [&](std::size_t line, const std::string& msg) {
    throw Error(K::parse, "line " + std::to_string(line + 1) + ": " + msg);
  };
  for (std::size_t li = 0; li < lines.size(); li += 2) {
    const auto& s = lines[li];
    const int below = static_cast<int>(li / 2);  // row under this wall line
    for (int c = 0; c < m.width; ++c) {
      const std::size_t x = static_cast<std::size_t>(3 * c);
      if (s[x] != '+') fail(li, "expected '+'");
      const auto seg = s.substr(x + 1, 2);
      if (seg != "--" && seg != "  ") fail(li, "expected \"--\" or two spaces");
      if (seg == "  ") {
        if (below == 0 || below == m.height) throw Error(K::invalid_maze, "border edge is open");
        m.set_open({c, below - 1}, Heading::S, true);
      }
    }
    if (s.back() != '+') fail(li, "expected '+'");
  }
  bool have_start = false, have_exit = false;
  for (std::size_t li = 1; li < lines.size(); li += 2) {
    const auto& s = lines[li];
    const int r = static_cast<int>(li / 2);
    if (s[0] != '|') throw Error(K::invalid_maze, "border edge is open");
    for (int c = 0; c < m.width; ++c) {
      const std::size_t x = static_cast<std::size_t>(3 * c);
      const char a = s[x + 1], b = s[x + 2], wall = s[x + 3];
      if (a == 'S') {
        if (have_start) fail(li, "more than one start");
        Heading h{};
        switch (b) {
          case '^': h = Heading::N; break;
          case '>': h = Heading::E; break;
          case 'v': h = Heading::S; break;
          case '<': h = Heading::W; break;
          default: fail(li, "start marker needs a heading (^ > v <)");
        }
        m.start = {c, r};
        m.start_heading = h;
        have_start = true;
      } else if (a == 'E' && b == ' ') {
        if (have_exit) fail(li, "more than one exit");
        m.exit = {c, r};
        have_exit = true;
      } else if (a != ' ' || b != ' ') {
        fail(li, "unexpected cell content");
      }
      if (wall != '|' && wall != ' ') fail(li, "expected '|' or space");
      if (wall == ' ') {
        if (c == m.width - 1) throw Error(K::invalid_maze, "border edge is open");
        m.set_open({c, r}, Heading::E, true);
      }
    }
  }
  if (!have_start) throw Error(K::missing_marker, "maze has no start marker 'S'");
  if (!have_exit) throw Error(K::missing_marker, "maze has no exit marker 'E'");
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Sensing and the navigation state machine

/// Relative directions double as command codes: 0 left, 1 forward, 2 right.
enum class Rel : std::uint8_t { Left = 0, Forward = 1, Right = 2 };

inline Heading absolute(Heading h, Rel r) {
  switch (r) {
    case Rel::Left: return turn_left(h);
    case Rel::Forward: return h;
    case Rel::Right: return turn_right(h);
  }
  return h;
}

/// Bit i set when relative direction i (Rel) is open.
struct OpenDirs {
  std::uint8_t mask = 0;

  bool has(Rel r) const { return (mask >> static_cast<int>(r)) & 1u; }
  int count() const { return __builtin_popcount(mask); }
  bool operator==(const OpenDirs&) const = default;
};

enum class Reading : std::uint8_t { Open, Blocked };

struct SensorReading {
  Reading front = Reading::Blocked;
  Reading left = Reading::Blocked;
  Reading right = Reading::Blocked;

  OpenDirs open_dirs() const {
    return {static_cast<std::uint8_t>((left == Reading::Open ? 1 : 0) | (front == Reading::Open ? 2 : 0) |
                                      (right == Reading::Open ? 4 : 0))};
  }
  bool operator==(const SensorReading&) const = default;
};

inline SensorReading sense(const Maze& m, const Pose& p) {
  auto read = [&](Rel r) { return m.is_open(p.cell, absolute(p.heading, r)) ? Reading::Open : Reading::Blocked; };
  return {read(Rel::Forward), read(Rel::Left), read(Rel::Right)};
}

namespace state {
struct Cruising {
  bool operator==(const Cruising&) const = default;
};
struct AtJunction {
  OpenDirs open_dirs;
  bool operator==(const AtJunction&) const = default;
};
struct AwaitingCommand {
  std::uint32_t junction_id = 0;
  OpenDirs open_dirs;
  bool operator==(const AwaitingCommand&) const = default;
};
/// Transient: the accepted command's turn-and-advance, resolved within
/// the step that accepts it.
struct Executing {
  int command = 1;
  bool operator==(const Executing&) const = default;
};
struct DeadEnd {
  bool operator==(const DeadEnd&) const = default;
};
struct Finished {
  bool operator==(const Finished&) const = default;
};
}  // namespace state

using RobotState = std::variant<state::Cruising, state::AtJunction, state::AwaitingCommand,
                                state::Executing, state::DeadEnd, state::Finished>;

inline const char* state_name(const RobotState& s) {
  constexpr const char* names[] = {"cruising", "at_junction", "awaiting_command", "executing", "dead_end", "finished"};
  return names[s.index()];
}

struct Robot {
  RobotState state = state::Cruising{};
  Pose pose;
  std::uint32_t next_junction_id = 1;

  static Robot at_start(const Maze& m) { return {state::Cruising{}, {m.start, m.start_heading}, 1}; }
  bool operator==(const Robot&) const = default;
};

struct Event {
  enum class Kind { moved, turned, junction, awaiting_command, executing, rejected, dead_end, u_turn, finished };
  Kind kind;
  Pose pose;  // pose after the event
  OpenDirs open_dirs{};
  std::uint32_t junction_id = 0;
  int command = -1;

  bool operator==(const Event&) const = default;
};

inline const char* event_name(Event::Kind k) {
  constexpr const char* names[] = {"moved", "turned", "junction", "awaiting_command", "executing",
                                   "rejected", "dead_end", "u_turn", "finished"};
  return names[static_cast<int>(k)];
}

struct StepResult {
  Robot robot;
  std::vector<Event> events;
};

namespace detail {

inline void advance(const Maze& m, Robot& r, std::vector<Event>& events) {
  if (!m.is_open(r.pose.cell, r.pose.heading)) {
    throw Error(Error::Kind::invalid_maze, "advance through a closed edge");
  }
  r.pose.cell = neighbor(r.pose.cell, r.pose.heading);
  events.push_back({Event::Kind::moved, r.pose});
  if (r.pose.cell == m.exit) {
    r.state = state::Finished{};
    events.push_back({Event::Kind::finished, r.pose});
  } else {
    r.state = state::Cruising{};
  }
}

inline void execute(const Maze& m, Robot& r, int command, std::vector<Event>& events) {
  events.push_back({Event::Kind::executing, r.pose, {}, 0, command});
  const Heading h = absolute(r.pose.heading, static_cast<Rel>(command));
  if (h != r.pose.heading) {
    r.pose.heading = h;
    events.push_back({Event::Kind::turned, r.pose});
  }
  advance(m, r, events);
}

}  // namespace detail

/// One transition of the navigation state machine.
///
///   Cruising, 0 open ahead/left/right -> DeadEnd
///   Cruising, 1 open                  -> turn toward it, advance one cell
///   Cruising, >=2 open                -> AtJunction(open dirs)
///   AtJunction                        -> AwaitingCommand(fresh junction id)
///   AwaitingCommand + command         -> turn (0 left, 1 keep, 2 right), advance;
///                                        a blocked choice is rejected and the
///                                        state is left unchanged
///   DeadEnd                           -> heading reversed, Cruising
///   any advance onto the exit         -> Finished (absorbing)
///
/// A command must be supplied exactly when the state is AwaitingCommand.
inline StepResult step(const Robot& robot, const Maze& m, std::optional<int> command = std::nullopt) {
  const bool awaiting = std::holds_alternative<state::AwaitingCommand>(robot.state);
  if (command.has_value() != awaiting) {
    throw Error(Error::Kind::protocol, awaiting ? "a command is required while awaiting one"
                                                : "command given outside AwaitingCommand");
  }
  if (command && (*command < 0 || *command > 2)) {
    throw Error(Error::Kind::bad_command, "command out of range: " + std::to_string(*command));
  }
  StepResult out{robot, {}};
  Robot& r = out.robot;
  auto& ev = out.events;

  std::visit(
      [&](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, state::Cruising>) {
          const auto dirs = sense(m, r.pose).open_dirs();
          if (dirs.count() == 0) {
            r.state = state::DeadEnd{};
            ev.push_back({Event::Kind::dead_end, r.pose});
          } else if (dirs.count() == 1) {
            const Rel only = dirs.has(Rel::Left) ? Rel::Left : dirs.has(Rel::Forward) ? Rel::Forward : Rel::Right;
            const Heading h = absolute(r.pose.heading, only);
            if (h != r.pose.heading) {
              r.pose.heading = h;
              ev.push_back({Event::Kind::turned, r.pose});
            }
            detail::advance(m, r, ev);
          } else {
            r.state = state::AtJunction{dirs};
            ev.push_back({Event::Kind::junction, r.pose, dirs});
          }
        } else if constexpr (std::is_same_v<S, state::AtJunction>) {
          const auto id = r.next_junction_id++;
          r.state = state::AwaitingCommand{id, s.open_dirs};
          ev.push_back({Event::Kind::awaiting_command, r.pose, s.open_dirs, id});
        } else if constexpr (std::is_same_v<S, state::AwaitingCommand>) {
          if (!s.open_dirs.has(static_cast<Rel>(*command))) {
            ev.push_back({Event::Kind::rejected, r.pose, s.open_dirs, s.junction_id, *command});
          } else {
            detail::execute(m, r, *command, ev);
          }
        } else if constexpr (std::is_same_v<S, state::Executing>) {
          if (!sense(m, r.pose).open_dirs().has(static_cast<Rel>(s.command))) {
            r.state = state::Cruising{};
            ev.push_back({Event::Kind::rejected, r.pose, {}, 0, s.command});
          } else {
            detail::execute(m, r, s.command, ev);
          }
        } else if constexpr (std::is_same_v<S, state::DeadEnd>) {
          r.pose.heading = reverse(r.pose.heading);
          r.state = state::Cruising{};
          ev.push_back({Event::Kind::u_turn, r.pose});
        } else {
          static_assert(std::is_same_v<S, state::Finished>);
        }
      },
      robot.state);
  return out;
}

// ---------------------------------------------------------------------------
// Oracle operator and scripted solving

/// Breadth-first distances (in moves) from `target`; -1 where unreachable.
inline std::vector<int> bfs_distances(const Maze& m, Cell target) {
  std::vector<int> dist(m.open.size(), -1);
  std::deque<Cell> queue{target};
  dist[m.index(target)] = 0;
  while (!queue.empty()) {
    const Cell c = queue.front();
    queue.pop_front();
    for (Heading h : {Heading::N, Heading::E, Heading::S, Heading::W}) {
      if (!m.is_open(c, h)) continue;
      const Cell n = neighbor(c, h);
      if (dist[m.index(n)] < 0) {
        dist[m.index(n)] = dist[m.index(c)] + 1;
        queue.push_back(n);
      }
    }
  }
  return dist;
}

inline int shortest_path_length(const Maze& m) { return bfs_distances(m, m.exit)[m.index(m.start)]; }

using Operator = std::function<int(const Pose&, OpenDirs)>;

/// Answers each junction with the relative direction that lies on a
/// shortest path to the exit (forward preferred, then left, then right).
class OracleOperator {
 public:
  explicit OracleOperator(const Maze& m) : maze_(&m), dist_(bfs_distances(m, m.exit)) {}

  int operator()(const Pose& pose, OpenDirs dirs) const {
    const int here = dist_[maze_->index(pose.cell)];
    for (Rel r : {Rel::Forward, Rel::Left, Rel::Right}) {
      if (!dirs.has(r)) continue;
      const Heading h = absolute(pose.heading, r);
      const Cell n = neighbor(pose.cell, h);
      if (maze_->in_bounds(n) && dist_[maze_->index(n)] == here - 1) return static_cast<int>(r);
    }
    return static_cast<int>(Rel::Forward);
  }

 private:
  const Maze* maze_;
  std::vector<int> dist_;
};

struct Trace {
  std::vector<Event> events;
  std::size_t steps = 0;
  std::size_t moves = 0;
  bool finished = false;
  Robot final_robot;
};

class StepLimitError : public Error {
 public:
  StepLimitError(Trace trace, std::size_t limit)
      : Error(Kind::step_limit, "step limit of " + std::to_string(limit) + " exceeded"),
        trace_(std::move(trace)) {}
  const Trace& trace() const { return trace_; }

 private:
  Trace trace_;
};

/// Runs the state machine until Finished, consulting `op` at each
/// AwaitingCommand. Default limit is 4 * width * height steps.
inline Trace solve_with_oracle(const Maze& m, const Operator& op, std::size_t step_limit = 0) {
  if (step_limit == 0) step_limit = static_cast<std::size_t>(4 * m.width * m.height);
  Trace trace;
  Robot robot = Robot::at_start(m);
  while (!std::holds_alternative<state::Finished>(robot.state)) {
    if (trace.steps >= step_limit) {
      trace.final_robot = robot;
      throw StepLimitError(std::move(trace), step_limit);
    }
    std::optional<int> cmd;
    if (const auto* aw = std::get_if<state::AwaitingCommand>(&robot.state)) cmd = op(robot.pose, aw->open_dirs);
    auto res = step(robot, m, cmd);
    for (const auto& e : res.events) trace.moves += e.kind == Event::Kind::moved;
    trace.events.insert(trace.events.end(), res.events.begin(), res.events.end());
    robot = res.robot;
    ++trace.steps;
  }
  trace.finished = true;
  trace.final_robot = robot;
  return trace;
}

inline Trace solve_with_oracle(const Maze& m, std::size_t step_limit = 0) {
  OracleOperator oracle(m);
  return solve_with_oracle(m, std::cref(oracle), step_limit);
}

}  // namespace ssvep::maze
