#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

// Robot protocol. One frame per line, ASCII, single spaces between fields,
// terminated by '\n' (no '\r'):
//
//   JUNCTION <id> <mask>            robot -> server   mask 1..7: bit0 left, bit1 forward, bit2 right
//   POLL <id>                       robot -> server
//   PENDING <id>                    server -> robot
//   CMD <id> <command> <confidence> server -> robot   command 0..2, confidence 0..1
//   ERR <code> <text>               server -> robot   text: printable ASCII, may contain spaces
//
// Integers are unsigned decimal without sign or leading zeros (id fits u32,
// code fits u16). Confidence is written with at most four decimals and no
// trailing zeros ("0.91", "1", "0"); decoding accepts up to four decimals.

namespace ssvep::loopnet {

class ProtocolError : public std::runtime_error {
 public:
  enum class Kind {
    missing_terminator,
    unknown_verb,
    field_count,
    bad_number,
    command_out_of_range,
    mask_out_of_range,
    confidence_out_of_range,
    bad_text,
  };

  ProtocolError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

namespace frame {
struct Junction {
  std::uint32_t junction_id = 0;
  std::uint8_t open_dirs = 0;
  bool operator==(const Junction&) const = default;
};
struct Poll {
  std::uint32_t junction_id = 0;
  bool operator==(const Poll&) const = default;
};
struct Pending {
  std::uint32_t junction_id = 0;
  bool operator==(const Pending&) const = default;
};
struct Cmd {
  std::uint32_t junction_id = 0;
  std::uint8_t command = 0;
  double confidence = 0.0;  // a multiple of 1e-4 after a wire round trip
  bool operator==(const Cmd&) const = default;
};
struct Err {
  std::uint16_t code = 0;
  std::string text;
  bool operator==(const Err&) const = default;
};
}  // namespace frame

using Frame = std::variant<frame::Junction, frame::Poll, frame::Pending, frame::Cmd, frame::Err>;

/// Error codes carried in ERR frames.
enum ErrCode : std::uint16_t {
  kErrNoSession = 1,
  kErrStaleId = 2,
  kErrBadFrame = 3,
  kErrSourceFailure = 4,
  kErrBusy = 5,
  kErrUnexpected = 6,
};

/// Confidence in ten-thousandths, as carried on the wire.
inline std::uint32_t confidence_ticks(double c) {
  if (!(c >= 0.0 && c <= 1.0)) {
    throw ProtocolError(ProtocolError::Kind::confidence_out_of_range, "confidence out of range");
  }
  return static_cast<std::uint32_t>(std::llround(c * 10000.0));
}

inline double quantize_confidence(double c) { return confidence_ticks(c) / 10000.0; }

inline std::string format_confidence(double c) {
  const auto ticks = confidence_ticks(c);
  std::string out = std::to_string(ticks / 10000);
  std::string frac = std::to_string(ticks % 10000);
  frac.insert(0, 4 - frac.size(), '0');
  while (!frac.empty() && frac.back() == '0') frac.pop_back();
  if (!frac.empty()) out += "." + frac;
  return out;
}

namespace detail {

inline bool printable_text(std::string_view s) {
  if (s.empty()) return false;
  for (char ch : s) {
    if (ch < 0x20 || ch > 0x7E) return false;
  }
  return true;
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto sp = line.find(' ', start);
    out.push_back(line.substr(start, sp - start));
    if (sp == std::string_view::npos) break;
    start = sp + 1;
  }
  return out;
}

template <typename T>
T parse_uint(std::string_view s, const char* what) {
  using K = ProtocolError::Kind;
  if (s.empty() || (s.size() > 1 && s[0] == '0')) {
    throw ProtocolError(K::bad_number, std::string("malformed ") + what);
  }
  T value{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ProtocolError(K::bad_number, std::string("malformed ") + what);
  }
  return value;
}

inline double parse_confidence(std::string_view s) {
  using K = ProtocolError::Kind;
  const auto dot = s.find('.');
  const auto whole = s.substr(0, dot);
  std::uint32_t frac_ticks = 0;
  if (dot != std::string_view::npos) {
    const auto frac = s.substr(dot + 1);
    if (frac.empty() || frac.size() > 4) throw ProtocolError(K::bad_number, "malformed confidence");
    for (char ch : frac) {
      if (ch < '0' || ch > '9') throw ProtocolError(K::bad_number, "malformed confidence");
    }
    std::string padded(frac);
    padded.resize(4, '0');
    frac_ticks = static_cast<std::uint32_t>(std::stoul(padded));
  }
  const auto w = parse_uint<std::uint32_t>(whole, "confidence");
  if (w > 1 || (w == 1 && frac_ticks != 0)) {
    throw ProtocolError(K::confidence_out_of_range, "confidence out of range");
  }
  return (w * 10000 + frac_ticks) / 10000.0;
}

}  // namespace detail

inline std::string encode_frame(const Frame& f) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        using K = ProtocolError::Kind;
        if constexpr (std::is_same_v<T, frame::Junction>) {
          if (v.open_dirs == 0 || v.open_dirs > 7) throw ProtocolError(K::mask_out_of_range, "open_dirs out of range");
          return "JUNCTION " + std::to_string(v.junction_id) + " " + std::to_string(v.open_dirs) + "\n";
        } else if constexpr (std::is_same_v<T, frame::Poll>) {
          return "POLL " + std::to_string(v.junction_id) + "\n";
        } else if constexpr (std::is_same_v<T, frame::Pending>) {
          return "PENDING " + std::to_string(v.junction_id) + "\n";
        } else if constexpr (std::is_same_v<T, frame::Cmd>) {
          if (v.command > 2) throw ProtocolError(K::command_out_of_range, "command out of range");
          return "CMD " + std::to_string(v.junction_id) + " " + std::to_string(v.command) + " " +
                 format_confidence(v.confidence) + "\n";
        } else {
          if (!detail::printable_text(v.text)) throw ProtocolError(K::bad_text, "ERR text must be printable ASCII");
          return "ERR " + std::to_string(v.code) + " " + v.text + "\n";
        }
      },
      f);
}

/// Decodes exactly one newline-terminated frame.
inline Frame decode_frame(std::string_view bytes) {
  using K = ProtocolError::Kind;
  if (bytes.empty() || bytes.back() != '\n') throw ProtocolError(K::missing_terminator, "frame not newline-terminated");
  const auto line = bytes.substr(0, bytes.size() - 1);
  if (line.find('\n') != std::string_view::npos) throw ProtocolError(K::missing_terminator, "embedded newline");
  const auto sp = line.find(' ');
  const auto verb = line.substr(0, sp);

  if (verb == "ERR") {
    if (sp == std::string_view::npos) throw ProtocolError(K::field_count, "ERR needs a code and text");
    const auto rest = line.substr(sp + 1);
    const auto sp2 = rest.find(' ');
    if (sp2 == std::string_view::npos) throw ProtocolError(K::field_count, "ERR needs a code and text");
    frame::Err e;
    e.code = detail::parse_uint<std::uint16_t>(rest.substr(0, sp2), "error code");
    e.text = std::string(rest.substr(sp2 + 1));
    if (!detail::printable_text(e.text)) throw ProtocolError(K::bad_text, "ERR text must be printable ASCII");
    return e;
  }

  const auto fields = detail::split_fields(line);
  auto expect = [&](std::size_t n) {
    if (fields.size() != n) {
      throw ProtocolError(K::field_count, std::string(verb) + " expects " + std::to_string(n - 1) + " fields");
    }
  };
  auto id = [&] { return detail::parse_uint<std::uint32_t>(fields[1], "junction id"); };
  if (verb == "JUNCTION") {
    expect(3);
    const auto mask = detail::parse_uint<std::uint32_t>(fields[2], "open_dirs");
    if (mask == 0 || mask > 7) throw ProtocolError(K::mask_out_of_range, "open_dirs out of range");
    return frame::Junction{id(), static_cast<std::uint8_t>(mask)};
  }
  if (verb == "POLL") {
    expect(2);
    return frame::Poll{id()};
  }
  if (verb == "PENDING") {
    expect(2);
    return frame::Pending{id()};
  }
  if (verb == "CMD") {
    expect(4);
    const auto junction = id();
    const auto cmd = detail::parse_uint<std::uint32_t>(fields[2], "command");
    if (cmd > 2) throw ProtocolError(K::command_out_of_range, "command out of range");
    return frame::Cmd{junction, static_cast<std::uint8_t>(cmd), detail::parse_confidence(fields[3])};
  }
  throw ProtocolError(K::unknown_verb, "unknown verb '" + std::string(verb) + "'");
}

inline const char* verb_of(const Frame& f) {
  constexpr const char* verbs[] = {"JUNCTION", "POLL", "PENDING", "CMD", "ERR"};
  return verbs[f.index()];
}

}  // namespace ssvep::loopnet
