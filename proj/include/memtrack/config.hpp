#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "memtrack/tensor.hpp"

namespace memtrack {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class MemoryMode { kDense, kCompressed };

inline std::string to_string(MemoryMode m) {
  return m == MemoryMode::kDense ? "dense" : "compressed";
}

inline MemoryMode parse_mode(const std::string& s) {
  if (s == "dense") return MemoryMode::kDense;
  if (s == "compressed") return MemoryMode::kCompressed;
  throw ConfigError("mode must be 'dense' or 'compressed', got '" + s + "'");
}

/// Engine shape and run settings. `t` is the frame-memory capacity; `ng` and
/// `nl` are the map-wide and per-window summary token counts.
struct EngineConfig {
  int c = 32;
  int h = 16;
  int w = 16;
  int t = 4;
  int pointer_capacity = 16;
  int ng = 48;
  int nl = 16;
  int fusion_depth = 2;
  int perceiver_depth = 2;
  MemoryMode mode = MemoryMode::kCompressed;
  std::uint64_t seed = 1;
  bool use_pointers = true;

  bool operator==(const EngineConfig&) const = default;

  /// Small shape whose compression ratio mirrors the reference shape:
  /// (h*w) / (ng+nl) = 256/64 = 4 = t.
  static EngineConfig desk() { return EngineConfig{}; }

  /// Reference shape: (h*w) / (ng+nl) = 4096/512 = 8, one more than t.
  static EngineConfig full() {
    EngineConfig cfg;
    cfg.c = 64;
    cfg.h = 64;
    cfg.w = 64;
    cfg.t = 7;
    cfg.ng = 256;
    cfg.nl = 256;
    return cfg;
  }

  /// Side of the window grid; nl must be a perfect square.
  int window_grid_side() const {
    int s = static_cast<int>(std::lround(std::sqrt(static_cast<double>(nl))));
    while (s > 0 && s * s > nl) --s;
    while ((s + 1) * (s + 1) <= nl) ++s;
    return s;
  }

  /// Window shape; the whole map when the spatial path is disabled (nl=0).
  Grid window() const {
    const int side = window_grid_side();
    if (side == 0) return Grid{h, w};
    return Grid{h / side, w / side};
  }

  Grid window_grid() const {
    const int side = window_grid_side();
    return Grid{side, side};
  }

  void validate() const {
    if (c < 4 || c % 4 != 0) throw ConfigError("c must be a positive multiple of 4");
    if (h < 1 || w < 1) throw ConfigError("h and w must be positive");
    if (t < 1) throw ConfigError("t must be at least 1");
    if (pointer_capacity < 0) throw ConfigError("pointer_capacity must be non-negative");
    if (ng < 0 || nl < 0 || ng + nl < 1) {
      throw ConfigError("ng and nl must be non-negative with ng+nl >= 1");
    }
    if (fusion_depth < 1 || perceiver_depth < 1) throw ConfigError("depths must be at least 1");
    if (nl > 0) {
      const int side = window_grid_side();
      if (side * side != nl) {
        throw ConfigError("nl must be a perfect square, got " + std::to_string(nl));
      }
      if (h % side != 0 || w % side != 0) {
        throw ConfigError("window grid " + std::to_string(side) + "x" + std::to_string(side) +
                          " must tile the " + std::to_string(h) + "x" + std::to_string(w) +
                          " feature map");
      }
    }
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

inline std::int64_t parse_int(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  std::int64_t v = 0;
  try {
    v = std::stoll(value, &pos);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got '" + value + "'");
  }
  if (pos != value.size()) {
    throw ConfigError(key + ": expected an integer, got '" + value + "'");
  }
  return v;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& value) {
  const std::int64_t v = parse_int(key, value);
  if (v < 0) throw ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
  return static_cast<std::uint64_t>(v);
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError(key + ": expected true/false, got '" + value + "'");
}

}  // namespace detail

/// Apply one key=value setting. Unknown keys are rejected.
inline void apply_config_entry(EngineConfig& cfg, const std::string& key,
                               const std::string& value) {
  if (key == "c") cfg.c = static_cast<int>(detail::parse_int(key, value));
  else if (key == "h") cfg.h = static_cast<int>(detail::parse_int(key, value));
  else if (key == "w") cfg.w = static_cast<int>(detail::parse_int(key, value));
  else if (key == "t") cfg.t = static_cast<int>(detail::parse_int(key, value));
  else if (key == "pointer_capacity")
    cfg.pointer_capacity = static_cast<int>(detail::parse_int(key, value));
  else if (key == "ng") cfg.ng = static_cast<int>(detail::parse_int(key, value));
  else if (key == "nl") cfg.nl = static_cast<int>(detail::parse_int(key, value));
  else if (key == "fusion_depth") cfg.fusion_depth = static_cast<int>(detail::parse_int(key, value));
  else if (key == "perceiver_depth")
    cfg.perceiver_depth = static_cast<int>(detail::parse_int(key, value));
  else if (key == "mode") cfg.mode = parse_mode(value);
  else if (key == "seed") cfg.seed = detail::parse_uint(key, value);
  else if (key == "use_pointers") cfg.use_pointers = detail::parse_bool(key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

/// Parse a flat key=value stream. '#' starts a comment; blank lines are
/// skipped; later entries override earlier ones.
inline EngineConfig parse_config(std::istream& in, EngineConfig base = EngineConfig{}) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value, got '" + line +
                        "'");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    try {
      apply_config_entry(base, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return base;
}

inline EngineConfig parse_config_string(const std::string& text,
                                        EngineConfig base = EngineConfig{}) {
  std::istringstream in(text);
  return parse_config(in, base);
}

inline void serialize_config(const EngineConfig& cfg, std::ostream& out) {
  out << "c=" << cfg.c << "\n";
  out << "h=" << cfg.h << "\n";
  out << "w=" << cfg.w << "\n";
  out << "t=" << cfg.t << "\n";
  out << "pointer_capacity=" << cfg.pointer_capacity << "\n";
  out << "ng=" << cfg.ng << "\n";
  out << "nl=" << cfg.nl << "\n";
  out << "fusion_depth=" << cfg.fusion_depth << "\n";
  out << "perceiver_depth=" << cfg.perceiver_depth << "\n";
  out << "mode=" << to_string(cfg.mode) << "\n";
  out << "seed=" << cfg.seed << "\n";
  out << "use_pointers=" << (cfg.use_pointers ? "true" : "false") << "\n";
}

inline std::string serialize_config(const EngineConfig& cfg) {
  std::ostringstream out;
  serialize_config(cfg, out);
  return out.str();
}

}  // namespace memtrack
