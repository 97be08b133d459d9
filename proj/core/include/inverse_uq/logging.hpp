#pragma once

#include <nlohmann/json.hpp>

#include <iosfwd>
#include <string_view>

namespace inverse_uq::logging {

enum class Level { debug = 0, info = 1, warn = 2, error = 3 };

/// Emits one line-delimited JSON event: {"level":..,"event":..,<fields>}.
void event(Level level, std::string_view name, const nlohmann::json& fields = nlohmann::json::object());

inline void warn(std::string_view name, const nlohmann::json& fields = nlohmann::json::object()) {
  event(Level::warn, name, fields);
}
inline void info(std::string_view name, const nlohmann::json& fields = nlohmann::json::object()) {
  event(Level::info, name, fields);
}

/// Redirects events (default std::clog). Pass nullptr to silence.
void set_sink(std::ostream* sink);
void set_level(Level level);

}  // namespace inverse_uq::logging
