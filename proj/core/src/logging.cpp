#include "inverse_uq/logging.hpp"

#include <iostream>
#include <mutex>

namespace inverse_uq::logging {

namespace {

struct State {
  std::mutex mutex;
  std::ostream* sink = &std::clog;
  Level level = Level::info;
};

State& state() {
  static State s;
  return s;
}

const char* level_name(Level level) {
  switch (level) {
    case Level::debug: return "debug";
    case Level::info: return "info";
    case Level::warn: return "warn";
    case Level::error: return "error";
  }
  return "info";
}

}  // namespace

void event(Level level, std::string_view name, const nlohmann::json& fields) {
  State& s = state();
  std::lock_guard lock(s.mutex);
  if (s.sink == nullptr || level < s.level) return;
  nlohmann::json line = {{"level", level_name(level)}, {"event", name}};
  if (fields.is_object()) {
    for (auto it = fields.begin(); it != fields.end(); ++it) line[it.key()] = it.value();
  }
  *s.sink << line.dump() << '\n';
}

void set_sink(std::ostream* sink) {
  std::lock_guard lock(state().mutex);
  state().sink = sink;
}

void set_level(Level level) {
  std::lock_guard lock(state().mutex);
  state().level = level;
}

}  // namespace inverse_uq::logging
