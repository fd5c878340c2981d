#include "msvm/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>

#include "msvm/errors.hpp"

namespace msvm::log {
namespace {

Level from_env() {
  const char* v = std::getenv("MSVM_LOG");
  if (!v || !*v) return Level::error;
  try {
    return parse_level(v);
  } catch (const ConfigError&) {
    std::cerr << "[msvm] ignoring unknown MSVM_LOG value '" << v << "'\n";
    return Level::error;
  }
}

std::atomic<int>& current() {
  static std::atomic<int> lvl{static_cast<int>(from_env())};
  return lvl;
}

void emit(const char* tag, const std::string& msg) {
  static std::mutex mu;
  std::lock_guard lock(mu);
  std::cerr << "[msvm " << tag << "] " << msg << "\n";
}

}  // namespace

Level level() { return static_cast<Level>(current().load()); }
void set_level(Level l) { current().store(static_cast<int>(l)); }

Level parse_level(const std::string& name) {
  if (name == "error") return Level::error;
  if (name == "info") return Level::info;
  if (name == "debug") return Level::debug;
  throw ConfigError("unknown log level '" + name + "' (expected error, info or debug)");
}

bool enabled(Level l) { return static_cast<int>(l) <= current().load(); }

void error(const std::string& msg) { emit("error", msg); }
void info(const std::string& msg) {
  if (enabled(Level::info)) emit("info", msg);
}
void debug(const std::string& msg) {
  if (enabled(Level::debug)) emit("debug", msg);
}

}  // namespace msvm::log
