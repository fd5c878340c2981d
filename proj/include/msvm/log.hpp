#pragma once

// Minimal stderr logging controlled by MSVM_LOG=error|info|debug (default: error).

#include <string>

namespace msvm::log {

enum class Level { error = 0, info = 1, debug = 2 };

Level level();
void set_level(Level level);
// Parses "error", "info" or "debug"; throws ConfigError otherwise.
Level parse_level(const std::string& name);
bool enabled(Level level);

void error(const std::string& msg);
void info(const std::string& msg);
void debug(const std::string& msg);

}  // namespace msvm::log
