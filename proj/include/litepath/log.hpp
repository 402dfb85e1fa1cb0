#pragma once

#include <atomic>
#include <iostream>
#include <mutex>
#include <string_view>

namespace litepath {

enum class LogLevel { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

inline std::atomic<LogLevel>& log_threshold() {
  static std::atomic<LogLevel> level{LogLevel::warn};
  return level;
}

inline void log(LogLevel level, std::string_view msg) {
  if (level < log_threshold().load()) return;
  static std::mutex mu;
  static constexpr const char* names[] = {"debug", "info", "warn", "error"};
  std::lock_guard lock(mu);
  std::clog << "[litepath " << names[static_cast<int>(level)] << "] " << msg << '\n';
}

inline void log_info(std::string_view msg) { log(LogLevel::info, msg); }
inline void log_warn(std::string_view msg) { log(LogLevel::warn, msg); }

}  // namespace litepath
