#pragma once

#include <cstdio>
#include <cstdlib>
#include <string>

namespace sigmma {

enum class LogLevel { error = 0, info = 1, debug = 2 };

// Controlled by SIGMMA_LOG={error,info,debug}; defaults to info.
inline LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("SIGMMA_LOG");
    if (env == nullptr) return LogLevel::info;
    const std::string v(env);
    if (v == "error") return LogLevel::error;
    if (v == "debug") return LogLevel::debug;
    return LogLevel::info;
  }();
  return level;
}

inline void log_error(const std::string& msg) {
  std::fprintf(stderr, "[sigmma][error] %s\n", msg.c_str());
}

inline void log_warn(const std::string& msg) {
  if (log_level() >= LogLevel::info)
    std::fprintf(stderr, "[sigmma][warn] %s\n", msg.c_str());
}

inline void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::info)
    std::fprintf(stderr, "[sigmma][info] %s\n", msg.c_str());
}

inline void log_debug(const std::string& msg) {
  if (log_level() >= LogLevel::debug)
    std::fprintf(stderr, "[sigmma][debug] %s\n", msg.c_str());
}

}  // namespace sigmma
