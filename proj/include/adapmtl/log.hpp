#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

namespace adapmtl::log {

enum class Level { Debug = 0, Info = 1, Warn = 2, Error = 3 };

// Threshold comes from AMTL_LOG_LEVEL (debug|info|warn|error), default info.
inline Level threshold() {
  static const Level level = [] {
    const char* env = std::getenv("AMTL_LOG_LEVEL");
    if (env == nullptr) return Level::Info;
    if (std::strcmp(env, "debug") == 0) return Level::Debug;
    if (std::strcmp(env, "info") == 0) return Level::Info;
    if (std::strcmp(env, "warn") == 0) return Level::Warn;
    if (std::strcmp(env, "error") == 0) return Level::Error;
    return Level::Info;
  }();
  return level;
}

inline void emit(Level level, const std::string& msg) {
  if (level < threshold()) return;
  const char* tag = "info";
  switch (level) {
    case Level::Debug: tag = "debug"; break;
    case Level::Info: tag = "info"; break;
    case Level::Warn: tag = "warn"; break;
    case Level::Error: tag = "error"; break;
  }
  std::fprintf(stderr, "[%s] %s\n", tag, msg.c_str());
}

inline void debug(const std::string& msg) { emit(Level::Debug, msg); }
inline void info(const std::string& msg) { emit(Level::Info, msg); }
inline void warn(const std::string& msg) { emit(Level::Warn, msg); }
inline void error(const std::string& msg) { emit(Level::Error, msg); }

}  // namespace adapmtl::log
