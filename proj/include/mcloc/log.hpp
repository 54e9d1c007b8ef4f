#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace mcloc::log {

enum class Level { Error = 0, Warn = 1, Info = 2, Debug = 3 };

inline Level level_from_env() {
  const char* v = std::getenv("MCLOC_LOG");
  if (!v) return Level::Warn;
  if (std::strcmp(v, "error") == 0) return Level::Error;
  if (std::strcmp(v, "warn") == 0) return Level::Warn;
  if (std::strcmp(v, "info") == 0) return Level::Info;
  if (std::strcmp(v, "debug") == 0) return Level::Debug;
  return Level::Warn;
}

inline Level& threshold() {
  static Level lvl = level_from_env();
  return lvl;
}

template <typename... Args>
void emit(Level lvl, const char* tag, const char* fmt, Args... args) {
  if (lvl > threshold()) return;
  std::fprintf(stderr, "[%s] ", tag);
  std::fprintf(stderr, fmt, args...);
  std::fprintf(stderr, "\n");
}

#define MCLOC_LOG_ERROR(...) ::mcloc::log::emit(::mcloc::log::Level::Error, "error", __VA_ARGS__)
#define MCLOC_LOG_WARN(...) ::mcloc::log::emit(::mcloc::log::Level::Warn, "warn", __VA_ARGS__)
#define MCLOC_LOG_INFO(...) ::mcloc::log::emit(::mcloc::log::Level::Info, "info", __VA_ARGS__)
#define MCLOC_LOG_DEBUG(...) ::mcloc::log::emit(::mcloc::log::Level::Debug, "debug", __VA_ARGS__)

}  // namespace mcloc::log
