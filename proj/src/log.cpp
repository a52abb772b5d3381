#include "odseg/log.hpp"

#include <cstdio>
#include <mutex>

namespace odseg {

namespace {

std::mutex& log_mutex() {
  static std::mutex m;
  return m;
}

LogLevel g_level = LogLevel::kInfo;

void stderr_sink(LogLevel level, const std::string& message) {
  static constexpr const char* kNames[] = {"debug", "info", "warn", "error"};
  std::fprintf(stderr, "[%s] %s\n", kNames[static_cast<int>(level)], message.c_str());
}

LogSink& sink() {
  static LogSink s = stderr_sink;
  return s;
}

}  // namespace

void set_log_sink(LogSink s) {
  std::lock_guard lock(log_mutex());
  sink() = std::move(s);
}

void set_log_level(LogLevel level) {
  std::lock_guard lock(log_mutex());
  g_level = level;
}

void log(LogLevel level, const std::string& message) {
  std::lock_guard lock(log_mutex());
  if (level < g_level || !sink()) return;
  sink()(level, message);
}

}  // namespace odseg
