#pragma once

#include <functional>
#include <string>

namespace odseg {

enum class LogLevel { kDebug, kInfo, kWarn, kError };

using LogSink = std::function<void(LogLevel, const std::string&)>;

/// Replaces the process-wide sink (default: stderr, info and above).
/// Passing nullptr silences logging.
void set_log_sink(LogSink sink);
void set_log_level(LogLevel level);

void log(LogLevel level, const std::string& message);
inline void log_info(const std::string& m) { log(LogLevel::kInfo, m); }
inline void log_warn(const std::string& m) { log(LogLevel::kWarn, m); }
inline void log_debug(const std::string& m) { log(LogLevel::kDebug, m); }

}  // namespace odseg
