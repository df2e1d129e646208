#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>

namespace lactate {

/// Invalid configuration or usage; the CLI maps it to exit code 2.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input data that cannot be processed (bad headers, unparseable tables).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training diverged (NaN loss and similar).
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Diagnostics sink. The library only reports warnings; the CLI decides the
// format (plain text or JSON lines).
enum class LogLevel { Debug, Info, Warn, Error };

inline std::string_view to_string(LogLevel level) {
  switch (level) {
    case LogLevel::Debug: return "debug";
    case LogLevel::Info: return "info";
    case LogLevel::Warn: return "warn";
    case LogLevel::Error: return "error";
  }
  return "info";
}

using LogSink = std::function<void(LogLevel, std::string_view component, std::string_view message)>;

namespace detail {
inline std::mutex& log_mutex() {
  static std::mutex m;
  return m;
}
inline LogSink& log_sink() {
  static LogSink sink = [](LogLevel level, std::string_view component, std::string_view message) {
    if (level == LogLevel::Debug) return;
    std::cerr << "[" << to_string(level) << "] " << component << ": " << message << '\n';
  };
  return sink;
}
}  // namespace detail

inline void set_log_sink(LogSink sink) {
  std::lock_guard lock(detail::log_mutex());
  detail::log_sink() = std::move(sink);
}

inline void log(LogLevel level, std::string_view component, std::string_view message) {
  std::lock_guard lock(detail::log_mutex());
  if (detail::log_sink()) detail::log_sink()(level, component, message);
}

inline void warn(std::string_view component, std::string_view message) {
  log(LogLevel::Warn, component, message);
}

}  // namespace lactate
