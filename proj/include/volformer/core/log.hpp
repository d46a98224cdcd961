#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace volformer {

enum class LogLevel { debug, info, warning, error };

const char* level_name(LogLevel level);

using LogSink = std::function<void(LogLevel, const std::string&)>;

/// Replaces the process-wide sink (stderr by default); returns the previous one.
LogSink set_log_sink(LogSink sink);
/// Messages below `level` are dropped.
void set_log_threshold(LogLevel level);

void log_message(LogLevel level, const std::string& message);
inline void log_debug(const std::string& m) { log_message(LogLevel::debug, m); }
inline void log_info(const std::string& m) { log_message(LogLevel::info, m); }
inline void log_warning(const std::string& m) { log_message(LogLevel::warning, m); }
inline void log_error(const std::string& m) { log_message(LogLevel::error, m); }

/// Collects messages for the lifetime of the object (tests and audits).
class ScopedLogCapture {
 public:
  ScopedLogCapture();
  ~ScopedLogCapture();
  ScopedLogCapture(const ScopedLogCapture&) = delete;
  ScopedLogCapture& operator=(const ScopedLogCapture&) = delete;

  const std::vector<std::pair<LogLevel, std::string>>& messages() const { return messages_; }
  bool contains(const std::string& fragment) const;

 private:
  std::vector<std::pair<LogLevel, std::string>> messages_;
  LogSink previous_;
};

}  // namespace volformer
