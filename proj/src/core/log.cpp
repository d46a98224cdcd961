#include "volformer/core/log.hpp"

#include <iostream>
#include <mutex>

namespace volformer {

namespace {
std::mutex g_log_mutex;
LogLevel g_threshold = LogLevel::info;

void stderr_sink(LogLevel level, const std::string& message) {
  std::cerr << "[" << level_name(level) << "] " << message << "\n";
}

LogSink& sink() {
  static LogSink s = stderr_sink;
  return s;
}
}  // namespace

const char* level_name(LogLevel level) {
  switch (level) {
    case LogLevel::debug: return "debug";
    case LogLevel::info: return "info";
    case LogLevel::warning: return "warning";
    case LogLevel::error: return "error";
  }
  return "?";
}

LogSink set_log_sink(LogSink s) {
  std::lock_guard lock(g_log_mutex);
  LogSink previous = std::move(sink());
  sink() = s ? std::move(s) : LogSink(stderr_sink);
  return previous;
}

void set_log_threshold(LogLevel level) {
  std::lock_guard lock(g_log_mutex);
  g_threshold = level;
}

void log_message(LogLevel level, const std::string& message) {
  std::lock_guard lock(g_log_mutex);
  if (level < g_threshold) return;
  sink()(level, message);
}

ScopedLogCapture::ScopedLogCapture() {
  previous_ = set_log_sink([this](LogLevel level, const std::string& m) { messages_.emplace_back(level, m); });
}

ScopedLogCapture::~ScopedLogCapture() { set_log_sink(std::move(previous_)); }

bool ScopedLogCapture::contains(const std::string& fragment) const {
  for (const auto& [level, m] : messages_)
    if (m.find(fragment) != std::string::npos) return true;
  return false;
}

}  // namespace volformer
