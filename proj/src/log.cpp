#include "fo3d/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace fo3d {

namespace {

std::atomic<LogLevel> g_level{LogLevel::kInfo};
std::mutex g_mutex;

void emit(LogLevel level, const char* tag, const std::string& msg) {
  if (level < g_level.load()) return;
  std::lock_guard<std::mutex> lock(g_mutex);
  std::cerr << "[fo3d " << tag << "] " << msg << '\n';
}

}  // namespace

void set_log_level(LogLevel level) { g_level.store(level); }
LogLevel log_level() { return g_level.load(); }

void log_debug(const std::string& msg) { emit(LogLevel::kDebug, "debug", msg); }
void log_info(const std::string& msg) { emit(LogLevel::kInfo, "info", msg); }
void log_warning(const std::string& msg) { emit(LogLevel::kWarning, "warn", msg); }
void log_error(const std::string& msg) { emit(LogLevel::kError, "error", msg); }

}  // namespace fo3d
