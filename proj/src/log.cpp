#include "semod/log.hpp"

#include <atomic>
#include <mutex>

namespace semod::log {

namespace {
std::atomic<Level> g_threshold{Level::kInfo};
std::atomic<std::size_t> g_warnings{0};
std::mutex g_write_mutex;

const char* tag(Level level) {
  switch (level) {
    case Level::kDebug: return "debug";
    case Level::kInfo: return "info";
    case Level::kWarn: return "warning";
    case Level::kError: return "error";
    case Level::kOff: break;
  }
  return "";
}
}  // namespace

Level threshold() { return g_threshold.load(); }
void set_threshold(Level level) { g_threshold.store(level); }
std::size_t warning_count() { return g_warnings.load(); }

void write(Level level, std::string_view message) {
  if (level == Level::kWarn) ++g_warnings;
  if (level < g_threshold.load()) return;
  std::lock_guard lock(g_write_mutex);
  std::fprintf(stderr, "[semod %s] %.*s\n", tag(level), static_cast<int>(message.size()), message.data());
}

}  // namespace semod::log
