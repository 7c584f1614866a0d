#include "mmlab/log.hpp"

#include <cstdlib>
#include <iostream>
#include <mutex>

namespace mmlab::log {

Level level() {
  static const Level lv = [] {
    const char* env = std::getenv("MMLAB_LOG");
    if (!env) return Level::warn;
    const std::string s(env);
    if (s == "error") return Level::error;
    if (s == "warn") return Level::warn;
    if (s == "info") return Level::info;
    if (s == "debug") return Level::debug;
    return Level::warn;
  }();
  return lv;
}

void write(Level lv, const std::string& msg) {
  if (lv > level()) return;
  static std::mutex mu;
  static const char* tags[] = {"error", "warn", "info", "debug"};
  std::lock_guard<std::mutex> lock(mu);
  std::cerr << "[mmlab:" << tags[static_cast<int>(lv)] << "] " << msg << "\n";
}

}  // namespace mmlab::log
