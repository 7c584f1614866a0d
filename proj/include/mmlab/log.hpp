#pragma once

#include <sstream>
#include <string>

namespace mmlab::log {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

// Current level, read once from the MMLAB_LOG environment variable
// (error|warn|info|debug, default warn).
Level level();

void write(Level lv, const std::string& msg);

namespace detail {
template <typename... Args>
std::string cat(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}
}  // namespace detail

template <typename... Args>
void error(Args&&... args) {
  write(Level::error, detail::cat(std::forward<Args>(args)...));
}
template <typename... Args>
void warn(Args&&... args) {
  write(Level::warn, detail::cat(std::forward<Args>(args)...));
}
template <typename... Args>
void info(Args&&... args) {
  write(Level::info, detail::cat(std::forward<Args>(args)...));
}
template <typename... Args>
void debug(Args&&... args) {
  write(Level::debug, detail::cat(std::forward<Args>(args)...));
}

}  // namespace mmlab::log
