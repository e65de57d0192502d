// Minimal leveled logging to stderr; the level comes from BLIMP_LOG
// (error | warn | info | debug, default warn).
#pragma once

#include <string_view>

namespace blimp {

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

LogLevel log_level();
void set_log_level(LogLevel level);
void log(LogLevel level, std::string_view msg);

inline void log_info(std::string_view msg) { log(LogLevel::info, msg); }
inline void log_warn(std::string_view msg) { log(LogLevel::warn, msg); }
inline void log_debug(std::string_view msg) { log(LogLevel::debug, msg); }

}  // namespace blimp
