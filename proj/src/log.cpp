#include "blimp/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>

namespace blimp {

namespace {

LogLevel from_env() {
    const char* env = std::getenv("BLIMP_LOG");
    if (env == nullptr) return LogLevel::warn;
    const std::string s(env);
    if (s == "error") return LogLevel::error;
    if (s == "info") return LogLevel::info;
    if (s == "debug") return LogLevel::debug;
    return LogLevel::warn;
}

std::atomic<int>& level_slot() {
    static std::atomic<int> level{static_cast<int>(from_env())};
    return level;
}

constexpr std::string_view kNames[] = {"error", "warn", "info", "debug"};

}  // namespace

LogLevel log_level() { return static_cast<LogLevel>(level_slot().load()); }

void set_log_level(LogLevel level) { level_slot().store(static_cast<int>(level)); }

void log(LogLevel level, std::string_view msg) {
    if (static_cast<int>(level) > level_slot().load()) return;
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    std::clog << '[' << kNames[static_cast<int>(level)] << "] " << msg << '\n';
}

}  // namespace blimp
