#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

namespace digan::logging {

enum class Level { debug = 0, info = 1, warn = 2 };

// Level comes from DIGAN_LOG (debug|info|warn); default info.
inline Level threshold() {
    static const Level level = [] {
        const char* env = std::getenv("DIGAN_LOG");
        if (env == nullptr) return Level::info;
        if (std::strcmp(env, "debug") == 0) return Level::debug;
        if (std::strcmp(env, "warn") == 0) return Level::warn;
        return Level::info;
    }();
    return level;
}

inline void emit(Level level, const std::string& msg) {
    if (level < threshold()) return;
    const char* tag = level == Level::debug ? "debug" : level == Level::info ? "info" : "warn";
    std::fprintf(stderr, "[digan %s] %s\n", tag, msg.c_str());
}

inline void debug(const std::string& msg) { emit(Level::debug, msg); }
inline void info(const std::string& msg) { emit(Level::info, msg); }
inline void warn(const std::string& msg) { emit(Level::warn, msg); }

} // namespace digan::logging
