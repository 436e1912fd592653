#include "telemote/log.hpp"

#include <atomic>
#include <cstdio>

namespace telemote::log {

namespace {
std::atomic<Level> g_level{Level::Silent};
}

void set_level(Level level) { g_level.store(level); }
Level level() { return g_level.load(); }

void info(const std::string& msg) {
    if (level() >= Level::Info) std::fprintf(stderr, "[telemote] %s\n", msg.c_str());
}

void debug(const std::string& msg) {
    if (level() >= Level::Debug) std::fprintf(stderr, "[telemote] %s\n", msg.c_str());
}

} // namespace telemote::log
