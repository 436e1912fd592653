#pragma once

#include <string>

namespace telemote::log {

enum class Level { Silent = 0, Info = 1, Debug = 2 };

void set_level(Level level);
Level level();

void info(const std::string& msg);
void debug(const std::string& msg);

} // namespace telemote::log
