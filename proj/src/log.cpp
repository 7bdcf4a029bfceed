#include "pulsesync/log.hpp"

#include <cstdlib>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace pulsesync {

void init_logging() {
  auto logger = spdlog::get("pulsesync");
  if (!logger) logger = spdlog::stderr_color_mt("pulsesync");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("PULSESYNC_LOG")) {
    const auto level = spdlog::level::from_str(env);
    // from_str maps unknown names to off; only honour an explicit "off".
    if (level != spdlog::level::off || std::string(env) == "off") spdlog::set_level(level);
  }
}

} // namespace pulsesync
