#include "steadyop/log.hpp"

#include <spdlog/sinks/stdout_sinks.h>

namespace steadyop {

spdlog::logger& log() {
  static const std::shared_ptr<spdlog::logger> logger = [] {
    auto l = spdlog::stderr_logger_mt("steadyop");
    l->set_pattern("[%H:%M:%S] [%l] %v");
    return l;
  }();
  return *logger;
}

}  // namespace steadyop
