#pragma once

#include <spdlog/spdlog.h>

#include <memory>

namespace steadyop {

/// Process-wide logger writing to stderr.
spdlog::logger& log();

}  // namespace steadyop
