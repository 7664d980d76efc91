#pragma once

#include <spdlog/spdlog.h>

namespace plunder {

/// Library logger writing to stderr. Level comes from PLUNDER_LOG
/// (trace, debug, info, warn, error, off); default is warn.
spdlog::logger& log();

}  // namespace plunder
