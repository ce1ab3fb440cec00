#pragma once

#include <stdexcept>
#include <string>

namespace nledn {

// All recoverable failures (shape mismatches, bad files, corrupt
// checkpoints) are reported through this type so callers can map them
// to exit codes uniformly.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace nledn
