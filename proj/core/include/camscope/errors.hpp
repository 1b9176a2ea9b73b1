#pragma once

#include <stdexcept>
#include <string>

namespace camscope {

/// File and stream failures. Validation problems use std::invalid_argument.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace camscope
