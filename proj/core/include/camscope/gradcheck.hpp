#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "camscope/tensor.hpp"

namespace camscope::gradcheck {

struct CheckResult {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = false;
};

struct Options {
    /// Default draw keeps every finite-difference probe clear of ReLU and
    /// argmax kinks in the end-to-end network case; not every seed does.
    std::uint64_t seed = 9;
    double h = 1e-5;
    double tolerance = 1e-4;
    /// Perturbs one backward gradient before comparison so the suite must
    /// fail (negative control for the harness itself).
    bool inject_fault = false;
};

/// Max over elements of |a - b| / max(1e-6, |a|, |b|).
double relative_gap(const Tensor& a, const Tensor& b);

/// Central-difference agreement for every recorded primitive plus a full
/// small segmentation network; one entry per check.
std::vector<CheckResult> run_suite(const Options& opts);

}  // namespace camscope::gradcheck
