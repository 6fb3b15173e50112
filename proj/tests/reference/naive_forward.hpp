#pragma once

#include <vector>

#include "ebp/tinyformer.hpp"

namespace ebp::reftf {

/// Straight-line scalar-loop re-implementation of the transformer forward
/// pass. Shares nothing with the production path except the parameter struct;
/// kept as the independent oracle for forward correctness and as the serial
/// baseline in the kernel benchmark.
std::vector<double> forward_naive(const tf::ModelParams& p, const std::vector<int>& xs);

}  // namespace ebp::reftf
