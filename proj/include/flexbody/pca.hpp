#pragma once

#include <vector>

#include "flexbody/types.hpp"

namespace flexbody {

struct PcaResult {
  Mat components;    // columns, descending eigenvalue
  Vec eigenvalues;
  Mat projected;     // one row per input point
  bool degenerate = false;  // all points identical
};

/// Mean-centered covariance eigendecomposition with a deterministic sign
/// convention (largest-magnitude entry of each component positive).
PcaResult pca2(const std::vector<Vec>& points);

}  // namespace flexbody
