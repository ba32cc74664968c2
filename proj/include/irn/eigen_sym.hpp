#pragma once

#include "irn/vec.hpp"

namespace irn {

struct SymEig {
  Vec values;   // descending; ties keep original index order
  Mat vectors;  // column j is the eigenvector of values[j]
};

// Dense symmetric eigendecomposition: Householder tridiagonalization
// followed by QL with implicit shifts. O(n^3); intended for n <= ~1024.
// Throws std::invalid_argument if the input is not symmetric to 1e-12
// (relative to the largest entry) and std::runtime_error if QL fails to
// converge (pathological input).
SymEig eig_sym(Mat a);

}  // namespace irn
