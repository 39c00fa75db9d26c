#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <vector>

namespace hicospec::lin {

// apply the (symmetric) operator to `in`, writing `out`; both length n
using SymOp = std::function<void(const double* in, double* out)>;

struct LanczosOptions {
  int n_want = 1;
  int basis_cap = 0;      // 0: max(2.5*n_want + 32, 48), clipped to n
  double tol = 1e-10;     // residual tolerance relative to |theta|
  int max_restarts = 400;
  uint64_t start_seed = 0x5eedULL;  // fixed: results are run-independent
};

struct LanczosResult {
  // algebraically largest eigenvalues of the operator, descending
  std::vector<double> values;
  Eigen::MatrixXd vectors;  // n x n_want, orthonormal
  int op_applies = 0;
  bool converged = false;
};

// thick-restart Lanczos with full reorthogonalization. Small dense basis,
// deterministic start vector, breakdown handled by a reseeded direction.
LanczosResult lanczos_largest(const SymOp& op, int n,
                              const LanczosOptions& opt);

}  // namespace hicospec::lin
