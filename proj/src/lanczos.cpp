#include "hicospec/lanczos.hpp"

#include <algorithm>
#include <cmath>

#include "hicospec/common.hpp"
#include "hicospec/rng.hpp"

namespace hicospec::lin {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd seeded_vector(int n, uint64_t seed) {
  SplitMix64 g(seed);
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = g.uniform(-1, 1);
  return v;
}

// two-pass classical Gram-Schmidt against the first m columns of V;
// returns the coefficients of the first pass (the projection onto the basis)
VectorXd orthogonalize(const MatrixXd& V, int m, VectorXd& w) {
  VectorXd c = VectorXd::Zero(m);
  if (m > 0) {
    c = V.leftCols(m).transpose() * w;
    w.noalias() -= V.leftCols(m) * c;
    const VectorXd c2 = V.leftCols(m).transpose() * w;
    w.noalias() -= V.leftCols(m) * c2;
  }
  return c;
}

}  // namespace

LanczosResult lanczos_largest(const SymOp& op, int n,
                              const LanczosOptions& opt) {
  if (opt.n_want < 1 || opt.n_want > n)
    throw ConfigError("lanczos: n_want outside [1, n]");
  const int want = opt.n_want;
  int cap = opt.basis_cap > 0
                ? opt.basis_cap
                : std::max(int(2.5 * want) + 32, 48);
  cap = std::min(cap, n);
  if (cap < want + 2) cap = std::min(n, want + 2);

  MatrixXd V(n, cap + 1);
  MatrixXd T = MatrixXd::Zero(cap + 1, cap + 1);
  LanczosResult res;

  VectorXd v = seeded_vector(n, opt.start_seed);
  v.normalize();
  V.col(0) = v;
  int m = 0;         // columns with computed op-columns in T
  int kept = 0;      // leading block carried over by the last restart
  uint64_t reseed = opt.start_seed;

  VectorXd w(n);
  for (int restart = 0; restart < opt.max_restarts; ++restart) {
    // extend the basis to the cap; beta_resid tracks the true remainder
    // norm of the newest column (zero after a breakdown)
    double beta_resid = 0;
    while (m < cap) {
      op(V.col(m).data(), w.data());
      ++res.op_applies;
      VectorXd c = orthogonalize(V, m + 1, w);
      for (int i = 0; i <= m; ++i) {
        T(i, m) = c[i];
        T(m, i) = c[i];
      }
      const double beta = w.norm();
      if (beta < 1e-13 * std::max(1.0, std::abs(T(m, m)))) {
        // invariant subspace hit: the recurrence continues in a fresh
        // direction with zero coupling, keeping T consistent
        beta_resid = 0;
        w = seeded_vector(n, ++reseed);
        orthogonalize(V, m + 1, w);
        const double wn = w.norm();
        if (wn < 1e-13) {
          ++m;
          break;  // basis spans the whole space
        }
        T(m + 1, m) = 0;
        T(m, m + 1) = 0;
        V.col(m + 1) = w / wn;
      } else {
        beta_resid = beta;
        T(m + 1, m) = beta;
        T(m, m + 1) = beta;
        V.col(m + 1) = w / beta;
      }
      ++m;
    }

    // Rayleigh-Ritz on the m x m block
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(T.topLeftCorner(m, m));
    const VectorXd& theta = es.eigenvalues();  // ascending
    const MatrixXd& S = es.eigenvectors();

    // residual estimate per Ritz pair: |beta * last component|
    const int navail = m;
    auto resid = [&](int col) {
      return std::abs(beta_resid * S(m - 1, col));
    };
    int converged = 0;
    for (int idx = 0; idx < std::min(want, navail); ++idx) {
      const int col = navail - 1 - idx;  // descending
      if (resid(col) <= opt.tol * std::max(std::abs(theta[col]), 1e-300))
        ++converged;
      else
        break;
    }

    const bool exhausted = m >= n;
    if (converged >= std::min(want, navail) || exhausted ||
        restart == opt.max_restarts - 1) {
      const int take = std::min(want, navail);
      res.values.resize(take);
      res.vectors.resize(n, take);
      for (int idx = 0; idx < take; ++idx) {
        const int col = navail - 1 - idx;
        res.values[idx] = theta[col];
        res.vectors.col(idx) = V.leftCols(m) * S.col(col);
      }
      res.converged = converged >= take || exhausted;
      return res;
    }

    // thick restart: keep the leading Ritz vectors plus a buffer
    kept = std::min(want + std::max(8, want / 4), m - 2);
    MatrixXd Y(n, kept);
    for (int idx = 0; idx < kept; ++idx)
      Y.col(idx) = V.leftCols(m) * S.col(navail - 1 - idx);
    const VectorXd r = V.col(m);  // normalized residual direction
    V.leftCols(kept) = Y;
    V.col(kept) = r;
    T.setZero();
    for (int idx = 0; idx < kept; ++idx) {
      const int col = navail - 1 - idx;
      T(idx, idx) = theta[col];
      const double coupling = beta_resid * S(m - 1, col);
      T(idx, kept) = coupling;
      T(kept, idx) = coupling;
    }
    m = kept;
  }
  return res;
}

}  // namespace hicospec::lin
