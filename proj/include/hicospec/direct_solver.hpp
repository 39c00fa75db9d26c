#pragma once

#include <Eigen/Sparse>
#include <cstdint>
#include <string>
#include <vector>

#include "hicospec/common.hpp"
#include "hicospec/geometry.hpp"
#include "hicospec/shape_spectra.hpp"

namespace hicospec::ds {

enum class Bc { dirichlet, periodic };

// High-contrast operator on a uniform cell-centered grid: coefficient
// eps^2 on inclusion cells, a1 elsewhere, flux form with harmonic-mean
// face coefficients.  Dirichlet enforces zero at face midpoints (ghost
// value = -cell value); periodic wraps both axes.  Row-major layout,
// idx = j*nx + i, cell centers at box.lo + (i+1/2, j+1/2) h.
struct GridOperator {
  Bc bc = Bc::dirichlet;
  int nx = 0, ny = 0;
  double h = 0;
  Box box;
  double eps = 1;
  double a1 = 1;
  std::vector<uint8_t> soft;  // 1 = inclusion cell

  std::size_t idx(int i, int j) const {
    return std::size_t(j) * nx + i;
  }
  std::int64_t cells() const { return std::int64_t(nx) * ny; }
  double coeff(std::size_t c) const { return soft[c] ? eps * eps : a1; }
  double trust_ceiling(double c_trust = 0.1) const {
    return c_trust / (h * h);
  }
  void apply(const double* u, double* out) const;
  // mask even under both axis mirrors (needed for the sector split)
  bool mirror_symmetric() const;
};

// Operator over the eps-scaled realization: the grid box is eps * window,
// nx = round(edge/h) with h snapped to fit.  Requires h small enough that
// the narrowest inclusion spans at least 16 cells.
GridOperator assemble(const geo::Realization& real, double eps, double h,
                      Bc bc, double a1 = 1);

// sparse lower triangle of the operator (column-sorted, diagonal first)
Eigen::SparseMatrix<double> sparse_matrix(const GridOperator& op);

// Mirror-symmetry sector operator: the lower-left quadrant with wall
// condition of parity (px, py) at the two interior symmetry planes
// (0 = even/Neumann, 1 = odd/Dirichlet).  The four sector spectra
// partition the full spectrum.  Dirichlet bc, even nx and ny, and a
// mirror-symmetric mask are required.
Eigen::SparseMatrix<double> sector_matrix(const GridOperator& op, int px,
                                          int py);

// Certified count of eigenvalues strictly below t (LDLT inertia).  Large
// mirror-symmetric operators are counted sector by sector; large
// asymmetric ones are refused rather than estimated.
int eig_count_below(const GridOperator& op, double t);
int eig_count_below_sectored(const GridOperator& op, double t);

struct WindowOptions {
  int max_count = 64;
  std::uint64_t seed = 0x5eedULL;
  bool keep_vectors = true;
  double c_trust = 0.1;
};

struct SpectrumWindow {
  double t1 = 0, t2 = 0;
  std::vector<double> lambda;    // ascending, complete in [t1, t2]
  std::vector<double> residual;  // ||A v - lambda v|| / max(|lambda|, 1)
  std::vector<std::vector<double>> vectors;  // unit l2; kept on request
  int count_below_t1 = 0;
  int solves = 0;
};

// Every eigenvalue in [t1, t2], each certified to relative residual
// 1e-8, completeness certified against LDLT inertia counts at the window
// edges.  Eigenvalues are located by inertia-guided slicing with a
// shift-invert sweep per slice, so tight clusters resolve reliably.
// Deterministic for a fixed starting seed.  An eigenvalue numerically
// indistinguishable from t2 itself may fall either side of the cut.
SpectrumWindow spectrum_window(const GridOperator& op, double t1, double t2,
                               const WindowOptions& opt = {});

struct QuasimodeReport {
  std::string tag;      // "plane-wave" or "marking"
  double lambda = 0;
  double eps = 0;
  double cutoff = 0;    // L: bump support edge / marking support box
  double box_edge = 0;
  double k = 0;         // wave number along e1 (plane-wave only)
  double residual = 0;  // (lambda+1) ||u_eps - u_hat|| / ||u_hat||
  double residual_direct = 0;  // ||(A - lambda) u_hat|| / ||u_hat||
  double mass_ratio = 0;       // ||u_hat||_{box^L} / ||u_hat||
  int cg_iters = 0;
  double cg_rel = 0;
};

// Cutoff plane wave dressed by the per-inclusion resolvent field:
// u = eta_L(x) cos(k x1) with ahom k^2 = beta, u_eps = (1 + lambda b) u,
// u_hat = (A + 1)^{-1} (lambda + 1) u_eps.  eta_L is the tensor quintic
// bump, 1 on box(L/2), 0 outside box(L); on a torus with L >= box edge
// the cutoff degenerates to 1 and k snaps to the lattice of periodic
// wave numbers.  shape_h = 0 picks the micro resolution matching the
// operator grid.
QuasimodeReport plane_wave_quasimode(const GridOperator& op,
                                     const geo::Realization& real,
                                     double lambda, double beta, double ahom,
                                     double L, double shape_h = 0);

// Raw marking field: mark * phi((x - eps c)/eps) on every inclusion of
// the modes' shape inside the centered box of edge L, zero elsewhere.
// Opposite marks on identically placed inclusions cancel in the mean.
std::vector<double> marking_field(const GridOperator& op,
                                  const geo::Realization& real,
                                  const spectra::ShapeModes& modes, int mode,
                                  const geo::Marking& marking, double L = 1);

// Inclusion-eigenfunction quasimode built from marking_field, evaluated
// at lambda = the mode's discrete eigenvalue.
QuasimodeReport marking_quasimode(const GridOperator& op,
                                  const geo::Realization& real,
                                  const spectra::ShapeModes& modes, int mode,
                                  const geo::Marking& marking, double L = 1);

double mass_ratio(const GridOperator& op, const std::vector<double>& v,
                  double L);

// flag = eigenvector mass ratio on the centered box of edge L > c_mass
std::vector<std::uint8_t> relevance_classify(
    const GridOperator& op, const std::vector<std::vector<double>>& vecs,
    double L, double c_mass = 0.1);

// removes every inclusion whose closed bounding box meets box
geo::Realization void_injection(const geo::Realization& real,
                                const Box& box);

}  // namespace hicospec::ds
