#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "hicospec/geometry.hpp"

namespace hicospec::hom {

// Periodic perforated cell covering [0, nx h] x [0, ny h].  hole[c] = 1
// marks the soft phase; its cells carry no degrees of freedom and the
// fluxes through their faces are removed.  A1 must be diagonal: the
// 5-point flux stencil cannot represent cross couplings.
struct CellProblem {
  int nx = 0, ny = 0;
  double h = 0;
  double a1x = 1, a1y = 1;
  std::vector<std::uint8_t> hole;

  int idx(int i, int j) const { return j * nx + i; }
  int cells() const { return nx * ny; }
  double edge_x() const { return nx * h; }
  double edge_y() const { return ny * h; }
  double theta() const;
  int stiff_count() const;
  // shape consistency, positive coefficients, connected stiff phase
  void validate() const;
};

CellProblem empty_cell(int n, double edge = 1);
// shape centered in the cell, occupying shape extents times scale
CellProblem hole_cell(const geo::Shape& shape, double scale, int n,
                      double edge = 1);
// torus the size of the realization window, perforated by the inclusions
CellProblem supercell(const geo::Realization& real, double h);

struct Corrector {
  int j = 0;  // direction: 0 for x, 1 for y
  std::vector<double> n;  // cell-centered, zero on holes, zero mean on stiff
  double rel_residual = 0;
  int iters = 0;
  double norm_n = 0;     // L2 over the cell, zero extension into holes
  double norm_grad = 0;  // face-gradient L2 over the cell
};

// periodic cell problem div(A1 (e_j + grad N)) = 0 on the stiff phase,
// solved by mean-projected CG to relative residual 1e-10
Corrector solve_corrector(const CellProblem& cell, int j);

struct HomogenizedTensor {
  std::array<std::array<double, 2>, 2> a{};
  double theta = 0;
  double h = 0;
  std::array<double, 2> residual{};
  double min_eig() const;
  bool spd() const;
};

HomogenizedTensor homogenized_matrix(const CellProblem& cell);
HomogenizedTensor homogenized_matrix(const CellProblem& cell,
                                     const Corrector& nx_dir,
                                     const Corrector& ny_dir);

// stream function representation of the skew flux corrector: the flux
// difference g = chi A1 (e_j + grad N) - Ahom e_j is divergence-free
// with zero mean, so it is reproduced exactly by corner differences of
// psi; div_defect records the achieved relative reproduction error
struct FluxCorrector {
  int j = 0;
  std::vector<double> psi;  // corner grid, zero mean
  double norm_g = 0;        // Frobenius L2 of the skew field, sqrt(2)|psi|
  double norm_flux = 0;     // L2 of the flux difference g itself
  double div_defect = 0;
  double mean_defect = 0;  // relative mean of g, should be ~0 by assembly
};

FluxCorrector flux_corrector(const CellProblem& cell, const Corrector& corr,
                             const HomogenizedTensor& ahom);

// B with face-divergence exactly f - mean(f) on the periodic grid
struct DivergencePotential {
  int nx = 0, ny = 0;
  double h = 0;
  std::vector<double> bx, by;  // west and south face fields
  double removed_mean = 0;
  double div_defect = 0;
  double norm = 0;  // physical L2 of the cell-averaged vector field
};

DivergencePotential divergence_potential(const std::vector<double>& f, int nx,
                                         int ny, double h);

struct CorrectorDiagnostics {
  double eps = 0;
  double box = 0;  // window edge L
  double lambda = 0;
  std::array<double, 2> norm_n{};    // |N_j^eps| over the window
  std::array<double, 2> norm_grad{};
  std::array<double, 2> norm_g{};
  double norm_b = 0;
  double rhat = 0;
};

// physically scaled window norms of cell correctors: N^eps = eps N(x/eps)
CorrectorDiagnostics diagnostics(const CellProblem& cell,
                                 const Corrector& n0, const Corrector& n1,
                                 const FluxCorrector& g0,
                                 const FluxCorrector& g1, double norm_b,
                                 double eps, double box, double lambda);

// C(lambda) = c1 (1 + |beta| + lambda^2 (1+sqrt|beta|)
//             + lambda^(3/2) (1+sqrt|beta|) / d_lambda)
double lambda_constant(double lambda, double beta_abs, double d_lambda,
                       double c1 = 1);

// R = C(lambda) (L^{-d/2} sum_j (|N_j| + |G_j| + eps |grad N_j|)
//                + L^{-d/2} |B| + 1/L + eps), d = 2; stores rhat
double error_aggregate(CorrectorDiagnostics& diag, double beta_abs,
                       double d_lambda, double c1 = 1);

}  // namespace hicospec::hom
