#include "hicospec/homogenization.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "hicospec/common.hpp"
#include "hicospec/fft_poisson.hpp"

namespace hicospec::hom {

double CellProblem::theta() const {
  return cells() ? 1.0 - static_cast<double>(stiff_count()) / cells() : 0.0;
}

int CellProblem::stiff_count() const {
  int s = 0;
  for (auto v : hole) s += v == 0;
  return s;
}

void CellProblem::validate() const {
  if (nx < 2 || ny < 2 || h <= 0)
    throw ConfigError("cell problem: grid must be at least 2x2");
  if (a1x <= 0 || a1y <= 0)
    throw ConfigError("cell problem: A1 diagonal must be positive");
  if (static_cast<int>(hole.size()) != cells())
    throw ConfigError("cell problem: mask size mismatch");
  const int stiff = stiff_count();
  if (stiff == 0)
    throw ConfigError("cell problem: no conductive cells");

  // periodic flood fill over the stiff phase
  std::vector<std::uint8_t> seen(hole.size(), 0);
  std::vector<int> queue;
  int start = 0;
  while (hole[start]) ++start;
  queue.push_back(start);
  seen[start] = 1;
  int reached = 0;
  while (!queue.empty()) {
    const int c = queue.back();
    queue.pop_back();
    ++reached;
    const int i = c % nx, j = c / nx;
    const int nb[4] = {idx((i + 1) % nx, j), idx((i + nx - 1) % nx, j),
                       idx(i, (j + 1) % ny), idx(i, (j + ny - 1) % ny)};
    for (int t : nb)
      if (!hole[t] && !seen[t]) {
        seen[t] = 1;
        queue.push_back(t);
      }
  }
  if (reached != stiff)
    throw ConfigError("cell problem: perforation complement is disconnected");
}

CellProblem empty_cell(int n, double edge) {
  CellProblem c;
  c.nx = c.ny = n;
  c.h = edge / n;
  c.hole.assign(static_cast<std::size_t>(n) * n, 0);
  return c;
}

CellProblem hole_cell(const geo::Shape& shape, double scale, int n,
                      double edge) {
  CellProblem c = empty_cell(n, edge);
  const double mid = edge / 2;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      const Vec2 p{(i + 0.5) * c.h - mid, (j + 0.5) * c.h - mid};
      if (shape.contains(p, scale)) c.hole[c.idx(i, j)] = 1;
    }
  return c;
}

CellProblem supercell(const geo::Realization& real, double h) {
  const Box& w = real.window;
  CellProblem c;
  c.nx = static_cast<int>(std::lround(w.edge_x() / h));
  c.ny = static_cast<int>(std::lround(w.edge_y() / h));
  if (c.nx < 2 || c.ny < 2)
    throw ConfigError("supercell: window too small for the grid spacing");
  c.h = w.edge_x() / c.nx;
  c.hole.assign(static_cast<std::size_t>(c.nx) * c.ny, 0);
  for (const auto& inc : real.inclusions) {
    const auto& shape = real.shape_of(inc);
    const double rx = shape.half_extent_x() * inc.scale;
    const double ry = shape.half_extent_y() * inc.scale;
    const int i0 = std::max(
        0, static_cast<int>(std::floor((inc.center.x - rx - w.lo.x) / c.h)));
    const int i1 = std::min(
        c.nx - 1,
        static_cast<int>(std::ceil((inc.center.x + rx - w.lo.x) / c.h)));
    const int j0 = std::max(
        0, static_cast<int>(std::floor((inc.center.y - ry - w.lo.y) / c.h)));
    const int j1 = std::min(
        c.ny - 1,
        static_cast<int>(std::ceil((inc.center.y + ry - w.lo.y) / c.h)));
    for (int j = j0; j <= j1; ++j)
      for (int i = i0; i <= i1; ++i) {
        const Vec2 p{w.lo.x + (i + 0.5) * c.h - inc.center.x,
                     w.lo.y + (j + 0.5) * c.h - inc.center.y};
        if (shape.contains(p, inc.scale)) c.hole[c.idx(i, j)] = 1;
      }
  }
  return c;
}

namespace {

// face conductivities: kx at the west face of each cell, ky at the south
struct Faces {
  int nx, ny;
  double ax, ay;
  const std::vector<std::uint8_t>* hole;

  double kx(int i, int j) const {
    const int w = (i + nx - 1) % nx;
    return (*hole)[j * nx + i] || (*hole)[j * nx + w] ? 0.0 : ax;
  }
  double ky(int i, int j) const {
    const int s = (j + ny - 1) % ny;
    return (*hole)[j * nx + i] || (*hole)[s * nx + i] ? 0.0 : ay;
  }
};

void apply_stiffness(const CellProblem& cell, const Faces& f,
                     const std::vector<double>& u, std::vector<double>& out) {
  const int nx = cell.nx, ny = cell.ny;
  const double inv_h2 = 1.0 / (cell.h * cell.h);
  for (int j = 0; j < ny; ++j) {
    const int jn = (j + 1) % ny, js = (j + ny - 1) % ny;
    for (int i = 0; i < nx; ++i) {
      const int ie = (i + 1) % nx, iw = (i + nx - 1) % nx;
      const int c = j * nx + i;
      const double kw = f.kx(i, j), ke = f.kx(ie, j);
      const double ks = f.ky(i, j), kn = f.ky(i, jn);
      out[c] = inv_h2 * (kw * (u[c] - u[j * nx + iw]) +
                         ke * (u[c] - u[j * nx + ie]) +
                         ks * (u[c] - u[js * nx + i]) +
                         kn * (u[c] - u[jn * nx + i]));
    }
  }
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

}  // namespace

Corrector solve_corrector(const CellProblem& cell, int j) {
  cell.validate();
  if (j != 0 && j != 1) throw ConfigError("corrector direction must be 0 or 1");
  const int nx = cell.nx, ny = cell.ny;
  const std::size_t n = cell.hole.size();
  const Faces f{nx, ny, cell.a1x, cell.a1y, &cell.hole};

  Corrector corr;
  corr.j = j;

  // right-hand side: -div(A1 e_j) with the perforated face coefficients
  std::vector<double> b(n, 0.0);
  for (int jj = 0; jj < ny; ++jj)
    for (int i = 0; i < nx; ++i) {
      const int c = jj * nx + i;
      if (cell.hole[c]) continue;
      if (j == 0)
        b[c] = (f.kx((i + 1) % nx, jj) - f.kx(i, jj)) / cell.h;
      else
        b[c] = (f.ky(i, (jj + 1) % ny) - f.ky(i, jj)) / cell.h;
    }

  const int stiff = cell.stiff_count();
  const auto project = [&](std::vector<double>& v) {
    double mean = 0;
    for (std::size_t k = 0; k < n; ++k)
      if (cell.hole[k])
        v[k] = 0;
      else
        mean += v[k];
    mean /= stiff;
    for (std::size_t k = 0; k < n; ++k)
      if (!cell.hole[k]) v[k] -= mean;
  };
  project(b);
  const double norm_b = std::sqrt(dot(b, b));
  corr.n.assign(n, 0.0);

  if (norm_b > 0) {
    fftp::PeriodicPoisson prec(nx, ny, cell.h, cell.a1x, cell.a1y);
    std::vector<double> r = b, z(n), p(n), q(n);
    const auto precondition = [&](const std::vector<double>& in,
                                  std::vector<double>& out) {
      prec.solve(in.data(), out.data());
      project(out);
    };
    precondition(r, z);
    p = z;
    double rz = dot(r, z);
    const double tol = 1e-10 * norm_b;
    const int max_iters = 20000;
    int it = 0;
    for (; it < max_iters; ++it) {
      apply_stiffness(cell, f, p, q);
      const double pq = dot(p, q);
      if (pq <= 0) throw NumericalError("corrector CG lost positivity");
      const double alpha = rz / pq;
      for (std::size_t k = 0; k < n; ++k) {
        corr.n[k] += alpha * p[k];
        r[k] -= alpha * q[k];
      }
      if (std::sqrt(dot(r, r)) <= tol) break;
      precondition(r, z);
      const double rz_new = dot(r, z);
      for (std::size_t k = 0; k < n; ++k) p[k] = z[k] + (rz_new / rz) * p[k];
      rz = rz_new;
    }
    if (it == max_iters)
      throw NumericalError("corrector CG stalled after " +
                           std::to_string(max_iters) + " iterations");
    corr.iters = it + 1;
    project(corr.n);
    apply_stiffness(cell, f, corr.n, q);
    double rr = 0;
    for (std::size_t k = 0; k < n; ++k) {
      const double d = b[k] - q[k];
      rr += d * d;
    }
    corr.rel_residual = std::sqrt(rr) / norm_b;
  }

  const double h2 = cell.h * cell.h;
  corr.norm_n = std::sqrt(dot(corr.n, corr.n) * h2);
  double grad2 = 0;
  for (int jj = 0; jj < ny; ++jj)
    for (int i = 0; i < nx; ++i) {
      if (f.kx(i, jj) > 0) {
        const double d =
            (corr.n[jj * nx + i] - corr.n[jj * nx + (i + nx - 1) % nx]) /
            cell.h;
        grad2 += d * d * h2;
      }
      if (f.ky(i, jj) > 0) {
        const double d =
            (corr.n[jj * nx + i] - corr.n[((jj + ny - 1) % ny) * nx + i]) /
            cell.h;
        grad2 += d * d * h2;
      }
    }
  corr.norm_grad = std::sqrt(grad2);
  return corr;
}

double HomogenizedTensor::min_eig() const {
  const double tr = a[0][0] + a[1][1];
  const double dif = 0.5 * (a[0][0] - a[1][1]);
  const double rad = std::sqrt(dif * dif + a[0][1] * a[0][1]);
  return 0.5 * tr - rad;
}

bool HomogenizedTensor::spd() const { return min_eig() > 0; }

HomogenizedTensor homogenized_matrix(const CellProblem& cell) {
  const Corrector c0 = solve_corrector(cell, 0);
  const Corrector c1 = solve_corrector(cell, 1);
  return homogenized_matrix(cell, c0, c1);
}

HomogenizedTensor homogenized_matrix(const CellProblem& cell,
                                     const Corrector& nx_dir,
                                     const Corrector& ny_dir) {
  const int nx = cell.nx, ny = cell.ny;
  const Faces f{nx, ny, cell.a1x, cell.a1y, &cell.hole};
  HomogenizedTensor t;
  t.theta = cell.theta();
  t.h = cell.h;
  t.residual = {nx_dir.rel_residual, ny_dir.rel_residual};

  const Corrector* corr[2] = {&nx_dir, &ny_dir};
  for (int col = 0; col < 2; ++col) {
    const auto& nvec = corr[col]->n;
    double qx = 0, qy = 0;
    for (int jj = 0; jj < ny; ++jj)
      for (int i = 0; i < nx; ++i) {
        const int c = jj * nx + i;
        qx += f.kx(i, jj) *
              ((nvec[c] - nvec[jj * nx + (i + nx - 1) % nx]) / cell.h +
               (col == 0 ? 1.0 : 0.0));
        qy += f.ky(i, jj) *
              ((nvec[c] - nvec[((jj + ny - 1) % ny) * nx + i]) / cell.h +
               (col == 1 ? 1.0 : 0.0));
      }
    t.a[0][col] = qx / cell.cells();
    t.a[1][col] = qy / cell.cells();
  }
  const double off = 0.5 * (t.a[0][1] + t.a[1][0]);
  t.a[0][1] = t.a[1][0] = off;
  return t;
}

FluxCorrector flux_corrector(const CellProblem& cell, const Corrector& corr,
                             const HomogenizedTensor& ahom) {
  const int nx = cell.nx, ny = cell.ny;
  const std::size_t n = cell.hole.size();
  const Faces f{nx, ny, cell.a1x, cell.a1y, &cell.hole};
  const int j = corr.j;

  FluxCorrector g;
  g.j = j;
  std::vector<double> gx(n), gy(n);
  double mean_x = 0, mean_y = 0, g2 = 0;
  for (int jj = 0; jj < ny; ++jj)
    for (int i = 0; i < nx; ++i) {
      const int c = jj * nx + i;
      gx[c] = f.kx(i, jj) *
                  ((corr.n[c] - corr.n[jj * nx + (i + nx - 1) % nx]) / cell.h +
                   (j == 0 ? 1.0 : 0.0)) -
              ahom.a[0][j];
      gy[c] = f.ky(i, jj) *
                  ((corr.n[c] - corr.n[((jj + ny - 1) % ny) * nx + i]) /
                       cell.h +
                   (j == 1 ? 1.0 : 0.0)) -
              ahom.a[1][j];
      mean_x += gx[c];
      mean_y += gy[c];
      g2 += gx[c] * gx[c] + gy[c] * gy[c];
    }
  g.psi.assign(n, 0.0);
  g.norm_flux = std::sqrt(g2 * cell.h * cell.h);
  if (g2 == 0) return g;

  const double rms = std::sqrt(g2 / (2.0 * n));
  g.mean_defect =
      std::max(std::abs(mean_x), std::abs(mean_y)) / (n * rms);
  if (g.mean_defect > 1e-8)
    throw NumericalError("flux difference has a nonzero mean: " +
                         std::to_string(g.mean_defect));

  // corner curl; the flux difference is divergence-free, so it is the
  // rotation of a stream function on the dual grid
  std::vector<double> curl(n);
  for (int jj = 0; jj < ny; ++jj)
    for (int i = 0; i < nx; ++i) {
      const int iw = (i + nx - 1) % nx, js = (jj + ny - 1) % ny;
      curl[jj * nx + i] = (gy[jj * nx + i] - gy[jj * nx + iw] -
                           gx[jj * nx + i] + gx[js * nx + i]) /
                          cell.h;
    }
  fftp::PeriodicPoisson pois(nx, ny, cell.h);
  pois.solve(curl.data(), g.psi.data());

  double d2 = 0;
  for (int jj = 0; jj < ny; ++jj)
    for (int i = 0; i < nx; ++i) {
      const int c = jj * nx + i;
      const int jn = (jj + 1) % ny, ie = (i + 1) % nx;
      const double rx = (g.psi[jn * nx + i] - g.psi[c]) / cell.h - gx[c];
      const double ry = -(g.psi[jj * nx + ie] - g.psi[c]) / cell.h - gy[c];
      d2 += rx * rx + ry * ry;
    }
  g.div_defect = std::sqrt(d2 / g2);
  g.norm_g = std::sqrt(2.0 * dot(g.psi, g.psi) * cell.h * cell.h);
  return g;
}

DivergencePotential divergence_potential(const std::vector<double>& f, int nx,
                                         int ny, double h) {
  if (static_cast<int>(f.size()) != nx * ny)
    throw ConfigError("divergence potential: field size mismatch");
  DivergencePotential out;
  out.nx = nx;
  out.ny = ny;
  out.h = h;
  const std::size_t n = f.size();
  double mean = 0;
  for (double v : f) mean += v;
  mean /= static_cast<double>(n);
  out.removed_mean = mean;

  std::vector<double> g(n);
  double g2 = 0;
  for (std::size_t k = 0; k < n; ++k) {
    g[k] = f[k] - mean;
    g2 += g[k] * g[k];
  }
  out.bx.assign(n, 0.0);
  out.by.assign(n, 0.0);
  if (g2 == 0) return out;

  std::vector<double> phi(n);
  fftp::PeriodicPoisson pois(nx, ny, h);
  pois.solve(g.data(), phi.data());
  // B = -grad phi on faces; face divergence then returns g exactly
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const int c = j * nx + i;
      out.bx[c] = -(phi[c] - phi[j * nx + (i + nx - 1) % nx]) / h;
      out.by[c] = -(phi[c] - phi[((j + ny - 1) % ny) * nx + i]) / h;
    }

  double d2 = 0, norm2 = 0;
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const int c = j * nx + i;
      const int ie = (i + 1) % nx, jn = (j + 1) % ny;
      const double div =
          (out.bx[j * nx + ie] - out.bx[c] + out.by[jn * nx + i] - out.by[c]) /
          h;
      d2 += (div - g[c]) * (div - g[c]);
      const double cx = 0.5 * (out.bx[c] + out.bx[j * nx + ie]);
      const double cy = 0.5 * (out.by[c] + out.by[jn * nx + i]);
      norm2 += (cx * cx + cy * cy) * h * h;
    }
  out.div_defect = std::sqrt(d2 / g2);
  out.norm = std::sqrt(norm2);
  return out;
}

CorrectorDiagnostics diagnostics(const CellProblem& cell, const Corrector& n0,
                                 const Corrector& n1, const FluxCorrector& g0,
                                 const FluxCorrector& g1, double norm_b,
                                 double eps, double box, double lambda) {
  if (eps <= 0 || box <= 0) throw ConfigError("diagnostics: eps, L must be > 0");
  CorrectorDiagnostics d;
  d.eps = eps;
  d.box = box;
  d.lambda = lambda;
  // window tiled by eps-scaled cells: |u^eps|_{L2(box)} scales by box/M
  const double factor = box / std::sqrt(cell.edge_x() * cell.edge_y());
  d.norm_n = {eps * factor * n0.norm_n, eps * factor * n1.norm_n};
  d.norm_grad = {factor * n0.norm_grad, factor * n1.norm_grad};
  d.norm_g = {eps * factor * g0.norm_g, eps * factor * g1.norm_g};
  d.norm_b = norm_b;
  return d;
}

double lambda_constant(double lambda, double beta_abs, double d_lambda,
                       double c1) {
  if (lambda < 0) throw ConfigError("lambda constant: lambda must be >= 0");
  if (d_lambda <= 0)
    throw PreconditionError("lambda constant: inside the pole guard");
  const double root = 1 + std::sqrt(beta_abs);
  return c1 * (1 + beta_abs + lambda * lambda * root +
               std::pow(lambda, 1.5) * root / d_lambda);
}

double error_aggregate(CorrectorDiagnostics& diag, double beta_abs,
                       double d_lambda, double c1) {
  const double c = lambda_constant(diag.lambda, beta_abs, d_lambda, c1);
  double sum = 0;
  for (int j = 0; j < 2; ++j)
    sum += diag.norm_n[j] + diag.norm_g[j] + diag.eps * diag.norm_grad[j];
  diag.rhat =
      c * ((sum + diag.norm_b) / diag.box + 1.0 / diag.box + diag.eps);
  return diag.rhat;
}

}  // namespace hicospec::hom
