#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "hicospec/fft_poisson.hpp"
#include "hicospec/homogenization.hpp"
#include "hicospec/rng.hpp"
#include "hicospec/shape_spectra.hpp"

using namespace hicospec;
using std::numbers::pi;

namespace {

geo::Shape square_shape(const std::string& id, double side) {
  geo::Shape s;
  s.id = id;
  s.kind = geo::ShapeKind::square;
  s.size = side;
  return s;
}

std::vector<double> random_field(int n, uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<double> f(n);
  double mean = 0;
  for (auto& v : f) mean += v = rng.uniform() - 0.5;
  for (auto& v : f) v -= mean / n;
  return f;
}

// 5-point periodic apply of -(ax Dxx + ay Dyy)
std::vector<double> apply_periodic(const std::vector<double>& u, int nx,
                                   int ny, double h, double ax, double ay) {
  std::vector<double> out(u.size());
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const int c = j * nx + i;
      const double uxx = u[j * nx + (i + 1) % nx] - 2 * u[c] +
                         u[j * nx + (i + nx - 1) % nx];
      const double uyy = u[((j + 1) % ny) * nx + i] - 2 * u[c] +
                         u[((j + ny - 1) % ny) * nx + i];
      out[c] = -(ax * uxx + ay * uyy) / (h * h);
    }
  return out;
}

// boundary-corrected cell-centered Dirichlet apply (ghost = -boundary cell)
std::vector<double> apply_dirichlet(const std::vector<double>& u, int nx,
                                    int ny, double h, double ax, double ay) {
  std::vector<double> out(u.size());
  const auto at = [&](int i, int j) -> double {
    if (i < 0 || i >= nx) return 0;  // handled by the 2x diagonal below
    if (j < 0 || j >= ny) return 0;
    return u[j * nx + i];
  };
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const int c = j * nx + i;
      double v = 0;
      v += ax * ((i + 1 < nx ? u[c] - at(i + 1, j) : 2 * u[c]) +
                 (i > 0 ? u[c] - at(i - 1, j) : 2 * u[c]));
      v += ay * ((j + 1 < ny ? u[c] - at(i, j + 1) : 2 * u[c]) +
                 (j > 0 ? u[c] - at(i, j - 1) : 2 * u[c]));
      out[c] = v / (h * h);
    }
  return out;
}

double rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d2 = 0, n2 = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    d2 += (a[k] - b[k]) * (a[k] - b[k]);
    n2 += b[k] * b[k];
  }
  return std::sqrt(d2 / n2);
}

}  // namespace

TEST_CASE("spectral periodic solve inverts the 5-point stencil") {
  const int nx = 48, ny = 32;
  const double h = 0.0625, ax = 2.0, ay = 0.5;
  const auto u0 = random_field(nx * ny, 11);
  const auto f = apply_periodic(u0, nx, ny, h, ax, ay);

  fftp::PeriodicPoisson solver(nx, ny, h, ax, ay);
  std::vector<double> u(u0.size());
  solver.solve(f.data(), u.data());
  CHECK(rel_diff(u, u0) <= 1e-11);

  fftp::PeriodicPoissonF solver_f(nx, ny, h, ax, ay);
  std::vector<float> ff(f.begin(), f.end()), uf(f.size());
  solver_f.solve(ff.data(), uf.data());
  std::vector<double> ud(uf.begin(), uf.end());
  CHECK(rel_diff(ud, u0) <= 1e-4);
}

TEST_CASE("DST solve inverts the boundary-corrected Dirichlet stencil") {
  const int nx = 40, ny = 24;
  const double h = 0.03125, ax = 1.5, ay = 0.75;
  const auto f = random_field(nx * ny, 12);

  fftp::DirichletPoisson solver(nx, ny, h, ax, ay);
  std::vector<double> u(f.size());
  solver.solve(f.data(), u.data());
  CHECK(rel_diff(apply_dirichlet(u, nx, ny, h, ax, ay), f) <= 1e-11);

  // closed form: the lowest discrete mode of the unit square operator
  const int n1 = 64;
  fftp::DirichletPoisson one(n1, n1, 1.0 / n1);
  std::vector<double> mode(n1 * n1), out(n1 * n1);
  for (int j = 0; j < n1; ++j)
    for (int i = 0; i < n1; ++i)
      mode[j * n1 + i] =
          std::sin(pi * (i + 0.5) / n1) * std::sin(pi * (j + 0.5) / n1);
  const double s = std::sin(pi / (2 * n1));
  const double lam = 2 * 4.0 * n1 * n1 * s * s;
  one.solve(mode.data(), out.data());
  double worst = 0;
  for (std::size_t k = 0; k < mode.size(); ++k)
    worst = std::max(worst, std::abs(out[k] - mode[k] / lam));
  CHECK(worst <= 1e-12);
}

TEST_CASE("unperforated cell returns A1 with zero correctors") {
  auto cell = hom::empty_cell(16);
  cell.a1x = 2.0;
  cell.a1y = 3.0;
  const auto c0 = hom::solve_corrector(cell, 0);
  const auto c1 = hom::solve_corrector(cell, 1);
  CHECK(c0.norm_n == 0.0);
  CHECK(c1.norm_n == 0.0);
  CHECK(c0.iters == 0);

  const auto t = hom::homogenized_matrix(cell, c0, c1);
  CHECK(t.a[0][0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(t.a[1][1] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(std::abs(t.a[0][1]) <= 1e-14);
  CHECK(t.theta == 0.0);
  CHECK(t.spd());
}

TEST_CASE("centered square hole: corrector symmetry and energy identity") {
  const auto cell = hom::hole_cell(square_shape("hole", 0.5), 1.0, 64);
  const auto c0 = hom::solve_corrector(cell, 0);
  CHECK(c0.rel_residual <= 1e-10);

  double max_n = 0, odd_defect = 0, even_defect = 0;
  for (int j = 0; j < 64; ++j)
    for (int i = 0; i < 64; ++i) {
      const double v = c0.n[cell.idx(i, j)];
      max_n = std::max(max_n, std::abs(v));
      odd_defect = std::max(
          std::abs(v + c0.n[cell.idx(63 - i, j)]), odd_defect);
      even_defect = std::max(
          std::abs(v - c0.n[cell.idx(i, 63 - j)]), even_defect);
    }
  CHECK(max_n > 0);
  CHECK(odd_defect <= 1e-8 * max_n);
  CHECK(even_defect <= 1e-8 * max_n);

  // test function N in the weak form: energy = -(A1 e_j, grad N)
  double energy = 0, cross = 0;
  const double h2 = cell.h * cell.h;
  for (int j = 0; j < 64; ++j)
    for (int i = 0; i < 64; ++i) {
      const int c = cell.idx(i, j), w = cell.idx((i + 63) % 64, j),
                s = cell.idx(i, (j + 63) % 64);
      const bool kx = !cell.hole[c] && !cell.hole[w];
      const bool ky = !cell.hole[c] && !cell.hole[s];
      const double gx = kx ? (c0.n[c] - c0.n[w]) / cell.h : 0;
      const double gy = ky ? (c0.n[c] - c0.n[s]) / cell.h : 0;
      energy += (gx * gx + gy * gy) * h2;
      cross += gx * h2;  // e_0 against the x-gradient over stiff faces
    }
  CHECK(energy == doctest::Approx(-cross).epsilon(1e-8));
}

TEST_CASE("homogenized matrix golden values and bounds") {
  const auto shape = square_shape("hole", 0.5);
  const auto t128 = hom::homogenized_matrix(hom::hole_cell(shape, 1.0, 128));
  CHECK(t128.theta == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(t128.a[0][0] == doctest::Approx(0.576818740).epsilon(1e-6));
  CHECK(std::abs(t128.a[0][0] - t128.a[1][1]) <= 1e-6);
  CHECK(std::abs(t128.a[0][1]) <= 1e-6);
  CHECK(t128.a[0][0] > 0);
  CHECK(t128.a[0][0] < 0.75);
  CHECK(t128.spd());

  const auto t256 = hom::homogenized_matrix(hom::hole_cell(shape, 1.0, 256));
  CHECK(t256.a[0][0] == doctest::Approx(0.577139144).epsilon(1e-6));
  CHECK(std::abs(t256.a[0][0] - t128.a[0][0]) / t256.a[0][0] <= 0.01);

  // Voigt bound: (1 - theta) A1 - Ahom is positive semidefinite
  for (const auto& t : {t128, t256}) {
    const double b00 = (1 - t.theta) - t.a[0][0];
    const double b11 = (1 - t.theta) - t.a[1][1];
    const double tr = b00 + b11;
    const double det = b00 * b11 - t.a[0][1] * t.a[0][1];
    const double mineig = 0.5 * (tr - std::sqrt(tr * tr - 4 * det));
    CHECK(mineig >= -1e-8);
  }

  // mesh convergence at first order against the extrapolated value
  const auto t64 = hom::homogenized_matrix(hom::hole_cell(shape, 1.0, 64));
  const double extrap = 2 * t256.a[0][0] - t128.a[0][0];
  const double e64 = std::abs(t64.a[0][0] - extrap);
  const double e128 = std::abs(t128.a[0][0] - extrap);
  CHECK(e64 / e128 >= 1.5);
}

TEST_CASE("supercell correctors stabilize over growing windows") {
  geo::RandomModel model;
  model.dim = 2;
  geo::BernoulliLattice lat;
  lat.shapes.push_back({square_shape("sq", 0.5), 0.5});
  model.variant = lat;

  const double h = 1.0 / 32;
  std::array<hom::HomogenizedTensor, 3> t;
  const int sizes[3] = {2, 4, 8};
  for (int k = 0; k < 3; ++k) {
    const auto real =
        geo::generate(model, Box::centered({0, 0}, sizes[k]), 42);
    const auto cell = hom::supercell(real, h);
    const double frac = geo::volume_fraction(real);
    CHECK(cell.theta() == doctest::Approx(frac).epsilon(0.02));
    t[k] = hom::homogenized_matrix(cell);
  }
  const auto dist = [](const hom::HomogenizedTensor& a,
                       const hom::HomogenizedTensor& b) {
    double m = 0;
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 2; ++c)
        m = std::max(m, std::abs(a.a[r][c] - b.a[r][c]));
    return m;
  };
  CHECK(dist(t[2], t[1]) <= dist(t[1], t[0]));
}

TEST_CASE("flux corrector reproduces the flux difference") {
  const auto empty = hom::empty_cell(16);
  const auto e0 = hom::solve_corrector(empty, 0);
  const auto te = hom::homogenized_matrix(empty, e0, e0);
  const auto ge = hom::flux_corrector(empty, e0, te);
  CHECK(ge.norm_g == 0.0);
  CHECK(ge.norm_flux == 0.0);
  CHECK(ge.div_defect == 0.0);

  const auto cell = hom::hole_cell(square_shape("hole", 0.5), 1.0, 64);
  const auto c0 = hom::solve_corrector(cell, 0);
  const auto c1 = hom::solve_corrector(cell, 1);
  const auto t = hom::homogenized_matrix(cell, c0, c1);
  for (const auto* c : {&c0, &c1}) {
    const auto g = hom::flux_corrector(cell, *c, t);
    CHECK(g.norm_flux > 0);
    CHECK(g.mean_defect <= 1e-10);
    CHECK(g.div_defect <= 1e-8);
    // spectral gap of the cell: |G| <= edge |g| with a wide margin
    CHECK(g.norm_g <= cell.edge_x() * g.norm_flux);
  }
}

TEST_CASE("divergence potential: exact division and closed form") {
  const int n = 64;
  const double h = 1.0 / n;

  const auto zero = hom::divergence_potential(std::vector<double>(n * n, 0.0),
                                              n, n, h);
  CHECK(zero.norm == 0.0);
  CHECK(zero.removed_mean == 0.0);

  auto f = random_field(n * n, 13);
  const auto dp = hom::divergence_potential(f, n, n, h);
  CHECK(dp.div_defect <= 1e-10);
  CHECK(dp.removed_mean == doctest::Approx(0.0).epsilon(1e-12));

  // offset input: the mean is recorded and the potential is unchanged
  auto shifted = f;
  for (auto& v : shifted) v += 5.0;
  const auto dps = hom::divergence_potential(shifted, n, n, h);
  CHECK(dps.removed_mean == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(rel_diff(dps.bx, dp.bx) <= 1e-10);

  // single mode f = Re e^{ikx}: B = Re[-ik e^{ikx}]/|k|^2 = sin(kx)/k
  const int nf = 256;
  const double hf = 1.0 / nf;
  std::vector<double> mode(nf * nf);
  for (int j = 0; j < nf; ++j)
    for (int i = 0; i < nf; ++i)
      mode[j * nf + i] = std::cos(2 * pi * (i + 0.5) * hf);
  const auto dm = hom::divergence_potential(mode, nf, nf, hf);
  double worst = 0, worst_y = 0;
  for (int j = 0; j < nf; ++j)
    for (int i = 0; i < nf; ++i) {
      const int c = j * nf + i;
      const double cx = 0.5 * (dm.bx[c] + dm.bx[j * nf + (i + 1) % nf]);
      const double want = std::sin(2 * pi * (i + 0.5) * hf) / (2 * pi);
      worst = std::max(worst, std::abs(cx - want));
      worst_y = std::max(worst_y, std::abs(dm.by[c]));
    }
  CHECK(worst <= 1e-3);
  CHECK(worst_y <= 1e-12);
}

TEST_CASE("mean-field mismatch potential shrinks as eps is halved") {
  static spectra::SpectrumStore store(spectra::SpectrumStore::from_env());
  const auto shape = square_shape("sq", 0.5);
  const auto& spec = store.get(shape, 1.0 / 64, 60);
  const double lambda = 10.0;
  const double mean_b = 0.5 * spectra::b_integral(spec, lambda).mid();

  geo::RandomModel model;
  model.dim = 2;
  geo::BernoulliLattice lat;
  lat.shapes.push_back({shape, 0.5});
  model.variant = lat;

  const double box = 2.0;
  const auto norm_for = [&](double eps, uint64_t seed) {
    const int n = static_cast<int>(std::lround(box / (eps / 32)));
    const double hg = box / n;
    const auto real =
        geo::generate(model, Box::centered({0, 0}, box / eps), seed);
    std::vector<double> f(static_cast<std::size_t>(n) * n, mean_b);
    for (const auto& inc : real.inclusions) {
      const auto patch = spectra::b_field_on_inclusion(
          real.shape_of(inc), lambda, eps,
          {inc.center.x * eps, inc.center.y * eps}, inc.scale, hg,
          {-box / 2, -box / 2}, 1.0 / 64);
      for (int pj = 0; pj < patch.ny; ++pj)
        for (int pi = 0; pi < patch.nx; ++pi)
          f[static_cast<std::size_t>(patch.iy0 + pj) * n + patch.ix0 + pi] -=
              patch.v[static_cast<std::size_t>(pj) * patch.nx + pi];
    }
    return hom::divergence_potential(f, n, n, hg).norm;
  };

  int wins = 0;
  const int seeds = 10;
  double sum_coarse = 0, sum_fine = 0;
  for (int s = 0; s < seeds; ++s) {
    const double coarse = norm_for(1.0 / 8, 100 + s);
    const double fine = norm_for(1.0 / 16, 100 + s);
    sum_coarse += coarse;
    sum_fine += fine;
    wins += fine < coarse;
  }
  CHECK(wins >= 7);
  CHECK(sum_fine < sum_coarse);
}

TEST_CASE("error aggregate formula") {
  // eps -> 0 with vanishing norms leaves C(lambda)/L
  hom::CorrectorDiagnostics d;
  d.eps = 0;
  d.box = 8;
  d.lambda = 5;
  const double rhat = hom::error_aggregate(d, 2.0, 1.0);
  CHECK(rhat == hom::lambda_constant(5, 2.0, 1.0) / 8);
  CHECK(d.rhat == rhat);

  CHECK(hom::lambda_constant(0, 0, 1.0) == 1.0);
  CHECK(hom::lambda_constant(0, 0, 1.0, 3.0) == 3.0);
  CHECK_THROWS_AS(hom::lambda_constant(5, 1.0, 0.0), PreconditionError);
  CHECK_THROWS_AS(hom::lambda_constant(-1, 0, 1.0), ConfigError);

  // monotone in every norm input
  hom::CorrectorDiagnostics base;
  base.eps = 0.1;
  base.box = 4;
  base.lambda = 3;
  double prev = hom::error_aggregate(base, 1.0, 2.0);
  for (double* field :
       {&base.norm_n[0], &base.norm_n[1], &base.norm_grad[0], &base.norm_g[1],
        &base.norm_b}) {
    *field += 0.5;
    const double next = hom::error_aggregate(base, 1.0, 2.0);
    CHECK(next > prev);
    prev = next;
  }

  // physical scaling of cell norms onto the window
  const auto cell = hom::empty_cell(8, 2.0);
  hom::Corrector c0, c1;
  c0.norm_n = 1.5;
  c0.norm_grad = 2.5;
  c1.j = 1;
  hom::FluxCorrector g0, g1;
  g0.norm_g = 0.5;
  const auto diag =
      hom::diagnostics(cell, c0, c1, g0, g1, 0.25, 0.125, 8.0, 5.0);
  CHECK(diag.norm_n[0] == doctest::Approx(0.125 * 4 * 1.5).epsilon(1e-15));
  CHECK(diag.norm_grad[0] == doctest::Approx(4 * 2.5).epsilon(1e-15));
  CHECK(diag.norm_g[0] == doctest::Approx(0.125 * 4 * 0.5).epsilon(1e-15));
  CHECK(diag.norm_b == 0.25);
}
