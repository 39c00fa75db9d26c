#include "hicospec/direct_solver.hpp"

#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "hicospec/rng.hpp"
#include "hicospec/shape_spectra.hpp"

using namespace hicospec;

namespace {

constexpr double pi = std::numbers::pi;

geo::Shape square_shape(double side) {
  geo::Shape s;
  s.id = "sq";
  s.kind = geo::ShapeKind::square;
  s.size = side;
  return s;
}

// p=1 unit-pitch lattice of side-s squares on the centered window
geo::Realization lattice(double edge, double side) {
  geo::Realization r;
  r.dim = 2;
  r.window = Box::centered({0, 0}, edge);
  r.shapes["sq"] = square_shape(side);
  const int m = static_cast<int>(std::lround(edge));
  std::int64_t label = 0;
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < m; ++i)
      r.inclusions.push_back({"sq",
                              {-edge / 2 + i + 0.5, -edge / 2 + j + 0.5},
                              1.0,
                              label++});
  return r;
}

geo::Realization empty_realization(double edge) {
  geo::Realization r;
  r.dim = 2;
  r.window = Box::centered({0, 0}, edge);
  return r;
}

ds::GridOperator uniform_op(int n, double h, ds::Bc bc, bool all_soft,
                            double eps) {
  ds::GridOperator op;
  op.bc = bc;
  op.nx = op.ny = n;
  op.h = h;
  op.box = Box::centered({0, 0}, n * h);
  op.eps = eps;
  op.soft.assign(static_cast<std::size_t>(n) * n, all_soft ? 1 : 0);
  return op;
}

Eigen::MatrixXd dense_of(const ds::GridOperator& op) {
  const Eigen::SparseMatrix<double> lower = ds::sparse_matrix(op);
  const Eigen::SparseMatrix<double> full =
      lower.selfadjointView<Eigen::Lower>();
  return Eigen::MatrixXd(full);
}

std::vector<double> dense_eigs(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a,
                                                    Eigen::EigenvaluesOnly);
  return {es.eigenvalues().data(),
          es.eigenvalues().data() + es.eigenvalues().size()};
}

}  // namespace

TEST_CASE("dirichlet closed form through the window extractor") {
  const int n = 32;
  const double h = 1.0 / n;
  const auto op = uniform_op(n, h, ds::Bc::dirichlet, false, 1.0);
  const auto win = ds::spectrum_window(op, 0, 60, {.max_count = 8});

  std::vector<double> exact;
  for (int m = 1; m <= n; ++m)
    for (int k = 1; k <= n; ++k) {
      const double s1 = std::sin(m * pi * h / 2), s2 = std::sin(k * pi * h / 2);
      const double lam = 4 / (h * h) * (s1 * s1 + s2 * s2);
      if (lam <= 60) exact.push_back(lam);
    }
  std::sort(exact.begin(), exact.end());

  REQUIRE(win.lambda.size() == exact.size());
  REQUIRE(win.lambda.size() == 3);  // (1,1) plus the degenerate (1,2) pair
  for (std::size_t i = 0; i < exact.size(); ++i) {
    CHECK(std::abs(win.lambda[i] - exact[i]) <= 1e-8 * exact[i]);
    CHECK(win.residual[i] <= 1e-8);
  }
  const double smallest = 4 / (h * h) * 2 * std::pow(std::sin(pi * h / 2), 2);
  CHECK(std::abs(win.lambda[0] - smallest) <= 1e-10 * smallest);
}

TEST_CASE("uniformly soft coefficient scales the whole spectrum") {
  const int n = 16;
  const double h = 1.0 / n;
  const double eps = 0.25;
  const auto hard = uniform_op(n, h, ds::Bc::dirichlet, false, 1.0);
  const auto soft = uniform_op(n, h, ds::Bc::dirichlet, true, eps);
  const auto ref = dense_eigs(dense_of(hard));
  const auto scaled = dense_eigs(dense_of(soft));
  REQUIRE(ref.size() == scaled.size());
  for (std::size_t i = 0; i < ref.size(); ++i)
    CHECK(std::abs(scaled[i] - eps * eps * ref[i]) <=
          1e-12 * eps * eps * ref.back());
}

TEST_CASE("matrix-free apply matches the sparse assembly") {
  SplitMix64 rng{2024};
  for (const auto bc : {ds::Bc::dirichlet, ds::Bc::periodic}) {
    auto op = uniform_op(12, 0.1, bc, false, 0.125);
    for (auto& s : op.soft) s = rng.uniform() < 0.3 ? 1 : 0;
    const Eigen::MatrixXd a = dense_of(op);

    CHECK((a - a.transpose()).cwiseAbs().maxCoeff() == 0.0);
    // Gershgorin: diagonal dominance of the flux form
    for (int i = 0; i < a.rows(); ++i) {
      const double off = a.row(i).cwiseAbs().sum() - std::abs(a(i, i));
      CHECK(a(i, i) - off >= -1e-12);
    }

    const std::size_t nn = op.cells();
    std::vector<double> u(nn), out(nn);
    for (auto& x : u) x = rng.uniform(-1, 1);
    op.apply(u.data(), out.data());
    const Eigen::VectorXd ref =
        a * Eigen::Map<const Eigen::VectorXd>(u.data(), nn);
    double worst = 0;
    for (std::size_t i = 0; i < nn; ++i)
      worst = std::max(worst, std::abs(out[i] - ref[i]));
    CHECK(worst <= 1e-11 * ref.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("torus keeps the constant kernel") {
  const int n = 32;
  const auto op = uniform_op(n, 1.0 / n, ds::Bc::periodic, false, 1.0);

  std::vector<double> ones(op.cells(), 1.0), out(op.cells());
  op.apply(ones.data(), out.data());
  for (double v : out) CHECK(v == 0.0);

  const auto win = ds::spectrum_window(op, -0.5, 20, {.max_count = 4});
  REQUIRE(win.lambda.size() == 1);
  CHECK(std::abs(win.lambda[0]) <= 1e-9);
  const auto& v = win.vectors[0];
  const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
  CHECK(std::abs(*mx - *mn) <= 1e-7 * std::abs(*mx));
}

TEST_CASE("assemble paints the eps-scaled lattice exactly") {
  const double eps = 1.0 / 8;
  const auto real = lattice(4, 0.5);
  const auto op = ds::assemble(real, eps, eps / 32, ds::Bc::dirichlet);

  CHECK(op.nx == 128);
  CHECK(op.ny == 128);
  CHECK(op.box.edge_x() == doctest::Approx(4 * eps).epsilon(1e-12));
  const auto softn = std::count(op.soft.begin(), op.soft.end(), 1);
  CHECK(softn == 16 * 16 * 16);  // 16 inclusions, 16x16 cells each
  CHECK(op.mirror_symmetric());

  CHECK_THROWS_AS(ds::assemble(real, eps, eps / 8, ds::Bc::dirichlet),
                  PreconditionError);
  CHECK_THROWS_WITH(ds::assemble(real, eps, eps / 8, ds::Bc::dirichlet),
                    doctest::Contains("required h"));
}

TEST_CASE("mirror sectors partition the spectrum") {
  geo::Realization one = empty_realization(1);
  one.shapes["sq"] = square_shape(0.5);
  one.inclusions.push_back({"sq", {0, 0}, 1.0, 0});
  const auto op = ds::assemble(one, 0.25, 0.25 / 32, ds::Bc::dirichlet);
  REQUIRE(op.nx == 32);
  REQUIRE(op.mirror_symmetric());

  auto full = dense_eigs(dense_of(op));
  std::vector<double> pieces;
  for (int py = 0; py < 2; ++py)
    for (int px = 0; px < 2; ++px) {
      const Eigen::SparseMatrix<double> sm =
          ds::sector_matrix(op, px, py)
              .selfadjointView<Eigen::Lower>();
      const Eigen::MatrixXd s = Eigen::MatrixXd(sm);
      const auto part = dense_eigs(s);
      pieces.insert(pieces.end(), part.begin(), part.end());
    }
  std::sort(pieces.begin(), pieces.end());
  REQUIRE(pieces.size() == full.size());
  for (std::size_t i = 0; i < full.size(); ++i)
    CHECK(std::abs(pieces[i] - full[i]) <= 1e-9 * (1 + std::abs(full[i])));

  for (const double t : {0.5, 5.0, 40.0, 90.0}) {
    const auto below = static_cast<int>(
        std::count_if(full.begin(), full.end(),
                      [&](double l) { return l < t; }));
    CHECK(ds::eig_count_below(op, t) == below);
    CHECK(ds::eig_count_below_sectored(op, t) == below);
  }

  auto askew = op;
  askew.soft[askew.idx(1, 2)] = 1;
  CHECK(!askew.mirror_symmetric());
  CHECK_THROWS_AS(ds::sector_matrix(askew, 0, 0), ConfigError);
}

TEST_CASE("window extraction is seed independent") {
  const auto real = lattice(2, 0.5);
  const auto op = ds::assemble(real, 0.25, 0.25 / 32, ds::Bc::dirichlet);
  const auto a = ds::spectrum_window(op, 0, 300, {.max_count = 32,
                                                  .seed = 0x5eedULL});
  const auto b = ds::spectrum_window(op, 0, 300, {.max_count = 32,
                                                  .seed = 12345});
  REQUIRE(!a.lambda.empty());
  REQUIRE(a.lambda.size() == b.lambda.size());
  for (std::size_t i = 0; i < a.lambda.size(); ++i)
    CHECK(std::abs(a.lambda[i] - b.lambda[i]) <=
          1e-8 * (1 + std::abs(a.lambda[i])));
}

TEST_CASE("window guards: trust ceiling, bounds, max_count") {
  const auto op = uniform_op(32, 1.0 / 32, ds::Bc::dirichlet, false, 1.0);
  CHECK_THROWS_AS(ds::spectrum_window(op, 0, 30, {.c_trust = 0.01}),
                  PreconditionError);
  CHECK_THROWS_AS(ds::spectrum_window(op, 10, 5, {}), ConfigError);
  // [0, 60] holds the three lowest modes, two over budget
  CHECK_THROWS_AS(ds::spectrum_window(op, 0, 60, {.max_count = 1}),
                  NumericalError);
}

TEST_CASE("plane wave on the empty torus is an exact mode") {
  const auto real = empty_realization(1);
  const auto op = ds::assemble(real, 1.0, 1.0 / 64, ds::Bc::periodic);
  const double k = 2 * pi * 2;  // snap target
  const double lam =
      4 / (op.h * op.h) * std::pow(std::sin(k * op.h / 2), 2);

  const auto rep = ds::plane_wave_quasimode(op, real, lam, lam, 1.0, 1.0);
  CHECK(rep.k == doctest::Approx(k).epsilon(1e-12));
  CHECK(rep.residual <= 1e-8);
  CHECK(rep.residual_direct <= 1e-8);
  CHECK(rep.mass_ratio == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rep.tag == "plane-wave");
}

TEST_CASE("plane wave at lambda zero is the cutoff itself") {
  const auto real = empty_realization(1);
  const auto op = ds::assemble(real, 1.0, 1.0 / 64, ds::Bc::dirichlet);
  const auto rep = ds::plane_wave_quasimode(op, real, 0.0, 0.0, 1.0, 0.5);
  CHECK(rep.k == 0.0);
  CHECK(rep.residual > 0);
  CHECK(rep.mass_ratio > 0);
  CHECK(rep.mass_ratio <= 1.0);
  // lambda = 0 makes the identity and direct routes the same number
  CHECK(std::abs(rep.residual - rep.residual_direct) <=
        1e-6 * rep.residual);
}

TEST_CASE("residual identity holds through the inclusion field") {
  const auto real = lattice(8, 0.5);
  const double eps = 1.0 / 8;
  const auto op = ds::assemble(real, eps, eps / 32, ds::Bc::dirichlet);
  const auto rep = ds::plane_wave_quasimode(op, real, 10.0, 5.0, 0.6, 0.5);
  CHECK(rep.residual > 1e-6);  // genuinely off any eigenvalue
  CHECK(std::abs(rep.residual - rep.residual_direct) <=
        1e-6 * rep.residual);
  CHECK(rep.mass_ratio > 0);
  CHECK(rep.mass_ratio <= 1.0);

  CHECK_THROWS_AS(ds::plane_wave_quasimode(op, real, 10.0, -1.0, 0.6, 0.5),
                  PreconditionError);
  CHECK_THROWS_AS(ds::plane_wave_quasimode(op, real, 10.0, 5.0, 0.6, 9.0),
                  PreconditionError);
}

TEST_CASE("marking quasimode: decoupling sweep and cancellation") {
  const auto modes = spectra::dirichlet_modes(square_shape(0.5), 1.0 / 64,
                                              4, 1);
  geo::Marking plus;
  plus.value[7] = 1;

  // fixed unit macro box; the micro window grows as 1/eps so the single
  // inclusion decouples from the walls as eps shrinks
  double prev = 1e9;
  for (const double eps : {1.0 / 8, 1.0 / 16, 1.0 / 32}) {
    geo::Realization one = empty_realization(1.0 / eps);
    one.shapes["sq"] = square_shape(0.5);
    one.inclusions.push_back({"sq", {0, 0}, 1.0, 7});
    const auto op = ds::assemble(one, eps, eps / 32, ds::Bc::dirichlet);
    const auto rep = ds::marking_quasimode(op, one, modes, 0, plus, 1.0);
    CHECK(rep.lambda ==
          doctest::Approx(modes.spectrum.raw_lambda[0]).epsilon(1e-14));
    CHECK(rep.tag == "marking");
    CHECK(rep.residual < prev);
    CHECK(std::abs(rep.residual - rep.residual_direct) <=
          1e-6 * rep.residual);
    prev = rep.residual;
  }

  // opposite marks on identically placed inclusions cancel in the mean
  geo::Realization two = empty_realization(8);
  two.shapes["sq"] = square_shape(0.5);
  two.inclusions.push_back({"sq", {-1, 0}, 1.0, 0});
  two.inclusions.push_back({"sq", {1, 0}, 1.0, 1});
  geo::Marking pm;
  pm.value[0] = 1;
  pm.value[1] = -1;
  const double eps = 1.0 / 8;
  const auto op = ds::assemble(two, eps, eps / 32, ds::Bc::dirichlet);

  const auto u = ds::marking_field(op, two, modes, 0, pm, 1.0);
  double mean = 0, mass = 0;
  for (double x : u) {
    mean += x;
    mass += std::abs(x);
  }
  REQUIRE(mass > 0);
  CHECK(std::abs(mean) <= 1e-12 * mass);

  const auto rep = ds::marking_quasimode(op, two, modes, 0, pm, 1.0);
  CHECK(rep.residual > 0);

  geo::Realization none = empty_realization(8);
  const auto op0 = ds::assemble(none, eps, eps / 32, ds::Bc::dirichlet);
  CHECK_THROWS_AS(ds::marking_quasimode(op0, none, modes, 0, pm, 1.0),
                  PreconditionError);
}

TEST_CASE("relevance flags follow the mass ratio") {
  const auto op = uniform_op(16, 0.25, ds::Bc::dirichlet, false, 1.0);
  const std::size_t n = op.cells();
  std::vector<double> center(n, 0.0), corner(n, 0.0);
  center[op.idx(8, 8)] = 1.0;   // inside the centered box of edge 2
  corner[op.idx(0, 0)] = 1.0;   // outside it
  const auto flags = ds::relevance_classify(op, {center, corner}, 2.0, 0.1);
  REQUIRE(flags.size() == 2);
  CHECK(flags[0] == 1);
  CHECK(flags[1] == 0);
  CHECK(ds::mass_ratio(op, center, 2.0) == doctest::Approx(1.0));
  CHECK(ds::mass_ratio(op, corner, 2.0) == doctest::Approx(0.0));
  CHECK_THROWS_AS(ds::relevance_classify(op, {center}, 9.0, 0.1),
                  PreconditionError);
}

TEST_CASE("void injection removes exactly the covered block") {
  const auto real = lattice(8, 0.5);
  REQUIRE(real.inclusions.size() == 64);

  const auto nine = ds::void_injection(real, Box{{0, 0}, {3, 3}});
  CHECK(nine.inclusions.size() == 55);
  for (const auto& inc : nine.inclusions) {
    const Box bb = real.inclusion_bbox(inc);
    CHECK((bb.lo.x > 3 || bb.hi.x < 0 || bb.lo.y > 3 || bb.hi.y < 0));
  }

  const auto same = ds::void_injection(real, Box{{0.8, 0.8}, {1.2, 1.2}});
  CHECK(same.inclusions.size() == real.inclusions.size());
  for (std::size_t i = 0; i < same.inclusions.size(); ++i)
    CHECK(same.inclusions[i].label == real.inclusions[i].label);

  const auto wiped = ds::void_injection(real, real.window);
  CHECK(wiped.inclusions.empty());

  CHECK_THROWS_AS(ds::void_injection(real, Box{{0, 0}, {9, 9}}),
                  PreconditionError);
}
