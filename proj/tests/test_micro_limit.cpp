#include <doctest.h>

#include <cmath>
#include <numbers>

#include "hicospec/micro_limit.hpp"

using namespace hicospec;
using namespace hicospec::micro;
using std::numbers::pi;

namespace {

geo::Shape square_shape(const std::string& id, double side) {
  geo::Shape s;
  s.id = id;
  s.kind = geo::ShapeKind::square;
  s.size = side;
  return s;
}

geo::Shape interval_shape(const std::string& id, double len) {
  geo::Shape s;
  s.id = id;
  s.kind = geo::ShapeKind::interval;
  s.size = len;
  return s;
}

geo::RandomModel interval_lattice(double p) {
  geo::RandomModel m;
  m.dim = 1;
  geo::BernoulliLattice lat;
  lat.shapes.push_back({interval_shape("iv", 0.5), p});
  m.variant = lat;
  return m;
}

geo::RandomModel square_lattice(double p) {
  geo::RandomModel m;
  m.dim = 2;
  geo::BernoulliLattice lat;
  lat.shapes.push_back({square_shape("sq", 0.5), p});
  m.variant = lat;
  return m;
}

SpectraMap interval_spectra(int n_modes = 60) {
  static spectra::SpectrumStore store(spectra::SpectrumStore::from_env());
  SpectraMap sp;
  sp["iv"] = store.get(interval_shape("iv", 0.5), 1.0 / 256, n_modes);
  return sp;
}

SpectraMap square_spectra(int n_modes = 60) {
  static spectra::SpectrumStore store(spectra::SpectrumStore::from_env());
  SpectraMap sp;
  sp["sq"] = store.get(square_shape("sq", 0.5), 1.0 / 64, n_modes);
  return sp;
}

// continuum series for the half-interval: poles 4 s^2 pi^2, masses
// 4/(s^2 pi^2) over odd s
double interval_series(double lambda) {
  double sum = 0;
  for (int s = 3999; s >= 1; s -= 2)
    sum += (4 / (s * s * pi * pi)) / (4 * s * s * pi * pi - lambda);
  return sum;
}

}  // namespace

TEST_CASE("beta brackets: exact zero, pure lambda, and the series value") {
  const auto sp = interval_spectra();
  const auto model = interval_lattice(1.0);

  const auto zero = beta_eval(model, 0.0, sp);
  CHECK(zero.lo == 0.0);
  CHECK(zero.hi == 0.0);

  const auto empty = beta_eval(interval_lattice(0.0), 7.5, sp);
  CHECK(empty.lo == 7.5);
  CHECK(empty.hi == 7.5);

  const auto b10 = beta_eval(model, 10.0, sp);
  CHECK(b10.width() <= 1e-2);
  CHECK(std::abs(b10.mid() - 11.390307663) <= 2e-3);

  // small-lambda slope is 1 + O(theta * lambda)
  const auto tiny = beta_eval(model, 1e-3, sp);
  CHECK(tiny.mid() / 1e-3 >= 0.999);
  CHECK(tiny.mid() / 1e-3 <= 1 + 10 * 0.5 * 1e-3);
}

TEST_CASE("window averages reproduce beta for deterministic lattices") {
  const auto sp = interval_spectra();
  const auto model = interval_lattice(1.0);
  const auto real = geo::generate(model, Box::centered({0, 0}, 20), 3);
  REQUIRE(real.inclusions.size() == 20);

  const double lam = 10.0;
  const double direct = beta_from_realization(real, lam, sp);
  const double pooled = beta_eval(model, lam, sp).mid();
  CHECK(direct == doctest::Approx(pooled).epsilon(1e-12));

  // node-aligned sub-box: no boundary loss for strictly interior shapes
  const double local = local_average(real, {0, 0}, 4.0, lam, sp);
  CHECK(local == doctest::Approx(pooled).epsilon(1e-12));

  const auto empty = geo::generate(interval_lattice(0.0),
                                   Box::centered({0, 0}, 20), 3);
  CHECK(beta_from_realization(empty, lam, sp) == lam);
  CHECK(local_average(empty, {1, 0}, 4.0, lam, sp) == lam);
  CHECK_THROWS_AS(local_average(real, {9, 0}, 4.0, lam, sp),
                  PreconditionError);
}

TEST_CASE("random window averages agree with beta in Monte Carlo") {
  const auto sp = square_spectra();
  const auto model = square_lattice(0.5);
  const double lam = 10.0;
  const double pooled = beta_eval(model, lam, sp).mid();

  const int n = 30;
  double mean = 0, var = 0;
  std::vector<double> vals;
  for (int seed = 0; seed < n; ++seed) {
    const auto real = geo::generate(model, Box::centered({0, 0}, 32), seed);
    vals.push_back(beta_from_realization(real, lam, sp));
    mean += vals.back();
  }
  mean /= n;
  for (double v : vals) var += (v - mean) * (v - mean);
  var /= n - 1;
  const double se = std::sqrt(var / n);
  CHECK(std::abs(mean - pooled) <= 3 * se);
}

TEST_CASE("sup of shifted averages finds void boxes inside the gap") {
  const auto sp = square_spectra();
  const auto model = square_lattice(0.5);
  const auto real = geo::generate(model, Box::centered({0, 0}, 24), 7);
  const double lam = 85.0;  // inside the first gap: 8 pi^2 < 85 < root

  const auto est = beta_inf_estimate(real, lam, {1.0, 4.0}, sp,
                                     default_shift_pitch(model));
  REQUIRE(est.size() == 2);
  // some unit box is vacant, so the sup at M=1 is exactly lambda
  CHECK(est[0].second == doctest::Approx(lam).epsilon(1e-12));
  CHECK(est[1].second <= lam + 1e-12);

  // sup dominates the mean over the same shift family
  double mean = 0;
  int cnt = 0;
  for (double cx = -10; cx <= 10; cx += 1.0)
    for (double cy = -10; cy <= 10; cy += 1.0) {
      mean += local_average(real, {cx, cy}, 4.0, lam, sp);
      ++cnt;
    }
  mean /= cnt;
  CHECK(est[1].second >= mean - 1e-12);

  // deterministic p=1 lattice: node-aligned boxes recover beta exactly
  const auto full = geo::generate(square_lattice(1.0),
                                  Box::centered({0, 0}, 24), 7);
  const auto det = beta_inf_estimate(full, 10.0, {4.0}, sp, 0.25);
  CHECK(det[0].second ==
        doctest::Approx(beta_eval(square_lattice(1.0), 10.0, sp).mid())
            .epsilon(1e-12));

  // empty model: the estimate is lambda for every M
  const auto none = geo::generate(square_lattice(0.0),
                                  Box::centered({0, 0}, 24), 7);
  for (const auto& [m, v] : beta_inf_estimate(none, 10.0, {2.0, 6.0}, sp,
                                              0.25))
    CHECK(v == 10.0);
}

TEST_CASE("beta slope stays above one minus the volume fraction") {
  const auto sp = interval_spectra();
  std::vector<double> grid;
  for (int i = 0; i <= 24; ++i) grid.push_back(0.5 + i * 1.5);  // up to 36.5

  const double full = beta_derivative_check(interval_lattice(1.0), grid, sp);
  CHECK(full >= 1 - 0.5 - 1e-2);
  const double half = beta_derivative_check(interval_lattice(0.5), grid, sp);
  CHECK(half >= 1 - 0.25 - 1e-2);

  std::vector<double> crossing{30.0, 50.0};  // pole at 4 pi^2 in between
  CHECK_THROWS_AS(beta_derivative_check(interval_lattice(1.0), crossing, sp),
                  PreconditionError);
}

TEST_CASE("predicted spectrum: full line for the empty model") {
  const auto sp = interval_spectra();
  const auto set = predicted_spectrum(interval_lattice(0.0), 100.0, sp);
  REQUIRE(set.intervals.size() == 1);
  CHECK(set.intervals[0].first == 0.0);
  CHECK(set.intervals[0].second == 100.0);
  CHECK(set.points.empty());
  CHECK(set.gaps().empty());
}

TEST_CASE("predicted spectrum locates the first interval-lattice gap") {
  const auto sp = interval_spectra();
  const auto set = predicted_spectrum(interval_lattice(1.0), 200.0, sp);

  // continuum oracle: root of lambda + lambda^2 I(lambda) in the gap
  double lo = 4 * pi * pi + 1e-6, hi = 150;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mid + mid * mid * interval_series(mid) < 0 ? lo : hi) = mid;
  }
  const double root_oracle = 0.5 * (lo + hi);
  CHECK(root_oracle > 4 * pi * pi);
  CHECK(root_oracle < 16 * pi * pi);

  REQUIRE(set.intervals.size() == 2);
  CHECK(set.intervals[0].first == 0.0);
  CHECK(set.intervals[0].second ==
        doctest::Approx(4 * pi * pi).epsilon(1e-4));
  CHECK(std::abs(set.intervals[1].first - root_oracle) <= 0.05);
  CHECK(set.intervals[1].second == 200.0);

  const auto gaps = set.gaps();
  REQUIRE(gaps.size() == 1);
  CHECK(gaps[0].first == doctest::Approx(4 * pi * pi).epsilon(1e-4));

  // every pooled eigenvalue lies inside the predicted spectrum
  for (const auto& p : spectra::micro_spectrum(interval_lattice(1.0), 200.0,
                                               sp))
    CHECK(set.contains(p.lambda, 1e-9));
}

TEST_CASE("limit sets per family") {
  const auto sp = interval_spectra();

  // vacancies make the limit set the whole half-line
  const auto g_half = limit_set_G(interval_lattice(0.5), 150.0, sp);
  CHECK(g_half.exact);
  REQUIRE(g_half.set.intervals.size() == 1);
  CHECK(g_half.set.intervals[0] == std::pair{0.0, 150.0});

  // saturated single-shape lattice reduces to the periodic prediction
  const auto g_full = limit_set_G(interval_lattice(1.0), 150.0, sp);
  const auto pred = predicted_spectrum(interval_lattice(1.0), 150.0, sp);
  REQUIRE(g_full.set.intervals.size() == pred.intervals.size());
  for (size_t i = 0; i < pred.intervals.size(); ++i) {
    CHECK(g_full.set.intervals[i].first ==
          doctest::Approx(pred.intervals[i].first));
    CHECK(g_full.set.intervals[i].second ==
          doctest::Approx(pred.intervals[i].second));
  }
  CHECK_FALSE(g_full.bespoke_argument);

  // prediction is always contained in the limit set
  for (const auto& iv : pred.intervals)
    for (int k = 0; k <= 10; ++k)
      CHECK(g_full.set.contains(iv.first + k * (iv.second - iv.first) / 10,
                                1e-9));
}

TEST_CASE("parking limit set combines the two periodic densities") {
  static spectra::SpectrumStore store(spectra::SpectrumStore::from_env());
  SpectraMap sp;
  // request beyond the 1024 grid modes: the whole discrete spectrum is
  // kept, so the series tail vanishes and the root certificates are exact
  sp["unit-cube"] = store.get(square_shape("unit-cube", 1.0), 1.0 / 32, 1100);

  geo::RandomModel m;
  m.dim = 2;
  m.variant = geo::RandomParking{};
  const auto g = limit_set_G(m, 100.0, sp);
  CHECK(g.bespoke_argument);
  CHECK(g.exact);
  REQUIRE(!g.set.intervals.empty());
  CHECK(g.set.intervals[0].first == 0.0);

  // the jammed-density prediction stays inside the limit set
  const auto pred = predicted_spectrum(m, 100.0, sp, 0.56);
  const double tol = 2 * pred.endpoint_uncertainty + 1e-9;
  for (const auto& iv : pred.intervals)
    for (int k = 0; k <= 10; ++k)
      CHECK(g.set.contains(iv.first + k * (iv.second - iv.first) / 10, tol));
  for (double p : pred.points) CHECK(g.set.contains(p, tol));
}

TEST_CASE("spectral measure bins the pooled masses") {
  const auto sp = square_spectra();
  const auto model = square_lattice(1.0);
  const auto& spec = sp.at("sq");
  const double l1 = spec.lambda1();
  const double m1 = spec.clusters[0].m;

  const auto around = spectral_measure(model, {l1 - 1, l1 + 1}, sp);
  CHECK(around.mass[0] == doctest::Approx(m1).epsilon(1e-12));

  const auto gap_bin = spectral_measure(model, {l1 + 1, l1 + 2}, sp);
  CHECK(gap_bin.mass[0] == 0.0);

  // total mass approaches the volume fraction from below
  const double reach = spec.raw_lambda.back();
  const auto all = spectral_measure(model, {0.0, reach}, sp);
  double hand = 0;
  for (const auto& c : spec.clusters)
    if (c.lambda < reach) hand += c.m;
  const double theta = 0.25;
  CHECK(all.total() == doctest::Approx(hand).epsilon(1e-12));
  CHECK(all.total() <= theta + 1e-12);
  CHECK(all.total() >= 0.85 * theta);
}

TEST_CASE("binned Stieltjes transform is consistent with beta") {
  const auto sp = interval_spectra();
  const auto model = interval_lattice(1.0);
  const double lam = 10.0;

  std::vector<double> edges;
  for (double e = 0; e <= 1.1e5; e += 2.0) edges.push_back(e);
  const auto mu = spectral_measure(model, edges, sp);
  double sum = 0;
  for (size_t i = 0; i + 1 < mu.edges.size(); ++i)
    if (mu.mass[i] > 0)
      sum += mu.mass[i] / (0.5 * (mu.edges[i] + mu.edges[i + 1]) - lam);
  const auto beta = beta_eval(model, lam, sp);
  const double series = (beta.lo - lam) / (lam * lam);
  CHECK(std::abs(sum - series) <= 1e-3);
}

TEST_CASE("zero-mean eigenspaces are classified as point spectrum") {
  static spectra::SpectrumStore store(spectra::SpectrumStore::from_env());
  const auto& spec = store.get(square_shape("sq1", 1.0), 1.0 / 128, 12);
  const auto flags = point_spectrum_classify(spec, 1e-3);
  REQUIRE(flags.size() == spec.clusters.size());
  CHECK_FALSE(flags[0]);      // 2 pi^2 has mean^2 = 64/pi^4
  CHECK(flags[1]);            // 5 pi^2 double eigenspace
  REQUIRE(spec.clusters.size() >= 3);
  CHECK(spec.clusters[2].mult == 1);  // 8 pi^2: single but zero mean
  CHECK(flags[2]);
}

TEST_CASE("hausdorff distance on sets and windows") {
  SpectralSet b;
  b.lambda_max = 2.0;
  b.intervals = {{1.0, 2.0}};
  CHECK(hausdorff_distance({0.0}, b, 0.0, 2.0) ==
        doctest::Approx(2.0).epsilon(1e-9));

  // dense sampling of the set itself is at distance ~ grid pitch
  std::vector<double> dense;
  for (int i = 0; i <= 1000; ++i) dense.push_back(1.0 + i / 1000.0);
  CHECK(hausdorff_distance(dense, b, 0.0, 2.0) <= 2e-3);

  SpectralSet empty;
  empty.lambda_max = 2.0;
  CHECK(hausdorff_distance({0.5}, empty, 0.0, 2.0) == 2.0);
}

TEST_CASE("beta curves are monotone within components and export as CSV") {
  const auto sp = interval_spectra();
  const auto curve = beta_curve(interval_lattice(1.0), 200.0, 40, sp);
  CHECK(curve.theta == doctest::Approx(0.5).epsilon(1e-6));
  REQUIRE(!curve.components.empty());
  for (const auto& comp : curve.components)
    for (size_t i = 1; i < comp.size(); ++i) {
      CHECK(comp[i].beta.lo > comp[i - 1].beta.lo);
      CHECK(comp[i].lambda > comp[i - 1].lambda);
    }
  CHECK(curve.components[0][0].lambda == 0.0);
  CHECK(curve.components[0][0].beta.lo == 0.0);

  const auto csv = beta_csv(curve);
  CHECK(csv.substr(0, 23) == "lambda,beta_lo,beta_hi\n");
  CHECK(csv == beta_csv(curve));  // deterministic

  const auto set_text =
      set_csv(predicted_spectrum(interval_lattice(1.0), 200.0, sp));
  CHECK(set_text.find("interval,") != std::string::npos);
}
