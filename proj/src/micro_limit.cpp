#include "hicospec/micro_limit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unordered_map>

#include "hicospec/rng.hpp"

namespace hicospec::micro {

namespace {

using spectra::PoolEntry;

const ShapeSpectrum& spec_for(const SpectraMap& spectra,
                              const std::string& id) {
  const auto it = spectra.find(id);
  if (it == spectra.end())
    throw PreconditionError("no cached spectrum for shape '" + id + "'");
  return it->second;
}

// resolvent integral of one scaled copy: scale^(d+2) * I_unit(scale^2 λ)
Bracket scaled_integral(const ShapeSpectrum& spec, double scale, int dim,
                        double lambda) {
  const Bracket unit = spectra::b_integral(spec, scale * scale * lambda);
  const double f = std::pow(scale, dim + 2);
  return {f * unit.lo, f * unit.hi};
}

std::string variant_tag(const geo::RandomModel& m) {
  if (std::holds_alternative<geo::BernoulliLattice>(m.variant))
    return "bernoulli_lattice";
  if (std::holds_alternative<geo::ScaledLattice>(m.variant))
    return "scaled_lattice";
  return "random_parking";
}

}  // namespace

// ---------------------------------------------------------------------------
// SpectralSet

void SpectralSet::normalize() {
  for (auto& iv : intervals) {
    iv.first = std::clamp(iv.first, 0.0, lambda_max);
    iv.second = std::clamp(iv.second, 0.0, lambda_max);
  }
  std::erase_if(intervals,
                [](const auto& iv) { return iv.second < iv.first; });
  std::sort(intervals.begin(), intervals.end());
  std::vector<std::pair<double, double>> merged;
  for (const auto& iv : intervals) {
    if (!merged.empty() && iv.first <= merged.back().second)
      merged.back().second = std::max(merged.back().second, iv.second);
    else
      merged.push_back(iv);
  }
  intervals = std::move(merged);

  std::sort(points.begin(), points.end());
  points.erase(std::unique(points.begin(), points.end()), points.end());
  std::erase_if(points, [&](double p) {
    if (p < 0 || p > lambda_max) return true;
    for (const auto& iv : intervals)
      if (p >= iv.first && p <= iv.second) return true;
    return false;
  });
}

bool SpectralSet::contains(double x, double tol) const {
  return distance_to(x) <= tol;
}

double SpectralSet::distance_to(double x) const {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& iv : intervals) {
    if (x >= iv.first && x <= iv.second) return 0;
    best = std::min(best, std::min(std::abs(x - iv.first),
                                   std::abs(x - iv.second)));
  }
  for (double p : points) best = std::min(best, std::abs(x - p));
  return best;
}

std::vector<std::pair<double, double>> SpectralSet::gaps() const {
  std::vector<std::pair<double, double>> out;
  double cursor = 0;
  auto pt = points.begin();
  const auto emit = [&](double to) {
    while (pt != points.end() && *pt <= to) {
      if (*pt > cursor) out.push_back({cursor, *pt});
      cursor = std::max(cursor, *pt);
      ++pt;
    }
    if (to > cursor) out.push_back({cursor, to});
    cursor = std::max(cursor, to);
  };
  for (const auto& iv : intervals) {
    emit(iv.first);
    cursor = std::max(cursor, iv.second);
  }
  emit(lambda_max);
  return out;
}

// ---------------------------------------------------------------------------
// beta and friends

Bracket beta_eval(const geo::RandomModel& model, double lambda,
                  const SpectraMap& spectra, double parking_theta) {
  double lo = 0, hi = 0;
  for (const auto& e : spectra::pool_entries(model, parking_theta)) {
    if (e.intensity == 0) continue;
    const Bracket b =
        scaled_integral(spec_for(spectra, e.id), e.scale, model.dim, lambda);
    lo += e.intensity * b.lo;
    hi += e.intensity * b.hi;
  }
  const double l2 = lambda * lambda;
  return {lambda + l2 * lo, lambda + l2 * hi};
}

double lambda_guard(const geo::RandomModel& model, const SpectraMap& spectra,
                    double parking_theta) {
  double g = 0;
  for (const auto& e : spectra::pool_entries(model, parking_theta)) {
    if (e.intensity == 0) continue;
    g = std::max(g,
                 spec_for(spectra, e.id).pole_guard() / (e.scale * e.scale));
  }
  return g;
}

double beta_from_realization(const geo::Realization& real, double lambda,
                             const SpectraMap& spectra) {
  double sum = 0;
  for (const auto& inc : real.inclusions) {
    if (!real.window.contains(real.inclusion_bbox(inc), real.dim)) continue;
    const auto& spec = spec_for(spectra, inc.shape_id);
    sum += scaled_integral(spec, inc.scale, real.dim, lambda).mid();
  }
  return lambda + lambda * lambda * sum / real.window.volume(real.dim);
}

namespace {

bool strictly_inside(const Box& inner, const Box& outer, int dim) {
  if (!(inner.lo.x > outer.lo.x && inner.hi.x < outer.hi.x)) return false;
  if (dim == 1) return true;
  return inner.lo.y > outer.lo.y && inner.hi.y < outer.hi.y;
}

}  // namespace

double local_average(const geo::Realization& real, Vec2 x, double M,
                     double lambda, const SpectraMap& spectra) {
  const Box box = Box::centered(x, M);
  if (!real.window.contains(box, real.dim))
    throw PreconditionError("averaging box leaves the realization window");
  double sum = 0;
  for (const auto& inc : real.inclusions)
    if (strictly_inside(real.inclusion_bbox(inc), box, real.dim))
      sum += scaled_integral(spec_for(spectra, inc.shape_id), inc.scale,
                             real.dim, lambda)
                 .mid();
  return lambda + lambda * lambda * sum / std::pow(M, real.dim);
}

std::vector<std::pair<double, double>> beta_inf_estimate(
    const geo::Realization& real, double lambda,
    const std::vector<double>& m_list, const SpectraMap& spectra,
    double shift_pitch) {
  if (shift_pitch <= 0) throw ConfigError("shift pitch must be > 0");
  const int dim = real.dim;

  struct Item {
    Box bbox;
    double value;
  };
  std::vector<Item> items;
  items.reserve(real.inclusions.size());
  std::unordered_map<int64_t, std::vector<uint32_t>> index;
  for (const auto& inc : real.inclusions) {
    const Box bb = real.inclusion_bbox(inc);
    const double v = scaled_integral(spec_for(spectra, inc.shape_id),
                                     inc.scale, dim, lambda)
                         .mid();
    const int64_t kx = int64_t(std::floor(inc.center.x));
    const int64_t ky = dim == 1 ? 0 : int64_t(std::floor(inc.center.y));
    const int64_t label =
        dim == 1 ? pair_label(kx) : pair_label(kx, ky);
    index[label].push_back(uint32_t(items.size()));
    items.push_back({bb, v});
  }

  // sum over items with bounding box strictly inside `box`; inclusion
  // centers are at most one unit from their bbox, hence the 1-cell margin
  const auto box_sum = [&](const Box& box) {
    double s = 0;
    const int64_t x0 = int64_t(std::floor(box.lo.x)) - 1;
    const int64_t x1 = int64_t(std::floor(box.hi.x)) + 1;
    const int64_t y0 = dim == 1 ? 0 : int64_t(std::floor(box.lo.y)) - 1;
    const int64_t y1 = dim == 1 ? 0 : int64_t(std::floor(box.hi.y)) + 1;
    for (int64_t ky = y0; ky <= y1; ++ky)
      for (int64_t kx = x0; kx <= x1; ++kx) {
        const int64_t label =
            dim == 1 ? pair_label(kx) : pair_label(kx, ky);
        const auto it = index.find(label);
        if (it == index.end()) continue;
        for (const uint32_t i : it->second)
          if (strictly_inside(items[i].bbox, box, dim)) s += items[i].value;
      }
    return s;
  };

  std::vector<std::pair<double, double>> out;
  for (const double M : m_list) {
    if (M <= 0 || M > real.window.edge_x() + 1e-9 ||
        (dim == 2 && M > real.window.edge_y() + 1e-9))
      throw PreconditionError("averaging edge exceeds the window");
    const double half = M / 2;
    const Vec2 lo{real.window.lo.x + half,
                  dim == 1 ? 0 : real.window.lo.y + half};
    const Vec2 hi{real.window.hi.x - half,
                  dim == 1 ? 0 : real.window.hi.y - half};
    double sup = -std::numeric_limits<double>::infinity();
    const auto positions = [&](double a, double b) {
      std::vector<double> xs;
      for (double v = a; v < b - 1e-12; v += shift_pitch) xs.push_back(v);
      xs.push_back(b);  // include the flush-right placement
      return xs;
    };
    const double scale = std::pow(M, -dim) * lambda * lambda;
    for (const double cy : dim == 1 ? std::vector<double>{0.0}
                                    : positions(lo.y, hi.y))
      for (const double cx : positions(lo.x, hi.x)) {
        const double s = box_sum(Box::centered({cx, cy}, M));
        sup = std::max(sup, lambda + scale * s);
      }
    out.push_back({M, sup});
  }
  return out;
}

double default_shift_pitch(const geo::RandomModel& model) {
  if (std::holds_alternative<geo::RandomParking>(model.variant)) return 0.25;
  return model.lattice_pitch() / 4;
}

double beta_derivative_check(const geo::RandomModel& model,
                             const std::vector<double>& lambda_grid,
                             const SpectraMap& spectra,
                             double parking_theta) {
  if (lambda_grid.size() < 2)
    throw ConfigError("slope check needs at least two grid points");
  for (size_t i = 1; i < lambda_grid.size(); ++i)
    if (lambda_grid[i] <= lambda_grid[i - 1])
      throw ConfigError("lambda grid must be strictly increasing");
  const auto poles = spectra::micro_spectrum(model, lambda_grid.back(),
                                             spectra, parking_theta);
  for (const auto& p : poles)
    if (p.lambda > lambda_grid.front() && p.lambda < lambda_grid.back())
      throw PreconditionError("lambda grid crosses the pole at " +
                              std::to_string(p.lambda));
  double min_slope = std::numeric_limits<double>::infinity();
  double prev = beta_eval(model, lambda_grid[0], spectra, parking_theta).mid();
  for (size_t i = 1; i < lambda_grid.size(); ++i) {
    const double cur =
        beta_eval(model, lambda_grid[i], spectra, parking_theta).mid();
    min_slope = std::min(
        min_slope, (cur - prev) / (lambda_grid[i] - lambda_grid[i - 1]));
    prev = cur;
  }
  return min_slope;
}

// ---------------------------------------------------------------------------
// predicted spectrum

namespace {

struct ComponentGrid {
  double a, b;      // component closure
  double la, lb;    // guarded evaluation range, la <= lb
  bool left_pole, right_pole;
};

// gap components of [0, lambda_max] split at the pooled poles
std::vector<ComponentGrid> components_of(const std::vector<WeightedPoint>& mu,
                                         double lambda_max, double guard) {
  std::vector<double> cuts{0.0};
  for (const auto& p : mu)
    if (p.lambda < lambda_max) cuts.push_back(p.lambda);
  cuts.push_back(lambda_max);
  std::vector<ComponentGrid> out;
  for (size_t i = 0; i + 1 < cuts.size(); ++i) {
    ComponentGrid c;
    c.a = cuts[i];
    c.b = cuts[i + 1];
    c.left_pole = i > 0;
    c.right_pole = i + 2 < cuts.size();
    c.la = c.left_pole ? c.a + guard : c.a;
    c.lb = c.right_pole ? c.b - guard : c.b;
    if (c.la > c.lb) c.la = c.lb = 0.5 * (c.a + c.b);
    out.push_back(c);
  }
  return out;
}

}  // namespace

SpectralSet predicted_spectrum(const geo::RandomModel& model,
                               double lambda_max, const SpectraMap& spectra,
                               double parking_theta) {
  if (lambda_max <= 0) throw ConfigError("lambda_max must be > 0");
  const auto mu =
      spectra::micro_spectrum(model, lambda_max, spectra, parking_theta);
  const double guard = lambda_guard(model, spectra, parking_theta);

  // beta evaluation that backs away from poles just beyond lambda_max
  const auto eval = [&](double l, double retreat_dir) {
    for (int attempt = 0;; ++attempt) {
      try {
        return beta_eval(model, l, spectra, parking_theta);
      } catch (const NumericalError&) {
        if (attempt >= 3 || guard == 0) throw;
        l += retreat_dir * guard;
      }
    }
  };

  SpectralSet set;
  set.lambda_max = lambda_max;
  set.endpoint_uncertainty = guard;
  for (const auto& p : mu)
    if (p.lambda <= lambda_max) set.points.push_back(p.lambda);

  bool in_band = true;  // beta(0) = 0, so the spectrum starts at 0
  double band_start = 0;
  const auto comps = components_of(mu, lambda_max, guard);
  for (size_t ci = 0; ci < comps.size(); ++ci) {
    const auto& c = comps[ci];
    // first component: every pole sits above lambda, beta >= lambda >= 0
    bool positive = ci == 0;
    bool negative = false;
    double root = 0;
    if (!positive && c.la < c.lb) {
      const double ba = eval(c.la, +1).mid();
      const double bb = eval(c.lb, -1).mid();
      if (ba >= 0) {
        positive = true;
      } else if (bb < 0) {
        negative = true;
      } else {
        // exactly one sign change: bisect on bracket midpoints
        const double tol_root = 1e-4 * (c.b - c.a);
        double lo = c.la, hi = c.lb;
        while (hi - lo > tol_root) {
          const double mid = 0.5 * (lo + hi);
          (beta_eval(model, mid, spectra, parking_theta).mid() < 0 ? lo : hi) =
              mid;
        }
        root = 0.5 * (lo + hi);
        const Bracket below = eval(std::max(c.la, root - tol_root), +1);
        const Bracket above = eval(std::min(c.lb, root + tol_root), -1);
        if (!(below.hi < 0 && above.lo >= 0))
          throw NumericalError(
              "beta brackets too wide to certify the root near " +
              std::to_string(root) + "; more modes needed");
      }
    } else if (!positive) {
      positive = true;  // component thinner than the pole guards
    }

    if (positive) {
      if (!in_band) {
        band_start = c.a;
        in_band = true;
      }
    } else if (negative) {
      if (in_band) {
        set.intervals.push_back({band_start, c.a});
        in_band = false;
      }
    } else {  // root inside the component
      if (in_band) set.intervals.push_back({band_start, c.a});
      band_start = root;
      in_band = true;
    }
  }
  if (in_band) set.intervals.push_back({band_start, lambda_max});
  set.normalize();
  return set;
}

GSet limit_set_G(const geo::RandomModel& model, double lambda_max,
                 const SpectraMap& spectra, double parking_theta) {
  GSet g;
  g.set.lambda_max = lambda_max;

  const auto union_in = [&](const SpectralSet& s) {
    g.set.intervals.insert(g.set.intervals.end(), s.intervals.begin(),
                           s.intervals.end());
    g.set.points.insert(g.set.points.end(), s.points.begin(),
                        s.points.end());
    g.set.endpoint_uncertainty =
        std::max(g.set.endpoint_uncertainty, s.endpoint_uncertainty);
  };

  if (const auto* b = std::get_if<geo::BernoulliLattice>(&model.variant)) {
    double total = 0;
    for (const auto& ws : b->shapes) total += ws.prob;
    if (total < 1 - 1e-12) {
      // vacant sites occur, so beta_inf >= lambda >= 0 everywhere
      g.set.intervals.push_back({0, lambda_max});
      g.method = "vacancy: beta_inf >= lambda";
    } else {
      // saturated lattice: beta_inf = max over pure single-shape tilings
      for (const auto& ws : b->shapes) {
        if (ws.prob == 0) continue;
        geo::RandomModel pure;
        pure.dim = model.dim;
        geo::BernoulliLattice lat;
        lat.pitch = b->pitch;
        lat.shapes.push_back({ws.shape, 1.0});
        pure.variant = lat;
        union_in(predicted_spectrum(pure, lambda_max, spectra));
      }
      g.method = b->shapes.size() == 1
                     ? "single periodic density"
                     : "max over per-shape periodic densities";
    }
  } else if (const auto* s =
                 std::get_if<geo::ScaledLattice>(&model.variant)) {
    for (auto [r, w] : s->scales) {
      if (w == 0) continue;
      geo::RandomModel pure;
      pure.dim = model.dim;
      geo::ScaledLattice lat;
      lat.pitch = s->pitch;
      lat.base = s->base;
      lat.scales = {{r, 1.0}};
      pure.variant = lat;
      union_in(predicted_spectrum(pure, lambda_max, spectra));
    }
    g.method = "max over per-scale periodic densities";
  } else {
    // jammed unit cubes: densest admissible tilings are 1- and 2-periodic
    geo::Shape cube;
    cube.id = "unit-cube";
    cube.kind = model.dim == 1 ? geo::ShapeKind::interval
                               : geo::ShapeKind::square;
    cube.size = 1.0;
    for (const double pitch : {1.0, 2.0}) {
      geo::RandomModel pure;
      pure.dim = model.dim;
      geo::BernoulliLattice lat;
      lat.pitch = pitch;
      lat.shapes.push_back({cube, 1.0});
      pure.variant = lat;
      union_in(predicted_spectrum(pure, lambda_max, spectra));
    }
    g.method = "max of 1- and 2-periodic cube densities";
    g.bespoke_argument = true;
  }
  g.set.normalize();
  return g;
}

SpectralMeasure spectral_measure(const geo::RandomModel& model,
                                 const std::vector<double>& edges,
                                 const SpectraMap& spectra,
                                 double parking_theta) {
  if (edges.size() < 2) throw ConfigError("need at least one bin");
  for (size_t i = 1; i < edges.size(); ++i)
    if (edges[i] <= edges[i - 1])
      throw ConfigError("bin edges must be strictly increasing");
  const auto mu =
      spectra::micro_spectrum(model, edges.back(), spectra, parking_theta);
  SpectralMeasure out;
  out.edges = edges;
  out.mass.assign(edges.size() - 1, 0.0);
  for (const auto& p : mu) {
    if (p.lambda < edges.front() || p.lambda >= edges.back()) continue;
    const size_t bin =
        size_t(std::upper_bound(edges.begin(), edges.end(), p.lambda) -
               edges.begin()) -
        1;
    out.mass[bin] += p.weight;
  }
  return out;
}

double SpectralMeasure::total() const {
  double t = 0;
  for (double m : mass) t += m;
  return t;
}

std::vector<bool> point_spectrum_classify(const ShapeSpectrum& spec,
                                          double tol_mean) {
  std::vector<bool> flags;
  flags.reserve(spec.clusters.size());
  for (const auto& c : spec.clusters)
    flags.push_back(c.mult >= 2 || c.m <= tol_mean * tol_mean);
  return flags;
}

double hausdorff_distance(const std::vector<double>& a, const SpectralSet& b,
                          double lo, double hi, double sample_pitch) {
  if (hi <= lo) throw ConfigError("empty window");
  std::vector<double> pa;
  for (double x : a)
    if (x >= lo && x <= hi) pa.push_back(x);
  std::sort(pa.begin(), pa.end());

  std::vector<double> samples;  // of b clipped to the window
  for (const auto& iv : b.intervals) {
    const double s = std::max(iv.first, lo), e = std::min(iv.second, hi);
    if (s > e) continue;
    const int n = std::max(1, int(std::ceil((e - s) / sample_pitch)));
    for (int i = 0; i <= n; ++i) samples.push_back(s + (e - s) * i / n);
  }
  for (double p : b.points)
    if (p >= lo && p <= hi) samples.push_back(p);

  if (pa.empty() || samples.empty()) {
    std::fprintf(stderr,
                 "warning: hausdorff distance of an empty set defaults to "
                 "the window diameter\n");
    return hi - lo;
  }

  const auto dist_to_sorted = [](const std::vector<double>& v, double x) {
    const auto it = std::lower_bound(v.begin(), v.end(), x);
    double d = std::numeric_limits<double>::infinity();
    if (it != v.end()) d = std::min(d, *it - x);
    if (it != v.begin()) d = std::min(d, x - *(it - 1));
    return d;
  };

  double h = 0;
  for (double x : pa) {
    double d = std::numeric_limits<double>::infinity();
    for (const auto& iv : b.intervals) {
      const double s = std::max(iv.first, lo), e = std::min(iv.second, hi);
      if (s > e) continue;
      d = std::min(d, x < s ? s - x : (x > e ? x - e : 0.0));
    }
    for (double p : b.points)
      if (p >= lo && p <= hi) d = std::min(d, std::abs(x - p));
    h = std::max(h, d);
  }
  for (double s : samples) h = std::max(h, dist_to_sorted(pa, s));
  return h;
}

BetaCurve beta_curve(const geo::RandomModel& model, double lambda_max,
                     int n_per_component, const SpectraMap& spectra,
                     double parking_theta) {
  if (n_per_component < 2) throw ConfigError("need >= 2 samples per gap");
  BetaCurve curve;
  curve.model_tag = variant_tag(model);
  curve.lambda_max = lambda_max;
  curve.micro =
      spectra::micro_spectrum(model, lambda_max, spectra, parking_theta);
  for (const auto& e : spectra::pool_entries(model, parking_theta)) {
    if (e.intensity == 0) continue;
    curve.theta += e.intensity * std::pow(e.scale, model.dim) *
                   spec_for(spectra, e.id).area;
  }
  const double guard = lambda_guard(model, spectra, parking_theta);
  for (const auto& c : components_of(curve.micro, lambda_max, guard)) {
    if (c.la >= c.lb) continue;
    std::vector<GapSample> grid;
    for (int i = 0; i < n_per_component; ++i) {
      const double l = c.la + (c.lb - c.la) * i / (n_per_component - 1);
      try {
        grid.push_back({l, beta_eval(model, l, spectra, parking_theta)});
      } catch (const NumericalError&) {
        // sample sits inside the guard of a pole beyond lambda_max
      }
    }
    curve.components.push_back(std::move(grid));
  }
  return curve;
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string beta_csv(const BetaCurve& curve) {
  std::string out = "lambda,beta_lo,beta_hi\n";
  for (const auto& comp : curve.components)
    for (const auto& s : comp)
      out += fmt(s.lambda) + "," + fmt(s.beta.lo) + "," + fmt(s.beta.hi) +
             "\n";
  return out;
}

std::string set_csv(const SpectralSet& set) {
  std::string out = "kind,lo,hi\n";
  for (const auto& iv : set.intervals)
    out += "interval," + fmt(iv.first) + "," + fmt(iv.second) + "\n";
  for (double p : set.points) out += "point," + fmt(p) + "," + fmt(p) + "\n";
  return out;
}

}  // namespace hicospec::micro
