#include "hicospec/shape_spectra.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "hicospec/lanczos.hpp"
#include "hicospec/rng.hpp"

namespace hicospec::spectra {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using SpMat = Eigen::SparseMatrix<double>;
using nlohmann::json;

namespace {

// dense eigensolve up to this many interior cells; beyond it the
// shift-inverted Lanczos path takes over
constexpr int kDenseCap = 2600;
constexpr double kClusterTol = 1e-6;

}  // namespace

ShapeGrid rasterize(const geo::Shape& shape, double h) {
  if (h <= 0) throw ConfigError("grid spacing must be > 0");
  ShapeGrid g;
  g.dim = shape.kind == geo::ShapeKind::interval ? 1 : 2;
  const double ex = shape.half_extent_x();
  const double ey = shape.half_extent_y();
  g.nx = int(std::lround(2 * ex / h));
  if (g.nx < 1)
    throw ConfigError("shape '" + shape.id +
                      "' rasterizes to an empty mask at h=" +
                      std::to_string(h));
  g.h = 2 * ex / g.nx;
  g.ox = -ex;
  if (g.dim == 2) {
    g.ny = std::max(1, int(std::lround(2 * ey / g.h)));
    g.oy = -double(g.ny) * g.h / 2;
  }
  g.dof.assign(size_t(g.nx) * size_t(g.ny), -1);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const Vec2 c{g.ox + (i + 0.5) * g.h,
                   g.dim == 1 ? 0.0 : g.oy + (j + 0.5) * g.h};
      if (shape.contains(c, 1.0))
        g.dof[size_t(j) * g.nx + i] = g.n_dof++;
    }
  if (g.n_dof == 0)
    throw ConfigError("shape '" + shape.id +
                      "' rasterizes to an empty mask at h=" +
                      std::to_string(h));
  return g;
}

namespace {

// 5-point Dirichlet Laplacian; a face whose neighbor cell is outside the
// shape uses the mirrored ghost value -u, placing the zero boundary on the
// face midpoint (this keeps the stencil second order up to the boundary)
SpMat assemble_dirichlet(const ShapeGrid& g) {
  const double w = 1.0 / (g.h * g.h);
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(size_t(g.n_dof) * 5);
  const int dirs = g.dim == 1 ? 2 : 4;
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const int32_t row = g.dof[size_t(j) * g.nx + i];
      if (row < 0) continue;
      double diag = 0;
      const int nb[4][2] = {{i - 1, j}, {i + 1, j}, {i, j - 1}, {i, j + 1}};
      for (int d = 0; d < dirs; ++d) {
        const auto [ni, nj] = nb[d];
        int32_t col = -1;
        if (ni >= 0 && ni < g.nx && nj >= 0 && nj < g.ny)
          col = g.dof[size_t(nj) * g.nx + ni];
        if (col >= 0) {
          diag += w;
          trip.emplace_back(row, col, -w);
        } else {
          diag += 2 * w;  // ghost = -u across the boundary face
        }
      }
      trip.emplace_back(row, row, diag);
    }
  SpMat A(g.n_dof, g.n_dof);
  A.setFromTriplets(trip.begin(), trip.end());
  return A;
}

struct RawModes {
  std::vector<double> lambda;        // ascending
  std::vector<VectorXd> vec;         // l2-normalized coefficient vectors
  bool iterative = false;
};

// count of eigenvalues below sigma via the inertia of A - sigma*I
int eigs_below(const SpMat& A, double sigma) {
  SpMat I(A.rows(), A.rows());
  I.setIdentity();
  Eigen::SimplicialLDLT<SpMat> ldlt(SpMat(A - sigma * I));
  if (ldlt.info() != Eigen::Success) return -1;
  int neg = 0;
  const auto& D = ldlt.vectorD();
  for (Eigen::Index i = 0; i < D.size(); ++i)
    if (D[i] < 0) ++neg;
  return neg;
}

RawModes lowest_modes(const SpMat& A, int n_want) {
  const int n = int(A.rows());
  n_want = std::min(n_want, n);
  RawModes out;
  if (n <= kDenseCap) {
    MatrixXd Ad(A);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(Ad);
    if (es.info() != Eigen::Success)
      throw NumericalError("dense eigensolve failed");
    for (int p = 0; p < n_want; ++p) {
      out.lambda.push_back(es.eigenvalues()[p]);
      out.vec.push_back(es.eigenvectors().col(p));
    }
    return out;
  }

  Eigen::SimplicialLLT<SpMat> llt(A);
  if (llt.info() != Eigen::Success)
    throw NumericalError("Laplacian factorization failed");
  lin::SymOp op = [&](const double* in, double* outp) {
    Eigen::Map<const VectorXd> x(in, n);
    Eigen::Map<VectorXd> y(outp, n);
    y = llt.solve(x);
  };
  lin::LanczosOptions lopt;
  lopt.n_want = n_want;
  const auto res = lin::lanczos_largest(op, n, lopt);
  if (!res.converged)
    throw NumericalError("eigensolver failed to converge for " +
                         std::to_string(n_want) + " modes");
  for (int p = 0; p < n_want; ++p) {  // largest of inv(A) = smallest of A
    const double lam = 1.0 / res.values[p];
    const VectorXd v = res.vectors.col(p);
    const double resid = (A * v - lam * v).norm();
    if (resid > 1e-7 * lam)
      throw NumericalError("eigenpair residual " + std::to_string(resid) +
                           " too large at lambda=" + std::to_string(lam));
    out.lambda.push_back(lam);
    out.vec.push_back(v);
  }
  out.iterative = true;
  return out;
}

}  // namespace

ShapeModes dirichlet_modes(const geo::Shape& shape, double h, int n_modes,
                           int keep_vectors) {
  if (n_modes < 1) throw ConfigError("n_modes must be >= 1");
  ShapeModes out;
  out.grid = rasterize(shape, h);
  const ShapeGrid& g = out.grid;
  const double min_cells = 16;
  const double across = shape.diameter() / g.h;
  if (across < min_cells - 1e-9)
    throw PreconditionError("h does not resolve shape '" + shape.id +
                            "': " + std::to_string(across) +
                            " cells across the diameter, need >= 16");

  ShapeSpectrum& spec = out.spectrum;
  spec.shape_id = shape.id;
  spec.dim = g.dim;
  spec.h = g.h;
  spec.area = std::pow(g.h, g.dim) * g.n_dof;
  spec.truncated = n_modes > g.n_dof;
  if (spec.truncated)
    std::fprintf(stderr,
                 "warning: shape '%s' has %d interior cells; truncating "
                 "%d requested modes\n",
                 shape.id.c_str(), g.n_dof, n_modes);

  // a few spare modes so a degenerate cluster at the cut is never split
  const int spare = 8;
  const int target = std::min(n_modes, g.n_dof);
  const SpMat A = assemble_dirichlet(g);
  const RawModes raw = lowest_modes(A, std::min(target + spare, g.n_dof));

  const double cell = std::pow(g.h, g.dim);
  std::vector<double> mean(raw.lambda.size());
  for (size_t p = 0; p < raw.lambda.size(); ++p)
    mean[p] = std::sqrt(cell) * raw.vec[p].sum();

  // cluster boundaries on the extended list, then cut at the last cluster
  // that closes by position `target`
  std::vector<size_t> starts{0};
  for (size_t p = 1; p < raw.lambda.size(); ++p)
    if (raw.lambda[p] - raw.lambda[starts.back()] >
        kClusterTol * raw.lambda[p])
      starts.push_back(p);
  size_t cut = raw.lambda.size();
  if (int(raw.lambda.size()) > target) {
    cut = target;
    for (size_t s = 0; s < starts.size(); ++s)
      if (starts[s] >= size_t(target)) {
        cut = starts[s];
        break;
      }
    // never cut inside a cluster: back off to its start
    for (size_t s = starts.size(); s-- > 0;)
      if (starts[s] < cut &&
          (s + 1 == starts.size() ? raw.lambda.size() : starts[s + 1]) > cut) {
        cut = starts[s];
        break;
      }
  }
  if (cut == 0)
    throw NumericalError("mode request too small to close one cluster");

  // an iterative solve can in principle drop one copy of a degenerate
  // eigenvalue; certify the count below the cut against matrix inertia
  if (raw.iterative && cut < raw.lambda.size()) {
    const double sigma = 0.5 * (raw.lambda[cut - 1] + raw.lambda[cut]);
    const int below = eigs_below(A, sigma);
    if (below < 0)
      std::fprintf(stderr,
                   "warning: inertia certificate unavailable for shape "
                   "'%s' (indefinite factorization failed)\n",
                   shape.id.c_str());
    else if (below != int(cut))
      throw NumericalError("eigensolver missed modes: inertia reports " +
                           std::to_string(below) + " below " +
                           std::to_string(sigma) + ", computed " +
                           std::to_string(cut));
  }

  spec.n_modes = int(cut);
  spec.raw_lambda.assign(raw.lambda.begin(), raw.lambda.begin() + cut);
  spec.raw_mean.assign(mean.begin(), mean.begin() + cut);
  for (size_t s = 0; s < starts.size() && starts[s] < cut; ++s) {
    const size_t lo = starts[s];
    const size_t hi = std::min(cut, s + 1 < starts.size() ? starts[s + 1]
                                                          : cut);
    ModeCluster c;
    c.mult = int(hi - lo);
    double lam = 0;
    for (size_t p = lo; p < hi; ++p) {
      lam += raw.lambda[p];
      c.m += mean[p] * mean[p];
    }
    c.lambda = lam / c.mult;
    spec.clusters.push_back(c);
  }

  if (spec.clusters.front().lambda <= 0)
    throw NumericalError("nonpositive leading eigenvalue: assembly bug");

  const int kv = std::min<int>(keep_vectors, int(cut));
  for (int p = 0; p < kv; ++p) {
    std::vector<double> psi(raw.vec[p].size());
    const double scale = 1.0 / std::sqrt(cell);
    for (int i = 0; i < raw.vec[p].size(); ++i)
      psi[size_t(i)] = raw.vec[p][i] * scale;
    out.vectors.push_back(std::move(psi));
  }
  return out;
}

ShapeSpectrum dirichlet_spectrum(const geo::Shape& shape, double h,
                                 int n_modes) {
  return dirichlet_modes(shape, h, n_modes, 0).spectrum;
}

double ShapeSpectrum::captured_mass() const {
  double total = 0;
  for (const auto& c : clusters) total += c.m;
  return total;
}

double mass_identity_check(const ShapeSpectrum& spec) {
  return spec.captured_mass() / spec.area;
}

Bracket b_integral(const ShapeSpectrum& spec, double lambda) {
  const double guard = spec.pole_guard();
  for (const auto& c : spec.clusters)
    if (std::abs(lambda - c.lambda) < guard)
      throw NumericalError("lambda=" + std::to_string(lambda) +
                           " is inside the pole guard of eigenvalue " +
                           std::to_string(c.lambda));
  const double cut = spec.raw_lambda.back();
  if (lambda >= cut - guard)
    throw PreconditionError(
        "lambda=" + std::to_string(lambda) +
        " is beyond the computed spectrum (reaches " + std::to_string(cut) +
        "); more modes needed");
  double series = 0;
  for (const auto& c : spec.clusters) series += c.m / (c.lambda - lambda);
  const double remaining = std::max(0.0, spec.area - spec.captured_mass());
  // every uncomputed eigenvalue lies at or above the cutoff, so the tail
  // is nonnegative and at most remaining/(cut - lambda)
  return {series, series + remaining / (cut - lambda)};
}

GridPatch b_field_on_inclusion(const geo::Shape& shape, double lambda,
                               double eps, Vec2 center, double scale,
                               double grid_h, Vec2 grid_origin,
                               double shape_h) {
  if (eps <= 0 || scale <= 0 || grid_h <= 0)
    throw ConfigError("b_field: eps, scale and grid spacing must be > 0");
  const ShapeGrid g = rasterize(shape, shape_h);
  const SpMat A = assemble_dirichlet(g);
  const double mu = scale * scale * lambda;

  SpMat M = A;
  if (mu != 0) {
    SpMat I(g.n_dof, g.n_dof);
    I.setIdentity();
    M = A - mu * I;
  }
  Eigen::SimplicialLDLT<SpMat> ldlt(M);
  if (ldlt.info() != Eigen::Success)
    throw NumericalError("b_field: factorization failed (lambda near a "
                         "shape eigenvalue?)");
  const VectorXd rhs = VectorXd::Constant(g.n_dof, scale * scale);
  const VectorXd u = ldlt.solve(rhs);
  const double rel = (M * u - rhs).norm() / rhs.norm();
  if (rel > 1e-8)
    throw NumericalError(
        "b_field: solve residual " + std::to_string(rel) +
        "; lambda is too close to a shape eigenvalue");

  // sample on the caller's grid over the inclusion bounding box
  const int dim = g.dim;
  const double rex = eps * scale * shape.half_extent_x();
  const double rey = eps * scale * shape.half_extent_y();
  GridPatch patch;
  const auto lo_cell = [&](double x, double o) {
    return int(std::ceil((x - o) / grid_h - 0.5 - 1e-12));
  };
  const auto hi_cell = [&](double x, double o) {
    return int(std::floor((x - o) / grid_h - 0.5 + 1e-12));
  };
  patch.ix0 = lo_cell(center.x - rex, grid_origin.x);
  const int ix1 = hi_cell(center.x + rex, grid_origin.x);
  patch.nx = std::max(0, ix1 - patch.ix0 + 1);
  if (dim == 2) {
    patch.iy0 = lo_cell(center.y - rey, grid_origin.y);
    const int iy1 = hi_cell(center.y + rey, grid_origin.y);
    patch.ny = std::max(0, iy1 - patch.iy0 + 1);
  }
  patch.v.assign(size_t(patch.nx) * size_t(patch.ny), 0.0);
  for (int j = 0; j < patch.ny; ++j)
    for (int i = 0; i < patch.nx; ++i) {
      const Vec2 p{grid_origin.x + (patch.ix0 + i + 0.5) * grid_h,
                   dim == 1 ? 0.0
                            : grid_origin.y + (patch.iy0 + j + 0.5) * grid_h};
      const Vec2 w{(p.x - center.x) / (eps * scale),
                   dim == 1 ? 0.0 : (p.y - center.y) / (eps * scale)};
      if (!shape.contains(w, 1.0)) continue;
      const int si = std::clamp(int((w.x - g.ox) / g.h), 0, g.nx - 1);
      const int sj =
          dim == 1 ? 0 : std::clamp(int((w.y - g.oy) / g.h), 0, g.ny - 1);
      const int32_t d = g.dof[size_t(sj) * g.nx + si];
      patch.v[size_t(j) * patch.nx + i] = d >= 0 ? u[d] : 0.0;
    }
  return patch;
}

std::vector<PoolEntry> pool_entries(const geo::RandomModel& model,
                                    double parking_theta) {
  std::vector<PoolEntry> entries;
  const int d = model.dim;
  if (const auto* b = std::get_if<geo::BernoulliLattice>(&model.variant)) {
    const double cell = std::pow(b->pitch, d);
    for (const auto& ws : b->shapes)
      entries.push_back({ws.shape.id, 1.0, ws.prob / cell});
  } else if (const auto* s =
                 std::get_if<geo::ScaledLattice>(&model.variant)) {
    const double cell = std::pow(s->pitch, d);
    double total = 0;
    for (auto [r, w] : s->scales) total += w;
    for (auto [r, w] : s->scales)
      entries.push_back({s->base.id, r, w / total / cell});
  } else {
    if (parking_theta <= 0)
      throw ConfigError(
          "parking model needs a measured jamming coverage (parking_theta)");
    entries.push_back({"unit-cube", 1.0, parking_theta});  // item volume 1
  }
  return entries;
}

std::vector<WeightedPoint> micro_spectrum(
    const geo::RandomModel& model, double lambda_max,
    const std::map<std::string, ShapeSpectrum>& spectra,
    double parking_theta) {
  const auto entries = pool_entries(model, parking_theta);
  const int d = model.dim;
  std::vector<WeightedPoint> pool;
  for (const auto& e : entries) {
    if (e.intensity == 0) continue;
    const auto it = spectra.find(e.id);
    if (it == spectra.end())
      throw PreconditionError("no cached spectrum for shape '" + e.id + "'");
    const ShapeSpectrum& sp = it->second;
    // a truncated spectrum holds every discrete mode, so nothing is missing
    const double need = e.scale * e.scale * lambda_max;
    if (sp.raw_lambda.back() < need && !sp.truncated)
      throw PreconditionError(
          "cached spectrum for shape '" + e.id + "' reaches " +
          std::to_string(sp.raw_lambda.back()) + " but " +
          std::to_string(need) + " is required");
    const double mscale = std::pow(e.scale, d);
    for (const auto& c : sp.clusters) {
      const double lam = c.lambda / (e.scale * e.scale);
      if (lam > lambda_max) break;
      pool.push_back({lam, e.intensity * mscale * c.m});
    }
  }
  std::sort(pool.begin(), pool.end(),
            [](const WeightedPoint& a, const WeightedPoint& b) {
              return a.lambda < b.lambda;
            });
  std::vector<WeightedPoint> merged;
  for (const auto& p : pool) {
    if (!merged.empty() &&
        p.lambda - merged.back().lambda <= kClusterTol * p.lambda) {
      auto& m = merged.back();
      m.lambda = (m.lambda * m.weight + p.lambda * p.weight) /
                 (m.weight + p.weight);
      m.weight += p.weight;
    } else {
      merged.push_back(p);
    }
  }
  return merged;
}

// ---------------------------------------------------------------------------
// persistence

std::string to_json(const ShapeSpectrum& spec) {
  json j;
  j["shape_id"] = spec.shape_id;
  j["dim"] = spec.dim;
  j["h"] = spec.h;
  j["n_modes"] = spec.n_modes;
  j["area"] = spec.area;
  j["truncated"] = spec.truncated;
  j["captured"] = spec.captured_mass();
  json cl = json::array();
  for (const auto& c : spec.clusters)
    cl.push_back({c.lambda, c.mult, c.m});
  j["clusters"] = cl;
  j["raw_lambda"] = spec.raw_lambda;
  j["raw_mean"] = spec.raw_mean;
  return j.dump(2);
}

ShapeSpectrum spectrum_from_json(const std::string& text) {
  const json j = json::parse(text);
  ShapeSpectrum s;
  s.shape_id = j.at("shape_id").get<std::string>();
  s.dim = j.at("dim").get<int>();
  s.h = j.at("h").get<double>();
  s.n_modes = j.at("n_modes").get<int>();
  s.area = j.at("area").get<double>();
  s.truncated = j.value("truncated", false);
  for (const auto& e : j.at("clusters")) {
    ModeCluster c;
    c.lambda = e.at(0).get<double>();
    c.mult = e.at(1).get<int>();
    c.m = e.at(2).get<double>();
    s.clusters.push_back(c);
  }
  s.raw_lambda = j.at("raw_lambda").get<std::vector<double>>();
  s.raw_mean = j.at("raw_mean").get<std::vector<double>>();
  return s;
}

std::string SpectrumStore::from_env() {
  const char* v = std::getenv("HICOSPEC_CACHE");
  return v ? v : "";
}

SpectrumStore::SpectrumStore(std::string dir) : dir_(std::move(dir)) {}

namespace {

std::string shape_fingerprint(const geo::Shape& s) {
  uint64_t acc = mix_u64(uint64_t(s.kind), uint64_t(s.mask_nx * 31 +
                                                    s.mask_ny));
  uint64_t bits;
  static_assert(sizeof bits == sizeof s.size);
  std::memcpy(&bits, &s.size, sizeof bits);
  acc = mix_u64(acc, bits);
  for (const uint8_t b : s.mask) acc = acc * 1099511628211ull + b;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)acc);
  return buf;
}

}  // namespace

const ShapeSpectrum& SpectrumStore::get(const geo::Shape& shape, double h,
                                        int n_modes) {
  char hs[32];
  std::snprintf(hs, sizeof hs, "%.9g", h);
  const std::string key = shape.id + "-" + shape_fingerprint(shape) + "-h" +
                          hs + "-m" + std::to_string(n_modes);
  const auto it = mem_.find(key);
  if (it != mem_.end()) return it->second;

  if (!dir_.empty()) {
    std::ifstream in(dir_ + "/" + key + ".json");
    if (in) {
      std::stringstream ss;
      ss << in.rdbuf();
      return mem_.emplace(key, spectrum_from_json(ss.str())).first->second;
    }
  }
  ShapeSpectrum spec = dirichlet_spectrum(shape, h, n_modes);
  if (!dir_.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    std::ofstream out(dir_ + "/" + key + ".json");
    if (out) out << to_json(spec);
  }
  return mem_.emplace(key, std::move(spec)).first->second;
}

}  // namespace hicospec::spectra
