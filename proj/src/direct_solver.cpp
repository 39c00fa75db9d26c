#include "hicospec/direct_solver.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>

#include "hicospec/fft_poisson.hpp"
#include "hicospec/lanczos.hpp"

namespace hicospec::ds {

namespace {

using SpMat = Eigen::SparseMatrix<double>;
using Eigen::VectorXd;

double hmean(double a, double b) { return 2 * a * b / (a + b); }

int wrap(int i, int n) { return ((i % n) + n) % n; }

double feature_width(const geo::Shape& s) {
  // narrowest cross-section at scale 1; raster masks are treated one
  // mask cell wide, which is conservative for blocky masks
  switch (s.kind) {
    case geo::ShapeKind::disk:
      return 2 * s.size;
    default:
      return s.size;
  }
}

}  // namespace

void GridOperator::apply(const double* u, double* out) const {
  const double inv_h2 = 1.0 / (h * h);
  const double e2 = eps * eps;
  const bool per = bc == Bc::periodic;
  const std::uint8_t* m = soft.data();
  for (int j = 0; j < ny; ++j) {
    const std::size_t r = std::size_t(j) * nx;
    const std::size_t rS =
        j > 0 ? r - nx : (per ? std::size_t(ny - 1) * nx : r);
    const std::size_t rN = j + 1 < ny ? r + nx : (per ? 0 : r);
    const bool hasS = per || j > 0;
    const bool hasN = per || j + 1 < ny;
    for (int i = 0; i < nx; ++i) {
      const std::size_t c = r + i;
      const double ac = m[c] ? e2 : a1;
      double acc = 0;
      if (i > 0 || per) {
        const std::size_t w = i > 0 ? c - 1 : r + nx - 1;
        const double aw = m[w] ? e2 : a1;
        acc += hmean(ac, aw) * (u[c] - u[w]);
      } else {
        acc += 2 * ac * u[c];
      }
      if (i + 1 < nx || per) {
        const std::size_t e = i + 1 < nx ? c + 1 : r;
        const double ae = m[e] ? e2 : a1;
        acc += hmean(ac, ae) * (u[c] - u[e]);
      } else {
        acc += 2 * ac * u[c];
      }
      if (hasS) {
        const std::size_t s = rS + i;
        const double as = m[s] ? e2 : a1;
        acc += hmean(ac, as) * (u[c] - u[s]);
      } else {
        acc += 2 * ac * u[c];
      }
      if (hasN) {
        const std::size_t nb = rN + i;
        const double an = m[nb] ? e2 : a1;
        acc += hmean(ac, an) * (u[c] - u[nb]);
      } else {
        acc += 2 * ac * u[c];
      }
      out[c] = acc * inv_h2;
    }
  }
}

bool GridOperator::mirror_symmetric() const {
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx / 2; ++i)
      if (soft[idx(i, j)] != soft[idx(nx - 1 - i, j)]) return false;
  for (int j = 0; j < ny / 2; ++j)
    for (int i = 0; i < nx; ++i)
      if (soft[idx(i, j)] != soft[idx(i, ny - 1 - j)]) return false;
  return true;
}

GridOperator assemble(const geo::Realization& real, double eps, double h,
                      Bc bc, double a1) {
  if (real.dim != 2) throw ConfigError("assemble: grids are 2d");
  if (eps <= 0 || h <= 0 || a1 <= 0)
    throw ConfigError("assemble: eps, h and a1 must be positive");

  double feat = std::numeric_limits<double>::infinity();
  for (const auto& inc : real.inclusions)
    feat = std::min(feat, inc.scale * feature_width(real.shape_of(inc)));
  if (std::isfinite(feat) && h > eps * feat / 16 * (1 + 1e-12))
    throw PreconditionError(
        "assemble: inclusions under-resolved at h = " + std::to_string(h) +
        "; required h <= " + std::to_string(eps * feat / 16));

  GridOperator op;
  op.bc = bc;
  op.eps = eps;
  op.a1 = a1;
  op.box = Box{{eps * real.window.lo.x, eps * real.window.lo.y},
               {eps * real.window.hi.x, eps * real.window.hi.y}};
  op.nx = static_cast<int>(std::lround(op.box.edge_x() / h));
  op.ny = static_cast<int>(std::lround(op.box.edge_y() / h));
  const int min_n = bc == Bc::periodic ? 3 : 2;
  if (op.nx < min_n || op.ny < min_n)
    throw ConfigError("assemble: grid box too small for the spacing");
  const double hx = op.box.edge_x() / op.nx;
  const double hy = op.box.edge_y() / op.ny;
  if (std::abs(hx - hy) > 1e-9 * hx)
    throw ConfigError("assemble: box does not snap to square cells");
  op.h = hx;
  op.soft.assign(static_cast<std::size_t>(op.nx) * op.ny, 0);

  const bool per = bc == Bc::periodic;
  for (const auto& inc : real.inclusions) {
    const auto& shape = real.shape_of(inc);
    const double cx = eps * inc.center.x, cy = eps * inc.center.y;
    const double rx = eps * inc.scale * shape.half_extent_x();
    const double ry = eps * inc.scale * shape.half_extent_y();
    const int i0 = static_cast<int>(std::floor((cx - rx - op.box.lo.x) / hx));
    const int i1 = static_cast<int>(std::ceil((cx + rx - op.box.lo.x) / hx));
    const int j0 = static_cast<int>(std::floor((cy - ry - op.box.lo.y) / hy));
    const int j1 = static_cast<int>(std::ceil((cy + ry - op.box.lo.y) / hy));
    for (int j = j0; j <= j1; ++j) {
      if (!per && (j < 0 || j >= op.ny)) continue;
      for (int i = i0; i <= i1; ++i) {
        if (!per && (i < 0 || i >= op.nx)) continue;
        const Vec2 p{(op.box.lo.x + (i + 0.5) * hx) / eps - inc.center.x,
                     (op.box.lo.y + (j + 0.5) * hy) / eps - inc.center.y};
        if (shape.contains(p, inc.scale))
          op.soft[op.idx(per ? wrap(i, op.nx) : i, per ? wrap(j, op.ny) : j)] =
              1;
      }
    }
  }
  return op;
}

SpMat sparse_matrix(const GridOperator& op) {
  const std::int64_t n = op.cells();
  const bool per = op.bc == Bc::periodic;
  if (per && (op.nx < 3 || op.ny < 3))
    throw ConfigError("sparse_matrix: periodic grids need nx, ny >= 3");
  const double inv_h2 = 1.0 / (op.h * op.h);
  SpMat m(n, n);
  m.reserve(Eigen::VectorXi::Constant(static_cast<int>(n), 5));
  for (int j = 0; j < op.ny; ++j)
    for (int i = 0; i < op.nx; ++i) {
      const std::size_t c = op.idx(i, j);
      const double ac = op.coeff(c);
      double dg = 0;
      double wE = 0, wWrapE = 0, wN = 0, wWrapN = 0;
      // west
      if (i > 0 || per) {
        const std::size_t w = i > 0 ? c - 1 : op.idx(op.nx - 1, j);
        const double f = hmean(ac, op.coeff(w));
        dg += f;
        if (i == 0) wWrapE = f;  // lower entry owned by this column
      } else {
        dg += 2 * ac;
      }
      // east
      if (i + 1 < op.nx || per) {
        const std::size_t e = i + 1 < op.nx ? c + 1 : op.idx(0, j);
        const double f = hmean(ac, op.coeff(e));
        dg += f;
        if (i + 1 < op.nx) wE = f;
      } else {
        dg += 2 * ac;
      }
      // south
      if (j > 0 || per) {
        const std::size_t s = j > 0 ? c - op.nx : op.idx(i, op.ny - 1);
        const double f = hmean(ac, op.coeff(s));
        dg += f;
        if (j == 0) wWrapN = f;
      } else {
        dg += 2 * ac;
      }
      // north
      if (j + 1 < op.ny || per) {
        const std::size_t nb = j + 1 < op.ny ? c + op.nx : op.idx(i, 0);
        const double f = hmean(ac, op.coeff(nb));
        dg += f;
        if (j + 1 < op.ny) wN = f;
      } else {
        dg += 2 * ac;
      }
      // lower triangle, ascending row within the column
      m.insert(c, c) = dg * inv_h2;
      if (wE > 0) m.insert(c + 1, c) = -wE * inv_h2;
      if (wWrapE > 0) m.insert(op.idx(op.nx - 1, j), c) = -wWrapE * inv_h2;
      if (wN > 0) m.insert(c + op.nx, c) = -wN * inv_h2;
      if (wWrapN > 0) m.insert(op.idx(i, op.ny - 1), c) = -wWrapN * inv_h2;
    }
  m.makeCompressed();
  return m;
}

namespace {

void require_sectorable(const GridOperator& op) {
  if (op.bc != Bc::dirichlet)
    throw ConfigError("sector split needs a dirichlet box");
  if (op.nx % 2 || op.ny % 2 || op.nx < 4 || op.ny < 4)
    throw ConfigError("sector split needs even nx, ny >= 4");
  if (!op.mirror_symmetric())
    throw ConfigError("sector split needs a mirror-symmetric mask");
}

bool sectorable(const GridOperator& op) {
  return op.bc == Bc::dirichlet && op.nx % 2 == 0 && op.ny % 2 == 0 &&
         op.nx >= 4 && op.ny >= 4 && op.mirror_symmetric();
}

// count of eigenvalues strictly below t, by LDLT inertia; shifts landing
// on (or numerically too close to) an eigenvalue are jittered. `used`
// receives the shift the count actually corresponds to.
int count_below(const SpMat& base, double t, double* used = nullptr) {
  const auto n = base.cols();
  for (int attempt = 0; attempt < 4; ++attempt) {
    const double shift =
        t + attempt * 1e-9 * (1 + std::abs(t)) * (attempt % 2 ? -1 : 1);
    if (used) *used = shift;
    SpMat m = base;
    for (Eigen::Index k = 0; k < n; ++k)
      m.valuePtr()[m.outerIndexPtr()[k]] -= shift;  // diagonal first per col
    Eigen::SimplicialLDLT<SpMat, Eigen::Lower> ldlt;
    ldlt.compute(m);
    if (ldlt.info() != Eigen::Success) continue;
    const VectorXd d = ldlt.vectorD();
    const double dmax = d.cwiseAbs().maxCoeff();
    bool sane = dmax > 0 && std::isfinite(dmax);
    int neg = 0;
    for (Eigen::Index k = 0; sane && k < n; ++k) {
      if (!std::isfinite(d[k]) || std::abs(d[k]) < 1e-13 * dmax) sane = false;
      if (d[k] < 0) ++neg;
    }
    if (sane) return neg;
  }
  throw NumericalError("inertia count failed near t = " + std::to_string(t));
}

}  // namespace

Eigen::SparseMatrix<double> sector_matrix(const GridOperator& op, int px,
                                          int py) {
  require_sectorable(op);
  if ((px != 0 && px != 1) || (py != 0 && py != 1))
    throw ConfigError("sector parity must be 0 or 1");
  const int mx = op.nx / 2, my = op.ny / 2;
  const double inv_h2 = 1.0 / (op.h * op.h);
  SpMat m(std::int64_t(mx) * my, std::int64_t(mx) * my);
  m.reserve(Eigen::VectorXi::Constant(mx * my, 3));
  for (int j = 0; j < my; ++j)
    for (int i = 0; i < mx; ++i) {
      const std::size_t c = std::size_t(j) * mx + i;
      const double ac = op.coeff(op.idx(i, j));
      double dg = 0, wE = 0, wN = 0;
      // west: domain boundary at i = 0
      if (i > 0)
        dg += hmean(ac, op.coeff(op.idx(i - 1, j)));
      else
        dg += 2 * ac;
      // east: mirror wall at i = mx-1 (face coefficient equals ac by
      // symmetry); even parity drops the term, odd doubles it
      if (i + 1 < mx) {
        wE = hmean(ac, op.coeff(op.idx(i + 1, j)));
        dg += wE;
      } else if (px == 1) {
        dg += 2 * ac;
      }
      // south: domain boundary at j = 0
      if (j > 0)
        dg += hmean(ac, op.coeff(op.idx(i, j - 1)));
      else
        dg += 2 * ac;
      // north: mirror wall at j = my-1
      if (j + 1 < my) {
        wN = hmean(ac, op.coeff(op.idx(i, j + 1)));
        dg += wN;
      } else if (py == 1) {
        dg += 2 * ac;
      }
      m.insert(c, c) = dg * inv_h2;
      if (wE > 0) m.insert(c + 1, c) = -wE * inv_h2;
      if (wN > 0) m.insert(c + mx, c) = -wN * inv_h2;
    }
  m.makeCompressed();
  return m;
}

int eig_count_below_sectored(const GridOperator& op, double t) {
  require_sectorable(op);
  int total = 0;
  for (int py = 0; py < 2; ++py)
    for (int px = 0; px < 2; ++px)
      total += count_below(sector_matrix(op, px, py), t);
  return total;
}

int eig_count_below(const GridOperator& op, double t) {
  constexpr std::int64_t whole_cap = 4'500'000;
  constexpr std::int64_t sector_preferred = 1'000'000;
  if (op.cells() > sector_preferred && sectorable(op))
    return eig_count_below_sectored(op, t);
  if (op.cells() > whole_cap)
    throw NumericalError(
        "certified counting above 4.5M cells needs a mirror-symmetric "
        "dirichlet grid");
  return count_below(sparse_matrix(op), t);
}

namespace {

struct Candidate {
  double lambda;
  VectorXd vec;
  double residual;
};

// one shift-invert sweep over the slice [a, b) from a fixed seed;
// nullopt = retry with a different seed / larger pad / narrower slice
std::optional<std::vector<Candidate>> window_sweep(
    const GridOperator& op, const SpMat& base, double t1, double t2, int n1,
    int n2, std::uint64_t seed, int pad, double sigma_bias, int* solves) {
  const auto n = base.cols();
  double sigma = 0.5 * (t1 + t2) + sigma_bias;
  Eigen::SimplicialLDLT<SpMat, Eigen::Lower> ldlt;
  int nsig = -1;
  for (int attempt = 0; attempt < 4; ++attempt) {
    SpMat m = base;
    for (Eigen::Index k = 0; k < n; ++k)
      m.valuePtr()[m.outerIndexPtr()[k]] -= sigma;
    ldlt.compute(m);
    if (ldlt.info() == Eigen::Success) {
      const VectorXd d = ldlt.vectorD();
      const double dmax = d.cwiseAbs().maxCoeff();
      bool sane = dmax > 0;
      nsig = 0;
      for (Eigen::Index k = 0; sane && k < n; ++k) {
        if (!std::isfinite(d[k]) || std::abs(d[k]) < 1e-13 * dmax)
          sane = false;
        if (d[k] < 0) ++nsig;
      }
      if (sane) break;
    }
    nsig = -1;
    sigma += 1e-6 * (1 + t2 - t1);
  }
  if (nsig < 0)
    throw NumericalError("spectrum window: shift factorization failed");

  // Lanczos only has to locate the window subspace; the block polish below
  // purifies it, so a loose tolerance keeps failed sweeps cheap.
  std::vector<std::pair<double, VectorXd>> raw;
  const int side_count[2] = {nsig - n1, n2 - nsig};  // below, above
  for (int side = 0; side < 2; ++side) {
    if (side_count[side] <= 0) continue;
    const double sgn = side == 0 ? -1.0 : 1.0;
    lin::SymOp fn = [&](const double* in, double* out) {
      Eigen::Map<const VectorXd> vin(in, n);
      const VectorXd y = ldlt.solve(vin);
      ++*solves;
      for (Eigen::Index k = 0; k < n; ++k) out[k] = sgn * y[k];
    };
    // convergence is only demanded of the in-window pairs: on each side of
    // the midpoint they dominate every outside |theta|, so the inertia count
    // is exactly the number of reliable leaders. The pad only adds basis room.
    lin::LanczosOptions lopt;
    lopt.n_want = std::min<std::int64_t>(side_count[side], n);
    lopt.basis_cap = static_cast<int>(std::min<std::int64_t>(
        std::max<std::int64_t>(5 * (side_count[side] + pad) / 2 + 32, 48), n));
    lopt.tol = 1e-9;
    lopt.max_restarts = 80;
    lopt.start_seed = seed + side;
    if (n > 1'500'000)
      lopt.basis_cap = static_cast<int>(
          std::min<std::int64_t>(side_count[side] + pad + 24, n));
    const auto res = lin::lanczos_largest(fn, static_cast<int>(n), lopt);
    if (!res.converged) return std::nullopt;
    for (int t = 0; t < lopt.n_want; ++t) {
      const double theta = res.values[t];
      if (theta <= 0) break;  // crossed to the far side of sigma
      const double lam = sigma + sgn / theta;
      // slices are half-open [a, b); the inertia counts strictly below
      const bool in_window =
          side == 0 ? (lam >= t1 && lam < sigma) : (lam >= sigma && lam < t2);
      if (in_window) raw.push_back({lam, res.vectors.col(t)});
    }
  }
  if (static_cast<int>(raw.size()) != n2 - n1) return std::nullopt;
  if (raw.empty()) return std::vector<Candidate>{};

  // block polish: inverse subspace iteration with the factored shift plus
  // Rayleigh-Ritz. The window eigenvalues are the ones nearest sigma, so
  // each pass contracts toward their invariant subspace and the residuals
  // fall to solve accuracy within a few iterations.
  const int k = static_cast<int>(raw.size());
  Eigen::MatrixXd V(n, k);
  for (int j = 0; j < k; ++j) V.col(j) = raw[j].second;
  std::vector<Candidate> found;
  for (int pass = 0; pass < 8; ++pass) {
    if (pass > 0) {
      for (int j = 0; j < k; ++j) V.col(j) = ldlt.solve(V.col(j));
      *solves += k;
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(V);
      V = qr.householderQ() * Eigen::MatrixXd::Identity(n, k);
    }
    Eigen::MatrixXd W(n, k);
    for (int j = 0; j < k; ++j) op.apply(V.col(j).data(), W.col(j).data());
    const Eigen::MatrixXd S = V.transpose() * W;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
        0.5 * (S + S.transpose()));
    V = (V * es.eigenvectors()).eval();
    W = (W * es.eigenvectors()).eval();

    found.clear();
    bool good = true;
    for (int j = 0; j < k; ++j) {
      Candidate c;
      c.lambda = es.eigenvalues()[j];
      c.residual = (W.col(j) - c.lambda * V.col(j)).norm() /
                   std::max(std::abs(c.lambda), 1.0);
      good = good && c.residual <= 1e-9;
      c.vec = V.col(j);
      found.push_back(std::move(c));
    }
    if (good) break;
  }

  for (const auto& c : found) {
    const bool in_window = c.lambda >= t1 && c.lambda < t2;
    if (!in_window || c.residual > 1e-8) return std::nullopt;
  }
  return found;
}

}  // namespace

SpectrumWindow spectrum_window(const GridOperator& op, double t1, double t2,
                               const WindowOptions& opt) {
  if (t1 > t2) throw ConfigError("spectrum window: t1 > t2");
  const double ceiling = op.trust_ceiling(opt.c_trust);
  if (t2 > ceiling)
    throw PreconditionError(
        "spectrum window: t2 = " + std::to_string(t2) +
        " above the trust ceiling " + std::to_string(ceiling));
  if (op.cells() > 4'500'000)
    throw NumericalError("spectrum window: grid too large for extraction");

  const SpMat base = sparse_matrix(op);
  double e1 = t1, e2 = t2;
  const int n1 = count_below(base, t1, &e1);
  const int n2 = count_below(base, t2, &e2);
  SpectrumWindow out;
  out.t1 = t1;
  out.t2 = t2;
  out.count_below_t1 = n1;
  if (n2 == n1) return out;
  if (n2 - n1 > opt.max_count)
    throw NumericalError("spectrum window: [" + std::to_string(t1) + ", " +
                         std::to_string(t2) + "] holds " +
                         std::to_string(n2 - n1) + " eigenvalues, max_count " +
                         std::to_string(opt.max_count));

  // inertia-guided slicing: bisect until each slice holds few eigenvalues,
  // then shift-invert at the slice midpoint. Tight clusters end up alone in
  // a narrow slice whose midpoint separates them sharply from the rest.
  struct Slice {
    double a, b;
    int na, nb;
  };
  constexpr int kChunk = 12;
  const std::uint64_t seeds[3] = {opt.seed, opt.seed * 0x9e3779b97f4a7c15ULL,
                                  opt.seed + 0x632be59bd9b4e019ULL};
  const int pads[3] = {4, 8, 16};
  int solves = 0;
  std::vector<Candidate> all;
  std::vector<Slice> work{{e1, e2, n1, n2}};
  while (!work.empty()) {
    const Slice s = work.back();
    work.pop_back();
    if (s.nb == s.na) continue;
    if (s.nb - s.na <= kChunk) {
      std::optional<std::vector<Candidate>> got;
      for (int a = 0; a < 3 && !got; ++a)
        got = window_sweep(op, base, s.a, s.b, s.na, s.nb, seeds[a], pads[a],
                           a * 1e-3 * (s.b - s.a), &solves);
      if (got) {
        all.insert(all.end(), std::make_move_iterator(got->begin()),
                   std::make_move_iterator(got->end()));
        continue;
      }
      if (s.b - s.a <= 1e-9 * (1 + std::abs(s.a) + std::abs(s.b)))
        throw NumericalError(
            "spectrum window: " + std::to_string(s.nb - s.na) +
            " eigenvalues clustered near " + std::to_string(s.a) +
            " defeated 3 restarts per slice");
    }
    double mid = 0.5 * (s.a + s.b);
    const int nm = std::clamp(count_below(base, mid, &mid), s.na, s.nb);
    work.push_back({s.a, mid, s.na, nm});
    work.push_back({mid, s.b, nm, s.nb});
  }

  std::sort(all.begin(), all.end(), [](const Candidate& a, const Candidate& b) {
    return a.lambda < b.lambda;
  });
  out.solves = solves;
  for (auto& c : all) {
    out.lambda.push_back(c.lambda);
    out.residual.push_back(c.residual);
    if (opt.keep_vectors)
      out.vectors.emplace_back(c.vec.data(), c.vec.data() + c.vec.size());
  }
  return out;
}

namespace {

double smooth5(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * u * (10 + u * (-15 + 6 * u));
}

// 1 on [-L/4, L/4], 0 outside [-L/2, L/2], quintic ramp between
double bump1(double a, double L) {
  const double d = L / 2 - a;
  if (d <= 0) return 0;
  const double q = L / 4;
  return d >= q ? 1.0 : smooth5(d / q);
}

struct Pcg {
  int iters = 0;
  double rel = 0;
};

// PCG for (A + 1) x = scale * rhs with the constant-coefficient FFT
// preconditioner (-a1 Lap + 1)^{-1} applied in single precision
Pcg solve_shifted(const GridOperator& op, const std::vector<double>& rhs,
                  double scale, std::vector<double>& x, double tol_target,
                  double tol_accept, int maxit) {
  const std::size_t n = rhs.size();
  x.assign(n, 0.0);
  std::vector<double> r(n), p(n), t(n);
  std::vector<float> f(n);
  std::unique_ptr<fftp::DirichletPoissonF> pd;
  std::unique_ptr<fftp::PeriodicPoissonF> pp;
  if (op.bc == Bc::dirichlet)
    pd = std::make_unique<fftp::DirichletPoissonF>(op.nx, op.ny, op.h, op.a1,
                                                   op.a1, 1.0);
  else
    pp = std::make_unique<fftp::PeriodicPoissonF>(op.nx, op.ny, op.h, op.a1,
                                                  op.a1, 1.0);
  const auto precon = [&](const std::vector<double>& in,
                          std::vector<double>& out) {
    for (std::size_t k = 0; k < n; ++k) f[k] = static_cast<float>(in[k]);
    if (pd)
      pd->solve(f.data(), f.data());
    else
      pp->solve(f.data(), f.data());
    for (std::size_t k = 0; k < n; ++k) out[k] = f[k];
  };

  double bnorm = 0;
  for (std::size_t k = 0; k < n; ++k) {
    r[k] = scale * rhs[k];
    bnorm += r[k] * r[k];
  }
  bnorm = std::sqrt(bnorm);
  if (bnorm == 0) return {0, 0.0};

  Pcg st;
  double rho_old = 0, best = std::numeric_limits<double>::infinity();
  int stall = 0;
  for (int it = 1; it <= maxit; ++it) {
    precon(r, t);
    double rho = 0;
    for (std::size_t k = 0; k < n; ++k) rho += r[k] * t[k];
    if (it == 1) {
      p = t;
    } else {
      const double beta = rho / rho_old;
      for (std::size_t k = 0; k < n; ++k) p[k] = t[k] + beta * p[k];
    }
    rho_old = rho;
    op.apply(p.data(), t.data());
    double pq = 0;
    for (std::size_t k = 0; k < n; ++k) {
      t[k] += p[k];  // (A + 1) p
      pq += p[k] * t[k];
    }
    if (pq <= 0) throw NumericalError("(A+1) solve: lost positivity");
    const double alpha = rho / pq;
    double rn = 0;
    for (std::size_t k = 0; k < n; ++k) {
      x[k] += alpha * p[k];
      r[k] -= alpha * t[k];
      rn += r[k] * r[k];
    }
    st.iters = it;
    st.rel = std::sqrt(rn) / bnorm;
    if (st.rel < best * 0.9) {
      best = st.rel;
      stall = 0;
    } else if (++stall > 80) {
      break;  // recurrence hit its floor
    }
    if (st.rel < tol_target) break;
  }
  // certify against the true residual
  op.apply(x.data(), t.data());
  double rn = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double rr = scale * rhs[k] - (t[k] + x[k]);
    rn += rr * rr;
  }
  st.rel = std::sqrt(rn) / bnorm;
  if (st.rel > tol_accept)
    throw NumericalError("(A+1) solve: relative residual " +
                         std::to_string(st.rel) + " after " +
                         std::to_string(st.iters) + " iterations");
  return st;
}

double norm2(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

double mass_ratio(const GridOperator& op, const std::vector<double>& v,
                  double L) {
  const Vec2 c = op.box.center();
  double inside = 0, total = 0;
  for (int j = 0; j < op.ny; ++j)
    for (int i = 0; i < op.nx; ++i) {
      const double x = op.box.lo.x + (i + 0.5) * op.h;
      const double y = op.box.lo.y + (j + 0.5) * op.h;
      const double w = v[op.idx(i, j)] * v[op.idx(i, j)];
      total += w;
      if (std::abs(x - c.x) <= L / 2 && std::abs(y - c.y) <= L / 2)
        inside += w;
    }
  if (total == 0) throw ConfigError("mass ratio of a zero vector");
  return std::sqrt(inside / total);
}

QuasimodeReport plane_wave_quasimode(const GridOperator& op,
                                     const geo::Realization& real,
                                     double lambda, double beta, double ahom,
                                     double L, double shape_h) {
  if (real.dim != 2) throw ConfigError("plane-wave quasimode: grids are 2d");
  if (lambda < 0 || L <= 0)
    throw ConfigError("plane-wave quasimode: lambda and L must be >= 0");
  if (ahom <= 0)
    throw ConfigError("plane-wave quasimode: homogenized coefficient <= 0");
  if (beta < 0)
    throw PreconditionError(
        "plane-wave quasimode: beta(lambda) < 0, no admissible wave vector");
  const double edge = std::min(op.box.edge_x(), op.box.edge_y());
  const bool full = op.bc == Bc::periodic && L >= edge - 1e-12;
  if (!full && L > edge + 1e-12)
    throw PreconditionError("plane-wave quasimode: cutoff exceeds the box");

  double k = std::sqrt(beta / ahom);
  if (full) {
    // snap to the torus wave lattice so the empty case is an exact mode
    const double ex = op.box.edge_x();
    k = 2 * std::numbers::pi * std::round(k * ex / (2 * std::numbers::pi)) /
        ex;
  }

  const std::size_t n = op.cells();
  const Vec2 c = op.box.center();
  std::vector<double> ueps(n);
  for (int j = 0; j < op.ny; ++j)
    for (int i = 0; i < op.nx; ++i) {
      const double x = op.box.lo.x + (i + 0.5) * op.h;
      const double y = op.box.lo.y + (j + 0.5) * op.h;
      const double eta = full ? 1.0
                              : bump1(std::abs(x - c.x), L) *
                                    bump1(std::abs(y - c.y), L);
      ueps[op.idx(i, j)] = eta * std::cos(k * (x - c.x));
    }

  if (lambda > 0) {
    const bool per = op.bc == Bc::periodic;
    for (const auto& inc : real.inclusions) {
      const auto& shape = real.shape_of(inc);
      const double sh =
          shape_h > 0 ? shape_h : op.h / (op.eps * inc.scale);
      const auto patch = spectra::b_field_on_inclusion(
          shape, lambda, op.eps, Vec2{op.eps * inc.center.x,
                                      op.eps * inc.center.y},
          inc.scale, op.h, op.box.lo, sh);
      for (int pj = 0; pj < patch.ny; ++pj) {
        const int j = patch.iy0 + pj;
        if (!per && (j < 0 || j >= op.ny)) continue;
        for (int pi = 0; pi < patch.nx; ++pi) {
          const int i = patch.ix0 + pi;
          if (!per && (i < 0 || i >= op.nx)) continue;
          const double b = patch.v[std::size_t(pj) * patch.nx + pi];
          if (b == 0) continue;
          ueps[op.idx(per ? wrap(i, op.nx) : i, per ? wrap(j, op.ny) : j)] *=
              1 + lambda * b;
        }
      }
    }
  }

  std::vector<double> uhat;
  const double tol =
      std::max(1e-9 / ((1 + lambda) * (1 + lambda)), 5e-13);
  const Pcg cg = solve_shifted(op, ueps, lambda + 1, uhat, tol, 1e-8, 3000);

  QuasimodeReport rep;
  rep.tag = "plane-wave";
  rep.lambda = lambda;
  rep.eps = op.eps;
  rep.cutoff = L;
  rep.box_edge = op.box.edge_x();
  rep.k = k;
  rep.cg_iters = cg.iters;
  rep.cg_rel = cg.rel;
  const double nhat = norm2(uhat);
  if (nhat == 0)
    throw NumericalError("plane-wave quasimode: solve returned zero");
  double diff = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = ueps[i] - uhat[i];
    diff += d * d;
  }
  rep.residual = (lambda + 1) * std::sqrt(diff) / nhat;
  std::vector<double> av(n);
  op.apply(uhat.data(), av.data());
  double dr = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = av[i] - lambda * uhat[i];
    dr += d * d;
  }
  rep.residual_direct = std::sqrt(dr) / nhat;
  rep.mass_ratio = mass_ratio(op, uhat, std::min(L, edge));
  return rep;
}

std::vector<double> marking_field(const GridOperator& op,
                                  const geo::Realization& real,
                                  const spectra::ShapeModes& modes, int mode,
                                  const geo::Marking& marking, double L) {
  if (real.dim != 2) throw ConfigError("marking quasimode: grids are 2d");
  if (mode < 0 || mode >= static_cast<int>(modes.vectors.size()))
    throw ConfigError("marking quasimode: mode index out of range");
  const Box mark_box = Box::centered(op.box.center(), L);
  if (!op.box.contains(mark_box, 2))
    throw PreconditionError("marking quasimode: support box exceeds grid");

  const auto& phi = modes.vectors[mode];
  const auto& g = modes.grid;
  std::vector<double> u(op.cells(), 0.0);
  int used = 0;
  for (const auto& inc : real.inclusions) {
    if (inc.shape_id != modes.spectrum.shape_id) continue;
    const Box bb = real.inclusion_bbox(inc);
    const Box macro{{op.eps * bb.lo.x, op.eps * bb.lo.y},
                    {op.eps * bb.hi.x, op.eps * bb.hi.y}};
    if (!mark_box.contains(macro, 2)) continue;
    const auto it = marking.value.find(inc.label);
    if (it == marking.value.end())
      throw ConfigError("marking quasimode: no mark for label " +
                        std::to_string(inc.label));
    const double m = it->second;
    const auto& shape = real.shape_of(inc);
    const int i0 =
        static_cast<int>(std::floor((macro.lo.x - op.box.lo.x) / op.h));
    const int i1 =
        static_cast<int>(std::ceil((macro.hi.x - op.box.lo.x) / op.h));
    const int j0 =
        static_cast<int>(std::floor((macro.lo.y - op.box.lo.y) / op.h));
    const int j1 =
        static_cast<int>(std::ceil((macro.hi.y - op.box.lo.y) / op.h));
    for (int j = std::max(0, j0); j <= std::min(op.ny - 1, j1); ++j)
      for (int i = std::max(0, i0); i <= std::min(op.nx - 1, i1); ++i) {
        const Vec2 p{(op.box.lo.x + (i + 0.5) * op.h) / op.eps -
                         inc.center.x,
                     (op.box.lo.y + (j + 0.5) * op.h) / op.eps -
                         inc.center.y};
        if (!shape.contains(p, inc.scale)) continue;
        const double wx = p.x / inc.scale, wy = p.y / inc.scale;
        const int si =
            std::clamp(static_cast<int>((wx - g.ox) / g.h), 0, g.nx - 1);
        const int sj =
            std::clamp(static_cast<int>((wy - g.oy) / g.h), 0, g.ny - 1);
        const std::int32_t d = g.dof[std::size_t(sj) * g.nx + si];
        if (d >= 0) u[op.idx(i, j)] = m * phi[d];
      }
    ++used;
  }
  if (used == 0)
    throw PreconditionError(
        "marking quasimode: no inclusions inside the support box");
  return u;
}

QuasimodeReport marking_quasimode(const GridOperator& op,
                                  const geo::Realization& real,
                                  const spectra::ShapeModes& modes, int mode,
                                  const geo::Marking& marking, double L) {
  const std::vector<double> u =
      marking_field(op, real, modes, mode, marking, L);
  const double nu = modes.spectrum.raw_lambda[mode];
  const std::size_t n = op.cells();

  std::vector<double> uhat;
  const double tol = std::max(1e-9 / ((1 + nu) * (1 + nu)), 5e-13);
  const Pcg cg = solve_shifted(op, u, nu + 1, uhat, tol, 1e-8, 3000);

  QuasimodeReport rep;
  rep.tag = "marking";
  rep.lambda = nu;
  rep.eps = op.eps;
  rep.cutoff = L;
  rep.box_edge = op.box.edge_x();
  rep.cg_iters = cg.iters;
  rep.cg_rel = cg.rel;
  const double nhat = norm2(uhat);
  if (nhat == 0)
    throw NumericalError("marking quasimode: solve returned zero");
  double diff = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = u[i] - uhat[i];
    diff += d * d;
  }
  rep.residual = (nu + 1) * std::sqrt(diff) / nhat;
  std::vector<double> av(n);
  op.apply(uhat.data(), av.data());
  double dr = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = av[i] - nu * uhat[i];
    dr += d * d;
  }
  rep.residual_direct = std::sqrt(dr) / nhat;
  rep.mass_ratio = mass_ratio(op, uhat, L);
  return rep;
}

std::vector<std::uint8_t> relevance_classify(
    const GridOperator& op, const std::vector<std::vector<double>>& vecs,
    double L, double c_mass) {
  if (L <= 0 || L > std::min(op.box.edge_x(), op.box.edge_y()) + 1e-12)
    throw PreconditionError("relevance: box of edge L must fit the grid");
  std::vector<std::uint8_t> flags;
  flags.reserve(vecs.size());
  for (const auto& v : vecs)
    flags.push_back(mass_ratio(op, v, L) > c_mass ? 1 : 0);
  return flags;
}

geo::Realization void_injection(const geo::Realization& real,
                                const Box& box) {
  if (!real.window.contains(box, real.dim))
    throw PreconditionError("void injection: box outside the window");
  geo::Realization out = real;
  std::erase_if(out.inclusions, [&](const geo::Inclusion& inc) {
    const Box bb = real.inclusion_bbox(inc);
    const bool x = bb.lo.x <= box.hi.x && bb.hi.x >= box.lo.x;
    if (real.dim == 1) return x;
    return x && bb.lo.y <= box.hi.y && bb.hi.y >= box.lo.y;
  });
  return out;
}

}  // namespace hicospec::ds
