#include "hicospec/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <unordered_map>

#include <json.hpp>

#include "hicospec/rng.hpp"

namespace hicospec::geo {

using nlohmann::json;

namespace {

constexpr double kPi = 3.14159265358979323846;

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

// bounding box of the set cells, in cell indices [ix0,ix1] x [iy0,iy1]
struct MaskBounds {
  int ix0, ix1, iy0, iy1;
  int width() const { return ix1 - ix0 + 1; }
  int height() const { return iy1 - iy0 + 1; }
};

MaskBounds mask_bounds(const Shape& s) {
  MaskBounds b{s.mask_nx, -1, s.mask_ny, -1};
  for (int iy = 0; iy < s.mask_ny; ++iy)
    for (int ix = 0; ix < s.mask_nx; ++ix)
      if (s.mask[size_t(iy) * s.mask_nx + ix]) {
        b.ix0 = std::min(b.ix0, ix);
        b.ix1 = std::max(b.ix1, ix);
        b.iy0 = std::min(b.iy0, iy);
        b.iy1 = std::max(b.iy1, iy);
      }
  if (b.ix1 < 0) throw ConfigError("raster shape has an empty mask");
  return b;
}

}  // namespace

double Shape::diameter() const {
  switch (kind) {
    case ShapeKind::interval:
      return size;
    case ShapeKind::square:
      return size * std::sqrt(2.0);
    case ShapeKind::disk:
      return 2 * size;
    case ShapeKind::raster: {
      const MaskBounds b = mask_bounds(*this);
      return size * std::hypot(double(b.width()), double(b.height()));
    }
  }
  return 0;
}

double Shape::area(int dim) const {
  switch (kind) {
    case ShapeKind::interval:
      return size;
    case ShapeKind::square:
      return dim == 1 ? size : size * size;
    case ShapeKind::disk:
      return kPi * size * size;
    case ShapeKind::raster: {
      const auto set = std::count(mask.begin(), mask.end(), uint8_t(1));
      return double(set) * size * size;
    }
  }
  return 0;
}

double Shape::half_extent_x() const {
  switch (kind) {
    case ShapeKind::interval:
    case ShapeKind::square:
      return size / 2;
    case ShapeKind::disk:
      return size;
    case ShapeKind::raster:
      return size * mask_bounds(*this).width() / 2;
  }
  return 0;
}

double Shape::half_extent_y() const {
  switch (kind) {
    case ShapeKind::interval:
      return 0;
    case ShapeKind::square:
      return size / 2;
    case ShapeKind::disk:
      return size;
    case ShapeKind::raster:
      return size * mask_bounds(*this).height() / 2;
  }
  return 0;
}

bool Shape::contains(Vec2 p, double scale) const {
  const double x = p.x / scale, y = p.y / scale;
  switch (kind) {
    case ShapeKind::interval:
      return std::abs(x) <= size / 2;
    case ShapeKind::square:
      return std::max(std::abs(x), std::abs(y)) <= size / 2;
    case ShapeKind::disk:
      return x * x + y * y <= size * size;
    case ShapeKind::raster: {
      const MaskBounds b = mask_bounds(*this);
      // mask cells are half-open; the shape is centered at its bbox center
      const int ix =
          b.ix0 + int(std::floor(x / size + double(b.width()) / 2));
      const int iy =
          b.iy0 + int(std::floor(y / size + double(b.height()) / 2));
      if (ix < 0 || ix >= mask_nx || iy < 0 || iy >= mask_ny) return false;
      return mask[size_t(iy) * mask_nx + ix] != 0;
    }
  }
  return false;
}

void Shape::validate_raster() const {
  if (kind != ShapeKind::raster) return;
  if (mask_nx <= 0 || mask_ny <= 0 ||
      mask.size() != size_t(mask_nx) * size_t(mask_ny))
    throw ConfigError("raster shape '" + id + "': mask dimensions mismatch");
  if (size <= 0)
    throw ConfigError("raster shape '" + id + "': cell spacing must be > 0");
  mask_bounds(*this);  // rejects the all-empty mask

  // flood fill on a grid padded by one ring of empty cells; set cells must
  // form one 4-connected component and the empty cells another
  const int nx = mask_nx + 2, ny = mask_ny + 2;
  std::vector<uint8_t> pad(size_t(nx) * ny, 0);
  for (int iy = 0; iy < mask_ny; ++iy)
    for (int ix = 0; ix < mask_nx; ++ix)
      pad[size_t(iy + 1) * nx + (ix + 1)] = mask[size_t(iy) * mask_nx + ix];

  auto flood = [&](size_t start, uint8_t value) {
    std::vector<uint8_t> seen(pad.size(), 0);
    std::vector<size_t> stack{start};
    seen[start] = 1;
    size_t count = 0;
    while (!stack.empty()) {
      const size_t c = stack.back();
      stack.pop_back();
      ++count;
      const int ix = int(c % nx), iy = int(c / nx);
      const int nb[4][2] = {{ix - 1, iy}, {ix + 1, iy}, {ix, iy - 1},
                            {ix, iy + 1}};
      for (auto [jx, jy] : nb) {
        if (jx < 0 || jx >= nx || jy < 0 || jy >= ny) continue;
        const size_t j = size_t(jy) * nx + jx;
        if (!seen[j] && pad[j] == value) {
          seen[j] = 1;
          stack.push_back(j);
        }
      }
    }
    return count;
  };

  const size_t total_set =
      size_t(std::count(pad.begin(), pad.end(), uint8_t(1)));
  const size_t first_set =
      size_t(std::find(pad.begin(), pad.end(), uint8_t(1)) - pad.begin());
  if (flood(first_set, 1) != total_set)
    throw ConfigError("raster shape '" + id + "': mask is disconnected");
  if (flood(0, 0) != pad.size() - total_set)
    throw ConfigError("raster shape '" + id +
                      "': mask complement is disconnected (has holes)");
}

void RandomModel::validate() const {
  if (dim != 1 && dim != 2)
    throw ConfigError("model dimension must be 1 or 2");

  auto check_shape = [&](const Shape& s) {
    if (s.size <= 0 && s.kind != ShapeKind::raster)
      throw ConfigError("shape '" + s.id + "': size must be > 0");
    s.validate_raster();
    if (dim == 1 && s.kind != ShapeKind::interval)
      throw ConfigError("shape '" + s.id + "': d=1 supports intervals only");
    if (dim == 2 && s.kind == ShapeKind::interval)
      throw ConfigError("shape '" + s.id + "': intervals are d=1 only");
    // half-cell bound per axis: the shape plus the canonical offset then
    // fits in the unit cell with room for the separation gap
    const double ext = 2 * std::max(s.half_extent_x(), s.half_extent_y());
    if (ext > 0.5 + 1e-12)
      throw ConfigError("shape '" + s.id +
                        "': extent must be at most half the cell");
  };

  std::visit(
      overloaded{
          [&](const BernoulliLattice& m) {
            if (m.shapes.empty())
              throw ConfigError("lattice model needs at least one shape");
            if (m.pitch < 1) throw ConfigError("lattice pitch must be >= 1");
            if (m.min_gap <= 0) throw ConfigError("min_gap must be > 0");
            double total = 0;
            for (const auto& ws : m.shapes) {
              if (ws.prob < 0 || ws.prob > 1)
                throw ConfigError("shape probability outside [0,1]");
              total += ws.prob;
              check_shape(ws.shape);
            }
            // the remainder 1 - sum is the vacancy probability
            if (total > 1 + 1e-12)
              throw ConfigError("shape probabilities sum to more than 1");
          },
          [&](const ScaledLattice& m) {
            if (m.pitch < 1) throw ConfigError("lattice pitch must be >= 1");
            if (m.min_gap <= 0) throw ConfigError("min_gap must be > 0");
            if (m.scales.empty())
              throw ConfigError("scaled lattice needs a nonempty scale law");
            double prev = 0, total = 0;
            for (auto [r, w] : m.scales) {
              if (r <= 0 || r > 1)
                throw ConfigError("scale values must lie in (0,1]");
              if (r < prev)
                throw ConfigError("scale values must be nondecreasing");
              if (w < 0) throw ConfigError("scale weights must be >= 0");
              prev = r;
              total += w;
            }
            if (total <= 0)
              throw ConfigError("scale weights must have positive total");
            check_shape(m.base);
          },
          [&](const RandomParking& m) {
            if (m.t_max <= 0) throw ConfigError("parking t_max must be > 0");
            if (m.probe_pitch <= 0)
              throw ConfigError("parking probe pitch must be > 0");
            if (m.min_gap <= 0) throw ConfigError("min_gap must be > 0");
          },
      },
      variant);
}

double RandomModel::lattice_pitch() const {
  return std::visit(
      overloaded{[](const BernoulliLattice& m) { return m.pitch; },
                 [](const ScaledLattice& m) { return m.pitch; },
                 [](const RandomParking&) { return 1.0; }},
      variant);
}

const Shape& Realization::shape_of(const Inclusion& inc) const {
  const auto it = shapes.find(inc.shape_id);
  if (it == shapes.end())
    throw ConfigError("realization references unknown shape '" +
                      inc.shape_id + "'");
  return it->second;
}

Box Realization::inclusion_bbox(const Inclusion& inc) const {
  const Shape& s = shape_of(inc);
  const double ex = inc.scale * s.half_extent_x();
  const double ey = inc.scale * s.half_extent_y();
  return {{inc.center.x - ex, inc.center.y - ey},
          {inc.center.x + ex, inc.center.y + ey}};
}

namespace {

// Euclidean gap between two inclusion closures. Exact for box-box and
// disk-disk pairs; for mixed pairs the bounding-box gap is used, which can
// only under-estimate, so the separation rule stays safe.
double pair_gap(const Realization& real, const Inclusion& a,
                const Inclusion& b) {
  const Shape& sa = real.shape_of(a);
  const Shape& sb = real.shape_of(b);
  if (sa.kind == ShapeKind::disk && sb.kind == ShapeKind::disk) {
    const Vec2 d = a.center - b.center;
    return std::hypot(d.x, d.y) - a.scale * sa.size - b.scale * sb.size;
  }
  const Box ba = real.inclusion_bbox(a);
  const Box bb = real.inclusion_bbox(b);
  const double dx =
      std::max({0.0, bb.lo.x - ba.hi.x, ba.lo.x - bb.hi.x});
  const double dy =
      real.dim == 1 ? 0.0
                    : std::max({0.0, bb.lo.y - ba.hi.y, ba.lo.y - bb.hi.y});
  return std::hypot(dx, dy);
}

struct Anchor {
  int64_t kx, ky;
  bool operator<(const Anchor& o) const {
    return kx != o.kx ? kx < o.kx : ky < o.ky;
  }
};

void generate_lattice(const RandomModel& model, Realization& real,
                      uint64_t seed) {
  const double pitch = model.lattice_pitch();
  const Box& w = real.window;
  const uint64_t stream_base = mix_u64(model.master_seed, seed);

  const BernoulliLattice* bern =
      std::get_if<BernoulliLattice>(&model.variant);
  const ScaledLattice* scaled = std::get_if<ScaledLattice>(&model.variant);

  double min_gap = 0;
  if (bern) {
    min_gap = bern->min_gap;
    for (const auto& ws : bern->shapes) real.shapes[ws.shape.id] = ws.shape;
  } else {
    min_gap = scaled->min_gap;
    real.shapes[scaled->base.id] = scaled->base;
  }
  double weight_total = 0;
  if (scaled)
    for (auto [r, wgt] : scaled->scales) weight_total += wgt;

  const auto kx0 = int64_t(std::floor(w.lo.x / pitch)) - 1;
  const auto kx1 = int64_t(std::ceil(w.hi.x / pitch)) + 1;
  const auto ky0 =
      real.dim == 1 ? 0 : int64_t(std::floor(w.lo.y / pitch)) - 1;
  const auto ky1 = real.dim == 1 ? 0 : int64_t(std::ceil(w.hi.y / pitch)) + 1;

  std::map<Anchor, size_t> kept;  // anchor -> index into real.inclusions
  for (int64_t kx = kx0; kx <= kx1; ++kx) {
    for (int64_t ky = ky0; ky <= ky1; ++ky) {
      const int64_t label = real.dim == 1 ? pair_label(kx)
                                          : pair_label(kx, ky);
      SplitMix64 g(mix_u64(stream_base, uint64_t(label)));

      Inclusion inc;
      inc.label = label;
      inc.center = {(double(kx) + 0.5) * pitch,
                    real.dim == 1 ? 0.0 : (double(ky) + 0.5) * pitch};
      inc.scale = 1;
      // draw order is fixed: presence/shape pick first, then the scale pick
      const double u = g.uniform();
      if (bern) {
        double cum = 0;
        const WeightedShape* hit = nullptr;
        for (const auto& ws : bern->shapes) {
          cum += ws.prob;
          if (u < cum) {
            hit = &ws;
            break;
          }
        }
        if (!hit) continue;  // vacant site
        inc.shape_id = hit->shape.id;
      } else {
        inc.shape_id = scaled->base.id;
        const double v = g.uniform() * weight_total;
        double cum = 0;
        for (auto [r, wgt] : scaled->scales) {
          cum += wgt;
          inc.scale = r;
          if (v < cum) break;
        }
      }

      if (!w.contains(real.inclusion_bbox(inc), real.dim)) continue;

      // separation against already-kept neighbors; lattice geometry makes
      // violations impossible for valid models, but the rule is enforced
      bool ok = true;
      for (int64_t dx = -1; dx <= 1 && ok; ++dx)
        for (int64_t dy = -1; dy <= 1 && ok; ++dy) {
          const auto it = kept.find({kx + dx, ky + dy});
          if (it == kept.end()) continue;
          if (pair_gap(real, inc, real.inclusions[it->second]) < min_gap)
            ok = false;
        }
      if (!ok) {
        ++real.skipped_separation;
        continue;
      }
      kept[{kx, ky}] = real.inclusions.size();
      real.inclusions.push_back(std::move(inc));
    }
  }
}

void generate_parking(const RandomParking& park, const RandomModel& model,
                      Realization& real, uint64_t seed) {
  const Box buf = real.window.inflated(1.0);
  const int dim = real.dim;
  const double vol = buf.volume(dim);
  const double sep = 1.0 + park.min_gap;

  Shape item;
  item.id = "unit-cube";
  item.kind = dim == 1 ? ShapeKind::interval : ShapeKind::square;
  item.size = 1;
  real.shapes[item.id] = item;

  // cell hash with cell edge >= sep, so a 3x3 neighborhood is exhaustive
  const double cell = sep;
  const auto ncx = size_t(std::ceil(buf.edge_x() / cell)) + 1;
  const auto ncy =
      dim == 1 ? size_t(1) : size_t(std::ceil(buf.edge_y() / cell)) + 1;
  std::vector<std::vector<uint32_t>> cells(ncx * ncy);
  std::vector<Vec2> accepted;
  auto cell_of = [&](Vec2 p) {
    const auto ix = size_t((p.x - buf.lo.x) / cell);
    const auto iy = dim == 1 ? size_t(0) : size_t((p.y - buf.lo.y) / cell);
    return std::pair(ix, iy);
  };

  SplitMix64 g(mix_u64(mix_u64(model.master_seed, seed), 0x7061726bull));
  double t = 0;
  while (true) {
    // arrival times follow a unit-rate Poisson process per unit volume;
    // draw order is fixed: waiting time, then x, then y
    t += g.exponential() / vol;
    if (t > park.t_max) break;
    Vec2 p{g.uniform(buf.lo.x, buf.hi.x), 0};
    if (dim == 2) p.y = g.uniform(buf.lo.y, buf.hi.y);

    const auto [ix, iy] = cell_of(p);
    bool ok = true;
    for (size_t jx = ix > 0 ? ix - 1 : 0; jx <= std::min(ix + 1, ncx - 1);
         ++jx)
      for (size_t jy = iy > 0 ? iy - 1 : 0;
           jy <= std::min(iy + 1, ncy - 1) && ok; ++jy)
        for (const uint32_t id : cells[jx * ncy + jy]) {
          const Vec2 q = accepted[id];
          const double d = dim == 1 ? std::abs(p.x - q.x)
                                    : std::max(std::abs(p.x - q.x),
                                               std::abs(p.y - q.y));
          if (d < sep) {
            ok = false;
            break;
          }
        }
    if (!ok) continue;
    cells[ix * ncy + iy].push_back(uint32_t(accepted.size()));
    accepted.push_back(p);
  }

  // jamming certificate: every probe position in the buffered domain must
  // be blocked (a probe is admissible iff all centers are >= sep away)
  const double pp = park.probe_pitch;
  const auto npx = size_t(std::llround(buf.edge_x() / pp)) + 1;
  const auto npy =
      dim == 1 ? size_t(1) : size_t(std::llround(buf.edge_y() / pp)) + 1;
  std::vector<uint8_t> paint(npx * npy, 0);
  auto lo_idx = [&](double c, double lo) {
    return std::max(int64_t(0), int64_t(std::floor((c - lo) / pp)) + 1);
  };
  auto hi_idx = [&](double c, double lo, size_t n) {
    return std::min(int64_t(n) - 1, int64_t(std::ceil((c - lo) / pp)) - 1);
  };
  for (const Vec2 q : accepted) {
    const int64_t i0 = lo_idx(q.x - sep, buf.lo.x);
    const int64_t i1 = hi_idx(q.x + sep, buf.lo.x, npx);
    const int64_t j0 = dim == 1 ? 0 : lo_idx(q.y - sep, buf.lo.y);
    const int64_t j1 = dim == 1 ? 0 : hi_idx(q.y + sep, buf.lo.y, npy);
    for (int64_t j = j0; j <= j1; ++j)
      std::fill(paint.begin() + j * int64_t(npx) + i0,
                paint.begin() + j * int64_t(npx) + i1 + 1, uint8_t(1));
  }
  real.parking_jammed =
      std::find(paint.begin(), paint.end(), uint8_t(0)) == paint.end();
  if (!real.parking_jammed)
    std::fprintf(stderr,
                 "warning: parking rain hit t_max=%g before jamming "
                 "(admissible probe positions remain)\n",
                 park.t_max);

  // keep centers inside the window proper; anchors are the unit cells of
  // the centers, unique because accepted centers are >= 1 apart
  std::vector<std::pair<Anchor, Vec2>> in_window;
  for (const Vec2 q : accepted)
    if (real.window.contains_point(q, dim))
      in_window.push_back(
          {{int64_t(std::floor(q.x)),
            dim == 1 ? 0 : int64_t(std::floor(q.y))},
           q});
  std::sort(in_window.begin(), in_window.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (const auto& [anchor, q] : in_window) {
    Inclusion inc;
    inc.shape_id = item.id;
    inc.center = q;
    inc.scale = 1;
    inc.label = dim == 1 ? pair_label(anchor.kx)
                         : pair_label(anchor.kx, anchor.ky);
    real.inclusions.push_back(std::move(inc));
  }
}

}  // namespace

Realization generate(const RandomModel& model, const Box& window,
                     uint64_t seed) {
  model.validate();
  if (window.edge_x() < 1 || (model.dim == 2 && window.edge_y() < 1))
    throw PreconditionError("window edge length must be >= 1");

  Realization real;
  real.dim = model.dim;
  real.window = window;
  real.seed = seed;
  std::visit(
      overloaded{
          [&](const BernoulliLattice&) {
            generate_lattice(model, real, seed);
          },
          [&](const ScaledLattice&) { generate_lattice(model, real, seed); },
          [&](const RandomParking& m) {
            generate_parking(m, model, real, seed);
          },
      },
      model.variant);
  return real;
}

double volume_fraction(const Realization& real) {
  double total = 0;
  for (const auto& inc : real.inclusions) {
    const double r = inc.scale;
    total += (real.dim == 1 ? r : r * r) *
             real.shape_of(inc).area(real.dim);
  }
  return total / real.window.volume(real.dim);
}

int mark_of_label(int64_t label, uint64_t seed) {
  SplitMix64 g(mix_u64(seed, uint64_t(label)));
  return (g.next() >> 63) ? 1 : -1;
}

Marking mark(const Realization& real, uint64_t seed) {
  Marking m;
  m.seed = seed;
  for (const auto& inc : real.inclusions)
    m.value[inc.label] = mark_of_label(inc.label, seed);
  return m;
}

Realization subwindow(const Realization& real, const Box& box) {
  if (!real.window.contains(box, real.dim))
    throw PreconditionError("subwindow box must lie inside the window");
  Realization out = real;
  out.window = box;
  out.inclusions.clear();
  for (const auto& inc : real.inclusions)
    if (box.contains(real.inclusion_bbox(inc), real.dim))
      out.inclusions.push_back(inc);
  return out;
}

// ---------------------------------------------------------------------------
// JSON snapshots

namespace {

std::string kind_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::interval: return "interval";
    case ShapeKind::square: return "square";
    case ShapeKind::disk: return "disk";
    case ShapeKind::raster: return "raster";
  }
  return "?";
}

ShapeKind kind_from(const std::string& s) {
  if (s == "interval") return ShapeKind::interval;
  if (s == "square") return ShapeKind::square;
  if (s == "disk") return ShapeKind::disk;
  if (s == "raster") return ShapeKind::raster;
  throw ConfigError("unknown shape kind '" + s + "'");
}

json shape_to_json(const Shape& s) {
  json j{{"id", s.id}, {"kind", kind_name(s.kind)}, {"size", s.size}};
  if (s.kind == ShapeKind::raster) {
    std::vector<std::string> rows(size_t(s.mask_ny));
    for (int iy = 0; iy < s.mask_ny; ++iy) {
      auto& row = rows[size_t(iy)];
      row.resize(size_t(s.mask_nx));
      for (int ix = 0; ix < s.mask_nx; ++ix)
        row[size_t(ix)] =
            s.mask[size_t(iy) * s.mask_nx + ix] ? '#' : '.';
    }
    j["mask"] = rows;
  }
  return j;
}

Shape shape_from_json(const json& j) {
  Shape s;
  s.id = j.at("id").get<std::string>();
  s.kind = kind_from(j.at("kind").get<std::string>());
  s.size = j.at("size").get<double>();
  if (s.kind == ShapeKind::raster) {
    const auto rows = j.at("mask").get<std::vector<std::string>>();
    s.mask_ny = int(rows.size());
    s.mask_nx = rows.empty() ? 0 : int(rows[0].size());
    s.mask.assign(size_t(s.mask_nx) * size_t(s.mask_ny), 0);
    for (int iy = 0; iy < s.mask_ny; ++iy) {
      if (int(rows[size_t(iy)].size()) != s.mask_nx)
        throw ConfigError("raster mask rows have unequal lengths");
      for (int ix = 0; ix < s.mask_nx; ++ix)
        s.mask[size_t(iy) * s.mask_nx + ix] =
            rows[size_t(iy)][size_t(ix)] == '#';
    }
  }
  return s;
}

json model_to_json_obj(const RandomModel& model) {
  json j{{"dim", model.dim}, {"master_seed", model.master_seed}};
  std::visit(
      overloaded{
          [&](const BernoulliLattice& m) {
            j["variant"] = "bernoulli_lattice";
            j["pitch"] = m.pitch;
            j["min_gap"] = m.min_gap;
            json arr = json::array();
            for (const auto& ws : m.shapes)
              arr.push_back(
                  {{"shape", shape_to_json(ws.shape)}, {"prob", ws.prob}});
            j["shapes"] = arr;
          },
          [&](const ScaledLattice& m) {
            j["variant"] = "scaled_lattice";
            j["pitch"] = m.pitch;
            j["min_gap"] = m.min_gap;
            j["base"] = shape_to_json(m.base);
            json arr = json::array();
            for (auto [r, w] : m.scales) arr.push_back({r, w});
            j["scales"] = arr;
          },
          [&](const RandomParking& m) {
            j["variant"] = "random_parking";
            j["t_max"] = m.t_max;
            j["probe_pitch"] = m.probe_pitch;
            j["min_gap"] = m.min_gap;
          },
      },
      model.variant);
  return j;
}

RandomModel model_from_json_obj(const json& j) {
  RandomModel model;
  model.dim = j.at("dim").get<int>();
  model.master_seed = j.value("master_seed", uint64_t(0));
  const auto variant = j.at("variant").get<std::string>();
  if (variant == "bernoulli_lattice") {
    BernoulliLattice m;
    m.pitch = j.value("pitch", 1.0);
    m.min_gap = j.value("min_gap", 0.05);
    for (const auto& e : j.at("shapes"))
      m.shapes.push_back(
          {shape_from_json(e.at("shape")), e.at("prob").get<double>()});
    model.variant = std::move(m);
  } else if (variant == "scaled_lattice") {
    ScaledLattice m;
    m.pitch = j.value("pitch", 1.0);
    m.min_gap = j.value("min_gap", 0.05);
    m.base = shape_from_json(j.at("base"));
    for (const auto& e : j.at("scales"))
      m.scales.push_back({e.at(0).get<double>(), e.at(1).get<double>()});
    model.variant = std::move(m);
  } else if (variant == "random_parking") {
    RandomParking m;
    m.t_max = j.value("t_max", 2000.0);
    m.probe_pitch = j.value("probe_pitch", 0.01);
    m.min_gap = j.value("min_gap", 1e-3);
    model.variant = m;
  } else {
    throw ConfigError("unknown model variant '" + variant + "'");
  }
  model.validate();
  return model;
}

}  // namespace

std::string to_json(const RandomModel& model) {
  return model_to_json_obj(model).dump(2);
}

RandomModel model_from_json(const std::string& text) {
  return model_from_json_obj(json::parse(text));
}

std::string to_json(const Realization& real) {
  json j;
  j["dimension"] = real.dim;
  const Vec2 c = real.window.center();
  j["window"]["center"] = real.dim == 1 ? json::array({c.x})
                                        : json::array({c.x, c.y});
  if (real.dim == 2 &&
      std::abs(real.window.edge_x() - real.window.edge_y()) > 1e-12)
    j["window"]["edge"] = {real.window.edge_x(), real.window.edge_y()};
  else
    j["window"]["edge"] = real.window.edge_x();
  j["seed"] = real.seed;
  j["parking_jammed"] = real.parking_jammed;
  j["skipped_separation"] = real.skipped_separation;
  json shapes = json::array();
  for (const auto& [id, s] : real.shapes) shapes.push_back(shape_to_json(s));
  j["shapes"] = shapes;
  json arr = json::array();
  for (const auto& inc : real.inclusions) {
    json e{{"id", inc.shape_id},
           {"scale", inc.scale},
           {"label", inc.label}};
    e["center"] = real.dim == 1
                      ? json::array({inc.center.x})
                      : json::array({inc.center.x, inc.center.y});
    arr.push_back(e);
  }
  j["inclusions"] = arr;
  return j.dump(2);
}

Realization realization_from_json(const std::string& text) {
  const json j = json::parse(text);
  Realization real;
  real.dim = j.at("dimension").get<int>();
  const auto& jw = j.at("window");
  Vec2 c{jw.at("center").at(0).get<double>(), 0};
  if (real.dim == 2) c.y = jw.at("center").at(1).get<double>();
  double ex, ey;
  if (jw.at("edge").is_array()) {
    ex = jw.at("edge").at(0).get<double>();
    ey = jw.at("edge").at(1).get<double>();
  } else {
    ex = ey = jw.at("edge").get<double>();
  }
  real.window = {{c.x - ex / 2, c.y - ey / 2}, {c.x + ex / 2, c.y + ey / 2}};
  real.seed = j.value("seed", uint64_t(0));
  real.parking_jammed = j.value("parking_jammed", true);
  real.skipped_separation = j.value("skipped_separation", 0);
  for (const auto& e : j.at("shapes")) {
    Shape s = shape_from_json(e);
    real.shapes[s.id] = std::move(s);
  }
  for (const auto& e : j.at("inclusions")) {
    Inclusion inc;
    inc.shape_id = e.at("id").get<std::string>();
    inc.center.x = e.at("center").at(0).get<double>();
    if (real.dim == 2) inc.center.y = e.at("center").at(1).get<double>();
    inc.scale = e.at("scale").get<double>();
    inc.label = e.at("label").get<int64_t>();
    real.inclusions.push_back(std::move(inc));
  }
  return real;
}

}  // namespace hicospec::geo
