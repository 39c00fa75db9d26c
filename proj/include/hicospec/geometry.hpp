#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "hicospec/common.hpp"

namespace hicospec::geo {

enum class ShapeKind { interval, square, disk, raster };

// inclusion geometry in unit-cell coordinates, centered at the origin.
// size means: interval length, square side, disk radius, raster cell spacing
// (the mask supplies the extent).
struct Shape {
  std::string id;
  ShapeKind kind = ShapeKind::square;
  double size = 0;
  int mask_nx = 0, mask_ny = 0;
  std::vector<uint8_t> mask;  // row-major [iy*mask_nx+ix], raster only

  double diameter() const;
  double area(int dim) const;          // Lebesgue measure at scale 1
  double half_extent_x() const;        // bounding half width at scale 1
  double half_extent_y() const;
  bool contains(Vec2 p, double scale) const;  // p relative to the center
  // raster masks must be one 4-connected component with connected complement
  void validate_raster() const;
};

struct WeightedShape {
  Shape shape;
  double prob = 1;
};

struct BernoulliLattice {
  std::vector<WeightedShape> shapes;
  double pitch = 1;
  double min_gap = 0.05;
};

// base shape drawn at a random scale from a quantized density on [r1, r2]
struct ScaledLattice {
  Shape base;
  std::vector<std::pair<double, double>> scales;  // (r, weight)
  double pitch = 1;
  double min_gap = 0.05;
};

struct RandomParking {
  double t_max = 2000;
  double probe_pitch = 0.01;
  double min_gap = 1e-3;  // items keep Chebyshev gap >= min_gap
};

struct RandomModel {
  int dim = 2;
  uint64_t master_seed = 0;
  std::variant<BernoulliLattice, ScaledLattice, RandomParking> variant;

  void validate() const;  // throws ConfigError
  double lattice_pitch() const;  // 1 for parking
};

struct Inclusion {
  std::string shape_id;
  Vec2 center;
  double scale = 1;
  int64_t label = 0;
};

struct Realization {
  int dim = 2;
  Box window;
  uint64_t seed = 0;
  std::map<std::string, Shape> shapes;  // id -> geometry
  std::vector<Inclusion> inclusions;
  bool parking_jammed = true;   // false: rain hit t_max before jamming
  int skipped_separation = 0;   // lattice nodes dropped by the gap rule

  const Shape& shape_of(const Inclusion& inc) const;
  Box inclusion_bbox(const Inclusion& inc) const;
};

struct Marking {
  std::map<int64_t, int> value;  // label -> +1/-1
  uint64_t seed = 0;
};

// deterministic in (model, window, seed); window placement does not change
// the outcome at any lattice site
Realization generate(const RandomModel& model, const Box& window,
                     uint64_t seed);

double volume_fraction(const Realization& real);

// marks depend only on (label, seed)
Marking mark(const Realization& real, uint64_t seed);
int mark_of_label(int64_t label, uint64_t seed);

// keeps inclusions whose closure is contained in box
Realization subwindow(const Realization& real, const Box& box);

// JSON snapshot round trip
std::string to_json(const Realization& real);
Realization realization_from_json(const std::string& text);
RandomModel model_from_json(const std::string& text);
std::string to_json(const RandomModel& model);

}  // namespace hicospec::geo
