#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace hicospec {

// exit codes used by the CLI and by error classes thrown across modules
enum ExitCode : int {
  exit_ok = 0,
  exit_config = 2,
  exit_numerical = 3,
  exit_precondition = 4,
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct PreconditionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Vec2 {
  double x = 0, y = 0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }

// axis-aligned box; d=1 computations ignore the y extent
struct Box {
  Vec2 lo, hi;

  static Box centered(Vec2 c, double edge) {
    return {{c.x - edge / 2, c.y - edge / 2},
            {c.x + edge / 2, c.y + edge / 2}};
  }
  Vec2 center() const { return {(lo.x + hi.x) / 2, (lo.y + hi.y) / 2}; }
  double edge_x() const { return hi.x - lo.x; }
  double edge_y() const { return hi.y - lo.y; }
  double volume(int dim) const {
    return dim == 1 ? edge_x() : edge_x() * edge_y();
  }
  bool contains(const Box& b, int dim) const {
    if (b.lo.x < lo.x || b.hi.x > hi.x) return false;
    if (dim == 2 && (b.lo.y < lo.y || b.hi.y > hi.y)) return false;
    return true;
  }
  bool contains_point(Vec2 p, int dim) const {
    if (p.x < lo.x || p.x > hi.x) return false;
    if (dim == 2 && (p.y < lo.y || p.y > hi.y)) return false;
    return true;
  }
  Box inflated(double r) const {
    return {{lo.x - r, lo.y - r}, {hi.x + r, hi.y + r}};
  }
};

}  // namespace hicospec
