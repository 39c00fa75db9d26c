#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hicospec/common.hpp"
#include "hicospec/geometry.hpp"

namespace hicospec::spectra {

// cell-centered rasterization of a shape in its own coordinates; cell (i,j)
// has center (ox + (i+1/2)h, oy + (j+1/2)h) and dof[j*nx+i] >= 0 iff the
// center lies inside the shape
struct ShapeGrid {
  int dim = 2;
  int nx = 0, ny = 1;
  double h = 0;
  double ox = 0, oy = 0;
  std::vector<int32_t> dof;
  int n_dof = 0;
};

ShapeGrid rasterize(const geo::Shape& shape, double h);

struct ModeCluster {
  double lambda = 0;  // cluster representative (mean of members)
  int mult = 1;       // degeneracy count
  double m = 0;       // summed squared means over the cluster
};

struct ShapeSpectrum {
  std::string shape_id;
  int dim = 2;
  double h = 0;
  int n_modes = 0;     // raw modes retained (may be fewer than requested)
  double area = 0;     // discrete |Y| = h^d * interior cell count
  std::vector<ModeCluster> clusters;
  std::vector<double> raw_lambda;  // ascending
  std::vector<double> raw_mean;    // discrete integrals of the eigenmodes
  bool truncated = false;          // request exceeded the dof count

  double lambda1() const { return clusters.front().lambda; }
  double captured_mass() const;
  double pole_guard() const { return 1e-3 * lambda1(); }
};

// Dirichlet spectrum of the 5-point (3-point in d=1) Laplacian on the
// rasterized shape, zero boundary enforced at face midpoints. keep_vectors
// retains that many leading eigenvectors (grid + vectors) for consumers
// that need the mode profiles.
struct ShapeModes {
  ShapeSpectrum spectrum;
  ShapeGrid grid;
  std::vector<std::vector<double>> vectors;  // discrete l2(h^d)-normalized
};

ShapeSpectrum dirichlet_spectrum(const geo::Shape& shape, double h,
                                 int n_modes);
ShapeModes dirichlet_modes(const geo::Shape& shape, double h, int n_modes,
                           int keep_vectors);

double mass_identity_check(const ShapeSpectrum& spec);

struct Bracket {
  double lo = 0, hi = 0;
  double mid() const { return (lo + hi) / 2; }
  double width() const { return hi - lo; }
};

// bracket for the resolvent integral of the indicator: series over the
// computed clusters plus a one-sided tail from the remaining mass
Bracket b_integral(const ShapeSpectrum& spec, double lambda);

// solution of (-eps^2 Lap - lambda) b = 1 on the placed inclusion
// center + eps*scale*shape, sampled on the caller's cell-centered grid
// (origin + (i+1/2)h', nearest-cell lookup), zero outside the inclusion
struct GridPatch {
  int ix0 = 0, iy0 = 0;  // caller-grid index of the patch corner
  int nx = 0, ny = 1;
  std::vector<double> v;
};

GridPatch b_field_on_inclusion(const geo::Shape& shape, double lambda,
                               double eps, Vec2 center, double scale,
                               double grid_h, Vec2 grid_origin,
                               double shape_h);

// pooled micro-spectrum of the model's shape family
struct WeightedPoint {
  double lambda = 0;
  double weight = 0;  // intensity-weighted summed squared means
};

// one (shape, scale) member of the model's family with its expected
// number density per unit volume
struct PoolEntry {
  std::string id;
  double scale = 1;
  double intensity = 0;
};

// parking_theta is the empirical jamming coverage for parking models
// (required there, ignored elsewhere)
std::vector<PoolEntry> pool_entries(const geo::RandomModel& model,
                                    double parking_theta = -1);

// spectra keyed by shape id must reach lambda_max (error otherwise)
std::vector<WeightedPoint> micro_spectrum(
    const geo::RandomModel& model, double lambda_max,
    const std::map<std::string, ShapeSpectrum>& spectra,
    double parking_theta = -1);

// read-through cache: computes on miss, persists one file per
// (shape id, h, n_modes) under dir (empty dir = in-memory only)
class SpectrumStore {
 public:
  explicit SpectrumStore(std::string dir = from_env());
  const ShapeSpectrum& get(const geo::Shape& shape, double h, int n_modes);
  static std::string from_env();  // $HICOSPEC_CACHE or empty

 private:
  std::string dir_;
  std::map<std::string, ShapeSpectrum> mem_;
};

std::string to_json(const ShapeSpectrum& spec);
ShapeSpectrum spectrum_from_json(const std::string& text);

}  // namespace hicospec::spectra
