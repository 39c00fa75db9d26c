#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "hicospec/geometry.hpp"
#include "hicospec/shape_spectra.hpp"

namespace hicospec::micro {

using spectra::Bracket;
using spectra::ShapeSpectrum;
using spectra::WeightedPoint;
using SpectraMap = std::map<std::string, spectra::ShapeSpectrum>;

// sorted disjoint closed intervals plus isolated points on [0, lambda_max]
struct SpectralSet {
  double lambda_max = 0;
  std::vector<std::pair<double, double>> intervals;
  std::vector<double> points;
  // band endpoints adjacent to a pole carry this resolution limit
  double endpoint_uncertainty = 0;

  void normalize();  // sort, merge, absorb covered points, clip
  bool contains(double x, double tol = 0) const;
  double distance_to(double x) const;
  // complement components (open gaps) within [0, lambda_max]
  std::vector<std::pair<double, double>> gaps() const;
};

struct GapSample {
  double lambda = 0;
  Bracket beta{0, 0};
};

struct BetaCurve {
  std::string model_tag;
  double theta = 0;
  double lambda_max = 0;
  std::vector<WeightedPoint> micro;                // pole locations
  std::vector<std::vector<GapSample>> components;  // grid per gap component
};

struct SpectralMeasure {
  std::vector<double> edges;  // ascending, bins [e_i, e_{i+1})
  std::vector<double> mass;
  double total() const;
};

struct GSet {
  SpectralSet set;
  bool exact = true;             // closed form vs finite-window estimate
  bool bespoke_argument = false; // family outside the generic correlation
                                 // assumptions (random parking)
  std::string method;
};

// bracket for lambda + lambda^2 * <b> pooled over the shape family
Bracket beta_eval(const geo::RandomModel& model, double lambda,
                  const SpectraMap& spectra, double parking_theta = -1);

// smallest offset from any pooled pole at which every per-shape pole
// guard is satisfied
double lambda_guard(const geo::RandomModel& model, const SpectraMap& spectra,
                    double parking_theta = -1);

// window average over one realization: lambda + lambda^2 |W|^-1 sum of
// per-inclusion resolvent integrals (inclusions fully inside the window)
double beta_from_realization(const geo::Realization& real, double lambda,
                             const SpectraMap& spectra);

// same average over the sub-box of edge M centered at x (boundary-touching
// inclusions dropped); the box must lie inside the window
double local_average(const geo::Realization& real, Vec2 x, double M,
                     double lambda, const SpectraMap& spectra);

// per-M sup of local_average over a translation grid of the given pitch;
// a certified lower bound for the true sup
std::vector<std::pair<double, double>> beta_inf_estimate(
    const geo::Realization& real, double lambda,
    const std::vector<double>& m_list, const SpectraMap& spectra,
    double shift_pitch);

double default_shift_pitch(const geo::RandomModel& model);

// min finite-difference slope of the bracket midpoints over the grid;
// the grid must stay inside one gap component
double beta_derivative_check(const geo::RandomModel& model,
                             const std::vector<double>& lambda_grid,
                             const SpectraMap& spectra,
                             double parking_theta = -1);

// pooled poles plus closure of {beta >= 0}, gap roots located by bisection
SpectralSet predicted_spectrum(const geo::RandomModel& model,
                               double lambda_max, const SpectraMap& spectra,
                               double parking_theta = -1);

// closed-form limit sets for the lattice and parking families
GSet limit_set_G(const geo::RandomModel& model, double lambda_max,
                 const SpectraMap& spectra, double parking_theta = -1);

SpectralMeasure spectral_measure(const geo::RandomModel& model,
                                 const std::vector<double>& edges,
                                 const SpectraMap& spectra,
                                 double parking_theta = -1);

// per-cluster flags: eigenspace contains a zero-mean eigenfunction
std::vector<bool> point_spectrum_classify(const ShapeSpectrum& spec,
                                          double tol_mean);

// symmetric Hausdorff distance between a point set and a spectral set,
// both clipped to [lo, hi]; empty side = window diameter with a warning
double hausdorff_distance(const std::vector<double>& a,
                          const SpectralSet& b, double lo, double hi,
                          double sample_pitch = 1e-3);

// beta sampled on n points per gap component (guarded away from poles)
BetaCurve beta_curve(const geo::RandomModel& model, double lambda_max,
                     int n_per_component, const SpectraMap& spectra,
                     double parking_theta = -1);

std::string beta_csv(const BetaCurve& curve);
std::string set_csv(const SpectralSet& set);

}  // namespace hicospec::micro
