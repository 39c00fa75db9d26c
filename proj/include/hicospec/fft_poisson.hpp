#pragma once

#include <fftw3.h>

#include <vector>

namespace hicospec::fftp {

template <typename R>
struct FftwApi;

template <>
struct FftwApi<double> {
  using Plan = fftw_plan;
  using Complex = fftw_complex;
  static void* alloc(std::size_t bytes) { return fftw_malloc(bytes); }
  static void release(void* p) { fftw_free(p); }
  static Plan plan_r2c(int n0, int n1, double* in, Complex* out) {
    return fftw_plan_dft_r2c_2d(n0, n1, in, out, FFTW_ESTIMATE);
  }
  static Plan plan_c2r(int n0, int n1, Complex* in, double* out) {
    return fftw_plan_dft_c2r_2d(n0, n1, in, out, FFTW_ESTIMATE);
  }
  static Plan plan_r2r(int n0, int n1, double* in, double* out,
                       fftw_r2r_kind k0, fftw_r2r_kind k1) {
    return fftw_plan_r2r_2d(n0, n1, in, out, k0, k1, FFTW_ESTIMATE);
  }
  static void run(Plan p) { fftw_execute(p); }
  static void destroy(Plan p) { fftw_destroy_plan(p); }
};

template <>
struct FftwApi<float> {
  using Plan = fftwf_plan;
  using Complex = fftwf_complex;
  static void* alloc(std::size_t bytes) { return fftwf_malloc(bytes); }
  static void release(void* p) { fftwf_free(p); }
  static Plan plan_r2c(int n0, int n1, float* in, Complex* out) {
    return fftwf_plan_dft_r2c_2d(n0, n1, in, out, FFTW_ESTIMATE);
  }
  static Plan plan_c2r(int n0, int n1, Complex* in, float* out) {
    return fftwf_plan_dft_c2r_2d(n0, n1, in, out, FFTW_ESTIMATE);
  }
  static Plan plan_r2r(int n0, int n1, float* in, float* out,
                       fftw_r2r_kind k0, fftw_r2r_kind k1) {
    return fftwf_plan_r2r_2d(n0, n1, in, out, k0, k1, FFTW_ESTIMATE);
  }
  static void run(Plan p) { fftwf_execute(p); }
  static void destroy(Plan p) { fftwf_destroy_plan(p); }
};

// Inverse of the 5-point periodic operator -(ax Dxx + ay Dyy) + shift on
// an nx x ny torus with spacing h.  With shift == 0 the operator is
// singular; the mean of the input is then discarded and the output has
// zero mean.  Arrays are row-major with x contiguous: idx = j*nx + i.
template <typename R>
class PeriodicPoissonT {
 public:
  PeriodicPoissonT(int nx, int ny, double h, double ax = 1, double ay = 1,
                   double shift = 0);
  ~PeriodicPoissonT();
  PeriodicPoissonT(const PeriodicPoissonT&) = delete;
  PeriodicPoissonT& operator=(const PeriodicPoissonT&) = delete;

  void solve(const R* f, R* u);
  int nx() const { return nx_; }
  int ny() const { return ny_; }

 private:
  using Api = FftwApi<R>;
  int nx_, ny_;
  std::vector<double> inv_;  // ny x (nx/2+1), zero at the mean mode
  R* real_;
  typename Api::Complex* spec_;
  typename Api::Plan fwd_, bwd_;
};

using PeriodicPoisson = PeriodicPoissonT<double>;
using PeriodicPoissonF = PeriodicPoissonT<float>;

// Exact inverse of the cell-centered Dirichlet operator
// -(ax Dxx + ay Dyy) + shift with the boundary-corrected stencil (ghost
// value equal to minus the boundary cell), diagonalized by DST-II per
// axis: 1D eigenvalues (4/h^2) sin^2((k+1) pi / (2n)).
template <typename R>
class DirichletPoissonT {
 public:
  DirichletPoissonT(int nx, int ny, double h, double ax = 1, double ay = 1,
                    double shift = 0);
  ~DirichletPoissonT();
  DirichletPoissonT(const DirichletPoissonT&) = delete;
  DirichletPoissonT& operator=(const DirichletPoissonT&) = delete;

  void solve(const R* f, R* u);
  int nx() const { return nx_; }
  int ny() const { return ny_; }

 private:
  using Api = FftwApi<R>;
  int nx_, ny_;
  std::vector<double> inv_;  // ny x nx, all modes positive
  R* buf_;
  typename Api::Plan fwd_, bwd_;
};

using DirichletPoisson = DirichletPoissonT<double>;
using DirichletPoissonF = DirichletPoissonT<float>;

}  // namespace hicospec::fftp
