#include "hicospec/fft_poisson.hpp"

#include <cmath>
#include <cstring>
#include <numbers>

#include "hicospec/common.hpp"

namespace hicospec::fftp {

namespace {

double wave_factor_periodic(int k, int n, double h) {
  const double s = std::sin(std::numbers::pi * k / n);
  return 4 * s * s / (h * h);  // 2 - 2cos(2 pi k / n), scaled
}

double wave_factor_dirichlet(int k, int n, double h) {
  const double s = std::sin((k + 1) * std::numbers::pi / (2 * n));
  return 4 * s * s / (h * h);
}

}  // namespace

template <typename R>
PeriodicPoissonT<R>::PeriodicPoissonT(int nx, int ny, double h, double ax,
                                      double ay, double shift)
    : nx_(nx), ny_(ny) {
  if (nx < 2 || ny < 1 || h <= 0 || ax <= 0 || ay <= 0 || shift < 0)
    throw ConfigError("periodic poisson: bad grid parameters");
  const int nc = nx / 2 + 1;
  inv_.resize(static_cast<std::size_t>(ny) * nc);
  const double scale = 1.0 / (static_cast<double>(nx) * ny);
  for (int ky = 0; ky < ny; ++ky)
    for (int kx = 0; kx < nc; ++kx) {
      const double sym = shift + ax * wave_factor_periodic(kx, nx, h) +
                         ay * wave_factor_periodic(ky, ny, h);
      inv_[static_cast<std::size_t>(ky) * nc + kx] =
          sym > 0 ? scale / sym : 0.0;  // shift == 0: mean mode dropped
    }
  real_ = static_cast<R*>(Api::alloc(sizeof(R) * nx * ny));
  spec_ = static_cast<typename Api::Complex*>(
      Api::alloc(sizeof(typename Api::Complex) * ny * nc));
  fwd_ = Api::plan_r2c(ny, nx, real_, spec_);
  bwd_ = Api::plan_c2r(ny, nx, spec_, real_);
}

template <typename R>
PeriodicPoissonT<R>::~PeriodicPoissonT() {
  Api::destroy(fwd_);
  Api::destroy(bwd_);
  Api::release(real_);
  Api::release(spec_);
}

template <typename R>
void PeriodicPoissonT<R>::solve(const R* f, R* u) {
  std::memcpy(real_, f, sizeof(R) * nx_ * ny_);
  Api::run(fwd_);
  const int nc = nx_ / 2 + 1;
  for (std::size_t k = 0; k < inv_.size(); ++k) {
    spec_[k][0] = static_cast<R>(spec_[k][0] * inv_[k]);
    spec_[k][1] = static_cast<R>(spec_[k][1] * inv_[k]);
  }
  (void)nc;
  Api::run(bwd_);
  std::memcpy(u, real_, sizeof(R) * nx_ * ny_);
}

template <typename R>
DirichletPoissonT<R>::DirichletPoissonT(int nx, int ny, double h, double ax,
                                        double ay, double shift)
    : nx_(nx), ny_(ny) {
  if (nx < 1 || ny < 1 || h <= 0 || ax <= 0 || ay <= 0 || shift < 0)
    throw ConfigError("dirichlet poisson: bad grid parameters");
  inv_.resize(static_cast<std::size_t>(nx) * ny);
  const double scale = 1.0 / (4.0 * nx * ny);  // RODFT10 then RODFT01
  for (int ky = 0; ky < ny; ++ky)
    for (int kx = 0; kx < nx; ++kx) {
      const double sym = shift + ax * wave_factor_dirichlet(kx, nx, h) +
                         ay * wave_factor_dirichlet(ky, ny, h);
      inv_[static_cast<std::size_t>(ky) * nx + kx] = scale / sym;
    }
  buf_ = static_cast<R*>(Api::alloc(sizeof(R) * nx * ny));
  fwd_ = Api::plan_r2r(ny, nx, buf_, buf_, FFTW_RODFT10, FFTW_RODFT10);
  bwd_ = Api::plan_r2r(ny, nx, buf_, buf_, FFTW_RODFT01, FFTW_RODFT01);
}

template <typename R>
DirichletPoissonT<R>::~DirichletPoissonT() {
  Api::destroy(fwd_);
  Api::destroy(bwd_);
  Api::release(buf_);
}

template <typename R>
void DirichletPoissonT<R>::solve(const R* f, R* u) {
  std::memcpy(buf_, f, sizeof(R) * nx_ * ny_);
  Api::run(fwd_);
  for (std::size_t k = 0; k < inv_.size(); ++k)
    buf_[k] = static_cast<R>(buf_[k] * inv_[k]);
  Api::run(bwd_);
  std::memcpy(u, buf_, sizeof(R) * nx_ * ny_);
}

template class PeriodicPoissonT<double>;
template class PeriodicPoissonT<float>;
template class DirichletPoissonT<double>;
template class DirichletPoissonT<float>;

}  // namespace hicospec::fftp
