#pragma once

#include <unsupported/Eigen/FFT>

#include "core.hpp"

namespace uc2d {

/// Periodic square cell for FFT work.  Grid node (i, j) sits at
/// center + (-side/2 + side*i/n, -side/2 + side*j/n), i.e. the cell is
/// sampled uniformly without the right/top edge (periodic convention).
struct FourierCell {
  Vec2 center{0.0, 0.0};
  double side = 4.0;
  int n = 256;

  Vec2 node(int i, int j) const {
    return center + Vec2(-0.5 * side + side * static_cast<double>(i) / n,
                         -0.5 * side + side * static_cast<double>(j) / n);
  }
};

namespace detail {

inline Eigen::MatrixXcd fft2(const Eigen::MatrixXcd& in, bool inverse) {
  Eigen::FFT<double> fft;
  const int n = static_cast<int>(in.rows());
  Eigen::MatrixXcd tmp(n, n), out(n, n);
  Eigen::VectorXcd a(n), b(n);
  for (int j = 0; j < n; ++j) {
    a = in.col(j);
    if (inverse)
      fft.inv(b, a);
    else
      fft.fwd(b, a);
    tmp.col(j) = b;
  }
  for (int i = 0; i < n; ++i) {
    a = tmp.row(i).transpose();
    if (inverse)
      fft.inv(b, a);
    else
      fft.fwd(b, a);
    out.row(i) = b.transpose();
  }
  return out;
}

inline double signed_wavenumber(int k, int n, double side) {
  const int kk = (k <= n / 2) ? k : k - n;
  return 2.0 * M_PI * kk / side;
}

}  // namespace detail

/// Solution P of d/dzbar P = g on the periodic cell.  The zero mode is
/// carried analytically: P(x) = P_spectral(x) + mean(g) * conj(z - center),
/// whose dzbar is exactly mean(g).  value() interpolates the spectral part
/// bilinearly and adds the mean part in closed form.
struct CauchyTransform {
  FourierCell cell;
  Eigen::MatrixXcd values;  // spectral part at grid nodes, indexed (i, j)
  Complex mean{0.0, 0.0};
  double dzbar_residual = 0.0;  // spectral round-trip check on interior nodes

  Complex value(const Vec2& x) const {
    const int n = cell.n;
    const double fx = (x.x() - (cell.center.x() - 0.5 * cell.side)) / cell.side * n;
    const double fy = (x.y() - (cell.center.y() - 0.5 * cell.side)) / cell.side * n;
    const int i0 = static_cast<int>(std::floor(fx)), j0 = static_cast<int>(std::floor(fy));
    const double sx = fx - i0, sy = fy - j0;
    auto wrap = [n](int k) { return ((k % n) + n) % n; };
    const int i = wrap(i0), ip = wrap(i0 + 1), j = wrap(j0), jp = wrap(j0 + 1);
    const Complex spectral = (1 - sx) * (1 - sy) * values(i, j) + sx * (1 - sy) * values(ip, j) +
                             (1 - sx) * sy * values(i, jp) + sx * sy * values(ip, jp);
    const Complex zc(x.x() - cell.center.x(), x.y() - cell.center.y());
    return spectral + mean * std::conj(zc);
  }
};

/// Invert d/dzbar spectrally: symbol of d/dzbar at wavenumber (kx, ky) is
/// (i/2)(kx + i ky).
inline CauchyTransform cauchy_transform(const Eigen::MatrixXcd& samples,
                                        const FourierCell& cell) {
  const int n = cell.n;
  if (samples.rows() != n || samples.cols() != n)
    throw std::invalid_argument("cauchy_transform: sample grid does not match the cell");
  if (n < 4 || (n & (n - 1)) != 0)
    throw std::invalid_argument("cauchy_transform: grid size must be a power of two >= 4");

  Eigen::MatrixXcd spec = detail::fft2(samples, false);
  CauchyTransform out;
  out.cell = cell;
  out.mean = spec(0, 0) / static_cast<double>(n) / static_cast<double>(n);

  Eigen::MatrixXcd phat(n, n);
  for (int i = 0; i < n; ++i) {
    const double kx = detail::signed_wavenumber(i, n, cell.side);
    for (int j = 0; j < n; ++j) {
      const double ky = detail::signed_wavenumber(j, n, cell.side);
      if (i == 0 && j == 0) {
        phat(0, 0) = 0.0;
        continue;
      }
      const Complex symbol(-0.5 * ky, 0.5 * kx);  // (i/2)(kx + i ky)
      phat(i, j) = spec(i, j) / symbol;
    }
  }
  out.values = detail::fft2(phat, true);

  // Round-trip check: dzbar of the spectral part must reproduce g - mean.
  Eigen::MatrixXcd back(n, n);
  for (int i = 0; i < n; ++i) {
    const double kx = detail::signed_wavenumber(i, n, cell.side);
    for (int j = 0; j < n; ++j) {
      const double ky = detail::signed_wavenumber(j, n, cell.side);
      back(i, j) = phat(i, j) * Complex(-0.5 * ky, 0.5 * kx);
    }
  }
  back = detail::fft2(back, true);
  double worst = 0.0, scale = 0.0;
  const int lo = n / 8, hi = n - n / 8;  // skip the outer rim of the cell
  for (int i = lo; i < hi; ++i)
    for (int j = lo; j < hi; ++j) {
      worst = std::max(worst, std::abs(back(i, j) - (samples(i, j) - out.mean)));
      scale = std::max(scale, std::abs(samples(i, j)));
    }
  out.dzbar_residual = worst / std::max(scale, 1e-300);
  return out;
}

}  // namespace uc2d
