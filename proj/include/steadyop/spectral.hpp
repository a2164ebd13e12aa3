#pragma once

// Two-dimensional Fourier tools on periodic power-of-two grids.
//
// Conventions: a field is [nx, ny] or [nx, ny, C] (channels transformed
// independently). Transforms are unitary, 1/sqrt(n) per axis. Array index i
// on an axis of length n maps to integer frequency k = i for i <= n/2 and
// k = i - n otherwise, so the Nyquist mode sits at i = n/2 with k = +n/2.
// Physical wavenumbers are k * 2*pi / L for a domain of length L (default
// 2*pi, the torus).

#include "steadyop/tensor.hpp"

#include <complex>
#include <cstdint>
#include <numbers>
#include <vector>

namespace steadyop::spectral {

bool is_power_of_two(Index n);

/// Integer frequency of array index i on an axis of length n.
inline Index frequency(Index i, Index n) { return i <= n / 2 ? i : i - n; }

/// In-place iterative radix-2 transform of a contiguous length-n sequence,
/// without normalization. Twiddle and bit-reversal tables are built once per
/// (Real, n) and shared.
template <typename Real>
class FftPlan {
 public:
  explicit FftPlan(Index n);
  Index size() const { return n_; }
  /// exp(-2 pi i k j / n) for the forward sign, conjugate for inverse.
  void execute(std::complex<Real>* data, bool inverse) const;

 private:
  Index n_;
  std::vector<Index> bitrev_;
  std::vector<std::complex<Real>> twiddle_;  // n/2 forward twiddles
};

const FftPlan<double>& plan(Index n);

/// Unitary 1-D transform; length must be a power of two.
void fft1d(std::vector<std::complex<double>>& data, bool inverse);

/// Unitary forward transform of a real field. Throws DimensionError for a
/// non-power-of-two axis.
ComplexTensor fft2(const Tensor& f);
/// Unitary forward transform of a complex field (same layout).
ComplexTensor fft2(const ComplexTensor& f);

/// Tolerance on conjugate-symmetry violations accepted by ifft2, relative
/// to max(1, max |F|).
inline constexpr double kSymmetryTol = 1e-10;

/// Max over modes of |F(k) - conj(F(-k))|.
double symmetry_defect(const ComplexTensor& F);

/// Inverse of fft2 for a spectrum of a real field. The input is symmetrized
/// before inversion; throws DomainError when the symmetry defect exceeds
/// kSymmetryTol.
Tensor ifft2(const ComplexTensor& F);
/// Full complex inverse, no symmetry requirement.
ComplexTensor ifft2_complex(const ComplexTensor& F);

/// Throws DimensionError unless 1 <= N <= min(nx, ny)/2 - 1.
void check_truncation(Index N, Index nx, Index ny);

/// Zeroes every mode with max(|kx|, |ky|) > N; the rest is copied exactly.
ComplexTensor truncate_modes(const ComplexTensor& F, Index N);
/// Real-field convenience: ifft2(truncate_modes(fft2(f), N)).
Tensor truncate_modes(const Tensor& f, Index N);

/// d^order f / dx_axis^order on a periodic domain of length `length` along
/// `axis` (0 = x, 1 = y). Odd orders drop the Nyquist mode.
Tensor spectral_derivative(const Tensor& f, int axis, int order, double length = 2.0 * std::numbers::pi);
Tensor laplacian(const Tensor& f, double length = 2.0 * std::numbers::pi);

/// Tolerance on |mean| accepted by poisson_solve.
inline constexpr double kSolvabilityTol = 1e-8;

/// Zero-mean psi with laplacian(psi) = omega on the 2*pi torus. Throws
/// DomainError when |mean(omega)| exceeds kSolvabilityTol.
Tensor poisson_solve(const Tensor& omega);

struct GrfParams {
  double scale = 11.180339887498949;  // 5^{3/2}
  double stiffness = 25.0;
  double power = 2.5;
};

/// Per-mode standard deviation of the Fourier-series coefficient at integer
/// frequency (kx, ky): scale * (1 + stiffness |k|^2)^{-power/2}. `power` is
/// the exponent of the covariance operator; amplitudes take half of it.
double grf_mode_std(const GrfParams& p, Index kx, Index ky);

/// Real, zero-mean Gaussian random field on an nx x ny grid. Deterministic
/// in `seed`.
Tensor grf_sample(std::uint64_t seed, Index nx, Index ny, const GrfParams& params = {});

}  // namespace steadyop::spectral
