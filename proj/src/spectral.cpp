#include "steadyop/spectral.hpp"

#include "steadyop/errors.hpp"
#include "steadyop/rng.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>

namespace steadyop::spectral {
namespace {

using cd = std::complex<double>;

struct Layout {
  Index nx, ny, c;
};

template <typename T>
Layout field_layout(const T& f) {
  const auto& s = f.shape();
  if (s.size() != 2 && s.size() != 3) throw DimensionError("expected an [nx, ny] or [nx, ny, C] field, got " + shape_string(s));
  Layout l{s[0], s[1], s.size() == 3 ? s[2] : 1};
  if (!is_power_of_two(l.nx) || !is_power_of_two(l.ny))
    throw DimensionError("unsupported grid size " + shape_string(s) + ": axes must be powers of two");
  return l;
}

// Unitary 2-D transform of interleaved channels, in place.
void transform2(Eigen::ArrayXcd& data, const Layout& l, bool inverse) {
  const auto& py = plan(l.ny);
  const auto& px = plan(l.nx);
  std::vector<cd> buf(static_cast<std::size_t>(std::max(l.nx, l.ny)));
  const double scale = 1.0 / std::sqrt(static_cast<double>(l.nx * l.ny));
  for (Index ch = 0; ch < l.c; ++ch) {
    for (Index x = 0; x < l.nx; ++x) {
      for (Index y = 0; y < l.ny; ++y) buf[y] = data[(x * l.ny + y) * l.c + ch];
      py.execute(buf.data(), inverse);
      for (Index y = 0; y < l.ny; ++y) data[(x * l.ny + y) * l.c + ch] = buf[y];
    }
    for (Index y = 0; y < l.ny; ++y) {
      for (Index x = 0; x < l.nx; ++x) buf[x] = data[(x * l.ny + y) * l.c + ch];
      px.execute(buf.data(), inverse);
      for (Index x = 0; x < l.nx; ++x) data[(x * l.ny + y) * l.c + ch] = buf[x] * scale;
    }
  }
}

Index mirror(Index i, Index n) { return (n - i) % n; }

}  // namespace

bool is_power_of_two(Index n) { return n >= 1 && (n & (n - 1)) == 0; }

template <typename Real>
FftPlan<Real>::FftPlan(Index n) : n_(n) {
  if (!is_power_of_two(n)) throw DimensionError("FFT length " + std::to_string(n) + " is not a power of two");
  bitrev_.resize(static_cast<std::size_t>(n));
  Index bits = 0;
  while ((Index{1} << bits) < n) ++bits;
  for (Index i = 0; i < n; ++i) {
    Index r = 0;
    for (Index b = 0; b < bits; ++b)
      if (i & (Index{1} << b)) r |= Index{1} << (bits - 1 - b);
    bitrev_[static_cast<std::size_t>(i)] = r;
  }
  twiddle_.resize(static_cast<std::size_t>(n / 2));
  for (Index k = 0; k < n / 2; ++k) {
    // Evaluate in long double so that the tables agree with exact values to
    // the last bit on the symmetric points.
    const long double ang = -2.0L * std::numbers::pi_v<long double> * static_cast<long double>(k) / n;
    twiddle_[static_cast<std::size_t>(k)] = {static_cast<Real>(std::cos(ang)), static_cast<Real>(std::sin(ang))};
  }
}

template <typename Real>
void FftPlan<Real>::execute(std::complex<Real>* a, bool inverse) const {
  for (Index i = 0; i < n_; ++i) {
    const Index j = bitrev_[static_cast<std::size_t>(i)];
    if (i < j) std::swap(a[i], a[j]);
  }
  for (Index len = 2; len <= n_; len <<= 1) {
    const Index half = len / 2;
    const Index step = n_ / len;
    for (Index start = 0; start < n_; start += len) {
      for (Index k = 0; k < half; ++k) {
        std::complex<Real> w = twiddle_[static_cast<std::size_t>(k * step)];
        if (inverse) w = std::conj(w);
        const std::complex<Real> t = w * a[start + k + half];
        a[start + k + half] = a[start + k] - t;
        a[start + k] += t;
      }
    }
  }
}

template class FftPlan<double>;
template class FftPlan<float>;

const FftPlan<double>& plan(Index n) {
  static std::mutex mutex;
  static std::map<Index, std::unique_ptr<const FftPlan<double>>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<const FftPlan<double>>(n);
  return *slot;
}

void fft1d(std::vector<cd>& data, bool inverse) {
  const Index n = static_cast<Index>(data.size());
  plan(n).execute(data.data(), inverse);
  const double s = 1.0 / std::sqrt(static_cast<double>(n));
  for (auto& v : data) v *= s;
}

ComplexTensor fft2(const Tensor& f) {
  const Layout l = field_layout(f);
  Eigen::ArrayXcd data = f.array().cast<cd>();
  transform2(data, l, false);
  return ComplexTensor(f.shape(), std::move(data));
}

ComplexTensor fft2(const ComplexTensor& f) {
  const Layout l = field_layout(f);
  Eigen::ArrayXcd data = f.array();
  transform2(data, l, false);
  return ComplexTensor(f.shape(), std::move(data));
}

double symmetry_defect(const ComplexTensor& F) {
  const Layout l = field_layout(F);
  double worst = 0.0;
  for (Index x = 0; x < l.nx; ++x)
    for (Index y = 0; y < l.ny; ++y)
      for (Index ch = 0; ch < l.c; ++ch) {
        const cd a = F[(x * l.ny + y) * l.c + ch];
        const cd b = F[(mirror(x, l.nx) * l.ny + mirror(y, l.ny)) * l.c + ch];
        worst = std::max(worst, std::abs(a - std::conj(b)));
      }
  return worst;
}

ComplexTensor ifft2_complex(const ComplexTensor& F) {
  const Layout l = field_layout(F);
  Eigen::ArrayXcd data = F.array();
  transform2(data, l, true);
  return ComplexTensor(F.shape(), std::move(data));
}

Tensor ifft2(const ComplexTensor& F) {
  const Layout l = field_layout(F);
  const double peak = F.size() ? F.array().abs().maxCoeff() : 0.0;
  const double defect = symmetry_defect(F);
  if (defect > kSymmetryTol * std::max(1.0, peak))
    throw DomainError("ifft2: spectrum violates conjugate symmetry by " + std::to_string(defect));
  Eigen::ArrayXcd data(F.size());
  for (Index x = 0; x < l.nx; ++x)
    for (Index y = 0; y < l.ny; ++y)
      for (Index ch = 0; ch < l.c; ++ch) {
        const cd a = F[(x * l.ny + y) * l.c + ch];
        const cd b = F[(mirror(x, l.nx) * l.ny + mirror(y, l.ny)) * l.c + ch];
        data[(x * l.ny + y) * l.c + ch] = 0.5 * (a + std::conj(b));
      }
  transform2(data, l, true);
  return Tensor(F.shape(), data.real());
}

void check_truncation(Index N, Index nx, Index ny) {
  if (N < 1 || N > std::min(nx, ny) / 2 - 1)
    throw DimensionError("truncation order " + std::to_string(N) + " invalid for a " + std::to_string(nx) + "x" +
                         std::to_string(ny) + " grid");
}

ComplexTensor truncate_modes(const ComplexTensor& F, Index N) {
  const Layout l = field_layout(F);
  check_truncation(N, l.nx, l.ny);
  ComplexTensor out = F;
  for (Index x = 0; x < l.nx; ++x)
    for (Index y = 0; y < l.ny; ++y) {
      if (std::max(std::abs(frequency(x, l.nx)), std::abs(frequency(y, l.ny))) <= N) continue;
      for (Index ch = 0; ch < l.c; ++ch) out[(x * l.ny + y) * l.c + ch] = 0.0;
    }
  return out;
}

Tensor truncate_modes(const Tensor& f, Index N) { return ifft2(truncate_modes(fft2(f), N)); }

Tensor spectral_derivative(const Tensor& f, int axis, int order, double length) {
  if (axis != 0 && axis != 1) throw DimensionError("spectral_derivative: axis must be 0 or 1");
  if (order < 0) throw DomainError("spectral_derivative: negative order");
  if (order == 0) return f;
  ComplexTensor F = fft2(f);
  const Layout l = field_layout(f);
  const Index n = axis == 0 ? l.nx : l.ny;
  const double unit = 2.0 * std::numbers::pi / length;
  std::vector<cd> factor(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    if (order % 2 == 1 && i == n / 2) {
      factor[i] = 0.0;
      continue;
    }
    const cd ik(0.0, unit * static_cast<double>(frequency(i, n)));
    cd p = 1.0;
    for (int o = 0; o < order; ++o) p *= ik;
    factor[i] = p;
  }
  for (Index x = 0; x < l.nx; ++x)
    for (Index y = 0; y < l.ny; ++y)
      for (Index ch = 0; ch < l.c; ++ch) F[(x * l.ny + y) * l.c + ch] *= factor[axis == 0 ? x : y];
  return ifft2(F);
}

Tensor laplacian(const Tensor& f, double length) {
  Tensor dxx = spectral_derivative(f, 0, 2, length);
  dxx.array() += spectral_derivative(f, 1, 2, length).array();
  return dxx;
}

Tensor poisson_solve(const Tensor& omega) {
  const Layout l = field_layout(omega);
  ComplexTensor F = fft2(omega);
  const double scale = std::sqrt(static_cast<double>(l.nx * l.ny));
  for (Index ch = 0; ch < l.c; ++ch) {
    const double mean = F[ch].real() / scale;
    if (std::abs(mean) > kSolvabilityTol)
      throw DomainError("poisson_solve: right-hand side mean " + std::to_string(mean) + " breaks solvability");
  }
  for (Index x = 0; x < l.nx; ++x)
    for (Index y = 0; y < l.ny; ++y) {
      const double kx = static_cast<double>(frequency(x, l.nx));
      const double ky = static_cast<double>(frequency(y, l.ny));
      const double k2 = kx * kx + ky * ky;
      for (Index ch = 0; ch < l.c; ++ch) {
        cd& v = F[(x * l.ny + y) * l.c + ch];
        v = k2 == 0.0 ? cd(0.0) : -v / k2;
      }
    }
  return ifft2(F);
}

double grf_mode_std(const GrfParams& p, Index kx, Index ky) {
  const double k2 = static_cast<double>(kx * kx + ky * ky);
  return p.scale * std::pow(1.0 + p.stiffness * k2, -0.5 * p.power);
}

Tensor grf_sample(std::uint64_t seed, Index nx, Index ny, const GrfParams& params) {
  if (!is_power_of_two(nx) || !is_power_of_two(ny)) throw DimensionError("grf_sample: grid must be powers of two");
  auto rng = make_rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor noise({nx, ny});
  for (Index i = 0; i < noise.size(); ++i) noise[i] = normal(rng);
  // Unitary FFT of unit white noise gives unit-variance Hermitian
  // coefficients; sqrt(nx*ny) turns them into Fourier-series amplitudes.
  ComplexTensor F = fft2(noise);
  const double amp = std::sqrt(static_cast<double>(nx * ny));
  for (Index x = 0; x < nx; ++x)
    for (Index y = 0; y < ny; ++y) F[x * ny + y] *= amp * grf_mode_std(params, frequency(x, nx), frequency(y, ny));
  F[0] = 0.0;
  Tensor out = ifft2(F);
  out.array() -= out.array().mean();
  return out;
}

}  // namespace steadyop::spectral
