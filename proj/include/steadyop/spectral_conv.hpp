#pragma once

// Kernel integral operator K(v) = F^{-1}(R . F v) restricted to the retained
// Fourier modes.
//
// Retained-mode layout for a mode count K: kx in {0..K-1, -K..-1} (2K rows in
// FFT order, row r maps to kx = r for r < K and kx = r - 2K otherwise) and
// ky in {0..K-1}. The ky < 0 half plane is implied by conjugate symmetry,
// so a layer carries 2*K*K complex dv x dv matrices. R is stored as two real
// tensors of shape [2K, K, dv_in, dv_out]; at each mode out_o = sum_i R[i,o] v_i.
//
// Only the retained coefficients are ever formed: the forward transform is a
// pair of dense partial-DFT products (along y, then along x) evaluated with
// GEMMs, which is exact and cheaper than a full FFT when K << n.

#include "steadyop/tensor.hpp"

#include <memory>

namespace steadyop {

/// Complex coefficients on the retained modes, layout [ky][r][c].
struct ModeCoefficients {
  Index kx_rows = 0;
  Index ky_cols = 0;
  Index channels = 0;
  Eigen::ArrayXd re;
  Eigen::ArrayXd im;

  Index offset(Index r, Index j) const { return (j * kx_rows + r) * channels; }
};

/// Unitary partial DFT D: real [H, W, C] field -> retained coefficients, and
/// the real part of its adjoint. Immutable once built; shared through a cache.
class ModeTransform {
 public:
  ModeTransform(Index h, Index w, Index modes);

  static std::shared_ptr<const ModeTransform> get(Index h, Index w, Index modes);

  Index height() const { return h_; }
  Index width() const { return w_; }
  Index modes() const { return k_; }

  /// Conjugate-symmetry weight of column ky (1 for ky = 0, 2 otherwise).
  double column_weight(Index j) const { return j == 0 ? 1.0 : 2.0; }

  ModeCoefficients forward(const Tensor& v) const;
  /// Re(D^H z) as an [H, W, C] field.
  Tensor adjoint_real(const ModeCoefficients& z) const;

 private:
  Index h_, w_, k_;
  Eigen::MatrixXd fx_re_, fx_im_;  // 2K x H
  Eigen::MatrixXd fy_re_, fy_im_;  // K x W
};

/// Checks R shapes against a field with `channels` input channels on an
/// h x w grid; returns the mode count K. Throws DimensionError.
Index validate_spectral_weights(const Tensor& r_re, const Tensor& r_im, Index h, Index w, Index channels);

/// Forward pass. `saved`, when non-null, receives F v for the backward pass.
Tensor spectral_conv_forward(const Tensor& v, const Tensor& r_re, const Tensor& r_im,
                             ModeCoefficients* saved = nullptr);

/// Accumulates (+=) the gradients of the three inputs; any output pointer
/// may be null.
void spectral_conv_backward(const Tensor& grad_out, const ModeCoefficients& vhat, const Tensor& r_re,
                            const Tensor& r_im, Tensor* grad_v, Tensor* grad_r_re, Tensor* grad_r_im);

}  // namespace steadyop
