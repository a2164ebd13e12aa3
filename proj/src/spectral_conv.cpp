#include "steadyop/spectral_conv.hpp"

#include "steadyop/errors.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <tuple>

namespace steadyop {
namespace {

// [x][y][c] -> W x (H*C) row-major, row y holds (x, c) pairs.
RowMatrixXd transpose_xy(const Tensor& v) {
  const Index h = v.dim(0), w = v.dim(1), c = v.dim(2);
  RowMatrixXd out(w, h * c);
  for (Index x = 0; x < h; ++x)
    for (Index y = 0; y < w; ++y)
      for (Index k = 0; k < c; ++k) out(y, x * c + k) = v[(x * w + y) * c + k];
  return out;
}

Tensor untranspose_xy(const RowMatrixXd& m, Index h, Index w, Index c) {
  Tensor out({h, w, c});
  for (Index x = 0; x < h; ++x)
    for (Index y = 0; y < w; ++y)
      for (Index k = 0; k < c; ++k) out[(x * w + y) * c + k] = m(y, x * c + k);
  return out;
}

}  // namespace

ModeTransform::ModeTransform(Index h, Index w, Index modes) : h_(h), w_(w), k_(modes) {
  if (modes < 1 || modes > h / 2 - 1 || modes > w / 2 - 1)
    throw DimensionError("mode count " + std::to_string(modes) + " exceeds grid/2 - 1 for " + std::to_string(h) +
                         "x" + std::to_string(w));
  const double two_pi = 2.0 * std::numbers::pi;
  fx_re_.resize(2 * k_, h_);
  fx_im_.resize(2 * k_, h_);
  const double sx = 1.0 / std::sqrt(static_cast<double>(h_));
  for (Index r = 0; r < 2 * k_; ++r) {
    const Index kx = r < k_ ? r : r - 2 * k_;
    for (Index x = 0; x < h_; ++x) {
      // Reduce the phase index mod h to keep the angle small and exact.
      const Index p = ((kx * x) % h_ + h_) % h_;
      const double ang = -two_pi * static_cast<double>(p) / static_cast<double>(h_);
      fx_re_(r, x) = sx * std::cos(ang);
      fx_im_(r, x) = sx * std::sin(ang);
    }
  }
  fy_re_.resize(k_, w_);
  fy_im_.resize(k_, w_);
  const double sy = 1.0 / std::sqrt(static_cast<double>(w_));
  for (Index j = 0; j < k_; ++j) {
    for (Index y = 0; y < w_; ++y) {
      const Index p = (j * y) % w_;
      const double ang = -two_pi * static_cast<double>(p) / static_cast<double>(w_);
      fy_re_(j, y) = sy * std::cos(ang);
      fy_im_(j, y) = sy * std::sin(ang);
    }
  }
}

std::shared_ptr<const ModeTransform> ModeTransform::get(Index h, Index w, Index modes) {
  static std::mutex mutex;
  static std::map<std::tuple<Index, Index, Index>, std::shared_ptr<const ModeTransform>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[{h, w, modes}];
  if (!slot) slot = std::make_shared<const ModeTransform>(h, w, modes);
  return slot;
}

ModeCoefficients ModeTransform::forward(const Tensor& v) const {
  if (v.rank() != 3 || v.dim(0) != h_ || v.dim(1) != w_) throw DimensionError("mode transform: grid mismatch");
  const Index c = v.dim(2);
  const RowMatrixXd vt = transpose_xy(v);
  // Along y: K x (H*C).
  const RowMatrixXd t_re = fy_re_ * vt;
  const RowMatrixXd t_im = fy_im_ * vt;

  ModeCoefficients out{2 * k_, k_, c, Eigen::ArrayXd(2 * k_ * k_ * c), Eigen::ArrayXd(2 * k_ * k_ * c)};
  RowMatrixXd o_re(2 * k_, c), o_im(2 * k_, c);
  for (Index j = 0; j < k_; ++j) {
    Eigen::Map<const RowMatrixXd> tj_re(t_re.row(j).data(), h_, c);
    Eigen::Map<const RowMatrixXd> tj_im(t_im.row(j).data(), h_, c);
    o_re.noalias() = fx_re_ * tj_re;
    o_re.noalias() -= fx_im_ * tj_im;
    o_im.noalias() = fx_re_ * tj_im;
    o_im.noalias() += fx_im_ * tj_re;
    Eigen::Map<RowMatrixXd>(out.re.data() + out.offset(0, j), 2 * k_, c) = o_re;
    Eigen::Map<RowMatrixXd>(out.im.data() + out.offset(0, j), 2 * k_, c) = o_im;
  }
  return out;
}

Tensor ModeTransform::adjoint_real(const ModeCoefficients& z) const {
  if (z.kx_rows != 2 * k_ || z.ky_cols != k_) throw DimensionError("mode transform: coefficient layout mismatch");
  const Index c = z.channels;
  RowMatrixXd u_re(k_, h_ * c), u_im(k_, h_ * c);
  for (Index j = 0; j < k_; ++j) {
    Eigen::Map<const RowMatrixXd> zj_re(z.re.data() + z.offset(0, j), 2 * k_, c);
    Eigen::Map<const RowMatrixXd> zj_im(z.im.data() + z.offset(0, j), 2 * k_, c);
    Eigen::Map<RowMatrixXd> uj_re(u_re.row(j).data(), h_, c);
    Eigen::Map<RowMatrixXd> uj_im(u_im.row(j).data(), h_, c);
    // conj(Fx)^T z
    uj_re.noalias() = fx_re_.transpose() * zj_re;
    uj_re.noalias() += fx_im_.transpose() * zj_im;
    uj_im.noalias() = fx_re_.transpose() * zj_im;
    uj_im.noalias() -= fx_im_.transpose() * zj_re;
  }
  RowMatrixXd out_t(w_, h_ * c);
  out_t.noalias() = fy_re_.transpose() * u_re;
  out_t.noalias() += fy_im_.transpose() * u_im;
  return untranspose_xy(out_t, h_, w_, c);
}

Index validate_spectral_weights(const Tensor& r_re, const Tensor& r_im, Index h, Index w, Index channels) {
  if (r_re.shape() != r_im.shape()) throw DimensionError("spectral weights: real/imag shapes differ");
  if (r_re.rank() != 4) throw DimensionError("spectral weights must be rank 4 [2K, K, din, dout]");
  const Index k = r_re.dim(1);
  if (r_re.dim(0) != 2 * k) throw DimensionError("spectral weights: first axis must be 2K");
  if (r_re.dim(2) != channels)
    throw DimensionError("spectral weights: input channels " + std::to_string(r_re.dim(2)) + " vs field channels " +
                         std::to_string(channels));
  if (k > 0 && (k > h / 2 - 1 || k > w / 2 - 1))
    throw DimensionError("spectral weights: mode count " + std::to_string(k) + " overflows grid " +
                         std::to_string(h) + "x" + std::to_string(w));
  return k;
}

Tensor spectral_conv_forward(const Tensor& v, const Tensor& r_re, const Tensor& r_im, ModeCoefficients* saved) {
  if (v.rank() != 3) throw DimensionError("spectral_conv expects an [H, W, C] field");
  const Index h = v.dim(0), w = v.dim(1), cin = v.dim(2);
  const Index k = validate_spectral_weights(r_re, r_im, h, w, cin);
  const Index cout = r_re.dim(3);
  if (k == 0) return Tensor({h, w, cout});

  const auto plan = ModeTransform::get(h, w, k);
  ModeCoefficients vhat = plan->forward(v);
  ModeCoefficients ohat{2 * k, k, cout, Eigen::ArrayXd(2 * k * k * cout), Eigen::ArrayXd(2 * k * k * cout)};
  for (Index j = 0; j < k; ++j) {
    const double wj = plan->column_weight(j);
    for (Index r = 0; r < 2 * k; ++r) {
      const Index roff = (r * k + j) * cin * cout;
      Eigen::Map<const RowMatrixXd> rre(r_re.data() + roff, cin, cout);
      Eigen::Map<const RowMatrixXd> rim(r_im.data() + roff, cin, cout);
      Eigen::Map<const Eigen::RowVectorXd> vre(vhat.re.data() + vhat.offset(r, j), cin);
      Eigen::Map<const Eigen::RowVectorXd> vim(vhat.im.data() + vhat.offset(r, j), cin);
      Eigen::Map<Eigen::RowVectorXd> ore(ohat.re.data() + ohat.offset(r, j), cout);
      Eigen::Map<Eigen::RowVectorXd> oim(ohat.im.data() + ohat.offset(r, j), cout);
      ore.noalias() = wj * (vre * rre - vim * rim);
      oim.noalias() = wj * (vre * rim + vim * rre);
    }
  }
  Tensor out = plan->adjoint_real(ohat);
  if (saved) *saved = std::move(vhat);
  return out;
}

void spectral_conv_backward(const Tensor& grad_out, const ModeCoefficients& vhat, const Tensor& r_re,
                            const Tensor& r_im, Tensor* grad_v, Tensor* grad_r_re, Tensor* grad_r_im) {
  const Index h = grad_out.dim(0), w = grad_out.dim(1), cout = grad_out.dim(2);
  const Index cin = r_re.dim(2);
  const Index k = r_re.dim(1);
  if (k == 0) return;
  const auto plan = ModeTransform::get(h, w, k);
  // dL/d(ohat) = w . D g
  ModeCoefficients g = plan->forward(grad_out);
  ModeCoefficients gv{2 * k, k, cin, Eigen::ArrayXd::Zero(2 * k * k * cin), Eigen::ArrayXd::Zero(2 * k * k * cin)};
  for (Index j = 0; j < k; ++j) {
    const double wj = plan->column_weight(j);
    for (Index r = 0; r < 2 * k; ++r) {
      const Index roff = (r * k + j) * cin * cout;
      Eigen::Map<const Eigen::VectorXd> gre(g.re.data() + g.offset(r, j), cout);
      Eigen::Map<const Eigen::VectorXd> gim(g.im.data() + g.offset(r, j), cout);
      const Eigen::VectorXd go_re = wj * gre;
      const Eigen::VectorXd go_im = wj * gim;
      Eigen::Map<const RowMatrixXd> rre(r_re.data() + roff, cin, cout);
      Eigen::Map<const RowMatrixXd> rim(r_im.data() + roff, cin, cout);
      if (grad_v) {
        Eigen::Map<Eigen::VectorXd> vre(gv.re.data() + gv.offset(r, j), cin);
        Eigen::Map<Eigen::VectorXd> vim(gv.im.data() + gv.offset(r, j), cin);
        vre.noalias() = rre * go_re + rim * go_im;
        vim.noalias() = rre * go_im - rim * go_re;
      }
      if (grad_r_re || grad_r_im) {
        Eigen::Map<const Eigen::VectorXd> xre(vhat.re.data() + vhat.offset(r, j), cin);
        Eigen::Map<const Eigen::VectorXd> xim(vhat.im.data() + vhat.offset(r, j), cin);
        if (grad_r_re) {
          Eigen::Map<RowMatrixXd> dre(grad_r_re->data() + roff, cin, cout);
          dre.noalias() += xre * go_re.transpose() + xim * go_im.transpose();
        }
        if (grad_r_im) {
          Eigen::Map<RowMatrixXd> dim(grad_r_im->data() + roff, cin, cout);
          dim.noalias() += xre * go_im.transpose() - xim * go_re.transpose();
        }
      }
    }
  }
  if (grad_v) grad_v->array() += plan->adjoint_real(gv).array();
}

}  // namespace steadyop
