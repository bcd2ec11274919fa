#pragma once

#include <torch/torch.h>

#include <cmath>

#include "cam/error.hpp"
#include "cam/sampler.hpp"

namespace cam {

inline constexpr int kNumFiducials = 20;
inline constexpr double kFiducialMargin = 0.05;
inline constexpr double kTpsRegularization = 1e-6;

/// K x 2 canonical fiducials in (x, y): K/2 evenly spaced points along the top
/// edge followed by the same along the bottom edge, inset by `margin`.
inline torch::Tensor fiducial_template(int k = kNumFiducials, double margin = kFiducialMargin,
                                       torch::TensorOptions opts = torch::kFloat64) {
  const int half = k / 2;
  auto xs = torch::linspace(-1.0 + margin, 1.0 - margin, half, opts);
  auto top = torch::stack({xs, torch::full({half}, -1.0 + margin, opts)}, 1);
  auto bottom = torch::stack({xs, torch::full({half}, 1.0 - margin, opts)}, 1);
  return torch::cat({top, bottom}, 0);
}

/// Thin-plate spline with fixed base points. The interpolant mapping base
/// point i to control point i is linear in the control points, so the system
/// is inverted once and every warp is a matrix product.
class ThinPlateSpline {
 public:
  explicit ThinPlateSpline(torch::Tensor base, double eps = kTpsRegularization)
      : base_(base.to(torch::kFloat64).contiguous()) {
    if (base_.dim() != 2 || base_.size(1) != 2 || base_.size(0) < 3) {
      throw Error(ErrorKind::ShapeMismatch, "TPS base points must be K x 2 with K >= 3");
    }
    if (!torch::isfinite(base_).all().item<bool>()) {
      throw Error(ErrorKind::SingularSystem, "non-finite TPS base points");
    }
    const int64_t k = base_.size(0);
    auto p = torch::cat({torch::ones({k, 1}, torch::kFloat64), base_}, 1);
    auto sv = torch::linalg_svdvals(p);
    if ((sv[-1] / sv[0]).item<double>() < 1e-10) {
      throw Error(ErrorKind::SingularSystem, "TPS base points are collinear or coincident");
    }
    auto l = torch::zeros({k + 3, k + 3}, torch::kFloat64);
    l.slice(0, 0, k).slice(1, 0, k).copy_(kernel(base_, base_) + eps * torch::eye(k, torch::kFloat64));
    l.slice(0, 0, k).slice(1, k, k + 3).copy_(p);
    l.slice(0, k, k + 3).slice(1, 0, k).copy_(p.t());
    auto [inv, info] = torch::linalg_inv_ex(l);
    if (info.item<int>() != 0 || !torch::isfinite(inv).all().item<bool>()) {
      throw Error(ErrorKind::SingularSystem, "TPS system is singular");
    }
    // Only the columns multiplying the control points matter; the affine
    // constraint rows have zero right-hand side.
    solve_ = inv.slice(1, 0, k).contiguous();
  }

  int64_t num_points() const { return base_.size(0); }
  const torch::Tensor& base() const { return base_; }

  /// (K+3) x K map from control points to [radial weights; affine coeffs].
  const torch::Tensor& solve_matrix() const { return solve_; }

  /// N x K matrix A such that warp(points) = A @ control_points.
  torch::Tensor warp_matrix(const torch::Tensor& points) const {
    auto pts = points.to(torch::kFloat64).reshape({-1, 2});
    auto rep = torch::cat({kernel(pts, base_), torch::ones({pts.size(0), 1}, torch::kFloat64), pts}, 1);
    return rep.matmul(solve_);
  }

  /// Evaluates the warp at N x 2 points for control points (B x) K x 2.
  torch::Tensor evaluate(const torch::Tensor& points, const torch::Tensor& control) const {
    check_control(control);
    return warp_matrix(points).to(control.scalar_type()).matmul(control);
  }

  /// Sampling grid (B x) h x w x 2 over the regular output lattice.
  torch::Tensor grid(const torch::Tensor& control, int64_t h, int64_t w) const {
    check_control(control);
    auto a = warp_matrix(identity_grid(h, w, torch::kFloat64)).to(control.scalar_type());
    auto g = a.matmul(control);
    if (control.dim() == 3) return g.view({control.size(0), h, w, 2});
    return g.view({h, w, 2});
  }

  /// U(r) = r^2 log r^2 between every pair of rows, with U(0) = 0.
  static torch::Tensor kernel(const torch::Tensor& a, const torch::Tensor& b) {
    auto d2 = (a.unsqueeze(1) - b.unsqueeze(0)).pow(2).sum(-1);
    return torch::where(d2 > 0, d2 * torch::log(d2.clamp_min(1e-300)), torch::zeros_like(d2));
  }

 private:
  void check_control(const torch::Tensor& control) const {
    if (control.size(-1) != 2 || control.size(-2) != num_points()) {
      throw Error(ErrorKind::ShapeMismatch, "control points must be (B x) K x 2");
    }
  }

  torch::Tensor base_;
  torch::Tensor solve_;
};

/// Sampling grid for control points under the canonical template.
inline torch::Tensor tps_grid(const torch::Tensor& control, int64_t out_h = 32, int64_t out_w = 128) {
  static const ThinPlateSpline tps(fiducial_template());
  if (!torch::isfinite(control).all().item<bool>()) {
    throw Error(ErrorKind::SingularSystem, "non-finite control points");
  }
  return tps.grid(control, out_h, out_w);
}

}  // namespace cam
