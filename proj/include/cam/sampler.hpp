#pragma once

#include <torch/torch.h>

#include "cam/branch.hpp"
#include "cam/error.hpp"

namespace cam {

/// Bilinear sampling of `input` (B x C x H x W) at `grid` (B x h x w x 2,
/// (x, y) order) in the normalized frame where -1 and +1 are the centres of
/// the first and last pixel. Neighbours outside the image contribute zero.
/// Built from differentiable tensor ops, so gradients reach both the image
/// and the coordinates.
inline torch::Tensor grid_sample(const torch::Tensor& input, const torch::Tensor& grid) {
  if (input.dim() != 4 || grid.dim() != 4 || grid.size(3) != 2 || grid.size(0) != input.size(0)) {
    throw Error(ErrorKind::ShapeMismatch, "grid_sample expects input BxCxHxW and grid Bxhxwx2");
  }
  const int64_t B = input.size(0), C = input.size(1), H = input.size(2), W = input.size(3);
  const int64_t h = grid.size(1), w = grid.size(2);

  auto gx = grid.select(3, 0).reshape({B, h * w});
  auto gy = grid.select(3, 1).reshape({B, h * w});
  auto ix = (gx + 1) * (0.5 * static_cast<double>(W - 1));
  auto iy = (gy + 1) * (0.5 * static_cast<double>(H - 1));

  auto x0 = branch::floor(ix);
  auto y0 = branch::floor(iy);
  auto fx = ix - x0;  // carries the coordinate gradient
  auto fy = iy - y0;

  auto flat = input.reshape({B, C, H * W});
  auto out = torch::zeros({B, C, h * w}, input.options());
  for (int dy = 0; dy <= 1; ++dy) {
    for (int dx = 0; dx <= 1; ++dx) {
      auto xs = x0 + dx;
      auto ys = y0 + dy;
      auto valid = (xs >= 0) & (xs <= W - 1) & (ys >= 0) & (ys <= H - 1);
      auto wx = dx ? fx : 1 - fx;
      auto wy = dy ? fy : 1 - fy;
      auto weight = wx * wy * valid.to(input.scalar_type());
      auto idx = (ys.clamp(0, H - 1) * W + xs.clamp(0, W - 1)).to(torch::kLong);
      auto vals = flat.gather(2, idx.unsqueeze(1).expand({B, C, h * w}));
      out = out + vals * weight.unsqueeze(1);
    }
  }
  return out.view({B, C, h, w});
}

/// Regular lattice of h x w sample points spanning [-1, 1] in both axes,
/// shape h x w x 2 in (x, y) order. A single point along an axis sits at 0.
inline torch::Tensor identity_grid(int64_t h, int64_t w, torch::TensorOptions opts = torch::kFloat32) {
  auto lin = [&](int64_t n) {
    return n == 1 ? torch::zeros({1}, opts) : torch::linspace(-1.0, 1.0, n, opts);
  };
  auto ys = lin(h).view({h, 1}).expand({h, w});
  auto xs = lin(w).view({1, w}).expand({h, w});
  return torch::stack({xs, ys}, 2);
}

}  // namespace cam
