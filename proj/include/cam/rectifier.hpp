#pragma once

#include <torch/torch.h>

#include <utility>

#include "cam/branch.hpp"
#include "cam/error.hpp"
#include "cam/sampler.hpp"
#include "cam/tps.hpp"

namespace cam {

namespace nn = torch::nn;

// Depthwise 3x3 followed by pointwise projection, BN and ReLU.
struct SeparableConvImpl : nn::Module {
  SeparableConvImpl(int64_t in, int64_t out) {
    depthwise = register_module(
        "depthwise", nn::Conv2d(nn::Conv2dOptions(in, in, 3).padding(1).groups(in).bias(false)));
    pointwise = register_module("pointwise", nn::Conv2d(nn::Conv2dOptions(in, out, 1).bias(false)));
    bn = register_module("bn", nn::BatchNorm2d(out));
  }

  torch::Tensor forward(const torch::Tensor& x) { return branch::relu(bn(pointwise(depthwise(x)))); }

  nn::Conv2d depthwise{nullptr}, pointwise{nullptr};
  nn::BatchNorm2d bn{nullptr};
};
TORCH_MODULE(SeparableConv);

/// Control point regressor run on the 32 x 64 thumbnail. Six separable 3x3
/// convs (32, 64, 128, 256, 256, 256 filters), 2x2 max-pool after the first
/// five, FC 512, FC 2K, clamped to [-1, 1].
struct LocalizationNetImpl : nn::Module {
  static constexpr int64_t kThumbHeight = 32;
  static constexpr int64_t kThumbWidth = 64;

  explicit LocalizationNetImpl(int64_t num_points = kNumFiducials) : num_points_(num_points) {
    const int64_t filters[] = {32, 64, 128, 256, 256, 256};
    int64_t in = 3;
    for (int64_t f : filters) {
      convs->push_back(SeparableConv(in, f));
      in = f;
    }
    register_module("convs", convs);
    // 32x64 halves five times to 1x2.
    fc1 = register_module("fc1", nn::Linear(in * 2, 512));
    fc2 = register_module("fc2", nn::Linear(512, 2 * num_points));
    reset_to_template();
  }

  /// Zero final weights, bias = canonical template: every input maps to the
  /// template until training moves it.
  void reset_to_template() {
    torch::NoGradGuard guard;
    fc2->weight.zero_();
    fc2->bias.copy_(fiducial_template(static_cast<int>(num_points_)).reshape({-1}).to(fc2->bias.dtype()));
  }

  /// B x 3 x 32 x 64 -> B x K x 2.
  torch::Tensor forward(torch::Tensor x) {
    if (x.dim() != 4 || x.size(1) != 3 || x.size(2) != kThumbHeight || x.size(3) != kThumbWidth) {
      throw Error(ErrorKind::ShapeMismatch, "localization net expects B x 3 x 32 x 64");
    }
    for (size_t i = 0; i < convs->size(); ++i) {
      x = convs[i]->as<SeparableConv>()->forward(x);
      if (i + 1 < convs->size()) x = branch::max_pool2d(x, 2);
    }
    x = branch::relu(fc1(x.flatten(1)));
    return branch::clamp(fc2(x), -1.0, 1.0).view({-1, num_points_, 2});
  }

  int64_t num_points_;
  nn::ModuleList convs;
  nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(LocalizationNet);

/// TPS spatial transformer: 3 x 64 x 256 input -> 3 x 32 x 128 rectified image.
struct RectifierImpl : nn::Module {
  static constexpr int64_t kOutHeight = 32;
  static constexpr int64_t kOutWidth = 128;

  RectifierImpl() {
    localizer = register_module("localizer", LocalizationNet());
    static const ThinPlateSpline tps(fiducial_template());
    // Constant (32*128) x K matrix: grid = warp @ control_points.
    warp = register_buffer("warp", tps.warp_matrix(identity_grid(kOutHeight, kOutWidth, torch::kFloat64))
                                       .to(torch::kFloat32));
  }

  torch::Tensor thumbnail(const torch::Tensor& image) {
    namespace F = torch::nn::functional;
    return F::interpolate(image, F::InterpolateFuncOptions()
                                     .size(std::vector<int64_t>{LocalizationNetImpl::kThumbHeight,
                                                                LocalizationNetImpl::kThumbWidth})
                                     .mode(torch::kBilinear)
                                     .align_corners(true));
  }

  torch::Tensor grid(const torch::Tensor& control) {
    return warp.matmul(control).view({control.size(0), kOutHeight, kOutWidth, 2});
  }

  /// Returns (rectified image, control points).
  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& image) {
    if (image.dim() != 4 || image.size(1) != 3) {
      throw Error(ErrorKind::ShapeMismatch, "rectifier expects B x 3 x H x W");
    }
    auto control = localizer(thumbnail(image));
    return {grid_sample(image, grid(control)), control};
  }

  LocalizationNet localizer{nullptr};
  torch::Tensor warp;
};
TORCH_MODULE(Rectifier);

}  // namespace cam
