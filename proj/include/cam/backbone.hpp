#pragma once

#include <torch/torch.h>

#include <array>
#include <string>

#include "cam/error.hpp"

namespace cam {

namespace nn = torch::nn;

struct BackboneConfig {
  std::array<int64_t, 4> depths{1, 1, 2, 1};
  std::array<int64_t, 4> dims{32, 64, 128, 192};

  static BackboneConfig toy() { return {}; }
  static BackboneConfig nano() { return {{2, 2, 8, 2}, {80, 160, 320, 640}}; }
  static BackboneConfig tiny() { return {{3, 3, 9, 3}, {96, 192, 384, 768}}; }
  static BackboneConfig base() { return {{3, 3, 27, 3}, {128, 256, 512, 1024}}; }

  void validate() const {
    for (int i = 0; i < 4; ++i) {
      if (depths[i] < 1 || dims[i] < 1) throw Error(ErrorKind::InvalidConfig, "backbone depths/dims must be positive");
      if (i > 0 && dims[i] < dims[i - 1]) throw Error(ErrorKind::InvalidConfig, "backbone dims must be nondecreasing");
    }
  }

  /// Closed-form parameter count of BackboneImpl.
  int64_t parameter_count() const {
    auto block = [](int64_t d) {
      return (49 * d + d)        // 7x7 depthwise
             + 2 * d             // layer norm
             + (d * 4 * d + 4 * d)  // expand
             + 2 * 4 * d         // GRN gamma, beta
             + (4 * d * d + d);  // project
    };
    int64_t n = (3 * 16 * dims[0] + dims[0]) + 2 * dims[0];  // stem conv + LN
    const int64_t kernel_rows[] = {0, 2, 2, 1};
    for (int s = 0; s < 4; ++s) {
      if (s > 0) n += 2 * dims[s - 1] + kernel_rows[s] * dims[s - 1] * dims[s] + dims[s];
      n += depths[s] * block(dims[s]);
    }
    return n + 2 * dims[3];  // output LN
  }
};

/// LayerNorm over the channel axis of a B x C x H x W tensor.
struct ChannelLayerNormImpl : nn::Module {
  explicit ChannelLayerNormImpl(int64_t channels) {
    norm = register_module("norm", nn::LayerNorm(nn::LayerNormOptions({channels}).eps(1e-6)));
  }
  torch::Tensor forward(const torch::Tensor& x) { return norm(x.permute({0, 2, 3, 1})).permute({0, 3, 1, 2}); }
  nn::LayerNorm norm{nullptr};
};
TORCH_MODULE(ChannelLayerNorm);

/// Global response normalization on channels-last tokens (B x H x W x C):
/// y = gamma * (x * N(x)) + beta + x, with G(x) the per-channel spatial L2
/// norm and N(x) = G(x) / (mean_c G(x) + eps).
inline torch::Tensor global_response_norm(const torch::Tensor& x, const torch::Tensor& gamma,
                                          const torch::Tensor& beta, double eps = 1e-6) {
  auto g = x.pow(2).sum({1, 2}, /*keepdim=*/true).sqrt();
  auto n = g / (g.mean(-1, /*keepdim=*/true) + eps);
  return gamma * (x * n) + beta + x;
}

struct GRNImpl : nn::Module {
  explicit GRNImpl(int64_t dim) {
    gamma = register_parameter("gamma", torch::zeros({dim}));
    beta = register_parameter("beta", torch::zeros({dim}));
  }
  torch::Tensor forward(const torch::Tensor& x) { return global_response_norm(x, gamma, beta); }
  torch::Tensor gamma, beta;
};
TORCH_MODULE(GRN);

/// dwconv 7x7 -> LN -> expand x4 -> GELU -> GRN -> project -> residual.
struct ConvNeXtBlockImpl : nn::Module {
  explicit ConvNeXtBlockImpl(int64_t dim) {
    dwconv = register_module("dwconv", nn::Conv2d(nn::Conv2dOptions(dim, dim, 7).padding(3).groups(dim)));
    norm = register_module("norm", nn::LayerNorm(nn::LayerNormOptions({dim}).eps(1e-6)));
    expand = register_module("expand", nn::Linear(dim, 4 * dim));
    grn = register_module("grn", GRN(4 * dim));
    project = register_module("project", nn::Linear(4 * dim, dim));
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto y = dwconv(x).permute({0, 2, 3, 1});
    y = project(grn(torch::gelu(expand(norm(y)))));
    return x + y.permute({0, 3, 1, 2});
  }

  nn::Conv2d dwconv{nullptr};
  nn::LayerNorm norm{nullptr};
  nn::Linear expand{nullptr};
  GRN grn{nullptr};
  nn::Linear project{nullptr};
};
TORCH_MODULE(ConvNeXtBlock);

/// ConvNeXt-V2 encoder with stage strides (4,4), (2,1), (2,1), (1,1):
/// B x 3 x H x W -> B x C x H/16 x W/4.
struct BackboneImpl : nn::Module {
  explicit BackboneImpl(BackboneConfig cfg = {}) : config(cfg) {
    cfg.validate();
    const auto& d = cfg.dims;
    auto stem = nn::Sequential(nn::Conv2d(nn::Conv2dOptions(3, d[0], 4).stride(4)), ChannelLayerNorm(d[0]));
    downsample->push_back(stem);
    const std::array<int64_t, 4> rows{0, 2, 2, 1};
    for (int s = 1; s < 4; ++s) {
      downsample->push_back(nn::Sequential(
          ChannelLayerNorm(d[s - 1]),
          nn::Conv2d(nn::Conv2dOptions(d[s - 1], d[s], {rows[s], 1}).stride({rows[s], 1}))));
    }
    for (int s = 0; s < 4; ++s) {
      nn::Sequential stage;
      for (int64_t b = 0; b < cfg.depths[s]; ++b) stage->push_back(ConvNeXtBlock(d[s]));
      stages->push_back(stage);
    }
    register_module("downsample", downsample);
    register_module("stages", stages);
    out_norm = register_module("out_norm", ChannelLayerNorm(d[3]));
  }

  int64_t out_channels() const { return config.dims[3]; }

  torch::Tensor forward(torch::Tensor x) {
    if (x.dim() != 4 || x.size(1) != 3 || x.size(2) % 16 != 0 || x.size(3) % 4 != 0) {
      throw Error(ErrorKind::ShapeMismatch, "backbone expects B x 3 x H x W with H % 16 == 0 and W % 4 == 0");
    }
    for (size_t s = 0; s < 4; ++s) {
      x = downsample[s]->as<nn::Sequential>()->forward(x);
      x = stages[s]->as<nn::Sequential>()->forward(x);
    }
    return out_norm(x);
  }

  BackboneConfig config;
  nn::ModuleList downsample, stages;
  ChannelLayerNorm out_norm{nullptr};
};
TORCH_MODULE(Backbone);

}  // namespace cam
