#pragma once

#include <torch/torch.h>

#include <string>
#include <string_view>

#include "cam/attention.hpp"
#include "cam/branch.hpp"
#include "cam/error.hpp"
#include "cam/sampler.hpp"

namespace cam {

namespace nn = torch::nn;

/// Uniform reference points over an (H_f / r) x (W_f / r) grid, normalized
/// to [-1, 1] per axis. Shape H_g x W_g x 2 in (x, y) order.
inline torch::Tensor make_reference_grid(int64_t feat_h, int64_t feat_w, int64_t r,
                                         torch::TensorOptions opts = torch::kFloat32) {
  if (r < 1 || feat_h % r != 0 || feat_w % r != 0) {
    throw Error(ErrorKind::IndivisibleGrid, "downsample factor " + std::to_string(r) + " does not divide " +
                                                std::to_string(feat_h) + "x" + std::to_string(feat_w));
  }
  return identity_grid(feat_h / r, feat_w / r, opts);
}

enum class FusionStrategy { Aligned, Add, DotProduct, Concatenate, ConditionalNormalization, CrossAttention };

inline FusionStrategy parse_fusion_strategy(std::string_view name) {
  if (name == "aligned") return FusionStrategy::Aligned;
  if (name == "add") return FusionStrategy::Add;
  if (name == "dot_product") return FusionStrategy::DotProduct;
  if (name == "concatenate") return FusionStrategy::Concatenate;
  if (name == "conditional_normalization") return FusionStrategy::ConditionalNormalization;
  if (name == "cross_attention") return FusionStrategy::CrossAttention;
  throw Error(ErrorKind::UnknownStrategy, "unknown fusion strategy '" + std::string(name) + "'");
}

inline std::string_view to_string(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::Aligned: return "aligned";
    case FusionStrategy::Add: return "add";
    case FusionStrategy::DotProduct: return "dot_product";
    case FusionStrategy::Concatenate: return "concatenate";
    case FusionStrategy::ConditionalNormalization: return "conditional_normalization";
    case FusionStrategy::CrossAttention: return "cross_attention";
  }
  return "aligned";
}

inline constexpr FusionStrategy kAllFusionStrategies[] = {
    FusionStrategy::Add,
    FusionStrategy::DotProduct,
    FusionStrategy::Concatenate,
    FusionStrategy::ConditionalNormalization,
    FusionStrategy::CrossAttention,
    FusionStrategy::Aligned,
};

struct FusionConfig {
  FusionStrategy strategy = FusionStrategy::Aligned;
  int64_t heads = 8;
  int64_t groups = 4;
  int64_t downsample = 1;
  double offset_range = 1.0;
};

/// Offset network shared across the G channel groups. Each group sees its own
/// slice of F and F_c (2C/G channels): depthwise 3x3 (stride r) -> GELU ->
/// 1x1 to two channels -> tanh * range. Output B x G x H_g x W_g x 2.
struct OffsetNetImpl : nn::Module {
  OffsetNetImpl(int64_t channels, int64_t groups, int64_t downsample, double range)
      : channels_(channels), groups_(groups), range_(range) {
    if (groups <= 0 || channels % groups != 0) {
      throw Error(ErrorKind::InvalidConfig, "channels must be divisible by offset groups");
    }
    const int64_t in = 2 * channels / groups;
    depthwise = register_module(
        "depthwise", nn::Conv2d(nn::Conv2dOptions(in, in, 3).stride(downsample).padding(1).groups(in)));
    pointwise = register_module("pointwise", nn::Conv2d(nn::Conv2dOptions(in, 2, 1)));
    torch::NoGradGuard guard;
    pointwise->weight.zero_();
    pointwise->bias.zero_();
  }

  torch::Tensor forward(const torch::Tensor& f, const torch::Tensor& fc) {
    if (f.sizes() != fc.sizes() || f.size(1) != channels_) {
      throw Error(ErrorKind::ShapeMismatch, "offset net expects F and F_c of equal shape");
    }
    const int64_t B = f.size(0), H = f.size(2), W = f.size(3), G = groups_;
    auto x = torch::cat({f.view({B, G, channels_ / G, H, W}), fc.view({B, G, channels_ / G, H, W})}, 2)
                 .view({B * G, 2 * channels_ / G, H, W});
    auto off = torch::tanh(pointwise(torch::gelu(depthwise(x)))) * range_;
    const int64_t hg = off.size(2), wg = off.size(3);
    return off.view({B, G, 2, hg, wg}).permute({0, 1, 3, 4, 2});
  }

  int64_t channels_, groups_;
  double range_;
  nn::Conv2d depthwise{nullptr}, pointwise{nullptr};
};
TORCH_MODULE(OffsetNet);

/// Samples group g of F (B x C x H x W) at reference + offset[g], clamped to
/// [-1, 1]. Offsets B x G x H_g x W_g x 2; returns B x C x H_g x W_g.
inline torch::Tensor deform_sample(const torch::Tensor& f, const torch::Tensor& reference, const torch::Tensor& offsets) {
  const int64_t B = f.size(0), C = f.size(1), H = f.size(2), W = f.size(3);
  const int64_t G = offsets.size(1), hg = offsets.size(2), wg = offsets.size(3);
  if (offsets.dim() != 5 || offsets.size(0) != B || C % G != 0 || reference.size(0) != hg || reference.size(1) != wg) {
    throw Error(ErrorKind::ShapeMismatch, "deform_sample: inconsistent feature/grid/offset shapes");
  }
  auto points = branch::clamp(reference.unsqueeze(0).unsqueeze(0) + offsets, -1.0, 1.0).reshape({B * G, hg, wg, 2});
  auto sampled = grid_sample(f.reshape({B * G, C / G, H, W}), points);
  return sampled.reshape({B, C, hg, wg});
}

/// Feature fusion of the recognition feature F and canonical feature F_c,
/// both B x C x h x w. `Aligned` is the mask-guided deformable attention; the
/// others are pixel-level or undeformed-attention baselines.
struct FusionImpl : nn::Module {
  FusionImpl(int64_t channels, FusionConfig cfg) : channels_(channels), config(cfg) {
    switch (cfg.strategy) {
      case FusionStrategy::Aligned:
        offsets = register_module("offsets", OffsetNet(channels, cfg.groups, cfg.downsample, cfg.offset_range));
        [[fallthrough]];
      case FusionStrategy::CrossAttention:
        attention = register_module("attention", MultiHeadAttention(channels, cfg.heads));
        break;
      case FusionStrategy::Concatenate:
        merge = register_module("merge", nn::Conv2d(nn::Conv2dOptions(2 * channels, channels, 1)));
        break;
      case FusionStrategy::ConditionalNormalization: {
        scale = register_module("scale", nn::Conv2d(nn::Conv2dOptions(channels, channels, 1)));
        shift = register_module("shift", nn::Conv2d(nn::Conv2dOptions(channels, channels, 1)));
        torch::NoGradGuard guard;
        scale->weight.zero_();
        scale->bias.fill_(1.0);
        shift->weight.zero_();
        shift->bias.zero_();
        break;
      }
      case FusionStrategy::Add:
      case FusionStrategy::DotProduct:
        break;
    }
  }

  /// Multi-head attention with F_c tokens as queries over `kv` tokens.
  torch::Tensor fuse_attention(const torch::Tensor& fc, const torch::Tensor& kv, torch::Tensor* weights = nullptr) {
    auto out = attention->forward(to_tokens(fc), to_tokens(kv), std::nullopt, weights);
    return from_tokens(out, fc.size(2), fc.size(3));
  }

  torch::Tensor predict_offsets(const torch::Tensor& f, const torch::Tensor& fc) { return offsets(f, fc); }

  /// The aligned feature F~ for given offsets.
  torch::Tensor aligned_feature(const torch::Tensor& f, const torch::Tensor& offs) {
    auto ref = make_reference_grid(f.size(2), f.size(3), config.downsample, f.options());
    return deform_sample(f, ref, offs);
  }

  torch::Tensor forward(const torch::Tensor& f, const torch::Tensor& fc) {
    if (f.sizes() != fc.sizes() || f.dim() != 4 || f.size(1) != channels_) {
      throw Error(ErrorKind::ShapeMismatch, "fusion expects F and F_c of equal shape B x C x h x w");
    }
    switch (config.strategy) {
      case FusionStrategy::Aligned:
        return fuse_attention(fc, aligned_feature(f, predict_offsets(f, fc)));
      case FusionStrategy::CrossAttention:
        return fuse_attention(fc, f);
      case FusionStrategy::Add:
        return f + fc;
      case FusionStrategy::DotProduct:
        return f * fc;
      case FusionStrategy::Concatenate:
        return merge(torch::cat({f, fc}, 1));
      case FusionStrategy::ConditionalNormalization:
        return conditional_normalize(f, scale(fc), shift(fc));
    }
    return f;
  }

  /// Instance-normalizes F over space, then applies per-pixel scale/shift.
  static torch::Tensor conditional_normalize(const torch::Tensor& f, const torch::Tensor& scale,
                                             const torch::Tensor& shift, double eps = 1e-5) {
    auto mean = f.mean({2, 3}, true);
    auto var = (f - mean).pow(2).mean({2, 3}, true);
    return (f - mean) / (var + eps).sqrt() * scale + shift;
  }

  int64_t channels_;
  FusionConfig config;
  OffsetNet offsets{nullptr};
  MultiHeadAttention attention{nullptr};
  nn::Conv2d merge{nullptr}, scale{nullptr}, shift{nullptr};
};
TORCH_MODULE(Fusion);

}  // namespace cam
