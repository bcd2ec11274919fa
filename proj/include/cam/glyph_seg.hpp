#pragma once

#include <torch/torch.h>

#include <array>
#include <string>

#include "cam/branch.hpp"
#include "cam/error.hpp"
#include "cam/vocab.hpp"

namespace cam {

namespace nn = torch::nn;

struct SegStages {
  std::array<torch::Tensor, 4> s;  // C x h/16 x w/4, C/2 x h/8 x w/4, C/4 x h/4 x w/4, C/8 x h/2 x w/2
};

struct SegOutput {
  torch::Tensor logits;     // B x 69 x H x W
  torch::Tensor canonical;  // B x C x H/16 x W/4
};

namespace detail {

inline nn::Conv2d depth_conv(int64_t in, int64_t out) {
  // Grouped 3x3 conv with one group per output channel: depthwise when
  // in == out, a 2:1 channel merge when halving, 1:2 split when doubling.
  const int64_t groups = std::min(in, out);
  return nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1).groups(groups).bias(false));
}

}  // namespace detail

/// One up-path stage: optional transposed-conv upsample, then
/// DepthConv(C) + BN + ReLU, DepthConv(C -> C/2) + BN.
/// Stage 1 is DepthConv(C) + BN only.
struct SegUpStageImpl : nn::Module {
  enum class Kind { First, Vertical, Both };

  SegUpStageImpl(int64_t channels, Kind kind) : kind_(kind) {
    if (kind == Kind::First) {
      conv_a = register_module("conv_a", detail::depth_conv(channels, channels));
      bn_a = register_module("bn_a", nn::BatchNorm2d(channels));
      return;
    }
    auto opts = kind == Kind::Vertical
                    ? nn::ConvTranspose2dOptions(channels, channels, {4, 1}).stride({2, 1}).padding({1, 0})
                    : nn::ConvTranspose2dOptions(channels, channels, 4).stride(2).padding(1);
    up = register_module("up", nn::ConvTranspose2d(opts));
    conv_a = register_module("conv_a", detail::depth_conv(channels, channels));
    bn_a = register_module("bn_a", nn::BatchNorm2d(channels));
    conv_b = register_module("conv_b", detail::depth_conv(channels, channels / 2));
    bn_b = register_module("bn_b", nn::BatchNorm2d(channels / 2));
  }

  torch::Tensor forward(torch::Tensor x) {
    if (kind_ == Kind::First) return bn_a(conv_a(x));
    x = branch::relu(bn_a(conv_a(up(x))));
    return bn_b(conv_b(x));
  }

  Kind kind_;
  nn::ConvTranspose2d up{nullptr};
  nn::Conv2d conv_a{nullptr}, conv_b{nullptr};
  nn::BatchNorm2d bn_a{nullptr}, bn_b{nullptr};
};
TORCH_MODULE(SegUpStage);

/// Mirror of an up stage on the down path: DepthConv(c) + BN + ReLU,
/// DepthConv(c -> 2c) + BN, then a strided conv replacing the upsample.
/// The mirror of stage 1 is DepthConv(C) + BN.
struct SegDownStageImpl : nn::Module {
  using Kind = SegUpStageImpl::Kind;

  SegDownStageImpl(int64_t in_channels, Kind kind) : kind_(kind) {
    if (kind == Kind::First) {
      conv_a = register_module("conv_a", detail::depth_conv(in_channels, in_channels));
      bn_a = register_module("bn_a", nn::BatchNorm2d(in_channels));
      return;
    }
    const int64_t out = in_channels * 2;
    conv_a = register_module("conv_a", detail::depth_conv(in_channels, in_channels));
    bn_a = register_module("bn_a", nn::BatchNorm2d(in_channels));
    conv_b = register_module("conv_b", detail::depth_conv(in_channels, out));
    bn_b = register_module("bn_b", nn::BatchNorm2d(out));
    auto opts = kind == Kind::Vertical ? nn::Conv2dOptions(out, out, {4, 1}).stride({2, 1}).padding({1, 0})
                                       : nn::Conv2dOptions(out, out, 4).stride(2).padding(1);
    down = register_module("down", nn::Conv2d(opts));
  }

  torch::Tensor forward(torch::Tensor x) {
    if (kind_ == Kind::First) return bn_a(conv_a(x));
    x = branch::relu(bn_a(conv_a(x)));
    return down(bn_b(conv_b(x)));
  }

  Kind kind_;
  nn::Conv2d conv_a{nullptr}, conv_b{nullptr}, down{nullptr};
  nn::BatchNorm2d bn_a{nullptr}, bn_b{nullptr};
};
TORCH_MODULE(SegDownStage);

/// Class-aware canonical glyph segmentation with the cap-shaped canonical
/// feature path. F (B x C x 2 x 32) -> mask logits (B x 69 x 32 x 128) and
/// F_c (B x C x 2 x 32).
struct GlyphSegImpl : nn::Module {
  explicit GlyphSegImpl(int64_t channels, int64_t num_classes = CharVocab::kNumClasses)
      : channels_(channels), num_classes_(num_classes) {
    if (channels % 8 != 0) throw Error(ErrorKind::InvalidConfig, "segmentation channels must be divisible by 8");
    using K = SegUpStageImpl::Kind;
    up1 = register_module("up1", SegUpStage(channels, K::First));
    up2 = register_module("up2", SegUpStage(channels, K::Vertical));
    up3 = register_module("up3", SegUpStage(channels / 2, K::Vertical));
    up4 = register_module("up4", SegUpStage(channels / 4, K::Both));
    down4 = register_module("down4", SegDownStage(channels / 8, K::Both));
    down3 = register_module("down3", SegDownStage(channels / 4, K::Vertical));
    down2 = register_module("down2", SegDownStage(channels / 2, K::Vertical));
    down1 = register_module("down1", SegDownStage(channels, K::First));
    classifier = register_module("classifier", nn::Linear(channels / 8, 4 * num_classes));
  }

  SegStages up_path(const torch::Tensor& f) {
    if (f.dim() != 4 || f.size(1) != channels_) {
      throw Error(ErrorKind::ShapeMismatch, "segmentation head expects B x " + std::to_string(channels_) + " x h x w");
    }
    SegStages st;
    st.s[0] = up1(f);
    st.s[1] = up2(st.s[0]);
    st.s[2] = up3(st.s[1]);
    st.s[3] = up4(st.s[2]);
    return st;
  }

  /// Per-position FC to a 2x2 patch of logits. FC output index is
  /// (2a + b) * classes + c for patch row a, column b.
  torch::Tensor logits(const torch::Tensor& s4) {
    const int64_t B = s4.size(0), h = s4.size(2), w = s4.size(3);
    auto y = classifier(s4.permute({0, 2, 3, 1}));  // B x h x w x 4K
    return y.view({B, h, w, 2, 2, num_classes_}).permute({0, 5, 1, 3, 2, 4}).reshape({B, num_classes_, 2 * h, 2 * w});
  }

  /// Down path: each stage consumes previous output + mirror up-stage output.
  torch::Tensor canonical_feature(const SegStages& st) {
    auto check = [](const torch::Tensor& a, const torch::Tensor& b, const char* where) {
      if (a.sizes() != b.sizes()) {
        throw Error(ErrorKind::ShapeMismatch, std::string("skip connection misaligned at ") + where);
      }
    };
    auto x = down4(st.s[3]);
    check(x, st.s[2], "stage 3");
    x = down3(x + st.s[2]);
    check(x, st.s[1], "stage 2");
    x = down2(x + st.s[1]);
    check(x, st.s[0], "stage 1");
    return down1(x + st.s[0]);
  }

  SegOutput forward(const torch::Tensor& f) {
    auto st = up_path(f);
    return {logits(st.s[3]), canonical_feature(st)};
  }

  int64_t channels_, num_classes_;
  SegUpStage up1{nullptr}, up2{nullptr}, up3{nullptr}, up4{nullptr};
  SegDownStage down4{nullptr}, down3{nullptr}, down2{nullptr}, down1{nullptr};
  nn::Linear classifier{nullptr};
};
TORCH_MODULE(GlyphSeg);

}  // namespace cam
