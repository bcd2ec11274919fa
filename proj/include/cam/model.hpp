#pragma once

#include <torch/torch.h>

#include <string>
#include <vector>

#include "cam/align_fuse.hpp"
#include "cam/backbone.hpp"
#include "cam/decoder.hpp"
#include "cam/glyph_seg.hpp"
#include "cam/rectifier.hpp"

namespace cam {

struct ModelConfig {
  std::string variant = "toy";
  BackboneConfig backbone = BackboneConfig::toy();
  DecoderConfig decoder{};
  FusionConfig fusion{};

  /// Architecture presets: toy (CPU tests), nano, tiny, base.
  static ModelConfig preset(const std::string& name) {
    ModelConfig c;
    c.variant = name;
    if (name == "toy") {
      c.backbone = BackboneConfig::toy();
      c.decoder.embed_dim = 128;
    } else if (name == "nano") {
      c.backbone = BackboneConfig::nano();
      c.decoder.embed_dim = 384;
    } else if (name == "tiny") {
      c.backbone = BackboneConfig::tiny();
      c.decoder.embed_dim = 512;
    } else if (name == "base") {
      c.backbone = BackboneConfig::base();
      c.decoder.embed_dim = 768;
    } else {
      throw Error(ErrorKind::InvalidConfig, "unknown variant '" + name + "'");
    }
    return c;
  }
};

struct ModelOutput {
  torch::Tensor rec_logits;  // B x T x 69
  torch::Tensor seg_logits;  // B x 69 x 32 x 128
  torch::Tensor control;     // B x 20 x 2
  torch::Tensor rectified;   // B x 3 x 32 x 128
  torch::Tensor feature;     // F
  torch::Tensor canonical;   // F_c
  torch::Tensor refined;     // F_r
};

/// Rectifier -> backbone -> glyph segmentation -> fusion -> decoder.
struct CamModelImpl : nn::Module {
  explicit CamModelImpl(ModelConfig cfg = {}) : config(cfg) {
    const int64_t c = cfg.backbone.dims[3];
    rectifier = register_module("rectifier", Rectifier());
    backbone = register_module("backbone", Backbone(cfg.backbone));
    seg = register_module("seg", GlyphSeg(c));
    fusion = register_module("fusion", Fusion(c, cfg.fusion));
    decoder = register_module("decoder", Decoder(c, cfg.decoder));
  }

  /// Everything up to F_r. images: B x 3 x 64 x 256 in [0, 1].
  ModelOutput encode(const torch::Tensor& images) {
    ModelOutput out;
    std::tie(out.rectified, out.control) = rectifier(images);
    out.feature = backbone((out.rectified - 0.5) / 0.5);
    auto s = seg(out.feature);
    out.seg_logits = s.logits;
    out.canonical = s.canonical;
    out.refined = fusion(out.feature, out.canonical);
    return out;
  }

  ModelOutput forward(const torch::Tensor& images, const torch::Tensor& targets) {
    auto out = encode(images);
    out.rec_logits = decoder(out.refined, targets);
    return out;
  }

  std::vector<std::string> recognize(const torch::Tensor& images) {
    torch::NoGradGuard guard;
    return decoder->greedy(encode(images).refined);
  }

  int64_t parameter_count() const {
    int64_t n = 0;
    for (const auto& p : parameters()) n += p.numel();
    return n;
  }

  ModelConfig config;
  Rectifier rectifier{nullptr};
  Backbone backbone{nullptr};
  GlyphSeg seg{nullptr};
  Fusion fusion{nullptr};
  Decoder decoder{nullptr};
};
TORCH_MODULE(CamModel);

}  // namespace cam
