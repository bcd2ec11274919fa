#pragma once

#include <torch/torch.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>
#include <vector>

#include "cam/attention.hpp"
#include "cam/error.hpp"
#include "cam/vocab.hpp"

namespace cam {

namespace nn = torch::nn;

struct DecoderConfig {
  int64_t layers = 2;
  int64_t embed_dim = 128;
  int64_t heads = 8;
  int64_t ffn_expansion = 4;
  int64_t max_length = kMaxLabelLength;  // characters, EOS excluded
};

/// Sinusoidal position codes, n x dim.
inline torch::Tensor sinusoidal_positions(int64_t n, int64_t dim, torch::TensorOptions opts = torch::kFloat32) {
  auto pos = torch::arange(n, torch::kFloat64).unsqueeze(1);
  auto i = torch::arange(0, dim, 2, torch::kFloat64);
  auto freq = torch::exp(-std::log(10000.0) * i / static_cast<double>(dim));
  auto pe = torch::zeros({n, dim}, torch::kFloat64);
  pe.slice(1, 0, dim, 2).copy_(torch::sin(pos * freq));
  pe.slice(1, 1, dim, 2).copy_(torch::cos(pos * freq.slice(0, 0, dim / 2)));
  return pe.to(opts);
}

/// Boolean T x T mask, true where position t may attend to s (s <= t).
inline torch::Tensor causal_mask(int64_t t, torch::Device device = torch::kCPU) {
  return torch::ones({t, t}, torch::TensorOptions().dtype(torch::kBool).device(device)).tril();
}

/// Pre-norm decoder layer: masked self-attention, cross-attention over the
/// visual memory, feed-forward.
struct DecoderLayerImpl : nn::Module {
  explicit DecoderLayerImpl(const DecoderConfig& c) {
    norm1 = register_module("norm1", nn::LayerNorm(nn::LayerNormOptions({c.embed_dim})));
    self_attn = register_module("self_attn", MultiHeadAttention(c.embed_dim, c.heads));
    norm2 = register_module("norm2", nn::LayerNorm(nn::LayerNormOptions({c.embed_dim})));
    cross_attn = register_module("cross_attn", MultiHeadAttention(c.embed_dim, c.heads));
    norm3 = register_module("norm3", nn::LayerNorm(nn::LayerNormOptions({c.embed_dim})));
    ffn = register_module("ffn", nn::Sequential(nn::Linear(c.embed_dim, c.ffn_expansion * c.embed_dim),
                                                nn::Functional(torch::gelu, "none"),
                                                nn::Linear(c.ffn_expansion * c.embed_dim, c.embed_dim)));
  }

  torch::Tensor forward(torch::Tensor x, const torch::Tensor& memory, const torch::Tensor& mask) {
    auto h = norm1(x);
    x = x + self_attn(h, h, mask);
    x = x + cross_attn(norm2(x), memory);
    return x + ffn->forward(norm3(x));
  }

  struct Cache {
    torch::Tensor self_k, self_v;    // grows one step at a time
    torch::Tensor cross_k, cross_v;  // fixed per image
  };

  /// One decoding step for x (B x 1 x D) using and extending the cache.
  torch::Tensor step(torch::Tensor x, Cache& cache) {
    auto h = norm1(x);
    auto k = self_attn->project_keys(h), v = self_attn->project_values(h);
    cache.self_k = cache.self_k.defined() ? torch::cat({cache.self_k, k}, 2) : k;
    cache.self_v = cache.self_v.defined() ? torch::cat({cache.self_v, v}, 2) : v;
    x = x + self_attn->attend(h, cache.self_k, cache.self_v);
    x = x + cross_attn->attend(norm2(x), cache.cross_k, cache.cross_v);
    return x + ffn->forward(norm3(x));
  }

  nn::LayerNorm norm1{nullptr}, norm2{nullptr}, norm3{nullptr};
  MultiHeadAttention self_attn{nullptr}, cross_attn{nullptr};
  nn::Sequential ffn{nullptr};
};
TORCH_MODULE(DecoderLayer);

/// Autoregressive transformer decoder over the refined visual feature.
/// Memory tokens are the row-major flattening of F_r, linearly projected.
struct DecoderImpl : nn::Module {
  DecoderImpl(int64_t feature_channels, DecoderConfig cfg) : config(cfg) {
    memory_proj = register_module("memory_proj", nn::Linear(feature_channels, cfg.embed_dim));
    embedding = register_module("embedding", nn::Embedding(CharVocab::kNumEmbeddings, cfg.embed_dim));
    for (int64_t i = 0; i < cfg.layers; ++i) layers->push_back(DecoderLayer(cfg));
    register_module("layers", layers);
    out_norm = register_module("out_norm", nn::LayerNorm(nn::LayerNormOptions({cfg.embed_dim})));
    classifier = register_module("classifier", nn::Linear(cfg.embed_dim, CharVocab::kNumClasses));
  }

  torch::Tensor memory(const torch::Tensor& fr) {
    auto tokens = memory_proj(to_tokens(fr));
    return tokens + sinusoidal_positions(tokens.size(1), config.embed_dim, tokens.options());
  }

  torch::Tensor embed(const torch::Tensor& tokens, int64_t offset) {
    auto e = embedding(tokens);
    auto pe = sinusoidal_positions(offset + tokens.size(1), config.embed_dim, e.options()).slice(0, offset);
    return e + pe;
  }

  /// Teacher-forced logits B x T x 69 for targets B x T (ending in EOS,
  /// right-padded with anything). Input at step t is BOS for t = 0, else
  /// target t - 1.
  torch::Tensor forward(const torch::Tensor& fr, const torch::Tensor& targets) {
    const int64_t T = targets.size(1);
    if (T > config.max_length + 1) {
      throw Error(ErrorKind::SequenceTooLong, "target length " + std::to_string(T) + " exceeds " +
                                                  std::to_string(config.max_length + 1));
    }
    auto bos = torch::full({targets.size(0), 1}, CharVocab::kBos, targets.options());
    auto inputs = torch::cat({bos, targets.slice(1, 0, T - 1)}, 1);
    auto mem = memory(fr);
    auto x = embed(inputs, 0);
    auto mask = causal_mask(T, x.device());
    for (const auto& layer : *layers) x = layer->as<DecoderLayer>()->forward(x, mem, mask);
    return classifier(out_norm(x));
  }

  std::vector<DecoderLayerImpl::Cache> start(const torch::Tensor& fr) {
    auto mem = memory(fr);
    std::vector<DecoderLayerImpl::Cache> caches(layers->size());
    for (size_t i = 0; i < layers->size(); ++i) {
      auto* l = layers[i]->as<DecoderLayer>();
      caches[i].cross_k = l->cross_attn->project_keys(mem);
      caches[i].cross_v = l->cross_attn->project_values(mem);
    }
    return caches;
  }

  /// Logits B x 69 for the token (B) at position `pos`, extending caches.
  torch::Tensor step(const torch::Tensor& token, int64_t pos, std::vector<DecoderLayerImpl::Cache>& caches) {
    auto x = embed(token.view({-1, 1}), pos);
    for (size_t i = 0; i < layers->size(); ++i) x = layers[i]->as<DecoderLayer>()->step(x, caches[i]);
    return classifier(out_norm(x)).squeeze(1);
  }

  /// Teacher-forced logits computed one cached step at a time.
  torch::Tensor incremental_logits(const torch::Tensor& fr, const torch::Tensor& targets) {
    auto caches = start(fr);
    std::vector<torch::Tensor> out;
    auto token = torch::full({targets.size(0)}, CharVocab::kBos, targets.options());
    for (int64_t t = 0; t < targets.size(1); ++t) {
      out.push_back(step(token, t, caches));
      token = targets.select(1, t);
    }
    return torch::stack(out, 1);
  }

  /// Greedy decoding; each sample stops at EOS or after max_length characters.
  std::vector<std::string> greedy(const torch::Tensor& fr, const CharVocab& vocab = default_vocab()) {
    torch::NoGradGuard guard;
    const int64_t B = fr.size(0);
    auto caches = start(fr);
    auto token = torch::full({B}, CharVocab::kBos, torch::TensorOptions().dtype(torch::kLong).device(fr.device()));
    std::vector<std::string> out(static_cast<size_t>(B));
    std::vector<bool> done(static_cast<size_t>(B), false);
    for (int64_t t = 0; t < config.max_length + 1; ++t) {
      auto next = step(token, t, caches).argmax(-1);
      auto host = next.to(torch::kCPU);
      bool all_done = true;
      for (int64_t b = 0; b < B; ++b) {
        if (done[b]) continue;
        int64_t c = host[b].item<int64_t>();
        if (c == CharVocab::kEos || static_cast<int64_t>(out[b].size()) == config.max_length) {
          done[b] = true;
        } else {
          out[b].push_back(vocab.char_of(static_cast<int>(c)));
          all_done = false;
        }
      }
      if (all_done) break;
      token = next;
    }
    return out;
  }

  DecoderConfig config;
  nn::Linear memory_proj{nullptr};
  nn::Embedding embedding{nullptr};
  nn::ModuleList layers;
  nn::LayerNorm out_norm{nullptr};
  nn::Linear classifier{nullptr};
};
TORCH_MODULE(Decoder);

/// Case-insensitive exact-match rate.
inline double word_accuracy(const std::vector<std::string>& preds, const std::vector<std::string>& gts) {
  if (preds.size() != gts.size()) {
    throw Error(ErrorKind::LengthMismatch, std::to_string(preds.size()) + " predictions vs " +
                                               std::to_string(gts.size()) + " ground truths");
  }
  if (preds.empty()) return 0.0;
  auto lower = [](std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
  };
  size_t hits = 0;
  for (size_t i = 0; i < preds.size(); ++i) hits += lower(preds[i]) == lower(gts[i]);
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

}  // namespace cam
