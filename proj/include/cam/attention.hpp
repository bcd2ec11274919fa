#pragma once

#include <torch/torch.h>

#include <cmath>
#include <limits>
#include <optional>

#include "cam/error.hpp"

namespace cam {

namespace nn = torch::nn;

/// Multi-head scaled dot-product attention with separate query/key/value and
/// output projections. Tokens are B x N x dim.
struct MultiHeadAttentionImpl : nn::Module {
  MultiHeadAttentionImpl(int64_t dim, int64_t heads) : dim_(dim), heads_(heads) {
    if (heads <= 0 || dim % heads != 0) {
      throw Error(ErrorKind::InvalidConfig, "attention dim " + std::to_string(dim) + " not divisible by " +
                                                std::to_string(heads) + " heads");
    }
    wq = register_module("wq", nn::Linear(dim, dim));
    wk = register_module("wk", nn::Linear(dim, dim));
    wv = register_module("wv", nn::Linear(dim, dim));
    wo = register_module("wo", nn::Linear(dim, dim));
  }

  int64_t head_dim() const { return dim_ / heads_; }

  // B x N x dim -> B x heads x N x d
  torch::Tensor split(const torch::Tensor& x) const {
    return x.view({x.size(0), x.size(1), heads_, head_dim()}).transpose(1, 2);
  }

  torch::Tensor project_keys(const torch::Tensor& x) { return split(wk(x)); }
  torch::Tensor project_values(const torch::Tensor& x) { return split(wv(x)); }

  /// Attention over pre-projected keys/values (B x heads x M x d). `mask` is
  /// boolean N x M, true where attention is allowed. If `weights_out` is
  /// given it receives the B x heads x N x M attention weights.
  torch::Tensor attend(const torch::Tensor& query, const torch::Tensor& k, const torch::Tensor& v,
                       const std::optional<torch::Tensor>& mask = std::nullopt,
                       torch::Tensor* weights_out = nullptr) {
    if (query.dim() != 3 || query.size(2) != dim_) {
      throw Error(ErrorKind::ShapeMismatch, "attention queries must be B x N x " + std::to_string(dim_));
    }
    auto q = split(wq(query));
    auto scores = q.matmul(k.transpose(-2, -1)) / std::sqrt(static_cast<double>(head_dim()));
    if (mask) scores = scores.masked_fill(mask->logical_not(), -std::numeric_limits<double>::infinity());
    auto weights = torch::softmax(scores, -1);
    if (weights_out) *weights_out = weights;
    auto out = weights.matmul(v).transpose(1, 2).reshape({query.size(0), query.size(1), dim_});
    return wo(out);
  }

  torch::Tensor forward(const torch::Tensor& query, const torch::Tensor& key_value,
                        const std::optional<torch::Tensor>& mask = std::nullopt, torch::Tensor* weights_out = nullptr) {
    if (key_value.dim() != 3 || key_value.size(2) != dim_ || key_value.size(0) != query.size(0)) {
      throw Error(ErrorKind::ShapeMismatch, "attention keys must be B x M x " + std::to_string(dim_));
    }
    return attend(query, project_keys(key_value), project_values(key_value), mask, weights_out);
  }

  int64_t dim_, heads_;
  nn::Linear wq{nullptr}, wk{nullptr}, wv{nullptr}, wo{nullptr};
};
TORCH_MODULE(MultiHeadAttention);

/// B x C x H x W -> B x (H*W) x C, row-major over positions.
inline torch::Tensor to_tokens(const torch::Tensor& x) { return x.flatten(2).transpose(1, 2); }

/// B x (H*W) x C -> B x C x H x W.
inline torch::Tensor from_tokens(const torch::Tensor& t, int64_t h, int64_t w) {
  return t.transpose(1, 2).reshape({t.size(0), t.size(2), h, w});
}

}  // namespace cam
