#pragma once

#include <torch/torch.h>

#include "cam/error.hpp"

namespace cam {

/// Mean per-sequence NLL. logits B x T x K, targets B x T, lengths B (tokens
/// counted per sequence, EOS included). Positions at or past a sequence's
/// length are ignored. Averaged per sequence first, then over the batch.
inline torch::Tensor recognition_loss(const torch::Tensor& logits, const torch::Tensor& targets,
                                      const torch::Tensor& lengths) {
  if (logits.dim() != 3 || targets.dim() != 2 || logits.size(0) != targets.size(0) ||
      logits.size(1) != targets.size(1) || lengths.numel() != targets.size(0)) {
    throw Error(ErrorKind::LengthMismatch, "logits B x T x K, targets B x T and lengths B must agree");
  }
  const int64_t T = targets.size(1);
  auto logp = torch::log_softmax(logits, -1).gather(2, targets.unsqueeze(2)).squeeze(2);  // B x T
  auto len = lengths.to(logp.scalar_type());
  auto valid = torch::arange(T, lengths.options()).unsqueeze(0) < lengths.unsqueeze(1);
  auto per_seq = -(logp * valid.to(logp.scalar_type())).sum(1) / len;
  return per_seq.mean();
}

/// Convenience overload: every target position counts.
inline torch::Tensor recognition_loss(const torch::Tensor& logits, const torch::Tensor& targets) {
  auto lengths = torch::full({targets.size(0)}, targets.size(1), torch::TensorOptions().dtype(torch::kLong));
  return recognition_loss(logits, targets, lengths);
}

/// Class-balanced pixel cross-entropy. logits B x K x H x W, gt B x H x W
/// (class indices), weights B x H x W. Per sample -(1/HW) sum w log p_gt,
/// then mean over the batch.
inline torch::Tensor segmentation_loss(const torch::Tensor& logits, const torch::Tensor& gt,
                                       const torch::Tensor& weights) {
  if (logits.dim() != 4 || gt.dim() != 3 || gt.sizes() != weights.sizes() || logits.size(0) != gt.size(0) ||
      logits.size(2) != gt.size(1) || logits.size(3) != gt.size(2)) {
    throw Error(ErrorKind::ShapeMismatch, "segmentation loss expects logits BxKxHxW, gt/weights BxHxW");
  }
  auto logp = torch::log_softmax(logits, 1).gather(1, gt.to(torch::kLong).unsqueeze(1)).squeeze(1);
  return -(weights.to(logp.scalar_type()) * logp).mean({1, 2}).mean();
}

struct LossReport {
  torch::Tensor total, rec, seg;
  double lambda = 1.0;

  double total_value() const { return total.item<double>(); }
  double rec_value() const { return rec.item<double>(); }
  double seg_value() const { return seg.item<double>(); }
};

/// L = L_rec + lambda * L_seg.
inline LossReport total_loss(const torch::Tensor& rec, const torch::Tensor& seg, double lambda = 1.0) {
  return {rec + lambda * seg, rec, seg, lambda};
}

}  // namespace cam
