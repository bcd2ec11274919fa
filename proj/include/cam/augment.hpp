#pragma once

#include <torch/torch.h>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include <random>

#include "cam/render.hpp"

namespace cam {

struct AugmentOp {
  bool enabled = false;
  double probability = 0.5;
  double magnitude = 0.0;
};

/// Training-time image augmentations. Magnitudes:
///   perspective  max corner displacement as a fraction of the image size
///   affine       max shear (and scale deviation = magnitude / 2)
///   blur         max Gaussian sigma in pixels
///   noise        Gaussian noise sigma (intensity units)
///   rotation     max absolute angle in degrees
struct AugmentConfig {
  AugmentOp perspective{false, 0.5, 0.1};
  AugmentOp affine{false, 0.5, 0.15};
  AugmentOp blur{false, 0.5, 1.0};
  AugmentOp noise{false, 0.5, 0.05};
  AugmentOp rotation{false, 0.5, 5.0};

  bool any() const {
    return perspective.enabled || affine.enabled || blur.enabled || noise.enabled || rotation.enabled;
  }
};

/// Rotates about the image centre with bilinear interpolation and replicated borders.
inline cv::Mat rotate_image(const cv::Mat& img, double angle_deg) {
  if (angle_deg == 0) return img.clone();
  cv::Point2f centre((img.cols - 1) / 2.0f, (img.rows - 1) / 2.0f);
  cv::Mat rot = cv::getRotationMatrix2D(centre, angle_deg, 1.0);
  cv::Mat out;
  cv::warpAffine(img, out, rot, img.size(), cv::INTER_LINEAR, cv::BORDER_REPLICATE);
  return out;
}

inline torch::Tensor rotate_image(const torch::Tensor& chw, double angle_deg) {
  return mat_to_tensor(rotate_image(tensor_to_mat(chw), angle_deg));
}

/// Applies each enabled augmentation independently with its probability.
/// Every random draw happens whether or not the op fires, so the rng stream
/// consumed per call is fixed by the config alone.
inline torch::Tensor augment(const torch::Tensor& image, std::mt19937_64& rng, const AugmentConfig& cfg) {
  if (!cfg.any()) return image.clone();
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  auto fires = [&](const AugmentOp& op) { return op.enabled && u01(rng) < op.probability && op.magnitude > 0; };

  cv::Mat img = tensor_to_mat(image);
  const float w = static_cast<float>(img.cols), h = static_cast<float>(img.rows);

  if (fires(cfg.perspective)) {
    const double m = cfg.perspective.magnitude;
    std::array<cv::Point2f, 4> src{cv::Point2f(0, 0), cv::Point2f(w - 1, 0), cv::Point2f(w - 1, h - 1),
                                   cv::Point2f(0, h - 1)};
    std::array<cv::Point2f, 4> dst;
    for (int i = 0; i < 4; ++i) {
      dst[i] = src[i] + cv::Point2f(static_cast<float>(uniform(-m, m) * w * 0.25),
                                    static_cast<float>(uniform(-m, m) * h));
    }
    cv::Mat p = cv::getPerspectiveTransform(src.data(), dst.data());
    cv::Mat out;
    cv::warpPerspective(img, out, p, img.size(), cv::INTER_LINEAR, cv::BORDER_REPLICATE);
    img = out;
  }
  if (fires(cfg.affine)) {
    const double m = cfg.affine.magnitude;
    double shx = uniform(-m, m), shy = uniform(-m, m) * 0.25, s = 1.0 + uniform(-m, m) * 0.5;
    double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
    cv::Mat a = (cv::Mat_<double>(2, 3) << s, s * shx, cx - s * (cx + shx * cy), s * shy, s, cy - s * (shy * cx + cy));
    cv::Mat out;
    cv::warpAffine(img, out, a, img.size(), cv::INTER_LINEAR, cv::BORDER_REPLICATE);
    img = out;
  }
  if (fires(cfg.rotation)) {
    img = rotate_image(img, uniform(-cfg.rotation.magnitude, cfg.rotation.magnitude));
  }
  if (fires(cfg.blur)) {
    double sigma = uniform(0.1, cfg.blur.magnitude);
    cv::GaussianBlur(img, img, cv::Size(0, 0), sigma, sigma, cv::BORDER_REPLICATE);
  }
  if (fires(cfg.noise)) {
    std::normal_distribution<float> n(0.f, static_cast<float>(cfg.noise.magnitude));
    for (auto it = img.begin<cv::Vec3f>(); it != img.end<cv::Vec3f>(); ++it) {
      for (int c = 0; c < 3; ++c) (*it)[c] += n(rng);
    }
  }
  return mat_to_tensor(img).clamp(0.0, 1.0);
}

}  // namespace cam
