#include "cam/dataset.hpp"
#include "cam/gradcheck.hpp"
#include "cam/objective.hpp"
#include "support.hpp"

using namespace cam;

namespace {

const auto f64 = torch::TensorOptions().dtype(torch::kFloat64);

}  // namespace

TEST(RecognitionLoss, UniformLogitsGiveLogK) {
  auto logits = torch::zeros({4, 9, 69}, f64);
  auto targets = torch::randint(0, 69, {4, 9}, torch::kLong);
  auto lengths = torch::tensor({9, 3, 1, 6}, torch::kLong);
  EXPECT_NEAR(recognition_loss(logits, targets, lengths).item<double>(), std::log(69.0), 1e-6);
}

TEST(RecognitionLoss, PerfectLogitsGiveZero) {
  auto targets = torch::randint(0, 69, {3, 5}, torch::kLong);
  auto logits = 1e3 * torch::one_hot(targets, 69).to(torch::kFloat64);
  EXPECT_NEAR(recognition_loss(logits, targets).item<double>(), 0.0, 1e-9);
}

TEST(RecognitionLoss, MatchesScalarOracle) {
  torch::manual_seed(0);
  const int64_t B = 3, T = 6, K = 69;
  auto logits = torch::randn({B, T, K}, f64);
  auto targets = torch::randint(0, K, {B, T}, torch::kLong);
  std::vector<int64_t> lens{6, 2, 4};
  double expected = 0;
  for (int64_t b = 0; b < B; ++b) {
    double seq = 0;
    for (int64_t t = 0; t < lens[b]; ++t) {
      double mx = -1e300, z = 0;
      for (int64_t k = 0; k < K; ++k) mx = std::max(mx, logits[b][t][k].item<double>());
      for (int64_t k = 0; k < K; ++k) z += std::exp(logits[b][t][k].item<double>() - mx);
      seq -= logits[b][t][targets[b][t].item<int64_t>()].item<double>() - mx - std::log(z);
    }
    expected += seq / lens[b] / B;
  }
  EXPECT_NEAR(recognition_loss(logits, targets, torch::tensor(lens)).item<double>(), expected, 1e-12);
}

TEST(RecognitionLoss, IgnoresPadding) {
  torch::manual_seed(1);
  auto logits = torch::randn({1, 8, 69}, f64);
  auto targets = torch::randint(0, 69, {1, 8}, torch::kLong);
  auto lengths = torch::tensor({4}, torch::kLong);
  auto a = recognition_loss(logits, targets, lengths);
  logits.slice(1, 4).normal_();
  targets.slice(1, 4).random_(0, 69);
  EXPECT_EQ(a.item<double>(), recognition_loss(logits, targets, lengths).item<double>());
}

TEST(RecognitionLoss, ShapeErrors) {
  EXPECT_CAM_ERROR(recognition_loss(torch::zeros({2, 3, 69}), torch::zeros({2, 4}, torch::kLong)),
                   ErrorKind::LengthMismatch);
}

TEST(SegmentationLoss, HandExample) {
  // 2x2 mask with three background pixels and one glyph; uniform logits.
  auto gt = torch::tensor({0, 0, 0, 5}, torch::kLong).view({1, 2, 2});
  auto w = compute_pixel_weights(gt, torch::kFloat64);
  auto logits = torch::zeros({1, 69, 2, 2}, f64);
  const double expected = 0.25 * (3 + 1 + 1 + 1) * std::log(69.0);
  EXPECT_NEAR(segmentation_loss(logits, gt, w).item<double>(), expected, 1e-6);
}

TEST(SegmentationLoss, PerfectLogitsGiveZero) {
  auto gt = torch::randint(0, 69, {2, 4, 6}, torch::kLong);
  auto logits = 1e3 * torch::one_hot(gt, 69).permute({0, 3, 1, 2}).to(torch::kFloat64);
  EXPECT_NEAR(segmentation_loss(logits, gt, torch::ones({2, 4, 6}, f64)).item<double>(), 0.0, 1e-9);
}

TEST(SegmentationLoss, UnitWeightsMatchCrossEntropy) {
  torch::manual_seed(2);
  auto logits = torch::randn({2, 69, 4, 6}, f64);
  auto gt = torch::randint(0, 69, {2, 4, 6}, torch::kLong);
  auto ref = torch::nll_loss2d(torch::log_softmax(logits, 1), gt);
  EXPECT_NEAR(segmentation_loss(logits, gt, torch::ones({2, 4, 6}, f64)).item<double>(), ref.item<double>(), 1e-12);
}

TEST(SegmentationLoss, PermutationEquivariant) {
  torch::manual_seed(3);
  auto logits = torch::randn({1, 69, 4, 6}, f64);
  auto gt = torch::randint(0, 69, {1, 4, 6}, torch::kLong);
  auto w = torch::rand({1, 4, 6}, f64);
  auto perm = torch::randperm(24);
  auto pl = logits.view({1, 69, 24}).index_select(2, perm).view({1, 69, 4, 6});
  auto pg = gt.view({1, 24}).index_select(1, perm).view({1, 4, 6});
  auto pw = w.view({1, 24}).index_select(1, perm).view({1, 4, 6});
  EXPECT_NEAR(segmentation_loss(logits, gt, w).item<double>(), segmentation_loss(pl, pg, pw).item<double>(), 1e-9);
}

TEST(SegmentationLoss, ShapeErrors) {
  EXPECT_CAM_ERROR(segmentation_loss(torch::zeros({1, 69, 4, 4}), torch::zeros({1, 4, 4}, torch::kLong),
                                     torch::zeros({1, 4, 3})),
                   ErrorKind::ShapeMismatch);
}

TEST(TotalLoss, Examples) {
  auto one = torch::tensor(1.0, f64), two = torch::tensor(2.0, f64), zero = torch::tensor(0.0, f64);
  EXPECT_EQ(total_loss(one, two).total_value(), 3.0);
  EXPECT_EQ(total_loss(one, two, 0.0).total_value(), 1.0);
  EXPECT_EQ(total_loss(zero, two, 1.0).total_value(), 2.0);
  EXPECT_EQ(total_loss(one, two, 0.5).total_value(), 2.0);
}

TEST(TotalLoss, ExactSumWithUnitLambda) {
  torch::manual_seed(4);
  for (int rep = 0; rep < 50; ++rep) {
    auto rec = torch::rand({}, f64) * 5, seg = torch::rand({}, f64) * 5;
    auto r = total_loss(rec, seg, 1.0);
    EXPECT_EQ(r.total_value(), r.rec_value() + 1.0 * r.seg_value());
  }
}

TEST(Losses, NonNegative) {
  torch::manual_seed(5);
  for (int rep = 0; rep < 20; ++rep) {
    auto rl = recognition_loss(torch::randn({2, 5, 69}) * 5, torch::randint(0, 69, {2, 5}, torch::kLong));
    auto gt = torch::randint(0, 69, {1, 4, 4}, torch::kLong);
    auto sl = segmentation_loss(torch::randn({1, 69, 4, 4}) * 5, gt, compute_pixel_weights(gt));
    EXPECT_GE(rl.item<double>(), 0.0);
    EXPECT_GE(sl.item<double>(), 0.0);
  }
}

TEST(Objective, GradientCheck) {
  auto r = gradcheck_module("objective");
  EXPECT_TRUE(r.passed) << r.max_rel_err << " " << r.worst;
  EXPECT_GE(r.checked, 100);
}
