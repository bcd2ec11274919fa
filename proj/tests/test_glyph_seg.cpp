#include "cam/glyph_seg.hpp"
#include "cam/gradcheck.hpp"
#include "support.hpp"

using namespace cam;
using cam::test::max_abs_diff;

namespace {

void zero_biases(torch::nn::Module& m) {
  torch::NoGradGuard g;
  for (auto& p : m.named_parameters()) {
    const auto& name = p.key();
    if (name.size() >= 4 && name.compare(name.size() - 4, 4, "bias") == 0) p.value().zero_();
  }
}

}  // namespace

TEST(GlyphSeg, StageShapes) {
  GlyphSeg seg(128);
  auto st = seg->up_path(torch::randn({2, 128, 2, 32}));
  const std::vector<std::vector<int64_t>> expected{
      {2, 128, 2, 32}, {2, 64, 4, 32}, {2, 32, 8, 32}, {2, 16, 16, 64}};
  for (int i = 0; i < 4; ++i) EXPECT_EQ(st.s[i].sizes(), expected[i]) << "stage " << i + 1;
}

TEST(GlyphSeg, OutputShapes) {
  GlyphSeg seg(192);
  auto out = seg(torch::randn({3, 192, 2, 32}));
  EXPECT_EQ(out.logits.sizes(), (std::vector<int64_t>{3, 69, 32, 128}));
  EXPECT_EQ(out.canonical.sizes(), (std::vector<int64_t>{3, 192, 2, 32}));
}

TEST(GlyphSeg, ClassAgnosticHead) {
  GlyphSeg seg(64, 2);
  EXPECT_EQ(seg(torch::randn({1, 64, 2, 32})).logits.sizes(), (std::vector<int64_t>{1, 2, 32, 128}));
}

TEST(GlyphSeg, ZeroClassifierGivesBias) {
  GlyphSeg seg(64);
  auto bias = torch::randn({69});
  {
    torch::NoGradGuard g;
    seg->classifier->weight.zero_();
    seg->classifier->bias.copy_(bias.repeat({4}));
  }
  auto logits = seg(torch::randn({2, 64, 2, 32})).logits;
  EXPECT_EQ(max_abs_diff(logits, bias.view({1, 69, 1, 1}).expand_as(logits)), 0.0);
}

TEST(GlyphSeg, PatchRearrangement) {
  // Bias entry k = (2a + b) * K + c must land on class c, row 2i + a, column 2j + b.
  const int64_t K = 69;
  GlyphSeg seg(64);
  {
    torch::NoGradGuard g;
    seg->classifier->weight.zero_();
    seg->classifier->bias.copy_(torch::arange(4 * K, torch::kFloat32));
  }
  auto logits = seg->logits(torch::randn({1, 8, 3, 5}));
  ASSERT_EQ(logits.sizes(), (std::vector<int64_t>{1, K, 6, 10}));
  auto L = logits.accessor<float, 4>();
  for (int64_t c = 0; c < K; ++c)
    for (int64_t y = 0; y < 6; ++y)
      for (int64_t x = 0; x < 10; ++x) ASSERT_EQ(L[0][c][y][x], float((2 * (y % 2) + x % 2) * K + c));
}

TEST(GlyphSeg, PatchRearrangementUsesOwnPosition) {
  // Distinct features per position: logits at (2i + a, 2j + b) depend only on s4[i, j].
  torch::manual_seed(0);
  GlyphSeg seg(64);
  auto s4 = torch::randn({1, 8, 3, 5});
  auto logits = seg->logits(s4);
  auto direct = seg->classifier(s4[0].permute({1, 2, 0}));  // 3 x 5 x 4K
  for (int64_t i = 0; i < 3; ++i)
    for (int64_t j = 0; j < 5; ++j)
      for (int64_t a = 0; a < 2; ++a)
        for (int64_t b = 0; b < 2; ++b) {
          auto expected = direct[i][j].slice(0, (2 * a + b) * 69, (2 * a + b + 1) * 69);
          EXPECT_LE(max_abs_diff(logits[0].select(1, 2 * i + a).select(1, 2 * j + b), expected), 1e-6);
        }
}

TEST(GlyphSeg, RejectsWrongChannels) {
  GlyphSeg seg(64);
  EXPECT_CAM_ERROR(seg(torch::randn({1, 32, 2, 32})), ErrorKind::ShapeMismatch);
  EXPECT_CAM_ERROR(GlyphSeg{60}, ErrorKind::InvalidConfig);
}

TEST(GlyphSeg, MisalignedSkipThrows) {
  GlyphSeg seg(64);
  auto st = seg->up_path(torch::randn({1, 64, 2, 32}));
  st.s[1] = torch::randn({1, 32, 4, 30});
  EXPECT_CAM_ERROR(seg->canonical_feature(st), ErrorKind::ShapeMismatch);
}

TEST(GlyphSeg, ZeroInputWithZeroBiases) {
  GlyphSeg seg(64);
  seg->eval();
  zero_biases(*seg);
  auto out = seg(torch::zeros({1, 64, 2, 32}));
  EXPECT_EQ(out.logits.abs().max().item<float>(), 0.0f);
  EXPECT_EQ(out.canonical.abs().max().item<float>(), 0.0f);
}

TEST(GlyphSeg, PositivelyHomogeneousWithZeroBiases) {
  torch::manual_seed(1);
  GlyphSeg seg(64);
  seg->eval();
  zero_biases(*seg);
  auto x = torch::randn({1, 64, 2, 32});
  auto a = seg(x), b = seg(3 * x);
  EXPECT_LE(max_abs_diff(b.logits, 3 * a.logits), 1e-4 * (1 + a.logits.abs().max().item<float>()));
  EXPECT_LE(max_abs_diff(b.canonical, 3 * a.canonical), 1e-4 * (1 + a.canonical.abs().max().item<float>()));
}

TEST(GlyphSeg, SoftmaxSumsToOne) {
  GlyphSeg seg(64);
  auto p = torch::softmax(seg(torch::randn({2, 64, 2, 32})).logits, 1).sum(1);
  EXPECT_LE(max_abs_diff(p, torch::ones_like(p)), 1e-5);
}

TEST(GlyphSeg, GradientCheck) {
  auto r = gradcheck_module("glyph_seg");
  EXPECT_TRUE(r.passed) << r.max_rel_err << " " << r.worst;
  EXPECT_GE(r.checked, 100);
}
