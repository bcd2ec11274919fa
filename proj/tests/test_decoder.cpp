#include "cam/decoder.hpp"
#include "cam/gradcheck.hpp"
#include "cam/objective.hpp"
#include "support.hpp"

using namespace cam;
using cam::test::max_abs_diff;

namespace {

DecoderConfig small_config() {
  DecoderConfig c;
  c.embed_dim = 32;
  c.heads = 4;
  return c;
}

torch::Tensor random_targets(int64_t B, int64_t T) {
  return torch::randint(1, CharVocab::kNumClasses, {B, T}, torch::kLong);
}

}  // namespace

TEST(Decoder, LogitShape) {
  Decoder dec(64, small_config());
  auto logits = dec(torch::randn({3, 64, 2, 32}), random_targets(3, 7));
  EXPECT_EQ(logits.sizes(), (std::vector<int64_t>{3, 7, 69}));
}

TEST(Decoder, Causal) {
  // Logits at step t depend on targets before t only.
  torch::manual_seed(0);
  Decoder dec(64, small_config());
  dec->eval();
  auto fr = torch::randn({2, 64, 2, 32});
  auto t1 = random_targets(2, 10);
  auto t2 = t1.clone();
  t2.slice(1, 4).copy_(random_targets(2, 6));
  auto a = dec(fr, t1), b = dec(fr, t2);
  EXPECT_LE(max_abs_diff(a.slice(1, 0, 5), b.slice(1, 0, 5)), 1e-6);
  EXPECT_GT(max_abs_diff(a.slice(1, 5), b.slice(1, 5)), 1e-4);
}

TEST(Decoder, ParallelMatchesIncremental) {
  torch::manual_seed(1);
  Decoder dec(64, small_config());
  dec->eval();
  auto fr = torch::randn({2, 64, 2, 32});
  auto targets = random_targets(2, 33);
  EXPECT_LE(max_abs_diff(dec(fr, targets), dec->incremental_logits(fr, targets)), 1e-5);
}

TEST(Decoder, SequenceTooLong) {
  Decoder dec(64, small_config());
  EXPECT_CAM_ERROR(dec(torch::randn({1, 64, 2, 32}), random_targets(1, 34)), ErrorKind::SequenceTooLong);
}

TEST(Decoder, GreedyStopsAtImmediateEos) {
  Decoder dec(64, small_config());
  {
    torch::NoGradGuard g;
    dec->classifier->weight.zero_();
    dec->classifier->bias.zero_();
    dec->classifier->bias[CharVocab::kEos] = 1.0;
  }
  auto out = dec->greedy(torch::randn({3, 64, 2, 32}));
  ASSERT_EQ(out.size(), 3u);
  for (const auto& s : out) EXPECT_EQ(s, "");
}

TEST(Decoder, GreedyCapsLengthWithoutEos) {
  Decoder dec(64, small_config());
  const int a = default_vocab().index_of('a');
  {
    torch::NoGradGuard g;
    dec->classifier->weight.zero_();
    dec->classifier->bias.zero_();
    dec->classifier->bias[a] = 1.0;
  }
  auto out = dec->greedy(torch::randn({2, 64, 2, 32}));
  for (const auto& s : out) EXPECT_EQ(s, std::string(32, 'a'));
}

TEST(Decoder, SoftmaxSumsToOne) {
  Decoder dec(64, small_config());
  auto p = torch::softmax(dec(torch::randn({2, 64, 2, 32}), random_targets(2, 5)), -1).sum(-1);
  EXPECT_LE(max_abs_diff(p, torch::ones_like(p)), 1e-5);
}

TEST(Decoder, OverfitsSingleWord) {
  torch::manual_seed(2);
  Decoder dec(64, small_config());
  auto fr = torch::randn({1, 64, 2, 32});
  auto ids = default_vocab().encode("cat");
  ids.push_back(CharVocab::kEos);
  auto targets = torch::tensor(ids, torch::kLong).unsqueeze(0);
  torch::optim::Adam opt(dec->parameters(), torch::optim::AdamOptions(1e-3));
  for (int step = 0; step < 500; ++step) {
    auto loss = recognition_loss(dec(fr, targets), targets);
    opt.zero_grad();
    loss.backward();
    opt.step();
  }
  dec->eval();
  EXPECT_EQ(dec->greedy(fr), std::vector<std::string>{"cat"});
}

TEST(WordAccuracy, Examples) {
  EXPECT_DOUBLE_EQ(word_accuracy({"cat", "dog"}, {"cat", "dog"}), 1.0);
  EXPECT_DOUBLE_EQ(word_accuracy({"cat", "dog"}, {"cat", "cow"}), 0.5);
  EXPECT_DOUBLE_EQ(word_accuracy({"CAT"}, {"cat"}), 1.0);
  EXPECT_DOUBLE_EQ(word_accuracy({"ca"}, {"cat"}), 0.0);
  EXPECT_DOUBLE_EQ(word_accuracy({""}, {""}), 1.0);
  EXPECT_DOUBLE_EQ(word_accuracy({}, {}), 0.0);
}

TEST(WordAccuracy, LengthMismatch) {
  EXPECT_CAM_ERROR(word_accuracy({"a"}, {"a", "b"}), ErrorKind::LengthMismatch);
}

TEST(Decoder, GradientCheck) {
  auto r = gradcheck_module("decoder");
  EXPECT_TRUE(r.passed) << r.max_rel_err << " " << r.worst;
  EXPECT_GE(r.checked, 100);
}
