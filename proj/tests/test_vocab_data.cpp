#include <set>

#include "cam/augment.hpp"
#include "cam/dataset.hpp"
#include "cam/render.hpp"
#include "cam/trainer.hpp"
#include "cam/vocab.hpp"
#include "support.hpp"

using namespace cam;
using cam::test::max_abs_diff;

namespace {

std::set<int> class_set(const torch::Tensor& mask) {
  auto u = std::get<0>(torch::_unique(mask.to(torch::kInt32)));
  std::set<int> out;
  for (int64_t i = 0; i < u.numel(); ++i) {
    if (int v = u[i].item<int>(); v != 0) out.insert(v);
  }
  return out;
}

std::set<int> label_classes(const std::string& label) {
  std::set<int> out;
  for (char c : label) out.insert(default_vocab().index_of(c));
  return out;
}

}  // namespace

TEST(Vocab, SizesAndIndices) {
  const auto& v = default_vocab();
  EXPECT_EQ(v.size(), 68);
  EXPECT_EQ(CharVocab::kNumClasses, 69);
  EXPECT_EQ(CharVocab::kNumEmbeddings, 70);
  EXPECT_EQ(v.eos_index(), 0);
  EXPECT_EQ(v.background_index(), 0);
  std::set<char> unique(CharVocab::kChars.begin(), CharVocab::kChars.end());
  EXPECT_EQ(unique.size(), 68u);
}

TEST(Vocab, CharacterGroups) {
  const auto chars = CharVocab::kChars;
  EXPECT_EQ(chars.substr(0, 10), "0123456789");
  EXPECT_EQ(chars.substr(10, 26), "abcdefghijklmnopqrstuvwxyz");
  std::string punct;
  for (int c = 0; c < 128; ++c) {
    if (std::ispunct(c)) punct.push_back(static_cast<char>(c));
  }
  EXPECT_EQ(punct.size(), 32u);
  EXPECT_EQ(chars.substr(36), punct);
}

TEST(Vocab, RoundTrip) {
  const auto& v = default_vocab();
  for (int i = 1; i <= 68; ++i) EXPECT_EQ(v.index_of(v.char_of(i)), i);
}

TEST(Vocab, CaseFolding) {
  const auto& v = default_vocab();
  for (char c = 'a'; c <= 'z'; ++c) {
    EXPECT_EQ(v.index_of(static_cast<char>(std::toupper(c))), v.index_of(c));
  }
  EXPECT_EQ(v.normalize("HeLLo"), "hello");
}

TEST(Vocab, Errors) {
  const auto& v = default_vocab();
  EXPECT_CAM_ERROR(v.index_of(' '), ErrorKind::UnknownCharacter);
  EXPECT_CAM_ERROR(v.index_of('\xe9'), ErrorKind::UnknownCharacter);
  EXPECT_CAM_ERROR(v.encode(std::string(33, 'a')), ErrorKind::LabelTooLong);
  EXPECT_NO_THROW(v.encode(std::string(32, 'a')));
}

TEST(Vocab, EncodeDecode) {
  const auto& v = default_vocab();
  auto codes = v.encode("Ab1!");
  ASSERT_EQ(codes.size(), 4u);
  codes.push_back(CharVocab::kEos);
  codes.push_back(5);
  EXPECT_EQ(v.decode(codes), "ab1!");
}

TEST(RenderMask, SingleCharacter) {
  auto m = render_canonical_mask("a");
  ASSERT_EQ(m.sizes(), (std::vector<int64_t>{32, 128}));
  EXPECT_EQ(m.scalar_type(), torch::kUInt8);
  EXPECT_GT((m > 0).sum().item<int64_t>(), 0);
  EXPECT_EQ(class_set(m), std::set<int>{default_vocab().index_of('a')});
}

TEST(RenderMask, TwoCharacters) {
  auto m = render_canonical_mask("ab");
  EXPECT_EQ(class_set(m), label_classes("ab"));
}

TEST(RenderMask, CaseFolding) {
  EXPECT_EQ(class_set(render_canonical_mask("AB")), class_set(render_canonical_mask("ab")));
  EXPECT_TRUE(torch::equal(render_canonical_mask("AB"), render_canonical_mask("ab")));
}

TEST(RenderMask, ClassSetEqualsLabelSetForRandomLabels) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> ch(1, 68);
  for (int len : {1, 2, 5, 10, 20, 32}) {
    for (int rep = 0; rep < 4; ++rep) {
      std::string label;
      for (int k = 0; k < len; ++k) label.push_back(default_vocab().char_of(ch(rng)));
      auto m = render_canonical_mask(label);
      EXPECT_EQ(class_set(m), label_classes(label)) << "label '" << label << "'";
      // Background is a strict majority.
      EXPECT_GT((m == 0).sum().item<int64_t>(), 32 * 128 / 2) << label;
    }
  }
}

TEST(RenderMask, LeavesMargin) {
  for (const char* label : {"w", "mmmmmmmmmmmmmmmmmmmmmmmmmmmmmmmm", "|", "hello_world"}) {
    auto m = render_canonical_mask(label);
    EXPECT_EQ(m.select(0, 0).sum().item<int64_t>(), 0) << label;
    EXPECT_EQ(m.select(0, 31).sum().item<int64_t>(), 0) << label;
    EXPECT_EQ(m.select(1, 0).sum().item<int64_t>(), 0) << label;
    EXPECT_EQ(m.select(1, 127).sum().item<int64_t>(), 0) << label;
  }
}

TEST(RenderMask, HorizontalOrder) {
  // First and last columns touched by 'a' and 'z' in "az": a is left of z.
  auto m = render_canonical_mask("az");
  auto cols = [&](int cls) { return (m == cls).any(0).nonzero().squeeze(1); };
  auto a = cols(default_vocab().index_of('a')), z = cols(default_vocab().index_of('z'));
  EXPECT_LT(a.min().item<int64_t>(), z.min().item<int64_t>());
  EXPECT_LT(a.max().item<int64_t>(), z.max().item<int64_t>());
}

TEST(RenderMask, DeterministicAndMonospacedLayout) {
  EXPECT_TRUE(torch::equal(render_canonical_mask("deterministic"), render_canonical_mask("deterministic")));
  FontSpec mono;
  mono.slot_layout = SlotLayout::Monospaced;
  auto m = render_canonical_mask("il", mono);
  EXPECT_EQ(class_set(m), label_classes("il"));
}

TEST(RenderMask, BoldStrokeCoversMore) {
  FontSpec bold;
  bold.weight_tag = "bold";
  EXPECT_GT((render_canonical_mask("text", bold) > 0).sum().item<int64_t>(),
            (render_canonical_mask("text") > 0).sum().item<int64_t>());
}

TEST(RenderMask, Errors) {
  EXPECT_CAM_ERROR(render_canonical_mask("a b"), ErrorKind::UnknownCharacter);
  EXPECT_CAM_ERROR(render_canonical_mask(std::string(33, 'a')), ErrorKind::LabelTooLong);
}

TEST(Synthesize, SameSeedIsBitIdentical) {
  std::mt19937_64 a(11), b(11);
  auto x = synthesize_image("Hello", {}, a);
  auto y = synthesize_image("Hello", {}, b);
  EXPECT_EQ(x.sizes(), (std::vector<int64_t>{3, 64, 256}));
  EXPECT_TRUE(torch::equal(x, y));
  EXPECT_GE(x.min().item<float>(), 0.0f);
  EXPECT_LE(x.max().item<float>(), 1.0f);
}

TEST(Synthesize, DifferentSeedsDiffer) {
  int collisions = 0;
  for (uint64_t s = 0; s < 100; ++s) {
    std::mt19937_64 a(2 * s), b(2 * s + 1);
    collisions += torch::equal(synthesize_image("word", {}, a), synthesize_image("word", {}, b));
  }
  EXPECT_EQ(collisions, 0);
}

TEST(Synthesize, PlainConfig) {
  std::mt19937_64 rng(0);
  auto img = synthesize_image("x", {}, rng, SynthConfig::plain());
  // Uniform background: the corners share one colour.
  auto corner = img.index({torch::indexing::Slice(), 0, 0});
  EXPECT_TRUE(torch::equal(img.index({torch::indexing::Slice(), 63, 255}), corner));
  auto differs = (img - corner.view({3, 1, 1})).abs().sum(0) > 0.1;
  EXPECT_GT(differs.sum().item<int64_t>(), 0);
}

TEST(Synthesize, RejectsUnknownCharacters) {
  std::mt19937_64 rng(0);
  EXPECT_CAM_ERROR(synthesize_image("a\tb", {}, rng), ErrorKind::UnknownCharacter);
}

TEST(Augment, DisabledIsIdentity) {
  std::mt19937_64 rng(0), aug(1);
  auto img = synthesize_image("identity", {}, rng);
  EXPECT_TRUE(torch::equal(augment(img, aug, AugmentConfig{}), img));
}

TEST(Augment, ZeroMagnitudesAreIdentity) {
  std::mt19937_64 rng(0), aug(1);
  auto img = synthesize_image("identity", {}, rng);
  AugmentConfig cfg;
  for (AugmentOp* op : {&cfg.perspective, &cfg.affine, &cfg.blur, &cfg.noise, &cfg.rotation}) {
    *op = {true, 1.0, 0.0};
  }
  EXPECT_TRUE(torch::equal(augment(img, aug, cfg), img));
}

TEST(Augment, RotationThenInverse) {
  std::mt19937_64 rng(3);
  auto img = synthesize_image("rotate", {}, rng);
  auto back = rotate_image(rotate_image(img, 4.0), -4.0);
  EXPECT_LE((back - img).abs().mean().item<double>(), 2e-2);
}

TEST(Augment, NoiseMagnitude) {
  auto img = torch::full({3, 64, 256}, 0.5f);
  AugmentConfig cfg;
  cfg.noise = {true, 1.0, 0.1};
  std::mt19937_64 aug(5);
  auto out = augment(img, aug, cfg);
  const double mad = (out - img).abs().mean().item<double>();
  EXPECT_GE(mad, 0.05);
  EXPECT_LE(mad, 0.12);
}

TEST(Augment, DeterministicAndClamped) {
  std::mt19937_64 rng(9);
  auto img = synthesize_image("augment", {}, rng);
  AugmentConfig cfg;
  for (AugmentOp* op : {&cfg.perspective, &cfg.affine, &cfg.blur, &cfg.noise, &cfg.rotation}) op->enabled = true;
  cfg.noise.magnitude = 0.5;
  std::mt19937_64 a(1), b(1);
  auto x = augment(img, a, cfg), y = augment(img, b, cfg);
  EXPECT_TRUE(torch::equal(x, y));
  EXPECT_GE(x.min().item<float>(), 0.0f);
  EXPECT_LE(x.max().item<float>(), 1.0f);
}

TEST(PixelWeights, HandExample) {
  auto mask = torch::zeros({4, 4}, torch::kUInt8);
  mask.index_put_({0, torch::indexing::Slice()}, 3);
  auto w = compute_pixel_weights(mask);
  EXPECT_FLOAT_EQ(w[0][0].item<float>(), 3.0f);
  EXPECT_FLOAT_EQ(w[3][3].item<float>(), 1.0f);
  EXPECT_FLOAT_EQ(w.sum().item<float>(), 4 * 3.0f + 12 * 1.0f);
}

TEST(PixelWeights, HalfForeground) {
  auto mask = torch::zeros({4, 4}, torch::kUInt8);
  mask.index_put_({torch::indexing::Slice(0, 2)}, 1);
  EXPECT_TRUE(torch::equal(compute_pixel_weights(mask), torch::ones({4, 4})));
}

TEST(PixelWeights, AllForegroundGivesZero) {
  auto w = compute_pixel_weights(torch::full({4, 4}, 2, torch::kUInt8));
  EXPECT_TRUE(torch::equal(w, torch::zeros({4, 4})));
}

TEST(PixelWeights, AllBackgroundIsRejected) {
  EXPECT_CAM_ERROR(compute_pixel_weights(torch::zeros({4, 4}, torch::kUInt8)), ErrorKind::AllBackground);
}

TEST(PixelWeights, ClassBalanceIdentity) {
  torch::manual_seed(0);
  for (int rep = 0; rep < 20; ++rep) {
    auto mask = (torch::rand({32, 128}) < 0.1 + 0.04 * rep).to(torch::kUInt8) * 7;
    mask[0][0] = 7;
    auto w = compute_pixel_weights(mask, torch::kFloat64);
    const double n_neg = (mask == 0).sum().item<double>();
    EXPECT_DOUBLE_EQ(w.masked_select(mask > 0).sum().item<double>(), n_neg);
  }
}

TEST(PixelWeights, PerSampleInBatch) {
  auto masks = torch::zeros({2, 4, 4}, torch::kUInt8);
  masks[0][0][0] = 1;                                    // 1 fg -> 15
  masks.index_put_({1, torch::indexing::Slice(0, 2)}, 1);  // 8 fg -> 1
  auto w = compute_pixel_weights(masks);
  EXPECT_FLOAT_EQ(w[0][0][0].item<float>(), 15.0f);
  EXPECT_FLOAT_EQ(w[1][0][0].item<float>(), 1.0f);
}

TEST(Dataset, RoundTrip) {
  auto dir = cam::test::scratch_dir("roundtrip");
  auto samples = synthesize_corpus(10, 3);
  write_dataset(dir, samples);
  auto back = read_dataset(dir);
  ASSERT_EQ(back.samples.size(), 10u);
  EXPECT_TRUE(back.rejected.empty());
  EXPECT_EQ(back.vocab_hash, default_vocab().hash());
  for (size_t i = 0; i < samples.size(); ++i) {
    EXPECT_EQ(back.samples[i].id, samples[i].id);
    EXPECT_EQ(back.samples[i].label, samples[i].label);
    EXPECT_TRUE(torch::equal(back.samples[i].mask, samples[i].mask));
    EXPECT_LE(max_abs_diff(back.samples[i].image, samples[i].image), 1e-6);
  }
}

TEST(Dataset, RejectsBadRecordsAndContinues) {
  auto dir = cam::test::scratch_dir("rejects");
  auto samples = synthesize_corpus(3, 4);
  write_dataset(dir, samples);
  {
    std::ofstream labels(dir / "labels.jsonl", std::ios::app);
    labels << R"({"id":"bad_char","text":"café"})" << "\n";
    labels << R"({"id":"no_mask","text":"fine"})" << "\n";
    labels << "{not json\n";
    labels << R"({"id":"000001","text":"ok"})" << "\n";
  }
  auto back = read_dataset(dir);
  EXPECT_EQ(back.samples.size(), 4u);
  ASSERT_EQ(back.rejected.size(), 3u);
  EXPECT_EQ(back.rejected[0].kind, ErrorKind::UnknownCharacter);
  EXPECT_EQ(back.rejected[0].id, "bad_char");
  EXPECT_EQ(back.rejected[1].kind, ErrorKind::MissingMask);
  EXPECT_EQ(back.rejected[2].kind, ErrorKind::CorruptRecord);
}

TEST(Dataset, EmptyDirectory) {
  auto dir = cam::test::scratch_dir("empty");
  auto back = read_dataset(dir);
  EXPECT_TRUE(back.samples.empty());
  EXPECT_TRUE(back.rejected.empty());
}

TEST(Dataset, SchemaMismatch) {
  auto dir = cam::test::scratch_dir("schema");
  std::ofstream(dir / "meta.json") << R"({"schema":2,"vocab_hash":"x"})";
  EXPECT_CAM_ERROR(read_dataset(dir), ErrorKind::SchemaVersionMismatch);
}
