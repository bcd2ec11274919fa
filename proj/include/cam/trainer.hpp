#pragma once

#include <torch/torch.h>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cam/augment.hpp"
#include "cam/checkpoint.hpp"
#include "cam/config.hpp"
#include "cam/dataset.hpp"
#include "cam/model.hpp"
#include "cam/objective.hpp"
#include "cam/vocab.hpp"

namespace cam {

/// splitmix64 finalizer; combines seeds into independent stream seeds.
inline uint64_t mix_seed(uint64_t a, uint64_t b = 0, uint64_t c = 0) {
  auto sm = [](uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return sm(sm(sm(a) ^ b) ^ c);
}

/// Linear warmup to base_lr over `warmup` steps, then cosine decay to 0 at
/// `total` steps.
inline double learning_rate(int64_t step, double base_lr, int64_t warmup, int64_t total) {
  if (step < warmup) return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  if (total <= warmup) return base_lr;
  const double t = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return base_lr * 0.5 * (1.0 + std::cos(M_PI * std::min(t, 1.0)));
}

/// Sample indices of batch `step`: epoch e walks a permutation seeded by
/// (seed, e). Depends only on (seed, step, n, batch).
inline std::vector<int64_t> batch_indices(uint64_t seed, int64_t step, int64_t n, int64_t batch) {
  const int64_t per_epoch = (n + batch - 1) / batch;
  const int64_t epoch = step / per_epoch, pos = step % per_epoch;
  std::vector<int64_t> perm(static_cast<size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(mix_seed(seed, static_cast<uint64_t>(epoch)));
  for (int64_t i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<int64_t> pick(0, i);
    std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(pick(rng))]);
  }
  const int64_t lo = pos * batch, hi = std::min(n, lo + batch);
  return {perm.begin() + lo, perm.begin() + hi};
}

/// Random labels over the vocabulary, lengths 3..10.
inline std::vector<TextSample> synthesize_corpus(int64_t n, uint64_t seed, const FontSpec& font = {},
                                                 const SynthConfig& style = {}) {
  const auto& vocab = default_vocab();
  std::vector<TextSample> out;
  out.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<uint64_t>(i)));
    std::uniform_int_distribution<int> len(3, 10), ch(1, CharVocab::kNumChars);
    std::string label;
    const int l = len(rng);
    for (int k = 0; k < l; ++k) label.push_back(vocab.char_of(ch(rng)));
    std::ostringstream id;
    id << std::setw(6) << std::setfill('0') << i;
    out.push_back(make_sample(id.str(), label, font, rng, style));
  }
  return out;
}

struct Batch {
  torch::Tensor images;   // B x 3 x 64 x 256
  torch::Tensor targets;  // B x T, EOS-terminated, EOS-padded
  torch::Tensor lengths;  // B, label length + 1
  torch::Tensor masks;    // B x 32 x 128 long
  torch::Tensor weights;  // B x 32 x 128
  std::vector<std::string> labels;
};

inline torch::Tensor collapse_classes(const torch::Tensor& mask) { return (mask > 0).to(mask.scalar_type()); }

/// Assembles a batch. `augment_seed` set means augmentation is applied with
/// per-sample rngs seeded by (augment_seed, i).
inline Batch make_batch(const std::vector<TextSample>& data, const std::vector<int64_t>& idx, bool class_agnostic,
                        const AugmentConfig* aug = nullptr, uint64_t augment_seed = 0) {
  const auto& vocab = default_vocab();
  Batch b;
  std::vector<torch::Tensor> images, masks;
  std::vector<std::vector<int64_t>> codes;
  int64_t longest = 0;
  for (size_t i = 0; i < idx.size(); ++i) {
    const auto& s = data[static_cast<size_t>(idx[i])];
    if (aug && aug->any()) {
      std::mt19937_64 rng(mix_seed(augment_seed, i));
      images.push_back(augment(s.image, rng, *aug));
    } else {
      images.push_back(s.image);
    }
    auto m = s.mask.to(torch::kLong);
    masks.push_back(class_agnostic ? collapse_classes(m) : m);
    codes.push_back(vocab.encode(s.label));
    longest = std::max<int64_t>(longest, static_cast<int64_t>(codes.back().size()));
    b.labels.push_back(vocab.normalize(s.label));
  }
  const int64_t B = static_cast<int64_t>(idx.size()), T = longest + 1;
  b.targets = torch::full({B, T}, CharVocab::kEos, torch::kLong);
  b.lengths = torch::empty({B}, torch::kLong);
  auto acc = b.targets.accessor<int64_t, 2>();
  for (int64_t i = 0; i < B; ++i) {
    const auto& c = codes[static_cast<size_t>(i)];
    for (size_t t = 0; t < c.size(); ++t) acc[i][static_cast<int64_t>(t)] = c[t];
    b.lengths[i] = static_cast<int64_t>(c.size()) + 1;
  }
  b.images = torch::stack(images);
  b.masks = torch::stack(masks);
  b.weights = compute_pixel_weights(b.masks);
  return b;
}

/// Fraction of sequences whose teacher-forced argmax matches every target
/// token up to and including EOS.
inline double teacher_forced_accuracy(const torch::Tensor& logits, const torch::Tensor& targets,
                                      const torch::Tensor& lengths) {
  auto pred = logits.argmax(-1);
  auto valid = torch::arange(targets.size(1)).unsqueeze(0) < lengths.unsqueeze(1);
  auto wrong = ((pred != targets) & valid).any(1);
  return 1.0 - wrong.to(torch::kFloat64).mean().item<double>();
}

struct StepRecord {
  int64_t step = 0;
  double lr = 0, loss_total = 0, loss_rec = 0, loss_seg = 0, train_word_acc = 0;
};

inline std::string metrics_header() { return "step,lr,loss_total,loss_rec,loss_seg,train_word_acc"; }

inline std::string format_record(const StepRecord& r) {
  std::ostringstream o;
  o << std::setprecision(17) << r.step << ',' << r.lr << ',' << r.loss_total << ',' << r.loss_rec << ','
    << r.loss_seg << ',' << r.train_word_acc;
  return o.str();
}

/// AdamW with two groups: no weight decay for 1-D tensors (norm scales,
/// biases), configured decay for the rest.
inline std::unique_ptr<torch::optim::AdamW> make_optimizer(CamModel& model, const TrainConfig& cfg) {
  std::vector<torch::Tensor> decay, no_decay;
  for (const auto& p : model->parameters()) (p.dim() <= 1 ? no_decay : decay).push_back(p);
  auto opts = [&](double wd) {
    return std::make_unique<torch::optim::AdamWOptions>(
        torch::optim::AdamWOptions(cfg.base_lr).betas({cfg.beta1, cfg.beta2}).weight_decay(wd));
  };
  std::vector<torch::optim::OptimizerParamGroup> groups;
  groups.emplace_back(decay, opts(cfg.weight_decay));
  groups.emplace_back(no_decay, opts(0.0));
  return std::make_unique<torch::optim::AdamW>(groups, torch::optim::AdamWOptions(cfg.base_lr));
}

/// Owns the model, optimizer and position in the schedule. Output files in
/// `out_dir`: metrics.csv, ckpt_<step>.bin, last.bin.
class Trainer {
 public:
  Trainer(TrainConfig cfg, std::vector<TextSample> data, std::filesystem::path out_dir = {})
      : config_(std::move(cfg)), data_(std::move(data)), out_dir_(std::move(out_dir)) {
    config_.validate();
    if (data_.empty()) throw Error(ErrorKind::DatasetMissing, "training dataset is empty");
    torch::manual_seed(config_.seed);
    model_ = CamModel(config_.model_config());
    optimizer_ = make_optimizer(model_, config_);
    total_ = config_.total_steps(static_cast<int64_t>(data_.size()));
    warmup_ = static_cast<int64_t>(
        std::ceil(config_.warmup_epochs * config_.steps_per_epoch(static_cast<int64_t>(data_.size()))));
  }

  /// Rebuilds a trainer from a checkpoint; training continues at its step.
  static Trainer resume(const std::filesystem::path& ckpt_path, std::vector<TextSample> data,
                        std::filesystem::path out_dir = {}) {
    auto ckpt = read_checkpoint(ckpt_path);
    if (ckpt.vocab_hash != default_vocab().hash()) {
      throw Error(ErrorKind::VocabMismatch, "checkpoint vocabulary differs from this build");
    }
    Trainer t(TrainConfig::parse(ckpt.config_text), std::move(data), std::move(out_dir));
    t.load(ckpt);
    return t;
  }

  const TrainConfig& config() const { return config_; }
  CamModel& model() { return model_; }
  int64_t step() const { return step_; }
  int64_t total_steps() const { return total_; }
  int64_t warmup_steps() const { return warmup_; }

  StepRecord train_step() {
    const int64_t n = static_cast<int64_t>(data_.size());
    auto idx = batch_indices(config_.seed, step_, n, config_.batch_size);
    auto batch = make_batch(data_, idx, config_.class_agnostic, &config_.augment,
                            mix_seed(config_.seed, 0x61756721ULL, static_cast<uint64_t>(step_)));
    model_->train();
    auto out = model_->forward(batch.images, batch.targets);
    auto rec = recognition_loss(out.rec_logits, batch.targets, batch.lengths);
    auto seg = segmentation_loss(out.seg_logits, batch.masks, batch.weights);
    auto loss = total_loss(rec, seg, config_.lambda);

    StepRecord r;
    r.step = step_;
    r.lr = learning_rate(step_, config_.base_lr, warmup_, total_);
    r.loss_total = loss.total_value();
    r.loss_rec = loss.rec_value();
    r.loss_seg = loss.seg_value();
    if (!std::isfinite(r.loss_total)) {
      dump_diagnostics(r, batch);
      throw Error(ErrorKind::NonFiniteLoss, "non-finite loss at step " + std::to_string(step_) +
                                                " (rec " + std::to_string(r.loss_rec) + ", seg " +
                                                std::to_string(r.loss_seg) + ")");
    }
    r.train_word_acc = teacher_forced_accuracy(out.rec_logits.detach(), batch.targets, batch.lengths);

    optimizer_->zero_grad();
    loss.total.backward();
    torch::nn::utils::clip_grad_norm_(model_->parameters(), config_.grad_clip);
    for (auto& g : optimizer_->param_groups()) static_cast<torch::optim::AdamWOptions&>(g.options()).lr(r.lr);
    optimizer_->step();
    ++step_;
    return r;
  }

  /// Trains until `until` (default: the configured total), logging to
  /// metrics.csv and writing periodic checkpoints when an output directory
  /// is set. Returns every step's record.
  std::vector<StepRecord> run(std::optional<int64_t> until = std::nullopt, bool verbose = false) {
    const int64_t stop = std::min(until.value_or(total_), total_);
    std::ofstream csv;
    if (!out_dir_.empty()) {
      std::filesystem::create_directories(out_dir_);
      const auto path = out_dir_ / "metrics.csv";
      const bool fresh = step_ == 0 || !std::filesystem::exists(path);
      csv.open(path, fresh ? std::ios::trunc : std::ios::app);
      if (fresh) csv << metrics_header() << '\n';
    }
    std::vector<StepRecord> records;
    while (step_ < stop) {
      auto r = train_step();
      records.push_back(r);
      const bool last = step_ == total_;
      if (r.step % config_.log_every == 0 || last) {
        if (csv.is_open()) csv << format_record(r) << '\n' << std::flush;
        if (verbose) {
          std::cout << "step " << r.step << " lr " << r.lr << " loss " << r.loss_total << " (rec " << r.loss_rec
                    << ", seg " << r.loss_seg << ") acc " << r.train_word_acc << std::endl;
        }
      }
      if (!out_dir_.empty() && (step_ % config_.checkpoint_every == 0 || step_ == stop)) {
        write_checkpoint(out_dir_ / ("ckpt_" + std::to_string(step_) + ".bin"), checkpoint());
        write_checkpoint(out_dir_ / "last.bin", checkpoint());
      }
    }
    return records;
  }

  Checkpoint checkpoint() {
    Checkpoint c;
    c.config_text = config_.to_text();
    c.vocab_hash = default_vocab().hash();
    c.step = step_;
    c.seed = config_.seed;
    capture_module(c, *model_);
    capture_optimizer(c, *model_, *optimizer_);
    return c;
  }

  void load(const Checkpoint& c) {
    restore_module(c, *model_);
    restore_optimizer(c, *model_, *optimizer_);
    step_ = c.step;
  }

 private:
  void dump_diagnostics(const StepRecord& r, const Batch& batch) const {
    std::ostringstream o;
    o << "non-finite loss\nstep " << r.step << "\nlr " << r.lr << "\nloss_rec " << r.loss_rec << "\nloss_seg "
      << r.loss_seg << "\nlabels";
    for (const auto& l : batch.labels) o << ' ' << l;
    o << "\nnon-finite parameters";
    for (const auto& p : model_->named_parameters()) {
      if (!torch::isfinite(p.value()).all().item<bool>()) o << ' ' << p.key();
    }
    o << '\n';
    std::cerr << o.str();
    if (!out_dir_.empty()) {
      std::filesystem::create_directories(out_dir_);
      std::ofstream(out_dir_ / "nonfinite_dump.txt") << o.str();
    }
  }

  TrainConfig config_;
  std::vector<TextSample> data_;
  std::filesystem::path out_dir_;
  CamModel model_{nullptr};
  std::unique_ptr<torch::optim::AdamW> optimizer_;
  int64_t step_ = 0, total_ = 0, warmup_ = 0;
};

/// Loads a model from a checkpoint (architecture from its config snapshot).
inline CamModel load_model(const std::filesystem::path& path, TrainConfig* cfg_out = nullptr,
                           std::string* vocab_hash = nullptr) {
  auto ckpt = read_checkpoint(path);
  auto cfg = TrainConfig::parse(ckpt.config_text);
  CamModel model(cfg.model_config());
  restore_module(ckpt, *model);
  model->eval();
  if (cfg_out) *cfg_out = cfg;
  if (vocab_hash) *vocab_hash = ckpt.vocab_hash;
  return model;
}

struct Prediction {
  std::string id, label, predicted;
  bool correct = false;
  double seg_pixel_acc = 0;
};

struct EvalReport {
  double word_acc = 0, seg_pixel_acc = 0;
  std::vector<Prediction> predictions;

  nlohmann::json to_json() const {
    nlohmann::json preds = nlohmann::json::array();
    for (const auto& p : predictions) {
      preds.push_back({{"id", p.id},
                       {"label", p.label},
                       {"prediction", p.predicted},
                       {"correct", p.correct},
                       {"seg_pixel_acc", p.seg_pixel_acc}});
    }
    return {{"word_acc", word_acc}, {"seg_pixel_acc", seg_pixel_acc}, {"n", predictions.size()},
            {"predictions", preds}};
  }
};

/// Greedy recognition and argmax masks over `data` in eval mode. When
/// `mask_dir` is set, predicted masks are written there as 8-bit PNGs
/// holding class indices.
inline EvalReport evaluate(CamModel& model, const std::vector<TextSample>& data, bool class_agnostic = false,
                           const std::filesystem::path& mask_dir = {}, int64_t batch_size = 32) {
  if (data.empty()) throw Error(ErrorKind::DatasetMissing, "evaluation dataset is empty");
  torch::NoGradGuard guard;
  model->eval();
  if (!mask_dir.empty()) std::filesystem::create_directories(mask_dir);
  const auto& vocab = default_vocab();
  EvalReport report;
  double pixel_hits = 0, pixel_total = 0;
  size_t word_hits = 0;
  for (size_t lo = 0; lo < data.size(); lo += static_cast<size_t>(batch_size)) {
    const size_t hi = std::min(data.size(), lo + static_cast<size_t>(batch_size));
    std::vector<torch::Tensor> images, masks;
    for (size_t i = lo; i < hi; ++i) {
      images.push_back(data[i].image);
      auto m = data[i].mask.to(torch::kLong);
      masks.push_back(class_agnostic ? collapse_classes(m) : m);
    }
    auto enc = model->encode(torch::stack(images));
    auto words = model->decoder->greedy(enc.refined);
    auto pred_masks = enc.seg_logits.argmax(1);
    auto hits = (pred_masks == torch::stack(masks)).to(torch::kFloat64);
    for (size_t i = lo; i < hi; ++i) {
      Prediction p;
      p.id = data[i].id;
      p.label = vocab.normalize(data[i].label);
      p.predicted = words[i - lo];
      p.correct = word_accuracy({p.predicted}, {p.label}) == 1.0;
      p.seg_pixel_acc = hits[static_cast<int64_t>(i - lo)].mean().item<double>();
      word_hits += p.correct;
      report.predictions.push_back(p);
      if (!mask_dir.empty()) {
        auto m = pred_masks[static_cast<int64_t>(i - lo)].to(torch::kUInt8).contiguous();
        cv::Mat png(static_cast<int>(m.size(0)), static_cast<int>(m.size(1)), CV_8UC1, m.data_ptr());
        cv::imwrite((mask_dir / (p.id + ".png")).string(), png);
      }
    }
    pixel_hits += hits.sum().item<double>();
    pixel_total += static_cast<double>(hits.numel());
  }
  report.word_acc = static_cast<double>(word_hits) / static_cast<double>(data.size());
  report.seg_pixel_acc = pixel_hits / pixel_total;
  return report;
}

/// Checkpoint + dataset directory entry point. Rejects mismatched vocabularies.
inline EvalReport evaluate(const std::filesystem::path& ckpt_path, const std::filesystem::path& data_dir,
                           const std::filesystem::path& mask_dir = {}) {
  TrainConfig cfg;
  std::string hash;
  auto model = load_model(ckpt_path, &cfg, &hash);
  auto data = read_dataset(data_dir);
  if (!data.vocab_hash.empty() && data.vocab_hash != hash) {
    throw Error(ErrorKind::VocabMismatch, "checkpoint vocab " + hash + " vs dataset vocab " + data.vocab_hash);
  }
  return evaluate(model, data.samples, cfg.class_agnostic, mask_dir);
}

}  // namespace cam
