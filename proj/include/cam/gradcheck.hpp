#pragma once

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "cam/align_fuse.hpp"
#include "cam/backbone.hpp"
#include "cam/branch.hpp"
#include "cam/dataset.hpp"
#include "cam/decoder.hpp"
#include "cam/glyph_seg.hpp"
#include "cam/objective.hpp"
#include "cam/rectifier.hpp"

namespace cam {

inline const std::vector<std::string>& gradcheck_modules() {
  static const std::vector<std::string> names{"rectifier", "backbone", "glyph_seg", "align_fuse", "decoder", "objective"};
  return names;
}

struct GradcheckOptions {
  uint64_t seed = 0;
  int64_t param_samples = 70;
  int64_t input_samples = 40;  // modules without parameters sample param_samples + input_samples inputs
  double step = 1e-3;
  double tolerance = 1e-4;
  double abs_floor = 1e-4;     // denominator floor: below it the error is effectively absolute
  bool corrupt = false;        // self-test: perturb one analytic entry
};

struct GradcheckResult {
  std::string module;
  int64_t checked = 0;
  double max_rel_err = 0;
  std::string worst;  // location of the largest error
  bool passed = false;
};

/// A scalar function of a module's parameters and some inputs. `loss` must
/// recompute the forward pass from scratch each call.
struct GradProblem {
  std::shared_ptr<torch::nn::Module> module;  // may be null
  std::vector<torch::Tensor> inputs;
  std::vector<std::string> input_names;
  std::function<torch::Tensor()> loss;
};

/// Compares autograd against central differences on sampled entries. The
/// first forward pass records every piecewise decision on a branch tape and
/// each perturbed pass replays it.
inline GradcheckResult run_gradcheck(const std::string& name, GradProblem problem, const GradcheckOptions& opt) {
  struct Target {
    torch::Tensor tensor;
    std::string label;
  };
  std::vector<Target> params, inputs;
  if (problem.module) {
    for (auto& p : problem.module->named_parameters()) params.push_back({p.value(), p.key()});
  }
  for (size_t i = 0; i < problem.inputs.size(); ++i) {
    problem.inputs[i].requires_grad_(true);
    inputs.push_back({problem.inputs[i], problem.input_names[i]});
  }

  branch::Tape tape;
  {
    branch::Scope scope(tape, branch::Tape::Mode::Record);
    for (auto& t : params) t.tensor.mutable_grad() = torch::Tensor();
    for (auto& t : inputs) t.tensor.mutable_grad() = torch::Tensor();
    problem.loss().backward();
  }

  std::mt19937_64 rng(opt.seed ^ 0x67726164ULL);
  struct Entry {
    const Target* target;
    int64_t index;
  };
  std::vector<Entry> entries;
  auto sample = [&](const std::vector<Target>& pool, int64_t count) {
    if (pool.empty()) return;
    std::uniform_int_distribution<size_t> which(0, pool.size() - 1);
    for (int64_t k = 0; k < count; ++k) {
      const Target& t = pool[which(rng)];
      std::uniform_int_distribution<int64_t> at(0, t.tensor.numel() - 1);
      entries.push_back({&t, at(rng)});
    }
  };
  if (params.empty()) {
    sample(inputs, opt.param_samples + opt.input_samples);
  } else {
    sample(params, opt.param_samples);
    sample(inputs, opt.input_samples);
  }

  GradcheckResult result;
  result.module = name;
  torch::NoGradGuard guard;
  for (size_t k = 0; k < entries.size(); ++k) {
    const auto& e = entries[k];
    auto flat = e.target->tensor.detach().view({-1});
    auto grad = e.target->tensor.grad();
    double analytic = grad.defined() ? grad.view({-1})[e.index].item<double>() : 0.0;
    if (opt.corrupt && k == 0) analytic += 1e-2 * std::max(1.0, std::abs(analytic));

    const double original = flat[e.index].item<double>();
    auto eval_at = [&](double v) {
      flat[e.index] = v;
      branch::Scope scope(tape, branch::Tape::Mode::Replay);
      return problem.loss().item<double>();
    };
    const double plus = eval_at(original + opt.step);
    const double minus = eval_at(original - opt.step);
    flat[e.index] = original;
    const double numeric = (plus - minus) / (2 * opt.step);

    const double denom = std::max({std::abs(analytic), std::abs(numeric), opt.abs_floor});
    const double rel = std::abs(analytic - numeric) / denom;
    if (!(rel <= result.max_rel_err)) {
      result.max_rel_err = std::isfinite(rel) ? rel : INFINITY;
      result.worst = e.target->label + "[" + std::to_string(e.index) + "] analytic " + std::to_string(analytic) +
                     " numeric " + std::to_string(numeric);
    }
    ++result.checked;
  }
  result.passed = result.checked >= 100 && result.max_rel_err <= opt.tolerance;
  return result;
}

namespace detail {

/// sum(out * R) for a fixed random R.
inline std::function<torch::Tensor(const torch::Tensor&)> projector(const torch::Tensor& like) {
  auto r = torch::randn_like(like);
  return [r](const torch::Tensor& out) { return (out * r).sum(); };
}

}  // namespace detail

/// Toy-sized float64 instance of one module's gradient problem.
inline GradProblem make_grad_problem(const std::string& name, uint64_t seed) {
  torch::manual_seed(seed);
  const auto f64 = torch::TensorOptions().dtype(torch::kFloat64);
  const auto toy = BackboneConfig::toy();
  const int64_t C = toy.dims[3];
  GradProblem p;

  if (name == "rectifier") {
    auto m = std::make_shared<RectifierImpl>();
    m->to(torch::kFloat64);
    {
      // Break the template initialization so gradients reach every layer.
      torch::NoGradGuard guard;
      m->localizer->fc2->weight.normal_(0.0, 0.01);
    }
    // Fixed BN statistics: batch statistics over a handful of values (the
    // localizer's final maps are 1x2) are too curved for step 1e-3.
    m->eval();
    // Rendered text rather than pixel noise: realistic image gradients.
    std::mt19937_64 rng(seed);
    auto image = torch::stack({synthesize_image("grad", FontSpec{}, rng), synthesize_image("check", FontSpec{}, rng)})
                     .to(torch::kFloat64);
    auto proj = detail::projector(torch::zeros({2, 3, 32, 128}, f64));
    p.module = m;
    p.inputs = {image};
    p.input_names = {"image"};
    p.loss = [m, image, proj] { return proj(m->forward(image).first); };
  } else if (name == "backbone") {
    auto m = std::make_shared<BackboneImpl>(toy);
    m->to(torch::kFloat64);
    auto image = torch::randn({2, 3, 32, 128}, f64);
    auto proj = detail::projector(torch::zeros({2, C, 2, 32}, f64));
    p.module = m;
    p.inputs = {image};
    p.input_names = {"image"};
    p.loss = [m, image, proj] { return proj(m->forward(image)); };
  } else if (name == "glyph_seg") {
    auto m = std::make_shared<GlyphSegImpl>(C);
    m->to(torch::kFloat64);
    m->eval();  // fixed BN statistics, as for the rectifier
    auto f = torch::randn({4, C, 2, 32}, f64);
    auto proj_m = detail::projector(torch::zeros({4, CharVocab::kNumClasses, 32, 128}, f64));
    auto proj_c = detail::projector(torch::zeros({4, C, 2, 32}, f64));
    p.module = m;
    p.inputs = {f};
    p.input_names = {"F"};
    p.loss = [m, f, proj_m, proj_c] {
      auto out = m->forward(f);
      return proj_m(out.logits) + proj_c(out.canonical);
    };
  } else if (name == "align_fuse") {
    FusionConfig cfg;
    auto m = std::make_shared<FusionImpl>(C, cfg);
    m->to(torch::kFloat64);
    {
      torch::NoGradGuard guard;
      m->offsets->pointwise->weight.normal_(0.0, 0.02);
      m->offsets->pointwise->bias.normal_(0.0, 0.02);
    }
    // Horizontally smoothed features, like a backbone's output rather than
    // white noise.
    auto smooth = [](const torch::Tensor& x) {
      namespace F = torch::nn::functional;
      return F::avg_pool2d(x, F::AvgPool2dFuncOptions({1, 5}).stride(1).padding({0, 2}).count_include_pad(false)) * 2.0;
    };
    auto f = smooth(torch::randn({2, C, 2, 32}, f64));
    auto fc = smooth(torch::randn({2, C, 2, 32}, f64));
    auto proj = detail::projector(torch::zeros({2, C, 2, 32}, f64));
    p.module = m;
    p.inputs = {f, fc};
    p.input_names = {"F", "F_c"};
    p.loss = [m, f, fc, proj] { return proj(m->forward(f, fc)); };
  } else if (name == "decoder") {
    DecoderConfig cfg;
    auto m = std::make_shared<DecoderImpl>(C, cfg);
    m->to(torch::kFloat64);
    auto fr = torch::randn({2, C, 2, 32}, f64);
    auto targets = torch::randint(1, CharVocab::kNumClasses, {2, 6}, torch::kLong);
    auto proj = detail::projector(torch::zeros({2, 6, CharVocab::kNumClasses}, f64));
    p.module = m;
    p.inputs = {fr};
    p.input_names = {"F_r"};
    p.loss = [m, fr, targets, proj] { return proj(m->forward(fr, targets)); };
  } else if (name == "objective") {
    auto rec = torch::randn({2, 6, CharVocab::kNumClasses}, f64);
    auto targets = torch::randint(0, CharVocab::kNumClasses, {2, 6}, torch::kLong);
    auto lengths = torch::tensor({6, 4}, torch::kLong);
    auto seg = torch::randn({2, CharVocab::kNumClasses, 8, 16}, f64);
    auto gt = torch::randint(0, CharVocab::kNumClasses, {2, 8, 16}, torch::kLong);
    gt.index_put_({torch::indexing::Slice(), 0, 0}, 0);
    gt.index_put_({torch::indexing::Slice(), 0, 1}, 1);
    auto weights = compute_pixel_weights(gt, torch::kFloat64);
    p.inputs = {rec, seg};
    p.input_names = {"rec_logits", "seg_logits"};
    p.loss = [rec, targets, lengths, seg, gt, weights] {
      return total_loss(recognition_loss(rec, targets, lengths), segmentation_loss(seg, gt, weights)).total;
    };
  } else {
    throw Error(ErrorKind::InvalidConfig, "unknown gradcheck module '" + name + "'");
  }
  return p;
}

inline GradcheckResult gradcheck_module(const std::string& name, const GradcheckOptions& opt = {}) {
  return run_gradcheck(name, make_grad_problem(name, opt.seed), opt);
}

}  // namespace cam
