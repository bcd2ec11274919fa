#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "cam/align_fuse.hpp"
#include "cam/augment.hpp"
#include "cam/error.hpp"
#include "cam/model.hpp"
#include "cam/render.hpp"

namespace cam {

/// Everything a training run depends on. Serialized as `key = value` lines
/// (see to_text); unknown keys are rejected.
struct TrainConfig {
  std::string variant = "toy";
  int64_t batch_size = 16;
  double base_lr = 4e-4;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double warmup_epochs = 1.0;
  double total_epochs = 0.0;  // used when steps == 0
  int64_t steps = 2000;
  uint64_t seed = 0;
  int64_t log_every = 10;
  int64_t checkpoint_every = 500;
  double grad_clip = 5.0;
  double lambda = 1.0;
  bool class_agnostic = false;

  FusionConfig fusion{};
  AugmentConfig augment{};
  FontSpec font{};
  int64_t decoder_dim = 0;  // 0: variant default

  /// Presets: toy keeps CPU-sized defaults; nano/tiny/base carry the
  /// full-scale optimization settings.
  static TrainConfig preset(const std::string& variant) {
    TrainConfig c;
    c.variant = variant;
    if (variant == "nano") {
      c.base_lr = 8e-4, c.batch_size = 128, c.steps = 0, c.total_epochs = 6;
    } else if (variant == "tiny") {
      c.base_lr = 4e-4, c.batch_size = 128, c.steps = 0, c.total_epochs = 6;
    } else if (variant == "base") {
      c.base_lr = 2e-4, c.batch_size = 64, c.steps = 0, c.total_epochs = 6;
    } else if (variant != "toy") {
      throw Error(ErrorKind::InvalidConfig, "unknown variant '" + variant + "'");
    }
    return c;
  }

  ModelConfig model_config() const {
    auto m = ModelConfig::preset(variant);
    m.fusion = fusion;
    if (decoder_dim > 0) m.decoder.embed_dim = decoder_dim;
    return m;
  }

  int64_t steps_per_epoch(int64_t dataset_size) const {
    return std::max<int64_t>(1, (dataset_size + batch_size - 1) / batch_size);
  }

  int64_t total_steps(int64_t dataset_size) const {
    if (steps > 0) return steps;
    return std::max<int64_t>(1, static_cast<int64_t>(total_epochs * steps_per_epoch(dataset_size)));
  }

  void validate() const {
    auto require = [](bool ok, const std::string& what) {
      if (!ok) throw Error(ErrorKind::InvalidConfig, what);
    };
    require(batch_size > 0, "batch_size must be positive");
    require(base_lr > 0, "base_lr must be positive");
    require(weight_decay >= 0, "weight_decay must be non-negative");
    require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "betas must lie in [0, 1)");
    require(warmup_epochs >= 0, "warmup_epochs must be non-negative");
    require(steps > 0 || total_epochs > 0, "one of steps / total_epochs must be positive");
    require(log_every > 0 && checkpoint_every > 0, "log_every and checkpoint_every must be positive");
    require(grad_clip > 0, "grad_clip must be positive");
    require(lambda >= 0, "lambda must be non-negative");
    require(fusion.heads > 0 && fusion.groups > 0 && fusion.downsample > 0, "fusion heads/groups/r must be positive");
    require(fusion.offset_range >= 0, "fusion.offset_range must be non-negative");
    model_config().backbone.validate();
  }

  std::string to_text() const {
    std::ostringstream o;
    o.precision(17);
    auto op = [&](const char* name, const AugmentOp& a) {
      o << "augment." << name << " = " << (a.enabled ? 1 : 0) << "\n";
      o << "augment." << name << ".probability = " << a.probability << "\n";
      o << "augment." << name << ".magnitude = " << a.magnitude << "\n";
    };
    o << "variant = " << variant << "\n"
      << "batch_size = " << batch_size << "\n"
      << "base_lr = " << base_lr << "\n"
      << "weight_decay = " << weight_decay << "\n"
      << "beta1 = " << beta1 << "\n"
      << "beta2 = " << beta2 << "\n"
      << "warmup_epochs = " << warmup_epochs << "\n"
      << "total_epochs = " << total_epochs << "\n"
      << "steps = " << steps << "\n"
      << "seed = " << seed << "\n"
      << "log_every = " << log_every << "\n"
      << "checkpoint_every = " << checkpoint_every << "\n"
      << "grad_clip = " << grad_clip << "\n"
      << "lambda = " << lambda << "\n"
      << "class_agnostic = " << (class_agnostic ? 1 : 0) << "\n"
      << "decoder_dim = " << decoder_dim << "\n"
      << "fusion.strategy = " << to_string(fusion.strategy) << "\n"
      << "fusion.heads = " << fusion.heads << "\n"
      << "fusion.groups = " << fusion.groups << "\n"
      << "fusion.r = " << fusion.downsample << "\n"
      << "fusion.offset_range = " << fusion.offset_range << "\n";
    op("perspective", augment.perspective);
    op("affine", augment.affine);
    op("blur", augment.blur);
    op("noise", augment.noise);
    op("rotation", augment.rotation);
    o << "font.face = " << font.font_face << "\n"
      << "font.weight = " << font.weight_tag << "\n"
      << "font.layout = " << (font.slot_layout == SlotLayout::Proportional ? "proportional" : "monospaced") << "\n";
    return o.str();
  }

  /// Applies one key. Throws InvalidConfig on unknown keys or bad values.
  void set(const std::string& key, const std::string& value) {
    auto as_double = [&]() {
      try {
        size_t used = 0;
        double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
      } catch (const std::exception&) {
        throw Error(ErrorKind::InvalidConfig, "bad number for " + key + ": '" + value + "'");
      }
    };
    auto as_int = [&]() {
      try {
        size_t used = 0;
        long long v = std::stoll(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return static_cast<int64_t>(v);
      } catch (const std::exception&) {
        throw Error(ErrorKind::InvalidConfig, "bad integer for " + key + ": '" + value + "'");
      }
    };
    auto as_bool = [&]() {
      if (value == "1" || value == "true" || value == "on") return true;
      if (value == "0" || value == "false" || value == "off") return false;
      throw Error(ErrorKind::InvalidConfig, "bad boolean for " + key + ": '" + value + "'");
    };
    auto aug = [&](const std::string& rest) -> bool {
      std::map<std::string, AugmentOp*> ops{{"perspective", &augment.perspective},
                                            {"affine", &augment.affine},
                                            {"blur", &augment.blur},
                                            {"noise", &augment.noise},
                                            {"rotation", &augment.rotation}};
      auto dot = rest.find('.');
      auto it = ops.find(rest.substr(0, dot));
      if (it == ops.end()) return false;
      if (dot == std::string::npos) {
        it->second->enabled = as_bool();
      } else if (rest.substr(dot + 1) == "probability") {
        it->second->probability = as_double();
      } else if (rest.substr(dot + 1) == "magnitude") {
        it->second->magnitude = as_double();
      } else {
        return false;
      }
      return true;
    };

    if (key == "variant") variant = value;
    else if (key == "batch_size") batch_size = as_int();
    else if (key == "base_lr") base_lr = as_double();
    else if (key == "weight_decay") weight_decay = as_double();
    else if (key == "beta1") beta1 = as_double();
    else if (key == "beta2") beta2 = as_double();
    else if (key == "warmup_epochs") warmup_epochs = as_double();
    else if (key == "total_epochs") total_epochs = as_double();
    else if (key == "steps") steps = as_int();
    else if (key == "seed") seed = static_cast<uint64_t>(as_int());
    else if (key == "log_every") log_every = as_int();
    else if (key == "checkpoint_every") checkpoint_every = as_int();
    else if (key == "grad_clip") grad_clip = as_double();
    else if (key == "lambda") lambda = as_double();
    else if (key == "class_agnostic") class_agnostic = as_bool();
    else if (key == "decoder_dim") decoder_dim = as_int();
    else if (key == "fusion.strategy") fusion.strategy = parse_fusion_strategy(value);
    else if (key == "fusion.heads") fusion.heads = as_int();
    else if (key == "fusion.groups") fusion.groups = as_int();
    else if (key == "fusion.r") fusion.downsample = as_int();
    else if (key == "fusion.offset_range") fusion.offset_range = as_double();
    else if (key == "font.face") font.font_face = value;
    else if (key == "font.weight") font.weight_tag = value;
    else if (key == "font.layout") {
      if (value == "proportional") font.slot_layout = SlotLayout::Proportional;
      else if (value == "monospaced") font.slot_layout = SlotLayout::Monospaced;
      else throw Error(ErrorKind::InvalidConfig, "font.layout must be proportional or monospaced");
    } else if (key.rfind("augment.", 0) == 0 && aug(key.substr(8))) {
    } else {
      throw Error(ErrorKind::InvalidConfig, "unknown config key '" + key + "'");
    }
  }

  /// Parses `key = value` lines; '#' starts a comment. A `variant` line, if
  /// present, must come first since it resets the preset.
  static TrainConfig parse(const std::string& text) {
    TrainConfig c;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    bool first = true;
    auto trim = [](std::string s) {
      const char* ws = " \t\r";
      s.erase(0, s.find_first_not_of(ws));
      s.erase(s.find_last_not_of(ws) + 1);
      return s;
    };
    while (std::getline(in, line)) {
      ++lineno;
      line = trim(line.substr(0, line.find('#')));
      if (line.empty()) continue;
      auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw Error(ErrorKind::InvalidConfig, "line " + std::to_string(lineno) + ": expected key = value");
      }
      auto key = trim(line.substr(0, eq));
      auto value = trim(line.substr(eq + 1));
      if (key == "variant") {
        if (!first) throw Error(ErrorKind::InvalidConfig, "variant must be the first key");
        c = preset(value);
      } else {
        c.set(key, value);
      }
      first = false;
    }
    c.validate();
    return c;
  }

  static TrainConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::InvalidConfig, "cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }
};

}  // namespace cam
