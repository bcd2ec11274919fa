#pragma once

#include <torch/torch.h>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "cam/error.hpp"
#include "cam/render.hpp"
#include "cam/vocab.hpp"

namespace cam {

inline constexpr int kDatasetSchema = 1;

struct TextSample {
  std::string id;
  torch::Tensor image;  // float32 3x64x256 in [0,1]
  std::string label;
  torch::Tensor mask;   // uint8 32x128, class indices
};

/// Class-balancing pixel weights: foreground pixels get N_neg / (N - N_neg),
/// background pixels get 1. Works on H x W or B x H x W masks, per sample.
inline torch::Tensor compute_pixel_weights(const torch::Tensor& mask, torch::ScalarType dtype = torch::kFloat32) {
  TORCH_CHECK(mask.dim() == 2 || mask.dim() == 3, "mask must be HxW or BxHxW");
  auto m = mask.dim() == 2 ? mask.unsqueeze(0) : mask;
  auto fg = (m > 0);
  const double n = static_cast<double>(m.size(1) * m.size(2));
  auto n_fg = fg.sum({1, 2}).to(torch::kFloat64);
  if ((n_fg == 0).any().item<bool>()) {
    throw Error(ErrorKind::AllBackground, "mask has no foreground pixels; weight undefined");
  }
  if ((n_fg == n).any().item<bool>()) {
    std::clog << "warning: all-foreground mask, foreground weight is 0\n";
  }
  auto w_fg = ((n - n_fg) / n_fg).view({-1, 1, 1});
  auto w = torch::where(fg, w_fg, torch::ones_like(w_fg)).to(dtype);
  return mask.dim() == 2 ? w.squeeze(0) : w;
}

/// Builds a complete sample: styled image plus canonical mask.
inline TextSample make_sample(std::string id, const std::string& label, const FontSpec& font, std::mt19937_64& rng,
                              const SynthConfig& style = {}) {
  TextSample s;
  s.id = std::move(id);
  s.label = label;
  s.image = synthesize_image(label, font, rng, style);
  s.mask = render_canonical_mask(label, font);
  return s;
}

struct Rejection {
  std::string id;
  ErrorKind kind;
  std::string message;
};

struct DatasetContents {
  std::vector<TextSample> samples;
  std::vector<Rejection> rejected;
  std::string vocab_hash;
};

/// Writes images/<id>.png, masks/<id>.png, labels.jsonl and meta.json.
inline void write_dataset(const std::filesystem::path& dir, const std::vector<TextSample>& samples,
                          const CharVocab& vocab = default_vocab()) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  std::ofstream labels(dir / "labels.jsonl", std::ios::binary);
  for (const auto& s : samples) {
    cv::Mat rgb = tensor_to_mat(s.image);
    cv::Mat bgr8;
    rgb.convertTo(bgr8, CV_8UC3, 255.0);
    cv::cvtColor(bgr8, bgr8, cv::COLOR_RGB2BGR);
    // convertTo rounds to nearest, matching quantize_u8.
    if (!cv::imwrite((dir / "images" / (s.id + ".png")).string(), bgr8)) {
      throw Error(ErrorKind::CorruptRecord, "cannot write image for " + s.id);
    }
    auto m = s.mask.to(torch::kUInt8).contiguous();
    cv::Mat mask(static_cast<int>(m.size(0)), static_cast<int>(m.size(1)), CV_8UC1, m.data_ptr<uint8_t>());
    if (!cv::imwrite((dir / "masks" / (s.id + ".png")).string(), mask)) {
      throw Error(ErrorKind::CorruptRecord, "cannot write mask for " + s.id);
    }
    labels << nlohmann::json{{"id", s.id}, {"text", s.label}}.dump() << '\n';
  }
  std::ofstream meta(dir / "meta.json", std::ios::binary);
  meta << nlohmann::json{{"schema", kDatasetSchema}, {"vocab_hash", vocab.hash()}}.dump() << '\n';
}

/// Reads a dataset directory. Per-record problems reject that record and
/// reading continues; a schema mismatch aborts. A directory without
/// labels.jsonl reads as empty.
inline DatasetContents read_dataset(const std::filesystem::path& dir, const CharVocab& vocab = default_vocab()) {
  namespace fs = std::filesystem;
  DatasetContents out;
  if (fs::exists(dir / "meta.json")) {
    std::ifstream in(dir / "meta.json");
    nlohmann::json meta;
    try {
      in >> meta;
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::CorruptRecord, std::string("meta.json: ") + e.what());
    }
    if (meta.value("schema", -1) != kDatasetSchema) {
      throw Error(ErrorKind::SchemaVersionMismatch,
                  "dataset schema " + meta.value("schema", nlohmann::json(-1)).dump() + ", expected " +
                      std::to_string(kDatasetSchema));
    }
    out.vocab_hash = meta.value("vocab_hash", "");
  }
  if (!fs::exists(dir / "labels.jsonl")) return out;

  std::ifstream labels(dir / "labels.jsonl");
  std::string line;
  int lineno = 0;
  while (std::getline(labels, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::string id = "line " + std::to_string(lineno);
    try {
      auto rec = nlohmann::json::parse(line);
      if (!rec.contains("id") || !rec.contains("text") || !rec["id"].is_string() || !rec["text"].is_string()) {
        throw Error(ErrorKind::CorruptRecord, "record lacks string fields id/text");
      }
      TextSample s;
      s.id = id = rec["id"].get<std::string>();
      s.label = rec["text"].get<std::string>();
      if (s.label.empty()) throw Error(ErrorKind::CorruptRecord, "empty label");
      vocab.encode(s.label);

      auto mask_path = dir / "masks" / (s.id + ".png");
      if (!fs::exists(mask_path)) throw Error(ErrorKind::MissingMask, mask_path.string());
      cv::Mat mask = cv::imread(mask_path.string(), cv::IMREAD_UNCHANGED);
      if (mask.empty() || mask.type() != CV_8UC1 || mask.rows != kMaskHeight || mask.cols != kMaskWidth) {
        throw Error(ErrorKind::CorruptRecord, "bad mask " + mask_path.string());
      }
      double max_class = 0;
      cv::minMaxLoc(mask, nullptr, &max_class);
      if (max_class > CharVocab::kNumChars) throw Error(ErrorKind::CorruptRecord, "mask class out of range");
      s.mask = torch::from_blob(mask.data, {mask.rows, mask.cols}, torch::kUInt8).clone();

      auto image_path = dir / "images" / (s.id + ".png");
      cv::Mat bgr = cv::imread(image_path.string(), cv::IMREAD_COLOR);
      if (bgr.empty() || bgr.rows != kImageHeight || bgr.cols != kImageWidth) {
        throw Error(ErrorKind::CorruptRecord, "bad image " + image_path.string());
      }
      cv::Mat rgb;
      cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
      rgb.convertTo(rgb, CV_32FC3, 1.0 / 255.0);
      s.image = mat_to_tensor(rgb);
      out.samples.push_back(std::move(s));
    } catch (const Error& e) {
      out.rejected.push_back({id, e.kind(), e.what()});
    } catch (const nlohmann::json::exception& e) {
      out.rejected.push_back({id, ErrorKind::CorruptRecord, e.what()});
    }
  }
  return out;
}

}  // namespace cam
