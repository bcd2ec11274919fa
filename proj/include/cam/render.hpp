#pragma once

#include <torch/torch.h>

#include <opencv2/core.hpp>
#include <opencv2/freetype.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "cam/error.hpp"
#include "cam/vocab.hpp"

namespace cam {

inline constexpr int kMaskHeight = 32;
inline constexpr int kMaskWidth = 128;
inline constexpr int kImageHeight = 64;
inline constexpr int kImageWidth = 256;

inline constexpr const char* kDefaultFontPath = "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf";

enum class SlotLayout { Proportional, Monospaced };

struct FontSpec {
  std::string font_face = kDefaultFontPath;
  std::string weight_tag = "regular";  // "regular" or "bold"
  SlotLayout slot_layout = SlotLayout::Proportional;

  /// Number of 3x3 dilation passes applied to every glyph.
  int stroke() const { return weight_tag == "bold" ? 1 : 0; }
};

namespace detail {

// FreeType2 handles are not thread-safe; one cache per thread.
inline cv::freetype::FreeType2& font_handle(const std::string& path) {
  thread_local std::map<std::string, cv::Ptr<cv::freetype::FreeType2>> cache;
  auto it = cache.find(path);
  if (it == cache.end()) {
    if (!std::filesystem::exists(path)) {
      throw Error(ErrorKind::InvalidConfig, "font file not found: " + path);
    }
    auto ft = cv::freetype::createFreeType2();
    ft->loadFontData(path, 0);
    it = cache.emplace(path, ft).first;
  }
  return *it->second;
}

// Binary coverage of one string drawn with its baseline-left corner at origin.
inline cv::Mat draw_binary(cv::freetype::FreeType2& ft, const std::string& text, cv::Size canvas,
                           cv::Point origin, int font_height, int stroke) {
  cv::Mat rgb(canvas, CV_8UC3, cv::Scalar::all(0));
  ft.putText(rgb, text, origin, font_height, cv::Scalar::all(255), -1, cv::LINE_8, true);
  cv::Mat gray;
  cv::extractChannel(rgb, gray, 0);
  cv::Mat bin = gray > 127;
  if (stroke > 0) {
    cv::dilate(bin, bin, cv::getStructuringElement(cv::MORPH_RECT, {3, 3}), {-1, -1}, stroke);
  }
  return bin;
}

struct GlyphLayout {
  int font_height = 0;
  std::vector<int> x;  // per-character pen position on the work canvas
  cv::Rect bbox;       // union of glyph pixels on the work canvas
};

inline constexpr int kWorkPad = 4;

// Lays characters out on a generous work canvas; the caller crops bbox.
inline GlyphLayout layout_glyphs(cv::freetype::FreeType2& ft, const std::string& text, int font_height,
                                 SlotLayout layout, int stroke, cv::Size work, int baseline) {
  GlyphLayout g;
  g.font_height = font_height;
  const int n = static_cast<int>(text.size());
  if (layout == SlotLayout::Proportional) {
    for (int i = 0; i < n; ++i) {
      int base = 0;
      int adv = i == 0 ? 0 : ft.getTextSize(text.substr(0, i), font_height, -1, &base).width;
      g.x.push_back(kWorkPad * 4 + adv);
    }
  } else {
    int slot = 0;
    for (char c : text) {
      int base = 0;
      slot = std::max(slot, ft.getTextSize(std::string(1, c), font_height, -1, &base).width);
    }
    for (int i = 0; i < n; ++i) {
      int base = 0;
      int w = ft.getTextSize(text.substr(i, 1), font_height, -1, &base).width;
      g.x.push_back(kWorkPad * 4 + i * slot + (slot - w) / 2);
    }
  }
  cv::Mat cover(work, CV_8UC1, cv::Scalar(0));
  for (int i = 0; i < n; ++i) {
    cover |= draw_binary(ft, text.substr(i, 1), work, {g.x[i], baseline}, font_height, stroke);
  }
  std::vector<cv::Point> pts;
  cv::findNonZero(cover, pts);
  g.bbox = pts.empty() ? cv::Rect() : cv::boundingRect(pts);
  return g;
}

}  // namespace detail

/// Renders the canonical class-aware glyph mask of a label.
///
/// The lowercased word is drawn left to right, vertically centered and scaled
/// to leave at least one pixel of margin. Every pixel holds the class index of
/// the glyph covering it (later characters win on overlap), else 0.
inline torch::Tensor render_canonical_mask(std::string_view label, const FontSpec& font = {},
                                           int height = kMaskHeight, int width = kMaskWidth,
                                           const CharVocab& vocab = default_vocab()) {
  if (label.empty()) throw Error(ErrorKind::UnknownCharacter, "empty label");
  vocab.encode(label);  // validates characters and length
  const std::string text = vocab.normalize(label);
  auto& ft = detail::font_handle(font.font_face);
  const int n = static_cast<int>(text.size());
  const int stroke = font.stroke();

  const int max_w = width - 2;
  const int max_h = height - 2;
  int fh = height;
  detail::GlyphLayout layout;
  cv::Size work;
  int baseline = 0;
  for (int attempt = 0; attempt < 64; ++attempt) {
    work = cv::Size(fh * (n + 2) + 8 * detail::kWorkPad, fh * 3);
    baseline = fh * 2;
    layout = detail::layout_glyphs(ft, text, fh, font.slot_layout, stroke, work, baseline);
    const auto& b = layout.bbox;
    if (b.width <= max_w && b.height <= max_h) break;
    double scale = std::min(static_cast<double>(max_w) / b.width, static_cast<double>(max_h) / b.height);
    int next = static_cast<int>(std::floor(fh * std::min(scale, 0.97)));
    fh = std::max(1, std::min(fh - 1, next));
  }
  const auto& b = layout.bbox;
  if (b.width > max_w || b.height > max_h || b.area() == 0) {
    throw Error(ErrorKind::LabelTooLong, "cannot fit '" + text + "' into " + std::to_string(height) + "x" +
                                             std::to_string(width));
  }

  cv::Mat classes(work, CV_8UC1, cv::Scalar(0));
  for (int i = 0; i < n; ++i) {
    cv::Mat glyph = detail::draw_binary(ft, text.substr(i, 1), work, {layout.x[i], baseline}, fh, stroke);
    classes.setTo(cv::Scalar(vocab.index_of(text[i])), glyph);
  }
  cv::Mat out(height, width, CV_8UC1, cv::Scalar(0));
  int ox = (width - b.width) / 2;
  int oy = (height - b.height) / 2;
  classes(b).copyTo(out(cv::Rect(ox, oy, b.width, b.height)));
  return torch::from_blob(out.data, {height, width}, torch::kUInt8).clone();
}

/// Knobs of the synthetic image engine. All-zero magnitudes with
/// randomize_colors off give a plain dark glyph on a uniform light background.
struct SynthConfig {
  bool randomize_colors = true;
  double texture_strength = 0.15;   // amplitude of background texture
  double scale_min = 0.75;          // text height fraction lower bound
  double max_rotation_deg = 4.0;
  double max_shear = 0.15;
  double max_curve = 0.12;          // sinusoid amplitude as a fraction of height
  double max_jitter = 0.08;         // placement jitter as a fraction of canvas

  static SynthConfig plain() {
    SynthConfig c;
    c.randomize_colors = false;
    c.texture_strength = 0;
    c.scale_min = 1.0;
    c.max_rotation_deg = 0;
    c.max_shear = 0;
    c.max_curve = 0;
    c.max_jitter = 0;
    return c;
  }
};

/// CHW float tensor in [0,1] <-> HWC CV_32FC3 (RGB channel order).
inline cv::Mat tensor_to_mat(const torch::Tensor& chw) {
  auto hwc = chw.detach().to(torch::kFloat32).permute({1, 2, 0}).contiguous();
  cv::Mat m(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_32FC3, hwc.data_ptr<float>());
  return m.clone();
}

inline torch::Tensor mat_to_tensor(const cv::Mat& hwc) {
  cv::Mat m = hwc.isContinuous() ? hwc : hwc.clone();
  return torch::from_blob(m.data, {m.rows, m.cols, 3}, torch::kFloat32).permute({2, 0, 1}).contiguous().clone();
}

/// Rounds to 8-bit levels so PNG storage is lossless.
inline torch::Tensor quantize_u8(const torch::Tensor& img) {
  return (img.clamp(0, 1) * 255.0).round() / 255.0;
}

/// Renders a label into a styled 3x64x256 image; deterministic in the rng state.
inline torch::Tensor synthesize_image(std::string_view label, const FontSpec& font, std::mt19937_64& rng,
                                      const SynthConfig& cfg = {}, const CharVocab& vocab = default_vocab()) {
  if (label.empty()) throw Error(ErrorKind::UnknownCharacter, "empty label");
  vocab.encode(label);
  const std::string text(label);
  const int H = kImageHeight, W = kImageWidth;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

  // Colours.
  cv::Vec3f bg(1.f, 1.f, 1.f), fg(0.f, 0.f, 0.f);
  if (cfg.randomize_colors) {
    for (int attempt = 0; attempt < 32; ++attempt) {
      for (int c = 0; c < 3; ++c) {
        bg[c] = static_cast<float>(u01(rng));
        fg[c] = static_cast<float>(u01(rng));
      }
      auto luma = [](const cv::Vec3f& v) { return 0.299f * v[0] + 0.587f * v[1] + 0.114f * v[2]; };
      if (std::abs(luma(bg) - luma(fg)) >= 0.4f) break;
    }
  }

  // Background with a low-frequency texture.
  cv::Mat canvas(H, W, CV_32FC3, cv::Scalar(bg[0], bg[1], bg[2]));
  if (cfg.texture_strength > 0) {
    cv::Mat tex(H, W, CV_32FC1, cv::Scalar(0));
    double gx = uniform(-1, 1), gy = uniform(-1, 1);
    int blobs = 3 + static_cast<int>(u01(rng) * 4);
    std::vector<std::array<double, 4>> bl;
    for (int k = 0; k < blobs; ++k) bl.push_back({uniform(0, W), uniform(0, H), uniform(8, 40), uniform(-1, 1)});
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        double v = 0.5 * (gx * (x / double(W) - 0.5) + gy * (y / double(H) - 0.5));
        for (const auto& b : bl) {
          double d2 = ((x - b[0]) * (x - b[0]) + (y - b[1]) * (y - b[1])) / (b[2] * b[2]);
          v += 0.5 * b[3] * std::exp(-d2);
        }
        tex.at<float>(y, x) = static_cast<float>(v * cfg.texture_strength);
      }
    }
    std::vector<cv::Mat> ch;
    cv::split(canvas, ch);
    for (auto& c : ch) c += tex;
    cv::merge(ch, canvas);
  }

  // Text alpha, fitted to the canvas.
  auto& ft = detail::font_handle(font.font_face);
  double scale = uniform(cfg.scale_min, 1.0);
  int fh = static_cast<int>(H * 0.7 * scale);
  int base = 0;
  cv::Size ts = ft.getTextSize(text, fh, -1, &base);
  double fit = std::min((W * 0.92) / std::max(1, ts.width), (H * 0.8) / std::max(1, ts.height + base));
  if (fit < 1.0) {
    fh = std::max(6, static_cast<int>(fh * fit));
    ts = ft.getTextSize(text, fh, -1, &base);
  }
  int ox = (W - ts.width) / 2 + static_cast<int>(uniform(-cfg.max_jitter, cfg.max_jitter) * W);
  int oy = (H + ts.height) / 2 - base / 2 + static_cast<int>(uniform(-cfg.max_jitter, cfg.max_jitter) * H);
  cv::Mat rgb(H, W, CV_8UC3, cv::Scalar::all(0));
  ft.putText(rgb, text, {ox, oy}, fh, cv::Scalar::all(255), -1, cv::LINE_AA, true);
  cv::Mat alpha8, alpha;
  cv::extractChannel(rgb, alpha8, 0);
  if (font.stroke() > 0) cv::dilate(alpha8, alpha8, cv::getStructuringElement(cv::MORPH_RECT, {3, 3}));
  alpha8.convertTo(alpha, CV_32F, 1.0 / 255.0);

  // Geometry: rotation + shear + sinusoidal curve, applied as one remap.
  double angle = uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg) * CV_PI / 180.0;
  double shear = uniform(-cfg.max_shear, cfg.max_shear);
  double curve = uniform(-cfg.max_curve, cfg.max_curve) * H;
  if (angle != 0 || shear != 0 || curve != 0) {
    cv::Mat mx(H, W, CV_32FC1), my(H, W, CV_32FC1);
    const double cx = W / 2.0, cy = H / 2.0, ca = std::cos(angle), sa = std::sin(angle);
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        double dx = x - cx, dy = y - cy;
        double sx = ca * dx + sa * dy;
        double sy = -sa * dx + ca * dy;
        sx += shear * sy;
        double t = (x / double(W - 1)) * 2.0 - 1.0;
        sy -= curve * (1.0 - t * t);
        mx.at<float>(y, x) = static_cast<float>(sx + cx);
        my.at<float>(y, x) = static_cast<float>(sy + cy);
      }
    }
    cv::Mat warped;
    cv::remap(alpha, warped, mx, my, cv::INTER_LINEAR, cv::BORDER_CONSTANT, cv::Scalar(0));
    alpha = warped;
  }

  // Composite.
  cv::Mat out(H, W, CV_32FC3);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      float a = alpha.at<float>(y, x);
      const auto& b = canvas.at<cv::Vec3f>(y, x);
      out.at<cv::Vec3f>(y, x) = b * (1.f - a) + fg * a;
    }
  }
  return quantize_u8(mat_to_tensor(out));
}

}  // namespace cam
