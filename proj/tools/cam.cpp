#include <CLI11.hpp>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include "cam/cam.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitVerification = 2;
constexpr int kExitRuntime = 3;

int cmd_synth(const fs::path& out, int64_t n, uint64_t seed, const std::string& font, bool plain) {
  cam::FontSpec spec;
  spec.font_face = font;
  auto samples = cam::synthesize_corpus(n, seed, spec, plain ? cam::SynthConfig::plain() : cam::SynthConfig{});
  cam::write_dataset(out, samples);
  std::cout << "wrote " << samples.size() << " samples to " << out << "\n";
  return kExitOk;
}

std::vector<cam::TextSample> load_training_data(const fs::path& dir) {
  if (!fs::exists(dir)) throw cam::Error(cam::ErrorKind::DatasetMissing, "no dataset at " + dir.string());
  auto data = cam::read_dataset(dir);
  for (const auto& r : data.rejected) {
    std::cerr << "rejected " << r.id << " (" << cam::to_string(r.kind) << "): " << r.message << "\n";
  }
  if (data.samples.empty()) throw cam::Error(cam::ErrorKind::DatasetMissing, "dataset " + dir.string() + " is empty");
  if (!data.vocab_hash.empty() && data.vocab_hash != cam::default_vocab().hash()) {
    throw cam::Error(cam::ErrorKind::VocabMismatch, "dataset vocabulary differs from this build");
  }
  return std::move(data.samples);
}

int cmd_train(const std::string& config, const fs::path& data_dir, const fs::path& out, const std::string& resume) {
  auto data = load_training_data(data_dir);
  auto trainer = resume.empty()
                     ? cam::Trainer(config.empty() ? cam::TrainConfig{} : cam::TrainConfig::load(config), data, out)
                     : cam::Trainer::resume(resume, data, out);
  std::cout << "training " << trainer.config().variant << ": " << trainer.model()->parameter_count()
            << " parameters, steps " << trainer.step() << ".." << trainer.total_steps() << "\n";
  trainer.run(std::nullopt, true);
  return kExitOk;
}

int cmd_eval(const fs::path& ckpt, const fs::path& data, const std::string& report_path, const std::string& masks) {
  auto report = cam::evaluate(ckpt, data, masks);
  auto json = report.to_json();
  if (!report_path.empty()) std::ofstream(report_path) << json.dump(2) << "\n";
  std::cout << "word_acc " << report.word_acc << "\nseg_pixel_acc " << report.seg_pixel_acc << "\n";
  return kExitOk;
}

int cmd_export_masks(const fs::path& ckpt, const fs::path& data, const fs::path& out) {
  auto report = cam::evaluate(ckpt, data, out);
  std::cout << "wrote " << report.predictions.size() << " masks to " << out << "\n";
  return kExitOk;
}

int cmd_infer(const fs::path& ckpt, const std::vector<std::string>& images) {
  auto model = cam::load_model(ckpt);
  for (const auto& path : images) {
    cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
    if (bgr.empty()) throw cam::Error(cam::ErrorKind::CorruptRecord, "cannot read image " + path);
    cv::Mat rgb;
    cv::resize(bgr, rgb, cv::Size(cam::kImageWidth, cam::kImageHeight), 0, 0, cv::INTER_AREA);
    cv::cvtColor(rgb, rgb, cv::COLOR_BGR2RGB);
    rgb.convertTo(rgb, CV_32FC3, 1.0 / 255.0);
    auto words = model->recognize(cam::mat_to_tensor(rgb).unsqueeze(0));
    std::cout << path << "\t" << words[0] << "\n";
  }
  return kExitOk;
}

int cmd_gradcheck(const std::string& module, uint64_t seed) {
  std::vector<std::string> modules = module.empty() ? cam::gradcheck_modules() : std::vector<std::string>{module};
  cam::GradcheckOptions opt;
  opt.seed = seed;
  bool all = true;
  std::cout << std::left << std::setw(12) << "module" << std::setw(9) << "entries" << std::setw(16) << "max_rel_err"
            << "result\n";
  for (const auto& m : modules) {
    auto r = cam::gradcheck_module(m, opt);
    all = all && r.passed;
    std::cout << std::setw(12) << r.module << std::setw(9) << r.checked << std::setw(16) << std::scientific
              << std::setprecision(3) << r.max_rel_err << std::defaultfloat << (r.passed ? "PASS" : "FAIL");
    if (!r.passed) std::cout << "  worst " << r.worst;
    std::cout << "\n";
  }
  return all ? kExitOk : kExitVerification;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CAM scene-text recognizer"};
  app.require_subcommand(1);

  std::string out, data, config, ckpt, font = cam::kDefaultFontPath, module, report, masks, resume;
  int64_t n = 256;
  uint64_t seed = 0;
  bool plain = false;
  std::vector<std::string> images;

  auto* synth = app.add_subcommand("synth", "Render a synthetic dataset");
  synth->add_option("--out", out, "Output directory")->required();
  synth->add_option("--n", n, "Number of samples")->check(CLI::PositiveNumber);
  synth->add_option("--seed", seed, "Random seed");
  synth->add_option("--font", font, "TrueType font file");
  synth->add_flag("--plain", plain, "Black on white, no geometric distortion");

  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", config, "Key-value config file");
  train->add_option("--data", data, "Dataset directory")->required();
  train->add_option("--out", out, "Output directory for metrics and checkpoints")->required();
  train->add_option("--resume", resume, "Checkpoint to resume from");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  eval->add_option("--data", data, "Dataset directory")->required();
  eval->add_option("--report", report, "Write the JSON report here");
  eval->add_option("--masks", masks, "Also write predicted masks to this directory");

  auto* infer = app.add_subcommand("infer", "Recognize text in images");
  infer->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  infer->add_option("images", images, "Image files")->required();

  auto* grad = app.add_subcommand("gradcheck", "Compare analytic and numerical gradients");
  grad->add_option("--module", module, "One of rectifier, backbone, glyph_seg, align_fuse, decoder, objective");
  grad->add_option("--seed", seed, "Random seed");

  auto* exportm = app.add_subcommand("export-masks", "Write predicted argmax masks as PNGs");
  exportm->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  exportm->add_option("--data", data, "Dataset directory")->required();
  exportm->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(out, n, seed, font, plain);
    if (*train) return cmd_train(config, data, out, resume);
    if (*eval) return cmd_eval(ckpt, data, report, masks);
    if (*infer) return cmd_infer(ckpt, images);
    if (*grad) {
      if (!module.empty()) {
        const auto& known = cam::gradcheck_modules();
        if (std::find(known.begin(), known.end(), module) == known.end()) {
          std::cerr << "unknown module '" << module << "'\n";
          return kExitUsage;
        }
      }
      return cmd_gradcheck(module, seed);
    }
    if (*exportm) return cmd_export_masks(ckpt, data, out);
  } catch (const cam::Error& e) {
    std::cerr << "error [" << cam::to_string(e.kind()) << "]: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
