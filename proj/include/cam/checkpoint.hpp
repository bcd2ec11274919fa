#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cam/error.hpp"

namespace cam {

inline constexpr uint32_t kCheckpointSchema = 1;
inline constexpr char kCheckpointMagic[8] = {'C', 'A', 'M', 'C', 'K', 'P', 'T', '\0'};

/// Everything needed to resume training bit-for-bit. Tensors are kept in a
/// fixed order: model parameters, model buffers, optimizer moments, rng.
struct Checkpoint {
  uint32_t schema = kCheckpointSchema;
  std::string config_text;
  std::string vocab_hash;
  int64_t step = 0;
  uint64_t seed = 0;
  std::vector<std::pair<std::string, torch::Tensor>> tensors;

  const torch::Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
      if (n == name) return &t;
    }
    return nullptr;
  }
};

namespace detail {

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

inline void put_string(std::ostream& out, const std::string& s) {
  put<uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error(ErrorKind::CorruptRecord, "checkpoint truncated");
  return v;
}

inline std::string get_string(std::istream& in, uint64_t limit = uint64_t{1} << 32) {
  auto n = get<uint64_t>(in);
  if (n > limit) throw Error(ErrorKind::CorruptRecord, "checkpoint string length out of range");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw Error(ErrorKind::CorruptRecord, "checkpoint truncated");
  return s;
}

}  // namespace detail

inline void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::CorruptRecord, "cannot write " + tmp.string());
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::put<uint32_t>(out, ckpt.schema);
    detail::put_string(out, ckpt.config_text);
    detail::put_string(out, ckpt.vocab_hash);
    detail::put<int64_t>(out, ckpt.step);
    detail::put<uint64_t>(out, ckpt.seed);
    detail::put<uint64_t>(out, ckpt.tensors.size());
    for (const auto& [name, t] : ckpt.tensors) {
      auto c = t.detach().to(torch::kCPU).contiguous();
      detail::put_string(out, name);
      detail::put<int32_t>(out, static_cast<int32_t>(c.scalar_type()));
      detail::put<uint32_t>(out, static_cast<uint32_t>(c.dim()));
      for (int64_t d : c.sizes()) detail::put<int64_t>(out, d);
      const auto bytes = static_cast<uint64_t>(c.numel()) * c.element_size();
      detail::put<uint64_t>(out, bytes);
      out.write(static_cast<const char*>(c.data_ptr()), static_cast<std::streamsize>(bytes));
    }
    if (!out) throw Error(ErrorKind::CorruptRecord, "failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::DatasetMissing, "checkpoint not found: " + path.string());
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw Error(ErrorKind::CorruptRecord, path.string() + " is not a checkpoint");
  }
  Checkpoint ckpt;
  ckpt.schema = detail::get<uint32_t>(in);
  if (ckpt.schema != kCheckpointSchema) {
    throw Error(ErrorKind::SchemaVersionMismatch, "checkpoint schema " + std::to_string(ckpt.schema) + ", expected " +
                                                      std::to_string(kCheckpointSchema));
  }
  ckpt.config_text = detail::get_string(in);
  ckpt.vocab_hash = detail::get_string(in);
  ckpt.step = detail::get<int64_t>(in);
  ckpt.seed = detail::get<uint64_t>(in);
  const auto count = detail::get<uint64_t>(in);
  for (uint64_t i = 0; i < count; ++i) {
    auto name = detail::get_string(in, 4096);
    auto dtype = static_cast<torch::ScalarType>(detail::get<int32_t>(in));
    auto ndim = detail::get<uint32_t>(in);
    if (ndim > 8) throw Error(ErrorKind::CorruptRecord, "tensor " + name + " has implausible rank");
    std::vector<int64_t> dims(ndim);
    for (auto& d : dims) d = detail::get<int64_t>(in);
    const auto bytes = detail::get<uint64_t>(in);
    auto t = torch::empty(dims, torch::TensorOptions().dtype(dtype));
    if (bytes != static_cast<uint64_t>(t.numel()) * t.element_size()) {
      throw Error(ErrorKind::CorruptRecord, "tensor " + name + " byte count disagrees with its shape");
    }
    in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(bytes));
    if (!in) throw Error(ErrorKind::CorruptRecord, "checkpoint truncated in " + name);
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ckpt;
}

/// Appends model/<name> entries for parameters then buffers.
inline void capture_module(Checkpoint& ckpt, const torch::nn::Module& module) {
  for (const auto& p : module.named_parameters()) ckpt.tensors.emplace_back("model/" + p.key(), p.value().detach().clone());
  for (const auto& b : module.named_buffers()) ckpt.tensors.emplace_back("model/" + b.key(), b.value().detach().clone());
}

inline void restore_module(const Checkpoint& ckpt, torch::nn::Module& module) {
  torch::NoGradGuard guard;
  auto load = [&](const std::string& name, torch::Tensor& dst) {
    const torch::Tensor* src = ckpt.find("model/" + name);
    if (!src) throw Error(ErrorKind::CorruptRecord, "checkpoint lacks model/" + name);
    if (src->sizes() != dst.sizes()) {
      throw Error(ErrorKind::ShapeMismatch, "checkpoint tensor model/" + name + " has a different shape");
    }
    dst.copy_(*src);
  };
  for (auto& p : module.named_parameters()) load(p.key(), p.value());
  for (auto& b : module.named_buffers()) load(b.key(), b.value());
}

/// Appends optim/<param>/{exp_avg, exp_avg_sq, step} for every parameter
/// that has optimizer state, in parameter order.
inline void capture_optimizer(Checkpoint& ckpt, const torch::nn::Module& module, torch::optim::AdamW& optimizer) {
  auto& state = optimizer.state();
  for (const auto& p : module.named_parameters()) {
    auto it = state.find(p.value().unsafeGetTensorImpl());
    if (it == state.end()) continue;
    auto& s = static_cast<torch::optim::AdamWParamState&>(*it->second);
    const std::string base = "optim/" + p.key() + "/";
    ckpt.tensors.emplace_back(base + "exp_avg", s.exp_avg().detach().clone());
    ckpt.tensors.emplace_back(base + "exp_avg_sq", s.exp_avg_sq().detach().clone());
    ckpt.tensors.emplace_back(base + "step", torch::tensor(s.step(), torch::kLong));
  }
}

inline void restore_optimizer(const Checkpoint& ckpt, const torch::nn::Module& module, torch::optim::AdamW& optimizer) {
  auto& state = optimizer.state();
  state.clear();
  for (const auto& p : module.named_parameters()) {
    const std::string base = "optim/" + p.key() + "/";
    const torch::Tensor* m = ckpt.find(base + "exp_avg");
    const torch::Tensor* v = ckpt.find(base + "exp_avg_sq");
    const torch::Tensor* s = ckpt.find(base + "step");
    if (!m && !v && !s) continue;
    if (!m || !v || !s) throw Error(ErrorKind::CorruptRecord, "incomplete optimizer state for " + p.key());
    if (m->sizes() != p.value().sizes() || v->sizes() != p.value().sizes()) {
      throw Error(ErrorKind::ShapeMismatch, "optimizer state shape mismatch for " + p.key());
    }
    auto st = std::make_unique<torch::optim::AdamWParamState>();
    st->step(s->item<int64_t>());
    st->exp_avg(m->clone());
    st->exp_avg_sq(v->clone());
    state[p.value().unsafeGetTensorImpl()] = std::move(st);
  }
}

}  // namespace cam
