#pragma once

#include <gtest/gtest.h>
#include <torch/torch.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "cam/error.hpp"

/// Expects `stmt` to throw cam::Error of the given kind.
#define EXPECT_CAM_ERROR(stmt, expected_kind)                                        \
  do {                                                                               \
    try {                                                                            \
      stmt;                                                                          \
      ADD_FAILURE() << "expected " << cam::to_string(expected_kind) << ", no throw"; \
    } catch (const cam::Error& e) {                                                  \
      EXPECT_EQ(e.kind(), expected_kind) << e.what();                                \
    }                                                                                \
  } while (0)

namespace cam::test {

inline double max_abs_diff(const torch::Tensor& a, const torch::Tensor& b) {
  return (a.to(torch::kFloat64) - b.to(torch::kFloat64)).abs().max().item<double>();
}

/// Scalar-loop bilinear sampler: -1/+1 are the first/last pixel centres,
/// neighbours outside the image contribute zero.
inline torch::Tensor scalar_grid_sample(const torch::Tensor& input, const torch::Tensor& grid) {
  auto in = input.to(torch::kFloat64).contiguous();
  auto g = grid.to(torch::kFloat64).contiguous();
  const int64_t B = in.size(0), C = in.size(1), H = in.size(2), W = in.size(3);
  const int64_t h = g.size(1), w = g.size(2);
  auto out = torch::zeros({B, C, h, w}, torch::kFloat64);
  auto I = in.accessor<double, 4>();
  auto G = g.accessor<double, 4>();
  auto O = out.accessor<double, 4>();
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t i = 0; i < h; ++i) {
      for (int64_t j = 0; j < w; ++j) {
        const double x = (G[b][i][j][0] + 1) / 2 * (W - 1);
        const double y = (G[b][i][j][1] + 1) / 2 * (H - 1);
        const double x0 = std::floor(x), y0 = std::floor(y);
        for (int64_t c = 0; c < C; ++c) {
          double acc = 0;
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const int64_t xi = static_cast<int64_t>(x0) + dx, yi = static_cast<int64_t>(y0) + dy;
              if (xi < 0 || xi >= W || yi < 0 || yi >= H) continue;
              const double wx = dx ? x - x0 : 1 - (x - x0);
              const double wy = dy ? y - y0 : 1 - (y - y0);
              acc += wx * wy * I[b][c][yi][xi];
            }
          }
          O[b][c][i][j] = acc;
        }
      }
    }
  }
  return out;
}

/// Fresh, empty scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("cam_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace cam::test
