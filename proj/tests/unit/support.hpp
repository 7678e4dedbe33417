#pragma once

#include <torch/torch.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "doctest.h"

namespace advss::test {

/// Scratch directory for one test case, emptied on creation.
inline std::filesystem::path scratch(const std::string& name) {
  const char* root = std::getenv("ADVSS_TEST_TMP");
  auto dir = std::filesystem::path(root ? root : std::filesystem::temp_directory_path().string()) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline bool bitwise_equal(const torch::Tensor& a, const torch::Tensor& b) {
  return a.sizes() == b.sizes() && a.scalar_type() == b.scalar_type() && torch::equal(a, b);
}

inline double max_abs_diff(const torch::Tensor& a, const torch::Tensor& b) {
  return (a.to(torch::kFloat64) - b.to(torch::kFloat64)).abs().max().item<double>();
}

}  // namespace advss::test

using advss::test::bitwise_equal;
using advss::test::max_abs_diff;
