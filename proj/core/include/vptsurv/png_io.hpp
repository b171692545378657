#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace vptsurv {

/// Raw grayscale PNG payload: integer sample codes and their bit depth.
struct GrayPng {
  int height = 0;
  int width = 0;
  int bit_depth = 8;  // 8 or 16
  std::vector<std::uint16_t> codes;
};

void write_gray_png(const std::filesystem::path& path, const GrayPng& png);
GrayPng read_gray_png(const std::filesystem::path& path);

}  // namespace vptsurv
