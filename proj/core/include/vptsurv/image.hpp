#pragma once

#include <cstddef>
#include <vector>

namespace vptsurv {

/// Single-channel image, row-major, intensities nominally in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, float fill = 0.0f);

  bool empty() const { return pixels.empty(); }
  std::size_t size() const { return pixels.size(); }

  float& operator()(int row, int col) { return pixels[static_cast<std::size_t>(row) * width + col]; }
  float operator()(int row, int col) const {
    return pixels[static_cast<std::size_t>(row) * width + col];
  }

  /// Copy of the h x w window at (row, col); out-of-bounds pixels are zero.
  Image crop(int row, int col, int h, int w) const;

  /// Writes `src` with its top-left corner at (row, col), clipping at edges.
  void paste(const Image& src, int row, int col);

  double mean() const;
  double variance() const;

  friend bool operator==(const Image&, const Image&) = default;
};

}  // namespace vptsurv
