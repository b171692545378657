#include "vptsurv/image.hpp"

#include <algorithm>

#include "vptsurv/errors.hpp"

namespace vptsurv {

Image::Image(int h, int w, float fill) : height(h), width(w) {
  if (h < 0 || w < 0) throw InvalidArgument("Image: negative dimension");
  pixels.assign(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill);
}

Image Image::crop(int row, int col, int h, int w) const {
  Image out(h, w);
  for (int r = 0; r < h; ++r) {
    const int sr = row + r;
    if (sr < 0 || sr >= height) continue;
    for (int c = 0; c < w; ++c) {
      const int sc = col + c;
      if (sc < 0 || sc >= width) continue;
      out(r, c) = (*this)(sr, sc);
    }
  }
  return out;
}

void Image::paste(const Image& src, int row, int col) {
  for (int r = 0; r < src.height; ++r) {
    const int dr = row + r;
    if (dr < 0 || dr >= height) continue;
    for (int c = 0; c < src.width; ++c) {
      const int dc = col + c;
      if (dc < 0 || dc >= width) continue;
      (*this)(dr, dc) = src(r, c);
    }
  }
}

double Image::mean() const {
  if (pixels.empty()) return 0.0;
  double sum = 0.0;
  for (float v : pixels) sum += v;
  return sum / static_cast<double>(pixels.size());
}

double Image::variance() const {
  if (pixels.empty()) return 0.0;
  const double mu = mean();
  double acc = 0.0;
  for (float v : pixels) acc += (v - mu) * (v - mu);
  return acc / static_cast<double>(pixels.size());
}

}  // namespace vptsurv
