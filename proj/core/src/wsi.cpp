#include "vptsurv/wsi.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <memory>

#include "vptsurv/errors.hpp"

namespace vptsurv {

const Tile& TileGrid::at(TileCoord coord) const {
  if (!contains(coord)) {
    throw InvalidArgument("TileGrid: coordinate (" + std::to_string(coord.row) + ", " +
                          std::to_string(coord.col) + ") outside grid");
  }
  return tiles[static_cast<std::size_t>(coord.row) * cols + coord.col];
}

Image TileGrid::assemble() const {
  Image out(rows * tile_size, cols * tile_size);
  for (const Tile& t : tiles) out.paste(t.image, t.coord.row * tile_size, t.coord.col * tile_size);
  return out;
}

TileGrid tile_image(const Image& image, int tile_size, int patch_size) {
  if (image.empty()) throw InvalidArgument("tile_image: empty image");
  if (patch_size < 1) throw InvalidArgument("tile_image: patch size must be positive");
  if (tile_size < 8) throw InvalidArgument("tile_image: tile size must be >= 8");
  if (tile_size % patch_size != 0) {
    throw InvalidArgument("tile_image: tile size " + std::to_string(tile_size) +
                          " is not a multiple of patch size " + std::to_string(patch_size));
  }
  TileGrid grid;
  grid.tile_size = tile_size;
  grid.rows = (image.height + tile_size - 1) / tile_size;
  grid.cols = (image.width + tile_size - 1) / tile_size;
  grid.tiles.reserve(static_cast<std::size_t>(grid.rows) * grid.cols);
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      grid.tiles.push_back(
          {TileCoord{r, c}, image.crop(r * tile_size, c * tile_size, tile_size, tile_size)});
    }
  }
  return grid;
}

std::vector<Tile> filter_tissue_tiles(const TileGrid& grid, double variance_threshold) {
  if (!(variance_threshold >= 0.0)) {
    throw InvalidArgument("filter_tissue_tiles: threshold must be >= 0");
  }
  std::vector<Tile> kept;
  for (const Tile& t : grid.tiles) {
    if (t.image.variance() >= variance_threshold) kept.push_back(t);
  }
  if (kept.empty()) throw EmptySlide("filter_tissue_tiles: no tile passed the tissue filter");
  return kept;
}

Image build_scale_prompt(const TileGrid& grid, TileCoord coord) {
  if (!grid.contains(coord)) throw InvalidArgument("build_scale_prompt: coordinate outside grid");
  const int n = grid.tile_size;
  const int down = std::min(coord.row + 1, grid.rows - 1);
  const int right = std::min(coord.col + 1, grid.cols - 1);
  Image block(2 * n, 2 * n);
  block.paste(grid.at({coord.row, coord.col}).image, 0, 0);
  block.paste(grid.at({coord.row, right}).image, 0, n);
  block.paste(grid.at({down, coord.col}).image, n, 0);
  block.paste(grid.at({down, right}).image, n, n);

  Image out(n, n);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const double sum = static_cast<double>(block(2 * r, 2 * c)) + block(2 * r, 2 * c + 1) +
                         block(2 * r + 1, 2 * c) + block(2 * r + 1, 2 * c + 1);
      out(r, c) = static_cast<float>(sum / 4.0);
    }
  }
  return out;
}

namespace {

struct FftwDeleter {
  void operator()(fftw_complex* p) const { fftw_free(p); }
};
using FftwBuffer = std::unique_ptr<fftw_complex[], FftwDeleter>;

FftwBuffer fftw_buffer(std::size_t n) {
  auto* p = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n));
  if (!p) throw std::bad_alloc();
  return FftwBuffer(p);
}

// Signed frequency index of DFT bin k for length n, normalised so that the
// Nyquist frequency has magnitude 1.
double normalized_frequency(int k, int n) {
  const int signed_k = k <= n / 2 ? k : k - n;
  return n > 1 ? 2.0 * static_cast<double>(signed_k) / static_cast<double>(n) : 0.0;
}

}  // namespace

Image build_structure_prompt(const Image& image, double cutoff_fraction) {
  if (!(cutoff_fraction > 0.0 && cutoff_fraction < 1.0)) {
    throw InvalidArgument("build_structure_prompt: cutoff fraction must lie in (0, 1)");
  }
  if (image.empty()) throw InvalidArgument("build_structure_prompt: empty image");
  const int h = image.height;
  const int w = image.width;
  const std::size_t n = image.size();

  FftwBuffer buf = fftw_buffer(n);
  for (std::size_t i = 0; i < n; ++i) {
    buf[i][0] = image.pixels[i];
    buf[i][1] = 0.0;
  }
  fftw_plan forward = fftw_plan_dft_2d(h, w, buf.get(), buf.get(), FFTW_FORWARD, FFTW_ESTIMATE);
  fftw_plan backward = fftw_plan_dft_2d(h, w, buf.get(), buf.get(), FFTW_BACKWARD, FFTW_ESTIMATE);
  fftw_execute(forward);

  const double cutoff_sq = cutoff_fraction * cutoff_fraction;
  for (int r = 0; r < h; ++r) {
    const double fy = normalized_frequency(r, h);
    for (int c = 0; c < w; ++c) {
      const double fx = normalized_frequency(c, w);
      if (fx * fx + fy * fy <= cutoff_sq) {
        const std::size_t i = static_cast<std::size_t>(r) * w + c;
        buf[i][0] = 0.0;
        buf[i][1] = 0.0;
      }
    }
  }
  fftw_execute(backward);
  fftw_destroy_plan(forward);
  fftw_destroy_plan(backward);

  Image out(h, w);
  double real_energy = 0.0;
  double imag_energy = 0.0;
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double re = buf[i][0] * scale;
    const double im = buf[i][1] * scale;
    real_energy += re * re;
    imag_energy += im * im;
    out.pixels[i] = static_cast<float>(re);
  }
  if (std::sqrt(imag_energy) > 1e-6 * std::max(std::sqrt(real_energy), 1e-300) &&
      std::sqrt(imag_energy) > 1e-12) {
    throw std::logic_error("build_structure_prompt: imaginary residue above tolerance");
  }
  return out;
}

std::string_view to_string(PromptKind kind) {
  return kind == PromptKind::scale ? "scale" : "structure";
}

PromptKind prompt_kind_from_string(std::string_view name) {
  if (name == "scale") return PromptKind::scale;
  if (name == "structure") return PromptKind::structure;
  throw InvalidArgument("unknown prompt source '" + std::string(name) + "'");
}

PromptSource make_scale_source(const TileGrid& grid) {
  PromptSource src{PromptKind::scale, {}};
  src.images.reserve(grid.tiles.size());
  for (const Tile& t : grid.tiles) src.images.push_back(build_scale_prompt(grid, t.coord));
  return src;
}

PromptSource make_structure_source(const TileGrid& grid, double cutoff_fraction) {
  const Image filtered = build_structure_prompt(grid.assemble(), cutoff_fraction);
  PromptSource src{PromptKind::structure, {}};
  src.images.reserve(grid.tiles.size());
  for (const Tile& t : grid.tiles) {
    src.images.push_back(filtered.crop(t.coord.row * grid.tile_size, t.coord.col * grid.tile_size,
                                       grid.tile_size, grid.tile_size));
  }
  return src;
}

}  // namespace vptsurv
