#pragma once

#include <compare>
#include <string>
#include <string_view>
#include <vector>

#include "vptsurv/image.hpp"

namespace vptsurv {

struct TileCoord {
  int row = 0;
  int col = 0;
  friend auto operator<=>(const TileCoord&, const TileCoord&) = default;
};

struct Tile {
  TileCoord coord;
  Image image;
};

/// Row-major grid of equally sized square tiles covering a slide image.
struct TileGrid {
  int tile_size = 0;
  int rows = 0;
  int cols = 0;
  std::string magnification = "20x";
  std::vector<Tile> tiles;  // rows * cols, row-major

  const Tile& at(TileCoord coord) const;
  bool contains(TileCoord coord) const {
    return coord.row >= 0 && coord.row < rows && coord.col >= 0 && coord.col < cols;
  }
  /// Concatenates tiles in grid order into the zero-padded slide image.
  Image assemble() const;
};

/// Splits `image` into tile_size squares, zero-padding the right and bottom
/// edges. tile_size must be >= 8 and a multiple of `patch_size`.
TileGrid tile_image(const Image& image, int tile_size, int patch_size);

/// Tiles whose intensity variance is >= threshold, in grid order.
/// Throws EmptySlide when nothing survives.
std::vector<Tile> filter_tissue_tiles(const TileGrid& grid, double variance_threshold);

/// 2x2 block anchored at `coord` (right, below and diagonal neighbours,
/// clamped at the grid edge), area-averaged back down to one tile.
Image build_scale_prompt(const TileGrid& grid, TileCoord coord);

/// High-pass filter: ifft(fft(image) * mask), where the mask zeroes every
/// frequency within cutoff_fraction of the Nyquist radius of DC.
Image build_structure_prompt(const Image& image, double cutoff_fraction);

inline constexpr double kDefaultStructureCutoff = 0.1;

enum class PromptKind { scale, structure };

std::string_view to_string(PromptKind kind);
/// Throws InvalidArgument for unknown names.
PromptKind prompt_kind_from_string(std::string_view name);

/// One prompt image per grid tile, in the grid's row-major order.
struct PromptSource {
  PromptKind kind = PromptKind::scale;
  std::vector<Image> images;
};

PromptSource make_scale_source(const TileGrid& grid);

/// Filters the assembled (padded) slide once and crops the result per tile.
PromptSource make_structure_source(const TileGrid& grid, double cutoff_fraction);

}  // namespace vptsurv
