#include "vptsurv/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

#include "vptsurv/errors.hpp"

namespace vptsurv {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_fail(png_structp, png_const_charp msg) { throw FormatError(msg); }
void png_warn(png_structp, png_const_charp) {}

}  // namespace

void write_gray_png(const std::filesystem::path& path, const GrayPng& png) {
  if (png.bit_depth != 8 && png.bit_depth != 16) throw InvalidArgument("png: bit depth must be 8 or 16");
  if (png.codes.size() != static_cast<std::size_t>(png.height) * png.width) {
    throw InvalidArgument("png: code count does not match dimensions");
  }
  File file(std::fopen(path.c_str(), "wb"));
  if (!file) throw FormatError("png: cannot open " + path.string() + " for writing");

  png_structp writer = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  png_infop info = png_create_info_struct(writer);
  struct Guard {
    png_structp* w;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(w, i); }
  } guard{&writer, &info};

  png_init_io(writer, file.get());
  png_set_IHDR(writer, info, png.width, png.height, png.bit_depth, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(writer, info);

  const int bytes = png.bit_depth / 8;
  std::vector<png_byte> row(static_cast<std::size_t>(png.width) * bytes);
  for (int r = 0; r < png.height; ++r) {
    for (int c = 0; c < png.width; ++c) {
      const std::uint16_t v = png.codes[static_cast<std::size_t>(r) * png.width + c];
      if (bytes == 1) {
        if (v > 255) throw InvalidArgument("png: 8-bit code out of range");
        row[c] = static_cast<png_byte>(v);
      } else {
        row[2 * c] = static_cast<png_byte>(v >> 8);  // PNG samples are big-endian
        row[2 * c + 1] = static_cast<png_byte>(v & 0xff);
      }
    }
    png_write_row(writer, row.data());
  }
  png_write_end(writer, nullptr);
}

GrayPng read_gray_png(const std::filesystem::path& path) {
  File file(std::fopen(path.c_str(), "rb"));
  if (!file) throw FormatError("png: cannot open " + path.string());

  png_structp reader = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  png_infop info = png_create_info_struct(reader);
  struct Guard {
    png_structp* r;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(r, i, nullptr); }
  } guard{&reader, &info};

  png_init_io(reader, file.get());
  png_read_info(reader, info);
  GrayPng out;
  out.width = static_cast<int>(png_get_image_width(reader, info));
  out.height = static_cast<int>(png_get_image_height(reader, info));
  out.bit_depth = png_get_bit_depth(reader, info);
  if (png_get_color_type(reader, info) != PNG_COLOR_TYPE_GRAY ||
      (out.bit_depth != 8 && out.bit_depth != 16)) {
    throw FormatError("png: " + path.string() + " is not an 8/16-bit grayscale image");
  }
  const int bytes = out.bit_depth / 8;
  std::vector<png_byte> row(static_cast<std::size_t>(out.width) * bytes);
  out.codes.resize(static_cast<std::size_t>(out.width) * out.height);
  for (int r = 0; r < out.height; ++r) {
    png_read_row(reader, row.data(), nullptr);
    for (int c = 0; c < out.width; ++c) {
      out.codes[static_cast<std::size_t>(r) * out.width + c] =
          bytes == 1 ? row[c] : static_cast<std::uint16_t>((row[2 * c] << 8) | row[2 * c + 1]);
    }
  }
  png_read_end(reader, nullptr);
  return out;
}

}  // namespace vptsurv
