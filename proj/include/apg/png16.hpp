#pragma once

// Single-channel grayscale PNG (8- or 16-bit) through libpng.

#include <png.h>

#include <csetjmp>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "apg/raster.hpp"

namespace apg::png {

inline bool has_signature(const std::vector<std::uint8_t>& bytes) {
  return bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0;
}

namespace detail {

struct Reader {
  const std::vector<std::uint8_t>* bytes;
  std::size_t pos;
};

inline void read_fn(png_structp png, png_bytep out, png_size_t n) {
  auto* r = static_cast<Reader*>(png_get_io_ptr(png));
  if (r->pos + n > r->bytes->size()) png_error(png, "read past end of buffer");
  std::memcpy(out, r->bytes->data() + r->pos, n);
  r->pos += n;
}

inline void write_fn(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + n);
}

inline void flush_fn(png_structp) {}

// setjmp-guarded bodies: no objects with destructors live in these frames.
inline bool decode(const std::vector<std::uint8_t>& bytes, std::vector<std::uint16_t>& pixels, int& height,
                   int& width, std::vector<std::uint8_t>& rowbuf, char* err) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) return false;
  png_infop info = png_create_info_struct(png);
  Reader reader{&bytes, 0};
  if (info == nullptr || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::strcpy(err, "libpng decode failure");
    return false;
  }
  png_set_read_fn(png, &reader, read_fn);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color != PNG_COLOR_TYPE_GRAY || (depth != 8 && depth != 16)) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::strcpy(err, "expected single-channel 8/16-bit grayscale");
    return false;
  }
  if (depth == 16) png_set_swap(png);
  png_read_update_info(png, info);
  height = static_cast<int>(png_get_image_height(png, info));
  width = static_cast<int>(png_get_image_width(png, info));
  const std::size_t stride = png_get_rowbytes(png, info);
  pixels.assign(static_cast<std::size_t>(height) * width, 0);
  rowbuf.assign(stride, 0);
  for (int y = 0; y < height; ++y) {
    png_read_row(png, rowbuf.data(), nullptr);
    for (int x = 0; x < width; ++x) {
      std::uint16_t v = 0;
      if (depth == 16) {
        std::memcpy(&v, rowbuf.data() + 2 * x, 2);
      } else {
        v = rowbuf[x];
      }
      pixels[static_cast<std::size_t>(y) * width + x] = v;
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

inline bool encode(const std::vector<std::uint16_t>& pixels, int height, int width,
                   std::vector<std::uint8_t>& out) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) return false;
  png_infop info = png_create_info_struct(png);
  if (info == nullptr || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_set_write_fn(png, &out, write_fn, flush_fn);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 16,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_set_swap(png);
  for (int y = 0; y < height; ++y) {
    auto* row = const_cast<std::uint16_t*>(pixels.data() + static_cast<std::size_t>(y) * width);
    png_write_row(png, reinterpret_cast<png_bytep>(row));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

}  // namespace detail

inline Raster<std::uint16_t> decode_gray(const std::vector<std::uint8_t>& bytes) {
  std::vector<std::uint16_t> pixels;
  std::vector<std::uint8_t> rowbuf;
  int h = 0, w = 0;
  char err[128] = "libpng init failure";
  if (!detail::decode(bytes, pixels, h, w, rowbuf, err)) throw Error(ErrorCode::kUnsupportedFormat, err);
  return Raster<std::uint16_t>(Shape{h, w}, std::move(pixels));
}

inline std::vector<std::uint8_t> encode_gray16(const Raster<std::uint16_t>& image) {
  std::vector<std::uint8_t> out;
  if (!detail::encode(image.storage(), image.height(), image.width(), out)) {
    throw Error(ErrorCode::kIo, "libpng encode failure");
  }
  return out;
}

}  // namespace apg::png
