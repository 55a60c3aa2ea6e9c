#include "fsda/image_io.hpp"

#include <csetjmp>
#include <cstdio>
#include <memory>
#include <string>

#include <png.h>

#include "fsda/errors.hpp"

namespace fsda {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_fail(const std::filesystem::path& path, const std::string& what) {
  throw IoError(path.string() + ": " + what);
}

}  // namespace

RawImage make_raw(int width, int height, int channels, int bit_depth) {
  RawImage img;
  img.width = width;
  img.height = height;
  img.channels = channels;
  img.bit_depth = bit_depth;
  img.samples.assign(static_cast<std::size_t>(width) * height * channels, 0);
  return img;
}

RawImage read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) png_fail(path, "cannot open file");
  png_byte header[8];
  if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
    png_fail(path, "not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) png_fail(path, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    png_fail(path, "png_create_info_struct failed");
  }
  RawImage img;
  std::vector<png_byte> buffer;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    png_fail(path, "corrupt PNG data");
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color_type = png_get_color_type(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  if (color_type != PNG_COLOR_TYPE_GRAY && color_type != PNG_COLOR_TYPE_RGB) {
    png_destroy_read_struct(&png, &info, nullptr);
    png_fail(path, "unsupported color type (expected gray or RGB)");
  }
  if (bit_depth != 8 && bit_depth != 16) {
    png_destroy_read_struct(&png, &info, nullptr);
    png_fail(path, "unsupported bit depth");
  }
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.channels = color_type == PNG_COLOR_TYPE_RGB ? 3 : 1;
  img.bit_depth = bit_depth;
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * img.height);
  rows.resize(img.height);
  for (int y = 0; y < img.height; ++y) rows[y] = buffer.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const std::size_t n = static_cast<std::size_t>(img.width) * img.height * img.channels;
  img.samples.resize(n);
  for (int y = 0; y < img.height; ++y) {
    const png_byte* row = rows[y];
    const std::size_t per_row = static_cast<std::size_t>(img.width) * img.channels;
    for (std::size_t i = 0; i < per_row; ++i) {
      img.samples[y * per_row + i] =
          bit_depth == 16 ? static_cast<std::uint16_t>((row[2 * i] << 8) | row[2 * i + 1]) : row[i];
    }
  }
  return img;
}

void write_png(const std::filesystem::path& path, const RawImage& img) {
  if (img.channels != 1 && img.channels != 3) png_fail(path, "only 1 or 3 channels supported");
  if (img.bit_depth != 8 && img.bit_depth != 16) png_fail(path, "only 8 or 16 bit supported");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) png_fail(path, "cannot open file for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) png_fail(path, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    png_fail(path, "png_create_info_struct failed");
  }
  const std::size_t per_row = static_cast<std::size_t>(img.width) * img.channels;
  const std::size_t bytes = img.bit_depth == 16 ? 2 : 1;
  std::vector<png_byte> buffer(per_row * bytes * img.height);
  for (int y = 0; y < img.height; ++y) {
    for (std::size_t i = 0; i < per_row; ++i) {
      const std::uint16_t s = img.samples[y * per_row + i];
      png_byte* dst = buffer.data() + (y * per_row + i) * bytes;
      if (bytes == 2) {
        dst[0] = static_cast<png_byte>(s >> 8);
        dst[1] = static_cast<png_byte>(s & 0xff);
      } else {
        dst[0] = static_cast<png_byte>(s);
      }
    }
  }
  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y) rows[y] = buffer.data() + y * per_row * bytes;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    png_fail(path, "write failed");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.width, img.height, img.bit_depth,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(fp.get()) != 0) png_fail(path, "flush failed");
}

}  // namespace fsda
