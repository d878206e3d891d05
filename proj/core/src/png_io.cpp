#include "fseg/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

namespace fseg {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

[[noreturn]] void png_abort(png_structp, png_const_charp msg) {
  throw ValidationError(std::string("png: ") + (msg ? msg : "unknown error"));
}

void png_warn(png_structp, png_const_charp) {}

ImageU8 read_png_impl(const std::string& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw ValidationError("png: cannot open " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                           png_abort, png_warn);
  if (!png) throw Error("png: read struct allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error("png: info struct allocation failed");
  }

  ImageU8 image;
  try {
    png_init_io(png, file.get());
    png_read_info(png, info);

    const png_uint_32 width = png_get_image_width(png, info);
    const png_uint_32 height = png_get_image_height(png, info);
    const int bit_depth = png_get_bit_depth(png, info);
    const int color_type = png_get_color_type(png, info);

    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8)
      png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const int channels = png_get_channels(png, info);
    if (channels != 1 && channels != 3)
      throw ValidationError("png: unsupported channel count in " + path);

    image = ImageU8(static_cast<int>(height), static_cast<int>(width), channels);
    std::vector<png_bytep> rows(height);
    const size_t stride = static_cast<size_t>(width) * channels;
    for (png_uint_32 y = 0; y < height; ++y)
      rows[y] = image.data.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

}  // namespace

ImageU8 read_png(const std::string& path) { return read_png_impl(path); }

void write_png(const std::string& path, const ImageU8& image) {
  if (image.empty()) throw ValidationError("png: refusing to write empty image");
  if (image.channels != 1 && image.channels != 3)
    throw ValidationError("png: only 1- or 3-channel images are written");

  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw ValidationError("png: cannot create " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            png_abort, png_warn);
  if (!png) throw Error("png: write struct allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("png: info struct allocation failed");
  }

  try {
    png_init_io(png, file.get());
    png_set_compression_level(png, 6);
    const int color_type = image.channels == 1 ? PNG_COLOR_TYPE_GRAY
                                               : PNG_COLOR_TYPE_RGB;
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
                 static_cast<png_uint_32>(image.height), 8, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<png_bytep> rows(image.height);
    const size_t stride = static_cast<size_t>(image.width) * image.channels;
    for (int y = 0; y < image.height; ++y)
      rows[y] = const_cast<png_bytep>(image.data.data() + y * stride);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
}

LabelMap read_label_png(const std::string& path) {
  ImageU8 image = read_png(path);
  if (image.channels != 1)
    throw ValidationError("png: label map must be single-channel: " + path);
  LabelMap labels(image.height, image.width);
  labels.values = std::move(image.data);
  return labels;
}

void write_label_png(const std::string& path, const LabelMap& labels) {
  ImageU8 image(labels.height, labels.width, 1);
  image.data = labels.values;
  write_png(path, image);
}

}  // namespace fseg
