// PNG decode/encode and bilinear resizing. Pixel values are display-referred
// sRGB codes scaled to [0,1]; no color management happens here.
//
// Decode accepts 8-bit RGB, RGBA, grayscale, and gray+alpha, non-interlaced.
// Alpha is dropped, grayscale replicates to three channels. Everything else
// (palette, 16-bit, interlaced, non-PNG) is a typed decode error, and a failed
// decode never yields a partial image.

#pragma once

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "core.hpp"
#include "error.hpp"
#include "resample.hpp"

namespace lutfuse {

struct PngMeta {
  int width = 0;
  int height = 0;
  int bit_depth = 0;
  int channels = 0;  // channels in the file, before alpha drop / gray expand
};

// Storage quantization: clamp to [0,1], then round half away from zero, so
// 0.5 maps to 128.
inline unsigned char quantize8(float v) {
  const float c = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
  return static_cast<unsigned char>(std::lround(c * 255.0f));
}

inline ImagePlane load_png(const std::string& path, PngMeta* meta = nullptr) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw IoError("cannot open " + path);
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    std::fclose(fp);
    throw DecodeError("not a PNG file: " + path);
  }

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                           nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    std::fclose(fp);
    throw Error("libpng initialization failed");
  }

  // libpng reports errors via longjmp; only plain pointers live in this
  // frame, so the jump target can release everything by hand.
  png_bytep* volatile rows = nullptr;
  png_bytep volatile block = nullptr;
  if (setjmp(png_jmpbuf(png))) {
    std::free(const_cast<png_bytep*>(rows));
    std::free(const_cast<png_bytep>(block));
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw DecodeError("corrupt or truncated PNG: " + path);
  }

  png_init_io(png, fp);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_uint_32 width = png_get_image_width(png, info);
  const png_uint_32 height = png_get_image_height(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  const int color_type = png_get_color_type(png, info);
  const int interlace = png_get_interlace_type(png, info);

  auto reject = [&](const std::string& why) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw DecodeError(why + ": " + path);
  };
  if (interlace != PNG_INTERLACE_NONE) reject("interlaced PNGs are not supported");
  if (color_type == PNG_COLOR_TYPE_PALETTE)
    reject("palette PNGs are not supported");
  if (bit_depth != 8) reject("only 8-bit PNGs are supported");
  int channels = 0;
  switch (color_type) {
    case PNG_COLOR_TYPE_GRAY: channels = 1; break;
    case PNG_COLOR_TYPE_GRAY_ALPHA: channels = 2; break;
    case PNG_COLOR_TYPE_RGB: channels = 3; break;
    case PNG_COLOR_TYPE_RGB_ALPHA: channels = 4; break;
    default: reject("unsupported PNG color type");
  }
  if (width < 1 || height < 1) reject("empty PNG");

  const std::size_t rowbytes = png_get_rowbytes(png, info);
  block = static_cast<png_bytep>(std::malloc(rowbytes * height));
  rows = static_cast<png_bytep*>(std::malloc(sizeof(png_bytep) * height));
  if (!block || !rows) {
    std::free(const_cast<png_bytep*>(rows));
    std::free(const_cast<png_bytep>(block));
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw Error("out of memory decoding " + path);
  }
  for (png_uint_32 y = 0; y < height; ++y)
    rows[y] = const_cast<png_bytep>(block) + std::size_t(y) * rowbytes;

  png_read_image(png, const_cast<png_bytep*>(rows));
  png_read_end(png, nullptr);

  ImagePlane out;
  out.height = int(height);
  out.width = int(width);
  out.data.resize(std::size_t(height) * width * 3);
  const unsigned char* src = const_cast<const unsigned char*>(block);
  // Divide rather than multiply by a reciprocal: v/255 is the documented
  // mapping and the two differ in the last ulp for some code values.
  for (std::size_t p = 0; p < std::size_t(height) * width; ++p) {
    const unsigned char* px = src + p * channels;
    float* dst = out.data.data() + p * 3;
    if (channels >= 3) {
      dst[0] = px[0] / 255.0f;
      dst[1] = px[1] / 255.0f;
      dst[2] = px[2] / 255.0f;
    } else {
      dst[0] = dst[1] = dst[2] = px[0] / 255.0f;
    }
  }
  if (meta) *meta = {int(width), int(height), bit_depth, channels};

  std::free(const_cast<png_bytep*>(rows));
  std::free(const_cast<png_bytep>(block));
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return out;
}

namespace detail {

// channels is 1 (grayscale) or 3 (RGB); bytes holds height*width*channels.
inline void save_png_bytes(const unsigned char* bytes, int height, int width,
                           int channels, const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    std::fclose(fp);
    throw Error("libpng initialization failed");
  }
  png_bytep* volatile rows = nullptr;
  if (setjmp(png_jmpbuf(png))) {
    std::free(const_cast<png_bytep*>(rows));
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("PNG write failed: " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, width, height, 8,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  rows = static_cast<png_bytep*>(std::malloc(sizeof(png_bytep) * height));
  if (!rows) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw Error("out of memory encoding " + path);
  }
  for (int y = 0; y < height; ++y)
    rows[y] = const_cast<png_bytep>(bytes) + std::size_t(y) * width * channels;
  png_write_info(png, info);
  png_write_image(png, const_cast<png_bytep*>(rows));
  png_write_end(png, nullptr);
  std::free(const_cast<png_bytep*>(rows));
  png_destroy_write_struct(&png, &info);
  if (std::fclose(fp) != 0) throw IoError("PNG write failed: " + path);
}

}  // namespace detail

inline void save_png(const ImagePlane& image, const std::string& path) {
  if (image.height < 1 || image.width < 1 ||
      image.data.size() != image.pixel_count() * 3)
    throw InvalidArgument("image dimensions do not match its data");
  std::vector<unsigned char> bytes(image.data.size());
  for (std::size_t i = 0; i < image.data.size(); ++i)
    bytes[i] = quantize8(image.data[i]);
  detail::save_png_bytes(bytes.data(), image.height, image.width, 3, path);
}

// Single-channel variant used for weight-map dumps.
inline void save_png_gray(std::span<const float> values, int height, int width,
                          const std::string& path) {
  if (height < 1 || width < 1 || values.size() != std::size_t(height) * width)
    throw InvalidArgument("grayscale dimensions do not match the data");
  std::vector<unsigned char> bytes(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) bytes[i] = quantize8(values[i]);
  detail::save_png_bytes(bytes.data(), height, width, 1, path);
}

inline ImagePlane resize_bilinear(const ImagePlane& image, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1)
    throw InvalidArgument("resize dimensions must be positive");
  if (image.height < 1 || image.width < 1 ||
      image.data.size() != image.pixel_count() * 3)
    throw InvalidArgument("image dimensions do not match its data");
  ImagePlane out;
  out.height = out_h;
  out.width = out_w;
  out.data = resample_bilinear(image.data.data(), image.height, image.width, 3,
                               out_h, out_w);
  return out;
}

}  // namespace lutfuse
