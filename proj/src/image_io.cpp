#include "image_io.hpp"

#include <jpeglib.h>
#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>

namespace fairfader {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

DecodedImage decode_png(std::FILE* fp, const std::string& name) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("libpng init failed for " + name);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("libpng info init failed for " + name);
  }
  std::vector<png_bytep> row_ptrs;
  DecodedImage out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("png decode failed for " + name);
  }
  png_init_io(png, fp);
  png_read_info(png, info);

  // normalize everything to 8-bit RGB
  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  out.width = (int)png_get_image_width(png, info);
  out.height = (int)png_get_image_height(png, info);
  const size_t rowbytes = png_get_rowbytes(png, info);
  if (rowbytes != (size_t)out.width * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("unexpected png row layout for " + name);
  }
  out.rgb.resize((size_t)out.width * out.height * 3);
  row_ptrs.resize((size_t)out.height);
  for (int y = 0; y < out.height; ++y)
    row_ptrs[(size_t)y] = out.rgb.data() + (size_t)y * out.width * 3;
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

struct JpegErrorMgr {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  std::longjmp(mgr->jump, 1);
}

DecodedImage decode_jpeg(std::FILE* fp, const std::string& name) {
  jpeg_decompress_struct cinfo;
  JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw std::runtime_error("jpeg decode failed for " + name);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, fp);
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);

  DecodedImage out;
  out.width = (int)cinfo.output_width;
  out.height = (int)cinfo.output_height;
  out.rgb.resize((size_t)out.width * out.height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.rgb.data() + (size_t)cinfo.output_scanline * out.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

}  // namespace

DecodedImage decode_image_file(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open image " + path.string());
  unsigned char sig[8] = {};
  const size_t got = std::fread(sig, 1, 8, fp.get());
  std::rewind(fp.get());
  if (got >= 8 && png_sig_cmp(sig, 0, 8) == 0) return decode_png(fp.get(), path.string());
  if (got >= 2 && sig[0] == 0xff && sig[1] == 0xd8) return decode_jpeg(fp.get(), path.string());
  throw std::runtime_error("unrecognized image format for " + path.string());
}

void encode_png_rgb8(const std::filesystem::path& path, int width, int height,
                     const std::vector<uint8_t>& rgb) {
  if ((size_t)width * height * 3 != rgb.size())
    throw std::runtime_error("encode_png_rgb8: pixel buffer size mismatch");
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png encode failed for " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, (png_uint_32)width, (png_uint_32)height, 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(rgb.data() + (size_t)y * width * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<float> resize_bilinear_chw(const DecodedImage& img, int out_size) {
  if (out_size < 1) throw std::runtime_error("resize: output size must be positive");
  const int S = out_size;
  std::vector<float> out((size_t)3 * S * S);
  const double sx = (double)img.width / S;
  const double sy = (double)img.height / S;
  for (int oy = 0; oy < S; ++oy) {
    const double fy = std::max(0.0, (oy + 0.5) * sy - 0.5);
    const int y0 = std::min((int)fy, img.height - 1);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (int ox = 0; ox < S; ++ox) {
      const double fx = std::max(0.0, (ox + 0.5) * sx - 0.5);
      const int x0 = std::min((int)fx, img.width - 1);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        auto at = [&](int y, int x) { return (double)img.rgb[((size_t)y * img.width + x) * 3 + c]; };
        const double v = (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) +
                         wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1));
        out[(size_t)c * S * S + (size_t)oy * S + ox] = (float)(v / 127.5 - 1.0);
      }
    }
  }
  return out;
}

}  // namespace fairfader
