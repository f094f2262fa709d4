#pragma once

// PNG/JPEG decoding via libpng/libjpeg, plus the bilinear resizer. Internal
// to the data module.

#include <cstdint>
#include <filesystem>
#include <vector>

namespace fairfader {

struct DecodedImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> rgb;  // interleaved, 3 channels
};

// Detects PNG vs JPEG by signature. Throws std::runtime_error on failure.
DecodedImage decode_image_file(const std::filesystem::path& path);

// 8-bit RGB PNG writer (test fixtures and dataset tooling).
void encode_png_rgb8(const std::filesystem::path& path, int width, int height,
                     const std::vector<uint8_t>& rgb);

// Resample to out_size x out_size and normalize to [-1,1], CHW layout.
std::vector<float> resize_bilinear_chw(const DecodedImage& img, int out_size);

}  // namespace fairfader
