#pragma once

// Parameter snapshot format: magic "FFT1", then per-tensor records of
//   u64 name length | name bytes | u64 rank | u64 extents[rank] | f32 values
// all little-endian, records until end of file. Round-trips bit-exactly.

#include <filesystem>
#include <string>
#include <vector>

#include "fairfader/tensor.hpp"

namespace fairfader {

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

void write_snapshot(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);

// Throws FormatError (with byte offset) on bad magic, truncation, or
// oversized records.
std::vector<NamedTensor> read_snapshot(const std::filesystem::path& path);

// FNV-1a over a file's bytes, as a 16-hex-digit string. Used to stamp
// artifacts and check determinism.
std::string file_hash_hex(const std::filesystem::path& path);
std::string bytes_hash_hex(const void* data, size_t n);

}  // namespace fairfader
