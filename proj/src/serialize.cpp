#include "fairfader/serialize.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace fairfader {

namespace {

constexpr char kMagic[4] = {'F', 'F', 'T', '1'};
// Guard against reading a garbage length field and then allocating it.
constexpr uint64_t kMaxNameLen = 1 << 16;
constexpr uint64_t kMaxRank = 32;

void put_u64(std::ostream& os, uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = (unsigned char)((v >> (8 * i)) & 0xff);
  os.write((const char*)buf, 8);
}

uint64_t get_u64(std::istream& is, long long& offset, const char* what) {
  unsigned char buf[8];
  is.read((char*)buf, 8);
  if (is.gcount() != 8) throw FormatError(strfmt("snapshot truncated reading %s at offset %lld", what, offset), offset);
  offset += 8;
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= (uint64_t)buf[i] << (8 * i);
  return v;
}

}  // namespace

void write_snapshot(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(kMagic, 4);
  for (const auto& t : tensors) {
    put_u64(os, t.name.size());
    os.write(t.name.data(), (std::streamsize)t.name.size());
    put_u64(os, t.shape.size());
    for (int64_t e : t.shape) put_u64(os, (uint64_t)e);
    static_assert(sizeof(float) == 4);
    os.write((const char*)t.values.data(), (std::streamsize)(t.values.size() * 4));
  }
  os.flush();
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

std::vector<NamedTensor> read_snapshot(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string() + " for reading");
  long long offset = 0;
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("snapshot magic mismatch at offset 0 in " + path.string(), 0);
  offset = 4;

  std::vector<NamedTensor> out;
  while (true) {
    is.peek();
    if (is.eof()) break;
    NamedTensor t;
    const uint64_t name_len = get_u64(is, offset, "name length");
    if (name_len > kMaxNameLen)
      throw FormatError(strfmt("snapshot name length %llu too large at offset %lld",
                               (unsigned long long)name_len, offset - 8),
                        offset - 8);
    t.name.resize(name_len);
    is.read(t.name.data(), (std::streamsize)name_len);
    if ((uint64_t)is.gcount() != name_len)
      throw FormatError(strfmt("snapshot truncated reading name at offset %lld", offset), offset);
    offset += (long long)name_len;
    const uint64_t rank = get_u64(is, offset, "rank");
    if (rank > kMaxRank)
      throw FormatError(strfmt("snapshot rank %llu too large at offset %lld",
                               (unsigned long long)rank, offset - 8),
                        offset - 8);
    uint64_t numel = 1;
    for (uint64_t i = 0; i < rank; ++i) {
      const uint64_t e = get_u64(is, offset, "extent");
      if (e == 0 || e > (uint64_t)1 << 32)
        throw FormatError(strfmt("snapshot extent %llu invalid at offset %lld",
                                 (unsigned long long)e, offset - 8),
                          offset - 8);
      t.shape.push_back((int64_t)e);
      numel *= e;
    }
    t.values.resize(numel);
    is.read((char*)t.values.data(), (std::streamsize)(numel * 4));
    if ((uint64_t)is.gcount() != numel * 4)
      throw FormatError(strfmt("snapshot truncated reading %llu values at offset %lld",
                               (unsigned long long)numel, offset),
                        offset);
    offset += (long long)(numel * 4);
    out.push_back(std::move(t));
  }
  return out;
}

std::string bytes_hash_hex(const void* data, size_t n) {
  const unsigned char* p = (const unsigned char*)data;
  uint64_t h = 1469598103934665603ull;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)h);
  return std::string(buf);
}

std::string file_hash_hex(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string() + " for hashing");
  std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return bytes_hash_hex(bytes.data(), bytes.size());
}

}  // namespace fairfader
