#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "fairfader/rng.hpp"
#include "fairfader/serialize.hpp"

using namespace fairfader;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
  auto dir = fs::temp_directory_path() / (std::string("fairfader_test_") + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<NamedTensor> sample_tensors() {
  std::mt19937 rng(9);
  std::uniform_real_distribution<float> d(-2.f, 2.f);
  std::vector<NamedTensor> ts;
  ts.push_back(NamedTensor{"block0.conv.w", {4, 3, 2, 2}, {}});
  ts.push_back(NamedTensor{"fc.b", {7}, {}});
  for (auto& t : ts) {
    int64_t n = 1;
    for (auto e : t.shape) n *= e;
    for (int64_t i = 0; i < n; ++i) t.values.push_back(d(rng));
  }
  return ts;
}

}  // namespace

TEST_CASE("snapshot round-trip is bit exact and re-save is byte identical") {
  auto dir = temp_dir("snapshot");
  auto tensors = sample_tensors();
  write_snapshot(dir / "a.fft", tensors);
  auto loaded = read_snapshot(dir / "a.fft");
  REQUIRE(loaded.size() == tensors.size());
  for (size_t i = 0; i < tensors.size(); ++i) {
    CHECK(loaded[i].name == tensors[i].name);
    CHECK(loaded[i].shape == tensors[i].shape);
    CHECK(loaded[i].values == tensors[i].values);
  }
  write_snapshot(dir / "b.fft", loaded);
  CHECK(file_hash_hex(dir / "a.fft") == file_hash_hex(dir / "b.fft"));
}

TEST_CASE("snapshot rejects bad magic and truncation with an offset") {
  auto dir = temp_dir("snapshot_bad");
  write_snapshot(dir / "a.fft", sample_tensors());

  {
    std::fstream f(dir / "a.fft", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_AS(read_snapshot(dir / "a.fft"), FormatError);

  write_snapshot(dir / "b.fft", sample_tensors());
  const auto full_size = fs::file_size(dir / "b.fft");
  fs::resize_file(dir / "b.fft", full_size - 5);
  try {
    read_snapshot(dir / "b.fft");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset >= 0);
    CHECK(std::string(e.what()).find("truncated") != std::string::npos);
  }
}
