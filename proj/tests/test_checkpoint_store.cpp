#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "test_support.hpp"
#include "xmerge/checkpoint_store.hpp"
#include "xmerge/error.hpp"
#include "xmerge/merge_engine.hpp"
#include "xmerge/subspace_pca.hpp"

using namespace xmerge;
using xmerge::testing::TempDir;

namespace {

std::vector<unsigned char> file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void put_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::string error_text(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

bool bit_equal(const ParameterVector& a, const ParameterVector& b) {
  return a.size() == b.size() && std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("crc64 matches the standard check value") {
  const char* text = "123456789";
  CHECK(Crc64::of({reinterpret_cast<const unsigned char*>(text), 9}) == 0x995DC9BBDF1939FAULL);
  CHECK(format_crc(0xABCULL) == "0000000000000abc");
}

TEST_CASE("zero vector round-trips") {
  TempDir dir;
  const ParameterVector v(4, 0.0);
  const auto rec = write_checkpoint(v, 0, dir / "z.xmg");
  CHECK(rec.dim == 4);
  CHECK(rec.step == 0);
  CHECK(bit_equal(read_checkpoint(rec), v));
}

TEST_CASE("dyadic values round-trip bit-exactly") {
  TempDir dir;
  const ParameterVector v{1.5, -2.25};
  const auto rec = write_checkpoint(v, 500, dir / "a.xmg");
  CHECK(rec.step == 500);
  CHECK(bit_equal(read_checkpoint(rec), v));
  const ParameterVector w{3.0, 4.0};
  CHECK(read_checkpoint(write_checkpoint(w, 1, dir / "b.xmg")) == w);
}

TEST_CASE("file layout is bit-exact") {
  TempDir dir;
  const auto rec = write_checkpoint(ParameterVector{1.0, -0.5}, 3, dir / "x.xmg");
  const auto bytes = file_bytes(rec.path);
  REQUIRE(bytes.size() == 16 + 2 * 8);
  CHECK(std::memcmp(bytes.data(), "XMG1", 4) == 0);
  CHECK(bytes[4] == 0x08);
  CHECK(bytes[5] == 0);
  CHECK(bytes[6] == 0);
  CHECK(bytes[7] == 0);
  CHECK(bytes[8] == 2);
  for (int i = 9; i < 16; ++i) CHECK(bytes[static_cast<std::size_t>(i)] == 0);
  // 1.0 = 0x3FF0000000000000 little-endian
  CHECK(bytes[16 + 7] == 0x3F);
  CHECK(bytes[16 + 6] == 0xF0);
  CHECK(rec.checksum == Crc64::of({bytes.data() + 16, 16}));
}

TEST_CASE("non-finite entries are rejected before writing") {
  TempDir dir;
  const ParameterVector v{1.0, std::numeric_limits<double>::quiet_NaN()};
  CHECK(error_text([&] { write_checkpoint(v, 0, dir / "n.xmg"); }).find("non-finite entry") != std::string::npos);
  CHECK_FALSE(std::filesystem::exists(dir / "n.xmg"));
  const ParameterVector inf{std::numeric_limits<double>::infinity()};
  CHECK_THROWS_AS(write_checkpoint(inf, 0, dir / "i.xmg"), Error);
}

TEST_CASE("truncated file reports header/dimension mismatch") {
  TempDir dir;
  const auto rec = write_checkpoint(ParameterVector{1.0, 2.0, 3.0}, 0, dir / "t.xmg");
  auto bytes = file_bytes(rec.path);
  bytes.resize(bytes.size() - 5);
  put_bytes(rec.path, bytes);
  CHECK(error_text([&] { read_checkpoint(rec); }).find("header/dimension mismatch") != std::string::npos);
  bytes.resize(10);
  put_bytes(rec.path, bytes);
  CHECK(error_text([&] { read_checkpoint(rec); }).find("header/dimension mismatch") != std::string::npos);
}

TEST_CASE("corrupted byte reports checksum mismatch") {
  TempDir dir;
  const auto rec = write_checkpoint(ParameterVector{1.0, 2.0, 3.0}, 0, dir / "c.xmg");
  const auto original = file_bytes(rec.path);
  // Every payload byte position, including ones that produce NaN or Inf.
  for (std::size_t pos = 16; pos < original.size(); ++pos) {
    auto bytes = original;
    bytes[pos] ^= 0xFF;
    put_bytes(rec.path, bytes);
    CHECK(error_text([&] { read_checkpoint(rec); }).find("checksum mismatch") != std::string::npos);
  }
}

TEST_CASE("dimension disagreeing with the manifest is rejected") {
  TempDir dir;
  auto rec = write_checkpoint(ParameterVector{1.0, 2.0}, 0, dir / "d.xmg");
  rec.dim = 3;
  CHECK(error_text([&] { read_checkpoint(rec); }).find("header/dimension mismatch") != std::string::npos);
}

TEST_CASE("stream_chunks slices the payload") {
  TempDir dir;
  const ParameterVector v{1, 2, 3, 4, 5};
  const auto rec = write_checkpoint(v, 0, dir / "s.xmg");

  SUBCASE("d=5, chunk_len=2") {
    const auto chunks = stream_chunks(rec, 2);
    REQUIRE(chunks.size() == 3);
    CHECK(chunks[0].size() == 2);
    CHECK(chunks[1].size() == 2);
    CHECK(chunks[2].size() == 1);
  }
  SUBCASE("chunk_len=d gives one slice") {
    const auto chunks = stream_chunks(rec, 5);
    REQUIRE(chunks.size() == 1);
    CHECK(chunks[0] == v.values());
  }
  SUBCASE("chunk_len=1 gives d slices") {
    const auto chunks = stream_chunks(rec, 1);
    REQUIRE(chunks.size() == 5);
    std::vector<double> joined;
    for (const auto& c : chunks) joined.insert(joined.end(), c.begin(), c.end());
    CHECK(joined == v.values());
  }
  CHECK_THROWS_AS(stream_chunks(rec, 0), Error);
}

TEST_CASE("round-trip property on random vectors") {
  TempDir dir;
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = 1 + rng.below(300);
    ParameterVector v(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) v[j] = std::ldexp(rng.normal(), static_cast<int>(rng.below(200)) - 100);
    const auto rec = write_checkpoint(v, static_cast<std::uint64_t>(trial), dir / "r.xmg");
    CHECK(bit_equal(read_checkpoint(rec), v));
    const std::size_t chunk = 1 + rng.below(d + 3);
    std::vector<double> joined;
    for (const auto& c : stream_chunks(rec, chunk)) joined.insert(joined.end(), c.begin(), c.end());
    CHECK(bit_equal(ParameterVector(joined), v));
  }
}

TEST_CASE("downstream results are independent of chunk_len to 0 ulps") {
  TempDir dir;
  Rng rng(5);
  CheckpointManifest manifest;
  const std::size_t d = 37;
  for (std::uint64_t s = 0; s < 6; ++s) {
    ParameterVector v(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) v[j] = 1e3 * rng.normal() + static_cast<double>(s);
    manifest.add(write_checkpoint(v, s * 10, dir / ("c" + std::to_string(s) + ".xmg")));
  }
  const auto& recs = manifest.records();
  const auto weights = ema_weights(6, 0.7);
  const auto reference = weighted_average(recs, weights, d);
  const auto gram_ref = gram_pca(recs, d);
  const auto dir_ref = top_direction(gram_ref, recs, d);
  for (std::size_t chunk : {1, 2, 3, 7, 16, 36, 100}) {
    CHECK(bit_equal(weighted_average(recs, weights, chunk), reference));
    const auto g = gram_pca(recs, chunk);
    CHECK(std::memcmp(g.gram.data().data(), gram_ref.gram.data().data(), 36 * sizeof(double)) == 0);
    CHECK(bit_equal(top_direction(g, recs, chunk), dir_ref));
  }
}

TEST_CASE("manifest ordering, deltas and persistence") {
  TempDir dir;
  CheckpointManifest m;
  for (std::uint64_t s : {0, 500, 1000, 1500})
    m.add(write_checkpoint(ParameterVector{static_cast<double>(s), 1.0}, s, dir / ("m" + std::to_string(s) + ".xmg")));
  CHECK(m.dim() == 2);
  CHECK(m.step_deltas() == std::vector<std::uint64_t>{500, 500, 500});
  CHECK(m.find_step(1000) == 2);
  CHECK(m.find_step(999) == -1);
  CHECK(m.filtered(1000).size() == 2);

  SUBCASE("steps must increase strictly") {
    auto rec = m.records().back();
    CHECK_THROWS_AS(m.add(rec), Error);
  }
  SUBCASE("dimension must agree") {
    CHECK_THROWS_AS(m.add(write_checkpoint(ParameterVector{1.0}, 2000, dir / "odd.xmg")), Error);
  }
  SUBCASE("save and load round-trip with relative paths") {
    m.save(dir / "manifest.tsv");
    std::ifstream in(dir / "manifest.tsv");
    std::string line;
    std::getline(in, line);
    CHECK(line.rfind("0\tm0.xmg\t2\t", 0) == 0);
    const auto loaded = CheckpointManifest::load(dir / "manifest.tsv");
    REQUIRE(loaded.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(loaded.records()[i].step == m.records()[i].step);
      CHECK(loaded.records()[i].checksum == m.records()[i].checksum);
      CHECK(read_checkpoint(loaded.records()[i]) == read_checkpoint(m.records()[i]));
    }
    auto steps = std::vector<std::uint64_t>{};
    for (const auto& r : loaded.records()) steps.push_back(r.step);
    CHECK(std::is_sorted(steps.begin(), steps.end()));
  }
}

TEST_CASE("malformed manifests are data errors") {
  TempDir dir;
  {
    std::ofstream out(dir / "bad.tsv");
    out << "0\tx.xmg\t2\n";
  }
  try {
    CheckpointManifest::load(dir / "bad.tsv");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kData);
  }
  {
    std::ofstream out(dir / "empty.tsv");
    out << "# nothing\n";
  }
  CHECK_THROWS_AS(CheckpointManifest::load(dir / "empty.tsv"), Error);
}
