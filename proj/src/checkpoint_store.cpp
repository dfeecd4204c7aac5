#include "xmerge/checkpoint_store.hpp"

#include <algorithm>
#include <bit>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <sstream>

#include "xmerge/error.hpp"

namespace xmerge {
namespace fs = std::filesystem;

namespace {

void put_u64_le(std::uint64_t value, unsigned char* out) {
  for (int i = 0; i < 8; ++i) out[i] = static_cast<unsigned char>(value >> (8 * i));
}

std::uint64_t get_u64_le(const unsigned char* in) {
  std::uint64_t value = 0;
  for (int i = 0; i < 8; ++i) value |= static_cast<std::uint64_t>(in[i]) << (8 * i);
  return value;
}

void encode_doubles(std::span<const double> values, std::vector<unsigned char>& out) {
  out.resize(values.size() * 8);
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data(), values.data(), out.size());
  } else {
    for (std::size_t i = 0; i < values.size(); ++i)
      put_u64_le(std::bit_cast<std::uint64_t>(values[i]), out.data() + 8 * i);
  }
}

void decode_doubles(std::span<const unsigned char> bytes, std::vector<double>& out) {
  out.resize(bytes.size() / 8);
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data(), bytes.data(), out.size() * 8);
  } else {
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = std::bit_cast<double>(get_u64_le(bytes.data() + 8 * i));
  }
}

// Opens `path`, validates the header and the exact file size, and returns d.
std::uint64_t open_and_check_header(const fs::path& path, std::ifstream& in) {
  in.open(path, std::ios::binary);
  if (!in) throw_data("cannot open checkpoint: " + path.string());

  std::error_code ec;
  const auto file_size = fs::file_size(path, ec);
  if (ec) throw_data("cannot stat checkpoint: " + path.string());
  if (file_size < kHeaderBytes) throw_data("header/dimension mismatch: truncated header in " + path.string());

  unsigned char header[kHeaderBytes];
  in.read(reinterpret_cast<char*>(header), kHeaderBytes);
  if (!in) throw_data("header/dimension mismatch: truncated header in " + path.string());
  if (std::memcmp(header, kCheckpointMagic, 4) != 0) throw_data("bad magic in " + path.string());
  if (header[4] != kDtypeF64) throw_data("unsupported dtype code in " + path.string());
  if (header[5] != 0 || header[6] != 0 || header[7] != 0)
    throw_data("nonzero reserved header bytes in " + path.string());

  const std::uint64_t dim = get_u64_le(header + 8);
  if (dim == 0) throw_data("header/dimension mismatch: zero dimension in " + path.string());
  if (dim > (file_size - kHeaderBytes) / 8 || file_size != kHeaderBytes + dim * 8)
    throw_data("header/dimension mismatch: file size does not match d=" + std::to_string(dim) + " in " +
               path.string());
  return dim;
}

}  // namespace

std::string format_crc(std::uint64_t crc) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, crc);
  return buf;
}

CheckpointRecord write_checkpoint(const ParameterVector& vec, std::uint64_t step, const fs::path& dest) {
  if (vec.empty()) throw_data("cannot write an empty parameter vector");
  if (!vec.all_finite()) throw_data("non-finite entry in parameter vector");

  std::vector<unsigned char> payload;
  encode_doubles(vec.span(), payload);

  unsigned char header[kHeaderBytes] = {};
  std::memcpy(header, kCheckpointMagic, 4);
  header[4] = kDtypeF64;
  put_u64_le(vec.size(), header + 8);

  std::ofstream out(dest, std::ios::binary | std::ios::trunc);
  if (!out) throw_data("cannot open for writing: " + dest.string());
  out.write(reinterpret_cast<const char*>(header), kHeaderBytes);
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  out.close();
  if (!out) throw_data("write failed: " + dest.string());

  return CheckpointRecord{step, dest, vec.size(), Crc64::of(payload)};
}

ChunkReader::ChunkReader(const CheckpointRecord& record, std::size_t chunk_len)
    : path_(record.path), expected_crc_(record.checksum), chunk_len_(chunk_len) {
  if (chunk_len == 0) throw_usage("chunk_len must be >= 1");
  dim_ = open_and_check_header(path_, in_);
  if (record.dim != 0 && record.dim != dim_)
    throw_data("header/dimension mismatch: file has d=" + std::to_string(dim_) + ", manifest expects d=" +
               std::to_string(record.dim) + " (" + path_.string() + ")");
}

bool ChunkReader::next(std::vector<double>& out) {
  if (position_ >= dim_) return false;
  const std::uint64_t count = std::min<std::uint64_t>(chunk_len_, dim_ - position_);
  buffer_.resize(count * 8);
  in_.read(reinterpret_cast<char*>(buffer_.data()), static_cast<std::streamsize>(buffer_.size()));
  if (!in_) throw_data("header/dimension mismatch: short read in " + path_.string());
  crc_.update(buffer_);
  decode_doubles(buffer_, out);
  position_ += count;
  if (position_ == dim_) {
    if (crc_.value() != expected_crc_)
      throw_data("checksum mismatch in " + path_.string() + ": expected " + format_crc(expected_crc_) + ", got " +
                 format_crc(crc_.value()));
  }
  if (!std::all_of(out.begin(), out.end(), [](double x) { return std::isfinite(x); })) {
    // Prefer reporting corruption over its symptom.
    if (position_ < dim_) {
      std::vector<unsigned char> rest((dim_ - position_) * 8);
      in_.read(reinterpret_cast<char*>(rest.data()), static_cast<std::streamsize>(rest.size()));
      if (in_) crc_.update(rest);
      if (!in_ || crc_.value() != expected_crc_) throw_data("checksum mismatch in " + path_.string());
    }
    throw_data("non-finite entry in " + path_.string());
  }
  return true;
}

ParameterVector read_checkpoint(const CheckpointRecord& record) {
  ChunkReader reader(record, 1 << 16);
  std::vector<double> all;
  all.reserve(reader.dim());
  std::vector<double> slice;
  while (reader.next(slice)) all.insert(all.end(), slice.begin(), slice.end());
  return ParameterVector(std::move(all));
}

std::vector<std::vector<double>> stream_chunks(const CheckpointRecord& record, std::size_t chunk_len) {
  ChunkReader reader(record, chunk_len);
  std::vector<std::vector<double>> slices;
  std::vector<double> slice;
  while (reader.next(slice)) slices.push_back(slice);
  return slices;
}

CheckpointRecord inspect_checkpoint(const fs::path& path, std::uint64_t step) {
  std::ifstream in;
  const std::uint64_t dim = open_and_check_header(path, in);
  Crc64 crc;
  std::vector<unsigned char> buffer(1 << 16);
  std::uint64_t remaining = dim * 8;
  while (remaining > 0) {
    const auto n = std::min<std::uint64_t>(remaining, buffer.size());
    in.read(reinterpret_cast<char*>(buffer.data()), static_cast<std::streamsize>(n));
    if (!in) throw_data("header/dimension mismatch: short read in " + path.string());
    crc.update(std::span<const unsigned char>(buffer.data(), n));
    remaining -= n;
  }
  return CheckpointRecord{step, path, dim, crc.value()};
}

void CheckpointManifest::add(CheckpointRecord record) {
  if (record.dim == 0) throw_data("manifest record with zero dimension");
  if (!records_.empty()) {
    if (record.step <= records_.back().step)
      throw_data("manifest steps must be strictly increasing (" + std::to_string(records_.back().step) +
                 " then " + std::to_string(record.step) + ")");
    if (record.dim != dim_)
      throw_data("dimension mismatch in manifest: " + std::to_string(record.dim) + " vs " + std::to_string(dim_));
  } else {
    dim_ = record.dim;
  }
  records_.push_back(std::move(record));
}

std::vector<std::uint64_t> CheckpointManifest::step_deltas() const {
  std::vector<std::uint64_t> deltas;
  for (std::size_t i = 1; i < records_.size(); ++i) deltas.push_back(records_[i].step - records_[i - 1].step);
  return deltas;
}

std::ptrdiff_t CheckpointManifest::find_step(std::uint64_t step) const {
  auto it = std::lower_bound(records_.begin(), records_.end(), step,
                             [](const CheckpointRecord& r, std::uint64_t s) { return r.step < s; });
  if (it == records_.end() || it->step != step) return -1;
  return it - records_.begin();
}

CheckpointManifest CheckpointManifest::filtered(std::uint64_t min_step) const {
  CheckpointManifest out;
  for (const auto& r : records_)
    if (r.step >= min_step) out.add(r);
  return out;
}

void CheckpointManifest::save(const fs::path& manifest_path) const {
  const fs::path base = manifest_path.has_parent_path() ? manifest_path.parent_path() : fs::path(".");
  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) throw_data("cannot write manifest: " + manifest_path.string());
  for (const auto& r : records_) {
    fs::path rel = r.path;
    if (r.path.is_absolute() || r.path.has_parent_path()) {
      std::error_code ec;
      auto candidate = fs::relative(r.path, base, ec);
      if (!ec && !candidate.empty()) rel = candidate;
    }
    out << r.step << '\t' << rel.generic_string() << '\t' << r.dim << '\t' << format_crc(r.checksum) << '\n';
  }
  if (!out) throw_data("write failed: " + manifest_path.string());
}

CheckpointManifest CheckpointManifest::load(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw_data("cannot open manifest: " + manifest_path.string());
  const fs::path base = manifest_path.has_parent_path() ? manifest_path.parent_path() : fs::path(".");

  CheckpointManifest manifest;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;

    std::vector<std::string> fields;
    std::size_t start = 0;
    for (std::size_t tab; (tab = line.find('\t', start)) != std::string::npos; start = tab + 1)
      fields.push_back(line.substr(start, tab - start));
    fields.push_back(line.substr(start));
    if (fields.size() != 4)
      throw_data("manifest line " + std::to_string(line_no) + ": expected 4 tab-separated fields");

    CheckpointRecord record;
    try {
      std::size_t used = 0;
      record.step = std::stoull(fields[0], &used);
      if (used != fields[0].size()) throw std::invalid_argument("step");
      record.dim = std::stoull(fields[2], &used);
      if (used != fields[2].size()) throw std::invalid_argument("d");
      if (fields[3].size() != 16) throw std::invalid_argument("crc");
      record.checksum = std::stoull(fields[3], &used, 16);
      if (used != fields[3].size()) throw std::invalid_argument("crc");
    } catch (const std::exception&) {
      throw_data("manifest line " + std::to_string(line_no) + ": malformed field");
    }
    fs::path p(fields[1]);
    record.path = p.is_absolute() ? p : base / p;
    manifest.add(std::move(record));
  }
  if (manifest.empty()) throw_data("manifest is empty: " + manifest_path.string());
  return manifest;
}

}  // namespace xmerge
