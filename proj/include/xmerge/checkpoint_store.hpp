#pragma once

// Binary checkpoint files and the text manifest that indexes them.
//
// File layout (little-endian):
//   bytes 0-3   magic "XMG1"
//   byte  4     dtype code, 0x08 = f64
//   bytes 5-7   reserved, zero
//   bytes 8-15  d as u64
//   then d * 8  IEEE-754 doubles, no trailing data
//
// Manifest: UTF-8 lines "step<TAB>path<TAB>d<TAB>crc64hex", paths relative to
// the manifest's directory. The checksum is CRC-64/XZ over the payload bytes.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <boost/crc.hpp>

#include "xmerge/parameter_vector.hpp"

namespace xmerge {

inline constexpr char kCheckpointMagic[4] = {'X', 'M', 'G', '1'};
inline constexpr std::uint8_t kDtypeF64 = 0x08;
inline constexpr std::size_t kHeaderBytes = 16;

/// CRC-64/XZ (ECMA-182 polynomial, reflected, all-ones init and xorout).
class Crc64 {
 public:
  void update(std::span<const unsigned char> bytes) noexcept {
    impl_.process_bytes(bytes.data(), bytes.size());
  }
  std::uint64_t value() const noexcept { return impl_.checksum(); }

  static std::uint64_t of(std::span<const unsigned char> bytes) noexcept {
    Crc64 crc;
    crc.update(bytes);
    return crc.value();
  }

 private:
  boost::crc_optimal<64, 0x42F0E1EBA9EA3693ULL, ~0ULL, ~0ULL, true, true> impl_;
};

struct CheckpointRecord {
  std::uint64_t step = 0;
  std::filesystem::path path;
  std::uint64_t dim = 0;
  std::uint64_t checksum = 0;

  friend bool operator==(const CheckpointRecord&, const CheckpointRecord&) = default;
};

/// Writes `vec` to `dest`. Rejects empty or non-finite vectors before
/// touching the file.
CheckpointRecord write_checkpoint(const ParameterVector& vec, std::uint64_t step,
                                  const std::filesystem::path& dest);

/// Reads and verifies a checkpoint: header, exact file size against
/// `record.dim`, and CRC.
ParameterVector read_checkpoint(const CheckpointRecord& record);

/// Builds a record for a bare checkpoint file (no manifest). The checksum is
/// computed from the file as found, so only structure is validated.
CheckpointRecord inspect_checkpoint(const std::filesystem::path& path, std::uint64_t step = 0);

/// Sequential reader yielding the payload in slices of at most `chunk_len`
/// values. The CRC is accumulated while reading and checked when the last
/// slice is produced.
class ChunkReader {
 public:
  ChunkReader(const CheckpointRecord& record, std::size_t chunk_len);

  /// Fills `out` with the next slice. Returns false once the payload is exhausted.
  bool next(std::vector<double>& out);

  std::uint64_t dim() const noexcept { return dim_; }
  std::uint64_t position() const noexcept { return position_; }

 private:
  std::ifstream in_;
  std::filesystem::path path_;
  std::uint64_t dim_ = 0;
  std::uint64_t expected_crc_ = 0;
  std::size_t chunk_len_ = 0;
  std::uint64_t position_ = 0;
  Crc64 crc_;
  std::vector<unsigned char> buffer_;
};

/// Convenience wrapper over ChunkReader returning every slice.
std::vector<std::vector<double>> stream_chunks(const CheckpointRecord& record, std::size_t chunk_len);

class CheckpointManifest {
 public:
  CheckpointManifest() = default;

  /// Appends a record; its step must exceed the last one and its dimension
  /// must match the manifest's.
  void add(CheckpointRecord record);

  const std::vector<CheckpointRecord>& records() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  std::uint64_t dim() const noexcept { return dim_; }

  /// Differences between consecutive steps (size() - 1 entries).
  std::vector<std::uint64_t> step_deltas() const;

  /// Index of the record with exactly this step, or -1.
  std::ptrdiff_t find_step(std::uint64_t step) const;

  /// Records with step >= min_step, in order.
  CheckpointManifest filtered(std::uint64_t min_step) const;

  /// Writes the manifest with paths made relative to the manifest directory.
  void save(const std::filesystem::path& manifest_path) const;

  /// Parses a manifest. Relative paths are resolved against its directory.
  static CheckpointManifest load(const std::filesystem::path& manifest_path);

 private:
  std::vector<CheckpointRecord> records_;
  std::uint64_t dim_ = 0;
};

std::string format_crc(std::uint64_t crc);

}  // namespace xmerge
