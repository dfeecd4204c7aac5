#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "xmerge/checkpoint_store.hpp"
#include "xmerge/parameter_vector.hpp"

namespace xmerge {

inline constexpr std::size_t kDefaultChunkLen = 1 << 16;

/// Weighting of a window of n checkpoints spaced `tau` steps apart.
/// weights[0] applies to the newest checkpoint, weights[i] to the one i*tau
/// steps older.
struct MergeSchedule {
  std::uint64_t tau = 0;
  std::vector<double> weights;

  std::size_t n() const noexcept { return weights.size(); }

  /// Throws unless tau > 0, weights non-empty, non-negative, and summing to
  /// one within 1e-12.
  void validate() const;
};

struct MergedCheckpoint {
  std::uint64_t anchor_step = 0;  // step of the newest constituent
  ParameterVector params;
  MergeSchedule schedule;
};

std::vector<double> uniform_weights(std::size_t n);

/// Truncated normalized geometric weights w_i = gamma^i / sum_j gamma^j.
std::vector<double> ema_weights(std::size_t n, double gamma);

/// result[j] = sum_i weights[i] * states[i][j], summed in ascending i with
/// Neumaier compensation.
ParameterVector weighted_average(std::span<const ParameterVector> states, std::span<const double> weights);

/// Streaming variant: reads all records slice by slice. Uses the same
/// per-entry kernel as the in-memory form, so the result is bit-identical
/// for every chunk_len.
ParameterVector weighted_average(std::span<const CheckpointRecord> records, std::span<const double> weights,
                                 std::size_t chunk_len = kDefaultChunkLen);

/// Records of the window whose newest member has step `anchor_step`,
/// ordered newest first (i = 0, 1, ..., n-1).
std::vector<CheckpointRecord> window_records(const CheckpointManifest& manifest, std::uint64_t anchor_step,
                                             std::uint64_t tau, std::size_t n);

/// K merged checkpoints, oldest first. Output s averages the window ending at
/// step t_newest - (K-1-s)*tau.
std::vector<MergedCheckpoint> sliding_merge(const CheckpointManifest& manifest, const MergeSchedule& schedule,
                                            std::size_t count, std::size_t chunk_len = kDefaultChunkLen);

std::vector<MergedCheckpoint> sliding_pma(const CheckpointManifest& manifest, std::uint64_t tau, std::size_t n,
                                          std::size_t count, std::size_t chunk_len = kDefaultChunkLen);

}  // namespace xmerge
