#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "xmerge/checkpoint_store.hpp"
#include "xmerge/merge_engine.hpp"
#include "xmerge/parameter_vector.hpp"
#include "xmerge/subspace_pca.hpp"

namespace xmerge {

enum class SearchMode {
  kIterativeStride,  // theta_k = anchor + k * delta * v, k = 1, 2, ...
  kGrid,             // theta_g = anchor + g * delta * v for every g in the grid
};

struct LineSearchConfig {
  double alpha = 0.1;
  std::size_t max_steps = 20;
  SearchMode mode = SearchMode::kIterativeStride;
  std::vector<double> grid;  // grid mode only; ascending, starting at 0

  void validate() const;
};

/// Grid used by grid mode when none is given: 0, 0.2, ..., 2.0.
std::vector<double> default_alpha_grid();

enum class Termination { kNonImprovement, kMaxSteps, kGridExhausted };

const char* termination_name(Termination t);

struct Candidate {
  std::size_t k = 0;
  double multiplier = 0.0;  // step length in units of delta
  double loss = 0.0;
};

struct LineSearchResult {
  double anchor_loss = 0.0;
  double delta = 0.0;
  std::vector<Candidate> candidates;  // ascending k, no gaps
  std::size_t best_k = 0;             // 0 means the anchor
  double best_multiplier = 0.0;
  double best_loss = 0.0;
  ParameterVector best_params;
  Termination terminated_by = Termination::kNonImprovement;
};

/// delta = alpha * |z_newest - z_previous|. Throws when the projections coincide.
double adaptive_stride(double z_newest, double z_previous, double alpha);

/// Greedy search from `anchor` along unit `direction`. In iterative mode the
/// search stops at the first candidate whose loss exceeds the anchor loss, or
/// after max_steps candidates. A non-finite candidate loss counts as
/// non-improvement. Only the winning point is materialized.
LineSearchResult line_search(const ParameterVector& anchor, const ParameterVector& direction, double delta,
                             const LossFn& loss, const LineSearchConfig& config);

struct ExtraMergeResult {
  LineSearchResult search;
  SubspaceResult subspace;
  std::vector<std::uint64_t> merged_steps;  // anchor steps of the K merged states
};

/// Direction estimation and line search on an already merged sequence
/// (oldest first). Extrapolates from the newest state.
ExtraMergeResult extrapolate(std::span<const ParameterVector> merged, const LineSearchConfig& config,
                             const LossFn& loss);

struct ExtraMergeOptions {
  std::uint64_t start_step = 0;  // ignore checkpoints saved before this step
  std::size_t chunk_len = kDefaultChunkLen;
};

/// Full pipeline: sliding PMA over the manifest, then `extrapolate`.
ExtraMergeResult run_extra_merge(const CheckpointManifest& manifest, std::uint64_t tau, std::size_t n,
                                 std::size_t count, const LineSearchConfig& config, const LossFn& loss,
                                 const ExtraMergeOptions& options = {});

/// CSV of candidates (k, multiplier, loss) preceded by a summary comment with
/// best_k, best_loss and R1.
void write_search_csv(std::ostream& out, const ExtraMergeResult& result);

}  // namespace xmerge
