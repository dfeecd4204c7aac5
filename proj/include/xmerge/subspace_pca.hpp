#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "xmerge/checkpoint_store.hpp"
#include "xmerge/linalg.hpp"
#include "xmerge/merge_engine.hpp"
#include "xmerge/parameter_vector.hpp"

namespace xmerge {

/// Loss oracle: maps parameters to a finite scalar to be minimized.
using LossFn = std::function<double(const ParameterVector&)>;

/// Eigendecomposition of the K x K Gram matrix of mean-centered states.
struct GramDecomposition {
  DenseMatrix gram;
  std::vector<double> eigvals;               // descending, clamped at 0
  std::vector<std::vector<double>> eigvecs;  // eigvecs[k] pairs with eigvals[k]
  std::size_t dim = 0;                       // d of the underlying states

  std::size_t count() const noexcept { return gram.size(); }
  /// Sum of squared norms of the centered states (trace of the Gram matrix).
  double total_variance() const;
};

GramDecomposition gram_pca(std::span<const ParameterVector> states);
GramDecomposition gram_pca(std::span<const CheckpointRecord> records, std::size_t chunk_len = kDefaultChunkLen);

/// Leading eigenvalues below this are treated as "no dominant direction".
double degenerate_threshold(const GramDecomposition& decomp);

/// Unit-norm first principal direction, recovered as the q1-weighted sum of
/// the centered states. Throws a numerical error on a degenerate spectrum.
ParameterVector top_direction(const GramDecomposition& decomp, std::span<const ParameterVector> states);
ParameterVector top_direction(const GramDecomposition& decomp, std::span<const CheckpointRecord> records,
                              std::size_t chunk_len = kDefaultChunkLen);

/// Explained-variance ratios eigval_k / sum(eigvals).
std::vector<double> evr_spectrum(const GramDecomposition& decomp);

/// Flips `u1` so that <newest - previous, u1> > 0. Throws when the inner
/// product is exactly zero.
ParameterVector orient(const ParameterVector& u1, const ParameterVector& newest, const ParameterVector& previous);

double project(const ParameterVector& state, const ParameterVector& direction);

struct SubspaceResult {
  ParameterVector u1;                // first principal direction as recovered
  ParameterVector direction;         // u1 after orientation (equal to u1 if not oriented)
  std::vector<double> eigvals;
  std::vector<double> evr;
  std::vector<double> projections;   // state_i . direction, oldest to newest
  bool oriented = false;
};

/// Gram PCA, top direction, orientation by the last two states, projections.
/// States are ordered oldest to newest.
SubspaceResult analyze_subspace(std::span<const ParameterVector> states);

enum class ProfileShape { kMonotoneDecreasing, kConvexBasin, kOther };

const char* shape_name(ProfileShape shape);

struct InterpolationProfile {
  std::vector<double> alphas;
  std::vector<double> losses;
  ProfileShape classification = ProfileShape::kOther;
};

inline constexpr double kClassifyRelTol = 1e-4;

/// Classifies a loss profile. The tolerance is kClassifyRelTol times the
/// endpoint loss span.
ProfileShape classify_profile(std::span<const double> losses);

/// Loss along theta(alpha) = (1 - alpha) a + alpha b on a uniform grid of
/// `grid_size` points including both endpoints.
InterpolationProfile interpolation_scan(const ParameterVector& a, const ParameterVector& b, std::size_t grid_size,
                                        const LossFn& loss);

void write_profile_csv(std::ostream& out, const InterpolationProfile& profile);
void write_evr_csv(std::ostream& out, std::span<const double> evr);

}  // namespace xmerge
