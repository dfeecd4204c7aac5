#include "xmerge/subspace_pca.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>

#include "xmerge/csv.hpp"
#include "xmerge/error.hpp"

namespace xmerge {

namespace {

// Centers one slice of K states in place: x_i[j] = theta_i[j] - mean_j.
void center_slice(std::vector<std::vector<double>>& slices) {
  const std::size_t k = slices.size();
  const std::size_t len = slices.front().size();
  for (std::size_t j = 0; j < len; ++j) {
    CompensatedSum s;
    for (std::size_t i = 0; i < k; ++i) s.add(slices[i][j]);
    const double mean = s.value() / static_cast<double>(k);
    for (std::size_t i = 0; i < k; ++i) slices[i][j] -= mean;
  }
}

// Feeds aligned slices of K states, in ascending index order, to `visit`
// after centering. In-memory states are presented as a single slice.
template <typename Visit>
std::size_t for_each_centered_slice(std::span<const ParameterVector> states, Visit&& visit) {
  if (states.size() < 2) throw_usage("PCA needs at least K=2 states");
  const std::size_t d = states.front().size();
  std::vector<std::vector<double>> slices;
  slices.reserve(states.size());
  for (const auto& s : states) {
    if (s.size() != d) throw_data("dimension mismatch among PCA states");
    slices.push_back(s.values());
  }
  center_slice(slices);
  visit(slices);
  return d;
}

template <typename Visit>
std::size_t for_each_centered_slice(std::span<const CheckpointRecord> records, std::size_t chunk_len,
                                    Visit&& visit) {
  if (records.size() < 2) throw_usage("PCA needs at least K=2 states");
  std::vector<ChunkReader> readers;
  readers.reserve(records.size());
  for (const auto& r : records) readers.emplace_back(r, chunk_len);
  const std::uint64_t d = readers.front().dim();
  for (const auto& r : readers)
    if (r.dim() != d) throw_data("dimension mismatch among PCA states");

  std::vector<std::vector<double>> slices(records.size());
  std::uint64_t offset = 0;
  while (offset < d) {
    for (std::size_t i = 0; i < readers.size(); ++i)
      if (!readers[i].next(slices[i])) throw_data("unexpected end of checkpoint payload");
    center_slice(slices);
    visit(slices);
    offset += slices.front().size();
  }
  return d;
}

class GramAccumulator {
 public:
  explicit GramAccumulator(std::size_t k) : k_(k), sums_(k * (k + 1) / 2) {}

  void operator()(const std::vector<std::vector<double>>& slices) {
    const std::size_t len = slices.front().size();
    for (std::size_t j = 0; j < len; ++j) {
      std::size_t idx = 0;
      for (std::size_t a = 0; a < k_; ++a)
        for (std::size_t b = a; b < k_; ++b) sums_[idx++].add(slices[a][j] * slices[b][j]);
    }
  }

  GramDecomposition finish(std::size_t dim) const {
    GramDecomposition out;
    out.dim = dim;
    out.gram = DenseMatrix(k_);
    std::size_t idx = 0;
    for (std::size_t a = 0; a < k_; ++a) {
      for (std::size_t b = a; b < k_; ++b) {
        const double v = sums_[idx++].value();
        out.gram(a, b) = v;
        out.gram(b, a) = v;
      }
    }
    auto eig = jacobi_eigen(out.gram);
    const double scale = std::max(1.0, out.total_variance());
    for (double& v : eig.values) {
      if (v < 0.0) {
        if (v < -1e-9 * scale) throw_numerical("Gram matrix is not positive semi-definite");
        v = 0.0;
      }
    }
    out.eigvals = std::move(eig.values);
    out.eigvecs = std::move(eig.vectors);
    return out;
  }

 private:
  std::size_t k_;
  std::vector<CompensatedSum> sums_;
};

class DirectionAccumulator {
 public:
  DirectionAccumulator(std::span<const double> weights, std::size_t dim) : weights_(weights) {
    out_.reserve(dim);
  }

  void operator()(const std::vector<std::vector<double>>& slices) {
    const std::size_t len = slices.front().size();
    for (std::size_t j = 0; j < len; ++j) {
      CompensatedSum s;
      for (std::size_t i = 0; i < weights_.size(); ++i) s.add(weights_[i] * slices[i][j]);
      out_.push_back(s.value());
    }
  }

  ParameterVector finish() {
    const double n = norm2(out_);
    if (!(n > 0.0) || !std::isfinite(n)) throw_numerical("no dominant direction: recovered direction has zero norm");
    for (double& x : out_) x /= n;
    return ParameterVector(std::move(out_));
  }

 private:
  std::span<const double> weights_;
  std::vector<double> out_;
};

void require_dominant(const GramDecomposition& decomp) {
  if (decomp.eigvals.empty() || decomp.eigvals.front() < degenerate_threshold(decomp))
    throw_numerical("no dominant direction: degenerate spectrum (leading eigenvalue " +
                    format_double(decomp.eigvals.empty() ? 0.0 : decomp.eigvals.front()) + ")");
}

}  // namespace

double GramDecomposition::total_variance() const {
  CompensatedSum s;
  for (std::size_t i = 0; i < gram.size(); ++i) s.add(gram(i, i));
  return s.value();
}

double degenerate_threshold(const GramDecomposition& decomp) {
  const double mean_sq_norm = decomp.count() ? decomp.total_variance() / static_cast<double>(decomp.count()) : 0.0;
  return 1e-12 * std::max(1.0, mean_sq_norm);
}

GramDecomposition gram_pca(std::span<const ParameterVector> states) {
  GramAccumulator acc(states.size());
  const std::size_t d = for_each_centered_slice(states, acc);
  return acc.finish(d);
}

GramDecomposition gram_pca(std::span<const CheckpointRecord> records, std::size_t chunk_len) {
  GramAccumulator acc(records.size());
  const std::size_t d = for_each_centered_slice(records, chunk_len, acc);
  return acc.finish(d);
}

ParameterVector top_direction(const GramDecomposition& decomp, std::span<const ParameterVector> states) {
  require_dominant(decomp);
  if (states.size() != decomp.count()) throw_usage("state count does not match the Gram decomposition");
  DirectionAccumulator acc(decomp.eigvecs.front(), decomp.dim);
  for_each_centered_slice(states, acc);
  return acc.finish();
}

ParameterVector top_direction(const GramDecomposition& decomp, std::span<const CheckpointRecord> records,
                              std::size_t chunk_len) {
  require_dominant(decomp);
  if (records.size() != decomp.count()) throw_usage("record count does not match the Gram decomposition");
  DirectionAccumulator acc(decomp.eigvecs.front(), decomp.dim);
  for_each_centered_slice(records, chunk_len, acc);
  return acc.finish();
}

std::vector<double> evr_spectrum(const GramDecomposition& decomp) {
  CompensatedSum total;
  for (double v : decomp.eigvals) total.add(v);
  if (!(total.value() > 0.0)) throw_numerical("degenerate trajectory: all-zero spectrum");
  std::vector<double> out;
  out.reserve(decomp.eigvals.size());
  for (double v : decomp.eigvals) out.push_back(v / total.value());
  return out;
}

ParameterVector orient(const ParameterVector& u1, const ParameterVector& newest, const ParameterVector& previous) {
  if (u1.size() != newest.size() || u1.size() != previous.size()) throw_data("dimension mismatch in orient");
  CompensatedSum s;
  for (std::size_t j = 0; j < u1.size(); ++j) s.add((newest[j] - previous[j]) * u1[j]);
  const double inner = s.value();
  if (inner == 0.0) throw_numerical("orientation undefined: displacement is orthogonal to the principal direction");
  if (inner > 0.0) return u1;
  ParameterVector flipped = u1;
  for (double& x : flipped) x = -x;
  return flipped;
}

double project(const ParameterVector& state, const ParameterVector& direction) {
  if (state.size() != direction.size()) throw_data("dimension mismatch in project");
  return dot(state.span(), direction.span());
}

SubspaceResult analyze_subspace(std::span<const ParameterVector> states) {
  SubspaceResult out;
  const auto decomp = gram_pca(states);
  out.eigvals = decomp.eigvals;
  out.u1 = top_direction(decomp, states);
  out.evr = evr_spectrum(decomp);
  out.direction = orient(out.u1, states[states.size() - 1], states[states.size() - 2]);
  out.oriented = true;
  out.projections.reserve(states.size());
  for (const auto& s : states) out.projections.push_back(project(s, out.direction));
  return out;
}

const char* shape_name(ProfileShape shape) {
  switch (shape) {
    case ProfileShape::kMonotoneDecreasing:
      return "monotone-decreasing";
    case ProfileShape::kConvexBasin:
      return "convex-basin";
    case ProfileShape::kOther:
      return "other";
  }
  return "other";
}

ProfileShape classify_profile(std::span<const double> losses) {
  if (losses.size() < 3) throw_usage("profile needs at least 3 points");
  const double first = losses.front();
  const double last = losses.back();
  const double tol = kClassifyRelTol * std::abs(first - last);
  const double interior_min = *std::min_element(losses.begin() + 1, losses.end() - 1);
  if (interior_min < std::min(first, last) - tol) return ProfileShape::kConvexBasin;
  bool non_increasing = last < first - tol;
  for (std::size_t i = 1; non_increasing && i < losses.size(); ++i)
    non_increasing = losses[i] <= losses[i - 1] + tol;
  return non_increasing ? ProfileShape::kMonotoneDecreasing : ProfileShape::kOther;
}

InterpolationProfile interpolation_scan(const ParameterVector& a, const ParameterVector& b, std::size_t grid_size,
                                        const LossFn& loss) {
  if (grid_size < 3) throw_usage("interpolation grid needs at least 3 points");
  if (a.size() != b.size()) throw_data("dimension mismatch in interpolation_scan");
  InterpolationProfile out;
  out.alphas.reserve(grid_size);
  out.losses.reserve(grid_size);
  ParameterVector theta(a.size());
  for (std::size_t i = 0; i < grid_size; ++i) {
    const double alpha = static_cast<double>(i) / static_cast<double>(grid_size - 1);
    for (std::size_t j = 0; j < a.size(); ++j) theta[j] = (1.0 - alpha) * a[j] + alpha * b[j];
    out.alphas.push_back(alpha);
    out.losses.push_back(loss(i == 0 ? a : (i + 1 == grid_size ? b : theta)));
  }
  out.classification = classify_profile(out.losses);
  return out;
}

void write_profile_csv(std::ostream& out, const InterpolationProfile& profile) {
  CsvWriter csv(out);
  csv.comment(std::string("classification=") + shape_name(profile.classification));
  csv.row("alpha", "loss");
  for (std::size_t i = 0; i < profile.alphas.size(); ++i) csv.row(profile.alphas[i], profile.losses[i]);
}

void write_evr_csv(std::ostream& out, std::span<const double> evr) {
  CsvWriter csv(out);
  csv.row("k", "evr");
  for (std::size_t k = 0; k < evr.size(); ++k) csv.row(k + 1, evr[k]);
}

}  // namespace xmerge
