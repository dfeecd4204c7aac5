#pragma once

// Synthetic river-valley dynamics.
//
// The landscape around the reference point w* is split into a river line
// w* + t v and a (d-1)-dimensional mountain subspace spanned by an
// orthonormal basis q_1..q_{d-1} with curvatures lambda_j:
//
//   L(w) = l(t) + 1/2 sum_j lambda_j z_j^2,   l(t) = l'_0 t + c t^2
//
// Plain SGD with river drift mu_F and mountain-only noise decouples into
//
//   t_{k+1} = t_k - eta (l'(t_k) + mu_F)
//   z_{k+1} = (1 - eta lambda_j) z_k + eta g_k,  g_k ~ N(0, sigma^2)
//
// so every mountain coordinate is an AR(1) process. All closed forms below
// follow from that.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "xmerge/extra_merge.hpp"
#include "xmerge/parameter_vector.hpp"
#include "xmerge/random.hpp"

namespace xmerge {

struct ValleySpec {
  std::size_t dim = 21;
  double eta = 0.1;
  double sigma = 1.0;
  double mu_f = 0.0;
  double ell_prime0 = 0.0;
  double river_curvature = 0.0;  // c in l(t); 0 gives a straight linear river
  std::vector<double> lambdas;   // dim - 1 mountain curvatures
  std::vector<double> river;     // unit river direction; empty means (1,...,1)/sqrt(d)
  std::vector<double> w_star;    // empty means the origin
  std::uint64_t basis_seed = 0;  // seeds the orthonormal mountain basis

  double drift() const noexcept { return ell_prime0 + mu_f; }
  void validate() const;
};

std::vector<double> log_spaced(double lo, double hi, std::size_t count);

/// d = 21, lambda_j log-spaced in [0.5, 5], eta = 0.1, sigma = 1, with the
/// drift (split evenly between l'_0 and mu_F) set so that the SNR of the
/// N = 8, K = 4, T = 25 merged trajectory equals 4.
ValleySpec default_valley_spec();

/// Default spec with sigma = 1.25 and the default drift.
ValleySpec high_noise_valley_spec();

/// Copy of `spec` with the drift rescaled so that snr_exact(N, K, T) == rho.
ValleySpec with_snr(const ValleySpec& spec, double rho, std::size_t N, std::size_t K, std::size_t T);

ValleySpec load_valley_spec(const std::filesystem::path& path);
ValleySpec valley_spec_from_text(std::istream& in);
void write_valley_spec(std::ostream& out, const ValleySpec& spec);

/// Geometry of a spec: the river direction and an orthonormal mountain basis.
class RiverValley {
 public:
  explicit RiverValley(ValleySpec spec);

  const ValleySpec& spec() const noexcept { return spec_; }
  std::size_t dim() const noexcept { return spec_.dim; }
  const std::vector<double>& river() const noexcept { return river_; }
  const std::vector<std::vector<double>>& mountain_basis() const noexcept { return basis_; }

  /// w = w* + t v + sum_j z_j q_j
  ParameterVector embed(double t, std::span<const double> z) const;
  double river_coord(const ParameterVector& w) const;
  std::vector<double> mountain_coords(const ParameterVector& w) const;

  double river_loss(double t) const noexcept;
  double river_slope(double t) const noexcept;
  double mountain_loss(std::span<const double> z) const;
  double loss(const ParameterVector& w) const;

 private:
  ValleySpec spec_;
  std::vector<double> river_;
  std::vector<std::vector<double>> basis_;
};

/// Iterates k = 0..steps in river/mountain coordinates.
struct Trajectory {
  std::vector<double> river_coords;
  std::vector<std::vector<double>> mountain_coords;
  std::uint64_t seed = 0;
};

/// t_0 = 0 and z_0 drawn from the stationary AR(1) law.
Trajectory simulate(const ValleySpec& spec, std::size_t steps, std::uint64_t seed);

/// eta sigma^2 / (2 lambda - eta lambda^2)
double stationary_variance(double eta, double lambda, double sigma);

/// Exact E D(avg)^2 for the uniform average of N stationary checkpoints
/// spaced T steps apart.
double exact_avg_deviation(const ValleySpec& spec, std::size_t N, std::size_t T);

struct DeviationBound {
  double bound = 0.0;
  double epsilon = 0.0;  // max_j |1 - eta lambda_j|^T
};

DeviationBound bound_avg_deviation(const ValleySpec& spec, std::size_t N, std::size_t T);

struct MonteCarloEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t n_seeds = 0;
};

MonteCarloEstimate monte_carlo_avg_deviation(const ValleySpec& spec, std::size_t N, std::size_t T,
                                             std::size_t n_seeds, std::uint64_t base_seed = 1);

/// Population variance of the arithmetic progression {-s Delta}_{s<K}:
/// Delta^2 (K^2 - 1) / 12.
double signal_variance(double delta_t, std::size_t K);

/// Delta_t = T eta (l'_0 + mu_F)
double drift_per_window(const ValleySpec& spec, std::size_t T);

/// Signal variance over exact residual mountain energy of a merged state.
double snr_exact(const ValleySpec& spec, std::size_t N, std::size_t K, std::size_t T);

/// Diagonal (in the mountain eigenbasis) of the expected centered sample
/// covariance of K sliding-window merged states.
std::vector<double> centered_mountain_covariance(const ValleySpec& spec, std::size_t N, std::size_t K,
                                                 std::size_t T);

double valley_loss(const ValleySpec& spec, const ParameterVector& w);

/// Raw checkpoints (every T steps) and the K sliding-window merged states
/// built from them, both in full parameter space, oldest first.
struct CheckpointSequence {
  std::vector<ParameterVector> raw;     // N + K - 1 checkpoints
  std::vector<ParameterVector> merged;  // K merged states
  std::vector<double> raw_river;        // river coordinate of each raw checkpoint
  std::vector<double> merged_river;
  std::vector<double> merged_deviation_sq;  // D(merged_s)^2
};

CheckpointSequence simulate_checkpoints(const RiverValley& valley, std::size_t N, std::size_t K, std::size_t T,
                                        Rng& rng);

struct AlignmentSeed {
  std::uint64_t seed = 0;
  double sin_angle = 0.0;
  double cos_sq = 0.0;
  double op_norm = 0.0;    // ||Sigma_hat - Sigma||_op
  double dk_ratio = 0.0;   // op_norm / delta_Sigma
  bool dk_holds = false;
  double evr1 = 0.0;
};

struct AlignmentStats {
  std::size_t N = 0, K = 0, T = 0, n_seeds = 0;
  double delta_t = 0.0;
  double signal_lower_bound = 0.0;     // Delta_t^2 (K^2-1)/12
  double sigma_sig2 = 0.0;             // Var of centered merged river coordinates
  double sigma_noise2 = 0.0;           // lambda_max of the exact centered mountain covariance
  double noise_trace = 0.0;            // its trace
  double resid_energy_exact = 0.0;     // exact E D(merged)^2
  double resid_energy_empirical = 0.0; // Monte-Carlo E D(merged)^2
  double snr = 0.0;                    // sigma_sig2 / resid_energy_empirical
  double delta_sigma = 0.0;            // sigma_sig2 - sigma_noise2
  double mean_sin_angle = 0.0;
  double mean_cos_sq = 0.0;
  double mean_dk_ratio = 0.0;
  double mean_evr1 = 0.0;
  std::size_t dk_checked = 0;
  std::size_t dk_held = 0;
  std::vector<AlignmentSeed> seeds;
};

AlignmentStats pca_alignment_experiment(const ValleySpec& spec, std::size_t N, std::size_t T, std::size_t K,
                                        std::size_t n_seeds, std::uint64_t base_seed = 1);

struct RectificationSeed {
  std::uint64_t seed = 0;
  double evr1_merged = 0.0;
  double evr1_raw = 0.0;
  bool merged_monotone = false;
  bool raw_monotone = false;
  ProfileShape raw_profile = ProfileShape::kOther;
  ProfileShape merged_profile = ProfileShape::kOther;
};

struct RectificationStats {
  std::size_t N = 0, K = 0, T = 0, n_seeds = 0;
  double mean_evr1_merged = 0.0;
  double mean_evr1_raw = 0.0;
  double merged_monotone_fraction = 0.0;
  double raw_monotone_fraction = 0.0;
  double raw_basin_fraction = 0.0;
  double merged_descent_fraction = 0.0;
  std::vector<RectificationSeed> seeds;
};

/// EVR and projection monotonicity of merged vs raw trajectories (K states
/// each), plus interpolation profiles between the last two raw and the last
/// two merged checkpoints.
RectificationStats rectification_experiment(const ValleySpec& spec, std::size_t N, std::size_t K, std::size_t T,
                                            std::size_t n_seeds, std::uint64_t base_seed = 1,
                                            std::size_t grid_size = 11);

struct SnrCell {
  std::size_t N = 0, K = 0, T = 0;
  double snr = 0.0;
  double snr_exact = 0.0;
};

struct SnrScaling {
  std::vector<SnrCell> n_sweep;   // varying N
  std::vector<SnrCell> kt_sweep;  // varying K and T
  double slope_n = 0.0;           // d log rho / d log N
  double slope_kt = 0.0;          // d log rho / d log (K T)
};

SnrScaling snr_scaling_experiment(const ValleySpec& spec, std::span<const std::size_t> Ns, std::size_t K_fixed,
                                  std::size_t T_fixed, std::size_t N_fixed, std::span<const std::size_t> Ks,
                                  std::span<const std::size_t> Ts, std::size_t n_seeds, std::uint64_t base_seed = 1);

/// Least-squares slope of y on x.
double fit_slope(std::span<const double> x, std::span<const double> y);

struct ValleyExtraMergeTrial {
  std::uint64_t seed = 0;
  double anchor_loss = 0.0;
  double best_loss = 0.0;
  std::size_t best_k = 0;
};

/// One Extra-Merge run on a simulated checkpoint stream, scored by the
/// valley loss.
ValleyExtraMergeTrial valley_extra_merge_trial(const ValleySpec& spec, std::size_t N, std::size_t K, std::size_t T,
                                               const LineSearchConfig& config, std::uint64_t seed,
                                               std::uint64_t base_seed = 1);

}  // namespace xmerge
