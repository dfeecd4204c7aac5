#include "xmerge/river_valley.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "xmerge/csv.hpp"
#include "xmerge/error.hpp"
#include "xmerge/key_value.hpp"
#include "xmerge/linalg.hpp"
#include "xmerge/merge_engine.hpp"
#include "xmerge/subspace_pca.hpp"

namespace xmerge {

namespace {

constexpr std::uint64_t kBasisStream = 0x6261736973ULL;  // "basis"

double ar_coefficient(const ValleySpec& spec, std::size_t j) { return 1.0 - spec.eta * spec.lambdas[j]; }

// Stationary draw of the mountain coordinates.
std::vector<double> stationary_start(const ValleySpec& spec, Rng& rng) {
  std::vector<double> z(spec.lambdas.size());
  for (std::size_t j = 0; j < z.size(); ++j)
    z[j] = std::sqrt(stationary_variance(spec.eta, spec.lambdas[j], spec.sigma)) * rng.normal();
  return z;
}

void advance(const ValleySpec& spec, const RiverValley* valley, double& t, std::vector<double>& z, Rng& rng,
             std::size_t steps) {
  for (std::size_t k = 0; k < steps; ++k) {
    const double slope = valley ? valley->river_slope(t) : spec.ell_prime0;
    t -= spec.eta * (slope + spec.mu_f);
    for (std::size_t j = 0; j < z.size(); ++j)
      z[j] = ar_coefficient(spec, j) * z[j] + spec.eta * spec.sigma * rng.normal();
  }
}

double population_variance(std::span<const double> xs) {
  CompensatedSum s;
  for (double x : xs) s.add(x);
  const double mean = s.value() / static_cast<double>(xs.size());
  CompensatedSum v;
  for (double x : xs) v.add((x - mean) * (x - mean));
  return v.value() / static_cast<double>(xs.size());
}

void require_positive(std::size_t value, const char* name) {
  if (value == 0) throw_usage(std::string(name) + " must be >= 1");
}

}  // namespace

void ValleySpec::validate() const {
  if (dim < 2) throw_usage("valley dimension d must be >= 2");
  if (lambdas.size() != dim - 1) throw_usage("valley spec needs exactly d-1 mountain eigenvalues");
  if (!(eta > 0.0) || !std::isfinite(eta)) throw_usage("eta must be positive");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw_usage("sigma must be non-negative");
  if (!std::isfinite(mu_f) || !std::isfinite(ell_prime0) || !std::isfinite(river_curvature))
    throw_usage("drift parameters must be finite");
  for (double l : lambdas) {
    if (!(l > 0.0) || !std::isfinite(l)) throw_usage("mountain eigenvalues must be positive");
    if (!(eta * l < 2.0)) throw_numerical("unstable spec: eta * lambda >= 2");
  }
  if (!river.empty()) {
    if (river.size() != dim) throw_usage("river direction must have d entries");
    if (std::abs(norm2(river) - 1.0) > 1e-10) throw_usage("river direction must be unit norm");
  }
  if (!w_star.empty() && w_star.size() != dim) throw_usage("w_star must have d entries");
}

std::vector<double> log_spaced(double lo, double hi, std::size_t count) {
  if (count == 0) return {};
  if (count == 1) return {lo};
  std::vector<double> out(count);
  const double a = std::log(lo), b = std::log(hi);
  for (std::size_t i = 0; i < count; ++i)
    out[i] = std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(count - 1));
  out.front() = lo;
  out.back() = hi;
  return out;
}

ValleySpec with_snr(const ValleySpec& spec, double rho, std::size_t N, std::size_t K, std::size_t T) {
  if (!(rho > 0.0)) throw_usage("target SNR must be positive");
  if (K < 2) throw_usage("K must be >= 2 for a drift signal");
  ValleySpec out = spec;
  const double noise = exact_avg_deviation(spec, N, T);
  const double target_delta = std::sqrt(rho * noise * 12.0 / (static_cast<double>(K * K) - 1.0));
  const double target_drift = target_delta / (static_cast<double>(T) * spec.eta);
  const double current = spec.drift();
  if (current > 0.0) {
    out.ell_prime0 = spec.ell_prime0 * target_drift / current;
    out.mu_f = spec.mu_f * target_drift / current;
  } else {
    out.ell_prime0 = 0.5 * target_drift;
    out.mu_f = 0.5 * target_drift;
  }
  return out;
}

ValleySpec default_valley_spec() {
  ValleySpec spec;
  spec.dim = 21;
  spec.eta = 0.1;
  spec.sigma = 1.0;
  spec.lambdas = log_spaced(0.5, 5.0, 20);
  return with_snr(spec, 4.0, 8, 4, 25);
}

ValleySpec high_noise_valley_spec() {
  ValleySpec spec = default_valley_spec();
  spec.sigma = 1.25;
  return spec;
}

ValleySpec valley_spec_from_text(std::istream& in) {
  const KeyValues kv = parse_key_values(in);
  ValleySpec spec = default_valley_spec();
  spec.dim = static_cast<std::size_t>(kv_int(kv, "d", static_cast<long long>(spec.dim)));
  spec.eta = kv_double(kv, "eta", spec.eta);
  spec.sigma = kv_double(kv, "sigma", spec.sigma);
  spec.mu_f = kv_double(kv, "mu_f", spec.mu_f);
  spec.ell_prime0 = kv_double(kv, "ell_prime0", spec.ell_prime0);
  spec.river_curvature = kv_double(kv, "river_curvature", spec.river_curvature);
  spec.basis_seed = static_cast<std::uint64_t>(kv_int(kv, "basis_seed", 0));
  spec.lambdas = kv_doubles(kv, "lambdas");
  if (spec.lambdas.empty() && spec.dim >= 2)
    spec.lambdas = log_spaced(kv_double(kv, "lambda_min", 0.5), kv_double(kv, "lambda_max", 5.0), spec.dim - 1);
  spec.river = kv_doubles(kv, "river");
  spec.w_star = kv_doubles(kv, "w_star");
  if (kv.count("target_snr")) {
    spec = with_snr(spec, kv_double(kv, "target_snr", 4.0), static_cast<std::size_t>(kv_int(kv, "snr_n", 8)),
                    static_cast<std::size_t>(kv_int(kv, "snr_k", 4)), static_cast<std::size_t>(kv_int(kv, "snr_t", 25)));
  }
  spec.validate();
  return spec;
}

ValleySpec load_valley_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw_data("cannot open valley spec: " + path.string());
  return valley_spec_from_text(in);
}

void write_valley_spec(std::ostream& out, const ValleySpec& spec) {
  out << "d=" << spec.dim << '\n'
      << "eta=" << format_double(spec.eta) << '\n'
      << "sigma=" << format_double(spec.sigma) << '\n'
      << "mu_f=" << format_double(spec.mu_f) << '\n'
      << "ell_prime0=" << format_double(spec.ell_prime0) << '\n'
      << "river_curvature=" << format_double(spec.river_curvature) << '\n'
      << "lambdas=" << join_doubles(spec.lambdas) << '\n'
      << "basis_seed=" << spec.basis_seed << '\n';
  if (!spec.river.empty()) out << "river=" << join_doubles(spec.river) << '\n';
  if (!spec.w_star.empty()) out << "w_star=" << join_doubles(spec.w_star) << '\n';
}

RiverValley::RiverValley(ValleySpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  const std::size_t d = spec_.dim;
  if (spec_.river.empty()) {
    river_.assign(d, 1.0 / std::sqrt(static_cast<double>(d)));
  } else {
    river_ = spec_.river;
  }
  if (spec_.w_star.empty()) spec_.w_star.assign(d, 0.0);

  // Orthonormal complement of v by Gram-Schmidt (two passes) on seeded draws.
  Rng rng(spec_.basis_seed, kBasisStream);
  basis_.reserve(d - 1);
  while (basis_.size() < d - 1) {
    std::vector<double> q(d);
    for (double& x : q) x = rng.normal();
    for (int pass = 0; pass < 2; ++pass) {
      axpy(-dot(q, river_), river_, q);
      for (const auto& b : basis_) axpy(-dot(q, b), b, q);
    }
    const double n = norm2(q);
    if (n < 1e-8) continue;
    for (double& x : q) x /= n;
    basis_.push_back(std::move(q));
  }
}

ParameterVector RiverValley::embed(double t, std::span<const double> z) const {
  if (z.size() != basis_.size()) throw_data("mountain coordinate count must be d-1");
  ParameterVector w(spec_.w_star);
  axpy(t, river_, w.span());
  for (std::size_t j = 0; j < z.size(); ++j) axpy(z[j], basis_[j], w.span());
  return w;
}

double RiverValley::river_coord(const ParameterVector& w) const {
  if (w.size() != dim()) throw_data("dimension mismatch in valley coordinates");
  CompensatedSum s;
  for (std::size_t i = 0; i < w.size(); ++i) s.add((w[i] - spec_.w_star[i]) * river_[i]);
  return s.value();
}

std::vector<double> RiverValley::mountain_coords(const ParameterVector& w) const {
  if (w.size() != dim()) throw_data("dimension mismatch in valley coordinates");
  std::vector<double> diff(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) diff[i] = w[i] - spec_.w_star[i];
  std::vector<double> z(basis_.size());
  for (std::size_t j = 0; j < basis_.size(); ++j) z[j] = dot(diff, basis_[j]);
  return z;
}

double RiverValley::river_loss(double t) const noexcept {
  return spec_.ell_prime0 * t + spec_.river_curvature * t * t;
}

double RiverValley::river_slope(double t) const noexcept {
  return spec_.ell_prime0 + 2.0 * spec_.river_curvature * t;
}

double RiverValley::mountain_loss(std::span<const double> z) const {
  CompensatedSum s;
  for (std::size_t j = 0; j < z.size(); ++j) s.add(0.5 * spec_.lambdas[j] * z[j] * z[j]);
  return s.value();
}

double RiverValley::loss(const ParameterVector& w) const {
  return river_loss(river_coord(w)) + mountain_loss(mountain_coords(w));
}

double valley_loss(const ValleySpec& spec, const ParameterVector& w) { return RiverValley(spec).loss(w); }

Trajectory simulate(const ValleySpec& spec, std::size_t steps, std::uint64_t seed) {
  require_positive(steps, "steps");
  const RiverValley valley(spec);
  Rng rng(seed);
  Trajectory out;
  out.seed = seed;
  double t = 0.0;
  std::vector<double> z = stationary_start(spec, rng);
  out.river_coords.reserve(steps + 1);
  out.mountain_coords.reserve(steps + 1);
  for (std::size_t k = 0; k <= steps; ++k) {
    out.river_coords.push_back(t);
    out.mountain_coords.push_back(z);
    if (k < steps) advance(spec, &valley, t, z, rng, 1);
  }
  return out;
}

double stationary_variance(double eta, double lambda, double sigma) {
  const double el = eta * lambda;
  if (!(el > 0.0 && el < 2.0)) throw_numerical("stationary variance requires 0 < eta * lambda < 2");
  return eta * sigma * sigma / (2.0 * lambda - eta * lambda * lambda);
}

double exact_avg_deviation(const ValleySpec& spec, std::size_t N, std::size_t T) {
  spec.validate();
  require_positive(N, "N");
  require_positive(T, "T");
  const double n = static_cast<double>(N);
  CompensatedSum total;
  for (std::size_t j = 0; j < spec.lambdas.size(); ++j) {
    const double aT = std::pow(ar_coefficient(spec, j), static_cast<double>(T));
    double bracket = n;
    double power = 1.0;
    for (std::size_t r = 1; r < N; ++r) {
      power *= aT;
      bracket += 2.0 * (n - static_cast<double>(r)) * power;
    }
    total.add(stationary_variance(spec.eta, spec.lambdas[j], spec.sigma) * bracket / (n * n));
  }
  return total.value();
}

DeviationBound bound_avg_deviation(const ValleySpec& spec, std::size_t N, std::size_t T) {
  spec.validate();
  require_positive(N, "N");
  require_positive(T, "T");
  DeviationBound out;
  CompensatedSum stationary;
  for (std::size_t j = 0; j < spec.lambdas.size(); ++j) {
    out.epsilon = std::max(out.epsilon, std::pow(std::abs(ar_coefficient(spec, j)), static_cast<double>(T)));
    stationary.add(stationary_variance(spec.eta, spec.lambdas[j], spec.sigma));
  }
  if (!(out.epsilon < 1.0)) throw_numerical("correlation factor epsilon >= 1");
  out.bound = (1.0 / static_cast<double>(N)) * (1.0 + 2.0 * out.epsilon / (1.0 - out.epsilon)) * stationary.value();
  return out;
}

MonteCarloEstimate monte_carlo_avg_deviation(const ValleySpec& spec, std::size_t N, std::size_t T,
                                             std::size_t n_seeds, std::uint64_t base_seed) {
  spec.validate();
  require_positive(N, "N");
  require_positive(T, "T");
  if (n_seeds < 2) throw_usage("Monte-Carlo estimate needs at least 2 seeds");
  double mean = 0.0, m2 = 0.0;
  std::vector<double> zbar(spec.lambdas.size());
  for (std::size_t i = 0; i < n_seeds; ++i) {
    Rng rng(base_seed, i);
    double t = 0.0;
    auto z = stationary_start(spec, rng);
    std::fill(zbar.begin(), zbar.end(), 0.0);
    for (std::size_t m = 0; m < N; ++m) {
      if (m > 0) advance(spec, nullptr, t, z, rng, T);
      for (std::size_t j = 0; j < z.size(); ++j) zbar[j] += z[j];
    }
    double dev = 0.0;
    for (double x : zbar) dev += (x / static_cast<double>(N)) * (x / static_cast<double>(N));
    const double delta = dev - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (dev - mean);
  }
  MonteCarloEstimate out;
  out.mean = mean;
  out.n_seeds = n_seeds;
  out.std_error = std::sqrt(m2 / static_cast<double>(n_seeds - 1) / static_cast<double>(n_seeds));
  return out;
}

double signal_variance(double delta_t, std::size_t K) {
  const double k = static_cast<double>(K);
  return delta_t * delta_t * (k * k - 1.0) / 12.0;
}

double drift_per_window(const ValleySpec& spec, std::size_t T) {
  return static_cast<double>(T) * spec.eta * spec.drift();
}

double snr_exact(const ValleySpec& spec, std::size_t N, std::size_t K, std::size_t T) {
  return signal_variance(drift_per_window(spec, T), K) / exact_avg_deviation(spec, N, T);
}

std::vector<double> centered_mountain_covariance(const ValleySpec& spec, std::size_t N, std::size_t K,
                                                 std::size_t T) {
  spec.validate();
  require_positive(N, "N");
  require_positive(K, "K");
  require_positive(T, "T");
  const std::size_t M = N + K - 1;
  std::vector<double> out(spec.lambdas.size());
  for (std::size_t j = 0; j < spec.lambdas.size(); ++j) {
    const double var = stationary_variance(spec.eta, spec.lambdas[j], spec.sigma);
    const double aT = std::pow(ar_coefficient(spec, j), static_cast<double>(T));
    std::vector<double> lag(M);
    lag[0] = var;
    for (std::size_t r = 1; r < M; ++r) lag[r] = lag[r - 1] * aT;
    // Cov(merged_s, merged_u) = (1/N^2) sum_{i,i'} lag[|s+i-u-i'|]
    DenseMatrix cov(K);
    for (std::size_t s = 0; s < K; ++s) {
      for (std::size_t u = 0; u < K; ++u) {
        double acc = 0.0;
        for (std::size_t i = 0; i < N; ++i)
          for (std::size_t ii = 0; ii < N; ++ii) {
            const std::size_t a = s + i, b = u + ii;
            acc += lag[a > b ? a - b : b - a];
          }
        cov(s, u) = acc / static_cast<double>(N * N);
      }
    }
    // (1/K) tr(P C P) with P the centering projector.
    double trace = 0.0, sum = 0.0;
    for (std::size_t s = 0; s < K; ++s) {
      trace += cov(s, s);
      for (std::size_t u = 0; u < K; ++u) sum += cov(s, u);
    }
    out[j] = (trace - sum / static_cast<double>(K)) / static_cast<double>(K);
  }
  return out;
}

CheckpointSequence simulate_checkpoints(const RiverValley& valley, std::size_t N, std::size_t K, std::size_t T,
                                        Rng& rng) {
  require_positive(N, "N");
  require_positive(K, "K");
  require_positive(T, "T");
  const ValleySpec& spec = valley.spec();
  const std::size_t M = N + K - 1;
  CheckpointSequence out;
  out.raw.reserve(M);
  double t = 0.0;
  auto z = stationary_start(spec, rng);
  std::vector<std::vector<double>> raw_z;
  for (std::size_t m = 0; m < M; ++m) {
    if (m > 0) advance(spec, &valley, t, z, rng, T);
    out.raw.push_back(valley.embed(t, z));
    out.raw_river.push_back(t);
    raw_z.push_back(z);
  }
  const auto weights = uniform_weights(N);
  for (std::size_t s = 0; s < K; ++s) {
    std::span<const ParameterVector> window(out.raw.data() + s, N);
    out.merged.push_back(weighted_average(window, weights));
    double tm = 0.0;
    std::vector<double> zm(z.size(), 0.0);
    for (std::size_t i = s; i < s + N; ++i) {
      tm += out.raw_river[i];
      for (std::size_t j = 0; j < zm.size(); ++j) zm[j] += raw_z[i][j];
    }
    out.merged_river.push_back(tm / static_cast<double>(N));
    double dev = 0.0;
    for (double x : zm) dev += (x / static_cast<double>(N)) * (x / static_cast<double>(N));
    out.merged_deviation_sq.push_back(dev);
  }
  return out;
}

AlignmentStats pca_alignment_experiment(const ValleySpec& spec, std::size_t N, std::size_t T, std::size_t K,
                                        std::size_t n_seeds, std::uint64_t base_seed) {
  if (K < 2) throw_usage("K must be >= 2");
  require_positive(n_seeds, "n_seeds");
  const RiverValley valley(spec);
  const std::size_t d = valley.dim();

  AlignmentStats out;
  out.N = N;
  out.K = K;
  out.T = T;
  out.n_seeds = n_seeds;
  out.delta_t = drift_per_window(spec, T);
  out.signal_lower_bound = signal_variance(out.delta_t, K);
  out.resid_energy_exact = exact_avg_deviation(spec, N, T);

  const auto noise_diag = centered_mountain_covariance(spec, N, K, T);
  out.sigma_noise2 = *std::max_element(noise_diag.begin(), noise_diag.end());
  for (double c : noise_diag) out.noise_trace += c;

  // The river is noiseless, so its merged coordinates are the same in every seed.
  {
    Rng probe(base_seed, 0);
    const auto seq = simulate_checkpoints(valley, N, K, T, probe);
    out.sigma_sig2 = population_variance(seq.merged_river);
  }
  out.delta_sigma = out.sigma_sig2 - out.sigma_noise2;

  DenseMatrix sigma(d);
  const auto& v = valley.river();
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = 0; b < d; ++b) {
      double x = out.sigma_sig2 * v[a] * v[b];
      for (std::size_t j = 0; j < noise_diag.size(); ++j)
        x += noise_diag[j] * valley.mountain_basis()[j][a] * valley.mountain_basis()[j][b];
      sigma(a, b) = x;
    }
  }

  double resid_sum = 0.0;
  out.seeds.reserve(n_seeds);
  for (std::size_t i = 0; i < n_seeds; ++i) {
    Rng rng(base_seed, i);
    const auto seq = simulate_checkpoints(valley, N, K, T, rng);
    for (double dev : seq.merged_deviation_sq) resid_sum += dev;

    const auto decomp = gram_pca(seq.merged);
    const auto u1 = top_direction(decomp, seq.merged);
    AlignmentSeed row;
    row.seed = i;
    const double c = dot(u1.span(), v);
    row.cos_sq = c * c;
    // Residual norm rather than sqrt(1 - cos^2), which loses half the digits near 0.
    std::vector<double> resid(u1.values());
    axpy(-c, v, resid);
    row.sin_angle = std::min(1.0, norm2(resid));
    row.evr1 = evr_spectrum(decomp).front();

    // Sample covariance (1/K) sum_s x_s x_s^T of the centered merged states.
    std::vector<ParameterVector> centered = seq.merged;
    for (std::size_t a = 0; a < d; ++a) {
      double mean = 0.0;
      for (const auto& m : seq.merged) mean += m[a];
      mean /= static_cast<double>(K);
      for (auto& x : centered) x[a] -= mean;
    }
    DenseMatrix diff(d);
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = a; b < d; ++b) {
        double x = 0.0;
        for (const auto& s : centered) x += s[a] * s[b];
        const double e = x / static_cast<double>(K) - sigma(a, b);
        diff(a, b) = e;
        diff(b, a) = e;
      }
    }
    row.op_norm = symmetric_operator_norm(diff);
    if (out.delta_sigma > 0.0) {
      row.dk_ratio = row.op_norm / out.delta_sigma;
      row.dk_holds = row.cos_sq >= 1.0 - row.dk_ratio * row.dk_ratio - 1e-12;
      ++out.dk_checked;
      if (row.dk_holds) ++out.dk_held;
    }
    out.mean_sin_angle += row.sin_angle;
    out.mean_cos_sq += row.cos_sq;
    out.mean_dk_ratio += row.dk_ratio;
    out.mean_evr1 += row.evr1;
    out.seeds.push_back(row);
  }
  const double n = static_cast<double>(n_seeds);
  out.mean_sin_angle /= n;
  out.mean_cos_sq /= n;
  out.mean_dk_ratio /= n;
  out.mean_evr1 /= n;
  out.resid_energy_empirical = resid_sum / (n * static_cast<double>(K));
  out.snr = out.sigma_sig2 / out.resid_energy_empirical;
  return out;
}

namespace {

bool strictly_increasing(std::span<const double> xs) {
  for (std::size_t i = 1; i < xs.size(); ++i)
    if (!(xs[i] > xs[i - 1])) return false;
  return true;
}

}  // namespace

RectificationStats rectification_experiment(const ValleySpec& spec, std::size_t N, std::size_t K, std::size_t T,
                                            std::size_t n_seeds, std::uint64_t base_seed, std::size_t grid_size) {
  if (K < 2) throw_usage("K must be >= 2");
  require_positive(n_seeds, "n_seeds");
  const RiverValley valley(spec);
  const LossFn loss = [&valley](const ParameterVector& w) { return valley.loss(w); };

  RectificationStats out;
  out.N = N;
  out.K = K;
  out.T = T;
  out.n_seeds = n_seeds;
  for (std::size_t i = 0; i < n_seeds; ++i) {
    Rng rng(base_seed, i);
    const auto seq = simulate_checkpoints(valley, N, K, T, rng);
    std::span<const ParameterVector> raw_tail(seq.raw.data() + seq.raw.size() - K, K);

    RectificationSeed row;
    row.seed = i;
    const auto merged = analyze_subspace(seq.merged);
    const auto raw = analyze_subspace(raw_tail);
    row.evr1_merged = merged.evr.front();
    row.evr1_raw = raw.evr.front();
    row.merged_monotone = strictly_increasing(merged.projections);
    row.raw_monotone = strictly_increasing(raw.projections);
    row.raw_profile =
        interpolation_scan(seq.raw[seq.raw.size() - 2], seq.raw.back(), grid_size, loss).classification;
    row.merged_profile = interpolation_scan(seq.merged[K - 2], seq.merged.back(), grid_size, loss).classification;

    out.mean_evr1_merged += row.evr1_merged;
    out.mean_evr1_raw += row.evr1_raw;
    out.merged_monotone_fraction += row.merged_monotone;
    out.raw_monotone_fraction += row.raw_monotone;
    out.raw_basin_fraction += row.raw_profile == ProfileShape::kConvexBasin;
    out.merged_descent_fraction += row.merged_profile == ProfileShape::kMonotoneDecreasing;
    out.seeds.push_back(row);
  }
  const double n = static_cast<double>(n_seeds);
  out.mean_evr1_merged /= n;
  out.mean_evr1_raw /= n;
  out.merged_monotone_fraction /= n;
  out.raw_monotone_fraction /= n;
  out.raw_basin_fraction /= n;
  out.merged_descent_fraction /= n;
  return out;
}

double fit_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw_usage("slope fit needs at least two paired points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (!(sxx > 0.0)) throw_usage("slope fit needs distinct x values");
  return sxy / sxx;
}

namespace {

SnrCell measure_snr(const RiverValley& valley, std::size_t N, std::size_t K, std::size_t T, std::size_t n_seeds,
                    std::uint64_t base_seed) {
  SnrCell cell{N, K, T, 0.0, snr_exact(valley.spec(), N, K, T)};
  double signal = 0.0, resid = 0.0;
  for (std::size_t i = 0; i < n_seeds; ++i) {
    Rng rng(base_seed, i);
    const auto seq = simulate_checkpoints(valley, N, K, T, rng);
    signal += population_variance(seq.merged_river);
    for (double dev : seq.merged_deviation_sq) resid += dev;
  }
  cell.snr = (signal / static_cast<double>(n_seeds)) / (resid / static_cast<double>(n_seeds * K));
  return cell;
}

}  // namespace

SnrScaling snr_scaling_experiment(const ValleySpec& spec, std::span<const std::size_t> Ns, std::size_t K_fixed,
                                  std::size_t T_fixed, std::size_t N_fixed, std::span<const std::size_t> Ks,
                                  std::span<const std::size_t> Ts, std::size_t n_seeds, std::uint64_t base_seed) {
  require_positive(n_seeds, "n_seeds");
  const RiverValley valley(spec);
  SnrScaling out;
  std::vector<double> x, y;
  for (std::size_t N : Ns) {
    out.n_sweep.push_back(measure_snr(valley, N, K_fixed, T_fixed, n_seeds, base_seed));
    x.push_back(std::log(static_cast<double>(N)));
    y.push_back(std::log(out.n_sweep.back().snr));
  }
  out.slope_n = fit_slope(x, y);
  x.clear();
  y.clear();
  for (std::size_t K : Ks) {
    for (std::size_t T : Ts) {
      out.kt_sweep.push_back(measure_snr(valley, N_fixed, K, T, n_seeds, base_seed));
      x.push_back(std::log(static_cast<double>(K * T)));
      y.push_back(std::log(out.kt_sweep.back().snr));
    }
  }
  out.slope_kt = fit_slope(x, y);
  return out;
}

ValleyExtraMergeTrial valley_extra_merge_trial(const ValleySpec& spec, std::size_t N, std::size_t K, std::size_t T,
                                               const LineSearchConfig& config, std::uint64_t seed,
                                               std::uint64_t base_seed) {
  const RiverValley valley(spec);
  Rng rng(base_seed, seed);
  const auto seq = simulate_checkpoints(valley, N, K, T, rng);
  const LossFn loss = [&valley](const ParameterVector& w) { return valley.loss(w); };
  const auto result = extrapolate(seq.merged, config, loss);
  return {seed, result.search.anchor_loss, result.search.best_loss, result.search.best_k};
}

}  // namespace xmerge
