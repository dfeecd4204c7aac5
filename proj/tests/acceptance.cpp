// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <cfloat>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "test_support.hpp"
#include "toy_gradcheck.hpp"
#include "xmerge/extra_merge.hpp"
#include "xmerge/river_valley.hpp"
#include "xmerge/subspace_pca.hpp"
#include "xmerge/toy_trainer.hpp"

using namespace xmerge;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

// 1. Exact averaged-deviation formula vs Monte Carlo on the default grid.
Outcome exact_formula() {
  const auto spec = default_valley_spec();
  const auto start = std::chrono::steady_clock::now();
  int within = 0, bounded = 0, cells = 0;
  double worst_z = 0.0;
  for (std::size_t N : {1, 2, 4, 8, 16}) {
    for (std::size_t T : {1, 5, 25}) {
      ++cells;
      const auto mc = monte_carlo_avg_deviation(spec, N, T, 1000);
      const double exact = exact_avg_deviation(spec, N, T);
      const double z = std::abs(mc.mean - exact) / mc.std_error;
      worst_z = std::max(worst_z, z);
      within += z <= 3.0;
      bounded += bound_avg_deviation(spec, N, T).bound > exact;
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {within == cells && bounded == cells && secs < 120.0,
          fmt("cells within 3 SE %d/%d (max |z| %.2f), bound > exact %d/%d, runtime %.2fs", within, cells, worst_z,
              bounded, cells, secs)};
}

// 2. O(1/N) decay once checkpoints are nearly uncorrelated.
Outcome one_over_n() {
  const auto spec = default_valley_spec();
  const std::size_t T = 100;
  const double eps = bound_avg_deviation(spec, 1, T).epsilon;
  const auto m1 = monte_carlo_avg_deviation(spec, 1, T, 1000);
  const auto m16 = monte_carlo_avg_deviation(spec, 16, T, 1000);
  const double ratio_mc = m16.mean / m1.mean;
  const double ratio_exact = exact_avg_deviation(spec, 16, T) / exact_avg_deviation(spec, 1, T);
  const double lo = 0.8 / 16, hi = 1.25 / 16;
  const bool pass = eps < 0.01 && ratio_mc >= lo && ratio_mc <= hi && ratio_exact >= lo && ratio_exact <= hi;
  return {pass, fmt("T=%zu eps=%.4f, ratio N=16/N=1: Monte Carlo %.5f, exact %.5f, window [%.5f, %.5f]", T, eps,
                    ratio_mc, ratio_exact, lo, hi)};
}

// 3. Davis-Kahan alignment and monotone response to the SNR.
Outcome alignment() {
  const auto spec = default_valley_spec();
  const auto base = pca_alignment_experiment(spec, 8, 25, 4, 500);
  bool pass = base.snr > 1.0 && base.dk_checked > 0 && base.dk_held == base.dk_checked;
  std::string detail = fmt("default spec rho=%.2f: bound held %zu/%zu; mean sin by rho", base.snr, base.dk_held,
                           base.dk_checked);
  double previous = 2.0;
  for (double rho : {2.0, 4.0, 8.0, 16.0}) {
    const auto a = pca_alignment_experiment(with_snr(spec, rho, 8, 4, 25), 8, 25, 4, 500);
    pass = pass && a.mean_sin_angle < previous && a.dk_held == a.dk_checked;
    previous = a.mean_sin_angle;
    detail += fmt(" %g:%.4f", rho, a.mean_sin_angle);
  }
  return {pass, detail};
}

// 4. SNR scaling exponents.
Outcome snr_scaling() {
  const std::vector<std::size_t> ns{2, 4, 8, 16, 32}, ks{2, 3, 4, 6, 8}, ts{50, 100, 200};
  const auto s = snr_scaling_experiment(default_valley_spec(), ns, 4, 50, 8, ks, ts, 200);
  const bool pass = std::abs(s.slope_n - 1.0) <= 0.25 && std::abs(s.slope_kt - 2.0) <= 0.25;
  return {pass, fmt("slope vs N %.3f (1 +/- 0.25), slope vs K*T %.3f (2 +/- 0.25)", s.slope_n, s.slope_kt)};
}

// 5. Rank-1 concentration of merged trajectories.
Outcome rank_one() {
  const auto r = rectification_experiment(default_valley_spec(), 8, 5, 25, 200);
  const double gap = r.mean_evr1_merged - r.mean_evr1_raw;
  return {gap >= 0.15 && r.mean_evr1_merged > 0.9,
          fmt("mean R1 merged %.4f, raw %.4f, gap %.4f (>= 0.15), merged floor 0.9", r.mean_evr1_merged,
              r.mean_evr1_raw, gap)};
}

// 6. Rectification on the high-noise spec.
Outcome rectification() {
  const auto r = rectification_experiment(high_noise_valley_spec(), 8, 4, 25, 200);
  const bool pass =
      r.merged_monotone_fraction >= 0.9 && r.raw_basin_fraction >= 0.9 && r.merged_descent_fraction >= 0.9;
  return {pass, fmt("merged projections monotone %.3f, raw pair convex-basin %.3f, merged pair monotone-decreasing "
                    "%.3f (each >= 0.9)",
                    r.merged_monotone_fraction, r.raw_basin_fraction, r.merged_descent_fraction)};
}

// 7. Extra-Merge never worse and usually better.
Outcome extra_merge() {
  const auto spec = default_valley_spec();
  int sim_le = 0, sim_lt = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto t = valley_extra_merge_trial(spec, 8, 4, 25, {}, seed);
    sim_le += t.best_loss <= t.anchor_loss;
    sim_lt += t.best_loss < t.anchor_loss;
  }
  int toy_le = 0, toy_lt = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    xmerge::testing::TempDir dir("xmerge_accept");
    ToyTaskConfig config;
    config.seed = seed;
    const auto run = train(config, dir.path());
    const LossFn loss = [&](const ParameterVector& p) { return evaluate_loss(run.oracle, p); };
    const auto r = run_extra_merge(run.manifest, config.save_every, 8, 4, {}, loss);
    toy_le += r.search.best_loss <= r.search.anchor_loss;
    toy_lt += r.search.best_loss < r.search.anchor_loss;
  }
  const bool pass = sim_le == 50 && toy_le == 50 && sim_lt >= 40 && toy_lt >= 40;
  return {pass, fmt("simulator never-worse %d/50 strictly lower %d/50; toy never-worse %d/50 strictly lower %d/50 "
                    "(need 50 and >= 40)",
                    sim_le, sim_lt, toy_le, toy_lt)};
}

// 8. Gram-matrix direction equals the dense SVD direction.
Outcome gram_svd() {
  Rng rng(2024);
  int ok = 0;
  double worst = 1.0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t k = 2 + rng.below(5);
    const std::size_t d = 1 + rng.below(50);
    const auto states = xmerge::testing::random_states(rng, k, d, std::exp(rng.normal()));
    const auto u = top_direction(gram_pca(states), states);
    const double c = xmerge::testing::abs_cosine(u, xmerge::testing::svd_top_direction(states));
    worst = std::min(worst, c);
    ok += c >= 1 - 1e-8;
  }
  return {ok == 200, fmt("%d/200 instances with cosine >= 1 - 1e-8 (worst 1 - %.2e)", ok, 1 - worst)};
}

// 9. Signal variance against brute-force population variance.
Outcome signal_exactness() {
  double worst = 0.0;
  for (double delta : {1.0, 0.37, 2.5, 1e-3, 123.456}) {
    for (std::size_t K = 1; K <= 32; ++K) {
      std::vector<double> xs;
      for (std::size_t s = 0; s < K; ++s) xs.push_back(-static_cast<double>(s) * delta);
      double mean = 0.0;
      for (double x : xs) mean += x;
      mean /= static_cast<double>(K);
      double var = 0.0;
      for (double x : xs) var += (x - mean) * (x - mean);
      var /= static_cast<double>(K);
      const double closed = signal_variance(delta, K);
      const double err = K == 1 ? std::abs(closed - var) : std::abs(closed - var) / var;
      worst = std::max(worst, err);
    }
  }
  return {worst <= 16 * DBL_EPSILON, fmt("K = 1..32, max relative error %.2e (limit 16 eps = %.2e)", worst,
                                         16 * DBL_EPSILON)};
}

// 10. Analytic vs finite-difference gradients.
Outcome gradients() {
  double worst_linear = 0.0, worst_mlp = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    worst_linear = std::max(worst_linear, xmerge::testing::gradient_check(ModelFamily::kLinear, 1000 + seed).max_rel_error);
    worst_mlp = std::max(worst_mlp, xmerge::testing::gradient_check(ModelFamily::kMlp, 2000 + seed).max_rel_error);
  }
  return {worst_linear <= 1e-5 && worst_mlp <= 1e-5,
          fmt("50 instances per family, max relative error linear %.2e, mlp %.2e (limit 1e-5)", worst_linear,
              worst_mlp)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"AC1 exact averaged deviation", exact_formula},
      {"AC2 O(1/N) decay", one_over_n},
      {"AC3 Davis-Kahan alignment", alignment},
      {"AC4 SNR scaling", snr_scaling},
      {"AC5 rank-1 merged trajectories", rank_one},
      {"AC6 rectification", rectification},
      {"AC7 Extra-Merge never worse", extra_merge},
      {"AC8 Gram/SVD equivalence", gram_svd},
      {"AC9 signal variance exactness", signal_exactness},
      {"AC10 gradient check", gradients},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
