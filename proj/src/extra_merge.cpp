#include "xmerge/extra_merge.hpp"

#include <cmath>
#include <ostream>
#include <string>

#include "xmerge/csv.hpp"
#include "xmerge/error.hpp"

namespace xmerge {

void LineSearchConfig::validate() const {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw_usage("alpha must be positive");
  if (max_steps < 1) throw_usage("max_steps must be >= 1");
  if (mode == SearchMode::kGrid) {
    if (grid.empty() || grid.front() != 0.0) throw_usage("search grid must start at 0");
    for (std::size_t i = 1; i < grid.size(); ++i)
      if (!(grid[i] > grid[i - 1]) || !std::isfinite(grid[i])) throw_usage("search grid must be strictly ascending");
  }
}

std::vector<double> default_alpha_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 10; ++i) g.push_back(0.2 * i);
  return g;
}

const char* termination_name(Termination t) {
  switch (t) {
    case Termination::kNonImprovement:
      return "non-improvement";
    case Termination::kMaxSteps:
      return "max-steps";
    case Termination::kGridExhausted:
      return "grid-exhausted";
  }
  return "unknown";
}

double adaptive_stride(double z_newest, double z_previous, double alpha) {
  if (!(alpha > 0.0)) throw_usage("alpha must be positive");
  const double delta = alpha * std::abs(z_newest - z_previous);
  if (!(delta > 0.0)) throw_numerical("zero stride: the last two projections coincide");
  if (!std::isfinite(delta)) throw_numerical("non-finite stride");
  return delta;
}

namespace {

void step_along(const ParameterVector& anchor, const ParameterVector& direction, double step, ParameterVector& out) {
  for (std::size_t j = 0; j < anchor.size(); ++j) out[j] = anchor[j] + step * direction[j];
}

}  // namespace

LineSearchResult line_search(const ParameterVector& anchor, const ParameterVector& direction, double delta,
                             const LossFn& loss, const LineSearchConfig& config) {
  config.validate();
  if (!(delta > 0.0) || !std::isfinite(delta)) throw_usage("line search stride must be positive");
  if (anchor.size() != direction.size()) throw_data("dimension mismatch in line_search");

  LineSearchResult out;
  out.delta = delta;
  out.anchor_loss = loss(anchor);
  if (!std::isfinite(out.anchor_loss)) throw_numerical("loss oracle returned a non-finite anchor loss");
  out.best_loss = out.anchor_loss;

  ParameterVector theta(anchor.size());
  auto evaluate = [&](std::size_t k, double multiplier) {
    step_along(anchor, direction, multiplier * delta, theta);
    const double value = loss(theta);
    out.candidates.push_back({k, multiplier, value});
    if (std::isfinite(value) && value < out.best_loss) {
      out.best_loss = value;
      out.best_k = k;
      out.best_multiplier = multiplier;
    }
    return value;
  };

  if (config.mode == SearchMode::kIterativeStride) {
    out.terminated_by = Termination::kMaxSteps;
    for (std::size_t k = 1; k <= config.max_steps; ++k) {
      const double value = evaluate(k, static_cast<double>(k));
      if (!std::isfinite(value) || value > out.anchor_loss) {
        out.terminated_by = Termination::kNonImprovement;
        break;
      }
    }
  } else {
    out.terminated_by = Termination::kGridExhausted;
    for (std::size_t k = 1; k < config.grid.size(); ++k) evaluate(k, config.grid[k]);
  }

  if (out.best_k == 0) {
    out.best_params = anchor;
  } else {
    out.best_params = ParameterVector(anchor.size());
    step_along(anchor, direction, out.best_multiplier * delta, out.best_params);
  }
  return out;
}

ExtraMergeResult extrapolate(std::span<const ParameterVector> merged, const LineSearchConfig& config,
                             const LossFn& loss) {
  config.validate();
  if (merged.size() < 2) throw_usage("extrapolation needs K >= 2 merged states");
  ExtraMergeResult out;
  out.subspace = analyze_subspace(merged);
  const auto& z = out.subspace.projections;
  const double stride_fraction = config.mode == SearchMode::kGrid ? 1.0 : config.alpha;
  const double delta = adaptive_stride(z[z.size() - 1], z[z.size() - 2], stride_fraction);
  out.search = line_search(merged.back(), out.subspace.direction, delta, loss, config);
  return out;
}

ExtraMergeResult run_extra_merge(const CheckpointManifest& manifest, std::uint64_t tau, std::size_t n,
                                 std::size_t count, const LineSearchConfig& config, const LossFn& loss,
                                 const ExtraMergeOptions& options) {
  config.validate();
  if (count < 2) throw_usage("K must be >= 2");
  const CheckpointManifest usable = options.start_step > 0 ? manifest.filtered(options.start_step) : manifest;
  auto merged = sliding_pma(usable, tau, n, count, options.chunk_len);
  std::vector<ParameterVector> states;
  std::vector<std::uint64_t> steps;
  states.reserve(merged.size());
  for (auto& m : merged) {
    steps.push_back(m.anchor_step);
    states.push_back(std::move(m.params));
  }
  auto out = extrapolate(states, config, loss);
  out.merged_steps = std::move(steps);
  return out;
}

void write_search_csv(std::ostream& out, const ExtraMergeResult& result) {
  CsvWriter csv(out);
  const auto& s = result.search;
  csv.comment("best_k=" + std::to_string(s.best_k) + " best_loss=" + format_double(s.best_loss) +
              " anchor_loss=" + format_double(s.anchor_loss) + " R1=" +
              format_double(result.subspace.evr.empty() ? 0.0 : result.subspace.evr.front()) +
              " delta=" + format_double(s.delta) + " terminated_by=" + termination_name(s.terminated_by));
  csv.row("k", "multiplier", "loss");
  csv.row(std::size_t{0}, 0.0, s.anchor_loss);
  for (const auto& c : s.candidates) csv.row(c.k, c.multiplier, c.loss);
}

}  // namespace xmerge
