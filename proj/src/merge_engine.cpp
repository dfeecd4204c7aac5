#include "xmerge/merge_engine.hpp"

#include <cmath>
#include <string>

#include "xmerge/error.hpp"
#include "xmerge/linalg.hpp"

namespace xmerge {

void MergeSchedule::validate() const {
  if (tau == 0) throw_usage("tau must be positive");
  if (weights.empty()) throw_usage("merge window must contain at least one checkpoint");
  CompensatedSum total;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw_usage("merge weights must be finite and non-negative");
    total.add(w);
  }
  if (std::abs(total.value() - 1.0) > 1e-12) throw_usage("merge weights must sum to 1");
}

std::vector<double> uniform_weights(std::size_t n) {
  if (n == 0) throw_usage("window size n must be >= 1");
  return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

std::vector<double> ema_weights(std::size_t n, double gamma) {
  if (n == 0) throw_usage("window size n must be >= 1");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw_usage("gamma must lie in (0, 1]");
  std::vector<double> w(n);
  CompensatedSum total;
  double p = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = p;
    total.add(p);
    p *= gamma;
  }
  const double z = total.value();
  for (double& x : w) x /= z;
  return w;
}

namespace {

void check_weights(std::size_t count, std::span<const double> weights) {
  if (count == 0) throw_usage("weighted_average needs at least one input");
  if (weights.size() != count)
    throw_usage("expected " + std::to_string(count) + " weights, got " + std::to_string(weights.size()));
  MergeSchedule{1, {weights.begin(), weights.end()}}.validate();
}

// out[j] = sum_i w[i] * slices[i][j]; identical arithmetic for both entry points.
void accumulate(std::span<const std::span<const double>> slices, std::span<const double> weights,
                std::span<double> out) {
  for (std::size_t j = 0; j < out.size(); ++j) {
    CompensatedSum s;
    for (std::size_t i = 0; i < slices.size(); ++i) s.add(weights[i] * slices[i][j]);
    const double v = s.value();
    if (!std::isfinite(v)) throw_numerical("non-finite accumulation at index " + std::to_string(j));
    out[j] = v;
  }
}

}  // namespace

ParameterVector weighted_average(std::span<const ParameterVector> states, std::span<const double> weights) {
  check_weights(states.size(), weights);
  const std::size_t d = states.front().size();
  std::vector<std::span<const double>> slices;
  slices.reserve(states.size());
  for (const auto& s : states) {
    if (s.size() != d) throw_data("dimension mismatch in weighted_average");
    slices.push_back(s.span());
  }
  ParameterVector out(d);
  accumulate(slices, weights, out.span());
  return out;
}

ParameterVector weighted_average(std::span<const CheckpointRecord> records, std::span<const double> weights,
                                 std::size_t chunk_len) {
  check_weights(records.size(), weights);
  std::vector<ChunkReader> readers;
  readers.reserve(records.size());
  for (const auto& r : records) readers.emplace_back(r, chunk_len);
  const std::uint64_t d = readers.front().dim();
  for (const auto& r : readers)
    if (r.dim() != d) throw_data("dimension mismatch in weighted_average");

  ParameterVector out(d);
  std::vector<std::vector<double>> buffers(records.size());
  std::vector<std::span<const double>> slices(records.size());
  std::uint64_t offset = 0;
  while (offset < d) {
    for (std::size_t i = 0; i < readers.size(); ++i) {
      if (!readers[i].next(buffers[i])) throw_data("unexpected end of checkpoint payload");
      slices[i] = buffers[i];
    }
    accumulate(slices, weights, out.span().subspan(offset, buffers.front().size()));
    offset += buffers.front().size();
  }
  return out;
}

std::vector<CheckpointRecord> window_records(const CheckpointManifest& manifest, std::uint64_t anchor_step,
                                             std::uint64_t tau, std::size_t n) {
  std::vector<CheckpointRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t back = static_cast<std::uint64_t>(i) * tau;
    if (back > anchor_step)
      throw_data("insufficient checkpoints: window reaches before step 0 (anchor " + std::to_string(anchor_step) +
                 ")");
    const auto idx = manifest.find_step(anchor_step - back);
    if (idx < 0)
      throw_data("step spacing in manifest inconsistent with tau=" + std::to_string(tau) + ": no checkpoint at step " +
                 std::to_string(anchor_step - back));
    out.push_back(manifest.records()[static_cast<std::size_t>(idx)]);
  }
  return out;
}

std::vector<MergedCheckpoint> sliding_merge(const CheckpointManifest& manifest, const MergeSchedule& schedule,
                                            std::size_t count, std::size_t chunk_len) {
  schedule.validate();
  if (count == 0) throw_usage("number of merged checkpoints K must be >= 1");
  if (manifest.empty()) throw_data("insufficient checkpoints: manifest is empty");
  const std::size_t needed = schedule.n() + count - 1;
  const std::uint64_t newest = manifest.records().back().step;
  if (manifest.size() < needed ||
      static_cast<std::uint64_t>(needed - 1) * schedule.tau > newest - manifest.records().front().step)
    throw_data("insufficient checkpoints: need " + std::to_string(needed) + " at spacing " +
               std::to_string(schedule.tau) + ", manifest has " + std::to_string(manifest.size()));

  std::vector<MergedCheckpoint> out;
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    const std::uint64_t anchor = newest - static_cast<std::uint64_t>(count - 1 - s) * schedule.tau;
    const auto window = window_records(manifest, anchor, schedule.tau, schedule.n());
    out.push_back({anchor, weighted_average(window, schedule.weights, chunk_len), schedule});
  }
  return out;
}

std::vector<MergedCheckpoint> sliding_pma(const CheckpointManifest& manifest, std::uint64_t tau, std::size_t n,
                                          std::size_t count, std::size_t chunk_len) {
  return sliding_merge(manifest, MergeSchedule{tau, uniform_weights(n)}, count, chunk_len);
}

}  // namespace xmerge
