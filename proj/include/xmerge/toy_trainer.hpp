#pragma once

// Small supervised model trained by mini-batch SGD on a synthetic
// teacher-student task. Produces checkpoint streams and a held-out loss.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "xmerge/checkpoint_store.hpp"
#include "xmerge/key_value.hpp"
#include "xmerge/parameter_vector.hpp"

namespace xmerge {

enum class ModelFamily { kLinear, kMlp };
enum class LrSchedule { kConstant, kConstantThenLinearDecay };

const char* family_name(ModelFamily family);
const char* schedule_name(LrSchedule schedule);

struct ToyTaskConfig {
  ModelFamily model = ModelFamily::kMlp;
  std::size_t in_dim = 8;
  std::size_t hidden_dim = 16;  // mlp only
  std::size_t out_dim = 1;
  std::size_t n_train = 256;
  std::size_t n_val = 512;
  std::size_t batch_size = 4;
  double lr = 0.1;
  std::size_t steps = 1500;
  std::size_t save_every = 100;
  std::uint64_t seed = 0;
  LrSchedule lr_schedule = LrSchedule::kConstant;
  std::size_t decay_start = 0;   // first step of the linear decay
  double lr_min_fraction = 0.0;  // lr at the final step, as a fraction of lr
  double noise_scale = 0.1;      // std of the observation noise on targets
  double init_scale = 0.5;       // student init relative to the teacher's scale

  void validate() const;
};

ToyTaskConfig toy_config_from_kv(const KeyValues& kv, const ToyTaskConfig& base = {});
void write_toy_config(std::ostream& out, const ToyTaskConfig& config);

/// Row-major inputs (n x in_dim) and targets (n x out_dim).
struct Dataset {
  std::size_t n = 0, in_dim = 0, out_dim = 0;
  std::vector<double> x, y;

  const double* input(std::size_t i) const { return x.data() + i * in_dim; }
  const double* target(std::size_t i) const { return y.data() + i * out_dim; }
};

struct ModelShape {
  ModelFamily family = ModelFamily::kMlp;
  std::size_t in_dim = 0, hidden_dim = 0, out_dim = 0;

  std::size_t param_count() const noexcept;
  bool operator==(const ModelShape&) const = default;
};

ModelShape shape_of(const ToyTaskConfig& config);

/// Structured parameters. Linear: w1 = W (out x in), b1 = b (out).
/// MLP: y = W2 tanh(W1 x + b1) + b2.
struct ToyModel {
  ModelShape shape;
  std::vector<double> w1, b1, w2, b2;

  ParameterVector flatten() const;
  static ToyModel unflatten(const ModelShape& shape, const ParameterVector& params);
  std::vector<double> predict(std::span<const double> input) const;
};

struct ToyTask {
  Dataset train, val;
  ParameterVector teacher;  // in the layout of shape_of(config)
};

/// Inputs are standard normal; targets come from a random teacher of the
/// configured family plus Gaussian noise. Reproducible from config.seed.
ToyTask generate_task(const ToyTaskConfig& config);

/// 1/2 mean over samples of the squared error.
double mean_loss(const ModelShape& shape, std::span<const double> params, const Dataset& data);

/// Loss over the listed rows (all rows when `rows` is empty); writes its
/// gradient into `grad`.
double loss_and_gradient(const ModelShape& shape, std::span<const double> params, const Dataset& data,
                         std::span<const std::size_t> rows, std::span<double> grad);

double learning_rate(const ToyTaskConfig& config, std::size_t step);

/// Held-out loss oracle: fixed validation data plus the model shape.
struct LossOracleHandle {
  ModelShape shape;
  std::shared_ptr<const Dataset> data;
};

double evaluate_loss(const LossOracleHandle& handle, const ParameterVector& params);

struct CurvePoint {
  std::size_t step = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  CheckpointManifest manifest;
  LossOracleHandle oracle;
  std::vector<CurvePoint> curve;
};

/// Trains and writes ckpt_<step>.xmg files, manifest.tsv, curve.csv and
/// config.txt into out_dir. Aborts with a numerical error on divergence.
TrainResult train(const ToyTaskConfig& config, const std::filesystem::path& out_dir);

/// Rebuilds the oracle of a finished run from its config.txt.
LossOracleHandle load_toy_oracle(const std::filesystem::path& run_dir);

}  // namespace xmerge
