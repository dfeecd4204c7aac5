#include "xmerge/toy_trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

#include "xmerge/csv.hpp"
#include "xmerge/error.hpp"
#include "xmerge/linalg.hpp"
#include "xmerge/random.hpp"

namespace xmerge {

namespace {

// Independent random streams per purpose, so changing one size never
// perturbs the draws of another.
enum Stream : std::uint64_t { kTeacher = 1, kTrainData = 2, kValData = 3, kInit = 4, kBatches = 5 };

// Offsets of the flat layout [w1 | b1 | w2 | b2].
struct Layout {
  std::size_t w1, b1, w2, b2, total;
};

Layout layout_of(const ModelShape& s) {
  Layout l{};
  if (s.family == ModelFamily::kLinear) {
    l.w1 = 0;
    l.b1 = s.out_dim * s.in_dim;
    l.w2 = l.b2 = l.total = l.b1 + s.out_dim;
  } else {
    l.w1 = 0;
    l.b1 = s.hidden_dim * s.in_dim;
    l.w2 = l.b1 + s.hidden_dim;
    l.b2 = l.w2 + s.out_dim * s.hidden_dim;
    l.total = l.b2 + s.out_dim;
  }
  return l;
}

// Forward pass for one input; `hidden` receives tanh activations (mlp only).
void forward(const ModelShape& s, const Layout& l, std::span<const double> p, const double* x, double* hidden,
             double* out) {
  if (s.family == ModelFamily::kLinear) {
    for (std::size_t o = 0; o < s.out_dim; ++o) {
      double acc = p[l.b1 + o];
      const double* w = p.data() + l.w1 + o * s.in_dim;
      for (std::size_t i = 0; i < s.in_dim; ++i) acc += w[i] * x[i];
      out[o] = acc;
    }
    return;
  }
  for (std::size_t h = 0; h < s.hidden_dim; ++h) {
    double acc = p[l.b1 + h];
    const double* w = p.data() + l.w1 + h * s.in_dim;
    for (std::size_t i = 0; i < s.in_dim; ++i) acc += w[i] * x[i];
    hidden[h] = std::tanh(acc);
  }
  for (std::size_t o = 0; o < s.out_dim; ++o) {
    double acc = p[l.b2 + o];
    const double* w = p.data() + l.w2 + o * s.hidden_dim;
    for (std::size_t h = 0; h < s.hidden_dim; ++h) acc += w[h] * hidden[h];
    out[o] = acc;
  }
}

void fill_normal(std::span<double> out, Rng& rng, double scale) {
  for (double& v : out) v = scale * rng.normal();
}

// Teacher-scale init: weights N(0, 1/fan_in), biases zero.
ParameterVector random_params(const ModelShape& s, Rng& rng, double scale) {
  const Layout l = layout_of(s);
  ParameterVector p(l.total, 0.0);
  auto span = p.span();
  fill_normal(span.subspan(l.w1, l.b1 - l.w1), rng, scale / std::sqrt(static_cast<double>(s.in_dim)));
  if (s.family == ModelFamily::kMlp)
    fill_normal(span.subspan(l.w2, l.b2 - l.w2), rng, scale / std::sqrt(static_cast<double>(s.hidden_dim)));
  return p;
}

Dataset make_dataset(const ModelShape& s, std::span<const double> teacher, std::size_t n, double noise, Rng& rng) {
  Dataset d;
  d.n = n;
  d.in_dim = s.in_dim;
  d.out_dim = s.out_dim;
  d.x.resize(n * s.in_dim);
  d.y.resize(n * s.out_dim);
  fill_normal(d.x, rng, 1.0);
  const Layout l = layout_of(s);
  std::vector<double> hidden(s.hidden_dim);
  for (std::size_t i = 0; i < n; ++i) forward(s, l, teacher, d.input(i), hidden.data(), d.y.data() + i * s.out_dim);
  for (double& y : d.y) y += noise * rng.normal();
  return d;
}

void check_params(const ModelShape& s, std::size_t size) {
  if (size != s.param_count())
    throw_data("parameter length " + std::to_string(size) + " does not match model shape (" +
               std::to_string(s.param_count()) + ")");
}

ModelFamily parse_family(const std::string& name) {
  if (name == "linear" || name == "linear-regression") return ModelFamily::kLinear;
  if (name == "mlp" || name == "two-layer-mlp") return ModelFamily::kMlp;
  throw_usage("unknown model family: " + name);
}

LrSchedule parse_schedule(const std::string& name) {
  if (name == "constant") return LrSchedule::kConstant;
  if (name == "constant-then-linear-decay" || name == "wsd") return LrSchedule::kConstantThenLinearDecay;
  throw_usage("unknown lr schedule: " + name);
}

std::size_t kv_size(const KeyValues& kv, const std::string& key, std::size_t fallback) {
  const long long v = kv_int(kv, key, static_cast<long long>(fallback));
  if (v < 0) throw_usage(key + " must be non-negative");
  return static_cast<std::size_t>(v);
}

}  // namespace

const char* family_name(ModelFamily family) { return family == ModelFamily::kLinear ? "linear" : "mlp"; }

const char* schedule_name(LrSchedule schedule) {
  return schedule == LrSchedule::kConstant ? "constant" : "constant-then-linear-decay";
}

void ToyTaskConfig::validate() const {
  if (in_dim == 0 || out_dim == 0 || (model == ModelFamily::kMlp && hidden_dim == 0))
    throw_usage("model dimensions must be positive");
  if (n_val == 0) throw_usage("empty validation set");
  if (n_train == 0) throw_usage("empty training set");
  if (batch_size == 0) throw_usage("batch_size must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw_usage("lr must be positive");
  if (save_every == 0) throw_usage("save_every must be >= 1");
  if (steps == 0) throw_usage("steps must be >= 1");
  if (!(noise_scale >= 0.0) || !(init_scale >= 0.0)) throw_usage("noise_scale and init_scale must be non-negative");
  if (lr_schedule == LrSchedule::kConstantThenLinearDecay) {
    if (decay_start > steps) throw_usage("decay_start must not exceed steps");
    if (!(lr_min_fraction >= 0.0 && lr_min_fraction <= 1.0)) throw_usage("lr_min_fraction must lie in [0, 1]");
  }
}

ToyTaskConfig toy_config_from_kv(const KeyValues& kv, const ToyTaskConfig& base) {
  ToyTaskConfig c = base;
  if (kv.count("model")) c.model = parse_family(kv.at("model"));
  c.in_dim = kv_size(kv, "in_dim", c.in_dim);
  c.hidden_dim = kv_size(kv, "hidden_dim", c.hidden_dim);
  c.out_dim = kv_size(kv, "out_dim", c.out_dim);
  c.n_train = kv_size(kv, "n_train", c.n_train);
  c.n_val = kv_size(kv, "n_val", c.n_val);
  c.batch_size = kv_size(kv, "batch_size", c.batch_size);
  c.lr = kv_double(kv, "lr", c.lr);
  c.steps = kv_size(kv, "steps", c.steps);
  c.save_every = kv_size(kv, "save_every", c.save_every);
  c.seed = static_cast<std::uint64_t>(kv_size(kv, "seed", c.seed));
  if (kv.count("lr_schedule")) c.lr_schedule = parse_schedule(kv.at("lr_schedule"));
  c.decay_start = kv_size(kv, "decay_start", c.decay_start);
  c.lr_min_fraction = kv_double(kv, "lr_min_fraction", c.lr_min_fraction);
  c.noise_scale = kv_double(kv, "noise_scale", c.noise_scale);
  c.init_scale = kv_double(kv, "init_scale", c.init_scale);
  return c;
}

void write_toy_config(std::ostream& out, const ToyTaskConfig& c) {
  out << "model=" << family_name(c.model) << '\n'
      << "in_dim=" << c.in_dim << '\n'
      << "hidden_dim=" << c.hidden_dim << '\n'
      << "out_dim=" << c.out_dim << '\n'
      << "n_train=" << c.n_train << '\n'
      << "n_val=" << c.n_val << '\n'
      << "batch_size=" << c.batch_size << '\n'
      << "lr=" << format_double(c.lr) << '\n'
      << "steps=" << c.steps << '\n'
      << "save_every=" << c.save_every << '\n'
      << "seed=" << c.seed << '\n'
      << "lr_schedule=" << schedule_name(c.lr_schedule) << '\n'
      << "decay_start=" << c.decay_start << '\n'
      << "lr_min_fraction=" << format_double(c.lr_min_fraction) << '\n'
      << "noise_scale=" << format_double(c.noise_scale) << '\n'
      << "init_scale=" << format_double(c.init_scale) << '\n';
}

std::size_t ModelShape::param_count() const noexcept { return layout_of(*this).total; }

ModelShape shape_of(const ToyTaskConfig& c) {
  return {c.model, c.in_dim, c.model == ModelFamily::kMlp ? c.hidden_dim : 0, c.out_dim};
}

ParameterVector ToyModel::flatten() const {
  std::vector<double> flat;
  flat.reserve(shape.param_count());
  for (const auto* part : {&w1, &b1, &w2, &b2}) flat.insert(flat.end(), part->begin(), part->end());
  check_params(shape, flat.size());
  return ParameterVector(std::move(flat));
}

ToyModel ToyModel::unflatten(const ModelShape& shape, const ParameterVector& params) {
  check_params(shape, params.size());
  const Layout l = layout_of(shape);
  const auto& v = params.values();
  ToyModel m;
  m.shape = shape;
  m.w1.assign(v.begin() + l.w1, v.begin() + l.b1);
  m.b1.assign(v.begin() + l.b1, v.begin() + l.w2);
  m.w2.assign(v.begin() + l.w2, v.begin() + l.b2);
  m.b2.assign(v.begin() + l.b2, v.begin() + l.total);
  return m;
}

std::vector<double> ToyModel::predict(std::span<const double> input) const {
  if (input.size() != shape.in_dim) throw_data("input length does not match model shape");
  const ParameterVector flat = flatten();
  std::vector<double> hidden(shape.hidden_dim), out(shape.out_dim);
  forward(shape, layout_of(shape), flat.span(), input.data(), hidden.data(), out.data());
  return out;
}

ToyTask generate_task(const ToyTaskConfig& config) {
  config.validate();
  const ModelShape s = shape_of(config);
  ToyTask task;
  Rng teacher_rng(config.seed, kTeacher);
  task.teacher = random_params(s, teacher_rng, 1.0);
  Rng train_rng(config.seed, kTrainData);
  task.train = make_dataset(s, task.teacher.span(), config.n_train, config.noise_scale, train_rng);
  Rng val_rng(config.seed, kValData);
  task.val = make_dataset(s, task.teacher.span(), config.n_val, config.noise_scale, val_rng);
  return task;
}

double mean_loss(const ModelShape& shape, std::span<const double> params, const Dataset& data) {
  check_params(shape, params.size());
  if (data.n == 0) throw_data("empty dataset");
  if (data.in_dim != shape.in_dim || data.out_dim != shape.out_dim) throw_data("dataset does not match model shape");
  const Layout l = layout_of(shape);
  std::vector<double> hidden(shape.hidden_dim), out(shape.out_dim);
  CompensatedSum total;
  for (std::size_t i = 0; i < data.n; ++i) {
    forward(shape, l, params, data.input(i), hidden.data(), out.data());
    const double* y = data.target(i);
    double sq = 0.0;
    for (std::size_t o = 0; o < shape.out_dim; ++o) sq += (out[o] - y[o]) * (out[o] - y[o]);
    total.add(0.5 * sq);
  }
  return total.value() / static_cast<double>(data.n);
}

double loss_and_gradient(const ModelShape& shape, std::span<const double> params, const Dataset& data,
                         std::span<const std::size_t> rows, std::span<double> grad) {
  check_params(shape, params.size());
  check_params(shape, grad.size());
  const Layout l = layout_of(shape);
  const std::size_t m = rows.empty() ? data.n : rows.size();
  if (m == 0) throw_data("empty dataset");
  const double inv = 1.0 / static_cast<double>(m);
  std::fill(grad.begin(), grad.end(), 0.0);
  std::vector<double> hidden(shape.hidden_dim), out(shape.out_dim), r(shape.out_dim), back(shape.hidden_dim);
  double loss = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t i = rows.empty() ? k : rows[k];
    const double* x = data.input(i);
    const double* y = data.target(i);
    forward(shape, l, params, x, hidden.data(), out.data());
    for (std::size_t o = 0; o < shape.out_dim; ++o) {
      r[o] = out[o] - y[o];
      loss += 0.5 * r[o] * r[o] * inv;
    }
    if (shape.family == ModelFamily::kLinear) {
      for (std::size_t o = 0; o < shape.out_dim; ++o) {
        double* gw = grad.data() + l.w1 + o * shape.in_dim;
        for (std::size_t j = 0; j < shape.in_dim; ++j) gw[j] += r[o] * x[j] * inv;
        grad[l.b1 + o] += r[o] * inv;
      }
      continue;
    }
    std::fill(back.begin(), back.end(), 0.0);
    for (std::size_t o = 0; o < shape.out_dim; ++o) {
      const double* w2 = params.data() + l.w2 + o * shape.hidden_dim;
      double* gw2 = grad.data() + l.w2 + o * shape.hidden_dim;
      for (std::size_t h = 0; h < shape.hidden_dim; ++h) {
        gw2[h] += r[o] * hidden[h] * inv;
        back[h] += w2[h] * r[o];
      }
      grad[l.b2 + o] += r[o] * inv;
    }
    for (std::size_t h = 0; h < shape.hidden_dim; ++h) {
      const double a = back[h] * (1.0 - hidden[h] * hidden[h]) * inv;
      double* gw1 = grad.data() + l.w1 + h * shape.in_dim;
      for (std::size_t j = 0; j < shape.in_dim; ++j) gw1[j] += a * x[j];
      grad[l.b1 + h] += a;
    }
  }
  return loss;
}

double learning_rate(const ToyTaskConfig& config, std::size_t step) {
  if (config.lr_schedule == LrSchedule::kConstant || step < config.decay_start) return config.lr;
  const double span = static_cast<double>(config.steps - config.decay_start);
  const double frac = span > 0.0 ? std::min(1.0, static_cast<double>(step - config.decay_start) / span) : 1.0;
  return config.lr * (1.0 - frac * (1.0 - config.lr_min_fraction));
}

double evaluate_loss(const LossOracleHandle& handle, const ParameterVector& params) {
  if (!handle.data) throw_usage("loss oracle has no data");
  const double loss = mean_loss(handle.shape, params.span(), *handle.data);
  if (!std::isfinite(loss)) throw_numerical("non-finite loss");
  return loss;
}

TrainResult train(const ToyTaskConfig& config, const std::filesystem::path& out_dir) {
  ToyTask task = generate_task(config);
  const ModelShape shape = shape_of(config);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw_data("cannot create output directory " + out_dir.string() + ": " + ec.message());

  {
    std::ofstream cfg(out_dir / "config.txt");
    if (!cfg) throw_data("cannot write " + (out_dir / "config.txt").string());
    write_toy_config(cfg, config);
  }

  TrainResult result;
  result.oracle = {shape, std::make_shared<const Dataset>(std::move(task.val))};

  Rng init_rng(config.seed, kInit);
  ParameterVector params = random_params(shape, init_rng, config.init_scale);
  Rng batch_rng(config.seed, kBatches);
  std::vector<double> grad(params.size());
  std::vector<std::size_t> rows(config.batch_size);

  for (std::size_t step = 0;; ++step) {
    if (step % config.save_every == 0) {
      const double train_loss = mean_loss(shape, params.span(), task.train);
      const double val_loss = mean_loss(shape, params.span(), *result.oracle.data);
      if (!std::isfinite(train_loss) || !std::isfinite(val_loss))
        throw_numerical("training diverged at step " + std::to_string(step) + ": non-finite loss");
      char name[32];
      std::snprintf(name, sizeof(name), "ckpt_%08zu.xmg", step);
      result.manifest.add(write_checkpoint(params, step, out_dir / name));
      result.curve.push_back({step, train_loss, val_loss});
    }
    if (step == config.steps) break;
    for (auto& r : rows) r = static_cast<std::size_t>(batch_rng.below(config.n_train));
    const double batch_loss = loss_and_gradient(shape, params.span(), task.train, rows, grad);
    if (!std::isfinite(batch_loss))
      throw_numerical("training diverged at step " + std::to_string(step) + ": non-finite loss");
    axpy(-learning_rate(config, step), grad, params.span());
  }

  result.manifest.save(out_dir / "manifest.tsv");
  std::ofstream curve(out_dir / "curve.csv");
  if (!curve) throw_data("cannot write " + (out_dir / "curve.csv").string());
  CsvWriter csv(curve);
  csv.row("step", "train_loss", "val_loss");
  for (const auto& p : result.curve) csv.row(p.step, p.train_loss, p.val_loss);
  return result;
}

LossOracleHandle load_toy_oracle(const std::filesystem::path& run_dir) {
  const ToyTaskConfig config = toy_config_from_kv(load_key_values(run_dir / "config.txt"));
  ToyTask task = generate_task(config);
  return {shape_of(config), std::make_shared<const Dataset>(std::move(task.val))};
}

}  // namespace xmerge
