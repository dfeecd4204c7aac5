// Command-line front end: merge, extramerge, pca, scan, simulate, train-toy.
//
// Every command accepts --config <file> with key=value lines whose keys are
// the long flag names (without dashes). Flags given on the command line win.
// Errors print one line "error kind=<usage|data|numerical> message=<text>"
// to stderr and exit with 2, 3 or 4.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "xmerge/checkpoint_store.hpp"
#include "xmerge/csv.hpp"
#include "xmerge/error.hpp"
#include "xmerge/extra_merge.hpp"
#include "xmerge/key_value.hpp"
#include "xmerge/merge_engine.hpp"
#include "xmerge/oracle.hpp"
#include "xmerge/river_valley.hpp"
#include "xmerge/subspace_pca.hpp"
#include "xmerge/toy_trainer.hpp"

namespace {

using namespace xmerge;

constexpr const char* kVersion = "0.1.0";

std::string option_key(const CLI::Option* opt) {
  std::string name = opt->get_single_name();
  std::replace(name.begin(), name.end(), '-', '_');
  return name;
}

std::string joined_results(const CLI::Option* opt) {
  std::string out;
  for (const auto& r : opt->results()) {
    if (!out.empty()) out += ',';
    out += r;
  }
  return out;
}

bool is_meta(const CLI::Option* opt) {
  const std::string name = opt->get_single_name();
  return name == "help" || name == "config";
}

// Fills options that were not given on the command line from a key=value file.
void apply_config_file(CLI::App* cmd, const std::string& path) {
  if (path.empty()) return;
  const KeyValues kv = load_key_values(path);
  for (const auto& [key, value] : kv) {
    CLI::Option* match = nullptr;
    for (CLI::Option* opt : cmd->get_options()) {
      if (!is_meta(opt) && option_key(opt) == key) match = opt;
    }
    if (!match) throw_usage("unknown key in config file: " + key);
    if (match->count() > 0) continue;
    match->add_result(value);
    match->run_callback();
  }
}

// '#' header block: tool version, command and every resolved setting.
void echo_config(std::ostream& out, const CLI::App* cmd) {
  CsvWriter csv(out);
  csv.comment(std::string("xmerge ") + kVersion);
  csv.comment("command=" + cmd->get_name());
  for (const CLI::Option* opt : cmd->get_options()) {
    if (is_meta(opt)) continue;
    const std::string value = opt->count() > 0 ? joined_results(opt) : opt->get_default_str();
    csv.comment(option_key(opt) + "=" + value);
  }
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw_usage(std::string("missing required option --") + flag);
}

// Output goes to a file when a path is given, stdout otherwise.
class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty()) {
      file_ = std::make_unique<std::ofstream>(path);
      if (!*file_) throw_data("cannot write " + path);
    }
  }
  std::ostream& stream() { return file_ ? *file_ : std::cout; }

 private:
  std::unique_ptr<std::ofstream> file_;
};

CheckpointManifest load_manifest(const std::string& path, std::uint64_t start_step) {
  require(path, "manifest");
  const auto manifest = CheckpointManifest::load(path);
  return start_step > 0 ? manifest.filtered(start_step) : manifest;
}

ValleySpec resolve_spec(const std::string& spec) {
  if (spec.empty() || spec == "default") return default_valley_spec();
  if (spec == "high-noise") return high_noise_valley_spec();
  return load_valley_spec(spec);
}

std::vector<std::size_t> to_sizes(const std::vector<long long>& xs, const char* flag) {
  std::vector<std::size_t> out;
  for (long long x : xs) {
    if (x < 1) throw_usage(std::string("--") + flag + " entries must be >= 1");
    out.push_back(static_cast<std::size_t>(x));
  }
  return out;
}

struct Command {
  CLI::App* app = nullptr;
  std::string config;
  std::function<void()> run;
};

// ---- merge ----------------------------------------------------------------

struct MergeArgs {
  std::string manifest, weights = "uniform", out;
  std::uint64_t tau = 500, anchor = 0, start_step = 0;
  std::size_t n = 8;
  double gamma = 0.1;
};

void add_merge(CLI::App& app, std::vector<Command>& cmds) {
  auto args = std::make_shared<MergeArgs>();
  Command c;
  c.app = app.add_subcommand("merge", "Average the last n checkpoints spaced tau steps apart");
  c.app->add_option("--manifest", args->manifest, "Checkpoint manifest (manifest.tsv)");
  c.app->add_option("--tau", args->tau, "Checkpoint spacing in steps");
  c.app->add_option("--n", args->n, "Number of checkpoints in the window");
  c.app->add_option("--weights", args->weights, "uniform or ema")->check(CLI::IsMember({"uniform", "ema"}));
  c.app->add_option("--gamma", args->gamma, "EMA decay (ema weights only)");
  c.app->add_option("--anchor", args->anchor, "Step of the newest checkpoint in the window (default: newest)");
  c.app->add_option("--start-step", args->start_step, "Ignore checkpoints before this step");
  c.app->add_option("--out", args->out, "Merged checkpoint file to write");
  c.run = [args, cmd = c.app] {
    require(args->out, "out");
    if (args->n < 1) throw_usage("--n must be >= 1");
    const auto manifest = load_manifest(args->manifest, args->start_step);
    if (manifest.size() < args->n)
      throw_data("insufficient checkpoints: need " + std::to_string(args->n) + ", manifest has " +
                 std::to_string(manifest.size()));
    const MergeSchedule schedule{args->tau, args->weights == "ema" ? ema_weights(args->n, args->gamma)
                                                                  : uniform_weights(args->n)};
    schedule.validate();
    const std::uint64_t anchor = cmd->count("--anchor") ? args->anchor : manifest.records().back().step;
    const auto records = window_records(manifest, anchor, schedule.tau, schedule.n());
    const auto params = weighted_average(records, schedule.weights);
    const auto written = write_checkpoint(params, anchor, args->out);

    echo_config(std::cout, cmd);
    CsvWriter csv(std::cout);
    csv.comment("output=" + args->out + " dim=" + std::to_string(written.dim) + " crc64=" + format_crc(written.checksum));
    csv.row("i", "step", "weight");
    for (std::size_t i = 0; i < records.size(); ++i) csv.row(i, records[i].step, schedule.weights[i]);
  };
  cmds.push_back(std::move(c));
}

// ---- extramerge -------------------------------------------------------------

struct ExtraMergeArgs {
  std::string manifest, oracle, out, best_out, mode = "stride";
  std::uint64_t tau = 500, start_step = 0;
  std::size_t n = 8, k = 4, max_steps = 20;
  double alpha = 0.1;
  std::vector<double> grid;
};

void add_extramerge(CLI::App& app, std::vector<Command>& cmds) {
  auto args = std::make_shared<ExtraMergeArgs>();
  Command c;
  c.app = app.add_subcommand("extramerge", "Merge, find the top principal direction and extrapolate along it");
  c.app->add_option("--manifest", args->manifest, "Checkpoint manifest");
  c.app->add_option("--tau", args->tau, "Checkpoint spacing in steps");
  c.app->add_option("--n", args->n, "Checkpoints per merge window");
  c.app->add_option("--K", args->k, "Number of sliding merged checkpoints");
  c.app->add_option("--alpha", args->alpha, "Stride as a fraction of the last projection gap");
  c.app->add_option("--max-steps", args->max_steps, "Cap on extrapolation steps (>= 1)");
  c.app->add_option("--mode", args->mode, "stride or grid")->check(CLI::IsMember({"stride", "grid"}));
  c.app->add_option("--grid", args->grid, "Grid multipliers (grid mode)")->delimiter(',');
  c.app->add_option("--oracle", args->oracle, "toy:<run-dir> or valley:<spec-file>");
  c.app->add_option("--start-step", args->start_step, "Ignore checkpoints before this step");
  c.app->add_option("--out", args->out, "Result CSV (default stdout)");
  c.app->add_option("--best-out", args->best_out, "Write the best parameters as a checkpoint");
  c.run = [args, cmd = c.app] {
    require(args->oracle, "oracle");
    LineSearchConfig config;
    config.alpha = args->alpha;
    config.max_steps = args->max_steps;
    if (args->mode == "grid") {
      config.mode = SearchMode::kGrid;
      config.grid = args->grid.empty() ? default_alpha_grid() : args->grid;
    }
    config.validate();
    const auto manifest = load_manifest(args->manifest, 0);
    const LossFn loss = make_loss_oracle(args->oracle);
    ExtraMergeOptions options;
    options.start_step = args->start_step;
    const auto result = run_extra_merge(manifest, args->tau, args->n, args->k, config, loss, options);

    Output out(args->out);
    echo_config(out.stream(), cmd);
    write_search_csv(out.stream(), result);
    if (!args->best_out.empty()) write_checkpoint(result.search.best_params, result.merged_steps.back(), args->best_out);
  };
  cmds.push_back(std::move(c));
}

// ---- pca --------------------------------------------------------------------

struct PcaArgs {
  std::string manifest, out;
  std::uint64_t tau = 500, start_step = 0;
  std::size_t n = 0, k = 4;
};

void add_pca(CLI::App& app, std::vector<Command>& cmds) {
  auto args = std::make_shared<PcaArgs>();
  Command c;
  c.app = app.add_subcommand("pca", "Explained variance and projections of the last K states");
  c.app->add_option("--manifest", args->manifest, "Checkpoint manifest");
  c.app->add_option("--K", args->k, "Number of states to analyze");
  c.app->add_option("--n", args->n, "Merge window; 0 analyzes raw checkpoints");
  c.app->add_option("--tau", args->tau, "Checkpoint spacing (merged mode)");
  c.app->add_option("--start-step", args->start_step, "Ignore checkpoints before this step");
  c.app->add_option("--out", args->out, "Result CSV (default stdout)");
  c.run = [args, cmd = c.app] {
    if (args->k < 2) throw_usage("--K must be >= 2");
    const auto manifest = load_manifest(args->manifest, args->start_step);
    std::vector<ParameterVector> states;
    std::vector<std::uint64_t> steps;
    if (args->n > 0) {
      for (auto& m : sliding_pma(manifest, args->tau, args->n, args->k)) {
        steps.push_back(m.anchor_step);
        states.push_back(std::move(m.params));
      }
    } else {
      if (manifest.size() < args->k)
        throw_data("insufficient checkpoints: need " + std::to_string(args->k) + ", manifest has " +
                   std::to_string(manifest.size()));
      for (std::size_t i = manifest.size() - args->k; i < manifest.size(); ++i) {
        steps.push_back(manifest.records()[i].step);
        states.push_back(read_checkpoint(manifest.records()[i]));
      }
    }
    const auto result = analyze_subspace(states);

    Output out(args->out);
    echo_config(out.stream(), cmd);
    CsvWriter csv(out.stream());
    csv.comment(std::string("oriented=") + (result.oriented ? "true" : "false"));
    csv.row("index", "step", "evr", "projection");
    for (std::size_t i = 0; i < states.size(); ++i) csv.row(i, steps[i], result.evr[i], result.projections[i]);
  };
  cmds.push_back(std::move(c));
}

// ---- scan -------------------------------------------------------------------

struct ScanArgs {
  std::string a, b, oracle, out;
  std::size_t grid = 11;
};

void add_scan(CLI::App& app, std::vector<Command>& cmds) {
  auto args = std::make_shared<ScanArgs>();
  Command c;
  c.app = app.add_subcommand("scan", "Loss along the straight line between two checkpoints");
  c.app->add_option("--a", args->a, "Checkpoint at alpha = 0");
  c.app->add_option("--b", args->b, "Checkpoint at alpha = 1");
  c.app->add_option("--grid", args->grid, "Number of evenly spaced points (>= 3)");
  c.app->add_option("--oracle", args->oracle, "toy:<run-dir> or valley:<spec-file>");
  c.app->add_option("--out", args->out, "Result CSV (default stdout)");
  c.run = [args, cmd = c.app] {
    require(args->a, "a");
    require(args->b, "b");
    require(args->oracle, "oracle");
    const auto a = read_checkpoint(inspect_checkpoint(args->a));
    const auto b = read_checkpoint(inspect_checkpoint(args->b));
    const auto profile = interpolation_scan(a, b, args->grid, make_loss_oracle(args->oracle));
    Output out(args->out);
    echo_config(out.stream(), cmd);
    write_profile_csv(out.stream(), profile);
  };
  cmds.push_back(std::move(c));
}

// ---- simulate ---------------------------------------------------------------

struct SimulateArgs {
  std::string spec, experiment = "thm1", out;
  std::size_t seeds = 1000, n = 8, k = 4, t = 25, grid = 11;
  std::uint64_t base_seed = 1;
  std::vector<long long> ns{1, 2, 4, 8, 16}, ks{2, 3, 4, 6, 8}, ts{1, 5, 25};
};

void run_thm1(const SimulateArgs& a, const ValleySpec& spec, CsvWriter& csv) {
  csv.row("N", "T", "exact", "mc_mean", "mc_std_error", "z", "bound", "epsilon");
  for (std::size_t N : to_sizes(a.ns, "Ns")) {
    for (std::size_t T : to_sizes(a.ts, "Ts")) {
      const auto mc = monte_carlo_avg_deviation(spec, N, T, a.seeds, a.base_seed);
      const double exact = exact_avg_deviation(spec, N, T);
      const auto bound = bound_avg_deviation(spec, N, T);
      csv.row(N, T, exact, mc.mean, mc.std_error, (mc.mean - exact) / mc.std_error, bound.bound, bound.epsilon);
    }
  }
}

void run_thm2(const SimulateArgs& a, const ValleySpec& spec, CsvWriter& csv) {
  const auto s = pca_alignment_experiment(spec, a.n, a.t, a.k, a.seeds, a.base_seed);
  csv.comment("sigma_sig2=" + format_double(s.sigma_sig2) + " sigma_noise2=" + format_double(s.sigma_noise2) +
              " delta_sigma=" + format_double(s.delta_sigma) + " snr=" + format_double(s.snr) +
              " resid_exact=" + format_double(s.resid_energy_exact) +
              " resid_empirical=" + format_double(s.resid_energy_empirical) +
              " noise_trace=" + format_double(s.noise_trace));
  csv.comment("dk_held=" + std::to_string(s.dk_held) + "/" + std::to_string(s.dk_checked) +
              " mean_sin=" + format_double(s.mean_sin_angle) + " mean_evr1=" + format_double(s.mean_evr1));
  csv.row("seed", "sin_angle", "cos_sq", "op_norm", "dk_ratio", "dk_holds", "evr1");
  for (const auto& r : s.seeds) csv.row(r.seed, r.sin_angle, r.cos_sq, r.op_norm, r.dk_ratio, int(r.dk_holds), r.evr1);
}

void run_snr(const SimulateArgs& a, const ValleySpec& spec, CsvWriter& csv) {
  const auto ns = to_sizes(a.ns, "Ns"), ks = to_sizes(a.ks, "Ks"), ts = to_sizes(a.ts, "Ts");
  const auto s = snr_scaling_experiment(spec, ns, a.k, a.t, a.n, ks, ts, a.seeds, a.base_seed);
  csv.comment("slope_N=" + format_double(s.slope_n) + " slope_KT=" + format_double(s.slope_kt));
  csv.row("sweep", "N", "K", "T", "snr", "snr_exact");
  for (const auto& c : s.n_sweep) csv.row("N", c.N, c.K, c.T, c.snr, c.snr_exact);
  for (const auto& c : s.kt_sweep) csv.row("KT", c.N, c.K, c.T, c.snr, c.snr_exact);
}

void run_rectification(const SimulateArgs& a, const ValleySpec& spec, CsvWriter& csv) {
  const auto s = rectification_experiment(spec, a.n, a.k, a.t, a.seeds, a.base_seed, a.grid);
  csv.comment("mean_evr1_merged=" + format_double(s.mean_evr1_merged) +
              " mean_evr1_raw=" + format_double(s.mean_evr1_raw) +
              " merged_monotone=" + format_double(s.merged_monotone_fraction) +
              " raw_monotone=" + format_double(s.raw_monotone_fraction) +
              " raw_basin=" + format_double(s.raw_basin_fraction) +
              " merged_descent=" + format_double(s.merged_descent_fraction));
  csv.row("seed", "evr1_merged", "evr1_raw", "merged_monotone", "raw_monotone", "raw_profile", "merged_profile");
  for (const auto& r : s.seeds)
    csv.row(r.seed, r.evr1_merged, r.evr1_raw, int(r.merged_monotone), int(r.raw_monotone), shape_name(r.raw_profile),
            shape_name(r.merged_profile));
}

void add_simulate(CLI::App& app, std::vector<Command>& cmds) {
  auto args = std::make_shared<SimulateArgs>();
  Command c;
  c.app = app.add_subcommand("simulate", "River-valley Monte-Carlo experiments");
  c.app->add_option("--spec", args->spec, "Valley spec file, 'default' or 'high-noise'");
  c.app->add_option("--experiment", args->experiment, "thm1, thm2, snr or rectification")
      ->check(CLI::IsMember({"thm1", "thm2", "snr", "rectification"}));
  c.app->add_option("--seeds", args->seeds, "Monte-Carlo seeds");
  c.app->add_option("--base-seed", args->base_seed, "Base seed; seed i uses stream i");
  c.app->add_option("--N", args->n, "Merge window (fixed N in the K,T sweep)");
  c.app->add_option("--K", args->k, "Merged states (fixed K in the N sweep)");
  c.app->add_option("--T", args->t, "Checkpoint spacing in steps (fixed T in the N sweep)");
  c.app->add_option("--Ns", args->ns, "N values (thm1, snr)")->delimiter(',');
  c.app->add_option("--Ks", args->ks, "K values (snr)")->delimiter(',');
  c.app->add_option("--Ts", args->ts, "T values (thm1, snr)")->delimiter(',');
  c.app->add_option("--grid", args->grid, "Interpolation points (rectification)");
  c.app->add_option("--out", args->out, "Result CSV (default stdout)");
  c.run = [args, cmd = c.app] {
    if (args->seeds < 2) throw_usage("--seeds must be >= 2");
    const ValleySpec spec = resolve_spec(args->spec);
    Output out(args->out);
    echo_config(out.stream(), cmd);
    CsvWriter csv(out.stream());
    if (args->experiment == "thm1") run_thm1(*args, spec, csv);
    if (args->experiment == "thm2") run_thm2(*args, spec, csv);
    if (args->experiment == "snr") run_snr(*args, spec, csv);
    if (args->experiment == "rectification") run_rectification(*args, spec, csv);
  };
  cmds.push_back(std::move(c));
}

// ---- train-toy --------------------------------------------------------------

void add_train_toy(CLI::App& app, std::vector<Command>& cmds) {
  struct Args {
    std::string out_dir;
    std::map<std::string, std::string> overrides;
  };
  auto args = std::make_shared<Args>();
  Command c;
  c.app = app.add_subcommand("train-toy", "Train the toy model and write its checkpoint stream");
  c.app->add_option("--out-dir", args->out_dir, "Run directory");
  // Every task setting is a flag of the same name; defaults live in ToyTaskConfig.
  std::stringstream defaults;
  write_toy_config(defaults, ToyTaskConfig{});
  const KeyValues kv = parse_key_values(defaults);
  for (const auto& [key, value] : kv) {
    std::string flag = "--" + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    c.app->add_option_function<std::string>(
             flag, [args, key = key](const std::string& v) { args->overrides[key] = v; }, "Task setting")
        ->default_str(value);
  }
  c.run = [args, cmd = c.app] {
    require(args->out_dir, "out-dir");
    KeyValues settings(args->overrides.begin(), args->overrides.end());
    const ToyTaskConfig config = toy_config_from_kv(settings);
    const auto result = train(config, args->out_dir);
    echo_config(std::cout, cmd);
    CsvWriter csv(std::cout);
    csv.comment("manifest=" + (std::filesystem::path(args->out_dir) / "manifest.tsv").string());
    csv.row("step", "train_loss", "val_loss");
    for (const auto& p : result.curve) csv.row(p.step, p.train_loss, p.val_loss);
  };
  cmds.push_back(std::move(c));
}

void report(ErrorKind kind, std::string message) {
  std::replace(message.begin(), message.end(), '\n', ' ');
  std::cerr << "error kind=" << kind_name(kind) << " message=" << message << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Checkpoint merging and extrapolation toolkit"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  std::vector<Command> cmds;
  add_merge(app, cmds);
  add_extramerge(app, cmds);
  add_pca(app, cmds);
  add_scan(app, cmds);
  add_simulate(app, cmds);
  add_train_toy(app, cmds);
  for (auto& c : cmds) c.app->add_option("--config", c.config, "key=value file; flags override it");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report(ErrorKind::kUsage, e.what());
    return exit_code(ErrorKind::kUsage);
  }

  try {
    for (auto& c : cmds) {
      if (!c.app->parsed()) continue;
      apply_config_file(c.app, c.config);
      c.run();
    }
  } catch (const Error& e) {
    report(e.kind(), e.what());
    return exit_code(e.kind());
  } catch (const CLI::ParseError& e) {
    report(ErrorKind::kUsage, e.what());
    return exit_code(ErrorKind::kUsage);
  } catch (const std::exception& e) {
    report(ErrorKind::kData, e.what());
    return exit_code(ErrorKind::kData);
  }
  return 0;
}
