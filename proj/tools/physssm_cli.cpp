// physssm: dataset generation, training, evaluation, ablations, sweeps, the
// recovery experiment and trajectory plots.
//
// Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "physssm/config.hpp"
#include "physssm/errors.hpp"
#include "physssm/experiments.hpp"
#include "physssm/io.hpp"
#include "physssm/plot.hpp"
#include "physssm/train.hpp"

#ifndef PHYSSM_VERSION
#define PHYSSM_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace physssm;

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

fs::path output_root() {
  const char* env = std::getenv("PHYSSM_OUT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

std::string pretty(const json& j) { return j.dump(2) + "\n"; }

/// Records one invocation; written last as run.json next to the artifacts it lists.
struct Manifest {
  std::string command_line;
  std::string started = utc_now();
  std::string config_hash;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> outputs;
  json extra = json::object();

  void add(const fs::path& p) { outputs.push_back(p.filename().string()); }

  void write(const fs::path& dir, bool overwrite, const std::string& name = "run.json") {
    const fs::path path = dir / name;
    ensure_writable(path, overwrite);
    json j = {{"command_line", command_line},
              {"config_hash", config_hash},
              {"code_version", PHYSSM_VERSION},
              {"seeds", seeds},
              {"started_utc", started},
              {"finished_utc", utc_now()},
              {"outputs", outputs}};
    for (auto& [k, v] : extra.items()) j[k] = v;
    write_text_file(path, pretty(j));
  }
};

struct Common {
  std::string config_path;
  std::string system;
  std::vector<std::string> overrides;
  std::string out;
  bool overwrite = false;
  int jobs = 1;
  bool quiet = false;
};

void add_common(CLI::App* sub, Common& c, bool with_config = true) {
  if (with_config) {
    sub->add_option("--config", c.config_path, "experiment config (INI)")->check(CLI::ExistingFile);
    sub->add_option("--system", c.system, "built-in defaults when no --config: pendulum or sir");
    sub->add_option("--set", c.overrides, "override a config key: section.key=value")
        ->take_all();
  }
  sub->add_option("--out", c.out, "output directory (default: $PHYSSM_OUT/<command>/<name>)");
  sub->add_flag("--overwrite", c.overwrite, "replace existing outputs");
  sub->add_option("--jobs", c.jobs, "worker threads across seeds or grid cells")
      ->check(CLI::PositiveNumber);
  sub->add_flag("--quiet", c.quiet, "no progress log");
}

ExperimentConfig resolve_config(const Common& c) {
  ExperimentConfig cfg =
      c.config_path.empty() ? default_config(c.system.empty() ? "pendulum" : c.system)
                            : load_config(c.config_path);
  if (!c.config_path.empty() && !c.system.empty() && c.system != cfg.data.system) {
    throw ConfigError("--system " + c.system + " conflicts with config system " + cfg.data.system);
  }
  for (const auto& o : c.overrides) apply_override(cfg, o);
  cfg.train.validate();
  return cfg;
}

fs::path prepare_dir(const Common& c, const std::string& command, const std::string& name) {
  const fs::path dir = c.out.empty() ? output_root() / command / name : fs::path(c.out);
  fs::create_directories(dir);
  return dir;
}

void write_artifact(Manifest& m, const fs::path& path, const std::string& text, bool overwrite) {
  ensure_writable(path, overwrite);
  write_text_file(path, text);
  m.add(path);
}

/// Report JSON without wall-clock fields so reruns produce identical files.
json stable_report(const MetricsReport& r) {
  json j = report_to_json(r);
  j.erase("runtime_seconds");
  return j;
}

std::string history_csv(const std::vector<EpochRecord>& h) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,total,recon,kl,reg,val_extrap_mse\n";
  for (const auto& e : h) {
    os << e.epoch << ',' << e.loss.total << ',' << e.loss.recon << ',' << e.loss.kl << ','
       << e.loss.reg << ',' << e.val_extrap_mse << '\n';
  }
  return os.str();
}

const IrregularSet& split_of(const Dataset& d, const std::string& split) {
  if (split == "train") return d.train;
  if (split == "val") return d.val;
  if (split == "test") return d.test;
  throw ConfigError("unknown split '" + split + "' (train, val, test)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Physics-enhanced deep state-space model: experiments and artifacts"};
  app.require_subcommand(1);
  app.set_version_flag("--version", PHYSSM_VERSION);

  std::string command_line;
  for (int i = 0; i < argc; ++i) command_line += (i ? " " : "") + std::string(argv[i]);

  // generate
  auto* gen = app.add_subcommand("generate", "simulate and corrupt a dataset");
  Common gc;
  std::string g_system;
  std::optional<int> g_n, g_n_val, g_n_test, g_horizon;
  std::optional<double> g_dt, g_noise, g_drop;
  std::optional<std::uint64_t> g_seed;
  gen->add_option("--system", g_system, "pendulum or sir")->required();
  gen->add_option("--n", g_n, "training trajectories");
  gen->add_option("--n-val", g_n_val, "validation trajectories");
  gen->add_option("--n-test", g_n_test, "test trajectories");
  gen->add_option("--horizon", g_horizon, "grid steps per trajectory before dropping");
  gen->add_option("--dt", g_dt, "grid spacing");
  gen->add_option("--noise", g_noise, "observation noise sigma");
  gen->add_option("--drop", g_drop, "fraction of grid points removed");
  gen->add_option("--seed", g_seed, "generation seed");
  add_common(gen, gc, false);

  // train
  auto* tr = app.add_subcommand("train", "fit one model and evaluate it on the test split");
  Common tc;
  std::optional<std::uint64_t> t_seed;
  bool t_dump = false;
  tr->add_option("--seed", t_seed, "training seed (default: first of train.seeds)");
  tr->add_flag("--dump", t_dump, "also write the test-split prediction dump");
  add_common(tr, tc);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint and write a prediction dump");
  Common ec;
  std::string e_ckpt, e_split = "test";
  ev->add_option("--ckpt", e_ckpt, "checkpoint written by train")->required()->check(CLI::ExistingFile);
  ev->add_option("--split", e_split, "train, val or test");
  add_common(ev, ec);

  // ablate
  auto* ab = app.add_subcommand("ablate", "full model vs. no-unit vs. no-regularizer over seeds");
  Common ac;
  bool a_metrics = false;
  ab->add_flag("--metrics", a_metrics,
               "compare regularizer metrics (euclidean, chebyshev, cosine) instead");
  add_common(ab, ac);

  // sweep
  auto* sw = app.add_subcommand("sweep", "beta x lambda sensitivity grid at one seed");
  Common sc;
  std::string s_beta = "0.1,1,10", s_lambda = "1,10,100";
  std::optional<std::uint64_t> s_seed;
  sw->add_option("--beta", s_beta, "comma-separated KL weights");
  sw->add_option("--lambda", s_lambda, "comma-separated regularizer weights");
  sw->add_option("--seed", s_seed, "training seed (default: first of train.seeds)");
  add_common(sw, sc);

  // uniqueness
  auto* un = app.add_subcommand("uniqueness", "recover unknown entries of a synthetic linear system");
  Common uc;
  std::uint64_t u_seed = 0;
  UniquenessOptions u_opts;
  un->add_option("--seed", u_seed, "data and initialization seed");
  un->add_option("--iterations", u_opts.iterations, "optimizer steps")->check(CLI::PositiveNumber);
  un->add_option("--lr", u_opts.lr, "learning rate");
  add_common(un, uc, false);

  // plot
  auto* pl = app.add_subcommand("plot", "trajectory figures and CSV from a prediction dump");
  Common pc;
  std::string p_dump, p_stem;
  int p_traj = 0;
  pl->add_option("--dump", p_dump, "prediction dump CSV")->required();
  pl->add_option("--traj", p_traj, "trajectory index");
  pl->add_option("--stem", p_stem, "file name stem (default: traj<index>)");
  add_common(pl, pc, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  Manifest manifest;
  manifest.command_line = command_line;
  try {
    if (gen->parsed()) {
      DataConfig gd = default_config(g_system).data;
      if (g_n) gd.n_train = *g_n;
      if (g_n_val) gd.n_val = *g_n_val;
      if (g_n_test) gd.n_test = *g_n_test;
      if (g_horizon) gd.horizon = *g_horizon;
      if (g_dt) gd.dt = *g_dt;
      if (g_noise) gd.noise_sigma = *g_noise;
      if (g_drop) gd.drop_rate = *g_drop;
      if (g_seed) gd.seed = *g_seed;
      gd.validate();
      const fs::path dir = gc.out.empty() ? output_root() / "data" /
                                                (g_system + "-seed" + std::to_string(gd.seed))
                                          : fs::path(gc.out);
      const Dataset data = build_dataset(gd);
      write_dataset(data, dir, gc.overwrite);
      manifest.config_hash = hash_hex(data_config_to_json(gd).dump());
      manifest.seeds = {gd.seed};
      for (const char* f : {"manifest.json", "train.csv", "val.csv", "test.csv"}) manifest.add(f);
      manifest.write(dir, gc.overwrite);
      if (!gc.quiet) std::cout << "wrote " << dir.string() << "\n";
      return 0;
    }

    if (tr->parsed()) {
      const ExperimentConfig cfg = resolve_config(tc);
      const std::uint64_t seed = t_seed.value_or(cfg.train.seeds.front());
      const fs::path dir = prepare_dir(tc, "train", cfg.name + "-seed" + std::to_string(seed));
      const Dataset data = dataset_for(cfg);
      manifest.config_hash = config_hash(cfg);
      manifest.seeds = {seed};
      const TrainResult r = train(cfg, data, seed, tc.quiet ? nullptr : &std::cerr);
      Prediction pred;
      const Metrics m = evaluate_model(r.model, data.test, data.config.dt,
                                       static_cast<std::size_t>(cfg.train.window),
                                       static_cast<std::size_t>(cfg.train.extrap_horizon),
                                       t_dump ? &pred : nullptr);
      write_artifact(manifest, dir / "config.ini", to_ini(cfg), tc.overwrite);
      const fs::path ckpt = dir / "model.ckpt";
      ensure_writable(ckpt, tc.overwrite);
      save_checkpoint(r.model, ckpt,
                      {{"config_hash", manifest.config_hash},
                       {"seed", seed},
                       {"best_epoch", r.best_epoch},
                       {"config_ini", to_ini(cfg)}});
      manifest.add(ckpt);
      write_artifact(manifest, dir / "history.csv", history_csv(r.history), tc.overwrite);
      json metrics = stable_report(aggregate({seed}, {m}, r.seconds));
      metrics["config_hash"] = manifest.config_hash;
      metrics["best_epoch"] = r.best_epoch;
      metrics["best_val_extrap_mse"] = r.best_val_extrap_mse;
      write_artifact(manifest, dir / "metrics.json", pretty(metrics), tc.overwrite);
      if (t_dump) {
        const fs::path dump = dir / "predictions.csv";
        ensure_writable(dump, tc.overwrite);
        write_prediction_dump(dump, data.test, pred, cfg.train.window, cfg.train.extrap_horizon);
        manifest.add(dump);
      }
      manifest.extra["train_seconds"] = r.seconds;
      manifest.write(dir, tc.overwrite);
      std::cout << "test extrap_mse " << m.extrap_mse << " extrap_mae " << m.extrap_mae
                << " interp_mse " << m.interp_mse << "\nwrote " << dir.string() << "\n";
      return 0;
    }

    if (ev->parsed()) {
      json meta;
      const PhySSMModel model = load_checkpoint(e_ckpt, &meta);
      ExperimentConfig cfg;
      if (!ec.config_path.empty() || !ec.system.empty()) {
        cfg = resolve_config(ec);
      } else if (meta.contains("config_ini")) {
        cfg = parse_config(meta.at("config_ini").get<std::string>());
        for (const auto& o : ec.overrides) apply_override(cfg, o);
      } else {
        throw ConfigError("checkpoint has no embedded config; pass --config");
      }
      const fs::path dir = ec.out.empty() ? fs::path(e_ckpt).parent_path() / ("eval-" + e_split)
                                          : fs::path(ec.out);
      fs::create_directories(dir);
      const Dataset data = dataset_for(cfg);
      const IrregularSet& set = split_of(data, e_split);
      Prediction pred;
      const Metrics m = evaluate_model(model, set, data.config.dt,
                                       static_cast<std::size_t>(cfg.train.window),
                                       static_cast<std::size_t>(cfg.train.extrap_horizon), &pred);
      manifest.config_hash = config_hash(cfg);
      if (meta.contains("seed")) manifest.seeds = {meta.at("seed").get<std::uint64_t>()};
      json metrics = stable_report(aggregate(manifest.seeds.empty() ? std::vector<std::uint64_t>{0}
                                                                    : manifest.seeds,
                                             {m}, 0.0));
      metrics["split"] = e_split;
      metrics["checkpoint"] = fs::path(e_ckpt).filename().string();
      write_artifact(manifest, dir / "metrics.json", pretty(metrics), ec.overwrite);
      const fs::path dump = dir / "predictions.csv";
      ensure_writable(dump, ec.overwrite);
      write_prediction_dump(dump, set, pred, cfg.train.window, cfg.train.extrap_horizon);
      manifest.add(dump);
      manifest.write(dir, ec.overwrite);
      std::cout << e_split << " extrap_mse " << m.extrap_mse << " extrap_mae " << m.extrap_mae
                << "\nwrote " << dir.string() << "\n";
      return 0;
    }

    if (ab->parsed()) {
      const ExperimentConfig cfg = resolve_config(ac);
      const fs::path dir = prepare_dir(ac, a_metrics ? "metrics" : "ablate", cfg.name);
      const Dataset data = dataset_for(cfg);
      manifest.config_hash = config_hash(cfg);
      manifest.seeds = cfg.train.seeds;
      std::ostream* log = ac.quiet ? nullptr : &std::cerr;
      const auto rows = a_metrics ? run_metric_comparison(cfg, data, ac.jobs, log)
                                  : run_ablation(cfg, data, ac.jobs, log);
      json out = json::array();
      for (const auto& r : rows) {
        out.push_back({{"name", r.name},
                       {"config_hash", config_hash(r.config)},
                       {"report", stable_report(r.report)}});
      }
      const std::string stem = a_metrics ? "metrics" : "ablation";
      write_artifact(manifest, dir / (stem + ".json"), pretty(out), ac.overwrite);
      const std::string table = format_rows(rows);
      write_artifact(manifest, dir / (stem + ".txt"), table, ac.overwrite);
      manifest.write(dir, ac.overwrite);
      std::cout << table << "wrote " << dir.string() << "\n";
      return 0;
    }

    if (sw->parsed()) {
      const ExperimentConfig cfg = resolve_config(sc);
      const std::vector<double> betas = parse_double_list(s_beta);
      const std::vector<double> lambdas = parse_double_list(s_lambda);
      const std::uint64_t seed = s_seed.value_or(cfg.train.seeds.front());
      const fs::path dir = prepare_dir(sc, "sweep", cfg.name + "-seed" + std::to_string(seed));
      const Dataset data = dataset_for(cfg);
      manifest.config_hash = config_hash(cfg);
      manifest.seeds = {seed};
      const auto cells =
          run_sensitivity(cfg, data, betas, lambdas, seed, sc.jobs, sc.quiet ? nullptr : &std::cerr);
      json out = json::array();
      for (const auto& c : cells) {
        out.push_back({{"beta", c.beta},
                       {"lambda", c.lambda},
                       {"metrics", metrics_to_json(c.report.mean)}});
      }
      write_artifact(manifest, dir / "sweep.json", pretty(out), sc.overwrite);
      const std::string table = format_grid(cells);
      write_artifact(manifest, dir / "sweep.txt", table, sc.overwrite);
      manifest.write(dir, sc.overwrite);
      std::cout << table << "wrote " << dir.string() << "\n";
      return 0;
    }

    if (un->parsed()) {
      const fs::path dir = prepare_dir(uc, "uniqueness", "seed" + std::to_string(u_seed));
      manifest.seeds = {u_seed};
      const json opts = {{"trajectories", u_opts.trajectories},
                         {"steps", u_opts.steps},
                         {"dt", u_opts.dt},
                         {"iterations", u_opts.iterations},
                         {"lr", u_opts.lr}};
      manifest.config_hash = hash_hex(opts.dump());
      const UniquenessReport r = uniqueness_recovery_test(u_seed, u_opts);
      json out = uniqueness_to_json(r);
      out["options"] = opts;
      write_artifact(manifest, dir / "uniqueness.json", pretty(out), uc.overwrite);
      manifest.write(dir, uc.overwrite);
      std::cout << "max_abs_error " << r.max_abs_error << " known_bit_identical "
                << (r.known_bit_identical ? "true" : "false") << "\nwrote " << dir.string() << "\n";
      return r.diverged ? 1 : 0;
    }

    if (pl->parsed()) {
      if (!fs::is_regular_file(p_dump)) throw ConfigError("prediction dump not found: " + p_dump);
      const PlotSeries s = series_from_dump(read_prediction_dump(p_dump), p_traj);
      const fs::path dir = pc.out.empty() ? fs::path(p_dump).parent_path() / "plots" : fs::path(pc.out);
      const std::string stem = p_stem.empty() ? "traj" + std::to_string(p_traj) : p_stem;
      manifest.config_hash = hash_hex(read_text_file(p_dump));
      for (const auto& p : write_plots(s, dir, stem, pc.overwrite)) manifest.add(p);
      manifest.write(dir, pc.overwrite, stem + ".run.json");
      if (!pc.quiet) std::cout << "wrote " << dir.string() << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
