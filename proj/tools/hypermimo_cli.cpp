// hypermimo: drop generation, training and SER evaluation.
//
//   hypermimo gen-drops --count 10 --out work/drops
//   hypermimo train --drops work/drops --models work/models
//   hypermimo eval-snr --drops work/drops --models work/models --mmnet --out snr.csv
//   hypermimo eval-angular ... --out angular.csv
//   hypermimo eval-mobility ... --out mobility.csv
//
// Options can also be read from a TOML/INI file given with --config; a
// section per subcommand ([train], [eval-snr], ...) holds its options.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hypermimo/errors.hpp"
#include "hypermimo/harness.hpp"

namespace fs = std::filesystem;
using namespace hypermimo;

namespace {

struct EvalOptions {
  std::string drops_dir = "drops";
  std::string models_dir = "models";
  std::string out = "ser.csv";
  std::vector<double> grid;
  std::vector<std::string> detectors;
  bool mmnet = false;
  std::size_t mmnet_realizations = 200;
  std::size_t mmnet_steps = 1000;
  std::size_t mmnet_batch = 500;
  std::string mmnet_cache;
  double snr = 8.0;
  std::size_t displacements = 100;
  std::uint64_t seed = 1;
  std::uint64_t min_errors = 100;
  std::uint64_t max_symbols = 10'000'000;
  std::size_t threads = 1;
};

void add_eval_options(CLI::App* cmd, EvalOptions& o, ExperimentMode mode) {
  cmd->add_option("--drops", o.drops_dir, "Directory holding drop_XX.csv files")
      ->capture_default_str();
  cmd->add_option("--models", o.models_dir, "Directory holding trained models")
      ->capture_default_str();
  cmd->add_option("--out", o.out, "Output CSV path")->capture_default_str();
  cmd->add_option("--grid", o.grid, "Grid points (SNR dB, degrees or meters)")
      ->delimiter(',');
  cmd->add_option("--detectors", o.detectors, "Subset of mmse,oamp,hg,mmnet,ml")
      ->delimiter(',');
  cmd->add_option("--seed", o.seed, "Master seed")->capture_default_str();
  cmd->add_option("--min-errors", o.min_errors, "Stop a point after this many errors")
      ->capture_default_str();
  cmd->add_option("--max-symbols", o.max_symbols, "Symbol budget per point and drop")
      ->capture_default_str();
  cmd->add_option("-j,--threads", o.threads, "Parallel evaluation threads")
      ->capture_default_str();
  if (mode == ExperimentMode::SnrSweep) {
    cmd->add_flag("--mmnet", o.mmnet, "Include the per-realization MMNet baseline");
    cmd->add_option("--mmnet-realizations", o.mmnet_realizations,
                    "Channel realizations per drop and SNR point")
        ->capture_default_str();
    cmd->add_option("--mmnet-steps", o.mmnet_steps, "Training steps per realization")
        ->capture_default_str();
    cmd->add_option("--mmnet-batch", o.mmnet_batch, "Batch size per realization")
        ->capture_default_str();
    cmd->add_option("--mmnet-cache", o.mmnet_cache,
                    "Directory caching per-realization weights");
  } else {
    cmd->add_option("--snr", o.snr, "Evaluation SNR in dB")->capture_default_str();
  }
  if (mode == ExperimentMode::Mobility2d) {
    cmd->add_option("--displacements", o.displacements,
                    "Random displacements per distance and drop")
        ->capture_default_str();
  }
}

std::vector<DropEntry> load_entries(const EvalOptions& o, bool need_models) {
  const std::vector<UserDrop> drops = read_drops(o.drops_dir);
  std::vector<DropEntry> entries;
  for (std::size_t i = 0; i < drops.size(); ++i) {
    DropEntry e;
    e.drop = drops[i];
    char tag[16];
    std::snprintf(tag, sizeof tag, "drop%02zu", i);
    e.tag = tag;
    const fs::path hp = hypernet_path(o.models_dir, i), op = oampnet_path(o.models_dir, i);
    if (need_models && fs::exists(hp)) e.hypernet = load_hypernet(hp);
    if (need_models && fs::exists(op)) e.oampnet = load_oampnet(op);
    entries.push_back(std::move(e));
  }
  return entries;
}

int run_eval(const EvalOptions& o, ExperimentMode mode, const std::string& config_text) {
  const auto start = std::chrono::steady_clock::now();
  ExperimentConfig cfg = ExperimentConfig::defaults(mode);
  if (!o.grid.empty()) cfg.grid = o.grid;
  if (!o.detectors.empty()) {
    cfg.detectors.clear();
    for (const auto& d : o.detectors) cfg.detectors.push_back(parse_detector(d));
  } else if (mode == ExperimentMode::SnrSweep && !o.mmnet) {
    std::erase(cfg.detectors, DetectorKind::Mmnet);
  }
  if (o.mmnet && std::find(cfg.detectors.begin(), cfg.detectors.end(),
                           DetectorKind::Mmnet) == cfg.detectors.end()) {
    cfg.detectors.push_back(DetectorKind::Mmnet);
  }
  cfg.eval_snr_db = o.snr;
  cfg.seed = o.seed;
  cfg.displacements = o.displacements;
  cfg.ser.min_errors = o.min_errors;
  cfg.ser.max_symbols = o.max_symbols;
  cfg.ser.threads = o.threads;
  cfg.mmnet.steps = o.mmnet_steps;
  cfg.mmnet.batch_size = o.mmnet_batch;
  cfg.mmnet_realizations = o.mmnet_realizations;
  if (!o.mmnet_cache.empty()) {
    fs::create_directories(o.mmnet_cache);
    cfg.mmnet_cache = o.mmnet_cache;
  }

  const SystemConfig sys;
  const std::vector<DropEntry> entries = load_entries(o, true);
  SerCurve curve;
  switch (mode) {
    case ExperimentMode::SnrSweep: curve = run_snr_sweep(cfg, entries, sys); break;
    case ExperimentMode::Angular: curve = run_angular(cfg, entries, sys); break;
    case ExperimentMode::Mobility2d: curve = run_mobility2d(cfg, entries, sys); break;
    case ExperimentMode::GenDrops: break;
  }

  const fs::path out(o.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream os(out);
  if (!os) throw IoError("cannot write " + out.string());
  curve.write_csv(os);

  RunMetadata meta;
  meta.seed = o.seed;
  meta.config_text = config_text;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    for (const fs::path& p :
         {hypernet_path(o.models_dir, i), oampnet_path(o.models_dir, i)}) {
      if (fs::exists(p)) meta.models.push_back(p);
    }
  }
  meta.wall_clock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  meta.extra.emplace_back("drops", std::to_string(entries.size()));
  if (mode != ExperimentMode::SnrSweep) {
    meta.extra.emplace_back("eval_snr_db", std::to_string(o.snr));
  }
  fs::path side = out;
  side.replace_extension(".json");
  write_metadata(side, meta);
  curve.write_csv(std::cout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HyperMIMO detector training and evaluation"};
  app.set_config("--config", "", "TOML/INI configuration file");
  app.require_subcommand(1);

  std::size_t drop_count = 10;
  std::uint64_t drop_seed = 2020;
  std::string drop_out = "drops";
  auto* gen = app.add_subcommand("gen-drops", "Generate random user drops");
  gen->add_option("--count", drop_count, "Number of drops")->capture_default_str();
  gen->add_option("--seed", drop_seed, "Seed")->capture_default_str();
  gen->add_option("--out", drop_out, "Output directory")->capture_default_str();

  std::string train_drops = "drops", train_models = "models";
  std::vector<std::size_t> train_only;
  TrainConfig hg_cfg;
  std::size_t oamp_steps = 20000;
  bool skip_oamp = false;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "Train HyperMIMO and OAMPNet per drop");
  train->add_option("--drops", train_drops, "Drop directory")->capture_default_str();
  train->add_option("--models", train_models, "Model output directory")
      ->capture_default_str();
  train->add_option("--only", train_only, "Drop indices to train")->delimiter(',');
  train->add_option("--steps", hg_cfg.total_steps, "HyperMIMO training steps")
      ->capture_default_str();
  train->add_option("--oamp-steps", oamp_steps, "OAMPNet training steps")
      ->capture_default_str();
  train->add_option("--batch", hg_cfg.batch_size, "Batch size")->capture_default_str();
  train->add_option("--lr-start", hg_cfg.lr_start, "Initial learning rate")
      ->capture_default_str();
  train->add_option("--lr-end", hg_cfg.lr_end, "Final learning rate")
      ->capture_default_str();
  train->add_option("--seed", hg_cfg.seed, "Training seed")->capture_default_str();
  train->add_option("--eval-every", hg_cfg.eval_every, "Validation interval")
      ->capture_default_str();
  train->add_flag("--shared-h", hg_cfg.shared_h_per_batch, "One channel per batch");
  train->add_flag("--random-drops", hg_cfg.random_drops,
                  "Sample a new user drop for every channel");
  train->add_flag("--no-oamp", skip_oamp, "Skip OAMPNet");
  train->add_flag("-q,--quiet", quiet, "Do not echo training progress");

  EvalOptions snr_opts, ang_opts, mob_opts;
  auto* eval_snr = app.add_subcommand("eval-snr", "SER versus SNR");
  add_eval_options(eval_snr, snr_opts, ExperimentMode::SnrSweep);
  auto* eval_ang = app.add_subcommand("eval-angular", "SER versus angular displacement");
  add_eval_options(eval_ang, ang_opts, ExperimentMode::Angular);
  auto* eval_mob = app.add_subcommand("eval-mobility", "SER versus 2D displacement");
  add_eval_options(eval_mob, mob_opts, ExperimentMode::Mobility2d);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const std::string config_text = app.config_to_str(true, false);
    if (gen->parsed()) {
      const auto drops = gen_drops(drop_count, drop_seed, SystemConfig{}, drop_out);
      std::cout << "wrote " << drops.size() << " drops to " << drop_out << '\n';
      return 0;
    }
    if (train->parsed()) {
      const SystemConfig sys;
      const auto drops = read_drops(train_drops);
      TrainConfig oamp_cfg = hg_cfg;
      oamp_cfg.total_steps = oamp_steps;
      oamp_cfg.iterations = 10;
      if (!quiet) {
        hg_cfg.log = &std::cout;
        oamp_cfg.log = &std::cout;
      }
      for (std::size_t i = 0; i < drops.size(); ++i) {
        if (!train_only.empty() &&
            std::find(train_only.begin(), train_only.end(), i) == train_only.end()) {
          continue;
        }
        prepare_drop(drops[i], i, sys, hg_cfg, oamp_cfg, train_models, !skip_oamp,
                     &std::cerr);
      }
      return 0;
    }
    if (eval_snr->parsed()) return run_eval(snr_opts, ExperimentMode::SnrSweep, config_text);
    if (eval_ang->parsed()) return run_eval(ang_opts, ExperimentMode::Angular, config_text);
    if (eval_mob->parsed()) {
      return run_eval(mob_opts, ExperimentMode::Mobility2d, config_text);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
