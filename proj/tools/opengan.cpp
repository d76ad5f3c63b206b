// opengan: synthetic benchmarks, training, open validation, evaluation and
// protocol benchmarks over feature files. Every command writes manifest.json
// next to its outputs; `opengan rerun` replays one.

#include "opengan/opengan.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

using opengan::cli::Json;

struct Common {
  std::uint64_t seed = 0;
  std::string config;
  std::string out;
  int threads = 1;
  CLI::Option* seed_opt = nullptr;
};

void add_common(CLI::App* cmd, Common& c, bool threads) {
  c.seed_opt = cmd->add_option("--seed", c.seed, "Base seed for all randomness");
  cmd->add_option("--config", c.config, "JSON config file (flat keys)")->check(CLI::ExistingFile);
  cmd->add_option("--out", c.out, "Output directory")->required();
  if (threads) cmd->add_option("--threads", c.threads, "Worker threads")->check(CLI::PositiveNumber);
}

// Flags left unset on the command line do not override the config file.
template <typename T>
void put_if(Json& j, const char* key, CLI::Option* opt, const T& value) {
  if (opt && opt->count() > 0) j[key] = value;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Open-set recognition toolkit: OpenGAN training, open validation and baselines"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(opengan::kToolkitVersion));

  // synth
  Common synth_c;
  auto* synth = app.add_subcommand("synth", "Write a synthetic closed/open benchmark as six OFD files");
  add_common(synth, synth_c, false);

  // train
  Common train_c;
  std::string train_mode, train_data, gen_loss;
  int epochs = 0, ckpt_every = 0;
  double lambda_g = 0, lambda_o = 0;
  auto* train = app.add_subcommand("train", "Train a discriminator (and generator) and store per-epoch checkpoints");
  add_common(train, train_c, false);
  train->add_option("--mode", train_mode, "opengan | opengan0 | cls")->required();
  train->add_option("--data", train_data, "Directory holding the OFD files")->required();
  auto* epochs_opt = train->add_option("--epochs", epochs, "Training epochs");
  auto* lg_opt = train->add_option("--lambda-g", lambda_g, "Weight of the generated-open term");
  auto* lo_opt = train->add_option("--lambda-o", lambda_o, "Weight of the real-open term");
  auto* ce_opt = train->add_option("--checkpoint-every", ckpt_every, "Snapshot interval in epochs");
  auto* gl_opt = train->add_option("--generator-loss", gen_loss, "non-saturating | minimax");

  // select
  Common select_c;
  std::string select_ckpt, select_data;
  auto* select = app.add_subcommand("select", "Pick the checkpoint with the best open-validation AUROC");
  add_common(select, select_c, false);
  select->add_option("--checkpoints", select_ckpt, "Output directory of `train`")->required();
  select->add_option("--data", select_data, "Directory holding closed_val/open_val OFD files")->required();

  // eval
  Common eval_c;
  std::string eval_method, eval_data, eval_model;
  int knn_k = 1, f1_thresholds = 101;
  bool debug_random = false;
  auto* eval = app.add_subcommand("eval", "Score the test split and report AUROC, ROC and F1 curves");
  add_common(eval, eval_c, false);
  eval->add_option("--method", eval_method, "opengan | cls | msp | entropy | knn | centroid | gdm | gmm")->required();
  eval->add_option("--data", eval_data, "Directory holding the OFD files")->required();
  eval->add_option("--model", eval_model, "Discriminator checkpoint (.mlp) for opengan/cls");
  auto* k_opt = eval->add_option("--knn-k", knn_k, "Neighbour rank for knn");
  auto* f1_opt = eval->add_option("--f1-thresholds", f1_thresholds, "Number of thresholds in the F1 sweep");
  auto* dbg_opt = eval->add_flag("--debug-random-scores", debug_random, "Replace scores with uniform noise");

  // bench
  Common bench_c;
  std::string protocol;
  int repeats = 0, bench_epochs = 0;
  auto* bench = app.add_subcommand("bench", "Run a repeated protocol and write a summary table");
  add_common(bench, bench_c, true);
  bench->add_option("--protocol", protocol, "setup1 | setup2")->required();
  auto* rep_opt = bench->add_option("--repeats", repeats, "Repetitions (class splits or seeds)");
  auto* be_opt = bench->add_option("--epochs", bench_epochs, "Epochs for trained methods");

  // sweep
  Common sweep_c;
  std::string sweep_data;
  std::vector<double> grid;
  int sweep_epochs = 0;
  auto* sweep = app.add_subcommand("sweep", "Tune lambda_g by retraining and open validation");
  add_common(sweep, sweep_c, true);
  sweep->add_option("--data", sweep_data, "Directory holding the OFD files")->required();
  auto* grid_opt = sweep->add_option("--grid", grid, "lambda_g values (default 0.05..0.90)");
  auto* se_opt = sweep->add_option("--epochs", sweep_epochs, "Epochs per run");

  // rerun
  std::string manifest, rerun_out;
  auto* rerun = app.add_subcommand("rerun", "Replay a manifest and check that outputs are byte-identical");
  rerun->add_option("manifest", manifest, "manifest.json of an earlier run")->required()->check(CLI::ExistingFile);
  rerun->add_option("--out", rerun_out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  namespace cli = opengan::cli;
  try {
    if (*synth) {
      Json flags = Json::object();
      put_if(flags, "seed", synth_c.seed_opt, synth_c.seed);
      cli::execute("synth", cli::resolve_synth_args(cli::read_config_file(synth_c.config), flags), synth_c.out);
    } else if (*train) {
      Json flags = Json::object();
      put_if(flags, "seed", train_c.seed_opt, train_c.seed);
      put_if(flags, "epochs", epochs_opt, epochs);
      put_if(flags, "lambda_g", lg_opt, lambda_g);
      put_if(flags, "lambda_o", lo_opt, lambda_o);
      put_if(flags, "checkpoint_every", ce_opt, ckpt_every);
      put_if(flags, "generator_loss", gl_opt, gen_loss);
      cli::execute("train",
                   cli::resolve_train_args(train_mode, train_data, cli::read_config_file(train_c.config), flags),
                   train_c.out);
    } else if (*select) {
      Json flags = Json::object();
      put_if(flags, "seed", select_c.seed_opt, select_c.seed);
      cli::execute("select",
                   cli::resolve_select_args(select_ckpt, select_data, cli::read_config_file(select_c.config), flags),
                   select_c.out);
    } else if (*eval) {
      Json flags = Json::object();
      put_if(flags, "seed", eval_c.seed_opt, eval_c.seed);
      put_if(flags, "knn_k", k_opt, knn_k);
      put_if(flags, "f1_thresholds", f1_opt, f1_thresholds);
      put_if(flags, "debug_random_scores", dbg_opt, debug_random);
      cli::execute("eval",
                   cli::resolve_eval_args(eval_method, eval_data, eval_model, cli::read_config_file(eval_c.config),
                                          flags),
                   eval_c.out);
    } else if (*bench) {
      Json flags = Json::object();
      put_if(flags, "seed", bench_c.seed_opt, bench_c.seed);
      put_if(flags, "repeats", rep_opt, repeats);
      put_if(flags, "epochs", be_opt, bench_epochs);
      cli::execute("bench",
                   cli::resolve_bench_args(protocol, cli::read_config_file(bench_c.config), flags, bench_c.threads),
                   bench_c.out);
    } else if (*sweep) {
      Json flags = Json::object();
      put_if(flags, "seed", sweep_c.seed_opt, sweep_c.seed);
      put_if(flags, "grid", grid_opt, grid);
      put_if(flags, "epochs", se_opt, sweep_epochs);
      cli::execute("sweep",
                   cli::resolve_sweep_args(sweep_data, cli::read_config_file(sweep_c.config), flags, sweep_c.threads),
                   sweep_c.out);
    } else if (*rerun) {
      cli::rerun(manifest, rerun_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
