#pragma once

#include "opengan/protocols.hpp"

#include <filesystem>
#include <iostream>
#include <map>

// Command layer behind the `opengan` executable. Every command takes a
// resolved argument object (the same object its manifest stores), writes
// its outputs plus manifest.json into one directory, and can be replayed
// from that manifest.
namespace opengan::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

/// Tracks the files a command reads and writes, with digests.
class RunRecorder {
 public:
  explicit RunRecorder(std::string out_dir) : out_(std::move(out_dir)) {
    if (out_.empty()) throw Error("--out is required");
    fs::create_directories(out_);
  }

  const std::string& out_dir() const { return out_; }

  void write(const std::string& name, std::string_view bytes) {
    write_file((fs::path(out_) / name).string(), bytes);
    outputs_[name] = digest_bytes(bytes);
  }

  std::string read(const std::string& path) {
    std::string bytes = read_file(path);
    inputs_[path] = digest_bytes(bytes);
    return bytes;
  }

  FeatureDataset load_dataset(const std::string& path) {
    if (!fs::exists(path)) throw Error("missing input '" + path + "'");
    try {
      return decode_dataset(read(path));
    } catch (const FormatError& e) {
      throw Error("'" + path + "': " + e.what());
    }
  }

  Json manifest(const std::string& command, const Json& args) const {
    Json m;
    m["toolkit_version"] = kToolkitVersion;
    m["command"] = command;
    m["args"] = args;
    m["inputs"] = inputs_;
    m["outputs"] = outputs_;
    return m;
  }

  const std::map<std::string, std::string>& outputs() const { return outputs_; }

 private:
  std::string out_;
  std::map<std::string, std::string> inputs_;
  std::map<std::string, std::string> outputs_;
};

inline std::string data_file(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / (name + ".ofd")).string();
}

inline void require_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) throw Error("non-finite " + what + " (" + format_real(v) + ")");
}

inline Json read_config_file(const std::string& path) {
  if (path.empty()) return Json::object();
  try {
    auto j = Json::parse(read_file(path));
    if (!j.is_object()) throw Error("config '" + path + "' must hold a JSON object");
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("config '" + path + "': " + e.what());
  }
}

/// An absent (null) config or flag set reads as an empty object.
inline Json as_object(const Json& j) {
  if (j.is_null()) return Json::object();
  if (!j.is_object()) throw Error("expected a JSON object of settings");
  return j;
}

/// Shallow merge: keys of `over` replace keys of `base`.
inline Json merge(Json base, const Json& over) {
  base = as_object(base);
  const Json o = as_object(over);
  for (const auto& [k, v] : o.items()) base[k] = v;
  return base;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

/// Six closed classes in 16-d with well separated means; open data from two
/// modes of one distribution outside the class sphere.
inline SynthConfig default_synth_config() {
  SynthConfig c;
  c.closed_mean_radius = protocols::separated_radius(c.dim, c.closed_cov_scale);
  c.open_train = {{16.0, 1.0, 100, 0}, {16.0, 1.0, 100, 1}};
  c.open_val = {{16.0, 1.0, 30, 0}, {16.0, 1.0, 30, 1}};
  c.open_test = {{16.0, 1.0, 150, 0}, {16.0, 1.0, 150, 1}};
  return c;
}

inline Json resolve_synth_args(const Json& file, const Json& flags) {
  SynthConfig c = default_synth_config();
  from_json(nlohmann::json(as_object(file)), c);
  from_json(nlohmann::json(as_object(flags)), c);
  c.validate();
  return {{"config", nlohmann::json(c)}};
}

inline void run_synth(const Json& args, RunRecorder& rec, std::ostream& log) {
  const SynthConfig cfg = nlohmann::json(args.at("config")).get<SynthConfig>();
  const SynthBenchmark b = synth_benchmark(cfg);
  const std::pair<const char*, const FeatureDataset*> parts[] = {
      {"closed_train", &b.closed_train}, {"closed_val", &b.closed_val},   {"closed_test", &b.closed_test},
      {"open_train", &b.open_train},     {"open_val", &b.open_val},       {"open_test", &b.open_test}};
  for (const auto& [name, ds] : parts) {
    rec.write(std::string(name) + ".ofd", encode_dataset(*ds));
    log << name << ": " << ds->count() << " rows\n";
  }
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

inline TrainConfig preset_for_mode(const std::string& mode) {
  if (mode == "opengan") return TrainConfig::opengan();
  if (mode == "cls") return TrainConfig::cls();
  if (mode == "opengan0") return TrainConfig::opengan0();
  throw Error("unknown mode '" + mode + "' (expected opengan, opengan0 or cls)");
}

/// Preset for `mode`, then the config file, then flags. The mode fixes one
/// of the two lambdas and overrides of it are rejected.
inline TrainConfig resolve_train_config(const std::string& mode, const Json& file, const Json& flags) {
  TrainConfig c = preset_for_mode(mode);
  from_json(nlohmann::json(as_object(file)), c);
  from_json(nlohmann::json(as_object(flags)), c);
  if (mode == "cls" && c.lambda_g != 0)
    throw Error("mode cls requires lambda_g = 0 (got " + format_real(c.lambda_g) + ")");
  if (mode == "opengan0" && c.lambda_o != 0)
    throw Error("mode opengan0 requires lambda_o = 0 (got " + format_real(c.lambda_o) + ")");
  if (mode == "opengan" && c.lambda_o == 0) throw Error("mode opengan requires lambda_o > 0; use opengan0");
  return c;
}

inline Json resolve_train_args(const std::string& mode, const std::string& data_dir, const Json& file,
                               const Json& flags) {
  const TrainConfig c = resolve_train_config(mode, file, flags);
  return {{"mode", mode}, {"data", data_dir}, {"config", nlohmann::json(c)}};
}

inline std::string checkpoint_name(int epoch) { return "ckpt_epoch_" + std::to_string(epoch) + ".mlp"; }
inline std::string generator_name(int epoch) { return "gen_epoch_" + std::to_string(epoch) + ".mlp"; }

inline Json diagnostics_json(const Diagnostics& d) {
  return {{"d_loss", d.d_loss}, {"g_loss", d.g_loss}, {"fake_vs_real_acc", d.fake_vs_real_acc}};
}

/// Discriminator snapshot with everything needed to score raw features.
inline std::string encode_checkpoint(const Checkpoint& ck, const CheckpointStore& store, Json extra = Json::object()) {
  Json meta;
  meta["kind"] = "discriminator";
  meta["epoch"] = ck.epoch;
  meta["latent_dim"] = store.latent_dim;
  meta["scaler"] = store.scaler.to_json();
  meta["diagnostics"] = diagnostics_json(ck.diagnostics);
  for (const auto& [k, v] : extra.items()) meta[k] = v;
  return nn::encode_mlp(ck.discriminator, meta);
}

inline void run_train(const Json& args, RunRecorder& rec, std::ostream& log) {
  const std::string mode = args.at("mode").get<std::string>();
  const std::string data = args.at("data").get<std::string>();
  const TrainConfig cfg = nlohmann::json(args.at("config")).get<TrainConfig>();

  const FeatureDataset closed = rec.load_dataset(data_file(data, "closed_train"));
  std::optional<FeatureDataset> open;
  const std::string open_path = data_file(data, "open_train");
  if (mode == "opengan" || mode == "cls") {
    open = rec.load_dataset(open_path);
    if (open->empty()) throw Error("mode " + mode + " needs open-train rows but '" + open_path + "' is empty");
  } else if (fs::exists(open_path)) {
    const FeatureDataset ignored = rec.load_dataset(open_path);
    if (!ignored.empty())
      log << "warning: mode opengan0 ignores the " << ignored.count()
          << " open_train rows for training; they remain usable for validation\n";
  }

  const CheckpointStore store = train(cfg, closed, open ? &*open : nullptr);

  Json model;
  model["mode"] = mode;
  model["feat_dim"] = closed.dim;
  model["latent_dim"] = store.latent_dim;
  model["scaler"] = store.scaler.to_json();
  model["config"] = nlohmann::json(cfg);
  auto list = Json::array();
  for (const auto& ck : store.checkpoints) {
    rec.write(checkpoint_name(ck.epoch), encode_checkpoint(ck, store));
    Json entry{{"epoch", ck.epoch}, {"discriminator", checkpoint_name(ck.epoch)}};
    if (ck.generator) {
      rec.write(generator_name(ck.epoch),
                nn::encode_mlp(*ck.generator, Json{{"kind", "generator"}, {"epoch", ck.epoch}}));
      entry["generator"] = generator_name(ck.epoch);
    }
    list.push_back(entry);
  }
  model["checkpoints"] = list;
  rec.write("model.json", model.dump(2) + "\n");
  rec.write("diag.csv", history_csv(store));
  const auto& last = store.history.back();
  log << "trained " << cfg.epochs << " epochs, " << store.checkpoints.size() << " checkpoints; final d_loss "
      << format_real(last.d_loss) << "\n";
}

/// Rebuilds a checkpoint store from a `train` output directory.
inline CheckpointStore load_checkpoint_dir(const std::string& dir, RunRecorder& rec,
                                           std::vector<std::string>* files = nullptr) {
  const auto model = Json::parse(rec.read((fs::path(dir) / "model.json").string()));
  CheckpointStore store;
  store.scaler = FeatureScaler::from_json(model.at("scaler"));
  store.latent_dim = model.at("latent_dim").get<int>();
  for (const auto& e : model.at("checkpoints")) {
    const std::string dname = e.at("discriminator").get<std::string>();
    auto dec = nn::decode_mlp(rec.read((fs::path(dir) / dname).string()));
    Checkpoint ck;
    ck.epoch = e.at("epoch").get<int>();
    ck.discriminator = std::move(dec.net);
    if (dec.meta.contains("diagnostics")) {
      const auto& d = dec.meta.at("diagnostics");
      ck.diagnostics = {d.at("d_loss").get<double>(), d.at("g_loss").get<double>(),
                        d.at("fake_vs_real_acc").get<double>()};
    }
    if (e.contains("generator"))
      ck.generator = nn::decode_mlp(rec.read((fs::path(dir) / e.at("generator").get<std::string>()).string())).net;
    store.history.push_back(ck.diagnostics);
    store.checkpoints.push_back(std::move(ck));
    if (files) files->push_back(dname);
  }
  if (store.empty()) throw Error("no checkpoints listed in '" + dir + "/model.json'");
  return store;
}

// ---------------------------------------------------------------------------
// select
// ---------------------------------------------------------------------------

inline Json resolve_select_args(const std::string& ckpt_dir, const std::string& data_dir, const Json& file,
                                const Json& flags) {
  Json a{{"checkpoints", ckpt_dir}, {"data", data_dir}, {"seed", 0}, {"diagnostic_samples", 64}};
  a = merge(merge(a, file), flags);
  return a;
}

inline void run_select(const Json& args, RunRecorder& rec, std::ostream& log) {
  const std::string dir = args.at("checkpoints").get<std::string>();
  const std::string data = args.at("data").get<std::string>();
  std::vector<std::string> files;
  const CheckpointStore store = load_checkpoint_dir(dir, rec, &files);
  const FeatureDataset closed_train = rec.load_dataset(data_file(data, "closed_train"));
  const FeatureDataset val_closed = rec.load_dataset(data_file(data, "closed_val"));
  const FeatureDataset val_open = rec.load_dataset(data_file(data, "open_val"));
  if (val_open.empty()) throw Error("open validation needs outlier rows but open_val is empty");

  const Selection sel = select_discriminator(store, val_closed, val_open);
  for (const auto& [e, a] : sel.report.val_auroc_per_epoch) require_finite(a, "validation AUROC");
  Json report = sel.report.to_json();
  report["chosen_checkpoint"] = files[sel.index];
  rec.write("selection.json", report.dump(2) + "\n");
  rec.write("chosen.mlp", read_file((fs::path(dir) / files[sel.index]).string()));
  const auto rows = diagnostics_table(store, closed_train, val_closed, val_open, args.at("seed").get<std::uint64_t>(),
                                      args.at("diagnostic_samples").get<int>());
  rec.write("diagnostics.csv", diagnostics_table_csv(rows));
  log << "chosen epoch " << sel.report.chosen_epoch << " (validation AUROC "
      << format_auroc(sel.report.chosen_auroc()) << ")\n";
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& eval_methods() {
  static const std::vector<std::string> m{"opengan", "cls", "msp", "entropy", "knn", "centroid", "gdm", "gmm"};
  return m;
}

inline Json resolve_eval_args(const std::string& method, const std::string& data_dir, const std::string& model,
                              const Json& file, const Json& flags) {
  if (std::find(eval_methods().begin(), eval_methods().end(), method) == eval_methods().end())
    throw Error("unknown method '" + method + "'");
  if ((method == "opengan" || method == "cls") && model.empty())
    throw Error("method " + method + " needs --model (a discriminator checkpoint)");
  Json a{{"method", method},        {"data", data_dir}, {"model", model},
         {"seed", 0},               {"knn_k", 1},       {"f1_thresholds", 101},
         {"debug_random_scores", false}};
  a = merge(merge(a, file), flags);
  baselines::GmmConfig g;
  if (a.contains("gmm")) from_json(nlohmann::json(a.at("gmm")), g);
  a["gmm"] = nlohmann::json(g);
  if (a.at("knn_k").get<int>() < 1) throw Error("knn_k must be >= 1");
  if (a.at("f1_thresholds").get<int>() < 1) throw Error("f1_thresholds must be >= 1");
  return a;
}

inline void run_eval(const Json& args, RunRecorder& rec, std::ostream& log) {
  const std::string method = args.at("method").get<std::string>();
  const std::string data = args.at("data").get<std::string>();
  const auto seed = args.at("seed").get<std::uint64_t>();
  const FeatureDataset closed_test = rec.load_dataset(data_file(data, "closed_test"));
  const FeatureDataset open_test = rec.load_dataset(data_file(data, "open_test"));
  if (open_test.empty())
    throw Error("open_test has no rows; AUROC needs at least one open and one closed example");
  if (closed_test.empty())
    throw Error("closed_test has no rows; AUROC needs at least one open and one closed example");
  const FeatureDataset all = concat(closed_test, open_test);

  std::optional<FeatureDataset> closed_train;
  auto need_train = [&]() -> const FeatureDataset& {
    if (!closed_train) closed_train = rec.load_dataset(data_file(data, "closed_train"));
    return *closed_train;
  };

  Vector scores;
  if (args.at("debug_random_scores").get<bool>()) {
    std::mt19937_64 rng(derive_seed(seed, "debug-random-scores"));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    scores.resize(static_cast<Eigen::Index>(all.count()));
    for (Eigen::Index i = 0; i < scores.size(); ++i) scores(i) = u(rng);
    log << "warning: debug random scores replace the " << method << " scorer\n";
  } else if (method == "opengan" || method == "cls") {
    const auto dec = nn::decode_mlp(rec.read(args.at("model").get<std::string>()));
    if (!dec.meta.contains("scaler")) throw Error("model checkpoint has no feature scaler in its metadata");
    const FeatureScaler scaler = FeatureScaler::from_json(dec.meta.at("scaler"));
    scores = discriminator_open_scores(dec.net, scaler.apply(all.rows));
  } else if (method == "msp" || method == "entropy") {
    if (!all.logits) throw Error("method " + method + " needs logits but the test files have none");
    scores = method == "msp" ? baselines::msp_scores(*all.logits) : baselines::entropy_scores(*all.logits);
  } else if (method == "knn") {
    scores = baselines::knn_scores(need_train().rows, all.rows, args.at("knn_k").get<int>());
  } else if (method == "centroid") {
    scores = baselines::centroid_scores(need_train(), all.rows);
  } else if (method == "gdm") {
    scores = baselines::gdm_scores(baselines::gdm_fit(need_train()), all.rows);
  } else if (method == "gmm") {
    auto g = nlohmann::json(args.at("gmm")).get<baselines::GmmConfig>();
    g.seed = derive_seed(seed, "gmm");
    scores = baselines::gmm_scores(baselines::gmm_fit(need_train(), g), all.rows);
  } else {
    throw Error("unknown method '" + method + "'");
  }
  if (!scores.allFinite()) throw Error("scorer produced non-finite scores");

  const std::vector<bool> open = all.open_mask();
  ScoreVector sv(std::vector<double>(scores.data(), scores.data() + scores.size()), open);
  const double a = auroc(sv);
  const auto roc = roc_curve(sv);

  // K-way predictions for the F1 sweep: logits when present, else nearest centroid.
  const std::vector<int> kway = all.logits ? baselines::argmax_rows(*all.logits)
                                           : baselines::centroid_predict(need_train(), all.rows);
  const F1Sweep f1 = f1_sweep(sv.scores, kway, all.labels, args.at("f1_thresholds").get<int>(), all.k_classes);
  require_finite(a, "AUROC");
  require_finite(f1.best_f1, "F1");

  Json metrics;
  metrics["method"] = method;
  metrics["auroc"] = a;
  metrics["best_f1"] = f1.best_f1;
  metrics["threshold"] = f1.best_threshold;
  metrics["n_closed"] = sv.n_closed();
  metrics["n_open"] = sv.n_open();
  rec.write("metrics.json", metrics.dump(2) + "\n");
  rec.write("roc.csv", roc_csv(roc));
  rec.write("f1.csv", f1_csv(f1));
  std::string s = "index,is_open,score\n";
  for (std::size_t i = 0; i < sv.size(); ++i)
    s += std::to_string(i) + "," + (sv.is_open[i] ? "1" : "0") + "," + format_real(sv.scores[i]) + "\n";
  rec.write("scores.csv", s);
  log << method << " AUROC " << format_auroc(a) << "\n";
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

inline std::vector<std::string> check_methods(const std::vector<std::string>& methods) {
  if (methods.empty()) throw Error("bench: no methods requested");
  for (const auto& m : methods)
    if (std::find(protocols::known_methods().begin(), protocols::known_methods().end(), m) ==
        protocols::known_methods().end())
      throw Error("bench: unknown method '" + m + "'");
  return methods;
}

inline void apply_epochs(protocols::MethodOptions& o, int epochs) {
  if (epochs < 1) throw Error("bench: epochs must be >= 1");
  o.cls.epochs = o.opengan.epochs = o.opengan0.epochs = epochs;
}

inline protocols::Setup1Config setup1_from_json(const Json& j) {
  protocols::Setup1Config c;
  c.synth.k_classes = j.value("k_classes", c.synth.k_classes);
  c.synth.dim = j.value("dim", c.synth.dim);
  c.synth.per_class_train = j.value("per_class_train", c.synth.per_class_train);
  c.synth.per_class_val = j.value("per_class_val", c.synth.per_class_val);
  c.synth.per_class_test = j.value("per_class_test", c.synth.per_class_test);
  c.synth.closed_mean_radius =
      protocols::separated_radius(c.synth.dim, c.synth.closed_cov_scale, j.value("separation", 3.0));
  c.closed_classes = j.value("closed_classes", c.closed_classes);
  c.repeats = j.value("repeats", c.repeats);
  if (j.contains("methods")) c.methods = j.at("methods").get<std::vector<std::string>>();
  check_methods(c.methods);
  apply_epochs(c.options, j.value("epochs", c.options.cls.epochs));
  c.options.knn_k = j.value("knn_k", c.options.knn_k);
  c.seed = j.value("seed", c.seed);
  if (c.closed_classes < 1 || c.closed_classes >= c.synth.k_classes)
    throw Error("bench setup1: closed_classes must lie in [1, k_classes)");
  return c;
}

inline Json setup1_to_json(const protocols::Setup1Config& c) {
  return {{"k_classes", c.synth.k_classes},
          {"dim", c.synth.dim},
          {"per_class_train", c.synth.per_class_train},
          {"per_class_val", c.synth.per_class_val},
          {"per_class_test", c.synth.per_class_test},
          {"separation", c.synth.closed_mean_radius * std::sqrt(2.0) /
                             std::sqrt(c.synth.dim * c.synth.closed_cov_scale)},
          {"closed_classes", c.closed_classes},
          {"repeats", c.repeats},
          {"methods", c.methods},
          {"epochs", c.options.cls.epochs},
          {"knn_k", c.options.knn_k},
          {"seed", c.seed}};
}

inline protocols::Setup2Config setup2_from_json(const Json& j) {
  protocols::Setup2Config c;
  c.open_train_count = j.value("open_train_count", c.open_train_count);
  c.open_val_count = j.value("open_val_count", c.open_val_count);
  c.open_test_count = j.value("open_test_count", c.open_test_count);
  c.repeats = j.value("repeats", c.repeats);
  if (j.contains("methods")) c.methods = j.at("methods").get<std::vector<std::string>>();
  check_methods(c.methods);
  if (j.contains("train_on")) c.train_on = j.at("train_on").get<std::vector<std::string>>();
  apply_epochs(c.options, j.value("epochs", c.options.cls.epochs));
  c.options.knn_k = j.value("knn_k", c.options.knn_k);
  c.seed = j.value("seed", c.seed);
  return c;
}

inline Json setup2_to_json(const protocols::Setup2Config& c) {
  return {{"open_train_count", c.open_train_count},
          {"open_val_count", c.open_val_count},
          {"open_test_count", c.open_test_count},
          {"repeats", c.repeats},
          {"methods", c.methods},
          {"train_on", c.train_on},
          {"epochs", c.options.cls.epochs},
          {"knn_k", c.options.knn_k},
          {"seed", c.seed}};
}

inline Json resolve_bench_args(const std::string& protocol, const Json& file, const Json& flags, int threads) {
  const Json merged = merge(file, flags);
  Json config;
  if (protocol == "setup1") config = setup1_to_json(setup1_from_json(merged));
  else if (protocol == "setup2") config = setup2_to_json(setup2_from_json(merged));
  else throw Error("unknown protocol '" + protocol + "' (expected setup1 or setup2)");
  return {{"protocol", protocol}, {"threads", threads}, {"config", config}};
}

inline void run_bench(const Json& args, RunRecorder& rec, std::ostream& log) {
  const std::string protocol = args.at("protocol").get<std::string>();
  const int threads = args.value("threads", 1);
  std::string csv;
  if (protocol == "setup1") {
    const auto r = protocols::run_setup1(setup1_from_json(args.at("config")), threads);
    for (std::size_t m = 0; m < r.methods.size(); ++m) {
      require_finite(r.mean(m), r.methods[m] + " AUROC");
      log << r.methods[m] << " mean AUROC " << format_auroc(r.mean(m)) << "\n";
    }
    csv = protocols::setup1_csv(r);
  } else if (protocol == "setup2") {
    const auto r = protocols::run_setup2(setup2_from_json(args.at("config")), threads);
    for (const auto& c : r.cells) {
      require_finite(c.mean(), c.method + " AUROC");
      log << c.method << " " << c.train_on << "->" << c.test_on << " mean AUROC " << format_auroc(c.mean()) << "\n";
    }
    csv = protocols::setup2_csv(r);
  } else {
    throw Error("unknown protocol '" + protocol + "'");
  }
  rec.write("summary.csv", csv);
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

inline Json resolve_sweep_args(const std::string& data_dir, const Json& file, const Json& flags, int threads) {
  Json grid_json = flags.contains("grid") ? flags.at("grid") : file.contains("grid") ? file.at("grid") : Json();
  std::vector<double> grid = grid_json.is_null() ? default_lambda_grid() : grid_json.get<std::vector<double>>();
  Json file_cfg = as_object(file), flag_cfg = as_object(flags);
  file_cfg.erase("grid");
  flag_cfg.erase("grid");
  TrainConfig c = TrainConfig::opengan();
  from_json(nlohmann::json(file_cfg), c);
  from_json(nlohmann::json(flag_cfg), c);
  if (c.lambda_o == 0) throw Error("sweep needs lambda_o > 0 (it tunes OpenGAN with open-train data)");
  if (grid.empty()) throw Error("sweep: empty lambda_g grid");
  return {{"data", data_dir}, {"threads", threads}, {"grid", grid}, {"config", nlohmann::json(c)}};
}

inline void run_sweep(const Json& args, RunRecorder& rec, std::ostream& log) {
  const std::string data = args.at("data").get<std::string>();
  const TrainConfig base = nlohmann::json(args.at("config")).get<TrainConfig>();
  const auto grid = args.at("grid").get<std::vector<double>>();
  SplitData split;
  split.closed_train = rec.load_dataset(data_file(data, "closed_train"));
  split.open_train = rec.load_dataset(data_file(data, "open_train"));
  split.val_closed = rec.load_dataset(data_file(data, "closed_val"));
  split.val_open = rec.load_dataset(data_file(data, "open_val"));
  const SweepResult r = lambda_sweep(grid, base, split, args.value("threads", 1));
  for (const auto& [l, a] : r.report.sweep_table) require_finite(a, "validation AUROC");
  rec.write("selection.json", r.report.to_json().dump(2) + "\n");
  rec.write("sweep.csv", r.report.sweep_csv());
  rec.write("chosen.mlp", encode_checkpoint(r.chosen_store.checkpoints[r.chosen_index], r.chosen_store,
                                            Json{{"lambda_g", *r.report.chosen_lambda_g}}));
  log << "chosen lambda_g " << *r.report.chosen_lambda_g << ", epoch " << r.report.chosen_epoch
      << " (validation AUROC " << format_auroc(r.report.chosen_auroc()) << ")\n";
}

// ---------------------------------------------------------------------------
// dispatch and replay
// ---------------------------------------------------------------------------

/// Runs `command` with resolved `args`, writing outputs and manifest.json
/// into `out_dir`. Returns the manifest.
inline Json execute(const std::string& command, const Json& args, const std::string& out_dir,
                    std::ostream& log = std::cerr) {
  RunRecorder rec(out_dir);
  if (command == "synth") run_synth(args, rec, log);
  else if (command == "train") run_train(args, rec, log);
  else if (command == "select") run_select(args, rec, log);
  else if (command == "eval") run_eval(args, rec, log);
  else if (command == "bench") run_bench(args, rec, log);
  else if (command == "sweep") run_sweep(args, rec, log);
  else throw Error("unknown command '" + command + "'");
  Json m = rec.manifest(command, args);
  write_file((fs::path(out_dir) / "manifest.json").string(), m.dump(2) + "\n");
  return m;
}

/// Replays a manifest into `out_dir`. Inputs must still match their recorded
/// digests, and every output must reproduce its recorded digest.
inline Json rerun(const std::string& manifest_path, const std::string& out_dir, std::ostream& log = std::cerr) {
  const Json m = Json::parse(read_file(manifest_path));
  for (const auto& [path, digest] : m.at("inputs").items())
    if (digest_file(path) != digest.get<std::string>())
      throw Error("input '" + path + "' changed since the recorded run");
  const Json fresh = execute(m.at("command").get<std::string>(), m.at("args"), out_dir, log);
  std::vector<std::string> mismatched;
  for (const auto& [name, digest] : m.at("outputs").items())
    if (!fresh.at("outputs").contains(name) || fresh.at("outputs").at(name) != digest) mismatched.push_back(name);
  if (fresh.at("outputs").size() != m.at("outputs").size()) mismatched.push_back("(output set)");
  if (!mismatched.empty()) {
    std::string list;
    for (const auto& n : mismatched) list += " " + n;
    throw Error("rerun differs from the recorded run:" + list);
  }
  log << "rerun reproduced " << m.at("outputs").size() << " outputs\n";
  return fresh;
}

}  // namespace opengan::cli
