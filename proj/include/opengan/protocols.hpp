#pragma once

#include "opengan/baselines.hpp"
#include "opengan/selector.hpp"

#include <map>
#include <numeric>

// Desk-scale emulations of the two image-classification protocols:
//  setup1: K_total synthetic classes, a random subset is closed and the rest
//          open; repeated over random class splits.
//  setup2: closed classes fixed; open-train from one distribution, open-test
//          from several (same and cross distribution).
namespace opengan::protocols {

/// Closed-class radius whose typical inter-mean distance (radius * sqrt 2)
/// is `factor` times a class's RMS radius sqrt(dim * cov_scale).
inline double separated_radius(int dim, double cov_scale, double factor = 3.0) {
  return factor * std::sqrt(dim * cov_scale) / std::sqrt(2.0);
}

struct MethodOptions {
  TrainConfig cls = [] {
    auto c = TrainConfig::cls();
    c.epochs = 30;
    return c;
  }();
  TrainConfig opengan = [] {
    auto c = TrainConfig::opengan();
    c.epochs = 30;
    return c;
  }();
  TrainConfig opengan0 = [] {
    auto c = TrainConfig::opengan0();
    c.epochs = 30;
    return c;
  }();
  int knn_k = 1;
  baselines::GmmConfig gmm;
};

/// Inputs of one open-set evaluation.
struct EvalSplit {
  FeatureDataset closed_train;
  FeatureDataset open_train;  // may be empty
  FeatureDataset closed_val;
  FeatureDataset open_val;
  FeatureDataset closed_test;
  std::vector<FeatureDataset> open_tests;  // one AUROC per entry
};

inline const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> m{"cls", "opengan", "opengan0", "msp", "entropy", "knn", "centroid", "gdm", "gmm"};
  return m;
}

inline bool is_trained_method(const std::string& m) { return m == "cls" || m == "opengan" || m == "opengan0"; }

/// AUROC of `method` against every open test set. CLS and OpenGAN report
/// their last-epoch discriminator; OpenGAN-0 is chosen by open validation.
inline std::vector<double> evaluate_method(const std::string& method, const EvalSplit& s, const MethodOptions& opts,
                                           std::uint64_t seed) {
  std::function<Vector(const FeatureDataset&)> score;
  if (is_trained_method(method)) {
    TrainConfig cfg = method == "cls" ? opts.cls : method == "opengan" ? opts.opengan : opts.opengan0;
    cfg.seed = derive_seed(seed, method);
    const bool uses_open = cfg.lambda_o > 0;
    CheckpointStore store = train(cfg, s.closed_train, uses_open ? &s.open_train : nullptr);
    std::size_t idx = store.checkpoints.size() - 1;
    if (method == "opengan0") idx = select_discriminator(store, s.closed_val, s.open_val).index;
    const nn::Mlp d = store.checkpoints[idx].discriminator;
    const FeatureScaler scaler = store.scaler;
    score = [d, scaler](const FeatureDataset& ds) { return discriminator_open_scores(d, scaler.apply(ds.rows)); };
  } else if (method == "msp") {
    score = [](const FeatureDataset& ds) { return baselines::msp_scores(ds); };
  } else if (method == "entropy") {
    score = [](const FeatureDataset& ds) { return baselines::entropy_scores(ds); };
  } else if (method == "knn") {
    score = [&](const FeatureDataset& ds) { return baselines::knn_scores(s.closed_train.rows, ds.rows, opts.knn_k); };
  } else if (method == "centroid") {
    score = [&](const FeatureDataset& ds) { return baselines::centroid_scores(s.closed_train, ds.rows); };
  } else if (method == "gdm") {
    auto m = baselines::gdm_fit(s.closed_train);
    score = [m](const FeatureDataset& ds) { return baselines::gdm_scores(m, ds.rows); };
  } else if (method == "gmm") {
    auto cfg = opts.gmm;
    cfg.seed = derive_seed(seed, "gmm");
    auto m = baselines::gmm_fit(s.closed_train, cfg);
    score = [m](const FeatureDataset& ds) { return baselines::gmm_scores(m, ds.rows); };
  } else {
    throw Error("unknown method '" + method + "'");
  }
  const Vector closed = score(s.closed_test);
  std::vector<double> out;
  for (const auto& open : s.open_tests) out.push_back(auroc(ScoreVector::from_split(closed, score(open))));
  return out;
}

// ---------------------------------------------------------------------------
// setup1
// ---------------------------------------------------------------------------

struct Setup1Config {
  SynthConfig synth = [] {
    SynthConfig c;
    c.k_classes = 10;
    c.dim = 16;
    c.closed_cov_scale = 1.0;
    c.closed_mean_radius = separated_radius(c.dim, c.closed_cov_scale);
    return c;
  }();
  int closed_classes = 6;
  int repeats = 5;
  std::vector<std::string> methods{"cls", "opengan0", "msp", "entropy", "knn", "centroid", "gdm", "gmm"};
  MethodOptions options;
  std::uint64_t seed = 0;
};

struct Setup1Result {
  std::vector<std::string> methods;
  std::vector<std::vector<double>> auroc;  // [method][repeat]
  std::vector<std::set<int>> splits;

  double mean(std::size_t m) const {
    double s = 0;
    for (double a : auroc[m]) s += a;
    return s / static_cast<double>(auroc[m].size());
  }
};

inline EvalSplit setup1_split(const Setup1Config& cfg, int repeat, std::set<int>* classes_out = nullptr) {
  SynthConfig sc = cfg.synth;
  sc.seed = derive_seed(cfg.seed, "setup1-data", static_cast<std::uint64_t>(repeat));
  const auto b = synth_benchmark(sc);
  const auto classes = choose_closed_classes(sc.k_classes, cfg.closed_classes,
                                             derive_seed(cfg.seed, "setup1-split", static_cast<std::uint64_t>(repeat)));
  if (classes_out) *classes_out = classes;
  EvalSplit s;
  std::tie(s.closed_train, s.open_train) = class_split(b.closed_train, classes);
  std::tie(s.closed_val, s.open_val) = class_split(b.closed_val, classes);
  FeatureDataset open_test;
  std::tie(s.closed_test, open_test) = class_split(b.closed_test, classes);
  s.open_tests.push_back(std::move(open_test));
  return s;
}

inline Setup1Result run_setup1(const Setup1Config& cfg, int threads = 1) {
  if (cfg.repeats < 1) throw Error("setup1: repeats must be >= 1");
  for (const auto& m : cfg.methods)
    if (std::find(known_methods().begin(), known_methods().end(), m) == known_methods().end())
      throw Error("setup1: unknown method '" + m + "'");
  struct Rep {
    std::set<int> classes;
    std::vector<double> aurocs;
  };
  auto reps = parallel_map(static_cast<std::size_t>(cfg.repeats), threads, [&](std::size_t r) {
    Rep rep;
    const EvalSplit s = setup1_split(cfg, static_cast<int>(r), &rep.classes);
    for (const auto& m : cfg.methods)
      rep.aurocs.push_back(evaluate_method(m, s, cfg.options, derive_seed(cfg.seed, "setup1-method", r)).front());
    return rep;
  });
  Setup1Result out;
  out.methods = cfg.methods;
  out.auroc.assign(cfg.methods.size(), {});
  for (const auto& rep : reps) {
    out.splits.push_back(rep.classes);
    for (std::size_t m = 0; m < cfg.methods.size(); ++m) out.auroc[m].push_back(rep.aurocs[m]);
  }
  return out;
}

inline std::string setup1_csv(const Setup1Result& r) {
  std::string s = "method,mean_auroc";
  for (std::size_t i = 0; i < r.splits.size(); ++i) s += ",split" + std::to_string(i);
  s += "\n";
  for (std::size_t m = 0; m < r.methods.size(); ++m) {
    s += r.methods[m] + "," + format_real(r.mean(m));
    for (double a : r.auroc[m]) s += "," + format_real(a);
    s += "\n";
  }
  return s;
}

// ---------------------------------------------------------------------------
// setup2
// ---------------------------------------------------------------------------

/// A named open-set distribution made of one or more Gaussian modes.
struct OpenDistribution {
  std::string name;
  double offset_radius = 16.0;
  double cov_scale = 1.0;
  int modes = 2;
};

struct Setup2Config {
  SynthConfig closed = [] {
    SynthConfig c;
    c.k_classes = 6;
    c.dim = 16;
    c.closed_cov_scale = 1.0;
    c.closed_mean_radius = separated_radius(c.dim, c.closed_cov_scale);
    return c;
  }();
  // A lies far outside the closed classes, B in the gaps near the center,
  // C on the closed-class sphere between classes.
  std::vector<OpenDistribution> distributions{
      {"A", 16.0, 1.0, 2}, {"B", 3.0, 1.0, 2}, {"C", separated_radius(16, 1.0), 1.0, 2}};
  std::vector<std::string> train_on{"A"};
  int open_train_count = 200;
  int open_val_count = 60;
  int open_test_count = 300;
  int repeats = 5;
  std::vector<std::string> methods{"cls", "opengan", "opengan0"};
  MethodOptions options;
  std::uint64_t seed = 0;
};

struct Setup2Cell {
  std::string method;
  std::string train_on;
  std::string test_on;
  std::vector<double> auroc;  // per repeat

  double mean() const {
    double s = 0;
    for (double a : auroc) s += a;
    return s / static_cast<double>(auroc.size());
  }
};

struct Setup2Result {
  std::vector<Setup2Cell> cells;

  const Setup2Cell& cell(const std::string& method, const std::string& train, const std::string& test) const {
    for (const auto& c : cells)
      if (c.method == method && c.train_on == train && c.test_on == test) return c;
    throw Error("setup2: no cell " + method + "/" + train + "/" + test);
  }
};

namespace detail {

inline std::vector<OpenMode> modes_of(const OpenDistribution& d, int index, int total) {
  std::vector<OpenMode> out;
  for (int m = 0; m < d.modes; ++m) {
    const int n = total / d.modes + (m < total % d.modes ? 1 : 0);
    out.push_back({d.offset_radius, d.cov_scale, n, index * 1000 + m});
  }
  return out;
}

}  // namespace detail

inline Setup2Result run_setup2(const Setup2Config& cfg, int threads = 1) {
  if (cfg.repeats < 1) throw Error("setup2: repeats must be >= 1");
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < cfg.distributions.size(); ++i) index[cfg.distributions[i].name] = static_cast<int>(i);
  for (const auto& t : cfg.train_on)
    if (!index.count(t)) throw Error("setup2: unknown train distribution '" + t + "'");

  // One job per (repeat, train distribution).
  const std::size_t jobs = static_cast<std::size_t>(cfg.repeats) * cfg.train_on.size();
  auto results = parallel_map(jobs, threads, [&](std::size_t job) {
    const std::size_t rep = job / cfg.train_on.size();
    const std::string& train_name = cfg.train_on[job % cfg.train_on.size()];
    const int ti = index.at(train_name);
    SynthConfig sc = cfg.closed;
    sc.seed = derive_seed(cfg.seed, "setup2-data", rep);
    sc.open_train = detail::modes_of(cfg.distributions[ti], ti, cfg.open_train_count);
    sc.open_val = detail::modes_of(cfg.distributions[ti], ti, cfg.open_val_count);
    sc.open_test.clear();
    const auto b = synth_benchmark(sc);
    EvalSplit s{b.closed_train, b.open_train, b.closed_val, b.open_val, b.closed_test, {}};
    SynthConfig tc = sc;
    tc.open_train.clear();
    tc.open_val.clear();
    tc.per_class_train = tc.per_class_val = tc.per_class_test = 0;
    for (std::size_t di = 0; di < cfg.distributions.size(); ++di)
      for (const auto& m : detail::modes_of(cfg.distributions[di], static_cast<int>(di), cfg.open_test_count))
        tc.open_test.push_back(m);
    const auto all_open = synth_benchmark(tc).open_test;
    for (std::size_t di = 0; di < cfg.distributions.size(); ++di) {
      std::vector<Eigen::Index> rows(static_cast<std::size_t>(cfg.open_test_count));
      std::iota(rows.begin(), rows.end(), static_cast<Eigen::Index>(di) * cfg.open_test_count);
      FeatureDataset part(all_open.dim, all_open.k_classes);
      part.rows = all_open.rows(rows, Eigen::all);
      part.labels.assign(rows.size(), kOpenLabel);
      part.logits = (*all_open.logits)(rows, Eigen::all);
      s.open_tests.push_back(std::move(part));
    }
    std::vector<std::vector<double>> per_method;
    for (const auto& m : cfg.methods)
      per_method.push_back(evaluate_method(m, s, cfg.options, derive_seed(cfg.seed, "setup2-method", job)));
    return per_method;
  });

  Setup2Result out;
  for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi)
    for (std::size_t t = 0; t < cfg.train_on.size(); ++t)
      for (std::size_t di = 0; di < cfg.distributions.size(); ++di) {
        Setup2Cell c{cfg.methods[mi], cfg.train_on[t], cfg.distributions[di].name, {}};
        for (int rep = 0; rep < cfg.repeats; ++rep)
          c.auroc.push_back(results[static_cast<std::size_t>(rep) * cfg.train_on.size() + t][mi][di]);
        out.cells.push_back(std::move(c));
      }
  return out;
}

inline std::string setup2_csv(const Setup2Result& r) {
  std::string s = "method,train_on,test_on,mean_auroc";
  const std::size_t reps = r.cells.empty() ? 0 : r.cells.front().auroc.size();
  for (std::size_t i = 0; i < reps; ++i) s += ",seed" + std::to_string(i);
  s += "\n";
  for (const auto& c : r.cells) {
    s += c.method + "," + c.train_on + "," + c.test_on + "," + format_real(c.mean());
    for (double a : c.auroc) s += "," + format_real(a);
    s += "\n";
  }
  return s;
}

}  // namespace opengan::protocols
