#pragma once

#include "opengan/trainer.hpp"

#include <atomic>
#include <thread>

namespace opengan {

struct SelectionReport {
  int chosen_epoch = 0;
  std::vector<std::pair<int, double>> val_auroc_per_epoch;
  std::optional<double> chosen_lambda_g;
  std::vector<std::pair<double, double>> sweep_table;  // (lambda_g, best validation AUROC)

  double chosen_auroc() const {
    for (const auto& [e, a] : val_auroc_per_epoch)
      if (e == chosen_epoch) return a;
    throw Error("SelectionReport: chosen epoch missing from per-epoch list");
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["chosen_epoch"] = chosen_epoch;
    j["chosen_val_auroc"] = chosen_auroc();
    auto per = nlohmann::ordered_json::array();
    for (const auto& [e, a] : val_auroc_per_epoch) per.push_back({{"epoch", e}, {"auroc", a}});
    j["val_auroc_per_epoch"] = per;
    if (chosen_lambda_g) j["chosen_lambda_g"] = *chosen_lambda_g;
    if (!sweep_table.empty()) {
      auto tab = nlohmann::ordered_json::array();
      for (const auto& [l, a] : sweep_table) tab.push_back({{"lambda_g", l}, {"best_val_auroc", a}});
      j["sweep_table"] = tab;
    }
    return j;
  }

  std::string sweep_csv() const {
    std::string s = "lambda_g,best_val_auroc\n";
    for (const auto& [l, a] : sweep_table) s += format_real(l) + "," + format_real(a) + "\n";
    return s;
  }
};

/// Index of the maximum; ties resolve to the earliest position.
inline std::size_t first_argmax(const std::vector<double>& v) {
  if (v.empty()) throw Error("first_argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

struct Selection {
  SelectionReport report;
  std::size_t index = 0;  // into store.checkpoints
};

/// Open validation: scores every snapshot by open-vs-closed AUROC on the
/// validation split and keeps the best (earliest on ties).
inline Selection select_discriminator(const CheckpointStore& store, const FeatureDataset& val_closed,
                                      const FeatureDataset& val_open) {
  if (store.empty()) throw Error("select_discriminator: empty checkpoint store");
  if (val_closed.empty() || val_open.empty()) throw Error("select_discriminator: empty validation split");
  std::vector<double> aurocs;
  Selection sel;
  for (const auto& ck : store.checkpoints) {
    aurocs.push_back(discriminator_auroc(ck.discriminator, store.scaler, val_closed.rows, val_open.rows));
    sel.report.val_auroc_per_epoch.emplace_back(ck.epoch, aurocs.back());
  }
  sel.index = first_argmax(aurocs);
  sel.report.chosen_epoch = store.checkpoints[sel.index].epoch;
  return sel;
}

struct SplitData {
  FeatureDataset closed_train;
  std::optional<FeatureDataset> open_train;
  FeatureDataset val_closed;
  FeatureDataset val_open;
};

/// Grid 0.05, 0.10, ..., 0.90.
inline std::vector<double> default_lambda_grid() {
  std::vector<double> g;
  for (int i = 1; i <= 18; ++i) g.push_back(0.05 * i);
  return g;
}

/// Runs fn(0..n-1) on up to `threads` workers; results stay in index order.
template <typename Fn>
auto parallel_map(std::size_t n, int threads, Fn fn) -> std::vector<decltype(fn(std::size_t{}))> {
  using R = decltype(fn(std::size_t{}));
  std::vector<std::optional<R>> slots(n);
  std::vector<std::exception_ptr> errors(n);
  const std::size_t workers = std::clamp<std::size_t>(threads < 1 ? 1 : threads, 1, std::max<std::size_t>(n, 1));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next++) < n;) {
      try {
        slots[i].emplace(fn(i));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<R> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

struct SweepResult {
  SelectionReport report;
  CheckpointStore chosen_store;
  std::size_t chosen_index = 0;
};

/// Retrains once per lambda_g value (seed derived from the base seed and
/// grid index), applies open validation to each run and keeps the value
/// whose selected checkpoint scores highest (smaller lambda_g on ties).
inline SweepResult lambda_sweep(const std::vector<double>& grid, const TrainConfig& base, const SplitData& data,
                                int threads = 1) {
  if (grid.empty()) throw Error("lambda_sweep: empty grid");
  for (double l : grid)
    if (!(l >= 0)) throw Error("lambda_sweep: grid values must be >= 0");

  struct Run {
    CheckpointStore store;
    Selection sel;
  };
  auto runs = parallel_map(grid.size(), threads, [&](std::size_t i) {
    TrainConfig cfg = base;
    cfg.lambda_g = grid[i];
    if (cfg.lambda_g == 0) cfg.batch.n_fake = 0;
    else if (cfg.batch.n_fake == 0) cfg.batch.n_fake = cfg.batch.n_open > 0 ? cfg.batch.n_open : cfg.batch.n_closed;
    cfg.seed = derive_seed(base.seed, "lambda-sweep", i);
    try {
      CheckpointStore store = train(cfg, data.closed_train, data.open_train ? &*data.open_train : nullptr);
      Selection sel = select_discriminator(store, data.val_closed, data.val_open);
      return Run{std::move(store), std::move(sel)};
    } catch (const std::exception& e) {
      throw Error("lambda_g=" + format_real(grid[i]) + ": " + e.what());
    }
  });

  // Rank by (auroc desc, lambda asc).
  std::size_t best = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double a = runs[i].sel.report.chosen_auroc(), b = runs[best].sel.report.chosen_auroc();
    if (a > b || (a == b && grid[i] < grid[best])) best = i;
  }
  SweepResult out;
  out.report = runs[best].sel.report;
  out.report.chosen_lambda_g = grid[best];
  for (std::size_t i = 0; i < grid.size(); ++i) out.report.sweep_table.emplace_back(grid[i], runs[i].sel.report.chosen_auroc());
  out.chosen_index = runs[best].sel.index;
  out.chosen_store = std::move(runs[best].store);
  return out;
}

}  // namespace opengan
