#pragma once

#include "opengan/common.hpp"

#include <algorithm>
#include <numeric>
#include <utility>

namespace opengan {

/// Open-set scores (higher = more open) with ground truth.
struct ScoreVector {
  std::vector<double> scores;
  std::vector<bool> is_open;

  ScoreVector() = default;
  ScoreVector(std::vector<double> s, std::vector<bool> o) : scores(std::move(s)), is_open(std::move(o)) {
    if (scores.size() != is_open.size()) throw Error("ScoreVector: scores and labels differ in length");
  }

  /// Closed-set scores followed by open-set scores.
  static ScoreVector from_split(const Vector& closed, const Vector& open) {
    ScoreVector sv;
    sv.scores.assign(closed.data(), closed.data() + closed.size());
    sv.scores.insert(sv.scores.end(), open.data(), open.data() + open.size());
    sv.is_open.assign(closed.size(), false);
    sv.is_open.insert(sv.is_open.end(), open.size(), true);
    return sv;
  }

  std::size_t size() const { return scores.size(); }
  std::size_t n_open() const { return static_cast<std::size_t>(std::count(is_open.begin(), is_open.end(), true)); }
  std::size_t n_closed() const { return size() - n_open(); }

  void require_both_classes() const {
    if (scores.size() != is_open.size()) throw Error("ScoreVector: scores and labels differ in length");
    if (n_open() == 0 || n_closed() == 0)
      throw Error("AUROC needs at least one open and one closed example (got " + std::to_string(n_open()) +
                  " open, " + std::to_string(n_closed()) + " closed)");
  }
};

/// Mann-Whitney AUROC: P(open score > closed score) with ties counted 1/2.
/// O(n log n) via midranks.
inline double auroc(const ScoreVector& sv) {
  sv.require_both_classes();
  const std::size_t n = sv.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sv.scores[a] < sv.scores[b]; });
  double rank_sum_open = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    std::size_t opens = 0;
    while (j < n && sv.scores[order[j]] == sv.scores[order[i]]) opens += sv.is_open[order[j++]];
    // 1-based ranks i+1..j share the midrank (i+1+j)/2.
    rank_sum_open += static_cast<double>(opens) * static_cast<double>(i + 1 + j) / 2.0;
    i = j;
  }
  const double n_open = static_cast<double>(sv.n_open());
  const double n_closed = static_cast<double>(sv.n_closed());
  const double u = rank_sum_open - n_open * (n_open + 1) / 2.0;
  return u / (n_open * n_closed);
}

struct RocPoint {
  double fpr = 0;
  double tpr = 0;
};

/// ROC points at every distinct threshold, from (0,0) to (1,1).
inline std::vector<RocPoint> roc_curve(const ScoreVector& sv) {
  sv.require_both_classes();
  const std::size_t n = sv.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sv.scores[a] > sv.scores[b]; });
  const double n_open = static_cast<double>(sv.n_open());
  const double n_closed = static_cast<double>(sv.n_closed());
  std::vector<RocPoint> pts{{0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && sv.scores[order[j]] == sv.scores[order[i]]) {
      sv.is_open[order[j]] ? ++tp : ++fp;
      ++j;
    }
    pts.push_back({static_cast<double>(fp) / n_closed, static_cast<double>(tp) / n_open});
    i = j;
  }
  return pts;
}

inline double trapezoid_area(const std::vector<RocPoint>& pts) {
  double area = 0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    area += (pts[i].fpr - pts[i - 1].fpr) * (pts[i].tpr + pts[i - 1].tpr) / 2.0;
  return area;
}

/// Macro F1 over the K closed classes plus the open class. A row is
/// predicted open when its score exceeds `threshold`, otherwise it takes its
/// K-way prediction. A class absent from both truth and prediction scores
/// F1 = 1. K defaults to one past the largest class index seen.
inline double macro_f1(const std::vector<double>& open_scores, const std::vector<int>& kway_pred,
                       const std::vector<int>& labels, double threshold, int k_classes = -1) {
  if (open_scores.size() != kway_pred.size() || open_scores.size() != labels.size())
    throw Error("macro_f1: length mismatch");
  if (k_classes < 0) {
    k_classes = 0;
    for (int p : kway_pred) k_classes = std::max(k_classes, p + 1);
    for (int l : labels) k_classes = std::max(k_classes, l + 1);
  }
  // Index k_classes is the open class.
  std::vector<double> tp(k_classes + 1, 0), fp(k_classes + 1, 0), fn(k_classes + 1, 0);
  auto slot = [&](int c) {
    if (c < 0) return k_classes;
    if (c >= k_classes) throw Error("macro_f1: class index " + std::to_string(c) + " >= K");
    return c;
  };
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int pred = open_scores[i] > threshold ? k_classes : slot(kway_pred[i]);
    const int truth = slot(labels[i]);
    if (pred == truth) {
      tp[truth] += 1;
    } else {
      fp[pred] += 1;
      fn[truth] += 1;
    }
  }
  double sum = 0;
  for (int c = 0; c <= k_classes; ++c) {
    const double denom = 2 * tp[c] + fp[c] + fn[c];
    sum += denom == 0 ? 1.0 : 2 * tp[c] / denom;
  }
  return sum / (k_classes + 1);
}

struct F1Sweep {
  double best_threshold = 0;
  double best_f1 = 0;
  std::vector<std::pair<double, double>> curve;  // (threshold, f1), ascending thresholds
};

/// Evaluates macro_f1 at `n_thresholds` score quantiles (evenly spaced
/// levels from the minimum to the maximum score) and returns the argmax,
/// ties going to the smaller threshold.
inline F1Sweep f1_sweep(const std::vector<double>& open_scores, const std::vector<int>& kway_pred,
                        const std::vector<int>& labels, int n_thresholds, int k_classes = -1) {
  if (n_thresholds < 1) throw Error("f1_sweep: n_thresholds must be >= 1");
  if (open_scores.empty()) throw Error("f1_sweep: no scores");
  std::vector<double> sorted = open_scores;
  std::sort(sorted.begin(), sorted.end());
  const double last = static_cast<double>(sorted.size() - 1);
  F1Sweep out;
  for (int i = 0; i < n_thresholds; ++i) {
    const double level = n_thresholds == 1 ? 0.5 : static_cast<double>(i) / (n_thresholds - 1);
    const double t = sorted[static_cast<std::size_t>(std::llround(level * last))];
    const double f1 = macro_f1(open_scores, kway_pred, labels, t, k_classes);
    out.curve.emplace_back(t, f1);
    if (i == 0 || f1 > out.best_f1) {
      out.best_f1 = f1;
      out.best_threshold = t;
    }
  }
  return out;
}

inline std::string roc_csv(const std::vector<RocPoint>& pts) {
  std::string s = "fpr,tpr\n";
  for (const auto& p : pts) s += format_real(p.fpr) + "," + format_real(p.tpr) + "\n";
  return s;
}

inline std::string f1_csv(const F1Sweep& sw) {
  std::string s = "threshold,f1\n";
  for (const auto& [t, f] : sw.curve) s += format_real(t) + "," + format_real(f) + "\n";
  return s;
}

inline std::string format_auroc(double a) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.4f", a);
  return buf;
}

}  // namespace opengan
