#pragma once

#include "opengan/data.hpp"

#include <limits>
#include <numbers>

// Statistical open-set scorers. Every scorer returns one value per test row,
// higher meaning more likely open-set.
namespace opengan::baselines {

namespace detail {

inline Matrix softmax_rows(const Matrix& logits) {
  Matrix p = logits;
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    const double m = p.row(r).maxCoeff();
    p.row(r) = (p.row(r).array() - m).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

inline double log_sum_exp(const Vector& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

inline double squared_distance(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) {
  double s = 0;
  for (Eigen::Index d = 0; d < a.cols(); ++d) {
    const double t = a(i, d) - b(j, d);
    s += t * t;
  }
  return s;
}

}  // namespace detail

/// 1 - max softmax probability.
inline Vector msp_scores(const Matrix& logits) {
  if (logits.cols() == 0) throw Error("msp_scores: logits required");
  return (1.0 - detail::softmax_rows(logits).rowwise().maxCoeff().array()).matrix();
}

/// Shannon entropy (nats) of the softmax distribution.
inline Vector entropy_scores(const Matrix& logits) {
  if (logits.cols() == 0) throw Error("entropy_scores: logits required");
  const Matrix p = detail::softmax_rows(logits);
  Vector h(p.rows());
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    double s = 0;
    for (Eigen::Index c = 0; c < p.cols(); ++c)
      if (p(r, c) > 0) s -= p(r, c) * std::log(p(r, c));
    h(r) = s;
  }
  return h;
}

inline Vector msp_scores(const FeatureDataset& ds) {
  if (!ds.logits) throw Error("msp_scores: dataset has no logits");
  return msp_scores(*ds.logits);
}

inline Vector entropy_scores(const FeatureDataset& ds) {
  if (!ds.logits) throw Error("entropy_scores: dataset has no logits");
  return entropy_scores(*ds.logits);
}

/// Euclidean distance to the k-th nearest training row.
inline Vector knn_scores(const Matrix& train, const Matrix& test, int k) {
  if (k < 1 || k > train.rows()) throw Error("knn_scores: k=" + std::to_string(k) + " outside [1, train count]");
  if (train.cols() != test.cols()) throw Error("knn_scores: dimension mismatch");
  Vector out(test.rows());
  std::vector<double> d(static_cast<std::size_t>(train.rows()));
  for (Eigen::Index i = 0; i < test.rows(); ++i) {
    for (Eigen::Index j = 0; j < train.rows(); ++j) d[j] = detail::squared_distance(test, i, train, j);
    std::nth_element(d.begin(), d.begin() + (k - 1), d.end());
    out(i) = std::sqrt(d[k - 1]);
  }
  return out;
}

inline std::vector<Vector> class_means(const FeatureDataset& ds) {
  std::vector<Vector> means(ds.k_classes, Vector::Zero(ds.dim));
  std::vector<int> counts(ds.k_classes, 0);
  for (std::size_t i = 0; i < ds.count(); ++i) {
    const int l = ds.labels[i];
    if (l == kOpenLabel) continue;
    means[l] += ds.rows.row(static_cast<Eigen::Index>(i)).transpose();
    ++counts[l];
  }
  for (int c = 0; c < ds.k_classes; ++c) {
    if (counts[c] == 0) throw Error("class " + std::to_string(c) + " has no training rows");
    means[c] /= counts[c];
  }
  return means;
}

/// Distance to the nearest class mean.
inline Vector centroid_scores(const FeatureDataset& closed_train, const Matrix& test) {
  const auto means = class_means(closed_train);
  Vector out(test.rows());
  for (Eigen::Index i = 0; i < test.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& m : means) best = std::min(best, (test.row(i) - m.transpose()).norm());
    out(i) = best;
  }
  return out;
}

/// Nearest-centroid class prediction, for K-way labels when no logits exist.
inline std::vector<int> centroid_predict(const FeatureDataset& closed_train, const Matrix& test) {
  const auto means = class_means(closed_train);
  std::vector<int> pred(static_cast<std::size_t>(test.rows()));
  for (Eigen::Index i = 0; i < test.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < means.size(); ++c) {
      const double d = (test.row(i) - means[c].transpose()).squaredNorm();
      if (d < best) {
        best = d;
        pred[i] = static_cast<int>(c);
      }
    }
  }
  return pred;
}

inline std::vector<int> argmax_rows(const Matrix& logits) {
  std::vector<int> pred(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::Index c;
    logits.row(r).maxCoeff(&c);
    pred[r] = static_cast<int>(c);
  }
  return pred;
}

inline constexpr double kVarianceFloor = 1e-6;

/// Symmetric matrix with eigenvalues clipped from below, kept factored.
struct FlooredCovariance {
  Matrix whitening;  // Lambda^{-1/2} V^T
  double log_det = 0;
  Matrix covariance;

  static FlooredCovariance from(const Matrix& s, double floor) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(s);
    if (eig.info() != Eigen::Success) throw Error("covariance eigendecomposition failed");
    Vector lam = eig.eigenvalues().cwiseMax(floor);
    if (!lam.allFinite() || (lam.array() <= 0).any()) throw Error("singular covariance after flooring");
    FlooredCovariance f;
    f.whitening = lam.cwiseSqrt().cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
    f.log_det = lam.array().log().sum();
    f.covariance = eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
    return f;
  }

  double mahalanobis_sq(const Vector& diff) const { return (whitening * diff).squaredNorm(); }
};

// ---------------------------------------------------------------------------
// Gaussian discriminant model: class means with one tied covariance.
// ---------------------------------------------------------------------------

struct GdmModel {
  std::vector<Vector> means;
  FlooredCovariance shared;
};

/// Pooled within-class covariance with divisor N - K.
inline GdmModel gdm_fit(const FeatureDataset& closed_train, double floor = kVarianceFloor) {
  GdmModel m;
  m.means = class_means(closed_train);
  const auto n = static_cast<double>(closed_train.count());
  if (n - closed_train.k_classes < 1) throw Error("gdm_fit: need more rows than classes to pool a covariance");
  Matrix scatter = Matrix::Zero(closed_train.dim, closed_train.dim);
  for (std::size_t i = 0; i < closed_train.count(); ++i) {
    const int l = closed_train.labels[i];
    if (l == kOpenLabel) continue;
    const Vector d = closed_train.rows.row(static_cast<Eigen::Index>(i)).transpose() - m.means[l];
    scatter.noalias() += d * d.transpose();
  }
  m.shared = FlooredCovariance::from(scatter / (n - closed_train.k_classes), floor);
  return m;
}

/// Minimum Mahalanobis distance over class means.
inline Vector gdm_scores(const GdmModel& m, const Matrix& test) {
  Vector out(test.rows());
  for (Eigen::Index i = 0; i < test.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& mu : m.means) best = std::min(best, m.shared.mahalanobis_sq(test.row(i).transpose() - mu));
    out(i) = std::sqrt(best);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Class-conditional Gaussian mixtures fit by EM.
// ---------------------------------------------------------------------------

enum class CovStructure { kSpherical, kDiagonal, kFull };

inline CovStructure parse_cov_structure(const std::string& s) {
  if (s == "spherical" || s == "scalar") return CovStructure::kSpherical;
  if (s == "diagonal" || s == "diag") return CovStructure::kDiagonal;
  if (s == "full") return CovStructure::kFull;
  throw Error("unknown covariance structure '" + s + "'");
}

inline std::string to_string(CovStructure c) {
  switch (c) {
    case CovStructure::kSpherical: return "spherical";
    case CovStructure::kDiagonal: return "diagonal";
    default: return "full";
  }
}

struct GmmConfig {
  int components = 1;
  CovStructure structure = CovStructure::kFull;
  bool l2_normalize = true;
  int pca_dim = 50;  // 0 disables PCA; clamped to the data's dim and count
  double variance_floor = kVarianceFloor;
  int max_iterations = 200;
  double tolerance = 1e-6;  // relative log-likelihood change
  int max_restarts = 3;
  std::uint64_t seed = 0;
};

inline void to_json(nlohmann::json& j, const GmmConfig& c) {
  j = {{"components", c.components},
       {"structure", to_string(c.structure)},
       {"l2_normalize", c.l2_normalize},
       {"pca_dim", c.pca_dim},
       {"variance_floor", c.variance_floor},
       {"max_iterations", c.max_iterations},
       {"tolerance", c.tolerance},
       {"max_restarts", c.max_restarts},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, GmmConfig& c) {
  c.components = j.value("components", c.components);
  if (j.contains("structure")) c.structure = parse_cov_structure(j.at("structure").get<std::string>());
  c.l2_normalize = j.value("l2_normalize", c.l2_normalize);
  c.pca_dim = j.value("pca_dim", c.pca_dim);
  c.variance_floor = j.value("variance_floor", c.variance_floor);
  c.max_iterations = j.value("max_iterations", c.max_iterations);
  c.tolerance = j.value("tolerance", c.tolerance);
  c.max_restarts = j.value("max_restarts", c.max_restarts);
  c.seed = j.value("seed", c.seed);
}

struct GaussianComponent {
  double weight = 1;
  Vector mean;
  FlooredCovariance cov;

  double log_density(const Vector& x) const {
    const auto d = static_cast<double>(mean.size());
    return -0.5 * (d * std::log(2 * std::numbers::pi) + cov.log_det + cov.mahalanobis_sq(x - mean));
  }
};

struct ClassMixture {
  std::vector<GaussianComponent> components;
  std::vector<double> log_likelihood_trace;  // per EM iteration, total over rows

  double log_density(const Vector& x) const {
    Vector terms(static_cast<Eigen::Index>(components.size()));
    for (std::size_t k = 0; k < components.size(); ++k)
      terms(k) = std::log(components[k].weight) + components[k].log_density(x);
    return detail::log_sum_exp(terms);
  }
};

struct GmmModel {
  FeaturePipeline pipeline;
  CovStructure structure = CovStructure::kFull;
  double variance_floor = kVarianceFloor;
  std::vector<ClassMixture> classes;
};

namespace detail {

// Constrained M-step: the floored covariance is the maximizer of the
// expected complete log-likelihood over covariances with eigenvalues >= floor.
inline FlooredCovariance floored_cov(const Matrix& scatter, CovStructure structure, double floor) {
  const auto d = scatter.rows();
  switch (structure) {
    case CovStructure::kSpherical: {
      const double v = std::max(scatter.trace() / static_cast<double>(d), floor);
      return FlooredCovariance::from(Matrix::Identity(d, d) * v, floor);
    }
    case CovStructure::kDiagonal:
      return FlooredCovariance::from(Matrix(scatter.diagonal().cwiseMax(floor).asDiagonal()), floor);
    default:
      return FlooredCovariance::from((scatter + scatter.transpose()) / 2, floor);
  }
}

struct EmCollapse {};

inline ClassMixture m_step(const Matrix& x, const Matrix& resp, CovStructure structure, double floor) {
  ClassMixture mix;
  const auto n = static_cast<double>(x.rows());
  for (Eigen::Index k = 0; k < resp.cols(); ++k) {
    const double nk = resp.col(k).sum();
    if (!(nk > 1e-10 * n)) throw EmCollapse{};
    GaussianComponent c;
    c.weight = nk / n;
    c.mean = (x.transpose() * resp.col(k)) / nk;
    const Matrix centered = x.rowwise() - c.mean.transpose();
    const Matrix scatter = (centered.transpose() * resp.col(k).asDiagonal() * centered) / nk;
    c.cov = floored_cov(scatter, structure, floor);
    mix.components.push_back(std::move(c));
  }
  return mix;
}

// k-means++ seeding followed by a hard assignment to the nearest seed.
inline Matrix kmeanspp_responsibilities(const Matrix& x, int k, std::mt19937_64& rng) {
  const Eigen::Index n = x.rows();
  std::vector<Eigen::Index> centers;
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  centers.push_back(first(rng));
  std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  while (static_cast<int>(centers.size()) < k) {
    for (Eigen::Index i = 0; i < n; ++i) d2[i] = std::min(d2[i], squared_distance(x, i, x, centers.back()));
    double total = 0;
    for (double v : d2) total += v;
    Eigen::Index pick = 0;
    if (total > 0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double r = u(rng);
      for (pick = 0; pick < n - 1; ++pick) {
        r -= d2[pick];
        if (r < 0) break;
      }
    } else {
      pick = first(rng);
    }
    centers.push_back(pick);
  }
  Matrix resp = Matrix::Zero(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    int best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
      const double d = squared_distance(x, i, x, centers[c]);
      if (d < bd) {
        bd = d;
        best = c;
      }
    }
    resp(i, best) = 1.0;
  }
  return resp;
}

inline ClassMixture fit_class(const Matrix& x, const GmmConfig& cfg, std::mt19937_64& rng) {
  Matrix resp = kmeanspp_responsibilities(x, cfg.components, rng);
  ClassMixture mix = m_step(x, resp, cfg.structure, cfg.variance_floor);
  const Eigen::Index n = x.rows();
  for (int it = 0; it < cfg.max_iterations; ++it) {
    // E-step under the current parameters.
    double ll = 0;
    Vector terms(cfg.components);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vector xi = x.row(i).transpose();
      for (int k = 0; k < cfg.components; ++k)
        terms(k) = std::log(mix.components[k].weight) + mix.components[k].log_density(xi);
      const double lse = log_sum_exp(terms);
      ll += lse;
      resp.row(i) = (terms.array() - lse).exp().transpose();
    }
    const bool converged = !mix.log_likelihood_trace.empty() &&
                           std::abs(ll - mix.log_likelihood_trace.back()) <
                               cfg.tolerance * std::abs(mix.log_likelihood_trace.back());
    auto trace = std::move(mix.log_likelihood_trace);
    trace.push_back(ll);
    if (converged) {
      mix.log_likelihood_trace = std::move(trace);
      break;
    }
    mix = m_step(x, resp, cfg.structure, cfg.variance_floor);
    mix.log_likelihood_trace = std::move(trace);
  }
  return mix;
}

}  // namespace detail

/// Per-class EM after the preprocessing chain (L2 normalization, then PCA),
/// each stage optional.
inline GmmModel gmm_fit(const FeatureDataset& closed_train, const GmmConfig& cfg) {
  if (cfg.components < 1) throw Error("gmm_fit: components must be >= 1");
  GmmModel m;
  m.structure = cfg.structure;
  m.variance_floor = cfg.variance_floor;
  m.pipeline = FeaturePipeline::fit(closed_train.rows, cfg.l2_normalize, cfg.pca_dim);
  const Matrix x = m.pipeline.apply(closed_train.rows);
  for (int c = 0; c < closed_train.k_classes; ++c) {
    std::vector<Eigen::Index> idx;
    for (std::size_t i = 0; i < closed_train.count(); ++i)
      if (closed_train.labels[i] == c) idx.push_back(static_cast<Eigen::Index>(i));
    if (static_cast<int>(idx.size()) < cfg.components)
      throw Error("gmm_fit: class " + std::to_string(c) + " has " + std::to_string(idx.size()) + " rows, fewer than " +
                  std::to_string(cfg.components) + " components");
    const Matrix xc = x(idx, Eigen::all);
    for (int attempt = 0;; ++attempt) {
      std::mt19937_64 rng(derive_seed(cfg.seed, "gmm-init", static_cast<std::uint64_t>(c) * 1000 + attempt));
      try {
        m.classes.push_back(detail::fit_class(xc, cfg, rng));
        break;
      } catch (const detail::EmCollapse&) {
        if (attempt + 1 >= cfg.max_restarts)
          throw Error("gmm_fit: component collapse in class " + std::to_string(c) + " after " +
                      std::to_string(cfg.max_restarts) + " restarts");
      }
    }
  }
  return m;
}

/// Negated maximum class log-density.
inline Vector gmm_scores(const GmmModel& m, const Matrix& test) {
  const Matrix x = m.pipeline.apply(test);
  Vector out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Vector xi = x.row(i).transpose();
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& cls : m.classes) best = std::max(best, cls.log_density(xi));
    out(i) = -best;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization: "GDM1"/"GMM1" containers, JSON header then f32 payload.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_matrix(std::string& out, const Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) opengan::detail::put_f32(out, m(r, c));
}

inline Matrix get_matrix(opengan::detail::Reader& r, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = r.f32("model parameters");
  return m;
}

}  // namespace detail

inline std::string encode_gdm(const GdmModel& m) {
  const auto d = m.shared.covariance.rows();
  nlohmann::ordered_json h{{"version", 1}, {"method", "gdm"}, {"dim", d}, {"k_classes", m.means.size()}};
  std::string out;
  opengan::detail::write_header(out, "GDM1", h.dump());
  for (const auto& mu : m.means) detail::put_matrix(out, mu.transpose());
  detail::put_matrix(out, m.shared.covariance);
  return out;
}

inline GdmModel decode_gdm(std::string_view bytes) {
  opengan::detail::Reader r(bytes);
  const auto h = opengan::detail::read_header(r, "GDM1");
  const auto d = h.at("dim").get<Eigen::Index>();
  const auto k = h.at("k_classes").get<std::size_t>();
  GdmModel m;
  for (std::size_t c = 0; c < k; ++c) m.means.push_back(detail::get_matrix(r, 1, d).transpose());
  m.shared = FlooredCovariance::from(detail::get_matrix(r, d, d), kVarianceFloor);
  return m;
}

inline std::string encode_gmm(const GmmModel& m) {
  nlohmann::ordered_json h;
  h["version"] = 1;
  h["method"] = "gmm";
  h["structure"] = to_string(m.structure);
  h["variance_floor"] = m.variance_floor;
  h["l2_normalize"] = m.pipeline.l2;
  h["pca"] = m.pipeline.pca ? nlohmann::ordered_json{{"in_dim", m.pipeline.pca->dim()},
                                                     {"out_dim", m.pipeline.pca->out_dim()}}
                            : nlohmann::ordered_json(nullptr);
  auto classes = nlohmann::ordered_json::array();
  Eigen::Index dim = 0;
  for (const auto& cls : m.classes) {
    classes.push_back(cls.components.size());
    dim = cls.components.front().mean.size();
  }
  h["dim"] = dim;
  h["components_per_class"] = classes;
  std::string out;
  opengan::detail::write_header(out, "GMM1", h.dump());
  if (m.pipeline.pca) {
    detail::put_matrix(out, m.pipeline.pca->mean.transpose());
    detail::put_matrix(out, m.pipeline.pca->components);
  }
  for (const auto& cls : m.classes)
    for (const auto& c : cls.components) {
      opengan::detail::put_f32(out, c.weight);
      detail::put_matrix(out, c.mean.transpose());
      detail::put_matrix(out, c.cov.covariance);
    }
  return out;
}

inline GmmModel decode_gmm(std::string_view bytes) {
  opengan::detail::Reader r(bytes);
  const auto h = opengan::detail::read_header(r, "GMM1");
  GmmModel m;
  m.structure = parse_cov_structure(h.at("structure").get<std::string>());
  m.variance_floor = h.at("variance_floor").get<double>();
  m.pipeline.l2 = h.at("l2_normalize").get<bool>();
  if (!h.at("pca").is_null()) {
    PcaModel p;
    const auto in = h.at("pca").at("in_dim").get<Eigen::Index>();
    const auto out = h.at("pca").at("out_dim").get<Eigen::Index>();
    p.mean = detail::get_matrix(r, 1, in).transpose();
    p.components = detail::get_matrix(r, out, in);
    m.pipeline.pca = std::move(p);
  }
  const auto d = h.at("dim").get<Eigen::Index>();
  for (const auto& nk : h.at("components_per_class")) {
    ClassMixture cls;
    for (std::size_t k = 0; k < nk.get<std::size_t>(); ++k) {
      GaussianComponent c;
      c.weight = r.f32("weight");
      c.mean = detail::get_matrix(r, 1, d).transpose();
      c.cov = FlooredCovariance::from(detail::get_matrix(r, d, d), m.variance_floor);
      cls.components.push_back(std::move(c));
    }
    m.classes.push_back(std::move(cls));
  }
  return m;
}

}  // namespace opengan::baselines
