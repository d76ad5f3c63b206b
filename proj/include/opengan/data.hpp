#pragma once

#include "opengan/common.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <optional>
#include <random>
#include <set>

namespace opengan {

inline constexpr int kOpenLabel = -1;

/// Labeled matrix of feature rows. Labels are 0..k_classes-1 for closed-set
/// rows and kOpenLabel for open-set rows.
struct FeatureDataset {
  int dim = 0;
  int k_classes = 1;
  Matrix rows;
  std::vector<int> labels;
  std::optional<Matrix> logits;

  FeatureDataset() = default;
  FeatureDataset(int dim_, int k_classes_) : dim(dim_), k_classes(k_classes_), rows(0, dim_) {}

  std::size_t count() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  bool has_logits() const { return logits.has_value(); }

  std::vector<bool> open_mask() const {
    std::vector<bool> m(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) m[i] = labels[i] == kOpenLabel;
    return m;
  }

  void validate() const {
    if (dim < 1) throw Error("dataset dim must be positive");
    if (k_classes < 1) throw Error("dataset k_classes must be positive");
    if (rows.cols() != dim) throw Error("dataset rows have " + std::to_string(rows.cols()) +
                                        " columns, expected dim=" + std::to_string(dim));
    if (static_cast<std::size_t>(rows.rows()) != labels.size())
      throw Error("dataset row count and label count differ");
    if (!rows.allFinite()) throw Error("dataset contains non-finite feature values");
    for (int l : labels)
      if (l != kOpenLabel && (l < 0 || l >= k_classes))
        throw Error("label " + std::to_string(l) + " outside [0, " + std::to_string(k_classes) + ") and not -1");
    if (logits) {
      if (logits->cols() != k_classes || static_cast<std::size_t>(logits->rows()) != labels.size())
        throw Error("logits must be count x k_classes");
      if (!logits->allFinite()) throw Error("dataset contains non-finite logits");
    }
  }

  friend bool operator==(const FeatureDataset& a, const FeatureDataset& b) {
    if (a.dim != b.dim || a.k_classes != b.k_classes || a.labels != b.labels) return false;
    if (a.rows.rows() != b.rows.rows() || a.rows.cols() != b.rows.cols() || a.rows != b.rows) return false;
    if (a.logits.has_value() != b.logits.has_value()) return false;
    if (a.logits && (a.logits->rows() != b.logits->rows() || *a.logits != *b.logits)) return false;
    return true;
  }
};

/// Row-wise concatenation; both datasets must share dim and k_classes.
inline FeatureDataset concat(const FeatureDataset& a, const FeatureDataset& b) {
  if (a.dim != b.dim || a.k_classes != b.k_classes) throw Error("concat: incompatible datasets");
  FeatureDataset out(a.dim, a.k_classes);
  out.rows.resize(a.rows.rows() + b.rows.rows(), a.dim);
  out.rows << a.rows, b.rows;
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  if (a.has_logits() && b.has_logits()) {
    Matrix l(a.logits->rows() + b.logits->rows(), a.k_classes);
    l << *a.logits, *b.logits;
    out.logits = std::move(l);
  }
  return out;
}

// ---------------------------------------------------------------------------
// OFD container
//
//   0..3    magic "OFD1"
//   4..7    u32 header length H
//   8..8+H  JSON {"version":1,"dim":D,"count":N,"k_classes":K,"has_logits":b}
//   then N*D f32 features, N i32 labels, optionally N*K f32 logits.
// All integers and reals are little-endian.
// ---------------------------------------------------------------------------

namespace detail {

static_assert(std::endian::native == std::endian::little, "OFD/MLP1 IO assumes a little-endian host");

inline void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

inline void put_f32(std::string& out, double v) {
  const float f = static_cast<float>(v);
  char b[4];
  std::memcpy(b, &f, 4);
  out.append(b, 4);
}

inline void put_i32(std::string& out, std::int32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

/// Cursor over an in-memory container that reports offsets on failure.
class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  std::string_view take(std::size_t n, const char* what) {
    if (remaining() < n) throw FormatError(std::string("truncated payload while reading ") + what, pos_);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::uint32_t u32(const char* what) {
    std::uint32_t v;
    std::memcpy(&v, take(4, what).data(), 4);
    return v;
  }

  double f32(const char* what) {
    const std::size_t at = pos_;
    float v;
    std::memcpy(&v, take(4, what).data(), 4);
    if (!std::isfinite(v)) throw FormatError(std::string("non-finite value in ") + what, at);
    return static_cast<double>(v);
  }

  std::int32_t i32(const char* what) {
    std::int32_t v;
    std::memcpy(&v, take(4, what).data(), 4);
    return v;
  }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

/// Reads magic + length-prefixed JSON header.
inline nlohmann::json read_header(Reader& r, std::string_view magic) {
  auto m = r.take(4, "magic");
  if (m != magic)
    throw FormatError("bad magic: expected '" + std::string(magic) + "'", 0);
  const std::uint32_t h = r.u32("header length");
  const std::size_t at = r.offset();
  auto text = r.take(h, "header");
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed JSON header: ") + e.what(), at);
  }
}

inline void write_header(std::string& out, std::string_view magic, const std::string& header) {
  out.append(magic);
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out.append(header);
}

}  // namespace detail

inline std::string encode_dataset(const FeatureDataset& ds) {
  ds.validate();
  nlohmann::ordered_json h;
  h["version"] = 1;
  h["dim"] = ds.dim;
  h["count"] = ds.count();
  h["k_classes"] = ds.k_classes;
  h["has_logits"] = ds.has_logits();
  std::string out;
  const std::size_t n = ds.count();
  out.reserve(64 + n * (ds.dim + 1 + (ds.has_logits() ? ds.k_classes : 0)) * 4);
  detail::write_header(out, "OFD1", h.dump());
  for (std::size_t i = 0; i < n; ++i)
    for (int j = 0; j < ds.dim; ++j) detail::put_f32(out, ds.rows(i, j));
  for (int l : ds.labels) detail::put_i32(out, l);
  if (ds.logits)
    for (std::size_t i = 0; i < n; ++i)
      for (int j = 0; j < ds.k_classes; ++j) detail::put_f32(out, (*ds.logits)(i, j));
  return out;
}

inline FeatureDataset decode_dataset(std::string_view bytes) {
  detail::Reader r(bytes);
  const auto h = detail::read_header(r, "OFD1");
  const std::size_t header_end = r.offset();
  FeatureDataset ds;
  std::uint64_t count = 0;
  bool has_logits = false;
  try {
    if (h.at("version").get<int>() != 1) throw FormatError("unsupported OFD version", 8);
    ds.dim = h.at("dim").get<int>();
    ds.k_classes = h.at("k_classes").get<int>();
    count = h.at("count").get<std::uint64_t>();
    has_logits = h.at("has_logits").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("invalid OFD header: ") + e.what(), 8);
  }
  if (ds.dim < 1 || ds.k_classes < 1) throw FormatError("header dim and k_classes must be positive", 8);

  const std::uint64_t expected =
      count * (static_cast<std::uint64_t>(ds.dim) + 1 + (has_logits ? ds.k_classes : 0)) * 4;
  if (r.remaining() != expected)
    throw FormatError("header/payload size mismatch: header implies " + std::to_string(expected) +
                          " payload bytes, file holds " + std::to_string(r.remaining()),
                      header_end);

  ds.rows.resize(static_cast<Eigen::Index>(count), ds.dim);
  for (std::uint64_t i = 0; i < count; ++i)
    for (int j = 0; j < ds.dim; ++j) ds.rows(i, j) = r.f32("features");
  ds.labels.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::size_t at = r.offset();
    const int l = r.i32("labels");
    if (l != kOpenLabel && (l < 0 || l >= ds.k_classes))
      throw FormatError("label " + std::to_string(l) + " out of range", at);
    ds.labels[i] = l;
  }
  if (has_logits) {
    Matrix lg(static_cast<Eigen::Index>(count), ds.k_classes);
    for (std::uint64_t i = 0; i < count; ++i)
      for (int j = 0; j < ds.k_classes; ++j) lg(i, j) = r.f32("logits");
    ds.logits = std::move(lg);
  }
  return ds;
}

inline void save_dataset(const FeatureDataset& ds, const std::string& path) {
  write_file(path, encode_dataset(ds));
}

inline FeatureDataset load_dataset(const std::string& path) {
  const std::string bytes = read_file(path);
  try {
    return decode_dataset(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what(), e.offset());
  }
}

// ---------------------------------------------------------------------------
// Splitting and preprocessing
// ---------------------------------------------------------------------------

/// Rows whose label is in `closed_classes` form the closed partition with
/// labels remapped densely in ascending original order; the rest become open
/// (label -1). Logits, when present, keep only the closed-class columns and
/// are renormalized to log-posteriors.
inline std::pair<FeatureDataset, FeatureDataset> class_split(const FeatureDataset& ds,
                                                             const std::set<int>& closed_classes) {
  if (closed_classes.empty()) throw Error("class_split: closed class set is empty");
  for (int c : closed_classes)
    if (c < 0 || c >= ds.k_classes) throw Error("class_split: class " + std::to_string(c) + " out of range");

  std::vector<int> remap(ds.k_classes, kOpenLabel);
  std::vector<int> kept;
  for (int c : closed_classes) {
    remap[c] = static_cast<int>(kept.size());
    kept.push_back(c);
  }
  const int k = static_cast<int>(kept.size());

  std::vector<Eigen::Index> closed_idx, open_idx;
  for (std::size_t i = 0; i < ds.count(); ++i) {
    const int l = ds.labels[i];
    (l != kOpenLabel && remap[l] != kOpenLabel ? closed_idx : open_idx).push_back(static_cast<Eigen::Index>(i));
  }

  auto gather = [&](const std::vector<Eigen::Index>& idx, bool closed) {
    FeatureDataset out(ds.dim, k);
    out.rows = ds.rows(idx, Eigen::all);
    out.labels.reserve(idx.size());
    for (auto i : idx) out.labels.push_back(closed ? remap[ds.labels[i]] : kOpenLabel);
    if (ds.logits) {
      Matrix lg = (*ds.logits)(idx, kept);
      for (Eigen::Index r = 0; r < lg.rows(); ++r) {
        const double m = lg.row(r).maxCoeff();
        const double lse = m + std::log((lg.row(r).array() - m).exp().sum());
        lg.row(r).array() -= lse;
      }
      out.logits = std::move(lg);
    }
    return out;
  };
  return {gather(closed_idx, true), gather(open_idx, false)};
}

/// Picks `n_closed` distinct classes out of `k_total` using a seeded shuffle.
inline std::set<int> choose_closed_classes(int k_total, int n_closed, std::uint64_t seed) {
  if (n_closed < 1 || n_closed > k_total) throw Error("choose_closed_classes: bad class count");
  std::vector<int> all(k_total);
  for (int i = 0; i < k_total; ++i) all[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(all.begin(), all.end(), rng);
  return {all.begin(), all.begin() + n_closed};
}

/// Scales each nonzero row to unit Euclidean norm. Zero rows pass through.
inline Matrix l2_normalize(const Matrix& rows) {
  Matrix out = rows;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double n = out.row(i).norm();
    if (n > 0) out.row(i) /= n;
  }
  return out;
}

struct PcaModel {
  Vector mean;
  Matrix components;  // out_dim x dim, orthonormal rows
  Vector eigenvalues;

  int out_dim() const { return static_cast<int>(components.rows()); }
  int dim() const { return static_cast<int>(components.cols()); }

  Matrix apply(const Matrix& rows) const {
    if (rows.cols() != dim()) throw Error("pca_apply: dimension mismatch");
    return (rows.rowwise() - mean.transpose()) * components.transpose();
  }
};

/// Top-`out_dim` eigenvectors of the sample covariance (divisor n-1), sorted
/// by descending eigenvalue. Each component's largest-magnitude entry is
/// made positive.
inline PcaModel pca_fit(const Matrix& rows, int out_dim) {
  if (rows.rows() < 2) throw Error("pca_fit: need at least 2 rows");
  if (out_dim < 1 || out_dim > rows.cols() || out_dim > rows.rows())
    throw Error("pca_fit: out_dim " + std::to_string(out_dim) + " exceeds min(dim, count)");
  PcaModel m;
  m.mean = rows.colwise().mean().transpose();
  const Matrix centered = rows.rowwise() - m.mean.transpose();
  const Matrix cov = (centered.transpose() * centered) / static_cast<double>(rows.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  if (eig.info() != Eigen::Success) throw Error("pca_fit: eigendecomposition failed");
  const Eigen::Index d = rows.cols();
  m.components.resize(out_dim, d);
  m.eigenvalues.resize(out_dim);
  // Eigen returns ascending eigenvalues.
  for (int k = 0; k < out_dim; ++k) {
    Vector v = eig.eigenvectors().col(d - 1 - k);
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    m.components.row(k) = v.transpose();
    m.eigenvalues(k) = eig.eigenvalues()(d - 1 - k);
  }
  return m;
}

inline Matrix pca_apply(const PcaModel& m, const Matrix& rows) { return m.apply(rows); }

/// Optional L2 normalization followed by optional PCA, applied in that order.
struct FeaturePipeline {
  bool l2 = false;
  std::optional<PcaModel> pca;

  static FeaturePipeline fit(const Matrix& train_rows, bool l2, int pca_dim) {
    FeaturePipeline p;
    p.l2 = l2;
    if (pca_dim > 0) {
      const Matrix x = l2 ? l2_normalize(train_rows) : train_rows;
      const int d = std::min<int>({pca_dim, static_cast<int>(x.cols()), static_cast<int>(x.rows())});
      p.pca = pca_fit(x, d);
    }
    return p;
  }

  Matrix apply(const Matrix& rows) const {
    Matrix x = l2 ? l2_normalize(rows) : rows;
    return pca ? pca->apply(x) : x;
  }
};

// ---------------------------------------------------------------------------
// Synthetic benchmarks
// ---------------------------------------------------------------------------

/// One Gaussian open-set mode. Modes with equal `distribution` ids share a
/// mean direction, so open train/val/test can be drawn from the same or from
/// disjoint distributions.
struct OpenMode {
  double offset_radius = 8.0;
  double cov_scale = 1.0;
  int count = 0;
  int distribution = 0;
};

struct SynthConfig {
  int k_classes = 6;
  int dim = 16;
  int per_class_train = 100;
  int per_class_val = 20;
  int per_class_test = 50;
  double closed_mean_radius = 3.0;
  double closed_cov_scale = 1.0;
  std::vector<OpenMode> open_train;
  std::vector<OpenMode> open_val;
  std::vector<OpenMode> open_test;
  std::uint64_t seed = 0;

  void validate() const {
    if (k_classes < 1) throw Error("synth: k_classes must be >= 1");
    if (dim < 1) throw Error("synth: dim must be >= 1");
    if (per_class_train < 0 || per_class_val < 0 || per_class_test < 0) throw Error("synth: counts must be >= 0");
    if (!(closed_mean_radius > 0) || !(closed_cov_scale > 0)) throw Error("synth: radius and scale must be > 0");
    for (const auto* part : {&open_train, &open_val, &open_test})
      for (const auto& m : *part) {
        if (m.count < 0) throw Error("synth: open mode count must be >= 0");
        if (!(m.offset_radius > 0) || !(m.cov_scale > 0)) throw Error("synth: open mode radius and scale must be > 0");
      }
  }
};

inline void to_json(nlohmann::json& j, const OpenMode& m) {
  j = {{"offset_radius", m.offset_radius}, {"cov_scale", m.cov_scale}, {"count", m.count},
       {"distribution", m.distribution}};
}

inline void from_json(const nlohmann::json& j, OpenMode& m) {
  m.offset_radius = j.value("offset_radius", m.offset_radius);
  m.cov_scale = j.value("cov_scale", m.cov_scale);
  m.count = j.value("count", m.count);
  m.distribution = j.value("distribution", m.distribution);
}

inline void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = {{"k_classes", c.k_classes},
       {"dim", c.dim},
       {"per_class_train", c.per_class_train},
       {"per_class_val", c.per_class_val},
       {"per_class_test", c.per_class_test},
       {"closed_mean_radius", c.closed_mean_radius},
       {"closed_cov_scale", c.closed_cov_scale},
       {"open_train", c.open_train},
       {"open_val", c.open_val},
       {"open_test", c.open_test},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, SynthConfig& c) {
  c.k_classes = j.value("k_classes", c.k_classes);
  c.dim = j.value("dim", c.dim);
  c.per_class_train = j.value("per_class_train", c.per_class_train);
  c.per_class_val = j.value("per_class_val", c.per_class_val);
  c.per_class_test = j.value("per_class_test", c.per_class_test);
  c.closed_mean_radius = j.value("closed_mean_radius", c.closed_mean_radius);
  c.closed_cov_scale = j.value("closed_cov_scale", c.closed_cov_scale);
  if (j.contains("open_train")) c.open_train = j.at("open_train").get<std::vector<OpenMode>>();
  if (j.contains("open_val")) c.open_val = j.at("open_val").get<std::vector<OpenMode>>();
  if (j.contains("open_test")) c.open_test = j.at("open_test").get<std::vector<OpenMode>>();
  c.seed = j.value("seed", c.seed);
}

struct SynthBenchmark {
  FeatureDataset closed_train, closed_val, closed_test;
  FeatureDataset open_train, open_val, open_test;
  std::vector<Vector> class_means;
};

namespace detail {

inline Vector random_direction(int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n01;
  Vector v(dim);
  do {
    for (int i = 0; i < dim; ++i) v(i) = n01(rng);
  } while (v.norm() == 0);
  return v / v.norm();
}

// Log-posteriors of the equal-prior isotropic closed mixture.
inline Matrix bayes_logits(const Matrix& x, const std::vector<Vector>& means, double cov_scale) {
  const auto k = static_cast<Eigen::Index>(means.size());
  Matrix lg(x.rows(), k);
  for (Eigen::Index c = 0; c < k; ++c)
    lg.col(c) = -(x.rowwise() - means[c].transpose()).rowwise().squaredNorm() / (2.0 * cov_scale);
  for (Eigen::Index r = 0; r < lg.rows(); ++r) {
    const double m = lg.row(r).maxCoeff();
    lg.row(r).array() -= m + std::log((lg.row(r).array() - m).exp().sum());
  }
  return lg;
}

}  // namespace detail

/// Closed class c ~ N(mu_c, s I) with mu_c uniform on the sphere of radius
/// closed_mean_radius; each open mode ~ N(offset_radius * u, s_o I) with u a
/// unit direction fixed by (seed, distribution). Logits are the Bayes
/// log-posteriors under the closed mixture. Output is a pure function of cfg.
inline SynthBenchmark synth_benchmark(const SynthConfig& cfg) {
  cfg.validate();
  SynthBenchmark b;
  std::mt19937_64 mean_rng(derive_seed(cfg.seed, "closed-means"));
  for (int c = 0; c < cfg.k_classes; ++c)
    b.class_means.push_back(detail::random_direction(cfg.dim, mean_rng) * cfg.closed_mean_radius);

  const double sd = std::sqrt(cfg.closed_cov_scale);
  auto closed_part = [&](int per_class, std::string_view stream) {
    std::mt19937_64 rng(derive_seed(cfg.seed, stream));
    std::normal_distribution<double> n01;
    FeatureDataset ds(cfg.dim, cfg.k_classes);
    ds.rows.resize(static_cast<Eigen::Index>(per_class) * cfg.k_classes, cfg.dim);
    Eigen::Index r = 0;
    for (int c = 0; c < cfg.k_classes; ++c)
      for (int i = 0; i < per_class; ++i, ++r) {
        for (int j = 0; j < cfg.dim; ++j) ds.rows(r, j) = b.class_means[c](j) + sd * n01(rng);
        ds.labels.push_back(c);
      }
    ds.logits = detail::bayes_logits(ds.rows, b.class_means, cfg.closed_cov_scale);
    return ds;
  };
  auto open_part = [&](const std::vector<OpenMode>& modes, std::string_view stream) {
    std::mt19937_64 rng(derive_seed(cfg.seed, stream));
    std::normal_distribution<double> n01;
    FeatureDataset ds(cfg.dim, cfg.k_classes);
    Eigen::Index total = 0;
    for (const auto& m : modes) total += m.count;
    ds.rows.resize(total, cfg.dim);
    Eigen::Index r = 0;
    for (const auto& m : modes) {
      std::mt19937_64 dir_rng(derive_seed(cfg.seed, "open-mode", static_cast<std::uint64_t>(m.distribution)));
      const Vector mu = detail::random_direction(cfg.dim, dir_rng) * m.offset_radius;
      const double s = std::sqrt(m.cov_scale);
      for (int i = 0; i < m.count; ++i, ++r) {
        for (int j = 0; j < cfg.dim; ++j) ds.rows(r, j) = mu(j) + s * n01(rng);
        ds.labels.push_back(kOpenLabel);
      }
    }
    ds.logits = detail::bayes_logits(ds.rows, b.class_means, cfg.closed_cov_scale);
    return ds;
  };

  b.closed_train = closed_part(cfg.per_class_train, "closed-train");
  b.closed_val = closed_part(cfg.per_class_val, "closed-val");
  b.closed_test = closed_part(cfg.per_class_test, "closed-test");
  b.open_train = open_part(cfg.open_train, "open-train");
  b.open_val = open_part(cfg.open_val, "open-val");
  b.open_test = open_part(cfg.open_test, "open-test");
  return b;
}

}  // namespace opengan
