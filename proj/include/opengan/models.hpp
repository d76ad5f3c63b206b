#pragma once

#include "opengan/nn.hpp"

namespace opengan {

inline constexpr int kDefaultLatentDim = 64;
inline constexpr double kLeakySlope = 0.2;

namespace detail {

// fc, BN, LeakyReLU for every hidden width, then a final fc and `head`.
inline nn::Mlp build_stack(const std::vector<int>& widths, nn::Layer head, std::mt19937_64& rng) {
  std::vector<nn::Layer> layers;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    layers.emplace_back(nn::make_linear(widths[i], widths[i + 1]));
    if (i + 2 < widths.size()) {
      layers.emplace_back(nn::make_batchnorm(widths[i + 1]));
      layers.emplace_back(nn::LeakyRelu{kLeakySlope});
    }
  }
  layers.push_back(std::move(head));
  nn::Mlp net(std::move(layers));
  nn::init_weights(net, rng);
  return net;
}

}  // namespace detail

/// feat_dim -> 512 -> 256 -> 128 -> 64 -> 1, Sigmoid output.
inline nn::Mlp build_discriminator(int feat_dim, std::mt19937_64& rng) {
  if (feat_dim < 1) throw Error("build_discriminator: feat_dim must be >= 1");
  return detail::build_stack({feat_dim, 64 * 8, 64 * 4, 64 * 2, 64, 1}, nn::Sigmoid{}, rng);
}

/// latent_dim -> 512 -> 256 -> 128 -> 256 -> feat_dim, Tanh output.
inline nn::Mlp build_generator(int feat_dim, std::mt19937_64& rng, int latent_dim = kDefaultLatentDim) {
  if (feat_dim < 1 || latent_dim < 1) throw Error("build_generator: dims must be >= 1");
  return detail::build_stack({latent_dim, 64 * 8, 64 * 4, 64 * 2, 64 * 4, feat_dim}, nn::Tanh{}, rng);
}

inline Matrix sample_latent(Eigen::Index n, int latent_dim, std::mt19937_64& rng) {
  if (n < 0) throw Error("sample_latent: n must be >= 0");
  std::normal_distribution<double> n01;
  Matrix z(n, latent_dim);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int j = 0; j < latent_dim; ++j) z(i, j) = n01(rng);
  return z;
}

/// Per-dimension affine map sending the closed-train [min, max] box onto
/// [-1, 1], the generator's Tanh range. Constant dimensions map to 0.
struct FeatureScaler {
  Vector offset;  // subtracted first
  Vector scale;   // then multiplied

  static FeatureScaler fit(const Matrix& rows) {
    if (rows.rows() == 0) throw Error("FeatureScaler: no rows to fit");
    FeatureScaler s;
    const Vector lo = rows.colwise().minCoeff().transpose();
    const Vector hi = rows.colwise().maxCoeff().transpose();
    s.offset = (lo + hi) / 2;
    s.scale.resize(lo.size());
    for (Eigen::Index i = 0; i < lo.size(); ++i) s.scale(i) = hi(i) > lo(i) ? 2.0 / (hi(i) - lo(i)) : 1.0;
    return s;
  }

  static FeatureScaler identity(int dim) { return {Vector::Zero(dim), Vector::Ones(dim)}; }

  Matrix apply(const Matrix& rows) const {
    if (rows.cols() != offset.size()) throw Error("FeatureScaler: dimension mismatch");
    return (rows.rowwise() - offset.transpose()).array().rowwise() * scale.transpose().array();
  }

  Matrix invert(const Matrix& scaled) const {
    return (scaled.array().rowwise() / scale.transpose().array()).matrix().rowwise() + offset.transpose();
  }

  nlohmann::ordered_json to_json() const {
    return {{"offset", std::vector<double>(offset.data(), offset.data() + offset.size())},
            {"scale", std::vector<double>(scale.data(), scale.data() + scale.size())}};
  }

  static FeatureScaler from_json(const nlohmann::json& j) {
    const auto o = j.at("offset").get<std::vector<double>>();
    const auto s = j.at("scale").get<std::vector<double>>();
    if (o.size() != s.size()) throw Error("FeatureScaler: offset/scale length mismatch");
    return {Eigen::Map<const Vector>(o.data(), static_cast<Eigen::Index>(o.size())),
            Eigen::Map<const Vector>(s.data(), static_cast<Eigen::Index>(s.size()))};
  }

  friend bool operator==(const FeatureScaler&, const FeatureScaler&) = default;
};

struct GanPair {
  nn::Mlp discriminator;
  nn::Mlp generator;
  int latent_dim = kDefaultLatentDim;
  int feat_dim = 0;

  static GanPair build(int feat_dim, std::mt19937_64& rng, int latent_dim = kDefaultLatentDim) {
    GanPair p;
    p.feat_dim = feat_dim;
    p.latent_dim = latent_dim;
    p.discriminator = build_discriminator(feat_dim, rng);
    p.generator = build_generator(feat_dim, rng, latent_dim);
    return p;
  }
};

/// Open-set score of a discriminator: 1 - D(x), evaluated as sigmoid(-logit)
/// so that saturated outputs stay rank-distinguishable.
inline Vector discriminator_open_scores(const nn::Mlp& d, const Matrix& scaled_rows) {
  const Matrix logits = d.predict(scaled_rows, /*skip_terminal_sigmoid=*/true);
  return logits.col(0).unaryExpr([](double l) { return sigmoid(-l); });
}

/// Writes discriminator.mlp, generator.mlp and gan.json into `dir`.
inline void save_gan_pair(const GanPair& p, const FeatureScaler& scaler, const std::string& dir) {
  nn::save_mlp(p.discriminator, dir + "/discriminator.mlp");
  nn::save_mlp(p.generator, dir + "/generator.mlp");
  nlohmann::ordered_json m;
  m["feat_dim"] = p.feat_dim;
  m["latent_dim"] = p.latent_dim;
  m["scaler"] = scaler.to_json();
  m["discriminator"] = "discriminator.mlp";
  m["generator"] = "generator.mlp";
  write_file(dir + "/gan.json", m.dump(2) + "\n");
}

inline std::pair<GanPair, FeatureScaler> load_gan_pair(const std::string& dir) {
  const auto m = nlohmann::json::parse(read_file(dir + "/gan.json"));
  GanPair p;
  p.feat_dim = m.at("feat_dim").get<int>();
  p.latent_dim = m.at("latent_dim").get<int>();
  p.discriminator = nn::load_mlp(dir + "/" + m.at("discriminator").get<std::string>()).net;
  p.generator = nn::load_mlp(dir + "/" + m.at("generator").get<std::string>()).net;
  return {std::move(p), FeatureScaler::from_json(m.at("scaler"))};
}

}  // namespace opengan
