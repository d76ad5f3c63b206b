#pragma once

#include "opengan/common.hpp"
#include "opengan/data.hpp"

#include <json.hpp>

#include <functional>
#include <random>
#include <span>
#include <variant>

namespace opengan::nn {

struct Linear {
  Matrix weight;  // out x in
  Vector bias;    // out
  int in() const { return static_cast<int>(weight.cols()); }
  int out() const { return static_cast<int>(weight.rows()); }
};

struct BatchNorm {
  Vector gain;
  Vector shift;
  Vector running_mean;
  Vector running_var;
  double eps = 1e-5;
  double momentum = 0.1;
  int width() const { return static_cast<int>(gain.size()); }
};

struct LeakyRelu {
  double slope = 0.2;
};
struct Sigmoid {};
struct Tanh {};

using Layer = std::variant<Linear, BatchNorm, LeakyRelu, Sigmoid, Tanh>;

enum class Mode { kTraining, kInference };

inline Linear make_linear(int in, int out) {
  return Linear{Matrix::Zero(out, in), Vector::Zero(out)};
}

inline BatchNorm make_batchnorm(int width) {
  return BatchNorm{Vector::Ones(width), Vector::Zero(width), Vector::Zero(width), Vector::Ones(width)};
}

/// Everything backward() needs from one forward pass.
struct Tape {
  struct Record {
    Matrix input;
    Matrix aux;      // BatchNorm: normalized input; Sigmoid/Tanh: output
    Vector inv_std;  // BatchNorm only
    bool batch_stats = false;
  };
  std::vector<Record> records;
};

struct Gradients {
  std::vector<Vector> params;  // one block per parameter tensor, parameter_blocks() order
  Matrix input;
};

struct ForwardOptions {
  bool update_running_stats = true;
  // Stop before a terminal Sigmoid so losses can work on logits.
  bool skip_terminal_sigmoid = false;
};

class Mlp {
 public:
  std::vector<Layer> layers;
  Mode mode = Mode::kTraining;

  Mlp() = default;
  explicit Mlp(std::vector<Layer> ls) : layers(std::move(ls)) { validate(); }

  int input_width() const { return width_at(0, true); }
  int output_width() const { return width_at(layers.size(), false); }

  void validate() const {
    int width = -1;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (const auto* l = std::get_if<Linear>(&layers[i])) {
        if (l->bias.size() != l->out()) throw Error("Linear bias size mismatch at layer " + std::to_string(i));
        if (width >= 0 && width != l->in()) throw Error("layer " + std::to_string(i) + ": width mismatch");
        width = l->out();
      } else if (const auto* bn = std::get_if<BatchNorm>(&layers[i])) {
        if (width >= 0 && width != bn->width()) throw Error("layer " + std::to_string(i) + ": width mismatch");
        if (bn->shift.size() != bn->width() || bn->running_mean.size() != bn->width() ||
            bn->running_var.size() != bn->width())
          throw Error("BatchNorm vector sizes differ at layer " + std::to_string(i));
        if ((bn->running_var.array() <= 0).any()) throw Error("BatchNorm running variance must be > 0");
        width = bn->width();
      } else if (const auto* lr = std::get_if<LeakyRelu>(&layers[i])) {
        if (!(lr->slope > 0 && lr->slope < 1)) throw Error("LeakyReLU slope must lie in (0,1)");
      }
    }
    if (width < 0) throw Error("network has no sized layer");
  }

  bool ends_with_sigmoid() const { return !layers.empty() && std::holds_alternative<Sigmoid>(layers.back()); }

  /// Runs the network in its current mode. In training mode BatchNorm uses
  /// batch statistics and (optionally) updates its running statistics.
  Matrix forward(const Matrix& x, Tape* tape = nullptr, ForwardOptions opts = {}) {
    return run(x, tape, opts, mode == Mode::kTraining);
  }

  /// Pure inference-mode evaluation; never touches running statistics.
  Matrix predict(const Matrix& x, bool skip_terminal_sigmoid = false) const {
    return const_cast<Mlp*>(this)->run(x, nullptr, {false, skip_terminal_sigmoid}, false);
  }

  Gradients backward(const Tape& tape, const Matrix& out_grad) const;

  std::vector<std::span<double>> parameter_blocks() {
    std::vector<std::span<double>> out;
    for (auto& layer : layers) {
      if (auto* l = std::get_if<Linear>(&layer)) {
        out.emplace_back(l->weight.data(), l->weight.size());
        out.emplace_back(l->bias.data(), l->bias.size());
      } else if (auto* bn = std::get_if<BatchNorm>(&layer)) {
        out.emplace_back(bn->gain.data(), bn->gain.size());
        out.emplace_back(bn->shift.data(), bn->shift.size());
      }
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto& b : const_cast<Mlp*>(this)->parameter_blocks()) n += b.size();
    return n;
  }

  /// Widths at every Linear boundary, e.g. {in, h1, ..., out}.
  std::vector<int> linear_widths() const {
    std::vector<int> w;
    for (const auto& layer : layers)
      if (const auto* l = std::get_if<Linear>(&layer)) {
        if (w.empty()) w.push_back(l->in());
        w.push_back(l->out());
      }
    return w;
  }

  friend bool operator==(const Mlp& a, const Mlp& b);

 private:
  int width_at(std::size_t idx, bool input) const;
  Matrix run(const Matrix& x, Tape* tape, ForwardOptions opts, bool training);
};

inline int Mlp::width_at(std::size_t idx, bool input) const {
  if (input) {
    for (const auto& layer : layers) {
      if (const auto* l = std::get_if<Linear>(&layer)) return l->in();
      if (const auto* bn = std::get_if<BatchNorm>(&layer)) return bn->width();
    }
  } else {
    for (std::size_t i = idx; i-- > 0;) {
      if (const auto* l = std::get_if<Linear>(&layers[i])) return l->out();
      if (const auto* bn = std::get_if<BatchNorm>(&layers[i])) return bn->width();
    }
  }
  throw Error("network has no sized layer");
}

inline Matrix Mlp::run(const Matrix& x, Tape* tape, ForwardOptions opts, bool training) {
  if (x.cols() != input_width())
    throw Error("forward: batch has " + std::to_string(x.cols()) + " columns, network expects " +
                std::to_string(input_width()));
  std::size_t n_layers = layers.size();
  if (opts.skip_terminal_sigmoid && ends_with_sigmoid()) --n_layers;
  if (tape) tape->records.clear();

  Matrix h = x;
  for (std::size_t i = 0; i < n_layers; ++i) {
    Tape::Record rec;
    if (tape) rec.input = h;
    std::visit(
        [&](auto& layer) {
          using T = std::decay_t<decltype(layer)>;
          if constexpr (std::is_same_v<T, Linear>) {
            h = (h * layer.weight.transpose()).rowwise() + layer.bias.transpose();
          } else if constexpr (std::is_same_v<T, BatchNorm>) {
            if (training) {
              if (h.rows() < 2) throw Error("BatchNorm in training mode needs a batch of at least 2 rows");
              const RowVector mu = h.colwise().mean();
              Matrix centered = h.rowwise() - mu;
              const RowVector var = centered.array().square().colwise().mean();
              const RowVector inv_std = (var.array() + layer.eps).rsqrt();
              Matrix xhat = centered.array().rowwise() * inv_std.array();
              if (opts.update_running_stats) {
                const double n = static_cast<double>(h.rows());
                layer.running_mean = (1 - layer.momentum) * layer.running_mean + layer.momentum * mu.transpose();
                layer.running_var =
                    (1 - layer.momentum) * layer.running_var + layer.momentum * (var.transpose() * n / (n - 1));
              }
              h = (xhat.array().rowwise() * layer.gain.transpose().array()).rowwise() + layer.shift.transpose().array();
              if (tape) {
                rec.aux = std::move(xhat);
                rec.inv_std = inv_std.transpose();
                rec.batch_stats = true;
              }
            } else {
              const Vector inv_std = (layer.running_var.array() + layer.eps).rsqrt();
              h = ((h.rowwise() - layer.running_mean.transpose()).array().rowwise() *
                   (inv_std.array() * layer.gain.array()).transpose())
                      .rowwise() +
                  layer.shift.transpose().array();
              if (tape) rec.inv_std = inv_std;
            }
          } else if constexpr (std::is_same_v<T, LeakyRelu>) {
            const double s = layer.slope;
            h = h.unaryExpr([s](double v) { return v > 0 ? v : s * v; });
          } else if constexpr (std::is_same_v<T, Sigmoid>) {
            h = h.unaryExpr([](double v) { return sigmoid(v); });
            if (tape) rec.aux = h;
          } else {
            h = h.array().tanh().matrix();
            if (tape) rec.aux = h;
          }
        },
        layers[i]);
    if (tape) tape->records.push_back(std::move(rec));
  }
  return h;
}

inline Gradients Mlp::backward(const Tape& tape, const Matrix& out_grad) const {
  const std::size_t n_layers = tape.records.size();
  if (n_layers == 0 || n_layers > layers.size()) throw Error("backward: tape does not match network");
  std::vector<std::vector<Vector>> per_layer(n_layers);
  Matrix g = out_grad;
  for (std::size_t i = n_layers; i-- > 0;) {
    const auto& rec = tape.records[i];
    if (rec.input.rows() != g.rows()) throw Error("backward: tape/gradient batch size mismatch");
    std::visit(
        [&](const auto& layer) {
          using T = std::decay_t<decltype(layer)>;
          if constexpr (std::is_same_v<T, Linear>) {
            if (rec.input.cols() != layer.in() || g.cols() != layer.out())
              throw Error("backward: tape does not match network");
            Matrix dw = g.transpose() * rec.input;
            Vector db = g.colwise().sum().transpose();
            per_layer[i] = {Eigen::Map<const Vector>(dw.data(), dw.size()), std::move(db)};
            g = g * layer.weight;
          } else if constexpr (std::is_same_v<T, BatchNorm>) {
            if (g.cols() != layer.width()) throw Error("backward: tape does not match network");
            if (rec.batch_stats) {
              const double n = static_cast<double>(g.rows());
              Vector dgain = (g.array() * rec.aux.array()).colwise().sum().transpose();
              Vector dshift = g.colwise().sum().transpose();
              const Matrix dxhat = g.array().rowwise() * layer.gain.transpose().array();
              const RowVector sum_d = dxhat.colwise().sum();
              const RowVector sum_dx = (dxhat.array() * rec.aux.array()).colwise().sum();
              Matrix centered_term = (n * dxhat).rowwise() - sum_d;
              centered_term -= (rec.aux.array().rowwise() * sum_dx.array()).matrix();
              g = (centered_term.array().rowwise() * (rec.inv_std.transpose().array() / n)).matrix();
              per_layer[i] = {std::move(dgain), std::move(dshift)};
            } else {
              const Matrix xhat = (rec.input.rowwise() - layer.running_mean.transpose()).array().rowwise() *
                                  rec.inv_std.transpose().array();
              Vector dgain = (g.array() * xhat.array()).colwise().sum().transpose();
              Vector dshift = g.colwise().sum().transpose();
              g = (g.array().rowwise() * (layer.gain.array() * rec.inv_std.array()).transpose()).matrix();
              per_layer[i] = {std::move(dgain), std::move(dshift)};
            }
          } else if constexpr (std::is_same_v<T, LeakyRelu>) {
            g = (rec.input.array() > 0).select(g, layer.slope * g);
          } else if constexpr (std::is_same_v<T, Sigmoid>) {
            g = (g.array() * rec.aux.array() * (1.0 - rec.aux.array())).matrix();
          } else {
            g = (g.array() * (1.0 - rec.aux.array().square())).matrix();
          }
        },
        layers[i]);
  }
  Gradients out;
  for (std::size_t i = 0; i < n_layers; ++i)
    for (auto& b : per_layer[i]) out.params.push_back(std::move(b));
  // Layers past the tape (a skipped terminal Sigmoid) have no parameters.
  out.input = std::move(g);
  return out;
}

inline bool operator==(const Mlp& a, const Mlp& b) {
  if (a.layers.size() != b.layers.size() || a.mode != b.mode) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    if (a.layers[i].index() != b.layers[i].index()) return false;
    const bool same = std::visit(
        [&](const auto& la) {
          using T = std::decay_t<decltype(la)>;
          const auto& lb = std::get<T>(b.layers[i]);
          if constexpr (std::is_same_v<T, Linear>) {
            return la.weight.rows() == lb.weight.rows() && la.weight.cols() == lb.weight.cols() &&
                   la.weight == lb.weight && la.bias == lb.bias;
          } else if constexpr (std::is_same_v<T, BatchNorm>) {
            return la.width() == lb.width() && la.gain == lb.gain && la.shift == lb.shift &&
                   la.running_mean == lb.running_mean && la.running_var == lb.running_var && la.eps == lb.eps &&
                   la.momentum == lb.momentum;
          } else if constexpr (std::is_same_v<T, LeakyRelu>) {
            return la.slope == lb.slope;
          } else {
            return true;
          }
        },
        a.layers[i]);
    if (!same) return false;
  }
  return true;
}

/// DCGAN-style initialization: Linear W ~ N(0, 0.02^2), b = 0;
/// BatchNorm gain ~ N(1, 0.02^2), shift = 0, running stats reset.
inline void init_weights(Mlp& net, std::mt19937_64& rng) {
  std::normal_distribution<double> w(0.0, 0.02);
  std::normal_distribution<double> g(1.0, 0.02);
  for (auto& layer : net.layers) {
    if (auto* l = std::get_if<Linear>(&layer)) {
      for (Eigen::Index c = 0; c < l->weight.cols(); ++c)
        for (Eigen::Index r = 0; r < l->weight.rows(); ++r) l->weight(r, c) = w(rng);
      l->bias.setZero();
    } else if (auto* bn = std::get_if<BatchNorm>(&layer)) {
      for (Eigen::Index k = 0; k < bn->gain.size(); ++k) bn->gain(k) = g(rng);
      bn->shift.setZero();
      bn->running_mean.setZero();
      bn->running_var.setOnes();
    }
  }
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

enum class Target { kClosed, kOpen };

struct LossTerms {
  double loss = 0;
  Vector grad;  // d loss / d logit
};

/// Mean binary log-loss on pre-sigmoid logits. Closed: softplus(-l) =
/// -log sigmoid(l); open: softplus(l) = -log(1 - sigmoid(l)). An empty
/// block contributes zero.
inline LossTerms bce_terms(const Vector& logits, Target target) {
  LossTerms t;
  t.grad.resize(logits.size());
  if (logits.size() == 0) return t;
  const double n = static_cast<double>(logits.size());
  double sum = 0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double l = logits(i);
    if (target == Target::kClosed) {
      sum += softplus(-l);
      t.grad(i) = -sigmoid(-l) / n;
    } else {
      sum += softplus(l);
      t.grad(i) = sigmoid(l) / n;
    }
  }
  t.loss = sum / n;
  return t;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t t = 0;
  std::vector<Vector> m;
  std::vector<Vector> v;
};

/// One bias-corrected Adam update. Moments are allocated on first use.
inline void adam_step(AdamState& s, std::span<const std::span<double>> params, const std::vector<Vector>& grads) {
  if (params.size() != grads.size()) throw Error("adam_step: parameter/gradient block count mismatch");
  if (s.m.empty()) {
    for (const auto& p : params) {
      s.m.push_back(Vector::Zero(static_cast<Eigen::Index>(p.size())));
      s.v.push_back(Vector::Zero(static_cast<Eigen::Index>(p.size())));
    }
  }
  if (s.m.size() != params.size()) throw Error("adam_step: state does not match parameters");
  for (std::size_t b = 0; b < params.size(); ++b)
    if (static_cast<Eigen::Index>(params[b].size()) != grads[b].size() || s.m[b].size() != grads[b].size())
      throw Error("adam_step: shape mismatch in block " + std::to_string(b));

  ++s.t;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
  for (std::size_t b = 0; b < params.size(); ++b) {
    s.m[b] = s.beta1 * s.m[b] + (1 - s.beta1) * grads[b];
    s.v[b] = s.beta2 * s.v[b] + (1 - s.beta2) * grads[b].cwiseAbs2();
    Eigen::Map<Vector> p(params[b].data(), static_cast<Eigen::Index>(params[b].size()));
    p.array() -= s.lr * (s.m[b].array() / c1) / ((s.v[b].array() / c2).sqrt() + s.eps);
  }
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

/// Maps network output to (loss, d loss / d output).
using LossFn = std::function<std::pair<double, Matrix>(const Matrix&)>;

struct GradCheckOptions {
  double h = 1e-5;
  // 0 checks every coordinate; otherwise a seeded sample per block.
  std::size_t max_coords_per_block = 0;
  std::uint64_t seed = 0;
  double denominator_floor = 1e-6;
};

struct GradCheckReport {
  double max_relative_error = 0;
  std::size_t checked = 0;
  // Coordinates whose +-h evaluations crossed a LeakyReLU kink.
  std::size_t skipped = 0;
};

/// |a - n| / max(|a|, |n|, floor) over the checked coordinates.
inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares any analytic gradient source against central differences of a
/// scalar objective over the given parameter blocks. When `same_piece` is
/// given it is called after each perturbed evaluation; a false return marks
/// the coordinate as straddling a non-differentiable point and skips it.
inline GradCheckReport check_gradients(std::span<const std::span<double>> params, const std::vector<Vector>& analytic,
                                       const std::function<double()>& objective, const GradCheckOptions& opts,
                                       const std::function<bool()>& same_piece = {}) {
  if (params.size() != analytic.size()) throw Error("grad_check: block count mismatch");
  std::mt19937_64 rng(opts.seed);
  GradCheckReport rep;
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (static_cast<Eigen::Index>(params[b].size()) != analytic[b].size())
      throw Error("grad_check: block " + std::to_string(b) + " size mismatch");
    std::vector<std::size_t> coords(params[b].size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (opts.max_coords_per_block > 0 && coords.size() > opts.max_coords_per_block) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opts.max_coords_per_block);
    }
    for (std::size_t i : coords) {
      double& p = params[b][i];
      const double saved = p;
      p = saved + opts.h;
      const double up = objective();
      bool smooth = !same_piece || same_piece();
      p = saved - opts.h;
      const double down = objective();
      smooth = smooth && (!same_piece || same_piece());
      p = saved;
      if (!smooth) {
        ++rep.skipped;
        continue;
      }
      const double numeric = (up - down) / (2 * opts.h);
      rep.max_relative_error =
          std::max(rep.max_relative_error,
                   relative_error(analytic[b](static_cast<Eigen::Index>(i)), numeric, opts.denominator_floor));
      ++rep.checked;
    }
  }
  return rep;
}

/// Sign pattern of every LeakyReLU input recorded on `tape`.
inline std::vector<bool> activation_pattern(const Mlp& net, const Tape& tape) {
  std::vector<bool> s;
  for (std::size_t i = 0; i < tape.records.size() && i < net.layers.size(); ++i)
    if (std::holds_alternative<LeakyRelu>(net.layers[i])) {
      const Matrix& in = tape.records[i].input;
      for (Eigen::Index k = 0; k < in.size(); ++k) s.push_back(in.data()[k] > 0);
    }
  return s;
}

/// Gradient check of `loss` composed with `net` on `batch`. Runs in the
/// network's mode without updating running statistics; the terminal Sigmoid
/// is kept. `corrupt` lets tests tamper with the analytic gradients.
inline GradCheckReport grad_check_report(Mlp& net, const LossFn& loss, const Matrix& batch,
                                         const GradCheckOptions& opts = {},
                                         const std::function<void(Gradients&)>& corrupt = {}) {
  const ForwardOptions fo{.update_running_stats = false};
  Tape tape;
  const Matrix out = net.forward(batch, &tape, fo);
  Gradients g = net.backward(tape, loss(out).second);
  if (corrupt) corrupt(g);
  const std::vector<bool> base = activation_pattern(net, tape);
  std::vector<bool> current;
  auto objective = [&] {
    Tape t;
    const double l = loss(net.forward(batch, &t, fo)).first;
    current = activation_pattern(net, t);
    return l;
  };
  auto blocks = net.parameter_blocks();
  return check_gradients(blocks, g.params, objective, opts, [&] { return current == base; });
}

inline double grad_check(Mlp& net, const LossFn& loss, const Matrix& batch, const GradCheckOptions& opts = {},
                         const std::function<void(Gradients&)>& corrupt = {}) {
  return grad_check_report(net, loss, batch, opts, corrupt).max_relative_error;
}

// ---------------------------------------------------------------------------
// MLP1 container
//
//   "MLP1", u32 header length, JSON header
//   {"version":1,"layers":[...],"meta":{...}}, then f32 parameters in layer
//   order: Linear weight (row-major) and bias; BatchNorm gain, shift,
//   running mean, running variance.
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json describe_layers(const Mlp& net) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& layer : net.layers) {
    nlohmann::ordered_json j;
    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, Linear>) {
            j["type"] = "linear";
            j["in"] = l.in();
            j["out"] = l.out();
          } else if constexpr (std::is_same_v<T, BatchNorm>) {
            j["type"] = "batchnorm";
            j["width"] = l.width();
            j["eps"] = l.eps;
            j["momentum"] = l.momentum;
          } else if constexpr (std::is_same_v<T, LeakyRelu>) {
            j["type"] = "leaky_relu";
            j["slope"] = l.slope;
          } else if constexpr (std::is_same_v<T, Sigmoid>) {
            j["type"] = "sigmoid";
          } else {
            j["type"] = "tanh";
          }
        },
        layer);
    arr.push_back(std::move(j));
  }
  return arr;
}

inline std::string encode_mlp(const Mlp& net, const nlohmann::ordered_json& meta = nlohmann::ordered_json::object()) {
  nlohmann::ordered_json h;
  h["version"] = 1;
  h["mode"] = net.mode == Mode::kTraining ? "training" : "inference";
  h["layers"] = describe_layers(net);
  h["meta"] = meta;
  std::string out;
  detail::write_header(out, "MLP1", h.dump());
  auto put_vec = [&](const Vector& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) detail::put_f32(out, v(i));
  };
  for (const auto& layer : net.layers) {
    if (const auto* l = std::get_if<Linear>(&layer)) {
      for (Eigen::Index r = 0; r < l->weight.rows(); ++r)
        for (Eigen::Index c = 0; c < l->weight.cols(); ++c) detail::put_f32(out, l->weight(r, c));
      put_vec(l->bias);
    } else if (const auto* bn = std::get_if<BatchNorm>(&layer)) {
      put_vec(bn->gain);
      put_vec(bn->shift);
      put_vec(bn->running_mean);
      put_vec(bn->running_var);
    }
  }
  return out;
}

struct DecodedMlp {
  Mlp net;
  nlohmann::json meta;
};

inline DecodedMlp decode_mlp(std::string_view bytes) {
  detail::Reader r(bytes);
  const auto h = detail::read_header(r, "MLP1");
  DecodedMlp out;
  try {
    if (h.at("version").get<int>() != 1) throw FormatError("unsupported MLP1 version", 8);
    out.net.mode = h.value("mode", std::string("inference")) == "training" ? Mode::kTraining : Mode::kInference;
    out.meta = h.value("meta", nlohmann::json::object());
    for (const auto& j : h.at("layers")) {
      const auto type = j.at("type").get<std::string>();
      if (type == "linear") {
        out.net.layers.emplace_back(make_linear(j.at("in").get<int>(), j.at("out").get<int>()));
      } else if (type == "batchnorm") {
        auto bn = make_batchnorm(j.at("width").get<int>());
        bn.eps = j.at("eps").get<double>();
        bn.momentum = j.at("momentum").get<double>();
        out.net.layers.emplace_back(std::move(bn));
      } else if (type == "leaky_relu") {
        out.net.layers.emplace_back(LeakyRelu{j.at("slope").get<double>()});
      } else if (type == "sigmoid") {
        out.net.layers.emplace_back(Sigmoid{});
      } else if (type == "tanh") {
        out.net.layers.emplace_back(Tanh{});
      } else {
        throw FormatError("unknown layer type '" + type + "'", 8);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("invalid MLP1 header: ") + e.what(), 8);
  }
  auto get_vec = [&](Vector& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = r.f32("parameters");
  };
  for (auto& layer : out.net.layers) {
    if (auto* l = std::get_if<Linear>(&layer)) {
      for (Eigen::Index rr = 0; rr < l->weight.rows(); ++rr)
        for (Eigen::Index c = 0; c < l->weight.cols(); ++c) l->weight(rr, c) = r.f32("parameters");
      get_vec(l->bias);
    } else if (auto* bn = std::get_if<BatchNorm>(&layer)) {
      get_vec(bn->gain);
      get_vec(bn->shift);
      get_vec(bn->running_mean);
      get_vec(bn->running_var);
    }
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after MLP1 parameters", r.offset());
  out.net.validate();
  return out;
}

inline void save_mlp(const Mlp& net, const std::string& path,
                     const nlohmann::ordered_json& meta = nlohmann::ordered_json::object()) {
  write_file(path, encode_mlp(net, meta));
}

inline DecodedMlp load_mlp(const std::string& path) {
  try {
    return decode_mlp(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what(), e.offset());
  }
}

}  // namespace opengan::nn
