#pragma once

#include "opengan/data.hpp"
#include "opengan/metrics.hpp"
#include "opengan/models.hpp"
#include "opengan/nn.hpp"

#include <optional>

namespace opengan {

enum class GeneratorLoss { kMinimax, kNonSaturating };

struct BatchSizes {
  int n_closed = 64;
  int n_open = 32;
  int n_fake = 32;
};

struct OptimizerConfig {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;

  nn::AdamState make_state() const { return {lr, beta1, beta2, eps}; }
};

/// Coefficients and schedule for the closed/open/fake objective
///   closed term + lambda_o * real-open term + lambda_g * fake-open term.
/// lambda_g = 0 is the plain binary classifier (CLS); lambda_o = 0 trains a
/// plain GAN on closed features (OpenGAN-0).
struct TrainConfig {
  double lambda_o = 1.0;
  double lambda_g = 0.2;
  int epochs = 50;
  BatchSizes batch;
  OptimizerConfig opt_d;
  OptimizerConfig opt_g;
  std::uint64_t seed = 0;
  GeneratorLoss generator_loss = GeneratorLoss::kNonSaturating;
  int checkpoint_every = 1;
  int latent_dim = kDefaultLatentDim;
  bool scale_features = true;

  bool trains_generator() const { return lambda_g > 0; }

  static TrainConfig opengan() { return {}; }

  static TrainConfig cls() {
    TrainConfig c;
    c.lambda_g = 0;
    c.batch = {64, 32, 0};
    return c;
  }

  static TrainConfig opengan0() {
    TrainConfig c;
    c.lambda_o = 0;
    c.lambda_g = 1.0;
    c.batch = {64, 0, 64};
    return c;
  }

  void validate(bool has_open_rows) const {
    if (!(lambda_o >= 0) || !(lambda_g >= 0)) throw Error("TrainConfig: lambdas must be >= 0");
    if (epochs < 1) throw Error("TrainConfig: epochs must be >= 1");
    if (checkpoint_every < 1) throw Error("TrainConfig: checkpoint_every must be >= 1");
    if (batch.n_closed < 1) throw Error("TrainConfig: n_closed must be >= 1");
    if (batch.n_open < 0 || batch.n_fake < 0) throw Error("TrainConfig: batch counts must be >= 0");
    if ((batch.n_open > 0) != has_open_rows)
      throw Error(has_open_rows ? "TrainConfig: open-train rows given but n_open = 0"
                                : "TrainConfig: n_open > 0 but no open-train rows provided");
    if (lambda_o > 0 && !has_open_rows) throw Error("TrainConfig: lambda_o > 0 requires open-train rows");
    if (lambda_g == 0 && batch.n_fake != 0) throw Error("TrainConfig: lambda_g = 0 requires n_fake = 0");
    if (lambda_g > 0 && batch.n_fake == 0) throw Error("TrainConfig: lambda_g > 0 requires n_fake > 0");
    if (batch.n_closed + batch.n_open + batch.n_fake < 2) throw Error("TrainConfig: batch must hold >= 2 rows");
    if (latent_dim < 1) throw Error("TrainConfig: latent_dim must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const OptimizerConfig& o) {
  j = {{"lr", o.lr}, {"beta1", o.beta1}, {"beta2", o.beta2}, {"eps", o.eps}};
}

inline void from_json(const nlohmann::json& j, OptimizerConfig& o) {
  o.lr = j.value("lr", o.lr);
  o.beta1 = j.value("beta1", o.beta1);
  o.beta2 = j.value("beta2", o.beta2);
  o.eps = j.value("eps", o.eps);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"lambda_o", c.lambda_o},
       {"lambda_g", c.lambda_g},
       {"epochs", c.epochs},
       {"n_closed", c.batch.n_closed},
       {"n_open", c.batch.n_open},
       {"n_fake", c.batch.n_fake},
       {"opt_d", c.opt_d},
       {"opt_g", c.opt_g},
       {"seed", c.seed},
       {"generator_loss", c.generator_loss == GeneratorLoss::kMinimax ? "minimax" : "non-saturating"},
       {"checkpoint_every", c.checkpoint_every},
       {"latent_dim", c.latent_dim},
       {"scale_features", c.scale_features}};
}

/// Reads the flat keys present in `j`; absent keys keep the values of `c`.
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.lambda_o = j.value("lambda_o", c.lambda_o);
  c.lambda_g = j.value("lambda_g", c.lambda_g);
  c.epochs = j.value("epochs", c.epochs);
  c.batch.n_closed = j.value("n_closed", c.batch.n_closed);
  c.batch.n_open = j.value("n_open", c.batch.n_open);
  c.batch.n_fake = j.value("n_fake", c.batch.n_fake);
  if (j.contains("opt_d")) from_json(j.at("opt_d"), c.opt_d);
  if (j.contains("opt_g")) from_json(j.at("opt_g"), c.opt_g);
  c.seed = j.value("seed", c.seed);
  if (j.contains("generator_loss")) {
    const auto m = j.at("generator_loss").get<std::string>();
    if (m == "minimax") c.generator_loss = GeneratorLoss::kMinimax;
    else if (m == "non-saturating") c.generator_loss = GeneratorLoss::kNonSaturating;
    else throw Error("unknown generator_loss '" + m + "'");
  }
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.scale_features = j.value("scale_features", c.scale_features);
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

struct DLoss {
  double loss = 0;
  Vector grad_closed, grad_open, grad_fake;
};

/// Discriminator loss on logits: the negated objective, so that gradient
/// descent on D maximizes it. Empty blocks contribute nothing.
inline DLoss d_loss(const Vector& logits_closed, const Vector& logits_open, const Vector& logits_fake, double lambda_o,
                    double lambda_g) {
  const auto c = nn::bce_terms(logits_closed, nn::Target::kClosed);
  const auto o = nn::bce_terms(logits_open, nn::Target::kOpen);
  const auto f = nn::bce_terms(logits_fake, nn::Target::kOpen);
  DLoss out;
  out.loss = c.loss + lambda_o * o.loss + lambda_g * f.loss;
  out.grad_closed = c.grad;
  out.grad_open = lambda_o * o.grad;
  out.grad_fake = lambda_g * f.grad;
  return out;
}

/// Generator loss on D's logits for generated rows. Literal mode minimizes
/// mean log(1 - D(G(z))) = -mean softplus(l); non-saturating mode minimizes
/// -mean log D(G(z)) = mean softplus(-l).
inline nn::LossTerms g_loss(const Vector& logits_fake, GeneratorLoss mode) {
  if (logits_fake.size() == 0) throw Error("g_loss: empty fake block");
  if (mode == GeneratorLoss::kNonSaturating) return nn::bce_terms(logits_fake, nn::Target::kClosed);
  auto t = nn::bce_terms(logits_fake, nn::Target::kOpen);
  t.loss = -t.loss;
  t.grad = -t.grad;
  return t;
}

// ---------------------------------------------------------------------------
// Batches
// ---------------------------------------------------------------------------

struct Batch {
  Matrix closed;
  Matrix open;
  Matrix fake;

  Eigen::Index size() const { return closed.rows() + open.rows() + fake.rows(); }

  Matrix stacked() const {
    Matrix x(size(), closed.cols());
    if (closed.rows()) x.topRows(closed.rows()) = closed;
    if (open.rows()) x.middleRows(closed.rows(), open.rows()) = open;
    if (fake.rows()) x.bottomRows(fake.rows()) = fake;
    return x;
  }
};

inline Matrix sample_rows(const Matrix& pool, int n, std::mt19937_64& rng) {
  if (n > 0 && pool.rows() == 0) throw Error("sample_rows: empty pool");
  Matrix out(n, pool.cols());
  if (n == 0) return out;
  std::uniform_int_distribution<Eigen::Index> pick(0, pool.rows() - 1);
  for (int i = 0; i < n; ++i) out.row(i) = pool.row(pick(rng));
  return out;
}

/// Closed and open rows are drawn uniformly with replacement; fake rows are
/// generator outputs on fresh latents (training-mode BatchNorm, running
/// statistics untouched).
inline Batch make_batch(const Matrix& closed_pool, const Matrix* open_pool, nn::Mlp* generator,
                        const TrainConfig& cfg, std::mt19937_64& rng) {
  if (cfg.batch.n_open > 0 && (!open_pool || open_pool->rows() == 0))
    throw Error("make_batch: n_open > 0 with an empty open pool");
  if ((cfg.batch.n_fake > 0) != (generator != nullptr))
    throw Error("make_batch: a generator is required iff n_fake > 0");
  Batch b;
  b.closed = sample_rows(closed_pool, cfg.batch.n_closed, rng);
  b.open = open_pool ? sample_rows(*open_pool, cfg.batch.n_open, rng) : Matrix(0, closed_pool.cols());
  if (generator) {
    const Matrix z = sample_latent(cfg.batch.n_fake, generator->input_width(), rng);
    b.fake = generator->forward(z, nullptr, {.update_running_stats = false});
  } else {
    b.fake = Matrix(0, closed_pool.cols());
  }
  return b;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

struct Diagnostics {
  double d_loss = 0;
  double g_loss = 0;
  double fake_vs_real_acc = 0;
};

struct Checkpoint {
  int epoch = 0;
  nn::Mlp discriminator;
  std::optional<nn::Mlp> generator;
  Diagnostics diagnostics;
};

struct CheckpointStore {
  FeatureScaler scaler;
  int latent_dim = kDefaultLatentDim;
  std::vector<Checkpoint> checkpoints;
  std::vector<Diagnostics> history;  // one entry per epoch

  bool empty() const { return checkpoints.empty(); }

  friend bool operator==(const CheckpointStore& a, const CheckpointStore& b) {
    if (!(a.scaler == b.scaler) || a.checkpoints.size() != b.checkpoints.size() ||
        a.history.size() != b.history.size())
      return false;
    for (std::size_t i = 0; i < a.checkpoints.size(); ++i) {
      const auto &x = a.checkpoints[i], &y = b.checkpoints[i];
      if (x.epoch != y.epoch || !(x.discriminator == y.discriminator) ||
          x.generator.has_value() != y.generator.has_value() || (x.generator && !(*x.generator == *y.generator)) ||
          x.diagnostics.d_loss != y.diagnostics.d_loss || x.diagnostics.g_loss != y.diagnostics.g_loss ||
          x.diagnostics.fake_vs_real_acc != y.diagnostics.fake_vs_real_acc)
        return false;
    }
    for (std::size_t i = 0; i < a.history.size(); ++i)
      if (a.history[i].d_loss != b.history[i].d_loss || a.history[i].g_loss != b.history[i].g_loss ||
          a.history[i].fake_vs_real_acc != b.history[i].fake_vs_real_acc)
        return false;
    return true;
  }
};

namespace detail {

inline Vector logits_of(nn::Mlp& d, const Matrix& x, nn::Tape* tape, bool update_stats) {
  return d.forward(x, tape, {.update_running_stats = update_stats, .skip_terminal_sigmoid = true}).col(0);
}

// Accuracy of inference-mode D on real closed rows (should fire) against
// negatives (should not fire).
inline double real_vs_negative_accuracy(const nn::Mlp& d, const Matrix& real, const Matrix& negatives) {
  const Vector lr = d.predict(real, true).col(0);
  const Vector ln = d.predict(negatives, true).col(0);
  const auto correct = (lr.array() > 0).count() + (ln.array() <= 0).count();
  return static_cast<double>(correct) / static_cast<double>(lr.size() + ln.size());
}

inline nn::Mlp snapshot(const nn::Mlp& net) {
  nn::Mlp s = net;
  s.mode = nn::Mode::kInference;
  return s;
}

}  // namespace detail

/// Fake-vs-real accuracy of a checkpoint: a closed-train sample against a
/// fresh generated batch. Without a generator, open-train rows serve as the
/// negatives.
inline double fake_vs_real_accuracy(const Checkpoint& ck, const Matrix& scaled_closed, const Matrix* scaled_open,
                                    int n, std::mt19937_64& rng) {
  const Matrix real = sample_rows(scaled_closed, n, rng);
  Matrix negatives;
  if (ck.generator) {
    nn::Mlp g = *ck.generator;
    g.mode = nn::Mode::kTraining;
    negatives = g.forward(sample_latent(n, g.input_width(), rng), nullptr, {.update_running_stats = false});
  } else if (scaled_open && scaled_open->rows() > 0) {
    negatives = sample_rows(*scaled_open, n, rng);
  } else {
    return 0.0;
  }
  return detail::real_vs_negative_accuracy(ck.discriminator, real, negatives);
}

/// Alternating minimax training. Each step performs one D update on the
/// combined loss, then (when lambda_g > 0) one G update with fresh latents
/// through the updated D. A snapshot of D (and G) is stored every
/// `checkpoint_every` epochs. Deterministic in cfg.seed.
inline CheckpointStore train(const TrainConfig& cfg, const FeatureDataset& closed_train,
                             const FeatureDataset* open_train = nullptr) {
  if (closed_train.empty()) throw Error("train: closed_train is empty");
  const bool has_open = open_train && !open_train->empty() && cfg.lambda_o > 0;
  if (cfg.lambda_o > 0 && !(open_train && !open_train->empty()))
    throw Error("train: lambda_o > 0 requires open-train rows");
  cfg.validate(has_open);
  if (open_train && open_train->dim != closed_train.dim) throw Error("train: open/closed dim mismatch");

  CheckpointStore store;
  store.scaler = cfg.scale_features ? FeatureScaler::fit(closed_train.rows) : FeatureScaler::identity(closed_train.dim);
  store.latent_dim = cfg.latent_dim;
  const Matrix closed = store.scaler.apply(closed_train.rows);
  const Matrix open = has_open ? store.scaler.apply(open_train->rows) : Matrix(0, closed_train.dim);

  std::mt19937_64 init_rng(derive_seed(cfg.seed, "init"));
  std::mt19937_64 rng(derive_seed(cfg.seed, "train"));
  std::mt19937_64 diag_rng(derive_seed(cfg.seed, "diagnostics"));

  nn::Mlp d = build_discriminator(closed_train.dim, init_rng);
  std::optional<nn::Mlp> g;
  if (cfg.trains_generator()) g = build_generator(closed_train.dim, init_rng, cfg.latent_dim);
  nn::AdamState adam_d = cfg.opt_d.make_state();
  nn::AdamState adam_g = cfg.opt_g.make_state();

  const auto n_c = static_cast<Eigen::Index>(cfg.batch.n_closed);
  const auto n_o = static_cast<Eigen::Index>(has_open ? cfg.batch.n_open : 0);
  const auto n_f = static_cast<Eigen::Index>(cfg.batch.n_fake);
  const int steps = static_cast<int>((closed.rows() + n_c - 1) / n_c);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double d_sum = 0, g_sum = 0;
    for (int step = 0; step < steps; ++step) {
      auto fail = [&](const char* what, double v) {
        throw Error(std::string("non-finite ") + what + " (" + format_real(v) + ") at epoch " + std::to_string(epoch) +
                    ", step " + std::to_string(step));
      };
      Batch batch = make_batch(closed, has_open ? &open : nullptr, g ? &*g : nullptr, cfg, rng);

      // D step.
      nn::Tape tape;
      const Vector logits = detail::logits_of(d, batch.stacked(), &tape, true);
      const DLoss dl = d_loss(logits.head(n_c), logits.segment(n_c, n_o), logits.tail(n_f), cfg.lambda_o, cfg.lambda_g);
      if (!std::isfinite(dl.loss)) fail("discriminator loss", dl.loss);
      Matrix out_grad(logits.size(), 1);
      out_grad.col(0) << dl.grad_closed, dl.grad_open, dl.grad_fake;
      const nn::Gradients gd = d.backward(tape, out_grad);
      nn::adam_step(adam_d, d.parameter_blocks(), gd.params);
      d_sum += dl.loss;

      // G step through the updated D; the same real rows keep D's batch
      // statistics comparable to the D step.
      if (g) {
        nn::Tape g_tape;
        batch.fake = g->forward(sample_latent(n_f, cfg.latent_dim, rng), &g_tape);
        nn::Tape d_tape;
        const Vector lg = detail::logits_of(d, batch.stacked(), &d_tape, false);
        const nn::LossTerms gl = g_loss(lg.tail(n_f), cfg.generator_loss);
        if (!std::isfinite(gl.loss)) fail("generator loss", gl.loss);
        Matrix d_out = Matrix::Zero(lg.size(), 1);
        d_out.col(0).tail(n_f) = gl.grad;
        const Matrix fake_grad = d.backward(d_tape, d_out).input.bottomRows(n_f);
        const nn::Gradients gg = g->backward(g_tape, fake_grad);
        nn::adam_step(adam_g, g->parameter_blocks(), gg.params);
        g_sum += gl.loss;
      }
    }

    Checkpoint ck{epoch, detail::snapshot(d), g ? std::optional<nn::Mlp>(detail::snapshot(*g)) : std::nullopt, {}};
    ck.diagnostics.d_loss = d_sum / steps;
    ck.diagnostics.g_loss = g ? g_sum / steps : 0.0;
    const int n_diag = static_cast<int>(std::max(n_c, std::max(n_o, n_f)));
    ck.diagnostics.fake_vs_real_acc = fake_vs_real_accuracy(ck, closed, has_open ? &open : nullptr, n_diag, diag_rng);
    store.history.push_back(ck.diagnostics);
    if (epoch % cfg.checkpoint_every == 0) store.checkpoints.push_back(std::move(ck));
  }
  return store;
}

/// Open-vs-closed AUROC of one discriminator on raw (unscaled) rows.
inline double discriminator_auroc(const nn::Mlp& d, const FeatureScaler& scaler, const Matrix& closed_rows,
                                  const Matrix& open_rows) {
  return auroc(ScoreVector::from_split(discriminator_open_scores(d, scaler.apply(closed_rows)),
                                       discriminator_open_scores(d, scaler.apply(open_rows))));
}

struct DiagnosticsRow {
  int epoch = 0;
  double fake_vs_real_acc = 0;
  double val_auroc = 0;
};

/// Per snapshot: fake-vs-real accuracy on a fresh batch and validation
/// open-vs-closed AUROC (the training-vs-testing scatter data).
inline std::vector<DiagnosticsRow> diagnostics_table(const CheckpointStore& store, const FeatureDataset& closed_train,
                                                     const FeatureDataset& val_closed, const FeatureDataset& val_open,
                                                     std::uint64_t seed, int n = 64) {
  if (store.empty()) throw Error("diagnostics_table: empty checkpoint store");
  const Matrix closed = store.scaler.apply(closed_train.rows);
  std::vector<DiagnosticsRow> rows;
  for (const auto& ck : store.checkpoints) {
    std::mt19937_64 rng(derive_seed(seed, "diagnostics-table", static_cast<std::uint64_t>(ck.epoch)));
    rows.push_back({ck.epoch, fake_vs_real_accuracy(ck, closed, nullptr, n, rng),
                    discriminator_auroc(ck.discriminator, store.scaler, val_closed.rows, val_open.rows)});
  }
  return rows;
}

inline std::string diagnostics_table_csv(const std::vector<DiagnosticsRow>& rows) {
  std::string s = "epoch,fake_vs_real_acc,val_auroc\n";
  for (const auto& r : rows)
    s += std::to_string(r.epoch) + "," + format_real(r.fake_vs_real_acc) + "," + format_real(r.val_auroc) + "\n";
  return s;
}

/// Per-epoch training log: epoch,d_loss,g_loss,fake_vs_real_acc.
inline std::string history_csv(const CheckpointStore& store) {
  std::string s = "epoch,d_loss,g_loss,fake_vs_real_acc\n";
  for (std::size_t i = 0; i < store.history.size(); ++i) {
    const auto& h = store.history[i];
    s += std::to_string(i + 1) + "," + format_real(h.d_loss) + "," + format_real(h.g_loss) + "," +
         format_real(h.fake_vs_real_acc) + "\n";
  }
  return s;
}

}  // namespace opengan
