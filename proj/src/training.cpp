#include "hypermimo/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>

#include "hypermimo/errors.hpp"
#include "json.hpp"

namespace hypermimo {

using ad::Graph;
using ad::NodeId;
using ad::Tensor;

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(lr_start >= lr_end && lr_end > 0.0)) {
    throw ConfigError("train: need lr_start >= lr_end > 0");
  }
  if (!(snr_range_db.first <= snr_range_db.second)) {
    throw ConfigError("train: snr range is empty");
  }
  if (iterations < 1) throw ConfigError("train: detector needs at least one layer");
  if (validation_size < 1) throw ConfigError("train: validation_size must be >= 1");
}

double learning_rate(std::size_t step, std::size_t total_steps, double lr_start,
                     double lr_end) {
  if (total_steps <= 1) return lr_start;
  const double frac = std::min(1.0, static_cast<double>(step) /
                                        static_cast<double>(total_steps - 1));
  return lr_start * std::pow(lr_end / lr_start, frac);
}

double mse_loss(std::span<const CVector> soft, std::span<const CVector> x_true) {
  if (soft.size() != x_true.size() || soft.empty()) {
    throw DimensionError("mse_loss: batch sizes differ or are empty");
  }
  double acc = 0.0;
  for (std::size_t s = 0; s < soft.size(); ++s) {
    if (soft[s].size() != x_true[s].size()) {
      throw DimensionError("mse_loss: vector lengths differ");
    }
    for (std::size_t i = 0; i < soft[s].size(); ++i) acc += std::norm(soft[s][i] - x_true[s][i]);
  }
  return acc / static_cast<double>(soft.size());
}

namespace {

using Clock = std::chrono::steady_clock;

struct SampleBatch {
  std::vector<ChannelRealization> owned;
  std::vector<const ChannelRealization*> reals;
  std::vector<Transmission> tx;

  std::vector<CVector> y_star() const {
    std::vector<CVector> v;
    for (const auto& t : tx) v.push_back(t.y_star);
    return v;
  }
  std::vector<CVector> y() const {
    std::vector<CVector> v;
    for (const auto& t : tx) v.push_back(t.y);
    return v;
  }
  std::vector<CVector> x() const {
    std::vector<CVector> v;
    for (const auto& t : tx) v.push_back(t.x);
    return v;
  }
};

class Sampler {
 public:
  Sampler(const TrainConfig& cfg, const SystemConfig& sys) : cfg_(cfg), sys_(sys) {
    if (!cfg.fixed_realization && !cfg.random_drops) {
      model_.emplace(sys, cfg.drop);
    }
  }

  SampleBatch draw(std::size_t n, Rng& rng) const {
    SampleBatch b;
    if (cfg_.fixed_realization) {
      b.reals.assign(n, &*cfg_.fixed_realization);
    } else {
      std::uniform_real_distribution<double> snr(cfg_.snr_range_db.first,
                                                 cfg_.snr_range_db.second);
      b.owned.reserve(n);
      for (std::size_t s = 0; s < n; ++s) {
        const double snr_db = snr(rng);
        if (cfg_.shared_h_per_batch && s > 0) {
          b.owned.push_back(
              make_realization(b.owned.front().h, sigma_from_snr_db(snr_db)));
        } else if (cfg_.random_drops) {
          b.owned.push_back(
              ChannelModel(sys_, sample_drop(sys_, rng)).realize(snr_db, rng));
        } else {
          b.owned.push_back(model_->realize(snr_db, rng));
        }
      }
      for (const auto& r : b.owned) b.reals.push_back(&r);
    }
    for (const auto* r : b.reals) b.tx.push_back(transmit(sys_, *r, rng));
    return b;
  }

 private:
  const TrainConfig& cfg_;
  const SystemConfig& sys_;
  std::optional<ChannelModel> model_;
};

// The divergence reference is the mean loss of the first few steps; a single
// lucky first batch can have a near-zero loss.
class LossGuard {
 public:
  LossGuard(double factor, const char* who) : factor_(factor), who_(who) {}

  void check(double loss, std::size_t step) {
    if (!std::isfinite(loss)) {
      throw NumericError(std::string(who_) + ": non-finite loss at step " +
                         std::to_string(step));
    }
    if (count_ < kReferenceSteps) {
      sum_ += loss;
      ++count_;
      if (count_ < kReferenceSteps) return;
    }
    const double initial = sum_ / static_cast<double>(count_);
    if (loss > factor_ * initial) {
      throw NumericError(std::string(who_) + ": diverged at step " + std::to_string(step) +
                         " (loss " + std::to_string(loss) + ", initial " +
                         std::to_string(initial) + ")");
    }
  }

 private:
  static constexpr std::size_t kReferenceSteps = 10;
  double factor_;
  const char* who_;
  double sum_ = 0.0;
  std::size_t count_ = 0;
};

void log_step(const TrainConfig& cfg, TrainReport& report, std::size_t step,
              double loss, double lr) {
  const bool last = step + 1 == cfg.total_steps;
  if (cfg.log_every == 0 || (step % cfg.log_every != 0 && !last)) return;
  report.history.push_back({step, loss, lr});
  if (cfg.log) {
    *cfg.log << nlohmann::json{{"step", step}, {"loss", loss}, {"lr", lr}}.dump() << '\n';
  }
}

void log_validation(const TrainConfig& cfg, TrainReport& report, std::size_t step,
                    double mse) {
  report.validation.emplace_back(step, mse);
  if (cfg.log) {
    *cfg.log << nlohmann::json{{"step", step}, {"validation_mse", mse}}.dump() << '\n';
  }
}

bool eval_due(const TrainConfig& cfg, std::size_t step) {
  return cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 &&
         step + 1 != cfg.total_steps;
}

double elapsed_s(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

}  // namespace

ValidationSet make_validation_set(const SystemConfig& sys, const TrainConfig& cfg) {
  Rng rng = make_rng(cfg.validation_seed);
  ValidationSet set;
  if (cfg.fixed_realization) {
    set.reals.assign(1, *cfg.fixed_realization);
    for (std::size_t s = 0; s < cfg.validation_size; ++s) {
      set.tx.push_back(transmit(sys, set.reals[0], rng));
    }
    return set;
  }
  const ChannelModel model(sys, cfg.drop);
  for (std::size_t s = 0; s < cfg.validation_size; ++s) {
    set.reals.push_back(model.realize(cfg.validation_snr_db, rng));
    set.tx.push_back(transmit(sys, set.reals.back(), rng));
  }
  return set;
}

namespace {

template <typename SoftFn>
double validation_mse_impl(const ValidationSet& set, SoftFn&& soft) {
  double acc = 0.0;
  for (std::size_t s = 0; s < set.tx.size(); ++s) {
    const ChannelRealization& r = set.reals.size() == 1 ? set.reals[0] : set.reals[s];
    const CVector est = soft(r, set.tx[s]);
    for (std::size_t i = 0; i < est.size(); ++i) acc += std::norm(est[i] - set.tx[s].x[i]);
  }
  return acc / static_cast<double>(set.tx.size());
}

}  // namespace

double validation_mse(const HypernetParams& params, const ValidationSet& set,
                      const SystemConfig& sys) {
  std::optional<DetectorWeights> cached;
  return validation_mse_impl(set, [&](const ChannelRealization& r, const Transmission& t) {
    if (!cached || set.reals.size() != 1) cached = generate_weights(params, r);
    return mmnet_forward(*cached, r, t.y_star, sys.constellation).soft;
  });
}

double validation_mse(const OampnetWeights& weights, const ValidationSet& set,
                      const SystemConfig& sys) {
  return validation_mse_impl(set, [&](const ChannelRealization& r, const Transmission& t) {
    return oampnet_forward(weights, r.h, r.sigma, t.y, sys.constellation).soft;
  });
}

double validation_mse(const DetectorWeights& weights, const ValidationSet& set,
                      const SystemConfig& sys) {
  return validation_mse_impl(set, [&](const ChannelRealization& r, const Transmission& t) {
    return mmnet_forward(weights, r, t.y_star, sys.constellation).soft;
  });
}

std::pair<HypernetParams, TrainReport> train_hypermimo(const TrainConfig& cfg,
                                                       const SystemConfig& sys,
                                                       std::optional<HypernetParams> init) {
  cfg.validate();
  sys.validate();
  const auto start = Clock::now();
  Rng init_rng = make_rng(cfg.seed, 0);
  Rng rng = make_rng(cfg.seed, 1);

  HypernetParams params =
      init ? std::move(*init)
           : HypernetParams::init(sys.n_users, sys.n_rx, cfg.iterations, init_rng);
  params.validate();

  const Sampler sampler(cfg, sys);
  const ValidationSet val = make_validation_set(sys, cfg);
  TrainReport report;
  report.seed = cfg.seed;
  report.initial_validation_mse = validation_mse(params, val, sys);

  ad::AdamState adam;
  LossGuard guard(cfg.divergence_factor, "train_hypermimo");
  const std::size_t n = params.n_users, in = params.input_size();
  for (std::size_t step = 0; step < cfg.total_steps; ++step) {
    const SampleBatch batch = sampler.draw(cfg.batch_size, rng);
    const std::size_t b = batch.reals.size();

    Tensor features({b, in});
    for (std::size_t s = 0; s < b; ++s) {
      const auto f = hypernet_features(params, *batch.reals[s]);
      std::copy(f.begin(), f.end(), features.data.begin() + s * in);
    }

    Graph g;
    const HypernetNodes nodes = add_hypernet_parameters(g, params);
    const NodeId raw = hypernet_graph(g, nodes, g.constant(std::move(features)));
    const MmnetGraphWeights w =
        expand_weights_graph(g, raw, n, params.iterations, params.eps_psi);
    const auto ys = batch.y_star();
    const MmnetBatch mb = make_mmnet_batch(batch.reals, ys);
    const ComplexNode soft = mmnet_graph_forward(g, w, mb, sys.constellation);
    const NodeId loss = mse_loss_graph(g, soft, batch.x());

    const double value = g.value(loss)[0];
    guard.check(value, step);

    const auto grads = g.backward(loss);
    std::vector<Tensor> ps, gs;
    for (std::size_t l = 0; l < 3; ++l) {
      ps.push_back(std::move(params.layers[l].weights));
      ps.push_back(std::move(params.layers[l].bias));
      gs.push_back(grads.at(nodes.weights[l]));
      gs.push_back(grads.at(nodes.biases[l]));
    }
    const double lr = learning_rate(step, cfg.total_steps, cfg.lr_start, cfg.lr_end);
    ad::adam_step(adam, ps, gs, lr);
    for (std::size_t l = 0; l < 3; ++l) {
      params.layers[l].weights = std::move(ps[2 * l]);
      params.layers[l].bias = std::move(ps[2 * l + 1]);
    }

    log_step(cfg, report, step, value, lr);
    if (eval_due(cfg, step)) log_validation(cfg, report, step, validation_mse(params, val, sys));
  }

  report.final_validation_mse = validation_mse(params, val, sys);
  log_validation(cfg, report, cfg.total_steps, report.final_validation_mse);
  report.wall_clock_s = elapsed_s(start);
  return {std::move(params), std::move(report)};
}

std::pair<OampnetWeights, TrainReport> train_oampnet(const TrainConfig& cfg,
                                                     const SystemConfig& sys) {
  cfg.validate();
  sys.validate();
  const auto start = Clock::now();
  Rng rng = make_rng(cfg.seed, 1);
  const std::size_t t_max = cfg.iterations;

  OampnetWeights weights = OampnetWeights::unity(t_max);
  const Sampler sampler(cfg, sys);
  const ValidationSet val = make_validation_set(sys, cfg);
  TrainReport report;
  report.seed = cfg.seed;
  report.initial_validation_mse = validation_mse(weights, val, sys);

  ad::AdamState adam;
  LossGuard guard(cfg.divergence_factor, "train_oampnet");
  for (std::size_t step = 0; step < cfg.total_steps; ++step) {
    const SampleBatch batch = sampler.draw(cfg.batch_size, rng);
    const auto ys = batch.y();
    const OampBatch ob = make_oamp_batch(batch.reals, ys);

    Graph g;
    const NodeId gamma = g.parameter(Tensor({t_max}, weights.gamma));
    const NodeId theta = g.parameter(Tensor({t_max}, weights.theta));
    const ComplexNode soft =
        oampnet_graph_forward(g, gamma, theta, t_max, ob, sys.constellation);
    const NodeId loss = mse_loss_graph(g, soft, batch.x());

    const double value = g.value(loss)[0];
    guard.check(value, step);

    const auto grads = g.backward(loss);
    std::vector<Tensor> ps{Tensor({t_max}, weights.gamma), Tensor({t_max}, weights.theta)};
    const std::vector<Tensor> gs{grads.at(gamma), grads.at(theta)};
    const double lr = learning_rate(step, cfg.total_steps, cfg.lr_start, cfg.lr_end);
    ad::adam_step(adam, ps, gs, lr);
    weights.gamma = ps[0].data;
    weights.theta = ps[1].data;

    log_step(cfg, report, step, value, lr);
    if (eval_due(cfg, step)) log_validation(cfg, report, step, validation_mse(weights, val, sys));
  }

  report.final_validation_mse = validation_mse(weights, val, sys);
  log_validation(cfg, report, cfg.total_steps, report.final_validation_mse);
  report.wall_clock_s = elapsed_s(start);
  return {std::move(weights), std::move(report)};
}

DetectorWeights mmnet_single_init(const ChannelRealization& real, std::size_t iterations) {
  const ComplexMatrix& r = real.qr.r_a;
  const ComplexMatrix theta = cplx(1.0 / frobenius_norm_sq(r)) * r.adjoint();
  DetectorWeights w;
  for (std::size_t t = 0; t < iterations; ++t) {
    w.theta.push_back(theta);
    w.psi.emplace_back(r.rows(), 1.0);
  }
  return w;
}

DetectorWeights train_mmnet_single(const ChannelRealization& real,
                                   const SystemConfig& sys,
                                   const MmnetSingleConfig& cfg) {
  if (cfg.batch_size < 1 || cfg.iterations < 1 || !(cfg.lr > 0.0)) {
    throw ConfigError("train_mmnet_single: invalid configuration");
  }
  const std::size_t n = real.qr.r_a.rows(), t_max = cfg.iterations;
  const DetectorWeights init = mmnet_single_init(real, t_max);

  // Trainable tensors per layer: Theta re, Theta im, raw psi with
  // psi = |raw| + eps.
  std::vector<Tensor> ps;
  for (std::size_t t = 0; t < t_max; ++t) {
    const auto re = init.theta[t].re(), im = init.theta[t].im();
    ps.emplace_back(ad::Shape{n, n}, std::vector<double>(re.begin(), re.end()));
    ps.emplace_back(ad::Shape{n, n}, std::vector<double>(im.begin(), im.end()));
    ps.emplace_back(ad::Shape{n}, 1.0 - kPsiEpsilon);
  }

  Rng rng = make_rng(cfg.seed, 7);
  ad::AdamState adam;
  LossGuard guard(TrainConfig{}.divergence_factor, "train_mmnet_single");
  const std::vector<const ChannelRealization*> reals(cfg.batch_size, &real);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::vector<CVector> ys, xs;
    for (std::size_t s = 0; s < cfg.batch_size; ++s) {
      Transmission tx = transmit(sys, real, rng);
      ys.push_back(std::move(tx.y_star));
      xs.push_back(std::move(tx.x));
    }
    const MmnetBatch mb = make_mmnet_batch(reals, ys, true);

    Graph g;
    std::vector<NodeId> nodes;
    MmnetGraphWeights w;
    for (std::size_t t = 0; t < t_max; ++t) {
      const NodeId re = g.parameter(ps[3 * t]);
      const NodeId im = g.parameter(ps[3 * t + 1]);
      const NodeId raw = g.parameter(ps[3 * t + 2]);
      nodes.insert(nodes.end(), {re, im, raw});
      w.theta.push_back({re, im});
      w.psi.push_back(g.add_const(g.abs(raw), kPsiEpsilon));
    }
    const ComplexNode soft = mmnet_graph_forward(g, w, mb, sys.constellation);
    const NodeId loss = mse_loss_graph(g, soft, xs);
    const double value = g.value(loss)[0];
    guard.check(value, step);

    const auto grads = g.backward(loss);
    std::vector<Tensor> gs;
    for (NodeId id : nodes) gs.push_back(grads.at(id));
    ad::adam_step(adam, ps, gs, cfg.lr);
  }

  DetectorWeights out;
  for (std::size_t t = 0; t < t_max; ++t) {
    ComplexMatrix theta(n, n);
    std::copy(ps[3 * t].data.begin(), ps[3 * t].data.end(), theta.re().begin());
    std::copy(ps[3 * t + 1].data.begin(), ps[3 * t + 1].data.end(), theta.im().begin());
    out.theta.push_back(std::move(theta));
    std::vector<double> psi(n);
    for (std::size_t i = 0; i < n; ++i) psi[i] = std::fabs(ps[3 * t + 2][i]) + kPsiEpsilon;
    out.psi.push_back(std::move(psi));
  }
  return out;
}

void save_oampnet(const std::filesystem::path& path, const OampnetWeights& w) {
  nlohmann::json j{{"format", "hypermimo-oampnet"},
                   {"layout_version", kModelLayoutVersion},
                   {"gamma", w.gamma},
                   {"theta", w.theta}};
  std::ofstream os(path);
  if (!os) throw IoError("cannot write model file " + path.string());
  os << j.dump() << '\n';
}

OampnetWeights load_oampnet(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read model file " + path.string());
  try {
    nlohmann::json j;
    is >> j;
    if (j.value("format", "") != "hypermimo-oampnet" ||
        j.value("layout_version", -1) != kModelLayoutVersion) {
      throw IoError(path.string() + ": not an OAMPNet model file");
    }
    OampnetWeights w{j.at("gamma").get<std::vector<double>>(),
                     j.at("theta").get<std::vector<double>>()};
    if (w.gamma.empty() || w.gamma.size() != w.theta.size()) {
      throw IoError(path.string() + ": gamma/theta length mismatch");
    }
    return w;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void write_report_jsonl(std::ostream& os, const TrainReport& report) {
  for (const auto& h : report.history) {
    os << nlohmann::json{{"step", h.step}, {"loss", h.loss}, {"lr", h.lr}}.dump() << '\n';
  }
  for (const auto& [step, mse] : report.validation) {
    os << nlohmann::json{{"step", step}, {"validation_mse", mse}}.dump() << '\n';
  }
  os << nlohmann::json{{"initial_validation_mse", report.initial_validation_mse},
                       {"final_validation_mse", report.final_validation_mse},
                       {"wall_clock_s", report.wall_clock_s},
                       {"seed", report.seed}}
            .dump()
     << '\n';
}

}  // namespace hypermimo
