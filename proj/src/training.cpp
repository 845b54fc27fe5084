#include "icl/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>

#include "icl/errors.hpp"
#include "icl/parallel.hpp"

namespace icl {

RiskEstimate RiskEstimate::from_samples(std::vector<double> samples, int n, std::string predictor) {
  RiskEstimate r;
  r.J = static_cast<int>(samples.size());
  r.n = n;
  r.predictor = std::move(predictor);
  if (!samples.empty()) {
    r.mean = pairwise_sum(samples) / static_cast<double>(samples.size());
    if (samples.size() >= 2) {
      std::vector<double> sq(samples.size());
      for (std::size_t i = 0; i < samples.size(); ++i) sq[i] = (samples[i] - r.mean) * (samples[i] - r.mean);
      const double var = pairwise_sum(sq) / static_cast<double>(samples.size() - 1);
      r.se = std::sqrt(var / static_cast<double>(samples.size()));
    }
  }
  r.samples = std::move(samples);
  return r;
}

RiskEstimate paired_difference(const RiskEstimate& a, const RiskEstimate& b) {
  if (a.samples.size() != b.samples.size()) throw ShapeError("paired estimates need the same episodes");
  std::vector<double> diff(a.samples.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = a.samples[i] - b.samples[i];
  return RiskEstimate::from_samples(std::move(diff), a.n, a.predictor + "-" + b.predictor);
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (steps < 0) throw ValidationError("steps must be >= 0");
  if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ValidationError("Adam betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ValidationError("Adam eps must be positive");
  if (!regenerate && T < 1) throw ValidationError("fixed-corpus training needs T >= 1");
  if (n < 1) throw ValidationError("training context length n must be >= 1");
  if (n_min < 0 || n_min > n) throw ValidationError("n_min must lie in [0, n]");
  if (micro_batch < 1) throw ValidationError("micro_batch must be >= 1");
  if (val_every < 0 || val_J < 1) throw ValidationError("validation needs val_every >= 0 and val_J >= 1");
  if (grad_clip < 0.0) throw ValidationError("grad_clip must be >= 0");
  if (warmup_steps < 0) throw ValidationError("warmup_steps must be >= 0");
}

double TrainConfig::epochs() const {
  if (regenerate || T == 0) return 0.0;
  return static_cast<double>(steps) * batch_size / static_cast<double>(T);
}

double TrainConfig::lr_at(long long step) const {
  if (warmup_steps > 0 && step < warmup_steps) return learning_rate * static_cast<double>(step + 1) / warmup_steps;
  if (schedule == Schedule::constant || steps <= warmup_steps) return learning_rate;
  const double frac = static_cast<double>(step - warmup_steps) / static_cast<double>(steps - warmup_steps);
  return 0.5 * learning_rate * (1.0 + std::cos(std::numbers::pi * frac));
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"T", c.T},
          {"batch_size", c.batch_size},
          {"steps", c.steps},
          {"optimizer", c.optimizer == OptimizerKind::adam ? "adam" : "sgd"},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps},
          {"momentum", c.momentum},
          {"learning_rate", c.learning_rate},
          {"schedule", c.schedule == Schedule::cosine ? "cosine" : "constant"},
          {"warmup_steps", c.warmup_steps},
          {"grad_clip", c.grad_clip},
          {"seed", c.seed},
          {"regenerate", c.regenerate},
          {"n", c.n},
          {"n_min", c.n_min},
          {"micro_batch", c.micro_batch},
          {"val_every", c.val_every},
          {"val_J", c.val_J}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.T = j.value("T", c.T);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.steps = j.value("steps", c.steps);
  if (j.contains("optimizer")) {
    const auto o = j.at("optimizer").get<std::string>();
    if (o == "adam") c.optimizer = OptimizerKind::adam;
    else if (o == "sgd") c.optimizer = OptimizerKind::sgd;
    else throw ConfigError("unknown optimizer '" + o + "'");
  }
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.momentum = j.value("momentum", c.momentum);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  if (j.contains("schedule")) {
    const auto s = j.at("schedule").get<std::string>();
    if (s == "cosine") c.schedule = Schedule::cosine;
    else if (s == "constant") c.schedule = Schedule::constant;
    else throw ConfigError("unknown schedule '" + s + "'");
  }
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.seed = j.value("seed", c.seed);
  c.regenerate = j.value("regenerate", c.regenerate);
  c.n = j.value("n", c.n);
  c.n_min = j.value("n_min", c.n_min);
  c.micro_batch = j.value("micro_batch", c.micro_batch);
  c.val_every = j.value("val_every", c.val_every);
  c.val_J = j.value("val_J", c.val_J);
  return c;
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FileError("cannot write " + path.string());
  out.precision(17);
  out << "step,loss,lr,val_risk\n";
  for (const auto& r : rows) {
    out << r.step << ',' << r.loss << ',' << r.lr << ',';
    if (r.val_risk) out << *r.val_risk;
    out << '\n';
  }
}

std::vector<double> TrainLog::smoothed(int window) const {
  std::vector<double> out;
  out.reserve(rows.size());
  const double a = 1.0 / std::max(1, window);
  double s = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    s = i == 0 ? rows[i].loss : (1.0 - a) * s + a * rows[i].loss;
    out.push_back(s);
  }
  return out;
}

double batch_loss_and_grad(const TransformerParams& params, const std::vector<const Episode*>& episodes,
                           std::vector<Matrix>* grads) {
  Tape tape;
  const auto vars = register_params(tape, params);
  const auto Z = tape.constant(embed_batch(episodes, params.cfg.d_model, params.cfg.N));
  const auto pred = tf_forward_tape(tape, vars, params.cfg, Z);
  Tensor target({static_cast<int>(episodes.size())}, 0.0);
  for (std::size_t b = 0; b < episodes.size(); ++b) target.data[b] = episodes[b]->target;
  const auto loss = tape.mse_loss(pred, target);
  const double value = tape.value(loss).data[0];
  if (grads) {
    tape.backward(loss);
    grads->clear();
    for (const auto& v : vars) grads->push_back(to_matrix(tape.grad(v)));
  }
  return value;
}

namespace {

struct Optimizer {
  const TrainConfig& cfg;
  std::vector<Matrix> m, v;
  long long t = 0;

  void step(std::vector<Matrix*>& params, const std::vector<Matrix>& g, double lr) {
    ++t;
    if (cfg.optimizer == OptimizerKind::sgd) {
      for (std::size_t k = 0; k < params.size(); ++k) {
        m[k] = cfg.momentum * m[k] + g[k];
        *params[k] -= lr * m[k];
      }
      return;
    }
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t k = 0; k < params.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k].cwiseProduct(g[k]);
      Matrix& p = *params[k];
      for (Eigen::Index i = 0; i < p.size(); ++i) {
        const double mh = m[k].data()[i] / c1;
        const double vh = v[k].data()[i] / c2;
        p.data()[i] -= lr * mh / (std::sqrt(vh) + cfg.eps);
      }
    }
  }
};

}  // namespace

TrainResult erm_train(const MixtureSpec& prior, const TFConfig& tf, const TrainConfig& cfg, const NoiseSpec& noise,
                      const DomainSampler& sampler, const std::optional<ResumeFrom>& resume,
                      const StepCallback& on_step) {
  prior.validate();
  tf.validate();
  cfg.validate();
  if (prior.input_dim() != tf.d) throw ValidationError("prior input dimension differs from the transformer's d");
  if (cfg.n > tf.N) throw ContextLengthError("training context length exceeds N");
  const auto started = std::chrono::steady_clock::now();

  TrainResult out;
  if (resume) {
    if (!(resume->params.cfg == tf)) throw ValidationError("resume checkpoint has a different architecture");
    out.params = resume->params;
    out.state = resume->state;
  } else {
    Rng init(derive_seed(cfg.seed, 0x1717));
    out.params = init_params(tf, InitScheme::gaussian, init);
  }
  auto tensors = out.params.tensors();
  Optimizer opt{cfg, {}, {}, out.state.step};
  const bool have_moments = out.state.adam_m.size() == tensors.size();
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    opt.m.push_back(have_moments ? out.state.adam_m[k] : Matrix::Zero(tensors[k]->rows(), tensors[k]->cols()));
    opt.v.push_back(have_moments ? out.state.adam_v[k] : Matrix::Zero(tensors[k]->rows(), tensors[k]->cols()));
  }

  const std::uint64_t T = cfg.regenerate ? ~0ULL : cfg.T;
  PretrainingStream stream(prior, T, cfg.n, noise, sampler, derive_seed(cfg.seed, 0xda7a), cfg.n_min);
  const int B = cfg.batch_size;
  const int chunks = (B + cfg.micro_batch - 1) / cfg.micro_batch;
  std::vector<Episode> batch(static_cast<std::size_t>(B));
  std::vector<double> chunk_loss(static_cast<std::size_t>(chunks));
  std::vector<std::vector<Matrix>> chunk_grad(static_cast<std::size_t>(chunks));
  // Fixed-corpus order: a fresh permutation per epoch.
  std::vector<std::uint64_t> perm;
  long long perm_epoch = -1;

  for (long long step = out.state.step; step < cfg.steps; ++step) {
    for (int b = 0; b < B; ++b) {
      const std::uint64_t slot = static_cast<std::uint64_t>(step) * B + b;
      std::uint64_t t = slot;
      if (!cfg.regenerate) {
        const long long epoch = static_cast<long long>(slot / cfg.T);
        if (epoch != perm_epoch) {
          perm.resize(cfg.T);
          for (std::uint64_t i = 0; i < cfg.T; ++i) perm[i] = i;
          Rng shuffle(derive_seed(cfg.seed, 0xe90c00ULL + static_cast<std::uint64_t>(epoch)));
          std::shuffle(perm.begin(), perm.end(), shuffle.engine());
          perm_epoch = epoch;
        }
        t = perm[slot % cfg.T];
      }
      batch[static_cast<std::size_t>(b)] = stream.episode(t);
    }

    parallel_for(static_cast<std::size_t>(chunks), cfg.threads, [&](std::size_t c) {
      const int lo = static_cast<int>(c) * cfg.micro_batch;
      const int hi = std::min(B, lo + cfg.micro_batch);
      // Episodes of equal length share one batched tape.
      std::map<int, std::vector<const Episode*>> groups;
      for (int b = lo; b < hi; ++b) groups[batch[static_cast<std::size_t>(b)].n()].push_back(&batch[static_cast<std::size_t>(b)]);
      double loss = 0.0;
      std::vector<Matrix> acc;
      for (const auto& [len, eps] : groups) {
        std::vector<Matrix> g;
        const double w = static_cast<double>(eps.size());
        loss += w * batch_loss_and_grad(out.params, eps, &g);
        if (acc.empty()) {
          acc = std::move(g);
          for (auto& a : acc) a *= w;
        } else {
          for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += w * g[k];
        }
      }
      chunk_loss[c] = loss;
      chunk_grad[c] = std::move(acc);
    });

    double loss = 0.0;
    std::vector<Matrix> grad = std::move(chunk_grad[0]);
    loss += chunk_loss[0];
    for (int c = 1; c < chunks; ++c) {
      loss += chunk_loss[static_cast<std::size_t>(c)];
      for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += chunk_grad[static_cast<std::size_t>(c)][k];
    }
    loss /= B;
    double norm2 = 0.0;
    for (auto& g : grad) {
      g /= static_cast<double>(B);
      norm2 += g.squaredNorm();
    }
    if (!std::isfinite(loss) || !std::isfinite(norm2))
      throw DivergenceError("training diverged at step " + std::to_string(step) + ": non-finite loss");
    if (cfg.grad_clip > 0.0 && std::sqrt(norm2) > cfg.grad_clip) {
      const double s = cfg.grad_clip / std::sqrt(norm2);
      for (auto& g : grad) g *= s;
    }
    const double lr = cfg.lr_at(step);
    opt.step(tensors, grad, lr);

    TrainLogRow row;
    row.step = step;
    row.loss = loss;
    row.lr = lr;
    if (cfg.val_every > 0 && ((step + 1) % cfg.val_every == 0 || step + 1 == cfg.steps)) {
      row.val_risk = validation_pi_risk(out.params, prior, cfg.n, noise, sampler, cfg.val_J,
                                        derive_seed(cfg.seed, 0x7a11d), cfg.threads)
                         .mean;
    }
    row.wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    out.log.rows.push_back(row);
    if (on_step) on_step(row);
  }

  out.state.step = std::max(out.state.step, cfg.steps);
  out.state.adam_m = opt.m;
  out.state.adam_v = opt.v;
  out.log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return out;
}

RiskEstimate validation_pi_risk(const TransformerParams& params, const MixtureSpec& prior, int n,
                                const NoiseSpec& noise, const DomainSampler& sampler, int J, std::uint64_t seed,
                                int threads) {
  if (J < 1) throw ValidationError("validation needs J >= 1");
  PretrainingStream stream(prior, static_cast<std::uint64_t>(J), n, noise, sampler, seed);
  std::vector<double> losses(static_cast<std::size_t>(J));
  parallel_for(static_cast<std::size_t>(J), threads, [&](std::size_t j) {
    const Episode e = stream.episode(j);
    const double f = predict_clipped(params, e, e.query, params.cfg.R_clip);
    losses[j] = (e.target - f) * (e.target - f);
  });
  return RiskEstimate::from_samples(std::move(losses), n, "transformer");
}

}  // namespace icl
