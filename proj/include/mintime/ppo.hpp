#pragma once

// PPO training: running observation normalizer, Adam, GAE, the clipped
// update loop, the rollout/curriculum trainer and binary checkpoints.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mintime/curriculum.hpp"
#include "mintime/env.hpp"
#include "mintime/parallel.hpp"
#include "mintime/policy.hpp"

namespace mintime::ppo {

// ---------------------------------------------------------------- schedule

inline double linear_lr(double lr_start, double lr_end, double progress) {
  progress = std::clamp(progress, 0.0, 1.0);
  if (progress == 0.0) return lr_start;
  if (progress == 1.0) return lr_end;
  return lr_start + progress * (lr_end - lr_start);
}

// -------------------------------------------------------------- normalizer

// Running mean/variance (parallel Welford merge); frozen when not updated.
class RunningMeanStd {
 public:
  explicit RunningMeanStd(int dim = env::kObsDim, double clip = 10.0)
      : mean_(Eigen::VectorXd::Zero(dim)), var_(Eigen::VectorXd::Ones(dim)), clip_(clip) {}

  int dim() const { return static_cast<int>(mean_.size()); }
  double count() const { return count_; }
  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::VectorXd& var() const { return var_; }
  double clip() const { return clip_; }

  void set(double count, Eigen::VectorXd mean, Eigen::VectorXd var) {
    count_ = count;
    mean_ = std::move(mean);
    var_ = std::move(var);
  }

  // Columns of x are samples.
  void update(const Eigen::MatrixXd& x) {
    const double n = static_cast<double>(x.cols());
    if (n == 0) return;
    const Eigen::VectorXd bm = x.rowwise().mean();
    const Eigen::VectorXd bv = (x.colwise() - bm).array().square().rowwise().sum().matrix() / n;
    if (count_ == 0.0) {
      mean_ = bm;
      var_ = bv;
      count_ = n;
      return;
    }
    const double tot = count_ + n;
    const Eigen::VectorXd delta = bm - mean_;
    mean_ += delta * (n / tot);
    const Eigen::VectorXd m2 = var_ * count_ + bv * n + delta.cwiseProduct(delta) * (count_ * n / tot);
    var_ = m2 / tot;
    count_ = tot;
  }

  template <typename Scalar>
  Mat<Scalar> normalize(const Eigen::MatrixXd& x) const {
    const Eigen::VectorXd inv = (var_.array() + 1e-8).rsqrt().matrix();
    Eigen::MatrixXd z = ((x.colwise() - mean_).array().colwise() * inv.array()).matrix();
    return z.cwiseMax(-clip_).cwiseMin(clip_).template cast<Scalar>();
  }

 private:
  Eigen::VectorXd mean_;
  Eigen::VectorXd var_;
  double count_ = 0.0;
  double clip_;
};

inline Eigen::MatrixXd stack_observations(std::span<const env::Observation> obs) {
  Eigen::MatrixXd x(env::kObsDim, static_cast<Eigen::Index>(obs.size()));
  for (std::size_t j = 0; j < obs.size(); ++j)
    for (int i = 0; i < env::kObsDim; ++i) x(i, static_cast<Eigen::Index>(j)) = obs[j][i];
  return x;
}

// -------------------------------------------------------------------- Adam

template <typename Scalar>
struct Adam {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t t = 0;
  std::vector<Mat<Scalar>> m, v;

  void init(const std::vector<Mat<Scalar>>& params) {
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.push_back(Mat<Scalar>::Zero(p.rows(), p.cols()));
      v.push_back(Mat<Scalar>::Zero(p.rows(), p.cols()));
    }
    t = 0;
  }

  void step(std::vector<Mat<Scalar>>& params, const std::vector<Mat<Scalar>>& grads, double lr) {
    if (m.size() != params.size()) init(params);
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    const Scalar b1 = Scalar(beta1), b2 = Scalar(beta2);
    const Scalar step_size = Scalar(lr * std::sqrt(c2) / c1);
    const Scalar e = Scalar(eps * std::sqrt(c2));
    for (std::size_t k = 0; k < params.size(); ++k) {
      m[k] = b1 * m[k] + (Scalar(1) - b1) * grads[k];
      v[k] = b2 * v[k] + (Scalar(1) - b2) * grads[k].cwiseProduct(grads[k]);
      params[k].array() -= step_size * m[k].array() / (v[k].array().sqrt() + e);
    }
  }
};

template <typename Scalar>
double global_norm(const std::vector<Mat<Scalar>>& g) {
  double s = 0.0;
  for (const auto& b : g) s += static_cast<double>(b.template cast<double>().squaredNorm());
  return std::sqrt(s);
}

// Scales gradients so their global L2 norm is at most max_norm; returns the
// norm before clipping.
template <typename Scalar>
double clip_grad_norm(std::vector<Mat<Scalar>>& g, double max_norm) {
  const double n = global_norm(g);
  if (max_norm > 0.0 && n > max_norm) {
    const Scalar s = Scalar(max_norm / (n + 1e-6));
    for (auto& b : g) b *= s;
  }
  return n;
}

// --------------------------------------------------------------------- GAE

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

// delta_t = r_t + gamma v_{t+1} (1 - done_t) - v_t
// A_t = delta_t + gamma lambda (1 - done_t) A_{t+1}
// with v_T = last_value.
inline GaeResult gae(std::span<const double> rewards, std::span<const double> values,
                     std::span<const std::uint8_t> dones, double last_value, double gamma,
                     double lambda) {
  const std::size_t T = rewards.size();
  if (values.size() != T || dones.size() != T)
    throw std::invalid_argument("gae: rewards, values and dones must have equal length");
  GaeResult out;
  out.advantages.assign(T, 0.0);
  out.returns.assign(T, 0.0);
  double next_adv = 0.0;
  double next_value = last_value;
  for (std::size_t k = T; k-- > 0;) {
    const double nonterminal = dones[k] ? 0.0 : 1.0;
    const double delta = rewards[k] + gamma * next_value * nonterminal - values[k];
    next_adv = delta + gamma * lambda * nonterminal * next_adv;
    out.advantages[k] = next_adv;
    out.returns[k] = next_adv + values[k];
    next_value = values[k];
  }
  return out;
}

// ------------------------------------------------------------------ update

class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(int epoch, int minibatch)
      : std::runtime_error("ppo: non-finite loss at epoch " + std::to_string(epoch) +
                           ", minibatch " + std::to_string(minibatch)),
        epoch(epoch),
        minibatch(minibatch) {}
  int epoch;
  int minibatch;
};

struct UpdateConfig {
  LossWeights loss;
  int epochs = 10;
  int minibatch = 4096;
  double max_grad_norm = 0.5;
  bool normalize_advantages = true;
};

template <typename Scalar>
struct RolloutBatch {
  Mat<Scalar> obs;      // obs_dim x N, already normalized
  Mat<Scalar> actions;  // act_dim x N
  Row<Scalar> logp;
  Row<Scalar> advantages;
  Row<Scalar> returns;
  Eigen::Index size() const { return obs.cols(); }
};

struct UpdateMetrics {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  double grad_norm = 0.0;
  double first_clip_fraction = 0.0;
  int minibatches = 0;
};

template <typename Scalar>
UpdateMetrics ppo_update(PolicyNet<Scalar>& net, Adam<Scalar>& opt, RolloutBatch<Scalar> batch,
                         const UpdateConfig& cfg, double lr, std::mt19937_64& rng) {
  const Eigen::Index N = batch.size();
  if (N == 0) throw std::invalid_argument("ppo: empty batch");
  if (cfg.normalize_advantages && N > 1) {
    const double mean = static_cast<double>(batch.advantages.template cast<double>().mean());
    const double var =
        (batch.advantages.template cast<double>().array() - mean).square().sum() / static_cast<double>(N);
    const double inv = 1.0 / (std::sqrt(var) + 1e-8);
    batch.advantages = ((batch.advantages.template cast<double>().array() - mean) * inv)
                           .matrix()
                           .template cast<Scalar>();
  }
  const Eigen::Index mb = std::max<Eigen::Index>(1, std::min<Eigen::Index>(cfg.minibatch, N));
  std::vector<Eigen::Index> perm(N);
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  UpdateMetrics um;
  Minibatch<Scalar> m;
  auto grads = net.zeros_like();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates with an explicit draw so the order is library independent.
    for (Eigen::Index i = N - 1; i > 0; --i) {
      const auto j = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(i + 1));
      std::swap(perm[i], perm[j]);
    }
    int mb_index = 0;
    for (Eigen::Index start = 0; start < N; start += mb, ++mb_index) {
      const Eigen::Index B = std::min(mb, N - start);
      m.obs.resize(batch.obs.rows(), B);
      m.actions.resize(batch.actions.rows(), B);
      m.logp_old.resize(B);
      m.advantages.resize(B);
      m.returns.resize(B);
      for (Eigen::Index k = 0; k < B; ++k) {
        const Eigen::Index c = perm[start + k];
        m.obs.col(k) = batch.obs.col(c);
        m.actions.col(k) = batch.actions.col(c);
        m.logp_old(k) = batch.logp(c);
        m.advantages(k) = batch.advantages(c);
        m.returns(k) = batch.returns(c);
      }
      for (auto& g : grads) g.setZero();
      const LossStats s = ppo_loss(net, m, cfg.loss, &grads);
      const double gn = global_norm(grads);
      if (!std::isfinite(s.total) || !std::isfinite(gn)) throw NonFiniteLoss(epoch, mb_index);
      clip_grad_norm(grads, cfg.max_grad_norm);
      opt.step(net.params(), grads, lr);
      net.clamp_log_std();
      if (um.minibatches == 0) um.first_clip_fraction = s.clip_fraction;
      um.policy_loss += s.policy;
      um.value_loss += s.value;
      um.entropy += s.entropy;
      um.clip_fraction += s.clip_fraction;
      um.approx_kl += s.approx_kl;
      um.grad_norm += gn;
      ++um.minibatches;
    }
  }
  const double n = std::max(1, um.minibatches);
  um.policy_loss /= n;
  um.value_loss /= n;
  um.entropy /= n;
  um.clip_fraction /= n;
  um.approx_kl /= n;
  um.grad_norm /= n;
  return um;
}

// ------------------------------------------------------------------- agent

// Inference-side policy: network plus frozen observation statistics.
struct Agent {
  PolicyNet<float> net;
  RunningMeanStd normalizer;

  void act(std::span<const env::Observation> obs, std::span<env::NormalizedAction> out) const {
    const Mat<float> x = normalizer.normalize<float>(stack_observations(obs));
    typename PolicyNet<float>::Cache c;
    net.forward(x, c, false);
    for (std::size_t j = 0; j < obs.size(); ++j)
      for (int i = 0; i < env::kActDim; ++i)
        out[j][i] = static_cast<double>(c.mean(i, static_cast<Eigen::Index>(j)));
  }

  // Deterministic policy callable for curriculum::run_rollouts.
  auto policy() const {
    return [this](std::span<const env::Observation> o, std::span<env::NormalizedAction> a) {
      act(o, a);
    };
  }
};

// ---------------------------------------------------------------- training

struct TrainConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double lr_start = 5e-4;
  double lr_end = 2e-5;
  int steps_per_env = 2000;
  int n_envs = 16;
  std::int64_t total_steps = 2'000'000;
  UpdateConfig update;
  int hidden = 256;
  double init_log_std = -1.0;
  double adam_eps = 1e-8;
  double obs_clip = 10.0;
  // Rewards are multiplied by this before GAE; logged rewards stay unscaled.
  double reward_scale = 0.02;
  bool bootstrap_time_limit = true;
  int eval_every = 1;
  int checkpoint_every = 10;
  std::uint64_t seed = 1;
  std::size_t threads = 1;

  std::int64_t batch_size() const { return static_cast<std::int64_t>(steps_per_env) * n_envs; }
  // Whole iterations that fit in the step budget (at least one).
  int iterations() const {
    return static_cast<int>(std::max<std::int64_t>(1, total_steps / batch_size()));
  }

  void validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("ppo: gamma must be in (0, 1]");
    if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw std::invalid_argument("ppo: gae_lambda must be in [0, 1]");
    if (!(lr_start > 0.0) || !(lr_end >= 0.0)) throw std::invalid_argument("ppo: learning rates must be positive");
    if (steps_per_env < 1 || n_envs < 1) throw std::invalid_argument("ppo: steps_per_env and n_envs must be >= 1");
    if (total_steps < 1) throw std::invalid_argument("ppo: total_steps must be >= 1");
    if (update.epochs < 1 || update.minibatch < 1) throw std::invalid_argument("ppo: epochs and minibatch must be >= 1");
    if (!(update.loss.clip > 0.0)) throw std::invalid_argument("ppo: clip must be positive");
    if (!(reward_scale > 0.0)) throw std::invalid_argument("ppo: reward_scale must be positive");
    if (hidden < 1) throw std::invalid_argument("ppo: hidden must be >= 1");
    if (init_log_std < kLogStdMin || init_log_std > kLogStdMax)
      throw std::invalid_argument("ppo: init_log_std must be in [-5, 1]");
    if (eval_every < 1 || checkpoint_every < 0) throw std::invalid_argument("ppo: invalid eval/checkpoint cadence");
  }
};

struct IterationMetrics {
  int iteration = 0;
  std::int64_t env_steps = 0;
  int stage = 1;
  double spawn_range = 1.0;
  double lr = 0.0;
  double mean_reward = 0.0;          // per transition
  double mean_episode_return = 0.0;  // over episodes finished this iteration
  double mean_episode_length = 0.0;  // in control steps
  int episodes = 0;
  UpdateMetrics update;
  double eval_rmse = std::nan("");
  bool promoted = false;
};

inline std::string csv_header() {
  return "iteration,env_steps,stage,spawn_range,lr,mean_reward,mean_episode_return,"
         "mean_episode_length,episodes,policy_loss,value_loss,entropy,clip_fraction,approx_kl,"
         "grad_norm,eval_rmse,promoted";
}

inline std::string csv_row(const IterationMetrics& m) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "%d,%lld,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d",
                m.iteration, static_cast<long long>(m.env_steps), m.stage, m.spawn_range, m.lr,
                m.mean_reward, m.mean_episode_return, m.mean_episode_length, m.episodes,
                m.update.policy_loss, m.update.value_loss, m.update.entropy, m.update.clip_fraction,
                m.update.approx_kl, m.update.grad_norm, m.eval_rmse, m.promoted ? 1 : 0);
  return buf;
}

// 64-bit FNV-1a, used to tie checkpoints to the configuration text.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Trainer {
 public:
  Trainer(TrainConfig cfg, env::EnvConfig env_cfg, curriculum::CurriculumConfig cur_cfg,
          std::uint64_t config_hash = 0)
      : cfg_((cfg.validate(), cfg)),
        env_cfg_(std::move(env_cfg)),
        curriculum_(cur_cfg),
        config_hash_(config_hash),
        rng_(derive_seed(cfg_.seed, 0x7261696eULL)) {
    env_cfg_.spawn_half_width = curriculum_.current_range();
    env_cfg_.validate();
    agent_.net = PolicyNet<float>(NetShape{env::kObsDim, env::kActDim, cfg_.hidden}, cfg_.init_log_std,
                                  derive_seed(cfg_.seed, 0x6e6574ULL));
    agent_.normalizer = RunningMeanStd(env::kObsDim, cfg_.obs_clip);
    opt_.eps = cfg_.adam_eps;
    opt_.init(agent_.net.params());
    envs_ = std::make_unique<env::VectorEnv>(cfg_.n_envs, env_cfg_, derive_seed(cfg_.seed, 0x656e76ULL),
                                             cfg_.threads);
  }

  const TrainConfig& config() const { return cfg_; }
  const Agent& agent() const { return agent_; }
  const curriculum::Curriculum& curriculum() const { return curriculum_; }
  int iteration() const { return iteration_; }
  std::int64_t env_steps() const { return env_steps_; }
  bool finished() const { return iteration_ >= cfg_.iterations(); }
  const curriculum::PromotionResult& last_evaluation() const { return last_eval_; }

  IterationMetrics iterate() {
    if (!started_) begin_epoch_of_envs();
    IterationMetrics im;
    im.iteration = iteration_ + 1;
    im.lr = linear_lr(cfg_.lr_start, cfg_.lr_end,
                      static_cast<double>(iteration_) / static_cast<double>(cfg_.iterations()));
    collect(im);
    UpdateConfig uc = cfg_.update;
    im.update = ppo_update(agent_.net, opt_, batch_, uc, im.lr, rng_);
    ++iteration_;
    env_steps_ += cfg_.batch_size();
    im.env_steps = env_steps_;
    im.stage = curriculum_.stage();
    im.spawn_range = curriculum_.current_range();
    if (iteration_ % cfg_.eval_every == 0) {
      last_eval_ = curriculum_.evaluate_promotion(agent_.policy(), env_cfg_,
                                                  static_cast<std::uint64_t>(iteration_), cfg_.threads);
      im.eval_rmse = last_eval_.rmse;
      im.promoted = last_eval_.promote;
      if (im.promoted) {
        env_cfg_.spawn_half_width = curriculum_.current_range();
        envs_->set_spawn_half_width(env_cfg_.spawn_half_width);
        // Episodes in flight were sampled from the old range.
        obs_ = envs_->reset_all();
        ep_return_.assign(cfg_.n_envs, 0.0);
        ep_length_.assign(cfg_.n_envs, 0);
      }
    }
    return im;
  }

  // Runs until the step budget is exhausted. on_iteration sees every row;
  // on_checkpoint is called every checkpoint_every iterations and on promotion.
  void train(const std::function<void(const IterationMetrics&)>& on_iteration,
             const std::function<void(const IterationMetrics&)>& on_checkpoint = {}) {
    while (!finished()) {
      const IterationMetrics im = iterate();
      if (on_iteration) on_iteration(im);
      const bool periodic = cfg_.checkpoint_every > 0 && iteration_ % cfg_.checkpoint_every == 0;
      if (on_checkpoint && (periodic || im.promoted || finished())) on_checkpoint(im);
    }
  }

  // ----------------------------------------------------------- checkpoints

  void save(const std::filesystem::path& path) const {
    std::ostringstream os(std::ios::binary);
    write_checkpoint(os);
    const std::string tmp = path.string() + ".tmp";
    {
      std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
      if (!f) throw CheckpointError("checkpoint: cannot write " + tmp);
      const std::string bytes = os.str();
      f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
      if (!f) throw CheckpointError("checkpoint: write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
  }

  // Restores network, optimizer, normalizer, counters, curriculum stage and
  // the episodes in flight, so a resumed run matches an uninterrupted one.
  void resume(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("checkpoint: cannot open " + path.string());
    Header h = read_header(f);
    if (h.config_hash != config_hash_)
      throw CheckpointError("checkpoint: configuration hash mismatch for " + path.string());
    if (h.hidden != cfg_.hidden) throw CheckpointError("checkpoint: network width mismatch");
    read_body(f, agent_);
    opt_.t = read_pod<std::int64_t>(f);
    opt_.m = read_blocks(f);
    opt_.v = read_blocks(f);
    std::string rng_state = read_string(f);
    std::istringstream rs(rng_state);
    rs >> rng_;
    if (!f) throw CheckpointError("checkpoint: truncated file " + path.string());
    iteration_ = h.iteration;
    env_steps_ = h.env_steps;
    curriculum_.restore(h.stage);
    env_cfg_.spawn_half_width = curriculum_.current_range();
    envs_->set_spawn_half_width(env_cfg_.spawn_half_width);
    started_ = read_pod<std::uint8_t>(f) != 0;
    if (started_) {
      if (read_pod<std::int32_t>(f) != static_cast<std::int32_t>(envs_->size()))
        throw CheckpointError("checkpoint: environment count mismatch");
      obs_.resize(envs_->size());
      ep_return_.assign(envs_->size(), 0.0);
      ep_length_.assign(envs_->size(), 0);
      for (std::size_t i = 0; i < envs_->size(); ++i) {
        (*envs_)[i].load_state(read_string(f));
        ep_return_[i] = read_pod<double>(f);
        ep_length_[i] = read_pod<std::int32_t>(f);
        obs_[i] = (*envs_)[i].observation();
      }
      if (!f) throw CheckpointError("checkpoint: truncated file " + path.string());
    }
  }

  static Agent load_agent(const std::filesystem::path& path, int* stage = nullptr) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("checkpoint: cannot open " + path.string());
    Header h = read_header(f);
    Agent a;
    a.net = PolicyNet<float>(NetShape{env::kObsDim, env::kActDim, h.hidden}, 0.0, 0);
    read_body(f, a);
    if (!f) throw CheckpointError("checkpoint: truncated file " + path.string());
    if (stage) *stage = h.stage;
    return a;
  }

 private:
  static constexpr char kMagic[8] = {'M', 'T', 'P', 'P', 'O', 'C', 'K', 'P'};
  static constexpr std::uint32_t kVersion = 2;

  struct Header {
    std::uint64_t config_hash = 0;
    int iteration = 0;
    std::int64_t env_steps = 0;
    int stage = 1;
    int hidden = 256;
  };

  template <typename T>
  static void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  template <typename T>
  static T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
  }
  static void write_blocks(std::ostream& os, const std::vector<Mat<float>>& blocks) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(blocks.size()));
    for (const auto& b : blocks) {
      write_pod<std::int64_t>(os, b.rows());
      write_pod<std::int64_t>(os, b.cols());
      os.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size() * sizeof(float)));
    }
  }
  static std::vector<Mat<float>> read_blocks(std::istream& is) {
    const auto n = read_pod<std::uint32_t>(is);
    if (!is || n > 64) throw CheckpointError("checkpoint: corrupt block table");
    std::vector<Mat<float>> out(n);
    for (auto& b : out) {
      const auto r = read_pod<std::int64_t>(is);
      const auto c = read_pod<std::int64_t>(is);
      if (!is || r < 0 || c < 0 || r * c > (1 << 24)) throw CheckpointError("checkpoint: corrupt block shape");
      b.resize(r, c);
      is.read(reinterpret_cast<char*>(b.data()), static_cast<std::streamsize>(b.size() * sizeof(float)));
    }
    return out;
  }
  static void write_vec(std::ostream& os, const Eigen::VectorXd& v) {
    write_pod<std::int64_t>(os, v.size());
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  static Eigen::VectorXd read_vec(std::istream& is) {
    const auto n = read_pod<std::int64_t>(is);
    if (!is || n < 0 || n > 4096) throw CheckpointError("checkpoint: corrupt vector");
    Eigen::VectorXd v(n);
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    return v;
  }
  static void write_string(std::ostream& os, const std::string& s) {
    write_pod<std::uint64_t>(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  static std::string read_string(std::istream& is) {
    const auto n = read_pod<std::uint64_t>(is);
    if (!is || n > (1u << 20)) throw CheckpointError("checkpoint: corrupt string");
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    return s;
  }

  void write_checkpoint(std::ostream& os) const {
    os.write(kMagic, sizeof kMagic);
    write_pod(os, kVersion);
    write_pod(os, config_hash_);
    write_pod<std::int32_t>(os, iteration_);
    write_pod<std::int64_t>(os, env_steps_);
    write_pod<std::int32_t>(os, curriculum_.stage());
    write_pod<std::int32_t>(os, cfg_.hidden);
    write_blocks(os, agent_.net.params());
    write_pod(os, agent_.normalizer.count());
    write_vec(os, agent_.normalizer.mean());
    write_vec(os, agent_.normalizer.var());
    write_pod(os, agent_.normalizer.clip());
    write_pod<std::int64_t>(os, opt_.t);
    write_blocks(os, opt_.m);
    write_blocks(os, opt_.v);
    std::ostringstream rs;
    rs << rng_;
    write_string(os, rs.str());
    write_pod<std::uint8_t>(os, started_ ? 1 : 0);
    if (started_) {
      write_pod<std::int32_t>(os, static_cast<std::int32_t>(envs_->size()));
      for (std::size_t i = 0; i < envs_->size(); ++i) {
        write_string(os, (*envs_)[i].save_state());
        write_pod(os, ep_return_[i]);
        write_pod<std::int32_t>(os, ep_length_[i]);
      }
    }
  }

  static Header read_header(std::istream& is) {
    char magic[8];
    is.read(magic, sizeof magic);
    if (!is || std::memcmp(magic, kMagic, sizeof magic) != 0)
      throw CheckpointError("checkpoint: not a policy checkpoint");
    if (read_pod<std::uint32_t>(is) != kVersion) throw CheckpointError("checkpoint: unsupported version");
    Header h;
    h.config_hash = read_pod<std::uint64_t>(is);
    h.iteration = read_pod<std::int32_t>(is);
    h.env_steps = read_pod<std::int64_t>(is);
    h.stage = read_pod<std::int32_t>(is);
    h.hidden = read_pod<std::int32_t>(is);
    if (!is || h.stage < 1 || h.stage > 4 || h.hidden < 1)
      throw CheckpointError("checkpoint: corrupt header");
    return h;
  }

  static void read_body(std::istream& is, Agent& a) {
    auto blocks = read_blocks(is);
    auto& p = a.net.params();
    if (blocks.size() != p.size()) throw CheckpointError("checkpoint: parameter layout mismatch");
    for (std::size_t k = 0; k < p.size(); ++k) {
      if (blocks[k].rows() != p[k].rows() || blocks[k].cols() != p[k].cols())
        throw CheckpointError("checkpoint: parameter shape mismatch");
      p[k] = blocks[k];
    }
    const double count = read_pod<double>(is);
    Eigen::VectorXd mean = read_vec(is);
    Eigen::VectorXd var = read_vec(is);
    const double clip = read_pod<double>(is);
    if (mean.size() != env::kObsDim || var.size() != env::kObsDim)
      throw CheckpointError("checkpoint: normalizer size mismatch");
    a.normalizer = RunningMeanStd(env::kObsDim, clip);
    a.normalizer.set(count, std::move(mean), std::move(var));
  }

  void begin_epoch_of_envs() {
    obs_ = envs_->reset_all();
    ep_return_.assign(cfg_.n_envs, 0.0);
    ep_length_.assign(cfg_.n_envs, 0);
    started_ = true;
  }

  Row<float> values_of(const Mat<float>& x) const {
    typename PolicyNet<float>::Cache c;
    agent_.net.forward(x, c);
    return c.value;
  }

  void collect(IterationMetrics& im) {
    const int E = cfg_.n_envs, T = cfg_.steps_per_env;
    const Eigen::Index N = static_cast<Eigen::Index>(E) * T;
    batch_.obs.resize(env::kObsDim, N);
    batch_.actions.resize(env::kActDim, N);
    batch_.logp.resize(N);
    std::vector<double> rewards(N), values(N);
    std::vector<std::uint8_t> dones(N);
    std::normal_distribution<float> noise(0.0f, 1.0f);
    const Mat<float> log_std = agent_.net.log_std();
    const Mat<float> std_dev = log_std.array().exp().matrix();
    std::vector<env::NormalizedAction> act(E);
    typename PolicyNet<float>::Cache c;
    double reward_sum = 0.0, ret_sum = 0.0, len_sum = 0.0;
    int episodes = 0;

    for (int t = 0; t < T; ++t) {
      const Eigen::MatrixXd raw = stack_observations(obs_);
      agent_.normalizer.update(raw);
      const Mat<float> x = agent_.normalizer.normalize<float>(raw);
      agent_.net.forward(x, c);
      Mat<float> a = c.mean;
      for (int e = 0; e < E; ++e)
        for (int i = 0; i < env::kActDim; ++i) a(i, e) += std_dev(i, 0) * noise(rng_);
      const Row<float> lp = gaussian_log_prob(c.mean, log_std, a);
      for (int e = 0; e < E; ++e) {
        const Eigen::Index col = static_cast<Eigen::Index>(t) * E + e;
        batch_.obs.col(col) = x.col(e);
        batch_.actions.col(col) = a.col(e);
        batch_.logp(col) = lp(e);
        values[col] = c.value(e);
        for (int i = 0; i < env::kActDim; ++i)
          act[e][i] = std::clamp(static_cast<double>(a(i, e)), -1.0, 1.0);
      }
      const auto& res = envs_->step_all(act);
      std::vector<int> truncated;
      for (int e = 0; e < E; ++e) {
        const Eigen::Index col = static_cast<Eigen::Index>(t) * E + e;
        rewards[col] = cfg_.reward_scale * res[e].reward;
        dones[col] = res[e].done ? 1 : 0;
        reward_sum += res[e].reward;
        ep_return_[e] += res[e].reward;
        ++ep_length_[e];
        if (res[e].done) {
          ret_sum += ep_return_[e];
          len_sum += ep_length_[e];
          ++episodes;
          ep_return_[e] = 0.0;
          ep_length_[e] = 0;
          if (cfg_.bootstrap_time_limit && res[e].info.reason == env::DoneReason::kTimeLimit)
            truncated.push_back(e);
        }
        obs_[e] = res[e].observation;
      }
      if (!truncated.empty()) {
        std::vector<env::Observation> fin;
        for (int e : truncated) fin.push_back(res[e].info.final_observation);
        const Row<float> v = values_of(agent_.normalizer.normalize<float>(stack_observations(fin)));
        for (std::size_t k = 0; k < truncated.size(); ++k) {
          const Eigen::Index col = static_cast<Eigen::Index>(t) * E + truncated[k];
          rewards[col] += cfg_.gamma * static_cast<double>(v(static_cast<Eigen::Index>(k)));
        }
      }
    }
    const Row<float> last = values_of(agent_.normalizer.normalize<float>(stack_observations(obs_)));

    batch_.advantages.resize(N);
    batch_.returns.resize(N);
    std::vector<double> r(T), v(T);
    std::vector<std::uint8_t> d(T);
    for (int e = 0; e < E; ++e) {
      for (int t = 0; t < T; ++t) {
        const std::size_t col = static_cast<std::size_t>(t) * E + e;
        r[t] = rewards[col];
        v[t] = values[col];
        d[t] = dones[col];
      }
      const GaeResult g = gae(r, v, d, static_cast<double>(last(e)), cfg_.gamma, cfg_.gae_lambda);
      for (int t = 0; t < T; ++t) {
        const Eigen::Index col = static_cast<Eigen::Index>(t) * E + e;
        batch_.advantages(col) = static_cast<float>(g.advantages[t]);
        batch_.returns(col) = static_cast<float>(g.returns[t]);
      }
    }
    im.mean_reward = reward_sum / static_cast<double>(N);
    im.episodes = episodes;
    im.mean_episode_return = episodes ? ret_sum / episodes : std::nan("");
    im.mean_episode_length = episodes ? len_sum / episodes : std::nan("");
  }

  TrainConfig cfg_;
  env::EnvConfig env_cfg_;
  curriculum::Curriculum curriculum_;
  std::uint64_t config_hash_;
  std::mt19937_64 rng_;
  Agent agent_;
  Adam<float> opt_;
  std::unique_ptr<env::VectorEnv> envs_;
  RolloutBatch<float> batch_;
  std::vector<env::Observation> obs_;
  std::vector<double> ep_return_;
  std::vector<int> ep_length_;
  curriculum::PromotionResult last_eval_;
  int iteration_ = 0;
  std::int64_t env_steps_ = 0;
  bool started_ = false;
};

}  // namespace mintime::ppo
