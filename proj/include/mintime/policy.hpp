#pragma once

// Actor-critic network: two separate ReLU trunks (obs -> hidden -> hidden),
// a tanh-squashed Gaussian mean with state-independent log-std for the
// actor and a scalar head for the critic. Reverse-mode gradients of the
// clipped PPO loss are written out by hand.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

namespace mintime::ppo {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Row = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

struct NetShape {
  int obs_dim = 23;
  int act_dim = 4;
  int hidden = 256;
};

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 1.0;

template <typename Scalar>
class PolicyNet {
 public:
  enum Block {
    kActorW0, kActorB0, kActorW1, kActorB1, kActorW2, kActorB2, kLogStd,
    kCriticW0, kCriticB0, kCriticW1, kCriticB1, kCriticW2, kCriticB2,
    kNumBlocks
  };

  // Post-activation values of one batched forward pass (columns = samples).
  struct Cache {
    Mat<Scalar> x;
    Mat<Scalar> actor_h1, actor_h2, mean;
    Mat<Scalar> critic_h1, critic_h2;
    Row<Scalar> value;
  };

  PolicyNet() : PolicyNet(NetShape{}, -0.5, 0) {}

  // Hidden layers use He-normal weights and zero biases; both output
  // layers start at zero so the initial mean action and value are 0.
  PolicyNet(NetShape shape, double init_log_std, std::uint64_t seed) : shape_(shape) {
    const int o = shape.obs_dim, h = shape.hidden, a = shape.act_dim;
    params_.resize(kNumBlocks);
    std::mt19937_64 rng(seed);
    auto he = [&](int rows, int cols) {
      std::normal_distribution<double> n(0.0, std::sqrt(2.0 / cols));
      Mat<Scalar> m(rows, cols);
      for (int c = 0; c < cols; ++c)
        for (int r = 0; r < rows; ++r) m(r, c) = static_cast<Scalar>(n(rng));
      return m;
    };
    params_[kActorW0] = he(h, o);
    params_[kActorB0] = Mat<Scalar>::Zero(h, 1);
    params_[kActorW1] = he(h, h);
    params_[kActorB1] = Mat<Scalar>::Zero(h, 1);
    params_[kActorW2] = Mat<Scalar>::Zero(a, h);
    params_[kActorB2] = Mat<Scalar>::Zero(a, 1);
    params_[kLogStd] = Mat<Scalar>::Constant(a, 1, static_cast<Scalar>(init_log_std));
    params_[kCriticW0] = he(h, o);
    params_[kCriticB0] = Mat<Scalar>::Zero(h, 1);
    params_[kCriticW1] = he(h, h);
    params_[kCriticB1] = Mat<Scalar>::Zero(h, 1);
    params_[kCriticW2] = Mat<Scalar>::Zero(1, h);
    params_[kCriticB2] = Mat<Scalar>::Zero(1, 1);
    clamp_log_std();
  }

  const NetShape& shape() const { return shape_; }
  std::vector<Mat<Scalar>>& params() { return params_; }
  const std::vector<Mat<Scalar>>& params() const { return params_; }

  std::vector<Mat<Scalar>> zeros_like() const {
    std::vector<Mat<Scalar>> z;
    z.reserve(params_.size());
    for (const auto& p : params_) z.push_back(Mat<Scalar>::Zero(p.rows(), p.cols()));
    return z;
  }

  std::size_t num_params() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

  // Flat view across all blocks in block order, column-major within a block.
  Scalar& flat(std::size_t i) { return locate(params_, i); }

  static Scalar& locate(std::vector<Mat<Scalar>>& blocks, std::size_t i) {
    for (auto& b : blocks) {
      if (i < static_cast<std::size_t>(b.size())) return b.data()[i];
      i -= b.size();
    }
    throw std::out_of_range("policy: flat parameter index out of range");
  }

  void clamp_log_std() {
    params_[kLogStd] = params_[kLogStd].cwiseMax(Scalar(kLogStdMin)).cwiseMin(Scalar(kLogStdMax));
  }

  Mat<Scalar> log_std() const { return params_[kLogStd]; }

  void forward(const Mat<Scalar>& x, Cache& c, bool with_critic = true) const {
    c.x = x;
    c.actor_h1.noalias() = params_[kActorW0] * x;
    c.actor_h1 = (c.actor_h1.colwise() + params_[kActorB0].col(0)).cwiseMax(Scalar(0));
    c.actor_h2.noalias() = params_[kActorW1] * c.actor_h1;
    c.actor_h2 = (c.actor_h2.colwise() + params_[kActorB1].col(0)).cwiseMax(Scalar(0));
    c.mean.noalias() = params_[kActorW2] * c.actor_h2;
    c.mean = (c.mean.colwise() + params_[kActorB2].col(0)).array().tanh().matrix();
    if (!with_critic) return;
    c.critic_h1.noalias() = params_[kCriticW0] * x;
    c.critic_h1 = (c.critic_h1.colwise() + params_[kCriticB0].col(0)).cwiseMax(Scalar(0));
    c.critic_h2.noalias() = params_[kCriticW1] * c.critic_h1;
    c.critic_h2 = (c.critic_h2.colwise() + params_[kCriticB1].col(0)).cwiseMax(Scalar(0));
    c.value.noalias() = params_[kCriticW2] * c.critic_h2;
    c.value.array() += params_[kCriticB2](0, 0);
  }

  // Accumulates parameter gradients given dLoss/dmean and dLoss/dvalue.
  void backward(const Cache& c, const Mat<Scalar>& d_mean, const Row<Scalar>& d_value,
                std::vector<Mat<Scalar>>& grads) const {
    Mat<Scalar> dz = d_mean.cwiseProduct((Scalar(1) - c.mean.array().square()).matrix());
    backprop_trunk(c.x, c.actor_h1, c.actor_h2, dz, kActorW0, grads);
    Mat<Scalar> dv = d_value;
    backprop_trunk(c.x, c.critic_h1, c.critic_h2, dv, kCriticW0, grads);
  }

  template <typename Other>
  PolicyNet<Other> cast() const {
    PolicyNet<Other> out(shape_, 0.0, 0);
    for (int i = 0; i < kNumBlocks; ++i) out.params()[i] = params_[i].template cast<Other>();
    return out;
  }

 private:
  // Output-layer pre-activation gradient dz -> weights of one trunk.
  void backprop_trunk(const Mat<Scalar>& x, const Mat<Scalar>& h1, const Mat<Scalar>& h2,
                      const Mat<Scalar>& dz, int first, std::vector<Mat<Scalar>>& g) const {
    g[first + 4].noalias() += dz * h2.transpose();
    g[first + 5] += dz.rowwise().sum();
    Mat<Scalar> dh2;
    dh2.noalias() = params_[first + 4].transpose() * dz;
    dh2 = dh2.cwiseProduct((h2.array() > Scalar(0)).template cast<Scalar>().matrix());
    g[first + 2].noalias() += dh2 * h1.transpose();
    g[first + 3] += dh2.rowwise().sum();
    Mat<Scalar> dh1;
    dh1.noalias() = params_[first + 2].transpose() * dh2;
    dh1 = dh1.cwiseProduct((h1.array() > Scalar(0)).template cast<Scalar>().matrix());
    g[first + 0].noalias() += dh1 * x.transpose();
    g[first + 1] += dh1.rowwise().sum();
  }

  NetShape shape_;
  std::vector<Mat<Scalar>> params_;
};

// Diagonal Gaussian log-density of each column of `action`.
template <typename Scalar>
Row<Scalar> gaussian_log_prob(const Mat<Scalar>& mean, const Mat<Scalar>& log_std,
                              const Mat<Scalar>& action) {
  const Scalar half_log_2pi = Scalar(0.5 * std::log(2.0 * std::numbers::pi));
  Mat<Scalar> inv_std = (-log_std.array()).exp().matrix();
  Mat<Scalar> z = ((action - mean).array().colwise() * inv_std.col(0).array()).matrix();
  Row<Scalar> lp = Scalar(-0.5) * z.array().square().colwise().sum().matrix();
  lp.array() -= log_std.sum() + Scalar(mean.rows()) * half_log_2pi;
  return lp;
}

template <typename Scalar>
Scalar gaussian_entropy(const Mat<Scalar>& log_std) {
  const Scalar c = Scalar(0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e));
  return log_std.sum() + Scalar(log_std.rows()) * c;
}

struct LossWeights {
  double clip = 0.2;
  double value_coef = 0.5;
  double entropy_coef = 0.0;
};

template <typename Scalar>
struct Minibatch {
  Mat<Scalar> obs;         // obs_dim x B
  Mat<Scalar> actions;     // act_dim x B (unclamped samples)
  Row<Scalar> logp_old;
  Row<Scalar> advantages;
  Row<Scalar> returns;
};

struct LossStats {
  double total = 0.0;
  double policy = 0.0;
  double value = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
};

// loss = -mean(min(r A, clip(r) A)) + c_v mean((V - R)^2) - c_e H.
// Gradients are accumulated into `grads` when it is non-null.
template <typename Scalar>
LossStats ppo_loss(const PolicyNet<Scalar>& net, const Minibatch<Scalar>& mb,
                   const LossWeights& w, std::vector<Mat<Scalar>>* grads) {
  using P = PolicyNet<Scalar>;
  const Eigen::Index B = mb.obs.cols();
  typename P::Cache c;
  net.forward(mb.obs, c);
  const Mat<Scalar> log_std = net.log_std();
  const Row<Scalar> logp = gaussian_log_prob(c.mean, log_std, mb.actions);
  const Row<Scalar> log_ratio = logp - mb.logp_old;
  const Row<Scalar> ratio = log_ratio.array().exp().matrix();
  const Scalar lo = Scalar(1.0 - w.clip), hi = Scalar(1.0 + w.clip);

  LossStats s;
  Row<Scalar> d_logp(B);
  double surr_sum = 0.0, kl_sum = 0.0;
  int clipped = 0;
  for (Eigen::Index i = 0; i < B; ++i) {
    const Scalar r = ratio(i);
    const Scalar A = mb.advantages(i);
    const Scalar rc = std::clamp(r, lo, hi);
    const Scalar unclipped = r * A;
    const Scalar clipped_obj = rc * A;
    if (rc != r) ++clipped;
    // Gradient flows through the unclipped branch whenever it is the min.
    if (unclipped <= clipped_obj) {
      surr_sum += unclipped;
      d_logp(i) = -A * r / Scalar(B);
    } else {
      surr_sum += clipped_obj;
      d_logp(i) = Scalar(0);
    }
    kl_sum += static_cast<double>((r - Scalar(1)) - log_ratio(i));
  }
  const Row<Scalar> verr = c.value - mb.returns;
  s.policy = -surr_sum / B;
  s.value = static_cast<double>(verr.squaredNorm()) / B;
  s.entropy = static_cast<double>(gaussian_entropy(log_std));
  s.total = s.policy + w.value_coef * s.value - w.entropy_coef * s.entropy;
  s.clip_fraction = static_cast<double>(clipped) / B;
  s.approx_kl = kl_sum / B;

  if (grads) {
    const Mat<Scalar> inv_var = (Scalar(-2) * log_std.array()).exp().matrix();
    const Mat<Scalar> diff = mb.actions - c.mean;
    // dlogp/dmean = (a - mu) / sigma^2
    Mat<Scalar> d_mean = (diff.array().colwise() * inv_var.col(0).array()).matrix();
    d_mean = (d_mean.array().rowwise() * d_logp.array()).matrix();
    // dlogp/dlog_std = ((a - mu) / sigma)^2 - 1
    const Mat<Scalar> z2 = (diff.array().square().colwise() * inv_var.col(0).array()).matrix();
    Mat<Scalar> d_log_std = ((z2.array() - Scalar(1)).rowwise() * d_logp.array()).rowwise().sum().matrix();
    d_log_std.array() -= Scalar(w.entropy_coef);
    (*grads)[P::kLogStd] += d_log_std;
    const Row<Scalar> d_value = Scalar(2.0 * w.value_coef / B) * verr;
    net.backward(c, d_mean, d_value, *grads);
  }
  return s;
}

}  // namespace mintime::ppo
