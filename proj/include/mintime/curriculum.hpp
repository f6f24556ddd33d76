#pragma once

// Four-stage spawn-range schedule with an endpoint-RMSE promotion rule,
// and the batched deterministic rollout used to score a policy.

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "mintime/env.hpp"
#include "mintime/parallel.hpp"

namespace mintime::curriculum {

inline constexpr std::array<double, 4> kStageRanges = {1.0, 5.0, 10.0, 20.0};

struct RolloutOutcome {
  Vec3 final_position = Vec3::Zero();
  Vec3 goal = Vec3::Zero();
  Vec3 start = Vec3::Zero();
  double final_distance = 0.0;
  double final_speed = 0.0;
  double duration = 0.0;
  double episode_return = 0.0;
  env::DoneReason reason = env::DoneReason::kNone;
};

// Policy: void(std::span<const env::Observation>, std::span<env::NormalizedAction>).
// Instance i is seeded with derive_seed(seed, i), so results do not depend
// on the thread count.
template <typename Policy>
std::vector<RolloutOutcome> run_rollouts(Policy&& policy, const env::EnvConfig& cfg, int count,
                                         std::uint64_t seed, std::size_t threads = 1) {
  if (count <= 0) throw std::invalid_argument("curriculum: rollout count must be positive");
  std::vector<env::QuadEnv> envs;
  envs.reserve(count);
  std::vector<RolloutOutcome> out(count);
  for (int i = 0; i < count; ++i) {
    envs.emplace_back(cfg, derive_seed(seed, i));
    envs.back().reset();
    out[i].start = envs.back().state().p;
    out[i].goal = envs.back().goal().position;
  }
  std::vector<env::Observation> obs(count);
  for (int i = 0; i < count; ++i)
    obs[i] = env::observe(envs[i].state(), envs[i].goal(), envs[i].previous_action());

  std::vector<int> active(count);
  for (int i = 0; i < count; ++i) active[i] = i;
  std::vector<env::Observation> batch_obs;
  std::vector<env::NormalizedAction> batch_act;
  while (!active.empty()) {
    batch_obs.resize(active.size());
    batch_act.resize(active.size());
    for (std::size_t k = 0; k < active.size(); ++k) batch_obs[k] = obs[active[k]];
    policy(std::span<const env::Observation>(batch_obs), std::span<env::NormalizedAction>(batch_act));
    parallel_for(active.size(), threads, [&](std::size_t k) {
      const int i = active[k];
      const env::StepResult r = envs[i].step(batch_act[k]);
      obs[i] = r.observation;
      out[i].episode_return += r.reward;
      if (r.done) {
        const auto& s = envs[i].state();
        out[i].final_position = s.p;
        out[i].final_distance = (s.p - out[i].goal).norm();
        out[i].final_speed = s.v.norm();
        out[i].duration = envs[i].time();
        out[i].reason = r.info.reason;
      }
    });
    std::erase_if(active, [&](int i) { return envs[i].done(); });
  }
  return out;
}

inline double endpoint_rmse(std::span<const RolloutOutcome> rollouts) {
  if (rollouts.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& r : rollouts) acc += (r.final_position - r.goal).squaredNorm();
  return std::sqrt(acc / static_cast<double>(rollouts.size()));
}

struct CurriculumConfig {
  int start_stage = 1;
  // Promotion never goes past this stage.
  int final_stage = 4;
  double threshold = 2.0;
  int eval_rollouts = 100;
  bool eval_randomize_dynamics = false;
  bool enabled = true;
  std::uint64_t eval_seed = 0x5eedULL;

  void validate() const {
    if (start_stage < 1 || start_stage > 4 || final_stage < start_stage || final_stage > 4)
      throw std::invalid_argument("curriculum: stages must satisfy 1 <= start <= final <= 4");
    if (!(threshold > 0.0)) throw std::invalid_argument("curriculum: threshold must be positive");
    if (eval_rollouts < 1) throw std::invalid_argument("curriculum: eval_rollouts must be >= 1");
  }
};

struct PromotionResult {
  double rmse = 0.0;
  bool promote = false;
  int stage_before = 1;
  int stage_after = 1;
  std::vector<RolloutOutcome> rollouts;
};

inline double stage_range(int stage) {
  if (stage < 1 || stage > 4) throw std::out_of_range("curriculum: stage must be in 1..4");
  return kStageRanges[stage - 1];
}

inline bool promotion_rule(double rmse, int stage, int final_stage, double threshold) {
  return rmse < threshold && stage < final_stage;
}

class Curriculum {
 public:
  explicit Curriculum(CurriculumConfig cfg = {}) : cfg_(cfg), stage_(cfg.start_stage) {
    cfg_.validate();
  }

  const CurriculumConfig& config() const { return cfg_; }
  int stage() const { return stage_; }
  double current_range() const { return stage_range(stage_); }

  // Environment config used for promotion rollouts at the current stage.
  env::EnvConfig eval_config(env::EnvConfig base) const {
    base.spawn_half_width = current_range();
    base.randomize_dynamics = cfg_.eval_randomize_dynamics;
    return base;
  }

  // Rollouts draw from a stream keyed by (eval_seed, tag), never from the
  // training seeds.
  template <typename Policy>
  PromotionResult evaluate_promotion(Policy&& policy, const env::EnvConfig& base, std::uint64_t tag,
                                     std::size_t threads = 1) {
    PromotionResult res;
    res.stage_before = stage_;
    res.rollouts = run_rollouts(policy, eval_config(base), cfg_.eval_rollouts,
                                derive_seed(cfg_.eval_seed, tag), threads);
    res.rmse = endpoint_rmse(res.rollouts);
    res.promote = cfg_.enabled && promotion_rule(res.rmse, stage_, cfg_.final_stage, cfg_.threshold);
    if (res.promote) ++stage_;
    res.stage_after = stage_;
    return res;
  }

  // Restores a stage read from a checkpoint; stages only move forward.
  void restore(int stage) {
    if (stage < stage_ || stage > 4) throw std::invalid_argument("curriculum: invalid restored stage");
    stage_ = stage;
  }

 private:
  CurriculumConfig cfg_;
  int stage_;
};

}  // namespace mintime::curriculum
