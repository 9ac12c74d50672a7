#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hiersoc/encoders.hpp"
#include "hiersoc/metrics.hpp"
#include "hiersoc/motion.hpp"
#include "hiersoc/policy.hpp"

namespace hiersoc {

struct DiscriminatorConfig {
  int layers = 3;
  int heads = 8;
  int model_dim = 128;
  int ffn_dim = 0;

  void validate() const { dims().validate(); }
  nn::TransformerDims dims() const { return nn::TransformerDims{layers, heads, model_dim, ffn_dim}; }
};

struct LossWeights {
  double lambda = 0.1;
  bool enable_gail = true;
  bool enable_mid_gail = true;
  // Explicit level subset; empty means "derive from the flags".
  std::vector<int> custom_levels;

  // Resolved set: {} when GAIL is off, {K} without mid-level GAIL, else {1..K}.
  std::vector<int> gail_levels(int levels_k) const;
  void validate(int levels_k) const;
};

struct OptimConfig {
  double learning_rate = 1e-4;
  int batch_size = 16;
  double grad_clip = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

// Expert windows: full clips of T + T' frames for all P agents.
struct TrainBatch {
  std::vector<MultiPersonClip> windows;

  void validate(const MdpConfig& mdp) const;
};

// MSE over all (step, agent, frame, joint, coordinate) velocity entries.
double bc_loss(const std::vector<JointAction>& pred_steps,
               const std::vector<JointAction>& expert_steps);

// L_BC + lambda * L_GAIL; lambda == 0 returns bc unchanged.
double combined_policy_loss(double bc, double gail, const LossWeights& weights);

void add_discriminator_params(nn::ParamSet& ps, const DiscriminatorConfig& cfg, int joints);

struct StateActionPair {
  const MdpState* state;
  JointAction action;
};

// D(s, a): the last W history frames of all agents extended by the m
// action frames via the transition, scored by a dedicated encoder + logistic head.
double disc_score(const MdpState& state, const JointAction& action,
                  const DiscriminatorConfig& cfg, const nn::ParamSet& params,
                  int window_frames = 0);

// -( E_policy[log D] + E_expert[log(1 - D)] ), the discriminator's minimization
// target (generated pairs are labeled high).
double disc_loss(const std::vector<StateActionPair>& policy_pairs,
                 const std::vector<StateActionPair>& expert_pairs,
                 const DiscriminatorConfig& cfg, const nn::ParamSet& params,
                 int window_frames = 0);

// sum_k E[log D(s, pi_k(s))] over the given per-level pair sets, minimized by
// the policy with D fixed.
double gail_policy_loss(const std::vector<std::vector<StateActionPair>>& per_level_pairs,
                        const DiscriminatorConfig& cfg, const nn::ParamSet& params,
                        int window_frames = 0);

// Tape-level discriminator forward for a batch of pairs sharing (P, J, W).
ad::Var disc_scores_vars(const nn::Ctx& ctx, const std::vector<const MdpState*>& states,
                         ad::Var action_rows, int step_len, const DiscriminatorConfig& cfg,
                         int window_frames);

struct TrainerConfig {
  MdpConfig mdp;
  EncoderConfig encoder;
  PolicyStackConfig stack;
  DiscriminatorConfig disc;
  LossWeights loss;
  OptimConfig optim;
  std::uint64_t seed = 0;
  int window_stride = 0;  // training window stride; 0 -> step length m

  void validate() const;
};

struct LossRecord {
  std::int64_t step = 0;
  double bc = 0.0;
  double gail = 0.0;
  double disc = 0.0;
  double combined = 0.0;
  double grad_norm = 0.0;
};

// Alternating optimization: one discriminator update, then one policy+encoder
// update with the discriminator frozen.
class Trainer {
 public:
  Trainer(TrainerConfig cfg, std::vector<MultiPersonClip> clips);

  LossRecord train_step();
  LossRecord train_step(const TrainBatch& batch);
  TrainBatch sample_batch() const;  // deterministic in (seed, step)

  std::int64_t step_count() const { return step_; }
  void set_step_count(std::int64_t s) { step_ = s; }
  std::size_t window_count() const { return windows_.size(); }

  const TrainerConfig& config() const { return cfg_; }
  nn::ParamSet& model_params() { return model_params_; }
  const nn::ParamSet& model_params() const { return model_params_; }
  nn::ParamSet& disc_params() { return disc_params_; }
  const nn::ParamSet& disc_params() const { return disc_params_; }
  nn::AdamState& model_opt() { return model_opt_; }
  nn::AdamState& disc_opt() { return disc_opt_; }

  const std::vector<MultiPersonClip>& clips() const { return clips_; }
  int joints() const { return joints_; }
  int persons() const { return persons_; }

  MultiPersonClip predict(const MultiPersonClip& history, int execute_level = -1) const;
  PredictorFn predictor(int execute_level = -1) const;

 private:
  TrainerConfig cfg_;
  std::vector<MultiPersonClip> clips_;
  struct Window {
    int clip;
    int start;
  };
  std::vector<Window> windows_;
  int persons_ = 0;
  int joints_ = 0;
  nn::ParamSet model_params_;
  nn::ParamSet disc_params_;
  nn::AdamState model_opt_;
  nn::AdamState disc_opt_;
  std::int64_t step_ = 0;
};

// One report per level 1..K, each rolling out with that level's action
// executed at every step. Requires K >= 1.
std::vector<ErrorReport> evaluate_levels(const Trainer& trainer,
                                         const std::vector<MultiPersonClip>& clips,
                                         const std::vector<double>& horizons_ms, int stride = 0,
                                         int threads = 0);

// Table-style ablation switches.
struct AblationSetup {
  PolicyStackConfig stack;
  LossWeights weights;
};

// Tags: a..d set K to 0/1/2/4, e is the full K=3 model, f drops mid-level GAIL,
// g drops GAIL entirely, h disables level weight sharing.
AblationSetup build_ablation(const std::string& tag);
AblationSetup build_ablation(const std::string& tag, PolicyStackConfig base_stack,
                             LossWeights base_weights);

}  // namespace hiersoc
