#pragma once

#include <vector>

#include "hiersoc/encoders.hpp"
#include "hiersoc/motion.hpp"
#include "hiersoc/nn.hpp"

namespace hiersoc {

struct PolicyStackConfig {
  int levels = 3;  // K; 0 means the level-0 network produces the final action
  bool share_levels = true;
  int decoder_layers = 3;
  int decoder_heads = 8;
  int model_dim = 128;
  int ffn_dim = 0;
  // Output head multiplier, mm per frame per unit activation (0.01 in the
  // normalized meter scale); keeps untrained policies near the frozen baseline.
  double velocity_scale_mm = 10.0;

  void validate() const;
  nn::TransformerDims dims() const;
  std::string level_prefix(int k) const;
};

struct LevelActions {
  std::vector<JointAction> per_level;  // levels 0..K

  const JointAction& final_action() const { return per_level.back(); }
};

void add_policy_stack_params(nn::ParamSet& ps, const PolicyStackConfig& cfg, int joints,
                             int step_len);

// Batched tape-level forward passes. local rows are ordered (window, agent);
// action rows are ordered (window, agent, frame) and hold velocities in
// mm/frame, [(B*P*m) x 3J].
ad::Var act_level0_vars(const nn::Ctx& ctx, ad::Var local, ad::Var global, int persons,
                        const PolicyStackConfig& cfg, int step_len, int joints);
ad::Var act_levelk_vars(const nn::Ctx& ctx, ad::Var local, ad::Var prev_actions, int level,
                        int persons, const PolicyStackConfig& cfg, int step_len, int joints);
std::vector<ad::Var> hierarchy_actions_vars(const nn::Ctx& ctx, const EncodedBatchVars& enc,
                                            int persons, const PolicyStackConfig& cfg,
                                            int step_len, int joints);

JointAction joint_action_from_rows(const Mat& rows, int persons, int step_len);
Mat rows_from_joint_action(const JointAction& action);

// Single-state operations.
JointAction act_level0(const StateFeatures& features, const PolicyStackConfig& cfg,
                       const nn::ParamSet& params);
JointAction act_levelk(const StateFeatures& features, const JointAction& prev, int level,
                       const PolicyStackConfig& cfg, const nn::ParamSet& params);
LevelActions hierarchy_actions(const StateFeatures& features, const PolicyStackConfig& cfg,
                               const nn::ParamSet& params);

// Captures the tape graph of a rollout for adversarial training.
struct RolloutCapture {
  std::vector<std::vector<ad::Var>> level_actions;  // [steps][levels 0..K]
  std::vector<std::vector<MdpState>> states;        // [steps][windows], pre-action states
};

// Autoregressive rollout of a batch of histories on one tape; each history
// contributes its last T frames as the initial state. Executes
// `execute_level` (-1 -> K) and returns the T' predicted frames per history.
std::vector<MultiPersonClip> rollout_batch(const nn::Ctx& ctx,
                                           const std::vector<MultiPersonClip>& histories,
                                           const MdpConfig& mdp, const EncoderConfig& enc_cfg,
                                           const PolicyStackConfig& cfg, int execute_level = -1,
                                           RolloutCapture* capture = nullptr);

MultiPersonClip rollout(const MultiPersonClip& history, const MdpConfig& mdp,
                        const EncoderConfig& enc_cfg, const PolicyStackConfig& cfg,
                        const nn::ParamSet& params, int execute_level = -1);

}  // namespace hiersoc
