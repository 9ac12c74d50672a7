#include "hiersoc/policy.hpp"

#include <utility>

namespace hiersoc {

void PolicyStackConfig::validate() const {
  if (levels < 0) throw ConfigError("policy: K must be >= 0");
  dims().validate();
  if (!(velocity_scale_mm > 0.0)) throw ConfigError("policy: velocity_scale_mm must be positive");
}

nn::TransformerDims PolicyStackConfig::dims() const {
  return nn::TransformerDims{decoder_layers, decoder_heads, model_dim, ffn_dim};
}

std::string PolicyStackConfig::level_prefix(int k) const {
  if (k == 0) return "policy.l0";
  if (share_levels) return "policy.lk";
  return "policy.lk" + std::to_string(k);
}

namespace {

void add_level0_params(nn::ParamSet& ps, const PolicyStackConfig& cfg, int joints, int m) {
  const std::string p = cfg.level_prefix(0);
  ps.create(p + ".query.embed", m, cfg.model_dim);
  ps.create(p + ".mem_local.embed", 1, cfg.model_dim);
  ps.create(p + ".mem_global.embed", 1, cfg.model_dim);
  nn::add_decoder_params(ps, p, cfg.dims());
  nn::add_linear_params(ps, p + ".head", cfg.model_dim, 3 * joints);
}

void add_levelk_params(nn::ParamSet& ps, const std::string& p, const PolicyStackConfig& cfg,
                       int joints, int m) {
  ps.create(p + ".query.embed", m, cfg.model_dim);
  nn::add_linear_params(ps, p + ".act_embed", 3 * joints, cfg.model_dim);
  ps.create(p + ".self.embed", 1, cfg.model_dim);
  ps.create(p + ".mem_local.embed", 1, cfg.model_dim);
  ps.create(p + ".mem_act.embed", 1, cfg.model_dim);
  nn::add_decoder_params(ps, p, cfg.dims());
  nn::add_linear_params(ps, p + ".head", cfg.model_dim, 3 * joints);
}

// Learned queries tiled per (window, agent) block.
ad::Var tiled_queries(const nn::Ctx& ctx, const std::string& prefix, int blocks, int m) {
  std::vector<int> idx(static_cast<std::size_t>(blocks) * m);
  for (int b = 0; b < blocks; ++b)
    for (int f = 0; f < m; ++f) idx[static_cast<std::size_t>(b) * m + f] = f;
  return ad::gather_rows(ctx.p(prefix + ".query.embed"), std::move(idx));
}

ad::Var head_fw(const nn::Ctx& ctx, ad::Var decoded, const std::string& prefix,
                const PolicyStackConfig& cfg) {
  return ad::scale(nn::linear_fw(ctx, decoded, prefix + ".head"), cfg.velocity_scale_mm);
}

}  // namespace

void add_policy_stack_params(nn::ParamSet& ps, const PolicyStackConfig& cfg, int joints,
                             int step_len) {
  cfg.validate();
  add_level0_params(ps, cfg, joints, step_len);
  if (cfg.levels >= 1) {
    if (cfg.share_levels) {
      add_levelk_params(ps, cfg.level_prefix(1), cfg, joints, step_len);
    } else {
      for (int k = 1; k <= cfg.levels; ++k)
        add_levelk_params(ps, cfg.level_prefix(k), cfg, joints, step_len);
    }
  }
}

ad::Var act_level0_vars(const nn::Ctx& ctx, ad::Var local, ad::Var global, int persons,
                        const PolicyStackConfig& cfg, int step_len, int joints) {
  const int bp = local.rows();
  if (persons <= 0 || bp % persons != 0) throw ShapeError("act_level0: bad persons count");
  const int windows = bp / persons;
  if (global.rows() != windows) throw ShapeError("act_level0: local/global row mismatch");
  const std::string prefix = cfg.level_prefix(0);

  ad::Var queries = tiled_queries(ctx, prefix, bp, step_len);
  ad::Var local_m = ad::add_rowvec(local, ctx.p(prefix + ".mem_local.embed"));
  ad::Var global_m = ad::add_rowvec(global, ctx.p(prefix + ".mem_global.embed"));
  // Memory segment for (window, agent): [s_l^p ; s_g].
  std::vector<int> idx;
  idx.reserve(static_cast<std::size_t>(bp) * 2);
  for (int w = 0; w < windows; ++w) {
    for (int p = 0; p < persons; ++p) {
      idx.push_back(w * persons + p);
      idx.push_back(bp + w);
    }
  }
  ad::Var memory = ad::gather_rows(ad::concat_rows({local_m, global_m}), std::move(idx));
  ad::Var decoded = nn::decoder_fw(ctx, queries, step_len, memory, 2, prefix, cfg.dims());
  ad::Var out = head_fw(ctx, decoded, prefix, cfg);
  if (out.cols() != 3 * joints) throw ShapeError("act_level0: head width mismatch");
  return out;
}

ad::Var act_levelk_vars(const nn::Ctx& ctx, ad::Var local, ad::Var prev_actions, int level,
                        int persons, const PolicyStackConfig& cfg, int step_len, int joints) {
  if (level < 1 || level > cfg.levels) throw ConfigError("act_levelk: level out of range");
  const int bp = local.rows();
  if (persons <= 0 || bp % persons != 0) throw ShapeError("act_levelk: bad persons count");
  const int windows = bp / persons;
  const int m = step_len;
  if (prev_actions.rows() != bp * m || prev_actions.cols() != 3 * joints)
    throw ShapeError("act_levelk: previous action shape mismatch");
  const std::string prefix = cfg.level_prefix(level);

  ad::Var queries = tiled_queries(ctx, prefix, bp, m);

  ad::Var act_tok = nn::linear_fw(ctx, prev_actions, prefix + ".act_embed");
  Mat pe_frame = nn::sinusoidal_positions(m, cfg.model_dim);
  Mat pe_tiled(bp * m, cfg.model_dim);
  for (int b = 0; b < bp; ++b) pe_tiled.middleRows(b * m, m) = pe_frame;
  act_tok = ad::add(act_tok, ctx.tape.constant(std::move(pe_tiled)));
  act_tok = ad::add_rowvec(act_tok, ctx.p(prefix + ".mem_act.embed"));
  ad::Var flagged = ad::add_rowvec(act_tok, ctx.p(prefix + ".self.embed"));
  ad::Var local_m = ad::add_rowvec(local, ctx.p(prefix + ".mem_local.embed"));

  // Memory per querying agent q: its own s_l plus every agent's previous-level
  // action tokens; q's own tokens carry the self marker so equivariance is
  // preserved under agent permutation.
  ad::Var pool = ad::concat_rows({local_m, act_tok, flagged});
  const int base_plain = bp;
  const int base_flagged = bp + bp * m;
  std::vector<int> idx;
  idx.reserve(static_cast<std::size_t>(bp) * (1 + static_cast<std::size_t>(persons) * m));
  for (int w = 0; w < windows; ++w) {
    for (int q = 0; q < persons; ++q) {
      idx.push_back(w * persons + q);
      for (int p = 0; p < persons; ++p) {
        const int block = (w * persons + p) * m;
        const int base = (p == q) ? base_flagged : base_plain;
        for (int f = 0; f < m; ++f) idx.push_back(base + block + f);
      }
    }
  }
  ad::Var memory = ad::gather_rows(pool, std::move(idx));
  ad::Var decoded =
      nn::decoder_fw(ctx, queries, m, memory, 1 + persons * m, prefix, cfg.dims());
  return head_fw(ctx, decoded, prefix, cfg);
}

std::vector<ad::Var> hierarchy_actions_vars(const nn::Ctx& ctx, const EncodedBatchVars& enc,
                                            int persons, const PolicyStackConfig& cfg,
                                            int step_len, int joints) {
  std::vector<ad::Var> levels;
  levels.reserve(cfg.levels + 1);
  levels.push_back(act_level0_vars(ctx, enc.local, enc.global, persons, cfg, step_len, joints));
  for (int k = 1; k <= cfg.levels; ++k)
    levels.push_back(
        act_levelk_vars(ctx, enc.local, levels.back(), k, persons, cfg, step_len, joints));
  return levels;
}

JointAction joint_action_from_rows(const Mat& rows, int persons, int step_len) {
  if (rows.rows() != persons * step_len) throw ShapeError("joint_action_from_rows: row mismatch");
  JointAction ja;
  ja.agents.reserve(persons);
  for (int p = 0; p < persons; ++p)
    ja.agents.push_back(AgentAction{rows.middleRows(p * step_len, step_len)});
  return ja;
}

Mat rows_from_joint_action(const JointAction& action) {
  const int P = action.person_count();
  if (P == 0) throw ShapeError("rows_from_joint_action: empty action");
  const int m = action.agents.front().frames();
  const int j3 = static_cast<int>(action.agents.front().velocities.cols());
  Mat rows(P * m, j3);
  for (int p = 0; p < P; ++p) {
    if (action.agents[p].frames() != m || action.agents[p].velocities.cols() != j3)
      throw ShapeError("rows_from_joint_action: ragged agent actions");
    rows.middleRows(p * m, m) = action.agents[p].velocities;
  }
  return rows;
}

namespace {

// Step length and joint count are implied by the built parameters.
int infer_step_len(const PolicyStackConfig& cfg, const nn::ParamSet& params) {
  return static_cast<int>(params.at(cfg.level_prefix(0) + ".query.embed").value.rows());
}

int infer_joints(const PolicyStackConfig& cfg, const nn::ParamSet& params) {
  return static_cast<int>(params.at(cfg.level_prefix(0) + ".head.w").value.cols()) / 3;
}

}  // namespace

JointAction act_level0(const StateFeatures& features, const PolicyStackConfig& cfg,
                       const nn::ParamSet& params) {
  ad::Tape tape;
  nn::Ctx ctx{tape, &params, /*track=*/false};
  const int P = features.persons();
  const int m = infer_step_len(cfg, params);
  const int joints = infer_joints(cfg, params);
  ad::Var local = tape.constant(features.local);
  ad::Var global = tape.constant(Mat(features.global));
  ad::Var out = act_level0_vars(ctx, local, global, P, cfg, m, joints);
  return joint_action_from_rows(out.value(), P, m);
}

JointAction act_levelk(const StateFeatures& features, const JointAction& prev, int level,
                       const PolicyStackConfig& cfg, const nn::ParamSet& params) {
  if (level < 1 || level > cfg.levels) throw ConfigError("act_levelk: level out of range");
  if (prev.person_count() != features.persons())
    throw ShapeError("act_levelk: previous action person count mismatch");
  ad::Tape tape;
  nn::Ctx ctx{tape, &params, /*track=*/false};
  const int P = features.persons();
  const int m = infer_step_len(cfg, params);
  const int joints = infer_joints(cfg, params);
  ad::Var local = tape.constant(features.local);
  ad::Var prev_rows = tape.constant(rows_from_joint_action(prev));
  ad::Var out = act_levelk_vars(ctx, local, prev_rows, level, P, cfg, m, joints);
  return joint_action_from_rows(out.value(), P, m);
}

LevelActions hierarchy_actions(const StateFeatures& features, const PolicyStackConfig& cfg,
                               const nn::ParamSet& params) {
  ad::Tape tape;
  nn::Ctx ctx{tape, &params, /*track=*/false};
  const int P = features.persons();
  const int m = infer_step_len(cfg, params);
  const int joints = infer_joints(cfg, params);
  EncodedBatchVars enc{tape.constant(features.local), tape.constant(Mat(features.global))};
  std::vector<ad::Var> levels = hierarchy_actions_vars(ctx, enc, P, cfg, m, joints);
  LevelActions out;
  out.per_level.reserve(levels.size());
  for (const ad::Var& v : levels) out.per_level.push_back(joint_action_from_rows(v.value(), P, m));
  return out;
}

std::vector<MultiPersonClip> rollout_batch(const nn::Ctx& ctx,
                                           const std::vector<MultiPersonClip>& histories,
                                           const MdpConfig& mdp, const EncoderConfig& enc_cfg,
                                           const PolicyStackConfig& cfg, int execute_level,
                                           RolloutCapture* capture) {
  mdp.validate();
  cfg.validate();
  if (histories.empty()) throw ShapeError("rollout: empty history batch");
  const int T = mdp.history_frames;
  const int m = mdp.step_len();
  const int exec = execute_level < 0 ? cfg.levels : execute_level;
  if (exec > cfg.levels) throw ConfigError("rollout: execute_level beyond K");
  const int P = histories.front().persons();
  const int J = histories.front().joints();

  std::vector<MdpState> states;
  states.reserve(histories.size());
  for (const MultiPersonClip& h : histories) {
    if (h.frames() < T) throw ShapeError("rollout: history shorter than T");
    if (h.persons() != P || h.joints() != J) throw ShapeError("rollout: inconsistent batch");
    states.push_back(make_state(h.slice_frames(h.frames() - T, T), 1, mdp));
  }

  const int W = enc_cfg.window_frames > 0 ? enc_cfg.window_frames : T;
  const int B = static_cast<int>(histories.size());
  for (int i = 1; i <= mdp.steps; ++i) {
    if (capture) capture->states.push_back(states);
    std::vector<const MdpState*> ptrs;
    ptrs.reserve(states.size());
    for (const MdpState& s : states) ptrs.push_back(&s);
    ad::Var raw = ctx.tape.constant(assemble_raw_tokens(ptrs, W));
    TokenLayout layout{B, P, W, J};
    EncodedBatchVars enc =
        encode_batch_vars(ctx, raw, layout, enc_cfg, histories.front().skeleton().root_index);
    std::vector<ad::Var> levels = hierarchy_actions_vars(ctx, enc, P, cfg, m, J);
    if (capture) capture->level_actions.push_back(levels);
    const Mat& act = levels[exec].value();
    for (int w = 0; w < B; ++w) {
      JointAction ja = joint_action_from_rows(act.middleRows(w * P * m, P * m), P, m);
      states[w] = apply_action(states[w], ja, mdp);
    }
  }

  std::vector<MultiPersonClip> futures;
  futures.reserve(states.size());
  for (const MdpState& s : states)
    futures.push_back(s.clip_prefix.slice_frames(T, mdp.future_frames));
  return futures;
}

MultiPersonClip rollout(const MultiPersonClip& history, const MdpConfig& mdp,
                        const EncoderConfig& enc_cfg, const PolicyStackConfig& cfg,
                        const nn::ParamSet& params, int execute_level) {
  ad::Tape tape;
  nn::Ctx ctx{tape, &params, /*track=*/false};
  return rollout_batch(ctx, {history}, mdp, enc_cfg, cfg, execute_level, nullptr).front();
}

}  // namespace hiersoc
