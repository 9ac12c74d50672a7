#include "hiersoc/imitation.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace hiersoc {

std::vector<int> LossWeights::gail_levels(int levels_k) const {
  if (!enable_gail || levels_k < 1) return {};
  if (!custom_levels.empty()) return custom_levels;
  if (!enable_mid_gail) return {levels_k};
  std::vector<int> out(levels_k);
  for (int k = 1; k <= levels_k; ++k) out[k - 1] = k;
  return out;
}

void LossWeights::validate(int levels_k) const {
  if (lambda < 0.0) throw ConfigError("loss: lambda must be >= 0");
  for (int k : custom_levels) {
    if (k < 1 || k > levels_k) throw ConfigError("loss: gail level outside 1..K");
    if (!enable_mid_gail && k != levels_k)
      throw ConfigError("loss: mid-level GAIL disabled but a mid level was requested");
    if (!enable_gail) throw ConfigError("loss: GAIL disabled but levels were requested");
  }
}

void OptimConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("optim: learning_rate must be positive");
  if (batch_size < 1) throw ConfigError("optim: batch_size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("optim: betas must be in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("optim: eps must be positive");
}

void TrainBatch::validate(const MdpConfig& mdp) const {
  mdp.validate();
  if (windows.empty()) throw ShapeError("train batch: empty");
  const int frames = mdp.history_frames + mdp.future_frames;
  const int P = windows.front().persons();
  const int J = windows.front().joints();
  for (const MultiPersonClip& w : windows) {
    if (w.frames() != frames) throw ShapeError("train batch: window must have T + T' frames");
    if (w.persons() != P || w.joints() != J) throw ShapeError("train batch: inconsistent shapes");
  }
}

double bc_loss(const std::vector<JointAction>& pred_steps,
               const std::vector<JointAction>& expert_steps) {
  if (pred_steps.size() != expert_steps.size() || pred_steps.empty())
    throw ShapeError("bc_loss: step count mismatch");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < pred_steps.size(); ++i) {
    const JointAction& a = pred_steps[i];
    const JointAction& b = expert_steps[i];
    if (a.person_count() != b.person_count()) throw ShapeError("bc_loss: person count mismatch");
    for (int p = 0; p < a.person_count(); ++p) {
      const Mat& va = a.agents[p].velocities;
      const Mat& vb = b.agents[p].velocities;
      if (va.rows() != vb.rows() || va.cols() != vb.cols())
        throw ShapeError("bc_loss: velocity shape mismatch");
      sum += (va - vb).squaredNorm();
      count += static_cast<std::size_t>(va.size());
    }
  }
  return sum / static_cast<double>(count);
}

double combined_policy_loss(double bc, double gail, const LossWeights& weights) {
  if (weights.lambda == 0.0) return bc;
  return bc + weights.lambda * gail;
}

void add_discriminator_params(nn::ParamSet& ps, const DiscriminatorConfig& cfg, int joints) {
  cfg.validate();
  nn::add_encoder_params(ps, "disc", 3 * joints, cfg.dims());
  nn::add_linear_params(ps, "disc.head", cfg.model_dim, 1);
}

ad::Var disc_scores_vars(const nn::Ctx& ctx, const std::vector<const MdpState*>& states,
                         ad::Var action_rows, int step_len, const DiscriminatorConfig& cfg,
                         int window_frames) {
  if (states.empty()) throw ShapeError("disc: empty state batch");
  const MultiPersonClip& first = states.front()->clip_prefix;
  const int P = first.persons();
  const int J = first.joints();
  const int B = static_cast<int>(states.size());
  const int m = step_len;
  const int W = window_frames > 0 ? window_frames : first.frames();
  if (action_rows.rows() != B * P * m || action_rows.cols() != 3 * J)
    throw ShapeError("disc: action rows shape mismatch");

  ad::Tape& tape = ctx.tape;
  // History tokens and per-agent last frames are data; the m action frames are
  // displacement sums on the tape so policy gradients can flow through D.
  Mat hist = assemble_raw_tokens(states, W);
  Mat last(B * P, 3 * J);
  for (int w = 0; w < B; ++w) {
    const MultiPersonClip& clip = states[w]->clip_prefix;
    for (int p = 0; p < P; ++p) last.row(w * P + p) = clip.flat_frame(p, clip.frames() - 1);
  }
  ad::Var hist_v = tape.constant(std::move(hist));
  ad::Var disp = ad::cumsum_rows(action_rows, m);
  std::vector<int> last_idx(static_cast<std::size_t>(B * P) * m);
  for (int i = 0; i < B * P; ++i)
    for (int f = 0; f < m; ++f) last_idx[static_cast<std::size_t>(i) * m + f] = i;
  ad::Var act_pos = ad::add(disp, ad::gather_rows(tape.constant(std::move(last)), std::move(last_idx)));

  std::vector<int> order;
  order.reserve(static_cast<std::size_t>(B * P) * (W + m));
  for (int i = 0; i < B * P; ++i) {
    for (int f = 0; f < W; ++f) order.push_back(i * W + f);
    for (int f = 0; f < m; ++f) order.push_back(B * P * W + i * m + f);
  }
  ad::Var tokens_raw = ad::gather_rows(ad::concat_rows({hist_v, act_pos}), std::move(order));

  TokenLayout layout{B, P, W + m, J};
  TokenNormSpec spec{layout, first.skeleton().root_index, W - 1, /*per_agent_center=*/false,
                     /*root_relative=*/false, 1e-3};
  ad::Var tokens = normalize_tokens(tokens_raw, spec);

  Mat pe = nn::sinusoidal_positions(W + m, cfg.model_dim);
  Mat pe_tiled(B * P * (W + m), cfg.model_dim);
  for (int i = 0; i < B * P; ++i) pe_tiled.middleRows(i * (W + m), W + m) = pe;
  ad::Var emb = ad::add(nn::linear_fw(ctx, tokens, "disc.embed"), tape.constant(std::move(pe_tiled)));
  ad::Var enc = nn::encoder_fw(ctx, emb, P * (W + m), "disc", cfg.dims());
  ad::Var pooled = ad::mean_pool_rows(enc, P * (W + m));
  return ad::logistic(nn::linear_fw(ctx, pooled, "disc.head"));
}

namespace {

ad::Var disc_scores_for_pairs(const nn::Ctx& ctx, const std::vector<StateActionPair>& pairs,
                              const DiscriminatorConfig& cfg, int window_frames) {
  std::vector<const MdpState*> states;
  states.reserve(pairs.size());
  const int m = pairs.front().action.agents.front().frames();
  std::vector<Mat> rows;
  rows.reserve(pairs.size());
  for (const StateActionPair& pr : pairs) {
    states.push_back(pr.state);
    rows.push_back(rows_from_joint_action(pr.action));
  }
  Mat stacked(static_cast<int>(pairs.size()) * rows.front().rows(), rows.front().cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    stacked.middleRows(static_cast<int>(i) * rows.front().rows(), rows.front().rows()) = rows[i];
  return disc_scores_vars(ctx, states, ctx.tape.constant(std::move(stacked)), m, cfg,
                          window_frames);
}

}  // namespace

double disc_score(const MdpState& state, const JointAction& action, const DiscriminatorConfig& cfg,
                  const nn::ParamSet& params, int window_frames) {
  ad::Tape tape;
  nn::Ctx ctx{tape, &params, /*track=*/false};
  ad::Var s = disc_scores_for_pairs(ctx, {{&state, action}}, cfg, window_frames);
  return s.value()(0, 0);
}

double disc_loss(const std::vector<StateActionPair>& policy_pairs,
                 const std::vector<StateActionPair>& expert_pairs, const DiscriminatorConfig& cfg,
                 const nn::ParamSet& params, int window_frames) {
  if (policy_pairs.empty() || expert_pairs.empty())
    throw ShapeError("disc_loss: both pair batches must be non-empty");
  ad::Tape tape;
  nn::Ctx ctx{tape, &params, /*track=*/false};
  ad::Var sp = disc_scores_for_pairs(ctx, policy_pairs, cfg, window_frames);
  ad::Var se = disc_scores_for_pairs(ctx, expert_pairs, cfg, window_frames);
  ad::Var loss = ad::scale(
      ad::add(ad::mean_all(ad::log_elem(sp)), ad::mean_all(ad::log_elem(ad::one_minus(se)))), -1.0);
  return loss.scalar();
}

double gail_policy_loss(const std::vector<std::vector<StateActionPair>>& per_level_pairs,
                        const DiscriminatorConfig& cfg, const nn::ParamSet& params,
                        int window_frames) {
  if (per_level_pairs.empty()) return 0.0;
  ad::Tape tape;
  nn::Ctx ctx{tape, &params, /*track=*/false};
  double total = 0.0;
  for (const auto& pairs : per_level_pairs) {
    if (pairs.empty()) throw ShapeError("gail_policy_loss: empty level pair set");
    ad::Var s = disc_scores_for_pairs(ctx, pairs, cfg, window_frames);
    total += ad::mean_all(ad::log_elem(s)).scalar();
  }
  return total;
}

void TrainerConfig::validate() const {
  mdp.validate();
  encoder.validate();
  stack.validate();
  disc.validate();
  loss.validate(stack.levels);
  optim.validate();
  if (encoder.model_dim != stack.model_dim)
    throw ConfigError("trainer: encoder and policy model_dim must match");
  if (window_stride < 0) throw ConfigError("trainer: window_stride must be >= 0");
}

Trainer::Trainer(TrainerConfig cfg, std::vector<MultiPersonClip> clips)
    : cfg_(std::move(cfg)), clips_(std::move(clips)) {
  cfg_.validate();
  if (clips_.empty()) throw DataError("trainer: no clips");
  persons_ = clips_.front().persons();
  joints_ = clips_.front().joints();
  const int needed = cfg_.mdp.history_frames + cfg_.mdp.future_frames;
  const int stride = cfg_.window_stride > 0 ? cfg_.window_stride : cfg_.mdp.step_len();
  for (std::size_t c = 0; c < clips_.size(); ++c) {
    const MultiPersonClip& clip = clips_[c];
    if (clip.persons() != persons_ || clip.joints() != joints_)
      throw DataError("trainer: clips disagree on (P, J)");
    for (int s = 0; s + needed <= clip.frames(); s += stride)
      windows_.push_back({static_cast<int>(c), s});
  }
  if (windows_.empty()) throw DataError("trainer: no clip long enough for T + T' frames");
  if (cfg_.encoder.window_frames == 0) cfg_.encoder.window_frames = cfg_.mdp.history_frames;
  if (cfg_.encoder.window_frames > cfg_.mdp.history_frames)
    throw ConfigError("trainer: encoder window longer than history");

  add_encoder_stack_params(model_params_, cfg_.encoder, joints_);
  add_policy_stack_params(model_params_, cfg_.stack, joints_, cfg_.mdp.step_len());
  model_params_.init_truncated_normal(cfg_.seed);
  add_discriminator_params(disc_params_, cfg_.disc, joints_);
  disc_params_.init_truncated_normal(cfg_.seed + 0x517CC1B727220A95ULL);
  model_opt_.attach(model_params_.all());
  disc_opt_.attach(disc_params_.all());
}

TrainBatch Trainer::sample_batch() const {
  TrainBatch batch;
  const int needed = cfg_.mdp.history_frames + cfg_.mdp.future_frames;
  const std::size_t want = static_cast<std::size_t>(cfg_.optim.batch_size);
  std::vector<std::size_t> picks;
  if (windows_.size() <= want) {
    picks.resize(windows_.size());
    for (std::size_t i = 0; i < picks.size(); ++i) picks[i] = i;
  } else {
    std::mt19937_64 rng(cfg_.seed ^ (0x2545F4914F6CDD1DULL * (step_ + 1)));
    std::vector<std::size_t> all(windows_.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    std::sample(all.begin(), all.end(), std::back_inserter(picks), want, rng);
  }
  batch.windows.reserve(picks.size());
  for (std::size_t i : picks) {
    const Window& w = windows_[i];
    batch.windows.push_back(clips_[w.clip].slice_frames(w.start, needed));
  }
  return batch;
}

LossRecord Trainer::train_step() { return train_step(sample_batch()); }

LossRecord Trainer::train_step(const TrainBatch& batch) {
  batch.validate(cfg_.mdp);
  const int B = static_cast<int>(batch.windows.size());
  const int P = batch.windows.front().persons();
  const int J = batch.windows.front().joints();
  if (P != persons_ || J != joints_) throw ShapeError("train_step: batch shape mismatch");
  const int T = cfg_.mdp.history_frames;
  const int L = cfg_.mdp.steps;
  const int m = cfg_.mdp.step_len();
  const int W = cfg_.encoder.window_frames;
  const int root = batch.windows.front().skeleton().root_index;
  const int K = cfg_.stack.levels;

  ad::Tape tape;
  nn::Ctx mctx{tape, &model_params_, /*track=*/true};

  // Teacher-forced behavioral cloning: states are expert prefixes, targets the
  // expert velocities of each step segment.
  std::vector<std::vector<MdpState>> expert_states(L);
  std::vector<Mat> expert_rows(L);
  ad::Var bc_var;
  {
    std::vector<ad::Var> step_losses;
    for (int i = 1; i <= L; ++i) {
      std::vector<MdpState>& states = expert_states[i - 1];
      states.reserve(B);
      for (const MultiPersonClip& wclip : batch.windows)
        states.push_back(make_state(wclip.slice_frames(0, T + (i - 1) * m), i, cfg_.mdp));
      std::vector<const MdpState*> ptrs;
      for (const MdpState& s : states) ptrs.push_back(&s);

      Mat targets(B * P * m, 3 * J);
      for (int w = 0; w < B; ++w) {
        for (int p = 0; p < P; ++p) {
          AgentAction a = expert_action(batch.windows[w], p, T + (i - 1) * m - 1, m);
          targets.middleRows((w * P + p) * m, m) = a.velocities;
        }
      }
      expert_rows[i - 1] = targets;

      ad::Var raw = tape.constant(assemble_raw_tokens(ptrs, W));
      TokenLayout layout{B, P, W, J};
      EncodedBatchVars enc = encode_batch_vars(mctx, raw, layout, cfg_.encoder, root);
      std::vector<ad::Var> levels = hierarchy_actions_vars(mctx, enc, P, cfg_.stack, m, J);
      ad::Var diff = ad::sub(levels.back(), tape.constant(targets));
      step_losses.push_back(ad::mean_all(ad::cmul(diff, diff)));
    }
    ad::Var acc = step_losses.front();
    for (std::size_t i = 1; i < step_losses.size(); ++i) acc = ad::add(acc, step_losses[i]);
    bc_var = ad::scale(acc, 1.0 / L);
  }

  const std::vector<int> gail_levels = cfg_.loss.gail_levels(K);
  double disc_loss_value = 0.0;
  double gail_value = 0.0;
  ad::Var total = bc_var;

  if (!gail_levels.empty()) {
    // On-policy rollout from the expert histories, graph kept for the policy side.
    std::vector<MultiPersonClip> histories;
    histories.reserve(B);
    for (const MultiPersonClip& wclip : batch.windows) histories.push_back(wclip.slice_frames(0, T));
    RolloutCapture capture;
    rollout_batch(mctx, histories, cfg_.mdp, cfg_.encoder, cfg_.stack, K, &capture);

    // Discriminator update first (Eq. alternation): generated pairs scored
    // against expert pairs, actions detached.
    {
      ad::Tape dtape;
      nn::Ctx dctx{dtape, &disc_params_, /*track=*/true};
      std::vector<ad::Var> pol_scores, exp_scores;
      for (int i = 0; i < L; ++i) {
        std::vector<const MdpState*> ptrs;
        for (const MdpState& s : capture.states[i]) ptrs.push_back(&s);
        for (int k : gail_levels) {
          ad::Var act = dtape.constant(capture.level_actions[i][k].value());
          pol_scores.push_back(disc_scores_vars(dctx, ptrs, act, m, cfg_.disc, W));
        }
        std::vector<const MdpState*> eptrs;
        for (const MdpState& s : expert_states[i]) eptrs.push_back(&s);
        ad::Var eact = dtape.constant(expert_rows[i]);
        exp_scores.push_back(disc_scores_vars(dctx, eptrs, eact, m, cfg_.disc, W));
      }
      ad::Var dloss = ad::scale(
          ad::add(ad::mean_all(ad::log_elem(ad::concat_rows(pol_scores))),
                  ad::mean_all(ad::log_elem(ad::one_minus(ad::concat_rows(exp_scores))))),
          -1.0);
      disc_loss_value = dloss.scalar();
      if (!std::isfinite(disc_loss_value))
        throw NumericError("train_step: discriminator loss is not finite");
      disc_params_.zero_grad();
      dtape.backward(dloss);
      nn::AdamConfig ac{cfg_.optim.learning_rate, cfg_.optim.beta1, cfg_.optim.beta2,
                        cfg_.optim.eps, cfg_.optim.grad_clip};
      disc_opt_.step(ac);
    }

    // Policy-side GAIL with the updated discriminator frozen.
    if (cfg_.loss.lambda != 0.0) {
      nn::Ctx dfrozen{tape, &disc_params_, /*track=*/false};
      ad::Var gail_var;
      bool first = true;
      for (int k : gail_levels) {
        std::vector<ad::Var> level_scores;
        for (int i = 0; i < L; ++i) {
          std::vector<const MdpState*> ptrs;
          for (const MdpState& s : capture.states[i]) ptrs.push_back(&s);
          level_scores.push_back(
              disc_scores_vars(dfrozen, ptrs, capture.level_actions[i][k], m, cfg_.disc, W));
        }
        ad::Var term = ad::mean_all(ad::log_elem(ad::concat_rows(level_scores)));
        gail_var = first ? term : ad::add(gail_var, term);
        first = false;
      }
      gail_value = gail_var.scalar();
      total = ad::add(bc_var, ad::scale(gail_var, cfg_.loss.lambda));
    }
  }

  const double bc_value = bc_var.scalar();
  const double total_value = total.scalar();
  if (!std::isfinite(bc_value) || !std::isfinite(total_value) || !std::isfinite(gail_value)) {
    std::ostringstream os;
    os << "train_step: non-finite loss at step " << step_ << " (bc=" << bc_value
       << " gail=" << gail_value << " total=" << total_value << ")";
    throw NumericError(os.str());
  }

  model_params_.zero_grad();
  tape.backward(total);
  nn::AdamConfig ac{cfg_.optim.learning_rate, cfg_.optim.beta1, cfg_.optim.beta2, cfg_.optim.eps,
                    cfg_.optim.grad_clip};
  const double grad_norm = model_opt_.step(ac);

  LossRecord rec{step_, bc_value, gail_value, disc_loss_value, total_value, grad_norm};
  ++step_;
  return rec;
}

MultiPersonClip Trainer::predict(const MultiPersonClip& history, int execute_level) const {
  return rollout(history, cfg_.mdp, cfg_.encoder, cfg_.stack, model_params_, execute_level);
}

PredictorFn Trainer::predictor(int execute_level) const {
  return [this, execute_level](const MultiPersonClip& history) {
    return predict(history, execute_level);
  };
}

AblationSetup build_ablation(const std::string& tag) {
  return build_ablation(tag, PolicyStackConfig{}, LossWeights{});
}

AblationSetup build_ablation(const std::string& tag, PolicyStackConfig base_stack,
                             LossWeights base_weights) {
  if (tag.size() != 1) throw ConfigError("ablation: unknown tag '" + tag + "'");
  AblationSetup setup{base_stack, base_weights};
  setup.stack.levels = 3;
  setup.stack.share_levels = true;
  setup.weights.enable_gail = true;
  setup.weights.enable_mid_gail = true;
  setup.weights.custom_levels.clear();
  switch (tag[0]) {
    case 'a': setup.stack.levels = 0; break;
    case 'b': setup.stack.levels = 1; break;
    case 'c': setup.stack.levels = 2; break;
    case 'd': setup.stack.levels = 4; break;
    case 'e': break;
    case 'f': setup.weights.enable_mid_gail = false; break;
    case 'g': setup.weights.enable_gail = false; break;
    case 'h': setup.stack.share_levels = false; break;
    default: throw ConfigError("ablation: unknown tag '" + tag + "'");
  }
  return setup;
}

}  // namespace hiersoc
