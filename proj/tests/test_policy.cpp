#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "hiersoc/policy.hpp"
#include "test_util.hpp"

using namespace hiersoc;

namespace {

StateFeatures random_features(std::mt19937_64& rng, int persons, int dim) {
  std::normal_distribution<double> d(0.0, 1.0);
  StateFeatures f;
  f.local = Mat(persons, dim);
  f.global = Eigen::RowVectorXd(dim);
  for (int p = 0; p < persons; ++p)
    for (int c = 0; c < dim; ++c) f.local(p, c) = d(rng);
  for (int c = 0; c < dim; ++c) f.global[c] = d(rng);
  return f;
}

nn::ParamSet stack_params(const PolicyStackConfig& cfg, int joints, int m,
                          std::uint64_t seed = 3) {
  nn::ParamSet ps;
  add_policy_stack_params(ps, cfg, joints, m);
  ps.init_truncated_normal(seed);
  return ps;
}

void zero_head(nn::ParamSet& ps, const PolicyStackConfig& cfg) {
  for (int k = 0; k <= cfg.levels; ++k) {
    const std::string p = cfg.level_prefix(k);
    if (!ps.contains(p + ".head.w")) continue;
    ps.at(p + ".head.w").value.setZero();
    ps.at(p + ".head.b").value.setZero();
  }
}

}  // namespace

TEST_CASE("act_level0 shape contract and input dependence") {
  std::mt19937_64 rng(1);
  PolicyStackConfig cfg = test::tiny_stack(3);
  const int m = 5, J = 15, P = 3;
  nn::ParamSet ps = stack_params(cfg, J, m);
  StateFeatures f = random_features(rng, P, cfg.model_dim);

  JointAction a = act_level0(f, cfg, ps);
  CHECK(a.person_count() == P);
  for (const AgentAction& ag : a.agents) {
    CHECK(ag.frames() == m);
    CHECK(ag.velocities.cols() == 3 * J);
    CHECK(ag.velocities.allFinite());
  }

  // Two agents with identical local features (shared s_g) act identically.
  StateFeatures same = f;
  same.local.row(1) = same.local.row(0);
  JointAction b = act_level0(same, cfg, ps);
  CHECK((b.agents[0].velocities - b.agents[1].velocities).norm() == 0.0);
}

TEST_CASE("act_level0 permutation equivariance") {
  std::mt19937_64 rng(2);
  PolicyStackConfig cfg = test::tiny_stack(1);
  const int m = 2, J = 4, P = 4;
  nn::ParamSet ps = stack_params(cfg, J, m);
  StateFeatures f = random_features(rng, P, cfg.model_dim);

  std::vector<int> perm = {2, 0, 3, 1};
  StateFeatures g = f;
  for (int p = 0; p < P; ++p) g.local.row(p) = f.local.row(perm[p]);

  JointAction a = act_level0(f, cfg, ps);
  JointAction b = act_level0(g, cfg, ps);
  for (int p = 0; p < P; ++p)
    CHECK((b.agents[p].velocities - a.agents[perm[p]].velocities).norm() == 0.0);
}

TEST_CASE("act_levelk: weight sharing makes k=1 and k=2 identical maps") {
  std::mt19937_64 rng(3);
  PolicyStackConfig cfg = test::tiny_stack(3);
  const int m = 3, J = 5, P = 2;
  nn::ParamSet ps = stack_params(cfg, J, m);
  StateFeatures f = random_features(rng, P, cfg.model_dim);
  JointAction prev = act_level0(f, cfg, ps);

  JointAction k1 = act_levelk(f, prev, 1, cfg, ps);
  JointAction k2 = act_levelk(f, prev, 2, cfg, ps);
  for (int p = 0; p < P; ++p)
    CHECK((k1.agents[p].velocities - k2.agents[p].velocities).norm() == 0.0);

  CHECK_THROWS_AS(act_levelk(f, prev, 0, cfg, ps), ConfigError);
  CHECK_THROWS_AS(act_levelk(f, prev, 4, cfg, ps), ConfigError);
}

TEST_CASE("act_levelk: cross-agent conditioning is live") {
  std::mt19937_64 rng(4);
  PolicyStackConfig cfg = test::tiny_stack(1);
  const int m = 3, J = 5, P = 3;
  nn::ParamSet ps = stack_params(cfg, J, m);
  StateFeatures f = random_features(rng, P, cfg.model_dim);
  JointAction prev = act_level0(f, cfg, ps);

  JointAction out_before = act_levelk(f, prev, 1, cfg, ps);
  JointAction zeroed = prev;
  zeroed.agents[2].velocities.setZero();
  JointAction out_after = act_levelk(f, zeroed, 1, cfg, ps);
  // Agent 0's action changes when agent 2's previous action changes.
  CHECK((out_before.agents[0].velocities - out_after.agents[0].velocities).norm() > 1e-9);
}

TEST_CASE("hierarchy_actions recursion depth and distinctness") {
  std::mt19937_64 rng(5);
  const int m = 2, J = 4, P = 2;

  SUBCASE("K=0 yields exactly one level") {
    PolicyStackConfig cfg = test::tiny_stack(0);
    nn::ParamSet ps = stack_params(cfg, J, m);
    StateFeatures f = random_features(rng, P, cfg.model_dim);
    LevelActions la = hierarchy_actions(f, cfg, ps);
    CHECK(la.per_level.size() == 1);
  }

  SUBCASE("K=3 yields four levels, final action is level 3") {
    PolicyStackConfig cfg = test::tiny_stack(3);
    nn::ParamSet ps = stack_params(cfg, J, m);
    StateFeatures f = random_features(rng, P, cfg.model_dim);
    LevelActions la = hierarchy_actions(f, cfg, ps);
    CHECK(la.per_level.size() == 4);
    CHECK(&la.final_action() == &la.per_level[3]);

    // Untrained random params: consecutive levels differ somewhere.
    double diff = 0.0;
    for (int p = 0; p < P; ++p)
      diff = std::max(diff, (la.per_level[1].agents[p].velocities -
                             la.per_level[2].agents[p].velocities)
                                .lpNorm<Eigen::Infinity>());
    CHECK(diff > 1e-9);
  }
}

TEST_CASE("shared levels keep the parameter count independent of K") {
  const int m = 2, J = 4;
  PolicyStackConfig k1 = test::tiny_stack(1);
  PolicyStackConfig k4 = test::tiny_stack(4);
  nn::ParamSet ps1, ps4;
  add_policy_stack_params(ps1, k1, J, m);
  add_policy_stack_params(ps4, k4, J, m);
  CHECK(ps1.total_count() == ps4.total_count());

  PolicyStackConfig k4_unshared = k4;
  k4_unshared.share_levels = false;
  nn::ParamSet ps4u;
  add_policy_stack_params(ps4u, k4_unshared, J, m);
  CHECK(ps4u.total_count() > ps4.total_count());
}

TEST_CASE("rollout reductions") {
  std::mt19937_64 rng(6);
  MdpConfig mdp{6, 6, 3};  // m = 2
  EncoderConfig enc = test::tiny_encoder();
  PolicyStackConfig stack = test::tiny_stack(2);
  const int J = 4;
  MultiPersonClip history = test::random_clip(rng, 2, 6, J);

  nn::ParamSet ps;
  add_encoder_stack_params(ps, enc, J);
  add_policy_stack_params(ps, stack, J, mdp.step_len());
  ps.init_truncated_normal(21);

  SUBCASE("zero-velocity policy reproduces the frozen baseline") {
    zero_head(ps, stack);
    MultiPersonClip pred = rollout(history, mdp, enc, stack, ps);
    MultiPersonClip frozen = frozen_predict(history, mdp.future_frames);
    REQUIRE(pred.frames() == mdp.future_frames);
    for (int p = 0; p < 2; ++p)
      for (int t = 0; t < mdp.future_frames; ++t)
        for (int j = 0; j < J; ++j)
          for (int c = 0; c < 3; ++c) CHECK(pred.at(p, t, j, c) == frozen.at(p, t, j, c));
  }

  SUBCASE("L=1 equals one apply_action of the final hierarchy action") {
    MdpConfig one_step{6, 2, 1};
    EncoderConfig enc1 = enc;
    enc1.window_frames = 6;
    nn::ParamSet ps1;
    add_encoder_stack_params(ps1, enc1, J);
    add_policy_stack_params(ps1, stack, J, one_step.step_len());
    ps1.init_truncated_normal(22);

    MultiPersonClip pred = rollout(history, one_step, enc1, stack, ps1);

    MdpState s0 = make_state(history, 1, one_step);
    StateFeatures f = encode_state(s0, enc1, ps1);
    LevelActions la = hierarchy_actions(f, stack, ps1);
    MdpState s1 = apply_action(s0, la.final_action(), one_step);
    MultiPersonClip expect = s1.clip_prefix.slice_frames(6, 2);
    for (int p = 0; p < 2; ++p)
      for (int t = 0; t < 2; ++t)
        for (int j = 0; j < J; ++j)
          for (int c = 0; c < 3; ++c) CHECK(pred.at(p, t, j, c) == expect.at(p, t, j, c));
  }

  SUBCASE("deterministic reruns, output exactly T' frames") {
    MultiPersonClip pred = rollout(history, mdp, enc, stack, ps);
    CHECK(pred.frames() == mdp.future_frames);
    MultiPersonClip again = rollout(history, mdp, enc, stack, ps);
    for (int p = 0; p < 2; ++p)
      for (int t = 0; t < mdp.future_frames; ++t)
        for (int j = 0; j < J; ++j)
          for (int c = 0; c < 3; ++c) CHECK(pred.at(p, t, j, c) == again.at(p, t, j, c));
  }

  SUBCASE("histories shorter than T are rejected") {
    MultiPersonClip shorty = history.slice_frames(0, 3);
    CHECK_THROWS_AS(rollout(shorty, mdp, enc, stack, ps), ShapeError);
  }
}

TEST_CASE("forced constant-velocity head extrapolates linearly") {
  std::mt19937_64 rng(7);
  MdpConfig mdp{4, 4, 2};
  EncoderConfig enc = test::tiny_encoder();
  PolicyStackConfig stack = test::tiny_stack(1);
  const int J = 2;
  nn::ParamSet ps;
  add_encoder_stack_params(ps, enc, J);
  add_policy_stack_params(ps, stack, J, mdp.step_len());
  ps.init_truncated_normal(23);
  zero_head(ps, stack);
  // Bias of the executed level's head: one unit on x per joint pre-scaling, so
  // the emitted velocity is velocity_scale_mm per frame on x.
  nn::Parameter& bias = ps.at(stack.level_prefix(1) + ".head.b");
  for (int j = 0; j < J; ++j) bias.value(0, 3 * j) = 1.0;

  MultiPersonClip history = test::random_clip(rng, 1, 4, J);
  MultiPersonClip pred = rollout(history, mdp, enc, stack, ps);
  const double v = stack.velocity_scale_mm;
  for (int t = 0; t < 4; ++t)
    for (int j = 0; j < J; ++j) {
      CHECK(pred.at(0, t, j, 0) == doctest::Approx(history.at(0, 3, j, 0) + v * (t + 1)));
      CHECK(pred.at(0, t, j, 1) == doctest::Approx(history.at(0, 3, j, 1)));
    }
}

TEST_CASE("full-stack rollout commutes with agent permutation") {
  std::mt19937_64 rng(8);
  MdpConfig mdp{4, 4, 2};
  EncoderConfig enc = test::tiny_encoder();
  PolicyStackConfig stack = test::tiny_stack(2);
  const int J = 3, P = 3;
  nn::ParamSet ps;
  add_encoder_stack_params(ps, enc, J);
  add_policy_stack_params(ps, stack, J, mdp.step_len());
  ps.init_truncated_normal(29);

  for (int rep = 0; rep < 3; ++rep) {
    MultiPersonClip clip = test::random_clip(rng, P, 4, J);
    std::vector<int> perm = {1, 2, 0};
    std::vector<double> data(clip.data().size());
    const int j3 = J * 3;
    for (int p = 0; p < P; ++p)
      for (int t = 0; t < 4; ++t) {
        const auto src = clip.flat_frame(perm[p], t);
        for (int c = 0; c < j3; ++c)
          data[((static_cast<std::size_t>(p) * 4) + t) * j3 + c] = src[c];
      }
    MultiPersonClip permuted(clip.skeleton(), P, 4, std::move(data));

    MultiPersonClip out = rollout(clip, mdp, enc, stack, ps);
    MultiPersonClip out_perm = rollout(permuted, mdp, enc, stack, ps);
    for (int p = 0; p < P; ++p)
      for (int t = 0; t < 4; ++t)
        for (int j = 0; j < J; ++j)
          for (int c = 0; c < 3; ++c)
            CHECK(out_perm.at(p, t, j, c) ==
                  doctest::Approx(out.at(perm[p], t, j, c)).epsilon(1e-10));
  }
}

TEST_CASE("every stack parameter gets a finite gradient through the level chain") {
  std::mt19937_64 rng(9);
  MdpConfig mdp{3, 2, 1};
  EncoderConfig enc = test::tiny_encoder(8, 1, 2);
  PolicyStackConfig stack = test::tiny_stack(2, 8, 1, 2);
  const int J = 2, P = 2;
  nn::ParamSet ps;
  add_encoder_stack_params(ps, enc, J);
  add_policy_stack_params(ps, stack, J, mdp.step_len());
  ps.init_truncated_normal(31);

  MultiPersonClip clip = test::random_clip(rng, P, 3, J);
  MdpState st = make_state(clip, 1, mdp);

  ad::Tape tape;
  nn::Ctx ctx{tape, &ps, /*track=*/true};
  std::vector<const MdpState*> states{&st};
  ad::Var raw = tape.constant(assemble_raw_tokens(states, 3));
  EncodedBatchVars encv = encode_batch_vars(ctx, raw, TokenLayout{1, P, 3, J}, enc, 0);
  std::vector<ad::Var> levels = hierarchy_actions_vars(ctx, encv, P, stack, mdp.step_len(), J);
  // Loss touches only the top level; gradient must reach level-0 and encoders.
  ad::Var loss = ad::mean_all(ad::cmul(levels.back(), levels.back()));
  ps.zero_grad();
  tape.backward(loss);
  for (const nn::Parameter* p : ps.all()) {
    INFO(p->name);
    CHECK(p->grad.allFinite());
    CHECK(p->grad.lpNorm<Eigen::Infinity>() > 0.0);
  }
}

TEST_CASE("policy level gradients match finite differences") {
  std::mt19937_64 rng(10);
  PolicyStackConfig stack = test::tiny_stack(1, 8, 1, 2);
  const int m = 2, J = 2, P = 2;
  nn::ParamSet ps = stack_params(stack, J, m, 33);
  REQUIRE(ps.total_count() < 10000);
  StateFeatures f = random_features(rng, P, stack.model_dim);
  Mat prev0 = Mat::Random(P * m, 3 * J);
  Mat probe = Mat::Random(P * m, 3 * J);

  SUBCASE("level 0") {
    auto loss = [&](bool track) {
      ad::Tape tape;
      nn::Ctx ctx{tape, &ps, track};
      ad::Var local = tape.constant(f.local);
      ad::Var global = tape.constant(Mat(f.global));
      ad::Var out = act_level0_vars(ctx, local, global, P, stack, m, J);
      ad::Var w = ad::cmul(out, tape.constant(probe));
      ad::Var l = ad::mean_all(ad::cmul(w, w));
      if (track) tape.backward(l);
      return l.scalar();
    };
    test::GradCheckResult res = test::finite_difference_check(ps, loss, 1e-5, 4);
    CHECK(res.max_rel_err < 1e-4);
  }

  SUBCASE("level k") {
    auto loss = [&](bool track) {
      ad::Tape tape;
      nn::Ctx ctx{tape, &ps, track};
      ad::Var local = tape.constant(f.local);
      ad::Var prev = tape.constant(prev0);
      ad::Var out = act_levelk_vars(ctx, local, prev, 1, P, stack, m, J);
      ad::Var w = ad::cmul(out, tape.constant(probe));
      ad::Var l = ad::mean_all(ad::cmul(w, w));
      if (track) tape.backward(l);
      return l.scalar();
    };
    test::GradCheckResult res = test::finite_difference_check(ps, loss, 1e-5, 4);
    CHECK(res.max_rel_err < 1e-4);
  }
}
