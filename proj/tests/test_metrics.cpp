#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "hiersoc/dataset.hpp"
#include "hiersoc/metrics.hpp"
#include "test_util.hpp"

using namespace hiersoc;

namespace {

// Loop-based re-implementations, kept deliberately independent of the library
// code paths (no Eigen reductions, explicit index arithmetic).
double oracle_mpjpe(const MultiPersonClip& a, const MultiPersonClip& b, int frame) {
  double total = 0.0;
  int n = 0;
  for (int p = 0; p < a.persons(); ++p) {
    for (int j = 0; j < a.joints(); ++j) {
      double sq = 0.0;
      for (int c = 0; c < 3; ++c) {
        const double d = a.at(p, frame, j, c) - b.at(p, frame, j, c);
        sq += d * d;
      }
      total += std::sqrt(sq);
      ++n;
    }
  }
  return total / n;
}

double oracle_local(const MultiPersonClip& a, const MultiPersonClip& b, int frame) {
  const int ra = a.skeleton().root_index, rb = b.skeleton().root_index;
  double total = 0.0;
  int n = 0;
  for (int p = 0; p < a.persons(); ++p) {
    for (int j = 0; j < a.joints(); ++j) {
      double sq = 0.0;
      for (int c = 0; c < 3; ++c) {
        const double da = a.at(p, frame, j, c) - a.at(p, frame, ra, c);
        const double db = b.at(p, frame, j, c) - b.at(p, frame, rb, c);
        sq += (da - db) * (da - db);
      }
      total += std::sqrt(sq);
      ++n;
    }
  }
  return total / n;
}

double oracle_root(const MultiPersonClip& a, const MultiPersonClip& b, int frame) {
  const int ra = a.skeleton().root_index, rb = b.skeleton().root_index;
  double total = 0.0;
  for (int p = 0; p < a.persons(); ++p) {
    double sq = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double d = a.at(p, frame, ra, c) - b.at(p, frame, rb, c);
      sq += d * d;
    }
    total += std::sqrt(sq);
  }
  return total / a.persons();
}

}  // namespace

TEST_CASE("mpjpe basics") {
  std::mt19937_64 rng(1);
  MultiPersonClip a = test::random_clip(rng, 2, 3, 4);
  CHECK(mpjpe(a, a, 1) == 0.0);

  // Uniform (3,4,0) offset: every joint distance is the 3-4-5 hypotenuse.
  std::vector<double> data = a.data();
  for (std::size_t i = 0; i < data.size(); i += 3) {
    data[i] += 3.0;
    data[i + 1] += 4.0;
  }
  MultiPersonClip b(a.skeleton(), 2, 3, data);
  CHECK(mpjpe(b, a, 2) == doctest::Approx(5.0).epsilon(1e-12));

  MultiPersonClip c = test::random_clip(rng, 3, 3, 4);
  CHECK_THROWS_AS(mpjpe(a, c, 0), ShapeError);
  CHECK_THROWS_AS(mpjpe(a, a, 99), ShapeError);
}

TEST_CASE("metrics match brute-force oracles on random clips") {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 20; ++rep) {
    MultiPersonClip a = test::random_clip(rng, 3, 4, 5);
    MultiPersonClip b = test::random_clip(rng, 3, 4, 5);
    for (int f = 0; f < 4; ++f) {
      CHECK(mpjpe(a, b, f) == doctest::Approx(oracle_mpjpe(a, b, f)).epsilon(1e-9));
      CHECK(local_error(a, b, f) == doctest::Approx(oracle_local(a, b, f)).epsilon(1e-9));
      CHECK(root_error(a, b, f) == doctest::Approx(oracle_root(a, b, f)).epsilon(1e-9));
    }
  }
}

TEST_CASE("local error ignores per-person rigid translation") {
  std::mt19937_64 rng(3);
  MultiPersonClip a = test::random_clip(rng, 2, 2, 4);
  std::vector<double> data = a.data();
  const int j3 = 4 * 3;
  for (int p = 0; p < 2; ++p)
    for (int t = 0; t < 2; ++t)
      for (int j = 0; j < 4; ++j)
        for (int c = 0; c < 3; ++c)
          data[a.index(p, t, j, c)] += 100.0 * (p + 1) * (c + 1);
  MultiPersonClip shifted(a.skeleton(), 2, 2, data);
  CHECK(local_error(shifted, a, 1) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(root_error(shifted, a, 1) > 0.0);
  (void)j3;
}

TEST_CASE("root error on uniform x offset") {
  std::mt19937_64 rng(4);
  MultiPersonClip a = test::random_clip(rng, 3, 2, 4);
  std::vector<double> data = a.data();
  for (int p = 0; p < 3; ++p)
    for (int t = 0; t < 2; ++t) data[a.index(p, t, 0, 0)] += 10.0;
  MultiPersonClip b(a.skeleton(), 3, 2, data);
  CHECK(root_error(b, a, 0) == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(root_error(a, a, 0) == 0.0);
}

TEST_CASE("translation consistency of the three metrics") {
  std::mt19937_64 rng(5);
  MultiPersonClip a = test::random_clip(rng, 2, 2, 3);
  MultiPersonClip gt = test::random_clip(rng, 2, 2, 3);
  std::vector<double> data = a.data();
  for (std::size_t i = 0; i < data.size(); i += 3) data[i + 2] += 7.0;
  MultiPersonClip moved(a.skeleton(), 2, 2, data);
  // Local error is exactly unchanged; global and root shift per definition.
  CHECK(local_error(moved, gt, 1) == doctest::Approx(local_error(a, gt, 1)).epsilon(1e-12));
  CHECK(root_error(moved, gt, 1) != doctest::Approx(root_error(a, gt, 1)).epsilon(1e-12));
}

TEST_CASE("horizon frame rounding is half-up") {
  CHECK(horizon_frame(400, 25) == 10);
  CHECK(horizon_frame(600, 25) == 15);
  CHECK(horizon_frame(800, 25) == 20);
  CHECK(horizon_frame(1000, 25) == 25);
  CHECK(horizon_frame(400, 10) == 4);
  CHECK(horizon_frame(460, 25) == 12);  // 11.5 rounds up
}

TEST_CASE("evaluate: frozen analytic errors on constant-velocity clips") {
  SynthConfig cfg;
  cfg.behavior = SynthConfig::Behavior::kConstantVelocity;
  cfg.speed_mm_s = 100.0;
  cfg.fps = 25.0;
  cfg.persons = 3;
  cfg.joints = 5;
  cfg.duration_frames = 75;
  cfg.seed = 7;
  std::vector<MultiPersonClip> clips = synth_clips(cfg, 4);
  MdpConfig mdp{25, 25, 5};

  PredictorFn frozen = [&](const MultiPersonClip& h) { return frozen_predict(h, 25); };
  ErrorReport r = evaluate(frozen, clips, mdp, {400, 600, 800, 1000});
  REQUIRE(r.global_mm.size() == 4);
  const double expect[4] = {40.0, 60.0, 80.0, 100.0};
  for (int i = 0; i < 4; ++i) {
    CHECK(std::abs(r.global_mm[i] - expect[i]) / expect[i] < 1e-6);
    CHECK(std::abs(r.root_mm[i] - expect[i]) / expect[i] < 1e-6);
    CHECK(r.local_mm[i] == doctest::Approx(0.0).epsilon(1e-9));
  }

  // Strict growth with horizon for a moving target.
  for (int i = 1; i < 4; ++i) CHECK(r.global_mm[i] > r.global_mm[i - 1]);
}

TEST_CASE("evaluate rejects horizons beyond the prediction range") {
  SynthConfig cfg;
  cfg.behavior = SynthConfig::Behavior::kConstantVelocity;
  cfg.duration_frames = 60;
  std::vector<MultiPersonClip> clips = synth_clips(cfg, 1);
  MdpConfig mdp{25, 25, 5};
  PredictorFn frozen = [&](const MultiPersonClip& h) { return frozen_predict(h, 25); };
  CHECK_THROWS_AS(evaluate(frozen, clips, mdp, {1200}), ConfigError);
}

TEST_CASE("trajectory-only predictor has local errors bit-identical to frozen") {
  SynthConfig cfg;
  cfg.behavior = SynthConfig::Behavior::kPursuitEvade;
  cfg.persons = 3;
  cfg.joints = 5;
  cfg.fps = 25.0;
  cfg.duration_frames = 80;
  cfg.seed = 11;
  cfg.limb_amplitude_mm = 30.0;
  std::vector<MultiPersonClip> clips = synth_clips(cfg, 3);
  MdpConfig mdp{25, 25, 5};

  PredictorFn frozen = [&](const MultiPersonClip& h) { return frozen_predict(h, 25); };
  // Forecasts roots with constant velocity, replicates the last local pose.
  // Computing "aligned pose + root" keeps the alignment arithmetic exact for
  // float32-grid inputs, so local errors match Frozen's bit for bit.
  PredictorFn traj_only = [&](const MultiPersonClip& h) {
    const int J = h.joints(), r = h.skeleton().root_index;
    std::vector<double> data(static_cast<std::size_t>(h.persons()) * 25 * J * 3);
    for (int p = 0; p < h.persons(); ++p) {
      const auto last = h.frame(p, h.frames() - 1);
      const auto prev = h.frame(p, h.frames() - 2);
      Eigen::RowVector3d root = last.row(r);
      Eigen::RowVector3d vel = last.row(r) - prev.row(r);
      Pose aligned = root_align(last, h.skeleton());
      for (int t = 0; t < 25; ++t) {
        Eigen::RowVector3d rt = root + (t + 1) * vel;
        for (int j = 0; j < J; ++j)
          for (int c = 0; c < 3; ++c)
            data[((static_cast<std::size_t>(p) * 25) + t) * (J * 3) + j * 3 + c] =
                aligned(j, c) + rt[c];
      }
    }
    return MultiPersonClip(h.skeleton(), h.persons(), 25, std::move(data));
  };

  ErrorReport rf = evaluate(frozen, clips, mdp, {400, 600, 800, 1000});
  ErrorReport rt = evaluate(traj_only, clips, mdp, {400, 600, 800, 1000});
  for (int i = 0; i < 4; ++i) {
    CHECK(rt.local_mm[i] == rf.local_mm[i]);  // bit-identical
    CHECK(rt.global_mm[i] != rf.global_mm[i]);
  }
}

TEST_CASE("frozen local error is the last-pose persistence error (direct formula)") {
  std::mt19937_64 rng(6);
  MultiPersonClip clip = test::random_clip(rng, 2, 50, 5);
  MdpConfig mdp{25, 25, 5};
  PredictorFn frozen = [&](const MultiPersonClip& h) { return frozen_predict(h, 25); };
  ErrorReport r = evaluate(frozen, {clip}, mdp, {1000});

  // Oracle: align last history pose and the gt pose directly.
  const MultiPersonClip hist = clip.slice_frames(0, 25);
  double acc = 0.0;
  for (int p = 0; p < 2; ++p) {
    Pose a = root_align(hist.frame(p, 24), clip.skeleton());
    Pose b = root_align(clip.frame(p, 49), clip.skeleton());
    for (int j = 0; j < 5; ++j) acc += (a.row(j) - b.row(j)).norm();
  }
  acc /= 10.0;
  CHECK(r.local_mm[0] == doctest::Approx(acc).epsilon(1e-12));
}

TEST_CASE("evaluate is identical with 1 and many worker threads") {
  SynthConfig cfg;
  cfg.behavior = SynthConfig::Behavior::kCircular;
  cfg.persons = 2;
  cfg.joints = 4;
  cfg.duration_frames = 120;
  std::vector<MultiPersonClip> clips = synth_clips(cfg, 2);
  MdpConfig mdp{25, 25, 5};
  PredictorFn frozen = [&](const MultiPersonClip& h) { return frozen_predict(h, 25); };
  ErrorReport one = evaluate(frozen, clips, mdp, {400, 1000}, 0, 1);
  ErrorReport many = evaluate(frozen, clips, mdp, {400, 1000}, 0, 4);
  for (int i = 0; i < 2; ++i) {
    CHECK(one.global_mm[i] == many.global_mm[i]);
    CHECK(one.local_mm[i] == many.local_mm[i]);
    CHECK(one.root_mm[i] == many.root_mm[i]);
  }
}
