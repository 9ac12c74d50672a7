#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hiersoc/motion.hpp"

namespace hiersoc {

struct DiversityConfig {
  double threshold_mm = 50.0;  // poses are compared root-aligned

  void validate() const {
    if (!(threshold_mm > 0.0)) throw ConfigError("diversity: threshold must be positive");
  }
};

// Greedy unique-pose ratio: a pose is retained iff its mean per-joint distance
// to every previously retained pose (both root-aligned) exceeds the threshold.
double pose_diversity(const std::vector<Pose>& poses, double threshold_mm, int root_index);

// All poses of a clip in (person, frame) order.
std::vector<Pose> collect_poses(const MultiPersonClip& clip);

struct MotionIntensity {
  Eigen::VectorXd per_joint_mm_s;
  double overall_mm_s = 0.0;
};

// Per joint: mean over persons and consecutive frame pairs of |x_{t+1}-x_t| * fps.
MotionIntensity motion_intensity(const MultiPersonClip& clip);

struct SynthConfig {
  enum class Behavior { kConstantVelocity, kCircular, kPursuitEvade };

  std::uint64_t seed = 0;
  int persons = 5;
  int joints = 15;
  double fps = 25.0;
  int duration_frames = 100;
  Behavior behavior = Behavior::kPursuitEvade;
  double noise_mm = 0.0;
  double speed_mm_s = 100.0;       // const-velocity speed / pursuit cruising speed
  double limb_amplitude_mm = 20.0;
  std::vector<int> pinned_agents;  // agents held static (sensitivity probes)

  void validate() const;
  static Behavior behavior_from_string(const std::string& s);
  static std::string behavior_to_string(Behavior b);
};

// Deterministic per (seed, clip index). Positions are quantized to the float32
// grid so MPC1 round trips are bit-lossless and the MDP transition round trip
// is exact in float64.
std::vector<MultiPersonClip> synth_clips(const SynthConfig& config, int count);

// MPC1 container: one JSON header line, then P*T*J*3 little-endian float32
// values in (person, frame, joint, xyz) order, millimeters.
void save_clip(const MultiPersonClip& clip, const std::string& path);
MultiPersonClip load_clip(const std::string& path);

// Loads every *.mpc file in a directory (sorted by name), or the single file.
std::vector<MultiPersonClip> load_clips(const std::string& path);

}  // namespace hiersoc
