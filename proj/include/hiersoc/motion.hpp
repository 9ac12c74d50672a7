#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "hiersoc/errors.hpp"

namespace hiersoc {

using Mat = Eigen::MatrixXd;

// One 3D pose: J rows of (x, y, z) in millimeters.
using Pose = Eigen::Matrix<double, Eigen::Dynamic, 3>;

// Frames are stored row-major per pose so a (person, frame) block is contiguous.
using PoseMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>>;

struct Skeleton {
  int joint_count = 0;
  int root_index = 0;
  std::vector<std::string> joint_names;
  double fps = 25.0;

  void validate() const;

  // 15-joint schema used by the bundled data.
  static Skeleton named_default(double fps = 25.0);
  // joint_0..joint_{n-1}, root at 0.
  static Skeleton generic(int joints, double fps, int root_index = 0);
};

// Raw multi-person motion record: positions[p][t][j][coord] in mm, flat row-major.
class MultiPersonClip {
 public:
  MultiPersonClip(Skeleton skeleton, int persons, int frames, std::vector<double> positions);

  const Skeleton& skeleton() const { return skeleton_; }
  int persons() const { return persons_; }
  int frames() const { return frames_; }
  int joints() const { return skeleton_.joint_count; }

  double at(int person, int frame, int joint, int coord) const {
    return positions_[index(person, frame, joint, coord)];
  }

  PoseMap frame(int person, int frame) const {
    return PoseMap(&positions_[index(person, frame, 0, 0)], skeleton_.joint_count, 3);
  }

  // Flattened pose of (person, frame) as a row vector [x0 y0 z0 x1 ...] of length 3J.
  Eigen::Map<const Eigen::RowVectorXd> flat_frame(int person, int frame) const {
    return Eigen::Map<const Eigen::RowVectorXd>(&positions_[index(person, frame, 0, 0)],
                                                3 * skeleton_.joint_count);
  }

  const std::vector<double>& data() const { return positions_; }

  MultiPersonClip slice_frames(int start, int count) const;
  // New clip with `extra` frames appended per person (values supplied per person as
  // extra x 3J matrices).
  MultiPersonClip with_appended_frames(const std::vector<Mat>& frames_per_person) const;

  std::size_t index(int person, int frame, int joint, int coord) const {
    return ((static_cast<std::size_t>(person) * frames_ + frame) * skeleton_.joint_count + joint) * 3 +
           coord;
  }

 private:
  Skeleton skeleton_;
  int persons_ = 0;
  int frames_ = 0;
  std::vector<double> positions_;
};

// MDP step layout: T history frames, T' future frames predicted in L steps of m frames.
struct MdpConfig {
  int history_frames = 25;
  int future_frames = 25;
  int steps = 5;

  int step_len() const { return future_frames / steps; }
  void validate() const;
};

// Aggregated motion history of all agents up to step i (frames 0 .. T+(i-1)m - 1).
struct MdpState {
  MultiPersonClip clip_prefix;
  int step_index = 1;
};

MdpState make_state(const MultiPersonClip& prefix, int step_index, const MdpConfig& config);

// Velocity sequence for one agent: m rows x 3J, mm per frame.
struct AgentAction {
  Mat velocities;

  int frames() const { return static_cast<int>(velocities.rows()); }
};

struct JointAction {
  std::vector<AgentAction> agents;

  int person_count() const { return static_cast<int>(agents.size()); }
};

// velocities[t] = segment[t+1] - segment[t]; segment is (m+1) x 3J.
AgentAction velocities_from_positions(const Eigen::Ref<const Mat>& segment);

// Convenience: expert action for (person, step) sliced out of a clip.
AgentAction expert_action(const MultiPersonClip& clip, int person, int last_history_frame, int step_len);

// Deterministic transition: appends m frames per agent as cumulative sums of the
// velocities starting from each agent's last frame. Never touches existing frames.
MdpState apply_action(const MdpState& state, const JointAction& joint_action, const MdpConfig& config);

// pose - pose[root], broadcast over joints.
Pose root_align(const Eigen::Ref<const Pose>& pose, const Skeleton& skeleton);

// Naive baseline: replicates the last history frame for `future_frames` frames.
MultiPersonClip frozen_predict(const MultiPersonClip& history, int future_frames);

}  // namespace hiersoc
