#include "hiersoc/motion.hpp"

#include <cmath>
#include <set>
#include <sstream>

namespace hiersoc {

void Skeleton::validate() const {
  if (joint_count <= 0) throw ConfigError("skeleton: joint_count must be positive");
  if (root_index < 0 || root_index >= joint_count)
    throw ConfigError("skeleton: root_index out of range");
  if (static_cast<int>(joint_names.size()) != joint_count)
    throw ConfigError("skeleton: joint_names size must equal joint_count");
  std::set<std::string> uniq(joint_names.begin(), joint_names.end());
  if (static_cast<int>(uniq.size()) != joint_count)
    throw ConfigError("skeleton: joint_names must be distinct");
  if (!(fps > 0.0)) throw ConfigError("skeleton: fps must be positive");
}

Skeleton Skeleton::named_default(double fps) {
  Skeleton s;
  s.joint_count = 15;
  s.root_index = 0;
  s.joint_names = {"pelvis",     "neck",       "head",    "l_shoulder", "l_elbow",
                   "l_wrist",    "r_shoulder", "r_elbow", "r_wrist",    "l_hip",
                   "l_knee",     "l_ankle",    "r_hip",   "r_knee",     "r_ankle"};
  s.fps = fps;
  s.validate();
  return s;
}

Skeleton Skeleton::generic(int joints, double fps, int root_index) {
  Skeleton s;
  s.joint_count = joints;
  s.root_index = root_index;
  s.joint_names.reserve(joints);
  for (int j = 0; j < joints; ++j) s.joint_names.push_back("joint_" + std::to_string(j));
  s.fps = fps;
  s.validate();
  return s;
}

MultiPersonClip::MultiPersonClip(Skeleton skeleton, int persons, int frames,
                                 std::vector<double> positions)
    : skeleton_(std::move(skeleton)), persons_(persons), frames_(frames),
      positions_(std::move(positions)) {
  skeleton_.validate();
  if (persons_ <= 0) throw ShapeError("clip: person_count must be positive");
  if (frames_ <= 0) throw ShapeError("clip: frame_count must be positive");
  const std::size_t expected =
      static_cast<std::size_t>(persons_) * frames_ * skeleton_.joint_count * 3;
  if (positions_.size() != expected) {
    std::ostringstream os;
    os << "clip: positions size " << positions_.size() << " does not match P*T*J*3 = " << expected;
    throw ShapeError(os.str());
  }
  for (double v : positions_) {
    if (!std::isfinite(v)) throw ShapeError("clip: positions contain non-finite values");
  }
}

MultiPersonClip MultiPersonClip::slice_frames(int start, int count) const {
  if (start < 0 || count <= 0 || start + count > frames_)
    throw ShapeError("slice_frames: range out of bounds");
  const int j3 = skeleton_.joint_count * 3;
  std::vector<double> out(static_cast<std::size_t>(persons_) * count * j3);
  for (int p = 0; p < persons_; ++p) {
    const double* src = &positions_[index(p, start, 0, 0)];
    std::copy(src, src + static_cast<std::size_t>(count) * j3,
              out.begin() + static_cast<std::size_t>(p) * count * j3);
  }
  return MultiPersonClip(skeleton_, persons_, count, std::move(out));
}

MultiPersonClip MultiPersonClip::with_appended_frames(const std::vector<Mat>& frames_per_person) const {
  if (static_cast<int>(frames_per_person.size()) != persons_)
    throw ShapeError("with_appended_frames: person count mismatch");
  const int j3 = skeleton_.joint_count * 3;
  const int extra = static_cast<int>(frames_per_person.front().rows());
  for (const Mat& f : frames_per_person) {
    if (f.rows() != extra || f.cols() != j3)
      throw ShapeError("with_appended_frames: frame block shape mismatch");
  }
  const int new_frames = frames_ + extra;
  std::vector<double> out(static_cast<std::size_t>(persons_) * new_frames * j3);
  for (int p = 0; p < persons_; ++p) {
    const double* src = &positions_[index(p, 0, 0, 0)];
    double* dst = &out[static_cast<std::size_t>(p) * new_frames * j3];
    std::copy(src, src + static_cast<std::size_t>(frames_) * j3, dst);
    const Mat& blk = frames_per_person[p];
    for (int t = 0; t < extra; ++t)
      for (int c = 0; c < j3; ++c) dst[static_cast<std::size_t>(frames_ + t) * j3 + c] = blk(t, c);
  }
  return MultiPersonClip(skeleton_, persons_, new_frames, std::move(out));
}

void MdpConfig::validate() const {
  if (history_frames < 2) throw ConfigError("mdp: history_frames must be >= 2");
  if (future_frames <= 0) throw ConfigError("mdp: future_frames must be positive");
  if (steps <= 0) throw ConfigError("mdp: steps must be positive");
  if (future_frames % steps != 0)
    throw ConfigError("mdp: steps must divide future_frames evenly");
}

MdpState make_state(const MultiPersonClip& prefix, int step_index, const MdpConfig& config) {
  config.validate();
  if (step_index < 1) throw ShapeError("mdp state: step_index must be >= 1");
  const int expected = config.history_frames + (step_index - 1) * config.step_len();
  if (prefix.frames() != expected)
    throw ShapeError("mdp state: clip_prefix frame count does not match T + (i-1)*m");
  return MdpState{prefix, step_index};
}

AgentAction velocities_from_positions(const Eigen::Ref<const Mat>& segment) {
  if (segment.rows() < 2) throw ShapeError("velocities_from_positions: need at least 2 frames");
  if (segment.cols() % 3 != 0)
    throw ShapeError("velocities_from_positions: columns must be a multiple of 3");
  if (!segment.allFinite())
    throw ShapeError("velocities_from_positions: non-finite positions");
  const int m = static_cast<int>(segment.rows()) - 1;
  AgentAction action;
  action.velocities = segment.bottomRows(m) - segment.topRows(m);
  return action;
}

AgentAction expert_action(const MultiPersonClip& clip, int person, int last_history_frame,
                          int step_len) {
  if (person < 0 || person >= clip.persons()) throw ShapeError("expert_action: person out of range");
  if (last_history_frame < 0 || last_history_frame + step_len >= clip.frames())
    throw ShapeError("expert_action: segment out of range");
  const int j3 = clip.joints() * 3;
  Mat segment(step_len + 1, j3);
  for (int t = 0; t <= step_len; ++t)
    segment.row(t) = clip.flat_frame(person, last_history_frame + t);
  return velocities_from_positions(segment);
}

MdpState apply_action(const MdpState& state, const JointAction& joint_action,
                      const MdpConfig& config) {
  config.validate();
  const MultiPersonClip& clip = state.clip_prefix;
  const int m = config.step_len();
  if (joint_action.person_count() != clip.persons())
    throw ShapeError("apply_action: joint action person count mismatch");
  const int j3 = clip.joints() * 3;
  for (const AgentAction& a : joint_action.agents) {
    if (a.velocities.rows() != m || a.velocities.cols() != j3)
      throw ShapeError("apply_action: agent action must be m x 3J");
  }
  const int expected = config.history_frames + (state.step_index - 1) * m;
  if (clip.frames() != expected)
    throw ShapeError("apply_action: state frame count does not match step index");

  std::vector<Mat> appended(clip.persons());
  for (int p = 0; p < clip.persons(); ++p) {
    Mat block(m, j3);
    // Sequential cumulative sum so expert velocities rebuild the source frames exactly.
    Eigen::RowVectorXd cur = clip.flat_frame(p, clip.frames() - 1);
    for (int t = 0; t < m; ++t) {
      cur += joint_action.agents[p].velocities.row(t);
      block.row(t) = cur;
    }
    appended[p] = std::move(block);
  }
  return MdpState{clip.with_appended_frames(appended), state.step_index + 1};
}

Pose root_align(const Eigen::Ref<const Pose>& pose, const Skeleton& skeleton) {
  if (pose.rows() != skeleton.joint_count) throw ShapeError("root_align: joint count mismatch");
  Pose out = pose;
  out.rowwise() -= pose.row(skeleton.root_index);
  return out;
}

MultiPersonClip frozen_predict(const MultiPersonClip& history, int future_frames) {
  if (future_frames <= 0) throw ConfigError("frozen_predict: future_frames must be positive");
  const int j3 = history.joints() * 3;
  std::vector<double> out(static_cast<std::size_t>(history.persons()) * future_frames * j3);
  for (int p = 0; p < history.persons(); ++p) {
    const auto last = history.flat_frame(p, history.frames() - 1);
    for (int t = 0; t < future_frames; ++t)
      for (int c = 0; c < j3; ++c)
        out[(static_cast<std::size_t>(p) * future_frames + t) * j3 + c] = last[c];
  }
  return MultiPersonClip(history.skeleton(), history.persons(), future_frames, std::move(out));
}

}  // namespace hiersoc
