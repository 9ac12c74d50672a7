#include "hiersoc/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "json.hpp"

namespace hiersoc {

namespace fs = std::filesystem;
using nlohmann::json;

double pose_diversity(const std::vector<Pose>& poses, double threshold_mm, int root_index) {
  if (poses.empty()) throw DataError("pose_diversity: no poses");
  if (!(threshold_mm > 0.0)) throw ConfigError("pose_diversity: threshold must be positive");
  const int J = static_cast<int>(poses.front().rows());
  Skeleton sk = Skeleton::generic(J, 25.0, root_index);

  std::vector<Pose> retained;
  for (const Pose& raw : poses) {
    if (raw.rows() != J) throw ShapeError("pose_diversity: inconsistent joint counts");
    Pose aligned = root_align(raw, sk);
    bool unique = true;
    for (const Pose& kept : retained) {
      double mean_dist = 0.0;
      for (int j = 0; j < J; ++j) mean_dist += (aligned.row(j) - kept.row(j)).norm();
      mean_dist /= J;
      if (!(mean_dist > threshold_mm)) {
        unique = false;
        break;
      }
    }
    if (unique) retained.push_back(std::move(aligned));
  }
  return static_cast<double>(retained.size()) / static_cast<double>(poses.size());
}

std::vector<Pose> collect_poses(const MultiPersonClip& clip) {
  std::vector<Pose> out;
  out.reserve(static_cast<std::size_t>(clip.persons()) * clip.frames());
  for (int p = 0; p < clip.persons(); ++p)
    for (int t = 0; t < clip.frames(); ++t) out.push_back(clip.frame(p, t));
  return out;
}

MotionIntensity motion_intensity(const MultiPersonClip& clip) {
  if (clip.frames() < 2) throw ShapeError("motion_intensity: need at least 2 frames");
  const int J = clip.joints();
  MotionIntensity mi;
  mi.per_joint_mm_s = Eigen::VectorXd::Zero(J);
  const double fps = clip.skeleton().fps;
  const std::size_t pairs = static_cast<std::size_t>(clip.persons()) * (clip.frames() - 1);
  for (int p = 0; p < clip.persons(); ++p) {
    for (int t = 0; t + 1 < clip.frames(); ++t) {
      const auto a = clip.frame(p, t);
      const auto b = clip.frame(p, t + 1);
      for (int j = 0; j < J; ++j) mi.per_joint_mm_s[j] += (b.row(j) - a.row(j)).norm();
    }
  }
  mi.per_joint_mm_s *= fps / static_cast<double>(pairs);
  mi.overall_mm_s = mi.per_joint_mm_s.mean();
  return mi;
}

void SynthConfig::validate() const {
  if (persons < 1) throw ConfigError("synth: persons must be >= 1");
  if (joints < 1) throw ConfigError("synth: joints must be >= 1");
  if (!(fps > 0.0)) throw ConfigError("synth: fps must be positive");
  if (duration_frames < 2) throw ConfigError("synth: duration_frames must be >= 2");
  if (noise_mm < 0.0) throw ConfigError("synth: noise_mm must be >= 0");
  if (!(speed_mm_s >= 0.0)) throw ConfigError("synth: speed must be >= 0");
  if (limb_amplitude_mm < 0.0) throw ConfigError("synth: limb_amplitude_mm must be >= 0");
  for (int a : pinned_agents)
    if (a < 0 || a >= persons) throw ConfigError("synth: pinned agent out of range");
}

SynthConfig::Behavior SynthConfig::behavior_from_string(const std::string& s) {
  if (s == "constant-velocity" || s == "constvel") return Behavior::kConstantVelocity;
  if (s == "circular") return Behavior::kCircular;
  if (s == "pursuit-evade" || s == "pursuit") return Behavior::kPursuitEvade;
  throw ConfigError("synth: unknown behavior '" + s + "'");
}

std::string SynthConfig::behavior_to_string(Behavior b) {
  switch (b) {
    case Behavior::kConstantVelocity: return "constant-velocity";
    case Behavior::kCircular: return "circular";
    case Behavior::kPursuitEvade: return "pursuit-evade";
  }
  return "unknown";
}

namespace {

double snap64(double v) { return std::round(v * 64.0) / 64.0; }
double snap_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

// Joint offsets relative to the root, mm. Row = joint.
Mat base_offsets(const Skeleton& sk) {
  const int J = sk.joint_count;
  Mat off = Mat::Zero(J, 3);
  if (J == 15) {
    const double o[15][3] = {
        {0, 0, 0},      {0, 0, 448},     {0, 0, 640},    {192, 0, 416},  {224, 0, 128},
        {256, 0, -160}, {-192, 0, 416},  {-224, 0, 128}, {-256, 0, -160}, {96, 0, -64},
        {112, 0, -480}, {128, 0, -896},  {-96, 0, -64},  {-112, 0, -480}, {-128, 0, -896}};
    for (int j = 0; j < J; ++j)
      for (int c = 0; c < 3; ++c) off(j, c) = o[j][c];
  } else {
    for (int j = 0; j < J; ++j) {
      if (j == sk.root_index) continue;
      const double ang = 2.0 * M_PI * j / J;
      off(j, 0) = snap64(256.0 * std::cos(ang));
      off(j, 1) = snap64(256.0 * std::sin(ang));
      off(j, 2) = (j % 2 == 0) ? 192.0 : -192.0;
    }
  }
  return off;
}

Mat rotate_z(const Mat& offsets, double cos_a, double sin_a) {
  Mat out = offsets;
  for (int j = 0; j < offsets.rows(); ++j) {
    const double x = offsets(j, 0), y = offsets(j, 1);
    out(j, 0) = cos_a * x - sin_a * y;
    out(j, 1) = sin_a * x + cos_a * y;
  }
  return out;
}

struct ClipBuffer {
  std::vector<double> data;
  int persons, frames, joints;

  void set(int p, int t, int j, int c, double v) {
    data[((static_cast<std::size_t>(p) * frames + t) * joints + j) * 3 + c] = v;
  }
};

void write_pose(ClipBuffer& buf, int p, int t, const Eigen::RowVector3d& root, const Mat& offsets) {
  for (int j = 0; j < buf.joints; ++j)
    for (int c = 0; c < 3; ++c) buf.set(p, t, j, c, root[c] + offsets(j, c));
}

MultiPersonClip finalize(ClipBuffer& buf, const Skeleton& sk, double noise_mm, std::mt19937_64& rng,
                         bool exact_grid) {
  if (noise_mm > 0.0) {
    std::normal_distribution<double> dist(0.0, noise_mm);
    for (double& v : buf.data) v += dist(rng);
  }
  if (!(exact_grid && noise_mm == 0.0)) {
    for (double& v : buf.data) v = snap_f32(v);
  }
  return MultiPersonClip(sk, buf.persons, buf.frames, std::move(buf.data));
}

MultiPersonClip synth_constvel(const SynthConfig& cfg, const Skeleton& sk, std::mt19937_64& rng) {
  const int P = cfg.persons, T = cfg.duration_frames, J = cfg.joints;
  ClipBuffer buf{std::vector<double>(static_cast<std::size_t>(P) * T * J * 3), P, T, J};
  const Mat offsets = base_offsets(sk);
  const double vmag = snap64(cfg.speed_mm_s / cfg.fps);
  std::uniform_real_distribution<double> jitter(-2000.0, 2000.0);
  // Axis-aligned headings keep every coordinate on the 1/64 mm grid, so speeds
  // and Frozen errors are exact.
  const double dirs[4][2] = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
  for (int p = 0; p < P; ++p) {
    const double* d = dirs[p % 4];
    const Mat pose = rotate_z(offsets, d[0], d[1]);
    Eigen::RowVector3d start(snap64(jitter(rng)), snap64(jitter(rng)), 960.0);
    Eigen::RowVector3d vel(vmag * d[0], vmag * d[1], 0.0);
    const bool pinned =
        std::find(cfg.pinned_agents.begin(), cfg.pinned_agents.end(), p) != cfg.pinned_agents.end();
    for (int t = 0; t < T; ++t) {
      Eigen::RowVector3d root = pinned ? start : Eigen::RowVector3d(start + t * vel);
      write_pose(buf, p, t, root, pose);
    }
  }
  return finalize(buf, sk, cfg.noise_mm, rng, /*exact_grid=*/true);
}

MultiPersonClip synth_circular(const SynthConfig& cfg, const Skeleton& sk, std::mt19937_64& rng) {
  const int P = cfg.persons, T = cfg.duration_frames, J = cfg.joints;
  ClipBuffer buf{std::vector<double>(static_cast<std::size_t>(P) * T * J * 3), P, T, J};
  const Mat offsets = base_offsets(sk);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double radius = 800.0;
  const double omega = cfg.speed_mm_s / radius / cfg.fps;  // rad per frame
  for (int p = 0; p < P; ++p) {
    const double cx = 3000.0 * std::cos(2.0 * M_PI * p / P);
    const double cy = 3000.0 * std::sin(2.0 * M_PI * p / P);
    const double phase0 = 2.0 * M_PI * unif(rng);
    const double gait0 = 2.0 * M_PI * unif(rng);
    const bool pinned =
        std::find(cfg.pinned_agents.begin(), cfg.pinned_agents.end(), p) != cfg.pinned_agents.end();
    for (int t = 0; t < T; ++t) {
      const double ph = phase0 + omega * (pinned ? 0 : t);
      Eigen::RowVector3d root(cx + radius * std::cos(ph), cy + radius * std::sin(ph), 960.0);
      const double heading = ph + M_PI / 2.0;
      Mat pose = rotate_z(offsets, std::cos(heading), std::sin(heading));
      if (!pinned) {
        const double gait = gait0 + 2.0 * M_PI * 1.5 * t / cfg.fps;
        for (int j = 0; j < J; ++j) {
          if (j == sk.root_index) continue;
          pose(j, 2) += cfg.limb_amplitude_mm * std::sin(gait + j);
          pose(j, 1) += 0.5 * cfg.limb_amplitude_mm * std::cos(gait + 2 * j);
        }
      }
      write_pose(buf, p, t, root, pose);
    }
  }
  return finalize(buf, sk, cfg.noise_mm, rng, /*exact_grid=*/false);
}

MultiPersonClip synth_pursuit(const SynthConfig& cfg, const Skeleton& sk, std::mt19937_64& rng) {
  const int P = cfg.persons, T = cfg.duration_frames, J = cfg.joints;
  ClipBuffer buf{std::vector<double>(static_cast<std::size_t>(P) * T * J * 3), P, T, J};
  const Mat offsets = base_offsets(sk);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double dt = 1.0 / cfg.fps;
  const double max_speed = cfg.speed_mm_s;
  const double gain = 2.5 * max_speed;  // mm/s^2 toward/away from the target
  const double drag = 1.2;
  const int delay = std::max(1, static_cast<int>(std::lround(0.2 * cfg.fps)));

  std::vector<Eigen::RowVector2d> pos(P), vel(P);
  std::vector<double> gait(P), travelled(P, 0.0);
  std::vector<std::vector<Eigen::RowVector2d>> trail(P);
  for (int p = 0; p < P; ++p) {
    const double ang = 2.0 * M_PI * (p + unif(rng) * 0.25) / P;
    pos[p] = Eigen::RowVector2d(2500.0 * std::cos(ang), 2500.0 * std::sin(ang));
    const double sang = ang + M_PI / 2.0;
    vel[p] = 0.5 * max_speed * Eigen::RowVector2d(std::cos(sang), std::sin(sang));
    gait[p] = 2.0 * M_PI * unif(rng);
  }

  auto is_pinned = [&cfg](int p) {
    return std::find(cfg.pinned_agents.begin(), cfg.pinned_agents.end(), p) !=
           cfg.pinned_agents.end();
  };

  for (int t = 0; t < T; ++t) {
    for (int p = 0; p < P; ++p) trail[p].push_back(pos[p]);
    std::vector<Eigen::RowVector2d> new_pos(P), new_vel(P);
    for (int p = 0; p < P; ++p) {
      if (is_pinned(p)) {
        new_pos[p] = pos[p];
        new_vel[p] = Eigen::RowVector2d::Zero();
        continue;
      }
      const int target = (p + 1) % P;
      const int look = std::max(0, static_cast<int>(trail[target].size()) - 1 - delay);
      Eigen::RowVector2d to_target = trail[target][look] - pos[p];
      const double dist = to_target.norm();
      Eigen::RowVector2d dir = dist > 1e-9 ? Eigen::RowVector2d(to_target / dist)
                                           : Eigen::RowVector2d(1.0, 0.0);
      // Even agents pursue their target, odd agents evade theirs; everyone is
      // someone's target, so each future depends on the others' pasts.
      if (p % 2 == 1) dir = -dir;
      Eigen::RowVector2d accel = gain * dir - drag * vel[p] * cfg.fps * dt;
      Eigen::RowVector2d v = vel[p] + accel * dt;
      const double sp = v.norm();
      if (sp > max_speed) v *= max_speed / sp;
      new_vel[p] = v;
      new_pos[p] = pos[p] + v * dt;
    }
    for (int p = 0; p < P; ++p) {
      const double speed = vel[p].norm();
      const double heading = speed > 1e-9 ? std::atan2(vel[p][1], vel[p][0]) : 0.0;
      Mat pose = rotate_z(offsets, std::cos(heading), std::sin(heading));
      if (!is_pinned(p)) {
        travelled[p] += speed * dt;
        const double phase = gait[p] + travelled[p] * 0.012;
        const double amp = cfg.limb_amplitude_mm * std::min(1.0, speed / (0.5 * max_speed + 1e-9));
        for (int j = 0; j < J; ++j) {
          if (j == sk.root_index) continue;
          pose(j, 2) += amp * std::sin(phase + j);
          pose(j, 0) += 0.4 * amp * std::sin(phase * 0.7 + 2 * j);
        }
      }
      Eigen::RowVector3d root(pos[p][0], pos[p][1], 960.0 + 10.0 * std::sin(gait[p] + t * 0.2));
      write_pose(buf, p, t, root, pose);
      pos[p] = new_pos[p];
      vel[p] = new_vel[p];
    }
  }
  return finalize(buf, sk, cfg.noise_mm, rng, /*exact_grid=*/false);
}

}  // namespace

std::vector<MultiPersonClip> synth_clips(const SynthConfig& config, int count) {
  config.validate();
  if (count < 1) throw ConfigError("synth_clips: count must be >= 1");
  Skeleton sk = config.joints == 15 ? Skeleton::named_default(config.fps)
                                    : Skeleton::generic(config.joints, config.fps);
  std::vector<MultiPersonClip> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    // Independent stream per clip index so clip i is stable under count changes.
    std::mt19937_64 rng(config.seed * 0x9E3779B97F4A7C15ULL + 0xD1B54A32D192ED03ULL * (i + 1));
    switch (config.behavior) {
      case SynthConfig::Behavior::kConstantVelocity: out.push_back(synth_constvel(config, sk, rng)); break;
      case SynthConfig::Behavior::kCircular: out.push_back(synth_circular(config, sk, rng)); break;
      case SynthConfig::Behavior::kPursuitEvade: out.push_back(synth_pursuit(config, sk, rng)); break;
    }
  }
  return out;
}

void save_clip(const MultiPersonClip& clip, const std::string& path) {
  json header;
  header["magic"] = "MPC1";
  header["P"] = clip.persons();
  header["T"] = clip.frames();
  header["J"] = clip.joints();
  header["fps"] = clip.skeleton().fps;
  header["root_index"] = clip.skeleton().root_index;
  header["joint_names"] = clip.skeleton().joint_names;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("save_clip: cannot open '" + path + "' for writing");
  out << header.dump() << '\n';
  std::vector<float> payload(clip.data().size());
  for (std::size_t i = 0; i < payload.size(); ++i) payload[i] = static_cast<float>(clip.data()[i]);
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!out) throw DataError("save_clip: write failed for '" + path + "'");
}

MultiPersonClip load_clip(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_clip: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line.empty())
    throw DataError("load_clip: missing header line (offset 0)");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw DataError("load_clip: malformed header (offset 0): " + std::string(e.what()));
  }
  if (!header.contains("magic") || header["magic"] != "MPC1")
    throw DataError("load_clip: bad magic (offset 0)");
  for (const char* key : {"P", "T", "J", "fps", "root_index", "joint_names"})
    if (!header.contains(key))
      throw DataError(std::string("load_clip: header missing field '") + key + "'");

  const int P = header["P"].get<int>();
  const int T = header["T"].get<int>();
  const int J = header["J"].get<int>();
  Skeleton sk;
  sk.joint_count = J;
  sk.root_index = header["root_index"].get<int>();
  sk.fps = header["fps"].get<double>();
  sk.joint_names = header["joint_names"].get<std::vector<std::string>>();
  sk.validate();
  if (P < 1 || T < 1) throw DataError("load_clip: non-positive P or T in header");

  const std::size_t header_bytes = line.size() + 1;
  const std::size_t count = static_cast<std::size_t>(P) * T * J * 3;
  std::vector<float> payload(count);
  in.read(reinterpret_cast<char*>(payload.data()),
          static_cast<std::streamsize>(count * sizeof(float)));
  const std::size_t got = static_cast<std::size_t>(in.gcount());
  if (got != count * sizeof(float)) {
    throw DataError("load_clip: truncated payload, expected " + std::to_string(count * sizeof(float)) +
                    " bytes, got " + std::to_string(got) + " (offset " +
                    std::to_string(header_bytes + got) + ")");
  }
  char extra;
  if (in.read(&extra, 1))
    throw DataError("load_clip: payload longer than P*T*J*3*4 bytes declared by header (offset " +
                    std::to_string(header_bytes + count * sizeof(float)) + ")");

  std::vector<double> data(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::isfinite(payload[i]))
      throw DataError("load_clip: non-finite value at offset " +
                      std::to_string(header_bytes + i * sizeof(float)));
    data[i] = static_cast<double>(payload[i]);
  }
  return MultiPersonClip(sk, P, T, std::move(data));
}

std::vector<MultiPersonClip> load_clips(const std::string& path) {
  std::vector<MultiPersonClip> clips;
  if (fs::is_directory(path)) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(path))
      if (entry.is_regular_file() && entry.path().extension() == ".mpc")
        files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    for (const std::string& f : files) clips.push_back(load_clip(f));
  } else {
    clips.push_back(load_clip(path));
  }
  if (clips.empty()) throw DataError("load_clips: no .mpc files under '" + path + "'");
  return clips;
}

}  // namespace hiersoc
