#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "hiersoc/checkpoint.hpp"
#include "hiersoc/config_json.hpp"
#include "hiersoc/dataset.hpp"
#include "hiersoc/imitation.hpp"
#include "hiersoc/metrics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hiersoc;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config file parse error: " + std::string(e.what()));
  }
  return j;
}

std::vector<double> parse_horizons(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(std::stod(item));
  }
  if (out.empty()) throw ConfigError("horizons: empty list");
  return out;
}

void write_json(const json& j, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << std::endl;
    return;
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
}

json report_to_json(const ErrorReport& r) {
  return {{"horizons_ms", r.horizons_ms},
          {"global_mm", r.global_mm},
          {"local_mm", r.local_mm},
          {"root_mm", r.root_mm}};
}

void write_report_csv(std::ostream& os,
                      const std::vector<std::pair<std::string, ErrorReport>>& rows) {
  os << "method";
  const auto& hs = rows.front().second.horizons_ms;
  for (const char* metric : {"global", "local", "root"})
    for (double h : hs) os << ',' << metric << '@' << h;
  os << '\n';
  for (const auto& [name, r] : rows) {
    os << name;
    for (const auto* col : {&r.global_mm, &r.local_mm, &r.root_mm})
      for (double v : *col) os << ',' << std::setprecision(10) << v;
    os << '\n';
  }
}

struct TrainCli {
  std::string config_path;
  std::string clips_path;
  std::string out_path = "checkpoint.hsc";
  std::string log_path;
  std::string resume_path;
  std::string ablation;
  std::int64_t steps = 500;
  int log_every = 1;
  int eval_every = 0;
  int checkpoint_every = 0;
  // flag overrides, NaN/INT_MIN = not set
  double lambda_override = std::numeric_limits<double>::quiet_NaN();
  int k_override = -1;
  std::int64_t seed_override = -1;
  double fps_override = 0.0;
};

TrainerConfig resolve_train_config(const json& file_cfg, const TrainCli& cli) {
  TrainerConfig cfg = trainer_from_json(file_cfg, TrainerConfig{});
  if (!cli.ablation.empty()) {
    AblationSetup ab = build_ablation(cli.ablation, cfg.stack, cfg.loss);
    cfg.stack = ab.stack;
    cfg.loss = ab.weights;
  }
  if (cli.k_override >= 0) cfg.stack.levels = cli.k_override;
  if (!std::isnan(cli.lambda_override)) cfg.loss.lambda = cli.lambda_override;
  if (cli.seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(cli.seed_override);
  return cfg;
}

int cmd_train(const TrainCli& cli) {
  json file_cfg = load_config_file(cli.config_path);
  // The train section carries loop settings; everything else is TrainerConfig.
  json loop = file_cfg.value("train", json::object());
  check_keys(loop, {"steps", "log_every", "eval_every", "checkpoint_every"}, "train");
  std::int64_t steps = loop.value("steps", cli.steps);
  if (file_cfg.contains("train")) file_cfg.erase("train");
  if (file_cfg.contains("synth")) file_cfg.erase("synth");
  if (file_cfg.contains("eval")) file_cfg.erase("eval");

  std::vector<MultiPersonClip> clips = load_clips(cli.clips_path);

  std::optional<Trainer> trainer;
  if (!cli.resume_path.empty()) {
    trainer.emplace(load_trainer(cli.resume_path, std::move(clips)));
  } else {
    trainer.emplace(resolve_train_config(file_cfg, cli), std::move(clips));
  }

  std::ofstream log;
  std::ostream* log_os = nullptr;
  if (!cli.log_path.empty()) {
    log.open(cli.log_path);
    if (!log) throw DataError("cannot open log '" + cli.log_path + "'");
    log_os = &log;
  }
  if (log_os) {
    json header = {{"record", "header"},
                   {"effective_config", trainer_config_record(trainer->config())},
                   {"steps", steps},
                   {"windows", trainer->window_count()}};
    *log_os << header.dump() << '\n';
  }

  for (std::int64_t s = trainer->step_count(); s < steps; ++s) {
    LossRecord rec = trainer->train_step();
    if (log_os && (cli.log_every <= 1 || rec.step % cli.log_every == 0)) {
      json line = {{"record", "step"},   {"step", rec.step},         {"bc", rec.bc},
                   {"gail", rec.gail},   {"disc", rec.disc},         {"combined", rec.combined},
                   {"grad_norm", rec.grad_norm}};
      *log_os << line.dump() << '\n';
    }
    if (cli.checkpoint_every > 0 && (rec.step + 1) % cli.checkpoint_every == 0)
      save_trainer(*trainer, cli.out_path);
    if (cli.eval_every > 0 && (rec.step + 1) % cli.eval_every == 0 && log_os) {
      ErrorReport r = evaluate(trainer->predictor(), trainer->clips(), trainer->config().mdp,
                               {1000.0 * trainer->config().mdp.future_frames /
                                trainer->clips().front().skeleton().fps});
      json line = {{"record", "eval"}, {"step", rec.step}, {"global_mm", r.global_mm[0]}};
      *log_os << line.dump() << '\n';
    }
  }
  save_trainer(*trainer, cli.out_path);
  std::cout << "trained " << trainer->step_count() << " steps, checkpoint: " << cli.out_path
            << std::endl;
  return kExitOk;
}

int cmd_synth(const json& file_cfg, std::string out_dir, int count, std::int64_t seed_override,
              const std::string& behavior, int persons, int joints, double fps, int frames,
              double speed, double noise) {
  SynthConfig cfg = synth_from_json(file_cfg.value("synth", json::object()), SynthConfig{});
  if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
  if (!behavior.empty()) cfg.behavior = SynthConfig::behavior_from_string(behavior);
  if (persons > 0) cfg.persons = persons;
  if (joints > 0) cfg.joints = joints;
  if (fps > 0) cfg.fps = fps;
  if (frames > 0) cfg.duration_frames = frames;
  if (speed >= 0) cfg.speed_mm_s = speed;
  if (noise >= 0) cfg.noise_mm = noise;

  fs::create_directories(out_dir);
  std::vector<MultiPersonClip> clips = synth_clips(cfg, count);
  for (std::size_t i = 0; i < clips.size(); ++i) {
    std::ostringstream name;
    name << "clip_" << std::setw(4) << std::setfill('0') << i << ".mpc";
    save_clip(clips[i], (fs::path(out_dir) / name.str()).string());
  }
  std::cout << "wrote " << clips.size() << " clips to " << out_dir << std::endl;
  return kExitOk;
}

int cmd_stats(const std::string& clips_path, const std::string& out_path,
              std::vector<double> thresholds) {
  std::vector<MultiPersonClip> clips = load_clips(clips_path);
  std::vector<Pose> poses;
  for (const MultiPersonClip& c : clips) {
    std::vector<Pose> ps = collect_poses(c);
    poses.insert(poses.end(), ps.begin(), ps.end());
  }
  const int root = clips.front().skeleton().root_index;
  json diversity = json::object();
  for (double th : thresholds) {
    std::ostringstream key;
    key << th << "mm";
    diversity[key.str()] = pose_diversity(poses, th, root);
  }

  Eigen::VectorXd joint_sum = Eigen::VectorXd::Zero(clips.front().joints());
  double overall = 0.0;
  for (const MultiPersonClip& c : clips) {
    MotionIntensity mi = motion_intensity(c);
    joint_sum += mi.per_joint_mm_s;
    overall += mi.overall_mm_s;
  }
  joint_sum /= static_cast<double>(clips.size());
  overall /= static_cast<double>(clips.size());

  json intensity;
  for (int j = 0; j < joint_sum.size(); ++j)
    intensity[clips.front().skeleton().joint_names[j]] = joint_sum[j];

  json out = {{"clips", clips.size()},
              {"poses", poses.size()},
              {"pose_diversity", diversity},
              {"motion_intensity_mm_s", intensity},
              {"motion_intensity_overall_mm_s", overall}};
  write_json(out, out_path);
  return kExitOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& clips_path,
             const std::string& out_path, const std::string& csv_path,
             const std::string& horizons_csv, bool per_level, int stride) {
  std::vector<MultiPersonClip> clips = load_clips(clips_path);
  Trainer trainer = load_trainer(ckpt_path, clips);
  const MdpConfig& mdp = trainer.config().mdp;
  std::vector<double> horizons = parse_horizons(horizons_csv);

  std::vector<std::pair<std::string, ErrorReport>> rows;
  rows.push_back({"frozen", evaluate(
                                [&](const MultiPersonClip& h) {
                                  return frozen_predict(h, mdp.future_frames);
                                },
                                clips, mdp, horizons, stride)});
  rows.push_back({"model", evaluate(trainer.predictor(), clips, mdp, horizons, stride)});
  if (per_level) {
    for (int k = 1; k <= trainer.config().stack.levels; ++k) {
      rows.push_back({"level-" + std::to_string(k),
                      evaluate(trainer.predictor(k), clips, mdp, horizons, stride)});
    }
  }

  json out = json::object();
  for (const auto& [name, r] : rows) out[name] = report_to_json(r);
  write_json(out, out_path);
  if (!csv_path.empty()) {
    std::ofstream csv(csv_path);
    if (!csv) throw DataError("cannot write '" + csv_path + "'");
    write_report_csv(csv, rows);
  }
  return kExitOk;
}

int cmd_predict(const std::string& ckpt_path, const std::string& clip_path,
                const std::string& out_path) {
  MultiPersonClip clip = load_clip(clip_path);
  Trainer trainer = load_trainer(ckpt_path, {clip});
  const MdpConfig& mdp = trainer.config().mdp;
  if (clip.frames() < mdp.history_frames)
    throw DataError("predict: history shorter than T frames");
  MultiPersonClip pred = trainer.predict(clip);
  save_clip(pred, out_path);
  std::cout << "wrote prediction (" << pred.frames() << " frames) to " << out_path << std::endl;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cognitive-hierarchy imitation learning for multi-person 3D motion prediction"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate synthetic multi-agent motion clips");
  std::string s_config, s_out = "clips", s_behavior;
  int s_count = 8, s_persons = 0, s_joints = 0, s_frames = 0;
  std::int64_t s_seed = -1;
  double s_fps = 0, s_speed = -1, s_noise = -1;
  synth->add_option("--config", s_config, "JSON config file");
  synth->add_option("--out", s_out, "Output directory");
  synth->add_option("--count", s_count, "Number of clips");
  synth->add_option("--seed", s_seed, "Generator seed");
  synth->add_option("--behavior", s_behavior, "constant-velocity | circular | pursuit-evade");
  synth->add_option("--persons", s_persons, "Agents per clip");
  synth->add_option("--joints", s_joints, "Joints per agent");
  synth->add_option("--fps", s_fps, "Frames per second");
  synth->add_option("--frames", s_frames, "Frames per clip");
  synth->add_option("--speed", s_speed, "Speed in mm/s");
  synth->add_option("--noise", s_noise, "Noise sigma in mm");

  // stats
  auto* stats = app.add_subcommand("stats", "Pose diversity and motion intensity report");
  std::string st_clips, st_out;
  std::vector<double> st_thresholds = {50.0, 100.0};
  stats->add_option("--clips", st_clips, "Clip file or directory")->required();
  stats->add_option("--out", st_out, "Report path (default stdout)");
  stats->add_option("--thresholds", st_thresholds, "Diversity thresholds in mm");

  // train
  auto* train = app.add_subcommand("train", "Train the policy stack");
  TrainCli tc;
  train->add_option("--config", tc.config_path, "JSON config file");
  train->add_option("--clips", tc.clips_path, "Clip file or directory")->required();
  train->add_option("--out", tc.out_path, "Checkpoint path");
  train->add_option("--log", tc.log_path, "JSON-lines metrics log");
  train->add_option("--resume", tc.resume_path, "Resume from checkpoint");
  train->add_option("--steps", tc.steps, "Training steps");
  train->add_option("--seed", tc.seed_override, "Seed override");
  train->add_option("--k", tc.k_override, "Reasoning depth override");
  train->add_option("--lambda", tc.lambda_override, "GAIL weight override");
  train->add_option("--ablation", tc.ablation, "Ablation tag a..h");
  train->add_option("--log-every", tc.log_every, "Log period");
  train->add_option("--eval-every", tc.eval_every, "Eval period (0 off)");
  train->add_option("--checkpoint-every", tc.checkpoint_every, "Checkpoint period (0 off)");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint against clips");
  std::string e_ckpt, e_clips, e_out, e_csv, e_horizons = "400,600,800,1000";
  bool e_per_level = false;
  int e_stride = 0;
  eval->add_option("--checkpoint", e_ckpt, "Checkpoint path")->required();
  eval->add_option("--clips", e_clips, "Clip file or directory")->required();
  eval->add_option("--out", e_out, "Report path (default stdout)");
  eval->add_option("--csv", e_csv, "Optional CSV table");
  eval->add_option("--horizons", e_horizons, "Comma-separated horizons in ms");
  eval->add_option("--stride", e_stride, "Window stride (default T')");
  eval->add_flag("--per-level", e_per_level, "Add per-level rows");

  // predict
  auto* predict = app.add_subcommand("predict", "Predict the future of one clip");
  std::string p_ckpt, p_clip, p_out = "prediction.mpc";
  predict->add_option("--checkpoint", p_ckpt, "Checkpoint path")->required();
  predict->add_option("--clip", p_clip, "History clip")->required();
  predict->add_option("--out", p_out, "Output clip path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (synth->parsed())
      return cmd_synth(load_config_file(s_config), s_out, s_count, s_seed, s_behavior, s_persons,
                       s_joints, s_fps, s_frames, s_speed, s_noise);
    if (stats->parsed()) return cmd_stats(st_clips, st_out, st_thresholds);
    if (train->parsed()) return cmd_train(tc);
    if (eval->parsed())
      return cmd_eval(e_ckpt, e_clips, e_out, e_csv, e_horizons, e_per_level, e_stride);
    if (predict->parsed()) return cmd_predict(p_ckpt, p_clip, p_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << std::endl;
    return kExitConfig;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << std::endl;
    return kExitData;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << std::endl;
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numerical abort: " << e.what() << std::endl;
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return kExitConfig;
}
