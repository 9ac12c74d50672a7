#include "hiersoc/checkpoint.hpp"

#include <fstream>

#include "hiersoc/config_json.hpp"

namespace hiersoc {

using nlohmann::json;

void save_checkpoint(const std::string& path, const json& config_record, std::int64_t step,
                     const std::vector<std::pair<std::string, const Mat*>>& tensors) {
  json header;
  header["magic"] = "HSCP1";
  header["version"] = 1;
  header["step"] = step;
  header["config"] = config_record;
  json dir = json::array();
  for (const auto& [name, mat] : tensors)
    dir.push_back({{"name", name},
                   {"rows", static_cast<int>(mat->rows())},
                   {"cols", static_cast<int>(mat->cols())}});
  header["tensors"] = dir;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("save_checkpoint: cannot open '" + path + "'");
  out << header.dump() << '\n';
  std::vector<float> buf;
  for (const auto& [name, mat] : tensors) {
    buf.resize(static_cast<std::size_t>(mat->size()));
    std::size_t i = 0;
    for (int r = 0; r < mat->rows(); ++r)
      for (int c = 0; c < mat->cols(); ++c) buf[i++] = static_cast<float>((*mat)(r, c));
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!out) throw DataError("save_checkpoint: write failed for '" + path + "'");
}

const Mat* LoadedCheckpoint::find(const std::string& name) const {
  for (const auto& [n, m] : tensors)
    if (n == name) return &m;
  return nullptr;
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_checkpoint: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError("load_checkpoint: missing header");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw DataError("load_checkpoint: malformed header: " + std::string(e.what()));
  }
  if (!header.contains("magic") || header["magic"] != "HSCP1")
    throw DataError("load_checkpoint: bad magic");

  LoadedCheckpoint out;
  out.header.config = header.value("config", json::object());
  out.header.step = header.value("step", std::int64_t{0});
  for (const auto& entry : header.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const int rows = entry.at("rows").get<int>();
    const int cols = entry.at("cols").get<int>();
    std::vector<float> buf(static_cast<std::size_t>(rows) * cols);
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) != buf.size() * sizeof(float))
      throw DataError("load_checkpoint: truncated tensor '" + name + "'");
    Mat m(rows, cols);
    std::size_t i = 0;
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) m(r, c) = static_cast<double>(buf[i++]);
    out.header.tensors.push_back({name, {rows, cols}});
    out.tensors.push_back({name, std::move(m)});
  }
  return out;
}

json trainer_config_record(const TrainerConfig& cfg) { return to_json(cfg); }

TrainerConfig trainer_config_from_record(const json& j) {
  return trainer_from_json(j, TrainerConfig{}, "checkpoint.config");
}

namespace {

void append_set(std::vector<std::pair<std::string, const Mat*>>& tensors, const nn::ParamSet& ps,
                const std::string& prefix) {
  for (const nn::Parameter* p : ps.all()) tensors.push_back({prefix + p->name, &p->value});
}

void append_opt(std::vector<std::pair<std::string, const Mat*>>& tensors, nn::AdamState& opt,
                const std::string& prefix) {
  auto& params = opt.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    tensors.push_back({prefix + "m." + params[i]->name, &opt.moments_m()[i]});
    tensors.push_back({prefix + "v." + params[i]->name, &opt.moments_v()[i]});
  }
}

void restore_set(nn::ParamSet& ps, const LoadedCheckpoint& ck, const std::string& prefix) {
  for (nn::Parameter* p : ps.all()) {
    const Mat* m = ck.find(prefix + p->name);
    if (!m) throw DataError("checkpoint: missing tensor '" + prefix + p->name + "'");
    if (m->rows() != p->value.rows() || m->cols() != p->value.cols())
      throw DataError("checkpoint: shape mismatch for '" + p->name + "'");
    p->value = *m;
  }
}

void restore_opt(nn::AdamState& opt, const LoadedCheckpoint& ck, const std::string& prefix,
                 std::int64_t steps) {
  auto& params = opt.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Mat* m = ck.find(prefix + "m." + params[i]->name);
    const Mat* v = ck.find(prefix + "v." + params[i]->name);
    if (!m || !v) throw DataError("checkpoint: missing optimizer state for '" + params[i]->name + "'");
    opt.moments_m()[i] = *m;
    opt.moments_v()[i] = *v;
  }
  opt.set_steps_taken(steps);
}

}  // namespace

void save_trainer(const Trainer& trainer, const std::string& path) {
  Trainer& t = const_cast<Trainer&>(trainer);
  std::vector<std::pair<std::string, const Mat*>> tensors;
  append_set(tensors, t.model_params(), "model.");
  append_set(tensors, t.disc_params(), "disc.");
  append_opt(tensors, t.model_opt(), "adam_model.");
  append_opt(tensors, t.disc_opt(), "adam_disc.");
  json record = trainer_config_record(t.config());
  record["joints"] = t.joints();
  record["persons"] = t.persons();
  record["opt_steps_model"] = t.model_opt().steps_taken();
  record["opt_steps_disc"] = t.disc_opt().steps_taken();
  save_checkpoint(path, record, t.step_count(), tensors);
}

Trainer load_trainer(const std::string& path, std::vector<MultiPersonClip> clips) {
  LoadedCheckpoint ck = load_checkpoint(path);
  json record = ck.header.config;
  const std::int64_t opt_m = record.value("opt_steps_model", std::int64_t{0});
  const std::int64_t opt_d = record.value("opt_steps_disc", std::int64_t{0});
  record.erase("joints");
  record.erase("persons");
  record.erase("opt_steps_model");
  record.erase("opt_steps_disc");
  TrainerConfig cfg = trainer_config_from_record(record);
  Trainer trainer(cfg, std::move(clips));
  restore_set(trainer.model_params(), ck, "model.");
  restore_set(trainer.disc_params(), ck, "disc.");
  restore_opt(trainer.model_opt(), ck, "adam_model.", opt_m);
  restore_opt(trainer.disc_opt(), ck, "adam_disc.", opt_d);
  trainer.set_step_count(ck.header.step);
  return trainer;
}

}  // namespace hiersoc
