#include "hiersoc/config_json.hpp"

#include <set>

namespace hiersoc {

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& path) {
  if (!j.is_object()) throw ConfigError("config: '" + path + "' must be a JSON object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!ok.count(it.key()))
      throw ConfigError("config: unknown key '" + path + "." + it.key() + "'");
  }
}

namespace {

template <typename T>
T field(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config: bad value for '") + key + "'");
  }
}

}  // namespace

json to_json(const MdpConfig& c) {
  return {{"history_frames", c.history_frames},
          {"future_frames", c.future_frames},
          {"steps", c.steps}};
}

json to_json(const EncoderConfig& c) {
  return {{"layers", c.layers},
          {"heads", c.heads},
          {"model_dim", c.model_dim},
          {"window_frames", c.window_frames},
          {"use_person_identity", c.use_person_identity},
          {"root_relative_inputs", c.root_relative_inputs},
          {"ffn_dim", c.ffn_dim},
          {"max_persons", c.max_persons},
          {"input_scale", c.input_scale}};
}

json to_json(const PolicyStackConfig& c) {
  return {{"k", c.levels},
          {"share_levels", c.share_levels},
          {"decoder_layers", c.decoder_layers},
          {"decoder_heads", c.decoder_heads},
          {"model_dim", c.model_dim},
          {"ffn_dim", c.ffn_dim},
          {"velocity_scale_mm", c.velocity_scale_mm}};
}

json to_json(const DiscriminatorConfig& c) {
  return {{"layers", c.layers},
          {"heads", c.heads},
          {"model_dim", c.model_dim},
          {"ffn_dim", c.ffn_dim}};
}

json to_json(const LossWeights& c) {
  return {{"lambda", c.lambda},
          {"enable_gail", c.enable_gail},
          {"enable_mid_gail", c.enable_mid_gail},
          {"gail_levels", c.custom_levels}};
}

json to_json(const OptimConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"grad_clip", c.grad_clip},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps}};
}

json to_json(const SynthConfig& c) {
  return {{"seed", c.seed},
          {"persons", c.persons},
          {"joints", c.joints},
          {"fps", c.fps},
          {"duration_frames", c.duration_frames},
          {"behavior", SynthConfig::behavior_to_string(c.behavior)},
          {"noise_mm", c.noise_mm},
          {"speed_mm_s", c.speed_mm_s},
          {"limb_amplitude_mm", c.limb_amplitude_mm},
          {"pinned_agents", c.pinned_agents}};
}

json to_json(const TrainerConfig& c) {
  return {{"seed", c.seed},
          {"window_stride", c.window_stride},
          {"mdp", to_json(c.mdp)},
          {"encoder", to_json(c.encoder)},
          {"policy", to_json(c.stack)},
          {"discriminator", to_json(c.disc)},
          {"loss", to_json(c.loss)},
          {"optim", to_json(c.optim)}};
}

MdpConfig mdp_from_json(const json& j, MdpConfig base, const std::string& path) {
  check_keys(j, {"history_frames", "future_frames", "steps"}, path);
  base.history_frames = field(j, "history_frames", base.history_frames);
  base.future_frames = field(j, "future_frames", base.future_frames);
  base.steps = field(j, "steps", base.steps);
  return base;
}

EncoderConfig encoder_from_json(const json& j, EncoderConfig base, const std::string& path) {
  check_keys(j,
             {"layers", "heads", "model_dim", "window_frames", "use_person_identity",
              "root_relative_inputs", "ffn_dim", "max_persons", "input_scale"},
             path);
  base.layers = field(j, "layers", base.layers);
  base.heads = field(j, "heads", base.heads);
  base.model_dim = field(j, "model_dim", base.model_dim);
  base.window_frames = field(j, "window_frames", base.window_frames);
  base.use_person_identity = field(j, "use_person_identity", base.use_person_identity);
  base.root_relative_inputs = field(j, "root_relative_inputs", base.root_relative_inputs);
  base.ffn_dim = field(j, "ffn_dim", base.ffn_dim);
  base.max_persons = field(j, "max_persons", base.max_persons);
  base.input_scale = field(j, "input_scale", base.input_scale);
  return base;
}

PolicyStackConfig stack_from_json(const json& j, PolicyStackConfig base, const std::string& path) {
  check_keys(j,
             {"k", "share_levels", "decoder_layers", "decoder_heads", "model_dim", "ffn_dim",
              "velocity_scale_mm"},
             path);
  base.levels = field(j, "k", base.levels);
  base.share_levels = field(j, "share_levels", base.share_levels);
  base.decoder_layers = field(j, "decoder_layers", base.decoder_layers);
  base.decoder_heads = field(j, "decoder_heads", base.decoder_heads);
  base.model_dim = field(j, "model_dim", base.model_dim);
  base.ffn_dim = field(j, "ffn_dim", base.ffn_dim);
  base.velocity_scale_mm = field(j, "velocity_scale_mm", base.velocity_scale_mm);
  return base;
}

DiscriminatorConfig disc_from_json(const json& j, DiscriminatorConfig base,
                                   const std::string& path) {
  check_keys(j, {"layers", "heads", "model_dim", "ffn_dim"}, path);
  base.layers = field(j, "layers", base.layers);
  base.heads = field(j, "heads", base.heads);
  base.model_dim = field(j, "model_dim", base.model_dim);
  base.ffn_dim = field(j, "ffn_dim", base.ffn_dim);
  return base;
}

LossWeights loss_from_json(const json& j, LossWeights base, const std::string& path) {
  check_keys(j, {"lambda", "enable_gail", "enable_mid_gail", "gail_levels"}, path);
  base.lambda = field(j, "lambda", base.lambda);
  base.enable_gail = field(j, "enable_gail", base.enable_gail);
  base.enable_mid_gail = field(j, "enable_mid_gail", base.enable_mid_gail);
  base.custom_levels = field(j, "gail_levels", base.custom_levels);
  return base;
}

OptimConfig optim_from_json(const json& j, OptimConfig base, const std::string& path) {
  check_keys(j, {"learning_rate", "batch_size", "grad_clip", "beta1", "beta2", "eps"}, path);
  base.learning_rate = field(j, "learning_rate", base.learning_rate);
  base.batch_size = field(j, "batch_size", base.batch_size);
  base.grad_clip = field(j, "grad_clip", base.grad_clip);
  base.beta1 = field(j, "beta1", base.beta1);
  base.beta2 = field(j, "beta2", base.beta2);
  base.eps = field(j, "eps", base.eps);
  return base;
}

SynthConfig synth_from_json(const json& j, SynthConfig base, const std::string& path) {
  check_keys(j,
             {"seed", "persons", "joints", "fps", "duration_frames", "behavior", "noise_mm",
              "speed_mm_s", "limb_amplitude_mm", "pinned_agents"},
             path);
  base.seed = field(j, "seed", base.seed);
  base.persons = field(j, "persons", base.persons);
  base.joints = field(j, "joints", base.joints);
  base.fps = field(j, "fps", base.fps);
  base.duration_frames = field(j, "duration_frames", base.duration_frames);
  if (j.contains("behavior"))
    base.behavior = SynthConfig::behavior_from_string(j.at("behavior").get<std::string>());
  base.noise_mm = field(j, "noise_mm", base.noise_mm);
  base.speed_mm_s = field(j, "speed_mm_s", base.speed_mm_s);
  base.limb_amplitude_mm = field(j, "limb_amplitude_mm", base.limb_amplitude_mm);
  base.pinned_agents = field(j, "pinned_agents", base.pinned_agents);
  return base;
}

TrainerConfig trainer_from_json(const json& j, TrainerConfig base, const std::string& path) {
  check_keys(j,
             {"seed", "window_stride", "mdp", "encoder", "policy", "discriminator", "loss",
              "optim"},
             path);
  base.seed = field(j, "seed", base.seed);
  base.window_stride = field(j, "window_stride", base.window_stride);
  if (j.contains("mdp")) base.mdp = mdp_from_json(j.at("mdp"), base.mdp, path + ".mdp");
  if (j.contains("encoder"))
    base.encoder = encoder_from_json(j.at("encoder"), base.encoder, path + ".encoder");
  if (j.contains("policy")) base.stack = stack_from_json(j.at("policy"), base.stack, path + ".policy");
  if (j.contains("discriminator"))
    base.disc = disc_from_json(j.at("discriminator"), base.disc, path + ".discriminator");
  if (j.contains("loss")) base.loss = loss_from_json(j.at("loss"), base.loss, path + ".loss");
  if (j.contains("optim")) base.optim = optim_from_json(j.at("optim"), base.optim, path + ".optim");
  return base;
}

}  // namespace hiersoc
