#pragma once

#include <initializer_list>
#include <string>

#include "json.hpp"

#include "hiersoc/dataset.hpp"
#include "hiersoc/imitation.hpp"

namespace hiersoc {

using nlohmann::json;

// Rejects keys outside the schema; `path` names the object in the error.
void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& path);

json to_json(const MdpConfig& c);
json to_json(const EncoderConfig& c);
json to_json(const PolicyStackConfig& c);
json to_json(const DiscriminatorConfig& c);
json to_json(const LossWeights& c);
json to_json(const OptimConfig& c);
json to_json(const SynthConfig& c);
json to_json(const TrainerConfig& c);

// Every parser starts from `base` so config files can be partial.
MdpConfig mdp_from_json(const json& j, MdpConfig base, const std::string& path = "mdp");
EncoderConfig encoder_from_json(const json& j, EncoderConfig base,
                                const std::string& path = "encoder");
PolicyStackConfig stack_from_json(const json& j, PolicyStackConfig base,
                                  const std::string& path = "policy");
DiscriminatorConfig disc_from_json(const json& j, DiscriminatorConfig base,
                                   const std::string& path = "discriminator");
LossWeights loss_from_json(const json& j, LossWeights base, const std::string& path = "loss");
OptimConfig optim_from_json(const json& j, OptimConfig base, const std::string& path = "optim");
SynthConfig synth_from_json(const json& j, SynthConfig base, const std::string& path = "synth");
TrainerConfig trainer_from_json(const json& j, TrainerConfig base,
                                const std::string& path = "config");

}  // namespace hiersoc
