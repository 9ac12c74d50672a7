#pragma once

#include <vector>

#include "hiersoc/motion.hpp"
#include "hiersoc/nn.hpp"

namespace hiersoc {

struct EncoderConfig {
  int layers = 3;
  int heads = 8;
  int model_dim = 128;
  // Frames attended per agent; 0 means "all frames of the state" (callers that
  // train set this to the history length T).
  int window_frames = 0;
  bool use_person_identity = false;
  bool root_relative_inputs = false;
  int ffn_dim = 0;       // 0 -> 4 * model_dim
  int max_persons = 8;   // identity-embedding slots, only used when use_person_identity
  double input_scale = 1e-3;  // mm -> m

  void validate() const;
  nn::TransformerDims dims() const;
};

struct StateFeatures {
  Mat local;                  // P x d, one row per agent
  Eigen::RowVectorXd global;  // d

  int persons() const { return static_cast<int>(local.rows()); }
};

// Row layout of a raw token matrix: (window, agent, frame)-ordered rows of
// flattened poses, [windows * persons * frames x 3 * joints].
struct TokenLayout {
  int windows = 0;
  int persons = 0;
  int frames = 0;
  int joints = 0;

  int rows() const { return windows * persons * frames; }
  int cols() const { return 3 * joints; }
};

// Centering / root-relativization / scaling applied on the tape so input
// gradients flow through the normalization.
struct TokenNormSpec {
  TokenLayout layout;
  int root_index = 0;
  int center_frame = -1;        // frame used for centering; -1 means last frame
  bool per_agent_center = true; // local encoder; false: mean root over agents
  bool root_relative = false;
  double scale = 1e-3;
};

ad::Var normalize_tokens(ad::Var raw, const TokenNormSpec& spec);

// Raw tokens for the last `window_frames` frames of each state in the batch.
// All states must share (P, J); frames per state may differ but the slice is uniform.
Mat assemble_raw_tokens(const std::vector<const MdpState*>& states, int window_frames);

void add_encoder_stack_params(nn::ParamSet& ps, const EncoderConfig& cfg, int joints);

struct EncodedBatchVars {
  ad::Var local;   // (windows * persons) x d
  ad::Var global;  // windows x d
};

EncodedBatchVars encode_batch_vars(const nn::Ctx& ctx, ad::Var raw_tokens,
                                   const TokenLayout& layout, const EncoderConfig& cfg,
                                   int root_index);

// Single-state operations.
Eigen::RowVectorXd encode_local(const MdpState& state, int agent, const EncoderConfig& cfg,
                                const nn::ParamSet& params);
Eigen::RowVectorXd encode_global(const MdpState& state, const EncoderConfig& cfg,
                                 const nn::ParamSet& params);
StateFeatures encode_state(const MdpState& state, const EncoderConfig& cfg,
                           const nn::ParamSet& params);

}  // namespace hiersoc
