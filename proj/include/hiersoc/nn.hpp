#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hiersoc/ad.hpp"

namespace hiersoc::nn {

using Mat = Eigen::MatrixXd;

struct Parameter {
  std::string name;
  Mat value;
  Mat grad;

  std::size_t count() const { return static_cast<std::size_t>(value.size()); }
  void zero_grad() { grad.setZero(); }
};

// Named parameter container. Creation order is preserved so seeded
// initialization and serialization are deterministic.
class ParamSet {
 public:
  Parameter& create(const std::string& name, int rows, int cols);
  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::size_t total_count() const;
  void zero_grad();

  // Truncated normal (|z| <= 2 sigma) for weight matrices; zeros for rows == 1
  // entries named *.b / *.bias-style vectors are handled by the builders instead.
  void init_truncated_normal(std::uint64_t seed, double sigma = 0.02);

 private:
  std::vector<std::unique_ptr<Parameter>> order_;
  std::unordered_map<std::string, Parameter*> by_name_;
};

// Adam with global gradient-norm clipping applied to the whole group first.
struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 1.0;  // <= 0 disables clipping
};

class AdamState {
 public:
  void attach(const std::vector<Parameter*>& params);
  // Returns the pre-clip global gradient norm.
  double step(const AdamConfig& cfg);
  std::int64_t steps_taken() const { return t_; }

  // Exposed for checkpointing.
  std::vector<Parameter*>& params() { return params_; }
  std::vector<Mat>& moments_m() { return m_; }
  std::vector<Mat>& moments_v() { return v_; }
  void set_steps_taken(std::int64_t t) { t_ = t; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Mat> m_;
  std::vector<Mat> v_;
  std::int64_t t_ = 0;
};

// Shared transformer dimensions.
struct TransformerDims {
  int layers = 3;
  int heads = 8;
  int model_dim = 128;
  int ffn_dim = 0;  // 0 -> 4 * model_dim

  int ffn() const { return ffn_dim > 0 ? ffn_dim : 4 * model_dim; }
  void validate() const;
};

// Forward-pass context: which tape, which parameters, and whether gradients
// should flow into them.
struct Ctx {
  ad::Tape& tape;
  const ParamSet* params = nullptr;
  bool track = true;

  ad::Var p(std::string_view name) const;
};

// Parameter builders; names are dotted under `prefix`.
void add_linear_params(ParamSet& ps, const std::string& prefix, int in, int out);
void add_layer_norm_params(ParamSet& ps, const std::string& prefix, int dim);
void add_encoder_params(ParamSet& ps, const std::string& prefix, int token_dim,
                        const TransformerDims& dims);
void add_decoder_params(ParamSet& ps, const std::string& prefix, const TransformerDims& dims);

ad::Var linear_fw(const Ctx& ctx, ad::Var x, const std::string& prefix);
ad::Var layer_norm_fw(const Ctx& ctx, ad::Var x, const std::string& prefix);

// Pre-LN transformer encoder over uniform segments of `seg_len` rows; returns
// the [N x d] token states after the final layer norm.
ad::Var encoder_fw(const Ctx& ctx, ad::Var tokens, int seg_len, const std::string& prefix,
                   const TransformerDims& dims);

// Pre-LN transformer decoder: self-attention over query segments plus
// cross-attention to memory segments, one memory segment per query segment.
ad::Var decoder_fw(const Ctx& ctx, ad::Var queries, int q_block, ad::Var memory, int mem_block,
                   const std::string& prefix, const TransformerDims& dims);

// Sinusoidal position table [positions x dim].
Mat sinusoidal_positions(int positions, int dim);

}  // namespace hiersoc::nn
