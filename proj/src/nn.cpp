#include "hiersoc/nn.hpp"

#include <cmath>
#include <random>

#include "hiersoc/errors.hpp"

namespace hiersoc::nn {

Parameter& ParamSet::create(const std::string& name, int rows, int cols) {
  if (by_name_.count(name)) throw ConfigError("parameter already exists: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = Mat::Zero(rows, cols);
  p->grad = Mat::Zero(rows, cols);
  Parameter* raw = p.get();
  order_.push_back(std::move(p));
  by_name_[name] = raw;
  return *raw;
}

Parameter& ParamSet::at(std::string_view name) {
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) throw ConfigError("unknown parameter: " + std::string(name));
  return *it->second;
}

const Parameter& ParamSet::at(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) throw ConfigError("unknown parameter: " + std::string(name));
  return *it->second;
}

bool ParamSet::contains(std::string_view name) const {
  return by_name_.count(std::string(name)) > 0;
}

std::vector<Parameter*> ParamSet::all() {
  std::vector<Parameter*> out;
  out.reserve(order_.size());
  for (auto& p : order_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParamSet::all() const {
  std::vector<const Parameter*> out;
  out.reserve(order_.size());
  for (auto& p : order_) out.push_back(p.get());
  return out;
}

std::size_t ParamSet::total_count() const {
  std::size_t n = 0;
  for (auto& p : order_) n += p->count();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& p : order_) p->zero_grad();
}

void ParamSet::init_truncated_normal(std::uint64_t seed, double sigma) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, sigma);
  for (auto& p : order_) {
    const bool is_weight = p->name.ends_with(".w") || p->name.ends_with(".weight") ||
                           p->name.ends_with(".query") || p->name.ends_with(".embed");
    if (p->name.ends_with(".g")) {
      p->value.setOnes();  // layer-norm gains
      continue;
    }
    if (!is_weight) {
      p->value.setZero();  // biases and norm offsets
      continue;
    }
    for (int r = 0; r < p->value.rows(); ++r) {
      for (int c = 0; c < p->value.cols(); ++c) {
        double z = dist(rng);
        while (std::abs(z) > 2.0 * sigma) z = dist(rng);
        p->value(r, c) = z;
      }
    }
  }
}

void AdamState::attach(const std::vector<Parameter*>& params) {
  params_ = params;
  m_.clear();
  v_.clear();
  for (Parameter* p : params_) {
    m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
  }
  t_ = 0;
}

double AdamState::step(const AdamConfig& cfg) {
  double sq = 0.0;
  for (Parameter* p : params_) sq += p->grad.squaredNorm();
  const double norm = std::sqrt(sq);
  double factor = 1.0;
  if (cfg.grad_clip > 0.0 && norm > cfg.grad_clip) factor = cfg.grad_clip / norm;

  ++t_;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    Mat g = p.grad * factor;
    m_[i] = cfg.beta1 * m_[i] + (1.0 - cfg.beta1) * g;
    v_[i] = cfg.beta2 * v_[i] + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    Mat mhat = m_[i] / bc1;
    Mat denom = (v_[i] / bc2).cwiseSqrt();
    denom.array() += cfg.eps;
    p.value -= cfg.learning_rate * mhat.cwiseQuotient(denom);
  }
  return norm;
}

void TransformerDims::validate() const {
  if (layers < 1) throw ConfigError("transformer: layers must be >= 1");
  if (heads < 1) throw ConfigError("transformer: heads must be >= 1");
  if (model_dim < 1) throw ConfigError("transformer: model_dim must be >= 1");
  if (model_dim % heads != 0) throw ConfigError("transformer: model_dim must be divisible by heads");
}

ad::Var Ctx::p(std::string_view name) const {
  Parameter& par = const_cast<ParamSet*>(params)->at(name);
  return track ? tape.param(par) : tape.frozen(par);
}

void add_linear_params(ParamSet& ps, const std::string& prefix, int in, int out) {
  ps.create(prefix + ".w", in, out);
  ps.create(prefix + ".b", 1, out);
}

void add_layer_norm_params(ParamSet& ps, const std::string& prefix, int dim) {
  ps.create(prefix + ".g", 1, dim);
  ps.create(prefix + ".o", 1, dim);
}

namespace {

void add_attention_params(ParamSet& ps, const std::string& prefix, int d) {
  add_linear_params(ps, prefix + ".q", d, d);
  add_linear_params(ps, prefix + ".k", d, d);
  add_linear_params(ps, prefix + ".v", d, d);
  add_linear_params(ps, prefix + ".out", d, d);
}

void add_ffn_params(ParamSet& ps, const std::string& prefix, int d, int f) {
  add_linear_params(ps, prefix + ".in", d, f);
  add_linear_params(ps, prefix + ".out", f, d);
}

ad::Var ffn_fw(const Ctx& ctx, ad::Var x, const std::string& prefix) {
  ad::Var h = linear_fw(ctx, x, prefix + ".in");
  return linear_fw(ctx, gelu(h), prefix + ".out");
}

ad::Var self_attention_fw(const Ctx& ctx, ad::Var x, int seg_len, const std::string& prefix,
                          int heads) {
  ad::Var q = linear_fw(ctx, x, prefix + ".q");
  ad::Var k = linear_fw(ctx, x, prefix + ".k");
  ad::Var v = linear_fw(ctx, x, prefix + ".v");
  ad::Var attended = ad::attention(q, k, v, seg_len, seg_len, heads);
  return linear_fw(ctx, attended, prefix + ".out");
}

ad::Var cross_attention_fw(const Ctx& ctx, ad::Var x, int q_block, ad::Var memory, int mem_block,
                           const std::string& prefix, int heads) {
  ad::Var q = linear_fw(ctx, x, prefix + ".q");
  ad::Var k = linear_fw(ctx, memory, prefix + ".k");
  ad::Var v = linear_fw(ctx, memory, prefix + ".v");
  ad::Var attended = ad::attention(q, k, v, q_block, mem_block, heads);
  return linear_fw(ctx, attended, prefix + ".out");
}

}  // namespace

void add_encoder_params(ParamSet& ps, const std::string& prefix, int token_dim,
                        const TransformerDims& dims) {
  dims.validate();
  add_linear_params(ps, prefix + ".embed", token_dim, dims.model_dim);
  for (int l = 0; l < dims.layers; ++l) {
    const std::string lp = prefix + ".layer" + std::to_string(l);
    add_layer_norm_params(ps, lp + ".ln1", dims.model_dim);
    add_attention_params(ps, lp + ".attn", dims.model_dim);
    add_layer_norm_params(ps, lp + ".ln2", dims.model_dim);
    add_ffn_params(ps, lp + ".ffn", dims.model_dim, dims.ffn());
  }
  add_layer_norm_params(ps, prefix + ".ln_out", dims.model_dim);
}

void add_decoder_params(ParamSet& ps, const std::string& prefix, const TransformerDims& dims) {
  dims.validate();
  for (int l = 0; l < dims.layers; ++l) {
    const std::string lp = prefix + ".layer" + std::to_string(l);
    add_layer_norm_params(ps, lp + ".ln1", dims.model_dim);
    add_attention_params(ps, lp + ".self", dims.model_dim);
    add_layer_norm_params(ps, lp + ".ln2", dims.model_dim);
    add_attention_params(ps, lp + ".cross", dims.model_dim);
    add_layer_norm_params(ps, lp + ".ln3", dims.model_dim);
    add_ffn_params(ps, lp + ".ffn", dims.model_dim, dims.ffn());
  }
  add_layer_norm_params(ps, prefix + ".ln_out", dims.model_dim);
}

ad::Var linear_fw(const Ctx& ctx, ad::Var x, const std::string& prefix) {
  return ad::linear(x, ctx.p(prefix + ".w"), ctx.p(prefix + ".b"));
}

ad::Var layer_norm_fw(const Ctx& ctx, ad::Var x, const std::string& prefix) {
  return ad::layer_norm(x, ctx.p(prefix + ".g"), ctx.p(prefix + ".o"));
}

ad::Var encoder_fw(const Ctx& ctx, ad::Var tokens, int seg_len, const std::string& prefix,
                   const TransformerDims& dims) {
  ad::Var h = tokens;
  for (int l = 0; l < dims.layers; ++l) {
    const std::string lp = prefix + ".layer" + std::to_string(l);
    ad::Var a = self_attention_fw(ctx, layer_norm_fw(ctx, h, lp + ".ln1"), seg_len, lp + ".attn",
                                  dims.heads);
    h = ad::add(h, a);
    ad::Var f = ffn_fw(ctx, layer_norm_fw(ctx, h, lp + ".ln2"), lp + ".ffn");
    h = ad::add(h, f);
  }
  return layer_norm_fw(ctx, h, prefix + ".ln_out");
}

ad::Var decoder_fw(const Ctx& ctx, ad::Var queries, int q_block, ad::Var memory, int mem_block,
                   const std::string& prefix, const TransformerDims& dims) {
  ad::Var h = queries;
  for (int l = 0; l < dims.layers; ++l) {
    const std::string lp = prefix + ".layer" + std::to_string(l);
    ad::Var a = self_attention_fw(ctx, layer_norm_fw(ctx, h, lp + ".ln1"), q_block, lp + ".self",
                                  dims.heads);
    h = ad::add(h, a);
    ad::Var c = cross_attention_fw(ctx, layer_norm_fw(ctx, h, lp + ".ln2"), q_block, memory,
                                   mem_block, lp + ".cross", dims.heads);
    h = ad::add(h, c);
    ad::Var f = ffn_fw(ctx, layer_norm_fw(ctx, h, lp + ".ln3"), lp + ".ffn");
    h = ad::add(h, f);
  }
  return layer_norm_fw(ctx, h, prefix + ".ln_out");
}

Mat sinusoidal_positions(int positions, int dim) {
  Mat pe = Mat::Zero(positions, dim);
  for (int pos = 0; pos < positions; ++pos) {
    for (int i = 0; i < dim; i += 2) {
      const double angle = pos / std::pow(10000.0, static_cast<double>(i) / dim);
      pe(pos, i) = std::sin(angle);
      if (i + 1 < dim) pe(pos, i + 1) = std::cos(angle);
    }
  }
  return pe;
}

}  // namespace hiersoc::nn
