#include "hiersoc/encoders.hpp"

#include <utility>

namespace hiersoc {

void EncoderConfig::validate() const {
  dims().validate();
  if (window_frames < 0) throw ConfigError("encoder: window_frames must be >= 0");
  if (max_persons < 1) throw ConfigError("encoder: max_persons must be >= 1");
  if (!(input_scale > 0.0)) throw ConfigError("encoder: input_scale must be positive");
}

nn::TransformerDims EncoderConfig::dims() const {
  return nn::TransformerDims{layers, heads, model_dim, ffn_dim};
}

ad::Var normalize_tokens(ad::Var raw, const TokenNormSpec& spec) {
  const TokenLayout& L = spec.layout;
  if (raw.rows() != L.rows() || raw.cols() != L.cols())
    throw ShapeError("normalize_tokens: raw token shape does not match layout");
  const int cf = spec.center_frame < 0 ? L.frames - 1 : spec.center_frame;
  if (cf < 0 || cf >= L.frames) throw ShapeError("normalize_tokens: center_frame out of range");
  const int P = L.persons, W = L.frames, J = L.joints, r = spec.root_index;
  const int rc = 3 * r;
  const double s = spec.scale;
  ad::Tape& t = *raw.tape;

  auto row_of = [P, W](int w, int p, int f) { return (w * P + p) * W + f; };

  const Mat& x = raw.value();
  Mat out(x.rows(), x.cols());
  for (int w = 0; w < L.windows; ++w) {
    // centers[p] = own root (local) or mean root over agents (global) at the center frame
    Mat centers(P, 3);
    for (int p = 0; p < P; ++p) centers.row(p) = x.row(row_of(w, p, cf)).segment(rc, 3);
    if (!spec.per_agent_center) {
      Eigen::RowVector3d mean = centers.colwise().mean();
      centers = mean.replicate(P, 1);
    }
    for (int p = 0; p < P; ++p) {
      for (int f = 0; f < W; ++f) {
        const int row = row_of(w, p, f);
        for (int j = 0; j < J; ++j) {
          for (int c = 0; c < 3; ++c) {
            double v;
            if (spec.root_relative && j != r)
              v = x(row, 3 * j + c) - x(row, rc + c);
            else
              v = x(row, 3 * j + c) - centers(p, c);
            out(row, 3 * j + c) = v * s;
          }
        }
      }
    }
  }

  if (!t.node(raw.id).requires_grad) return t.constant(std::move(out));
  ad::Var res = t.make_node(std::move(out), true, {});
  TokenNormSpec sp = spec;
  t.node(res.id).backprop = [&t, raw, res, sp, cf, row_of]() {
    const TokenLayout& L = sp.layout;
    const int P = L.persons, W = L.frames, J = L.joints, r = sp.root_index;
    const int rc = 3 * r;
    const double s = sp.scale;
    const Mat& g = t.node(res.id).grad;
    Mat gr = Mat::Zero(g.rows(), g.cols());
    for (int w = 0; w < L.windows; ++w) {
      Mat center_g = Mat::Zero(P, 3);  // gradient flowing into centers(p, :)
      for (int p = 0; p < P; ++p) {
        for (int f = 0; f < W; ++f) {
          const int row = row_of(w, p, f);
          for (int j = 0; j < J; ++j) {
            for (int c = 0; c < 3; ++c) {
              const double gv = g(row, 3 * j + c) * s;
              gr(row, 3 * j + c) += gv;
              if (sp.root_relative && j != r)
                gr(row, rc + c) -= gv;
              else
                center_g(p, c) += gv;
            }
          }
        }
      }
      if (sp.per_agent_center) {
        for (int p = 0; p < P; ++p)
          gr.row(row_of(w, p, cf)).segment(rc, 3) -= center_g.row(p);
      } else {
        Eigen::RowVector3d total = center_g.colwise().sum() / P;
        for (int p = 0; p < P; ++p)
          gr.row(row_of(w, p, cf)).segment(rc, 3) -= total;
      }
    }
    t.accumulate(raw.id, gr);
  };
  return res;
}

Mat assemble_raw_tokens(const std::vector<const MdpState*>& states, int window_frames) {
  if (states.empty()) throw ShapeError("assemble_raw_tokens: empty state batch");
  const MultiPersonClip& first = states.front()->clip_prefix;
  const int P = first.persons();
  const int j3 = first.joints() * 3;
  const int W = window_frames > 0 ? window_frames : first.frames();
  Mat raw(static_cast<int>(states.size()) * P * W, j3);
  int row = 0;
  for (const MdpState* st : states) {
    const MultiPersonClip& clip = st->clip_prefix;
    if (clip.persons() != P || clip.joints() * 3 != j3)
      throw ShapeError("assemble_raw_tokens: inconsistent batch shapes");
    if (clip.frames() < W) throw ShapeError("assemble_raw_tokens: state shorter than window");
    const int start = clip.frames() - W;
    for (int p = 0; p < P; ++p)
      for (int f = 0; f < W; ++f) raw.row(row++) = clip.flat_frame(p, start + f);
  }
  return raw;
}

void add_encoder_stack_params(nn::ParamSet& ps, const EncoderConfig& cfg, int joints) {
  cfg.validate();
  nn::add_encoder_params(ps, "enc_local", 3 * joints, cfg.dims());
  nn::add_encoder_params(ps, "enc_global", 3 * joints, cfg.dims());
  if (cfg.use_person_identity)
    ps.create("enc_global.identity.embed", cfg.max_persons, cfg.model_dim);
}

namespace {

ad::Var position_codes(ad::Tape& t, const TokenLayout& L, int dim) {
  Mat pe = nn::sinusoidal_positions(L.frames, dim);
  Mat tiled(L.rows(), dim);
  for (int i = 0; i < L.windows * L.persons; ++i) tiled.middleRows(i * L.frames, L.frames) = pe;
  return t.constant(std::move(tiled));
}

}  // namespace

EncodedBatchVars encode_batch_vars(const nn::Ctx& ctx, ad::Var raw_tokens,
                                   const TokenLayout& layout, const EncoderConfig& cfg,
                                   int root_index) {
  cfg.validate();
  if (layout.persons > cfg.max_persons && cfg.use_person_identity)
    throw ShapeError("encode: more agents than identity slots");

  TokenNormSpec local_spec{layout, root_index, -1, /*per_agent_center=*/true,
                           cfg.root_relative_inputs, cfg.input_scale};
  TokenNormSpec global_spec{layout, root_index, -1, /*per_agent_center=*/false,
                            cfg.root_relative_inputs, cfg.input_scale};

  ad::Var pe = position_codes(ctx.tape, layout, cfg.model_dim);

  ad::Var local_tok = normalize_tokens(raw_tokens, local_spec);
  ad::Var local_emb = ad::add(nn::linear_fw(ctx, local_tok, "enc_local.embed"), pe);
  ad::Var local_states = nn::encoder_fw(ctx, local_emb, layout.frames, "enc_local", cfg.dims());
  ad::Var local_feat = ad::mean_pool_rows(local_states, layout.frames);

  ad::Var global_tok = normalize_tokens(raw_tokens, global_spec);
  ad::Var global_emb = ad::add(nn::linear_fw(ctx, global_tok, "enc_global.embed"), pe);
  if (cfg.use_person_identity) {
    std::vector<int> slots(layout.rows());
    int i = 0;
    for (int w = 0; w < layout.windows; ++w)
      for (int p = 0; p < layout.persons; ++p)
        for (int f = 0; f < layout.frames; ++f) slots[i++] = p;
    ad::Var ident = ad::gather_rows(ctx.p("enc_global.identity.embed"), std::move(slots));
    global_emb = ad::add(global_emb, ident);
  }
  const int gseg = layout.persons * layout.frames;
  ad::Var global_states = nn::encoder_fw(ctx, global_emb, gseg, "enc_global", cfg.dims());
  ad::Var global_feat = ad::mean_pool_rows(global_states, gseg);

  return EncodedBatchVars{local_feat, global_feat};
}

namespace {

EncodedBatchVars encode_one(ad::Tape& tape, const MdpState& state, const EncoderConfig& cfg,
                            const nn::ParamSet& params, TokenLayout* layout_out) {
  const MultiPersonClip& clip = state.clip_prefix;
  const int W = cfg.window_frames > 0 ? cfg.window_frames : clip.frames();
  if (clip.frames() < W) throw ShapeError("encode: state has fewer frames than the window");
  TokenLayout layout{1, clip.persons(), W, clip.joints()};
  if (layout_out) *layout_out = layout;
  std::vector<const MdpState*> batch{&state};
  ad::Var raw = tape.constant(assemble_raw_tokens(batch, W));
  nn::Ctx ctx{tape, &params, /*track=*/false};
  return encode_batch_vars(ctx, raw, layout, cfg, clip.skeleton().root_index);
}

}  // namespace

Eigen::RowVectorXd encode_local(const MdpState& state, int agent, const EncoderConfig& cfg,
                                const nn::ParamSet& params) {
  if (agent < 0 || agent >= state.clip_prefix.persons())
    throw ShapeError("encode_local: agent index out of range");
  ad::Tape tape;
  EncodedBatchVars enc = encode_one(tape, state, cfg, params, nullptr);
  return enc.local.value().row(agent);
}

Eigen::RowVectorXd encode_global(const MdpState& state, const EncoderConfig& cfg,
                                 const nn::ParamSet& params) {
  ad::Tape tape;
  EncodedBatchVars enc = encode_one(tape, state, cfg, params, nullptr);
  return enc.global.value().row(0);
}

StateFeatures encode_state(const MdpState& state, const EncoderConfig& cfg,
                           const nn::ParamSet& params) {
  ad::Tape tape;
  EncodedBatchVars enc = encode_one(tape, state, cfg, params, nullptr);
  StateFeatures f;
  f.local = enc.local.value();
  f.global = enc.global.value().row(0);
  return f;
}

}  // namespace hiersoc
