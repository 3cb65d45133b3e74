#include "getcap/encoder.hpp"

#include <cmath>

#include "getcap/errors.hpp"

namespace getcap {

std::string to_string(IntraLayer mode) {
  switch (mode) {
    case IntraLayer::kPlain: return "plain";
    case IntraLayer::kG0: return "g0";
    case IntraLayer::kGea: return "gea";
  }
  return "?";
}

std::string to_string(Fusion mode) {
  switch (mode) {
    case Fusion::kNone: return "none";
    case Fusion::kAverage: return "average";
    case Fusion::kAttention: return "attention";
    case Fusion::kLstm: return "lstm";
  }
  return "?";
}

IntraLayer parse_intra_layer(const std::string& text) {
  if (text == "plain") return IntraLayer::kPlain;
  if (text == "g0") return IntraLayer::kG0;
  if (text == "gea") return IntraLayer::kGea;
  throw ConfigError("unknown intra-layer mode '" + text + "' (expected plain, g0 or gea)");
}

Fusion parse_fusion(const std::string& text) {
  if (text == "none") return Fusion::kNone;
  if (text == "average") return Fusion::kAverage;
  if (text == "attention") return Fusion::kAttention;
  if (text == "lstm") return Fusion::kLstm;
  throw ConfigError("unknown fusion mode '" + text +
                    "' (expected none, average, attention or lstm)");
}

std::vector<std::string> EncoderConfig::violations() const {
  std::vector<std::string> out;
  if (layers < 1) out.push_back("encoder layers must be >= 1");
  if (width < 2) out.push_back("model width must be >= 2");
  if (heads < 1 || (heads > 0 && width % heads != 0)) {
    out.push_back("model width " + std::to_string(width) + " must be divisible by heads " +
                  std::to_string(heads));
  }
  if (ff_width < 1) out.push_back("feed-forward width must be >= 1");
  if (!(keep_prob > 0.0 && keep_prob <= 1.0)) out.push_back("keep_prob must lie in (0, 1]");
  if (intra != IntraLayer::kGea && fusion != Fusion::kNone) {
    out.push_back("fusion '" + to_string(fusion) + "' needs intra_layer=gea (got " +
                  to_string(intra) + ")");
  }
  return out;
}

void EncoderConfig::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::string msg = "invalid encoder config:";
  for (const auto& s : v) msg += "\n  - " + s;
  throw ConfigError(msg);
}

EncoderLayerParams EncoderLayerParams::init(const EncoderConfig& cfg, Rng& rng) {
  EncoderLayerParams p;
  p.attention = MultiHeadParams::init(cfg.width, cfg.heads, rng);
  p.ffn = FeedForward::init(cfg.width, cfg.ff_width, rng);
  p.attention_norm = LayerNormParams::init(cfg.width);
  p.ffn_norm = LayerNormParams::init(cfg.width);
  return p;
}

void EncoderLayerParams::collect(const std::string& prefix, ParamList& out) const {
  attention.collect(prefix + ".attn", out);
  attention_norm.collect(prefix + ".attn_norm", out);
  ffn.collect(prefix + ".ffn", out);
  ffn_norm.collect(prefix + ".ffn_norm", out);
}

LstmFusionParams LstmFusionParams::init(std::size_t width, Rng& rng) {
  const double stddev = 1.0 / std::sqrt(static_cast<double>(width));
  auto gate = [&] {
    return Gate{Tensor::randn({width, width}, rng, stddev, true),
                Tensor::randn({width, width}, rng, stddev, true),
                Tensor::zeros({1, width}, true)};
  };
  LstmFusionParams p;
  p.input_gate = gate();
  p.forget_gate = gate();
  p.output_gate = gate();
  p.candidate = gate();
  return p;
}

LstmFusionParams LstmFusionParams::zeros(std::size_t width) {
  auto gate = [&] {
    return Gate{Tensor::zeros({width, width}, true), Tensor::zeros({width, width}, true),
                Tensor::zeros({1, width}, true)};
  };
  return {gate(), gate(), gate(), gate()};
}

void LstmFusionParams::collect(const std::string& prefix, ParamList& out) const {
  auto put = [&](const std::string& name, const Gate& g) {
    out.push_back({prefix + "." + name + ".input", g.input});
    out.push_back({prefix + "." + name + ".recurrent", g.recurrent});
    out.push_back({prefix + "." + name + ".bias", g.bias});
  };
  put("input_gate", input_gate);
  put("forget_gate", forget_gate);
  put("output_gate", output_gate);
  put("candidate", candidate);
}

LstmState lstm_cell(const Tensor& x, const LstmState& prev, const LstmFusionParams& p) {
  auto pre = [&](const LstmFusionParams::Gate& g) {
    return add(add(matmul(x, g.input), matmul(prev.hidden, g.recurrent)), g.bias);
  };
  Tensor i = sigmoid(pre(p.input_gate));
  Tensor f = sigmoid(pre(p.forget_gate));
  Tensor o = sigmoid(pre(p.output_gate));
  Tensor c_hat = tanh(pre(p.candidate));
  Tensor c = add(mul(f, prev.cell), mul(i, c_hat));
  return {mul(o, tanh(c)), c};
}

EncoderParams EncoderParams::init(std::size_t d_in, const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  EncoderParams p;
  p.input_projection = Linear::init(d_in, cfg.width, rng);
  for (std::size_t l = 0; l < cfg.layers; ++l) p.layers.push_back(EncoderLayerParams::init(cfg, rng));
  if (cfg.fusion == Fusion::kLstm) p.lstm = LstmFusionParams::init(cfg.width, rng);
  if (cfg.fusion == Fusion::kAttention) {
    p.fusion_query = Tensor::randn({1, cfg.width}, rng,
                                   1.0 / std::sqrt(static_cast<double>(cfg.width)), true);
  }
  return p;
}

void EncoderParams::collect(const std::string& prefix, ParamList& out) const {
  input_projection.collect(prefix + ".input_proj", out);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].collect(prefix + ".layer" + std::to_string(l), out);
  }
  if (lstm) lstm->collect(prefix + ".lstm", out);
  if (fusion_query) out.push_back({prefix + ".fusion_query", *fusion_query});
}

Tensor mean_pool_global(const Tensor& features) {
  if (features.rank() != 2) {
    throw DimensionError("mean_pool_global: expected N x d_in features, got " +
                         shape_str(features.shape()));
  }
  return mean(features, 0);
}

ProjectedInputs project_inputs(const Tensor& features, const Tensor& global,
                               const Linear& projection) {
  const std::size_t d_in = projection.weight.rows();
  if (features.rank() != 2 || features.cols() != d_in || global.numel() != d_in) {
    throw DimensionError("project_inputs: features " + shape_str(features.shape()) +
                         " / global " + shape_str(global.shape()) +
                         " do not match projection input width " + std::to_string(d_in));
  }
  return {projection(features), projection(global)};
}

Tensor gea_layer(const Tensor& input, const EncoderLayerParams& params, double keep_prob,
                 ForwardContext& ctx) {
  Tensor attended = apply_dropout(multi_head(input, input, input, params.attention), keep_prob, ctx);
  Tensor mid = params.attention_norm(add(input, attended));
  Tensor ff = apply_dropout(params.ffn(mid), keep_prob, ctx);
  return params.ffn_norm(add(mid, ff));
}

Tensor fuse_layers(const Tensor& layer_globals, Fusion mode, const EncoderParams& params) {
  if (!layer_globals.valid() || layer_globals.rank() != 2 || layer_globals.rows() < 1) {
    throw ContractError("fuse_layers: expected an L x d matrix of layer globals");
  }
  const std::size_t L = layer_globals.rows();
  switch (mode) {
    case Fusion::kNone:
      return row_of(layer_globals, L - 1);
    case Fusion::kAverage:
      return mean(layer_globals, 0);
    case Fusion::kAttention:
      if (!params.fusion_query) throw ConfigError("attention fusion needs a learned query");
      return scaled_dot_product(*params.fusion_query, layer_globals, layer_globals);
    case Fusion::kLstm: {
      if (!params.lstm) throw ConfigError("lstm fusion needs LSTM parameters");
      const std::size_t d = layer_globals.cols();
      LstmState state{Tensor::zeros({1, d}), Tensor::zeros({1, d})};
      for (std::size_t i = 0; i < L; ++i) state = lstm_cell(row_of(layer_globals, i), state, *params.lstm);
      return state.hidden;
    }
  }
  throw ConfigError("fuse_layers: unknown fusion mode");
}

EncodedImage encode(const Tensor& features, const EncoderConfig& cfg,
                    const EncoderParams& params, ForwardContext& ctx) {
  if (features.rank() != 2 || features.rows() < 1) {
    throw DataError("encode: expected N x d_in features with N >= 1");
  }
  const std::size_t n = features.rows();
  ProjectedInputs in = project_inputs(features, mean_pool_global(features), params.input_projection);

  EncodedImage out;
  if (cfg.intra == IntraLayer::kPlain) {
    Tensor o = in.regions;
    for (const auto& layer : params.layers) o = gea_layer(o, layer, cfg.keep_prob, ctx);
    out.regions = o;
    out.global = in.global;
    return out;
  }

  Tensor o = concat({in.regions, in.global}, 0);
  std::vector<Tensor> globals;
  for (const auto& layer : params.layers) {
    o = gea_layer(o, layer, cfg.keep_prob, ctx);
    globals.push_back(row_of(o, n));
  }
  out.regions = slice(o, 0, 0, n);
  out.layer_globals = globals.size() == 1 ? globals.front() : concat(globals, 0);
  out.global = cfg.intra == IntraLayer::kG0 ? in.global
                                            : fuse_layers(out.layer_globals, cfg.fusion, params);
  return out;
}

}  // namespace getcap
