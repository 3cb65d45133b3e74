#include "getcap/decoder.hpp"

#include <cmath>

#include "getcap/errors.hpp"
#include "getcap/tokens.hpp"

namespace getcap {

std::string to_string(Controller c) {
  switch (c) {
    case Controller::kNone: return "none";
    case Controller::kGac: return "gac";
    case Controller::kMac: return "mac";
  }
  return "?";
}

Controller parse_controller(const std::string& text) {
  if (text == "none") return Controller::kNone;
  if (text == "gac") return Controller::kGac;
  if (text == "mac") return Controller::kMac;
  throw ConfigError("unknown controller '" + text + "' (expected none, gac or mac)");
}

std::vector<std::string> DecoderConfig::violations() const {
  std::vector<std::string> out;
  if (layers < 1) out.push_back("decoder layers must be >= 1");
  if (heads < 1 || (heads > 0 && width % heads != 0)) {
    out.push_back("model width " + std::to_string(width) + " must be divisible by heads " +
                  std::to_string(heads));
  }
  if (ff_width < 1) out.push_back("feed-forward width must be >= 1");
  if (!(keep_prob > 0.0 && keep_prob <= 1.0)) out.push_back("keep_prob must lie in (0, 1]");
  if (max_len < 2) out.push_back("max_len must be >= 2");
  if (vocab_size <= static_cast<std::size_t>(kNumReserved)) {
    out.push_back("vocabulary must hold more than the " + std::to_string(kNumReserved) +
                  " reserved tokens");
  }
  return out;
}

void DecoderConfig::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::string msg = "invalid decoder config:";
  for (const auto& s : v) msg += "\n  - " + s;
  throw ConfigError(msg);
}

DecoderLayerParams DecoderLayerParams::init(const DecoderConfig& cfg, Rng& rng) {
  DecoderLayerParams p;
  p.self_attention = MultiHeadParams::init(cfg.width, cfg.heads, rng);
  p.cross_attention = MultiHeadParams::init(cfg.width, cfg.heads, rng);
  p.ffn = FeedForward::init(cfg.width, cfg.ff_width, rng);
  p.self_norm = LayerNormParams::init(cfg.width);
  p.cross_norm = LayerNormParams::init(cfg.width);
  p.ffn_norm = LayerNormParams::init(cfg.width);
  return p;
}

void DecoderLayerParams::collect(const std::string& prefix, ParamList& out) const {
  self_attention.collect(prefix + ".self_attn", out);
  self_norm.collect(prefix + ".self_norm", out);
  cross_attention.collect(prefix + ".cross_attn", out);
  cross_norm.collect(prefix + ".cross_norm", out);
  ffn.collect(prefix + ".ffn", out);
  ffn_norm.collect(prefix + ".ffn_norm", out);
}

Tensor sinusoidal_positions(std::size_t max_len, std::size_t width) {
  std::vector<double> pe(max_len * width);
  for (std::size_t pos = 0; pos < max_len; ++pos) {
    for (std::size_t i = 0; i < width; ++i) {
      const double expo = static_cast<double>(2 * (i / 2)) / static_cast<double>(width);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, expo);
      pe[pos * width + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor({max_len, width}, std::move(pe));
}

TokenEmbedding TokenEmbedding::init(std::size_t vocab, std::size_t width, std::size_t max_len,
                                    Rng& rng) {
  return {Tensor::randn({vocab, width}, rng, 1.0 / std::sqrt(static_cast<double>(width)), true),
          sinusoidal_positions(max_len, width)};
}

Tensor TokenEmbedding::operator()(std::span<const int> tokens) const {
  if (tokens.size() > positional.rows()) {
    throw ContractError("token prefix of length " + std::to_string(tokens.size()) +
                        " exceeds max length " + std::to_string(positional.rows()));
  }
  return add(embedding_lookup(table, tokens), slice(positional, 0, 0, tokens.size()));
}

DecoderParams DecoderParams::init(const DecoderConfig& cfg, Rng& rng) {
  cfg.validate();
  DecoderParams p;
  p.embedding = TokenEmbedding::init(cfg.vocab_size, cfg.width, cfg.max_len, rng);
  for (std::size_t l = 0; l < cfg.layers; ++l) p.layers.push_back(DecoderLayerParams::init(cfg, rng));
  p.head.weight = Tensor::randn({cfg.vocab_size, cfg.width}, rng,
                                1.0 / std::sqrt(static_cast<double>(cfg.width)), true);
  return p;
}

void DecoderParams::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".embedding", embedding.table});
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].collect(prefix + ".layer" + std::to_string(l), out);
  }
  out.push_back({prefix + ".output_head", head.weight});
}

GacResult gac_cross(const Tensor& queries, const Tensor& regions, const Tensor& global,
                    const MultiHeadParams& params) {
  if (global.shape() != Shape{1, queries.cols()}) {
    throw DimensionError("gac_cross: global " + shape_str(global.shape()) +
                         " does not match query width " + std::to_string(queries.cols()));
  }
  Tensor gate = sigmoid(matmul(queries, transpose(global)));
  Tensor attended = multi_head(queries, regions, regions, params);
  return {add(attended, matmul(gate, global)), gate};
}

Tensor mac_cross(const Tensor& queries, const Tensor& regions, const Tensor& global,
                 const MultiHeadParams& params) {
  Tensor stacked = concat({regions, global}, 0);
  return multi_head(queries, stacked, stacked, params);
}

Tensor controller_cross(Controller c, const Tensor& queries, const Tensor& regions,
                        const Tensor& global, const MultiHeadParams& params) {
  switch (c) {
    case Controller::kNone: return multi_head(queries, regions, regions, params);
    case Controller::kGac: return gac_cross(queries, regions, global, params).output;
    case Controller::kMac: return mac_cross(queries, regions, global, params);
  }
  throw ConfigError("unknown controller");
}

Tensor decoder_layer(const Tensor& hidden, const EncodedImage& encoded,
                     const DecoderLayerParams& params, const DecoderConfig& cfg,
                     ForwardContext& ctx, DecoderLayerTrace* trace) {
  const Mask mask = causal_mask(hidden.rows());
  Tensor self = multi_head(hidden, hidden, hidden, params.self_attention, &mask);
  Tensor a = params.self_norm(add(hidden, apply_dropout(self, cfg.keep_prob, ctx)));

  Tensor cross;
  Tensor gate;
  if (cfg.controller == Controller::kGac) {
    GacResult r = gac_cross(a, encoded.regions, encoded.global, params.cross_attention);
    cross = r.output;
    gate = r.gate;
  } else {
    cross = controller_cross(cfg.controller, a, encoded.regions, encoded.global,
                             params.cross_attention);
  }
  Tensor e = params.cross_norm(add(a, apply_dropout(cross, cfg.keep_prob, ctx)));
  Tensor out = params.ffn_norm(add(e, apply_dropout(params.ffn(e), cfg.keep_prob, ctx)));
  if (trace != nullptr) *trace = {a, e, gate};
  return out;
}

Tensor decode_logits(std::span<const int> tokens, const EncodedImage& encoded,
                     const DecoderParams& params, const DecoderConfig& cfg, ForwardContext& ctx,
                     std::vector<DecoderLayerTrace>* traces) {
  if (tokens.empty() || tokens[0] != kBos) {
    throw ContractError("decode_logits: prefix must start with BOS");
  }
  if (tokens.size() > cfg.max_len) {
    throw ContractError("decode_logits: prefix length " + std::to_string(tokens.size()) +
                        " exceeds max_len " + std::to_string(cfg.max_len));
  }
  Tensor h = params.embedding(tokens);
  if (traces != nullptr) traces->clear();
  for (const auto& layer : params.layers) {
    DecoderLayerTrace tr;
    h = decoder_layer(h, encoded, layer, cfg, ctx, traces ? &tr : nullptr);
    if (traces != nullptr) traces->push_back(tr);
  }
  return matmul(h, transpose(params.head.weight));
}

}  // namespace getcap
