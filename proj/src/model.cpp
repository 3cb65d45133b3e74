#include "getcap/model.hpp"

#include <algorithm>

#include "getcap/errors.hpp"

namespace getcap {

EncoderConfig ModelConfig::encoder() const {
  return {layers, width, heads, ff_width, keep_prob, intra, fusion};
}

DecoderConfig ModelConfig::decoder() const {
  return {layers, width, heads, ff_width, keep_prob, controller, max_len, vocab_size};
}

std::vector<std::string> ModelConfig::violations() const {
  std::vector<std::string> out;
  if (d_in < 1) out.push_back("feature width d_in must be >= 1");
  for (auto& v : encoder().violations()) out.push_back(std::move(v));
  for (auto& v : decoder().violations()) {
    if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(std::move(v));
  }
  return out;
}

void ModelConfig::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::string msg = "invalid model config:";
  for (const auto& s : v) msg += "\n  - " + s;
  throw ConfigError(msg);
}

CaptionModel::CaptionModel(ModelConfig cfg, EncoderParams encoder, DecoderParams decoder)
    : cfg_(std::move(cfg)), encoder_(std::move(encoder)), decoder_(std::move(decoder)) {}

CaptionModel CaptionModel::init(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  EncoderParams enc = EncoderParams::init(cfg.d_in, cfg.encoder(), rng);
  DecoderParams dec = DecoderParams::init(cfg.decoder(), rng);
  return CaptionModel(cfg, std::move(enc), std::move(dec));
}

ParamList CaptionModel::parameters() const {
  ParamList out;
  encoder_.collect("encoder", out);
  decoder_.collect("decoder", out);
  return out;
}

EncodedImage CaptionModel::encode(const Tensor& features, ForwardContext& ctx) const {
  if (features.rank() != 2 || features.cols() != cfg_.d_in) {
    throw DimensionError("model expects N x " + std::to_string(cfg_.d_in) + " features, got " +
                         shape_str(features.shape()));
  }
  return getcap::encode(features, cfg_.encoder(), encoder_, ctx);
}

Tensor CaptionModel::logits(std::span<const int> prefix, const EncodedImage& encoded,
                            ForwardContext& ctx) const {
  return decode_logits(prefix, encoded, decoder_, cfg_.decoder(), ctx);
}

CaptionModel CaptionModel::clone() const {
  Rng scratch(0);
  CaptionModel copy = init(cfg_, scratch);
  const ParamList src = parameters();
  ParamList dst = copy.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    std::copy(src[i].tensor.data().begin(), src[i].tensor.data().end(),
              dst[i].tensor.mutable_data().begin());
  }
  return copy;
}

}  // namespace getcap
