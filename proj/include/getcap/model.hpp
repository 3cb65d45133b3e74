#pragma once

#include <span>
#include <string>
#include <vector>

#include "getcap/decoder.hpp"
#include "getcap/encoder.hpp"

namespace getcap {

// Hyperparameters of a full captioning model. Encoder and decoder share width,
// head count and depth.
struct ModelConfig {
  std::size_t d_in = 2048;
  std::size_t width = 512;
  std::size_t heads = 8;
  std::size_t layers = 3;
  std::size_t ff_width = 2048;
  double keep_prob = 0.9;
  IntraLayer intra = IntraLayer::kGea;
  Fusion fusion = Fusion::kLstm;
  Controller controller = Controller::kMac;
  std::size_t max_len = 20;
  std::size_t vocab_size = 0;

  EncoderConfig encoder() const;
  DecoderConfig decoder() const;
  std::vector<std::string> violations() const;
  void validate() const;
};

class CaptionModel {
 public:
  CaptionModel() = default;
  CaptionModel(ModelConfig cfg, EncoderParams encoder, DecoderParams decoder);

  static CaptionModel init(const ModelConfig& cfg, Rng& rng);

  const ModelConfig& config() const { return cfg_; }
  EncoderParams& encoder_params() { return encoder_; }
  const EncoderParams& encoder_params() const { return encoder_; }
  DecoderParams& decoder_params() { return decoder_; }
  const DecoderParams& decoder_params() const { return decoder_; }

  // Every learnable tensor with a stable dotted name, in a fixed order.
  ParamList parameters() const;

  EncodedImage encode(const Tensor& features, ForwardContext& ctx) const;
  Tensor logits(std::span<const int> prefix, const EncodedImage& encoded, ForwardContext& ctx) const;

  // Deep copy of all parameter values into an independent model.
  CaptionModel clone() const;

 private:
  ModelConfig cfg_;
  EncoderParams encoder_;
  DecoderParams decoder_;
};

}  // namespace getcap
