#pragma once

#include <span>
#include <string>
#include <vector>

#include "getcap/attention.hpp"
#include "getcap/encoder.hpp"
#include "getcap/layers.hpp"

namespace getcap {

// Cross-attention variant of each decoder layer.
//   none: plain cross-attention over the regions; the global vector is unused.
//   gac:  gated addition of the global vector to the cross-attention output.
//   mac:  cross-attention over the regions with the global vector stacked as
//         one more key/value row.
enum class Controller { kNone, kGac, kMac };

std::string to_string(Controller c);
Controller parse_controller(const std::string& text);

struct DecoderConfig {
  std::size_t layers = 3;
  std::size_t width = 512;
  std::size_t heads = 8;
  std::size_t ff_width = 2048;
  double keep_prob = 0.9;
  Controller controller = Controller::kMac;
  std::size_t max_len = 20;  // longest token prefix the decoder accepts
  std::size_t vocab_size = 0;

  std::vector<std::string> violations() const;
  void validate() const;
};

struct DecoderLayerParams {
  MultiHeadParams self_attention;
  MultiHeadParams cross_attention;
  FeedForward ffn;
  LayerNormParams self_norm;
  LayerNormParams cross_norm;
  LayerNormParams ffn_norm;

  static DecoderLayerParams init(const DecoderConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

// Word embeddings plus a fixed sinusoidal positional table.
struct TokenEmbedding {
  Tensor table;       // |V| x d, learnable
  Tensor positional;  // max_len x d, constant

  static TokenEmbedding init(std::size_t vocab, std::size_t width, std::size_t max_len, Rng& rng);
  Tensor operator()(std::span<const int> tokens) const;
};

Tensor sinusoidal_positions(std::size_t max_len, std::size_t width);

struct OutputHead {
  Tensor weight;  // |V| x d
};

struct DecoderParams {
  TokenEmbedding embedding;
  std::vector<DecoderLayerParams> layers;
  OutputHead head;

  static DecoderParams init(const DecoderConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

struct GacResult {
  Tensor output;  // t x d
  Tensor gate;    // t x 1, alpha per query row
};

GacResult gac_cross(const Tensor& queries, const Tensor& regions, const Tensor& global,
                    const MultiHeadParams& params);
Tensor mac_cross(const Tensor& queries, const Tensor& regions, const Tensor& global,
                 const MultiHeadParams& params);
Tensor controller_cross(Controller c, const Tensor& queries, const Tensor& regions,
                        const Tensor& global, const MultiHeadParams& params);

// Intermediate values of one decoder layer, for inspection in tests.
struct DecoderLayerTrace {
  Tensor self_attended;  // a^{l+1} after residual + norm
  Tensor cross_attended;  // e^{l+1} after residual + norm
  Tensor gate;           // GAC gate, when the controller is gac
};

Tensor decoder_layer(const Tensor& hidden, const EncodedImage& encoded,
                     const DecoderLayerParams& params, const DecoderConfig& cfg,
                     ForwardContext& ctx, DecoderLayerTrace* trace = nullptr);

// t x |V| next-token logits for a prefix starting with BOS.
Tensor decode_logits(std::span<const int> tokens, const EncodedImage& encoded,
                     const DecoderParams& params, const DecoderConfig& cfg, ForwardContext& ctx,
                     std::vector<DecoderLayerTrace>* traces = nullptr);

}  // namespace getcap
