#pragma once

#include <optional>
#include <string>
#include <vector>

#include "getcap/attention.hpp"
#include "getcap/layers.hpp"
#include "getcap/tensor.hpp"

namespace getcap {

// How the global slot takes part in each encoder layer.
//   plain: regions only, no global slot (standard Transformer encoder).
//   g0:    global slot appended, but the fused vector is the projected mean g0.
//   gea:   global slot appended and read back after every layer.
enum class IntraLayer { kPlain, kG0, kGea };

// How the per-layer global vectors g^1..g^L are fused into g_F.
enum class Fusion { kNone, kAverage, kAttention, kLstm };

std::string to_string(IntraLayer mode);
std::string to_string(Fusion mode);
IntraLayer parse_intra_layer(const std::string& text);
Fusion parse_fusion(const std::string& text);

struct EncoderConfig {
  std::size_t layers = 3;
  std::size_t width = 512;
  std::size_t heads = 8;
  std::size_t ff_width = 2048;
  double keep_prob = 0.9;
  IntraLayer intra = IntraLayer::kGea;
  Fusion fusion = Fusion::kLstm;

  // Every violated constraint, empty when valid.
  std::vector<std::string> violations() const;
  void validate() const;
};

struct EncoderLayerParams {
  MultiHeadParams attention;
  FeedForward ffn;
  LayerNormParams attention_norm;
  LayerNormParams ffn_norm;

  static EncoderLayerParams init(const EncoderConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

// Standard LSTM cell with hidden width d. Each gate owns an input matrix,
// a recurrent matrix and a bias.
struct LstmFusionParams {
  struct Gate {
    Tensor input;      // d x d
    Tensor recurrent;  // d x d
    Tensor bias;       // 1 x d
  };
  Gate input_gate, forget_gate, output_gate, candidate;

  static LstmFusionParams init(std::size_t width, Rng& rng);
  static LstmFusionParams zeros(std::size_t width);
  void collect(const std::string& prefix, ParamList& out) const;
};

struct LstmState {
  Tensor hidden;  // 1 x d
  Tensor cell;    // 1 x d
};

LstmState lstm_cell(const Tensor& x, const LstmState& prev, const LstmFusionParams& p);

struct EncoderParams {
  Linear input_projection;  // d_in x d, shared by regions and the global mean
  std::vector<EncoderLayerParams> layers;
  std::optional<LstmFusionParams> lstm;
  std::optional<Tensor> fusion_query;  // 1 x d, attention fusion

  static EncoderParams init(std::size_t d_in, const EncoderConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

struct EncodedImage {
  Tensor regions;        // V^L, N x d (global slot excluded)
  Tensor global;         // g_F, 1 x d
  Tensor layer_globals;  // g^1..g^L, L x d; invalid when there is no global slot
};

// Arithmetic mean of the region rows, 1 x d_in.
Tensor mean_pool_global(const Tensor& features);

struct ProjectedInputs {
  Tensor regions;  // V^0
  Tensor global;   // g^0
};

ProjectedInputs project_inputs(const Tensor& features, const Tensor& global,
                               const Linear& projection);

// One encoder layer: self-attention, residual + norm, feed-forward, residual +
// norm, with dropout after both sublayers.
Tensor gea_layer(const Tensor& input, const EncoderLayerParams& params, double keep_prob,
                 ForwardContext& ctx);

Tensor fuse_layers(const Tensor& layer_globals, Fusion mode, const EncoderParams& params);

EncodedImage encode(const Tensor& features, const EncoderConfig& cfg,
                    const EncoderParams& params, ForwardContext& ctx);

}  // namespace getcap
