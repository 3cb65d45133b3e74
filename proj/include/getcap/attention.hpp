#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "getcap/tensor.hpp"

namespace getcap {

// Boolean attention mask, row-major (n_q x n_k); true = key visible.
struct Mask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> allow;

  bool allowed(std::size_t i, std::size_t j) const { return allow[i * cols + j] != 0; }
};

// Entry (i, j) is allowed iff j <= i.
Mask causal_mask(std::size_t t);

// Logit offset applied to masked entries before the softmax.
inline constexpr double kMaskedLogit = -1e9;

struct AttentionResult {
  Tensor output;   // n_q x d_v
  Tensor weights;  // n_q x n_k, rows sum to one
};

// softmax(Q K^T / sqrt(d_k) + mask) V, where d_k is the shared key width.
AttentionResult scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                             const Mask* mask = nullptr);
Tensor scaled_dot_product(const Tensor& q, const Tensor& k, const Tensor& v,
                          const Mask* mask = nullptr);

// Per-head projections are stored as (d x d/h) so that a row-major input X
// projects as X W. No biases.
struct MultiHeadParams {
  std::size_t width = 0;
  std::size_t heads = 0;
  std::vector<Tensor> wq, wk, wv;
  Tensor wo;  // d x d

  std::size_t head_width() const { return width / heads; }

  static MultiHeadParams init(std::size_t width, std::size_t heads, Rng& rng);
  void validate() const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct MultiHeadTrace {
  Tensor output;
  std::vector<Tensor> head_outputs;
  std::vector<Tensor> head_weights;
  std::vector<Tensor> head_values;  // V W_i^V per head
};

// Concat(H_1..H_h) W^O with H_i = Attention(Q W_i^Q, K W_i^K, V W_i^V).
Tensor multi_head(const Tensor& q, const Tensor& k, const Tensor& v,
                  const MultiHeadParams& params, const Mask* mask = nullptr);
MultiHeadTrace multi_head_traced(const Tensor& q, const Tensor& k, const Tensor& v,
                                 const MultiHeadParams& params, const Mask* mask = nullptr);

}  // namespace getcap
