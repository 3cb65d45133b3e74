#pragma once

#include <string>

#include "getcap/tensor.hpp"

namespace getcap {

// Forward-pass mode. Dropout draws from `rng` only when `train` is set.
struct ForwardContext {
  bool train = false;
  Rng* rng = nullptr;

  static ForwardContext eval() { return {}; }
  static ForwardContext training(Rng& rng) { return {true, &rng}; }
};

Tensor apply_dropout(const Tensor& x, double keep_prob, ForwardContext& ctx);

// y = x W + b with W (in x out) and b (1 x out).
struct Linear {
  Tensor weight;
  Tensor bias;

  static Linear init(std::size_t in, std::size_t out, Rng& rng);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct LayerNormParams {
  Tensor gain;
  Tensor bias;
  double eps = 1e-5;

  static LayerNormParams init(std::size_t width);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

// relu(x W1 + b1) W2 + b2
struct FeedForward {
  Linear inner;
  Linear outer;

  static FeedForward init(std::size_t width, std::size_t ff_width, Rng& rng);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

// Row i of x as a 1 x d tensor.
Tensor row_of(const Tensor& x, std::size_t i);

}  // namespace getcap
