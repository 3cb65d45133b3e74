#include "getcap/layers.hpp"

#include <cmath>

#include "getcap/errors.hpp"

namespace getcap {

Tensor apply_dropout(const Tensor& x, double keep_prob, ForwardContext& ctx) {
  if (!ctx.train || keep_prob == 1.0) return x;
  if (ctx.rng == nullptr) throw ContractError("dropout in training mode needs an RNG");
  return dropout(x, keep_prob, true, *ctx.rng);
}

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(in + out));
  return {Tensor::randn({in, out}, rng, stddev, true), Tensor::zeros({1, out}, true)};
}

Tensor Linear::operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }

void Linear::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

LayerNormParams LayerNormParams::init(std::size_t width) {
  return {Tensor::ones({1, width}, true), Tensor::zeros({1, width}, true)};
}

Tensor LayerNormParams::operator()(const Tensor& x) const { return layer_norm(x, gain, bias, eps); }

void LayerNormParams::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gain", gain});
  out.push_back({prefix + ".bias", bias});
}

FeedForward FeedForward::init(std::size_t width, std::size_t ff_width, Rng& rng) {
  return {Linear::init(width, ff_width, rng), Linear::init(ff_width, width, rng)};
}

Tensor FeedForward::operator()(const Tensor& x) const { return outer(relu(inner(x))); }

void FeedForward::collect(const std::string& prefix, ParamList& out) const {
  inner.collect(prefix + ".inner", out);
  outer.collect(prefix + ".outer", out);
}

Tensor row_of(const Tensor& x, std::size_t i) { return slice(x, 0, i, i + 1); }

}  // namespace getcap
