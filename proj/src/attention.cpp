#include "getcap/attention.hpp"

#include <cmath>

#include "getcap/errors.hpp"

namespace getcap {

Mask causal_mask(std::size_t t) {
  if (t == 0) throw ContractError("causal_mask: length must be >= 1");
  Mask m{t, t, std::vector<std::uint8_t>(t * t, 0)};
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j <= i; ++j) m.allow[i * t + j] = 1;
  return m;
}

AttentionResult scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                             const Mask* mask) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
    throw DimensionError("attention: Q, K and V must be matrices");
  }
  if (q.cols() != k.cols()) {
    throw DimensionError("attention: query width " + shape_str(q.shape()) +
                         " differs from key width " + shape_str(k.shape()));
  }
  if (k.rows() != v.rows()) {
    throw DimensionError("attention: " + shape_str(k.shape()) + " keys vs " +
                         shape_str(v.shape()) + " values");
  }
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(k.cols()));
  Tensor logits = scale(matmul(q, transpose(k)), inv_scale);
  if (mask != nullptr) {
    if (mask->rows != q.rows() || mask->cols != k.rows()) {
      throw DimensionError("attention: mask " + std::to_string(mask->rows) + "x" +
                           std::to_string(mask->cols) + " does not match logits " +
                           shape_str(logits.shape()));
    }
    std::vector<double> offset(mask->rows * mask->cols, 0.0);
    for (std::size_t i = 0; i < mask->rows; ++i) {
      bool any = false;
      for (std::size_t j = 0; j < mask->cols; ++j) {
        if (mask->allowed(i, j)) {
          any = true;
        } else {
          offset[i * mask->cols + j] = kMaskedLogit;
        }
      }
      if (!any) throw ContractError("attention: mask row " + std::to_string(i) + " is fully masked");
    }
    logits = add(logits, Tensor(logits.shape(), std::move(offset)));
  }
  Tensor weights = softmax(logits, 1);
  return {matmul(weights, v), weights};
}

Tensor scaled_dot_product(const Tensor& q, const Tensor& k, const Tensor& v, const Mask* mask) {
  return scaled_dot_product_attention(q, k, v, mask).output;
}

MultiHeadParams MultiHeadParams::init(std::size_t width, std::size_t heads, Rng& rng) {
  if (heads == 0 || width % heads != 0) {
    throw ConfigError("multi-head: width " + std::to_string(width) +
                      " is not divisible by head count " + std::to_string(heads));
  }
  MultiHeadParams p;
  p.width = width;
  p.heads = heads;
  const std::size_t dh = width / heads;
  const double proj_std = std::sqrt(2.0 / static_cast<double>(width + dh));
  for (std::size_t i = 0; i < heads; ++i) {
    p.wq.push_back(Tensor::randn({width, dh}, rng, proj_std, true));
    p.wk.push_back(Tensor::randn({width, dh}, rng, proj_std, true));
    p.wv.push_back(Tensor::randn({width, dh}, rng, proj_std, true));
  }
  p.wo = Tensor::randn({width, width}, rng, std::sqrt(1.0 / static_cast<double>(width)), true);
  return p;
}

void MultiHeadParams::validate() const {
  if (heads == 0 || width % heads != 0) {
    throw ConfigError("multi-head: width " + std::to_string(width) +
                      " is not divisible by head count " + std::to_string(heads));
  }
  if (wq.size() != heads || wk.size() != heads || wv.size() != heads) {
    throw ConfigError("multi-head: expected " + std::to_string(heads) + " head projections");
  }
  const Shape head_shape{width, head_width()};
  for (std::size_t i = 0; i < heads; ++i) {
    if (wq[i].shape() != head_shape || wk[i].shape() != head_shape || wv[i].shape() != head_shape) {
      throw DimensionError("multi-head: head projection must be " + shape_str(head_shape));
    }
  }
  if (wo.shape() != Shape{width, width}) throw DimensionError("multi-head: W^O must be d x d");
  auto finite = [](const Tensor& t) {
    for (double x : t.data())
      if (!std::isfinite(x)) return false;
    return true;
  };
  for (std::size_t i = 0; i < heads; ++i) {
    if (!finite(wq[i]) || !finite(wk[i]) || !finite(wv[i])) {
      throw NumericError("multi-head: non-finite projection weights");
    }
  }
  if (!finite(wo)) throw NumericError("multi-head: non-finite output projection");
}

void MultiHeadParams::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t i = 0; i < heads; ++i) {
    const std::string h = prefix + ".head" + std::to_string(i);
    out.push_back({h + ".wq", wq[i]});
    out.push_back({h + ".wk", wk[i]});
    out.push_back({h + ".wv", wv[i]});
  }
  out.push_back({prefix + ".wo", wo});
}

MultiHeadTrace multi_head_traced(const Tensor& q, const Tensor& k, const Tensor& v,
                                 const MultiHeadParams& params, const Mask* mask) {
  if (q.cols() != params.width || k.cols() != params.width || v.cols() != params.width) {
    throw DimensionError("multi-head: inputs " + shape_str(q.shape()) + ", " +
                         shape_str(k.shape()) + ", " + shape_str(v.shape()) +
                         " must have width " + std::to_string(params.width));
  }
  MultiHeadTrace trace;
  for (std::size_t i = 0; i < params.heads; ++i) {
    Tensor vh = matmul(v, params.wv[i]);
    AttentionResult r =
        scaled_dot_product_attention(matmul(q, params.wq[i]), matmul(k, params.wk[i]), vh, mask);
    trace.head_outputs.push_back(r.output);
    trace.head_weights.push_back(r.weights);
    trace.head_values.push_back(vh);
  }
  Tensor joined = params.heads == 1 ? trace.head_outputs.front() : concat(trace.head_outputs, 1);
  trace.output = matmul(joined, params.wo);
  return trace;
}

Tensor multi_head(const Tensor& q, const Tensor& k, const Tensor& v,
                  const MultiHeadParams& params, const Mask* mask) {
  return multi_head_traced(q, k, v, params, mask).output;
}

}  // namespace getcap
