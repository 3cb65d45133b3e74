#include "getcap/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "getcap/errors.hpp"

namespace getcap {

using detail::Node;

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

namespace {

thread_local Tape* g_active_tape = nullptr;

std::shared_ptr<Node> new_node(Shape shape, std::vector<double> value) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  return node;
}

// Builds the result of an op and records it when a tape is active and some
// input wants a gradient.
Tensor make_op(Shape shape, std::vector<double> value,
               std::initializer_list<const Tensor*> inputs,
               std::function<void(Node&)> backward) {
  auto node = new_node(std::move(shape), std::move(value));
  Tape* tape = g_active_tape;
  if (tape != nullptr) {
    bool any = false;
    for (const Tensor* t : inputs) any = any || t->requires_grad();
    if (any) {
      node->requires_grad = true;
      node->tape = tape;
      for (const Tensor* t : inputs) node->parents.push_back(t->node());
      node->backward = std::move(backward);
      tape->record(node);
    }
  }
  return Tensor(std::move(node));
}

Tensor make_op_n(Shape shape, std::vector<double> value,
                 const std::vector<Tensor>& inputs,
                 std::function<void(Node&)> backward) {
  auto node = new_node(std::move(shape), std::move(value));
  Tape* tape = g_active_tape;
  if (tape != nullptr) {
    bool any = std::any_of(inputs.begin(), inputs.end(),
                           [](const Tensor& t) { return t.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->tape = tape;
      for (const Tensor& t : inputs) node->parents.push_back(t.node());
      node->backward = std::move(backward);
      tape->record(node);
    }
  }
  return Tensor(std::move(node));
}

// Gradient buffer of a parent, or nullptr when it does not take gradients.
double* grad_of(Node& out, std::size_t i) {
  Node& p = *out.parents[i];
  if (!p.requires_grad) return nullptr;
  p.ensure_grad();
  return p.grad.data();
}

const std::vector<double>& value_of(const Node& out, std::size_t i) {
  return out.parents[i]->value;
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " +
                         shape_str(t.shape()));
  }
}

struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

enum class Broadcast { kSame, kRow };

Broadcast check_binary(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (a.rank() == 2 && b.rank() == 2 && b.rows() == 1 && b.cols() == a.cols()) {
    return Broadcast::kRow;
  }
  throw DimensionError(std::string(op) + ": incompatible shapes " +
                       shape_str(a.shape()) + " and " + shape_str(b.shape()));
}

double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  }
  for (std::size_t e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive: " + shape_str(shape));
  }
  node_ = new_node(std::move(shape), std::move(data));
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::ones(Shape shape, bool requires_grad) {
  return full(std::move(shape), 1.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, {value}, requires_grad);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows,
                      bool requires_grad) {
  std::vector<double> data;
  std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  for (const auto& r : rows) {
    if (r.size() != cols) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), cols}, std::move(data), requires_grad);
}

Tensor Tensor::row(std::vector<double> values, bool requires_grad) {
  std::size_t n = values.size();
  return Tensor({1, n}, std::move(values), requires_grad);
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = dist(rng);
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->value.size(); }

std::size_t Tensor::rows() const {
  if (rank() == 0) return 1;
  return shape()[0];
}

std::size_t Tensor::cols() const {
  if (rank() < 2) throw DimensionError("cols() of non-matrix shape " + shape_str(shape()));
  return shape()[1];
}

std::span<const double> Tensor::data() const { return node_->value; }
std::span<double> Tensor::mutable_data() { return node_->value; }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() of non-scalar shape " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return node_->value[r * cols() + c];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(numel(), 0.0);
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const {
  return Tensor(new_node(node_->shape, node_->value));
}

// ---- Tape -----------------------------------------------------------------

Tape::~Tape() { clear(); }

void Tape::record(std::shared_ptr<Node> node) { nodes_.push_back(std::move(node)); }

void Tape::backward(const Tensor& loss) {
  if (!loss.valid() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " +
                        (loss.valid() ? shape_str(loss.shape()) : std::string("<null>")));
  }
  if (loss.node()->tape != this) {
    throw ContractError("backward: loss is not recorded on this tape");
  }
  Node& root = *loss.node();
  root.ensure_grad();
  root.grad[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = **it;
    if (!n.grad.empty() && n.backward) n.backward(n);
  }
  clear();
}

void Tape::clear() {
  for (auto& n : nodes_) {
    n->backward = nullptr;
    n->parents.clear();
    n->tape = nullptr;
  }
  nodes_.clear();
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

// ---- primitives -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner extents differ: " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const auto A = a.data();
  const auto B = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * B[p * n + j];
    }
  }
  return make_op({m, n}, std::move(out), {&a, &b}, [m, k, n](Node& o) {
    const auto& A = value_of(o, 0);
    const auto& B = value_of(o, 1);
    const auto& G = o.grad;
    if (double* dA = grad_of(o, 0)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * B[p * n + j];
          dA[i * k + p] += acc;
        }
    }
    if (double* dB = grad_of(o, 1)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A[i * k + p];
          for (std::size_t j = 0; j < n; ++j) dB[p * n + j] += aip * G[i * n + j];
        }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  const auto A = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = A[i * n + j];
  return make_op({n, m}, std::move(out), {&a}, [m, n](Node& o) {
    if (double* dA = grad_of(o, 0)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) dA[i * n + j] += o.grad[j * m + i];
    }
  });
}

namespace {

template <class Fwd, class DA, class DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, DA da, DB db) {
  const Broadcast bc = check_binary(a, b, name);
  const std::size_t total = a.numel();
  const std::size_t width = bc == Broadcast::kRow ? b.numel() : total;
  std::vector<double> out(total);
  const auto A = a.data();
  const auto B = b.data();
  for (std::size_t i = 0; i < total; ++i) out[i] = fwd(A[i], B[i % width]);
  return make_op(a.shape(), std::move(out), {&a, &b}, [total, width, da, db](Node& o) {
    const auto& A = value_of(o, 0);
    const auto& B = value_of(o, 1);
    double* dA = grad_of(o, 0);
    double* dB = grad_of(o, 1);
    for (std::size_t i = 0; i < total; ++i) {
      const double g = o.grad[i];
      if (dA) dA[i] += g * da(A[i], B[i % width]);
      if (dB) dB[i % width] += g * db(A[i], B[i % width]);
    }
  });
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  std::vector<double> out(x.numel());
  const auto X = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(X[i]);
  return make_op(x.shape(), std::move(out), {&x}, [deriv](Node& o) {
    if (double* dX = grad_of(o, 0)) {
      const auto& X = value_of(o, 0);
      for (std::size_t i = 0; i < o.grad.size(); ++i)
        dX[i] += o.grad[i] * deriv(X[i], o.value[i]);
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

namespace {

void check_softmax_input(const Tensor& x, const char* op) {
  for (double v : x.data()) {
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
      throw NumericError(std::string(op) + ": non-finite input");
    }
  }
}

}  // namespace

Tensor softmax(const Tensor& x, std::size_t axis) {
  check_softmax_input(x, "softmax");
  const AxisSplit s = split_axis(x.shape(), axis, "softmax");
  const auto X = x.data();
  std::vector<double> out(X.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s.len; ++j) mx = std::max(mx, X[base + j * s.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < s.len; ++j) {
        const double e = std::exp(X[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.len; ++j) out[base + j * s.inner] /= total;
    }
  return make_op(x.shape(), std::move(out), {&x}, [s](Node& o) {
    double* dX = grad_of(o, 0);
    if (!dX) return;
    for (std::size_t a = 0; a < s.outer; ++a)
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = a * s.len * s.inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < s.len; ++j) {
          const std::size_t idx = base + j * s.inner;
          dot += o.grad[idx] * o.value[idx];
        }
        for (std::size_t j = 0; j < s.len; ++j) {
          const std::size_t idx = base + j * s.inner;
          dX[idx] += o.value[idx] * (o.grad[idx] - dot);
        }
      }
  });
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  check_softmax_input(x, "log_softmax");
  const AxisSplit s = split_axis(x.shape(), axis, "log_softmax");
  const auto X = x.data();
  std::vector<double> out(X.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s.len; ++j) mx = std::max(mx, X[base + j * s.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < s.len; ++j) total += std::exp(X[base + j * s.inner] - mx);
      const double lse = mx + std::log(total);
      for (std::size_t j = 0; j < s.len; ++j)
        out[base + j * s.inner] = X[base + j * s.inner] - lse;
    }
  return make_op(x.shape(), std::move(out), {&x}, [s](Node& o) {
    double* dX = grad_of(o, 0);
    if (!dX) return;
    for (std::size_t a = 0; a < s.outer; ++a)
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = a * s.len * s.inner + in;
        double gsum = 0.0;
        for (std::size_t j = 0; j < s.len; ++j) gsum += o.grad[base + j * s.inner];
        for (std::size_t j = 0; j < s.len; ++j) {
          const std::size_t idx = base + j * s.inner;
          dX[idx] += o.grad[idx] - std::exp(o.value[idx]) * gsum;
        }
      }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() == 0) throw DimensionError("layer_norm: scalar input");
  const std::size_t n = x.shape().back();
  if (n < 2) {
    throw ContractError("layer_norm: last-axis extent must be >= 2, got shape " +
                        shape_str(x.shape()));
  }
  if (gain.numel() != n || bias.numel() != n) {
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " do not match width " +
                         std::to_string(n));
  }
  const std::size_t rows = x.numel() / n;
  const auto X = x.data();
  const auto G = gain.data();
  const auto B = bias.data();
  std::vector<double> out(X.size());
  std::vector<double> xhat(X.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &X[r * n];
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xr[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (xr[j] - mu) * inv;
      xhat[r * n + j] = h;
      out[r * n + j] = G[j] * h + B[j];
    }
  }
  return make_op(x.shape(), std::move(out), {&x, &gain, &bias},
                 [rows, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& o) {
                   const auto& G = value_of(o, 1);
                   double* dX = grad_of(o, 0);
                   double* dG = grad_of(o, 1);
                   double* dB = grad_of(o, 2);
                   std::vector<double> dxhat(n);
                   for (std::size_t r = 0; r < rows; ++r) {
                     double s1 = 0.0, s2 = 0.0;
                     for (std::size_t j = 0; j < n; ++j) {
                       const std::size_t idx = r * n + j;
                       const double g = o.grad[idx];
                       if (dG) dG[j] += g * xhat[idx];
                       if (dB) dB[j] += g;
                       dxhat[j] = g * G[j];
                       s1 += dxhat[j];
                       s2 += dxhat[j] * xhat[idx];
                     }
                     if (!dX) continue;
                     const double nn = static_cast<double>(n);
                     for (std::size_t j = 0; j < n; ++j) {
                       const std::size_t idx = r * n + j;
                       dX[idx] += inv_std[r] / nn * (nn * dxhat[j] - s1 - xhat[idx] * s2);
                     }
                   }
                 });
}

Tensor mean(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "mean");
  Shape out_shape = x.shape();
  out_shape[axis] = 1;
  const auto X = x.data();
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < s.len; ++j)
      for (std::size_t in = 0; in < s.inner; ++in)
        out[o * s.inner + in] += X[(o * s.len + j) * s.inner + in];
  for (double& v : out) v /= static_cast<double>(s.len);
  return make_op(std::move(out_shape), std::move(out), {&x}, [s](Node& o) {
    double* dX = grad_of(o, 0);
    if (!dX) return;
    const double f = 1.0 / static_cast<double>(s.len);
    for (std::size_t a = 0; a < s.outer; ++a)
      for (std::size_t j = 0; j < s.len; ++j)
        for (std::size_t in = 0; in < s.inner; ++in)
          dX[(a * s.len + j) * s.inner + in] += f * o.grad[a * s.inner + in];
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_op(Shape{}, {total}, {&x}, [](Node& o) {
    if (double* dX = grad_of(o, 0)) {
      const std::size_t n = value_of(o, 0).size();
      for (std::size_t i = 0; i < n; ++i) dX[i] += o.grad[0];
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Shape& first = parts.front().shape();
  const AxisSplit s0 = split_axis(first, axis, "concat");
  std::vector<std::size_t> lens;
  std::size_t total_len = 0;
  for (const Tensor& p : parts) {
    const Shape& sh = p.shape();
    bool ok = sh.size() == first.size();
    for (std::size_t i = 0; ok && i < sh.size(); ++i) ok = i == axis || sh[i] == first[i];
    if (!ok) {
      throw DimensionError("concat: shape " + shape_str(sh) + " incompatible with " +
                           shape_str(first) + " along axis " + std::to_string(axis));
    }
    lens.push_back(sh[axis]);
    total_len += sh[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total_len;
  std::vector<double> out(s0.outer * total_len * s0.inner);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto P = parts[k].data();
    for (std::size_t o = 0; o < s0.outer; ++o)
      for (std::size_t j = 0; j < lens[k]; ++j)
        for (std::size_t in = 0; in < s0.inner; ++in)
          out[(o * total_len + offset + j) * s0.inner + in] = P[(o * lens[k] + j) * s0.inner + in];
    offset += lens[k];
  }
  const std::size_t outer = s0.outer, inner = s0.inner;
  return make_op_n(std::move(out_shape), std::move(out), parts,
                   [outer, inner, total_len, lens](Node& o) {
                     std::size_t off = 0;
                     for (std::size_t k = 0; k < lens.size(); ++k) {
                       if (double* dP = grad_of(o, k)) {
                         for (std::size_t a = 0; a < outer; ++a)
                           for (std::size_t j = 0; j < lens[k]; ++j)
                             for (std::size_t in = 0; in < inner; ++in)
                               dP[(a * lens[k] + j) * inner + in] +=
                                   o.grad[(a * total_len + off + j) * inner + in];
                       }
                       off += lens[k];
                     }
                   });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const AxisSplit s = split_axis(x.shape(), axis, "slice");
  if (begin >= end || end > s.len) {
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") invalid for shape " + shape_str(x.shape()));
  }
  const std::size_t len = end - begin;
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  const auto X = x.data();
  std::vector<double> out(s.outer * len * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < len; ++j)
      for (std::size_t in = 0; in < s.inner; ++in)
        out[(o * len + j) * s.inner + in] = X[(o * s.len + begin + j) * s.inner + in];
  return make_op(std::move(out_shape), std::move(out), {&x}, [s, begin, len](Node& o) {
    double* dX = grad_of(o, 0);
    if (!dX) return;
    for (std::size_t a = 0; a < s.outer; ++a)
      for (std::size_t j = 0; j < len; ++j)
        for (std::size_t in = 0; in < s.inner; ++in)
          dX[(a * s.len + begin + j) * s.inner + in] += o.grad[(a * len + j) * s.inner + in];
  });
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
  require_rank2(table, "embedding_lookup");
  const std::size_t vocab = table.rows(), d = table.cols();
  if (ids.empty()) throw ContractError("embedding_lookup: empty id list");
  std::vector<int> idv(ids.begin(), ids.end());
  const auto T = table.data();
  std::vector<double> out(idv.size() * d);
  for (std::size_t i = 0; i < idv.size(); ++i) {
    if (idv[i] < 0 || static_cast<std::size_t>(idv[i]) >= vocab) {
      throw LookupError("embedding_lookup: id " + std::to_string(idv[i]) +
                        " outside vocabulary of size " + std::to_string(vocab));
    }
    std::copy_n(&T[static_cast<std::size_t>(idv[i]) * d], d, &out[i * d]);
  }
  return make_op({idv.size(), d}, std::move(out), {&table}, [idv, d](Node& o) {
    double* dT = grad_of(o, 0);
    if (!dT) return;
    for (std::size_t i = 0; i < idv.size(); ++i)
      for (std::size_t j = 0; j < d; ++j)
        dT[static_cast<std::size_t>(idv[i]) * d + j] += o.grad[i * d + j];
  });
}

Tensor gather(const Tensor& x, std::span<const int> cols) {
  require_rank2(x, "gather");
  const std::size_t m = x.rows(), n = x.cols();
  if (cols.size() != m) {
    throw DimensionError("gather: " + std::to_string(cols.size()) + " indices for " +
                         std::to_string(m) + " rows");
  }
  std::vector<int> idx(cols.begin(), cols.end());
  std::vector<double> out(m);
  const auto X = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= n) {
      throw LookupError("gather: index " + std::to_string(idx[i]) + " outside [0, " +
                        std::to_string(n) + ")");
    }
    out[i] = X[i * n + static_cast<std::size_t>(idx[i])];
  }
  return make_op({m, 1}, std::move(out), {&x}, [idx, n](Node& o) {
    if (double* dX = grad_of(o, 0)) {
      for (std::size_t i = 0; i < idx.size(); ++i)
        dX[i * n + static_cast<std::size_t>(idx[i])] += o.grad[i];
    }
  });
}

Tensor dropout(const Tensor& x, double keep_prob, bool train, Rng& rng) {
  if (!(keep_prob > 0.0 && keep_prob <= 1.0)) {
    throw ContractError("dropout: keep_prob must lie in (0, 1], got " + std::to_string(keep_prob));
  }
  if (!train || keep_prob == 1.0) return x;
  std::vector<double> mask(x.numel());
  const double inv = 1.0 / keep_prob;
  for (double& m : mask) m = uniform01(rng) < keep_prob ? inv : 0.0;
  std::vector<double> out(x.numel());
  const auto X = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = X[i] * mask[i];
  return make_op(x.shape(), std::move(out), {&x}, [mask = std::move(mask)](Node& o) {
    if (double* dX = grad_of(o, 0)) {
      for (std::size_t i = 0; i < mask.size(); ++i) dX[i] += o.grad[i] * mask[i];
    }
  });
}

}  // namespace getcap
