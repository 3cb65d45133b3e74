#pragma once

// Dense float64 tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a cheap handle onto shared storage. Operations executed while a
// Tape is active on the current thread (see TapeScope) and touching at least
// one requires_grad input are recorded on that tape; everything else is plain
// eager arithmetic. Tape::backward replays the record in reverse creation
// order, which is a topological order of the expression graph.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace getcap {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class Tape;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  const Tape* tape = nullptr;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  // rows x cols matrix from nested initializer data (row-major).
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false);
  static Tensor row(std::vector<double> values, bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0,
                      bool requires_grad = false);

  bool valid() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  // In-place access for leaf updates (optimizers, test perturbations). Never
  // mutate a tensor that a pending tape still references.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t r, std::size_t c) const;
  double operator[](std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);

  bool has_grad() const;
  // Gradient buffer; zeros if nothing has been accumulated yet.
  std::vector<double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Copy of the value, cut off from any tape.
  Tensor detach() const;

  bool is(const Tensor& other) const { return node_ == other.node_; }

  // Internal: used by the op implementations.
  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Ordered record of differentiable operations. Single-threaded by contract;
// independent tapes on different threads do not interact.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape();

  void record(std::shared_ptr<detail::Node> node);
  // Seeds d(loss)/d(loss) = 1, replays in reverse and then resets the tape.
  // Leaf gradients accumulate across calls until zero_grad().
  void backward(const Tensor& loss);
  void clear();
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<std::shared_ptr<detail::Node>> nodes_;
};

// Makes `tape` the active tape of the calling thread for the scope lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Suspends recording on the calling thread (e.g. for decoding with
// learnable parameters that must not grow the tape).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// ---- primitives -----------------------------------------------------------

// (m x k) . (k x n)
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Elementwise with identical shapes, or b broadcast as a 1 x n row over the
// rows of an m x n a.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);

// Normalizes over the last axis; gain and bias have the last-axis extent.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

// Keeps the reduced axis with extent 1.
Tensor mean(const Tensor& x, std::size_t axis);
// Sum of all entries as a scalar.
Tensor sum(const Tensor& x);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);

// Rows of an (V x d) table; ids outside [0, V) raise LookupError.
Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);
// out[i] = x[i, cols[i]] as an (m x 1) column.
Tensor gather(const Tensor& x, std::span<const int> cols);

// Inverted dropout. Identity when !train or keep_prob == 1.
Tensor dropout(const Tensor& x, double keep_prob, bool train, Rng& rng);

// A learnable (or checkable) tensor together with a stable name.
struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedTensor>;

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

}  // namespace getcap
