#include <doctest.h>

#include <cmath>
#include <limits>

#include "getcap/errors.hpp"
#include "getcap/gradcheck.hpp"
#include "getcap/tensor.hpp"
#include "helpers.hpp"

using namespace getcap;
using testing::max_abs_diff;

namespace {

std::vector<double> naive_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      long double acc = 0.0L;
      for (std::size_t p = 0; p < k; ++p) acc += static_cast<long double>(a.at(i, p)) * b.at(p, j);
      c[i * n + j] = static_cast<double>(acc);
    }
  return c;
}

// Random positive-extent matrix shape up to 8 x 8.
Shape random_shape(Rng& rng) {
  std::uniform_int_distribution<std::size_t> ext(1, 8);
  return {ext(rng), ext(rng)};
}

// Scalar probe with fixed pseudo-random weights so every output entry matters.
Tensor weighted(const Tensor& t) {
  Rng r(t.numel() * 31 + 7);
  return sum(mul(t, Tensor::randn(t.shape(), r)));
}

GradCheckReport check(const std::function<Tensor()>& f, const ParamList& params) {
  return finite_diff_check(f, params, {});
}

}  // namespace

TEST_CASE("matmul identity and projector") {
  Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
  Tensor m = Tensor::matrix({{1, 2}, {3, 4}});
  CHECK(testing::bit_equal(matmul(eye, m), m));

  Tensor p = Tensor::matrix({{1, 0}, {0, 0}});
  Tensor r = matmul(p, Tensor::matrix({{5, 6}, {7, 8}}));
  CHECK(std::vector<double>(r.data().begin(), r.data().end()) == std::vector<double>{5, 6, 0, 0});
}

TEST_CASE("matmul value and gradients match the naive loop oracle") {
  Rng rng(11);
  Tensor a = Tensor::randn({3, 4}, rng, 1.0, true);
  Tensor b = Tensor::randn({4, 2}, rng, 1.0, true);
  Tensor w = Tensor::randn({3, 2}, rng);

  Tape tape;
  Tensor c;
  {
    TapeScope scope(tape);
    c = matmul(a, b);
    tape.backward(sum(mul(c, w)));
  }
  CHECK(max_abs_diff(c.data(), naive_matmul(a, b)) < 1e-14);
  // dA = W B^T, dB = A^T W
  CHECK(max_abs_diff(a.grad(), naive_matmul(w, transpose(b))) < 1e-14);
  CHECK(max_abs_diff(b.grad(), naive_matmul(transpose(a), w)) < 1e-14);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("softmax") {
  SUBCASE("uniform") {
    Tensor s = softmax(Tensor::row({0, 0, 0}), 1);
    for (double v : s.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }
  SUBCASE("stabilized against overflow") {
    Tensor s = softmax(Tensor::row({1e6, 1e6 - 1000}), 1);
    CHECK(s[0] == 1.0);
    CHECK(s[1] < 1e-300);
  }
  SUBCASE("direct exp-normalize oracle") {
    Tensor s = softmax(Tensor::row({1, 2, 3}), 1);
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    CHECK(std::abs(s[0] - std::exp(1.0) / z) < 1e-15);
    CHECK(std::abs(s[1] - std::exp(2.0) / z) < 1e-15);
    CHECK(std::abs(s[2] - std::exp(3.0) / z) < 1e-15);
  }
  SUBCASE("columns along axis 0") {
    Tensor s = softmax(Tensor::matrix({{0, 5}, {0, 5}}), 0);
    for (double v : s.data()) CHECK(v == 0.5);
  }
  SUBCASE("NaN input raises a numeric error") {
    CHECK_THROWS_AS(softmax(Tensor::row({1, std::nan(""), 0}), 1), NumericError);
    CHECK_THROWS_AS(log_softmax(Tensor::row({std::numeric_limits<double>::infinity(), 0}), 1), NumericError);
  }
  SUBCASE("rows sum to one on random inputs") {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
      Tensor x = Tensor::randn(random_shape(rng), rng, 10.0);
      Tensor s = softmax(x, 1);
      for (std::size_t i = 0; i < s.rows(); ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < s.cols(); ++j) total += s.at(i, j);
        CHECK(std::abs(total - 1.0) <= 1e-9);
      }
    }
  }
}

TEST_CASE("log_softmax agrees with log of softmax") {
  Rng rng(3);
  Tensor x = Tensor::randn({4, 6}, rng, 3.0);
  Tensor a = log_softmax(x, 1);
  Tensor b = softmax(x, 1);
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(std::abs(a[i] - std::log(b[i])) < 1e-13);
}

TEST_CASE("layer_norm") {
  Tensor gain = Tensor::ones({1, 3});
  Tensor bias = Tensor::zeros({1, 3});
  SUBCASE("constant row maps to zeros") {
    Tensor y = layer_norm(Tensor::row({4, 4, 4}), gain, bias);
    for (double v : y.data()) CHECK(v == 0.0);
  }
  SUBCASE("two-point symmetry") {
    Tensor y = layer_norm(Tensor::row({1, 3}), Tensor::ones({1, 2}), Tensor::zeros({1, 2}));
    CHECK(y[0] == doctest::Approx(-1.0).epsilon(1e-5));
    CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-5));
  }
  SUBCASE("affine formula oracle") {
    Tensor x = Tensor::matrix({{1.0, 2.0, 4.0}, {-1.0, 0.0, 0.5}});
    Tensor y = layer_norm(x, Tensor::row({1.5, 1.0, 0.5}), Tensor::row({0.0, 0.1, -0.2}));
    const std::vector<double> oracle{-1.6035622971754466, -0.16726038286257452, 0.4681509571564359,
                                     -2.0044335432204403, 0.3672578057627254,   0.3345156115254507};
    CHECK(max_abs_diff(y.data(), oracle) < 1e-12);
  }
  SUBCASE("random rows have zero mean and unit variance before the affine map") {
    Rng rng(8);
    Tensor x = Tensor::randn({5, 4}, rng, 2.0);
    Tensor y = layer_norm(x, Tensor::ones({1, 4}), Tensor::zeros({1, 4}), 0.0);
    for (std::size_t i = 0; i < 5; ++i) {
      double mu = 0, sq = 0;
      for (std::size_t j = 0; j < 4; ++j) mu += y.at(i, j) / 4;
      for (std::size_t j = 0; j < 4; ++j) sq += (y.at(i, j) - mu) * (y.at(i, j) - mu) / 4;
      CHECK(std::abs(mu) < 1e-12);
      CHECK(std::abs(sq - 1.0) < 1e-12);
    }
  }
  SUBCASE("singleton last axis is rejected") {
    CHECK_THROWS_AS(layer_norm(Tensor::matrix({{1}, {2}}), Tensor::ones({1, 1}), Tensor::zeros({1, 1})),
                    ContractError);
  }
}

TEST_CASE("elementwise suite") {
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  CHECK(tanh(Tensor::scalar(0.0)).item() == 0.0);
  CHECK(relu(Tensor::row({-1, 0, 2}))[2] == 2.0);
  CHECK(relu(Tensor::row({-1, 0, 2}))[0] == 0.0);

  Tensor m = mean(Tensor::matrix({{1, 3}, {3, 5}}), 0);
  CHECK(m.shape() == Shape{1, 2});
  CHECK(m[0] == 2.0);
  CHECK(m[1] == 4.0);

  Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  Tensor b = Tensor::row({10, 20});
  Tensor s = add(a, b);
  CHECK(s.at(1, 1) == 24.0);
  CHECK(sub(a, b).at(0, 0) == -9.0);
  CHECK(mul(a, b).at(1, 0) == 30.0);

  Tensor c = concat({a, b}, 0);
  CHECK(c.shape() == Shape{3, 2});
  CHECK(c.at(2, 1) == 20.0);
  Tensor c1 = concat({a, a}, 1);
  CHECK(c1.shape() == Shape{2, 4});
  CHECK(c1.at(1, 3) == 4.0);
  Tensor sl = slice(c, 0, 1, 3);
  CHECK(sl.shape() == Shape{2, 2});
  CHECK(sl.at(0, 0) == 3.0);
  CHECK_THROWS_AS(slice(c, 0, 2, 4), DimensionError);

  Tensor table = Tensor::matrix({{0, 0}, {1, 1}, {2, 2}});
  const int ids[] = {2, 0, 2};
  Tensor e = embedding_lookup(table, ids);
  CHECK(e.at(0, 0) == 2.0);
  CHECK(e.at(1, 1) == 0.0);
  const int bad[] = {3};
  CHECK_THROWS_AS(embedding_lookup(table, bad), LookupError);
  const int neg[] = {-1};
  CHECK_THROWS_AS(embedding_lookup(table, neg), LookupError);

  const int cols[] = {1, 0};
  Tensor g = gather(a, cols);
  CHECK(g.shape() == Shape{2, 1});
  CHECK(g[0] == 2.0);
  CHECK(g[1] == 3.0);
}

TEST_CASE("dropout") {
  Rng rng(1);
  Tensor x = Tensor::randn({6, 6}, rng);
  CHECK(testing::bit_equal(dropout(x, 1.0, true, rng), x));
  CHECK(testing::bit_equal(dropout(x, 0.5, false, rng), x));
  Tensor y = dropout(x, 0.5, true, rng);
  std::size_t dropped = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    if (y[i] == 0.0) {
      ++dropped;
    } else {
      CHECK(y[i] == x[i] / 0.5);
    }
  }
  CHECK(dropped > 0);
  CHECK(dropped < x.numel());
  CHECK_THROWS_AS(dropout(x, 0.0, true, rng), ContractError);
  CHECK_THROWS_AS(dropout(x, 1.5, true, rng), ContractError);

  Rng r1(42), r2(42);
  CHECK(testing::bit_equal(dropout(x, 0.7, true, r1), dropout(x, 0.7, true, r2)));
}

TEST_CASE("backward basics") {
  Rng rng(2);
  SUBCASE("sum gives ones") {
    Tensor x = Tensor::randn({3, 2}, rng, 1.0, true);
    Tape tape;
    {
      TapeScope scope(tape);
      tape.backward(sum(x));
    }
    for (double g : x.grad()) CHECK(g == 1.0);
  }
  SUBCASE("dot product gives the other factor") {
    Tensor x = Tensor::randn({1, 4}, rng, 1.0, true);
    Tensor y = Tensor::randn({1, 4}, rng);
    Tape tape;
    {
      TapeScope scope(tape);
      tape.backward(sum(mul(x, y)));
    }
    CHECK(max_abs_diff(x.grad(), y.data()) == 0.0);
  }
  SUBCASE("non-scalar loss is a contract error") {
    Tensor x = Tensor::randn({2, 2}, rng, 1.0, true);
    Tape tape;
    TapeScope scope(tape);
    Tensor y = scale(x, 2.0);
    CHECK_THROWS_AS(tape.backward(y), ContractError);
  }
  SUBCASE("loss from another tape is rejected") {
    Tensor x = Tensor::randn({2, 2}, rng, 1.0, true);
    Tape a, b;
    Tensor loss;
    {
      TapeScope scope(a);
      loss = sum(x);
    }
    CHECK_THROWS_AS(b.backward(loss), ContractError);
  }
  SUBCASE("fan-out gradients accumulate additively") {
    Tensor x = Tensor::randn({2, 3}, rng, 1.0, true);
    auto f1 = [&] { return sum(sigmoid(x)); };
    auto f2 = [&] { return sum(mul(x, x)); };
    auto grad_of = [&](const std::function<Tensor()>& f) {
      x.zero_grad();
      Tape tape;
      TapeScope scope(tape);
      tape.backward(f());
      return x.grad();
    };
    const auto g1 = grad_of(f1);
    const auto g2 = grad_of(f2);
    const auto both = grad_of([&] { return add(f1(), f2()); });
    for (std::size_t i = 0; i < both.size(); ++i) CHECK(std::abs(both[i] - (g1[i] + g2[i])) < 1e-14);
  }
  SUBCASE("gradients accumulate across backward calls until zero_grad") {
    Tensor x = Tensor::randn({2, 2}, rng, 1.0, true);
    for (int k = 0; k < 2; ++k) {
      Tape tape;
      TapeScope scope(tape);
      tape.backward(sum(x));
    }
    for (double g : x.grad()) CHECK(g == 2.0);
    x.zero_grad();
    for (double g : x.grad()) CHECK(g == 0.0);
  }
  SUBCASE("no tape records nothing") {
    Tensor x = Tensor::randn({2, 2}, rng, 1.0, true);
    Tape tape;
    {
      TapeScope scope(tape);
      NoGradScope off;
      Tensor y = sum(x);
      CHECK(tape.size() == 0);
    }
  }
}

TEST_CASE("composite chain matches finite differences") {
  Rng rng(9);
  Tensor x = Tensor::randn({3, 4}, rng, 1.0, true);
  Tensor w = Tensor::randn({4, 2}, rng, 1.0, true);
  auto f = [&] { return sum(tanh(matmul(sigmoid(x), w))); };
  CHECK(check(f, {{"x", x}, {"w", w}}).max_rel_error < 1e-4);
}

TEST_CASE("finite_diff_check on a linear function is exact to rounding") {
  Rng rng(4);
  Tensor x = Tensor::randn({2, 3}, rng, 1.0, true);
  Tensor c = Tensor::randn({2, 3}, rng);
  auto r = check([&] { return sum(mul(x, c)); }, {{"x", x}});
  CHECK(r.passed);
  CHECK(r.max_rel_error < 1e-8);
}

TEST_CASE("finite_diff_check reports a wrong gradient") {
  Rng rng(4);
  Tensor x = Tensor::randn({2, 2}, rng, 1.0, true);
  // One factor is cut from the tape, so the analytic gradient is half the true one.
  auto r = check([&] { return sum(mul(x.detach(), x)); }, {{"x", x}});
  CHECK_FALSE(r.passed);
  CHECK(r.max_rel_error > 0.4);
}

TEST_CASE("every primitive passes finite differences on random shapes") {
  Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const Shape sh = random_shape(rng);
    const std::size_t m = sh[0], n = sh[1];
    Tensor a = Tensor::randn(sh, rng, 1.0, true);
    Tensor b = Tensor::randn(sh, rng, 1.0, true);
    Tensor row = Tensor::randn({1, n}, rng, 1.0, true);
    Tensor k = Tensor::randn({n, 3}, rng, 1.0, true);
    const ParamList ab{{"a", a}, {"b", b}};
    CHECK(check([&] { return weighted(matmul(a, k)); }, {{"a", a}, {"k", k}}).passed);
    CHECK(check([&] { return weighted(transpose(a)); }, ab).passed);
    CHECK(check([&] { return weighted(add(a, b)); }, ab).passed);
    CHECK(check([&] { return weighted(sub(a, row)); }, {{"a", a}, {"row", row}}).passed);
    CHECK(check([&] { return weighted(mul(a, b)); }, ab).passed);
    CHECK(check([&] { return weighted(mul(a, row)); }, {{"a", a}, {"row", row}}).passed);
    CHECK(check([&] { return weighted(scale(a, -1.7)); }, ab).passed);
    CHECK(check([&] { return weighted(sigmoid(a)); }, ab).passed);
    CHECK(check([&] { return weighted(tanh(a)); }, ab).passed);
    CHECK(check([&] { return weighted(relu(a)); }, ab).passed);
    CHECK(check([&] { return weighted(softmax(a, 1)); }, ab).passed);
    CHECK(check([&] { return weighted(softmax(a, 0)); }, ab).passed);
    CHECK(check([&] { return weighted(log_softmax(a, 1)); }, ab).passed);
    CHECK(check([&] { return weighted(mean(a, 0)); }, ab).passed);
    CHECK(check([&] { return weighted(mean(a, 1)); }, ab).passed);
    CHECK(check([&] { return weighted(concat({a, b}, 0)); }, ab).passed);
    CHECK(check([&] { return weighted(concat({a, b}, 1)); }, ab).passed);
    CHECK(check([&] { return weighted(slice(a, 0, 0, (m + 1) / 2)); }, ab).passed);
    CHECK(check([&] { return weighted(slice(a, 1, n / 2, n)); }, ab).passed);
    if (n >= 2) {
      Tensor gain = Tensor::randn({1, n}, rng, 1.0, true);
      Tensor bias = Tensor::randn({1, n}, rng, 1.0, true);
      CHECK(check([&] { return weighted(layer_norm(a, gain, bias)); }, {{"a", a}, {"gain", gain}, {"bias", bias}})
                .passed);
    }
    std::vector<int> ids(m);
    for (std::size_t i = 0; i < m; ++i) ids[i] = static_cast<int>((i * 7 + trial) % m);
    CHECK(check([&] { return weighted(embedding_lookup(a, ids)); }, ab).passed);
    std::vector<int> cols(m);
    for (std::size_t i = 0; i < m; ++i) cols[i] = static_cast<int>((i * 5 + trial) % n);
    CHECK(check([&] { return weighted(gather(a, cols)); }, ab).passed);
    CHECK(check([&] { return weighted(gather(log_softmax(a, 1), cols)); }, ab).passed);
    CHECK(check(
              [&] {
                Rng frozen(99);
                return weighted(dropout(a, 0.8, true, frozen));
              },
              ab)
              .passed);
  }
}

TEST_CASE("eval forward is bit-stable across calls") {
  Rng rng(6);
  Tensor x = Tensor::randn({4, 5}, rng);
  Tensor w = Tensor::randn({5, 5}, rng);
  auto f = [&] { return layer_norm(matmul(softmax(x, 1), w), Tensor::ones({1, 5}), Tensor::zeros({1, 5})); };
  CHECK(testing::bit_equal(f(), f()));
}

TEST_CASE("shape invariants") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor::zeros({0, 2}), DimensionError);
  Tensor s = Tensor::scalar(3.0);
  CHECK(s.rank() == 0);
  CHECK(s.numel() == 1);
  CHECK_THROWS_AS(Tensor::zeros({2, 2}).item(), ContractError);
}
