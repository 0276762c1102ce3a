#include <doctest.h>

#include <cmath>

#include "refiner/errors.hpp"
#include "refiner/grad_check.hpp"
#include "refiner/rng.hpp"
#include "refiner/tape.hpp"

using namespace refiner;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = scale * rng.normal();
  return t;
}

}  // namespace

TEST_CASE("matmul forward values") {
  Tape tape;
  const NodeId eye = tape.leaf(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  const NodeId x = tape.leaf(Tensor::matrix(2, 2, {3.5, -1, 2, 0.25}));
  const NodeId prod = tape.matmul(eye, x);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(tape.value(prod).data[i] == tape.value(x).data[i]);
  }

  const NodeId a = tape.leaf(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  const NodeId b = tape.leaf(Tensor::matrix(2, 1, {1, 1}));
  const NodeId c = tape.matmul(a, b);
  CHECK(tape.value(c)(0, 0) == doctest::Approx(3.0));
  CHECK(tape.value(c)(1, 0) == doctest::Approx(7.0));
}

TEST_CASE("matmul rejects mismatched shapes") {
  Tape tape;
  const NodeId a = tape.leaf(Tensor::zeros({2, 3}));
  const NodeId b = tape.leaf(Tensor::zeros({2, 3}));
  CHECK_THROWS_AS(tape.matmul(a, b), std::invalid_argument);
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(11);
  const Tensor b_val = random_tensor({4, 3}, rng);
  const ScalarFn f = [&](Tape& t, NodeId a) {
    return t.sum_all(t.matmul(a, t.leaf(b_val)));
  };
  for (int trial = 0; trial < 20; ++trial) {
    CHECK(grad_check(f, random_tensor({2, 4}, rng)) < 1e-6);
  }
}

TEST_CASE("softmax rows") {
  Tape tape;
  const NodeId uniform = tape.softmax_rows(tape.leaf(Tensor::row({2.5, 2.5, 2.5})));
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(tape.value(uniform)(0, j) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  }

  const NodeId skewed =
      tape.softmax_rows(tape.leaf(Tensor::row({0.0, std::log(3.0)})));
  CHECK(tape.value(skewed)(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(tape.value(skewed)(0, 1) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one and ignore shifts") {
  Rng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    const Tensor x = random_tensor({3, 5}, rng, 3.0);
    Tensor shifted = x;
    const double shift = rng.uniform(-50.0, 50.0);
    for (double& v : shifted.data) v += shift;

    Tape tape;
    const NodeId y = tape.softmax_rows(tape.leaf(x));
    const NodeId ys = tape.softmax_rows(tape.leaf(shifted));
    for (std::size_t i = 0; i < 3; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < 5; ++j) sum += tape.value(y)(i, j);
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
    for (std::size_t k = 0; k < x.size(); ++k) {
      CHECK(std::abs(tape.value(y).data[k] - tape.value(ys).data[k]) < 1e-12);
    }
  }
}

TEST_CASE("softmax gradient") {
  Rng rng(13);
  const Tensor target = random_tensor({2, 4}, rng);
  const ScalarFn f = [&](Tape& t, NodeId x) {
    return t.mse(t.softmax_rows(x), t.leaf(target));
  };
  for (int trial = 0; trial < 20; ++trial) {
    CHECK(grad_check(f, random_tensor({2, 4}, rng, 2.0)) < 1e-5);
  }
}

TEST_CASE("layer norm forward") {
  Tape tape;
  const NodeId gain = tape.leaf(Tensor({4}, {1, 1, 1, 1}));
  const NodeId bias = tape.leaf(Tensor({4}, {0, 0, 0, 0}));
  const NodeId constant =
      tape.layer_norm(tape.leaf(Tensor::row({3.7, 3.7, 3.7, 3.7})), gain, bias);
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(tape.value(constant)(0, j) == doctest::Approx(0.0).epsilon(1e-12));
  }

  // [-1, 1] already has zero mean and unit variance under the 1/d convention;
  // the epsilon inside the square root pulls the result just below +-1.
  const NodeId g2 = tape.leaf(Tensor({2}, {1, 1}));
  const NodeId b2 = tape.leaf(Tensor({2}, {0, 0}));
  const NodeId y = tape.layer_norm(tape.leaf(Tensor::row({-1.0, 1.0})), g2, b2);
  CHECK(std::abs(tape.value(y)(0, 0) - (-1.0)) < 1e-4);
  CHECK(std::abs(tape.value(y)(0, 1) - 1.0) < 1e-4);
}

TEST_CASE("layer norm gradients for input, gain and bias") {
  Rng rng(17);
  const Tensor x0 = random_tensor({3, 6}, rng);
  const Tensor g0 = random_tensor({6}, rng, 0.5);
  const Tensor b0 = random_tensor({6}, rng, 0.5);
  const Tensor target = random_tensor({3, 6}, rng);

  const ScalarFn wrt_x = [&](Tape& t, NodeId x) {
    return t.mse(t.layer_norm(x, t.leaf(g0), t.leaf(b0)), t.leaf(target));
  };
  const ScalarFn wrt_gain = [&](Tape& t, NodeId g) {
    return t.mse(t.layer_norm(t.leaf(x0), g, t.leaf(b0)), t.leaf(target));
  };
  const ScalarFn wrt_bias = [&](Tape& t, NodeId b) {
    return t.mse(t.layer_norm(t.leaf(x0), t.leaf(g0), b), t.leaf(target));
  };
  for (int trial = 0; trial < 15; ++trial) {
    CHECK(grad_check(wrt_x, random_tensor({3, 6}, rng)) < 1e-6);
  }
  CHECK(grad_check(wrt_gain, random_tensor({6}, rng)) < 1e-6);
  CHECK(grad_check(wrt_bias, random_tensor({6}, rng)) < 1e-6);
}

TEST_CASE("elementwise and reduction ops") {
  Tape tape;
  const NodeId r = tape.relu(tape.leaf(Tensor::row({-3.0, 0.0, 2.0})));
  CHECK(tape.value(r)(0, 0) == 0.0);
  CHECK(tape.value(r)(0, 1) == 0.0);
  CHECK(tape.value(r)(0, 2) == 2.0);

  const NodeId same = tape.leaf(Tensor::row({1.0, 2.0, 3.0}));
  CHECK(tape.scalar(tape.mse(same, same)) == 0.0);

  const NodeId a = tape.leaf(Tensor::row({0.0, 0.0, 0.0}));
  const NodeId b = tape.leaf(Tensor::row({0.1, 0.0, 0.0}));
  CHECK(tape.scalar(tape.mse(a, b)) == doctest::Approx(0.01 / 3.0).epsilon(1e-14));

  CHECK(tape.scalar(tape.sum_all(tape.leaf(Tensor::matrix(2, 2, {1, 2, 3, 4})))) ==
        10.0);
}

TEST_CASE("remaining op gradients match finite differences") {
  Rng rng(23);
  const Tensor other = random_tensor({3, 4}, rng);
  const Tensor rowv = random_tensor({4}, rng);
  const Tensor target = random_tensor({3, 4}, rng);

  const std::vector<std::pair<const char*, ScalarFn>> cases = {
      {"relu", [&](Tape& t, NodeId x) { return t.sum_all(t.relu(x)); }},
      {"add", [&](Tape& t, NodeId x) {
         return t.mse(t.add(x, t.leaf(other)), t.leaf(target));
       }},
      {"sub", [&](Tape& t, NodeId x) {
         return t.mse(t.sub(x, t.leaf(other)), t.leaf(target));
       }},
      {"scale", [&](Tape& t, NodeId x) {
         return t.sum_all(t.scale(x, -1.7));
       }},
      {"add_row_vector", [&](Tape& t, NodeId x) {
         return t.mse(t.add_row_vector(x, t.leaf(rowv)), t.leaf(target));
       }},
      {"transpose", [&](Tape& t, NodeId x) {
         return t.sum_all(t.matmul(t.transpose(x), t.leaf(other)));
       }},
      {"concat_cols", [&](Tape& t, NodeId x) {
         return t.sum_all(t.relu(t.concat_cols({x, t.leaf(other)})));
       }},
      {"mse", [&](Tape& t, NodeId x) { return t.mse(x, t.leaf(other)); }},
  };
  for (const auto& [name, fn] : cases) {
    CAPTURE(name);
    for (int trial = 0; trial < 10; ++trial) {
      CHECK(grad_check(fn, random_tensor({3, 4}, rng)) < 1e-4);
    }
  }

  const ScalarFn repeat_fn = [&](Tape& t, NodeId x) {
    return t.mse(t.repeat_rows(x, 3), t.leaf(target));
  };
  for (int trial = 0; trial < 10; ++trial) {
    CHECK(grad_check(repeat_fn, random_tensor({1, 4}, rng)) < 1e-4);
  }
}

TEST_CASE("grad_check harness on known functions") {
  // f(x) = x^2 at 3: derivative 6 on both sides.
  const ScalarFn square = [](Tape& t, NodeId x) {
    return t.scale(t.mse(x, t.leaf(Tensor::scalar(0.0))), 1.0);
  };
  CHECK(grad_check(square, Tensor::scalar(3.0)) < 1e-8);

  // Linear functions are exact under central differences.
  const ScalarFn lin = [](Tape& t, NodeId x) {
    return t.sum_all(t.scale(x, 2.5));
  };
  CHECK(grad_check(lin, Tensor::row({1.0, -2.0, 0.5})) < 1e-9);
}

TEST_CASE("non-finite values are rejected") {
  Tape tape;
  Tensor bad = Tensor::row({1.0, std::numeric_limits<double>::infinity()});
  CHECK_THROWS_AS(tape.leaf(std::move(bad)), NumericError);

  // Large-but-finite inputs stay finite through the stabilized ops.
  const NodeId big = tape.leaf(Tensor::row({1e300, -1e300, 0.0}));
  CHECK_NOTHROW(tape.softmax_rows(big));
}

TEST_CASE("backward requires a scalar root") {
  Tape tape;
  const NodeId x = tape.leaf(Tensor::row({1.0, 2.0}));
  CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
}
