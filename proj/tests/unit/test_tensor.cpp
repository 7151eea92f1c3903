#include <doctest.h>

#include <cstring>

#include "mtpbias/ops.hpp"
#include "mtpbias/tensor.hpp"

using namespace mtpbias;

TEST_CASE("tensor shape and data invariants") {
  auto t = TensorF::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t.size() == 6);
  CHECK(t(1, 2) == 6.0f);
  CHECK_THROWS_AS(TensorF::from_data({2, 2}, {1, 2, 3}), DimensionError);
}

TEST_CASE("grad buffer matches data shape") {
  auto t = TensorF::zeros({3, 2}, true);
  t.grad()[5] = 1.0f;
  CHECK(t.grad_vec().size() == 6);
}

TEST_CASE("backward accumulates through a diamond") {
  // y = (x + x) . (x + x) elementwise sum; dy/dx = 8x
  auto x = TensorD::from_data({3}, {1.0, -2.0, 0.5}, true);
  auto s = ops::add(x, x);
  auto y = ops::sum(ops::mul(s, s));
  y.backward();
  for (int i = 0; i < 3; ++i) CHECK(x.grad()[i] == doctest::Approx(8.0 * x[i]));
}

TEST_CASE("backward requires a scalar root") {
  auto x = TensorD::from_data({2}, {1.0, 2.0}, true);
  auto y = ops::add(x, x);
  CHECK_THROWS_AS(y.backward(), DimensionError);
}

TEST_CASE("no tape is built without requires_grad") {
  auto a = TensorF::from_data({2}, {1, 2});
  auto b = TensorF::from_data({2}, {3, 4});
  auto c = ops::add(a, b);
  CHECK_FALSE(c.requires_grad());
  CHECK(c.node()->parents.empty());
}

TEST_CASE("forward passes are bit-deterministic") {
  auto a = TensorF::from_data({2, 2}, {0.1f, -0.7f, 3.14f, 2.0f});
  auto b = TensorF::from_data({2, 2}, {1.5f, 0.25f, -1.0f, 0.5f});
  auto c1 = ops::matmul(a, b);
  auto c2 = ops::matmul(a, b);
  CHECK(std::memcmp(c1.data(), c2.data(), sizeof(float) * 4) == 0);
}
