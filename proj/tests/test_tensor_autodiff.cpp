#include <cmath>
#include <string>

#include "doctest.h"
#include "redae/autodiff.hpp"
#include "redae/errors.hpp"
#include "redae/layers.hpp"
#include "redae/rng.hpp"
#include "redae/tensor.hpp"
#include "support.hpp"

using namespace redae;
using testing::random_tensor;

namespace {

std::vector<double> values(const Tensor4& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("constructors") {
  CHECK(values(Tensor4::zeros({1, 1, 2, 2})) == std::vector<double>{0, 0, 0, 0});
  CHECK(Tensor4::full({1, 1, 1, 1}, 3.5).item() == 3.5);
  CHECK_FALSE(Tensor4::zeros({1, 1, 2, 2}).has_grad());
  CHECK_THROWS_AS(Tensor4::from_values({1, 1, 2, 2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor4::zeros({1, 0, 2, 2}), ShapeError);
  CHECK_THROWS_AS(Tensor4::zeros({1ull << 40, 1ull << 40, 1ull << 40, 2}), ShapeError);
  CHECK_THROWS_AS(Tensor4::from_values({1, 1, 1, 1}, {NAN}), NumericError);
  CHECK_THROWS_AS(Tensor4::full({1, 1, 1, 1}, INFINITY), NumericError);
  const auto t = Tensor4::from_values({1, 2, 1, 2}, {1, 2, 3, 4});
  CHECK(t.at(0, 1, 0, 0) == 3);
  CHECK_THROWS(t.at(0, 2, 0, 0));
  CHECK_THROWS(t.item());
}

TEST_CASE("elementwise ops") {
  const auto a = Tensor4::from_values({1, 1, 1, 2}, {1, 2});
  const auto b = Tensor4::from_values({1, 1, 1, 2}, {3, 4});
  CHECK(values(add(a, b)) == std::vector<double>{4, 6});
  CHECK(values(sub(a, b)) == std::vector<double>{-2, -2});
  CHECK(values(mul(a, Tensor4::zeros(a.shape()))) == std::vector<double>{0, 0});
  CHECK(values(scale(a, 0.5)) == std::vector<double>{0.5, 1.0});
  CHECK(values(add(a, 1.0)) == std::vector<double>{2, 3});

  try {
    add(a, Tensor4::zeros({1, 1, 2, 1}));
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(1,1,1,2)") != std::string::npos);
    CHECK(msg.find("(1,1,2,1)") != std::string::npos);
  }

  const auto big = Tensor4::full({1, 1, 1, 1}, 1e300);
  CHECK_THROWS_AS(mul(big, big), NumericError);
}

TEST_CASE("add and mul are commutative and associative") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Shape s = testing::random_small_shape(rng);
    const auto a = random_tensor(s, rng), b = random_tensor(s, rng), c = random_tensor(s, rng);
    const auto ab = values(add(a, b)), ba = values(add(b, a));
    const auto l = values(add(add(a, b), c)), r = values(add(a, add(b, c)));
    const auto m1 = values(mul(mul(a, b), c)), m2 = values(mul(a, mul(b, c)));
    const auto mab = values(mul(a, b)), mba = values(mul(b, a));
    for (std::size_t i = 0; i < s.numel(); ++i) {
      CHECK(ab[i] == ba[i]);
      CHECK(mab[i] == mba[i]);
      CHECK(std::abs(l[i] - r[i]) <= 1e-12);
      CHECK(std::abs(m1[i] - m2[i]) <= 1e-12);
    }
  }
}

TEST_CASE("backward on hand graphs") {
  Tape::current().clear();
  auto x = Tensor4::zeros({1, 1, 2, 2});
  x.set_requires_grad(true);
  backward(sum(x));
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{1, 1, 1, 1});
  CHECK(Tape::current().empty());

  auto y = Tensor4::from_values({1, 1, 2, 2}, {1, 2, 3, 4});
  y.set_requires_grad(true);
  backward(sum(mul(y, y)));
  CHECK(std::vector<double>(y.grad().begin(), y.grad().end()) == std::vector<double>{2, 4, 6, 8});
}

TEST_CASE("leaf gradients accumulate across passes") {
  auto x = Tensor4::from_values({1, 1, 1, 2}, {1, 2});
  x.set_requires_grad(true);
  backward(sum(x));
  backward(sum(scale(x, 2.0)));
  CHECK(x.grad()[0] == 3.0);
  x.zero_grad();
  CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("backward misuse") {
  Tape::current().clear();
  auto x = Tensor4::from_values({1, 1, 1, 2}, {1, 2});
  x.set_requires_grad(true);
  CHECK_THROWS_AS(backward(scale(x, 2.0)), Error);
  Tape::current().clear();
  const auto l = sum(x);
  backward(l);
  CHECK_THROWS_AS(backward(l), TapeError);
}

TEST_CASE("no-grad guard suppresses recording") {
  Tape::current().clear();
  auto x = Tensor4::from_values({1, 1, 1, 2}, {1, 2});
  x.set_requires_grad(true);
  {
    NoGradGuard ng;
    const auto y = sum(mul(x, x));
    CHECK(Tape::current().empty());
    CHECK_FALSE(y.requires_grad());
  }
  (void)sum(x);
  CHECK_FALSE(Tape::current().empty());
  Tape::current().clear();
}

TEST_CASE("reshape and slice carry gradients") {
  Rng rng(3);
  const auto x = random_tensor({2, 3, 2, 2}, rng);
  const auto coeff = random_tensor({2, 2, 2, 2}, rng);
  CHECK(grad_check([&](const Tensor4& v) { return testing::probe(slice_channels(v, 1, 2), coeff); },
                   x) <= 1e-8);
  const auto c2 = random_tensor({1, 1, 4, 6}, rng);
  CHECK(grad_check([&](const Tensor4& v) {
          return testing::probe(reshape(v, {1, 1, 4, 6}), c2);
        }, x) <= 1e-8);
  CHECK_THROWS_AS(reshape(x, {1, 1, 5, 5}), ShapeError);
  CHECK_THROWS_AS(slice_channels(x, 2, 2), ShapeError);
}

TEST_CASE("grad_check") {
  Rng rng(5);
  const auto x = random_tensor({2, 3, 4, 4}, rng);
  CHECK(grad_check([](const Tensor4& v) { return sum(v); }, x) <= 1e-10);

  auto away = random_tensor({1, 2, 4, 4}, rng);
  while (testing::near_zero(away, 1e-3)) away = random_tensor({1, 2, 4, 4}, rng);
  CHECK(grad_check([](const Tensor4& v) { return sum(nn::relu(v)); }, away) <= 1e-6);

  // Random composite graph.
  for (int trial = 0; trial < 10; ++trial) {
    const Shape s = testing::random_small_shape(rng);
    const auto a = random_tensor(s, rng), b = random_tensor(s, rng);
    const auto err = grad_check([&](const Tensor4& v) {
      return sum(mul(add(mul(v, a), scale(v, 0.3)), sub(v, b)));
    }, random_tensor(s, rng));
    CHECK(err <= 1e-4);
  }

  // Finite at x, overflowing at both probes.
  const auto half = Tensor4::full({1, 1, 1, 1}, 0.5);
  const auto huge = Tensor4::full({1, 1, 1, 1}, 1e308);
  CHECK_THROWS_AS(grad_check([&](const Tensor4& v) {
    return v.item() == 0.5 ? sum(v) : add(sum(v), sum(scale(huge, 10.0)));
  }, half), NumericError);
}

TEST_CASE("rng") {
  // Mandated by the standard for std::mt19937_64 with the default seed.
  Rng std_seed(5489);
  std::uint64_t v = 0;
  for (int i = 0; i < 10000; ++i) v = std_seed.next_u64();
  CHECK(v == 9981545732273789042ull);

  Rng a(123), b(123);
  for (int i = 0; i < 1000; ++i) {
    CHECK(a.normal() == b.normal());
    const double u = a.uniform();
    CHECK(u == b.uniform());
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(a.below(7) == b.below(7));
  }
  Rng c(9), d(9);
  CHECK(values(random_tensor({2, 3, 4, 4}, c)) == values(random_tensor({2, 3, 4, 4}, d)));
  CHECK(Rng::derive(1, 2).next_u64() == Rng::derive(1, 2).next_u64());
  CHECK(Rng::derive(1, 2).next_u64() != Rng::derive(1, 3).next_u64());
}
