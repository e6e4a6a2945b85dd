#include <doctest.h>

#include <cmath>
#include <numeric>

#include "core/error.hpp"
#include "core/ops.hpp"
#include "grad_suite.hpp"

using namespace trust;
using trust::testing::gradient_check;
using trust::testing::kGradRelTol;
using trust::testing::random_away_from_zero;
using trust::testing::random_tensor;

namespace {

// Direct-loop cross-correlation, zero padding.
std::vector<double> naive_conv(const Tensor& in, const Tensor& k, std::size_t stride, std::size_t pad) {
  const std::size_t c = in.dim(0), h = in.dim(1), w = in.dim(2);
  const std::size_t o = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (w + 2 * pad - kw) / stride + 1;
  std::vector<double> out(o * oh * ow, 0.0);
  for (std::size_t f = 0; f < o; ++f)
    for (std::size_t r = 0; r < oh; ++r)
      for (std::size_t s = 0; s < ow; ++s) {
        double acc = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t i = 0; i < kh; ++i)
            for (std::size_t j = 0; j < kw; ++j) {
              const long y = static_cast<long>(r * stride + i) - static_cast<long>(pad);
              const long x = static_cast<long>(s * stride + j) - static_cast<long>(pad);
              if (y < 0 || x < 0 || y >= static_cast<long>(h) || x >= static_cast<long>(w)) continue;
              acc += in[(ch * h + y) * w + x] * k[((f * c + ch) * kh + i) * kw + j];
            }
        out[(f * oh + r) * ow + s] = acc;
      }
  return out;
}

}  // namespace

TEST_CASE("matmul matches triple loop") {
  const Tensor a = random_tensor({3, 5}, 1), b = random_tensor({5, 4}, 2);
  const Tensor c = matmul(a, b);
  REQUIRE(c.shape() == Shape{3, 4});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 5; ++k) acc += a[i * 5 + k] * b[k * 4 + j];
      CHECK(c[i * 4 + j] == doctest::Approx(acc).epsilon(1e-14));
    }
  CHECK_THROWS_AS(matmul(a, a), DimensionError);
}

TEST_CASE("transpose and permute move elements to the expected indices") {
  const Tensor a = random_tensor({2, 3, 4}, 3);
  const Tensor p = permute(a, {2, 0, 1});
  REQUIRE(p.shape() == Shape{4, 2, 3});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 4; ++k) CHECK(p[(k * 2 + i) * 3 + j] == a[(i * 3 + j) * 4 + k]);
  const Tensor m = random_tensor({2, 3}, 4);
  const Tensor t = transpose(m);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(t[j * 2 + i] == m[i * 3 + j]);
  CHECK_THROWS_AS(reshape(m, {4, 2}), DimensionError);
}

TEST_CASE("zero extents are rejected") { CHECK_THROWS_AS(Tensor(Shape{0, 3}), DimensionError); }

TEST_CASE("conv2d agrees with direct loops") {
  const Tensor in = random_tensor({2, 6, 5}, 5), k = random_tensor({3, 2, 3, 2}, 6);
  for (std::size_t stride : {1, 2})
    for (std::size_t pad : {0, 1}) {
      const Tensor out = conv2d(in, k, stride, pad);
      const auto ref = naive_conv(in, k, stride, pad);
      REQUIRE(out.size() == ref.size());
      for (std::size_t i = 0; i < ref.size(); ++i) CHECK(out[i] == doctest::Approx(ref[i]).epsilon(1e-13));
    }
  CHECK_THROWS_AS(conv2d(in, random_tensor({1, 2, 9, 9}, 7)), DimensionError);
  CHECK_THROWS_AS(conv2d(in, k, 0), ParameterError);
}

TEST_CASE("adaptive average pool uses floor-bounded windows") {
  const Tensor in = random_tensor({2, 7, 5}, 8);
  const Tensor out = adaptive_avg_pool(in, 3, 2);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j) {
        const std::size_t r0 = i * 7 / 3, r1 = (i + 1) * 7 / 3, c0 = j * 5 / 2, c1 = (j + 1) * 5 / 2;
        double acc = 0.0;
        for (std::size_t r = r0; r < r1; ++r)
          for (std::size_t s = c0; s < c1; ++s) acc += in[(c * 7 + r) * 5 + s];
        CHECK(out[(c * 3 + i) * 2 + j] == doctest::Approx(acc / double((r1 - r0) * (c1 - c0))).epsilon(1e-14));
      }
  CHECK_THROWS_AS(adaptive_avg_pool(in, 8, 2), ParameterError);
}

TEST_CASE("bilinear resize interpolates with half-pixel centres") {
  const Tensor in({1, 2, 2}, std::vector<double>{0.0, 1.0, 2.0, 3.0});
  const Tensor out = resize_bilinear(in, 4, 4);
  // output pixel 1 maps to source coordinate (1 + 0.5) / 2 - 0.5 = 0.25
  CHECK(out[1 * 4 + 1] == doctest::Approx(0.25 * 1.0 + 0.25 * 2.0).epsilon(1e-14));
  CHECK(out[0] == doctest::Approx(0.0));
  CHECK(out[15] == doctest::Approx(3.0));
  const Tensor same = resize_bilinear(in, 2, 2);
  for (std::size_t i = 0; i < 4; ++i) CHECK(same[i] == in[i]);
}

TEST_CASE("softmax rows sum to one and layernorm standardizes") {
  const Tensor x = random_tensor({4, 6}, 9, -5.0, 5.0);
  const Tensor s = softmax(x, 1);
  for (std::size_t r = 0; r < 4; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < 6; ++c) acc += s[r * 6 + c];
    CHECK(std::abs(acc - 1.0) < 1e-12);
  }
  const Tensor ln = layernorm(x, Tensor({6}, 1.0), Tensor({6}, 0.0));
  for (std::size_t r = 0; r < 4; ++r) {
    double mean = 0.0, var = 0.0;
    for (std::size_t c = 0; c < 6; ++c) mean += ln[r * 6 + c] / 6.0;
    for (std::size_t c = 0; c < 6; ++c) var += (ln[r * 6 + c] - mean) * (ln[r * 6 + c] - mean) / 6.0;
    CHECK(std::abs(mean) < 1e-12);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("backward accumulates into leaves across calls") {
  Tensor a = random_tensor({3}, 10);
  a.set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  const Tensor loss = reduce_sum(mul(a, a));
  tape.backward(loss);
  const auto once = a.grad();
  tape.backward(loss);
  const auto twice = a.grad();
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(once[i] == doctest::Approx(2.0 * a[i]));
    CHECK(twice[i] == doctest::Approx(4.0 * a[i]));
  }
  CHECK_THROWS_AS(tape.backward(mul(a, a)), ContractError);
}

TEST_CASE("every primitive passes a central finite-difference check") {
  for (const auto& c : testing::primitive_grad_cases()) {
    CAPTURE(c.name);
    CHECK(testing::run_grad_case(c).worst < kGradRelTol);
  }
}
