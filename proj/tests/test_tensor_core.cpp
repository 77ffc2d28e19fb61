// Copyright 2026 The FFR Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>

#include "doctest.h"
#include "ffr/ops.hpp"
#include "ffr/network.hpp"
#include "support/oracles.hpp"

using namespace ffr;
using ffr::testing::check_gradients;
using ffr::testing::max_abs_diff;
using ffr::testing::random_tensor;

namespace {

// Squared error against random targets gives every output element a
// distinct upstream gradient.
Tensor probe(const Tensor& y, const Tensor& targets) { return mse(y, targets); }

void require_grad_ok(const ffr::testing::GradCheck& r) {
  INFO(r.worst);
  CHECK(r.checked > 0);
  CHECK(r.max_rel_error < 1e-4);
}

}  // namespace

TEST_CASE("tensor construction keeps values and checks sizes") {
  CHECK(Tensor::scalar(2.5).item() == 2.5);
  Tensor t(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  CHECK(t.dim(1) == 3);
  CHECK(t[4] == 5.0);
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(t.dim(2), DimensionError);
  CHECK_THROWS_AS(t.item(), UsageError);
}

TEST_CASE("conv2d matches the nested-loop oracle") {
  Rng rng(7);
  const std::size_t configs[][4] = {{3, 1, 1, 5}, {3, 2, 1, 8}, {1, 1, 0, 4}, {1, 2, 0, 6},
                                    {5, 1, 2, 7}, {3, 1, 0, 3}, {2, 2, 0, 6}};
  for (const auto& c : configs) {
    const std::size_t k = c[0], stride = c[1], pad = c[2], hw = c[3];
    const Tensor x = random_tensor({2, 3, hw, hw}, rng);
    const Tensor w = random_tensor({4, 3, k, k}, rng);
    const Tensor b = random_tensor({4}, rng);
    const Tensor y = conv2d(x, w, b, stride, pad);
    CHECK(max_abs_diff(y.data(), ffr::testing::naive_conv2d(x, w, b, stride, pad)) < 1e-12);
    const Tensor y0 = conv2d(x, w, {}, stride, pad);
    CHECK(max_abs_diff(y0.data(), ffr::testing::naive_conv2d(x, w, {}, stride, pad)) < 1e-12);
  }
}

TEST_CASE("conv2d rejects mismatched operands") {
  Rng rng(1);
  const Tensor x = random_tensor({1, 3, 4, 4}, rng);
  CHECK_THROWS_AS(conv2d(x, random_tensor({2, 2, 3, 3}, rng), {}, 1, 1), DimensionError);
  CHECK_THROWS_AS(conv2d(x, random_tensor({2, 3, 5, 5}, rng), {}, 1, 0), ConfigError);
  CHECK_THROWS_AS(conv2d(x, random_tensor({2, 3, 3, 3}, rng), {}, 0, 1), ConfigError);
}

TEST_CASE("linear matches the matmul oracle") {
  Rng rng(3);
  const Tensor x = random_tensor({5, 7}, rng);
  const Tensor w = random_tensor({4, 7}, rng);
  const Tensor b = random_tensor({4}, rng);
  CHECK(max_abs_diff(linear(x, w, b).data(), ffr::testing::naive_linear(x, w, b)) < 1e-12);
  CHECK_THROWS_AS(linear(x, random_tensor({4, 6}, rng)), DimensionError);
}

TEST_CASE("identity kernel passes every channel through") {
  Rng rng(5);
  for (std::size_t k : {1, 3, 5}) {
    const Tensor x = random_tensor({2, 4, 6, 6}, rng);
    const Tensor y = conv2d(x, identity_kernel(4, k), {}, 1, (k - 1) / 2);
    CHECK(max_abs_diff(y.data(), x.data()) == 0.0);
  }
}

TEST_CASE("conv2d is linear in its input and deterministic") {
  Rng rng(11);
  const Tensor a = random_tensor({2, 3, 6, 6}, rng);
  const Tensor b = random_tensor({2, 3, 6, 6}, rng);
  const Tensor w = random_tensor({5, 3, 3, 3}, rng);
  const Tensor lhs = conv2d(add(scale(a, 2.0), scale(b, -0.5)), w, {}, 1, 1);
  const Tensor rhs = add(scale(conv2d(a, w, {}, 1, 1), 2.0), scale(conv2d(b, w, {}, 1, 1), -0.5));
  CHECK(max_abs_diff(lhs.data(), rhs.data()) < 1e-12);
  CHECK(max_abs_diff(conv2d(a, w, {}, 1, 1).data(), conv2d(a, w, {}, 1, 1).data()) == 0.0);
}

TEST_CASE("maxpool takes the first maximum and routes its gradient") {
  Tensor x(Shape{1, 1, 2, 2}, std::vector<double>{1, 3, 3, 0}, true);
  Tape tape;
  TapeScope scope(tape);
  const Tensor y = maxpool2d(x, 2, 2);
  CHECK(y.item() == 3.0);
  tape.backward(l1_norm(y));
  CHECK(x.grad()[1] == 1.0);
  CHECK(x.grad()[2] == 0.0);
}

TEST_CASE("softmax cross-entropy equals the log-sum-exp formula") {
  Tensor logits(Shape{2, 3}, std::vector<double>{1, 2, 3, 0, -1, 5});
  const std::vector<int> labels{2, 0};
  double expected = 0.0;
  for (std::size_t b = 0; b < 2; ++b) {
    double z = 0.0;
    for (std::size_t c = 0; c < 3; ++c) z += std::exp(logits[b * 3 + c]);
    expected += std::log(z) - logits[b * 3 + static_cast<std::size_t>(labels[b])];
  }
  CHECK(softmax_cross_entropy(logits, labels).item() == doctest::Approx(expected / 2).epsilon(1e-14));
  const std::vector<int> bad{3, 0};
  CHECK_THROWS_AS(softmax_cross_entropy(logits, bad), DimensionError);
}

TEST_CASE("batchnorm eval mode uses running statistics") {
  Rng rng(2);
  const Tensor x = random_tensor({2, 2, 3, 3}, rng);
  Tensor gamma(Shape{2}, std::vector<double>{2.0, 0.5});
  Tensor beta(Shape{2}, std::vector<double>{0.1, -0.3});
  BatchNormState st(2);
  st.running_mean = {0.2, -0.4};
  st.running_var = {1.5, 0.25};
  const Tensor y = batchnorm2d(x, gamma, beta, st, Mode::Eval);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const std::size_t c = (i / 9) % 2;
    const double e = gamma[c] * (x[i] - st.running_mean[c]) / std::sqrt(st.running_var[c] + 1e-5) + beta[c];
    CHECK(y[i] == doctest::Approx(e).epsilon(1e-14));
  }
}

TEST_CASE("batchnorm train mode updates running statistics with momentum 0.1") {
  Tensor x(Shape{2, 1, 1, 2}, std::vector<double>{1, 2, 3, 6});
  Tensor gamma(Shape{1}, std::vector<double>{1.0});
  Tensor beta(Shape{1}, std::vector<double>{0.0});
  BatchNormState st(1);
  batchnorm2d(x, gamma, beta, st, Mode::Train);
  // mean 3, unbiased variance (4 + 1 + 0 + 9) / 3
  CHECK(st.running_mean[0] == doctest::Approx(0.3));
  CHECK(st.running_var[0] == doctest::Approx(0.9 + 0.1 * 14.0 / 3.0));
}

TEST_CASE("every op matches central finite differences") {
  Rng rng(42);
  SUBCASE("conv2d") {
    for (std::size_t stride : {1, 2}) {
      Tensor x = random_tensor({2, 2, 5, 5}, rng, true);
      Tensor w = random_tensor({3, 2, 3, 3}, rng, true);
      Tensor b = random_tensor({3}, rng, true);
      const Tensor p = random_tensor({2, 3, 3, 3}, rng);
      auto f = [&] { return probe(conv2d(x, w, b, stride, 1), p); };
      if (stride == 2) require_grad_ok(check_gradients(f, {{"x", x}, {"w", w}, {"b", b}}));
      if (stride == 1) {
        const Tensor p1 = random_tensor({2, 3, 5, 5}, rng);
        require_grad_ok(check_gradients([&] { return probe(conv2d(x, w, b, 1, 1), p1); },
                                        {{"x", x}, {"w", w}, {"b", b}}));
      }
    }
  }
  SUBCASE("linear") {
    Tensor x = random_tensor({3, 4}, rng, true);
    Tensor w = random_tensor({2, 4}, rng, true);
    Tensor b = random_tensor({2}, rng, true);
    const Tensor p = random_tensor({3, 2}, rng);
    require_grad_ok(check_gradients([&] { return probe(linear(x, w, b), p); },
                                    {{"x", x}, {"w", w}, {"b", b}}));
  }
  SUBCASE("batchnorm train") {
    Tensor x = random_tensor({3, 2, 2, 2}, rng, true);
    Tensor g = random_tensor({2}, rng, true);
    Tensor b = random_tensor({2}, rng, true);
    const Tensor p = random_tensor({3, 2, 2, 2}, rng);
    BatchNormState st(2);
    require_grad_ok(check_gradients(
        [&] { return probe(batchnorm2d(x, g, b, st, Mode::Train), p); },
        {{"x", x}, {"gamma", g}, {"beta", b}}));
  }
  SUBCASE("batchnorm eval") {
    Tensor x = random_tensor({2, 2, 2, 2}, rng, true);
    Tensor g = random_tensor({2}, rng, true);
    Tensor b = random_tensor({2}, rng, true);
    const Tensor p = random_tensor({2, 2, 2, 2}, rng);
    BatchNormState st(2);
    st.running_var = {0.7, 1.3};
    require_grad_ok(check_gradients(
        [&] { return probe(batchnorm2d(x, g, b, st, Mode::Eval), p); },
        {{"x", x}, {"gamma", g}, {"beta", b}}));
  }
  SUBCASE("pooling, activation and reshaping") {
    Tensor x = random_tensor({2, 2, 4, 4}, rng, true);
    const Tensor p2 = random_tensor({2, 2, 2, 2}, rng);
    const Tensor pc = random_tensor({2, 2}, rng);
    const Tensor pf = random_tensor({2, 32}, rng);
    const Tensor pr = random_tensor({2, 2, 4, 4}, rng);
    require_grad_ok(check_gradients([&] { return probe(maxpool2d(x, 2, 2), p2); }, {{"x", x}}));
    require_grad_ok(check_gradients([&] { return probe(global_avgpool(x), pc); }, {{"x", x}}));
    require_grad_ok(check_gradients([&] { return probe(flatten(x), pf); }, {{"x", x}}));
    require_grad_ok(check_gradients([&] { return probe(relu(x), pr); }, {{"x", x}}));
  }
  SUBCASE("arithmetic and losses") {
    Tensor a = random_tensor({3, 4}, rng, true);
    Tensor b = random_tensor({3, 4}, rng, true);
    const std::vector<int> labels{1, 3, 0};
    require_grad_ok(check_gradients([&] { return l1_norm(add(a, scale(b, 0.7))); },
                                    {{"a", a}, {"b", b}}));
    require_grad_ok(check_gradients([&] { return l1_norm(sub(a, b)); }, {{"a", a}, {"b", b}}));
    require_grad_ok(check_gradients([&] { return mse(a, b); }, {{"a", a}, {"b", b}}));
    require_grad_ok(check_gradients([&] { return softmax_cross_entropy(a, labels); }, {{"a", a}}));
  }
  SUBCASE("scatter_channels") {
    Tensor x = random_tensor({2, 2, 3, 3}, rng, true);
    const std::vector<std::size_t> pos{1, 3};
    const Tensor p = random_tensor({2, 4, 3, 3}, rng);
    require_grad_ok(check_gradients([&] { return probe(scatter_channels(x, pos, 4), p); },
                                    {{"x", x}}));
  }
}

TEST_CASE("scatter_channels places channels and zero-fills the rest") {
  Tensor x(Shape{1, 2, 1, 1}, std::vector<double>{5, 7});
  const std::vector<std::size_t> pos{0, 2};
  const Tensor y = scatter_channels(x, pos, 3);
  CHECK(std::vector<double>(y.data().begin(), y.data().end()) == std::vector<double>{5, 0, 7});
  const std::vector<std::size_t> bad{2, 1};
  CHECK_THROWS_AS(scatter_channels(x, bad, 3), DimensionError);
}

TEST_CASE("tape visits shared subexpressions once per use") {
  Tensor x(Shape{1}, std::vector<double>{3.0}, true);
  Tape tape;
  TapeScope scope(tape);
  const Tensor y = add(x, x);
  tape.backward(l1_norm(add(y, x)));
  CHECK(x.grad()[0] == 3.0);
}

TEST_CASE("no-grad guard records nothing") {
  Tensor x(Shape{2}, std::vector<double>{1.0, -2.0}, true);
  Tape tape;
  TapeScope scope(tape);
  {
    NoGradGuard guard;
    const Tensor y = scale(x, 2.0);
    CHECK(tape.size() == 0);
    CHECK_FALSE(y.requires_grad());
  }
  const Tensor z = scale(x, 2.0);
  CHECK(tape.size() == 1);
}

TEST_CASE("backward rejects non-scalar and constant losses") {
  Tape tape;
  TapeScope scope(tape);
  Tensor x(Shape{2}, std::vector<double>{1.0, 2.0}, true);
  CHECK_THROWS_AS(tape.backward(scale(x, 1.0)), UsageError);
  CHECK_THROWS_AS(tape.backward(Tensor::scalar(1.0)), UsageError);
}
