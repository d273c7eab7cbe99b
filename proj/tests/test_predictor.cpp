// Copyright 2026 The depscore Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>
#include <thread>
#include <vector>

#include <gtest/gtest.h>

#include "depscore/numkit/gradcheck.hpp"
#include "depscore/predictor.hpp"
#include "test_util.hpp"

namespace depscore {
namespace {

using testing::random_matrix;

const std::string kMock = DEPSCORE_MOCK_PREDICTOR;

std::vector<double> kernel(const Matrix& ctx, const Matrix& q, std::size_t j, double tau = 0.0) {
  return Predictor(KernelIcr{tau}).conditional_mean(ConditionalQuery{j, ctx, q});
}

TEST(Kernel, SingletonContextReturnsTarget) {
  const Matrix ctx = Matrix::from_rows({{0.3, -1.7, 2.5}});
  Rng rng = make_rng(1);
  const Matrix q = random_matrix(6, 3, rng, 5.0);
  for (std::size_t j = 0; j < 3; ++j)
    for (double m : kernel(ctx, q, j)) EXPECT_EQ(m, ctx(0, j));
}

TEST(Kernel, TwoPointSoftmaxByHand) {
  const Matrix ctx = Matrix::from_rows({{0, 0}, {1, 1}});
  const Matrix q = Matrix::from_rows({{0, 123.0}});
  // tau = max(1, p - 1) = 1; logits (0, -1); mean = e^-1 / (1 + e^-1).
  const double expect = std::exp(-1.0) / (1.0 + std::exp(-1.0));
  EXPECT_NEAR(kernel(ctx, q, 1)[0], expect, 1e-15);
  EXPECT_NEAR(expect, 0.2689414213699951, 1e-15);
}

TEST(Kernel, InterpolatesAtSmallTemperature) {
  Rng rng = make_rng(2);
  const Matrix ctx = random_matrix(20, 4, rng);
  for (std::size_t c = 0; c < ctx.rows(); ++c) {
    const Matrix q = Matrix::row_vector(ctx.row(c));
    EXPECT_NEAR(kernel(ctx, q, 2, 1e-3)[0], ctx(c, 2), 1e-3);
  }
}

TEST(Kernel, TemperatureDefault) {
  EXPECT_EQ(kernel_temperature(KernelIcr{}, 1), 1.0);
  EXPECT_EQ(kernel_temperature(KernelIcr{}, 2), 1.0);
  EXPECT_EQ(kernel_temperature(KernelIcr{}, 9), 8.0);
  EXPECT_EQ(kernel_temperature(KernelIcr{0.25}, 9), 0.25);
}

TEST(Kernel, ConvexCombinationPermutationAndDeterminism) {
  for (std::uint64_t t = 0; t < 30; ++t) {
    Rng rng = make_rng(t, 3);
    const std::size_t n = 1 + rng() % 30, p = 1 + rng() % 5;
    const Matrix ctx = random_matrix(n, p, rng, 2.0);
    const Matrix q = random_matrix(7, p, rng, 3.0);
    const std::size_t j = rng() % p;
    const auto m = kernel(ctx, q, j);
    const auto col = ctx.column(j);
    const auto [lo, hi] = std::minmax_element(col.begin(), col.end());
    for (double v : m) {
      EXPECT_GE(v, *lo - 1e-12);
      EXPECT_LE(v, *hi + 1e-12);
    }
    EXPECT_EQ(kernel(ctx, q, j), m);
    std::vector<std::size_t> perm = iota_indices(n);
    shuffle_indices(perm, rng);
    const auto mp = kernel(select_rows(ctx, perm), q, j);
    for (std::size_t i = 0; i < m.size(); ++i) EXPECT_NEAR(mp[i], m[i], 1e-12);
  }
}

TEST(Kernel, FarQueryDoesNotOverflow) {
  const Matrix ctx = Matrix::from_rows({{0, 1}, {1, 2}});
  const Matrix q = Matrix::from_rows({{1e6, 0}});
  EXPECT_EQ(kernel(ctx, q, 1)[0], 2.0);
}

TEST(Kernel, QueryValidation) {
  const Matrix ctx(3, 2), q(1, 3), empty(0, 2), q2(1, 2);
  EXPECT_THROW(kernel(ctx, q, 0), StructuralError);
  EXPECT_THROW(kernel(empty, q2, 0), StructuralError);
  EXPECT_THROW(kernel(ctx, q2, 2), StructuralError);
  EXPECT_THROW(Predictor(Cart{}).conditional_mean(ConditionalQuery{0, empty, q2}), StructuralError);
}

// ---------------------------------------------------------------------------
// Analytic gradients

double kernel_scalar(const Matrix& ctx, const Matrix& q, std::size_t j, std::size_t row) {
  return kernel(ctx, q, j)[row];
}

TEST(KernelGrad, SingletonHasZeroQueryGradient) {
  const Matrix ctx = Matrix::from_rows({{1, 2, 3}});
  const Matrix q = Matrix::from_rows({{0.5, -1, 4}});
  const auto g = Predictor(KernelIcr{}).conditional_mean_grad(ConditionalQuery{1, ctx, q});
  for (double v : g.d_query.values()) EXPECT_EQ(v, 0.0);
}

TEST(KernelGrad, MatchesCentralDifferences) {
  for (std::uint64_t t = 0; t < 10; ++t) {
    Rng rng = make_rng(t, 4);
    const std::size_t p = 2 + rng() % 3;
    Matrix ctx = t == 0 ? Matrix::from_rows({{0, 0}, {1, 1}}) : random_matrix(2 + rng() % 6, p, rng);
    Matrix q = random_matrix(2, ctx.cols(), rng);
    const std::size_t j = rng() % ctx.cols();
    const auto g = Predictor(KernelIcr{}).conditional_mean_grad(ConditionalQuery{j, ctx, q});
    const double eps = 1e-6;
    for (std::size_t i = 0; i < q.rows(); ++i) {
      for (std::size_t k = 0; k < q.cols(); ++k) {
        Matrix up = q, dn = q;
        up(i, k) += eps;
        dn(i, k) -= eps;
        const double num = (kernel_scalar(ctx, up, j, i) - kernel_scalar(ctx, dn, j, i)) / (2 * eps);
        EXPECT_NEAR(g.d_query(i, k), num, 1e-5 * std::max(1.0, std::abs(num)));
      }
      for (std::size_t c = 0; c < ctx.rows(); ++c)
        for (std::size_t k = 0; k < ctx.cols(); ++k) {
          Matrix up = ctx, dn = ctx;
          up(c, k) += eps;
          dn(c, k) -= eps;
          const double num = (kernel_scalar(up, q, j, i) - kernel_scalar(dn, q, j, i)) / (2 * eps);
          EXPECT_NEAR(g.d_context[i](c, k), num, 1e-5 * std::max(1.0, std::abs(num)));
        }
    }
  }
}

TEST(KernelGrad, SymmetricContextGivesZeroGradientAlongAxis) {
  // Rows mirrored about the query in column 0 carry equal targets.
  const Matrix ctx = Matrix::from_rows({{-1, 0, 2}, {1, 0, 2}, {-2, 1, 5}, {2, 1, 5}});
  const Matrix q = Matrix::from_rows({{0, 0.3, 0}});
  const auto g = Predictor(KernelIcr{}).conditional_mean_grad(ConditionalQuery{2, ctx, q});
  EXPECT_NEAR(g.d_query(0, 0), 0.0, 1e-15);
  EXPECT_NE(g.d_query(0, 1), 0.0);
}

TEST(KernelGrad, TapeNodeMatchesFiniteDifferences) {
  for (std::uint64_t t = 0; t < 10; ++t) {
    Rng rng = make_rng(t, 5);
    const std::size_t p = 1 + rng() % 4, n = 1 + rng() % 6, m = 1 + rng() % 4;
    const std::size_t j = rng() % p;
    const Matrix weights = random_matrix(m, 1, rng);
    const LossBuilder f = [&](ad::Tape& tape, std::span<const ad::Var> v) {
      const ad::Var mu = Predictor(KernelIcr{}).conditional_mean(v[0], v[1], j);
      return ad::mean_all(ad::mul(mu, tape.constant(weights)));
    };
    EXPECT_LT(grad_check(f, {random_matrix(m, p, rng), random_matrix(n, p, rng)}), 1e-4);
    // The tape value equals the plain estimator.
    ad::Tape tape;
    const Matrix q = random_matrix(m, p, rng), c = random_matrix(n, p, rng);
    const auto mu = Predictor(KernelIcr{}).conditional_mean(tape.constant(q), tape.constant(c), j);
    const auto plain = kernel(c, q, j);
    for (std::size_t i = 0; i < m; ++i) EXPECT_NEAR(mu.value()(i, 0), plain[i], 1e-14);
  }
}

TEST(KernelGrad, NonDifferentiableKindsRefuse) {
  const Matrix ctx(2, 2), q(1, 2);
  EXPECT_TRUE(Predictor(KernelIcr{}).supports_gradient());
  EXPECT_FALSE(Predictor(Cart{}).supports_gradient());
  EXPECT_FALSE(supports_gradient(External{"true"}));
  EXPECT_THROW(Predictor(Cart{}).conditional_mean_grad(ConditionalQuery{0, ctx, q}), ContractError);
  ad::Tape tape;
  EXPECT_THROW(Predictor(Cart{}).conditional_mean(tape.constant(q), tape.constant(ctx), 0), ContractError);
}

// ---------------------------------------------------------------------------
// CART

TEST(Cart, SingletonContextSingleLeaf) {
  const Matrix ctx = Matrix::from_rows({{4, 5, 6}});
  Rng rng = make_rng(6);
  const Matrix q = random_matrix(5, 3, rng);
  for (double m : Predictor(Cart{}).conditional_mean(ConditionalQuery{1, ctx, q})) EXPECT_EQ(m, 5.0);
}

TEST(Cart, RecoversStepFunction) {
  Matrix x(40, 1);
  std::vector<double> y(40);
  for (std::size_t i = 0; i < 40; ++i) {
    x(i, 0) = static_cast<double>(i);
    y[i] = i < 25 ? 1.0 : 3.0;
  }
  const auto tree = RegressionTree::fit(x, y, Cart{});
  EXPECT_EQ(tree.predict(std::vector<double>{3.0}), 1.0);
  EXPECT_EQ(tree.predict(std::vector<double>{30.0}), 3.0);
  EXPECT_EQ(tree.node_count(), 3u);
}

TEST(Cart, RespectsDepthAndLeafSize) {
  Rng rng = make_rng(7);
  const Matrix x = random_matrix(300, 3, rng);
  std::vector<double> y(300);
  for (std::size_t i = 0; i < 300; ++i) y[i] = std::sin(3 * x(i, 0)) + x(i, 1) * x(i, 2);
  const auto tree = RegressionTree::fit(x, y, Cart{4, 10});
  EXPECT_LE(tree.depth(), 4u);
  const auto deep = RegressionTree::fit(x, y, Cart{});
  EXPECT_LE(deep.depth(), 8u);
  EXPECT_GT(deep.depth(), 4u);
  // With min_leaf 200 of 300 rows no split is admissible.
  EXPECT_EQ(RegressionTree::fit(x, y, Cart{8, 200}).node_count(), 1u);
}

TEST(Cart, TiedGainsPickLowestFeature) {
  // Columns 0 and 1 are identical, so every split gain ties.
  const Matrix x = Matrix::from_rows({{0, 0}, {1, 1}, {2, 2}, {3, 3}});
  const std::vector<double> y{0, 0, 1, 1};
  const auto tree = RegressionTree::fit(x, y, Cart{8, 1});
  EXPECT_EQ(tree.predict(std::vector<double>{0.0, 9.0}), 0.0);
  EXPECT_EQ(tree.predict(std::vector<double>{9.0, 0.0}), 1.0);
}

TEST(Cart, CacheHitEqualsRecomputeAndIgnoresRowOrder) {
  Rng rng = make_rng(8);
  const Matrix ctx = random_matrix(120, 4, rng);
  const Matrix q = random_matrix(30, 4, rng);
  const Predictor pred(Cart{});
  const auto first = pred.conditional_mean(ConditionalQuery{2, ctx, q});
  const auto again = pred.conditional_mean(ConditionalQuery{2, ctx, q});
  const auto fresh = Predictor(Cart{}).conditional_mean(ConditionalQuery{2, ctx, q});
  EXPECT_EQ(first, again);
  EXPECT_EQ(first, fresh);
  std::vector<std::size_t> perm = iota_indices(ctx.rows());
  shuffle_indices(perm, rng);
  EXPECT_EQ(Predictor(Cart{}).conditional_mean(ConditionalQuery{2, select_rows(ctx, perm), q}), first);

  CartCache cache(Cart{});
  cart_conditional_mean(cache, ConditionalQuery{2, ctx, q});
  cart_conditional_mean(cache, ConditionalQuery{2, select_rows(ctx, perm), q});
  EXPECT_EQ(cache.size(), 1u);
  cart_conditional_mean(cache, ConditionalQuery{1, ctx, q});
  EXPECT_EQ(cache.size(), 2u);
}

TEST(PredictorKind, JsonRoundTrip) {
  for (const PredictorKind& k :
       {PredictorKind{KernelIcr{}}, PredictorKind{KernelIcr{0.5}}, PredictorKind{Cart{3, 7}},
        PredictorKind{External{"python bridge.py", 12.5}}}) {
    const auto j = kind_to_json(k);
    EXPECT_EQ(kind_to_json(kind_from_json(j)), j);
  }
  EXPECT_THROW(kind_from_json(nlohmann::json{{"kind", "tabpfn"}}), ConfigError);
}

// ---------------------------------------------------------------------------
// External predictor over the wire protocol

TEST(External, MockMatchesKernelAndSingleton) {
  Rng rng = make_rng(9);
  const Matrix ctx = random_matrix(25, 3, rng), q = random_matrix(10, 3, rng);
  const Predictor ext(External{kMock, 10});
  for (std::size_t j = 0; j < 3; ++j) {
    const auto a = ext.conditional_mean(ConditionalQuery{j, ctx, q});
    const auto b = kernel(ctx, q, j);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  }
  const Matrix one = Matrix::from_rows({{0.1, 0.2, 0.30000000000000004}});
  const auto s = ext.conditional_mean(ConditionalQuery{2, one, q});
  const auto k = kernel(one, q, 2);
  EXPECT_EQ(s, k);
  for (double v : s) EXPECT_EQ(v, 0.30000000000000004);
}

TEST(External, PermutationInvariant) {
  Rng rng = make_rng(10);
  const Matrix ctx = random_matrix(15, 3, rng), q = random_matrix(4, 3, rng);
  std::vector<std::size_t> perm = iota_indices(15);
  shuffle_indices(perm, rng);
  const Predictor ext(External{kMock, 10});
  const auto a = ext.conditional_mean(ConditionalQuery{0, ctx, q});
  const auto b = ext.conditional_mean(ConditionalQuery{0, select_rows(ctx, perm), q});
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

void expect_unavailable(const std::string& endpoint, double timeout = 5.0) {
  const Matrix ctx = Matrix::from_rows({{1, 2}, {3, 4}}), q = Matrix::from_rows({{0, 0}, {1, 1}});
  const Predictor ext(External{endpoint, timeout});
  EXPECT_THROW(ext.conditional_mean(ConditionalQuery{0, ctx, q}), PredictorUnavailable) << endpoint;
}

TEST(External, FaultsSurfaceAsPredictorUnavailable) {
  for (const char* fault : {"error", "garbage", "wrong-id", "short", "exit"})
    expect_unavailable(kMock + " --fault " + fault);
  expect_unavailable("/nonexistent/bridge");
  expect_unavailable("tcp://127.0.0.1:1");
  const auto t0 = std::chrono::steady_clock::now();
  expect_unavailable(kMock + " --fault hang", 0.5);
  EXPECT_LT(std::chrono::steady_clock::now() - t0, std::chrono::seconds(5));
}

TEST(External, FaultAfterFirstRequest) {
  const Matrix ctx = Matrix::from_rows({{1, 2}, {3, 4}}), q = Matrix::from_rows({{0, 0}});
  const Predictor ext(External{kMock + " --fault error --fault-after 1", 5});
  EXPECT_NO_THROW(ext.conditional_mean(ConditionalQuery{0, ctx, q}));
  EXPECT_THROW(ext.conditional_mean(ConditionalQuery{0, ctx, q}), PredictorUnavailable);
}

TEST(External, TcpTransport) {
  const int listener = ::socket(AF_INET, SOCK_STREAM, 0);
  ASSERT_GE(listener, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = 0;
  ASSERT_EQ(::bind(listener, reinterpret_cast<sockaddr*>(&addr), sizeof addr), 0);
  ASSERT_EQ(::listen(listener, 1), 0);
  socklen_t len = sizeof addr;
  ::getsockname(listener, reinterpret_cast<sockaddr*>(&addr), &len);
  const int port = ntohs(addr.sin_port);

  std::thread server([listener] {
    const int fd = ::accept(listener, nullptr, nullptr);
    std::string buf;
    char chunk[4096];
    for (int served = 0; served < 2;) {
      const auto nl = buf.find('\n');
      if (nl == std::string::npos) {
        const ssize_t r = ::read(fd, chunk, sizeof chunk);
        if (r <= 0) break;
        buf.append(chunk, static_cast<std::size_t>(r));
        continue;
      }
      const auto req = nlohmann::json::parse(buf.substr(0, nl));
      buf.erase(0, nl + 1);
      const Matrix ctx = matrix_from_json(req["context"]);
      const Matrix q = matrix_from_json(req["queries"]);
      const auto means = kernel(ctx, q, req["target_dim"].get<std::size_t>());
      const std::string out = nlohmann::json{{"id", req["id"]}, {"means", means}}.dump() + "\n";
      if (::write(fd, out.data(), out.size()) < 0) break;
      ++served;
    }
    ::close(fd);
  });

  Rng rng = make_rng(11);
  const Matrix ctx = random_matrix(10, 3, rng), q = random_matrix(5, 3, rng);
  {
    const Predictor ext(External{"tcp://127.0.0.1:" + std::to_string(port), 5});
    EXPECT_EQ(ext.conditional_mean(ConditionalQuery{1, ctx, q}), kernel(ctx, q, 1));
    EXPECT_EQ(ext.conditional_mean(ConditionalQuery{2, ctx, q}), kernel(ctx, q, 2));
  }
  server.join();
  ::close(listener);
}

TEST(External, GoldenTranscriptIsByteStable) {
  const std::string dir = DEPSCORE_FIXTURES;
  const std::string cmd = kMock + " < " + dir + "/golden_requests.ndjson";
  for (int run = 0; run < 2; ++run) {
    FILE* pipe = ::popen(cmd.c_str(), "r");
    ASSERT_NE(pipe, nullptr);
    std::string out;
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) out.append(buf, n);
    ASSERT_EQ(::pclose(pipe), 0);
    EXPECT_EQ(out, testing::read_text(dir + "/golden_responses.ndjson"));
  }
}

TEST(MatrixJson, RoundTripIsExact) {
  Rng rng = make_rng(12);
  const Matrix m = random_matrix(4, 3, rng, 1e3);
  EXPECT_EQ(matrix_from_json(nlohmann::json::parse(matrix_to_json(m).dump())), m);
  EXPECT_THROW(matrix_from_json(nlohmann::json::parse("[[1,2],[3]]")), StructuralError);
}

}  // namespace
}  // namespace depscore
