#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <numbers>

#include "molmamba/error.hpp"
#include "molmamba/kernels.hpp"
#include "op_cases.hpp"
#include "support.hpp"

using namespace molmamba;
using testing_support::gradcheck;
using testing_support::random_leaf;
using testing_support::random_values;

namespace {

constexpr double kOpTol = 1e-6;
using testing_support::Inputs;
using testing_support::op_cases;

class OpGradcheck : public ::testing::TestWithParam<std::size_t> {};

TEST_P(OpGradcheck, AnalyticMatchesCentralDifference) {
  const auto c = op_cases()[GetParam()];
  Rng rng(100 + GetParam());
  Inputs in;
  for (const auto& s : c.shapes) in.push_back(random_leaf(rng, s, c.lo, c.hi));
  EXPECT_LE(gradcheck(c.f, in), kOpTol) << c.name;
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradcheck, ::testing::Range<std::size_t>(0, op_cases().size()),
                         [](const auto& info) { return std::string(op_cases()[info.param].name); });

TEST(TensorOps, AnalyticPoints) {
  EXPECT_EQ(ops::silu(Tensor::scalar(0.0)).item(), 0.0);
  EXPECT_NEAR(ops::softplus(Tensor::scalar(0.0)).item(), std::numbers::ln2, 1e-15);
  const auto ln = ops::layernorm(Tensor::constant({1, 5}, {2, 2, 2, 2, 2}), 1);
  for (double v : ln.data()) EXPECT_EQ(v, 0.0);
}

TEST(TensorOps, FanOutAccumulates) {
  const auto x = Tensor::leaf({2}, {1.0, -3.0});
  ops::sum(ops::add(x, x)).backward();
  EXPECT_EQ(x.grad()[0], 2.0);
  EXPECT_EQ(x.grad()[1], 2.0);
}

TEST(TensorOps, ShapeErrorNamesOpAndShapes) {
  const auto a = Tensor::zeros({3, 4});
  const auto b = Tensor::zeros({4, 3});
  try {
    ops::add(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("add"), std::string::npos);
    EXPECT_NE(msg.find("3"), std::string::npos);
  }
  EXPECT_THROW(ops::matmul(a, a), ShapeError);
  EXPECT_THROW(ops::softmax(a, 2), ShapeError);
}

TEST(TensorOps, NonFiniteOutputFailsFast) {
  EXPECT_THROW(ops::exp(Tensor::constant({1}, {1000.0})), NumericError);
  EXPECT_THROW(ops::log(Tensor::constant({1}, {0.0})), NumericError);
}

TEST(TensorOps, InputsAreNotMutated) {
  Rng rng(3);
  for (const auto& c : op_cases()) {
    Inputs in;
    std::vector<std::vector<double>> before;
    for (const auto& s : c.shapes) {
      in.push_back(random_leaf(rng, s, c.lo, c.hi));
      before.emplace_back(in.back().data().begin(), in.back().data().end());
    }
    testing_support::project(c.f(in), std::vector<double>(c.f(in).size(), 1.0)).backward();
    for (std::size_t k = 0; k < in.size(); ++k) {
      EXPECT_TRUE(std::equal(before[k].begin(), before[k].end(), in[k].data().begin())) << c.name;
    }
  }
}

// Random compositions of unary and binary ops, depth up to 6.
TEST(TensorOps, RandomDagGradcheck) {
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    const auto f = [trial](const Inputs& x) {
      Rng pick(trial);
      std::vector<Tensor> pool(x.begin(), x.end());
      const auto depth = 1 + pick.below(6);
      for (std::uint64_t d = 0; d < depth; ++d) {
        const auto& a = pool[pick.below(pool.size())];
        const auto& b = pool[pick.below(pool.size())];
        switch (pick.below(7)) {
          case 0: pool.push_back(ops::add(a, b)); break;
          case 1: pool.push_back(ops::mul(a, b)); break;
          case 2: pool.push_back(ops::silu(a)); break;
          case 3: pool.push_back(ops::softmax(a, 1)); break;
          case 4: pool.push_back(ops::layernorm(a, 1)); break;
          case 5: pool.push_back(ops::matmul(a, ops::transpose(b))); break;
          default: pool.push_back(ops::sigmoid(ops::sub(a, b))); break;
        }
        if (pool.back().dim(1) != 3) pool.back() = ops::slice(ops::concat(std::vector{pool.back(), a}, 1), 1, 0, 3);
      }
      return pool.back();
    };
    Rng rng(50 + trial);
    Inputs in{random_leaf(rng, {3, 3}), random_leaf(rng, {3, 3})};
    EXPECT_LE(gradcheck(f, in), kOpTol) << "trial " << trial;
  }
}

TEST(Rng, SameSeedSameStream) {
  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, DifferentSeedsDiffer) {
  Rng a(0), b(1);
  int same = 0;
  for (int i = 0; i < 100; ++i) same += a.next_u64() == b.next_u64();
  EXPECT_EQ(same, 0);
}

TEST(Rng, FanInInitVariance) {
  Rng rng(11);
  const auto v = init_fan_in_uniform(rng, 100, 100000);
  double m = 0.0, sq = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  for (double x : v) sq += (x - m) * (x - m);
  const double var = sq / static_cast<double>(v.size());
  EXPECT_NEAR(var, 0.01, 0.002);
}

TEST(Kernels, GemmMatchesReferenceBitwise) {
  Rng rng(5);
  for (bool ta : {false, true})
    for (bool tb : {false, true}) {
      const std::size_t m = 37, n = 29, k = 41;
      const auto a = random_values(rng, m * k), b = random_values(rng, k * n);
      std::vector<double> c1(m * n, 0.5), c2(m * n, 0.5);
      set_worker_threads(4);
      kernels::gemm(m, n, k, a, ta, b, tb, c1, true);
      reference::gemm(m, n, k, a, ta, b, tb, c2, true);
      for (std::size_t i = 0; i < c1.size(); ++i) ASSERT_EQ(std::bit_cast<std::uint64_t>(c1[i]), std::bit_cast<std::uint64_t>(c2[i]));
    }
  set_worker_threads(1);
}

TEST(Kernels, ScanMatchesReferenceBitwise) {
  Rng rng(6);
  const ScanDims d{17, 12, 5};
  const auto u = random_values(rng, 17 * 12), delta = random_values(rng, 17 * 12, 0.01, 0.5);
  auto a = random_values(rng, 12 * 5, -2.0, -0.1);
  const auto b = random_values(rng, 17 * 5), c = random_values(rng, 17 * 5), gy = random_values(rng, 17 * 12);
  std::vector<double> y1(17 * 12), y2(17 * 12), s1(17 * 12 * 5), s2(17 * 12 * 5);
  set_worker_threads(3);
  kernels::selective_scan_forward(d, u, delta, a, b, c, y1, s1);
  reference::selective_scan_forward(d, u, delta, a, b, c, y2, s2);
  EXPECT_EQ(y1, y2);
  EXPECT_EQ(s1, s2);
  std::vector<double> g1[5], g2[5];
  for (auto* g : {g1, g2}) {
    g[0].resize(u.size());
    g[1].resize(u.size());
    g[2].resize(a.size());
    g[3].resize(b.size());
    g[4].resize(c.size());
  }
  kernels::selective_scan_backward(d, u, delta, a, b, c, s1, gy, g1[0], g1[1], g1[2], g1[3], g1[4]);
  reference::selective_scan_backward(d, u, delta, a, b, c, s2, gy, g2[0], g2[1], g2[2], g2[3], g2[4]);
  for (int k = 0; k < 5; ++k) EXPECT_EQ(g1[k], g2[k]) << "gradient " << k;
  set_worker_threads(1);
}

TEST(Kernels, ScanMatchesNaiveRecurrence) {
  Rng rng(8);
  const std::size_t l = 9, ch = 6, n = 4;
  const auto u = random_values(rng, l * ch), delta = random_values(rng, l * ch, 0.01, 1.0);
  const auto a = random_values(rng, ch * n, -3.0, -0.1), b = random_values(rng, l * n), c = random_values(rng, l * n);
  const auto y = ops::selective_scan(Tensor::constant({l, ch}, u), Tensor::constant({l, ch}, delta),
                                     Tensor::constant({ch, n}, a), Tensor::constant({l, n}, b),
                                     Tensor::constant({l, n}, c));
  const auto want = testing_support::naive_scan(l, ch, n, u, delta, a, b, c);
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(y[i], want[i], 1e-12);
}

TEST(Params, DuplicateNameRejected) {
  ParamStore s;
  s.add("a.w", {2}, {1, 2});
  EXPECT_THROW(s.add("a.w", {2}, {1, 2}), ValidationError);
  EXPECT_THROW(s.add("b", {3}, {1, 2}), ValidationError);
}

TEST(Params, CheckpointRoundTripIsBitExact) {
  Rng rng(9);
  ParamStore s;
  s.add("x", {2, 3}, random_values(rng, 6, -1e300, 1e300));
  s.add("y", {4}, {0.0, -0.0, 5e-324, std::numeric_limits<double>::max()});
  const auto bytes = serialize_checkpoint(s);
  EXPECT_EQ(bytes.substr(0, 7), "MMCKPT1");
  ParamStore t = s.clone();
  for (std::size_t i = 0; i < t.size(); ++i)
    for (auto& v : t.values(i)) v = 1.0;
  deserialize_checkpoint(bytes, t);
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t k = 0; k < s.values(i).size(); ++k)
      EXPECT_EQ(std::bit_cast<std::uint64_t>(s.values(i)[k]), std::bit_cast<std::uint64_t>(t.values(i)[k]));
  EXPECT_EQ(serialize_checkpoint(t), bytes);
}

TEST(Params, CheckpointRejectsMismatches) {
  ParamStore s;
  s.add("x", {2}, {1, 2});
  const auto bytes = serialize_checkpoint(s);
  ParamStore other;
  other.add("x", {1, 2}, {1, 2});
  EXPECT_THROW(deserialize_checkpoint(bytes, other), ValidationError);
  ParamStore same = s.clone();
  EXPECT_THROW(deserialize_checkpoint(bytes + "x", same), ValidationError);
  EXPECT_THROW(deserialize_checkpoint("MMCKPT0" + bytes.substr(7), same), ValidationError);
}

}  // namespace
