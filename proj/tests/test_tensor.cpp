#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "macrl/rng.hpp"
#include "macrl/tensor.hpp"

using namespace macrl;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<T> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>(std::move(shape), std::move(v));
}

using F = std::function<Tensor<double>(Graph<double>&, std::vector<Tensor<double>>&)>;

double check64(const F& f, std::vector<Tensor<double>> pts) {
  return grad_check<double>(f, std::move(pts), 1e-4);
}

}  // namespace

// ---- forward oracles ----

TEST_CASE("matmul against identity and a hand product") {
  Graph<double> g;
  Tensor<double> I(Shape{3, 3});
  {
    auto d = I.mutable_data();
    d[0] = d[4] = d[8] = 1.0;
  }
  Rng rng(3);
  auto A = random_tensor<double>({3, 3}, rng);
  auto out = matmul<double>(&g, I, A);
  for (int i = 0; i < 9; ++i) CHECK(out.data()[i] == A.data()[i]);

  Tensor<double> x({2, 2}, {1, 2, 3, 4});
  Tensor<double> y({2, 2}, {5, 6, 7, 8});
  auto p = matmul<double>(&g, x, y);
  CHECK(p.data()[0] == 19.0);
  CHECK(p.data()[1] == 22.0);
  CHECK(p.data()[2] == 43.0);
  CHECK(p.data()[3] == 50.0);
}

TEST_CASE("batched matmul with shared and per-batch rhs") {
  Graph<double> g;
  Tensor<double> a({2, 2, 2}, {1, 0, 0, 1, 2, 0, 0, 2});  // [I, 2I]
  Tensor<double> b({2, 2}, {1, 2, 3, 4});
  auto out = matmul<double>(&g, a, b);
  CHECK(out.shape() == Shape{2, 2, 2});
  CHECK(out.at({0, 0, 1}) == 2.0);
  CHECK(out.at({1, 0, 1}) == 4.0);
  CHECK(out.at({1, 1, 0}) == 6.0);

  Tensor<double> b2({2, 2, 2}, {1, 2, 3, 4, 10, 20, 30, 40});
  auto out2 = matmul<double>(&g, a, b2);
  CHECK(out2.at({1, 1, 1}) == 80.0);
}

TEST_CASE("softmax rows sum to one and match exp normalization") {
  Graph<double> g;
  Rng rng(5);
  auto x = random_tensor<double>({4, 7}, rng, -3, 3);
  auto y = softmax<double>(&g, x);
  for (int r = 0; r < 4; ++r) {
    double s = 0;
    for (int c = 0; c < 7; ++c) s += y.at({r, c});
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  auto ls = log_softmax<double>(&g, x);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 7; ++c)
      CHECK(std::exp(ls.at({r, c})) == doctest::Approx(y.at({r, c})).epsilon(1e-12));
}

TEST_CASE("l2_normalize yields unit rows") {
  Graph<double> g;
  Rng rng(6);
  auto x = random_tensor<double>({5, 9}, rng, -2, 2);
  auto y = l2_normalize<double>(&g, x);
  for (int r = 0; r < 5; ++r) {
    double s = 0;
    for (int c = 0; c < 9; ++c) s += y.at({r, c}) * y.at({r, c});
    CHECK(std::sqrt(s) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("broadcast add of a bias over leading axes") {
  Graph<double> g;
  Tensor<double> x({2, 2, 3}, {0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3});
  Tensor<double> b({3}, {10, 20, 30});
  auto y = add<double>(&g, x, b);
  CHECK(y.at({0, 0, 0}) == 10.0);
  CHECK(y.at({0, 1, 2}) == 31.0);
  CHECK(y.at({1, 1, 1}) == 23.0);
  // also small-minus-large direction
  auto z = sub<double>(&g, b, x);
  CHECK(z.at({1, 1, 1}) == 17.0);
}

TEST_CASE("transpose swaps axes and is its own inverse") {
  Graph<double> g;
  Rng rng(7);
  auto x = random_tensor<double>({2, 3, 4, 5}, rng);
  auto t = transpose<double>(&g, x, 1, 3);
  CHECK(t.shape() == Shape{2, 5, 4, 3});
  CHECK(t.at({1, 4, 2, 0}) == x.at({1, 0, 2, 4}));
  auto back = transpose<double>(&g, t, 1, 3);
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(back.data()[i] == x.data()[i]);
}

TEST_CASE("concat along middle axis") {
  Graph<double> g;
  Tensor<double> a({2, 1, 2}, {1, 2, 3, 4});
  Tensor<double> b({2, 2, 2}, {5, 6, 7, 8, 9, 10, 11, 12});
  auto c = concat<double>(&g, {a, b}, 1);
  CHECK(c.shape() == Shape{2, 3, 2});
  CHECK(c.at({0, 0, 0}) == 1.0);
  CHECK(c.at({0, 1, 0}) == 5.0);
  CHECK(c.at({1, 0, 1}) == 4.0);
  CHECK(c.at({1, 2, 1}) == 12.0);
}

TEST_CASE("gather_rows picks rows per batch entry") {
  Graph<double> g;
  Tensor<double> x({2, 3, 2}, {0, 1, 10, 11, 20, 21, 100, 101, 110, 111, 120, 121});
  auto y = gather_rows<double>(&g, x, {2, 0, 1, 1}, Shape{2, 2});
  CHECK(y.shape() == Shape{2, 2, 2});
  CHECK(y.at({0, 0, 0}) == 20.0);
  CHECK(y.at({0, 1, 1}) == 1.0);
  CHECK(y.at({1, 0, 0}) == 110.0);
  CHECK(y.at({1, 1, 1}) == 111.0);
}

TEST_CASE("gather_flat applies a per-item permutation with batch axes") {
  Graph<double> g;
  Tensor<double> x({2, 2, 2}, {0, 1, 2, 3, 10, 11, 12, 13});
  auto y = gather_flat<double>(&g, x, {3, 2, 1, 0}, Shape{4}, 1);
  CHECK(y.shape() == Shape{2, 4});
  CHECK(y.at({0, 0}) == 3.0);
  CHECK(y.at({0, 3}) == 0.0);
  CHECK(y.at({1, 0}) == 13.0);
}

TEST_CASE("mean_axis and sum_all") {
  Graph<double> g;
  Tensor<double> x({2, 2}, {1, 2, 3, 4});
  auto m0 = mean_axis<double>(&g, x, 0);
  CHECK(m0.shape() == Shape{2});
  CHECK(m0.data()[0] == 2.0);
  CHECK(m0.data()[1] == 3.0);
  auto m1 = mean_axis<double>(&g, x, 1);
  CHECK(m1.data()[0] == 1.5);
  CHECK(m1.data()[1] == 3.5);
  auto s = sum_all<double>(&g, x);
  CHECK(s.item() == 10.0);
}

// ---- error paths ----

TEST_CASE("shape errors name the op and the shapes") {
  Graph<double> g;
  Tensor<double> a({2, 3});
  Tensor<double> b({4, 2});
  try {
    matmul<double>(&g, a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,2]") != std::string::npos);
  }
  Tensor<double> c({2, 2});
  CHECK_THROWS_AS(add<double>(&g, a, c), ShapeError);
  CHECK_THROWS_AS(reshape<double>(&g, a, Shape{5}), ShapeError);
  CHECK_THROWS_AS(transpose<double>(&g, a, 0, 2), ShapeError);
  CHECK_THROWS_AS(gather_rows<double>(&g, a, {3}, Shape{1}), ShapeError);
}

TEST_CASE("non-finite results are rejected naming the op") {
  Graph<double> g;
  Tensor<double> x({2}, {-1.0, 1.0});
  try {
    log<double>(&g, x);
    FAIL("expected ValueError");
  } catch (const ValueError& e) {
    CHECK(std::string(e.what()).find("log") != std::string::npos);
  }
  Tensor<double> y({1}, {-4.0});
  CHECK_THROWS_AS(sqrt<double>(&g, y), ValueError);
  // exp overflow at 64-bit
  Tensor<double> z({1}, {1e4});
  CHECK_THROWS_AS((macrl::exp<double>(&g, z)), ValueError);
}

TEST_CASE("backward wants a scalar root from the same graph") {
  Graph<double> g;
  Tensor<double> x({2, 2}, {1, 2, 3, 4});
  x.set_requires_grad(true);
  auto y = scalar_mul<double>(&g, x, 2.0);
  CHECK_THROWS_AS(g.backward(y), ShapeError);
  Graph<double> other;
  auto s = sum_all<double>(&g, y);
  CHECK_THROWS_AS(other.backward(s), Error);
  g.backward(s);
  CHECK_THROWS_AS(g.backward(s), Error);  // only one reverse pass per graph
}

TEST_CASE("live graph refuses in-place mutation, detached tensors allow it") {
  Tensor<double> x({2}, {1, 2});
  x.set_requires_grad(true);
  {
    Graph<double> g;
    auto y = scalar_mul<double>(&g, x, 3.0);
    CHECK_THROWS_AS(x.mutable_data(), Error);
    auto s = sum_all<double>(&g, y);
    g.backward(s);
  }
  CHECK(x.mutable_data().size() == 2);  // graph gone, mutation fine again
}

// ---- backward correctness ----

TEST_CASE("exact gradients for sum(x*x) and mean") {
  Tensor<double> x({3}, {1.0, -2.0, 0.5});
  x.set_requires_grad(true);
  Graph<double> g;
  auto y = mul<double>(&g, x, x);
  auto s = sum_all<double>(&g, y);
  g.backward(s);
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == -4.0);
  CHECK(x.grad()[2] == 1.0);

  Tensor<double> z({4}, {1, 2, 3, 4});
  z.set_requires_grad(true);
  Graph<double> g2;
  auto m = mean_axis<double>(&g2, z, 0);
  g2.backward(m);
  for (int i = 0; i < 4; ++i) CHECK(z.grad()[i] == 0.25);
}

TEST_CASE("fan-out accumulates gradients like the expanded expression") {
  Rng rng(11);
  auto x0 = random_tensor<double>({4, 4}, rng);

  // y = sum(x*x) computed via shared subexpression u = x*x used twice: sum(u)/2 + sum(u)/2
  auto xa = x0.clone();
  xa.set_requires_grad(true);
  {
    Graph<double> g;
    auto u = mul<double>(&g, xa, xa);
    auto s1 = scalar_mul<double>(&g, sum_all<double>(&g, u), 0.5);
    auto s2 = scalar_mul<double>(&g, sum_all<double>(&g, u), 0.5);
    auto s = add<double>(&g, s1, s2);
    g.backward(s);
  }
  auto xb = x0.clone();
  xb.set_requires_grad(true);
  {
    Graph<double> g;
    auto u = mul<double>(&g, xb, xb);
    auto s = sum_all<double>(&g, u);
    g.backward(s);
  }
  for (std::int64_t i = 0; i < x0.numel(); ++i)
    CHECK(xa.grad()[i] == doctest::Approx(xb.grad()[i]).epsilon(1e-14));
}

TEST_CASE("gradients accumulate across two backward passes on fresh graphs") {
  Tensor<double> x({2}, {3.0, 4.0});
  x.set_requires_grad(true);
  for (int rep = 0; rep < 2; ++rep) {
    Graph<double> g;
    auto s = sum_all<double>(&g, mul<double>(&g, x, x));
    g.backward(s);
  }
  CHECK(x.grad()[0] == 12.0);  // 2*2x
  CHECK(x.grad()[1] == 16.0);
}

// ---- numeric gradient audits per op ----

TEST_CASE("grad_check covers every differentiable op at 64-bit") {
  Rng rng(123);
  const double tol = 1e-6;

  auto weighted_sum = [&](Graph<double>& g, const Tensor<double>& t, Rng& r) {
    // random fixed projection to a scalar so gradients are not all ones
    Tensor<double> w = random_tensor<double>(t.shape(), r, 0.1, 1.1);
    return sum_all<double>(&g, mul<double>(&g, t, w));
  };

  SUBCASE("add sub mul with and without broadcast") {
    auto a = random_tensor<double>({3, 4}, rng);
    auto b = random_tensor<double>({3, 4}, rng);
    auto bias = random_tensor<double>({4}, rng);
    CHECK(check64([&](Graph<double>& g, std::vector<Tensor<double>>& p) {
            Rng w(1);
            return weighted_sum(g, add<double>(&g, p[0], p[1]), w);
          }, {a, b}) < tol);
    CHECK(check64([&](Graph<double>& g, std::vector<Tensor<double>>& p) {
            Rng w(2);
            return weighted_sum(g, sub<double>(&g, p[0], p[1]), w);
          }, {a, b}) < tol);
    CHECK(check64([&](Graph<double>& g, std::vector<Tensor<double>>& p) {
            Rng w(3);
            return weighted_sum(g, mul<double>(&g, p[0], p[1]), w);
          }, {a, b}) < tol);
    CHECK(check64([&](Graph<double>& g, std::vector<Tensor<double>>& p) {
            Rng w(4);
            return weighted_sum(g, add<double>(&g, p[0], p[1]), w);
          }, {a, bias}) < tol);
    CHECK(check64([&](Graph<double>& g, std::vector<Tensor<double>>& p) {
            Rng w(5);
            return weighted_sum(g, mul<double>(&g, p[0], p[1]), w);
          }, {a, bias}) < tol);
    CHECK(check64([&](Graph<double>& g, std::vector<Tensor<double>>& p) {
            Rng w(6);
            return weighted_sum(g, sub<double>(&g, p[1], p[0]), w);
          }, {a, bias}) < tol);
  }

  SUBCASE("scalar_mul reshape transpose concat") {
    auto a = random_tensor<double>({2, 3, 4}, rng);
    auto b = random_tensor<double>({2, 2, 4}, rng);
    CHECK(check64([&](Graph<double>& g, std::vector<Tensor<double>>& p) {
            Rng w(7);
            return weighted_sum(g, scalar_mul<double>(&g, p[0], -1.7), w);
          }, {a}) < tol);
    CHECK(check64([&](Graph<double>& g, std::vector<Tensor<double>>& p) {
            Rng w(8);
            return weighted_sum(g, reshape<double>(&g, p[0], {6, 4}), w);
          }, {a}) < tol);
    CHECK(check64([&](Graph<double>& g, std::vector<Tensor<double>>& p) {
            Rng w(9);
            return weighted_sum(g, transpose<double>(&g, p[0], 0, 2), w);
          }, {a}) < tol);
    CHECK(check64([&](Graph<double>& g, std::vector<Tensor<double>>& p) {
            Rng w(10);
            return weighted_sum(g, concat<double>(&g, {p[0], p[1]}, 1), w);
          }, {a, b}) < tol);
  }

  SUBCASE("matmul both operands, batched and shared") {
    auto a = random_tensor<double>({3, 4}, rng);
    auto b = random_tensor<double>({4, 5}, rng);
    CHECK(check64([&](Graph<double>& g, std::vector<Tensor<double>>& p) {
            Rng w(11);
            return weighted_sum(g, matmul<double>(&g, p[0], p[1]), w);
          }, {a, b}) < tol);
    auto ab = random_tensor<double>({2, 3, 4}, rng);
    auto bb = random_tensor<double>({2, 4, 5}, rng);
    CHECK(check64([&](Graph<double>& g, std::vector<Tensor<double>>& p) {
            Rng w(12);
            return weighted_sum(g, matmul<double>(&g, p[0], p[1]), w);
          }, {ab, bb}) < tol);
    CHECK(check64([&](Graph<double>& g, std::vector<Tensor<double>>& p) {
            Rng w(13);
            return weighted_sum(g, matmul<double>(&g, p[0], p[1]), w);
          }, {ab, b.clone()}) < tol);
  }

  SUBCASE("gathers") {
    auto a = random_tensor<double>({2, 5, 3}, rng);
    std::vector<int> ids = {4, 0, 0, 2, 1, 3};  // repeated index exercises scatter-add
    CHECK(check64([&](Graph<double>& g, std::vector<Tensor<double>>& p) {
            Rng w(14);
            return weighted_sum(g, gather_rows<double>(&g, p[0], ids, Shape{2, 3}), w);
          }, {a}) < tol);
    auto b = random_tensor<double>({2, 2, 3}, rng);
    std::vector<int> perm = {5, 4, 3, 2, 1, 0, 0, 5};
    CHECK(check64([&](Graph<double>& g, std::vector<Tensor<double>>& p) {
            Rng w(15);
            return weighted_sum(g, gather_flat<double>(&g, p[0], perm, Shape{4, 2}, 1), w);
          }, {b}) < tol);
  }

  SUBCASE("reductions") {
    auto a = random_tensor<double>({3, 4, 2}, rng);
    for (int axis = 0; axis < 3; ++axis) {
      CHECK(check64([&, axis](Graph<double>& g, std::vector<Tensor<double>>& p) {
              Rng w(16 + axis);
              return weighted_sum(g, mean_axis<double>(&g, p[0], axis), w);
            }, {a}) < tol);
    }
    CHECK(check64([&](Graph<double>& g, std::vector<Tensor<double>>& p) {
            return sum_all<double>(&g, p[0]);
          }, {a}) < tol);
  }

  SUBCASE("pointwise nonlinearities") {
    auto a = random_tensor<double>({3, 5}, rng, -1.5, 1.5);
    auto pos = random_tensor<double>({3, 5}, rng, 0.3, 2.5);
    CHECK(check64([&](Graph<double>& g, std::vector<Tensor<double>>& p) {
            Rng w(20);
            return weighted_sum(g, macrl::exp<double>(&g, p[0]), w);
          }, {a}) < tol);
    CHECK(check64([&](Graph<double>& g, std::vector<Tensor<double>>& p) {
            Rng w(21);
            return weighted_sum(g, macrl::log<double>(&g, p[0]), w);
          }, {pos}) < tol);
    CHECK(check64([&](Graph<double>& g, std::vector<Tensor<double>>& p) {
            Rng w(22);
            return weighted_sum(g, macrl::sqrt<double>(&g, p[0]), w);
          }, {pos}) < tol);
    CHECK(check64([&](Graph<double>& g, std::vector<Tensor<double>>& p) {
            Rng w(23);
            return weighted_sum(g, macrl::abs<double>(&g, p[0]), w);
          }, {a}) < tol);
    CHECK(check64([&](Graph<double>& g, std::vector<Tensor<double>>& p) {
            Rng w(24);
            return weighted_sum(g, macrl::gelu<double>(&g, p[0]), w);
          }, {a}) < tol);
  }

  SUBCASE("row-normalizing ops") {
    auto a = random_tensor<double>({4, 6}, rng, -2, 2);
    auto gain = random_tensor<double>({6}, rng, 0.5, 1.5);
    auto bias = random_tensor<double>({6}, rng, -0.3, 0.3);
    CHECK(check64([&](Graph<double>& g, std::vector<Tensor<double>>& p) {
            Rng w(25);
            return weighted_sum(g, softmax<double>(&g, p[0]), w);
          }, {a}) < tol);
    CHECK(check64([&](Graph<double>& g, std::vector<Tensor<double>>& p) {
            Rng w(26);
            return weighted_sum(g, log_softmax<double>(&g, p[0]), w);
          }, {a}) < tol);
    CHECK(check64([&](Graph<double>& g, std::vector<Tensor<double>>& p) {
            Rng w(27);
            return weighted_sum(g, l2_normalize<double>(&g, p[0]), w);
          }, {a}) < tol);
    CHECK(check64([&](Graph<double>& g, std::vector<Tensor<double>>& p) {
            Rng w(28);
            return weighted_sum(g, layer_norm<double>(&g, p[0], p[1], p[2], 1e-6), w);
          }, {a, gain, bias}) < tol);
  }
}

TEST_CASE("linear map through matmul has exactly linear gradients") {
  // d/dx sum(W x) is constant, so analytic and numeric agree to machine noise
  Rng rng(77);
  auto x = random_tensor<double>({6, 1}, rng);
  auto W = random_tensor<double>({6, 6}, rng);
  double err = check64(
      [&](Graph<double>& g, std::vector<Tensor<double>>& p) {
        return sum_all<double>(&g, matmul<double>(&g, W, p[0]));
      },
      {x});
  CHECK(err < 1e-9);
}

TEST_CASE("composite chain mimicking a projector head") {
  Rng rng(88);
  auto x = random_tensor<double>({3, 8}, rng);
  auto w = random_tensor<double>({8, 4}, rng, -0.5, 0.5);
  auto b = random_tensor<double>({4}, rng, -0.2, 0.2);
  double err = check64(
      [&](Graph<double>& g, std::vector<Tensor<double>>& p) {
        auto h = add<double>(&g, matmul<double>(&g, p[0], p[1]), p[2]);
        auto act = gelu<double>(&g, h);
        auto nrm = l2_normalize<double>(&g, act);
        Rng wr(29);
        Tensor<double> wt = random_tensor<double>({3, 4}, wr, 0.1, 1.0);
        return sum_all<double>(&g, mul<double>(&g, nrm, wt));
      },
      {x, w, b});
  CHECK(err < 1e-5);
}

TEST_CASE("grad check at 32-bit with coarser probe stays under 1e-3") {
  Rng rng(99);
  std::vector<float> vals(24);
  for (auto& v : vals) v = static_cast<float>(rng.uniform(-1, 1));
  Tensor<float> x({4, 6}, vals);
  float err = grad_check<float>(
      [](Graph<float>& g, std::vector<Tensor<float>>& p) {
        auto y = gelu<float>(&g, p[0]);
        return sum_all<float>(&g, mul<float>(&g, y, p[0]));
      },
      {x}, 1e-2f);
  CHECK(err < 1e-3f);
}

TEST_CASE("no-graph wrappers evaluate without recording") {
  Tensor<double> x({2, 2}, {1, 2, 3, 4});
  x.set_requires_grad(true);
  auto y = gelu<double>(nullptr, x);
  CHECK_FALSE(y.requires_grad());
  CHECK(x.mutable_data().size() == 4);  // x never got attached to a live graph
}
