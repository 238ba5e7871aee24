#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>
#include <random>

#include "hypermimo/autodiff.hpp"
#include "hypermimo/errors.hpp"

using namespace hypermimo;
using namespace hypermimo::ad;

namespace {

using Build = std::function<NodeId(Graph&, const std::vector<NodeId>&)>;

Tensor random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(s));
  for (auto& v : t.data) v = u(rng);
  return t;
}

// Values with |v| in [lo, hi] and random sign.
Tensor away_from_zero(Shape s, std::mt19937_64& rng, double lo, double hi) {
  Tensor t = random_tensor(std::move(s), rng, lo, hi);
  std::bernoulli_distribution flip(0.5);
  for (auto& v : t.data) if (flip(rng)) v = -v;
  return t;
}

double eval_loss(const Build& build, const std::vector<Tensor>& params) {
  Graph g;
  std::vector<NodeId> ids;
  for (const auto& p : params) ids.push_back(g.parameter(p));
  return g.value(build(g, ids))[0];
}

// Largest relative deviation between analytic and central-difference
// gradients over every parameter entry.
double fd_max_rel_error(const Build& build, std::vector<Tensor> params, double h = 1e-6) {
  Graph g;
  std::vector<NodeId> ids;
  for (const auto& p : params) ids.push_back(g.parameter(p));
  const auto grads = g.backward(build(g, ids));
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const Tensor& analytic = grads.at(ids[p]);
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double x0 = params[p][i];
      params[p][i] = x0 + h;
      const double up = eval_loss(build, params);
      params[p][i] = x0 - h;
      const double down = eval_loss(build, params);
      params[p][i] = x0;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[i];
      const double scale = std::max({1e-2, std::fabs(a), std::fabs(numeric)});
      worst = std::max(worst, std::fabs(a - numeric) / scale);
    }
  }
  return worst;
}

// Weighted sum so that every output entry carries a distinct sensitivity.
NodeId weighted_sum(Graph& g, NodeId out, std::mt19937_64& rng) {
  return g.sum(g.mul(out, g.constant(random_tensor(g.shape(out), rng))));
}

struct Case {
  std::string name;
  std::vector<Tensor> params;
  Build build;
};

Case make_case(std::size_t k, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> dim(1, 8);
  const std::size_t m = dim(rng), n = dim(rng), q = dim(rng);
  std::uniform_int_distribution<std::size_t> bdim(1, 4);
  const std::size_t b = bdim(rng);
  const std::uint64_t wseed = rng();
  auto wrap = [wseed](std::function<NodeId(Graph&, const std::vector<NodeId>&)> f) {
    return [f, wseed](Graph& g, const std::vector<NodeId>& p) {
      std::mt19937_64 wr(wseed);
      return weighted_sum(g, f(g, p), wr);
    };
  };
  switch (k % 20) {
    case 0:
      return {"matmul", {random_tensor({m, n}, rng), random_tensor({n, q}, rng)},
              wrap([](Graph& g, auto& p) { return g.matmul(p[0], p[1]); })};
    case 1:
      return {"batch_matmul",
              {random_tensor({b, m, n}, rng), random_tensor({b, n, q}, rng)},
              wrap([](Graph& g, auto& p) { return g.batch_matmul(p[0], p[1]); })};
    case 2:
      return {"add", {random_tensor({m, n}, rng), random_tensor({m, n}, rng)},
              wrap([](Graph& g, auto& p) { return g.add(p[0], p[1]); })};
    case 3:
      return {"sub", {random_tensor({m, n}, rng), random_tensor({m, n}, rng)},
              wrap([](Graph& g, auto& p) { return g.sub(p[0], p[1]); })};
    case 4:
      return {"mul", {random_tensor({m, n}, rng), random_tensor({m, n}, rng)},
              wrap([](Graph& g, auto& p) { return g.mul(p[0], p[1]); })};
    case 5:
      return {"div", {random_tensor({m, n}, rng), away_from_zero({m, n}, rng, 0.5, 2.0)},
              wrap([](Graph& g, auto& p) { return g.div(p[0], p[1]); })};
    case 6:
      return {"exp", {random_tensor({m, n}, rng, -2.0, 2.0)},
              wrap([](Graph& g, auto& p) { return g.exp(p[0]); })};
    case 7: {
      Tensor x = away_from_zero({m, n}, rng, 0.05, 1.0);
      for (auto& v : x.data) v += 0.3;
      return {"max_const", {x},
              wrap([](Graph& g, auto& p) { return g.max_const(p[0], 0.3); })};
    }
    case 8:
      return {"sum", {random_tensor({m, n}, rng)},
              wrap([](Graph& g, auto& p) { return g.sum(p[0]); })};
    case 9:
      return {"sum_rows", {random_tensor({b, m, n}, rng)},
              wrap([](Graph& g, auto& p) { return g.sum_rows(p[0]); })};
    case 10:
      return {"elu", {away_from_zero({m, n}, rng, 0.05, 2.0)},
              wrap([](Graph& g, auto& p) { return g.elu(p[0]); })};
    case 11:
      return {"abs", {away_from_zero({m, n}, rng, 0.05, 2.0)},
              wrap([](Graph& g, auto& p) { return g.abs(p[0]); })};
    case 12:
      return {"square", {random_tensor({m, n}, rng)},
              wrap([](Graph& g, auto& p) { return g.square(p[0]); })};
    case 13:
      return {"scale_add_const", {random_tensor({m, n}, rng)},
              wrap([](Graph& g, auto& p) { return g.add_const(g.scale(p[0], -1.7), 0.4); })};
    case 14:
      return {"reshape", {random_tensor({m, n}, rng)},
              wrap([m, n](Graph& g, auto& p) { return g.reshape(p[0], {n, m}); })};
    case 15:
      return {"transpose", {random_tensor({m, n}, rng)},
              wrap([](Graph& g, auto& p) { return g.transpose(p[0]); })};
    case 16:
      return {"expand", {random_tensor({b, 1, n}, rng)},
              wrap([b, m, n](Graph& g, auto& p) { return g.expand(p[0], {b, m, n}); })};
    case 17: {
      const std::size_t cols = 2 * n + 1;
      return {"slice_cols", {random_tensor({m, cols}, rng)},
              wrap([n](Graph& g, auto& p) { return g.slice_cols(p[0], 1, 2, n); })};
    }
    case 18:
      // Softmax-like ratio, the shape of the denoiser.
      return {"exp_ratio", {random_tensor({m, n}, rng)},
              wrap([](Graph& g, auto& p) {
                const NodeId e = g.exp(g.scale(g.square(p[0]), -1.0));
                const NodeId z = g.add_const(e, 0.5);
                return g.div(g.mul(p[0], e), z);
              })};
    default: {
      // 3-layer dense net.
      const std::size_t in = m, h1 = n, h2 = q, out = 3;
      std::vector<Tensor> ps{random_tensor({b, in}, rng),
                             random_tensor({h1, in}, rng), random_tensor({h1}, rng),
                             random_tensor({h2, h1}, rng), random_tensor({h2}, rng),
                             random_tensor({out, h2}, rng), random_tensor({out}, rng)};
      return {"dense3", ps, wrap([](Graph& g, auto& p) {
                NodeId x = dense_layer(g, p[0], p[1], p[2], Activation::Elu);
                x = dense_layer(g, x, p[3], p[4], Activation::Elu);
                return dense_layer(g, x, p[5], p[6], Activation::Linear);
              })};
    }
  }
}

}  // namespace

TEST_CASE("finite-difference gradients on 100 random instances") {
  std::mt19937_64 rng(11);
  for (std::size_t k = 0; k < 100; ++k) {
    Case c = make_case(k, rng);
    CAPTURE(c.name);
    CAPTURE(k);
    CHECK(fd_max_rel_error(c.build, c.params) < 1e-5);
  }
}

TEST_CASE("forward shapes and values") {
  Graph g;
  const NodeId a = g.constant(Tensor({2, 3}, 1.0));
  const NodeId b = g.constant(Tensor({3, 1}, 2.0));
  const NodeId c = g.matmul(a, b);
  CHECK(g.shape(c) == Shape{2, 1});
  CHECK(g.value(c)[0] == 6.0);

  CHECK(g.value(g.elu(g.constant(Tensor::scalar(0.0))))[0] == 0.0);
  CHECK(g.value(g.abs(g.constant(Tensor::scalar(-3.5))))[0] == 3.5);
  CHECK(g.value(g.elu(g.constant(Tensor::scalar(-1.0))))[0] ==
        doctest::Approx(std::exp(-1.0) - 1.0).epsilon(1e-15));
}

TEST_CASE("shape mismatches raise dimension errors") {
  Graph g;
  const NodeId a = g.constant(Tensor({2, 3}));
  const NodeId b = g.constant(Tensor({2, 3}));
  CHECK_THROWS_AS(g.matmul(a, b), DimensionError);
  CHECK_THROWS_AS(g.add(a, g.constant(Tensor({3, 2}))), DimensionError);
  CHECK_THROWS_AS(g.reshape(a, {5}), DimensionError);
  CHECK_THROWS_AS(g.expand(a, {4, 3}), DimensionError);
  CHECK_THROWS_AS(g.batch_matmul(a, b), DimensionError);
  try {
    g.matmul(a, b);
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("backward basics") {
  SUBCASE("sum of parameter gives ones") {
    Graph g;
    const NodeId p = g.parameter(Tensor({4}, {1, 2, 3, 4}));
    const auto grads = g.backward(g.sum(p));
    CHECK(grads.at(p).data == std::vector<double>(4, 1.0));
  }
  SUBCASE("sum of squares") {
    Graph g;
    const NodeId p = g.parameter(Tensor({2}, {1, 2}));
    const auto grads = g.backward(g.sum(g.mul(p, p)));
    CHECK(grads.at(p).data == std::vector<double>{2.0, 4.0});
  }
  SUBCASE("fan-out accumulates") {
    Graph g;
    const NodeId p = g.parameter(Tensor({3}, {0.1, 0.2, 0.3}));
    const auto grads = g.backward(g.add(g.sum(p), g.sum(p)));
    CHECK(grads.at(p).data == std::vector<double>(3, 2.0));
  }
  SUBCASE("non-scalar loss is rejected") {
    Graph g;
    const NodeId p = g.parameter(Tensor({2}, {1, 2}));
    CHECK_THROWS_AS(g.backward(p), ContractError);
  }
  SUBCASE("constants receive no gradient, unreached parameters get zeros") {
    Graph g;
    const NodeId c = g.constant(Tensor({2}, {1, 2}));
    const NodeId p = g.parameter(Tensor({2}, {3, 4}));
    const NodeId unused = g.parameter(Tensor({3}, 5.0));
    const auto grads = g.backward(g.sum(g.mul(c, p)));
    CHECK(grads.count(c) == 0);
    CHECK(grads.at(p).data == std::vector<double>{1.0, 2.0});
    CHECK(grads.at(unused).data == std::vector<double>(3, 0.0));
  }
}

TEST_CASE("stop_gradient") {
  Graph g;
  const NodeId p = g.parameter(Tensor({3}, {1, -2, 3}));
  SUBCASE("blocks the gradient") {
    const auto grads = g.backward(g.sum(g.stop_gradient(p)));
    CHECK(grads.at(p).data == std::vector<double>(3, 0.0));
  }
  SUBCASE("only the direct path contributes") {
    const auto grads = g.backward(g.sum(g.add(p, g.stop_gradient(p))));
    CHECK(grads.at(p).data == std::vector<double>(3, 1.0));
  }
  SUBCASE("nested is the same as single") {
    const NodeId once = g.stop_gradient(p);
    const NodeId twice = g.stop_gradient(g.stop_gradient(p));
    CHECK(g.value(once).data == g.value(twice).data);
    const auto grads = g.backward(g.sum(g.mul(twice, p)));
    CHECK(grads.at(p).data == g.value(p).data);
  }
}

TEST_CASE("dense layer examples") {
  Graph g;
  const NodeId x = g.constant(Tensor({2}, {-1.0, 2.0}));
  const NodeId zero_w = g.constant(Tensor({3, 2}));
  const NodeId zero_b = g.constant(Tensor({3}));
  CHECK(g.value(dense_layer(g, x, zero_w, zero_b, Activation::Linear)).data ==
        std::vector<double>(3, 0.0));

  const NodeId eye = g.constant(Tensor({2, 2}, {1, 0, 0, 1}));
  const NodeId b0 = g.constant(Tensor({2}));
  CHECK(g.value(dense_layer(g, x, eye, b0, Activation::Abs)).data ==
        std::vector<double>{1.0, 2.0});
  const NodeId pos = g.constant(Tensor({2}, {0.5, 2.0}));
  CHECK(g.value(dense_layer(g, pos, eye, b0, Activation::Elu)).data ==
        std::vector<double>{0.5, 2.0});

  const NodeId batch = g.constant(Tensor({3, 2}, {1, 2, 3, 4, 5, 6}));
  CHECK(g.shape(dense_layer(g, batch, zero_w, zero_b, Activation::Elu)) == Shape{3, 3});
  CHECK_THROWS_AS(dense_layer(g, g.constant(Tensor({3})), eye, b0, Activation::Linear),
                  DimensionError);
}

TEST_CASE("glorot uniform bounds") {
  std::mt19937_64 rng(3);
  const Tensor w = glorot_uniform(75, 43, rng);
  CHECK(w.shape == Shape{75, 43});
  const double limit = std::sqrt(6.0 / (75 + 43));
  double max_abs = 0.0;
  for (double v : w.data) max_abs = std::max(max_abs, std::fabs(v));
  CHECK(max_abs <= limit);
  CHECK(max_abs > 0.9 * limit);
}

TEST_CASE("adam") {
  SUBCASE("first step on a scalar with unit gradient moves by about lr") {
    AdamState s;
    std::vector<Tensor> p{Tensor::scalar(0.0)};
    const std::vector<Tensor> gr{Tensor::scalar(1.0)};
    ad::adam_step(s, p, gr, 1e-3);
    // m_hat = 1, v_hat = 1, update = lr / (1 + eps).
    CHECK(p[0][0] == doctest::Approx(-1e-3 / (1.0 + 1e-8)).epsilon(1e-12));
    CHECK(s.step == 1);
  }
  SUBCASE("zero gradient leaves parameters and decays moments") {
    AdamState s;
    std::vector<Tensor> p{Tensor({2}, {1.0, -1.0})};
    ad::adam_step(s, p, std::vector<Tensor>{Tensor({2}, {0.5, 0.5})}, 1e-2);
    const std::vector<double> after_first = p[0].data;
    const double m1 = s.first_moment[0][0], v1 = s.second_moment[0][0];
    ad::adam_step(s, p, std::vector<Tensor>{Tensor({2}, 0.0)}, 1e-2);
    CHECK(s.first_moment[0][0] == doctest::Approx(0.9 * m1));
    CHECK(s.second_moment[0][0] == doctest::Approx(0.999 * v1));
    CHECK(s.first_moment[0].shape == p[0].shape);
    // With m != 0 the bias-corrected step is still taken; with fresh state a
    // zero gradient does not move anything.
    AdamState fresh;
    std::vector<Tensor> q{Tensor({2}, {1.0, -1.0})};
    ad::adam_step(fresh, q, std::vector<Tensor>{Tensor({2}, 0.0)}, 1e-2);
    CHECK(q[0].data == std::vector<double>{1.0, -1.0});
    CHECK(after_first != std::vector<double>{1.0, -1.0});
  }
  SUBCASE("constant gradient gives steps of size lr") {
    AdamState s;
    std::vector<Tensor> p{Tensor({2}, 0.0)};
    const std::vector<Tensor> gr{Tensor({2}, {3.0, -0.2})};
    double before0 = 0.0, before1 = 0.0;
    for (int i = 0; i < 2000; ++i) {
      before0 = p[0][0];
      before1 = p[0][1];
      ad::adam_step(s, p, gr, 1e-3);
    }
    CHECK(p[0][0] - before0 == doctest::Approx(-1e-3).epsilon(1e-6));
    CHECK(p[0][1] - before1 == doctest::Approx(1e-3).epsilon(1e-6));
    CHECK(s.step == 2000);
  }
  SUBCASE("non-finite gradient aborts with diagnostics") {
    AdamState s;
    std::vector<Tensor> p{Tensor::scalar(0.0), Tensor::scalar(0.0)};
    const std::vector<Tensor> gr{Tensor::scalar(1.0), Tensor::scalar(std::nan(""))};
    try {
      ad::adam_step(s, p, gr, 1e-3);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("parameter 1") != std::string::npos);
      CHECK(msg.find("step 1") != std::string::npos);
    }
  }
  SUBCASE("gradient shape must match") {
    AdamState s;
    std::vector<Tensor> p{Tensor({2}, 0.0)};
    CHECK_THROWS_AS(ad::adam_step(s, p, std::vector<Tensor>{Tensor({3}, 0.0)}, 1e-3),
                    DimensionError);
  }
}

TEST_CASE("graph evaluation is deterministic") {
  std::mt19937_64 rng(5);
  const Tensor x = random_tensor({4, 6}, rng), w = random_tensor({5, 6}, rng),
               b = random_tensor({5}, rng);
  auto run = [&] {
    Graph g;
    const NodeId out = dense_layer(g, g.constant(x), g.parameter(w), g.parameter(b),
                                   Activation::Elu);
    const NodeId loss = g.sum(g.square(out));
    return std::make_pair(g.value(out).data, g.backward(loss).at(1).data);
  };
  CHECK(run() == run());
}
