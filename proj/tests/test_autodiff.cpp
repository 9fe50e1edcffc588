#include <cmath>
#include <limits>
#include <stdexcept>

#include "doctest.h"
#include "mlbviz/autodiff.hpp"
#include "mlbviz/rng.hpp"
#include "oracles.hpp"

using namespace mlbviz;

namespace {

Tensor random(Rng64& rng, Shape dims, double a = 1.0) {
  Tensor t(std::move(dims));
  for (double& v : t.data()) v = rng.symmetric(a);
  return t;
}

NodeId weighted_sum(Tape& t, NodeId out, const Tensor& w) { return sum_all(t, hadamard(t, out, const_node(t, w))); }

}  // namespace

TEST_CASE("tensor rejects non-finite values and size mismatches") {
  CHECK_THROWS_AS(Tensor({2}, {1.0, std::numeric_limits<double>::quiet_NaN()}), std::domain_error);
  CHECK_THROWS_AS(Tensor({2}, {1.0, std::numeric_limits<double>::infinity()}), std::domain_error);
  CHECK_THROWS_AS(Tensor({3}, {1.0, 2.0}), std::invalid_argument);
  CHECK(Tensor::vector({1, 2}) == Tensor::vector({1, 2}));
  CHECK_FALSE(Tensor::vector({0.0}) == Tensor::vector({-0.0}));  // bitwise
}

TEST_CASE("constants") {
  Tape t;
  const NodeId a = const_node(t, Tensor::vector({1, 2}));
  const NodeId b = const_node(t, Tensor::vector({1, 2}));
  CHECK(t.value(a) == Tensor::vector({1, 2}));
  CHECK_FALSE(a == b);
  const NodeId v = variable(t, Tensor::vector({3, 4}));
  const NodeId s = add(t, a, v);
  const Gradients g = backward(t, s, Tensor::vector({1, 1}));
  CHECK_FALSE(g.contains(a));
  CHECK(g.at(v) == Tensor::vector({1, 1}));
}

TEST_CASE("appending a non-finite value fails") {
  Tape t;
  const NodeId a = variable(t, Tensor::vector({1e200}));
  CHECK_THROWS_AS(hadamard(t, a, a), std::domain_error);
}

TEST_CASE("matmul") {
  Tape t;
  const Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
  const Tensor b = Tensor::matrix(2, 2, {5, 6, 7, 8});
  const NodeId c = matmul(t, const_node(t, a), const_node(t, b));
  CHECK(t.value(c) == Tensor::matrix(2, 2, {19, 22, 43, 50}));
  CHECK(t.value(c) == oracle::matmul(a, b));
  const NodeId id = matmul(t, const_node(t, a), const_node(t, Tensor::matrix(2, 2, {1, 0, 0, 1})));
  CHECK(t.value(id) == a);
  CHECK_THROWS_AS(matmul(t, const_node(t, a), const_node(t, Tensor::matrix(3, 1, {1, 2, 3}))), std::invalid_argument);

  Rng64 rng(3);
  const Tensor x = random(rng, {3, 4}), y = random(rng, {4, 5});
  const auto f = [&](Tape& tp, NodeId v) { return sum_all(tp, matmul(tp, v, const_node(tp, y))); };
  const Tensor num = oracle::numeric_gradient([&](const Tensor& p) { return oracle::eval_scalar(f, p); }, x);
  CHECK(oracle::max_rel_error(oracle::analytic_gradient(f, x), num) < 1e-6);
}

TEST_CASE("hadamard and add") {
  Tape t;
  const Tensor a = Tensor::vector({1, 2, 3});
  CHECK(t.value(hadamard(t, const_node(t, a), const_node(t, Tensor::vector({4, 5, 6})))) == Tensor::vector({4, 10, 18}));
  CHECK(t.value(hadamard(t, const_node(t, a), const_node(t, Tensor::full({3}, 1.0)))) == a);
  CHECK(max_abs(t.value(hadamard(t, const_node(t, a), const_node(t, Tensor::zeros({3}))))) == 0.0);
  CHECK(t.value(add(t, const_node(t, a), const_node(t, Tensor::zeros({3})))) == a);
  const Tensor m = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK(t.value(add(t, const_node(t, m), const_node(t, Tensor::vector({10, 20, 30})))) ==
        Tensor::matrix(2, 3, {11, 22, 33, 14, 25, 36}));
  CHECK_THROWS_AS(hadamard(t, const_node(t, a), const_node(t, m)), std::invalid_argument);

  // Bias gradient is the column sum of the upstream gradient.
  Tape g;
  const NodeId bias = variable(g, Tensor::vector({0, 0, 0}));
  const NodeId out = add(g, const_node(g, m), bias);
  const Tensor up = Tensor::matrix(2, 3, {1, 2, 3, -4, 0.5, 6});
  CHECK(backward(g, out, up).at(bias) == Tensor::vector({-3, 2.5, 9}));
}

TEST_CASE("tanh") {
  Tape t;
  const NodeId y = tanh_op(t, const_node(t, Tensor::vector({0, 1, -1})));
  CHECK(t.value(y)[0] == 0.0);
  CHECK(t.value(y)[1] == doctest::Approx(0.7615941559557649).epsilon(1e-15));
  CHECK(t.value(y)[2] == -t.value(y)[1]);
  const double e2 = std::exp(2.0);
  CHECK(t.value(y)[1] == doctest::Approx((e2 - 1) / (e2 + 1)).epsilon(1e-15));
}

TEST_CASE("relu forward and both backward modes") {
  Tape t;
  const NodeId x = variable(t, Tensor::vector({-1, 0, 2}));
  const NodeId y = relu_op(t, x);
  CHECK(t.value(y) == Tensor::vector({0, 0, 2}));

  Tape u;
  const NodeId a = variable(u, Tensor::vector({1, 1}));
  const NodeId r = relu_op(u, a);
  const Tensor up = Tensor::vector({-1, 1});
  CHECK(backward(u, r, up, GradMode::Guided).at(a) == Tensor::vector({0, 1}));
  CHECK(backward(u, r, up, GradMode::Standard).at(a) == Tensor::vector({-1, 1}));
  // The kink passes nothing.
  CHECK(backward(t, y, Tensor::vector({5, 5, 5})).at(x) == Tensor::vector({0, 0, 5}));
}

TEST_CASE("softmax rows") {
  Tape t;
  const NodeId s = softmax_rows(t, const_node(t, Tensor::vector({0.0, std::log(2.0)})));
  CHECK(t.value(s)[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(t.value(s)[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  const NodeId u = softmax_rows(t, const_node(t, Tensor::full({2, 4}, 3.0)));
  for (double v : t.value(u).data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
  const Tensor x = Tensor::matrix(2, 3, {1, -2, 0.5, 3, 3, -1});
  Tensor shifted = x;
  for (double& v : shifted.data()) v += 7.0;
  CHECK(max_abs_diff(t.value(softmax_rows(t, const_node(t, x))), t.value(softmax_rows(t, const_node(t, shifted)))) < 1e-15);
  // log-softmax agrees with log of softmax.
  const Tensor ls = t.value(log_softmax_rows(t, const_node(t, x)));
  const Tensor sm = t.value(softmax_rows(t, const_node(t, x)));
  for (std::size_t i = 0; i < ls.size(); ++i) CHECK(ls[i] == doctest::Approx(std::log(sm[i])).epsilon(1e-14));
}

TEST_CASE("conv2d") {
  Tape t;
  const NodeId c = conv2d(t, const_node(t, Tensor::full({1, 5, 5}, 5.0)), const_node(t, Tensor::full({1, 1, 3, 3}, 1.0)), 1, 0);
  CHECK(t.value(c).dims() == Shape{1, 3, 3});
  CHECK(t.value(c).at(0, 1, 1) == 45.0);

  Rng64 rng(5);
  const Tensor img = random(rng, {1, 4, 4});
  CHECK(t.value(conv2d(t, const_node(t, img), const_node(t, Tensor::full({1, 1, 1, 1}, 1.0)), 1, 0)) == img);
  CHECK(max_abs(t.value(conv2d(t, const_node(t, img), const_node(t, Tensor::zeros({2, 1, 3, 3})), 1, 1))) == 0.0);

  for (std::size_t stride : {1, 2}) {
    const Tensor in = random(rng, {3, 7, 6});
    const Tensor k = random(rng, {4, 3, 3, 3});
    const Tensor got = t.value(conv2d(t, const_node(t, in), const_node(t, k), stride, 1));
    CHECK(max_abs_diff(got, oracle::conv2d(in, k, stride, 1)) < 1e-12);

    const Tensor w = random(rng, got.dims());
    const auto fin = [&](Tape& tp, NodeId v) { return weighted_sum(tp, conv2d(tp, v, const_node(tp, k), stride, 1), w); };
    const auto fk = [&](Tape& tp, NodeId v) { return weighted_sum(tp, conv2d(tp, const_node(tp, in), v, stride, 1), w); };
    CHECK(oracle::max_rel_error(oracle::analytic_gradient(fin, in),
                                oracle::numeric_gradient([&](const Tensor& p) { return oracle::eval_scalar(fin, p); }, in)) < 1e-6);
    CHECK(oracle::max_rel_error(oracle::analytic_gradient(fk, k),
                                oracle::numeric_gradient([&](const Tensor& p) { return oracle::eval_scalar(fk, p); }, k)) < 1e-6);
  }
}

TEST_CASE("embedding lookup") {
  Tape t;
  const Tensor table = Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6});
  const std::vector<std::size_t> one{2};
  CHECK(t.value(embedding_lookup(t, const_node(t, table), one)) == Tensor::matrix(1, 2, {5, 6}));
  const std::vector<std::size_t> bad{3};
  CHECK_THROWS_AS(embedding_lookup(t, const_node(t, table), bad), std::out_of_range);

  const std::vector<std::size_t> rep{1, 0, 1};
  Tape g;
  const NodeId tab = variable(g, table);
  const NodeId e = embedding_lookup(g, tab, rep);
  const Tensor grad = backward(g, e, Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6})).at(tab);
  CHECK(grad == Tensor::matrix(3, 2, {3, 4, 6, 8, 0, 0}));
}

TEST_CASE("detach stops gradients") {
  Tape t;
  const Tensor xv = Tensor::vector({1, -2, 3});
  const NodeId x = variable(t, xv);
  const NodeId y = variable(t, Tensor::vector({4, 5, 6}));
  const NodeId dx = detach(t, x);
  CHECK(t.value(dx) == xv);
  const NodeId s = sum_all(t, hadamard(t, dx, y));
  const Gradients g = backward(t, s, Tensor::vector({1}));
  CHECK(g.get_or_zero(t, x) == Tensor::zeros({3}));
  CHECK(g.at(y) == xv);
}

TEST_CASE("backward accumulates shared uses") {
  Tape t;
  const Tensor xv = Tensor::vector({1.5, -2, 3});
  const NodeId x = variable(t, xv);
  const NodeId sq = hadamard(t, x, x);
  CHECK(backward(t, sq, Tensor::full({3}, 1.0)).at(x) == Tensor::vector({3, -4, 6}));
}

TEST_CASE("guided equals standard without ReLU on the path") {
  Rng64 rng(9);
  Tape t;
  const NodeId x = variable(t, random(rng, {2, 3}));
  const NodeId y = tanh_op(t, matmul(t, x, const_node(t, random(rng, {3, 4}))));
  const NodeId z = softmax_rows(t, y);
  const Tensor seed = random(rng, {2, 4});
  CHECK(backward(t, z, seed, GradMode::Guided).at(x) == backward(t, z, seed, GradMode::Standard).at(x));
}

TEST_CASE("grad_check on a linear map and step-size stability") {
  Rng64 rng(11);
  const Tensor a = random(rng, {4, 3});
  const Tensor w = random(rng, {2, 3});
  const ScalarProbe lin = [&](Tape& t, NodeId v) { return weighted_sum(t, matmul(t, v, const_node(t, a)), w); };
  const Tensor x = random(rng, {2, 4});
  CHECK(grad_check(lin, x).max_rel_error < 1e-9);

  const ScalarProbe curved = [&](Tape& t, NodeId v) {
    return weighted_sum(t, tanh_op(t, matmul(t, v, const_node(t, a))), w);
  };
  CHECK(grad_check(curved, x, 1e-4).max_rel_error < 1e-4);
  CHECK(grad_check(curved, x, 1e-5).max_rel_error < 1e-4);
}

TEST_CASE("grad_check skips coordinates straddling a ReLU kink") {
  const ScalarProbe p = [](Tape& t, NodeId v) { return sum_all(t, relu_op(t, v)); };
  const GradCheckResult r = grad_check(p, Tensor::vector({1.0, 1e-7, -2.0}));
  CHECK(r.skipped_at_kink == 1);
  CHECK(r.checked == 2);
  CHECK(r.max_rel_error < 1e-9);
}

TEST_CASE("replay reproduces every node") {
  Rng64 rng(13);
  Tape t;
  const NodeId x = variable(t, random(rng, {2, 5, 5}));
  const NodeId c = relu_op(t, conv2d(t, x, const_node(t, random(rng, {3, 2, 3, 3})), 2, 1));
  const NodeId s = softmax_rows(t, reshape(t, c, {3, 9}));
  (void)s;
  const Tape r = t.replay();
  REQUIRE(r.size() == t.size());
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(r.value(NodeId{i}) == t.value(NodeId{i}));
}

TEST_CASE("ReLU fault hook breaks the guided rule only while set") {
  Tape u;
  const NodeId a = variable(u, Tensor::vector({-1, 1}));
  const NodeId r = relu_op(u, a);
  testing::set_relu_backward_fault(true);
  const Tensor faulty = backward(u, r, Tensor::vector({1, 1})).at(a);
  testing::set_relu_backward_fault(false);
  CHECK(faulty == Tensor::vector({1, 1}));
  CHECK(backward(u, r, Tensor::vector({1, 1})).at(a) == Tensor::vector({0, 1}));
}
