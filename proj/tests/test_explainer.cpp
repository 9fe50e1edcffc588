#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "mlbviz/explainer.hpp"
#include "mlbviz/rng.hpp"
#include "mlbviz/selfcheck.hpp"
#include "oracles.hpp"

using namespace mlbviz;

namespace {

struct Case {
  ModelParams params;
  Tensor image;
  std::vector<std::size_t> tokens;
};

Case small_case(std::uint64_t seed) {
  const HyperParams h = small_hyper();
  Rng64 rng(seed);
  Case c{random_params(h, seed), Tensor({3, h.image_side(), h.image_side()}), {1, 4, 0, 2}};
  for (double& v : c.image.data()) v = rng.uniform();
  return c;
}

double half_sq(const Tensor& v, const Tensor& c) {
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) s += 0.5 * (v[i] - c[i]) * (v[i] - c[i]);
  return s;
}

std::pair<double, double> mean_std(std::span<const double> xs) {
  const double n = static_cast<double>(xs.size());
  const double m = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double sq = 0.0;
  for (double x : xs) sq += (x - m) * (x - m);
  return {m, std::sqrt(sq / n)};
}

}  // namespace

TEST_CASE("visual explanation equals the residual-loss gradient") {
  const Case c = small_case(21);
  const ForwardTrace tr = forward(c.params, c.image, c.tokens);
  const Tensor frozen = tr.tape.value(tr.joint);
  const Tensor got = visual_explanation(tr, GradMode::Standard);
  CHECK(got.dims() == c.image.dims());
  const Tensor num = oracle::numeric_gradient(
      [&](const Tensor& img) {
        const ForwardTrace t = forward(c.params, img, c.tokens);
        return half_sq(t.tape.value(t.v_joint), frozen);
      },
      c.image);
  CHECK(oracle::max_rel_error(got, num, 1e-6) < 1e-4);
}

TEST_CASE("textual explanation equals the residual-loss gradient") {
  const Case c = small_case(22);
  const HyperParams h = c.params.hyper();
  const ForwardTrace tr = forward(c.params, c.image, c.tokens);
  const Tensor frozen = tr.tape.value(tr.joint);
  const Tensor got = textual_explanation(tr, GradMode::Standard);
  CHECK(got.dims() == Shape{4, h.embed_dim});
  // Perturb the looked-up rows directly: tokens are distinct, so each row
  // maps to one embedding-table row.
  const Tensor num = oracle::numeric_gradient(
      [&](const Tensor& rows) {
        ModelParams p = c.params;
        for (std::size_t i = 0; i < c.tokens.size(); ++i)
          for (std::size_t d = 0; d < h.embed_dim; ++d) p.get(param::kEmbedding).at(c.tokens[i], d) = rows.at(i, d);
        const ForwardTrace t = forward(p, c.image, c.tokens);
        return half_sq(t.tape.value(t.q_joint), frozen);
      },
      tr.tape.value(tr.q_embeds));
  CHECK(oracle::max_rel_error(got, num, 1e-6) < 1e-4);
}

TEST_CASE("zero-seed laws") {
  Case c = small_case(23);
  c.params.get(param::kJointW) *= 0.0;
  c.params.get(param::kJointWBias) = Tensor::full({small_hyper().joint_dim}, 20.0);
  const ForwardTrace tq = forward(c.params, c.image, c.tokens);
  for (double v : tq.tape.value(tq.q_joint).data()) REQUIRE(v == 1.0);
  CHECK(max_abs(visual_explanation(tq, GradMode::Standard)) == 0.0);
  CHECK(max_abs(visual_explanation(tq, GradMode::Guided)) == 0.0);

  Case d = small_case(24);
  d.params.get(param::kJointV) *= 0.0;
  d.params.get(param::kJointVBias) = Tensor::full({small_hyper().joint_dim}, 20.0);
  const ForwardTrace tv = forward(d.params, d.image, d.tokens);
  CHECK(max_abs(textual_explanation(tv, GradMode::Standard)) == 0.0);
}

TEST_CASE("guided textual explanation is bitwise standard") {
  for (std::uint64_t s = 30; s < 35; ++s) {
    const Case c = small_case(s);
    const ForwardTrace tr = forward(c.params, c.image, c.tokens);
    CHECK(textual_explanation(tr, GradMode::Guided) == textual_explanation(tr, GradMode::Standard));
  }
}

TEST_CASE("guided visual explanation differs from standard") {
  const Case c = small_case(40);
  const ForwardTrace tr = forward(c.params, c.image, c.tokens);
  CHECK_FALSE(visual_explanation(tr, GradMode::Guided) == visual_explanation(tr, GradMode::Standard));
}

TEST_CASE("visual explanation needs a differentiable image") {
  const Case c = small_case(41);
  ForwardOptions o;
  o.image_gradient = false;
  const ForwardTrace tr = forward(c.params, c.image, c.tokens, o);
  CHECK_THROWS_AS(visual_explanation(tr), std::invalid_argument);
  ForwardTrace empty;
  CHECK_THROWS_WITH_AS(textual_explanation(empty), "trace missing named nodes", std::invalid_argument);
}

TEST_CASE("pixel normalization") {
  Rng64 rng(50);
  Tensor raw({3, 6, 5});
  for (double& v : raw.data()) v = rng.symmetric(3.0);
  const Tensor n = normalize_pixels(raw);
  for (std::size_t c = 0; c < 3; ++c) {
    const auto [m, s] = mean_std(n.data().subspan(c * 30, 30));
    CHECK(std::abs(m) < 1e-9);
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
  Tensor moved = raw * 4.5;
  for (double& v : moved.data()) v -= 2.0;
  CHECK(max_abs_diff(normalize_pixels(moved), n) < 1e-9);

  Tensor flat = raw;
  for (std::size_t i = 30; i < 60; ++i) flat[i] = 7.0;
  const Tensor fn = normalize_pixels(flat);
  for (std::size_t i = 30; i < 60; ++i) CHECK(fn[i] == 0.0);

  const Tensor heat = channel_l2(n);
  CHECK(heat.dims() == Shape{6, 5});
  const double expect = std::sqrt(n.at(0, 2, 3) * n.at(0, 2, 3) + n.at(1, 2, 3) * n.at(1, 2, 3) + n.at(2, 2, 3) * n.at(2, 2, 3));
  CHECK(heat.at(2, 3) == doctest::Approx(expect).epsilon(1e-15));
}

TEST_CASE("token scores") {
  const TokenSaliency t = token_scores(Tensor::matrix(2, 2, {1, -1, 3, 1}));
  CHECK(t.per_token_abs == std::vector<double>{2, 4});
  CHECK(t.z[0] == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(t.z[1] == doctest::Approx(1.0).epsilon(1e-15));

  Rng64 rng(60);
  Tensor q({6, 4});
  for (double& v : q.data()) v = rng.symmetric(1.0);
  const auto z = token_scores(q).z;
  const auto [m, s] = mean_std(z);
  CHECK(std::abs(m) < 1e-9);
  CHECK(std::abs(s - 1.0) < 1e-9);
  CHECK(max_abs_diff(Tensor({6}, token_scores(q * 3.7).z), Tensor({6}, z)) < 1e-9);

  // Permuting tokens permutes scores.
  const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  Tensor qp({6, 4});
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t d = 0; d < 4; ++d) qp.at(i, d) = q.at(perm[i], d);
  const auto zp = token_scores(qp).z;
  for (std::size_t i = 0; i < 6; ++i) CHECK(zp[i] == doctest::Approx(z[perm[i]]).epsilon(1e-12));

  CHECK_THROWS_AS(token_scores(Tensor::matrix(1, 2, {1, 2})), std::domain_error);
  CHECK_THROWS_AS(token_scores(Tensor::matrix(2, 2, {1, 2, 2, 1})), std::domain_error);
}

TEST_CASE("layer loss") {
  const LegacyLoss zero = legacy_layer_loss(Tensor::vector({0.3, -0.2}), Tensor::vector({0.3, -0.2}));
  CHECK(zero.loss == 0.0);
  CHECK(max_abs(zero.seed) == 0.0);
  const LegacyLoss l = legacy_layer_loss(Tensor::vector({1, 0}), Tensor::vector({0, 0}));
  CHECK(l.loss == 0.5);
  CHECK(l.seed == Tensor::vector({1, 0}));

  const Case c = small_case(70);
  const ForwardTrace tr = forward(c.params, c.image, c.tokens);
  const LegacyLoss lt = legacy_layer_loss(tr.tape.value(tr.v_joint), tr.tape.value(tr.joint));
  CHECK(backward(tr.tape, tr.v_joint, lt.seed).get_or_zero(tr.tape, tr.image) ==
        visual_explanation(tr, GradMode::Standard));
}

TEST_CASE("attention comparison at default extents") {
  const HyperParams h;
  const ModelParams p = random_params(h, 80);
  Rng64 rng(81);
  Tensor img({3, 56, 56});
  for (double& v : img.data()) v = rng.uniform();
  const std::vector<std::size_t> tokens{0, 1, 2, 3, 4};
  const ForwardTrace tr = forward(p, img, tokens);
  const AttentionComparison cmp = attention_comparison(tr);
  REQUIRE(cmp.glimpse_maps.size() == 2);
  for (const auto& m : cmp.glimpse_maps) {
    CHECK(m.dims() == Shape{14, 14});
    CHECK(sum(m) == doctest::Approx(1.0).epsilon(1e-9));
  }
  CHECK(cmp.heatmap.dims() == Shape{56, 56});
  const VisualSaliency vs = visual_saliency(tr);
  CHECK(vs.raw.dims() == Shape{3, 56, 56});
  CHECK(vs.heatmap == cmp.heatmap);
}
