#include <catch2/catch_amalgamated.hpp>

#include "bhygnn/autodiff.hpp"
#include "bhygnn/nn.hpp"
#include "bhygnn/rng.hpp"
#include "gradcheck.hpp"

using namespace bhygnn;
using bhygnn::test::check_gradients;

namespace {

void randomize(Parameter& p, RngStream& rng, double scale = 1.0) {
  for (std::int64_t i = 0; i < p.value.size(); ++i) p.value[i] = scale * rng.normal();
}

void randomize_positive(Parameter& p, RngStream& rng, double lo = 0.3, double hi = 2.0) {
  for (std::int64_t i = 0; i < p.value.size(); ++i) p.value[i] = rng.uniform(lo, hi);
}

ad::IndexVec make_index(std::initializer_list<std::int64_t> ids) {
  return std::make_shared<const std::vector<std::int64_t>>(ids);
}

}  // namespace

TEST_CASE("basic op values") {
  ad::Tape t;
  ad::Var a = t.constant(Tensor::from_rows({{1.0, 2.0}, {3.0, 4.0}}));
  ad::Var b = t.constant(Tensor::from_rows({{5.0, 6.0}, {7.0, 8.0}}));
  REQUIRE(t.add(a, b)->value(1, 1) == 12.0);
  REQUIRE(t.sub(a, b)->value(0, 0) == -4.0);
  REQUIRE(t.mul(a, b)->value(1, 0) == 21.0);
  REQUIRE(t.div(b, a)->value(0, 1) == 3.0);
  REQUIRE(t.matmul(a, b)->value(0, 0) == 19.0);
  REQUIRE(t.matmul(a, b, true, false)->value(0, 0) == 26.0);
  REQUIRE(t.sum(a)->value(0, 0) == 10.0);
  REQUIRE(t.row_sum(a)->value(1, 0) == 7.0);
  REQUIRE(t.col_sum(a)->value(0, 1) == 6.0);
  REQUIRE(t.col_mean(a)->value(0, 0) == 2.0);
  REQUIRE(t.scale(a, -2.0)->value(0, 1) == -4.0);
  REQUIRE(t.add_scalar(a, 1.5)->value(0, 0) == 2.5);
  REQUIRE(t.relu(t.scale(a, -1.0))->value(0, 0) == 0.0);
  REQUIRE(t.clamp(a, 1.5, 3.5)->value(0, 0) == 1.5);
  REQUIRE(t.clamp(a, 1.5, 3.5)->value(1, 1) == 3.5);
  REQUIRE(t.slice_cols(a, 1, 1)->value(1, 0) == 4.0);
  REQUIRE(t.slice_rows(a, 1, 1)->value(0, 0) == 3.0);
  REQUIRE(t.concat_cols({a, b})->value(0, 3) == 6.0);
}

TEST_CASE("gather, segment and straight-through ops") {
  ad::Tape t;
  ad::Var x = t.constant(Tensor::from_rows({{1.0, 2.0}, {3.0, 4.0}, {5.0, 6.0}}));
  auto idx = make_index({2, 0, 2});
  ad::Var g = t.gather_rows(x, idx);
  REQUIRE(g->value.rows() == 3);
  REQUIRE(g->value(0, 0) == 5.0);
  REQUIRE(g->value(1, 1) == 2.0);

  ad::Var s = t.segment_sum_rows(g, make_index({0, 1, 0}), 2);
  REQUIRE(s->value(0, 0) == 10.0);
  REQUIRE(s->value(1, 1) == 2.0);

  ad::Var gs = t.gather_sum_rows(x, make_index({0, 1}), x, make_index({2, 2}));
  REQUIRE(gs->value(0, 0) == 6.0);
  REQUIRE(gs->value(1, 1) == 10.0);

  ad::Var soft = t.constant(Tensor::from_rows({{0.2, 0.8}, {0.9, 0.1}}));
  ad::Var hard = t.hard_onehot_st(soft);
  REQUIRE(hard->value(0, 1) == 1.0);
  REQUIRE(hard->value(0, 0) == 0.0);
  REQUIRE(hard->value(1, 0) == 1.0);
}

TEST_CASE("straight-through passes gradients unchanged") {
  ParamStore store;
  Parameter* p = store.create("x", 2, 3);
  RngStream rng(1);
  randomize(*p, rng);
  store.zero_grads();
  ad::Tape t;
  ad::Var soft = t.leaf(*p);
  ad::Var hard = t.hard_onehot_st(soft);
  Tensor w = Tensor::from_rows({{1.0, 2.0, 3.0}, {4.0, 5.0, 6.0}});
  ad::Var loss = t.sum(t.mul(hard, t.constant(w)));
  t.backward(loss);
  t.harvest_param_grads();
  for (std::int64_t i = 0; i < 6; ++i) REQUIRE(p->grad[i] == w[i]);
}

TEST_CASE("backward of sum is all-ones") {
  ParamStore store;
  Parameter* p = store.create("x", 3, 3);
  RngStream rng(2);
  randomize(*p, rng);
  store.zero_grads();
  ad::Tape t;
  t.backward(t.sum(t.leaf(*p)));
  t.harvest_param_grads();
  for (std::int64_t i = 0; i < 9; ++i) REQUIRE(p->grad[i] == 1.0);
}

TEST_CASE("gradient of cosine(x, x) is zero") {
  ParamStore store;
  Parameter* p = store.create("x", 1, 4);
  RngStream rng(3);
  randomize(*p, rng);
  store.zero_grads();
  ad::Tape t;
  ad::Var x = t.leaf(*p);
  ad::Var dot = t.sum(t.mul(x, x));
  ad::Var n = t.sqrt(t.sum(t.mul(x, x)));
  ad::Var cos = t.div(dot, t.mul(n, n));
  t.backward(cos);
  t.harvest_param_grads();
  for (std::int64_t i = 0; i < 4; ++i) REQUIRE(std::abs(p->grad[i]) < 1e-12);
}

TEST_CASE("finite-difference checks for every differentiable op") {
  RngStream rng(42);
  ParamStore store;
  Parameter* a = store.create("a", 4, 5);
  Parameter* b = store.create("b", 4, 5);
  Parameter* w = store.create("w", 5, 3);
  Parameter* rowv = store.create("rowv", 1, 5);
  Parameter* colv = store.create("colv", 4, 1);
  Parameter* pos = store.create("pos", 4, 5);
  randomize(*a, rng);
  randomize(*b, rng);
  randomize(*w, rng);
  randomize(*rowv, rng);
  randomize(*colv, rng);
  randomize_positive(*pos, rng);

  auto idx = make_index({3, 0, 2, 2, 1});
  auto idx2 = make_index({1, 1, 0, 3, 2});
  auto seg = make_index({0, 2, 0, 1, 2});

  using Builder = std::function<ad::Var(ad::Tape&)>;
  std::vector<std::pair<std::string, Builder>> cases = {
      {"add", [&](ad::Tape& t) { return t.sum(t.add(t.leaf(*a), t.leaf(*b))); }},
      {"sub", [&](ad::Tape& t) { return t.sum(t.mul(t.sub(t.leaf(*a), t.leaf(*b)), t.leaf(*b))); }},
      {"mul", [&](ad::Tape& t) { return t.sum(t.mul(t.leaf(*a), t.leaf(*b))); }},
      {"div", [&](ad::Tape& t) { return t.sum(t.div(t.leaf(*a), t.leaf(*pos))); }},
      {"scale", [&](ad::Tape& t) { return t.sum(t.scale(t.leaf(*a), -1.7)); }},
      {"add_scalar+exp",
       [&](ad::Tape& t) { return t.sum(t.exp(t.add_scalar(t.scale(t.leaf(*a), 0.3), 0.2))); }},
      {"add_rowvec",
       [&](ad::Tape& t) {
         return t.sum(t.mul(t.add_rowvec(t.leaf(*a), t.leaf(*rowv)), t.leaf(*b)));
       }},
      {"add_colvec",
       [&](ad::Tape& t) {
         return t.sum(t.mul(t.add_colvec(t.leaf(*a), t.leaf(*colv)), t.leaf(*b)));
       }},
      {"mul_colvec",
       [&](ad::Tape& t) {
         return t.sum(t.mul(t.mul_colvec(t.leaf(*a), t.leaf(*colv)), t.leaf(*b)));
       }},
      {"matmul_nn", [&](ad::Tape& t) { return t.sum(t.matmul(t.leaf(*a), t.leaf(*w))); }},
      {"matmul_nt",
       [&](ad::Tape& t) { return t.sum(t.matmul(t.leaf(*a), t.leaf(*b), false, true)); }},
      {"matmul_tn",
       [&](ad::Tape& t) { return t.sum(t.matmul(t.leaf(*a), t.leaf(*b), true, false)); }},
      {"matmul_tt",
       [&](ad::Tape& t) { return t.sum(t.matmul(t.leaf(*w), t.leaf(*a), true, true)); }},
      {"affine",
       [&](ad::Tape& t) {
         return t.sum(t.affine(t.leaf(*a), t.leaf(*w), t.slice_cols(t.leaf(*rowv), 0, 3)));
       }},
      {"relu", [&](ad::Tape& t) { return t.sum(t.mul(t.relu(t.leaf(*a)), t.leaf(*b))); }},
      {"sigmoid", [&](ad::Tape& t) { return t.sum(t.mul(t.sigmoid(t.leaf(*a)), t.leaf(*b))); }},
      {"exp", [&](ad::Tape& t) { return t.sum(t.exp(t.scale(t.leaf(*a), 0.5))); }},
      {"log", [&](ad::Tape& t) { return t.sum(t.log(t.leaf(*pos))); }},
      {"sqrt", [&](ad::Tape& t) { return t.sum(t.sqrt(t.leaf(*pos))); }},
      {"clamp",
       [&](ad::Tape& t) { return t.sum(t.mul(t.clamp(t.leaf(*a), -0.9, 0.9), t.leaf(*b))); }},
      {"row_sum", [&](ad::Tape& t) { return t.sum(t.mul(t.row_sum(t.leaf(*a)), t.leaf(*colv))); }},
      {"col_sum", [&](ad::Tape& t) { return t.sum(t.mul(t.col_sum(t.leaf(*a)), t.leaf(*rowv))); }},
      {"gather_rows",
       [&](ad::Tape& t) {
         return t.sum(t.mul(t.gather_rows(t.leaf(*a), idx), t.gather_rows(t.leaf(*b), idx2)));
       }},
      {"gather_sum_rows",
       [&](ad::Tape& t) {
         return t.sum(t.exp(t.scale(t.gather_sum_rows(t.leaf(*a), idx, t.leaf(*b), idx2), 0.3)));
       }},
      {"segment_sum_rows",
       [&](ad::Tape& t) {
         ad::Var rows = t.gather_rows(t.leaf(*a), idx);  // 5 rows
         return t.sum(t.exp(t.scale(t.segment_sum_rows(rows, seg, 3), 0.2)));
       }},
      {"scale_rows_bias_relu",
       [&](ad::Tape& t) {
         return t.sum(
             t.mul(t.scale_rows_bias_relu(t.leaf(*a), t.leaf(*colv), t.leaf(*rowv)), t.leaf(*b)));
       }},
      {"concat+slice",
       [&](ad::Tape& t) {
         ad::Var c = t.concat_cols({t.leaf(*a), t.leaf(*b)});
         return t.sum(t.mul(t.slice_cols(c, 3, 5), t.slice_cols(c, 1, 5)));
       }},
      {"slice_rows",
       [&](ad::Tape& t) { return t.sum(t.exp(t.scale(t.slice_rows(t.leaf(*a), 1, 2), 0.4))); }},
      {"softmax_rows",
       [&](ad::Tape& t) { return t.sum(t.mul(softmax_rows(t, t.leaf(*a)), t.leaf(*b))); }},
      {"log_softmax_rows",
       [&](ad::Tape& t) { return t.sum(t.mul(log_softmax_rows(t, t.leaf(*a)), t.leaf(*b))); }},
      {"div_colvec",
       [&](ad::Tape& t) {
         return t.sum(t.div_colvec(t.leaf(*a), t.add_scalar(t.mul(t.leaf(*colv), t.leaf(*colv)), 0.5)));
       }},
      {"incidence_dot",
       [&](ad::Tape& t) {
         return t.sum(t.exp(t.scale(t.incidence_dot(t.leaf(*a), idx, t.leaf(*b), idx2), 0.2)));
       }},
      {"affine_cols",
       [&](ad::Tape& t) {
         return t.sum(t.exp(t.scale(
             t.affine_cols(t.leaf(*a), 1, 3, t.slice_rows(t.leaf(*w), 0, 3), t.slice_cols(t.leaf(*rowv), 0, 3)),
             0.3)));
       }},
      {"segment_weighted_sum",
       [&](ad::Tape& t) {
         ad::Var rows = t.gather_rows(t.leaf(*a), idx);
         ad::Var wcol = t.sigmoid(t.incidence_dot(t.leaf(*a), idx, t.leaf(*b), idx2));
         return t.sum(t.exp(t.scale(t.segment_weighted_sum(rows, wcol, seg, 3), 0.2)));
       }},
      {"scatter_add_rows",
       [&](ad::Tape& t) {
         auto target = std::make_shared<const std::vector<std::int64_t>>(
             std::vector<std::int64_t>{3, 1});
         ad::Var patch = t.slice_rows(t.leaf(*b), 0, 2);
         return t.sum(t.exp(t.scale(t.scatter_add_rows(t.leaf(*a), target, patch), 0.3)));
       }},
      {"binary_gumbel_action_soft",
       [&](ad::Tape& t) {
         RngStream noise_rng(4242);
         Tensor noise = Tensor::uninit(4, 2);
         for (std::int64_t i = 0; i < 8; ++i) noise[i] = noise_rng.gumbel();
         ad::Var p = t.sigmoid(t.leaf(*colv));
         return t.sum(t.binary_gumbel_action(p, 0.8, false, std::move(noise)));
       }},
  };

  for (auto& [name, builder] : cases) {
    INFO("op: " << name);
    auto rep = check_gradients(store, builder);
    INFO("worst: " << rep.worst << " rel_err " << rep.max_rel_err);
    REQUIRE(rep.ok);
    REQUIRE(rep.checked > 0);
  }
}

TEST_CASE("backward is deterministic") {
  ParamStore store;
  Parameter* a = store.create("a", 6, 6);
  Parameter* w = store.create("w", 6, 6);
  RngStream rng(4);
  randomize(*a, rng);
  randomize(*w, rng);
  auto run = [&]() {
    store.zero_grads();
    ad::Tape t;
    ad::Var loss = t.sum(
        t.sigmoid(t.matmul(t.relu(t.matmul(t.leaf(*a), t.leaf(*w))), t.leaf(*a), false, true)));
    t.backward(loss);
    t.harvest_param_grads();
    return std::make_pair(a->grad, w->grad);
  };
  auto [g1a, g1w] = run();
  auto [g2a, g2w] = run();
  REQUIRE(g1a == g2a);
  REQUIRE(g1w == g2w);
}

TEST_CASE("shape mismatches are rejected") {
  ad::Tape t;
  ad::Var a = t.constant(Tensor(2, 3));
  ad::Var b = t.constant(Tensor(3, 2));
  REQUIRE_THROWS_AS(t.add(a, b), DataError);
  REQUIRE_THROWS_AS(t.matmul(a, b, true, false), DataError);
  REQUIRE_THROWS_AS(t.slice_cols(a, 2, 5), DataError);
  REQUIRE_THROWS_AS(t.backward(a), DataError);
}
