#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "bcnn/slr.hpp"
#include "oracles.hpp"

using namespace bcnn;

namespace {

/// One output channel per entry of `norms`, each a single 1x1 weight re = norm.
ComplexTensor channels_with_norms(const std::vector<float>& norms) {
  ComplexTensor w({norms.size(), 1, 1, 1});
  for (std::size_t o = 0; o < norms.size(); ++o) w.re[o] = norms[o];
  return w;
}

double distance(const ComplexTensor& a, const ComplexTensor& b) {
  double acc = 0;
  for (std::size_t j = 0; j < a.re.size(); ++j) {
    const double dr = double(a.re[j]) - b.re[j], di = double(a.im[j]) - b.im[j];
    acc += dr * dr + di * di;
  }
  return std::sqrt(acc);
}

}  // namespace

TEST_CASE("step size schedule") {
  CHECK(alpha(1, 300, 0.1) == doctest::Approx(1.0 - 1.0 / 300.0));
  double prev = 0;
  for (std::size_t k = 1; k <= 10000; ++k) {
    const double a = alpha(k, 300, 0.1);
    CHECK(a > 0.0);
    CHECK(a < 1.0);
    CHECK(a >= prev);
    prev = a;
  }
  const double k = 50;
  CHECK(alpha(50, 20, 0.5) == doctest::Approx(1 - 1 / (20 * std::pow(k, 1 - std::pow(k, -0.5)))));
  CHECK_THROWS_AS(alpha(0, 300, 0.1), Error);
}

TEST_CASE("channel projection examples") {
  const ComplexTensor w = channels_with_norms({3, 1, 2});
  const ComplexTensor z = project_channels(w, 2);
  CHECK(z.re[0] == 3.0f);
  CHECK(z.re[1] == 0.0f);
  CHECK(z.re[2] == 2.0f);
  CHECK(project_channels(w, 3) == w);
  CHECK(nonzero_channels(project_channels(w, 1)) == 1);
  // Ties keep the lower index.
  CHECK(project_channels(channels_with_norms({1, 1, 1}), 1).re[0] == 1.0f);
  try {
    project_channels(w, 4);
    FAIL("expected BudgetTooLarge");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::BudgetTooLarge);
  }
}

TEST_CASE("projection is idempotent and optimal on random tensors") {
  std::mt19937_64 rng(21);
  for (int rep = 0; rep < 20; ++rep) {
    const ComplexTensor w = oracle::random_uniform({8, 2, 3, 3}, rng, -1, 1);
    for (std::size_t b = 1; b <= 8; ++b) {
      const ComplexTensor z = project_channels(w, b);
      CHECK(project_channels(z, b) == z);
      const auto keep = oracle::exhaustive_projection(w, b);
      for (std::size_t o = 0; o < 8; ++o) CHECK((z.re[o * 18] != 0.0f) == keep[o]);
    }
  }
}

TEST_CASE("channel norms combine both planes") {
  ComplexTensor w({2, 1, 1, 2});
  w.re[0] = 3;
  w.im[1] = 4;
  w.im[2] = 1;
  const auto n = channel_norms(w);
  CHECK(n[0] == doctest::Approx(5.0));
  CHECK(n[1] == doctest::Approx(1.0));
}

TEST_CASE("augmented Lagrangian") {
  std::mt19937_64 rng(22);
  SlrConfig cfg;
  cfg.rho = 0.5;
  cfg.budgets = {2};
  SlrState st;
  st.W = {oracle::random_uniform({3, 2, 1, 1}, rng, -1, 1)};
  st.Z = {project_channels(st.W[0], 2)};
  st.Lambda = {ComplexTensor(st.W[0].shape())};

  SUBCASE("W equal to Z and zero multipliers give the loss") {
    st.W = st.Z;
    CHECK(augmented_lagrangian(st, 1.25, cfg) == 1.25);
  }
  SUBCASE("infeasible Z is infinite") {
    st.Z = st.W;
    CHECK(std::isinf(augmented_lagrangian(st, 1.25, cfg)));
    CHECK(std::isfinite(augmented_lagrangian_finite(st, 1.25, cfg.rho)));
  }
  SUBCASE("term by term") {
    st.Lambda = {oracle::random_uniform({3, 2, 1, 1}, rng, -1, 1)};
    double lin = 0, quad = 0;
    for (std::size_t j = 0; j < 6; ++j) {
      const double dr = double(st.W[0].re[j]) - st.Z[0].re[j], di = double(st.W[0].im[j]) - st.Z[0].im[j];
      lin += st.Lambda[0].re[j] * dr + st.Lambda[0].im[j] * di;
      quad += dr * dr + di * di;
    }
    CHECK(augmented_lagrangian(st, 2.0, cfg) == doctest::Approx(2.0 + lin + 0.25 * quad).epsilon(1e-12));
  }
}

TEST_CASE("configuration checks") {
  SlrConfig cfg;
  cfg.budgets = {1, 2};
  CHECK_NOTHROW(cfg.validate(2));
  CHECK_THROWS_AS(cfg.validate(3), Error);
  cfg.rho = 0;
  CHECK_THROWS_AS(cfg.validate(2), Error);
  cfg.rho = 0.1;
  cfg.r = 1.0;
  CHECK_THROWS_AS(cfg.validate(2), Error);
  cfg.r = 0.1;
  cfg.budgets = {0, 2};
  CHECK_THROWS_AS(cfg.validate(2), Error);
}

TEST_CASE("feasible weights already equal to Z leave the multipliers untouched") {
  ComplexTensor w = channels_with_norms({2, 0, 1, 0});
  QuadraticProblem q(w, w, 0.1f);
  SlrConfig cfg;
  cfg.budgets = {2};
  SlrState st = init_slr_state(q, cfg);
  CHECK(st.Z[0] == w);
  for (int i = 0; i < 3; ++i) {
    const SlrRecord r = slr_step(st, q, 0, cfg);
    CHECK(r.feasible);
    CHECK(r.violation == 0.0);
  }
  CHECK(st.Lambda[0] == ComplexTensor(w.shape()));
  CHECK(st.W[0] == w);
  CHECK(st.s == cfg.s0);
}

TEST_CASE("step sizes follow the logged distances") {
  std::mt19937_64 rng(23);
  const ComplexTensor target = oracle::random_uniform({6, 2, 2, 2}, rng, -1, 1);
  const ComplexTensor start = oracle::random_uniform({6, 2, 2, 2}, rng, -1, 1);
  QuadraticProblem q(target, start, 0.1f, 3);
  SlrConfig cfg;
  cfg.budgets = {3};
  SlrState st = init_slr_state(q, cfg);
  std::size_t fired = 0;
  for (int it = 0; it < 20; ++it) {
    const ComplexTensor W_prev = st.W[0], Z_prev = st.Z[0];
    const double s_prev = st.s;
    const double a = alpha(st.k, cfg.M, cfg.r);
    const SlrRecord r = slr_step(st, q, 0, cfg);
    const double prev_gap = distance(W_prev, Z_prev);
    const double mid = r.condition1 ? a * s_prev * prev_gap / distance(st.W[0], Z_prev) : s_prev;
    CHECK(r.s_mid == doctest::Approx(mid).epsilon(1e-12));
    const double expected = r.condition2 ? a * mid * prev_gap / distance(st.W[0], st.Z[0]) : mid;
    CHECK(r.stepsize == doctest::Approx(expected).epsilon(1e-12));
    CHECK(r.violation == doctest::Approx(distance(st.W[0], st.Z[0])).epsilon(1e-12));
    CHECK(r.iteration == static_cast<std::size_t>(it + 1));
    fired += r.condition1 + r.condition2;
  }
  CHECK(fired > 0);
}

TEST_CASE("quadratic problem: violation shrinks from the unconstrained minimizer") {
  std::mt19937_64 rng(24);
  const ComplexTensor target = oracle::random_uniform({4, 2, 3, 3}, rng, -1, 1);
  QuadraticProblem q(target, target, 0.1f, 5);
  SlrConfig cfg;
  cfg.budgets = {2};
  cfg.max_iters = 50;
  const SlrResult res = slr_prune(q, cfg);
  REQUIRE(res.history.size() == 50);
  CHECK(res.history.back().violation < res.history.front().violation);
  for (std::size_t i = 30; i < 50; ++i) CHECK(res.history[i].violation <= res.history[i - 1].violation);
  CHECK(nonzero_channels(res.state.W[0]) <= 2);
}

TEST_CASE("history line format") {
  SlrRecord r;
  r.iteration = 3;
  r.loss = 0.5;
  r.violation = 0.25;
  r.stepsize = 0.01;
  r.feasible = true;
  std::ostringstream os;
  write_history_line(os, r);
  CHECK(os.str() == "3 0.5 0.25 0.01 1\n");
}

TEST_CASE("budgets from a retained fraction") {
  CHECK(budgets_from_ratio({96, 80, 1}, 0.5) == std::vector<std::size_t>{48, 40, 1});
  CHECK(budgets_from_ratio({10}, 0.01) == std::vector<std::size_t>{1});
  CHECK(budgets_from_ratio({7}, 1.0) == std::vector<std::size_t>{7});
  CHECK_THROWS_AS(budgets_from_ratio({7}, 0.0), Error);
  CHECK_THROWS_AS(budgets_from_ratio({7}, 1.5), Error);
}

TEST_CASE("pruning a model hard-disables channels") {
  ModelGraph m = build_tiny_bcnn({3, 8, 8, 6, 2, 2}, 3);
  const Dataset d = make_synthetic_blobs(8, 2, {1, 3, 8, 8}, 0.5, 1.0, 9);
  TrainConfig tc;
  tc.batch_size = 8;
  ModelSlrProblem p(m, d, tc, 1);
  SlrConfig cfg;
  cfg.budgets = budgets_from_ratio(p.channel_counts(), 0.5);
  cfg.max_iters = 2;
  slr_prune(p, cfg);
  for (auto* conv : m.binary_convs()) {
    CHECK(conv->active_count() == 3);
    CHECK(nonzero_channels(conv->latent) <= 3);
  }
}
