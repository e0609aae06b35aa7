#include <gtest/gtest.h>

#include <cmath>

#include "duet/attacks.hpp"
#include "test_util.hpp"

namespace duet {
namespace {

using testing::small_task;

DataDomain wide_box(std::size_t d) { return {Tensor({d}, -100.0), Tensor({d}, 100.0)}; }

struct LinearSetup {
  Mlp proxy = init_mlp({5, 3}, Activation::relu, 4);
  Tensor x;
  std::vector<std::size_t> y;
  LinearSetup() {
    Rng rng(9);
    x = rng.uniform_tensor({40, 5}, -1.0, 1.0);
    for (std::size_t i = 0; i < 40; ++i) y.push_back(rng.below(3));
  }
};

double ce_total(const Mlp& m, const Tensor& x, const std::vector<std::size_t>& y) {
  return sum(ce_per_sample(constant(predict(m, x)), kernels::one_hot(y, m.out_dim()))).value()[0];
}

double linf(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

TEST(Attacks, ZeroEpsilonLeavesInputsUnchanged) {
  LinearSetup s;
  Rng rng(1);
  for (AttackKind k : {AttackKind::fgsm, AttackKind::bim, AttackKind::pgd}) {
    AttackConfig c;
    c.kind = k;
    c.epsilon = 0.0;
    EXPECT_EQ(attack(s.proxy, s.x, s.y, c, wide_box(5), rng), s.x) << to_string(k);
  }
}

TEST(Attacks, StayInsideBallAndDomain) {
  auto task = small_task();
  const Mlp proxy = init_mlp({8, 16, 4}, Activation::relu, 3);
  const Tensor& x = task.data.test.x;
  Rng rng(2);
  for (AttackKind k : {AttackKind::fgsm, AttackKind::bim, AttackKind::pgd})
    for (bool targeted : {false, true}) {
      AttackConfig c;
      c.kind = k;
      c.epsilon = 0.3;
      c.targeted = targeted;
      const Tensor adv = attack(proxy, x, task.data.test.y, c, task.domain, rng);
      EXPECT_LE(linf(adv, x), 0.3 + 1e-12);
      for (std::size_t i = 0; i < adv.size(); ++i) {
        EXPECT_GE(adv[i], task.domain.lo[i % 8]);
        EXPECT_LE(adv[i], task.domain.hi[i % 8]);
      }
    }
}

TEST(Attacks, FgsmIsSignedGradientStep) {
  LinearSetup s;
  const double eps = 0.05;
  AttackConfig c;
  c.epsilon = eps;
  const Tensor adv = fgsm(s.proxy, s.x, s.y, c, wide_box(5));
  const Tensor g = ce_input_gradient(s.proxy, s.x, s.y);
  for (std::size_t i = 0; i < adv.size(); ++i) {
    const double sg = g[i] > 0 ? 1.0 : (g[i] < 0 ? -1.0 : 0.0);
    EXPECT_DOUBLE_EQ(adv[i], s.x[i] + eps * sg);
  }
  c.targeted = true;
  const Tensor toward = fgsm(s.proxy, s.x, s.y, c, wide_box(5));
  EXPECT_LT(ce_total(s.proxy, toward, s.y), ce_total(s.proxy, s.x, s.y));
}

TEST(Attacks, FgsmFirstOrderGainIsEpsilonTimesL1Norm) {
  LinearSetup s;
  const double eps = 1e-6;
  AttackConfig c;
  c.epsilon = eps;
  const Tensor adv = fgsm(s.proxy, s.x, s.y, c, wide_box(5));
  const Tensor g = ce_input_gradient(s.proxy, s.x, s.y);
  double l1 = 0.0;
  for (double v : g.values()) l1 += std::fabs(v);
  const double gain = ce_total(s.proxy, adv, s.y) - ce_total(s.proxy, s.x, s.y);
  EXPECT_NEAR(gain / (eps * l1), 1.0, 1e-3);
}

TEST(Attacks, SingleStepIterativeAttacksReduceToFgsm) {
  LinearSetup s;
  AttackConfig c;
  c.epsilon = 0.1;
  c.steps = 1;
  c.step_size = 0.1;
  c.random_start = false;
  const Tensor f = fgsm(s.proxy, s.x, s.y, c, wide_box(5));
  EXPECT_EQ(bim(s.proxy, s.x, s.y, c, wide_box(5)), f);
  Rng rng(3);
  EXPECT_EQ(pgd(s.proxy, s.x, s.y, c, wide_box(5), rng), f);
}

TEST(Attacks, BimLossIsNonDecreasingOnLinearProxy) {
  LinearSetup s;
  double prev = ce_total(s.proxy, s.x, s.y);
  for (std::size_t steps = 1; steps <= 8; ++steps) {
    AttackConfig c;
    c.epsilon = 0.4;
    c.steps = steps;
    c.step_size = 0.05;
    const double now = ce_total(s.proxy, bim(s.proxy, s.x, s.y, c, wide_box(5)), s.y);
    EXPECT_GE(now, prev - 1e-12) << steps;
    prev = now;
  }
}

TEST(Attacks, FgsmSuccessMonotoneInEpsilonOnLinearProxy) {
  LinearSetup s;
  std::size_t prev = 0;
  for (double eps : {0.0, 0.05, 0.1, 0.2, 0.4, 0.8}) {
    AttackConfig c;
    c.epsilon = eps;
    const auto pred = predict_labels(s.proxy, fgsm(s.proxy, s.x, s.y, c, wide_box(5)));
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) wrong += pred[i] != s.y[i];
    EXPECT_GE(wrong, prev) << eps;
    prev = wrong;
  }
}

TEST(Attacks, PgdFoolsWhiteBoxAtLeastAsOftenAsFgsm) {
  auto task = small_task();
  const Mlp& net = task.target;
  const auto labels = predict_labels(net, task.data.test.x);
  AttackConfig c;
  c.epsilon = 0.1 * task.domain.mean_range();
  c.steps = 40;
  Rng rng(5);
  auto fooled = [&](const Tensor& adv) {
    const auto p = predict_labels(net, adv);
    std::size_t n = 0;
    for (std::size_t i = 0; i < p.size(); ++i) n += p[i] != labels[i];
    return n;
  };
  const std::size_t f = fooled(fgsm(net, task.data.test.x, labels, c, task.domain));
  const std::size_t p = fooled(pgd(net, task.data.test.x, labels, c, task.domain, rng));
  EXPECT_GE(p, f);
}

TEST(Attacks, RejectsBadArguments) {
  LinearSetup s;
  Rng rng(1);
  AttackConfig c;
  c.epsilon = -1.0;
  EXPECT_THROW(attack(s.proxy, s.x, s.y, c, wide_box(5), rng), ContractError);
  c.epsilon = 0.1;
  EXPECT_THROW(attack(s.proxy, s.x, {0, 1}, c, wide_box(5), rng), DimensionError);
  EXPECT_THROW(attack(s.proxy, s.x, s.y, c, wide_box(4), rng), DimensionError);
  EXPECT_THROW(parse_attack_kind("cw"), ContractError);
}

TEST(TransferEval, ZeroEpsilonFoolsNothingUntargeted) {
  auto task = small_task();
  Oracle o = Oracle::from_mlp(task.target, LabelMode::hard);
  AttackConfig c;
  c.epsilon = 0.0;
  const auto rep = transfer_eval(o, task.target, c, task.data.test, task.domain, 1);
  EXPECT_EQ(rep.n_fooled, 0u);
  EXPECT_EQ(rep.success_rate, 0.0);
  EXPECT_EQ(o.ledger().phase(Phase::student_train), 0u);
  EXPECT_EQ(o.ledger().phase(Phase::eval_excluded), task.data.test.size() + rep.n_evaluated);
}

TEST(TransferEval, MatchesIndependentRecount) {
  auto task = small_task();
  const Mlp proxy = init_mlp({8, 16, 4}, Activation::relu, 12);
  AttackConfig c;
  c.kind = AttackKind::fgsm;
  c.epsilon = 0.25 * task.domain.mean_range();
  Oracle o = Oracle::from_mlp(task.target, LabelMode::hard);
  const auto rep = transfer_eval(o, proxy, c, task.data.test, task.domain, 4);

  const auto before = predict_labels(task.target, task.data.test.x);
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < before.size(); ++i)
    if (before[i] == task.data.test.y[i]) idx.push_back(i);
  ASSERT_EQ(rep.n_evaluated, idx.size());
  const Tensor x = kernels::gather_rows(task.data.test.x, idx);
  std::vector<std::size_t> y;
  for (auto i : idx) y.push_back(task.data.test.y[i]);
  const auto after = predict_labels(task.target, fgsm(proxy, x, y, c, task.domain));
  std::size_t n = 0;
  for (std::size_t k = 0; k < y.size(); ++k) n += after[k] != y[k];
  EXPECT_EQ(rep.n_fooled, n);
  EXPECT_DOUBLE_EQ(rep.success_rate, static_cast<double>(n) / static_cast<double>(idx.size()));
}

TEST(TransferEval, SeededAndTargetedRunsAreDeterministic) {
  auto task = small_task();
  AttackConfig c;
  c.epsilon = 0.2 * task.domain.mean_range();
  c.targeted = true;
  Oracle o = Oracle::from_mlp(task.target, LabelMode::hard);
  const auto a = transfer_eval(o, task.target, c, task.data.test, task.domain, 8);
  const auto b = transfer_eval(o, task.target, c, task.data.test, task.domain, 8);
  EXPECT_EQ(a.n_fooled, b.n_fooled);
  EXPECT_EQ(a.n_evaluated, b.n_evaluated);
  EXPECT_GT(a.n_fooled, 0u);
}

TEST(TransferEval, NoEligibleSamplesIsContractError) {
  auto task = small_task();
  Dataset wrong = task.data.test;
  const auto pred = predict_labels(task.target, wrong.x);
  for (std::size_t i = 0; i < wrong.size(); ++i) wrong.y[i] = (pred[i] + 1) % 4;
  Oracle o = Oracle::from_mlp(task.target, LabelMode::hard);
  AttackConfig c;
  c.epsilon = 0.1;
  EXPECT_THROW(transfer_eval(o, task.target, c, wrong, task.domain, 1), ContractError);
  EXPECT_THROW(transfer_eval(o, init_mlp({8, 3}, Activation::relu, 1), c, task.data.test, task.domain, 1),
               ContractError);
}

}  // namespace
}  // namespace duet
