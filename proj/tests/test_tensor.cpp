#include <gtest/gtest.h>

#include "frustumkit/gradcheck.hpp"
#include "frustumkit/tensor.hpp"

namespace {

using namespace fk;

TEST(Tensor, ShapeDataInvariant) {
  EXPECT_THROW(Tensor({2, 3}, {1, 2, 3}), DataError);
  const Tensor t = Tensor::zeros({2, 3});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
}

TEST(SharedMlp, IdentityWeightsZeroBias) {
  Tape tape;
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor w = Tensor::zeros({3, 3});
  for (int i = 0; i < 3; ++i) w.at(i, i) = 1.0;
  const ValueId out =
      tape.add_row(tape.matmul(tape.leaf(x), tape.leaf(w)), tape.leaf(Tensor::zeros({3})));
  for (size_t i = 0; i < 6; ++i) EXPECT_EQ(tape.value(out).data[i], x.data[i]);
}

TEST(SharedMlp, SingleRowIsFullyConnected) {
  Rng rng(3);
  Tape tape;
  Tensor x({1, 4}, {0.3, -0.2, 0.9, 0.1});
  Tensor w = Tensor::zeros({4, 5});
  for (double& v : w.data) v = rng.uniform(-1, 1);
  Tensor b = Tensor::zeros({5});
  for (double& v : b.data) v = rng.uniform(-1, 1);
  const ValueId out = tape.add_row(tape.matmul(tape.leaf(x), tape.leaf(w)), tape.leaf(b));
  for (size_t j = 0; j < 5; ++j) {
    double expect = b.data[j];
    for (size_t k = 0; k < 4; ++k) expect += x.data[k] * w.at(k, j);
    EXPECT_NEAR(tape.value(out).at(0, j), expect, 1e-15);
  }
}

TEST(SharedMlp, RowPermutationEquivariance) {
  Rng rng(5);
  Tensor x = Tensor::zeros({6, 4});
  for (double& v : x.data) v = rng.uniform(-1, 1);
  Tensor w = Tensor::zeros({4, 7});
  for (double& v : w.data) v = rng.uniform(-1, 1);
  Tensor b = Tensor::zeros({7});
  for (double& v : b.data) v = rng.uniform(-1, 1);

  auto run = [&](const Tensor& pts) {
    Tape tape;
    return tape.value(
        tape.relu(tape.add_row(tape.matmul(tape.leaf(pts), tape.leaf(w)), tape.leaf(b))));
  };
  const Tensor base = run(x);
  std::vector<size_t> perm = {3, 0, 5, 1, 4, 2};
  Tensor shuffled = Tensor::zeros({6, 4});
  for (size_t i = 0; i < 6; ++i)
    for (size_t j = 0; j < 4; ++j) shuffled.at(i, j) = x.at(perm[i], j);
  const Tensor permuted = run(shuffled);
  for (size_t i = 0; i < 6; ++i)
    for (size_t j = 0; j < 7; ++j) EXPECT_EQ(permuted.at(i, j), base.at(perm[i], j));
}

TEST(MaxPool, SingleRowIdentity) {
  Tape tape;
  Tensor x({1, 3}, {1, -2, 3});
  const ValueId out = tape.max_rows(tape.leaf(x));
  EXPECT_EQ(tape.value(out).data[0], 1.0);
  EXPECT_EQ(tape.value(out).data[1], -2.0);
  EXPECT_EQ(tape.value(out).data[2], 3.0);
}

TEST(MaxPool, PermutationInvariance) {
  Rng rng(7);
  Tensor x = Tensor::zeros({10, 5});
  for (double& v : x.data) v = rng.uniform(-2, 2);
  Tape t1;
  const Tensor pooled = t1.value(t1.max_rows(t1.leaf(x)));
  std::vector<size_t> perm(10);
  std::iota(perm.begin(), perm.end(), size_t{0});
  for (size_t i = 10; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
  Tensor shuffled = Tensor::zeros({10, 5});
  for (size_t i = 0; i < 10; ++i)
    for (size_t j = 0; j < 5; ++j) shuffled.at(i, j) = x.at(perm[i], j);
  Tape t2;
  const Tensor pooled2 = t2.value(t2.max_rows(t2.leaf(shuffled)));
  for (size_t j = 0; j < 5; ++j) EXPECT_EQ(pooled.data[j], pooled2.data[j]);
}

TEST(MaxPool, GradientMatchesFiniteDifferences) {
  Rng rng(9);
  Tensor x = Tensor::zeros({5, 3});
  for (double& v : x.data) v = rng.uniform(-2, 2);
  std::vector<double> w = {0.7, 1.3, 0.4};
  auto fn = [&w](Tape& t, std::vector<ValueId>& ids) {
    return t.sum_all(t.mul_cvec(t.max_rows(ids[0]), w));
  };
  const auto report = gradient_check(fn, {x}, 1e-3, 1e-4, 1e-6, "max_pool");
  EXPECT_TRUE(report.ok) << "max rel " << report.max_rel_error;
}

TEST(MaxPool, TieRoutesGradientToLowestRow) {
  Tape tape;
  Tensor x({3, 1}, {2.0, 2.0, 1.0});
  const ValueId leaf = tape.leaf(x);
  const ValueId loss = tape.sum_all(tape.max_rows(leaf));
  tape.backward(loss);
  EXPECT_EQ(tape.grad(leaf).data[0], 1.0);
  EXPECT_EQ(tape.grad(leaf).data[1], 0.0);
  EXPECT_EQ(tape.grad(leaf).data[2], 0.0);
}

TEST(Concat, BackwardSplitsGradient) {
  Tape tape;
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor b({2, 1}, {5, 6});
  const ValueId la = tape.leaf(a), lb = tape.leaf(b);
  const ValueId out = tape.concat_cols(la, lb);
  const ValueId loss = tape.sum_all(tape.mul_cvec(tape.flatten(out), {1, 2, 3, 4, 5, 6}));
  tape.backward(loss);
  // columns of a receive weights 1,2 / 4,5; b receives 3 / 6
  EXPECT_EQ(tape.grad(la).data[0], 1.0);
  EXPECT_EQ(tape.grad(la).data[1], 2.0);
  EXPECT_EQ(tape.grad(la).data[2], 4.0);
  EXPECT_EQ(tape.grad(la).data[3], 5.0);
  EXPECT_EQ(tape.grad(lb).data[0], 3.0);
  EXPECT_EQ(tape.grad(lb).data[1], 6.0);
}

TEST(Backward, NonFiniteLossRejected) {
  Tape tape;
  Tensor x({1}, {1e308});
  const ValueId leaf = tape.leaf(x);
  const ValueId doubled = tape.add(leaf, leaf);  // overflows to inf
  EXPECT_THROW(tape.backward(doubled), NonFiniteLossError);
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  Tensor p({2}, {1.0, -2.0});
  AdamState state;
  adam_step(p, Tensor::zeros({2}), state, 0.01);
  EXPECT_EQ(p.data[0], 1.0);
  EXPECT_EQ(p.data[1], -2.0);
  EXPECT_EQ(state.t, 1);
}

TEST(Adam, DescendsOnQuadratic) {
  Tensor x({1}, {1.0});
  AdamState state;
  // f(x) = x^2, grad = 2x
  const Tensor g({1}, {2.0});
  adam_step(x, g, state, 0.001);
  EXPECT_LT(x.data[0], 1.0);
}

TEST(Adam, Reaches2dQuadraticMinimum) {
  // 500 steps on f(x) = 0.5 (x0^2 + 4 x1^2) from (1, 1)
  Tensor x({2}, {1.0, 1.0});
  AdamState state;
  for (int s = 0; s < 500; ++s) {
    const Tensor g({2}, {x.data[0], 4.0 * x.data[1]});
    adam_step(x, g, state, 0.01);
  }
  EXPECT_LT(std::sqrt(x.data[0] * x.data[0] + x.data[1] * x.data[1]), 1e-2);
}

TEST(Adam, LrSchedule) {
  EXPECT_DOUBLE_EQ(lr_at_step(0.001, 0, 2000), 0.001);
  EXPECT_DOUBLE_EQ(lr_at_step(0.001, 1999, 2000), 0.001);
  EXPECT_DOUBLE_EQ(lr_at_step(0.001, 2000, 2000), 0.0005);
  EXPECT_DOUBLE_EQ(lr_at_step(0.001, 4000, 2000), 0.00025);
}

TEST(GradCheckSuite, EveryLayerAndLossPasses) {
  // small config count here; the acceptance suite runs the full 20
  const auto report = run_gradcheck_suite(4, 7);
  for (const auto& item : report.items)
    EXPECT_TRUE(item.ok) << item.name << " max_rel=" << item.max_rel_error
                         << " max_abs=" << item.max_abs_error;
  EXPECT_TRUE(report.all_ok);
}

TEST(Determinism, SameSeedSameTrajectory) {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    Tensor w = Tensor::zeros({4, 4});
    for (double& v : w.data) v = rng.uniform(-1, 1);
    AdamState state;
    std::vector<double> trace;
    for (int s = 0; s < 20; ++s) {
      Tape tape;
      const ValueId leaf = tape.leaf(w);
      Tensor x = Tensor::zeros({3, 4});
      for (double& v : x.data) v = rng.uniform(-1, 1);
      const ValueId loss =
          tape.sum_all(tape.mul_cvec(tape.flatten(tape.relu(tape.matmul(tape.leaf(x), leaf))),
                                     std::vector<double>(12, 0.5)));
      tape.backward(loss);
      adam_step(w, tape.grad(leaf), state, 0.01);
      trace.push_back(tape.value(loss).data[0]);
    }
    return std::make_pair(w, trace);
  };
  const auto [w1, t1] = run(123);
  const auto [w2, t2] = run(123);
  EXPECT_EQ(w1.data, w2.data);  // bit identical
  EXPECT_EQ(t1, t2);
}

TEST(BatchNorm, NormalizesRowsPerChannel) {
  Tape tape;
  Tensor x({4, 2}, {1, 10, 2, 20, 3, 30, 4, 40});
  Tensor gamma({2}, {1.0, 2.0});
  Tensor beta({2}, {0.0, 5.0});
  std::vector<double> mean, var;
  const ValueId y =
      tape.batch_norm_rows(tape.leaf(x), tape.leaf(gamma), tape.leaf(beta), 1e-12, &mean, &var);
  EXPECT_NEAR(mean[0], 2.5, 1e-12);
  EXPECT_NEAR(var[0], 1.25, 1e-12);
  // column 0: normalized values have zero mean / unit variance
  double sum = 0;
  for (int i = 0; i < 4; ++i) sum += tape.value(y).at(i, 0);
  EXPECT_NEAR(sum, 0.0, 1e-9);
  // column 1 is scaled by gamma=2 and shifted by beta=5
  double sum1 = 0;
  for (int i = 0; i < 4; ++i) sum1 += tape.value(y).at(i, 1);
  EXPECT_NEAR(sum1 / 4.0, 5.0, 1e-9);
}

TEST(BatchNorm, InferenceUsesRunningStats) {
  Tape tape;
  Tensor x({2, 1}, {3.0, 5.0});
  Tensor gamma({1}, {2.0});
  Tensor beta({1}, {1.0});
  const ValueId y = tape.batch_norm_rows_inference(tape.leaf(x), tape.leaf(gamma),
                                                   tape.leaf(beta), {4.0}, {4.0}, 0.0);
  EXPECT_NEAR(tape.value(y).at(0, 0), 2.0 * (3.0 - 4.0) / 2.0 + 1.0, 1e-12);
  EXPECT_NEAR(tape.value(y).at(1, 0), 2.0 * (5.0 - 4.0) / 2.0 + 1.0, 1e-12);
}

TEST(BatchNorm, DecaySchedule) {
  EXPECT_DOUBLE_EQ(bn_decay_at_step(0, 2000), 0.5);
  EXPECT_DOUBLE_EQ(bn_decay_at_step(1999, 2000), 0.5);
  EXPECT_DOUBLE_EQ(bn_decay_at_step(2000, 2000), 0.75);
  EXPECT_DOUBLE_EQ(bn_decay_at_step(4000, 2000), 0.875);
  EXPECT_DOUBLE_EQ(bn_decay_at_step(400000, 2000), 0.99);  // clipped
}

TEST(Checkpointing, WrapAngleOpValueAndGradient) {
  Tape tape;
  Tensor x({1}, {4.0});  // outside [-pi, pi)
  const ValueId leaf = tape.leaf(x);
  const ValueId wrapped = tape.wrap_angle_op(leaf);
  EXPECT_NEAR(tape.value(wrapped).data[0], 4.0 - 2.0 * kPi, 1e-15);
  const ValueId loss = tape.scale(wrapped, 3.0);
  tape.backward(loss);
  EXPECT_EQ(tape.grad(leaf).data[0], 3.0);
}

}  // namespace
