#include "cwb/contrastive.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include <gtest/gtest.h>

#include "cwb/error.hpp"
#include "test_util.hpp"

namespace cwb {
namespace {

using testing::check_config;
using testing::random_batch;

constexpr Precision k64 = Precision::kCheck64;

Tensor rows(std::size_t r, std::size_t c, std::vector<double> v) {
  return Tensor({r, c}, std::move(v), k64);
}

TEST(Cosine, WorkedExamples) {
  const std::vector<double> e1 = {1, 0}, e2 = {0, 1}, ones = {1, 1}, a = {1, 2}, b = {2, 1};
  EXPECT_EQ(cosine_sim(e1, e2), 0.0);
  EXPECT_NEAR(cosine_sim(ones, ones), 1.0, 1e-8);
  EXPECT_NEAR(cosine_sim(a, b), 0.8, 1e-8);
}

TEST(Cosine, ZeroVectorsAreDegenerate) {
  const std::vector<double> z = {0, 0, 0}, v = {1, 0, 0};
  bool degenerate = false;
  EXPECT_EQ(cosine_sim(z, z, &degenerate), 0.0);
  EXPECT_TRUE(degenerate);
  EXPECT_EQ(cosine_sim(z, v, &degenerate), 0.0);
  EXPECT_FALSE(degenerate);
  EXPECT_THROW(cosine_sim(z, std::vector<double>{1.0}), Error);
}

TEST(SimMatrix, IdenticalUnitRowsGiveUnitDiagonal) {
  const Tensor h = rows(3, 2, {1, 0, 0, 1, std::sqrt(0.5), std::sqrt(0.5)});
  const Tensor s = sim_matrix(h, h);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(s.at(i, i), 1.0, 1e-8);
  EXPECT_NEAR(s.at(0, 2), std::sqrt(0.5), 1e-8);
}

TEST(SimMatrix, CrossedOrthonormalRows) {
  const Tensor h1 = rows(2, 2, {1, 0, 0, 1});
  const Tensor h2 = rows(2, 2, {0, 1, 1, 0});
  const Tensor s = sim_matrix(h1, h2);
  EXPECT_EQ(s.values(), (std::vector<double>{0, 1.0 / (1.0 + 1e-8), 1.0 / (1.0 + 1e-8), 0}));
}

TEST(SimMatrix, ScaleInvariant) {
  Rng rng(1);
  std::vector<double> a(12), b(12);
  for (double& v : a) v = rng.normal(0, 1);
  for (double& v : b) v = rng.normal(0, 1);
  std::vector<double> a3 = a;
  for (double& v : a3) v *= 3;
  const Tensor s1 = sim_matrix(rows(4, 3, a), rows(4, 3, b));
  const Tensor s3 = sim_matrix(rows(4, 3, a3), rows(4, 3, b));
  for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(s1[i], s3[i], 1e-6);
}

TEST(InfoNce, SingleExampleIsZero) {
  EXPECT_EQ(infonce_loss(rows(1, 1, {0.3}), 0.05).mean, 0.0);
}

TEST(InfoNce, AllEqualIsLogN) {
  EXPECT_NEAR(infonce_loss(rows(4, 4, std::vector<double>(16, 0.7)), 0.05).mean,
              std::log(4.0), 1e-9);
  EXPECT_NEAR(std::log(4.0), 1.386294, 1e-6);
}

TEST(InfoNce, IdentitySimsAtSharpTemperature) {
  const InfoNceLoss loss = infonce_loss(rows(2, 2, {1, 0, 0, 1}), 0.05);
  const double expected = std::log1p(std::exp(-20.0));
  EXPECT_NEAR(expected, 2.061e-9, 1e-12);
  EXPECT_NEAR(loss.mean, expected, 1e-12);
  for (double l : loss.per_example) EXPECT_NEAR(l, expected, 1e-12);
}

TEST(InfoNce, BackwardMatchesFiniteDifferences) {
  Rng rng(4);
  std::vector<double> v(25);
  for (double& x : v) x = rng.uniform() * 2 - 1;
  const Tensor sims = rows(5, 5, v);
  const Tensor d = infonce_backward(sims, 0.5);
  for (std::size_t i = 0; i < 25; ++i) {
    Tensor up = sims, down = sims;
    up[i] += 1e-6;
    down[i] -= 1e-6;
    const double fd = (infonce_loss(up, 0.5).mean - infonce_loss(down, 0.5).mean) / 2e-6;
    EXPECT_NEAR(d[i], fd, 1e-8);
  }
}

TEST(InfoNce, RejectsNonSquare) {
  EXPECT_THROW(infonce_loss(rows(2, 3, std::vector<double>(6, 0.0)), 0.05), Error);
}

TEST(Gradients, SingleSentenceBatchHasNoSignal) {
  const EncoderModel m = init_model(check_config(), 1, k64);
  const SentenceBatch batch = random_batch(1, 8, 64, 2);
  const Gradients g = compute_gradients(m, batch, TrainConfig{}, 1);
  EXPECT_EQ(g.loss, 0.0);
  for (const auto& t : g.grads)
    for (double v : t.data()) EXPECT_NEAR(v, 0.0, 1e-10);
}

TEST(Gradients, MatchFiniteDifferencesInCheck64) {
  const EncoderModel m = init_model(check_config(), 7, k64);
  const SentenceBatch batch = random_batch(3, 6, 64, 8);
  TrainConfig config;
  config.pooling = parse_pooling("avg-all");
  config.seed = 3;
  const auto check = testing::finite_difference_check(m, batch, config, 1e-5);
  EXPECT_EQ(check.tensors, m.params.size());
  EXPECT_LT(check.worst_relative_error, 1e-5) << check.worst_tensor;
}

TEST(Gradients, MaxPoolingAlsoMatches) {
  const EncoderModel m = init_model(check_config(), 9, k64);
  const SentenceBatch batch = random_batch(3, 5, 64, 10);
  TrainConfig config;
  config.pooling = parse_pooling("max-first-last");
  config.temperature = 0.2;
  const auto check = testing::finite_difference_check(m, batch, config, 1e-5);
  EXPECT_LT(check.worst_relative_error, 1e-5) << check.worst_tensor;
}

TEST(Gradients, DuplicatedBatchFollowsLossFormula) {
  const EncoderModel m = init_model(check_config(), 11, k64);
  const SentenceBatch once = random_batch(3, 6, 64, 12);
  std::vector<TokenizedSentence> twice;
  for (int copy = 0; copy < 2; ++copy) {
    for (std::size_t b = 0; b < once.batch; ++b) {
      TokenizedSentence row;
      for (std::size_t t = 0; t < once.width; ++t)
        if (once.real(b, t)) row.ids.push_back(once.id(b, t));
      twice.push_back(row);
    }
  }
  const SentenceBatch dup = make_batch(twice);
  TrainConfig config;
  const Gradients g = compute_gradients(m, dup, config, 5);
  for (const auto& t : g.grads) EXPECT_TRUE(t.all_finite());

  // Re-evaluate the objective by hand from the two dropout views.
  auto view = [&](int v) {
    return pool(encode(m, dup, view_seed(config.seed, 5, v), true), config.pooling);
  };
  const Tensor sims = sim_matrix(view(0), view(1));
  double total = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    double denom = 0.0;
    for (std::size_t j = 0; j < 6; ++j) denom += std::exp(sims.at(i, j) / config.temperature);
    total += std::log(denom) - sims.at(i, i) / config.temperature;
  }
  EXPECT_NEAR(g.loss, total / 6.0, 1e-9);
  EXPECT_EQ(g.loss, contrastive_loss(m, dup, config, 5));
}

TEST(Gradients, NonFiniteLossIsNumericError) {
  const EncoderModel m = init_model(check_config(), 1, k64);
  TrainConfig config;
  config.temperature = 1e-310;
  try {
    compute_gradients(m, random_batch(3, 6, 64, 2), config, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNumeric);
  }
}

class AdamTest : public ::testing::Test {
 protected:
  void SetUp() override { model_ = init_model(check_config(), 21, k64); }
  std::vector<Tensor> constant_grads(double g) const {
    std::vector<Tensor> out = zero_gradients(model_);
    for (auto& t : out) {
      t.set_precision(k64);
      for (double& v : t.data()) v = g;
    }
    return out;
  }
  EncoderModel model_;
};

TEST_F(AdamTest, ZeroGradientsLeaveParametersUnchanged) {
  const EncoderModel before = model_;
  AdamState state = AdamState::for_model(model_);
  adam_step(model_, constant_grads(0.0), state, 1e-3);
  for (std::size_t i = 0; i < before.params.size(); ++i)
    EXPECT_EQ(model_.params[i].value, before.params[i].value);
}

TEST_F(AdamTest, FirstStepMovesByLearningRate) {
  const EncoderModel before = model_;
  AdamState state = AdamState::for_model(model_);
  const double lr = 1e-3, g = -0.25;
  adam_step(model_, constant_grads(g), state, lr);
  const double expected = -lr * g / (std::sqrt(g * g) + 1e-8);
  for (std::size_t i = 0; i < before.params.size(); ++i)
    for (std::size_t k = 0; k < before.params[i].value.size(); ++k)
      EXPECT_NEAR(model_.params[i].value[k] - before.params[i].value[k], expected, 1e-15);
}

TEST_F(AdamTest, TwoStepsDifferFromOneDoubleStep) {
  EncoderModel twice = model_, once = model_;
  const std::vector<Tensor> g1 = constant_grads(0.5), g2 = constant_grads(-0.1);
  AdamState s_twice = AdamState::for_model(twice), s_once = AdamState::for_model(once);
  adam_step(twice, g1, s_twice, 1e-3);
  adam_step(twice, g2, s_twice, 1e-3);
  adam_step(once, g1, s_once, 2e-3);
  EXPECT_EQ(s_twice.step, 2u);
  EXPECT_NE(twice.params[0].value, once.params[0].value);
}

TEST_F(AdamTest, ShapeMismatchRejected) {
  AdamState state = AdamState::for_model(model_);
  std::vector<Tensor> g = constant_grads(1.0);
  g.pop_back();
  EXPECT_THROW(adam_step(model_, g, state, 1e-3), Error);
}

std::vector<Tensor> filled(std::size_t n, double value) {
  return {Tensor({n}, std::vector<double>(n, value), k64)};
}

TEST(LossScaler, TinyGradientsFlushWithoutScaling) {
  LossScaler scaler(1.0);
  const auto out = scaler.round_trip(filled(10, 1e-9));
  ASSERT_TRUE(out.has_value());
  for (double v : (*out)[0].data()) EXPECT_EQ(v, 0.0);
}

TEST(LossScaler, ScalingPreservesTinyGradients) {
  LossScaler scaler(16384.0);
  std::vector<Tensor> g = filled(4, 1e-9);
  g[0][1] = -1e-9;
  const auto out = scaler.round_trip(g);
  ASSERT_TRUE(out.has_value());
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NE((*out)[0][i], 0.0);
    EXPECT_LE(std::fabs((*out)[0][i] - g[0][i]) / std::fabs(g[0][i]), std::ldexp(1.0, -10));
  }
}

TEST(LossScaler, OverflowSkipsAndHalves) {
  LossScaler scaler(65536.0);
  EXPECT_FALSE(scaler.round_trip(filled(3, 2.0)).has_value());
  EXPECT_EQ(scaler.scale(), 32768.0);
  EXPECT_EQ(scaler.overflow_count(), 1u);
  EXPECT_TRUE(scaler.round_trip(filled(3, 1.0)).has_value());
  EXPECT_THROW(LossScaler(0.0), Error);
}

TEST(ScaledBackward, HugeScaleOverflowsAndSkips) {
  const EncoderModel m = init_model(check_config(), 2);
  LossScaler scaler(1e30);
  const ScaledStep step = scaled_backward(m, random_batch(4, 6, 64, 3), TrainConfig{}, scaler, 1);
  EXPECT_FALSE(step.grads.has_value());
  EXPECT_EQ(step.scale_used, 1e30);
  EXPECT_EQ(scaler.scale(), 5e29);
}

TEST(ScaledBackward, TracksFullPrecisionGradients) {
  const EncoderModel m = init_model(check_config(), 2);
  const SentenceBatch batch = random_batch(4, 6, 64, 3);
  TrainConfig config;
  config.temperature = 0.5;
  LossScaler scaler(1024.0);
  const ScaledStep scaled = scaled_backward(m, batch, config, scaler, 1);
  ASSERT_TRUE(scaled.grads.has_value());
  const Gradients ref = compute_gradients(m, batch, config, 1);
  double diff2 = 0.0, ref2 = 0.0;
  for (std::size_t p = 0; p < ref.grads.size(); ++p) {
    for (std::size_t i = 0; i < ref.grads[p].size(); ++i) {
      const double d = (*scaled.grads)[p][i] - ref.grads[p][i];
      diff2 += d * d;
      ref2 += ref.grads[p][i] * ref.grads[p][i];
    }
  }
  // emu16 forward passes carry ~1e-3 relative noise.
  EXPECT_LT(std::sqrt(diff2 / ref2), 0.1);
}

class TrainTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto lines = generate_synthetic_corpus({}, 4);
    vocab_ = build_vocab(lines, 64);
    corpus_ = tokenize_all(lines, vocab_, 16);
  }
  Vocabulary vocab_;
  std::vector<TokenizedSentence> corpus_;
};

TEST_F(TrainTest, ZeroStepsRejected) {
  EncoderModel m = init_model(check_config(), 1);
  TrainConfig c;
  c.max_steps = 0;
  try {
    train(m, corpus_, c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
  }
}

TEST_F(TrainTest, OneStepOneLossEntry) {
  EncoderModel m = init_model(check_config(), 1);
  TrainConfig c;
  c.max_steps = 1;
  c.batch_size = 8;
  const TrainResult r = train(m, corpus_, c);
  ASSERT_EQ(r.trace.size(), 1u);
  EXPECT_EQ(r.trace[0].step, 1u);
  EXPECT_TRUE(std::isfinite(r.trace[0].loss));
}

TEST_F(TrainTest, DeterministicGivenSeed) {
  TrainConfig c;
  c.max_steps = 3;
  c.batch_size = 8;
  EncoderModel a = init_model(check_config(), 1), b = init_model(check_config(), 1);
  const TrainResult ra = train(a, corpus_, c), rb = train(b, corpus_, c);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(ra.trace[i].loss, rb.trace[i].loss);
  for (std::size_t i = 0; i < a.params.size(); ++i) EXPECT_EQ(a.params[i].value, b.params[i].value);
}

TEST_F(TrainTest, EvalHookFiresOnSchedule) {
  EncoderModel m = init_model(check_config(), 1);
  TrainConfig c;
  c.max_steps = 7;
  c.batch_size = 4;
  c.eval_every = 3;
  std::vector<std::size_t> seen;
  train(m, corpus_, c, [&](std::size_t step, const EncoderModel&) { seen.push_back(step); });
  EXPECT_EQ(seen, (std::vector<std::size_t>{3, 6}));
}

TEST_F(TrainTest, NumericFailureCarriesStep) {
  EncoderModel m = init_model(check_config(), 1);
  TrainConfig c;
  c.max_steps = 2;
  c.batch_size = 4;
  c.temperature = 1e-310;
  try {
    train(m, corpus_, c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNumeric);
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos) << e.what();
  }
}

// At 2^10 the check-size model never overflows, so both runs apply the same
// 50 updates and differ only by binary16 rounding.
TEST_F(TrainTest, AmpAndFullPrecisionEndClose) {
  TrainConfig c;
  c.max_steps = 50;
  c.batch_size = 16;
  c.loss_scale = 1024.0;
  EncoderModel full = init_model(check_config(), 6);
  EncoderModel mixed = full;
  const TrainResult rf = train(full, corpus_, c);
  c.amp = true;
  const TrainResult rm = train(mixed, corpus_, c);
  EXPECT_EQ(rm.overflow_count, 0u);
  const double lf = rf.trace.back().loss, lm = rm.trace.back().loss;
  EXPECT_LE(std::fabs(lm - lf) / lf, 0.05) << lf << " vs " << lm;
}

// At 2^14 the first scaled gradients exceed the binary16 range: those steps
// are skipped and the scale halves until it fits.
TEST_F(TrainTest, AmpAtDefaultScaleBacksOffThenTrains) {
  TrainConfig c;
  c.max_steps = 12;
  c.batch_size = 16;
  c.amp = true;
  EncoderModel m = init_model(check_config(), 6);
  const TrainResult r = train(m, corpus_, c);
  ASSERT_GT(r.overflow_count, 0u);
  std::size_t skipped = 0;
  for (std::size_t i = 0; i < r.trace.size(); ++i) {
    if (r.trace[i].skipped) {
      ++skipped;
      ASSERT_LT(i + 1, r.trace.size());
      EXPECT_EQ(r.trace[i + 1].scale, r.trace[i].scale / 2);
    } else if (i + 1 < r.trace.size()) {
      EXPECT_EQ(r.trace[i + 1].scale, r.trace[i].scale);
    }
  }
  EXPECT_EQ(skipped, r.overflow_count);
  EXPECT_FALSE(r.trace.back().skipped);
}

TEST_F(TrainTest, LossCsvColumns) {
  TrainResult r;
  r.trace = {{1, 0.5, 16384.0, false}, {2, 0.25, 8192.0, true}};
  const auto dir = testing::scratch_dir("loss_csv");
  write_loss_csv(r, true, dir / "a.csv");
  write_loss_csv(r, false, dir / "b.csv");
  std::ifstream a(dir / "a.csv"), b(dir / "b.csv");
  std::string line;
  std::getline(a, line);
  EXPECT_EQ(line, "step,loss,scale");
  std::getline(a, line);
  EXPECT_EQ(line, "1,0.5,16384");
  std::getline(b, line);
  EXPECT_EQ(line, "step,loss");
  std::getline(b, line);
  EXPECT_EQ(line, "1,0.5");
}

}  // namespace
}  // namespace cwb
