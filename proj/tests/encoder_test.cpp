#include "cwb/encoder.hpp"

#include <cmath>

#include <gtest/gtest.h>

#include "cwb/contrastive.hpp"
#include "cwb/corpus.hpp"
#include "cwb/error.hpp"
#include "cwb/pooling.hpp"

namespace cwb {
namespace {

EncoderConfig small_config() {
  EncoderConfig c;
  c.n_layers = 2;
  c.hidden_dim = 16;
  c.n_heads = 2;
  c.ffn_dim = 32;
  c.vocab_size = 128;
  c.max_seq_len = 32;
  return c;
}

SentenceBatch random_batch(std::size_t batch, std::size_t width, std::uint32_t vocab,
                           std::uint64_t seed, bool ragged = false) {
  Rng rng(seed);
  std::vector<TokenizedSentence> rows(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t len = ragged ? 2 + rng.below(width - 1) : width;
    rows[b].ids.push_back(kClsId);
    for (std::size_t t = 1; t < len; ++t) {
      rows[b].ids.push_back(static_cast<std::int32_t>(kReservedTokens + rng.below(vocab - kReservedTokens)));
    }
  }
  return make_batch(rows);
}

TEST(EncoderConfig, ParameterCountMatchesFormula) {
  const EncoderConfig c = small_config();
  // Hand count: V*H + P*H + L * (4H^2 + 2HF + 9H + F).
  const std::size_t expected = 128 * 16 + 32 * 16 + 2 * (4 * 256 + 2 * 16 * 32 + 9 * 16 + 32);
  EXPECT_EQ(expected, 7008u);
  EXPECT_EQ(expected_parameter_count(c), expected);
  const EncoderModel m = init_model(c, 1);
  std::size_t total = 0;
  for (const auto& p : m.params) total += p.value.size();
  EXPECT_EQ(total, expected);
  EXPECT_EQ(m.parameter_count(), expected);
  EXPECT_EQ(m.params.size(), 2 + 2 * kParamsPerLayer);
}

TEST(EncoderConfig, RejectsIndivisibleHeads) {
  EncoderConfig c = small_config();
  c.hidden_dim = 15;
  try {
    c.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
  }
  EXPECT_THROW(init_model(c, 1), Error);
}

TEST(EncoderConfig, RejectsBadDropoutAndZeroSizes) {
  EncoderConfig c = small_config();
  c.dropout_rate = 1.0f;
  EXPECT_THROW(c.validate(), Error);
  c = small_config();
  c.n_layers = 0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(InitModel, SameSeedBitIdentical) {
  const EncoderModel a = init_model(small_config(), 5);
  const EncoderModel b = init_model(small_config(), 5);
  const EncoderModel c = init_model(small_config(), 6);
  ASSERT_EQ(a.params.size(), b.params.size());
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    EXPECT_EQ(a.params[i].name, b.params[i].name);
    EXPECT_EQ(a.params[i].value, b.params[i].value);
  }
  EXPECT_NE(a.params[0].value, c.params[0].value);
}

TEST(InitModel, NamesAndInitialValues) {
  const EncoderModel m = init_model(small_config(), 2);
  EXPECT_EQ(m.params[kTokenEmbedding].name, "embeddings.token");
  EXPECT_EQ(m.params[kPositionEmbedding].name, "embeddings.position");
  EXPECT_EQ(m.params[param_index(1, kFfnInWeight)].name, "layers.1.ffn.in.weight");
  EXPECT_EQ(m.params[param_index(1, kFfnInWeight)].value.shape(), (Shape{16, 32}));
  for (double v : m.params[param_index(0, kLn1Gain)].value.data()) EXPECT_EQ(v, 1.0);
  for (double v : m.params[param_index(0, kQueryBias)].value.data()) EXPECT_EQ(v, 0.0);
  const Tensor& emb = m.params[kTokenEmbedding].value;
  double s = 0.0, s2 = 0.0;
  for (double v : emb.data()) {
    s += v;
    s2 += v * v;
  }
  const double n = static_cast<double>(emb.size());
  EXPECT_NEAR(s / n, 0.0, 0.003);
  EXPECT_NEAR(std::sqrt(s2 / n), 0.02, 0.002);
  ASSERT_NE(m.find("layers.0.attn.query.weight"), nullptr);
  EXPECT_EQ(m.find("nope"), nullptr);
}

TEST(Encode, ShapesOfHiddenStack) {
  const EncoderModel m = init_model(small_config(), 3);
  const SentenceBatch batch = random_batch(3, 8, 128, 1);
  const HiddenStack h = encode(m, batch, 0, false);
  ASSERT_EQ(h.layers.size(), 3u);
  EXPECT_EQ(h.n_layers(), 2u);
  for (const auto& t : h.layers) EXPECT_EQ(t.shape(), (Shape{3, 8, 16}));
}

TEST(Encode, InferenceIsDeterministic) {
  const EncoderModel m = init_model(small_config(), 3);
  const SentenceBatch batch = random_batch(4, 6, 128, 2);
  const HiddenStack a = encode(m, batch, 1, false);
  const HiddenStack b = encode(m, batch, 999, false);
  for (std::size_t l = 0; l < a.layers.size(); ++l) EXPECT_EQ(a.layers[l], b.layers[l]);
}

TEST(Encode, DropoutViewsAreSimilarButNotIdentical) {
  const EncoderModel m = init_model(small_config(), 3);
  const SentenceBatch batch = random_batch(4, 10, 128, 3);
  const PoolingMethod avg_last{};
  const Tensor p1 = pool(encode(m, batch, 11, true), avg_last);
  const Tensor p2 = pool(encode(m, batch, 12, true), avg_last);
  EXPECT_NE(p1, p2);
  for (std::size_t b = 0; b < 4; ++b) {
    const auto r1 = p1.data().subspan(b * 16, 16);
    const auto r2 = p2.data().subspan(b * 16, 16);
    EXPECT_GT(cosine_sim(r1, r2), 0.5);
  }
}

TEST(Encode, PaddingDoesNotLeakIntoRealPositions) {
  EncoderConfig c = small_config();
  const EncoderModel m = init_model(c, 4, Precision::kCheck64);
  const SentenceBatch full = random_batch(3, 9, 128, 5, true);
  for (std::size_t b = 0; b < full.batch; ++b) {
    TokenizedSentence row;
    for (std::size_t t = 0; t < full.width; ++t)
      if (full.real(b, t)) row.ids.push_back(full.id(b, t));
    const SentenceBatch alone = make_batch(std::vector<TokenizedSentence>{row});
    const HiddenStack hf = encode(m, full, 0, false);
    const HiddenStack ha = encode(m, alone, 0, false);
    for (std::size_t l = 0; l < hf.layers.size(); ++l) {
      for (std::size_t t = 0; t < row.length(); ++t) {
        for (std::size_t k = 0; k < 16; ++k) {
          EXPECT_NEAR(hf.layers[l][(b * full.width + t) * 16 + k],
                      ha.layers[l][t * 16 + k], 1e-12);
        }
      }
    }
  }
}

TEST(Encode, RejectsOutOfRangeIdsAndOverlongBatches) {
  const EncoderModel m = init_model(small_config(), 3);
  SentenceBatch bad = random_batch(1, 4, 128, 1);
  bad.ids[1] = 128;
  EXPECT_THROW(encode(m, bad, 0, false), Error);
  EXPECT_THROW(encode(m, random_batch(1, 33, 128, 1), 0, false), Error);
}

TEST(Encode, PrecisionTagPropagates) {
  const EncoderModel m = init_model(small_config(), 3);
  const SentenceBatch batch = random_batch(2, 5, 128, 9);
  EncodeOptions opt;
  opt.precision = Precision::kEmu16;
  const HiddenStack h = encode(m, batch, opt);
  for (const auto& t : h.layers) {
    EXPECT_EQ(t.precision(), Precision::kEmu16);
    for (double v : t.data()) EXPECT_EQ(v, round_to_binary16(v));
  }
}

}  // namespace
}  // namespace cwb
