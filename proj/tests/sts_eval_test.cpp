#include "cwb/sts_eval.hpp"

#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "cwb/error.hpp"
#include "cwb/sts_data.hpp"
#include "test_util.hpp"

namespace cwb {
namespace {

namespace fs = std::filesystem;
using testing::brute_force_spearman;
using testing::scratch_dir;

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

TEST(ParseStsRow, AcceptsWellFormedRows) {
  StsPair p;
  ASSERT_TRUE(parse_sts_row("5.0\ta b\ta b", p));
  EXPECT_EQ(p.gold, 5.0);
  EXPECT_EQ(p.sentence1, "a b");
  EXPECT_EQ(p.sentence2, "a b");
  ASSERT_TRUE(parse_sts_row("0\tx\ty", p));
  EXPECT_EQ(p.gold, 0.0);
}

TEST(ParseStsRow, RejectsMalformedRows) {
  StsPair p;
  EXPECT_FALSE(parse_sts_row("6.1\ta\tb", p));
  EXPECT_FALSE(parse_sts_row("-0.5\ta\tb", p));
  EXPECT_FALSE(parse_sts_row("abc\ta\tb", p));
  EXPECT_FALSE(parse_sts_row("3.0\tonly one", p));
  EXPECT_FALSE(parse_sts_row("3.0\ta\tb\tc", p));
}

TEST(LoadSts, SinglePairFile) {
  const fs::path dir = scratch_dir("sts_single");
  write_file(dir / "a.tsv", "5.0\ta b\ta b\n");
  const StsDataset d = load_sts(dir);
  EXPECT_EQ(d.pair_count(), 1u);
  EXPECT_EQ(d.subsets.at(0).pairs.at(0).gold, 5.0);
  EXPECT_EQ(d.name, "cwb_sts_single");
}

TEST(LoadSts, OutOfRangeRowSkipped) {
  const fs::path dir = scratch_dir("sts_skip");
  write_file(dir / "a.tsv", "6.1\ta\tb\n2.0\tc\td\n");
  const StsDataset d = load_sts(dir);
  EXPECT_EQ(d.pair_count(), 1u);
  EXPECT_EQ(d.skipped_rows, 1u);
}

TEST(LoadSts, TwoSubsetFiles) {
  const fs::path dir = scratch_dir("sts_two");
  std::string rows;
  for (int i = 0; i < 10; ++i) rows += std::to_string(i % 6) + "\tx" + std::to_string(i) + "\ty\n";
  write_file(dir / "news.tsv", rows);
  write_file(dir / "forum.tsv", rows);
  const StsDataset d = load_sts(dir);
  ASSERT_EQ(d.subsets.size(), 2u);
  EXPECT_EQ(d.pair_count(), 20u);
  EXPECT_EQ(d.subsets[0].name, "forum");
  EXPECT_EQ(d.subsets[1].name, "news");
}

TEST(LoadSts, EmptyOrMissingDirectory) {
  const fs::path dir = scratch_dir("sts_empty");
  write_file(dir / "a.tsv", "9\tbad\trow\n");
  try {
    load_sts(dir);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kEmptyDataset);
  }
  EXPECT_THROW(load_sts(dir / "nope"), Error);
}

TEST(LoadSts, CollectionOfDatasets) {
  const fs::path root = scratch_dir("sts_collection");
  fs::create_directories(root / "STS12");
  fs::create_directories(root / "STSB");
  write_file(root / "STS12" / "x.tsv", "1\ta\tb\n");
  write_file(root / "STSB" / "test.tsv", "2\ta\tb\n3\tc\td\n");
  const auto all = load_sts_collection(root);
  ASSERT_EQ(all.size(), 2u);
  EXPECT_EQ(all[0].name, "STS12");
  EXPECT_EQ(all[1].pair_count(), 2u);
  // A directory with files of its own is a single dataset.
  EXPECT_EQ(load_sts_collection(root / "STSB").size(), 1u);
}

TEST(LoadSts, WriteThenLoad) {
  StsDataset d;
  d.name = "x";
  d.subsets.push_back({"part", {{"a b", "c d", 2.5}, {"e", "f", 0.0}}});
  const fs::path dir = scratch_dir("sts_write");
  write_sts(d, dir);
  const StsDataset back = load_sts(dir);
  ASSERT_EQ(back.pair_count(), 2u);
  EXPECT_EQ(back.subsets[0].name, "part");
  EXPECT_EQ(back.subsets[0].pairs[0].gold, 2.5);
  EXPECT_EQ(back.subsets[0].pairs[1].sentence2, "f");
}

TEST(Spearman, WorkedExamples) {
  const std::vector<double> a = {1, 2, 3};
  EXPECT_EQ(spearman(a, std::vector<double>{10, 20, 30}), 1.0);
  EXPECT_EQ(spearman(a, std::vector<double>{3, 2, 1}), -1.0);
  EXPECT_NEAR(spearman(std::vector<double>{1, 2, 3, 4}, std::vector<double>{1, 3, 2, 4}), 0.8,
              1e-15);
  EXPECT_NEAR(1.0 - 6.0 * 2.0 / (4.0 * 15.0), 0.8, 1e-15);
}

TEST(Spearman, FractionalRanksAverageTies) {
  EXPECT_EQ(fractional_ranks(std::vector<double>{10, 20, 20, 5}),
            (std::vector<double>{2, 3.5, 3.5, 1}));
}

TEST(Spearman, MatchesBruteForceWithTies) {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(40);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = static_cast<double>(rng.below(8));
      y[i] = rng.normal(0, 1);
    }
    if (rng.below(2) == 0) y[0] = y[n - 1];
    bool const_x = true, const_y = true;
    for (std::size_t i = 1; i < n; ++i) {
      const_x &= x[i] == x[0];
      const_y &= y[i] == y[0];
    }
    if (const_x || const_y) continue;
    EXPECT_NEAR(spearman(x, y), brute_force_spearman(x, y), 1e-12);
  }
}

TEST(Spearman, ConstantInputIsUndefined) {
  try {
    spearman(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kUndefinedCorrelation);
  }
  EXPECT_THROW(spearman(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}), Error);
}

StsDataset two_subsets() {
  StsDataset d;
  d.name = "two";
  StsSubset low{"low", {}}, high{"high", {}};
  for (int i = 0; i < 5; ++i) {
    low.pairs.push_back({"a", "b", 0.5 * i});
    high.pairs.push_back({"a", "b", 3.0 + 0.5 * i});
  }
  d.subsets = {low, high};
  return d;
}

TEST(Aggregate, AverageVersusConcat) {
  const StsDataset d = two_subsets();
  // Rising within "low", falling within "high", but "high" sits above "low".
  const std::vector<std::vector<double>> pred = {{0.1, 0.2, 0.3, 0.4, 0.5},
                                                 {0.95, 0.9, 0.85, 0.8, 0.75}};
  EXPECT_EQ(aggregate_spearman(pred, d, Aggregation::kAverage), 0.0);
  std::vector<double> all_pred, all_gold;
  for (std::size_t s = 0; s < 2; ++s) {
    all_pred.insert(all_pred.end(), pred[s].begin(), pred[s].end());
    for (const auto& p : d.subsets[s].pairs) all_gold.push_back(p.gold);
  }
  const double concat = aggregate_spearman(pred, d, Aggregation::kConcat);
  EXPECT_NEAR(concat, brute_force_spearman(all_pred, all_gold), 1e-12);
  EXPECT_GE(std::fabs(concat), 0.1);
}

TEST(Aggregate, SingleSubsetModesAgree) {
  StsDataset d;
  d.subsets.push_back({"only", {{"a", "b", 1}, {"a", "b", 3}, {"a", "b", 2}, {"a", "b", 5}}});
  const std::vector<std::vector<double>> pred = {{0.3, 0.1, 0.7, 0.9}};
  EXPECT_EQ(aggregate_spearman(pred, d, Aggregation::kConcat),
            aggregate_spearman(pred, d, Aggregation::kAverage));
}

TEST(Aggregate, ParseModes) {
  EXPECT_EQ(parse_aggregation("concat"), Aggregation::kConcat);
  EXPECT_EQ(parse_aggregation("average"), Aggregation::kAverage);
  EXPECT_THROW(parse_aggregation("mean"), Error);
}

class EvaluateTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto lines = generate_synthetic_corpus({}, 2);
    vocab_ = build_vocab(lines, 8192);
    EncoderConfig c = testing::check_config();
    c.vocab_size = static_cast<std::uint32_t>(vocab_.size());
    c.max_seq_len = 32;
    model_ = init_model(c, 3);
    sts_ = generate_synthetic_sts(vocab_, 60, 4);
  }
  Vocabulary vocab_;
  EncoderModel model_;
  StsDataset sts_;
};

TEST_F(EvaluateTest, ReportShape) {
  const std::vector<StsDataset> sets = {sts_, sts_};
  const EvalReport r = evaluate(model_, vocab_, sets, PoolingMethod{}, Aggregation::kConcat, "m");
  ASSERT_EQ(r.scores.size(), 2u);
  EXPECT_EQ(r.model_id, "m");
  EXPECT_EQ(r.pooling, "avg-last");
  EXPECT_EQ(r.scores[0].rho_x100, r.scores[1].rho_x100);
  EXPECT_EQ(r.average_x100, r.scores[0].rho_x100);
  EXPECT_LE(std::fabs(r.average_x100), 100.0);
}

TEST_F(EvaluateTest, IdenticalEmbeddingsAreUndefined) {
  EncoderModel flat = model_;
  Tensor& tok = flat.params[kTokenEmbedding].value;
  for (std::size_t i = 0; i < tok.size(); ++i) tok[i] = 0.01 * static_cast<double>(i % 8 + 1);
  for (double& v : flat.params[kPositionEmbedding].value.data()) v = 0.0;
  try {
    evaluate(flat, vocab_, sts_, PoolingMethod{}, Aggregation::kConcat);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kUndefinedCorrelation);
  }
}

TEST_F(EvaluateTest, EmbeddingsIgnoreBatching) {
  std::vector<std::string> sentences;
  for (const auto& p : sts_.subsets[0].pairs) sentences.push_back(p.sentence1);
  const Tensor a = embed_sentences(model_, vocab_, sentences, PoolingMethod{}, 64);
  const Tensor b = embed_sentences(model_, vocab_, sentences, PoolingMethod{}, 7);
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-6);
}

TEST(Report, CsvLayoutAndRoundTrip) {
  EvalReport r;
  r.model_id = "model.ckpt";
  r.pooling = "avg-last";
  r.mode = Aggregation::kAverage;
  r.scores = {{"STS12", 61.234}, {"STSB", 70.0}};
  r.average_x100 = 65.617;
  std::ostringstream os;
  write_report_csv(std::vector<EvalReport>{r}, os);
  EXPECT_EQ(os.str(),
            "model,pooling,mode,STS12,STSB,average\n"
            "model.ckpt,avg-last,average,61.23,70.00,65.62\n");
  const fs::path f = scratch_dir("report") / "eval.csv";
  write_report_csv(std::vector<EvalReport>{r}, f);
  const auto back = read_report_csv(f);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].model_id, "model.ckpt");
  EXPECT_EQ(back[0].mode, Aggregation::kAverage);
  ASSERT_EQ(back[0].scores.size(), 2u);
  EXPECT_NEAR(back[0].scores[0].rho_x100, 61.23, 1e-12);
  EXPECT_NEAR(back[0].average_x100, 65.62, 1e-12);
}

TEST(Report, MarkdownAndTable) {
  EvalReport r;
  r.model_id = "m";
  r.pooling = "avg-last";
  r.scores = {{"synthetic", 88.5}};
  r.average_x100 = 88.5;
  std::ostringstream md, table;
  write_report_markdown(std::vector<EvalReport>{r}, md);
  write_report_table(std::vector<EvalReport>{r}, table);
  EXPECT_NE(md.str().find("| m | avg-last | concat | 88.50 | 88.50 |"), std::string::npos)
      << md.str();
  EXPECT_NE(table.str().find("88.50"), std::string::npos);
}

}  // namespace
}  // namespace cwb
