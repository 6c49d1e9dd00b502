#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cwb/corpus.hpp"
#include "cwb/encoder.hpp"
#include "cwb/pooling.hpp"
#include "cwb/sts_data.hpp"

namespace cwb {

enum class Aggregation { kConcat, kAverage };

Aggregation parse_aggregation(std::string_view name);
std::string_view to_string(Aggregation mode);

// 1-based ranks; tied values share the mean of the ranks they span.
std::vector<double> fractional_ranks(std::span<const double> values);

// Pearson correlation of fractional ranks. Throws kDimension on length
// mismatch or fewer than 2 values and kUndefinedCorrelation if either side
// is constant.
double spearman(std::span<const double> x, std::span<const double> y);

// Dropout-free sentence embeddings, encoded in chunks of `batch_size`.
Tensor embed_sentences(const EncoderModel& model, const Vocabulary& vocab,
                       std::span<const std::string> sentences,
                       const PoolingMethod& pooling,
                       std::size_t batch_size = 64);

// Cosine similarity of each pair's embeddings, grouped like dataset.subsets.
std::vector<std::vector<double>> score_pairs(const EncoderModel& model,
                                             const Vocabulary& vocab,
                                             const StsDataset& dataset,
                                             const PoolingMethod& pooling);

// Concat ranks all subsets jointly; average is the unweighted mean of
// per-subset correlations.
double aggregate_spearman(const std::vector<std::vector<double>>& predicted,
                          const StsDataset& dataset, Aggregation mode);

struct DatasetScore {
  std::string name;
  double rho_x100 = 0.0;
};

struct EvalReport {
  std::string model_id;
  std::string pooling;
  Aggregation mode = Aggregation::kConcat;
  std::vector<DatasetScore> scores;
  double average_x100 = 0.0;
};

EvalReport evaluate(const EncoderModel& model, const Vocabulary& vocab,
                    std::span<const StsDataset> datasets,
                    const PoolingMethod& pooling, Aggregation mode,
                    const std::string& model_id = "model");
EvalReport evaluate(const EncoderModel& model, const Vocabulary& vocab,
                    const StsDataset& dataset, const PoolingMethod& pooling,
                    Aggregation mode, const std::string& model_id = "model");

// Wide CSV: model,pooling,mode,<dataset...>,average with rho*100 to 2 dp.
void write_report_csv(std::span<const EvalReport> reports, std::ostream& out);
void write_report_csv(std::span<const EvalReport> reports,
                      const std::filesystem::path& path);
// Aligned text table with the same columns.
void write_report_table(std::span<const EvalReport> reports, std::ostream& out);
void write_report_markdown(std::span<const EvalReport> reports, std::ostream& out);
std::vector<EvalReport> read_report_csv(const std::filesystem::path& path);

}  // namespace cwb
