#include "cwb/sts_eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

#include "cwb/contrastive.hpp"
#include "cwb/error.hpp"

namespace cwb {

namespace {

std::string fixed2(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

// Dataset names across reports, in first-seen order.
std::vector<std::string> dataset_columns(std::span<const EvalReport> reports) {
  std::vector<std::string> names;
  for (const auto& r : reports) {
    for (const auto& s : r.scores) {
      if (std::find(names.begin(), names.end(), s.name) == names.end()) {
        names.push_back(s.name);
      }
    }
  }
  return names;
}

std::vector<std::vector<std::string>> report_rows(
    std::span<const EvalReport> reports, const std::vector<std::string>& columns) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : reports) {
    std::vector<std::string> row{r.model_id, r.pooling,
                                 std::string(to_string(r.mode))};
    for (const auto& name : columns) {
      auto it = std::find_if(r.scores.begin(), r.scores.end(),
                             [&](const DatasetScore& s) { return s.name == name; });
      row.push_back(it == r.scores.end() ? "" : fixed2(it->rho_x100));
    }
    row.push_back(fixed2(r.average_x100));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<std::string> header(const std::vector<std::string>& columns) {
  std::vector<std::string> h{"model", "pooling", "mode"};
  h.insert(h.end(), columns.begin(), columns.end());
  h.push_back("average");
  return h;
}

}  // namespace

Aggregation parse_aggregation(std::string_view name) {
  if (name == "concat") return Aggregation::kConcat;
  if (name == "average") return Aggregation::kAverage;
  throw Error(ErrorKind::kConfig, "unknown aggregation mode '" + std::string(name) +
                                      "' (expected concat or average)");
}

std::string_view to_string(Aggregation mode) {
  return mode == Aggregation::kConcat ? "concat" : "average";
}

std::vector<double> fractional_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return values[a] < values[b];
  });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    // Positions i..j-1 share the mean of ranks i+1..j.
    const double rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = rank;
    i = j;
  }
  return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw Error(ErrorKind::kDimension, "spearman: length mismatch");
  }
  if (x.size() < 2) {
    throw Error(ErrorKind::kDimension, "spearman needs at least two values");
  }
  const auto rx = fractional_ranks(x);
  const auto ry = fractional_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mean = (n + 1.0) / 2.0;  // mean of any fractional ranking
  double cov = 0.0, vx = 0.0, vy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const double dx = rx[i] - mean;
    const double dy = ry[i] - mean;
    cov += dx * dy;
    vx += dx * dx;
    vy += dy * dy;
  }
  if (vx == 0.0 || vy == 0.0) {
    throw Error(ErrorKind::kUndefinedCorrelation,
                "spearman correlation undefined for constant input");
  }
  return std::clamp(cov / std::sqrt(vx * vy), -1.0, 1.0);
}

Tensor embed_sentences(const EncoderModel& model, const Vocabulary& vocab,
                       std::span<const std::string> sentences,
                       const PoolingMethod& pooling, std::size_t batch_size) {
  const auto tokens = tokenize_all(sentences, vocab, model.config.max_seq_len);
  const std::size_t dim = pooled_dim(pooling, model.config.hidden_dim);
  Tensor out({sentences.size(), dim}, Precision::kCheck64);
  for (std::size_t start = 0; start < tokens.size(); start += batch_size) {
    const std::size_t count = std::min(batch_size, tokens.size() - start);
    const SentenceBatch batch =
        make_batch(std::span(tokens).subspan(start, count));
    const Tensor pooled = pool(encode(model, batch, 0, false), pooling);
    std::copy(pooled.data().begin(), pooled.data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(start * dim));
  }
  return out;
}

std::vector<std::vector<double>> score_pairs(const EncoderModel& model,
                                             const Vocabulary& vocab,
                                             const StsDataset& dataset,
                                             const PoolingMethod& pooling) {
  std::vector<std::string> sentences;
  sentences.reserve(2 * dataset.pair_count());
  for (const auto& subset : dataset.subsets) {
    for (const auto& p : subset.pairs) {
      sentences.push_back(p.sentence1);
      sentences.push_back(p.sentence2);
    }
  }
  Tensor emb;
  try {
    emb = embed_sentences(model, vocab, sentences, pooling);
  } catch (const Error& e) {
    throw Error(e.kind(), "dataset " + dataset.name + ": " + e.message());
  }
  const std::size_t dim = emb.dim(1);
  std::vector<std::vector<double>> scores;
  std::size_t row = 0;
  for (const auto& subset : dataset.subsets) {
    std::vector<double> s;
    s.reserve(subset.pairs.size());
    for (std::size_t i = 0; i < subset.pairs.size(); ++i, row += 2) {
      s.push_back(cosine_sim(emb.data().subspan(row * dim, dim),
                             emb.data().subspan((row + 1) * dim, dim)));
    }
    scores.push_back(std::move(s));
  }
  return scores;
}

double aggregate_spearman(const std::vector<std::vector<double>>& predicted,
                          const StsDataset& dataset, Aggregation mode) {
  if (predicted.size() != dataset.subsets.size() || dataset.subsets.empty()) {
    throw Error(ErrorKind::kDimension, "aggregate_spearman: subset mismatch");
  }
  if (mode == Aggregation::kConcat) {
    std::vector<double> all_pred, all_gold;
    for (std::size_t s = 0; s < predicted.size(); ++s) {
      all_pred.insert(all_pred.end(), predicted[s].begin(), predicted[s].end());
      for (const auto& p : dataset.subsets[s].pairs) all_gold.push_back(p.gold);
    }
    return spearman(all_pred, all_gold);
  }
  double total = 0.0;
  for (std::size_t s = 0; s < predicted.size(); ++s) {
    std::vector<double> gold;
    for (const auto& p : dataset.subsets[s].pairs) gold.push_back(p.gold);
    total += spearman(predicted[s], gold);
  }
  return total / static_cast<double>(predicted.size());
}

EvalReport evaluate(const EncoderModel& model, const Vocabulary& vocab,
                    std::span<const StsDataset> datasets,
                    const PoolingMethod& pooling, Aggregation mode,
                    const std::string& model_id) {
  if (datasets.empty()) {
    throw Error(ErrorKind::kEmptyDataset, "no STS datasets to evaluate");
  }
  EvalReport report;
  report.model_id = model_id;
  report.pooling = to_string(pooling);
  report.mode = mode;
  double total = 0.0;
  for (const auto& dataset : datasets) {
    const auto predicted = score_pairs(model, vocab, dataset, pooling);
    double rho;
    try {
      rho = aggregate_spearman(predicted, dataset, mode);
    } catch (const Error& e) {
      throw Error(e.kind(), "dataset " + dataset.name + ": " + e.message());
    }
    report.scores.push_back({dataset.name, 100.0 * rho});
    total += 100.0 * rho;
  }
  report.average_x100 = total / static_cast<double>(datasets.size());
  return report;
}

EvalReport evaluate(const EncoderModel& model, const Vocabulary& vocab,
                    const StsDataset& dataset, const PoolingMethod& pooling,
                    Aggregation mode, const std::string& model_id) {
  return evaluate(model, vocab, std::span(&dataset, 1), pooling, mode, model_id);
}

void write_report_csv(std::span<const EvalReport> reports, std::ostream& out) {
  const auto columns = dataset_columns(reports);
  const auto head = header(columns);
  for (std::size_t i = 0; i < head.size(); ++i) out << (i ? "," : "") << head[i];
  out << '\n';
  for (const auto& row : report_rows(reports, columns)) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
    out << '\n';
  }
}

void write_report_csv(std::span<const EvalReport> reports,
                      const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  write_report_csv(reports, out);
  if (!out) throw Error(ErrorKind::kIo, "write failed for " + path.string());
}

void write_report_table(std::span<const EvalReport> reports, std::ostream& out) {
  const auto columns = dataset_columns(reports);
  const auto head = header(columns);
  const auto rows = report_rows(reports, columns);
  std::vector<std::size_t> widths(head.size());
  for (std::size_t i = 0; i < head.size(); ++i) widths[i] = head[i].size();
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) widths[i] = std::max(widths[i], row[i].size());
  }
  auto emit = [&](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i > 0) out << "  ";
      // Text columns left-aligned, scores right-aligned.
      if (i < 3) {
        out << std::left << std::setw(static_cast<int>(widths[i])) << row[i];
      } else {
        out << std::right << std::setw(static_cast<int>(widths[i])) << row[i];
      }
    }
    out << '\n';
  };
  emit(head);
  for (const auto& row : rows) emit(row);
  out << std::left;
}

void write_report_markdown(std::span<const EvalReport> reports, std::ostream& out) {
  const auto columns = dataset_columns(reports);
  const auto head = header(columns);
  out << '|';
  for (const auto& h : head) out << ' ' << h << " |";
  out << "\n|";
  for (std::size_t i = 0; i < head.size(); ++i) out << (i < 3 ? "---|" : "---:|");
  out << '\n';
  for (const auto& row : report_rows(reports, columns)) {
    out << '|';
    for (const auto& cell : row) out << ' ' << cell << " |";
    out << '\n';
  }
}

std::vector<EvalReport> read_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) {
    throw Error(ErrorKind::kInput, "empty report " + path.string());
  }
  const auto head = split(line, ',');
  if (head.size() < 4 || head[0] != "model" || head[1] != "pooling" ||
      head[2] != "mode" || head.back() != "average") {
    throw Error(ErrorKind::kInput, "not an evaluation report: " + path.string());
  }
  std::vector<EvalReport> reports;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto row = split(line, ',');
    if (row.size() != head.size()) {
      throw Error(ErrorKind::kInput, "ragged row in " + path.string());
    }
    EvalReport r;
    r.model_id = row[0];
    r.pooling = row[1];
    r.mode = parse_aggregation(row[2]);
    for (std::size_t i = 3; i + 1 < row.size(); ++i) {
      if (!row[i].empty()) r.scores.push_back({head[i], std::stod(row[i])});
    }
    r.average_x100 = std::stod(row.back());
    reports.push_back(std::move(r));
  }
  return reports;
}

}  // namespace cwb
