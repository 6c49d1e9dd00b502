#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace cwb {

struct StsPair {
  std::string sentence1;
  std::string sentence2;
  double gold = 0.0;  // in [0, 5]
};

struct StsSubset {
  std::string name;
  std::vector<StsPair> pairs;
};

struct StsDataset {
  std::string name;
  std::vector<StsSubset> subsets;
  std::size_t skipped_rows = 0;  // malformed rows dropped while loading

  std::size_t pair_count() const;
};

// Parses one TSV row "gold\tsentence1\tsentence2". Returns false for
// malformed rows (wrong field count, unparsable or out-of-range gold).
bool parse_sts_row(const std::string& line, StsPair& out);

// Loads every *.tsv in `dir` (sorted by file name) as one subset. Malformed
// rows are skipped with a warning on stderr and counted.
StsDataset load_sts(const std::filesystem::path& dir);

// Loads a benchmark root: if `root` holds *.tsv files it is one dataset,
// otherwise each subdirectory holding *.tsv files is a dataset.
std::vector<StsDataset> load_sts_collection(const std::filesystem::path& root);

// Writes each subset as <dir>/<subset>.tsv.
void write_sts(const StsDataset& dataset, const std::filesystem::path& dir);

}  // namespace cwb
