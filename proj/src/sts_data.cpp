#include "cwb/sts_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>

#include "cwb/error.hpp"

namespace cwb {

namespace fs = std::filesystem;

namespace {

std::vector<fs::path> tsv_files(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".tsv") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

std::size_t StsDataset::pair_count() const {
  std::size_t n = 0;
  for (const auto& s : subsets) n += s.pairs.size();
  return n;
}

bool parse_sts_row(const std::string& line, StsPair& out) {
  std::string row = line;
  if (!row.empty() && row.back() == '\r') row.pop_back();
  const auto first = row.find('\t');
  if (first == std::string::npos) return false;
  const auto second = row.find('\t', first + 1);
  if (second == std::string::npos) return false;
  if (row.find('\t', second + 1) != std::string::npos) return false;

  double gold = 0.0;
  const char* begin = row.data();
  const char* end = row.data() + first;
  auto [ptr, ec] = std::from_chars(begin, end, gold);
  if (ec != std::errc() || ptr != end || !std::isfinite(gold)) return false;
  if (gold < 0.0 || gold > 5.0) return false;

  out.gold = gold;
  out.sentence1 = row.substr(first + 1, second - first - 1);
  out.sentence2 = row.substr(second + 1);
  return true;
}

StsDataset load_sts(const fs::path& dir) {
  if (!fs::is_directory(dir)) {
    throw Error(ErrorKind::kIo, "STS directory not found: " + dir.string());
  }
  StsDataset dataset;
  dataset.name = dir.filename().string();
  if (dataset.name.empty()) dataset.name = dir.parent_path().filename().string();
  for (const auto& file : tsv_files(dir)) {
    std::ifstream in(file);
    if (!in) throw Error(ErrorKind::kIo, "cannot read " + file.string());
    StsSubset subset;
    subset.name = file.stem().string();
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty() || line == "\r") continue;
      StsPair pair;
      if (parse_sts_row(line, pair)) {
        subset.pairs.push_back(std::move(pair));
      } else {
        ++dataset.skipped_rows;
        std::cerr << "warning: skipping malformed STS row " << file.string()
                  << ":" << line_no << "\n";
      }
    }
    if (!subset.pairs.empty()) dataset.subsets.push_back(std::move(subset));
  }
  if (dataset.subsets.empty()) {
    throw Error(ErrorKind::kEmptyDataset,
                "no parsable STS rows under " + dir.string());
  }
  return dataset;
}

std::vector<StsDataset> load_sts_collection(const fs::path& root) {
  if (!fs::is_directory(root)) {
    throw Error(ErrorKind::kIo, "STS directory not found: " + root.string());
  }
  if (!tsv_files(root).empty()) return {load_sts(root)};
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && !tsv_files(entry.path()).empty()) {
      dirs.push_back(entry.path());
    }
  }
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) {
    throw Error(ErrorKind::kEmptyDataset,
                "no STS subset files under " + root.string());
  }
  std::vector<StsDataset> datasets;
  for (const auto& d : dirs) datasets.push_back(load_sts(d));
  return datasets;
}

void write_sts(const StsDataset& dataset, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& subset : dataset.subsets) {
    const fs::path file = dir / (subset.name + ".tsv");
    std::ofstream out(file, std::ios::binary);
    if (!out) throw Error(ErrorKind::kIo, "cannot write " + file.string());
    for (const auto& p : subset.pairs) {
      char gold[32];
      auto [ptr, ec] = std::to_chars(gold, gold + sizeof gold, p.gold);
      out.write(gold, ptr - gold);
      out << '\t' << p.sentence1 << '\t' << p.sentence2 << '\n';
    }
    if (!out) throw Error(ErrorKind::kIo, "write failed for " + file.string());
  }
}

}  // namespace cwb
