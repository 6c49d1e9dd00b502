#include "cwb/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "cwb/error.hpp"

namespace cwb {

namespace {

using json = nlohmann::json;

std::size_t pooling_rank(const PoolingMethod& m) {
  const auto all = all_pooling_methods();
  return static_cast<std::size_t>(std::find(all.begin(), all.end(), m) - all.begin());
}

std::string format_number(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

std::string fixed2(double v) {
  std::ostringstream os;
  os << std::fixed;
  os.precision(2);
  os << v;
  return os.str();
}

template <typename T>
std::vector<T> read_array(const json& doc, const char* key) {
  if (!doc.contains(key) || !doc[key].is_array()) {
    throw Error(ErrorKind::kGrid, std::string("grid key '") + key +
                                      "' must be an array");
  }
  try {
    return doc[key].get<std::vector<T>>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kGrid, std::string("grid key '") + key + "': " + e.what());
  }
}

}  // namespace

void Grid::validate() const {
  if (learning_rates.empty() || temperatures.empty() || batch_sizes.empty() ||
      poolings.empty()) {
    throw Error(ErrorKind::kGrid, "every grid dimension needs at least one value");
  }
  if (eval_every == 0 || steps < eval_every) {
    throw Error(ErrorKind::kGrid, "grid steps must be >= eval_every >= 1");
  }
}

Grid load_grid(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot read grid " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kGrid, "grid file is not valid JSON: " + std::string(e.what()));
  }
  if (!doc.is_object()) throw Error(ErrorKind::kGrid, "grid file must be a JSON object");
  static const char* const kKeys[] = {"learning_rate", "temperature", "batch_size",
                                      "pooling", "steps", "eval_every"};
  for (const auto& [key, value] : doc.items()) {
    if (std::find(std::begin(kKeys), std::end(kKeys), key) == std::end(kKeys)) {
      throw Error(ErrorKind::kGrid, "unknown grid key '" + key + "'");
    }
  }
  Grid grid;
  grid.learning_rates = read_array<double>(doc, "learning_rate");
  grid.temperatures = read_array<double>(doc, "temperature");
  grid.batch_sizes = read_array<std::size_t>(doc, "batch_size");
  for (const auto& name : read_array<std::string>(doc, "pooling")) {
    grid.poolings.push_back(parse_pooling(name));
  }
  for (const char* key : {"steps", "eval_every"}) {
    if (!doc.contains(key) || !doc[key].is_number_integer() || doc[key].get<long long>() < 1) {
      throw Error(ErrorKind::kGrid, std::string("grid key '") + key +
                                        "' must be a positive integer");
    }
  }
  grid.steps = doc["steps"].get<std::size_t>();
  grid.eval_every = doc["eval_every"].get<std::size_t>();
  grid.validate();
  return grid;
}

std::vector<TrainConfig> expand_grid(const Grid& grid, const TrainConfig& base) {
  grid.validate();
  auto lrs = grid.learning_rates;
  auto taus = grid.temperatures;
  auto sizes = grid.batch_sizes;
  auto pools = grid.poolings;
  std::sort(lrs.begin(), lrs.end());
  std::sort(taus.begin(), taus.end());
  std::sort(sizes.begin(), sizes.end());
  std::stable_sort(pools.begin(), pools.end(), [](const auto& a, const auto& b) {
    return pooling_rank(a) < pooling_rank(b);
  });
  std::vector<TrainConfig> configs;
  configs.reserve(lrs.size() * taus.size() * sizes.size() * pools.size());
  for (double lr : lrs) {
    for (double tau : taus) {
      for (std::size_t n : sizes) {
        for (const auto& pooling : pools) {
          TrainConfig c = base;
          c.learning_rate = lr;
          c.temperature = tau;
          c.batch_size = n;
          c.pooling = pooling;
          c.max_steps = grid.steps;
          c.eval_every = grid.eval_every;
          configs.push_back(c);
        }
      }
    }
  }
  return configs;
}

TrialResult run_trial(const TrainConfig& config, const TrialInputs& inputs,
                      std::size_t budget, std::size_t eval_every) {
  TrialResult result;
  result.config = config;
  result.config.max_steps = budget;
  result.config.eval_every = eval_every;
  try {
    if (inputs.vocab == nullptr) {
      throw Error(ErrorKind::kConfig, "run_trial needs a vocabulary");
    }
    EncoderModel model = init_model(inputs.encoder, config.seed);
    result.training = train(model, inputs.corpus, result.config,
                            [&](std::size_t step, const EncoderModel& m) {
                              result.checkpoints.push_back(
                                  {step, evaluate(m, *inputs.vocab, inputs.datasets,
                                                  config.pooling, inputs.mode)});
                            });
    result.best_step = detect_best_step(result);
    for (const auto& c : result.checkpoints) {
      if (c.step == result.best_step) result.best_average_x100 = c.report.average_x100;
    }
  } catch (const Error& e) {
    result.failed = true;
    result.error = e.what();
  }
  return result;
}

std::size_t detect_best_step(const TrialResult& result) {
  if (result.checkpoints.empty()) return 0;
  const Checkpoint* best = &result.checkpoints.front();
  for (const auto& c : result.checkpoints) {
    if (c.report.average_x100 > best->report.average_x100) best = &c;
  }
  return best->step;
}

std::vector<TrialResult> run_sweep(std::span<const TrainConfig> configs,
                                   const TrialInputs& inputs, std::size_t jobs) {
  std::vector<TrialResult> results(configs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < configs.size(); i = next++) {
      results[i] = run_trial(configs[i], inputs, configs[i].max_steps,
                             configs[i].eval_every);
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(configs.size(), 1));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> threads;
    for (std::size_t t = 0; t < n_threads; ++t) threads.emplace_back(worker);
  }
  return results;
}

void emit_sweep_report(std::span<const TrialResult> results,
                       const std::filesystem::path& dir) {
  if (results.empty()) throw Error(ErrorKind::kGrid, "no trial results to report");
  std::filesystem::create_directories(dir / "losses");

  std::vector<std::string> datasets;
  for (const auto& r : results) {
    for (const auto& c : r.checkpoints) {
      for (const auto& s : c.report.scores) {
        if (std::find(datasets.begin(), datasets.end(), s.name) == datasets.end()) {
          datasets.push_back(s.name);
        }
      }
    }
  }

  const auto csv_path = dir / "sweep.csv";
  std::ofstream csv(csv_path, std::ios::binary);
  if (!csv) throw Error(ErrorKind::kIo, "cannot write " + csv_path.string());
  csv << "trial,learning_rate,temperature,batch_size,pooling,step";
  for (const auto& d : datasets) csv << ',' << d;
  csv << ",average\n";
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    write_loss_csv(r.training, r.config.amp,
                   dir / "losses" / ("trial_" + std::to_string(i) + ".csv"));
    if (r.failed) continue;
    for (const auto& c : r.checkpoints) {
      csv << i << ',' << format_number(r.config.learning_rate) << ','
          << format_number(r.config.temperature) << ',' << r.config.batch_size << ','
          << to_string(r.config.pooling) << ',' << c.step;
      for (const auto& d : datasets) {
        auto it = std::find_if(c.report.scores.begin(), c.report.scores.end(),
                               [&](const DatasetScore& s) { return s.name == d; });
        csv << ',' << (it == c.report.scores.end() ? "" : fixed2(it->rho_x100));
      }
      csv << ',' << fixed2(c.report.average_x100) << '\n';
    }
  }
  if (!csv) throw Error(ErrorKind::kIo, "write failed for " + csv_path.string());

  const auto md_path = dir / "summary.md";
  std::ofstream md(md_path, std::ios::binary);
  if (!md) throw Error(ErrorKind::kIo, "cannot write " + md_path.string());
  md << "# Sweep summary\n\n";
  const TrialResult* best = nullptr;
  std::size_t best_index = 0;
  std::size_t failed = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (results[i].failed) {
      ++failed;
      continue;
    }
    if (best == nullptr || results[i].best_average_x100 > best->best_average_x100) {
      best = &results[i];
      best_index = i;
    }
  }
  md << "Trials: " << results.size() << " (" << failed << " failed)\n\n";
  if (best != nullptr) {
    md << "## Best configuration\n\n"
       << "| trial | learning_rate | temperature | batch_size | pooling | best_step | average |\n"
       << "|---:|---:|---:|---:|---|---:|---:|\n"
       << "| " << best_index << " | " << format_number(best->config.learning_rate)
       << " | " << format_number(best->config.temperature) << " | "
       << best->config.batch_size << " | " << to_string(best->config.pooling) << " | "
       << best->best_step << " | " << fixed2(best->best_average_x100) << " |\n\n";
  }

  // Best average reached by any trial sharing each value of a dimension.
  auto dimension = [&](const char* title, auto key_of) {
    std::map<std::string, double> best_by_value;
    std::vector<std::string> order;
    for (const auto& r : results) {
      if (r.failed) continue;
      const std::string key = key_of(r.config);
      auto [it, inserted] = best_by_value.emplace(key, r.best_average_x100);
      if (inserted) {
        order.push_back(key);
      } else {
        it->second = std::max(it->second, r.best_average_x100);
      }
    }
    if (order.empty()) return;
    std::string argmax = order.front();
    for (const auto& k : order) {
      if (best_by_value[k] > best_by_value[argmax]) argmax = k;
    }
    md << "## " << title << "\n\n| value | best average |\n|---|---:|\n";
    for (const auto& k : order) {
      md << "| " << k << (k == argmax ? " (best)" : "") << " | "
         << fixed2(best_by_value[k]) << " |\n";
    }
    md << '\n';
  };
  dimension("learning_rate", [](const TrainConfig& c) { return format_number(c.learning_rate); });
  dimension("temperature", [](const TrainConfig& c) { return format_number(c.temperature); });
  dimension("batch_size", [](const TrainConfig& c) { return std::to_string(c.batch_size); });
  dimension("pooling", [](const TrainConfig& c) { return to_string(c.pooling); });

  if (failed > 0) {
    md << "## Failed trials\n\n";
    for (std::size_t i = 0; i < results.size(); ++i) {
      if (results[i].failed) md << "- trial " << i << ": " << results[i].error << '\n';
    }
  }
  if (!md) throw Error(ErrorKind::kIo, "write failed for " + md_path.string());
}

}  // namespace cwb
