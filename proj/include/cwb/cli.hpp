#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cwb/contrastive.hpp"
#include "cwb/encoder.hpp"

namespace cwb {

// Resolved settings of one command. Keys mirror the long flag names with
// '-' replaced by '_'; every key has a default, so `values` is always complete.
struct RunConfig {
  nlohmann::json values;

  const std::string& str(const std::string& key) const;
  double real(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  bool flag(const std::string& key) const;

  EncoderConfig encoder() const;
  TrainConfig train() const;
};

RunConfig default_run_config();

// Overlays `overrides` onto `base`. Unknown keys and type mismatches throw
// kConfig naming the key.
void merge_config(RunConfig& base, const nlohmann::json& overrides);

// defaults <- file <- flags.
RunConfig resolve_config(const RunConfig& defaults,
                         const std::optional<std::filesystem::path>& file,
                         const nlohmann::json& flags);

// Subcommands: train, eval, sweep, quantize, report, synth.
// Returns 0 on success, 1 on a domain error, 2 on a usage error.
int run_command(const std::vector<std::string>& args, std::ostream& out,
                std::ostream& err);

}  // namespace cwb
