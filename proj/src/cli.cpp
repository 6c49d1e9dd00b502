#include "cwb/cli.hpp"

#include <charconv>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include <CLI11.hpp>

#include "cwb/corpus.hpp"
#include "cwb/error.hpp"
#include "cwb/quantize.hpp"
#include "cwb/sts_eval.hpp"
#include "cwb/sweep.hpp"

namespace cwb {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Raised for anything the user typed wrong; maps to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

const std::vector<std::string> kEncoderKeys = {
    "layers", "hidden_dim", "heads", "ffn_dim", "max_seq_len", "vocab_size", "dropout"};

std::vector<std::string> keys_for(const std::string& command) {
  std::vector<std::string> keys;
  auto add = [&](std::initializer_list<const char*> ks) {
    for (const char* k : ks) keys.emplace_back(k);
  };
  if (command == "train") {
    add({"corpus", "out_dir", "steps", "batch_size", "lr", "temperature", "pooling", "seed",
         "amp", "loss_scale", "eval_dir", "eval_every", "mode"});
    keys.insert(keys.end(), kEncoderKeys.begin(), kEncoderKeys.end());
  } else if (command == "eval") {
    add({"model", "sts_dir", "mode", "pooling", "vocab", "out_dir"});
  } else if (command == "sweep") {
    add({"corpus", "sts_dir", "grid", "out_dir", "jobs", "seed", "amp", "loss_scale", "mode"});
    keys.insert(keys.end(), kEncoderKeys.begin(), kEncoderKeys.end());
  } else if (command == "quantize") {
    add({"model", "out"});
  } else if (command == "report") {
    add({"in", "format"});
  } else if (command == "synth") {
    add({"out_dir", "seed", "sentences", "words", "pairs"});
  }
  return keys;
}

const std::map<std::string, std::string> kHelp = {
    {"corpus", "training corpus, one sentence per line"},
    {"out_dir", "output directory"},
    {"steps", "training steps"},
    {"batch_size", "sentences per batch"},
    {"lr", "Adam learning rate"},
    {"temperature", "InfoNCE temperature"},
    {"pooling", "pooling method, e.g. avg-last or concat-last-four"},
    {"seed", "random seed"},
    {"amp", "emulate fp16 training with loss scaling"},
    {"loss_scale", "initial loss scale for --amp"},
    {"eval_dir", "STS collection evaluated during training"},
    {"eval_every", "steps between evaluations"},
    {"mode", "STS aggregation: concat or average"},
    {"model", "checkpoint path"},
    {"sts_dir", "STS collection root (one directory per dataset)"},
    {"grid", "sweep grid JSON"},
    {"jobs", "parallel trials"},
    {"out", "output checkpoint path"},
    {"in", "evaluation CSV"},
    {"format", "csv or md"},
    {"vocab", "vocabulary file (default: <model>.vocab)"},
    {"layers", "encoder blocks"},
    {"hidden_dim", "hidden width"},
    {"heads", "attention heads"},
    {"ffn_dim", "feed-forward width"},
    {"max_seq_len", "tokens per sentence including [CLS]"},
    {"vocab_size", "vocabulary cap"},
    {"dropout", "dropout rate"},
    {"sentences", "synthetic corpus size"},
    {"words", "synthetic word inventory"},
    {"pairs", "synthetic STS pairs"},
};

std::string dashed(std::string key) {
  for (char& c : key) {
    if (c == '_') c = '-';
  }
  return key;
}

bool same_kind(const json& def, const json& v) {
  if (def.is_boolean()) return v.is_boolean();
  if (def.is_string()) return v.is_string();
  if (def.is_number_float()) return v.is_number();
  if (def.is_number_unsigned()) return v.is_number_unsigned();
  return false;
}

// Converts flag text to the JSON kind of the key's default.
json parse_flag_value(const std::string& key, const json& def, const std::string& text) {
  auto bad = [&] { throw UsageError("invalid value '" + text + "' for --" + dashed(key)); };
  if (def.is_string()) return text;
  if (def.is_number_unsigned()) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || p != text.data() + text.size()) bad();
    return v;
  }
  double v = 0.0;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size()) bad();
  return v;
}

const std::string& require_path(const RunConfig& rc, const std::string& key) {
  const std::string& v = rc.str(key);
  if (v.empty()) throw UsageError("--" + dashed(key) + " is required");
  return v;
}

void write_resolved(const RunConfig& rc, const fs::path& dir) {
  std::ofstream out(dir / "config.json", std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + (dir / "config.json").string());
  out << rc.values.dump(2) << '\n';
}

struct PreparedCorpus {
  Vocabulary vocab;
  std::vector<TokenizedSentence> sentences;
  EncoderConfig encoder;
};

PreparedCorpus prepare_corpus(const RunConfig& rc) {
  const auto lines = load_corpus(require_path(rc, "corpus"));
  PreparedCorpus p;
  p.encoder = rc.encoder();
  p.vocab = build_vocab(lines, p.encoder.vocab_size);
  p.encoder.vocab_size = static_cast<std::uint32_t>(p.vocab.size());
  p.encoder.validate();
  p.sentences = tokenize_all(lines, p.vocab, p.encoder.max_seq_len);
  return p;
}

int cmd_train(const RunConfig& rc, std::ostream& out) {
  const fs::path dir = require_path(rc, "out_dir");
  PreparedCorpus prep = prepare_corpus(rc);
  const TrainConfig config = rc.train();
  config.validate();

  std::vector<StsDataset> datasets;
  if (!rc.str("eval_dir").empty()) datasets = load_sts_collection(rc.str("eval_dir"));
  const Aggregation mode = parse_aggregation(rc.str("mode"));

  fs::create_directories(dir);
  write_resolved(rc, dir);

  EncoderModel model = init_model(prep.encoder, config.seed);
  std::vector<EvalReport> reports;
  std::size_t last_eval = 0;
  auto hook = [&](std::size_t step, const EncoderModel& m) {
    if (datasets.empty()) return;
    reports.push_back(evaluate(m, prep.vocab, datasets, config.pooling, mode,
                               "step_" + std::to_string(step)));
    last_eval = step;
  };
  const TrainResult result = train(model, prep.sentences, config, hook);
  if (!datasets.empty() && last_eval != config.max_steps) hook(config.max_steps, model);

  const fs::path ckpt = dir / "model.ckpt";
  save_checkpoint(model, ckpt);
  save_vocab(prep.vocab, ckpt.string() + ".vocab");
  write_loss_csv(result, config.amp, dir / "loss.csv");
  if (!reports.empty()) write_report_csv(reports, dir / "eval.csv");

  out << "trained " << config.max_steps << " steps; final loss "
      << result.trace.back().loss << '\n';
  if (config.amp) out << "loss-scale overflows: " << result.overflow_count << '\n';
  out << "wrote " << ckpt.string() << '\n';
  if (!reports.empty()) write_report_table(reports, out);
  return 0;
}

int cmd_eval(const RunConfig& rc, std::ostream& out) {
  const fs::path model_path = require_path(rc, "model");
  const fs::path sts_dir = require_path(rc, "sts_dir");
  const fs::path vocab_path =
      rc.str("vocab").empty() ? fs::path(model_path.string() + ".vocab") : fs::path(rc.str("vocab"));
  const EncoderModel model = load_checkpoint(model_path);
  const Vocabulary vocab = load_vocab(vocab_path);
  const auto datasets = load_sts_collection(sts_dir);
  const std::vector<EvalReport> reports = {
      evaluate(model, vocab, datasets, parse_pooling(rc.str("pooling")),
               parse_aggregation(rc.str("mode")), model_path.filename().string())};
  write_report_csv(reports, out);
  out << '\n';
  write_report_table(reports, out);
  if (!rc.str("out_dir").empty()) {
    fs::create_directories(rc.str("out_dir"));
    write_report_csv(reports, fs::path(rc.str("out_dir")) / "eval.csv");
    write_resolved(rc, rc.str("out_dir"));
  }
  return 0;
}

int cmd_sweep(const RunConfig& rc, std::ostream& out) {
  const fs::path dir = require_path(rc, "out_dir");
  const Grid grid = load_grid(require_path(rc, "grid"));
  PreparedCorpus prep = prepare_corpus(rc);
  const auto datasets = load_sts_collection(require_path(rc, "sts_dir"));

  TrainConfig base = rc.train();
  const auto configs = expand_grid(grid, base);
  fs::create_directories(dir);
  write_resolved(rc, dir);

  TrialInputs inputs;
  inputs.encoder = prep.encoder;
  inputs.corpus = prep.sentences;
  inputs.vocab = &prep.vocab;
  inputs.datasets = datasets;
  inputs.mode = parse_aggregation(rc.str("mode"));
  const auto results = run_sweep(configs, inputs, rc.count("jobs"));
  emit_sweep_report(results, dir);

  std::size_t failed = 0;
  for (const auto& r : results) failed += r.failed ? 1 : 0;
  out << "ran " << results.size() << " trials (" << failed << " failed); wrote "
      << (dir / "sweep.csv").string() << " and " << (dir / "summary.md").string() << '\n';
  return 0;
}

int cmd_quantize(const RunConfig& rc, std::ostream& out) {
  const fs::path in = require_path(rc, "model");
  const fs::path dst = require_path(rc, "out");
  if (dst.has_parent_path()) fs::create_directories(dst.parent_path());
  const SizeReport report = quantize_checkpoint(in, dst);
  const fs::path vocab = in.string() + ".vocab";
  if (fs::exists(vocab)) {
    fs::copy_file(vocab, dst.string() + ".vocab", fs::copy_options::overwrite_existing);
  }
  write_size_report_csv(report, dst.string() + ".sizes.csv");
  write_size_report_text(report, out);
  return 0;
}

int cmd_report(const RunConfig& rc, std::ostream& out) {
  const auto reports = read_report_csv(require_path(rc, "in"));
  const std::string& format = rc.str("format");
  if (format == "csv") {
    write_report_csv(reports, out);
  } else if (format == "md") {
    write_report_markdown(reports, out);
  } else {
    throw UsageError("--format must be csv or md, got '" + format + "'");
  }
  return 0;
}

int cmd_synth(const RunConfig& rc, std::ostream& out) {
  const fs::path dir = require_path(rc, "out_dir");
  const std::uint64_t seed = rc.values.at("seed").get<std::uint64_t>();
  SyntheticCorpusOptions options;
  options.n_sentences = rc.count("sentences");
  options.n_words = rc.count("words");
  const auto lines = generate_synthetic_corpus(options, seed);
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "corpus.txt", std::ios::binary);
    if (!f) throw Error(ErrorKind::kIo, "cannot write " + (dir / "corpus.txt").string());
    for (const auto& line : lines) f << line << '\n';
  }
  const Vocabulary vocab = build_vocab(lines, std::numeric_limits<std::size_t>::max());
  const StsDataset sts = generate_synthetic_sts(vocab, rc.count("pairs"), derive_seed(seed, 1, 0));
  write_sts(sts, dir / "sts" / sts.name);
  out << "wrote " << lines.size() << " sentences and " << sts.pair_count()
      << " STS pairs under " << dir.string() << '\n';
  return 0;
}

}  // namespace

const std::string& RunConfig::str(const std::string& key) const {
  return values.at(key).get_ref<const std::string&>();
}
double RunConfig::real(const std::string& key) const { return values.at(key).get<double>(); }
std::size_t RunConfig::count(const std::string& key) const {
  return values.at(key).get<std::size_t>();
}
bool RunConfig::flag(const std::string& key) const { return values.at(key).get<bool>(); }

EncoderConfig RunConfig::encoder() const {
  EncoderConfig c;
  c.n_layers = static_cast<std::uint32_t>(count("layers"));
  c.hidden_dim = static_cast<std::uint32_t>(count("hidden_dim"));
  c.n_heads = static_cast<std::uint32_t>(count("heads"));
  c.ffn_dim = static_cast<std::uint32_t>(count("ffn_dim"));
  c.max_seq_len = static_cast<std::uint32_t>(count("max_seq_len"));
  c.vocab_size = static_cast<std::uint32_t>(count("vocab_size"));
  c.dropout_rate = static_cast<float>(real("dropout"));
  return c;
}

TrainConfig RunConfig::train() const {
  TrainConfig c;
  c.max_steps = count("steps");
  c.batch_size = count("batch_size");
  c.learning_rate = real("lr");
  c.temperature = real("temperature");
  c.pooling = parse_pooling(str("pooling"));
  c.seed = values.at("seed").get<std::uint64_t>();
  c.amp = flag("amp");
  c.loss_scale = real("loss_scale");
  c.eval_every = count("eval_every");
  return c;
}

RunConfig default_run_config() {
  const EncoderConfig enc;
  const TrainConfig tr;
  RunConfig rc;
  rc.values = {
      {"corpus", ""},       {"out_dir", ""},
      {"steps", tr.max_steps},
      {"batch_size", tr.batch_size},
      {"lr", tr.learning_rate},
      {"temperature", tr.temperature},
      {"pooling", to_string(tr.pooling)},
      {"seed", tr.seed},
      {"amp", tr.amp},
      {"loss_scale", tr.loss_scale},
      {"eval_dir", ""},     {"eval_every", tr.eval_every},
      {"model", ""},        {"sts_dir", ""},
      {"mode", "concat"},   {"grid", ""},
      {"jobs", std::size_t{1}},
      {"out", ""},          {"in", ""},
      {"format", "csv"},    {"vocab", ""},
      {"layers", enc.n_layers},
      {"hidden_dim", enc.hidden_dim},
      {"heads", enc.n_heads},
      {"ffn_dim", enc.ffn_dim},
      {"max_seq_len", enc.max_seq_len},
      {"vocab_size", enc.vocab_size},
      {"dropout", static_cast<double>(enc.dropout_rate)},
      {"sentences", std::size_t{64}},
      {"words", std::size_t{400}},
      {"pairs", std::size_t{600}},
  };
  // float -> double widening would leave 0.10000000149; keep the decimal.
  rc.values["dropout"] = 0.1;
  return rc;
}

void merge_config(RunConfig& base, const json& overrides) {
  if (!overrides.is_object()) throw Error(ErrorKind::kConfig, "config must be a JSON object");
  for (const auto& [key, value] : overrides.items()) {
    if (!base.values.contains(key)) {
      throw Error(ErrorKind::kConfig, "unknown config key '" + key + "'");
    }
    const json& def = base.values[key];
    if (!same_kind(def, value)) {
      throw Error(ErrorKind::kConfig, "config key '" + key + "' has type " +
                                          value.type_name() + ", expected " + def.type_name());
    }
    base.values[key] = def.is_number_float() ? json(value.get<double>()) : value;
  }
}

RunConfig resolve_config(const RunConfig& defaults, const std::optional<fs::path>& file,
                         const json& flags) {
  RunConfig rc = defaults;
  if (file) {
    std::ifstream in(*file);
    if (!in) throw Error(ErrorKind::kConfig, "cannot read config file " + file->string());
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::kConfig, "config file is not valid JSON: " + std::string(e.what()));
    }
    merge_config(rc, doc);
  }
  merge_config(rc, flags);
  return rc;
}

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const RunConfig defaults = default_run_config();
  CLI::App app{"contrastive sentence-embedding workbench", "cwb"};
  app.require_subcommand(1);

  static const std::map<std::string, std::string> kCommands = {
      {"train", "train an encoder with the contrastive objective"},
      {"eval", "score a checkpoint on STS data"},
      {"sweep", "grid search over training hyperparameters"},
      {"quantize", "int8 post-training quantization of a checkpoint"},
      {"report", "re-render an evaluation CSV"},
      {"synth", "write a synthetic corpus and STS set"},
  };

  struct Slot {
    std::string text;
    bool on = false;
    CLI::Option* opt = nullptr;
  };
  std::map<std::string, std::map<std::string, Slot>> slots;
  std::map<std::string, std::string> config_files;
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help] : kCommands) {
    CLI::App* sub = app.add_subcommand(name, help);
    subs[name] = sub;
    sub->add_option("--config", config_files[name], "JSON config file");
    for (const auto& key : keys_for(name)) {
      Slot& slot = slots[name][key];
      const json& def = defaults.values.at(key);
      if (def.is_boolean()) {
        slot.opt = sub->add_flag("--" + dashed(key), slot.on, kHelp.at(key));
      } else {
        slot.opt = sub->add_option("--" + dashed(key), slot.text, kHelp.at(key))
                       ->type_name(def.is_string() ? "TEXT" : "NUM");
      }
    }
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  std::string command;
  for (const auto& [name, sub] : subs) {
    if (sub->parsed()) command = name;
  }

  try {
    json flags = json::object();
    for (const auto& [key, slot] : slots[command]) {
      if (slot.opt->count() == 0) continue;
      const json& def = defaults.values.at(key);
      flags[key] = def.is_boolean() ? json(slot.on) : parse_flag_value(key, def, slot.text);
    }
    std::optional<fs::path> file;
    if (!config_files[command].empty()) file = config_files[command];
    RunConfig rc;
    try {
      rc = resolve_config(defaults, file, flags);
      if (command == "train" || command == "sweep") {
        rc.encoder().validate();
        rc.train();
      }
      if (command != "report") parse_aggregation(rc.str("mode"));
    } catch (const Error& e) {
      throw UsageError(e.what());
    }

    if (command == "train") return cmd_train(rc, out);
    if (command == "eval") return cmd_eval(rc, out);
    if (command == "sweep") return cmd_sweep(rc, out);
    if (command == "quantize") return cmd_quantize(rc, out);
    if (command == "report") return cmd_report(rc, out);
    return cmd_synth(rc, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace cwb
