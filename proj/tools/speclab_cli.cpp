// speclab: desk-scale speculative decoding laboratory.
//
// Subcommands run one experiment kind each, driven by a JSON config file;
// results land in --out-dir as CSV/JSON (plus traces and plot data where
// applicable). Exit codes: 0 success, 1 validation error, 2 runtime failure.

#include <exception>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "speclab/harness.hpp"

namespace {

struct GlobalFlags {
  std::string config_path;
  std::string out_dir;
  std::string format;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

speclab::ExperimentSpec load_spec(const GlobalFlags& flags, speclab::ExperimentKind kind) {
  nlohmann::json doc = nlohmann::json::object();
  if (!flags.config_path.empty()) {
    if (!std::filesystem::exists(flags.config_path)) {
      throw speclab::ValidationError("config file does not exist: " + flags.config_path);
    }
    doc = nlohmann::json::parse(speclab::read_file(flags.config_path));
  }
  speclab::ExperimentSpec spec = speclab::experiment_spec_from_json(doc);
  spec.kind = kind;  // the subcommand wins over any "kind" field
  if (flags.seed_set) spec.seed = flags.seed;
  if (!flags.out_dir.empty()) spec.out_dir = flags.out_dir;
  if (!flags.format.empty()) {
    if (flags.format == "csv") {
      spec.format = speclab::OutputFormat::Csv;
    } else if (flags.format == "json") {
      spec.format = speclab::OutputFormat::Json;
    } else if (flags.format == "both") {
      spec.format = speclab::OutputFormat::Both;
    } else {
      throw speclab::ValidationError("unknown --format: " + flags.format);
    }
  }
  return spec;
}

void print_records(const std::vector<speclab::ResultRecord>& records,
                   const speclab::ExperimentSpec& spec) {
  for (const auto& r : records) {
    std::cout << r.kind << " [" << r.experiment_id << "] hash=" << r.config_hash << "\n";
  }
  std::cout << "outputs in " << spec.out_dir.string() << "/\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"speclab: speculative decoding measurement and what-if laboratory"};
  app.require_subcommand(1);

  GlobalFlags flags;
  app.add_option("--config", flags.config_path, "experiment config JSON")->expected(1);
  app.add_option("--out-dir", flags.out_dir, "output directory (default: out)");
  app.add_option("--format", flags.format, "output format: csv, json, or both");
  auto* seed_opt = app.add_option("--seed", flags.seed, "root seed for all randomness");

  struct Sub {
    const char* name;
    const char* desc;
    speclab::ExperimentKind kind;
  };
  const Sub subs[] = {
      {"bench-latency", "decode-step latency microbenchmark", speclab::ExperimentKind::BenchLatency},
      {"run-specdec", "one speculative decoding run with traces", speclab::ExperimentKind::RunSpecdec},
      {"sweep-lookahead", "TAR/throughput vs lookahead", speclab::ExperimentKind::SweepLookahead},
      {"predict", "throughput prediction from measured rows", speclab::ExperimentKind::Predict},
      {"parity", "draft latency needed for parity throughput", speclab::ExperimentKind::Parity},
      {"extra-tar", "extra TAR needed for parity throughput", speclab::ExperimentKind::ExtraTar},
      {"required-tar", "TAR required for a target throughput", speclab::ExperimentKind::RequiredTar},
      {"explore", "fixed-budget architecture enumeration", speclab::ExperimentKind::Explore},
      {"compare", "wide-vs-deep candidate comparison", speclab::ExperimentKind::Compare},
      {"ingest", "tokenize a text/JSONL corpus", speclab::ExperimentKind::Ingest},
  };

  speclab::ExperimentKind selected = speclab::ExperimentKind::Predict;
  std::string ingest_path;
  for (const Sub& sub : subs) {
    auto* cmd = app.add_subcommand(sub.name, sub.desc);
    cmd->fallthrough();  // global flags may follow the subcommand
    if (sub.kind == speclab::ExperimentKind::Ingest) {
      cmd->add_option("path", ingest_path, "corpus file (alternative to --config)");
    }
    cmd->callback([&selected, kind = sub.kind] { selected = kind; });
  }

  CLI11_PARSE(app, argc, argv);
  flags.seed_set = seed_opt->count() > 0;

  try {
    speclab::ExperimentSpec spec = load_spec(flags, selected);
    if (selected == speclab::ExperimentKind::Ingest && !ingest_path.empty()) {
      spec.params["path"] = ingest_path;
    }
    const auto records = speclab::run_experiment(spec);
    print_records(records, spec);
    return 0;
  } catch (const speclab::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
