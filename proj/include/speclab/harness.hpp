#pragma once

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#ifndef _WIN32
#include <unistd.h>
#endif

#include <json.hpp>

#include "speclab/engine.hpp"
#include "speclab/explorer.hpp"
#include "speclab/io.hpp"
#include "speclab/ngram.hpp"
#include "speclab/perf_model.hpp"
#include "speclab/timing.hpp"
#include "speclab/tokenizer.hpp"
#include "speclab/transformer_lm.hpp"
#include "speclab/types.hpp"

namespace speclab {

enum class ExperimentKind {
  BenchLatency,
  RunSpecdec,
  SweepLookahead,
  Predict,
  Parity,
  ExtraTar,
  RequiredTar,
  Explore,
  Compare,
  Ingest,
};

inline ExperimentKind experiment_kind_from_string(const std::string& s) {
  static const std::map<std::string, ExperimentKind> kinds = {
      {"bench-latency", ExperimentKind::BenchLatency},
      {"run-specdec", ExperimentKind::RunSpecdec},
      {"sweep-lookahead", ExperimentKind::SweepLookahead},
      {"predict", ExperimentKind::Predict},
      {"parity", ExperimentKind::Parity},
      {"extra-tar", ExperimentKind::ExtraTar},
      {"required-tar", ExperimentKind::RequiredTar},
      {"explore", ExperimentKind::Explore},
      {"compare", ExperimentKind::Compare},
      {"ingest", ExperimentKind::Ingest},
  };
  const auto it = kinds.find(s);
  if (it == kinds.end()) throw ValidationError("unknown experiment kind: " + s);
  return it->second;
}

inline std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::BenchLatency: return "bench-latency";
    case ExperimentKind::RunSpecdec: return "run-specdec";
    case ExperimentKind::SweepLookahead: return "sweep-lookahead";
    case ExperimentKind::Predict: return "predict";
    case ExperimentKind::Parity: return "parity";
    case ExperimentKind::ExtraTar: return "extra-tar";
    case ExperimentKind::RequiredTar: return "required-tar";
    case ExperimentKind::Explore: return "explore";
    case ExperimentKind::Compare: return "compare";
    case ExperimentKind::Ingest: return "ingest";
  }
  return "unknown";
}

enum class OutputFormat { Csv, Json, Both };

struct ExperimentSpec {
  ExperimentKind kind = ExperimentKind::Predict;
  std::string id;  // defaults to the kind name
  std::uint64_t seed = 0;
  int repetitions = 1;
  int warmup = 3;
  std::filesystem::path out_dir = "out";
  OutputFormat format = OutputFormat::Both;
  nlohmann::json params = nlohmann::json::object();

  void validate() const {
    if (repetitions < 1) throw ValidationError("repetitions must be >= 1");
    if (warmup < 0) throw ValidationError("warmup must be >= 0");
    if (!params.is_object()) throw ValidationError("params must be a JSON object");
  }

  std::string effective_id() const { return id.empty() ? to_string(kind) : id; }
};

inline ExperimentSpec experiment_spec_from_json(const nlohmann::json& j) {
  ExperimentSpec spec;
  if (j.contains("kind")) spec.kind = experiment_kind_from_string(j.at("kind").get<std::string>());
  spec.id = j.value("id", "");
  spec.seed = j.value("seed", std::uint64_t{0});
  spec.repetitions = j.value("repetitions", 1);
  spec.warmup = j.value("warmup", 3);
  spec.out_dir = j.value("out_dir", std::string("out"));
  const std::string fmt = j.value("format", "both");
  if (fmt == "csv") {
    spec.format = OutputFormat::Csv;
  } else if (fmt == "json") {
    spec.format = OutputFormat::Json;
  } else if (fmt == "both") {
    spec.format = OutputFormat::Both;
  } else {
    throw ValidationError("unknown output format: " + fmt);
  }
  if (j.contains("params")) spec.params = j.at("params");
  spec.validate();
  return spec;
}

/// Hash of everything that affects results (not where they are written), so
/// records can be traced back to the spec that produced them.
inline std::string config_hash(const ExperimentSpec& spec) {
  nlohmann::json canon{{"kind", to_string(spec.kind)},
                       {"seed", spec.seed},
                       {"repetitions", spec.repetitions},
                       {"warmup", spec.warmup},
                       {"params", spec.params}};
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(canon.dump())));
  return buf;
}

struct EnvironmentFingerprint {
  std::string host;
  std::string timestamp;
  std::string build;
};

inline EnvironmentFingerprint environment_fingerprint() {
  EnvironmentFingerprint env;
#ifndef _WIN32
  char host[256] = {0};
  if (gethostname(host, sizeof host - 1) == 0) env.host = host;
#endif
  if (env.host.empty()) env.host = "unknown";
  const std::time_t now = std::time(nullptr);
  char stamp[32] = {0};
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  env.timestamp = stamp;
#if defined(__clang__)
  env.build = std::string("clang-") + __clang_version__;
#elif defined(__GNUC__)
  env.build = "gcc-" + std::to_string(__GNUC__) + "." + std::to_string(__GNUC_MINOR__);
#else
  env.build = "unknown-compiler";
#endif
  return env;
}

struct ResultRecord {
  std::string experiment_id;
  std::string kind;
  std::string config_hash;
  EnvironmentFingerprint environment;
  nlohmann::json metrics;
};

inline void to_json(nlohmann::json& j, const ResultRecord& r) {
  j = nlohmann::json{{"experiment_id", r.experiment_id},
                     {"kind", r.kind},
                     {"config_hash", r.config_hash},
                     {"environment",
                      {{"host", r.environment.host},
                       {"timestamp", r.environment.timestamp},
                       {"build", r.environment.build}}},
                     {"metrics", r.metrics}};
}

// ---- plot-data schemas (versioned; see README for the registry) ----

struct PlotSchema {
  std::string name;
  int version;
  std::vector<std::string> columns;
  std::string sort_by;  // optional numeric sort column
};

inline const PlotSchema& plotdata_schema(const std::string& figure_kind) {
  static const std::map<std::string, PlotSchema> schemas = {
      {"breakdown", {"breakdown", 1, {"phase", "fraction"}, ""}},
      {"latency_depth", {"latency_depth", 1, {"layers", "ms"}, "layers"}},
      {"sweep", {"sweep", 1, {"gamma", "tar", "throughput"}, "gamma"}},
      {"parity", {"parity", 1, {"model", "latency_ms", "parity_latency_ms", "reduction_pct"}, ""}},
      {"extra_tar", {"extra_tar", 1, {"model", "tar", "extra_tar", "feasible"}, ""}},
      {"required_tar", {"required_tar", 1, {"model", "target_tput", "required_tar"}, ""}},
  };
  const auto it = schemas.find(figure_kind);
  if (it == schemas.end()) throw ValidationError("unknown figure kind: " + figure_kind);
  return it->second;
}

/// Render records to plain CSV under a named figure schema. Records must
/// carry exactly the schema's columns.
inline std::string emit_plotdata(const std::string& figure_kind, const nlohmann::json& records) {
  const PlotSchema& schema = plotdata_schema(figure_kind);
  if (!records.is_array()) throw ValidationError("plot records must be a JSON array");
  std::vector<nlohmann::json> rows(records.begin(), records.end());
  for (const auto& row : rows) {
    if (!row.is_object() || row.size() != schema.columns.size()) {
      throw ValidationError("record does not match schema " + schema.name + " v" +
                            std::to_string(schema.version));
    }
    for (const auto& col : schema.columns) {
      if (!row.contains(col)) {
        throw ValidationError("record missing column '" + col + "' of schema " + schema.name);
      }
    }
  }
  if (!schema.sort_by.empty()) {
    std::stable_sort(rows.begin(), rows.end(), [&](const auto& a, const auto& b) {
      return a.at(schema.sort_by).template get<double>() <
             b.at(schema.sort_by).template get<double>();
    });
  }
  CsvWriter csv(schema.columns);
  for (const auto& row : rows) {
    std::vector<std::string> cells;
    for (const auto& col : schema.columns) {
      const auto& v = row.at(col);
      if (v.is_string()) {
        cells.push_back(v.get<std::string>());
      } else if (v.is_boolean()) {
        cells.push_back(v.get<bool>() ? "true" : "false");
      } else {
        cells.push_back(fmt_num(v.get<double>()));
      }
    }
    csv.append_row(cells);
  }
  return csv.str();
}

// ---- model and prompt resolution from JSON specs ----

inline std::shared_ptr<LanguageModel> build_model(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("type")) {
    throw ValidationError("model spec needs a 'type' field");
  }
  const std::string type = j.at("type").get<std::string>();
  if (type == "transformer") {
    ModelConfig config = j.at("config").get<ModelConfig>();
    return std::make_shared<TransformerLm>(config);
  }
  if (type == "ngram") {
    const std::filesystem::path path = j.at("corpus").get<std::string>();
    if (!std::filesystem::exists(path)) {
      throw ValidationError("corpus file does not exist: " + path.string());
    }
    const Corpus corpus = ingest_corpus(path);
    if (corpus.empty_input) throw ValidationError("corpus file is empty: " + path.string());
    return fit_ngram(corpus.sequences, j.value("order", 3), j.value("discount", 0.5),
                     j.value("vocab_size", kByteVocabSize));
  }
  if (type == "ngram-file") {
    const std::filesystem::path path = j.at("path").get<std::string>();
    return std::make_shared<NGramModel>(
        NGramModel::from_json(nlohmann::json::parse(read_file(path))));
  }
  if (type == "replay") {
    std::vector<Dist> script;
    for (const auto& row : j.at("script")) script.push_back(row.get<Dist>());
    return replay_model(std::move(script));
  }
  throw ValidationError("unknown model type: " + type);
}

/// Prompts come from inline text, explicit token ids, or slices of a
/// dataset file.
inline std::vector<TokenSeq> build_prompts(const nlohmann::json& j) {
  if (j.is_object() && j.contains("text")) {
    return {tokenize_bytes(j.at("text").get<std::string>(), /*append_eos=*/false)};
  }
  if (j.is_object() && j.contains("tokens")) {
    return {j.at("tokens").get<TokenSeq>()};
  }
  if (j.is_object() && j.contains("dataset")) {
    const std::filesystem::path path = j.at("dataset").get<std::string>();
    if (!std::filesystem::exists(path)) {
      throw ValidationError("dataset file does not exist: " + path.string());
    }
    const Corpus corpus = ingest_corpus(path);
    if (corpus.empty_input || corpus.sequences.empty()) {
      throw ValidationError("dataset is empty: " + path.string());
    }
    const int count = j.value("count", 1);
    const int length = j.value("length", 64);
    if (count < 1 || length < 1) throw ValidationError("prompt count/length must be >= 1");
    std::vector<TokenSeq> prompts;
    const TokenSeq& seq = corpus.sequences.front();
    const std::size_t usable = seq.size() > static_cast<std::size_t>(length)
                                   ? seq.size() - static_cast<std::size_t>(length)
                                   : 0;
    for (int i = 0; i < count; ++i) {
      const std::size_t start = usable > 0 ? (usable * static_cast<std::size_t>(i)) / count : 0;
      const std::size_t len =
          std::min<std::size_t>(static_cast<std::size_t>(length), seq.size() - start);
      prompts.emplace_back(seq.begin() + start, seq.begin() + start + len);
    }
    return prompts;
  }
  throw ValidationError("prompt spec needs 'text', 'tokens', or 'dataset'");
}

// ---- the experiment runner ----

namespace detail {

struct OutputBundle {
  // Path -> content; everything is materialized before any file is renamed
  // into place, so a failing experiment leaves no outputs behind.
  std::vector<std::pair<std::filesystem::path, std::string>> files;

  void add(const std::filesystem::path& p, std::string content) {
    files.emplace_back(p, std::move(content));
  }

  void commit() const {
    for (const auto& [path, content] : files) atomic_write_file(path, content);
  }
};

inline double ms_field(const nlohmann::json& j, const std::string& key) {
  if (!j.contains(key)) throw ValidationError("missing field: " + key);
  return j.at(key).get<double>();
}

inline SpecRunConfig run_config_from(const nlohmann::json& params, std::uint64_t root_seed,
                                     int warmup) {
  SpecRunConfig config;
  if (params.contains("run")) config = params.at("run").get<SpecRunConfig>();
  if (!params.contains("run") || !params.at("run").contains("rng_seed")) {
    config.rng_seed = root_seed;
  }
  if (!params.contains("run") || !params.at("run").contains("warmup_iterations")) {
    config.warmup_iterations = warmup;
  }
  return config;
}

}  // namespace detail

inline std::vector<ResultRecord> run_experiment(const ExperimentSpec& spec);

namespace detail {

inline ResultRecord base_record(const ExperimentSpec& spec) {
  ResultRecord r;
  r.experiment_id = spec.effective_id();
  r.kind = to_string(spec.kind);
  r.config_hash = config_hash(spec);
  r.environment = environment_fingerprint();
  return r;
}

inline void write_formats(OutputBundle& bundle, const ExperimentSpec& spec,
                          const std::string& csv_content, const nlohmann::json& json_content) {
  const auto stem = spec.out_dir / spec.effective_id();
  if (spec.format != OutputFormat::Json) {
    bundle.add(stem.string() + ".csv", csv_content);
  }
  if (spec.format != OutputFormat::Csv) {
    bundle.add(stem.string() + ".json", json_content.dump(2) + "\n");
  }
}

// bench-latency: decode-step medians per model, optional affine depth fit.
inline std::vector<ResultRecord> run_bench_latency(const ExperimentSpec& spec) {
  const auto& p = spec.params;
  if (!p.contains("models") || !p.at("models").is_array() || p.at("models").empty()) {
    throw ValidationError("bench-latency needs a non-empty 'models' array");
  }
  TimingOptions opts;
  opts.repetitions = p.value("repetitions", spec.repetitions > 1 ? spec.repetitions : 30);
  opts.warmup = spec.warmup;
  opts.prefix_len = p.value("prefix_len", 32);
  opts.seed = spec.seed;
  const int n_tokens = p.value("n_tokens", 1);

  std::lock_guard<std::mutex> lock(timing_lock());
  std::vector<ModelConfig> configs;
  std::vector<Model> models;
  for (const auto& mj : p.at("models")) {
    configs.push_back(mj.get<ModelConfig>());
    models.emplace_back(configs.back());
  }
  // Single-step series are measured in interleaved rounds so system noise
  // spreads evenly across the models being compared.
  std::vector<LatencySample> samples;
  if (n_tokens > 1) {
    for (const Model& model : models) {
      samples.push_back(measure_generate_latency(model, n_tokens, opts));
    }
  } else {
    std::vector<const Model*> pointers;
    for (const Model& model : models) pointers.push_back(&model);
    samples = measure_decode_step_latencies(pointers, opts);
  }

  nlohmann::json rows = nlohmann::json::array();
  std::vector<std::pair<ModelConfig, double>> fit_samples;
  nlohmann::json plot_rows = nlohmann::json::array();
  for (std::size_t i = 0; i < models.size(); ++i) {
    const ModelConfig& config = configs[i];
    const LatencySample& sample = samples[i];
    nlohmann::json row{{"id", p.at("models")[i].value(
                                  "id", "l" + std::to_string(config.num_layers) + "-d" +
                                            std::to_string(config.model_dim))},
                       {"layers", config.num_layers},
                       {"heads", config.num_heads},
                       {"model_dim", config.model_dim},
                       {"ffn_dim", config.ffn_dim},
                       {"median_ms", sample.median_seconds * 1e3},
                       {"mad_ms", sample.mad_seconds * 1e3}};
    rows.push_back(row);
    fit_samples.emplace_back(config, sample.median_seconds);
    plot_rows.push_back({{"layers", config.num_layers}, {"ms", sample.median_seconds * 1e3}});
  }

  nlohmann::json metrics{{"rows", rows}, {"n_tokens", n_tokens}};
  if (p.value("fit", false)) {
    const LatencyModel fit = fit_latency_model(fit_samples);
    metrics["fit"] = {{"slope_ms_per_layer", fit.slope_per_layer * 1e3},
                      {"intercept_ms", fit.intercept * 1e3},
                      {"r_squared", fit.r_squared},
                      {"ref_model_dim", fit.ref_model_dim},
                      {"ref_ffn_dim", fit.ref_ffn_dim}};
  }

  ResultRecord record = base_record(spec);
  record.metrics = metrics;

  CsvWriter csv({"id", "layers", "heads", "model_dim", "ffn_dim", "median_ms", "mad_ms"});
  for (const auto& row : rows) {
    csv.append_row({row.at("id").get<std::string>(), fmt_num(row.at("layers").get<double>()),
                    fmt_num(row.at("heads").get<double>()), fmt_num(row.at("model_dim").get<double>()),
                    fmt_num(row.at("ffn_dim").get<double>()), fmt_num(row.at("median_ms").get<double>()),
                    fmt_num(row.at("mad_ms").get<double>())});
  }
  OutputBundle bundle;
  write_formats(bundle, spec, csv.str(), nlohmann::json(record));
  bundle.add(spec.out_dir / (spec.effective_id() + "-plot-latency_depth.csv"),
             emit_plotdata("latency_depth", plot_rows));
  bundle.commit();
  return {record};
}

inline std::vector<ResultRecord> run_specdec_experiment(const ExperimentSpec& spec) {
  const auto& p = spec.params;
  const auto draft = build_model(p.at("draft"));
  const auto target = build_model(p.at("target"));
  const auto prompts = build_prompts(p.at("prompt"));
  SpecRunConfig config = run_config_from(p, spec.seed, spec.warmup);

  std::lock_guard<std::mutex> lock(timing_lock());
  std::vector<ResultRecord> records;
  OutputBundle bundle;
  CsvWriter csv({"rep", "tar", "throughput", "iterations", "emitted", "draft_fraction",
                 "verify_fraction"});
  const std::uint64_t base_seed = config.rng_seed;
  for (int rep = 0; rep < spec.repetitions; ++rep) {
    config.rng_seed = split_seed(base_seed, "rep", static_cast<std::uint64_t>(rep));
    const SpecRunResult result = generate_speculative(*draft, *target, prompts.front(), config);
    const Breakdown breakdown = measure_breakdown(result.traces);
    ResultRecord record = base_record(spec);
    record.metrics = {{"rep", rep},
                      {"stats", result.stats},
                      {"draft_fraction", breakdown.draft_fraction},
                      {"verify_fraction", breakdown.verify_fraction}};
    records.push_back(record);
    csv.append_row({std::to_string(rep), fmt_num(result.stats.tar),
                    fmt_num(result.stats.throughput), std::to_string(result.stats.iterations),
                    std::to_string(result.stats.output.size()),
                    fmt_num(breakdown.draft_fraction), fmt_num(breakdown.verify_fraction)});
    if (rep == 0) {
      bundle.add(spec.out_dir / (spec.effective_id() + "-traces.jsonl"),
                 traces_to_jsonl(result.traces));
      bundle.add(spec.out_dir / (spec.effective_id() + "-plot-breakdown.csv"),
                 emit_plotdata("breakdown",
                               nlohmann::json::array(
                                   {{{"phase", "draft"}, {"fraction", breakdown.draft_fraction}},
                                    {{"phase", "verify"}, {"fraction", breakdown.verify_fraction}}})));
    }
  }
  nlohmann::json all = nlohmann::json::array();
  for (const auto& r : records) all.push_back(nlohmann::json(r));
  write_formats(bundle, spec, csv.str(), all);
  bundle.commit();
  return records;
}

inline std::vector<ResultRecord> run_sweep(const ExperimentSpec& spec) {
  const auto& p = spec.params;
  const auto draft = build_model(p.at("draft"));
  const auto target = build_model(p.at("target"));
  const auto prompts = build_prompts(p.at("prompt"));
  if (!p.contains("gammas") || p.at("gammas").empty()) {
    throw ValidationError("sweep-lookahead needs a non-empty 'gammas' array");
  }
  const std::vector<int> gammas = p.at("gammas").get<std::vector<int>>();
  SpecRunConfig config = run_config_from(p, spec.seed, spec.warmup);

  std::lock_guard<std::mutex> lock(timing_lock());
  const SweepTable table = sweep_lookahead(*draft, *target, prompts, gammas, config);

  CsvWriter csv({"gamma", "tar", "throughput", "draft_fraction", "verify_fraction", "best"});
  nlohmann::json rows = nlohmann::json::array();
  nlohmann::json plot_rows = nlohmann::json::array();
  for (const auto& row : table.rows) {
    const bool best = row.gamma == table.best_gamma;
    csv.append_row({std::to_string(row.gamma), fmt_num(row.tar), fmt_num(row.throughput),
                    fmt_num(row.draft_fraction), fmt_num(row.verify_fraction),
                    best ? "true" : "false"});
    rows.push_back({{"gamma", row.gamma},
                    {"tar", row.tar},
                    {"throughput", row.throughput},
                    {"draft_fraction", row.draft_fraction},
                    {"verify_fraction", row.verify_fraction},
                    {"best", best}});
    plot_rows.push_back({{"gamma", row.gamma}, {"tar", row.tar}, {"throughput", row.throughput}});
  }
  ResultRecord record = base_record(spec);
  record.metrics = {{"rows", rows}, {"best_gamma", table.best_gamma}};

  OutputBundle bundle;
  write_formats(bundle, spec, csv.str(), nlohmann::json(record));
  bundle.add(spec.out_dir / (spec.effective_id() + "-plot-sweep.csv"),
             emit_plotdata("sweep", plot_rows));
  bundle.commit();
  return {record};
}

// predict: throughput prediction from measured (tar, t_draft, t_target) rows.
inline std::vector<ResultRecord> run_predict(const ExperimentSpec& spec) {
  const auto& p = spec.params;
  nlohmann::json rows;
  if (p.contains("input_csv")) {
    const CsvTable table = read_csv(p.at("input_csv").get<std::string>());
    const int id_col = table.column("model_id");
    const int tar_col = table.column("tar");
    const int draft_col = table.column("t_draft_ms");
    const int target_col = table.column("t_target_ms");
    rows = nlohmann::json::array();
    for (const auto& r : table.rows) {
      rows.push_back({{"model_id", r[id_col]},
                      {"tar", std::stod(r[tar_col])},
                      {"t_draft_ms", std::stod(r[draft_col])},
                      {"t_target_ms", std::stod(r[target_col])}});
    }
  } else if (p.contains("rows")) {
    rows = p.at("rows");
  } else {
    throw ValidationError("predict needs 'rows' or 'input_csv'");
  }

  CsvWriter csv({"model_id", "tar", "t_draft_ms", "t_target_ms", "pred_tput"});
  nlohmann::json out_rows = nlohmann::json::array();
  for (const auto& row : rows) {
    const double tar = row.at("tar").get<double>();
    const double t_draft = ms_field(row, "t_draft_ms") / 1e3;
    const double t_target = ms_field(row, "t_target_ms") / 1e3;
    const double tput = predict_throughput(tar, t_target, t_draft);
    csv.append_row({row.value("model_id", "model"), fmt_num(tar), fmt_num(t_draft * 1e3),
                    fmt_num(t_target * 1e3), fmt_num(tput)});
    nlohmann::json out = row;
    out["pred_tput"] = tput;
    out_rows.push_back(out);
  }
  ResultRecord record = base_record(spec);
  record.metrics = {{"rows", out_rows}};
  OutputBundle bundle;
  write_formats(bundle, spec, csv.str(), nlohmann::json(record));
  bundle.commit();
  return {record};
}

inline std::vector<ResultRecord> run_parity(const ExperimentSpec& spec) {
  const auto& p = spec.params;
  const double baseline_tput = p.at("baseline_throughput").get<double>();
  const double t_target = ms_field(p, "t_target_ms") / 1e3;
  CsvWriter csv({"model", "latency_ms", "parity_latency_ms", "reduction_pct"});
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& cand : p.at("candidates")) {
    const double tar = cand.at("tar").get<double>();
    const double t_draft = ms_field(cand, "t_draft_ms") / 1e3;
    const ParityResult r = parity_latency(tar, t_draft, baseline_tput, t_target);
    const std::string model = cand.value("model", "candidate");
    csv.append_row({model, fmt_num(t_draft * 1e3), fmt_num(r.parity_latency * 1e3),
                    fmt_num(r.reduction_pct, 1)});
    rows.push_back({{"model", model},
                    {"latency_ms", t_draft * 1e3},
                    {"parity_latency_ms", r.parity_latency * 1e3},
                    {"reduction_pct", r.reduction_pct},
                    {"clamped", r.clamped}});
  }
  ResultRecord record = base_record(spec);
  record.metrics = {{"rows", rows}};
  OutputBundle bundle;
  write_formats(bundle, spec, csv.str(), nlohmann::json(record));
  nlohmann::json plot_rows = nlohmann::json::array();
  for (const auto& row : rows) {
    plot_rows.push_back({{"model", row.at("model")},
                         {"latency_ms", row.at("latency_ms")},
                         {"parity_latency_ms", row.at("parity_latency_ms")},
                         {"reduction_pct", row.at("reduction_pct")}});
  }
  bundle.add(spec.out_dir / (spec.effective_id() + "-plot-parity.csv"),
             emit_plotdata("parity", plot_rows));
  bundle.commit();
  return {record};
}

inline std::vector<ResultRecord> run_extra_tar(const ExperimentSpec& spec) {
  const auto& p = spec.params;
  const double baseline_tput = p.at("baseline_throughput").get<double>();
  const double t_target = ms_field(p, "t_target_ms") / 1e3;
  const int gamma = p.at("gamma").get<int>();
  CsvWriter csv({"model", "tar", "t_draft_ms", "needed_tar", "extra_tar", "feasible"});
  nlohmann::json rows = nlohmann::json::array();
  nlohmann::json plot_rows = nlohmann::json::array();
  for (const auto& cand : p.at("candidates")) {
    const double tar = cand.at("tar").get<double>();
    const double t_draft = ms_field(cand, "t_draft_ms") / 1e3;
    const ExtraTarResult r = extra_tar(tar, t_draft, baseline_tput, t_target, gamma);
    const std::string model = cand.value("model", "candidate");
    csv.append_row({model, fmt_num(tar), fmt_num(t_draft * 1e3), fmt_num(r.needed_tar),
                    fmt_num(r.extra_tar), r.feasible ? "true" : "false"});
    rows.push_back({{"model", model},
                    {"tar", tar},
                    {"t_draft_ms", t_draft * 1e3},
                    {"needed_tar", r.needed_tar},
                    {"extra_tar", r.extra_tar},
                    {"feasible", r.feasible}});
    plot_rows.push_back({{"model", model},
                         {"tar", tar},
                         {"extra_tar", r.extra_tar},
                         {"feasible", r.feasible}});
  }
  ResultRecord record = base_record(spec);
  record.metrics = {{"rows", rows}};
  OutputBundle bundle;
  write_formats(bundle, spec, csv.str(), nlohmann::json(record));
  bundle.add(spec.out_dir / (spec.effective_id() + "-plot-extra_tar.csv"),
             emit_plotdata("extra_tar", plot_rows));
  bundle.commit();
  return {record};
}

inline std::vector<ResultRecord> run_required_tar(const ExperimentSpec& spec) {
  const auto& p = spec.params;
  const std::vector<double> throughputs = p.at("throughputs").get<std::vector<double>>();
  if (throughputs.empty()) throw ValidationError("required-tar needs target throughputs");
  const int gamma_cap = p.contains("gamma") ? p.at("gamma").get<int>() : -1;
  CsvWriter csv({"model", "target_tput", "required_tar", "reachable"});
  nlohmann::json rows = nlohmann::json::array();
  nlohmann::json plot_rows = nlohmann::json::array();
  for (const auto& cand : p.at("models")) {
    const std::string model = cand.value("model", "model");
    const double t_target = ms_field(cand, "t_target_ms") / 1e3;
    const double t_draft = ms_field(cand, "t_draft_ms") / 1e3;
    for (double tput : throughputs) {
      const double req = required_tar(tput, t_target, t_draft);
      const bool reachable = gamma_cap < 0 || tar_reachable(req, gamma_cap);
      csv.append_row({model, fmt_num(tput), fmt_num(req), reachable ? "true" : "false"});
      rows.push_back({{"model", model},
                      {"target_tput", tput},
                      {"required_tar", req},
                      {"reachable", reachable}});
      plot_rows.push_back({{"model", model}, {"target_tput", tput}, {"required_tar", req}});
    }
  }
  ResultRecord record = base_record(spec);
  record.metrics = {{"rows", rows}};
  OutputBundle bundle;
  write_formats(bundle, spec, csv.str(), nlohmann::json(record));
  bundle.add(spec.out_dir / (spec.effective_id() + "-plot-required_tar.csv"),
             emit_plotdata("required_tar", plot_rows));
  bundle.commit();
  return {record};
}

inline std::vector<ResultRecord> run_explore(const ExperimentSpec& spec) {
  const auto& p = spec.params;
  ParamBudgetSpec budget = p.at("budget_spec").get<ParamBudgetSpec>();
  LatencyModel latency;
  const auto& lj = p.at("latency_model");
  latency.slope_per_layer = ms_field(lj, "slope_ms_per_layer") / 1e3;
  latency.intercept = ms_field(lj, "intercept_ms") / 1e3;
  latency.ref_model_dim = lj.value("ref_model_dim", budget.head_min * budget.head_dim);
  latency.ref_ffn_dim = lj.value("ref_ffn_dim", latency.ref_model_dim * 4);
  latency.saturation_width = lj.value("saturation_width", latency.ref_model_dim);
  std::vector<std::pair<int, double>> tar_points;
  for (const auto& pt : p.at("tar_by_depth")) {
    tar_points.emplace_back(pt.at(0).get<int>(), pt.at(1).get<double>());
  }
  const TarEstimate tar(tar_points);
  const double t_target = ms_field(p, "t_target_ms") / 1e3;

  const std::vector<ConfigReport> reports = enumerate_configs(budget, latency, tar, t_target);

  CsvWriter csv({"l", "h", "d_model", "d_inter", "params", "kv_bytes_per_token",
                 "pred_latency_ms", "pred_tput"});
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : reports) {
    csv.append_row({std::to_string(r.config.num_layers), std::to_string(r.config.num_heads),
                    std::to_string(r.config.model_dim), std::to_string(r.config.ffn_dim),
                    std::to_string(r.params), std::to_string(r.kv_bytes_per_token),
                    fmt_num(r.pred_latency_seconds * 1e3), fmt_num(r.pred_throughput)});
    rows.push_back(nlohmann::json(r));
  }
  ResultRecord record = base_record(spec);
  record.metrics = {{"rows", rows},
                    {"count", reports.size()},
                    {"formula", count_params_formula(budget.count)},
                    {"empty_result", reports.empty()}};
  OutputBundle bundle;
  write_formats(bundle, spec, csv.str(), nlohmann::json(record));
  bundle.commit();
  return {record};
}

inline std::vector<ResultRecord> run_compare(const ExperimentSpec& spec) {
  const auto& p = spec.params;
  const double t_target = ms_field(p, "t_target_ms") / 1e3;
  auto load_side = [&](const nlohmann::json& side, const std::string& fallback_name,
                       std::optional<ModelConfig>& config_out) {
    CandidatePerf perf;
    perf.name = side.value("name", fallback_name);
    perf.tar = side.at("tar").get<double>();
    if (side.contains("t_draft_ms")) {
      perf.t_draft_seconds = ms_field(side, "t_draft_ms") / 1e3;
    } else if (side.contains("config")) {
      config_out = side.at("config").get<ModelConfig>();
    } else {
      throw ValidationError("compare side needs 't_draft_ms' or 'config'");
    }
    return perf;
  };
  std::optional<ModelConfig> config_a, config_b;
  CandidatePerf a = load_side(p.at("a"), "a", config_a);
  CandidatePerf b = load_side(p.at("b"), "b", config_b);

  CompareReport report;
  if (config_a && config_b) {
    TimingOptions opts;
    opts.repetitions = p.value("repetitions", spec.repetitions > 1 ? spec.repetitions : 30);
    opts.warmup = spec.warmup;
    opts.prefix_len = p.value("prefix_len", 32);
    opts.seed = spec.seed;
    std::lock_guard<std::mutex> lock(timing_lock());
    report = compare_wide_vs_deep(*config_a, *config_b, a.tar, b.tar, t_target,
                                  p.value("n_tokens", 8), opts);
    report.a.name = a.name;
    report.b.name = b.name;
  } else if (!config_a && !config_b) {
    report = compare_candidates(a, b, t_target);
  } else {
    throw ValidationError("compare sides must both supply latencies or both supply configs");
  }

  ResultRecord record = base_record(spec);
  record.metrics = {
      {"a", {{"name", report.a.name}, {"tar", report.a.tar}, {"t_draft_ms", report.a.t_draft_seconds * 1e3}, {"throughput", report.throughput_a}}},
      {"b", {{"name", report.b.name}, {"tar", report.b.tar}, {"t_draft_ms", report.b.t_draft_seconds * 1e3}, {"throughput", report.throughput_b}}},
      {"winner", report.winner == -1 ? "tie" : (report.winner == 0 ? report.a.name : report.b.name)},
      {"margin_pct", report.margin_pct}};
  CsvWriter csv({"name", "tar", "t_draft_ms", "throughput", "winner"});
  csv.append_row({report.a.name, fmt_num(report.a.tar), fmt_num(report.a.t_draft_seconds * 1e3),
                  fmt_num(report.throughput_a), report.winner == 0 ? "true" : "false"});
  csv.append_row({report.b.name, fmt_num(report.b.tar), fmt_num(report.b.t_draft_seconds * 1e3),
                  fmt_num(report.throughput_b), report.winner == 1 ? "true" : "false"});
  OutputBundle bundle;
  write_formats(bundle, spec, csv.str(), nlohmann::json(record));
  bundle.commit();
  return {record};
}

inline std::vector<ResultRecord> run_ingest(const ExperimentSpec& spec) {
  const auto& p = spec.params;
  const std::filesystem::path path = p.at("path").get<std::string>();
  if (!std::filesystem::exists(path)) {
    throw ValidationError("input file does not exist: " + path.string());
  }
  CorpusFormat format = CorpusFormat::Auto;
  const std::string fmt = p.value("format", "auto");
  if (fmt == "text") {
    format = CorpusFormat::Text;
  } else if (fmt == "jsonl") {
    format = CorpusFormat::Jsonl;
  } else if (fmt != "auto") {
    throw ValidationError("unknown corpus format: " + fmt);
  }
  const Corpus corpus = ingest_corpus(path, format);

  ResultRecord record = base_record(spec);
  record.metrics = {{"sequences", corpus.sequences.size()},
                    {"total_tokens", corpus.total_tokens},
                    {"vocab_size", kByteVocabSize},
                    {"eos_token", kEosToken},
                    {"empty_input", corpus.empty_input}};
  OutputBundle bundle;
  CsvWriter csv({"sequences", "total_tokens", "vocab_size", "eos_token"});
  csv.append_row({std::to_string(corpus.sequences.size()), std::to_string(corpus.total_tokens),
                  std::to_string(kByteVocabSize), std::to_string(kEosToken)});
  write_formats(bundle, spec, csv.str(), nlohmann::json(record));
  if (p.value("write_tokens", false)) {
    nlohmann::json tokens = nlohmann::json::array();
    for (const auto& seq : corpus.sequences) tokens.push_back(seq);
    bundle.add(spec.out_dir / (spec.effective_id() + "-tokens.json"), tokens.dump() + "\n");
  }
  // Optionally fit and persist an n-gram model for later ngram-file loads.
  if (p.contains("fit_ngram")) {
    const auto& fj = p.at("fit_ngram");
    if (corpus.empty_input) throw ValidationError("cannot fit an n-gram on an empty corpus");
    const auto model = fit_ngram(corpus.sequences, fj.value("order", 3), fj.value("discount", 0.5),
                                 fj.value("vocab_size", kByteVocabSize));
    bundle.add(spec.out_dir / (spec.effective_id() + "-ngram.json"),
               model->to_json().dump() + "\n");
  }
  bundle.commit();
  return {record};
}

}  // namespace detail

/// Execute one experiment spec: validates inputs, runs the named pipeline
/// (timed pipelines serialized behind the timing lock), and writes CSV/JSON
/// outputs atomically.
inline std::vector<ResultRecord> run_experiment(const ExperimentSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case ExperimentKind::BenchLatency: return detail::run_bench_latency(spec);
    case ExperimentKind::RunSpecdec: return detail::run_specdec_experiment(spec);
    case ExperimentKind::SweepLookahead: return detail::run_sweep(spec);
    case ExperimentKind::Predict: return detail::run_predict(spec);
    case ExperimentKind::Parity: return detail::run_parity(spec);
    case ExperimentKind::ExtraTar: return detail::run_extra_tar(spec);
    case ExperimentKind::RequiredTar: return detail::run_required_tar(spec);
    case ExperimentKind::Explore: return detail::run_explore(spec);
    case ExperimentKind::Compare: return detail::run_compare(spec);
    case ExperimentKind::Ingest: return detail::run_ingest(spec);
  }
  throw ValidationError("unhandled experiment kind");
}

}  // namespace speclab
