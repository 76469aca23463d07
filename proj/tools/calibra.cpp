// calibra: command-line front end for probing, calibration, debiasing and
// reporting. Each subcommand produces one inspectable artifact plus a
// manifest next to it.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "calibra/calibra.hpp"
#include "calibra/http_transport.hpp"

namespace fs = std::filesystem;
using namespace calibra;

namespace {

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = harness::strip(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<CombinationId> parse_combinations(const std::string& text) {
  std::vector<CombinationId> out;
  for (const auto& item : split_list(text)) out.push_back(parse_combination(item));
  if (out.empty()) throw Error(ErrorCode::InvalidArgument, "no combinations given");
  return out;
}

json combinations_json(const std::vector<CombinationId>& cs) {
  json out = json::array();
  for (auto c : cs) out.push_back(std::string(to_string(c)));
  return out;
}

std::string getenv_or_empty(const char* name) {
  const char* v = std::getenv(name);
  return v != nullptr ? std::string(v) : std::string();
}

// ---------------------------------------------------------------------------

struct ProbeArgs {
  std::string input, output, endpoint, model, tokens = "A,B", combinations = "x0,x1,x2";
  std::string template_name = "default", few_shot_file;
  bool debias_instruction = false;
  std::size_t few_shot = 0, concurrency = 4;
  int retries = 5, backoff_ms = 500;
};

int run_probe(const ProbeArgs& a) {
  RunManifest manifest{"probe"};
  manifest.started_at = harness::utc_timestamp();

  const std::string api_key = getenv_or_empty("CALIBRA_API_KEY");
  if (api_key.empty()) throw Error(ErrorCode::InvalidArgument, "environment variable CALIBRA_API_KEY is not set");
  const std::string endpoint = a.endpoint.empty() ? getenv_or_empty("CALIBRA_ENDPOINT") : a.endpoint;
  if (endpoint.empty()) throw Error(ErrorCode::InvalidArgument, "no endpoint: pass --endpoint or set CALIBRA_ENDPOINT");

  const auto tokens = split_list(a.tokens);
  if (tokens.size() != 2) throw Error(ErrorCode::InvalidArgument, "--tokens expects two comma-separated tokens");

  harness::ProbeConfig config;
  config.endpoint_url = endpoint;
  config.model_name = a.model;
  config.api_key = api_key;
  config.token_pair = TokenPair(tokens[0], tokens[1]);
  config.combinations = parse_combinations(a.combinations);
  config.concurrency_limit = a.concurrency;
  config.retry.max_attempts = a.retries;
  config.retry.initial_backoff = std::chrono::milliseconds(a.backoff_ms);
  if (a.few_shot > 0) {
    if (a.few_shot_file.empty()) throw Error(ErrorCode::InvalidArgument, "--few-shot needs --few-shot-file");
    for (const auto& s : load_samples(a.few_shot_file)) {
      if (config.few_shot_examples.size() == a.few_shot) break;
      if (!s.gold_label || *s.gold_label == GoldLabel::Tie) continue;
      config.few_shot_examples.push_back({s, *s.gold_label == GoldLabel::First ? Content::O1 : Content::O2});
    }
    if (config.few_shot_examples.size() < a.few_shot) {
      throw Error(ErrorCode::InvalidArgument, "few-shot file has too few labelled, non-tie samples");
    }
  }
  const auto tmpl = harness::PromptTemplate::builtin(harness::parse_template_name(a.template_name), a.debias_instruction);
  const auto samples = load_samples(a.input);

  ProbeStore store(fs::exists(a.output) ? load_probes(a.output) : std::vector<ProbeRecord>{});
  harness::HttpTransport transport(endpoint, api_key);
  harness::ProbeStats stats;
  std::exception_ptr failure;
  try {
    harness::probe(samples, config, tmpl, transport, store, &stats);
  } catch (...) {
    failure = std::current_exception();
  }
  // Whatever was fetched is kept so a rerun resumes from the cache.
  save_probes(a.output, store.records());
  if (failure) std::rethrow_exception(failure);

  manifest.config = {{"endpoint", endpoint},
                     {"model", a.model},
                     {"tokens", tokens},
                     {"combinations", combinations_json(config.combinations)},
                     {"template", a.template_name},
                     {"debias_instruction", a.debias_instruction},
                     {"few_shot", a.few_shot},
                     {"concurrency", a.concurrency}};
  manifest.inputs = {a.input};
  manifest.outputs = {a.output};
  manifest.write_next_to(a.output);
  std::cerr << "probed " << stats.requested << " pairs (" << stats.cache_hits << " cached, " << stats.network_calls
            << " requests)\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct CalibrateArgs {
  std::string store, output, diagnostics, objective = "full", normalize = "batch", t2_curve = "complement", output_t2;
  double fraction = 1.0, lambda = 0.5, lr = 10.0, epsilon = 0.001;
  std::size_t batch = 32, max_iterations = 10000;
  std::uint64_t seed = 0;
};

int run_calibrate(const CalibrateArgs& a) {
  RunManifest manifest{"calibrate"};
  manifest.started_at = harness::utc_timestamp();
  noa::NoaConfig config;
  config.lambda = a.lambda;
  config.learning_rate = a.lr;
  config.batch_size = a.batch;
  config.epsilon = a.epsilon;
  config.max_iterations = a.max_iterations;
  config.objective = noa::parse_objective(a.objective);
  config.seed = a.seed;
  if (a.normalize == "batch") {
    config.normalization = noa::Normalization::PerBatch;
  } else if (a.normalize == "epoch") {
    config.normalization = noa::Normalization::PerEpoch;
  } else {
    throw Error(ErrorCode::InvalidArgument, "--normalize must be batch or epoch");
  }
  if (a.t2_curve != "complement" && a.t2_curve != "independent") {
    throw Error(ErrorCode::InvalidArgument, "--t2-curve must be complement or independent");
  }

  const auto estimation = pipeline::assemble_estimation_set(load_probes(a.store), a.fraction, a.seed);
  const auto result = pipeline::calibrate(estimation, config);
  const std::string diagnostics_path = a.diagnostics.empty() ? a.output + ".diagnostics.json" : a.diagnostics;
  io::write_json(a.output, isotonic::to_json(result.curve));
  io::write_json(diagnostics_path, noa::to_json(result.diagnostics));
  manifest.outputs = {a.output, diagnostics_path};

  if (a.t2_curve == "independent") {
    const std::string path = a.output_t2.empty() ? a.output + ".t2.json" : a.output_t2;
    const auto t2 = pipeline::calibrate_t2(estimation, config);
    io::write_json(path, isotonic::to_json(t2.curve));
    manifest.outputs.push_back(path);
  }

  manifest.config = {{"fraction", a.fraction},         {"lambda", a.lambda},       {"learning_rate", a.lr},
                     {"batch_size", a.batch},          {"epsilon", a.epsilon},     {"max_iterations", a.max_iterations},
                     {"objective", a.objective},       {"normalize", a.normalize}, {"t2_curve", a.t2_curve},
                     {"estimation_size", estimation.triples.size()}};
  manifest.seed = a.seed;
  manifest.inputs = {a.store};
  manifest.write_next_to(a.output);
  std::cerr << "fitted " << result.curve.knot_x().size() << " knots in " << result.diagnostics.iterations
            << " iterations (stop: " << noa::to_string(result.diagnostics.stop_reason) << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct ApplyArgs {
  std::string probes, output, methods = "raw,calibraeval", curve, curve_t2, estimation, samples;
  double fraction = 1.0;
  std::uint64_t seed = 0;
  bool pride_per_category = false;
};

int run_apply(const ApplyArgs& a) {
  RunManifest manifest{"apply"};
  manifest.started_at = harness::utc_timestamp();
  std::vector<pipeline::Method> methods;
  for (const auto& m : split_list(a.methods)) methods.push_back(pipeline::parse_method(m));
  if (methods.empty()) throw Error(ErrorCode::InvalidArgument, "--methods is empty");

  auto probes = load_probes(a.probes);
  std::stable_sort(probes.begin(), probes.end(), probe_order);
  manifest.inputs = {a.probes};

  std::optional<isotonic::CalibrationCurve> curve;
  std::optional<isotonic::CalibrationCurve> curve_t2;
  std::map<std::string, pipeline::PridePrior> priors;
  std::map<std::string, std::string> category_of;

  for (auto m : methods) {
    if (m == pipeline::Method::CalibraEval && !curve) {
      if (a.curve.empty()) throw Error(ErrorCode::InvalidArgument, "method calibraeval requires --curve");
      curve = isotonic::curve_from_json(io::read_json(a.curve));
      manifest.inputs.push_back(a.curve);
      if (!a.curve_t2.empty()) {
        curve_t2 = isotonic::curve_from_json(io::read_json(a.curve_t2));
        manifest.inputs.push_back(a.curve_t2);
      }
    }
    if (m == pipeline::Method::Pride && priors.empty()) {
      if (a.estimation.empty()) {
        throw Error(ErrorCode::InvalidArgument,
                    "method pride needs estimation data: pass --estimation <probe store> to estimate its prior");
      }
      const auto est = pipeline::assemble_estimation_set(load_probes(a.estimation), a.fraction, a.seed);
      manifest.inputs.push_back(a.estimation);
      if (a.pride_per_category) {
        if (a.samples.empty()) throw Error(ErrorCode::InvalidArgument, "--pride-per-category needs --samples");
        for (const auto& s : load_samples(a.samples)) {
          if (s.category) category_of[s.id] = *s.category;
        }
        priors = pipeline::pride_priors_by_category(est, category_of);
      } else {
        priors[""] = pipeline::pride_prior(est);
      }
    }
  }

  std::vector<pipeline::VerdictRow> rows;
  rows.reserve(probes.size() * methods.size());
  for (const auto& probe : probes) {
    for (auto m : methods) {
      pipeline::DebiasedPrediction p;
      switch (m) {
        case pipeline::Method::Raw: p = pipeline::apply_raw(probe); break;
        case pipeline::Method::CalibraEval:
          p = pipeline::apply(*curve, probe, curve_t2 ? &*curve_t2 : nullptr);
          break;
        case pipeline::Method::Pride: {
          auto cat = category_of.find(probe.sample_id);
          auto it = cat != category_of.end() ? priors.find(cat->second) : priors.end();
          p = pipeline::pride_apply(it != priors.end() ? it->second : priors.at(""), probe);
          break;
        }
      }
      if (std::abs(p.calibrated.p_t1 + p.calibrated.p_t2 - 1.0) > 1e-9) {
        throw Error(ErrorCode::DegenerateInput, "calibrated pair does not sum to 1 for '" + p.sample_id + "'");
      }
      rows.push_back(pipeline::to_row(p, m));
    }
  }
  pipeline::save_verdicts(a.output, rows);

  manifest.config = {{"methods", split_list(a.methods)},
                     {"fraction", a.fraction},
                     {"pride_per_category", a.pride_per_category}};
  manifest.seed = a.seed;
  manifest.outputs = {a.output};
  manifest.write_next_to(a.output);
  return 0;
}

// ---------------------------------------------------------------------------

struct ReportArgs {
  std::string verdicts, labels, output, table, icc_mode = "paper", raters = "x0,x1,x2";
};

int run_report(const ReportArgs& a) {
  RunManifest manifest{"report"};
  manifest.started_at = harness::utc_timestamp();
  metrics::ReportOptions options;
  options.icc_mode = metrics::parse_icc_family(a.icc_mode);
  options.raters = parse_combinations(a.raters);

  std::map<std::string, GoldLabel> gold;
  bool have_gold = false;
  manifest.inputs = {a.verdicts};
  if (!a.labels.empty()) {
    for (const auto& s : load_samples(a.labels)) {
      if (s.gold_label) gold[s.id] = *s.gold_label;
    }
    have_gold = true;
    manifest.inputs.push_back(a.labels);
  }

  std::vector<std::string> order;
  std::map<std::string, std::vector<Verdict>> by_method;
  for (const auto& row : pipeline::load_verdicts(a.verdicts)) {
    const std::string method(pipeline::to_string(row.method));
    if (!by_method.count(method)) order.push_back(method);
    by_method[method].push_back(pipeline::to_verdict(row));
  }
  if (order.empty()) throw Error(ErrorCode::InvalidArgument, "verdict file is empty");

  std::vector<metrics::ConsistencyReport> reports;
  json out = json::array();
  for (const auto& method : order) {
    reports.push_back(metrics::report(method, by_method[method], have_gold ? &gold : nullptr, options));
    out.push_back(metrics::to_json(reports.back()));
  }
  const std::string table = metrics::format_table(reports);
  std::cout << table;
  manifest.outputs.clear();
  if (!a.output.empty()) {
    io::write_json(a.output, out);
    manifest.outputs.push_back(a.output);
  }
  const std::string table_path = !a.table.empty() ? a.table : (a.output.empty() ? "" : a.output + ".txt");
  if (!table_path.empty()) {
    io::write_text(table_path, table);
    manifest.outputs.push_back(table_path);
  }
  manifest.config = {{"icc_mode", a.icc_mode}, {"raters", split_list(a.raters)}, {"labels", have_gold}};
  if (!manifest.outputs.empty()) manifest.write_next_to(manifest.outputs.front());
  return 0;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::size_t n = 500;
  std::string bias_model = "multiplicative", out_dir = ".";
  double prior = 0.7, noise = 0.0;
  std::uint64_t seed = 0;
  bool with_x3 = false;
};

int run_synth(const SynthArgs& a) {
  RunManifest manifest{"synth"};
  manifest.started_at = harness::utc_timestamp();
  synth::BiasModel bias{synth::parse_bias_kind(a.bias_model), a.prior, a.noise, a.seed};
  const auto data = synth::generate(a.n, bias, a.with_x3);
  fs::create_directories(a.out_dir);
  const auto samples_path = (fs::path(a.out_dir) / "samples.jsonl").string();
  const auto probes_path = (fs::path(a.out_dir) / "probes.jsonl").string();
  const auto truths_path = (fs::path(a.out_dir) / "truths.jsonl").string();
  save_samples(samples_path, data.samples);
  save_probes(probes_path, data.probes);
  synth::save_truths(truths_path, data.truths);
  manifest.config = {{"n", a.n},
                     {"bias_model", std::string(synth::to_string(bias.kind))},
                     {"prior", a.prior},
                     {"noise", a.noise},
                     {"with_x3", a.with_x3}};
  manifest.seed = a.seed;
  manifest.outputs = {samples_path, probes_path, truths_path};
  manifest.write_next_to(probes_path);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Label-free selection-bias calibration for pairwise LLM judges"};
  app.require_subcommand(1);

  ProbeArgs probe;
  auto* probe_cmd = app.add_subcommand("probe", "Query the judge under swapped tokens/positions");
  probe_cmd->add_option("--input", probe.input, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  probe_cmd->add_option("--output", probe.output, "Probe store JSONL (also the cache)")->required();
  probe_cmd->add_option("--endpoint", probe.endpoint, "Base URL, e.g. https://api.openai.com/v1 (or CALIBRA_ENDPOINT)");
  probe_cmd->add_option("--model", probe.model, "Model name")->required();
  probe_cmd->add_option("--tokens", probe.tokens, "Option ID tokens t1,t2")->capture_default_str();
  probe_cmd->add_option("--combinations", probe.combinations, "Combinations to probe")->capture_default_str();
  probe_cmd->add_option("--template", probe.template_name, "default|variant-one|variant-two|variant-three")
      ->capture_default_str();
  probe_cmd->add_flag("--debias-instruction", probe.debias_instruction, "Prepend the debiasing instruction");
  probe_cmd->add_option("--few-shot", probe.few_shot, "Number of in-context examples (0-3)")
      ->check(CLI::Range(0, 3));
  probe_cmd->add_option("--few-shot-file", probe.few_shot_file, "Labelled dataset JSONL for examples");
  probe_cmd->add_option("--concurrency", probe.concurrency, "Requests in flight")->check(CLI::PositiveNumber)
      ->capture_default_str();
  probe_cmd->add_option("--retries", probe.retries, "Attempts per request")->check(CLI::PositiveNumber)
      ->capture_default_str();
  probe_cmd->add_option("--backoff-ms", probe.backoff_ms, "Initial retry backoff")->capture_default_str();

  CalibrateArgs cal;
  auto* cal_cmd = app.add_subcommand("calibrate", "Fit the calibration curve on a probe store");
  cal_cmd->add_option("--store", cal.store, "Probe store JSONL")->required()->check(CLI::ExistingFile);
  cal_cmd->add_option("--output", cal.output, "Curve JSON")->required();
  cal_cmd->add_option("--diagnostics", cal.diagnostics, "Fit diagnostics JSON (default <output>.diagnostics.json)");
  cal_cmd->add_option("--fraction", cal.fraction, "Share of samples in the estimation set")
      ->check(CLI::Range(0.0, 1.0))->capture_default_str();
  cal_cmd->add_option("--seed", cal.seed, "Subsampling and batch-shuffle seed")->capture_default_str();
  cal_cmd->add_option("--lambda", cal.lambda, "Regularization weight")->capture_default_str();
  cal_cmd->add_option("--lr", cal.lr, "Learning rate")->capture_default_str();
  cal_cmd->add_option("--batch", cal.batch, "Batch size")->check(CLI::PositiveNumber)->capture_default_str();
  cal_cmd->add_option("--epsilon", cal.epsilon, "Convergence threshold on sum |delta d|")->capture_default_str();
  cal_cmd->add_option("--max-iterations", cal.max_iterations, "Pass limit")->capture_default_str();
  cal_cmd->add_option("--objective", cal.objective, "full|swap-tokens|swap-positions")->capture_default_str();
  cal_cmd->add_option("--normalize", cal.normalize, "Zero-sum shift after every batch or epoch")->capture_default_str();
  cal_cmd->add_option("--t2-curve", cal.t2_curve, "complement|independent")->capture_default_str();
  cal_cmd->add_option("--output-t2", cal.output_t2, "Second-token curve JSON (independent mode)");

  ApplyArgs ap;
  auto* apply_cmd = app.add_subcommand("apply", "Produce verdicts for raw/pride/calibraeval");
  apply_cmd->add_option("--probes", ap.probes, "Probe store JSONL to debias")->required()->check(CLI::ExistingFile);
  apply_cmd->add_option("--output", ap.output, "Verdict JSONL")->required();
  apply_cmd->add_option("--methods", ap.methods, "Comma-separated methods")->capture_default_str();
  apply_cmd->add_option("--curve", ap.curve, "Curve JSON for calibraeval");
  apply_cmd->add_option("--curve-t2", ap.curve_t2, "Independent second-token curve JSON");
  apply_cmd->add_option("--estimation", ap.estimation, "Probe store for the Pride prior");
  apply_cmd->add_option("--fraction", ap.fraction, "Estimation share for the Pride prior")->capture_default_str();
  apply_cmd->add_option("--seed", ap.seed, "Estimation subsampling seed")->capture_default_str();
  apply_cmd->add_flag("--pride-per-category", ap.pride_per_category, "Estimate one Pride prior per category");
  apply_cmd->add_option("--samples", ap.samples, "Dataset JSONL with categories");

  ReportArgs rep;
  auto* report_cmd = app.add_subcommand("report", "Consistency and accuracy metrics per method");
  report_cmd->add_option("--verdicts", rep.verdicts, "Verdict JSONL")->required()->check(CLI::ExistingFile);
  report_cmd->add_option("--labels", rep.labels, "Dataset JSONL with gold labels");
  report_cmd->add_option("--output", rep.output, "Report JSON");
  report_cmd->add_option("--table", rep.table, "Text table (default <output>.txt)");
  report_cmd->add_option("--icc-mode", rep.icc_mode, "paper|standard")->capture_default_str();
  report_cmd->add_option("--raters", rep.raters, "Combinations treated as raters")->capture_default_str();

  SynthArgs syn;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic biased-judge dataset");
  synth_cmd->add_option("--n", syn.n, "Number of samples")->check(CLI::PositiveNumber)->capture_default_str();
  synth_cmd->add_option("--bias-model", syn.bias_model, "multiplicative|logit-additive")->capture_default_str();
  synth_cmd->add_option("--prior", syn.prior, "Judge prior on t1")->capture_default_str();
  synth_cmd->add_option("--noise", syn.noise, "Logit noise sigma")->capture_default_str();
  synth_cmd->add_option("--seed", syn.seed, "Generator seed")->capture_default_str();
  synth_cmd->add_option("--out-dir", syn.out_dir, "Output directory")->capture_default_str();
  synth_cmd->add_flag("--with-x3", syn.with_x3, "Also emit X3 probes");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*probe_cmd) return run_probe(probe);
    if (*cal_cmd) return run_calibrate(cal);
    if (*apply_cmd) return run_apply(ap);
    if (*report_cmd) return run_report(rep);
    if (*synth_cmd) return run_synth(syn);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
