#include "cli/commands.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "iia/embeddings.hpp"
#include "iia/engine.hpp"
#include "iia/error.hpp"
#include "iia/evaluation.hpp"
#include "iia/reference_results.hpp"
#include "iia/similarity.hpp"

namespace iia::cli {

namespace {

constexpr const char* kTuningNotes =
    "Tuning: K works best near the average number of gallery samples per identity;\n"
    "n between 4 and 10 is a good range. Defaults: alpha 0.82, K 11, n 6, tau 0.2.\n"
    "Set IIA_NUM_THREADS to cap worker threads.";

int exit_code_for(const Error& e) {
  if (dynamic_cast<const NumericalError*>(&e)) return kExitNumerical;
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ShapeError*>(&e) ||
      dynamic_cast<const ContractError*>(&e)) {
    return kExitConfig;
  }
  return kExitData;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open " + path + " for writing");
  file << text;
  if (!file) throw IoError("write failed: " + path);
}

struct InputOptions {
  std::string query;
  std::string gallery;
  std::string embeddings;
  std::string similarity;
  bool no_normalize = false;
};

struct ConfigOptions {
  double alpha = 0.82;
  std::size_t k = 11;
  std::size_t iters = 6;
  double tau = 0.2;
  std::string mode = "gon";
  std::string metric;  // empty: cosine for embeddings, precomputed for --similarity
  std::string transform = "none";
  std::size_t kr = 20;
  double lambda = 0.3;
  bool joint_queries = true;
};

struct MethodOptions {
  std::string baseline = "none";
  std::size_t aqe_k = 5;
};

void add_input_options(CLI::App* cmd, InputOptions& in) {
  cmd->add_option("--query", in.query, "Query embeddings (.emb/.bin/.csv)");
  cmd->add_option("--gallery", in.gallery, "Gallery embeddings (.emb/.bin/.csv)");
  cmd->add_option("--embeddings", in.embeddings, "Mixed embeddings, split by role");
  cmd->add_option("--similarity", in.similarity,
                  "Square SIM1 similarity over all items; metadata in <path>.meta.jsonl");
  cmd->add_flag("--no-normalize", in.no_normalize, "Skip L2 normalization of input embeddings");
}

void add_config_options(CLI::App* cmd, ConfigOptions& c) {
  cmd->add_option("--alpha", c.alpha, "Forgetting factor in [0, 1]")->capture_default_str();
  cmd->add_option("--k", c.k, "Neighbors aggregated per item")->capture_default_str();
  cmd->add_option("--iters", c.iters, "Number of iterations n")->capture_default_str();
  cmd->add_option("--tau", c.tau, "Softmax temperature")->capture_default_str();
  cmd->add_option("--mode", c.mode, "Update mode: q (query only), goff (gallery offline), gon (gallery online)")
      ->check(CLI::IsMember({"q", "goff", "gon"}))
      ->capture_default_str();
  cmd->add_option("--metric", c.metric, "cosine, euclidean or precomputed")
      ->check(CLI::IsMember({"cosine", "euclidean", "precomputed"}));
  cmd->add_option("--transform", c.transform, "Similarity transform: none or reciprocal")
      ->check(CLI::IsMember({"none", "reciprocal"}))
      ->capture_default_str();
  cmd->add_option("--kr", c.kr, "Reciprocal neighbor count")->capture_default_str();
  cmd->add_option("--lambda", c.lambda, "Weight of the original similarity in the reciprocal mix")
      ->capture_default_str();
  cmd->add_option("--joint-queries", c.joint_queries,
                  "Share one joint matrix across all queries (true) or update each query alone (false)")
      ->capture_default_str();
}

void add_method_options(CLI::App* cmd, MethodOptions& m) {
  cmd->add_option("--baseline", m.baseline, "none runs IIA; aqe runs average query expansion instead")
      ->check(CLI::IsMember({"none", "aqe"}))
      ->capture_default_str();
  cmd->add_option("--aqe-k", m.aqe_k, "Gallery items averaged by AQE")->capture_default_str();
}

struct Inputs {
  std::optional<EmbeddingSet> queries;
  std::optional<EmbeddingSet> gallery;
  std::optional<SimilarityMatrix> joint;
  std::vector<Role> roles;
  std::vector<ItemRecord> query_items;
  std::vector<ItemRecord> gallery_items;

  bool precomputed() const { return joint.has_value(); }
};

EmbeddingSet load_any(const std::string& path, bool normalize) {
  EmbeddingSet set = load_embeddings(path, format_from_path(path));
  return normalize ? l2_normalize(set) : set;
}

Inputs load_inputs(const InputOptions& opt) {
  const bool pair = !opt.query.empty() || !opt.gallery.empty();
  const int kinds = int(pair) + int(!opt.embeddings.empty()) + int(!opt.similarity.empty());
  if (kinds != 1) {
    throw ConfigError("provide exactly one input: --query with --gallery, --embeddings, or --similarity");
  }
  Inputs in;
  if (pair) {
    if (opt.query.empty() || opt.gallery.empty()) throw ConfigError("--query and --gallery go together");
    in.queries = load_any(opt.query, !opt.no_normalize);
    in.gallery = load_any(opt.gallery, !opt.no_normalize);
  } else if (!opt.embeddings.empty()) {
    auto [q, g] = split_by_role(load_any(opt.embeddings, !opt.no_normalize));
    in.queries = std::move(q);
    in.gallery = std::move(g);
  } else {
    in.joint = load_similarity(opt.similarity);
    const auto items = load_metadata(metadata_sidecar_path(opt.similarity));
    if (!in.joint->is_square() || items.size() != in.joint->rows()) {
      throw FormatError(opt.similarity + ": expected a square matrix with one metadata line per row");
    }
    for (const auto& rec : items) {
      in.roles.push_back(rec.role);
      (rec.role == Role::query ? in.query_items : in.gallery_items).push_back(rec);
    }
    return in;
  }
  in.query_items = in.queries->items();
  in.gallery_items = in.gallery->items();
  return in;
}

IiaConfig make_config(const ConfigOptions& c, const Inputs& in) {
  IiaConfig cfg;
  cfg.alpha = c.alpha;
  cfg.k = c.k;
  cfg.iters = c.iters;
  cfg.tau = c.tau;
  cfg.mode = c.mode == "q"      ? UpdateMode::query_only
             : c.mode == "goff" ? UpdateMode::gallery_offline
                                : UpdateMode::gallery_online;
  const std::string metric = c.metric.empty() ? (in.precomputed() ? "precomputed" : "cosine") : c.metric;
  if ((metric == "precomputed") != in.precomputed()) {
    throw ConfigError("--metric precomputed goes with --similarity input and only with it");
  }
  cfg.metric = metric == "cosine" ? Metric::cosine : metric == "euclidean" ? Metric::euclidean : Metric::precomputed;
  cfg.transform = c.transform == "reciprocal" ? SimilarityTransform::reciprocal : SimilarityTransform::none;
  cfg.reciprocal = {c.kr, c.lambda};
  cfg.joint_queries = c.joint_queries;
  cfg.validate();
  return cfg;
}

SimilarityMatrix score(const EmbeddingSet& q, const EmbeddingSet& g, Metric metric) {
  return metric == Metric::euclidean ? euclidean_similarity(q, g) : cosine_similarity(q, g);
}

/// Final query-gallery similarity for the chosen method.
RunResult execute(const Inputs& in, const IiaConfig& cfg, const MethodOptions& method, bool normalize,
                  const IterationObserver& observer = {}) {
  if (method.baseline == "aqe") {
    if (in.precomputed()) throw ConfigError("AQE needs embedding inputs");
    RunResult r;
    const auto expanded = aqe_expand(*in.queries, *in.gallery, method.aqe_k, normalize);
    r.query_gallery = score(expanded, *in.gallery, cfg.metric);
    return r;
  }
  if (in.precomputed()) return run_precomputed(*in.joint, in.roles, cfg, observer);
  return run(*in.queries, *in.gallery, cfg, observer);
}

std::string ranking_csv(const SimilarityMatrix& qg, const Inputs& in, std::size_t depth) {
  const RankingResult r = rank(qg);
  std::ostringstream out;
  out << "query_id,rank,gallery_id,score\n";
  for (std::size_t q = 0; q < r.num_queries(); ++q) {
    const auto order = r.order(q);
    const auto scores = r.scores(q);
    for (std::size_t p = 0; p < std::min(depth, order.size()); ++p) {
      out << in.query_items[q].item_id << ',' << p + 1 << ',' << in.gallery_items[order[p]].item_id << ','
          << format_double(scores[p]) << '\n';
    }
  }
  return out.str();
}

// ---- run -------------------------------------------------------------------

struct RunOptions {
  InputOptions input;
  ConfigOptions config;
  MethodOptions method;
  std::string out;
  std::string report_format = "json";
  std::string ranking;
  std::size_t ranking_depth = 10;
  std::vector<std::size_t> cmc_ranks = default_cmc_ranks();
  bool trace = false;
};

int cmd_run(const RunOptions& opt, std::ostream& out, std::ostream& err) {
  const Inputs in = load_inputs(opt.input);
  const IiaConfig cfg = make_config(opt.config, in);

  IterationObserver observer;
  if (opt.trace) {
    observer = [&](std::size_t t, const SimilarityMatrix& qg) {
      const auto rep = evaluate(qg, in.query_items, in.gallery_items, opt.cmc_ranks);
      err << "trace iteration " << t << " map " << format_double(rep.map) << '\n';
    };
  }
  const RunResult result = execute(in, cfg, opt.method, !opt.input.no_normalize, observer);
  if (result.offline_seconds > 0.0) err << "gallery pre-iteration " << result.offline_seconds << " s\n";
  for (std::size_t t = 0; t < result.iteration_seconds.size(); ++t) {
    err << "iteration " << t + 1 << '/' << result.iteration_seconds.size() << ' '
        << result.iteration_seconds[t] << " s\n";
  }

  const EvalReport report = evaluate(result.query_gallery, in.query_items, in.gallery_items, opt.cmc_ranks);
  const std::string text = opt.report_format == "csv" ? report_to_csv(report) : report_to_json(report) + "\n";
  if (opt.out.empty()) {
    out << text;
  } else {
    write_text_file(opt.out, text);
  }
  if (!opt.ranking.empty()) write_text_file(opt.ranking, ranking_csv(result.query_gallery, in, opt.ranking_depth));
  return kExitOk;
}

// ---- sweep -----------------------------------------------------------------

struct SweepOptions {
  InputOptions input;
  ConfigOptions config;
  MethodOptions method;
  std::string param;
  std::string values;
  std::string out;
};

double parse_value(const std::string& text) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end || !std::isfinite(v)) {
    throw ConfigError("cannot parse sweep value '" + text + "'");
  }
  return v;
}

/// "a,b,c" or inclusive "start:step:stop".
std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  if (text.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
    if (parts.size() != 3) throw ConfigError("range must be start:step:stop");
    const double start = parse_value(parts[0]);
    const double step = parse_value(parts[1]);
    const double stop = parse_value(parts[2]);
    if (!(step > 0.0) || stop < start) throw ConfigError("range needs step > 0 and stop >= start");
    const auto count = static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9)) + 1;
    if (count > 100000) throw ConfigError("range has too many points");
    for (std::size_t i = 0; i < count; ++i) out.push_back(start + static_cast<double>(i) * step);
  } else {
    std::stringstream ss(text);
    for (std::string p; std::getline(ss, p, ',');) out.push_back(parse_value(p));
  }
  if (out.empty()) throw ConfigError("sweep needs at least one value");
  return out;
}

std::size_t as_count(double v, const std::string& param) {
  if (v < 0.0 || v != std::floor(v)) throw ConfigError(param + " values must be non-negative integers");
  return static_cast<std::size_t>(v);
}

int cmd_sweep(const SweepOptions& opt, std::ostream& out, std::ostream& err) {
  const Inputs in = load_inputs(opt.input);
  const std::vector<double> grid = parse_grid(opt.values);
  for (const double v : grid) {
    if (opt.param == "k" && as_count(v, "k") > in.gallery_items.size()) {
      throw ConfigError("k=" + format_double(v) + " exceeds the gallery size " +
                        std::to_string(in.gallery_items.size()));
    }
    if (opt.param == "iters") as_count(v, "iters");
  }
  const std::vector<std::size_t> ranks{1};
  std::ostringstream csv;
  csv << "param_value,map,cmc1\n";
  for (const double v : grid) {
    ConfigOptions c = opt.config;
    if (opt.param == "alpha") c.alpha = v;
    if (opt.param == "tau") c.tau = v;
    if (opt.param == "k") c.k = as_count(v, "k");
    if (opt.param == "iters") c.iters = as_count(v, "iters");
    const IiaConfig cfg = make_config(c, in);
    const auto start = std::chrono::steady_clock::now();
    const RunResult result = execute(in, cfg, opt.method, !opt.input.no_normalize);
    const auto rep = evaluate(result.query_gallery, in.query_items, in.gallery_items, ranks);
    err << opt.param << '=' << format_double(v) << " map " << format_double(rep.map) << " ("
        << std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() << " s)\n";
    csv << format_double(v) << ',' << format_double(rep.map) << ',' << format_double(rep.cmc_at(1)) << '\n';
  }
  if (opt.out.empty()) {
    out << csv.str();
  } else {
    write_text_file(opt.out, csv.str());
  }
  return kExitOk;
}

// ---- synth -----------------------------------------------------------------

struct SynthOptions {
  SynthParams params;
  std::optional<double> noise_sigma;
  std::string preset;
  std::string out;
};

int cmd_synth(const SynthOptions& opt, std::ostream& err) {
  SynthParams p = opt.params;
  if (opt.preset == "calibrated") {
    if (opt.noise_sigma) throw ConfigError("--preset calibrated fixes the noise level; drop --noise-sigma");
    p.noise_sigma = kCalibratedNoiseSigma;
  } else if (opt.noise_sigma) {
    p.noise_sigma = *opt.noise_sigma;
  }
  const auto format = format_from_path(opt.out);
  const EmbeddingSet set = synthesize_clusters(p);
  save_embeddings(set, opt.out, format);
  err << "wrote " << set.size() << " items of dim " << set.dim() << " (noise " << p.noise_sigma << ", seed "
      << p.seed << ") to " << opt.out << '\n';
  return kExitOk;
}

// ---- convert ---------------------------------------------------------------

int cmd_convert(const std::string& from, const std::string& to) {
  const auto in_format = format_from_path(from);
  const auto out_format = format_from_path(to);
  save_embeddings(load_embeddings(from, in_format), to, out_format);
  return kExitOk;
}

// ---- repro -----------------------------------------------------------------

struct ReproOptions {
  InputOptions input;
  std::string dataset;
  std::string backbone;
  std::string method = "iia_bas";
  std::size_t aqe_k = 5;
  std::string out;
};

int cmd_repro(const ReproOptions& opt, std::ostream& out, std::ostream& err) {
  const auto reference = find_reference(opt.dataset, opt.backbone, opt.method);
  if (!reference) {
    throw ConfigError("no published result for " + opt.dataset + "/" + opt.backbone + "/" + opt.method);
  }
  const OperatingPoint point = operating_point(opt.dataset);
  const Inputs in = load_inputs(opt.input);
  if (in.precomputed()) throw ConfigError("repro needs embedding inputs");

  ConfigOptions c;
  c.alpha = point.alpha;
  c.k = point.k;
  c.iters = opt.method == "baseline" ? 0 : point.iters;
  c.tau = point.tau;
  if (opt.method == "iia_adv") c.transform = "reciprocal";
  MethodOptions m;
  m.aqe_k = opt.aqe_k;
  if (opt.method == "aqe") m.baseline = "aqe";
  const IiaConfig cfg = make_config(c, in);

  const RunResult result = execute(in, cfg, m, !opt.input.no_normalize);
  const auto rep = evaluate(result.query_gallery, in.query_items, in.gallery_items);
  const double map = 100.0 * rep.map;
  const double cmc1 = 100.0 * rep.cmc_at(1);

  nlohmann::ordered_json j;
  j["dataset"] = opt.dataset;
  j["backbone"] = opt.backbone;
  j["method"] = opt.method;
  j["operating_point"] = {{"alpha", cfg.alpha}, {"k", cfg.k}, {"iters", cfg.iters}, {"tau", cfg.tau}};
  j["measured"] = {{"map", map}, {"cmc1", cmc1}};
  j["reference"] = {{"map", reference->map}, {"cmc1", reference->cmc1}};
  j["delta"] = {{"map", map - reference->map}, {"cmc1", cmc1 - reference->cmc1}};
  j["tolerance_map"] = kReproductionToleranceMap;
  j["within_tolerance"] = std::abs(map - reference->map) <= kReproductionToleranceMap;
  const std::string text = j.dump(2) + "\n";
  if (opt.out.empty()) {
    out << text;
  } else {
    write_text_file(opt.out, text);
  }
  err << opt.method << " mAP " << map << " vs " << reference->map << " (delta " << map - reference->map << ")\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Iterative impression aggregation for embedding retrieval", "iia"};
  app.require_subcommand(1);
  app.footer(kTuningNotes);

  RunOptions run_opt;
  auto* run_cmd = app.add_subcommand("run", "Aggregate impressions, re-rank and evaluate");
  add_input_options(run_cmd, run_opt.input);
  add_config_options(run_cmd, run_opt.config);
  add_method_options(run_cmd, run_opt.method);
  run_cmd->add_option("--out", run_opt.out, "Report path (default: standard output)");
  run_cmd->add_option("--report-format", run_opt.report_format, "json or csv")
      ->check(CLI::IsMember({"json", "csv"}))
      ->capture_default_str();
  run_cmd->add_option("--ranking", run_opt.ranking, "Write the top of each ranking as CSV");
  run_cmd->add_option("--ranking-depth", run_opt.ranking_depth, "Gallery items per query in --ranking")
      ->capture_default_str();
  run_cmd->add_option("--cmc-ranks", run_opt.cmc_ranks, "CMC ranks to report")
      ->delimiter(',')
      ->check(CLI::PositiveNumber);
  run_cmd->add_flag("--trace", run_opt.trace, "Log the mAP after every iteration");
  run_cmd->footer(kTuningNotes);

  SweepOptions sweep_opt;
  auto* sweep_cmd = app.add_subcommand("sweep", "Evaluate a grid over one hyperparameter, CSV output");
  add_input_options(sweep_cmd, sweep_opt.input);
  add_config_options(sweep_cmd, sweep_opt.config);
  add_method_options(sweep_cmd, sweep_opt.method);
  sweep_cmd->add_option("--param", sweep_opt.param, "alpha, k, iters or tau")
      ->required()
      ->check(CLI::IsMember({"alpha", "k", "iters", "tau"}));
  sweep_cmd->add_option("--values", sweep_opt.values, "Comma list or inclusive start:step:stop")->required();
  sweep_cmd->add_option("--out", sweep_opt.out, "CSV path (default: standard output)");
  sweep_cmd->footer(kTuningNotes);

  SynthOptions synth_opt;
  double sigma = 0.0;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic identity-cluster embedding set");
  synth_cmd->add_option("--num-ids", synth_opt.params.num_ids)->capture_default_str();
  synth_cmd->add_option("--queries-per-id", synth_opt.params.queries_per_id)->capture_default_str();
  synth_cmd->add_option("--gallery-per-id", synth_opt.params.gallery_per_id)->capture_default_str();
  synth_cmd->add_option("--dim", synth_opt.params.dim)->capture_default_str();
  auto* sigma_opt = synth_cmd->add_option("--noise-sigma", sigma, "Per-coordinate noise (default 0)");
  synth_cmd->add_option("--num-distractors", synth_opt.params.num_distractors)->capture_default_str();
  synth_cmd->add_option("--seed", synth_opt.params.seed)->capture_default_str();
  synth_cmd->add_option("--preset", synth_opt.preset, "calibrated: noise level tuned for mid-range raw mAP")
      ->check(CLI::IsMember({"calibrated"}));
  synth_cmd->add_option("--out", synth_opt.out, "Output path; format from extension")->required();

  std::string convert_in;
  std::string convert_out;
  auto* convert_cmd = app.add_subcommand("convert", "Convert embeddings between binary and CSV");
  convert_cmd->add_option("--in", convert_in)->required();
  convert_cmd->add_option("--out", convert_out)->required();

  ReproOptions repro_opt;
  auto* repro_cmd =
      app.add_subcommand("repro", "Compare a run on user-supplied feature dumps with published numbers");
  add_input_options(repro_cmd, repro_opt.input);
  repro_cmd->add_option("--dataset", repro_opt.dataset, "market1501, dukemtmc, cuhk03-lab, cuhk03-det")->required();
  repro_cmd->add_option("--backbone", repro_opt.backbone, "trip, pcb, pab, mgn")->required();
  repro_cmd->add_option("--method", repro_opt.method, "baseline, aqe, iia_bas, iia_adv")
      ->check(CLI::IsMember({"baseline", "aqe", "iia_bas", "iia_adv"}))
      ->capture_default_str();
  repro_cmd->add_option("--aqe-k", repro_opt.aqe_k)->capture_default_str();
  repro_cmd->add_option("--out", repro_opt.out, "Report path (default: standard output)");

  std::vector<const char*> argv{"iia"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (run_cmd->parsed()) return cmd_run(run_opt, out, err);
    if (sweep_cmd->parsed()) return cmd_sweep(sweep_opt, out, err);
    if (synth_cmd->parsed()) {
      if (sigma_opt->count() > 0) synth_opt.noise_sigma = sigma;
      return cmd_synth(synth_opt, err);
    }
    if (convert_cmd->parsed()) return cmd_convert(convert_in, convert_out);
    if (repro_cmd->parsed()) return cmd_repro(repro_opt, out, err);
  } catch (const Error& e) {
    err << e.kind() << ": " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitConfig;
}

}  // namespace iia::cli
