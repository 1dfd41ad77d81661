// untangle: evaluate second-order predictions from the command line.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "untangle/analysis.hpp"
#include "untangle/batch.hpp"
#include "untangle/decompose.hpp"
#include "untangle/io.hpp"
#include "untangle/metrics.hpp"
#include "untangle/posthoc.hpp"
#include "untangle/synth.hpp"

namespace fs = std::filesystem;
using namespace untangle;

namespace {

constexpr const char* kVersion = "untangle 0.1.0";
constexpr int kUsageExit = 2;
constexpr int kErrorExitBase = 10;

struct Options {
  std::vector<std::string> predictions;
  std::string labels;
  std::string embeddings;
  std::string ood_predictions;
  std::string ood_labels;
  std::string table;
  std::vector<std::string> aggregators;
  std::size_t bins = 15;
  double epsilon = kEpsilon;
  std::uint64_t seed = 0;
  std::string output;
  std::string format = "json";
  double low = 0.3;
  double high = 0.7;
  std::string aleatoric_estimator = "AU_IT";
  std::string epistemic_estimator = "EU_IT";
  std::string method = "mahalanobis";
  bool text = false;
  std::vector<int> levels;

  SimConfig sim;
  std::vector<int> sim_severity;
  std::string sim_family = "gaussian_logits";
};

std::vector<std::string> g_invocation;

void require(bool present, const std::string& sub, const std::string& flag) {
  if (!present) throw Error(ErrorKind::MissingInput, sub + " requires " + flag);
}

Json report_config(const std::string& sub, const Options& o) {
  Json c = Json::object();
  c["invocation"] = g_invocation;
  c["seed"] = o.seed;
  c["version"] = kVersion;
  c["subcommand"] = sub;
  c["epsilon"] = o.epsilon;
  c["bins"] = o.bins;
  return c;
}

void emit(const Json& report, const Options& o) {
  const auto problem = validate_report(report);
  if (!problem.empty()) throw Error(ErrorKind::InvalidInput, "report failed validation: " + problem);
  const std::string text = o.format == "csv" ? report_to_csv(report) : dump_report(report);
  if (o.output.empty()) {
    std::cout << text;
  } else {
    detail::write_file(o.output, text);
  }
}

std::vector<SampleRecord> load(const std::string& predictions, const std::string& labels) {
  return join_labels(read_predictions(predictions), read_labels(labels));
}

/// Samples from predictions alone; labels default to 0 with no soft label.
std::vector<SampleRecord> load_unlabelled(const std::string& predictions) {
  const auto data = read_predictions(predictions);
  std::vector<SampleRecord> out;
  for (std::size_t i = 0; i < data.predictions.size(); ++i) {
    out.push_back(SampleRecord{data.ids[i], data.predictions[i], 0, std::nullopt, false, 0});
  }
  return out;
}

bool all_soft(const std::vector<SampleRecord>& samples) {
  for (const auto& s : samples) {
    if (!s.soft_label) return false;
  }
  return !samples.empty();
}

std::vector<AggregatorKind> resolve_kinds(const std::vector<std::string>& names, bool soft_available) {
  std::vector<AggregatorKind> out;
  bool all = names.empty();
  for (const auto& n : names) {
    if (n == "all") {
      all = true;
    } else {
      const auto k = parse_aggregator(n);
      if (std::find(out.begin(), out.end(), k) == out.end()) out.push_back(k);
    }
  }
  if (!all) return out;
  std::vector<std::string> excluded;
  for (AggregatorKind k : kAllAggregators) {
    if (requires_soft_label(k) && !soft_available) {
      excluded.emplace_back(to_string(k));
      continue;
    }
    if (std::find(out.begin(), out.end(), k) == out.end()) out.push_back(k);
  }
  if (!excluded.empty()) {
    std::string msg = "warning: no soft labels, excluding";
    for (const auto& e : excluded) msg += " " + e;
    std::cerr << msg << "\n";
  }
  return out;
}

AggregateOptions aggregate_options(const Options& o) {
  AggregateOptions a;
  a.epsilon = o.epsilon;
  a.seed = o.seed;
  a.workers = worker_count();
  return a;
}

std::vector<bool> correctness(const std::vector<SampleRecord>& samples) {
  std::vector<bool> out;
  for (const auto& s : samples) out.push_back(predicted_class(s.prediction) == s.label);
  return out;
}

std::vector<double> confidences(const std::vector<double>& u) {
  std::vector<double> out;
  for (double v : u) out.push_back(std::clamp(1.0 - v, 0.0, 1.0));
  return out;
}

template <typename Fn>
Json guarded(Fn&& fn) {
  try {
    return Json(fn());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::DegenerateTargets) return Json(nullptr);
    throw;
  }
}

std::vector<bool> ood_flags(const std::vector<SampleRecord>& samples) {
  std::vector<bool> out;
  for (const auto& s : samples) out.push_back(s.ood);
  return out;
}

std::vector<double> gt_values(const std::vector<SampleRecord>& samples) {
  std::vector<double> out;
  for (const auto& s : samples) {
    if (!s.soft_label) throw Error(ErrorKind::MissingSoftLabel, "sample " + s.id + " has no votes");
    out.push_back(gt_aleatoric(*s.soft_label));
  }
  return out;
}

/// Correctness metrics for one uncertainty column.
Json correctness_metrics(AggregatorKind kind, const std::vector<double>& u, const std::vector<bool>& correct,
                         std::size_t bins, double epsilon, Json* tables) {
  Json m = Json::object();
  std::vector<bool> wrong(correct.size());
  for (std::size_t i = 0; i < correct.size(); ++i) wrong[i] = !correct[i];
  const double acc = accuracy(correct);
  const auto curve = accuracy_coverage(u, correct);
  m["accuracy"] = acc;
  m["auroc"] = guarded([&] { return auroc(u, wrong); });
  m["auac"] = curve.area;
  m["raulc"] = optional_json(raulc(curve, acc));
  m["e_aurc"] = e_aurc(u, correct);
  Json t = Json::object();
  t["coverage"] = curve.coverage;
  t["accuracy"] = curve.accuracy;
  if (is_unit_bounded(kind)) {
    const auto conf = confidences(u);
    m["ece"] = ece(conf, correct, bins);
    const auto rules = scoring_rules(conf, correct, epsilon);
    m["brier"] = rules.brier;
    m["log_prob"] = rules.log_prob;
    Json bt = Json::array();
    for (const auto& b : calibration_bins(conf, correct, bins)) {
      bt.push_back({{"lower", b.lower}, {"upper", b.upper}, {"count", b.count}, {"mean_confidence", b.mean_confidence},
                    {"accuracy", b.accuracy}});
    }
    t["calibration_bins"] = bt;
  } else {
    m["ece"] = nullptr;
    m["brier"] = nullptr;
    m["log_prob"] = nullptr;
  }
  if (tables) (*tables)[std::string(to_string(kind))] = t;
  return m;
}

// ---- subcommands -------------------------------------------------------------

void run_simulate(const Options& o) {
  require(!o.output.empty(), "simulate", "--output");
  SimConfig cfg = o.sim;
  cfg.seed = o.seed;
  cfg.family = parse_family(o.sim_family);
  if (!o.sim_severity.empty()) cfg.severity_levels = o.sim_severity;
  const auto data = simulate(cfg, worker_count());
  std::error_code ec;
  fs::create_directories(o.output, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot create " + o.output + ": " + ec.message());
  const fs::path dir(o.output);

  PredictionData pd;
  std::vector<LabelRecord> labels;
  for (const auto& s : data.samples) {
    pd.ids.push_back(s.id);
    pd.predictions.push_back(s.prediction);
    labels.push_back(label_of(s));
  }
  const std::string pred_name = o.text ? "predictions.jsonl" : "predictions.uqp";
  write_predictions((dir / pred_name).string(), pd, o.text ? PredictionFormat::Text : PredictionFormat::Binary);
  write_labels((dir / "labels.jsonl").string(), labels);
  if (!data.embeddings.empty()) write_embeddings((dir / "embeddings.uqe").string(), data.embeddings);

  Json config = report_config("simulate", o);
  config["simulation"] = {{"n", cfg.n},
                          {"classes", cfg.classes},
                          {"members", cfg.members},
                          {"family", std::string(to_string(cfg.family))},
                          {"aleatoric_scale", cfg.aleatoric_scale},
                          {"epistemic_scale", cfg.epistemic_scale},
                          {"severity_levels", cfg.severity_levels},
                          {"votes_per_sample", cfg.votes_per_sample},
                          {"severity_shift", cfg.severity_shift},
                          {"ood_spread", cfg.ood_spread},
                          {"embedding_dims", cfg.embedding_dims}};
  Json report = make_report(config);
  const auto ood = ood_flags(data.samples);
  report["metrics"]["samples"] = data.samples.size();
  report["metrics"]["ood_samples"] = std::count(ood.begin(), ood.end(), true);
  report["metrics"]["accuracy"] = accuracy(correctness(data.samples));
  Options out = o;
  out.output = (dir / "report.json").string();
  out.format = "json";
  emit(report, out);
}

void run_aggregate(const Options& o) {
  require(!o.predictions.empty(), "aggregate", "--predictions");
  const auto samples = o.labels.empty() ? load_unlabelled(o.predictions.front()) : load(o.predictions.front(), o.labels);
  const auto kinds = resolve_kinds(o.aggregators, all_soft(samples));
  const auto table = aggregate_batch(samples, kinds, aggregate_options(o));
  Json report = make_report(report_config("aggregate", o));
  Json rows = Json::array();
  for (std::size_t r = 0; r < table.rows(); ++r) {
    Json row = {{"id", table.ids[r]}};
    for (std::size_t c = 0; c < kinds.size(); ++c) row[std::string(to_string(kinds[c]))] = table.at(r, c);
    rows.push_back(std::move(row));
  }
  for (std::size_t c = 0; c < kinds.size(); ++c) {
    const auto col = table.column(kinds[c]);
    double mean = 0.0;
    for (double v : col) mean += v;
    report["metrics"][std::string(to_string(kinds[c]))] = {{"mean", mean / static_cast<double>(col.size())}};
  }
  report["per_sample"] = rows;
  emit(report, o);
}

void run_decompose(const Options& o) {
  require(!o.predictions.empty(), "decompose", "--predictions");
  const auto samples = o.labels.empty() ? load_unlabelled(o.predictions.front()) : load(o.predictions.front(), o.labels);
  const auto options = aggregate_options(o);
  std::vector<Json> rows(samples.size());
  parallel_for(samples.size(), options.workers, [&](std::size_t i) {
    const auto& s = samples[i];
    ItDecomposition it;
    std::optional<PredictionSet> materialized;
    if (const auto* d = std::get_if<DirichletPrediction>(&s.prediction)) {
      it = it_decompose_dirichlet(*d);
      materialized = dirichlet_sample(*d, options.materialized_members, options.seed, i, options.epsilon);
    } else {
      it = it_decompose(std::get<PredictionSet>(s.prediction));
    }
    const auto& set = materialized ? *materialized : std::get<PredictionSet>(s.prediction);
    const auto b = bregman_decompose(set, s.soft_label, options.epsilon);
    rows[i] = {{"id", s.id},
               {"it", {{"predictive", it.predictive}, {"aleatoric", it.aleatoric}, {"epistemic", it.epistemic}}},
               {"bregman",
                {{"predictive", optional_json(b.predictive)},
                 {"aleatoric_gt", optional_json(b.aleatoric_gt)},
                 {"aleatoric_est", b.aleatoric_est},
                 {"epistemic", b.epistemic},
                 {"bias", optional_json(b.bias)}}}};
  });
  Json report = make_report(report_config("decompose", o));
  double pu = 0.0, au = 0.0, eu = 0.0;
  for (const auto& r : rows) {
    pu += r["it"]["predictive"].get<double>();
    au += r["it"]["aleatoric"].get<double>();
    eu += r["it"]["epistemic"].get<double>();
  }
  const auto n = static_cast<double>(rows.size());
  report["metrics"]["mean_it"] = {{"predictive", pu / n}, {"aleatoric", au / n}, {"epistemic", eu / n}};
  report["per_sample"] = rows;
  emit(report, o);
}

void run_eval(const Options& o) {
  require(!o.predictions.empty(), "eval", "--predictions");
  require(!o.labels.empty(), "eval", "--labels");
  const auto samples = load(o.predictions.front(), o.labels);
  const auto kinds = resolve_kinds(o.aggregators, all_soft(samples));
  const auto table = aggregate_batch(samples, kinds, aggregate_options(o));
  const auto correct = correctness(samples);
  Json report = make_report(report_config("eval", o));
  Json tables = Json::object();
  for (AggregatorKind k : kinds) {
    report["metrics"][std::string(to_string(k))] = correctness_metrics(k, table.column(k), correct, o.bins, o.epsilon, &tables);
  }
  report["tables"] = tables;
  emit(report, o);
}

void run_ood(const Options& o) {
  require(!o.predictions.empty(), "ood", "--predictions");
  require(!o.labels.empty(), "ood", "--labels");
  require(o.ood_predictions.empty() == o.ood_labels.empty(), "ood", "--ood-predictions together with --ood-labels");
  const auto samples = load(o.predictions.front(), o.labels);
  std::vector<SampleRecord> id_side;
  std::vector<SampleRecord> ood_side;
  if (!o.ood_predictions.empty()) {
    id_side = samples;
    ood_side = load(o.ood_predictions, o.ood_labels);
  } else {
    for (const auto& s : samples) (s.ood ? ood_side : id_side).push_back(s);
  }
  const auto mix = build_ood_mixture(id_side, ood_side, o.seed);
  const auto kinds = resolve_kinds(o.aggregators, all_soft(mix.samples));
  const auto table = aggregate_batch(mix.samples, kinds, aggregate_options(o));
  Json report = make_report(report_config("ood", o));
  report["metrics"]["mixture_size"] = mix.samples.size();
  for (AggregatorKind k : kinds) {
    report["metrics"][std::string(to_string(k))] = {{"ood_auroc", auroc(table.column(k), mix.targets)}};
  }
  emit(report, o);
}

void run_aleatoric(const Options& o) {
  require(!o.predictions.empty(), "aleatoric", "--predictions");
  require(!o.labels.empty(), "aleatoric", "--labels");
  const auto samples = load(o.predictions.front(), o.labels);
  const auto gt = gt_values(samples);
  const auto ambiguous = ambiguity_targets(samples);
  const auto kinds = resolve_kinds(o.aggregators, true);
  const auto table = aggregate_batch(samples, kinds, aggregate_options(o));
  Json report = make_report(report_config("aleatoric", o));
  for (AggregatorKind k : kinds) {
    const auto u = table.column(k);
    report["metrics"][std::string(to_string(k))] = {{"spearman_gt", optional_json(spearman(u, gt))},
                                                    {"ambiguity_auroc", guarded([&] { return auroc(u, ambiguous); })}};
  }
  emit(report, o);
}

void run_disentangle(const Options& o) {
  require(!o.predictions.empty(), "disentangle", "--predictions");
  require(!o.labels.empty(), "disentangle", "--labels");
  const auto samples = load(o.predictions.front(), o.labels);
  const auto gt = gt_values(samples);
  const AggregatorKind kinds[] = {parse_aggregator(o.aleatoric_estimator), parse_aggregator(o.epistemic_estimator)};
  const auto table = aggregate_batch(samples, kinds, aggregate_options(o));
  const auto r = disentanglement(table.column(kinds[0]), table.column(kinds[1]), gt, ood_flags(samples));
  const auto verdict = judge(r, {o.low, o.high});
  Json report = make_report(report_config("disentangle", o));
  report["disentanglement"] = {{"aleatoric_estimator", o.aleatoric_estimator},
                               {"epistemic_estimator", o.epistemic_estimator},
                               {"corr_ua_ue", optional_json(r.corr_ua_ue)},
                               {"corr_ua_gtA", optional_json(r.corr_ua_gtA)},
                               {"corr_ue_proxyE", optional_json(r.corr_ue_proxyE)},
                               {"corr_ua_proxyE", optional_json(r.corr_ua_proxyE)},
                               {"corr_ue_gtA", optional_json(r.corr_ue_gtA)},
                               {"thresholds", {{"low", o.low}, {"high", o.high}}},
                               {"verdict",
                                {{"decorrelated", verdict.decorrelated},
                                 {"well_performing", verdict.well_performing},
                                 {"disentangled", verdict.disentangled}}}};
  emit(report, o);
}

void run_sweep(const Options& o) {
  require(!o.predictions.empty(), "sweep", "--predictions");
  require(!o.labels.empty(), "sweep", "--labels");
  const auto samples = load(o.predictions.front(), o.labels);
  const auto kinds = resolve_kinds(o.aggregators, all_soft(samples));
  const auto table = aggregate_batch(samples, kinds, aggregate_options(o));
  SweepInput in;
  in.correct = correctness(samples);
  in.classes = dataset_classes(samples);
  for (const auto& s : samples) in.severity.push_back(s.severity);
  Json report = make_report(report_config("sweep", o));
  for (AggregatorKind k : kinds) {
    in.uncertainty = table.column(k);
    in.confidence = is_unit_bounded(k) ? confidences(in.uncertainty) : std::vector<double>{};
    for (const auto& row : severity_sweep(in, o.levels, o.bins)) {
      report["per_severity"].push_back({{"aggregator", std::string(to_string(k))},
                                        {"severity", row.severity},
                                        {"count", row.count},
                                        {"missing", row.missing},
                                        {"accuracy", optional_json(row.accuracy)},
                                        {"auroc", optional_json(row.auroc)},
                                        {"auac", optional_json(row.auac)},
                                        {"ece", optional_json(row.ece)},
                                        {"normalized_accuracy", optional_json(row.normalized_accuracy)},
                                        {"normalized_auroc", optional_json(row.normalized_auroc)},
                                        {"normalized_auac", optional_json(row.normalized_auac)}});
    }
  }
  emit(report, o);
}

/// CSV with header method,aggregator,<metric>...; empty cells are missing.
ResultsTable read_results_table(const std::string& path) {
  const auto text = detail::read_file(path);
  const auto lines = detail::split_lines(text);
  if (lines.empty()) throw Error(ErrorKind::EmptyInput, "results table is empty");
  auto split = [](std::string_view line) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const auto end = line.find(',', start);
      cells.emplace_back(line.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start));
      if (end == std::string_view::npos) break;
      start = end + 1;
    }
    return cells;
  };
  const auto header = split(lines[0]);
  if (header.size() < 3 || header[0] != "method" || header[1] != "aggregator") {
    throw Error(ErrorKind::ParseError, "results table header must start with method,aggregator");
  }
  ResultsTable t;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const auto cells = split(lines[li]);
    if (cells.size() != header.size()) throw Error(ErrorKind::ShapeError, "line " + std::to_string(li + 1) + ": wrong cell count");
    for (std::size_t c = 2; c < cells.size(); ++c) {
      std::optional<double> v;
      if (!cells[c].empty()) {
        try {
          std::size_t used = 0;
          v = std::stod(cells[c], &used);
          if (used != cells[c].size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
          throw Error(ErrorKind::ParseError, "line " + std::to_string(li + 1) + ": bad number '" + cells[c] + "'");
        }
      }
      t.set_raw(cells[0], cells[1], header[c], v);
    }
  }
  return t;
}

ResultsTable build_results_table(const Options& o) {
  ResultsTable t;
  for (const auto& path : o.predictions) {
    const std::string method = fs::path(path).stem().string();
    const auto samples = load(path, o.labels);
    const auto kinds = resolve_kinds(o.aggregators, all_soft(samples));
    const auto table = aggregate_batch(samples, kinds, aggregate_options(o));
    const auto correct = correctness(samples);
    const auto ood = ood_flags(samples);
    const bool mixed_ood = std::count(ood.begin(), ood.end(), true) > 0 && std::count(ood.begin(), ood.end(), false) > 0;
    std::optional<std::vector<double>> gt;
    if (all_soft(samples)) gt = gt_values(samples);
    for (AggregatorKind k : kinds) {
      const auto u = table.column(k);
      const Json m = correctness_metrics(k, u, correct, o.bins, o.epsilon, nullptr);
      for (const auto& [name, v] : m.items()) {
        if (is_calibration_metric(name) && !is_unit_bounded(k)) continue;
        t.set(method, k, name, v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
      }
      if (mixed_ood) t.set(method, k, "ood_auroc", auroc(u, ood));
      if (gt) t.set(method, k, "spearman_gt", spearman(u, *gt));
    }
  }
  return t;
}

Json matrix_json(const CorrelationMatrix& m) {
  Json cells = Json::array();
  for (std::size_t i = 0; i < m.names.size(); ++i) {
    Json row = Json::array();
    for (std::size_t j = 0; j < m.names.size(); ++j) row.push_back(optional_json(m.at(i, j)));
    cells.push_back(row);
  }
  return {{"names", m.names}, {"cells", cells}};
}

void run_correlate(const Options& o) {
  require(!o.predictions.empty() || !o.table.empty(), "correlate", "--predictions or --table");
  if (o.table.empty()) require(!o.labels.empty(), "correlate", "--labels");
  const auto table = o.table.empty() ? build_results_table(o) : read_results_table(o.table);
  Json report = make_report(report_config("correlate", o));
  report["correlations"]["pearson"] = matrix_json(metric_correlation_matrix(table, CorrelationMode::Pearson));
  report["correlations"]["spearman"] = matrix_json(metric_correlation_matrix(table, CorrelationMode::Spearman));
  Json rows = Json::array();
  for (std::size_t r = 0; r < table.rows().size(); ++r) {
    Json row = {{"method", table.rows()[r].first}, {"aggregator", table.rows()[r].second}};
    for (std::size_t c = 0; c < table.columns().size(); ++c) row[table.columns()[c]] = optional_json(table.cell(r, c));
    rows.push_back(row);
  }
  report["results_table"] = rows;
  emit(report, o);
}

enum class Part { Train, Validation, Test };

Part assign_part(std::uint64_t seed, std::size_t i, bool ood) {
  const double u = Rng(seed, Stream::Split, i).uniform();
  if (ood) return u < 0.5 ? Part::Validation : Part::Test;
  return u < 0.6 ? Part::Train : (u < 0.8 ? Part::Validation : Part::Test);
}

std::vector<double> ensemble_logits(const Prediction& p) {
  std::vector<double> out;
  if (const auto* set = std::get_if<PredictionSet>(&p)) {
    for (double v : clamp_simplex(detail::bma_values(*set))) out.push_back(std::log(v));
  } else {
    for (double v : std::get<DirichletPrediction>(p).mean()) out.push_back(std::log(std::max(v, kEpsilon)));
  }
  return out;
}

void run_posthoc(const Options& o) {
  require(o.method == "mahalanobis" || o.method == "ddu" || o.method == "temperature", "posthoc",
          "--method mahalanobis|ddu|temperature");
  require(!o.labels.empty(), "posthoc", "--labels");
  if (o.method != "temperature") require(!o.embeddings.empty(), "posthoc", "--embeddings");
  if (o.method != "mahalanobis") require(!o.predictions.empty(), "posthoc", "--predictions");
  const auto labels = read_labels(o.labels);
  Json report = make_report(report_config("posthoc", o));
  report["config"]["method"] = o.method;

  if (o.method == "temperature") {
    const auto samples = join_labels(read_predictions(o.predictions.front()), labels);
    std::vector<std::vector<double>> val_logits, test_logits;
    std::vector<std::size_t> val_labels, test_labels;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].ood) continue;
      const auto part = assign_part(o.seed, i, false);
      auto& logits = part == Part::Test ? test_logits : val_logits;
      auto& lab = part == Part::Test ? test_labels : val_labels;
      logits.push_back(ensemble_logits(samples[i].prediction));
      lab.push_back(samples[i].label);
    }
    const double tau = temperature_scale(val_logits, val_labels);
    report["metrics"]["temperature"] = tau;
    if (!test_logits.empty()) {
      for (const auto& [key, t] : {std::pair<const char*, double>{"before", 1.0}, {"after", tau}}) {
        std::vector<double> conf;
        std::vector<bool> correct;
        for (std::size_t i = 0; i < test_logits.size(); ++i) {
          const auto p = apply_temperature(test_logits[i], t);
          conf.push_back(*std::max_element(p.begin(), p.end()));
          correct.push_back(argmax(p) == test_labels[i]);
        }
        report["metrics"][key] = {{"ece", ece(conf, correct, o.bins)}, {"nll", temperature_nll(test_logits, test_labels, t)}};
      }
    }
    emit(report, o);
    return;
  }

  auto records = read_embeddings(o.embeddings);
  join_embedding_labels(records, labels);
  std::size_t classes = 0;
  for (const auto& r : records) classes = std::max(classes, r.label + 1);
  std::vector<EmbeddingRecord> train, validation, test;
  std::vector<std::size_t> val_index, test_index;
  for (std::size_t i = 0; i < records.size(); ++i) {
    switch (assign_part(o.seed, i, records[i].ood)) {
      case Part::Train: train.push_back(records[i]); break;
      case Part::Validation:
        validation.push_back(records[i]);
        val_index.push_back(i);
        break;
      case Part::Test:
        test.push_back(records[i]);
        test_index.push_back(i);
        break;
    }
  }
  std::vector<double> scores;
  if (o.method == "mahalanobis") {
    const auto model = fit_mahalanobis(train, validation, classes);
    for (const auto& r : test) scores.push_back(score_mahalanobis(model, r));
    Json w = Json::array();
    for (Eigen::Index l = 0; l < model.combiner.weights.size(); ++l) w.push_back(model.combiner.weights[l]);
    report["model"] = {{"layer_weights", w}};
  } else {
    const auto samples = join_labels(read_predictions(o.predictions.front()), labels);
    if (samples.size() != records.size()) throw Error(ErrorKind::ShapeError, "predictions and embeddings differ in length");
    std::vector<std::vector<double>> val_logits;
    std::vector<std::size_t> val_labels;
    for (std::size_t i : val_index) {
      if (records[i].ood) continue;
      val_logits.push_back(ensemble_logits(samples[i].prediction));
      val_labels.push_back(samples[i].label);
    }
    const auto model = fit_ddu(train, val_logits, val_labels, classes);
    for (const auto& r : test) scores.push_back(score_ddu(model, r.layers.back()));
    report["metrics"]["temperature"] = model.temperature;
  }
  std::vector<bool> targets;
  Json rows = Json::array();
  for (std::size_t j = 0; j < test.size(); ++j) {
    targets.push_back(test[j].ood);
    rows.push_back({{"id", test[j].id}, {"ood", test[j].ood}, {"score", scores[j]}});
  }
  report["metrics"]["ood_auroc"] = guarded([&] { return auroc(scores, targets); });
  report["metrics"]["test_size"] = test.size();
  report["per_sample"] = rows;
  emit(report, o);
}

int exit_code(ErrorKind kind) { return kErrorExitBase + static_cast<int>(kind); }

}  // namespace

int main(int argc, char** argv) {
  g_invocation.emplace_back(fs::path(argv[0]).filename().string());
  for (int i = 1; i < argc; ++i) g_invocation.emplace_back(argv[i]);

  Options o;
  CLI::App app{"Evaluate second-order predictive distributions"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  auto common = [&](CLI::App* sub) {
    sub->add_option("--seed", o.seed, "Seed for sampling and splits");
    sub->add_option("--output", o.output, "Report path");
    sub->add_option("--format", o.format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
    sub->add_option("--epsilon", o.epsilon, "Clamp for logarithm arguments");
    sub->add_option("--bins", o.bins, "ECE bins")->check(CLI::PositiveNumber);
  };
  auto inputs = [&](CLI::App* sub) {
    sub->add_option("--predictions", o.predictions, "Prediction file");
    sub->add_option("--labels", o.labels, "Label file");
    sub->add_option("--aggregator", o.aggregators, "Aggregator kind, repeatable, or all");
  };

  auto* sim = app.add_subcommand("simulate", "Write a synthetic dataset to the --output directory");
  common(sim);
  sim->add_option("--n", o.sim.n, "Samples");
  sim->add_option("--classes", o.sim.classes, "Classes");
  sim->add_option("--members", o.sim.members, "Members per prediction set");
  sim->add_option("--family", o.sim_family, "dirichlet, gaussian_logits or dirac_ensemble");
  sim->add_option("--aleatoric-scale", o.sim.aleatoric_scale, "Off-class Dirichlet parameter of the Bayes predictor");
  sim->add_option("--epistemic-scale", o.sim.epistemic_scale, "Member spread");
  sim->add_option("--severity", o.sim_severity, "Severity levels, repeatable");
  sim->add_option("--votes", o.sim.votes_per_sample, "Annotator votes per sample");
  sim->add_option("--severity-shift", o.sim.severity_shift, "Mean logit shift per severity level");
  sim->add_option("--ood-spread", o.sim.ood_spread, "Extra member spread per severity level");
  sim->add_option("--embedding-dims", o.sim.embedding_dims, "Embedding layer sizes, repeatable");
  sim->add_flag("--text", o.text, "Write predictions as JSON lines");

  auto* agg = app.add_subcommand("aggregate", "Per-sample aggregator scores");
  common(agg);
  inputs(agg);
  auto* dec = app.add_subcommand("decompose", "Per-sample IT and Bregman decompositions");
  common(dec);
  inputs(dec);
  auto* ev = app.add_subcommand("eval", "Correctness, selective prediction and calibration metrics");
  common(ev);
  inputs(ev);
  auto* ood = app.add_subcommand("ood", "OOD detection AUROC on a balanced mixture");
  common(ood);
  inputs(ood);
  ood->add_option("--ood-predictions", o.ood_predictions, "OOD prediction file");
  ood->add_option("--ood-labels", o.ood_labels, "OOD label file");
  auto* ale = app.add_subcommand("aleatoric", "Rank correlation with annotator entropy");
  common(ale);
  inputs(ale);
  auto* dis = app.add_subcommand("disentangle", "Correlations between an aleatoric and an epistemic estimator");
  common(dis);
  inputs(dis);
  dis->add_option("--aleatoric-estimator", o.aleatoric_estimator, "Aggregator used as u_a");
  dis->add_option("--epistemic-estimator", o.epistemic_estimator, "Aggregator used as u_e");
  dis->add_option("--low", o.low, "Upper bound on |corr| for decorrelation");
  dis->add_option("--high", o.high, "Lower bound on corr for a well-performing estimator");
  auto* sw = app.add_subcommand("sweep", "Metrics per severity level");
  common(sw);
  inputs(sw);
  sw->add_option("--level", o.levels, "Severity levels to report, repeatable");
  auto* cor = app.add_subcommand("correlate", "Correlation matrices between metrics");
  common(cor);
  inputs(cor);
  cor->add_option("--table", o.table, "Results table CSV (method,aggregator,metrics...)");
  auto* ph = app.add_subcommand("posthoc", "Fit and score a post-hoc method");
  common(ph);
  inputs(ph);
  ph->add_option("--method", o.method, "mahalanobis, ddu or temperature");
  ph->add_option("--embeddings", o.embeddings, "Embedding file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: Usage: " << e.what() << "\n";
    return kUsageExit;
  }

  try {
    if (sim->parsed()) run_simulate(o);
    else if (agg->parsed()) run_aggregate(o);
    else if (dec->parsed()) run_decompose(o);
    else if (ev->parsed()) run_eval(o);
    else if (ood->parsed()) run_ood(o);
    else if (ale->parsed()) run_aleatoric(o);
    else if (dis->parsed()) run_disentangle(o);
    else if (sw->parsed()) run_sweep(o);
    else if (cor->parsed()) run_correlate(o);
    else if (ph->parsed()) run_posthoc(o);
  } catch (const Error& e) {
    std::string msg = e.message();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error: " << to_string(e.kind()) << ": " << msg << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: Internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
