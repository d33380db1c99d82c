// Command-line driver: ingest/train/eval/explain. stdout carries data,
// stderr carries logs. Exit codes are part of the interface:
//   0 ok, 1 io/unexpected, 2 config/parse/validation, 3 training diverged,
//   4 context incompatible with family, 5 metric undefined on this data,
//   6 explanation unavailable for family, 7 unknown patient.

#include <array>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "censurv/censurv.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace censurv;

namespace {

int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::PARSE_ERROR:
    case ErrorCode::CONFIG_ERROR:
    case ErrorCode::NEGATIVE_TIME:
    case ErrorCode::DIM_MISMATCH:
    case ErrorCode::SHAPE_MISMATCH:
    case ErrorCode::INDEX_OUT_OF_RANGE:
    case ErrorCode::ORACLE_SCALE_EXCEEDED:
    case ErrorCode::STALE_GRADIENTS:
    case ErrorCode::MISSING_LABEL_COLUMNS:
    case ErrorCode::UNKNOWN_COLUMN:
    case ErrorCode::EMPTY_RECORD:
    case ErrorCode::MISSING_OUTCOME:
      return 2;
    case ErrorCode::DIVERGED:
      return 3;
    case ErrorCode::INCOMPATIBLE_CONTEXT:
      return 4;
    case ErrorCode::EMPTY_DATASET:
    case ErrorCode::NO_EVENTS:
    case ErrorCode::NO_LABELED_PATIENTS:
    case ErrorCode::TOO_FEW_RECORDS:
      return 5;
    case ErrorCode::EXPLANATION_UNAVAILABLE:
      return 6;
    case ErrorCode::UNKNOWN_PATIENT:
      return 7;
    case ErrorCode::IO_ERROR:
      return 1;
  }
  return 1;
}

json load_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::IO_ERROR, "cannot open " + path);
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::PARSE_ERROR, path + ": " + e.what());
  }
}

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                         const std::string& origin) {
  if (!j.is_object())
    throw Error(ErrorCode::CONFIG_ERROR, origin + ": config must be a JSON object");
  for (const auto& item : j.items())
    if (!allowed.count(item.key())) {
      std::string keys;
      for (const auto& k : allowed) keys += (keys.empty() ? "" : ", ") + k;
      throw Error(ErrorCode::CONFIG_ERROR,
                  origin + ": unknown config key '" + item.key() + "' (allowed: " + keys + ")");
    }
}

std::string grid_label(const TimeGrid& grid) {
  const int m = grid.m();
  const double w = grid.boundaries[1] - grid.boundaries[0];
  for (int i = 1; i <= m; ++i) {
    const double wi = grid.boundaries[static_cast<std::size_t>(i)] -
                      grid.boundaries[static_cast<std::size_t>(i) - 1];
    if (std::abs(wi - w) > 1e-9) return std::to_string(m) + " irregular intervals";
  }
  return std::to_string(m) + "x" + format_double(w) + "d";
}

std::string with_suffix(const std::string& path, const std::string& tag) {
  const fs::path p(path);
  fs::path out = p.parent_path() / (p.stem().string() + "." + tag + p.extension().string());
  return out.string();
}

std::string sanitize_id(const std::string& id) {
  std::string out;
  for (char c : id)
    out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ? c : '_');
  return out.empty() ? "patient" : out;
}

void check_violations(const Dataset& d) {
  const auto violations = validate_dataset(d);
  if (violations.empty()) return;
  std::string msg = "dataset validation failed:";
  std::size_t shown = 0;
  for (const auto& v : violations) {
    msg += "\n  ";
    if (!v.record_id.empty()) msg += "record " + v.record_id + ": ";
    msg += v.rule + ": " + v.detail;
    if (++shown == 10) {
      msg += "\n  ... " + std::to_string(violations.size() - shown) + " more";
      break;
    }
  }
  throw Error(ErrorCode::CONFIG_ERROR, msg);
}

struct IngestArgs {
  std::string source, in_path, outcomes, config_path, out_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool split = false;
  bool quiet = false;
};

int cmd_ingest(const IngestArgs& a) {
  json cfg = json::object();
  if (!a.config_path.empty()) cfg = load_json_file(a.config_path);

  Dataset d;
  std::vector<std::size_t> split_sizes;

  if (a.source == "synthetic") {
    reject_unknown_keys(cfg,
                        {"n", "d_x", "d_c", "m", "atoms", "censoring", "family", "context",
                         "series_steps", "seed", "split_sizes"},
                        a.config_path.empty() ? "config" : a.config_path);
    SyntheticSpec spec;
    spec.n = cfg.value("n", spec.n);
    spec.d_x = cfg.value("d_x", spec.d_x);
    spec.d_c = cfg.value("d_c", spec.d_c);
    spec.m = cfg.value("m", spec.m);
    spec.atoms = cfg.value("atoms", spec.atoms);
    spec.censoring = cfg.value("censoring", spec.censoring);
    if (cfg.contains("family")) {
      const std::string fam = cfg.at("family").get<std::string>();
      if (fam == "crf")
        spec.family = SyntheticFamily::crf;
      else if (fam == "cen")
        spec.family = SyntheticFamily::cen;
      else
        throw Error(ErrorCode::CONFIG_ERROR, "synthetic family must be crf or cen, got " + fam);
    }
    if (cfg.contains("context")) {
      const std::string ck = cfg.at("context").get<std::string>();
      if (ck == "static")
        spec.context_kind = ContextKind::static_vector;
      else if (ck == "series")
        spec.context_kind = ContextKind::series;
      else
        throw Error(ErrorCode::CONFIG_ERROR, "context must be static or series, got " + ck);
    }
    spec.series_steps = cfg.value("series_steps", spec.series_steps);
    spec.seed = cfg.value("seed", spec.seed);
    if (a.seed_set) spec.seed = a.seed;
    d = gen_synthetic(spec).first;
    if (cfg.contains("split_sizes"))
      split_sizes = cfg.at("split_sizes").get<std::vector<std::size_t>>();
  } else if (a.source == "support2") {
    reject_unknown_keys(cfg,
                        {"attribute_columns", "context_columns", "categorical_columns",
                         "leakage_columns", "time_column", "event_column", "id_column",
                         "fill_value", "cap_days", "interval_days", "split_sizes",
                         "standardize", "seed"},
                        a.config_path.empty() ? "config" : a.config_path);
    IngestConfig cfg2;
    cfg2.attribute_columns =
        cfg.value("attribute_columns", cfg2.attribute_columns);
    cfg2.context_columns = cfg.value("context_columns", cfg2.context_columns);
    cfg2.categorical_columns = cfg.value("categorical_columns", cfg2.categorical_columns);
    cfg2.leakage_columns = cfg.value("leakage_columns", cfg2.leakage_columns);
    cfg2.time_column = cfg.value("time_column", cfg2.time_column);
    cfg2.event_column = cfg.value("event_column", cfg2.event_column);
    cfg2.id_column = cfg.value("id_column", cfg2.id_column);
    cfg2.fill_value = cfg.value("fill_value", cfg2.fill_value);
    cfg2.cap_days = cfg.value("cap_days", cfg2.cap_days);
    cfg2.interval_days = cfg.value("interval_days", cfg2.interval_days);
    cfg2.split_sizes = cfg.value("split_sizes", cfg2.split_sizes);
    cfg2.standardize = cfg.value("standardize", cfg2.standardize);
    cfg2.seed = cfg.value("seed", cfg2.seed);
    if (a.seed_set) cfg2.seed = a.seed;
    if (a.in_path.empty())
      throw Error(ErrorCode::CONFIG_ERROR, "--in is required for support2 ingest");
    d = ingest_support2(a.in_path, cfg2);
    split_sizes = cfg2.split_sizes;
  } else {  // physionet
    reject_unknown_keys(cfg,
                        {"window_hours", "bin_minutes", "cap_days", "interval_days",
                         "exclude_parameters", "split_sizes", "seed"},
                        a.config_path.empty() ? "config" : a.config_path);
    PhysionetConfig cfg2;
    cfg2.window_hours = cfg.value("window_hours", cfg2.window_hours);
    cfg2.bin_minutes = cfg.value("bin_minutes", cfg2.bin_minutes);
    cfg2.cap_days = cfg.value("cap_days", cfg2.cap_days);
    cfg2.interval_days = cfg.value("interval_days", cfg2.interval_days);
    cfg2.exclude_parameters = cfg.value("exclude_parameters", cfg2.exclude_parameters);
    if (a.in_path.empty() || a.outcomes.empty())
      throw Error(ErrorCode::CONFIG_ERROR,
                  "--in (records dir) and --outcomes are required for physionet ingest");
    d = ingest_physionet(a.in_path, a.outcomes, cfg2);
    if (cfg.contains("split_sizes"))
      split_sizes = cfg.at("split_sizes").get<std::vector<std::size_t>>();
  }

  check_violations(d);

  std::cout << "records: " << d.size() << "\n";
  std::cout << "censoring_rate: " << format_double(censoring_rate(d)) << "\n";
  std::cout << "grid: " << grid_label(d.grid) << "\n";
  std::cout << "attributes: " << d.d_x() << "\n";
  std::cout << "context: " << context_kind_name(d.context_kind) << " (" << d.d_c() << ")\n";

  if (a.split) {
    if (split_sizes.empty()) {
      // default 80/10/10; configured sizes are absolute record counts
      const std::size_t tenth = d.size() / 10;
      split_sizes = {d.size() - 2 * tenth, tenth, tenth};
    }
    const auto sizes = fit_split_sizes(d.size(), split_sizes);
    std::uint64_t seed = a.seed_set ? a.seed : 0;
    const auto parts = split_dataset(d, sizes, seed);
    const std::array<const char*, 3> tags{"train", "valid", "test"};
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const std::string tag =
          i < tags.size() ? tags[i] : ("part" + std::to_string(i + 1));
      const std::string path = with_suffix(a.out_path, tag);
      save_dataset(parts[i], path);
      std::cout << "wrote: " << path << " (" << parts[i].size() << " records)\n";
    }
  } else {
    save_dataset(d, a.out_path);
    std::cout << "wrote: " << a.out_path << "\n";
  }
  return 0;
}

struct TrainArgs {
  std::string data_path, out_path, config_path, family;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int epochs = -1;
  double valid_fraction = 0.1;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  ModelSpec spec;
  if (!a.config_path.empty()) {
    json cfg = load_json_file(a.config_path);
    reject_unknown_keys(cfg,
                        {"family", "hidden", "embed", "atoms", "pairwise", "l2", "lr",
                         "momentum", "batch", "epochs", "patience", "clip_norm", "seed"},
                        a.config_path);
    if (!cfg.contains("family") && !a.family.empty()) cfg["family"] = a.family;
    spec = spec_from_json(cfg);
  } else {
    if (a.family.empty())
      throw Error(ErrorCode::CONFIG_ERROR, "--family or --config with a family is required");
    spec.family = parse_family(a.family);
  }
  if (!a.family.empty()) spec.family = parse_family(a.family);
  if (a.seed_set) spec.seed = a.seed;
  if (a.epochs >= 0) spec.epochs = a.epochs;
  spec.validate();

  Dataset d = load_dataset(a.data_path);
  if (!(a.valid_fraction >= 0.0) || a.valid_fraction >= 1.0)
    throw Error(ErrorCode::CONFIG_ERROR, "--valid-fraction must be in [0,1)");

  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(spec.seed);
  rng.shuffle(order);
  const auto n_valid =
      static_cast<std::size_t>(a.valid_fraction * static_cast<double>(d.size()));
  std::vector<std::size_t> train_idx(order.begin(),
                                     order.end() - static_cast<std::ptrdiff_t>(n_valid));
  std::vector<std::size_t> valid_idx(order.end() - static_cast<std::ptrdiff_t>(n_valid),
                                     order.end());
  const Dataset train = subset(d, train_idx);
  const Dataset valid = subset(d, valid_idx);

  FitHooks hooks;
  if (!a.quiet)
    hooks.on_epoch = [](int epoch, double train_loss, double valid_loss) {
      std::cerr << "epoch " << epoch << " train " << format_double(train_loss);
      if (std::isfinite(valid_loss)) std::cerr << " valid " << format_double(valid_loss);
      std::cerr << "\n";
    };

  ModelArtifact art = fit(spec, train, valid, hooks);
  save_artifact(art, a.out_path);

  std::cout << "family: " << family_name(art.spec.family) << "\n";
  std::cout << "epochs_run: " << art.training.epochs_run << "\n";
  if (art.training.best_epoch > 0) std::cout << "best_epoch: " << art.training.best_epoch << "\n";
  if (std::isfinite(art.training.final_train_loss))
    std::cout << "final_train_loss: " << format_double(art.training.final_train_loss) << "\n";
  if (std::isfinite(art.training.final_valid_loss))
    std::cout << "final_valid_loss: " << format_double(art.training.final_valid_loss) << "\n";
  for (const auto& w : art.warnings) std::cout << "warning: " << w << "\n";
  std::cout << "wrote: " << a.out_path << "\n";
  return 0;
}

struct EvalArgs {
  std::string artifact_path, data_path, config_path, out_path;
  int kfold = 0;
  std::uint64_t seed = 0;
  bool quiet = false;
};

int cmd_eval(const EvalArgs& a) {
  Dataset d = load_dataset(a.data_path);
  std::vector<EvalReport> reports;

  if (a.kfold > 0) {
    if (a.config_path.empty())
      throw Error(ErrorCode::CONFIG_ERROR, "--kfold needs --config with a model spec");
    json cfg = load_json_file(a.config_path);
    reject_unknown_keys(cfg,
                        {"family", "hidden", "embed", "atoms", "pairwise", "l2", "lr",
                         "momentum", "batch", "epochs", "patience", "clip_norm", "seed"},
                        a.config_path);
    const ModelSpec spec = spec_from_json(cfg);
    FitHooks hooks;  // per-epoch logs are too noisy across k retrains
    const KfoldResult res = kfold_eval(spec, d, a.kfold, a.seed, hooks);
    reports = res.folds;
    reports.push_back(res.mean);
  } else {
    if (a.artifact_path.empty())
      throw Error(ErrorCode::CONFIG_ERROR, "--artifact is required without --kfold");
    const ModelArtifact art = load_artifact(a.artifact_path);
    reports.push_back(evaluate(art, d, quantile_horizons(d),
                               family_name(art.spec.family)));
  }

  if (a.out_path.empty()) {
    write_report_csv(std::cout, reports);
  } else {
    std::ofstream os(a.out_path, std::ios::binary);
    if (!os) throw Error(ErrorCode::IO_ERROR, "cannot open " + a.out_path + " for writing");
    write_report_csv(os, reports);
    std::cout << "wrote: " << a.out_path << "\n";
  }
  return 0;
}

struct ExplainArgs {
  std::string artifact_path, data_path, patient, out_dir;
  int top_k = 0;
  bool svg = false;
  bool quiet = false;
};

int cmd_explain(const ExplainArgs& a) {
  const ModelArtifact art = load_artifact(a.artifact_path);
  const Dataset d = load_dataset(a.data_path);

  const PatientRecord* rec = nullptr;
  for (const auto& r : d.records)
    if (r.id == a.patient) {
      rec = &r;
      break;
    }
  if (!rec)
    throw Error(ErrorCode::UNKNOWN_PATIENT, "no record with id '" + a.patient + "'");

  const Explanation ex = explain(art, *rec);
  const int m = ex.theta.m();
  const int dx = ex.theta.d_x();
  std::vector<std::string> names = art.attribute_names;

  ExplanationSet selected = ex.theta;
  if (a.top_k > 0) {
    if (a.top_k > dx)
      throw Error(ErrorCode::CONFIG_ERROR,
                  "--top-k " + std::to_string(a.top_k) + " exceeds attribute count " +
                      std::to_string(dx));
    std::vector<std::pair<double, int>> influence;
    for (int j = 0; j < dx; ++j) {
      double mean_abs = 0.0;
      for (int t = 1; t <= m; ++t) mean_abs += std::abs(ex.theta.at(t, j));
      influence.emplace_back(mean_abs / m, j);
    }
    std::stable_sort(influence.begin(), influence.end(),
                     [](const auto& x, const auto& y) { return x.first > y.first; });
    ExplanationSet top(m, a.top_k);
    std::vector<std::string> top_names;
    for (int r = 0; r < a.top_k; ++r) {
      const int j = influence[static_cast<std::size_t>(r)].second;
      for (int t = 1; t <= m; ++t) top.at(t, r) = ex.theta.at(t, j);
      top_names.push_back(names[static_cast<std::size_t>(j)]);
    }
    selected = std::move(top);
    names = std::move(top_names);
  }

  fs::create_directories(a.out_dir);
  const std::string base = (fs::path(a.out_dir) / sanitize_id(a.patient)).string();

  auto write_file = [](const std::string& path, auto&& fn) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(ErrorCode::IO_ERROR, "cannot open " + path + " for writing");
    fn(os);
    std::cout << "wrote: " << path << "\n";
  };

  write_file(base + "_explanation.csv",
             [&](std::ostream& os) { write_explanation_csv(selected, names, os); });
  const std::vector<double> curve = predict_survival(art, *rec);
  write_file(base + "_survival.csv",
             [&](std::ostream& os) { write_survival_csv(curve, art.grid, os); });
  if (a.svg) {
    write_file(base + "_explanation.svg",
               [&](std::ostream& os) { os << explanation_heatmap_svg(selected, names); });
    write_file(base + "_survival.svg",
               [&](std::ostream& os) { os << survival_curve_svg(curve, art.grid); });
  }
  if (!ex.global && !a.quiet)
    std::cerr << "explanation is specific to patient " << a.patient << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"survival model toolkit: ingest, train, evaluate, explain"};
  app.require_subcommand(1);

  IngestArgs ia;
  auto* ing = app.add_subcommand("ingest", "build a dataset file from a source");
  ing->add_option("--source", ia.source, "synthetic | support2 | physionet")
      ->required()
      ->check(CLI::IsMember({"synthetic", "support2", "physionet"}));
  ing->add_option("--in", ia.in_path, "input CSV (support2) or records dir (physionet)");
  ing->add_option("--outcomes", ia.outcomes, "outcomes CSV (physionet)");
  ing->add_option("--config", ia.config_path, "JSON config file");
  ing->add_option("--out", ia.out_path, "output dataset path")->required();
  auto* ing_seed = ing->add_option("--seed", ia.seed, "override config seed");
  ing->add_flag("--split", ia.split, "write train/valid/test files");
  ing->add_flag("--quiet", ia.quiet, "suppress logs");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "fit a model and save the artifact");
  tr->add_option("--data", ta.data_path, "dataset file")->required();
  tr->add_option("--out", ta.out_path, "output artifact path")->required();
  tr->add_option("--config", ta.config_path, "JSON model spec");
  tr->add_option("--family", ta.family,
                 "cox | aalen | crf | mlp-crf | lstm-crf | mlp-cen | lstm-cen");
  auto* tr_seed = tr->add_option("--seed", ta.seed, "override spec seed");
  tr->add_option("--epochs", ta.epochs, "override spec epochs");
  tr->add_option("--valid-fraction", ta.valid_fraction,
                 "fraction held out for early stopping (default 0.1)");
  tr->add_flag("--quiet", ta.quiet, "suppress per-epoch logs");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "report Acc@25/50/75 and RAE as CSV");
  ev->add_option("--artifact", ea.artifact_path, "trained artifact (single-split mode)");
  ev->add_option("--data", ea.data_path, "dataset file")->required();
  ev->add_option("--kfold", ea.kfold, "retrain k times; needs --config instead of --artifact");
  ev->add_option("--config", ea.config_path, "JSON model spec (kfold mode)");
  ev->add_option("--out", ea.out_path, "write CSV here instead of stdout");
  ev->add_option("--seed", ea.seed, "fold shuffle seed");
  ev->add_flag("--quiet", ea.quiet, "suppress logs");

  ExplainArgs xa;
  auto* xp = app.add_subcommand("explain", "export per-patient explanation and curve");
  xp->add_option("--artifact", xa.artifact_path, "trained artifact")->required();
  xp->add_option("--data", xa.data_path, "dataset file")->required();
  xp->add_option("--patient", xa.patient, "patient id")->required();
  xp->add_option("--out", xa.out_dir, "output directory")->required();
  xp->add_option("--top-k", xa.top_k, "keep only the k most influential attributes");
  xp->add_flag("--svg", xa.svg, "also write SVG renderings");
  xp->add_flag("--quiet", xa.quiet, "suppress logs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  ia.seed_set = ing_seed->count() > 0;
  ta.seed_set = tr_seed->count() > 0;

  const bool ingesting = ing->parsed();
  try {
    if (ingesting) return cmd_ingest(ia);
    if (tr->parsed()) return cmd_train(ta);
    if (ev->parsed()) return cmd_eval(ea);
    if (xp->parsed()) return cmd_explain(xa);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    int rc = exit_code_for(e.code());
    // during ingest a degenerate dataset is a validation failure
    if (ingesting && rc == 5) rc = 2;
    return rc;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
