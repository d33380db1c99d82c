#pragma once

// Raw data to validated Dataset: SUPPORT2-style CSV tables (static context),
// PhysioNet-style per-patient time series (series context), and a seeded
// synthetic generator that ships its own ground truth.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "censurv/common.hpp"
#include "censurv/core.hpp"

namespace censurv {

// --- CSV ------------------------------------------------------------------
// RFC-4180: quoted fields, doubled-quote escapes, CRLF line ends, embedded
// newlines inside quotes. Line numbers refer to the physical line a row
// starts on, for error messages.

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> row_lines;  // physical starting line per row
};

inline CsvTable parse_csv(std::istream& is, const std::string& origin) {
  CsvTable table;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool row_started = false;
  std::size_t line = 1;
  std::size_t row_start_line = 1;

  auto end_field = [&]() {
    row.push_back(std::move(field));
    field.clear();
  };
  auto end_row = [&]() {
    end_field();
    if (table.header.empty()) {
      table.header = std::move(row);
    } else {
      table.rows.push_back(std::move(row));
      table.row_lines.push_back(row_start_line);
    }
    row.clear();
    row_started = false;
  };

  char c;
  while (is.get(c)) {
    if (!row_started) {
      row_started = true;
      row_start_line = line;
    }
    if (in_quotes) {
      if (c == '"') {
        if (is.peek() == '"') {
          is.get(c);
          field.push_back('"');
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
    } else if (c == '"') {
      if (!field.empty())
        throw Error(ErrorCode::PARSE_ERROR,
                    origin + " line " + std::to_string(line) + ": quote inside unquoted field");
      in_quotes = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\r') {
      // swallow; the following \n ends the row
    } else if (c == '\n') {
      ++line;
      end_row();
    } else {
      field.push_back(c);
    }
  }
  if (in_quotes)
    throw Error(ErrorCode::PARSE_ERROR, origin + ": unterminated quoted field");
  if (row_started || !field.empty()) end_row();  // final row without trailing newline

  if (table.header.empty())
    throw Error(ErrorCode::PARSE_ERROR, origin + ": empty CSV");
  for (std::size_t r = 0; r < table.rows.size(); ++r)
    if (table.rows[r].size() != table.header.size())
      throw Error(ErrorCode::PARSE_ERROR,
                  origin + " line " + std::to_string(table.row_lines[r]) + ": expected " +
                      std::to_string(table.header.size()) + " fields, got " +
                      std::to_string(table.rows[r].size()));
  return table;
}

inline CsvTable parse_csv_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IO_ERROR, "cannot open " + path);
  return parse_csv(is, path);
}

inline std::optional<double> parse_number(const std::string& s) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  while (b < e && (*b == ' ' || *b == '\t')) ++b;
  while (e > b && (e[-1] == ' ' || e[-1] == '\t')) --e;
  if (b == e) return std::nullopt;
  double v = 0.0;
  auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc{} || res.ptr != e) return std::nullopt;
  return v;
}

// --- splits -----------------------------------------------------------------

inline Dataset subset(const Dataset& d, const std::vector<std::size_t>& idx) {
  Dataset out;
  out.grid = d.grid;
  out.attribute_names = d.attribute_names;
  out.context_names = d.context_names;
  out.context_kind = d.context_kind;
  out.records.reserve(idx.size());
  for (std::size_t i : idx) out.records.push_back(d.records[i]);
  return out;
}

// Seeded shuffle, then contiguous slices of the requested sizes. Records
// beyond the total requested are dropped.
inline std::vector<Dataset> split_dataset(const Dataset& d,
                                          const std::vector<std::size_t>& sizes,
                                          std::uint64_t seed) {
  std::size_t total = 0;
  for (std::size_t s : sizes) total += s;
  if (total > d.records.size())
    throw Error(ErrorCode::TOO_FEW_RECORDS,
                "split needs " + std::to_string(total) + " records, dataset has " +
                    std::to_string(d.records.size()));
  std::vector<std::size_t> order(d.records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<Dataset> parts;
  std::size_t at = 0;
  for (std::size_t s : sizes) {
    parts.push_back(subset(d, {order.begin() + static_cast<std::ptrdiff_t>(at),
                               order.begin() + static_cast<std::ptrdiff_t>(at + s)}));
    at += s;
  }
  return parts;
}

// Scales requested sizes down proportionally when the dataset is smaller
// than their sum (shortfall taken from the first slice's share last).
inline std::vector<std::size_t> fit_split_sizes(std::size_t n,
                                                const std::vector<std::size_t>& sizes) {
  std::size_t total = 0;
  for (std::size_t s : sizes) total += s;
  if (total == 0) throw Error(ErrorCode::CONFIG_ERROR, "split sizes sum to zero");
  if (total <= n) return sizes;
  std::vector<std::size_t> scaled(sizes.size());
  std::size_t assigned = 0;
  for (std::size_t i = 1; i < sizes.size(); ++i) {
    scaled[i] = sizes[i] * n / total;
    assigned += scaled[i];
  }
  scaled[0] = n - assigned;
  return scaled;
}

// --- SUPPORT2-style table ingest ---------------------------------------------

struct IngestConfig {
  // empty attribute list = every non-label, non-leakage column
  std::vector<std::string> attribute_columns;
  // empty context list = same columns as attributes
  std::vector<std::string> context_columns;
  // empty = auto-detect: any column with a non-numeric non-empty value
  std::vector<std::string> categorical_columns;
  std::vector<std::string> leakage_columns = {"death", "d.time", "hospdead"};
  std::string time_column = "d.time";
  std::string event_column = "death";
  std::string id_column;  // empty: row index becomes the id
  double fill_value = -1.0;
  double cap_days = 1092.0;  // 156 intervals x 7 days
  double interval_days = 7.0;
  std::vector<std::size_t> split_sizes = {7105, 1000, 1000};
  bool standardize = false;  // z-score numerics; default: raw scales
  std::uint64_t seed = 0;

  void validate() const {
    if (!(cap_days > 0.0) || !(interval_days > 0.0))
      throw Error(ErrorCode::CONFIG_ERROR, "cap_days and interval_days must be positive");
    const double ratio = cap_days / interval_days;
    if (std::abs(ratio - std::round(ratio)) > 1e-9)
      throw Error(ErrorCode::CONFIG_ERROR, "cap_days must divide into whole intervals");
    if (!std::isfinite(fill_value))
      throw Error(ErrorCode::CONFIG_ERROR, "fill value must be finite");
  }

  TimeGrid grid() const {
    return TimeGrid::uniform(static_cast<int>(std::round(cap_days / interval_days)),
                             interval_days);
  }
};

namespace detail {

struct ColumnPlan {
  std::string name;
  bool categorical = false;
  std::vector<std::string> levels;   // sorted, for one-hot
  double mean = 0.0, stddev = 1.0;   // standardization stats (numeric only)
};

inline std::size_t column_index(const CsvTable& t, const std::string& name,
                                const std::string& what) {
  auto it = std::find(t.header.begin(), t.header.end(), name);
  if (it == t.header.end())
    throw Error(what == "label" ? ErrorCode::MISSING_LABEL_COLUMNS : ErrorCode::UNKNOWN_COLUMN,
                what + " column '" + name + "' not found in CSV header");
  return static_cast<std::size_t>(it - t.header.begin());
}

}  // namespace detail

inline Dataset ingest_support2(const std::string& csv_path, const IngestConfig& cfg) {
  cfg.validate();
  CsvTable table = parse_csv_file(csv_path);

  const std::size_t time_col = detail::column_index(table, cfg.time_column, "label");
  const std::size_t event_col = detail::column_index(table, cfg.event_column, "label");
  std::optional<std::size_t> id_col;
  if (!cfg.id_column.empty())
    id_col = detail::column_index(table, cfg.id_column, "id");

  std::set<std::string> excluded(cfg.leakage_columns.begin(), cfg.leakage_columns.end());
  excluded.insert(cfg.time_column);
  excluded.insert(cfg.event_column);
  if (id_col) excluded.insert(cfg.id_column);

  std::vector<std::string> attr_cols = cfg.attribute_columns;
  if (attr_cols.empty()) {
    for (const auto& h : table.header)
      if (!excluded.count(h)) attr_cols.push_back(h);
  } else {
    for (const auto& c : attr_cols) detail::column_index(table, c, "attribute");
  }
  if (attr_cols.empty())
    throw Error(ErrorCode::CONFIG_ERROR, "no attribute columns left after exclusions");
  std::vector<std::string> ctx_cols =
      cfg.context_columns.empty() ? attr_cols : cfg.context_columns;
  for (const auto& c : ctx_cols) detail::column_index(table, c, "context");

  std::set<std::string> categorical(cfg.categorical_columns.begin(),
                                    cfg.categorical_columns.end());
  for (const auto& c : cfg.categorical_columns) detail::column_index(table, c, "categorical");

  // one plan per distinct source column
  std::vector<std::string> planned_cols = attr_cols;
  for (const auto& c : ctx_cols)
    if (std::find(planned_cols.begin(), planned_cols.end(), c) == planned_cols.end())
      planned_cols.push_back(c);

  std::map<std::string, detail::ColumnPlan> plans;
  for (const auto& col : planned_cols) {
    detail::ColumnPlan plan;
    plan.name = col;
    const std::size_t ci = detail::column_index(table, col, "attribute");
    bool forced = categorical.count(col) != 0;
    bool numeric = true;
    std::set<std::string> levels;
    for (const auto& row : table.rows) {
      const std::string& cell = row[ci];
      if (cell.empty()) continue;
      if (!parse_number(cell)) numeric = false;
      levels.insert(cell);
    }
    plan.categorical = forced || !numeric;
    if (plan.categorical) {
      plan.levels.assign(levels.begin(), levels.end());
      if (plan.levels.empty())
        throw Error(ErrorCode::CONFIG_ERROR, "categorical column '" + col + "' is entirely empty");
    } else if (cfg.standardize) {
      double sum = 0.0, sum2 = 0.0;
      std::size_t n = 0;
      for (const auto& row : table.rows) {
        auto v = parse_number(row[ci]);
        if (!v) continue;
        sum += *v;
        sum2 += *v * *v;
        ++n;
      }
      if (n > 0) {
        plan.mean = sum / static_cast<double>(n);
        const double var = sum2 / static_cast<double>(n) - plan.mean * plan.mean;
        plan.stddev = var > 1e-12 ? std::sqrt(var) : 1.0;
      }
    }
    plans[col] = std::move(plan);
  }

  auto encoded_names = [&](const std::vector<std::string>& cols) {
    std::vector<std::string> names;
    for (const auto& col : cols) {
      const auto& plan = plans.at(col);
      if (plan.categorical)
        for (const auto& lv : plan.levels) names.push_back(col + "_" + lv);
      else
        names.push_back(col);
    }
    return names;
  };
  auto encode_row = [&](const std::vector<std::string>& row,
                        const std::vector<std::string>& cols, std::vector<double>& out) {
    for (const auto& col : cols) {
      const auto& plan = plans.at(col);
      const std::string& cell = row[detail::column_index(table, col, "attribute")];
      if (plan.categorical) {
        for (const auto& lv : plan.levels) out.push_back(cell == lv ? 1.0 : 0.0);
      } else {
        auto v = parse_number(cell);
        if (!v && !cell.empty())
          throw Error(ErrorCode::PARSE_ERROR,
                      "non-numeric value '" + cell + "' in numeric column " + col);
        double x = v ? *v : cfg.fill_value;
        if (cfg.standardize && v) x = (x - plan.mean) / plan.stddev;
        out.push_back(x);
      }
    }
  };

  Dataset d;
  d.grid = cfg.grid();
  d.context_kind = ContextKind::static_vector;
  d.attribute_names.push_back("bias");
  for (auto& n : encoded_names(attr_cols)) d.attribute_names.push_back(std::move(n));
  d.context_names = encoded_names(ctx_cols);

  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    PatientRecord rec;
    rec.id = id_col ? row[*id_col] : std::to_string(r + 1);

    auto t = parse_number(row[time_col]);
    auto e = parse_number(row[event_col]);
    if (!t || !e)
      throw Error(ErrorCode::PARSE_ERROR,
                  csv_path + " line " + std::to_string(table.row_lines[r]) +
                      ": missing or non-numeric label value");
    rec.label.observed_time = *t;
    rec.label.event_observed = (*e != 0.0);

    rec.attributes.push_back(1.0);
    encode_row(row, attr_cols, rec.attributes);
    StaticContext ctx;
    encode_row(row, ctx_cols, ctx.values);
    rec.context = std::move(ctx);
    d.records.push_back(std::move(rec));
  }
  return d;
}

// --- PhysioNet-style time-series ingest ---------------------------------------

struct PhysionetConfig {
  double window_hours = 48.0;
  double bin_minutes = 30.0;
  double cap_days = 60.0;
  double interval_days = 1.0;
  std::vector<std::string> exclude_parameters = {"RecordID"};

  int bins() const {
    return static_cast<int>(std::round(window_hours * 60.0 / bin_minutes));
  }
  TimeGrid grid() const {
    return TimeGrid::uniform(static_cast<int>(std::round(cap_days / interval_days)),
                             interval_days);
  }
};

namespace detail {

struct Measurement {
  double minutes;
  std::string parameter;
  double value;
};

inline double parse_clock_minutes(const std::string& s, const std::string& where) {
  const auto colon = s.find(':');
  if (colon == std::string::npos)
    throw Error(ErrorCode::PARSE_ERROR, where + ": bad time '" + s + "'");
  auto hh = parse_number(s.substr(0, colon));
  auto mm = parse_number(s.substr(colon + 1));
  if (!hh || !mm)
    throw Error(ErrorCode::PARSE_ERROR, where + ": bad time '" + s + "'");
  return *hh * 60.0 + *mm;
}

}  // namespace detail

inline Dataset ingest_physionet(const std::string& records_dir,
                                const std::string& outcomes_csv,
                                const PhysionetConfig& cfg = {}) {
  namespace fs = std::filesystem;

  CsvTable outcomes = parse_csv_file(outcomes_csv);
  const std::size_t id_col = detail::column_index(outcomes, "RecordID", "label");
  const std::size_t surv_col = detail::column_index(outcomes, "Survival", "label");
  const std::size_t los_col = detail::column_index(outcomes, "Length_of_stay", "label");

  struct OutcomeRow {
    double survival;
    double los;
  };
  std::map<std::string, OutcomeRow> outcome_by_id;
  for (const auto& row : outcomes.rows) {
    auto sv = parse_number(row[surv_col]);
    auto los = parse_number(row[los_col]);
    if (!sv || !los)
      throw Error(ErrorCode::PARSE_ERROR, outcomes_csv + ": non-numeric outcome for record " +
                                              row[id_col]);
    outcome_by_id[row[id_col]] = OutcomeRow{*sv, *los};
  }

  std::vector<fs::path> files;
  if (!fs::is_directory(records_dir))
    throw Error(ErrorCode::IO_ERROR, records_dir + " is not a directory");
  for (const auto& entry : fs::directory_iterator(records_dir))
    if (entry.is_regular_file()) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty())
    throw Error(ErrorCode::EMPTY_DATASET, "no record files in " + records_dir);

  std::set<std::string> excluded(cfg.exclude_parameters.begin(),
                                 cfg.exclude_parameters.end());

  // first pass: collect measurements and the variable universe
  std::vector<std::vector<detail::Measurement>> all_meas(files.size());
  std::set<std::string> var_set;
  for (std::size_t f = 0; f < files.size(); ++f) {
    const std::string path = files[f].string();
    CsvTable t = parse_csv_file(path);
    const std::size_t tc = detail::column_index(t, "Time", "label");
    const std::size_t pc = detail::column_index(t, "Parameter", "label");
    const std::size_t vc = detail::column_index(t, "Value", "label");
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const auto& row = t.rows[r];
      if (excluded.count(row[pc])) continue;
      auto v = parse_number(row[vc]);
      if (!v) continue;  // non-numeric values carry no signal for binning
      all_meas[f].push_back(detail::Measurement{
          detail::parse_clock_minutes(row[tc], path + " line " + std::to_string(t.row_lines[r])),
          row[pc], *v});
      var_set.insert(row[pc]);
    }
    if (all_meas[f].empty())
      throw Error(ErrorCode::EMPTY_RECORD,
                  files[f].stem().string() + " has zero usable measurements");
  }

  std::vector<std::string> vars(var_set.begin(), var_set.end());
  std::map<std::string, int> var_index;
  for (std::size_t j = 0; j < vars.size(); ++j) var_index[vars[j]] = static_cast<int>(j);
  const int n_vars = static_cast<int>(vars.size());
  const int n_bins = cfg.bins();
  const double window_minutes = cfg.window_hours * 60.0;

  Dataset d;
  d.grid = cfg.grid();
  d.context_kind = ContextKind::series;
  d.context_names = vars;
  d.attribute_names.push_back("bias");
  for (const auto& v : vars) d.attribute_names.push_back(v);

  for (std::size_t f = 0; f < files.size(); ++f) {
    const std::string rid = files[f].stem().string();
    auto oit = outcome_by_id.find(rid);
    if (oit == outcome_by_id.end())
      throw Error(ErrorCode::MISSING_OUTCOME, "record " + rid + " absent from outcomes table");

    SeriesContext ctx;
    ctx.steps = n_bins;
    ctx.vars = n_vars;
    ctx.values.assign(static_cast<std::size_t>(n_bins) * n_vars, 0.0);
    std::vector<int> counts(static_cast<std::size_t>(n_bins) * n_vars, 0);

    // attributes: last available raw measurement per variable, 0 if never seen
    std::vector<double> last_value(static_cast<std::size_t>(n_vars), 0.0);
    std::vector<double> last_time(static_cast<std::size_t>(n_vars), -1.0);

    for (const auto& ms : all_meas[f]) {
      const int j = var_index.at(ms.parameter);
      if (ms.minutes >= 0.0 && ms.minutes < window_minutes) {
        const int b = static_cast<int>(ms.minutes / cfg.bin_minutes);
        const std::size_t cell = static_cast<std::size_t>(b) * n_vars + j;
        ctx.values[cell] += ms.value;
        counts[cell] += 1;
      }
      if (ms.minutes >= last_time[static_cast<std::size_t>(j)]) {
        last_time[static_cast<std::size_t>(j)] = ms.minutes;
        last_value[static_cast<std::size_t>(j)] = ms.value;
      }
    }
    for (std::size_t cell = 0; cell < ctx.values.size(); ++cell)
      if (counts[cell] > 0) ctx.values[cell] /= counts[cell];

    PatientRecord rec;
    rec.id = rid;
    rec.attributes.push_back(1.0);
    rec.attributes.insert(rec.attributes.end(), last_value.begin(), last_value.end());
    rec.context = std::move(ctx);
    if (oit->second.survival >= 0.0) {
      rec.label.observed_time = oit->second.survival;
      rec.label.event_observed = true;
    } else {
      rec.label.observed_time = oit->second.los;
      rec.label.event_observed = false;
    }
    d.records.push_back(std::move(rec));
  }
  return d;
}

// --- synthetic generator ------------------------------------------------------

// which generator produced the data: a fixed coefficient matrix shared by all
// records, or context-dependent per-record coefficients
enum class SyntheticFamily { crf, cen };

struct SyntheticSpec {
  int n = 1000;
  int d_x = 10;  // attribute count including the bias column
  int d_c = 5;
  int m = 20;
  int atoms = 4;
  double censoring = 0.3;  // target censoring rate, hit within sampling error
  SyntheticFamily family = SyntheticFamily::crf;
  ContextKind context_kind = ContextKind::static_vector;
  int series_steps = 8;
  std::uint64_t seed = 0;

  void validate() const {
    if (n < 1 || d_x < 1 || d_c < 1 || m < 1 || atoms < 1 || series_steps < 1)
      throw Error(ErrorCode::CONFIG_ERROR, "synthetic sizes must be positive");
    if (!(censoring >= 0.0) || censoring >= 1.0)
      throw Error(ErrorCode::CONFIG_ERROR, "censoring rate must be in [0,1)");
  }
};

struct GroundTruth {
  // crf family: the generating coefficient matrix, [m, d_x] row-major
  std::vector<double> theta;
  // cen family: per-record generating coefficients (constant across
  // intervals), each of width d_x
  std::vector<std::vector<double>> record_theta;
  // the sampled outcome index per record, before any censoring is applied
  std::vector<int> outcome_k;
};

inline std::pair<Dataset, GroundTruth> gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const int m = spec.m;
  const int dx = spec.d_x;
  const int dc = spec.d_c;

  Dataset d;
  d.grid = TimeGrid::uniform(m, 7.0);
  d.context_kind = spec.context_kind;
  d.attribute_names.push_back("bias");
  for (int j = 1; j < dx; ++j) d.attribute_names.push_back("x" + std::to_string(j));
  for (int j = 0; j < dc; ++j) d.context_names.push_back("c" + std::to_string(j + 1));

  GroundTruth gt;
  const bool cen = spec.family == SyntheticFamily::cen;

  // generator parameters; draw order is part of the determinism contract
  std::vector<double> theta;
  std::vector<double> dict, enc_w, enc_b, att_w;
  const int gh = 8;  // shallow encoder width
  if (!cen) {
    theta.resize(static_cast<std::size_t>(m) * dx);
    // entry scale keeps per-step logits around sd 1.5: strong enough that the
    // generating coefficients are statistically recoverable at n in the
    // thousands, weak enough that outcomes stay stochastic
    const double scale = 1.5 / std::sqrt(static_cast<double>(dx));
    for (auto& v : theta) v = rng.normal() * scale;
    gt.theta = theta;
  } else {
    dict.resize(static_cast<std::size_t>(spec.atoms) * dx);
    for (auto& v : dict) v = rng.normal(0.0, 1.0);
    enc_w.resize(static_cast<std::size_t>(gh) * dc);
    for (auto& v : enc_w) v = rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(dc)));
    enc_b.assign(static_cast<std::size_t>(gh), 0.0);
    att_w.resize(static_cast<std::size_t>(gh) * spec.atoms);
    for (auto& v : att_w) v = rng.normal(0.0, 1.0);
  }

  const double width = d.grid.boundaries[1] - d.grid.boundaries[0];
  std::vector<int> censor_interval(static_cast<std::size_t>(spec.n));
  std::vector<double> censor_u(static_cast<std::size_t>(spec.n));
  std::vector<char> censorable(static_cast<std::size_t>(spec.n), 0);

  for (int i = 0; i < spec.n; ++i) {
    PatientRecord rec;
    rec.id = "s" + std::to_string(i + 1);
    rec.attributes.resize(static_cast<std::size_t>(dx));
    rec.attributes[0] = 1.0;
    for (int j = 1; j < dx; ++j) rec.attributes[static_cast<std::size_t>(j)] = rng.normal();

    std::vector<double> ctx_mean(static_cast<std::size_t>(dc), 0.0);
    if (spec.context_kind == ContextKind::static_vector) {
      StaticContext sc;
      sc.values.resize(static_cast<std::size_t>(dc));
      for (auto& v : sc.values) v = rng.normal();
      ctx_mean = sc.values;
      rec.context = std::move(sc);
    } else {
      SeriesContext se;
      se.steps = spec.series_steps;
      se.vars = dc;
      se.values.resize(static_cast<std::size_t>(se.steps) * dc);
      for (auto& v : se.values) v = rng.normal();
      for (int t = 0; t < se.steps; ++t)
        for (int j = 0; j < dc; ++j)
          ctx_mean[static_cast<std::size_t>(j)] += se.at(t, j) / se.steps;
      rec.context = std::move(se);
    }

    // per-record coefficients
    std::vector<double> rec_theta_row;  // cen: one row reused for all intervals
    const double* theta_rows = theta.data();
    if (cen) {
      std::vector<double> h(static_cast<std::size_t>(gh));
      for (int q = 0; q < gh; ++q) {
        double s = enc_b[static_cast<std::size_t>(q)];
        for (int j = 0; j < dc; ++j)
          s += enc_w[static_cast<std::size_t>(q) * dc + j] * ctx_mean[static_cast<std::size_t>(j)];
        h[static_cast<std::size_t>(q)] = std::tanh(s);
      }
      std::vector<double> scores(static_cast<std::size_t>(spec.atoms), 0.0);
      for (int q = 0; q < gh; ++q)
        for (int k = 0; k < spec.atoms; ++k)
          scores[static_cast<std::size_t>(k)] +=
              h[static_cast<std::size_t>(q)] * att_w[static_cast<std::size_t>(q) * spec.atoms + k];
      const double lz = logsumexp(scores);
      rec_theta_row.assign(static_cast<std::size_t>(dx), 0.0);
      for (int k = 0; k < spec.atoms; ++k) {
        const double a = std::exp(scores[static_cast<std::size_t>(k)] - lz);
        for (int j = 0; j < dx; ++j)
          rec_theta_row[static_cast<std::size_t>(j)] += a * dict[static_cast<std::size_t>(k) * dx + j];
      }
      gt.record_theta.push_back(rec_theta_row);
    }

    // exact outcome distribution for this record
    std::vector<double> outcome_log_probs;
    {
      std::vector<double> dots(static_cast<std::size_t>(m) + 1, 0.0);
      for (int t = 1; t <= m; ++t) {
        double s = 0.0;
        for (int j = 0; j < dx; ++j) {
          const double coef = cen ? rec_theta_row[static_cast<std::size_t>(j)]
                                  : theta_rows[static_cast<std::size_t>(t - 1) * dx + j];
          s += coef * rec.attributes[static_cast<std::size_t>(j)];
        }
        dots[static_cast<std::size_t>(t)] = s;
      }
      std::vector<double> scores(static_cast<std::size_t>(m) + 1, 0.0);
      double suffix = 0.0;
      for (int k = m - 1; k >= 0; --k) {
        suffix += dots[static_cast<std::size_t>(k) + 1];
        scores[static_cast<std::size_t>(k)] = suffix;
      }
      const double lz = logsumexp(scores);
      outcome_log_probs.resize(scores.size());
      for (std::size_t q = 0; q < scores.size(); ++q) outcome_log_probs[q] = scores[q] - lz;
    }

    // inverse-CDF sample of the outcome index
    int k = m;
    {
      const double u = rng.uniform();
      double cum = 0.0;
      for (int q = 0; q <= m; ++q) {
        cum += std::exp(outcome_log_probs[static_cast<std::size_t>(q)]);
        if (u < cum) {
          k = q;
          break;
        }
      }
    }
    gt.outcome_k.push_back(k);

    // a record can only be censored strictly before its death interval, so
    // k = 0 deaths are never censorable; k = m records are non-events no
    // matter what and sit outside the thinning pool
    censor_interval[static_cast<std::size_t>(i)] =
        k >= 1 ? 1 + static_cast<int>(rng.integer(static_cast<std::uint64_t>(k))) : 0;
    censor_u[static_cast<std::size_t>(i)] = rng.uniform();
    censorable[static_cast<std::size_t>(i)] = (k >= 1 && k < m) ? 1 : 0;

    // label provisionally as the uncensored outcome; pass 2 may overwrite
    if (k < m) {
      rec.label.observed_time = d.grid.interval_midpoint(k + 1);
      rec.label.event_observed = true;
    } else {
      rec.label.observed_time = d.grid.cap() + width / 2.0;  // survived the grid
      rec.label.event_observed = false;
    }
    d.records.push_back(std::move(rec));
  }

  // thin the censorable pool so that total non-events (thinned plus
  // survived-the-grid) land on the target rate
  if (spec.censoring > 0.0) {
    std::size_t pool = 0, survived = 0;
    for (char c : censorable) pool += static_cast<std::size_t>(c);
    for (int k : gt.outcome_k) survived += (k == m) ? 1u : 0u;
    const double chat = static_cast<double>(pool) / static_cast<double>(spec.n);
    const double c0 = static_cast<double>(survived) / static_cast<double>(spec.n);
    const double want = std::max(0.0, spec.censoring - c0);
    const double q = (chat > 0.0) ? std::min(1.0, want / chat) : 0.0;
    for (int i = 0; i < spec.n; ++i) {
      if (!censorable[static_cast<std::size_t>(i)]) continue;
      if (censor_u[static_cast<std::size_t>(i)] < q) {
        const int L = censor_interval[static_cast<std::size_t>(i)];
        d.records[static_cast<std::size_t>(i)].label.observed_time =
            d.grid.interval_midpoint(L);
        d.records[static_cast<std::size_t>(i)].label.event_observed = false;
      }
    }
  }
  return {std::move(d), std::move(gt)};
}

}  // namespace censurv
