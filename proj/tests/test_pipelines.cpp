#include "catch_amalgamated.hpp"
#include "censurv/censurv.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace censurv;
namespace fs = std::filesystem;

namespace {

// unique scratch directory, removed on scope exit
struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("censurv_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::string file(const std::string& name, const std::string& content) const {
    const fs::path p = path / name;
    fs::create_directories(p.parent_path());
    std::ofstream os(p, std::ios::binary);
    os << content;
    return p.string();
  }
};

std::string dataset_bytes(const Dataset& d) {
  std::ostringstream os;
  save_dataset(d, os);
  return os.str();
}

}  // namespace

TEST_CASE("csv parser handles quoting, escapes, and embedded newlines") {
  std::istringstream is("name,note\r\np1,\"says \"\"hi\"\", twice\"\np2,\"line one\nline two\"\np3,plain");
  const CsvTable t = parse_csv(is, "<test>");
  REQUIRE(t.header == std::vector<std::string>{"name", "note"});
  REQUIRE(t.rows.size() == 3);
  CHECK(t.rows[0][1] == "says \"hi\", twice");
  CHECK(t.rows[1][1] == "line one\nline two");
  CHECK(t.rows[2][1] == "plain");
  // physical line numbers: the quoted newline consumes a line
  CHECK(t.row_lines == std::vector<std::size_t>{2, 3, 5});
}

TEST_CASE("csv parser reports structural problems with line numbers") {
  std::istringstream short_row("a,b,c\n1,2,3\n4,5\n");
  try {
    parse_csv(short_row, "<test>");
    FAIL("expected parse error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::PARSE_ERROR);
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }

  std::istringstream unterminated("a,b\n1,\"open\n");
  CHECK_THROWS_AS(parse_csv(unterminated, "<test>"), Error);

  std::istringstream empty("");
  CHECK_THROWS_AS(parse_csv(empty, "<test>"), Error);
}

TEST_CASE("number parsing trims and rejects") {
  CHECK(parse_number(" 1.5 ") == 1.5);
  CHECK(parse_number("-2e3") == -2000.0);
  CHECK_FALSE(parse_number("").has_value());
  CHECK_FALSE(parse_number("  ").has_value());
  CHECK_FALSE(parse_number("12abc").has_value());
  CHECK_FALSE(parse_number("male").has_value());
}

TEST_CASE("synthetic generation is deterministic") {
  SyntheticSpec s;
  s.n = 50;
  s.m = 6;
  s.d_x = 4;
  s.d_c = 3;
  s.seed = 11;
  const auto [da, ga] = gen_synthetic(s);
  const auto [db, gb] = gen_synthetic(s);
  CHECK(dataset_bytes(da) == dataset_bytes(db));
  CHECK(ga.theta == gb.theta);
  CHECK(ga.outcome_k == gb.outcome_k);

  s.seed = 12;
  const auto [dc, gc] = gen_synthetic(s);
  CHECK(dataset_bytes(da) != dataset_bytes(dc));
}

TEST_CASE("zero censoring keeps every death observable") {
  SyntheticSpec s;
  s.n = 400;
  s.m = 6;
  s.d_x = 4;
  s.d_c = 3;
  s.censoring = 0.0;
  s.seed = 7;
  const auto [d, gt] = gen_synthetic(s);
  REQUIRE(gt.outcome_k.size() == d.records.size());
  for (std::size_t i = 0; i < d.records.size(); ++i) {
    const auto& r = d.records[i];
    const int k = gt.outcome_k[i];
    if (k < s.m) {
      CHECK(r.label.event_observed);
      CHECK(to_outcome(r.label, d.grid) == Outcome::event(k));
    } else {
      // survived the whole grid: representable only as end-of-grid censoring
      CHECK_FALSE(r.label.event_observed);
      CHECK(to_outcome(r.label, d.grid) == Outcome::censored(s.m - 1));
    }
  }
}

TEST_CASE("censoring labels stay consistent with the sampled outcome") {
  SyntheticSpec s;
  s.n = 600;
  s.m = 8;
  s.d_x = 4;
  s.d_c = 3;
  s.censoring = 0.35;
  s.seed = 13;
  const auto [d, gt] = gen_synthetic(s);
  int censored = 0;
  for (std::size_t i = 0; i < d.records.size(); ++i) {
    const auto& r = d.records[i];
    const Outcome o = to_outcome(r.label, d.grid);
    if (r.label.event_observed) {
      CHECK(o == Outcome::event(gt.outcome_k[i]));
    } else {
      ++censored;
      REQUIRE_FALSE(o.is_event());
      // the censoring point never reveals intervals past the true outcome
      if (gt.outcome_k[i] < s.m) CHECK(o.censored_at() < gt.outcome_k[i]);
    }
  }
  CHECK(censored > 0);
}

TEST_CASE("censoring rate lands near its target") {
  for (double target : {0.15, 0.3, 0.5}) {
    SyntheticSpec s;
    s.n = 4000;
    s.m = 10;
    s.d_x = 5;
    s.d_c = 3;
    s.censoring = target;
    s.seed = 21;
    const auto [d, gt] = gen_synthetic(s);
    CHECK(std::abs(censoring_rate(d) - target) < 0.05);
  }
}

TEST_CASE("sampled outcomes follow the generating distribution") {
  SyntheticSpec s;
  s.n = 20000;
  s.m = 5;
  s.d_x = 3;
  s.d_c = 2;
  s.censoring = 0.0;
  s.seed = 123;
  const auto [d, gt] = gen_synthetic(s);

  ExplanationSet theta(s.m, s.d_x);
  for (int t = 1; t <= s.m; ++t)
    for (int j = 0; j < s.d_x; ++j)
      theta.at(t, j) = gt.theta[static_cast<std::size_t>(t - 1) * s.d_x + j];

  std::vector<double> expected(static_cast<std::size_t>(s.m) + 1, 0.0);
  for (const auto& r : d.records) {
    const auto dist = outcome_distribution(outcome_scores(r.attributes, theta));
    for (int k = 0; k <= s.m; ++k) expected[static_cast<std::size_t>(k)] += dist.prob(k);
  }
  for (auto& e : expected) e /= static_cast<double>(s.n);

  std::vector<double> empirical(static_cast<std::size_t>(s.m) + 1, 0.0);
  for (int k : gt.outcome_k) empirical[static_cast<std::size_t>(k)] += 1.0;
  for (auto& e : empirical) e /= static_cast<double>(s.n);

  for (int k = 0; k <= s.m; ++k) {
    const double p = expected[static_cast<std::size_t>(k)];
    const double sigma = std::sqrt(std::max(p * (1.0 - p), 1e-12) / s.n);
    CHECK(std::abs(empirical[static_cast<std::size_t>(k)] - p) < 4.0 * sigma + 1e-9);
  }
}

TEST_CASE("contextual generator produces per-record coefficients") {
  SyntheticSpec s;
  s.n = 80;
  s.m = 6;
  s.d_x = 4;
  s.d_c = 3;
  s.family = SyntheticFamily::cen;
  s.seed = 31;
  const auto [d, gt] = gen_synthetic(s);
  REQUIRE(gt.record_theta.size() == d.records.size());
  for (const auto& row : gt.record_theta)
    REQUIRE(row.size() == static_cast<std::size_t>(s.d_x));
  // contexts must differ from record to record for the coefficients to vary
  const auto& c0 = std::get<StaticContext>(d.records[0].context).values;
  const auto& c1 = std::get<StaticContext>(d.records[1].context).values;
  CHECK(c0 != c1);
  CHECK(gt.record_theta[0] != gt.record_theta[1]);
}

TEST_CASE("series contexts carry the configured shape") {
  SyntheticSpec s;
  s.n = 20;
  s.m = 5;
  s.d_x = 4;
  s.d_c = 3;
  s.family = SyntheticFamily::cen;
  s.context_kind = ContextKind::series;
  s.series_steps = 7;
  s.seed = 41;
  const auto [d, gt] = gen_synthetic(s);
  CHECK(d.context_kind == ContextKind::series);
  for (const auto& r : d.records) {
    const auto& ctx = std::get<SeriesContext>(r.context);
    CHECK(ctx.steps == 7);
    CHECK(ctx.vars == 3);
    REQUIRE(ctx.values.size() == 21);
  }
  CHECK(validate_dataset(d).empty());
}

TEST_CASE("generated datasets pass validation") {
  SyntheticSpec s;
  s.n = 100;
  s.seed = 51;
  const auto [d, gt] = gen_synthetic(s);
  CHECK(validate_dataset(d).empty());
  CHECK(d.attribute_names[0] == "bias");
  for (const auto& r : d.records) CHECK(r.attributes[0] == 1.0);
}

TEST_CASE("splits are disjoint, exhaustive, and deterministic") {
  SyntheticSpec s;
  s.n = 40;
  s.seed = 61;
  const Dataset d = gen_synthetic(s).first;

  const auto parts = split_dataset(d, {30, 5, 5}, 17);
  REQUIRE(parts.size() == 3);
  CHECK(parts[0].size() == 30);
  CHECK(parts[1].size() == 5);
  CHECK(parts[2].size() == 5);

  std::set<std::string> seen;
  for (const auto& p : parts) {
    CHECK(p.grid == d.grid);
    CHECK(p.attribute_names == d.attribute_names);
    for (const auto& r : p.records) CHECK(seen.insert(r.id).second);
  }
  CHECK(seen.size() == 40);

  const auto again = split_dataset(d, {30, 5, 5}, 17);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(dataset_bytes(parts[i]) == dataset_bytes(again[i]));
  const auto other = split_dataset(d, {30, 5, 5}, 18);
  CHECK(dataset_bytes(parts[0]) != dataset_bytes(other[0]));

  CHECK_THROWS_AS(split_dataset(d, {40, 5, 5}, 0), Error);
}

TEST_CASE("requested split sizes scale down to the dataset") {
  CHECK(fit_split_sizes(9105, {7105, 1000, 1000}) ==
        std::vector<std::size_t>{7105, 1000, 1000});
  const auto scaled = fit_split_sizes(25, {7105, 1000, 1000});
  REQUIRE(scaled.size() == 3);
  CHECK(scaled[0] + scaled[1] + scaled[2] == 25);
  CHECK(scaled[1] == 1000 * 25 / 9105);
  CHECK(scaled[2] == 1000 * 25 / 9105);
  CHECK_THROWS_AS(fit_split_sizes(10, {0, 0}), Error);
}

TEST_CASE("table ingest encodes numerics, categoricals, and labels") {
  TempDir tmp;
  const std::string csv = tmp.file("support.csv",
                                   "id,age,sex,avtisst,death,d.time,hospdead\n"
                                   "p1,62.5,male,21,1,100,0\n"
                                   "p2,45.0,female,,0,1090,0\n");
  IngestConfig cfg;
  cfg.id_column = "id";
  const Dataset d = ingest_support2(csv, cfg);

  CHECK(d.grid.m() == 156);
  CHECK(d.grid.cap() == 1092.0);
  REQUIRE(d.attribute_names ==
          std::vector<std::string>{"bias", "age", "sex_female", "sex_male", "avtisst"});
  CHECK(d.context_names ==
        std::vector<std::string>{"age", "sex_female", "sex_male", "avtisst"});
  CHECK(d.context_kind == ContextKind::static_vector);

  REQUIRE(d.records.size() == 2);
  const auto& p1 = d.records[0];
  CHECK(p1.id == "p1");
  CHECK(p1.attributes == std::vector<double>{1.0, 62.5, 0.0, 1.0, 21.0});
  CHECK(p1.label.event_observed);
  CHECK(to_outcome(p1.label, d.grid) == Outcome::event(14));

  const auto& p2 = d.records[1];
  CHECK(p2.id == "p2");
  // empty numeric cell takes the fill value
  CHECK(p2.attributes == std::vector<double>{1.0, 45.0, 1.0, 0.0, -1.0});
  CHECK_FALSE(p2.label.event_observed);
  CHECK(to_outcome(p2.label, d.grid) == Outcome::censored(155));

  CHECK(std::get<StaticContext>(p1.context).values ==
        std::vector<double>{62.5, 0.0, 1.0, 21.0});
  CHECK(validate_dataset(d).empty());
}

TEST_CASE("table ingest without an id column numbers the rows") {
  TempDir tmp;
  const std::string csv = tmp.file("t.csv",
                                   "age,death,d.time\n"
                                   "50,1,10\n"
                                   "60,0,20\n");
  IngestConfig cfg;
  cfg.leakage_columns = {};
  const Dataset d = ingest_support2(csv, cfg);
  REQUIRE(d.records.size() == 2);
  CHECK(d.records[0].id == "1");
  CHECK(d.records[1].id == "2");
  CHECK(d.attribute_names == std::vector<std::string>{"bias", "age"});
}

TEST_CASE("table ingest standardization zero-centers numerics") {
  TempDir tmp;
  const std::string csv = tmp.file("t.csv",
                                   "age,death,d.time\n"
                                   "10,1,10\n"
                                   "30,1,20\n");
  IngestConfig cfg;
  cfg.standardize = true;
  const Dataset d = ingest_support2(csv, cfg);
  // mean 20, population sd 10
  CHECK(d.records[0].attributes[1] == Catch::Approx(-1.0).margin(1e-9));
  CHECK(d.records[1].attributes[1] == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("table ingest failure modes") {
  TempDir tmp;
  IngestConfig cfg;

  const std::string no_time = tmp.file("a.csv", "age,death\n50,1\n");
  try {
    ingest_support2(no_time, cfg);
    FAIL("expected missing-label error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MISSING_LABEL_COLUMNS);
  }

  const std::string bad_label = tmp.file("b.csv",
                                         "age,death,d.time\n"
                                         "50,1,10\n"
                                         "60,1,\n");
  try {
    ingest_support2(bad_label, cfg);
    FAIL("expected parse error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::PARSE_ERROR);
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }

  const std::string ok = tmp.file("c.csv", "age,death,d.time\n50,1,10\n");
  IngestConfig unknown;
  unknown.attribute_columns = {"age", "bmi"};
  try {
    ingest_support2(ok, unknown);
    FAIL("expected unknown-column error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UNKNOWN_COLUMN);
    CHECK(std::string(e.what()).find("bmi") != std::string::npos);
  }

  IngestConfig binned;
  binned.cap_days = 100.0;
  binned.interval_days = 7.0;  // does not divide evenly
  CHECK_THROWS_AS(ingest_support2(ok, binned), Error);
}

TEST_CASE("time-series ingest bins the observation window") {
  TempDir tmp;
  tmp.file("records/132539.txt",
           "Time,Parameter,Value\n"
           "00:00,RecordID,132539\n"
           "00:17,HR,80\n"
           "00:25,HR,90\n"
           "01:20,Temp,37.5\n");
  tmp.file("records/132540.txt",
           "Time,Parameter,Value\n"
           "00:05,Temp,36.0\n"
           "49:00,HR,70\n");
  const std::string outcomes = tmp.file("outcomes.csv",
                                        "RecordID,Survival,Length_of_stay\n"
                                        "132539,30,10\n"
                                        "132540,-1,12\n");

  const Dataset d = ingest_physionet((tmp.path / "records").string(), outcomes);
  CHECK(d.grid.m() == 60);
  CHECK(d.context_kind == ContextKind::series);
  REQUIRE(d.context_names == std::vector<std::string>{"HR", "Temp"});
  REQUIRE(d.attribute_names == std::vector<std::string>{"bias", "HR", "Temp"});
  REQUIRE(d.records.size() == 2);

  const auto& a = d.records[0];
  CHECK(a.id == "132539");
  const auto& actx = std::get<SeriesContext>(a.context);
  CHECK(actx.steps == 96);
  CHECK(actx.vars == 2);
  CHECK(actx.at(0, 0) == Catch::Approx(85.0));   // two HR readings averaged
  CHECK(actx.at(2, 1) == Catch::Approx(37.5));   // minute 80 lands in bin 2
  CHECK(actx.at(1, 0) == 0.0);
  // attributes carry the last raw measurement
  CHECK(a.attributes == std::vector<double>{1.0, 90.0, 37.5});
  CHECK(a.label.event_observed);
  CHECK(to_outcome(a.label, d.grid) == Outcome::event(30));

  const auto& b = d.records[1];
  CHECK(b.id == "132540");
  const auto& bctx = std::get<SeriesContext>(b.context);
  CHECK(bctx.at(0, 1) == Catch::Approx(36.0));
  // hour 49 is outside the 48h window: no bin, but still the last raw value
  for (int t = 0; t < bctx.steps; ++t) CHECK(bctx.at(t, 0) == 0.0);
  CHECK(b.attributes == std::vector<double>{1.0, 70.0, 36.0});
  CHECK_FALSE(b.label.event_observed);
  CHECK(to_outcome(b.label, d.grid) == Outcome::censored(12));

  CHECK(validate_dataset(d).empty());
}

TEST_CASE("time-series ingest is deterministic across runs") {
  TempDir tmp;
  tmp.file("records/9.txt", "Time,Parameter,Value\n00:01,HR,60\n");
  const std::string outcomes =
      tmp.file("o.csv", "RecordID,Survival,Length_of_stay\n9,5,3\n");
  const Dataset a = ingest_physionet((tmp.path / "records").string(), outcomes);
  const Dataset b = ingest_physionet((tmp.path / "records").string(), outcomes);
  CHECK(dataset_bytes(a) == dataset_bytes(b));
}

TEST_CASE("time-series ingest failure modes") {
  TempDir tmp;
  tmp.file("records/7.txt",
           "Time,Parameter,Value\n"
           "00:00,RecordID,7\n"
           "00:10,Notes,stable\n");
  const std::string outcomes =
      tmp.file("o.csv", "RecordID,Survival,Length_of_stay\n7,5,3\n");
  try {
    ingest_physionet((tmp.path / "records").string(), outcomes);
    FAIL("expected empty-record error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EMPTY_RECORD);  // only excluded/non-numeric rows
  }

  TempDir tmp2;
  tmp2.file("records/8.txt", "Time,Parameter,Value\n00:01,HR,60\n");
  const std::string other =
      tmp2.file("o.csv", "RecordID,Survival,Length_of_stay\n9,5,3\n");
  try {
    ingest_physionet((tmp2.path / "records").string(), other);
    FAIL("expected missing-outcome error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MISSING_OUTCOME);
    CHECK(std::string(e.what()).find("8") != std::string::npos);
  }

  TempDir tmp3;
  tmp3.file("records/5.txt", "Time,Parameter,Value\nnoon,HR,60\n");
  const std::string oc3 =
      tmp3.file("o.csv", "RecordID,Survival,Length_of_stay\n5,5,3\n");
  try {
    ingest_physionet((tmp3.path / "records").string(), oc3);
    FAIL("expected parse error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::PARSE_ERROR);  // "noon" is not hh:mm
  }
}
