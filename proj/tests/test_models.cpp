#include "catch_amalgamated.hpp"
#include "censurv/censurv.hpp"

#include <sstream>

using namespace censurv;

namespace {

Dataset small_static(int n = 48, std::uint64_t seed = 3, double censoring = 0.25) {
  SyntheticSpec s;
  s.n = n;
  s.d_x = 4;
  s.d_c = 3;
  s.m = 5;
  s.censoring = censoring;
  s.family = SyntheticFamily::cen;
  s.seed = seed;
  return gen_synthetic(s).first;
}

Dataset small_series(int n = 48, std::uint64_t seed = 4) {
  SyntheticSpec s;
  s.n = n;
  s.d_x = 4;
  s.d_c = 3;
  s.m = 5;
  s.censoring = 0.25;
  s.family = SyntheticFamily::cen;
  s.context_kind = ContextKind::series;
  s.series_steps = 6;
  s.seed = seed;
  return gen_synthetic(s).first;
}

ModelSpec tiny_spec(ModelFamily f, int epochs = 5) {
  ModelSpec ms;
  ms.family = f;
  ms.hidden = 8;
  ms.embed = 6;
  ms.atoms = 4;
  ms.epochs = epochs;
  ms.patience = 0;
  ms.batch = 16;
  ms.lr = 0.05;
  ms.seed = 12;
  return ms;
}

// survival data as labeled static records over an explicit grid
Dataset labeled_dataset(const std::vector<std::tuple<double, bool, std::vector<double>>>& rows,
                        const TimeGrid& grid,
                        std::vector<std::string> names = {"bias"}) {
  Dataset d;
  d.grid = grid;
  d.attribute_names = std::move(names);
  d.context_names = {"c0"};
  d.context_kind = ContextKind::static_vector;
  int i = 0;
  for (const auto& [time, event, attrs] : rows) {
    PatientRecord r;
    r.id = "p" + std::to_string(++i);
    r.attributes = attrs;
    r.context = StaticContext{{0.0}};
    r.label = SurvivalLabel{time, event};
    d.records.push_back(std::move(r));
  }
  return d;
}

void check_valid_curve(const std::vector<double>& s, int m) {
  REQUIRE(static_cast<int>(s.size()) == m + 1);
  CHECK(s[0] == 1.0);
  for (std::size_t i = 1; i < s.size(); ++i) {
    CHECK(s[i] <= s[i - 1] + 1e-12);
    CHECK(s[i] >= -1e-15);
    CHECK(s[i] <= 1.0 + 1e-15);
  }
}

}  // namespace

TEST_CASE("training is deterministic given the seed") {
  const Dataset d = small_static();
  const Dataset none;
  const ModelSpec ms = tiny_spec(ModelFamily::mlp_cen, 4);

  const ModelArtifact a = fit(ms, d, none);
  const ModelArtifact b = fit(ms, d, none);

  std::ostringstream sa, sb;
  save_artifact(a, sa);
  save_artifact(b, sb);
  CHECK(sa.str() == sb.str());
}

TEST_CASE("untrained proportional model predicts the uniform outcome") {
  const Dataset d = small_static();
  const Dataset none;
  ModelSpec ms = tiny_spec(ModelFamily::crf, 0);
  const ModelArtifact art = fit(ms, d, none);
  CHECK(art.training.epochs_run == 0);

  const auto s = predict_survival(art, d.records[0]);
  const int m = d.grid.m();
  for (int i = 0; i <= m; ++i)
    CHECK(s[static_cast<std::size_t>(i)] ==
          Catch::Approx(1.0 - static_cast<double>(i) / (m + 1)).margin(1e-10));
}

TEST_CASE("partial-likelihood score at zero is the risk-set residual") {
  // A: x=1 dies at 10 with both at risk; B: x=0 dies at 20 alone at risk.
  // score(0) = (1 - 1/2) + (0 - 0) = 1/2.
  const TimeGrid grid = TimeGrid::uniform(3, 10.0);
  const Dataset d = labeled_dataset({{10.0, true, {1.0, 1.0}}, {20.0, true, {1.0, 0.0}}},
                                    grid, {"bias", "x"});
  const std::vector<double> beta{0.0};
  const auto score = cox_score(d, beta);
  REQUIRE(score.size() == 1);
  CHECK(score[0] == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("proportional-hazards fit matches a grid-search oracle") {
  const TimeGrid grid = TimeGrid::uniform(4, 10.0);
  const Dataset d = labeled_dataset(
      {
          {5.0, true, {1.0, 1.2}},
          {8.0, true, {1.0, 0.7}},
          {12.0, false, {1.0, -0.3}},
          {15.0, true, {1.0, -0.8}},
          {20.0, true, {1.0, 0.1}},
          {24.0, false, {1.0, 1.0}},
          {30.0, true, {1.0, -1.1}},
          {38.0, false, {1.0, 0.4}},
      },
      grid, {"bias", "x"});

  double best_b = 0.0, best_ll = -std::numeric_limits<double>::infinity();
  for (double b = -5.0; b <= 5.0; b += 1e-3) {
    const std::vector<double> beta{b};
    const double ll = cox_log_partial_lik(d, beta);
    if (ll > best_ll) {
      best_ll = ll;
      best_b = b;
    }
  }

  const CoxModel cm = cox_fit(d);
  REQUIRE(cm.beta.size() == 1);
  CHECK_FALSE(cm.separation);
  CHECK(std::abs(cm.beta[0] - best_b) < 2e-3);
  CHECK(cox_log_partial_lik(d, cm.beta) >= best_ll - 1e-9);
}

TEST_CASE("constant covariates give a zero hazard ratio") {
  const TimeGrid grid = TimeGrid::uniform(3, 10.0);
  const Dataset d = labeled_dataset(
      {{5.0, true, {1.0, 2.0}}, {12.0, true, {1.0, 2.0}}, {20.0, false, {1.0, 2.0}}},
      grid, {"bias", "x"});
  const CoxModel cm = cox_fit(d);
  REQUIRE(cm.beta.size() == 1);
  CHECK(cm.beta[0] == Catch::Approx(0.0).margin(1e-9));
  CHECK_FALSE(cm.separation);
}

TEST_CASE("intercept-only hazard baselines agree with hand counts") {
  // events at 10 (3 at risk) and 20 (2 at risk), censoring at 30
  const TimeGrid grid = TimeGrid::uniform(3, 15.0);
  const Dataset d = labeled_dataset(
      {{10.0, true, {1.0}}, {20.0, true, {1.0}}, {30.0, false, {1.0}}}, grid);

  const CoxModel cm = cox_fit(d);
  CHECK(cm.beta.empty());
  const auto cox_s = cox_survival(cm, d.records[0].attributes, grid);
  CHECK(cox_s[0] == 1.0);
  CHECK(cox_s[1] == Catch::Approx(std::exp(-1.0 / 3.0)).margin(1e-12));
  CHECK(cox_s[2] == Catch::Approx(std::exp(-1.0 / 3.0 - 1.0 / 2.0)).margin(1e-12));
  CHECK(cox_s[3] == Catch::Approx(std::exp(-1.0 / 3.0 - 1.0 / 2.0)).margin(1e-12));

  // additive-hazard counterpart: product of (1 - d/n) factors
  const AalenModel am = aalen_fit(d);
  REQUIRE(am.times == std::vector<double>{10.0, 20.0});
  CHECK(am.increments[0][0] == Catch::Approx(1.0 / 3.0).margin(1e-12));
  CHECK(am.increments[1][0] == Catch::Approx(1.0 / 2.0).margin(1e-12));
  const auto aalen_s = aalen_survival(am, d.records[0].attributes, grid);
  CHECK(aalen_s[0] == 1.0);
  CHECK(aalen_s[1] == Catch::Approx(2.0 / 3.0).margin(1e-12));
  CHECK(aalen_s[2] == Catch::Approx(1.0 / 3.0).margin(1e-12));
  CHECK(aalen_s[3] == Catch::Approx(1.0 / 3.0).margin(1e-12));
}

TEST_CASE("additive-hazard fit solves the per-event least squares") {
  // one event with all three at risk, one with two at risk; 2x2 normal
  // equations solved by hand
  const TimeGrid grid = TimeGrid::uniform(3, 12.0);
  const Dataset d = labeled_dataset(
      {{30.0, false, {1.0, 0.0}}, {10.0, true, {1.0, 1.0}}, {20.0, true, {1.0, 2.0}}},
      grid, {"bias", "z"});

  const AalenModel am = aalen_fit(d);
  REQUIRE(am.times == std::vector<double>{10.0, 20.0});
  CHECK(am.increments[0][0] == Catch::Approx(1.0 / 3.0).margin(1e-9));
  CHECK(am.increments[0][1] == Catch::Approx(0.0).margin(1e-9));
  CHECK(am.increments[1][0] == Catch::Approx(0.0).margin(1e-9));
  CHECK(am.increments[1][1] == Catch::Approx(0.5).margin(1e-9));
  CHECK(am.ridged[0] == 0);
  CHECK(am.ridged[1] == 0);

  const std::vector<double> x{1.0, 1.0};
  const auto s = aalen_survival(am, x, grid);
  CHECK(s[1] == Catch::Approx(2.0 / 3.0).margin(1e-9));
  CHECK(s[2] == Catch::Approx(1.0 / 3.0).margin(1e-9));
}

TEST_CASE("no observed events leave the additive model flat") {
  const TimeGrid grid = TimeGrid::uniform(2, 10.0);
  const Dataset d = labeled_dataset({{5.0, false, {1.0}}, {15.0, false, {1.0}}}, grid);
  const AalenModel am = aalen_fit(d);
  CHECK(am.times.empty());
  const auto s = aalen_survival(am, d.records[0].attributes, grid);
  for (double v : s) CHECK(v == 1.0);
}

TEST_CASE("negative survival factors are clamped") {
  // a huge covariate makes 1 - x.dB negative at the event time; the factor
  // floors at zero and survival stays a probability
  const TimeGrid grid = TimeGrid::uniform(2, 15.0);
  const Dataset d = labeled_dataset(
      {{10.0, true, {1.0, 1.0}}, {20.0, true, {1.0, 0.0}}, {25.0, false, {1.0, 0.5}}},
      grid, {"bias", "z"});
  const AalenModel am = aalen_fit(d);
  const std::vector<double> extreme{1.0, 50.0};
  const auto s = aalen_survival(am, extreme, grid);
  check_valid_curve(s, grid.m());
}

TEST_CASE("proportional-model explanation is global and matches the artifact") {
  const Dataset d = small_static();
  const ModelArtifact art = fit(tiny_spec(ModelFamily::crf, 3), d, Dataset{});

  const Explanation ea = explain(art, d.records[0]);
  const Explanation eb = explain(art, d.records[1]);
  CHECK(ea.global);
  CHECK(eb.global);
  const Tensor& theta = art.params.at("theta").value;
  for (int t = 1; t <= art.m(); ++t)
    for (int j = 0; j < art.d_x(); ++j) {
      CHECK(ea.theta.at(t, j) == theta.at(t - 1, j));
      CHECK(eb.theta.at(t, j) == theta.at(t - 1, j));
    }
}

TEST_CASE("hazard-ratio explanation leaves the bias slot empty") {
  const TimeGrid grid = TimeGrid::uniform(3, 10.0);
  const Dataset d = labeled_dataset(
      {
          {5.0, true, {1.0, 1.2, 0.3}},
          {8.0, true, {1.0, 0.7, -0.2}},
          {15.0, true, {1.0, -0.8, 0.9}},
          {22.0, false, {1.0, 0.2, 0.4}},
      },
      grid, {"bias", "x1", "x2"});
  const ModelArtifact art = fit(tiny_spec(ModelFamily::cox), d, Dataset{});
  const Explanation e = explain(art, d.records[0]);
  CHECK(e.global);
  const Tensor& beta = art.params.at("beta").value;
  for (int t = 1; t <= art.m(); ++t) {
    CHECK(e.theta.at(t, 0) == 0.0);
    CHECK(e.theta.at(t, 1) == beta[0]);
    CHECK(e.theta.at(t, 2) == beta[1]);
  }
}

TEST_CASE("latent-feature families cannot produce attribute explanations") {
  const Dataset d = small_static();
  const ModelArtifact art = fit(tiny_spec(ModelFamily::mlp_crf, 1), d, Dataset{});
  try {
    explain(art, d.records[0]);
    FAIL("expected unavailable-explanation error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EXPLANATION_UNAVAILABLE);
  }
}

TEST_CASE("contextual explanations are record-specific convex atom mixtures") {
  const Dataset d = small_static();
  ModelArtifact art = fit(tiny_spec(ModelFamily::mlp_cen, 4), d, Dataset{});

  const auto cf = cen_forward(art.spec, art.params, d.records[0].context, art.m(), art.d_x());
  const Tensor& dict = art.params.at("dict").value;
  const int atoms = dict.shape()[0];

  for (int t = 1; t <= art.m(); ++t) {
    const auto& alpha = cf.alpha[static_cast<std::size_t>(t) - 1];
    double total = 0.0;
    for (double a : alpha) {
      CHECK(a >= 0.0);
      total += a;
    }
    CHECK(total == Catch::Approx(1.0).margin(1e-6));
    // theta row must reproduce the mixture and stay inside the atom hull
    for (int j = 0; j < art.d_x(); ++j) {
      double mix = 0.0, lo = dict.at(0, j), hi = dict.at(0, j);
      for (int k = 0; k < atoms; ++k) {
        mix += alpha[static_cast<std::size_t>(k)] * dict.at(k, j);
        lo = std::min(lo, dict.at(k, j));
        hi = std::max(hi, dict.at(k, j));
      }
      CHECK(cf.theta.at(t, j) == Catch::Approx(mix).margin(1e-5));
      CHECK(cf.theta.at(t, j) >= lo - 1e-9);
      CHECK(cf.theta.at(t, j) <= hi + 1e-9);
    }
  }

  const Explanation e = explain(art, d.records[0]);
  CHECK_FALSE(e.global);

  // identical dictionary rows collapse every explanation onto that row
  Tensor& mdict = art.params.at("dict").value;
  for (int k = 0; k < atoms; ++k)
    for (int j = 0; j < art.d_x(); ++j) mdict.at(k, j) = 0.25 * (j + 1);
  const Explanation collapsed = explain(art, d.records[1]);
  for (int t = 1; t <= art.m(); ++t)
    for (int j = 0; j < art.d_x(); ++j)
      CHECK(collapsed.theta.at(t, j) == Catch::Approx(0.25 * (j + 1)).margin(1e-9));
}

TEST_CASE("prediction equals the explanation pushed through the outcome model") {
  const Dataset d = small_static();
  ModelSpec ms = tiny_spec(ModelFamily::mlp_cen, 6);
  ms.pairwise = true;
  const ModelArtifact art = fit(ms, d, Dataset{});
  REQUIRE(art.params.has("pairwise"));
  const Tensor& w = art.params.at("pairwise").value;
  const PairwisePotentials pw{w[0], w[1], w[2]};

  for (int i = 0; i < 3; ++i) {
    const auto& r = d.records[static_cast<std::size_t>(i)];
    const Explanation e = explain(art, r);
    const auto manual = survival_curve(
        outcome_distribution(outcome_scores(r.attributes, e.theta, pw)));
    const auto direct = predict_survival(art, r);
    for (std::size_t q = 0; q < manual.size(); ++q)
      CHECK(direct[q] == Catch::Approx(manual[q]).margin(1e-12));
  }
}

TEST_CASE("disabling pairwise potentials removes them from the artifact") {
  const Dataset d = small_static();
  ModelSpec ms = tiny_spec(ModelFamily::mlp_cen, 2);
  ms.pairwise = false;
  const ModelArtifact art = fit(ms, d, Dataset{});
  CHECK_FALSE(art.params.has("pairwise"));

  const auto& r = d.records[0];
  const Explanation e = explain(art, r);
  const auto manual =
      survival_curve(outcome_distribution(outcome_scores(r.attributes, e.theta)));
  const auto direct = predict_survival(art, r);
  for (std::size_t q = 0; q < manual.size(); ++q)
    CHECK(direct[q] == Catch::Approx(manual[q]).margin(1e-12));
}

TEST_CASE("context kind mismatches are rejected in both directions") {
  const Dataset stat = small_static();
  const Dataset ser = small_series();

  try {
    fit(tiny_spec(ModelFamily::lstm_cen, 1), stat, Dataset{});
    FAIL("series family accepted static data");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::INCOMPATIBLE_CONTEXT);
  }
  try {
    fit(tiny_spec(ModelFamily::mlp_cen, 1), ser, Dataset{});
    FAIL("static family accepted series data");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::INCOMPATIBLE_CONTEXT);
  }

  const ModelArtifact art = fit(tiny_spec(ModelFamily::mlp_cen, 1), stat, Dataset{});
  try {
    predict_survival(art, ser.records[0]);
    FAIL("static artifact accepted a series record");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::INCOMPATIBLE_CONTEXT);
  }
}

TEST_CASE("artifacts round-trip through the binary container") {
  const Dataset d = small_static();
  ModelSpec ms = tiny_spec(ModelFamily::mlp_cen, 5);
  const Dataset valid = small_static(16, 9);
  const ModelArtifact art = fit(ms, d, valid);
  CHECK(std::isfinite(art.training.final_valid_loss));

  std::ostringstream os;
  save_artifact(art, os);
  std::istringstream is(os.str());
  const ModelArtifact back = load_artifact(is);

  CHECK(back.spec.family == art.spec.family);
  CHECK(back.spec.seed == art.spec.seed);
  CHECK(back.grid == art.grid);
  CHECK(back.attribute_names == art.attribute_names);
  CHECK(back.context_names == art.context_names);
  CHECK(back.context_kind == art.context_kind);
  CHECK(back.training.epochs_run == art.training.epochs_run);
  CHECK(back.training.best_epoch == art.training.best_epoch);

  for (int i = 0; i < 5; ++i) {
    const auto& r = d.records[static_cast<std::size_t>(i)];
    const auto a = predict_survival(art, r);
    const auto b = predict_survival(back, r);
    REQUIRE(a.size() == b.size());
    for (std::size_t q = 0; q < a.size(); ++q) CHECK(a[q] == b[q]);
  }

  std::ostringstream os2;
  save_artifact(back, os2);
  CHECK(os.str() == os2.str());
}

TEST_CASE("contextual network memorizes a small sample") {
  SyntheticSpec ss;
  ss.n = 32;
  ss.m = 4;
  ss.d_x = 4;
  ss.d_c = 3;
  ss.censoring = 0.2;
  ss.family = SyntheticFamily::cen;
  ss.seed = 5;
  const Dataset d = gen_synthetic(ss).first;

  ModelSpec ms;
  ms.family = ModelFamily::mlp_cen;
  ms.hidden = 32;
  ms.embed = 16;
  ms.atoms = 8;
  ms.epochs = 3000;
  ms.patience = 0;
  ms.batch = 32;
  ms.lr = 0.05;
  ms.l2 = 0.0;
  ms.seed = 2;

  const ModelArtifact art = fit(ms, d, Dataset{});
  CHECK(art.training.final_train_loss <=
        0.05 * art.training.initial_train_loss);
}

TEST_CASE("every family emits a valid survival function") {
  const Dataset stat = small_static(64, 21);
  const Dataset ser = small_series(64, 22);

  for (ModelFamily f : {ModelFamily::cox, ModelFamily::aalen, ModelFamily::crf,
                        ModelFamily::mlp_crf, ModelFamily::mlp_cen}) {
    const ModelArtifact art = fit(tiny_spec(f, 2), stat, Dataset{});
    for (int i = 0; i < 4; ++i)
      check_valid_curve(predict_survival(art, stat.records[static_cast<std::size_t>(i)]),
                        stat.grid.m());
  }
  for (ModelFamily f : {ModelFamily::lstm_crf, ModelFamily::lstm_cen}) {
    const ModelArtifact art = fit(tiny_spec(f, 2), ser, Dataset{});
    for (int i = 0; i < 4; ++i)
      check_valid_curve(predict_survival(art, ser.records[static_cast<std::size_t>(i)]),
                        ser.grid.m());
  }
}

TEST_CASE("per-epoch hooks observe training and early stopping works") {
  const Dataset d = small_static(64, 31);
  const Dataset valid = small_static(24, 32);
  ModelSpec ms = tiny_spec(ModelFamily::crf, 300);
  ms.patience = 3;
  ms.lr = 0.1;

  int calls = 0;
  double last_valid = std::numeric_limits<double>::quiet_NaN();
  FitHooks hooks;
  hooks.on_epoch = [&](int epoch, double train_loss, double valid_loss) {
    ++calls;
    CHECK(epoch == calls);
    CHECK(std::isfinite(train_loss));
    CHECK(std::isfinite(valid_loss));
    last_valid = valid_loss;
  };
  const ModelArtifact art = fit(ms, d, valid, hooks);
  CHECK(art.training.epochs_run == calls);
  CHECK(art.training.best_epoch >= 1);
  CHECK(art.training.best_epoch <= calls);
  // restored parameters reproduce the best validation loss, not the last
  CHECK(art.training.final_valid_loss <= last_valid + 1e-12);
}

TEST_CASE("spec validation rejects bad hyperparameters") {
  ModelSpec ms = tiny_spec(ModelFamily::crf);
  ms.lr = 0.0;
  CHECK_THROWS_AS(ms.validate(), Error);
  ms = tiny_spec(ModelFamily::crf);
  ms.momentum = 1.0;
  CHECK_THROWS_AS(ms.validate(), Error);
  ms = tiny_spec(ModelFamily::crf);
  ms.batch = 0;
  CHECK_THROWS_AS(ms.validate(), Error);
  ms = tiny_spec(ModelFamily::mlp_cen);
  ms.atoms = 0;
  CHECK_THROWS_AS(ms.validate(), Error);

  CHECK_THROWS_AS(fit(tiny_spec(ModelFamily::crf), Dataset{}, Dataset{}), Error);
}

TEST_CASE("model spec round-trips through json") {
  ModelSpec ms = tiny_spec(ModelFamily::lstm_cen, 17);
  ms.pairwise = false;
  ms.l2 = 0.007;
  ms.clip_norm = 2.5;
  ms.seed = 99;
  const ModelSpec back = spec_from_json(spec_to_json(ms));
  CHECK(back.family == ms.family);
  CHECK(back.hidden == ms.hidden);
  CHECK(back.embed == ms.embed);
  CHECK(back.atoms == ms.atoms);
  CHECK(back.pairwise == ms.pairwise);
  CHECK(back.l2 == ms.l2);
  CHECK(back.lr == ms.lr);
  CHECK(back.momentum == ms.momentum);
  CHECK(back.batch == ms.batch);
  CHECK(back.epochs == ms.epochs);
  CHECK(back.patience == ms.patience);
  CHECK(back.clip_norm == ms.clip_norm);
  CHECK(back.seed == ms.seed);

  CHECK(parse_family("mlp-cen") == ModelFamily::mlp_cen);
  CHECK(std::string(family_name(ModelFamily::lstm_crf)) == "lstm-crf");
  CHECK_THROWS_AS(parse_family("boost"), Error);
}
