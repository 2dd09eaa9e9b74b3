#include "doctest.h"

#include "slff/data.hpp"
#include "slff/dataproto.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>

using namespace slff;

namespace {

const std::filesystem::path kWorked = std::filesystem::path(SLFF_TEST_DATA) / "worked_example";
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Index col_of(const AlignedPanel& p, const std::string& id) {
  for (std::size_t j = 0; j < p.columns.size(); ++j)
    if (p.columns[j].series_id == id) return static_cast<Index>(j);
  FAIL("no column " << id);
  return -1;
}

Index row_of(const AlignedPanel& p, const std::string& date) {
  const Date d = parse_date(date);
  const auto it = std::find(p.calendar.begin(), p.calendar.end(), d);
  REQUIRE(it != p.calendar.end());
  return static_cast<Index>(it - p.calendar.begin());
}

bool same(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

AlignedPanel worked_panel() { return align(load_series_dir(kWorked), load_calendar(kWorked / "calendar.csv")); }

// Independent recount: for every cell, the set of usable releases is sorted
// by (period end, release time, position) and the last one is taken.
Index brute_force_violations(const AlignedPanel& panel, const std::vector<VintageSeries>& series) {
  Index count = 0;
  for (std::size_t j = 0; j < panel.columns.size(); ++j) {
    const VintageSeries& s = series[j];
    for (std::size_t t = 0; t < panel.calendar.size(); ++t) {
      std::vector<std::tuple<Date, std::string, std::size_t>> usable;
      bool flagged = false;
      for (std::size_t i = 0; i < s.observations.size(); ++i) {
        const Observation& o = s.observations[i];
        const Date rel = release_day(o.release_timestamp);
        if (rel > panel.calendar[t]) continue;
        std::string ts = o.release_timestamp;
        if (ts.size() == 10) ts += "T00:00:00";
        if (ts.size() == 16) ts += ":00";
        usable.emplace_back(reference_period_end(o.reference_period), ts, i);
        if (t == 0 ? rel == panel.calendar[0] : rel > panel.calendar[t - 1]) flagged = true;
      }
      std::sort(usable.begin(), usable.end());
      const double expected = usable.empty() ? kNaN : s.observations[std::get<2>(usable.back())].value;
      if (!same(panel.values(static_cast<Index>(t), static_cast<Index>(j)), expected)) ++count;
      if (panel.masks(static_cast<Index>(t), static_cast<Index>(j)) != (flagged ? 1.0 : 0.0)) ++count;
    }
  }
  return count;
}

std::vector<Date> weekdays(const std::string& start, int n) { return business_days(parse_date(start), n); }

}  // namespace

TEST_CASE("worked example: value and mask pattern matches the golden files") {
  const AlignedPanel p = worked_panel();
  REQUIRE(p.width() == 3);
  REQUIRE(p.length() == 22);
  const CsvTable ev = read_csv(kWorked / "expected_values.csv");
  const CsvTable em = read_csv(kWorked / "expected_masks.csv");
  REQUIRE(ev.rows.size() == 22);
  for (std::size_t t = 0; t < ev.rows.size(); ++t) {
    CHECK(format_date(p.calendar[t]) == ev.rows[t][0]);
    for (std::size_t j = 0; j < 3; ++j) {
      const Index c = col_of(p, ev.header[j + 1]);
      CHECK(same(p.values(static_cast<Index>(t), c), parse_double(ev.rows[t][j + 1])));
      CHECK(p.masks(static_cast<Index>(t), c) == parse_double(em.rows[t][j + 1]));
    }
  }
}

TEST_CASE("worked example: the three release patterns") {
  const AlignedPanel p = worked_panel();
  const Index cu = col_of(p, "copper_close"), eia = col_of(p, "eia_crude_inventory"), pmi = col_of(p, "ism_pmi");
  // Daily close: same-day entry, mask 1 every day.
  CHECK(p.masks.col(cu).minCoeff() == 1.0);
  CHECK(p.values(row_of(p, "2020-01-15"), cu) == 2.809);
  // EIA: the Jan 15 report enters Jan 15 and is forward-filled through Jan 21.
  const Index jan15 = row_of(p, "2020-01-15"), jan21 = row_of(p, "2020-01-21");
  for (Index t = jan15; t <= jan21; ++t) {
    CHECK(p.values(t, eia) == 428.5);
    CHECK(p.masks(t, eia) == (t == jan15 ? 1.0 : 0.0));
  }
  CHECK(p.values(row_of(p, "2020-01-22"), eia) == 428.1);
  CHECK(std::isnan(p.values(row_of(p, "2020-01-07"), eia)));
  // PMI: December value from Jan 2 through Jan 31; January value only from Feb 3.
  const Index jan31 = row_of(p, "2020-01-31");
  for (Index t = 0; t <= jan31; ++t) {
    CHECK(p.values(t, pmi) == 47.2);
    CHECK(p.masks(t, pmi) == (t == 0 ? 1.0 : 0.0));
  }
  CHECK(p.values(row_of(p, "2020-02-03"), pmi) == 50.9);
  CHECK(p.masks(row_of(p, "2020-02-03"), pmi) == 1.0);
  // The holiday is absent from the supplied calendar.
  CHECK(std::find(p.calendar.begin(), p.calendar.end(), parse_date("2020-01-20")) == p.calendar.end());
  const AuditReport audit = audit_leakage(p, load_series_dir(kWorked));
  CHECK(audit.clean());
  CHECK(audit.cells_checked == 66);
}

TEST_CASE("planted leaks are reported exactly") {
  const auto series = load_series_dir(kWorked);
  AlignedPanel p = worked_panel();
  const Index eia = col_of(p, "eia_crude_inventory"), pmi = col_of(p, "ism_pmi");
  // Back-fill one cell from a later vintage.
  p.values(row_of(p, "2020-01-16"), eia) = 428.1;
  AuditReport a = audit_leakage(p, series);
  REQUIRE(a.violations.size() == 1);
  CHECK(a.violations[0].kind == "leak");
  CHECK(a.violations[0].date == "2020-01-16");
  CHECK(a.violations[0].series_id == "eia_crude_inventory");
  CHECK(a.violations[0].detail.find("2020-01-22") != std::string::npos);
  // January PMI pulled forward, plus a wrong mask bit.
  p.values(row_of(p, "2020-01-30"), pmi) = 50.9;
  p.masks(row_of(p, "2020-01-09"), pmi) = 1.0;
  p.values(row_of(p, "2020-01-09"), col_of(p, "copper_close")) = 99.0;
  a = audit_leakage(p, series);
  REQUIRE(a.violations.size() == 4);
  std::map<std::string, int> kinds;
  for (const auto& v : a.violations) ++kinds[v.kind];
  CHECK(kinds["leak"] == 2);
  CHECK(kinds["mask"] == 1);
  CHECK(kinds["mismatch"] == 1);
}

TEST_CASE("audit of shuffled release timestamps matches a brute-force recount") {
  const auto series = load_series_dir(kWorked);
  const AlignedPanel p = worked_panel();
  Rng rng(99);
  for (int rep = 0; rep < 20; ++rep) {
    auto shuffled = series;
    for (auto& s : shuffled) {
      std::vector<std::string> ts;
      for (const auto& o : s.observations) ts.push_back(o.release_timestamp);
      for (std::size_t i = ts.size(); i > 1; --i) std::swap(ts[i - 1], ts[rng() % i]);
      for (std::size_t i = 0; i < ts.size(); ++i) s.observations[i].release_timestamp = ts[i];
    }
    const AuditReport a = audit_leakage(p, shuffled);
    CHECK(static_cast<Index>(a.violations.size()) == brute_force_violations(p, shuffled));
  }
  CHECK(brute_force_violations(p, series) == 0);
}

TEST_CASE("vintages: point-in-time value, latest reference period wins") {
  VintageSeries s{"ip", Frequency::monthly, "macro", "", {}};
  s.observations = {{"2020-01", 100.0, "2020-02-14"},
                    {"2020-01", 101.0, "2020-03-16"},  // revision of January
                    {"2020-02", 102.0, "2020-03-16T09:00"},
                    {"2020-01", 100.5, "2020-04-15"}};  // late revision of an older period
  const std::vector<Date> cal = weekdays("2020-02-10", 60);
  const AlignedPanel p = align({s}, cal);
  const auto at = [&](const std::string& d) { return p.values(row_of(p, d), 0); };
  CHECK(std::isnan(at("2020-02-13")));
  CHECK(at("2020-02-14") == 100.0);
  CHECK(at("2020-03-13") == 100.0);
  CHECK(at("2020-03-16") == 102.0);  // February supersedes January's revision
  CHECK(at("2020-04-15") == 102.0);
  CHECK(p.masks(row_of(p, "2020-04-15"), 0) == 1.0);  // a release still occurred
  CHECK(audit_leakage(p, {s}).clean());

  VintageSeries bad = s;
  bad.observations.push_back({"2020-05", 1.0, "2020-05-20"});
  CHECK_THROWS_AS(align({bad}, cal), DataError);
  VintageSeries q{"gdp", Frequency::quarterly, "macro", "", {{"2019-Q4", 2.1, "2020-01-30T08:30:00"}}};
  CHECK(reference_period_end("2019-Q4") == parse_date("2019-12-31"));
  CHECK(reference_period_end("2020-02") == parse_date("2020-02-29"));
  CHECK_NOTHROW(q.validate());
  CHECK_THROWS_AS(reference_period_end("2020-Q5"), DataError);
  CHECK_THROWS_AS(release_day("2020-01-30T25:00"), DataError);
}

TEST_CASE("releases on non-trading days are used from the next trading day") {
  VintageSeries s{"cot", Frequency::weekly, "sentiment", "", {{"2020-01-07", 5.0, "2020-01-11T15:30:00"}}};
  const AlignedPanel p = align({s}, weekdays("2020-01-06", 10));
  CHECK(std::isnan(p.values(row_of(p, "2020-01-10"), 0)));
  CHECK(p.values(row_of(p, "2020-01-13"), 0) == 5.0);
  CHECK(p.masks(row_of(p, "2020-01-13"), 0) == 1.0);
  REQUIRE(p.notes.size() == 1);
  CHECK(p.notes[0].find("non-trading") != std::string::npos);
  CHECK(audit_leakage(p, {s}).clean());

  VintageSeries late{"late", Frequency::monthly, "macro", "", {{"2021-01", 1.0, "2021-02-01"}}};
  const AlignedPanel q = align({late}, weekdays("2020-01-06", 10));
  CHECK(q.values.col(0).array().isNaN().all());
  CHECK(q.notes.back().find("all-missing") != std::string::npos);
}

TEST_CASE("alignment is idempotent and round-trips through files") {
  const AlignedPanel a = worked_panel(), b = worked_panel();
  CHECK(a.values.cwiseEqual(b.values).count() + a.values.array().isNaN().count() == a.values.size());
  CHECK(a.masks == b.masks);
  const auto dir = std::filesystem::temp_directory_path() / "slff_panel_roundtrip";
  std::filesystem::remove_all(dir);
  save_panel(a, dir);
  const AlignedPanel c = load_panel(dir);
  CHECK(c.calendar == a.calendar);
  CHECK(c.masks == a.masks);
  for (Index i = 0; i < a.values.size(); ++i) CHECK(same(c.values.data()[i], a.values.data()[i]));
  save_series_dir(load_series_dir(kWorked), dir / "series");
  const AlignedPanel d = align(load_series_dir(dir / "series"), a.calendar);
  CHECK(d.masks == a.masks);
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(align({}, {parse_date("2020-01-02"), parse_date("2020-01-02")}), DataError);
}

TEST_CASE("rolling-origin folds") {
  const FoldSchedule full = make_folds(2005, 2025);
  REQUIRE(full.folds.size() == 7);
  const Fold& f1 = full.folds.front();
  CHECK(f1.index == 1);
  CHECK(f1.train_first == 2006);
  CHECK(f1.train_last == 2011);
  CHECK(f1.val_year == 2012);
  CHECK(f1.test_year == 2013);
  const Fold& f7 = full.folds.back();
  CHECK(f7.train_first == 2018);
  CHECK(f7.train_last == 2023);
  CHECK(f7.val_year == 2024);
  CHECK(f7.test_year == 2025);
  for (const Fold& f : full.folds) CHECK((f.train_last < f.val_year && f.val_year < f.test_year));

  AlignedPanel ten;
  ten.calendar = business_days(parse_date("2015-01-01"), 2609);
  CHECK(year_of(ten.calendar.back()) == 2024);
  CHECK(make_folds(ten).folds.size() == 2);
  CHECK_THROWS_AS(make_folds(2018, 2024), DataError);
}

TEST_CASE("preprocessing uses train statistics only") {
  AlignedPanel p;
  p.calendar = business_days(parse_date("2010-01-01"), 261 * 5);
  const Index T = static_cast<Index>(p.calendar.size());
  Rng rng(1);
  p.values.resize(T, 5);
  p.masks = Mat::Ones(T, 5);
  for (Index i = 0; i < p.values.size(); ++i) p.values.data()[i] = 3.0 + 2.0 * standard_normal(rng);
  p.columns = {{"a", "x", ""}, {"flat", "x", ""}, {"miss41", "x", ""}, {"miss39", "x", ""}, {"e", "x", ""}};
  p.values.col(1).setConstant(4.0);
  Fold fold{1, 2010, 2012, 2013, 2014};
  const auto train = p.rows_in_years(2010, 2012);
  const Index n_train = static_cast<Index>(train.size());
  const auto knock_out = [&](Index col, double frac) {
    const Index k = static_cast<Index>(std::ceil(frac * static_cast<double>(n_train)));
    for (Index i = 0; i < k; ++i) p.values(train[static_cast<std::size_t>(i)], col) = kNaN;
  };
  knock_out(2, 0.41);
  knock_out(3, 0.39);
  // A wild outlier inside train gets clipped.
  p.values(train[500], 0) = 1e6;

  const PreprocessResult r = preprocess(p, fold);
  REQUIRE(r.kept == std::vector<Index>{0, 3, 4});
  CHECK(r.warnings.size() == 2);
  // Train-period z-scores have mean ~0 (before clipping) and the outlier is clipped.
  const ColumnStats& s0 = r.stats[0];
  CHECK(r.panel.values(train[500], 0) == doctest::Approx(s0.hi));
  const Index val_row = p.rows_in_years(2013, 2013).front();
  // A validation value equal to the train mean maps to 0.
  AlignedPanel q = p;
  q.values(val_row, 4) = r.stats[2].mean;
  const PreprocessResult rq = preprocess(q, fold);
  CHECK(rq.panel.values(val_row, 2) == doctest::Approx(0.0).epsilon(1e-12));
  // Changing validation/test data never changes the statistics.
  for (Index t : q.rows_in_years(2013, 2014)) q.values.row(t).array() += 100.0;
  const PreprocessResult rs = preprocess(q, fold);
  for (std::size_t k = 0; k < r.stats.size(); ++k) {
    CHECK(rs.stats[k].mean == r.stats[k].mean);
    CHECK(rs.stats[k].std == r.stats[k].std);
    CHECK(rs.stats[k].lo == r.stats[k].lo);
    CHECK(rs.stats[k].hi == r.stats[k].hi);
  }
  // Leading missing values become 0 with mask 0 untouched.
  CHECK(r.panel.values(train[0], 1) == 0.0);
  CHECK(r.panel.values.allFinite());
  CHECK_THROWS_AS(preprocess(p, Fold{1, 2001, 2006, 2007, 2008}), DataError);
}

TEST_CASE("binned mutual information: null calibration and the 0.1 threshold") {
  // Monte Carlo null: independent pairs at a typical train length. The
  // corrected estimator should be centered near 0 and essentially never
  // exceed the screening threshold.
  Rng rng(5);
  const int reps = 200;
  const Index n = 1500;
  double sum = 0.0, worst = 0.0;
  for (int r = 0; r < reps; ++r) {
    Vec x(n), y(n);
    for (Index i = 0; i < n; ++i) {
      x[i] = standard_normal(rng);
      y[i] = standard_normal(rng);
    }
    const double mi = binned_mutual_information(x, y);
    sum += mi;
    worst = std::max(worst, mi);
  }
  CHECK(std::abs(sum / reps) < 0.02);
  CHECK(worst < 0.1);
  // Identical variables: MI equals the (corrected) entropy of 16 equal bins.
  Vec x(n);
  for (Index i = 0; i < n; ++i) x[i] = standard_normal(rng);
  const double mi_self = binned_mutual_information(x, x);
  CHECK(mi_self == doctest::Approx(std::log(16.0) + 15.0 / (2.0 * n)).epsilon(1e-3));
  // Bivariate normal with rho = 0.8: true MI = -0.5 log(1 - rho^2) = 0.51;
  // a 16-bin histogram sees most of it.
  Vec y(n);
  for (Index i = 0; i < n; ++i) y[i] = 0.8 * x[i] + 0.6 * standard_normal(rng);
  const double mi_corr = binned_mutual_information(x, y);
  CHECK(mi_corr > 0.35);
  CHECK(mi_corr < 0.6);
}

TEST_CASE("feature screening: informative, noise, and redundant columns") {
  Rng rng(8);
  const Index T = 1200;
  AlignedPanel p;
  p.calendar = business_days(parse_date("2012-01-02"), static_cast<int>(T));
  p.values.resize(T, 5);
  p.masks = Mat::Ones(T, 5);
  Mat targets(T, 2);
  for (Index t = 0; t < T; ++t) {
    const double y = standard_normal(rng);
    targets(t, 0) = y;
    targets(t, 1) = standard_normal(rng);
    p.values(t, 0) = y;                                  // equals the 1-day target
    p.values(t, 1) = standard_normal(rng);               // noise
    p.values(t, 2) = y;                                  // exact copy of column 0
    p.values(t, 3) = y;                                  // copy, other block
    p.values(t, 4) = 0.7 * y + 0.7 * standard_normal(rng);  // informative, rho ~ 0.7
  }
  p.columns = {{"y1", "price", ""}, {"noise", "price", ""}, {"copy", "price", ""}, {"copy_macro", "macro", ""},
               {"partial", "price", ""}};
  const ScreenResult r = screen_features(p, targets, iota_indices(T));
  CHECK(r.retained == std::vector<Index>{0, 3, 4});
  CHECK(r.dropped_low_mi == std::vector<Index>{1});
  REQUIRE(r.dropped_redundant.size() == 1);
  CHECK(r.dropped_redundant[0] == std::pair<Index, Index>{2, 0});
  CHECK(r.max_mi[0] > 2.0);
}

TEST_CASE("log-price targets") {
  Vec prices(5);
  prices << 1.0, 2.0, 4.0, 8.0, 16.0;
  Mat y;
  Vec base;
  make_log_targets(prices, {1, 3}, y, base);
  CHECK(base[2] == doctest::Approx(std::log(4.0)));
  CHECK(y(0, 0) == doctest::Approx(std::log(2.0)));
  CHECK(y(1, 1) == doctest::Approx(std::log(16.0)));
  CHECK(std::isnan(y(2, 1)));
  CHECK(std::isnan(y(4, 0)));
  prices[0] = -1;
  CHECK_THROWS_AS(make_log_targets(prices, {1}, y, base), DataError);
}
