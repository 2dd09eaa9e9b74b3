#include "slff/dataproto.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <tuple>

namespace slff {

using nlohmann::json;

std::string to_string(Frequency f) {
  switch (f) {
    case Frequency::daily: return "daily";
    case Frequency::weekly: return "weekly";
    case Frequency::monthly: return "monthly";
    default: return "quarterly";
  }
}

Frequency frequency_from_string(const std::string& s) {
  if (s == "daily") return Frequency::daily;
  if (s == "weekly") return Frequency::weekly;
  if (s == "monthly") return Frequency::monthly;
  if (s == "quarterly") return Frequency::quarterly;
  throw DataError("unknown frequency '" + s + "'");
}

namespace {

using namespace std::chrono;

int parse_int(const std::string& s, std::size_t pos, std::size_t len, const std::string& what) {
  if (pos + len > s.size()) throw DataError("bad " + what + " '" + s + "'");
  int v = 0;
  for (std::size_t i = pos; i < pos + len; ++i) {
    if (s[i] < '0' || s[i] > '9') throw DataError("bad " + what + " '" + s + "'");
    v = v * 10 + (s[i] - '0');
  }
  return v;
}

struct ReleaseKey {
  Date day;
  int seconds = 0;
  auto operator<=>(const ReleaseKey&) const = default;
};

ReleaseKey parse_release(const std::string& ts) {
  ReleaseKey k{parse_date(ts.substr(0, std::min<std::size_t>(ts.size(), 10))), 0};
  if (ts.size() == 10) return k;
  if (ts.size() < 16 || (ts[10] != 'T' && ts[10] != ' ') || ts[13] != ':')
    throw DataError("bad release timestamp '" + ts + "'");
  const int hh = parse_int(ts, 11, 2, "release timestamp");
  const int mm = parse_int(ts, 14, 2, "release timestamp");
  int ss = 0;
  if (ts.size() >= 19) {
    if (ts[16] != ':') throw DataError("bad release timestamp '" + ts + "'");
    ss = parse_int(ts, 17, 2, "release timestamp");
  }
  if (ts.size() != 16 && ts.size() != 19) throw DataError("bad release timestamp '" + ts + "'");
  if (hh > 23 || mm > 59 || ss > 59) throw DataError("bad release timestamp '" + ts + "'");
  k.seconds = hh * 3600 + mm * 60 + ss;
  return k;
}

// Ordering of candidate values: latest reference period, then latest
// vintage, then later position in the file.
using CandidateKey = std::tuple<Date, ReleaseKey, std::size_t>;

struct Prepared {
  std::vector<Date> period_end;
  std::vector<ReleaseKey> release;
};

Prepared prepare(const VintageSeries& s) {
  Prepared p;
  for (const Observation& o : s.observations) {
    p.period_end.push_back(reference_period_end(o.reference_period));
    p.release.push_back(parse_release(o.release_timestamp));
  }
  return p;
}

bool same_value(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

}  // namespace

Date reference_period_end(const std::string& period) {
  if (period.size() == 10) return parse_date(period);
  const int y = parse_int(period, 0, 4, "reference period");
  if (period.size() == 7 && period[4] == '-' && period[5] == 'Q') {
    const int q = parse_int(period, 6, 1, "reference period");
    if (q < 1 || q > 4) throw DataError("bad reference period '" + period + "'");
    return Date{year{y} / month{static_cast<unsigned>(3 * q)} / last};
  }
  if (period.size() == 7 && period[4] == '-') {
    const int m = parse_int(period, 5, 2, "reference period");
    if (m < 1 || m > 12) throw DataError("bad reference period '" + period + "'");
    return Date{year{y} / month{static_cast<unsigned>(m)} / last};
  }
  throw DataError("bad reference period '" + period + "'");
}

Date release_day(const std::string& timestamp) { return parse_release(timestamp).day; }

void VintageSeries::validate() const {
  if (series_id.empty()) throw DataError("series without an id");
  for (const Observation& o : observations) {
    const Date end = reference_period_end(o.reference_period);
    const Date rel = release_day(o.release_timestamp);
    if (rel < end)
      throw DataError("series " + series_id + ": release " + o.release_timestamp + " precedes the end of period " +
                      o.reference_period);
    if (!std::isfinite(o.value))
      throw DataError("series " + series_id + ": non-finite value for period " + o.reference_period);
  }
}

std::vector<Index> AlignedPanel::rows_in_years(int first_year, int last_year) const {
  std::vector<Index> rows;
  for (std::size_t t = 0; t < calendar.size(); ++t) {
    const int y = year_of(calendar[t]);
    if (y >= first_year && y <= last_year) rows.push_back(static_cast<Index>(t));
  }
  return rows;
}

namespace {

void check_calendar(const std::vector<Date>& calendar) {
  if (calendar.empty()) throw DataError("align: empty calendar");
  for (std::size_t t = 1; t < calendar.size(); ++t)
    if (!(calendar[t - 1] < calendar[t])) throw DataError("align: calendar must be sorted and unique");
}

// Calendar row at which a release becomes usable (calendar.size() if never).
std::size_t usable_row(const std::vector<Date>& calendar, Date day) {
  return static_cast<std::size_t>(std::lower_bound(calendar.begin(), calendar.end(), day) - calendar.begin());
}

// Mask rule: the release is flagged on its usable row, except for releases
// that predate the calendar (usable from row 0 but not "released that day").
bool flags_row(const std::vector<Date>& calendar, Date day, std::size_t row) {
  if (row >= calendar.size()) return false;
  return row == 0 ? day == calendar[0] : day > calendar[row - 1];
}

}  // namespace

AlignedPanel align(const std::vector<VintageSeries>& series, const std::vector<Date>& calendar) {
  check_calendar(calendar);
  const std::size_t T = calendar.size();
  AlignedPanel panel;
  panel.calendar = calendar;
  panel.values = Mat::Constant(static_cast<Index>(T), static_cast<Index>(series.size()),
                               std::numeric_limits<double>::quiet_NaN());
  panel.masks = Mat::Zero(static_cast<Index>(T), static_cast<Index>(series.size()));
  std::set<std::string> ids;
  for (std::size_t j = 0; j < series.size(); ++j) {
    const VintageSeries& s = series[j];
    s.validate();
    if (!ids.insert(s.series_id).second) throw DataError("align: duplicate series id " + s.series_id);
    panel.columns.push_back({s.series_id, s.block, s.lag_policy});
    const Prepared p = prepare(s);

    std::vector<std::vector<std::size_t>> arriving(T);
    for (std::size_t i = 0; i < s.observations.size(); ++i) {
      const std::size_t row = usable_row(calendar, p.release[i].day);
      if (row >= T) continue;
      arriving[row].push_back(i);
      if (calendar[row] != p.release[i].day && row > 0)
        panel.notes.push_back(s.series_id + ": release " + s.observations[i].release_timestamp +
                              " falls on a non-trading day; used from " + format_date(calendar[row]));
    }
    bool have = false;
    CandidateKey best{};
    double value = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t i : arriving[t]) {
        const CandidateKey key{p.period_end[i], p.release[i], i};
        if (!have || best < key) {
          best = key;
          value = s.observations[i].value;
          have = true;
        }
        if (flags_row(calendar, p.release[i].day, t)) panel.masks(static_cast<Index>(t), static_cast<Index>(j)) = 1.0;
      }
      if (have) panel.values(static_cast<Index>(t), static_cast<Index>(j)) = value;
    }
    if (!have) panel.notes.push_back(s.series_id + ": no release before the calendar end; column is all-missing");
  }
  return panel;
}

std::string AuditReport::to_json() const {
  json v = json::array();
  for (const AuditEntry& e : violations)
    v.push_back({{"date", e.date}, {"series_id", e.series_id}, {"kind", e.kind}, {"detail", e.detail}});
  json j{{"cells_checked", cells_checked}, {"violations", v}, {"notes", notes}, {"clean", clean()}};
  return j.dump(2);
}

AuditReport audit_leakage(const AlignedPanel& panel, const std::vector<VintageSeries>& series) {
  AuditReport report;
  report.notes = panel.notes;
  const std::size_t T = panel.calendar.size();
  require_shape(panel.values.rows() == static_cast<Index>(T) && panel.masks.rows() == static_cast<Index>(T),
                "audit: panel rows do not match its calendar");
  for (std::size_t j = 0; j < panel.columns.size(); ++j) {
    const std::string& id = panel.columns[j].series_id;
    const auto it = std::find_if(series.begin(), series.end(), [&](const VintageSeries& s) { return s.series_id == id; });
    if (it == series.end()) {
      report.violations.push_back({"", id, "mismatch", "column has no source series"});
      continue;
    }
    const VintageSeries& s = *it;
    const Prepared p = prepare(s);
    for (std::size_t t = 0; t < T; ++t) {
      const Date day = panel.calendar[t];
      // Direct scan over every release.
      bool have = false, released_today = false;
      CandidateKey best{};
      double expected = std::numeric_limits<double>::quiet_NaN();
      for (std::size_t i = 0; i < s.observations.size(); ++i) {
        const Date rel = p.release[i].day;
        if (rel > day) continue;
        const bool after_prev = t == 0 ? rel == day : rel > panel.calendar[t - 1];
        released_today = released_today || after_prev;
        const CandidateKey key{p.period_end[i], p.release[i], i};
        if (!have || best < key) {
          best = key;
          expected = s.observations[i].value;
          have = true;
        }
      }
      ++report.cells_checked;
      const double got = panel.values(static_cast<Index>(t), static_cast<Index>(j));
      if (!same_value(got, expected)) {
        std::string offending;
        for (std::size_t i = 0; i < s.observations.size(); ++i) {
          if (p.release[i].day > day && same_value(s.observations[i].value, got)) {
            offending = s.observations[i].reference_period + " released " + s.observations[i].release_timestamp;
            break;
          }
        }
        if (!offending.empty())
          report.violations.push_back({format_date(day), id, "leak", "value from " + offending});
        else
          report.violations.push_back({format_date(day), id, "mismatch",
                                       "panel " + format_double(got) + ", expected " + format_double(expected)});
      }
      const double mask = panel.masks(static_cast<Index>(t), static_cast<Index>(j));
      if (mask != (released_today ? 1.0 : 0.0))
        report.violations.push_back({format_date(day), id, "mask",
                                     "mask " + format_double(mask) + ", expected " + (released_today ? "1" : "0")});
    }
  }
  return report;
}

// --- Folds ---------------------------------------------------------------------

FoldSchedule make_folds(int first_year, int last_year, int train_years, int step) {
  if (train_years < 1 || step < 1) throw InvalidArgument("make_folds: train_years and step must be positive");
  FoldSchedule s;
  for (int test = last_year; test - 1 - train_years >= first_year; test -= step)
    s.folds.push_back({0, test - 1 - train_years, test - 2, test - 1, test});
  if (s.folds.empty())
    throw DataError("make_folds: span " + std::to_string(first_year) + "-" + std::to_string(last_year) +
                    " is too short for one fold");
  std::reverse(s.folds.begin(), s.folds.end());
  for (std::size_t i = 0; i < s.folds.size(); ++i) s.folds[i].index = static_cast<int>(i) + 1;
  return s;
}

FoldSchedule make_folds(const AlignedPanel& panel, int train_years, int step) {
  if (panel.calendar.empty()) throw DataError("make_folds: empty panel");
  return make_folds(year_of(panel.calendar.front()), year_of(panel.calendar.back()), train_years, step);
}

// --- Preprocessing -------------------------------------------------------------

namespace {

double quantile_sorted(const std::vector<double>& v, double q) {
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(v.size() - 1, lo + 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

AlignedPanel select_columns(const AlignedPanel& panel, const std::vector<Index>& cols) {
  AlignedPanel out;
  out.calendar = panel.calendar;
  out.notes = panel.notes;
  out.values.resize(panel.length(), static_cast<Index>(cols.size()));
  out.masks.resize(panel.length(), static_cast<Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) {
    if (cols[k] < 0 || cols[k] >= panel.width()) throw InvalidArgument("select_columns: column out of range");
    out.values.col(static_cast<Index>(k)) = panel.values.col(cols[k]);
    out.masks.col(static_cast<Index>(k)) = panel.masks.col(cols[k]);
    out.columns.push_back(panel.columns[static_cast<std::size_t>(cols[k])]);
  }
  return out;
}

PreprocessResult preprocess(const AlignedPanel& panel, const Fold& fold, const PreprocessOptions& opts) {
  const std::vector<Index> train = panel.rows_in_years(fold.train_first, fold.train_last);
  if (train.empty()) throw DataError("preprocess: the fold's train years are not in the panel");
  if (panel.rows_in_years(fold.test_year, fold.test_year).empty())
    throw DataError("preprocess: the fold's test year is not in the panel");
  PreprocessResult res;
  for (Index j = 0; j < panel.width(); ++j) {
    const std::string& id = panel.columns[static_cast<std::size_t>(j)].series_id;
    std::vector<double> vals;
    for (Index t : train)
      if (std::isfinite(panel.values(t, j))) vals.push_back(panel.values(t, j));
    const double missing = 1.0 - static_cast<double>(vals.size()) / static_cast<double>(train.size());
    if (missing > opts.max_missing) {
      res.warnings.push_back(id + ": dropped, " + format_double(100.0 * missing) + "% missing in train");
      continue;
    }
    const double mean = std::accumulate(vals.begin(), vals.end(), 0.0) / static_cast<double>(vals.size());
    double ss = 0.0;
    for (double v : vals) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(vals.size()));
    if (!(sd > 1e-12 * (1.0 + std::abs(mean)))) {
      res.warnings.push_back(id + ": dropped, zero variance in train");
      continue;
    }
    std::vector<double> z;
    z.reserve(vals.size());
    for (double v : vals) z.push_back((v - mean) / sd);
    std::sort(z.begin(), z.end());
    res.kept.push_back(j);
    res.stats.push_back({mean, sd, quantile_sorted(z, opts.winsor_tail), quantile_sorted(z, 1.0 - opts.winsor_tail)});
  }
  res.panel = select_columns(panel, res.kept);
  for (std::size_t k = 0; k < res.kept.size(); ++k) {
    const ColumnStats& st = res.stats[k];
    auto col = res.panel.values.col(static_cast<Index>(k));
    for (Index t = 0; t < col.size(); ++t)
      col[t] = std::isfinite(col[t]) ? std::clamp((col[t] - st.mean) / st.std, st.lo, st.hi) : 0.0;
  }
  return res;
}

// --- Screening ---------------------------------------------------------------

namespace {

std::vector<int> equal_frequency_bins(const std::vector<double>& v, int bins) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<int> bin(n);
  std::size_t first = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (k > 0 && v[order[k]] != v[order[k - 1]]) first = k;  // ties share a bin
    bin[order[k]] = static_cast<int>(first * static_cast<std::size_t>(bins) / n);
  }
  return bin;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return saa > 0 && sbb > 0 ? sab / std::sqrt(saa * sbb) : 0.0;
}

}  // namespace

double binned_mutual_information(const Vec& x, const Vec& y, int bins) {
  require_shape(x.size() == y.size(), "mutual information: length mismatch");
  if (bins < 2) throw InvalidArgument("mutual information: need at least 2 bins");
  std::vector<double> xs, ys;
  for (Index i = 0; i < x.size(); ++i)
    if (std::isfinite(x[i]) && std::isfinite(y[i])) {
      xs.push_back(x[i]);
      ys.push_back(y[i]);
    }
  const std::size_t n = xs.size();
  if (n < 2) return 0.0;
  const auto bx = equal_frequency_bins(xs, bins), by = equal_frequency_bins(ys, bins);
  Mat joint = Mat::Zero(bins, bins);
  for (std::size_t i = 0; i < n; ++i) joint(bx[i], by[i]) += 1.0;
  const Vec px = joint.rowwise().sum(), py = joint.colwise().sum().transpose();
  const double N = static_cast<double>(n);
  const auto entropy = [N](const auto& counts, int& occupied) {
    double h = 0.0;
    occupied = 0;
    for (Index i = 0; i < counts.size(); ++i) {
      const double c = counts(i);
      if (c > 0) {
        h -= c / N * std::log(c / N);
        ++occupied;
      }
    }
    return h;
  };
  int mx = 0, my = 0, mxy = 0;
  const double hx = entropy(px, mx), hy = entropy(py, my);
  const Eigen::Map<const Vec> flat(joint.data(), joint.size());
  const double hxy = entropy(flat, mxy);
  // Miller-Madow: each entropy gains (occupied - 1) / (2N).
  return (hx + (mx - 1) / (2 * N)) + (hy + (my - 1) / (2 * N)) - (hxy + (mxy - 1) / (2 * N));
}

ScreenResult screen_features(const AlignedPanel& panel, const Mat& targets, const std::vector<Index>& rows,
                             const ScreenOptions& opts) {
  require_shape(targets.rows() == panel.length(), "screen: targets must have one row per panel row");
  ScreenResult res;
  const auto gather = [&](const auto& col) {
    Vec v(static_cast<Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) v[static_cast<Index>(i)] = col[rows[i]];
    return v;
  };
  std::vector<Index> informative;
  for (Index j = 0; j < panel.width(); ++j) {
    const Vec x = gather(panel.values.col(j));
    double best = -std::numeric_limits<double>::infinity();
    for (Index k = 0; k < targets.cols(); ++k)
      best = std::max(best, binned_mutual_information(x, gather(targets.col(k)), opts.bins));
    res.max_mi.push_back(best);
    (best > opts.min_mi ? informative : res.dropped_low_mi).push_back(j);
  }
  for (Index j : informative) {
    bool keep = true;
    for (Index i : res.retained) {
      if (panel.columns[static_cast<std::size_t>(i)].block != panel.columns[static_cast<std::size_t>(j)].block) continue;
      std::vector<double> a, b;
      for (Index t : rows) {
        const double u = panel.values(t, i), v = panel.values(t, j);
        if (std::isfinite(u) && std::isfinite(v)) {
          a.push_back(u);
          b.push_back(v);
        }
      }
      if (a.size() > 2 && std::abs(pearson(a, b)) >= opts.max_abs_corr) {
        res.dropped_redundant.emplace_back(j, i);
        keep = false;
        break;
      }
    }
    if (keep) res.retained.push_back(j);
  }
  return res;
}

void make_log_targets(const Vec& prices, const std::vector<int>& horizons, Mat& targets, Vec& base) {
  const Index T = prices.size();
  if ((prices.array() <= 0.0).any()) throw DataError("log targets: prices must be positive");
  base = prices.array().log().matrix();
  targets = Mat::Constant(T, static_cast<Index>(horizons.size()), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t k = 0; k < horizons.size(); ++k) {
    if (horizons[k] <= 0) throw InvalidArgument("log targets: horizons must be positive");
    for (Index t = 0; t + horizons[k] < T; ++t) targets(t, static_cast<Index>(k)) = base[t + horizons[k]];
  }
}

// --- Files -------------------------------------------------------------------

std::vector<VintageSeries> load_series_dir(const std::filesystem::path& dir) {
  const CsvTable cat = read_csv(dir / "catalog.csv");
  const std::size_t c_id = cat.column("series_id"), c_freq = cat.column("frequency");
  std::vector<VintageSeries> out;
  for (const auto& row : cat.rows) {
    VintageSeries s;
    s.series_id = row[c_id];
    s.frequency = frequency_from_string(row[c_freq]);
    for (const auto& h : cat.header) {
      if (h == "block") s.block = row[cat.column("block")];
      if (h == "lag_policy") s.lag_policy = row[cat.column("lag_policy")];
    }
    const CsvTable obs = read_csv(dir / (s.series_id + ".csv"));
    const std::size_t c_ref = obs.column("reference_period"), c_val = obs.column("value"),
                      c_rel = obs.column("release_timestamp");
    for (const auto& r : obs.rows) {
      const double v = parse_double(r[c_val]);
      if (!std::isfinite(v)) throw DataError("series " + s.series_id + ": missing value for " + r[c_ref]);
      s.observations.push_back({r[c_ref], v, r[c_rel]});
    }
    s.validate();
    out.push_back(std::move(s));
  }
  return out;
}

void save_series_dir(const std::vector<VintageSeries>& series, const std::filesystem::path& dir) {
  CsvTable cat;
  cat.header = {"series_id", "frequency", "block", "lag_policy"};
  for (const VintageSeries& s : series) {
    cat.rows.push_back({s.series_id, to_string(s.frequency), s.block, s.lag_policy});
    CsvTable obs;
    obs.header = {"reference_period", "value", "release_timestamp"};
    for (const Observation& o : s.observations)
      obs.rows.push_back({o.reference_period, format_double(o.value), o.release_timestamp});
    write_file(dir / (s.series_id + ".csv"), format_csv(obs));
  }
  write_file(dir / "catalog.csv", format_csv(cat));
}

std::vector<Date> load_calendar(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  const std::size_t c = t.column("date");
  std::vector<Date> out;
  for (const auto& r : t.rows) out.push_back(parse_date(r[c]));
  check_calendar(out);
  return out;
}

void save_panel(const AlignedPanel& panel, const std::filesystem::path& dir) {
  const auto table = [&](const Mat& m) {
    CsvTable t;
    t.header.push_back("date");
    for (const ColumnMeta& c : panel.columns) t.header.push_back(c.series_id);
    for (Index r = 0; r < m.rows(); ++r) {
      std::vector<std::string> row{format_date(panel.calendar[static_cast<std::size_t>(r)])};
      for (Index j = 0; j < m.cols(); ++j) row.push_back(format_double(m(r, j)));
      t.rows.push_back(std::move(row));
    }
    return format_csv(t);
  };
  write_file(dir / "values.csv", table(panel.values));
  write_file(dir / "masks.csv", table(panel.masks));
  CsvTable meta;
  meta.header = {"series_id", "block", "lag_policy"};
  for (const ColumnMeta& c : panel.columns) meta.rows.push_back({c.series_id, c.block, c.lag_policy});
  write_file(dir / "columns.csv", format_csv(meta));
}

AlignedPanel load_panel(const std::filesystem::path& dir) {
  AlignedPanel p;
  const CsvTable meta = read_csv(dir / "columns.csv");
  for (const auto& r : meta.rows) p.columns.push_back({r[0], r[1], r[2]});
  const auto load = [&](const std::string& name, Mat& m) {
    const CsvTable t = read_csv(dir / name);
    if (t.header.size() != p.columns.size() + 1) throw DataError("panel: " + name + " has unexpected columns");
    m.resize(static_cast<Index>(t.rows.size()), static_cast<Index>(p.columns.size()));
    std::vector<Date> cal;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      cal.push_back(parse_date(t.rows[r][0]));
      for (std::size_t j = 0; j < p.columns.size(); ++j)
        m(static_cast<Index>(r), static_cast<Index>(j)) = parse_double(t.rows[r][j + 1]);
    }
    return cal;
  };
  p.calendar = load("values.csv", p.values);
  if (load("masks.csv", p.masks) != p.calendar) throw DataError("panel: values and masks calendars differ");
  check_calendar(p.calendar);
  return p;
}

}  // namespace slff
