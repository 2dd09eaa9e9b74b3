#pragma once

// Information-set pipeline: vintage storage, release-aware alignment onto a
// trading calendar, leakage audit, per-fold preprocessing, feature screening,
// and rolling-origin folds.
//
// A release stamped on calendar day D (any time up to 23:59:59) is usable for
// the row of trading day D; releases on non-trading days are usable from the
// next trading day on.

#include "slff/common.hpp"
#include "slff/io.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace slff {

enum class Frequency { daily, weekly, monthly, quarterly };

std::string to_string(Frequency f);
Frequency frequency_from_string(const std::string& s);

struct Observation {
  std::string reference_period;  // YYYY-MM-DD, YYYY-MM or YYYY-Qn
  double value = 0.0;
  std::string release_timestamp;  // YYYY-MM-DD or YYYY-MM-DDTHH:MM[:SS]
};

struct VintageSeries {
  std::string series_id;
  Frequency frequency = Frequency::daily;
  std::string block;       // redundancy-screening group
  std::string lag_policy;  // informational, e.g. "same_day", "weekly_wed"
  std::vector<Observation> observations;

  // Throws DataError if any release precedes the end of its reference period
  // or a field does not parse.
  void validate() const;
};

// Last calendar day of a reference period.
Date reference_period_end(const std::string& period);
// Calendar day of a release timestamp.
Date release_day(const std::string& timestamp);

struct ColumnMeta {
  std::string series_id;
  std::string block;
  std::string lag_policy;
};

struct AlignedPanel {
  std::vector<Date> calendar;
  Mat values;  // T x d, NaN before the first usable release
  Mat masks;   // T x d, 1 iff a release for the column became usable that day
  std::vector<ColumnMeta> columns;
  std::vector<std::string> notes;  // e.g. releases moved off non-trading days

  Index length() const { return values.rows(); }
  Index width() const { return values.cols(); }
  std::vector<Index> rows_in_years(int first_year, int last_year) const;
};

// Value in force on trading day t: among releases usable by t, the latest
// reference period, and for it the latest vintage.
AlignedPanel align(const std::vector<VintageSeries>& series, const std::vector<Date>& calendar);

struct AuditEntry {
  std::string date;
  std::string series_id;
  std::string kind;  // "leak", "mismatch", "mask"
  std::string detail;
};

struct AuditReport {
  std::vector<AuditEntry> violations;
  std::vector<std::string> notes;
  Index cells_checked = 0;

  bool clean() const { return violations.empty(); }
  std::string to_json() const;
};

// Re-derives every cell from the raw series by direct scan and compares.
// A cell whose value can only have come from a release that was not yet
// usable is a "leak"; other value disagreements are "mismatch"; mask
// disagreements are "mask".
AuditReport audit_leakage(const AlignedPanel& panel, const std::vector<VintageSeries>& series);

// --- Folds ---------------------------------------------------------------------

struct Fold {
  int index = 0;  // 1-based
  int train_first = 0, train_last = 0;
  int val_year = 0;
  int test_year = 0;
};

struct FoldSchedule {
  std::vector<Fold> folds;
};

// train_years/1/1 folds anchored so the last test year is last_year, stepping
// back by `step` years while the train range stays after first_year (the
// first year is burn-in).
FoldSchedule make_folds(int first_year, int last_year, int train_years = 6, int step = 2);
FoldSchedule make_folds(const AlignedPanel& panel, int train_years = 6, int step = 2);

// --- Preprocessing -------------------------------------------------------------

struct ColumnStats {
  double mean = 0.0;
  double std = 1.0;
  double lo = 0.0;  // winsorization bounds in z-score units
  double hi = 0.0;
};

struct PreprocessResult {
  AlignedPanel panel;             // retained columns, z-scored and clipped
  std::vector<Index> kept;        // source column per retained column
  std::vector<ColumnStats> stats;
  std::vector<std::string> warnings;
};

struct PreprocessOptions {
  double max_missing = 0.40;   // drop if the train missing fraction exceeds this
  double winsor_tail = 0.001;  // per tail
};

// Statistics come from the fold's train years only. Remaining missing cells
// (before a column's first release) are set to 0 with mask 0.
PreprocessResult preprocess(const AlignedPanel& panel, const Fold& fold, const PreprocessOptions& opts = {});

// --- Screening ---------------------------------------------------------------

// Mutual information (nats) from a bins x bins equal-frequency histogram with
// the Miller-Madow bias correction. Non-finite pairs are skipped.
double binned_mutual_information(const Vec& x, const Vec& y, int bins = 16);

struct ScreenOptions {
  int bins = 16;
  double min_mi = 0.1;
  double max_abs_corr = 0.85;
};

struct ScreenResult {
  std::vector<Index> retained;
  std::vector<double> max_mi;  // per input column, max over horizons
  std::vector<Index> dropped_low_mi;
  std::vector<std::pair<Index, Index>> dropped_redundant;  // (dropped, kept)
};

// targets: T x N; rows: the train rows. Columns with MI <= min_mi against
// every horizon are dropped; then within each block the later column of any
// pair with |rho| >= max_abs_corr is dropped greedily in column order.
ScreenResult screen_features(const AlignedPanel& panel, const Mat& targets, const std::vector<Index>& rows,
                             const ScreenOptions& opts = {});

AlignedPanel select_columns(const AlignedPanel& panel, const std::vector<Index>& cols);

// Log-price targets on trading-day horizons: target(t, k) = log p_{t+h_k}
// (NaN past the end); base(t) = log p_t.
void make_log_targets(const Vec& prices, const std::vector<int>& horizons, Mat& targets, Vec& base);

// --- Files -------------------------------------------------------------------

// <dir>/catalog.csv: series_id,frequency,block,lag_policy; one
// <dir>/<series_id>.csv per series: reference_period,value,release_timestamp.
std::vector<VintageSeries> load_series_dir(const std::filesystem::path& dir);
void save_series_dir(const std::vector<VintageSeries>& series, const std::filesystem::path& dir);
// CSV with a "date" column.
std::vector<Date> load_calendar(const std::filesystem::path& path);

// values.csv and masks.csv: date column plus one column per series.
void save_panel(const AlignedPanel& panel, const std::filesystem::path& dir);
AlignedPanel load_panel(const std::filesystem::path& dir);

}  // namespace slff
