#pragma once

// Forecast accuracy, directional diagnostics, deployed-vs-refined gaps,
// Diebold-Mariano tests and the persistence / ridge baselines.

#include "slff/data.hpp"
#include "slff/training.hpp"

#include <string>
#include <vector>

namespace slff {

enum class PathKind { deployed, refined, baseline };

std::string to_string(PathKind k);

// Rows are dates, columns horizons; all values in log-price units.
struct ForecastSet {
  std::vector<std::string> dates;
  std::vector<int> horizons;
  Mat predicted;  // n x N
  Mat realized;   // n x N
  Vec base;       // n, log p_t
  PathKind path = PathKind::deployed;

  Index size() const { return predicted.rows(); }
  void validate() const;
};

// Builds forecast sets from model-space path outputs (targets minus base).
ForecastSet forecast_set_from_paths(const WindowedData& data, const Mat& model_space_forecast,
                                    const std::vector<int>& horizons, PathKind kind);

struct AccuracyMetrics {
  std::vector<double> rmse, mae;  // per horizon
  double pooled_rmse = 0.0, pooled_mae = 0.0;
};

AccuracyMetrics accuracy_metrics(const ForecastSet& f);

struct DirectionalConfig {
  double epsilon_zero = 1e-4;
  void validate() const;
};

struct Confusion {
  long tp = 0, fn = 0, fp = 0, tn = 0;  // positive class = realized up
};

struct DirectionalMetrics {
  long n = 0;
  double nc_rate = 0.0;
  double da_excl = 0.0;
  double up_hit = 0.0;
  double down_hit = 0.0;
  double mcc = 0.0;
  double brier = 0.0;
  Confusion confusion;  // moving days only
};

// Predicted direction is "up" iff pred - base > 0; realized days with
// |realized - base| <= epsilon_zero are no-change and excluded from every
// rate except nc_rate. Throws DegenerateError if every day is no-change.
DirectionalMetrics directional_metrics(const ForecastSet& f, Index horizon, const DirectionalConfig& cfg = {});

// MCC from a confusion matrix; 0 when a margin is empty.
double matthews_corrcoef(const Confusion& c);

// Reliability curve for probabilistic "up" forecasts. Empty bins are
// omitted; hard 0/1 forecasts collapse onto the two end bins.
struct CalibrationBin {
  double mean_prob = 0.0;
  double frequency = 0.0;
  long count = 0;
};
std::vector<CalibrationBin> calibration_curve(const Vec& prob_up, const Vec& outcome_up, int bins = 10);

struct GapReport {
  std::vector<double> rmse_deployed, rmse_refined, delta_rmse, delta_rmse_pct;
  std::vector<double> mae_deployed, mae_refined, delta_mae;
  double pooled_delta_rmse = 0.0;
};

GapReport deployed_vs_refined(const ForecastSet& deployed, const ForecastSet& refined);

struct DmResult {
  double statistic = 0.0;
  double p_value = 0.5;  // one-sided: H1 is E[loss_a - loss_b] > 0
  double mean_diff = 0.0;
  double hac_variance = 0.0;
};

// Bartlett-kernel HAC variance with truncation lag horizon - 1.
DmResult dm_test(const Vec& loss_a, const Vec& loss_b, int horizon);

double normal_cdf(double x);

// --- Baselines -------------------------------------------------------------------

Mat persistence_forecast(const WindowedData& data);  // model space: all zeros

// Row-major flattening of each window's features (n x W*d).
Mat flatten_windows(const WindowedData& data);

struct RidgeBaseline {
  double lambda = 0.0;
  Vec x_mean;
  Vec y_mean;
  Mat coef;  // (W*d) x N
  std::vector<std::pair<double, double>> validation_curve;  // (lambda, pooled RMSE)

  Mat predict(const WindowedData& data) const;  // model space, N x n
};

RidgeBaseline fit_ridge(const WindowedData& train, const WindowedData& val,
                        const std::vector<double>& lambda_grid = {1e-4, 1e-3, 1e-2, 1e-1, 1, 10, 100, 1000});

}  // namespace slff
