#include "slff/eval.hpp"

#include <cmath>
#include <limits>

namespace slff {

std::string to_string(PathKind k) {
  switch (k) {
    case PathKind::deployed: return "deployed";
    case PathKind::refined: return "refined";
    default: return "baseline";
  }
}

void ForecastSet::validate() const {
  const Index n = predicted.rows(), N = predicted.cols();
  if (n == 0) throw InvalidArgument("forecast set: empty");
  require_shape(realized.rows() == n && realized.cols() == N && base.size() == n &&
                    static_cast<Index>(horizons.size()) == N,
                "forecast set: inconsistent shapes");
  require_shape(dates.empty() || static_cast<Index>(dates.size()) == n, "forecast set: one date per row");
  if (!predicted.allFinite() || !realized.allFinite() || !base.allFinite())
    throw DataError("forecast set: non-finite entries");
}

ForecastSet forecast_set_from_paths(const WindowedData& data, const Mat& forecast, const std::vector<int>& horizons,
                                    PathKind kind) {
  require_shape(forecast.cols() == data.size() && forecast.rows() == data.num_horizons(),
                "forecast set: forecast does not match the data");
  const std::vector<Index> idx = iota_indices(data.size());
  ForecastSet f;
  f.horizons = horizons;
  f.path = kind;
  f.base = data.base(idx);
  f.predicted = forecast.transpose();
  f.predicted.colwise() += f.base;
  f.realized = data.targets(idx).transpose();
  f.realized.colwise() += f.base;
  for (Index i = 0; i < data.size(); ++i) f.dates.push_back(data.label(i));
  f.validate();
  return f;
}

AccuracyMetrics accuracy_metrics(const ForecastSet& f) {
  f.validate();
  const Mat e = f.predicted - f.realized;
  const double n = static_cast<double>(e.rows());
  AccuracyMetrics m;
  for (Index k = 0; k < e.cols(); ++k) {
    m.rmse.push_back(std::sqrt(e.col(k).squaredNorm() / n));
    m.mae.push_back(e.col(k).cwiseAbs().sum() / n);
  }
  m.pooled_rmse = std::sqrt(e.squaredNorm() / static_cast<double>(e.size()));
  m.pooled_mae = e.cwiseAbs().sum() / static_cast<double>(e.size());
  return m;
}

void DirectionalConfig::validate() const {
  if (!(epsilon_zero >= 0.0)) throw InvalidArgument("epsilon_zero must be >= 0");
}

double matthews_corrcoef(const Confusion& c) {
  const double tp = double(c.tp), tn = double(c.tn), fp = double(c.fp), fn = double(c.fn);
  const double den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  return den > 0.0 ? (tp * tn - fp * fn) / std::sqrt(den) : 0.0;
}

DirectionalMetrics directional_metrics(const ForecastSet& f, Index horizon, const DirectionalConfig& cfg) {
  f.validate();
  cfg.validate();
  if (horizon < 0 || horizon >= f.predicted.cols()) throw InvalidArgument("directional: horizon out of range");
  DirectionalMetrics d;
  d.n = static_cast<long>(f.size());
  long no_change = 0;
  for (Index t = 0; t < f.size(); ++t) {
    const double real = f.realized(t, horizon) - f.base[t];
    if (std::abs(real) <= cfg.epsilon_zero) {
      ++no_change;
      continue;
    }
    const bool pred_up = f.predicted(t, horizon) - f.base[t] > 0.0;
    const bool real_up = real > 0.0;
    if (real_up) (pred_up ? d.confusion.tp : d.confusion.fn)++;
    else (pred_up ? d.confusion.fp : d.confusion.tn)++;
  }
  d.nc_rate = static_cast<double>(no_change) / static_cast<double>(d.n);
  const Confusion& c = d.confusion;
  const long moving = c.tp + c.fn + c.fp + c.tn;
  if (moving == 0) throw DegenerateError("directional: every day is no-change; DA is undefined");
  d.da_excl = static_cast<double>(c.tp + c.tn) / static_cast<double>(moving);
  d.up_hit = c.tp + c.fn > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn)
                             : std::numeric_limits<double>::quiet_NaN();
  d.down_hit = c.tn + c.fp > 0 ? static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp)
                               : std::numeric_limits<double>::quiet_NaN();
  d.mcc = matthews_corrcoef(c);
  // Hard 0/1 probabilities: the Brier score is the directional error rate.
  d.brier = 1.0 - d.da_excl;
  return d;
}

std::vector<CalibrationBin> calibration_curve(const Vec& prob, const Vec& outcome, int bins) {
  require_shape(prob.size() == outcome.size(), "calibration: length mismatch");
  if (bins < 1) throw InvalidArgument("calibration: bins must be positive");
  std::vector<double> sp(bins, 0.0), so(bins, 0.0);
  std::vector<long> cnt(bins, 0);
  for (Index i = 0; i < prob.size(); ++i) {
    if (!(prob[i] >= 0.0 && prob[i] <= 1.0)) throw InvalidArgument("calibration: probabilities must lie in [0, 1]");
    const int b = std::min(bins - 1, static_cast<int>(prob[i] * bins));
    sp[b] += prob[i];
    so[b] += outcome[i];
    ++cnt[b];
  }
  std::vector<CalibrationBin> out;
  for (int b = 0; b < bins; ++b)
    if (cnt[b] > 0) out.push_back({sp[b] / double(cnt[b]), so[b] / double(cnt[b]), cnt[b]});
  return out;
}

GapReport deployed_vs_refined(const ForecastSet& deployed, const ForecastSet& refined) {
  require_shape(deployed.size() == refined.size() && deployed.horizons == refined.horizons,
                "deployed vs refined: sets are not aligned");
  if (deployed.dates != refined.dates) throw InvalidArgument("deployed vs refined: dates differ");
  if (deployed.realized != refined.realized) throw InvalidArgument("deployed vs refined: realized values differ");
  const AccuracyMetrics a = accuracy_metrics(deployed), b = accuracy_metrics(refined);
  GapReport g;
  g.rmse_deployed = a.rmse;
  g.rmse_refined = b.rmse;
  g.mae_deployed = a.mae;
  g.mae_refined = b.mae;
  for (std::size_t k = 0; k < a.rmse.size(); ++k) {
    g.delta_rmse.push_back(a.rmse[k] - b.rmse[k]);
    g.delta_rmse_pct.push_back(b.rmse[k] > 0.0 ? 100.0 * (a.rmse[k] - b.rmse[k]) / b.rmse[k] : 0.0);
    g.delta_mae.push_back(a.mae[k] - b.mae[k]);
  }
  g.pooled_delta_rmse = a.pooled_rmse - b.pooled_rmse;
  return g;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

DmResult dm_test(const Vec& loss_a, const Vec& loss_b, int horizon) {
  require_shape(loss_a.size() == loss_b.size(), "dm test: series lengths differ");
  if (horizon < 1) throw InvalidArgument("dm test: horizon must be >= 1");
  const Index n = loss_a.size();
  if (n < 2) throw InvalidArgument("dm test: need at least two observations");
  const Vec d = loss_a - loss_b;
  if (!d.allFinite()) throw DataError("dm test: non-finite losses");
  DmResult r;
  r.mean_diff = d.mean();
  const Vec c = d.array() - r.mean_diff;
  const Index L = std::min<Index>(horizon - 1, n - 1);
  double var = c.squaredNorm() / double(n);
  for (Index k = 1; k <= L; ++k) {
    const double gk = c.head(n - k).dot(c.tail(n - k)) / double(n);
    var += 2.0 * (1.0 - double(k) / double(L + 1)) * gk;
  }
  r.hac_variance = var;
  // Rounding leaves a tiny positive variance for constant differentials.
  if (!(var > 1e-20 * d.squaredNorm() / double(n))) {
    if (r.mean_diff == 0.0) return r;  // identical losses: no evidence either way
    throw DegenerateError("dm test: zero HAC variance with a nonzero mean differential");
  }
  r.statistic = r.mean_diff / std::sqrt(var / double(n));
  r.p_value = 1.0 - normal_cdf(r.statistic);
  return r;
}

// --- Baselines -------------------------------------------------------------------

Mat persistence_forecast(const WindowedData& data) { return Mat::Zero(data.num_horizons(), data.size()); }

Mat flatten_windows(const WindowedData& data) {
  const Index W = data.window(), d = data.num_features();
  Mat x(data.size(), W * d);
  for (Index i = 0; i < data.size(); ++i) {
    const SampleRef& s = data.samples()[static_cast<std::size_t>(i)];
    const SeriesPanel& p = data.panel(s.panel);
    for (Index w = 0; w < W; ++w) x.row(i).segment(w * d, d) = p.features.row(s.end - W + 1 + w);
  }
  return x;
}

Mat RidgeBaseline::predict(const WindowedData& data) const {
  Mat x = flatten_windows(data);
  x.rowwise() -= x_mean.transpose();
  Mat y = (x * coef).transpose();
  y.colwise() += y_mean;
  return y;
}

RidgeBaseline fit_ridge(const WindowedData& train, const WindowedData& val, const std::vector<double>& grid) {
  if (grid.empty()) throw InvalidArgument("ridge: empty lambda grid");
  Mat x = flatten_windows(train);
  Mat y = train.targets(iota_indices(train.size())).transpose();
  RidgeBaseline r;
  r.x_mean = x.colwise().mean().transpose();
  r.y_mean = y.colwise().mean().transpose();
  x.rowwise() -= r.x_mean.transpose();
  y.rowwise() -= r.y_mean.transpose();
  const Mat gram = x.transpose() * x;
  const Mat xty = x.transpose() * y;
  const Mat yv = val.targets(iota_indices(val.size()));
  double best = std::numeric_limits<double>::infinity();
  Mat best_coef;
  for (double lambda : grid) {
    if (!(lambda > 0.0)) throw InvalidArgument("ridge: lambda must be positive");
    const Mat a = gram + lambda * Mat::Identity(gram.rows(), gram.cols());
    RidgeBaseline cand = r;
    cand.coef = a.ldlt().solve(xty);
    const double rmse = pooled_rmse(cand.predict(val), yv);
    r.validation_curve.emplace_back(lambda, rmse);
    if (rmse < best) {
      best = rmse;
      best_coef = cand.coef;
      r.lambda = lambda;
    }
  }
  r.coef = std::move(best_coef);
  return r;
}

}  // namespace slff
