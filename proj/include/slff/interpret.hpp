#pragma once

// Interpretability protocol: cross-seed stability, driver validity,
// counterfactuals and randomization-test event studies.

#include "slff/data.hpp"
#include "slff/latent_inference.hpp"
#include "slff/model.hpp"

#include <optional>
#include <string>
#include <vector>

namespace slff {

// Rows are dates, columns latent dimensions.
struct FactorPanel {
  std::vector<std::string> dates;
  Mat latents;  // T x m
  double active_threshold = 1e-3;

  Index length() const { return latents.rows(); }
  Index width() const { return latents.cols(); }
  void validate() const;
};

// Panel of deployed (Enc) latents over a windowed dataset, or of refined z*
// (a training-time diagnostic that uses the targets) when refined is set.
FactorPanel factor_panel(const ModelBundle& bundle, const WindowedData& data, const EnergyParams& params,
                         bool refined = false, double active_threshold = 1e-3);

// --- Stability -----------------------------------------------------------------

// Canonical correlations of two sample sets (rows = samples), descending.
// Throws DegenerateError if either centered panel has rank 0.
Vec canonical_correlations(const Mat& a, const Mat& b);

struct PairStability {
  int first = 0, second = 0;
  Vec canonical;                  // held-split canonical correlations
  double mean_canonical = 0.0;
  double max_angle_degrees = 0.0;  // largest principal angle
  Mat rotation;                    // orthogonal, maps panel `second` onto `first`
};

struct StabilityReport {
  std::vector<PairStability> pairs;
  double mean_canonical = 0.0;
  double max_angle_degrees = 0.0;
};

// The rotation per pair is fit by orthogonal Procrustes on the first
// fit_fraction of dates; canonical correlations and angles use the rest.
StabilityReport procrustes_stability(const std::vector<FactorPanel>& panels, double fit_fraction = 0.5);

// --- Driver validity ----------------------------------------------------------------

struct DriverStat {
  int factor = 0;
  std::string driver;
  double r = 0.0;
  double r_squared = 0.0;
  double partial_r = 0.0;      // NaN when undefined
  bool partial_defined = false;
};

struct DriverReport {
  std::vector<DriverStat> stats;  // factor-major
  std::vector<double> signs;      // applied factor orientation (+1 / -1)
  std::vector<std::string> warnings;
};

// Drivers: T x p with names. Controls (T x q, e.g. the decoder inputs) are
// partialled out of both factor and driver by least squares with an
// intercept. A driver whose name appears among feature_names is a contract
// violation. Factors are oriented so that each correlates positively with
// its best (largest |r|) driver before reporting.
DriverReport driver_regression(const FactorPanel& panel, const Mat& drivers,
                               const std::vector<std::string>& driver_names,
                               const std::vector<std::string>& feature_names,
                               const std::optional<Mat>& controls = std::nullopt);

// Pearson correlation; NaN if either side is constant.
double pearson(const Vec& a, const Vec& b);

// Residuals of y after least squares on [1, x].
Vec residualize(const Vec& y, const Mat& x);

// --- Counterfactuals ------------------------------------------------------------------

// Per-dimension standard deviation of deployed latents (typically on train).
Vec factor_std(const ModelBundle& bundle, const WindowedData& data);

// Dec(ẑ + δ σ_k e_k, h) − Dec(ẑ, h) per horizon, deployed path.
Vec counterfactual(const ModelBundle& bundle, const WindowTensor& x, Index factor, double delta,
                   const Vec& factor_stds);

// --- Event studies -----------------------------------------------------------------

struct EventSpec {
  std::vector<std::string> event_dates;
  int half_width = 3;
  Index factor = 0;
  int num_permutations = 1000;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EventStudyResult {
  int num_events = 0;         // after collapsing overlapping windows
  double shift_sd = 0.0;      // (mean in windows - mean outside) / sd
  double t_stat = 0.0;        // Welch
  double p_value = 1.0;       // two-sided randomization p, (1 + #{|null| >= |obs|}) / (1 + P)
  double cohens_d = 0.0;
  std::vector<std::string> warnings;
};

// Event windows are [t - w, t + w]; every window must lie inside the panel.
// The null places the same number of non-overlapping windows uniformly at
// random.
EventStudyResult event_study(const FactorPanel& panel, const EventSpec& spec);

// Same, on event row indices into a plain series.
EventStudyResult event_study(const Vec& factor, const std::vector<Index>& event_rows, int half_width,
                             int num_permutations, std::uint64_t seed);

// One-sample Kolmogorov-Smirnov test against U(0, 1): {D, asymptotic p}.
std::pair<double, double> ks_uniform(std::vector<double> sample);

// --- Sparsity ---------------------------------------------------------------------------

struct ActiveStats {
  double mean_count = 0.0;
  std::vector<int> per_date;
};

ActiveStats active_factor_stats(const FactorPanel& panel);

// --- Reports --------------------------------------------------------------------------

std::string to_json(const StabilityReport& r);
std::string to_json(const DriverReport& r);
std::string to_json(const EventStudyResult& r);
// Factor x driver matrix of r (rows: factors) as CSV.
std::string driver_heatmap_csv(const DriverReport& r, const std::vector<std::string>& driver_names);

}  // namespace slff
