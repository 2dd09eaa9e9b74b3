#pragma once

// Ground-truth sparse-factor DGPs and factor-recovery metrics.
//
//   z_t   : m_true latents, exactly s_active nonzero; support swaps one
//           coordinate every rotation_period steps; active magnitudes are
//           log-normal AR(1) (bounded away from zero) with a sign drawn at
//           activation.
//   h_t   : low-dimensional AR(1) context.
//   x_t   : rank-(m_true + context_dim) expansion of [z_t; h_t] (linear, or
//           tanh-warped for the nonlinear DGP) plus feature noise, followed by
//           AR(1) distractor channels.
//   y_t,τ : f_τ(h_t) + W_τ z_t + σ_y η  (f_τ linear, or a small tanh MLP).

#include "slff/data.hpp"
#include "slff/model.hpp"
#include "slff/training.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace slff {

enum class DgpKind { base, nonlinear, high_d };

std::string to_string(DgpKind k);
DgpKind dgp_kind_from_string(const std::string& s);

struct DgpConfig {
  DgpKind kind = DgpKind::base;
  int m_true = 20;
  int s_active = 5;
  int d = 80;
  double noise_sigma = 0.1;  // σ_y
  std::vector<int> horizons;  // defaults to 1..24 when empty
  int trajectory_length = 250;
  int num_trajectories = 100;
  std::uint64_t seed = 0;

  // Desk-scale knobs not fixed by the target equation.
  int context_dim = 4;
  double feature_noise = 0.1;
  double mixing_scale = 1.0;    // magnitude of nonzero W_τ entries
  double context_scale = 0.5;   // magnitude of f_τ
  double latent_rho = 0.9;
  double context_rho = 0.95;
  double distractor_rho = 0.9;
  int rotation_period = 50;
  std::string start_date;  // optional: business-day dates from this ISO date

  void validate() const;
  std::vector<int> resolved_horizons() const;
  static DgpConfig preset(DgpKind kind);
};

struct Trajectory {
  Mat latents;  // T x m_true
  Mat context;  // T x context_dim
};

struct SyntheticDataset {
  DgpConfig config;
  std::shared_ptr<std::vector<SeriesPanel>> panels;  // one per trajectory
  std::vector<Trajectory> truth;
  Mat mixing;  // N x m_true; row τ is W_τ

  int num_trajectories() const { return static_cast<int>(truth.size()); }
  // Trajectory ids of the 70/15/15 split (0 = train, 1 = validation, 2 = test).
  std::vector<int> split(int which) const;
  WindowedData windows(const std::vector<int>& trajectories, int window) const;
  // True latents at each window's last row, one column per sample.
  Mat true_latents(const WindowedData& data) const;
};

SyntheticDataset generate(const DgpConfig& config);

// Serialization: config.json (with per-file SHA-256 fingerprint), mixing.csv,
// features.csv, targets.csv, latents.csv, context.csv.
void save_dataset(const SyntheticDataset& ds, const std::filesystem::path& dir);
SyntheticDataset load_dataset(const std::filesystem::path& dir);

std::string to_json(const DgpConfig& c);
DgpConfig dgp_config_from_json(const std::string& json_text);

// --- Recovery metrics -------------------------------------------------------
// Samples are rows. Learned latents are centered and whitened on the fit
// split, then rotated onto the standardized true latents by orthogonal
// Procrustes; all metrics are computed on the held split.

struct AlignedLatents {
  Mat fit_learned, fit_true;    // transformed fit split
  Mat held_learned, held_true;  // transformed held split (m_true columns each)
  Mat transform;                // m_learned x m_true: centered learned -> aligned
  Vec learned_mean;
  int learned_rank = 0;
};

// Fit on (learned_fit, truth_fit), report on (learned_held, truth_held).
AlignedLatents procrustes_align(const Mat& learned_fit, const Mat& truth_fit, const Mat& learned_held,
                                const Mat& truth_held);
// Single sample set: the first fit_fraction of rows is the fit split.
AlignedLatents procrustes_align(const Mat& learned, const Mat& truth, double fit_fraction = 0.5);

// Mean cosine of the principal angles between the two column spans
// (centered); angles missing because of low learned rank count as 0.
double principal_angle_cosine(const Mat& a, const Mat& b);

double subspace_alignment(const Mat& learned, const Mat& truth, double fit_fraction = 0.5);

struct FactorMatch {
  std::vector<int> learned_for_true;  // aligned learned dimension per true factor
  std::vector<double> correlation;    // |corr| per true factor
};

// Greedy one-to-one matching on |corr|: repeatedly take the largest
// remaining entry. Constant columns correlate 0 with everything.
FactorMatch greedy_match(const Mat& learned, const Mat& truth);

struct RecoveryReport {
  double subspace_alignment = 0.0;
  double mean_correlation = 0.0;
  double min_correlation = 0.0;
  double mean_active = 0.0;      // deployed latents
  double mean_active_refined = 0.0;
  double horizon_assignment = 0.0;
  double test_rmse = 0.0;        // deployed, pooled
  double refined_rmse = 0.0;
  int learned_rank = 0;
  FactorMatch match;
};

// The alignment is fit on `fit` (typically the validation trajectories) and
// every metric is reported on `test`. Throws DegenerateError if a true factor
// never varies on either set.
RecoveryReport factor_recovery_report(const SyntheticDataset& ds, const ModelBundle& bundle,
                                      const WindowedData& fit, const WindowedData& test,
                                      const EnergyParams& params, double active_threshold = 1e-3);

// Horizon-by-latent importance: mean |∂forecast_τ/∂z_k| over samples
// (exactly |W_dec| for the linearized decoder).
Mat horizon_importance(const ModelBundle& bundle, const Mat& z, const Mat& h);

// Percent RMSE change of each σ_y relative to the smallest σ_y.
std::map<double, double> rmse_degradation(const std::map<double, double>& rmse_by_sigma);

}  // namespace slff
