#pragma once

// Energy-based latent refinement: K warm-started proximal-gradient steps on
//   E(z) = ||Y - Dec(z, h)||^2 + lambda ||z||_1 + mu ||z - anchor||^2
// with the anchor (frozen encoder snapshot) held fixed for all steps.

#include "slff/common.hpp"

#include <optional>
#include <vector>

namespace slff {

struct EnergyParams {
  double lambda_l1 = 1e-4;
  double mu_prox = 0.1;
  double step_size = 0.01;
  int num_steps = 10;
  double convergence_tol = 1e-6;

  void validate() const;
};

struct LatentCode {
  Vec values;
  double active_threshold = 1e-3;

  Index size() const { return values.size(); }
  int active_count() const;
  std::vector<Index> active_set() const;
};

struct RefinementTrace {
  std::vector<double> energies;           // num_steps + 1 entries, E at z^(0..K)
  LatentCode final_latent;                // z^(K)
  std::vector<double> latent_path_norms;  // ||z^(k+1) - z^(k)||_2
  std::optional<int> converged_at;
};

// The decoder with its history context bound. Columns are samples, so one
// object serves both single-sample and batched refinement.
class LatentMap {
 public:
  virtual ~LatentMap() = default;
  virtual Index latent_dim() const = 0;
  virtual Index output_dim() const = 0;
  // Forecasts for each column of z (latent_dim x B) -> (output_dim x B).
  virtual Mat forecast(const Mat& z) const = 0;
  // Vector-Jacobian product: for each column, J_z(Dec)^T * d_forecast.
  virtual Mat pullback(const Mat& z, const Mat& d_forecast) const = 0;
};

// Dec(z) = offset + weights * z, one offset column per sample (or a single
// column broadcast). Used by tests, theory checks, and the oracle comparisons.
class AffineLatentMap final : public LatentMap {
 public:
  AffineLatentMap(Mat weights, Mat offset);
  Index latent_dim() const override { return weights_.cols(); }
  Index output_dim() const override { return weights_.rows(); }
  Mat forecast(const Mat& z) const override;
  Mat pullback(const Mat& z, const Mat& d_forecast) const override;
  const Mat& weights() const { return weights_; }

 private:
  Mat weights_;
  Mat offset_;
};

Vec soft_threshold(const Vec& x, double theta);
Mat soft_threshold(const Mat& x, double theta);

// Per-column energies.
Vec energy_batch(const Mat& targets, const LatentMap& decoder, const Mat& z, const Mat& anchor,
                 const EnergyParams& params);

double energy(const Vec& target, const LatentMap& decoder, const Vec& z, const Vec& anchor,
              const EnergyParams& params);

struct BatchRefinement {
  Mat final_latents;  // m x B
  Mat energies;       // (K + 1) x B
  Mat path_norms;     // K x B
};

// Runs the proximal iteration for every column independently. Throws
// NumericalFailure carrying the iterate index on any non-finite value.
BatchRefinement refine_batch(const Mat& targets, const LatentMap& decoder, const Mat& anchors,
                             const EnergyParams& params, bool record_trace = true);

RefinementTrace refine(const Vec& target, const LatentMap& decoder, const LatentCode& anchor,
                       const EnergyParams& params);

std::optional<int> detect_plateau(const std::vector<double>& energies, double tol);
inline std::optional<int> detect_plateau(const RefinementTrace& trace, double tol) {
  return detect_plateau(trace.energies, tol);
}

}  // namespace slff
