#pragma once

// Empirical counterparts of the amortization-gap bound, the proximal
// convergence rate and the sparsity-vs-λ relation, instantiated on the
// linearized decoder Dec(z, h) = f(h) + W z.

#include "slff/data.hpp"
#include "slff/latent_inference.hpp"
#include "slff/model.hpp"

#include <string>
#include <vector>

namespace slff {

struct LipschitzEstimates {
  double l_dec = 0.0;            // decoder Lipschitz constant in z (exact for linearized)
  double l_dec_upper = 0.0;      // product of layer operator norms (MLP); = l_dec for linearized
  double l_dec_empirical = 0.0;  // max sampled finite-difference ratio (MLP lower bound); = l_dec for linearized
  double l_c = 0.0;              // Lipschitz constant of pooled RMSE in the per-sample forecast: 1/sqrt(N)
  double l_c_squared = 0.0;      // 2 * Y_max, the squared-loss constant (reported only)
  double y_max = 0.0;            // max_j ||Y_j|| + ||Ỹ_j|| on the estimation data
  double l_g = 0.0;              // 2 ||W||_op^2 (linearized); 2 l_dec^2 otherwise
};

// Largest singular value by power iteration on AᵀA.
double operator_norm(const Mat& a, double tol = 1e-8, int max_iter = 100000);

// data (typically the train split) supplies Y_max and, for the MLP decoder,
// the hull from which 10,000 latent pairs are sampled.
LipschitzEstimates estimate_lipschitz(const ModelBundle& bundle, const WindowedData& data,
                                      int num_pairs = 10000, std::uint64_t seed = 0);

// L_C · L_dec · sqrt(L_match / β).
double gap_bound(const LipschitzEstimates& est, double l_match, double beta = 1.0);

struct GapRow {
  int num_steps = 0;         // K
  double deployed_rmse = 0.0;
  double refined_rmse = 0.0;
  double observed_gap = 0.0;  // deployed - refined
  double l_match = 0.0;       // mean ||z* - ẑ||^2 on the same samples
  double predicted_gap = 0.0;
  double ratio = 0.0;         // observed / predicted (0 when predicted is 0)
  bool satisfied = false;     // observed <= predicted
};

struct GapDiagnosis {
  LipschitzEstimates lipschitz;
  DecoderKind decoder = DecoderKind::linearized;
  double beta = 1.0;
  GapRow main;                 // at params.num_steps
  std::vector<GapRow> k_sweep; // refinement depth sweep
};

// Deployed vs refined forecasts on `eval`; the Lipschitz constants come from
// `estimation` (train split).
GapDiagnosis diagnose_gap(const ModelBundle& bundle, const WindowedData& estimation, const WindowedData& eval,
                          const EnergyParams& params, const std::vector<int>& k_grid = {1, 5, 10, 20});

// --- Linear instances ---------------------------------------------------------------

// min_z ||y - offset - W z||^2 + λ||z||_1 + μ||z - anchor||^2
struct LinearInstance {
  Mat weights;  // N x m
  Vec offset;
  Vec target;
  Vec anchor;
};

// Random instances with sparse ground truth: W ~ N(0, 1/N), a 3-sparse true
// code, noisy targets and an anchor near the truth.
std::vector<LinearInstance> random_linear_instances(int count, Index N, Index m, std::uint64_t seed,
                                                    double noise = 0.1);

// Exact minimizer by cyclic coordinate descent (closed-form coordinate
// updates), iterated until no coordinate moves more than tol.
Vec solve_linear_exact(const LinearInstance& inst, double lambda, double mu, double tol = 1e-13);

double linear_energy(const LinearInstance& inst, const Vec& z, double lambda, double mu);

// 1 / (2 ||W||² + 2μ): the largest step with guaranteed descent bound.
double safe_step_size(const LinearInstance& inst, double mu);

struct ConvergenceCurve {
  std::vector<int> k_grid;
  std::vector<double> suboptimality;   // mean E(z^(K)) - E(z*)
  std::vector<double> latent_mismatch; // mean ||z^(K) - z*||
  double envelope_c = 0.0;             // max_K K · subopt(K)
  double fitted_c = 0.0;               // least squares fit of subopt ≈ C / K
  bool non_increasing = true;
};

// params.step_size <= 0 selects safe_step_size per instance.
ConvergenceCurve convergence_curve(const std::vector<LinearInstance>& instances, const EnergyParams& params,
                                   const std::vector<int>& k_grid);

struct SparsityCurve {
  std::vector<double> lambdas;
  std::vector<double> mean_active;
  bool non_increasing = true;
};

SparsityCurve sparsity_vs_lambda(const std::vector<LinearInstance>& instances, const std::vector<double>& lambdas,
                                 double mu, double active_threshold = 1e-3);

std::string to_json(const GapDiagnosis& g);
std::string to_json(const ConvergenceCurve& c);
std::string to_json(const SparsityCurve& s);

}  // namespace slff
