#pragma once

// Variant grid runner: trains named modifications of a base configuration
// over several seeds and summarizes deployed accuracy, alignment and
// sparsity against the unmodified run.

#include "slff/data.hpp"
#include "slff/training.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace slff {

struct ExperimentData {
  WindowedData train, val, test;
};

// Named variants:
//   full          the base configuration
//   no_l1         λ = 0 and no encoder shrinkage (dense latents)
//   no_matching   end-to-end training on the deployed loss
//   frozen_enc    encoder kept at initialization
//   no_h          Pred removed from the decoder input
//   linear_dec    linearized decoder
//   k=<n>, mu=<v>, lambda=<v>, alpha=<v>, beta=<v>
// Throws InvalidArgument for an unknown name.
void apply_variant(const std::string& name, ModelConfig& model, TrainConfig& train);

std::vector<std::string> ablation_variants();  // full, no_l1, k=1, k=5, k=20, no_matching, frozen_enc, no_h, linear_dec
std::vector<std::string> mu_sweep_variants();  // mu ∈ {0.01, 0.05, 0.1, 0.2, 0.5, 1.0}

struct VariantResult {
  std::string variant;
  int seed_index = 0;
  std::uint64_t seed = 0;
  bool ok = true;
  std::string failure;
  int best_epoch = -1;
  double val_rmse = 0.0;
  double test_rmse = 0.0;      // deployed, pooled
  double refined_rmse = 0.0;
  double direction_accuracy = 0.0;  // mean over horizons, deployed path
  double align_r2 = 0.0;       // z* vs ẑ on test
  double align_cos = 0.0;
  double mean_active = 0.0;    // deployed latents on test
  double mean_active_refined = 0.0;
};

// Seeds are derived from master_seed per seed index, so every variant of a
// given index shares its initialization and batch order.
VariantResult run_variant(const ExperimentData& data, ModelConfig model, TrainConfig train, const std::string& variant,
                          int seed_index, std::uint64_t master_seed, double active_threshold = 1e-3);

// Jobs are (variant, seed) pairs; results come back in variant-major order
// whatever the thread count.
std::vector<VariantResult> run_grid(const ExperimentData& data, const ModelConfig& model, const TrainConfig& train,
                                    const std::vector<std::string>& variants, int num_seeds,
                                    std::uint64_t master_seed, int threads = 1);

struct VariantSummary {
  std::string variant;
  int runs = 0;
  int failures = 0;
  double test_rmse = 0.0;  // means over successful seeds
  double rmse_change_pct = 0.0;  // vs the reference variant
  double direction_accuracy = 0.0;
  double align_r2 = 0.0;
  double mean_active = 0.0;
};

std::vector<VariantSummary> summarize(const std::vector<VariantResult>& results,
                                      const std::string& reference = "full");

std::string results_csv(const std::vector<VariantResult>& results);
std::string summary_csv(const std::vector<VariantSummary>& summary);

}  // namespace slff
