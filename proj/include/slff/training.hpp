#pragma once

// Two-stage training: per batch, refine z* against the frozen encoder
// snapshot, update Pred/Dec on z* (opt1), then Enc on the same cached z*
// (opt2). Adam with global-norm clipping; early stopping on deployed
// validation RMSE.

#include "slff/data.hpp"
#include "slff/latent_inference.hpp"
#include "slff/model.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace slff {

enum class LrSchedule { constant, cosine };

// two_stage:   the default algorithm
// end_to_end:  no z* matching; Pred, Dec, Enc trained on the deployed loss
// frozen_enc:  Enc stays at its initialization; z* still anchored on it
enum class TrainMode { two_stage, end_to_end, frozen_enc };

std::string to_string(LrSchedule s);
std::string to_string(TrainMode m);
LrSchedule lr_schedule_from_string(const std::string& s);
TrainMode train_mode_from_string(const std::string& s);

struct TrainConfig {
  double beta_match = 5.0;
  double gamma_contrast = 0.0;
  double learning_rate = 1e-4;
  double grad_clip_norm = 1.0;
  int batch_size = 64;
  int max_epochs = 100;
  int patience = 10;
  LrSchedule lr_schedule = LrSchedule::cosine;
  EnergyParams energy_params;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::two_stage;
  int finetune_epochs = 0;  // optional deployed-path fine-tune of Pred/Dec; 0 = off

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double learning_rate = 0.0;
  double train_pred = 0.0;
  double train_match = 0.0;
  double train_contrast = 0.0;
  double val_pred = 0.0;   // refined-path loss
  double val_match = 0.0;
  double val_rmse = 0.0;   // deployed path, pooled over horizons
  double align_r2 = 0.0;
  double align_cos = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  int best_epoch = -1;
  int stopping_epoch = -1;
  double best_val_rmse = 0.0;
};

// --- Optimizer ---------------------------------------------------------------

struct AdamState {
  std::vector<Vec> m, v;
  long step = 0;
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Rescales the concatenated gradient to norm <= max_norm; returns the norm
// before clipping.
double clip_global_norm(std::vector<Vec>& grads, double max_norm);

// One Adam update over a group of parameter vectors sharing a state. Grads
// are clipped jointly first.
void adam_step(const std::vector<Vec*>& params, std::vector<Vec> grads, AdamState& state, double lr,
               double clip_norm, const AdamHyper& hyper = {});

double scheduled_lr(const TrainConfig& config, int epoch);

// --- Losses and diagnostics --------------------------------------------------

struct Alignment {
  double r_squared = 0.0;
  double cosine = 0.0;
};

// Pooled R^2 over all dimensions and per-sample mean cosine (columns are
// samples). Cosine of two zero vectors is 1; of one zero vector, 0.
Alignment compute_alignment(const Mat& z_star, const Mat& z_hat);

// Mean over columns of cos^2(z_hat_j, z_ref_j); optionally its gradient with
// respect to z_hat.
double cos2_loss(const Mat& z_hat, const Mat& z_ref, Mat* grad = nullptr);

// Uniform random permutation of 0..n-1 that is not the identity.
std::vector<Index> non_identity_permutation(Index n, Rng& rng);

struct ContrastiveTerm {
  double value = 0.0;
  Mat z_shuffled;           // refinements against shuffled targets
  std::vector<Index> perm;  // target permutation used
};

// Refines against within-batch shuffled targets (anchor = z_bar, context h)
// and scores the encoder outputs against those refinements.
ContrastiveTerm contrastive_loss(const ModelBundle& b, const Mat& z_hat, const Mat& z_bar, const Mat& h,
                                 const Mat& targets, const EnergyParams& params, Rng& rng);

// --- Inference over datasets --------------------------------------------------

struct PathOutputs {
  Mat z_hat;     // m x n deployed latents
  Mat h;         // h_dim x n
  Mat deployed;  // N x n model-space forecasts on the deployed path
  Mat z_star;    // m x n refined latents (empty unless targets were used)
  Mat refined;   // N x n refined-path forecasts
  Mat targets;   // N x n model-space targets
};

// Runs Enc/Pred/Dec over the data in chunks; with refine=true also computes
// z* against the true targets (a training-time diagnostic).
PathOutputs run_paths(const ModelBundle& b, const WindowedData& data, const EnergyParams& params,
                      bool refine, Index chunk = 256);

double pooled_rmse(const Mat& forecast, const Mat& targets);

// --- Training ------------------------------------------------------------------

struct TrainHooks {
  // Called after each batch's refinement with the cached z* and the
  // Pred/Dec/Enc parameter vectors that produced it (for tests).
  std::function<void(const Mat& z_star, const ModelBundle& before)> on_refined;
  // Called after Stage 1 and before Stage 2 with the z* Stage 2 will consume.
  std::function<void(const Mat& z_star)> on_stage2;
  std::function<void(const EpochStats&)> on_epoch;
};

struct TrainResult {
  ModelBundle bundle;
  TrainReport report;
};

TrainResult train_two_stage(ModelBundle init, const WindowedData& train, const WindowedData& val,
                            const TrainConfig& config, const TrainHooks& hooks = {});

}  // namespace slff
