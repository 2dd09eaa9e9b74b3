#include "slff/training.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace slff {

std::string to_string(LrSchedule s) { return s == LrSchedule::cosine ? "cosine" : "constant"; }

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::two_stage: return "two_stage";
    case TrainMode::end_to_end: return "end_to_end";
    default: return "frozen_enc";
  }
}

LrSchedule lr_schedule_from_string(const std::string& s) {
  if (s == "cosine") return LrSchedule::cosine;
  if (s == "constant") return LrSchedule::constant;
  throw InvalidArgument("unknown lr schedule '" + s + "'");
}

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "two_stage") return TrainMode::two_stage;
  if (s == "end_to_end") return TrainMode::end_to_end;
  if (s == "frozen_enc") return TrainMode::frozen_enc;
  throw InvalidArgument("unknown training mode '" + s + "'");
}

void TrainConfig::validate() const {
  if (!(beta_match >= 0.0)) throw InvalidArgument("beta_match must be >= 0");
  if (!(gamma_contrast >= 0.0)) throw InvalidArgument("gamma_contrast must be >= 0");
  if (!(grad_clip_norm > 0.0)) throw InvalidArgument("grad_clip_norm must be > 0");
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be > 0");
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (max_epochs < 1) throw InvalidArgument("max_epochs must be >= 1");
  if (patience < 1) throw InvalidArgument("patience must be >= 1");
  if (finetune_epochs < 0) throw InvalidArgument("finetune_epochs must be >= 0");
  if (gamma_contrast > 0.0 && batch_size < 2)
    throw InvalidArgument("contrastive term needs batch_size >= 2");
  energy_params.validate();
}

// ---------------------------------------------------------------------------

double clip_global_norm(std::vector<Vec>& grads, double max_norm) {
  double sq = 0.0;
  for (const Vec& g : grads) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (Vec& g : grads) g *= scale;
  }
  return norm;
}

void adam_step(const std::vector<Vec*>& params, std::vector<Vec> grads, AdamState& state, double lr,
               double clip_norm, const AdamHyper& hyper) {
  require_shape(params.size() == grads.size(), "adam: one gradient per parameter vector");
  if (state.m.empty()) {
    for (const Vec* p : params) {
      state.m.push_back(Vec::Zero(p->size()));
      state.v.push_back(Vec::Zero(p->size()));
    }
  }
  require_shape(state.m.size() == params.size(), "adam: state does not match parameter group");
  for (std::size_t i = 0; i < params.size(); ++i)
    require_shape(grads[i].size() == params[i]->size(), "adam: gradient size mismatch");
  clip_global_norm(grads, clip_norm);
  ++state.step;
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * grads[i];
    state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * grads[i].cwiseAbs2();
    const Vec m_hat = state.m[i] / c1;
    const Vec v_hat = state.v[i] / c2;
    params[i]->array() -= lr * m_hat.array() / (v_hat.array().sqrt() + hyper.eps);
  }
}

double scheduled_lr(const TrainConfig& config, int epoch) {
  if (config.lr_schedule == LrSchedule::constant) return config.learning_rate;
  const double frac = static_cast<double>(epoch) / static_cast<double>(config.max_epochs);
  return 0.5 * config.learning_rate * (1.0 + std::cos(std::numbers::pi * frac));
}

// ---------------------------------------------------------------------------

Alignment compute_alignment(const Mat& z_star, const Mat& z_hat) {
  require_shape(z_star.rows() == z_hat.rows() && z_star.cols() == z_hat.cols(),
                "alignment: latent sets must have equal count and dimension");
  if (z_star.cols() == 0) throw InvalidArgument("alignment: empty latent set");
  const Vec mean = z_star.rowwise().mean();
  const double ss_tot = (z_star.colwise() - mean).squaredNorm();
  if (!(ss_tot > 0.0)) throw DegenerateError("alignment: z* has zero variance; R^2 undefined");
  Alignment a;
  a.r_squared = 1.0 - (z_star - z_hat).squaredNorm() / ss_tot;
  double cos_sum = 0.0;
  for (Index j = 0; j < z_star.cols(); ++j) {
    const double na = z_star.col(j).norm();
    const double nb = z_hat.col(j).norm();
    if (na == 0.0 && nb == 0.0) cos_sum += 1.0;
    else if (na > 0.0 && nb > 0.0) cos_sum += z_star.col(j).dot(z_hat.col(j)) / (na * nb);
  }
  a.cosine = cos_sum / static_cast<double>(z_star.cols());
  return a;
}

double cos2_loss(const Mat& z_hat, const Mat& z_ref, Mat* grad) {
  require_shape(z_hat.rows() == z_ref.rows() && z_hat.cols() == z_ref.cols(), "cos2: shape mismatch");
  const Index B = z_hat.cols();
  if (grad) *grad = Mat::Zero(z_hat.rows(), B);
  double total = 0.0;
  for (Index j = 0; j < B; ++j) {
    const double na = z_hat.col(j).norm();
    const double nb = z_ref.col(j).norm();
    if (na == 0.0 || nb == 0.0) continue;  // cosine taken as 0; no gradient
    const double c = z_hat.col(j).dot(z_ref.col(j)) / (na * nb);
    total += c * c;
    if (grad) {
      const Vec dc = z_ref.col(j) / (na * nb) - c * z_hat.col(j) / (na * na);
      grad->col(j) = 2.0 * c * dc / static_cast<double>(B);
    }
  }
  return total / static_cast<double>(B);
}

std::vector<Index> non_identity_permutation(Index n, Rng& rng) {
  if (n < 2) throw InvalidArgument("permutation: no non-identity permutation of fewer than 2 items");
  std::vector<Index> p(static_cast<std::size_t>(n));
  while (true) {
    for (Index i = 0; i < n; ++i) p[i] = i;
    for (Index i = n - 1; i > 0; --i) {
      const Index j = static_cast<Index>(uniform01(rng) * static_cast<double>(i + 1));
      std::swap(p[i], p[std::min(j, i)]);
    }
    for (Index i = 0; i < n; ++i)
      if (p[i] != i) return p;
  }
}

ContrastiveTerm contrastive_loss(const ModelBundle& b, const Mat& z_hat, const Mat& z_bar, const Mat& h,
                                 const Mat& targets, const EnergyParams& params, Rng& rng) {
  const Index B = targets.cols();
  ContrastiveTerm out;
  out.perm = non_identity_permutation(B, rng);
  Mat shuffled(targets.rows(), B);
  for (Index j = 0; j < B; ++j) shuffled.col(j) = targets.col(out.perm[j]);
  DecoderLatentMap map(b, h);
  out.z_shuffled = refine_batch(shuffled, map, z_bar, params, false).final_latents;
  out.value = cos2_loss(z_hat, out.z_shuffled);
  return out;
}

// ---------------------------------------------------------------------------

double pooled_rmse(const Mat& forecast, const Mat& targets) {
  require_shape(forecast.rows() == targets.rows() && forecast.cols() == targets.cols(), "rmse: shape mismatch");
  if (forecast.size() == 0) throw InvalidArgument("rmse: empty set");
  return std::sqrt((forecast - targets).squaredNorm() / static_cast<double>(forecast.size()));
}

PathOutputs run_paths(const ModelBundle& b, const WindowedData& data, const EnergyParams& params, bool refine,
                      Index chunk) {
  const Index n = data.size();
  if (n == 0) throw InvalidArgument("run_paths: empty data");
  const Index m = b.config.latent_dim, N = b.config.num_horizons, H = b.config.hidden;
  PathOutputs out;
  out.z_hat.resize(m, n);
  out.h.resize(H, n);
  out.deployed.resize(N, n);
  out.targets.resize(N, n);
  if (refine) {
    out.z_star.resize(m, n);
    out.refined.resize(N, n);
  }
  std::vector<Index> idx;
  for (Index start = 0; start < n; start += chunk) {
    const Index len = std::min(chunk, n - start);
    idx.resize(len);
    for (Index j = 0; j < len; ++j) idx[j] = start + j;
    const SequenceBatch x = data.batch(idx);
    const Mat y = data.targets(idx);
    const Mat h = history_or_zero(b, x);
    const Mat zh = enc_forward_batch(b, x);
    out.h.middleCols(start, len) = h;
    out.z_hat.middleCols(start, len) = zh;
    out.deployed.middleCols(start, len) = dec_forward_batch(b, zh, h);
    out.targets.middleCols(start, len) = y;
    if (refine) {
      DecoderLatentMap map(b, h);
      const Mat zs = refine_batch(y, map, zh, params, false).final_latents;
      out.z_star.middleCols(start, len) = zs;
      out.refined.middleCols(start, len) = dec_forward_batch(b, zs, h);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::vector<Index>> make_batches(Index n, int batch_size, Rng& rng) {
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[i] = i;
  for (Index i = n - 1; i > 0; --i) {
    const Index j = std::min(i, static_cast<Index>(uniform01(rng) * static_cast<double>(i + 1)));
    std::swap(order[i], order[j]);
  }
  std::vector<std::vector<Index>> batches;
  for (Index s = 0; s < n; s += batch_size)
    batches.emplace_back(order.begin() + s, order.begin() + std::min<Index>(n, s + batch_size));
  // A trailing singleton batch is folded into its predecessor.
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

void check_finite(double v, const char* what, int epoch, int batch) {
  if (!std::isfinite(v))
    throw NumericalFailure(std::string("training: non-finite ") + what + " at epoch " + std::to_string(epoch) +
                               ", batch " + std::to_string(batch),
                           batch);
}

struct Optimizers {
  AdamState pred_dec;
  AdamState enc;
};

// Deployed-path update; which groups move is controlled by the flags.
double deployed_update(ModelBundle& b, const SequenceBatch& x, const Mat& y, Rng* dropout, Optimizers& opt,
                       double lr, double clip, bool update_enc) {
  const double B = static_cast<double>(x.batch());
  EncTape et;
  const Mat zh = enc_forward_batch(b, x, &et);
  StackTape pt;
  const Mat h = history_or_zero(b, x, &pt, dropout);
  DecTape dt;
  const Mat r = dec_forward_batch(b, zh, h, &dt) - y;
  const double loss = r.squaredNorm() / B;
  Vec gd = Vec::Zero(b.dec.size()), gp = Vec::Zero(b.pred.size()), ge = Vec::Zero(b.enc.size());
  Mat dz, dh;
  dec_backward_batch(b, dt, 2.0 * r / B, &gd, update_enc ? &dz : nullptr, &dh);
  if (b.config.use_history) pred_backward_batch(b, pt, dh, gp);
  if (update_enc) enc_backward_batch(b, et, dz, ge);
  adam_step({&b.pred.values, &b.dec.values}, {gp, gd}, opt.pred_dec, lr, clip);
  if (update_enc) adam_step({&b.enc.values}, {ge}, opt.enc, lr, clip);
  return loss;
}

EpochStats evaluate_epoch(const ModelBundle& b, const WindowedData& val, const EnergyParams& params) {
  EpochStats s;
  const PathOutputs p = run_paths(b, val, params, true);
  const double n = static_cast<double>(val.size());
  s.val_rmse = pooled_rmse(p.deployed, p.targets);
  s.val_pred = (p.refined - p.targets).squaredNorm() / n;
  s.val_match = (p.z_star - p.z_hat).squaredNorm() / n;
  try {
    const Alignment a = compute_alignment(p.z_star, p.z_hat);
    s.align_r2 = a.r_squared;
    s.align_cos = a.cosine;
  } catch (const DegenerateError&) {
    s.align_r2 = std::numeric_limits<double>::quiet_NaN();
    s.align_cos = std::numeric_limits<double>::quiet_NaN();
  }
  return s;
}

}  // namespace

TrainResult train_two_stage(ModelBundle b, const WindowedData& train, const WindowedData& val,
                            const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  if (train.empty()) throw InvalidArgument("training: empty train split");
  if (val.empty()) throw InvalidArgument("training: empty validation split");
  require_shape(train.num_features() == b.config.num_features && train.window() == b.config.window &&
                    train.num_horizons() == b.config.num_horizons,
                "training: data shape does not match the model configuration");

  const EnergyParams& ep = config.energy_params;
  Optimizers opt;
  TrainResult result{b, {}};
  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;
  std::uint64_t batch_counter = 0;

  const auto run_epoch_eval = [&](int epoch, double lr, double tp, double tm, double tc) {
    EpochStats s = evaluate_epoch(b, val, ep);
    s.epoch = epoch;
    s.learning_rate = lr;
    s.train_pred = tp;
    s.train_match = tm;
    s.train_contrast = tc;
    check_finite(s.val_rmse, "validation RMSE", epoch, -1);
    result.report.epochs.push_back(s);
    if (hooks.on_epoch) hooks.on_epoch(s);
    if (s.val_rmse < best) {
      best = s.val_rmse;
      result.bundle = b;
      result.report.best_epoch = epoch;
      since_best = 0;
    } else {
      ++since_best;
    }
  };

  int epoch = 0;
  for (; epoch < config.max_epochs; ++epoch) {
    const double lr = scheduled_lr(config, epoch);
    Rng shuffle = Rng(derive_seed(config.seed, "train.shuffle", static_cast<std::uint64_t>(epoch)));
    const auto batches = make_batches(train.size(), config.batch_size, shuffle);
    double sum_pred = 0.0, sum_match = 0.0, sum_con = 0.0, count = 0.0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& idx = batches[bi];
      const SequenceBatch x = train.batch(idx);
      const Mat y = train.targets(idx);
      const double B = static_cast<double>(idx.size());
      Rng dropout = Rng(derive_seed(config.seed, "train.dropout", batch_counter));
      Rng contrast_rng = Rng(derive_seed(config.seed, "train.contrast", batch_counter));
      ++batch_counter;

      if (config.mode == TrainMode::end_to_end) {
        const double loss = deployed_update(b, x, y, &dropout, opt, lr, config.grad_clip_norm, true);
        check_finite(loss, "deployed loss", epoch, static_cast<int>(bi));
        sum_pred += loss * B;
        count += B;
        continue;
      }

      // Inference: h once (Stage-1 dropout active), frozen encoder snapshot.
      StackTape pt;
      const Mat h = history_or_zero(b, x, &pt, &dropout);
      const Mat z_bar = enc_forward_batch(b, x);
      DecoderLatentMap map(b, h);
      const Mat z_star = refine_batch(y, map, z_bar, ep, false).final_latents;
      if (!z_star.allFinite())
        throw NumericalFailure("training: non-finite refined latent at epoch " + std::to_string(epoch), ep.num_steps);
      if (hooks.on_refined) hooks.on_refined(z_star, b);

      ContrastiveTerm contrast;
      const bool use_contrast = config.gamma_contrast > 0.0 && config.mode == TrainMode::two_stage;
      if (use_contrast) {
        // Refinements against shuffled targets use the same pre-update Dec;
        // Enc is unchanged until Stage 2, so its output equals z_bar here.
        contrast = contrastive_loss(b, z_bar, z_bar, h, y, ep, contrast_rng);
      }

      // Stage 1: Pred, Dec on the cached z*.
      DecTape dt;
      const Mat r = dec_forward_batch(b, z_star, h, &dt) - y;
      const double l_pred = r.squaredNorm() / B;
      check_finite(l_pred, "prediction loss", epoch, static_cast<int>(bi));
      Vec gd = Vec::Zero(b.dec.size()), gp = Vec::Zero(b.pred.size());
      Mat dh;
      dec_backward_batch(b, dt, 2.0 * r / B, &gd, nullptr, &dh);
      if (b.config.use_history) pred_backward_batch(b, pt, dh, gp);
      adam_step({&b.pred.values, &b.dec.values}, {gp, gd}, opt.pred_dec, lr, config.grad_clip_norm);
      sum_pred += l_pred * B;
      count += B;

      if (config.mode == TrainMode::frozen_enc) continue;

      // Stage 2: Enc on the same cached z*.
      if (hooks.on_stage2) hooks.on_stage2(z_star);
      EncTape et;
      const Mat zh = enc_forward_batch(b, x, &et);
      const Mat rz = zh - z_star;
      const double l_match = rz.squaredNorm() / B;
      check_finite(l_match, "matching loss", epoch, static_cast<int>(bi));
      Mat dz = config.beta_match * 2.0 * rz / B;
      if (use_contrast) {
        Mat gc;
        const double lc = cos2_loss(zh, contrast.z_shuffled, &gc);
        dz += config.gamma_contrast * gc;
        sum_con += lc * B;
      }
      Vec ge = Vec::Zero(b.enc.size());
      enc_backward_batch(b, et, dz, ge);
      adam_step({&b.enc.values}, {ge}, opt.enc, lr, config.grad_clip_norm);
      sum_match += l_match * B;
    }
    b.epochs_trained = epoch + 1;
    run_epoch_eval(epoch, lr, sum_pred / count, sum_match / count, sum_con / count);
    if (since_best >= config.patience) {
      ++epoch;
      break;
    }
  }
  result.report.stopping_epoch = epoch - 1;

  if (config.finetune_epochs > 0) {
    // Optional: deployed-path fine-tune of Pred/Dec from the best bundle.
    b = result.bundle;
    Optimizers ft;
    since_best = 0;
    for (int e = 0; e < config.finetune_epochs; ++e, ++epoch) {
      Rng shuffle = Rng(derive_seed(config.seed, "finetune.shuffle", static_cast<std::uint64_t>(e)));
      const auto batches = make_batches(train.size(), config.batch_size, shuffle);
      double sum = 0.0, count = 0.0;
      for (const auto& idx : batches) {
        Rng dropout = Rng(derive_seed(config.seed, "finetune.dropout", batch_counter++));
        const double loss = deployed_update(b, train.batch(idx), train.targets(idx), &dropout, ft,
                                            config.learning_rate, config.grad_clip_norm, false);
        sum += loss * static_cast<double>(idx.size());
        count += static_cast<double>(idx.size());
      }
      b.epochs_trained = epoch + 1;
      run_epoch_eval(epoch, config.learning_rate, sum / count, 0.0, 0.0);
      if (since_best >= config.patience) break;
    }
    result.report.stopping_epoch = epoch;
  }
  result.report.best_val_rmse = best;
  return result;
}

}  // namespace slff
