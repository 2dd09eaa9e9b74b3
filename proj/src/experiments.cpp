#include "slff/experiments.hpp"

#include "slff/eval.hpp"
#include "slff/io.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <map>
#include <thread>

namespace slff {

namespace {

double parse_number(const std::string& name, const std::string& text) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != text.size()) throw InvalidArgument("variant " + name + ": bad number");
  return v;
}

double mean_active_count(const Mat& z, double thr) {
  if (z.cols() == 0) return 0.0;
  return static_cast<double>((z.array().abs() > thr).count()) / static_cast<double>(z.cols());
}

}  // namespace

void apply_variant(const std::string& name, ModelConfig& model, TrainConfig& train) {
  if (name == "full") return;
  if (name == "no_l1") {
    train.energy_params.lambda_l1 = 0.0;
    model.enc_shrink = 0.0;
  } else if (name == "no_matching") {
    train.mode = TrainMode::end_to_end;
  } else if (name == "frozen_enc") {
    train.mode = TrainMode::frozen_enc;
  } else if (name == "no_h") {
    model.use_history = false;
  } else if (name == "linear_dec") {
    model.decoder_kind = DecoderKind::linearized;
  } else {
    const auto eq = name.find('=');
    if (eq == std::string::npos) throw InvalidArgument("unknown variant: " + name);
    const std::string key = name.substr(0, eq);
    const double v = parse_number(name, name.substr(eq + 1));
    if (key == "k") {
      if (v < 1 || v != std::floor(v)) throw InvalidArgument("variant " + name + ": K must be a positive integer");
      train.energy_params.num_steps = static_cast<int>(v);
    } else if (key == "mu") {
      train.energy_params.mu_prox = v;
    } else if (key == "lambda") {
      train.energy_params.lambda_l1 = v;
    } else if (key == "alpha") {
      train.energy_params.step_size = v;
    } else if (key == "beta") {
      train.beta_match = v;
    } else {
      throw InvalidArgument("unknown variant: " + name);
    }
  }
  model.validate();
  train.validate();
}

std::vector<std::string> ablation_variants() {
  return {"full", "no_l1", "k=1", "k=5", "k=20", "no_matching", "frozen_enc", "no_h", "linear_dec"};
}

std::vector<std::string> mu_sweep_variants() {
  return {"mu=0.01", "mu=0.05", "mu=0.1", "mu=0.2", "mu=0.5", "mu=1"};
}

VariantResult run_variant(const ExperimentData& data, ModelConfig model, TrainConfig train, const std::string& variant,
                          int seed_index, std::uint64_t master_seed, double active_threshold) {
  apply_variant(variant, model, train);
  VariantResult r;
  r.variant = variant;
  r.seed_index = seed_index;
  r.seed = derive_seed(master_seed, "experiment.seed", static_cast<std::uint64_t>(seed_index));
  model.seed = r.seed;
  train.seed = r.seed;
  try {
    const TrainResult tr = train_two_stage(ModelBundle::initialize(model), data.train, data.val, train);
    r.best_epoch = tr.report.best_epoch;
    r.val_rmse = tr.report.best_val_rmse;
    const PathOutputs p = run_paths(tr.bundle, data.test, train.energy_params, true);
    r.test_rmse = pooled_rmse(p.deployed, p.targets);
    r.refined_rmse = pooled_rmse(p.refined, p.targets);
    const Alignment a = compute_alignment(p.z_star, p.z_hat);
    r.align_r2 = a.r_squared;
    r.align_cos = a.cosine;
    r.mean_active = mean_active_count(p.z_hat, active_threshold);
    r.mean_active_refined = mean_active_count(p.z_star, active_threshold);
    std::vector<int> horizons(static_cast<std::size_t>(data.test.num_horizons()));
    for (std::size_t k = 0; k < horizons.size(); ++k) horizons[k] = static_cast<int>(k) + 1;
    const ForecastSet f = forecast_set_from_paths(data.test, p.deployed, horizons, PathKind::deployed);
    double da = 0.0;
    int counted = 0;
    for (Index k = 0; k < static_cast<Index>(horizons.size()); ++k) {
      try {
        da += directional_metrics(f, k).da_excl;
        ++counted;
      } catch (const DegenerateError&) {
      }
    }
    r.direction_accuracy = counted > 0 ? da / counted : std::numeric_limits<double>::quiet_NaN();
  } catch (const NumericalFailure& e) {
    r.ok = false;
    r.failure = e.what();
  }
  return r;
}

std::vector<VariantResult> run_grid(const ExperimentData& data, const ModelConfig& model, const TrainConfig& train,
                                    const std::vector<std::string>& variants, int num_seeds,
                                    std::uint64_t master_seed, int threads) {
  if (num_seeds < 1) throw InvalidArgument("run_grid: at least one seed");
  if (threads < 1) throw InvalidArgument("run_grid: threads must be >= 1");
  // Validate every variant before spending time on training.
  for (const std::string& v : variants) {
    ModelConfig m = model;
    TrainConfig t = train;
    apply_variant(v, m, t);
  }
  const std::size_t jobs = variants.size() * static_cast<std::size_t>(num_seeds);
  std::vector<VariantResult> out(jobs);
  std::vector<std::exception_ptr> errors(jobs);
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t j = next++; j < jobs; j = next++) {
      try {
        out[j] = run_variant(data, model, train, variants[j / num_seeds], static_cast<int>(j % num_seeds),
                             master_seed);
      } catch (...) {
        errors[j] = std::current_exception();
      }
    }
  };
  const int n = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(threads), jobs));
  std::vector<std::thread> pool;
  for (int i = 1; i < n; ++i) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();
  for (const std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

std::vector<VariantSummary> summarize(const std::vector<VariantResult>& results, const std::string& reference) {
  std::vector<VariantSummary> out;
  std::map<std::string, std::size_t> pos;
  for (const VariantResult& r : results) {
    auto it = pos.find(r.variant);
    if (it == pos.end()) {
      it = pos.emplace(r.variant, out.size()).first;
      out.push_back({});
      out.back().variant = r.variant;
    }
    VariantSummary& s = out[it->second];
    ++s.runs;
    if (!r.ok) {
      ++s.failures;
      continue;
    }
    s.test_rmse += r.test_rmse;
    s.direction_accuracy += r.direction_accuracy;
    s.align_r2 += r.align_r2;
    s.mean_active += r.mean_active;
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (VariantSummary& s : out) {
    const int ok = s.runs - s.failures;
    if (ok == 0) {
      s.test_rmse = s.direction_accuracy = s.align_r2 = s.mean_active = nan;
      continue;
    }
    s.test_rmse /= ok;
    s.direction_accuracy /= ok;
    s.align_r2 /= ok;
    s.mean_active /= ok;
  }
  const auto ref = pos.find(reference);
  for (VariantSummary& s : out)
    s.rmse_change_pct = ref == pos.end() ? nan : 100.0 * (s.test_rmse / out[ref->second].test_rmse - 1.0);
  return out;
}

std::string results_csv(const std::vector<VariantResult>& results) {
  CsvTable t;
  t.header = {"variant", "seed_index", "seed", "ok", "best_epoch", "val_rmse", "test_rmse", "refined_rmse",
              "direction_accuracy", "align_r2", "align_cos", "mean_active", "mean_active_refined", "failure"};
  for (const VariantResult& r : results)
    t.rows.push_back({r.variant, std::to_string(r.seed_index), std::to_string(r.seed), r.ok ? "1" : "0",
                      std::to_string(r.best_epoch), format_double(r.val_rmse), format_double(r.test_rmse),
                      format_double(r.refined_rmse), format_double(r.direction_accuracy), format_double(r.align_r2),
                      format_double(r.align_cos), format_double(r.mean_active), format_double(r.mean_active_refined),
                      r.failure});
  return format_csv(t);
}

std::string summary_csv(const std::vector<VariantSummary>& summary) {
  CsvTable t;
  t.header = {"variant", "runs", "failures", "test_rmse", "rmse_change_pct", "direction_accuracy", "align_r2",
              "mean_active"};
  for (const VariantSummary& s : summary)
    t.rows.push_back({s.variant, std::to_string(s.runs), std::to_string(s.failures), format_double(s.test_rmse),
                      format_double(s.rmse_change_pct), format_double(s.direction_accuracy),
                      format_double(s.align_r2), format_double(s.mean_active)});
  return format_csv(t);
}

}  // namespace slff
