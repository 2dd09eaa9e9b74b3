// Acceptance gate: one PASS/FAIL line per criterion, tolerances fixed here.
//
//   acceptance [--only 1,3,...]
//
// Exit status is 0 iff every selected criterion passes.

#include "grad_check.hpp"
#include "oracles.hpp"

#include "slff/cli.hpp"
#include "slff/dataproto.hpp"
#include "slff/eval.hpp"
#include "slff/experiments.hpp"
#include "slff/interpret.hpp"
#include "slff/io.hpp"
#include "slff/synthetic.hpp"
#include "slff/theory_checks.hpp"
#include "slff/training.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

using namespace slff;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const fs::path kWorked = fs::path(SLFF_TEST_DATA) / "worked_example";

// --- Pinned tolerances ----------------------------------------------------------

constexpr double kAlignMin = 0.90, kMeanCorrMin = 0.70, kMinCorrMin = 0.45;
constexpr double kActiveTarget = 5.0, kActiveTol = 1.0;
constexpr double kRecoverySeconds = 30 * 60;
constexpr double kSnrTol = 10.0;  // percentage points
const std::map<double, double> kSnrReference = {{0.3, 7.0}, {0.5, 14.0}, {1.0, 26.0}};
constexpr double kOracleTol = 1e-4, kOracleSeconds = 60;
constexpr double kMonotoneRelTol = 1e-10;
constexpr double kGapRatioLo = 0.3, kGapRatioHi = 1.0;
constexpr double kK1MinDegradePct = 2.0, kK20MaxChangePct = 1.0;
constexpr double kDenseSlack = 0.1;  // allowed shortfall of the no-L1 active count below m
constexpr int kMuMaxViolations = 1;
constexpr double kGradTol = 1e-4;
constexpr double kDmSizeTol = 0.02;
constexpr double kKsMinP = 0.01, kEventAlpha = 0.01;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s << std::setprecision(prec) << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "slff_acceptance" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// --- Desk-scale synthetic runs ---------------------------------------------------
//
// Everything below is configured from the "desk" preset of the CLI, so the
// gate exercises exactly what `slff train --preset desk` runs.

KvConfig desk(const std::vector<std::string>& overrides = {}) { return resolve_config("desk", {}, overrides); }

struct SyntheticRun {
  SyntheticDataset ds;
  ExperimentData data;
  ModelConfig model;
  TrainConfig train;
  std::optional<TrainResult> result;
  double seconds = 0.0;
};

SyntheticRun prepare(const KvConfig& kv) {
  SyntheticRun r{generate(dgp_config(kv)), {}, {}, {}, {}, 0.0};
  const int window = kv.integer("model.window");
  r.data.train = r.ds.windows(r.ds.split(0), window);
  r.data.val = r.ds.windows(r.ds.split(1), window);
  r.data.test = r.ds.windows(r.ds.split(2), window);
  r.model = model_config(kv, r.ds.config.d, static_cast<int>(r.ds.config.resolved_horizons().size()));
  r.train = train_config(kv);
  return r;
}

SyntheticRun& fit(SyntheticRun& r) {
  const auto t0 = std::chrono::steady_clock::now();
  r.result = train_two_stage(ModelBundle::initialize(r.model), r.data.train, r.data.val, r.train);
  r.seconds = seconds_since(t0);
  return r;
}

double deployed_test_rmse(const SyntheticRun& r) {
  const PathOutputs p = run_paths(r.result->bundle, r.data.test, r.train.energy_params, false);
  return pooled_rmse(p.deployed, p.targets);
}

// Shared across criteria: the σ_y sweep on the base DGP (σ_y = 0.1 doubles as
// the recovery run).
struct Context {
  std::map<double, SyntheticRun> snr;

  SyntheticRun& at_sigma(double sigma) {
    auto it = snr.find(sigma);
    if (it == snr.end()) {
      it = snr.emplace(sigma, prepare(desk({"dgp.noise_sigma=" + fmt(sigma)}))).first;
      fit(it->second);
    }
    return it->second;
  }
};

// --- 1. Factor recovery ----------------------------------------------------------

Verdict recovery(Context& ctx) {
  SyntheticRun& r = ctx.at_sigma(0.1);
  const DgpConfig& c = r.ds.config;
  if (c.kind != DgpKind::base || c.m_true != 20 || c.s_active != 5 || c.d != 80 || c.num_trajectories != 100)
    return {false, "desk preset does not describe the base DGP at 100 trajectories"};
  const RecoveryReport rep =
      factor_recovery_report(r.ds, r.result->bundle, r.data.val, r.data.test, r.train.energy_params);
  const bool pass = rep.subspace_alignment >= kAlignMin && rep.mean_correlation >= kMeanCorrMin &&
                    rep.min_correlation >= kMinCorrMin && std::abs(rep.mean_active - kActiveTarget) <= kActiveTol &&
                    r.seconds < kRecoverySeconds;
  return {pass, "alignment " + fmt(rep.subspace_alignment) + " (>= 0.90), mean corr " + fmt(rep.mean_correlation) +
                    " (>= 0.70), min corr " + fmt(rep.min_correlation) + " (>= 0.45), active " +
                    fmt(rep.mean_active) + " (5 +- 1), train " + fmt(r.seconds, 3) + " s"};
}

// --- 2. SNR robustness -----------------------------------------------------------

Verdict snr_robustness(Context& ctx) {
  std::map<double, double> rmse;
  for (double s : {0.1, 0.3, 0.5, 1.0}) rmse[s] = deployed_test_rmse(ctx.at_sigma(s));
  const std::map<double, double> deg = rmse_degradation(rmse);
  bool pass = true;
  double prev = 0.0;
  std::string detail = "degradation";
  for (const auto& [sigma, ref] : kSnrReference) {
    const double d = deg.at(sigma);
    pass = pass && d > prev && std::abs(d - ref) <= kSnrTol;
    prev = d;
    detail += " s=" + fmt(sigma, 2) + ":" + fmt(d, 3) + "% (ref " + fmt(ref, 3) + ")";
  }
  detail += "; rmse@0.1 " + fmt(rmse.at(0.1));
  return {pass, detail};
}

// --- 3. Oracle equivalence -------------------------------------------------------

Verdict oracle_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const Index m = 2 + i % 7;  // 2..8
    const Index N = m + 2 + i % 11;
    const LinearInstance inst = random_linear_instances(1, N, m, derive_seed(3, "acceptance.oracle", i))[0];
    EnergyParams p;
    p.lambda_l1 = i % 2 == 0 ? 0.05 : 0.3;
    p.mu_prox = 0.1;
    p.num_steps = 500;
    p.step_size = safe_step_size(inst, p.mu_prox);
    const AffineLatentMap map(inst.weights, inst.offset);
    const Vec z = refine(inst.target, map, LatentCode{inst.anchor}, p).final_latent.values;
    const Vec ref = oracle::lasso_prox_cd(inst.weights, inst.target, inst.offset, inst.anchor, p.lambda_l1, p.mu_prox);
    worst = std::max(worst, (z - ref).lpNorm<Eigen::Infinity>());
  }
  const double secs = seconds_since(t0);
  return {worst <= kOracleTol && secs < kOracleSeconds,
          "max |z_K - z_cd| " + fmt(worst, 3) + " (<= 1e-4) over 50 instances, " + fmt(secs, 3) + " s"};
}

// --- 4. Energy monotonicity ------------------------------------------------------

Verdict energy_monotonicity() {
  Rng rng = make_rng(4, "acceptance.monotone");
  int violations = 0;
  long steps = 0;
  for (int i = 0; i < 1000; ++i) {
    const Index m = 2 + i % 15;
    const Index N = 3 + (i * 7) % 20;
    LinearInstance inst = random_linear_instances(1, N, m, derive_seed(4, "acceptance.instance", i))[0];
    // Anchors far from the optimum give long descents.
    for (Index k = 0; k < m; ++k) inst.anchor[k] += 2.0 * standard_normal(rng);
    EnergyParams p;
    p.mu_prox = 0.1;
    p.lambda_l1 = std::pow(10.0, -4.0 + 4.0 * uniform01(rng));
    p.step_size = (0.05 + 0.95 * uniform01(rng)) * safe_step_size(inst, p.mu_prox);
    if (i % 10 == 0) p.step_size = safe_step_size(inst, p.mu_prox);  // the boundary case
    p.num_steps = 100;
    const RefinementTrace t = refine(inst.target, AffineLatentMap(inst.weights, inst.offset), LatentCode{inst.anchor}, p);
    for (std::size_t k = 0; k + 1 < t.energies.size(); ++k, ++steps)
      if (t.energies[k + 1] - t.energies[k] > kMonotoneRelTol * std::abs(t.energies[k])) ++violations;
  }
  return {violations == 0, std::to_string(violations) + " increases over " + std::to_string(steps) +
                               " steps of 1000 traces (mu = 0.1, alpha <= 1/L_g)"};
}

// --- 5. Gap bound on linearized folds ---------------------------------------------

Verdict gap_bound_folds(Context& ctx) {
  bool pass = true;
  std::string detail;
  for (double s : {0.1, 0.3, 0.5, 1.0}) {
    SyntheticRun& r = ctx.at_sigma(s);
    if (r.model.decoder_kind != DecoderKind::linearized) return {false, "desk preset decoder is not linearized"};
    for (const auto& [name, split] : {std::pair<const char*, const WindowedData*>{"val", &r.data.val},
                                      {"test", &r.data.test}}) {
      const GapDiagnosis g = diagnose_gap(r.result->bundle, r.data.train, *split, r.train.energy_params, {});
      const bool ok = g.main.satisfied && g.main.ratio >= kGapRatioLo && g.main.ratio <= kGapRatioHi;
      pass = pass && ok;
      detail += (detail.empty() ? "" : ", ") + std::string("s=") + fmt(s, 2) + "/" + name + " ratio " +
                fmt(g.main.ratio, 3) + (g.main.satisfied ? "" : " (bound violated)");
    }
  }
  return {pass, detail};
}

// --- 6. Ablation directionality ----------------------------------------------------
//
// The ablation and μ grids run on a smaller dataset in which the history
// context carries most of the predictable signal (context-dominated targets,
// a wide Pred and a narrow encoder) and refinement takes short steps.

const std::vector<std::string> kGridOverrides = {
    "dgp.num_trajectories=40", "dgp.mixing_scale=1", "dgp.context_scale=3", "model.hidden=32",
    "model.enc_hidden=8",      "energy.alpha=0.001", "train.epochs=60"};

Verdict ablation_shape() {
  SyntheticRun base = prepare(desk(kGridOverrides));
  const std::vector<VariantResult> runs =
      run_grid(base.data, base.model, base.train, ablation_variants(), 3, derive_seed(0, "ablate"));
  const std::vector<VariantSummary> sum = summarize(runs, "full");
  std::map<std::string, VariantSummary> by;
  for (const VariantSummary& s : sum) by[s.variant] = s;
  for (const VariantSummary& s : sum)
    if (s.failures > 0) return {false, s.variant + ": " + std::to_string(s.failures) + " failed runs"};
  const double m = base.model.latent_dim;
  const bool dense = by["no_l1"].mean_active >= m - kDenseSlack;
  const bool k1 = by["k=1"].rmse_change_pct >= kK1MinDegradePct;
  const bool k20 = std::abs(by["k=20"].rmse_change_pct) < kK20MaxChangePct;
  bool no_h_worst = true;
  for (const VariantSummary& s : sum)
    if (s.variant != "no_h" && s.variant != "full") no_h_worst = no_h_worst && by["no_h"].rmse_change_pct > s.rmse_change_pct;
  std::string detail = "no_l1 active " + fmt(by["no_l1"].mean_active) + "/" + fmt(m, 3) + "; change %:";
  for (const VariantSummary& s : sum) detail += " " + s.variant + " " + fmt(s.rmse_change_pct, 3);
  return {dense && k1 && k20 && no_h_worst, detail};
}

// --- 7. μ trade-off ---------------------------------------------------------------

Verdict mu_tradeoff() {
  SyntheticRun base = prepare(desk(kGridOverrides));
  std::vector<double> r2, rmse;
  for (const std::string& v : mu_sweep_variants()) {
    const VariantResult r = run_variant(base.data, base.model, base.train, v, 0, derive_seed(0, "ablate"));
    if (!r.ok) return {false, v + " failed: " + r.failure};
    r2.push_back(r.align_r2);
    rmse.push_back(r.test_rmse);
  }
  int r2_viol = 0, rmse_viol = 0;
  for (std::size_t i = 0; i + 1 < r2.size(); ++i) {
    if (r2[i + 1] < r2[i]) ++r2_viol;
    if (rmse[i + 1] < rmse[i]) ++rmse_viol;
  }
  std::string detail = "R2";
  for (double v : r2) detail += " " + fmt(v, 3);
  detail += "; rmse";
  for (double v : rmse) detail += " " + fmt(v, 4);
  detail += "; violations " + std::to_string(r2_viol) + "/" + std::to_string(rmse_viol);
  return {r2_viol <= kMuMaxViolations && rmse_viol <= kMuMaxViolations, detail};
}

// --- 8. Gradient correctness -------------------------------------------------------

// Inference gradient of the smooth energy, read off one library step with
// λ = 0, against central differences of the library energy. Coordinates whose
// perturbation flips a decoder ReLU are skipped.
gradcheck::Result check_inference_gradient(const ModelBundle& b, const Mat& z, const Mat& h, const Mat& y,
                                           const Mat& anchor, double step = 1e-6) {
  DecoderLatentMap map(b, h);
  EnergyParams p;
  p.lambda_l1 = 0.0;
  p.mu_prox = 0.1;
  p.step_size = 1e-3;
  p.num_steps = 1;
  const Mat z1 = refine_batch(y, map, z, p, false).final_latents;
  // refine starts at the anchor, so shift the anchor term by hand: the step
  // was taken from z with the proximity centred at z itself.
  Mat analytic = (z - z1) / p.step_size + 2.0 * p.mu_prox * (z - anchor);
  const auto pattern = [&](const Mat& zz) {
    gradcheck::Pattern pt;
    DecTape t;
    dec_forward_batch(b, zz, h, &t);
    gradcheck::append_relu_pattern(pt, t.a1);
    gradcheck::append_relu_pattern(pt, t.a2);
    return pt;
  };
  const gradcheck::Pattern base = pattern(z);
  Mat fd = Mat::Zero(z.rows(), z.cols());
  Mat zp = z;
  gradcheck::Result r;
  for (Index i = 0; i < z.size(); ++i) {
    const double orig = zp.data()[i];
    zp.data()[i] = orig + step;
    const double ep = energy_batch(y, map, zp, anchor, p).sum();
    const bool same_p = pattern(zp) == base;
    zp.data()[i] = orig - step;
    const double em = energy_batch(y, map, zp, anchor, p).sum();
    const bool same_m = pattern(zp) == base;
    zp.data()[i] = orig;
    if (!same_p || !same_m) {
      analytic.data()[i] = 0.0;
      ++r.skipped;
      continue;
    }
    fd.data()[i] = (ep - em) / (2.0 * step);
    ++r.checked;
  }
  r.rel_error = gradcheck::rel_error(Eigen::Map<const Vec>(analytic.data(), analytic.size()),
                                     Eigen::Map<const Vec>(fd.data(), fd.size()));
  return r;
}

Verdict gradient_correctness() {
  double worst = 0.0;
  std::string worst_name;
  int checks = 0, empty = 0;
  for (int i = 0; i < 100; ++i) {
    const DecoderKind kind = i % 2 == 0 ? DecoderKind::mlp : DecoderKind::linearized;
    const bool use_h = i % 5 != 4;
    const double shrink = i % 3 == 2 ? 0.05 : 0.0;
    const int enc_hidden = i % 4 == 3 ? 7 : 0;
    const auto tc = gradcheck::make_tiny_case(1000 + i, kind, use_h, shrink, 4 + i % 5, 3 + i % 4, 2 + i % 3,
                                              3 + i % 4, 1 + i % 3, 2 + i % 3, enc_hidden);
    const Mat* zs = &tc.z_star;
    Rng rng = make_rng(1000 + i, "acceptance.grad");
    Mat v(tc.y.rows(), tc.y.cols()), vh(tc.bundle.config.hidden, tc.y.cols()), anchor(tc.z_star.rows(), tc.z_star.cols());
    for (Index k = 0; k < v.size(); ++k) v.data()[k] = standard_normal(rng);
    for (Index k = 0; k < vh.size(); ++k) vh.data()[k] = standard_normal(rng);
    for (Index k = 0; k < anchor.size(); ++k) anchor.data()[k] = standard_normal(rng);
    const Mat h = history_or_zero(tc.bundle, tc.x);
    std::vector<std::pair<std::string, gradcheck::Result>> rs = {
        {"dec/prediction", gradcheck::check_group(tc.bundle, LossKind::prediction, tc.x, tc.y, zs, ParamGroup::dec)},
        {"dec/deployed", gradcheck::check_group(tc.bundle, LossKind::deployed, tc.x, tc.y, nullptr, ParamGroup::dec)},
        {"enc/matching", gradcheck::check_group(tc.bundle, LossKind::matching, tc.x, tc.y, zs, ParamGroup::enc)},
        {"enc/deployed", gradcheck::check_group(tc.bundle, LossKind::deployed, tc.x, tc.y, nullptr, ParamGroup::enc)},
        {"latent pullback", gradcheck::check_latent_pullback(tc.bundle, tc.z_star, h, v)},
        {"inference grad", check_inference_gradient(tc.bundle, tc.z_star, h, tc.y, anchor)},
        {"pred input", gradcheck::check_pred_input(tc.bundle, tc.x, vh)}};
    if (use_h) {
      rs.emplace_back("pred/prediction (BPTT)",
                      gradcheck::check_group(tc.bundle, LossKind::prediction, tc.x, tc.y, zs, ParamGroup::pred));
      rs.emplace_back("pred/deployed (BPTT)",
                      gradcheck::check_group(tc.bundle, LossKind::deployed, tc.x, tc.y, nullptr, ParamGroup::pred));
    }
    for (const auto& [name, r] : rs) {
      ++checks;
      if (r.checked == 0) ++empty;
      if (r.rel_error > worst) {
        worst = r.rel_error;
        worst_name = name + " config " + std::to_string(i);
      }
    }
  }
  return {worst <= kGradTol && empty == 0,
          "worst relative error " + fmt(worst, 3) + (worst_name.empty() ? "" : " (" + worst_name + ")") + " over " +
              std::to_string(checks) + " checks on 100 configs" +
              (empty > 0 ? ", " + std::to_string(empty) + " checks had no differentiable coordinate" : "")};
}

// --- 9. Leakage audit -------------------------------------------------------------

bool same_cell(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

Verdict leakage_audit() {
  const auto series = load_series_dir(kWorked);
  AlignedPanel p = align(series, load_calendar(kWorked / "calendar.csv"));
  const CsvTable ev = read_csv(kWorked / "expected_values.csv"), em = read_csv(kWorked / "expected_masks.csv");
  int mismatches = 0;
  const auto col = [&](const std::string& id) {
    for (std::size_t j = 0; j < p.columns.size(); ++j)
      if (p.columns[j].series_id == id) return static_cast<Index>(j);
    throw std::runtime_error("missing column " + id);
  };
  const auto row = [&](const std::string& d) {
    return static_cast<Index>(std::find(p.calendar.begin(), p.calendar.end(), parse_date(d)) - p.calendar.begin());
  };
  if (ev.rows.size() != static_cast<std::size_t>(p.length()) || p.width() != 3)
    return {false, "worked example panel has the wrong shape"};
  if (format_date(p.calendar.front()) != "2020-01-02" || format_date(p.calendar.back()) != "2020-02-03")
    return {false, "worked example calendar does not span Jan 2 - Feb 3, 2020"};
  for (std::size_t t = 0; t < ev.rows.size(); ++t) {
    if (format_date(p.calendar[t]) != ev.rows[t][0]) ++mismatches;
    for (std::size_t j = 1; j < ev.header.size(); ++j) {
      const Index c = col(ev.header[j]);
      if (!same_cell(p.values(static_cast<Index>(t), c), parse_double(ev.rows[t][j]))) ++mismatches;
      if (p.masks(static_cast<Index>(t), c) != parse_double(em.rows[t][j])) ++mismatches;
    }
  }
  const bool clean = audit_leakage(p, series).clean();

  // Planted faults: two look-ahead values, one wrong mask bit, one corrupted value.
  using Key = std::tuple<std::string, std::string, std::string>;  // kind, date, series
  const std::set<Key> planted = {{"leak", "2020-01-16", "eia_crude_inventory"},
                                 {"leak", "2020-01-30", "ism_pmi"},
                                 {"mask", "2020-01-09", "ism_pmi"},
                                 {"mismatch", "2020-01-09", "copper_close"}};
  p.values(row("2020-01-16"), col("eia_crude_inventory")) = 428.1;
  p.values(row("2020-01-30"), col("ism_pmi")) = 50.9;
  p.masks(row("2020-01-09"), col("ism_pmi")) = 1.0;
  p.values(row("2020-01-09"), col("copper_close")) = 99.0;
  std::set<Key> found;
  const AuditReport a = audit_leakage(p, series);
  for (const AuditEntry& v : a.violations) found.emplace(v.kind, v.date, v.series_id);
  const bool exact = found == planted && a.violations.size() == planted.size();
  return {mismatches == 0 && clean && exact,
          std::to_string(mismatches) + " golden-cell mismatches, clean audit " + (clean ? "yes" : "no") + ", " +
              std::to_string(a.violations.size()) + " violations reported for 4 planted (" +
              (exact ? "exact" : "not exact") + ")"};
}

// --- 10. Statistical machinery ------------------------------------------------------

Verdict statistics_calibration() {
  // DM size under equal accuracy with i.i.d. losses, at lag 0 (h = 1) and lag
  // 4 (h = 5). The MA(4) loss-differential case is reported but not gated: the
  // Bartlett kernel truncated at h - 1 under-weights those autocovariances.
  Rng rng = make_rng(10, "acceptance.dm");
  const int sims = 1000;
  const Index n = 500;
  std::map<std::string, int> rejections;
  for (int s = 0; s < sims; ++s) {
    Vec a(n), b(n), e(n + 4), ma(n);
    for (Index i = 0; i < n; ++i) {
      a[i] = standard_normal(rng);
      b[i] = standard_normal(rng);
    }
    for (Index i = 0; i < e.size(); ++i) e[i] = standard_normal(rng);
    for (Index i = 0; i < n; ++i) ma[i] = e.segment(i, 5).sum() / std::sqrt(5.0);
    if (dm_test(a, b, 1).p_value < 0.05) ++rejections["h1"];
    if (dm_test(a, b, 5).p_value < 0.05) ++rejections["h5"];
    if (dm_test(Vec(b + ma), b, 5).p_value < 0.05) ++rejections["ma4"];
  }
  const double size1 = rejections["h1"] / double(sims), size5 = rejections["h5"] / double(sims);
  const double size_ma = rejections["ma4"] / double(sims);
  const bool dm_ok = std::abs(size1 - 0.05) <= kDmSizeTol && std::abs(size5 - 0.05) <= kDmSizeTol;

  // Event study under the null and with +1 SD planted shifts.
  Rng erng = make_rng(10, "acceptance.events");
  const Index T = 500;
  std::vector<double> null_p;
  int detected = 0;
  const int planted_reps = 50;
  for (int rep = 0; rep < 300; ++rep) {
    Vec f(T);
    for (Index t = 0; t < T; ++t) f[t] = standard_normal(erng);
    std::vector<Index> events;
    for (Index e = 20; e < T - 20; e += 45) events.push_back(e + static_cast<Index>(uniform01(erng) * 10.0));
    null_p.push_back(event_study(f, events, 3, 200, derive_seed(10, "null", rep)).p_value);
    if (rep < planted_reps) {
      Vec planted = f;
      for (Index e : events)
        for (Index t = e - 3; t <= e + 3; ++t) planted[t] += 1.0;
      if (event_study(planted, events, 3, 1000, derive_seed(10, "planted", rep)).p_value < kEventAlpha) ++detected;
    }
  }
  const auto [D, ks_p] = ks_uniform(null_p);
  return {dm_ok && ks_p > kKsMinP && detected == planted_reps,
          "DM size h=1 " + fmt(100 * size1, 3) + "%, h=5 " + fmt(100 * size5, 3) + "% (5 +- 2) [MA(4) null " +
              fmt(100 * size_ma, 3) + "%, not gated]; event null KS p " +
              fmt(ks_p, 3) + " (> 0.01); planted detected " + std::to_string(detected) + "/" +
              std::to_string(planted_reps) + " at p < 0.01"};
}

// --- 11. Reproducibility -----------------------------------------------------------

Verdict reproducibility() {
  const fs::path d = scratch("rerun");
  const auto cli = [](std::vector<std::string> args) {
    std::ostringstream o, e;
    return run_cli(args, o, e);
  };
  const std::string ds = (d / "ds").string(), ck = (d / "tr" / "checkpoint").string();
  const std::vector<std::string> small = {"model.latent_dim=4", "model.window=5", "model.hidden=8",
                                          "model.enc_hidden=8", "train.epochs=3"};
  const auto with = [&](std::vector<std::string> args, bool model_keys) {
    args.insert(args.end(), {"--preset", "desk", "--set"});
    if (model_keys) args.insert(args.end(), small.begin(), small.end());
    else args.push_back("seed=0");
    return args;
  };
  const std::vector<std::pair<std::string, std::vector<std::string>>> commands = {
      {"ds", {"synth-gen", "--out", ds, "--seed", "5", "--set", "dgp.num_trajectories=8", "dgp.trajectory_length=120",
              "dgp.d=12", "dgp.m_true=4", "dgp.s_active=2", "dgp.horizons=1,2,5"}},
      {"tr", with({"train", "--data", ds, "--out", (d / "tr").string()}, true)},
      {"ev", with({"eval", "--checkpoint", ck, "--data", ds, "--out", (d / "ev").string(), "--dm-against", "ridge"},
                  false)},
      {"in", with({"interpret", "--checkpoint", ck, "--checkpoint", ck, "--data", ds, "--out", (d / "in").string(),
                   "--true-latent-drivers"},
                  false)},
      {"gap", with({"gap-diagnose", "--checkpoint", ck, "--data", ds, "--out", (d / "gap").string()}, false)},
      {"abl", with({"ablate", "--data", ds, "--out", (d / "abl").string(), "--variants", "full,no_l1", "--seeds", "2"},
                   true)},
      {"al", {"align", "--series", kWorked.string(), "--calendar", (kWorked / "calendar.csv").string(), "--out",
              (d / "al").string()}}};
  int identical = 0;
  std::string failed;
  for (const auto& [dir, args] : commands) {
    if (cli(args) != 0) {
      failed += " " + dir + "(run)";
      continue;
    }
    std::ostringstream o, e;
    const int code = run_cli({"rerun", "--manifest", (d / dir / "manifest.json").string(), "--out",
                              (d / (dir + "_again")).string()},
                             o, e);
    const std::string out = o.str();
    const auto brace = out.find('{');
    const bool same = code == 0 && brace != std::string::npos && json::parse(out.substr(brace))["identical"].get<bool>();
    if (same) ++identical;
    else failed += " " + dir;
  }
  return {identical == static_cast<int>(commands.size()),
          std::to_string(identical) + "/" + std::to_string(commands.size()) +
              " commands reproduce identical artifact hashes" + (failed.empty() ? "" : "; failed:" + failed)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string item; std::getline(ss, item, ',');) only.insert(std::stoi(item));
    } else {
      std::cerr << "usage: acceptance [--only 1,2,...]\n";
      return 1;
    }
  }
  Context ctx;
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"synthetic factor recovery", [&] { return recovery(ctx); }},
      {"SNR robustness", [&] { return snr_robustness(ctx); }},
      {"oracle equivalence (K=500 vs coordinate descent)", oracle_equivalence},
      {"energy monotonicity", energy_monotonicity},
      {"amortization gap bound (linearized folds)", [&] { return gap_bound_folds(ctx); }},
      {"ablation directionality", ablation_shape},
      {"mu trade-off monotonicity", mu_tradeoff},
      {"gradient correctness", gradient_correctness},
      {"leakage audit", leakage_audit},
      {"statistical calibration", statistics_calibration},
      {"reproducibility from manifests", reproducibility}};
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    if (!v.pass) ++failures;
    std::cout << (v.pass ? "PASS" : "FAIL") << "  [" << id << "] " << criteria[i].first << ": " << v.detail << " ("
              << fmt(seconds_since(t0), 3) << " s)" << std::endl;
  }
  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " criteria FAILED") << std::endl;
  return failures == 0 ? 0 : 1;
}
