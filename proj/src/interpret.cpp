#include "slff/interpret.hpp"

#include "slff/io.hpp"
#include "slff/training.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>

namespace slff {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Mat centered(const Mat& x) { return x.rowwise() - x.colwise().mean(); }

// Orthonormal basis of the centered column span (samples x rank).
Mat span_basis(const Mat& x) {
  const Mat c = centered(x);
  Eigen::JacobiSVD<Mat> svd(c, Eigen::ComputeThinU);
  const Vec& s = svd.singularValues();
  Index rank = 0;
  if (s.size() > 0 && s[0] > 0.0)
    while (rank < s.size() && s[rank] > 1e-10 * s[0]) ++rank;
  return svd.matrixU().leftCols(rank);
}

Index uniform_index(Rng& rng, Index n) {
  return std::min<Index>(n - 1, static_cast<Index>(uniform01(rng) * static_cast<double>(n)));
}

// k distinct values from [0, n), sorted (Floyd's algorithm).
std::vector<Index> sample_sorted(Rng& rng, Index n, Index k) {
  std::set<Index> chosen;
  for (Index j = n - k; j < n; ++j) {
    const Index t = uniform_index(rng, j + 1);
    if (!chosen.insert(t).second) chosen.insert(j);
  }
  return {chosen.begin(), chosen.end()};
}

double sample_var(const Vec& v) {
  if (v.size() < 2) return 0.0;
  return (v.array() - v.mean()).square().sum() / double(v.size() - 1);
}

}  // namespace

void FactorPanel::validate() const {
  if (!latents.allFinite()) throw DataError("factor panel: non-finite latents");
  if (!(active_threshold >= 0.0)) throw InvalidArgument("factor panel: active threshold must be >= 0");
  require_shape(dates.empty() || static_cast<Index>(dates.size()) == latents.rows(),
                "factor panel: one date per row");
}

FactorPanel factor_panel(const ModelBundle& bundle, const WindowedData& data, const EnergyParams& params,
                         bool refined, double active_threshold) {
  const PathOutputs p = run_paths(bundle, data, params, refined);
  FactorPanel f;
  f.latents = (refined ? p.z_star : p.z_hat).transpose();
  f.active_threshold = active_threshold;
  for (Index i = 0; i < data.size(); ++i) f.dates.push_back(data.label(i));
  f.validate();
  return f;
}

// --- Stability -------------------------------------------------------------------

Vec canonical_correlations(const Mat& a, const Mat& b) {
  require_shape(a.rows() == b.rows(), "canonical correlations: sample counts differ");
  const Mat qa = span_basis(a), qb = span_basis(b);
  if (qa.cols() == 0 || qb.cols() == 0) throw DegenerateError("canonical correlations: rank-0 panel");
  Vec s = Eigen::JacobiSVD<Mat>(qa.transpose() * qb).singularValues();
  return s.cwiseMin(1.0);
}

StabilityReport procrustes_stability(const std::vector<FactorPanel>& panels, double fit_fraction) {
  if (panels.size() < 2) throw InvalidArgument("stability: need at least two panels");
  if (!(fit_fraction > 0.0 && fit_fraction < 1.0)) throw InvalidArgument("stability: fit_fraction in (0, 1)");
  const Index T = panels[0].length(), m = panels[0].width();
  for (const FactorPanel& p : panels) {
    p.validate();
    require_shape(p.length() == T && p.width() == m, "stability: panels must share dates and width");
    if (p.dates != panels[0].dates) throw InvalidArgument("stability: panels must share dates");
  }
  const Index n_fit = static_cast<Index>(std::llround(fit_fraction * double(T)));
  if (n_fit < 2 || T - n_fit < 2) throw InvalidArgument("stability: too few dates for a fit/held split");
  StabilityReport rep;
  double sum = 0.0;
  for (std::size_t i = 0; i < panels.size(); ++i)
    for (std::size_t j = i + 1; j < panels.size(); ++j) {
      const Mat& a = panels[i].latents;
      const Mat& b = panels[j].latents;
      PairStability ps;
      ps.first = static_cast<int>(i);
      ps.second = static_cast<int>(j);
      const Mat fa = centered(a.topRows(n_fit)), fb = centered(b.topRows(n_fit));
      Eigen::JacobiSVD<Mat> svd(fb.transpose() * fa, Eigen::ComputeFullU | Eigen::ComputeFullV);
      ps.rotation = svd.matrixU() * svd.matrixV().transpose();
      const Mat held_b = b.bottomRows(T - n_fit) * ps.rotation;
      const Vec cc = canonical_correlations(a.bottomRows(T - n_fit), held_b);
      // Dimensions lost to rank deficiency count as orthogonal.
      ps.canonical = Vec::Zero(m);
      ps.canonical.head(std::min<Index>(m, cc.size())) = cc.head(std::min<Index>(m, cc.size()));
      ps.mean_canonical = ps.canonical.mean();
      ps.max_angle_degrees = std::acos(std::clamp(ps.canonical.minCoeff(), -1.0, 1.0)) * 180.0 / std::numbers::pi;
      sum += ps.mean_canonical;
      rep.max_angle_degrees = std::max(rep.max_angle_degrees, ps.max_angle_degrees);
      rep.pairs.push_back(std::move(ps));
    }
  rep.mean_canonical = sum / double(rep.pairs.size());
  return rep;
}

// --- Driver validity -----------------------------------------------------------------

double pearson(const Vec& a, const Vec& b) {
  require_shape(a.size() == b.size(), "pearson: length mismatch");
  const Vec ca = a.array() - a.mean(), cb = b.array() - b.mean();
  const double na = ca.norm(), nb = cb.norm();
  const double scale_a = 1e-12 * (1.0 + a.cwiseAbs().maxCoeff()) * std::sqrt(double(a.size()));
  const double scale_b = 1e-12 * (1.0 + b.cwiseAbs().maxCoeff()) * std::sqrt(double(b.size()));
  if (na <= scale_a || nb <= scale_b) return kNaN;
  return std::clamp(ca.dot(cb) / (na * nb), -1.0, 1.0);
}

Vec residualize(const Vec& y, const Mat& x) {
  require_shape(x.rows() == y.size(), "residualize: row mismatch");
  Mat design(x.rows(), x.cols() + 1);
  design.col(0).setOnes();
  design.rightCols(x.cols()) = x;
  const Vec beta = design.completeOrthogonalDecomposition().solve(y);
  return y - design * beta;
}

DriverReport driver_regression(const FactorPanel& panel, const Mat& drivers,
                               const std::vector<std::string>& driver_names,
                               const std::vector<std::string>& feature_names, const std::optional<Mat>& controls) {
  panel.validate();
  const Index T = panel.length();
  require_shape(drivers.rows() == T, "driver regression: drivers must share the panel's dates");
  require_shape(static_cast<Index>(driver_names.size()) == drivers.cols(), "driver regression: one name per driver");
  if (!drivers.allFinite()) throw DataError("driver regression: non-finite driver values");
  const std::set<std::string> features(feature_names.begin(), feature_names.end());
  for (const std::string& d : driver_names)
    if (features.count(d)) throw ContractViolation("driver regression: driver '" + d + "' is a model input");
  if (controls) require_shape(controls->rows() == T, "driver regression: controls must share the panel's dates");

  DriverReport rep;
  const Index m = panel.width(), p = drivers.cols();
  Mat r(m, p);
  for (Index k = 0; k < m; ++k)
    for (Index j = 0; j < p; ++j) r(k, j) = pearson(panel.latents.col(k), drivers.col(j));
  rep.signs.assign(static_cast<std::size_t>(m), 1.0);
  for (Index k = 0; k < m; ++k) {
    Index best = -1;
    for (Index j = 0; j < p; ++j)
      if (!std::isnan(r(k, j)) && (best < 0 || std::abs(r(k, j)) > std::abs(r(k, best)))) best = j;
    if (best < 0) {
      rep.warnings.push_back("factor " + std::to_string(k) + " is constant; correlations undefined");
      continue;
    }
    if (r(k, best) < 0.0) rep.signs[static_cast<std::size_t>(k)] = -1.0;
  }
  std::vector<Vec> driver_resid;
  if (controls)
    for (Index j = 0; j < p; ++j) driver_resid.push_back(residualize(drivers.col(j), *controls));
  for (Index k = 0; k < m; ++k) {
    const double sign = rep.signs[static_cast<std::size_t>(k)];
    const Vec factor = sign * panel.latents.col(k);
    const Vec factor_resid = controls ? residualize(factor, *controls) : Vec();
    for (Index j = 0; j < p; ++j) {
      DriverStat s;
      s.factor = static_cast<int>(k);
      s.driver = driver_names[static_cast<std::size_t>(j)];
      s.r = sign * r(k, j);
      s.r_squared = s.r * s.r;
      s.partial_r = kNaN;
      if (controls) {
        // Residuals that vanish relative to the original series mean the
        // control set explains the variable entirely.
        const Vec& dr = driver_resid[static_cast<std::size_t>(j)];
        const double fscale = (factor.array() - factor.mean()).matrix().norm();
        const double dscale = (drivers.col(j).array() - drivers.col(j).mean()).matrix().norm();
        if (factor_resid.norm() > 1e-8 * fscale && dr.norm() > 1e-8 * dscale) {
          s.partial_r = pearson(factor_resid, dr);
          s.partial_defined = !std::isnan(s.partial_r);
        }
        if (!s.partial_defined)
          rep.warnings.push_back("partial r undefined for factor " + std::to_string(k) + " / " + s.driver);
      }
      rep.stats.push_back(std::move(s));
    }
  }
  return rep;
}

// --- Counterfactuals -----------------------------------------------------------------

Vec factor_std(const ModelBundle& bundle, const WindowedData& data) {
  if (data.size() < 2) throw InvalidArgument("factor std: need at least two samples");
  const Mat z = run_paths(bundle, data, EnergyParams{}, false).z_hat;
  const Mat c = z.colwise() - z.rowwise().mean();
  return (c.rowwise().squaredNorm() / double(z.cols())).cwiseSqrt();
}

Vec counterfactual(const ModelBundle& bundle, const WindowTensor& x, Index factor, double delta,
                   const Vec& factor_stds) {
  const Index m = bundle.config.latent_dim;
  if (factor < 0 || factor >= m) throw InvalidArgument("counterfactual: factor index out of range");
  require_shape(factor_stds.size() == m, "counterfactual: one std per latent dimension");
  const SequenceBatch seq = make_sequence_batch(x);
  const Mat z = enc_forward_batch(bundle, seq);
  const Mat h = history_or_zero(bundle, seq);
  Mat z_cf = z;
  z_cf(factor, 0) += delta * factor_stds[factor];
  return dec_forward_batch(bundle, z_cf, h).col(0) - dec_forward_batch(bundle, z, h).col(0);
}

// --- Event studies -------------------------------------------------------------------

void EventSpec::validate() const {
  if (half_width < 0) throw InvalidArgument("event spec: half width must be >= 0");
  if (num_permutations < 100) throw InvalidArgument("event spec: at least 100 permutations");
  if (event_dates.size() < 2) throw InvalidArgument("event spec: at least two events");
}

EventStudyResult event_study(const FactorPanel& panel, const EventSpec& spec) {
  spec.validate();
  panel.validate();
  if (spec.factor < 0 || spec.factor >= panel.width()) throw InvalidArgument("event study: factor out of range");
  std::vector<Index> rows;
  for (const std::string& d : spec.event_dates) {
    const auto it = std::find(panel.dates.begin(), panel.dates.end(), d);
    if (it == panel.dates.end()) throw InvalidArgument("event study: date " + d + " is not in the panel");
    rows.push_back(static_cast<Index>(it - panel.dates.begin()));
  }
  EventStudyResult r =
      event_study(Vec(panel.latents.col(spec.factor)), rows, spec.half_width, spec.num_permutations, spec.seed);
  return r;
}

EventStudyResult event_study(const Vec& factor, const std::vector<Index>& event_rows, int half_width,
                             int num_permutations, std::uint64_t seed) {
  if (half_width < 0) throw InvalidArgument("event study: half width must be >= 0");
  if (num_permutations < 100) throw InvalidArgument("event study: at least 100 permutations");
  if (event_rows.size() < 2) throw InvalidArgument("event study: at least two events");
  if (!factor.allFinite()) throw DataError("event study: non-finite factor values");
  const Index T = factor.size(), L = 2 * half_width + 1;
  EventStudyResult res;
  std::vector<Index> rows = event_rows;
  std::sort(rows.begin(), rows.end());
  std::vector<Index> starts;
  for (Index e : rows) {
    if (e - half_width < 0 || e + half_width >= T)
      throw InvalidArgument("event study: window around row " + std::to_string(e) + " leaves the sample");
    const Index s = e - half_width;
    if (!starts.empty() && s < starts.back() + L) {
      res.warnings.push_back("event at row " + std::to_string(e) + " overlaps the previous window; collapsed");
      continue;
    }
    starts.push_back(s);
  }
  const Index k = static_cast<Index>(starts.size());
  if (k < 2) throw InvalidArgument("event study: fewer than two non-overlapping events");
  if (k * L >= T) throw InvalidArgument("event study: windows cover the whole sample");
  res.num_events = static_cast<int>(k);

  Vec prefix(T + 1);
  prefix[0] = 0.0;
  for (Index t = 0; t < T; ++t) prefix[t + 1] = prefix[t] + factor[t];
  const double total = prefix[T];
  const double n_in = double(k * L), n_out = double(T - k * L);
  const auto diff_for = [&](const std::vector<Index>& st) {
    double in = 0.0;
    for (Index s : st) in += prefix[s + L] - prefix[s];
    return in / n_in - (total - in) / n_out;
  };

  const double sd = std::sqrt(sample_var(factor));
  const double scale = 1e-12 * (1.0 + factor.cwiseAbs().maxCoeff());
  if (!(sd > scale)) {
    res.warnings.push_back("factor is constant; no shift");
    return res;
  }
  const double diff = diff_for(starts);
  res.shift_sd = diff / sd;

  Vec in_vals(k * L), out_vals(T - k * L);
  std::vector<char> in_mask(static_cast<std::size_t>(T), 0);
  for (Index s : starts)
    for (Index t = s; t < s + L; ++t) in_mask[static_cast<std::size_t>(t)] = 1;
  Index a = 0, b = 0;
  for (Index t = 0; t < T; ++t) (in_mask[static_cast<std::size_t>(t)] ? in_vals[a++] : out_vals[b++]) = factor[t];
  const double v_in = sample_var(in_vals), v_out = sample_var(out_vals);
  const double se = std::sqrt(v_in / n_in + v_out / n_out);
  res.t_stat = se > 0.0 ? diff / se : 0.0;
  const double pooled = std::sqrt(((n_in - 1.0) * v_in + (n_out - 1.0) * v_out) / (n_in + n_out - 2.0));
  res.cohens_d = pooled > 0.0 ? diff / pooled : 0.0;

  // Non-overlapping placements: u_i = s_i - i (L - 1) are distinct values in
  // [0, T - L - (k - 1)(L - 1)].
  const Index slots = T - L - (k - 1) * (L - 1) + 1;
  const double obs = std::abs(diff);
  long extreme = 0;
  for (int p = 0; p < num_permutations; ++p) {
    Rng rng(derive_seed(seed, "event.permutation", static_cast<std::uint64_t>(p)));
    std::vector<Index> st = sample_sorted(rng, slots, k);
    for (Index i = 0; i < k; ++i) st[static_cast<std::size_t>(i)] += i * (L - 1);
    if (std::abs(diff_for(st)) >= obs - 1e-12 * (1.0 + obs)) ++extreme;
  }
  res.p_value = double(1 + extreme) / double(1 + num_permutations);
  return res;
}

std::pair<double, double> ks_uniform(std::vector<double> x) {
  if (x.empty()) throw InvalidArgument("ks test: empty sample");
  std::sort(x.begin(), x.end());
  const double n = double(x.size());
  double D = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] >= 0.0 && x[i] <= 1.0)) throw InvalidArgument("ks test: values must lie in [0, 1]");
    D = std::max({D, double(i + 1) / n - x[i], x[i] - double(i) / n});
  }
  const double lambda = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * D;
  if (lambda < 0.2) return {D, 1.0};
  double q = 0.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = std::exp(-2.0 * j * j * lambda * lambda);
    q += (j % 2 ? 2.0 : -2.0) * term;
    if (term < 1e-16) break;
  }
  return {D, std::clamp(q, 0.0, 1.0)};
}

// --- Sparsity ------------------------------------------------------------------------

ActiveStats active_factor_stats(const FactorPanel& panel) {
  panel.validate();
  ActiveStats s;
  for (Index t = 0; t < panel.length(); ++t)
    s.per_date.push_back(static_cast<int>((panel.latents.row(t).array().abs() > panel.active_threshold).count()));
  if (!s.per_date.empty()) {
    double sum = 0.0;
    for (int c : s.per_date) sum += c;
    s.mean_count = sum / double(s.per_date.size());
  }
  return s;
}

// --- Reports -------------------------------------------------------------------------

namespace {
json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
}  // namespace

std::string to_json(const StabilityReport& r) {
  json pairs = json::array();
  for (const PairStability& p : r.pairs) {
    json cc = json::array();
    for (Index i = 0; i < p.canonical.size(); ++i) cc.push_back(p.canonical[i]);
    pairs.push_back({{"first", p.first},
                     {"second", p.second},
                     {"canonical", cc},
                     {"mean_canonical", p.mean_canonical},
                     {"max_angle_degrees", p.max_angle_degrees}});
  }
  return json{{"mean_canonical", r.mean_canonical}, {"max_angle_degrees", r.max_angle_degrees}, {"pairs", pairs}}
      .dump(2);
}

std::string to_json(const DriverReport& r) {
  json stats = json::array();
  for (const DriverStat& s : r.stats)
    stats.push_back({{"factor", s.factor},
                     {"driver", s.driver},
                     {"r", num(s.r)},
                     {"r_squared", num(s.r_squared)},
                     {"partial_r", num(s.partial_r)},
                     {"partial_defined", s.partial_defined}});
  return json{{"stats", stats}, {"signs", r.signs}, {"warnings", r.warnings}}.dump(2);
}

std::string to_json(const EventStudyResult& r) {
  return json{{"num_events", r.num_events},   {"shift_sd", r.shift_sd}, {"t_stat", r.t_stat},
              {"p_value", r.p_value},         {"cohens_d", r.cohens_d}, {"warnings", r.warnings}}
      .dump(2);
}

std::string driver_heatmap_csv(const DriverReport& r, const std::vector<std::string>& driver_names) {
  CsvTable t;
  t.header.push_back("factor");
  for (const std::string& d : driver_names) t.header.push_back(d);
  const std::size_t p = driver_names.size();
  if (p == 0 || r.stats.size() % p != 0) throw InvalidArgument("driver heatmap: report does not match drivers");
  for (std::size_t k = 0; k < r.stats.size() / p; ++k) {
    std::vector<std::string> row{"z" + std::to_string(k)};
    for (std::size_t j = 0; j < p; ++j) row.push_back(format_double(r.stats[k * p + j].r));
    t.rows.push_back(std::move(row));
  }
  return format_csv(t);
}

}  // namespace slff
