#include "slff/theory_checks.hpp"

#include "slff/training.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace slff {

using nlohmann::json;

double operator_norm(const Mat& a, double tol, int max_iter) {
  if (a.size() == 0) throw InvalidArgument("operator norm: empty matrix");
  if (!a.allFinite()) throw DataError("operator norm: non-finite entries");
  const Mat g = a.transpose() * a;
  // Deterministic start with weight on every direction.
  Vec v = Vec::LinSpaced(g.cols(), 1.0, 2.0).normalized();
  double lambda = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    Vec w = g * v;
    const double n = w.norm();
    if (n == 0.0) return 0.0;
    w /= n;
    const double next = w.dot(g * w);
    const bool done = std::abs(next - lambda) <= tol * std::max(1.0, next);
    lambda = next;
    v = std::move(w);
    if (done) break;
  }
  return std::sqrt(std::max(lambda, 0.0));
}

LipschitzEstimates estimate_lipschitz(const ModelBundle& b, const WindowedData& data, int num_pairs,
                                      std::uint64_t seed) {
  if (data.size() < 2) throw InvalidArgument("lipschitz: need at least two samples");
  if (num_pairs < 1) throw InvalidArgument("lipschitz: num_pairs must be positive");
  LipschitzEstimates e;
  const PathOutputs p = run_paths(b, data, EnergyParams{}, false);
  for (Index j = 0; j < p.targets.cols(); ++j)
    e.y_max = std::max(e.y_max, p.targets.col(j).norm() + p.deployed.col(j).norm());
  e.l_c_squared = 2.0 * e.y_max;
  e.l_c = 1.0 / std::sqrt(double(b.config.num_horizons));
  if (b.config.decoder_kind == DecoderKind::linearized) {
    e.l_dec = operator_norm(b.latent_weights());
    e.l_dec_upper = e.l_dec_empirical = e.l_dec;
    e.l_g = 2.0 * e.l_dec * e.l_dec;
    return e;
  }
  const Index m = b.config.latent_dim;
  e.l_dec_upper = operator_norm(b.dec.mat("fc1.w").leftCols(m)) * operator_norm(b.dec.mat("fc2.w")) *
                  operator_norm(b.dec.mat("out.w"));
  // Half the pairs join two observed latents (global ratios), half perturb
  // one locally (gradient norms); contexts are held at the first sample's.
  Rng rng = make_rng(seed, "lipschitz.pairs");
  const Index n = p.z_hat.cols();
  const auto pick = [&] { return std::min<Index>(n - 1, static_cast<Index>(uniform01(rng) * double(n))); };
  const Vec sd = ((p.z_hat.colwise() - p.z_hat.rowwise().mean()).rowwise().squaredNorm() / double(n)).cwiseSqrt();
  Mat z1(m, num_pairs), z2(m, num_pairs), h(p.h.rows(), num_pairs);
  for (int k = 0; k < num_pairs; ++k) {
    const Index i = pick();
    z1.col(k) = p.z_hat.col(i);
    h.col(k) = p.h.col(i);
    if (k % 2 == 0) {
      z2.col(k) = p.z_hat.col(pick());
    } else {
      for (Index d = 0; d < m; ++d) z2(d, k) = z1(d, k) + 1e-4 * (sd[d] + 1e-3) * standard_normal(rng);
    }
  }
  const Mat f1 = dec_forward_batch(b, z1, h), f2 = dec_forward_batch(b, z2, h);
  for (int k = 0; k < num_pairs; ++k) {
    const double dz = (z1.col(k) - z2.col(k)).norm();
    if (dz > 0.0) e.l_dec_empirical = std::max(e.l_dec_empirical, (f1.col(k) - f2.col(k)).norm() / dz);
  }
  e.l_dec = e.l_dec_empirical;
  e.l_g = 2.0 * e.l_dec * e.l_dec;
  return e;
}

double gap_bound(const LipschitzEstimates& est, double l_match, double beta) {
  if (!(l_match >= 0.0)) throw InvalidArgument("gap bound: l_match must be >= 0");
  if (!(beta > 0.0)) throw InvalidArgument("gap bound: beta must be positive");
  if (!(est.l_c >= 0.0 && est.l_dec >= 0.0)) throw InvalidArgument("gap bound: negative Lipschitz constant");
  return est.l_c * est.l_dec * std::sqrt(l_match / beta);
}

GapDiagnosis diagnose_gap(const ModelBundle& b, const WindowedData& estimation, const WindowedData& eval,
                          const EnergyParams& params, const std::vector<int>& k_grid) {
  params.validate();
  if (eval.empty()) throw InvalidArgument("gap diagnosis: empty evaluation set");
  GapDiagnosis g;
  g.decoder = b.config.decoder_kind;
  // For the MLP the bound uses the layer-norm upper bound so that it remains
  // a bound; the empirical estimate is reported alongside.
  g.lipschitz = estimate_lipschitz(b, estimation);
  LipschitzEstimates used = g.lipschitz;
  if (b.config.decoder_kind == DecoderKind::mlp) used.l_dec = used.l_dec_upper;
  const auto row = [&](int K) {
    EnergyParams pk = params;
    pk.num_steps = K;
    const PathOutputs p = run_paths(b, eval, pk, true);
    GapRow r;
    r.num_steps = K;
    r.deployed_rmse = pooled_rmse(p.deployed, p.targets);
    r.refined_rmse = pooled_rmse(p.refined, p.targets);
    r.observed_gap = r.deployed_rmse - r.refined_rmse;
    r.l_match = (p.z_star - p.z_hat).colwise().squaredNorm().mean();
    r.predicted_gap = gap_bound(used, r.l_match, g.beta);
    r.ratio = r.predicted_gap > 0.0 ? r.observed_gap / r.predicted_gap : 0.0;
    r.satisfied = r.observed_gap <= r.predicted_gap * (1.0 + 1e-12) + 1e-15;
    return r;
  };
  g.main = row(params.num_steps);
  for (int K : k_grid) {
    if (K < 1) throw InvalidArgument("gap diagnosis: K must be >= 1");
    g.k_sweep.push_back(K == params.num_steps ? g.main : row(K));
  }
  return g;
}

// --- Linear instances -------------------------------------------------------------

std::vector<LinearInstance> random_linear_instances(int count, Index N, Index m, std::uint64_t seed, double noise) {
  if (count < 1 || N < 1 || m < 1) throw InvalidArgument("linear instances: sizes must be positive");
  std::vector<LinearInstance> out;
  for (int i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, "theory.instance", static_cast<std::uint64_t>(i)));
    LinearInstance inst;
    inst.weights.resize(N, m);
    for (Index k = 0; k < inst.weights.size(); ++k)
      inst.weights.data()[k] = standard_normal(rng) / std::sqrt(double(N));
    inst.offset.resize(N);
    for (Index k = 0; k < N; ++k) inst.offset[k] = 0.5 * standard_normal(rng);
    Vec truth = Vec::Zero(m);
    std::set<Index> support;
    while (static_cast<Index>(support.size()) < std::min<Index>(3, m))
      support.insert(std::min<Index>(m - 1, static_cast<Index>(uniform01(rng) * double(m))));
    for (Index k : support) truth[k] = (uniform01(rng) < 0.5 ? -1.0 : 1.0) * (0.5 + uniform01(rng));
    inst.target = inst.offset + inst.weights * truth;
    for (Index k = 0; k < N; ++k) inst.target[k] += noise * standard_normal(rng);
    inst.anchor = truth;
    for (Index k = 0; k < m; ++k) inst.anchor[k] += 0.3 * standard_normal(rng);
    out.push_back(std::move(inst));
  }
  return out;
}

double linear_energy(const LinearInstance& inst, const Vec& z, double lambda, double mu) {
  return (inst.target - inst.offset - inst.weights * z).squaredNorm() + lambda * z.lpNorm<1>() +
         mu * (z - inst.anchor).squaredNorm();
}

Vec solve_linear_exact(const LinearInstance& inst, double lambda, double mu, double tol) {
  if (!(lambda >= 0.0 && mu >= 0.0)) throw InvalidArgument("exact solve: lambda and mu must be >= 0");
  const Mat& W = inst.weights;
  const Index m = W.cols();
  const Vec col_sq = W.colwise().squaredNorm().transpose();
  Vec z = inst.anchor;
  Vec resid = inst.target - inst.offset - W * z;
  for (int sweep = 0; sweep < 1000000; ++sweep) {
    double largest = 0.0;
    for (Index k = 0; k < m; ++k) {
      const double curv = col_sq[k] + mu;
      if (curv <= 0.0) continue;
      // Minimize (c) z_k^2 - 2 q z_k + λ|z_k| over z_k.
      const double q = W.col(k).dot(resid) + col_sq[k] * z[k] + mu * inst.anchor[k];
      const double shrunk = std::max(std::abs(q) - 0.5 * lambda, 0.0);
      const double zk = std::copysign(shrunk, q) / curv;
      const double step = zk - z[k];
      if (step != 0.0) {
        resid -= step * W.col(k);
        z[k] = zk;
        largest = std::max(largest, std::abs(step));
      }
    }
    if (largest <= tol) break;
    // Recompute the residual periodically to stop drift.
    if (sweep % 64 == 63) resid = inst.target - inst.offset - W * z;
  }
  return z;
}

double safe_step_size(const LinearInstance& inst, double mu) {
  const double l = operator_norm(inst.weights);
  return 1.0 / (2.0 * l * l + 2.0 * mu);
}

ConvergenceCurve convergence_curve(const std::vector<LinearInstance>& instances, const EnergyParams& params,
                                   const std::vector<int>& k_grid) {
  if (instances.empty()) throw InvalidArgument("convergence curve: no instances");
  if (k_grid.empty()) throw InvalidArgument("convergence curve: empty K grid");
  ConvergenceCurve c;
  c.k_grid = k_grid;
  std::sort(c.k_grid.begin(), c.k_grid.end());
  if (c.k_grid.front() < 1) throw InvalidArgument("convergence curve: K must be >= 1");
  c.suboptimality.assign(c.k_grid.size(), 0.0);
  c.latent_mismatch.assign(c.k_grid.size(), 0.0);
  for (const LinearInstance& inst : instances) {
    const Vec z_opt = solve_linear_exact(inst, params.lambda_l1, params.mu_prox);
    const double e_opt = linear_energy(inst, z_opt, params.lambda_l1, params.mu_prox);
    EnergyParams p = params;
    if (!(p.step_size > 0.0)) p.step_size = safe_step_size(inst, p.mu_prox);
    const AffineLatentMap dec(inst.weights, inst.offset);
    LatentCode anchor{inst.anchor};
    for (std::size_t i = 0; i < c.k_grid.size(); ++i) {
      p.num_steps = c.k_grid[i];
      p.validate();
      const RefinementTrace tr = refine(inst.target, dec, anchor, p);
      const Vec& zk = tr.final_latent.values;
      c.suboptimality[i] += std::max(0.0, linear_energy(inst, zk, p.lambda_l1, p.mu_prox) - e_opt);
      c.latent_mismatch[i] += (zk - z_opt).norm();
    }
  }
  const double n = double(instances.size());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < c.k_grid.size(); ++i) {
    c.suboptimality[i] /= n;
    c.latent_mismatch[i] /= n;
    const double k = double(c.k_grid[i]);
    c.envelope_c = std::max(c.envelope_c, k * c.suboptimality[i]);
    num += c.suboptimality[i] / k;
    den += 1.0 / (k * k);
    if (i > 0 && c.suboptimality[i] > c.suboptimality[i - 1] * (1.0 + 1e-12) + 1e-15) c.non_increasing = false;
  }
  c.fitted_c = num / den;
  return c;
}

SparsityCurve sparsity_vs_lambda(const std::vector<LinearInstance>& instances, const std::vector<double>& lambdas,
                                 double mu, double active_threshold) {
  if (instances.empty() || lambdas.empty()) throw InvalidArgument("sparsity curve: empty input");
  SparsityCurve s;
  s.lambdas = lambdas;
  std::sort(s.lambdas.begin(), s.lambdas.end());
  for (double lambda : s.lambdas) {
    double total = 0.0;
    for (const LinearInstance& inst : instances) {
      const Vec z = solve_linear_exact(inst, lambda, mu);
      total += double((z.array().abs() > active_threshold).count());
    }
    s.mean_active.push_back(total / double(instances.size()));
    if (s.mean_active.size() > 1 && s.mean_active.back() > s.mean_active[s.mean_active.size() - 2])
      s.non_increasing = false;
  }
  return s;
}

// --- Reports ---------------------------------------------------------------------------

namespace {
json row_json(const GapRow& r) {
  return {{"K", r.num_steps},
          {"deployed_rmse", r.deployed_rmse},
          {"refined_rmse", r.refined_rmse},
          {"observed_gap", r.observed_gap},
          {"l_match", r.l_match},
          {"predicted_gap", r.predicted_gap},
          {"ratio", r.ratio},
          {"satisfied", r.satisfied}};
}
}  // namespace

std::string to_json(const GapDiagnosis& g) {
  const LipschitzEstimates& l = g.lipschitz;
  json sweep = json::array();
  for (const GapRow& r : g.k_sweep) sweep.push_back(row_json(r));
  return json{{"decoder", to_string(g.decoder)},
              {"beta", g.beta},
              {"lipschitz",
               {{"l_dec", l.l_dec},
                {"l_dec_upper", l.l_dec_upper},
                {"l_dec_empirical", l.l_dec_empirical},
                {"l_c", l.l_c},
                {"l_c_squared", l.l_c_squared},
                {"y_max", l.y_max},
                {"l_g", l.l_g}}},
              {"main", row_json(g.main)},
              {"k_sweep", sweep}}
      .dump(2);
}

std::string to_json(const ConvergenceCurve& c) {
  return json{{"K", c.k_grid},
              {"suboptimality", c.suboptimality},
              {"latent_mismatch", c.latent_mismatch},
              {"envelope_c", c.envelope_c},
              {"fitted_c", c.fitted_c},
              {"non_increasing", c.non_increasing}}
      .dump(2);
}

std::string to_json(const SparsityCurve& s) {
  return json{{"lambda", s.lambdas}, {"mean_active", s.mean_active}, {"non_increasing", s.non_increasing}}.dump(2);
}

}  // namespace slff
