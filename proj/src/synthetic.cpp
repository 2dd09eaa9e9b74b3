#include "slff/synthetic.hpp"

#include "json.hpp"
#include "slff/io.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace slff {

using nlohmann::json;

std::string to_string(DgpKind k) {
  switch (k) {
    case DgpKind::base: return "base";
    case DgpKind::nonlinear: return "nonlinear";
    default: return "high_d";
  }
}

DgpKind dgp_kind_from_string(const std::string& s) {
  if (s == "base") return DgpKind::base;
  if (s == "nonlinear") return DgpKind::nonlinear;
  if (s == "high_d") return DgpKind::high_d;
  throw InvalidArgument("unknown DGP kind '" + s + "'");
}

void DgpConfig::validate() const {
  if (m_true < 1 || s_active < 1) throw InvalidArgument("dgp: m_true and s_active must be positive");
  if (s_active > m_true) throw InvalidArgument("dgp: s_active must not exceed m_true");
  if (kind == DgpKind::high_d && d != 120) throw InvalidArgument("dgp: the high_d DGP has d = 120");
  if (d < m_true + context_dim) throw InvalidArgument("dgp: d must cover the latent expansion (m_true + context_dim)");
  if (context_dim < 1) throw InvalidArgument("dgp: context_dim must be positive");
  if (!(noise_sigma >= 0.0) || !(feature_noise >= 0.0)) throw InvalidArgument("dgp: noise levels must be >= 0");
  if (trajectory_length < 2 || num_trajectories < 1) throw InvalidArgument("dgp: empty trajectory set");
  if (rotation_period < 1) throw InvalidArgument("dgp: rotation_period must be positive");
  for (double r : {latent_rho, context_rho, distractor_rho})
    if (!(r >= 0.0 && r < 1.0)) throw InvalidArgument("dgp: AR coefficients must lie in [0, 1)");
  const auto hz = resolved_horizons();
  for (std::size_t i = 0; i < hz.size(); ++i) {
    if (hz[i] <= 0 || (i > 0 && hz[i] <= hz[i - 1]))
      throw InvalidArgument("dgp: horizons must be positive and strictly increasing");
  }
  if (!start_date.empty()) parse_date(start_date);
}

std::vector<int> DgpConfig::resolved_horizons() const {
  if (!horizons.empty()) return horizons;
  std::vector<int> h(24);
  std::iota(h.begin(), h.end(), 1);
  return h;
}

DgpConfig DgpConfig::preset(DgpKind kind) {
  DgpConfig c;
  c.kind = kind;
  if (kind == DgpKind::high_d) c.d = 120;
  return c;
}

// ---------------------------------------------------------------------------

namespace {

Mat random_orthogonal(Index n, Rng& rng) {
  Mat g(n, n);
  for (Index i = 0; i < g.size(); ++i) g.data()[i] = standard_normal(rng);
  Eigen::HouseholderQR<Mat> qr(g);
  Mat q = qr.householderQ() * Mat::Identity(n, n);
  const Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Index j = 0; j < n; ++j)
    if (r(j, j) < 0) q.col(j) *= -1.0;
  return q;
}

Index uniform_index(Rng& rng, Index n) {
  return std::min<Index>(n - 1, static_cast<Index>(uniform01(rng) * static_cast<double>(n)));
}

// Sparse horizon mixing: 3-5 nonzeros per row, every factor used at least
// once when there are enough slots.
Mat make_mixing(Index N, Index m, double scale, Rng& rng) {
  Mat w = Mat::Zero(N, m);
  std::vector<Index> pending(static_cast<std::size_t>(m));
  std::iota(pending.begin(), pending.end(), Index{0});
  for (Index i = m - 1; i > 0; --i) std::swap(pending[i], pending[uniform_index(rng, i + 1)]);
  for (Index r = 0; r < N; ++r) {
    const Index count = std::min<Index>(m, 3 + uniform_index(rng, 3));
    std::vector<Index> chosen;
    while (static_cast<Index>(chosen.size()) < count && !pending.empty()) {
      // Spread the pending factors evenly over the rows.
      const Index rows_left = N - r;
      const Index want = (static_cast<Index>(pending.size()) + rows_left - 1) / rows_left;
      if (static_cast<Index>(chosen.size()) >= want) break;
      chosen.push_back(pending.back());
      pending.pop_back();
    }
    while (static_cast<Index>(chosen.size()) < count) {
      const Index k = uniform_index(rng, m);
      if (std::find(chosen.begin(), chosen.end(), k) == chosen.end()) chosen.push_back(k);
    }
    for (Index k : chosen) {
      const double sign = uniform01(rng) < 0.5 ? -1.0 : 1.0;
      w(r, k) = sign * scale * (0.5 + uniform01(rng));
    }
  }
  return w;
}

struct HeadParams {
  Mat linear;  // N x ctx (base / high_d)
  Mat v1;      // hidden x ctx (nonlinear)
  Vec b1;
  Mat v2;      // N x hidden
};

Vec apply_heads(const HeadParams& p, DgpKind kind, const Vec& h) {
  if (kind != DgpKind::nonlinear) return p.linear * h;
  const Vec a = (p.v1 * h + p.b1).array().tanh().matrix();
  return p.v2 * a;
}

}  // namespace

SyntheticDataset generate(const DgpConfig& config) {
  config.validate();
  const Index m = config.m_true;
  const Index c = config.context_dim;
  const Index r = m + c;
  const Index d = config.d;
  const auto horizons = config.resolved_horizons();
  const Index N = static_cast<Index>(horizons.size());
  const Index T = config.trajectory_length;

  SyntheticDataset ds;
  ds.config = config;
  ds.config.horizons = horizons;

  Rng mix_rng = make_rng(config.seed, "dgp.mixing");
  ds.mixing = make_mixing(N, m, config.mixing_scale, mix_rng);

  Rng exp_rng = make_rng(config.seed, "dgp.expansion");
  const Mat expansion = random_orthogonal(r, exp_rng);
  HeadParams heads;
  Rng head_rng = make_rng(config.seed, "dgp.heads");
  heads.linear = Mat::NullaryExpr(N, c, [&]() { return standard_normal(head_rng); }) *
                 (config.context_scale / std::sqrt(static_cast<double>(c)));
  const Index hidden = 8;
  heads.v1 = Mat::NullaryExpr(hidden, c, [&]() { return standard_normal(head_rng); }) *
             (1.5 / std::sqrt(static_cast<double>(c)));
  heads.b1 = Vec::NullaryExpr(hidden, [&]() { return 0.5 * standard_normal(head_rng); });
  heads.v2 = Mat::NullaryExpr(N, hidden, [&]() { return standard_normal(head_rng); }) *
             (2.0 * config.context_scale / std::sqrt(static_cast<double>(hidden)));

  std::vector<std::string> dates;
  if (!config.start_date.empty()) {
    for (Date day : business_days(parse_date(config.start_date), static_cast<int>(T))) dates.push_back(format_date(day));
  }

  const double lat_innov = std::sqrt(1.0 - config.latent_rho * config.latent_rho);
  const double ctx_innov = std::sqrt(1.0 - config.context_rho * config.context_rho);
  const double dis_innov = std::sqrt(1.0 - config.distractor_rho * config.distractor_rho);

  auto panels = std::make_shared<std::vector<SeriesPanel>>();
  for (int traj = 0; traj < config.num_trajectories; ++traj) {
    Rng rng(derive_seed(config.seed, "dgp.trajectory", static_cast<std::uint64_t>(traj)));
    Trajectory truth{Mat::Zero(T, m), Mat::Zero(T, c)};
    SeriesPanel panel;
    panel.features.resize(T, d);
    panel.masks = Mat::Ones(T, d);
    panel.targets.resize(T, N);
    panel.base = Vec::Zero(T);
    panel.dates = dates;

    // Support: a random s-subset; one coordinate swapped every period.
    std::vector<Index> order(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), Index{0});
    for (Index i = m - 1; i > 0; --i) std::swap(order[i], order[uniform_index(rng, i + 1)]);
    std::vector<char> active(static_cast<std::size_t>(m), 0);
    Vec sign = Vec::Ones(m);
    for (int k = 0; k < config.s_active; ++k) active[order[k]] = 1;
    for (Index k = 0; k < m; ++k) sign[k] = uniform01(rng) < 0.5 ? -1.0 : 1.0;

    Vec u = Vec::NullaryExpr(m, [&]() { return standard_normal(rng); });
    Vec h = Vec::NullaryExpr(c, [&]() { return standard_normal(rng); });
    Vec dis = Vec::NullaryExpr(d - r, [&]() { return standard_normal(rng); });

    for (Index t = 0; t < T; ++t) {
      if (t > 0) {
        for (Index k = 0; k < m; ++k) u[k] = config.latent_rho * u[k] + lat_innov * standard_normal(rng);
        for (Index k = 0; k < c; ++k) h[k] = config.context_rho * h[k] + ctx_innov * standard_normal(rng);
        for (Index k = 0; k < d - r; ++k) dis[k] = config.distractor_rho * dis[k] + dis_innov * standard_normal(rng);
        if (t % config.rotation_period == 0 && config.s_active < m) {
          std::vector<Index> on, off;
          for (Index k = 0; k < m; ++k) (active[k] ? on : off).push_back(k);
          const Index k_out = on[uniform_index(rng, static_cast<Index>(on.size()))];
          const Index k_in = off[uniform_index(rng, static_cast<Index>(off.size()))];
          active[k_out] = 0;
          active[k_in] = 1;
          sign[k_in] = uniform01(rng) < 0.5 ? -1.0 : 1.0;
        }
      }
      Vec z = Vec::Zero(m);
      for (Index k = 0; k < m; ++k)
        if (active[k]) z[k] = sign[k] * std::exp(0.4 * u[k]);
      truth.latents.row(t) = z.transpose();
      truth.context.row(t) = h.transpose();

      Vec state(r);
      state << z, h;
      Vec signal = expansion * state;
      if (config.kind == DgpKind::nonlinear) signal += 0.5 * signal.array().tanh().matrix();
      for (Index j = 0; j < r; ++j) panel.features(t, j) = signal[j] + config.feature_noise * standard_normal(rng);
      panel.features.row(t).tail(d - r) = dis.transpose();

      const Vec y = apply_heads(heads, config.kind, h) + ds.mixing * z;
      for (Index k = 0; k < N; ++k) panel.targets(t, k) = y[k] + config.noise_sigma * standard_normal(rng);
    }
    panels->push_back(std::move(panel));
    ds.truth.push_back(std::move(truth));
  }
  ds.panels = std::move(panels);
  return ds;
}

std::vector<int> SyntheticDataset::split(int which) const {
  const int n = num_trajectories();
  if (n < 3) {
    // Too few trajectories to split by trajectory: every split is trajectory 0.
    return {0};
  }
  const int n_train = std::max(1, static_cast<int>(std::lround(0.70 * n)));
  const int n_val = std::max(1, static_cast<int>(std::lround(0.15 * n)));
  const int lo = which == 0 ? 0 : which == 1 ? n_train : std::min(n - 1, n_train + n_val);
  const int hi = which == 0 ? n_train : which == 1 ? std::min(n - 1, n_train + n_val) : n;
  std::vector<int> ids;
  for (int i = lo; i < hi; ++i) ids.push_back(i);
  return ids;
}

WindowedData SyntheticDataset::windows(const std::vector<int>& trajectories, int window) const {
  return WindowedData(panels, window_samples(*panels, window, trajectories), window);
}

Mat SyntheticDataset::true_latents(const WindowedData& data) const {
  Mat z(config.m_true, data.size());
  for (Index i = 0; i < data.size(); ++i) {
    const SampleRef& s = data.samples()[i];
    z.col(i) = truth.at(s.panel).latents.row(s.end).transpose();
  }
  return z;
}

// ---------------------------------------------------------------------------
// Serialization

std::string to_json(const DgpConfig& c) {
  json j{{"kind", to_string(c.kind)},
         {"m_true", c.m_true},
         {"s_active", c.s_active},
         {"d", c.d},
         {"noise_sigma", c.noise_sigma},
         {"horizons", c.resolved_horizons()},
         {"trajectory_length", c.trajectory_length},
         {"num_trajectories", c.num_trajectories},
         {"seed", c.seed},
         {"context_dim", c.context_dim},
         {"feature_noise", c.feature_noise},
         {"mixing_scale", c.mixing_scale},
         {"context_scale", c.context_scale},
         {"latent_rho", c.latent_rho},
         {"context_rho", c.context_rho},
         {"distractor_rho", c.distractor_rho},
         {"rotation_period", c.rotation_period},
         {"start_date", c.start_date}};
  return j.dump(2);
}

DgpConfig dgp_config_from_json(const std::string& text) {
  const json j = json::parse(text);
  DgpConfig c;
  c.kind = dgp_kind_from_string(j.at("kind").get<std::string>());
  c.m_true = j.at("m_true");
  c.s_active = j.at("s_active");
  c.d = j.at("d");
  c.noise_sigma = j.at("noise_sigma");
  c.horizons = j.at("horizons").get<std::vector<int>>();
  c.trajectory_length = j.at("trajectory_length");
  c.num_trajectories = j.at("num_trajectories");
  c.seed = j.at("seed").get<std::uint64_t>();
  c.context_dim = j.value("context_dim", c.context_dim);
  c.feature_noise = j.value("feature_noise", c.feature_noise);
  c.mixing_scale = j.value("mixing_scale", c.mixing_scale);
  c.context_scale = j.value("context_scale", c.context_scale);
  c.latent_rho = j.value("latent_rho", c.latent_rho);
  c.context_rho = j.value("context_rho", c.context_rho);
  c.distractor_rho = j.value("distractor_rho", c.distractor_rho);
  c.rotation_period = j.value("rotation_period", c.rotation_period);
  c.start_date = j.value("start_date", std::string());
  c.validate();
  return c;
}

namespace {

CsvTable trajectory_table(const SyntheticDataset& ds, const std::string& prefix, Index cols,
                          const std::function<double(int, Index, Index)>& value, bool with_dates) {
  CsvTable t;
  t.header = {"trajectory", "t"};
  if (with_dates) t.header.push_back("date");
  for (Index j = 0; j < cols; ++j) t.header.push_back(prefix + std::to_string(j));
  for (int p = 0; p < ds.num_trajectories(); ++p) {
    const SeriesPanel& sp = (*ds.panels)[p];
    for (Index row = 0; row < sp.length(); ++row) {
      std::vector<std::string> r{std::to_string(p), std::to_string(row)};
      if (with_dates) r.push_back(sp.dates.empty() ? "" : sp.dates[row]);
      for (Index j = 0; j < cols; ++j) r.push_back(format_double(value(p, row, j)));
      t.rows.push_back(std::move(r));
    }
  }
  return t;
}

}  // namespace

void save_dataset(const SyntheticDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const Index N = ds.mixing.rows(), m = ds.mixing.cols();
  const auto& P = *ds.panels;
  std::map<std::string, std::string> files;
  files["features.csv"] = format_csv(trajectory_table(
      ds, "x", ds.config.d, [&](int p, Index t, Index j) { return P[p].features(t, j); }, true));
  files["targets.csv"] = format_csv(trajectory_table(
      ds, "y", N, [&](int p, Index t, Index j) { return P[p].targets(t, j); }, false));
  files["latents.csv"] = format_csv(trajectory_table(
      ds, "z", m, [&](int p, Index t, Index j) { return ds.truth[p].latents(t, j); }, false));
  files["context.csv"] = format_csv(trajectory_table(
      ds, "h", ds.config.context_dim, [&](int p, Index t, Index j) { return ds.truth[p].context(t, j); }, false));
  CsvTable mix;
  for (Index j = 0; j < m; ++j) mix.header.push_back("z" + std::to_string(j));
  for (Index i = 0; i < N; ++i) {
    std::vector<std::string> r;
    for (Index j = 0; j < m; ++j) r.push_back(format_double(ds.mixing(i, j)));
    mix.rows.push_back(std::move(r));
  }
  files["mixing.csv"] = format_csv(mix);

  json fingerprint = json::object();
  for (const auto& [name, content] : files) {
    write_file(dir / name, content);
    fingerprint[name] = sha256_hex(content);
  }
  json cfg{{"config", json::parse(to_json(ds.config))}, {"fingerprint", fingerprint}};
  write_file(dir / "config.json", cfg.dump(2) + "\n");
}

SyntheticDataset load_dataset(const std::filesystem::path& dir) {
  const json cfg = json::parse(read_file(dir / "config.json"));
  SyntheticDataset ds;
  ds.config = dgp_config_from_json(cfg.at("config").dump());
  for (const auto& [name, hash] : cfg.at("fingerprint").items()) {
    if (sha256_file(dir / name) != hash.get<std::string>())
      throw DataError("dataset: fingerprint mismatch for " + name);
  }
  const Index T = ds.config.trajectory_length, d = ds.config.d, m = ds.config.m_true,
              c = ds.config.context_dim;
  const Index N = static_cast<Index>(ds.config.horizons.size());
  const int P = ds.config.num_trajectories;
  auto panels = std::make_shared<std::vector<SeriesPanel>>(P);
  ds.truth.assign(P, Trajectory{Mat::Zero(T, m), Mat::Zero(T, c)});
  for (auto& sp : *panels) {
    sp.features.resize(T, d);
    sp.masks = Mat::Ones(T, d);
    sp.targets.resize(T, N);
    sp.base = Vec::Zero(T);
  }
  const auto load = [&](const std::string& name, Index cols, Index skip,
                        const std::function<void(int, Index, Index, double)>& put,
                        const std::function<void(int, Index, const std::vector<std::string>&)>& extra) {
    const CsvTable t = read_csv(dir / name);
    if (static_cast<Index>(t.header.size()) != cols + skip) throw DataError("dataset: unexpected columns in " + name);
    for (const auto& r : t.rows) {
      const int p = std::stoi(r[0]);
      const Index row = std::stol(r[1]);
      if (p < 0 || p >= P || row < 0 || row >= T) throw DataError("dataset: row index out of range in " + name);
      if (extra) extra(p, row, r);
      for (Index j = 0; j < cols; ++j) put(p, row, j, parse_double(r[skip + j]));
    }
  };
  load("features.csv", d, 3, [&](int p, Index t, Index j, double v) { (*panels)[p].features(t, j) = v; },
       [&](int p, Index t, const std::vector<std::string>& r) {
         if (!r[2].empty()) {
           auto& dates = (*panels)[p].dates;
           if (dates.empty()) dates.assign(T, "");
           dates[t] = r[2];
         }
       });
  load("targets.csv", N, 2, [&](int p, Index t, Index j, double v) { (*panels)[p].targets(t, j) = v; }, {});
  load("latents.csv", m, 2, [&](int p, Index t, Index j, double v) { ds.truth[p].latents(t, j) = v; }, {});
  load("context.csv", c, 2, [&](int p, Index t, Index j, double v) { ds.truth[p].context(t, j) = v; }, {});
  const CsvTable mix = read_csv(dir / "mixing.csv");
  ds.mixing.resize(N, m);
  if (static_cast<Index>(mix.rows.size()) != N) throw DataError("dataset: mixing row count");
  for (Index i = 0; i < N; ++i)
    for (Index j = 0; j < m; ++j) ds.mixing(i, j) = parse_double(mix.rows[i][j]);
  ds.panels = std::move(panels);
  return ds;
}

// ---------------------------------------------------------------------------
// Recovery metrics

namespace {

// Orthonormal basis of the centered column span, rank-revealing.
Mat centered_basis(const Mat& a) {
  const Mat c = a.rowwise() - a.colwise().mean();
  Eigen::ColPivHouseholderQR<Mat> qr(c);
  const double scale = c.cwiseAbs().maxCoeff();
  qr.setThreshold(1e-10);
  const Index rank = scale > 0.0 ? qr.rank() : 0;
  const Mat q = qr.householderQ() * Mat::Identity(c.rows(), c.cols());
  return q.leftCols(rank);
}

}  // namespace

double principal_angle_cosine(const Mat& a, const Mat& b) {
  require_shape(a.rows() == b.rows(), "principal angles: sample counts differ");
  const Mat qa = centered_basis(a);
  const Mat qb = centered_basis(b);
  if (qb.cols() == 0) throw DegenerateError("principal angles: reference matrix has rank 0");
  if (qa.cols() == 0) throw DegenerateError("principal angles: learned matrix has rank 0");
  const Eigen::JacobiSVD<Mat> svd(qa.transpose() * qb);
  const Vec s = svd.singularValues().cwiseMin(1.0);
  return s.sum() / static_cast<double>(qb.cols());
}

AlignedLatents procrustes_align(const Mat& learned_fit, const Mat& truth_fit, const Mat& learned_held,
                                const Mat& truth_held) {
  require_shape(learned_fit.rows() == truth_fit.rows() && learned_held.rows() == truth_held.rows(),
                "procrustes: matched sample counts required");
  require_shape(learned_fit.cols() == learned_held.cols() && truth_fit.cols() == truth_held.cols(),
                "procrustes: fit and held dimensions differ");
  const Index n_fit = learned_fit.rows();
  if (n_fit < 2 || learned_held.rows() < 2) throw InvalidArgument("procrustes: too few samples for a fit/held split");

  const Vec t_mean = truth_fit.colwise().mean().transpose();
  const Vec t_std =
      ((truth_fit.rowwise() - t_mean.transpose()).colwise().squaredNorm() / double(n_fit - 1)).cwiseSqrt().transpose();
  if ((t_std.array() <= 0.0).any()) throw DegenerateError("procrustes: a true latent is constant on the fit split");

  AlignedLatents out;
  out.learned_mean = learned_fit.colwise().mean().transpose();
  const Mat lc = learned_fit.rowwise() - out.learned_mean.transpose();
  const Mat cov = lc.transpose() * lc / double(n_fit - 1);
  const Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
  const Vec ev = eig.eigenvalues();
  const double top = ev.maxCoeff();
  if (!(top > 0.0)) throw DegenerateError("procrustes: learned latents have rank 0");
  std::vector<Index> keep;
  for (Index i = 0; i < ev.size(); ++i)
    if (ev[i] > 1e-10 * top) keep.push_back(i);
  out.learned_rank = static_cast<int>(keep.size());
  Mat whiten(learned_fit.cols(), static_cast<Index>(keep.size()));
  for (std::size_t i = 0; i < keep.size(); ++i)
    whiten.col(static_cast<Index>(i)) = eig.eigenvectors().col(keep[i]) / std::sqrt(ev[keep[i]]);

  const auto standardize = [&](const Mat& t) {
    return ((t.rowwise() - t_mean.transpose()).array().rowwise() / t_std.transpose().array()).matrix();
  };
  const Mat tfs = standardize(truth_fit);
  const Mat lw = lc * whiten;
  const Eigen::JacobiSVD<Mat> svd(lw.transpose() * tfs, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Mat rot = svd.matrixU() * svd.matrixV().transpose();
  out.transform = whiten * rot;
  out.fit_learned = lc * out.transform;
  out.fit_true = tfs;
  out.held_learned = (learned_held.rowwise() - out.learned_mean.transpose()) * out.transform;
  out.held_true = standardize(truth_held);
  return out;
}

AlignedLatents procrustes_align(const Mat& learned, const Mat& truth, double fit_fraction) {
  require_shape(learned.rows() == truth.rows(), "procrustes: matched sample counts required");
  const Index n = learned.rows();
  const Index n_fit = static_cast<Index>(std::floor(fit_fraction * static_cast<double>(n)));
  if (n_fit < 2 || n - n_fit < 2) throw InvalidArgument("procrustes: too few samples for a fit/held split");
  return procrustes_align(learned.topRows(n_fit), truth.topRows(n_fit), learned.bottomRows(n - n_fit),
                          truth.bottomRows(n - n_fit));
}

double subspace_alignment(const Mat& learned, const Mat& truth, double fit_fraction) {
  const AlignedLatents a = procrustes_align(learned, truth, fit_fraction);
  return principal_angle_cosine(a.held_learned, a.held_true);
}

FactorMatch greedy_match(const Mat& learned, const Mat& truth) {
  require_shape(learned.rows() == truth.rows(), "matching: sample counts differ");
  const Index ml = learned.cols(), mt = truth.cols();
  const auto center = [](const Mat& a) {
    Mat c = a.rowwise() - a.colwise().mean();
    // Columns that are constant up to rounding carry no signal.
    for (Index j = 0; j < c.cols(); ++j)
      if (c.col(j).norm() <= 1e-12 * (1.0 + a.col(j).norm())) c.col(j).setZero();
    return c;
  };
  const Mat lc = center(learned);
  const Mat tc = center(truth);
  Mat corr = Mat::Zero(ml, mt);
  for (Index i = 0; i < ml; ++i)
    for (Index j = 0; j < mt; ++j) {
      const double den = lc.col(i).norm() * tc.col(j).norm();
      corr(i, j) = den > 0.0 ? std::abs(lc.col(i).dot(tc.col(j))) / den : 0.0;
    }
  FactorMatch m;
  m.learned_for_true.assign(static_cast<std::size_t>(mt), -1);
  m.correlation.assign(static_cast<std::size_t>(mt), 0.0);
  std::vector<char> used_l(static_cast<std::size_t>(ml), 0), used_t(static_cast<std::size_t>(mt), 0);
  for (Index step = 0; step < std::min(ml, mt); ++step) {
    double best = -1.0;
    Index bi = -1, bj = -1;
    for (Index i = 0; i < ml; ++i) {
      if (used_l[i]) continue;
      for (Index j = 0; j < mt; ++j) {
        if (used_t[j]) continue;
        if (corr(i, j) > best) {
          best = corr(i, j);
          bi = i;
          bj = j;
        }
      }
    }
    used_l[bi] = used_t[bj] = 1;
    m.learned_for_true[bj] = static_cast<int>(bi);
    m.correlation[bj] = best;
  }
  return m;
}

Mat horizon_importance(const ModelBundle& bundle, const Mat& z, const Mat& h) {
  const Index N = bundle.config.num_horizons;
  if (bundle.config.decoder_kind == DecoderKind::linearized) return bundle.latent_weights().cwiseAbs();
  DecoderLatentMap map(bundle, h);
  Mat imp(N, z.rows());
  for (Index tau = 0; tau < N; ++tau) {
    Mat e = Mat::Zero(N, z.cols());
    e.row(tau).setOnes();
    imp.row(tau) = map.pullback(z, e).cwiseAbs().rowwise().mean().transpose();
  }
  return imp;
}

RecoveryReport factor_recovery_report(const SyntheticDataset& ds, const ModelBundle& bundle,
                                      const WindowedData& fit, const WindowedData& test,
                                      const EnergyParams& params, double active_threshold) {
  if (bundle.epochs_trained <= 0) throw ContractViolation("recovery report: bundle is untrained");
  const PathOutputs p = run_paths(bundle, test, params, true);
  const Mat truth = ds.true_latents(test).transpose();
  const Vec held_std = ((truth.rowwise() - truth.colwise().mean()).colwise().norm()).transpose();
  for (Index j = 0; j < held_std.size(); ++j)
    if (!(held_std[j] > 0.0))
      throw DegenerateError("recovery report: true factor " + std::to_string(j) + " is constant on the test set");
  const Mat fit_learned = run_paths(bundle, fit, params, false).z_hat.transpose();
  RecoveryReport r;
  const AlignedLatents al = procrustes_align(fit_learned, ds.true_latents(fit).transpose(), p.z_hat.transpose(), truth);
  r.learned_rank = al.learned_rank;
  r.subspace_alignment = principal_angle_cosine(al.held_learned, al.held_true);
  r.match = greedy_match(al.held_learned, al.held_true);
  r.mean_correlation = std::accumulate(r.match.correlation.begin(), r.match.correlation.end(), 0.0) /
                       static_cast<double>(r.match.correlation.size());
  r.min_correlation = *std::min_element(r.match.correlation.begin(), r.match.correlation.end());

  const auto mean_active = [&](const Mat& z) {
    return (z.array().abs() > active_threshold).cast<double>().colwise().sum().mean();
  };
  r.mean_active = mean_active(p.z_hat);
  r.mean_active_refined = mean_active(p.z_star);
  r.test_rmse = pooled_rmse(p.deployed, p.targets);
  r.refined_rmse = pooled_rmse(p.refined, p.targets);

  // Sensitivities in aligned coordinates: z = mean + pinv(T)^T a.
  const Mat pinv = al.transform.completeOrthogonalDecomposition().pseudoInverse();  // m_true x m_learned
  Mat imp;
  if (bundle.config.decoder_kind == DecoderKind::linearized) {
    imp = (bundle.latent_weights() * pinv.transpose()).cwiseAbs();
  } else {
    const Index N = bundle.config.num_horizons;
    DecoderLatentMap map(bundle, p.h);
    imp = Mat::Zero(N, pinv.rows());
    for (Index tau = 0; tau < N; ++tau) {
      Mat e = Mat::Zero(N, p.z_hat.cols());
      e.row(tau).setOnes();
      const Mat jac = map.pullback(p.z_hat, e);  // m_learned x n, row tau of each Jacobian
      imp.row(tau) = (pinv * jac).cwiseAbs().rowwise().mean().transpose();
    }
  }
  std::vector<int> true_for_aligned(static_cast<std::size_t>(pinv.rows()), -1);
  for (std::size_t j = 0; j < r.match.learned_for_true.size(); ++j)
    if (r.match.learned_for_true[j] >= 0) true_for_aligned[r.match.learned_for_true[j]] = static_cast<int>(j);
  int hits = 0;
  for (Index tau = 0; tau < imp.rows(); ++tau) {
    Index k = 0;
    imp.row(tau).maxCoeff(&k);
    const int j = true_for_aligned[k];
    if (j >= 0 && ds.mixing(tau, j) != 0.0) ++hits;
  }
  r.horizon_assignment = static_cast<double>(hits) / static_cast<double>(imp.rows());
  return r;
}

std::map<double, double> rmse_degradation(const std::map<double, double>& rmse_by_sigma) {
  if (rmse_by_sigma.empty()) throw InvalidArgument("rmse_degradation: no runs");
  const double base = rmse_by_sigma.begin()->second;
  if (!(base > 0.0)) throw DegenerateError("rmse_degradation: reference RMSE is zero");
  std::map<double, double> out;
  for (const auto& [sigma, rmse] : rmse_by_sigma) out[sigma] = 100.0 * (rmse / base - 1.0);
  return out;
}

}  // namespace slff
