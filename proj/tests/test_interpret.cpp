#include "doctest.h"

#include "slff/interpret.hpp"

#include "json.hpp"

#include <cmath>

using namespace slff;

namespace {

Mat gaussian(Index rows, Index cols, Rng& rng) {
  Mat m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = standard_normal(rng);
  return m;
}

Mat random_rotation(Index n, Rng& rng) {
  Eigen::HouseholderQR<Mat> qr(gaussian(n, n, rng));
  return qr.householderQ() * Mat::Identity(n, n);
}

FactorPanel panel_of(const Mat& z) {
  FactorPanel p;
  p.latents = z;
  for (Index t = 0; t < z.rows(); ++t) p.dates.push_back("d" + std::to_string(t));
  return p;
}

// Canonical correlations from the covariance eigenproblem
// Σaa^-1 Σab Σbb^-1 Σba.
Vec cca_oracle(const Mat& a, const Mat& b) {
  const Mat ca = a.rowwise() - a.colwise().mean(), cb = b.rowwise() - b.colwise().mean();
  const Mat saa = ca.transpose() * ca, sbb = cb.transpose() * cb, sab = ca.transpose() * cb;
  const Mat mtx = saa.inverse() * sab * sbb.inverse() * sab.transpose();
  Eigen::EigenSolver<Mat> es(mtx);
  Vec ev = es.eigenvalues().real();
  std::sort(ev.data(), ev.data() + ev.size(), std::greater<>());
  return ev.cwiseMax(0.0).cwiseSqrt();
}

// Jitter of 0-9 rows for event placement.
Index uniform_index_for_test(Rng& rng) { return static_cast<Index>(uniform01(rng) * 10.0) % 10; }

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}

double sd_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size() - 1));
}

}  // namespace

TEST_CASE("active factor statistics") {
  FactorPanel zero = panel_of(Mat::Zero(5, 4));
  CHECK(active_factor_stats(zero).mean_count == 0.0);
  Mat z = Mat::Zero(6, 8);
  for (Index t = 0; t < 6; ++t)
    for (Index k = 0; k < 3; ++k) z(t, (t + 2 * k) % 8) = (k % 2 ? -1.0 : 1.0) * (0.5 + t);
  z(0, 7) = 5e-4;  // below ε_active
  const ActiveStats s = active_factor_stats(panel_of(z));
  CHECK(s.mean_count == 3.0);
  CHECK(s.per_date == std::vector<int>(6, 3));
}

TEST_CASE("canonical correlations match the covariance eigenproblem") {
  Rng rng(5);
  for (int rep = 0; rep < 5; ++rep) {
    const Mat common = gaussian(200, 2, rng);
    Mat a = gaussian(200, 4, rng), b = gaussian(200, 3, rng);
    a.leftCols(2) += 2.0 * common;
    b.leftCols(2) += common * Mat::Random(2, 2);
    const Vec cc = canonical_correlations(a, b);
    const Vec oracle = cca_oracle(a, b);
    REQUIRE(cc.size() == 3);
    for (Index i = 0; i < 3; ++i) CHECK(cc[i] == doctest::Approx(oracle[i]).epsilon(1e-8));
  }
  CHECK_THROWS_AS(canonical_correlations(Mat::Ones(10, 2), gaussian(10, 2, rng)), DegenerateError);
}

TEST_CASE("procrustes stability: identity, rotations and invariance") {
  Rng rng(8);
  const Mat z = gaussian(300, 6, rng);
  const StabilityReport same = procrustes_stability({panel_of(z), panel_of(z)});
  CHECK(same.mean_canonical == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(same.max_angle_degrees < 1e-4);
  const Mat q = random_rotation(6, rng);
  const StabilityReport rot = procrustes_stability({panel_of(z), panel_of(z * q)});
  CHECK(std::abs(rot.mean_canonical - 1.0) < 1e-8);
  // The fitted rotation undoes q.
  CHECK((rot.pairs[0].rotation - q.transpose()).norm() < 1e-8);

  const Mat w = gaussian(300, 6, rng) + 0.7 * z;
  const double base = procrustes_stability({panel_of(z), panel_of(w)}).mean_canonical;
  for (int rep = 0; rep < 3; ++rep) {
    const Mat r1 = random_rotation(6, rng), r2 = random_rotation(6, rng);
    CHECK(std::abs(procrustes_stability({panel_of(z * r1), panel_of(w * r2)}).mean_canonical - base) < 1e-8);
  }
  FactorPanel shifted = panel_of(z);
  shifted.dates[0] = "other";
  CHECK_THROWS_AS(procrustes_stability({panel_of(z), shifted}), InvalidArgument);
  CHECK_THROWS_AS(procrustes_stability({panel_of(z)}), InvalidArgument);
}

TEST_CASE("procrustes stability of independent panels matches a Monte Carlo null") {
  Rng rng(13);
  std::vector<double> reported, oracle;
  for (int rep = 0; rep < 200; ++rep) {
    const Mat a = gaussian(80, 4, rng), b = gaussian(80, 4, rng);
    reported.push_back(procrustes_stability({panel_of(a), panel_of(b)}).mean_canonical);
    // Independent draw of the null statistic on a held split of 40 rows.
    oracle.push_back(cca_oracle(gaussian(40, 4, rng), gaussian(40, 4, rng)).mean());
  }
  const double se = std::sqrt(sd_of(reported) * sd_of(reported) / 200.0 + sd_of(oracle) * sd_of(oracle) / 200.0);
  CHECK(std::abs(mean_of(reported) - mean_of(oracle)) < 4.0 * se);
  CHECK(mean_of(reported) < 0.5);
}

TEST_CASE("driver regression: correlations, orientation, partials") {
  Rng rng(17);
  const Index T = 400;
  Mat z = gaussian(T, 2, rng);
  const Mat ctrl = gaussian(T, 1, rng);
  Mat drivers(T, 3);
  drivers.col(0) = z.col(0);
  drivers.col(1) = -z.col(1) + 0.5 * gaussian(T, 1, rng);
  drivers.col(2) = ctrl.col(0) + 0.3 * z.col(0);
  const std::vector<std::string> names{"a", "b", "c"};
  const DriverReport rep = driver_regression(panel_of(z), drivers, names, {"x0", "x1"}, ctrl);
  REQUIRE(rep.stats.size() == 6);
  CHECK(rep.stats[0].r == doctest::Approx(1.0));
  CHECK(rep.stats[0].r_squared == doctest::Approx(1.0));
  CHECK(rep.signs[0] == 1.0);
  CHECK(rep.signs[1] == -1.0);  // factor 1 flipped toward its best driver
  CHECK(rep.stats[4].r > 0.8);
  // Partial correlation against the textbook single-control formula.
  const Vec f = z.col(0), d = drivers.col(2), c = ctrl.col(0);
  const double rxy = pearson(f, d), rxz = pearson(f, c), ryz = pearson(d, c);
  const double textbook = (rxy - rxz * ryz) / std::sqrt((1 - rxz * rxz) * (1 - ryz * ryz));
  CHECK(rep.stats[2].partial_defined);
  CHECK(rep.stats[2].partial_r == doctest::Approx(textbook).epsilon(1e-10));

  // Both variables equal to the control: the partial is undefined.
  Mat zc(T, 1);
  zc.col(0) = ctrl.col(0);
  const DriverReport undefined = driver_regression(panel_of(zc), ctrl, {"ctrl_copy"}, {}, ctrl);
  CHECK_FALSE(undefined.stats[0].partial_defined);
  CHECK(std::isnan(undefined.stats[0].partial_r));
  CHECK_FALSE(undefined.warnings.empty());

  CHECK_THROWS_AS(driver_regression(panel_of(z), drivers, names, {"b"}), ContractViolation);
  const auto j = nlohmann::json::parse(to_json(rep));
  CHECK(j["stats"].size() == 6);
  CHECK(driver_heatmap_csv(rep, names).rfind("factor,a,b,c\n", 0) == 0);
}

TEST_CASE("counterfactuals on the linearized decoder are exact and additive") {
  ModelConfig c;
  c.window = 5;
  c.num_features = 3;
  c.latent_dim = 4;
  c.hidden = 6;
  c.num_horizons = 3;
  c.decoder_kind = DecoderKind::linearized;
  c.seed = 3;
  const ModelBundle b = ModelBundle::initialize(c);
  Rng rng(2);
  WindowTensor x;
  x.features = gaussian(5, 3, rng);
  x.masks = Mat::Ones(5, 3);
  const Vec sd = Vec::LinSpaced(4, 0.5, 2.0);
  CHECK(counterfactual(b, x, 2, 0.0, sd).isZero(0.0));
  const Mat w = b.latent_weights();
  for (Index k = 0; k < 4; ++k) {
    const Vec s = counterfactual(b, x, k, 1.5, sd);
    CHECK((s - 1.5 * sd[k] * w.col(k)).cwiseAbs().maxCoeff() < 1e-12);
    const Vec s1 = counterfactual(b, x, k, 0.4, sd), s2 = counterfactual(b, x, k, 1.1, sd);
    CHECK((s1 + s2 - s).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK_THROWS_AS(counterfactual(b, x, 4, 1.0, sd), InvalidArgument);
  CHECK_THROWS_AS(counterfactual(b, x, 0, 1.0, Vec::Ones(3)), ShapeError);
}

TEST_CASE("event study: constant factor, brute-force shift, exact permutation p") {
  const Vec flat = Vec::Constant(50, 2.0);
  const EventStudyResult c = event_study(flat, {10, 30}, 3, 200, 1);
  CHECK(c.shift_sd == 0.0);
  CHECK(c.p_value == 1.0);

  // Small sample where every non-overlapping placement can be enumerated.
  Rng rng(4);
  const Index T = 14;
  Vec f(T);
  for (Index t = 0; t < T; ++t) f[t] = standard_normal(rng);
  const std::vector<Index> events{3, 9};
  const int w = 1;
  const Index L = 3;
  const auto diff = [&](Index s1, Index s2) {
    double in = 0.0;
    int n = 0;
    for (Index t = 0; t < T; ++t)
      if ((t >= s1 && t < s1 + L) || (t >= s2 && t < s2 + L)) {
        in += f[t];
        ++n;
      }
    return in / n - (f.sum() - in) / double(T - n);
  };
  const double obs = diff(2, 8);
  long extreme = 0, total = 0;
  for (Index s1 = 0; s1 + L <= T; ++s1)
    for (Index s2 = s1 + L; s2 + L <= T; ++s2) {
      ++total;
      if (std::abs(diff(s1, s2)) >= std::abs(obs) - 1e-12) ++extreme;
    }
  const double exact = double(extreme) / double(total);
  const EventStudyResult r = event_study(f, events, w, 4000, 9);
  double sd = 0.0;
  for (Index t = 0; t < T; ++t) sd += (f[t] - f.mean()) * (f[t] - f.mean());
  sd = std::sqrt(sd / double(T - 1));
  CHECK(r.shift_sd == doctest::Approx(obs / sd).epsilon(1e-12));
  CHECK(std::abs(r.p_value - exact) < 4.0 * std::sqrt(exact * (1 - exact) / 4000.0) + 1e-3);

  CHECK_THROWS_AS(event_study(f, {0, 9}, 1, 200, 1), InvalidArgument);
  CHECK_THROWS_AS(event_study(f, {5}, 1, 200, 1), InvalidArgument);
  CHECK_THROWS_AS(event_study(f, {3, 9}, 1, 50, 1), InvalidArgument);
  const EventStudyResult collapsed = event_study(f, {3, 4, 9}, 1, 200, 1);
  CHECK(collapsed.num_events == 2);
  CHECK(collapsed.warnings.size() == 1);
}

TEST_CASE("event study: planted effects are detected and null p-values are uniform") {
  Rng rng(23);
  const Index T = 500;
  std::vector<double> null_p;
  int detected = 0;
  for (int rep = 0; rep < 150; ++rep) {
    Vec f(T);
    for (Index t = 0; t < T; ++t) f[t] = standard_normal(rng);
    std::vector<Index> events;
    for (Index e = 20; e < T - 20; e += 45) events.push_back(e + uniform_index_for_test(rng));
    null_p.push_back(event_study(f, events, 3, 200, 100 + rep).p_value);
    Vec planted = f;
    for (Index e : events)
      for (Index t = e - 3; t <= e + 3; ++t) planted[t] += 1.0;
    if (rep < 20 && event_study(planted, events, 3, 1000, 500 + rep).p_value < 0.01) ++detected;
  }
  CHECK(detected == 20);
  const auto [D, p] = ks_uniform(null_p);
  CHECK(p > 0.01);
}

TEST_CASE("event study on a dated panel") {
  Rng rng(29);
  Mat z = gaussian(120, 2, rng);
  const FactorPanel p = panel_of(z);
  EventSpec spec;
  spec.event_dates = {"d20", "d60", "d90"};
  spec.factor = 1;
  spec.seed = 4;
  const EventStudyResult r = event_study(p, spec);
  CHECK(r.shift_sd == doctest::Approx(event_study(Vec(z.col(1)), {20, 60, 90}, 3, 1000, 4).shift_sd));
  spec.event_dates.push_back("missing");
  CHECK_THROWS_AS(event_study(p, spec), InvalidArgument);
  CHECK(nlohmann::json::parse(to_json(r)).contains("p_value"));
}

TEST_CASE("Kolmogorov-Smirnov against the uniform distribution") {
  CHECK(ks_uniform({0.5}).first == doctest::Approx(0.5));
  Rng rng(31);
  std::vector<double> u(500), skew(500);
  for (std::size_t i = 0; i < u.size(); ++i) {
    u[i] = uniform01(rng);
    skew[i] = u[i] * u[i];
  }
  // Brute-force statistic: sup |F_n - F| over a fine grid plus the sample points.
  double brute = 0.0;
  std::vector<double> sorted = u;
  std::sort(sorted.begin(), sorted.end());
  for (double x : sorted) {
    const double below = double(std::lower_bound(sorted.begin(), sorted.end(), x) - sorted.begin());
    const double upto = double(std::upper_bound(sorted.begin(), sorted.end(), x) - sorted.begin());
    brute = std::max({brute, std::abs(upto / 500.0 - x), std::abs(below / 500.0 - x)});
  }
  CHECK(ks_uniform(u).first == doctest::Approx(brute).epsilon(1e-12));
  CHECK(ks_uniform(u).second > 0.01);
  CHECK(ks_uniform(skew).second < 1e-6);
  CHECK_THROWS_AS(ks_uniform({}), InvalidArgument);
}
