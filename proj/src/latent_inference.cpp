#include "slff/latent_inference.hpp"

#include <cmath>

namespace slff {

void EnergyParams::validate() const {
  if (!(step_size > 0.0)) throw InvalidArgument("step_size must be positive");
  if (num_steps < 1) throw InvalidArgument("num_steps must be at least 1");
  if (!(lambda_l1 >= 0.0)) throw InvalidArgument("lambda_l1 must be non-negative");
  if (!(mu_prox >= 0.0)) throw InvalidArgument("mu_prox must be non-negative");
  if (!(convergence_tol >= 0.0)) throw InvalidArgument("convergence_tol must be non-negative");
}

int LatentCode::active_count() const {
  int n = 0;
  for (Index k = 0; k < values.size(); ++k) n += std::abs(values[k]) > active_threshold ? 1 : 0;
  return n;
}

std::vector<Index> LatentCode::active_set() const {
  std::vector<Index> out;
  for (Index k = 0; k < values.size(); ++k)
    if (std::abs(values[k]) > active_threshold) out.push_back(k);
  return out;
}

AffineLatentMap::AffineLatentMap(Mat weights, Mat offset)
    : weights_(std::move(weights)), offset_(std::move(offset)) {
  require_shape(offset_.rows() == weights_.rows(), "affine map: offset rows must match outputs");
}

Mat AffineLatentMap::forecast(const Mat& z) const {
  require_shape(z.rows() == weights_.cols(), "affine map: latent dimension mismatch");
  Mat out = weights_ * z;
  if (offset_.cols() == 1) {
    out.colwise() += offset_.col(0);
  } else {
    require_shape(offset_.cols() == z.cols(), "affine map: offset columns must match batch");
    out += offset_;
  }
  return out;
}

Mat AffineLatentMap::pullback(const Mat&, const Mat& d_forecast) const {
  return weights_.transpose() * d_forecast;
}

Vec soft_threshold(const Vec& x, double theta) {
  if (!(theta >= 0.0)) throw InvalidArgument("soft_threshold: theta must be non-negative");
  return x.unaryExpr([theta](double v) {
    const double a = std::abs(v) - theta;
    return a > 0.0 ? std::copysign(a, v) : 0.0;
  });
}

Mat soft_threshold(const Mat& x, double theta) {
  if (!(theta >= 0.0)) throw InvalidArgument("soft_threshold: theta must be non-negative");
  return x.unaryExpr([theta](double v) {
    const double a = std::abs(v) - theta;
    return a > 0.0 ? std::copysign(a, v) : 0.0;
  });
}

Vec energy_batch(const Mat& targets, const LatentMap& decoder, const Mat& z, const Mat& anchor,
                 const EnergyParams& params) {
  require_shape(z.rows() == decoder.latent_dim() && anchor.rows() == z.rows() &&
                    anchor.cols() == z.cols(),
                "energy: latent/anchor dimension mismatch");
  require_shape(targets.rows() == decoder.output_dim() && targets.cols() == z.cols(),
                "energy: target dimension mismatch");
  const Mat resid = targets - decoder.forecast(z);
  Vec e = resid.colwise().squaredNorm().transpose();
  e += params.lambda_l1 * z.cwiseAbs().colwise().sum().transpose();
  e += params.mu_prox * (z - anchor).colwise().squaredNorm().transpose();
  return e;
}

double energy(const Vec& target, const LatentMap& decoder, const Vec& z, const Vec& anchor,
              const EnergyParams& params) {
  return energy_batch(target, decoder, z, anchor, params)[0];
}

BatchRefinement refine_batch(const Mat& targets, const LatentMap& decoder, const Mat& anchors,
                             const EnergyParams& params, bool record_trace) {
  params.validate();
  require_shape(anchors.rows() == decoder.latent_dim(), "refine: anchor dimension mismatch");
  require_shape(targets.rows() == decoder.output_dim() && targets.cols() == anchors.cols(),
                "refine: target dimension mismatch");
  const int K = params.num_steps;
  const double alpha = params.step_size;
  const double theta = alpha * params.lambda_l1;

  BatchRefinement out;
  Mat z = anchors;
  if (record_trace) {
    out.energies.resize(K + 1, anchors.cols());
    out.path_norms.resize(K, anchors.cols());
    out.energies.row(0) = energy_batch(targets, decoder, z, anchors, params).transpose();
    if (!out.energies.row(0).allFinite()) throw NumericalFailure("refine: non-finite energy", 0);
  }
  for (int k = 0; k < K; ++k) {
    const Mat pred = decoder.forecast(z);
    Mat grad = decoder.pullback(z, 2.0 * (pred - targets));
    grad += 2.0 * params.mu_prox * (z - anchors);
    if (!grad.allFinite()) throw NumericalFailure("refine: non-finite gradient", k);
    Mat next = soft_threshold(Mat(z - alpha * grad), theta);
    if (!next.allFinite()) throw NumericalFailure("refine: non-finite iterate", k + 1);
    if (record_trace) {
      out.path_norms.row(k) = (next - z).colwise().norm();
      out.energies.row(k + 1) = energy_batch(targets, decoder, next, anchors, params).transpose();
      if (!out.energies.row(k + 1).allFinite())
        throw NumericalFailure("refine: non-finite energy", k + 1);
    }
    z = std::move(next);
  }
  out.final_latents = std::move(z);
  return out;
}

RefinementTrace refine(const Vec& target, const LatentMap& decoder, const LatentCode& anchor,
                       const EnergyParams& params) {
  const BatchRefinement b = refine_batch(target, decoder, anchor.values, params, true);
  RefinementTrace trace;
  trace.energies.assign(b.energies.data(), b.energies.data() + b.energies.rows());
  trace.latent_path_norms.assign(b.path_norms.data(), b.path_norms.data() + b.path_norms.rows());
  trace.final_latent = LatentCode{b.final_latents.col(0), anchor.active_threshold};
  trace.converged_at = detect_plateau(trace.energies, params.convergence_tol);
  return trace;
}

std::optional<int> detect_plateau(const std::vector<double>& energies, double tol) {
  for (std::size_t k = 0; k + 1 < energies.size(); ++k) {
    if (std::abs(energies[k + 1] - energies[k]) < tol) return static_cast<int>(k);
  }
  return std::nullopt;
}

}  // namespace slff
