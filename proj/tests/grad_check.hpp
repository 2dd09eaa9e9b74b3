#pragma once

// Central finite-difference checks for every hand-written reverse pass.
// Coordinates whose perturbation flips a ReLU (or encoder shrink) pattern are
// skipped: the loss is not differentiable across the kink.

#include "slff/model.hpp"

#include <functional>
#include <string>
#include <vector>

namespace gradcheck {

using slff::Mat;
using slff::Vec;

struct Result {
  double rel_error = 0.0;
  int checked = 0;
  int skipped = 0;
};

inline double rel_error(const Vec& a, const Vec& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / scale;
}

// Piecewise-linear activation pattern of every decoder/encoder kink reached
// by the loss, as a flat 0/1 vector.
struct Pattern {
  std::vector<char> bits;
  bool operator==(const Pattern&) const = default;
};

inline void append_pattern(Pattern& p, const Mat& pre, double threshold = 0.0) {
  for (slff::Index i = 0; i < pre.size(); ++i) p.bits.push_back(std::abs(pre.data()[i]) > threshold ? (pre.data()[i] > 0 ? 1 : 2) : 0);
}

inline void append_relu_pattern(Pattern& p, const Mat& pre) {
  for (slff::Index i = 0; i < pre.size(); ++i) p.bits.push_back(pre.data()[i] > 0.0 ? 1 : 0);
}

struct LossEval {
  double loss = 0.0;
  Pattern pattern;
};

// Evaluates one of the three training losses with the library forward pass,
// recording the kink pattern.
inline LossEval eval_loss(const slff::ModelBundle& b, slff::LossKind kind, const slff::SequenceBatch& x,
                          const Mat& y, const Mat* z_star) {
  LossEval out;
  const double B = static_cast<double>(x.batch());
  const auto record_dec = [&](const slff::DecTape& t) {
    append_relu_pattern(out.pattern, t.a1);
    append_relu_pattern(out.pattern, t.a2);
  };
  const auto record_enc = [&](const slff::EncTape& t) {
    if (b.config.enc_shrink > 0.0) append_pattern(out.pattern, t.head, b.config.enc_shrink);
  };
  switch (kind) {
    case slff::LossKind::prediction: {
      slff::DecTape dt;
      const Mat h = slff::history_or_zero(b, x);
      out.loss = (slff::dec_forward_batch(b, *z_star, h, &dt) - y).squaredNorm() / B;
      record_dec(dt);
      break;
    }
    case slff::LossKind::matching: {
      slff::EncTape et;
      out.loss = (slff::enc_forward_batch(b, x, &et) - *z_star).squaredNorm() / B;
      record_enc(et);
      break;
    }
    case slff::LossKind::deployed: {
      slff::EncTape et;
      slff::DecTape dt;
      const Mat z = slff::enc_forward_batch(b, x, &et);
      const Mat h = slff::history_or_zero(b, x);
      out.loss = (slff::dec_forward_batch(b, z, h, &dt) - y).squaredNorm() / B;
      record_enc(et);
      record_dec(dt);
      break;
    }
  }
  return out;
}

// Compares analytic against central-difference gradients for one group.
inline Result check_group(slff::ModelBundle b, slff::LossKind kind, const slff::SequenceBatch& x,
                          const Mat& y, const Mat* z_star, slff::ParamGroup group,
                          double step = 1e-6) {
  const slff::Gradients g = slff::compute_gradients(b, kind, x, y, z_star, {group});
  const Vec& analytic = group == slff::ParamGroup::pred ? g.pred
                        : group == slff::ParamGroup::dec ? g.dec
                                                         : g.enc;
  const Pattern base = eval_loss(b, kind, x, y, z_star).pattern;
  Vec& theta = b.group(group).values;
  Vec fd = Vec::Zero(theta.size());
  Vec an = analytic;
  Result r;
  for (slff::Index i = 0; i < theta.size(); ++i) {
    const double orig = theta[i];
    theta[i] = orig + step;
    const LossEval plus = eval_loss(b, kind, x, y, z_star);
    theta[i] = orig - step;
    const LossEval minus = eval_loss(b, kind, x, y, z_star);
    theta[i] = orig;
    if (!(plus.pattern == base) || !(minus.pattern == base)) {
      an[i] = 0.0;
      ++r.skipped;
      continue;
    }
    fd[i] = (plus.loss - minus.loss) / (2.0 * step);
    ++r.checked;
  }
  r.rel_error = rel_error(an, fd);
  return r;
}

// Vector-Jacobian product of the decoder in z against finite differences of
// v^T Dec(z, h).
inline Result check_latent_pullback(const slff::ModelBundle& b, const Mat& z, const Mat& h,
                                    const Mat& v, double step = 1e-6) {
  slff::DecoderLatentMap map(b, h);
  const Mat analytic = map.pullback(z, v);
  Pattern base;
  {
    slff::DecTape t;
    slff::dec_forward_batch(b, z, h, &t);
    append_relu_pattern(base, t.a1);
    append_relu_pattern(base, t.a2);
  }
  Result r;
  Mat fd = Mat::Zero(z.rows(), z.cols());
  Mat an = analytic;
  Mat zp = z;
  for (slff::Index i = 0; i < z.size(); ++i) {
    const double orig = zp.data()[i];
    Pattern pp, pm;
    slff::DecTape tp, tm;
    zp.data()[i] = orig + step;
    const double lp = (v.cwiseProduct(slff::dec_forward_batch(b, zp, h, &tp))).sum();
    zp.data()[i] = orig - step;
    const double lm = (v.cwiseProduct(slff::dec_forward_batch(b, zp, h, &tm))).sum();
    zp.data()[i] = orig;
    append_relu_pattern(pp, tp.a1);
    append_relu_pattern(pp, tp.a2);
    append_relu_pattern(pm, tm.a1);
    append_relu_pattern(pm, tm.a2);
    if (!(pp == base) || !(pm == base)) {
      an.data()[i] = 0.0;
      ++r.skipped;
      continue;
    }
    fd.data()[i] = (lp - lm) / (2.0 * step);
    ++r.checked;
  }
  r.rel_error = rel_error(Eigen::Map<const Vec>(an.data(), an.size()), Eigen::Map<const Vec>(fd.data(), fd.size()));
  return r;
}

// Jacobian-vector check of Pred with respect to its input channels:
// v^T h(x) differentiated through every input entry.
inline Result check_pred_input(const slff::ModelBundle& b, const slff::SequenceBatch& x, const Mat& v,
                               double step = 1e-6) {
  slff::StackTape tape;
  slff::pred_forward_batch(b, x, &tape);
  Vec grad;
  std::vector<Mat> d_in;
  slff::pred_backward_batch(b, tape, v, grad, &d_in);
  slff::SequenceBatch xp = x;
  std::vector<double> an, fd;
  for (std::size_t t = 0; t < xp.steps.size(); ++t) {
    for (slff::Index i = 0; i < xp.steps[t].size(); ++i) {
      double& e = xp.steps[t].data()[i];
      const double orig = e;
      e = orig + step;
      const double lp = v.cwiseProduct(slff::pred_forward_batch(b, xp)).sum();
      e = orig - step;
      const double lm = v.cwiseProduct(slff::pred_forward_batch(b, xp)).sum();
      e = orig;
      fd.push_back((lp - lm) / (2.0 * step));
      an.push_back(d_in[t].data()[i]);
    }
  }
  Result r;
  r.checked = static_cast<int>(an.size());
  r.rel_error = rel_error(Eigen::Map<const Vec>(an.data(), an.size()), Eigen::Map<const Vec>(fd.data(), fd.size()));
  return r;
}

// A random tiny configuration and batch.
struct TinyCase {
  slff::ModelBundle bundle;
  slff::SequenceBatch x;
  Mat y;
  Mat z_star;
};

inline TinyCase make_tiny_case(std::uint64_t seed, slff::DecoderKind kind, bool use_history = true,
                               double enc_shrink = 0.0, int W = 8, int d = 5, int m = 3, int H = 6,
                               int N = 2, int B = 4, int enc_hidden = 0) {
  slff::ModelConfig c;
  c.window = W;
  c.num_features = d;
  c.latent_dim = m;
  c.hidden = H;
  c.num_horizons = N;
  c.dec_hidden1 = 7;
  c.dec_hidden2 = 5;
  c.decoder_kind = kind;
  c.use_history = use_history;
  c.enc_shrink = enc_shrink;
  c.enc_hidden = enc_hidden;
  c.seed = seed;
  TinyCase tc{slff::ModelBundle::initialize(c), {}, {}, {}};
  slff::Rng rng = slff::make_rng(seed, "tiny-case");
  // Non-zero biases so that bias gradients are exercised.
  for (auto g : {slff::ParamGroup::pred, slff::ParamGroup::dec, slff::ParamGroup::enc}) {
    Vec& v = tc.bundle.group(g).values;
    for (slff::Index i = 0; i < v.size(); ++i) v[i] += 0.1 * slff::standard_normal(rng);
  }
  std::vector<slff::WindowTensor> windows(B);
  for (auto& w : windows) {
    w.features.resize(W, d);
    w.masks.resize(W, d);
    for (slff::Index i = 0; i < w.features.size(); ++i) {
      w.features.data()[i] = slff::standard_normal(rng);
      w.masks.data()[i] = slff::uniform01(rng) < 0.6 ? 1.0 : 0.0;
    }
  }
  std::vector<const slff::WindowTensor*> ptrs;
  for (auto& w : windows) ptrs.push_back(&w);
  tc.x = slff::make_sequence_batch(ptrs);
  tc.y.resize(N, B);
  tc.z_star.resize(m, B);
  for (slff::Index i = 0; i < tc.y.size(); ++i) tc.y.data()[i] = slff::standard_normal(rng);
  for (slff::Index i = 0; i < tc.z_star.size(); ++i) tc.z_star.data()[i] = slff::standard_normal(rng);
  return tc;
}

}  // namespace gradcheck
