#include "slff/model.hpp"

#include "json.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace slff {

using nlohmann::json;

std::string to_string(DecoderKind kind) { return kind == DecoderKind::mlp ? "mlp" : "linearized"; }

DecoderKind decoder_kind_from_string(const std::string& s) {
  if (s == "mlp") return DecoderKind::mlp;
  if (s == "linearized" || s == "linear") return DecoderKind::linearized;
  throw InvalidArgument("unknown decoder kind '" + s + "'");
}

void WindowTensor::validate(Index window, Index num_features) const {
  require_shape(features.rows() == window && features.cols() == num_features,
                "window tensor: expected " + std::to_string(window) + "x" +
                    std::to_string(num_features) + " features");
  require_shape(masks.rows() == window && masks.cols() == num_features,
                "window tensor: mask shape must match features");
  if (!features.allFinite()) throw DataError("window tensor: non-finite feature value");
  for (Index i = 0; i < masks.size(); ++i) {
    const double v = masks.data()[i];
    if (v != 0.0 && v != 1.0) throw DataError("window tensor: mask entries must be 0 or 1");
  }
}

void TargetVector::validate() const {
  require_shape(static_cast<Index>(horizons.size()) == values.size(),
                "target vector: one value per horizon");
  for (std::size_t i = 0; i < horizons.size(); ++i) {
    if (horizons[i] <= 0) throw InvalidArgument("target vector: horizons must be positive");
    if (i > 0 && horizons[i] <= horizons[i - 1])
      throw InvalidArgument("target vector: horizons must be strictly increasing");
  }
  if (!values.allFinite()) throw DataError("target vector: non-finite value");
}

void ModelConfig::validate() const {
  if (window < 1 || num_features < 1 || latent_dim < 1 || num_horizons < 1 || hidden < 1 ||
      dec_hidden1 < 1 || dec_hidden2 < 1)
    throw InvalidArgument("model config: all dimensions must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidArgument("model config: dropout in [0, 1)");
  if (!(enc_shrink >= 0.0)) throw InvalidArgument("model config: enc_shrink must be >= 0");
  if (enc_hidden < 0) throw InvalidArgument("model config: enc_hidden must be >= 0");
}

// ---------------------------------------------------------------------------
// ParamBlock

void ParamBlock::add(const std::string& name, Index rows, Index cols) {
  const Index offset = layout.empty() ? 0 : layout.back().offset + layout.back().rows * layout.back().cols;
  layout.push_back({name, rows, cols, offset});
}

void ParamBlock::finalize() {
  const Index n = layout.empty() ? 0 : layout.back().offset + layout.back().rows * layout.back().cols;
  values = Vec::Zero(n);
}

const TensorSpec& ParamBlock::spec(const std::string& name) const {
  for (const auto& s : layout)
    if (s.name == name) return s;
  throw InvalidArgument("parameter block has no tensor '" + name + "'");
}

Eigen::Map<Mat> ParamBlock::mat(const std::string& name) {
  const auto& s = spec(name);
  return {values.data() + s.offset, s.rows, s.cols};
}

Eigen::Map<const Mat> ParamBlock::mat(const std::string& name) const {
  const auto& s = spec(name);
  return {values.data() + s.offset, s.rows, s.cols};
}

Eigen::Map<Mat> ParamBlock::mat_in(Vec& flat, const std::string& name) const {
  if (flat.size() != values.size()) flat = Vec::Zero(values.size());
  const auto& s = spec(name);
  return {flat.data() + s.offset, s.rows, s.cols};
}

// ---------------------------------------------------------------------------
// Initialization

namespace {

void add_gru(ParamBlock& p, const std::string& prefix, Index in, Index hidden) {
  p.add(prefix + ".wx", 3 * hidden, in);
  p.add(prefix + ".wh", 3 * hidden, hidden);
  p.add(prefix + ".bx", 3 * hidden, 1);
  p.add(prefix + ".bh", 3 * hidden, 1);
}

void fill_uniform(Eigen::Map<Mat> m, double bound, Rng& rng) {
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = (2.0 * uniform01(rng) - 1.0) * bound;
}

void fill_glorot(Eigen::Map<Mat> m, Rng& rng) {
  fill_uniform(m, std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols())), rng);
}

Mat random_orthogonal(Index n, Rng& rng) {
  Mat g(n, n);
  for (Index i = 0; i < g.size(); ++i) g.data()[i] = standard_normal(rng);
  Eigen::HouseholderQR<Mat> qr(g);
  Mat q = qr.householderQ() * Mat::Identity(n, n);
  // Fix the sign ambiguity so the draw is Haar-distributed.
  const Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Index j = 0; j < n; ++j)
    if (r(j, j) < 0) q.col(j) *= -1.0;
  return q;
}

void init_gru(ParamBlock& p, const std::string& prefix, Rng& rng) {
  auto wx = p.mat(prefix + ".wx");
  auto wh = p.mat(prefix + ".wh");
  const Index h = wh.cols();
  const double bound = std::sqrt(6.0 / static_cast<double>(wx.cols() + h));
  for (Index i = 0; i < wx.size(); ++i) wx.data()[i] = (2.0 * uniform01(rng) - 1.0) * bound;
  for (int g = 0; g < 3; ++g) wh.middleRows(g * h, h) = random_orthogonal(h, rng);
}

}  // namespace

ModelBundle ModelBundle::initialize(const ModelConfig& config) {
  config.validate();
  ModelBundle b;
  b.config = config;
  const Index d_in = 2 * static_cast<Index>(config.num_features);
  const Index H = config.hidden;
  const Index m = config.latent_dim;
  const Index N = config.num_horizons;

  add_gru(b.pred, "l1", d_in, H);
  add_gru(b.pred, "l2", H, H);
  b.pred.finalize();

  const Index He = config.encoder_width();
  add_gru(b.enc, "l1", d_in, He);
  add_gru(b.enc, "l2", He, He);
  b.enc.add("head.w", m, He);
  b.enc.add("head.b", m, 1);
  b.enc.finalize();

  const Index dec_in = config.decoder_kind == DecoderKind::mlp ? m + H : H;
  b.dec.add("fc1.w", config.dec_hidden1, dec_in);
  b.dec.add("fc1.b", config.dec_hidden1, 1);
  b.dec.add("fc2.w", config.dec_hidden2, config.dec_hidden1);
  b.dec.add("fc2.b", config.dec_hidden2, 1);
  b.dec.add("out.w", N, config.dec_hidden2);
  b.dec.add("out.b", N, 1);
  if (config.decoder_kind == DecoderKind::linearized) b.dec.add("latent.w", N, m);
  b.dec.finalize();

  Rng rp = make_rng(config.seed, "init.pred");
  init_gru(b.pred, "l1", rp);
  init_gru(b.pred, "l2", rp);

  Rng re = make_rng(config.seed, "init.enc");
  init_gru(b.enc, "l1", re);
  init_gru(b.enc, "l2", re);
  fill_glorot(b.enc.mat("head.w"), re);

  Rng rd = make_rng(config.seed, "init.dec");
  fill_glorot(b.dec.mat("fc1.w"), rd);
  fill_glorot(b.dec.mat("fc2.w"), rd);
  fill_glorot(b.dec.mat("out.w"), rd);
  if (config.decoder_kind == DecoderKind::linearized) fill_glorot(b.dec.mat("latent.w"), rd);
  return b;
}

ParamBlock& ModelBundle::group(ParamGroup g) {
  switch (g) {
    case ParamGroup::pred: return pred;
    case ParamGroup::dec: return dec;
    default: return enc;
  }
}

const ParamBlock& ModelBundle::group(ParamGroup g) const {
  return const_cast<ModelBundle*>(this)->group(g);
}

Mat ModelBundle::latent_weights() const {
  if (config.decoder_kind != DecoderKind::linearized)
    throw ContractViolation("latent_weights: only the linearized decoder has an explicit W");
  return dec.mat("latent.w");
}

// ---------------------------------------------------------------------------
// Batching

SequenceBatch make_sequence_batch(std::span<const WindowTensor* const> windows) {
  SequenceBatch out;
  if (windows.empty()) return out;
  const Index W = windows.front()->features.rows();
  const Index d = windows.front()->features.cols();
  const Index B = static_cast<Index>(windows.size());
  out.steps.assign(W, Mat(2 * d, B));
  for (Index j = 0; j < B; ++j) {
    const WindowTensor& w = *windows[j];
    require_shape(w.features.rows() == W && w.features.cols() == d && w.masks.rows() == W &&
                      w.masks.cols() == d,
                  "sequence batch: inconsistent window shapes");
    for (Index t = 0; t < W; ++t) {
      out.steps[t].col(j).head(d) = w.features.row(t).transpose();
      out.steps[t].col(j).tail(d) = w.masks.row(t).transpose();
    }
  }
  return out;
}

SequenceBatch make_sequence_batch(const WindowTensor& window) {
  const WindowTensor* p = &window;
  return make_sequence_batch(std::span<const WindowTensor* const>(&p, 1));
}

// ---------------------------------------------------------------------------
// GRU

namespace {

struct GruView {
  Eigen::Map<const Mat> wx, wh, bx, bh;
};

GruView gru_view(const ParamBlock& p, const std::string& prefix) {
  return {p.mat(prefix + ".wx"), p.mat(prefix + ".wh"), p.mat(prefix + ".bx"), p.mat(prefix + ".bh")};
}

inline Mat sigmoid(const Mat& x) {
  return x.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

// Runs one GRU layer over the sequence from a zero initial state. Returns
// every step's hidden state when keep_all, otherwise only the final one.
std::vector<Mat> gru_run(const GruView& g, const std::vector<Mat>& xs, GruTape* tape, bool keep_all) {
  const Index H = g.wh.cols();
  require_shape(!xs.empty() && xs.front().rows() == g.wx.cols(), "gru: input width mismatch");
  const Index B = xs.front().cols();
  Mat h = Mat::Zero(H, B);
  std::vector<Mat> outs;
  if (tape) *tape = GruTape{};
  for (const Mat& x : xs) {
    Mat gx = g.wx * x;
    gx.colwise() += g.bx.col(0);
    Mat gh = g.wh * h;
    gh.colwise() += g.bh.col(0);
    Mat r = sigmoid(gx.topRows(H) + gh.topRows(H));
    Mat u = sigmoid(gx.middleRows(H, H) + gh.middleRows(H, H));
    Mat ghn = gh.bottomRows(H);
    Mat n = (gx.bottomRows(H) + r.cwiseProduct(ghn)).array().tanh().matrix();
    Mat next = (1.0 - u.array()).matrix().cwiseProduct(n) + u.cwiseProduct(h);
    if (tape) {
      tape->inputs.push_back(x);
      tape->h_prev.push_back(h);
      tape->r.push_back(std::move(r));
      tape->u.push_back(std::move(u));
      tape->n.push_back(std::move(n));
      tape->gh_n.push_back(std::move(ghn));
    }
    h = std::move(next);
    if (keep_all) outs.push_back(h);
  }
  if (!keep_all) outs.push_back(h);
  return outs;
}

// d_ext[t] is the gradient flowing into the hidden state output at step t
// (an empty matrix means zero).
void gru_backward(const GruView& g, const ParamBlock& block, const std::string& prefix,
                  const GruTape& tape, const std::vector<Mat>& d_ext, Vec& grad,
                  std::vector<Mat>* d_inputs) {
  const Index H = g.wh.cols();
  const Index T = static_cast<Index>(tape.inputs.size());
  const Index B = tape.inputs.front().cols();
  auto dwx = block.mat_in(grad, prefix + ".wx");
  auto dwh = block.mat_in(grad, prefix + ".wh");
  auto dbx = block.mat_in(grad, prefix + ".bx");
  auto dbh = block.mat_in(grad, prefix + ".bh");
  if (d_inputs) d_inputs->assign(T, Mat());
  Mat dh = Mat::Zero(H, B);
  Mat dgx(3 * H, B), dgh(3 * H, B);
  for (Index t = T - 1; t >= 0; --t) {
    if (t < static_cast<Index>(d_ext.size()) && d_ext[t].size() > 0) dh += d_ext[t];
    const Mat& r = tape.r[t];
    const Mat& u = tape.u[t];
    const Mat& n = tape.n[t];
    const Mat& hp = tape.h_prev[t];
    const Mat dn = dh.cwiseProduct((1.0 - u.array()).matrix());
    const Mat du = dh.cwiseProduct(hp - n);
    Mat dh_prev = dh.cwiseProduct(u);
    const Mat dan = dn.cwiseProduct((1.0 - n.array().square()).matrix());
    const Mat dr = dan.cwiseProduct(tape.gh_n[t]);
    const Mat dar = dr.cwiseProduct(r.cwiseProduct((1.0 - r.array()).matrix()));
    const Mat dau = du.cwiseProduct(u.cwiseProduct((1.0 - u.array()).matrix()));
    dgx.topRows(H) = dar;
    dgx.middleRows(H, H) = dau;
    dgx.bottomRows(H) = dan;
    dgh.topRows(H) = dar;
    dgh.middleRows(H, H) = dau;
    dgh.bottomRows(H) = dan.cwiseProduct(r);
    dwx.noalias() += dgx * tape.inputs[t].transpose();
    dbx += dgx.rowwise().sum();
    dwh.noalias() += dgh * hp.transpose();
    dbh += dgh.rowwise().sum();
    dh_prev.noalias() += g.wh.transpose() * dgh;
    if (d_inputs) (*d_inputs)[t] = g.wx.transpose() * dgx;
    dh = std::move(dh_prev);
  }
}

Mat dropout_mask(Index rows, Index cols, double rate, Rng& rng) {
  const double keep = 1.0 - rate;
  Mat m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = uniform01(rng) < keep ? 1.0 / keep : 0.0;
  return m;
}

Mat stack_forward(const ParamBlock& p, const SequenceBatch& x, StackTape* tape, Rng* dropout_rng,
                  double rate) {
  const GruView l1 = gru_view(p, "l1");
  const GruView l2 = gru_view(p, "l2");
  std::vector<Mat> outs1 = gru_run(l1, x.steps, tape ? &tape->layer1 : nullptr, true);
  if (tape) tape->dropout_masks.clear();
  if (dropout_rng && rate > 0.0) {
    for (Mat& o : outs1) {
      Mat mask = dropout_mask(o.rows(), o.cols(), rate, *dropout_rng);
      o = o.cwiseProduct(mask);
      if (tape) tape->dropout_masks.push_back(std::move(mask));
    }
  }
  std::vector<Mat> outs2 = gru_run(l2, outs1, tape ? &tape->layer2 : nullptr, false);
  return std::move(outs2.back());
}

void stack_backward(const ParamBlock& p, const StackTape& tape, const Mat& d_h, Vec& grad,
                    std::vector<Mat>* d_input) {
  const GruView l1 = gru_view(p, "l1");
  const GruView l2 = gru_view(p, "l2");
  if (grad.size() != p.size()) grad = Vec::Zero(p.size());
  std::vector<Mat> d_ext2(tape.layer2.inputs.size());
  d_ext2.back() = d_h;
  std::vector<Mat> d_in2;
  gru_backward(l2, p, "l2", tape.layer2, d_ext2, grad, &d_in2);
  if (!tape.dropout_masks.empty()) {
    for (std::size_t t = 0; t < d_in2.size(); ++t) d_in2[t] = d_in2[t].cwiseProduct(tape.dropout_masks[t]);
  }
  gru_backward(l1, p, "l1", tape.layer1, d_in2, grad, d_input);
}

}  // namespace

Mat pred_forward_batch(const ModelBundle& b, const SequenceBatch& x, StackTape* tape, Rng* dropout_rng) {
  require_shape(!x.steps.empty() && x.steps.front().rows() == 2 * b.config.num_features,
                "pred: input channels must be 2 x num_features");
  return stack_forward(b.pred, x, tape, dropout_rng, b.config.dropout);
}

void pred_backward_batch(const ModelBundle& b, const StackTape& tape, const Mat& d_h, Vec& grad,
                         std::vector<Mat>* d_input) {
  stack_backward(b.pred, tape, d_h, grad, d_input);
}

Mat history_or_zero(const ModelBundle& b, const SequenceBatch& x, StackTape* tape, Rng* dropout_rng) {
  if (b.config.use_history) return pred_forward_batch(b, x, tape, dropout_rng);
  return Mat::Zero(b.config.hidden, x.batch());
}

Mat enc_forward_batch(const ModelBundle& b, const SequenceBatch& x, EncTape* tape) {
  require_shape(!x.steps.empty() && x.steps.front().rows() == 2 * b.config.num_features,
                "enc: input channels must be 2 x num_features");
  Mat he = stack_forward(b.enc, x, tape ? &tape->stack : nullptr, nullptr, 0.0);
  Mat head = b.enc.mat("head.w") * he;
  head.colwise() += b.enc.mat("head.b").col(0);
  Mat z = b.config.enc_shrink > 0.0 ? soft_threshold(head, b.config.enc_shrink) : head;
  if (tape) {
    tape->h_enc = std::move(he);
    tape->head = std::move(head);
  }
  return z;
}

void enc_backward_batch(const ModelBundle& b, const EncTape& tape, const Mat& d_z, Vec& grad,
                        std::vector<Mat>* d_input) {
  if (grad.size() != b.enc.size()) grad = Vec::Zero(b.enc.size());
  Mat d_head = d_z;
  if (b.config.enc_shrink > 0.0) {
    const double th = b.config.enc_shrink;
    d_head = d_z.cwiseProduct(tape.head.unaryExpr([th](double v) { return std::abs(v) > th ? 1.0 : 0.0; }));
  }
  b.enc.mat_in(grad, "head.w").noalias() += d_head * tape.h_enc.transpose();
  b.enc.mat_in(grad, "head.b") += d_head.rowwise().sum();
  const Mat d_he = b.enc.mat("head.w").transpose() * d_head;
  stack_backward(b.enc, tape.stack, d_he, grad, d_input);
}

// ---------------------------------------------------------------------------
// Decoder

Mat dec_forward_batch(const ModelBundle& b, const Mat& z, const Mat& h, DecTape* tape) {
  const Index m = b.config.latent_dim;
  const Index H = b.config.hidden;
  require_shape(z.rows() == m, "dec: latent dimension mismatch");
  require_shape(h.rows() == H && h.cols() == z.cols(), "dec: context dimension mismatch");
  const bool mlp = b.config.decoder_kind == DecoderKind::mlp;
  Mat input;
  if (mlp) {
    input.resize(m + H, z.cols());
    input.topRows(m) = z;
    input.bottomRows(H) = h;
  } else {
    input = h;
  }
  Mat a1 = b.dec.mat("fc1.w") * input;
  a1.colwise() += b.dec.mat("fc1.b").col(0);
  Mat o1 = a1.cwiseMax(0.0);
  Mat a2 = b.dec.mat("fc2.w") * o1;
  a2.colwise() += b.dec.mat("fc2.b").col(0);
  Mat o2 = a2.cwiseMax(0.0);
  Mat out = b.dec.mat("out.w") * o2;
  out.colwise() += b.dec.mat("out.b").col(0);
  if (!mlp) out.noalias() += b.dec.mat("latent.w") * z;
  if (tape) {
    tape->input = std::move(input);
    tape->z = z;
    tape->a1 = std::move(a1);
    tape->a2 = std::move(a2);
    tape->o1 = std::move(o1);
    tape->o2 = std::move(o2);
  }
  return out;
}

void dec_backward_batch(const ModelBundle& b, const DecTape& tape, const Mat& d_out, Vec* grad,
                        Mat* d_z, Mat* d_h) {
  const Index m = b.config.latent_dim;
  const bool mlp = b.config.decoder_kind == DecoderKind::mlp;
  const auto relu_grad = [](const Mat& a) { return a.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }); };
  const Mat d_o2 = b.dec.mat("out.w").transpose() * d_out;
  const Mat d_a2 = d_o2.cwiseProduct(relu_grad(tape.a2));
  const Mat d_o1 = b.dec.mat("fc2.w").transpose() * d_a2;
  const Mat d_a1 = d_o1.cwiseProduct(relu_grad(tape.a1));
  if (grad) {
    Vec& g = *grad;
    b.dec.mat_in(g, "out.w").noalias() += d_out * tape.o2.transpose();
    b.dec.mat_in(g, "out.b") += d_out.rowwise().sum();
    b.dec.mat_in(g, "fc2.w").noalias() += d_a2 * tape.o1.transpose();
    b.dec.mat_in(g, "fc2.b") += d_a2.rowwise().sum();
    b.dec.mat_in(g, "fc1.w").noalias() += d_a1 * tape.input.transpose();
    b.dec.mat_in(g, "fc1.b") += d_a1.rowwise().sum();
    if (!mlp) b.dec.mat_in(g, "latent.w").noalias() += d_out * tape.z.transpose();
  }
  if (d_z || d_h) {
    const Mat d_input = b.dec.mat("fc1.w").transpose() * d_a1;
    if (mlp) {
      if (d_z) *d_z = d_input.topRows(m);
      if (d_h) *d_h = d_input.bottomRows(b.config.hidden);
    } else {
      if (d_z) *d_z = b.dec.mat("latent.w").transpose() * d_out;
      if (d_h) *d_h = d_input;
    }
  }
}

// ---------------------------------------------------------------------------
// Single-sample conveniences

HistoryContext ModelBundle::pred_forward(const WindowTensor& x) const {
  x.validate(config.window, config.num_features);
  const SequenceBatch sb = make_sequence_batch(x);
  return {history_or_zero(*this, sb).col(0)};
}

LatentCode ModelBundle::enc_forward(const WindowTensor& x) const {
  x.validate(config.window, config.num_features);
  const SequenceBatch sb = make_sequence_batch(x);
  return {enc_forward_batch(*this, sb).col(0), 1e-3};
}

Vec ModelBundle::dec_forward(const LatentCode& z, const HistoryContext& h) const {
  return dec_forward_batch(*this, z.values, h.values).col(0);
}

// ---------------------------------------------------------------------------
// LatentMap adapter

DecoderLatentMap::DecoderLatentMap(const ModelBundle& bundle, Mat contexts)
    : bundle_(&bundle), contexts_(std::move(contexts)) {
  require_shape(contexts_.rows() == bundle.config.hidden, "decoder map: context dimension mismatch");
}

Index DecoderLatentMap::latent_dim() const { return bundle_->config.latent_dim; }
Index DecoderLatentMap::output_dim() const { return bundle_->config.num_horizons; }

Mat DecoderLatentMap::forecast(const Mat& z) const { return dec_forward_batch(*bundle_, z, contexts_); }

Mat DecoderLatentMap::pullback(const Mat& z, const Mat& d_forecast) const {
  if (bundle_->config.decoder_kind == DecoderKind::linearized)
    return bundle_->dec.mat("latent.w").transpose() * d_forecast;
  DecTape tape;
  dec_forward_batch(*bundle_, z, contexts_, &tape);
  Mat dz;
  dec_backward_batch(*bundle_, tape, d_forecast, nullptr, &dz, nullptr);
  return dz;
}

// ---------------------------------------------------------------------------
// Loss gradients

Gradients compute_gradients(const ModelBundle& b, LossKind kind, const SequenceBatch& x,
                            const Mat& targets, const Mat* z_star,
                            std::initializer_list<ParamGroup> groups) {
  bool want_pred = false, want_dec = false, want_enc = false;
  for (ParamGroup g : groups) {
    want_pred |= g == ParamGroup::pred;
    want_dec |= g == ParamGroup::dec;
    want_enc |= g == ParamGroup::enc;
  }
  if (kind == LossKind::prediction && want_enc)
    throw ContractViolation("prediction loss: Enc is behind a stop-gradient (frozen snapshot)");
  if (kind == LossKind::matching && (want_pred || want_dec))
    throw ContractViolation("matching loss: refined latents are stop-gradient; only Enc is trainable");
  if (kind != LossKind::deployed && z_star == nullptr)
    throw InvalidArgument("compute_gradients: refined latents required for this loss");

  Gradients g;
  g.pred = Vec::Zero(b.pred.size());
  g.dec = Vec::Zero(b.dec.size());
  g.enc = Vec::Zero(b.enc.size());
  const double B = static_cast<double>(x.batch());

  switch (kind) {
    case LossKind::prediction: {
      StackTape pt;
      const Mat h = history_or_zero(b, x, &pt);
      DecTape dt;
      const Mat r = dec_forward_batch(b, *z_star, h, &dt) - targets;
      g.loss = r.squaredNorm() / B;
      Mat dh;
      dec_backward_batch(b, dt, 2.0 * r / B, want_dec ? &g.dec : nullptr, nullptr, want_pred ? &dh : nullptr);
      if (want_pred && b.config.use_history) pred_backward_batch(b, pt, dh, g.pred);
      break;
    }
    case LossKind::matching: {
      EncTape et;
      const Mat r = enc_forward_batch(b, x, &et) - *z_star;
      g.loss = r.squaredNorm() / B;
      if (want_enc) enc_backward_batch(b, et, 2.0 * r / B, g.enc);
      break;
    }
    case LossKind::deployed: {
      EncTape et;
      const Mat zh = enc_forward_batch(b, x, &et);
      StackTape pt;
      const Mat h = history_or_zero(b, x, &pt);
      DecTape dt;
      const Mat r = dec_forward_batch(b, zh, h, &dt) - targets;
      g.loss = r.squaredNorm() / B;
      Mat dz, dh;
      dec_backward_batch(b, dt, 2.0 * r / B, want_dec ? &g.dec : nullptr, want_enc ? &dz : nullptr,
                         want_pred ? &dh : nullptr);
      if (want_enc) enc_backward_batch(b, et, dz, g.enc);
      if (want_pred && b.config.use_history) pred_backward_batch(b, pt, dh, g.pred);
      break;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

json config_to_json(const ModelConfig& c) {
  return json{{"window", c.window},           {"num_features", c.num_features},
              {"latent_dim", c.latent_dim},   {"num_horizons", c.num_horizons},
              {"hidden", c.hidden},           {"enc_hidden", c.enc_hidden},
              {"dec_hidden1", c.dec_hidden1},
              {"dec_hidden2", c.dec_hidden2}, {"decoder_kind", to_string(c.decoder_kind)},
              {"dropout", c.dropout},         {"use_history", c.use_history},
              {"enc_shrink", c.enc_shrink},   {"seed", c.seed}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.window = j.at("window").get<int>();
  c.num_features = j.at("num_features").get<int>();
  c.latent_dim = j.at("latent_dim").get<int>();
  c.num_horizons = j.at("num_horizons").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.enc_hidden = j.value("enc_hidden", 0);
  c.dec_hidden1 = j.at("dec_hidden1").get<int>();
  c.dec_hidden2 = j.at("dec_hidden2").get<int>();
  c.decoder_kind = decoder_kind_from_string(j.at("decoder_kind").get<std::string>());
  c.dropout = j.at("dropout").get<double>();
  c.use_history = j.at("use_history").get<bool>();
  c.enc_shrink = j.value("enc_shrink", 0.0);
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

json layout_to_json(const ParamBlock& p) {
  json arr = json::array();
  for (const auto& s : p.layout) arr.push_back({{"name", s.name}, {"rows", s.rows}, {"cols", s.cols}});
  return arr;
}

void write_le_doubles(std::ofstream& out, const Vec& v) {
  for (Index i = 0; i < v.size(); ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v[i]);
    unsigned char bytes[8];
    for (int k = 0; k < 8; ++k) bytes[k] = static_cast<unsigned char>((bits >> (8 * k)) & 0xFF);
    out.write(reinterpret_cast<const char*>(bytes), 8);
  }
}

void read_le_doubles(std::ifstream& in, Vec& v) {
  for (Index i = 0; i < v.size(); ++i) {
    unsigned char bytes[8];
    in.read(reinterpret_cast<char*>(bytes), 8);
    if (!in) throw DataError("checkpoint: parameter blob is truncated");
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(bytes[k]) << (8 * k);
    v[i] = std::bit_cast<double>(bits);
  }
}

}  // namespace

void save_checkpoint(const ModelBundle& b, const std::filesystem::path& dir, const std::string& extra_json) {
  std::filesystem::create_directories(dir);
  json manifest{{"format", "slff-checkpoint-v1"},
                {"config", config_to_json(b.config)},
                {"epochs_trained", b.epochs_trained},
                {"blob", "params.bin"},
                {"byte_order", "little-endian float64"},
                {"groups",
                 {{"pred", {{"size", b.pred.size()}, {"layout", layout_to_json(b.pred)}}},
                  {"dec", {{"size", b.dec.size()}, {"layout", layout_to_json(b.dec)}}},
                  {"enc", {{"size", b.enc.size()}, {"layout", layout_to_json(b.enc)}}}}},
                {"extra", json::parse(extra_json)}};
  std::ofstream mf(dir / "model.json");
  mf << manifest.dump(2) << "\n";
  std::ofstream blob(dir / "params.bin", std::ios::binary);
  write_le_doubles(blob, b.pred.values);
  write_le_doubles(blob, b.dec.values);
  write_le_doubles(blob, b.enc.values);
  if (!blob || !mf) throw DataError("checkpoint: failed writing to " + dir.string());
}

ModelBundle load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "model.json");
  if (!mf) throw DataError("checkpoint: missing " + (dir / "model.json").string());
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint: malformed model.json: ") + e.what());
  }
  if (manifest.value("format", "") != "slff-checkpoint-v1")
    throw DataError("checkpoint: unsupported format");
  ModelBundle b = ModelBundle::initialize(config_from_json(manifest.at("config")));
  b.epochs_trained = manifest.value("epochs_trained", 0);
  for (const char* name : {"pred", "dec", "enc"}) {
    const ParamBlock& p = b.group(std::string(name) == "pred"  ? ParamGroup::pred
                                  : std::string(name) == "dec" ? ParamGroup::dec
                                                               : ParamGroup::enc);
    if (manifest.at("groups").at(name).at("size").get<Index>() != p.size())
      throw DataError(std::string("checkpoint: parameter count mismatch in group ") + name);
  }
  std::ifstream blob(dir / "params.bin", std::ios::binary);
  if (!blob) throw DataError("checkpoint: missing params.bin");
  read_le_doubles(blob, b.pred.values);
  read_le_doubles(blob, b.dec.values);
  read_le_doubles(blob, b.enc.values);
  if (blob.peek() != std::char_traits<char>::eof()) throw DataError("checkpoint: trailing bytes in params.bin");
  return b;
}

}  // namespace slff
