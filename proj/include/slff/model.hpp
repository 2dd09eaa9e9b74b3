#pragma once

// The three trainable networks:
//   Pred: two-layer GRU over the window (features + availability masks) -> h
//   Enc:  two-layer GRU + linear head -> z_hat (deployed latent)
//   Dec:  64-32 ReLU MLP over [z; h], or the linearized form f(h) + W z
// Forward passes are batched over columns; reverse passes are hand-written.

#include "slff/common.hpp"
#include "slff/latent_inference.hpp"

#include <filesystem>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace slff {

enum class DecoderKind { mlp, linearized };

std::string to_string(DecoderKind kind);
DecoderKind decoder_kind_from_string(const std::string& s);

struct WindowTensor {
  Mat features;  // W x d, fold-normalized units
  Mat masks;     // W x d, 1 = released that day, 0 = forward-filled
  std::string timestamp;

  void validate(Index window, Index num_features) const;
};

struct TargetVector {
  Vec values;                 // N log-prices (or synthetic targets)
  std::vector<int> horizons;  // strictly increasing

  void validate() const;
};

struct HistoryContext {
  Vec values;
};

struct ModelConfig {
  int window = 20;
  int num_features = 16;
  int latent_dim = 8;
  int num_horizons = 3;
  int hidden = 32;      // h_dim
  int enc_hidden = 0;   // encoder GRU width; 0 = same as hidden
  int dec_hidden1 = 64;
  int dec_hidden2 = 32;
  DecoderKind decoder_kind = DecoderKind::mlp;
  double dropout = 0.2;
  bool use_history = true;
  // Soft-threshold applied to the encoder head; 0 leaves the head linear.
  double enc_shrink = 0.0;
  std::uint64_t seed = 0;

  int encoder_width() const { return enc_hidden > 0 ? enc_hidden : hidden; }
  void validate() const;
};

struct TensorSpec {
  std::string name;
  Index rows = 0;
  Index cols = 0;
  Index offset = 0;
};

// Flat parameter vector plus named layer-shape metadata.
class ParamBlock {
 public:
  void add(const std::string& name, Index rows, Index cols);
  void finalize();  // allocates zeros
  Index size() const { return values.size(); }
  const TensorSpec& spec(const std::string& name) const;
  Eigen::Map<Mat> mat(const std::string& name);
  Eigen::Map<const Mat> mat(const std::string& name) const;
  Eigen::Map<Mat> mat_in(Vec& flat, const std::string& name) const;

  Vec values;
  std::vector<TensorSpec> layout;
};

enum class ParamGroup { pred, dec, enc };

class ModelBundle {
 public:
  static ModelBundle initialize(const ModelConfig& config);

  // Single-sample conveniences (deterministic, dropout-free).
  HistoryContext pred_forward(const WindowTensor& x) const;
  LatentCode enc_forward(const WindowTensor& x) const;
  Vec dec_forward(const LatentCode& z, const HistoryContext& h) const;

  // Linearized decoder only: the latent-path matrix W (N x m).
  Mat latent_weights() const;

  ParamBlock& group(ParamGroup g);
  const ParamBlock& group(ParamGroup g) const;

  ModelConfig config;
  ParamBlock pred;
  ParamBlock dec;
  ParamBlock enc;
  int epochs_trained = 0;
};

// One entry per time step, each (input_channels x B).
struct SequenceBatch {
  std::vector<Mat> steps;
  Index batch() const { return steps.empty() ? 0 : steps.front().cols(); }
};

SequenceBatch make_sequence_batch(std::span<const WindowTensor* const> windows);
SequenceBatch make_sequence_batch(const WindowTensor& window);

struct GruTape {
  std::vector<Mat> inputs, h_prev, r, u, n, gh_n;
};

struct StackTape {
  GruTape layer1, layer2;
  std::vector<Mat> dropout_masks;  // empty when dropout is off
};

struct EncTape {
  StackTape stack;
  Mat h_enc;
  Mat head;  // pre-shrink output
};

struct DecTape {
  Mat input;           // [z; h] for mlp, h for linearized
  Mat z;               // latent columns
  Mat a1, a2;          // pre-activations
  Mat o1, o2;          // post-ReLU
};

// Pred. Dropout is applied between the GRU layers iff dropout_rng is non-null.
Mat pred_forward_batch(const ModelBundle& b, const SequenceBatch& x, StackTape* tape = nullptr,
                       Rng* dropout_rng = nullptr);
void pred_backward_batch(const ModelBundle& b, const StackTape& tape, const Mat& d_h, Vec& grad,
                         std::vector<Mat>* d_input = nullptr);

Mat enc_forward_batch(const ModelBundle& b, const SequenceBatch& x, EncTape* tape = nullptr);
void enc_backward_batch(const ModelBundle& b, const EncTape& tape, const Mat& d_z, Vec& grad,
                        std::vector<Mat>* d_input = nullptr);

Mat dec_forward_batch(const ModelBundle& b, const Mat& z, const Mat& h, DecTape* tape = nullptr);
// Accumulates parameter gradients into grad (if non-null) and writes input
// gradients to d_z / d_h (if non-null).
void dec_backward_batch(const ModelBundle& b, const DecTape& tape, const Mat& d_out, Vec* grad,
                        Mat* d_z, Mat* d_h);

// Zero context used when the history path is ablated.
Mat history_or_zero(const ModelBundle& b, const SequenceBatch& x, StackTape* tape = nullptr,
                    Rng* dropout_rng = nullptr);

// Decoder with a fixed batch of contexts, for refinement.
class DecoderLatentMap final : public LatentMap {
 public:
  DecoderLatentMap(const ModelBundle& bundle, Mat contexts);
  Index latent_dim() const override;
  Index output_dim() const override;
  Mat forecast(const Mat& z) const override;
  Mat pullback(const Mat& z, const Mat& d_forecast) const override;

 private:
  const ModelBundle* bundle_;
  Mat contexts_;
};

// Losses whose gradients Algorithm-style training needs:
//   prediction: mean_j ||Y_j - Dec(z*_j, Pred(X_j))||^2, z* held fixed
//   matching:   mean_j ||z*_j - Enc(X_j)||^2,            z* held fixed
//   deployed:   mean_j ||Y_j - Dec(Enc(X_j), Pred(X_j))||^2
enum class LossKind { prediction, matching, deployed };

struct Gradients {
  double loss = 0.0;
  Vec pred, dec, enc;  // zero vectors for groups that were not requested
};

// Throws ContractViolation when a requested group sits across the loss's
// stop-gradient boundary (Enc for prediction; Pred/Dec for matching).
Gradients compute_gradients(const ModelBundle& b, LossKind kind, const SequenceBatch& x,
                            const Mat& targets, const Mat* z_star,
                            std::initializer_list<ParamGroup> groups);

// Checkpoint: <dir>/model.json (architecture, seed, layout) and
// <dir>/params.bin (little-endian float64: pred, dec, enc).
void save_checkpoint(const ModelBundle& b, const std::filesystem::path& dir,
                     const std::string& extra_json = "{}");
ModelBundle load_checkpoint(const std::filesystem::path& dir);

}  // namespace slff
