#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "adams/labels.hpp"
#include "adams/rule_lang.hpp"

namespace adams::model {

// Fixed character alphabet: PAD=0, then the printable ASCII bytes
// 0x20..0x7E mapped to 1..95.
inline constexpr int kVocabSize = 96;
inline constexpr std::int32_t kPadId = 0;

struct ModelConfig {
  int depth = 3;       // residual blocks
  int filters = 64;    // channels of every block convolution
  int kernel = 5;      // odd window size, same padding
  int bottleneck = 2;  // channel divisor before the dense layer
  int embed_dim = 128;
  int max_len = 32;
  int vocab_size = kVocabSize;
  int n_rules = 0;

  int bneck_channels() const { return (filters + bottleneck - 1) / bottleneck; }
  int flat_dim() const { return bneck_channels() * max_len; }
  void validate() const;  // throws InvalidConfig
};

using Tensor = std::vector<double>;

struct BatchNorm {
  Tensor gamma, beta;          // trainable
  Tensor run_mean, run_var;    // running statistics, used at inference
};

struct Conv {
  Tensor w;  // [c_out][c_in][kernel]
  Tensor b;  // [c_out]
};

struct Block {
  BatchNorm bn1;
  Conv conv1;
  BatchNorm bn2;
  Conv conv2;
};

struct Weights {
  Tensor embedding;  // [vocab][embed_dim]
  Conv conv0;        // embed_dim -> filters
  std::vector<Block> blocks;
  Conv bneck;                // filters -> bneck_channels
  Tensor dense_w;            // [flat_dim][n_rules]
  Tensor dense_b;            // [n_rules]
  std::uint64_t ruleset_fingerprint = 0;
};

/// Seeded He-style uniform init (fan-in scaled); normalization layers start
/// as identity (gamma 1, beta 0, running mean 0 / var 1).
Weights init_weights(const ModelConfig& cfg, std::uint64_t seed);
Weights zeros_like(const ModelConfig& cfg);

/// Tensor enumeration in serialization order. `trainable` skips running
/// statistics (they are not optimizer parameters).
std::vector<Tensor*> all_tensors(Weights& w);
std::vector<const Tensor*> all_tensors(const Weights& w);
std::vector<Tensor*> trainable_tensors(Weights& w);
std::vector<const Tensor*> trainable_tensors(const Weights& w);

/// Throws ShapeMismatch unless every tensor matches cfg.
void check_shapes(const ModelConfig& cfg, const Weights& w);

// ---------------------------------------------------------------------------
// Encoding and forward pass
// ---------------------------------------------------------------------------

struct Encoded {
  std::vector<std::int32_t> ids;  // n × max_len, right-padded with kPadId
  std::size_t n = 0;
  int max_len = 0;
};

Encoded encode_words(const std::vector<std::string>& words, int max_len);

struct BNCache {
  Tensor xhat;     // C × (N·L) normalized activations
  Tensor mean, var, inv_std;  // per channel
};

struct BlockCache {
  BNCache bn1, bn2;
  Tensor relu1, relu2;  // post-activation maps (conv inputs)
};

/// Intermediates retained by the training-mode forward pass for backward().
struct ForwardCache {
  std::size_t n = 0;
  int L = 0;
  std::vector<std::int32_t> ids;
  Tensor x0;         // embed × (N·L)
  std::vector<BlockCache> blocks;
  Tensor res_out;    // filters × (N·L), bottleneck input
  Tensor bneck_out;  // bneck_channels × (N·L)
  Tensor logits;     // n × n_rules
};

/// Inference-mode forward (running statistics). Returns n × n_rules logits.
Tensor forward_infer(const ModelConfig& cfg, const Weights& w, const Encoded& batch);

/// Training-mode forward (batch statistics). Pure: running stats are NOT
/// updated here — call update_running_stats with the cache afterwards.
Tensor forward_train(const ModelConfig& cfg, const Weights& w, const Encoded& batch,
                     ForwardCache& cache);

void update_running_stats(const ModelConfig& cfg, Weights& w, const ForwardCache& cache,
                          double momentum = 0.99);

// ---------------------------------------------------------------------------
// Loss and gradients
// ---------------------------------------------------------------------------

/// Per-probability focal term. y=1: -(1-a)(1-p)^g log p; y=0: -a p^g log(1-p).
double focal_loss(double p, int y, double alpha, double gamma);

/// alpha = p_bar / (1 - p_bar); DegenerateLabels when the grid is single-class.
double compute_alpha(const labels::TrainingSet& ts);

/// Mean over rows of the per-row sum of focal terms on sigmoid(logit).
double loss_total(const Tensor& logits, const std::vector<std::uint8_t>& labels,
                  std::size_t n, std::size_t n_rules, double alpha, double gamma);

/// Analytic gradients of loss_total for every trainable tensor.
Weights backward(const ModelConfig& cfg, const Weights& w, const ForwardCache& cache,
                 const std::vector<std::uint8_t>& labels, double alpha, double gamma);

// ---------------------------------------------------------------------------
// Optimizer and training loop
// ---------------------------------------------------------------------------

struct AdamState {
  Weights m, v;
  std::int64_t t = 0;
};

void adam_step(Weights& w, const Weights& grads, AdamState& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999);

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999;
  double gamma = 2.0;
  double alpha = -1.0;  // < 0 selects the p_bar-derived value
  std::size_t batch_size = 512;
  int max_epochs = 30;
  int patience = 3;
  std::uint64_t seed = 1;
  void validate() const;
};

struct EpochLog {
  int epoch = 0;
  double loss = 0;
  double auc = 0;
  double elapsed_s = 0;
};

struct TrainResult {
  Weights weights;  // best validation-AUC weights
  std::vector<EpochLog> log;
  double best_auc = 0;
  int best_epoch = 0;
  double alpha_used = 0;
};

/// Shuffled mini-batch epochs; after each epoch computes validation
/// micro-AUC, keeps the best weights, and stops after `patience`
/// non-improving epochs. Deterministic under cfg/seed.
TrainResult train(const ModelConfig& cfg, const labels::TrainingSet& train_set,
                  const labels::TrainingSet& val_set, const TrainConfig& tc);

void write_train_log(const std::vector<EpochLog>& log, const std::string& path);

// ---------------------------------------------------------------------------
// Inference and serialization
// ---------------------------------------------------------------------------

struct CompatMatrix {
  std::size_t rows = 0;
  std::size_t n_rules = 0;
  std::vector<double> scores;  // row-major, in [0,1]
  double at(std::size_t i, std::size_t j) const { return scores[i * n_rules + j]; }
};

/// sigmoid(forward) over the words, processed in fixed-size chunks; row order
/// follows input order regardless of chunking.
CompatMatrix infer_batch(const ModelConfig& cfg, const Weights& w,
                         const std::vector<std::string>& words);

/// Throws FingerprintMismatch unless the weights were trained against `rs`.
void verify_fingerprint(const Weights& w, const rules::RuleSet& rs);

/// Little-endian f32 weight file: magic, version, config, fingerprint,
/// tensors in declared order. Round-trip is bit-exact.
void save_weights(const ModelConfig& cfg, const Weights& w, const std::string& path);
std::pair<ModelConfig, Weights> load_weights(const std::string& path);

/// CSV of word → flattened post-bottleneck representation (the features the
/// final dense layer sees).
void export_embeddings(const ModelConfig& cfg, const Weights& w,
                       const std::vector<std::string>& words, const std::string& path);

}  // namespace adams::model
