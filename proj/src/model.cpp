#include "adams/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include <Eigen/Dense>
#include <json.hpp>

#include "adams/binio.hpp"
#include "adams/errors.hpp"
#include "adams/eval.hpp"
#include "adams/textio.hpp"

namespace adams::model {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using CMapM = Eigen::Map<const RowMat>;
using MapA = Eigen::Map<Eigen::ArrayXd>;
using CMapA = Eigen::Map<const Eigen::ArrayXd>;

constexpr double kBnEps = 1e-5;
constexpr double kAdamEps = 1e-8;
constexpr std::size_t kGemmChunk = 512;  // words per internal forward chunk

double stable_sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

double log_sigmoid(double z) {
  if (z >= 0) return -std::log1p(std::exp(-z));
  return z - std::log1p(std::exp(z));
}

struct Rng {
  std::mt19937_64 gen;
  explicit Rng(std::uint64_t seed) : gen(seed) {}
  double unit() { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(gen() % n); }
};

void fill_uniform(Tensor& t, Rng& rng, double limit) {
  for (double& v : t) v = rng.uniform(-limit, limit);
}

}  // namespace

void ModelConfig::validate() const {
  if (depth < 1) throw InvalidConfig("depth must be >= 1");
  if (filters < 1) throw InvalidConfig("filters must be >= 1");
  if (kernel < 1 || kernel % 2 == 0) throw InvalidConfig("kernel must be odd and >= 1");
  if (bottleneck < 1) throw InvalidConfig("bottleneck divisor must be >= 1");
  if (embed_dim < 1) throw InvalidConfig("embed_dim must be >= 1");
  if (max_len != static_cast<int>(rules::kMaxWordLen))
    throw InvalidConfig("max_len is fixed at " + std::to_string(rules::kMaxWordLen));
  if (vocab_size != kVocabSize)
    throw InvalidConfig("vocab_size is fixed at " + std::to_string(kVocabSize));
  if (n_rules < 1) throw InvalidConfig("n_rules must be >= 1");
}

void TrainConfig::validate() const {
  if (!(lr > 0)) throw InvalidConfig("learning rate must be positive");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
    throw InvalidConfig("Adam moment decays must lie in [0,1)");
  if (gamma < 0) throw InvalidConfig("gamma must be >= 0");
  if (alpha >= 1) throw InvalidConfig("fixed alpha must be < 1");
  if (batch_size < 1) throw InvalidConfig("batch_size must be >= 1");
  if (max_epochs < 1) throw InvalidConfig("max_epochs must be >= 1");
  if (patience < 1) throw InvalidConfig("patience must be >= 1");
}

namespace {

void size_weights(const ModelConfig& cfg, Weights& w) {
  const std::size_t f = cfg.filters, k = cfg.kernel, e = cfg.embed_dim;
  w.embedding.assign(static_cast<std::size_t>(cfg.vocab_size) * e, 0.0);
  w.conv0.w.assign(f * e * k, 0.0);
  w.conv0.b.assign(f, 0.0);
  w.blocks.resize(cfg.depth);
  for (auto& blk : w.blocks) {
    for (BatchNorm* bn : {&blk.bn1, &blk.bn2}) {
      bn->gamma.assign(f, 0.0);
      bn->beta.assign(f, 0.0);
      bn->run_mean.assign(f, 0.0);
      bn->run_var.assign(f, 0.0);
    }
    blk.conv1.w.assign(f * f * k, 0.0);
    blk.conv1.b.assign(f, 0.0);
    blk.conv2.w.assign(f * f * k, 0.0);
    blk.conv2.b.assign(f, 0.0);
  }
  const std::size_t fb = cfg.bneck_channels();
  w.bneck.w.assign(fb * f * k, 0.0);
  w.bneck.b.assign(fb, 0.0);
  w.dense_w.assign(static_cast<std::size_t>(cfg.flat_dim()) * cfg.n_rules, 0.0);
  w.dense_b.assign(cfg.n_rules, 0.0);
}

}  // namespace

Weights zeros_like(const ModelConfig& cfg) {
  cfg.validate();
  Weights w;
  size_weights(cfg, w);
  return w;
}

Weights init_weights(const ModelConfig& cfg, std::uint64_t seed) {
  Weights w = zeros_like(cfg);
  Rng rng(seed);
  fill_uniform(w.embedding, rng, 0.05);
  auto he = [&](Tensor& t, int fan_in) {
    fill_uniform(t, rng, std::sqrt(6.0 / fan_in));
  };
  he(w.conv0.w, cfg.embed_dim * cfg.kernel);
  for (auto& blk : w.blocks) {
    for (BatchNorm* bn : {&blk.bn1, &blk.bn2}) {
      std::fill(bn->gamma.begin(), bn->gamma.end(), 1.0);
      std::fill(bn->run_var.begin(), bn->run_var.end(), 1.0);
    }
    he(blk.conv1.w, cfg.filters * cfg.kernel);
    he(blk.conv2.w, cfg.filters * cfg.kernel);
  }
  he(w.bneck.w, cfg.filters * cfg.kernel);
  he(w.dense_w, cfg.flat_dim());
  return w;
}

std::vector<Tensor*> all_tensors(Weights& w) {
  std::vector<Tensor*> out;
  out.push_back(&w.embedding);
  out.push_back(&w.conv0.w);
  out.push_back(&w.conv0.b);
  for (auto& blk : w.blocks) {
    out.push_back(&blk.bn1.gamma);
    out.push_back(&blk.bn1.beta);
    out.push_back(&blk.bn1.run_mean);
    out.push_back(&blk.bn1.run_var);
    out.push_back(&blk.conv1.w);
    out.push_back(&blk.conv1.b);
    out.push_back(&blk.bn2.gamma);
    out.push_back(&blk.bn2.beta);
    out.push_back(&blk.bn2.run_mean);
    out.push_back(&blk.bn2.run_var);
    out.push_back(&blk.conv2.w);
    out.push_back(&blk.conv2.b);
  }
  out.push_back(&w.bneck.w);
  out.push_back(&w.bneck.b);
  out.push_back(&w.dense_w);
  out.push_back(&w.dense_b);
  return out;
}

std::vector<const Tensor*> all_tensors(const Weights& w) {
  auto mut = all_tensors(const_cast<Weights&>(w));
  return {mut.begin(), mut.end()};
}

std::vector<Tensor*> trainable_tensors(Weights& w) {
  std::vector<Tensor*> out;
  out.push_back(&w.embedding);
  out.push_back(&w.conv0.w);
  out.push_back(&w.conv0.b);
  for (auto& blk : w.blocks) {
    out.push_back(&blk.bn1.gamma);
    out.push_back(&blk.bn1.beta);
    out.push_back(&blk.conv1.w);
    out.push_back(&blk.conv1.b);
    out.push_back(&blk.bn2.gamma);
    out.push_back(&blk.bn2.beta);
    out.push_back(&blk.conv2.w);
    out.push_back(&blk.conv2.b);
  }
  out.push_back(&w.bneck.w);
  out.push_back(&w.bneck.b);
  out.push_back(&w.dense_w);
  out.push_back(&w.dense_b);
  return out;
}

std::vector<const Tensor*> trainable_tensors(const Weights& w) {
  auto mut = trainable_tensors(const_cast<Weights&>(w));
  return {mut.begin(), mut.end()};
}

void check_shapes(const ModelConfig& cfg, const Weights& w) {
  Weights ref = zeros_like(cfg);
  auto a = all_tensors(ref);
  auto b = all_tensors(w);
  if (a.size() != b.size()) throw ShapeMismatch("weight tensor count mismatch");
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i]->size() != b[i]->size())
      throw ShapeMismatch("weight tensor " + std::to_string(i) + " has size " +
                          std::to_string(b[i]->size()) + ", expected " +
                          std::to_string(a[i]->size()));
}

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

Encoded encode_words(const std::vector<std::string>& words, int max_len) {
  Encoded enc;
  enc.n = words.size();
  enc.max_len = max_len;
  enc.ids.assign(enc.n * static_cast<std::size_t>(max_len), kPadId);
  for (std::size_t i = 0; i < words.size(); ++i) {
    const std::string& w = words[i];
    if (w.size() > static_cast<std::size_t>(max_len))
      throw LengthMismatch("word of length " + std::to_string(w.size()) +
                           " exceeds max_len " + std::to_string(max_len));
    for (std::size_t j = 0; j < w.size(); ++j) {
      unsigned char c = static_cast<unsigned char>(w[j]);
      if (c < 0x20 || c > 0x7e)
        throw UnencodableCharacter("byte 0x" + std::to_string(c) + " in word " +
                                   std::to_string(i));
      enc.ids[i * max_len + j] = static_cast<std::int32_t>(c - 0x20 + 1);
    }
  }
  return enc;
}

// ---------------------------------------------------------------------------
// Layer primitives
// ---------------------------------------------------------------------------

namespace {

// Feature maps are laid out channel-major: X[c * NL + s * L + l], so each
// channel is one contiguous row and per-word stripes never bleed into each
// other when a kernel hangs over a word edge (zero padding).
void im2col(const double* x, int cin, int k, std::size_t n, int L, Tensor& col) {
  const std::size_t NL = n * static_cast<std::size_t>(L);
  col.assign(static_cast<std::size_t>(cin) * k * NL, 0.0);
  const int pad = k / 2;
  for (int ci = 0; ci < cin; ++ci) {
    for (int dk = 0; dk < k; ++dk) {
      const int src = dk - pad;
      const int lo = std::max(0, -src);
      const int hi = std::min(L, L - src);
      if (hi <= lo) continue;
      double* dst_row = col.data() + (static_cast<std::size_t>(ci) * k + dk) * NL;
      const double* src_row = x + static_cast<std::size_t>(ci) * NL;
      for (std::size_t s = 0; s < n; ++s)
        std::memcpy(dst_row + s * L + lo, src_row + s * L + lo + src,
                    static_cast<std::size_t>(hi - lo) * sizeof(double));
    }
  }
}

void col2im_add(const Tensor& dcol, int cin, int k, std::size_t n, int L, Tensor& dx) {
  const std::size_t NL = n * static_cast<std::size_t>(L);
  dx.assign(static_cast<std::size_t>(cin) * NL, 0.0);
  const int pad = k / 2;
  for (int ci = 0; ci < cin; ++ci) {
    for (int dk = 0; dk < k; ++dk) {
      const int src = dk - pad;
      const int lo = std::max(0, -src);
      const int hi = std::min(L, L - src);
      if (hi <= lo) continue;
      const double* srow = dcol.data() + (static_cast<std::size_t>(ci) * k + dk) * NL;
      double* drow = dx.data() + static_cast<std::size_t>(ci) * NL;
      for (std::size_t s = 0; s < n; ++s)
        for (int l = lo; l < hi; ++l) drow[s * L + l + src] += srow[s * L + l];
    }
  }
}

void conv_forward(const Tensor& x, int cin, int cout, int k, std::size_t n, int L,
                  const Conv& c, Tensor& out, Tensor& colbuf) {
  const std::size_t NL = n * static_cast<std::size_t>(L);
  im2col(x.data(), cin, k, n, L, colbuf);
  out.resize(static_cast<std::size_t>(cout) * NL);
  MapM outm(out.data(), cout, static_cast<Eigen::Index>(NL));
  CMapM wm(c.w.data(), cout, static_cast<Eigen::Index>(static_cast<std::size_t>(cin) * k));
  CMapM colm(colbuf.data(), static_cast<Eigen::Index>(static_cast<std::size_t>(cin) * k),
             static_cast<Eigen::Index>(NL));
  outm.noalias() = wm * colm;
  for (int co = 0; co < cout; ++co)
    MapA(out.data() + static_cast<std::size_t>(co) * NL, static_cast<Eigen::Index>(NL)) +=
        c.b[co];
}

void conv_backward(const Tensor& dout, const Tensor& x_in, int cin, int cout, int k,
                   std::size_t n, int L, const Conv& c, Conv& dc, Tensor& dx,
                   Tensor& colbuf, Tensor& dcolbuf) {
  const std::size_t NL = n * static_cast<std::size_t>(L);
  const std::size_t ck = static_cast<std::size_t>(cin) * k;
  im2col(x_in.data(), cin, k, n, L, colbuf);
  CMapM doutm(dout.data(), cout, static_cast<Eigen::Index>(NL));
  CMapM colm(colbuf.data(), static_cast<Eigen::Index>(ck), static_cast<Eigen::Index>(NL));
  MapM dwm(dc.w.data(), cout, static_cast<Eigen::Index>(ck));
  dwm.noalias() += doutm * colm.transpose();
  for (int co = 0; co < cout; ++co)
    dc.b[co] += CMapA(dout.data() + static_cast<std::size_t>(co) * NL,
                      static_cast<Eigen::Index>(NL))
                    .sum();
  dcolbuf.resize(ck * NL);
  MapM dcolm(dcolbuf.data(), static_cast<Eigen::Index>(ck), static_cast<Eigen::Index>(NL));
  CMapM wm(c.w.data(), cout, static_cast<Eigen::Index>(ck));
  dcolm.noalias() = wm.transpose() * doutm;
  col2im_add(dcolbuf, cin, k, n, L, dx);
}

void bn_forward_train(const Tensor& x, int C, std::size_t NL, const BatchNorm& bn,
                      Tensor& y, BNCache& cache) {
  y.resize(x.size());
  cache.xhat.resize(x.size());
  cache.mean.resize(C);
  cache.var.resize(C);
  cache.inv_std.resize(C);
  const auto n = static_cast<Eigen::Index>(NL);
  for (int c = 0; c < C; ++c) {
    CMapA xr(x.data() + static_cast<std::size_t>(c) * NL, n);
    const double m = xr.mean();
    const double v = (xr - m).square().mean();
    const double inv = 1.0 / std::sqrt(v + kBnEps);
    cache.mean[c] = m;
    cache.var[c] = v;
    cache.inv_std[c] = inv;
    MapA xh(cache.xhat.data() + static_cast<std::size_t>(c) * NL, n);
    xh = (xr - m) * inv;
    MapA yr(y.data() + static_cast<std::size_t>(c) * NL, n);
    yr = bn.gamma[c] * xh + bn.beta[c];
  }
}

void bn_forward_infer(const Tensor& x, int C, std::size_t NL, const BatchNorm& bn, Tensor& y) {
  y.resize(x.size());
  const auto n = static_cast<Eigen::Index>(NL);
  for (int c = 0; c < C; ++c) {
    const double scale = bn.gamma[c] / std::sqrt(bn.run_var[c] + kBnEps);
    const double shift = bn.beta[c] - bn.run_mean[c] * scale;
    CMapA xr(x.data() + static_cast<std::size_t>(c) * NL, n);
    MapA yr(y.data() + static_cast<std::size_t>(c) * NL, n);
    yr = xr * scale + shift;
  }
}

void bn_backward(const Tensor& dy, const BNCache& cache, const BatchNorm& bn, int C,
                 std::size_t NL, Tensor& dgamma, Tensor& dbeta, Tensor& dx) {
  dx.resize(dy.size());
  const auto n = static_cast<Eigen::Index>(NL);
  const double M = static_cast<double>(NL);
  for (int c = 0; c < C; ++c) {
    CMapA dyr(dy.data() + static_cast<std::size_t>(c) * NL, n);
    CMapA xh(cache.xhat.data() + static_cast<std::size_t>(c) * NL, n);
    const double sum_dy = dyr.sum();
    const double sum_dyxh = (dyr * xh).sum();
    dbeta[c] += sum_dy;
    dgamma[c] += sum_dyxh;
    MapA dxr(dx.data() + static_cast<std::size_t>(c) * NL, n);
    dxr = (bn.gamma[c] * cache.inv_std[c]) * (dyr - sum_dy / M - xh * (sum_dyxh / M));
  }
}

void relu_inplace(Tensor& x) {
  for (double& v : x) v = v > 0 ? v : 0.0;
}

void relu_backward_inplace(Tensor& d, const Tensor& post) {
  for (std::size_t i = 0; i < d.size(); ++i)
    if (post[i] <= 0) d[i] = 0.0;
}

void embed_forward(const ModelConfig& cfg, const Weights& w, const Encoded& enc, Tensor& x0) {
  const std::size_t NL = enc.n * static_cast<std::size_t>(cfg.max_len);
  const int E = cfg.embed_dim;
  x0.resize(static_cast<std::size_t>(E) * NL);
  for (std::size_t nl = 0; nl < NL; ++nl) {
    const double* row = w.embedding.data() + static_cast<std::size_t>(enc.ids[nl]) * E;
    for (int c = 0; c < E; ++c) x0[static_cast<std::size_t>(c) * NL + nl] = row[c];
  }
}

void flatten_features(const Tensor& x, int C, std::size_t n, int L, Tensor& flat) {
  const std::size_t NL = n * static_cast<std::size_t>(L);
  const std::size_t F = static_cast<std::size_t>(C) * L;
  flat.resize(n * F);
  for (int c = 0; c < C; ++c)
    for (std::size_t s = 0; s < n; ++s)
      std::memcpy(flat.data() + s * F + static_cast<std::size_t>(c) * L,
                  x.data() + static_cast<std::size_t>(c) * NL + s * L,
                  static_cast<std::size_t>(L) * sizeof(double));
}

void unflatten_features(const Tensor& flat, int C, std::size_t n, int L, Tensor& x) {
  const std::size_t NL = n * static_cast<std::size_t>(L);
  const std::size_t F = static_cast<std::size_t>(C) * L;
  x.resize(static_cast<std::size_t>(C) * NL);
  for (int c = 0; c < C; ++c)
    for (std::size_t s = 0; s < n; ++s)
      std::memcpy(x.data() + static_cast<std::size_t>(c) * NL + s * L,
                  flat.data() + s * F + static_cast<std::size_t>(c) * L,
                  static_cast<std::size_t>(L) * sizeof(double));
}

Tensor forward_impl(const ModelConfig& cfg, const Weights& w, const Encoded& enc,
                    bool train_mode, ForwardCache* cache, Tensor* features_out) {
  cfg.validate();
  check_shapes(cfg, w);
  if (enc.max_len != cfg.max_len) throw ShapeMismatch("encoded max_len differs from config");
  if (enc.ids.size() != enc.n * static_cast<std::size_t>(cfg.max_len))
    throw ShapeMismatch("encoded id grid has inconsistent size");
  if (enc.n == 0) throw ShapeMismatch("empty batch");

  const int L = cfg.max_len, f = cfg.filters, k = cfg.kernel, fb = cfg.bneck_channels();
  const std::size_t n = enc.n, NL = n * static_cast<std::size_t>(L);
  Tensor colbuf;

  Tensor x0;
  embed_forward(cfg, w, enc, x0);

  Tensor cur;
  conv_forward(x0, cfg.embed_dim, f, k, n, L, w.conv0, cur, colbuf);

  if (cache) {
    cache->n = n;
    cache->L = L;
    cache->ids = enc.ids;
    cache->x0 = std::move(x0);
    cache->blocks.assign(cfg.depth, {});
  }

  Tensor t1, c1, t2, c2;
  for (int bi = 0; bi < cfg.depth; ++bi) {
    const Block& blk = w.blocks[bi];
    BlockCache* bc = cache ? &cache->blocks[bi] : nullptr;
    BNCache scratch_bn;
    if (train_mode)
      bn_forward_train(cur, f, NL, blk.bn1, t1, bc ? bc->bn1 : scratch_bn);
    else
      bn_forward_infer(cur, f, NL, blk.bn1, t1);
    relu_inplace(t1);
    conv_forward(t1, f, f, k, n, L, blk.conv1, c1, colbuf);
    if (bc) bc->relu1 = std::move(t1);
    if (train_mode)
      bn_forward_train(c1, f, NL, blk.bn2, t2, bc ? bc->bn2 : scratch_bn);
    else
      bn_forward_infer(c1, f, NL, blk.bn2, t2);
    relu_inplace(t2);
    conv_forward(t2, f, f, k, n, L, blk.conv2, c2, colbuf);
    if (bc) bc->relu2 = std::move(t2);
    MapA(cur.data(), static_cast<Eigen::Index>(cur.size())) +=
        0.3 * CMapA(c2.data(), static_cast<Eigen::Index>(c2.size()));
  }

  Tensor bo;
  conv_forward(cur, f, fb, k, n, L, w.bneck, bo, colbuf);
  if (cache) cache->res_out = std::move(cur);

  Tensor flat;
  flatten_features(bo, fb, n, L, flat);
  if (cache) cache->bneck_out = std::move(bo);
  if (features_out) *features_out = flat;

  const int R = cfg.n_rules;
  Tensor logits(n * static_cast<std::size_t>(R));
  {
    CMapM flatm(flat.data(), static_cast<Eigen::Index>(n), cfg.flat_dim());
    CMapM wd(w.dense_w.data(), cfg.flat_dim(), R);
    MapM lm(logits.data(), static_cast<Eigen::Index>(n), R);
    lm.noalias() = flatm * wd;
    lm.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(w.dense_b.data(), R);
  }
  if (cache) cache->logits = logits;
  return logits;
}

}  // namespace

Tensor forward_infer(const ModelConfig& cfg, const Weights& w, const Encoded& batch) {
  return forward_impl(cfg, w, batch, false, nullptr, nullptr);
}

Tensor forward_train(const ModelConfig& cfg, const Weights& w, const Encoded& batch,
                     ForwardCache& cache) {
  return forward_impl(cfg, w, batch, true, &cache, nullptr);
}

void update_running_stats(const ModelConfig& cfg, Weights& w, const ForwardCache& cache,
                          double momentum) {
  for (int bi = 0; bi < cfg.depth; ++bi) {
    Block& blk = w.blocks[bi];
    const BlockCache& bc = cache.blocks[bi];
    for (auto [bn, st] : {std::pair{&blk.bn1, &bc.bn1}, std::pair{&blk.bn2, &bc.bn2}}) {
      for (int c = 0; c < cfg.filters; ++c) {
        bn->run_mean[c] = momentum * bn->run_mean[c] + (1.0 - momentum) * st->mean[c];
        bn->run_var[c] = momentum * bn->run_var[c] + (1.0 - momentum) * st->var[c];
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

double focal_loss(double p, int y, double alpha, double gamma) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("focal_loss needs p strictly inside (0,1)");
  if (y != 0 && y != 1) throw DomainError("label must be 0 or 1");
  if (y == 1) return -(1.0 - alpha) * std::pow(1.0 - p, gamma) * std::log(p);
  return -alpha * std::pow(p, gamma) * std::log(1.0 - p);
}

double compute_alpha(const labels::TrainingSet& ts) {
  if (ts.labels.empty()) throw DegenerateLabels("empty label grid");
  const double p_bar = ts.p_bar();
  if (p_bar <= 0.0 || p_bar >= 1.0)
    throw DegenerateLabels("positive-label ratio " + textio::g9(p_bar) +
                           " leaves nothing to learn");
  return p_bar / (1.0 - p_bar);
}

double loss_total(const Tensor& logits, const std::vector<std::uint8_t>& labels,
                  std::size_t n, std::size_t n_rules, double alpha, double gamma) {
  if (logits.size() != n * n_rules || labels.size() != n * n_rules)
    throw ShapeMismatch("logits/labels grid does not match batch x n_rules");
  if (n == 0) throw ShapeMismatch("empty batch");
  double total = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits[i];
    const double sp = stable_sigmoid(z), sn = stable_sigmoid(-z);
    const double lp = log_sigmoid(z), ln = log_sigmoid(-z);
    if (labels[i])
      total += -(1.0 - alpha) * std::pow(sn, gamma) * lp;
    else
      total += -alpha * std::pow(sp, gamma) * ln;
  }
  return total / static_cast<double>(n);
}

Weights backward(const ModelConfig& cfg, const Weights& w, const ForwardCache& cache,
                 const std::vector<std::uint8_t>& labels, double alpha, double gamma) {
  const std::size_t n = cache.n;
  const int L = cache.L, f = cfg.filters, k = cfg.kernel, fb = cfg.bneck_channels();
  const int R = cfg.n_rules;
  const std::size_t NL = n * static_cast<std::size_t>(L);
  if (labels.size() != n * static_cast<std::size_t>(R))
    throw ShapeMismatch("label grid does not match cached batch");

  Weights g = zeros_like(cfg);
  Tensor colbuf, dcolbuf;

  // d(loss)/d(logit): focal gradient divided by batch size (mean over rows).
  Tensor dlogits(n * static_cast<std::size_t>(R));
  for (std::size_t i = 0; i < dlogits.size(); ++i) {
    const double z = cache.logits[i];
    const double sp = stable_sigmoid(z), sn = stable_sigmoid(-z);
    const double lp = log_sigmoid(z), ln = log_sigmoid(-z);
    double d;
    if (labels[i])
      d = (1.0 - alpha) * std::pow(sn, gamma) * (gamma * sp * lp - sn);
    else
      d = alpha * std::pow(sp, gamma) * (sp - gamma * sn * ln);
    dlogits[i] = d / static_cast<double>(n);
  }

  // Dense layer.
  Tensor flat;
  flatten_features(cache.bneck_out, fb, n, L, flat);
  Tensor dflat(flat.size());
  {
    CMapM flatm(flat.data(), static_cast<Eigen::Index>(n), cfg.flat_dim());
    CMapM dlm(dlogits.data(), static_cast<Eigen::Index>(n), R);
    MapM dwd(g.dense_w.data(), cfg.flat_dim(), R);
    dwd.noalias() = flatm.transpose() * dlm;
    Eigen::Map<Eigen::RowVectorXd>(g.dense_b.data(), R) = dlm.colwise().sum();
    CMapM wd(w.dense_w.data(), cfg.flat_dim(), R);
    MapM dflatm(dflat.data(), static_cast<Eigen::Index>(n), cfg.flat_dim());
    dflatm.noalias() = dlm * wd.transpose();
  }
  Tensor dcur;
  unflatten_features(dflat, fb, n, L, dcur);

  // Bottleneck convolution.
  Tensor d_res;
  conv_backward(dcur, cache.res_out, f, fb, k, n, L, w.bneck, g.bneck, d_res, colbuf,
                dcolbuf);

  // Residual blocks, last to first. d_res holds the gradient wrt the block
  // output; after each block it holds the gradient wrt the block input.
  Tensor dc2, dr2, dc1, dr1, dbranch;
  for (int bi = cfg.depth - 1; bi >= 0; --bi) {
    const Block& blk = w.blocks[bi];
    Block& gblk = g.blocks[bi];
    const BlockCache& bc = cache.blocks[bi];

    dc2.resize(d_res.size());
    MapA(dc2.data(), static_cast<Eigen::Index>(dc2.size())) =
        0.3 * CMapA(d_res.data(), static_cast<Eigen::Index>(d_res.size()));
    conv_backward(dc2, bc.relu2, f, f, k, n, L, blk.conv2, gblk.conv2, dr2, colbuf, dcolbuf);
    relu_backward_inplace(dr2, bc.relu2);
    bn_backward(dr2, bc.bn2, blk.bn2, f, NL, gblk.bn2.gamma, gblk.bn2.beta, dc1);
    conv_backward(dc1, bc.relu1, f, f, k, n, L, blk.conv1, gblk.conv1, dr1, colbuf, dcolbuf);
    relu_backward_inplace(dr1, bc.relu1);
    bn_backward(dr1, bc.bn1, blk.bn1, f, NL, gblk.bn1.gamma, gblk.bn1.beta, dbranch);
    MapA(d_res.data(), static_cast<Eigen::Index>(d_res.size())) +=
        CMapA(dbranch.data(), static_cast<Eigen::Index>(dbranch.size()));
  }

  // Initial convolution and embedding.
  Tensor dx0;
  conv_backward(d_res, cache.x0, cfg.embed_dim, f, k, n, L, w.conv0, g.conv0, dx0, colbuf,
                dcolbuf);
  const int E = cfg.embed_dim;
  for (std::size_t nl = 0; nl < NL; ++nl) {
    double* row = g.embedding.data() + static_cast<std::size_t>(cache.ids[nl]) * E;
    for (int c = 0; c < E; ++c) row[c] += dx0[static_cast<std::size_t>(c) * NL + nl];
  }
  return g;
}

// ---------------------------------------------------------------------------
// Optimizer and training loop
// ---------------------------------------------------------------------------

void adam_step(Weights& w, const Weights& grads, AdamState& state, double lr, double beta1,
               double beta2) {
  ++state.t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  auto ws = trainable_tensors(w);
  auto gs = trainable_tensors(grads);
  auto ms = trainable_tensors(state.m);
  auto vs = trainable_tensors(state.v);
  for (std::size_t ti = 0; ti < ws.size(); ++ti) {
    Tensor& wv = *ws[ti];
    const Tensor& gv = *gs[ti];
    Tensor& mv = *ms[ti];
    Tensor& vv = *vs[ti];
    if (wv.size() != gv.size()) throw ShapeMismatch("gradient shape differs from weights");
    for (std::size_t i = 0; i < wv.size(); ++i) {
      mv[i] = beta1 * mv[i] + (1.0 - beta1) * gv[i];
      vv[i] = beta2 * vv[i] + (1.0 - beta2) * gv[i] * gv[i];
      const double mhat = mv[i] / bc1;
      const double vhat = vv[i] / bc2;
      wv[i] -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
    }
  }
}

namespace {

std::vector<double> infer_scores_encoded(const ModelConfig& cfg, const Weights& w,
                                         const Encoded& all) {
  std::vector<double> scores(all.n * static_cast<std::size_t>(cfg.n_rules));
  const std::size_t L = cfg.max_len;
  for (std::size_t start = 0; start < all.n; start += kGemmChunk) {
    const std::size_t count = std::min(kGemmChunk, all.n - start);
    Encoded chunk;
    chunk.n = count;
    chunk.max_len = cfg.max_len;
    chunk.ids.assign(all.ids.begin() + start * L, all.ids.begin() + (start + count) * L);
    Tensor logits = forward_infer(cfg, w, chunk);
    for (std::size_t i = 0; i < logits.size(); ++i)
      scores[start * cfg.n_rules + i] = stable_sigmoid(logits[i]);
  }
  return scores;
}

}  // namespace

TrainResult train(const ModelConfig& cfg, const labels::TrainingSet& train_set,
                  const labels::TrainingSet& val_set, const TrainConfig& tc) {
  cfg.validate();
  tc.validate();
  if (train_set.rows() == 0 || val_set.rows() == 0)
    throw TooSmall("both training and validation splits must be non-empty");
  if (train_set.n_rules != static_cast<std::size_t>(cfg.n_rules) ||
      val_set.n_rules != static_cast<std::size_t>(cfg.n_rules))
    throw ShapeMismatch("label grid width does not match the model's n_rules");

  const double p_bar = train_set.p_bar();
  if (p_bar <= 0.0 || p_bar >= 1.0)
    throw DegenerateLabels("training labels are single-class (p_bar " + textio::g9(p_bar) +
                           ")");
  const double alpha = tc.alpha < 0 ? compute_alpha(train_set) : tc.alpha;

  const Encoded train_enc = encode_words(train_set.words, cfg.max_len);
  const Encoded val_enc = encode_words(val_set.words, cfg.max_len);
  const std::size_t L = cfg.max_len, R = cfg.n_rules, N = train_set.rows();

  Weights w = init_weights(cfg, tc.seed);
  AdamState state{zeros_like(cfg), zeros_like(cfg), 0};
  Rng rng(tc.seed ^ 0x9e3779b97f4a7c15ull);

  std::vector<std::size_t> order(N);
  for (std::size_t i = 0; i < N; ++i) order[i] = i;

  TrainResult result;
  result.alpha_used = alpha;
  result.best_auc = -1.0;
  Weights best = w;

  int stale = 0;
  const auto t_start = std::chrono::steady_clock::now();
  for (int epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    for (std::size_t i = N - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);

    double epoch_loss = 0;
    for (std::size_t start = 0; start < N; start += tc.batch_size) {
      const std::size_t count = std::min(tc.batch_size, N - start);
      Encoded batch;
      batch.n = count;
      batch.max_len = cfg.max_len;
      batch.ids.resize(count * L);
      std::vector<std::uint8_t> batch_labels(count * R);
      for (std::size_t bi = 0; bi < count; ++bi) {
        const std::size_t row = order[start + bi];
        std::copy_n(train_enc.ids.begin() + row * L, L, batch.ids.begin() + bi * L);
        std::copy_n(train_set.labels.begin() + row * R, R, batch_labels.begin() + bi * R);
      }
      ForwardCache cache;
      Tensor logits = forward_train(cfg, w, batch, cache);
      epoch_loss +=
          loss_total(logits, batch_labels, count, R, alpha, tc.gamma) * static_cast<double>(count);
      Weights grads = backward(cfg, w, cache, batch_labels, alpha, tc.gamma);
      adam_step(w, grads, state, tc.lr, tc.beta1, tc.beta2);
      update_running_stats(cfg, w, cache);
    }
    epoch_loss /= static_cast<double>(N);

    std::vector<double> val_scores = infer_scores_encoded(cfg, w, val_enc);
    const double val_auc = eval::auc(val_scores, val_set.labels);
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    result.log.push_back({epoch, epoch_loss, val_auc, elapsed});

    if (val_auc > result.best_auc) {
      result.best_auc = val_auc;
      result.best_epoch = epoch;
      best = w;
      stale = 0;
    } else if (++stale >= tc.patience) {
      break;
    }
  }
  result.weights = std::move(best);
  return result;
}

void write_train_log(const std::vector<EpochLog>& log, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  for (const auto& e : log) {
    nlohmann::json j{
        {"epoch", e.epoch}, {"loss", e.loss}, {"auc", e.auc}, {"elapsed_s", e.elapsed_s}};
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("failed writing '" + path + "'");
}

// ---------------------------------------------------------------------------
// Inference and serialization
// ---------------------------------------------------------------------------

CompatMatrix infer_batch(const ModelConfig& cfg, const Weights& w,
                         const std::vector<std::string>& words) {
  CompatMatrix cm;
  cm.rows = words.size();
  cm.n_rules = cfg.n_rules;
  if (words.empty()) return cm;
  Encoded enc = encode_words(words, cfg.max_len);
  cm.scores = infer_scores_encoded(cfg, w, enc);
  return cm;
}

void verify_fingerprint(const Weights& w, const rules::RuleSet& rs) {
  const std::uint64_t expected = rs.fingerprint();
  if (w.ruleset_fingerprint != expected)
    throw FingerprintMismatch("weights were trained against a different rule set");
}

namespace {
constexpr char kWeightMagic[4] = {'A', 'D', 'M', 'W'};
constexpr std::uint32_t kWeightVersion = 1;
}  // namespace

void save_weights(const ModelConfig& cfg, const Weights& w, const std::string& path) {
  cfg.validate();
  check_shapes(cfg, w);
  binio::Writer out(path);
  out.bytes(kWeightMagic, 4);
  out.u32(kWeightVersion);
  for (int v : {cfg.depth, cfg.filters, cfg.kernel, cfg.bottleneck, cfg.embed_dim,
                cfg.max_len, cfg.vocab_size, cfg.n_rules})
    out.u32(static_cast<std::uint32_t>(v));
  out.u64(w.ruleset_fingerprint);
  for (const Tensor* t : all_tensors(w))
    for (double v : *t) out.f32(static_cast<float>(v));
  out.close();
}

std::pair<ModelConfig, Weights> load_weights(const std::string& path) {
  binio::Reader in(path);
  char magic[4];
  in.bytes(magic, 4);
  if (std::memcmp(magic, kWeightMagic, 4) != 0)
    throw CorruptFile("'" + path + "' is not a weight file");
  if (std::uint32_t v = in.u32(); v != kWeightVersion)
    throw VersionMismatch("weight file version " + std::to_string(v) + ", expected " +
                          std::to_string(kWeightVersion));
  ModelConfig cfg;
  cfg.depth = static_cast<int>(in.u32());
  cfg.filters = static_cast<int>(in.u32());
  cfg.kernel = static_cast<int>(in.u32());
  cfg.bottleneck = static_cast<int>(in.u32());
  cfg.embed_dim = static_cast<int>(in.u32());
  cfg.max_len = static_cast<int>(in.u32());
  cfg.vocab_size = static_cast<int>(in.u32());
  cfg.n_rules = static_cast<int>(in.u32());
  try {
    cfg.validate();
  } catch (const InvalidConfig& e) {
    throw CorruptFile("'" + path + "' carries an invalid model config: " + e.what());
  }
  Weights w = zeros_like(cfg);
  w.ruleset_fingerprint = in.u64();
  for (Tensor* t : all_tensors(w))
    for (double& v : *t) {
      v = in.f32();
      if (!std::isfinite(v)) throw CorruptFile("'" + path + "' contains non-finite weights");
    }
  if (!in.at_end()) throw CorruptFile("'" + path + "' has trailing bytes");
  return {cfg, std::move(w)};
}

void export_embeddings(const ModelConfig& cfg, const Weights& w,
                       const std::vector<std::string>& words, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  const int F = cfg.flat_dim();
  out << "word";
  for (int c = 0; c < F; ++c) out << ",e" << c;
  out << '\n';
  const std::size_t L = cfg.max_len;
  Encoded all = encode_words(words, cfg.max_len);
  for (std::size_t start = 0; start < words.size(); start += kGemmChunk) {
    const std::size_t count = std::min(kGemmChunk, words.size() - start);
    Encoded chunk;
    chunk.n = count;
    chunk.max_len = cfg.max_len;
    chunk.ids.assign(all.ids.begin() + start * L, all.ids.begin() + (start + count) * L);
    Tensor features;
    forward_impl(cfg, w, chunk, false, nullptr, &features);
    for (std::size_t i = 0; i < count; ++i) {
      out << words[start + i];
      for (int c = 0; c < F; ++c)
        out << ',' << textio::g9(features[i * static_cast<std::size_t>(F) + c]);
      out << '\n';
    }
  }
  if (!out) throw IoError("failed writing '" + path + "'");
}

}  // namespace adams::model
