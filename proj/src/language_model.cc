// Copyright 2026 The dpsynth Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "dpsynth/language_model.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "dpsynth/rng.h"
#include "json.hpp"

namespace dpsynth {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kInitStd = 0.02;
constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluCubic = 0.044715;

using ConstMatMap = Eigen::Map<const RowMatrix>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstVecMap = Eigen::Map<const Eigen::RowVectorXd>;
using VecMap = Eigen::Map<Eigen::RowVectorXd>;

ConstMatMap cmat(const double* base, const TensorSpec& t) { return ConstMatMap(base + t.offset, t.rows, t.cols); }
MatMap mat(double* base, const TensorSpec& t) { return MatMap(base + t.offset, t.rows, t.cols); }
ConstVecMap cvec(const double* base, const TensorSpec& t) {
  return ConstVecMap(base + t.offset, static_cast<Eigen::Index>(t.size()));
}
VecMap vec(double* base, const TensorSpec& t) { return VecMap(base + t.offset, static_cast<Eigen::Index>(t.size())); }

double gelu(double u) { return 0.5 * u * (1.0 + std::tanh(kGeluScale * (u + kGeluCubic * u * u * u))); }

double gelu_grad(double u) {
  const double inner = kGeluScale * (u + kGeluCubic * u * u * u);
  const double t = std::tanh(inner);
  return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluScale * (1.0 + 3.0 * kGeluCubic * u * u);
}

void layer_norm(const RowMatrix& x, const ConstVecMap& gain, const ConstVecMap& bias, RowMatrix& xhat,
                Eigen::VectorXd& rstd, RowMatrix& y) {
  const Eigen::Index rows = x.rows();
  const Eigen::Index d = x.cols();
  xhat.resize(rows, d);
  y.resize(rows, d);
  rstd.resize(rows);
  for (Eigen::Index t = 0; t < rows; ++t) {
    const double mean = x.row(t).mean();
    const auto centered = (x.row(t).array() - mean).matrix();
    const double var = centered.squaredNorm() / static_cast<double>(d);
    const double r = 1.0 / std::sqrt(var + kLayerNormEps);
    rstd(t) = r;
    xhat.row(t) = centered * r;
    y.row(t) = xhat.row(t).cwiseProduct(gain) + bias;
  }
}

// dx is overwritten; gain/bias gradients are accumulated.
void layer_norm_backward(const RowMatrix& dy, const RowMatrix& xhat, const Eigen::VectorXd& rstd,
                         const ConstVecMap& gain, VecMap dgain, VecMap dbias, RowMatrix& dx) {
  const Eigen::Index rows = dy.rows();
  const double inv_d = 1.0 / static_cast<double>(dy.cols());
  dx.resize(rows, dy.cols());
  for (Eigen::Index t = 0; t < rows; ++t) {
    const Eigen::RowVectorXd dxhat = dy.row(t).cwiseProduct(gain);
    const double m1 = dxhat.sum() * inv_d;
    const double m2 = dxhat.dot(xhat.row(t)) * inv_d;
    dx.row(t) = rstd(t) * (dxhat.array() - m1 - xhat.row(t).array() * m2).matrix();
  }
  dgain += dy.cwiseProduct(xhat).colwise().sum();
  dbias += dy.colwise().sum();
}

struct BlockActivations {
  RowMatrix x_in, ln1_hat, a1, qkv, att, x_mid, ln2_hat, a2, u, h;
  Eigen::VectorXd ln1_rstd, ln2_rstd;
  std::vector<RowMatrix> probs;
};

struct Activations {
  std::vector<TokenId> tokens;
  Eigen::Index length = 0;
  std::vector<BlockActivations> blocks;
  RowMatrix x_final, lnf_hat, z, logits;
  Eigen::VectorXd lnf_rstd;
  // Target token for position t (predicting t + 1), or -1 when unscored.
  std::vector<int> targets;
  int scored = 0;
  double loss = 0.0;
};

size_t effective_length(std::span<const TokenId> tokens) {
  size_t n = tokens.size();
  while (n > 0 && tokens[n - 1] == Vocabulary::kPad) --n;
  return n;
}

void check_tokens(const ModelConfig& config, std::span<const TokenId> tokens) {
  if (tokens.size() > static_cast<size_t>(config.context_length)) {
    throw std::invalid_argument("sequence length " + std::to_string(tokens.size()) + " exceeds context length " +
                                std::to_string(config.context_length));
  }
  for (TokenId t : tokens) {
    if (t < 0 || t >= config.vocab_size) {
      throw std::out_of_range("token id " + std::to_string(t) + " outside vocabulary of size " +
                              std::to_string(config.vocab_size));
    }
  }
}

// Marks targets in [first_target, end_target) as scored, skipping PAD.
std::vector<int> make_targets(std::span<const TokenId> tokens, size_t first_target, size_t end_target) {
  std::vector<int> targets(tokens.size(), -1);
  first_target = std::max<size_t>(first_target, 1);
  end_target = std::min(end_target, tokens.size());
  for (size_t j = first_target; j < end_target; ++j) {
    if (tokens[j] != Vocabulary::kPad) targets[j - 1] = tokens[j];
  }
  return targets;
}

std::vector<int> loss_targets(std::span<const TokenId> tokens, const LossOptions& options) {
  const size_t first = options.include_control_code ? 1 : separator_position(tokens) + 1;
  return make_targets(tokens, first, tokens.size());
}

void run_forward(const ModelParams& params, std::span<const TokenId> tokens, std::vector<int> targets,
                 Activations& acts) {
  const ModelConfig& cfg = params.config();
  const ParameterLayout& L = params.layout();
  const double* w = params.values().data();
  const Eigen::Index T = static_cast<Eigen::Index>(tokens.size());
  const Eigen::Index d = cfg.d_model;
  const Eigen::Index hd = d / cfg.n_heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));

  acts.tokens.assign(tokens.begin(), tokens.end());
  acts.length = T;
  acts.targets = std::move(targets);
  acts.blocks.resize(static_cast<size_t>(cfg.n_layers));

  const ConstMatMap wte = cmat(w, L.tensor(L.token_embedding()));
  const ConstMatMap wpe = cmat(w, L.tensor(L.position_embedding()));
  RowMatrix x(T, d);
  for (Eigen::Index t = 0; t < T; ++t) x.row(t) = wte.row(tokens[static_cast<size_t>(t)]) + wpe.row(t);

  for (int l = 0; l < cfg.n_layers; ++l) {
    const ParameterLayout::Block& B = L.block(l);
    BlockActivations& a = acts.blocks[static_cast<size_t>(l)];
    a.x_in = x;
    layer_norm(a.x_in, cvec(w, L.tensor(B.ln1_gain)), cvec(w, L.tensor(B.ln1_bias)), a.ln1_hat, a.ln1_rstd, a.a1);
    a.qkv.noalias() = a.a1 * cmat(w, L.tensor(B.qkv_weight));
    a.qkv.rowwise() += cvec(w, L.tensor(B.qkv_bias));

    a.att.setZero(T, d);
    a.probs.resize(static_cast<size_t>(cfg.n_heads));
    for (int h = 0; h < cfg.n_heads; ++h) {
      const auto q = a.qkv.middleCols(h * hd, hd);
      const auto k = a.qkv.middleCols(d + h * hd, hd);
      const auto v = a.qkv.middleCols(2 * d + h * hd, hd);
      RowMatrix& p = a.probs[static_cast<size_t>(h)];
      p.noalias() = q * k.transpose();
      for (Eigen::Index i = 0; i < T; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j <= i; ++j) mx = std::max(mx, p(i, j) * att_scale);
        double sum = 0.0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          const double e = std::exp(p(i, j) * att_scale - mx);
          p(i, j) = e;
          sum += e;
        }
        const double inv = 1.0 / sum;
        for (Eigen::Index j = 0; j <= i; ++j) p(i, j) *= inv;
        for (Eigen::Index j = i + 1; j < T; ++j) p(i, j) = 0.0;
      }
      a.att.middleCols(h * hd, hd).noalias() = p * v;
    }
    a.x_mid = a.x_in;
    a.x_mid.noalias() += a.att * cmat(w, L.tensor(B.proj_weight));
    a.x_mid.rowwise() += cvec(w, L.tensor(B.proj_bias));

    layer_norm(a.x_mid, cvec(w, L.tensor(B.ln2_gain)), cvec(w, L.tensor(B.ln2_bias)), a.ln2_hat, a.ln2_rstd, a.a2);
    a.u.noalias() = a.a2 * cmat(w, L.tensor(B.fc_weight));
    a.u.rowwise() += cvec(w, L.tensor(B.fc_bias));
    a.h = a.u.unaryExpr([](double u) { return gelu(u); });
    x = a.x_mid;
    x.noalias() += a.h * cmat(w, L.tensor(B.out_weight));
    x.rowwise() += cvec(w, L.tensor(B.out_bias));
  }

  acts.x_final = std::move(x);
  layer_norm(acts.x_final, cvec(w, L.tensor(L.final_gain())), cvec(w, L.tensor(L.final_bias())), acts.lnf_hat,
             acts.lnf_rstd, acts.z);
  acts.logits.noalias() = acts.z * cmat(w, L.tensor(L.head_weight()));
  acts.logits.rowwise() += cvec(w, L.tensor(L.head_bias()));

  double total = 0.0;
  int scored = 0;
  for (Eigen::Index t = 0; t < T; ++t) {
    const int target = acts.targets[static_cast<size_t>(t)];
    if (target < 0) continue;
    const auto row = acts.logits.row(t);
    const double mx = row.maxCoeff();
    const double lse = mx + std::log((row.array() - mx).exp().sum());
    total += lse - row(target);
    ++scored;
  }
  acts.scored = scored;
  acts.loss = scored > 0 ? total / scored : 0.0;
}

// grad += scale * d(acts.loss)/d(params).
void run_backward(const ModelParams& params, const Activations& acts, double scale, double* g) {
  if (acts.scored == 0 || scale == 0.0) return;
  const ModelConfig& cfg = params.config();
  const ParameterLayout& L = params.layout();
  const double* w = params.values().data();
  const Eigen::Index T = acts.length;
  const Eigen::Index d = cfg.d_model;
  const Eigen::Index hd = d / cfg.n_heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));

  // d loss / d logits = (softmax - onehot) / scored on scored rows.
  RowMatrix dlogits = RowMatrix::Zero(T, acts.logits.cols());
  const double row_scale = scale / acts.scored;
  for (Eigen::Index t = 0; t < T; ++t) {
    const int target = acts.targets[static_cast<size_t>(t)];
    if (target < 0) continue;
    const auto row = acts.logits.row(t);
    const double mx = row.maxCoeff();
    dlogits.row(t) = (row.array() - mx).exp().matrix();
    dlogits.row(t) /= dlogits.row(t).sum();
    dlogits(t, target) -= 1.0;
    dlogits.row(t) *= row_scale;
  }

  mat(g, L.tensor(L.head_weight())).noalias() += acts.z.transpose() * dlogits;
  vec(g, L.tensor(L.head_bias())) += dlogits.colwise().sum();
  RowMatrix dz;
  dz.noalias() = dlogits * cmat(w, L.tensor(L.head_weight())).transpose();

  RowMatrix dx;
  layer_norm_backward(dz, acts.lnf_hat, acts.lnf_rstd, cvec(w, L.tensor(L.final_gain())),
                      vec(g, L.tensor(L.final_gain())), vec(g, L.tensor(L.final_bias())), dx);

  RowMatrix dh, du, da, dnorm, datt, dqkv, dp, ds;
  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const ParameterLayout::Block& B = L.block(l);
    const BlockActivations& a = acts.blocks[static_cast<size_t>(l)];

    // x_out = x_mid + gelu(a2 W_fc + b_fc) W_out + b_out
    mat(g, L.tensor(B.out_weight)).noalias() += a.h.transpose() * dx;
    vec(g, L.tensor(B.out_bias)) += dx.colwise().sum();
    dh.noalias() = dx * cmat(w, L.tensor(B.out_weight)).transpose();
    du = dh.cwiseProduct(a.u.unaryExpr([](double u) { return gelu_grad(u); }));
    mat(g, L.tensor(B.fc_weight)).noalias() += a.a2.transpose() * du;
    vec(g, L.tensor(B.fc_bias)) += du.colwise().sum();
    da.noalias() = du * cmat(w, L.tensor(B.fc_weight)).transpose();
    layer_norm_backward(da, a.ln2_hat, a.ln2_rstd, cvec(w, L.tensor(B.ln2_gain)), vec(g, L.tensor(B.ln2_gain)),
                        vec(g, L.tensor(B.ln2_bias)), dnorm);
    dx += dnorm;  // now d loss / d x_mid

    // x_mid = x_in + att W_proj + b_proj
    mat(g, L.tensor(B.proj_weight)).noalias() += a.att.transpose() * dx;
    vec(g, L.tensor(B.proj_bias)) += dx.colwise().sum();
    datt.noalias() = dx * cmat(w, L.tensor(B.proj_weight)).transpose();

    dqkv.setZero(T, 3 * d);
    for (int h = 0; h < cfg.n_heads; ++h) {
      const auto q = a.qkv.middleCols(h * hd, hd);
      const auto k = a.qkv.middleCols(d + h * hd, hd);
      const auto v = a.qkv.middleCols(2 * d + h * hd, hd);
      const RowMatrix& p = a.probs[static_cast<size_t>(h)];
      const auto dout = datt.middleCols(h * hd, hd);
      dp.noalias() = dout * v.transpose();
      dqkv.middleCols(2 * d + h * hd, hd).noalias() = p.transpose() * dout;
      ds.setZero(T, T);
      for (Eigen::Index i = 0; i < T; ++i) {
        double dot = 0.0;
        for (Eigen::Index j = 0; j <= i; ++j) dot += dp(i, j) * p(i, j);
        for (Eigen::Index j = 0; j <= i; ++j) ds(i, j) = p(i, j) * (dp(i, j) - dot) * att_scale;
      }
      dqkv.middleCols(h * hd, hd).noalias() = ds * k;
      dqkv.middleCols(d + h * hd, hd).noalias() = ds.transpose() * q;
    }
    mat(g, L.tensor(B.qkv_weight)).noalias() += a.a1.transpose() * dqkv;
    vec(g, L.tensor(B.qkv_bias)) += dqkv.colwise().sum();
    da.noalias() = dqkv * cmat(w, L.tensor(B.qkv_weight)).transpose();
    layer_norm_backward(da, a.ln1_hat, a.ln1_rstd, cvec(w, L.tensor(B.ln1_gain)), vec(g, L.tensor(B.ln1_gain)),
                        vec(g, L.tensor(B.ln1_bias)), dnorm);
    dx += dnorm;  // now d loss / d x_in
  }

  MatMap gwte = mat(g, L.tensor(L.token_embedding()));
  MatMap gwpe = mat(g, L.tensor(L.position_embedding()));
  for (Eigen::Index t = 0; t < T; ++t) {
    gwte.row(acts.tokens[static_cast<size_t>(t)]) += dx.row(t);
    gwpe.row(t) += dx.row(t);
  }
}

}  // namespace

// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
  if (vocab_size < Vocabulary::kNumReserved) throw std::invalid_argument("vocab_size too small");
  if (context_length < 8) throw std::invalid_argument("context_length must be at least 8");
  if (d_model < 1 || n_heads < 1 || n_layers < 0 || ff_dim < 1) throw std::invalid_argument("invalid model sizes");
  if (d_model % n_heads != 0) throw std::invalid_argument("d_model must be divisible by n_heads");
}

std::string_view to_string(TensorClass cls) {
  switch (cls) {
    case TensorClass::kEmbedding:
      return "embedding";
    case TensorClass::kAttention:
      return "attention";
    case TensorClass::kMlp:
      return "mlp";
    case TensorClass::kNorm:
      return "norm";
    case TensorClass::kOutput:
      return "output";
  }
  return "unknown";
}

ParameterLayout::ParameterLayout(const ModelConfig& c) {
  c.validate();
  const int d = c.d_model;
  token_embedding_ = add("wte", TensorClass::kEmbedding, c.vocab_size, d);
  position_embedding_ = add("wpe", TensorClass::kEmbedding, c.context_length, d);
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = "h" + std::to_string(l) + ".";
    Block b{};
    b.ln1_gain = add(p + "ln1.gain", TensorClass::kNorm, 1, d);
    b.ln1_bias = add(p + "ln1.bias", TensorClass::kNorm, 1, d);
    b.qkv_weight = add(p + "attn.qkv.weight", TensorClass::kAttention, d, 3 * d);
    b.qkv_bias = add(p + "attn.qkv.bias", TensorClass::kAttention, 1, 3 * d);
    b.proj_weight = add(p + "attn.proj.weight", TensorClass::kAttention, d, d);
    b.proj_bias = add(p + "attn.proj.bias", TensorClass::kAttention, 1, d);
    b.ln2_gain = add(p + "ln2.gain", TensorClass::kNorm, 1, d);
    b.ln2_bias = add(p + "ln2.bias", TensorClass::kNorm, 1, d);
    b.fc_weight = add(p + "mlp.fc.weight", TensorClass::kMlp, d, c.ff_dim);
    b.fc_bias = add(p + "mlp.fc.bias", TensorClass::kMlp, 1, c.ff_dim);
    b.out_weight = add(p + "mlp.out.weight", TensorClass::kMlp, c.ff_dim, d);
    b.out_bias = add(p + "mlp.out.bias", TensorClass::kMlp, 1, d);
    blocks_.push_back(b);
  }
  final_gain_ = add("lnf.gain", TensorClass::kNorm, 1, d);
  final_bias_ = add("lnf.bias", TensorClass::kNorm, 1, d);
  head_weight_ = add("head.weight", TensorClass::kOutput, d, c.vocab_size);
  head_bias_ = add("head.bias", TensorClass::kOutput, 1, c.vocab_size);
}

size_t ParameterLayout::add(std::string name, TensorClass cls, int rows, int cols) {
  tensors_.push_back({std::move(name), cls, size_, rows, cols});
  size_ += tensors_.back().size();
  return tensors_.size() - 1;
}

ModelParams::ModelParams(const ModelConfig& config) : config_(config), layout_(config), values_(layout_.size(), 0.0) {}

ModelParams ModelParams::initialize(const ModelConfig& config) {
  ModelParams p(config);
  Rng rng(config.init_seed);
  for (const TensorSpec& t : p.layout_.tensors()) {
    double* base = p.values_.data() + t.offset;
    const bool is_gain = t.name.ends_with(".gain");
    const bool is_bias = t.name.ends_with(".bias");
    if (is_gain) {
      std::fill(base, base + t.size(), 1.0);
    } else if (is_bias || t.cls == TensorClass::kOutput) {
      std::fill(base, base + t.size(), 0.0);
    } else {
      for (size_t i = 0; i < t.size(); ++i) base[i] = kInitStd * rng.normal();
    }
  }
  return p;
}

void ModelParams::unflatten(std::span<const double> flat) {
  if (flat.size() != values_.size()) throw std::invalid_argument("unflatten: size mismatch");
  std::copy(flat.begin(), flat.end(), values_.begin());
}

bool ModelParams::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------

ForwardOutput forward(const ModelParams& params, std::span<const TokenSequence> batch, const LossOptions& options) {
  ForwardOutput out;
  Activations acts;
  for (const TokenSequence& seq : batch) {
    check_tokens(params.config(), seq);
    const std::span<const TokenId> tokens(seq.data(), effective_length(seq));
    run_forward(params, tokens, loss_targets(tokens, options), acts);
    out.logits.push_back(std::move(acts.logits));
    out.sequence_losses.push_back(acts.loss);
  }
  if (!batch.empty()) {
    double total = 0.0;
    for (double l : out.sequence_losses) total += l;
    out.loss = total / static_cast<double>(batch.size());
  }
  return out;
}

double accumulate_gradient(const ModelParams& params, std::span<const TokenId> tokens, const LossOptions& options,
                           double scale, std::span<double> grad) {
  if (grad.size() != params.size()) throw std::invalid_argument("gradient buffer size mismatch");
  check_tokens(params.config(), tokens);
  tokens = tokens.first(effective_length(tokens));
  Activations acts;
  run_forward(params, tokens, loss_targets(tokens, options), acts);
  if (!std::isfinite(acts.loss)) throw std::runtime_error("non-finite loss in backward pass");
  thread_local AlignedVector scratch;
  scratch.assign(grad.size(), 0.0);
  run_backward(params, acts, scale, scratch.data());
  for (size_t i = 0; i < grad.size(); ++i) grad[i] += scratch[i];
  return acts.loss;
}

double example_gradient(const ModelParams& params, std::span<const TokenId> tokens, const LossOptions& options,
                        std::span<double> grad) {
  std::fill(grad.begin(), grad.end(), 0.0);
  return accumulate_gradient(params, tokens, options, 1.0, grad);
}

std::vector<std::vector<double>> backward_per_example(const ModelParams& params,
                                                      std::span<const TokenSequence> batch,
                                                      const LossOptions& options) {
  std::vector<std::vector<double>> out;
  out.reserve(batch.size());
  for (const TokenSequence& seq : batch) {
    std::vector<double> g(params.size());
    example_gradient(params, seq, options, g);
    out.push_back(std::move(g));
  }
  return out;
}

std::vector<double> batch_gradient(const ModelParams& params, std::span<const TokenSequence> batch,
                                   const LossOptions& options) {
  std::vector<double> g(params.size(), 0.0);
  if (batch.empty()) return g;
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const TokenSequence& seq : batch) accumulate_gradient(params, seq, options, scale, g);
  return g;
}

double span_perplexity(const ModelParams& params, std::span<const TokenId> tokens, size_t begin, size_t end) {
  check_tokens(params.config(), tokens);
  tokens = tokens.first(effective_length(tokens));
  Activations acts;
  run_forward(params, tokens, make_targets(tokens, begin, end), acts);
  if (acts.scored == 0) throw std::invalid_argument("perplexity: no scored positions");
  return std::exp(acts.loss);
}

double perplexity(const ModelParams& params, std::span<const TokenId> tokens, ScoreRegion region) {
  const size_t n = effective_length(tokens);
  if (n < 2) throw std::invalid_argument("perplexity needs at least two tokens");
  const size_t first = region == ScoreRegion::kFull ? 1 : separator_position(tokens.first(n)) + 1;
  return span_perplexity(params, tokens, first, n);
}

// ---------------------------------------------------------------------------

IncrementalDecoder::IncrementalDecoder(const ModelParams& params) : params_(&params) {
  const ModelConfig& c = params.config();
  keys_.assign(static_cast<size_t>(c.n_layers), RowMatrix(c.context_length, c.d_model));
  values_.assign(static_cast<size_t>(c.n_layers), RowMatrix(c.context_length, c.d_model));
}

void IncrementalDecoder::reset() { position_ = 0; }

std::span<const double> IncrementalDecoder::push(TokenId token) {
  const ModelConfig& cfg = params_->config();
  const ParameterLayout& L = params_->layout();
  const double* w = params_->values().data();
  if (position_ >= cfg.context_length) throw std::out_of_range("decoder context is full");
  if (token < 0 || token >= cfg.vocab_size) throw std::out_of_range("token id outside vocabulary");
  const Eigen::Index d = cfg.d_model;
  const Eigen::Index hd = d / cfg.n_heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const Eigen::Index t = position_;

  auto norm = [&](const Eigen::RowVectorXd& in, size_t gain, size_t bias, Eigen::RowVectorXd& out) {
    const double mean = in.mean();
    const Eigen::RowVectorXd centered = (in.array() - mean).matrix();
    const double r = 1.0 / std::sqrt(centered.squaredNorm() / static_cast<double>(d) + kLayerNormEps);
    out = (centered * r).cwiseProduct(cvec(w, L.tensor(gain))) + cvec(w, L.tensor(bias));
  };

  x_ = cmat(w, L.tensor(L.token_embedding())).row(token) + cmat(w, L.tensor(L.position_embedding())).row(t);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const ParameterLayout::Block& B = L.block(l);
    RowMatrix& keys = keys_[static_cast<size_t>(l)];
    RowMatrix& vals = values_[static_cast<size_t>(l)];
    norm(x_, B.ln1_gain, B.ln1_bias, a_);
    qkv_.noalias() = a_ * cmat(w, L.tensor(B.qkv_weight));
    qkv_ += cvec(w, L.tensor(B.qkv_bias));
    keys.row(t) = qkv_.segment(d, d);
    vals.row(t) = qkv_.segment(2 * d, d);
    att_.setZero(d);
    for (int h = 0; h < cfg.n_heads; ++h) {
      scores_.noalias() = qkv_.segment(h * hd, hd) * keys.block(0, h * hd, t + 1, hd).transpose();
      scores_ *= att_scale;
      const double mx = scores_.maxCoeff();
      scores_ = (scores_.array() - mx).exp().matrix();
      scores_ /= scores_.sum();
      att_.segment(h * hd, hd).noalias() = scores_ * vals.block(0, h * hd, t + 1, hd);
    }
    x_.noalias() += att_ * cmat(w, L.tensor(B.proj_weight));
    x_ += cvec(w, L.tensor(B.proj_bias));
    norm(x_, B.ln2_gain, B.ln2_bias, a_);
    hidden_.noalias() = a_ * cmat(w, L.tensor(B.fc_weight));
    hidden_ += cvec(w, L.tensor(B.fc_bias));
    hidden_ = hidden_.unaryExpr([](double u) { return gelu(u); });
    x_.noalias() += hidden_ * cmat(w, L.tensor(B.out_weight));
    x_ += cvec(w, L.tensor(B.out_bias));
  }
  norm(x_, L.final_gain(), L.final_bias(), a_);
  logits_.noalias() = a_ * cmat(w, L.tensor(L.head_weight()));
  logits_ += cvec(w, L.tensor(L.head_bias()));
  ++position_;
  return {logits_.data(), static_cast<size_t>(logits_.size())};
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr const char* kCheckpointMagic = "dpsynth-checkpoint";
constexpr int kCheckpointVersion = 1;
}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, const std::string& metadata) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  const ModelConfig& c = params.config();
  nlohmann::ordered_json cfg = {{"vocab_size", c.vocab_size}, {"context_length", c.context_length},
                                {"d_model", c.d_model},       {"n_layers", c.n_layers},
                                {"n_heads", c.n_heads},       {"ff_dim", c.ff_dim},
                                {"init_seed", c.init_seed}};
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "config " << cfg.dump() << '\n';
  out << "metadata " << metadata.size() << '\n' << metadata << '\n';
  out << "tensors " << params.layout().tensors().size() << '\n';
  char buf[64];
  const double* base = params.values().data();
  for (const TensorSpec& t : params.layout().tensors()) {
    out << "tensor " << t.name << ' ' << t.rows << ' ' << t.cols << '\n';
    for (int r = 0; r < t.rows; ++r) {
      for (int col = 0; col < t.cols; ++col) {
        std::snprintf(buf, sizeof(buf), "%a", base[t.offset + static_cast<size_t>(r) * t.cols + col]);
        if (col > 0) out << ' ';
        out << buf;
      }
      out << '\n';
    }
  }
  out << "end\n";
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path, std::string* metadata) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  auto fail = [&](const std::string& what) { throw std::runtime_error("bad checkpoint " + path.string() + ": " + what); };

  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != kCheckpointMagic) fail("missing header");
  if (version != kCheckpointVersion) fail("unsupported version " + std::to_string(version));

  std::string word;
  in >> word;
  if (word != "config") fail("expected config");
  std::string line;
  std::getline(in, line);
  const auto cfg = nlohmann::json::parse(line);
  ModelConfig c;
  c.vocab_size = cfg.at("vocab_size");
  c.context_length = cfg.at("context_length");
  c.d_model = cfg.at("d_model");
  c.n_layers = cfg.at("n_layers");
  c.n_heads = cfg.at("n_heads");
  c.ff_dim = cfg.at("ff_dim");
  c.init_seed = cfg.at("init_seed");

  size_t meta_len = 0;
  in >> word >> meta_len;
  if (word != "metadata") fail("expected metadata");
  in.get();
  std::string meta(meta_len, '\0');
  in.read(meta.data(), static_cast<std::streamsize>(meta_len));
  if (metadata != nullptr) *metadata = meta;

  ModelParams params(c);
  size_t count = 0;
  in >> word >> count;
  if (word != "tensors" || count != params.layout().tensors().size()) fail("tensor count mismatch");
  double* base = params.values().data();
  for (const TensorSpec& t : params.layout().tensors()) {
    std::string name;
    int rows = 0, cols = 0;
    in >> word >> name >> rows >> cols;
    if (word != "tensor" || name != t.name || rows != t.rows || cols != t.cols) fail("unexpected tensor " + name);
    for (size_t i = 0; i < t.size(); ++i) {
      std::string v;
      in >> v;
      char* end = nullptr;
      base[t.offset + i] = std::strtod(v.c_str(), &end);
      if (end == v.c_str() || *end != '\0') fail("bad value in " + name);
    }
  }
  in >> word;
  if (word != "end") fail("missing end marker");
  return params;
}

}  // namespace dpsynth
