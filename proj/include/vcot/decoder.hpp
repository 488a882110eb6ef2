/* Copyright 2026 The vcot Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef VCOT_DECODER_HPP_
#define VCOT_DECODER_HPP_

// Small causal transformer over mixed token / visual-slot sequences, the
// masked next-token loss, and AdamW with warmup + cosine decay.

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "vcot/autodiff.hpp"
#include "vcot/ops.hpp"
#include "vcot/sequence.hpp"
#include "vcot/transformer.hpp"

namespace vcot {

struct DecoderConfig {
  int model_dim = 128;
  int n_layers = 4;
  int n_heads = 4;
  int mlp_hidden = 512;
  int vocab_size = 64;
  int max_seq_len = 256;
  /// Init std of the token, position and provenance tables.
  double embed_init_std = 0.02;

  void validate() const {
    if (!(embed_init_std > 0.0)) throw ConfigError("decoder: embed_init_std must be positive");
    if (model_dim < 1 || n_heads < 1 || model_dim % n_heads != 0)
      throw ConfigError("decoder: model_dim must be divisible by n_heads");
    if (n_layers < 0 || mlp_hidden < 1 || vocab_size < 1 || max_seq_len < 1)
      throw ConfigError("decoder: sizes must be positive");
  }
};

/// Rows of the provenance tables a slot adds to its embedding.
struct SlotPositions {
  std::vector<int> grid;  // per position: grid cell index or -1
  std::vector<int> crop;  // per position: crop token index or -1
};

template <typename T>
class Decoder {
 public:
  Decoder() = default;

  /// `grid_cells` sizes the provenance tables (G*G).
  Decoder(const DecoderConfig& cfg, int grid_cells, ParamStore<T>& store, Rng& rng)
      : cfg_(cfg), grid_cells_(grid_cells) {
    cfg_.validate();
    tok_emb_ = store.add("dec.tok_emb", random_normal<T>(cfg_.vocab_size, cfg_.model_dim, cfg_.embed_init_std, rng));
    pos_emb_ = store.add("dec.pos_emb", random_normal<T>(cfg_.max_seq_len, cfg_.model_dim, cfg_.embed_init_std, rng));
    grid_emb_ = store.add("dec.grid_emb", random_normal<T>(grid_cells, cfg_.model_dim, cfg_.embed_init_std, rng));
    crop_emb_ = store.add("dec.crop_emb", random_normal<T>(grid_cells, cfg_.model_dim, cfg_.embed_init_std, rng));
    for (int l = 0; l < cfg_.n_layers; ++l)
      blocks_.push_back(add_block(store, "dec.blk" + std::to_string(l), cfg_.model_dim,
                                  cfg_.mlp_hidden, cfg_.n_layers, rng));
    final_norm_ = add_norm(store, "dec.norm", cfg_.model_dim);
    head_ = add_linear(store, "dec.head", cfg_.model_dim, cfg_.vocab_size, rng);
  }

  const DecoderConfig& config() const { return cfg_; }
  int grid_cells() const { return grid_cells_; }
  ParamId tok_emb() const { return tok_emb_; }
  ParamId pos_emb() const { return pos_emb_; }
  ParamId grid_emb() const { return grid_emb_; }
  ParamId crop_emb() const { return crop_emb_; }
  const std::vector<BlockIds>& blocks() const { return blocks_; }
  const NormIds& final_norm() const { return final_norm_; }
  const LinearIds& head() const { return head_; }

  SlotPositions slot_positions(const SequenceLayout& layout, int grid_side) const {
    SlotPositions sp{std::vector<int>(layout.size(), -1), std::vector<int>(layout.size(), -1)};
    for (std::size_t k = 0; k < layout.visual_slots.size(); ++k) {
      const auto pos = static_cast<std::size_t>(layout.visual_slots[k]);
      const TokenProvenance& p = layout.slot_provenance[k];
      if (p.kind == TokenProvenance::Kind::kGrid) sp.grid[pos] = p.a * grid_side + p.b;
      else sp.crop[pos] = p.b;
    }
    return sp;
  }

  /// Logits for every position. `slots` holds one row per visual slot, in
  /// slot order. `probs`, when given, receives each layer's attention maps.
  Var forward(Graph<T>& g, const SequenceLayout& layout, Var slots, int grid_side,
              std::vector<std::vector<Mat<T>>>* probs = nullptr) const {
    const std::size_t n = layout.size();
    if (n == 0) throw InvalidInput("decoder: empty sequence");
    if (n > static_cast<std::size_t>(cfg_.max_seq_len))
      throw InvalidInput("decoder: sequence length " + std::to_string(n) + " exceeds max_seq_len");
    const auto n_slots = static_cast<Eigen::Index>(layout.visual_slots.size());
    if (g.value(slots).rows() != n_slots)
      throw InvalidInput("decoder: " + std::to_string(layout.visual_slots.size()) +
                         " visual slots but " + std::to_string(g.value(slots).rows()) +
                         " embeddings");
    if (n_slots > 0 && g.value(slots).cols() != cfg_.model_dim)
      throw InvalidInput("decoder: slot embedding width mismatch");

    std::vector<int> rows(n);
    int k = 0;
    for (std::size_t t = 0; t < n; ++t) {
      if (layout.ids[t] == kVisualSlot) {
        rows[t] = cfg_.vocab_size + k++;
      } else {
        if (layout.ids[t] < 0 || layout.ids[t] >= cfg_.vocab_size)
          throw InvalidInput("decoder: token id out of range");
        rows[t] = layout.ids[t];
      }
    }
    Var table = n_slots > 0 ? ops::vstack(g, {g.param(tok_emb_), slots}) : g.param(tok_emb_);
    Var x = ops::gather_rows(g, table, std::move(rows));
    std::vector<int> pos(n);
    for (std::size_t t = 0; t < n; ++t) pos[t] = static_cast<int>(t);
    x = ops::add_rows(g, x, g.param(pos_emb_), std::move(pos));
    if (n_slots > 0) {
      SlotPositions sp = slot_positions(layout, grid_side);
      x = ops::add_rows(g, x, g.param(grid_emb_), std::move(sp.grid));
      x = ops::add_rows(g, x, g.param(crop_emb_), std::move(sp.crop));
    }
    if (probs) probs->assign(blocks_.size(), {});
    for (std::size_t l = 0; l < blocks_.size(); ++l)
      x = block_forward(g, blocks_[l], x, cfg_.n_heads, /*causal=*/true,
                        probs ? &(*probs)[l] : nullptr);
    x = apply(g, final_norm_, x);
    return apply(g, head_, x);
  }

 private:
  DecoderConfig cfg_;
  int grid_cells_ = 0;
  ParamId tok_emb_ = -1;
  ParamId pos_emb_ = -1;
  ParamId grid_emb_ = -1;
  ParamId crop_emb_ = -1;
  std::vector<BlockIds> blocks_;
  NormIds final_norm_;
  LinearIds head_;
};

/// Mean cross-entropy over positions whose loss_mask is set; the target at
/// position t is scored from the logits at t-1.
template <typename T>
Var masked_loss(Graph<T>& g, Var logits, const SequenceLayout& layout) {
  std::vector<int> rows;
  std::vector<int> targets;
  for (std::size_t t = 1; t < layout.size(); ++t) {
    if (!layout.loss_mask[t]) continue;
    rows.push_back(static_cast<int>(t) - 1);
    targets.push_back(layout.ids[t]);
  }
  if (layout.size() > 0 && layout.loss_mask[0])
    throw InvalidInput("loss: position 0 has no preceding context");
  if (rows.empty()) throw InvalidInput("loss: empty loss mask");
  return ops::cross_entropy(g, logits, std::move(rows), std::move(targets));
}

namespace plain {

template <typename T>
Mat<T> layer_norm(const Mat<T>& x, const Mat<T>& gamma, const Mat<T>& beta, T eps = T(1e-5)) {
  Mat<T> y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T mu = x.row(r).mean();
    const auto c = (x.row(r).array() - mu).matrix();
    const T rstd = T(1) / std::sqrt(c.squaredNorm() / static_cast<T>(x.cols()) + eps);
    y.row(r) = ((c * rstd).array() * gamma.row(0).array() + beta.row(0).array()).matrix();
  }
  return y;
}

template <typename T>
Mat<T> linear(const Mat<T>& x, const Mat<T>& w, const Mat<T>& b) {
  Mat<T> y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

template <typename T>
Mat<T> gelu(const Mat<T>& x) {
  const auto X = x.array();
  return (T(0.5) * X *
          (T(1) + (ops::detail::kGeluC<T> * (X + ops::detail::kGeluA<T> * X.cube())).tanh()))
      .matrix();
}

}  // namespace plain

/// Incremental inference over a growing sequence: keys and values of
/// processed positions are kept, so appending m rows costs O(m * n).
template <typename T>
class DecoderSession {
 public:
  DecoderSession(const Decoder<T>& dec, const ParamStore<T>& params, int grid_side)
      : dec_(&dec), params_(&params), grid_side_(grid_side) {
    reset();
  }

  void reset() {
    n_ = 0;
    keys_.assign(dec_->blocks().size(), Mat<T>(0, dec_->config().model_dim));
    values_.assign(dec_->blocks().size(), Mat<T>(0, dec_->config().model_dim));
    pending_.resize(0, dec_->config().model_dim);
    last_logits_.resize(0, 0);
  }

  int length() const { return n_ + static_cast<int>(pending_.rows()); }

  void push_token(int id) {
    if (id < 0 || id >= dec_->config().vocab_size) throw InvalidInput("session: token id out of range");
    append_row(params_->value(dec_->tok_emb()).row(id));
  }

  void push_visual(const RowVec<T>& v, const TokenProvenance& p) {
    RowVec<T> row = v;
    const int cell = p.kind == TokenProvenance::Kind::kGrid ? p.a * grid_side_ + p.b : p.b;
    if (cell < 0 || cell >= dec_->grid_cells()) throw InvalidInput("session: provenance out of range");
    row += params_->value(p.kind == TokenProvenance::Kind::kGrid ? dec_->grid_emb() : dec_->crop_emb()).row(cell);
    append_row(row);
  }

  /// Logits at the last position (flushes pending rows).
  const Mat<T>& logits() {
    flush();
    return last_logits_;
  }

 private:
  void append_row(const RowVec<T>& emb) {
    const int pos = length();
    if (pos >= dec_->config().max_seq_len) throw TruncationError("session: max_seq_len reached");
    pending_.conservativeResize(pending_.rows() + 1, Eigen::NoChange);
    pending_.row(pending_.rows() - 1) = emb + params_->value(dec_->pos_emb()).row(pos);
  }

  void flush() {
    if (pending_.rows() == 0) {
      if (n_ == 0) throw InvalidInput("session: empty sequence");
      return;
    }
    const auto& P = *params_;
    const int d = dec_->config().model_dim;
    const int heads = dec_->config().n_heads;
    const int dh = d / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    const Eigen::Index m = pending_.rows();
    Mat<T> x = pending_;
    for (std::size_t l = 0; l < dec_->blocks().size(); ++l) {
      const BlockIds& b = dec_->blocks()[l];
      const Mat<T> qkv = plain::linear(plain::layer_norm(x, P.value(b.ln1.gamma), P.value(b.ln1.beta)),
                                       P.value(b.qkv.w), P.value(b.qkv.b));
      Mat<T>& K = keys_[l];
      Mat<T>& V = values_[l];
      K.conservativeResize(n_ + m, Eigen::NoChange);
      V.conservativeResize(n_ + m, Eigen::NoChange);
      K.bottomRows(m) = qkv.middleCols(d, d);
      V.bottomRows(m) = qkv.middleCols(2 * d, d);
      Mat<T> att(m, d);
      for (int h = 0; h < heads; ++h) {
        Mat<T> S = (qkv.middleCols(h * dh, dh) * K.middleCols(h * dh, dh).transpose()) * scale;
        for (Eigen::Index i = 0; i < m; ++i) {
          const Eigen::Index lim = n_ + i + 1;
          auto row = S.row(i).head(lim);
          const T mx = row.maxCoeff();
          row = (row.array() - mx).exp().matrix();
          row /= row.sum();
          if (lim < S.cols()) S.row(i).tail(S.cols() - lim).setZero();
        }
        att.middleCols(h * dh, dh).noalias() = S * V.middleCols(h * dh, dh);
      }
      x += plain::linear(att, P.value(b.out.w), P.value(b.out.b));
      const Mat<T> hid = plain::gelu(plain::linear(
          plain::layer_norm(x, P.value(b.ln2.gamma), P.value(b.ln2.beta)), P.value(b.fc1.w), P.value(b.fc1.b)));
      x += plain::linear(hid, P.value(b.fc2.w), P.value(b.fc2.b));
    }
    const Mat<T> last = x.bottomRows(1);
    last_logits_ = plain::linear(
        plain::layer_norm(last, P.value(dec_->final_norm().gamma), P.value(dec_->final_norm().beta)),
        P.value(dec_->head().w), P.value(dec_->head().b));
    n_ += static_cast<int>(m);
    pending_.resize(0, d);
  }

  const Decoder<T>* dec_;
  const ParamStore<T>* params_;
  int grid_side_;
  int n_ = 0;
  std::vector<Mat<T>> keys_;
  std::vector<Mat<T>> values_;
  Mat<T> pending_;
  Mat<T> last_logits_;
};

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double warmup_ratio = 0.03;
  long total_steps = 1;
  double grad_clip = 1.0;  // global-norm clip; <= 0 disables
};

/// Linear warmup over warmup_ratio * total_steps, then cosine decay to 0.
/// `step` is 0-based; the value returned is used for that step.
inline double scheduled_lr(const AdamWConfig& c, long step) {
  const long total = std::max<long>(c.total_steps, 1);
  const auto warmup = static_cast<long>(std::ceil(c.warmup_ratio * static_cast<double>(total)));
  if (step < warmup) return c.lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const double span = static_cast<double>(std::max<long>(total - warmup, 1));
  const double progress = std::min(1.0, static_cast<double>(step - warmup + 1) / span);
  return 0.5 * c.lr * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
struct AdamState {
  std::vector<Mat<T>> m;
  std::vector<Mat<T>> v;
  long step = 0;

  AdamState() = default;
  explicit AdamState(const ParamStore<T>& store) {
    for (std::size_t i = 0; i < store.size(); ++i) {
      const auto& p = store.value(static_cast<ParamId>(i));
      m.push_back(Mat<T>::Zero(p.rows(), p.cols()));
      v.push_back(Mat<T>::Zero(p.rows(), p.cols()));
    }
  }
};

/// One decoupled-weight-decay Adam update with bias correction. Gradients
/// are clipped to `grad_clip` global norm first. Returns the learning rate
/// used.
template <typename T>
double step_optimizer(ParamStore<T>& params, const Grads<T>& grads, AdamState<T>& state,
                      const AdamWConfig& c) {
  if (!grads.all_finite())
    throw TrainingError("non-finite gradient at step " + std::to_string(state.step), state.step);
  const double lr = scheduled_lr(c, state.step);
  T clip = T(1);
  if (c.grad_clip > 0.0) {
    const double norm = std::sqrt(static_cast<double>(grads.squared_norm()));
    if (norm > c.grad_clip) clip = static_cast<T>(c.grad_clip / norm);
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  const auto b1 = static_cast<T>(c.beta1);
  const auto b2 = static_cast<T>(c.beta2);
  const auto step_size = static_cast<T>(lr / bc1);
  const auto inv_bc2 = static_cast<T>(1.0 / bc2);
  const auto eps = static_cast<T>(c.eps);
  const auto decay = static_cast<T>(1.0 - lr * c.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params.value(static_cast<ParamId>(i));
    const auto g = (grads.g[i] * clip).array();
    auto m = state.m[i].array();
    auto v = state.v[i].array();
    m = b1 * m + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g.square();
    if (c.weight_decay != 0.0) p *= decay;
    p.array() -= step_size * m / ((v * inv_bc2).sqrt() + eps);
  }
  return lr;
}

}  // namespace vcot

#endif  // VCOT_DECODER_HPP_
