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

#ifndef VCOT_MODEL_HPP_
#define VCOT_MODEL_HPP_

// End-to-end model: vision experts + projectors + decoder, the teacher-forced
// training loss for one conversation, and the inference adapter used by the
// generation loop.

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "vcot/cot_protocol.hpp"
#include "vcot/decoder.hpp"
#include "vcot/reengagement.hpp"
#include "vcot/vision_encoder.hpp"

namespace vcot {

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;

  void validate() const {
    encoder.validate();
    decoder.validate();
    if (encoder.decoder_dim != decoder.model_dim)
      throw ConfigError("model: projector output " + std::to_string(encoder.decoder_dim) +
                        " != decoder model_dim " + std::to_string(decoder.model_dim));
  }
};

template <typename T>
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng enc_rng(Rng::derive(seed, 1));
    Rng dec_rng(Rng::derive(seed, 2));
    encoder_ = VisionEncoder<T>(cfg_.encoder, params_, enc_rng);
    decoder_ = Decoder<T>(cfg_.decoder, cfg_.encoder.token_count(), params_, dec_rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  const VisionEncoder<T>& encoder() const { return encoder_; }
  const Decoder<T>& decoder() const { return decoder_; }
  int grid_side() const { return cfg_.encoder.fusion_grid; }

  struct Forward {
    SequenceLayout layout;
    Var logits;
    Var loss;
    Var image_tokens;
    Var context;  // id -1 when no context is injected
  };

  /// Builds the teacher-forced graph for one conversation: encode image,
  /// derive context from the ground-truth boxes, assemble, decode, score.
  Forward forward(Graph<T>& g, const ConversationSample& s, const ImageTensor& img,
                  const Strategy& strategy, const Vocab& vocab) const {
    strategy.validate();
    Forward f;
    const int G = grid_side();
    Var fused = encoder_.encode_fused(g, img);
    f.image_tokens = encoder_.project(g, fused, ProjectorChoice::kShared);

    std::vector<std::vector<TokenProvenance>> contexts;
    if (strategy.kind == StrategyKind::kRoiResample) {
      std::vector<std::vector<int>> sets;
      for (const BBox& b : s.gt_boxes) sets.push_back(resample_cells(G, resample_region(b, strategy)));
      std::vector<int> cells = merge_cell_sets(sets);
      std::vector<TokenProvenance> prov;
      for (int c : cells) prov.push_back(TokenProvenance::grid(c / G, c % G));
      contexts.push_back(std::move(prov));
      f.context = strategy.projector == ProjectorChoice::kShared
                      ? ops::gather_rows(g, f.image_tokens, std::move(cells))
                      : encoder_.project(g, ops::gather_rows(g, fused, std::move(cells)),
                                         ProjectorChoice::kDedicated);
    } else if (strategy.kind == StrategyKind::kRoiReencode) {
      std::vector<Var> blocks;
      for (std::size_t k = 0; k < s.gt_boxes.size(); ++k) {
        blocks.push_back(reencode_graph(g, encoder_, img, s.gt_boxes[k], strategy));
        std::vector<TokenProvenance> prov;
        for (int i = 0; i < cfg_.encoder.token_count(); ++i)
          prov.push_back(TokenProvenance::crop(static_cast<int>(k), i));
        contexts.push_back(std::move(prov));
      }
      f.context = blocks.size() == 1 ? blocks[0] : ops::vstack(g, blocks);
    }
    f.layout = assemble_training_sequence(s, strategy.kind, G, vocab, contexts);
    Var slots = f.context.id >= 0 ? ops::vstack(g, {f.image_tokens, f.context}) : f.image_tokens;
    f.logits = decoder_.forward(g, f.layout, slots, G);
    f.loss = masked_loss(g, f.logits, f.layout);
    return f;
  }

 private:
  ModelConfig cfg_;
  ParamStore<T> params_;
  VisionEncoder<T> encoder_;
  Decoder<T> decoder_;
};

/// Inference adapter: initial encoding into a token cache, strategy context
/// selection, and KV-cached greedy decoding.
template <typename T>
class ModelSession final : public GroundingModel<T> {
 public:
  explicit ModelSession(const Model<T>& m)
      : model_(m), session_(m.decoder(), m.params(), m.grid_side()) {}

  const VisualTokens<T>& begin(const ImageTensor& img) override {
    image_ = img;
    cache_ = build_cache(img, model_.encoder(), model_.params());
    image_tokens_.tokens = cache_.tokens;
    image_tokens_.provenance.clear();
    for (int i = 0; i < cache_.grid_side; ++i)
      for (int j = 0; j < cache_.grid_side; ++j) image_tokens_.provenance.push_back(TokenProvenance::grid(i, j));
    session_.reset();
    return image_tokens_;
  }
  void restart() override { session_.reset(); }
  void push_token(int id) override { session_.push_token(id); }
  void push_visual(const RowVec<T>& v, const TokenProvenance& p) override { session_.push_visual(v, p); }
  Mat<T> next_logits() override { return session_.logits(); }
  std::optional<VisualTokens<T>> context(const Strategy& s, std::span<const BBox> boxes) override {
    return select_context(s, cache_, image_, boxes, model_.encoder(), model_.params());
  }
  int grid_side() const override { return model_.grid_side(); }

  const TokenCache<T>& cache() const { return cache_; }

 private:
  const Model<T>& model_;
  DecoderSession<T> session_;
  ImageTensor image_;
  TokenCache<T> cache_;
  VisualTokens<T> image_tokens_;
};

}  // namespace vcot

#endif  // VCOT_MODEL_HPP_
