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

#ifndef VCOT_COT_PROTOCOL_HPP_
#define VCOT_COT_PROTOCOL_HPP_

// Grounded chain-of-thought conversations: teacher-forced training layouts
// and the generate -> parse box -> inject context -> continue loop.
//
// Layout (grounded, explicit strategy):
//   <bos> <img> slots </img> <user> question <agent>
//   <roi> box text </roi> <user> <ctx> slots </ctx> <agent> answer <eos>
// Box guidance stops after </roi> and answers directly; implicit attention
// drops the whole RoI/context exchange.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vcot/reengagement.hpp"
#include "vcot/roi_geometry.hpp"
#include "vcot/sequence.hpp"

namespace vcot {

struct ConversationSample {
  std::uint64_t image_seed = 0;
  std::vector<int> question;
  std::vector<BBox> gt_boxes;
  std::vector<int> answer;
};

namespace detail {
inline void push_image_block(SequenceLayout& l, int grid_side) {
  l.push_token(kBos, Turn::kUser);
  l.push_token(kImgStart, Turn::kUser);
  for (int i = 0; i < grid_side; ++i)
    for (int j = 0; j < grid_side; ++j) l.push_slot(TokenProvenance::grid(i, j), Turn::kUser);
  l.push_token(kImgEnd, Turn::kUser);
}
}  // namespace detail

/// Teacher-forced layout. `contexts` lists, per box (or one merged block),
/// the provenance of the context slots; it must be non-empty for explicit
/// strategies and is ignored otherwise.
inline SequenceLayout assemble_training_sequence(
    const ConversationSample& s, StrategyKind kind, int grid_side, const Vocab& vocab,
    std::span<const std::vector<TokenProvenance>> contexts = {}) {
  if (s.answer.empty()) throw ProtocolError("assemble: empty answer");
  const Strategy strategy{kind};
  if (strategy.grounded() && s.gt_boxes.empty())
    throw ProtocolError(std::string("assemble: ") + std::string(strategy_name(kind)) +
                        " needs at least one ground-truth box");
  if (strategy.injects_context() && contexts.empty())
    throw ProtocolError("assemble: explicit strategy needs context slots");

  SequenceLayout l;
  detail::push_image_block(l, grid_side);
  l.push_token(kUser, Turn::kUser);
  for (int q : s.question) l.push_token(q, Turn::kUser);
  l.push_token(kAgent, Turn::kAgent);
  if (strategy.grounded()) {
    for (const BBox& b : s.gt_boxes) {
      l.push_token(kRoiStart, Turn::kAgent);
      for (int c : vocab.encode_chars(serialize_box(b))) l.push_token(c, Turn::kAgent, true);
      l.push_token(kRoiEnd, Turn::kAgent);
    }
  }
  if (strategy.injects_context()) {
    l.push_token(kUser, Turn::kUser);
    l.push_token(kCtxStart, Turn::kUser);
    for (const auto& block : contexts)
      for (const TokenProvenance& p : block) l.push_slot(p, Turn::kUser);
    l.push_token(kCtxEnd, Turn::kUser);
    l.push_token(kAgent, Turn::kAgent);
  }
  for (int a : s.answer) l.push_token(a, Turn::kAgent, true);
  l.push_token(kEos, Turn::kAgent, true);
  return l;
}

/// Plain-text rendering. Specials become <bos>, <roi>, ...; the initial
/// image block is shown as <img>…</img>; context slots as <v:i,j> (grid)
/// or <v:crop:k>; characters inside <roi> are concatenated.
inline std::string render_transcript(const SequenceLayout& l, const Vocab& vocab) {
  std::string out;
  bool in_image = false;
  bool in_roi = false;
  std::size_t slot = 0;
  auto sep = [&] {
    if (!out.empty() && !in_roi) out += ' ';
  };
  for (std::size_t t = 0; t < l.size(); ++t) {
    const int id = l.ids[t];
    if (id == kVisualSlot) {
      const TokenProvenance& p = l.slot_provenance[slot++];
      if (in_image) continue;
      sep();
      if (p.kind == TokenProvenance::Kind::kGrid)
        out += "<v:" + std::to_string(p.a) + "," + std::to_string(p.b) + ">";
      else
        out += "<v:crop:" + std::to_string(p.b) + ">";
      continue;
    }
    if (id == kImgStart) {
      sep();
      out += "<img>…";
      in_image = true;
      continue;
    }
    if (id == kImgEnd) {
      out += "</img>";
      in_image = false;
      continue;
    }
    if (id == kRoiEnd) {
      in_roi = false;
      out += "</roi>";
      continue;
    }
    sep();
    out += vocab.text(id);
    if (id == kRoiStart) in_roi = true;
  }
  return out;
}

/// What the generation loop needs from a model. Implementations own the
/// visual features of the current image.
template <typename T>
class GroundingModel {
 public:
  virtual ~GroundingModel() = default;
  /// Encodes `img`, clears the sequence, and returns the G*G image tokens.
  virtual const VisualTokens<T>& begin(const ImageTensor& img) = 0;
  /// Starts a new sequence over the same image.
  virtual void restart() = 0;
  virtual void push_token(int id) = 0;
  virtual void push_visual(const RowVec<T>& v, const TokenProvenance& p) = 0;
  /// Logits for the token following the current sequence.
  virtual Mat<T> next_logits() = 0;
  virtual std::optional<VisualTokens<T>> context(const Strategy& s, std::span<const BBox> boxes) = 0;
  virtual int grid_side() const = 0;
};

struct GenerateOptions {
  int max_len = 256;
  bool fallback_implicit = false;
  int max_box_tokens = 40;
  int max_object_tokens = 16;
};

struct GenerationResult {
  std::vector<int> answer;
  std::vector<BBox> boxes;
  SequenceLayout transcript;
  bool fell_back = false;
};

namespace detail {

template <typename T>
class Recorder {
 public:
  Recorder(GroundingModel<T>& m, const GenerateOptions& o) : m_(m), o_(o) {}

  void token(int id, Turn turn, bool scored = false) {
    check_len();
    layout.push_token(id, turn, scored);
    m_.push_token(id);
  }
  void slot(const RowVec<T>& v, const TokenProvenance& p, Turn turn) {
    check_len();
    layout.push_slot(p, turn);
    m_.push_visual(v, p);
  }
  void visual_block(const VisualTokens<T>& vt, Turn turn) {
    for (std::size_t k = 0; k < vt.size(); ++k)
      slot(vt.tokens.row(static_cast<Eigen::Index>(k)), vt.provenance[k], turn);
  }

  /// Greedy choice among allowed ids.
  int next(const std::vector<bool>& allowed) {
    const Mat<T> logits = m_.next_logits();
    int best = -1;
    for (Eigen::Index v = 0; v < logits.cols(); ++v) {
      if (v >= static_cast<Eigen::Index>(allowed.size()) || !allowed[static_cast<std::size_t>(v)]) continue;
      if (best < 0 || logits(0, v) > logits(0, best)) best = static_cast<int>(v);
    }
    if (best < 0) throw ProtocolError("generate: no admissible token");
    return best;
  }

  SequenceLayout layout;

 private:
  void check_len() {
    if (static_cast<int>(layout.size()) >= o_.max_len)
      throw TruncationError("generate: exceeded max_len " + std::to_string(o_.max_len));
  }
  GroundingModel<T>& m_;
  const GenerateOptions& o_;
};

inline std::vector<bool> allowed_answer(int vocab_size) {
  std::vector<bool> a(static_cast<std::size_t>(vocab_size), true);
  for (int s = 0; s < kSpecialCount; ++s) a[static_cast<std::size_t>(s)] = s == kEos;
  return a;
}

inline std::vector<bool> allowed_box(int vocab_size) {
  std::vector<bool> a(static_cast<std::size_t>(vocab_size), true);
  for (int s = 0; s < kSpecialCount; ++s) a[static_cast<std::size_t>(s)] = s == kRoiEnd;
  return a;
}

// <roi> is opened by the harness; the model writes box text until it emits
// ']' or </roi>. Returns the raw characters.
template <typename T>
std::vector<int> decode_box(Recorder<T>& r, const Vocab& vocab, const GenerateOptions& o) {
  r.token(kRoiStart, Turn::kAgent);
  const std::vector<bool> allowed = allowed_box(vocab.size());
  const int close = vocab.id("]");
  std::vector<int> chars;
  for (int i = 0; i < o.max_box_tokens; ++i) {
    const int t = r.next(allowed);
    if (t == kRoiEnd) break;
    r.token(t, Turn::kAgent, true);
    chars.push_back(t);
    if (t == close) break;
  }
  r.token(kRoiEnd, Turn::kAgent);
  return chars;
}

template <typename T>
std::vector<int> decode_answer(Recorder<T>& r, const Vocab& vocab) {
  const std::vector<bool> allowed = allowed_answer(vocab.size());
  std::vector<int> answer;
  for (;;) {
    const int t = r.next(allowed);
    r.token(t, Turn::kAgent, true);
    if (t == kEos) break;
    answer.push_back(t);
  }
  return answer;
}

template <typename T>
void open_conversation(Recorder<T>& r, const VisualTokens<T>& image, const std::vector<int>& question) {
  r.token(kBos, Turn::kUser);
  r.token(kImgStart, Turn::kUser);
  r.visual_block(image, Turn::kUser);
  r.token(kImgEnd, Turn::kUser);
  r.token(kUser, Turn::kUser);
  for (int q : question) r.token(q, Turn::kUser);
  r.token(kAgent, Turn::kAgent);
}

template <typename T>
void inject_context(Recorder<T>& r, const VisualTokens<T>& ctx) {
  r.token(kUser, Turn::kUser);
  r.token(kCtxStart, Turn::kUser);
  r.visual_block(ctx, Turn::kUser);
  r.token(kCtxEnd, Turn::kUser);
  r.token(kAgent, Turn::kAgent);
}

}  // namespace detail

/// Greedy grounded generation. For grounded strategies the model first
/// writes a box; the parsed box selects the context injected before the
/// answer. Unparseable box text raises GroundingFailure unless
/// `fallback_implicit` is set, in which case generation continues without
/// context.
template <typename T>
GenerationResult grounded_generate(GroundingModel<T>& model, const ImageTensor& img,
                                   const std::vector<int>& question, const Strategy& strategy,
                                   const Vocab& vocab, const GenerateOptions& opts = {}) {
  strategy.validate();
  const VisualTokens<T>& image = model.begin(img);
  detail::Recorder<T> r(model, opts);
  detail::open_conversation(r, image, question);
  GenerationResult res;
  if (strategy.grounded()) {
    const std::vector<int> chars = detail::decode_box(r, vocab, opts);
    const std::string text = vocab.decode_chars(chars);
    std::optional<BBox> box;
    try {
      box = parse_box(text);
      if (strategy.injects_context() && !(box->area() > 0.0))
        throw ParseError("zero-area box", 0, text.size());
    } catch (const ParseError& e) {
      if (!opts.fallback_implicit)
        throw GroundingFailure(std::string("grounding failure: ") + e.what(), text);
      box.reset();
      res.fell_back = true;
    }
    if (box) {
      res.boxes.push_back(*box);
      if (strategy.injects_context()) {
        const BBox one[1] = {*box};
        auto ctx = model.context(strategy, one);
        if (ctx) detail::inject_context(r, *ctx);
      }
    }
  }
  res.answer = detail::decode_answer(r, vocab);
  res.transcript = std::move(r.layout);
  return res;
}

/// Multi-RoI extension: (1) the model lists objects as a comma-separated
/// line, (2) one grounded box is predicted per object, (3) all boxes and a
/// joint context condition the final answer.
template <typename T>
GenerationResult multi_roi_generate(GroundingModel<T>& model, const ImageTensor& img,
                                    const std::vector<int>& question, const Strategy& strategy,
                                    int max_objects, const Vocab& vocab,
                                    const GenerateOptions& opts = {}) {
  strategy.validate();
  if (!strategy.grounded()) throw ProtocolError("multi-RoI generation needs a grounded strategy");
  const VisualTokens<T>& image = model.begin(img);

  // Step 1: object list.
  std::vector<std::vector<int>> objects;
  {
    detail::Recorder<T> r(model, opts);
    std::vector<int> prompt = {vocab.id("list"), vocab.id("objects")};
    prompt.insert(prompt.end(), question.begin(), question.end());
    detail::open_conversation(r, image, prompt);
    const std::vector<bool> allowed = detail::allowed_answer(vocab.size());
    const int comma = vocab.id(",");
    std::vector<int> cur;
    for (int i = 0; i < opts.max_object_tokens; ++i) {
      const int t = r.next(allowed);
      r.token(t, Turn::kAgent, true);
      if (t == kEos || t == comma) {
        if (!cur.empty()) objects.push_back(cur);
        cur.clear();
        if (t == kEos) break;
        continue;
      }
      cur.push_back(t);
    }
    if (!cur.empty()) objects.push_back(cur);
  }
  if (objects.empty()) throw GroundingFailure("multi-RoI: model listed no objects", "");
  if (static_cast<int>(objects.size()) > max_objects) objects.resize(static_cast<std::size_t>(max_objects));

  // Step 2: one box per object.
  std::vector<BBox> boxes;
  for (std::size_t k = 0; k < objects.size(); ++k) {
    model.restart();
    detail::Recorder<T> r(model, opts);
    detail::open_conversation(r, image, objects[k]);
    const std::string text = vocab.decode_chars(detail::decode_box(r, vocab, opts));
    try {
      const BBox b = parse_box(text);
      if (strategy.injects_context() && !(b.area() > 0.0)) throw ParseError("zero-area box", 0, text.size());
      boxes.push_back(b);
    } catch (const ParseError& e) {
      throw GroundingFailure("multi-RoI object " + std::to_string(k) + ": " + e.what(), text,
                             static_cast<int>(k));
    }
  }

  // Step 3: joint chain-of-thought signal, then the answer.
  model.restart();
  detail::Recorder<T> r(model, opts);
  detail::open_conversation(r, image, question);
  for (const BBox& b : boxes) {
    r.token(kRoiStart, Turn::kAgent);
    for (int c : vocab.encode_chars(serialize_box(b))) r.token(c, Turn::kAgent, true);
    r.token(kRoiEnd, Turn::kAgent);
  }
  if (strategy.injects_context()) {
    auto ctx = model.context(strategy, boxes);
    if (ctx) detail::inject_context(r, *ctx);
  }
  GenerationResult res;
  res.answer = detail::decode_answer(r, vocab);
  res.boxes = std::move(boxes);
  res.transcript = std::move(r.layout);
  return res;
}

}  // namespace vcot

#endif  // VCOT_COT_PROTOCOL_HPP_
