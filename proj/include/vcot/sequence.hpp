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

#ifndef VCOT_SEQUENCE_HPP_
#define VCOT_SEQUENCE_HPP_

// Vocabulary and the token/visual-slot sequence layout consumed by the
// decoder.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "vcot/errors.hpp"
#include "vcot/vision_encoder.hpp"

namespace vcot {

enum Special : int {
  kBos = 0,
  kEos,
  kImgStart,
  kImgEnd,
  kRoiStart,
  kRoiEnd,
  kCtxStart,
  kCtxEnd,
  kUser,
  kAgent,
  kSpecialCount
};

/// Token id stored at positions that hold an injected visual embedding.
inline constexpr int kVisualSlot = -1;

inline constexpr std::array<std::string_view, 6> kColorWords = {"red",     "green", "blue",
                                                                "yellow", "magenta", "cyan"};
inline constexpr std::array<std::string_view, 4> kShapeWords = {"square", "circle", "triangle",
                                                                "cross"};

class Vocab {
 public:
  /// Specials, box characters, then the synthetic task's words.
  Vocab() {
    static constexpr std::array<std::string_view, kSpecialCount> specials = {
        "<bos>", "<eos>", "<img>", "</img>", "<roi>", "</roi>", "<ctx>", "</ctx>", "<user>",
        "<agent>"};
    for (auto s : specials) add(std::string(s));
    for (char c : std::string_view("0123456789.,[] ")) add(std::string(1, c));
    for (auto w : {"what", "color", "shape", "is", "the", "list", "objects"}) add(w);
    for (auto w : kColorWords) add(std::string(w));
    for (auto w : kShapeWords) add(std::string(w));
  }

  int size() const { return static_cast<int>(tokens_.size()); }

  int id(std::string_view token) const {
    auto it = index_.find(std::string(token));
    if (it == index_.end()) throw InvalidInput("vocab: unknown token '" + std::string(token) + "'");
    return it->second;
  }
  bool contains(std::string_view token) const { return index_.count(std::string(token)) != 0; }
  const std::string& text(int id) const {
    if (id < 0 || id >= size()) throw InvalidInput("vocab: id out of range");
    return tokens_[static_cast<std::size_t>(id)];
  }
  static bool is_special(int id) { return id >= 0 && id < kSpecialCount; }
  bool is_box_char(int id) const { return id >= kSpecialCount && id < kSpecialCount + 15; }

  /// Whitespace-separated words to ids.
  std::vector<int> encode_words(std::string_view text) const {
    std::vector<int> out;
    std::size_t i = 0;
    while (i < text.size()) {
      while (i < text.size() && text[i] == ' ') ++i;
      std::size_t j = i;
      while (j < text.size() && text[j] != ' ') ++j;
      if (j > i) out.push_back(id(text.substr(i, j - i)));
      i = j;
    }
    return out;
  }

  /// One token per character of serialized box text.
  std::vector<int> encode_chars(std::string_view text) const {
    std::vector<int> out;
    out.reserve(text.size());
    for (char c : text) out.push_back(id(std::string_view(&c, 1)));
    return out;
  }

  std::string decode_chars(const std::vector<int>& ids) const {
    std::string s;
    for (int t : ids) s += text(t);
    return s;
  }

  std::string decode_words(const std::vector<int>& ids) const {
    std::string s;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) s += ' ';
      s += text(ids[i]);
    }
    return s;
  }

 private:
  void add(std::string t) {
    index_.emplace(t, static_cast<int>(tokens_.size()));
    tokens_.push_back(std::move(t));
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

enum class Turn : std::uint8_t { kUser, kAgent };

/// A sequence of token ids and visual slots with per-position loss mask and
/// turn tags. `slot_provenance[k]` describes the k-th visual slot in order.
struct SequenceLayout {
  std::vector<int> ids;
  std::vector<bool> loss_mask;
  std::vector<Turn> turns;
  std::vector<int> visual_slots;
  std::vector<TokenProvenance> slot_provenance;

  std::size_t size() const { return ids.size(); }

  void push_token(int id, Turn turn, bool scored = false) {
    ids.push_back(id);
    loss_mask.push_back(scored);
    turns.push_back(turn);
  }
  void push_slot(const TokenProvenance& p, Turn turn) {
    visual_slots.push_back(static_cast<int>(ids.size()));
    slot_provenance.push_back(p);
    ids.push_back(kVisualSlot);
    loss_mask.push_back(false);
    turns.push_back(turn);
  }

  std::size_t scored_count() const {
    std::size_t n = 0;
    for (bool m : loss_mask) n += m ? 1 : 0;
    return n;
  }
};

}  // namespace vcot

#endif  // VCOT_SEQUENCE_HPP_
