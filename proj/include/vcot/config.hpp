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

#ifndef VCOT_CONFIG_HPP_
#define VCOT_CONFIG_HPP_

// Run configuration: key = value text files, canonical serialization and
// the config hash stamped into every artifact.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "vcot/decoder.hpp"
#include "vcot/model.hpp"
#include "vcot/reengagement.hpp"
#include "vcot/synth.hpp"

namespace vcot {

struct RunConfig {
  ModelConfig model;
  SynthTaskConfig task;
  Strategy strategy = Strategy::defaults(StrategyKind::kRoiResample);
  AdamWConfig optim;

  std::uint64_t seed = 0;
  long steps = 5000;
  int batch_size = 4;
  long train_samples = 20000;
  int eval_samples = 300;
  long eval_every = 0;
  long checkpoint_every = 0;
  int threads = 1;
  bool deterministic = true;
  bool fallback_implicit = false;
  std::string out_dir;

  RunConfig() {
    Vocab v;
    model.decoder.vocab_size = v.size();
    optim.total_steps = steps;
  }

  void validate() const {
    model.validate();
    task.validate();
    strategy.validate();
    if (model.decoder.vocab_size != Vocab().size())
      throw ConfigError("decoder.vocab_size must equal the task vocabulary (" + std::to_string(Vocab().size()) + ")");
    if (steps < 1 || batch_size < 1 || train_samples < 1 || eval_samples < 0 || threads < 1)
      throw ConfigError("steps, batch_size, train_samples and threads must be positive");
  }
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string experts_to_string(const std::vector<ExpertConfig>& ex) {
  std::string s;
  for (std::size_t i = 0; i < ex.size(); ++i) {
    if (i) s += ';';
    const auto& e = ex[i];
    s += std::to_string(e.input_side_px) + ":" + std::to_string(e.patch_size_px) + ":" +
         std::to_string(e.embed_dim) + ":" + std::to_string(e.depth) + ":" + std::to_string(e.heads) + ":" +
         std::to_string(e.mlp_hidden);
  }
  return s;
}

inline std::vector<ExpertConfig> experts_from_string(const std::string& s) {
  std::vector<ExpertConfig> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ';')) {
    ExpertConfig e;
    char c1, c2, c3, c4, c5;
    std::istringstream is(item);
    if (!(is >> e.input_side_px >> c1 >> e.patch_size_px >> c2 >> e.embed_dim >> c3 >> e.depth >> c4 >> e.heads >>
          c5 >> e.mlp_hidden) ||
        c1 != ':' || c2 != ':' || c3 != ':' || c4 != ':' || c5 != ':')
      throw ConfigError("encoder.experts: expected input:patch:dim:depth:heads:mlp, got '" + item + "'");
    out.push_back(e);
  }
  if (out.empty()) throw ConfigError("encoder.experts: empty");
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Ordered key/value view of a config. `hashed` keys determine what a
/// checkpoint means; the rest only affect how a run is executed.
inline std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& c, bool hashed_only = false) {
  using detail::fmt_double;
  std::vector<std::pair<std::string, std::string>> kv = {
      {"seed", std::to_string(c.seed)},
      {"steps", std::to_string(c.steps)},
      {"batch_size", std::to_string(c.batch_size)},
      {"train_samples", std::to_string(c.train_samples)},
      {"lr", fmt_double(c.optim.lr)},
      {"beta1", fmt_double(c.optim.beta1)},
      {"beta2", fmt_double(c.optim.beta2)},
      {"eps", fmt_double(c.optim.eps)},
      {"weight_decay", fmt_double(c.optim.weight_decay)},
      {"warmup_ratio", fmt_double(c.optim.warmup_ratio)},
      {"grad_clip", fmt_double(c.optim.grad_clip)},
      {"strategy", std::string(strategy_name(c.strategy.kind))},
      {"expansion_ratio", fmt_double(c.strategy.expansion_ratio)},
      {"squarify", std::string(squarify_name(c.strategy.squarify))},
      {"projector", std::string(projector_name(c.strategy.projector))},
      {"encoder.experts", detail::experts_to_string(c.model.encoder.experts)},
      {"encoder.grid", std::to_string(c.model.encoder.fusion_grid)},
      {"encoder.projector_hidden", std::to_string(c.model.encoder.projector_hidden)},
      {"encoder.pos_init_std", detail::fmt_double(c.model.encoder.pos_init_std)},
      {"decoder.dim", std::to_string(c.model.decoder.model_dim)},
      {"decoder.layers", std::to_string(c.model.decoder.n_layers)},
      {"decoder.heads", std::to_string(c.model.decoder.n_heads)},
      {"decoder.mlp_hidden", std::to_string(c.model.decoder.mlp_hidden)},
      {"decoder.vocab_size", std::to_string(c.model.decoder.vocab_size)},
      {"decoder.max_seq_len", std::to_string(c.model.decoder.max_seq_len)},
      {"decoder.embed_init_std", detail::fmt_double(c.model.decoder.embed_init_std)},
      {"task.image_side", std::to_string(c.task.image_side_px)},
      {"task.cell_grid", std::to_string(c.task.cell_grid)},
      {"task.num_colors", std::to_string(c.task.num_colors)},
      {"task.min_area", fmt_double(c.task.min_area_fraction)},
      {"task.max_area", fmt_double(c.task.max_area_fraction)},
      {"task.min_distractors", std::to_string(c.task.min_distractors)},
      {"task.max_distractors", std::to_string(c.task.max_distractors)},
      {"task.noise", fmt_double(c.task.background_noise)},
      {"task.ask_color", c.task.ask_color ? "true" : "false"},
      {"task.ask_shape", c.task.ask_shape ? "true" : "false"},
  };
  if (hashed_only) return kv;
  kv.insert(kv.end(), {
                          {"eval_samples", std::to_string(c.eval_samples)},
                          {"eval_every", std::to_string(c.eval_every)},
                          {"checkpoint_every", std::to_string(c.checkpoint_every)},
                          {"threads", std::to_string(c.threads)},
                          {"deterministic", c.deterministic ? "true" : "false"},
                          {"fallback_implicit", c.fallback_implicit ? "true" : "false"},
                          {"out_dir", c.out_dir},
                      });
  return kv;
}

inline std::string serialize_config(const RunConfig& c) {
  std::string s;
  for (const auto& [k, v] : config_entries(c)) s += k + " = " + v + "\n";
  return s;
}

/// FNV-1a 64 over the canonical serialization of the hashed keys.
inline std::uint64_t config_hash(const RunConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [k, v] : config_entries(c, true))
    for (char ch : k + "=" + v + "\n") {
      h ^= static_cast<unsigned char>(ch);
      h *= 0x100000001b3ULL;
    }
  return h;
}

inline std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Applies one key = value setting; unknown keys are an error.
inline void apply_setting(RunConfig& c, const std::string& key, const std::string& value) {
  auto as_long = [&] {
    try {
      std::size_t used = 0;
      const long v = std::stol(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config: '" + key + "' expects an integer, got '" + value + "'");
    }
  };
  auto as_int = [&] { return static_cast<int>(as_long()); };
  auto as_double = [&] {
    try {
      std::size_t used = 0;
      const double v = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config: '" + key + "' expects a number, got '" + value + "'");
    }
  };
  auto as_bool = [&] {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("config: '" + key + "' expects true/false, got '" + value + "'");
  };

  if (key == "seed") c.seed = static_cast<std::uint64_t>(as_long());
  else if (key == "steps") c.steps = as_long(), c.optim.total_steps = c.steps;
  else if (key == "batch_size") c.batch_size = as_int();
  else if (key == "train_samples") c.train_samples = as_long();
  else if (key == "lr") c.optim.lr = as_double();
  else if (key == "beta1") c.optim.beta1 = as_double();
  else if (key == "beta2") c.optim.beta2 = as_double();
  else if (key == "eps") c.optim.eps = as_double();
  else if (key == "weight_decay") c.optim.weight_decay = as_double();
  else if (key == "warmup_ratio") c.optim.warmup_ratio = as_double();
  else if (key == "grad_clip") c.optim.grad_clip = as_double();
  else if (key == "strategy") {
    const double ratio = c.strategy.expansion_ratio;
    const bool was_default = ratio == Strategy::defaults(c.strategy.kind).expansion_ratio;
    c.strategy.kind = parse_strategy_kind(value);
    if (was_default) c.strategy.expansion_ratio = Strategy::defaults(c.strategy.kind).expansion_ratio;
  } else if (key == "expansion_ratio") c.strategy.expansion_ratio = as_double();
  else if (key == "squarify") c.strategy.squarify = parse_squarify(value);
  else if (key == "projector") c.strategy.projector = parse_projector(value);
  else if (key == "encoder.experts") c.model.encoder.experts = detail::experts_from_string(value);
  else if (key == "encoder.grid") c.model.encoder.fusion_grid = as_int();
  else if (key == "encoder.projector_hidden") c.model.encoder.projector_hidden = as_int();
  else if (key == "encoder.pos_init_std") c.model.encoder.pos_init_std = as_double();
  else if (key == "decoder.dim") c.model.decoder.model_dim = as_int(), c.model.encoder.decoder_dim = c.model.decoder.model_dim;
  else if (key == "decoder.layers") c.model.decoder.n_layers = as_int();
  else if (key == "decoder.heads") c.model.decoder.n_heads = as_int();
  else if (key == "decoder.mlp_hidden") c.model.decoder.mlp_hidden = as_int();
  else if (key == "decoder.vocab_size") c.model.decoder.vocab_size = as_int();
  else if (key == "decoder.max_seq_len") c.model.decoder.max_seq_len = as_int();
  else if (key == "decoder.embed_init_std") c.model.decoder.embed_init_std = as_double();
  else if (key == "task.image_side") c.task.image_side_px = as_int();
  else if (key == "task.cell_grid") c.task.cell_grid = as_int();
  else if (key == "task.num_colors") c.task.num_colors = as_int();
  else if (key == "task.min_area") c.task.min_area_fraction = as_double();
  else if (key == "task.max_area") c.task.max_area_fraction = as_double();
  else if (key == "task.min_distractors") c.task.min_distractors = as_int();
  else if (key == "task.max_distractors") c.task.max_distractors = as_int();
  else if (key == "task.noise") c.task.background_noise = as_double();
  else if (key == "task.ask_color") c.task.ask_color = as_bool();
  else if (key == "task.ask_shape") c.task.ask_shape = as_bool();
  else if (key == "eval_samples") c.eval_samples = as_int();
  else if (key == "eval_every") c.eval_every = as_long();
  else if (key == "checkpoint_every") c.checkpoint_every = as_long();
  else if (key == "threads") c.threads = as_int();
  else if (key == "deterministic") c.deterministic = as_bool();
  else if (key == "fallback_implicit") c.fallback_implicit = as_bool();
  else if (key == "out_dir") c.out_dir = value;
  else throw ConfigError("config: unknown key '" + key + "'");
}

/// Parses "key = value" lines; '#' starts a comment.
inline RunConfig parse_config(const std::string& text, RunConfig base = {}) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    apply_setting(base, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  return base;
}

inline RunConfig load_config(const std::string& path, RunConfig base = {}) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

}  // namespace vcot

#endif  // VCOT_CONFIG_HPP_
