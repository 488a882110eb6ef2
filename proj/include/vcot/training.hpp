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

#ifndef VCOT_TRAINING_HPP_
#define VCOT_TRAINING_HPP_

// Training loop, evaluation metrics and the strategy ablation harness.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "vcot/checkpoint.hpp"
#include "vcot/config.hpp"
#include "vcot/cot_protocol.hpp"
#include "vcot/model.hpp"
#include "vcot/synth.hpp"

namespace vcot {

// Sample seeds: the run seed occupies the high 32 bits; training indices
// live below 2^31 and evaluation indices above, so the ranges never meet.
inline constexpr std::uint64_t kEvalSeedOffset = std::uint64_t{1} << 31;

inline std::uint64_t train_sample_seed(std::uint64_t run_seed, long index) {
  return (run_seed << 32) + static_cast<std::uint64_t>(index);
}
inline std::uint64_t eval_sample_seed(std::uint64_t run_seed, long index) {
  return (run_seed << 32) + kEvalSeedOffset + static_cast<std::uint64_t>(index);
}

inline std::vector<std::uint64_t> train_seed_range(const RunConfig& c, long count) {
  std::vector<std::uint64_t> out;
  for (long i = 0; i < count; ++i) out.push_back(train_sample_seed(c.seed, i));
  return out;
}
inline std::vector<std::uint64_t> eval_seed_range(const RunConfig& c, long count) {
  std::vector<std::uint64_t> out;
  for (long i = 0; i < count; ++i) out.push_back(eval_sample_seed(c.seed, i));
  return out;
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers.
inline void parallel_for(long n, int threads, const std::function<void(long)>& fn) {
  const int workers = static_cast<int>(std::min<long>(std::max(threads, 1), n));
  if (workers <= 1) {
    for (long i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<long> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (long i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

struct Metrics {
  long samples = 0;
  double answer_accuracy = 0.0;
  std::optional<double> grounding_acc_at_0_5;  // grounded strategies only
  std::optional<double> mean_iou;
  double tokens_per_sample = 0.0;  // injected context tokens
  long grounding_failures = 0;
  long fallbacks = 0;
  std::vector<BBox> predicted_boxes;
  std::vector<BBox> gt_boxes;
  std::vector<double> loss_curve;
};

/// Greedy grounded generation over `seeds`. A grounding failure counts as a
/// wrong answer with an all-zero predicted box.
inline Metrics evaluate(const Model<float>& model, const SynthTaskConfig& task, std::span<const std::uint64_t> seeds,
                        const Strategy& strategy, const GenerateOptions& opts = {}, int threads = 1) {
  strategy.validate();
  const Vocab vocab;
  const int G = model.grid_side();
  const auto n = static_cast<long>(seeds.size());
  std::vector<char> correct(seeds.size(), 0), failed(seeds.size(), 0), fell_back(seeds.size(), 0);
  std::vector<double> ctx_tokens(seeds.size(), 0.0);
  std::vector<BBox> pred(seeds.size()), gt(seeds.size());
  parallel_for(n, threads, [&](long i) {
    const auto k = static_cast<std::size_t>(i);
    const SynthSample s = gen_sample(seeds[k], task, vocab);
    gt[k] = s.sample.gt_boxes.front();
    ModelSession<float> session(model);
    try {
      GenerationResult r = grounded_generate(session, s.image, s.sample.question, strategy, vocab, opts);
      correct[k] = r.answer == s.sample.answer;
      fell_back[k] = r.fell_back;
      if (!r.boxes.empty()) pred[k] = r.boxes.front();
      ctx_tokens[k] = static_cast<double>(r.transcript.visual_slots.size()) - G * G;
    } catch (const GroundingFailure&) {
      failed[k] = 1;
    } catch (const TruncationError&) {
      failed[k] = 1;
    }
  });
  Metrics m;
  m.samples = n;
  m.predicted_boxes = pred;
  m.gt_boxes = gt;
  if (n == 0) return m;
  double acc = 0, tok = 0;
  for (long i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    acc += correct[k];
    tok += ctx_tokens[k];
    m.grounding_failures += failed[k];
    m.fallbacks += fell_back[k];
  }
  m.answer_accuracy = acc / static_cast<double>(n);
  m.tokens_per_sample = tok / static_cast<double>(n);
  if (strategy.grounded()) {
    m.grounding_acc_at_0_5 = acc_at_iou(pred, gt, 0.5);
    double s = 0;
    for (std::size_t k = 0; k < pred.size(); ++k) s += iou(pred[k], gt[k]);
    m.mean_iou = s / static_cast<double>(n);
  }
  return m;
}

inline nlohmann::json metrics_record(long step, const Strategy& s, const Metrics& m, std::uint64_t cfg_hash) {
  nlohmann::json j;
  j["step"] = step;
  j["strategy"] = std::string(strategy_name(s.kind));
  j["expansion_ratio"] = s.expansion_ratio;
  j["answer_acc"] = m.answer_accuracy;
  j["acc_at_0_5"] = m.grounding_acc_at_0_5 ? nlohmann::json(*m.grounding_acc_at_0_5) : nlohmann::json(nullptr);
  j["mean_iou"] = m.mean_iou ? nlohmann::json(*m.mean_iou) : nlohmann::json(nullptr);
  j["tokens_per_sample"] = m.tokens_per_sample;
  j["samples"] = m.samples;
  j["grounding_failures"] = m.grounding_failures;
  j["config_hash"] = hash_hex(cfg_hash);
  return j;
}

/// Sequential-by-default trainer. Per-sample gradients are summed in batch
/// order, so results do not depend on the worker count.
class Trainer {
 public:
  explicit Trainer(RunConfig cfg) : cfg_(std::move(cfg)), model_((cfg_.validate(), cfg_.model), cfg_.seed) {
    cfg_.optim.total_steps = cfg_.steps;
    adam_ = AdamState<float>(model_.params());
    hash_ = config_hash(cfg_);
  }

  const RunConfig& config() const { return cfg_; }
  const Model<float>& model() const { return model_; }
  Model<float>& model() { return model_; }
  const AdamState<float>& optimizer() const { return adam_; }
  long step() const { return adam_.step; }
  std::uint64_t hash() const { return hash_; }
  const std::vector<double>& loss_curve() const { return losses_; }

  /// One optimizer step; returns the mean batch loss before the update.
  double train_step() {
    const long step = adam_.step;
    const int B = cfg_.batch_size;
    std::vector<Grads<float>> grads(static_cast<std::size_t>(B), Grads<float>(model_.params()));
    std::vector<double> losses(static_cast<std::size_t>(B), 0.0);
    parallel_for(B, cfg_.deterministic ? 1 : cfg_.threads, [&](long b) {
      const long index = (step * B + b) % cfg_.train_samples;
      const SynthSample s = gen_sample(train_sample_seed(cfg_.seed, index), cfg_.task, vocab_);
      Graph<float> g(&model_.params());
      auto f = model_.forward(g, s.sample, s.image, cfg_.strategy, vocab_);
      losses[static_cast<std::size_t>(b)] = g.value(f.loss)(0, 0);
      g.backward(f.loss, &grads[static_cast<std::size_t>(b)]);
    });
    double loss = 0;
    for (double l : losses) loss += l;
    loss /= B;
    Grads<float>& total = grads[0];
    for (int b = 1; b < B; ++b) total += grads[static_cast<std::size_t>(b)];
    total *= 1.0f / static_cast<float>(B);
    if (!std::isfinite(loss) || !total.all_finite()) {
      std::string where;
      if (!cfg_.out_dir.empty()) {
        const auto dir = std::filesystem::path(cfg_.out_dir) / ("abort-step-" + std::to_string(step));
        save(dir);
        where = "; parameters of the prior step saved to " + dir.string();
      }
      throw TrainingError("non-finite loss at step " + std::to_string(step) + where, step);
    }
    step_optimizer(model_.params(), total, adam_, cfg_.optim);
    losses_.push_back(loss);
    return loss;
  }

  using Progress = std::function<void(long step, double loss)>;

  /// Trains until `cfg.steps`, honoring checkpoint and eval cadence.
  void run(const Progress& progress = {}) {
    while (adam_.step < cfg_.steps) {
      const double loss = train_step();
      const long done = adam_.step;
      if (progress) progress(done, loss);
      if (!cfg_.out_dir.empty() && cfg_.checkpoint_every > 0 &&
          (done % cfg_.checkpoint_every == 0 || done == cfg_.steps))
        save(checkpoint_dir(done));
      if (cfg_.eval_every > 0 && (done % cfg_.eval_every == 0 || done == cfg_.steps)) eval_and_log(done);
    }
  }

  Metrics evaluate_heldout(int count) const {
    const auto seeds = eval_seed_range(cfg_, count);
    GenerateOptions o;
    o.fallback_implicit = cfg_.fallback_implicit;
    Metrics m = evaluate(model_, cfg_.task, seeds, cfg_.strategy, o, cfg_.threads);
    m.loss_curve = losses_;
    return m;
  }

  void eval_and_log(long step) {
    const Metrics m = evaluate_heldout(cfg_.eval_samples);
    if (cfg_.out_dir.empty()) return;
    std::filesystem::create_directories(cfg_.out_dir);
    std::ofstream f(std::filesystem::path(cfg_.out_dir) / "metrics.jsonl", std::ios::app);
    f << metrics_record(step, cfg_.strategy, m, hash_).dump() << "\n";
  }

  std::filesystem::path checkpoint_dir(long step) const {
    char buf[32];
    std::snprintf(buf, sizeof buf, "step-%08ld", step);
    return std::filesystem::path(cfg_.out_dir) / buf;
  }

  void save(const std::filesystem::path& dir) const {
    save_checkpoint(dir, model_.params(), {hash_, adam_.step}, &adam_);
  }

  /// Restores parameters and optimizer state; the loss curve restarts.
  void resume(const std::filesystem::path& dir) {
    load_checkpoint(dir, model_.params(), hash_, &adam_);
    losses_.clear();
  }

 private:
  RunConfig cfg_;
  Model<float> model_;
  AdamState<float> adam_;
  std::uint64_t hash_ = 0;
  Vocab vocab_;
  std::vector<double> losses_;
};

// Ablation ----------------------------------------------------------------

struct AblationArm {
  std::string label;
  Strategy strategy;
  bool sweep = false;
};

struct AblationRow {
  AblationArm arm;
  long steps = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<Metrics> per_seed;
  double mean_answer_accuracy = 0.0;
  std::optional<double> mean_acc_at_0_5;
  std::optional<double> mean_iou;
  double mean_tokens = 0.0;
};

inline std::string arm_label(const Strategy& s) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s@%.1f", std::string(strategy_name(s.kind)).c_str(), s.expansion_ratio);
  return buf;
}

/// The four strategy rows, then (kind, ratio) sweep rows for re-encoding
/// and re-sampling.
inline std::vector<AblationArm> ablation_arms(const RunConfig& base, std::span<const double> sweep_ratios) {
  std::vector<AblationArm> arms;
  for (auto k : {StrategyKind::kImplicitAttention, StrategyKind::kBoxGuidance, StrategyKind::kRoiReencode,
                 StrategyKind::kRoiResample}) {
    Strategy s = Strategy::defaults(k);
    s.squarify = base.strategy.squarify;
    s.projector = base.strategy.projector;
    arms.push_back({std::string(strategy_name(k)), s, false});
  }
  for (auto k : {StrategyKind::kRoiReencode, StrategyKind::kRoiResample})
    for (double r : sweep_ratios) {
      Strategy s = Strategy::defaults(k);
      s.expansion_ratio = r;
      s.squarify = base.strategy.squarify;
      s.projector = base.strategy.projector;
      arms.push_back({arm_label(s), s, true});
    }
  return arms;
}

/// Trains every arm from the same init seed and data stream with an equal
/// step budget, then evaluates on the held-out range. Identical
/// (strategy, seed) runs are shared between main and sweep rows. Jobs run
/// on `jobs` workers; each job is itself sequential.
inline std::vector<AblationRow> ablate(const RunConfig& base, std::span<const std::uint64_t> seeds,
                                       std::span<const double> sweep_ratios, int jobs = 1,
                                       const std::function<void(const std::string&)>& log = {}) {
  const auto arms = ablation_arms(base, sweep_ratios);
  std::map<std::string, std::size_t> unique;
  std::vector<Strategy> strategies;
  for (const auto& a : arms)
    if (unique.emplace(arm_label(a.strategy), strategies.size()).second) strategies.push_back(a.strategy);

  const long n_jobs = static_cast<long>(strategies.size() * seeds.size());
  std::vector<Metrics> results(static_cast<std::size_t>(n_jobs));
  std::mutex log_mu;
  parallel_for(n_jobs, jobs, [&](long j) {
    const auto si = static_cast<std::size_t>(j) / seeds.size();
    const auto ki = static_cast<std::size_t>(j) % seeds.size();
    RunConfig c = base;
    c.strategy = strategies[si];
    c.seed = seeds[ki];
    c.threads = 1;
    c.eval_every = 0;
    c.checkpoint_every = 0;
    c.out_dir.clear();
    Trainer t(c);
    t.run();
    results[static_cast<std::size_t>(j)] = t.evaluate_heldout(c.eval_samples);
    if (log) {
      std::lock_guard<std::mutex> lock(log_mu);
      const auto& m = results[static_cast<std::size_t>(j)];
      log(arm_label(c.strategy) + " seed " + std::to_string(c.seed) + ": answer_acc " +
          std::to_string(m.answer_accuracy) + " final_loss " +
          std::to_string(t.loss_curve().empty() ? 0.0 : t.loss_curve().back()));
    }
  });

  std::vector<AblationRow> rows;
  for (const auto& a : arms) {
    AblationRow r;
    r.arm = a;
    r.steps = base.steps;
    r.seeds.assign(seeds.begin(), seeds.end());
    const std::size_t si = unique.at(arm_label(a.strategy));
    double acc = 0, a05 = 0, miou = 0, tok = 0;
    for (std::size_t k = 0; k < seeds.size(); ++k) {
      const Metrics& m = results[si * seeds.size() + k];
      r.per_seed.push_back(m);
      acc += m.answer_accuracy;
      tok += m.tokens_per_sample;
      if (m.grounding_acc_at_0_5) a05 += *m.grounding_acc_at_0_5;
      if (m.mean_iou) miou += *m.mean_iou;
    }
    const double n = static_cast<double>(std::max<std::size_t>(seeds.size(), 1));
    r.mean_answer_accuracy = acc / n;
    r.mean_tokens = tok / n;
    if (a.strategy.grounded()) {
      r.mean_acc_at_0_5 = a05 / n;
      r.mean_iou = miou / n;
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

/// Tab-separated table; "n/a" marks grounding metrics of ungrounded arms.
inline std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::string out = "arm\tstrategy\texpansion_ratio\tsteps\tseeds\tanswer_acc\tacc_at_0_5\tmean_iou\ttokens_per_sample\n";
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return std::string(buf);
  };
  for (const auto& r : rows) {
    out += r.arm.label + "\t" + std::string(strategy_name(r.arm.strategy.kind)) + "\t" +
           num(r.arm.strategy.expansion_ratio) + "\t" + std::to_string(r.steps) + "\t" +
           std::to_string(r.seeds.size()) + "\t" + num(r.mean_answer_accuracy) + "\t" +
           (r.mean_acc_at_0_5 ? num(*r.mean_acc_at_0_5) : "n/a") + "\t" + (r.mean_iou ? num(*r.mean_iou) : "n/a") +
           "\t" + num(r.mean_tokens) + "\n";
  }
  return out;
}

inline nlohmann::json ablation_json(const std::vector<AblationRow>& rows, std::uint64_t cfg_hash) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j;
    j["arm"] = r.arm.label;
    j["strategy"] = std::string(strategy_name(r.arm.strategy.kind));
    j["expansion_ratio"] = r.arm.strategy.expansion_ratio;
    j["sweep"] = r.arm.sweep;
    j["steps"] = r.steps;
    j["seeds"] = r.seeds;
    j["answer_acc"] = r.mean_answer_accuracy;
    j["acc_at_0_5"] = r.mean_acc_at_0_5 ? nlohmann::json(*r.mean_acc_at_0_5) : nlohmann::json(nullptr);
    j["mean_iou"] = r.mean_iou ? nlohmann::json(*r.mean_iou) : nlohmann::json(nullptr);
    j["tokens_per_sample"] = r.mean_tokens;
    nlohmann::json per = nlohmann::json::array();
    for (const auto& m : r.per_seed) per.push_back(m.answer_accuracy);
    j["per_seed_answer_acc"] = per;
    j["config_hash"] = hash_hex(cfg_hash);
    out.push_back(j);
  }
  return out;
}

}  // namespace vcot

#endif  // VCOT_TRAINING_HPP_
