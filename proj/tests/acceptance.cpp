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

// Acceptance runner. Prints one PASS/FAIL line per criterion; exits non-zero
// if any selected criterion fails. Tolerances and budgets are pinned below.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "support.hpp"
#include "vcot/checkpoint.hpp"
#include "vcot/cot_protocol.hpp"
#include "vcot/reengagement.hpp"
#include "vcot/roi_geometry.hpp"
#include "vcot/training.hpp"

namespace vcot {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

constexpr double kRoundTripBudgetS = 1.0;
constexpr double kResampleBudgetS = 10.0;
constexpr double kFdTolerance = 1e-4;
constexpr double kRowSumTolerance = 1e-6;
constexpr double kOrderingMarginPp = 10.0;
constexpr double kDeskBudgetS = 3600.0;
constexpr double kOverfitAcc05 = 0.95;
constexpr double kOverfitAnswer = 0.99;
const std::vector<std::uint64_t> kSeeds = {1, 2, 3};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

void note(const std::string& s) {
  std::printf("    %s\n", s.c_str());
  std::fflush(stdout);
}

// 1 -------------------------------------------------------------------------

Outcome box_round_trip() {
  Rng rng(101);
  const auto t0 = Clock::now();
  int bad = 0;
  for (int k = 0; k < 10000; ++k) {
    const BBox b = testing::random_box(rng);
    const BBox back = parse_box(serialize_box(b));
    const double want[4] = {std::nearbyint(b.x_min * 1000) / 1000, std::nearbyint(b.y_min * 1000) / 1000,
                            std::nearbyint(b.x_max * 1000) / 1000, std::nearbyint(b.y_max * 1000) / 1000};
    const double got[4] = {back.x_min, back.y_min, back.x_max, back.y_max};
    for (int i = 0; i < 4; ++i) bad += got[i] != want[i];
  }
  const double dt = seconds_since(t0);
  return {bad == 0 && dt < kRoundTripBudgetS,
          std::to_string(bad) + " mismatched coordinates, " + fmt("%.3f s", dt)};
}

// 2 -------------------------------------------------------------------------

std::vector<int> oracle_cells(int G, const BBox& b) {
  std::vector<int> out;
  for (int i = 0; i < G; ++i)
    for (int j = 0; j < G; ++j) {
      const double w = std::min(double(j + 1) / G, b.x_max) - std::max(double(j) / G, b.x_min);
      const double h = std::min(double(i + 1) / G, b.y_max) - std::max(double(i) / G, b.y_min);
      if (w > 0 && h > 0) out.push_back(i * G + j);
    }
  return out;
}

TokenCache<double> index_cache(int G) {
  TokenCache<double> c;
  c.grid_side = G;
  c.tokens.resize(G * G, 1);
  for (int k = 0; k < G * G; ++k) c.tokens(k, 0) = k;
  c.fused = c.tokens;
  return c;
}

Outcome resample_oracle() {
  Rng rng(202);
  std::vector<BBox> boxes;
  for (int k = 0; k < 1000; ++k) boxes.push_back(testing::random_box(rng, k % 2 == 0));
  const auto t0 = Clock::now();
  int bad = 0;
  for (int G : {4, 8, 16, 32, 64}) {
    const TokenCache<double> cache = index_cache(G);
    for (const BBox& b : boxes) {
      const VisualTokens<double> v = resample_tokens(cache, b);
      std::vector<int> got;
      for (Eigen::Index r = 0; r < v.tokens.rows(); ++r) got.push_back(static_cast<int>(v.tokens(r, 0)));
      bad += got != oracle_cells(G, b);
    }
  }
  const double dt = seconds_since(t0);
  return {bad == 0 && dt < kResampleBudgetS, std::to_string(bad) + " of 5000 differ, " + fmt("%.3f s", dt)};
}

// 3 -------------------------------------------------------------------------

Outcome gradients() {
  struct Case {
    StrategyKind kind;
    ProjectorChoice projector;
    SquarifyMode squarify;
    double ratio;
  };
  const Case cases[] = {{StrategyKind::kRoiReencode, ProjectorChoice::kShared, SquarifyMode::kPadCrop, 0.2},
                        {StrategyKind::kRoiReencode, ProjectorChoice::kDedicated, SquarifyMode::kSquareContext, 0.4},
                        {StrategyKind::kRoiResample, ProjectorChoice::kDedicated, SquarifyMode::kPadCrop, 0.0}};
  const Vocab vocab;
  double worst = 0;
  std::string worst_name;
  std::set<std::string> reached, all;
  for (const Case& c : cases) {
    Strategy s = Strategy::defaults(c.kind);
    s.projector = c.projector;
    s.squarify = c.squarify;
    s.expansion_ratio = c.ratio;
    Model<double> model(testing::tiny_model_config(), 5);
    const ImageTensor img = testing::random_image(16, 17);
    ConversationSample sample = testing::tiny_sample(vocab);
    auto loss = [&] {
      Graph<double> g(&model.params());
      auto f = model.forward(g, sample, img, s, vocab);
      return g.value(f.loss)(0, 0);
    };
    Graph<double> g(&model.params());
    auto f = model.forward(g, sample, img, s, vocab);
    Grads<double> grads(model.params());
    g.backward(f.loss, &grads);
    auto& params = model.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto id = static_cast<ParamId>(i);
      all.insert(params.name(id));
      const auto r = testing::fd_check(params, id, grads.g[i], loss);
      if (r.analytic_norm > 0) reached.insert(params.name(id));
      if (r.rel_error > worst) worst = r.rel_error, worst_name = params.name(id);
    }
  }
  // Unused vocabulary rows aside, every tensor must receive gradient in
  // some case; the token table always does.
  const bool covered = reached.size() == all.size();
  return {worst <= kFdTolerance && covered,
          fmt("worst relative error %.2e", worst) + " (" + worst_name + "), " + std::to_string(reached.size()) + "/" +
              std::to_string(all.size()) + " tensors with gradient"};
}

// 4 -------------------------------------------------------------------------

Outcome causality() {
  const Vocab vocab;
  Model<double> model(testing::tiny_model_config(), 9);
  const ImageTensor img = testing::random_image(16, 3);
  const Strategy s = Strategy::defaults(StrategyKind::kRoiResample);
  const ConversationSample sample = testing::tiny_sample(vocab);
  SequenceLayout layout;
  Mat<double> slots;
  {
    Graph<double> g(&model.params());
    const auto f = model.forward(g, sample, img, s, vocab);
    layout = f.layout;
    const Mat<double>& a = g.value(f.image_tokens);
    const Mat<double>& c = g.value(f.context);
    slots.resize(a.rows() + c.rows(), a.cols());
    slots << a, c;
  }

  auto logits = [&](const SequenceLayout& l, std::vector<std::vector<Mat<double>>>* probs) {
    Graph<double> g(&model.params());
    return Mat<double>(g.value(model.decoder().forward(g, l, g.constant(slots), model.grid_side(), probs)));
  };
  std::vector<std::vector<Mat<double>>> probs;
  const Mat<double> base = logits(layout, &probs);
  double worst_row = 0;
  for (const auto& layer : probs)
    for (const auto& P : layer)
      for (Eigen::Index i = 0; i < P.rows(); ++i) {
        worst_row = std::max(worst_row, std::abs(P.row(i).sum() - 1.0));
        for (Eigen::Index j = i + 1; j < P.cols(); ++j) worst_row = std::max(worst_row, std::abs(P(i, j)) * 1e9);
      }

  // Permute and rewrite the text tokens after t; slots stay in place.
  Rng rng(33);
  int violations = 0;
  const auto n = static_cast<int>(layout.ids.size());
  std::vector<bool> is_slot(static_cast<std::size_t>(n), false);
  for (int k : layout.visual_slots) is_slot[static_cast<std::size_t>(k)] = true;
  for (int trial = 0; trial < 30; ++trial) {
    const int t = rng.uniform_int(0, n - 2);
    SequenceLayout changed = layout;
    std::vector<int> text;
    for (int k = t + 1; k < n; ++k)
      if (!is_slot[static_cast<std::size_t>(k)]) text.push_back(k);
    for (std::size_t a = text.size(); a > 1; --a) {
      const auto b = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(a) - 1));
      std::swap(changed.ids[static_cast<std::size_t>(text[a - 1])], changed.ids[static_cast<std::size_t>(text[b])]);
    }
    if (!text.empty()) changed.ids[static_cast<std::size_t>(text.back())] = rng.uniform_int(0, vocab.size() - 1);
    const Mat<double> after = logits(changed, nullptr);
    violations += !(base.topRows(t + 1).array() == after.topRows(t + 1).array()).all();
  }
  return {violations == 0 && worst_row <= kRowSumTolerance,
          std::to_string(violations) + "/30 future edits changed an earlier logit, " + fmt("max |row sum - 1| %.1e", worst_row)};
}

// 5 -------------------------------------------------------------------------

Outcome cost_model() {
  bool ok = true;
  std::string detail;
  for (int G : {8, 32}) {
    EncoderConfig enc;
    enc.fusion_grid = G;
    const Strategy re = Strategy::defaults(StrategyKind::kRoiReencode);
    const Strategy rs = Strategy::defaults(StrategyKind::kRoiResample);
    const BBox b{0.1, 0.1, 0.3, 0.2};
    const CostReport a = cost_report(re, enc, std::span<const BBox>(&b, 1));
    const CostReport c = cost_report(rs, enc, std::span<const BBox>(&b, 1));
    const double ratio = static_cast<double>(a.encoder_macs) / static_cast<double>(c.encoder_macs);
    ok = ok && ratio == 2.0 && a.extra_visual_tokens == static_cast<double>(G * G);
    if (!detail.empty()) detail += "; ";
    detail += "G=" + std::to_string(G) + fmt(": ratio %.6f", ratio) + fmt(", extra tokens %.0f", a.extra_visual_tokens);
  }
  return {ok, detail};
}

// 6, 7 ----------------------------------------------------------------------

/// Desk-scale configuration for the directional comparisons: default task,
/// a smaller decoder so nine runs fit the time budget.
RunConfig desk_config() {
  RunConfig c;
  c.model.decoder.model_dim = 64;
  c.model.encoder.decoder_dim = 64;
  c.model.decoder.n_layers = 2;
  c.model.decoder.n_heads = 4;
  c.model.decoder.mlp_hidden = 256;
  c.model.encoder.projector_hidden = 128;
  c.steps = 5000;
  c.optim.total_steps = c.steps;
  c.batch_size = 8;
  c.train_samples = 20000;
  c.eval_samples = 500;
  return c;
}

struct ArmResult {
  Metrics m;
  double seconds = 0;
};

class DeskRuns {
 public:
  const ArmResult& get(const Strategy& s, std::uint64_t seed) {
    const std::string key = arm_label(s) + "#" + std::to_string(seed);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    RunConfig c = desk_config();
    c.strategy = s;
    c.seed = seed;
    const auto t0 = Clock::now();
    Trainer t(c);
    t.run();
    ArmResult r;
    r.m = t.evaluate_heldout(c.eval_samples);
    r.seconds = seconds_since(t0);
    note(key + ": answer_acc " + fmt("%.3f", r.m.answer_accuracy) +
         (r.m.grounding_acc_at_0_5 ? fmt(" acc@0.5 %.3f", *r.m.grounding_acc_at_0_5) : std::string()) +
         fmt(" (%.0f s)", r.seconds));
    return cache_.emplace(key, r).first->second;
  }

  double mean_acc(const Strategy& s, double* seconds = nullptr) {
    double acc = 0;
    for (auto seed : kSeeds) {
      const ArmResult& r = get(s, seed);
      acc += r.m.answer_accuracy;
      if (seconds) *seconds += r.seconds;
    }
    return acc / static_cast<double>(kSeeds.size());
  }

 private:
  std::map<std::string, ArmResult> cache_;
};

Outcome ordering(DeskRuns& runs) {
  double secs = 0;
  const double imp = runs.mean_acc(Strategy::defaults(StrategyKind::kImplicitAttention), &secs);
  const double box = runs.mean_acc(Strategy::defaults(StrategyKind::kBoxGuidance), &secs);
  const double rs = runs.mean_acc(Strategy::defaults(StrategyKind::kRoiResample), &secs);
  const double margin = 100.0 * (rs - imp);
  const bool ok = rs > box && box > imp && margin >= kOrderingMarginPp && secs <= kDeskBudgetS;
  return {ok, fmt("resample %.3f", rs) + fmt(" > box %.3f", box) + fmt(" > implicit %.3f", imp) +
                  fmt("; margin %.1f pp", margin) + fmt("; %.0f s total", secs)};
}

Outcome expansion_sweep(DeskRuns& runs) {
  auto with_ratio = [](StrategyKind k, double r) {
    Strategy s = Strategy::defaults(k);
    s.expansion_ratio = r;
    return s;
  };
  const double re02 = runs.mean_acc(with_ratio(StrategyKind::kRoiReencode, 0.2));
  const double re08 = runs.mean_acc(with_ratio(StrategyKind::kRoiReencode, 0.8));
  const double rs0 = runs.mean_acc(with_ratio(StrategyKind::kRoiResample, 0.0));
  const double rs08 = runs.mean_acc(with_ratio(StrategyKind::kRoiResample, 0.8));
  return {re02 >= re08 && rs0 >= rs08, fmt("re-encode 0.2: %.3f", re02) + fmt(" vs 0.8: %.3f", re08) +
                                           fmt("; re-sample 0: %.3f", rs0) + fmt(" vs 0.8: %.3f", rs08)};
}

// 8 -------------------------------------------------------------------------

Outcome overfit() {
  RunConfig c = desk_config();
  c.strategy = Strategy::defaults(StrategyKind::kRoiResample);
  c.train_samples = 32;
  c.steps = 1500;
  c.optim.total_steps = c.steps;
  c.seed = 4;
  Trainer t(c);
  t.run();
  const auto seeds = train_seed_range(c, c.train_samples);
  const Metrics m = evaluate(t.model(), c.task, seeds, c.strategy, GenerateOptions{}, 1);
  const double a05 = m.grounding_acc_at_0_5.value_or(0.0);
  return {a05 >= kOverfitAcc05 && m.answer_accuracy >= kOverfitAnswer,
          fmt("acc@0.5 %.3f", a05) + fmt(", answer_acc %.3f", m.answer_accuracy) + " on " +
              std::to_string(seeds.size()) + " training samples"};
}

// 9 -------------------------------------------------------------------------

Outcome merge_properties() {
  Rng rng(909);
  const int G = 16;
  auto cells = [&](const BBox& b) { return resample_cells(G, b); };
  auto merge = [](std::vector<std::vector<int>> sets) { return merge_cell_sets(sets); };
  int bad = 0;
  for (int k = 0; k < 1000; ++k) {
    const auto a = cells(testing::random_box(rng)), b = cells(testing::random_box(rng)),
               c = cells(testing::random_box(rng));
    bad += merge({a, b}) != merge({b, a});
    bad += merge({merge({a, b}), c}) != merge({a, merge({b, c})});
    bad += merge({a, a}) != a;
    std::set<int> u(a.begin(), a.end());
    u.insert(b.begin(), b.end());
    bad += merge({a, b}) != std::vector<int>(u.begin(), u.end());
  }
  // Duplicate boxes through the full context path.
  const Vocab vocab;
  Model<double> model(testing::tiny_model_config(), 2);
  const ImageTensor img = testing::random_image(16, 8);
  const auto cache = build_cache(img, model.encoder(), model.params());
  int dup_bad = 0;
  for (auto p : {ProjectorChoice::kShared, ProjectorChoice::kDedicated})
    for (int k = 0; k < 50; ++k) {
      Strategy s = Strategy::defaults(StrategyKind::kRoiResample);
      s.projector = p;
      const BBox b = testing::random_box(rng);
      const std::vector<BBox> one{b}, two{b, b};
      const auto x = select_context(s, cache, img, std::span<const BBox>(one), model.encoder(), model.params());
      const auto y = select_context(s, cache, img, std::span<const BBox>(two), model.encoder(), model.params());
      dup_bad += !(x->tokens.rows() == y->tokens.rows() && (x->tokens.array() == y->tokens.array()).all() &&
                   x->provenance == y->provenance);
    }
  return {bad == 0 && dup_bad == 0,
          std::to_string(bad) + " property violations over 1000 triples, " + std::to_string(dup_bad) +
              "/100 duplicate-box contexts differ"};
}

// 10 ------------------------------------------------------------------------

bool same_params(const ParamStore<float>& a, const ParamStore<float>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& x = a.value(static_cast<ParamId>(i));
    const auto& y = b.value(static_cast<ParamId>(i));
    if (x.size() != y.size() ||
        std::memcmp(x.data(), y.data(), static_cast<std::size_t>(x.size()) * sizeof(float)) != 0)
      return false;
  }
  return true;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

Outcome determinism() {
  RunConfig c;
  c.model = testing::tiny_model_config();
  c.strategy = Strategy::defaults(StrategyKind::kRoiReencode);
  c.steps = 8;
  c.optim.total_steps = c.steps;
  c.batch_size = 3;
  c.train_samples = 40;
  c.seed = 12;
  const fs::path dir = fs::temp_directory_path() / "vcot-acceptance-ckpt";
  fs::remove_all(dir);
  c.out_dir = dir.string();
  c.checkpoint_every = 4;

  Trainer a(c), b(c);
  a.run();
  b.run();
  const bool repeat = same_params(a.model().params(), b.model().params()) && a.loss_curve() == b.loss_curve();

  Trainer r(c);
  r.resume(a.checkpoint_dir(4));
  r.run();
  const std::vector<double> tail(a.loss_curve().begin() + 4, a.loss_curve().end());
  const bool resumed = same_params(a.model().params(), r.model().params()) && r.loss_curve() == tail;

  Trainer l(c);
  l.resume(a.checkpoint_dir(8));
  const fs::path again = dir / "again";
  l.save(again);
  const bool identity = same_params(a.model().params(), l.model().params()) &&
                        file_bytes(a.checkpoint_dir(8) / "tensors.bin") == file_bytes(again / "tensors.bin");
  fs::remove_all(dir);
  return {repeat && resumed && identity, std::string("repeat ") + (repeat ? "identical" : "differs") + ", resume " +
                                             (resumed ? "identical" : "differs") + ", save/load " +
                                             (identity ? "identical" : "differs")};
}

}  // namespace
}  // namespace vcot

int main(int argc, char** argv) {
  CLI::App app{"vcot acceptance criteria"};
  std::vector<int> only;
  std::string report;
  app.add_option("--only", only, "Run only these criteria (1-10)")->check(CLI::Range(1, 10));
  app.add_option("--report", report, "Also write the PASS/FAIL lines to this file");
  CLI11_PARSE(app, argc, argv);
  std::ofstream report_file;
  if (!report.empty()) report_file.open(report, std::ios::trunc);

  vcot::DeskRuns runs;
  const std::vector<std::pair<std::string, std::function<vcot::Outcome()>>> criteria = {
      {"box round trip", vcot::box_round_trip},
      {"re-sampling oracle", vcot::resample_oracle},
      {"gradient check", vcot::gradients},
      {"causality and normalization", vcot::causality},
      {"cost model", vcot::cost_model},
      {"strategy ordering", [&] { return vcot::ordering(runs); }},
      {"expansion sweep", [&] { return vcot::expansion_sweep(runs); }},
      {"overfit grounding", vcot::overfit},
      {"multi-box merge", vcot::merge_properties},
      {"determinism and persistence", vcot::determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    vcot::Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    char line[1024];
    std::snprintf(line, sizeof line, "criterion %2d %s: %s (%s)\n", id, o.pass ? "PASS" : "FAIL",
                  criteria[i].first.c_str(), o.detail.c_str());
    std::fputs(line, stdout);
    std::fflush(stdout);
    if (report_file.is_open()) report_file << line << std::flush;
  }
  return failed == 0 ? 0 : 1;
}
