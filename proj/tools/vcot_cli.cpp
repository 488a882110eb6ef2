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

// vcot command-line entry point.
//
//   vcot gen-data    --count N [--split train|eval] [--out manifest.jsonl]
//   vcot train       [--out DIR] [--resume CKPT]
//   vcot eval        --checkpoint CKPT [--samples N] [--split eval|train]
//   vcot infer       [--checkpoint CKPT] --image SEED [--question TEXT]
//   vcot ablate      [--steps N] [--seeds K] [--sweep] [--jobs J]
//   vcot cost-report [--box "[a, b, c, d]"]
//
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "vcot/checkpoint.hpp"
#include "vcot/config.hpp"
#include "vcot/cot_protocol.hpp"
#include "vcot/model.hpp"
#include "vcot/synth.hpp"
#include "vcot/training.hpp"

namespace {

using namespace vcot;

struct CommonFlags {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> strategy;
  std::optional<double> expansion_ratio;
  std::optional<std::string> squarify;
  std::optional<std::string> projector;
  std::optional<long> steps;
  std::optional<int> threads;
  bool fallback_implicit = false;
  bool deterministic = false;
};

// Usage errors raised after parsing (bad values in config files or --set).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config_path, "key = value config file")->check(CLI::ExistingFile);
  app->add_option("--set", f.sets, "override one config key (key=value); repeatable");
  app->add_option("--seed", f.seed, "run seed");
  app->add_option("--strategy", f.strategy, "implicit-attention|box-guidance|roi-reencode|roi-resample")
      ->check(CLI::IsMember({"implicit-attention", "box-guidance", "roi-reencode", "roi-resample"}));
  app->add_option("--expansion-ratio", f.expansion_ratio, "RoI context expansion ratio")->check(CLI::NonNegativeNumber);
  app->add_option("--squarify", f.squarify, "pad-crop|square-context")
      ->check(CLI::IsMember({"pad-crop", "square-context"}));
  app->add_option("--projector", f.projector, "shared|dedicated")->check(CLI::IsMember({"shared", "dedicated"}));
  app->add_option("--steps", f.steps, "training steps")->check(CLI::PositiveNumber);
  app->add_option("--threads", f.threads, "worker threads")->check(CLI::PositiveNumber);
  app->add_flag("--fallback-implicit", f.fallback_implicit, "continue without context on unparseable boxes");
  app->add_flag("--deterministic", f.deterministic, "sequential, bitwise-reproducible execution");
}

RunConfig resolve(const CommonFlags& f) {
  RunConfig c;
  try {
    if (!f.config_path.empty()) c = load_config(f.config_path);
    for (const auto& kv : f.sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      apply_setting(c, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
    }
    if (f.seed) c.seed = *f.seed;
    if (f.strategy) apply_setting(c, "strategy", *f.strategy);
    if (f.expansion_ratio) c.strategy.expansion_ratio = *f.expansion_ratio;
    if (f.squarify) c.strategy.squarify = parse_squarify(*f.squarify);
    if (f.projector) c.strategy.projector = parse_projector(*f.projector);
    if (f.steps) apply_setting(c, "steps", std::to_string(*f.steps));
    if (f.threads) c.threads = *f.threads;
    if (f.fallback_implicit) c.fallback_implicit = true;
    if (f.deterministic) c.deterministic = true;
    c.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  return c;
}

std::string hash_line(const RunConfig& c) { return "config_hash " + hash_hex(config_hash(c)); }

nlohmann::json box_json(const BBox& b) {
  const BBox q = quantize_box(b);
  return nlohmann::json::array({q.x_min, q.y_min, q.x_max, q.y_max});
}

// --image accepts a raw sample seed, or train:<i> / eval:<i> indices into
// the run's seed ranges.
std::uint64_t image_seed(const std::string& spec, const RunConfig& c) {
  auto index = [&](std::size_t skip) {
    try {
      return std::stol(spec.substr(skip));
    } catch (const std::exception&) {
      throw UsageError("--image: expected <seed>, train:<i> or eval:<i>, got '" + spec + "'");
    }
  };
  if (spec.rfind("train:", 0) == 0) return train_sample_seed(c.seed, index(6));
  if (spec.rfind("eval:", 0) == 0) return eval_sample_seed(c.seed, index(5));
  try {
    std::size_t used = 0;
    const auto v = std::stoull(spec, &used);
    if (used != spec.size()) throw std::invalid_argument(spec);
    return v;
  } catch (const std::exception&) {
    throw UsageError("--image: expected <seed>, train:<i> or eval:<i>, got '" + spec + "'");
  }
}

void print_metrics(const Metrics& m, const RunConfig& c, long step) {
  std::cout << metrics_record(step, c.strategy, m, config_hash(c)).dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vcot: grounded visual chain-of-thought harness"};
  app.require_subcommand(1);
  CommonFlags f;

  auto* gen = app.add_subcommand("gen-data", "write a JSONL dataset manifest");
  long gen_count = 100;
  std::string gen_split = "train", gen_out;
  gen->add_option("--count", gen_count, "number of samples")->check(CLI::PositiveNumber);
  gen->add_option("--split", gen_split, "train|eval")->check(CLI::IsMember({"train", "eval"}));
  gen->add_option("--out", gen_out, "output path (default stdout)");

  auto* train = app.add_subcommand("train", "train one strategy");
  std::string train_out, resume;
  train->add_option("--out", train_out, "output directory for checkpoints and metrics");
  train->add_option("--resume", resume, "checkpoint directory to resume from")->check(CLI::ExistingDirectory);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_ckpt, eval_split = "eval";
  int eval_samples = -1;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--samples", eval_samples, "number of samples (default: eval_samples)");
  eval->add_option("--split", eval_split, "eval|train")->check(CLI::IsMember({"train", "eval"}));

  auto* infer = app.add_subcommand("infer", "run grounded generation on one image");
  std::string infer_ckpt, infer_image, infer_question;
  infer->add_option("--checkpoint", infer_ckpt, "checkpoint directory (default: untrained init)")
      ->check(CLI::ExistingDirectory);
  infer->add_option("--image", infer_image, "sample seed, train:<i> or eval:<i>")->required();
  infer->add_option("--question", infer_question, "question text (default: the sample's own)");

  auto* abl = app.add_subcommand("ablate", "train and compare all strategies");
  int abl_seeds = 3, abl_jobs = 1;
  bool abl_sweep = false;
  std::vector<double> abl_ratios;
  std::string abl_json;
  abl->add_option("--seeds", abl_seeds, "number of seeds (0..K-1 offset by --seed)")->check(CLI::PositiveNumber);
  abl->add_flag("--sweep", abl_sweep, "add the expansion sweep {0, 0.2, 0.4, 0.6, 0.8}");
  abl->add_option("--sweep-ratios", abl_ratios, "custom sweep ratios");
  abl->add_option("--jobs", abl_jobs, "parallel training jobs")->check(CLI::PositiveNumber);
  abl->add_option("--json", abl_json, "also write the table as JSON");

  auto* cost = app.add_subcommand("cost-report", "analytic encoder cost per strategy");
  std::string cost_box = "[0.25, 0.25, 0.5, 0.5]";
  cost->add_option("--box", cost_box, "RoI in wire format");

  for (auto* sub : {gen, train, eval, infer, abl, cost}) add_common(sub, f);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    const RunConfig cfg = resolve(f);
    const Vocab vocab;

    if (*gen) {
      std::ofstream file;
      std::ostream* out = &std::cout;
      if (!gen_out.empty()) {
        file.open(gen_out);
        if (!file) throw Error("cannot write " + gen_out);
        out = &file;
      }
      const std::string h = hash_hex(config_hash(cfg));
      for (long i = 0; i < gen_count; ++i) {
        const std::uint64_t seed = gen_split == "train" ? train_sample_seed(cfg.seed, i) : eval_sample_seed(cfg.seed, i);
        const SynthSample s = gen_sample(seed, cfg.task, vocab);
        nlohmann::json j;
        j["seed"] = seed;
        j["cfg_hash"] = h;
        j["question_text"] = s.question_text;
        nlohmann::json boxes = nlohmann::json::array();
        for (const auto& b : s.sample.gt_boxes) boxes.push_back(box_json(b));
        j["gt_boxes"] = boxes;
        j["answer_text"] = s.answer_text;
        *out << j.dump() << "\n";
      }
      return 0;
    }

    if (*train) {
      RunConfig c = cfg;
      if (!train_out.empty()) c.out_dir = train_out;
      if (c.out_dir.empty()) c.out_dir = "runs/train";
      Trainer t(c);
      if (!resume.empty()) t.resume(resume);
      std::filesystem::create_directories(c.out_dir);
      {
        std::ofstream cf(std::filesystem::path(c.out_dir) / "config.txt");
        cf << "# " << hash_line(c) << "\n" << serialize_config(c);
      }
      std::cerr << hash_line(c) << ", " << t.model().params().scalar_count() << " parameters\n";
      t.run([&](long step, double loss) {
        if (step % 100 == 0 || step == c.steps) std::cerr << "step " << step << " loss " << loss << "\n";
      });
      const auto final_dir = std::filesystem::path(c.out_dir) / "final";
      t.save(final_dir);
      std::cerr << "saved " << final_dir.string() << "\n";
      print_metrics(t.evaluate_heldout(c.eval_samples), c, t.step());
      return 0;
    }

    if (*eval) {
      Model<float> model(cfg.model, cfg.seed);
      const CheckpointMeta meta = load_checkpoint(eval_ckpt, model.params(), config_hash(cfg));
      const int n = eval_samples >= 0 ? eval_samples : cfg.eval_samples;
      const auto seeds = eval_split == "eval" ? eval_seed_range(cfg, n) : train_seed_range(cfg, std::min<long>(n, cfg.train_samples));
      GenerateOptions o;
      o.fallback_implicit = cfg.fallback_implicit;
      print_metrics(evaluate(model, cfg.task, seeds, cfg.strategy, o, cfg.deterministic ? 1 : cfg.threads), cfg, meta.step);
      return 0;
    }

    if (*infer) {
      Model<float> model(cfg.model, cfg.seed);
      if (!infer_ckpt.empty()) load_checkpoint(infer_ckpt, model.params(), config_hash(cfg));
      const SynthSample s = gen_sample(image_seed(infer_image, cfg), cfg.task, vocab);
      std::vector<int> q = s.sample.question;
      if (!infer_question.empty()) {
        try {
          q = vocab.encode_words(infer_question);
        } catch (const InvalidInput& e) {
          throw UsageError(std::string("--question: ") + e.what());
        }
      }
      ModelSession<float> session(model);
      GenerateOptions o;
      o.fallback_implicit = cfg.fallback_implicit;
      try {
        const GenerationResult r = grounded_generate(session, s.image, q, cfg.strategy, vocab, o);
        std::cout << hash_line(cfg) << "\n";
        std::cout << "transcript: " << render_transcript(r.transcript, vocab) << "\n";
        for (const auto& b : r.boxes) std::cout << "box: " << serialize_box(b) << "\n";
        if (r.fell_back) std::cout << "box: (unparseable, fell back to implicit attention)\n";
        std::cout << "answer: " << vocab.decode_words(r.answer) << "\n";
        std::cout << "expected: " << s.answer_text << " at " << serialize_box(s.sample.gt_boxes.front()) << "\n";
      } catch (const GroundingFailure& e) {
        std::cerr << "error: " << e.what() << " (raw: '" << e.raw_span() << "')\n";
        return 2;
      }
      return 0;
    }

    if (*abl) {
      std::vector<std::uint64_t> seeds;
      for (int k = 0; k < abl_seeds; ++k) seeds.push_back(cfg.seed + static_cast<std::uint64_t>(k));
      std::vector<double> ratios = abl_ratios;
      if (abl_sweep && ratios.empty()) ratios = {0.0, 0.2, 0.4, 0.6, 0.8};
      const auto rows = ablate(cfg, seeds, ratios, abl_jobs, [](const std::string& s) { std::cerr << s << "\n"; });
      std::cout << "# " << hash_line(cfg) << "\n" << ablation_table(rows);
      if (!abl_json.empty()) {
        std::ofstream jf(abl_json);
        jf << ablation_json(rows, config_hash(cfg)).dump(2) << "\n";
      }
      return 0;
    }

    if (*cost) {
      BBox b;
      try {
        b = parse_box(cost_box);
      } catch (const ParseError& e) {
        throw UsageError(std::string("--box: ") + e.what());
      }
      const BBox one[1] = {b};
      std::cout << "# " << hash_line(cfg) << "\n";
      std::cout << "strategy\tencoder_macs\textra_tokens\tpasses\n";
      for (auto k : {StrategyKind::kImplicitAttention, StrategyKind::kBoxGuidance, StrategyKind::kRoiReencode,
                     StrategyKind::kRoiResample}) {
        Strategy s = Strategy::defaults(k);
        s.squarify = cfg.strategy.squarify;
        s.projector = cfg.strategy.projector;
        const CostReport r = cost_report(s, cfg.model.encoder, one);
        std::cout << strategy_name(k) << "\t" << r.encoder_macs << "\t" << r.extra_visual_tokens << "\t" << r.passes
                  << "\n";
      }
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n" << app.help();
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
