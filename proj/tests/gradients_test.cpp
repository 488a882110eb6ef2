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

#include <gtest/gtest.h>

#include "support.hpp"
#include "vcot/model.hpp"

namespace vcot {
namespace {

using testing::fd_check;

struct GradCase {
  StrategyKind kind;
  ProjectorChoice projector;
  SquarifyMode squarify;
  double ratio;
};

class ModelGradientTest : public ::testing::TestWithParam<GradCase> {};

TEST_P(ModelGradientTest, MatchesCentralDifferences) {
  const GradCase gc = GetParam();
  Strategy s = Strategy::defaults(gc.kind);
  s.projector = gc.projector;
  s.squarify = gc.squarify;
  s.expansion_ratio = gc.ratio;
  const Vocab vocab;
  Model<double> model(testing::tiny_model_config(), 3);
  const ImageTensor img = testing::random_image(16, 11);
  ConversationSample sample = testing::tiny_sample(vocab);
  sample.gt_boxes.push_back(BBox{0.5, 0.0, 0.875, 0.3});

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
  int nonzero = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto id = static_cast<ParamId>(i);
    const auto r = fd_check(params, id, grads.g[i], loss);
    EXPECT_LE(r.rel_error, 1e-4) << params.name(id);
    if (r.analytic_norm > 0) ++nonzero;
  }
  EXPECT_GT(nonzero, static_cast<int>(params.size()) / 2);
}

INSTANTIATE_TEST_SUITE_P(
    Strategies, ModelGradientTest,
    ::testing::Values(GradCase{StrategyKind::kImplicitAttention, ProjectorChoice::kShared, SquarifyMode::kPadCrop, 0},
                      GradCase{StrategyKind::kBoxGuidance, ProjectorChoice::kShared, SquarifyMode::kPadCrop, 0},
                      GradCase{StrategyKind::kRoiResample, ProjectorChoice::kShared, SquarifyMode::kPadCrop, 0},
                      GradCase{StrategyKind::kRoiResample, ProjectorChoice::kDedicated, SquarifyMode::kSquareContext,
                               0.4},
                      GradCase{StrategyKind::kRoiReencode, ProjectorChoice::kShared, SquarifyMode::kPadCrop, 0.2},
                      GradCase{StrategyKind::kRoiReencode, ProjectorChoice::kDedicated,
                               SquarifyMode::kSquareContext, 0.6}),
    [](const auto& info) {
      std::string n = std::string(strategy_name(info.param.kind)) + "_" +
                      std::string(projector_name(info.param.projector)) + "_" + std::to_string(info.index);
      std::replace(n.begin(), n.end(), '-', '_');
      return n;
    });

}  // namespace
}  // namespace vcot
