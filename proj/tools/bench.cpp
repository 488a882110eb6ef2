#include <chrono>
#include <cstdio>

#include "vcot/model.hpp"
#include "vcot/synth.hpp"

int main(int argc, char** argv) {
  using namespace vcot;
  ModelConfig mc;
  mc.decoder.model_dim = argc > 1 ? std::atoi(argv[1]) : 64;
  mc.decoder.n_layers = argc > 2 ? std::atoi(argv[2]) : 2;
  mc.decoder.mlp_hidden = 4 * mc.decoder.model_dim;
  mc.encoder.decoder_dim = mc.decoder.model_dim;
  mc.encoder.projector_hidden = 2 * mc.decoder.model_dim;
  Vocab vocab;
  mc.decoder.vocab_size = vocab.size();
  Model<float> model(mc, 1);
  SynthTaskConfig tc;
  for (auto kind : {StrategyKind::kImplicitAttention, StrategyKind::kBoxGuidance, StrategyKind::kRoiResample,
                    StrategyKind::kRoiReencode}) {
    auto t0 = std::chrono::steady_clock::now();
    const int n = 20;
    for (int i = 0; i < n; ++i) {
      SynthSample s = gen_sample(i, tc, vocab);
      Graph<float> g(&model.params());
      auto f = model.forward(g, s.sample, s.image, Strategy::defaults(kind), vocab);
      Grads<float> gr(model.params());
      g.backward(f.loss, &gr);
    }
    auto t1 = std::chrono::steady_clock::now();
    std::printf("%s: %.2f ms/sample\n", std::string(strategy_name(kind)).c_str(),
                std::chrono::duration<double, std::milli>(t1 - t0).count() / n);
  }
  std::printf("params: %zu\n", model.params().scalar_count());
}
