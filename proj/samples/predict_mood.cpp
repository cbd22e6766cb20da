// Library walk-through: generate a small synthetic corpus, pre-train a tiny
// encoder, prompt-tune it with sleep input and print a cross-validated score.
//
//   ./build/sample_predict_mood

#include <iostream>

#include "naptune/naptune.hpp"

int main() {
  using namespace naptune;

  GeneratorConfig gen;
  gen.n_subjects = 12;
  gen.windows_per_subject = 8;
  gen.nights_per_subject = 4;
  gen.seed = 42;
  const Dataset data = gen_dataset(gen);

  EncoderConfig enc;
  enc.conv.channels = 8;
  enc.conv.groupnorm_groups = 2;
  enc.conv.linear_dim = 16;
  enc.transformer.layers = 2;
  enc.transformer.dim = 16;
  enc.transformer.heads = 2;
  enc.transformer.ff_dim = 32;

  // Contrastive pre-training only sees the unlabeled windows.
  std::vector<std::vector<float>> windows;
  for (const auto& r : data.records) windows.push_back(r.window.samples);
  PretrainConfig pre;
  pre.epochs = 3;
  pre.batch_size = 16;
  pre.lr = 1e-3;
  pre.projection_dim = 16;
  pre.cosine_similarity = true;
  pre.seed = 42;
  auto pretrained = pretrain(windows, enc, pre);
  std::cout << "pre-training loss " << pretrained.curve.front().loss << " -> " << pretrained.curve.back().loss << "\n";

  ExperimentSpec spec;
  spec.encoder = enc;
  spec.tune.mode = TuneMode::NapTune;
  spec.tune.epochs = 5;
  spec.tune.base_lr = 3e-3;
  spec.tune.batch_size = 16;
  spec.tune.sleep_hidden = 16;
  spec.pretrained = pretrained.encoder;
  spec.seed = 42;
  const auto cv = cross_validate(data, spec);

  for (const auto& fold : cv.folds) {
    std::cout << "fold " << fold.fold << ": " << fold.n_train << " train / " << fold.n_test << " test records, F1 "
              << fold.metrics.weighted_f1 << "\n";
  }
  std::cout << "weighted F1 " << cv.aggregate.weighted_f1 << ", mean accuracy " << cv.aggregate.mean_accuracy << "\n";
}
