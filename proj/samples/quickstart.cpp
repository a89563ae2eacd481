// Train a small classifier on synthetic blobs, explain one input with RelEx
// and a gradient baseline, then attack it and explain again.

#include <cstdio>

#include "relex/attack.hpp"
#include "relex/builders.hpp"
#include "relex/dataset.hpp"
#include "relex/explain.hpp"
#include "relex/metrics.hpp"
#include "relex/train.hpp"

int main() {
  using namespace relex;

  SyntheticSpec spec;
  spec.seed = 1;
  const LabeledDataset train = generate_synthetic(spec);
  spec.seed = 2;
  spec.per_class = 5;
  const LabeledDataset test = generate_synthetic(spec);

  TrainConfig tc;
  tc.epochs = 15;
  const TrainResult tr = train_classifier(train, make_mlp({1, 8, 8}, {32}, spec.classes, 3), tc);
  std::printf("train accuracy %.3f, test accuracy %.3f\n", tr.train_accuracy, accuracy(tr.model, test));

  const Tensor& x0 = test.images[0];
  const ClassId c = test.labels[0];
  const SaliencyMap m = relex::relex(tr.model, x0, c);
  const SaliencyMap g = simgrad(tr.model, x0, c);
  auto yn = [](bool b) { return b ? "yes" : "no"; };
  std::printf("clean:       label %zu; explanation keeps it? relex %s (|m|_1 = %.2f), simgrad %s\n", c.index,
              yn(retrieval_hit(tr.model, x0, m, c)), m.l1(), yn(retrieval_hit(tr.model, x0, g, c)));

  PGDConfig pc;
  pc.epsilon = 0.42;
  pc.step_size = 0.0021;
  pc.seed = 7;
  const Tensor xa = pgd_untargeted(tr.model, x0, c, pc);
  const SaliencyMap ma = relex::relex(tr.model, xa, c);
  const SaliencyMap ga = simgrad(tr.model, xa, c);
  std::printf("adversarial: prediction %zu; explanation retrieves label %zu? relex %s, simgrad %s\n",
              predict(tr.model, xa).index, c.index, yn(retrieval_hit(tr.model, xa, ma, c)),
              yn(retrieval_hit(tr.model, xa, ga, c)));

  for (std::size_t r = 0; r < 8; ++r) {
    for (std::size_t q = 0; q < 8; ++q) std::printf("%c", " .:-=+*#"[static_cast<int>(m[r * 8 + q] * 7.999)]);
    std::printf("\n");
  }
}
