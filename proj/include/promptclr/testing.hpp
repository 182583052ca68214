#pragma once

// Random instance generators shared by the property suite and the tests.

#include <vector>

#include "promptclr/encoder.hpp"
#include "promptclr/losses.hpp"

namespace promptclr::testing {

inline Vector random_unit(Eigen::Index dim, Rng& rng) {
  Vector v(dim);
  for (Eigen::Index i = 0; i < dim; ++i) v(i) = rng.normal();
  return v / v.norm();
}

// 2N features (N anchors, two views each). Class count is drawn in [1, N], so
// singleton classes and all-same-class batches both occur.
inline ContrastiveBatch random_contrastive_batch(Rng& rng, std::size_t max_anchors = 8, Eigen::Index max_dim = 16,
                                                 std::vector<double> temperatures = {0.05, 0.1, 0.5, 1.0}) {
  const std::size_t n = 1 + rng.index(max_anchors);
  const auto dim = static_cast<Eigen::Index>(2 + rng.index(static_cast<std::size_t>(max_dim - 1)));
  const std::size_t classes = 1 + rng.index(n);
  ContrastiveBatch b;
  b.temperature = temperatures[rng.index(temperatures.size())];
  for (std::size_t k = 0; k < n; ++k) {
    const int y = static_cast<int>(rng.index(classes));
    // Views of one anchor sit near each other, as real views do.
    const Vector base = random_unit(dim, rng);
    for (int v = 0; v < 2; ++v) {
      Vector z = base + 0.5 * random_unit(dim, rng);
      b.features.push_back(z / z.norm());
      b.labels.push_back(y);
      b.view_of.push_back(k);
    }
  }
  return b;
}

inline ModelConfig tiny_config(int vocab = 12, int max_len = 8) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = 8;
  c.num_layers = 1;
  c.num_heads = 2;
  c.max_seq_len = max_len;
  c.feedforward_width = 16;
  return c;
}

// [CLS] t... with one [MASK]; ids avoid [PAD] unless allow_pad.
inline PromptedText random_prompt(Rng& rng, int vocab, std::size_t length, bool allow_pad = false) {
  PromptedText p;
  p.token_ids.push_back(Vocabulary::cls_id);
  for (std::size_t i = 1; i < length; ++i) {
    TokenId t = static_cast<TokenId>(5 + rng.index(static_cast<std::size_t>(vocab - 5)));
    if (allow_pad && rng.bernoulli(0.2)) t = Vocabulary::pad_id;
    p.token_ids.push_back(t);
  }
  const auto m = 1 + rng.index(length - 1);
  p.token_ids[m] = Vocabulary::mask_id;
  p.mask_position = m;
  return p;
}

// Random non-trivial parameters (init scale 0.02 makes gradients tiny).
inline Parameters random_params(const ModelConfig& c, Rng& rng, double scale = 0.5) {
  auto p = init_params(c, rng);
  p.for_each([&](const std::string&, Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += rng.normal(0.0, scale);
  });
  return p;
}

}  // namespace promptclr::testing
