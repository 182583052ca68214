#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "promptclr/augment.hpp"
#include "promptclr/evaluation.hpp"
#include "promptclr/gradcheck.hpp"
#include "promptclr/losses.hpp"
#include "promptclr/testing.hpp"
#include "promptclr/trainer.hpp"

namespace promptclr {

struct PropertyResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct OracleOptions {
  std::uint64_t seed = 2022;
  // Multiplies every temperature by -1; the suite must then report failures.
  bool corrupt_temperature = false;
};

namespace oracle {

inline std::string fmt(double v) {
  std::ostringstream s;
  s.precision(3);
  s << std::scientific << v;
  return s.str();
}

// Worst tensor-wise relative error of backward() against central differences
// for loss = MLM label-word loss + sum(R .* hidden) on a random tiny model.
inline double encoder_gradient_error(Rng& rng, bool with_dropout = false) {
  auto cfg = testing::tiny_config();
  if (with_dropout) cfg.dropout = 0.2;
  const auto params = testing::random_params(cfg, rng);
  const std::size_t len = 3 + rng.index(4);  // L <= 6
  const auto prompt = testing::random_prompt(rng, cfg.vocab_size, len, true);
  const std::vector<TokenId> label_ids{5, 6};
  const int gold = static_cast<int>(rng.index(2));
  Matrix weights(static_cast<Eigen::Index>(len), cfg.d_model);
  for (Eigen::Index i = 0; i < weights.size(); ++i) weights.data()[i] = rng.normal();
  const std::uint64_t drop_seed = rng.next();

  const auto loss = [&](const Parameters& p) {
    Rng drop(drop_seed);
    const auto c = forward_cached(p, prompt.token_ids, with_dropout, &drop);
    const auto logits = label_word_logits(c.hidden, prompt, label_ids, p);
    return mlm_loss_from_logits({logits}, {gold}).loss + (weights.array() * c.hidden.array()).sum();
  };

  Rng drop(drop_seed);
  const auto cache = forward_cached(params, prompt.token_ids, with_dropout, &drop);
  Parameters grads = params.zeros_like();
  const auto logits = label_word_logits(cache.hidden, prompt, label_ids, params);
  const auto mlm = mlm_loss_from_logits({logits}, {gold});
  Matrix dh = weights;
  const auto row = static_cast<Eigen::Index>(*prompt.mask_position);
  for (std::size_t y = 0; y < label_ids.size(); ++y) {
    const double g = mlm.dlogits[0](static_cast<Eigen::Index>(y));
    dh.row(row) += g * params.output_words.row(label_ids[y]);
    grads.output_words.row(label_ids[y]) += g * cache.hidden.row(row);
  }
  backward(params, cache, dh, grads);
  double worst = 0.0;
  for (const auto& t : check_parameter_gradients(params, grads, loss)) worst = std::max(worst, t.error);
  return worst;
}

// Relative error of the contrastive gradient pulled back through L2
// normalization to raw (unnormalized) features.
inline double contrastive_gradient_error(Rng& rng, ContrastiveKind kind) {
  auto batch = testing::random_contrastive_batch(rng);
  const auto dim = batch.features.front().size();
  const auto n = batch.size();
  Vector raw(static_cast<Eigen::Index>(n) * dim);
  for (std::size_t i = 0; i < n; ++i)
    raw.segment(static_cast<Eigen::Index>(i) * dim, dim) = batch.features[i] * (0.5 + rng.uniform());
  const auto loss_at = [&](const Vector& x, bool grad) {
    auto b = batch;
    for (std::size_t i = 0; i < n; ++i) {
      const Vector h = x.segment(static_cast<Eigen::Index>(i) * dim, dim);
      b.features[i] = h / h.norm();
    }
    return contrastive_loss(b, kind, grad);
  };
  const auto res = loss_at(raw, true);
  Vector analytic(raw.size());
  for (std::size_t i = 0; i < n; ++i) {
    const Vector h = raw.segment(static_cast<Eigen::Index>(i) * dim, dim);
    analytic.segment(static_cast<Eigen::Index>(i) * dim, dim) = normalize_backward(h, res.gradient[i]);
  }
  const auto numeric = numeric_gradient([&](const Vector& x) { return loss_at(x, false).loss; }, raw);
  // Nearly solved batches have gradients down at finite-difference round-off.
  return relative_error(analytic, numeric, kGradientFloor);
}

inline double mlm_gradient_error(Rng& rng) {
  const std::size_t n = 1 + rng.index(6);
  const std::size_t classes = 2 + rng.index(4);
  std::vector<Vector> logits;
  std::vector<int> golds;
  for (std::size_t i = 0; i < n; ++i) {
    Vector z(static_cast<Eigen::Index>(classes));
    for (Eigen::Index c = 0; c < z.size(); ++c) z(c) = 2.0 * rng.normal();
    logits.push_back(z);
    golds.push_back(static_cast<int>(rng.index(classes)));
  }
  const auto res = mlm_loss_from_logits(logits, golds);
  Vector flat(static_cast<Eigen::Index>(n * classes)), analytic(flat.size());
  for (std::size_t i = 0; i < n; ++i) {
    flat.segment(static_cast<Eigen::Index>(i * classes), static_cast<Eigen::Index>(classes)) = logits[i];
    analytic.segment(static_cast<Eigen::Index>(i * classes), static_cast<Eigen::Index>(classes)) = res.dlogits[i];
  }
  const auto f = [&](const Vector& x) {
    std::vector<Vector> l;
    for (std::size_t i = 0; i < n; ++i)
      l.push_back(x.segment(static_cast<Eigen::Index>(i * classes), static_cast<Eigen::Index>(classes)));
    std::vector<Vector> probs;
    for (const auto& z : l) probs.push_back(softmax(z));
    return mlm_loss(probs, golds);
  };
  return relative_error(analytic, numeric_gradient(f, flat));
}

// Checks the strategy contract and main-input preservation on one pair.
inline std::string view_contract_violation(const ViewPair& p, const Example& e, ViewStrategy s) {
  const bool same_template = p.view1.source_template_id == p.view2.source_template_id;
  bool demos_all_differ = p.view1.demo_ids.size() == p.view2.demo_ids.size();
  for (std::size_t c = 0; demos_all_differ && c < p.view1.demo_ids.size(); ++c)
    demos_all_differ = p.view1.demo_ids[c] != p.view2.demo_ids[c];
  const bool demos_equal = p.view1.demo_ids == p.view2.demo_ids;
  if (p.label != e.label) return "label changed";
  if (p.view1.main_tokens() != p.view2.main_tokens()) return "main input differs between views";
  if (p.view1.source_example_id != e.id || p.view2.source_example_id != e.id) return "source id mismatch";
  switch (s) {
    case ViewStrategy::demo_and_temp:
      if (same_template || !demos_all_differ) return "demo_and_temp: template or demonstrations unchanged";
      break;
    case ViewStrategy::temp_only:
      if (same_template || !demos_equal) return "temp_only: contract broken";
      break;
    case ViewStrategy::demo_only:
      if (!same_template || !demos_all_differ) return "demo_only: contract broken";
      break;
  }
  for (const auto* v : {&p.view1, &p.view2}) {
    std::size_t masks = 0;
    for (const auto id : v->token_ids) masks += id == Vocabulary::mask_id ? 1 : 0;
    if (masks != 1 || !v->mask_position || v->token_ids[*v->mask_position] != Vocabulary::mask_id)
      return "mask not unique";
    if (v->token_ids.front() != Vocabulary::cls_id) return "missing [CLS]";
  }
  return {};
}

struct ViewFixture {
  std::vector<Example> pool;
  TemplateBank bank;
  Verbalizer verbalizer;
  Vocabulary vocab;
};

inline ViewFixture view_fixture(Rng& rng) {
  ViewFixture f;
  auto task = generate_synthetic_task(2, 16, 40, 0.9, rng);
  f.pool = task.examples;
  const auto lines = [] {
    std::vector<std::string> v{"<S1> It was [MASK] .", "<S1> This is [MASK] .", "<S1> A truly [MASK] one .",
                               "[MASK] : <S1>"};
    return v;
  }();
  f.bank.primary = {0, lines[0]};
  for (std::size_t i = 1; i < lines.size(); ++i) f.bank.auxiliary.push_back({static_cast<int>(i), lines[i]});
  f.verbalizer.words = {"terrible", "great"};
  std::vector<std::string> texts = lines;
  for (const auto& e : f.pool) texts.push_back(e.text1);
  texts.insert(texts.end(), {"terrible", "great"});
  f.vocab = Vocabulary::from_texts(texts);
  return f;
}

}  // namespace oracle

// Runs every property and reports pass/fail per property. Deterministic for a
// fixed seed.
inline std::vector<PropertyResult> run_property_suite(const OracleOptions& opts = {}) {
  std::vector<PropertyResult> out;
  const auto check = [&](const std::string& name, const std::function<std::string(Rng&)>& body) {
    Rng rng(detail::mix_seed(opts.seed, std::hash<std::string>{}(name)));
    PropertyResult r{name, false, {}};
    try {
      r.detail = body(rng);
      r.passed = r.detail.rfind("FAIL", 0) != 0;
    } catch (const std::exception& e) {
      r.detail = std::string("FAIL: ") + e.what();
    }
    out.push_back(std::move(r));
  };
  const double tsign = opts.corrupt_temperature ? -1.0 : 1.0;

  check("supcon_oracle_equivalence", [&](Rng& rng) {
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
      auto b = testing::random_contrastive_batch(rng);
      b.temperature *= tsign;
      for (auto kind : {ContrastiveKind::supcon, ContrastiveKind::simclr})
        worst = std::max(worst, std::abs(contrastive_loss(b, kind, false).loss - supcon_bruteforce(b, kind)));
    }
    return std::string(worst <= 1e-6 ? "" : "FAIL ") + "max |production - oracle| = " + oracle::fmt(worst);
  });

  check("supcon_closed_form", [&](Rng&) {
    const Vector e1 = Vector::Unit(2, 0), e2 = Vector::Unit(2, 1);
    const auto pair = ContrastiveBatch::from_views({e1}, {e1}, {0}, tsign * 1.0);
    const auto four = ContrastiveBatch::from_views({e1, e2}, {e1, e2}, {0, 1}, tsign * 1.0);
    const double v2 = supcon_loss(pair, false).loss;
    const double v4 = supcon_loss(four, false).loss;
    const double expect = std::log(1.0 + 2.0 / std::exp(1.0));
    const bool ok = v2 == 0.0 && std::abs(v4 - expect) <= 1e-6 && std::abs(supcon_bruteforce(four) - expect) <= 1e-6;
    return std::string(ok ? "" : "FAIL ") + "pair=" + oracle::fmt(v2) + " four=" + oracle::fmt(v4);
  });

  check("contrastive_permutation_invariance", [&](Rng& rng) {
    double worst = 0.0;
    for (int t = 0; t < 50; ++t) {
      auto b = testing::random_contrastive_batch(rng);
      b.temperature *= tsign;
      std::vector<std::size_t> perm(b.size());
      for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
      rng.shuffle(perm);
      ContrastiveBatch p = b;
      for (std::size_t i = 0; i < perm.size(); ++i) {
        p.features[i] = b.features[perm[i]];
        p.labels[i] = b.labels[perm[i]];
        p.view_of[i] = b.view_of[perm[i]];
      }
      for (auto kind : {ContrastiveKind::supcon, ContrastiveKind::simclr})
        worst = std::max(worst, std::abs(contrastive_loss(b, kind, false).loss - contrastive_loss(p, kind, false).loss));
    }
    return std::string(worst <= 1e-6 ? "" : "FAIL ") + "max change = " + oracle::fmt(worst);
  });

  check("temperature_sharpening", [&](Rng& rng) {
    int sharper = 0, total = 0;
    while (total < 100) {
      auto b = testing::random_contrastive_batch(rng);
      b.temperature *= tsign;
      const auto base = within_anchor_dispersion(supcon_loss(b, false));
      if (!base) continue;
      auto half = b;
      half.temperature /= 2.0;
      const auto sharp = within_anchor_dispersion(supcon_loss(half, false));
      sharper += *sharp > *base ? 1 : 0;
      ++total;
    }
    return std::string(sharper >= 95 ? "" : "FAIL ") + std::to_string(sharper) + "/100 batches sharper at tau/2";
  });

  for (auto kind : {ContrastiveKind::supcon, ContrastiveKind::simclr}) {
    const std::string name = kind == ContrastiveKind::supcon ? "supcon_gradient" : "simclr_gradient";
    check(name, [&, kind](Rng& rng) {
      if (opts.corrupt_temperature) {
        auto b = testing::random_contrastive_batch(rng);
        b.temperature *= -1.0;
        (void)contrastive_loss(b, kind);
      }
      double worst = 0.0;
      for (int t = 0; t < 20; ++t) worst = std::max(worst, oracle::contrastive_gradient_error(rng, kind));
      return std::string(worst < 1e-4 ? "" : "FAIL ") + "max relative error = " + oracle::fmt(worst);
    });
  }

  check("mlm_gradient", [&](Rng& rng) {
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) worst = std::max(worst, oracle::mlm_gradient_error(rng));
    return std::string(worst < 1e-4 ? "" : "FAIL ") + "max relative error = " + oracle::fmt(worst);
  });

  check("encoder_gradient", [&](Rng& rng) {
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) worst = std::max(worst, oracle::encoder_gradient_error(rng, t % 4 == 3));
    return std::string(worst < 1e-4 ? "" : "FAIL ") + "max relative error = " + oracle::fmt(worst);
  });

  check("label_word_normalization", [&](Rng& rng) {
    const auto cfg = testing::tiny_config();
    double worst = 0.0;
    Parameters params;
    for (int t = 0; t < 1000; ++t) {
      if (t % 100 == 0) params = testing::random_params(cfg, rng, 1.0);
      const auto prompt = testing::random_prompt(rng, cfg.vocab_size, 2 + rng.index(6));
      const std::vector<TokenId> labels{5, 6, 7};
      const auto p = label_word_distribution(forward(params, prompt.token_ids), prompt, labels, params);
      worst = std::max(worst, std::abs(p.sum() - 1.0));
      if ((p.array() <= 0.0).any()) return std::string("FAIL non-positive probability");
    }
    return std::string(worst <= 1e-6 ? "" : "FAIL ") + "max |sum - 1| = " + oracle::fmt(worst);
  });

  check("representation_unit_norm", [&](Rng& rng) {
    const auto cfg = testing::tiny_config();
    const auto params = testing::random_params(cfg, rng, 1.0);
    double worst = 0.0;
    for (int t = 0; t < 200; ++t) {
      const auto prompt = testing::random_prompt(rng, cfg.vocab_size, 2 + rng.index(6));
      const auto hidden = forward(params, prompt.token_ids);
      for (auto mode : {Representation::mask_token, Representation::cls_token})
        worst = std::max(worst, std::abs(extract_representation(hidden, prompt, mode).norm() - 1.0));
    }
    return std::string(worst <= 1e-6 ? "" : "FAIL ") + "max |norm - 1| = " + oracle::fmt(worst);
  });

  check("augmentation_contracts", [&](Rng& rng) {
    std::map<std::string, std::vector<std::string>> lex;
    for (int i = 0; i < 20; i += 2) {
      lex["t" + std::to_string(i)] = {"t" + std::to_string(i + 1)};
      lex["t" + std::to_string(i + 1)] = {"t" + std::to_string(i)};
    }
    const SynonymLexicon lexicon(lex);
    for (int t = 0; t < 500; ++t) {
      Tokens toks;
      const std::size_t len = 1 + rng.index(15);
      for (std::size_t i = 0; i < len; ++i) toks.push_back("t" + std::to_string(rng.index(30)));
      const double alpha = rng.bernoulli(0.5) ? 0.1 : 0.2;
      const auto n = edit_count(alpha, len);
      const auto sr = synonym_replacement(toks, alpha, lexicon, rng);
      if (sr.tokens.size() != len) return std::string("FAIL SR changed length");
      const auto ri = random_insertion(toks, alpha, lexicon, rng);
      if (!ri.no_op && ri.tokens.size() != len + n) return std::string("FAIL RI inserted wrong count");
      const auto rs = random_swap(toks, alpha, rng);
      auto a = rs.tokens, b = toks;
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      if (a != b) return std::string("FAIL RS not a permutation");
      if (random_deletion(toks, alpha, rng).tokens.size() > len) return std::string("FAIL RD grew input");
    }
    return std::string("500 random inputs");
  });

  check("view_contracts", [&](Rng& rng) {
    const auto fx = oracle::view_fixture(rng);
    for (auto s : {ViewStrategy::demo_and_temp, ViewStrategy::temp_only, ViewStrategy::demo_only})
      for (int t = 0; t < 1000; ++t) {
        const auto& e = fx.pool[rng.index(fx.pool.size())];
        const auto pair = build_view_pair(e, fx.bank, fx.pool, s, fx.verbalizer, fx.vocab, rng);
        if (auto why = oracle::view_contract_violation(pair, e, s); !why.empty()) return "FAIL " + why;
      }
    return std::string("3000 view pairs");
  });

  check("metrics", [&](Rng&) {
    // TP=3, FP=1, FN=2, TN=4
    const std::vector<int> preds{1, 1, 1, 1, 0, 0, 0, 0, 0, 0};
    const std::vector<int> golds{1, 1, 1, 0, 1, 1, 0, 0, 0, 0};
    const double f1 = compute_metric(Metric::f1, preds, golds);
    const double mcc = compute_metric(Metric::matthews, preds, golds);
    const double mcc_expect = (3.0 * 4.0 - 1.0 * 2.0) / std::sqrt(4.0 * 5.0 * 5.0 * 6.0);
    const auto agg = aggregate_runs({89.2, 90.6, 88.4, 89.9, 90.4});
    const bool ok = std::abs(f1 - 2.0 * 0.75 * 0.6 / 1.35) < 1e-4 && std::abs(mcc - mcc_expect) < 1e-4 &&
                    std::abs(agg.mean - 89.7) < 1e-9;
    return std::string(ok ? "" : "FAIL ") + "f1=" + oracle::fmt(f1) + " mcc=" + oracle::fmt(mcc);
  });
  return out;
}

}  // namespace promptclr
