#pragma once

#include <chrono>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "promptclr/augment.hpp"
#include "promptclr/corpus.hpp"
#include "promptclr/encoder.hpp"
#include "promptclr/losses.hpp"
#include "promptclr/optimizer.hpp"
#include "promptclr/prompting.hpp"

namespace promptclr {

enum class StepMode { sequential, joint };

inline std::string to_string(StepMode m) { return m == StepMode::sequential ? "sequential" : "joint"; }

inline StepMode parse_step_mode(const std::string& s) {
  if (s == "sequential") return StepMode::sequential;
  if (s == "joint") return StepMode::joint;
  throw ConfigError("unknown step mode '" + s + "'");
}

// Where view2 comes from: a resampled prompt, or EDA applied to the main input.
enum class ViewSource { prompt, eda };

inline std::string to_string(ViewSource v) { return v == ViewSource::prompt ? "prompt" : "eda"; }

inline ViewSource parse_view_source(const std::string& s) {
  if (s == "prompt") return ViewSource::prompt;
  if (s == "eda") return ViewSource::eda;
  throw ConfigError("unknown view source '" + s + "'");
}

struct TrainConfig {
  long max_steps = 1000;
  std::size_t batch_size = 16;
  double lr_mlm = 3e-4;
  double lr_supcon = 3e-4;
  LossMode loss_mode = LossMode::supcon;
  StepMode step_mode = StepMode::sequential;
  ViewStrategy view_strategy = ViewStrategy::demo_and_temp;
  ViewSource view_source = ViewSource::prompt;
  double eda_alpha = 0.1;
  Representation representation = Representation::mask_token;
  double temperature = 0.1;
  double contrastive_weight = 1.0;
  bool with_demos = true;
  bool resample_demos = true;
  std::size_t max_seq_len = 128;
  std::uint64_t seed = 42;

  bool contrastive() const { return loss_mode != LossMode::none; }

  void validate() const {
    if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
    if (!(lr_mlm > 0.0)) throw ConfigError("lr_mlm must be positive");
    if (!(lr_supcon >= 0.0)) throw ConfigError("lr_supcon must be non-negative");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (contrastive() && batch_size < 2) throw ConfigError("contrastive training needs batch_size >= 2");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
    if (view_source == ViewSource::eda && !(eda_alpha > 0.0 && eda_alpha <= 1.0))
      throw ConfigError("eda_alpha must lie in (0, 1]");
  }
};

struct StepRecord {
  long step = 0;
  double mlm_loss = 0.0;
  std::optional<double> contrastive_loss;
  int forward_count = 0;
  int backward_count = 0;
  double wall_time = 0.0;
};

inline nlohmann::json to_json(const StepRecord& r) {
  nlohmann::json j = {{"step", r.step},
                      {"mlm_loss", r.mlm_loss},
                      {"contrastive_loss", nullptr},
                      {"forward_count", r.forward_count},
                      {"backward_count", r.backward_count},
                      {"wall_time", r.wall_time}};
  if (r.contrastive_loss) j["contrastive_loss"] = *r.contrastive_loss;
  return j;
}

struct TrainLog {
  std::vector<StepRecord> records;

  // JSON lines; every `every`-th step plus the last one.
  void write_jsonl(std::ostream& out, long every = 1) const {
    if (every < 1) every = 1;
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& r = records[i];
      if (r.step % every == 0 || i + 1 == records.size()) out << to_json(r).dump() << '\n';
    }
  }
};

// Everything a training run reads but never modifies.
struct TrainingContext {
  const TemplateBank& bank;
  const Verbalizer& verbalizer;
  const Vocabulary& vocab;
  const SynonymLexicon* lexicon = nullptr;
};

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9e3779b97f4a7c15ULL + b + 0x632be59bd9b4e5f5ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct PassOutput {
  std::vector<ForwardCache> caches;
};

inline PassOutput forward_views(const Parameters& params, const std::vector<const PromptedText*>& views,
                                std::uint64_t dropout_seed) {
  PassOutput out;
  Rng drop(dropout_seed);
  Rng* drng = params.config.dropout > 0.0 ? &drop : nullptr;
  for (const auto* v : views) out.caches.push_back(forward_cached(params, v->token_ids, drng != nullptr, drng));
  return out;
}

// MLM loss on the label words at [MASK]; gradients go to `grads`.
inline double mlm_backward(const Parameters& params, const std::vector<const PromptedText*>& views,
                           const PassOutput& pass, const std::vector<int>& golds,
                           const std::vector<TokenId>& label_ids, Parameters& grads, double weight = 1.0) {
  std::vector<Vector> logits;
  for (std::size_t i = 0; i < views.size(); ++i)
    logits.push_back(label_word_logits(pass.caches[i].hidden, *views[i], label_ids, params));
  const auto res = mlm_loss_from_logits(logits, golds);
  for (std::size_t i = 0; i < views.size(); ++i) {
    const auto& cache = pass.caches[i];
    const auto row = static_cast<Eigen::Index>(*views[i]->mask_position);
    Matrix dh = Matrix::Zero(cache.hidden.rows(), cache.hidden.cols());
    for (std::size_t y = 0; y < label_ids.size(); ++y) {
      const double g = weight * res.dlogits[i](static_cast<Eigen::Index>(y));
      dh.row(row) += g * params.output_words.row(label_ids[y]);
      grads.output_words.row(label_ids[y]) += g * cache.hidden.row(row);
    }
    backward(params, cache, dh, grads);
  }
  return res.loss;
}

inline Vector raw_representation(const ForwardCache& cache, const PromptedText& view, Representation mode) {
  return cache.hidden.row(static_cast<Eigen::Index>(representation_row(view, mode))).transpose();
}

inline void feature_backward(const Parameters& params, const ForwardCache& cache, const PromptedText& view,
                             Representation mode, const Vector& dz, Parameters& grads) {
  const auto row = static_cast<Eigen::Index>(representation_row(view, mode));
  const Vector h = cache.hidden.row(row).transpose();
  Matrix dh = Matrix::Zero(cache.hidden.rows(), cache.hidden.cols());
  dh.row(row) = normalize_backward(h, dz).transpose();
  backward(params, cache, dh, grads);
}

}  // namespace detail

// Owns the mutable state of one run: parameters, optimizer, random streams.
class Trainer {
 public:
  Trainer(Parameters params, const FewShotSplit& split, TrainingContext ctx, TrainConfig config)
      : params_(std::move(params)),
        split_(split),
        ctx_(ctx),
        config_(config),
        adam_(params_),
        rng_(detail::mix_seed(config.seed, 1)),
        label_ids_(ctx.verbalizer.label_ids(ctx.vocab)) {
    config_.validate();
    if (split_.train.empty()) throw ArgumentError("training split is empty");
    if (config_.batch_size > split_.train.size())
      throw ConfigError("batch_size " + std::to_string(config_.batch_size) + " exceeds train size " +
                        std::to_string(split_.train.size()));
    if (config_.view_source == ViewSource::eda && ctx_.lexicon == nullptr)
      throw ConfigError("EDA views need a synonym lexicon");
  }

  const Parameters& params() const { return params_; }
  Parameters& params() { return params_; }
  const TrainLog& log() const { return log_; }

  ViewPair make_views(const Example& e) {
    ViewOptions opts;
    opts.prompt.with_demos = config_.with_demos;
    opts.prompt.max_seq_len = std::min<std::size_t>(config_.max_seq_len, params_.config.max_seq_len);
    if (!config_.resample_demos) opts.view1_demo_seed = detail::mix_seed(config_.seed, static_cast<std::uint64_t>(e.id));
    if (config_.view_source == ViewSource::eda)
      return build_eda_view_pair(e, ctx_.bank, split_.train, ctx_.verbalizer, ctx_.vocab, *ctx_.lexicon,
                                 config_.eda_alpha, rng_, opts);
    // The MLM-only baseline never looks at view2, so it may run without
    // auxiliary templates; everything else consumes the stream identically.
    if (!config_.contrastive() && config_.view_strategy != ViewStrategy::demo_only && ctx_.bank.auxiliary.empty()) {
      ViewPair p;
      std::vector<Demonstration> demos;
      if (config_.with_demos) {
        const auto eligible = eligible_demos(e, split_.train, ctx_.verbalizer.num_classes());
        if (opts.view1_demo_seed) {
          Rng fixed(*opts.view1_demo_seed);
          demos = sample_demonstrations(eligible, fixed);
        } else {
          demos = sample_demonstrations(eligible, rng_);
        }
      }
      p.label = e.label;
      p.view1 = assemble_prompt(e, ctx_.bank.primary, demos, ctx_.verbalizer, ctx_.vocab, opts.prompt);
      p.view2 = p.view1;
      return p;
    }
    return build_view_pair(e, ctx_.bank, split_.train, config_.view_strategy, ctx_.verbalizer, ctx_.vocab, rng_,
                           opts);
  }

  // One iteration on the given batch.
  StepRecord iteration(const std::vector<Example>& batch) {
    const long step = next_step_++;
    StepRecord rec;
    rec.step = step;

    std::vector<ViewPair> pairs;
    for (const auto& e : batch) pairs.push_back(make_views(e));
    std::vector<const PromptedText*> view1, view2;
    std::vector<int> golds;
    for (const auto& p : pairs) {
      view1.push_back(&p.view1);
      view2.push_back(&p.view2);
      golds.push_back(p.label);
    }
    const auto drop_seed = [&](std::uint64_t pass) {
      return detail::mix_seed(detail::mix_seed(config_.seed, static_cast<std::uint64_t>(step)), pass);
    };

    if (!config_.contrastive()) {
      auto pass1 = detail::forward_views(params_, view1, drop_seed(1));
      Parameters grads = params_.zeros_like();
      rec.mlm_loss = detail::mlm_backward(params_, view1, pass1, golds, label_ids_, grads);
      rec.forward_count = rec.backward_count = 1;
      check_finite(rec.mlm_loss, step);
      adam_.step(params_, grads, config_.lr_mlm);
    } else if (config_.step_mode == StepMode::sequential) {
      // MLM step on view1.
      auto pass1 = detail::forward_views(params_, view1, drop_seed(1));
      Parameters grads = params_.zeros_like();
      rec.mlm_loss = detail::mlm_backward(params_, view1, pass1, golds, label_ids_, grads);
      ++rec.forward_count;
      ++rec.backward_count;
      check_finite(rec.mlm_loss, step);
      // view1's graph was built with these tensors; its SupCon gradient is
      // taken through them even though the update lands on the new ones.
      const Parameters pre_step = params_;
      adam_.step(params_, grads, config_.lr_mlm);

      // Contrastive step: view2 under the updated parameters.
      auto pass2 = detail::forward_views(params_, view2, drop_seed(2));
      ++rec.forward_count;
      Parameters cgrads = params_.zeros_like();
      rec.contrastive_loss = contrastive_backward(pre_step, pass1, params_, pass2, view1, view2, golds, cgrads);
      ++rec.backward_count;
      check_finite(*rec.contrastive_loss, step);
      adam_.step(params_, cgrads, config_.lr_supcon);
    } else {
      // Joint: one pass over both views, one step on L_MLM + w * L_con.
      auto pass1 = detail::forward_views(params_, view1, drop_seed(1));
      auto pass2 = detail::forward_views(params_, view2, drop_seed(2));
      Parameters grads = params_.zeros_like();
      rec.mlm_loss = detail::mlm_backward(params_, view1, pass1, golds, label_ids_, grads);
      rec.contrastive_loss = contrastive_backward(params_, pass1, params_, pass2, view1, view2, golds, grads);
      rec.forward_count = rec.backward_count = 1;
      check_finite(rec.mlm_loss, step);
      check_finite(*rec.contrastive_loss, step);
      adam_.step(params_, grads, config_.lr_mlm);
    }
    if (!params_.all_finite()) throw DivergenceError("non-finite parameters", step);
    rec.wall_time = elapsed();
    log_.records.push_back(rec);
    return rec;
  }

  // Runs max_steps iterations, sampling each batch from the train split.
  void run() {
    for (long s = 0; s < config_.max_steps; ++s) iteration(sample_batch(split_, config_.batch_size, rng_));
  }

 private:
  double contrastive_backward(const Parameters& params1, const detail::PassOutput& pass1, const Parameters& params2,
                              const detail::PassOutput& pass2, const std::vector<const PromptedText*>& view1,
                              const std::vector<const PromptedText*>& view2, const std::vector<int>& golds,
                              Parameters& grads) {
    std::vector<Vector> z1, z2;
    for (std::size_t i = 0; i < view1.size(); ++i) {
      z1.push_back(extract_representation(pass1.caches[i].hidden, *view1[i], config_.representation));
      z2.push_back(extract_representation(pass2.caches[i].hidden, *view2[i], config_.representation));
    }
    const auto batch = ContrastiveBatch::from_views(z1, z2, golds, config_.temperature);
    const auto kind = config_.loss_mode == LossMode::simclr ? ContrastiveKind::simclr : ContrastiveKind::supcon;
    const auto res = contrastive_loss(batch, kind, true);
    for (std::size_t i = 0; i < view1.size(); ++i) {
      const Vector g1 = config_.contrastive_weight * res.gradient[2 * i];
      const Vector g2 = config_.contrastive_weight * res.gradient[2 * i + 1];
      detail::feature_backward(params1, pass1.caches[i], *view1[i], config_.representation, g1, grads);
      detail::feature_backward(params2, pass2.caches[i], *view2[i], config_.representation, g2, grads);
    }
    return res.loss;
  }

  static void check_finite(double loss, long step) {
    if (!std::isfinite(loss)) throw DivergenceError("non-finite loss", step);
  }

  double elapsed() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

  Parameters params_;
  const FewShotSplit& split_;
  TrainingContext ctx_;
  TrainConfig config_;
  Adam adam_;
  Rng rng_;
  std::vector<TokenId> label_ids_;
  TrainLog log_;
  long next_step_ = 0;
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

struct TrainResult {
  Parameters params;
  TrainLog log;
};

inline TrainResult train(Parameters params, const FewShotSplit& split, TrainingContext ctx, const TrainConfig& config) {
  Trainer trainer(std::move(params), split, ctx, config);
  trainer.run();
  return {trainer.params(), trainer.log()};
}

}  // namespace promptclr
