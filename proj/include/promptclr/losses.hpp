#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "promptclr/common.hpp"
#include "promptclr/encoder.hpp"

namespace promptclr {

// --- MLM label-word cross-entropy ---------------------------------------------

// Mean over the batch of -log p(gold).
inline double mlm_loss(const std::vector<Vector>& probs, const std::vector<int>& golds) {
  if (probs.size() != golds.size() || probs.empty()) throw ArgumentError("mlm_loss: probs/golds size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const auto& p = probs[i];
    if (golds[i] < 0 || golds[i] >= p.size())
      throw ArgumentError("mlm_loss: gold index " + std::to_string(golds[i]) + " out of range");
    if (std::abs(p.sum() - 1.0) > 1e-6) throw ArgumentError("mlm_loss: distribution does not sum to 1");
    total -= std::log(p(golds[i]));
  }
  return total / static_cast<double>(probs.size());
}

struct MlmLossResult {
  double loss = 0.0;
  std::vector<Vector> dlogits;  // d(loss)/d(logits) per example
};

// Same loss from raw label-word logits, via log-softmax, with its gradient.
inline MlmLossResult mlm_loss_from_logits(const std::vector<Vector>& logits, const std::vector<int>& golds) {
  if (logits.size() != golds.size() || logits.empty())
    throw ArgumentError("mlm_loss: logits/golds size mismatch");
  MlmLossResult r;
  const double inv_n = 1.0 / static_cast<double>(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const auto& z = logits[i];
    if (golds[i] < 0 || golds[i] >= z.size())
      throw ArgumentError("mlm_loss: gold index " + std::to_string(golds[i]) + " out of range");
    const double mx = z.maxCoeff();
    const double lse = mx + std::log((z.array() - mx).exp().sum());
    r.loss -= (z(golds[i]) - lse) * inv_n;
    Vector g = (z.array() - lse).exp().matrix();
    g(golds[i]) -= 1.0;
    r.dlogits.push_back(g * inv_n);
  }
  return r;
}

// --- contrastive losses ----------------------------------------------------------

enum class ContrastiveKind { supcon, simclr };

// 2N features, two views per anchor. view_of[i] names the anchor element i
// belongs to; exactly two elements share each anchor.
struct ContrastiveBatch {
  std::vector<Vector> features;
  std::vector<int> labels;
  std::vector<std::size_t> view_of;
  double temperature = 0.1;

  std::size_t size() const { return features.size(); }

  // Interleaves (a_0, b_0, a_1, b_1, ...).
  static ContrastiveBatch from_views(const std::vector<Vector>& first, const std::vector<Vector>& second,
                                     const std::vector<int>& anchor_labels, double temperature) {
    if (first.size() != second.size() || first.size() != anchor_labels.size())
      throw ArgumentError("contrastive batch: view/label count mismatch");
    ContrastiveBatch b;
    b.temperature = temperature;
    for (std::size_t k = 0; k < first.size(); ++k) {
      b.features.push_back(first[k]);
      b.features.push_back(second[k]);
      b.labels.insert(b.labels.end(), {anchor_labels[k], anchor_labels[k]});
      b.view_of.insert(b.view_of.end(), {k, k});
    }
    return b;
  }

  // Partner index of every element.
  std::vector<std::size_t> partners() const {
    std::vector<std::size_t> out(size(), size());
    for (std::size_t i = 0; i < size(); ++i)
      for (std::size_t j = 0; j < size(); ++j)
        if (i != j && view_of[i] == view_of[j]) {
          if (out[i] != size()) throw ArgumentError("contrastive batch: anchor with more than two views");
          out[i] = j;
        }
    for (const auto p : out)
      if (p == size()) throw ArgumentError("contrastive batch: element without a partner view");
    return out;
  }

  void validate(bool check_norm = true) const {
    if (size() < 2) throw ArgumentError("contrastive batch needs at least 2 elements");
    if (labels.size() != size() || view_of.size() != size())
      throw ArgumentError("contrastive batch: labels/view_of size mismatch");
    if (!(temperature > 0.0) || !std::isfinite(temperature))
      throw ArgumentError("contrastive batch: temperature must be positive, got " + std::to_string(temperature));
    const auto dim = features.front().size();
    for (const auto& z : features) {
      if (z.size() != dim) throw ArgumentError("contrastive batch: feature dimension mismatch");
      if (!z.allFinite()) throw ArgumentError("contrastive batch: non-finite feature");
      if (check_norm && std::abs(z.norm() - 1.0) > 1e-6)
        throw ArgumentError("contrastive batch: feature is not unit norm");
    }
    (void)partners();
  }
};

namespace detail {
// P(i) per anchor under the given positive rule.
inline std::vector<std::vector<std::size_t>> positive_sets(const ContrastiveBatch& b, ContrastiveKind kind) {
  const auto partner = b.partners();
  std::vector<std::vector<std::size_t>> pos(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (kind == ContrastiveKind::simclr) {
      pos[i].push_back(partner[i]);
      continue;
    }
    for (std::size_t p = 0; p < b.size(); ++p)
      if (p != i && b.labels[p] == b.labels[i]) pos[i].push_back(p);
  }
  return pos;
}
}  // namespace detail

struct ContrastiveResult {
  double loss = 0.0;
  bool degenerate = false;       // no anchor had a positive
  std::vector<Vector> gradient;  // d(loss)/d(feature), filled on request
  // log p(i, p) for every anchor i with positives and every p in P(i).
  std::vector<double> log_probs;
  std::vector<std::size_t> log_prob_anchor;  // anchor i of each log_probs entry
};

// loss = mean over anchors with positives of
//   -1/|P(i)| sum_{p in P(i)} log( exp(z_i.z_p/t) / sum_{a != i} exp(z_i.z_a/t) )
// computed with a per-row log-sum-exp.
inline ContrastiveResult contrastive_loss(const ContrastiveBatch& batch, ContrastiveKind kind, bool with_gradient = true,
                                          bool check_norm = true) {
  batch.validate(check_norm);
  const auto n = static_cast<Eigen::Index>(batch.size());
  const auto dim = batch.features.front().size();
  Matrix z(n, dim);
  for (Eigen::Index i = 0; i < n; ++i) z.row(i) = batch.features[static_cast<std::size_t>(i)].transpose();
  const double inv_t = 1.0 / batch.temperature;
  const Matrix sim = (z * z.transpose()) * inv_t;
  const auto positives = detail::positive_sets(batch, kind);

  std::size_t active = 0;
  for (const auto& p : positives) active += p.empty() ? 0 : 1;
  ContrastiveResult r;
  if (with_gradient) r.gradient.assign(batch.size(), Vector::Zero(dim));
  if (active == 0) {
    r.degenerate = true;
    return r;
  }
  const double inv_active = 1.0 / static_cast<double>(active);
  Matrix dsim = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& pos = positives[static_cast<std::size_t>(i)];
    if (pos.empty()) continue;
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index a = 0; a < n; ++a)
      if (a != i) mx = std::max(mx, sim(i, a));
    double sum = 0.0;
    for (Eigen::Index a = 0; a < n; ++a)
      if (a != i) sum += std::exp(sim(i, a) - mx);
    const double lse = mx + std::log(sum);
    const double inv_pos = 1.0 / static_cast<double>(pos.size());
    double anchor = 0.0;
    for (const auto p : pos) {
      const double lp = sim(i, static_cast<Eigen::Index>(p)) - lse;
      r.log_probs.push_back(lp);
      r.log_prob_anchor.push_back(static_cast<std::size_t>(i));
      anchor -= lp;
    }
    r.loss += anchor * inv_pos * inv_active;
    if (with_gradient) {
      for (Eigen::Index a = 0; a < n; ++a)
        if (a != i) dsim(i, a) = std::exp(sim(i, a) - lse) * inv_active;
      for (const auto p : pos) dsim(i, static_cast<Eigen::Index>(p)) -= inv_pos * inv_active;
    }
  }
  if (with_gradient) {
    const Matrix dz = ((dsim + dsim.transpose()) * z) * inv_t;
    for (Eigen::Index i = 0; i < n; ++i) r.gradient[static_cast<std::size_t>(i)] = dz.row(i).transpose();
  }
  return r;
}

inline ContrastiveResult supcon_loss(const ContrastiveBatch& batch, bool with_gradient = true) {
  return contrastive_loss(batch, ContrastiveKind::supcon, with_gradient);
}

inline ContrastiveResult simclr_loss(const ContrastiveBatch& batch, bool with_gradient = true) {
  return contrastive_loss(batch, ContrastiveKind::simclr, with_gradient);
}

// Mean over anchors with at least two positives of the variance of their
// positives' log-probabilities; nullopt when no anchor qualifies.
inline std::optional<double> within_anchor_dispersion(const ContrastiveResult& r) {
  std::map<std::size_t, std::vector<double>> by_anchor;
  for (std::size_t k = 0; k < r.log_probs.size(); ++k) by_anchor[r.log_prob_anchor[k]].push_back(r.log_probs[k]);
  double total = 0.0;
  int anchors = 0;
  for (const auto& [i, lps] : by_anchor) {
    if (lps.size() < 2) continue;
    double mean = 0.0;
    for (const auto v : lps) mean += v;
    mean /= static_cast<double>(lps.size());
    double var = 0.0;
    for (const auto v : lps) var += (v - mean) * (v - mean);
    total += var / static_cast<double>(lps.size());
    ++anchors;
  }
  if (anchors == 0) return std::nullopt;
  return total / anchors;
}

// Test oracle: the same quantity by explicit loops over anchors, positives and
// the denominator, exponentiating raw dot products with no stabilization.
inline double supcon_bruteforce(const ContrastiveBatch& batch, ContrastiveKind kind = ContrastiveKind::supcon) {
  batch.validate();
  const std::size_t n = batch.size();
  const auto partner = batch.partners();
  double total = 0.0;
  std::size_t anchors = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> pos;
    for (std::size_t p = 0; p < n; ++p) {
      if (p == i) continue;
      const bool positive = kind == ContrastiveKind::simclr ? p == partner[i] : batch.labels[p] == batch.labels[i];
      if (positive) pos.push_back(p);
    }
    if (pos.empty()) continue;
    ++anchors;
    double denom = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
      if (a == i) continue;
      double dot = 0.0;
      for (Eigen::Index k = 0; k < batch.features[i].size(); ++k) dot += batch.features[i](k) * batch.features[a](k);
      denom += std::exp(dot / batch.temperature);
    }
    double inner = 0.0;
    for (const auto p : pos) {
      double dot = 0.0;
      for (Eigen::Index k = 0; k < batch.features[i].size(); ++k) dot += batch.features[i](k) * batch.features[p](k);
      inner += std::log(std::exp(dot / batch.temperature) / denom);
    }
    total += -inner / static_cast<double>(pos.size());
  }
  return anchors == 0 ? 0.0 : total / static_cast<double>(anchors);
}

enum class LossMode { supcon, simclr, none };

inline std::string to_string(LossMode m) {
  switch (m) {
    case LossMode::supcon: return "supcon";
    case LossMode::simclr: return "simclr";
    case LossMode::none: return "none";
  }
  return "?";
}

inline LossMode parse_loss_mode(const std::string& s) {
  if (s == "supcon") return LossMode::supcon;
  if (s == "simclr") return LossMode::simclr;
  if (s == "none") return LossMode::none;
  throw ConfigError("unknown loss mode '" + s + "'");
}

}  // namespace promptclr
