#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "promptclr/common.hpp"
#include "promptclr/prompting.hpp"

namespace promptclr {

using Tokens = std::vector<std::string>;

class SynonymLexicon {
 public:
  SynonymLexicon() = default;
  explicit SynonymLexicon(std::map<std::string, std::vector<std::string>> entries) : entries_(std::move(entries)) {
    for (auto it = entries_.begin(); it != entries_.end();) {
      std::erase(it->second, it->first);
      if (it->second.empty()) throw ConfigError("lexicon entry '" + it->first + "' has no synonym besides itself");
      ++it;
    }
  }

  const std::vector<std::string>* synonyms(const std::string& token) const {
    if (is_special_token(token)) return nullptr;
    const auto it = entries_.find(token);
    return it == entries_.end() ? nullptr : &it->second;
  }

  std::vector<std::string> all_words() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : entries_) {
      out.push_back(k);
      out.insert(out.end(), v.begin(), v.end());
    }
    return out;
  }

  bool empty() const { return entries_.empty(); }

 private:
  std::map<std::string, std::vector<std::string>> entries_;
};

// `token TAB syn[,syn...]` per line; `#` starts a comment line.
inline SynonymLexicon load_lexicon(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open lexicon '" + path + "'");
  std::map<std::string, std::vector<std::string>> entries;
  long line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError("lexicon line " + std::to_string(line_no) + ": missing TAB");
    auto& syns = entries[line.substr(0, tab)];
    std::string rest = line.substr(tab + 1);
    for (std::size_t start = 0; start <= rest.size();) {
      auto comma = rest.find(',', start);
      if (comma == std::string::npos) comma = rest.size();
      if (comma > start) syns.push_back(rest.substr(start, comma - start));
      start = comma + 1;
    }
  }
  return SynonymLexicon(std::move(entries));
}

struct AugmentResult {
  Tokens tokens;
  bool no_op = false;
};

inline std::size_t edit_count(double alpha, std::size_t length) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(alpha * static_cast<double>(length))));
}

namespace detail {
inline void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ArgumentError("alpha must lie in (0, 1]");
}
inline std::vector<std::size_t> positions_where(const Tokens& tokens, auto&& pred) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (pred(tokens[i])) out.push_back(i);
  return out;
}
}  // namespace detail

// SR: n distinct lexicon-covered positions get a uniformly chosen synonym.
inline AugmentResult synonym_replacement(const Tokens& tokens, double alpha, const SynonymLexicon& lexicon, Rng& rng) {
  detail::check_alpha(alpha);
  if (tokens.empty()) throw ArgumentError("synonym_replacement on empty input");
  const auto eligible = detail::positions_where(tokens, [&](const auto& t) { return lexicon.synonyms(t) != nullptr; });
  if (eligible.empty()) return {tokens, true};
  const auto n = std::min(edit_count(alpha, tokens.size()), eligible.size());
  Tokens out = tokens;
  for (const auto pick : rng.sample_without_replacement(eligible.size(), n)) {
    const auto pos = eligible[pick];
    const auto& syns = *lexicon.synonyms(tokens[pos]);
    out[pos] = syns[rng.index(syns.size())];
  }
  return {std::move(out), false};
}

// RI: n times, take a synonym of a random covered token and insert it at a
// random position of the current sequence.
inline AugmentResult random_insertion(const Tokens& tokens, double alpha, const SynonymLexicon& lexicon, Rng& rng) {
  detail::check_alpha(alpha);
  if (tokens.empty()) throw ArgumentError("random_insertion on empty input");
  const auto eligible = detail::positions_where(tokens, [&](const auto& t) { return lexicon.synonyms(t) != nullptr; });
  if (eligible.empty()) return {tokens, true};
  const auto n = edit_count(alpha, tokens.size());
  Tokens out = tokens;
  for (std::size_t k = 0; k < n; ++k) {
    const auto& syns = *lexicon.synonyms(tokens[eligible[rng.index(eligible.size())]]);
    const auto& word = syns[rng.index(syns.size())];
    const auto at = rng.index(out.size() + 1);
    out.insert(out.begin() + static_cast<std::ptrdiff_t>(at), word);
  }
  return {std::move(out), false};
}

// RS: n swaps of two distinct non-special positions.
inline AugmentResult random_swap(const Tokens& tokens, double alpha, Rng& rng) {
  detail::check_alpha(alpha);
  const auto eligible = detail::positions_where(tokens, [](const auto& t) { return !is_special_token(t); });
  if (eligible.size() < 2) return {tokens, true};
  const auto n = edit_count(alpha, tokens.size());
  Tokens out = tokens;
  for (std::size_t k = 0; k < n; ++k) {
    const auto pair = rng.sample_without_replacement(eligible.size(), 2);
    std::swap(out[eligible[pair[0]]], out[eligible[pair[1]]]);
  }
  return {std::move(out), false};
}

// RD: each non-special token is dropped with probability alpha; if nothing
// would survive, one uniformly chosen token is kept.
inline AugmentResult random_deletion(const Tokens& tokens, double alpha, Rng& rng) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ArgumentError("alpha must lie in [0, 1]");
  if (tokens.empty()) throw ArgumentError("random_deletion on empty input");
  std::vector<char> keep(tokens.size(), 1);
  bool any = false;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!is_special_token(tokens[i]) && rng.bernoulli(alpha)) keep[i] = 0;
    any = any || keep[i];
  }
  if (!any) keep[rng.index(tokens.size())] = 1;
  Tokens out;
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (keep[i]) out.push_back(tokens[i]);
  return {std::move(out), false};
}

struct EdaResult {
  Tokens tokens;
  // SR, RI, RS, RD in pipeline order.
  std::array<bool, 4> no_op{};
};

inline EdaResult eda(const Tokens& tokens, double alpha, const SynonymLexicon& lexicon, Rng& rng) {
  EdaResult out;
  auto sr = synonym_replacement(tokens, alpha, lexicon, rng);
  auto ri = random_insertion(sr.tokens, alpha, lexicon, rng);
  auto rs = random_swap(ri.tokens, alpha, rng);
  auto rd = random_deletion(rs.tokens, alpha, rng);
  out.no_op = {sr.no_op, ri.no_op, rs.no_op, rd.no_op};
  out.tokens = std::move(rd.tokens);
  return out;
}

inline std::string join_tokens(const Tokens& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) out += (i ? " " : "") + tokens[i];
  return out;
}

// Second view for the EDA comparison: view1's template and demonstrations, with
// only the main sentence(s) perturbed.
inline ViewPair build_eda_view_pair(const Example& example, const TemplateBank& bank,
                                    const std::vector<Example>& demo_pool, const Verbalizer& verbalizer,
                                    const Vocabulary& vocab, const SynonymLexicon& lexicon, double alpha, Rng& rng,
                                    const ViewOptions& opts = {}) {
  std::vector<Demonstration> demos;
  if (opts.prompt.with_demos) {
    const auto eligible = eligible_demos(example, demo_pool, verbalizer.num_classes());
    if (opts.view1_demo_seed) {
      Rng fixed(*opts.view1_demo_seed);
      demos = sample_demonstrations(eligible, fixed);
    } else {
      demos = sample_demonstrations(eligible, rng);
    }
  }
  Example perturbed = example;
  perturbed.text1 = join_tokens(eda(split_words(example.text1), alpha, lexicon, rng).tokens);
  if (example.text2) perturbed.text2 = join_tokens(eda(split_words(*example.text2), alpha, lexicon, rng).tokens);
  ViewPair pair;
  pair.label = example.label;
  pair.view1 = assemble_prompt(example, bank.primary, demos, verbalizer, vocab, opts.prompt);
  pair.view2 = assemble_prompt(perturbed, bank.primary, demos, verbalizer, vocab, opts.prompt);
  return pair;
}

}  // namespace promptclr
