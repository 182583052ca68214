#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "promptclr/common.hpp"
#include "promptclr/corpus.hpp"

namespace promptclr {

using TokenId = int;

inline constexpr std::string_view kPad = "[PAD]";
inline constexpr std::string_view kUnk = "[UNK]";
inline constexpr std::string_view kCls = "[CLS]";
inline constexpr std::string_view kSep = "[SEP]";
inline constexpr std::string_view kMask = "[MASK]";

inline bool is_special_token(std::string_view w) {
  return w == kPad || w == kUnk || w == kCls || w == kSep || w == kMask;
}

// Lowercased words; punctuation characters become single-character tokens and
// bracketed specials such as [MASK] survive as one token.
inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  const auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const unsigned char ch = static_cast<unsigned char>(text[i]);
    if (ch == '[') {
      const auto close = text.find(']', i);
      if (close != std::string_view::npos) {
        std::string cand(text.substr(i, close - i + 1));
        std::string upper = cand;
        for (auto& u : upper) u = static_cast<char>(std::toupper(static_cast<unsigned char>(u)));
        if (is_special_token(upper)) {
          flush();
          out.push_back(upper);
          i = close;
          continue;
        }
      }
    }
    if (std::isspace(ch)) {
      flush();
    } else if (ch < 0x80 && std::ispunct(ch) && ch != '_') {
      flush();
      out.emplace_back(1, static_cast<char>(ch));
    } else {
      cur.push_back(ch < 0x80 ? static_cast<char>(std::tolower(ch)) : static_cast<char>(ch));
    }
  }
  flush();
  return out;
}

// Closed word vocabulary. Ids 0..4 are the specials in a fixed order; the rest
// are sorted so that the same word set always yields the same ids.
class Vocabulary {
 public:
  static constexpr TokenId pad_id = 0;
  static constexpr TokenId unk_id = 1;
  static constexpr TokenId cls_id = 2;
  static constexpr TokenId sep_id = 3;
  static constexpr TokenId mask_id = 4;

  Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

  explicit Vocabulary(const std::vector<std::string>& words) {
    for (auto s : {kPad, kUnk, kCls, kSep, kMask}) add(std::string(s));
    std::set<std::string> sorted;
    for (const auto& w : words)
      if (!is_special_token(w)) sorted.insert(w);
    for (const auto& w : sorted) add(w);
  }

  // Vocabulary over every word appearing in the given texts.
  static Vocabulary from_texts(const std::vector<std::string>& texts) {
    std::vector<std::string> words;
    for (const auto& t : texts)
      for (auto& w : split_words(t)) words.push_back(std::move(w));
    return Vocabulary(words);
  }

  std::size_t size() const { return words_.size(); }
  const std::string& word(TokenId id) const { return words_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& words() const { return words_; }

  std::optional<TokenId> find(const std::string& w) const {
    const auto it = index_.find(w);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  TokenId id(const std::string& w) const { return find(w).value_or(unk_id); }

 private:
  void add(const std::string& w) {
    index_.emplace(w, static_cast<TokenId>(words_.size()));
    words_.push_back(w);
  }

  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

inline std::vector<TokenId> tokenize(std::string_view text, const Vocabulary& vocab) {
  std::vector<TokenId> ids;
  for (const auto& w : split_words(text)) ids.push_back(vocab.id(w));
  return ids;
}

inline std::string detokenize(const std::vector<TokenId>& ids, const Vocabulary& vocab) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += vocab.word(ids[i]);
  }
  return out;
}

inline constexpr std::string_view kSlot1 = "<S1>";
inline constexpr std::string_view kSlot2 = "<S2>";

inline std::size_t count_occurrences(std::string_view hay, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = hay.find(needle); pos != std::string_view::npos; pos = hay.find(needle, pos + needle.size()))
    ++n;
  return n;
}

struct Template {
  int id = 0;
  std::string pattern;

  bool has_second_slot() const { return pattern.find(kSlot2) != std::string::npos; }

  void validate(bool is_pair) const {
    const auto where = "template " + std::to_string(id) + " '" + pattern + "'";
    if (count_occurrences(pattern, kMask) != 1) throw ConfigError(where + ": needs exactly one [MASK]");
    if (pattern.find(kSlot1) == std::string::npos) throw ConfigError(where + ": missing <S1>");
    if (has_second_slot() != is_pair)
      throw ConfigError(where + (is_pair ? ": pair task needs <S2>" : ": <S2> in a single-sentence task"));
  }
};

struct Verbalizer {
  // words[c] is the label word of class c.
  std::vector<std::string> words;

  std::size_t num_classes() const { return words.size(); }

  void validate(const Vocabulary& vocab, int num_classes) const {
    if (words.size() != static_cast<std::size_t>(num_classes))
      throw ConfigError("verbalizer covers " + std::to_string(words.size()) + " classes, task has " +
                        std::to_string(num_classes));
    std::set<TokenId> seen;
    for (std::size_t c = 0; c < words.size(); ++c) {
      const auto ids = tokenize(words[c], vocab);
      if (ids.size() != 1 || ids[0] == Vocabulary::unk_id)
        throw ConfigError("label word '" + words[c] + "' is not a single in-vocabulary token");
      if (!seen.insert(ids[0]).second) throw ConfigError("label word '" + words[c] + "' is repeated");
    }
  }

  std::vector<TokenId> label_ids(const Vocabulary& vocab) const {
    std::vector<TokenId> out;
    for (const auto& w : words) out.push_back(vocab.id(split_words(w).at(0)));
    return out;
  }
};

struct TemplateBank {
  Template primary;
  std::vector<Template> auxiliary;

  void validate(bool is_pair) const {
    primary.validate(is_pair);
    for (const auto& t : auxiliary) {
      t.validate(is_pair);
      if (t.id == primary.id) throw ConfigError("auxiliary template shares the primary template id");
    }
  }

  const Template* by_id(int id) const {
    if (primary.id == id) return &primary;
    for (const auto& t : auxiliary)
      if (t.id == id) return &t;
    return nullptr;
  }
};

// First non-empty line is the primary template (id 0); the rest are auxiliary
// with ids in file order.
inline TemplateBank load_templates(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open template file '" + path + "'");
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  if (lines.empty()) throw ConfigError("template file '" + path + "' is empty");
  TemplateBank bank;
  bank.primary = {0, lines[0]};
  for (std::size_t i = 1; i < lines.size(); ++i) bank.auxiliary.push_back({static_cast<int>(i), lines[i]});
  return bank;
}

inline Verbalizer load_verbalizer(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open verbalizer file '" + path + "'");
  std::map<int, std::string> entries;
  long line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError("verbalizer line " + std::to_string(line_no) + ": missing TAB");
    int cls = 0;
    try {
      std::size_t used = 0;
      cls = std::stoi(line.substr(0, tab), &used);
      if (used != tab) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ParseError("verbalizer line " + std::to_string(line_no) + ": bad class index");
    }
    if (!entries.emplace(cls, line.substr(tab + 1)).second)
      throw ParseError("verbalizer line " + std::to_string(line_no) + ": duplicate class");
  }
  Verbalizer v;
  int expect = 0;
  for (const auto& [cls, word] : entries) {
    if (cls != expect++) throw ParseError("verbalizer classes must be 0..C-1 without gaps");
    v.words.push_back(word);
  }
  return v;
}

struct MaskFill {
  std::optional<std::string> label_word;  // empty: keep [MASK]
  static MaskFill mask() { return {}; }
  static MaskFill word(std::string w) { return {std::move(w)}; }
};

namespace detail {
inline void replace_all(std::string& s, std::string_view from, std::string_view to) {
  for (auto pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
    s.replace(pos, from.size(), to);
}
}  // namespace detail

inline std::string render(const Template& tmpl, const Example& example, const MaskFill& fill) {
  std::string out = tmpl.pattern;
  if (tmpl.has_second_slot() && !example.text2)
    throw RenderError("template " + std::to_string(tmpl.id) + " has <S2> but example " +
                      std::to_string(example.id) + " has no second sentence");
  detail::replace_all(out, kSlot1, example.text1);
  if (example.text2) detail::replace_all(out, kSlot2, *example.text2);
  if (fill.label_word) detail::replace_all(out, kMask, *fill.label_word);
  return out;
}

struct PromptedText {
  std::vector<TokenId> token_ids;
  std::optional<std::size_t> mask_position;
  long source_example_id = -1;
  int source_template_id = -1;
  // Demonstration example ids in ascending class order (empty without demos).
  std::vector<long> demo_ids;
  // [begin, end) spans of the main input sentence tokens, text1 then text2.
  std::vector<std::pair<std::size_t, std::size_t>> main_spans;

  std::vector<TokenId> main_tokens() const {
    std::vector<TokenId> out;
    for (const auto& [b, e] : main_spans) out.insert(out.end(), token_ids.begin() + b, token_ids.begin() + e);
    return out;
  }
};

struct ViewPair {
  PromptedText view1;
  PromptedText view2;
  int label = 0;
};

struct Demonstration {
  Example example;
  int cls = 0;
};

struct PromptOptions {
  bool with_demos = true;
  std::size_t max_seq_len = 128;
};

namespace detail {

// Tokenizes a template rendering of `example`, recording where the sentence
// tokens and the mask land. Sentence text never contributes specials.
struct Segment {
  std::vector<TokenId> ids;
  std::optional<std::size_t> mask;
  std::vector<std::pair<std::size_t, std::size_t>> sentence_spans;
};

inline Segment tokenize_rendering(const Template& tmpl, const Example& example, const MaskFill& fill,
                                  const Vocabulary& vocab) {
  if (tmpl.has_second_slot() && !example.text2)
    throw RenderError("template " + std::to_string(tmpl.id) + " has <S2> but example " +
                      std::to_string(example.id) + " has no second sentence");
  Segment seg;
  std::string_view rest = tmpl.pattern;
  const auto emit_text = [&](std::string_view piece) {
    for (const auto& w : split_words(piece)) {
      if (w == kMask) {
        if (fill.label_word) {
          for (const auto& lw : split_words(*fill.label_word)) seg.ids.push_back(vocab.id(lw));
        } else {
          seg.mask = seg.ids.size();
          seg.ids.push_back(Vocabulary::mask_id);
        }
      } else {
        seg.ids.push_back(vocab.id(w));
      }
    }
  };
  const auto emit_sentence = [&](const std::string& s) {
    const auto begin = seg.ids.size();
    for (const auto& w : split_words(s)) seg.ids.push_back(is_special_token(w) ? Vocabulary::unk_id : vocab.id(w));
    seg.sentence_spans.emplace_back(begin, seg.ids.size());
  };
  while (!rest.empty()) {
    const auto p1 = rest.find(kSlot1);
    const auto p2 = rest.find(kSlot2);
    const auto next = std::min(p1, p2);
    if (next == std::string_view::npos) {
      emit_text(rest);
      break;
    }
    emit_text(rest.substr(0, next));
    emit_sentence(next == p1 ? example.text1 : *example.text2);
    rest.remove_prefix(next + kSlot1.size());
  }
  return seg;
}

}  // namespace detail

// [CLS] T(x) [SEP] T~(demo_0) [SEP] ... T~(demo_{C-1}) [SEP], demos in ascending
// class order. Over-long inputs lose whole demonstrations from the right first;
// only then is the main sentence shortened from its end.
inline PromptedText assemble_prompt(const Example& example, const Template& tmpl,
                                    std::vector<Demonstration> demos, const Verbalizer& verbalizer,
                                    const Vocabulary& vocab, const PromptOptions& opts = {}) {
  PromptedText out;
  out.source_example_id = example.id;
  out.source_template_id = tmpl.id;

  if (opts.with_demos) {
    std::sort(demos.begin(), demos.end(), [](const auto& a, const auto& b) { return a.cls < b.cls; });
    if (demos.size() != verbalizer.num_classes())
      throw AssemblyError("expected one demonstration per class (" + std::to_string(verbalizer.num_classes()) +
                          "), got " + std::to_string(demos.size()));
    for (std::size_t c = 0; c < demos.size(); ++c) {
      if (demos[c].cls != static_cast<int>(c))
        throw AssemblyError("demonstrations missing class " + std::to_string(c));
      if (demos[c].example.id == example.id)
        throw AssemblyError("demonstration duplicates the main example " + std::to_string(example.id));
    }
  }

  auto main = detail::tokenize_rendering(tmpl, example, MaskFill::mask(), vocab);
  std::vector<std::vector<TokenId>> demo_segments;
  if (opts.with_demos)
    for (const auto& d : demos)
      demo_segments.push_back(
          detail::tokenize_rendering(tmpl, d.example, MaskFill::word(verbalizer.words.at(d.cls)), vocab).ids);

  const std::size_t limit = opts.max_seq_len;
  if (limit < 3) throw SequenceLengthError("max_seq_len too small for [CLS] x [SEP]");
  // Shorten the main sentence tail only when it alone cannot fit.
  while (main.ids.size() + 2 > limit) {
    auto& span = main.sentence_spans.back();
    if (span.second == span.first) {
      if (main.sentence_spans.size() == 1)
        throw SequenceLengthError("template alone exceeds max_seq_len " + std::to_string(limit));
      main.sentence_spans.pop_back();
      continue;
    }
    const auto drop = span.second - 1;
    main.ids.erase(main.ids.begin() + static_cast<std::ptrdiff_t>(drop));
    if (main.mask && *main.mask > drop) --*main.mask;
    for (auto& s : main.sentence_spans) {
      if (s.first > drop) --s.first;
      if (s.second > drop) --s.second;
    }
  }
  std::size_t total = main.ids.size() + 2;
  std::size_t kept = 0;
  for (const auto& seg : demo_segments) {
    if (total + seg.size() + 1 > limit) break;
    total += seg.size() + 1;
    ++kept;
  }

  out.token_ids.reserve(total);
  out.token_ids.push_back(Vocabulary::cls_id);
  for (const auto& [b, e] : main.sentence_spans) out.main_spans.emplace_back(b + 1, e + 1);
  if (main.mask) out.mask_position = *main.mask + 1;
  out.token_ids.insert(out.token_ids.end(), main.ids.begin(), main.ids.end());
  out.token_ids.push_back(Vocabulary::sep_id);
  for (std::size_t c = 0; c < kept; ++c) {
    out.token_ids.insert(out.token_ids.end(), demo_segments[c].begin(), demo_segments[c].end());
    out.token_ids.push_back(Vocabulary::sep_id);
  }
  if (opts.with_demos)
    for (const auto& d : demos) out.demo_ids.push_back(d.example.id);
  return out;
}

enum class ViewStrategy { demo_and_temp, temp_only, demo_only };

inline std::string to_string(ViewStrategy s) {
  switch (s) {
    case ViewStrategy::demo_and_temp: return "demo_and_temp";
    case ViewStrategy::temp_only: return "temp_only";
    case ViewStrategy::demo_only: return "demo_only";
  }
  return "?";
}

inline ViewStrategy parse_view_strategy(const std::string& s) {
  if (s == "demo_and_temp") return ViewStrategy::demo_and_temp;
  if (s == "temp_only") return ViewStrategy::temp_only;
  if (s == "demo_only") return ViewStrategy::demo_only;
  throw ConfigError("unknown view strategy '" + s + "'");
}

// Per-class lists of pool examples usable as demonstrations for `anchor`.
inline std::vector<std::vector<const Example*>> eligible_demos(const Example& anchor,
                                                               const std::vector<Example>& pool,
                                                               std::size_t num_classes) {
  std::vector<std::vector<const Example*>> by_class(num_classes);
  for (const auto& e : pool) {
    if (e.id == anchor.id) continue;
    if (e.label < 0 || static_cast<std::size_t>(e.label) >= num_classes)
      throw ArgumentError("demonstration pool label out of range");
    by_class[static_cast<std::size_t>(e.label)].push_back(&e);
  }
  return by_class;
}

// One uniformly drawn demonstration per class. When `avoid` is given, class c
// never reuses avoid[c].
inline std::vector<Demonstration> sample_demonstrations(const std::vector<std::vector<const Example*>>& eligible,
                                                        Rng& rng, const std::vector<long>* avoid = nullptr) {
  std::vector<Demonstration> demos;
  for (std::size_t c = 0; c < eligible.size(); ++c) {
    std::vector<const Example*> choices;
    for (const auto* e : eligible[c])
      if (!avoid || e->id != (*avoid)[c]) choices.push_back(e);
    if (choices.empty())
      throw AugmentationError("no eligible demonstration for class " + std::to_string(c));
    demos.push_back({*choices[rng.index(choices.size())], static_cast<int>(c)});
  }
  return demos;
}

struct ViewOptions {
  PromptOptions prompt;
  // When set, view1's demonstrations are drawn from this fixed stream instead
  // of `rng`, which pins them per example across iterations.
  std::optional<std::uint64_t> view1_demo_seed;
};

// view1: primary template + sampled demos. view2 changes the template, the
// demos (every class gets a different one), or both, per strategy.
inline ViewPair build_view_pair(const Example& example, const TemplateBank& bank,
                                const std::vector<Example>& demo_pool, ViewStrategy strategy,
                                const Verbalizer& verbalizer, const Vocabulary& vocab, Rng& rng,
                                const ViewOptions& opts = {}) {
  const bool new_template = strategy != ViewStrategy::demo_only;
  const bool new_demos = strategy != ViewStrategy::temp_only;
  const bool with_demos = opts.prompt.with_demos;
  if (new_template && bank.auxiliary.empty())
    throw AugmentationError("strategy " + to_string(strategy) + " needs auxiliary templates");
  if (!with_demos && strategy == ViewStrategy::demo_only)
    throw AugmentationError("demo_only views need demonstrations");

  std::vector<Demonstration> demos1, demos2;
  if (with_demos) {
    const auto eligible = eligible_demos(example, demo_pool, verbalizer.num_classes());
    for (std::size_t c = 0; c < eligible.size(); ++c)
      if (eligible[c].size() < (new_demos ? 2u : 1u))
        throw AugmentationError("class " + std::to_string(c) + " has " + std::to_string(eligible[c].size()) +
                                " eligible demonstrations; need " + (new_demos ? "2" : "1"));
    if (opts.view1_demo_seed) {
      Rng fixed(*opts.view1_demo_seed);
      demos1 = sample_demonstrations(eligible, fixed);
    } else {
      demos1 = sample_demonstrations(eligible, rng);
    }
    if (new_demos) {
      std::vector<long> used;
      for (const auto& d : demos1) used.push_back(d.example.id);
      demos2 = sample_demonstrations(eligible, rng, &used);
    } else {
      demos2 = demos1;
    }
  }
  const Template& t2 = new_template ? bank.auxiliary[rng.index(bank.auxiliary.size())] : bank.primary;

  ViewPair pair;
  pair.label = example.label;
  pair.view1 = assemble_prompt(example, bank.primary, demos1, verbalizer, vocab, opts.prompt);
  pair.view2 = assemble_prompt(example, t2, demos2, verbalizer, vocab, opts.prompt);
  return pair;
}

}  // namespace promptclr
