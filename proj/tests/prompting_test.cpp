#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "promptclr/oracle.hpp"
#include "promptclr/prompting.hpp"

using namespace promptclr;

namespace {

Example ex(std::string text, int label = 0, long id = 0) { return {std::move(text), std::nullopt, label, id}; }

const Template kSst2{0, "<S1> It was [MASK] ."};

Vocabulary sst_vocab() {
  return Vocabulary::from_texts({"A fun ride", "dull plot", "loved it", kSst2.pattern, "great terrible"});
}

}  // namespace

TEST(Tokenize, MaskIsSpecialNotUnknown) {
  const auto v = Vocabulary::from_texts({"it was ."});
  EXPECT_EQ(tokenize("It was [MASK] .", v),
            (std::vector<TokenId>{v.id("it"), v.id("was"), Vocabulary::mask_id, v.id(".")}));
}

TEST(Tokenize, UnknownAndEmpty) {
  const auto v = Vocabulary::from_texts({"hello"});
  EXPECT_EQ(tokenize("zzzz", v), std::vector<TokenId>{Vocabulary::unk_id});
  EXPECT_TRUE(tokenize("", v).empty());
}

TEST(Tokenize, PunctuationSplitsAndLowercases) {
  EXPECT_EQ(split_words("Hello,World! not_bad"), (std::vector<std::string>{"hello", ",", "world", "!", "not_bad"}));
  EXPECT_EQ(split_words("[mask] [CLS]x"), (std::vector<std::string>{"[MASK]", "[CLS]", "x"}));
}

TEST(Vocabulary, SpecialsFirstAndSortedWords) {
  const Vocabulary v({"b", "a", "b"});
  ASSERT_EQ(v.size(), 7u);
  EXPECT_EQ(v.word(0), "[PAD]");
  EXPECT_EQ(v.word(Vocabulary::mask_id), "[MASK]");
  EXPECT_EQ(v.word(5), "a");
  EXPECT_EQ(v.word(6), "b");
}

TEST(Render, SingleSentenceTemplates) {
  EXPECT_EQ(render(kSst2, ex("A fun ride"), MaskFill::mask()), "A fun ride It was [MASK] .");
  EXPECT_EQ(render(kSst2, ex("A fun ride"), MaskFill::word("great")), "A fun ride It was great .");
  EXPECT_EQ(render({1, "[MASK] : <S1>"}, ex("Who wrote Hamlet"), MaskFill::mask()), "[MASK] : Who wrote Hamlet");
}

TEST(Render, PairTemplateNeedsSecondSentence) {
  const Template nli{0, "<S1> ? [MASK] , <S2>"};
  Example pair{"a b", std::string("c d"), 0, 1};
  EXPECT_EQ(render(nli, pair, MaskFill::mask()), "a b ? [MASK] , c d");
  EXPECT_THROW(render(nli, ex("a b"), MaskFill::mask()), RenderError);
}

TEST(Template, Validation) {
  EXPECT_NO_THROW(kSst2.validate(false));
  EXPECT_THROW((Template{1, "<S1> [MASK] [MASK]"}.validate(false)), ConfigError);
  EXPECT_THROW((Template{1, "It was [MASK]"}.validate(false)), ConfigError);
  EXPECT_THROW((Template{1, "<S1> [MASK] <S2>"}.validate(false)), ConfigError);
  EXPECT_THROW((Template{1, "<S1> [MASK]"}.validate(true)), ConfigError);
}

TEST(Verbalizer, Validation) {
  const auto v = sst_vocab();
  EXPECT_NO_THROW((Verbalizer{{"terrible", "great"}}.validate(v, 2)));
  EXPECT_THROW((Verbalizer{{"great", "great"}}.validate(v, 2)), ConfigError);
  EXPECT_THROW((Verbalizer{{"terrible", "superb"}}.validate(v, 2)), ConfigError);
  EXPECT_THROW((Verbalizer{{"terrible"}}.validate(v, 2)), ConfigError);
}

TEST(AssemblePrompt, DemonstrationsInClassOrder) {
  const auto v = sst_vocab();
  const Verbalizer verb{{"terrible", "great"}};
  // Passed out of order on purpose.
  const std::vector<Demonstration> demos{{ex("loved it", 1, 3), 1}, {ex("dull plot", 0, 2), 0}};
  const auto p = assemble_prompt(ex("A fun ride", 1, 1), kSst2, demos, verb, v);
  const auto expect = tokenize(
      "[CLS] A fun ride It was [MASK] . [SEP] dull plot It was terrible . [SEP] loved it It was great . [SEP]", v);
  EXPECT_EQ(p.token_ids, expect);
  ASSERT_TRUE(p.mask_position);
  EXPECT_EQ(p.token_ids[*p.mask_position], Vocabulary::mask_id);
  EXPECT_EQ(*p.mask_position, 6u);
  EXPECT_EQ(p.demo_ids, (std::vector<long>{2, 3}));
  EXPECT_EQ(p.main_tokens(), tokenize("A fun ride", v));
}

TEST(AssemblePrompt, WithoutDemonstrations) {
  const auto v = sst_vocab();
  PromptOptions opts;
  opts.with_demos = false;
  const auto p = assemble_prompt(ex("A fun ride"), kSst2, {}, Verbalizer{{"terrible", "great"}}, v, opts);
  EXPECT_EQ(p.token_ids, tokenize("[CLS] A fun ride It was [MASK] . [SEP]", v));
}

TEST(AssemblePrompt, DemoSetErrors) {
  const auto v = sst_vocab();
  const Verbalizer verb{{"terrible", "great"}};
  EXPECT_THROW(assemble_prompt(ex("A fun ride", 1, 1), kSst2, {{ex("dull plot", 0, 2), 0}}, verb, v), AssemblyError);
  EXPECT_THROW(assemble_prompt(ex("A fun ride", 1, 1), kSst2, {{ex("dull plot", 0, 2), 0}, {ex("x", 0, 5), 0}}, verb, v),
               AssemblyError);
  EXPECT_THROW(assemble_prompt(ex("A fun ride", 1, 1), kSst2, {{ex("dull plot", 0, 2), 0}, {ex("A fun ride", 1, 1), 1}},
                               verb, v),
               AssemblyError);
}

TEST(AssemblePrompt, TruncationDropsRightmostDemoFirst) {
  const auto v = sst_vocab();
  const Verbalizer verb{{"terrible", "great"}};
  const std::vector<Demonstration> demos{{ex("dull plot", 0, 2), 0}, {ex("loved it", 1, 3), 1}};
  const auto full = assemble_prompt(ex("A fun ride", 1, 1), kSst2, demos, verb, v);
  ASSERT_EQ(full.token_ids.size(), 23u);
  PromptOptions opts;
  opts.max_seq_len = 22;
  const auto cut = assemble_prompt(ex("A fun ride", 1, 1), kSst2, demos, verb, v, opts);
  EXPECT_EQ(cut.token_ids, tokenize("[CLS] A fun ride It was [MASK] . [SEP] dull plot It was terrible . [SEP]", v));
  opts.max_seq_len = 9;
  const auto tight = assemble_prompt(ex("A fun ride", 1, 1), kSst2, demos, verb, v, opts);
  EXPECT_EQ(tight.token_ids, tokenize("[CLS] A fun ride It was [MASK] . [SEP]", v));
  // Main sentence shortened only once no demonstration is left.
  opts.max_seq_len = 8;
  const auto shortened = assemble_prompt(ex("A fun ride", 1, 1), kSst2, demos, verb, v, opts);
  EXPECT_EQ(shortened.token_ids, tokenize("[CLS] A fun It was [MASK] . [SEP]", v));
  EXPECT_EQ(shortened.token_ids[*shortened.mask_position], Vocabulary::mask_id);
}

TEST(AssemblePrompt, SentenceCannotInjectMask) {
  const auto v = sst_vocab();
  PromptOptions opts;
  opts.with_demos = false;
  const auto p = assemble_prompt(ex("a [MASK] ride"), kSst2, {}, Verbalizer{{"terrible", "great"}}, v, opts);
  EXPECT_EQ(std::count(p.token_ids.begin(), p.token_ids.end(), Vocabulary::mask_id), 1);
}

class ViewStrategies : public ::testing::TestWithParam<ViewStrategy> {};

TEST_P(ViewStrategies, ContractHoldsOnRandomPairs) {
  Rng rng(17);
  const auto fx = oracle::view_fixture(rng);
  for (int t = 0; t < 500; ++t) {
    const auto& e = fx.pool[rng.index(fx.pool.size())];
    const auto pair = build_view_pair(e, fx.bank, fx.pool, GetParam(), fx.verbalizer, fx.vocab, rng);
    EXPECT_EQ(oracle::view_contract_violation(pair, e, GetParam()), "");
    EXPECT_EQ(pair.view1.source_template_id, fx.bank.primary.id);
    for (const auto id : pair.view1.demo_ids) EXPECT_NE(id, e.id);
    for (const auto id : pair.view2.demo_ids) EXPECT_NE(id, e.id);
  }
}

INSTANTIATE_TEST_SUITE_P(All, ViewStrategies,
                         ::testing::Values(ViewStrategy::demo_and_temp, ViewStrategy::temp_only,
                                           ViewStrategy::demo_only));

TEST(BuildViewPair, DeterministicPerRngState) {
  Rng setup(3);
  const auto fx = oracle::view_fixture(setup);
  Rng a(99), b(99);
  const auto p = build_view_pair(fx.pool[0], fx.bank, fx.pool, ViewStrategy::demo_and_temp, fx.verbalizer, fx.vocab, a);
  const auto q = build_view_pair(fx.pool[0], fx.bank, fx.pool, ViewStrategy::demo_and_temp, fx.verbalizer, fx.vocab, b);
  EXPECT_EQ(p.view1.token_ids, q.view1.token_ids);
  EXPECT_EQ(p.view2.token_ids, q.view2.token_ids);
}

TEST(BuildViewPair, FixedView1DemosAcrossCalls) {
  Rng setup(3);
  const auto fx = oracle::view_fixture(setup);
  ViewOptions opts;
  opts.view1_demo_seed = 1234;
  Rng rng(1);
  const auto first = build_view_pair(fx.pool[0], fx.bank, fx.pool, ViewStrategy::demo_only, fx.verbalizer, fx.vocab,
                                     rng, opts);
  for (int i = 0; i < 10; ++i) {
    const auto again = build_view_pair(fx.pool[0], fx.bank, fx.pool, ViewStrategy::demo_only, fx.verbalizer,
                                       fx.vocab, rng, opts);
    EXPECT_EQ(again.view1.demo_ids, first.view1.demo_ids);
  }
}

TEST(BuildViewPair, InsufficientDemonstrations) {
  Rng setup(3);
  const auto fx = oracle::view_fixture(setup);
  std::vector<Example> tiny;
  for (const auto& e : fx.pool)
    if (std::count_if(tiny.begin(), tiny.end(), [&](const Example& t) { return t.label == e.label; }) < 1)
      tiny.push_back(e);
  Rng rng(0);
  const Example anchor{"w1 w2", std::nullopt, 0, 9999};
  EXPECT_THROW(build_view_pair(anchor, fx.bank, tiny, ViewStrategy::demo_and_temp, fx.verbalizer, fx.vocab, rng),
               AugmentationError);
  EXPECT_NO_THROW(build_view_pair(anchor, fx.bank, tiny, ViewStrategy::temp_only, fx.verbalizer, fx.vocab, rng));
  TemplateBank no_aux{fx.bank.primary, {}};
  EXPECT_THROW(build_view_pair(anchor, no_aux, fx.pool, ViewStrategy::temp_only, fx.verbalizer, fx.vocab, rng),
               AugmentationError);
}

TEST(TemplateFiles, LoadBankAndVerbalizer) {
  const auto dir = std::filesystem::temp_directory_path() / "promptclr_prompting_test";
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "t.txt") << "<S1> It was [MASK] .\n<S1> This is [MASK] .\n\n[MASK] : <S1>\n";
  std::ofstream(dir / "v.txt") << "1\tgreat\n0\tterrible\n";
  const auto bank = load_templates((dir / "t.txt").string());
  EXPECT_EQ(bank.primary.pattern, "<S1> It was [MASK] .");
  ASSERT_EQ(bank.auxiliary.size(), 2u);
  EXPECT_EQ(bank.auxiliary[1].id, 2);
  EXPECT_NO_THROW(bank.validate(false));
  const auto verb = load_verbalizer((dir / "v.txt").string());
  EXPECT_EQ(verb.words, (std::vector<std::string>{"terrible", "great"}));
  std::ofstream(dir / "bad.txt") << "0\tterrible\n2\tgreat\n";
  EXPECT_THROW(load_verbalizer((dir / "bad.txt").string()), ParseError);
  EXPECT_THROW(load_templates((dir / "missing.txt").string()), ConfigError);
}
