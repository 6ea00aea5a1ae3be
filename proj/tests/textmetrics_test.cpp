#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <random>

#include "criteria.hpp"
#include "fixtures.hpp"
#include "langxai/textmetrics.hpp"
#include "oracles.hpp"

using namespace langxai;
using fixture::code_of;

namespace {

TokenSeq toks(std::string_view s) { return tokenize(s); }

/// Fixed two-dimensional embeddings: a=(1,0), b=(1/2, sqrt(3)/2), so
/// cos(a,b) = 1/2; every other token maps to (0,1).
class TableEmbedder final : public TokenEmbedder {
 public:
  std::vector<Embedding> embed(const TokenSeq& seq) const override {
    std::vector<Embedding> out;
    for (const auto& t : seq) {
      if (t == "a") {
        out.push_back({1.0, 0.0});
      } else if (t == "b") {
        out.push_back({0.5, std::sqrt(3.0) / 2.0});
      } else {
        out.push_back({0.0, 1.0});
      }
    }
    return out;
  }
};

class BrokenEmbedder final : public TokenEmbedder {
 public:
  explicit BrokenEmbedder(int mode) : mode_(mode) {}
  std::vector<Embedding> embed(const TokenSeq& seq) const override {
    if (mode_ == 0) throw std::runtime_error("encoder offline");
    if (mode_ == 1) return {};
    return std::vector<Embedding>(seq.size(), Embedding{2.0, 0.0});
  }

 private:
  int mode_;
};

TokenSeq random_tokens(std::mt19937_64& rng, std::size_t max_len, int vocab) {
  std::uniform_int_distribution<std::size_t> len(0, max_len);
  std::uniform_int_distribution<int> sym(0, vocab - 1);
  std::string text;
  for (std::size_t i = 0, n = len(rng); i < n; ++i) text += "w" + std::to_string(sym(rng)) + " ";
  return tokenize(text);
}

}  // namespace

TEST(Tokenize, Examples) {
  EXPECT_EQ(toks("The cat sat.").tokens(), (std::vector<std::string>{"the", "cat", "sat", "."}));
  EXPECT_TRUE(toks("").empty());
  EXPECT_EQ(toks("A  B").tokens(), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(toks("Wait...(why?!)").tokens(),
            (std::vector<std::string>{"wait", "...(", "why", "?!)"}));
  EXPECT_EQ(toks("x\xC2\xA0y\tz\xE3\x80\x80w").tokens(),
            (std::vector<std::string>{"x", "y", "z", "w"}));
  EXPECT_EQ(toks("don't").tokens(), (std::vector<std::string>{"don", "'", "t"}));
  EXPECT_EQ(toks("\xC3\x89t\xC3\xA9").tokens(), (std::vector<std::string>{"\xC3\x89t\xC3\xA9"}));
}

TEST(ModifiedPrecision, Examples) {
  const auto p = modified_precision(toks("the the the the the the the"),
                                    toks("the cat is on the mat"), 1);
  EXPECT_EQ(p.clipped, 2u);
  EXPECT_EQ(p.total, 7u);
  const auto same = toks("a b a c d");
  for (std::size_t n = 1; n <= 5; ++n) {
    const auto q = modified_precision(same, same, n);
    EXPECT_EQ(q.clipped, q.total);
  }
  const auto s = modified_precision(toks("a b"), toks("a b c"), 3);
  EXPECT_EQ(s.clipped, 0u);
  EXPECT_EQ(s.total, 0u);
}

TEST(Bleu, Examples) {
  EXPECT_EQ(bleu(toks("a b c d e"), toks("a b c d e")), 1.0);
  EXPECT_EQ(bleu(toks("a b c d e"), toks("a b c x d e")), 0.0);
  const auto hyp = toks("the cat sat on the mat");
  const auto ref = toks("the cat is on the mat");
  EXPECT_EQ(modified_precision(hyp, ref, 1).clipped, 5u);
  EXPECT_EQ(modified_precision(hyp, ref, 2).clipped, 3u);
  EXPECT_EQ(modified_precision(hyp, ref, 2).total, 5u);
  EXPECT_EQ(modified_precision(hyp, ref, 3).clipped, 1u);
  EXPECT_EQ(modified_precision(hyp, ref, 3).total, 4u);
  EXPECT_EQ(modified_precision(hyp, ref, 4).clipped, 0u);
  EXPECT_EQ(bleu(hyp, ref), 0.0);
  EXPECT_NEAR(bleu(hyp, ref, 3), 0.5, 1e-9);
}

TEST(Bleu, BrevityPenalty) {
  // 3 of 6 reference tokens, perfect precision: BP = exp(1 - 6/3).
  EXPECT_NEAR(bleu(toks("a b c"), toks("a b c d e f"), 2), std::exp(-1.0), 1e-12);
  EXPECT_EQ(bleu(toks(""), toks("a")), 0.0);
}

TEST(Bleu, AddingAnOrderNeverHelpsWhenPrecisionsDoNotRise) {
  std::mt19937_64 rng(31);
  int checked = 0;
  for (int t = 0; t < 5000; ++t) {
    const auto hyp = random_tokens(rng, 10, 3);
    const auto ref = random_tokens(rng, 10, 3);
    for (std::size_t n = 1; n < 4; ++n) {
      // The geometric mean can only fall when the added order is no better
      // than every order already included.
      bool non_increasing = true;
      double prev = 2.0;
      for (std::size_t k = 1; k <= n + 1 && non_increasing; ++k) {
        const auto c = modified_precision(hyp, ref, k);
        if (c.total == 0) {
          non_increasing = false;
          break;
        }
        const double pk = static_cast<double>(c.clipped) / static_cast<double>(c.total);
        non_increasing = pk <= prev;
        prev = pk;
      }
      if (!non_increasing) continue;
      ++checked;
      EXPECT_LE(bleu(hyp, ref, n + 1), bleu(hyp, ref, n) + 1e-15);
    }
  }
  EXPECT_GT(checked, 1000);
}

TEST(Bleu, AddingAnOrderCanHelpWhenPrecisionRises) {
  // p1 = 4/5, p2 = 4/4: the geometric mean rises from 0.8 to sqrt(0.8).
  const auto hyp = toks("a a b b a");
  const auto ref = toks("b b a a b");
  EXPECT_NEAR(bleu(hyp, ref, 1), 0.8, 1e-12);
  EXPECT_NEAR(bleu(hyp, ref, 2), std::sqrt(0.8), 1e-12);
  EXPECT_GT(bleu(hyp, ref, 2), bleu(hyp, ref, 1));
}

TEST(Meteor, Examples) {
  EXPECT_NEAR(meteor(toks("cat"), toks("cat")), 0.5, 1e-9);
  EXPECT_NEAR(meteor(toks("the cat sat"), toks("the cat sat")), 1.0 - 1.0 / 54.0, 1e-9);
  EXPECT_EQ(meteor(toks("a b"), toks("c d")), 0.0);
  EXPECT_EQ(meteor(toks(""), toks("c d")), 0.0);
}

TEST(Meteor, IdentityClosedForm) {
  std::string text;
  for (int m = 1; m <= 30; ++m) {
    text += "t" + std::to_string(m) + " ";
    const auto s = toks(text);
    const double md = m;
    EXPECT_NEAR(meteor(s, s), 1.0 - 0.5 / (md * md * md), 1e-12);
  }
}

TEST(Meteor, FewestChunksAmongMaximumMatchings) {
  // "a b" can align to either "a b" run; the contiguous one gives 1 chunk.
  const auto al = meteor_alignment(toks("a b"), toks("a x a b"));
  EXPECT_EQ(al.matches, 2u);
  EXPECT_EQ(al.chunks, 1u);
  EXPECT_TRUE(al.exact);
  const auto swapped = meteor_alignment(toks("b a"), toks("a b"));
  EXPECT_EQ(swapped.chunks, 2u);
}

TEST(Meteor, LongInputsStayBoundedAndFallBack) {
  std::string a, b;
  for (int i = 0; i < 200; ++i) {
    a += (i % 3 == 0 ? "x " : "y ");
    b += (i % 2 == 0 ? "x " : "y ");
  }
  const auto al = meteor_alignment(toks(a), toks(b), 1000);
  EXPECT_FALSE(al.exact);
  EXPECT_GE(al.chunks, 1u);
  EXPECT_LE(al.chunks, al.matches);
  const double s = meteor(toks(a), toks(b));
  EXPECT_GE(s, 0.0);
  EXPECT_LE(s, 1.0);
}

TEST(RougeL, Examples) {
  const auto r = rouge_l(toks("the cat sat on the mat"), toks("the cat is on the mat"));
  EXPECT_EQ(lcs_length(toks("the cat sat on the mat"), toks("the cat is on the mat")), 5u);
  EXPECT_NEAR(r.precision, 5.0 / 6.0, 1e-9);
  EXPECT_NEAR(r.recall, 5.0 / 6.0, 1e-9);
  const auto same = rouge_l(toks("x y z"), toks("x y z"));
  EXPECT_EQ(same.precision, 1.0);
  EXPECT_EQ(same.recall, 1.0);
  EXPECT_EQ(same.f1, 1.0);
  const auto none = rouge_l(toks("x y"), toks("p q"));
  EXPECT_EQ(none.precision, 0.0);
  EXPECT_EQ(none.f1, 0.0);
  EXPECT_EQ(rouge_l(toks(""), toks("")).f1, 0.0);
}

TEST(RougeL, LongSequencesMatchTableOracle) {
  std::mt19937_64 rng(71);
  std::uniform_int_distribution<int> sym(0, 4);
  for (std::size_t la : {1u, 30u, 63u, 64u, 65u, 130u}) {
    for (std::size_t lb : {1u, 63u, 64u, 65u, 128u, 200u}) {
      std::string ta, tb;
      for (std::size_t i = 0; i < la; ++i) ta += "s" + std::to_string(sym(rng)) + " ";
      for (std::size_t i = 0; i < lb; ++i) tb += "s" + std::to_string(sym(rng)) + " ";
      EXPECT_EQ(lcs_length(toks(ta), toks(tb)), oracle::lcs_table(oracle::split(ta), oracle::split(tb)))
          << la << " x " << lb;
    }
  }
}

TEST(RougeL, Duality) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 3000; ++t) {
    const auto a = random_tokens(rng, 12, 4);
    const auto b = random_tokens(rng, 12, 4);
    EXPECT_EQ(rouge_l(a, b).precision, rouge_l(b, a).recall);
  }
}

TEST(BertScore, Examples) {
  const TableEmbedder table;
  const auto r = bert_score(toks("a b"), toks("a"), table);
  EXPECT_NEAR(r.precision, 0.75, 1e-9);
  EXPECT_NEAR(r.recall, 1.0, 1e-9);
  const auto orth = bert_score(toks("a"), toks("z"), table);
  EXPECT_NEAR(orth.precision, 0.0, 1e-12);
  EXPECT_NEAR(orth.recall, 0.0, 1e-12);

  const HashingEmbedder hashing;
  const auto same = toks("the model highlights the left edge");
  const auto s = bert_score(same, same, hashing);
  EXPECT_NEAR(s.precision, 1.0, 1e-12);
  EXPECT_NEAR(s.recall, 1.0, 1e-12);
  EXPECT_NEAR(s.f1, 1.0, 1e-12);
}

TEST(BertScore, EmbedderContractViolations) {
  for (int mode : {0, 1, 2}) {
    const BrokenEmbedder broken(mode);
    EXPECT_EQ(code_of([&] { bert_score(toks("a"), toks("a"), broken); }),
              ErrorCode::EmbedderFailure)
        << "mode " << mode;
  }
}

TEST(HashingEmbedder, UnitNormAndDeterministic) {
  const HashingEmbedder e;
  for (const char* t : {"a", "cat", "saliency", "\xC3\xA9t\xC3\xA9", "..."}) {
    const auto v = e.embed_token(t);
    ASSERT_EQ(v.size(), 64u);
    double norm = 0;
    for (double x : v) {
      EXPECT_GE(x, 0.0);
      norm += x * x;
    }
    EXPECT_NEAR(std::sqrt(norm), 1.0, 1e-12);
    EXPECT_EQ(e.embed_token(t), v);
  }
}

TEST(Metrics, BoundedOnRandomInputs) {
  std::mt19937_64 rng(123);
  const HashingEmbedder e;
  for (int t = 0; t < 3000; ++t) {
    const auto a = random_tokens(rng, 15, 6);
    const auto b = random_tokens(rng, 15, 6);
    for (double v : {bleu(a, b), bleu(a, b, 2), meteor(a, b), rouge_l(a, b).precision,
                     rouge_l(a, b).recall, rouge_l(a, b).f1, bert_score(a, b, e).precision,
                     bert_score(a, b, e).recall, bert_score(a, b, e).f1}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Metrics, IdentityGivesContractMaxima) {
  std::mt19937_64 rng(55);
  const HashingEmbedder e;
  for (int t = 0; t < 500; ++t) {
    const auto a = random_tokens(rng, 12, 8);
    if (a.empty()) continue;
    EXPECT_EQ(rouge_l(a, a).precision, 1.0);
    EXPECT_NEAR(bert_score(a, a, e).precision, 1.0, 1e-12);
    if (a.size() >= 4) EXPECT_NEAR(bleu(a, a), 1.0, 1e-12);
    const double m = static_cast<double>(a.size());
    EXPECT_NEAR(meteor(a, a), 1.0 - 0.5 / (m * m * m), 1e-12);
  }
}

TEST(Exhaustive, LcsMatchesSubsequenceOracle) {
  const auto r = criteria::exhaustive_lcs(6, 3);
  EXPECT_TRUE(r.pass) << r.detail;
}

TEST(Exhaustive, MeteorAlignmentMatchesBruteForce) {
  const auto r = criteria::exhaustive_meteor(5, 3);
  EXPECT_TRUE(r.pass) << r.detail;
}

TEST(Aggregate, Examples) {
  const MetricRow row{"s1", 0.2, 0.3, 0.4, 0.5};
  const auto single = aggregate({row}, TaskKind::Detection);
  EXPECT_EQ(single.aggregate.bleu, 0.2);
  EXPECT_EQ(single.aggregate.bertscore_precision, 0.5);
  EXPECT_EQ(single.per_sample.front(), row);

  const auto two = aggregate({{"a", 0.2, 0, 0, 0}, {"b", 0.4, 0, 0, 0}}, TaskKind::Detection);
  EXPECT_NEAR(two.aggregate.bleu, 0.3, 1e-12);
  EXPECT_EQ(code_of([] { aggregate({}, TaskKind::Classification); }), ErrorCode::EmptyInput);
}

TEST(Aggregate, StoredReferenceRowsReproduceStoredMeans) {
  std::ifstream in(std::string(LANGXAI_DATA_DIR) + "/reference_scores.json");
  ASSERT_TRUE(in.good());
  const json j = json::parse(in);
  // Expected aggregates: BLEU, METEOR, ROUGE-L precision, BERTScore precision.
  const std::map<std::string, std::array<double, 4>> expected{
      {"classification", {0.2971, 0.5122, 0.5196, 0.9341}},
      {"segmentation", {0.2552, 0.4741, 0.4714, 0.8594}},
      {"detection", {0.2754, 0.4904, 0.4911, 0.9093}}};
  std::vector<MetricReport> reports;
  for (const auto& entry : j.at("reports")) {
    const auto stored = entry.get<MetricReport>();
    const auto recomputed = aggregate(stored.per_sample, stored.task);
    const auto& want = expected.at(std::string(to_string(stored.task)));
    EXPECT_EQ(stored.per_sample.size(), 5u);
    EXPECT_NEAR(recomputed.aggregate.bleu, want[0], 1e-12);
    EXPECT_NEAR(recomputed.aggregate.meteor, want[1], 1e-12);
    EXPECT_NEAR(recomputed.aggregate.rouge_l_precision, want[2], 1e-12);
    EXPECT_NEAR(recomputed.aggregate.bertscore_precision, want[3], 1e-12);
    EXPECT_NEAR(stored.aggregate.bertscore_precision, want[3], 1e-12);
    reports.push_back(recomputed);
  }
  ASSERT_EQ(reports.size(), 3u);
  const std::string csv = report_csv(reports, 4);
  EXPECT_NE(csv.find("classification,0.2971,0.5122,0.5196,0.9341"), std::string::npos) << csv;
  const std::string table = report_table(reports);
  EXPECT_EQ(table.rfind("headline classification: BERTScore-P 0.9341", 0), 0u) << table;
}

TEST(Pairs, ParseAndEvaluate) {
  const std::string text =
      R"({"sample_id":"p1","task":"classification","hypothesis":"the cat sat on the mat","reference":"the cat is on the mat"})"
      "\n\n"
      R"({"sample_id":"p2","task":"detection","hypothesis":"cat","reference":"cat"})"
      "\n";
  const auto pairs = parse_pairs(text);
  ASSERT_EQ(pairs.size(), 2u);
  const HashingEmbedder e;
  const auto report = evaluate_pairs(pairs, TaskKind::Classification, e);
  ASSERT_EQ(report.per_sample.size(), 1u);
  EXPECT_NEAR(report.aggregate.rouge_l_precision, 5.0 / 6.0, 1e-12);
  EXPECT_EQ(report.aggregate.bleu, 0.0);

  try {
    parse_pairs("{\"sample_id\":\"x\"}\nnot json\n", "pairs.jsonl");
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::ParseError);
    EXPECT_NE(std::string(err.what()).find("pairs.jsonl:1"), std::string::npos);
  }
}

TEST(Report, JsonRoundTrip) {
  const auto report = aggregate({{"a", 0.1, 0.2, 0.3, 0.4}, {"b", 0.5, 0.6, 0.7, 0.8}},
                                TaskKind::Segmentation);
  const auto back = json(report).get<MetricReport>();
  EXPECT_EQ(back.per_sample, report.per_sample);
  EXPECT_EQ(back.aggregate, report.aggregate);
  EXPECT_EQ(back.task, TaskKind::Segmentation);
}
