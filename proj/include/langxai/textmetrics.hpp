#pragma once

// Reference-based scoring of explanation texts: BLEU, METEOR (exact-match
// stage), ROUGE-L and a BERTScore-style greedy embedding match.

#include <algorithm>
#include <array>
#include <mutex>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "langxai/domain.hpp"

namespace langxai {

class TokenSeq;
TokenSeq tokenize(std::string_view text);

/// Lower-cased tokens; only tokenize() creates these.
class TokenSeq {
 public:
  TokenSeq() = default;

  std::size_t size() const noexcept { return tokens_.size(); }
  bool empty() const noexcept { return tokens_.empty(); }
  const std::string& operator[](std::size_t i) const { return tokens_[i]; }
  auto begin() const noexcept { return tokens_.begin(); }
  auto end() const noexcept { return tokens_.end(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  /// Process-wide token id: equal ids exactly when the strings are equal.
  std::uint32_t id(std::size_t i) const { return ids_[i]; }
  bool same(std::size_t i, const TokenSeq& other, std::size_t j) const {
    return ids_[i] == other.ids_[j];
  }

  friend bool operator==(const TokenSeq&, const TokenSeq&) = default;

 private:
  friend TokenSeq tokenize(std::string_view text);
  std::vector<std::string> tokens_;
  std::vector<std::uint32_t> ids_;
};

namespace text_detail {

/// Interns token strings so sequences compare tokens as integers. Grows
/// with the vocabulary seen by the process.
class TokenInterner {
 public:
  std::uint32_t intern(const std::string& token) {
    std::lock_guard lock(mutex_);
    return ids_.try_emplace(token, static_cast<std::uint32_t>(ids_.size())).first->second;
  }

 private:
  std::mutex mutex_;
  std::unordered_map<std::string, std::uint32_t> ids_;
};

inline TokenInterner& token_interner() {
  static TokenInterner interner;
  return interner;
}

inline bool is_punct(char c) {
  switch (c) {
    case '.': case ',': case '!': case '?': case ';': case ':':
    case '(': case ')': case '"': case '\'':
      return true;
    default:
      return false;
  }
}

/// Length in bytes of a whitespace code point starting at s[i], or 0.
inline std::size_t whitespace_len(std::string_view s, std::size_t i) {
  const auto b = [&](std::size_t k) {
    return i + k < s.size() ? static_cast<unsigned char>(s[i + k]) : 0U;
  };
  const unsigned c0 = b(0);
  if (c0 == ' ' || (c0 >= 0x09 && c0 <= 0x0D)) return 1;
  const unsigned c1 = b(1);
  const unsigned c2 = b(2);
  if (c0 == 0xC2 && (c1 == 0x85 || c1 == 0xA0)) return 2;  // NEL, NBSP
  if (c0 == 0xE1 && c1 == 0x9A && c2 == 0x80) return 3;    // U+1680
  if (c0 == 0xE2 && c1 == 0x80 &&
      ((c2 >= 0x80 && c2 <= 0x8A) || c2 == 0xA8 || c2 == 0xA9 || c2 == 0xAF)) {
    return 3;  // U+2000..200A, U+2028, U+2029, U+202F
  }
  if (c0 == 0xE2 && c1 == 0x81 && c2 == 0x9F) return 3;  // U+205F
  if (c0 == 0xE3 && c1 == 0x80 && c2 == 0x80) return 3;  // U+3000
  return 0;
}

}  // namespace text_detail

/// Lower-cases ASCII letters, splits on Unicode whitespace and detaches each
/// maximal run of . , ! ? ; : ( ) " ' as its own token.
inline TokenSeq tokenize(std::string_view text) {
  TokenSeq seq;
  std::string word;
  std::string punct;
  const auto flush_word = [&] {
    if (!word.empty()) seq.tokens_.push_back(std::move(word));
    word.clear();
  };
  const auto flush_punct = [&] {
    if (!punct.empty()) seq.tokens_.push_back(std::move(punct));
    punct.clear();
  };
  std::size_t i = 0;
  while (i < text.size()) {
    if (const std::size_t ws = text_detail::whitespace_len(text, i); ws > 0) {
      flush_word();
      flush_punct();
      i += ws;
      continue;
    }
    const char c = text[i];
    if (text_detail::is_punct(c)) {
      flush_word();
      punct.push_back(c);
    } else {
      flush_punct();
      word.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : c);
    }
    ++i;
  }
  flush_word();
  flush_punct();
  seq.ids_.reserve(seq.tokens_.size());
  auto& interner = text_detail::token_interner();
  for (const auto& t : seq.tokens_) seq.ids_.push_back(interner.intern(t));
  return seq;
}

// ---------------------------------------------------------------------------
// BLEU

struct NgramCount {
  std::size_t clipped = 0;
  std::size_t total = 0;
  friend bool operator==(const NgramCount&, const NgramCount&) = default;
};

namespace text_detail {

inline std::unordered_map<std::string, std::size_t> ngram_counts(const TokenSeq& seq,
                                                                 std::size_t n) {
  std::unordered_map<std::string, std::size_t> counts;
  if (seq.size() < n) return counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) {
    std::string key;
    for (std::size_t k = 0; k < n; ++k) {
      key += std::to_string(seq[i + k].size());
      key += ':';
      key += seq[i + k];
    }
    ++counts[key];
  }
  return counts;
}

}  // namespace text_detail

/// Hypothesis n-grams clipped to their reference multiplicity.
inline NgramCount modified_precision(const TokenSeq& hyp, const TokenSeq& ref, std::size_t n) {
  require(n >= 1, ErrorCode::InvalidParameter, "n-gram order must be >= 1");
  const auto hc = text_detail::ngram_counts(hyp, n);
  const auto rc = text_detail::ngram_counts(ref, n);
  NgramCount out;
  for (const auto& [gram, count] : hc) {
    out.total += count;
    auto it = rc.find(gram);
    if (it != rc.end()) out.clipped += std::min(count, it->second);
  }
  return out;
}

/// Sentence-level, single-reference, unsmoothed BLEU.
inline double bleu(const TokenSeq& hyp, const TokenSeq& ref, std::size_t max_n = 4) {
  require(max_n >= 1, ErrorCode::InvalidParameter, "max_n must be >= 1");
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    const NgramCount p = modified_precision(hyp, ref, n);
    if (p.total == 0 || p.clipped == 0) return 0.0;
    log_sum += std::log(static_cast<double>(p.clipped) / static_cast<double>(p.total));
  }
  const double c = static_cast<double>(hyp.size());
  const double r = static_cast<double>(ref.size());
  const double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
  return std::clamp(bp * std::exp(log_sum / static_cast<double>(max_n)), 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// METEOR

struct MeteorAlignment {
  std::size_t matches = 0;
  std::size_t chunks = 0;
  bool exact = true;  // false when the search budget ran out
  friend bool operator==(const MeteorAlignment&, const MeteorAlignment&) = default;
};

namespace text_detail {

/// Chunks of an alignment given as ref index per hyp position (-1: none).
inline std::size_t count_chunks(const std::vector<long>& ref_of_hyp) {
  std::size_t chunks = 0;
  long prev = -2;
  for (long j : ref_of_hyp) {
    if (j >= 0 && !(prev >= 0 && j == prev + 1)) ++chunks;
    prev = j;
  }
  return chunks;
}

/// Greedy longest-run-first alignment; always reaches the maximum match
/// count, used as the fallback when exhaustive search is too large.
inline std::vector<long> greedy_alignment(const TokenSeq& hyp, const TokenSeq& ref) {
  std::vector<long> ref_of_hyp(hyp.size(), -1);
  std::vector<bool> ref_used(ref.size(), false);
  for (;;) {
    std::size_t best_len = 0, best_i = 0, best_j = 0;
    for (std::size_t i = 0; i < hyp.size(); ++i) {
      for (std::size_t j = 0; j < ref.size(); ++j) {
        std::size_t len = 0;
        while (i + len < hyp.size() && j + len < ref.size() && ref_of_hyp[i + len] < 0 &&
               !ref_used[j + len] && hyp[i + len] == ref[j + len]) {
          ++len;
        }
        if (len > best_len) {
          best_len = len;
          best_i = i;
          best_j = j;
        }
      }
    }
    if (best_len == 0) break;
    for (std::size_t k = 0; k < best_len; ++k) {
      ref_of_hyp[best_i + k] = static_cast<long>(best_j + k);
      ref_used[best_j + k] = true;
    }
  }
  return ref_of_hyp;
}

/// Exact minimum-chunk search over all maximum matchings, memoised on
/// (hyp position, previous ref index, used ref positions).
class ChunkSearch {
 public:
  ChunkSearch(const TokenSeq& hyp, const TokenSeq& ref, std::size_t state_budget)
      : hyp_(hyp), ref_(ref), budget_(state_budget), words_((ref.size() + 63) / 64) {
    std::unordered_map<std::string, int> ids;
    const auto id_of = [&](const std::string& w) {
      return ids.try_emplace(w, static_cast<int>(ids.size())).first->second;
    };
    for (const auto& t : hyp_) hyp_ids_.push_back(id_of(t));
    for (const auto& t : ref_) ref_ids_.push_back(id_of(t));
    const std::size_t vocab = ids.size();
    std::vector<std::size_t> hc(vocab, 0), rc(vocab, 0);
    for (int w : hyp_ids_) ++hc[static_cast<std::size_t>(w)];
    for (int w : ref_ids_) ++rc[static_cast<std::size_t>(w)];
    quota_.resize(vocab);
    for (std::size_t w = 0; w < vocab; ++w) {
      quota_[w] = std::min(hc[w], rc[w]);
      matches_ += quota_[w];
    }
    // hyp_left_[i][w]: occurrences of w in hyp[i..].
    hyp_left_.assign(hyp_.size() + 1, std::vector<std::size_t>(vocab, 0));
    for (std::size_t i = hyp_.size(); i-- > 0;) {
      hyp_left_[i] = hyp_left_[i + 1];
      ++hyp_left_[i][static_cast<std::size_t>(hyp_ids_[i])];
    }
    refs_of_word_.resize(vocab);
    for (std::size_t j = 0; j < ref_ids_.size(); ++j) {
      refs_of_word_[static_cast<std::size_t>(ref_ids_[j])].push_back(j);
    }
  }

  std::size_t matches() const { return matches_; }

  /// Minimum chunk count, or nullopt when the state budget is exhausted.
  std::optional<std::size_t> solve() {
    if (matches_ == 0) return 0;
    std::vector<std::uint64_t> used(words_, 0);
    std::vector<std::size_t> taken(quota_.size(), 0);
    const std::size_t r = best(0, -1, used, taken);
    if (overflow_) return std::nullopt;
    return r;
  }

 private:
  static constexpr std::size_t kInfeasible = static_cast<std::size_t>(-1) / 2;

  std::size_t best(std::size_t i, long prev, std::vector<std::uint64_t>& used,
                   std::vector<std::size_t>& taken) {
    if (overflow_) return kInfeasible;
    if (i == hyp_.size()) return 0;  // quotas are guaranteed by the skip rule

    const bool packed = words_ <= 1 && ref_.size() <= 32 && hyp_.size() < (1U << 16);
    std::uint64_t small_key = 0;
    StateKey key;
    if (packed) {
      small_key = static_cast<std::uint64_t>(i) << 48 |
                  static_cast<std::uint64_t>(prev + 1) << 32 | (used.empty() ? 0 : used[0]);
      if (auto it = small_memo_.find(small_key); it != small_memo_.end()) return it->second;
    } else {
      key = make_key(i, prev, used);
      if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    }
    if (small_memo_.size() + memo_.size() >= budget_) {
      overflow_ = true;
      return kInfeasible;
    }

    const auto w = static_cast<std::size_t>(hyp_ids_[i]);
    const std::size_t need = quota_[w] - taken[w];
    std::size_t result = kInfeasible;

    if (need > 0) {
      for (std::size_t j : refs_of_word_[w]) {
        if (used[j / 64] >> (j % 64) & 1U) continue;
        used[j / 64] |= std::uint64_t{1} << (j % 64);
        ++taken[w];
        const bool extends = prev >= 0 && static_cast<long>(j) == prev + 1;
        const std::size_t rest = best(i + 1, static_cast<long>(j), used, taken);
        if (rest < kInfeasible) result = std::min(result, rest + (extends ? 0 : 1));
        --taken[w];
        used[j / 64] &= ~(std::uint64_t{1} << (j % 64));
      }
    }
    // Leaving hyp[i] unmatched is allowed only if later occurrences can
    // still fill the quota.
    if (hyp_left_[i + 1][w] >= need) {
      const std::size_t rest = best(i + 1, -1, used, taken);
      result = std::min(result, rest);
    }
    if (packed) {
      small_memo_.emplace(small_key, result);
    } else {
      memo_.emplace(std::move(key), result);
    }
    return result;
  }

  // Hyp position and previous ref index pack into the first word (both are
  // far below 2^32); the used-ref bitset follows.
  using StateKey = std::vector<std::uint64_t>;
  struct KeyHash {
    std::size_t operator()(const StateKey& k) const noexcept {
      std::uint64_t h = 0xcbf29ce484222325ULL;
      for (std::uint64_t w : k) h = (h ^ w) * 0x100000001b3ULL ^ (h >> 29);
      return static_cast<std::size_t>(h);
    }
  };

  static StateKey make_key(std::size_t i, long prev, const std::vector<std::uint64_t>& used) {
    StateKey key(used.size() + 1);
    key[0] = static_cast<std::uint64_t>(i) << 32 | static_cast<std::uint32_t>(prev + 1);
    std::copy(used.begin(), used.end(), key.begin() + 1);
    return key;
  }

  const TokenSeq& hyp_;
  const TokenSeq& ref_;
  std::size_t budget_;
  std::size_t words_;
  std::vector<int> hyp_ids_, ref_ids_;
  std::vector<std::size_t> quota_;
  std::vector<std::vector<std::size_t>> hyp_left_;
  std::vector<std::vector<std::size_t>> refs_of_word_;
  std::size_t matches_ = 0;
  std::unordered_map<std::uint64_t, std::size_t> small_memo_;
  std::unordered_map<StateKey, std::size_t, KeyHash> memo_;
  bool overflow_ = false;
};

}  // namespace text_detail

/// Maximum exact one-to-one alignment with the fewest chunks. Exhaustive up
/// to `state_budget` memo states, greedy longest-run matching beyond that.
inline MeteorAlignment meteor_alignment(const TokenSeq& hyp, const TokenSeq& ref,
                                        std::size_t state_budget = 2'000'000) {
  text_detail::ChunkSearch search(hyp, ref, state_budget);
  if (search.matches() == 0) return {0, 0, true};
  if (auto chunks = search.solve()) return {search.matches(), *chunks, true};
  const auto greedy = text_detail::greedy_alignment(hyp, ref);
  return {search.matches(), text_detail::count_chunks(greedy), false};
}

/// F = 10PR/(R+9P), penalty 0.5 (chunks/matches)^3.
inline double meteor_from_alignment(const MeteorAlignment& a, std::size_t hyp_len,
                                    std::size_t ref_len) {
  if (a.matches == 0) return 0.0;
  const double m = static_cast<double>(a.matches);
  const double p = m / static_cast<double>(hyp_len);
  const double r = m / static_cast<double>(ref_len);
  const double f = 10.0 * p * r / (r + 9.0 * p);
  const double frag = static_cast<double>(a.chunks) / m;
  const double penalty = 0.5 * frag * frag * frag;
  return std::clamp(f * (1.0 - penalty), 0.0, 1.0);
}

inline double meteor(const TokenSeq& hyp, const TokenSeq& ref) {
  return meteor_from_alignment(meteor_alignment(hyp, ref), hyp.size(), ref.size());
}

// ---------------------------------------------------------------------------
// ROUGE-L

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline double harmonic_mean(double p, double r) {
  return (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

/// LCS length. References of up to 64 tokens use the bit-parallel row
/// update (one machine word per hypothesis token); longer ones fall back to
/// the rolling-row dynamic program.
inline std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b) {
  const std::size_t n = b.size();
  if (n == 0 || a.empty()) return 0;
  if (n <= 64) {
    const std::uint64_t all = n == 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << n) - 1;
    std::uint64_t v = all;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const std::uint32_t t = a.id(i);
      std::uint64_t match = 0;
      for (std::size_t j = 0; j < n; ++j) match |= std::uint64_t{b.id(j) == t} << j;
      const std::uint64_t u = v & match;
      v = ((v + u) | (v - u)) & all;
    }
    return n - static_cast<std::size_t>(std::popcount(v));
  }
  std::vector<std::size_t> row(n + 1, 0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    std::size_t diag = 0;
    for (std::size_t j = 1; j <= n; ++j) {
      const std::size_t up = row[j];
      row[j] = a.same(i, b, j - 1) ? diag + 1 : std::max(up, row[j - 1]);
      diag = up;
    }
  }
  return row[n];
}

inline PrecisionRecall rouge_l(const TokenSeq& hyp, const TokenSeq& ref) {
  if (hyp.empty() || ref.empty()) return {};
  const double l = static_cast<double>(lcs_length(hyp, ref));
  PrecisionRecall out;
  out.precision = l / static_cast<double>(hyp.size());
  out.recall = l / static_cast<double>(ref.size());
  out.f1 = harmonic_mean(out.precision, out.recall);
  return out;
}

// ---------------------------------------------------------------------------
// BERTScore-style matching

using Embedding = std::vector<double>;

/// Maps every token of a sequence to a unit-norm vector, deterministically.
/// Contextual encoders may look at the whole sequence.
class TokenEmbedder {
 public:
  virtual ~TokenEmbedder() = default;
  virtual std::vector<Embedding> embed(const TokenSeq& tokens) const = 0;
};

/// Feature hashing of character 3-grams (token padded with '<' and '>')
/// into 64 buckets, L2-normalised. Counts are non-negative, so cosines lie
/// in [0,1].
class HashingEmbedder final : public TokenEmbedder {
 public:
  explicit HashingEmbedder(std::size_t dims = 64) : dims_(dims) {}

  std::vector<Embedding> embed(const TokenSeq& tokens) const override {
    std::vector<Embedding> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(embed_token(t));
    return out;
  }

  Embedding embed_token(std::string_view token) const {
    const std::string padded = "<" + std::string(token) + ">";
    Embedding v(dims_, 0.0);
    for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
      std::uint64_t h = 14695981039346656037ULL;  // FNV-1a
      for (std::size_t k = 0; k < 3; ++k) {
        h ^= static_cast<unsigned char>(padded[i + k]);
        h *= 1099511628211ULL;
      }
      v[h % dims_] += 1.0;
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
  }

 private:
  std::size_t dims_;
};

namespace text_detail {

inline std::vector<Embedding> checked_embed(const TokenEmbedder& embedder, const TokenSeq& seq) {
  std::vector<Embedding> out;
  try {
    out = embedder.embed(seq);
  } catch (const std::exception& e) {
    throw Error(ErrorCode::EmbedderFailure, std::string("embedder failed: ") + e.what());
  }
  require(out.size() == seq.size(), ErrorCode::EmbedderFailure,
          "embedder returned the wrong number of vectors");
  for (const auto& v : out) {
    require(!v.empty() && v.size() == out.front().size(), ErrorCode::EmbedderFailure,
            "embedder returned vectors of inconsistent dimension");
    double norm = 0.0;
    for (double x : v) {
      require(std::isfinite(x), ErrorCode::EmbedderFailure, "embedder returned a non-finite value");
      norm += x * x;
    }
    require(std::abs(std::sqrt(norm) - 1.0) <= 1e-6, ErrorCode::EmbedderFailure,
            "embedder returned a vector that is not unit-norm");
  }
  return out;
}

inline double greedy_side(const std::vector<Embedding>& from, const std::vector<Embedding>& to) {
  double sum = 0.0;
  for (const auto& a : from) {
    double best = 0.0;
    for (const auto& b : to) {
      double dot = 0.0;
      for (std::size_t k = 0; k < a.size(); ++k) dot += a[k] * b[k];
      best = std::max(best, dot);
    }
    sum += std::min(best, 1.0);
  }
  return sum / static_cast<double>(from.size());
}

}  // namespace text_detail

/// Precision: mean over hypothesis tokens of the best cosine against the
/// reference (recall symmetric); no idf weighting. Cosines are clipped to
/// [0,1].
inline PrecisionRecall bert_score(const TokenSeq& hyp, const TokenSeq& ref,
                                  const TokenEmbedder& embedder) {
  if (hyp.empty() || ref.empty()) return {};
  const auto eh = text_detail::checked_embed(embedder, hyp);
  const auto er = text_detail::checked_embed(embedder, ref);
  require(eh.front().size() == er.front().size(), ErrorCode::EmbedderFailure,
          "hypothesis and reference embeddings differ in dimension");
  PrecisionRecall out;
  out.precision = text_detail::greedy_side(eh, er);
  out.recall = text_detail::greedy_side(er, eh);
  out.f1 = harmonic_mean(out.precision, out.recall);
  return out;
}

// ---------------------------------------------------------------------------
// Reports

struct MetricRow {
  std::string sample_id;
  double bleu = 0.0;
  double meteor = 0.0;
  double rouge_l_precision = 0.0;
  double bertscore_precision = 0.0;
  friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

struct MetricReport {
  TaskKind task = TaskKind::Classification;
  std::vector<MetricRow> per_sample;
  MetricRow aggregate;
};

inline MetricRow score_pair(std::string sample_id, std::string_view hypothesis,
                            std::string_view reference, const TokenEmbedder& embedder) {
  const TokenSeq hyp = tokenize(hypothesis);
  const TokenSeq ref = tokenize(reference);
  return {std::move(sample_id), bleu(hyp, ref), meteor(hyp, ref), rouge_l(hyp, ref).precision,
          bert_score(hyp, ref, embedder).precision};
}

inline MetricReport aggregate(std::vector<MetricRow> rows, TaskKind task) {
  require(!rows.empty(), ErrorCode::EmptyInput, "cannot aggregate zero rows");
  MetricReport report{task, std::move(rows), {"mean", 0, 0, 0, 0}};
  const double n = static_cast<double>(report.per_sample.size());
  for (const auto& r : report.per_sample) {
    report.aggregate.bleu += r.bleu;
    report.aggregate.meteor += r.meteor;
    report.aggregate.rouge_l_precision += r.rouge_l_precision;
    report.aggregate.bertscore_precision += r.bertscore_precision;
  }
  report.aggregate.bleu /= n;
  report.aggregate.meteor /= n;
  report.aggregate.rouge_l_precision /= n;
  report.aggregate.bertscore_precision /= n;
  return report;
}

inline void to_json(json& j, const MetricRow& r) {
  j = json{{"sample_id", r.sample_id},
           {"bleu", r.bleu},
           {"meteor", r.meteor},
           {"rouge_l_precision", r.rouge_l_precision},
           {"bertscore_precision", r.bertscore_precision}};
}
inline void from_json(const json& j, MetricRow& r) {
  r.sample_id = j.value("sample_id", std::string{});
  r.bleu = j.at("bleu").get<double>();
  r.meteor = j.at("meteor").get<double>();
  r.rouge_l_precision = j.at("rouge_l_precision").get<double>();
  r.bertscore_precision = j.at("bertscore_precision").get<double>();
}
inline void to_json(json& j, const MetricReport& r) {
  j = json{{"task", r.task}, {"per_sample", r.per_sample}, {"aggregate", r.aggregate}};
}
inline void from_json(const json& j, MetricReport& r) {
  r.task = j.at("task").get<TaskKind>();
  r.per_sample = j.at("per_sample").get<std::vector<MetricRow>>();
  r.aggregate = j.at("aggregate").get<MetricRow>();
}

namespace text_detail {
inline std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}
}  // namespace text_detail

/// One row per task, columns in the order Task, BLEU, METEOR, ROUGE-L,
/// BERTScore (ROUGE-L and BERTScore are precisions).
inline std::string report_csv(const std::vector<MetricReport>& reports, int digits = 6) {
  std::string out = "task,BLEU,METEOR,ROUGE-L,BERTScore\n";
  for (const auto& r : reports) {
    out += std::string(to_string(r.task)) + "," + text_detail::fixed(r.aggregate.bleu, digits) +
           "," + text_detail::fixed(r.aggregate.meteor, digits) + "," +
           text_detail::fixed(r.aggregate.rouge_l_precision, digits) + "," +
           text_detail::fixed(r.aggregate.bertscore_precision, digits) + "\n";
  }
  return out;
}

inline std::string per_sample_csv(const MetricReport& report, int digits = 6) {
  std::string out = "sample_id,BLEU,METEOR,ROUGE-L,BERTScore\n";
  for (const auto& r : report.per_sample) {
    out += r.sample_id + "," + text_detail::fixed(r.bleu, digits) + "," +
           text_detail::fixed(r.meteor, digits) + "," +
           text_detail::fixed(r.rouge_l_precision, digits) + "," +
           text_detail::fixed(r.bertscore_precision, digits) + "\n";
  }
  return out;
}

/// Human-readable table. The headline line leads with BERTScore precision.
inline std::string report_table(const std::vector<MetricReport>& reports) {
  std::ostringstream os;
  for (const auto& r : reports) {
    os << "headline " << to_string(r.task) << ": BERTScore-P "
       << text_detail::fixed(r.aggregate.bertscore_precision, 4) << "  ROUGE-L-P "
       << text_detail::fixed(r.aggregate.rouge_l_precision, 4) << "  (n=" << r.per_sample.size()
       << ")\n";
  }
  char line[160];
  std::snprintf(line, sizeof line, "%-24s %8s %8s %8s %10s\n", "Task", "BLEU", "METEOR",
                "ROUGE-L", "BERTScore");
  os << line;
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line, "%-24s %8.4f %8.4f %8.4f %10.4f\n",
                  std::string(to_string(r.task)).c_str(), r.aggregate.bleu, r.aggregate.meteor,
                  r.aggregate.rouge_l_precision, r.aggregate.bertscore_precision);
    os << line;
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Pair files: one JSON object per line {sample_id, task, hypothesis, reference}.

struct TextPair {
  std::string sample_id;
  TaskKind task = TaskKind::Classification;
  std::string hypothesis;
  std::string reference;
};

inline std::vector<TextPair> parse_pairs(std::string_view text, std::string_view source = "pairs") {
  std::vector<TextPair> pairs;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(start, end - start);
    ++line_no;
    start = end + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) {
      if (end == text.size()) break;
      continue;
    }
    try {
      const json j = json::parse(line);
      pairs.push_back({j.at("sample_id").get<std::string>(), j.at("task").get<TaskKind>(),
                       j.at("hypothesis").get<std::string>(),
                       j.at("reference").get<std::string>()});
    } catch (const std::exception& e) {
      throw Error(ErrorCode::ParseError, std::string(source) + ":" + std::to_string(line_no) +
                                             ": " + e.what());
    }
    if (end == text.size()) break;
  }
  return pairs;
}

/// Scores every pair of `task` and aggregates them.
inline MetricReport evaluate_pairs(const std::vector<TextPair>& pairs, TaskKind task,
                                   const TokenEmbedder& embedder) {
  std::vector<MetricRow> rows;
  for (const auto& p : pairs) {
    if (p.task != task) continue;
    rows.push_back(score_pair(p.sample_id, p.hypothesis, p.reference, embedder));
  }
  return aggregate(std::move(rows), task);
}

}  // namespace langxai
