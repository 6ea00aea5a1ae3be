#pragma once

// Independent reference computations used to freeze expected values. None of
// these call into the code paths they check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

namespace oracle {

using Words = std::vector<std::string>;

inline Words split(const std::string& s) {
  Words out;
  std::string cur;
  for (char c : s) {
    if (c == ' ') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

/// Plain recursive LCS, exponential; fine for length <= 8.
inline std::size_t lcs(const Words& a, const Words& b, std::size_t i = 0, std::size_t j = 0) {
  if (i == a.size() || j == b.size()) return 0;
  if (a[i] == b[j]) return 1 + lcs(a, b, i + 1, j + 1);
  return std::max(lcs(a, b, i + 1, j), lcs(a, b, i, j + 1));
}

/// Full-table LCS over plain strings, for inputs too long for recursion.
inline std::size_t lcs_table(const Words& a, const Words& b) {
  std::vector<std::vector<std::size_t>> t(a.size() + 1, std::vector<std::size_t>(b.size() + 1, 0));
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      t[i][j] = a[i - 1] == b[j - 1] ? t[i - 1][j - 1] + 1 : std::max(t[i - 1][j], t[i][j - 1]);
    }
  }
  return t[a.size()][b.size()];
}

struct MatchStats {
  std::size_t matches = 0;
  std::size_t chunks = 0;
};

/// Enumerates every one-to-one exact-match alignment; returns the largest
/// match count and, among alignments of that size, the fewest chunks.
class MatchingEnumerator {
 public:
  MatchingEnumerator(const Words& hyp, const Words& ref) : hyp_(hyp), ref_(ref) {}

  MatchStats run() {
    best_ = {0, std::numeric_limits<std::size_t>::max()};
    visit(0, -1, 0, 0, 0);
    if (best_.matches == 0) best_.chunks = 0;
    return best_;
  }

 private:
  // prev: ref index matched at position i-1, or -1 when it was unmatched.
  void visit(std::size_t i, long prev, std::uint64_t used, std::size_t m, std::size_t ch) {
    if (i == hyp_.size()) {
      if (m > best_.matches || (m == best_.matches && ch < best_.chunks)) best_ = {m, ch};
      return;
    }
    visit(i + 1, -1, used, m, ch);
    for (std::size_t j = 0; j < ref_.size(); ++j) {
      if ((used >> j & 1U) || ref_[j] != hyp_[i]) continue;
      const bool continues = prev >= 0 && static_cast<long>(j) == prev + 1;
      visit(i + 1, static_cast<long>(j), used | std::uint64_t{1} << j, m + 1,
            ch + (continues ? 0 : 1));
    }
  }

  const Words& hyp_;
  const Words& ref_;
  MatchStats best_;
};

inline MatchStats meteor_brute_force(const Words& hyp, const Words& ref) {
  return MatchingEnumerator(hyp, ref).run();
}

/// Average ranks (1-based), values within `tie_tol` treated as tied.
inline std::vector<double> ranks(const std::vector<double>& v, double tie_tol) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] - v[order[i]] <= tie_tol) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  return cov / std::sqrt(va * vb);
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b,
                       double tie_tol = 1e-12) {
  return pearson(ranks(a, tie_tol), ranks(b, tie_tol));
}

/// Class-0 probability of the left/right region scorer written out by hand:
/// logistic(left_sum - right_sum) over a grayscale row-major image.
inline double region_scorer_p0(const std::vector<double>& pixels, std::size_t h, std::size_t w) {
  double left = 0, right = 0;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (2 * x + 1 < w) left += pixels[y * w + x];
      if (2 * x + 1 > w) right += pixels[y * w + x];
    }
  }
  return 1.0 / (1.0 + std::exp(right - left));
}

/// Exhaustive RISE for the region scorer on an h x w grayscale image with
/// one mask cell per pixel: S = 1/(N p) sum_M f(I*M) M, p = 1/2.
inline std::vector<double> exhaustive_rise_region_scorer(const std::vector<double>& pixels,
                                                         std::size_t h, std::size_t w) {
  const std::size_t cells = h * w;
  const std::size_t n = std::size_t{1} << cells;
  std::vector<double> s(cells, 0.0);
  std::vector<double> masked(cells);
  for (std::size_t bits = 0; bits < n; ++bits) {
    for (std::size_t c = 0; c < cells; ++c) {
      masked[c] = (bits >> c & 1U) ? pixels[c] : 0.0;
    }
    const double f = region_scorer_p0(masked, h, w);
    for (std::size_t c = 0; c < cells; ++c) {
      if (bits >> c & 1U) s[c] += f;
    }
  }
  for (double& v : s) v /= static_cast<double>(n) * 0.5;
  return s;
}

}  // namespace oracle
