#include "protlang/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "doctest.h"
#include "protlang/errors.hpp"
#include "protlang/rng.hpp"

using namespace protlang;

namespace {

using Toks = std::vector<std::string>;

Toks words(std::initializer_list<const char*> w) { return Toks(w.begin(), w.end()); }

Toks random_tokens(Rng& rng, std::size_t max_len, std::size_t vocab) {
  Toks out;
  const std::size_t len = rng.uniform_index(max_len + 1);
  for (std::size_t i = 0; i < len; ++i)
    out.push_back(std::string(1, char('a' + rng.uniform_index(vocab))));
  return out;
}

// Oracle 1: LCS by enumerating every subsequence of `a` and testing it
// against `b`.  Exponential, so only for short lists.
bool is_subsequence(const Toks& sub, const Toks& b) {
  std::size_t j = 0;
  for (const auto& t : b)
    if (j < sub.size() && sub[j] == t) ++j;
  return j == sub.size();
}

std::size_t lcs_oracle(const Toks& a, const Toks& b) {
  std::size_t best = 0;
  for (std::size_t bits = 0; bits < (1u << a.size()); ++bits) {
    Toks sub;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (bits & (1u << i)) sub.push_back(a[i]);
    if (sub.size() > best && is_subsequence(sub, b)) best = sub.size();
  }
  return best;
}

// Oracle 2: BLEU by walking candidate positions and spending per-gram
// allowances, a mechanically different route to the clipped counts.
double bleu_oracle(const Toks& cand, const std::vector<Toks>& refs, std::size_t max_n) {
  if (cand.empty()) return 0.0;
  auto gram_at = [](const Toks& t, std::size_t i, std::size_t n) {
    std::string g;
    for (std::size_t k = 0; k < n; ++k) g += t[i + k] + "\x1f";
    return g;
  };
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    if (cand.size() < n) return 0.0;
    std::map<std::string, long> allowance;
    for (const auto& ref : refs) {
      std::map<std::string, long> counts;
      if (ref.size() >= n)
        for (std::size_t i = 0; i + n <= ref.size(); ++i) ++counts[gram_at(ref, i, n)];
      for (const auto& [g, c] : counts) allowance[g] = std::max(allowance[g], c);
    }
    long clipped = 0;
    const long total = long(cand.size() - n + 1);
    for (std::size_t i = 0; i + n <= cand.size(); ++i) {
      auto it = allowance.find(gram_at(cand, i, n));
      if (it != allowance.end() && it->second > 0) {
        ++clipped;
        --it->second;
      }
    }
    if (clipped == 0) return 0.0;
    log_sum += (1.0 / double(max_n)) * std::log(double(clipped) / double(total));
  }
  const std::size_t c = cand.size();
  std::size_t r = refs[0].size();
  for (const auto& ref : refs) {
    auto dist = [&](std::size_t len) { return len > c ? len - c : c - len; };
    if (dist(ref.size()) < dist(r) || (dist(ref.size()) == dist(r) && ref.size() < r))
      r = ref.size();
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - double(r) / double(c));
  return bp * std::exp(log_sum);
}

// Oracle 3: alignment scoring by enumerating every injective mapping.
struct OracleAlign {
  int matches = 0, chunks = 0;
};

void enumerate_alignments(const Toks& cand, const Toks& ref, std::size_t i,
                          std::vector<int>& pick, OracleAlign& best) {
  if (i == cand.size()) {
    int matches = 0, chunks = 0;
    for (std::size_t k = 0; k < pick.size(); ++k) {
      if (pick[k] < 0) continue;
      ++matches;
      const bool extends = k > 0 && pick[k - 1] >= 0 && pick[k] == pick[k - 1] + 1;
      if (!extends) ++chunks;
    }
    if (matches > best.matches || (matches == best.matches && chunks < best.chunks)) {
      best.matches = matches;
      best.chunks = chunks;
    }
    return;
  }
  pick[i] = -1;
  enumerate_alignments(cand, ref, i + 1, pick, best);
  for (std::size_t j = 0; j < ref.size(); ++j) {
    if (cand[i] != ref[j]) continue;
    if (std::find(pick.begin(), pick.begin() + std::ptrdiff_t(i), int(j)) !=
        pick.begin() + std::ptrdiff_t(i))
      continue;
    pick[i] = int(j);
    enumerate_alignments(cand, ref, i + 1, pick, best);
  }
  pick[i] = -1;
}

double meteor_oracle(const Toks& cand, const Toks& ref, double alpha, double gamma,
                     double theta) {
  if (cand.empty() || ref.empty()) return 0.0;
  OracleAlign best;
  best.chunks = 1 << 20;
  std::vector<int> pick(cand.size(), -1);
  enumerate_alignments(cand, ref, 0, pick, best);
  if (best.matches == 0) return 0.0;
  const double m = best.matches;
  const double p = m / double(cand.size());
  const double r = m / double(ref.size());
  const double f = (alpha * alpha + 1.0) * p / (r + alpha * p);
  return (1.0 - gamma * std::pow(best.chunks / m, theta)) * f;
}

}  // namespace

TEST_CASE("longest common subsequence") {
  CHECK(lcs_length(words({"A", "B", "C", "B", "D", "A", "B"}),
                   words({"B", "D", "C", "A", "B", "A"})) == 4);
  CHECK(lcs_length({}, words({"a"})) == 0);

  Rng rng(1001);
  for (int t = 0; t < 300; ++t) {
    Toks a = random_tokens(rng, 8, 4);
    Toks b = random_tokens(rng, 8, 4);
    CAPTURE(t);
    CHECK(lcs_length(a, b) == lcs_oracle(a, b));
  }
}

TEST_CASE("bleu anchors") {
  Toks cand = words({"the", "cat", "sat"});
  SUBCASE("identity scores one") {
    auto r = bleu(cand, {cand}, 3);
    CHECK_FALSE(r.degenerate);
    CHECK(r.score == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("brevity penalty for a short candidate") {
    auto r = bleu(cand, {words({"the", "cat", "sat", "on", "the", "mat"})}, 1);
    CHECK(r.score == doctest::Approx(std::exp(-1.0)).epsilon(1e-9));
  }
  SUBCASE("zero n-gram overlap zeroes the score") {
    auto r = bleu(words({"a", "b", "c", "d"}), {words({"a", "c", "b", "d"})}, 4);
    CHECK(r.score == 0.0);
    CHECK_FALSE(r.degenerate);
  }
  SUBCASE("empty candidate is degenerate") {
    auto r = bleu({}, {cand}, 2);
    CHECK(r.score == 0.0);
    CHECK(r.degenerate);
  }
  SUBCASE("reference length ties go to the shorter") {
    auto r = bleu(cand, {words({"the", "cat"}), words({"the", "cat", "sat", "on"})}, 1);
    CHECK(r.score == doctest::Approx(1.0).epsilon(1e-12));  // r = 2, so no penalty
  }
  SUBCASE("contract errors") {
    CHECK_THROWS_AS(bleu(cand, {}, 2), ContractError);
    CHECK_THROWS_AS(bleu(cand, {cand}, 0), ContractError);
    CHECK_THROWS_AS(bleu(cand, {cand}, 2, {0.5, 0.6}), ContractError);
    CHECK_THROWS_AS(bleu(cand, {cand}, 2, {1.0}), ContractError);
  }
}

TEST_CASE("bleu matches the allowance-spending oracle") {
  Rng rng(2002);
  for (int t = 0; t < 300; ++t) {
    Toks cand = random_tokens(rng, 10, 3);
    std::vector<Toks> refs;
    const std::size_t nrefs = 1 + rng.uniform_index(2);
    for (std::size_t i = 0; i < nrefs; ++i) refs.push_back(random_tokens(rng, 10, 3));
    const std::size_t n = 1 + rng.uniform_index(4);
    CAPTURE(t);
    CHECK(bleu(cand, refs, n).score == doctest::Approx(bleu_oracle(cand, refs, n)).epsilon(1e-12));
  }
}

TEST_CASE("rouge-l anchors and oracle") {
  SUBCASE("identity scores one at any beta") {
    Toks t = words({"w", "x", "y", "z"});
    CHECK(rouge_l(t, t, 1.0).score == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rouge_l(t, t, 1.2).score == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("recall one, precision three quarters") {
    auto r = rouge_l(words({"a", "b", "c", "d"}), words({"a", "c", "d"}), 1.0);
    CHECK(r.score == doctest::Approx(6.0 / 7.0).epsilon(1e-9));
  }
  SUBCASE("empty side is degenerate") {
    CHECK(rouge_l({}, words({"a"}), 1.0).degenerate);
    CHECK(rouge_l(words({"a"}), {}, 1.0).degenerate);
    CHECK_FALSE(rouge_l(words({"a"}), words({"b"}), 1.0).degenerate);
    CHECK(rouge_l(words({"a"}), words({"b"}), 1.0).score == 0.0);
    CHECK_THROWS_AS(rouge_l(words({"a"}), words({"a"}), 0.0), ContractError);
  }
  SUBCASE("random cases against the exhaustive oracle") {
    Rng rng(3003);
    for (int t = 0; t < 300; ++t) {
      Toks a = random_tokens(rng, 8, 3);
      Toks b = random_tokens(rng, 8, 3);
      if (a.empty() || b.empty()) continue;
      const double l = double(lcs_oracle(a, b));
      double want = 0.0;
      if (l > 0) {
        const double rr = l / double(b.size()), pp = l / double(a.size());
        want = (1 + 1.44) * rr * pp / (rr + 1.44 * pp);
      }
      CAPTURE(t);
      CHECK(rouge_l(a, b, 1.2).score == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("fragmentation-penalized alignment score") {
  const double alpha = 0.9, gamma = 0.5, theta = 3.0;
  const double f_perfect = (alpha * alpha + 1.0) / (1.0 + alpha);  // P = R = 1
  SUBCASE("identical strings keep one chunk") {
    const double want = (1.0 - gamma * std::pow(1.0 / 3.0, theta)) * f_perfect;
    CHECK(meteor_like(words({"x", "y", "z"}), words({"x", "y", "z"})) ==
          doctest::Approx(want).epsilon(1e-12));
  }
  SUBCASE("swapped words split into two chunks") {
    const double want = (1.0 - gamma) * f_perfect;
    CHECK(meteor_like(words({"b", "a"}), words({"a", "b"})) ==
          doctest::Approx(want).epsilon(1e-12));
  }
  SUBCASE("alignment prefers fewer chunks at equal matches") {
    // c0->r1, c1->r2 run plus c2->r0 gives 3 matches in 2 chunks
    const double want = (1.0 - gamma * std::pow(2.0 / 3.0, theta)) * f_perfect;
    CHECK(meteor_like(words({"a", "b", "a"}), words({"a", "a", "b"})) ==
          doctest::Approx(want).epsilon(1e-12));
  }
  SUBCASE("no overlap scores zero") {
    CHECK(meteor_like(words({"a"}), words({"b"})) == 0.0);
    CHECK(meteor_like({}, words({"b"})) == 0.0);
  }
  SUBCASE("random cases against the exhaustive alignment oracle") {
    Rng rng(4004);
    for (int t = 0; t < 200; ++t) {
      Toks a = random_tokens(rng, 4, 3);
      Toks b = random_tokens(rng, 4, 3);
      CAPTURE(t);
      CHECK(meteor_like(a, b) ==
            doctest::Approx(meteor_oracle(a, b, alpha, gamma, theta)).epsilon(1e-12));
    }
  }
}

TEST_CASE("consensus scoring") {
  std::vector<ScoredItem> corpus;
  corpus.push_back({words({"p", "q", "r", "s"}), {words({"p", "q", "r", "s"})}});
  corpus.push_back({words({"p", "q"}), {words({"q", "p"})}});
  corpus.push_back({words({"z", "z"}), {words({"u", "v", "w"})}});

  auto res = cider(corpus, 4);
  REQUIRE(res.per_candidate.size() == 3);
  SUBCASE("identity with nonzero vectors scores one") {
    CHECK(res.per_candidate[0] == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("disjoint vocabularies score zero") {
    CHECK(res.per_candidate[2] == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("matches an independently built tf-idf table") {
    // Independent reimplementation with string-joined grams.
    auto grams = [](const Toks& t, std::size_t n) {
      std::map<std::string, double> out;
      if (t.size() < n) return out;
      for (std::size_t i = 0; i + n <= t.size(); ++i) {
        std::string g;
        for (std::size_t k = 0; k < n; ++k) g += t[i + k] + "|";
        out[g] += 1.0;
      }
      return out;
    };
    std::vector<double> want(3, 0.0);
    for (std::size_t n = 1; n <= 4; ++n) {
      std::map<std::string, double> df;
      for (const auto& item : corpus) {
        std::set<std::string> seen;
        for (const auto& ref : item.references)
          for (const auto& [g, c] : grams(ref, n)) seen.insert(g);
        for (const auto& g : seen) df[g] += 1.0;
      }
      for (std::size_t i = 0; i < corpus.size(); ++i) {
        auto weigh = [&](const Toks& t) {
          auto v = grams(t, n);
          for (auto& [g, c] : v) c *= std::log(3.0 / (1.0 + df[g]));
          return v;
        };
        auto vc = weigh(corpus[i].candidate);
        double acc = 0.0;
        for (const auto& ref : corpus[i].references) {
          auto vr = weigh(ref);
          double dot = 0, nc = 0, nr = 0;
          for (const auto& [g, x] : vc) nc += x * x;
          for (const auto& [g, x] : vr) nr += x * x;
          for (const auto& [g, x] : vc)
            if (vr.count(g)) dot += x * vr[g];
          acc += (nc == 0 || nr == 0) ? 0.0 : dot / std::sqrt(nc * nr);
        }
        want[i] += acc / double(corpus[i].references.size());
      }
    }
    double want_mean = 0;
    for (auto& w : want) {
      w /= 4.0;
      want_mean += w;
    }
    want_mean /= 3.0;
    for (std::size_t i = 0; i < 3; ++i) {
      CAPTURE(i);
      CHECK(res.per_candidate[i] == doctest::Approx(want[i]).epsilon(1e-9));
    }
    CHECK(res.mean == doctest::Approx(want_mean).epsilon(1e-9));
  }
  SUBCASE("contract errors") {
    CHECK_THROWS_AS(cider({corpus[0]}, 4), ContractError);
    std::vector<ScoredItem> norefs{{words({"a"}), {}}, {words({"b"}), {words({"b"})}}};
    CHECK_THROWS_AS(cider(norefs, 4), ContractError);
    CHECK_THROWS_AS(cider(corpus, 0), ContractError);
  }
}

TEST_CASE("exact match normalizes whitespace and case only") {
  CHECK(exact_match("4", "4"));
  CHECK(exact_match(" 4 ", "4"));
  CHECK_FALSE(exact_match("4.0", "4"));
  CHECK(exact_match("Yes", "yes"));
  CHECK(exact_match("  A b c ", "a B c"));
  CHECK_FALSE(exact_match("a b", "ab"));  // inner whitespace is preserved
}

TEST_CASE("metric tokenization matches the shared tokenizer") {
  auto t = metric_tokens("The cat, sat!");
  CHECK(t == words({"the", "cat", ",", "sat", "!"}));
}
