#include "protlang/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <unordered_map>

#include "protlang/corpus.hpp"
#include "protlang/errors.hpp"

namespace protlang {

std::vector<std::string> metric_tokens(const std::string& text) {
  return Tokenizer::normalize(text);
}

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<std::size_t> prev(m + 1, 0), cur(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

namespace {

using Counts = std::map<std::vector<std::string>, std::size_t>;

Counts ngram_counts(const std::vector<std::string>& toks, std::size_t n) {
  Counts out;
  if (toks.size() < n || n == 0) return out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i)
    ++out[std::vector<std::string>(toks.begin() + std::ptrdiff_t(i),
                                   toks.begin() + std::ptrdiff_t(i + n))];
  return out;
}

}  // namespace

BleuResult bleu(const std::vector<std::string>& candidate,
                const std::vector<std::vector<std::string>>& references, std::size_t max_n,
                std::vector<double> weights) {
  if (max_n == 0) throw ContractError("n-gram order must be positive");
  if (references.empty()) throw ContractError("at least one reference is required");
  if (weights.empty()) weights.assign(max_n, 1.0 / double(max_n));
  if (weights.size() != max_n)
    throw ContractError("expected " + std::to_string(max_n) + " weights, got " +
                        std::to_string(weights.size()));
  double wsum = 0;
  for (double w : weights) wsum += w;
  if (std::abs(wsum - 1.0) > 1e-9) throw ContractError("weights must sum to 1");

  if (candidate.empty()) return {0.0, true};

  const std::size_t c = candidate.size();
  std::size_t r = references[0].size();
  for (const auto& ref : references) {
    const std::size_t m = ref.size();
    const auto dist = [&](std::size_t len) {
      return len > c ? len - c : c - len;
    };
    if (dist(m) < dist(r) || (dist(m) == dist(r) && m < r)) r = m;
  }

  double log_sum = 0.0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    Counts cand = ngram_counts(candidate, n);
    std::vector<Counts> ref_counts;
    for (const auto& ref : references) ref_counts.push_back(ngram_counts(ref, n));
    std::size_t total = 0, clipped = 0;
    for (const auto& [gram, count] : cand) {
      total += count;
      std::size_t best = 0;
      for (const auto& rc : ref_counts) {
        auto it = rc.find(gram);
        if (it != rc.end()) best = std::max(best, it->second);
      }
      clipped += std::min(count, best);
    }
    if (total == 0 || clipped == 0) return {0.0, false};
    log_sum += weights[n - 1] * std::log(double(clipped) / double(total));
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - double(r) / double(c));
  return {bp * std::exp(log_sum), false};
}

RougeResult rouge_l(const std::vector<std::string>& candidate,
                    const std::vector<std::string>& reference, double beta) {
  if (!(beta > 0)) throw ContractError("beta must be positive");
  if (candidate.empty() || reference.empty()) return {0.0, true};
  const double l = double(lcs_length(candidate, reference));
  if (l == 0) return {0.0, false};
  const double recall = l / double(reference.size());
  const double precision = l / double(candidate.size());
  const double b2 = beta * beta;
  return {(1.0 + b2) * recall * precision / (recall + b2 * precision), false};
}

namespace {

struct AlignScore {
  int matches = 0;
  int chunks = 0;
  bool better_than(const AlignScore& o) const {
    return matches != o.matches ? matches > o.matches : chunks < o.chunks;
  }
};

// Exact lexicographic optimum (max matches, then min chunks) over injective
// exact-match alignments.  State: candidate position, used reference
// positions, reference slot matched by the previous candidate position.
class ExactAligner {
 public:
  ExactAligner(const std::vector<std::string>& c, const std::vector<std::string>& r)
      : cand_(c), ref_(r) {}

  AlignScore run() { return search(0, 0, -1); }

 private:
  AlignScore search(std::size_t i, std::uint32_t mask, int prev) {
    if (i == cand_.size()) return {};
    const std::uint64_t key =
        (std::uint64_t(i) << 40) | (std::uint64_t(mask) << 8) | std::uint64_t(prev + 1);
    auto it = memo_.find(key);
    if (it != memo_.end()) return it->second;
    AlignScore best = search(i + 1, mask, -1);
    for (std::size_t j = 0; j < ref_.size(); ++j) {
      if (mask & (1u << j)) continue;
      if (cand_[i] != ref_[j]) continue;
      AlignScore sub = search(i + 1, mask | (1u << j), int(j));
      sub.matches += 1;
      sub.chunks += (prev >= 0 && int(j) == prev + 1) ? 0 : 1;
      if (sub.better_than(best)) best = sub;
    }
    memo_.emplace(key, best);
    return best;
  }

  const std::vector<std::string>& cand_;
  const std::vector<std::string>& ref_;
  std::unordered_map<std::uint64_t, AlignScore> memo_;
};

// Fallback: repeatedly claim the longest common run of unused positions
// (ties: lowest candidate index, then lowest reference index).  Always
// reaches the maximum match count; chunk count is a deterministic upper
// bound on the optimum.
AlignScore greedy_align(const std::vector<std::string>& cand,
                        const std::vector<std::string>& ref) {
  std::vector<char> cu(cand.size(), 0), ru(ref.size(), 0);
  AlignScore out;
  while (true) {
    std::size_t best_len = 0, best_i = 0, best_j = 0;
    for (std::size_t i = 0; i < cand.size(); ++i) {
      for (std::size_t j = 0; j < ref.size(); ++j) {
        std::size_t len = 0;
        while (i + len < cand.size() && j + len < ref.size() && !cu[i + len] &&
               !ru[j + len] && cand[i + len] == ref[j + len])
          ++len;
        if (len > best_len) {
          best_len = len;
          best_i = i;
          best_j = j;
        }
      }
    }
    if (best_len == 0) break;
    for (std::size_t t = 0; t < best_len; ++t) {
      cu[best_i + t] = 1;
      ru[best_j + t] = 1;
    }
    out.matches += int(best_len);
    out.chunks += 1;
  }
  return out;
}

}  // namespace

double meteor_like(const std::vector<std::string>& candidate,
                   const std::vector<std::string>& reference, double alpha, double gamma,
                   double theta) {
  if (candidate.empty() || reference.empty()) return 0.0;
  AlignScore a = (reference.size() <= 14 && candidate.size() <= 16)
                     ? ExactAligner(candidate, reference).run()
                     : greedy_align(candidate, reference);
  if (a.matches == 0) return 0.0;
  const double m = double(a.matches);
  const double precision = m / double(candidate.size());
  const double recall = m / double(reference.size());
  const double f = (alpha * alpha + 1.0) * precision / (recall + alpha * precision);
  const double penalty = gamma * std::pow(double(a.chunks) / m, theta);
  return (1.0 - penalty) * f;
}

CiderResult cider(const std::vector<ScoredItem>& corpus, std::size_t max_n) {
  if (max_n == 0) throw ContractError("n-gram order must be positive");
  if (corpus.size() < 2)
    throw ContractError("consensus scoring needs a corpus of at least two items");
  for (const auto& item : corpus)
    if (item.references.empty()) throw ContractError("every candidate needs a reference");

  CiderResult res;
  res.per_candidate.assign(corpus.size(), 0.0);
  for (std::size_t n = 1; n <= max_n; ++n) {
    // Document frequency over each item's reference set.
    Counts df;
    for (const auto& item : corpus) {
      Counts seen;
      for (const auto& ref : item.references)
        for (const auto& [gram, cnt] : ngram_counts(ref, n)) seen[gram] = 1;
      for (const auto& [gram, one] : seen) df[gram] += 1;
    }
    auto idf = [&](const std::vector<std::string>& gram) {
      auto it = df.find(gram);
      const double d = it == df.end() ? 0.0 : double(it->second);
      return std::log(double(corpus.size()) / (1.0 + d));
    };
    auto tfidf = [&](const std::vector<std::string>& toks) {
      std::map<std::vector<std::string>, double> v;
      for (const auto& [gram, cnt] : ngram_counts(toks, n)) v[gram] = double(cnt) * idf(gram);
      return v;
    };
    auto cosine = [](const std::map<std::vector<std::string>, double>& a,
                     const std::map<std::vector<std::string>, double>& b) {
      double dot = 0, na = 0, nb = 0;
      for (const auto& [gram, va] : a) {
        na += va * va;
        auto it = b.find(gram);
        if (it != b.end()) dot += va * it->second;
      }
      for (const auto& [gram, vb] : b) nb += vb * vb;
      if (na == 0 || nb == 0) return 0.0;
      return dot / (std::sqrt(na) * std::sqrt(nb));
    };
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      auto gc = tfidf(corpus[i].candidate);
      double acc = 0;
      for (const auto& ref : corpus[i].references) acc += cosine(gc, tfidf(ref));
      res.per_candidate[i] += acc / double(corpus[i].references.size());
    }
  }
  double mean = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    res.per_candidate[i] /= double(max_n);
    mean += res.per_candidate[i];
  }
  res.mean = mean / double(corpus.size());
  return res;
}

bool exact_match(const std::string& candidate, const std::string& gold) {
  auto canon = [](const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    std::string out;
    out.reserve(e - b);
    for (std::size_t i = b; i < e; ++i)
      out.push_back(char(std::tolower(static_cast<unsigned char>(s[i]))));
    return out;
  };
  return canon(candidate) == canon(gold);
}

}  // namespace protlang
