#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace protlang {

// Shared tokenization for every text metric (lowercase, whitespace split,
// punctuation as single tokens).
std::vector<std::string> metric_tokens(const std::string& text);

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b);

struct BleuResult {
  double score = 0.0;
  bool degenerate = false;  // empty candidate
};

// Clipped n-gram precision with brevity penalty.  The effective reference
// length is the closest to the candidate length (ties go to the shorter).
// Any zero precision zeroes the score.  weights must sum to 1 and cover
// max_n entries; empty means uniform.
BleuResult bleu(const std::vector<std::string>& candidate,
                const std::vector<std::vector<std::string>>& references, std::size_t max_n = 4,
                std::vector<double> weights = {});

struct RougeResult {
  double score = 0.0;
  bool degenerate = false;  // an empty side
};

// Longest-common-subsequence F-measure, recall weighted by beta.
RougeResult rouge_l(const std::vector<std::string>& candidate,
                    const std::vector<std::string>& reference, double beta = 1.2);

// Exact-match unigram alignment scored by precision/recall with a chunk
// fragmentation penalty: score = (1 - gamma*(chunks/matches)^theta) * F with
// F = (alpha^2+1)P / (R + alpha*P).  The alignment maximizes matches, then
// minimizes chunks; inputs too large for the exact search fall back to a
// deterministic greedy longest-run tiling.
double meteor_like(const std::vector<std::string>& candidate,
                   const std::vector<std::string>& reference, double alpha = 0.9,
                   double gamma = 0.5, double theta = 3.0);

struct ScoredItem {
  std::vector<std::string> candidate;
  std::vector<std::vector<std::string>> references;
};

struct CiderResult {
  std::vector<double> per_candidate;
  double mean = 0.0;
};

// Consensus scoring: per n-gram order, cosine between candidate and reference
// TF-IDF vectors (idf = log(corpus / (1 + df)), df counted over reference
// sets), averaged over references then over orders 1..max_n.  Needs at least
// two items so document frequencies mean something.
CiderResult cider(const std::vector<ScoredItem>& corpus, std::size_t max_n = 4);

// 1 iff equal after trimming outer whitespace and ASCII case folding.  No
// numeric coercion: "4.0" differs from "4".
bool exact_match(const std::string& candidate, const std::string& gold);

}  // namespace protlang
