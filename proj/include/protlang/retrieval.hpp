#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "protlang/plp_former.hpp"
#include "protlang/tensor.hpp"

namespace protlang {

template <class S>
struct RetrievalItem {
  std::string id;
  Tensor<S> e_seq;            // n x c_seq protein rows
  std::vector<int> text_ids;  // content tokens, specials added internally
};

enum class RetrievalDirection { protein_to_text, text_to_protein };

// Precomputed two-tower states for a corpus: normalized query blocks on the
// protein side, normalized [CLS] rows on the text side.
template <class S>
class RetrievalIndex {
 public:
  RetrievalIndex(const PlpFormer<S>& model, std::vector<RetrievalItem<S>> items, int cls_id);

  std::size_t size() const { return items_.size(); }
  const RetrievalItem<S>& item(std::size_t i) const { return items_[i]; }
  const Tensor<S>& queries(std::size_t i) const { return queries_[i]; }  // nq x d, unit rows
  const Tensor<S>& cls(std::size_t i) const { return cls_[i]; }          // 1 x d, unit row

 private:
  std::vector<RetrievalItem<S>> items_;
  std::vector<Tensor<S>> queries_;
  std::vector<Tensor<S>> cls_;
};

// Coarse score: best cosine between any protein query row and the text row.
template <class S>
double ptc_score(const Tensor<S>& unit_queries, const Tensor<S>& unit_cls);

// Two-stage retrieval: rank everything by the coarse score, re-score the top
// k_rank with the matching head, and order those by (match logit desc, coarse
// desc, id asc).  Items outside the re-ranked prefix follow in coarse order.
// Returns ids over the whole index.
template <class S>
std::vector<std::string> retrieve(const PlpFormer<S>& model, const RetrievalIndex<S>& index,
                                  const RetrievalItem<S>& query, RetrievalDirection direction,
                                  std::size_t k_rank, int cls_id);

struct RetrievalScores {
  double acc1 = 0.0;
  double recall_at_k = 0.0;
};

// Acc = share of rankings with gold first; recall = share with gold in the
// top k.  Empty input scores zero on both.
RetrievalScores retrieval_metrics(const std::vector<std::vector<std::string>>& rankings,
                                  const std::vector<std::string>& gold, std::size_t k = 20);

}  // namespace protlang
