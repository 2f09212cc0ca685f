#include "protlang/retrieval.hpp"

#include <algorithm>

#include "protlang/errors.hpp"

namespace protlang {

namespace {

template <class S>
std::vector<int> with_cls(int cls_id, const std::vector<int>& text_ids) {
  std::vector<int> ids;
  ids.reserve(text_ids.size() + 1);
  ids.push_back(cls_id);
  ids.insert(ids.end(), text_ids.begin(), text_ids.end());
  return ids;
}

}  // namespace

template <class S>
RetrievalIndex<S>::RetrievalIndex(const PlpFormer<S>& model, std::vector<RetrievalItem<S>> items,
                                  int cls_id)
    : items_(std::move(items)) {
  if (items_.empty()) throw ContractError("retrieval index must not be empty");
  for (const auto& it : items_) {
    queries_.push_back(l2_normalize_rows(model.protein_queries(it.e_seq)).detach());
    cls_.push_back(l2_normalize_rows(model.text_cls(with_cls<S>(cls_id, it.text_ids))).detach());
  }
}

template <class S>
double ptc_score(const Tensor<S>& unit_queries, const Tensor<S>& unit_cls) {
  const std::size_t d = unit_queries.cols();
  if (unit_cls.cols() != d) throw ShapeError("query and text widths differ");
  double best = -2.0;
  for (std::size_t r = 0; r < unit_queries.rows(); ++r) {
    double dot = 0;
    for (std::size_t c = 0; c < d; ++c)
      dot += double(unit_queries.data()[r * d + c]) * double(unit_cls.data()[c]);
    best = std::max(best, dot);
  }
  return best;
}

template <class S>
std::vector<std::string> retrieve(const PlpFormer<S>& model, const RetrievalIndex<S>& index,
                                  const RetrievalItem<S>& query, RetrievalDirection direction,
                                  std::size_t k_rank, int cls_id) {
  const std::size_t n = index.size();
  if (k_rank == 0 || k_rank > n)
    throw ContractError("k_rank must be between 1 and the index size");

  const bool p2t = direction == RetrievalDirection::protein_to_text;
  Tensor<S> q_queries, q_cls;
  if (p2t)
    q_queries = l2_normalize_rows(model.protein_queries(query.e_seq)).detach();
  else
    q_cls = l2_normalize_rows(model.text_cls(with_cls<S>(cls_id, query.text_ids))).detach();

  struct Scored {
    std::size_t idx;
    double coarse;
    double fine = 0.0;
  };
  std::vector<Scored> scored;
  for (std::size_t i = 0; i < n; ++i) {
    const double c =
        p2t ? ptc_score(q_queries, index.cls(i)) : ptc_score(index.queries(i), q_cls);
    scored.push_back({i, c});
  }
  auto by_coarse = [&](const Scored& a, const Scored& b) {
    if (a.coarse != b.coarse) return a.coarse > b.coarse;
    return index.item(a.idx).id < index.item(b.idx).id;
  };
  std::sort(scored.begin(), scored.end(), by_coarse);

  for (std::size_t i = 0; i < k_rank; ++i) {
    const auto& cand = index.item(scored[i].idx);
    const Tensor<S>& e_seq = p2t ? query.e_seq : cand.e_seq;
    const std::vector<int>& text = p2t ? cand.text_ids : query.text_ids;
    auto out = model.forward(e_seq, with_cls<S>(cls_id, text), MaskMode::bidirectional);
    scored[i].fine = double(model.match_logit(out.queries).item());
  }
  std::sort(scored.begin(), scored.begin() + std::ptrdiff_t(k_rank),
            [&](const Scored& a, const Scored& b) {
              if (a.fine != b.fine) return a.fine > b.fine;
              if (a.coarse != b.coarse) return a.coarse > b.coarse;
              return index.item(a.idx).id < index.item(b.idx).id;
            });

  std::vector<std::string> out;
  out.reserve(n);
  for (const auto& s : scored) out.push_back(index.item(s.idx).id);
  return out;
}

RetrievalScores retrieval_metrics(const std::vector<std::vector<std::string>>& rankings,
                                  const std::vector<std::string>& gold, std::size_t k) {
  if (rankings.size() != gold.size())
    throw ContractError("rankings and gold labels must align");
  if (rankings.empty()) return {};
  double acc = 0, rec = 0;
  for (std::size_t i = 0; i < rankings.size(); ++i) {
    const auto& r = rankings[i];
    if (!r.empty() && r[0] == gold[i]) acc += 1;
    const std::size_t lim = std::min(k, r.size());
    for (std::size_t j = 0; j < lim; ++j) {
      if (r[j] == gold[i]) {
        rec += 1;
        break;
      }
    }
  }
  const double n = double(rankings.size());
  return {acc / n, rec / n};
}

#define PROTLANG_RETR_INSTANTIATE(S)                                                         \
  template class RetrievalIndex<S>;                                                          \
  template double ptc_score<S>(const Tensor<S>&, const Tensor<S>&);                          \
  template std::vector<std::string> retrieve<S>(const PlpFormer<S>&,                         \
                                                const RetrievalIndex<S>&,                    \
                                                const RetrievalItem<S>&, RetrievalDirection, \
                                                std::size_t, int);

PROTLANG_RETR_INSTANTIATE(float)
PROTLANG_RETR_INSTANTIATE(double)

#undef PROTLANG_RETR_INSTANTIATE

}  // namespace protlang
