#include "protlang/plp_former.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "protlang/errors.hpp"
#include "protlang/rng.hpp"

namespace protlang {

std::vector<std::uint8_t> build_attention_mask(MaskMode mode, std::size_t n_queries,
                                               std::span<const int> text_ids, int pad_id) {
  const std::size_t L = text_ids.size();
  const std::size_t T = n_queries + L;
  std::vector<std::uint8_t> mask(T * T, 0);
  for (std::size_t i = 0; i < T; ++i) {
    for (std::size_t j = 0; j < T; ++j) {
      const bool iq = i < n_queries;
      const bool jq = j < n_queries;
      bool base = false;
      switch (mode) {
        case MaskMode::unimodal:
          base = iq == jq;
          break;
        case MaskMode::multimodal_causal:
          base = iq ? jq : (jq || j <= i);
          break;
        case MaskMode::bidirectional:
          base = true;
          break;
      }
      if (base && !(!jq && text_ids[j - n_queries] == pad_id)) mask[i * T + j] = 1;
    }
  }
  return mask;
}

namespace {

template <class S>
Tensor<S> param(std::vector<std::size_t> shape, double stddev, Rng& rng) {
  return Tensor<S>::randn(std::move(shape), stddev, rng, true);
}

template <class S>
Tensor<S> ones_param(std::size_t n) {
  return Tensor<S>::full({1, n}, S(1), true);
}

template <class S>
Tensor<S> zeros_param(std::size_t n) {
  return Tensor<S>::zeros({1, n}, true);
}

}  // namespace

template <class S>
PlpFormer<S>::PlpFormer(const PlpConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg_.d_model == 0 || cfg_.n_heads == 0 || cfg_.d_model % cfg_.n_heads != 0)
    throw ContractError("d_model must be a positive multiple of n_heads");
  if (cfg_.n_queries == 0 || cfg_.n_layers == 0 || cfg_.vocab_size == 0 ||
      cfg_.max_text_len == 0 || cfg_.cross_attention_every == 0)
    throw ContractError("model dimensions must be positive");
  Rng rng(mix_seed(seed, 0x9e1f));
  const double sd = 0.02;
  const std::size_t d = cfg_.d_model;
  query_tokens_ = param<S>({cfg_.n_queries, d}, sd, rng);
  tok_emb_ = param<S>({cfg_.vocab_size, d}, sd, rng);
  pos_emb_ = param<S>({cfg_.max_text_len, d}, sd, rng);
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    Layer lay;
    lay.wq = param<S>({d, d}, sd, rng);
    lay.wk = param<S>({d, d}, sd, rng);
    lay.wv = param<S>({d, d}, sd, rng);
    lay.wo = param<S>({d, d}, sd, rng);
    lay.ln1_g = ones_param<S>(d);
    lay.ln1_b = zeros_param<S>(d);
    lay.has_cross = l % cfg_.cross_attention_every == 0;
    if (lay.has_cross) {
      lay.cq = param<S>({d, d}, sd, rng);
      lay.ck = param<S>({cfg_.c_seq, d}, sd, rng);
      lay.cv = param<S>({cfg_.c_seq, d}, sd, rng);
      lay.co = param<S>({d, d}, sd, rng);
      lay.lnc_g = ones_param<S>(d);
      lay.lnc_b = zeros_param<S>(d);
    }
    lay.ffn_w1 = param<S>({d, d * cfg_.ffn_mult}, sd, rng);
    lay.ffn_b1 = zeros_param<S>(d * cfg_.ffn_mult);
    lay.ffn_w2 = param<S>({d * cfg_.ffn_mult, d}, sd, rng);
    lay.ffn_b2 = zeros_param<S>(d);
    lay.ln2_g = ones_param<S>(d);
    lay.ln2_b = zeros_param<S>(d);
    layers_.push_back(std::move(lay));
  }
  lm_w_ = param<S>({d, cfg_.vocab_size}, sd, rng);
  lm_b_ = zeros_param<S>(cfg_.vocab_size);
  match_w_ = param<S>({d, 1}, sd, rng);
  match_b_ = zeros_param<S>(1);
}

template <class S>
Tensor<S> PlpFormer<S>::self_attention(const Tensor<S>& x, const std::vector<std::uint8_t>& mask,
                                       const Layer& l) const {
  const std::size_t dh = cfg_.d_model / cfg_.n_heads;
  Tensor<S> q = matmul(x, l.wq);
  Tensor<S> k = matmul(x, l.wk);
  Tensor<S> v = matmul(x, l.wv);
  std::vector<Tensor<S>> heads;
  for (std::size_t h = 0; h < cfg_.n_heads; ++h) {
    Tensor<S> qh = slice_cols(q, h * dh, dh);
    Tensor<S> kh = slice_cols(k, h * dh, dh);
    Tensor<S> vh = slice_cols(v, h * dh, dh);
    Tensor<S> scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(double(dh)));
    Tensor<S> probs = masked_softmax_rows(scores, mask);
    heads.push_back(weighted_sum_rows(probs, vh));
  }
  return matmul(concat_cols(heads), l.wo);
}

template <class S>
Tensor<S> PlpFormer<S>::cross_attention(const Tensor<S>& q_in, const Tensor<S>& e_seq,
                                        const Layer& l) const {
  const std::size_t dh = cfg_.d_model / cfg_.n_heads;
  Tensor<S> q = matmul(q_in, l.cq);
  Tensor<S> k = matmul(e_seq, l.ck);
  Tensor<S> v = matmul(e_seq, l.cv);
  std::vector<Tensor<S>> heads;
  for (std::size_t h = 0; h < cfg_.n_heads; ++h) {
    Tensor<S> qh = slice_cols(q, h * dh, dh);
    Tensor<S> kh = slice_cols(k, h * dh, dh);
    Tensor<S> vh = slice_cols(v, h * dh, dh);
    Tensor<S> scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(double(dh)));
    heads.push_back(matmul(softmax_rows(scores), vh));
  }
  return matmul(concat_cols(heads), l.co);
}

template <class S>
Tensor<S> PlpFormer<S>::ffn(const Tensor<S>& x, const Layer& l) const {
  Tensor<S> h = gelu(add_rowvec(matmul(x, l.ffn_w1), l.ffn_b1));
  return add_rowvec(matmul(h, l.ffn_w2), l.ffn_b2);
}

template <class S>
typename PlpFormer<S>::Output PlpFormer<S>::forward_masked(
    const Tensor<S>& e_seq, std::span<const int> text_ids,
    const std::vector<std::uint8_t>& mask) const {
  if (e_seq.rank() != 2 || e_seq.cols() != cfg_.c_seq)
    throw ShapeError("protein rows must be n x " + std::to_string(cfg_.c_seq) + ", got " +
                     shape_str(e_seq.shape()));
  const std::size_t L = text_ids.size();
  if (L == 0) throw ContractError("text stream is empty");
  if (L > cfg_.max_text_len)
    throw ContractError("text stream of " + std::to_string(L) + " tokens exceeds the limit of " +
                        std::to_string(cfg_.max_text_len));
  if (text_ids[0] == cfg_.pad_id)
    throw ContractError("text stream must start with a non-pad special token");
  const std::size_t T = cfg_.n_queries + L;
  if (mask.size() != T * T)
    throw ContractError("attention mask has " + std::to_string(mask.size()) +
                        " entries, expected " + std::to_string(T * T));

  Tensor<S> text = add(embed_rows(tok_emb_, text_ids), slice_rows(pos_emb_, 0, L));
  Tensor<S> q = query_tokens_;
  for (const Layer& l : layers_) {
    Tensor<S> joint = concat_rows<S>({q, text});
    joint = layer_norm(add(joint, self_attention(joint, mask, l)), l.ln1_g, l.ln1_b);
    q = slice_rows(joint, 0, cfg_.n_queries);
    text = slice_rows(joint, cfg_.n_queries, L);
    if (l.has_cross)
      q = layer_norm(add(q, cross_attention(q, e_seq, l)), l.lnc_g, l.lnc_b);
    joint = concat_rows<S>({q, text});
    joint = layer_norm(add(joint, ffn(joint, l)), l.ln2_g, l.ln2_b);
    q = slice_rows(joint, 0, cfg_.n_queries);
    text = slice_rows(joint, cfg_.n_queries, L);
  }
  return {q, text};
}

template <class S>
typename PlpFormer<S>::Output PlpFormer<S>::forward(const Tensor<S>& e_seq,
                                                    std::span<const int> text_ids,
                                                    MaskMode mode) const {
  return forward_masked(e_seq, text_ids,
                        build_attention_mask(mode, cfg_.n_queries, text_ids, cfg_.pad_id));
}

template <class S>
Tensor<S> PlpFormer<S>::lm_logits(const Tensor<S>& text_states) const {
  return add_rowvec(matmul(text_states, lm_w_), lm_b_);
}

template <class S>
Tensor<S> PlpFormer<S>::match_logit(const Tensor<S>& query_states) const {
  return mean_rows(add_rowvec(matmul(query_states, match_w_), match_b_));
}

template <class S>
Tensor<S> PlpFormer<S>::protein_queries(const Tensor<S>& e_seq) const {
  // Queries never attend text under the unimodal mask, so a bare non-pad
  // token is enough of a text stream.
  const int probe = cfg_.pad_id == 1 ? 2 : 1;
  std::vector<int> ids{probe};
  return forward(e_seq, ids, MaskMode::unimodal).queries;
}

template <class S>
Tensor<S> PlpFormer<S>::text_cls(std::span<const int> text_ids) const {
  // Text states are protein-independent under the unimodal mask.
  Tensor<S> dummy = Tensor<S>::zeros({1, cfg_.c_seq});
  return slice_rows(forward(dummy, text_ids, MaskMode::unimodal).text, 0, 1);
}

template <class S>
std::vector<NamedTensor<S>> PlpFormer<S>::parameters() const {
  std::vector<NamedTensor<S>> out;
  out.push_back({"plp.query_tokens", query_tokens_});
  out.push_back({"plp.tok_emb", tok_emb_});
  out.push_back({"plp.pos_emb", pos_emb_});
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& l = layers_[i];
    const std::string p = "plp.l" + std::to_string(i) + ".";
    out.push_back({p + "wq", l.wq});
    out.push_back({p + "wk", l.wk});
    out.push_back({p + "wv", l.wv});
    out.push_back({p + "wo", l.wo});
    out.push_back({p + "ln1.g", l.ln1_g});
    out.push_back({p + "ln1.b", l.ln1_b});
    if (l.has_cross) {
      out.push_back({p + "cq", l.cq});
      out.push_back({p + "ck", l.ck});
      out.push_back({p + "cv", l.cv});
      out.push_back({p + "co", l.co});
      out.push_back({p + "lnc.g", l.lnc_g});
      out.push_back({p + "lnc.b", l.lnc_b});
    }
    out.push_back({p + "ffn.w1", l.ffn_w1});
    out.push_back({p + "ffn.b1", l.ffn_b1});
    out.push_back({p + "ffn.w2", l.ffn_w2});
    out.push_back({p + "ffn.b2", l.ffn_b2});
    out.push_back({p + "ln2.g", l.ln2_g});
    out.push_back({p + "ln2.b", l.ln2_b});
  }
  out.push_back({"plp.lm.w", lm_w_});
  out.push_back({"plp.lm.b", lm_b_});
  out.push_back({"plp.match.w", match_w_});
  out.push_back({"plp.match.b", match_b_});
  return out;
}

template <class S>
void PlpFormer<S>::set_trainable(bool on) {
  for (auto& p : parameters()) p.tensor.set_requires_grad(on);
}

template <class S>
Tensor<S> ptc_similarity(const std::vector<Tensor<S>>& query_states,
                         const std::vector<Tensor<S>>& cls_rows) {
  const std::size_t B = query_states.size();
  if (B == 0 || cls_rows.size() != B)
    throw ContractError("similarity needs matching protein and text batches");
  Tensor<S> cn = l2_normalize_rows(concat_rows(cls_rows));  // B x d
  std::vector<Tensor<S>> cols;
  for (std::size_t b = 0; b < B; ++b) {
    Tensor<S> qn = l2_normalize_rows(query_states[b]);
    cols.push_back(row_max(matmul(cn, transpose(qn))));  // B x 1: texts vs protein b
  }
  return transpose(concat_cols(cols));  // rows = proteins, cols = texts
}

template <class S>
Tensor<S> ptc_loss(const Tensor<S>& sim, double temperature) {
  if (sim.rank() != 2 || sim.rows() != sim.cols())
    throw ShapeError("similarity matrix must be square, got " + shape_str(sim.shape()));
  if (!(temperature > 0)) throw ContractError("temperature must be positive");
  const std::size_t B = sim.rows();
  std::vector<int> diag(B);
  for (std::size_t i = 0; i < B; ++i) diag[i] = int(i);
  Tensor<S> scaled = scale(sim, 1.0 / temperature);
  Tensor<S> a = cross_entropy_logits(scaled, diag);
  Tensor<S> b = cross_entropy_logits(transpose(scaled), diag);
  return scale(add(a, b), 0.5);
}

HardNegatives mine_hard_negatives(const std::vector<double>& sim_values, std::size_t batch) {
  if (batch < 2) throw ContractError("hard negatives need a batch of at least two");
  if (sim_values.size() != batch * batch)
    throw ContractError("similarity matrix size does not match the batch");
  HardNegatives out;
  out.text_for_protein.resize(batch);
  out.protein_for_text.resize(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t best_t = batch, best_p = batch;
    for (std::size_t j = 0; j < batch; ++j) {
      if (j == b) continue;
      if (best_t == batch || sim_values[b * batch + j] > sim_values[b * batch + best_t])
        best_t = j;
      if (best_p == batch || sim_values[j * batch + b] > sim_values[best_p * batch + b])
        best_p = j;
    }
    out.text_for_protein[b] = best_t;
    out.protein_for_text[b] = best_p;
  }
  return out;
}

template <class S>
Tensor<S> ptg_loss(const PlpFormer<S>& model, const std::vector<PlpExample<S>>& batch,
                   int dec_id, int eos_id) {
  if (batch.empty()) throw ContractError("generation loss needs a non-empty batch");
  Tensor<S> total;
  for (const auto& ex : batch) {
    std::vector<int> input;
    input.reserve(ex.tokens.size() + 1);
    input.push_back(dec_id);
    input.insert(input.end(), ex.tokens.begin(), ex.tokens.end());
    std::vector<int> targets(ex.tokens.begin(), ex.tokens.end());
    targets.push_back(eos_id);
    auto out = model.forward(ex.e_seq, input, MaskMode::multimodal_causal);
    Tensor<S> loss = cross_entropy_logits(model.lm_logits(out.text), targets);
    total = total.defined() ? add(total, loss) : loss;
  }
  return scale(total, 1.0 / double(batch.size()));
}

template <class S>
Tensor<S> ptm_loss(const PlpFormer<S>& model, const std::vector<PlpExample<S>>& batch,
                   int cls_id, const HardNegatives& negs) {
  const std::size_t B = batch.size();
  if (B < 2) throw ContractError("matching loss needs a batch of at least two");
  if (negs.text_for_protein.size() != B || negs.protein_for_text.size() != B)
    throw ContractError("hard negatives do not match the batch");
  auto pair_logit = [&](std::size_t prot, std::size_t text) {
    std::vector<int> ids;
    ids.reserve(batch[text].tokens.size() + 1);
    ids.push_back(cls_id);
    ids.insert(ids.end(), batch[text].tokens.begin(), batch[text].tokens.end());
    auto out = model.forward(batch[prot].e_seq, ids, MaskMode::bidirectional);
    return model.match_logit(out.queries);
  };
  std::vector<Tensor<S>> logits;
  std::vector<S> targets;
  for (std::size_t b = 0; b < B; ++b) {
    logits.push_back(pair_logit(b, b));
    targets.push_back(S(1));
    logits.push_back(pair_logit(b, negs.text_for_protein[b]));
    targets.push_back(S(0));
    logits.push_back(pair_logit(negs.protein_for_text[b], b));
    targets.push_back(S(0));
  }
  return bce_with_logits(concat_rows(logits), targets);
}

template <class S>
std::pair<Tensor<S>, PlpLossReport> plp_pretrain_loss(const PlpFormer<S>& model,
                                                      const std::vector<PlpExample<S>>& batch,
                                                      int cls_id, int dec_id, int eos_id) {
  if (batch.size() < 2) throw ContractError("pretraining needs a batch of at least two");
  const PlpConfig& cfg = model.config();
  std::vector<Tensor<S>> queries, cls;
  for (const auto& ex : batch) {
    std::vector<int> ids;
    ids.reserve(ex.tokens.size() + 1);
    ids.push_back(cls_id);
    ids.insert(ids.end(), ex.tokens.begin(), ex.tokens.end());
    auto out = model.forward(ex.e_seq, ids, MaskMode::unimodal);
    queries.push_back(out.queries);
    cls.push_back(slice_rows(out.text, 0, 1));
  }
  Tensor<S> sim = ptc_similarity(queries, cls);
  Tensor<S> ptc = ptc_loss(sim, cfg.ptc_temperature);
  std::vector<double> sim_values(sim.data().begin(), sim.data().end());
  HardNegatives negs = mine_hard_negatives(sim_values, batch.size());
  Tensor<S> ptg = ptg_loss(model, batch, dec_id, eos_id);
  Tensor<S> ptm = ptm_loss(model, batch, cls_id, negs);
  Tensor<S> total = add(add(scale(ptc, cfg.w_ptc), scale(ptg, cfg.w_ptg)), scale(ptm, cfg.w_ptm));
  PlpLossReport report;
  report.ptc = double(ptc.item());
  report.ptg = double(ptg.item());
  report.ptm = double(ptm.item());
  report.total = double(total.item());
  return {total, report};
}

#define PROTLANG_PLP_INSTANTIATE(S)                                                       \
  template class PlpFormer<S>;                                                            \
  template Tensor<S> ptc_similarity<S>(const std::vector<Tensor<S>>&,                     \
                                       const std::vector<Tensor<S>>&);                    \
  template Tensor<S> ptc_loss<S>(const Tensor<S>&, double);                               \
  template Tensor<S> ptg_loss<S>(const PlpFormer<S>&, const std::vector<PlpExample<S>>&,  \
                                 int, int);                                               \
  template Tensor<S> ptm_loss<S>(const PlpFormer<S>&, const std::vector<PlpExample<S>>&,  \
                                 int, const HardNegatives&);                              \
  template std::pair<Tensor<S>, PlpLossReport> plp_pretrain_loss<S>(                      \
      const PlpFormer<S>&, const std::vector<PlpExample<S>>&, int, int, int);

PROTLANG_PLP_INSTANTIATE(float)
PROTLANG_PLP_INSTANTIATE(double)

#undef PROTLANG_PLP_INSTANTIATE

}  // namespace protlang
