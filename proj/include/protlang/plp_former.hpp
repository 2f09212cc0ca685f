#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "protlang/tensor.hpp"

namespace protlang {

// Who may attend to whom in the shared query/text self-attention stack.
//   unimodal:          queries <-> queries, text <-> text
//   multimodal_causal: queries <-> queries, text -> queries + earlier text
//   bidirectional:     everything attends everything
// Pad columns are excluded in every mode.
enum class MaskMode { unimodal, multimodal_causal, bidirectional };

std::vector<std::uint8_t> build_attention_mask(MaskMode mode, std::size_t n_queries,
                                               std::span<const int> text_ids, int pad_id);

struct PlpConfig {
  std::size_t n_queries = 32;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t ffn_mult = 4;
  std::size_t c_seq = 768;   // width of incoming protein rows
  std::size_t vocab_size = 512;
  std::size_t max_text_len = 64;  // counts the leading special token
  std::size_t cross_attention_every = 1;  // layers with l % every == 0 cross-attend
  int pad_id = 0;
  double ptc_temperature = 0.07;
  double w_ptc = 1.0;
  double w_ptg = 1.0;
  double w_ptm = 1.0;
};

// Query transformer bridging frozen protein rows and text: learned query
// tokens share a self-attention stack with the text stream and pull protein
// information in through cross-attention.
template <class S>
class PlpFormer {
 public:
  PlpFormer(const PlpConfig& cfg, std::uint64_t seed);

  struct Output {
    Tensor<S> queries;  // n_queries x d_model
    Tensor<S> text;     // L x d_model
  };

  // e_seq: n x c_seq.  text_ids: leading special token plus content; the
  // leading token must not be the pad id.
  Output forward(const Tensor<S>& e_seq, std::span<const int> text_ids, MaskMode mode) const;
  // Same computation under a caller-supplied mask (must be (nq+L)^2).
  Output forward_masked(const Tensor<S>& e_seq, std::span<const int> text_ids,
                        const std::vector<std::uint8_t>& mask) const;

  Tensor<S> lm_logits(const Tensor<S>& text_states) const;      // L x vocab
  Tensor<S> match_logit(const Tensor<S>& query_states) const;   // 1 x 1, mean over queries

  // Query states for retrieval (text-free) and text [CLS] states
  // (protein-free); both use the unimodal mask.
  Tensor<S> protein_queries(const Tensor<S>& e_seq) const;
  Tensor<S> text_cls(std::span<const int> text_ids) const;

  const PlpConfig& config() const { return cfg_; }
  std::vector<NamedTensor<S>> parameters() const;
  void set_trainable(bool on);

 private:
  struct Layer {
    Tensor<S> wq, wk, wv, wo;
    Tensor<S> ln1_g, ln1_b;
    bool has_cross = false;
    Tensor<S> cq, ck, cv, co;
    Tensor<S> lnc_g, lnc_b;
    Tensor<S> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    Tensor<S> ln2_g, ln2_b;
  };
  Tensor<S> self_attention(const Tensor<S>& x, const std::vector<std::uint8_t>& mask,
                           const Layer& l) const;
  Tensor<S> cross_attention(const Tensor<S>& q, const Tensor<S>& e_seq, const Layer& l) const;
  Tensor<S> ffn(const Tensor<S>& x, const Layer& l) const;

  PlpConfig cfg_;
  Tensor<S> query_tokens_;  // n_queries x d_model
  Tensor<S> tok_emb_;       // vocab x d_model
  Tensor<S> pos_emb_;       // max_text_len x d_model
  std::vector<Layer> layers_;
  Tensor<S> lm_w_, lm_b_;
  Tensor<S> match_w_, match_b_;
};

// One pretraining example: frozen protein rows plus the tokenized
// description (no special tokens; the losses add their own).
template <class S>
struct PlpExample {
  Tensor<S> e_seq;
  std::vector<int> tokens;
};

// B x B cosine similarities; entry (b, j) = max over protein b's query rows
// of cosine against text j's [CLS] row.
template <class S>
Tensor<S> ptc_similarity(const std::vector<Tensor<S>>& query_states,
                         const std::vector<Tensor<S>>& cls_rows);

// Symmetric InfoNCE over the similarity matrix at the given temperature.
template <class S>
Tensor<S> ptc_loss(const Tensor<S>& sim, double temperature);

// For each example: hardest non-matching text (row argmax) and hardest
// non-matching protein (column argmax); ties resolve to the lowest index.
struct HardNegatives {
  std::vector<std::size_t> text_for_protein;
  std::vector<std::size_t> protein_for_text;
};
HardNegatives mine_hard_negatives(const std::vector<double>& sim_values, std::size_t batch);

template <class S>
Tensor<S> ptg_loss(const PlpFormer<S>& model, const std::vector<PlpExample<S>>& batch,
                   int dec_id, int eos_id);

template <class S>
Tensor<S> ptm_loss(const PlpFormer<S>& model, const std::vector<PlpExample<S>>& batch,
                   int cls_id, const HardNegatives& negs);

struct PlpLossReport {
  double ptc = 0, ptg = 0, ptm = 0, total = 0;
};

// Full pretraining objective; batch needs at least two examples so hard
// negatives exist.
template <class S>
std::pair<Tensor<S>, PlpLossReport> plp_pretrain_loss(const PlpFormer<S>& model,
                                                      const std::vector<PlpExample<S>>& batch,
                                                      int cls_id, int dec_id, int eos_id);

}  // namespace protlang
