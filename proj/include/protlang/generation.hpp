#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "protlang/tensor.hpp"

namespace protlang {

struct DecoderConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t ffn_mult = 4;
  std::size_t vocab_size = 512;
  std::size_t max_seq_len = 256;
};

// Small causal language model over embedding streams.  Rows may come from
// token embeddings or be injected directly (adapted protein blocks); the
// decoder only sees rows, so both mix freely in one stream.
template <class S>
class ToyDecoder {
 public:
  ToyDecoder(const DecoderConfig& cfg, std::uint64_t seed);

  Tensor<S> embed_tokens(std::span<const int> ids) const;
  // stream: T x d_model -> T x d_model.  Adds positions, runs the causal
  // stack, applies the final norm.
  Tensor<S> forward(const Tensor<S>& stream) const;
  Tensor<S> logits(const Tensor<S>& hidden) const;  // T x vocab

  const DecoderConfig& config() const { return cfg_; }
  std::vector<NamedTensor<S>> parameters() const;
  void set_trainable(bool on);

 private:
  struct Layer {
    Tensor<S> ln1_g, ln1_b;
    Tensor<S> wq, wk, wv, wo;
    Tensor<S> ln2_g, ln2_b;
    Tensor<S> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  };
  Tensor<S> self_attention(const Tensor<S>& x, const Layer& l) const;

  DecoderConfig cfg_;
  Tensor<S> tok_emb_, pos_emb_;
  std::vector<Layer> layers_;
  Tensor<S> lnf_g_, lnf_b_;
  Tensor<S> head_w_, head_b_;
};

// Linear bridge from upstream block width to decoder width.
template <class S>
class Adapter {
 public:
  Adapter(std::string name, std::size_t d_in, std::size_t d_out, std::uint64_t seed);
  Tensor<S> forward(const Tensor<S>& x) const;
  std::vector<NamedTensor<S>> parameters() const;
  void set_trainable(bool on);

 private:
  std::string name_;
  std::size_t d_in_, d_out_;
  Tensor<S> w_, b_;
};

// Stream layout: [open] align-rows ter-rows [close] question answer.
// first_answer_logit_row is the row whose logits predict the first answer
// token (the row of the last prompt position).
template <class S>
struct AssembledPrompt {
  Tensor<S> stream;
  std::size_t first_answer_logit_row = 0;
};

template <class S>
AssembledPrompt<S> assemble_prompt(const ToyDecoder<S>& dec, const Tensor<S>& align_rows,
                                   const Tensor<S>& ter_rows, std::span<const int> question,
                                   std::span<const int> answer, int open_id, int close_id);

template <class S>
struct QaItem {
  Tensor<S> align_rows;  // already adapted to decoder width
  Tensor<S> ter_rows;
  std::vector<int> question;
  std::vector<int> answer;  // must be non-empty
};

// Mean cross entropy over the answer positions only (plus the end token);
// prompt positions carry no loss.
template <class S>
Tensor<S> qa_loss(const ToyDecoder<S>& dec, const std::vector<QaItem<S>>& batch, int open_id,
                  int close_id, int eos_id);

struct GenerateOptions {
  std::size_t max_new_tokens = 64;
  std::size_t top_k = 0;  // 0 = greedy (ties resolve to the lowest id)
  std::uint64_t seed = 0; // sampling stream when top_k > 0
};

struct GenerationResult {
  std::vector<int> tokens;  // end token excluded
  bool truncated = false;   // stopped by a length cap instead of the end token
};

template <class S>
GenerationResult generate(const ToyDecoder<S>& dec, const Tensor<S>& align_rows,
                          const Tensor<S>& ter_rows, std::span<const int> question, int open_id,
                          int close_id, int eos_id, const GenerateOptions& opt);

}  // namespace protlang
