#pragma once

#include <cstdint>
#include <vector>

#include "protlang/tensor.hpp"

namespace protlang {

// Gated fusion of secondary structure into the query states: a row
// convolution over the 8 secondary channels is pooled to one row per query,
// lifted to model width, squashed to (0,1), and multiplied elementwise into
// the query states.  All-zero parameters gate at exactly 0.5.
template <class S>
class PcgModule {
 public:
  PcgModule(std::size_t d_model, std::size_t n_out_rows, std::uint64_t seed,
            std::size_t conv_k = 5);

  // e_sec: n x 8, query_states: n_out_rows x d_model -> n_out_rows x d_model.
  Tensor<S> forward(const Tensor<S>& e_sec, const Tensor<S>& query_states) const;

  std::vector<NamedTensor<S>> parameters() const;
  void set_trainable(bool on);

 private:
  std::size_t d_model_, n_out_, conv_k_;
  Tensor<S> conv_w_, conv_b_;  // (8*k) x 8, 1 x 8
  Tensor<S> gate_w_, gate_b_;  // 8 x d_model, 1 x d_model
};

// Maps per-residue tertiary rows to a fixed block of model-width rows:
// row convolution, pooling to n_out_rows, then a linear projection.
template <class S>
class TertiaryProjector {
 public:
  TertiaryProjector(std::size_t c_ter, std::size_t d_model, std::size_t n_out_rows,
                    std::uint64_t seed, std::size_t conv_k = 5);

  // e_ter: n x c_ter -> n_out_rows x d_model.
  Tensor<S> forward(const Tensor<S>& e_ter) const;

  std::vector<NamedTensor<S>> parameters() const;
  void set_trainable(bool on);

 private:
  std::size_t c_ter_, d_model_, n_out_, conv_k_;
  Tensor<S> conv_w_, conv_b_;  // (c_ter*k) x c_ter, 1 x c_ter
  Tensor<S> proj_w_, proj_b_;  // c_ter x d_model, 1 x d_model
};

// InfoNCE between row-mean summaries: the aligned block should match its own
// protein's tertiary block rather than any of the negatives.  Cosine scores
// over l2-normalized means, divided by temperature, cross entropy on slot 0.
template <class S>
Tensor<S> align_contrastive_loss(const Tensor<S>& aligned, const Tensor<S>& positive,
                                 const std::vector<Tensor<S>>& negatives, double temperature);

}  // namespace protlang
