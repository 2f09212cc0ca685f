#include "protlang/alignment.hpp"

#include <string>

#include "protlang/encoders.hpp"
#include "protlang/errors.hpp"
#include "protlang/rng.hpp"

namespace protlang {

namespace {

void check_conv_k(std::size_t k) {
  if (k == 0 || k % 2 == 0) throw ContractError("convolution width must be odd");
}

}  // namespace

template <class S>
PcgModule<S>::PcgModule(std::size_t d_model, std::size_t n_out_rows, std::uint64_t seed,
                        std::size_t conv_k)
    : d_model_(d_model), n_out_(n_out_rows), conv_k_(conv_k) {
  if (d_model == 0 || n_out_rows == 0) throw ContractError("module dimensions must be positive");
  check_conv_k(conv_k);
  Rng rng(mix_seed(seed, 0xa119));
  const std::size_t c = kSecondaryChannels;
  conv_w_ = Tensor<S>::randn({c * conv_k_, c}, 0.02, rng, true);
  conv_b_ = Tensor<S>::zeros({1, c}, true);
  gate_w_ = Tensor<S>::randn({c, d_model_}, 0.02, rng, true);
  gate_b_ = Tensor<S>::zeros({1, d_model_}, true);
}

template <class S>
Tensor<S> PcgModule<S>::forward(const Tensor<S>& e_sec, const Tensor<S>& query_states) const {
  if (e_sec.rank() != 2 || e_sec.cols() != kSecondaryChannels)
    throw ShapeError("secondary rows must be n x " + std::to_string(kSecondaryChannels) +
                     ", got " + shape_str(e_sec.shape()));
  if (query_states.rank() != 2 || query_states.rows() != n_out_ ||
      query_states.cols() != d_model_)
    throw ShapeError("query states must be " + std::to_string(n_out_) + " x " +
                     std::to_string(d_model_) + ", got " + shape_str(query_states.shape()));
  Tensor<S> conv = add_rowvec(matmul(unfold_rows(e_sec, conv_k_), conv_w_), conv_b_);
  Tensor<S> pooled = adaptive_avg_pool_rows(conv, n_out_);
  Tensor<S> gate = sigmoid(add_rowvec(matmul(pooled, gate_w_), gate_b_));
  return mul(gate, query_states);
}

template <class S>
std::vector<NamedTensor<S>> PcgModule<S>::parameters() const {
  return {{"pcg.conv.w", conv_w_},
          {"pcg.conv.b", conv_b_},
          {"pcg.gate.w", gate_w_},
          {"pcg.gate.b", gate_b_}};
}

template <class S>
void PcgModule<S>::set_trainable(bool on) {
  for (auto& p : parameters()) p.tensor.set_requires_grad(on);
}

template <class S>
TertiaryProjector<S>::TertiaryProjector(std::size_t c_ter, std::size_t d_model,
                                        std::size_t n_out_rows, std::uint64_t seed,
                                        std::size_t conv_k)
    : c_ter_(c_ter), d_model_(d_model), n_out_(n_out_rows), conv_k_(conv_k) {
  if (c_ter == 0 || d_model == 0 || n_out_rows == 0)
    throw ContractError("module dimensions must be positive");
  check_conv_k(conv_k);
  Rng rng(mix_seed(seed, 0x7e12));
  conv_w_ = Tensor<S>::randn({c_ter_ * conv_k_, c_ter_}, 0.02, rng, true);
  conv_b_ = Tensor<S>::zeros({1, c_ter_}, true);
  proj_w_ = Tensor<S>::randn({c_ter_, d_model_}, 0.02, rng, true);
  proj_b_ = Tensor<S>::zeros({1, d_model_}, true);
}

template <class S>
Tensor<S> TertiaryProjector<S>::forward(const Tensor<S>& e_ter) const {
  if (e_ter.rank() != 2 || e_ter.cols() != c_ter_)
    throw ShapeError("tertiary rows must be n x " + std::to_string(c_ter_) + ", got " +
                     shape_str(e_ter.shape()));
  Tensor<S> conv = add_rowvec(matmul(unfold_rows(e_ter, conv_k_), conv_w_), conv_b_);
  Tensor<S> pooled = adaptive_avg_pool_rows(conv, n_out_);
  return add_rowvec(matmul(pooled, proj_w_), proj_b_);
}

template <class S>
std::vector<NamedTensor<S>> TertiaryProjector<S>::parameters() const {
  return {{"terproj.conv.w", conv_w_},
          {"terproj.conv.b", conv_b_},
          {"terproj.proj.w", proj_w_},
          {"terproj.proj.b", proj_b_}};
}

template <class S>
void TertiaryProjector<S>::set_trainable(bool on) {
  for (auto& p : parameters()) p.tensor.set_requires_grad(on);
}

template <class S>
Tensor<S> align_contrastive_loss(const Tensor<S>& aligned, const Tensor<S>& positive,
                                 const std::vector<Tensor<S>>& negatives, double temperature) {
  if (!(temperature > 0)) throw ContractError("temperature must be positive");
  if (negatives.empty()) throw ContractError("contrastive loss needs at least one negative");
  Tensor<S> anchor = l2_normalize_rows(mean_rows(aligned));
  std::vector<Tensor<S>> rows;
  rows.push_back(l2_normalize_rows(mean_rows(positive)));
  for (const auto& n : negatives) rows.push_back(l2_normalize_rows(mean_rows(n)));
  Tensor<S> logits = scale(matmul(anchor, transpose(concat_rows(rows))), 1.0 / temperature);
  const std::vector<int> target{0};
  return cross_entropy_logits(logits, target);
}

#define PROTLANG_ALIGN_INSTANTIATE(S)                                                     \
  template class PcgModule<S>;                                                            \
  template class TertiaryProjector<S>;                                                    \
  template Tensor<S> align_contrastive_loss<S>(const Tensor<S>&, const Tensor<S>&,        \
                                               const std::vector<Tensor<S>>&, double);

PROTLANG_ALIGN_INSTANTIATE(float)
PROTLANG_ALIGN_INSTANTIATE(double)

#undef PROTLANG_ALIGN_INSTANTIATE

}  // namespace protlang
