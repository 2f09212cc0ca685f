#include "protlang/generation.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "protlang/errors.hpp"
#include "protlang/rng.hpp"

namespace protlang {

template <class S>
ToyDecoder<S>::ToyDecoder(const DecoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg_.d_model == 0 || cfg_.n_heads == 0 || cfg_.d_model % cfg_.n_heads != 0)
    throw ContractError("d_model must be a positive multiple of n_heads");
  if (cfg_.n_layers == 0 || cfg_.vocab_size == 0 || cfg_.max_seq_len == 0)
    throw ContractError("model dimensions must be positive");
  Rng rng(mix_seed(seed, 0xdec0));
  const double sd = 0.02;
  const std::size_t d = cfg_.d_model;
  tok_emb_ = Tensor<S>::randn({cfg_.vocab_size, d}, sd, rng, true);
  pos_emb_ = Tensor<S>::randn({cfg_.max_seq_len, d}, sd, rng, true);
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    Layer lay;
    lay.ln1_g = Tensor<S>::full({1, d}, S(1), true);
    lay.ln1_b = Tensor<S>::zeros({1, d}, true);
    lay.wq = Tensor<S>::randn({d, d}, sd, rng, true);
    lay.wk = Tensor<S>::randn({d, d}, sd, rng, true);
    lay.wv = Tensor<S>::randn({d, d}, sd, rng, true);
    lay.wo = Tensor<S>::randn({d, d}, sd, rng, true);
    lay.ln2_g = Tensor<S>::full({1, d}, S(1), true);
    lay.ln2_b = Tensor<S>::zeros({1, d}, true);
    lay.ffn_w1 = Tensor<S>::randn({d, d * cfg_.ffn_mult}, sd, rng, true);
    lay.ffn_b1 = Tensor<S>::zeros({1, d * cfg_.ffn_mult}, true);
    lay.ffn_w2 = Tensor<S>::randn({d * cfg_.ffn_mult, d}, sd, rng, true);
    lay.ffn_b2 = Tensor<S>::zeros({1, d}, true);
    layers_.push_back(std::move(lay));
  }
  lnf_g_ = Tensor<S>::full({1, d}, S(1), true);
  lnf_b_ = Tensor<S>::zeros({1, d}, true);
  head_w_ = Tensor<S>::randn({d, cfg_.vocab_size}, sd, rng, true);
  head_b_ = Tensor<S>::zeros({1, cfg_.vocab_size}, true);
}

template <class S>
Tensor<S> ToyDecoder<S>::embed_tokens(std::span<const int> ids) const {
  return embed_rows(tok_emb_, ids);
}

template <class S>
Tensor<S> ToyDecoder<S>::self_attention(const Tensor<S>& x, const Layer& l) const {
  const std::size_t T = x.rows();
  const std::size_t dh = cfg_.d_model / cfg_.n_heads;
  std::vector<std::uint8_t> causal(T * T, 0);
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = 0; j <= i; ++j) causal[i * T + j] = 1;
  Tensor<S> q = matmul(x, l.wq);
  Tensor<S> k = matmul(x, l.wk);
  Tensor<S> v = matmul(x, l.wv);
  std::vector<Tensor<S>> heads;
  for (std::size_t h = 0; h < cfg_.n_heads; ++h) {
    Tensor<S> qh = slice_cols(q, h * dh, dh);
    Tensor<S> kh = slice_cols(k, h * dh, dh);
    Tensor<S> vh = slice_cols(v, h * dh, dh);
    Tensor<S> scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(double(dh)));
    heads.push_back(weighted_sum_rows(masked_softmax_rows(scores, causal), vh));
  }
  return matmul(concat_cols(heads), l.wo);
}

template <class S>
Tensor<S> ToyDecoder<S>::forward(const Tensor<S>& stream) const {
  if (stream.rank() != 2 || stream.cols() != cfg_.d_model)
    throw ShapeError("stream must be T x " + std::to_string(cfg_.d_model) + ", got " +
                     shape_str(stream.shape()));
  const std::size_t T = stream.rows();
  if (T > cfg_.max_seq_len)
    throw ContractError("stream of " + std::to_string(T) + " rows exceeds the limit of " +
                        std::to_string(cfg_.max_seq_len));
  Tensor<S> x = add(stream, slice_rows(pos_emb_, 0, T));
  for (const Layer& l : layers_) {
    x = add(x, self_attention(layer_norm(x, l.ln1_g, l.ln1_b), l));
    Tensor<S> h = gelu(add_rowvec(matmul(layer_norm(x, l.ln2_g, l.ln2_b), l.ffn_w1), l.ffn_b1));
    x = add(x, add_rowvec(matmul(h, l.ffn_w2), l.ffn_b2));
  }
  return layer_norm(x, lnf_g_, lnf_b_);
}

template <class S>
Tensor<S> ToyDecoder<S>::logits(const Tensor<S>& hidden) const {
  return add_rowvec(matmul(hidden, head_w_), head_b_);
}

template <class S>
std::vector<NamedTensor<S>> ToyDecoder<S>::parameters() const {
  std::vector<NamedTensor<S>> out;
  out.push_back({"dec.tok_emb", tok_emb_});
  out.push_back({"dec.pos_emb", pos_emb_});
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& l = layers_[i];
    const std::string p = "dec.l" + std::to_string(i) + ".";
    out.push_back({p + "ln1.g", l.ln1_g});
    out.push_back({p + "ln1.b", l.ln1_b});
    out.push_back({p + "wq", l.wq});
    out.push_back({p + "wk", l.wk});
    out.push_back({p + "wv", l.wv});
    out.push_back({p + "wo", l.wo});
    out.push_back({p + "ln2.g", l.ln2_g});
    out.push_back({p + "ln2.b", l.ln2_b});
    out.push_back({p + "ffn.w1", l.ffn_w1});
    out.push_back({p + "ffn.b1", l.ffn_b1});
    out.push_back({p + "ffn.w2", l.ffn_w2});
    out.push_back({p + "ffn.b2", l.ffn_b2});
  }
  out.push_back({"dec.lnf.g", lnf_g_});
  out.push_back({"dec.lnf.b", lnf_b_});
  out.push_back({"dec.head.w", head_w_});
  out.push_back({"dec.head.b", head_b_});
  return out;
}

template <class S>
void ToyDecoder<S>::set_trainable(bool on) {
  for (auto& p : parameters()) p.tensor.set_requires_grad(on);
}

template <class S>
Adapter<S>::Adapter(std::string name, std::size_t d_in, std::size_t d_out, std::uint64_t seed)
    : name_(std::move(name)), d_in_(d_in), d_out_(d_out) {
  if (d_in == 0 || d_out == 0) throw ContractError("adapter dimensions must be positive");
  Rng rng(mix_seed(seed, hash_bytes(name_.data(), name_.size())));
  w_ = Tensor<S>::randn({d_in_, d_out_}, 0.02, rng, true);
  b_ = Tensor<S>::zeros({1, d_out_}, true);
}

template <class S>
Tensor<S> Adapter<S>::forward(const Tensor<S>& x) const {
  if (x.rank() != 2 || x.cols() != d_in_)
    throw ShapeError("adapter input must be n x " + std::to_string(d_in_) + ", got " +
                     shape_str(x.shape()));
  return add_rowvec(matmul(x, w_), b_);
}

template <class S>
std::vector<NamedTensor<S>> Adapter<S>::parameters() const {
  return {{name_ + ".w", w_}, {name_ + ".b", b_}};
}

template <class S>
void Adapter<S>::set_trainable(bool on) {
  w_.set_requires_grad(on);
  b_.set_requires_grad(on);
}

template <class S>
AssembledPrompt<S> assemble_prompt(const ToyDecoder<S>& dec, const Tensor<S>& align_rows,
                                   const Tensor<S>& ter_rows, std::span<const int> question,
                                   std::span<const int> answer, int open_id, int close_id) {
  const std::size_t d = dec.config().d_model;
  if (align_rows.rank() != 2 || align_rows.cols() != d || ter_rows.rank() != 2 ||
      ter_rows.cols() != d)
    throw ShapeError("protein blocks must match the decoder width " + std::to_string(d));
  std::vector<int> tail{close_id};
  tail.insert(tail.end(), question.begin(), question.end());
  tail.insert(tail.end(), answer.begin(), answer.end());
  const std::vector<int> open{open_id};
  AssembledPrompt<S> out;
  out.stream = concat_rows<S>(
      {dec.embed_tokens(open), align_rows, ter_rows, dec.embed_tokens(tail)});
  out.first_answer_logit_row =
      1 + align_rows.rows() + ter_rows.rows() + 1 + question.size() - 1;
  return out;
}

template <class S>
Tensor<S> qa_loss(const ToyDecoder<S>& dec, const std::vector<QaItem<S>>& batch, int open_id,
                  int close_id, int eos_id) {
  if (batch.empty()) throw ContractError("answer loss needs a non-empty batch");
  Tensor<S> total;
  for (const auto& item : batch) {
    if (item.answer.empty()) throw ContractError("answer region is empty");
    auto prompt = assemble_prompt(dec, item.align_rows, item.ter_rows, item.question,
                                  item.answer, open_id, close_id);
    Tensor<S> out_logits = dec.logits(dec.forward(prompt.stream));
    std::vector<int> targets(prompt.stream.rows(), -1);
    for (std::size_t i = 0; i < item.answer.size(); ++i)
      targets[prompt.first_answer_logit_row + i] = item.answer[i];
    targets[prompt.first_answer_logit_row + item.answer.size()] = eos_id;
    Tensor<S> loss = cross_entropy_logits(out_logits, targets);
    total = total.defined() ? add(total, loss) : loss;
  }
  return scale(total, 1.0 / double(batch.size()));
}

namespace {

template <class S>
int pick_next(std::span<const S> row, const GenerateOptions& opt, Rng& rng) {
  const std::size_t v = row.size();
  if (opt.top_k == 0) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v; ++i)
      if (row[i] > row[best]) best = i;
    return int(best);
  }
  const std::size_t k = std::min<std::size_t>(opt.top_k, v);
  std::vector<std::size_t> ids(v);
  for (std::size_t i = 0; i < v; ++i) ids[i] = i;
  std::partial_sort(ids.begin(), ids.begin() + std::ptrdiff_t(k), ids.end(),
                    [&](std::size_t a, std::size_t b) {
                      return row[a] != row[b] ? row[a] > row[b] : a < b;
                    });
  double mx = double(row[ids[0]]);
  std::vector<double> w(k);
  double sum = 0;
  for (std::size_t i = 0; i < k; ++i) {
    w[i] = std::exp(double(row[ids[i]]) - mx);
    sum += w[i];
  }
  double u = rng.uniform() * sum;
  for (std::size_t i = 0; i < k; ++i) {
    u -= w[i];
    if (u <= 0) return int(ids[i]);
  }
  return int(ids[k - 1]);
}

}  // namespace

template <class S>
GenerationResult generate(const ToyDecoder<S>& dec, const Tensor<S>& align_rows,
                          const Tensor<S>& ter_rows, std::span<const int> question, int open_id,
                          int close_id, int eos_id, const GenerateOptions& opt) {
  if (opt.max_new_tokens == 0) throw ContractError("max_new_tokens must be positive");
  Rng rng(mix_seed(opt.seed, 0x9e4));
  GenerationResult res;
  // Inference only: detached prompt blocks keep the loop off any graph.
  Tensor<S> align = align_rows.detach();
  Tensor<S> ter = ter_rows.detach();
  while (true) {
    auto prompt =
        assemble_prompt(dec, align, ter, question, res.tokens, open_id, close_id);
    if (prompt.stream.rows() > dec.config().max_seq_len) {
      res.truncated = true;
      break;
    }
    Tensor<S> hidden = dec.forward(prompt.stream);
    Tensor<S> last = slice_rows(hidden, hidden.rows() - 1, 1);
    Tensor<S> row = dec.logits(last);
    const int next = pick_next(row.data(), opt, rng);
    if (next == eos_id) break;
    res.tokens.push_back(next);
    if (res.tokens.size() >= opt.max_new_tokens) {
      res.truncated = true;
      break;
    }
  }
  return res;
}

#define PROTLANG_GEN_INSTANTIATE(S)                                                        \
  template class ToyDecoder<S>;                                                            \
  template class Adapter<S>;                                                               \
  template AssembledPrompt<S> assemble_prompt<S>(const ToyDecoder<S>&, const Tensor<S>&,   \
                                                 const Tensor<S>&, std::span<const int>,   \
                                                 std::span<const int>, int, int);          \
  template Tensor<S> qa_loss<S>(const ToyDecoder<S>&, const std::vector<QaItem<S>>&, int,  \
                                int, int);                                                 \
  template GenerationResult generate<S>(const ToyDecoder<S>&, const Tensor<S>&,            \
                                        const Tensor<S>&, std::span<const int>, int, int,  \
                                        int, const GenerateOptions&);

PROTLANG_GEN_INSTANTIATE(float)
PROTLANG_GEN_INSTANTIATE(double)

#undef PROTLANG_GEN_INSTANTIATE

}  // namespace protlang
