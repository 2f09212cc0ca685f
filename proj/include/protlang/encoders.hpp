#pragma once

#include <cstdint>
#include <string>

#include "protlang/corpus.hpp"
#include "protlang/tensor.hpp"

namespace protlang {

inline constexpr std::size_t kSecondaryChannels = 8;

struct EncoderSpec {
  enum class Kind { stub, file };
  Kind kind = Kind::stub;
  std::uint64_t seed = 7;
  std::string path;  // file kind: PEMB container to read
  std::size_t c_seq = 768;
  std::size_t c_ter = 512;
};

// Per-residue representations at the three levels.
template <class S>
struct MultiLevelEmbeddings {
  Tensor<S> e_seq;  // n x c_seq
  Tensor<S> e_sec;  // n x 8, values in (0, 1)
  Tensor<S> e_ter;  // n x c_ter
};

// Deterministic stand-in encoder: each residue looks up a seed-derived random
// row per level, rows are averaged over a +/-2 residue window, and the
// secondary level is squashed through a sigmoid.  Editing residue t can only
// change rows [t-2, t+2].
template <class S>
MultiLevelEmbeddings<S> encode_stub(const AminoAcidSequence& seq, const EncoderSpec& spec);

// Dispatches on spec.kind; file embeddings must match the sequence length.
template <class S>
MultiLevelEmbeddings<S> encode(const AminoAcidSequence& seq, const EncoderSpec& spec);

// Sequences above max_len are cut to a contiguous window whose start is
// drawn from (seed, id), so repeat runs pick the same window.
AminoAcidSequence trim_sequence(const AminoAcidSequence& seq, std::size_t max_len,
                                std::uint64_t seed);

// PEMB container (little endian): magic "PEMB", u32 version=1, u64 n,
// u64 c_seq, u64 c_ter, then f32 row-major blocks e_seq, e_sec, e_ter.
template <class S>
void save_embeddings(const std::string& path, const MultiLevelEmbeddings<S>& emb);
template <class S>
MultiLevelEmbeddings<S> load_embeddings(const std::string& path);

// n x 8 one-hot rows over the HGIEBTSC label order.
template <class S>
Tensor<S> ss8_one_hot(const std::string& ss8);

}  // namespace protlang
