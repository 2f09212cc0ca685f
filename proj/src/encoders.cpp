#include "protlang/encoders.hpp"

#include <cstring>

#include "io_util.hpp"

namespace protlang {

namespace {

constexpr std::size_t kAlphabetSize = 21;
constexpr std::size_t kWindow = 2;  // residues averaged on each side

std::size_t residue_index(char c) {
  const char* p = std::strchr(kResidueAlphabet, c);
  return static_cast<std::size_t>(p - kResidueAlphabet);
}

// Level-specific random projection table, one row per alphabet symbol.
std::vector<double> level_table(std::uint64_t seed, std::size_t level, std::size_t channels) {
  Rng rng(mix_seed(seed, level));
  std::vector<double> table(kAlphabetSize * channels);
  for (auto& v : table) v = rng.normal();
  return table;
}

template <class S>
Tensor<S> windowed_lookup(const std::string& residues, const std::vector<double>& table,
                          std::size_t channels, bool squash) {
  const std::size_t n = residues.size();
  std::vector<S> out(n * channels);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= kWindow ? i - kWindow : 0;
    const std::size_t hi = std::min(n - 1, i + kWindow);
    const double inv = 1.0 / static_cast<double>(hi - lo + 1);
    for (std::size_t ch = 0; ch < channels; ++ch) {
      double s = 0;
      for (std::size_t w = lo; w <= hi; ++w)
        s += table[residue_index(residues[w]) * channels + ch];
      s *= inv;
      if (squash) s = 1.0 / (1.0 + std::exp(-s));
      out[i * channels + ch] = static_cast<S>(s);
    }
  }
  return Tensor<S>::from_data({n, channels}, std::move(out));
}

}  // namespace

template <class S>
MultiLevelEmbeddings<S> encode_stub(const AminoAcidSequence& seq, const EncoderSpec& spec) {
  validate_residues(seq.residues, "sequence '" + seq.id + "'");
  if (spec.c_seq == 0 || spec.c_ter == 0)
    throw ContractError("encoder channel counts must be positive");
  MultiLevelEmbeddings<S> emb;
  emb.e_seq = windowed_lookup<S>(seq.residues, level_table(spec.seed, 0, spec.c_seq),
                                 spec.c_seq, false);
  emb.e_sec = windowed_lookup<S>(seq.residues, level_table(spec.seed, 1, kSecondaryChannels),
                                 kSecondaryChannels, true);
  emb.e_ter = windowed_lookup<S>(seq.residues, level_table(spec.seed, 2, spec.c_ter),
                                 spec.c_ter, false);
  return emb;
}

template <class S>
MultiLevelEmbeddings<S> encode(const AminoAcidSequence& seq, const EncoderSpec& spec) {
  if (spec.kind == EncoderSpec::Kind::stub) return encode_stub<S>(seq, spec);
  auto emb = load_embeddings<S>(spec.path);
  if (emb.e_seq.rows() != seq.residues.size())
    throw ContractError("embedding file " + spec.path + " holds " +
                        std::to_string(emb.e_seq.rows()) + " rows for a sequence of length " +
                        std::to_string(seq.residues.size()));
  return emb;
}

AminoAcidSequence trim_sequence(const AminoAcidSequence& seq, std::size_t max_len,
                                std::uint64_t seed) {
  if (max_len == 0) throw ContractError("trim_sequence: max_len must be positive");
  if (seq.residues.size() <= max_len) return seq;
  Rng rng(mix_seed(seed, hash_bytes(seq.id.data(), seq.id.size())));
  const std::size_t start = rng.uniform_index(seq.residues.size() - max_len + 1);
  return {seq.id, seq.residues.substr(start, max_len)};
}

namespace {
constexpr char kEmbMagic[4] = {'P', 'E', 'M', 'B'};
constexpr std::uint32_t kEmbVersion = 1;

template <class S>
void write_block(std::ofstream& os, const Tensor<S>& t) {
  std::vector<float> buf(t.numel());
  auto src = t.data();
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(src[i]);
  ioutil::write_bytes(os, buf.data(), buf.size() * sizeof(float));
}

template <class S>
Tensor<S> read_block(std::ifstream& is, std::size_t rows, std::size_t cols, const char* what) {
  std::vector<float> buf(rows * cols);
  ioutil::read_bytes(is, buf.data(), buf.size() * sizeof(float), what);
  std::vector<S> vals(buf.begin(), buf.end());
  return Tensor<S>::from_data({rows, cols}, std::move(vals));
}
}  // namespace

template <class S>
void save_embeddings(const std::string& path, const MultiLevelEmbeddings<S>& emb) {
  const std::size_t n = emb.e_seq.rows();
  if (emb.e_sec.rows() != n || emb.e_ter.rows() != n)
    throw ContractError("embedding levels disagree on residue count");
  if (emb.e_sec.cols() != kSecondaryChannels)
    throw ContractError("secondary embeddings must have 8 channels");
  ioutil::atomic_write(path, [&](std::ofstream& os) {
    ioutil::write_bytes(os, kEmbMagic, 4);
    ioutil::write_u32(os, kEmbVersion);
    ioutil::write_u64(os, n);
    ioutil::write_u64(os, emb.e_seq.cols());
    ioutil::write_u64(os, emb.e_ter.cols());
    write_block(os, emb.e_seq);
    write_block(os, emb.e_sec);
    write_block(os, emb.e_ter);
  });
}

template <class S>
MultiLevelEmbeddings<S> load_embeddings(const std::string& path) {
  auto is = ioutil::open_read(path);
  char magic[4] = {};
  ioutil::read_bytes(is, magic, 4, "magic");
  if (std::memcmp(magic, kEmbMagic, 4) != 0)
    throw FormatError(path + ": bad magic, not an embedding file");
  const std::uint32_t version = ioutil::read_u32(is, "version");
  if (version != kEmbVersion)
    throw FormatError(path + ": unsupported embedding version " + std::to_string(version));
  const std::uint64_t n = ioutil::read_u64(is, "residue count");
  const std::uint64_t c_seq = ioutil::read_u64(is, "sequence channels");
  const std::uint64_t c_ter = ioutil::read_u64(is, "tertiary channels");
  if (n == 0 || c_seq == 0 || c_ter == 0)
    throw FormatError(path + ": declared dimensions must be positive");
  MultiLevelEmbeddings<S> emb;
  emb.e_seq = read_block<S>(is, n, c_seq, "sequence block");
  emb.e_sec = read_block<S>(is, n, kSecondaryChannels, "secondary block");
  emb.e_ter = read_block<S>(is, n, c_ter, "tertiary block");
  // declared dims must account for the whole payload
  char extra;
  is.read(&extra, 1);
  if (is.gcount() != 0)
    throw FormatError(path + ": payload larger than declared dimensions");
  return emb;
}

template <class S>
Tensor<S> ss8_one_hot(const std::string& ss8) {
  static const char* kOrder = "HGIEBTSC";
  const std::string checked = parse_ss8(ss8);
  std::vector<S> out(checked.size() * kSecondaryChannels, S(0));
  for (std::size_t i = 0; i < checked.size(); ++i) {
    const char* p = std::strchr(kOrder, checked[i]);
    out[i * kSecondaryChannels + static_cast<std::size_t>(p - kOrder)] = S(1);
  }
  return Tensor<S>::from_data({checked.size(), kSecondaryChannels}, std::move(out));
}

#define PROTLANG_INSTANTIATE_ENC(S)                                                      \
  template MultiLevelEmbeddings<S> encode_stub<S>(const AminoAcidSequence&,              \
                                                  const EncoderSpec&);                   \
  template MultiLevelEmbeddings<S> encode<S>(const AminoAcidSequence&, const EncoderSpec&); \
  template void save_embeddings<S>(const std::string&, const MultiLevelEmbeddings<S>&);  \
  template MultiLevelEmbeddings<S> load_embeddings<S>(const std::string&);               \
  template Tensor<S> ss8_one_hot<S>(const std::string&);

PROTLANG_INSTANTIATE_ENC(float)
PROTLANG_INSTANTIATE_ENC(double)

#undef PROTLANG_INSTANTIATE_ENC

}  // namespace protlang
