#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "protlang/errors.hpp"

namespace protlang {

// The 20 standard residues plus X for anything nonstandard.
inline constexpr const char* kResidueAlphabet = "ACDEFGHIKLMNPQRSTVWYX";

struct AminoAcidSequence {
  std::string id;
  std::string residues;
};

// Throws ParseError naming `where` and the offending position/character.
void validate_residues(const std::string& residues, const std::string& where);

std::vector<AminoAcidSequence> parse_fasta(const std::string& text);
std::string serialize_fasta(const std::vector<AminoAcidSequence>& seqs);

// Residue sequence of one chain from ATOM records, ordered by appearance,
// one residue per (resSeq, iCode); altLoc duplicates collapse.  Nonstandard
// residue names map to X.  Missing chain raises NotFoundError.
AminoAcidSequence parse_pdb_chain(const std::string& text, char chain,
                                  const std::string& id_hint = "pdb");

// 8-state secondary structure labels (HGIEBTSC); '-' normalizes to C.
std::string parse_ss8(const std::string& labels);

struct QaPair {
  std::string question;
  std::string answer;
};

struct ProteinRecord {
  std::string id;
  std::string sequence;
  std::optional<std::string> ss8;          // same length as sequence
  std::optional<std::string> ter_path;     // precomputed embedding file
  std::optional<std::string> description;
  std::vector<QaPair> qa;
};

// One JSON object per line; errors name the line and field.
std::vector<ProteinRecord> parse_instruction_records(const std::string& text);
std::vector<ProteinRecord> load_instruction_file(const std::string& path);
std::string serialize_instruction_records(const std::vector<ProteinRecord>& records);

// Deterministic shuffle split; both halves come back sorted ascending.
struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> eval;
};
DatasetSplit split_dataset(std::size_t total, std::size_t eval_count, std::uint64_t seed);

// Word-level tokenizer: lowercase, split on whitespace, punctuation becomes
// single-character tokens.  Ids 0..8 are reserved; content words follow by
// frequency (ties broken lexicographically).
class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kCls = 1;
  static constexpr int kDec = 2;
  static constexpr int kSep = 3;
  static constexpr int kBos = 4;
  static constexpr int kEos = 5;
  static constexpr int kUnk = 6;
  static constexpr int kProteinOpen = 7;
  static constexpr int kProteinClose = 8;
  static constexpr std::size_t kNumReserved = 9;

  static std::vector<std::string> normalize(const std::string& text);
  static Tokenizer build(const std::vector<std::string>& texts, std::size_t max_vocab);

  std::vector<int> encode(const std::string& text) const;  // OOV -> kUnk
  std::string decode(std::span<const int> ids) const;      // literal, includes specials
  std::size_t vocab_size() const { return tokens_.size(); }
  const std::string& token(int id) const;
  int id_of(const std::string& tok) const;  // kUnk when absent

  void save(const std::string& path) const;
  static Tokenizer load(const std::string& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  void rebuild_index();
};

}  // namespace protlang
