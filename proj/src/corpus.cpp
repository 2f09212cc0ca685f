#include "protlang/corpus.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstring>
#include <map>
#include <set>
#include <sstream>

#include "io_util.hpp"
#include "protlang/rng.hpp"

namespace protlang {

namespace {

bool is_valid_residue(char c) { return std::strchr(kResidueAlphabet, c) != nullptr && c != '\0'; }

std::string line_tag(std::size_t line) { return "line " + std::to_string(line) + ": "; }

const std::map<std::string, char>& three_letter_map() {
  static const std::map<std::string, char> m = {
      {"ALA", 'A'}, {"ARG", 'R'}, {"ASN", 'N'}, {"ASP", 'D'}, {"CYS", 'C'},
      {"GLN", 'Q'}, {"GLU", 'E'}, {"GLY", 'G'}, {"HIS", 'H'}, {"ILE", 'I'},
      {"LEU", 'L'}, {"LYS", 'K'}, {"MET", 'M'}, {"PHE", 'F'}, {"PRO", 'P'},
      {"SER", 'S'}, {"THR", 'T'}, {"TRP", 'W'}, {"TYR", 'Y'}, {"VAL", 'V'},
  };
  return m;
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::string cur;
  for (char c : text) {
    if (c == '\n') {
      if (!cur.empty() && cur.back() == '\r') cur.pop_back();
      lines.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) {
    if (cur.back() == '\r') cur.pop_back();
    lines.push_back(cur);
  }
  return lines;
}

}  // namespace

void validate_residues(const std::string& residues, const std::string& where) {
  if (residues.empty()) throw ParseError(where + ": empty residue sequence");
  for (std::size_t i = 0; i < residues.size(); ++i)
    if (!is_valid_residue(residues[i]))
      throw ParseError(where + ": invalid residue '" + std::string(1, residues[i]) +
                       "' at position " + std::to_string(i + 1));
}

std::vector<AminoAcidSequence> parse_fasta(const std::string& text) {
  std::vector<AminoAcidSequence> out;
  const auto lines = split_lines(text);
  bool have_record = false;
  AminoAcidSequence cur;
  std::size_t header_line = 0;
  auto flush = [&]() {
    if (!have_record) return;
    if (cur.residues.empty())
      throw ParseError(line_tag(header_line) + "record '" + cur.id + "' has no residues");
    out.push_back(cur);
    cur = {};
  };
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string& line = lines[i];
    if (trim(line).empty()) continue;
    if (line[0] == '>') {
      flush();
      have_record = true;
      header_line = i + 1;
      std::string rest = line.substr(1);
      std::size_t sp = rest.find_first_of(" \t");
      cur.id = trim(sp == std::string::npos ? rest : rest.substr(0, sp));
      if (cur.id.empty()) throw ParseError(line_tag(i + 1) + "header has no id");
    } else {
      if (!have_record) throw ParseError(line_tag(i + 1) + "expected '>' header before sequence");
      const std::string body = trim(line);
      for (std::size_t j = 0; j < body.size(); ++j)
        if (!is_valid_residue(body[j]))
          throw ParseError(line_tag(i + 1) + "invalid residue '" + std::string(1, body[j]) +
                           "' in column " + std::to_string(j + 1));
      cur.residues += body;
    }
  }
  flush();
  return out;
}

std::string serialize_fasta(const std::vector<AminoAcidSequence>& seqs) {
  std::string out;
  for (const auto& s : seqs) {
    out += ">";
    out += s.id;
    out += "\n";
    out += s.residues;
    out += "\n";
  }
  return out;
}

AminoAcidSequence parse_pdb_chain(const std::string& text, char chain,
                                  const std::string& id_hint) {
  const auto lines = split_lines(text);
  std::string residues;
  std::set<std::string> seen;       // resSeq+iCode already counted
  std::set<char> chains_present;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string& line = lines[i];
    if (line.rfind("ATOM", 0) != 0) continue;
    if (line.size() < 27)
      throw ParseError(line_tag(i + 1) + "ATOM record too short (" +
                       std::to_string(line.size()) + " columns)");
    const char line_chain = line[21];
    chains_present.insert(line_chain);
    if (line_chain != chain) continue;
    const std::string key = line.substr(22, 4) + line[26];
    if (!seen.insert(key).second) continue;
    const std::string res_name = trim(line.substr(17, 3));
    auto it = three_letter_map().find(res_name);
    residues.push_back(it == three_letter_map().end() ? 'X' : it->second);
  }
  if (residues.empty()) {
    std::string avail;
    for (char c : chains_present) {
      if (!avail.empty()) avail += ", ";
      avail += c;
    }
    throw NotFoundError("chain '" + std::string(1, chain) + "' not found" +
                        (avail.empty() ? " (no ATOM records)" : " (available: " + avail + ")"));
  }
  return {id_hint + "_" + std::string(1, chain), residues};
}

std::string parse_ss8(const std::string& labels) {
  static const char* kAllowed = "HGIEBTSC";
  std::string out;
  out.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    char c = labels[i];
    if (c == '-') c = 'C';
    if (std::strchr(kAllowed, c) == nullptr || c == '\0')
      throw ParseError("invalid secondary-structure label '" + std::string(1, labels[i]) +
                       "' at position " + std::to_string(i + 1));
    out.push_back(c);
  }
  return out;
}

namespace {

using nlohmann::ordered_json;

std::string require_string(const ordered_json& obj, const char* field, std::size_t line) {
  if (!obj.contains(field) || !obj[field].is_string() ||
      obj[field].get<std::string>().empty())
    throw ParseError(line_tag(line) + "field '" + field + "' must be a non-empty string");
  return obj[field].get<std::string>();
}

}  // namespace

std::vector<ProteinRecord> parse_instruction_records(const std::string& text) {
  std::vector<ProteinRecord> out;
  std::set<std::string> ids;
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t ln = i + 1;
    if (trim(lines[i]).empty()) continue;
    ordered_json obj;
    try {
      obj = ordered_json::parse(lines[i]);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_tag(ln) + "invalid JSON (" + e.what() + ")");
    }
    if (!obj.is_object()) throw ParseError(line_tag(ln) + "record must be a JSON object");
    ProteinRecord rec;
    rec.id = require_string(obj, "id", ln);
    if (!ids.insert(rec.id).second)
      throw ParseError(line_tag(ln) + "duplicate id '" + rec.id + "'");
    rec.sequence = require_string(obj, "sequence", ln);
    validate_residues(rec.sequence, line_tag(ln) + "field 'sequence'");
    if (obj.contains("ss8")) {
      if (!obj["ss8"].is_string())
        throw ParseError(line_tag(ln) + "field 'ss8' must be a string");
      std::string ss8;
      try {
        ss8 = parse_ss8(obj["ss8"].get<std::string>());
      } catch (const ParseError& e) {
        throw ParseError(line_tag(ln) + "field 'ss8': " + e.what());
      }
      if (ss8.size() != rec.sequence.size())
        throw ParseError(line_tag(ln) + "field 'ss8': length " + std::to_string(ss8.size()) +
                         " does not match sequence length " +
                         std::to_string(rec.sequence.size()));
      rec.ss8 = ss8;
    }
    if (obj.contains("ter_path")) rec.ter_path = require_string(obj, "ter_path", ln);
    if (obj.contains("description")) rec.description = require_string(obj, "description", ln);
    if (obj.contains("qa")) {
      if (!obj["qa"].is_array()) throw ParseError(line_tag(ln) + "field 'qa' must be an array");
      std::size_t k = 0;
      for (const auto& item : obj["qa"]) {
        const std::string tag = "qa[" + std::to_string(k) + "]";
        if (!item.is_object())
          throw ParseError(line_tag(ln) + "field '" + tag + "' must be an object");
        QaPair qa;
        if (!item.contains("q") || !item["q"].is_string() || item["q"].get<std::string>().empty())
          throw ParseError(line_tag(ln) + "field '" + tag + ".q' must be a non-empty string");
        if (!item.contains("a") || !item["a"].is_string() || item["a"].get<std::string>().empty())
          throw ParseError(line_tag(ln) + "field '" + tag + ".a' must be a non-empty string");
        qa.question = item["q"].get<std::string>();
        qa.answer = item["a"].get<std::string>();
        rec.qa.push_back(std::move(qa));
        ++k;
      }
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<ProteinRecord> load_instruction_file(const std::string& path) {
  return parse_instruction_records(ioutil::read_text_file(path));
}

std::string serialize_instruction_records(const std::vector<ProteinRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    ordered_json obj;
    obj["id"] = r.id;
    obj["sequence"] = r.sequence;
    if (r.ss8) obj["ss8"] = *r.ss8;
    if (r.ter_path) obj["ter_path"] = *r.ter_path;
    if (r.description) obj["description"] = *r.description;
    if (!r.qa.empty()) {
      ordered_json qa = ordered_json::array();
      for (const auto& p : r.qa) qa.push_back({{"q", p.question}, {"a", p.answer}});
      obj["qa"] = qa;
    }
    out += obj.dump();
    out += "\n";
  }
  return out;
}

DatasetSplit split_dataset(std::size_t total, std::size_t eval_count, std::uint64_t seed) {
  if (eval_count >= total)
    throw ContractError("split_dataset: eval_count " + std::to_string(eval_count) +
                        " must be below total " + std::to_string(total));
  std::vector<std::size_t> idx(total);
  for (std::size_t i = 0; i < total; ++i) idx[i] = i;
  Rng rng(mix_seed(seed, 0x51ull));
  for (std::size_t i = total - 1; i > 0; --i) {
    std::size_t j = rng.uniform_index(i + 1);
    std::swap(idx[i], idx[j]);
  }
  DatasetSplit split;
  split.eval.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(eval_count));
  split.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(eval_count), idx.end());
  std::sort(split.eval.begin(), split.eval.end());
  std::sort(split.train.begin(), split.train.end());
  return split;
}

// ---------------------------------------------------------------------------
// Tokenizer

namespace {

const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> r = {"[PAD]", "[CLS]", "[DEC]",     "[SEP]",
                                             "[BOS]", "[EOS]", "[UNK]",     "<Protein>",
                                             "</Protein>"};
  return r;
}

bool is_word_char(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c > 127;
}

bool is_space_char(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

}  // namespace

std::vector<std::string> Tokenizer::normalize(const std::string& text) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&]() {
    if (!word.empty()) {
      out.push_back(word);
      word.clear();
    }
  };
  for (unsigned char c : text) {
    if (is_word_char(c)) {
      word.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a')
                                          : static_cast<char>(c));
    } else if (is_space_char(c)) {
      flush();
    } else {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    }
  }
  flush();
  return out;
}

Tokenizer Tokenizer::build(const std::vector<std::string>& texts, std::size_t max_vocab) {
  if (max_vocab <= kNumReserved)
    throw ContractError("tokenizer max_vocab must exceed the " +
                        std::to_string(kNumReserved) + " reserved ids");
  std::map<std::string, std::size_t> counts;
  for (const auto& t : texts)
    for (auto& w : normalize(t)) ++counts[w];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Tokenizer tk;
  tk.tokens_ = reserved_tokens();
  for (const auto& [w, n] : ranked) {
    if (tk.tokens_.size() >= max_vocab) break;
    tk.tokens_.push_back(w);
  }
  tk.rebuild_index();
  return tk;
}

void Tokenizer::rebuild_index() {
  index_.clear();
  for (std::size_t i = 0; i < tokens_.size(); ++i)
    index_[tokens_[i]] = static_cast<int>(i);
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
  std::vector<int> out;
  for (const auto& w : normalize(text)) out.push_back(id_of(w));
  return out;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (!out.empty()) out += " ";
    out += token(id);
  }
  return out;
}

const std::string& Tokenizer::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw ContractError("token id " + std::to_string(id) + " out of vocab of " +
                        std::to_string(tokens_.size()));
  return tokens_[static_cast<std::size_t>(id)];
}

int Tokenizer::id_of(const std::string& tok) const {
  auto it = index_.find(tok);
  return it == index_.end() ? kUnk : it->second;
}

void Tokenizer::save(const std::string& path) const {
  nlohmann::ordered_json obj;
  obj["version"] = 1;
  obj["tokens"] = tokens_;
  ioutil::write_text_file(path, obj.dump(2) + "\n");
}

Tokenizer Tokenizer::load(const std::string& path) {
  nlohmann::json obj;
  try {
    obj = nlohmann::json::parse(ioutil::read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": invalid tokenizer file (" + e.what() + ")");
  }
  if (!obj.contains("version") || obj["version"] != 1)
    throw FormatError(path + ": unsupported tokenizer version");
  if (!obj.contains("tokens") || !obj["tokens"].is_array())
    throw FormatError(path + ": missing token list");
  Tokenizer tk;
  for (const auto& t : obj["tokens"]) {
    if (!t.is_string()) throw FormatError(path + ": token entries must be strings");
    tk.tokens_.push_back(t.get<std::string>());
  }
  const auto& res = reserved_tokens();
  if (tk.tokens_.size() < res.size())
    throw FormatError(path + ": tokenizer is missing reserved ids");
  for (std::size_t i = 0; i < res.size(); ++i)
    if (tk.tokens_[i] != res[i])
      throw FormatError(path + ": reserved token " + std::to_string(i) + " should be '" +
                        res[i] + "', found '" + tk.tokens_[i] + "'");
  tk.rebuild_index();
  return tk;
}

}  // namespace protlang
