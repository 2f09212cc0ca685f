#pragma once

#include <string>
#include <vector>

#include "protlang/corpus.hpp"
#include "protlang/rng.hpp"

namespace protlang::testsupport {

// Deterministic fixture corpus: distinct sequences, cycled secondary labels,
// and themed descriptions/qa so every protein has its own vocabulary trail.
inline std::vector<ProteinRecord> toy_corpus(std::size_t n, std::uint64_t seed) {
  static const char* kLigands[] = {"iron", "zinc", "copper", "heme",
                                   "calcium", "atp", "nadh", "lipids"};
  static const char* kPlaces[] = {"cytoplasm", "nucleus", "membrane", "matrix"};
  static const char* kRoles[] = {"transport", "storage", "signaling", "repair"};
  static const char* kSs = "HGIEBTSC";
  std::vector<ProteinRecord> out;
  Rng rng(mix_seed(seed, 0x70c0));
  for (std::size_t i = 0; i < n; ++i) {
    ProteinRecord rec;
    rec.id = "p" + std::to_string(i);
    const std::size_t len = 12 + rng.uniform_index(12);
    for (std::size_t t = 0; t < len; ++t)
      rec.sequence.push_back(kResidueAlphabet[rng.uniform_index(20)]);
    std::string ss8;
    for (std::size_t t = 0; t < len; ++t) ss8.push_back(kSs[(i + t / 3) % 8]);
    rec.ss8 = ss8;
    const std::string lig = kLigands[i % 8];
    const std::string place = kPlaces[i % 4];
    const std::string role = kRoles[(i / 2) % 4];
    rec.description =
        "protein " + rec.id + " binds " + lig + " in the " + place + " for " + role;
    rec.qa.push_back({"what does this protein bind", "it binds " + lig + " for " + role});
    rec.qa.push_back({"where does it act", "in the " + place});
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace protlang::testsupport
