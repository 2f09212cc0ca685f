#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "protlang/encoders.hpp"
#include "protlang/generation.hpp"
#include "protlang/optim.hpp"
#include "protlang/plp_former.hpp"

namespace protlang {

// All knobs for one run, loaded from a single versioned JSON file.  Vocabulary
// sizes are not part of the file; they come from the tokenizer at run time.

struct DataConfig {
  std::string instruction_file;
  std::size_t eval_count = 0;     // held-out record count for the eval split
  std::size_t max_vocab = 512;
  std::size_t trim_max_len = 3000;
};

struct OptimConfig {
  AdamWConfig adam;
  double peak_lr = 1e-4;
  double min_lr = 8e-5;
  std::size_t warmup_steps = 5000;
  std::size_t batch_size = 64;
};

struct PretrainConfig {
  std::size_t steps = 2000;
  std::size_t checkpoint_every = 500;
};

struct AlignConfig {
  std::size_t steps = 2000;
  std::size_t checkpoint_every = 500;
  std::size_t conv_k = 5;
  double temperature = 0.8;
  std::size_t negatives = 128;  // per anchor, capped at corpus size - 1
};

struct TuneConfig {
  std::size_t steps = 1000;
  std::size_t checkpoint_every = 500;
  bool train_decoder = false;  // decoder stays frozen unless asked
};

struct EvalConfig {
  std::size_t recall_k = 20;
  std::size_t rerank_k = 20;        // match-head re-ranking depth, capped at index size
  std::size_t max_new_tokens = 32;
  std::size_t top_k = 0;            // 0 = greedy decoding
};

struct RunConfig {
  int version = 1;
  std::uint64_t seed = 7;
  std::string out_dir = "run";
  DataConfig data;
  EncoderSpec encoder;
  PlpConfig plp;        // c_seq is forced to encoder.c_seq on load
  PretrainConfig pretrain;
  AlignConfig align;
  DecoderConfig decoder;
  TuneConfig tune;
  OptimConfig optim;
  EvalConfig eval;
};

// Strict decode: unknown keys and wrong value types raise FormatError naming
// the key path; missing keys keep their defaults.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

// Canonical serialization (fixed key order); parse(serialize(c)) == c.
std::string serialize_run_config(const RunConfig& cfg);
void save_run_config(const RunConfig& cfg, const std::string& path);

// Each override is "dotted.key=value" applied to the JSON tree before decode;
// the value is parsed as a JSON literal, falling back to a plain string.
RunConfig parse_run_config_with_overrides(const std::string& json_text,
                                          const std::vector<std::string>& overrides);

// Structural invariants (positive dims, head divisibility, schedule sanity).
// require_dataset additionally demands that data.instruction_file is set and
// exists on disk.
void validate_run_config(const RunConfig& cfg, bool require_dataset);

}  // namespace protlang
