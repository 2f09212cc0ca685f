#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "protlang/config.hpp"

namespace protlang {

// Fixed artifact names under RunConfig::out_dir.  Each stage checkpoint is
// self-contained: it carries every upstream parameter it depends on, so later
// stages and eval only need the latest file.
namespace artifact {
inline constexpr const char* kTokenizer = "tokenizer.json";
inline constexpr const char* kManifest = "manifest.tsv";
inline constexpr const char* kStage1 = "stage1.plpt";
inline constexpr const char* kStage2 = "stage2.plpt";
inline constexpr const char* kStage3 = "stage3.plpt";
inline constexpr const char* kPretrainLog = "pretrain_log.tsv";
inline constexpr const char* kAlignLog = "align_log.tsv";
inline constexpr const char* kTuneLog = "tune_log.tsv";
inline constexpr const char* kEvalReport = "eval_report.json";
}  // namespace artifact

std::string artifact_path(const RunConfig& cfg, const char* name);

struct StageArtifacts {
  std::string checkpoint;  // precompute puts the manifest path here
  std::string log;
  std::size_t steps_run = 0;  // precompute: embedded protein count
  std::size_t skipped_records = 0;
};

// Embeds every protein in the given FASTA/PDB files with the configured
// encoder and writes one embedding file per protein plus a manifest of
// id<TAB>path lines.  The manifest lands only after every file succeeded.
StageArtifacts run_precompute(const RunConfig& cfg, const std::vector<std::string>& inputs,
                              char pdb_chain = 'A');

// Stage 1: PLP-former pretraining on (sequence, description) pairs from the
// train split.  Emits a tab-separated loss log `step lr ptc ptg ptm total`,
// periodic checkpoints, and the tokenizer.  A non-finite loss aborts with
// NumericError and leaves the last written checkpoint in place.
StageArtifacts run_pretrain(const RunConfig& cfg, const std::string& resume_from = "");

// Stage 2: gating module + tertiary projector trained contrastively against
// the frozen PLP-former from plp_checkpoint.  Records lacking a secondary
// structure annotation (or tertiary data under the file encoder) are skipped
// and counted.  Single-loss stages log zeros in the ptc/ptg/ptm columns.
StageArtifacts run_align(const RunConfig& cfg, const std::string& plp_checkpoint,
                         const std::string& resume_from = "");

// Stage 3: prompt adapters (and optionally the decoder) trained on
// answer-masked LM loss over qa pairs; everything upstream stays frozen.
// Records without usable qa pairs are skipped and counted.
StageArtifacts run_tune(const RunConfig& cfg, const std::string& align_checkpoint,
                        const std::string& resume_from = "");

enum class EvalSplit { train, eval };

// Generates an answer per qa pair in the split, scores text metrics, runs
// protein<->text retrieval and the cross-level alignment ranking, and writes
// a JSON report.  Returns the report path.  Empty split is a contract error.
std::string run_eval(const RunConfig& cfg, const std::string& checkpoint, EvalSplit split);

// One question against one protein file (FASTA first record, or .pdb chain).
std::string chat_answer(const RunConfig& cfg, const std::string& checkpoint,
                        const std::string& protein_path, const std::string& question,
                        char pdb_chain = 'A');

// Interactive loop: first a protein path line (repeating until one loads),
// then alternating question -> answer until end-of-input.  Prompts go to
// `prompt_out`, answers to `out`.  Returns a process exit code.
int chat_repl(const RunConfig& cfg, const std::string& checkpoint, std::istream& in,
              std::ostream& out, std::ostream& prompt_out, const std::string& protein_path = "",
              char pdb_chain = 'A');

}  // namespace protlang
