#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "protlang/config.hpp"
#include "protlang/errors.hpp"
#include "protlang/pipeline.hpp"

namespace {

int exit_code_for(const protlang::Error& e) {
  if (dynamic_cast<const protlang::NumericError*>(&e)) return 3;
  if (dynamic_cast<const protlang::UsageError*>(&e)) return 1;
  return 2;  // parse / format / contract / shape / lookup / io
}

void print_stage(const protlang::StageArtifacts& art) {
  std::cout << "checkpoint\t" << art.checkpoint << "\n"
            << "log\t" << art.log << "\n"
            << "steps\t" << art.steps_run << "\n"
            << "skipped\t" << art.skipped_records << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"protlang: staged protein question answering at desk scale"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "run config JSON file")
      ->envname("PROTLANG_CONFIG");
  app.add_option("--set", overrides, "override a config key: dotted.key=value");

  auto* cmd_pre = app.add_subcommand("precompute", "embed FASTA/PDB inputs to .pemb files");
  std::vector<std::string> inputs;
  std::string pre_chain = "A";
  cmd_pre->add_option("inputs", inputs, "FASTA or PDB files")->required()->expected(-1);
  cmd_pre->add_option("--chain", pre_chain, "PDB chain id (default A)");

  auto* cmd_pretrain = app.add_subcommand("pretrain-plp", "stage 1: query transformer pretraining");
  std::string pretrain_resume;
  std::uint64_t pretrain_steps = 0;
  cmd_pretrain->add_option("--resume", pretrain_resume, "checkpoint to continue from");
  cmd_pretrain->add_option("--steps", pretrain_steps, "override pretrain.steps");

  auto* cmd_align = app.add_subcommand("align", "stage 2: gated fusion + tertiary projector");
  std::string align_plp, align_resume;
  std::uint64_t align_steps = 0;
  cmd_align->add_option("--plp", align_plp, "stage-1 checkpoint (default <out_dir>/stage1.plpt)");
  cmd_align->add_option("--resume", align_resume, "checkpoint to continue from");
  cmd_align->add_option("--steps", align_steps, "override align.steps");

  auto* cmd_tune = app.add_subcommand("tune", "stage 3: prompt adapters on qa pairs");
  std::string tune_align, tune_resume;
  std::uint64_t tune_steps = 0;
  cmd_tune->add_option("--align", tune_align, "stage-2 checkpoint (default <out_dir>/stage2.plpt)");
  cmd_tune->add_option("--resume", tune_resume, "checkpoint to continue from");
  cmd_tune->add_option("--steps", tune_steps, "override tune.steps");

  auto* cmd_eval = app.add_subcommand("eval", "score generation, retrieval, and alignment");
  std::string eval_ckpt, eval_split = "eval";
  cmd_eval->add_option("--checkpoint", eval_ckpt,
                       "stage-3 checkpoint (default <out_dir>/stage3.plpt)");
  cmd_eval->add_option("--split", eval_split, "train or eval (default eval)");

  auto* cmd_chat = app.add_subcommand("chat", "ask questions about one protein");
  std::string chat_ckpt, chat_protein, chat_once, chat_chain = "A";
  cmd_chat->add_option("--checkpoint", chat_ckpt,
                       "stage-3 checkpoint (default <out_dir>/stage3.plpt)");
  cmd_chat->add_option("--protein", chat_protein, "FASTA, PDB, or .pemb file");
  cmd_chat->add_option("--chain", chat_chain, "PDB chain id (default A)");
  cmd_chat->add_option("--once", chat_once, "answer one question and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (config_path.empty())
      throw protlang::UsageError("no config file; pass --config or set PROTLANG_CONFIG");

    std::ifstream is(config_path, std::ios::binary);
    if (!is) throw protlang::IoError("cannot open config " + config_path);
    std::string config_text((std::istreambuf_iterator<char>(is)),
                            std::istreambuf_iterator<char>());
    protlang::RunConfig cfg = protlang::parse_run_config_with_overrides(config_text, overrides);

    auto chain_char = [](const std::string& s, const char* what) {
      if (s.size() != 1) throw protlang::UsageError(std::string(what) + " must be one character");
      return s[0];
    };

    if (app.got_subcommand(cmd_pre)) {
      protlang::StageArtifacts art =
          protlang::run_precompute(cfg, inputs, chain_char(pre_chain, "--chain"));
      std::cout << "manifest\t" << art.checkpoint << "\n"
                << "proteins\t" << art.steps_run << "\n";
    } else if (app.got_subcommand(cmd_pretrain)) {
      if (pretrain_steps) cfg.pretrain.steps = pretrain_steps;
      print_stage(protlang::run_pretrain(cfg, pretrain_resume));
    } else if (app.got_subcommand(cmd_align)) {
      if (align_steps) cfg.align.steps = align_steps;
      if (align_plp.empty()) align_plp = protlang::artifact_path(cfg, protlang::artifact::kStage1);
      print_stage(protlang::run_align(cfg, align_plp, align_resume));
    } else if (app.got_subcommand(cmd_tune)) {
      if (tune_steps) cfg.tune.steps = tune_steps;
      if (tune_align.empty()) tune_align = protlang::artifact_path(cfg, protlang::artifact::kStage2);
      print_stage(protlang::run_tune(cfg, tune_align, tune_resume));
    } else if (app.got_subcommand(cmd_eval)) {
      protlang::EvalSplit split;
      if (eval_split == "train") split = protlang::EvalSplit::train;
      else if (eval_split == "eval") split = protlang::EvalSplit::eval;
      else throw protlang::UsageError("--split must be train or eval");
      if (eval_ckpt.empty()) eval_ckpt = protlang::artifact_path(cfg, protlang::artifact::kStage3);
      std::cout << "report\t" << protlang::run_eval(cfg, eval_ckpt, split) << "\n";
    } else if (app.got_subcommand(cmd_chat)) {
      if (chat_ckpt.empty()) chat_ckpt = protlang::artifact_path(cfg, protlang::artifact::kStage3);
      const char chain = chain_char(chat_chain, "--chain");
      if (cmd_chat->count("--once") > 0) {
        if (chat_protein.empty())
          throw protlang::UsageError("--once needs --protein");
        std::cout << protlang::chat_answer(cfg, chat_ckpt, chat_protein, chat_once, chain)
                  << "\n";
      } else {
        return protlang::chat_repl(cfg, chat_ckpt, std::cin, std::cout, std::cerr, chat_protein,
                                   chain);
      }
    }
    return 0;
  } catch (const protlang::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
