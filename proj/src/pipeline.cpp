#include "protlang/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "io_util.hpp"
#include "protlang/alignment.hpp"
#include "protlang/checkpoint.hpp"
#include "protlang/corpus.hpp"
#include "protlang/encoders.hpp"
#include "protlang/errors.hpp"
#include "protlang/generation.hpp"
#include "protlang/metrics.hpp"
#include "protlang/optim.hpp"
#include "protlang/plp_former.hpp"
#include "protlang/retrieval.hpp"
#include "protlang/rng.hpp"

namespace protlang {
namespace {

using F = float;
using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

// Independent seed streams derived from the run seed.
constexpr std::uint64_t kTagPlpInit = 0x501;
constexpr std::uint64_t kTagPcgInit = 0x502;
constexpr std::uint64_t kTagProjInit = 0x503;
constexpr std::uint64_t kTagDecInit = 0x504;
constexpr std::uint64_t kTagAdapterInit = 0x505;
constexpr std::uint64_t kTagPretrainBatch = 0x5b1;
constexpr std::uint64_t kTagAlignBatch = 0x5b2;
constexpr std::uint64_t kTagTuneBatch = 0x5b3;
constexpr std::uint64_t kTagSample = 0x5e0;

void ensure_out_dir(const RunConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) throw IoError("cannot create out_dir " + cfg.out_dir + ": " + ec.message());
}

AminoAcidSequence trimmed_sequence(const RunConfig& cfg, const std::string& id,
                                   const std::string& residues) {
  return trim_sequence({id, residues}, cfg.data.trim_max_len, cfg.seed);
}

bool record_encodable(const RunConfig& cfg, const ProteinRecord& rec) {
  return cfg.encoder.kind == EncoderSpec::Kind::stub || rec.ter_path.has_value();
}

MultiLevelEmbeddings<F> encode_record(const RunConfig& cfg, const ProteinRecord& rec) {
  EncoderSpec spec = cfg.encoder;
  if (spec.kind == EncoderSpec::Kind::file) {
    if (!rec.ter_path)
      throw NotFoundError("record " + rec.id + " has no embedding file for the file encoder");
    spec.path = *rec.ter_path;
  }
  return encode<F>(trimmed_sequence(cfg, rec.id, rec.sequence), spec);
}

struct Dataset {
  std::vector<ProteinRecord> records;
  DatasetSplit split;
};

Dataset load_dataset(const RunConfig& cfg) {
  Dataset ds;
  ds.records = load_instruction_file(cfg.data.instruction_file);
  if (cfg.data.eval_count > ds.records.size())
    throw ContractError("config: data.eval_count exceeds the dataset size");
  ds.split = split_dataset(ds.records.size(), cfg.data.eval_count, cfg.seed);
  return ds;
}

Tokenizer load_or_build_tokenizer(const RunConfig& cfg, const Dataset& ds) {
  const std::string path = artifact_path(cfg, artifact::kTokenizer);
  if (fs::exists(path)) return Tokenizer::load(path);
  std::vector<std::string> texts;
  for (std::size_t i : ds.split.train) {
    const ProteinRecord& rec = ds.records[i];
    if (rec.description) texts.push_back(*rec.description);
    for (const QaPair& qa : rec.qa) {
      texts.push_back(qa.question);
      texts.push_back(qa.answer);
    }
  }
  Tokenizer tok = Tokenizer::build(texts, cfg.data.max_vocab);
  tok.save(path);
  return tok;
}

std::vector<int> capped_tokens(const Tokenizer& tok, std::size_t cap, const std::string& text) {
  std::vector<int> ids = tok.encode(text);
  if (ids.size() > cap) ids.resize(cap);
  return ids;
}

// k distinct indices from [0, n), order fixed by the generator.
std::vector<std::size_t> sample_distinct(Rng& rng, std::size_t n, std::size_t k) {
  k = std::min(k, n);
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i)
    std::swap(pool[i], pool[i + rng.uniform_index(n - i)]);
  pool.resize(k);
  return pool;
}

std::string format_loss_row(std::uint64_t step, double lr, double ptc, double ptg, double ptm,
                            double total) {
  char buf[192];
  std::snprintf(buf, sizeof buf, "%llu\t%.10g\t%.10g\t%.10g\t%.10g\t%.10g\n",
                static_cast<unsigned long long>(step), lr, ptc, ptg, ptm, total);
  return buf;
}

void append_params(std::vector<NamedTensor<F>>& out, const std::vector<NamedTensor<F>>& more) {
  out.insert(out.end(), more.begin(), more.end());
}

// Refuses to overwrite the previous (good) checkpoint with non-finite values.
void write_checkpoint(const std::string& path, const std::vector<NamedTensor<F>>& params,
                      const AdamW<F>* opt, std::uint64_t step) {
  std::vector<TensorRecord> recs;
  recs.reserve(params.size() + 1);
  for (const NamedTensor<F>& p : params) {
    for (F v : p.tensor.data())
      if (!std::isfinite(static_cast<double>(v)))
        throw NumericError("parameter " + p.name + " is not finite; keeping the last checkpoint");
    recs.push_back(to_record(p.name, p.tensor));
  }
  if (opt)
    for (const NamedTensor<F>& s : opt->state()) recs.push_back(to_record(s.name, s.tensor));
  recs.push_back(to_record("meta.step", Tensor<F>::from_data({1}, {static_cast<F>(step)})));
  save_checkpoint(path, recs);
}

std::uint64_t resume_step(const std::vector<TensorRecord>& recs, const std::string& path) {
  for (const TensorRecord& r : recs)
    if (r.name == "meta.step") {
      if (r.values.size() != 1) throw FormatError("meta.step must hold one value in " + path);
      return static_cast<std::uint64_t>(r.values[0]);
    }
  throw FormatError("checkpoint lacks meta.step: " + path);
}

std::uint64_t load_resume(const std::string& path, std::vector<NamedTensor<F>> params,
                          AdamW<F>& opt) {
  std::vector<TensorRecord> recs = load_checkpoint(path);
  load_into_params(recs, std::move(params));
  std::vector<NamedTensor<F>> opt_entries;
  for (const TensorRecord& r : recs)
    if (r.name.rfind("opt.", 0) == 0)
      opt_entries.push_back({r.name, Tensor<F>::from_data(r.shape, r.values)});
  opt.load_state(opt_entries);
  std::uint64_t step = resume_step(recs, path);
  opt.set_step_count(step);
  return step;
}

void warn_skipped(const char* stage, std::size_t skipped, const char* why) {
  if (skipped)
    std::cerr << "warning: " << stage << " skipped " << skipped << " record"
              << (skipped == 1 ? "" : "s") << " (" << why << ")\n";
}

PlpConfig plp_config_for_run(const RunConfig& cfg, const Tokenizer& tok) {
  PlpConfig pcfg = cfg.plp;
  pcfg.c_seq = cfg.encoder.c_seq;
  pcfg.vocab_size = tok.vocab_size();
  pcfg.pad_id = Tokenizer::kPad;
  return pcfg;
}

DecoderConfig decoder_config_for_run(const RunConfig& cfg, const Tokenizer& tok) {
  DecoderConfig dcfg = cfg.decoder;
  dcfg.vocab_size = tok.vocab_size();
  return dcfg;
}

// Training loop shared by all three stages: deterministic batch keys, a loss
// log row per step, periodic + final checkpoints, non-finite abort that keeps
// the previous checkpoint on disk.
struct StepOutcome {
  double ptc = 0, ptg = 0, ptm = 0, total = 0;
};

template <class StepFn>
StageArtifacts train_loop(const RunConfig& cfg, const char* log_name, const char* ckpt_name,
                          std::size_t total_steps, std::size_t checkpoint_every,
                          std::uint64_t batch_tag, std::uint64_t start_step,
                          const std::vector<NamedTensor<F>>& saved_params, AdamW<F>& opt,
                          bool write_initial, StepFn&& run_step) {
  const std::string ckpt = artifact_path(cfg, ckpt_name);
  const std::string log_path = artifact_path(cfg, log_name);
  if (write_initial) write_checkpoint(ckpt, saved_params, &opt, start_step);

  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw IoError("cannot open " + log_path + " for writing");

  std::uint64_t last_step = start_step;
  for (std::uint64_t step = start_step + 1; step <= total_steps; ++step) {
    const double lr = cosine_lr(step, total_steps, cfg.optim.peak_lr, cfg.optim.min_lr,
                                cfg.optim.warmup_steps);
    Rng pick(mix_seed(mix_seed(cfg.seed, batch_tag), step));
    StepOutcome out = run_step(pick, lr);
    if (!std::isfinite(out.total))
      throw NumericError("loss is not finite at step " + std::to_string(step) +
                         "; last checkpoint kept at " + ckpt);
    log << format_loss_row(step, lr, out.ptc, out.ptg, out.ptm, out.total);
    log.flush();
    last_step = step;
    if (step % checkpoint_every == 0 && step != total_steps)
      write_checkpoint(ckpt, saved_params, &opt, step);
  }
  write_checkpoint(ckpt, saved_params, &opt, last_step);
  return {ckpt, log_path, static_cast<std::size_t>(last_step - start_step), 0};
}

// Everything needed to answer questions: models rebuilt from config dims and
// filled from one self-contained stage-3 checkpoint.
struct ChatSession {
  Tokenizer tok;
  PlpFormer<F> plp;
  PcgModule<F> pcg;
  TertiaryProjector<F> proj;
  ToyDecoder<F> dec;
  Adapter<F> ad_align;
  Adapter<F> ad_ter;
};

ChatSession make_session(const RunConfig& cfg, const std::string& checkpoint) {
  const std::string tok_path = artifact_path(cfg, artifact::kTokenizer);
  if (!fs::exists(tok_path))
    throw NotFoundError("tokenizer not found at " + tok_path + "; train stage 1 first");
  Tokenizer tok = Tokenizer::load(tok_path);
  PlpConfig pcfg = plp_config_for_run(cfg, tok);
  DecoderConfig dcfg = decoder_config_for_run(cfg, tok);
  ChatSession s{std::move(tok),
                PlpFormer<F>(pcfg, mix_seed(cfg.seed, kTagPlpInit)),
                PcgModule<F>(pcfg.d_model, pcfg.n_queries, mix_seed(cfg.seed, kTagPcgInit),
                             cfg.align.conv_k),
                TertiaryProjector<F>(cfg.encoder.c_ter, pcfg.d_model, pcfg.n_queries,
                                     mix_seed(cfg.seed, kTagProjInit), cfg.align.conv_k),
                ToyDecoder<F>(dcfg, mix_seed(cfg.seed, kTagDecInit)),
                Adapter<F>("adapt.align", pcfg.d_model, dcfg.d_model,
                           mix_seed(cfg.seed, kTagAdapterInit)),
                Adapter<F>("adapt.ter", pcfg.d_model, dcfg.d_model,
                           mix_seed(cfg.seed, kTagAdapterInit))};
  std::vector<NamedTensor<F>> params = s.plp.parameters();
  append_params(params, s.pcg.parameters());
  append_params(params, s.proj.parameters());
  append_params(params, s.dec.parameters());
  append_params(params, s.ad_align.parameters());
  append_params(params, s.ad_ter.parameters());
  load_into_params(load_checkpoint(checkpoint), std::move(params));
  s.plp.set_trainable(false);
  s.pcg.set_trainable(false);
  s.proj.set_trainable(false);
  s.dec.set_trainable(false);
  s.ad_align.set_trainable(false);
  s.ad_ter.set_trainable(false);
  return s;
}

// Adapted prompt blocks for one protein.
struct ProteinContext {
  std::string id;
  Tensor<F> align_rows;
  Tensor<F> ter_rows;
};

ProteinContext context_from_embeddings(const ChatSession& s, const std::string& id,
                                       const MultiLevelEmbeddings<F>& emb) {
  Tensor<F> q = s.plp.protein_queries(emb.e_seq);
  Tensor<F> aligned = s.pcg.forward(emb.e_sec, q);
  Tensor<F> ter = s.proj.forward(emb.e_ter);
  return {id, s.ad_align.forward(aligned), s.ad_ter.forward(ter)};
}

bool has_suffix_ci(const std::string& name, const std::string& suffix) {
  if (name.size() < suffix.size()) return false;
  for (std::size_t i = 0; i < suffix.size(); ++i) {
    char a = static_cast<char>(std::tolower(static_cast<unsigned char>(
        name[name.size() - suffix.size() + i])));
    if (a != suffix[i]) return false;
  }
  return true;
}

std::string file_stem(const std::string& path) { return fs::path(path).stem().string(); }

// FASTA (first record), .pdb (one chain), or .pemb (precomputed embeddings).
MultiLevelEmbeddings<F> load_protein_file(const RunConfig& cfg, const std::string& path,
                                          char pdb_chain, std::string& id_out) {
  if (has_suffix_ci(path, ".pemb")) {
    MultiLevelEmbeddings<F> emb = load_embeddings<F>(path);
    if (emb.e_seq.cols() != cfg.encoder.c_seq || emb.e_ter.cols() != cfg.encoder.c_ter)
      throw ContractError("embedding widths in " + path + " do not match the configured encoder");
    id_out = file_stem(path);
    return emb;
  }
  AminoAcidSequence seq;
  const std::string text = ioutil::read_text_file(path);
  if (has_suffix_ci(path, ".pdb")) {
    seq = parse_pdb_chain(text, pdb_chain, file_stem(path));
  } else {
    std::vector<AminoAcidSequence> seqs = parse_fasta(text);
    if (seqs.empty()) throw ParseError(path + ": no FASTA records");
    seq = seqs.front();
  }
  if (cfg.encoder.kind == EncoderSpec::Kind::file)
    throw ContractError("the file encoder needs precomputed embeddings; pass a .pemb file");
  id_out = seq.id;
  return encode<F>(trimmed_sequence(cfg, seq.id, seq.residues), cfg.encoder);
}

std::string answer_question(const RunConfig& cfg, const ChatSession& s, const ProteinContext& ctx,
                            const std::string& question, std::uint64_t sample_stream) {
  std::vector<int> q_ids = s.tok.encode(question);
  GenerateOptions opt;
  opt.max_new_tokens = cfg.eval.max_new_tokens;
  opt.top_k = cfg.eval.top_k;
  opt.seed = mix_seed(mix_seed(cfg.seed, kTagSample), sample_stream);
  GenerationResult res = generate(s.dec, ctx.align_rows, ctx.ter_rows, q_ids,
                                  Tokenizer::kProteinOpen, Tokenizer::kProteinClose,
                                  Tokenizer::kEos, opt);
  return s.tok.decode(res.tokens);
}

std::string trimmed_line(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double mean_of(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

}  // namespace

std::string artifact_path(const RunConfig& cfg, const char* name) {
  return (fs::path(cfg.out_dir) / name).string();
}

StageArtifacts run_precompute(const RunConfig& cfg, const std::vector<std::string>& inputs,
                              char pdb_chain) {
  validate_run_config(cfg, false);
  if (cfg.encoder.kind != EncoderSpec::Kind::stub)
    throw ContractError("precompute needs the stub encoder; the file encoder reads, not writes");
  if (inputs.empty()) throw ContractError("precompute needs at least one input file");
  ensure_out_dir(cfg);
  const fs::path emb_dir = fs::path(cfg.out_dir) / "emb";
  std::error_code ec;
  fs::create_directories(emb_dir, ec);
  if (ec) throw IoError("cannot create " + emb_dir.string() + ": " + ec.message());

  std::vector<std::pair<std::string, std::string>> manifest;
  std::set<std::string> seen;
  for (const std::string& input : inputs) {
    const std::string text = ioutil::read_text_file(input);
    std::vector<AminoAcidSequence> seqs;
    try {
      if (has_suffix_ci(input, ".pdb"))
        seqs.push_back(parse_pdb_chain(text, pdb_chain, file_stem(input)));
      else
        seqs = parse_fasta(text);
    } catch (const ParseError& e) {
      throw ParseError(input + ": " + e.what());
    } catch (const NotFoundError& e) {
      throw NotFoundError(input + ": " + e.what());
    }
    for (const AminoAcidSequence& seq : seqs) {
      if (!seen.insert(seq.id).second)
        throw ContractError("duplicate protein id '" + seq.id + "' across precompute inputs");
      std::string fname = seq.id;
      for (char& c : fname)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' && c != '_' && c != '-')
          c = '_';
      const std::string out = (emb_dir / (fname + ".pemb")).string();
      save_embeddings(out, encode<F>(trimmed_sequence(cfg, seq.id, seq.residues), cfg.encoder));
      manifest.emplace_back(seq.id, out);
    }
  }

  const std::string manifest_path = artifact_path(cfg, artifact::kManifest);
  ioutil::atomic_write(manifest_path, [&](std::ofstream& os) {
    for (const auto& [id, path] : manifest) os << id << '\t' << path << '\n';
  });
  return {manifest_path, "", manifest.size(), 0};
}

StageArtifacts run_pretrain(const RunConfig& cfg, const std::string& resume_from) {
  validate_run_config(cfg, true);
  ensure_out_dir(cfg);
  Dataset ds = load_dataset(cfg);
  Tokenizer tok = load_or_build_tokenizer(cfg, ds);
  const PlpConfig pcfg = plp_config_for_run(cfg, tok);

  std::vector<PlpExample<F>> pool;
  std::size_t skipped = 0;
  for (std::size_t i : ds.split.train) {
    const ProteinRecord& rec = ds.records[i];
    std::vector<int> ids;
    if (rec.description) ids = capped_tokens(tok, pcfg.max_text_len - 1, *rec.description);
    if (ids.empty() || !record_encodable(cfg, rec)) {
      ++skipped;
      continue;
    }
    pool.push_back({encode_record(cfg, rec).e_seq, std::move(ids)});
  }
  warn_skipped("pretrain", skipped, "missing description or embedding data");
  if (pool.size() < 2)
    throw ContractError("stage 1 needs at least two train records with descriptions");

  PlpFormer<F> model(pcfg, mix_seed(cfg.seed, kTagPlpInit));
  AdamW<F> opt(model.parameters(), cfg.optim.adam);
  std::uint64_t start = 0;
  if (!resume_from.empty()) start = load_resume(resume_from, model.parameters(), opt);

  const std::size_t bsz = std::min(cfg.optim.batch_size, pool.size());
  StageArtifacts art = train_loop(
      cfg, artifact::kPretrainLog, artifact::kStage1, cfg.pretrain.steps,
      cfg.pretrain.checkpoint_every, kTagPretrainBatch, start, model.parameters(), opt,
      resume_from.empty(), [&](Rng& pick, double lr) {
        std::vector<PlpExample<F>> batch;
        for (std::size_t i : sample_distinct(pick, pool.size(), bsz)) batch.push_back(pool[i]);
        auto [loss, report] = plp_pretrain_loss(model, batch, Tokenizer::kCls, Tokenizer::kDec,
                                                Tokenizer::kEos);
        StepOutcome out{report.ptc, report.ptg, report.ptm, report.total};
        if (!std::isfinite(out.total)) return out;  // abort before touching the weights
        backward(loss);
        opt.step(lr);
        opt.zero_grad();
        return out;
      });
  art.skipped_records = skipped;
  return art;
}

StageArtifacts run_align(const RunConfig& cfg, const std::string& plp_checkpoint,
                         const std::string& resume_from) {
  validate_run_config(cfg, true);
  ensure_out_dir(cfg);
  Dataset ds = load_dataset(cfg);
  Tokenizer tok = load_or_build_tokenizer(cfg, ds);
  const PlpConfig pcfg = plp_config_for_run(cfg, tok);

  PlpFormer<F> plp(pcfg, mix_seed(cfg.seed, kTagPlpInit));
  load_into_params(load_checkpoint(plp_checkpoint), plp.parameters());
  plp.set_trainable(false);
  const std::uint64_t plp_before = params_hash(plp.parameters());

  // Frozen upstream states are cached once per record.
  struct AlignItem {
    Tensor<F> queries, e_sec, e_ter;
  };
  std::vector<AlignItem> items;
  std::size_t skipped = 0;
  for (std::size_t i : ds.split.train) {
    const ProteinRecord& rec = ds.records[i];
    if (!rec.ss8 || !record_encodable(cfg, rec)) {
      ++skipped;
      continue;
    }
    MultiLevelEmbeddings<F> emb = encode_record(cfg, rec);
    items.push_back({plp.protein_queries(emb.e_seq), emb.e_sec, emb.e_ter});
  }
  warn_skipped("align", skipped, "missing secondary/tertiary data");
  if (items.size() < 2)
    throw ContractError("stage 2 needs at least two records with structure annotations");

  PcgModule<F> pcg(pcfg.d_model, pcfg.n_queries, mix_seed(cfg.seed, kTagPcgInit),
                   cfg.align.conv_k);
  TertiaryProjector<F> proj(cfg.encoder.c_ter, pcfg.d_model, pcfg.n_queries,
                            mix_seed(cfg.seed, kTagProjInit), cfg.align.conv_k);
  std::vector<NamedTensor<F>> trainable = pcg.parameters();
  append_params(trainable, proj.parameters());
  AdamW<F> opt(trainable, cfg.optim.adam);

  std::vector<NamedTensor<F>> saved = plp.parameters();
  append_params(saved, trainable);
  std::uint64_t start = 0;
  if (!resume_from.empty()) start = load_resume(resume_from, saved, opt);

  const std::size_t n_neg = std::min(cfg.align.negatives, items.size() - 1);
  StageArtifacts art = train_loop(
      cfg, artifact::kAlignLog, artifact::kStage2, cfg.align.steps, cfg.align.checkpoint_every,
      kTagAlignBatch, start, saved, opt, resume_from.empty(), [&](Rng& pick, double lr) {
        const std::size_t anchor = pick.uniform_index(items.size());
        std::vector<Tensor<F>> negatives;
        for (std::size_t j : sample_distinct(pick, items.size() - 1, n_neg)) {
          const std::size_t other = j < anchor ? j : j + 1;
          negatives.push_back(proj.forward(items[other].e_ter));
        }
        Tensor<F> loss = align_contrastive_loss(
            pcg.forward(items[anchor].e_sec, items[anchor].queries),
            proj.forward(items[anchor].e_ter), negatives, cfg.align.temperature);
        StepOutcome out;
        out.total = static_cast<double>(loss.item());
        if (!std::isfinite(out.total)) return out;
        backward(loss);
        opt.step(lr);
        opt.zero_grad();
        return out;
      });
  if (params_hash(plp.parameters()) != plp_before)
    throw ContractError("stage 2 mutated the frozen PLP-former");
  art.skipped_records = skipped;
  return art;
}

StageArtifacts run_tune(const RunConfig& cfg, const std::string& align_checkpoint,
                        const std::string& resume_from) {
  validate_run_config(cfg, true);
  ensure_out_dir(cfg);
  Dataset ds = load_dataset(cfg);
  Tokenizer tok = load_or_build_tokenizer(cfg, ds);
  const PlpConfig pcfg = plp_config_for_run(cfg, tok);
  const DecoderConfig dcfg = decoder_config_for_run(cfg, tok);

  PlpFormer<F> plp(pcfg, mix_seed(cfg.seed, kTagPlpInit));
  PcgModule<F> pcg(pcfg.d_model, pcfg.n_queries, mix_seed(cfg.seed, kTagPcgInit),
                   cfg.align.conv_k);
  TertiaryProjector<F> proj(cfg.encoder.c_ter, pcfg.d_model, pcfg.n_queries,
                            mix_seed(cfg.seed, kTagProjInit), cfg.align.conv_k);
  {
    std::vector<NamedTensor<F>> upstream = plp.parameters();
    append_params(upstream, pcg.parameters());
    append_params(upstream, proj.parameters());
    load_into_params(load_checkpoint(align_checkpoint), std::move(upstream));
  }
  plp.set_trainable(false);
  pcg.set_trainable(false);
  proj.set_trainable(false);

  ToyDecoder<F> dec(dcfg, mix_seed(cfg.seed, kTagDecInit));
  Adapter<F> ad_align("adapt.align", pcfg.d_model, dcfg.d_model,
                      mix_seed(cfg.seed, kTagAdapterInit));
  Adapter<F> ad_ter("adapt.ter", pcfg.d_model, dcfg.d_model, mix_seed(cfg.seed, kTagAdapterInit));
  dec.set_trainable(cfg.tune.train_decoder);
  const std::uint64_t dec_before = params_hash(dec.parameters());

  // Frozen prompt blocks per record; adapters re-apply every step.
  struct TuneItem {
    Tensor<F> aligned, ter;
    std::vector<int> question, answer;
  };
  std::vector<TuneItem> pool;
  std::size_t skipped = 0;
  for (std::size_t i : ds.split.train) {
    const ProteinRecord& rec = ds.records[i];
    if (rec.qa.empty() || !record_encodable(cfg, rec)) {
      ++skipped;
      continue;
    }
    MultiLevelEmbeddings<F> emb = encode_record(cfg, rec);
    Tensor<F> aligned = pcg.forward(emb.e_sec, plp.protein_queries(emb.e_seq));
    Tensor<F> ter = proj.forward(emb.e_ter);
    bool used = false;
    for (const QaPair& qa : rec.qa) {
      std::vector<int> q_ids = tok.encode(qa.question);
      std::vector<int> a_ids = tok.encode(qa.answer);
      const std::size_t rows = 2 + 2 * pcfg.n_queries + q_ids.size() + a_ids.size();
      if (a_ids.empty() || rows > dcfg.max_seq_len) continue;
      pool.push_back({aligned, ter, std::move(q_ids), std::move(a_ids)});
      used = true;
    }
    if (!used) ++skipped;
  }
  warn_skipped("tune", skipped, "no usable qa pairs or missing embedding data");
  if (pool.empty()) throw ContractError("stage 3 needs at least one record with qa pairs");

  std::vector<NamedTensor<F>> trainable = ad_align.parameters();
  append_params(trainable, ad_ter.parameters());
  if (cfg.tune.train_decoder) append_params(trainable, dec.parameters());
  AdamW<F> opt(trainable, cfg.optim.adam);

  std::vector<NamedTensor<F>> saved = plp.parameters();
  append_params(saved, pcg.parameters());
  append_params(saved, proj.parameters());
  append_params(saved, dec.parameters());
  append_params(saved, ad_align.parameters());
  append_params(saved, ad_ter.parameters());
  std::uint64_t start = 0;
  if (!resume_from.empty()) start = load_resume(resume_from, saved, opt);

  const std::size_t bsz = std::min(cfg.optim.batch_size, pool.size());
  StageArtifacts art = train_loop(
      cfg, artifact::kTuneLog, artifact::kStage3, cfg.tune.steps, cfg.tune.checkpoint_every,
      kTagTuneBatch, start, saved, opt, resume_from.empty(), [&](Rng& pick, double lr) {
        std::vector<QaItem<F>> batch;
        for (std::size_t i : sample_distinct(pick, pool.size(), bsz)) {
          const TuneItem& it = pool[i];
          batch.push_back({ad_align.forward(it.aligned), ad_ter.forward(it.ter), it.question,
                           it.answer});
        }
        Tensor<F> loss = qa_loss(dec, batch, Tokenizer::kProteinOpen, Tokenizer::kProteinClose,
                                 Tokenizer::kEos);
        StepOutcome out;
        out.total = static_cast<double>(loss.item());
        if (!std::isfinite(out.total)) return out;
        backward(loss);
        opt.step(lr);
        opt.zero_grad();
        return out;
      });
  if (!cfg.tune.train_decoder && params_hash(dec.parameters()) != dec_before)
    throw ContractError("stage 3 mutated the frozen decoder");
  art.skipped_records = skipped;
  return art;
}

std::string run_eval(const RunConfig& cfg, const std::string& checkpoint, EvalSplit split) {
  validate_run_config(cfg, true);
  ensure_out_dir(cfg);
  Dataset ds = load_dataset(cfg);
  const std::vector<std::size_t>& idxs =
      split == EvalSplit::train ? ds.split.train : ds.split.eval;
  if (idxs.empty())
    throw ContractError(std::string("eval split '") +
                        (split == EvalSplit::train ? "train" : "eval") + "' is empty");
  ChatSession s = make_session(cfg, checkpoint);

  struct EvalEntry {
    std::string id, question, prediction, reference;
    double bleu1 = 0, bleu4 = 0, rougeL = 0, meteor = 0;
    bool exact = false;
  };
  std::vector<EvalEntry> entries;
  std::vector<ScoredItem> cider_corpus;
  std::vector<RetrievalItem<F>> ret_items;
  std::vector<Tensor<F>> align_vecs, ter_vecs;
  std::vector<std::string> align_ids;
  std::size_t skipped = 0;
  std::uint64_t sample_stream = 0;

  for (std::size_t i : idxs) {
    const ProteinRecord& rec = ds.records[i];
    if (!record_encodable(cfg, rec)) {
      ++skipped;
      continue;
    }
    MultiLevelEmbeddings<F> emb = encode_record(cfg, rec);
    ProteinContext ctx = context_from_embeddings(s, rec.id, emb);

    Tensor<F> aligned = s.pcg.forward(emb.e_sec, s.plp.protein_queries(emb.e_seq));
    align_vecs.push_back(l2_normalize_rows(mean_rows(aligned)));
    ter_vecs.push_back(l2_normalize_rows(mean_rows(s.proj.forward(emb.e_ter))));
    align_ids.push_back(rec.id);

    if (rec.description) {
      std::vector<int> text = capped_tokens(s.tok, cfg.plp.max_text_len - 1, *rec.description);
      if (!text.empty()) ret_items.push_back({rec.id, emb.e_seq, std::move(text)});
    }

    for (const QaPair& qa : rec.qa) {
      EvalEntry e;
      e.id = rec.id;
      e.question = qa.question;
      e.prediction = answer_question(cfg, s, ctx, qa.question, sample_stream++);
      e.reference = s.tok.decode(s.tok.encode(qa.answer));
      const std::vector<std::string> cand = metric_tokens(e.prediction);
      const std::vector<std::string> ref = metric_tokens(e.reference);
      e.bleu1 = bleu(cand, {ref}, 1).score;
      e.bleu4 = bleu(cand, {ref}, 4).score;
      e.rougeL = rouge_l(cand, ref).score;
      e.meteor = meteor_like(cand, ref);
      e.exact = exact_match(e.prediction, e.reference);
      entries.push_back(std::move(e));
      cider_corpus.push_back({cand, {ref}});
    }
  }
  warn_skipped("eval", skipped, "missing embedding data");

  CiderResult cid;
  const bool cider_defined = cider_corpus.size() >= 2;
  if (cider_defined) cid = cider(cider_corpus);

  json report;
  report["version"] = 1;
  report["split"] = split == EvalSplit::train ? "train" : "eval";
  report["items"] = entries.size();
  report["skipped_records"] = skipped;

  {
    std::vector<double> b1, b4, rl, mt, ex;
    for (const EvalEntry& e : entries) {
      b1.push_back(e.bleu1);
      b4.push_back(e.bleu4);
      rl.push_back(e.rougeL);
      mt.push_back(e.meteor);
      ex.push_back(e.exact ? 1.0 : 0.0);
    }
    json agg;
    agg["bleu1"] = entries.empty() ? json() : json(mean_of(b1));
    agg["bleu4"] = entries.empty() ? json() : json(mean_of(b4));
    agg["rougeL"] = entries.empty() ? json() : json(mean_of(rl));
    agg["meteor"] = entries.empty() ? json() : json(mean_of(mt));
    agg["cider"] = cider_defined ? json(cid.mean) : json();
    agg["exact_match"] = entries.empty() ? json() : json(mean_of(ex));
    report["text_metrics"] = agg;
  }

  {
    json per = json::array();
    for (std::size_t k = 0; k < entries.size(); ++k) {
      const EvalEntry& e = entries[k];
      json row;
      row["id"] = e.id;
      row["question"] = e.question;
      row["prediction"] = e.prediction;
      row["reference"] = e.reference;
      row["bleu1"] = e.bleu1;
      row["bleu4"] = e.bleu4;
      row["rougeL"] = e.rougeL;
      row["meteor"] = e.meteor;
      row["cider"] = cider_defined ? json(cid.per_candidate[k]) : json();
      row["exact_match"] = e.exact;
      per.push_back(std::move(row));
    }
    report["per_item"] = std::move(per);
  }

  if (ret_items.size() >= 2) {
    RetrievalIndex<F> index(s.plp, ret_items, Tokenizer::kCls);
    const std::size_t k_rank = std::min(cfg.eval.rerank_k, index.size());
    std::vector<std::string> gold;
    std::vector<std::vector<std::string>> p2t, t2p;
    for (std::size_t k = 0; k < ret_items.size(); ++k) {
      gold.push_back(ret_items[k].id);
      p2t.push_back(retrieve(s.plp, index, ret_items[k], RetrievalDirection::protein_to_text,
                             k_rank, Tokenizer::kCls));
      t2p.push_back(retrieve(s.plp, index, ret_items[k], RetrievalDirection::text_to_protein,
                             k_rank, Tokenizer::kCls));
    }
    RetrievalScores sp = retrieval_metrics(p2t, gold, cfg.eval.recall_k);
    RetrievalScores st = retrieval_metrics(t2p, gold, cfg.eval.recall_k);
    report["retrieval"] = {{"items", ret_items.size()},
                           {"recall_k", cfg.eval.recall_k},
                           {"protein_to_text",
                            {{"acc1", sp.acc1}, {"recall_at_k", sp.recall_at_k}}},
                           {"text_to_protein",
                            {{"acc1", st.acc1}, {"recall_at_k", st.recall_at_k}}}};
  } else {
    report["retrieval"] = json();
  }

  if (align_vecs.size() >= 2) {
    // Cross-level check: the gated block should point at its own projected
    // tertiary block.
    std::size_t hits1 = 0, hitsk = 0;
    for (std::size_t a = 0; a < align_vecs.size(); ++a) {
      std::vector<std::pair<double, std::size_t>> scored;
      for (std::size_t t = 0; t < ter_vecs.size(); ++t) {
        const Tensor<F> dot = matmul(align_vecs[a], transpose(ter_vecs[t]));
        scored.emplace_back(-static_cast<double>(dot.item()), t);
      }
      std::sort(scored.begin(), scored.end());
      if (scored.front().second == a) ++hits1;
      const std::size_t depth = std::min(cfg.eval.recall_k, scored.size());
      for (std::size_t r = 0; r < depth; ++r)
        if (scored[r].second == a) {
          ++hitsk;
          break;
        }
    }
    const double n = static_cast<double>(align_vecs.size());
    report["alignment"] = {{"items", align_vecs.size()},
                           {"recall_k", cfg.eval.recall_k},
                           {"acc1", static_cast<double>(hits1) / n},
                           {"recall_at_k", static_cast<double>(hitsk) / n}};
  } else {
    report["alignment"] = json();
  }

  const std::string out = artifact_path(cfg, artifact::kEvalReport);
  ioutil::write_text_file(out, report.dump(2) + "\n");
  return out;
}

std::string chat_answer(const RunConfig& cfg, const std::string& checkpoint,
                        const std::string& protein_path, const std::string& question,
                        char pdb_chain) {
  validate_run_config(cfg, false);
  ChatSession s = make_session(cfg, checkpoint);
  std::string id;
  MultiLevelEmbeddings<F> emb = load_protein_file(cfg, protein_path, pdb_chain, id);
  ProteinContext ctx = context_from_embeddings(s, id, emb);
  return answer_question(cfg, s, ctx, question, 0);
}

int chat_repl(const RunConfig& cfg, const std::string& checkpoint, std::istream& in,
              std::ostream& out, std::ostream& prompt_out, const std::string& protein_path,
              char pdb_chain) {
  validate_run_config(cfg, false);
  ChatSession s = make_session(cfg, checkpoint);

  std::optional<ProteinContext> ctx;
  auto try_load = [&](const std::string& path) {
    try {
      std::string id;
      MultiLevelEmbeddings<F> emb = load_protein_file(cfg, path, pdb_chain, id);
      ctx = context_from_embeddings(s, id, emb);
      prompt_out << "loaded protein " << id << "\n";
    } catch (const Error& e) {
      prompt_out << "cannot load protein: " << e.what() << "\n";
    }
  };

  if (!protein_path.empty()) try_load(protein_path);
  std::string line;
  while (!ctx) {
    prompt_out << "protein> " << std::flush;
    if (!std::getline(in, line)) return 0;
    const std::string path = trimmed_line(line);
    if (path.empty()) continue;
    try_load(path);
  }

  std::uint64_t sample_stream = 0;
  while (true) {
    prompt_out << "question> " << std::flush;
    if (!std::getline(in, line)) return 0;
    const std::string q = trimmed_line(line);
    if (q.empty()) continue;
    out << answer_question(cfg, s, *ctx, q, sample_stream++) << "\n" << std::flush;
  }
}

}  // namespace protlang
