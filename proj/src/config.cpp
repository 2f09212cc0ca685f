#include "protlang/config.hpp"

#include <filesystem>
#include <initializer_list>
#include <set>
#include <string>

#include <json.hpp>

#include "io_util.hpp"
#include "protlang/errors.hpp"

namespace protlang {
namespace {

using json = nlohmann::ordered_json;

[[noreturn]] void bad_key(const std::string& path, const char* why) {
  throw FormatError("config: key '" + path + "' " + why);
}

void reject_unknown(const json& obj, const std::string& where,
                    std::initializer_list<const char*> allowed) {
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!ok.count(it.key()))
      throw FormatError("config: unknown key '" + (where.empty() ? it.key() : where + "." + it.key()) + "'");
  }
}

std::string join_key(const std::string& where, const char* key) {
  return where.empty() ? key : where + "." + key;
}

template <class T>
void fetch(const json& obj, const std::string& where, const char* key, T& out) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  const std::string path = join_key(where, key);
  if constexpr (std::is_same_v<T, bool>) {
    if (!it->is_boolean()) bad_key(path, "must be a boolean");
    out = it->get<bool>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!it->is_string()) bad_key(path, "must be a string");
    out = it->get<std::string>();
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!it->is_number()) bad_key(path, "must be a number");
    out = it->get<double>();
  } else {
    // unsigned integer fields (sizes, seeds, counts)
    if (!it->is_number_integer() || (it->is_number_integer() && it->get<long long>() < 0))
      bad_key(path, "must be a non-negative integer");
    out = static_cast<T>(it->get<unsigned long long>());
  }
}

const json* section(const json& root, const char* key) {
  auto it = root.find(key);
  if (it == root.end()) return nullptr;
  if (!it->is_object()) bad_key(key, "must be an object");
  return &*it;
}

RunConfig decode(const json& root) {
  if (!root.is_object()) throw FormatError("config: top level must be an object");
  reject_unknown(root, "", {"version", "seed", "out_dir", "data", "encoder", "plp", "pretrain",
                            "align", "decoder", "tune", "optim", "eval"});
  RunConfig cfg;
  {
    long long v = cfg.version;
    auto it = root.find("version");
    if (it != root.end()) {
      if (!it->is_number_integer()) bad_key("version", "must be an integer");
      v = it->get<long long>();
    }
    if (v != 1) throw FormatError("config: unsupported version " + std::to_string(v));
    cfg.version = static_cast<int>(v);
  }
  fetch(root, "", "seed", cfg.seed);
  fetch(root, "", "out_dir", cfg.out_dir);

  if (const json* s = section(root, "data")) {
    reject_unknown(*s, "data", {"instruction_file", "eval_count", "max_vocab", "trim_max_len"});
    fetch(*s, "data", "instruction_file", cfg.data.instruction_file);
    fetch(*s, "data", "eval_count", cfg.data.eval_count);
    fetch(*s, "data", "max_vocab", cfg.data.max_vocab);
    fetch(*s, "data", "trim_max_len", cfg.data.trim_max_len);
  }
  if (const json* s = section(root, "encoder")) {
    reject_unknown(*s, "encoder", {"kind", "seed", "c_seq", "c_ter"});
    std::string kind = cfg.encoder.kind == EncoderSpec::Kind::stub ? "stub" : "file";
    fetch(*s, "encoder", "kind", kind);
    if (kind == "stub") cfg.encoder.kind = EncoderSpec::Kind::stub;
    else if (kind == "file") cfg.encoder.kind = EncoderSpec::Kind::file;
    else bad_key("encoder.kind", "must be \"stub\" or \"file\"");
    fetch(*s, "encoder", "seed", cfg.encoder.seed);
    fetch(*s, "encoder", "c_seq", cfg.encoder.c_seq);
    fetch(*s, "encoder", "c_ter", cfg.encoder.c_ter);
  }
  if (const json* s = section(root, "plp")) {
    reject_unknown(*s, "plp", {"n_queries", "d_model", "n_heads", "n_layers", "ffn_mult",
                               "max_text_len", "cross_attention_every", "ptc_temperature",
                               "w_ptc", "w_ptg", "w_ptm"});
    fetch(*s, "plp", "n_queries", cfg.plp.n_queries);
    fetch(*s, "plp", "d_model", cfg.plp.d_model);
    fetch(*s, "plp", "n_heads", cfg.plp.n_heads);
    fetch(*s, "plp", "n_layers", cfg.plp.n_layers);
    fetch(*s, "plp", "ffn_mult", cfg.plp.ffn_mult);
    fetch(*s, "plp", "max_text_len", cfg.plp.max_text_len);
    fetch(*s, "plp", "cross_attention_every", cfg.plp.cross_attention_every);
    fetch(*s, "plp", "ptc_temperature", cfg.plp.ptc_temperature);
    fetch(*s, "plp", "w_ptc", cfg.plp.w_ptc);
    fetch(*s, "plp", "w_ptg", cfg.plp.w_ptg);
    fetch(*s, "plp", "w_ptm", cfg.plp.w_ptm);
  }
  if (const json* s = section(root, "pretrain")) {
    reject_unknown(*s, "pretrain", {"steps", "checkpoint_every"});
    fetch(*s, "pretrain", "steps", cfg.pretrain.steps);
    fetch(*s, "pretrain", "checkpoint_every", cfg.pretrain.checkpoint_every);
  }
  if (const json* s = section(root, "align")) {
    reject_unknown(*s, "align", {"steps", "checkpoint_every", "conv_k", "temperature", "negatives"});
    fetch(*s, "align", "steps", cfg.align.steps);
    fetch(*s, "align", "checkpoint_every", cfg.align.checkpoint_every);
    fetch(*s, "align", "conv_k", cfg.align.conv_k);
    fetch(*s, "align", "temperature", cfg.align.temperature);
    fetch(*s, "align", "negatives", cfg.align.negatives);
  }
  if (const json* s = section(root, "decoder")) {
    reject_unknown(*s, "decoder", {"d_model", "n_heads", "n_layers", "ffn_mult", "max_seq_len"});
    fetch(*s, "decoder", "d_model", cfg.decoder.d_model);
    fetch(*s, "decoder", "n_heads", cfg.decoder.n_heads);
    fetch(*s, "decoder", "n_layers", cfg.decoder.n_layers);
    fetch(*s, "decoder", "ffn_mult", cfg.decoder.ffn_mult);
    fetch(*s, "decoder", "max_seq_len", cfg.decoder.max_seq_len);
  }
  if (const json* s = section(root, "tune")) {
    reject_unknown(*s, "tune", {"steps", "checkpoint_every", "train_decoder"});
    fetch(*s, "tune", "steps", cfg.tune.steps);
    fetch(*s, "tune", "checkpoint_every", cfg.tune.checkpoint_every);
    fetch(*s, "tune", "train_decoder", cfg.tune.train_decoder);
  }
  if (const json* s = section(root, "optim")) {
    reject_unknown(*s, "optim", {"beta1", "beta2", "eps", "weight_decay", "peak_lr", "min_lr",
                                 "warmup_steps", "batch_size"});
    fetch(*s, "optim", "beta1", cfg.optim.adam.beta1);
    fetch(*s, "optim", "beta2", cfg.optim.adam.beta2);
    fetch(*s, "optim", "eps", cfg.optim.adam.eps);
    fetch(*s, "optim", "weight_decay", cfg.optim.adam.weight_decay);
    fetch(*s, "optim", "peak_lr", cfg.optim.peak_lr);
    fetch(*s, "optim", "min_lr", cfg.optim.min_lr);
    fetch(*s, "optim", "warmup_steps", cfg.optim.warmup_steps);
    fetch(*s, "optim", "batch_size", cfg.optim.batch_size);
  }
  if (const json* s = section(root, "eval")) {
    reject_unknown(*s, "eval", {"recall_k", "rerank_k", "max_new_tokens", "top_k"});
    fetch(*s, "eval", "recall_k", cfg.eval.recall_k);
    fetch(*s, "eval", "rerank_k", cfg.eval.rerank_k);
    fetch(*s, "eval", "max_new_tokens", cfg.eval.max_new_tokens);
    fetch(*s, "eval", "top_k", cfg.eval.top_k);
  }
  cfg.plp.c_seq = cfg.encoder.c_seq;
  return cfg;
}

json parse_json(const std::string& text) {
  json root = json::parse(text, nullptr, false);
  if (root.is_discarded()) throw ParseError("config: not valid JSON");
  return root;
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) { return decode(parse_json(json_text)); }

RunConfig load_run_config(const std::string& path) {
  return parse_run_config(ioutil::read_text_file(path));
}

std::string serialize_run_config(const RunConfig& cfg) {
  json root;
  root["version"] = cfg.version;
  root["seed"] = cfg.seed;
  root["out_dir"] = cfg.out_dir;
  root["data"] = {{"instruction_file", cfg.data.instruction_file},
                  {"eval_count", cfg.data.eval_count},
                  {"max_vocab", cfg.data.max_vocab},
                  {"trim_max_len", cfg.data.trim_max_len}};
  root["encoder"] = {{"kind", cfg.encoder.kind == EncoderSpec::Kind::stub ? "stub" : "file"},
                     {"seed", cfg.encoder.seed},
                     {"c_seq", cfg.encoder.c_seq},
                     {"c_ter", cfg.encoder.c_ter}};
  root["plp"] = {{"n_queries", cfg.plp.n_queries},
                 {"d_model", cfg.plp.d_model},
                 {"n_heads", cfg.plp.n_heads},
                 {"n_layers", cfg.plp.n_layers},
                 {"ffn_mult", cfg.plp.ffn_mult},
                 {"max_text_len", cfg.plp.max_text_len},
                 {"cross_attention_every", cfg.plp.cross_attention_every},
                 {"ptc_temperature", cfg.plp.ptc_temperature},
                 {"w_ptc", cfg.plp.w_ptc},
                 {"w_ptg", cfg.plp.w_ptg},
                 {"w_ptm", cfg.plp.w_ptm}};
  root["pretrain"] = {{"steps", cfg.pretrain.steps},
                      {"checkpoint_every", cfg.pretrain.checkpoint_every}};
  root["align"] = {{"steps", cfg.align.steps},
                   {"checkpoint_every", cfg.align.checkpoint_every},
                   {"conv_k", cfg.align.conv_k},
                   {"temperature", cfg.align.temperature},
                   {"negatives", cfg.align.negatives}};
  root["decoder"] = {{"d_model", cfg.decoder.d_model},
                     {"n_heads", cfg.decoder.n_heads},
                     {"n_layers", cfg.decoder.n_layers},
                     {"ffn_mult", cfg.decoder.ffn_mult},
                     {"max_seq_len", cfg.decoder.max_seq_len}};
  root["tune"] = {{"steps", cfg.tune.steps},
                  {"checkpoint_every", cfg.tune.checkpoint_every},
                  {"train_decoder", cfg.tune.train_decoder}};
  root["optim"] = {{"beta1", cfg.optim.adam.beta1},
                   {"beta2", cfg.optim.adam.beta2},
                   {"eps", cfg.optim.adam.eps},
                   {"weight_decay", cfg.optim.adam.weight_decay},
                   {"peak_lr", cfg.optim.peak_lr},
                   {"min_lr", cfg.optim.min_lr},
                   {"warmup_steps", cfg.optim.warmup_steps},
                   {"batch_size", cfg.optim.batch_size}};
  root["eval"] = {{"recall_k", cfg.eval.recall_k},
                  {"rerank_k", cfg.eval.rerank_k},
                  {"max_new_tokens", cfg.eval.max_new_tokens},
                  {"top_k", cfg.eval.top_k}};
  return root.dump(2) + "\n";
}

void save_run_config(const RunConfig& cfg, const std::string& path) {
  ioutil::write_text_file(path, serialize_run_config(cfg));
}

RunConfig parse_run_config_with_overrides(const std::string& json_text,
                                          const std::vector<std::string>& overrides) {
  json root = parse_json(json_text);
  for (const std::string& ov : overrides) {
    auto eq = ov.find('=');
    if (eq == std::string::npos || eq == 0)
      throw UsageError("override must look like key=value, got '" + ov + "'");
    std::string key = ov.substr(0, eq);
    std::string value = ov.substr(eq + 1);
    std::string pointer = "/" + key;
    for (auto& c : pointer)
      if (c == '.') c = '/';
    json parsed = json::parse(value, nullptr, false);
    if (parsed.is_discarded()) parsed = value;  // bare words become strings
    root[json::json_pointer(pointer)] = parsed;
  }
  return decode(root);
}

void validate_run_config(const RunConfig& cfg, bool require_dataset) {
  auto demand = [](bool ok, const char* what) {
    if (!ok) throw ContractError(std::string("config: ") + what);
  };
  demand(cfg.encoder.c_seq > 0 && cfg.encoder.c_ter > 0, "encoder widths must be positive");
  demand(cfg.plp.n_queries > 0, "plp.n_queries must be positive");
  demand(cfg.plp.d_model > 0 && cfg.plp.n_heads > 0, "plp dims must be positive");
  demand(cfg.plp.d_model % cfg.plp.n_heads == 0, "plp.d_model must divide by plp.n_heads");
  demand(cfg.plp.n_layers > 0 && cfg.plp.ffn_mult > 0, "plp depth must be positive");
  demand(cfg.plp.max_text_len >= 2, "plp.max_text_len must be at least 2");
  demand(cfg.plp.cross_attention_every > 0, "plp.cross_attention_every must be positive");
  demand(cfg.plp.ptc_temperature > 0, "plp.ptc_temperature must be positive");
  demand(cfg.decoder.d_model > 0 && cfg.decoder.n_heads > 0, "decoder dims must be positive");
  demand(cfg.decoder.d_model % cfg.decoder.n_heads == 0,
         "decoder.d_model must divide by decoder.n_heads");
  demand(cfg.decoder.n_layers > 0 && cfg.decoder.ffn_mult > 0, "decoder depth must be positive");
  demand(cfg.decoder.max_seq_len >= 8, "decoder.max_seq_len must be at least 8");
  demand(cfg.align.conv_k % 2 == 1, "align.conv_k must be odd");
  demand(cfg.align.temperature > 0, "align.temperature must be positive");
  demand(cfg.align.negatives > 0, "align.negatives must be positive");
  demand(cfg.optim.peak_lr > 0 && cfg.optim.min_lr >= 0, "learning rates must be positive");
  demand(cfg.optim.min_lr <= cfg.optim.peak_lr, "optim.min_lr must not exceed optim.peak_lr");
  demand(cfg.optim.batch_size > 0, "optim.batch_size must be positive");
  demand(cfg.pretrain.steps > 0 && cfg.align.steps > 0 && cfg.tune.steps > 0,
         "stage step counts must be positive");
  demand(cfg.pretrain.checkpoint_every > 0 && cfg.align.checkpoint_every > 0 &&
             cfg.tune.checkpoint_every > 0,
         "checkpoint_every must be positive");
  demand(cfg.data.max_vocab > Tokenizer::kNumReserved, "data.max_vocab must exceed the reserved ids");
  demand(cfg.data.trim_max_len > 0, "data.trim_max_len must be positive");
  demand(cfg.eval.recall_k > 0 && cfg.eval.rerank_k > 0, "eval depths must be positive");
  demand(cfg.eval.max_new_tokens > 0, "eval.max_new_tokens must be positive");
  demand(!cfg.out_dir.empty(), "out_dir must be set");
  if (require_dataset) {
    demand(!cfg.data.instruction_file.empty(), "data.instruction_file must be set");
    if (!std::filesystem::exists(cfg.data.instruction_file))
      throw ContractError("config: data.instruction_file does not exist: " +
                          cfg.data.instruction_file);
  }
}

}  // namespace protlang
