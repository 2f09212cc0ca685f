#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "protlang/config.hpp"
#include "protlang/errors.hpp"

using namespace protlang;

TEST_CASE("empty config yields the documented defaults") {
  RunConfig cfg = parse_run_config("{}");
  CHECK(cfg.version == 1);
  CHECK(cfg.seed == 7);
  CHECK(cfg.out_dir == "run");
  CHECK(cfg.optim.adam.beta1 == doctest::Approx(0.9));
  CHECK(cfg.optim.adam.beta2 == doctest::Approx(0.98));
  CHECK(cfg.optim.adam.weight_decay == doctest::Approx(0.05));
  CHECK(cfg.optim.peak_lr == doctest::Approx(1e-4));
  CHECK(cfg.optim.min_lr == doctest::Approx(8e-5));
  CHECK(cfg.optim.warmup_steps == 5000);
  CHECK(cfg.optim.batch_size == 64);
  CHECK(cfg.data.trim_max_len == 3000);
  CHECK(cfg.data.max_vocab == 512);
  CHECK(cfg.plp.n_queries == 32);
  CHECK(cfg.plp.ptc_temperature == doctest::Approx(0.07));
  CHECK(cfg.align.temperature == doctest::Approx(0.8));
  CHECK(cfg.align.negatives == 128);
  CHECK(cfg.align.conv_k == 5);
  CHECK(cfg.tune.train_decoder == false);
  CHECK(cfg.eval.recall_k == 20);
  CHECK(cfg.encoder.kind == EncoderSpec::Kind::stub);
  CHECK(cfg.encoder.c_seq == 768);
  CHECK(cfg.encoder.c_ter == 512);
}

TEST_CASE("serialize then parse is a fixed point") {
  RunConfig cfg;
  cfg.seed = 99;
  cfg.out_dir = "elsewhere";
  cfg.data.instruction_file = "corpus.jsonl";
  cfg.data.eval_count = 5;
  cfg.encoder.kind = EncoderSpec::Kind::file;
  cfg.encoder.c_seq = 48;
  cfg.plp.n_queries = 6;
  cfg.plp.w_ptm = 0.5;
  cfg.align.negatives = 9;
  cfg.tune.train_decoder = true;
  cfg.optim.peak_lr = 3e-3;
  cfg.eval.top_k = 2;

  const std::string once = serialize_run_config(cfg);
  RunConfig back = parse_run_config(once);
  CHECK(serialize_run_config(back) == once);
  CHECK(back.seed == 99);
  CHECK(back.encoder.kind == EncoderSpec::Kind::file);
  CHECK(back.plp.w_ptm == doctest::Approx(0.5));
  CHECK(back.tune.train_decoder == true);
  // the query transformer consumes whatever width the encoder emits
  CHECK(back.plp.c_seq == 48);
}

TEST_CASE("config rejects unknown keys, bad types, and bad versions") {
  CHECK_THROWS_AS(parse_run_config("{\"optim\": {\"beta3\": 0.9}}"), FormatError);
  CHECK_THROWS_AS(parse_run_config("{\"nonsense\": 1}"), FormatError);
  CHECK_THROWS_AS(parse_run_config("{\"seed\": \"seven\"}"), FormatError);
  CHECK_THROWS_AS(parse_run_config("{\"seed\": -4}"), FormatError);
  CHECK_THROWS_AS(parse_run_config("{\"version\": 2}"), FormatError);
  CHECK_THROWS_AS(parse_run_config("{\"encoder\": {\"kind\": \"quantum\"}}"), FormatError);
  CHECK_THROWS_AS(parse_run_config("{\"plp\": 3}"), FormatError);
  CHECK_THROWS_AS(parse_run_config("not json"), ParseError);

  // the offending key is named
  try {
    parse_run_config("{\"optim\": {\"beta3\": 0.9}}");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("optim.beta3") != std::string::npos);
  }
}

TEST_CASE("overrides rewrite keys before decoding") {
  std::vector<std::string> ov = {"seed=42", "out_dir=other", "optim.peak_lr=0.01",
                                 "tune.train_decoder=true", "align.negatives=9"};
  RunConfig cfg = parse_run_config_with_overrides("{\"seed\": 1}", ov);
  CHECK(cfg.seed == 42);
  CHECK(cfg.out_dir == "other");
  CHECK(cfg.optim.peak_lr == doctest::Approx(0.01));
  CHECK(cfg.tune.train_decoder == true);
  CHECK(cfg.align.negatives == 9);

  CHECK_THROWS_AS(parse_run_config_with_overrides("{}", {"seed"}), UsageError);
  CHECK_THROWS_AS(parse_run_config_with_overrides("{}", {"=1"}), UsageError);
  // overrides still go through the strict decoder
  CHECK_THROWS_AS(parse_run_config_with_overrides("{}", {"optim.beta3=1"}), FormatError);
}

TEST_CASE("validate_run_config guards structural invariants") {
  RunConfig cfg = parse_run_config("{}");
  CHECK_NOTHROW(validate_run_config(cfg, false));

  RunConfig bad = cfg;
  bad.plp.d_model = 10;
  bad.plp.n_heads = 4;
  CHECK_THROWS_AS(validate_run_config(bad, false), ContractError);

  bad = cfg;
  bad.optim.min_lr = 1.0;
  CHECK_THROWS_AS(validate_run_config(bad, false), ContractError);

  bad = cfg;
  bad.align.conv_k = 4;
  CHECK_THROWS_AS(validate_run_config(bad, false), ContractError);

  bad = cfg;
  bad.data.max_vocab = 9;
  CHECK_THROWS_AS(validate_run_config(bad, false), ContractError);

  bad = cfg;
  bad.out_dir.clear();
  CHECK_THROWS_AS(validate_run_config(bad, false), ContractError);

  // dataset existence is only demanded when asked for
  CHECK_THROWS_AS(validate_run_config(cfg, true), ContractError);
  cfg.data.instruction_file = "/nonexistent/corpus.jsonl";
  CHECK_THROWS_AS(validate_run_config(cfg, true), ContractError);
}

TEST_CASE("config files load from disk") {
  auto dir = std::filesystem::temp_directory_path() / "protlang_config_tests";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "run.json").string();
  RunConfig cfg;
  cfg.seed = 123;
  save_run_config(cfg, path);
  RunConfig back = load_run_config(path);
  CHECK(back.seed == 123);
  CHECK_THROWS_AS(load_run_config((dir / "missing.json").string()), IoError);
}
