#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "protlang/config.hpp"
#include "protlang/corpus.hpp"
#include "protlang/encoders.hpp"
#include "protlang/errors.hpp"
#include "protlang/metrics.hpp"
#include "protlang/pipeline.hpp"
#include "protlang/retrieval.hpp"

namespace py = pybind11;
using namespace protlang;

namespace {

py::array_t<float> to_numpy(const Tensor<float>& t) {
  py::array_t<float> arr({t.rows(), t.cols()});
  std::memcpy(arr.mutable_data(), t.data().data(), t.numel() * sizeof(float));
  return arr;
}

EvalSplit split_from_string(const std::string& name) {
  if (name == "train") return EvalSplit::train;
  if (name == "eval") return EvalSplit::eval;
  throw ContractError("split must be 'train' or 'eval', got '" + name + "'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Protein-language pipeline: parsers, encoders, metrics, training stages";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<ParseError>(m, "ParseError", base);
  py::register_exception<FormatError>(m, "FormatError", base);
  py::register_exception<NotFoundError>(m, "NotFoundError", base);
  py::register_exception<ContractError>(m, "ContractError", base);
  py::register_exception<NumericError>(m, "NumericError", base);
  py::register_exception<ShapeError>(m, "ShapeError", base);
  py::register_exception<IoError>(m, "IoError", base);

  // --- corpus ---------------------------------------------------------------
  py::class_<AminoAcidSequence>(m, "AminoAcidSequence")
      .def(py::init<>())
      .def(py::init([](std::string id, std::string residues) {
             return AminoAcidSequence{std::move(id), std::move(residues)};
           }),
           py::arg("id"), py::arg("residues"))
      .def_readwrite("id", &AminoAcidSequence::id)
      .def_readwrite("residues", &AminoAcidSequence::residues)
      .def("__repr__", [](const AminoAcidSequence& s) {
        return "AminoAcidSequence(id='" + s.id + "', len=" + std::to_string(s.residues.size()) +
               ")";
      });

  py::class_<QaPair>(m, "QaPair")
      .def(py::init<>())
      .def(py::init([](std::string q, std::string a) {
             return QaPair{std::move(q), std::move(a)};
           }),
           py::arg("question"), py::arg("answer"))
      .def_readwrite("question", &QaPair::question)
      .def_readwrite("answer", &QaPair::answer);

  py::class_<ProteinRecord>(m, "ProteinRecord")
      .def(py::init<>())
      .def_readwrite("id", &ProteinRecord::id)
      .def_readwrite("sequence", &ProteinRecord::sequence)
      .def_readwrite("ss8", &ProteinRecord::ss8)
      .def_readwrite("description", &ProteinRecord::description)
      .def_readwrite("qa", &ProteinRecord::qa);

  m.def("parse_fasta", &parse_fasta, py::arg("text"));
  m.def("serialize_fasta", &serialize_fasta, py::arg("sequences"));
  m.def("parse_pdb_chain", &parse_pdb_chain, py::arg("text"), py::arg("chain") = 'A',
        py::arg("name") = "");
  m.def("parse_ss8", &parse_ss8, py::arg("text"));
  m.def("parse_instruction_records", &parse_instruction_records, py::arg("text"));
  m.def("serialize_instruction_records", &serialize_instruction_records, py::arg("records"));

  py::class_<Tokenizer>(m, "Tokenizer")
      .def_readonly_static("PAD", &Tokenizer::kPad)
      .def_readonly_static("CLS", &Tokenizer::kCls)
      .def_readonly_static("DEC", &Tokenizer::kDec)
      .def_readonly_static("SEP", &Tokenizer::kSep)
      .def_readonly_static("BOS", &Tokenizer::kBos)
      .def_readonly_static("EOS", &Tokenizer::kEos)
      .def_readonly_static("UNK", &Tokenizer::kUnk)
      .def_readonly_static("PROTEIN_OPEN", &Tokenizer::kProteinOpen)
      .def_readonly_static("PROTEIN_CLOSE", &Tokenizer::kProteinClose)
      .def_static("normalize", &Tokenizer::normalize, py::arg("text"))
      .def_static("build", &Tokenizer::build, py::arg("texts"), py::arg("max_vocab"))
      .def_static("load", &Tokenizer::load, py::arg("path"))
      .def("encode", &Tokenizer::encode, py::arg("text"))
      .def("decode",
           [](const Tokenizer& t, const std::vector<int>& ids) {
             return t.decode(std::span<const int>(ids));
           },
           py::arg("ids"))
      .def("vocab_size", &Tokenizer::vocab_size)
      .def("token", &Tokenizer::token, py::arg("id"))
      .def("id_of", &Tokenizer::id_of, py::arg("token"))
      .def("save", &Tokenizer::save, py::arg("path"));

  // --- encoders ---------------------------------------------------------
  py::class_<EncoderSpec>(m, "EncoderSpec")
      .def(py::init<>())
      .def_property(
          "kind",
          [](const EncoderSpec& s) {
            return s.kind == EncoderSpec::Kind::stub ? "stub" : "file";
          },
          [](EncoderSpec& s, const std::string& kind) {
            if (kind == "stub")
              s.kind = EncoderSpec::Kind::stub;
            else if (kind == "file")
              s.kind = EncoderSpec::Kind::file;
            else
              throw ContractError("encoder kind must be 'stub' or 'file'");
          })
      .def_readwrite("seed", &EncoderSpec::seed)
      .def_readwrite("path", &EncoderSpec::path)
      .def_readwrite("c_seq", &EncoderSpec::c_seq)
      .def_readwrite("c_ter", &EncoderSpec::c_ter);

  m.def(
      "encode",
      [](const AminoAcidSequence& seq, const EncoderSpec& spec) {
        MultiLevelEmbeddings<float> emb = encode<float>(seq, spec);
        py::dict out;
        out["e_seq"] = to_numpy(emb.e_seq);
        out["e_sec"] = to_numpy(emb.e_sec);
        out["e_ter"] = to_numpy(emb.e_ter);
        return out;
      },
      py::arg("sequence"), py::arg("spec"),
      "Per-residue embeddings at the sequence, secondary, and tertiary levels");
  m.def("trim_sequence", &trim_sequence, py::arg("sequence"), py::arg("max_len"),
        py::arg("seed"));

  // --- metrics ------------------------------------------------------------
  m.def("metric_tokens", &metric_tokens, py::arg("text"));
  m.def("lcs_length", &lcs_length, py::arg("a"), py::arg("b"));
  m.def("exact_match", &exact_match, py::arg("candidate"), py::arg("reference"));
  m.def(
      "bleu",
      [](const std::vector<std::string>& cand,
         const std::vector<std::vector<std::string>>& refs, std::size_t max_n) {
        BleuResult r = bleu(cand, refs, max_n);
        return py::make_tuple(r.score, r.degenerate);
      },
      py::arg("candidate"), py::arg("references"), py::arg("max_n") = 4,
      "Returns (score, degenerate)");
  m.def(
      "rouge_l",
      [](const std::vector<std::string>& cand, const std::vector<std::string>& ref,
         double beta) {
        RougeResult r = rouge_l(cand, ref, beta);
        return py::make_tuple(r.score, r.degenerate);
      },
      py::arg("candidate"), py::arg("reference"), py::arg("beta") = 1.2,
      "Returns (score, degenerate)");
  m.def("meteor_like", &meteor_like, py::arg("candidate"), py::arg("reference"),
        py::arg("alpha") = 0.9, py::arg("gamma") = 0.5, py::arg("theta") = 3.0);
  m.def(
      "cider",
      [](const std::vector<std::pair<std::vector<std::string>,
                                     std::vector<std::vector<std::string>>>>& corpus,
         std::size_t max_n) {
        std::vector<ScoredItem> items;
        for (const auto& [cand, refs] : corpus) items.push_back({cand, refs});
        CiderResult r = cider(items, max_n);
        return py::make_tuple(r.per_candidate, r.mean);
      },
      py::arg("corpus"), py::arg("max_n") = 4,
      "corpus: list of (candidate_tokens, [reference_tokens, ...]); returns "
      "(per_candidate, mean)");
  m.def(
      "retrieval_metrics",
      [](const std::vector<std::vector<std::string>>& rankings,
         const std::vector<std::string>& gold, std::size_t k) {
        RetrievalScores s = retrieval_metrics(rankings, gold, k);
        return py::make_tuple(s.acc1, s.recall_at_k);
      },
      py::arg("rankings"), py::arg("gold"), py::arg("k") = 20,
      "Returns (acc1, recall_at_k)");

  // --- run configuration ---------------------------------------------------
  py::class_<RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def_property_readonly("out_dir", [](const RunConfig& c) { return c.out_dir; })
      .def("to_json", &serialize_run_config)
      .def("__repr__", [](const RunConfig& c) { return "RunConfig(out_dir='" + c.out_dir + "')"; });
  m.def(
      "config_from_json",
      [](const std::string& text, const std::vector<std::string>& overrides) {
        return parse_run_config_with_overrides(text, overrides);
      },
      py::arg("text"), py::arg("overrides") = std::vector<std::string>{},
      "Overrides are 'dotted.key=value' strings applied before decoding");
  m.def("load_run_config", &load_run_config, py::arg("path"));
  m.def("save_run_config", &save_run_config, py::arg("config"), py::arg("path"));
  m.def("validate_run_config", &validate_run_config, py::arg("config"),
        py::arg("require_dataset") = false);
  m.def("artifact_path",
        [](const RunConfig& cfg, const std::string& name) {
          return artifact_path(cfg, name.c_str());
        },
        py::arg("config"), py::arg("name"));

  // --- pipeline stages -------------------------------------------------
  py::class_<StageArtifacts>(m, "StageArtifacts")
      .def_readonly("checkpoint", &StageArtifacts::checkpoint)
      .def_readonly("log", &StageArtifacts::log)
      .def_readonly("steps_run", &StageArtifacts::steps_run)
      .def_readonly("skipped_records", &StageArtifacts::skipped_records)
      .def("__repr__", [](const StageArtifacts& a) {
        return "StageArtifacts(checkpoint='" + a.checkpoint +
               "', steps_run=" + std::to_string(a.steps_run) + ")";
      });

  m.def("run_precompute", &run_precompute, py::arg("config"), py::arg("inputs"),
        py::arg("pdb_chain") = 'A', py::call_guard<py::gil_scoped_release>());
  m.def("run_pretrain", &run_pretrain, py::arg("config"), py::arg("resume_from") = "",
        py::call_guard<py::gil_scoped_release>());
  m.def("run_align", &run_align, py::arg("config"), py::arg("plp_checkpoint"),
        py::arg("resume_from") = "", py::call_guard<py::gil_scoped_release>());
  m.def("run_tune", &run_tune, py::arg("config"), py::arg("align_checkpoint"),
        py::arg("resume_from") = "", py::call_guard<py::gil_scoped_release>());
  m.def(
      "run_eval",
      [](const RunConfig& cfg, const std::string& checkpoint, const std::string& split) {
        EvalSplit s = split_from_string(split);
        py::gil_scoped_release release;
        return run_eval(cfg, checkpoint, s);
      },
      py::arg("config"), py::arg("checkpoint"), py::arg("split") = "eval",
      "Writes the evaluation report and returns its path");
  m.def("chat_answer", &chat_answer, py::arg("config"), py::arg("checkpoint"),
        py::arg("protein_path"), py::arg("question"), py::arg("pdb_chain") = 'A',
        py::call_guard<py::gil_scoped_release>());
}
