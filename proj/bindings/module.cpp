#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "refforge/attack_engine.hpp"
#include "refforge/corpus.hpp"
#include "refforge/errors.hpp"
#include "refforge/eval_harness.hpp"
#include "refforge/injector.hpp"
#include "refforge/model_oracle.hpp"
#include "refforge/prompt_space.hpp"
#include "refforge/report_render.hpp"
#include "refforge/tiny_lm.hpp"
#include "refforge/version.hpp"
#include "refforge/vuln_detector.hpp"

namespace py = pybind11;
using namespace refforge;

namespace {

std::vector<std::vector<double>> gradient_rows(const GradientMatrix& g) {
  std::vector<std::vector<double>> rows(g.rows);
  for (int r = 0; r < g.rows; ++r) {
    rows[r].assign(g.row(r), g.row(r) + g.cols);
  }
  return rows;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "refforge core: gradient-guided attack sequences against reference-following "
            "code models";
  m.attr("__version__") = kVersion;

  py::register_exception<Error>(m, "RefforgeError");

  // ---- corpus ----
  py::enum_<Language>(m, "Language")
      .value("python", Language::python)
      .value("java", Language::java)
      .value("cpp", Language::cpp)
      .value("php", Language::php);
  py::enum_<VulnClassName>(m, "VulnClassName")
      .value("ArrayViolation", VulnClassName::ArrayViolation)
      .value("BufferOverflow", VulnClassName::BufferOverflow)
      .value("IncorrectVariable", VulnClassName::IncorrectVariable)
      .value("InvalidValidation", VulnClassName::InvalidValidation)
      .value("InfiniteLoop", VulnClassName::InfiniteLoop);

  py::class_<VulnClass>(m, "VulnClass")
      .def(py::init<>())
      .def_readwrite("name", &VulnClass::name)
      .def_readwrite("cwe_ids", &VulnClass::cwe_ids);
  py::class_<VulnEdit>(m, "VulnEdit")
      .def(py::init<>())
      .def_readwrite("original", &VulnEdit::original)
      .def_readwrite("replacement", &VulnEdit::replacement)
      .def_readwrite("description", &VulnEdit::description);
  py::class_<ProblemRecord>(m, "ProblemRecord")
      .def(py::init<>())
      .def_readwrite("id", &ProblemRecord::id)
      .def_readwrite("language", &ProblemRecord::language)
      .def_readwrite("question", &ProblemRecord::question)
      .def_readwrite("correct_code", &ProblemRecord::correct_code)
      .def_readwrite("explanation", &ProblemRecord::explanation)
      .def_readwrite("vuln_class", &ProblemRecord::vuln_class)
      .def_readwrite("edit", &ProblemRecord::edit)
      .def_readwrite("anchor_line", &ProblemRecord::anchor_line);
  py::class_<Corpus>(m, "Corpus")
      .def(py::init<>())
      .def_readwrite("records", &Corpus::records);
  py::class_<Violation>(m, "Violation")
      .def_readonly("record_id", &Violation::record_id)
      .def_readonly("rule", &Violation::rule)
      .def_readonly("detail", &Violation::detail)
      .def("__repr__",
           [](const Violation& v) { return "Violation(" + v.rule + ": " + v.detail + ")"; });

  m.def("load_corpus", &load_corpus, py::arg("path"));
  m.def("save_corpus", &save_corpus, py::arg("corpus"), py::arg("path"));
  m.def("corpus_from_json_text", &corpus_from_json_text);
  m.def("corpus_to_json_text", &corpus_to_json_text);
  m.def("validate_record", &validate_record, py::arg("record"));
  m.def("apply_edit", &apply_edit, py::arg("correct_code"), py::arg("edit"));

  // ---- prompt space ----
  py::class_<PromptTemplate>(m, "PromptTemplate")
      .def(py::init<>())
      .def(py::init([](std::string id, std::string body) {
             return PromptTemplate{std::move(id), std::move(body)};
           }),
           py::arg("id"), py::arg("body"))
      .def_readwrite("id", &PromptTemplate::id)
      .def_readwrite("body", &PromptTemplate::body);
  py::class_<PromptSpace>(m, "PromptSpace")
      .def(py::init<>())
      .def_readwrite("templates", &PromptSpace::templates)
      .def_readwrite("instructions", &PromptSpace::instructions)
      .def_readwrite("queries", &PromptSpace::queries);
  py::class_<ChoiceTuple>(m, "ChoiceTuple")
      .def_readonly("template_id", &ChoiceTuple::template_id)
      .def_readonly("template_index", &ChoiceTuple::template_index)
      .def_readonly("instruction_index", &ChoiceTuple::instruction_index)
      .def_readonly("query_index", &ChoiceTuple::query_index);
  py::class_<AssembledInput>(m, "AssembledInput")
      .def_readonly("text", &AssembledInput::text)
      .def_readonly("choice", &AssembledInput::choice)
      .def_readonly("reference_used", &AssembledInput::reference_used)
      .def_readonly("reference_offset", &AssembledInput::reference_offset);

  py::class_<Rng>(m, "Rng").def(py::init<uint64_t>(), py::arg("seed"));

  m.def("load_space", &load_space, py::arg("path"));
  m.def("save_space", &save_space, py::arg("space"), py::arg("path"));
  m.def("space_from_json_text", &space_from_json_text);
  m.def("space_to_json_text", &space_to_json_text);
  m.def("template_violations", &template_violations, py::arg("template"));
  m.def("space_violations", &space_violations, py::arg("space"));
  m.def("assemble", &assemble, py::arg("template"), py::arg("instruction"), py::arg("query"),
        py::arg("reference"));
  m.def("assemble_at", &assemble_at, py::arg("space"), py::arg("template_index"),
        py::arg("instruction_index"), py::arg("query_index"), py::arg("reference"));
  m.def("space_size", &space_size);
  m.def("sample_inputs", &sample_inputs, py::arg("space"), py::arg("reference"), py::arg("k"),
        py::arg("rng"));
  m.def("derive_queries", &derive_queries, py::arg("base_query"), py::arg("n"),
        py::arg("generator"));
  m.def("rule_based_rewriter", &rule_based_rewriter, py::arg("base"), py::arg("want"));
  m.def("spaces_disjoint", &spaces_disjoint);

  // ---- injector ----
  py::enum_<InjectStrategy>(m, "InjectStrategy")
      .value("comment", InjectStrategy::comment)
      .value("rename", InjectStrategy::rename);
  py::class_<CommentSyntax>(m, "CommentSyntax")
      .def_readonly("language", &CommentSyntax::language)
      .def_readonly("line_prefix", &CommentSyntax::line_prefix);
  py::class_<CraftedReference>(m, "CraftedReference")
      .def_readonly("text", &CraftedReference::text)
      .def_readonly("strategy", &CraftedReference::strategy)
      .def_readonly("seq_line", &CraftedReference::seq_line)
      .def_readonly("seq_begin", &CraftedReference::seq_begin)
      .def_readonly("seq_end", &CraftedReference::seq_end)
      .def_readonly("seq_text", &CraftedReference::seq_text);
  m.def("comment_syntax_for", &comment_syntax_for, py::arg("language"));
  m.def("insert_comment", &insert_comment, py::arg("code"), py::arg("syntax"),
        py::arg("anchor_line"), py::arg("seq_text"));
  m.def("strip_injected", &strip_injected, py::arg("crafted"));
  m.def("rename_variable", &rename_variable, py::arg("code"), py::arg("language"),
        py::arg("target_identifier"), py::arg("seq_text"));
  m.def("sanitize_identifier", &sanitize_identifier, py::arg("seq_text"));
  m.def("rename_target_identifier", &rename_target_identifier, py::arg("record"));

  // ---- detector ----
  py::class_<CodeBlock>(m, "CodeBlock")
      .def_readonly("text", &CodeBlock::text)
      .def_readonly("begin", &CodeBlock::begin)
      .def_readonly("end", &CodeBlock::end);
  py::enum_<DetectMode>(m, "DetectMode")
      .value("edited_line", DetectMode::edited_line)
      .value("whole_program", DetectMode::whole_program);
  m.def("extract_code", &extract_code, py::arg("response"));
  m.def("normalize_line", &normalize_line, py::arg("line"));
  m.def("contains_tvul", &contains_tvul, py::arg("response"), py::arg("record"),
        py::arg("mode") = DetectMode::edited_line);

  // ---- model oracle ----
  py::enum_<DecodeMode>(m, "DecodeMode")
      .value("greedy", DecodeMode::greedy)
      .value("sample", DecodeMode::sample);
  py::class_<DecodeParams>(m, "DecodeParams")
      .def(py::init<>())
      .def_readwrite("mode", &DecodeParams::mode)
      .def_readwrite("temperature", &DecodeParams::temperature)
      .def_readwrite("seed", &DecodeParams::seed)
      .def_readwrite("max_new_tokens", &DecodeParams::max_new_tokens);
  py::class_<TrainParams>(m, "TrainParams")
      .def(py::init<>())
      .def_readwrite("learning_rate", &TrainParams::learning_rate)
      .def_readwrite("epochs", &TrainParams::epochs)
      .def_readwrite("batch_size", &TrainParams::batch_size);
  py::class_<TinyLMConfig>(m, "TinyLMConfig")
      .def(py::init<>())
      .def_readwrite("vocab", &TinyLMConfig::vocab)
      .def_readwrite("d_model", &TinyLMConfig::d_model)
      .def_readwrite("n_layers", &TinyLMConfig::n_layers)
      .def_readwrite("n_heads", &TinyLMConfig::n_heads)
      .def_readwrite("context", &TinyLMConfig::context)
      .def_readwrite("param_seed", &TinyLMConfig::param_seed)
      .def_readwrite("training", &TinyLMConfig::training);
  py::class_<TrainReport>(m, "TrainReport")
      .def_readonly("initial_loss", &TrainReport::initial_loss)
      .def_readonly("final_loss", &TrainReport::final_loss)
      .def_readonly("epoch_losses", &TrainReport::epoch_losses);
  py::class_<TinyLM>(m, "TinyLM")
      .def(py::init<const TinyLMConfig&>(), py::arg("config"))
      .def("vocab_size", &TinyLM::vocab_size)
      .def("context_limit", &TinyLM::context_limit)
      .def("tokenize", [](const TinyLM& lm, const std::string& s) { return lm.tokenize(s); })
      .def("detokenize", &TinyLM::detokenize)
      .def("next_logits", &TinyLM::next_logits)
      .def("continuation_loss", &TinyLM::continuation_loss, py::arg("prefix"), py::arg("target"))
      .def(
          "onehot_gradient",
          [](const TinyLM& lm, const TokenSeq& prefix, const TokenSeq& target,
             const std::vector<int>& positions) {
            return gradient_rows(lm.onehot_gradient(prefix, target, positions));
          },
          py::arg("prefix"), py::arg("target"), py::arg("positions"))
      .def("generate", &TinyLM::generate, py::arg("prefix"), py::arg("params"))
      .def("train", &TinyLM::train, py::arg("pairs"))
      .def("save", &TinyLM::save, py::arg("path"))
      .def_static("load", &TinyLM::load, py::arg("path"));
  m.def("train_tiny", [](const TinyLMConfig& config,
                         const std::vector<std::pair<std::string, std::string>>& pairs) {
    TrainReport report;
    TinyLM model = train_tiny(config, pairs, &report);
    return py::make_tuple(std::move(model), report);
  });
  m.def("byte_tokenize", [](const std::string& s) { return byte_tokenize(s); });
  m.def("byte_detokenize", &byte_detokenize);
  m.def("encode_prompt", [](const std::string& s) { return encode_prompt(s); });
  m.def("encode_completion", [](const std::string& s) { return encode_completion(s); });

  // ---- attack engine ----
  py::class_<AttackParams>(m, "AttackParams")
      .def(py::init<>())
      .def_readwrite("max_step", &AttackParams::max_step)
      .def_readwrite("k", &AttackParams::k)
      .def_readwrite("m", &AttackParams::m)
      .def_readwrite("top_k", &AttackParams::top_k)
      .def_readwrite("seq_len", &AttackParams::seq_len)
      .def_readwrite("success_trials", &AttackParams::success_trials)
      .def_readwrite("seed", &AttackParams::seed)
      .def_readwrite("decode", &AttackParams::decode)
      .def_readwrite("strategy", &AttackParams::strategy)
      .def_readwrite("shared_budget", &AttackParams::shared_budget);
  py::class_<AttackSequence>(m, "AttackSequence")
      .def(py::init<>())
      .def(py::init([](TokenSeq tokens) { return AttackSequence{std::move(tokens)}; }),
           py::arg("tokens"))
      .def_readwrite("tokens", &AttackSequence::tokens);
  py::class_<IterationRecord>(m, "IterationRecord")
      .def_readonly("phase", &IterationRecord::phase)
      .def_readonly("iteration", &IterationRecord::iteration)
      .def_readonly("loss", &IterationRecord::loss)
      .def_readonly("success", &IterationRecord::success);
  py::class_<AttackTrace>(m, "AttackTrace")
      .def_readonly("iterations", &AttackTrace::iterations)
      .def_readonly("iterations_used", &AttackTrace::iterations_used)
      .def_readonly("wall_seconds", &AttackTrace::wall_seconds)
      .def_readonly("success", &AttackTrace::success);
  py::class_<PhaseOutcome>(m, "PhaseOutcome")
      .def_readonly("seq", &PhaseOutcome::seq)
      .def_readonly("trace", &PhaseOutcome::trace);
  py::class_<AttackOutcome>(m, "AttackOutcome")
      .def_readonly("seq", &AttackOutcome::seq)
      .def_readonly("trace", &AttackOutcome::trace)
      .def_readonly("success", &AttackOutcome::success)
      .def_readonly("iterations_total", &AttackOutcome::iterations_total);

  m.def("init_sequence", &init_sequence, py::arg("edit"), py::arg("params"), py::arg("rng"));
  m.def("attack_target", &attack_target, py::arg("record"), py::arg("vocab"));
  m.def(
      "phase1",
      [](const TinyLM& model, const PromptSpace& space, const ProblemRecord& record,
         const AttackParams& params) { return phase1(model, space, record, params); },
      py::arg("model"), py::arg("space"), py::arg("record"), py::arg("params"));
  m.def(
      "run_attack",
      [](const TinyLM& model, const PromptSpace& space, const ProblemRecord& record,
         const AttackParams& params) { return run_attack(model, space, record, params); },
      py::arg("model"), py::arg("space"), py::arg("record"), py::arg("params"));

  // ---- eval harness ----
  py::class_<RecordResult>(m, "RecordResult")
      .def_readonly("id", &RecordResult::id)
      .def_readonly("vuln_class", &RecordResult::vuln_class)
      .def_readonly("success", &RecordResult::success)
      .def_readonly("iterations", &RecordResult::iterations)
      .def_readonly("input_tokens", &RecordResult::input_tokens)
      .def_readonly("res_tokens", &RecordResult::res_tokens)
      .def_readonly("seq_tokens", &RecordResult::seq_tokens)
      .def_readonly("seq_text", &RecordResult::seq_text)
      .def_readonly("final_seq", &RecordResult::final_seq)
      .def_readonly("error", &RecordResult::error);
  py::class_<SuiteAggregates>(m, "SuiteAggregates")
      .def_readonly("records", &SuiteAggregates::records)
      .def_readonly("asr_defined", &SuiteAggregates::asr_defined)
      .def_readonly("asr", &SuiteAggregates::asr)
      .def_readonly("asr_by_class", &SuiteAggregates::asr_by_class)
      .def_readonly("mean_iterations", &SuiteAggregates::mean_iterations)
      .def_readonly("mean_input", &SuiteAggregates::mean_input)
      .def_readonly("mean_res", &SuiteAggregates::mean_res)
      .def_readonly("mean_seq", &SuiteAggregates::mean_seq);
  py::class_<AttackReport>(m, "AttackReport")
      .def_readonly("rows", &AttackReport::rows)
      .def("aggregates", &AttackReport::aggregates);
  py::class_<TransferRow>(m, "TransferRow")
      .def_readonly("id", &TransferRow::id)
      .def_readonly("passes", &TransferRow::passes);
  py::class_<TransferReport>(m, "TransferReport")
      .def_readonly("n", &TransferReport::n)
      .def_readonly("rows", &TransferReport::rows)
      .def("fraction_at_least", &TransferReport::fraction_at_least);
  py::class_<Page>(m, "Page")
      .def(py::init([](std::string title, std::string body) {
             return Page{std::move(title), std::move(body)};
           }),
           py::arg("title"), py::arg("body"))
      .def_readwrite("title", &Page::title)
      .def_readwrite("body", &Page::body);
  py::class_<SimulationOutcome>(m, "SimulationOutcome")
      .def_readonly("response", &SimulationOutcome::response)
      .def_readonly("page_index", &SimulationOutcome::page_index)
      .def_readonly("page_title", &SimulationOutcome::page_title)
      .def_readonly("choice", &SimulationOutcome::choice)
      .def_readonly("input_text", &SimulationOutcome::input_text);

  m.def(
      "run_suite",
      [](const Corpus& corpus, const TinyLM& model, const PromptSpace& space,
         const AttackParams& params, int workers) {
        return run_suite(corpus, model, space, params, workers);
      },
      py::arg("corpus"), py::arg("model"), py::arg("space"), py::arg("params"),
      py::arg("workers") = 1);
  m.def(
      "transfer_test",
      [](const TinyLM& model, const AttackSequence& seq, const ProblemRecord& record,
         const PromptSpace& holdout, int n, uint64_t seed) {
        return transfer_test(model, seq, record, holdout, n, seed);
      },
      py::arg("model"), py::arg("seq"), py::arg("record"), py::arg("holdout"), py::arg("n"),
      py::arg("seed"));
  m.def(
      "simulate_assistant",
      [](const std::string& query, const std::vector<Page>& pages, const TinyLM& model,
         const PromptSpace& space, uint64_t seed, const DecodeParams& decode) {
        return simulate_assistant(query, pages, model, space, seed, decode);
      },
      py::arg("query"), py::arg("pages"), py::arg("model"), py::arg("space"), py::arg("seed"),
      py::arg("decode"));
  m.def("load_pages", &load_pages, py::arg("path"));
  m.def("report_to_json_text", &report_to_json_text);
  m.def("transfer_to_json_text", &transfer_to_json_text);
  m.def("render_mean_2dp", &render_mean_2dp, py::arg("values"));
  m.def("render_ratio_percent", &render_ratio_percent, py::arg("numerators"),
        py::arg("denominators"));
  m.def("render_overview_table", &render_overview_table);
  m.def("render_transfer_table", &render_transfer_table);
}
