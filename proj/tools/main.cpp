#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "refforge/attack_engine.hpp"
#include "refforge/corpus.hpp"
#include "refforge/errors.hpp"
#include "refforge/eval_harness.hpp"
#include "refforge/injector.hpp"
#include "refforge/prompt_space.hpp"
#include "refforge/report_render.hpp"
#include "refforge/tiny_lm.hpp"
#include "refforge/version.hpp"
#include "refforge/vuln_detector.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace refforge;

namespace {

struct CommonOpts {
  std::string corpus_path, space_path, model_path, out_path;
  uint64_t seed = 0;
  int workers = 1;
};

struct AttackOverrides {
  AttackParams params;
  std::string decode_mode = "greedy";
  std::string strategy = "comment";

  void add_flags(CLI::App* cmd) {
    cmd->add_option("--max-step", params.max_step, "iteration cap per phase");
    cmd->add_option("--k", params.k, "random assembled inputs per enhancement iteration");
    cmd->add_option("--m", params.m, "mutation candidates per iteration");
    cmd->add_option("--top-k", params.top_k, "replacement pool size per position");
    cmd->add_option("--seq-len", params.seq_len, "attack sequence token length");
    cmd->add_option("--trials", params.success_trials, "generations per success check");
    cmd->add_option("--decode", decode_mode, "greedy|sample")
        ->check(CLI::IsMember({"greedy", "sample"}));
    cmd->add_option("--temperature", params.decode.temperature, "sampling temperature");
    cmd->add_option("--max-new", params.decode.max_new_tokens, "decode token budget");
    cmd->add_option("--strategy", strategy, "comment|rename")
        ->check(CLI::IsMember({"comment", "rename"}));
    cmd->add_flag("--shared-budget", params.shared_budget,
                  "phase 2 runs on phase 1's leftover budget");
  }

  AttackParams resolve(uint64_t seed) {
    params.seed = seed;
    params.decode.mode = decode_mode == "sample" ? DecodeMode::sample : DecodeMode::greedy;
    params.strategy = strategy == "rename" ? InjectStrategy::rename : InjectStrategy::comment;
    return params;
  }

  json to_json() const {
    return {{"max_step", params.max_step},
            {"k", params.k},
            {"m", params.m},
            {"top_k", params.top_k},
            {"seq_len", params.seq_len},
            {"success_trials", params.success_trials},
            {"decode", decode_mode},
            {"temperature", params.decode.temperature},
            {"max_new_tokens", params.decode.max_new_tokens},
            {"strategy", strategy},
            {"shared_budget", params.shared_budget}};
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise("file-missing", "cannot write " + path.string());
  out << text;
}

void write_manifest(const fs::path& path, const std::string& subcommand, uint64_t seed,
                    const json& config) {
  json doc;
  doc["tool"] = "refforge";
  doc["version"] = kVersion;
  doc["subcommand"] = subcommand;
  doc["seed"] = seed;
  doc["config"] = config;
  write_text(path, doc.dump(2) + "\n");
}

fs::path ensure_out_dir(const std::string& out) {
  fs::path dir(out);
  fs::create_directories(dir);
  return dir;
}

TinyLMConfig config_from_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise("file-missing", "cannot open config " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  json doc;
  try {
    doc = json::parse(buf.str());
  } catch (const json::exception& e) {
    raise("malformed-document", std::string("config is not valid JSON: ") + e.what());
  }
  TinyLMConfig c;
  if (doc.contains("vocab")) c.vocab = doc["vocab"].get<int>();
  if (doc.contains("d_model")) c.d_model = doc["d_model"].get<int>();
  if (doc.contains("n_layers")) c.n_layers = doc["n_layers"].get<int>();
  if (doc.contains("n_heads")) c.n_heads = doc["n_heads"].get<int>();
  if (doc.contains("context")) c.context = doc["context"].get<int>();
  if (doc.contains("param_seed")) c.param_seed = doc["param_seed"].get<uint64_t>();
  if (doc.contains("learning_rate")) c.training.learning_rate = doc["learning_rate"].get<double>();
  if (doc.contains("epochs")) c.training.epochs = doc["epochs"].get<int>();
  if (doc.contains("batch_size")) c.training.batch_size = doc["batch_size"].get<int>();
  return c;
}

std::vector<std::pair<std::string, std::string>> pairs_from_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise("file-missing", "cannot open pairs file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  json doc;
  try {
    doc = json::parse(buf.str());
  } catch (const json::exception& e) {
    raise("malformed-document", std::string("pairs file is not valid JSON: ") + e.what());
  }
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& jp : doc) {
    pairs.emplace_back(jp.at("prompt").get<std::string>(), jp.at("completion").get<std::string>());
  }
  return pairs;
}

std::string trace_to_jsonl(const AttackTrace& trace) {
  std::string out;
  for (const auto& it : trace.iterations) {
    json row;
    row["phase"] = it.phase;
    row["iter"] = it.iteration;
    row["loss"] = it.loss;
    row["success"] = it.success;
    out += row.dump() + "\n";
  }
  return out;
}

int cmd_validate(const CommonOpts& opts) {
  const Corpus corpus = load_corpus(opts.corpus_path);
  std::map<std::string, int> by_class;
  for (const auto& r : corpus.records) ++by_class[to_string(r.vuln_class.name)];
  std::cout << "corpus ok: " << corpus.records.size() << " records\n";
  for (const auto& [cls, n] : by_class) std::cout << "  " << cls << ": " << n << "\n";
  return 0;
}

int cmd_train(const CommonOpts& opts, const std::string& pairs_path,
              const std::string& config_path, bool seed_given) {
  TinyLMConfig config = config_path.empty() ? TinyLMConfig{} : config_from_json_file(config_path);
  if (seed_given) config.param_seed = opts.seed;
  const auto pairs = pairs_from_json_file(pairs_path);
  TrainReport report;
  TinyLM model = train_tiny(config, pairs, &report);
  model.save(opts.out_path);
  std::cout << "trained on " << pairs.size() << " pairs: initial loss " << report.initial_loss
            << ", final loss " << report.final_loss << "\n";
  write_manifest(opts.out_path + ".manifest.json", "train-tiny", config.param_seed,
                 {{"pairs", pairs_path},
                  {"config", config_path},
                  {"out", opts.out_path},
                  {"vocab", config.vocab},
                  {"d_model", config.d_model},
                  {"n_layers", config.n_layers},
                  {"n_heads", config.n_heads},
                  {"context", config.context},
                  {"learning_rate", config.training.learning_rate},
                  {"epochs", config.training.epochs},
                  {"batch_size", config.training.batch_size}});
  return 0;
}

int cmd_attack(const CommonOpts& opts, AttackOverrides& over, const std::string& record_id) {
  const Corpus corpus = load_corpus(opts.corpus_path);
  const PromptSpace space = load_space(opts.space_path);
  const TinyLM model = TinyLM::load(opts.model_path);
  const AttackParams params = over.resolve(opts.seed);
  const fs::path dir = ensure_out_dir(opts.out_path);

  std::vector<const ProblemRecord*> selected;
  for (const auto& record : corpus.records) {
    if (record_id.empty() || record.id == record_id) selected.push_back(&record);
  }
  if (!record_id.empty() && selected.empty()) {
    raise("validation-failure", "record " + record_id + " not found in corpus");
  }

  // Per-record seeds derive from the record id, so the worker count never
  // changes results; outcomes are written back in corpus order.
  std::vector<AttackOutcome> outcomes(selected.size());
  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= selected.size()) return;
      AttackParams rp = params;
      rp.seed = Rng::mix_seed(params.seed, fnv1a64(selected[i]->id));
      outcomes[i] = run_attack(model, space, *selected[i], rp);
    }
  };
  const int n_workers = std::max(1, std::min<int>(opts.workers, static_cast<int>(selected.size())));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  json summary;
  summary["records"] = json::array();
  for (size_t i = 0; i < selected.size(); ++i) {
    const ProblemRecord& record = *selected[i];
    const AttackOutcome& outcome = outcomes[i];
    write_text(dir / (record.id + ".trace.jsonl"), trace_to_jsonl(outcome.trace));
    json seq;
    seq["id"] = record.id;
    seq["success"] = outcome.success;
    seq["iterations"] = outcome.iterations_total;
    seq["token_ids"] = outcome.seq.tokens;
    seq["text"] = model.detokenize(outcome.seq.tokens);
    write_text(dir / (record.id + ".seq.json"),
               seq.dump(2, ' ', false, json::error_handler_t::replace) + "\n");
    summary["records"].push_back({{"id", record.id},
                                  {"success", outcome.success},
                                  {"iterations", outcome.iterations_total}});
    std::cout << record.id << ": " << (outcome.success ? "success" : "no success") << " after "
              << outcome.iterations_total << " iterations\n";
  }
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  write_manifest(dir / "manifest.json", "attack", opts.seed,
                 {{"corpus", opts.corpus_path},
                  {"space", opts.space_path},
                  {"model", opts.model_path},
                  {"record", record_id},
                  {"workers", opts.workers},
                  {"params", over.to_json()}});
  return 0;
}

int cmd_evaluate(const CommonOpts& opts, AttackOverrides& over) {
  const Corpus corpus = load_corpus(opts.corpus_path);
  const PromptSpace space = load_space(opts.space_path);
  const TinyLM model = TinyLM::load(opts.model_path);
  const AttackParams params = over.resolve(opts.seed);
  const fs::path dir = ensure_out_dir(opts.out_path);

  const AttackReport report = run_suite(corpus, model, space, params, opts.workers);
  save_report(report, (dir / "report.json").string());
  write_text(dir / "report.txt", render_overview_table(report));
  write_manifest(dir / "manifest.json", "evaluate", opts.seed,
                 {{"corpus", opts.corpus_path},
                  {"space", opts.space_path},
                  {"model", opts.model_path},
                  {"workers", opts.workers},
                  {"params", over.to_json()}});
  const auto agg = report.aggregates();
  if (agg.asr_defined) {
    std::cout << "ASR " << agg.asr * 100.0 << "% over " << agg.records << " records\n";
  } else {
    std::cout << "empty corpus: ASR undefined\n";
  }
  std::cout << render_overview_table(report);
  return 0;
}

int cmd_transfer(const CommonOpts& opts, const std::string& holdout_path,
                 const std::string& report_path, const std::string& train_space_path, int n) {
  const Corpus corpus = load_corpus(opts.corpus_path);
  const PromptSpace holdout = load_space(holdout_path);
  const TinyLM model = TinyLM::load(opts.model_path);
  const fs::path dir = ensure_out_dir(opts.out_path);

  std::ifstream in(report_path, std::ios::binary);
  if (!in) raise("file-missing", "cannot open report " + report_path);
  std::stringstream buf;
  buf << in.rdbuf();
  json doc = json::parse(buf.str());
  AttackReport prior;
  for (const auto& jr : doc.at("rows")) {
    RecordResult row;
    row.id = jr.at("id").get<std::string>();
    row.success = jr.at("success").get<bool>();
    row.final_seq = jr.at("seq_token_ids").get<TokenSeq>();
    const auto cls = parse_vuln_class(jr.at("vuln_class").get<std::string>());
    if (cls) row.vuln_class = *cls;
    prior.rows.push_back(row);
  }

  std::optional<PromptSpace> train_space;
  if (!train_space_path.empty()) train_space = load_space(train_space_path);
  const TransferReport transfer = run_transfer(model, prior, corpus, holdout, n, opts.seed,
                                               train_space ? &*train_space : nullptr);
  save_transfer(transfer, (dir / "transfer.json").string());
  write_text(dir / "transfer.txt", render_transfer_table(transfer));
  write_manifest(dir / "manifest.json", "transfer", opts.seed,
                 {{"corpus", opts.corpus_path},
                  {"holdout", holdout_path},
                  {"report", report_path},
                  {"train_space", train_space_path},
                  {"model", opts.model_path},
                  {"n", n}});
  std::cout << render_transfer_table(transfer);
  return 0;
}

int cmd_ablate(const CommonOpts& opts, AttackOverrides& over, const std::string& mode,
               const std::string& holdout_path, int n_holdout) {
  const Corpus corpus = load_corpus(opts.corpus_path);
  const PromptSpace space = load_space(opts.space_path);
  const TinyLM model = TinyLM::load(opts.model_path);
  const AttackParams params = over.resolve(opts.seed);
  const fs::path dir = ensure_out_dir(opts.out_path);

  if (mode == "phase1") {
    if (holdout_path.empty()) {
      raise("validation-failure", "--mode phase1 needs --holdout for the transfer comparison");
    }
    const PromptSpace holdout = load_space(holdout_path);
    auto [report, transfer] = ablation_phase1_only(corpus, model, space, params, holdout,
                                                   n_holdout, opts.seed, opts.workers);
    save_report(report, (dir / "report.json").string());
    save_transfer(transfer, (dir / "transfer.json").string());
    write_text(dir / "report.txt", render_overview_table(report));
    write_text(dir / "transfer.txt", render_transfer_table(transfer));
    std::cout << render_transfer_table(transfer);
  } else {
    const AttackReport report = ablation_renaming(corpus, model, space, params, opts.workers);
    save_report(report, (dir / "report.json").string());
    write_text(dir / "report.txt", render_overview_table(report));
    std::cout << render_overview_table(report);
  }
  write_manifest(dir / "manifest.json", "ablate", opts.seed,
                 {{"corpus", opts.corpus_path},
                  {"space", opts.space_path},
                  {"model", opts.model_path},
                  {"mode", mode},
                  {"holdout", holdout_path},
                  {"n_holdout", n_holdout},
                  {"workers", opts.workers},
                  {"params", over.to_json()}});
  return 0;
}

int cmd_simulate(const CommonOpts& opts, const std::string& pages_path, const std::string& query) {
  const PromptSpace space = load_space(opts.space_path);
  const TinyLM model = TinyLM::load(opts.model_path);
  const auto pages = load_pages(pages_path);
  DecodeParams decode;
  const SimulationOutcome sim = simulate_assistant(query, pages, model, space, opts.seed, decode);
  std::cout << "retrieved page: " << sim.page_title << "\n";
  std::cout << "response:\n" << sim.response << "\n";
  if (!opts.out_path.empty()) {
    const fs::path dir = ensure_out_dir(opts.out_path);
    json doc;
    doc["query"] = query;
    doc["page_index"] = sim.page_index;
    doc["page_title"] = sim.page_title;
    doc["template_id"] = sim.choice.template_id;
    doc["instruction_index"] = sim.choice.instruction_index;
    doc["input_text"] = sim.input_text;
    doc["response"] = sim.response;
    write_text(dir / "simulation.json",
               doc.dump(2, ' ', false, json::error_handler_t::replace) + "\n");
    write_manifest(dir / "manifest.json", "simulate", opts.seed,
                   {{"pages", pages_path}, {"space", opts.space_path}, {"model", opts.model_path},
                    {"query", query}});
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"refforge: attack-sequence generation against reference-following code models"};
  app.require_subcommand(1);

  CommonOpts opts;
  AttackOverrides over;
  std::string record_id, pairs_path, config_path, holdout_path, report_path, train_space_path;
  std::string mode = "phase1", pages_path, query;
  int n_holdout = 5;

  auto add_seed = [&](CLI::App* cmd) {
    return cmd->add_option("--seed", opts.seed, "random seed")->envname("REFFORGE_SEED");
  };

  auto* validate = app.add_subcommand("validate", "validate a corpus file");
  validate->add_option("--corpus", opts.corpus_path, "corpus JSON")->required();

  auto* train = app.add_subcommand("train-tiny", "train the built-in tiny model");
  train->add_option("--pairs", pairs_path, "JSON list of {prompt, completion}")->required();
  train->add_option("--config", config_path, "model config JSON");
  train->add_option("--out", opts.out_path, "checkpoint path")->required();
  auto* train_seed = add_seed(train);

  auto* attack = app.add_subcommand("attack", "generate attack sequences");
  attack->add_option("--corpus", opts.corpus_path)->required();
  attack->add_option("--space", opts.space_path)->required();
  attack->add_option("--model", opts.model_path)->required();
  attack->add_option("--out", opts.out_path)->required();
  attack->add_option("--record", record_id, "run a single record");
  attack->add_option("--workers", opts.workers, "parallel record processing");
  add_seed(attack);
  over.add_flags(attack);

  auto* evaluate = app.add_subcommand("evaluate", "run the attack suite and report metrics");
  evaluate->add_option("--corpus", opts.corpus_path)->required();
  evaluate->add_option("--space", opts.space_path)->required();
  evaluate->add_option("--model", opts.model_path)->required();
  evaluate->add_option("--out", opts.out_path)->required();
  evaluate->add_option("--workers", opts.workers, "parallel record processing");
  add_seed(evaluate);
  over.add_flags(evaluate);

  auto* transfer = app.add_subcommand("transfer", "test sequences on holdout inputs");
  transfer->add_option("--corpus", opts.corpus_path)->required();
  transfer->add_option("--holdout", holdout_path, "holdout prompt space")->required();
  transfer->add_option("--report", report_path, "report.json from a prior evaluate run")->required();
  transfer->add_option("--train-space", train_space_path, "generation-time space (overlap check)");
  transfer->add_option("--model", opts.model_path)->required();
  transfer->add_option("--out", opts.out_path)->required();
  transfer->add_option("--n", n_holdout, "holdout inputs per record");
  add_seed(transfer);

  auto* ablate = app.add_subcommand("ablate", "phase1-only or rename-strategy ablations");
  ablate->add_option("--mode", mode, "phase1|rename")
      ->required()
      ->check(CLI::IsMember({"phase1", "rename"}));
  ablate->add_option("--corpus", opts.corpus_path)->required();
  ablate->add_option("--space", opts.space_path)->required();
  ablate->add_option("--model", opts.model_path)->required();
  ablate->add_option("--out", opts.out_path)->required();
  ablate->add_option("--holdout", holdout_path, "holdout space (phase1 mode)");
  ablate->add_option("--n", n_holdout, "holdout inputs per record");
  ablate->add_option("--workers", opts.workers);
  add_seed(ablate);
  over.add_flags(ablate);

  auto* simulate = app.add_subcommand("simulate", "local coding-assistant loop");
  simulate->add_option("--pages", pages_path, "page store JSON")->required();
  simulate->add_option("--query", query, "user query")->required();
  simulate->add_option("--space", opts.space_path)->required();
  simulate->add_option("--model", opts.model_path)->required();
  simulate->add_option("--out", opts.out_path);
  add_seed(simulate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << app.help() << "\n";
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (validate->parsed()) return cmd_validate(opts);
    if (train->parsed()) return cmd_train(opts, pairs_path, config_path, train_seed->count() > 0);
    if (attack->parsed()) return cmd_attack(opts, over, record_id);
    if (evaluate->parsed()) return cmd_evaluate(opts, over);
    if (transfer->parsed())
      return cmd_transfer(opts, holdout_path, report_path, train_space_path, n_holdout);
    if (ablate->parsed()) return cmd_ablate(opts, over, mode, holdout_path, n_holdout);
    if (simulate->parsed()) return cmd_simulate(opts, pages_path, query);
  } catch (const Error& e) {
    std::cerr << "error [" << e.code() << "]: " << e.what() << "\n";
    const bool input_fault = e.code() == "validation-failure" || e.code() == "file-missing" ||
                             e.code() == "malformed-document" || e.code() == "overlap-detected" ||
                             e.code() == "no-relevant-page" || e.code() == "seq-too-short";
    return input_fault ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
