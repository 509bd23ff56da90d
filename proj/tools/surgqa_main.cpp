// surgqa: command-line front end for corpus building, cleaning, scoring and
// the decoding simulator.
#include <atomic>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <pthread.h>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "json.hpp"
#include "surgqa/annotations.hpp"
#include "surgqa/cleaning.hpp"
#include "surgqa/corpus_io.hpp"
#include "surgqa/decoding.hpp"
#include "surgqa/enrichment.hpp"
#include "surgqa/generation.hpp"
#include "surgqa/metrics.hpp"
#include "surgqa/review_server.hpp"
#include "surgqa/util.hpp"

namespace {

using nlohmann::json;
using namespace surgqa;

annotations::MotionPolicy motion_policy(const std::vector<std::string>& stationary) {
  annotations::MotionPolicy p;
  if (!stationary.empty()) p.stationary = {stationary.begin(), stationary.end()};
  return p;
}

// ---------------------------------------------------------------- ingest

struct IngestArgs {
  std::string schema = "canonical";
  std::string input;
  std::string output;
  std::size_t synthetic = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> stationary;
};

int run_ingest(const IngestArgs& a) {
  std::vector<annotations::FrameAnnotation> frames;
  if (a.synthetic > 0) {
    frames = annotations::synthetic_frames(a.synthetic, a.seed);
  } else {
    if (a.input.empty()) throw ValidationError("ingest needs --input or --synthetic");
    auto load = read_frames(a.input, a.schema, motion_policy(a.stationary));
    for (const auto& w : load.warnings) spdlog::warn("{}", w);
    frames = std::move(load.frames);
  }
  write_file_atomic(a.output, frames_to_jsonl(frames));
  spdlog::info("wrote {} frames to {}", frames.size(), a.output);
  return 0;
}

// ---------------------------------------------------------------- generate

struct GenerateArgs {
  std::string frames;
  std::string schema = "canonical";
  std::string output;
  std::string templates;
  std::uint64_t seed = 0;
  std::vector<std::string> caps;
  std::string enricher = "stub";
  std::string enricher_url;
  bool digits = false;
  bool no_visual_qa = false;
  bool no_detailed = false;
  std::size_t jobs = 1;
  std::string multi_turn;
  std::string conversations;
  std::vector<std::string> stationary;
};

std::map<generation::ConversationParadigm, std::size_t> parse_caps(const std::vector<std::string>& caps) {
  std::map<generation::ConversationParadigm, std::size_t> out;
  for (const auto& c : caps) {
    auto eq = c.find('=');
    if (eq == std::string::npos) throw ValidationError("--cap expects paradigm=N, got '" + c + "'");
    auto paradigm = generation::parse_paradigm(c.substr(0, eq));
    std::size_t n = 0;
    try {
      std::size_t used = 0;
      auto v = std::stoll(c.substr(eq + 1), &used);
      if (v < 0 || used != c.size() - eq - 1) throw std::invalid_argument("cap");
      n = static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      throw ValidationError("--cap value must be a non-negative integer, got '" + c + "'");
    }
    out[paradigm] = n;
  }
  return out;
}

std::unique_ptr<generation::EnrichmentClient> make_enricher(const std::string& kind, const std::string& url) {
  if (kind == "stub") return std::make_unique<generation::StubEnricher>();
  if (kind == "http") {
    auto cfg = generation::endpoint_from_env("SURGQA_ENRICHER");
    if (!url.empty()) cfg.url = url;
    if (cfg.url.empty()) throw ValidationError("--enricher http needs --enricher-url or SURGQA_ENRICHER_URL");
    return std::make_unique<generation::HttpEnrichmentClient>(cfg);
  }
  throw ValidationError("unknown enricher '" + kind + "' (expected stub or http)");
}

int run_generate(const GenerateArgs& a) {
  auto load = read_frames(a.frames, a.schema, motion_policy(a.stationary));
  for (const auto& w : load.warnings) spdlog::warn("{}", w);
  auto templates = a.templates.empty() ? generation::default_templates()
                                       : generation::load_templates(a.templates);
  auto enricher = make_enricher(a.enricher, a.enricher_url);
  generation::GenerationOptions opts;
  opts.seed = a.seed;
  opts.numerals.digits = a.digits;
  opts.caps = parse_caps(a.caps);
  opts.visual_qa = !a.no_visual_qa;
  opts.detailed_description = !a.no_detailed;
  opts.jobs = std::max<std::size_t>(1, a.jobs);
  auto result = generation::generate_corpus(load.frames, templates, *enricher, opts);
  for (const auto& w : result.warnings) spdlog::warn("{}", w);
  write_file_atomic(a.output, corpus_to_jsonl(result.records));
  if (!a.multi_turn.empty()) {
    write_file_atomic(a.multi_turn, corpus_to_jsonl(generation::assemble_multi_turn(result.records)));
  }
  if (!a.conversations.empty()) {
    std::string text;
    for (const auto& r : result.records) text += generation::serialize_conversation(r);
    write_file_atomic(a.conversations, text);
  }
  spdlog::info("wrote {} records from {} frames to {}", result.records.size(), load.frames.size(), a.output);
  return 0;
}

// ---------------------------------------------------------------- stats

struct StatsArgs {
  std::string corpus;
  bool as_json = false;
};

int run_stats(const StatsArgs& a) {
  auto s = generation::corpus_stats(read_corpus(a.corpus));
  if (a.as_json) {
    json j{{"frames", s.frames},
           {"records", s.records},
           {"box_records", s.box_records},
           {"per_paradigm", s.per_paradigm},
           {"per_subtask", s.per_subtask},
           {"per_source", s.per_source}};
    std::cout << j.dump(2) << "\n";
    return 0;
  }
  std::cout << fmt::format("frames       {}\nrecords      {}\nbox records  {}\n", s.frames, s.records, s.box_records);
  auto section = [](const char* title, const std::map<std::string, std::size_t>& m) {
    std::cout << title << "\n";
    for (const auto& [k, v] : m) std::cout << fmt::format("  {:<24} {}\n", k, v);
  };
  section("per paradigm", s.per_paradigm);
  section("per sub-task", s.per_subtask);
  section("per source", s.per_source);
  return 0;
}

// ---------------------------------------------------------------- review-serve

struct ServeArgs {
  std::string corpus;
  std::string log;
  double ratio = 0.2;
  std::uint64_t seed = 0;
  std::string host = "127.0.0.1";
  int port = 8765;
  std::string token;
  std::string images;
  std::string static_dir;
  std::string output;
  std::size_t threshold = 2;
};

cleaning::ReviewSession open_session(const std::vector<generation::InstructionRecord>& corpus,
                                     const std::string& log_path, double ratio, std::uint64_t seed) {
  if (std::filesystem::exists(log_path) && std::filesystem::file_size(log_path) > 0) {
    auto s = cleaning::replay_session(corpus, log_path);
    spdlog::info("resumed session from {} ({} of {} decided)", log_path, s.decisions.size(), s.sample.size());
    return s;
  }
  auto s = cleaning::sample_for_review(corpus, ratio, seed);
  cleaning::DecisionLog(log_path).write_header(s);
  spdlog::info("new session: {} of {} records sampled", s.sample.size(), corpus.size());
  return s;
}

int run_review_serve(const ServeArgs& a) {
  auto corpus = read_corpus(a.corpus);
  auto session = open_session(corpus, a.log, a.ratio, a.seed);

  cleaning::ServerConfig cfg;
  cfg.host = a.host;
  cfg.port = a.port;
  cfg.token = a.token;
  if (cfg.token.empty()) {
    if (const char* t = std::getenv("SURGQA_REVIEW_TOKEN")) cfg.token = t;
  }
  cfg.images_dir = a.images;
  cfg.static_dir = a.static_dir;
  cfg.output_dir = a.output;
  cfg.rule_threshold = a.threshold;

  // Signals are taken synchronously by a dedicated thread so the server can be
  // stopped outside of signal-handler context.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  cleaning::ReviewServer server(cfg, std::move(corpus), std::move(session), cleaning::DecisionLog(a.log));
  int port = server.bind();
  std::cout << fmt::format("listening on http://{}:{}", a.host, port) << std::endl;

  std::atomic<bool> signalled{false};
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    if (!signalled.exchange(true)) {
      spdlog::info("signal {} received; shutting down", sig);
      server.stop();
    }
  });
  server.serve();
  // serve() can also return on its own; wake the waiter so it can exit.
  if (!signalled.exchange(true)) pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return 0;
}

// ---------------------------------------------------------------- apply-clean

struct CleanArgs {
  std::string corpus;
  std::string log;
  std::string output;
  std::string changelog;
  std::string rules;
  std::size_t threshold = 2;
};

int run_apply_clean(const CleanArgs& a) {
  auto corpus = read_corpus(a.corpus);
  auto session = cleaning::replay_session(corpus, a.log);
  auto rules = cleaning::compile_rules(session, a.threshold);
  auto result = cleaning::apply_rules(corpus, rules, session);
  write_file_atomic(a.output, corpus_to_jsonl(result.corpus));
  if (!a.changelog.empty()) write_file_atomic(a.changelog, cleaning::to_json(result.log).dump(2) + "\n");
  if (!a.rules.empty()) {
    json r = json::array();
    for (const auto& rule : rules) r.push_back(cleaning::to_json(rule));
    write_file_atomic(a.rules, r.dump(2) + "\n");
  }
  for (const auto& c : result.log.conflicts) {
    spdlog::warn("{}: conflicting rules left the record unchanged", c.record_id);
  }
  spdlog::info("{} rules, {} changes, {} conflicts, {} -> {} records", rules.size(),
               result.log.entries.size(), result.log.conflicts.size(), corpus.size(), result.corpus.size());
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string transcript;
  std::string references;
  std::vector<std::string> metrics;
  std::string judge = "stub";
  std::string judge_url;
  std::string report;
};

int run_eval(const EvalArgs& a) {
  metrics::EvalConfig cfg;
  for (const auto& m : a.metrics) cfg.metrics.insert(m);
  std::unique_ptr<metrics::JudgeClient> judge;
  if (a.judge == "stub") {
    judge = std::make_unique<metrics::StubJudge>();
  } else if (a.judge == "http") {
    auto ep = generation::endpoint_from_env("SURGQA_JUDGE");
    if (!a.judge_url.empty()) ep.url = a.judge_url;
    if (ep.url.empty()) throw ValidationError("--judge http needs --judge-url or SURGQA_JUDGE_URL");
    judge = std::make_unique<metrics::HttpJudgeClient>(ep);
  } else {
    throw ValidationError("unknown judge '" + a.judge + "' (expected stub or http)");
  }
  cfg.judge = judge.get();
  auto report = metrics::evaluate_files(a.transcript, a.references, cfg);
  for (const auto& w : report.warnings) spdlog::warn("{}", w);
  for (const auto& id : report.unmatched) spdlog::warn("unmatched record id: {}", id);
  std::cout << metrics::to_table(report);
  if (!a.report.empty()) write_file_atomic(a.report, metrics::to_json(report).dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------- decode-sim

struct DecodeArgs {
  double alpha = 1.0;
  double beta = 0.1;
  double sigma = 0.3;
  std::uint64_t seed = 0;
  std::string vocab;
  std::size_t max_len = 16;
  std::string provider;
  long tokens = 32;
  long channels = 16;
  std::string trace;
};

json vec_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

json result_json(const decoding::DecodeResult& r, const std::vector<std::string>& vocab) {
  json tokens = json::array();
  json steps = json::array();
  for (std::size_t i = 0; i < r.tokens.size(); ++i) {
    tokens.push_back(vocab.at(static_cast<std::size_t>(r.tokens[i])));
    const auto& s = r.steps[i];
    steps.push_back({{"token", vocab.at(static_cast<std::size_t>(s.token))},
                     {"p_orig", vec_json(s.p_orig)},
                     {"p", vec_json(s.p_final)},
                     {"plausible", s.plausible}});
  }
  json out{{"tokens", tokens}, {"steps", steps}};
  out["error"] = r.error ? json(*r.error) : json(nullptr);
  return out;
}

int run_decode_sim(const DecodeArgs& a) {
  decoding::VCDConfig cfg{a.alpha, a.beta, a.sigma, a.seed};
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ValidationError(e.what());
  }
  auto vocab = decoding::read_vocab(a.vocab);
  auto x = decoding::synthetic_tokens(a.tokens, a.channels, derive_seed(a.seed, "input"));
  auto x_dist = decoding::distort(x, a.sigma, derive_seed(a.seed, "distort"));

  auto colon = a.provider.find(':');
  if (colon == std::string::npos) throw ValidationError("--provider expects scripted:<file> or bigram:<file>");
  auto kind = a.provider.substr(0, colon);
  auto path = a.provider.substr(colon + 1);
  std::unique_ptr<decoding::LogitProvider> provider;
  if (kind == "scripted") {
    provider = std::make_unique<decoding::ScriptedProvider>(
        decoding::ScriptedProvider::from_file(path, static_cast<Eigen::Index>(vocab.size()), x));
  } else if (kind == "bigram") {
    provider = std::make_unique<decoding::BigramProvider>(decoding::BigramProvider::from_file(path));
  } else {
    throw ValidationError("unknown provider kind '" + kind + "'");
  }
  if (provider->vocab_size() != static_cast<Eigen::Index>(vocab.size())) {
    throw ValidationError(fmt::format("provider vocabulary size {} differs from {} tokens in {}",
                                      provider->vocab_size(), vocab.size(), a.vocab));
  }
  std::optional<Eigen::Index> end;
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    if (vocab[i] == "</s>") end = static_cast<Eigen::Index>(i);
  }

  auto vcd = decoding::greedy_decode(*provider, x, x_dist, cfg, a.max_len, end);
  auto plain = decoding::plain_greedy(*provider, x, a.max_len, end);
  json out{{"config", {{"alpha", a.alpha}, {"beta", a.beta}, {"sigma", a.sigma}, {"seed", a.seed}}},
           {"vcd", result_json(vcd, vocab)},
           {"plain", result_json(plain, vocab)}};
  auto join = [&](const decoding::DecodeResult& r) {
    std::string s;
    for (auto t : r.tokens) s += (s.empty() ? "" : " ") + vocab[static_cast<std::size_t>(t)];
    return s;
  };
  std::cout << "vcd:   " << join(vcd) << "\n";
  std::cout << "plain: " << join(plain) << "\n";
  if (!a.trace.empty()) write_file_atomic(a.trace, out.dump(2) + "\n");
  if (vcd.error) {
    spdlog::error("provider failed: {}", *vcd.error);
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("surgqa");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");

  CLI::App app{"Surgical instruction-corpus toolkit: ingest, generate, clean, score, decode."};
  app.set_config("--config", "", "INI/TOML config file; command-line flags override it");
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off")->capture_default_str();

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Convert source annotations into canonical frame lines");
  c_ingest->add_option("--schema", ingest.schema, "canonical|endovis|copesd|cholec80")
      ->check(CLI::IsMember({"canonical", "endovis", "copesd", "cholec80"}))
      ->capture_default_str();
  c_ingest->add_option("--input", ingest.input, "Source annotation file (one record per line)");
  c_ingest->add_option("--output,-o", ingest.output, "Canonical frame file")->required();
  c_ingest->add_option("--synthetic", ingest.synthetic, "Emit N synthetic frames instead of reading --input");
  c_ingest->add_option("--seed", ingest.seed, "Seed for --synthetic")->capture_default_str();
  c_ingest->add_option("--stationary", ingest.stationary, "Motions that need no direction label");

  GenerateArgs gen;
  auto* c_gen = app.add_subcommand("generate", "Build the instruction corpus from frames");
  c_gen->add_option("--frames", gen.frames, "Frame file")->required();
  c_gen->add_option("--schema", gen.schema, "Schema of --frames")
      ->check(CLI::IsMember({"canonical", "endovis", "copesd", "cholec80"}))
      ->capture_default_str();
  c_gen->add_option("--output,-o", gen.output, "Corpus output (JSON lines)")->required();
  c_gen->add_option("--templates", gen.templates, "Template file (default: built-in pool)");
  c_gen->add_option("--seed", gen.seed, "Generation seed")->capture_default_str();
  c_gen->add_option("--cap", gen.caps, "Per-frame cap, paradigm=N (repeatable)");
  c_gen->add_option("--enricher", gen.enricher, "stub|http")->capture_default_str();
  c_gen->add_option("--enricher-url", gen.enricher_url, "Endpoint for --enricher http");
  c_gen->add_flag("--digits", gen.digits, "Render counts as digits");
  c_gen->add_flag("--no-visual-qa", gen.no_visual_qa, "Skip Visual QA elaboration");
  c_gen->add_flag("--no-detailed", gen.no_detailed, "Skip detailed descriptions");
  c_gen->add_option("--jobs,-j", gen.jobs, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  c_gen->add_option("--multi-turn", gen.multi_turn, "Also write multi-turn conversations here");
  c_gen->add_option("--conversations", gen.conversations, "Also write Human/EndoChat wire text here");
  c_gen->add_option("--stationary", gen.stationary, "Motions that need no direction label");

  StatsArgs stats;
  auto* c_stats = app.add_subcommand("stats", "Count frames and records per paradigm, sub-task and source");
  c_stats->add_option("--corpus", stats.corpus, "Corpus file")->required();
  c_stats->add_flag("--json", stats.as_json, "Print JSON instead of a table");

  ServeArgs serve;
  auto* c_serve = app.add_subcommand("review-serve", "Serve the review API over a sampled session");
  c_serve->add_option("--corpus", serve.corpus, "Corpus file")->required();
  c_serve->add_option("--log", serve.log, "Decision log (resumed when present)")->required();
  c_serve->add_option("--ratio", serve.ratio, "Sampling ratio")->check(CLI::Range(1e-9, 1.0))->capture_default_str();
  c_serve->add_option("--seed", serve.seed, "Sampling seed")->capture_default_str();
  c_serve->add_option("--host", serve.host, "Bind address")->capture_default_str();
  c_serve->add_option("--port", serve.port, "Port (0 = ephemeral)")->check(CLI::Range(0, 65535))->capture_default_str();
  c_serve->add_option("--token", serve.token, "Shared token (or SURGQA_REVIEW_TOKEN)");
  c_serve->add_option("--images", serve.images, "Directory holding frame images");
  c_serve->add_option("--static", serve.static_dir, "Directory with the review UI bundle");
  c_serve->add_option("--output", serve.output, "Directory for finalize outputs");
  c_serve->add_option("--threshold", serve.threshold, "Rule threshold K")->capture_default_str();

  CleanArgs clean;
  auto* c_clean = app.add_subcommand("apply-clean", "Compile review decisions into rules and apply them");
  c_clean->add_option("--corpus", clean.corpus, "Corpus file")->required();
  c_clean->add_option("--log", clean.log, "Decision log")->required();
  c_clean->add_option("--output,-o", clean.output, "Cleaned corpus")->required();
  c_clean->add_option("--changelog", clean.changelog, "Change log (JSON)");
  c_clean->add_option("--rules", clean.rules, "Compiled rules (JSON)");
  c_clean->add_option("--threshold", clean.threshold, "Rule threshold K")->capture_default_str();

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Score a transcript against references");
  c_eval->add_option("--transcript", ev.transcript, "Predictions {record_id, text}")->required();
  c_eval->add_option("--references", ev.references, "Reference corpus or {record_id, text, paradigm} lines")->required();
  c_eval->add_option("--metrics", ev.metrics, "Metric subset (comma separated)")->delimiter(',');
  c_eval->add_option("--judge", ev.judge, "stub|http")->capture_default_str();
  c_eval->add_option("--judge-url", ev.judge_url, "Endpoint for --judge http");
  c_eval->add_option("--report", ev.report, "Machine-readable report (JSON)");

  DecodeArgs dec;
  auto* c_dec = app.add_subcommand("decode-sim", "Greedy decoding with and without visual contrast");
  c_dec->add_option("--alpha", dec.alpha, "Contrast weight")->capture_default_str();
  c_dec->add_option("--beta", dec.beta, "Plausibility truncation")->capture_default_str();
  c_dec->add_option("--sigma", dec.sigma, "Distortion noise scale")->capture_default_str();
  c_dec->add_option("--seed", dec.seed, "Seed for inputs and noise")->capture_default_str();
  c_dec->add_option("--vocab", dec.vocab, "Vocabulary file, one token per line")->required();
  c_dec->add_option("--max-len", dec.max_len, "Maximum tokens")->check(CLI::PositiveNumber)->capture_default_str();
  c_dec->add_option("--provider", dec.provider, "scripted:<file> or bigram:<file>")->required();
  c_dec->add_option("--tokens", dec.tokens, "Synthetic input tokens L")->check(CLI::PositiveNumber)->capture_default_str();
  c_dec->add_option("--channels", dec.channels, "Synthetic input channels D")->check(CLI::PositiveNumber)->capture_default_str();
  c_dec->add_option("--trace", dec.trace, "Per-step distributions (JSON)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*c_ingest) return run_ingest(ingest);
    if (*c_gen) return run_generate(gen);
    if (*c_stats) return run_stats(stats);
    if (*c_serve) return run_review_serve(serve);
    if (*c_clean) return run_apply_clean(clean);
    if (*c_eval) return run_eval(ev);
    if (*c_dec) return run_decode_sim(dec);
  } catch (const IoError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const std::exception& e) {
    // Validation, schema, template and argument errors.
    spdlog::error("{}", e.what());
    return 1;
  }
  return 1;
}
