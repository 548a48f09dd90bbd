// p2net: prepare -> train -> generate -> evaluate.
#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "p2net/corpus.hpp"
#include "p2net/embedding.hpp"
#include "p2net/errors.hpp"
#include "p2net/inference.hpp"
#include "p2net/metrics.hpp"
#include "p2net/model.hpp"
#include "p2net/training.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace p2net::cli {
namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kRuntime = 3 };

struct Overrides {
  std::string config;
  std::optional<std::string> variant, strategy;
  std::optional<int> n, beam, groups, workers, hidden, word_dim, batch_size, max_length;
  std::optional<double> gamma, alpha, delta;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> max_iters;
  std::optional<std::size_t> max_instances;
  std::string overfit_set;
  bool zero_noise = false;
  bool interactive = false;
  bool resume = false;
  bool no_baseline = false;
  std::string data, acts, corpus, vectors, checkpoint, out, generations, split = "test";
};

void add_common(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config, "JSON run configuration");
  app->add_option("--seed", o.seed, "Seed for every random stream");
  app->add_option("--workers", o.workers, "Instance-parallel workers");
}

void add_decoding(CLI::App* app, Overrides& o) {
  app->add_option("--strategy", o.strategy,
                  "greedy | sample_prototypes | beam | stochastic_beam | diverse_beam");
  app->add_option("--n", o.n, "Samples per instance");
  app->add_option("--beam", o.beam, "Beam size");
  app->add_option("--groups", o.groups, "Diverse beam groups");
  app->add_option("--gamma", o.gamma, "Diverse beam penalty");
  app->add_option("--alpha", o.alpha, "Dirichlet concentration");
  app->add_option("--delta", o.delta, "Gate threshold");
  app->add_option("--max-length", o.max_length, "Longest decoded response");
  app->add_flag("--zero-noise", o.zero_noise, "Greedy decoding with the noise vector zeroed");
  app->add_option("--max-instances", o.max_instances, "Limit the number of instances");
  app->add_option("--split", o.split,
                  "train | val | test | val_seen | val_unseen | test_seen | test_unseen");
}

RunConfig resolve(const Overrides& o) {
  RunConfig c = load_run_config(o.config);
  const fs::path env = data_dir_from_env();
  if (o.hidden || o.word_dim) {
    const Variant v = c.model.variant;
    const auto seed = c.model.seed;
    c.model = ModelConfig::small(o.hidden.value_or(c.model.encoder.hidden),
                                 o.word_dim.value_or(c.model.embedding.d_word));
    c.model.variant = v;
    c.model.seed = seed;
  }
  if (o.variant) c.model.variant = parse_variant(*o.variant);
  if (o.seed) {
    c.model.seed = *o.seed;
    c.training.seed = *o.seed;
    c.decoding.seed = *o.seed;
  }
  if (o.strategy) c.decoding.strategy = inference::parse_strategy(*o.strategy);
  if (o.n) c.decoding.n = *o.n;
  if (o.beam) c.decoding.beam = *o.beam;
  if (o.groups) c.decoding.groups = *o.groups;
  if (o.gamma) c.decoding.gamma = *o.gamma;
  if (o.alpha) c.decoding.alpha = *o.alpha;
  if (o.delta) {
    c.decoding.delta = *o.delta;
    c.model.decoder.delta = *o.delta;
  }
  if (o.max_length) c.decoding.max_length = *o.max_length;
  if (o.zero_noise) c.decoding.zero_noise = true;
  if (o.workers) c.workers = *o.workers;
  if (o.max_iters) c.training.max_iterations = *o.max_iters;
  if (o.batch_size) c.training.batch_size = *o.batch_size;
  if (o.max_instances) c.max_instances = *o.max_instances;
  if (o.no_baseline) c.baseline = false;
  if (!o.data.empty()) c.data = o.data;
  if (!o.acts.empty()) c.acts = o.acts;
  if (!o.corpus.empty()) c.corpus = o.corpus;
  if (!o.vectors.empty()) c.vectors = o.vectors;
  if (!o.checkpoint.empty()) c.checkpoint = o.checkpoint;
  if (!o.out.empty()) c.out = o.out;
  if (!env.empty()) {
    if (c.data.empty()) c.data = env / "data.json";
    if (c.acts.empty() && fs::exists(env / "dialogue_acts.json")) c.acts = env / "dialogue_acts.json";
    if (c.corpus.empty()) c.corpus = env / "prepared";
  }
  if (c.workers < 1) throw ConfigError("--workers must be at least 1");
  c.model.validate();
  c.training.validate();
  c.decoding.validate();
  return c;
}

std::vector<corpus::ParaphraseSet> select_split(const corpus::CorpusSplits& s, const std::string& name) {
  auto join = [](std::vector<corpus::ParaphraseSet> a, const std::vector<corpus::ParaphraseSet>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  };
  if (name == "train") return s.train;
  if (name == "val") return join(s.val_seen, s.val_unseen);
  if (name == "test") return join(s.test_seen, s.test_unseen);
  if (name == "val_seen") return s.val_seen;
  if (name == "val_unseen") return s.val_unseen;
  if (name == "test_seen") return s.test_seen;
  if (name == "test_unseen") return s.test_unseen;
  throw ConfigError("unknown split '" + name + "'");
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

fs::path require(const fs::path& p, const std::string& what) {
  if (p.empty()) throw ConfigError(what + " is required (flag, config paths, or P2NET_DATA_DIR)");
  return p;
}

std::mt19937_64 instance_rng(std::uint64_t seed, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

// --- prepare ---------------------------------------------------------------------------

int cmd_prepare(const Overrides& o) {
  RunConfig c = resolve(o);
  fs::path data = require(c.data, "--data");
  if (fs::is_directory(data)) {
    if (c.acts.empty() && fs::exists(data / "dialogue_acts.json")) c.acts = data / "dialogue_acts.json";
    data /= "data.json";
  }
  if (!fs::exists(data)) throw DataError("dataset not found: " + data.string());
  fs::path out = c.out.empty() ? (c.corpus.empty() ? fs::path("prepared") : c.corpus) : c.out;

  corpus::LoadStats load;
  auto records = corpus::load_dialogues(data, c.acts, &load);
  corpus::SplitStats split;
  auto sentences = corpus::split_records(records, &split);
  auto sets = corpus::build_paraphrase_sets(sentences, c.min_set_members);
  auto splits = corpus::build_splits(sets, c.training.seed, c.split);
  corpus::write_splits(out, splits);

  json stats = corpus::corpus_statistics(splits.train);
  stats["load"] = {{"dialogues", load.dialogues},
                   {"system_turns", load.system_turns},
                   {"skipped_no_acts", load.skipped_no_acts},
                   {"dropped_unlocatable", load.dropped_unlocatable},
                   {"records", load.records}};
  stats["sentence_split"] = {{"inputs", split.inputs},
                             {"outputs", split.outputs},
                             {"flagged", split.flagged},
                             {"dropped_no_action", split.dropped_no_action}};
  stats["paraphrase_sets"] = sets.size();
  stats["splits"] = {{"train", splits.train.size()},
                     {"val_seen", splits.val_seen.size()},
                     {"val_unseen", splits.val_unseen.size()},
                     {"test_seen", splits.test_seen.size()},
                     {"test_unseen", splits.test_unseen.size()}};
  RunConfig snapshot = c;
  snapshot.data = data.filename();
  snapshot.acts = c.acts.empty() ? fs::path() : c.acts.filename();
  snapshot.out = fs::path();
  snapshot.corpus = fs::path();
  stats["config"] = to_json(snapshot);
  write_json(out / "stats.json", stats);
  std::cout << "prepared " << splits.train.size() << " train sets (" << stats["train_responses"]
            << " responses) into " << out.string() << "\n";
  return kOk;
}

// --- train -------------------------------------------------------------------------------

std::vector<corpus::ParaphraseSet> overfit_sets(const std::vector<corpus::ParaphraseSet>& train,
                                                const std::string& key) {
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train[i].key.str() == key || std::to_string(i) == key) return {train[i]};
  }
  throw ConfigError("--overfit-set '" + key + "' matches no training set key or index");
}

int cmd_train(const Overrides& o) {
  RunConfig c = resolve(o);
  const fs::path corpus_dir = require(c.corpus, "--corpus");
  auto splits = corpus::read_splits(corpus_dir);
  if (splits.train.empty()) throw DataError("training split is empty");
  fs::path out = c.out.empty() ? fs::path("runs") / to_string(c.model.variant) : c.out;
  fs::create_directories(out);

  std::vector<corpus::Record> train_records;
  for (const auto& s : splits.train) train_records.insert(train_records.end(), s.members.begin(), s.members.end());

  std::vector<corpus::ParaphraseSet> sets = splits.train;
  if (!o.overfit_set.empty()) sets = overfit_sets(splits.train, o.overfit_set);

  c.model.encoder.dropout = c.training.dropout;
  c.model.decoder.dropout = c.training.dropout;
  std::unique_ptr<P2NetModel> model;
  training::CheckpointMeta resumed;
  training::Adam restored(c.training.learning_rate);
  const bool resume = o.resume && fs::exists(out / "last.ckpt");
  if (resume) {
    model = training::load_checkpoint(out / "last.ckpt", &resumed, &restored);
  } else {
    model = std::make_unique<P2NetModel>(c.model, embedding::Vocabulary::from_corpus(train_records),
                                         embedding::SlotTypeTable::from_corpus(train_records));
    if (!c.vectors.empty()) {
      const int n = model->embedder().load_pretrained(c.vectors);
      std::cerr << "initialized " << n << " word vectors from " << c.vectors.string() << "\n";
    }
  }

  json snapshot = to_json(c);
  snapshot["overfit_set"] = o.overfit_set;
  write_json(out / "config.json", snapshot);

  training::Trainer trainer(*model, c.training);
  if (resume) {
    trainer.set_iteration(resumed.iteration);
    trainer.optimizer() = restored;
    std::istringstream rs(resumed.rng_state);
    rs >> trainer.rng();
  }
  trainer.set_checkpoint_extra({{"run_config", snapshot}});

  training::Validator validator;
  if (o.overfit_set.empty() && !splits.val_seen.empty() && c.val_instances > 0) {
    auto instances = inference::evaluation_instances(splits.val_seen);
    metrics::EvaluationConfig ec;
    ec.decoding = c.decoding;
    ec.workers = c.workers;
    ec.max_instances = c.val_instances;
    ec.baseline = false;
    validator = [instances, ec](P2NetModel& m) {
      json j = metrics::to_json(metrics::evaluate_model(m, instances, ec));
      return j;
    };
  }
  auto on_log = [](const training::LogEntry& e) {
    std::cerr << "iter " << e.iteration << " L_gen " << e.loss.gen << " L_word " << e.loss.word
              << " L_final " << e.loss.final << " per-token " << e.loss.word_per_token()
              << " tf " << e.tf_ratio;
    if (!e.validation.is_null()) std::cerr << " val " << e.validation.dump();
    std::cerr << "\n";
  };
  trainer.run(sets, out, validator, on_log);
  std::cout << "trained " << to_string(c.model.variant) << " for " << trainer.iteration()
            << " iterations into " << out.string() << "\n";
  return kOk;
}

// --- generate ------------------------------------------------------------------------------

std::unique_ptr<P2NetModel> load_model(const RunConfig& c) {
  return training::load_checkpoint(require(c.checkpoint, "--checkpoint"));
}

std::vector<corpus::TrainingInstance> load_instances(const RunConfig& c, const std::string& split) {
  auto splits = corpus::read_splits(require(c.corpus, "--corpus"));
  auto instances = inference::evaluation_instances(select_split(splits, split));
  if (c.max_instances > 0 && instances.size() > c.max_instances) instances.resize(c.max_instances);
  return instances;
}

corpus::DialogueContext parse_context(const json& j) {
  corpus::DialogueContext ctx;
  for (const auto& t : j) {
    corpus::Utterance u;
    u.speaker = t.value("speaker", std::string("user")) == "system" ? corpus::Speaker::kSystem
                                                                     : corpus::Speaker::kUser;
    if (t.contains("tokens")) {
      u.tokens = t.at("tokens").get<std::vector<std::string>>();
    } else {
      u.tokens = corpus::tokenize(t.at("text").get<std::string>());
    }
    ctx.turns.push_back(std::move(u));
  }
  if (ctx.turns.size() > corpus::DialogueContext::kMaxTurns) {
    ctx.turns.erase(ctx.turns.begin(), ctx.turns.end() - corpus::DialogueContext::kMaxTurns);
  }
  return ctx;
}

int interactive(const P2NetModel& model, const RunConfig& c) {
  std::mt19937_64 rng(c.decoding.seed);
  std::string line;
  while (std::getline(std::cin, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(std::string("interactive input is not JSON: ") + e.what());
    }
    // {"context": [{"speaker": "user", "text": "..."}], "template": <corpus record>}
    json tmpl = j.at("template");
    if (!tmpl.contains("dialogue_id")) tmpl["dialogue_id"] = "interactive";
    if (!tmpl.contains("turn_index")) tmpl["turn_index"] = 0;
    if (!tmpl.contains("dialogue_action")) tmpl["dialogue_action"] = "";
    if (!tmpl.contains("context")) tmpl["context"] = json::array();
    corpus::Record r = corpus::record_from_json(tmpl);
    corpus::TrainingInstance inst;
    inst.template_response = r.response;
    inst.ground_truth = r.response;
    inst.slots = r.response.slots;
    inst.context = parse_context(j.value("context", json::array()));
    auto batch = inference::generate(model, inst, c.decoding, rng);
    for (const auto& s : batch.samples) std::cout << inference::relexicalize(s.response) << "\n";
    std::cout << std::flush;
  }
  return kOk;
}

int cmd_generate(const Overrides& o) {
  RunConfig c = resolve(o);
  auto model = load_model(c);
  if (c.decoding.strategy == inference::Strategy::kSamplePrototypes && !model->flags().use_ground_truth) {
    throw ConfigError("strategy sample_prototypes needs a variant with the noise encoder; checkpoint is " +
                      to_string(model->config().variant));
  }
  if (o.interactive) return interactive(*model, c);

  auto instances = load_instances(c, o.split);
  if (instances.empty()) throw DataError("split '" + o.split + "' has no instances");
  std::vector<std::vector<json>> lines(instances.size());
  json snapshot = to_json(c);
  snapshot["model"] = to_json(model->config());
  snapshot["variant"] = to_string(model->config().variant);
  snapshot["split"] = o.split;

  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  auto work = [&] {
    for (std::size_t i = next++; i < instances.size(); i = next++) {
      try {
        auto rng = instance_rng(c.decoding.seed, i);
        auto batch = inference::generate(*model, instances[i], c.decoding, rng);
        lines[i] = inference::generation_lines(batch, c.decoding.strategy);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < c.workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);

  fs::path out = c.out.empty() ? fs::path("generations.jsonl") : c.out;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream f(out);
  if (!f) throw ConfigError("cannot write " + out.string());
  std::size_t count = 0;
  for (const auto& per : lines) {
    for (auto l : per) {
      l["config"] = snapshot;
      f << l.dump() << "\n";
      ++count;
    }
  }
  std::cout << "wrote " << count << " generations for " << instances.size() << " instances to "
            << out.string() << "\n";
  return kOk;
}

// --- evaluate -----------------------------------------------------------------------------

int cmd_evaluate(const Overrides& o) {
  RunConfig c = resolve(o);
  metrics::EvaluationReport report;
  json snapshot = to_json(c);
  snapshot["split"] = o.split;
  if (!o.generations.empty()) {
    std::ifstream in(o.generations);
    if (!in) throw DataError("cannot open generations " + o.generations);
    std::vector<json> lines;
    std::string line;
    while (std::getline(in, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        lines.push_back(json::parse(line));
      } catch (const json::exception& e) {
        throw DataError(std::string("bad generation line: ") + e.what());
      }
    }
    if (lines.empty()) throw DataError("generation file " + o.generations + " is empty");
    RunConfig all = c;
    all.max_instances = 0;
    report = metrics::evaluate_generations(lines, load_instances(all, o.split));
  } else {
    auto model = load_model(c);
    snapshot["model"] = to_json(model->config());
    auto instances = load_instances(c, o.split);
    if (instances.empty()) throw DataError("split '" + o.split + "' has no instances");
    metrics::EvaluationConfig ec;
    ec.decoding = c.decoding;
    ec.workers = c.workers;
    ec.baseline = c.baseline;
    report = metrics::evaluate_model(*model, instances, ec);
  }
  json j = metrics::to_json(report);
  j["config"] = snapshot;
  if (!c.out.empty()) write_json(c.out, j);
  std::cout << metrics::format_table({report});
  if (c.out.empty()) std::cout << j.dump(2) << "\n";
  return kOk;
}

}  // namespace
}  // namespace p2net::cli

int main(int argc, char** argv) {
  using namespace p2net::cli;
  CLI::App app{"Prototype-guided paraphrasing of template dialogue responses"};
  app.require_subcommand(1);
  Overrides o;

  auto* prepare = app.add_subcommand("prepare", "Normalize a MultiWOZ-style corpus into splits");
  add_common(prepare, o);
  prepare->add_option("--data", o.data, "data.json or a directory holding it");
  prepare->add_option("--acts", o.acts, "Separate dialogue-act file");
  prepare->add_option("--out", o.out, "Output directory");

  auto* train = app.add_subcommand("train", "Train one variant");
  add_common(train, o);
  train->add_option("--variant", o.variant, "Ablation variant");
  train->add_option("--corpus", o.corpus, "Prepared corpus directory");
  train->add_option("--out", o.out, "Run directory for checkpoints and logs");
  train->add_option("--vectors", o.vectors, "Pretrained word vectors (text format)");
  train->add_option("--max-iters", o.max_iters, "Iterations");
  train->add_option("--batch-size", o.batch_size, "Instances per iteration");
  train->add_option("--overfit-set", o.overfit_set, "Train on one set (key or index)");
  train->add_option("--hidden", o.hidden, "Shrink every width to this hidden size");
  train->add_option("--word-dim", o.word_dim, "Word embedding width with --hidden");
  train->add_option("--delta", o.delta, "Gate threshold");
  train->add_flag("--resume", o.resume, "Continue from last.ckpt in the run directory");

  auto* generate = app.add_subcommand("generate", "Generate responses");
  add_common(generate, o);
  add_decoding(generate, o);
  generate->add_option("--checkpoint", o.checkpoint, "Checkpoint file");
  generate->add_option("--corpus", o.corpus, "Prepared corpus directory");
  generate->add_option("--out", o.out, "Output JSONL");
  generate->add_flag("--interactive", o.interactive, "Read context + template JSON lines from stdin");

  auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint or a generation file");
  add_common(evaluate, o);
  add_decoding(evaluate, o);
  evaluate->add_option("--checkpoint", o.checkpoint, "Checkpoint file");
  evaluate->add_option("--corpus", o.corpus, "Prepared corpus directory");
  evaluate->add_option("--generations", o.generations, "Generation JSONL to score");
  evaluate->add_option("--out", o.out, "Report JSON");
  evaluate->add_flag("--no-baseline", o.no_baseline, "Skip the stochastic beam comparison");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*prepare) return cmd_prepare(o);
    if (*train) return cmd_train(o);
    if (*generate) return cmd_generate(o);
    if (*evaluate) return cmd_evaluate(o);
  } catch (const p2net::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const p2net::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const p2net::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
