#include <benchmark/benchmark.h>

#include <filesystem>
#include <random>

#include "p2net/corpus.hpp"
#include "p2net/embedding.hpp"
#include "p2net/inference.hpp"
#include "p2net/metrics.hpp"
#include "p2net/model.hpp"
#include "p2net/training.hpp"

using namespace p2net;

namespace {

struct Data {
  std::vector<corpus::Record> records;
  std::vector<corpus::ParaphraseSet> sets;
  embedding::Vocabulary vocab;
  embedding::SlotTypeTable types;
  std::vector<corpus::TrainingInstance> instances;
};

const Data& data() {
  static const Data d = [] {
    Data x;
    const std::filesystem::path dir = P2NET_BENCH_DATA_DIR;
    auto raw = corpus::load_dialogues(dir / "data.json", dir / "dialogue_acts.json");
    x.records = corpus::split_records(raw);
    x.sets = corpus::build_paraphrase_sets(x.records, 3);
    x.vocab = embedding::Vocabulary::from_corpus(x.records);
    x.types = embedding::SlotTypeTable::from_corpus(x.records);
    x.instances = inference::evaluation_instances(x.sets);
    return x;
  }();
  return d;
}

std::unique_ptr<P2NetModel> model(int hidden, int word) {
  ModelConfig c = ModelConfig::small(hidden, word);
  c.variant = Variant::kGtCtxProtoSlotsTmpl;
  return std::make_unique<P2NetModel>(c, data().vocab, data().types);
}

void BM_TrainStep(benchmark::State& state) {
  auto m = model(static_cast<int>(state.range(0)), static_cast<int>(state.range(0)) / 2);
  training::Adam adam(1e-4);
  std::mt19937_64 rng(1);
  std::size_t i = 0;
  for (auto _ : state) {
    const auto& inst = data().instances[i++ % data().instances.size()];
    m->params().zero_grad();
    ad::Graph g;
    auto loss = training::instance_loss(g, *m, inst, 0.95, training::draw_noise_dropout(rng), rng);
    g.backward(loss.final);
    adam.step(m->params());
  }
}
BENCHMARK(BM_TrainStep)->Arg(32)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_Generate(benchmark::State& state) {
  auto m = model(64, 32);
  inference::DecodingConfig cfg;
  cfg.strategy = static_cast<inference::Strategy>(state.range(0));
  cfg.max_length = 30;
  std::mt19937_64 rng(2);
  std::size_t i = 0;
  for (auto _ : state) {
    auto batch = inference::generate(*m, data().instances[i++ % data().instances.size()], cfg, rng);
    benchmark::DoNotOptimize(batch);
  }
  state.SetLabel(inference::to_string(cfg.strategy));
}
BENCHMARK(BM_Generate)
    ->Arg(static_cast<int>(inference::Strategy::kSamplePrototypes))
    ->Arg(static_cast<int>(inference::Strategy::kStochasticBeam))
    ->Arg(static_cast<int>(inference::Strategy::kDiverseBeam))
    ->Unit(benchmark::kMillisecond);

std::vector<metrics::Sentence> random_sentences(std::size_t n, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> len(4, 20), word(0, 499);
  std::vector<metrics::Sentence> out(n);
  for (auto& s : out) {
    const int l = len(rng);
    for (int k = 0; k < l; ++k) s.push_back("w" + std::to_string(word(rng)));
  }
  return out;
}

void BM_CorpusBleu(benchmark::State& state) {
  std::mt19937_64 rng(3);
  const auto n = static_cast<std::size_t>(state.range(0));
  auto hyps = random_sentences(n, rng);
  auto flat = random_sentences(n, rng);
  std::vector<std::vector<metrics::Sentence>> refs;
  for (auto& r : flat) refs.push_back({r});
  for (auto _ : state) benchmark::DoNotOptimize(metrics::corpus_bleu(hyps, refs));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_CorpusBleu)->Arg(200)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_DistinctMacro(benchmark::State& state) {
  std::mt19937_64 rng(4);
  std::vector<std::vector<metrics::Sentence>> instances;
  for (int i = 0; i < state.range(0); ++i) instances.push_back(random_sentences(8, rng));
  for (auto _ : state) benchmark::DoNotOptimize(metrics::distinct_macro(instances, 2));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_DistinctMacro)->Arg(200)->Arg(2000)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
