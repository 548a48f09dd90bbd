#include "p2net/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <iomanip>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "p2net/errors.hpp"

namespace p2net::metrics {

namespace {

using NGram = std::vector<std::string>;

std::map<NGram, std::size_t> ngrams(const Sentence& s, int n) {
  std::map<NGram, std::size_t> out;
  const auto len = s.size();
  const auto un = static_cast<std::size_t>(n);
  for (std::size_t i = 0; i + un <= len; ++i) {
    ++out[NGram(s.begin() + static_cast<long>(i), s.begin() + static_cast<long>(i + un))];
  }
  return out;
}

std::size_t ngram_total(const Sentence& s, int n) {
  const auto un = static_cast<std::size_t>(n);
  return s.size() >= un ? s.size() - un + 1 : 0;
}

double ratio(const NGramCounts& c) {
  return c.total == 0 ? 0.0 : static_cast<double>(c.unique) / static_cast<double>(c.total);
}

}  // namespace

Sentence symbols(const corpus::AnnotatedResponse& r) {
  Sentence out;
  for (const auto& t : r.tokens) {
    if (t.is_eos()) continue;
    if (t.is_slot()) {
      const auto& s = r.slots.at(static_cast<std::size_t>(t.slot));
      out.push_back("<" + s.type + "_" + std::to_string(s.type_position) + ">");
    } else {
      out.push_back(t.word);
    }
  }
  return out;
}

NGramCounts ngram_counts(const std::vector<Sentence>& samples, int n) {
  if (n < 1) throw std::invalid_argument("n must be >= 1");
  std::set<NGram> uni;
  NGramCounts c;
  for (const auto& s : samples) {
    for (const auto& [g, _] : ngrams(s, n)) uni.insert(g);
    c.total += ngram_total(s, n);
  }
  c.unique = uni.size();
  return c;
}

double distinct_n(const std::vector<Sentence>& samples, int n) { return ratio(ngram_counts(samples, n)); }

double distinct_macro(const std::vector<std::vector<Sentence>>& instances, int n) {
  if (instances.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& inst : instances) acc += distinct_n(inst, n);
  return acc / static_cast<double>(instances.size());
}

double distinct_pooled(const std::vector<std::vector<Sentence>>& instances, int n) {
  std::vector<Sentence> all;
  for (const auto& inst : instances) all.insert(all.end(), inst.begin(), inst.end());
  return distinct_n(all, n);
}

BleuStats corpus_bleu_stats(const std::vector<Sentence>& hypotheses,
                            const std::vector<std::vector<Sentence>>& references,
                            double smoothing) {
  if (hypotheses.size() != references.size()) {
    throw std::invalid_argument("bleu: hypothesis/reference count mismatch");
  }
  BleuStats st;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const auto& hyp = hypotheses[i];
    const auto& refs = references[i];
    if (refs.empty()) throw DataError("bleu: instance without references");
    st.hyp_len += hyp.size();
    // Closest reference length; the shorter one on ties.
    std::size_t best = refs[0].size();
    for (const auto& r : refs) {
      const auto d = [&](std::size_t l) { return l > hyp.size() ? l - hyp.size() : hyp.size() - l; };
      if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
    }
    st.ref_len += best;
    for (int n = 1; n <= 4; ++n) {
      auto h = ngrams(hyp, n);
      std::map<NGram, std::size_t> max_ref;
      for (const auto& r : refs) {
        for (const auto& [g, c] : ngrams(r, n)) max_ref[g] = std::max(max_ref[g], c);
      }
      for (const auto& [g, c] : h) {
        auto it = max_ref.find(g);
        if (it != max_ref.end()) st.correct[n - 1] += std::min(c, it->second);
      }
      st.total[n - 1] += ngram_total(hyp, n);
    }
  }
  if (std::all_of(std::begin(st.correct), std::end(st.correct), [](std::size_t c) { return c == 0; })) {
    return st;
  }
  double log_sum = 0.0;
  bool broken = false;
  for (int n = 0; n < 4; ++n) {
    if (st.total[n] == 0) {
      broken = true;
      break;
    }
    st.precisions[n] = st.correct[n] == 0
                           ? 100.0 * smoothing / static_cast<double>(st.total[n])
                           : 100.0 * static_cast<double>(st.correct[n]) / static_cast<double>(st.total[n]);
    log_sum += std::log(st.precisions[n]);
  }
  if (broken) return st;
  st.brevity_penalty =
      st.hyp_len < st.ref_len
          ? (st.hyp_len == 0 ? 0.0
                             : std::exp(1.0 - static_cast<double>(st.ref_len) / static_cast<double>(st.hyp_len)))
          : 1.0;
  st.score = st.brevity_penalty * std::exp(log_sum / 4.0);
  return st;
}

double corpus_bleu(const std::vector<Sentence>& hypotheses,
                   const std::vector<std::vector<Sentence>>& references, double smoothing) {
  return corpus_bleu_stats(hypotheses, references, smoothing).score;
}

namespace {

template <class Fn>
void parallel_for(std::size_t n, int workers, Fn fn) {
  const int w = std::max(1, std::min<int>(workers, static_cast<int>(n)));
  if (w <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (int t = 0; t < w; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

std::mt19937_64 instance_rng(std::uint64_t seed, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

void summarize(EvaluationReport& r) {
  std::vector<Sentence> zeroed, guided;
  std::vector<std::vector<Sentence>> refs, sampled, baseline;
  std::size_t failures = 0, generations = 0;
  for (const auto& i : r.instances) {
    zeroed.push_back(i.zeroed);
    guided.push_back(i.guided);
    refs.push_back({i.reference});
    if (!i.sampled.empty()) sampled.push_back(i.sampled);
    if (!i.baseline.empty()) baseline.push_back(i.baseline);
    if (i.samples > 0) {
      failures += i.sample_failures;
      generations += i.samples;
    } else {
      failures += i.zeroed_failure ? 1 : 0;
      generations += 1;
    }
  }
  r.n_instances = r.instances.size();
  r.bleu_zeroed = corpus_bleu(zeroed, refs);
  r.bleu_guided = corpus_bleu(guided, refs);
  if (!sampled.empty()) {
    r.distinct1 = distinct_macro(sampled, 1);
    r.distinct2 = distinct_macro(sampled, 2);
    r.distinct1_pooled = distinct_pooled(sampled, 1);
    r.distinct2_pooled = distinct_pooled(sampled, 2);
  }
  if (!baseline.empty()) {
    r.baseline_distinct1 = distinct_macro(baseline, 1);
    r.baseline_distinct2 = distinct_macro(baseline, 2);
  }
  r.semantic_failure_rate =
      generations == 0 ? 0.0 : static_cast<double>(failures) / static_cast<double>(generations);
}

}  // namespace

EvaluationReport evaluate_model(const P2NetModel& model,
                                const std::vector<corpus::TrainingInstance>& instances,
                                const EvaluationConfig& cfg) {
  cfg.decoding.validate();
  std::size_t n = instances.size();
  if (cfg.max_instances > 0) n = std::min(n, cfg.max_instances);
  EvaluationReport report;
  report.variant = to_string(model.config().variant);
  report.instances.resize(n);
  const bool sampling = model.flags().use_ground_truth;

  parallel_for(n, cfg.workers, [&](std::size_t i) {
    const auto& inst = instances[i];
    auto rng = instance_rng(cfg.decoding.seed, i);
    InstanceResult& out = report.instances[i];
    out.instance_id = inference::instance_id(inst);
    out.reference = symbols(inst.ground_truth);
    auto z = inference::decode_greedy(model, inst, NoiseSource::kZero, cfg.decoding);
    out.zeroed = symbols(z.response);
    out.zeroed_failure = z.semantic_failure;
    out.guided = sampling
                     ? symbols(inference::decode_greedy(model, inst, NoiseSource::kGroundTruth, cfg.decoding).response)
                     : out.zeroed;
    if (sampling) {
      auto batch = inference::generate_diverse(model, inst, cfg.decoding, rng);
      for (const auto& s : batch.samples) {
        out.sampled.push_back(symbols(s.response));
        out.sample_failures += s.semantic_failure ? 1 : 0;
      }
      out.samples = batch.samples.size();
    }
    if (cfg.baseline) {
      inference::ModelStepper stepper(model, inst, NoiseSource::kZero);
      auto hyps = inference::stochastic_beam_search(stepper, cfg.decoding.beam, cfg.decoding.max_length,
                                                    rng, cfg.decoding.temperature);
      for (const auto& h : hyps) out.baseline.push_back(symbols(model.to_response(h.tokens, inst.slots)));
    }
  });
  summarize(report);
  return report;
}

EvaluationReport evaluate_generations(const std::vector<nlohmann::json>& lines,
                                      const std::vector<corpus::TrainingInstance>& instances) {
  if (lines.empty()) throw DataError("no generations to evaluate");
  std::unordered_map<std::string, const corpus::TrainingInstance*> by_id;
  for (const auto& inst : instances) by_id.emplace(inference::instance_id(inst), &inst);

  std::map<std::string, std::vector<const nlohmann::json*>> grouped;
  std::vector<std::string> order;
  std::string strategy;
  for (const auto& l : lines) {
    const auto id = l.at("instance_id").get<std::string>();
    if (!grouped.count(id)) order.push_back(id);
    grouped[id].push_back(&l);
    if (strategy.empty()) strategy = l.value("strategy", std::string());
  }

  EvaluationReport r;
  r.variant = strategy;
  std::vector<Sentence> first;
  std::vector<std::vector<Sentence>> refs, samples;
  std::size_t failures = 0, total = 0;
  for (const auto& id : order) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError("no reference for instance " + id);
    const auto& inst = *it->second;
    InstanceResult res;
    res.instance_id = id;
    res.reference = symbols(inst.ground_truth);
    for (const auto* l : grouped[id]) {
      corpus::AnnotatedResponse resp;
      resp.slots = inst.slots;
      for (const auto& t : l->at("tokens")) {
        if (t.is_object()) {
          const int s = t.at("slot").get<int>();
          if (s < 0 || static_cast<std::size_t>(s) >= inst.slots.size()) {
            throw DataError("generation for " + id + " references unknown slot " + std::to_string(s));
          }
          resp.tokens.push_back(corpus::Token::Slot(s));
        } else {
          resp.tokens.push_back(corpus::Token::Word(t.get<std::string>()));
        }
      }
      res.sampled.push_back(symbols(resp));
      failures += l->value("semantic_failure", false) ? 1 : 0;
      ++total;
    }
    first.push_back(res.sampled.front());
    refs.push_back({res.reference});
    samples.push_back(res.sampled);
    r.instances.push_back(std::move(res));
  }
  r.n_instances = r.instances.size();
  r.bleu_first_sample = corpus_bleu(first, refs);
  r.distinct1 = distinct_macro(samples, 1);
  r.distinct2 = distinct_macro(samples, 2);
  r.distinct1_pooled = distinct_pooled(samples, 1);
  r.distinct2_pooled = distinct_pooled(samples, 2);
  r.semantic_failure_rate = static_cast<double>(failures) / static_cast<double>(total);
  return r;
}

nlohmann::json to_json(const EvaluationReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); };
  nlohmann::json j = {{"variant", r.variant},
                      {"bleu_zeroed", opt(r.bleu_zeroed)},
                      {"bleu_guided", opt(r.bleu_guided)},
                      {"distinct1", opt(r.distinct1)},
                      {"distinct2", opt(r.distinct2)},
                      {"distinct1_pooled", opt(r.distinct1_pooled)},
                      {"distinct2_pooled", opt(r.distinct2_pooled)},
                      {"baseline_distinct1", opt(r.baseline_distinct1)},
                      {"baseline_distinct2", opt(r.baseline_distinct2)},
                      {"semantic_failure_rate", r.semantic_failure_rate},
                      {"n_instances", r.n_instances}};
  if (r.bleu_first_sample) j["bleu_first_sample"] = *r.bleu_first_sample;
  return j;
}

std::string format_table(const std::vector<EvaluationReport>& reports) {
  auto cell = [](const std::optional<double>& v, int precision) {
    std::ostringstream s;
    if (v) {
      s << std::fixed << std::setprecision(precision) << *v;
    } else {
      s << "-";
    }
    return s.str();
  };
  std::ostringstream out;
  out << std::left << std::setw(26) << "variant" << std::right << std::setw(10) << "BLEU(0)"
      << std::setw(10) << "BLEU(GT)" << std::setw(10) << "D-2" << std::setw(10) << "D-1"
      << std::setw(10) << "SBS D-2" << std::setw(10) << "SBS D-1" << std::setw(10) << "SemFail"
      << std::setw(8) << "N" << "\n";
  for (const auto& r : reports) {
    out << std::left << std::setw(26) << r.variant << std::right << std::setw(10)
        << cell(r.bleu_zeroed ? r.bleu_zeroed : r.bleu_first_sample, 2) << std::setw(10)
        << cell(r.bleu_guided, 2) << std::setw(10) << cell(r.distinct2, 3) << std::setw(10)
        << cell(r.distinct1, 3) << std::setw(10) << cell(r.baseline_distinct2, 3) << std::setw(10)
        << cell(r.baseline_distinct1, 3) << std::setw(10) << cell(r.semantic_failure_rate, 3)
        << std::setw(8) << r.n_instances << "\n";
  }
  return out.str();
}

}  // namespace p2net::metrics
