// Distinct-n and slot-aware corpus BLEU, plus the evaluation driver that
// produces the dual-BLEU / diversity report.
#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "p2net/corpus.hpp"
#include "p2net/inference.hpp"
#include "p2net/model.hpp"

namespace p2net::metrics {

using Sentence = std::vector<std::string>;

// Words as-is, each slot as one "<type_position>" symbol, end marker dropped.
Sentence symbols(const corpus::AnnotatedResponse& r);

struct NGramCounts {
  std::size_t unique = 0;  // |union of n-gram sets|
  std::size_t total = 0;   // sum of per-sample n-gram counts
};

NGramCounts ngram_counts(const std::vector<Sentence>& samples, int n);

// |union| / total; 0 when no sample is long enough.
double distinct_n(const std::vector<Sentence>& samples, int n);

// Per-instance scores averaged over instances.
double distinct_macro(const std::vector<std::vector<Sentence>>& instances, int n);
// One union and one total across every sample of every instance.
double distinct_pooled(const std::vector<std::vector<Sentence>>& instances, int n);

struct BleuStats {
  std::size_t correct[4] = {0, 0, 0, 0};
  std::size_t total[4] = {0, 0, 0, 0};
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;
  double precisions[4] = {0, 0, 0, 0};
  double brevity_penalty = 0.0;
  double score = 0.0;  // percent
};

// 4-gram corpus BLEU with brevity penalty (closest reference length, shorter
// on ties). Orders with no match score smoothing/total instead of 0.
BleuStats corpus_bleu_stats(const std::vector<Sentence>& hypotheses,
                            const std::vector<std::vector<Sentence>>& references,
                            double smoothing = 0.1);
double corpus_bleu(const std::vector<Sentence>& hypotheses,
                   const std::vector<std::vector<Sentence>>& references, double smoothing = 0.1);

struct EvaluationConfig {
  inference::DecodingConfig decoding;  // n, alpha, delta, max_length, beam, temperature, seed
  int workers = 1;
  std::size_t max_instances = 0;  // 0 = all
  bool baseline = true;           // stochastic beam comparison
};

struct InstanceResult {
  std::string instance_id;
  Sentence reference;
  Sentence zeroed;
  Sentence guided;
  std::vector<Sentence> sampled;
  std::vector<Sentence> baseline;
  std::size_t sample_failures = 0;
  std::size_t samples = 0;
  bool zeroed_failure = false;
};

struct EvaluationReport {
  std::string variant;
  std::optional<double> bleu_zeroed, bleu_guided;
  std::optional<double> bleu_first_sample;  // generation-file mode
  std::optional<double> distinct1, distinct2;
  std::optional<double> distinct1_pooled, distinct2_pooled;
  std::optional<double> baseline_distinct1, baseline_distinct2;
  double semantic_failure_rate = 0.0;
  std::size_t n_instances = 0;
  std::vector<InstanceResult> instances;
};

EvaluationReport evaluate_model(const P2NetModel& model,
                                 const std::vector<corpus::TrainingInstance>& instances,
                                 const EvaluationConfig& cfg);

nlohmann::json to_json(const EvaluationReport& r);
// Human-readable table with the two BLEU modes and both Distinct pairs.
std::string format_table(const std::vector<EvaluationReport>& reports);

// Scores pre-generated JSONL lines (generation_lines format) against the
// references of their instances. Lines sharing an instance_id form one batch.
EvaluationReport evaluate_generations(const std::vector<nlohmann::json>& lines,
                                      const std::vector<corpus::TrainingInstance>& instances);

}  // namespace p2net::metrics
