// Diverse generation by prototype-weight sampling and the beam-search
// baselines (plain, stochastic, diverse) over the joint slot/word process.
#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "p2net/corpus.hpp"
#include "p2net/decoder.hpp"
#include "p2net/model.hpp"

namespace p2net::inference {

enum class Strategy { kGreedy, kSamplePrototypes, kBeam, kStochasticBeam, kDiverseBeam };

std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& name);  // throws ConfigError

struct DecodingConfig {
  Strategy strategy = Strategy::kSamplePrototypes;
  int n = 8;
  int beam = 8;
  int groups = 4;
  double gamma = 1.0;
  double alpha = 0.25;
  double delta = 0.5;
  int max_length = 60;
  double temperature = 1.0;
  bool zero_noise = false;  // greedy only: zeroed rather than ground-truth-guided noise
  std::uint64_t seed = 1;

  void validate() const;
};

nlohmann::json to_json(const DecodingConfig& c);
DecodingConfig decoding_config_from_json(const nlohmann::json& j, DecodingConfig base = {});

// Symmetric Dirichlet(alpha) draw on the K-simplex.
ad::Vector sample_prototype_weights(int k, double alpha, std::mt19937_64& rng);

// --- step-model abstraction used by the beam searches -----------------------------

class StepModel {
 public:
  using State = std::shared_ptr<const void>;
  struct StepResult {
    State state;
    decoder::DecodeStepOutput out;
  };

  virtual ~StepModel() = default;
  virtual std::size_t num_slots() const = 0;
  virtual decoder::DecodedToken start_token() const = 0;
  virtual int eos_id() const = 0;
  virtual State initial() = 0;
  // Consumes `prev` from `state` under `mask` (the slots still available).
  virtual StepResult step(const State& state, const decoder::DecodedToken& prev,
                          const decoder::SlotMask& mask) = 0;
};

// Adapter over a trained model for one instance. Holds its own graph.
class ModelStepper : public StepModel {
 public:
  ModelStepper(const P2NetModel& model, const corpus::TrainingInstance& inst, NoiseSource noise,
               const ad::Vector* weights = nullptr);
  ~ModelStepper() override;

  std::size_t num_slots() const override;
  decoder::DecodedToken start_token() const override;
  int eos_id() const override;
  State initial() override;
  StepResult step(const State& state, const decoder::DecodedToken& prev,
                  const decoder::SlotMask& mask) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct ScoredToken {
  decoder::DecodedToken token;
  double log_prob;
};

// Joint token space: available slots with (1-p_gen) p_slot and words with
// p_gen p_word; words alone with p_word once every slot is consumed.
// Zero-probability entries are omitted.
std::vector<ScoredToken> joint_log_probs(const decoder::DecodeStepOutput& out,
                                         const decoder::SlotMask& mask);

struct Hypothesis {
  std::vector<decoder::DecodedToken> tokens;  // includes the end marker if ended
  double log_prob = 0.0;
  double score = 0.0;  // ranking score (normalized, perturbed or penalized)
  bool ended = false;
  int group = 0;
  decoder::SlotMask mask;
};

// Greedy argmax over the joint distribution (the B = 1 reference).
Hypothesis greedy_joint(StepModel& m, int max_length);

// Length-normalized beam search; returns up to `beam` hypotheses, best first.
std::vector<Hypothesis> beam_search(StepModel& m, int beam, int max_length);

// Gumbel-top-k stochastic beam search; returns `beam` samples without
// replacement ordered by perturbed score.
std::vector<Hypothesis> stochastic_beam_search(StepModel& m, int beam, int max_length,
                                               std::mt19937_64& rng, double temperature = 1.0);

// `groups` groups of beam/groups each; a candidate token chosen at this step
// by earlier groups costs gamma per occurrence. Results are grouped in order.
std::vector<Hypothesis> diverse_beam_search(StepModel& m, int beam, int groups, double gamma,
                                            int max_length);

// Shifted Gumbel used by stochastic beam search: the child perturbations
// `raw` are conditioned so that their maximum equals `target`.
std::vector<double> shift_gumbels(const std::vector<double>& raw, double target);

// --- surface forms -------------------------------------------------------------

std::string relexicalize(const corpus::AnnotatedResponse& r);
corpus::AnnotatedResponse delexicalize(const std::string& surface,
                                       const std::vector<corpus::SlotFill>& slots);

// --- batch generation ----------------------------------------------------------------

struct Generated {
  corpus::AnnotatedResponse response;
  ad::Vector noise_weights;
  bool semantic_failure = false;
  bool ended = false;
  double score = 0.0;
};

struct GenerationBatch {
  std::string instance_id;
  corpus::TrainingInstance inputs;
  std::vector<Generated> samples;
};

std::string instance_id(const corpus::TrainingInstance& inst);

// Every member of every set becomes a ground truth once; its template is the
// next member of the same set.
std::vector<corpus::TrainingInstance> evaluation_instances(
    const std::vector<corpus::ParaphraseSet>& sets);

Generated decode_greedy(const P2NetModel& model, const corpus::TrainingInstance& inst,
                        NoiseSource noise, const DecodingConfig& cfg,
                        const ad::Vector* weights = nullptr);

// N independent Dirichlet draws, one greedy decode each, inputs fixed.
GenerationBatch generate_diverse(const P2NetModel& model, const corpus::TrainingInstance& inst,
                                 const DecodingConfig& cfg, std::mt19937_64& rng);

// Dispatches on cfg.strategy. Beam strategies decode with zeroed noise.
GenerationBatch generate(const P2NetModel& model, const corpus::TrainingInstance& inst,
                         const DecodingConfig& cfg, std::mt19937_64& rng);

// One JSON object per sample.
std::vector<nlohmann::json> generation_lines(const GenerationBatch& batch, Strategy strategy);

}  // namespace p2net::inference
