// Losses, schedules, noise-vector dropout and the optimization loop.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "p2net/autodiff.hpp"
#include "p2net/corpus.hpp"
#include "p2net/decoder.hpp"
#include "p2net/model.hpp"

namespace p2net::training {

inline constexpr double kLogClamp = 1e-7;

struct TrainingConfig {
  double learning_rate = 1e-4;
  double dropout = 0.2;
  double tf_start = 0.95;
  double tf_end = 0.8;
  std::int64_t tf_horizon = 50000;
  int batch_size = 32;
  std::int64_t max_iterations = 50000;
  double noise_full_zero_prob = 0.4;
  double noise_geometric_p = 0.4;
  double clip_norm = 5.0;
  std::uint64_t seed = 1;
  std::int64_t log_every = 50;
  std::int64_t checkpoint_every = 1000;
  std::int64_t validate_every = 1000;

  void validate() const;
};

nlohmann::json to_json(const TrainingConfig& c);
TrainingConfig training_config_from_json(const nlohmann::json& j, TrainingConfig base = {});

struct LossBreakdown {
  double gen = 0.0;
  double word = 0.0;
  double final = 0.0;
  std::size_t positions = 0;  // unmasked positions contributing
  std::size_t instances = 1;  // gen and word are averages over this many

  double word_per_token() const {
    return positions == 0 ? 0.0 : word * static_cast<double>(instances) / static_cast<double>(positions);
  }
};

// y = 1 for word positions, 0 for slot positions. Positions whose `valid`
// entry is false (padding) contribute nothing.
ad::Expr gen_loss(ad::Graph& g, const std::vector<decoder::StepExprs>& steps,
                  const std::vector<decoder::DecodedToken>& ground_truth,
                  const std::vector<bool>* valid = nullptr);
ad::Expr word_loss(ad::Graph& g, const std::vector<decoder::StepExprs>& steps,
                   const std::vector<decoder::DecodedToken>& ground_truth,
                   const std::vector<bool>* valid = nullptr);

// Plain-number versions over already-evaluated step outputs.
double compute_gen_loss(const std::vector<decoder::DecodeStepOutput>& steps,
                        const std::vector<decoder::DecodedToken>& ground_truth,
                        const std::vector<bool>* valid = nullptr);
double compute_word_loss(const std::vector<decoder::DecodeStepOutput>& steps,
                         const std::vector<decoder::DecodedToken>& ground_truth,
                         const std::vector<bool>* valid = nullptr);

double teacher_forcing_ratio(std::int64_t iteration, const TrainingConfig& cfg = {});

struct NoiseDropoutDraw {
  bool full_zero = false;
  int k = 0;  // zeroed for steps t < k

  bool zeroed_at(int t) const { return full_zero || t < k; }
};

NoiseDropoutDraw draw_noise_dropout(std::mt19937_64& rng, const TrainingConfig& cfg = {});
ad::Expr apply_noise_dropout(ad::Graph& g, ad::Expr noise, const NoiseDropoutDraw& draw, int t);

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ad::ParameterCollection& params);
  std::int64_t steps() const { return t_; }

  struct Moments {
    ad::Matrix m;
    ad::Matrix v;
  };
  std::map<std::string, Moments>& moments() { return moments_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }
  void set_steps(std::int64_t t) { t_ = t; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

struct InstanceLoss {
  ad::Expr gen;
  ad::Expr word;
  ad::Expr final;
  std::size_t positions = 0;
};

// Builds the teacher-forced loss graph for one instance.
InstanceLoss instance_loss(ad::Graph& g, const P2NetModel& model,
                           const corpus::TrainingInstance& inst, double tf_ratio,
                           const NoiseDropoutDraw& draw, std::mt19937_64& rng);

struct LogEntry {
  std::int64_t iteration = 0;
  LossBreakdown loss;
  double tf_ratio = 0.0;
  nlohmann::json validation;  // null when not validated this iteration
};

using Validator = std::function<nlohmann::json(P2NetModel&)>;

class Trainer {
 public:
  Trainer(P2NetModel& model, TrainingConfig cfg);

  // One optimizer step over a batch. Returns per-instance averaged losses;
  // `positions` is the total over the batch.
  LossBreakdown train_batch(const std::vector<corpus::TrainingInstance>& batch);

  // Samples batches from `sets` (balanced) until max_iterations. Writes
  // train_log.jsonl and checkpoints into out_dir when it is non-empty.
  // The validator result must carry a numeric "bleu_zeroed" for selection.
  std::vector<LogEntry> run(const std::vector<corpus::ParaphraseSet>& sets,
                            const std::filesystem::path& out_dir,
                            const Validator& validator = {},
                            const std::function<void(const LogEntry&)>& on_log = {});

  std::int64_t iteration() const { return iteration_; }
  void set_iteration(std::int64_t it) { iteration_ = it; }
  std::mt19937_64& rng() { return rng_; }
  Adam& optimizer() { return adam_; }
  const TrainingConfig& config() const { return cfg_; }
  // Merged into the metadata of every checkpoint written by run().
  void set_checkpoint_extra(nlohmann::json extra) { checkpoint_extra_ = std::move(extra); }

 private:
  P2NetModel& model_;
  TrainingConfig cfg_;
  Adam adam_;
  std::mt19937_64 rng_;
  std::int64_t iteration_ = 0;
  nlohmann::json checkpoint_extra_ = nlohmann::json::object();
};

// --- checkpoints ---------------------------------------------------------------

struct CheckpointMeta {
  ModelConfig model;
  TrainingConfig training;
  std::int64_t iteration = 0;
  std::string rng_state;
  nlohmann::json extra;
};

void save_checkpoint(const std::filesystem::path& path, const P2NetModel& model,
                     const CheckpointMeta& meta, const Adam* optimizer = nullptr);
// Rebuilds the model from the archive; restores optimizer moments when given.
std::unique_ptr<P2NetModel> load_checkpoint(const std::filesystem::path& path,
                                            CheckpointMeta* meta = nullptr,
                                            Adam* optimizer = nullptr);

}  // namespace p2net::training
