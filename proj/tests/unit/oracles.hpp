// Independent reference computations shared by the unit and acceptance tests.
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "p2net/autodiff.hpp"
#include "p2net/decoder.hpp"
#include "p2net/inference.hpp"

namespace p2net::fixtures {

// --- losses ----------------------------------------------------------------------

struct LossCase {
  std::vector<decoder::DecodeStepOutput> steps;
  std::vector<decoder::DecodedToken> gt;
};

LossCase random_loss_case(std::mt19937_64& rng);

// Binary cross-entropy on the gate, summed over positions.
double hand_gen(const LossCase& c);
// NLL of each realized token under its own branch distribution.
double hand_word(const LossCase& c);

std::vector<decoder::StepExprs> as_exprs(ad::Graph& g, const LossCase& c);

// --- a toy step model for the searches ------------------------------------------------

// Deterministic pseudo-random distributions keyed on the emitted prefix.
class ToyStepModel : public inference::StepModel {
 public:
  ToyStepModel(std::size_t slots, int words, std::uint64_t seed)
      : slots_(slots), words_(words), seed_(seed) {}

  std::size_t num_slots() const override { return slots_; }
  decoder::DecodedToken start_token() const override { return decoder::DecodedToken::Word(-1); }
  int eos_id() const override { return 0; }
  State initial() override;
  StepResult step(const State& state, const decoder::DecodedToken& prev,
                  const decoder::SlotMask& mask) override;

  decoder::DecodeStepOutput output(const std::vector<decoder::DecodedToken>& prefix,
                                   const decoder::SlotMask& mask) const;

 private:
  std::size_t slots_;
  int words_;
  std::uint64_t seed_;
};

struct CompleteSequence {
  std::vector<decoder::DecodedToken> tokens;
  double log_prob;
};

// Every terminal sequence (ended, or cut at max_length) with its log-probability,
// computed straight from the step outputs.
std::vector<CompleteSequence> enumerate_sequences(const ToyStepModel& m, int max_length);

// Best terminal sequence under the length-normalized log-probability.
const CompleteSequence& normalized_argmax(const std::vector<CompleteSequence>& all);

// --- metrics --------------------------------------------------------------------------

double brute_distinct(const std::vector<std::vector<std::string>>& samples, int n);

}  // namespace p2net::fixtures
