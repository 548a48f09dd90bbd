// Shared fixtures for the unit and acceptance tests.
#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "p2net/autodiff.hpp"
#include "p2net/corpus.hpp"
#include "p2net/embedding.hpp"
#include "p2net/model.hpp"

namespace p2net::fixtures {

std::filesystem::path data_dir();

// The bundled 50-dialogue synthetic corpus, split into sentences.
struct Fixture {
  std::vector<corpus::Record> records;
  std::vector<corpus::ParaphraseSet> sets;  // min 3 members
  embedding::Vocabulary vocab;
  embedding::SlotTypeTable types;
};
const Fixture& fixture();

// A set whose members each carry at least `min_slots` slots.
const corpus::ParaphraseSet& set_with_slots(std::size_t min_slots);

std::unique_ptr<P2NetModel> tiny_model(Variant v = Variant::kGtCtxProtoSlotsTmpl,
                                       std::uint64_t seed = 1, int hidden = 8, int word = 6);

struct GradCheck {
  double max_rel = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

// Central differences on up to `per_param` entries of each parameter named in
// `names` (prefix match). Relative error is per parameter over the sampled
// entries: |a - n| / max(|a|, |n|), with both-near-zero counted as exact.
GradCheck grad_check(ad::ParameterCollection& params, const std::vector<std::string>& names,
                     const std::function<ad::Expr(ad::Graph&)>& loss, std::size_t per_param = 12,
                     double h = 1e-6);

}  // namespace p2net::fixtures
