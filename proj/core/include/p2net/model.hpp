// Full model wiring: embeddings, the three encoders and the decoder, with the
// ablation variants expressed as encoder on/off switches.
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "p2net/autodiff.hpp"
#include "p2net/corpus.hpp"
#include "p2net/decoder.hpp"
#include "p2net/embedding.hpp"
#include "p2net/encoders.hpp"

namespace p2net {

enum class Variant {
  kCtxSlots,            // (1) Context + Slots
  kCtxSlotsTmpl,        // (2) Context + Slots + Template
  kCtxProtoSlotsTmpl,   // (3) Context (proto) + Slots + Template
  kGtCtxProtoSlotsTmpl, // (4) GT + Context (proto) + Slots + Template
  kGtCtxSlotsTmpl,      // (5) GT + Context + Slots + Template
  kGtSlotsTmpl,         // (6) GT + Slots + Template
};

struct VariantFlags {
  bool use_template = true;
  bool use_context = true;
  bool context_prototypes = true;
  bool use_ground_truth = true;
};

VariantFlags flags_of(Variant v);
std::string to_string(Variant v);
Variant parse_variant(const std::string& name);  // throws ConfigError listing valid names
const std::vector<std::string>& variant_names();

struct ModelConfig {
  embedding::EmbeddingConfig embedding;
  encoders::EncoderConfig encoder;
  decoder::DecoderConfig decoder;
  Variant variant = Variant::kGtCtxProtoSlotsTmpl;
  std::uint64_t seed = 1;

  // Shrinks every width by the same rule; used for desk-scale runs and tests.
  static ModelConfig small(int hidden = 64, int word = 32);
  void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

// Where the paraphrasing-noise vector comes from.
enum class NoiseSource { kGroundTruth, kZero, kWeights };

class P2NetModel {
 public:
  P2NetModel(const ModelConfig& config, embedding::Vocabulary vocab,
             embedding::SlotTypeTable slot_types);
  P2NetModel(const P2NetModel&) = delete;
  P2NetModel& operator=(const P2NetModel&) = delete;

  // Builds the StyleBundle. `weights` is required for NoiseSource::kWeights.
  encoders::StyleBundle encode(ad::Graph& g, const corpus::TrainingInstance& inst,
                               NoiseSource noise, const ad::Vector* weights = nullptr) const;

  decoder::SlotInputs slot_inputs(ad::Graph& g, const std::vector<corpus::SlotFill>& slots) const;
  decoder::TokenEmbedFn embed_fn(ad::Graph& g, const decoder::SlotInputs& slots) const;

  std::vector<decoder::DecodedToken> to_decoded(const corpus::AnnotatedResponse& r) const;
  corpus::AnnotatedResponse to_response(const std::vector<decoder::DecodedToken>& tokens,
                                        const std::vector<corpus::SlotFill>& slots) const;

  const ModelConfig& config() const { return config_; }
  VariantFlags flags() const { return flags_of(config_.variant); }
  ad::ParameterCollection& params() { return params_; }
  const ad::ParameterCollection& params() const { return params_; }
  const embedding::Vocabulary& vocab() const { return vocab_; }
  const embedding::SlotTypeTable& slot_types() const { return slot_types_; }
  const embedding::Embedder& embedder() const { return *embedder_; }
  embedding::Embedder& embedder() { return *embedder_; }
  const encoders::SemanticEncoder* semantic_encoder() const { return semantic_.get(); }
  const encoders::ContextStyleEncoder* context_encoder() const { return context_.get(); }
  const encoders::NoiseEncoder& noise_encoder() const { return *noise_; }
  const decoder::Decoder& decoder() const { return *decoder_; }
  int prototype_count() const { return config_.encoder.prototypes; }

 private:
  std::vector<ad::Expr> embed_context_turn(ad::Graph& g, const corpus::Utterance& u) const;

  ModelConfig config_;
  embedding::Vocabulary vocab_;
  embedding::SlotTypeTable slot_types_;
  ad::ParameterCollection params_;
  std::mt19937_64 init_rng_;
  std::unique_ptr<embedding::Embedder> embedder_;
  std::unique_ptr<encoders::SemanticEncoder> semantic_;
  std::unique_ptr<encoders::ContextStyleEncoder> context_;
  std::unique_ptr<encoders::NoiseEncoder> noise_;
  std::unique_ptr<decoder::Decoder> decoder_;
};

}  // namespace p2net
