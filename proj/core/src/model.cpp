#include "p2net/model.hpp"

#include <algorithm>
#include <stdexcept>

#include "p2net/errors.hpp"

namespace p2net {

namespace {

struct VariantInfo {
  Variant variant;
  const char* name;
  VariantFlags flags;
};

const VariantInfo kVariants[] = {
    {Variant::kCtxSlots, "ctx_slots", {false, true, false, false}},
    {Variant::kCtxSlotsTmpl, "ctx_slots_tmpl", {true, true, false, false}},
    {Variant::kCtxProtoSlotsTmpl, "ctxproto_slots_tmpl", {true, true, true, false}},
    {Variant::kGtCtxProtoSlotsTmpl, "gt_ctxproto_slots_tmpl", {true, true, true, true}},
    {Variant::kGtCtxSlotsTmpl, "gt_ctx_slots_tmpl", {true, true, false, true}},
    {Variant::kGtSlotsTmpl, "gt_slots_tmpl", {true, false, false, true}},
};

const VariantInfo& info(Variant v) {
  for (const auto& i : kVariants) {
    if (i.variant == v) return i;
  }
  throw std::logic_error("unknown variant");
}

}  // namespace

VariantFlags flags_of(Variant v) { return info(v).flags; }
std::string to_string(Variant v) { return info(v).name; }

const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& i : kVariants) n.emplace_back(i.name);
    return n;
  }();
  return names;
}

Variant parse_variant(const std::string& name) {
  for (const auto& i : kVariants) {
    if (name == i.name) return i.variant;
  }
  std::string valid;
  for (const auto& n : variant_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw ConfigError("unknown variant '" + name + "' (valid: " + valid + ")");
}

ModelConfig ModelConfig::small(int hidden, int word) {
  ModelConfig c;
  c.embedding.d_word = word;
  c.embedding.d_slot = hidden;
  c.embedding.d_model = hidden;
  c.encoder.hidden = hidden;
  c.encoder.attention = hidden;
  c.encoder.context_style = std::max(2, hidden / 2);
  c.encoder.response_noise = std::max(2, hidden / 8);
  c.decoder.hidden = hidden;
  c.decoder.attention = hidden;
  return c;
}

void ModelConfig::validate() const {
  embedding.validate();
  if (encoder.hidden <= 0 || encoder.hidden % 2 != 0) {
    throw ConfigError("encoder hidden width must be positive and even");
  }
  if (encoder.prototypes < 1) throw ConfigError("at least one prototype is required");
  if (encoder.context_style < 1 || encoder.response_noise < 1 || encoder.attention < 1) {
    throw ConfigError("encoder widths must be positive");
  }
  if (decoder.hidden < 1 || decoder.attention < 1) throw ConfigError("decoder widths must be positive");
  if (decoder.max_length < 1) throw ConfigError("max_length must be positive");
  if (decoder.delta <= 0.0 || decoder.delta >= 1.0) throw ConfigError("delta must lie in (0,1)");
  if (encoder.dropout < 0.0 || encoder.dropout >= 1.0 || decoder.dropout < 0.0 ||
      decoder.dropout >= 1.0) {
    throw ConfigError("dropout must lie in [0,1)");
  }
}

nlohmann::json to_json(const ModelConfig& c) {
  return {
      {"variant", to_string(c.variant)},
      {"seed", c.seed},
      {"embedding",
       {{"d_word", c.embedding.d_word},
        {"d_slot", c.embedding.d_slot},
        {"d_model", c.embedding.d_model},
        {"max_type_position", c.embedding.max_type_position},
        {"init_scale", c.embedding.init_scale}}},
      {"encoder",
       {{"hidden", c.encoder.hidden},
        {"attention", c.encoder.attention},
        {"context_style", c.encoder.context_style},
        {"response_noise", c.encoder.response_noise},
        {"prototypes", c.encoder.prototypes},
        {"dropout", c.encoder.dropout}}},
      {"decoder",
       {{"hidden", c.decoder.hidden},
        {"attention", c.decoder.attention},
        {"delta", c.decoder.delta},
        {"max_length", c.decoder.max_length},
        {"dropout", c.decoder.dropout}}},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c) {
  try {
    if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("embedding")) {
      const auto& e = j.at("embedding");
      c.embedding.d_word = e.value("d_word", c.embedding.d_word);
      c.embedding.d_slot = e.value("d_slot", c.embedding.d_slot);
      c.embedding.d_model = e.value("d_model", c.embedding.d_model);
      c.embedding.max_type_position = e.value("max_type_position", c.embedding.max_type_position);
      c.embedding.init_scale = e.value("init_scale", c.embedding.init_scale);
    }
    if (j.contains("encoder")) {
      const auto& e = j.at("encoder");
      c.encoder.hidden = e.value("hidden", c.encoder.hidden);
      c.encoder.attention = e.value("attention", c.encoder.attention);
      c.encoder.context_style = e.value("context_style", c.encoder.context_style);
      c.encoder.response_noise = e.value("response_noise", c.encoder.response_noise);
      c.encoder.prototypes = e.value("prototypes", c.encoder.prototypes);
      c.encoder.dropout = e.value("dropout", c.encoder.dropout);
    }
    if (j.contains("decoder")) {
      const auto& d = j.at("decoder");
      c.decoder.hidden = d.value("hidden", c.decoder.hidden);
      c.decoder.attention = d.value("attention", c.decoder.attention);
      c.decoder.delta = d.value("delta", c.decoder.delta);
      c.decoder.max_length = d.value("max_length", c.decoder.max_length);
      c.decoder.dropout = d.value("dropout", c.decoder.dropout);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad model config: ") + e.what());
  }
  c.validate();
  return c;
}

P2NetModel::P2NetModel(const ModelConfig& config, embedding::Vocabulary vocab,
                       embedding::SlotTypeTable slot_types)
    : config_(config),
      vocab_(std::move(vocab)),
      slot_types_(std::move(slot_types)),
      init_rng_(config.seed) {
  config_.validate();
  const VariantFlags f = flags();
  const int d_model = config_.embedding.d_model;
  embedder_ = std::make_unique<embedding::Embedder>(params_, vocab_, slot_types_,
                                                    config_.embedding, init_rng_);
  if (f.use_template) {
    semantic_ = std::make_unique<encoders::SemanticEncoder>(params_, d_model, config_.encoder, init_rng_);
  }
  if (f.use_context) {
    context_ = std::make_unique<encoders::ContextStyleEncoder>(params_, d_model, config_.encoder,
                                                               f.context_prototypes, init_rng_);
  }
  noise_ = std::make_unique<encoders::NoiseEncoder>(params_, d_model, config_.encoder, init_rng_);
  decoder_ = std::make_unique<decoder::Decoder>(
      params_, d_model, vocab_.size(), config_.encoder.hidden, config_.encoder.context_style,
      config_.encoder.response_noise, config_.decoder, init_rng_);
  decoder_->set_markers(embedding::Vocabulary::kSos, embedding::Vocabulary::kEos);
}

std::vector<ad::Expr> P2NetModel::embed_context_turn(ad::Graph& g, const corpus::Utterance& u) const {
  std::vector<ad::Expr> out;
  out.reserve(u.tokens.size() + 1);
  out.push_back(embedder_->word(g, u.speaker == corpus::Speaker::kUser ? embedding::Vocabulary::kUser
                                                                       : embedding::Vocabulary::kSystem));
  for (const auto& w : u.tokens) out.push_back(embedder_->word(g, vocab_.index(w)));
  return out;
}

encoders::StyleBundle P2NetModel::encode(ad::Graph& g, const corpus::TrainingInstance& inst,
                                         NoiseSource noise, const ad::Vector* weights) const {
  const VariantFlags f = flags();
  encoders::StyleBundle b;

  if (f.use_template) {
    // Template slot values are replaced by the instance's fills of the same
    // (type, position) so the template carries only its wording.
    std::vector<corpus::SlotFill> fills = inst.template_response.slots;
    for (auto& fill : fills) {
      for (const auto& s : inst.slots) {
        if (s.type == fill.type && s.type_position == fill.type_position) {
          fill.value = s.value;
          break;
        }
      }
    }
    auto tokens = embedder_->tokens(g, inst.template_response.tokens, fills);
    if (tokens.empty()) throw DataError("empty template response");
    auto r = semantic_->encode(g, tokens);
    b.semantics = r.semantics;
    b.semantic_attention = r.weights.value().col(0);
  } else {
    b.semantics = g.zeros(config_.encoder.hidden);
  }

  if (f.use_context) {
    std::vector<std::vector<ad::Expr>> turns;
    for (const auto& u : inst.context.turns) turns.push_back(embed_context_turn(g, u));
    auto r = context_->encode(g, turns);
    b.context_style = r.style;
    if (r.weights.valid()) b.context_prototype_weights = r.weights.value().col(0);
  } else {
    b.context_style = g.zeros(config_.encoder.context_style);
  }

  if (!f.use_ground_truth || noise == NoiseSource::kZero) {
    b.response_noise = g.zeros(config_.encoder.response_noise);
  } else if (noise == NoiseSource::kGroundTruth) {
    auto tokens = embedder_->tokens(g, inst.ground_truth.tokens, inst.ground_truth.slots);
    if (tokens.empty()) throw DataError("empty ground-truth response");
    auto r = noise_->encode(g, tokens);
    b.response_noise = r.noise;
    b.noise_weights = r.weights.value().col(0);
  } else {
    if (weights == nullptr) throw std::invalid_argument("prototype weights required");
    b.response_noise = noise_->from_weights(g, *weights);
    b.noise_weights = *weights;
  }
  return b;
}

decoder::SlotInputs P2NetModel::slot_inputs(ad::Graph& g,
                                            const std::vector<corpus::SlotFill>& slots) const {
  std::vector<ad::Expr> e;
  e.reserve(slots.size());
  for (const auto& s : slots) e.push_back(embedder_->slot_to_model(g, embedder_->slot(g, s)));
  return decoder::make_slot_inputs(e);
}

decoder::TokenEmbedFn P2NetModel::embed_fn(ad::Graph& g, const decoder::SlotInputs& slots) const {
  return [this, &g, &slots](const decoder::DecodedToken& t) {
    if (t.is_slot) return slots.embeddings.at(static_cast<std::size_t>(t.index));
    return embedder_->word(g, t.index);
  };
}

std::vector<decoder::DecodedToken> P2NetModel::to_decoded(const corpus::AnnotatedResponse& r) const {
  std::vector<decoder::DecodedToken> out;
  out.reserve(r.tokens.size());
  for (const auto& t : r.tokens) {
    out.push_back(t.is_slot() ? decoder::DecodedToken::Slot(t.slot)
                              : decoder::DecodedToken::Word(vocab_.index(t.word)));
  }
  return out;
}

corpus::AnnotatedResponse P2NetModel::to_response(const std::vector<decoder::DecodedToken>& tokens,
                                                  const std::vector<corpus::SlotFill>& slots) const {
  corpus::AnnotatedResponse r;
  r.slots = slots;
  for (const auto& t : tokens) {
    r.tokens.push_back(t.is_slot ? corpus::Token::Slot(t.index) : corpus::Token::Word(vocab_.token(t.index)));
  }
  return r;
}

}  // namespace p2net
