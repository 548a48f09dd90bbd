#include "p2net/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "p2net/errors.hpp"

namespace p2net::inference {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

const std::pair<Strategy, const char*> kStrategies[] = {
    {Strategy::kGreedy, "greedy"},
    {Strategy::kSamplePrototypes, "sample_prototypes"},
    {Strategy::kBeam, "beam"},
    {Strategy::kStochasticBeam, "stochastic_beam"},
    {Strategy::kDiverseBeam, "diverse_beam"},
};

bool is_eos(const decoder::DecodedToken& t, int eos) { return !t.is_slot && t.index == eos; }

// log(1 - exp(x)) for x <= 0.
double log1mexp(double x) {
  if (x >= 0.0) return kNegInf;
  return x > -0.693 ? std::log(-std::expm1(x)) : std::log1p(-std::exp(x));
}

double normalized(double log_prob, std::size_t length) {
  return length == 0 ? log_prob : log_prob / static_cast<double>(length);
}

struct Beam {
  Hypothesis hyp;
  StepModel::State state;
};

struct Candidate {
  std::size_t parent;
  decoder::DecodedToken token;
  double log_prob;  // cumulative
  double score;
};

Hypothesis extend(const Beam& parent, const Candidate& c, int eos) {
  Hypothesis h = parent.hyp;
  h.tokens.push_back(c.token);
  h.log_prob = c.log_prob;
  h.score = c.score;
  if (c.token.is_slot) h.mask.consume(static_cast<std::size_t>(c.token.index));
  h.ended = is_eos(c.token, eos);
  return h;
}

decoder::DecodedToken last_token(const StepModel& m, const Hypothesis& h) {
  return h.tokens.empty() ? m.start_token() : h.tokens.back();
}

bool better(const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; }

}  // namespace

std::string to_string(Strategy s) {
  for (const auto& [k, name] : kStrategies) {
    if (k == s) return name;
  }
  throw std::logic_error("unknown strategy");
}

Strategy parse_strategy(const std::string& name) {
  std::string valid;
  for (const auto& [k, n] : kStrategies) {
    if (name == n) return k;
    valid += (valid.empty() ? "" : ", ") + std::string(n);
  }
  throw ConfigError("unknown strategy '" + name + "' (valid: " + valid + ")");
}

void DecodingConfig::validate() const {
  if (!(alpha > 0.0)) throw ConfigError("alpha must be positive");
  if (n < 1) throw ConfigError("n must be at least 1");
  if (beam < 1) throw ConfigError("beam must be at least 1");
  if (strategy == Strategy::kDiverseBeam && (groups < 1 || beam % groups != 0)) {
    throw ConfigError("groups must divide beam for diverse beam search");
  }
  if (gamma < 0.0) throw ConfigError("gamma must be non-negative");
  if (delta <= 0.0 || delta >= 1.0) throw ConfigError("delta must lie in (0,1)");
  if (max_length < 1) throw ConfigError("max_length must be positive");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
}

nlohmann::json to_json(const DecodingConfig& c) {
  return {{"strategy", to_string(c.strategy)}, {"n", c.n},         {"beam", c.beam},
          {"groups", c.groups},                {"gamma", c.gamma}, {"alpha", c.alpha},
          {"delta", c.delta},                  {"max_length", c.max_length},
          {"temperature", c.temperature},      {"zero_noise", c.zero_noise},
          {"seed", c.seed}};
}

DecodingConfig decoding_config_from_json(const nlohmann::json& j, DecodingConfig c) {
  try {
    if (j.contains("strategy")) c.strategy = parse_strategy(j.at("strategy").get<std::string>());
    c.n = j.value("n", c.n);
    c.beam = j.value("beam", c.beam);
    c.groups = j.value("groups", c.groups);
    c.gamma = j.value("gamma", c.gamma);
    c.alpha = j.value("alpha", c.alpha);
    c.delta = j.value("delta", c.delta);
    c.max_length = j.value("max_length", c.max_length);
    c.temperature = j.value("temperature", c.temperature);
    c.zero_noise = j.value("zero_noise", c.zero_noise);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad decoding config: ") + e.what());
  }
  c.validate();
  return c;
}

ad::Vector sample_prototype_weights(int k, double alpha, std::mt19937_64& rng) {
  if (k < 1) throw std::invalid_argument("need at least one prototype");
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
  std::gamma_distribution<double> gamma(alpha, 1.0);
  ad::Vector w(k);
  for (int i = 0; i < k; ++i) w(i) = gamma(rng);
  const double total = w.sum();
  if (total <= 0.0) {
    // Every draw underflowed; the limit of the normalized vector is a vertex.
    std::uniform_int_distribution<int> pick(0, k - 1);
    w.setZero();
    w(pick(rng)) = 1.0;
    return w;
  }
  return w / total;
}

// --- model stepper -------------------------------------------------------------------

struct ModelStepper::Impl {
  const P2NetModel& model;
  ad::Graph graph;
  encoders::StyleBundle bundle;
  decoder::SlotInputs slots;
  decoder::TokenEmbedFn embed;

  Impl(const P2NetModel& m, const corpus::TrainingInstance& inst, NoiseSource noise,
       const ad::Vector* weights)
      : model(m) {
    bundle = model.encode(graph, inst, noise, weights);
    slots = model.slot_inputs(graph, inst.slots);
    embed = model.embed_fn(graph, slots);
  }
};

ModelStepper::ModelStepper(const P2NetModel& model, const corpus::TrainingInstance& inst,
                           NoiseSource noise, const ad::Vector* weights)
    : impl_(std::make_unique<Impl>(model, inst, noise, weights)) {}

ModelStepper::~ModelStepper() = default;

std::size_t ModelStepper::num_slots() const { return impl_->slots.size(); }

decoder::DecodedToken ModelStepper::start_token() const {
  return decoder::DecodedToken::Word(impl_->model.decoder().sos_id());
}

int ModelStepper::eos_id() const { return impl_->model.decoder().eos_id(); }

StepModel::State ModelStepper::initial() {
  return std::make_shared<const decoder::DecoderState>(
      impl_->model.decoder().init_state(impl_->graph, impl_->bundle, impl_->slots.size()));
}

StepModel::StepResult ModelStepper::step(const State& state, const decoder::DecodedToken& prev,
                                         const decoder::SlotMask& mask) {
  auto next = std::make_shared<decoder::DecoderState>(
      *static_cast<const decoder::DecoderState*>(state.get()));
  next->mask = mask;
  auto exprs = impl_->model.decoder().step(impl_->graph, *next, impl_->embed(prev), impl_->bundle,
                                           impl_->bundle.response_noise, impl_->slots);
  StepResult r;
  r.out = decoder::values(exprs, impl_->slots.size());
  r.state = std::move(next);
  return r;
}

// --- searches ------------------------------------------------------------------------

std::vector<ScoredToken> joint_log_probs(const decoder::DecodeStepOutput& out,
                                         const decoder::SlotMask& mask) {
  std::vector<ScoredToken> result;
  const bool slots_left = mask.any_available();
  const double word_weight = slots_left ? out.p_gen : 1.0;
  if (slots_left) {
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (!mask.available(i)) continue;
      const double p = (1.0 - out.p_gen) * out.p_slot(static_cast<Eigen::Index>(i));
      if (p > 0.0) result.push_back({decoder::DecodedToken::Slot(static_cast<int>(i)), std::log(p)});
    }
  }
  for (Eigen::Index w = 0; w < out.p_word.size(); ++w) {
    const double p = word_weight * out.p_word(w);
    if (p > 0.0) result.push_back({decoder::DecodedToken::Word(static_cast<int>(w)), std::log(p)});
  }
  return result;
}

Hypothesis greedy_joint(StepModel& m, int max_length) {
  Hypothesis h;
  h.mask = decoder::SlotMask(m.num_slots());
  StepModel::State state = m.initial();
  for (int t = 0; t < max_length && !h.ended; ++t) {
    auto r = m.step(state, last_token(m, h), h.mask);
    auto cands = joint_log_probs(r.out, h.mask);
    if (cands.empty()) break;
    auto best = std::max_element(cands.begin(), cands.end(), [](const auto& a, const auto& b) {
      return a.log_prob < b.log_prob;
    });
    h.tokens.push_back(best->token);
    h.log_prob += best->log_prob;
    if (best->token.is_slot) h.mask.consume(static_cast<std::size_t>(best->token.index));
    h.ended = is_eos(best->token, m.eos_id());
    state = r.state;
  }
  h.score = normalized(h.log_prob, h.tokens.size());
  return h;
}

namespace {

// One group of a (possibly diverse) beam search advanced by one step.
// `chosen` counts tokens picked at this step by earlier groups.
void advance_group(StepModel& m, std::vector<Beam>& beams, std::vector<Hypothesis>& finished,
                   int width, double gamma, std::map<std::pair<bool, int>, int>& chosen) {
  std::vector<Candidate> cands;
  std::vector<StepModel::State> next_states(beams.size());
  for (std::size_t b = 0; b < beams.size(); ++b) {
    const Hypothesis& h = beams[b].hyp;
    auto r = m.step(beams[b].state, last_token(m, h), h.mask);
    next_states[b] = r.state;
    // The penalized running score is carried in `score * length`.
    const double prev_total = h.score * static_cast<double>(h.tokens.size());
    for (const auto& st : joint_log_probs(r.out, h.mask)) {
      const double lp = h.log_prob + st.log_prob;
      double total = prev_total + st.log_prob;
      if (gamma > 0.0) {
        auto it = chosen.find({st.token.is_slot, st.token.index});
        if (it != chosen.end()) total -= gamma * it->second;
      }
      cands.push_back({b, st.token, lp, normalized(total, h.tokens.size() + 1)});
    }
  }
  std::stable_sort(cands.begin(), cands.end(),
                   [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
  if (cands.size() > static_cast<std::size_t>(width)) cands.resize(static_cast<std::size_t>(width));
  std::vector<Beam> next;
  for (const auto& c : cands) {
    ++chosen[{c.token.is_slot, c.token.index}];
    Hypothesis h = extend(beams[c.parent], c, m.eos_id());
    if (h.ended) {
      finished.push_back(std::move(h));
    } else {
      next.push_back({std::move(h), next_states[c.parent]});
    }
  }
  beams = std::move(next);
}

std::vector<Hypothesis> grouped_search(StepModel& m, int beam, int groups, double gamma,
                                       int max_length) {
  if (beam < 1) throw std::invalid_argument("beam must be >= 1");
  if (groups < 1 || beam % groups != 0) throw std::invalid_argument("groups must divide beam");
  const int width = beam / groups;
  std::vector<std::vector<Beam>> live(static_cast<std::size_t>(groups));
  std::vector<std::vector<Hypothesis>> finished(static_cast<std::size_t>(groups));
  StepModel::State root = m.initial();
  for (int g = 0; g < groups; ++g) {
    Hypothesis h;
    h.mask = decoder::SlotMask(m.num_slots());
    h.group = g;
    live[static_cast<std::size_t>(g)].push_back({h, root});
  }
  for (int t = 0; t < max_length; ++t) {
    std::map<std::pair<bool, int>, int> chosen;
    bool any = false;
    for (int g = 0; g < groups; ++g) {
      auto& beams = live[static_cast<std::size_t>(g)];
      if (beams.empty()) continue;
      any = true;
      // Each group keeps `width` live-or-finished slots; finished ones leave the beam.
      const int room = width - static_cast<int>(finished[static_cast<std::size_t>(g)].size());
      if (room <= 0) {
        beams.clear();
        continue;
      }
      advance_group(m, beams, finished[static_cast<std::size_t>(g)], room, gamma, chosen);
    }
    if (!any) break;
  }
  std::vector<Hypothesis> out;
  for (int g = 0; g < groups; ++g) {
    auto& fin = finished[static_cast<std::size_t>(g)];
    for (auto& b : live[static_cast<std::size_t>(g)]) fin.push_back(std::move(b.hyp));
    std::stable_sort(fin.begin(), fin.end(), better);
    if (fin.size() > static_cast<std::size_t>(width)) fin.resize(static_cast<std::size_t>(width));
    for (auto& h : fin) out.push_back(std::move(h));
  }
  return out;
}

}  // namespace

std::vector<Hypothesis> beam_search(StepModel& m, int beam, int max_length) {
  return grouped_search(m, beam, 1, 0.0, max_length);
}

std::vector<Hypothesis> diverse_beam_search(StepModel& m, int beam, int groups, double gamma,
                                            int max_length) {
  return grouped_search(m, beam, groups, gamma, max_length);
}

std::vector<double> shift_gumbels(const std::vector<double>& raw, double target) {
  if (raw.empty()) return {};
  const double z = *std::max_element(raw.begin(), raw.end());
  std::vector<double> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double v = target - raw[i] + log1mexp(raw[i] - z);
    out[i] = target - std::max(0.0, v) - std::log1p(std::exp(-std::abs(v)));
  }
  return out;
}

std::vector<Hypothesis> stochastic_beam_search(StepModel& m, int beam, int max_length,
                                               std::mt19937_64& rng, double temperature) {
  if (beam < 1) throw std::invalid_argument("beam must be >= 1");
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  std::extreme_value_distribution<double> gumbel(0.0, 1.0);
  std::vector<Beam> beams;
  {
    Hypothesis h;
    h.mask = decoder::SlotMask(m.num_slots());
    h.score = 0.0;  // root perturbed log-probability
    beams.push_back({h, m.initial()});
  }
  std::vector<Hypothesis> finished;
  for (int t = 0; t < max_length && !beams.empty(); ++t) {
    std::vector<Candidate> cands;
    std::vector<StepModel::State> next_states(beams.size());
    for (std::size_t b = 0; b < beams.size(); ++b) {
      const Hypothesis& h = beams[b].hyp;
      auto r = m.step(beams[b].state, last_token(m, h), h.mask);
      next_states[b] = r.state;
      auto scored = joint_log_probs(r.out, h.mask);
      if (scored.empty()) continue;
      // Tempered, renormalized child log-probabilities.
      double mx = kNegInf;
      for (auto& s : scored) {
        s.log_prob /= temperature;
        mx = std::max(mx, s.log_prob);
      }
      double acc = 0.0;
      for (const auto& s : scored) acc += std::exp(s.log_prob - mx);
      const double log_z = mx + std::log(acc);
      std::vector<double> raw(scored.size());
      for (std::size_t i = 0; i < scored.size(); ++i) {
        scored[i].log_prob -= log_z;
        raw[i] = h.log_prob + scored[i].log_prob + gumbel(rng);
      }
      auto shifted = shift_gumbels(raw, h.score);
      for (std::size_t i = 0; i < scored.size(); ++i) {
        cands.push_back({b, scored[i].token, h.log_prob + scored[i].log_prob, shifted[i]});
      }
    }
    const std::size_t room = static_cast<std::size_t>(beam) - finished.size();
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
    if (cands.size() > room) cands.resize(room);
    std::vector<Beam> next;
    for (const auto& c : cands) {
      Hypothesis h = extend(beams[c.parent], c, m.eos_id());
      if (h.ended) {
        finished.push_back(std::move(h));
      } else {
        next.push_back({std::move(h), next_states[c.parent]});
      }
    }
    beams = std::move(next);
  }
  for (auto& b : beams) finished.push_back(std::move(b.hyp));
  std::stable_sort(finished.begin(), finished.end(), better);
  return finished;
}

// --- surface forms -------------------------------------------------------------

std::string relexicalize(const corpus::AnnotatedResponse& r) {
  std::string out;
  auto append = [&](const std::string& w) {
    if (!out.empty()) out += ' ';
    out += w;
  };
  for (const auto& t : r.tokens) {
    if (t.is_eos()) continue;
    if (t.is_slot()) {
      if (static_cast<std::size_t>(t.slot) >= r.slots.size()) {
        throw DataError("dangling slot reference " + std::to_string(t.slot));
      }
      for (const auto& w : r.slots[static_cast<std::size_t>(t.slot)].value) append(w);
    } else {
      append(t.word);
    }
  }
  return out;
}

corpus::AnnotatedResponse delexicalize(const std::string& surface,
                                       const std::vector<corpus::SlotFill>& slots) {
  std::vector<std::string> words;
  std::istringstream ss(surface);
  for (std::string w; ss >> w;) words.push_back(w);
  corpus::AnnotatedResponse r;
  r.slots = slots;
  std::vector<bool> used(slots.size(), false);
  std::size_t i = 0;
  while (i < words.size()) {
    int match = -1;
    for (std::size_t s = 0; s < slots.size() && match < 0; ++s) {
      const auto& v = slots[s].value;
      if (used[s] || v.empty() || i + v.size() > words.size()) continue;
      if (std::equal(v.begin(), v.end(), words.begin() + static_cast<long>(i))) {
        match = static_cast<int>(s);
      }
    }
    if (match >= 0) {
      used[static_cast<std::size_t>(match)] = true;
      r.tokens.push_back(corpus::Token::Slot(match));
      i += slots[static_cast<std::size_t>(match)].value.size();
    } else {
      r.tokens.push_back(corpus::Token::Word(words[i]));
      ++i;
    }
  }
  r.tokens.push_back(corpus::Token::Word(corpus::kEos));
  return r;
}

// --- batch generation ------------------------------------------------------------------

std::string instance_id(const corpus::TrainingInstance& inst) {
  const auto& gt = inst.ground_truth;
  return gt.dialogue_id + "/" + std::to_string(gt.turn_index) + "/" + std::to_string(gt.segment);
}

std::vector<corpus::TrainingInstance> evaluation_instances(
    const std::vector<corpus::ParaphraseSet>& sets) {
  std::vector<corpus::TrainingInstance> out;
  for (std::size_t s = 0; s < sets.size(); ++s) {
    const auto n = sets[s].members.size();
    if (n < 2) continue;
    for (std::size_t i = 0; i < n; ++i) {
      auto inst = corpus::make_instance(sets[s], i, (i + 1) % n);
      inst.set_index = s;
      out.push_back(std::move(inst));
    }
  }
  return out;
}

namespace {

Generated from_tokens(const P2NetModel& model, const corpus::TrainingInstance& inst,
                      const std::vector<decoder::DecodedToken>& tokens, bool ended) {
  Generated g;
  g.response = model.to_response(tokens, inst.slots);
  g.response.action = inst.ground_truth.action;
  g.ended = ended;
  std::vector<bool> used(inst.slots.size(), false);
  bool repeated = false;
  for (const auto& t : tokens) {
    if (!t.is_slot) continue;
    const auto i = static_cast<std::size_t>(t.index);
    repeated = repeated || used.at(i);
    used[i] = true;
  }
  const bool all = std::all_of(used.begin(), used.end(), [](bool b) { return b; });
  g.semantic_failure = !ended || !all || repeated;
  return g;
}

Generated from_hypothesis(const P2NetModel& model, const corpus::TrainingInstance& inst,
                          const Hypothesis& h) {
  Generated g = from_tokens(model, inst, h.tokens, h.ended);
  g.score = h.score;
  return g;
}

}  // namespace

Generated decode_greedy(const P2NetModel& model, const corpus::TrainingInstance& inst,
                        NoiseSource noise, const DecodingConfig& cfg, const ad::Vector* weights) {
  ad::Graph g;
  auto bundle = model.encode(g, inst, noise, weights);
  auto slots = model.slot_inputs(g, inst.slots);
  auto result = model.decoder().generate(g, bundle, slots, model.embed_fn(g, slots), cfg.delta,
                                         cfg.max_length, decoder::SelectMode::kGreedy, nullptr);
  Generated out = from_tokens(model, inst, result.tokens, result.ended);
  out.noise_weights = bundle.noise_weights;
  return out;
}

GenerationBatch generate_diverse(const P2NetModel& model, const corpus::TrainingInstance& inst,
                                 const DecodingConfig& cfg, std::mt19937_64& rng) {
  if (!model.flags().use_ground_truth) {
    throw ConfigError("prototype sampling needs a variant with the noise encoder (got " +
                      to_string(model.config().variant) + ")");
  }
  GenerationBatch batch;
  batch.instance_id = instance_id(inst);
  batch.inputs = inst;
  for (int i = 0; i < cfg.n; ++i) {
    ad::Vector w = sample_prototype_weights(model.prototype_count(), cfg.alpha, rng);
    batch.samples.push_back(decode_greedy(model, inst, NoiseSource::kWeights, cfg, &w));
  }
  return batch;
}

GenerationBatch generate(const P2NetModel& model, const corpus::TrainingInstance& inst,
                         const DecodingConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  if (cfg.strategy == Strategy::kSamplePrototypes) return generate_diverse(model, inst, cfg, rng);

  GenerationBatch batch;
  batch.instance_id = instance_id(inst);
  batch.inputs = inst;
  if (cfg.strategy == Strategy::kGreedy) {
    const NoiseSource src = cfg.zero_noise ? NoiseSource::kZero : NoiseSource::kGroundTruth;
    batch.samples.push_back(decode_greedy(model, inst, src, cfg));
    return batch;
  }
  ModelStepper stepper(model, inst, NoiseSource::kZero);
  std::vector<Hypothesis> hyps;
  switch (cfg.strategy) {
    case Strategy::kBeam:
      hyps = beam_search(stepper, cfg.beam, cfg.max_length);
      break;
    case Strategy::kStochasticBeam:
      hyps = stochastic_beam_search(stepper, cfg.beam, cfg.max_length, rng, cfg.temperature);
      break;
    case Strategy::kDiverseBeam:
      hyps = diverse_beam_search(stepper, cfg.beam, cfg.groups, cfg.gamma, cfg.max_length);
      break;
    default:
      break;
  }
  for (const auto& h : hyps) batch.samples.push_back(from_hypothesis(model, inst, h));
  return batch;
}

std::vector<nlohmann::json> generation_lines(const GenerationBatch& batch, Strategy strategy) {
  std::vector<nlohmann::json> out;
  for (std::size_t i = 0; i < batch.samples.size(); ++i) {
    const auto& s = batch.samples[i];
    nlohmann::json tokens = nlohmann::json::array();
    for (const auto& t : s.response.tokens) {
      if (t.is_slot()) {
        tokens.push_back({{"slot", t.slot}});
      } else {
        tokens.push_back(t.word);
      }
    }
    std::vector<double> w(s.noise_weights.data(), s.noise_weights.data() + s.noise_weights.size());
    out.push_back({{"instance_id", batch.instance_id},
                   {"strategy", to_string(strategy)},
                   {"sample_index", i},
                   {"noise_weights", w},
                   {"tokens", tokens},
                   {"surface", relexicalize(s.response)},
                   {"semantic_failure", s.semantic_failure}});
  }
  return out;
}

}  // namespace p2net::inference
