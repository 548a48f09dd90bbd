#include "p2net/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "p2net/errors.hpp"

namespace p2net::training {

namespace {

bool in_unit(double x) { return x >= 0.0 && x <= 1.0; }

bool counted(const std::vector<bool>* valid, std::size_t t) {
  return valid == nullptr || t >= valid->size() || (*valid)[t];
}

void check_lengths(std::size_t steps, std::size_t gt) {
  if (steps != gt) {
    throw std::invalid_argument("loss: " + std::to_string(steps) + " step outputs for " +
                                std::to_string(gt) + " ground-truth tokens");
  }
}

double clamp_prob(double p) { return std::clamp(p, kLogClamp, 1.0 - kLogClamp); }

}  // namespace

void TrainingConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (!in_unit(dropout) || !in_unit(tf_start) || !in_unit(tf_end) ||
      !in_unit(noise_full_zero_prob) || !in_unit(noise_geometric_p)) {
    throw ConfigError("probabilities must lie in [0,1]");
  }
  if (noise_geometric_p <= 0.0) throw ConfigError("geometric parameter must be positive");
  if (tf_horizon <= 0) throw ConfigError("teacher forcing horizon must be positive");
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  if (max_iterations < 0) throw ConfigError("max iterations must be non-negative");
  if (!(clip_norm > 0.0)) throw ConfigError("clip norm must be positive");
  if (log_every < 1 || checkpoint_every < 1 || validate_every < 1) {
    throw ConfigError("logging/checkpoint/validation intervals must be positive");
  }
}

nlohmann::json to_json(const TrainingConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"dropout", c.dropout},
          {"tf_start", c.tf_start},
          {"tf_end", c.tf_end},
          {"tf_horizon", c.tf_horizon},
          {"batch_size", c.batch_size},
          {"max_iterations", c.max_iterations},
          {"noise_full_zero_prob", c.noise_full_zero_prob},
          {"noise_geometric_p", c.noise_geometric_p},
          {"clip_norm", c.clip_norm},
          {"seed", c.seed},
          {"log_every", c.log_every},
          {"checkpoint_every", c.checkpoint_every},
          {"validate_every", c.validate_every}};
}

TrainingConfig training_config_from_json(const nlohmann::json& j, TrainingConfig c) {
  try {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.dropout = j.value("dropout", c.dropout);
    c.tf_start = j.value("tf_start", c.tf_start);
    c.tf_end = j.value("tf_end", c.tf_end);
    c.tf_horizon = j.value("tf_horizon", c.tf_horizon);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_iterations = j.value("max_iterations", c.max_iterations);
    c.noise_full_zero_prob = j.value("noise_full_zero_prob", c.noise_full_zero_prob);
    c.noise_geometric_p = j.value("noise_geometric_p", c.noise_geometric_p);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.seed = j.value("seed", c.seed);
    c.log_every = j.value("log_every", c.log_every);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.validate_every = j.value("validate_every", c.validate_every);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad training config: ") + e.what());
  }
  c.validate();
  return c;
}

ad::Expr gen_loss(ad::Graph& g, const std::vector<decoder::StepExprs>& steps,
                  const std::vector<decoder::DecodedToken>& ground_truth,
                  const std::vector<bool>* valid) {
  check_lengths(steps.size(), ground_truth.size());
  std::vector<ad::Expr> terms;
  ad::Expr one = g.scalar_input(1.0);
  for (std::size_t t = 0; t < steps.size(); ++t) {
    if (!counted(valid, t)) continue;
    ad::Expr p = steps[t].p_gen;
    // log(1 - p) clamped below at eps is the same as clamping p at 1 - eps.
    terms.push_back(ground_truth[t].is_slot ? -ad::log_clamped(one - p, kLogClamp)
                                            : -ad::log_clamped(p, kLogClamp));
  }
  return terms.empty() ? g.scalar_input(0.0) : ad::sum(terms);
}

ad::Expr word_loss(ad::Graph& g, const std::vector<decoder::StepExprs>& steps,
                   const std::vector<decoder::DecodedToken>& ground_truth,
                   const std::vector<bool>* valid) {
  check_lengths(steps.size(), ground_truth.size());
  std::vector<ad::Expr> terms;
  for (std::size_t t = 0; t < steps.size(); ++t) {
    if (!counted(valid, t)) continue;
    const auto& gt = ground_truth[t];
    if (gt.is_slot) {
      if (!steps[t].p_slot.valid()) throw DataError("slot position with no available slot");
      terms.push_back(-ad::log_clamped(ad::pick(steps[t].p_slot, gt.index), kLogClamp));
    } else {
      terms.push_back(-ad::log_clamped(ad::pick(steps[t].p_word, gt.index), kLogClamp));
    }
  }
  return terms.empty() ? g.scalar_input(0.0) : ad::sum(terms);
}

double compute_gen_loss(const std::vector<decoder::DecodeStepOutput>& steps,
                        const std::vector<decoder::DecodedToken>& ground_truth,
                        const std::vector<bool>* valid) {
  check_lengths(steps.size(), ground_truth.size());
  double loss = 0.0;
  for (std::size_t t = 0; t < steps.size(); ++t) {
    if (!counted(valid, t)) continue;
    const double p = clamp_prob(steps[t].p_gen);
    const double y = ground_truth[t].is_slot ? 0.0 : 1.0;
    loss -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  return loss;
}

double compute_word_loss(const std::vector<decoder::DecodeStepOutput>& steps,
                         const std::vector<decoder::DecodedToken>& ground_truth,
                         const std::vector<bool>* valid) {
  check_lengths(steps.size(), ground_truth.size());
  double loss = 0.0;
  for (std::size_t t = 0; t < steps.size(); ++t) {
    if (!counted(valid, t)) continue;
    const auto& gt = ground_truth[t];
    const double p = gt.is_slot ? steps[t].p_slot(gt.index) : steps[t].p_word(gt.index);
    loss -= std::log(std::max(p, kLogClamp));
  }
  return loss;
}

double teacher_forcing_ratio(std::int64_t iteration, const TrainingConfig& cfg) {
  if (iteration < 0) throw std::invalid_argument("negative iteration");
  const double frac =
      static_cast<double>(std::min(iteration, cfg.tf_horizon)) / static_cast<double>(cfg.tf_horizon);
  return cfg.tf_start * std::pow(cfg.tf_end / cfg.tf_start, frac);
}

NoiseDropoutDraw draw_noise_dropout(std::mt19937_64& rng, const TrainingConfig& cfg) {
  NoiseDropoutDraw d;
  std::bernoulli_distribution full(cfg.noise_full_zero_prob);
  if (full(rng)) {
    d.full_zero = true;
    return d;
  }
  // Failures before the first success: P(k) = p (1-p)^k, so P(k=0) = p.
  std::geometric_distribution<int> geo(cfg.noise_geometric_p);
  d.k = geo(rng);
  return d;
}

ad::Expr apply_noise_dropout(ad::Graph& g, ad::Expr noise, const NoiseDropoutDraw& draw, int t) {
  return draw.zeroed_at(t) ? g.zeros(noise.rows(), noise.cols()) : noise;
}

void Adam::step(ad::ParameterCollection& params) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (ad::Parameter* p : params.all()) {
    auto it = moments_.find(p->name());
    if (it == moments_.end()) {
      it = moments_
               .emplace(p->name(), Moments{ad::Matrix::Zero(p->rows(), p->cols()),
                                           ad::Matrix::Zero(p->rows(), p->cols())})
               .first;
    }
    Moments& mo = it->second;
    const ad::Matrix& gr = p->grad();
    mo.m = beta1_ * mo.m + (1.0 - beta1_) * gr;
    mo.v = beta2_ * mo.v + (1.0 - beta2_) * gr.cwiseProduct(gr);
    p->value().array() -= lr_ * (mo.m.array() / c1) / ((mo.v.array() / c2).sqrt() + eps_);
  }
}

InstanceLoss instance_loss(ad::Graph& g, const P2NetModel& model,
                           const corpus::TrainingInstance& inst, double tf_ratio,
                           const NoiseDropoutDraw& draw, std::mt19937_64& rng) {
  encoders::StyleBundle bundle = model.encode(g, inst, NoiseSource::kGroundTruth);
  decoder::SlotInputs slots = model.slot_inputs(g, inst.slots);
  std::vector<decoder::DecodedToken> gt = model.to_decoded(inst.ground_truth);
  if (gt.empty()) throw DataError("empty ground-truth response");

  std::bernoulli_distribution forced(tf_ratio);
  std::vector<bool> use_gt(gt.size());
  for (std::size_t t = 0; t < gt.size(); ++t) use_gt[t] = forced(rng);

  auto noise_at = [&](int t) { return apply_noise_dropout(g, bundle.response_noise, draw, t); };
  auto steps = model.decoder().teacher_forced_pass(g, bundle, slots, gt, model.embed_fn(g, slots),
                                                   noise_at, use_gt);
  InstanceLoss out;
  out.gen = gen_loss(g, steps, gt);
  out.word = word_loss(g, steps, gt);
  out.final = out.gen + out.word;
  out.positions = gt.size();
  return out;
}

Trainer::Trainer(P2NetModel& model, TrainingConfig cfg)
    : model_(model), cfg_(cfg), adam_(cfg.learning_rate), rng_(cfg.seed) {
  cfg_.validate();
}

LossBreakdown Trainer::train_batch(const std::vector<corpus::TrainingInstance>& batch) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  auto& params = model_.params();
  params.zero_grad();
  const double tf = teacher_forcing_ratio(iteration_, cfg_);
  LossBreakdown total;
  for (const auto& inst : batch) {
    ad::Graph g;
    g.set_training(true, &rng_);
    NoiseDropoutDraw draw = draw_noise_dropout(rng_, cfg_);
    InstanceLoss l = instance_loss(g, model_, inst, tf, draw, rng_);
    const double gen = l.gen.scalar();
    const double word = l.word.scalar();
    if (!std::isfinite(gen) || !std::isfinite(word)) {
      throw NumericError("non-finite loss at iteration " + std::to_string(iteration_) +
                         " on " + inst.ground_truth.dialogue_id + " turn " +
                         std::to_string(inst.ground_truth.turn_index));
    }
    g.backward(l.final);
    total.gen += gen;
    total.word += word;
    total.positions += l.positions;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  params.scale_grad(inv);
  const double norm = params.grad_norm();
  if (!std::isfinite(norm)) {
    throw NumericError("non-finite gradient norm at iteration " + std::to_string(iteration_));
  }
  if (norm > cfg_.clip_norm) params.scale_grad(cfg_.clip_norm / norm);
  adam_.step(params);
  ++iteration_;

  total.gen *= inv;
  total.word *= inv;
  total.instances = batch.size();
  total.final = total.gen + total.word;
  return total;
}

namespace {

nlohmann::json log_json(const LogEntry& e) {
  nlohmann::json j = {{"iteration", e.iteration},
                      {"L_gen", e.loss.gen},
                      {"L_word", e.loss.word},
                      {"L_final", e.loss.final},
                      {"L_word_per_token", e.loss.word_per_token()},
                      {"tf_ratio", e.tf_ratio}};
  if (!e.validation.is_null()) j["val"] = e.validation;
  return j;
}

nlohmann::json batch_dump(const std::vector<corpus::TrainingInstance>& batch) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& inst : batch) {
    corpus::Record gt{inst.context, inst.ground_truth};
    corpus::Record tmpl{inst.context, inst.template_response};
    arr.push_back({{"ground_truth", corpus::to_json(gt)}, {"template", corpus::to_json(tmpl)}});
  }
  return arr;
}

}  // namespace

std::vector<LogEntry> Trainer::run(const std::vector<corpus::ParaphraseSet>& sets,
                                   const std::filesystem::path& out_dir, const Validator& validator,
                                   const std::function<void(const LogEntry&)>& on_log) {
  if (sets.empty()) throw DataError("no training sets");
  corpus::SamplingSchedule schedule(sets);
  std::ofstream log;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    log.open(out_dir / "train_log.jsonl", std::ios::app);
    if (!log) throw ConfigError("cannot write training log in " + out_dir.string());
  }

  auto meta = [&]() {
    CheckpointMeta m;
    m.model = model_.config();
    m.training = cfg_;
    m.iteration = iteration_;
    std::ostringstream rs;
    rs << rng_;
    m.rng_state = rs.str();
    m.extra = checkpoint_extra_;
    return m;
  };

  std::vector<LogEntry> entries;
  double best_bleu = -1.0;
  while (iteration_ < cfg_.max_iterations) {
    std::vector<corpus::TrainingInstance> batch;
    batch.reserve(static_cast<std::size_t>(cfg_.batch_size));
    for (int b = 0; b < cfg_.batch_size; ++b) {
      batch.push_back(corpus::sample_training_instance(sets, schedule, rng_));
    }
    const double tf = teacher_forcing_ratio(iteration_, cfg_);
    LogEntry e;
    try {
      e.loss = train_batch(batch);
    } catch (const NumericError&) {
      if (!out_dir.empty()) {
        std::ofstream dump(out_dir / "nonfinite_batch.json");
        dump << batch_dump(batch).dump(2) << "\n";
      }
      throw;
    }
    e.iteration = iteration_;
    e.tf_ratio = tf;
    const bool last = iteration_ == cfg_.max_iterations;
    if (validator && (iteration_ % cfg_.validate_every == 0 || last)) {
      e.validation = validator(model_);
      const double bleu = e.validation.value("bleu_zeroed", -1.0);
      if (bleu > best_bleu) {
        best_bleu = bleu;
        if (!out_dir.empty()) {
          CheckpointMeta m = meta();
          m.extra["selected_by"] = "bleu_zeroed";
          m.extra["validation"] = e.validation;
          save_checkpoint(out_dir / "best.ckpt", model_, m, &adam_);
        }
      }
    }
    if (!out_dir.empty() && (iteration_ % cfg_.checkpoint_every == 0 || last)) {
      save_checkpoint(out_dir / "last.ckpt", model_, meta(), &adam_);
    }
    if (iteration_ % cfg_.log_every == 0 || iteration_ == 1 || last || !e.validation.is_null()) {
      if (log) log << log_json(e).dump() << "\n" << std::flush;
      if (on_log) on_log(e);
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

// --- checkpoints ---------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'P', '2', 'N', 'E', 'T', 'C', 'K', '1'};

void write_matrix(std::ostream& out, const ad::Matrix& m) {
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
}

void read_matrix(std::istream& in, ad::Matrix& m) {
  in.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
  if (!in) throw DataError("truncated checkpoint");
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const P2NetModel& model,
                     const CheckpointMeta& meta, const Adam* optimizer) {
  nlohmann::json header;
  header["model"] = to_json(meta.model);
  header["training"] = to_json(meta.training);
  header["iteration"] = meta.iteration;
  header["rng_state"] = meta.rng_state;
  header["extra"] = meta.extra;
  header["vocab"] = model.vocab().body();
  std::vector<std::string> types(model.slot_types().types().begin() + 1,
                                 model.slot_types().types().end());
  header["slot_types"] = types;
  nlohmann::json shapes = nlohmann::json::array();
  for (const ad::Parameter* p : model.params().all()) {
    shapes.push_back({{"name", p->name()}, {"rows", p->rows()}, {"cols", p->cols()}});
  }
  header["parameters"] = shapes;
  header["optimizer"] = optimizer != nullptr;
  if (optimizer != nullptr) header["optimizer_steps"] = optimizer->steps();
  const std::string text = header.dump();

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw ConfigError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof(kMagic));
    const std::uint64_t n = text.size();
    out.write(reinterpret_cast<const char*>(&n), sizeof(n));
    out.write(text.data(), static_cast<std::streamsize>(n));
    for (const ad::Parameter* p : model.params().all()) write_matrix(out, p->value());
    if (optimizer != nullptr) {
      for (const ad::Parameter* p : model.params().all()) {
        auto it = optimizer->moments().find(p->name());
        ad::Matrix zero = ad::Matrix::Zero(p->rows(), p->cols());
        write_matrix(out, it == optimizer->moments().end() ? zero : it->second.m);
        write_matrix(out, it == optimizer->moments().end() ? zero : it->second.v);
      }
    }
    if (!out) throw NumericError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

std::unique_ptr<P2NetModel> load_checkpoint(const std::filesystem::path& path,
                                            CheckpointMeta* meta, Adam* optimizer) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(magic, magic + sizeof(magic), kMagic)) {
    throw DataError(path.string() + " is not a checkpoint");
  }
  std::uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof(n));
  if (!in || n > (1ULL << 32)) throw DataError("corrupt checkpoint header");
  std::string text(n, '\0');
  in.read(text.data(), static_cast<std::streamsize>(n));
  if (!in) throw DataError("truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("corrupt checkpoint header: ") + e.what());
  }

  ModelConfig mc = model_config_from_json(header.at("model"));
  embedding::Vocabulary vocab;
  for (const auto& t : header.at("vocab")) vocab.add(t.get<std::string>());
  embedding::SlotTypeTable types;
  for (const auto& t : header.at("slot_types")) types.add(t.get<std::string>());
  auto model = std::make_unique<P2NetModel>(mc, std::move(vocab), std::move(types));

  const auto& shapes = header.at("parameters");
  auto params = model->params().all();
  if (shapes.size() != params.size()) {
    throw DataError("checkpoint has " + std::to_string(shapes.size()) + " parameters, model expects " +
                    std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& s = shapes[i];
    if (s.at("name").get<std::string>() != params[i]->name() ||
        s.at("rows").get<Eigen::Index>() != params[i]->rows() ||
        s.at("cols").get<Eigen::Index>() != params[i]->cols()) {
      throw DataError("checkpoint parameter mismatch at " + params[i]->name());
    }
    read_matrix(in, params[i]->value());
  }
  if (optimizer != nullptr && header.value("optimizer", false)) {
    for (ad::Parameter* p : params) {
      Adam::Moments mo{ad::Matrix(p->rows(), p->cols()), ad::Matrix(p->rows(), p->cols())};
      read_matrix(in, mo.m);
      read_matrix(in, mo.v);
      optimizer->moments()[p->name()] = std::move(mo);
    }
    optimizer->set_steps(header.value("optimizer_steps", std::int64_t{0}));
  }
  if (meta != nullptr) {
    meta->model = mc;
    meta->training = training_config_from_json(header.at("training"));
    meta->iteration = header.value("iteration", std::int64_t{0});
    meta->rng_state = header.value("rng_state", std::string());
    meta->extra = header.value("extra", nlohmann::json());
  }
  return model;
}

}  // namespace p2net::training
