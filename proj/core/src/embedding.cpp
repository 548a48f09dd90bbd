#include "p2net/embedding.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "p2net/errors.hpp"

namespace p2net::embedding {

namespace {

const char* const kReserved[Vocabulary::kNumReserved] = {"<pad>", "<unk>",  "<sos>",
                                                         "<eos>", "<user>", "<system>"};

}  // namespace

Vocabulary::Vocabulary() {
  for (const char* t : kReserved) add(t);
}

int Vocabulary::add(const std::string& token) {
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

int Vocabulary::index(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

std::vector<std::string> Vocabulary::body() const {
  return {tokens_.begin() + kNumReserved, tokens_.end()};
}

Vocabulary Vocabulary::from_corpus(const std::vector<corpus::Record>& records, int min_count) {
  std::map<std::string, int> counts;
  for (const auto& r : records) {
    for (const auto& t : r.response.tokens) {
      if (!t.is_slot()) ++counts[t.word];
    }
    for (const auto& s : r.response.slots) {
      for (const auto& w : s.value) ++counts[w];
    }
    for (const auto& u : r.context.turns) {
      for (const auto& w : u.tokens) ++counts[w];
    }
  }
  Vocabulary v;
  for (const auto& [w, c] : counts) {
    if (c >= min_count) v.add(w);
  }
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary file " + path.string());
  Vocabulary v;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) v.add(line);
  }
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write vocabulary file " + path.string());
  for (const auto& t : body()) out << t << '\n';
}

SlotTypeTable::SlotTypeTable() { add("<unk-type>"); }

int SlotTypeTable::add(const std::string& type) {
  auto it = index_.find(type);
  if (it != index_.end()) return it->second;
  const int id = static_cast<int>(types_.size());
  types_.push_back(type);
  index_.emplace(type, id);
  return id;
}

int SlotTypeTable::index(const std::string& type) const {
  auto it = index_.find(type);
  return it == index_.end() ? 0 : it->second;
}

SlotTypeTable SlotTypeTable::from_corpus(const std::vector<corpus::Record>& records) {
  std::map<std::string, int> seen;
  for (const auto& r : records) {
    for (const auto& s : r.response.slots) seen[s.type] = 1;
  }
  SlotTypeTable t;
  for (const auto& [type, _] : seen) t.add(type);
  return t;
}

void EmbeddingConfig::validate() const {
  if (d_slot % 2 != 0) throw ConfigError("slot embedding width must be even");
  if (d_word <= 0 || d_model <= 0) throw ConfigError("embedding widths must be positive");
  if (max_type_position < 8) throw ConfigError("max_type_position must be >= 8");
}

ad::Vector sinusoidal_position(int pos, int d) {
  if (d % 2 != 0) throw ConfigError("sinusoidal position width must be even");
  if (pos < 0) throw ConfigError("negative slot position");
  ad::Vector out(d);
  for (int i = 0; i < d; i += 2) {
    const double angle = pos / std::pow(10000.0, static_cast<double>(i) / d);
    out(i) = std::sin(angle);
    out(i + 1) = std::cos(angle);
  }
  return out;
}

Embedder::Embedder(ad::ParameterCollection& params, const Vocabulary& vocab,
                   const SlotTypeTable& types, const EmbeddingConfig& config,
                   std::mt19937_64& rng)
    : vocab_(vocab), types_(types), config_(config) {
  config_.validate();
  const double s = config_.init_scale;
  word_table_ = &params.add("embedding/words", config_.d_word, vocab.size(), ad::Init::kUniform, rng, s);
  word_table_->value().col(Vocabulary::kPad).setZero();
  word_table_->freeze_column(Vocabulary::kPad);
  word_proj_w_ = &params.add("embedding/word_proj/W", config_.d_model, config_.d_word, ad::Init::kGlorot, rng);
  word_proj_b_ = &params.add("embedding/word_proj/b", config_.d_model, 1, ad::Init::kZero, rng);
  type_table_ = &params.add("embedding/slot_types", config_.d_slot, types.size(), ad::Init::kUniform, rng, s);
  cbow_w_ = &params.add("embedding/cbow/W", config_.d_slot, config_.d_word, ad::Init::kGlorot, rng);
  cbow_b_ = &params.add("embedding/cbow/b", config_.d_slot, 1, ad::Init::kZero, rng);
  gate_w_ = &params.add("embedding/gate/W", config_.d_slot, config_.d_slot, ad::Init::kGlorot, rng);
  gate_b_ = &params.add("embedding/gate/b", config_.d_slot, 1, ad::Init::kZero, rng);
  if (config_.d_slot != config_.d_model) {
    slot_proj_w_ = &params.add("embedding/slot_proj/W", config_.d_model, config_.d_slot, ad::Init::kGlorot, rng);
    slot_proj_b_ = &params.add("embedding/slot_proj/b", config_.d_model, 1, ad::Init::kZero, rng);
  }
}

int Embedder::load_pretrained(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open pretrained vectors " + path.string());
  std::string line;
  int loaded = 0;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string token;
    if (!(ss >> token)) continue;
    const int idx = vocab_.index(token);
    if (idx < Vocabulary::kNumReserved && token != vocab_.token(idx)) continue;
    if (idx == Vocabulary::kPad) continue;
    ad::Vector v(config_.d_word);
    int k = 0;
    double x;
    while (k < config_.d_word && ss >> x) v(k++) = x;
    if (k != config_.d_word) {
      throw DataError("pretrained vector for '" + token + "' has " + std::to_string(k) +
                      " components, expected " + std::to_string(config_.d_word));
    }
    word_table_->value().col(idx) = v;
    ++loaded;
  }
  return loaded;
}

ad::Expr Embedder::raw_word(ad::Graph& g, int word_index) const {
  return g.lookup(*word_table_, word_index);
}

ad::Expr Embedder::word(ad::Graph& g, int word_index) const {
  return ad::affine(g.param(*word_proj_b_), {{g.param(*word_proj_w_), raw_word(g, word_index)}});
}

ad::Expr Embedder::type_embedding(ad::Graph& g, const std::string& type) const {
  return g.lookup(*type_table_, types_.index(type));
}

ad::Expr Embedder::gate(ad::Graph& g, const std::string& type) const {
  return ad::logistic(
      ad::affine(g.param(*gate_b_), {{g.param(*gate_w_), type_embedding(g, type)}}));
}

ad::Expr Embedder::cbow(ad::Graph& g, const std::vector<std::string>& value) const {
  if (value.empty()) return g.zeros(config_.d_slot);
  std::vector<ad::Expr> rows;
  rows.reserve(value.size());
  for (const auto& w : value) rows.push_back(raw_word(g, vocab_.index(w)));
  return ad::affine(g.param(*cbow_b_), {{g.param(*cbow_w_), ad::mean(rows)}});
}

ad::Expr Embedder::slot_with_gate(ad::Graph& g, const corpus::SlotFill& fill,
                                  ad::Expr gate_value) const {
  ad::Expr position = g.input(sinusoidal_position(fill.type_position, config_.d_slot));
  return ad::sum({type_embedding(g, fill.type), position,
                  ad::cmul(gate_value, cbow(g, fill.value))});
}

ad::Expr Embedder::slot(ad::Graph& g, const corpus::SlotFill& fill) const {
  return slot_with_gate(g, fill, gate(g, fill.type));
}

ad::Expr Embedder::slot_to_model(ad::Graph& g, ad::Expr slot_vector) const {
  if (slot_proj_w_ == nullptr) return slot_vector;
  return ad::affine(g.param(*slot_proj_b_), {{g.param(*slot_proj_w_), slot_vector}});
}

std::vector<ad::Expr> Embedder::tokens(ad::Graph& g, const std::vector<corpus::Token>& tokens,
                                       const std::vector<corpus::SlotFill>& slots) const {
  std::vector<ad::Expr> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) {
    if (t.is_slot()) {
      if (static_cast<std::size_t>(t.slot) >= slots.size()) {
        throw DataError("unresolvable slot reference " + std::to_string(t.slot));
      }
      out.push_back(slot_to_model(g, slot(g, slots[static_cast<std::size_t>(t.slot)])));
    } else {
      out.push_back(word(g, vocab_.index(t.word)));
    }
  }
  return out;
}

std::vector<ad::Expr> Embedder::words(ad::Graph& g, const std::vector<std::string>& words) const {
  std::vector<ad::Expr> out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(word(g, vocab_.index(w)));
  return out;
}

}  // namespace p2net::embedding
