// Word embeddings and the three-part slot embedding (type + per-type position
// + gated CBOW of the value words).
#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "p2net/autodiff.hpp"
#include "p2net/corpus.hpp"

namespace p2net::embedding {

// Reserved indices are fixed: 0 <pad>, 1 <unk>, 2 <sos>, 3 <eos>, 4 <user>, 5 <system>.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kSos = 2;
  static constexpr int kEos = 3;
  static constexpr int kUser = 4;
  static constexpr int kSystem = 5;
  static constexpr int kNumReserved = 6;

  Vocabulary();
  static Vocabulary from_corpus(const std::vector<corpus::Record>& records, int min_count = 1);
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  int add(const std::string& token);
  int index(const std::string& token) const;  // kUnk when absent
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  const std::string& token(int index) const { return tokens_.at(static_cast<std::size_t>(index)); }
  int size() const { return static_cast<int>(tokens_.size()); }
  // Non-reserved tokens in index order (the vocabulary file body).
  std::vector<std::string> body() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Slot type labels; index 0 is the shared row for unknown types.
class SlotTypeTable {
 public:
  SlotTypeTable();
  static SlotTypeTable from_corpus(const std::vector<corpus::Record>& records);
  int add(const std::string& type);
  int index(const std::string& type) const;
  int size() const { return static_cast<int>(types_.size()); }
  const std::vector<std::string>& types() const { return types_; }

 private:
  std::vector<std::string> types_;
  std::unordered_map<std::string, int> index_;
};

struct EmbeddingConfig {
  int d_word = 300;
  int d_slot = 512;
  int d_model = 512;  // encoder/decoder input width
  int max_type_position = 8;
  double init_scale = 0.1;

  void validate() const;
};

// Standard alternating sine/cosine encoding: even i -> sin, odd i -> cos with
// frequency 1/10000^{2*floor(i/2)/d}.
ad::Vector sinusoidal_position(int pos, int d);

class Embedder {
 public:
  Embedder(ad::ParameterCollection& params, const Vocabulary& vocab, const SlotTypeTable& types,
           const EmbeddingConfig& config, std::mt19937_64& rng);

  // Overwrites rows of the word table from a text file "token v1 ... vd".
  // Returns the number of vocabulary rows initialized.
  int load_pretrained(const std::filesystem::path& path);

  ad::Expr word(ad::Graph& g, int word_index) const;  // projected to d_model
  ad::Expr raw_word(ad::Graph& g, int word_index) const;  // d_word row
  ad::Expr type_embedding(ad::Graph& g, const std::string& type) const;
  ad::Expr gate(ad::Graph& g, const std::string& type) const;
  ad::Expr cbow(ad::Graph& g, const std::vector<std::string>& value) const;
  // type + position + gate * cbow(value); width d_slot.
  ad::Expr slot(ad::Graph& g, const corpus::SlotFill& fill) const;
  // Variant with an externally supplied gate (for value-invariance checks).
  ad::Expr slot_with_gate(ad::Graph& g, const corpus::SlotFill& fill, ad::Expr gate) const;
  ad::Expr slot_to_model(ad::Graph& g, ad::Expr slot_vector) const;

  // Word tokens -> projected word embedding, SlotRef -> slot embedding (model width).
  std::vector<ad::Expr> tokens(ad::Graph& g, const std::vector<corpus::Token>& tokens,
                               const std::vector<corpus::SlotFill>& slots) const;
  std::vector<ad::Expr> words(ad::Graph& g, const std::vector<std::string>& words) const;

  const Vocabulary& vocab() const { return vocab_; }
  const SlotTypeTable& slot_types() const { return types_; }
  const EmbeddingConfig& config() const { return config_; }
  ad::Parameter& word_table() const { return *word_table_; }

 private:
  const Vocabulary& vocab_;
  const SlotTypeTable& types_;
  EmbeddingConfig config_;
  ad::Parameter* word_table_;
  ad::Parameter* word_proj_w_;
  ad::Parameter* word_proj_b_;
  ad::Parameter* type_table_;
  ad::Parameter* cbow_w_;
  ad::Parameter* cbow_b_;
  ad::Parameter* gate_w_;
  ad::Parameter* gate_b_;
  ad::Parameter* slot_proj_w_ = nullptr;  // only when d_slot != d_model
  ad::Parameter* slot_proj_b_ = nullptr;
};

}  // namespace p2net::embedding
