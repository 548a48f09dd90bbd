// Corpus ingestion: MultiWOZ-style dialogues -> delexicalized responses ->
// paraphrase sets keyed by (dialogue action, slot signature) -> splits and a
// balanced instance sampler for weak supervision.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace p2net::corpus {

inline constexpr const char* kEos = "<eos>";

struct Token {
  std::string word;  // empty for slot references
  int slot = -1;     // index into AnnotatedResponse::slots, -1 for words

  static Token Word(std::string w) { return Token{std::move(w), -1}; }
  static Token Slot(int index) { return Token{{}, index}; }
  bool is_slot() const { return slot >= 0; }
  bool is_eos() const { return slot < 0 && word == kEos; }
  bool operator==(const Token&) const = default;
};

struct SlotFill {
  std::string type;
  int type_position = 0;
  std::vector<std::string> value;
  std::string act;  // act that introduced the slot; used when splitting

  bool operator==(const SlotFill&) const = default;
};

struct AnnotatedResponse {
  std::vector<Token> tokens;
  std::vector<SlotFill> slots;
  std::string action;
  std::string dialogue_id;
  int turn_index = 0;
  int segment = 0;                // sentence index after splitting
  std::vector<std::string> acts;  // all act labels before splitting
  bool split_flagged = false;

  bool operator==(const AnnotatedResponse&) const = default;
};

enum class Speaker { kUser, kSystem };

struct Utterance {
  Speaker speaker = Speaker::kUser;
  std::vector<std::string> tokens;
  bool operator==(const Utterance&) const = default;
};

struct DialogueContext {
  static constexpr std::size_t kMaxTurns = 3;
  std::vector<Utterance> turns;  // oldest first
  bool operator==(const DialogueContext&) const = default;
};

struct Record {
  DialogueContext context;
  AnnotatedResponse response;
  bool operator==(const Record&) const = default;
};

// Slot signature: sorted (type, count) pairs.
using SlotSignature = std::vector<std::pair<std::string, int>>;

struct SetKey {
  std::string action;
  SlotSignature signature;

  std::string str() const;
  auto operator<=>(const SetKey&) const = default;
};

struct ParaphraseSet {
  SetKey key;
  std::vector<Record> members;
};

struct CorpusSplits {
  std::vector<ParaphraseSet> train;
  std::vector<ParaphraseSet> val_seen;
  std::vector<ParaphraseSet> val_unseen;
  std::vector<ParaphraseSet> test_seen;
  std::vector<ParaphraseSet> test_unseen;
};

struct LoadStats {
  std::size_t dialogues = 0;
  std::size_t system_turns = 0;
  std::size_t skipped_no_acts = 0;
  std::size_t dropped_unlocatable = 0;
  std::size_t records = 0;
};

struct SplitStats {
  std::size_t inputs = 0;
  std::size_t outputs = 0;
  std::size_t flagged = 0;
  std::size_t dropped_no_action = 0;
};

struct SplitConfig {
  int seen_sets_per_split = 100;
  int unseen_sets_per_split = 100;
  int min_eval_members = 5;
  int max_eval_members = 7;
  int min_train_members = 4;
};

// --- text ---------------------------------------------------------------

// Lowercases and splits on whitespace and punctuation; apostrophes stay inside words.
std::vector<std::string> tokenize(const std::string& text);
SlotSignature slot_signature(const AnnotatedResponse& r);
SetKey key_of(const AnnotatedResponse& r);
// Recomputes type_position per type in order of first reference in tokens.
void reindex_type_positions(AnnotatedResponse& r);

// --- ingestion ------------------------------------------------------------

// data.json content (object keyed by dialogue id). `acts` is the optional
// separate dialogue-act file; turns carrying "dialog_act" take precedence.
std::vector<Record> load_dialogues(const nlohmann::json& data, const nlohmann::json* acts,
                                   LoadStats* stats = nullptr);
std::vector<Record> load_dialogues(const std::filesystem::path& data_path,
                                   const std::filesystem::path& acts_path = {},
                                   LoadStats* stats = nullptr);

std::vector<AnnotatedResponse> split_multi_action(const AnnotatedResponse& response);
std::vector<Record> split_records(const std::vector<Record>& records, SplitStats* stats = nullptr);

// --- grouping / splits / balancing ------------------------------------------

std::vector<ParaphraseSet> build_paraphrase_sets(const std::vector<Record>& records,
                                                 int min_members = 4);
CorpusSplits build_splits(const std::vector<ParaphraseSet>& sets, std::uint64_t seed,
                          const SplitConfig& config = {});

double sampling_weight(std::size_t set_size, double cap = 200.0);

class SamplingSchedule {
 public:
  explicit SamplingSchedule(const std::vector<ParaphraseSet>& sets, double cap = 200.0);
  const std::vector<double>& weights() const { return weights_; }
  std::size_t draw(std::mt19937_64& rng) const;

 private:
  std::vector<double> weights_;
  mutable std::discrete_distribution<std::size_t> dist_;
};

struct TrainingInstance {
  AnnotatedResponse template_response;
  DialogueContext context;
  AnnotatedResponse ground_truth;
  std::vector<SlotFill> slots;  // ground-truth slot fills
  std::size_t set_index = 0;
};

// Template is a uniformly drawn sibling of the ground truth.
TrainingInstance make_instance(const ParaphraseSet& set, std::size_t ground_truth_index,
                               std::size_t template_index);
TrainingInstance sample_training_instance(const std::vector<ParaphraseSet>& sets,
                                          const SamplingSchedule& schedule,
                                          std::mt19937_64& rng);

// --- serialization ----------------------------------------------------------

nlohmann::json to_json(const Record& r);
Record record_from_json(const nlohmann::json& j);
nlohmann::json manifest_json(const CorpusSplits& splits);

void write_jsonl(const std::filesystem::path& path, const std::vector<Record>& records);
std::vector<Record> read_jsonl(const std::filesystem::path& path);
// One JSONL file per split plus manifest.json in `dir`.
void write_splits(const std::filesystem::path& dir, const CorpusSplits& splits);
CorpusSplits read_splits(const std::filesystem::path& dir);

// Counts sets, size histogram and dominant-action raw vs balanced frequency.
nlohmann::json corpus_statistics(const std::vector<ParaphraseSet>& train);

}  // namespace p2net::corpus
