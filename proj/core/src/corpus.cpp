#include "p2net/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "p2net/errors.hpp"

namespace p2net::corpus {

using nlohmann::json;

namespace {

bool is_word_char(unsigned char c) { return std::isalnum(c) != 0 || c == '\'' || c >= 0x80; }

bool is_terminal(const Token& t) {
  return !t.is_slot() && (t.word == "." || t.word == "?" || t.word == "!");
}

bool value_less(const std::string& v) {
  return v.empty() || v == "?" || v == "none" || v == "dontcare" || v == "do n't care" ||
         v == "dont care";
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

struct ActEntry {
  std::string act;  // lowercased act type
  std::string slot;
  std::string value;
};

// Parses {"Restaurant-Inform": [["Name", "x"], ...]} into slot entries and labels.
void parse_acts(const json& acts, std::vector<ActEntry>& entries,
                std::vector<std::string>& labels) {
  for (const auto& [act_type, pairs] : acts.items()) {
    const std::string act = lower(act_type);
    std::set<std::string> valueless;
    bool has_value = false;
    // Slot/value pairs come as [["Name", "x"], ...] or as {"Name": "x"}.
    std::vector<std::pair<std::string, json>> kv;
    if (pairs.is_array()) {
      for (const auto& pair : pairs)
        if (pair.is_array() && pair.size() >= 2 && pair[0].is_string()) kv.emplace_back(pair[0], pair[1]);
    } else if (pairs.is_object()) {
      for (const auto& [k, v] : pairs.items()) kv.emplace_back(k, v);
    }
    {
      for (const auto& [raw_slot, raw_value] : kv) {
        const std::string slot = lower(raw_slot);
        const std::string value = raw_value.is_string() ? raw_value.get<std::string>()
                                                        : raw_value.dump();
        if (slot == "none") continue;
        if (value_less(lower(value))) {
          valueless.insert(slot);
          continue;
        }
        ActEntry e{act, slot, value};
        bool dup = std::any_of(entries.begin(), entries.end(), [&](const ActEntry& o) {
          return o.act == e.act && o.slot == e.slot && lower(o.value) == lower(e.value);
        });
        if (!dup) entries.push_back(std::move(e));
        has_value = true;
      }
    }
    std::string label = act;
    if (!valueless.empty()) {
      label += "(";
      bool first = true;
      for (const auto& s : valueless) {
        label += (first ? "" : ",") + s;
        first = false;
      }
      label += ")";
    }
    (void)has_value;
    labels.push_back(label);
  }
}

// Label under which slots of `act` are grouped (includes valueless suffix if any).
std::string label_for(const std::string& act, const std::vector<std::string>& labels) {
  for (const auto& l : labels) {
    if (l == act || l.rfind(act + "(", 0) == 0) return l;
  }
  return act;
}

std::string join_sorted(std::vector<std::string> labels) {
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  std::string out;
  for (std::size_t i = 0; i < labels.size(); ++i) out += (i ? "+" : "") + labels[i];
  return out;
}

// Delexicalizes tokenized text against slot entries. Returns false if any slot
// value cannot be located.
bool delexicalize(const std::vector<std::string>& words, const std::vector<ActEntry>& entries,
                  const std::vector<std::string>& labels, AnnotatedResponse& out) {
  std::vector<int> owner(words.size(), -1);
  struct Span {
    std::size_t begin, end;
    int entry;
  };
  std::vector<Span> spans;
  for (std::size_t e = 0; e < entries.size(); ++e) {
    const auto value = tokenize(entries[e].value);
    if (value.empty()) return false;
    bool found = false;
    for (std::size_t i = 0; i + value.size() <= words.size() && !found; ++i) {
      bool match = true;
      for (std::size_t k = 0; k < value.size() && match; ++k) {
        match = owner[i + k] < 0 && words[i + k] == value[k];
      }
      if (match) {
        for (std::size_t k = 0; k < value.size(); ++k) owner[i + k] = static_cast<int>(e);
        spans.push_back({i, i + value.size(), static_cast<int>(e)});
        found = true;
      }
    }
    if (!found) return false;
  }
  std::sort(spans.begin(), spans.end(),
            [](const Span& a, const Span& b) { return a.begin < b.begin; });
  out.tokens.clear();
  out.slots.clear();
  std::size_t next = 0;
  for (const auto& span : spans) {
    for (; next < span.begin; ++next) out.tokens.push_back(Token::Word(words[next]));
    const auto& entry = entries[span.entry];
    SlotFill fill;
    fill.type = entry.slot;
    fill.value.assign(words.begin() + static_cast<long>(span.begin),
                      words.begin() + static_cast<long>(span.end));
    fill.act = label_for(entry.act, labels);
    out.tokens.push_back(Token::Slot(static_cast<int>(out.slots.size())));
    out.slots.push_back(std::move(fill));
    next = span.end;
  }
  for (; next < words.size(); ++next) out.tokens.push_back(Token::Word(words[next]));
  out.tokens.push_back(Token::Word(kEos));
  reindex_type_positions(out);
  return true;
}

}  // namespace

std::string SetKey::str() const {
  std::string out = action + "|";
  for (std::size_t i = 0; i < signature.size(); ++i) {
    out += (i ? "," : "") + signature[i].first + "*" + std::to_string(signature[i].second);
  }
  return out;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      flush();
    } else if (is_word_char(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    }
  }
  flush();
  return out;
}

SlotSignature slot_signature(const AnnotatedResponse& r) {
  std::map<std::string, int> counts;
  for (const auto& s : r.slots) ++counts[s.type];
  return {counts.begin(), counts.end()};
}

SetKey key_of(const AnnotatedResponse& r) { return SetKey{r.action, slot_signature(r)}; }

void reindex_type_positions(AnnotatedResponse& r) {
  std::map<std::string, int> next;
  for (const auto& t : r.tokens) {
    if (!t.is_slot()) continue;
    auto& s = r.slots.at(static_cast<std::size_t>(t.slot));
    s.type_position = next[s.type]++;
  }
}

std::vector<Record> load_dialogues(const json& data, const json* acts, LoadStats* stats) {
  LoadStats local;
  LoadStats& st = stats != nullptr ? *stats : local;
  std::vector<Record> out;
  if (data.is_array() && data.empty()) return out;
  if (!data.is_object()) throw DataError("dialogue file must be a JSON object keyed by dialogue id");

  for (const auto& [dialogue_id, dialogue] : data.items()) {
    if (!dialogue.is_object() || !dialogue.contains("log") || !dialogue["log"].is_array()) {
      throw DataError("malformed dialogue: " + dialogue_id);
    }
    ++st.dialogues;
    const json& log = dialogue["log"];
    std::string act_id = dialogue_id;
    if (act_id.size() > 5 && act_id.substr(act_id.size() - 5) == ".json") {
      act_id = act_id.substr(0, act_id.size() - 5);
    }
    for (std::size_t i = 1; i < log.size(); i += 2) {
      ++st.system_turns;
      const json& turn = log[i];
      if (!turn.is_object() || !turn.contains("text") || !turn["text"].is_string()) {
        throw DataError("malformed turn " + std::to_string(i) + " in dialogue " + dialogue_id);
      }
      const json* turn_acts = nullptr;
      if (turn.contains("dialog_act") && turn["dialog_act"].is_object() &&
          !turn["dialog_act"].empty()) {
        turn_acts = &turn["dialog_act"];
      } else if (acts != nullptr && acts->contains(act_id)) {
        const json& d = (*acts)[act_id];
        const std::string key = std::to_string((i + 1) / 2);
        if (d.contains(key) && d[key].is_object() && !d[key].empty()) turn_acts = &d[key];
      }
      if (turn_acts == nullptr) {
        ++st.skipped_no_acts;
        continue;
      }
      std::vector<ActEntry> entries;
      std::vector<std::string> labels;
      parse_acts(*turn_acts, entries, labels);
      if (labels.empty()) {
        ++st.skipped_no_acts;
        continue;
      }

      Record rec;
      rec.response.dialogue_id = dialogue_id;
      rec.response.turn_index = static_cast<int>(i);
      rec.response.acts = labels;
      std::sort(rec.response.acts.begin(), rec.response.acts.end());
      rec.response.action = join_sorted(labels);
      if (!delexicalize(tokenize(turn["text"].get<std::string>()), entries, labels,
                        rec.response)) {
        ++st.dropped_unlocatable;
        continue;
      }
      const std::size_t first = i >= DialogueContext::kMaxTurns ? i - DialogueContext::kMaxTurns : 0;
      for (std::size_t k = first; k < i; ++k) {
        Utterance u;
        u.speaker = (k % 2 == 0) ? Speaker::kUser : Speaker::kSystem;
        const json& t = log[k];
        if (t.contains("text") && t["text"].is_string()) u.tokens = tokenize(t["text"].get<std::string>());
        rec.context.turns.push_back(std::move(u));
      }
      out.push_back(std::move(rec));
    }
  }
  st.records = out.size();
  return out;
}

std::vector<Record> load_dialogues(const std::filesystem::path& data_path,
                                   const std::filesystem::path& acts_path, LoadStats* stats) {
  auto read = [](const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw DataError("cannot open " + p.string());
    try {
      return json::parse(in);
    } catch (const json::parse_error& e) {
      throw DataError("malformed JSON in " + p.string() + ": " + e.what());
    }
  };
  json data = read(data_path);
  json acts;
  if (!acts_path.empty()) acts = read(acts_path);
  return load_dialogues(data, acts_path.empty() ? nullptr : &acts, stats);
}

std::vector<AnnotatedResponse> split_multi_action(const AnnotatedResponse& response) {
  // Sentence boundaries after terminal punctuation; a terminal inside a slot
  // value means the segmentation is ambiguous, keep unsplit.
  for (const auto& s : response.slots) {
    for (std::size_t k = 0; k + 1 < s.value.size(); ++k) {
      if (s.value[k] == "." || s.value[k] == "?" || s.value[k] == "!") {
        AnnotatedResponse flagged = response;
        flagged.split_flagged = true;
        return {flagged};
      }
    }
  }

  std::vector<std::pair<std::size_t, std::size_t>> sentences;  // [begin, end) over tokens sans eos
  std::size_t n = response.tokens.size();
  if (n > 0 && response.tokens.back().is_eos()) --n;
  std::size_t begin = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (is_terminal(response.tokens[i])) {
      // Absorb runs of punctuation ("?!").
      while (i + 1 < n && is_terminal(response.tokens[i + 1])) ++i;
      sentences.emplace_back(begin, i + 1);
      begin = i + 1;
    }
  }
  if (begin < n) sentences.emplace_back(begin, n);
  if (sentences.size() <= 1) return {response};

  std::vector<std::set<std::string>> sentence_acts(sentences.size());
  std::set<std::string> acts_with_slots;
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    for (std::size_t i = sentences[s].first; i < sentences[s].second; ++i) {
      const Token& t = response.tokens[i];
      if (t.is_slot()) {
        const std::string& act = response.slots.at(static_cast<std::size_t>(t.slot)).act;
        sentence_acts[s].insert(act);
        acts_with_slots.insert(act);
      }
    }
  }
  std::vector<std::string> slotless;
  for (const auto& a : response.acts) {
    if (!acts_with_slots.count(a)) slotless.push_back(a);
  }
  std::vector<std::size_t> free;
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    if (sentence_acts[s].empty()) free.push_back(s);
  }
  for (std::size_t k = 0; k < slotless.size(); ++k) {
    std::size_t target = free.empty() ? sentences.size() - 1 : free[std::min(k, free.size() - 1)];
    sentence_acts[target].insert(slotless[k]);
  }

  std::vector<AnnotatedResponse> out;
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    if (sentence_acts[s].empty()) continue;
    AnnotatedResponse r;
    r.dialogue_id = response.dialogue_id;
    r.turn_index = response.turn_index;
    r.segment = static_cast<int>(out.size());
    r.acts.assign(sentence_acts[s].begin(), sentence_acts[s].end());
    r.action = join_sorted(r.acts);
    for (std::size_t i = sentences[s].first; i < sentences[s].second; ++i) {
      const Token& t = response.tokens[i];
      if (t.is_slot()) {
        r.tokens.push_back(Token::Slot(static_cast<int>(r.slots.size())));
        r.slots.push_back(response.slots.at(static_cast<std::size_t>(t.slot)));
      } else {
        r.tokens.push_back(t);
      }
    }
    r.tokens.push_back(Token::Word(kEos));
    reindex_type_positions(r);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<Record> split_records(const std::vector<Record>& records, SplitStats* stats) {
  SplitStats local;
  SplitStats& st = stats != nullptr ? *stats : local;
  std::vector<Record> out;
  for (const auto& rec : records) {
    ++st.inputs;
    auto parts = split_multi_action(rec.response);
    if (parts.empty()) ++st.dropped_no_action;
    for (auto& p : parts) {
      if (p.split_flagged) ++st.flagged;
      out.push_back(Record{rec.context, std::move(p)});
      ++st.outputs;
    }
  }
  return out;
}

std::vector<ParaphraseSet> build_paraphrase_sets(const std::vector<Record>& records,
                                                 int min_members) {
  std::map<SetKey, std::vector<Record>> groups;
  for (const auto& r : records) groups[key_of(r.response)].push_back(r);
  std::vector<ParaphraseSet> out;
  for (auto& [key, members] : groups) {
    if (static_cast<int>(members.size()) < min_members) continue;
    out.push_back(ParaphraseSet{key, std::move(members)});
  }
  return out;
}

namespace {

using TurnId = std::pair<std::string, int>;

TurnId turn_of(const Record& r) { return {r.response.dialogue_id, r.response.turn_index}; }

}  // namespace

CorpusSplits build_splits(const std::vector<ParaphraseSet>& sets, std::uint64_t seed,
                          const SplitConfig& config) {
  std::mt19937_64 rng(seed);
  const int n_unseen = 2 * config.unseen_sets_per_split;
  const int n_seen = 2 * config.seen_sets_per_split;

  std::map<std::string, std::vector<std::size_t>> by_action;
  for (std::size_t i = 0; i < sets.size(); ++i) by_action[sets[i].key.action].push_back(i);
  std::vector<std::string> actions;
  for (const auto& [a, _] : by_action) actions.push_back(a);
  std::shuffle(actions.begin(), actions.end(), rng);

  auto eligible = [&](const ParaphraseSet& s) {
    return static_cast<int>(s.members.size()) >= config.min_eval_members;
  };

  // Pick whole dialogue actions until enough eligible sets are held out.
  std::set<std::string> unseen_actions;
  std::vector<std::size_t> unseen_candidates;
  for (const auto& a : actions) {
    if (static_cast<int>(unseen_candidates.size()) >= n_unseen) break;
    bool any = false;
    for (auto i : by_action[a]) any = any || eligible(sets[i]);
    if (!any) continue;
    unseen_actions.insert(a);
    for (auto i : by_action[a]) {
      if (eligible(sets[i])) unseen_candidates.push_back(i);
    }
  }

  std::vector<std::size_t> seen_candidates;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (unseen_actions.count(sets[i].key.action)) continue;
    if (static_cast<int>(sets[i].members.size()) >=
        config.min_eval_members + config.min_train_members) {
      seen_candidates.push_back(i);
    }
  }
  std::shuffle(seen_candidates.begin(), seen_candidates.end(), rng);

  if (static_cast<int>(unseen_candidates.size()) < n_unseen ||
      static_cast<int>(seen_candidates.size()) < n_seen) {
    std::ostringstream msg;
    msg << "insufficient paraphrase sets for splits: need " << n_unseen
        << " unseen-action sets (have " << unseen_candidates.size() << ") and " << n_seen
        << " seen-action sets with >= "
        << config.min_eval_members + config.min_train_members << " members (have "
        << seen_candidates.size() << ") from " << sets.size() << " sets";
    throw DataError(msg.str());
  }

  CorpusSplits out;
  // Train copies; held-out members get removed below.
  std::vector<std::vector<Record>> remaining(sets.size());
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (!unseen_actions.count(sets[i].key.action)) remaining[i] = sets[i].members;
  }

  std::map<TurnId, int> claimed;  // turn -> split id (0 val, 1 test)
  std::uniform_int_distribution<int> size_dist(config.min_eval_members, config.max_eval_members);

  auto carve = [&](std::size_t set_index, int split_id, int max_take,
                   std::vector<Record>& pool) -> std::vector<Record> {
    std::vector<std::size_t> order(pool.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::shuffle(order.begin(), order.end(), rng);
    int want = std::min(size_dist(rng), max_take);
    std::vector<std::size_t> chosen;
    for (auto k : order) {
      if (static_cast<int>(chosen.size()) >= want) break;
      auto it = claimed.find(turn_of(pool[k]));
      if (it != claimed.end() && it->second != split_id) continue;
      chosen.push_back(k);
    }
    if (static_cast<int>(chosen.size()) < config.min_eval_members) return {};
    std::sort(chosen.begin(), chosen.end());
    std::vector<Record> taken;
    for (auto k : chosen) {
      claimed[turn_of(pool[k])] = split_id;
      taken.push_back(pool[k]);
    }
    for (auto it = chosen.rbegin(); it != chosen.rend(); ++it) {
      pool.erase(pool.begin() + static_cast<long>(*it));
    }
    (void)set_index;
    return taken;
  };

  auto fill = [&](const std::vector<std::size_t>& candidates, bool seen,
                  std::vector<ParaphraseSet>& val, std::vector<ParaphraseSet>& test,
                  int per_split) {
    for (auto i : candidates) {
      if (static_cast<int>(val.size()) >= per_split && static_cast<int>(test.size()) >= per_split) break;
      int split_id = static_cast<int>(val.size()) <= static_cast<int>(test.size()) ? 0 : 1;
      if (static_cast<int>(val.size()) >= per_split) split_id = 1;
      if (static_cast<int>(test.size()) >= per_split) split_id = 0;
      std::vector<Record> pool = seen ? remaining[i] : sets[i].members;
      int max_take = seen ? static_cast<int>(pool.size()) - config.min_train_members
                          : static_cast<int>(pool.size());
      auto taken = carve(i, split_id, max_take, pool);
      if (taken.empty()) continue;
      if (seen) remaining[i] = std::move(pool);
      (split_id == 0 ? val : test).push_back(ParaphraseSet{sets[i].key, std::move(taken)});
    }
    if (static_cast<int>(val.size()) < per_split || static_cast<int>(test.size()) < per_split) {
      throw DataError("insufficient disjoint responses to fill " +
                      std::string(seen ? "seen" : "unseen") + " splits (val " +
                      std::to_string(val.size()) + ", test " + std::to_string(test.size()) +
                      ", need " + std::to_string(per_split) + " each)");
    }
  };

  fill(unseen_candidates, false, out.val_unseen, out.test_unseen, config.unseen_sets_per_split);
  fill(seen_candidates, true, out.val_seen, out.test_seen, config.seen_sets_per_split);

  for (std::size_t i = 0; i < sets.size(); ++i) {
    std::vector<Record> kept;
    for (auto& r : remaining[i]) {
      if (!claimed.count(turn_of(r))) kept.push_back(std::move(r));
    }
    if (static_cast<int>(kept.size()) >= config.min_train_members) {
      out.train.push_back(ParaphraseSet{sets[i].key, std::move(kept)});
    }
  }
  return out;
}

double sampling_weight(std::size_t set_size, double cap) {
  return std::min(std::sqrt(static_cast<double>(set_size)), cap);
}

SamplingSchedule::SamplingSchedule(const std::vector<ParaphraseSet>& sets, double cap) {
  if (sets.empty()) throw DataError("sampling schedule over an empty training pool");
  double total = 0.0;
  for (const auto& s : sets) {
    weights_.push_back(sampling_weight(s.members.size(), cap));
    total += weights_.back();
  }
  for (auto& w : weights_) w /= total;
  dist_ = std::discrete_distribution<std::size_t>(weights_.begin(), weights_.end());
}

std::size_t SamplingSchedule::draw(std::mt19937_64& rng) const { return dist_(rng); }

TrainingInstance make_instance(const ParaphraseSet& set, std::size_t ground_truth_index,
                               std::size_t template_index) {
  const Record& gt = set.members.at(ground_truth_index);
  TrainingInstance inst;
  inst.ground_truth = gt.response;
  inst.context = gt.context;
  inst.slots = gt.response.slots;
  inst.template_response = set.members.at(template_index).response;
  return inst;
}

TrainingInstance sample_training_instance(const std::vector<ParaphraseSet>& sets,
                                          const SamplingSchedule& schedule,
                                          std::mt19937_64& rng) {
  for (;;) {
    const std::size_t s = schedule.draw(rng);
    const auto& set = sets.at(s);
    const std::size_t n = set.members.size();
    if (n < 2) continue;
    std::uniform_int_distribution<std::size_t> pick_gt(0, n - 1);
    std::uniform_int_distribution<std::size_t> pick_other(0, n - 2);
    const std::size_t gt = pick_gt(rng);
    std::size_t tmpl = pick_other(rng);
    if (tmpl >= gt) ++tmpl;
    auto inst = make_instance(set, gt, tmpl);
    inst.set_index = s;
    return inst;
  }
}

// --- serialization -----------------------------------------------------------

json to_json(const Record& r) {
  json tokens = json::array();
  for (const auto& t : r.response.tokens) {
    if (t.is_slot()) {
      tokens.push_back(json{{"slot", t.slot}});
    } else {
      tokens.push_back(t.word);
    }
  }
  json slots = json::array();
  for (const auto& s : r.response.slots) {
    slots.push_back(json{{"type", s.type},
                         {"type_position", s.type_position},
                         {"value_tokens", s.value},
                         {"act", s.act}});
  }
  json context = json::array();
  for (const auto& u : r.context.turns) {
    context.push_back(
        json{{"speaker", u.speaker == Speaker::kUser ? "user" : "system"}, {"tokens", u.tokens}});
  }
  json j{{"dialogue_id", r.response.dialogue_id},
         {"turn_index", r.response.turn_index},
         {"segment", r.response.segment},
         {"dialogue_action", r.response.action},
         {"acts", r.response.acts},
         {"context", context},
         {"tokens", tokens},
         {"slots", slots}};
  if (r.response.split_flagged) j["split_flagged"] = true;
  return j;
}

Record record_from_json(const json& j) {
  try {
    Record r;
    r.response.dialogue_id = j.at("dialogue_id").get<std::string>();
    r.response.turn_index = j.at("turn_index").get<int>();
    r.response.segment = j.value("segment", 0);
    r.response.action = j.at("dialogue_action").get<std::string>();
    if (j.contains("acts")) {
      r.response.acts = j["acts"].get<std::vector<std::string>>();
    } else {
      r.response.acts = {r.response.action};
    }
    r.response.split_flagged = j.value("split_flagged", false);
    for (const auto& t : j.at("tokens")) {
      if (t.is_object()) {
        r.response.tokens.push_back(Token::Slot(t.at("slot").get<int>()));
      } else {
        r.response.tokens.push_back(Token::Word(t.get<std::string>()));
      }
    }
    for (const auto& s : j.at("slots")) {
      SlotFill f;
      f.type = s.at("type").get<std::string>();
      f.type_position = s.at("type_position").get<int>();
      f.value = s.at("value_tokens").get<std::vector<std::string>>();
      f.act = s.value("act", r.response.action);
      r.response.slots.push_back(std::move(f));
    }
    for (const auto& u : j.at("context")) {
      Utterance utt;
      utt.speaker = u.at("speaker").get<std::string>() == "user" ? Speaker::kUser : Speaker::kSystem;
      utt.tokens = u.at("tokens").get<std::vector<std::string>>();
      r.context.turns.push_back(std::move(utt));
    }
    for (const auto& t : r.response.tokens) {
      if (t.is_slot() && static_cast<std::size_t>(t.slot) >= r.response.slots.size()) {
        throw DataError("dangling slot reference in record " + r.response.dialogue_id);
      }
    }
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed corpus record: ") + e.what());
  }
}

void write_jsonl(const std::filesystem::path& path, const std::vector<Record>& records) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

std::vector<Record> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<Record> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(json::parse(line)));
    } catch (const json::parse_error& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

namespace {

const std::vector<std::pair<std::string, std::vector<ParaphraseSet> CorpusSplits::*>>& split_fields() {
  static const std::vector<std::pair<std::string, std::vector<ParaphraseSet> CorpusSplits::*>> f{
      {"train", &CorpusSplits::train},
      {"val_seen", &CorpusSplits::val_seen},
      {"val_unseen", &CorpusSplits::val_unseen},
      {"test_seen", &CorpusSplits::test_seen},
      {"test_unseen", &CorpusSplits::test_unseen}};
  return f;
}

}  // namespace

json manifest_json(const CorpusSplits& splits) {
  json m = json::object();
  for (const auto& [name, field] : split_fields()) {
    json keys = json::array();
    for (const auto& s : splits.*field) {
      keys.push_back(json{{"key", s.key.str()}, {"members", s.members.size()}});
    }
    m[name] = keys;
  }
  return m;
}

void write_splits(const std::filesystem::path& dir, const CorpusSplits& splits) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, field] : split_fields()) {
    std::vector<Record> flat;
    for (const auto& s : splits.*field) {
      flat.insert(flat.end(), s.members.begin(), s.members.end());
    }
    write_jsonl(dir / (name + ".jsonl"), flat);
  }
  std::ofstream(dir / "manifest.json") << manifest_json(splits).dump(2) << '\n';
}

CorpusSplits read_splits(const std::filesystem::path& dir) {
  CorpusSplits out;
  for (const auto& [name, field] : split_fields()) {
    const auto path = dir / (name + ".jsonl");
    if (!std::filesystem::exists(path)) throw ConfigError("missing split file " + path.string());
    auto records = read_jsonl(path);
    std::map<SetKey, std::size_t> index;
    auto& sets = out.*field;
    for (auto& r : records) {
      SetKey k = key_of(r.response);
      auto it = index.find(k);
      if (it == index.end()) {
        index[k] = sets.size();
        sets.push_back(ParaphraseSet{k, {}});
        it = index.find(k);
      }
      sets[it->second].members.push_back(std::move(r));
    }
  }
  return out;
}

json corpus_statistics(const std::vector<ParaphraseSet>& train) {
  std::size_t responses = 0;
  std::map<std::string, std::size_t> action_counts;
  std::map<std::string, double> action_weight;
  SamplingSchedule schedule(train);
  std::map<std::string, std::size_t> histogram;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto& s = train[i];
    responses += s.members.size();
    action_counts[s.key.action] += s.members.size();
    action_weight[s.key.action] += schedule.weights()[i];
    const std::size_t n = s.members.size();
    std::string bucket = n < 5 ? "4" : n < 10 ? "5-9" : n < 100 ? "10-99" : n < 1000 ? "100-999" : "1000+";
    ++histogram[bucket];
  }
  std::string dominant;
  std::size_t best = 0;
  for (const auto& [a, c] : action_counts) {
    if (c > best) {
      best = c;
      dominant = a;
    }
  }
  return json{{"train_sets", train.size()},
              {"train_responses", responses},
              {"distinct_actions", action_counts.size()},
              {"set_size_histogram", histogram},
              {"dominant_action", dominant},
              {"dominant_raw_frequency", responses ? static_cast<double>(best) / responses : 0.0},
              {"dominant_balanced_frequency", action_weight[dominant]}};
}

}  // namespace p2net::corpus
