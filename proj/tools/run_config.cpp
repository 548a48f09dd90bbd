#include "run_config.hpp"

#include <cstdlib>
#include <fstream>

#include "p2net/errors.hpp"

namespace p2net::cli {

RunConfig load_run_config(const std::filesystem::path& path) {
  RunConfig c;
  if (path.empty()) return c;
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  if (j.contains("training")) c.training = training::training_config_from_json(j.at("training"));
  if (j.contains("decoding")) c.decoding = inference::decoding_config_from_json(j.at("decoding"));
  try {
    c.workers = j.value("workers", c.workers);
    c.val_instances = j.value("val_instances", c.val_instances);
    c.max_instances = j.value("max_instances", c.max_instances);
    c.baseline = j.value("baseline", c.baseline);
    if (j.contains("split")) {
      const auto& sp = j.at("split");
      c.split.seen_sets_per_split = sp.value("seen_sets_per_split", c.split.seen_sets_per_split);
      c.split.unseen_sets_per_split = sp.value("unseen_sets_per_split", c.split.unseen_sets_per_split);
      c.split.min_eval_members = sp.value("min_eval_members", c.split.min_eval_members);
      c.split.max_eval_members = sp.value("max_eval_members", c.split.max_eval_members);
      c.split.min_train_members = sp.value("min_train_members", c.split.min_train_members);
      c.min_set_members = sp.value("min_set_members", c.min_set_members);
    }
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      c.data = p.value("data", std::string());
      c.acts = p.value("acts", std::string());
      c.corpus = p.value("corpus", std::string());
      c.vectors = p.value("vectors", std::string());
      c.checkpoint = p.value("checkpoint", std::string());
      c.out = p.value("out", std::string());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return c;
}

nlohmann::json to_json(const RunConfig& c) {
  return {{"model", to_json(c.model)},
          {"training", training::to_json(c.training)},
          {"decoding", inference::to_json(c.decoding)},
          {"workers", c.workers},
          {"val_instances", c.val_instances},
          {"max_instances", c.max_instances},
          {"baseline", c.baseline},
          {"split",
           {{"seen_sets_per_split", c.split.seen_sets_per_split},
            {"unseen_sets_per_split", c.split.unseen_sets_per_split},
            {"min_eval_members", c.split.min_eval_members},
            {"max_eval_members", c.split.max_eval_members},
            {"min_train_members", c.split.min_train_members},
            {"min_set_members", c.min_set_members}}},
          {"paths",
           {{"data", c.data.string()},
            {"acts", c.acts.string()},
            {"corpus", c.corpus.string()},
            {"vectors", c.vectors.string()},
            {"checkpoint", c.checkpoint.string()},
            {"out", c.out.string()}}}};
}

std::filesystem::path data_dir_from_env() {
  const char* v = std::getenv("P2NET_DATA_DIR");
  return v == nullptr ? std::filesystem::path() : std::filesystem::path(v);
}

}  // namespace p2net::cli
