// Run configuration shared by the p2net subcommands: one JSON file with a
// section per module, overridden by command-line flags.
#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "p2net/corpus.hpp"
#include "p2net/inference.hpp"
#include "p2net/metrics.hpp"
#include "p2net/model.hpp"
#include "p2net/training.hpp"

namespace p2net::cli {

struct RunConfig {
  ModelConfig model;
  training::TrainingConfig training;
  inference::DecodingConfig decoding;
  corpus::SplitConfig split;
  int min_set_members = 4;
  int workers = 1;
  std::size_t val_instances = 100;
  std::size_t max_instances = 0;
  bool baseline = true;

  std::filesystem::path data;  // raw dataset (data.json or a directory holding it)
  std::filesystem::path acts;
  std::filesystem::path corpus;  // prepared corpus directory
  std::filesystem::path vectors;
  std::filesystem::path checkpoint;
  std::filesystem::path out;
};

RunConfig load_run_config(const std::filesystem::path& path);  // empty path -> defaults
nlohmann::json to_json(const RunConfig& c);

// Reads P2NET_DATA_DIR, empty when unset.
std::filesystem::path data_dir_from_env();

}  // namespace p2net::cli
