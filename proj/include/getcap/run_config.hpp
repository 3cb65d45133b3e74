#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "getcap/data.hpp"
#include "getcap/model.hpp"
#include "getcap/training.hpp"

namespace getcap {

struct DataConfig {
  std::string source = "synthetic";  // "synthetic" or "files"
  std::filesystem::path manifest;
  std::filesystem::path train_captions;
  std::filesystem::path val_captions;  // optional
  std::size_t min_count = 1;
  SyntheticSpec synthetic;
};

// Everything a command needs. The model's d_in and vocab_size are filled in
// from the data when it is loaded; ff_width = 0 means 4 * width.
struct RunConfig {
  std::string name = "run";
  std::uint64_t seed = 1234;
  ModelConfig model;
  TrainConfig train;
  std::size_t checkpoint_every = 0;  // epochs; 0 writes only the final checkpoint
  std::size_t eval_beam = 3;
  std::string eval_split = "val";
  std::size_t attribute_steps = 64;
  DataConfig data;

  std::vector<std::string> violations() const;
  void validate() const;
};

RunConfig default_run_config();

// "key = value" lines; '#' starts a comment. Unknown or repeated keys and
// malformed values raise ConfigError naming the line.
RunConfig parse_run_config(const std::string& text);
// Relative data paths are resolved against the file's directory.
RunConfig load_run_config(const std::filesystem::path& path);

// Every key with its resolved value; parse_run_config(to_text(c)) == c.
std::string to_text(const RunConfig& cfg);

std::vector<std::string> run_config_keys();

}  // namespace getcap
