#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "getcap/data.hpp"
#include "getcap/gradcheck.hpp"
#include "getcap/inference.hpp"
#include "getcap/run_config.hpp"

namespace getcap {

struct LoadedData {
  Vocabulary vocab;
  FeatureStore store;
  CaptionDataset train;
  CaptionDataset val;

  const CaptionDataset& split(const std::string& name) const;
};

LoadedData load_data(const RunConfig& cfg);
// Fills in d_in, vocab_size and the default feed-forward width.
ModelConfig resolve_model(const RunConfig& cfg, const LoadedData& data);

// out/<name>/{config, checkpoints/, logs/, captions/}
struct RunPaths {
  std::filesystem::path root;
  std::filesystem::path checkpoints;
  std::filesystem::path logs;
  std::filesystem::path captions;

  // Creates the layout and writes the resolved config beside it.
  static RunPaths prepare(const std::filesystem::path& out_dir, const RunConfig& cfg);
};

// Each command validates the config before doing anything and reports
// progress lines on `report`.
std::filesystem::path cmd_train(const RunConfig& cfg, const std::filesystem::path& out_dir, std::ostream& report);
std::filesystem::path cmd_finetune(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                                   const std::filesystem::path& out_dir, std::ostream& report);

struct CaptionRecord {
  std::string image_id;
  std::vector<int> tokens;  // EOS stripped
  std::string text;
  double log_prob = 0.0;
};

// Empty `image_ids` captions the configured eval split.
std::vector<CaptionRecord> cmd_caption(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                                       const std::vector<std::string>& image_ids,
                                       const std::filesystem::path& out_dir, std::ostream& report);
EvalResult cmd_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint, const std::string& split,
                    const std::filesystem::path& out_dir, std::ostream& report);

struct GradcheckCase {
  std::string label;
  ModelConfig model;
};

// Tiny end-to-end models (3 regions, d = 8, h = 2, L = 2) covering both
// controllers with every fusion mode, plus the plain baseline.
std::vector<GradcheckCase> gradcheck_cases();
// Finite-difference check of the XE loss of a two-word caption.
GradCheckReport gradcheck_model(const ModelConfig& model, std::uint64_t seed,
                                const GradCheckOptions& opts = {});

struct GradcheckResult {
  std::vector<std::pair<std::string, GradCheckReport>> cases;
  bool passed = true;
};

GradcheckResult cmd_gradcheck(const RunConfig& cfg, const std::filesystem::path& out_dir, std::ostream& report);

struct AttributionRecords {
  std::string image_id;
  std::vector<int> caption;
  std::vector<WordAttribution> words;
};

AttributionRecords cmd_attribute(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                                 const std::string& image_id, const std::filesystem::path& out_dir,
                                 std::ostream& report);

}  // namespace getcap
