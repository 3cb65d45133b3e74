#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "getcap/tensor.hpp"
#include "getcap/tokens.hpp"

namespace getcap {

// Lowercases and splits on ASCII whitespace.
std::vector<std::string> tokenize(const std::string& text);

// Ids 0..3 are PAD, BOS, EOS, UNK; words follow densely from 4.
class Vocabulary {
 public:
  Vocabulary();
  explicit Vocabulary(const std::vector<std::string>& words);

  // Words occurring at least `min_count` times, ordered by first appearance.
  static Vocabulary build(const std::vector<std::string>& captions, std::size_t min_count);

  int id(const std::string& word) const;  // UNK when absent
  const std::string& token(int id) const;
  bool contains(const std::string& word) const { return index_.count(word) != 0; }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct EncodedCaption {
  std::vector<int> ids;  // BOS w... EOS PAD..., exactly max_len long
  bool truncated = false;
};

EncodedCaption encode_caption(const std::string& text, const Vocabulary& vocab, std::size_t max_len);
// Drops reserved ids and joins the remaining words with single spaces.
std::string decode_tokens(std::span<const int> ids, const Vocabulary& vocab);
// Word ids of an encoded caption: everything after BOS up to EOS/PAD.
std::vector<int> content_tokens(std::span<const int> ids);

// ---- feature files ---------------------------------------------------------
//
// Little-endian: "GETF", u32 version (1), u32 N, u32 d_in, N*d_in float32
// row-major.

inline constexpr std::uint32_t kFeatureVersion = 1;

struct FeatureRecord {
  std::string image_id;
  std::uint32_t regions = 0;
  std::uint32_t d_in = 0;
  std::vector<float> features;

  Tensor to_tensor() const;  // widened to float64
};

std::vector<std::uint8_t> serialize_features(const FeatureRecord& record);
FeatureRecord parse_features(std::span<const std::uint8_t> bytes, const std::string& image_id = {});
void write_features(const std::filesystem::path& path, const FeatureRecord& record);
FeatureRecord load_features(const std::filesystem::path& path, const std::string& image_id = {});

struct ManifestEntry {
  std::string image_id;
  std::string relative_path;
};

// Line-delimited "image-id<TAB>relative-path".
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

class FeatureStore {
 public:
  FeatureStore() = default;
  // Loads every record listed in the manifest; paths resolve relative to it.
  static FeatureStore open(const std::filesystem::path& manifest);

  void add(FeatureRecord record);
  bool contains(const std::string& image_id) const { return records_.count(image_id) != 0; }
  const FeatureRecord& get(const std::string& image_id) const;
  std::vector<std::string> ids() const;
  std::size_t size() const { return records_.size(); }

 private:
  std::map<std::string, FeatureRecord> records_;
};

// ---- captions ---------------------------------------------------------------

struct CaptionLine {
  std::string image_id;
  std::string text;
};

// Line-delimited "image-id<TAB>caption text", UTF-8.
std::vector<CaptionLine> read_caption_file(const std::filesystem::path& path);
void write_caption_file(const std::filesystem::path& path, const std::vector<CaptionLine>& lines);

struct ImageCaptions {
  std::string image_id;
  std::vector<std::vector<int>> references;  // encoded, max_len ids each
};

struct CaptionDataset {
  std::string split;
  std::vector<ImageCaptions> items;

  std::size_t size() const { return items.size(); }
  // Word-id references of item i, for scoring.
  std::vector<std::vector<int>> reference_words(std::size_t i) const;
};

// Groups lines by image id (first-appearance order) and encodes them. Every
// id must be present in `store`.
CaptionDataset make_dataset(const std::string& split, const std::vector<CaptionLine>& lines,
                            const Vocabulary& vocab, std::size_t max_len,
                            const FeatureStore& store);

// ---- synthetic data ------------------------------------------------------------

struct SyntheticSpec {
  std::uint64_t seed = 0;
  std::size_t images = 8;
  std::size_t regions = 3;
  std::size_t d_in = 16;
  std::size_t vocab_size = 30;  // including the reserved ids
  std::size_t caption_len = 6;  // longest caption in words
  std::size_t captions_per_image = 1;
  std::size_t val_images = 0;
};

struct SyntheticData {
  Vocabulary vocab;
  FeatureStore store;
  std::vector<CaptionLine> train_lines;
  std::vector<CaptionLine> val_lines;
};

// Region features are a fixed function of the caption (word and position
// prototypes plus small seeded noise), so captions are recoverable from
// features.
SyntheticData make_synthetic_dataset(const SyntheticSpec& spec);

// Writes features/<id>.getf, manifest.tsv, captions_train.tsv and (when
// non-empty) captions_val.tsv under `dir`.
void write_synthetic_dataset(const std::filesystem::path& dir, const SyntheticData& data);

}  // namespace getcap
