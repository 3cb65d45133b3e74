#include "getcap/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "getcap/errors.hpp"

namespace getcap {

namespace fs = std::filesystem;

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// ---- Vocabulary -------------------------------------------------------------

Vocabulary::Vocabulary() : tokens_{"<pad>", "<bos>", "<eos>", "<unk>"} {}

Vocabulary::Vocabulary(const std::vector<std::string>& words) : Vocabulary() {
  for (const auto& w : words) {
    if (index_.count(w) || std::find(tokens_.begin(), tokens_.begin() + kNumReserved, w) !=
                               tokens_.begin() + kNumReserved) {
      throw DataError("vocabulary: duplicate or reserved token '" + w + "'");
    }
    index_.emplace(w, static_cast<int>(tokens_.size()));
    tokens_.push_back(w);
  }
}

Vocabulary Vocabulary::build(const std::vector<std::string>& captions, std::size_t min_count) {
  std::vector<std::string> order;
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& c : captions) {
    for (auto& w : tokenize(c)) {
      if (counts[w]++ == 0) order.push_back(w);
    }
  }
  std::vector<std::string> kept;
  for (const auto& w : order) {
    if (counts[w] >= min_count) kept.push_back(w);
  }
  return Vocabulary(kept);
}

int Vocabulary::id(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw LookupError("vocabulary: id " + std::to_string(id) + " outside [0, " +
                      std::to_string(tokens_.size()) + ")");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

EncodedCaption encode_caption(const std::string& text, const Vocabulary& vocab, std::size_t max_len) {
  if (max_len < 2) throw ContractError("encode_caption: max_len must be >= 2");
  const auto words = tokenize(text);
  EncodedCaption out;
  out.ids.reserve(max_len);
  out.ids.push_back(kBos);
  const std::size_t room = max_len - 2;
  out.truncated = words.size() > room;
  for (std::size_t i = 0; i < std::min(room, words.size()); ++i) out.ids.push_back(vocab.id(words[i]));
  out.ids.push_back(kEos);
  out.ids.resize(max_len, kPad);
  return out;
}

std::string decode_tokens(std::span<const int> ids, const Vocabulary& vocab) {
  std::string out;
  for (int id : ids) {
    if (id < kNumReserved) continue;
    if (!out.empty()) out.push_back(' ');
    out += vocab.token(id);
  }
  return out;
}

std::vector<int> content_tokens(std::span<const int> ids) {
  std::vector<int> out;
  std::size_t i = (!ids.empty() && ids[0] == kBos) ? 1 : 0;
  for (; i < ids.size(); ++i) {
    if (ids[i] == kEos || ids[i] == kPad) break;
    out.push_back(ids[i]);
  }
  return out;
}

// ---- feature files ---------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'G', 'E', 'T', 'F'};
constexpr std::size_t kHeaderBytes = 16;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[at + i]) << (8 * i);
  return v;
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LookupError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

}  // namespace

Tensor FeatureRecord::to_tensor() const {
  std::vector<double> wide(features.begin(), features.end());
  return Tensor({regions, d_in}, std::move(wide));
}

std::vector<std::uint8_t> serialize_features(const FeatureRecord& record) {
  if (record.features.size() != static_cast<std::size_t>(record.regions) * record.d_in) {
    throw DataError("feature record '" + record.image_id + "': payload size mismatch");
  }
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, kFeatureVersion);
  put_u32(out, record.regions);
  put_u32(out, record.d_in);
  for (float f : record.features) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof bits);
    put_u32(out, bits);
  }
  return out;
}

FeatureRecord parse_features(std::span<const std::uint8_t> bytes, const std::string& image_id) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("feature file '" + image_id + "': bad magic (expected GETF)");
  }
  if (bytes.size() < kHeaderBytes) throw CorruptionError("feature file '" + image_id + "': truncated header");
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kFeatureVersion) {
    throw FormatError("feature file '" + image_id + "': unsupported version " + std::to_string(version));
  }
  FeatureRecord r;
  r.image_id = image_id;
  r.regions = get_u32(bytes, 8);
  r.d_in = get_u32(bytes, 12);
  if (r.regions < 1 || r.d_in < 1) {
    throw DataError("feature file '" + image_id + "': N and d_in must be >= 1");
  }
  const std::size_t count = static_cast<std::size_t>(r.regions) * r.d_in;
  const std::size_t expected = kHeaderBytes + count * 4;
  if (bytes.size() < expected) {
    throw CorruptionError("feature file '" + image_id + "': payload has " +
                          std::to_string(bytes.size() - kHeaderBytes) + " bytes, expected " +
                          std::to_string(count * 4));
  }
  if (bytes.size() > expected) {
    throw CorruptionError("feature file '" + image_id + "': trailing bytes after payload");
  }
  r.features.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint32_t bits = get_u32(bytes, kHeaderBytes + 4 * i);
    float f;
    std::memcpy(&f, &bits, sizeof f);
    if (!std::isfinite(f)) {
      throw DataError("feature file '" + image_id + "': non-finite value at index " + std::to_string(i));
    }
    r.features[i] = f;
  }
  return r;
}

void write_features(const fs::path& path, const FeatureRecord& record) {
  write_file(path, serialize_features(record));
}

FeatureRecord load_features(const fs::path& path, const std::string& image_id) {
  const auto bytes = read_file(path);
  return parse_features(bytes, image_id.empty() ? path.stem().string() : image_id);
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LookupError("feature manifest not found: " + path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size()) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) +
                        ": expected image-id<TAB>relative-path");
    }
    out.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  return out;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  for (const auto& e : entries) out << e.image_id << '\t' << e.relative_path << '\n';
}

FeatureStore FeatureStore::open(const fs::path& manifest) {
  FeatureStore store;
  const fs::path base = manifest.parent_path();
  for (const auto& e : read_manifest(manifest)) store.add(load_features(base / e.relative_path, e.image_id));
  return store;
}

void FeatureStore::add(FeatureRecord record) {
  std::string id = record.image_id;
  records_.insert_or_assign(std::move(id), std::move(record));
}

const FeatureRecord& FeatureStore::get(const std::string& image_id) const {
  auto it = records_.find(image_id);
  if (it == records_.end()) throw LookupError("unknown image id '" + image_id + "'");
  return it->second;
}

std::vector<std::string> FeatureStore::ids() const {
  std::vector<std::string> out;
  for (const auto& [id, _] : records_) out.push_back(id);
  return out;
}

// ---- captions ----------------------------------------------------------------

std::vector<CaptionLine> read_caption_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LookupError("caption file not found: " + path.string());
  std::vector<CaptionLine> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) +
                        ": expected image-id<TAB>caption");
    }
    out.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  return out;
}

void write_caption_file(const fs::path& path, const std::vector<CaptionLine>& lines) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  for (const auto& l : lines) out << l.image_id << '\t' << l.text << '\n';
}

std::vector<std::vector<int>> CaptionDataset::reference_words(std::size_t i) const {
  std::vector<std::vector<int>> out;
  for (const auto& r : items.at(i).references) out.push_back(content_tokens(r));
  return out;
}

CaptionDataset make_dataset(const std::string& split, const std::vector<CaptionLine>& lines,
                            const Vocabulary& vocab, std::size_t max_len,
                            const FeatureStore& store) {
  CaptionDataset ds;
  ds.split = split;
  std::unordered_map<std::string, std::size_t> slot;
  for (const auto& l : lines) {
    if (!store.contains(l.image_id)) {
      throw LookupError("caption for image '" + l.image_id + "' has no features in the store");
    }
    auto [it, inserted] = slot.emplace(l.image_id, ds.items.size());
    if (inserted) ds.items.push_back({l.image_id, {}});
    ds.items[it->second].references.push_back(encode_caption(l.text, vocab, max_len).ids);
  }
  return ds;
}

// ---- synthetic -------------------------------------------------------------------

SyntheticData make_synthetic_dataset(const SyntheticSpec& spec) {
  if (spec.images < 1 || spec.regions < 1 || spec.d_in < 1 || spec.caption_len < 1) {
    throw ConfigError("synthetic dataset: images, regions, d_in and caption_len must be >= 1");
  }
  if (spec.vocab_size <= static_cast<std::size_t>(kNumReserved)) {
    throw ConfigError("synthetic dataset: vocab_size must exceed the reserved ids");
  }
  Rng rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t words = spec.vocab_size - kNumReserved;

  std::vector<std::string> names;
  for (std::size_t w = 0; w < words; ++w) {
    std::ostringstream os;
    os << 'w' << std::setw(2) << std::setfill('0') << w;
    names.push_back(os.str());
  }
  SyntheticData out;
  out.vocab = Vocabulary(names);

  auto draw = [&](std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = normal(rng);
    return v;
  };
  std::vector<std::vector<double>> word_proto(words), pos_proto(spec.caption_len);
  for (auto& p : word_proto) p = draw(spec.d_in);
  for (auto& p : pos_proto) p = draw(spec.d_in);

  const std::size_t min_len = std::min<std::size_t>(3, spec.caption_len);
  std::uniform_int_distribution<std::size_t> len_dist(min_len, spec.caption_len);
  std::uniform_int_distribution<std::size_t> word_dist(0, words - 1);

  const std::size_t total = spec.images + spec.val_images;
  for (std::size_t img = 0; img < total; ++img) {
    std::ostringstream id;
    id << "img" << std::setw(5) << std::setfill('0') << img;
    std::vector<std::size_t> caption(len_dist(rng));
    for (auto& w : caption) w = word_dist(rng);

    FeatureRecord rec;
    rec.image_id = id.str();
    rec.regions = static_cast<std::uint32_t>(spec.regions);
    rec.d_in = static_cast<std::uint32_t>(spec.d_in);
    rec.features.assign(spec.regions * spec.d_in, 0.0f);
    std::vector<double> acc(spec.regions * spec.d_in, 0.0);
    for (std::size_t k = 0; k < caption.size(); ++k) {
      const std::size_t r = k % spec.regions;
      for (std::size_t j = 0; j < spec.d_in; ++j) {
        acc[r * spec.d_in + j] += word_proto[caption[k]][j] + 0.5 * pos_proto[k][j];
      }
    }
    for (std::size_t i = 0; i < acc.size(); ++i) {
      rec.features[i] = static_cast<float>(acc[i] + 0.05 * normal(rng));
    }
    out.store.add(rec);

    auto& lines = img < spec.images ? out.train_lines : out.val_lines;
    auto text_of = [&](const std::vector<std::size_t>& c) {
      std::string s;
      for (std::size_t w : c) s += (s.empty() ? "" : " ") + names[w];
      return s;
    };
    lines.push_back({rec.image_id, text_of(caption)});
    for (std::size_t extra = 1; extra < spec.captions_per_image; ++extra) {
      std::vector<std::size_t> variant = caption;
      std::uniform_int_distribution<std::size_t> pos(0, variant.size() - 1);
      variant[pos(rng)] = word_dist(rng);
      lines.push_back({rec.image_id, text_of(variant)});
    }
  }
  return out;
}

void write_synthetic_dataset(const fs::path& dir, const SyntheticData& data) {
  std::vector<ManifestEntry> manifest;
  for (const auto& id : data.store.ids()) {
    const std::string rel = "features/" + id + ".getf";
    write_features(dir / rel, data.store.get(id));
    manifest.push_back({id, rel});
  }
  write_manifest(dir / "manifest.tsv", manifest);
  write_caption_file(dir / "captions_train.tsv", data.train_lines);
  if (!data.val_lines.empty()) write_caption_file(dir / "captions_val.tsv", data.val_lines);
}

}  // namespace getcap
