#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "getcap/data.hpp"
#include "getcap/errors.hpp"
#include "helpers.hpp"

using namespace getcap;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("getcap_data_" + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

const std::vector<std::uint8_t> kFixture{
    0x47, 0x45, 0x54, 0x46, 0x01, 0x00, 0x00, 0x00, 0x02, 0x00, 0x00, 0x00, 0x03, 0x00, 0x00, 0x00,
    0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x20, 0xc0, 0x00, 0x00, 0x00, 0x3e, 0x00, 0x00, 0x40, 0x40,
    0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x40, 0xbf};

FeatureRecord fixture_record() {
  FeatureRecord r;
  r.image_id = "fixture";
  r.regions = 2;
  r.d_in = 3;
  r.features = {1.0f, -2.5f, 0.125f, 3.0f, 0.0f, -0.75f};
  return r;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

}  // namespace

TEST_CASE("tokenize") {
  CHECK(tokenize("  A Man\triding\n a HORSE ") ==
        std::vector<std::string>{"a", "man", "riding", "a", "horse"});
  CHECK(tokenize("").empty());
  CHECK(tokenize(" \t ").empty());
}

TEST_CASE("vocabulary") {
  Vocabulary empty;
  CHECK(empty.size() == 4);
  CHECK(empty.token(kPad) == "<pad>");
  CHECK(empty.token(kBos) == "<bos>");
  CHECK(empty.token(kEos) == "<eos>");
  CHECK(empty.token(kUnk) == "<unk>");

  Vocabulary v = Vocabulary::build({"the cat sat", "The dog sat", "a cat"}, 2);
  CHECK(v.size() == 7);
  CHECK(v.id("the") == 4);
  CHECK(v.id("cat") == 5);
  CHECK(v.id("sat") == 6);
  CHECK(v.id("dog") == kUnk);
  CHECK_FALSE(v.contains("a"));
  CHECK(v.token(6) == "sat");
  CHECK_THROWS_AS(v.token(7), LookupError);
  CHECK_THROWS_AS(v.token(-1), LookupError);
  CHECK(Vocabulary::build({"x y", "y"}, 1).tokens() == std::vector<std::string>{"<pad>", "<bos>", "<eos>", "<unk>", "x", "y"});

  CHECK_THROWS_AS(Vocabulary({"a", "a"}), DataError);
  CHECK_THROWS_AS(Vocabulary({"<eos>"}), DataError);
}

TEST_CASE("caption encoding") {
  Vocabulary v({"a", "man", "horse"});
  SUBCASE("fixed length with BOS, EOS and padding") {
    EncodedCaption e = encode_caption("A man", v, 6);
    CHECK(e.ids == std::vector<int>{kBos, 4, 5, kEos, kPad, kPad});
    CHECK_FALSE(e.truncated);
  }
  SUBCASE("unknown words map to UNK in place") {
    EncodedCaption e = encode_caption("a zebra man", v, 6);
    CHECK(e.ids == std::vector<int>{kBos, 4, kUnk, 5, kEos, kPad});
  }
  SUBCASE("long captions are truncated to max_len - 2 words") {
    EncodedCaption e = encode_caption("a man a horse a man", v, 5);
    CHECK(e.ids == std::vector<int>{kBos, 4, 5, 4, kEos});
    CHECK(e.truncated);
  }
  SUBCASE("decoding drops reserved ids") {
    const std::vector<int> ids{kBos, 4, kUnk, 6, kEos, kPad};
    CHECK(decode_tokens(ids, v) == "a horse");
    CHECK(decode_tokens(encode_caption("a man horse", v, 8).ids, v) == "a man horse");
  }
  SUBCASE("content tokens") {
    const std::vector<int> ids{kBos, 4, kUnk, 6, kEos, 5, kPad};
    CHECK(content_tokens(ids) == std::vector<int>{4, kUnk, 6});
    const std::vector<int> no_bos{5, 6, kPad};
    CHECK(content_tokens(no_bos) == std::vector<int>{5, 6});
    CHECK(content_tokens(std::vector<int>{}).empty());
  }
  CHECK_THROWS_AS(encode_caption("a", v, 1), ContractError);
}

TEST_CASE("feature file format") {
  SUBCASE("serialization matches the hand-built bytes") {
    CHECK(serialize_features(fixture_record()) == kFixture);
    FeatureRecord r = parse_features(kFixture, "fixture");
    CHECK(r.regions == 2);
    CHECK(r.d_in == 3);
    CHECK(r.features == fixture_record().features);
    Tensor t = r.to_tensor();
    CHECK(t.shape() == Shape{2, 3});
    CHECK(t.at(0, 1) == -2.5);
    CHECK(t.at(1, 2) == -0.75);
  }
  SUBCASE("bad magic") {
    auto b = kFixture;
    b[0] = 'X';
    CHECK_THROWS_AS(parse_features(b), FormatError);
  }
  SUBCASE("unsupported version") {
    auto b = kFixture;
    b[4] = 2;
    CHECK_THROWS_AS(parse_features(b), FormatError);
  }
  SUBCASE("truncated header") {
    std::vector<std::uint8_t> b(kFixture.begin(), kFixture.begin() + 10);
    CHECK_THROWS_AS(parse_features(b), CorruptionError);
  }
  SUBCASE("short payload") {
    std::vector<std::uint8_t> b(kFixture.begin(), kFixture.end() - 1);
    CHECK_THROWS_AS(parse_features(b), CorruptionError);
  }
  SUBCASE("trailing bytes") {
    auto b = kFixture;
    b.push_back(0);
    CHECK_THROWS_AS(parse_features(b), CorruptionError);
  }
  SUBCASE("zero regions") {
    auto b = kFixture;
    b[8] = 0;
    CHECK_THROWS_AS(parse_features(std::span(b).first(16)), DataError);
  }
  SUBCASE("non-finite values") {
    FeatureRecord r = fixture_record();
    r.features[4] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(parse_features(serialize_features(r)), DataError);
  }
  SUBCASE("payload size must match the header") {
    FeatureRecord r = fixture_record();
    r.features.pop_back();
    CHECK_THROWS_AS(serialize_features(r), DataError);
  }
}

TEST_CASE("feature files, manifests and the store") {
  TempDir tmp;
  write_features(tmp.path / "feat" / "a.getf", fixture_record());
  FeatureRecord b = fixture_record();
  b.features[0] = 9.0f;
  write_features(tmp.path / "feat" / "b.getf", b);

  FeatureRecord loaded = load_features(tmp.path / "feat" / "a.getf");
  CHECK(loaded.image_id == "a");
  CHECK(loaded.features == fixture_record().features);
  CHECK_THROWS_AS(load_features(tmp.path / "missing.getf"), LookupError);

  write_manifest(tmp.path / "manifest.tsv", {{"img-a", "feat/a.getf"}, {"img-b", "feat/b.getf"}});
  auto entries = read_manifest(tmp.path / "manifest.tsv");
  REQUIRE(entries.size() == 2);
  CHECK(entries[1].image_id == "img-b");
  CHECK(entries[1].relative_path == "feat/b.getf");

  FeatureStore store = FeatureStore::open(tmp.path / "manifest.tsv");
  CHECK(store.size() == 2);
  CHECK(store.ids() == std::vector<std::string>{"img-a", "img-b"});
  CHECK(store.get("img-b").features[0] == 9.0f);
  CHECK(store.get("img-a").image_id == "img-a");
  CHECK_THROWS_AS(store.get("img-c"), LookupError);

  write_text(tmp.path / "bad.tsv", "img-a feat/a.getf\n");
  CHECK_THROWS_AS(read_manifest(tmp.path / "bad.tsv"), FormatError);
  CHECK_THROWS_AS(read_manifest(tmp.path / "nope.tsv"), LookupError);
  write_text(tmp.path / "dangling.tsv", "img-z\tfeat/z.getf\n");
  CHECK_THROWS_AS(FeatureStore::open(tmp.path / "dangling.tsv"), LookupError);
}

TEST_CASE("caption files and datasets") {
  TempDir tmp;
  write_text(tmp.path / "caps.tsv", "i1\ta man\r\n\ni2\ta horse\ni1\tman horse\n");
  auto lines = read_caption_file(tmp.path / "caps.tsv");
  REQUIRE(lines.size() == 3);
  CHECK(lines[0].text == "a man");
  CHECK(lines[2].image_id == "i1");

  write_caption_file(tmp.path / "out" / "copy.tsv", lines);
  auto again = read_caption_file(tmp.path / "out" / "copy.tsv");
  REQUIRE(again.size() == 3);
  CHECK(again[1].text == "a horse");

  FeatureStore store;
  for (const char* id : {"i1", "i2"}) {
    FeatureRecord r = fixture_record();
    r.image_id = id;
    store.add(r);
  }
  Vocabulary v({"a", "man", "horse"});
  CaptionDataset ds = make_dataset("train", lines, v, 5, store);
  CHECK(ds.split == "train");
  REQUIRE(ds.size() == 2);
  CHECK(ds.items[0].image_id == "i1");
  CHECK(ds.items[0].references.size() == 2);
  CHECK(ds.items[1].references[0] == std::vector<int>{kBos, 4, 6, kEos, kPad});
  CHECK(ds.reference_words(0) == std::vector<std::vector<int>>{{4, 5}, {5, 6}});

  CHECK_THROWS_AS(make_dataset("val", {{"i9", "a man"}}, v, 5, store), LookupError);
  write_text(tmp.path / "bad.tsv", "no tab here\n");
  CHECK_THROWS_AS(read_caption_file(tmp.path / "bad.tsv"), FormatError);
  CHECK_THROWS_AS(read_caption_file(tmp.path / "nope.tsv"), LookupError);
}

TEST_CASE("synthetic dataset") {
  SyntheticSpec spec;
  spec.images = 6;
  spec.val_images = 2;
  spec.captions_per_image = 2;
  SyntheticData a = make_synthetic_dataset(spec);
  SyntheticData b = make_synthetic_dataset(spec);

  CHECK(a.vocab.size() == spec.vocab_size);
  CHECK(a.store.size() == 8);
  CHECK(a.train_lines.size() == 12);
  CHECK(a.val_lines.size() == 4);
  for (const auto& l : a.train_lines) {
    const auto words = tokenize(l.text);
    CHECK(words.size() >= 3);
    CHECK(words.size() <= spec.caption_len);
    for (const auto& w : words) CHECK(a.vocab.contains(w));
  }
  for (std::size_t i = 0; i < a.train_lines.size(); ++i) {
    CHECK(a.train_lines[i].text == b.train_lines[i].text);
  }
  for (const auto& id : a.store.ids()) {
    CHECK(a.store.get(id).features == b.store.get(id).features);
    CHECK(a.store.get(id).regions == spec.regions);
  }

  spec.seed = 1;
  SyntheticData c = make_synthetic_dataset(spec);
  CHECK(c.store.get("img00000").features != a.store.get("img00000").features);

  TempDir tmp;
  write_synthetic_dataset(tmp.path, a);
  FeatureStore reopened = FeatureStore::open(tmp.path / "manifest.tsv");
  CHECK(reopened.size() == 8);
  CHECK(reopened.get("img00003").features == a.store.get("img00003").features);
  CHECK(read_caption_file(tmp.path / "captions_train.tsv").size() == 12);
  CHECK(read_caption_file(tmp.path / "captions_val.tsv").size() == 4);

  spec.vocab_size = 4;
  CHECK_THROWS_AS(make_synthetic_dataset(spec), ConfigError);
  spec.vocab_size = 30;
  spec.regions = 0;
  CHECK_THROWS_AS(make_synthetic_dataset(spec), ConfigError);
}
