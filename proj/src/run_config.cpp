#include "getcap/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "getcap/errors.hpp"

namespace getcap {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t parse_uint(const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end || v.empty()) throw ConfigError("expected a non-negative integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& v) {
  if (v.empty()) throw ConfigError("expected a number, got ''");
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    throw ConfigError("expected a number, got '" + v + "'");
  }
  if (used != v.size()) throw ConfigError("expected a number, got '" + v + "'");
  return out;
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define GETCAP_UINT(KEY, EXPR)                                                         \
  Field {                                                                              \
    KEY, [](RunConfig& c, const std::string& v) { c.EXPR = parse_uint(v); },          \
        [](const RunConfig& c) { return std::to_string(c.EXPR); }                      \
  }
#define GETCAP_DOUBLE(KEY, EXPR)                                                       \
  Field {                                                                              \
    KEY, [](RunConfig& c, const std::string& v) { c.EXPR = parse_double(v); },        \
        [](const RunConfig& c) { return fmt_double(c.EXPR); }                          \
  }
#define GETCAP_STRING(KEY, EXPR)                                                       \
  Field {                                                                              \
    KEY, [](RunConfig& c, const std::string& v) { c.EXPR = v; },                      \
        [](const RunConfig& c) { return std::string(c.EXPR); }                         \
  }
#define GETCAP_PATH(KEY, EXPR)                                                         \
  Field {                                                                              \
    KEY, [](RunConfig& c, const std::string& v) { c.EXPR = fs::path(v); },            \
        [](const RunConfig& c) { return c.EXPR.string(); }                             \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      GETCAP_STRING("name", name),
      GETCAP_UINT("seed", seed),
      GETCAP_UINT("model.layers", model.layers),
      GETCAP_UINT("model.width", model.width),
      GETCAP_UINT("model.heads", model.heads),
      GETCAP_UINT("model.ff_width", model.ff_width),
      GETCAP_DOUBLE("model.keep_prob", model.keep_prob),
      Field{"model.intra_layer",
            [](RunConfig& c, const std::string& v) { c.model.intra = parse_intra_layer(v); },
            [](const RunConfig& c) { return to_string(c.model.intra); }},
      Field{"model.fusion",
            [](RunConfig& c, const std::string& v) { c.model.fusion = parse_fusion(v); },
            [](const RunConfig& c) { return to_string(c.model.fusion); }},
      Field{"model.controller",
            [](RunConfig& c, const std::string& v) { c.model.controller = parse_controller(v); },
            [](const RunConfig& c) { return to_string(c.model.controller); }},
      GETCAP_UINT("model.max_len", model.max_len),
      GETCAP_UINT("train.batch_size", train.batch_size),
      GETCAP_UINT("train.warmup", train.warmup),
      GETCAP_UINT("train.xe_epochs", train.xe_epochs),
      GETCAP_DOUBLE("train.xe_lr_scale", train.xe_lr_scale),
      GETCAP_DOUBLE("train.scst_lr", train.scst_lr),
      GETCAP_UINT("train.scst_epochs", train.scst_epochs),
      GETCAP_UINT("train.k", train.beam_size),
      GETCAP_DOUBLE("train.clip_norm", train.clip_norm),
      GETCAP_UINT("train.checkpoint_every", checkpoint_every),
      GETCAP_UINT("eval.beam", eval_beam),
      GETCAP_STRING("eval.split", eval_split),
      GETCAP_UINT("attribute.steps", attribute_steps),
      GETCAP_STRING("data.source", data.source),
      GETCAP_PATH("data.manifest", data.manifest),
      GETCAP_PATH("data.train_captions", data.train_captions),
      GETCAP_PATH("data.val_captions", data.val_captions),
      GETCAP_UINT("data.min_count", data.min_count),
      GETCAP_UINT("data.synthetic.seed", data.synthetic.seed),
      GETCAP_UINT("data.synthetic.images", data.synthetic.images),
      GETCAP_UINT("data.synthetic.val_images", data.synthetic.val_images),
      GETCAP_UINT("data.synthetic.regions", data.synthetic.regions),
      GETCAP_UINT("data.synthetic.d_in", data.synthetic.d_in),
      GETCAP_UINT("data.synthetic.vocab_size", data.synthetic.vocab_size),
      GETCAP_UINT("data.synthetic.caption_len", data.synthetic.caption_len),
      GETCAP_UINT("data.synthetic.captions_per_image", data.synthetic.captions_per_image),
  };
  return table;
}

#undef GETCAP_UINT
#undef GETCAP_DOUBLE
#undef GETCAP_STRING
#undef GETCAP_PATH

}  // namespace

RunConfig default_run_config() {
  RunConfig c;
  c.model.width = 512;
  c.model.heads = 8;
  c.model.layers = 3;
  c.model.ff_width = 0;
  c.model.keep_prob = 0.9;
  c.model.max_len = 20;
  c.train.batch_size = 50;
  c.train.beam_size = 5;
  return c;
}

std::vector<std::string> run_config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.key);
  return out;
}

RunConfig parse_run_config(const std::string& text) {
  std::map<std::string, const Field*> by_key;
  for (const auto& f : fields()) by_key.emplace(f.key, &f);

  RunConfig cfg = default_run_config();
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "config line " + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto it = by_key.find(key);
    if (it == by_key.end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + "key '" + key + "' given twice");
    try {
      it->second->set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + key + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file not found: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig cfg = parse_run_config(ss.str());
  const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
  for (fs::path* p : {&cfg.data.manifest, &cfg.data.train_captions, &cfg.data.val_captions}) {
    if (!p->empty() && p->is_relative()) *p = fs::absolute(base / *p).lexically_normal();
  }
  return cfg;
}

std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

std::vector<std::string> RunConfig::violations() const {
  std::vector<std::string> out;
  if (name.empty() || name.find('/') != std::string::npos) out.push_back("name must be a non-empty single path component");

  ModelConfig m = model;
  if (m.ff_width == 0) m.ff_width = 4 * m.width;
  // The data decides these two; stand-ins keep the remaining checks meaningful.
  m.d_in = data.source == "synthetic" ? data.synthetic.d_in : 1;
  m.vocab_size = data.source == "synthetic" ? data.synthetic.vocab_size : kNumReserved + 1;
  for (auto& v : m.violations()) out.push_back(std::move(v));
  for (auto& v : train.violations()) out.push_back(std::move(v));

  if (eval_beam < 1) out.push_back("eval.beam must be >= 1");
  if (eval_split != "train" && eval_split != "val") out.push_back("eval.split must be 'train' or 'val'");
  if (attribute_steps < 1) out.push_back("attribute.steps must be >= 1");

  if (data.source == "synthetic") {
    const auto& s = data.synthetic;
    if (s.images < 1) out.push_back("data.synthetic.images must be >= 1");
    if (s.regions < 1) out.push_back("data.synthetic.regions must be >= 1");
    if (s.d_in < 1) out.push_back("data.synthetic.d_in must be >= 1");
    if (s.vocab_size <= kNumReserved) out.push_back("data.synthetic.vocab_size must exceed the 4 reserved ids");
    if (s.caption_len < 1) out.push_back("data.synthetic.caption_len must be >= 1");
    if (s.captions_per_image < 1) out.push_back("data.synthetic.captions_per_image must be >= 1");
    if (s.caption_len + 2 > model.max_len) out.push_back("model.max_len must be >= data.synthetic.caption_len + 2");
  } else if (data.source == "files") {
    if (data.manifest.empty()) {
      out.push_back("data.manifest is required for data.source = files");
    } else if (!fs::is_regular_file(data.manifest)) {
      out.push_back("feature manifest not found: " + data.manifest.string());
    }
    if (data.train_captions.empty()) {
      out.push_back("data.train_captions is required for data.source = files");
    } else if (!fs::is_regular_file(data.train_captions)) {
      out.push_back("train caption file not found: " + data.train_captions.string());
    }
    if (!data.val_captions.empty() && !fs::is_regular_file(data.val_captions)) {
      out.push_back("val caption file not found: " + data.val_captions.string());
    }
    if (data.min_count < 1) out.push_back("data.min_count must be >= 1");
  } else {
    out.push_back("data.source must be 'synthetic' or 'files', got '" + data.source + "'");
  }
  return out;
}

void RunConfig::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::string msg = "invalid config (" + std::to_string(v.size()) + " problem" + (v.size() == 1 ? "" : "s") + "):";
  for (const auto& s : v) msg += "\n  - " + s;
  throw ConfigError(msg);
}

}  // namespace getcap
