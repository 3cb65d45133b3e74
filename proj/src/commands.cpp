#include "getcap/commands.hpp"

#include <chrono>
#include <fstream>
#include <ostream>

#include <json.hpp>

#include "getcap/checkpoint.hpp"
#include "getcap/errors.hpp"
#include "getcap/training.hpp"

namespace getcap {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class JsonLines {
 public:
  explicit JsonLines(const fs::path& path) : out_(path, std::ios::trunc) {
    if (!out_) throw DataError("cannot write " + path.string());
  }
  void write(const json& record) { out_ << record.dump() << '\n' << std::flush; }

 private:
  std::ofstream out_;
};

std::vector<std::string> texts_of(const std::vector<CaptionLine>& lines) {
  std::vector<std::string> out;
  out.reserve(lines.size());
  for (const auto& l : lines) out.push_back(l.text);
  return out;
}

CaptionModel load_model(const RunConfig& cfg, const LoadedData& data, const fs::path& checkpoint) {
  Rng rng(cfg.seed);
  CaptionModel model = CaptionModel::init(resolve_model(cfg, data), rng);
  load_checkpoint(checkpoint, model);
  return model;
}

std::string caption_text(std::span<const int> tokens, const Vocabulary& vocab) {
  return decode_tokens(tokens, vocab);
}

}  // namespace

const CaptionDataset& LoadedData::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") {
    if (val.items.empty()) throw ConfigError("split 'val' is empty for this data configuration");
    return val;
  }
  throw ConfigError("unknown split '" + name + "' (expected train or val)");
}

LoadedData load_data(const RunConfig& cfg) {
  LoadedData out;
  const std::size_t max_len = cfg.model.max_len;
  if (cfg.data.source == "synthetic") {
    SyntheticData syn = make_synthetic_dataset(cfg.data.synthetic);
    out.vocab = std::move(syn.vocab);
    out.store = std::move(syn.store);
    out.train = make_dataset("train", syn.train_lines, out.vocab, max_len, out.store);
    if (!syn.val_lines.empty()) out.val = make_dataset("val", syn.val_lines, out.vocab, max_len, out.store);
    return out;
  }
  out.store = FeatureStore::open(cfg.data.manifest);
  if (out.store.size() == 0) throw DataError("feature manifest lists no images: " + cfg.data.manifest.string());
  const auto train_lines = read_caption_file(cfg.data.train_captions);
  out.vocab = Vocabulary::build(texts_of(train_lines), cfg.data.min_count);
  out.train = make_dataset("train", train_lines, out.vocab, max_len, out.store);
  if (!cfg.data.val_captions.empty()) {
    out.val = make_dataset("val", read_caption_file(cfg.data.val_captions), out.vocab, max_len, out.store);
  }
  return out;
}

ModelConfig resolve_model(const RunConfig& cfg, const LoadedData& data) {
  ModelConfig m = cfg.model;
  if (m.ff_width == 0) m.ff_width = 4 * m.width;
  m.vocab_size = data.vocab.size();
  const auto ids = data.store.ids();
  if (ids.empty()) throw DataError("feature store is empty");
  m.d_in = data.store.get(ids.front()).d_in;
  for (const auto& id : ids) {
    if (data.store.get(id).d_in != m.d_in) {
      throw DataError("feature width of '" + id + "' differs from '" + ids.front() + "'");
    }
  }
  m.validate();
  return m;
}

RunPaths RunPaths::prepare(const fs::path& out_dir, const RunConfig& cfg) {
  RunPaths p;
  p.root = out_dir / cfg.name;
  p.checkpoints = p.root / "checkpoints";
  p.logs = p.root / "logs";
  p.captions = p.root / "captions";
  for (const auto& d : {p.checkpoints, p.logs, p.captions}) fs::create_directories(d);
  std::ofstream conf(p.root / "config", std::ios::trunc);
  if (!conf) throw DataError("cannot write " + (p.root / "config").string());
  conf << to_text(cfg);
  return p;
}

fs::path cmd_train(const RunConfig& cfg, const fs::path& out_dir, std::ostream& report) {
  cfg.validate();
  const LoadedData data = load_data(cfg);
  const RunPaths paths = RunPaths::prepare(out_dir, cfg);
  Rng rng(cfg.seed);
  CaptionModel model = CaptionModel::init(resolve_model(cfg, data), rng);

  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  JsonLines log(paths.logs / "train_xe.jsonl");
  double epoch_loss = 0.0;
  std::size_t epoch_steps = 0;
  TrainHooks hooks;
  hooks.on_step = [&](const StepLog& s) {
    log.write({{"phase", s.phase}, {"step", s.step}, {"epoch", s.epoch}, {"loss", s.loss}, {"lr", s.lr}});
    epoch_loss += s.loss;
    ++epoch_steps;
  };
  hooks.on_epoch = [&](std::size_t epoch) {
    const double mean = epoch_steps ? epoch_loss / static_cast<double>(epoch_steps) : 0.0;
    log.write({{"phase", "xe"}, {"epoch_end", epoch}, {"mean_loss", mean}});
    report << "xe epoch " << epoch + 1 << "/" << tc.xe_epochs << " mean per-token loss " << mean << "\n";
    epoch_loss = 0.0;
    epoch_steps = 0;
    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
      save_checkpoint(paths.checkpoints / ("xe_epoch" + std::to_string(epoch + 1) + ".getc"), model);
    }
  };
  train_xe(model, data.train, data.store, tc, hooks);
  const fs::path final_ckpt = paths.checkpoints / "xe.getc";
  save_checkpoint(final_ckpt, model);
  report << "wrote " << final_ckpt.string() << "\n";
  return final_ckpt;
}

fs::path cmd_finetune(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& out_dir,
                      std::ostream& report) {
  cfg.validate();
  const LoadedData data = load_data(cfg);
  CaptionModel model = load_model(cfg, data, checkpoint);
  const RunPaths paths = RunPaths::prepare(out_dir, cfg);
  const NGramStats stats = dataset_stats(data.train);

  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  JsonLines log(paths.logs / "finetune_scst.jsonl");
  double epoch_reward = 0.0;
  std::size_t epoch_steps = 0;
  TrainHooks hooks;
  hooks.on_step = [&](const StepLog& s) {
    log.write({{"phase", s.phase},
               {"step", s.step},
               {"epoch", s.epoch},
               {"loss", s.loss},
               {"lr", s.lr},
               {"mean_reward", s.mean_reward},
               {"baseline", s.baseline},
               {"updated", s.updated}});
    epoch_reward += s.mean_reward;
    ++epoch_steps;
  };
  hooks.on_epoch = [&](std::size_t epoch) {
    const double mean = epoch_steps ? epoch_reward / static_cast<double>(epoch_steps) : 0.0;
    log.write({{"phase", "scst"}, {"epoch_end", epoch}, {"mean_reward", mean}});
    report << "scst epoch " << epoch + 1 << "/" << tc.scst_epochs << " mean reward " << mean << "\n";
    epoch_reward = 0.0;
    epoch_steps = 0;
    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
      save_checkpoint(paths.checkpoints / ("scst_epoch" + std::to_string(epoch + 1) + ".getc"), model);
    }
  };
  finetune_scst(model, data.train, data.store, stats, tc, hooks);
  const fs::path final_ckpt = paths.checkpoints / "scst.getc";
  save_checkpoint(final_ckpt, model);
  report << "wrote " << final_ckpt.string() << "\n";
  return final_ckpt;
}

std::vector<CaptionRecord> cmd_caption(const RunConfig& cfg, const fs::path& checkpoint,
                                       const std::vector<std::string>& image_ids, const fs::path& out_dir,
                                       std::ostream& report) {
  cfg.validate();
  const LoadedData data = load_data(cfg);
  const CaptionModel model = load_model(cfg, data, checkpoint);
  std::vector<std::string> ids = image_ids;
  if (ids.empty()) {
    for (const auto& item : data.split(cfg.eval_split).items) ids.push_back(item.image_id);
  }
  for (const auto& id : ids) {
    if (!data.store.contains(id)) throw LookupError("unknown image id '" + id + "'");
  }
  const RunPaths paths = RunPaths::prepare(out_dir, cfg);

  std::vector<CaptionRecord> out;
  std::vector<CaptionLine> lines;
  NoGradScope no_grad;
  for (const auto& id : ids) {
    ForwardContext ctx = ForwardContext::eval();
    EncodedImage enc = model.encode(data.store.get(id).to_tensor(), ctx);
    const auto hyps = beam_search(enc, model, cfg.eval_beam, default_generation_length(model));
    CaptionRecord r;
    r.image_id = id;
    r.tokens = content_tokens(hyps.front().tokens);
    r.text = caption_text(r.tokens, data.vocab);
    r.log_prob = hyps.front().log_prob;
    report << id << "\t" << r.text << "\n";
    lines.push_back({id, r.text});
    out.push_back(std::move(r));
  }
  write_caption_file(paths.captions / "captions.tsv", lines);
  return out;
}

EvalResult cmd_eval(const RunConfig& cfg, const fs::path& checkpoint, const std::string& split,
                    const fs::path& out_dir, std::ostream& report) {
  cfg.validate();
  const LoadedData data = load_data(cfg);
  const CaptionModel model = load_model(cfg, data, checkpoint);
  const CaptionDataset& ds = data.split(split);
  const RunPaths paths = RunPaths::prepare(out_dir, cfg);
  const NGramStats stats = dataset_stats(ds);
  EvalResult res = evaluate_cider(model, ds, data.store, stats, cfg.eval_beam);

  JsonLines log(paths.logs / ("eval_" + split + ".jsonl"));
  std::vector<CaptionLine> lines;
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    const std::string text = caption_text(res.captions[i], data.vocab);
    log.write({{"image_id", ds.items[i].image_id}, {"caption", text}, {"cider_d", res.scores[i]}});
    lines.push_back({ds.items[i].image_id, text});
  }
  log.write({{"split", split}, {"images", ds.items.size()}, {"beam", cfg.eval_beam}, {"mean_cider_d", res.mean_cider}});
  write_caption_file(paths.captions / ("eval_" + split + ".tsv"), lines);
  report << "mean CIDEr-D on " << split << " (" << ds.items.size() << " images, beam " << cfg.eval_beam
         << "): " << res.mean_cider << "\n";
  return res;
}

std::vector<GradcheckCase> gradcheck_cases() {
  ModelConfig base;
  base.d_in = 5;
  base.width = 8;
  base.heads = 2;
  base.layers = 2;
  base.ff_width = 12;
  base.keep_prob = 0.9;
  base.max_len = 4;
  base.vocab_size = 7;
  base.intra = IntraLayer::kGea;

  std::vector<GradcheckCase> out;
  for (Controller c : {Controller::kGac, Controller::kMac}) {
    for (Fusion f : {Fusion::kNone, Fusion::kAverage, Fusion::kAttention, Fusion::kLstm}) {
      ModelConfig m = base;
      m.controller = c;
      m.fusion = f;
      out.push_back({"intra=gea fusion=" + to_string(f) + " controller=" + to_string(c), m});
    }
  }
  ModelConfig plain = base;
  plain.intra = IntraLayer::kPlain;
  plain.fusion = Fusion::kNone;
  plain.controller = Controller::kNone;
  out.push_back({"intra=plain fusion=none controller=none", plain});
  return out;
}

GradCheckReport gradcheck_model(const ModelConfig& cfg, std::uint64_t seed, const GradCheckOptions& opts) {
  Rng rng(seed);
  const CaptionModel model = CaptionModel::init(cfg, rng);
  const Tensor features = Tensor::randn({3, cfg.d_in}, rng);
  const std::vector<int> caption{kBos, kNumReserved, kNumReserved + 1, kEos};
  auto loss = [&] {
    ForwardContext ctx = ForwardContext::eval();
    return caption_xe(model, features, caption, ctx).total;
  };
  return finite_diff_check(loss, model.parameters(), opts);
}

GradcheckResult cmd_gradcheck(const RunConfig& cfg, const fs::path& out_dir, std::ostream& report) {
  cfg.validate();
  const RunPaths paths = RunPaths::prepare(out_dir, cfg);
  JsonLines log(paths.logs / "gradcheck.jsonl");
  GradcheckResult res;
  for (const auto& c : gradcheck_cases()) {
    GradCheckReport r = gradcheck_model(c.model, cfg.seed);
    for (const auto& e : r.entries) {
      log.write({{"case", c.label},
                 {"param", e.name},
                 {"count", e.count},
                 {"max_rel_error", e.max_rel_error},
                 {"max_abs_error", e.max_abs_error},
                 {"passed", e.passed}});
    }
    report << (r.passed ? "PASS " : "FAIL ") << c.label << " max rel error " << r.max_rel_error << " over "
           << r.entries.size() << " tensors\n";
    res.passed = res.passed && r.passed;
    res.cases.emplace_back(c.label, std::move(r));
  }
  log.write({{"passed", res.passed}});
  return res;
}

AttributionRecords cmd_attribute(const RunConfig& cfg, const fs::path& checkpoint, const std::string& image_id,
                                 const fs::path& out_dir, std::ostream& report) {
  cfg.validate();
  const LoadedData data = load_data(cfg);
  if (!data.store.contains(image_id)) throw LookupError("unknown image id '" + image_id + "'");
  const CaptionModel model = load_model(cfg, data, checkpoint);
  const RunPaths paths = RunPaths::prepare(out_dir, cfg);
  const Tensor features = data.store.get(image_id).to_tensor();

  AttributionRecords out;
  out.image_id = image_id;
  {
    NoGradScope no_grad;
    ForwardContext ctx = ForwardContext::eval();
    EncodedImage enc = model.encode(features, ctx);
    out.caption = beam_search(enc, model, cfg.eval_beam, default_generation_length(model)).front().tokens;
  }
  out.words = attribute_regions(model, features, out.caption, cfg.attribute_steps);

  JsonLines log(paths.logs / ("attribute_" + image_id + ".jsonl"));
  report << image_id << "\t" << caption_text(out.caption, data.vocab) << "\n";
  for (const auto& w : out.words) {
    const std::string& word = data.vocab.token(w.token);
    for (std::size_t r = 0; r < w.regions.size(); ++r) {
      log.write({{"word_index", w.word_index}, {"word", word}, {"region", r}, {"attribution", w.regions[r]}});
    }
    report << "  " << w.word_index << " " << word << " -> region " << w.top_region << " ("
           << w.regions[w.top_region] << ")\n";
  }
  return out;
}

}  // namespace getcap
