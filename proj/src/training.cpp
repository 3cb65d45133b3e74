#include "getcap/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "getcap/errors.hpp"

namespace getcap {

// ---- optimizer --------------------------------------------------------------

AdamState AdamState::for_params(const ParamList& params) {
  AdamState s;
  for (const auto& p : params) {
    s.first_moment.emplace_back(p.tensor.numel(), 0.0);
    s.second_moment.emplace_back(p.tensor.numel(), 0.0);
  }
  return s;
}

void adam_step(const ParamList& params, const std::vector<std::vector<double>>& grads,
               AdamState& state, double lr) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw ContractError("adam_step: parameter, gradient and moment counts differ");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const std::size_t n = params[k].tensor.numel();
    if (grads[k].size() != n || state.first_moment[k].size() != n || state.second_moment[k].size() != n) {
      throw ContractError("adam_step: shape mismatch for parameter '" + params[k].name + "'");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor param = params[k].tensor;
    auto theta = param.mutable_data();
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    const auto& g = grads[k];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      theta[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

double warmup_lr(std::size_t step, std::size_t width, std::size_t warmup) {
  if (step < 1 || warmup < 1 || width < 1) {
    throw ContractError("warmup_lr: step, width and warmup must be >= 1");
  }
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return std::pow(static_cast<double>(width), -0.5) * std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

std::vector<std::vector<double>> collect_grads(const ParamList& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.tensor.grad());
  return out;
}

void zero_grads(const ParamList& params) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
}

double clip_global_norm(std::vector<std::vector<double>>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double x : g) sq += x * x;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& g : grads)
      for (double& x : g) x *= f;
  }
  return norm;
}

// ---- losses -----------------------------------------------------------------

XeLoss xe_loss(const Tensor& logits, std::span<const int> targets, int pad_id) {
  if (logits.rank() != 2 || logits.rows() != targets.size()) {
    throw DimensionError("xe_loss: " + std::to_string(targets.size()) + " targets for logits " +
                         shape_str(logits.shape()));
  }
  const std::size_t vocab = logits.cols();
  std::vector<int> cols(targets.size());
  std::vector<double> mask(targets.size());
  XeLoss out;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= vocab) {
      throw LookupError("xe_loss: target id " + std::to_string(targets[i]) +
                        " outside vocabulary of size " + std::to_string(vocab));
    }
    const bool keep = targets[i] != pad_id;
    cols[i] = targets[i];
    mask[i] = keep ? 1.0 : 0.0;
    out.tokens += keep ? 1 : 0;
  }
  Tensor picked = gather(log_softmax(logits, 1), cols);
  out.total = scale(sum(mul(picked, Tensor({targets.size(), 1}, std::move(mask)))), -1.0);
  return out;
}

XeLoss caption_xe(const CaptionModel& model, const Tensor& features, std::span<const int> caption,
                  ForwardContext& ctx) {
  // Rows past EOS only see padding targets; causality lets us drop them.
  std::size_t end = caption.size();
  for (std::size_t i = 1; i < caption.size(); ++i) {
    if (caption[i] == kEos) {
      end = i + 1;
      break;
    }
  }
  if (end < 2) throw ContractError("caption_xe: caption needs at least BOS and one target");
  EncodedImage enc = model.encode(features, ctx);
  Tensor logits = model.logits(caption.subspan(0, end - 1), enc, ctx);
  return xe_loss(logits, caption.subspan(1, end - 1));
}

Tensor sequence_log_prob(const CaptionModel& model, const EncodedImage& encoded,
                         std::span<const int> tokens, bool forced, ForwardContext& ctx) {
  std::size_t n = tokens.size();
  if (forced && n > 0) --n;
  if (n == 0) throw ContractError("sequence_log_prob: empty sequence");
  std::vector<int> prefix{kBos};
  prefix.insert(prefix.end(), tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(n - 1));
  Tensor logits = model.logits(prefix, encoded, ctx);
  Tensor picked = gather(log_softmax(logits, 1), tokens.subspan(0, n));
  return sum(picked);
}

ScstStep scst_loss(const CaptionModel& model, const EncodedImage& encoded,
                   std::vector<ScstSample> samples, ForwardContext& ctx) {
  if (samples.empty()) throw DecodeError("scst: no sampled sequences");
  ScstStep out;
  const double k = static_cast<double>(samples.size());
  const bool constant = std::all_of(samples.begin(), samples.end(), [&](const ScstSample& s) {
    return s.reward == samples.front().reward;
  });
  double total = 0.0;
  for (const auto& s : samples) total += s.reward;
  out.mean_reward = total / k;
  out.baseline = constant ? samples.front().reward : out.mean_reward;
  Tensor loss;
  for (auto& s : samples) {
    s.advantage = s.reward - out.baseline;
    Tensor term = scale(sequence_log_prob(model, encoded, s.tokens, s.forced, ctx), -s.advantage / k);
    loss = loss.valid() ? add(loss, term) : term;
  }
  out.loss = loss;
  out.samples = std::move(samples);
  return out;
}

ScstStep scst_step(const CaptionModel& model, const Tensor& features,
                   const std::vector<TokenSeq>& references, std::size_t k,
                   const NGramStats& stats, ForwardContext& ctx) {
  if (k < 2) throw ContractError("scst_step: k must be >= 2 (k = 1 has a zero policy gradient)");
  std::vector<BeamHypothesis> beams;
  {
    NoGradScope no_grad;
    ForwardContext eval = ForwardContext::eval();
    EncodedImage enc = model.encode(features, eval);
    beams = beam_search(enc, model, k, default_generation_length(model));
  }
  std::vector<ScstSample> samples;
  for (const auto& h : beams) {
    ScstSample s;
    s.tokens = h.tokens;
    s.forced = h.forced;
    s.reward = cider_d(content_tokens(h.tokens), references, stats);
    samples.push_back(std::move(s));
  }
  EncodedImage enc = model.encode(features, ctx);
  return scst_loss(model, enc, std::move(samples), ctx);
}

// ---- loops -------------------------------------------------------------------

std::vector<std::string> TrainConfig::violations() const {
  std::vector<std::string> out;
  if (batch_size < 1) out.push_back("train.batch_size must be >= 1");
  if (warmup < 1) out.push_back("train.warmup must be >= 1");
  if (beam_size < 2) out.push_back("train.beam_size must be >= 2 for SCST");
  if (!(scst_lr > 0.0)) out.push_back("train.scst_lr must be > 0");
  if (!(xe_lr_scale > 0.0)) out.push_back("train.xe_lr_scale must be > 0");
  if (clip_norm < 0.0) out.push_back("train.clip_norm must be >= 0");
  return out;
}

void TrainConfig::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::string msg = "invalid train config:";
  for (const auto& s : v) msg += "\n  - " + s;
  throw ConfigError(msg);
}

namespace {

bool all_zero(const std::vector<std::vector<double>>& grads) {
  for (const auto& g : grads)
    for (double x : g)
      if (x != 0.0) return false;
  return true;
}

}  // namespace

StepLog xe_batch_step(CaptionModel& model, const CaptionDataset& dataset, const FeatureStore& store,
                      std::span<const std::pair<std::size_t, std::size_t>> batch, AdamState& adam,
                      double lr, double clip_norm, Rng& rng) {
  const ParamList params = model.parameters();
  zero_grads(params);
  ForwardContext ctx = ForwardContext::training(rng);
  Tape tape;
  double loss_sum = 0.0;
  std::size_t tokens = 0;
  {
    TapeScope scope(tape);
    Tensor total;
    for (const auto& [img, ref] : batch) {
      const auto& item = dataset.items.at(img);
      Tensor features = store.get(item.image_id).to_tensor();
      XeLoss l = caption_xe(model, features, item.references.at(ref), ctx);
      tokens += l.tokens;
      total = total.valid() ? add(total, l.total) : l.total;
    }
    Tensor loss = scale(total, 1.0 / static_cast<double>(batch.size()));
    loss_sum = total.item();
    tape.backward(loss);
  }
  auto grads = collect_grads(params);
  clip_global_norm(grads, clip_norm);
  adam_step(params, grads, adam, lr);
  zero_grads(params);
  StepLog log;
  log.phase = "xe";
  log.step = adam.step;
  log.loss = tokens ? loss_sum / static_cast<double>(tokens) : 0.0;
  log.lr = lr;
  return log;
}

TrainResult train_xe(CaptionModel& model, const CaptionDataset& dataset, const FeatureStore& store,
                     const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  if (dataset.items.empty()) throw ConfigError("train_xe: empty dataset");
  std::vector<std::pair<std::size_t, std::size_t>> samples;
  for (std::size_t i = 0; i < dataset.items.size(); ++i)
    for (std::size_t r = 0; r < dataset.items[i].references.size(); ++r) samples.emplace_back(i, r);
  if (samples.empty()) throw ConfigError("train_xe: dataset has no captions");

  Rng shuffle_rng(cfg.seed);
  Rng dropout_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  AdamState adam = AdamState::for_params(model.parameters());
  TrainResult result;
  for (std::size_t epoch = 0; epoch < cfg.xe_epochs; ++epoch) {
    std::shuffle(samples.begin(), samples.end(), shuffle_rng);
    for (std::size_t b = 0; b < samples.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(samples.size(), b + cfg.batch_size);
      const double lr = cfg.xe_lr_scale * warmup_lr(adam.step + 1, model.config().width, cfg.warmup);
      StepLog log = xe_batch_step(model, dataset, store,
                                  std::span(samples).subspan(b, e - b), adam, lr, cfg.clip_norm,
                                  dropout_rng);
      log.epoch = epoch;
      if (hooks.on_step) hooks.on_step(log);
      result.steps.push_back(log);
    }
    if (hooks.on_epoch) hooks.on_epoch(epoch);
  }
  return result;
}

StepLog scst_batch_step(CaptionModel& model, const CaptionDataset& dataset, const FeatureStore& store,
                        std::span<const std::size_t> images, const NGramStats& stats,
                        std::size_t k, AdamState& adam, double lr, double clip_norm, Rng& rng) {
  if (images.empty()) throw ContractError("scst_batch_step: empty batch");
  const ParamList params = model.parameters();
  zero_grads(params);
  ForwardContext ctx = ForwardContext::training(rng);
  Tape tape;
  double reward_sum = 0.0, baseline_sum = 0.0, loss_value = 0.0;
  {
    TapeScope scope(tape);
    Tensor total;
    for (std::size_t img : images) {
      const auto& item = dataset.items.at(img);
      Tensor features = store.get(item.image_id).to_tensor();
      ScstStep s = scst_step(model, features, dataset.reference_words(img), k, stats, ctx);
      reward_sum += s.mean_reward;
      baseline_sum += s.baseline;
      total = total.valid() ? add(total, s.loss) : s.loss;
    }
    Tensor loss = scale(total, 1.0 / static_cast<double>(images.size()));
    loss_value = loss.item();
    if (loss.requires_grad()) tape.backward(loss);
  }
  auto grads = collect_grads(params);
  StepLog log;
  log.phase = "scst";
  log.loss = loss_value;
  log.lr = lr;
  log.mean_reward = reward_sum / static_cast<double>(images.size());
  log.baseline = baseline_sum / static_cast<double>(images.size());
  if (all_zero(grads)) {
    log.updated = false;
  } else {
    clip_global_norm(grads, clip_norm);
    adam_step(params, grads, adam, lr);
  }
  log.step = adam.step;
  zero_grads(params);
  return log;
}

TrainResult finetune_scst(CaptionModel& model, const CaptionDataset& dataset,
                          const FeatureStore& store, const NGramStats& stats,
                          const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  if (dataset.items.empty()) throw ConfigError("finetune_scst: empty dataset");
  std::vector<std::size_t> order(dataset.items.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(cfg.seed + 1);
  Rng dropout_rng((cfg.seed + 1) ^ 0x9e3779b97f4a7c15ULL);
  AdamState adam = AdamState::for_params(model.parameters());
  TrainResult result;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.scst_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      StepLog log = scst_batch_step(model, dataset, store, std::span(order).subspan(b, e - b), stats,
                                    cfg.beam_size, adam, cfg.scst_lr, cfg.clip_norm, dropout_rng);
      log.step = ++step;
      log.epoch = epoch;
      if (hooks.on_step) hooks.on_step(log);
      result.steps.push_back(log);
    }
    if (hooks.on_epoch) hooks.on_epoch(epoch);
  }
  return result;
}

NGramStats dataset_stats(const CaptionDataset& dataset) {
  std::vector<std::vector<TokenSeq>> groups;
  for (std::size_t i = 0; i < dataset.items.size(); ++i) groups.push_back(dataset.reference_words(i));
  return build_idf(groups);
}

EvalResult evaluate_cider(const CaptionModel& model, const CaptionDataset& dataset,
                          const FeatureStore& store, const NGramStats& stats, std::size_t beam_width) {
  EvalResult out;
  NoGradScope no_grad;
  for (std::size_t i = 0; i < dataset.items.size(); ++i) {
    ForwardContext ctx = ForwardContext::eval();
    EncodedImage enc = model.encode(store.get(dataset.items[i].image_id).to_tensor(), ctx);
    const auto hyps = beam_search(enc, model, beam_width, default_generation_length(model));
    std::vector<int> words = content_tokens(hyps.front().tokens);
    out.scores.push_back(cider_d(words, dataset.reference_words(i), stats));
    out.captions.push_back(std::move(words));
  }
  if (!out.scores.empty()) {
    out.mean_cider = std::accumulate(out.scores.begin(), out.scores.end(), 0.0) /
                     static_cast<double>(out.scores.size());
  }
  return out;
}

}  // namespace getcap
