#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "getcap/cider.hpp"
#include "getcap/data.hpp"
#include "getcap/inference.hpp"
#include "getcap/model.hpp"

namespace getcap {

// ---- optimizer --------------------------------------------------------------

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  std::size_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  static AdamState for_params(const ParamList& params);
};

// One bias-corrected Adam update of every parameter in place.
void adam_step(const ParamList& params, const std::vector<std::vector<double>>& grads,
               AdamState& state, double lr);

// Noam schedule: d^-0.5 * min(step^-0.5, step * warmup^-1.5), step >= 1.
double warmup_lr(std::size_t step, std::size_t width, std::size_t warmup);

std::vector<std::vector<double>> collect_grads(const ParamList& params);
void zero_grads(const ParamList& params);
// Rescales in place so the global L2 norm is at most max_norm; returns the
// norm before clipping.
double clip_global_norm(std::vector<std::vector<double>>& grads, double max_norm);

// ---- losses -----------------------------------------------------------------

struct XeLoss {
  Tensor total;  // scalar, -sum of target log-probs over non-pad positions
  std::size_t tokens = 0;
};

XeLoss xe_loss(const Tensor& logits, std::span<const int> targets, int pad_id = kPad);

// Teacher-forced XE of one encoded caption (BOS w... EOS PAD...).
XeLoss caption_xe(const CaptionModel& model, const Tensor& features, std::span<const int> caption,
                  ForwardContext& ctx);

// log p(Y) = sum_t log p(y_t | Y_<t) of a generated sequence (tokens after
// BOS). A forced trailing EOS is not scored.
Tensor sequence_log_prob(const CaptionModel& model, const EncodedImage& encoded,
                         std::span<const int> tokens, bool forced, ForwardContext& ctx);

struct ScstSample {
  std::vector<int> tokens;
  bool forced = false;
  double reward = 0.0;
  double advantage = 0.0;
};

struct ScstStep {
  Tensor loss;  // -(1/k) sum_i (r_i - b) log p(Y^i); its gradient is the policy gradient
  std::vector<ScstSample> samples;
  double baseline = 0.0;
  double mean_reward = 0.0;
};

// Decodes k beam hypotheses, rewards them with CIDEr-D and builds the
// self-critical surrogate loss with the mean-of-beam baseline.
ScstStep scst_step(const CaptionModel& model, const Tensor& features,
                   const std::vector<TokenSeq>& references, std::size_t k,
                   const NGramStats& stats, ForwardContext& ctx);

// Surrogate loss for explicit samples and rewards (k = samples.size()).
ScstStep scst_loss(const CaptionModel& model, const EncodedImage& encoded,
                   std::vector<ScstSample> samples, ForwardContext& ctx);

// ---- loops -------------------------------------------------------------------

struct TrainConfig {
  std::size_t batch_size = 50;
  std::size_t warmup = 10000;
  std::size_t xe_epochs = 20;
  double xe_lr_scale = 1.0;
  double scst_lr = 5e-6;
  std::size_t scst_epochs = 10;
  std::size_t beam_size = 5;  // SCST samples k
  double clip_norm = 5.0;
  std::uint64_t seed = 1234;

  std::vector<std::string> violations() const;
  void validate() const;
};

struct StepLog {
  std::string phase;  // "xe" or "scst"
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;         // xe: mean per-token loss; scst: surrogate loss
  double lr = 0.0;
  double mean_reward = 0.0;  // scst only
  double baseline = 0.0;     // scst only
  bool updated = true;       // false when the step left parameters unchanged
};

struct TrainHooks {
  std::function<void(const StepLog&)> on_step;
  std::function<void(std::size_t epoch)> on_epoch;
};

struct TrainResult {
  std::vector<StepLog> steps;
};

TrainResult train_xe(CaptionModel& model, const CaptionDataset& dataset, const FeatureStore& store,
                     const TrainConfig& cfg, const TrainHooks& hooks = {});

// One XE optimization step over the given (image, reference) samples.
StepLog xe_batch_step(CaptionModel& model, const CaptionDataset& dataset, const FeatureStore& store,
                      std::span<const std::pair<std::size_t, std::size_t>> batch, AdamState& adam,
                      double lr, double clip_norm, Rng& rng);

// One SCST step over the given image indices. Parameters are left untouched
// when the accumulated gradient is exactly zero.
StepLog scst_batch_step(CaptionModel& model, const CaptionDataset& dataset, const FeatureStore& store,
                        std::span<const std::size_t> images, const NGramStats& stats,
                        std::size_t k, AdamState& adam, double lr, double clip_norm, Rng& rng);

TrainResult finetune_scst(CaptionModel& model, const CaptionDataset& dataset,
                          const FeatureStore& store, const NGramStats& stats,
                          const TrainConfig& cfg, const TrainHooks& hooks = {});

// IDF statistics from a dataset's references.
NGramStats dataset_stats(const CaptionDataset& dataset);

struct EvalResult {
  double mean_cider = 0.0;
  std::vector<double> scores;
  std::vector<std::vector<int>> captions;  // best hypothesis per image (EOS stripped)
};

// Decodes every image (beam search; width 1 is greedy) and scores it.
EvalResult evaluate_cider(const CaptionModel& model, const CaptionDataset& dataset,
                          const FeatureStore& store, const NGramStats& stats, std::size_t beam_width);

}  // namespace getcap
