#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "getcap/model.hpp"

namespace getcap {

struct BeamHypothesis {
  std::vector<int> tokens;  // generated ids after BOS; ends with EOS once finished
  double log_prob = 0.0;    // sum of per-step log-probabilities, not length-normalized
  bool finished = false;
  bool forced = false;  // hit max_len; the trailing EOS was appended, not scored
};

// Next-token log-probabilities over the vocabulary for a prefix that starts
// with BOS.
using StepFn = std::function<std::vector<double>(std::span<const int> prefix)>;

// Eval-mode step function of a model conditioned on one encoded image.
StepFn model_step(const CaptionModel& model, const EncodedImage& encoded);

// Keeps the `beam_width` best candidates per step (ties: lower parent rank,
// then lower token id). Returns up to `beam_width` finished hypotheses, best
// first. `max_len` bounds the number of generated tokens.
std::vector<BeamHypothesis> beam_search(const StepFn& step, std::size_t beam_width, std::size_t max_len);
std::vector<BeamHypothesis> beam_search(const EncodedImage& encoded, const CaptionModel& model,
                                        std::size_t beam_width, std::size_t max_len);

// Argmax per step (lowest id on ties) until EOS; EOS is appended when
// max_len is reached first.
std::vector<int> greedy_decode(const StepFn& step, std::size_t max_len);
std::vector<int> greedy_decode(const EncodedImage& encoded, const CaptionModel& model, std::size_t max_len);

// Generation budget implied by the model's positional table.
std::size_t default_generation_length(const CaptionModel& model);

// Riemann-sum Integrated Gradients from a zero baseline:
//   attr = x * (1/m) sum_{s=1..m} grad f(s/m * x).
// `f` maps an input of the given shape to a scalar and is evaluated under a tape.
Tensor integrated_gradients(const std::function<Tensor(const Tensor&)>& f, const Tensor& input,
                            std::size_t steps);

struct WordAttribution {
  std::size_t word_index = 0;
  int token = 0;
  std::vector<double> regions;  // attribution per region (summed over features)
  std::size_t top_region = 0;
  double value = 0.0;     // f(V), the word's log-probability
  double baseline = 0.0;  // f(0)
};

// Per generated word (EOS excluded), region attributions of that word's
// log-probability under the model.
std::vector<WordAttribution> attribute_regions(const CaptionModel& model, const Tensor& features,
                                               std::span<const int> caption, std::size_t steps);

}  // namespace getcap
