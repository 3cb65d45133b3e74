#include "getcap/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "getcap/errors.hpp"
#include "getcap/tokens.hpp"

namespace getcap {

StepFn model_step(const CaptionModel& model, const EncodedImage& encoded) {
  return [&model, &encoded](std::span<const int> prefix) {
    NoGradScope no_grad;
    ForwardContext ctx = ForwardContext::eval();
    Tensor logits = model.logits(prefix, encoded, ctx);
    Tensor last = log_softmax(row_of(logits, logits.rows() - 1), 1);
    std::vector<double> out(last.data().begin(), last.data().end());
    // PAD and BOS are never generated.
    out[kPad] = -std::numeric_limits<double>::infinity();
    out[kBos] = -std::numeric_limits<double>::infinity();
    return out;
  };
}

namespace {

struct Candidate {
  std::size_t parent;
  int token;
  double score;
};

bool better(const BeamHypothesis& a, const BeamHypothesis& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  return a.tokens < b.tokens;
}

}  // namespace

std::vector<BeamHypothesis> beam_search(const StepFn& step, std::size_t beam_width, std::size_t max_len) {
  if (beam_width < 1) throw ContractError("beam_search: beam width must be >= 1");
  if (max_len < 1) throw ContractError("beam_search: max_len must be >= 1");

  std::vector<BeamHypothesis> live{BeamHypothesis{}};
  std::vector<BeamHypothesis> finished;
  bool exhausted = true;
  std::vector<int> prefix;
  for (std::size_t t = 0; t < max_len; ++t) {
    std::vector<Candidate> cands;
    for (std::size_t r = 0; r < live.size(); ++r) {
      prefix.assign(1, kBos);
      prefix.insert(prefix.end(), live[r].tokens.begin(), live[r].tokens.end());
      const std::vector<double> lp = step(prefix);
      for (std::size_t tok = 0; tok < lp.size(); ++tok) {
        if (!std::isfinite(lp[tok])) continue;
        cands.push_back({r, static_cast<int>(tok), live[r].log_prob + lp[tok]});
      }
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.parent != b.parent) return a.parent < b.parent;
      return a.token < b.token;
    });
    std::vector<BeamHypothesis> next;
    for (std::size_t i = 0; i < std::min(beam_width, cands.size()); ++i) {
      BeamHypothesis h = live[cands[i].parent];
      h.tokens.push_back(cands[i].token);
      h.log_prob = cands[i].score;
      if (cands[i].token == kEos) {
        h.finished = true;
        finished.push_back(std::move(h));
      } else {
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
    if (live.empty()) {
      exhausted = false;
      break;
    }
    // Extending a live hypothesis can only lower its score.
    if (finished.size() >= beam_width) {
      std::vector<BeamHypothesis> ranked = finished;
      std::sort(ranked.begin(), ranked.end(), better);
      if (live.front().log_prob < ranked[beam_width - 1].log_prob) {
        exhausted = false;
        break;
      }
    }
  }
  if (exhausted) {
    for (auto& h : live) {
      h.tokens.push_back(kEos);
      h.finished = true;
      h.forced = true;
      finished.push_back(std::move(h));
    }
  }
  if (finished.empty()) throw DecodeError("beam_search: no hypothesis finished");
  std::sort(finished.begin(), finished.end(), better);
  if (finished.size() > beam_width) finished.resize(beam_width);
  return finished;
}

std::vector<BeamHypothesis> beam_search(const EncodedImage& encoded, const CaptionModel& model,
                                        std::size_t beam_width, std::size_t max_len) {
  return beam_search(model_step(model, encoded), beam_width, max_len);
}

std::vector<int> greedy_decode(const StepFn& step, std::size_t max_len) {
  std::vector<int> prefix{kBos};
  for (std::size_t t = 0; t < max_len; ++t) {
    const std::vector<double> lp = step(prefix);
    int best = -1;
    for (std::size_t tok = 0; tok < lp.size(); ++tok) {
      if (!std::isfinite(lp[tok])) continue;
      if (best < 0 || lp[tok] > lp[static_cast<std::size_t>(best)]) best = static_cast<int>(tok);
    }
    if (best < 0) throw DecodeError("greedy_decode: no finite next-token score");
    prefix.push_back(best);
    if (best == kEos) return {prefix.begin() + 1, prefix.end()};
  }
  prefix.push_back(kEos);
  return {prefix.begin() + 1, prefix.end()};
}

std::vector<int> greedy_decode(const EncodedImage& encoded, const CaptionModel& model, std::size_t max_len) {
  return greedy_decode(model_step(model, encoded), max_len);
}

std::size_t default_generation_length(const CaptionModel& model) {
  return model.config().max_len - 1;
}

Tensor integrated_gradients(const std::function<Tensor(const Tensor&)>& f, const Tensor& input,
                            std::size_t steps) {
  if (steps < 1) throw ContractError("integrated_gradients: steps must be >= 1");
  const std::size_t n = input.numel();
  std::vector<double> accum(n, 0.0);
  const auto x = input.data();
  for (std::size_t s = 1; s <= steps; ++s) {
    const double alpha = static_cast<double>(s) / static_cast<double>(steps);
    std::vector<double> scaled(n);
    for (std::size_t i = 0; i < n; ++i) scaled[i] = alpha * x[i];
    Tensor point(input.shape(), std::move(scaled), true);
    Tape tape;
    {
      TapeScope scope(tape);
      Tensor y = f(point);
      tape.backward(y);
    }
    const auto g = point.grad();
    for (std::size_t i = 0; i < n; ++i) accum[i] += g[i];
  }
  std::vector<double> attr(n);
  for (std::size_t i = 0; i < n; ++i) attr[i] = x[i] * accum[i] / static_cast<double>(steps);
  return Tensor(input.shape(), std::move(attr));
}

std::vector<WordAttribution> attribute_regions(const CaptionModel& model, const Tensor& features,
                                               std::span<const int> caption, std::size_t steps) {
  std::vector<int> words;
  for (int tok : caption) {
    if (tok == kEos) break;
    words.push_back(tok);
  }
  if (words.empty()) throw ContractError("attribute_regions: caption is empty");
  std::vector<int> prefix{kBos};
  prefix.insert(prefix.end(), words.begin(), words.end() - 1);

  std::vector<WordAttribution> out;
  const std::size_t regions = features.rows();
  const std::size_t width = features.cols();
  for (std::size_t j = 0; j < words.size(); ++j) {
    const int target[1] = {words[j]};
    auto f = [&](const Tensor& x) {
      ForwardContext ctx = ForwardContext::eval();
      EncodedImage enc = model.encode(x, ctx);
      Tensor logits = model.logits(prefix, enc, ctx);
      return gather(log_softmax(row_of(logits, j), 1), target);
    };
    Tensor attr = integrated_gradients(f, features, steps);
    WordAttribution w;
    w.word_index = j;
    w.token = words[j];
    w.regions.assign(regions, 0.0);
    for (std::size_t r = 0; r < regions; ++r)
      for (std::size_t c = 0; c < width; ++c) w.regions[r] += attr.data()[r * width + c];
    w.top_region = static_cast<std::size_t>(
        std::max_element(w.regions.begin(), w.regions.end()) - w.regions.begin());
    w.value = f(features).item();
    w.baseline = f(Tensor::zeros(features.shape())).item();
    out.push_back(std::move(w));
  }
  return out;
}

}  // namespace getcap
