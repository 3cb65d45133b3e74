#include "getcap/cider.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "getcap/errors.hpp"

namespace getcap {

std::map<NGram, std::size_t> ngram_counts(const TokenSeq& seq, std::size_t n) {
  std::map<NGram, std::size_t> out;
  if (n == 0 || seq.size() < n) return out;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) {
    ++out[NGram(seq.begin() + static_cast<std::ptrdiff_t>(i),
                seq.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return out;
}

std::size_t NGramStats::df(const NGram& gram) const {
  if (gram.empty() || gram.size() > kCiderMaxN) return 0;
  const auto& table = document_frequency[gram.size() - 1];
  auto it = table.find(gram);
  return it == table.end() ? 0 : it->second;
}

double NGramStats::idf(const NGram& gram) const {
  const double d = static_cast<double>(std::max<std::size_t>(1, df(gram)));
  return std::log(static_cast<double>(corpus_size)) - std::log(d);
}

NGramStats build_idf(const std::vector<std::vector<TokenSeq>>& reference_groups) {
  if (reference_groups.empty()) throw ConfigError("build_idf: empty reference corpus");
  NGramStats stats;
  stats.corpus_size = reference_groups.size();
  for (const auto& group : reference_groups) {
    for (std::size_t n = 1; n <= kCiderMaxN; ++n) {
      std::set<NGram> seen;
      for (const auto& ref : group) {
        for (const auto& [gram, _] : ngram_counts(ref, n)) seen.insert(gram);
      }
      for (const auto& gram : seen) ++stats.document_frequency[n - 1][gram];
    }
  }
  return stats;
}

namespace {

struct TfIdf {
  std::array<std::map<NGram, double>, kCiderMaxN> vec;
  std::array<double, kCiderMaxN> norm_sq{};
  std::size_t length = 0;
};

TfIdf vectorize(const TokenSeq& seq, const NGramStats& stats) {
  TfIdf out;
  out.length = seq.size();
  for (std::size_t n = 1; n <= kCiderMaxN; ++n) {
    double sq = 0.0;
    for (const auto& [gram, tf] : ngram_counts(seq, n)) {
      const double w = static_cast<double>(tf) * stats.idf(gram);
      out.vec[n - 1][gram] = w;
      sq += w * w;
    }
    out.norm_sq[n - 1] = sq;
  }
  return out;
}

}  // namespace

CiderBreakdown cider_d_breakdown(const TokenSeq& candidate, const std::vector<TokenSeq>& references,
                                 const NGramStats& stats) {
  if (references.empty()) throw ContractError("cider_d: no references");
  CiderBreakdown out;
  if (candidate.empty()) return out;
  const TfIdf cand = vectorize(candidate, stats);
  double total = 0.0;
  for (const auto& ref_seq : references) {
    const TfIdf ref = vectorize(ref_seq, stats);
    const double delta = static_cast<double>(cand.length) - static_cast<double>(ref.length);
    const double penalty = std::exp(-(delta * delta) / (2.0 * kCiderSigma * kCiderSigma));
    std::array<double, kCiderMaxN> num{}, sim{};
    double per_ref = 0.0;
    for (std::size_t n = 0; n < kCiderMaxN; ++n) {
      for (const auto& [gram, w] : cand.vec[n]) {
        auto it = ref.vec[n].find(gram);
        if (it != ref.vec[n].end()) num[n] += std::min(w, it->second) * it->second;
      }
      double s = num[n];
      // One square root of the product keeps identical vectors at exactly 1.
      if (cand.norm_sq[n] != 0.0 && ref.norm_sq[n] != 0.0) {
        s /= std::sqrt(cand.norm_sq[n] * ref.norm_sq[n]);
      }
      sim[n] = s;
      per_ref += s * penalty;
    }
    out.numerators.push_back(num);
    out.similarities.push_back(sim);
    out.penalties.push_back(penalty);
    total += per_ref / static_cast<double>(kCiderMaxN);
  }
  out.score = kCiderScale * total / static_cast<double>(references.size());
  return out;
}

double cider_d(const TokenSeq& candidate, const std::vector<TokenSeq>& references,
               const NGramStats& stats) {
  return cider_d_breakdown(candidate, references, stats).score;
}

}  // namespace getcap
