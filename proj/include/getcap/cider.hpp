#pragma once

#include <array>
#include <map>
#include <vector>

namespace getcap {

using TokenSeq = std::vector<int>;
using NGram = std::vector<int>;

inline constexpr std::size_t kCiderMaxN = 4;
inline constexpr double kCiderSigma = 6.0;
inline constexpr double kCiderScale = 10.0;

// n-gram -> occurrence count for one sequence.
std::map<NGram, std::size_t> ngram_counts(const TokenSeq& seq, std::size_t n);

// Document frequencies over a reference corpus; one document per image
// (the union of that image's references).
struct NGramStats {
  std::array<std::map<NGram, std::size_t>, kCiderMaxN> document_frequency;
  std::size_t corpus_size = 0;

  std::size_t df(const NGram& gram) const;
  // log(corpus_size / max(1, df))
  double idf(const NGram& gram) const;
};

NGramStats build_idf(const std::vector<std::vector<TokenSeq>>& reference_groups);

struct CiderBreakdown {
  double score = 0.0;
  // Per reference, per n: clipped numerator, cosine (after clipping), penalty.
  std::vector<std::array<double, kCiderMaxN>> numerators;
  std::vector<std::array<double, kCiderMaxN>> similarities;
  std::vector<double> penalties;
};

CiderBreakdown cider_d_breakdown(const TokenSeq& candidate, const std::vector<TokenSeq>& references,
                                 const NGramStats& stats);

// Clipped TF-IDF cosine per n with a Gaussian length penalty, averaged over
// n = 1..4 and over references, scaled to [0, 10].
double cider_d(const TokenSeq& candidate, const std::vector<TokenSeq>& references,
               const NGramStats& stats);

}  // namespace getcap
