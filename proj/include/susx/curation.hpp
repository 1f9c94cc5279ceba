#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "susx/adapter.hpp"
#include "susx/classifier.hpp"
#include "susx/embedding_store.hpp"
#include "susx/error.hpp"
#include "susx/matrix.hpp"

namespace susx {

/// One selected support row: candidate `row` assigned to class `cls`.
struct SupportPick {
  ClassIndex cls = 0;
  std::size_t row = 0;
  double similarity = 0.0;

  bool operator==(const SupportPick&) const = default;
};

struct RetrievalOptions {
  // Each candidate may serve at most one class. Assignment is a global
  // greedy pass over (class, candidate) pairs by descending similarity.
  bool dedup = false;
};

namespace detail {

// Descending similarity, then ascending row, then ascending class.
inline bool ranks_before(const SupportPick& a, const SupportPick& b) noexcept {
  if (a.similarity != b.similarity) return a.similarity > b.similarity;
  if (a.row != b.row) return a.row < b.row;
  return a.cls < b.cls;
}

inline std::vector<SupportPick> class_major(std::vector<SupportPick> picks) {
  std::stable_sort(picks.begin(), picks.end(), [](const SupportPick& a, const SupportPick& b) {
    if (a.cls != b.cls) return a.cls < b.cls;
    return ranks_before(a, b);
  });
  return picks;
}

}  // namespace detail

/// Top-N candidates per class by cosine to the class's classifier row.
/// Output is class-major; within a class, descending similarity with ties
/// to the lower candidate row.
inline std::vector<SupportPick> rank_support(const EmbeddingBank& candidates, const ClassifierWeights& w,
                                             std::size_t n_per_class, const RetrievalOptions& opts = {}) {
  if (n_per_class == 0) throw Error(ErrorCode::InvalidArgument, "N must be positive");
  if (candidates.dim() != w.dim()) throw Error(ErrorCode::DimensionMismatch, "candidates vs classifier");
  require_normalized(candidates, "candidate bank");
  const std::size_t need = opts.dedup ? n_per_class * w.num_classes() : n_per_class;
  if (candidates.count() < need) {
    throw Error(ErrorCode::InsufficientCandidates,
                std::to_string(candidates.count()) + " < " + std::to_string(need));
  }
  const Matrix sims = multiply_transposed(w.weights, candidates.data);  // C x n

  std::vector<SupportPick> picks;
  picks.reserve(n_per_class * w.num_classes());
  if (!opts.dedup) {
    std::vector<SupportPick> pool(candidates.count());
    for (std::size_t c = 0; c < w.num_classes(); ++c) {
      for (std::size_t r = 0; r < pool.size(); ++r) pool[r] = {static_cast<ClassIndex>(c), r, sims(c, r)};
      std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_per_class), pool.end(),
                        detail::ranks_before);
      picks.insert(picks.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_per_class));
    }
    return picks;
  }

  std::vector<SupportPick> pairs;
  pairs.reserve(sims.size());
  for (std::size_t c = 0; c < w.num_classes(); ++c) {
    for (std::size_t r = 0; r < candidates.count(); ++r) pairs.push_back({static_cast<ClassIndex>(c), r, sims(c, r)});
  }
  std::sort(pairs.begin(), pairs.end(), detail::ranks_before);
  std::vector<bool> taken(candidates.count(), false);
  std::vector<std::size_t> filled(w.num_classes(), 0);
  for (const auto& p : pairs) {
    if (taken[p.row] || filled[p.cls] == n_per_class) continue;
    taken[p.row] = true;
    ++filled[p.cls];
    picks.push_back(p);
  }
  return detail::class_major(std::move(picks));
}

inline SupportSet support_from_picks(const EmbeddingBank& source, const std::vector<SupportPick>& picks,
                                     std::size_t num_classes) {
  Matrix features(picks.size(), source.dim());
  std::vector<ClassIndex> classes(picks.size());
  for (std::size_t j = 0; j < picks.size(); ++j) {
    const auto src = source.data.row(picks[j].row);
    std::copy(src.begin(), src.end(), features.row(j).begin());
    classes[j] = picks[j].cls;
  }
  return SupportSet::from_labels(std::move(features), std::move(classes), num_classes);
}

/// Copies the picked rows (with ids, when present) into a labelled,
/// normalized-as-source bank.
inline EmbeddingBank bank_from_picks(const EmbeddingBank& source, const std::vector<SupportPick>& picks,
                                     std::map<std::string, std::string> meta) {
  EmbeddingBank out;
  out.data = Matrix(picks.size(), source.dim());
  std::vector<ClassIndex> labels(picks.size());
  std::vector<std::string> ids;
  for (std::size_t j = 0; j < picks.size(); ++j) {
    const auto src = source.data.row(picks[j].row);
    std::copy(src.begin(), src.end(), out.data.row(j).begin());
    labels[j] = picks[j].cls;
    ids.push_back(source.ids ? (*source.ids)[picks[j].row] : std::to_string(picks[j].row));
  }
  out.labels = std::move(labels);
  out.ids = std::move(ids);
  out.normalized = source.normalized;
  out.meta = std::move(meta);
  return out;
}

inline SupportSet retrieve_support(const EmbeddingBank& candidates, const ClassifierWeights& w,
                                   std::size_t n_per_class, const RetrievalOptions& opts = {}) {
  return support_from_picks(candidates, rank_support(candidates, w, n_per_class, opts), w.num_classes());
}

/// Uses a labelled bank directly as the support set.
inline SupportSet ingest_support(const EmbeddingBank& bank, std::size_t num_classes) {
  if (!bank.labels) throw Error(ErrorCode::MissingLabels, "support bank");
  require_normalized(bank, "support bank");
  for (std::size_t r = 0; r < bank.count(); ++r) {
    if ((*bank.labels)[r] >= num_classes) throw Error(ErrorCode::LabelOutOfRange, std::to_string(r));
  }
  return SupportSet::from_labels(bank.data, *bank.labels, num_classes);
}

/// Unbiased draw from [0, bound) using only raw 64-bit engine output, so
/// results do not depend on a standard library's distribution classes.
inline std::uint64_t uniform_below(std::mt19937_64& engine, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x = 0;
  do {
    x = engine();
  } while (x >= limit);
  return x % bound;
}

/// K rows per class via a seeded Fisher-Yates shuffle (std::mt19937_64)
/// of each class's rows, classes visited in index order. Picked rows are
/// returned class-major, ascending original index within a class.
inline std::vector<SupportPick> sample_few_shot_rows(const EmbeddingBank& bank, std::size_t num_classes, std::size_t k,
                                                     std::uint64_t seed) {
  if (!bank.labels) throw Error(ErrorCode::MissingLabels, "few-shot bank");
  if (k == 0) throw Error(ErrorCode::InvalidArgument, "K must be positive");
  std::vector<std::vector<std::size_t>> members(num_classes);
  for (std::size_t r = 0; r < bank.count(); ++r) {
    const ClassIndex c = (*bank.labels)[r];
    if (c >= num_classes) throw Error(ErrorCode::LabelOutOfRange, std::to_string(r));
    members[c].push_back(r);
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (members[c].size() < k) throw Error(ErrorCode::InsufficientShots, std::to_string(c));
  }
  std::mt19937_64 engine(seed);
  std::vector<SupportPick> picks;
  picks.reserve(num_classes * k);
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto& rows = members[c];
    for (std::size_t i = rows.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_below(engine, i));
      std::swap(rows[i - 1], rows[j]);
    }
    rows.resize(k);
    std::sort(rows.begin(), rows.end());
    for (std::size_t r : rows) picks.push_back({static_cast<ClassIndex>(c), r, 0.0});
  }
  return picks;
}

inline SupportSet sample_few_shot(const EmbeddingBank& bank, std::size_t num_classes, std::size_t k,
                                  std::uint64_t seed) {
  return support_from_picks(bank, sample_few_shot_rows(bank, num_classes, k, seed), num_classes);
}

/// 1 - mean over classes of the within-class mean pairwise cosine,
/// self-pairs included. Sum_j Sum_k <F_j, F_k> is evaluated as the squared
/// norm of the class feature sum.
inline double diversity(const SupportSet& support) {
  const std::size_t classes = support.num_classes();
  Matrix sums(classes, support.dim());
  std::vector<std::size_t> counts(classes, 0);
  for (std::size_t j = 0; j < support.size(); ++j) {
    const ClassIndex c = support.classes[j];
    auto acc = sums.row(c);
    const auto f = support.features.row(j);
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += f[k];
    ++counts[c];
  }
  double pcs_total = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    if (counts[c] == 0) throw Error(ErrorCode::EmptyClass, std::to_string(c));
    const auto n = static_cast<double>(counts[c]);
    pcs_total += squared_norm(std::span<const double>(sums.row(c))) / (n * n);
  }
  return 1.0 - pcs_total / static_cast<double>(classes);
}

}  // namespace susx
