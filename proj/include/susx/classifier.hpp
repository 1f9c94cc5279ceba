#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "susx/embedding_store.hpp"
#include "susx/error.hpp"
#include "susx/matrix.hpp"

namespace susx {

class ClassVocabulary {
 public:
  ClassVocabulary() = default;
  explicit ClassVocabulary(std::vector<std::string> names) : names_(std::move(names)) {
    if (names_.empty()) throw Error(ErrorCode::EmptyInput, "vocabulary has no classes");
    std::set<std::string_view> seen;
    for (const auto& n : names_) {
      if (!seen.insert(n).second) throw Error(ErrorCode::InvalidArgument, "duplicate class name '" + n + "'");
    }
  }

  /// Classes numbered 0..count-1, named by their index.
  static ClassVocabulary numbered(std::size_t count) {
    std::vector<std::string> names;
    names.reserve(count);
    for (std::size_t c = 0; c < count; ++c) names.push_back("class_" + std::to_string(c));
    return ClassVocabulary(std::move(names));
  }

  std::size_t size() const noexcept { return names_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }
  const std::string& operator[](std::size_t c) const { return names_.at(c); }

  bool operator==(const ClassVocabulary&) const = default;

 private:
  std::vector<std::string> names_;
};

/// One class name per line; line order defines class indices. A trailing
/// newline is allowed, blank lines elsewhere are not.
inline ClassVocabulary load_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, path.string());
  std::vector<std::string> names;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      if (in.peek() == std::char_traits<char>::eof()) break;
      throw Error(ErrorCode::InvalidArgument, "empty class name at line " + std::to_string(line_no));
    }
    names.push_back(std::move(line));
  }
  return ClassVocabulary(std::move(names));
}

struct ClassifierWeights {
  Matrix weights;  // C x d, unit rows
  ClassVocabulary vocabulary;

  std::size_t num_classes() const noexcept { return weights.rows(); }
  std::size_t dim() const noexcept { return weights.cols(); }
};

struct LogitMatrix {
  Matrix scores;
  std::vector<ClassIndex> predictions;
};

/// Row-wise argmax; ties go to the lowest column.
inline std::vector<ClassIndex> argmax_rows(const Matrix& scores) {
  std::vector<ClassIndex> out(scores.rows(), 0);
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    const auto row = scores.row(i);
    std::size_t best = 0;
    for (std::size_t c = 1; c < row.size(); ++c) {
      if (row[c] > row[best]) best = c;
    }
    out[i] = static_cast<ClassIndex>(best);
  }
  return out;
}

inline LogitMatrix make_logits(Matrix scores) {
  LogitMatrix out;
  out.predictions = argmax_rows(scores);
  out.scores = std::move(scores);
  return out;
}

inline constexpr double kDegenerateMean = 1e-6;

/// Row c is the L2-normalized arithmetic mean of class c's prompt embeddings
/// (mean first, then normalize).
inline ClassifierWeights build_classifier(const std::vector<Matrix>& prompt_groups, ClassVocabulary vocabulary) {
  if (prompt_groups.size() != vocabulary.size()) {
    throw Error(ErrorCode::DimensionMismatch, "prompt groups vs vocabulary size");
  }
  if (prompt_groups.empty()) throw Error(ErrorCode::EmptyInput, "no classes");
  const std::size_t dim = prompt_groups.front().cols();
  if (dim == 0) throw Error(ErrorCode::DimensionMismatch, "zero-dimensional prompts");

  ClassifierWeights out{Matrix(prompt_groups.size(), dim), std::move(vocabulary)};
  for (std::size_t c = 0; c < prompt_groups.size(); ++c) {
    const Matrix& group = prompt_groups[c];
    if (group.rows() == 0) throw Error(ErrorCode::EmptyClass, std::to_string(c));
    if (group.cols() != dim) throw Error(ErrorCode::DimensionMismatch, "class " + std::to_string(c));
    auto row = out.weights.row(c);
    for (std::size_t p = 0; p < group.rows(); ++p) {
      const auto prompt = group.row(p);
      for (std::size_t k = 0; k < dim; ++k) row[k] += prompt[k];
    }
    const auto n = static_cast<double>(group.rows());
    for (double& v : row) v /= n;
    const double norm = std::sqrt(squared_norm(std::span<const double>(row)));
    if (norm < kDegenerateMean) throw Error(ErrorCode::DegenerateMean, std::to_string(c));
    for (double& v : row) v /= norm;
  }
  return out;
}

/// Groups bank rows by label: each row is one encoded prompt of its class.
inline ClassifierWeights build_classifier(const EmbeddingBank& prompts, ClassVocabulary vocabulary) {
  if (!prompts.labels) throw Error(ErrorCode::MissingLabels, "prompt bank");
  std::vector<std::vector<std::size_t>> members(vocabulary.size());
  for (std::size_t r = 0; r < prompts.count(); ++r) {
    const ClassIndex c = (*prompts.labels)[r];
    if (c >= vocabulary.size()) throw Error(ErrorCode::LabelOutOfRange, std::to_string(r));
    members[c].push_back(r);
  }
  std::vector<Matrix> groups;
  groups.reserve(members.size());
  for (const auto& rows : members) {
    Matrix g(rows.size(), prompts.dim());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto src = prompts.data.row(rows[i]);
      std::copy(src.begin(), src.end(), g.row(i).begin());
    }
    groups.push_back(std::move(g));
  }
  return build_classifier(groups, std::move(vocabulary));
}

/// On disk a classifier is a normalized bank: one row per class, ids are the
/// class names and labels the class indices.
inline EmbeddingBank classifier_to_bank(const ClassifierWeights& w, std::map<std::string, std::string> meta = {}) {
  EmbeddingBank bank;
  bank.data = w.weights;
  std::vector<ClassIndex> labels(w.num_classes());
  for (std::size_t c = 0; c < labels.size(); ++c) labels[c] = static_cast<ClassIndex>(c);
  bank.labels = std::move(labels);
  bank.ids = w.vocabulary.names();
  bank.normalized = true;
  meta["kind"] = "classifier";
  meta["num_classes"] = std::to_string(w.num_classes());
  bank.meta = std::move(meta);
  return bank;
}

inline constexpr double kClassifierUnitTolerance = 1e-6;

inline ClassifierWeights classifier_from_bank(const EmbeddingBank& bank) {
  if (!bank.normalized) throw Error(ErrorCode::UnnormalizedInput, "classifier bank");
  for (std::size_t c = 0; c < bank.count(); ++c) {
    const double n = std::sqrt(squared_norm(bank.data.row(c)));
    if (std::abs(n - 1.0) > kClassifierUnitTolerance) throw Error(ErrorCode::UnnormalizedInput, std::to_string(c));
  }
  ClassVocabulary vocab = bank.ids ? ClassVocabulary(*bank.ids) : ClassVocabulary::numbered(bank.count());
  return ClassifierWeights{bank.data, std::move(vocab)};
}

inline void require_normalized(const EmbeddingBank& bank, std::string_view what) {
  if (!bank.normalized) throw Error(ErrorCode::UnnormalizedInput, std::string(what));
}

/// Raw cosine logits f * W^T.
inline Matrix zeroshot_scores(const Matrix& features, const ClassifierWeights& w) {
  if (features.cols() != w.dim()) throw Error(ErrorCode::DimensionMismatch, "features vs classifier");
  return multiply_transposed(features, w.weights);
}

inline LogitMatrix zeroshot_logits(const EmbeddingBank& f, const ClassifierWeights& w) {
  if (f.dim() != w.dim()) throw Error(ErrorCode::DimensionMismatch, "features vs classifier");
  require_normalized(f, "test bank");
  return make_logits(zeroshot_scores(f.data, w));
}

struct SimilarityMoments {
  double mean = 0.0;
  double variance = 0.0;  // population variance
  std::size_t pairs = 0;
};

struct GapStats {
  SimilarityMoments image_image;
  SimilarityMoments text_text;
  SimilarityMoments image_text;
};

namespace detail {

// Two passes over the same enumeration: mean, then squared deviations.
template <typename Visit>
SimilarityMoments moments_of(Visit&& visit) {
  SimilarityMoments m;
  double sum = 0.0;
  visit([&](double v) {
    sum += v;
    ++m.pairs;
  });
  if (m.pairs == 0) return m;
  m.mean = sum / static_cast<double>(m.pairs);
  double sq = 0.0;
  visit([&](double v) { sq += (v - m.mean) * (v - m.mean); });
  m.variance = sq / static_cast<double>(m.pairs);
  return m;
}

inline SimilarityMoments intra_modal(const Matrix& x) {
  return moments_of([&](auto&& emit) {
    for (std::size_t i = 0; i < x.rows(); ++i) {
      for (std::size_t j = i + 1; j < x.rows(); ++j) emit(dot(x.row(i), x.row(j)));
    }
  });
}

}  // namespace detail

/// Pairwise cosine statistics within images, within class texts, and across
/// the two. Intra-modal sides skip self-pairs and count each unordered pair
/// once.
inline GapStats modality_gap_stats(const EmbeddingBank& images, const ClassifierWeights& w) {
  if (images.dim() != w.dim()) throw Error(ErrorCode::DimensionMismatch, "images vs classifier");
  require_normalized(images, "image bank");
  if (images.count() < 2) throw Error(ErrorCode::InsufficientRows, "image");
  if (w.num_classes() < 2) throw Error(ErrorCode::InsufficientRows, "text");
  GapStats g;
  g.image_image = detail::intra_modal(images.data);
  g.text_text = detail::intra_modal(w.weights);
  g.image_text = detail::moments_of([&](auto&& emit) {
    for (std::size_t i = 0; i < images.count(); ++i) {
      for (std::size_t c = 0; c < w.num_classes(); ++c) emit(dot(images.data.row(i), w.weights.row(c)));
    }
  });
  return g;
}

}  // namespace susx
