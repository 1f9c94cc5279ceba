#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "susx/adapter.hpp"
#include "susx/classifier.hpp"
#include "susx/embedding_store.hpp"
#include "susx/error.hpp"
#include "susx/matrix.hpp"

namespace susx {

inline double accuracy(std::span<const ClassIndex> predictions, std::span<const ClassIndex> gold) {
  if (predictions.size() != gold.size()) throw Error(ErrorCode::LengthMismatch, "predictions vs gold");
  if (gold.empty()) throw Error(ErrorCode::EmptyInput, "no predictions");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hits += predictions[i] == gold[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(gold.size());
}

/// n values spaced evenly in log space, endpoints included.
inline std::vector<double> log_spaced(double lo, double hi, std::size_t n) {
  if (n == 1) return {lo};
  std::vector<double> out(n);
  const double a = std::log(lo);
  const double b = std::log(hi);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1));
  }
  out.front() = lo;
  out.back() = hi;
  return out;
}

struct SweepGrid {
  std::vector<double> alpha;
  std::vector<double> beta;
  std::vector<double> gamma;
  std::vector<double> tau;

  /// 8 log-spaced values over the tuning ranges alpha [0.1, 50],
  /// beta [1, 50], gamma [0.1, 30]; tau fixed at 1.
  static SweepGrid default_grid() {
    return {log_spaced(0.1, 50.0, 8), log_spaced(1.0, 50.0, 8), log_spaced(0.1, 30.0, 8), {1.0}};
  }

  std::size_t size() const noexcept { return alpha.size() * beta.size() * gamma.size() * tau.size(); }

  void validate() const {
    auto check = [](const std::vector<double>& values, const char* name, bool strictly_positive) {
      if (values.empty()) throw Error(ErrorCode::InvalidArgument, std::string(name) + " list is empty");
      for (double v : values) {
        if (!std::isfinite(v) || v < 0.0 || (strictly_positive && v == 0.0)) {
          throw Error(ErrorCode::InvalidArgument, std::string(name) + " value out of bounds");
        }
      }
    };
    check(alpha, "alpha", false);
    check(beta, "beta", true);
    check(gamma, "gamma", false);
    check(tau, "tau", true);
  }

  bool operator==(const SweepGrid&) const = default;
};

/// Plain-text grid spec: `key=v1,v2,...` lines with keys alpha, beta, gamma,
/// tau. `#` starts a comment. Axes not listed keep their default values.
inline SweepGrid parse_grid(std::istream& in) {
  SweepGrid grid = SweepGrid::default_grid();
  std::map<std::string, std::vector<double>*> axes{
      {"alpha", &grid.alpha}, {"beta", &grid.beta}, {"gamma", &grid.gamma}, {"tau", &grid.tau}};
  std::map<std::string, bool> seen;
  auto fail = [](std::size_t line, const std::string& why) {
    throw Error(ErrorCode::GridParseError, "line " + std::to_string(line) + ": " + why);
  };
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string{};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(line_no, "expected key=values");
    const std::string key = trim(line.substr(0, eq));
    const auto axis = axes.find(key);
    if (axis == axes.end()) fail(line_no, "unknown key '" + key + "'");
    if (seen[key]) fail(line_no, "duplicate key '" + key + "'");
    seen[key] = true;
    std::vector<double> values;
    std::stringstream list(line.substr(eq + 1));
    std::string item;
    while (std::getline(list, item, ',')) {
      item = trim(item);
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(item, &used);
      } catch (const std::exception&) {
        fail(line_no, "bad number '" + item + "'");
      }
      if (used != item.size() || !std::isfinite(v)) fail(line_no, "bad number '" + item + "'");
      const bool positive = key == "beta" || key == "tau";
      if (v < 0.0 || (positive && v == 0.0)) fail(line_no, key + " value out of bounds");
      values.push_back(v);
    }
    if (values.empty()) fail(line_no, "empty value list");
    *axis->second = std::move(values);
  }
  return grid;
}

inline SweepGrid load_grid(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, path.string());
  return parse_grid(in);
}

struct SweepPoint {
  HyperParams params;
  double accuracy = 0.0;
};

struct SweepResult {
  HyperParams best;
  double best_accuracy = 0.0;
  std::vector<SweepPoint> table;  // alpha outermost, then beta, gamma, tau
};

struct SweepOptions {
  std::size_t threads = 1;  // caps (beta, tau) block workers
  double epsilon = 1e-12;
};

/// TIP-X scores over a grid with the shared terms computed once: ZSL once,
/// A L per beta, the KL matrix per tau, psi(-M) L per (beta, tau). Every
/// (alpha, gamma) point is then a blend of three cached t x C matrices.
class FactoredSweep {
 public:
  FactoredSweep(const Matrix& f, const ClassifierWeights& w, const SupportSet& support, SweepGrid grid,
                const SweepOptions& opts = {})
      : grid_(std::move(grid)), threads_(std::max<std::size_t>(1, opts.threads)) {
    grid_.validate();
    require_compatible(f, w, support);
    zsl_ = zeroshot_scores(f, w);
    const std::size_t nb = grid_.beta.size();
    const std::size_t nt = grid_.tau.size();

    std::vector<Matrix> kl(nt);
    for_each_block(nt, [&](std::size_t it) {
      const double tau = grid_.tau[it];
      kl[it] = kl_matrix(signatures(f, w, tau), signatures(support.features, w, tau), opts.epsilon);
    });

    affinity_terms_.resize(nb);
    inter_terms_.resize(nb * nt);
    for_each_block(nb, [&](std::size_t ib) {
      const AffinityMatrix a = tip_affinity(f, support.features, grid_.beta[ib]);
      affinity_terms_[ib] = attend(a.values, support.one_hot);
      for (std::size_t it = 0; it < nt; ++it) inter_terms_[ib * nt + it] = inter_modal_term(kl[it], a, support.one_hot);
    });
  }

  const SweepGrid& grid() const noexcept { return grid_; }
  const Matrix& zeroshot() const noexcept { return zsl_; }

  Matrix scores(std::size_t ia, std::size_t ib, std::size_t ig, std::size_t it) const {
    return blend_scores(zsl_, affinity_terms_.at(ib), inter_terms_.at(ib * grid_.tau.size() + it), grid_.alpha.at(ia),
                        grid_.gamma.at(ig));
  }

  /// Accuracy at every grid point, row-major (alpha outermost, tau innermost).
  std::vector<double> accuracy_table(std::span<const ClassIndex> gold) const {
    if (gold.size() != zsl_.rows()) throw Error(ErrorCode::LengthMismatch, "gold vs test rows");
    if (gold.empty()) throw Error(ErrorCode::EmptyInput, "no validation rows");
    const std::size_t na = grid_.alpha.size(), nb = grid_.beta.size(), ng = grid_.gamma.size(), nt = grid_.tau.size();
    std::vector<double> table(grid_.size());
    for_each_block(nb * nt, [&](std::size_t block) {
      const std::size_t ib = block / nt;
      const std::size_t it = block % nt;
      const Matrix& al = affinity_terms_[ib];
      const Matrix& pl = inter_terms_[block];
      for (std::size_t ia = 0; ia < na; ++ia) {
        for (std::size_t ig = 0; ig < ng; ++ig) {
          const double alpha = grid_.alpha[ia];
          const double gamma = grid_.gamma[ig];
          std::size_t hits = 0;
          for (std::size_t i = 0; i < zsl_.rows(); ++i) {
            // Same per-entry expression as blend_scores, argmax without storing.
            const auto z = zsl_.row(i), a = al.row(i), p = pl.row(i);
            std::size_t best = 0;
            double best_score = z[0] + alpha * a[0] + gamma * p[0];
            for (std::size_t c = 1; c < z.size(); ++c) {
              const double s = z[c] + alpha * a[c] + gamma * p[c];
              if (s > best_score) {
                best_score = s;
                best = c;
              }
            }
            hits += best == gold[i] ? 1 : 0;
          }
          table[((ia * nb + ib) * ng + ig) * nt + it] = static_cast<double>(hits) / static_cast<double>(gold.size());
        }
      }
    });
    return table;
  }

 private:
  template <typename Fn>
  void for_each_block(std::size_t n, Fn&& fn) const {
    const std::size_t workers = std::min(threads_, n);
    if (workers <= 1) {
      for (std::size_t i = 0; i < n; ++i) fn(i);
      return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < n; i += workers) fn(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  SweepGrid grid_;
  std::size_t threads_;
  Matrix zsl_;
  std::vector<Matrix> affinity_terms_;  // per beta
  std::vector<Matrix> inter_terms_;     // per (beta, tau)
};

/// Maximizes validation TIP-X accuracy over the grid. Ties keep the earliest
/// point in row-major order.
inline SweepResult grid_sweep(const EmbeddingBank& val_f, std::span<const ClassIndex> val_gold,
                              const ClassifierWeights& w, const SupportSet& support, const SweepGrid& grid,
                              const SweepOptions& opts = {}) {
  require_normalized(val_f, "validation bank");
  const FactoredSweep sweep(val_f.data, w, support, grid, opts);
  const std::vector<double> acc = sweep.accuracy_table(val_gold);

  SweepResult result;
  result.table.reserve(acc.size());
  std::size_t k = 0;
  for (double alpha : grid.alpha) {
    for (double beta : grid.beta) {
      for (double gamma : grid.gamma) {
        for (double tau : grid.tau) {
          result.table.push_back({HyperParams{alpha, beta, gamma, tau, opts.epsilon}, acc[k++]});
        }
      }
    }
  }
  const auto best = std::max_element(result.table.begin(), result.table.end(),
                                     [](const SweepPoint& a, const SweepPoint& b) { return a.accuracy < b.accuracy; });
  result.best = best->params;
  result.best_accuracy = best->accuracy;
  return result;
}

enum class Mode { ZeroShot, Tip, TipX };

constexpr std::string_view to_string(Mode m) noexcept {
  switch (m) {
    case Mode::ZeroShot: return "zs";
    case Mode::Tip: return "tip";
    case Mode::TipX: return "tipx";
  }
  return "zs";
}

inline Mode parse_mode(std::string_view s) {
  if (s == "zs" || s == "zero-shot") return Mode::ZeroShot;
  if (s == "tip") return Mode::Tip;
  if (s == "tipx") return Mode::TipX;
  throw Error(ErrorCode::InvalidArgument, "unknown mode '" + std::string(s) + "'");
}

struct EvalReport {
  Mode mode = Mode::ZeroShot;
  HyperParams params;
  std::string dataset;
  double accuracy = 0.0;
  std::size_t test_count = 0;
  std::size_t support_count = 0;
  std::map<std::string, std::string> support_provenance;
  std::vector<ClassIndex> predictions;
  double elapsed_ms = 0.0;
};

/// Scores `test_f` in the requested mode. Zero-shot ignores the support set
/// and the blend weights; the other modes require a support set.
inline EvalReport evaluate(const EmbeddingBank& test_f, std::span<const ClassIndex> gold, const ClassifierWeights& w,
                           const SupportSet* support, const HyperParams& hp, Mode mode,
                           const std::map<std::string, std::string>& support_meta = {}) {
  const auto start = std::chrono::steady_clock::now();
  require_normalized(test_f, "test bank");
  EvalReport report;
  report.mode = mode;
  report.params = hp;
  report.test_count = test_f.count();
  if (auto it = test_f.meta.find("dataset"); it != test_f.meta.end()) report.dataset = it->second;

  LogitMatrix logits;
  if (mode == Mode::ZeroShot) {
    logits = zeroshot_logits(test_f, w);
  } else {
    if (support == nullptr) throw Error(ErrorCode::InvalidArgument, "support set required for mode " + std::string(to_string(mode)));
    logits = mode == Mode::Tip ? tip_predict(test_f.data, w, *support, hp) : tipx_predict(test_f.data, w, *support, hp);
    report.support_count = support->size();
    report.support_provenance = support_meta;
  }
  report.accuracy = accuracy(logits.predictions, gold);
  report.predictions = std::move(logits.predictions);
  report.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace susx
