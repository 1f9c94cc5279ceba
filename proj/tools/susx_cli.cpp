// susx: command-line driver for training-free adaptation over embedding banks.
//
// Exit codes: 0 success, 1 library error (stderr `<Code>:<detail>`),
// 2 usage error (stderr `UsageError:<message>`).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <openssl/evp.h>

#include "CLI11.hpp"

#include "susx/susx.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kErrorExit = 1;
constexpr int kUsageExit = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw susx::Error(susx::ErrorCode::IoFailure, "sha256");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xf];
  }
  return out;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(susx::read_file_bytes(path)); }

// Banks are hashed from the exact bytes that were decoded.
struct LoadedBank {
  susx::EmbeddingBank bank;
  std::string sha256;
};

LoadedBank load(const fs::path& path, const susx::BankValidation& opts = {}) {
  const std::string bytes = susx::read_file_bytes(path);
  return {susx::decode_bank(bytes, opts), sha256_hex(bytes)};
}

struct LoadedClassifier {
  susx::ClassifierWeights weights;
  std::map<std::string, std::string> meta;
  std::string sha256;
};

LoadedClassifier load_classifier(const fs::path& path) {
  auto [bank, sha] = load(path);
  return {susx::classifier_from_bank(bank), std::move(bank.meta), std::move(sha)};
}

const std::vector<susx::ClassIndex>& require_labels(const susx::EmbeddingBank& bank, const std::string& what) {
  if (!bank.labels) throw UsageError(what + " has no labels");
  return *bank.labels;
}

void emit(const susx::Report& report, const std::string& out_path) {
  if (out_path.empty()) {
    susx::write_report(std::cout, report);
    return;
  }
  std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
  if (!out) throw susx::Error(susx::ErrorCode::IoFailure, out_path);
  susx::write_report(out, report);
  if (!out) throw susx::Error(susx::ErrorCode::IoFailure, out_path);
}

void copy_meta(const std::map<std::string, std::string>& from, std::map<std::string, std::string>& to,
               std::initializer_list<const char*> keys) {
  for (const char* k : keys) {
    if (auto it = from.find(k); it != from.end()) to[k] = it->second;
  }
}

std::size_t infer_num_classes(const susx::EmbeddingBank& bank) {
  if (auto it = bank.meta.find("num_classes"); it != bank.meta.end()) return std::stoull(it->second);
  std::size_t c = 0;
  for (auto l : *bank.labels) c = std::max<std::size_t>(c, l + 1);
  return c;
}

struct Options {
  std::string in;
  std::string vocab;
  std::string out;
  std::string test_bank;
  std::string support_bank;
  std::string classifier;
  std::string grid;
  std::string mode = "zs";
  susx::HyperParams hp;
  std::size_t n_per_class = 0;
  std::size_t k_shot = 0;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  bool dedup = false;
  bool with_timing = false;
};

int run_normalize(const Options& o) {
  auto [bank, sha] = load(o.in);
  bank = susx::l2_normalize(std::move(bank));
  bank.meta["normalization"] = "l2";
  susx::save_bank(bank, o.out);
  std::printf("normalized %zu rows (dim %zu) -> %s\n", bank.count(), bank.dim(), o.out.c_str());
  return 0;
}

int run_build_classifier(const Options& o) {
  const susx::ClassVocabulary vocab = susx::load_vocabulary(o.vocab);
  auto [prompts, sha] = load(o.in, {vocab.size()});
  if (!prompts.labels) throw UsageError("prompt bank has no labels");
  const auto w = susx::build_classifier(prompts, vocab);
  std::map<std::string, std::string> meta;
  copy_meta(prompts.meta, meta, {"encoder", "prompt_strategy", "normalization"});
  meta["prompt_bank_sha256"] = sha;
  meta["prompt_count"] = std::to_string(prompts.count());
  susx::save_bank(susx::classifier_to_bank(w, std::move(meta)), o.out);
  std::printf("classifier: %zu classes x %zu dims from %zu prompts -> %s\n", w.num_classes(), w.dim(),
              prompts.count(), o.out.c_str());
  return 0;
}

int run_retrieve(const Options& o) {
  const auto cls = load_classifier(o.classifier);
  const auto [candidates, sha] = load(o.in);
  const auto picks = susx::rank_support(candidates, cls.weights, o.n_per_class, {o.dedup});
  std::map<std::string, std::string> meta;
  copy_meta(cls.meta, meta, {"encoder", "prompt_strategy"});
  meta["source"] = "retrieval";
  meta["n_per_class"] = std::to_string(o.n_per_class);
  meta["dedup"] = o.dedup ? "true" : "false";
  meta["num_classes"] = std::to_string(cls.weights.num_classes());
  meta["candidates_sha256"] = sha;
  meta["classifier_sha256"] = cls.sha256;
  susx::save_bank(susx::bank_from_picks(candidates, picks, std::move(meta)), o.out);
  std::printf("retrieved %zu support rows (%zu per class, %zu classes) -> %s\n", picks.size(), o.n_per_class,
              cls.weights.num_classes(), o.out.c_str());
  return 0;
}

int run_sample(const Options& o) {
  const auto cls = load_classifier(o.classifier);
  const std::size_t classes = cls.weights.num_classes();
  const auto [bank, sha] = load(o.in, {classes});
  if (!bank.labels) throw UsageError("few-shot bank has no labels");
  const auto picks = susx::sample_few_shot_rows(bank, classes, o.k_shot, o.seed);
  std::map<std::string, std::string> meta;
  copy_meta(bank.meta, meta, {"encoder", "dataset"});
  meta["source"] = "few-shot";
  meta["k_shot"] = std::to_string(o.k_shot);
  meta["seed"] = std::to_string(o.seed);
  meta["num_classes"] = std::to_string(classes);
  meta["pool_sha256"] = sha;
  susx::save_bank(susx::bank_from_picks(bank, picks, std::move(meta)), o.out);
  std::printf("sampled %zu-shot support: %zu rows -> %s\n", o.k_shot, picks.size(), o.out.c_str());
  return 0;
}

int run_predict(const Options& o) {
  const susx::Mode mode = susx::parse_mode(o.mode);
  if (mode != susx::Mode::ZeroShot && o.support_bank.empty()) {
    throw UsageError("--support-bank is required for mode " + o.mode);
  }
  o.hp.validate();
  const auto cls = load_classifier(o.classifier);
  const std::size_t classes = cls.weights.num_classes();
  const auto [test, test_sha] = load(o.test_bank, {classes});
  const auto& gold = require_labels(test, "test bank");

  std::optional<LoadedBank> support_bank;
  std::optional<susx::SupportSet> support;
  if (mode != susx::Mode::ZeroShot) {
    support_bank = load(o.support_bank, {classes});
    require_labels(support_bank->bank, "support bank");
    support = susx::ingest_support(support_bank->bank, classes);
  }
  const auto report = susx::evaluate(test, gold, cls.weights, support ? &*support : nullptr, o.hp, mode,
                                     support_bank ? support_bank->bank.meta : std::map<std::string, std::string>{});

  susx::Report r;
  r.add("command", std::string("predict"));
  r.add("mode", std::string(susx::to_string(mode)));
  if (mode != susx::Mode::ZeroShot) susx::add_params(r, o.hp);
  if (!report.dataset.empty()) r.add("dataset", report.dataset);
  r.add("num_classes", classes);
  r.add("test_count", report.test_count);
  r.add("support_count", report.support_count);
  r.add("accuracy", report.accuracy);
  r.add("test_bank_sha256", test_sha);
  r.add("classifier_sha256", cls.sha256);
  if (support_bank) r.add("support_bank_sha256", support_bank->sha256);
  for (const auto& [k, v] : report.support_provenance) r.add("support." + k, v);
  if (o.with_timing) r.add("elapsed_ms", report.elapsed_ms);
  emit(r, o.out);

  std::fprintf(stderr, "%-6s %-10s %-8s %-8s %8s\n", "mode", "accuracy", "test", "support", "ms");
  std::fprintf(stderr, "%-6s %-10.4f %-8zu %-8zu %8.1f\n", o.mode.c_str(), report.accuracy, report.test_count,
               report.support_count, report.elapsed_ms);
  return 0;
}

int run_sweep(const Options& o) {
  const auto cls = load_classifier(o.classifier);
  const std::size_t classes = cls.weights.num_classes();
  const auto [val, val_sha] = load(o.test_bank, {classes});
  const auto& gold = require_labels(val, "validation bank");
  const auto [sbank, support_sha] = load(o.support_bank, {classes});
  require_labels(sbank, "support bank");
  const susx::SupportSet support = susx::ingest_support(sbank, classes);
  const susx::SweepGrid grid = o.grid.empty() ? susx::SweepGrid::default_grid() : susx::load_grid(o.grid);

  const auto result = susx::grid_sweep(val, gold, cls.weights, support, grid, {o.threads, o.hp.epsilon});
  const auto zs = susx::zeroshot_logits(val, cls.weights);

  susx::Report r;
  r.add("command", std::string("sweep"));
  r.add("mode", std::string("tipx"));
  r.add("num_classes", classes);
  r.add("val_count", val.count());
  r.add("support_count", support.size());
  r.add("grid_points", grid.size());
  susx::add_params(r, result.best, "best_");
  r.add("best_val_accuracy", result.best_accuracy);
  r.add("zeroshot_val_accuracy", susx::accuracy(zs.predictions, gold));
  r.add("val_bank_sha256", val_sha);
  r.add("classifier_sha256", cls.sha256);
  r.add("support_bank_sha256", support_sha);
  if (!o.grid.empty()) r.add("grid_sha256", sha256_file(o.grid));
  for (const auto& [k, v] : sbank.meta) r.add("support." + k, v);
  r.grid = result.table;
  emit(r, o.out);

  std::fprintf(stderr, "best of %zu points: alpha=%g beta=%g gamma=%g tau=%g val_accuracy=%.4f\n", grid.size(),
               result.best.alpha, result.best.beta, result.best.gamma, result.best.tau, result.best_accuracy);
  return 0;
}

int run_diversity(const Options& o) {
  const auto [bank, sha] = load(o.in);
  if (!bank.labels) throw UsageError("support bank has no labels");
  const std::size_t classes =
      o.classifier.empty() ? infer_num_classes(bank) : load_classifier(o.classifier).weights.num_classes();
  const auto support = susx::ingest_support(bank, classes);
  susx::Report r;
  r.add("command", std::string("diversity"));
  r.add("num_classes", classes);
  r.add("support_count", support.size());
  r.add("diversity", susx::diversity(support));
  r.add("support_bank_sha256", sha);
  emit(r, o.out);
  return 0;
}

void add_moments(susx::Report& r, const std::string& prefix, const susx::SimilarityMoments& m) {
  r.add(prefix + "_mean", m.mean);
  r.add(prefix + "_variance", m.variance);
  r.add(prefix + "_pairs", m.pairs);
}

int run_gap_stats(const Options& o) {
  const auto cls = load_classifier(o.classifier);
  const auto [images, sha] = load(o.in);
  const auto g = susx::modality_gap_stats(images, cls.weights);
  susx::Report r;
  r.add("command", std::string("gap-stats"));
  add_moments(r, "image_image", g.image_image);
  add_moments(r, "text_text", g.text_text);
  add_moments(r, "image_text", g.image_text);
  r.add("image_bank_sha256", sha);
  r.add("classifier_sha256", cls.sha256);
  emit(r, o.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Training-free adaptation of vision-language classifiers over embedding banks", "susx"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--threads", o.threads, "Worker cap for parallel sections")->check(CLI::PositiveNumber);

  auto* normalize = app.add_subcommand("normalize", "L2-normalize every row of a bank");
  normalize->add_option("in", o.in, "Input bank")->required();
  normalize->add_option("--out", o.out, "Output bank")->required();

  auto* build = app.add_subcommand("build-classifier", "Average prompt embeddings per class into classifier rows");
  build->add_option("prompts", o.in, "Labelled prompt-embedding bank")->required();
  build->add_option("vocabulary", o.vocab, "Class names, one per line")->required();
  build->add_option("--out", o.out, "Output classifier bank")->required();

  auto* retrieve = app.add_subcommand("retrieve", "Top-N support rows per class from a candidate bank");
  retrieve->add_option("candidates", o.in, "Normalized candidate bank")->required();
  retrieve->add_option("--classifier", o.classifier)->required();
  retrieve->add_option("--n-per-class", o.n_per_class)->required()->check(CLI::PositiveNumber);
  retrieve->add_option("--out", o.out)->required();
  retrieve->add_flag("--dedup", o.dedup, "Assign each candidate to at most one class");

  auto* sample = app.add_subcommand("sample", "Seeded K-shot support set from a labelled bank");
  sample->add_option("pool", o.in, "Labelled, normalized bank")->required();
  sample->add_option("--classifier", o.classifier)->required();
  sample->add_option("--k-shot", o.k_shot)->required()->check(CLI::PositiveNumber);
  sample->add_option("--seed", o.seed);
  sample->add_option("--out", o.out)->required();

  auto add_hparams = [&](CLI::App* sub) {
    sub->add_option("--alpha", o.hp.alpha)->capture_default_str();
    sub->add_option("--beta", o.hp.beta)->capture_default_str();
    sub->add_option("--gamma", o.hp.gamma)->capture_default_str();
    sub->add_option("--tau", o.hp.tau)->capture_default_str();
    sub->add_option("--epsilon", o.hp.epsilon, "KL smoothing")->capture_default_str();
  };

  auto* predict = app.add_subcommand("predict", "Classify a labelled test bank and report accuracy");
  predict->add_option("--test-bank", o.test_bank)->required();
  predict->add_option("--classifier", o.classifier)->required();
  predict->add_option("--support-bank", o.support_bank);
  predict->add_option("--mode", o.mode, "zs | tip | tipx")->capture_default_str();
  add_hparams(predict);
  predict->add_option("--out", o.out, "Report path (stdout when omitted)");
  predict->add_flag("--with-timing", o.with_timing, "Add elapsed_ms to the report");

  auto* sweep = app.add_subcommand("sweep", "Grid-search TIP-X hyperparameters on a validation bank");
  sweep->add_option("--val-bank,--test-bank", o.test_bank)->required();
  sweep->add_option("--classifier", o.classifier)->required();
  sweep->add_option("--support-bank", o.support_bank)->required();
  sweep->add_option("--grid", o.grid, "key=v1,v2,... grid file (default grid when omitted)");
  sweep->add_option("--epsilon", o.hp.epsilon, "KL smoothing")->capture_default_str();
  sweep->add_option("--out", o.out, "Report path (stdout when omitted)");

  auto* diversity = app.add_subcommand("diversity", "1 - mean within-class pairwise cosine of a support bank");
  diversity->add_option("support", o.in)->required();
  diversity->add_option("--classifier", o.classifier, "Fixes the class count");
  diversity->add_option("--out", o.out);

  auto* gap = app.add_subcommand("gap-stats", "Intra- and inter-modal cosine similarity statistics");
  gap->add_option("images", o.in)->required();
  gap->add_option("--classifier", o.classifier)->required();
  gap->add_option("--out", o.out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "UsageError:" << e.what() << '\n';
    return kUsageExit;
  }

  try {
    if (*normalize) return run_normalize(o);
    if (*build) return run_build_classifier(o);
    if (*retrieve) return run_retrieve(o);
    if (*sample) return run_sample(o);
    if (*predict) return run_predict(o);
    if (*sweep) return run_sweep(o);
    if (*diversity) return run_diversity(o);
    if (*gap) return run_gap_stats(o);
  } catch (const UsageError& e) {
    std::cerr << "UsageError:" << e.what() << '\n';
    return kUsageExit;
  } catch (const susx::Error& e) {
    std::cerr << e.what() << '\n';
    return kErrorExit;
  } catch (const std::exception& e) {
    std::cerr << "InternalError:" << e.what() << '\n';
    return kErrorExit;
  }
  return kUsageExit;
}
