#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "nopvis/attack.hpp"
#include "nopvis/ccc.hpp"
#include "nopvis/detector.hpp"
#include "nopvis/injector.hpp"

namespace nopvis {

struct MotifSpec {
  // Planted once in every malware app, never in a plain benign app.
  std::vector<std::string> malware = {"rem-int/lit8", "ushr-int/lit8", "not-int",
                                      "int-to-byte"};
  // Built only from injectable opcodes, so an attacker can imitate it.
  std::vector<std::string> benign = {"and-int", "or-int", "xor-int", "mul-int"};
  // Benign apps carrying both motifs; the detector must learn the
  // combination rather than either motif alone.
  double benign_with_both = 0.3;
  double benign_with_benign_motif = 0.2;
  // Every app also carries the malware motif minus its first or last op,
  // and a copy with filler spliced in, so only the contiguous motif
  // marks malware.
  bool fragments = true;
  // Filler ops spliced after the first op of the gapped fragment.
  std::size_t decoy_gap = 3;
  // Chance the malware motif opens its method, where an injected nop
  // splits it.
  double malware_motif_at_entry = 0.5;
  std::size_t instructions_per_method = 12;
};

struct CorpusApp {
  SmaliApp app;
  Label label = Label::Benign;
};

struct Corpus {
  std::uint64_t seed = 0;
  std::vector<CorpusApp> apps;
};

// Apps alternate benign/malware; ids are "benign-0007", "malware-0007".
Corpus generate_corpus(std::uint64_t seed, std::size_t apps_per_class,
                       std::size_t methods_per_app, const MotifSpec& motif = {});

// <dir>/<benign|malware>/<app id>/<class path>.smali
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

// A standalone Smali file exercising fields, annotations, payload blocks,
// debug directives, try/catch and comments. Used for round-trip testing.
std::string generate_smali_file(std::uint64_t seed);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Seeded shuffle, then the first `train_fraction` of apps train.
Split split_corpus(std::size_t n, std::uint64_t seed, double train_fraction = 0.8);

std::vector<Example> to_examples(std::span<const CorpusApp> apps,
                                 const OpcodeTable& table, std::size_t max_len);

struct MetricsRow {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;
  double accuracy = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  // Some ratio had a zero denominator and was reported as 0.
  bool degenerate = false;
};

MetricsRow metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t tn,
                               std::size_t fn);

// Throws std::invalid_argument on an empty corpus.
MetricsRow evaluate(const DetectorModel& model, std::span<const Example> corpus,
                    double threshold = 0.5);

struct AttackOptions {
  double threshold = 0.5;
  std::size_t budget = 2;
  std::size_t payload_length = 2;
  int nop_count = 3;
  CccWeights weights;
};

struct AppAttack {
  std::string app_id;
  CccReport ccc;
  double score_before = 0;
  double score_after = 0;
  std::size_t sites = 0;
  std::size_t skipped = 0;
};

struct AttackExperiment {
  AttackKind kind = AttackKind::SimpleNop;
  std::size_t payload_length = 0;
  MetricsRow clean;
  MetricsRow attacked;
  // Component-wise mean over the attacked apps.
  CccReport mean_ccc;
  std::vector<AppAttack> apps;
};

// Attacks every malware app in `test`; benign apps are scored unchanged.
AttackExperiment run_attack_experiment(const DetectorModel& model,
                                       std::span<const CorpusApp> test,
                                       AttackKind kind,
                                       const AttackOptions& options = {});

struct SweepRow {
  std::size_t injected_length = 0;
  double mean_ccc = 0;
  double recall = 0;
};

// SIO with `length` payload instructions per method, one row per length.
std::vector<SweepRow> run_sweep(const DetectorModel& model,
                                std::span<const CorpusApp> test,
                                std::span<const std::size_t> lengths,
                                const AttackOptions& options = {});

// Average ranks for ties; nullopt when either side is constant.
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

struct PipelineConfig {
  std::uint64_t seed = 7;
  std::size_t apps_per_class = 300;
  std::size_t methods_per_app = 12;
  MotifSpec motif;
  DetectorConfig detector = [] {
    DetectorConfig c;
    c.max_len = 1024;
    return c;
  }();
  TrainOptions train = [] {
    TrainOptions t;
    t.epochs = 30;
    t.learning_rate = 0.01;
    return t;
  }();
  AttackOptions attack;
  std::vector<std::size_t> sweep_lengths = {2, 4, 8, 16};
};

struct PipelineReport {
  std::uint64_t seed = 0;
  MetricsRow train;
  MetricsRow test;
  std::vector<AttackExperiment> attacks;
  std::vector<SweepRow> sweep;
  std::optional<double> sweep_spearman;
  double seconds = 0;
};

PipelineReport run_pipeline(const PipelineConfig& config);

inline constexpr int kCsvSchemaVersion = 1;

std::string metrics_csv(const PipelineReport& report);
std::string sweep_csv(std::span<const SweepRow> rows, std::uint64_t seed);
nlohmann::json to_json(const MetricsRow& row);
nlohmann::json to_json(const AttackExperiment& e);
nlohmann::json to_json(const SweepRow& row);
nlohmann::json to_json(const PipelineReport& report);

}  // namespace nopvis
