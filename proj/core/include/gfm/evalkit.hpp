#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gfm/downstream.hpp"
#include "gfm/trainer.hpp"

namespace gfm {

inline constexpr const char* kDefaultBaseline = "Swin (ImageNet-22k)";

// One score column. Header form: "dataset:metric" or "dataset:metric:lower".
struct ScoreColumn {
  std::string dataset;
  std::string metric;
  bool higher_is_better = true;

  std::string header() const;
  static ScoreColumn parse(const std::string& header);
  friend bool operator==(const ScoreColumn&, const ScoreColumn&) = default;
};

// Methods x (dataset, metric) scores. Columns sharing a dataset name form one
// dataset group for ARP. Empty cells are missing scores.
struct ScoreTable {
  std::string baseline = kDefaultBaseline;
  std::vector<ScoreColumn> columns;
  std::vector<std::string> methods;  // row order
  std::map<std::string, std::vector<std::optional<double>>> rows;

  // Datasets in first-appearance column order.
  std::vector<std::string> datasets() const;
  bool has(const std::string& method) const { return rows.count(method) > 0; }
  const std::vector<std::optional<double>>& row(const std::string& method) const;
  void add_row(const std::string& method, std::vector<std::optional<double>> scores);
  // "method / dataset:metric" for every empty cell.
  std::vector<std::string> missing_cells() const;
  // Throws missing-baseline, inconsistent-columns, zero-baseline-score.
  void validate() const;
};

// CSV: header "method,<column>...", one row per method, '#' comment lines,
// double-quoted fields allowed, empty field = missing. Throws parse-error.
ScoreTable parse_score_table(const std::string& text, const std::string& baseline = kDefaultBaseline);
ScoreTable load_score_table(const std::filesystem::path& path, const std::string& baseline = kDefaultBaseline);
void write_score_table(const std::filesystem::path& path, const ScoreTable& table);

// Signed relative difference versus the baseline; sign flipped for
// lower-is-better columns. Throws zero-baseline-score.
double relative_difference(double score, double baseline, bool higher_is_better = true);

struct ARPReport {
  std::string method;
  double arp = 0.0;  // percent
  std::vector<std::pair<std::string, double>> per_dataset;  // relative differences, not scaled
};

// Mean over datasets of the mean relative difference over that dataset's
// columns, times 100. Throws missing-score, zero-baseline-score.
ARPReport arp_report(const ScoreTable& table, const std::string& method);
double arp(const ScoreTable& table, const std::string& method);
// Every method in row order.
std::vector<ARPReport> arp_all(const ScoreTable& table);

void to_json(nlohmann::json& j, const ARPReport& r);
// Columns: method,arp,<dataset>... (per-dataset relative difference in percent).
void write_arp_csv(const std::filesystem::path& path, const std::vector<ARPReport>& reports);

// Assembles a table from every MetricResult JSON under run_dir (recursive).
// Scores for a repeated (method, dataset) are averaged. Throws
// missing-baseline, inconsistent-columns (differing metric sets or task kinds
// for a dataset) and, when strict, missing-score listing every empty cell.
ScoreTable build_results_table(const std::filesystem::path& run_dir, const std::string& baseline,
                               bool strict = true);
ScoreTable results_table(const std::vector<MetricResult>& results, const std::string& baseline, bool strict = true);

// Downstream suite entry: a task definition plus its manifest.
struct SuiteTask {
  TaskSpec spec;
  std::filesystem::path manifest;
};

void to_json(nlohmann::json& j, const SuiteTask& t);
void from_json(const nlohmann::json& j, SuiteTask& t);

// Finetunes `init` on every task once per seed (spec.seed = seed). Results
// are written as <out_dir>/<method>/<dataset>-seed<k>.json when out_dir is set.
std::vector<MetricResult> run_downstream_suite(const Encoder<float>& init, const std::vector<SuiteTask>& tasks,
                                               const std::vector<std::uint64_t>& seeds, const std::string& method,
                                               const std::filesystem::path& out_dir = {});

enum class AblationAxis { stage, student_init, objective, input_mode };
std::string to_string(AblationAxis a);

// One pretraining configuration.
struct AblationCell {
  std::string name;
  int stage = 3;
  StudentInit student_init = StudentInit::random;
  Objective objective = Objective::multi;
  InputMode input_mode = InputMode::same_image;

  std::string key() const;  // identical configurations share one run
};

// A summary row: an axis and the cell it shows on that axis.
struct AblationRow {
  AblationAxis axis;
  std::string label;
  AblationCell cell;
};

struct AblationPlan {
  TrainConfig pretrain;  // template; distill.teacher_checkpoint must be set
  std::filesystem::path pretrain_manifest;
  std::vector<SuiteTask> tasks;
  std::vector<std::uint64_t> seeds{0};
  std::vector<AblationRow> rows;
  // Baseline: the teacher checkpoint finetuned directly (true) or a randomly
  // initialised encoder of the pretraining config (false).
  bool baseline_from_teacher = true;
  std::string baseline = "baseline";

  // Throws plan-invalid.
  void validate() const;
};

// The studied rows: stages 1-4 (multi, random init, SI); random vs
// teacher-checkpoint init; multi vs mim-only vs distill-only; SI vs TP.
// Eleven rows over eight distinct configurations.
std::vector<AblationRow> studied_ablation_rows(int default_stage = 3);
// Every combination of the four axes (4 x 2 x 3 x 2 cells).
std::vector<AblationRow> full_ablation_grid(int num_stages = 4);

void to_json(nlohmann::json& j, const AblationPlan& p);
void from_json(const nlohmann::json& j, AblationPlan& p);

struct AblationSummaryRow {
  AblationRow row;
  ARPReport report;
  std::filesystem::path run_dir;
};

struct AblationResult {
  std::vector<AblationSummaryRow> rows;
  ScoreTable table;
  std::filesystem::path summary_csv;
  std::filesystem::path summary_json;
  std::filesystem::path scores_csv;
};

using AblationProgress = std::function<void(const std::string& message)>;

// One pretraining + downstream suite per distinct configuration, then one
// ARP row per plan row. Writes summary.csv, summary.json and scores.csv.
AblationResult run_ablation(const AblationPlan& plan, const std::filesystem::path& out_dir,
                            const AblationProgress& progress = {});

}  // namespace gfm
