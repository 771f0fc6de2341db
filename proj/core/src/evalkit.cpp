#include "gfm/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "gfm/checkpoint.hpp"
#include "gfm/error.hpp"

namespace gfm {

namespace fs = std::filesystem;

std::string ScoreColumn::header() const { return dataset + ":" + metric + (higher_is_better ? "" : ":lower"); }

ScoreColumn ScoreColumn::parse(const std::string& header) {
  ScoreColumn c;
  const auto a = header.find(':');
  check(a != std::string::npos && a > 0, Errc::parse_error, "column '" + header + "' is not dataset:metric");
  c.dataset = header.substr(0, a);
  const auto rest = header.substr(a + 1);
  const auto b = rest.find(':');
  c.metric = rest.substr(0, b);
  check(!c.metric.empty(), Errc::parse_error, "column '" + header + "' has no metric");
  if (b != std::string::npos) {
    const auto dir = rest.substr(b + 1);
    check(dir == "lower" || dir == "higher", Errc::parse_error, "column '" + header + "': direction must be lower or higher");
    c.higher_is_better = dir == "higher";
  }
  return c;
}

std::vector<std::string> ScoreTable::datasets() const {
  std::vector<std::string> out;
  for (const auto& c : columns)
    if (std::find(out.begin(), out.end(), c.dataset) == out.end()) out.push_back(c.dataset);
  return out;
}

const std::vector<std::optional<double>>& ScoreTable::row(const std::string& method) const {
  auto it = rows.find(method);
  if (it == rows.end()) {
    if (method == baseline) fail(Errc::missing_baseline, "baseline row '" + baseline + "' is absent");
    fail(Errc::missing_score, "no row for method '" + method + "'");
  }
  return it->second;
}

void ScoreTable::add_row(const std::string& method, std::vector<std::optional<double>> scores) {
  check(!has(method), Errc::inconsistent_columns, "duplicate row '" + method + "'");
  check(scores.size() == columns.size(), Errc::inconsistent_columns,
        "row '" + method + "' has " + std::to_string(scores.size()) + " cells, table has " +
            std::to_string(columns.size()) + " columns");
  methods.push_back(method);
  rows.emplace(method, std::move(scores));
}

std::vector<std::string> ScoreTable::missing_cells() const {
  std::vector<std::string> out;
  for (const auto& m : methods) {
    const auto& r = rows.at(m);
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (i >= r.size() || !r[i]) out.push_back(m + " / " + columns[i].header());
  }
  return out;
}

void ScoreTable::validate() const {
  check(has(baseline), Errc::missing_baseline, "baseline row '" + baseline + "' is absent");
  std::set<std::string> seen;
  for (const auto& c : columns)
    check(seen.insert(c.header()).second, Errc::inconsistent_columns, "duplicate column " + c.header());
  for (const auto& m : methods)
    check(rows.at(m).size() == columns.size(), Errc::inconsistent_columns, "row '" + m + "' has the wrong width");
  const auto& base = rows.at(baseline);
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (base[i]) check(*base[i] != 0.0, Errc::zero_baseline_score, "baseline score is 0 for " + columns[i].header());
}

namespace {

std::vector<std::string> split_csv(const std::string& line, std::size_t line_no) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  check(!quoted, Errc::parse_error, "line " + std::to_string(line_no) + ": unterminated quote");
  out.push_back(cur);
  for (auto& f : out) {
    const auto b = f.find_first_not_of(" \t\r");
    const auto e = f.find_last_not_of(" \t\r");
    f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
  }
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return out + "\"";
}

std::string fmt_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  check(static_cast<bool>(out), Errc::io_error, "cannot write " + path.string());
  return out;
}

}  // namespace

ScoreTable parse_score_table(const std::string& text, const std::string& baseline) {
  ScoreTable t;
  t.baseline = baseline;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto fields = split_csv(line, line_no);
    if (!header) {
      check(fields.size() >= 2, Errc::parse_error, "line " + std::to_string(line_no) + ": header needs score columns");
      for (std::size_t i = 1; i < fields.size(); ++i) t.columns.push_back(ScoreColumn::parse(fields[i]));
      header = true;
      continue;
    }
    check(fields.size() == t.columns.size() + 1, Errc::inconsistent_columns,
          "line " + std::to_string(line_no) + ": expected " + std::to_string(t.columns.size() + 1) + " fields, got " +
              std::to_string(fields.size()));
    std::vector<std::optional<double>> scores;
    for (std::size_t i = 1; i < fields.size(); ++i) {
      if (fields[i].empty()) {
        scores.emplace_back();
        continue;
      }
      try {
        std::size_t used = 0;
        scores.emplace_back(std::stod(fields[i], &used));
        check(used == fields[i].size(), Errc::parse_error, "trailing characters");
      } catch (const std::logic_error&) {
        fail(Errc::parse_error, "line " + std::to_string(line_no) + ": '" + fields[i] + "' is not a number");
      }
    }
    t.add_row(fields[0], std::move(scores));
  }
  check(header, Errc::parse_error, "score table has no header");
  t.validate();
  return t;
}

ScoreTable load_score_table(const fs::path& path, const std::string& baseline) {
  std::ifstream in(path);
  check(static_cast<bool>(in), Errc::io_error, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_score_table(ss.str(), baseline);
}

void write_score_table(const fs::path& path, const ScoreTable& table) {
  auto out = open_out(path);
  out << "method";
  for (const auto& c : table.columns) out << ',' << csv_field(c.header());
  out << '\n';
  for (const auto& m : table.methods) {
    out << csv_field(m);
    for (const auto& v : table.rows.at(m)) out << ',' << (v ? fmt_num(*v) : "");
    out << '\n';
  }
}

double relative_difference(double score, double baseline, bool higher_is_better) {
  check(baseline != 0.0, Errc::zero_baseline_score, "baseline score is 0");
  const double d = (score - baseline) / baseline;
  return higher_is_better ? d : -d;
}

ARPReport arp_report(const ScoreTable& table, const std::string& method) {
  const auto& base = table.row(table.baseline);
  const auto& row = table.row(method);
  ARPReport r;
  r.method = method;
  const auto datasets = table.datasets();
  check(!datasets.empty(), Errc::missing_score, "table has no score columns");
  double total = 0.0;
  for (const auto& ds : datasets) {
    double sum = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < table.columns.size(); ++i) {
      const auto& c = table.columns[i];
      if (c.dataset != ds) continue;
      check(base[i].has_value(), Errc::missing_score, table.baseline + " / " + c.header());
      check(row[i].has_value(), Errc::missing_score, method + " / " + c.header());
      check(*base[i] != 0.0, Errc::zero_baseline_score, "baseline score is 0 for " + c.header());
      sum += relative_difference(*row[i], *base[i], c.higher_is_better);
      ++n;
    }
    r.per_dataset.emplace_back(ds, sum / n);
    total += sum / n;
  }
  r.arp = method == table.baseline ? 0.0 : 100.0 * total / static_cast<double>(datasets.size());
  return r;
}

double arp(const ScoreTable& table, const std::string& method) { return arp_report(table, method).arp; }

std::vector<ARPReport> arp_all(const ScoreTable& table) {
  std::vector<ARPReport> out;
  for (const auto& m : table.methods) out.push_back(arp_report(table, m));
  return out;
}

void to_json(nlohmann::json& j, const ARPReport& r) {
  auto per = nlohmann::json::object();
  for (const auto& [ds, v] : r.per_dataset) per[ds] = v;
  j = nlohmann::json{{"method", r.method}, {"arp", r.arp}, {"relative_difference", per}};
}

void write_arp_csv(const fs::path& path, const std::vector<ARPReport>& reports) {
  auto out = open_out(path);
  out << "method,arp";
  if (!reports.empty())
    for (const auto& [ds, v] : reports.front().per_dataset) out << ',' << csv_field(ds);
  out << '\n';
  for (const auto& r : reports) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", r.arp);
    out << csv_field(r.method) << ',' << buf;
    for (const auto& [ds, v] : r.per_dataset) out << ',' << fmt_num(100.0 * v);
    out << '\n';
  }
}

ScoreTable results_table(const std::vector<MetricResult>& results, const std::string& baseline, bool strict) {
  // dataset -> (kind, metric names) fixed by the first result seen
  std::map<std::string, std::pair<TaskKind, std::vector<std::string>>> layout;
  std::vector<std::string> dataset_order, method_order;
  std::map<std::pair<std::string, std::string>, std::map<std::string, std::pair<double, int>>> sums;
  for (const auto& r : results) {
    std::vector<std::string> names;
    for (const auto& [k, v] : r.scores) names.push_back(k);
    auto it = layout.find(r.dataset);
    if (it == layout.end()) {
      layout.emplace(r.dataset, std::pair{r.kind, names});
      dataset_order.push_back(r.dataset);
    } else {
      check(it->second.first == r.kind, Errc::inconsistent_columns,
            r.method + " reports " + r.dataset + " as " + to_string(r.kind) + ", others as " +
                to_string(it->second.first));
      check(it->second.second == names, Errc::inconsistent_columns,
            r.method + " reports a different metric set for " + r.dataset);
    }
    if (std::find(method_order.begin(), method_order.end(), r.method) == method_order.end())
      method_order.push_back(r.method);
    auto& cell = sums[{r.method, r.dataset}];
    for (const auto& [k, v] : r.scores) {
      cell[k].first += v;
      cell[k].second += 1;
    }
  }
  check(std::find(method_order.begin(), method_order.end(), baseline) != method_order.end(), Errc::missing_baseline,
        "no results for baseline '" + baseline + "'");

  ScoreTable t;
  t.baseline = baseline;
  for (const auto& ds : dataset_order)
    for (const auto& m : layout.at(ds).second) t.columns.push_back({ds, m, true});
  // baseline first, then first-appearance order
  std::stable_partition(method_order.begin(), method_order.end(), [&](const auto& m) { return m == baseline; });
  for (const auto& m : method_order) {
    std::vector<std::optional<double>> row;
    for (const auto& c : t.columns) {
      auto it = sums.find({m, c.dataset});
      if (it == sums.end())
        row.emplace_back();
      else {
        const auto& [s, n] = it->second.at(c.metric);
        row.emplace_back(s / n);
      }
    }
    t.add_row(m, std::move(row));
  }
  if (strict) {
    const auto missing = t.missing_cells();
    if (!missing.empty()) {
      std::string msg = std::to_string(missing.size()) + " missing cell(s):";
      for (const auto& c : missing) msg += "\n  " + c;
      fail(Errc::missing_score, msg);
    }
  }
  t.validate();
  return t;
}

ScoreTable build_results_table(const fs::path& run_dir, const std::string& baseline, bool strict) {
  check(fs::is_directory(run_dir), Errc::empty_run_directory, run_dir.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(run_dir))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<MetricResult> results;
  for (const auto& f : files) {
    std::ifstream in(f);
    const auto j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("method") || !j.contains("dataset") || !j.contains("scores"))
      continue;
    results.push_back(j.get<MetricResult>());
  }
  check(!results.empty(), Errc::empty_run_directory, "no metric results under " + run_dir.string());
  return results_table(results, baseline, strict);
}

void to_json(nlohmann::json& j, const SuiteTask& t) { j = nlohmann::json{{"spec", t.spec}, {"manifest", t.manifest.string()}}; }

void from_json(const nlohmann::json& j, SuiteTask& t) {
  t.spec = j.at("spec").get<TaskSpec>();
  t.manifest = j.at("manifest").get<std::string>();
}

std::vector<MetricResult> run_downstream_suite(const Encoder<float>& init, const std::vector<SuiteTask>& tasks,
                                               const std::vector<std::uint64_t>& seeds, const std::string& method,
                                               const fs::path& out_dir) {
  std::vector<MetricResult> out;
  for (const auto& task : tasks) {
    const TaskDataset data = load_task_dataset(load_manifest(task.manifest), task.spec.kind, task.spec.dataset);
    for (const auto seed : seeds) {
      TaskSpec spec = task.spec;
      spec.seed = seed;
      auto result = finetune(init, spec, data, method);
      if (!out_dir.empty()) {
        auto f = open_out(out_dir / method / (spec.dataset + "-seed" + std::to_string(seed) + ".json"));
        f << nlohmann::json(result.metrics).dump(2) << '\n';
      }
      out.push_back(std::move(result.metrics));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string to_string(AblationAxis a) {
  switch (a) {
    case AblationAxis::stage: return "stage";
    case AblationAxis::student_init: return "student-init";
    case AblationAxis::objective: return "objective";
    case AblationAxis::input_mode: return "input-mode";
  }
  return "stage";
}

namespace {

AblationAxis axis_from_string(const std::string& s) {
  for (auto a : {AblationAxis::stage, AblationAxis::student_init, AblationAxis::objective, AblationAxis::input_mode})
    if (to_string(a) == s) return a;
  fail(Errc::plan_invalid, "unknown ablation axis '" + s + "'");
}

}  // namespace

std::string AblationCell::key() const {
  // distillation stage and input mode are inert without a teacher objective
  const bool distills = objective != Objective::mim_only;
  return "L" + std::to_string(distills || student_init == StudentInit::teacher_checkpoint ? stage : 0) + "-" +
         to_string(student_init) + "-" + to_string(objective) + "-" +
         (distills ? to_string(input_mode) : to_string(InputMode::same_image));
}

std::vector<AblationRow> studied_ablation_rows(int default_stage) {
  const AblationCell def{"default", default_stage, StudentInit::random, Objective::multi, InputMode::same_image};
  std::vector<AblationRow> rows;
  for (int s = 1; s <= 4; ++s) {
    AblationCell c = def;
    c.stage = s;
    c.name = s == default_stage ? "default" : "stage-" + std::to_string(s);
    rows.push_back({AblationAxis::stage, "Stage " + std::to_string(s), c});
  }
  AblationCell both = def;
  both.name = "init-teacher";
  both.student_init = StudentInit::teacher_checkpoint;
  rows.push_back({AblationAxis::student_init, "Random init", def});
  rows.push_back({AblationAxis::student_init, "Both init", both});
  AblationCell no_teacher = def, no_mim = def;
  no_teacher.name = "mim-only";
  no_teacher.objective = Objective::mim_only;
  no_mim.name = "distill-only";
  no_mim.objective = Objective::distill_only;
  rows.push_back({AblationAxis::objective, "w/o teacher", no_teacher});
  rows.push_back({AblationAxis::objective, "w/o MIM", no_mim});
  rows.push_back({AblationAxis::objective, "multi-objective", def});
  AblationCell tp = def;
  tp.name = "temporal-pair";
  tp.input_mode = InputMode::temporal_pair;
  rows.push_back({AblationAxis::input_mode, "TP", tp});
  rows.push_back({AblationAxis::input_mode, "SI", def});
  return rows;
}

std::vector<AblationRow> full_ablation_grid(int num_stages) {
  std::vector<AblationRow> rows;
  for (int s = 1; s <= num_stages; ++s)
    for (auto init : {StudentInit::random, StudentInit::teacher_checkpoint})
      for (auto obj : {Objective::multi, Objective::mim_only, Objective::distill_only})
        for (auto mode : {InputMode::same_image, InputMode::temporal_pair}) {
          AblationCell c{"", s, init, obj, mode};
          c.name = c.key();
          rows.push_back({AblationAxis::stage, c.name, c});
        }
  return rows;
}

void AblationPlan::validate() const {
  auto need = [](bool ok, const std::string& what) { check(ok, Errc::plan_invalid, what); };
  need(!rows.empty(), "ablation plan has no rows");
  need(!tasks.empty(), "ablation plan has no downstream tasks");
  need(!seeds.empty(), "ablation plan has no seeds");
  need(!pretrain_manifest.empty(), "ablation plan has no pretraining manifest");
  need(!pretrain.distill.teacher_checkpoint.empty(), "ablation plan needs distill.teacher_checkpoint");
  std::set<std::string> datasets;
  for (const auto& t : tasks) need(datasets.insert(t.spec.dataset).second, "duplicate task dataset " + t.spec.dataset);
  std::map<std::string, std::string> names;
  for (const auto& r : rows) {
    need(!r.cell.name.empty(), "ablation cell without a name");
    need(r.cell.stage >= 1 && r.cell.stage <= pretrain.encoder.num_stages(),
         r.cell.name + ": stage " + std::to_string(r.cell.stage) + " outside 1.." +
             std::to_string(pretrain.encoder.num_stages()));
    need(r.cell.name != baseline, "cell name collides with the baseline name");
    auto [it, fresh] = names.emplace(r.cell.name, r.cell.key());
    need(fresh || it->second == r.cell.key(), "cell name '" + r.cell.name + "' used for two configurations");
  }
  try {
    for (const auto& r : rows) {
      TrainConfig c = pretrain;
      c.distill.stage = r.cell.stage;
      c.student_init = r.cell.student_init;
      c.objective = r.cell.objective;
      c.distill.input_mode = r.cell.input_mode;
      c.validate();
    }
  } catch (const Error& e) {
    fail(Errc::plan_invalid, e.what());
  }
}

void to_json(nlohmann::json& j, const AblationPlan& p) {
  auto rows = nlohmann::json::array();
  for (const auto& r : p.rows)
    rows.push_back({{"axis", to_string(r.axis)},
                    {"label", r.label},
                    {"name", r.cell.name},
                    {"stage", r.cell.stage},
                    {"student_init", to_string(r.cell.student_init)},
                    {"objective", to_string(r.cell.objective)},
                    {"input_mode", to_string(r.cell.input_mode)}});
  j = nlohmann::json{{"pretrain", p.pretrain},
                     {"pretrain_manifest", p.pretrain_manifest.string()},
                     {"tasks", p.tasks},
                     {"seeds", p.seeds},
                     {"rows", rows},
                     {"baseline_from_teacher", p.baseline_from_teacher},
                     {"baseline", p.baseline}};
}

void from_json(const nlohmann::json& j, AblationPlan& p) {
  p = AblationPlan{};
  if (j.contains("pretrain")) p.pretrain = j["pretrain"].get<TrainConfig>();
  p.pretrain_manifest = j.value("pretrain_manifest", std::string());
  if (j.contains("tasks")) p.tasks = j["tasks"].get<std::vector<SuiteTask>>();
  p.seeds = j.value("seeds", std::vector<std::uint64_t>{0});
  p.baseline_from_teacher = j.value("baseline_from_teacher", true);
  p.baseline = j.value("baseline", std::string("baseline"));
  const auto rows = j.value("rows", nlohmann::json("studied"));
  if (rows.is_string()) {
    const auto kind = rows.get<std::string>();
    if (kind == "studied")
      p.rows = studied_ablation_rows(p.pretrain.distill.stage);
    else if (kind == "full")
      p.rows = full_ablation_grid(p.pretrain.encoder.num_stages());
    else
      fail(Errc::plan_invalid, "rows must be \"studied\", \"full\" or a list");
    return;
  }
  for (const auto& r : rows) {
    AblationRow row;
    row.axis = axis_from_string(r.at("axis").get<std::string>());
    row.cell.stage = r.value("stage", p.pretrain.distill.stage);
    row.cell.student_init = student_init_from_string(r.value("student_init", std::string("random")));
    row.cell.objective = objective_from_string(r.value("objective", std::string("multi")));
    row.cell.input_mode = input_mode_from_string(r.value("input_mode", std::string("SI")));
    row.cell.name = r.value("name", row.cell.key());
    row.label = r.value("label", row.cell.name);
    p.rows.push_back(row);
  }
}

AblationResult run_ablation(const AblationPlan& plan, const fs::path& out_dir, const AblationProgress& progress) {
  plan.validate();
  auto say = [&](const std::string& m) {
    if (progress) progress(m);
  };
  const DatasetManifest manifest = load_manifest(plan.pretrain_manifest);
  fs::create_directories(out_dir);
  const fs::path results_dir = out_dir / "results";

  std::vector<MetricResult> results;
  {
    say("baseline: finetuning " + std::string(plan.baseline_from_teacher ? "teacher checkpoint" : "random init"));
    const Encoder<float> base = plan.baseline_from_teacher
                                    ? load_encoder<float>(plan.pretrain.distill.teacher_checkpoint)
                                    : Encoder<float>(plan.pretrain.encoder, Rng(plan.pretrain.seed).fork(7).next());
    auto r = run_downstream_suite(base, plan.tasks, plan.seeds, plan.baseline, results_dir);
    results.insert(results.end(), r.begin(), r.end());
  }

  std::map<std::string, std::string> key_to_name;
  std::map<std::string, fs::path> key_to_dir;
  for (const auto& row : plan.rows) {
    const auto key = row.cell.key();
    if (key_to_name.count(key)) continue;
    key_to_name[key] = row.cell.name;
    TrainConfig cfg = plan.pretrain;
    cfg.distill.stage = row.cell.stage;
    cfg.student_init = row.cell.student_init;
    cfg.objective = row.cell.objective;
    cfg.distill.input_mode = row.cell.input_mode;
    const fs::path dir = out_dir / "cells" / row.cell.name;
    key_to_dir[key] = dir;
    say("pretraining " + row.cell.name + " (" + key + ")");
    const auto pre = run_pretraining(cfg, manifest, dir);
    {
      auto f = open_out(dir / "pretrain_config.json");
      f << nlohmann::json(cfg).dump(2) << '\n';
    }
    say("finetuning " + row.cell.name);
    auto r = run_downstream_suite(load_encoder<float>(pre.checkpoint), plan.tasks, plan.seeds, row.cell.name,
                                  results_dir);
    results.insert(results.end(), r.begin(), r.end());
  }

  AblationResult out;
  out.table = results_table(results, plan.baseline, true);
  out.scores_csv = out_dir / "scores.csv";
  write_score_table(out.scores_csv, out.table);
  for (const auto& row : plan.rows) {
    const auto key = row.cell.key();
    out.rows.push_back({row, arp_report(out.table, key_to_name.at(key)), key_to_dir.at(key)});
  }

  out.summary_csv = out_dir / "summary.csv";
  {
    auto f = open_out(out.summary_csv);
    f << "axis,label,cell,stage,student_init,objective,input_mode,arp";
    const auto datasets = out.table.datasets();
    for (const auto& ds : datasets) f << ',' << csv_field(ds);
    f << '\n';
    for (const auto& r : out.rows) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.4f", r.report.arp);
      f << to_string(r.row.axis) << ',' << csv_field(r.row.label) << ',' << csv_field(r.row.cell.name) << ','
        << r.row.cell.stage << ',' << to_string(r.row.cell.student_init) << ',' << to_string(r.row.cell.objective)
        << ',' << to_string(r.row.cell.input_mode) << ',' << buf;
      for (const auto& [ds, v] : r.report.per_dataset) f << ',' << fmt_num(100.0 * v);
      f << '\n';
    }
  }
  out.summary_json = out_dir / "summary.json";
  {
    auto rows = nlohmann::json::array();
    for (const auto& r : out.rows)
      rows.push_back({{"axis", to_string(r.row.axis)},
                      {"label", r.row.label},
                      {"cell", r.row.cell.name},
                      {"run_dir", r.run_dir.string()},
                      {"report", r.report}});
    auto f = open_out(out.summary_json);
    f << nlohmann::json{{"baseline", plan.baseline}, {"plan", plan}, {"rows", rows}}.dump(2) << '\n';
  }
  return out;
}

}  // namespace gfm
