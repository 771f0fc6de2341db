#include "cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <functional>
#include <map>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "gfm/checkpoint.hpp"
#include "gfm/error.hpp"
#include "gfm/evalkit.hpp"
#include "layered_config.hpp"
#include "report.hpp"

namespace gfm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunContext {
  fs::path dir;
  std::ostream& out;
  json artifacts = json::object();
  json ledger;
  json extra = json::object();

  void artifact(const std::string& name, const fs::path& p) { artifacts[name] = p.string(); }
};

using VerbFn = std::function<void(const json& cfg, RunContext& ctx)>;

struct Verb {
  std::string name;
  std::string help;
  json defaults;
  std::string seed_key;  // dotted path --seed writes to
  // flag -> (dotted config path, description); multi flags collect into arrays
  std::vector<std::tuple<std::string, std::string, std::string>> flags;
  std::vector<std::tuple<std::string, std::string, std::string>> multi_flags;
  VerbFn fn;
};

bool is_config_error(Errc c) {
  return c == Errc::invalid_config || c == Errc::parse_error || c == Errc::plan_invalid ||
         c == Errc::ratio_out_of_range;
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
  return buf;
}

std::string required_path(const json& cfg, const std::string& key) {
  const auto v = cfg.value(key, std::string());
  check(!v.empty(), Errc::invalid_config, "'" + key + "' is required (--" + key + " or config file)");
  return v;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path);
  check(static_cast<bool>(os), Errc::io_error, "cannot write " + path.string());
  os << j.dump(2) << '\n';
}

void report_if_possible(RunContext& ctx) {
  const auto r = emit_report(ctx.dir);
  for (std::size_t i = 0; i < r.plots.size(); ++i) ctx.artifact("plot_" + std::to_string(i), r.plots[i]);
  ctx.artifact("report", r.markdown);
}

TrainConfig desk_train_config() {
  TrainConfig c;
  c.encoder = EncoderConfig::tiny();
  c.epochs = 10;
  c.batch_size = 32;
  c.base_lr = 1e-3;
  c.scale_lr = false;
  c.warmup_epochs = 1;
  return c;
}

// --- verbs ----------------------------------------------------------------

void do_synth(const json& cfg, RunContext& ctx) {
  const auto spec = cfg.get<SynthSpec>();
  spec.validate();
  const auto seed = cfg.value("seed", std::uint64_t{0});
  const auto corpus = synth_proxy_generate(spec, seed, ctx.dir);
  ctx.artifact("pretrain_manifest", corpus.pretrain_manifest);
  for (auto [name, p] : {std::pair{"classification", corpus.classification}, {"multilabel", corpus.multilabel},
                         {"segmentation", corpus.segmentation}, {"change", corpus.change},
                         {"superres", corpus.superres}})
    if (p) ctx.artifact(std::string(name) + "_manifest", *p);
  ctx.out << "wrote " << corpus.pretrain.records.size() << " pretraining tiles to " << ctx.dir.string() << '\n';
}

void do_pretrain(const json& cfg, RunContext& ctx) {
  const auto train = cfg.get<TrainConfig>();
  train.validate();
  const auto manifest = load_manifest(required_path(cfg, "manifest"));
  const auto res = run_pretraining(train, manifest, ctx.dir, [&](int epoch, long step, const LossBreakdown& lb) {
    if (step % 50 == 0)
      ctx.out << "epoch " << epoch << " step " << step << " loss " << lb.total << " lr " << lb.lr << '\n';
  });
  for (const auto& e : res.curve)
    ctx.out << "epoch " << e.epoch << ": total " << e.total << (e.l_mim ? " L_MIM " + std::to_string(*e.l_mim) : "")
            << (e.l_feat ? " L_feat " + std::to_string(*e.l_feat) : "") << '\n';
  ctx.artifact("checkpoint", res.checkpoint);
  ctx.artifact("loss_csv", res.loss_csv);
  ctx.artifact("ledger_csv", res.ledger_csv);
  ctx.ledger = res.ledger;
  ctx.extra["steps"] = res.steps;
  ctx.extra["student_hash"] = res.student_hash;
  if (res.teacher_hash_before) {
    ctx.extra["teacher_hash_before"] = *res.teacher_hash_before;
    ctx.extra["teacher_hash_after"] = *res.teacher_hash_after;
  }
  report_if_possible(ctx);
}

void do_finetune(const json& cfg, RunContext& ctx) {
  auto spec = cfg.at("task").get<TaskSpec>();
  spec.seed = cfg.value("seed", spec.seed);
  spec.validate();
  ctx.out << "task (resolved): " << json(spec).dump() << '\n';
  const auto manifest = load_manifest(required_path(cfg, "manifest"));
  const auto data = load_task_dataset(manifest, spec.kind, spec.dataset);
  const auto ckpt = cfg.value("checkpoint", std::string());
  const Encoder<float> init = ckpt.empty() ? Encoder<float>(cfg.at("encoder").get<EncoderConfig>(),
                                                             Rng(spec.seed).fork(7).next())
                                           : load_encoder<float>(ckpt);
  const auto method = cfg.value("method", std::string("model"));
  const auto started = std::chrono::steady_clock::now();
  auto res = finetune(init, spec, data, method);
  ctx.ledger = make_ledger(std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count());
  const auto metrics_path = ctx.dir / "metrics.json";
  write_json(metrics_path, res.metrics);
  save_task_model(ctx.dir / "model.bin", res.model);
  Predictions preds;
  evaluate(res.model, data, method, &preds);
  const auto written = write_predictions(ctx.dir / "predictions", preds);
  ctx.extra["predictions"] = written.size();
  ctx.artifact("predictions", ctx.dir / "predictions");
  ctx.artifact("metrics", metrics_path);
  ctx.artifact("model", ctx.dir / "model.bin");
  for (const auto& [k, v] : res.metrics.scores) ctx.out << spec.dataset << ' ' << k << " = " << v << '\n';
}

void do_evaluate(const json& cfg, RunContext& ctx) {
  const auto model = load_task_model(required_path(cfg, "model"));
  const auto manifest = load_manifest(required_path(cfg, "manifest"));
  const auto data = load_task_dataset(manifest, model.spec().kind, cfg.value("dataset", model.spec().dataset));
  Predictions preds;
  const auto r = evaluate(model, data, cfg.value("method", std::string("model")), &preds);
  write_json(ctx.dir / "metrics.json", r);
  write_predictions(ctx.dir / "predictions", preds);
  ctx.artifact("predictions", ctx.dir / "predictions");
  ctx.artifact("metrics", ctx.dir / "metrics.json");
  for (const auto& [k, v] : r.scores) ctx.out << r.dataset << ' ' << k << " = " << v << '\n';
}

void do_arp(const json& cfg, RunContext& ctx) {
  const auto baseline = cfg.value("baseline", std::string(kDefaultBaseline));
  const auto scores = cfg.value("scores", std::string());
  const auto run_dir = cfg.value("run_dir", std::string());
  check(scores.empty() != run_dir.empty(), Errc::invalid_config, "give exactly one of --scores or --run-dir");
  const ScoreTable table = scores.empty() ? build_results_table(run_dir, baseline) : load_score_table(scores, baseline);
  const auto method = cfg.value("method", std::string());
  const auto reports = method.empty() ? arp_all(table) : std::vector<ARPReport>{arp_report(table, method)};
  write_arp_csv(ctx.dir / "arp.csv", reports);
  write_json(ctx.dir / "arp.json", json{{"baseline", baseline}, {"reports", reports}});
  ctx.artifact("arp_csv", ctx.dir / "arp.csv");
  ctx.artifact("arp_json", ctx.dir / "arp.json");
  for (const auto& r : reports) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%8.2f", r.arp);
    ctx.out << buf << "  " << r.method << '\n';
  }
  report_if_possible(ctx);
}

void do_entropy(const json& cfg, RunContext& ctx) {
  const auto manifests = cfg.value("manifests", std::vector<std::string>{});
  check(!manifests.empty(), Errc::invalid_config, "give at least one --manifest");
  const auto sample = cfg.value("sample", std::size_t{0});
  const auto seed = cfg.value("seed", std::uint64_t{0});
  std::ofstream csv(ctx.dir / "entropy.csv");
  csv << "manifest,sample_size,mean_entropy_bits\n";
  json rows = json::array();
  for (const auto& path : manifests) {
    const auto m = load_manifest(path);
    Rng rng(seed);
    const auto rep = dataset_entropy_report(m, sample == 0 ? m.records.size() : sample, rng);
    csv << path << ',' << rep.sample_size << ',' << rep.mean_entropy << '\n';
    rows.push_back({{"manifest", path}, {"sample_size", rep.sample_size}, {"mean_entropy_bits", rep.mean_entropy}});
    ctx.out << rep.mean_entropy << " bits  (" << rep.sample_size << " images)  " << path << '\n';
  }
  write_json(ctx.dir / "entropy.json", rows);
  ctx.artifact("entropy_csv", ctx.dir / "entropy.csv");
  ctx.artifact("entropy_json", ctx.dir / "entropy.json");
}

void do_carbon(const json& cfg, RunContext& ctx) {
  const auto hours = cfg.value("hours", std::vector<double>{});
  check(!hours.empty(), Errc::invalid_config, "give at least one --hours value");
  const double power = cfg.value("power_kw", 0.25), intensity = cfg.value("intensity", 0.57);
  std::ofstream csv(ctx.dir / "carbon.csv");
  csv << "device_hours,device_power_kw,carbon_intensity_kg_per_kwh,estimated_kg_co2\n";
  json rows = json::array();
  for (const double h : hours) {
    const double kg = carbon_estimate(h, power, intensity);
    char buf[128];
    std::snprintf(buf, sizeof buf, "%g,%g,%g,%.4f", h, power, intensity, kg);
    csv << buf << '\n';
    std::snprintf(buf, sizeof buf, "%10.2f h  ->  %8.2f kg CO2-eq", h, kg);
    ctx.out << buf << '\n';
    rows.push_back({{"device_hours", h}, {"estimated_kg_co2", kg}});
  }
  write_json(ctx.dir / "carbon.json", json{{"device_power_kw", power}, {"carbon_intensity", intensity}, {"rows", rows}});
  ctx.artifact("carbon_csv", ctx.dir / "carbon.csv");
  ctx.artifact("carbon_json", ctx.dir / "carbon.json");
}

void do_ablate(const json& cfg, RunContext& ctx) {
  const auto plan = cfg.get<AblationPlan>();
  const auto res = run_ablation(plan, ctx.dir, [&](const std::string& m) { ctx.out << m << '\n'; });
  for (const auto& r : res.rows) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-14s %-18s %8.2f", to_string(r.row.axis).c_str(), r.row.label.c_str(), r.report.arp);
    ctx.out << buf << '\n';
  }
  ctx.artifact("summary_csv", res.summary_csv);
  ctx.artifact("summary_json", res.summary_json);
  ctx.artifact("scores_csv", res.scores_csv);
  report_if_possible(ctx);
}

std::vector<Verb> verbs() {
  json synth_defaults = SynthSpec{};
  synth_defaults["seed"] = 0;
  json pretrain_defaults = desk_train_config();
  pretrain_defaults["manifest"] = "";
  AblationPlan plan;
  plan.pretrain = desk_train_config();
  json ablate_defaults = plan;
  ablate_defaults["rows"] = "studied";

  return {
      {"synth", "Generate a procedural proxy corpus with per-task manifests", synth_defaults, "seed",
       {{"--style", "style", "geo | natural"},
        {"--tile-size", "tile_size", "tile side in pixels"},
        {"--complexity", "complexity", "texture amount in [0, 1]"},
        {"--unlabeled", "unlabeled", "pretraining tiles"},
        {"--temporal-pairs", "temporal_pairs", "co-located pretraining pairs"},
        {"--classification", "classification", "classification samples"},
        {"--multilabel", "multilabel", "multilabel samples"},
        {"--segmentation", "segmentation", "segmentation samples"},
        {"--change-pairs", "change_pairs", "change detection pairs"},
        {"--superres", "superres", "super-resolution samples"}},
       {},
       do_synth},
      {"pretrain", "Continual pretraining (MIM + teacher feature distillation)", pretrain_defaults, "seed",
       {{"--manifest", "manifest", "pretraining manifest (JSONL)"},
        {"--epochs", "epochs", "training epochs"},
        {"--batch-size", "batch_size", "batch size"},
        {"--lr", "base_lr", "base learning rate"},
        {"--objective", "objective", "multi | mim-only | distill-only"},
        {"--student-init", "student_init", "random | teacher-checkpoint"},
        {"--teacher", "distill.teacher_checkpoint", "teacher checkpoint"},
        {"--stage", "distill.stage", "distilled stage L"},
        {"--input-mode", "distill.input_mode", "SI | TP"}},
       {},
       do_pretrain},
      {"finetune", "Finetune an encoder on a downstream task and evaluate",
       json{{"task", {{"kind", "classification"}}},
            {"manifest", ""},
            {"checkpoint", ""},
            {"encoder", EncoderConfig::tiny()},
            {"method", "model"},
            {"seed", 0}},
       "seed",
       {{"--task", "task.kind", "classification | multilabel | segmentation | change-detection | super-resolution"},
        {"--manifest", "manifest", "task manifest (JSONL, split field selects train/val)"},
        {"--checkpoint", "checkpoint", "pretrained encoder; empty = random init"},
        {"--method", "method", "method name recorded with the scores"},
        {"--dataset", "task.dataset", "dataset name recorded with the scores"},
        {"--iterations", "task.schedule.iterations", "finetuning iterations"}},
       {},
       do_finetune},
      {"evaluate", "Evaluate a finetuned task model on a manifest's val split",
       json{{"model", ""}, {"manifest", ""}, {"method", "model"}},
       "",
       {{"--model", "model", "finetuned model (model.bin)"},
        {"--manifest", "manifest", "task manifest"},
        {"--method", "method", "method name recorded with the scores"},
        {"--dataset", "dataset", "dataset name recorded with the scores"}},
       {},
       do_evaluate},
      {"arp", "Average relative performance against a baseline",
       json{{"scores", ""}, {"run_dir", ""}, {"baseline", kDefaultBaseline}, {"method", ""}},
       "",
       {{"--scores", "scores", "score table CSV"},
        {"--run-dir", "run_dir", "directory of metric JSON files"},
        {"--baseline", "baseline", "baseline method row"},
        {"--method", "method", "single method (default: all)"}},
       {},
       do_arp},
      {"entropy", "Mean image entropy of one or more manifests",
       json{{"manifests", json::array()}, {"sample", 0}, {"seed", 0}},
       "seed",
       {{"--sample", "sample", "images sampled per manifest (0 = all)"}},
       {{"--manifest", "manifests", "manifest to analyse (repeatable)"}},
       do_entropy},
      {"carbon", "Estimated kg CO2-eq from device hours",
       json{{"hours", json::array()}, {"power_kw", 0.25}, {"intensity", 0.57}},
       "",
       {{"--power", "power_kw", "device power draw in kW"},
        {"--intensity", "intensity", "kg CO2-eq per kWh"}},
       {{"--hours", "hours", "device hours (repeatable)"}},
       do_carbon},
      {"ablate", "Run the ablation plan and summarise ARP per configuration", ablate_defaults, "pretrain.seed",
       {{"--teacher", "pretrain.distill.teacher_checkpoint", "teacher checkpoint"},
        {"--manifest", "pretrain_manifest", "pretraining manifest"},
        {"--epochs", "pretrain.epochs", "pretraining epochs per cell"}},
       {},
       do_ablate},
  };
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  auto table = verbs();
  CLI::App app{"Geospatial continual pretraining toolkit", "gfm"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every verb");

  struct Parsed {
    std::string config, out, seed;
    std::vector<std::string> sets;
    std::map<std::string, std::string> flags;
    std::map<std::string, std::vector<std::string>> multi;
  };
  std::map<std::string, Parsed> parsed;
  std::map<std::string, CLI::App*> subs;
  for (const auto& v : table) {
    auto* sub = app.add_subcommand(v.name, v.help);
    subs[v.name] = sub;
    auto& p = parsed[v.name];
    sub->add_option("--config", p.config, "JSON config file or a previous run-summary.json");
    sub->add_option("--out", p.out, std::string("run directory (default: $") + kOutputRootEnv + "/<verb>-<time>)");
    sub->add_option("--set", p.sets, "override any config key: dotted.key=value");
    if (!v.seed_key.empty()) sub->add_option("--seed", p.seed, "random seed");
    for (const auto& [flag, key, help] : v.flags) sub->add_option(flag, p.flags[key], help);
    for (const auto& [flag, key, help] : v.multi_flags) sub->add_option(flag, p.multi[key], help);
  }

  if (!args.empty() && !args[0].empty() && args[0][0] != '-' && !subs.count(args[0])) {
    err << "error: unknown verb '" << args[0] << "'\n\n" << app.help();
    return 2;
  }

  std::vector<std::string> argv_store{"gfm"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  const Verb* verb = nullptr;
  for (const auto& v : table)
    if (subs[v.name]->parsed()) verb = &v;
  auto& p = parsed[verb->name];
  auto* sub = subs[verb->name];

  fs::path dir;
  try {
    LayeredConfig cfg(verb->defaults);
    if (!p.config.empty()) cfg.apply_file(p.config);
    for (const auto& [flag, key, help] : verb->flags)
      if (sub->count(flag) > 0) cfg.set_flag(key, p.flags[key]);
    for (const auto& [flag, key, help] : verb->multi_flags)
      if (sub->count(flag) > 0) {
        json arr = json::array();
        for (const auto& raw : p.multi[key]) {
          auto v = json::parse(raw, nullptr, false);
          arr.push_back(v.is_discarded() ? json(raw) : v);
        }
        cfg.set_flag_json(key, arr);
      }
    if (!p.seed.empty()) cfg.set_flag(verb->seed_key, p.seed);
    for (const auto& s : p.sets) {
      const auto eq = s.find('=');
      check(eq != std::string::npos && eq > 0, Errc::invalid_config, "--set expects key=value, got '" + s + "'");
      cfg.set_flag(s.substr(0, eq), s.substr(eq + 1));
    }

    if (!p.out.empty()) {
      dir = p.out;
    } else {
      const char* root = std::getenv(kOutputRootEnv);
      dir = fs::path(root && *root ? root : "runs") / (verb->name + "-" + timestamp());
    }
    std::error_code ec;
    fs::create_directories(dir, ec);
    check(!ec && fs::is_directory(dir), Errc::unwritable_destination, "cannot create run directory " + dir.string());

    out << "gfm " << verb->name << "  ->  " << dir.string() << "\nconfig (flag > file > default):\n";
    cfg.print(out);

    RunContext ctx{dir, out, json::object(), json(), json::object()};
    const auto started = std::chrono::steady_clock::now();
    json summary{{"verb", verb->name}, {"argv", args}, {"config", cfg.value()}, {"config_sources", cfg.sources()},
                 {"config_file", cfg.file()}, {"started_utc", timestamp()}};
    if (!verb->seed_key.empty())
      summary["seed"] = cfg.value()[nlohmann::json::json_pointer("/" + std::string(verb->seed_key == "pretrain.seed"
                                                                                        ? "pretrain/seed"
                                                                                        : verb->seed_key))];
    try {
      verb->fn(cfg.value(), ctx);
    } catch (...) {
      summary["status"] = "failed";
      summary["artifacts"] = ctx.artifacts;
      write_json(dir / "run-summary.json", summary);
      throw;
    }
    summary["status"] = "ok";
    summary["elapsed_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    summary["ledger"] = ctx.ledger;
    summary["artifacts"] = ctx.artifacts;
    summary["details"] = ctx.extra;
    summary["relaunch"] = {"gfm", verb->name, "--config", (dir / "run-summary.json").string()};
    write_json(dir / "run-summary.json", summary);
    out << "run summary: " << (dir / "run-summary.json").string() << '\n';
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return is_config_error(e.code()) ? 2 : 1;
  } catch (const json::exception& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace gfm::cli
