// Runs every acceptance criterion and prints one PASS/FAIL line per criterion.
// Usage: gfm_acceptance [criterion ...]   (default: all)
// Exit status is non-zero when any selected criterion fails.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "gfm/checkpoint.hpp"
#include "gfm/distill.hpp"
#include "gfm/error.hpp"
#include "gfm/evalkit.hpp"
#include "gfm/metrics.hpp"
#include "gfm/mim.hpp"
#include "gfm/trainer.hpp"
#include "test_support.hpp"

using namespace gfm;
namespace fs = std::filesystem;
using gfm::test::random_tensor;
using gfm::test::TempDir;

namespace {

struct Check {
  std::ostringstream detail;
  bool ok = true;

  void expect(bool cond, const std::string& what) {
    if (!cond) {
      if (!ok) detail << "; ";
      detail << what;
      ok = false;
    }
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// --- 1 ----------------------------------------------------------------------

void arp_oracle(Check& c) {
  const auto table = load_score_table(fs::path(GFM_SOURCE_DIR) / "data" / "downstream_scores.csv");
  const std::vector<std::pair<std::string, double>> expected{{"GFM", 3.31},
                                                             {"GeoPile", 0.92},
                                                             {"GeoPile (continual)", 1.24},
                                                             {"GeoPile (continual 800ep)", 1.45},
                                                             {"Sentinel-2", -5.83}};
  for (const auto& [method, want] : expected) {
    const double got = arp(table, method);
    c.detail << method << ' ' << fmt("%.3f", got) << "; ";
    c.expect(std::abs(got - want) <= 0.02, method + " expected " + fmt("%.2f", want));
  }
}

// --- 2 ----------------------------------------------------------------------

void carbon_oracle(Check& c) {
  const std::vector<std::pair<double, double>> pairs{
      {155.6, 22.2}, {133.3, 19.0}, {533.2, 76.0}, {93.3, 13.3}, {768.0, 109.44}};
  for (const auto& [hours, kg] : pairs) {
    const double got = carbon_estimate(hours, 0.25, 0.57);
    c.detail << fmt("%g h", hours) << " -> " << fmt("%.2f", got) << "; ";
    c.expect(std::abs(got - kg) <= 0.1, fmt("%g h", hours) + " expected " + fmt("%.2f", kg));
  }
}

// --- 3 ----------------------------------------------------------------------

void gradient_suite(Check& c) {
  const auto cfg = EncoderConfig::tiny();
  Encoder<double> student(cfg, 1);
  Encoder<double> teacher(cfg, 2, 3);
  teacher.freeze();
  ReconstructionHead<double> head(cfg.dims.back(), cfg.image_size / cfg.stage_sides().back(), cfg.in_channels, 3);
  ProjectionHead<double> proj(cfg.dims[2], cfg.dims[2], 4);
  Rng rng(5);
  // L_MIM is an L1 loss: central differences are only valid away from
  // |G - O| = 0, so the images sit well above the head's output range
  const auto x = random_tensor<double>({2, 32, 32, 3}, rng, 2.0, 3.0);
  const auto mask = sample_mask_batch(2, static_cast<std::size_t>(cfg.mask_grid_side()), 0.6, rng);
  const auto target = teacher_feature(teacher, x, 3);
  const auto patch = static_cast<std::size_t>(cfg.mask_patch_size);
  {
    const auto g = head.forward(student.forward(ag::make_var(x), &mask).final_normed)->value;
    const auto masked = expand_mask(mask, patch, static_cast<std::size_t>(cfg.in_channels));
    double margin = 1e300;
    for (std::size_t i = 0; i < masked.size(); ++i)
      if (masked[i]) margin = std::min(margin, std::abs(g.data[i] - x.data[i]));
    c.detail << "min |G - O| " << fmt("%.2f", margin) << "; ";
  }

  auto mim = [&] {
    return mim_loss(x, head.forward(student.forward(ag::make_var(x), &mask).final_normed), mask, patch);
  };
  auto feat = [&] { return feat_loss(student.forward(ag::make_var(x), &mask).stages[2], target, proj); };
  auto total = [&] {
    const auto pyr = student.forward(ag::make_var(x), &mask);
    return total_loss(mim_loss(x, head.forward(pyr.final_normed), mask, patch), feat_loss(pyr.stages[2], target, proj));
  };
  const std::vector<std::pair<std::string, ParamSet<double>*>> groups{
      {"encoder.", &student.params()}, {"head.", &head.params()}, {"projection.", &proj.params()}};
  for (const auto& [name, fn] : std::vector<std::pair<std::string, std::function<ag::Var<double>()>>>{
           {"L_MIM", mim}, {"L_feat", feat}, {"total", total}}) {
    const auto r = test::grad_check(fn, groups, rng, 4, 1e-4);
    c.detail << name << " max rel " << fmt("%.2e", r.max_rel_error) << " over " << r.checked << "; ";
    c.expect(r.max_rel_error < 1e-4, name + " worst " + r.worst + "; ");
  }
}

// --- 4 ----------------------------------------------------------------------

void loss_laws(Check& c) {
  Rng rng(11);
  int violations = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto o = random_tensor<double>({2, 8, 8, 3}, rng);
    const auto mask = sample_mask_batch(2, 4, rng.uniform(0.1, 0.9), rng);
    const auto values = expand_mask(mask, 2, 3);
    auto g = o;
    for (std::size_t i = 0; i < g.numel(); ++i)
      if (!values[i]) g.data[i] = rng.uniform(-5, 5);
    const double zero = mim_loss(o, ag::make_var(g), mask, 2)->value[0];
    std::vector<std::size_t> masked;
    for (std::size_t i = 0; i < values.size(); ++i)
      if (values[i]) masked.push_back(i);
    g.data[masked[static_cast<std::size_t>(rng.below(masked.size()))]] += rng.uniform(1e-6, 1.0);
    auto gv = ag::make_var(g, true);
    const auto loss = mim_loss(o, gv, mask, 2);
    ag::backward(loss);
    bool unmasked_zero = true;
    for (std::size_t i = 0; i < values.size(); ++i)
      if (!values[i] && gv->grad[i] != 0.0) unmasked_zero = false;
    if (zero != 0.0 || !(loss->value[0] > 0.0) || !unmasked_zero) ++violations;
  }
  c.detail << "L_MIM zero-iff and unmasked-gradient laws on 200 instances; ";
  c.expect(violations == 0, std::to_string(violations) + " L_MIM violations");

  double lo = 1, hi = -1, worst_align = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const ProjectionHead<double> proj(6, 5, static_cast<std::uint64_t>(trial));
    const auto s = random_tensor<double>({2, 3, 3, 6}, rng, -2, 2);
    const auto t = random_tensor<double>({2, 3, 3, 5}, rng, -2, 2);
    const double v = feat_loss(ag::make_var(s), ag::make_var(t), proj)->value[0];
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    // teacher = P(student) scaled per token: perfect alignment
    auto aligned = proj.forward(ag::make_var(s))->value;
    for (std::size_t i = 0; i < aligned.numel(); ++i) aligned.data[i] *= 1.0 + static_cast<double>(i / 5 % 3);
    const double a = feat_loss(ag::make_var(s), ag::make_var(aligned), proj)->value[0];
    worst_align = std::max(worst_align, std::abs(a + 1.0));
  }
  c.detail << "L_feat range [" << fmt("%.3f", lo) << ", " << fmt("%.3f", hi) << "], alignment |L+1| "
           << fmt("%.1e", worst_align) << "; ";
  c.expect(lo >= -1.0 && hi <= 1.0, "L_feat outside [-1, 1]");
  c.expect(worst_align < 1e-12, "aligned features do not give -1");

  TempDir dir("accept4");
  save_encoder(dir / "teacher.bin", Encoder<float>(EncoderConfig::tiny(), 77));
  TrainConfig cfg;
  cfg.encoder = EncoderConfig::tiny();
  cfg.batch_size = 4;
  cfg.scale_lr = false;
  cfg.base_lr = 1e-3;
  cfg.distill.teacher_checkpoint = (dir / "teacher.bin").string();
  auto state = make_pretrain_state(cfg, 10);
  double worst_sum = 0;
  for (int step = 0; step < 10; ++step) {
    Rng br(static_cast<std::uint64_t>(step));
    const auto lb = pretrain_step(state, BranchBatch{random_tensor<float>({4, 32, 32, 3}, br), std::nullopt});
    worst_sum = std::max(worst_sum, std::abs(lb.total - (*lb.l_mim + *lb.l_feat)) / std::max(1e-12, std::abs(lb.total)));
  }
  c.detail << "total vs sum rel " << fmt("%.1e", worst_sum);
  c.expect(worst_sum <= 1e-7, "total differs from L_MIM + L_feat");
}

// --- 5 ----------------------------------------------------------------------

void freeze_and_determinism(Check& c) {
  TempDir dir("accept5");
  save_encoder(dir / "teacher.bin", Encoder<float>(EncoderConfig::tiny(), 77));
  SynthSpec spec;
  spec.unlabeled = 8;
  const auto corpus = synth_proxy_generate(spec, 3, dir / "corpus");
  TrainConfig cfg;
  cfg.encoder = EncoderConfig::tiny();
  cfg.epochs = 25;  // 8 tiles / batch 4 = 2 steps per epoch -> 50 steps
  cfg.batch_size = 4;
  cfg.base_lr = 1e-3;
  cfg.scale_lr = false;
  cfg.warmup_epochs = 1;
  cfg.seed = 9;
  cfg.distill.teacher_checkpoint = (dir / "teacher.bin").string();

  // hash after every step of a 50-step run
  const PretrainData data(corpus.pretrain, cfg.encoder);
  auto state = make_pretrain_state(cfg, 2);
  const auto teacher_hash = state.teacher->content_hash();
  int changed = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng erng = Rng(cfg.seed).fork(static_cast<std::uint64_t>(epoch));
    for (const auto& batch : data.epoch(InputMode::same_image, cfg.batch_size, cfg.augment, erng)) {
      pretrain_step(state, batch);
      changed += state.teacher->content_hash() != teacher_hash;
    }
  }
  c.detail << state.step << " steps, teacher hash changed " << changed << " times; ";
  c.expect(state.step == 50 && changed == 0, "teacher parameters moved");

  const auto a = run_pretraining(cfg, corpus.pretrain, dir / "a");
  const auto b = run_pretraining(cfg, corpus.pretrain, dir / "b");
  const bool same_ckpt = slurp(a.checkpoint) == slurp(b.checkpoint);
  const bool same_curve = slurp(a.loss_csv) == slurp(b.loss_csv);
  c.detail << "runs of " << a.steps << " steps: checkpoint " << (same_ckpt ? "identical" : "differs") << ", loss curve "
           << (same_curve ? "identical" : "differs");
  c.expect(same_ckpt && same_curve, "repeated runs differ");
  c.expect(*a.teacher_hash_before == *a.teacher_hash_after, "teacher hash changed during run_pretraining");
}

// --- 6 ----------------------------------------------------------------------

// References: confusion matrix, two-pass windowed moments, and
// precision/recall evaluated at every distinct threshold.
void metric_oracles(Check& c) {
  Rng rng(6);
  double worst_f1 = 0, worst_iou = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(4));
    std::vector<int> pred(64), truth(64);
    for (auto& v : pred) v = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
    for (auto& v : truth) v = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
    std::vector<std::vector<double>> cm(static_cast<std::size_t>(k), std::vector<double>(static_cast<std::size_t>(k)));
    for (std::size_t i = 0; i < 64; ++i) cm[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(pred[i])] += 1;
    double iou_sum = 0;
    int present = 0;
    for (int cls = 0; cls < k; ++cls) {
      const auto u = static_cast<std::size_t>(cls);
      double row = 0, col = 0;
      for (int j = 0; j < k; ++j) {
        row += cm[u][static_cast<std::size_t>(j)];
        col += cm[static_cast<std::size_t>(j)][u];
      }
      const double uni = row + col - cm[u][u];
      if (uni > 0) {
        iou_sum += cm[u][u] / uni;
        ++present;
      }
    }
    worst_iou = std::max(worst_iou, std::abs(mean_iou(pred, truth, k) - iou_sum / present));

    std::vector<int> bp(64), bt(64);
    for (std::size_t i = 0; i < 64; ++i) {
      bp[i] = pred[i] == 1;
      bt[i] = truth[i] == 1;
    }
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < 64; ++i) {
      tp += bp[i] && bt[i];
      fp += bp[i] && !bt[i];
      fn += !bp[i] && bt[i];
    }
    const double f1 = tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
    worst_f1 = std::max(worst_f1, std::abs(f1_scores(bp, bt).f1 - f1));
  }
  c.detail << "f1 " << fmt("%.1e", worst_f1) << ", mIoU " << fmt("%.1e", worst_iou) << "; ";
  c.expect(worst_f1 < 1e-12 && worst_iou < 1e-12, "f1/mIoU disagree with the confusion matrix");

  std::array<std::array<double, 11>, 11> kernel{};
  double ksum = 0;
  for (int y = 0; y < 11; ++y)
    for (int x = 0; x < 11; ++x) {
      kernel[y][x] = std::exp(-((y - 5) * (y - 5) + (x - 5) * (x - 5)) / (2 * 1.5 * 1.5));
      ksum += kernel[y][x];
    }
  double worst_psnr = 0, worst_ssim = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t ch = 1 + static_cast<std::size_t>(rng.below(3));
    std::vector<double> a(16 * 16 * ch), b(a.size());
    const double noise = rng.uniform(0.01, 0.5);
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = rng.uniform();
      b[i] = std::clamp(a[i] + rng.uniform(-noise, noise), 0.0, 1.0);
    }
    double se = 0;
    for (std::size_t i = 0; i < a.size(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
    const double ref_psnr = 10 * std::log10(1.0 / (se / static_cast<double>(a.size())));
    worst_psnr = std::max(worst_psnr, std::abs(psnr(a, b) - ref_psnr));

    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double sum = 0;
    int windows = 0;
    for (std::size_t cc = 0; cc < ch; ++cc)
      for (std::size_t y0 = 0; y0 + 11 <= 16; ++y0)
        for (std::size_t x0 = 0; x0 + 11 <= 16; ++x0) {
          auto px = [&](const std::vector<double>& im, int y, int x) {
            return im[((y0 + static_cast<std::size_t>(y)) * 16 + x0 + static_cast<std::size_t>(x)) * ch + cc];
          };
          double ma = 0, mb = 0;
          for (int y = 0; y < 11; ++y)
            for (int x = 0; x < 11; ++x) {
              ma += kernel[y][x] / ksum * px(a, y, x);
              mb += kernel[y][x] / ksum * px(b, y, x);
            }
          double va = 0, vb = 0, cov = 0;
          for (int y = 0; y < 11; ++y)
            for (int x = 0; x < 11; ++x) {
              const double w = kernel[y][x] / ksum, da = px(a, y, x) - ma, db = px(b, y, x) - mb;
              va += w * da * da;
              vb += w * db * db;
              cov += w * da * db;
            }
          sum += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
          ++windows;
        }
    worst_ssim = std::max(worst_ssim, std::abs(ssim(a, b, 16, 16, ch) - sum / windows));
  }
  c.detail << "PSNR " << fmt("%.1e", worst_psnr) << ", SSIM " << fmt("%.1e", worst_ssim) << "; ";
  c.expect(worst_psnr < 1e-9 && worst_ssim < 1e-9, "PSNR/SSIM disagree with the direct definition");

  double worst_ap = 0;
  int instances = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(rng.below(8)), k = 1 + static_cast<std::size_t>(rng.below(4));
    std::vector<double> scores(n * k);
    std::vector<int> truth(n * k);
    // coarse scores so ties occur
    for (auto& s : scores) s = static_cast<double>(rng.below(5)) / 4.0;
    for (auto& t : truth) t = rng.bernoulli(0.4);
    double sum = 0;
    int used = 0;
    for (std::size_t cls = 0; cls < k; ++cls) {
      double pos = 0;
      std::set<double> thresholds;
      for (std::size_t i = 0; i < n; ++i) {
        pos += truth[i * k + cls];
        thresholds.insert(scores[i * k + cls]);
      }
      if (pos == 0) continue;
      double ap = 0, prev_recall = 0;
      for (auto it = thresholds.rbegin(); it != thresholds.rend(); ++it) {
        double selected = 0, hits = 0;
        for (std::size_t i = 0; i < n; ++i)
          if (scores[i * k + cls] >= *it) {
            ++selected;
            hits += truth[i * k + cls];
          }
        ap += (hits / pos - prev_recall) * (hits / selected);
        prev_recall = hits / pos;
      }
      sum += ap;
      ++used;
    }
    if (used == 0) continue;
    ++instances;
    worst_ap = std::max(worst_ap, std::abs(average_precision_multilabel(scores, truth, n, k) - sum / used));
  }
  c.detail << "AP " << fmt("%.1e", worst_ap) << " over " << instances << " instances";
  c.expect(worst_ap < 1e-12, "multilabel AP disagrees with the exhaustive computation");
}

// --- 7 ----------------------------------------------------------------------

void end_to_end(Check& c) {
  TempDir dir("accept7");
  SynthSpec natural;
  natural.style = "natural";
  natural.unlabeled = 256;
  natural.complexity = 0.7;
  SynthSpec geo;
  geo.unlabeled = 256;
  geo.classification = 160;
  geo.multilabel = 160;
  geo.segmentation = 96;
  const auto nc = synth_proxy_generate(natural, 1, dir / "natural");
  const auto gc = synth_proxy_generate(geo, 2, dir / "geo");

  // teacher: MIM on the object-centric corpus stands in for a generic checkpoint
  TrainConfig tc;
  tc.encoder = EncoderConfig::tiny();
  tc.epochs = 20;
  tc.batch_size = 32;
  tc.base_lr = 1e-3;
  tc.scale_lr = false;
  tc.warmup_epochs = 1;
  tc.objective = Objective::mim_only;
  tc.seed = 3;
  const auto teacher = run_pretraining(tc, nc.pretrain, dir / "teacher");
  TrainConfig gfm = tc;
  gfm.objective = Objective::multi;
  gfm.distill.teacher_checkpoint = teacher.checkpoint.string();
  gfm.distill.stage = 3;
  const auto pre = run_pretraining(gfm, gc.pretrain, dir / "gfm");

  std::vector<SuiteTask> tasks;
  for (const auto& [kind, manifest] : std::vector<std::pair<TaskKind, fs::path>>{
           {TaskKind::classification, *gc.classification},
           {TaskKind::multilabel, *gc.multilabel},
           {TaskKind::segmentation, *gc.segmentation}}) {
    SuiteTask t;
    t.spec = TaskSpec::desk(kind);
    t.manifest = manifest;
    tasks.push_back(t);
  }
  const std::vector<std::uint64_t> seeds{0, 1, 2};
  const auto base = run_downstream_suite(Encoder<float>(tc.encoder, 99), tasks, seeds, "random-init");
  const auto ours = run_downstream_suite(load_encoder<float>(pre.checkpoint), tasks, seeds, "multi-objective");

  // one ARP per seed over the tasks, then the median across seeds
  std::vector<double> per_seed;
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    std::vector<MetricResult> rs;
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      rs.push_back(base[t * seeds.size() + s]);
      rs.push_back(ours[t * seeds.size() + s]);
    }
    per_seed.push_back(arp(results_table(rs, "random-init"), "multi-objective"));
  }
  auto sorted = per_seed;
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted[sorted.size() / 2];
  c.detail << "ARP per seed";
  for (double v : per_seed) c.detail << ' ' << fmt("%.2f", v);
  c.detail << ", median " << fmt("%.2f", median);
  c.expect(median > 0, "median ARP is not positive");
}

// --- 8 ----------------------------------------------------------------------

void entropy_ordering(Check& c) {
  TempDir dir("accept8");
  SynthSpec low, high;
  low.unlabeled = high.unlabeled = 64;
  low.complexity = 0.1;
  high.complexity = 0.9;
  const auto lc = synth_proxy_generate(low, 1, dir / "low");
  const auto hc = synth_proxy_generate(high, 1, dir / "high");
  Rng rng(0);
  const double el = dataset_entropy_report(lc.pretrain, 64, rng).mean_entropy;
  const double eh = dataset_entropy_report(hc.pretrain, 64, rng).mean_entropy;
  const double flat = image_entropy(Image(64, 64, 3, 0.4f));
  Image noise(512, 512, 1);
  Rng nr(1);
  for (auto& v : noise.pixels) v = static_cast<float>(nr.below(256)) / 255.0f;
  const double en = image_entropy(noise);
  c.detail << "low " << fmt("%.3f", el) << " < high " << fmt("%.3f", eh) << ", constant " << fmt("%.3f", flat)
           << ", noise " << fmt("%.4f", en);
  c.expect(el < eh, "low-texture corpus is not lower");
  c.expect(flat == 0.0, "constant image is not 0 bits");
  c.expect(en >= 7.98 && en <= 8.0, "noise entropy outside [7.98, 8]");
}

// --- 9 ----------------------------------------------------------------------

void ablation_plumbing(Check& c) {
  TempDir dir("accept9");
  SynthSpec spec;
  spec.unlabeled = 16;
  spec.temporal_pairs = 8;
  spec.classification = 24;
  spec.segmentation = 16;
  const auto corpus = synth_proxy_generate(spec, 4, dir / "corpus");
  save_encoder(dir / "teacher.bin", Encoder<float>(EncoderConfig::tiny(), 77));

  AblationPlan plan;
  plan.pretrain.encoder = EncoderConfig::tiny();
  plan.pretrain.epochs = 1;
  plan.pretrain.batch_size = 8;
  plan.pretrain.base_lr = 1e-3;
  plan.pretrain.scale_lr = false;
  plan.pretrain.warmup_epochs = 0;
  plan.pretrain.distill.teacher_checkpoint = (dir / "teacher.bin").string();
  plan.pretrain_manifest = corpus.pretrain_manifest;
  for (const auto& [kind, manifest] : std::vector<std::pair<TaskKind, fs::path>>{
           {TaskKind::classification, *corpus.classification}, {TaskKind::segmentation, *corpus.segmentation}}) {
    SuiteTask t;
    t.spec = TaskSpec::desk(kind);
    t.spec.schedule.iterations = 5;
    t.manifest = manifest;
    plan.tasks.push_back(t);
  }
  plan.rows = studied_ablation_rows(3);
  const auto res = run_ablation(plan, dir / "ablation");

  std::ifstream is(res.summary_csv);
  std::string header, line;
  std::getline(is, header);
  std::set<std::string> axes;
  std::size_t rows = 0;
  while (std::getline(is, line)) {
    ++rows;
    axes.insert(line.substr(0, line.find(',')));
  }
  c.detail << rows << " summary rows, " << axes.size() << " axes (";
  for (const auto& a : axes) c.detail << a << (a == *axes.rbegin() ? "" : " ");
  c.detail << ")";
  c.expect(header.rfind("axis,label,cell,stage,student_init,objective,input_mode,arp", 0) == 0, "unexpected header");
  c.expect(rows == 11, "expected 11 rows");
  c.expect(axes == std::set<std::string>{"stage", "student-init", "objective", "input-mode"},
           "expected the four ablation axes");
  c.expect(fs::exists(res.summary_json) && fs::exists(res.scores_csv), "missing summary.json or scores.csv");
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<void(Check&)> fn;
  };
  const std::vector<Criterion> all{
      {1, "ARP oracle", 1, arp_oracle},
      {2, "carbon oracle", 1, carbon_oracle},
      {3, "gradient suite", 300, gradient_suite},
      {4, "loss laws", 60, loss_laws},
      {5, "freeze and determinism", 600, freeze_and_determinism},
      {6, "metric oracles", 120, metric_oracles},
      {7, "end-to-end directionality", 3600, end_to_end},
      {8, "entropy ordering", 120, entropy_ordering},
      {9, "ablation plumbing", 7200, ablation_plumbing},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& cr : all) {
    if (!selected.empty() && !selected.count(cr.id)) continue;
    Check check;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      cr.fn(check);
    } catch (const std::exception& e) {
      check.expect(false, std::string("threw: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    check.expect(secs < cr.budget_s, "over the " + fmt("%g", cr.budget_s) + " s budget");
    failed += !check.ok;
    std::printf("[%s] criterion %d: %s (%.1f s) %s\n", check.ok ? "PASS" : "FAIL", cr.id, cr.name, secs,
                check.detail.str().c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
