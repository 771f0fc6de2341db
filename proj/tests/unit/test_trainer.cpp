#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "gfm/checkpoint.hpp"
#include "gfm/error.hpp"
#include "gfm/trainer.hpp"
#include "test_support.hpp"

using namespace gfm;
using gfm::test::random_tensor;
using gfm::test::TempDir;

namespace {

Errc error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return Errc::io_error;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

TrainConfig tiny_config(Objective objective, const std::filesystem::path& teacher = {}) {
  TrainConfig c;
  c.encoder = EncoderConfig::tiny();
  c.epochs = 2;
  c.batch_size = 4;
  c.base_lr = 1e-3;
  c.scale_lr = false;
  c.warmup_epochs = 0;
  c.augment = false;
  c.seed = 5;
  c.objective = objective;
  c.distill.stage = 3;
  c.distill.teacher_checkpoint = teacher.string();
  return c;
}

std::filesystem::path make_teacher(const TempDir& dir) {
  const auto path = dir / "teacher.bin";
  save_encoder(path, Encoder<float>(EncoderConfig::tiny(), 77));
  return path;
}

BranchBatch random_batch(std::uint64_t seed, std::size_t b = 2) {
  Rng rng(seed);
  return BranchBatch{random_tensor<float>({b, 32, 32, 3}, rng, 0.0f, 1.0f), std::nullopt};
}

SynthCorpus small_corpus(const TempDir& dir, int unlabeled = 8) {
  SynthSpec spec;
  spec.unlabeled = unlabeled;
  return synth_proxy_generate(spec, 3, dir / "corpus");
}

}  // namespace

TEST(TrainConfig, ValidationRejectsBadValues) {
  auto c = tiny_config(Objective::mim_only);
  EXPECT_NO_THROW(c.validate());
  for (const auto& mutate : std::vector<std::function<void(TrainConfig&)>>{
           [](TrainConfig& t) { t.epochs = 0; }, [](TrainConfig& t) { t.batch_size = 0; },
           [](TrainConfig& t) { t.base_lr = 0; }, [](TrainConfig& t) { t.min_lr_ratio = 1.5; },
           [](TrainConfig& t) { t.weight_decay = -1; }, [](TrainConfig& t) { t.schedule = "step"; },
           [](TrainConfig& t) { t.mask_ratio = 1.0; }, [](TrainConfig& t) { t.objective = Objective::multi; }}) {
    auto bad = c;
    mutate(bad);
    EXPECT_EQ(error_of([&] { bad.validate(); }), Errc::invalid_config);
  }
}

TEST(TrainConfig, PeakLrScalesWithBatch) {
  TrainConfig c;
  c.base_lr = 8e-4;
  c.batch_size = 1024;
  EXPECT_DOUBLE_EQ(c.peak_lr(), 4e-4);
  c.scale_lr = false;
  EXPECT_DOUBLE_EQ(c.peak_lr(), 8e-4);
}

TEST(TrainConfig, JsonRoundTrip) {
  auto c = tiny_config(Objective::distill_only, "t.bin");
  c.distill.input_mode = InputMode::temporal_pair;
  c.student_init = StudentInit::teacher_checkpoint;
  const nlohmann::json j = c;
  EXPECT_EQ(nlohmann::json(j.get<TrainConfig>()), j);
  EXPECT_EQ(error_of([] { objective_from_string("both"); }), Errc::invalid_config);
  EXPECT_EQ(error_of([] { student_init_from_string("pretrained"); }), Errc::invalid_config);
}

TEST(TrainConfig, TeacherPathMustExist) {
  TempDir dir("trainer");
  EXPECT_EQ(error_of([&] { make_pretrain_state(tiny_config(Objective::multi, dir / "nope.bin")); }),
            Errc::checkpoint_io);
}

TEST(Schedules, CosineWithWarmup) {
  EXPECT_DOUBLE_EQ(cosine_lr(0, 100, 10, 1.0, 0.0), 0.1);
  EXPECT_DOUBLE_EQ(cosine_lr(9, 100, 10, 1.0, 0.0), 1.0);
  EXPECT_NEAR(cosine_lr(10, 100, 10, 1.0, 0.1), 1.0, 1e-12);
  EXPECT_NEAR(cosine_lr(55, 100, 10, 1.0, 0.0), 0.5, 1e-12);
  EXPECT_NEAR(cosine_lr(100, 100, 10, 1.0, 0.1), 0.1, 1e-12);
  double prev = 2.0;
  for (long s = 10; s <= 100; ++s) {
    const double v = cosine_lr(s, 100, 10, 1.0, 0.01);
    EXPECT_LE(v, prev + 1e-15);
    prev = v;
  }
}

TEST(Schedules, PolyDecay) {
  EXPECT_DOUBLE_EQ(poly_lr(0, 100, 0.01), 0.01);
  EXPECT_NEAR(poly_lr(50, 100, 0.01), 0.01 * std::pow(0.5, 0.9), 1e-15);
  EXPECT_NEAR(poly_lr(100, 100, 0.01), 0.0, 1e-15);
}

TEST(Carbon, KnownValuesAndLedgerLaw) {
  EXPECT_NEAR(carbon_estimate(93.3, 0.25, 0.57), 13.30, 0.1);
  EXPECT_NEAR(carbon_estimate(768, 0.25, 0.57), 109.44, 0.1);
  EXPECT_EQ(carbon_estimate(0, 0.25, 0.57), 0.0);
  EXPECT_EQ(error_of([] { carbon_estimate(-1, 0.25, 0.57); }), Errc::negative_input);
  EXPECT_EQ(error_of([] { carbon_estimate(1, -0.25, 0.57); }), Errc::negative_input);
  EXPECT_EQ(error_of([] { make_ledger(-5.0); }), Errc::negative_input);

  const auto l = make_ledger(7200.0, 4, 0.3, 0.5);
  EXPECT_DOUBLE_EQ(l.device_hours, 8.0);
  EXPECT_DOUBLE_EQ(l.estimated_kg_co2, l.device_hours * l.device_power_kw * l.carbon_intensity);
}

TEST(PretrainStep, MimOnlyReportsNoFeatureLoss) {
  auto state = make_pretrain_state(tiny_config(Objective::mim_only));
  EXPECT_FALSE(state.teacher.has_value());
  const auto lb = pretrain_step(state, random_batch(1));
  ASSERT_TRUE(lb.l_mim.has_value());
  EXPECT_FALSE(lb.l_feat.has_value());
  EXPECT_EQ(lb.total, *lb.l_mim);
  EXPECT_EQ(state.step, 1);
}

TEST(PretrainStep, DistillOnlyLeavesHeadUntouched) {
  TempDir dir("trainer");
  auto state = make_pretrain_state(tiny_config(Objective::distill_only, make_teacher(dir)));
  const auto head = state.head.params().hash();
  const auto student = state.student.content_hash();
  const auto lb = pretrain_step(state, random_batch(2));
  EXPECT_FALSE(lb.l_mim.has_value());
  ASSERT_TRUE(lb.l_feat.has_value());
  EXPECT_EQ(state.head.params().hash(), head);
  EXPECT_NE(state.student.content_hash(), student);
}

TEST(PretrainStep, MultiTotalIsSumAndTeacherStaysFixed) {
  TempDir dir("trainer");
  auto state = make_pretrain_state(tiny_config(Objective::multi, make_teacher(dir)));
  const auto teacher = state.teacher->content_hash();
  for (std::uint64_t s = 0; s < 3; ++s) {
    const auto lb = pretrain_step(state, random_batch(10 + s));
    ASSERT_TRUE(lb.l_mim && lb.l_feat);
    EXPECT_NEAR(lb.total, *lb.l_mim + *lb.l_feat, 1e-7 * std::max(1.0, std::abs(lb.total)));
    EXPECT_GE(*lb.l_feat, -1.0 - 1e-6);
    EXPECT_LE(*lb.l_feat, 1.0 + 1e-6);
  }
  EXPECT_EQ(state.teacher->content_hash(), teacher);
}

TEST(PretrainStep, Deterministic) {
  TempDir dir("trainer");
  const auto cfg = tiny_config(Objective::multi, make_teacher(dir));
  auto a = make_pretrain_state(cfg);
  auto b = make_pretrain_state(cfg);
  for (std::uint64_t s = 0; s < 2; ++s) {
    const auto la = pretrain_step(a, random_batch(s));
    const auto lb = pretrain_step(b, random_batch(s));
    EXPECT_EQ(la.total, lb.total);
  }
  EXPECT_EQ(a.student.content_hash(), b.student.content_hash());
}

TEST(PretrainStep, NonFiniteLossLeavesParametersUnchanged) {
  auto state = make_pretrain_state(tiny_config(Objective::mim_only));
  auto batch = random_batch(3);
  batch.images.data[17] = std::nanf("");
  const auto student = state.student.content_hash();
  const auto head = state.head.params().hash();
  EXPECT_EQ(error_of([&] { pretrain_step(state, batch); }), Errc::non_finite_loss);
  EXPECT_EQ(state.student.content_hash(), student);
  EXPECT_EQ(state.head.params().hash(), head);
  EXPECT_EQ(state.step, 0);
}

TEST(PretrainStep, TemporalPairNeedsPartners) {
  TempDir dir("trainer");
  auto cfg = tiny_config(Objective::multi, make_teacher(dir));
  cfg.distill.input_mode = InputMode::temporal_pair;
  auto state = make_pretrain_state(cfg);
  EXPECT_EQ(error_of([&] { pretrain_step(state, random_batch(4)); }), Errc::tp_without_pairs);
}

TEST(Checkpoint, RoundTripResumesBitwise) {
  TempDir dir("trainer");
  const auto cfg = tiny_config(Objective::multi, make_teacher(dir));
  auto state = make_pretrain_state(cfg);
  pretrain_step(state, random_batch(1));
  save_checkpoint(state, dir / "state.bin");
  auto loaded = load_checkpoint(dir / "state.bin");
  EXPECT_EQ(loaded.step, state.step);
  EXPECT_EQ(loaded.student.content_hash(), state.student.content_hash());
  EXPECT_EQ(loaded.head.params().hash(), state.head.params().hash());

  const auto x = random_batch(2).images;
  EXPECT_EQ(state.student.forward(ag::make_var(x)).stages.back()->value,
            loaded.student.forward(ag::make_var(x)).stages.back()->value);
  // the optimiser moments came along, so the next step agrees too
  const auto la = pretrain_step(state, random_batch(3));
  const auto lb = pretrain_step(loaded, random_batch(3));
  EXPECT_EQ(la.total, lb.total);
  EXPECT_EQ(state.student.content_hash(), loaded.student.content_hash());
}

TEST(Checkpoint, TruncatedAndNewerFilesAreRejected) {
  TempDir dir("trainer");
  auto state = make_pretrain_state(tiny_config(Objective::mim_only));
  save_checkpoint(state, dir / "state.bin");
  const std::string bytes = slurp(dir / "state.bin");

  {
    std::ofstream os(dir / "short.bin", std::ios::binary);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  EXPECT_EQ(error_of([&] { load_checkpoint(dir / "short.bin"); }), Errc::corrupt_container);

  std::uint64_t len = 0;
  for (int i = 7; i >= 0; --i) len = (len << 8) | static_cast<unsigned char>(bytes[static_cast<std::size_t>(i)]);
  auto header = nlohmann::json::parse(bytes.substr(8, len));
  header["version"] = kCheckpointVersion + 1;
  const std::string text = header.dump();
  std::string out(8, '\0');
  for (int i = 0; i < 8; ++i) out[static_cast<std::size_t>(i)] = static_cast<char>((text.size() >> (8 * i)) & 0xff);
  out += text + bytes.substr(8 + len);
  {
    std::ofstream os(dir / "newer.bin", std::ios::binary);
    os << out;
  }
  EXPECT_EQ(error_of([&] { load_checkpoint(dir / "newer.bin"); }), Errc::version_mismatch);
  EXPECT_EQ(error_of([&] { load_checkpoint(dir / "missing.bin"); }), Errc::checkpoint_io);
}

TEST(StudentInit, VanillaStartsFromTeacherWeights) {
  TempDir dir("trainer");
  auto cfg = tiny_config(Objective::mim_only, make_teacher(dir));
  cfg.student_init = StudentInit::teacher_checkpoint;
  const auto state = make_pretrain_state(cfg);
  EXPECT_EQ(state.student.content_hash(), load_encoder<float>(dir / "teacher.bin").content_hash());
}

TEST(LossCsv, RoundTrip) {
  TempDir dir("trainer");
  std::vector<EpochLoss> curve{{1, 0.5, -0.25, 0.25, 1e-3}, {2, std::nullopt, -0.5, -0.5, 5e-4}};
  write_loss_csv(dir / "loss.csv", curve);
  EXPECT_EQ(slurp(dir / "loss.csv").substr(0, 27), "epoch,l_mim,l_feat,total,lr");
  const auto back = read_loss_csv(dir / "loss.csv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].l_mim, 0.5);
  EXPECT_FALSE(back[1].l_mim.has_value());
  EXPECT_EQ(back[1].l_feat, -0.5);
  EXPECT_EQ(back[1].epoch, 2);
}

TEST(RunPretraining, ReproducibleRunsWithFrozenTeacher) {
  TempDir dir("trainer");
  const auto corpus = small_corpus(dir);
  const auto cfg = tiny_config(Objective::multi, make_teacher(dir));
  const auto a = run_pretraining(cfg, corpus.pretrain, dir / "a");
  const auto b = run_pretraining(cfg, corpus.pretrain, dir / "b");

  ASSERT_EQ(a.curve.size(), 2u);
  EXPECT_EQ(a.steps, 4);
  for (const auto& row : a.curve) EXPECT_NEAR(row.total, *row.l_mim + *row.l_feat, 1e-6);
  ASSERT_TRUE(a.teacher_hash_before && a.teacher_hash_after);
  EXPECT_EQ(*a.teacher_hash_before, *a.teacher_hash_after);
  EXPECT_EQ(slurp(a.checkpoint), slurp(b.checkpoint));
  EXPECT_EQ(slurp(a.loss_csv), slurp(b.loss_csv));
  EXPECT_EQ(read_loss_csv(a.loss_csv).size(), 2u);
  EXPECT_TRUE(std::filesystem::exists(a.ledger_csv));
}

TEST(RunPretraining, LossDecreasesOnConstantImages) {
  TempDir dir("trainer");
  DatasetManifest m;
  m.base_dir = dir.path();
  for (int i = 0; i < 8; ++i) {
    const std::string name = "flat" + std::to_string(i) + ".png";
    write_png(dir / name, Image(32, 32, 3, 0.1f * static_cast<float>(i + 1)));
    ManifestRecord r;
    r.path = name;
    m.records.push_back(r);
  }
  auto cfg = tiny_config(Objective::mim_only);
  cfg.epochs = 4;
  cfg.base_lr = 3e-3;
  const auto res = run_pretraining(cfg, m, dir / "run");
  ASSERT_EQ(res.curve.size(), 4u);
  EXPECT_LT(res.curve.back().total, res.curve.front().total);
}

TEST(RunPretraining, EmptyManifestAndUnwritableOutput) {
  TempDir dir("trainer");
  const auto cfg = tiny_config(Objective::mim_only);
  EXPECT_EQ(error_of([&] { run_pretraining(cfg, DatasetManifest{}, dir / "run"); }), Errc::data_exhausted);
  const auto corpus = small_corpus(dir, 4);
  { std::ofstream(dir / "file") << "x"; }
  EXPECT_EQ(error_of([&] { run_pretraining(cfg, corpus.pretrain, dir / "file" / "run"); }), Errc::checkpoint_io);
}

TEST(PretrainData, TemporalPairsShareLocationWithDistinctTimes) {
  TempDir dir("trainer");
  DatasetManifest m;
  m.base_dir = dir.path();
  // pixel value encodes (location, time) so batches can be decoded
  for (int loc = 0; loc < 3; ++loc)
    for (int t = 0; t < 2; ++t) {
      const std::string name = "l" + std::to_string(loc) + "t" + std::to_string(t) + ".png";
      write_png(dir / name, Image(32, 32, 3, static_cast<float>(loc * 2 + t + 1) * 20.0f / 255.0f));
      ManifestRecord r;
      r.path = name;
      r.location_key = "loc" + std::to_string(loc);
      r.timestamp = "2020-0" + std::to_string(t + 1);
      m.records.push_back(r);
    }
  const PretrainData data(m, EncoderConfig::tiny());
  EXPECT_EQ(data.size(), 6u);
  EXPECT_EQ(data.pair_count(), 3u);

  Rng rng(1);
  const auto batches = data.epoch(InputMode::temporal_pair, 2, false, rng);
  ASSERT_EQ(batches.size(), 2u);
  std::size_t seen = 0;
  for (const auto& b : batches) {
    ASSERT_TRUE(b.partners.has_value());
    const std::size_t per = 32 * 32 * 3;
    for (std::size_t i = 0; i < b.images.dim(0); ++i, ++seen) {
      const int u = static_cast<int>(std::lround(b.images.data[i * per] * 255.0f / 20.0f)) - 1;
      const int v = static_cast<int>(std::lround(b.partners->data[i * per] * 255.0f / 20.0f)) - 1;
      EXPECT_EQ(u / 2, v / 2);
      EXPECT_NE(u % 2, v % 2);
    }
  }
  EXPECT_EQ(seen, 3u);
}
