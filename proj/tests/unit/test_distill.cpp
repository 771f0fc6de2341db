#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "gfm/distill.hpp"
#include "gfm/error.hpp"
#include "gfm/mim.hpp"
#include "gfm/optim.hpp"
#include "test_support.hpp"

using namespace gfm;
using gfm::test::random_tensor;

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

ProjectionHead<double> identity_projection(int dim) {
  ProjectionHead<double> p(dim, dim, 0);
  auto& w = p.params()[0]->value;
  std::fill(w.data.begin(), w.data.end(), 0.0);
  for (int i = 0; i < dim; ++i) w.data[static_cast<std::size_t>(i * dim + i)] = 1.0;
  return p;
}

double feat(const Tensor<double>& s, const Tensor<double>& t, const ProjectionHead<double>& p,
            bool strict = false) {
  return feat_loss(ag::make_var(s), ag::make_var(t), p, 1e-12, strict)->value[0];
}

}  // namespace

TEST(DistillConfig, ValidatesStageRange) {
  DistillConfig c;
  EXPECT_NO_THROW(c.validate(4));
  c.stage = 0;
  EXPECT_EQ(error_of([&] { c.validate(4); }), Errc::invalid_config);
  c.stage = 5;
  EXPECT_EQ(error_of([&] { c.validate(4); }), Errc::invalid_config);
}

TEST(DistillConfig, JsonRoundTripAndModeNames) {
  DistillConfig c;
  c.stage = 2;
  c.teacher_checkpoint = "teacher.bin";
  c.input_mode = InputMode::temporal_pair;
  const nlohmann::json j = c;
  EXPECT_EQ(j.at("input_mode"), "TP");
  const auto back = j.get<DistillConfig>();
  EXPECT_EQ(back.stage, 2);
  EXPECT_EQ(back.teacher_checkpoint, "teacher.bin");
  EXPECT_EQ(back.input_mode, InputMode::temporal_pair);
  EXPECT_EQ(input_mode_from_string("SI"), InputMode::same_image);
  EXPECT_EQ(error_of([] { input_mode_from_string("XY"); }), Errc::invalid_config);
}

TEST(TeacherFeature, RequiresAFrozenTeacher) {
  Encoder<float> teacher(EncoderConfig::tiny(), 0, 3);
  const Tensor<float> x({1, 32, 32, 3}, 0.5f);
  EXPECT_EQ(error_of([&] { teacher_feature(teacher, x, 3); }), Errc::teacher_not_frozen);
  teacher.freeze();
  EXPECT_NO_THROW(teacher_feature(teacher, x, 3));
  EXPECT_EQ(error_of([&] { teacher_feature(teacher, x, 4); }), Errc::invalid_config);
}

TEST(TeacherFeature, DeterministicShapeAndDetached) {
  Encoder<float> teacher(EncoderConfig::tiny(), 1, 3);
  teacher.freeze();
  Rng rng(2);
  const auto x = random_tensor<float>({2, 32, 32, 3}, rng);
  const auto a = teacher_feature(teacher, x, 3);
  const auto b = teacher_feature(teacher, x, 3);
  EXPECT_EQ(a->shape(), (Shape{2, 4, 4, 64}));
  EXPECT_EQ(a->value, b->value);
  EXPECT_FALSE(a->requires_grad);
  EXPECT_TRUE(a->parents.empty());
}

TEST(FeatLoss, AlignmentExamples) {
  Rng rng(3);
  const auto p = identity_projection(4);
  const auto t = random_tensor<double>({2, 2, 2, 4}, rng, 0.1, 1.0);
  auto neg = t;
  for (auto& v : neg.data) v = -v;
  EXPECT_NEAR(feat(t, t, p), -1.0, 1e-12);
  EXPECT_NEAR(feat(neg, t, p), 1.0, 1e-12);

  // token r of s is e_0 / e_2 while t is e_1 / e_3: orthogonal throughout
  Tensor<double> s({1, 1, 2, 4}), o({1, 1, 2, 4});
  s.data[0] = 2.0;
  s.data[6] = 0.5;
  o.data[1] = 3.0;
  o.data[7] = 1.0;
  EXPECT_NEAR(feat(s, o, p), 0.0, 1e-15);
}

TEST(FeatLoss, BoundedForRandomInputs) {
  Rng rng(4);
  const ProjectionHead<double> p(6, 5, 7);
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = random_tensor<double>({2, 3, 3, 6}, rng, -2, 2);
    const auto t = random_tensor<double>({2, 3, 3, 5}, rng, -2, 2);
    const double v = feat(s, t, p);
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(FeatLoss, InvariantToPositiveScalingOfStudent) {
  Rng rng(5);
  const ProjectionHead<double> p(6, 5, 8);
  const auto s = random_tensor<double>({2, 3, 3, 6}, rng, -1, 1);
  const auto t = random_tensor<double>({2, 3, 3, 5}, rng, -1, 1);
  const double base = feat(s, t, p);
  for (double c : {1e-3, 0.5, 7.0, 1e4}) {
    auto sc = s;
    for (auto& v : sc.data) v *= c;
    EXPECT_NEAR(feat(sc, t, p), base, 1e-12) << c;
  }
}

TEST(FeatLoss, ZeroTokensGuardedOrRejected) {
  const auto p = identity_projection(3);
  Tensor<double> s({1, 1, 2, 3}), t({1, 1, 2, 3}, 1.0);
  s.data[0] = 1.0;  // token 1 stays zero
  const double guarded = feat(s, t, p);
  EXPECT_TRUE(std::isfinite(guarded));
  EXPECT_NEAR(guarded, -0.5 / std::sqrt(3.0), 1e-12);  // zero token contributes 0
  EXPECT_EQ(error_of([&] { feat(s, t, p, true); }), Errc::zero_vector);
}

TEST(FeatLoss, ShapeMismatchAfterProjection) {
  const ProjectionHead<double> p(4, 8, 0);
  EXPECT_EQ(error_of([&] { feat(Tensor<double>({1, 2, 2, 4}, 1.0), Tensor<double>({1, 2, 2, 6}, 1.0), p); }),
            Errc::shape_mismatch);
  EXPECT_EQ(error_of([&] { feat(Tensor<double>({1, 2, 2, 3}, 1.0), Tensor<double>({1, 2, 2, 8}, 1.0), p); }),
            Errc::shape_mismatch);
}

TEST(TotalLoss, SumsWithoutWeights) {
  EXPECT_NEAR(total_loss(1.5, -0.8), 0.7, 1e-15);
  EXPECT_EQ(total_loss(0.0, -1.0), -1.0);
  EXPECT_EQ(error_of([] { total_loss(std::nan(""), 0.0); }), Errc::non_finite);
  EXPECT_EQ(error_of([] { total_loss(0.0, INFINITY); }), Errc::non_finite);
}

TEST(TotalLoss, GradientIsSumOfComponentGradients) {
  const auto cfg = EncoderConfig::tiny();
  Encoder<double> student(cfg, 1);
  Encoder<double> teacher(cfg, 2, 3);
  teacher.freeze();
  ReconstructionHead<double> head(128, 8, 3, 3);
  ProjectionHead<double> proj(64, 64, 4);
  Rng rng(5);
  const auto x = random_tensor<double>({2, 32, 32, 3}, rng);
  const auto mask = sample_mask_batch(2, 4, 0.6, rng);
  const auto target = teacher_feature(teacher, x, 3);

  auto grads = [&](int which) {
    student.params().zero_grad();
    const auto pyr = student.forward(ag::make_var(x), &mask);
    const auto mim = mim_loss(x, head.forward(pyr.final_normed), mask, 8);
    const auto fl = feat_loss(pyr.stages[2], target, proj);
    ag::backward(which == 0 ? mim : which == 1 ? fl : total_loss(mim, fl));
    std::vector<std::vector<double>> g;
    for (const auto& p : student.params().items())
      g.push_back(p.var->grad.empty() ? std::vector<double>(p.var->numel(), 0.0) : p.var->grad);
    return g;
  };
  const auto gm = grads(0), gf = grads(1), gt = grads(2);
  for (std::size_t i = 0; i < gt.size(); ++i)
    for (std::size_t k = 0; k < gt[i].size(); ++k)
      ASSERT_NEAR(gt[i][k], gm[i][k] + gf[i][k], 1e-12 * std::max(1.0, std::abs(gt[i][k])));
}

TEST(BranchInputs, SameImageAndTemporalPair) {
  Rng rng(6);
  BranchBatch b{random_tensor<float>({2, 4, 4, 3}, rng), std::nullopt};
  const auto si = make_branch_inputs(b, InputMode::same_image);
  EXPECT_EQ(si.teacher, b.images);
  EXPECT_EQ(si.student, b.images);
  EXPECT_EQ(error_of([&] { make_branch_inputs(b, InputMode::temporal_pair); }), Errc::tp_without_pairs);
  b.partners = random_tensor<float>({2, 4, 4, 3}, rng);
  const auto tp = make_branch_inputs(b, InputMode::temporal_pair);
  EXPECT_EQ(tp.teacher, b.images);
  EXPECT_EQ(tp.student, *b.partners);
}

TEST(Distillation, TeacherBlackoutAfterOneStep) {
  const auto cfg = EncoderConfig::tiny();
  Encoder<float> student(cfg, 1);
  Encoder<float> teacher(cfg, 2, 3);
  teacher.freeze();
  ReconstructionHead<float> head(128, 8, 3, 3);
  ProjectionHead<float> proj(64, 64, 4);
  Rng rng(7);
  const auto x = random_tensor<float>({2, 32, 32, 3}, rng);
  const auto mask = sample_mask_batch(2, 4, 0.6, rng);
  const auto teacher_hash = teacher.content_hash();

  const auto pyr = student.forward(ag::make_var(x), &mask);
  const auto loss = total_loss(mim_loss(x, head.forward(pyr.final_normed), mask, 8),
                               feat_loss(pyr.stages[2], teacher_feature(teacher, x, 3), proj));
  ag::backward(loss);
  std::vector<OptimSlot> slots;
  collect_slots(slots, student.params(), "encoder.");
  collect_slots(slots, head.params(), "head.");
  collect_slots(slots, proj.params(), "projection.");
  collect_slots(slots, teacher.params(), "teacher.");
  for (const auto& s : slots) EXPECT_NE(s.name.rfind("teacher.", 0), 0u);

  std::vector<std::pair<OptimSlot, Tensor<float>>> touched;
  for (const auto& s : slots) {
    const bool nonzero = std::any_of(s.var->grad.begin(), s.var->grad.end(), [](float g) { return g != 0.0f; });
    if (nonzero) touched.emplace_back(s, s.var->value);
  }
  EXPECT_GT(touched.size(), 0u);
  AdamW opt;
  opt.step(slots, 1e-3);
  EXPECT_EQ(teacher.content_hash(), teacher_hash);
  for (const auto& [slot, before] : touched) EXPECT_NE(slot.var->value, before) << slot.name;
}

TEST(Distillation, AllMaskedStudentStillGetsFeatureSignal) {
  const auto cfg = EncoderConfig::tiny();
  Encoder<float> student(cfg, 1);
  Encoder<float> teacher(cfg, 2, 3);
  teacher.freeze();
  ProjectionHead<float> proj(64, 64, 4);
  Rng rng(8);
  const auto x = random_tensor<float>({2, 32, 32, 3}, rng);
  const MaskGrid all{2, 4, std::vector<std::uint8_t>(32, 1)};
  const auto pyr = student.forward(ag::make_var(x), &all);
  ag::backward(feat_loss(pyr.stages[2], teacher_feature(teacher, x, 3), proj));
  double norm = 0;
  for (float g : proj.params()[0]->grad) norm += static_cast<double>(g) * g;
  EXPECT_GT(norm, 0.0);
}
