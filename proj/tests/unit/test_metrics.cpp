#include <gtest/gtest.h>

#include <cmath>

#include "gfm/error.hpp"
#include "gfm/metrics.hpp"
#include "gfm/rng.hpp"

using namespace gfm;

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

std::vector<double> noise(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform();
  return v;
}

}  // namespace

TEST(F1, HandExamples) {
  const std::vector<int> p1{1, 1, 0, 0}, t1{1, 0, 1, 0};
  EXPECT_DOUBLE_EQ(f1_scores(p1, t1).f1, 0.5);
  const std::vector<int> p2{1, 0, 0}, t2{1, 1, 0};
  const auto r2 = f1_scores(p2, t2);
  EXPECT_DOUBLE_EQ(r2.precision, 1.0);
  EXPECT_DOUBLE_EQ(r2.recall, 0.5);
  EXPECT_NEAR(r2.f1, 2.0 / 3.0, 1e-15);
  const std::vector<int> p3{1, 1, 1, 1, 1}, t3{1, 1, 0, 0, 0};
  EXPECT_NEAR(f1_scores(p3, t3).f1, 4.0 / 7.0, 1e-15);
}

TEST(F1, DegenerateRatiosAreZero) {
  const std::vector<int> zeros{0, 0, 0};
  const auto r = f1_scores(zeros, zeros);
  EXPECT_EQ(r.precision, 0.0);
  EXPECT_EQ(r.recall, 0.0);
  EXPECT_EQ(r.f1, 0.0);
  const std::vector<int> a{1}, b{1, 0};
  EXPECT_EQ(error_of([&] { f1_scores(a, b); }), Errc::shape_mismatch);
}

TEST(MeanIou, HandExample) {
  const std::vector<int> pred{0, 0, 1, 1}, truth{0, 1, 1, 1};
  EXPECT_NEAR(mean_iou(pred, truth, 2), 7.0 / 12.0, 1e-15);
  // class 2 occurs in neither, so it does not dilute the mean
  EXPECT_NEAR(mean_iou(pred, truth, 3), 7.0 / 12.0, 1e-15);
  EXPECT_EQ(class_iou(pred, truth, 3, 2), 0.0);
  EXPECT_DOUBLE_EQ(mean_iou(truth, truth, 2), 1.0);
}

TEST(MeanIou, LabelsOutOfRange) {
  const std::vector<int> pred{0, 3}, truth{0, 1}, neg{-1, 0};
  EXPECT_EQ(error_of([&] { mean_iou(pred, truth, 3); }), Errc::label_out_of_range);
  EXPECT_EQ(error_of([&] { mean_iou(neg, truth, 3); }), Errc::label_out_of_range);
}

TEST(MeanIou, InvariantToRelabelling) {
  Rng rng(1);
  std::vector<int> pred(64), truth(64);
  for (auto& v : pred) v = static_cast<int>(rng.below(4));
  for (auto& v : truth) v = static_cast<int>(rng.below(4));
  const std::vector<int> perm{2, 0, 3, 1};
  std::vector<int> pp(64), tp(64);
  for (std::size_t i = 0; i < 64; ++i) {
    pp[i] = perm[static_cast<std::size_t>(pred[i])];
    tp[i] = perm[static_cast<std::size_t>(truth[i])];
  }
  EXPECT_NEAR(mean_iou(pred, truth, 4), mean_iou(pp, tp, 4), 1e-15);
}

TEST(Accuracy, Fraction) {
  const std::vector<int> pred{0, 1, 2, 2}, truth{0, 1, 1, 2};
  EXPECT_DOUBLE_EQ(accuracy(pred, truth), 0.75);
}

TEST(AveragePrecision, HandExamples) {
  const std::vector<double> s1{0.9, 0.8};
  const std::vector<int> t1{0, 1};
  EXPECT_DOUBLE_EQ(average_precision(s1, t1), 0.5);
  const std::vector<int> t2{1, 0};
  EXPECT_DOUBLE_EQ(average_precision(s1, t2), 1.0);
  // a tie forms one threshold
  const std::vector<double> tie{0.5, 0.5};
  EXPECT_DOUBLE_EQ(average_precision(tie, t2), 0.5);
  const std::vector<int> none{0, 0};
  EXPECT_TRUE(std::isnan(average_precision(s1, none)));
}

TEST(AveragePrecision, MultilabelSkipsClassesWithoutPositives) {
  // 2 samples x 2 classes; class 1 has no positives
  const std::vector<double> scores{0.9, 0.1, 0.8, 0.7};
  const std::vector<int> truth{0, 0, 1, 0};
  EXPECT_DOUBLE_EQ(average_precision_multilabel(scores, truth, 2, 2), 0.5);
  const std::vector<int> empty{0, 0, 0, 0};
  EXPECT_EQ(error_of([&] { average_precision_multilabel(scores, empty, 2, 2); }), Errc::no_positive_class);
}

TEST(AveragePrecision, InvariantToMonotoneScoreMaps) {
  Rng rng(2);
  const auto s = noise(20, rng);
  std::vector<int> t(20);
  for (auto& v : t) v = rng.bernoulli(0.4) ? 1 : 0;
  t[0] = 1;
  std::vector<double> mapped(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) mapped[i] = std::exp(3.0 * s[i]) - 7.0;
  EXPECT_NEAR(average_precision(s, t), average_precision(mapped, t), 1e-15);
}

TEST(Psnr, TwentyDecibelsAndIdentical) {
  const std::vector<double> a(16, 0.5), b(16, 0.6);
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-9);
  EXPECT_EQ(psnr(a, a), kPsnrIdentical);
  EXPECT_NEAR(psnr(std::vector<double>(4, 0.0), std::vector<double>(4, 25.5), 255.0), 20.0, 1e-9);
}

TEST(Psnr, DecreasesAsErrorGrows) {
  Rng rng(3);
  const auto truth = noise(64, rng);
  double prev = kPsnrIdentical;
  for (double amp : {0.01, 0.02, 0.05, 0.1, 0.3}) {
    auto pred = truth;
    for (std::size_t i = 0; i < pred.size(); ++i) pred[i] += (i % 2 ? amp : -amp);
    const double v = psnr(pred, truth);
    EXPECT_LT(v, prev);
    prev = v;
  }
}

TEST(Ssim, IdenticalIsOneAndSymmetric) {
  Rng rng(4);
  const auto a = noise(16 * 16 * 3, rng);
  const auto b = noise(16 * 16 * 3, rng);
  EXPECT_NEAR(ssim(a, a, 16, 16, 3), 1.0, 1e-12);
  const double ab = ssim(a, b, 16, 16, 3);
  EXPECT_NEAR(ab, ssim(b, a, 16, 16, 3), 1e-12);
  EXPECT_LT(ab, 0.5);
  EXPECT_GE(ab, -1.0);
}

TEST(Ssim, RejectsSmallOrMismatchedInputs) {
  const std::vector<double> small(10 * 10, 0.5), big(16 * 16, 0.5);
  EXPECT_EQ(error_of([&] { ssim(small, small, 10, 10, 1); }), Errc::shape_mismatch);
  EXPECT_EQ(error_of([&] { ssim(big, big, 16, 15, 1); }), Errc::shape_mismatch);
}
