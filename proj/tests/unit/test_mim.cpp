#include <gtest/gtest.h>

#include "gfm/error.hpp"
#include "gfm/mim.hpp"
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

MaskGrid grid(std::size_t side, std::vector<std::uint8_t> cells) {
  return MaskGrid{cells.size() / (side * side), side, std::move(cells)};
}

double loss_value(const Tensor<double>& original, const Tensor<double>& generated, const MaskGrid& mask,
                  std::size_t patch) {
  return mim_loss(original, ag::make_var(generated), mask, patch)->value[0];
}

}  // namespace

TEST(SampleMask, CountFollowsTheRoundingRule) {
  Rng rng(0);
  EXPECT_EQ(sample_mask(6, 0.5, rng).masked_count(0), 18u);
  EXPECT_EQ(sample_mask(6, 0.6, rng).masked_count(0), 22u);  // round(21.6)
  const auto batch = sample_mask_batch(5, 4, 0.6, rng);
  for (std::size_t b = 0; b < 5; ++b) EXPECT_EQ(batch.masked_count(b), 10u);  // round(9.6)
}

TEST(SampleMask, RealisedFractionWithinOneCellOfCeiling) {
  Rng rng(1);
  for (std::size_t side : {2u, 3u, 4u, 5u, 6u, 7u})
    for (double ratio : {0.1, 0.25, 0.4, 0.6, 0.75, 0.9}) {
      const double cells = static_cast<double>(side * side);
      const double got = static_cast<double>(sample_mask(side, ratio, rng).masked_count(0));
      EXPECT_LE(std::abs(got - std::ceil(ratio * cells)), 1.0) << side << " " << ratio;
    }
}

TEST(SampleMask, RatioOutsideOpenIntervalIsRejected) {
  Rng rng(0);
  for (double r : {0.0, 1.0, -0.1, 1.5})
    EXPECT_EQ(error_of([&] { sample_mask(6, r, rng); }), Errc::ratio_out_of_range) << r;
}

TEST(SampleMask, MarginalsAreUniform) {
  Rng rng(2024);
  std::vector<int> hits(36, 0);
  constexpr int kDraws = 10000;
  for (int i = 0; i < kDraws; ++i) {
    const auto m = sample_mask(6, 0.5, rng);
    for (std::size_t c = 0; c < 36; ++c) hits[c] += m.cells[c];
  }
  for (std::size_t c = 0; c < 36; ++c) {
    const double f = hits[c] / static_cast<double>(kDraws);
    EXPECT_GE(f, 0.47) << "cell " << c;
    EXPECT_LE(f, 0.53) << "cell " << c;
  }
}

TEST(SampleMask, SeededDrawsRepeat) {
  Rng a(9), b(9);
  EXPECT_EQ(sample_mask_batch(3, 4, 0.6, a).cells, sample_mask_batch(3, 4, 0.6, b).cells);
}

TEST(ExpandMask, CoversPatchAndChannels) {
  const auto m = grid(2, {1, 0, 0, 1});
  const auto v = expand_mask(m, 2, 3);
  ASSERT_EQ(v.size(), 4u * 4u * 3u);
  auto at = [&](int y, int x, int c) { return v[(static_cast<std::size_t>(y) * 4 + x) * 3 + c]; };
  EXPECT_EQ(at(0, 0, 0), 1);
  EXPECT_EQ(at(1, 1, 2), 1);
  EXPECT_EQ(at(0, 2, 1), 0);
  EXPECT_EQ(at(3, 3, 0), 1);
  EXPECT_EQ(at(2, 1, 0), 0);
}

TEST(ReconstructionHead, OutputMatchesImageShape) {
  const ReconstructionHead<float> head(128, 8, 3, 0);
  Rng rng(1);
  const auto out = head.forward(ag::make_var(random_tensor<float>({2, 4, 4, 128}, rng)));
  EXPECT_EQ(out->shape(), (Shape{2, 32, 32, 3}));
  EXPECT_THROW(head.forward(ag::make_var(Tensor<float>({2, 4, 4, 64}))), Error);
}

TEST(ReconstructionHead, ZeroFeatureAndWeightsGiveBias) {
  ReconstructionHead<double> head(8, 2, 3, 0);
  auto& w = head.params()[0]->value;
  std::fill(w.data.begin(), w.data.end(), 0.0);
  auto& b = head.params()[1]->value;
  for (std::size_t i = 0; i < b.numel(); ++i) b.data[i] = static_cast<double>(i) + 0.5;
  const auto out = head.forward(ag::make_var(Tensor<double>({1, 3, 3, 8})));
  // pixel (y, x, c) of every token reads bias[c * 4 + (y % 2) * 2 + (x % 2)]
  for (std::size_t y = 0; y < 6; ++y)
    for (std::size_t x = 0; x < 6; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        EXPECT_EQ(out->value.data[(y * 6 + x) * 3 + c], b.data[c * 4 + (y % 2) * 2 + (x % 2)]);
}

TEST(ReconstructionHead, GradientMatchesFiniteDifferences) {
  ReconstructionHead<double> head(8, 2, 3, 4);
  Rng rng(5);
  const auto feature = ag::make_var(random_tensor<double>({2, 2, 2, 8}, rng, -1, 1));
  const auto target = random_tensor<double>({2, 4, 4, 3}, rng, 2, 3);
  const auto loss = [&] { return ag::l1_mean(head.forward(feature), target); };
  const auto r = test::grad_check(loss, {{"head.", &head.params()}}, rng, 32);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(MimLoss, HandExamples) {
  // 2x2 single-channel image, two masked cells holding 1 and 2, generated 0
  const Tensor<double> o({1, 2, 2, 1}, std::vector<double>{1, 7, 9, 2});
  const Tensor<double> g({1, 2, 2, 1}, 0.0);
  EXPECT_DOUBLE_EQ(loss_value(o, g, grid(2, {1, 0, 0, 1}), 1), 1.5);

  const Tensor<double> ones({2, 8, 8, 3}, 1.0), quarter({2, 8, 8, 3}, 0.25);
  EXPECT_DOUBLE_EQ(loss_value(ones, quarter, grid(2, std::vector<std::uint8_t>(8, 1)), 4), 0.75);
  EXPECT_DOUBLE_EQ(loss_value(ones, ones, grid(2, {1, 0, 1, 1, 0, 0, 0, 1}), 4), 0.0);
}

TEST(MimLoss, EmptyMaskIsAnError) {
  const Tensor<double> o({1, 4, 4, 1}, 1.0);
  EXPECT_EQ(error_of([&] { loss_value(o, o, grid(2, {0, 0, 0, 0}), 2); }), Errc::empty_mask);
}

TEST(MimLoss, ShapeMismatch) {
  const Tensor<double> o({1, 4, 4, 1}, 1.0), g({1, 4, 4, 3}, 1.0);
  EXPECT_EQ(error_of([&] { loss_value(o, g, grid(2, {1, 0, 0, 0}), 2); }), Errc::shape_mismatch);
  EXPECT_EQ(error_of([&] { loss_value(o, o, grid(2, {1, 0, 0, 0}), 4); }), Errc::shape_mismatch);
}

TEST(MimLoss, ZeroIffMaskedValuesMatch) {
  Rng rng(3);
  const auto o = random_tensor<double>({2, 8, 8, 3}, rng);
  const auto mask = sample_mask_batch(2, 4, 0.5, rng);
  const auto values = expand_mask(mask, 2, 3);
  auto g = o;
  for (std::size_t i = 0; i < g.numel(); ++i)
    if (!values[i]) g.data[i] += 5.0;  // unmasked garbage is ignored
  EXPECT_EQ(loss_value(o, g, mask, 2), 0.0);
  for (std::size_t i = 0; i < g.numel(); ++i)
    if (values[i]) {
      g.data[i] += 1e-3;
      break;
    }
  EXPECT_GT(loss_value(o, g, mask, 2), 0.0);
}

TEST(MimLoss, GradientVanishesOnUnmaskedPixels) {
  Rng rng(4);
  const auto o = random_tensor<double>({2, 8, 8, 3}, rng);
  const auto mask = sample_mask_batch(2, 4, 0.6, rng);
  auto g = ag::make_var(random_tensor<double>({2, 8, 8, 3}, rng), true);
  ag::backward(mim_loss(o, g, mask, 2));
  const auto values = expand_mask(mask, 2, 3);
  double max_unmasked = 0, min_masked = 1e9;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i])
      min_masked = std::min(min_masked, std::abs(g->grad[i]));
    else
      max_unmasked = std::max(max_unmasked, std::abs(g->grad[i]));
  }
  EXPECT_EQ(max_unmasked, 0.0);
  EXPECT_GT(min_masked, 0.0);
}

TEST(MimLoss, InvariantToPermutingMaskedRegions) {
  Rng rng(5);
  const auto o = random_tensor<double>({1, 4, 4, 2}, rng);
  const auto g = random_tensor<double>({1, 4, 4, 2}, rng);
  const auto mask = grid(2, {1, 1, 0, 1});
  // swap the (0,0) and (1,1) masked 2x2 regions in both images
  auto swap_regions = [](Tensor<double> t) {
    for (std::size_t y = 0; y < 2; ++y)
      for (std::size_t x = 0; x < 2; ++x)
        for (std::size_t c = 0; c < 2; ++c)
          std::swap(t.data[(y * 4 + x) * 2 + c], t.data[((y + 2) * 4 + x + 2) * 2 + c]);
    return t;
  };
  EXPECT_NEAR(loss_value(o, g, mask, 2), loss_value(swap_regions(o), swap_regions(g), mask, 2), 1e-15);
}

TEST(MimLoss, ScalesWithAbsoluteFactor) {
  Rng rng(6);
  const auto o = random_tensor<double>({1, 4, 4, 2}, rng);
  const auto g = random_tensor<double>({1, 4, 4, 2}, rng);
  const auto mask = grid(2, {1, 0, 1, 1});
  const double base = loss_value(o, g, mask, 2);
  for (double c : {2.5, -3.0, 0.1}) {
    auto so = o, sg = g;
    for (auto& v : so.data) v *= c;
    for (auto& v : sg.data) v *= c;
    EXPECT_NEAR(loss_value(so, sg, mask, 2), std::abs(c) * base, 1e-12);
  }
}

TEST(PixelShuffle, ChannelOrdering) {
  const auto m = pixel_shuffle_map(1, 2, 2);
  const Tensor<double> in({1, 1, 8}, std::vector<double>{0, 1, 2, 3, 4, 5, 6, 7});
  const auto out = ag::apply(*m, in);
  // out (y, x, c) = in[c*4 + y*2 + x]
  EXPECT_EQ(out.data, (std::vector<double>{0, 4, 1, 5, 2, 6, 3, 7}));
}
