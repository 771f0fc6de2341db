#include "gfm/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "gfm/error.hpp"

namespace gfm {

namespace {

double ratio(double num, double den) { return den > 0 ? num / den : 0.0; }

void same_size(std::size_t a, std::size_t b) {
  check(a == b, Errc::shape_mismatch, "inputs differ in size (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
}

}  // namespace

PrecisionRecallF1 f1_scores(std::span<const int> pred, std::span<const int> truth, int positive) {
  same_size(pred.size(), truth.size());
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] == positive, t = truth[i] == positive;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
  }
  PrecisionRecallF1 r;
  r.precision = ratio(tp, tp + fp);
  r.recall = ratio(tp, tp + fn);
  r.f1 = ratio(2 * r.precision * r.recall, r.precision + r.recall);
  return r;
}

double class_iou(std::span<const int> pred, std::span<const int> truth, int num_classes, int cls) {
  same_size(pred.size(), truth.size());
  double inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    check(pred[i] >= 0 && pred[i] < num_classes && truth[i] >= 0 && truth[i] < num_classes, Errc::label_out_of_range,
          "label outside [0, " + std::to_string(num_classes) + ")");
    const bool p = pred[i] == cls, t = truth[i] == cls;
    inter += p && t;
    uni += p || t;
  }
  return ratio(inter, uni);
}

double mean_iou(std::span<const int> pred, std::span<const int> truth, int num_classes) {
  same_size(pred.size(), truth.size());
  check(num_classes >= 1, Errc::label_out_of_range, "num_classes must be >= 1");
  std::vector<double> inter(static_cast<std::size_t>(num_classes)), uni(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int p = pred[i], t = truth[i];
    check(p >= 0 && p < num_classes && t >= 0 && t < num_classes, Errc::label_out_of_range,
          "label outside [0, " + std::to_string(num_classes) + ")");
    uni[static_cast<std::size_t>(p)] += 1;
    if (p == t)
      inter[static_cast<std::size_t>(p)] += 1;
    else
      uni[static_cast<std::size_t>(t)] += 1;
  }
  double sum = 0;
  int present = 0;
  for (int c = 0; c < num_classes; ++c)
    if (uni[static_cast<std::size_t>(c)] > 0) {
      sum += inter[static_cast<std::size_t>(c)] / uni[static_cast<std::size_t>(c)];
      ++present;
    }
  return present ? sum / present : 0.0;
}

double accuracy(std::span<const int> pred, std::span<const int> truth) {
  same_size(pred.size(), truth.size());
  if (pred.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

double average_precision(std::span<const double> scores, std::span<const int> truth) {
  same_size(scores.size(), truth.size());
  const double positives = static_cast<double>(std::count_if(truth.begin(), truth.end(), [](int t) { return t != 0; }));
  if (positives == 0) return std::numeric_limits<double>::quiet_NaN();
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double ap = 0, tp = 0, seen = 0, prev_recall = 0;
  for (std::size_t k = 0; k < order.size();) {
    // consume a whole block of tied scores at once
    std::size_t end = k;
    while (end < order.size() && scores[order[end]] == scores[order[k]]) {
      tp += truth[order[end]] != 0;
      ++seen;
      ++end;
    }
    const double recall = tp / positives;
    ap += (recall - prev_recall) * (tp / seen);
    prev_recall = recall;
    k = end;
  }
  return ap;
}

double average_precision_multilabel(std::span<const double> scores, std::span<const int> truth, std::size_t samples,
                                    std::size_t classes) {
  check(scores.size() == samples * classes && truth.size() == samples * classes, Errc::shape_mismatch,
        "score and truth matrices must be samples x classes");
  double sum = 0;
  std::size_t used = 0;
  std::vector<double> col_s(samples);
  std::vector<int> col_t(samples);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < samples; ++i) {
      col_s[i] = scores[i * classes + c];
      col_t[i] = truth[i * classes + c];
    }
    const double ap = average_precision(col_s, col_t);
    if (std::isnan(ap)) continue;
    sum += ap;
    ++used;
  }
  check(used > 0, Errc::no_positive_class, "no class has a positive sample");
  return sum / static_cast<double>(used);
}

double psnr(std::span<const double> pred, std::span<const double> truth, double max_value) {
  same_size(pred.size(), truth.size());
  check(!pred.empty(), Errc::empty_image, "psnr of empty input");
  double se = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) se += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  const double mse = se / static_cast<double>(pred.size());
  if (mse == 0) return kPsnrIdentical;
  return 10.0 * std::log10(max_value * max_value / mse);
}

double ssim(std::span<const double> pred, std::span<const double> truth, std::size_t height, std::size_t width,
            std::size_t channels, double max_value) {
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5;
  same_size(pred.size(), truth.size());
  check(pred.size() == height * width * channels, Errc::shape_mismatch, "ssim: size does not match H x W x C");
  check(height >= kWin && width >= kWin, Errc::shape_mismatch, "ssim needs images of at least 11 x 11");
  std::array<double, kWin> g{};
  double gsum = 0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - kWin / 2;
    g[i] = std::exp(-d * d / (2 * kSigma * kSigma));
    gsum += g[i];
  }
  for (auto& v : g) v /= gsum;
  const double c1 = (0.01 * max_value) * (0.01 * max_value), c2 = (0.03 * max_value) * (0.03 * max_value);

  double total = 0;
  std::size_t windows = 0;
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t y = 0; y + kWin <= height; ++y)
      for (std::size_t x = 0; x + kWin <= width; ++x) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (int dy = 0; dy < kWin; ++dy)
          for (int dx = 0; dx < kWin; ++dx) {
            const double w = g[dy] * g[dx];
            const std::size_t idx = ((y + dy) * width + (x + dx)) * channels + c;
            const double a = pred[idx], b = truth[idx];
            mx += w * a;
            my += w * b;
            sxx += w * a * a;
            syy += w * b * b;
            sxy += w * a * b;
          }
        const double vx = sxx - mx * mx, vy = syy - my * my, cov = sxy - mx * my;
        total += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++windows;
      }
  return total / static_cast<double>(windows);
}

}  // namespace gfm
