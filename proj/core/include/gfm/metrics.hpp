#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace gfm {

struct PrecisionRecallF1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Binary scores for `positive`; every degenerate ratio (0/0) is reported as 0.
PrecisionRecallF1 f1_scores(std::span<const int> pred, std::span<const int> truth, int positive = 1);

// Per-class IoU averaged over classes occurring in pred or truth. Throws
// label-out-of-range.
double mean_iou(std::span<const int> pred, std::span<const int> truth, int num_classes);
// IoU of one class; 0 when the class is absent from both.
double class_iou(std::span<const int> pred, std::span<const int> truth, int num_classes, int cls);

double accuracy(std::span<const int> pred, std::span<const int> truth);

// Average precision of one ranking: sum over distinct score thresholds
// (descending) of (R_n - R_{n-1}) * P_n. Returns NaN without positives.
double average_precision(std::span<const double> scores, std::span<const int> truth);

// Row-major samples x classes; mean AP over classes with at least one
// positive. Throws no-positive-class.
double average_precision_multilabel(std::span<const double> scores, std::span<const int> truth, std::size_t samples,
                                    std::size_t classes);

inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

// 10 log10(max^2 / MSE); +inf when the inputs are identical.
double psnr(std::span<const double> pred, std::span<const double> truth, double max_value = 1.0);

// Mean SSIM over every valid 11x11 window (Gaussian weights, sigma 1.5,
// K1 = 0.01, K2 = 0.03) and over channels; inputs are H x W x C interleaved.
double ssim(std::span<const double> pred, std::span<const double> truth, std::size_t height, std::size_t width,
            std::size_t channels, double max_value = 1.0);

}  // namespace gfm
