#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include "gfm/autograd.hpp"
#include "gfm/params.hpp"
#include "gfm/rng.hpp"

namespace gfm::test {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("gfm-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

// Relative error with a floor on the denominator so near-zero pairs compare
// absolutely.
inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<param>[<index>]: analytic a, numeric n"
  std::size_t checked = 0;
};

// Compares analytic gradients against central differences with step h.
// `loss` rebuilds the graph from the current parameter values. Per tensor,
// `per_tensor` coordinates are checked: the largest-|grad| entry plus random
// ones (all entries when the tensor is small enough).
inline GradCheckResult grad_check(const std::function<ag::Var<double>()>& loss,
                                  const std::vector<std::pair<std::string, ParamSet<double>*>>& groups, Rng& rng,
                                  std::size_t per_tensor = 4, double h = 1e-5) {
  for (auto& [_, ps] : groups) ps->zero_grad();
  ag::backward(loss());
  GradCheckResult out;
  for (auto& [prefix, ps] : groups) {
    for (auto& p : ps->items()) {
      auto& var = *p.var;
      const std::size_t n = var.numel();
      std::vector<double> grad = var.grad.empty() ? std::vector<double>(n, 0.0) : var.grad;
      std::vector<std::size_t> coords;
      if (n <= per_tensor) {
        for (std::size_t i = 0; i < n; ++i) coords.push_back(i);
      } else {
        coords.push_back(static_cast<std::size_t>(
            std::max_element(grad.begin(), grad.end(), [](double a, double b) { return std::abs(a) < std::abs(b); }) -
            grad.begin()));
        while (coords.size() < per_tensor) coords.push_back(static_cast<std::size_t>(rng.below(n)));
      }
      for (std::size_t i : coords) {
        const double saved = var.value.data[i];
        var.value.data[i] = saved + h;
        const double up = loss()->value[0];
        var.value.data[i] = saved - h;
        const double down = loss()->value[0];
        var.value.data[i] = saved;
        const double numeric = (up - down) / (2 * h);
        const double err = rel_error(grad[i], numeric);
        ++out.checked;
        if (err > out.max_rel_error) {
          out.max_rel_error = err;
          out.worst = prefix + p.name + "[" + std::to_string(i) + "]: analytic " + fmt_g(grad[i]) +
                      ", numeric " + fmt_g(numeric);
        }
      }
    }
  }
  for (auto& [_, ps] : groups) ps->zero_grad();
  return out;
}

}  // namespace gfm::test
