#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gfm {

// Every failure the library reports maps onto one of these kinds so callers
// (tests, CLI exit-code mapping) can branch without parsing messages.
enum class Errc {
  invalid_config,
  shape_mismatch,
  shrink_not_supported,
  ratio_out_of_range,
  empty_mask,
  teacher_not_frozen,
  zero_vector,
  non_finite,
  tp_without_pairs,
  parse_error,
  duplicate_path,
  nonpositive_gsd,
  empty_image,
  empty_manifest,
  sample_too_large,
  unwritable_destination,
  negative_input,
  non_finite_loss,
  checkpoint_io,
  data_exhausted,
  version_mismatch,
  corrupt_container,
  incompatible_channels,
  empty_split,
  scale_mismatch,
  label_out_of_range,
  no_positive_class,
  zero_baseline_score,
  missing_score,
  missing_baseline,
  inconsistent_columns,
  plan_invalid,
  empty_run_directory,
  io_error,
};

std::string_view errc_name(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& message) { throw Error(code, message); }

inline void check(bool condition, Errc code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace gfm
