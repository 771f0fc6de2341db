#include "gfm/error.hpp"

namespace gfm {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::invalid_config: return "invalid-config";
    case Errc::shape_mismatch: return "shape-mismatch";
    case Errc::shrink_not_supported: return "shrink-not-supported";
    case Errc::ratio_out_of_range: return "ratio-out-of-range";
    case Errc::empty_mask: return "empty-mask";
    case Errc::teacher_not_frozen: return "teacher-not-frozen";
    case Errc::zero_vector: return "zero-vector";
    case Errc::non_finite: return "non-finite";
    case Errc::tp_without_pairs: return "tp-without-pairs";
    case Errc::parse_error: return "parse-error";
    case Errc::duplicate_path: return "duplicate-path";
    case Errc::nonpositive_gsd: return "nonpositive-gsd";
    case Errc::empty_image: return "empty-image";
    case Errc::empty_manifest: return "empty-manifest";
    case Errc::sample_too_large: return "sample-too-large";
    case Errc::unwritable_destination: return "unwritable-destination";
    case Errc::negative_input: return "negative-input";
    case Errc::non_finite_loss: return "non-finite-loss";
    case Errc::checkpoint_io: return "checkpoint-io";
    case Errc::data_exhausted: return "data-exhausted";
    case Errc::version_mismatch: return "version-mismatch";
    case Errc::corrupt_container: return "corrupt-container";
    case Errc::incompatible_channels: return "incompatible-channels";
    case Errc::empty_split: return "empty-split";
    case Errc::scale_mismatch: return "scale-mismatch";
    case Errc::label_out_of_range: return "label-out-of-range";
    case Errc::no_positive_class: return "no-positive-class";
    case Errc::zero_baseline_score: return "zero-baseline-score";
    case Errc::missing_score: return "missing-score";
    case Errc::missing_baseline: return "missing-baseline";
    case Errc::inconsistent_columns: return "inconsistent-columns";
    case Errc::plan_invalid: return "plan-invalid";
    case Errc::empty_run_directory: return "empty-run-directory";
    case Errc::io_error: return "io-error";
  }
  return "unknown";
}

}  // namespace gfm
