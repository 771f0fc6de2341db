#pragma once

#include <filesystem>
#include <vector>

namespace gfm::cli {

struct ReportArtifacts {
  std::vector<std::filesystem::path> plots;
  std::filesystem::path markdown;
};

// Scans a run directory for loss.csv (pretraining), summary.csv (ablation)
// and arp.csv files and writes, next to report.md at the top level:
//   loss_curve[-<name>].png   per loss.csv, one line per loss component
//   ablation_<axis>.png       one ARP bar chart per ablation axis
//   arp.png                   ARP per method
// Throws empty-run-directory when nothing reportable is found.
ReportArtifacts emit_report(const std::filesystem::path& run_dir);

}  // namespace gfm::cli
