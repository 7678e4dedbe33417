#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "advss/config.hpp"

namespace advss {

/// Fresh directory "<parent>/<name>-<YYYYmmdd-HHMMSS>[-n]".
std::filesystem::path unique_run_dir(const std::filesystem::path& parent, const std::string& name);

/// Trains one configuration into `run_dir`: config.json, metrics.jsonl,
/// checkpoint.bin, samples.png, fid_curve.png and fid_curve.csv.
/// Returns 0 on success, 2 on divergence (artifacts so far are kept).
int run_experiment(const ExperimentConfig& config, const std::filesystem::path& run_dir,
                   const std::optional<std::filesystem::path>& resume_from = std::nullopt);

struct CellStatus {
  std::string label;
  std::filesystem::path dir;
  int exit_code = 0;
  std::string status;  // ok | diverged | failed
};

/// Runs one grid cell; returns its exit code.
using CellRunner = std::function<int(const ExperimentConfig& cell, const std::filesystem::path& dir)>;

/// The cell configs of a grid, each without the ablation block.
std::vector<std::pair<std::string, ExperimentConfig>> grid_cells(const ExperimentConfig& config);

/// Runs every cell into "<grid_dir>/<label>", writes grid_summary.json and
/// summary.csv, and a combined smoothed-FID plot plus report table.
std::vector<CellStatus> run_grid(const ExperimentConfig& config, const std::filesystem::path& grid_dir,
                                 const CellRunner& runner);

struct ReportRow {
  std::string name;
  std::filesystem::path dir;
  bool present = false;
  std::optional<double> final_fid;
  std::optional<double> final_smoothed_fid;
  std::optional<std::int64_t> final_iter;
  std::vector<double> iters, fids, smoothed;
};

/// Reads the metric logs of `run_dirs`; rows sorted ascending by final FID,
/// runs without FID after those, missing logs last.
std::vector<ReportRow> collect_report(const std::vector<std::filesystem::path>& run_dirs, int window = 5);

/// Writes report.csv, report.txt and fid_curves.png into `out_dir`.
void write_report(const std::vector<ReportRow>& rows, const std::filesystem::path& out_dir,
                  const std::string& title = "smoothed FID");

/// Plain-text table for a report.
std::string format_report(const std::vector<ReportRow>& rows);

}  // namespace advss
