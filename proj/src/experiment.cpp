#include "advss/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "advss/image_io.hpp"

namespace advss {

namespace fs = std::filesystem;

namespace {

std::string fmt(std::optional<double> v, int precision = 4) {
  if (!v) return "";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << *v;
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::vector<Curve> smoothed_curves(const std::vector<ReportRow>& rows) {
  std::vector<Curve> curves;
  for (const auto& r : rows)
    if (!r.iters.empty()) curves.push_back({r.name, r.iters, r.smoothed});
  return curves;
}

void write_curve_csv(const fs::path& path, const ReportRow& row) {
  std::ofstream out(path);
  out << "iter,fid,fid_smoothed\n";
  out << std::setprecision(10);
  for (std::size_t i = 0; i < row.iters.size(); ++i)
    out << static_cast<std::int64_t>(row.iters[i]) << "," << row.fids[i] << "," << row.smoothed[i] << "\n";
}

}  // namespace

fs::path unique_run_dir(const fs::path& parent, const std::string& name) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&now, &tm);
  std::ostringstream stamp;
  stamp << name << "-" << std::put_time(&tm, "%Y%m%d-%H%M%S");
  auto dir = parent / stamp.str();
  for (int n = 1; fs::exists(dir); ++n) dir = parent / (stamp.str() + "-" + std::to_string(n));
  fs::create_directories(dir);
  return dir;
}

int run_experiment(const ExperimentConfig& config, const fs::path& run_dir,
                   const std::optional<fs::path>& resume_from) {
  fs::create_directories(run_dir);
  save_experiment(config, run_dir / "config.json");
  const auto dataset = load_dataset(config.dataset);

  TrainOptions options;
  options.output_dir = run_dir;
  options.resume_from = resume_from;
  options.on_record = [&](const MetricRecord& r) {
    std::cout << "[" << config.name << "] iter " << r.iter << " ae " << r.losses.ae << " d_gan " << r.losses.d_gan
              << " d_cls " << r.losses.d_cls << " g_gan " << r.losses.g_gan << " g_cls " << r.losses.g_cls;
    if (r.fid) std::cout << " fid " << *r.fid;
    std::cout << std::endl;
  };

  int code = 0;
  std::unique_ptr<TrainState> state;
  try {
    state = train(config.train, dataset, options).state;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << std::endl;
    write_text(run_dir / "status.txt", std::string("diverged: ") + e.what() + "\n");
    code = 2;
  }

  auto rows = collect_report({run_dir});
  if (!rows.empty() && !rows.front().iters.empty()) {
    write_curve_csv(run_dir / "fid_curve.csv", rows.front());
    PlotOptions plot;
    plot.title = config.name + " FID (smoothed, window 5)";
    write_png(run_dir / "fid_curve.png", plot_curves(smoothed_curves(rows), plot));
  }
  if (state) {
    write_png(run_dir / "samples.png", image_grid(generate_samples(*state, config.sample_count, 0)));
    write_text(run_dir / "status.txt", "ok\n");
  }
  return code;
}

std::vector<std::pair<std::string, ExperimentConfig>> grid_cells(const ExperimentConfig& config) {
  if (!config.ablation) throw std::invalid_argument("configuration has no ablation grid");
  std::vector<std::pair<std::string, ExperimentConfig>> cells;
  for (auto& cell : config.ablation->expand(config.train)) {
    ExperimentConfig c = config;
    c.ablation.reset();
    c.name = config.name + "-" + cell.label;
    c.train = cell.train;
    cells.emplace_back(cell.label, std::move(c));
  }
  return cells;
}

std::vector<CellStatus> run_grid(const ExperimentConfig& config, const fs::path& grid_dir, const CellRunner& runner) {
  fs::create_directories(grid_dir);
  save_experiment(config, grid_dir / "grid_config.json");
  std::vector<CellStatus> statuses;
  std::vector<fs::path> dirs;

  auto write_summary = [&] {
    json summary = json::array();
    std::ostringstream csv;
    csv << "label,status,exit_code,dir\n";
    for (const auto& s : statuses) {
      summary.push_back({{"label", s.label}, {"status", s.status}, {"exit_code", s.exit_code}, {"dir", s.dir.string()}});
      csv << s.label << "," << s.status << "," << s.exit_code << "," << s.dir.string() << "\n";
    }
    write_text(grid_dir / "grid_summary.json", summary.dump(2) + "\n");
    write_text(grid_dir / "summary.csv", csv.str());
  };

  for (const auto& [label, cell] : grid_cells(config)) {
    CellStatus s{label, grid_dir / label, 0, "ok"};
    std::cout << "=== cell " << label << std::endl;
    try {
      s.exit_code = runner(cell, s.dir);
    } catch (const std::exception& e) {
      std::cerr << "cell " << label << " failed: " << e.what() << std::endl;
      s.exit_code = 1;
    }
    s.status = s.exit_code == 0 ? "ok" : s.exit_code == 2 ? "diverged" : "failed";
    statuses.push_back(s);
    dirs.push_back(s.dir);
    write_summary();
  }

  write_report(collect_report(dirs), grid_dir, config.name + " smoothed FID");
  return statuses;
}

std::vector<ReportRow> collect_report(const std::vector<fs::path>& run_dirs, int window) {
  std::vector<ReportRow> rows;
  for (const auto& dir : run_dirs) {
    ReportRow row;
    row.dir = dir;
    row.name = dir.filename().string();
    if (row.name.empty()) row.name = dir.parent_path().filename().string();
    const auto log = dir / "metrics.jsonl";
    if (fs::exists(log)) {
      row.present = true;
      for (const auto& r : read_metric_log(log)) {
        row.final_iter = r.iter;
        if (!r.fid) continue;
        row.iters.push_back(static_cast<double>(r.iter));
        row.fids.push_back(*r.fid);
      }
      row.smoothed = smooth(row.fids, window);
      if (!row.fids.empty()) {
        row.final_fid = row.fids.back();
        row.final_smoothed_fid = row.smoothed.back();
      }
    }
    rows.push_back(std::move(row));
  }
  auto rank = [](const ReportRow& r) { return !r.present ? 2 : r.final_fid ? 0 : 1; };
  std::stable_sort(rows.begin(), rows.end(), [&](const ReportRow& a, const ReportRow& b) {
    if (rank(a) != rank(b)) return rank(a) < rank(b);
    return rank(a) == 0 && *a.final_fid < *b.final_fid;
  });
  return rows;
}

std::string format_report(const std::vector<ReportRow>& rows) {
  std::size_t width = 4;
  for (const auto& r : rows) width = std::max(width, r.name.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(width)) << "run" << "  " << std::right << std::setw(10) << "final FID"
     << "  " << std::setw(12) << "smoothed FID" << "  " << std::setw(10) << "last iter" << "\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(static_cast<int>(width)) << r.name << "  " << std::right;
    if (!r.present) {
      os << "(metric log absent)\n";
      continue;
    }
    os << std::setw(10) << (r.final_fid ? fmt(r.final_fid) : "-") << "  " << std::setw(12)
       << (r.final_smoothed_fid ? fmt(r.final_smoothed_fid) : "-") << "  " << std::setw(10)
       << (r.final_iter ? std::to_string(*r.final_iter) : "-") << "\n";
  }
  return os.str();
}

void write_report(const std::vector<ReportRow>& rows, const fs::path& out_dir, const std::string& title) {
  fs::create_directories(out_dir);
  std::ostringstream csv;
  csv << "run,dir,status,final_fid,final_smoothed_fid,final_iter\n";
  for (const auto& r : rows)
    csv << r.name << "," << r.dir.string() << "," << (r.present ? "ok" : "absent") << "," << fmt(r.final_fid, 6)
        << "," << fmt(r.final_smoothed_fid, 6) << "," << (r.final_iter ? std::to_string(*r.final_iter) : "")
        << "\n";
  write_text(out_dir / "report.csv", csv.str());
  write_text(out_dir / "report.txt", format_report(rows));
  PlotOptions plot;
  plot.title = title;
  write_png(out_dir / "fid_curves.png", plot_curves(smoothed_curves(rows), plot));
}

}  // namespace advss
