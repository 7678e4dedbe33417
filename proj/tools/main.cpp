#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <iostream>

#include "advss/experiment.hpp"
#include "advss/image_io.hpp"

extern char** environ;

namespace fs = std::filesystem;
using namespace advss;

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> n_iter;
  std::optional<std::string> output_dir;

  void attach(CLI::App* cmd) {
    cmd->add_option("--seed", seed, "Override train.seed (replaces any seed grid axis)");
    cmd->add_option("--n-iter", n_iter, "Override train.n_iter");
    cmd->add_option("--output-dir", output_dir, "Parent directory for run output");
  }

  ExperimentConfig apply(ExperimentConfig c) const {
    if (seed) {
      c.train.seed = *seed;
      if (c.ablation) c.ablation->seed.clear();
    }
    if (n_iter) {
      c.train.n_iter = *n_iter;
      if (c.train.n_decay && *c.train.n_decay >= *n_iter) c.train.n_decay.reset();
    }
    if (output_dir) c.output_dir = *output_dir;
    // Re-run full validation on the overridden values.
    return experiment_from_json(to_json(c));
  }
};

fs::path self_exe() { return fs::read_symlink("/proc/self/exe"); }

int spawn_wait(const std::vector<std::string>& args) {
  std::vector<char*> argv;
  for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);
  pid_t pid;
  if (posix_spawn(&pid, argv[0], nullptr, nullptr, argv.data(), environ) != 0)
    throw std::runtime_error("cannot launch " + args[0]);
  int status = 0;
  waitpid(pid, &status, 0);
  return WIFEXITED(status) ? WEXITSTATUS(status) : 1;
}

int cmd_train(const std::string& path, const Overrides& ov, const std::optional<std::string>& run_dir,
              const std::optional<std::string>& resume) {
  auto config = ov.apply(load_experiment(path));
  const fs::path dir = run_dir ? fs::path(*run_dir) : unique_run_dir(config.output_dir, config.name);
  std::cout << "run directory: " << dir.string() << std::endl;
  std::optional<fs::path> from;
  if (resume) from = *resume;
  return run_experiment(config, dir, from);
}

int cmd_grid(const std::string& path, const Overrides& ov, const std::optional<std::string>& grid_dir,
             bool in_process) {
  auto config = ov.apply(load_experiment(path));
  if (!config.ablation) throw ConfigError({"ablation: a grid run needs an ablation block"});
  const fs::path dir = grid_dir ? fs::path(*grid_dir) : unique_run_dir(config.output_dir, config.name + "-grid");
  std::cout << "grid directory: " << dir.string() << std::endl;

  CellRunner runner;
  if (in_process) {
    runner = [](const ExperimentConfig& cell, const fs::path& d) { return run_experiment(cell, d); };
  } else {
    const auto exe = self_exe().string();
    runner = [exe](const ExperimentConfig& cell, const fs::path& d) {
      fs::create_directories(d);
      save_experiment(cell, d / "cell_config.json");
      return spawn_wait({exe, "train", (d / "cell_config.json").string(), "--run-dir", d.string()});
    };
  }
  const auto statuses = run_grid(config, dir, runner);
  std::cout << format_report(collect_report([&] {
    std::vector<fs::path> dirs;
    for (const auto& s : statuses) dirs.push_back(s.dir);
    return dirs;
  }()));
  int failed = 0;
  for (const auto& s : statuses) failed += s.exit_code != 0;
  std::cout << statuses.size() - failed << "/" << statuses.size() << " cells completed" << std::endl;
  return failed == 0 ? 0 : 4;
}

int cmd_report(const std::vector<std::string>& dirs, const std::string& out) {
  std::vector<fs::path> paths(dirs.begin(), dirs.end());
  const auto rows = collect_report(paths);
  write_report(rows, out);
  std::cout << format_report(rows) << "written to " << out << std::endl;
  return 0;
}

int cmd_fid(const std::string& real_dir, const std::string& fake_dir, const std::string& extractor_name,
            const std::string& extractor_path) {
  auto real = read_png_dir(real_dir);
  auto fake = read_png_dir(fake_dir);
  TensorImageSource real_source(real), fake_source(fake);
  const auto extractor = make_feature_extractor(extractor_name, extractor_path);
  const double d = fid(real_source, fake_source, extractor, real.size(0), fake.size(0));
  std::cout.precision(10);
  std::cout << d << std::endl;
  return 0;
}

int cmd_sample(const std::string& checkpoint, std::int64_t count, const std::string& out, std::uint64_t stream) {
  auto state = load_checkpoint(checkpoint);
  auto images = generate_samples(*state, count, stream);
  fs::create_directories(out);
  for (std::int64_t i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%06lld.png", static_cast<long long>(i));
    write_png(fs::path(out) / name, images[i]);
  }
  std::cout << "wrote " << count << " samples to " << out << std::endl;
  return 0;
}

int cmd_config(const std::optional<std::string>& check) {
  if (check) {
    std::cout << to_json(load_experiment(*check)).dump(2) << std::endl;
    return 0;
  }
  ExperimentConfig defaults;
  std::cout << to_json(defaults).dump(2) << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial self-supervised GAN training toolkit"};
  app.require_subcommand(1);
  torch::set_num_threads(std::max(1u, std::thread::hardware_concurrency()));

  std::string config_path, report_out = "report", real_dir, fake_dir, extractor = "identity", extractor_path,
                           checkpoint, sample_out = "samples";
  std::optional<std::string> run_dir, resume, grid_dir, check;
  std::vector<std::string> report_dirs;
  bool in_process = false, defaults = false;
  std::int64_t count = 64;
  std::uint64_t stream = 0;
  Overrides train_ov, grid_ov;

  auto* train = app.add_subcommand("train", "Train one configuration");
  train->add_option("config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  train_ov.attach(train);
  train->add_option("--run-dir", run_dir, "Exact run directory (default: timestamped under output_dir)");
  train->add_option("--resume", resume, "Checkpoint to resume from")->check(CLI::ExistingFile);

  auto* grid = app.add_subcommand("grid", "Run every cell of the config's ablation grid");
  grid->add_option("config", config_path, "Experiment config with an ablation block")->required()->check(CLI::ExistingFile);
  grid_ov.attach(grid);
  grid->add_option("--grid-dir", grid_dir, "Exact grid directory");
  grid->add_flag("--in-process", in_process, "Run cells in this process instead of one process per cell");

  auto* report = app.add_subcommand("report", "Final-FID table and overlaid smoothed FID curves");
  report->add_option("dirs", report_dirs, "Run directories")->required();
  report->add_option("--out", report_out, "Output directory");

  auto* fid_cmd = app.add_subcommand("fid", "Frechet distance between two directories of PNG images");
  fid_cmd->add_option("real-dir", real_dir)->required()->check(CLI::ExistingDirectory);
  fid_cmd->add_option("fake-dir", fake_dir)->required()->check(CLI::ExistingDirectory);
  fid_cmd->add_option("--extractor", extractor, "identity | torchscript");
  fid_cmd->add_option("--extractor-path", extractor_path, "TorchScript feature module");

  auto* sample = app.add_subcommand("sample", "Write generator samples from a checkpoint as PNG files");
  sample->add_option("checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  sample->add_option("--count", count, "Number of images")->check(CLI::PositiveNumber);
  sample->add_option("--out", sample_out, "Output directory");
  sample->add_option("--stream", stream, "Sampling stream id");

  auto* config = app.add_subcommand("config", "Print the default config, or validate and normalize one");
  config->add_flag("--defaults", defaults, "Print the defaults (the default action)");
  config->add_option("--check", check, "Config to validate")->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(config_path, train_ov, run_dir, resume);
    if (*grid) return cmd_grid(config_path, grid_ov, grid_dir, in_process);
    if (*report) return cmd_report(report_dirs, report_out);
    if (*fid_cmd) return cmd_fid(real_dir, fake_dir, extractor, extractor_path);
    if (*sample) return cmd_sample(checkpoint, count, sample_out, stream);
    if (*config) return cmd_config(check);
  } catch (const ConfigError& e) {
    std::cerr << e.what() << std::endl;
    return 3;
  } catch (const DivergenceError& e) {
    std::cerr << e.what() << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
