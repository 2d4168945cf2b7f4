#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "CLI11.hpp"
#include "tcwae/experiment.hpp"

namespace {

std::filesystem::path gradcheck_dir() {
  if (const char* env = std::getenv("TCWAE_OUT"); env != nullptr && *env != '\0') {
    return std::filesystem::path(env) / "gradcheck";
  }
  return std::filesystem::path("runs") / "gradcheck";
}

std::pair<double, double> parse_range(const std::string& text) {
  std::istringstream in(text);
  double a = 0.0, b = 0.0;
  char comma = 0;
  if (!(in >> a >> comma >> b) || comma != ',' || !in.eof()) {
    throw CLI::ValidationError("--range", "expected a,b");
  }
  return {a, b};
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Training reuses large activation buffers every iteration; keep them on
  // the heap instead of mapping and unmapping them each time.
  mallopt(M_MMAP_MAX, 0);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"Disentangling autoencoders on factorized sprite data"};
  app.require_subcommand(1);

  tcwae::RunOptions run_opts;
  run_opts.progress = &std::cerr;

  std::string train_cfg;
  auto* train = app.add_subcommand("train", "Train one run per seed");
  train->add_option("config", train_cfg, "Experiment config (JSON)")->required();
  train->add_flag("--resume", run_opts.resume, "Reuse completed runs with a matching manifest");
  train->add_option("--progress-every", run_opts.progress_every, "Iterations between progress lines");

  std::string eval_dir;
  auto* eval = app.add_subcommand("eval", "Score a trained run");
  eval->add_option("run", eval_dir, "Run directory")->required();

  std::string traverse_dir;
  std::string range = "-4,4";
  tcwae::TraverseOptions traverse_opts;
  auto* traverse = app.add_subcommand("traverse", "Write latent traversal grids");
  traverse->add_option("run", traverse_dir, "Run directory")->required();
  traverse->add_option("--steps", traverse_opts.steps, "Values per dimension");
  traverse->add_option("--range", range, "Traversal interval a,b");
  traverse->add_option("--rows", traverse_opts.rows, "Base images per grid");

  std::string sweep_cfg;
  std::size_t workers = 1;
  auto* sweep = app.add_subcommand("sweep", "Train and score a (beta, gamma) grid");
  sweep->add_option("config", sweep_cfg, "Experiment config (JSON)")->required();
  sweep->add_option("--workers", workers, "Concurrent cells")->check(CLI::PositiveNumber);
  sweep->add_flag("--resume", run_opts.resume, "Reuse completed runs with a matching manifest");

  double corrupt = 0.0;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every objective");
  gradcheck->add_option("--corrupt-gradient", corrupt)->group("");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      for (const auto& dir : tcwae::cmd_train(train_cfg, run_opts)) std::cout << dir.string() << '\n';
    } else if (*eval) {
      const auto r = tcwae::cmd_eval(eval_dir);
      std::cout << tcwae::kScoreHeader << '\n' << r.row << '\n';
    } else if (*traverse) {
      std::tie(traverse_opts.lo, traverse_opts.hi) = parse_range(range);
      for (const auto& p : tcwae::cmd_traverse(traverse_dir, traverse_opts)) std::cout << p.string() << '\n';
    } else if (*sweep) {
      const auto r = tcwae::cmd_sweep(sweep_cfg, workers, run_opts);
      std::size_t failed = 0;
      for (const auto& c : r.cells) failed += c.status == "ok" ? 0 : 1;
      std::cout << r.dir.string() << '\n';
      if (failed != 0) std::cerr << failed << " of " << r.cells.size() << " cells failed\n";
      if (failed == r.cells.size()) return 1;
    } else if (*gradcheck) {
      const auto s = tcwae::cmd_gradcheck(gradcheck_dir(), corrupt);
      for (const auto& b : s.blocks) {
        std::cout << (b.passed ? "pass " : "FAIL ") << b.objective << ' ' << b.block << ' '
                  << b.max_rel_error << '\n';
      }
      std::cout << s.report.string() << '\n';
      return s.passed ? 0 : 1;
    }
  } catch (const tcwae::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const CLI::ValidationError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
