// Command line front end: prepare spectra, squeeze state ensembles onto
// microcanonical windows, and run the downstream error analyses.

#include <exception>
#include <functional>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "vme/runner.hpp"

namespace {

int guarded(const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (const std::exception& e) {
    const int code = vme::runner::exit_code_for_current_exception();
    std::cerr << "error: " << e.what() << "\n";
    return code;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"variational microcanonical ensembles for a mixed-field Ising "
               "chain"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_override;
  std::string cache_override;
  std::string which = "all";
  std::string preset;
  int jobs = 1;
  bool quiet = false;

  auto add_common = [&](CLI::App* cmd, bool needs_config) {
    auto* opt = cmd->add_option("--config", config_path,
                                "experiment config (JSON)");
    if (needs_config) opt->required();
    cmd->add_option("--jobs", jobs, "worker threads for state preparation")
        ->check(CLI::Range(1, 256));
    cmd->add_option("--out", out_override, "override io.output_dir");
    cmd->add_option("--cache", cache_override,
                    "override cache directory (also: VME_CACHE_DIR)");
    cmd->add_flag("--quiet", quiet, "suppress progress lines");
  };

  auto* spectrum =
      app.add_subcommand("spectrum", "diagonalize and cache the spectra");
  add_common(spectrum, true);

  auto* vme = app.add_subcommand(
      "vme", "prepare the run pools (resumable; converged runs are kept)");
  add_common(vme, true);

  auto* analyze =
      app.add_subcommand("analyze", "emit analysis tables from cached runs");
  add_common(analyze, true);
  analyze->add_option(
      "--which", which,
      "all | dos | windows | diag | offdiag | observables | trace | entropy "
      "| resources | moments");

  auto* reproduce = app.add_subcommand(
      "reproduce", "run a self-contained preset and check result bands");
  reproduce->add_option("preset", preset,
                        "fig3 fig4 fig5 fig6 fig7a fig7c fig8 fig9 table1")
      ->required();
  add_common(reproduce, false);

  CLI11_PARSE(app, argc, argv);

  vme::runner::RunnerOpts opts;
  opts.jobs = jobs;
  opts.out_override = out_override;
  opts.cache_override = cache_override;
  opts.quiet = quiet;

  if (reproduce->parsed())
    return guarded([&] { vme::runner::cmd_reproduce(preset, opts); });

  return guarded([&] {
    auto cfg = vme::runner::load_config(config_path);
    vme::runner::Workspace ws(cfg, opts);
    if (spectrum->parsed()) {
      vme::runner::cmd_spectrum(ws);
    } else if (vme->parsed()) {
      vme::runner::cmd_vme(ws);
    } else if (analyze->parsed()) {
      vme::runner::cmd_analyze(ws, which);
    }
  });
}
