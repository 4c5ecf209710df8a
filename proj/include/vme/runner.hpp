#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vme/model.hpp"
#include "vme/spectral.hpp"
#include "vme/vqa.hpp"

namespace vme::runner {

// "analysis" section of the experiment config.
struct AnalysisSection {
  std::vector<std::string> operators = {"Z", "ZZ", "X"};
  double window_sigmas = 3.0;  // s in the |E - lambda| <= s delta truncation
  int coarse_k_diag = 64;
  int coarse_k_eth = 32;
  int scrambles = 100;            // orderings for the sample-mean MSE
  double trace_subset_coeff = 1.5;  // subset size = floor(coeff * N^2)
  int trace_realizations = 20;
  int iid_trials = 400;
  std::uint64_t analysis_seed = 7;
};

// "io" section.
struct IoSection {
  std::string output_dir = "out";
  std::string cache_dir = "cache";
};

// Whole experiment: model family, ensemble preparation plan, analysis knobs.
struct ExperimentConfig {
  model::HamiltonianSpec model;  // n_sites placeholder; sizes below rule
  std::vector<int> sizes;
  std::vector<double> lambdas_over_n = {-0.5};
  // "runs" accepts an integer (every size) or {"<n>": count, ...} overrides.
  int runs = 96;
  std::map<int, int> runs_by_size;
  vqa::VmeConfig vme;  // lambda_over_n here is a default, overridden per run
  AnalysisSection analysis;
  IoSection io;

  int runs_for(int n_sites) const;
  model::HamiltonianSpec spec_for(int n_sites) const;
  vqa::VmeConfig vme_for(double lambda_over_n) const;
  // Fully resolved config (defaults filled in), keys sorted.
  nlohmann::json canonical() const;
  std::uint64_t content_hash() const;
};

// Strict parse: unknown keys, malformed values and out-of-range settings all
// throw ConfigError.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

struct RunnerOpts {
  int jobs = 1;
  std::string out_override;    // overrides io.output_dir when non-empty
  std::string cache_override;  // overrides VME_CACHE_DIR / io.cache_dir
  bool quiet = false;
};

// Shared engine behind the CLI commands and the acceptance harness: resolves
// directories, memoizes spectra and run pools (memory + disk), and keeps the
// manifest of everything written.
class Workspace {
 public:
  Workspace(ExperimentConfig cfg, RunnerOpts opts);

  const ExperimentConfig& config() const { return cfg_; }
  int jobs() const { return opts_.jobs; }
  const std::filesystem::path& out_dir() const { return out_dir_; }
  const std::filesystem::path& cache_dir() const { return cache_dir_; }

  // Exact diagonalization, cached on disk keyed by the Hamiltonian hash.
  const spectral::Spectrum& spectrum(int n_sites);

  // Run pool of config().runs converged runs at (n, lambda/N); records are
  // one JSON file per run and missing indices are recomputed, so interrupted
  // pools resume where they stopped. n_runs_override > 0 requests a
  // different pool size than the config.
  const std::vector<vqa::VariationalRun>& ensemble(int n_sites,
                                                   double lambda_over_n,
                                                   int n_runs_override = 0);

  // Like ensemble() but never computes: throws MissingArtifactError when a
  // record is absent, so `analyze` cannot silently start hours of work.
  const std::vector<vqa::VariationalRun>& ensemble_cached(
      int n_sites, double lambda_over_n, int n_runs_override = 0);

  // Record an output artifact in the manifest and flush manifest.json.
  void note_artifact(const std::filesystem::path& path,
                     const std::string& kind);

  void log(const std::string& line) const;

 private:
  ExperimentConfig cfg_;
  RunnerOpts opts_;
  std::filesystem::path out_dir_;
  std::filesystem::path cache_dir_;
  std::map<int, spectral::Spectrum> spectra_;
  std::map<std::string, std::vector<vqa::VariationalRun>> pools_;
  nlohmann::json manifest_entries_ = nlohmann::json::object();
  bool manifest_seeded_ = false;
};

// Filename fragment for an energy-density target, e.g. -0.5 -> "m0.50".
std::string lambda_tag(double lambda_over_n);

// CLI commands; all throw on failure (ConfigError, NonConvergenceError,
// MissingArtifactError) and the caller maps exceptions to exit codes.
void cmd_spectrum(Workspace& ws);
void cmd_vme(Workspace& ws);
// which: all | dos | windows | diag | offdiag | observables | trace |
// entropy | resources | moments
void cmd_analyze(Workspace& ws, const std::string& which);
// Self-contained presets (fig3 fig4 fig5 fig6 fig7a fig7c fig8 fig9 table1):
// builds the configs, prepares what is missing, analyzes, and prints
// informational result bands. Always returns normally on completion.
void cmd_reproduce(const std::string& preset, const RunnerOpts& opts);

// 0 ok, 2 config, 3 non-convergence, 4 missing or corrupt artifact.
int exit_code_for_current_exception();

}  // namespace vme::runner
