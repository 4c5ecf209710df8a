#include "vme/runner.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <limits>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "vme/analysis.hpp"
#include "vme/circuit.hpp"
#include "vme/errors.hpp"
#include "vme/hash.hpp"
#include "vme/io.hpp"
#include "vme/numerics.hpp"

namespace vme::runner {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// config parsing

namespace {

void require_keys(const json& sec, const std::string& where,
                  std::initializer_list<const char*> allowed) {
  for (const auto& item : sec.items()) {
    bool known = false;
    for (const char* k : allowed)
      if (item.key() == k) {
        known = true;
        break;
      }
    if (!known)
      throw ConfigError("unknown key \"" + item.key() + "\" in " + where);
  }
}

template <typename T>
T get_or(const json& sec, const std::string& where, const char* key,
         T fallback) {
  if (!sec.contains(key)) return fallback;
  try {
    return sec.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad value for " + where + "." + key);
  }
}

[[noreturn]] void bad(const std::string& msg) { throw ConfigError(msg); }

}  // namespace

int ExperimentConfig::runs_for(int n_sites) const {
  auto it = runs_by_size.find(n_sites);
  return it == runs_by_size.end() ? runs : it->second;
}

model::HamiltonianSpec ExperimentConfig::spec_for(int n_sites) const {
  model::HamiltonianSpec s = model;
  s.n_sites = n_sites;
  return s;
}

vqa::VmeConfig ExperimentConfig::vme_for(double lambda_over_n) const {
  vqa::VmeConfig v = vme;
  v.lambda_over_n = lambda_over_n;
  return v;
}

nlohmann::json ExperimentConfig::canonical() const {
  json j;
  j["model"] = {{"coupling_j", model.coupling_j},
                {"field_x", model.field_x},
                {"field_z", model.field_z},
                {"disorder_amplitude", model.disorder_amplitude},
                {"disorder_seed", model.disorder_seed}};
  json runs_j;
  if (runs_by_size.empty()) {
    runs_j = runs;
  } else {
    runs_j = json::object();
    for (int n : sizes) runs_j[std::to_string(n)] = runs_for(n);
  }
  j["vme"] = {{"sizes", sizes},
              {"lambda_over_n", lambdas_over_n},
              {"runs", runs_j},
              {"window_exponent", vme.window_exponent},
              {"bandwidth_mode",
               vme.bandwidth_mode == vqa::BandwidthMode::kExact
                   ? "exact"
                   : "approximate"},
              {"approx_bandwidth_per_site", vme.approx_bandwidth_per_site},
              {"grad_tol_start", vme.grad_tol_start},
              {"grad_tol_floor", vme.grad_tol_floor},
              {"grad_tol_shrink", vme.grad_tol_shrink},
              {"stage_iteration_cap", vme.stage_iteration_cap},
              {"max_layers", vme.max_layers},
              {"max_cost_evals", vme.max_cost_evals},
              {"master_seed", vme.master_seed}};
  j["analysis"] = {{"operators", analysis.operators},
                   {"window_sigmas", analysis.window_sigmas},
                   {"coarse_k_diag", analysis.coarse_k_diag},
                   {"coarse_k_eth", analysis.coarse_k_eth},
                   {"scrambles", analysis.scrambles},
                   {"trace_subset_coeff", analysis.trace_subset_coeff},
                   {"trace_realizations", analysis.trace_realizations},
                   {"iid_trials", analysis.iid_trials},
                   {"analysis_seed", analysis.analysis_seed}};
  j["io"] = {{"output_dir", io.output_dir}, {"cache_dir", io.cache_dir}};
  return j;
}

std::uint64_t ExperimentConfig::content_hash() const {
  const std::string dump = canonical().dump();
  return hash::fnv1a64(dump.data(), dump.size());
}

ExperimentConfig parse_config(const json& j) {
  if (!j.is_object()) bad("config root must be a JSON object");
  require_keys(j, "top level", {"model", "vme", "analysis", "io"});
  ExperimentConfig c;

  if (j.contains("model")) {
    const json& m = j.at("model");
    require_keys(m, "model",
                 {"coupling_j", "field_x", "field_z", "disorder_amplitude",
                  "disorder_seed"});
    c.model.coupling_j = get_or(m, "model", "coupling_j", c.model.coupling_j);
    c.model.field_x = get_or(m, "model", "field_x", c.model.field_x);
    c.model.field_z = get_or(m, "model", "field_z", c.model.field_z);
    c.model.disorder_amplitude =
        get_or(m, "model", "disorder_amplitude", c.model.disorder_amplitude);
    c.model.disorder_seed =
        get_or(m, "model", "disorder_seed", c.model.disorder_seed);
    if (c.model.disorder_amplitude < 0) bad("model.disorder_amplitude < 0");
  }

  if (!j.contains("vme")) bad("config needs a \"vme\" section with \"sizes\"");
  const json& v = j.at("vme");
  require_keys(v, "vme",
               {"sizes", "lambda_over_n", "runs", "window_exponent",
                "bandwidth_mode", "approx_bandwidth_per_site",
                "grad_tol_start", "grad_tol_floor", "grad_tol_shrink",
                "stage_iteration_cap", "max_layers", "max_cost_evals",
                "master_seed"});
  c.sizes = get_or(v, "vme", "sizes", std::vector<int>{});
  if (c.sizes.empty()) bad("vme.sizes must list at least one chain length");
  std::set<int> seen;
  for (int n : c.sizes) {
    if (n < 2 || n > 14) bad("vme.sizes entries must lie in [2, 14]");
    if (!seen.insert(n).second) bad("vme.sizes entries must be unique");
  }
  if (v.contains("lambda_over_n")) {
    const json& lj = v.at("lambda_over_n");
    c.lambdas_over_n.clear();
    if (lj.is_number()) {
      c.lambdas_over_n.push_back(lj.get<double>());
    } else if (lj.is_array()) {
      for (const auto& e : lj) {
        if (!e.is_number()) bad("vme.lambda_over_n entries must be numbers");
        c.lambdas_over_n.push_back(e.get<double>());
      }
    } else {
      bad("vme.lambda_over_n must be a number or an array");
    }
  }
  if (c.lambdas_over_n.empty()) bad("vme.lambda_over_n must be non-empty");
  for (double l : c.lambdas_over_n)
    if (!(l > -0.9 && l < 0.9))
      bad("vme.lambda_over_n values must lie in (-0.9, 0.9)");
  if (v.contains("runs")) {
    const json& rj = v.at("runs");
    if (rj.is_number_integer()) {
      c.runs = rj.get<int>();
    } else if (rj.is_object()) {
      for (const auto& item : rj.items()) {
        int n = 0;
        try {
          std::size_t pos = 0;
          n = std::stoi(item.key(), &pos);
          if (pos != item.key().size()) throw std::invalid_argument("");
        } catch (...) {
          bad("vme.runs keys must be chain lengths, got \"" + item.key() +
              "\"");
        }
        if (!seen.count(n))
          bad("vme.runs mentions size " + item.key() +
              " absent from vme.sizes");
        if (!item.value().is_number_integer())
          bad("vme.runs." + item.key() + " must be an integer");
        c.runs_by_size[n] = item.value().get<int>();
      }
    } else {
      bad("vme.runs must be an integer or {\"<size>\": count} object");
    }
  }
  if (c.runs < 0) bad("vme.runs < 0");
  for (const auto& [n, r] : c.runs_by_size)
    if (r < 0) bad("vme.runs for size " + std::to_string(n) + " < 0");
  c.vme.window_exponent =
      get_or(v, "vme", "window_exponent", c.vme.window_exponent);
  if (c.vme.window_exponent < -2.0 || c.vme.window_exponent > 0.0)
    bad("vme.window_exponent must lie in [-2, 0]");
  const std::string mode =
      get_or<std::string>(v, "vme", "bandwidth_mode", "exact");
  if (mode == "exact") {
    c.vme.bandwidth_mode = vqa::BandwidthMode::kExact;
  } else if (mode == "approximate") {
    c.vme.bandwidth_mode = vqa::BandwidthMode::kApproximate;
  } else {
    bad("vme.bandwidth_mode must be \"exact\" or \"approximate\"");
  }
  c.vme.approx_bandwidth_per_site = get_or(
      v, "vme", "approx_bandwidth_per_site", c.vme.approx_bandwidth_per_site);
  if (c.vme.approx_bandwidth_per_site <= 0)
    bad("vme.approx_bandwidth_per_site must be positive");
  c.vme.grad_tol_start =
      get_or(v, "vme", "grad_tol_start", c.vme.grad_tol_start);
  c.vme.grad_tol_floor =
      get_or(v, "vme", "grad_tol_floor", c.vme.grad_tol_floor);
  c.vme.grad_tol_shrink =
      get_or(v, "vme", "grad_tol_shrink", c.vme.grad_tol_shrink);
  if (!(c.vme.grad_tol_start > c.vme.grad_tol_floor) ||
      !(c.vme.grad_tol_floor > 0))
    bad("vme gradient tolerances need grad_tol_start > grad_tol_floor > 0");
  if (!(c.vme.grad_tol_shrink > 0 && c.vme.grad_tol_shrink < 1))
    bad("vme.grad_tol_shrink must lie in (0, 1)");
  c.vme.stage_iteration_cap =
      get_or(v, "vme", "stage_iteration_cap", c.vme.stage_iteration_cap);
  if (c.vme.stage_iteration_cap < 1) bad("vme.stage_iteration_cap < 1");
  c.vme.max_layers = get_or(v, "vme", "max_layers", c.vme.max_layers);
  if (c.vme.max_layers < 1 || c.vme.max_layers > 64)
    bad("vme.max_layers must lie in [1, 64]");
  c.vme.max_cost_evals =
      get_or(v, "vme", "max_cost_evals", c.vme.max_cost_evals);
  if (c.vme.max_cost_evals < 1) bad("vme.max_cost_evals < 1");
  c.vme.master_seed = get_or(v, "vme", "master_seed", c.vme.master_seed);

  if (j.contains("analysis")) {
    const json& a = j.at("analysis");
    require_keys(a, "analysis",
                 {"operators", "window_sigmas", "coarse_k_diag", "coarse_k_eth",
                  "scrambles", "trace_subset_coeff", "trace_realizations",
                  "iid_trials", "analysis_seed"});
    c.analysis.operators =
        get_or(a, "analysis", "operators", c.analysis.operators);
    if (c.analysis.operators.empty()) bad("analysis.operators is empty");
    for (const auto& op : c.analysis.operators)
      if (op != "Z" && op != "X" && op != "ZZ" && op != "XX")
        bad("analysis.operators entries must be Z, X, ZZ or XX");
    c.analysis.window_sigmas =
        get_or(a, "analysis", "window_sigmas", c.analysis.window_sigmas);
    if (c.analysis.window_sigmas <= 0) bad("analysis.window_sigmas <= 0");
    c.analysis.coarse_k_diag =
        get_or(a, "analysis", "coarse_k_diag", c.analysis.coarse_k_diag);
    c.analysis.coarse_k_eth =
        get_or(a, "analysis", "coarse_k_eth", c.analysis.coarse_k_eth);
    if (c.analysis.coarse_k_diag < 1 || c.analysis.coarse_k_eth < 1)
      bad("analysis coarse-grain widths must be >= 1");
    c.analysis.scrambles =
        get_or(a, "analysis", "scrambles", c.analysis.scrambles);
    if (c.analysis.scrambles < 1) bad("analysis.scrambles < 1");
    c.analysis.trace_subset_coeff = get_or(a, "analysis", "trace_subset_coeff",
                                           c.analysis.trace_subset_coeff);
    if (c.analysis.trace_subset_coeff <= 0)
      bad("analysis.trace_subset_coeff <= 0");
    c.analysis.trace_realizations = get_or(a, "analysis", "trace_realizations",
                                           c.analysis.trace_realizations);
    if (c.analysis.trace_realizations < 1)
      bad("analysis.trace_realizations < 1");
    c.analysis.iid_trials =
        get_or(a, "analysis", "iid_trials", c.analysis.iid_trials);
    if (c.analysis.iid_trials < 2) bad("analysis.iid_trials < 2");
    c.analysis.analysis_seed =
        get_or(a, "analysis", "analysis_seed", c.analysis.analysis_seed);
  }

  if (j.contains("io")) {
    const json& o = j.at("io");
    require_keys(o, "io", {"output_dir", "cache_dir"});
    c.io.output_dir = get_or(o, "io", "output_dir", c.io.output_dir);
    c.io.cache_dir = get_or(o, "io", "cache_dir", c.io.cache_dir);
    if (c.io.output_dir.empty() || c.io.cache_dir.empty())
      bad("io.output_dir and io.cache_dir must be non-empty");
  }
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const MissingArtifactError&) {
    throw ConfigError("config file not found: " + path.string());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  return parse_config(j);
}

std::string lambda_tag(double lambda_over_n) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%c%.2f", lambda_over_n < 0 ? 'm' : 'p',
                std::abs(lambda_over_n));
  return buf;
}

// ---------------------------------------------------------------------------
// workspace

namespace {

std::string pool_dir_name(const ExperimentConfig& cfg, int n, double lam) {
  const auto spec = cfg.spec_for(n);
  const auto v = cfg.vme_for(lam);
  std::uint64_t h = hash::kFnvOffset;
  h = hash::absorb(h, std::string("vme-pool-v1"));
  h = hash::absorb(h, spec.content_hash());
  h = hash::absorb(h, v.lambda_over_n);
  h = hash::absorb(h, v.window_exponent);
  h = hash::absorb(h, static_cast<std::uint64_t>(v.bandwidth_mode));
  h = hash::absorb(h, v.approx_bandwidth_per_site);
  h = hash::absorb(h, v.grad_tol_start);
  h = hash::absorb(h, v.grad_tol_floor);
  h = hash::absorb(h, v.grad_tol_shrink);
  h = hash::absorb(h, static_cast<std::uint64_t>(v.stage_iteration_cap));
  h = hash::absorb(h, static_cast<std::uint64_t>(v.max_layers));
  h = hash::absorb(h, v.max_cost_evals);
  h = hash::absorb(h, v.master_seed);
  char buf[80];
  std::snprintf(buf, sizeof(buf), "N%02d_%s_%s", n, lambda_tag(lam).c_str(),
                hash::hex(h).c_str());
  return buf;
}

fs::path record_path(const fs::path& dir, int run_index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "run_%04d.json", run_index);
  return dir / buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

}  // namespace

Workspace::Workspace(ExperimentConfig cfg, RunnerOpts opts)
    : cfg_(std::move(cfg)), opts_(std::move(opts)) {
  out_dir_ = opts_.out_override.empty() ? fs::path(cfg_.io.output_dir)
                                        : fs::path(opts_.out_override);
  if (!opts_.cache_override.empty()) {
    cache_dir_ = opts_.cache_override;
  } else if (const char* env = std::getenv("VME_CACHE_DIR");
             env && *env != '\0') {
    cache_dir_ = env;
  } else {
    cache_dir_ = cfg_.io.cache_dir;
  }
  if (opts_.jobs < 1) opts_.jobs = 1;
}

void Workspace::log(const std::string& line) const {
  if (!opts_.quiet) std::cout << line << "\n" << std::flush;
}

const spectral::Spectrum& Workspace::spectrum(int n_sites) {
  auto it = spectra_.find(n_sites);
  if (it != spectra_.end()) return it->second;
  const auto spec = cfg_.spec_for(n_sites);
  char name[64];
  std::snprintf(name, sizeof(name), "N%02d_%s.bin", n_sites,
                hash::hex(spec.content_hash()).c_str());
  const fs::path path = cache_dir_ / "spectra" / name;
  if (fs::exists(path)) {
    auto sp = io::load_spectrum(path, spec.content_hash());
    log("[spectrum] N=" + std::to_string(n_sites) + " loaded from " +
        path.string());
    return spectra_.emplace(n_sites, std::move(sp)).first->second;
  }
  const auto t0 = std::chrono::steady_clock::now();
  auto sp = spectral::exact_spectrum(spec);
  io::save_spectrum(path, sp);
  char line[160];
  std::snprintf(line, sizeof(line),
                "[spectrum] N=%d diagonalized in %.1fs -> %s", n_sites,
                seconds_since(t0), path.string().c_str());
  log(line);
  return spectra_.emplace(n_sites, std::move(sp)).first->second;
}

const std::vector<vqa::VariationalRun>& Workspace::ensemble(
    int n_sites, double lambda_over_n, int n_runs_override) {
  const int want =
      n_runs_override > 0 ? n_runs_override : cfg_.runs_for(n_sites);
  const std::string key = pool_dir_name(cfg_, n_sites, lambda_over_n);
  auto& pool = pools_[key];
  if (static_cast<int>(pool.size()) >= want) return pool;

  const fs::path dir = cache_dir_ / "runs" / key;
  const auto spec = cfg_.spec_for(n_sites);
  const auto vcfg = cfg_.vme_for(lambda_over_n);
  const spectral::Spectrum* sp = nullptr;
  if (vcfg.bandwidth_mode == vqa::BandwidthMode::kExact) sp = &spectrum(n_sites);

  std::vector<std::optional<vqa::VariationalRun>> slots(want);
  for (int r = 0; r < static_cast<int>(pool.size()); ++r)
    slots[r] = std::move(pool[r]);
  std::vector<int> missing;
  for (int r = static_cast<int>(pool.size()); r < want; ++r) {
    const fs::path p = record_path(dir, r);
    if (fs::exists(p)) {
      slots[r] = io::run_from_record(json::parse(io::read_file(p)), spec);
    } else {
      missing.push_back(r);
    }
  }

  if (!missing.empty()) {
    char head[200];
    std::snprintf(head, sizeof(head),
                  "[vme] N=%d lam/N=%.3f: preparing %zu of %d runs (%d worker%s)",
                  n_sites, lambda_over_n, missing.size(), want, opts_.jobs,
                  opts_.jobs == 1 ? "" : "s");
    log(head);
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::vector<std::pair<int, std::string>> failures;
    std::size_t done = 0;
    auto worker = [&]() {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= missing.size()) return;
        const int r = missing[i];
        try {
          auto run = vqa::vme_run(spec, vcfg, r, sp);
          std::lock_guard<std::mutex> lock(mu);
          io::atomic_write(record_path(dir, r),
                           io::run_record(spec, vcfg, run).dump(2) + "\n");
          ++done;
          char line[200];
          std::snprintf(line, sizeof(line),
                        "[vme] N=%d lam/N=%.3f run %d: p*=%d var=%.4g "
                        "evals=%llu %.1fs (%zu/%zu)",
                        n_sites, lambda_over_n, r, run.params.layers,
                        run.variance,
                        static_cast<unsigned long long>(run.cost_evals),
                        run.wall_seconds, done, missing.size());
          log(line);
          slots[r] = std::move(run);
        } catch (const NonConvergenceError& e) {
          std::lock_guard<std::mutex> lock(mu);
          failures.emplace_back(r, e.what());
          log("[vme] N=" + std::to_string(n_sites) + " run " +
              std::to_string(r) + " FAILED: " + e.what());
        }
      }
    };
    if (opts_.jobs == 1 || missing.size() == 1) {
      worker();
    } else {
      std::vector<std::thread> threads;
      const int k = static_cast<int>(
          std::min<std::size_t>(opts_.jobs, missing.size()));
      threads.reserve(k);
      for (int t = 0; t < k; ++t) threads.emplace_back(worker);
      for (auto& t : threads) t.join();
    }
    if (!failures.empty()) {
      std::ostringstream msg;
      msg << failures.size() << " of " << want << " runs failed at N="
          << n_sites << ", lam/N=" << lambda_over_n
          << " (converged records were kept); first failure: run "
          << failures.front().first << ": " << failures.front().second;
      // The in-memory pool was partially moved out; drop it so a retry
      // reloads the surviving records from disk.
      pools_.erase(key);
      throw NonConvergenceError(msg.str());
    }
  }

  pool.clear();
  pool.reserve(want);
  for (auto& s : slots) pool.push_back(std::move(*s));
  return pool;
}

const std::vector<vqa::VariationalRun>& Workspace::ensemble_cached(
    int n_sites, double lambda_over_n, int n_runs_override) {
  const int want =
      n_runs_override > 0 ? n_runs_override : cfg_.runs_for(n_sites);
  const std::string key = pool_dir_name(cfg_, n_sites, lambda_over_n);
  {
    auto it = pools_.find(key);
    if (it != pools_.end() && static_cast<int>(it->second.size()) >= want)
      return it->second;
  }
  const fs::path dir = cache_dir_ / "runs" / key;
  int have = 0;
  for (int r = 0; r < want; ++r)
    if (fs::exists(record_path(dir, r))) ++have;
  if (have < want) {
    std::ostringstream msg;
    msg << "run pool at N=" << n_sites << ", lam/N=" << lambda_over_n
        << " holds " << have << " of " << want
        << " records under " << dir.string()
        << "; run `vme-lab vme` (or raise vme.runs) first";
    throw MissingArtifactError(msg.str());
  }
  return ensemble(n_sites, lambda_over_n, n_runs_override);
}

void Workspace::note_artifact(const fs::path& path, const std::string& kind) {
  // The manifest accumulates across separate invocations (spectrum, vme and
  // analyze are usually distinct processes): seed once from the on-disk
  // manifest when it belongs to the same config, dropping entries whose
  // files have since disappeared. A manifest from a different config is
  // discarded wholesale.
  if (!manifest_seeded_) {
    manifest_seeded_ = true;
    const fs::path mp = out_dir_ / "manifest.json";
    if (fs::exists(mp)) {
      try {
        const json old = json::parse(io::read_file(mp));
        if (old.value("config_hash", "") == hash::hex(cfg_.content_hash()) &&
            old.contains("entries")) {
          for (const auto& [rel, entry] : old.at("entries").items())
            if (fs::exists(out_dir_ / rel)) manifest_entries_[rel] = entry;
        }
      } catch (const std::exception&) {
        // unreadable or malformed: rebuild from scratch
      }
    }
  }
  const std::string rel =
      fs::relative(path, out_dir_).generic_string();
  manifest_entries_[rel] = {{"hash", hash::hex(io::file_hash(path))},
                            {"kind", kind}};
  json m;
  m["schema"] = "vme-manifest-v1";
  m["tool"] = io::kToolVersion;
  m["config_hash"] = hash::hex(cfg_.content_hash());
  m["entries"] = manifest_entries_;
  io::atomic_write(out_dir_ / "manifest.json", m.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// analysis products

namespace {

// Broadening used when fitting the smoothed level density: a fixed fraction
// of the bandwidth, small enough that the fitted width is not inflated.
double dos_broadening(const spectral::Spectrum& spec) {
  return spec.bandwidth() / (4.0 * spec.n_sites);
}

double window_delta(Workspace& ws, int n, double lam) {
  const auto vcfg = ws.config().vme_for(lam);
  const spectral::Spectrum* sp =
      vcfg.bandwidth_mode == vqa::BandwidthMode::kExact ? &ws.spectrum(n)
                                                        : nullptr;
  const double bw = vqa::resolve_bandwidth(vcfg, n, sp);
  return vqa::window_width(n, vcfg.window_exponent, bw);
}

Eigen::VectorXd per_run_expectations(analysis::EnsembleView& view,
                                     const model::Observable& obs,
                                     int r_count) {
  const Eigen::MatrixXd& states = view.states();
  Eigen::VectorXd out(r_count);
  circuit::StateVector sv;
  sv.n_sites = view.n_sites();
  for (int r = 0; r < r_count; ++r) {
    sv.amps = states.col(r);
    out(r) = circuit::expectation(sv, obs);
  }
  return out;
}

double theoretical_gamma(const model::HamiltonianSpec& spec) {
  return 1.0 + spec.field_x * spec.field_x + spec.field_z * spec.field_z;
}

double second_moment_per_site(const model::HamiltonianSpec& spec) {
  double sum = 0.0;
  for (const auto& t : model::build_mfim(spec)) sum += t.coeff * t.coeff;
  return sum;  // tr(H^2)/2^N; divide by N for gamma
}

struct DosRow {
  int n = 0;
  double gamma = 0, e_bar = 0, rms = 0, gamma_th = 0, delta_dos = 0;
};

std::vector<DosRow> emit_dos(Workspace& ws) {
  std::vector<DosRow> rows;
  io::CsvWriter summary({"n", "gamma", "e_bar", "fit_rms", "gamma_theory",
                         "gamma_exact_moment", "dos_broadening"});
  bool any = false;
  for (int n : ws.config().sizes) {
    if (n < 8) continue;  // too few levels for a meaningful density fit
    any = true;
    const auto& spec = ws.spectrum(n);
    const double delta_dos = dos_broadening(spec);
    const auto fit = spectral::gaussian_dos_fit(spec, delta_dos);
    const auto mspec = ws.config().spec_for(n);
    DosRow row{n, fit.gamma, fit.e_bar, fit.rms, theoretical_gamma(mspec),
               delta_dos};
    rows.push_back(row);
    summary.row_values({static_cast<double>(n), fit.gamma, fit.e_bar, fit.rms,
                        row.gamma_th, second_moment_per_site(mspec) / n,
                        delta_dos});

    const double lo = spec.energies(0) + 0.05 * spec.bandwidth();
    const double hi = spec.energies(spec.dim() - 1) - 0.05 * spec.bandwidth();
    io::CsvWriter curve({"E", "dos", "fit_model"});
    const double big_delta = std::sqrt(fit.gamma * n);
    const double dim = static_cast<double>(spec.dim());
    for (int i = 0; i < 201; ++i) {
      const double e = lo + (hi - lo) * i / 200.0;
      curve.row_values(
          {e, spectral::broadened_dos(spec, e, delta_dos),
           dim * spectral::gaussian_kernel(e - fit.e_bar, big_delta)});
    }
    const fs::path p =
        ws.out_dir() / ("dos_N" + std::to_string(n) + ".csv");
    curve.write(p);
    ws.note_artifact(p, "dos-curve");
    char line[160];
    std::snprintf(line, sizeof(line),
                  "[dos] N=%d gamma=%.4f (theory %.4f) rms=%.3g", n, fit.gamma,
                  row.gamma_th, fit.rms);
    ws.log(line);
  }
  if (any) {
    const fs::path p = ws.out_dir() / "dos_summary.csv";
    summary.write(p);
    ws.note_artifact(p, "dos-summary");
  } else {
    ws.log("[dos] no sizes >= 8 configured; nothing to fit");
  }
  return rows;
}

struct WindowRow {
  int n = 0;
  double lam = 0, lambda = 0, delta = 0, mu = 0, sigma = 0;
  double mean_energy = 0, mean_variance = 0;
  int runs = 0;
};

std::vector<WindowRow> emit_windows(Workspace& ws) {
  std::vector<WindowRow> rows;
  io::CsvWriter csv({"n", "lambda_over_n", "lambda", "delta", "mu", "sigma",
                     "mu_over_n", "sigma_over_delta", "mean_energy_over_n",
                     "mean_variance", "runs"});
  for (int n : ws.config().sizes) {
    if (ws.config().runs_for(n) <= 0) continue;
    for (double lam : ws.config().lambdas_over_n) {
      const auto& pool = ws.ensemble_cached(n, lam);
      const int r_count = ws.config().runs_for(n);
      analysis::EnsembleView view(&ws.spectrum(n), pool);
      const auto fit = analysis::fit_diagonal_gaussian(
          ws.spectrum(n), view.diagonal_weights(r_count));
      const auto energies = view.energies(r_count);
      double mean_var = 0.0;
      for (int r = 0; r < r_count; ++r) mean_var += pool[r].variance;
      mean_var /= r_count;
      WindowRow row{n,
                    lam,
                    view.lambda(),
                    view.delta(),
                    fit.mu,
                    fit.sigma,
                    energies.mean(),
                    mean_var,
                    r_count};
      rows.push_back(row);
      csv.row_values({static_cast<double>(n), lam, row.lambda, row.delta,
                      fit.mu, fit.sigma, fit.mu / n, fit.sigma / row.delta,
                      energies.mean() / n, mean_var,
                      static_cast<double>(r_count)});
      char line[200];
      std::snprintf(line, sizeof(line),
                    "[windows] N=%d lam/N=%.3f: mu/N=%.4f sigma/delta=%.3f "
                    "mean<H>/N=%.4f",
                    n, lam, fit.mu / n, fit.sigma / row.delta,
                    energies.mean() / n);
      ws.log(line);
    }
  }
  const fs::path p = ws.out_dir() / "window_summary.csv";
  csv.write(p);
  ws.note_artifact(p, "window-summary");
  return rows;
}

struct DiagRow {
  int n = 0;
  double lam = 0;
  std::string op;
  double eps_final = 0, chi_final = 0, bound = 0;
};

std::vector<DiagRow> emit_diag(Workspace& ws) {
  std::vector<DiagRow> rows;
  const auto& cfg = ws.config();
  std::set<std::pair<int, std::string>> eth_written;
  for (int n : cfg.sizes) {
    if (cfg.runs_for(n) <= 0) continue;
    const auto& spec = ws.spectrum(n);
    for (double lam : cfg.lambdas_over_n) {
      const int r_count = cfg.runs_for(n);
      analysis::EnsembleView view(&spec, ws.ensemble_cached(n, lam));
      const auto mc =
          spectral::broadened_ensemble(spec, view.lambda(), view.delta());
      const auto rho = view.diagonal_weights(r_count);
      const auto rho_coarse =
          spectral::coarse_grain(spec.energies, rho, cfg.analysis.coarse_k_diag);
      const auto gfit = analysis::fit_diagonal_gaussian(spec, rho);

      io::CsvWriter rho_csv(
          {"E", "rho_R", "rho_coarse", "mc_weight", "gauss_model"});
      double model_norm = 0.0;
      for (Eigen::Index i = 0; i < spec.dim(); ++i)
        model_norm +=
            spectral::gaussian_kernel(spec.energies(i) - gfit.mu, gfit.sigma);
      for (Eigen::Index i = 0; i < spec.dim(); ++i) {
        const double model =
            spectral::gaussian_kernel(spec.energies(i) - gfit.mu, gfit.sigma) /
            model_norm;
        rho_csv.row_values(
            {spec.energies(i), rho(i), rho_coarse(i), mc.weights(i), model});
      }
      const fs::path rho_path =
          ws.out_dir() / ("diag_rho_N" + std::to_string(n) + "_lam" +
                          lambda_tag(lam) + ".csv");
      rho_csv.write(rho_path);
      ws.note_artifact(rho_path, "diag-weights");

      for (const auto& opname : cfg.analysis.operators) {
        const auto obs = model::local_observable(n, opname);
        const auto a_diag = spectral::diagonal_matrix_elements(spec, obs);
        const auto eth =
            spectral::smooth_eth_fit(spec, obs, cfg.analysis.coarse_k_eth);
        const double bound = view.delta() / n *
                             std::abs(eth.derivative(view.lambda() / n));
        io::CsvWriter err({"R", "eps_diag", "chi_over_N",
                           "delta_aprime_over_N"});
        double eps_final = 0, chi_final = 0;
        for (int r = 1; r <= r_count; ++r) {
          const double eps = analysis::diag_error(view, mc, a_diag, r);
          const double chi = analysis::chi_systematic(view, mc, eth, r);
          err.row_values({static_cast<double>(r), eps, chi, bound});
          if (r == r_count) {
            eps_final = eps;
            chi_final = chi;
          }
        }
        const fs::path err_path =
            ws.out_dir() / ("diag_error_N" + std::to_string(n) + "_lam" +
                            lambda_tag(lam) + "_" + opname + ".csv");
        err.write(err_path);
        ws.note_artifact(err_path, "diag-error");
        rows.push_back({n, lam, opname, eps_final, chi_final, bound});
        char line[200];
        std::snprintf(line, sizeof(line),
                      "[diag] N=%d lam/N=%.3f A=%s: eps(R=%d)=%.3e "
                      "bound=%.3e chi=%.3e",
                      n, lam, opname.c_str(), r_count, eps_final, bound,
                      chi_final);
        ws.log(line);

        if (!eth_written.count({n, opname})) {
          eth_written.insert({n, opname});
          const auto a_coarse = spectral::coarse_grain(
              spec.energies, a_diag, cfg.analysis.coarse_k_eth);
          io::CsvWriter ecsv({"E_over_N", "a_diag", "a_coarse", "fit"});
          for (Eigen::Index i = 0; i < spec.dim(); ++i) {
            const double x = spec.energies(i) / n;
            ecsv.row_values({x, a_diag(i), a_coarse(i), eth.value(x)});
          }
          const fs::path ep = ws.out_dir() / ("eth_N" + std::to_string(n) +
                                              "_" + opname + ".csv");
          ecsv.write(ep);
          ws.note_artifact(ep, "eth-profile");
        }
      }
    }
  }
  return rows;
}

struct OffdiagRow {
  int n = 0;
  double lam = 0;
  std::string op;
  double sigma_hat = 0, sigma_tilde = 0, capture = 0;
  double fit_sigma = 0, fit_c = 0, small_r_slope = 0;
  double iid_mc = 0, iid_analytic = 0, iid_stderr = 0;
  Eigen::Index tilde_dim = 0;
  double max_sv = 0;
};

std::vector<OffdiagRow> emit_offdiag(Workspace& ws) {
  std::vector<OffdiagRow> rows;
  const auto& cfg = ws.config();
  io::CsvWriter summary({"n", "lambda_over_n", "op", "sigma_hat",
                         "sigma_tilde", "capture", "fit_sigma", "fit_c",
                         "small_r_slope", "tilde_dim", "max_singular_value",
                         "iid_mc", "iid_analytic", "iid_stderr"});
  for (int n : cfg.sizes) {
    if (cfg.runs_for(n) <= 0) continue;
    const auto& spec = ws.spectrum(n);
    for (double lam : cfg.lambdas_over_n) {
      const int r_count = cfg.runs_for(n);
      analysis::EnsembleView view(&spec, ws.ensemble_cached(n, lam));
      for (const auto& opname : cfg.analysis.operators) {
        const auto obs = model::local_observable(n, opname);
        const auto tilde = analysis::build_truncated(
            spec, obs, view.lambda(), view.delta(), cfg.analysis.window_sigmas,
            analysis::TruncationFlavor::kTilde);
        auto xs_tilde = analysis::offdiag_samples(view, tilde);
        auto xs_hat = analysis::offdiag_samples_hat(view, obs);
        OffdiagRow row;
        row.n = n;
        row.lam = lam;
        row.op = opname;
        row.sigma_hat =
            analysis::sigma_of_samples(xs_hat.x.head(r_count));
        row.sigma_tilde =
            analysis::sigma_of_samples(xs_tilde.x.head(r_count));
        row.capture = row.sigma_hat > 0 ? row.sigma_tilde / row.sigma_hat : 0;
        row.tilde_dim = tilde.window_dim();
        row.max_sv = tilde.max_singular_value();

        const auto mse = analysis::scrambled_mse(
            xs_hat.x.head(r_count), cfg.analysis.scrambles,
            cfg.analysis.analysis_seed);
        const auto fit = analysis::fit_mse_law(mse);
        row.fit_sigma = fit.sigma;
        row.fit_c = fit.c;
        row.small_r_slope = std::numeric_limits<double>::quiet_NaN();
        if (mse.size() >= 12) {
          Eigen::VectorXd lx(11), ly(11);
          for (int r = 2; r <= 12; ++r) {
            lx(r - 2) = std::log(static_cast<double>(r));
            ly(r - 2) = std::log(std::max(mse(r - 1), 1e-300));
          }
          row.small_r_slope = num::linear_fit(lx, ly).second;
        }

        io::CsvWriter mcsv({"R", "mse", "fit_model", "sigma2_over_R"});
        const double s2 = row.sigma_hat * row.sigma_hat;
        for (int r = 1; r <= mse.size(); ++r)
          mcsv.row_values({static_cast<double>(r), mse(r - 1),
                           fit.sigma * fit.sigma / r + fit.c * fit.c,
                           s2 / r});
        const fs::path mp =
            ws.out_dir() / ("offdiag_mse_N" + std::to_string(n) + "_lam" +
                            lambda_tag(lam) + "_" + opname + ".csv");
        mcsv.write(mp);
        ws.note_artifact(mp, "offdiag-mse");

        if (row.sigma_hat > 0) {
          const auto hist = analysis::histogram(
              xs_hat.x.head(r_count), 41, -4 * row.sigma_hat,
              4 * row.sigma_hat);
          io::CsvWriter hcsv({"center", "density", "count"});
          for (Eigen::Index i = 0; i < hist.centers.size(); ++i)
            hcsv.row_values({hist.centers(i), hist.density(i),
                             static_cast<double>(hist.counts(i))});
          const fs::path hp =
              ws.out_dir() / ("offdiag_hist_N" + std::to_string(n) + "_lam" +
                              lambda_tag(lam) + "_" + opname + ".csv");
          hcsv.write(hp);
          ws.note_artifact(hp, "offdiag-hist");
        }

        const double dos_center =
            spectral::broadened_dos(spec, view.lambda(), view.delta());
        Eigen::VectorXd c0 = view.coefficients().col(0);
        const auto null = analysis::iid_null_mse(
            c0, dos_center, cfg.analysis.iid_trials, cfg.analysis.analysis_seed);
        row.iid_mc = null.mc;
        row.iid_analytic = null.analytic;
        row.iid_stderr = null.mc_stderr;

        rows.push_back(row);
        summary.row({io::format_double(n), io::format_double(lam), opname,
                     io::format_double(row.sigma_hat),
                     io::format_double(row.sigma_tilde),
                     io::format_double(row.capture),
                     io::format_double(row.fit_sigma),
                     io::format_double(row.fit_c),
                     io::format_double(row.small_r_slope),
                     io::format_double(static_cast<double>(row.tilde_dim)),
                     io::format_double(row.max_sv),
                     io::format_double(row.iid_mc),
                     io::format_double(row.iid_analytic),
                     io::format_double(row.iid_stderr)});
        char line[220];
        std::snprintf(line, sizeof(line),
                      "[offdiag] N=%d lam/N=%.3f A=%s: sigma=%.3e capture=%.3f "
                      "slope=%.2f fit_sigma=%.3e",
                      n, lam, opname.c_str(), row.sigma_hat, row.capture,
                      row.small_r_slope, row.fit_sigma);
        ws.log(line);
      }
    }
  }
  const fs::path p = ws.out_dir() / "offdiag_summary.csv";
  summary.write(p);
  ws.note_artifact(p, "offdiag-summary");
  return rows;
}

struct ObsRow {
  int n = 0;
  double lam = 0;
  std::string op;
  double mc = 0, mc_sigma = 0, vme = 0, vme_stderr = 0;
};

std::vector<ObsRow> emit_observables(Workspace& ws) {
  std::vector<ObsRow> rows;
  const auto& cfg = ws.config();
  io::CsvWriter csv({"n", "lambda_over_n", "op", "mc", "mc_sigma", "vme",
                     "vme_stderr", "abs_diff"});
  for (int n : cfg.sizes) {
    if (cfg.runs_for(n) <= 0) continue;
    const auto& spec = ws.spectrum(n);
    for (double lam : cfg.lambdas_over_n) {
      const int r_count = cfg.runs_for(n);
      analysis::EnsembleView view(&spec, ws.ensemble_cached(n, lam));
      const auto mc_ens =
          spectral::broadened_ensemble(spec, view.lambda(), view.delta());
      for (const auto& opname : cfg.analysis.operators) {
        const auto obs = model::local_observable(n, opname);
        const double mc = spectral::mc_expectation(spec, mc_ens, obs);
        const double fluct = spectral::mc_fluctuation(spec, mc_ens, obs);
        const auto per_run = per_run_expectations(view, obs, r_count);
        const auto mv = num::mean_var(per_run);
        ObsRow row{n,  lam,      opname, mc, std::sqrt(fluct),
                   mv.mean, std::sqrt(mv.var / r_count)};
        rows.push_back(row);
        csv.row({io::format_double(n), io::format_double(lam), opname,
                 io::format_double(mc), io::format_double(row.mc_sigma),
                 io::format_double(row.vme), io::format_double(row.vme_stderr),
                 io::format_double(std::abs(row.vme - mc))});
        char line[200];
        std::snprintf(line, sizeof(line),
                      "[observables] N=%d lam/N=%.3f A=%s: vme=%.5f mc=%.5f "
                      "(mc sigma %.3g)",
                      n, lam, opname.c_str(), row.vme, mc, row.mc_sigma);
        ws.log(line);
      }
    }
  }
  const fs::path p = ws.out_dir() / "observables.csv";
  csv.write(p);
  ws.note_artifact(p, "observables");
  return rows;
}

struct TraceRow {
  int n = 0;
  double lam = 0;
  analysis::TraceSweepRow sweep;
  int subset = 0;
};

std::vector<TraceRow> emit_trace(Workspace& ws) {
  std::vector<TraceRow> rows;
  const auto& cfg = ws.config();
  io::CsvWriter csv({"n", "lambda_over_n", "subsystem", "mean_distance",
                     "std_distance", "min_mixture_margin", "subset_runs",
                     "pool_runs"});
  for (int n : cfg.sizes) {
    if (cfg.runs_for(n) <= 0) continue;
    const auto& spec = ws.spectrum(n);
    const int pool_n = cfg.runs_for(n);
    const int formula =
        static_cast<int>(cfg.analysis.trace_subset_coeff * n * n);
    const int subset = std::min(formula, pool_n);
    if (subset < formula) {
      char line[160];
      std::snprintf(line, sizeof(line),
                    "[trace] N=%d: subset clamped from %d to the pool size %d;"
                    " raise vme.runs for the full study",
                    n, formula, pool_n);
      ws.log(line);
    }
    for (double lam : cfg.lambdas_over_n) {
      analysis::EnsembleView view(&spec, ws.ensemble_cached(n, lam, pool_n));
      const auto mc_ens =
          spectral::broadened_ensemble(spec, view.lambda(), view.delta());
      const auto sweep = analysis::trace_distance_sweep(
          view, mc_ens, {1, 2}, subset, cfg.analysis.trace_realizations,
          cfg.analysis.analysis_seed);
      for (const auto& srow : sweep) {
        rows.push_back({n, lam, srow, subset});
        csv.row_values({static_cast<double>(n), lam,
                        static_cast<double>(srow.subsystem_size),
                        srow.mean_distance, srow.std_distance,
                        srow.min_mixture_margin, static_cast<double>(subset),
                        static_cast<double>(pool_n)});
        char line[200];
        std::snprintf(line, sizeof(line),
                      "[trace] N=%d lam/N=%.3f |S|=%d: T=%.4f+-%.4f "
                      "margin=%.2e (R=%d)",
                      n, lam, srow.subsystem_size, srow.mean_distance,
                      srow.std_distance, srow.min_mixture_margin, subset);
        ws.log(line);
      }
    }
  }
  const fs::path p = ws.out_dir() / "trace_distance.csv";
  csv.write(p);
  ws.note_artifact(p, "trace-distance");
  return rows;
}

struct EntropyRow {
  int n = 0;
  double lam = 0;
  int size = 0;
  double vme_mean = 0, vme_stderr = 0, mc = 0, page = 0;
};

struct EntropyOut {
  std::vector<EntropyRow> rows;
  // MC-only reference at the spectrum center (lambda = 0).
  std::vector<EntropyRow> center;
};

EntropyOut emit_entropy(Workspace& ws) {
  EntropyOut out;
  const auto& cfg = ws.config();
  io::CsvWriter csv({"n", "lambda_over_n", "subsystem", "vme_mean",
                     "vme_stderr", "mc", "page"});
  for (int n : cfg.sizes) {
    if (cfg.runs_for(n) <= 0) continue;
    const auto& spec = ws.spectrum(n);
    const int max_sub = std::min(n / 2, 6);
    for (double lam : cfg.lambdas_over_n) {
      const int r_count = cfg.runs_for(n);
      analysis::EnsembleView view(&spec, ws.ensemble_cached(n, lam));
      const auto mc_ens =
          spectral::broadened_ensemble(spec, view.lambda(), view.delta());
      const Eigen::MatrixXd& states = view.states();
      for (int size = 1; size <= max_sub; ++size) {
        Eigen::VectorXd ent(r_count);
        circuit::StateVector sv;
        sv.n_sites = n;
        for (int r = 0; r < r_count; ++r) {
          sv.amps = states.col(r);
          ent(r) = analysis::entanglement_entropy(sv, 0, size);
        }
        const auto mv = num::mean_var(ent);
        EntropyRow row{n,
                       lam,
                       size,
                       mv.mean,
                       std::sqrt(mv.var / r_count),
                       analysis::mc_entropy_average(spec, mc_ens, 0, size),
                       analysis::page_entropy(n, size)};
        out.rows.push_back(row);
        csv.row_values({static_cast<double>(n), lam,
                        static_cast<double>(size), row.vme_mean,
                        row.vme_stderr, row.mc, row.page});
      }
      char line[160];
      std::snprintf(line, sizeof(line),
                    "[entropy] N=%d lam/N=%.3f: half-chain vme=%.4f mc=%.4f",
                    n, lam, out.rows.back().vme_mean, out.rows.back().mc);
      ws.log(line);
    }
  }
  const fs::path p = ws.out_dir() / "entropy.csv";
  csv.write(p);
  ws.note_artifact(p, "entropy");

  io::CsvWriter ccsv({"n", "subsystem", "mc", "page"});
  for (int n : cfg.sizes) {
    const auto& spec = ws.spectrum(n);
    const double delta = window_delta(ws, n, 0.0);
    const auto ens = spectral::broadened_ensemble(spec, 0.0, delta);
    const int max_sub = std::min(n / 2, 6);
    for (int size = 1; size <= max_sub; ++size) {
      EntropyRow row{n,
                     0.0,
                     size,
                     0.0,
                     0.0,
                     analysis::mc_entropy_average(spec, ens, 0, size),
                     analysis::page_entropy(n, size)};
      out.center.push_back(row);
      ccsv.row_values({static_cast<double>(n), static_cast<double>(size),
                       row.mc, row.page});
    }
  }
  const fs::path cp = ws.out_dir() / "entropy_mc_center.csv";
  ccsv.write(cp);
  ws.note_artifact(cp, "entropy-center");
  return out;
}

struct ResourceRow {
  int n = 0;
  double lam = 0;
  double mean_layers = 0, std_layers = 0;
  double mean_evals = 0, mean_wall = 0;
  int max_layers = 0;
};

std::vector<ResourceRow> emit_resources(Workspace& ws) {
  std::vector<ResourceRow> rows;
  const auto& cfg = ws.config();
  io::CsvWriter csv({"n", "lambda_over_n", "runs", "mean_layers", "std_layers",
                     "max_layers", "mean_cost_evals", "mean_wall_seconds"});
  for (int n : cfg.sizes) {
    if (cfg.runs_for(n) <= 0) continue;
    for (double lam : cfg.lambdas_over_n) {
      const auto& pool = ws.ensemble_cached(n, lam);
      const int r_count = cfg.runs_for(n);
      Eigen::VectorXd layers(r_count);
      double evals = 0, wall = 0;
      int maxl = 0;
      for (int r = 0; r < r_count; ++r) {
        layers(r) = pool[r].params.layers;
        evals += static_cast<double>(pool[r].cost_evals);
        wall += pool[r].wall_seconds;
        maxl = std::max(maxl, pool[r].params.layers);
      }
      const auto mv = num::mean_var(layers);
      ResourceRow row{n,       lam,
                      mv.mean, std::sqrt(mv.var),
                      evals / r_count, wall / r_count,
                      maxl};
      rows.push_back(row);
      csv.row_values({static_cast<double>(n), lam,
                      static_cast<double>(r_count), mv.mean,
                      std::sqrt(mv.var), static_cast<double>(maxl),
                      evals / r_count, wall / r_count});
      char line[160];
      std::snprintf(line, sizeof(line),
                    "[resources] N=%d lam/N=%.3f: p*=%.2f+-%.2f (max %d)", n,
                    lam, mv.mean, std::sqrt(mv.var), maxl);
      ws.log(line);
    }
  }
  const fs::path p = ws.out_dir() / "resources.csv";
  csv.write(p);
  ws.note_artifact(p, "resources");

  // Depth scaling fit per target density, when three or more sizes exist.
  json fits = json::object();
  for (double lam : cfg.lambdas_over_n) {
    std::vector<double> xs, ys;
    for (const auto& r : rows)
      if (r.lam == lam) {
        xs.push_back(r.n);
        ys.push_back(r.mean_layers);
      }
    if (xs.size() >= 3) {
      Eigen::Map<const Eigen::VectorXd> x(xs.data(), xs.size());
      Eigen::Map<const Eigen::VectorXd> y(ys.data(), ys.size());
      const auto [a, b] = num::linear_fit(x, y);
      fits[lambda_tag(lam)] = {{"intercept", a}, {"slope", b}};
      char line[140];
      std::snprintf(line, sizeof(line),
                    "[resources] depth trend lam/N=%.3f: p* ~ %.3f N %+.3f",
                    lam, b, a);
      ws.log(line);
    }
  }
  if (!fits.empty()) {
    const fs::path fp = ws.out_dir() / "depth_fit.json";
    io::atomic_write(fp, fits.dump(2) + "\n");
    ws.note_artifact(fp, "depth-fit");
  }
  return rows;
}

struct MomentRow {
  int n = 0;
  double lam = 0;
  double delta = 0, big_delta_sq = 0;
  double run_first = 0, mc_first = 0, analytic = 0;
};

std::vector<MomentRow> emit_moments(Workspace& ws) {
  std::vector<MomentRow> rows;
  const auto& cfg = ws.config();
  io::CsvWriter csv({"n", "lambda_over_n", "delta", "big_delta_sq",
                     "run_first_moment", "mc_first_moment",
                     "analytic_first_moment"});
  for (int n : cfg.sizes) {
    if (cfg.runs_for(n) <= 0) continue;
    const auto& spec = ws.spectrum(n);
    const double big_delta_sq = second_moment_per_site(cfg.spec_for(n));
    for (double lam : cfg.lambdas_over_n) {
      const int r_count = cfg.runs_for(n);
      analysis::EnsembleView view(&spec, ws.ensemble_cached(n, lam));
      const auto mc_ens =
          spectral::broadened_ensemble(spec, view.lambda(), view.delta());
      const double mc_first =
          mc_ens.weights.dot(spec.energies) - view.lambda();
      const double run_first = view.energies(r_count).mean() - view.lambda();
      MomentRow row{n,
                    lam,
                    view.delta(),
                    big_delta_sq,
                    run_first,
                    mc_first,
                    spectral::analytic_first_moment(view.lambda(), view.delta(),
                                                    big_delta_sq)};
      rows.push_back(row);
      csv.row_values({static_cast<double>(n), lam, row.delta, big_delta_sq,
                      run_first, mc_first, row.analytic});
      char line[200];
      std::snprintf(line, sizeof(line),
                    "[moments] N=%d lam/N=%.3f: tr[rho(H-lam)] mc=%.5f "
                    "analytic=%.5f runs=%.5f",
                    n, lam, mc_first, row.analytic, run_first);
      ws.log(line);
    }
  }
  const fs::path p = ws.out_dir() / "moments.csv";
  csv.write(p);
  ws.note_artifact(p, "moments");
  return rows;
}

}  // namespace

// ---------------------------------------------------------------------------
// commands

void cmd_spectrum(Workspace& ws) {
  io::CsvWriter csv({"n", "dim", "e_min", "e_max", "bandwidth",
                     "second_moment_per_site", "spec_hash"});
  for (int n : ws.config().sizes) {
    const auto& spec = ws.spectrum(n);
    const auto mspec = ws.config().spec_for(n);
    csv.row({io::format_double(n), io::format_double(spec.dim()),
             io::format_double(spec.energies(0)),
             io::format_double(spec.energies(spec.dim() - 1)),
             io::format_double(spec.bandwidth()),
             io::format_double(second_moment_per_site(mspec) / n),
             hash::hex(spec.spec_hash)});
  }
  const fs::path p = ws.out_dir() / "spectrum_summary.csv";
  csv.write(p);
  ws.note_artifact(p, "spectrum-summary");
}

void cmd_vme(Workspace& ws) {
  io::CsvWriter csv({"n", "lambda_over_n", "runs", "mean_layers",
                     "mean_cost_evals", "mean_wall_seconds"});
  for (int n : ws.config().sizes) {
    const int r_count = ws.config().runs_for(n);
    if (r_count <= 0) continue;
    for (double lam : ws.config().lambdas_over_n) {
      const auto& pool = ws.ensemble(n, lam);
      double layers = 0, evals = 0, wall = 0;
      for (int r = 0; r < r_count; ++r) {
        layers += pool[r].params.layers;
        evals += static_cast<double>(pool[r].cost_evals);
        wall += pool[r].wall_seconds;
      }
      csv.row_values({static_cast<double>(n), lam,
                      static_cast<double>(r_count), layers / r_count,
                      evals / r_count, wall / r_count});
    }
  }
  const fs::path p = ws.out_dir() / "vme_summary.csv";
  csv.write(p);
  ws.note_artifact(p, "vme-summary");
}

void cmd_analyze(Workspace& ws, const std::string& which) {
  const std::set<std::string> known = {"all",   "dos",         "windows",
                                       "diag",  "offdiag",     "observables",
                                       "trace", "entropy",     "resources",
                                       "moments"};
  if (!known.count(which))
    throw ConfigError("unknown analysis \"" + which +
                      "\"; expected one of all, dos, windows, diag, offdiag, "
                      "observables, trace, entropy, resources, moments");
  const bool all = which == "all";
  if (all || which == "dos") emit_dos(ws);
  if (all || which == "windows") emit_windows(ws);
  if (all || which == "diag") emit_diag(ws);
  if (all || which == "offdiag") emit_offdiag(ws);
  if (all || which == "observables") emit_observables(ws);
  if (all || which == "trace") emit_trace(ws);
  if (all || which == "entropy") emit_entropy(ws);
  if (all || which == "resources") emit_resources(ws);
  if (all || which == "moments") emit_moments(ws);
}

// ---------------------------------------------------------------------------
// reproduce presets

namespace {

struct BandCheck {
  std::string name;
  bool ok = false;
  std::string detail;
};

void print_bands(Workspace& ws, const std::vector<BandCheck>& bands) {
  int warns = 0;
  for (const auto& b : bands) {
    ws.log(std::string(b.ok ? "[OK]   " : "[WARN] ") + b.name + ": " +
           b.detail);
    if (!b.ok) ++warns;
  }
  char line[120];
  std::snprintf(line, sizeof(line),
                "[reproduce] %zu band check%s, %d outside the expected range",
                bands.size(), bands.size() == 1 ? "" : "s", warns);
  ws.log(line);
}

ExperimentConfig preset_base(const std::string& preset) {
  ExperimentConfig c;
  c.io.output_dir = "reproduce-" + preset;
  return c;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[220];
  std::snprintf(buf, sizeof(buf), f, a, b, c);
  return buf;
}

}  // namespace

void cmd_reproduce(const std::string& preset, const RunnerOpts& opts) {
  const std::set<std::string> known = {"fig3",  "fig4",  "fig5",
                                       "fig6",  "fig7a", "fig7c",
                                       "fig8",  "fig9",  "table1"};
  if (!known.count(preset)) {
    std::string all;
    for (const auto& k : known) all += (all.empty() ? "" : ", ") + k;
    throw ConfigError("unknown preset \"" + preset + "\"; expected one of " +
                      all);
  }

  ExperimentConfig cfg = preset_base(preset);
  if (preset == "fig3") {
    cfg.sizes = {10};
    cfg.runs = 96;
  } else if (preset == "fig4") {
    cfg.sizes = {8, 9, 10};
    cfg.runs = 96;
    cfg.analysis.operators = {"X"};
  } else if (preset == "fig5") {
    cfg.sizes = {6, 8, 10};
    cfg.runs_by_size = {{6, 64}, {8, 120}, {10, 160}};
  } else if (preset == "fig6") {
    cfg.sizes = {6, 8, 10};
    cfg.runs = 96;
  } else if (preset == "fig7a") {
    cfg.sizes = {10};
    cfg.runs = 96;
  } else if (preset == "fig7c") {
    cfg.sizes = {6, 8, 10};
    cfg.runs = 24;
  } else if (preset == "fig8") {
    cfg.sizes = {10, 12};
    cfg.runs = 0;
  } else if (preset == "fig9") {
    cfg.sizes = {10};
    cfg.runs = 96;
    cfg.analysis.operators = {"X"};
  } else if (preset == "table1") {
    cfg.sizes = {10};
    cfg.lambdas_over_n = {-0.75, -0.5, -0.25, 0.0};
    cfg.runs = 96;
  }

  Workspace ws(cfg, opts);
  ws.log("[reproduce] preset " + preset + " -> " + ws.out_dir().string());
  std::vector<BandCheck> bands;

  if (preset == "fig8") {
    const auto rows = emit_dos(ws);
    for (const auto& r : rows) {
      const double rel = std::abs(r.gamma - r.gamma_th) / r.gamma_th;
      bands.push_back({"gamma N=" + std::to_string(r.n), rel <= 0.10,
                       fmt("gamma=%.4f theory=%.4f rel=%.3f", r.gamma,
                           r.gamma_th, rel)});
    }
    print_bands(ws, bands);
    return;
  }

  cmd_spectrum(ws);
  cmd_vme(ws);

  if (preset == "fig3") {
    emit_windows(ws);
    const auto rows = emit_diag(ws);
    for (const auto& r : rows)
      bands.push_back(
          {"diag error A=" + r.op + " N=" + std::to_string(r.n),
           r.eps_final < r.bound,
           fmt("eps(R)=%.3e bound=%.3e chi=%.3e", r.eps_final, r.bound,
               r.chi_final)});
  } else if (preset == "fig4") {
    const auto rows = emit_offdiag(ws);
    for (const auto& r : rows) {
      bands.push_back({"mse slope N=" + std::to_string(r.n),
                       r.small_r_slope > -1.3 && r.small_r_slope < -0.7,
                       fmt("small-R log-log slope %.3f", r.small_r_slope)});
      bands.push_back({"window capture N=" + std::to_string(r.n),
                       r.capture >= 0.95,
                       fmt("sigma_tilde/sigma_hat=%.3f", r.capture)});
      const bool sig_ok = r.fit_sigma > 0.5 * r.sigma_hat &&
                          r.fit_sigma < 2.0 * r.sigma_hat;
      bands.push_back({"fitted sigma N=" + std::to_string(r.n), sig_ok,
                       fmt("fit %.3e vs sample %.3e", r.fit_sigma,
                           r.sigma_hat)});
    }
  } else if (preset == "fig5") {
    const auto rows = emit_trace(ws);
    for (int n : cfg.sizes) {
      double t1 = -1, t2 = -1, margin = 0;
      for (const auto& r : rows)
        if (r.n == n) {
          if (r.sweep.subsystem_size == 1) t1 = r.sweep.mean_distance;
          if (r.sweep.subsystem_size == 2) t2 = r.sweep.mean_distance;
          margin = std::min(margin, r.sweep.min_mixture_margin);
        }
      bands.push_back({"distance ordering N=" + std::to_string(n), t1 < t2,
                       fmt("T(|S|=1)=%.4f < T(|S|=2)=%.4f", t1, t2)});
      bands.push_back({"mixture bound N=" + std::to_string(n),
                       margin >= -1e-12, fmt("min margin %.2e", margin)});
    }
  } else if (preset == "fig6") {
    const auto rows = emit_observables(ws);
    for (const auto& r : rows) {
      const double tol = r.mc_sigma + 3.0 * r.vme_stderr;
      bands.push_back(
          {"A=" + r.op + " N=" + std::to_string(r.n),
           std::abs(r.vme - r.mc) <= tol,
           fmt("|vme-mc|=%.4g vs sigma_mc+3se=%.4g", std::abs(r.vme - r.mc),
               tol)});
    }
  } else if (preset == "fig7a") {
    const auto out = emit_entropy(ws);
    for (const auto& r : out.rows)
      if (r.size == r.n / 2)
        bands.push_back({"half-chain entropy N=" + std::to_string(r.n),
                         r.vme_mean < r.mc / 3.0,
                         fmt("vme=%.4f vs mc/3=%.4f", r.vme_mean, r.mc / 3.0)});
    for (const auto& r : out.center)
      if (r.size == r.n / 2) {
        const double rel = std::abs(r.mc - r.page) / r.page;
        bands.push_back({"center window vs random-state entropy N=" +
                             std::to_string(r.n),
                         rel <= 0.15,
                         fmt("mc=%.4f page=%.4f rel=%.3f", r.mc, r.page, rel)});
      }
  } else if (preset == "fig7c") {
    const auto rows = emit_resources(ws);
    for (const auto& r : rows)
      bands.push_back({"depth N=" + std::to_string(r.n),
                       r.mean_layers <= 0.26 * r.n + 1.0,
                       fmt("mean p*=%.2f vs 0.26N+1=%.2f", r.mean_layers,
                           0.26 * r.n + 1.0)});
    // Window-width study: tighter windows should need deeper circuits.
    std::vector<double> alphas = {-0.5, -0.75, -1.0};
    std::vector<double> means;
    for (double alpha : alphas) {
      ExperimentConfig acfg = cfg;
      acfg.sizes = {8};
      acfg.lambdas_over_n = {-0.75};
      acfg.runs = 24;
      acfg.runs_by_size.clear();
      acfg.vme.window_exponent = alpha;
      RunnerOpts aopts = opts;
      aopts.out_override = (ws.out_dir() / ("alpha_" + lambda_tag(alpha)))
                               .string();
      Workspace aws(acfg, aopts);
      cmd_vme(aws);
      const auto arows = emit_resources(aws);
      means.push_back(arows.at(0).mean_layers);
      ws.log(fmt("[reproduce] alpha=%.2f mean p*=%.2f", alpha,
                 arows.at(0).mean_layers));
    }
    bands.push_back({"depth grows as the window narrows",
                     means[0] <= means[1] && means[1] <= means[2],
                     fmt("p*(-0.5)=%.2f p*(-0.75)=%.2f p*(-1)=%.2f", means[0],
                         means[1], means[2])});
    bands.push_back({"depth at alpha=-1 in a plausible range",
                     means[2] >= 3.0 && means[2] <= 8.0,
                     fmt("mean p*=%.2f", means[2])});
  } else if (preset == "fig9") {
    const auto rows = emit_moments(ws);
    for (const auto& r : rows) {
      const double rel =
          std::abs(r.mc_first - r.analytic) /
          std::max(std::abs(r.mc_first), 1e-12);
      bands.push_back({"first moment N=" + std::to_string(r.n),
                       rel <= 0.35,
                       fmt("mc=%.5f analytic=%.5f rel=%.3f (series is "
                           "perturbative in delta/Delta)",
                           r.mc_first, r.analytic, rel)});
    }
    const auto orows = emit_offdiag(ws);
    for (const auto& r : orows) {
      const double z =
          std::abs(r.iid_mc - r.iid_analytic) /
          std::max(r.iid_stderr, 1e-300);
      bands.push_back({"independent-element null N=" + std::to_string(r.n),
                       z <= 3.0,
                       fmt("mc=%.3e analytic=%.3e z=%.2f", r.iid_mc,
                           r.iid_analytic, z)});
    }
  } else if (preset == "table1") {
    const auto rows = emit_windows(ws);
    for (const auto& r : rows) {
      const double mu_err = std::abs(r.mu / r.n - r.lam);
      const double ratio = r.sigma / r.delta;
      bands.push_back(
          {"window center lam/N=" + lambda_tag(r.lam), mu_err <= 0.03,
           fmt("mu/N=%.4f target %.4f", r.mu / r.n, r.lam)});
      bands.push_back(
          {"window width lam/N=" + lambda_tag(r.lam),
           ratio >= 0.7 && ratio <= 1.0,
           fmt("sigma/delta=%.3f", ratio)});
    }
  }
  print_bands(ws, bands);
}

int exit_code_for_current_exception() {
  try {
    throw;
  } catch (const ConfigError&) {
    return 2;
  } catch (const NonConvergenceError&) {
    return 3;
  } catch (const MissingArtifactError&) {
    return 4;
  } catch (...) {
    return 1;
  }
}

}  // namespace vme::runner
