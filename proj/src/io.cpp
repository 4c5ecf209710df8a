#include "vme/io.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <bit>
#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>

#include "vme/errors.hpp"
#include "vme/hash.hpp"

static_assert(std::endian::native == std::endian::little,
              "spectrum cache assumes little-endian doubles");

namespace vme::io {

namespace fs = std::filesystem;

void atomic_write(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      fs::remove(tmp);
      throw std::runtime_error("short write to " + tmp.string());
    }
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("missing file: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return bytes;
}

std::uint64_t hash_bytes(std::string_view bytes) {
  return hash::fnv1a64(bytes.data(), bytes.size());
}

std::uint64_t file_hash(const fs::path& path) {
  return hash_bytes(read_file(path));
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

CsvWriter::CsvWriter(const std::vector<std::string>& header)
    : cols_(header.size()) {
  if (header.empty()) throw std::invalid_argument("empty CSV header");
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i) buf_ += ',';
    buf_ += header[i];
  }
  buf_ += '\n';
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  if (cells.size() != cols_)
    throw std::invalid_argument("CSV row width mismatch");
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) buf_ += ',';
    buf_ += cells[i];
  }
  buf_ += '\n';
}

void CsvWriter::row_values(const std::vector<double>& values) {
  std::vector<std::string> cells;
  cells.reserve(values.size());
  for (double v : values) cells.push_back(format_double(v));
  row(cells);
}

void CsvWriter::write(const fs::path& path) const { atomic_write(path, buf_); }

namespace {

constexpr char kMagic[8] = {'V', 'M', 'E', 'S', 'P', 'E', 'C', '1'};
constexpr std::uint32_t kSpectrumFormat = 1;
constexpr std::size_t kHeaderBytes = 32;

void put_u32(std::string& s, std::uint32_t v) {
  s.append(reinterpret_cast<const char*>(&v), 4);
}
void put_u64(std::string& s, std::uint64_t v) {
  s.append(reinterpret_cast<const char*>(&v), 8);
}

struct Mapping {
  void* addr = nullptr;
  std::size_t len = 0;
  ~Mapping() {
    if (addr) ::munmap(addr, len);
  }
};

}  // namespace

void save_spectrum(const fs::path& path, const spectral::Spectrum& spec) {
  const std::size_t dim = spec.dim();
  const std::size_t payload =
      sizeof(double) * (dim + dim * dim);
  std::string bytes;
  bytes.reserve(kHeaderBytes + payload);
  bytes.append(kMagic, sizeof(kMagic));
  put_u32(bytes, kSpectrumFormat);
  put_u32(bytes, static_cast<std::uint32_t>(spec.n_sites));
  put_u64(bytes, spec.spec_hash);
  put_u64(bytes, 0);  // payload hash backfilled below

  bytes.append(reinterpret_cast<const char*>(spec.energies.data()),
               sizeof(double) * dim);
  bytes.append(reinterpret_cast<const char*>(spec.basis.view().data()),
               sizeof(double) * dim * dim);

  const std::uint64_t payload_hash =
      hash::fnv1a64(bytes.data() + kHeaderBytes, bytes.size() - kHeaderBytes);
  std::memcpy(bytes.data() + 24, &payload_hash, 8);
  atomic_write(path, bytes);
}

spectral::Spectrum load_spectrum(const fs::path& path,
                                 std::uint64_t expected_spec_hash) {
  int fd = ::open(path.c_str(), O_RDONLY);
  if (fd < 0) throw MissingArtifactError("missing spectrum cache: " + path.string());
  struct stat st {};
  if (::fstat(fd, &st) != 0) {
    ::close(fd);
    throw MissingArtifactError("cannot stat " + path.string());
  }
  auto map = std::make_shared<Mapping>();
  map->len = static_cast<std::size_t>(st.st_size);
  map->addr = ::mmap(nullptr, map->len, PROT_READ, MAP_PRIVATE, fd, 0);
  ::close(fd);
  if (map->addr == MAP_FAILED) {
    map->addr = nullptr;
    throw MissingArtifactError("cannot map " + path.string());
  }
  const char* base = static_cast<const char*>(map->addr);
  auto corrupt = [&](const char* why) -> MissingArtifactError {
    return MissingArtifactError("corrupt spectrum cache " + path.string() +
                                ": " + why);
  };
  if (map->len < kHeaderBytes || std::memcmp(base, kMagic, 8) != 0)
    throw corrupt("bad magic");
  std::uint32_t version, n_sites;
  std::uint64_t spec_hash, payload_hash;
  std::memcpy(&version, base + 8, 4);
  std::memcpy(&n_sites, base + 12, 4);
  std::memcpy(&spec_hash, base + 16, 8);
  std::memcpy(&payload_hash, base + 24, 8);
  if (version != kSpectrumFormat) throw corrupt("unsupported format version");
  if (n_sites < 2 || n_sites > 14) throw corrupt("implausible system size");
  if (spec_hash != expected_spec_hash)
    throw corrupt("cache was built from a different Hamiltonian");
  const std::size_t dim = std::size_t{1} << n_sites;
  const std::size_t want = kHeaderBytes + sizeof(double) * (dim + dim * dim);
  if (map->len != want) throw corrupt("truncated payload");
  if (hash::fnv1a64(base + kHeaderBytes, map->len - kHeaderBytes) != payload_hash)
    throw corrupt("payload checksum mismatch");

  spectral::Spectrum spec;
  spec.n_sites = static_cast<int>(n_sites);
  spec.spec_hash = spec_hash;
  spec.energies.resize(static_cast<Eigen::Index>(dim));
  std::memcpy(spec.energies.data(), base + kHeaderBytes, sizeof(double) * dim);
  const double* basis_ptr = reinterpret_cast<const double*>(
      base + kHeaderBytes + sizeof(double) * dim);
  spec.basis = spectral::Basis::view(map, basis_ptr,
                                     static_cast<Eigen::Index>(dim));
  return spec;
}

nlohmann::json run_record(const model::HamiltonianSpec& spec,
                          const vqa::VmeConfig& cfg,
                          const vqa::VariationalRun& run) {
  nlohmann::json j;
  j["schema"] = "vme-run-v1";
  j["tool"] = kToolVersion;
  j["model"] = {{"n_sites", spec.n_sites},
                {"coupling_j", spec.coupling_j},
                {"field_x", spec.field_x},
                {"field_z", spec.field_z},
                {"disorder_amplitude", spec.disorder_amplitude},
                {"disorder_seed", spec.disorder_seed},
                {"content_hash", hash::hex(spec.content_hash())}};
  j["window"] = {{"lambda_over_n", run.lambda_over_n},
                 {"lambda", run.lambda},
                 {"delta", run.delta},
                 {"bandwidth", run.bandwidth},
                 {"window_exponent", cfg.window_exponent}};
  std::vector<double> angles(run.params.angles.data(),
                             run.params.angles.data() + run.params.angles.size());
  j["run"] = {{"master_seed", run.master_seed},
              {"run_index", run.run_index},
              {"ansatz", circuit::AnsatzParams::kLayout},
              {"layers", run.params.layers},
              {"angles", std::move(angles)}};
  j["result"] = {{"cost", run.cost},
                 {"variance", run.variance},
                 {"energy", run.energy},
                 {"cost_evals", run.cost_evals},
                 {"wall_seconds", run.wall_seconds}};
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : run.stages) {
    stages.push_back({{"layers", s.layers},
                      {"grad_tol", s.grad_tol},
                      {"iters", s.iters},
                      {"grad_inf", s.grad_inf},
                      {"cost", s.cost},
                      {"variance", s.variance},
                      {"energy", s.energy},
                      {"cost_evals", s.cost_evals},
                      {"note", s.note}});
  }
  j["stages"] = std::move(stages);
  return j;
}

vqa::VariationalRun run_from_record(const nlohmann::json& j,
                                    const model::HamiltonianSpec& expected_spec) {
  if (j.value("schema", "") != "vme-run-v1")
    throw MissingArtifactError("run record has unknown schema");
  const auto& m = j.at("model");
  if (m.at("content_hash").get<std::string>() !=
      hash::hex(expected_spec.content_hash()))
    throw MissingArtifactError(
        "run record was produced for a different Hamiltonian");
  vqa::VariationalRun run;
  run.n_sites = m.at("n_sites").get<int>();
  const auto& w = j.at("window");
  run.lambda_over_n = w.at("lambda_over_n").get<double>();
  run.lambda = w.at("lambda").get<double>();
  run.delta = w.at("delta").get<double>();
  run.bandwidth = w.at("bandwidth").get<double>();
  const auto& r = j.at("run");
  run.master_seed = r.at("master_seed").get<std::uint64_t>();
  run.run_index = r.at("run_index").get<int>();
  if (r.at("ansatz").get<std::string>() != circuit::AnsatzParams::kLayout)
    throw MissingArtifactError("run record uses an unknown ansatz layout");
  run.params.n_sites = run.n_sites;
  run.params.layers = r.at("layers").get<int>();
  const auto angles = r.at("angles").get<std::vector<double>>();
  run.params.angles = Eigen::Map<const Eigen::VectorXd>(
      angles.data(), static_cast<Eigen::Index>(angles.size()));
  if (run.params.angles.size() !=
      static_cast<Eigen::Index>(run.params.layers) *
          static_cast<Eigen::Index>(run.params.per_layer()))
    throw MissingArtifactError("run record angle count mismatch");
  const auto& res = j.at("result");
  run.cost = res.at("cost").get<double>();
  run.variance = res.at("variance").get<double>();
  run.energy = res.at("energy").get<double>();
  run.cost_evals = res.at("cost_evals").get<std::uint64_t>();
  run.wall_seconds = res.at("wall_seconds").get<double>();
  if (j.contains("stages")) {
    for (const auto& s : j.at("stages")) {
      vqa::StageLog log;
      log.layers = s.at("layers").get<int>();
      log.grad_tol = s.at("grad_tol").get<double>();
      log.iters = s.at("iters").get<int>();
      log.grad_inf = s.at("grad_inf").get<double>();
      log.cost = s.at("cost").get<double>();
      log.variance = s.at("variance").get<double>();
      log.energy = s.at("energy").get<double>();
      log.cost_evals = s.at("cost_evals").get<std::uint64_t>();
      log.note = s.value("note", "");
      run.stages.push_back(std::move(log));
    }
  }
  return run;
}

}  // namespace vme::io
