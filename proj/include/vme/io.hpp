#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "vme/model.hpp"
#include "vme/spectral.hpp"
#include "vme/vqa.hpp"

namespace vme::io {

inline constexpr const char* kToolVersion = "vme-lab 1.0.0";

// Write-temp-then-rename; readers never observe partial files.
void atomic_write(const std::filesystem::path& path, std::string_view bytes);

// Throws MissingArtifactError when the file does not exist.
std::string read_file(const std::filesystem::path& path);

std::uint64_t hash_bytes(std::string_view bytes);
std::uint64_t file_hash(const std::filesystem::path& path);

// 17 significant digits; round-trips any double exactly.
std::string format_double(double v);

// Column-checked CSV accumulator; write() is atomic.
class CsvWriter {
 public:
  explicit CsvWriter(const std::vector<std::string>& header);
  void row(const std::vector<std::string>& cells);
  void row_values(const std::vector<double>& values);
  const std::string& text() const { return buf_; }
  void write(const std::filesystem::path& path) const;

 private:
  std::string buf_;
  std::size_t cols_;
};

// Spectrum cache layout (little endian):
//   bytes 0..7    magic "VMESPEC1"
//   bytes 8..11   u32 format version (1)
//   bytes 12..15  u32 n_sites
//   bytes 16..23  u64 Hamiltonian content hash
//   bytes 24..31  u64 payload hash (energies + basis bytes)
//   then 2^N f64 energies, then 4^N f64 basis, column-major.
void save_spectrum(const std::filesystem::path& path,
                   const spectral::Spectrum& spec);

// Memory-maps the basis; verifies magic, version, size, source hash and
// payload hash, and throws MissingArtifactError on any mismatch.
spectral::Spectrum load_spectrum(const std::filesystem::path& path,
                                 std::uint64_t expected_spec_hash);

// One converged run with full provenance, schema "vme-run-v1".
nlohmann::json run_record(const model::HamiltonianSpec& spec,
                          const vqa::VmeConfig& cfg,
                          const vqa::VariationalRun& run);
vqa::VariationalRun run_from_record(const nlohmann::json& j,
                                    const model::HamiltonianSpec& expected_spec);

}  // namespace vme::io
