#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "loldu/adapter.hpp"

namespace loldu::io {

// Adapter file, version 1. Layout (all little-endian, regardless of host):
//   magic "LOLDU1" (6 bytes)
//   version u16, flags u16 (bit 0: factors included; bit 1: f32 arrays)
//   m u32, n u32, r u32
//   alpha f64, sigma f64
//   init tag u8, seed u64
//   perm: m x u32
//   diag_r: r x f64 (f32 with flag bit 1)
//   [flag bit 0] lower_r (m*r), upper_r (r*n), residual (m*n), row-major
//   crc32 (IEEE) over all preceding bytes, u32
// Compact files (bit 0 clear) re-derive the frozen factors from the base
// matrix at load time; one factorization buys an O(m + r) file.

inline constexpr std::uint16_t kAdapterFormatVersion = 1;

enum class SaveMode { Full, Compact };

struct SaveOptions {
  SaveMode mode = SaveMode::Full;
  bool f32 = false;  // store arrays in 32-bit (lossy)
};

std::vector<std::uint8_t> save_adapter(const LolduAdapter& adapter,
                                       const SaveOptions& opts = {});

// Full-mode bytes load standalone; compact-mode bytes require the base
// weight matrix (MissingBase otherwise). Errors: BadMagic, CrcMismatch,
// VersionUnsupported, MissingBase, BaseMismatch.
LolduAdapter load_adapter(std::span<const std::uint8_t> bytes,
                          const DenseMatrix* base = nullptr);

// Exact on-disk size for given shape and options; tests pin the
// compact payload to Theta(m + r) through this.
std::size_t adapter_file_size(std::size_t m, std::size_t n, std::size_t r,
                              const SaveOptions& opts);

// Header-and-diagonal view of an adapter file; validates CRC and layout
// but does not rebuild factors, so it works on compact files without
// the base matrix.
struct AdapterInfo {
  std::uint16_t version = 0;
  bool factors_included = false;
  bool f32 = false;
  std::size_t m = 0, n = 0, r = 0;
  double alpha = 0.0;
  double sigma = 0.0;
  InitMethod init;
  std::vector<double> diag_r;
};

AdapterInfo inspect_adapter(std::span<const std::uint8_t> bytes);

// CRC-32, IEEE polynomial (reflected, 0xEDB88320).
std::uint32_t crc32(std::span<const std::uint8_t> bytes);

// --- metrics -----------------------------------------------------------

// One observation: a (run, grid cell, epoch, metric) coordinate and a
// value. epoch -1 marks run-level records (parameter counts, flags).
struct MetricsRecord {
  std::string run_id;
  std::string cell;
  long epoch = 0;
  std::string metric;
  double value = 0.0;

  bool operator==(const MetricsRecord&) const = default;
};

// Line-delimited records, one JSON object per line; numbers carry 17
// significant digits so doubles round-trip.
void write_metrics_jsonl(std::ostream& out,
                         const std::vector<MetricsRecord>& records);
// Comma-separated table with a fixed header; same number rendering.
void write_metrics_csv(std::ostream& out,
                       const std::vector<MetricsRecord>& records);
std::vector<MetricsRecord> parse_metrics_csv(std::istream& in);

// --- matrix files ------------------------------------------------------

// Text format: first line "m n", then m lines of n decimal values.
DenseMatrix read_matrix_text(std::istream& in);
void write_matrix_text(std::ostream& out, const DenseMatrix& m);

// Binary format: "LDMX", m u32, n u32, m*n f64, little-endian.
DenseMatrix read_matrix_binary(std::istream& in);
void write_matrix_binary(std::ostream& out, const DenseMatrix& m);

// Whole-file helpers; `binary` selects the format.
DenseMatrix read_matrix_file(const std::string& path, bool binary);
void write_matrix_file(const std::string& path, const DenseMatrix& m,
                       bool binary);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path,
                      std::span<const std::uint8_t> bytes);

}  // namespace loldu::io
