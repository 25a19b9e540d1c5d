#include "loldu/io.hpp"

#include <array>
#include <bit>
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

namespace loldu::io {

namespace {

constexpr char kMagic[6] = {'L', 'O', 'L', 'D', 'U', '1'};
constexpr std::uint16_t kFlagFactorsIncluded = 1u << 0;
constexpr std::uint16_t kFlagF32 = 1u << 1;
constexpr std::uint16_t kKnownFlags = kFlagFactorsIncluded | kFlagF32;

// --- little-endian putters/getters (host-order independent) ---

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_f64(std::vector<std::uint8_t>& out, double v) {
  put_u64(out, std::bit_cast<std::uint64_t>(v));
}
void put_f32(std::vector<std::uint8_t>& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

struct Reader {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;

  // Bounds were validated up front against the size formula; running out
  // here would be a library bug.
  std::uint8_t u8() { return bytes[pos++]; }
  std::uint16_t u16() {
    std::uint16_t v = static_cast<std::uint16_t>(bytes[pos]) |
                      static_cast<std::uint16_t>(bytes[pos + 1]) << 8;
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  float f32() { return std::bit_cast<float>(u32()); }
};

void put_array(std::vector<std::uint8_t>& out, std::span<const double> v,
               bool f32) {
  if (f32)
    for (double x : v) put_f32(out, static_cast<float>(x));
  else
    for (double x : v) put_f64(out, x);
}

std::vector<double> read_array(Reader& r, std::size_t n, bool f32) {
  std::vector<double> v(n);
  if (f32)
    for (auto& x : v) x = static_cast<double>(r.f32());
  else
    for (auto& x : v) x = r.f64();
  return v;
}

constexpr std::array<std::uint32_t, 256> make_crc_table() {
  std::array<std::uint32_t, 256> table{};
  for (std::uint32_t i = 0; i < 256; ++i) {
    std::uint32_t c = i;
    for (int k = 0; k < 8; ++k)
      c = (c & 1u) ? 0xedb88320u ^ (c >> 1) : c >> 1;
    table[i] = c;
  }
  return table;
}

constexpr std::size_t kHeaderBytes = 6 + 2 + 2 + 4 * 3 + 8 + 8 + 1 + 8;

}  // namespace

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  static constexpr auto table = make_crc_table();
  std::uint32_t c = 0xffffffffu;
  for (std::uint8_t b : bytes) c = table[(c ^ b) & 0xffu] ^ (c >> 8);
  return c ^ 0xffffffffu;
}

std::size_t adapter_file_size(std::size_t m, std::size_t n, std::size_t r,
                              const SaveOptions& opts) {
  const std::size_t word = opts.f32 ? 4 : 8;
  std::size_t size = kHeaderBytes + 4 * m + word * r + 4;  // + crc
  if (opts.mode == SaveMode::Full) size += word * (m * r + r * n + m * n);
  return size;
}

std::vector<std::uint8_t> save_adapter(const LolduAdapter& a,
                                       const SaveOptions& opts) {
  const std::size_t m = a.out_dim(), n = a.in_dim(), r = a.rank;
  std::vector<std::uint8_t> out;
  out.reserve(adapter_file_size(m, n, r, opts));
  out.insert(out.end(), kMagic, kMagic + 6);
  put_u16(out, kAdapterFormatVersion);
  std::uint16_t flags = 0;
  if (opts.mode == SaveMode::Full) flags |= kFlagFactorsIncluded;
  if (opts.f32) flags |= kFlagF32;
  put_u16(out, flags);
  put_u32(out, static_cast<std::uint32_t>(m));
  put_u32(out, static_cast<std::uint32_t>(n));
  put_u32(out, static_cast<std::uint32_t>(r));
  put_f64(out, a.alpha);
  put_f64(out, a.sigma);
  out.push_back(static_cast<std::uint8_t>(a.init.kind));
  put_u64(out, a.init.seed);
  for (std::size_t i = 0; i < m; ++i)
    put_u32(out, static_cast<std::uint32_t>(a.perm[i]));
  put_array(out, a.diag_r, opts.f32);
  if (opts.mode == SaveMode::Full) {
    put_array(out, a.lower_r.data(), opts.f32);
    put_array(out, a.upper_r.data(), opts.f32);
    put_array(out, a.residual.data(), opts.f32);
  }
  put_u32(out, crc32(out));
  return out;
}

namespace {

// Shared front half of load/inspect: validates magic, version, flags,
// length and CRC, leaving the reader just past the header scalars.
struct Header {
  bool full = false;
  bool f32 = false;
  std::uint16_t version = 0;
  std::size_t m = 0, n = 0, rank = 0;
  double alpha = 0.0, sigma = 0.0;
  InitMethod init;
};

Header read_validated_header(std::span<const std::uint8_t> bytes, Reader& r) {
  if (bytes.size() < kHeaderBytes + 4)
    throw CrcMismatch("adapter file shorter than any valid file");
  if (std::memcmp(bytes.data(), kMagic, 6) != 0)
    throw BadMagic("adapter file magic mismatch");

  r.pos = 6;
  Header h;
  h.version = r.u16();
  if (h.version > kAdapterFormatVersion)
    throw VersionUnsupported("adapter format version " +
                             std::to_string(h.version) + " is newer than " +
                             std::to_string(kAdapterFormatVersion));
  const std::uint16_t flags = r.u16();
  if (flags & ~kKnownFlags)
    throw VersionUnsupported("adapter file carries unknown flag bits");
  h.full = flags & kFlagFactorsIncluded;
  h.f32 = flags & kFlagF32;

  h.m = r.u32();
  h.n = r.u32();
  h.rank = r.u32();
  SaveOptions opts{h.full ? SaveMode::Full : SaveMode::Compact, h.f32};
  if (bytes.size() != adapter_file_size(h.m, h.n, h.rank, opts))
    throw CrcMismatch("adapter file length does not match its header");
  const std::uint32_t want = crc32(bytes.first(bytes.size() - 4));
  Reader tail{bytes, bytes.size() - 4};
  if (tail.u32() != want) throw CrcMismatch("adapter file CRC mismatch");
  if (h.rank < 1 || h.rank > std::min(h.m, h.n))
    throw RankOutOfRange("adapter file rank out of range");

  h.alpha = r.f64();
  h.sigma = r.f64();
  h.init.kind = static_cast<InitKind>(r.u8());
  if (static_cast<std::uint8_t>(h.init.kind) > 7)
    throw VersionUnsupported("adapter file init tag unknown");
  h.init.seed = r.u64();
  return h;
}

}  // namespace

AdapterInfo inspect_adapter(std::span<const std::uint8_t> bytes) {
  Reader r{bytes, 0};
  const Header h = read_validated_header(bytes, r);
  AdapterInfo info;
  info.version = h.version;
  info.factors_included = h.full;
  info.f32 = h.f32;
  info.m = h.m;
  info.n = h.n;
  info.r = h.rank;
  info.alpha = h.alpha;
  info.sigma = h.sigma;
  info.init = h.init;
  r.pos += 4 * h.m;  // skip perm
  info.diag_r = read_array(r, h.rank, h.f32);
  return info;
}

LolduAdapter load_adapter(std::span<const std::uint8_t> bytes,
                          const DenseMatrix* base) {
  Reader r{bytes, 0};
  const Header h = read_validated_header(bytes, r);
  const bool full = h.full;
  const bool f32 = h.f32;
  const std::size_t m = h.m;
  const std::size_t n = h.n;
  const std::size_t rank = h.rank;
  const double alpha = h.alpha;
  const double sigma = h.sigma;
  const InitMethod init = h.init;
  std::vector<std::size_t> perm(m);
  std::vector<bool> seen(m, false);
  for (auto& p : perm) {
    p = r.u32();
    if (p >= m || seen[p]) throw BadInput("adapter file perm not a bijection");
    seen[p] = true;
  }
  std::vector<double> diag = read_array(r, rank, f32);

  if (full) {
    LolduAdapter a;
    a.perm = std::move(perm);
    a.rank = rank;
    a.alpha = alpha;
    a.sigma = sigma;
    a.init = init;
    a.lower_r = DenseMatrix(m, rank, read_array(r, m * rank, f32));
    a.upper_r = DenseMatrix(rank, n, read_array(r, rank * n, f32));
    a.residual = DenseMatrix(m, n, read_array(r, m * n, f32));
    a.diag_r = std::move(diag);
    a.frozen_diag_norm = vec_norm(a.diag_r);
    return a;
  }

  if (base == nullptr)
    throw MissingBase("compact adapter needs the base weight matrix");
  if (base->rows() != m || base->cols() != n)
    throw BaseMismatch("base matrix shape does not match adapter file");
  LolduAdapter a = init_adapter(*base, rank, alpha, init);
  if (a.perm != perm)
    throw BaseMismatch("base matrix does not factorize to the stored pivots");
  a.diag_r = std::move(diag);
  a.sigma = sigma;
  return a;
}

// --- metrics ------------------------------------------------------------

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string json_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  return out;
}

}  // namespace

void write_metrics_jsonl(std::ostream& out,
                         const std::vector<MetricsRecord>& records) {
  for (const auto& r : records) {
    out << "{\"run_id\":\"" << json_escape(r.run_id) << "\",\"cell\":\""
        << json_escape(r.cell) << "\",\"epoch\":" << r.epoch
        << ",\"metric\":\"" << json_escape(r.metric)
        << "\",\"value\":" << format_double(r.value) << "}\n";
  }
}

void write_metrics_csv(std::ostream& out,
                       const std::vector<MetricsRecord>& records) {
  out << "run_id,cell,epoch,metric,value\n";
  for (const auto& r : records)
    out << r.run_id << ',' << r.cell << ',' << r.epoch << ',' << r.metric
        << ',' << format_double(r.value) << '\n';
}

std::vector<MetricsRecord> parse_metrics_csv(std::istream& in) {
  std::vector<MetricsRecord> records;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (first) {  // header
      first = false;
      continue;
    }
    if (line.empty()) continue;
    MetricsRecord r;
    std::stringstream ss(line);
    std::string epoch, value;
    if (!std::getline(ss, r.run_id, ',') || !std::getline(ss, r.cell, ',') ||
        !std::getline(ss, epoch, ',') || !std::getline(ss, r.metric, ',') ||
        !std::getline(ss, value))
      throw BadInput("malformed metrics csv line: " + line);
    r.epoch = std::stol(epoch);
    // strtod, not stod: subnormal values parse instead of throwing
    char* end = nullptr;
    r.value = std::strtod(value.c_str(), &end);
    if (end == value.c_str() || *end != '\0')
      throw BadInput("malformed metrics value: " + value);
    records.push_back(std::move(r));
  }
  return records;
}

// --- matrix files ---------------------------------------------------------

DenseMatrix read_matrix_text(std::istream& in) {
  std::size_t m = 0, n = 0;
  if (!(in >> m >> n) || m == 0 || n == 0)
    throw BadInput("matrix file: bad shape line");
  std::vector<double> data(m * n);
  for (auto& v : data)
    if (!(in >> v)) throw BadInput("matrix file: too few values");
  return DenseMatrix(m, n, std::move(data));
}

void write_matrix_text(std::ostream& out, const DenseMatrix& mat) {
  out << mat.rows() << ' ' << mat.cols() << '\n';
  for (std::size_t i = 0; i < mat.rows(); ++i) {
    auto row = mat.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) out << ' ';
      out << format_double(row[j]);
    }
    out << '\n';
  }
}

DenseMatrix read_matrix_binary(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "LDMX", 4) != 0)
    throw BadInput("binary matrix file: bad magic");
  std::uint8_t hdr[8];
  if (!in.read(reinterpret_cast<char*>(hdr), 8))
    throw BadInput("binary matrix file: truncated header");
  std::size_t m = 0, n = 0;
  for (int i = 0; i < 4; ++i) {
    m |= static_cast<std::size_t>(hdr[i]) << (8 * i);
    n |= static_cast<std::size_t>(hdr[4 + i]) << (8 * i);
  }
  if (m == 0 || n == 0) throw BadInput("binary matrix file: empty shape");
  std::vector<double> data(m * n);
  for (auto& v : data) {
    std::uint8_t b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8))
      throw BadInput("binary matrix file: truncated payload");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
      bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    v = std::bit_cast<double>(bits);
  }
  return DenseMatrix(m, n, std::move(data));
}

void write_matrix_binary(std::ostream& out, const DenseMatrix& mat) {
  out.write("LDMX", 4);
  std::vector<std::uint8_t> hdr;
  put_u32(hdr, static_cast<std::uint32_t>(mat.rows()));
  put_u32(hdr, static_cast<std::uint32_t>(mat.cols()));
  out.write(reinterpret_cast<const char*>(hdr.data()),
            static_cast<std::streamsize>(hdr.size()));
  std::vector<std::uint8_t> payload;
  payload.reserve(mat.data().size() * 8);
  for (double v : mat.data()) put_f64(payload, v);
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
}

DenseMatrix read_matrix_file(const std::string& path, bool binary) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw IoFailure("cannot open " + path);
  return binary ? read_matrix_binary(in) : read_matrix_text(in);
}

void write_matrix_file(const std::string& path, const DenseMatrix& m,
                       bool binary) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw IoFailure("cannot open " + path + " for writing");
  binary ? write_matrix_binary(out, m) : write_matrix_text(out, m);
  if (!out) throw IoFailure("write failed: " + path);
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

void write_file_bytes(const std::string& path,
                      std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoFailure("write failed: " + path);
}

}  // namespace loldu::io
