#include "ctn/archive.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "binio.hpp"

namespace ctn {

namespace detail {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  require(!in.bad(), ErrorCode::Io, "read failed for " + path.string());
  return std::move(ss).str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::Io, "cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      fail(ErrorCode::Io, "write failed for " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    fail(ErrorCode::Io, "cannot rename " + tmp.string() + " to " + path.string());
  }
}

}  // namespace detail

// ---- Manifest ---------------------------------------------------------------

void Manifest::set(const std::string& key, std::string value) {
  require(!key.empty() && key.find_first_of("=\n") == std::string::npos, ErrorCode::InvalidArgument,
          "manifest key '" + key + "' is empty or contains '=' or a newline");
  require(value.find('\n') == std::string::npos, ErrorCode::InvalidArgument, "manifest value for '" + key + "' contains a newline");
  for (auto& [k, v] : entries_)
    if (k == key) {
      v = std::move(value);
      return;
    }
  entries_.emplace_back(key, std::move(value));
}

void Manifest::set_int(const std::string& key, std::int64_t value) { set(key, std::to_string(value)); }

void Manifest::set_double(const std::string& key, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  set(key, buf);
}

bool Manifest::contains(std::string_view key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return true;
  return false;
}

const std::string& Manifest::get(std::string_view key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return v;
  fail(ErrorCode::ParseError, "missing key '" + std::string(key) + "'");
}

std::int64_t Manifest::get_int(std::string_view key) const {
  const auto& text = get(key);
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  require(ec == std::errc() && ptr == text.data() + text.size(), ErrorCode::ParseError,
          "key '" + std::string(key) + "' is not an integer: '" + text + "'");
  return v;
}

double Manifest::get_double(std::string_view key) const {
  const auto& text = get(key);
  double v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  require(ec == std::errc() && ptr == text.data() + text.size(), ErrorCode::ParseError,
          "key '" + std::string(key) + "' is not a number: '" + text + "'");
  return v;
}

std::string Manifest::serialize() const {
  std::string out;
  for (const auto& [k, v] : entries_) {
    out += k;
    out += '=';
    out += v;
    out += '\n';
  }
  return out;
}

Manifest Manifest::parse(std::string_view text, const std::string& source) {
  Manifest m;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    require(eq != std::string_view::npos && eq > 0, ErrorCode::ParseError,
            source + ":" + std::to_string(line_no) + ": expected key=value");
    m.set(std::string(line.substr(0, eq)), std::string(line.substr(eq + 1)));
  }
  return m;
}

// ---- NTA ----------------------------------------------------------------------

const Tensor* NamedTensors::find(std::string_view name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

NamedTensors to_named_tensors(const ParameterSet& params) {
  NamedTensors out;
  for (const auto& [name, t] : params.items()) out.tensors.emplace_back(name, t);
  return out;
}

namespace {
constexpr std::string_view kNtaMagic = "NTA1";
constexpr std::uint32_t kNtaVersion = 1;
constexpr std::uint8_t kDTypeF32 = 0;
}  // namespace

std::string encode_nta(const NamedTensors& archive) {
  detail::ByteWriter w;
  w.text(kNtaMagic);
  w.u32(kNtaVersion);
  w.u32(static_cast<std::uint32_t>(archive.tensors.size()));
  for (const auto& [name, tensor] : archive.tensors) {
    require(name.size() <= 0xFFFF, ErrorCode::InvalidArgument, "tensor name too long: " + name);
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.text(name);
    w.u8(kDTypeF32);
    w.u8(static_cast<std::uint8_t>(tensor.rank()));
    for (auto d : tensor.shape()) w.u64(static_cast<std::uint64_t>(d));
    const Tensor f = tensor.dtype() == DType::f32 ? tensor : tensor.to(DType::f32);
    for (float v : f.values<float>()) w.f32(v);
  }
  return w.buffer();
}

NamedTensors decode_nta(std::string_view bytes, const std::string& source) {
  detail::ByteReader r(bytes, source);
  if (bytes.size() < kNtaMagic.size() && kNtaMagic.starts_with(bytes))
    fail(ErrorCode::TruncatedFile, source + ": file ends inside the NTA1 magic");
  if (!bytes.starts_with(kNtaMagic)) fail(ErrorCode::MagicMismatch, source + ": not an NTA1 archive");
  r.take(kNtaMagic.size());
  const auto version = r.u32();
  require(version == kNtaVersion, ErrorCode::HeaderInconsistent, source + ": unsupported NTA version " + std::to_string(version));
  const auto count = r.u32();
  NamedTensors out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.u16();
    std::string name(r.take(name_len));
    const auto dtype = r.u8();
    require(dtype == kDTypeF32, ErrorCode::HeaderInconsistent, source + ": tensor '" + name + "' has unsupported dtype");
    const auto rank = r.u8();
    Shape shape;
    std::uint64_t n = 1;
    for (std::uint8_t j = 0; j < rank; ++j) {
      const auto d = r.u64();
      require(d > 0 && d < (1ULL << 40), ErrorCode::HeaderInconsistent, source + ": tensor '" + name + "' has a bad dimension");
      shape.push_back(static_cast<std::int64_t>(d));
      n *= d;
    }
    require(n * 4 <= r.remaining(), ErrorCode::TruncatedFile,
            source + ": payload of tensor '" + name + "' is shorter than its header promises");
    std::vector<float> values(n);
    for (auto& v : values) v = r.f32();
    out.tensors.emplace_back(std::move(name), Tensor::from_vector(std::move(shape), std::move(values)));
  }
  require(r.remaining() == 0, ErrorCode::HeaderInconsistent, source + ": trailing bytes after the last tensor");
  return out;
}

std::filesystem::path manifest_path(const std::filesystem::path& archive_path) {
  auto p = archive_path;
  p.replace_extension(".manifest");
  return p;
}

void save_archive(const std::filesystem::path& path, const NamedTensors& archive, const Manifest& manifest) {
  detail::write_file_atomic(path, encode_nta(archive));
  detail::write_file_atomic(manifest_path(path), manifest.serialize());
}

NamedTensors load_nta(const std::filesystem::path& path) { return decode_nta(detail::read_file(path), path.string()); }

Manifest load_manifest(const std::filesystem::path& archive_path) {
  const auto p = manifest_path(archive_path);
  return Manifest::parse(detail::read_file(p), p.string());
}

}  // namespace ctn
