#include <atomic>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "ctn/error.hpp"
#include "ctn/synth.hpp"
#include "test_support.hpp"

namespace ctn::testing {

std::vector<DomainDataset> small_corpus(std::int64_t train, std::int64_t test, std::uint64_t seed) {
  return synth_corpus(default_synth_spec(train, test), seed);
}

EncoderConfig tiny_encoder_config() {
  EncoderConfig cfg;
  cfg.layers = 2;
  cfg.d_model = 32;
  cfg.heads = 2;
  cfg.ffn_width = 64;
  cfg.dropout = 0.1;
  cfg.max_length = 64;
  return cfg;
}

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  const auto base = std::filesystem::temp_directory_path();
  for (;;) {
    path_ = base / ("ctn_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    if (std::filesystem::create_directories(path_)) break;
  }
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + path.string());
  out << bytes;
}

}  // namespace ctn::testing
