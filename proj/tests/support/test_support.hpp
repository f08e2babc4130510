#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "ctn/data.hpp"
#include "ctn/encoder.hpp"
#include "ctn/rng.hpp"
#include "ctn/tensor.hpp"

namespace ctn::testing {

/// Uniform entries in [lo, hi).
Tensor random_tensor(const Shape& shape, SeededRng& rng, double lo = -1.0, double hi = 1.0, DType dtype = DType::f64,
                     bool requires_grad = true);

/// Entries uniform in [lo, hi) with a random sign, so |x| >= lo (keeps
/// finite differences away from kinks at 0).
Tensor random_away_from_zero(const Shape& shape, SeededRng& rng, double lo, double hi);

/// Reverse-mode gradient of loss() with respect to `leaves` against central
/// differences. Returns ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-12)
/// over the checked coordinates. When max_coords > 0 only that many randomly
/// chosen coordinates per leaf are checked.
double gradient_error(const std::function<Tensor()>& loss, const std::vector<Tensor>& leaves, double h = 1e-5,
                      std::int64_t max_coords = 0, std::uint64_t coord_seed = 0);

/// As above, but the numeric side differentiates `numeric_loss`. Used where
/// the analytic gradient is defined through a surrogate (stop-gradients).
double gradient_error_against(const std::function<Tensor()>& loss, const std::function<Tensor()>& numeric_loss,
                              const std::vector<Tensor>& leaves, double h = 1e-5, std::int64_t max_coords = 0,
                              std::uint64_t coord_seed = 0);

/// Reduces any tensor to a scalar via a fixed random projection so every
/// output entry contributes a distinct weight.
Tensor project(const Tensor& out, std::uint64_t seed);

/// One family of finite-difference checks: each call draws a random case
/// from `rng` and returns its relative error.
struct GradCase {
  std::string name;
  std::function<double(SeededRng&)> run;
};
inline void PrintTo(const GradCase& c, std::ostream* os) { *os << c.name; }

/// Every differentiable primitive.
std::vector<GradCase> primitive_grad_cases();
/// VQ tokenizer objective (straight-through surrogate for the encoder) and
/// the transformer MTP / classification losses.
std::vector<GradCase> composed_grad_cases();

/// Small, fast synthetic corpus: motion, waves, beats.
std::vector<DomainDataset> small_corpus(std::int64_t train = 24, std::int64_t test = 12, std::uint64_t seed = 7);

/// Encoder config shrunk for unit tests.
EncoderConfig tiny_encoder_config();

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace ctn::testing
