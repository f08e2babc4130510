#include "ctn/sax.hpp"

#include <algorithm>
#include <cmath>

#include "ctn/error.hpp"

namespace ctn {

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Bisection to the last representable step; the CDF is monotone.
double normal_quantile(double p) {
  double lo = -40, hi = 40;
  for (int i = 0; i < 200 && lo < hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    (normal_cdf(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

std::vector<double> sax_breakpoints(std::int64_t alphabet_size) {
  require(alphabet_size >= 2 && alphabet_size <= 16, ErrorCode::InvalidArgument,
          "SAX alphabet size must lie in [2, 16], got " + std::to_string(alphabet_size));
  std::vector<double> out;
  for (std::int64_t i = 1; i < alphabet_size; ++i) {
    // Exact zero for the median keeps symmetric alphabets symmetric.
    if (2 * i == alphabet_size)
      out.push_back(0.0);
    else
      out.push_back(normal_quantile(static_cast<double>(i) / static_cast<double>(alphabet_size)));
  }
  return out;
}

std::int64_t sax_symbol(double value, const std::vector<double>& breakpoints) {
  return std::upper_bound(breakpoints.begin(), breakpoints.end(), value) - breakpoints.begin();
}

std::vector<TokenSequence> sax_tokenize(const TimeSeriesInstance& instance, std::int64_t patch_size,
                                        std::int64_t alphabet_size) {
  const auto breakpoints = sax_breakpoints(alphabet_size);
  const auto seq = patchify(instance, patch_size);
  std::vector<TokenSequence> out(static_cast<std::size_t>(seq.channels));
  for (std::int64_t c = 0; c < seq.channels; ++c) {
    out[c].domain = instance.domain->name;
    for (const auto& patch : seq.patches) {
      double total = 0;
      for (std::int64_t t = 0; t < patch_size; ++t) total += patch[static_cast<std::size_t>(c * patch_size + t)];
      out[c].ids.push_back(sax_symbol(total / static_cast<double>(patch_size), breakpoints));
    }
  }
  return out;
}

}  // namespace ctn
