#pragma once

#include <cstdint>
#include <vector>

#include "ctn/data.hpp"
#include "ctn/tokenizer.hpp"

namespace ctn {

/// The a-1 standard-normal quantiles splitting the line into equiprobable bins.
std::vector<double> sax_breakpoints(std::int64_t alphabet_size);

/// Number of breakpoints at or below `value`.
std::int64_t sax_symbol(double value, const std::vector<double>& breakpoints);

/// One token stream per channel: mean of each length-P window, then binned
/// by the standard-normal breakpoints. Values are used as given.
std::vector<TokenSequence> sax_tokenize(const TimeSeriesInstance& instance, std::int64_t patch_size,
                                        std::int64_t alphabet_size);

}  // namespace ctn
