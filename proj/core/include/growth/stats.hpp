#pragma once

#include <cstdint>
#include <string_view>

namespace growth::stats {

double normal_cdf(double z);
double normal_pdf(double z);
// Inverse standard normal CDF (Acklam's rational approximation refined by
// one Halley step; |error| < 1e-14 on (0, 1)).
double normal_quantile(double p);

// z such that mean +- z*sd covers `level` of a normal distribution.
inline double central_z(double level) { return normal_quantile(0.5 + 0.5 * level); }

// SplitMix64 finalizer; used to derive independent sub-seeds.
std::uint64_t mix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt);
std::uint64_t derive_seed(std::uint64_t base, std::string_view salt);

}  // namespace growth::stats
