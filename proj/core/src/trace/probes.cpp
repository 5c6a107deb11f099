#include "curvmon/trace/probes.hpp"

#include "curvmon/error.hpp"
#include "curvmon/rng.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace curvmon::trace {

namespace {

// Separates the Rademacher and Gaussian key spaces so switching kinds never
// reuses bits.
constexpr std::uint64_t kGaussianTag = 0x5bd1e995u;

}  // namespace

std::string_view to_string(ProbeKind kind) noexcept {
  return kind == ProbeKind::Rademacher ? "rademacher" : "gaussian";
}

ProbeKind parse_probe_kind(std::string_view text) {
  if (text == "rademacher") return ProbeKind::Rademacher;
  if (text == "gaussian") return ProbeKind::Gaussian;
  throw Error(ErrorCode::Parse, "unknown probe kind '" + std::string(text) + "'");
}

ProbeBatch::ProbeBatch(std::uint64_t seed, std::size_t count, ProbeKind kind, std::uint64_t stream)
    : seed_(seed), count_(count), kind_(kind), stream_(stream) {
  if (count == 0) throw Error(ErrorCode::InvalidArgument, "probe count K must be at least 1");
}

void ProbeBatch::fill(std::size_t k, std::size_t offset, std::span<double> out) const {
  if (k >= count_) {
    throw Error(ErrorCode::InvalidArgument,
                "probe index " + std::to_string(k) + " out of range for K=" + std::to_string(count_));
  }
  if (kind_ == ProbeKind::Rademacher) {
    // One 64-bit word covers 64 consecutive coordinates.
    std::uint64_t word_index = ~std::uint64_t{0};
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      const std::size_t c = offset + i;
      if (c / 64 != word_index) {
        word_index = c / 64;
        word = hash_key(seed_, stream_, k, word_index);
      }
      out[i] = (word >> (c % 64)) & 1U ? 1.0 : -1.0;
    }
    return;
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t c = offset + i;
    const double u1 = 1.0 - to_unit(hash_key(seed_ ^ kGaussianTag, stream_, k, 2 * c));
    const double u2 = to_unit(hash_key(seed_ ^ kGaussianTag, stream_, k, 2 * c + 1));
    out[i] = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }
}

std::vector<double> ProbeBatch::probe(std::size_t k, std::size_t dim) const {
  std::vector<double> z(dim);
  fill(k, 0, z);
  return z;
}

}  // namespace curvmon::trace
