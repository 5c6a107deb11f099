#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace curvmon::trace {

enum class ProbeKind { Rademacher, Gaussian };

std::string_view to_string(ProbeKind kind) noexcept;
ProbeKind parse_probe_kind(std::string_view text);

/// K probe vectors with zero mean and identity covariance. Coordinate i of
/// probe k is a pure function of (seed, stream, k, i), so any slice of a
/// probe can be drawn without the rest and two batches with the same key
/// are bit-identical. Snapshots use the training step as the stream.
class ProbeBatch {
 public:
  ProbeBatch(std::uint64_t seed, std::size_t count, ProbeKind kind = ProbeKind::Rademacher,
             std::uint64_t stream = 0);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }
  std::size_t count() const noexcept { return count_; }
  ProbeKind kind() const noexcept { return kind_; }

  /// Coordinates [offset, offset + out.size()) of probe k.
  void fill(std::size_t k, std::size_t offset, std::span<double> out) const;
  std::vector<double> probe(std::size_t k, std::size_t dim) const;

 private:
  std::uint64_t seed_;
  std::size_t count_;
  ProbeKind kind_;
  std::uint64_t stream_;
};

}  // namespace curvmon::trace
