#pragma once

#include "curvmon/ad/model.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace curvmon::ad {

enum class Activation { Identity, Tanh, Softplus, Relu };
enum class LossKind { CrossEntropy, MeanSquaredError };

std::string_view to_string(Activation a) noexcept;
std::string_view to_string(LossKind k) noexcept;
std::string_view to_string(SharingMode m) noexcept;

struct LayerSpec {
  enum class Kind { Dense, Tied };
  Kind kind = Kind::Dense;
  int width = 0;
  int uses = 1;  // tied layers apply the same (W, b) this many times in sequence
  std::optional<Activation> activation;

  bool operator==(const LayerSpec&) const = default;
};

/// Declarative description of a fully connected network. Hidden layers are
/// listed in order; a linear head to `output_dim` is always appended.
///
/// Text form, one `key = value` per line, `#` starts a comment:
///
///     name = mlp-tied
///     input_dim = 8
///     output_dim = 4
///     loss = cross_entropy        # or mse
///     activation = tanh           # tanh | softplus | relu | identity
///     sharing = shared            # or unrolled
///     layer = dense 16            # dense <width> [activation]
///     layer = tied 16 2           # tied <width> <uses> [activation]
struct ModelSpec {
  std::string name = "model";
  int input_dim = 0;
  int output_dim = 0;
  LossKind loss = LossKind::CrossEntropy;
  Activation activation = Activation::Tanh;
  SharingMode sharing = SharingMode::Shared;
  std::vector<LayerSpec> layers;

  /// relu has zero second derivative almost everywhere; exact-curvature
  /// checks skip such models.
  bool curvature_degenerate() const;
  bool has_tied_layer() const;
  void validate() const;

  bool operator==(const ModelSpec&) const = default;
};

ModelSpec parse_model_spec(std::string_view text);
std::string format_model_spec(const ModelSpec& spec);
ModelSpec load_model_spec(const std::filesystem::path& path);

/// Two tanh hidden layers of width 32.
ModelSpec mlp_small(int input_dim, int classes);
/// dense(width) -> tied(width, uses) -> head.
ModelSpec mlp_tied(int input_dim, int classes, int width = 16, int uses = 2);

class Network final : public Model {
 public:
  explicit Network(ModelSpec spec);

  std::span<const TensorShape> tensors() const override { return tensors_; }
  std::span<const GroupInfo> groups() const override { return groups_; }
  Var loss(const ParamBinder& params, const Batch& batch, Tape& tape) const override;

  const ModelSpec& spec() const noexcept { return spec_; }
  std::size_t head_layer() const noexcept { return groups_.size() - 1; }

  /// Glorot-uniform weights and zero biases, deterministic in `seed`.
  std::vector<double> initial_params(std::uint64_t seed) const;

  /// Row-wise outputs (logits or regression predictions) without building a tape.
  Matrix predict(std::span<const double> params, const Matrix& inputs) const;

 private:
  ModelSpec spec_;
  std::vector<TensorShape> tensors_;
  std::vector<GroupInfo> groups_;
};

}  // namespace curvmon::ad
