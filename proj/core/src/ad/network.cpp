#include "curvmon/ad/network.hpp"

#include "curvmon/error.hpp"
#include "curvmon/rng.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace curvmon::ad {

std::string_view to_string(Activation a) noexcept {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Tanh: return "tanh";
    case Activation::Softplus: return "softplus";
    case Activation::Relu: return "relu";
  }
  return "?";
}

std::string_view to_string(LossKind k) noexcept {
  return k == LossKind::CrossEntropy ? "cross_entropy" : "mse";
}

std::string_view to_string(SharingMode m) noexcept { return m == SharingMode::Shared ? "shared" : "unrolled"; }

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void parse_fail(int line, const std::string& what) {
  throw Error(ErrorCode::Parse, "model spec line " + std::to_string(line) + ": " + what);
}

Activation parse_activation(const std::string& s, int line) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "softplus") return Activation::Softplus;
  if (s == "relu") return Activation::Relu;
  if (s == "identity" || s == "linear") return Activation::Identity;
  parse_fail(line, "unknown activation '" + s + "'");
}

int parse_int(const std::string& s, int line) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) parse_fail(line, "expected an integer, got '" + s + "'");
    return v;
  } catch (const std::logic_error&) {
    parse_fail(line, "expected an integer, got '" + s + "'");
  }
}

Var activate(Var x, Activation a) {
  switch (a) {
    case Activation::Identity: return x;
    case Activation::Tanh: return tanh(x);
    case Activation::Softplus: return softplus(x);
    case Activation::Relu: return relu(x);
  }
  return x;
}

Matrix activate_value(const Matrix& x, Activation a) {
  switch (a) {
    case Activation::Identity: return x;
    case Activation::Tanh: return x.array().tanh().matrix();
    case Activation::Softplus:
      return x.unaryExpr([](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); });
    case Activation::Relu: return x.cwiseMax(0.0);
  }
  return x;
}

}  // namespace

bool ModelSpec::curvature_degenerate() const {
  if (activation == Activation::Relu) return true;
  for (const auto& l : layers) {
    if (l.activation == Activation::Relu) return true;
  }
  return false;
}

bool ModelSpec::has_tied_layer() const {
  for (const auto& l : layers) {
    if (l.kind == LayerSpec::Kind::Tied) return true;
  }
  return false;
}

void ModelSpec::validate() const {
  if (input_dim < 1) throw Error(ErrorCode::InvalidArgument, "model spec: input_dim must be >= 1");
  if (output_dim < 1) throw Error(ErrorCode::InvalidArgument, "model spec: output_dim must be >= 1");
  if (loss == LossKind::CrossEntropy && output_dim < 2) {
    throw Error(ErrorCode::InvalidArgument, "model spec: cross_entropy needs output_dim >= 2");
  }
  int width = input_dim;
  bool any_reuse = false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.width < 1) throw Error(ErrorCode::InvalidArgument, "model spec: layer " + std::to_string(i) + " width < 1");
    if (l.uses < 1) throw Error(ErrorCode::InvalidArgument, "model spec: layer " + std::to_string(i) + " uses < 1");
    if (l.kind == LayerSpec::Kind::Dense && l.uses != 1) {
      throw Error(ErrorCode::InvalidArgument, "model spec: dense layer " + std::to_string(i) + " must have uses = 1");
    }
    if (l.kind == LayerSpec::Kind::Tied && l.width != width) {
      throw Error(ErrorCode::InvalidArgument, "model spec: tied layer " + std::to_string(i) + " width " +
                                                  std::to_string(l.width) + " must equal its input width " +
                                                  std::to_string(width));
    }
    any_reuse = any_reuse || l.uses >= 2;
    width = l.width;
  }
  if (sharing == SharingMode::Unrolled && !any_reuse) {
    throw Error(ErrorCode::InvalidArgument, "model spec: unrolled sharing requires a tied layer with uses >= 2");
  }
}

ModelSpec parse_model_spec(std::string_view text) {
  ModelSpec spec;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(std::string_view(raw).substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) parse_fail(line_no, "expected 'key = value'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));

    if (key == "name") {
      spec.name = value;
    } else if (key == "input_dim") {
      spec.input_dim = parse_int(value, line_no);
    } else if (key == "output_dim") {
      spec.output_dim = parse_int(value, line_no);
    } else if (key == "loss") {
      if (value == "cross_entropy") {
        spec.loss = LossKind::CrossEntropy;
      } else if (value == "mse") {
        spec.loss = LossKind::MeanSquaredError;
      } else {
        parse_fail(line_no, "unknown loss '" + value + "'");
      }
    } else if (key == "activation") {
      spec.activation = parse_activation(value, line_no);
    } else if (key == "sharing") {
      if (value == "shared") {
        spec.sharing = SharingMode::Shared;
      } else if (value == "unrolled") {
        spec.sharing = SharingMode::Unrolled;
      } else {
        parse_fail(line_no, "unknown sharing mode '" + value + "'");
      }
    } else if (key == "layer") {
      std::istringstream fields(value);
      std::vector<std::string> parts;
      for (std::string p; fields >> p;) parts.push_back(p);
      if (parts.empty()) parse_fail(line_no, "empty layer description");
      LayerSpec layer;
      std::size_t next = 2;
      if (parts[0] == "dense") {
        if (parts.size() < 2 || parts.size() > 3) parse_fail(line_no, "expected 'dense <width> [activation]'");
        layer.width = parse_int(parts[1], line_no);
      } else if (parts[0] == "tied") {
        if (parts.size() < 3 || parts.size() > 4) parse_fail(line_no, "expected 'tied <width> <uses> [activation]'");
        layer.kind = LayerSpec::Kind::Tied;
        layer.width = parse_int(parts[1], line_no);
        layer.uses = parse_int(parts[2], line_no);
        next = 3;
      } else {
        parse_fail(line_no, "unknown layer kind '" + parts[0] + "'");
      }
      if (parts.size() > next) layer.activation = parse_activation(parts[next], line_no);
      spec.layers.push_back(layer);
    } else {
      parse_fail(line_no, "unknown key '" + key + "'");
    }
  }
  spec.validate();
  return spec;
}

std::string format_model_spec(const ModelSpec& spec) {
  std::ostringstream out;
  out << "name = " << spec.name << "\n"
      << "input_dim = " << spec.input_dim << "\n"
      << "output_dim = " << spec.output_dim << "\n"
      << "loss = " << to_string(spec.loss) << "\n"
      << "activation = " << to_string(spec.activation) << "\n"
      << "sharing = " << to_string(spec.sharing) << "\n";
  for (const auto& l : spec.layers) {
    out << "layer = ";
    if (l.kind == LayerSpec::Kind::Dense) {
      out << "dense " << l.width;
    } else {
      out << "tied " << l.width << " " << l.uses;
    }
    if (l.activation) out << " " << to_string(*l.activation);
    out << "\n";
  }
  return out.str();
}

ModelSpec load_model_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open model spec " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_model_spec(buf.str());
}

ModelSpec mlp_small(int input_dim, int classes) {
  ModelSpec s;
  s.name = "mlp-small";
  s.input_dim = input_dim;
  s.output_dim = classes;
  s.layers = {{LayerSpec::Kind::Dense, 32, 1, {}}, {LayerSpec::Kind::Dense, 32, 1, {}}};
  return s;
}

ModelSpec mlp_tied(int input_dim, int classes, int width, int uses) {
  ModelSpec s;
  s.name = "mlp-tied";
  s.input_dim = input_dim;
  s.output_dim = classes;
  s.layers = {{LayerSpec::Kind::Dense, width, 1, {}}, {LayerSpec::Kind::Tied, width, uses, {}}};
  return s;
}

Network::Network(ModelSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  int width = spec_.input_dim;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const auto& l = spec_.layers[i];
    const std::size_t g = groups_.size();
    const char* kind = l.kind == LayerSpec::Kind::Tied ? "tied" : "dense";
    groups_.push_back({std::string(kind) + std::to_string(i), l.uses});
    tensors_.push_back({"W", width, l.width, g});
    tensors_.push_back({"b", 1, l.width, g});
    width = l.width;
  }
  const std::size_t g = groups_.size();
  groups_.push_back({"head", 1});
  tensors_.push_back({"W", width, spec_.output_dim, g});
  tensors_.push_back({"b", 1, spec_.output_dim, g});
}

Var Network::loss(const ParamBinder& params, const Batch& batch, Tape& tape) const {
  if (batch.empty()) throw Error(ErrorCode::InvalidArgument, "batch is empty");
  if (batch.inputs.cols() != spec_.input_dim) {
    throw Error(ErrorCode::ShapeMismatch, "batch inputs have " + std::to_string(batch.inputs.cols()) +
                                              " columns, model expects " + std::to_string(spec_.input_dim));
  }
  const Eigen::Index n = batch.inputs.rows();
  Var h = tape.constant(batch.inputs, "inputs");
  std::size_t t = 0;
  for (const auto& l : spec_.layers) {
    const Activation act = l.activation.value_or(spec_.activation);
    for (int site = 0; site < l.uses; ++site) {
      const Var w = params.use(t, site);
      const Var b = params.use(t + 1, site);
      h = activate(add(matmul(h, w), broadcast_rows(b, n)), act);
    }
    t += 2;
  }
  const Var out = add(matmul(h, params.use(t, 0)), broadcast_rows(params.use(t + 1, 0), n));

  if (spec_.loss == LossKind::CrossEntropy) {
    if (batch.labels.size() != static_cast<std::size_t>(n)) {
      throw Error(ErrorCode::ShapeMismatch, "batch has " + std::to_string(batch.labels.size()) + " labels for " +
                                                std::to_string(n) + " inputs");
    }
    Matrix one_hot = Matrix::Zero(n, spec_.output_dim);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int y = batch.labels[static_cast<std::size_t>(i)];
      if (y < 0 || y >= spec_.output_dim) {
        throw Error(ErrorCode::InvalidArgument, "label " + std::to_string(y) + " outside [0, " +
                                                    std::to_string(spec_.output_dim) + ")");
      }
      one_hot(i, y) = 1.0;
    }
    return softmax_cross_entropy(out, tape.constant(std::move(one_hot), "labels"));
  }
  if (batch.targets.rows() != n || batch.targets.cols() != spec_.output_dim) {
    throw Error(ErrorCode::ShapeMismatch, "batch targets must be " + std::to_string(n) + "x" +
                                              std::to_string(spec_.output_dim));
  }
  return mean_squared_error(out, tape.constant(batch.targets, "targets"));
}

std::vector<double> Network::initial_params(std::uint64_t seed) const {
  std::vector<double> p;
  p.reserve(parameter_count());
  CounterRng rng(seed, 0x1417);
  for (const auto& t : tensors_) {
    const auto n = t.rows * t.cols;
    if (t.name == "b") {
      p.insert(p.end(), static_cast<std::size_t>(n), 0.0);
      continue;
    }
    const double limit = std::sqrt(6.0 / static_cast<double>(t.rows + t.cols));
    for (Eigen::Index i = 0; i < n; ++i) p.push_back(limit * (2.0 * rng.uniform() - 1.0));
  }
  return p;
}

Matrix Network::predict(std::span<const double> params, const Matrix& inputs) const {
  if (params.size() != parameter_count()) {
    throw Error(ErrorCode::ShapeMismatch, "parameter vector has length " + std::to_string(params.size()));
  }
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  std::size_t offset = 0;
  auto take = [&](const TensorShape& s) {
    Matrix m = Eigen::Map<const RowMajor>(params.data() + offset, s.rows, s.cols);
    offset += static_cast<std::size_t>(s.rows * s.cols);
    return m;
  };
  Matrix h = inputs;
  std::size_t t = 0;
  for (const auto& l : spec_.layers) {
    const Matrix w = take(tensors_[t]);
    const Matrix b = take(tensors_[t + 1]);
    for (int site = 0; site < l.uses; ++site) {
      h = activate_value((h * w).rowwise() + b.row(0), l.activation.value_or(spec_.activation));
    }
    t += 2;
  }
  const Matrix w = take(tensors_[t]);
  const Matrix b = take(tensors_[t + 1]);
  return (h * w).rowwise() + b.row(0);
}

}  // namespace curvmon::ad
