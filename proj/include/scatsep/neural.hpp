#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "scatsep/feature_map.hpp"

namespace scatsep {

enum class Activation { relu, softplus, linear };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::softplus: return "softplus";
    default: return "linear";
  }
}

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "softplus") return Activation::softplus;
  if (s == "linear") return Activation::linear;
  throw Error("network: unknown activation '" + s + "'");
}

struct DenseLayer {
  Matrix weights;  // out x in
  Vector bias;
  Activation activation = Activation::relu;
  /// Branch layers read input rows [offset, offset + in); trunk layers use offset -1.
  Eigen::Index offset = -1;

  Eigen::Index in() const { return weights.cols(); }
  Eigen::Index out() const { return weights.rows(); }
};

inline const std::vector<std::string>& network_archs() {
  static const std::vector<std::string> archs{"cqt-dnn", "cqt-dnn-5", "dnn-multi", "cnn-multi"};
  return archs;
}

/// Mask regressor with two heads of `bins` outputs each.
///
/// Dense variants are a plain layer stack. The convolutional variant first
/// runs one dense layer per resolution branch on its slice of the input (a
/// 3-frame window), concatenates the branch outputs and feeds the trunk.
class MaskNetwork {
 public:
  std::string arch;
  Eigen::Index bins = 0;
  int j2 = 0;  // Haar / resolution depth for the multi variants
  std::vector<DenseLayer> branches;
  std::vector<DenseLayer> trunk;

  bool convolutional() const { return !branches.empty(); }
  /// Feature MSE at every resolution instead of mask MSE.
  bool feature_loss() const { return arch == "dnn-multi" || arch == "cnn-multi"; }

  Eigen::Index input_width() const {
    if (!convolutional()) return trunk.front().in();
    Eigen::Index w = 0;
    for (const auto& b : branches) w = std::max(w, b.offset + b.in());
    return w;
  }

  void validate() const {
    if (trunk.empty()) throw Error("network: no layers");
    Eigen::Index width = 0;
    for (const auto& b : branches) {
      if (b.offset < 0 || b.bias.size() != b.out()) throw Error("network: malformed branch layer");
      width += b.out();
    }
    if (convolutional() && trunk.front().in() != width) throw Error("network: trunk input does not match branches");
    for (std::size_t l = 0; l < trunk.size(); ++l) {
      if (trunk[l].bias.size() != trunk[l].out()) throw Error("network: bias size mismatch");
      if (l > 0 && trunk[l].in() != trunk[l - 1].out()) throw Error("network: layer dimensions do not conform");
    }
    if (trunk.back().out() != 2 * bins) throw Error("network: output width must be 2 x bins");
  }

  std::vector<DenseLayer*> all_layers() {
    std::vector<DenseLayer*> out;
    for (auto& l : branches) out.push_back(&l);
    for (auto& l : trunk) out.push_back(&l);
    return out;
  }
  std::vector<const DenseLayer*> all_layers() const {
    std::vector<const DenseLayer*> out;
    for (const auto& l : branches) out.push_back(&l);
    for (const auto& l : trunk) out.push_back(&l);
    return out;
  }
};

using DenseNetwork = MaskNetwork;
using ConvNetwork = MaskNetwork;

struct NetworkShape {
  std::vector<Eigen::Index> hidden;  // trunk hidden widths
  Eigen::Index branch_width = 128;
};

/// Hidden sizes for each architecture.
inline NetworkShape default_shape(const std::string& arch) {
  if (arch == "cqt-dnn") return {{512, 150}, 0};
  if (arch == "cqt-dnn-5" || arch == "dnn-multi") return {{1024, 512}, 0};
  if (arch == "cnn-multi") return {{1024, 512}, 128};
  throw Error("network: unknown architecture '" + arch + "'");
}

/// Input width the architecture expects for `bins` layer-1 rows.
inline Eigen::Index arch_input_width(const std::string& arch, Eigen::Index bins, int j2) {
  if (arch == "cqt-dnn") return bins;
  if (arch == "cqt-dnn-5") return 5 * bins;
  if (arch == "dnn-multi") return bins * (j2 + 1);
  if (arch == "cnn-multi") return 3 * bins * (j2 + 1);
  throw Error("network: unknown architecture '" + arch + "'");
}

namespace detail {

inline DenseLayer make_layer(Eigen::Index in, Eigen::Index out, Activation act, std::mt19937_64& rng) {
  // He-style uniform: limit sqrt(6 / fan_in)
  const double limit = std::sqrt(6.0 / static_cast<double>(in));
  std::uniform_real_distribution<double> u(-limit, limit);
  DenseLayer l;
  l.weights.resize(out, in);
  for (Eigen::Index r = 0; r < out; ++r) {
    for (Eigen::Index c = 0; c < in; ++c) l.weights(r, c) = u(rng);
  }
  l.bias = Vector::Zero(out);
  l.activation = act;
  return l;
}

}  // namespace detail

inline MaskNetwork build_network(const std::string& arch, Eigen::Index bins, int j2, std::uint64_t seed,
                                 const NetworkShape& shape) {
  if (bins < 1) throw Error("network: bins must be >= 1");
  if (j2 < 0) throw Error("network: J2 must be >= 0");
  if (shape.hidden.empty()) throw Error("network: at least one hidden layer");
  std::mt19937_64 rng(seed);
  MaskNetwork net;
  net.arch = arch;
  net.bins = bins;
  net.j2 = j2;
  Eigen::Index width = arch_input_width(arch, bins, j2);
  if (arch == "cnn-multi") {
    if (shape.branch_width < 1) throw Error("network: branch width must be >= 1");
    for (int j = 0; j <= j2; ++j) {
      auto l = detail::make_layer(3 * bins, shape.branch_width, Activation::relu, rng);
      l.offset = 3 * bins * j;
      net.branches.push_back(std::move(l));
    }
    width = shape.branch_width * (j2 + 1);
  }
  for (auto h : shape.hidden) {
    net.trunk.push_back(detail::make_layer(width, h, Activation::relu, rng));
    width = h;
  }
  // softplus heads: a ReLU head that goes negative on every frame never recovers
  net.trunk.push_back(detail::make_layer(width, 2 * bins, Activation::softplus, rng));
  net.validate();
  return net;
}

inline MaskNetwork build_network(const std::string& arch, Eigen::Index bins, int j2, std::uint64_t seed) {
  return build_network(arch, bins, j2, seed, default_shape(arch));
}

inline constexpr double kMaskFloor = 1e-12;

struct ForwardCache {
  std::vector<Matrix> inputs;  // per layer (branches first, then trunk)
  std::vector<Matrix> pre;     // pre-activations
  Matrix heads;                // 2*bins x batch, rectified
  Matrix mask1, mask2;
};

inline Matrix apply_activation(const Matrix& z, Activation a) {
  switch (a) {
    case Activation::relu: return z.cwiseMax(0.0);
    // log(1 + e^z) without overflow
    case Activation::softplus: return z.unaryExpr([](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); });
    default: return z;
  }
}

/// delta * f'(z) elementwise.
inline Matrix activation_backward(const Matrix& delta, const Matrix& z, Activation a) {
  switch (a) {
    case Activation::relu: return (z.array() > 0.0).select(delta, 0.0);
    case Activation::softplus: return delta.cwiseProduct(z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); }));
    default: return delta;
  }
}

inline ForwardCache forward_cached(const MaskNetwork& net, const Matrix& x) {
  if (x.rows() != net.input_width()) throw Error("network: input width mismatch");
  ForwardCache c;
  Matrix h;
  if (net.convolutional()) {
    h.resize(net.trunk.front().in(), x.cols());
    Eigen::Index at = 0;
    for (const auto& b : net.branches) {
      c.inputs.push_back(x.middleRows(b.offset, b.in()));
      Matrix z = b.weights * c.inputs.back();
      z.colwise() += b.bias;
      h.middleRows(at, b.out()) = apply_activation(z, b.activation);
      at += b.out();
      c.pre.push_back(std::move(z));
    }
  } else {
    h = x;
  }
  for (const auto& l : net.trunk) {
    c.inputs.push_back(h);
    Matrix z = l.weights * h;
    z.colwise() += l.bias;
    h = apply_activation(z, l.activation);
    c.pre.push_back(std::move(z));
  }
  c.heads = std::move(h);
  const auto r1 = c.heads.topRows(net.bins).array() + kMaskFloor;
  const auto r2 = c.heads.bottomRows(net.bins).array() + kMaskFloor;
  c.mask1 = (r1 / (r1 + r2)).matrix();
  c.mask2 = (r2 / (r1 + r2)).matrix();
  return c;
}

/// Per-source masks (bins x batch) for a batch of input columns.
inline std::pair<Matrix, Matrix> forward(const MaskNetwork& net, const Matrix& x) {
  auto c = forward_cached(net, x);
  return {std::move(c.mask1), std::move(c.mask2)};
}

// ---------------------------------------------------------------------------
// Training sets and losses.

/// Columns are frames. In mask mode the targets are ideal masks; in feature
/// mode the mixture and source features at every resolution are kept.
struct TrainingSet {
  Matrix inputs;
  Matrix target1, target2;  // mask mode
  std::vector<Matrix> mix_levels, source1_levels, source2_levels;  // feature mode

  Eigen::Index size() const { return inputs.cols(); }
};

struct Gradients {
  std::vector<Matrix> weights;
  std::vector<Vector> bias;
};

inline Gradients zero_gradients(const MaskNetwork& net) {
  Gradients g;
  for (const auto* l : net.all_layers()) {
    g.weights.push_back(Matrix::Zero(l->out(), l->in()));
    g.bias.push_back(Vector::Zero(l->out()));
  }
  return g;
}

namespace detail {

inline Matrix take_cols(const Matrix& m, const std::vector<Eigen::Index>& idx) {
  Matrix out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = m.col(idx[i]);
  return out;
}

}  // namespace detail

/// Mean-squared loss on the given columns and, if `grad` is set, its gradient.
inline double loss_and_gradient(const MaskNetwork& net, const TrainingSet& data, const std::vector<Eigen::Index>& cols,
                                Gradients* grad) {
  if (cols.empty()) throw Error("network: empty batch");
  const Matrix x = detail::take_cols(data.inputs, cols);
  const auto c = forward_cached(net, x);
  const auto b = static_cast<double>(cols.size());
  const double norm = 1.0 / (b * 2.0 * static_cast<double>(net.bins));

  double loss = 0.0;
  Matrix g1, g2;  // d loss / d mask
  if (net.feature_loss()) {
    if (data.mix_levels.empty()) throw Error("network: feature targets missing");
    g1 = Matrix::Zero(net.bins, x.cols());
    g2 = Matrix::Zero(net.bins, x.cols());
    for (std::size_t j = 0; j < data.mix_levels.size(); ++j) {
      const Matrix y = detail::take_cols(data.mix_levels[j], cols);
      const Matrix e1 = c.mask1.cwiseProduct(y) - detail::take_cols(data.source1_levels[j], cols);
      const Matrix e2 = c.mask2.cwiseProduct(y) - detail::take_cols(data.source2_levels[j], cols);
      loss += norm * (e1.squaredNorm() + e2.squaredNorm());
      g1 += 2.0 * norm * e1.cwiseProduct(y);
      g2 += 2.0 * norm * e2.cwiseProduct(y);
    }
  } else {
    if (data.target1.cols() != data.inputs.cols()) throw Error("network: mask targets missing");
    const Matrix e1 = c.mask1 - detail::take_cols(data.target1, cols);
    const Matrix e2 = c.mask2 - detail::take_cols(data.target2, cols);
    loss = norm * (e1.squaredNorm() + e2.squaredNorm());
    g1 = 2.0 * norm * e1;
    g2 = 2.0 * norm * e2;
  }
  if (!grad) return loss;

  // through m_i = (r_i + d) / (r_1 + r_2 + 2d)
  const auto r1 = c.heads.topRows(net.bins).array() + kMaskFloor;
  const auto r2 = c.heads.bottomRows(net.bins).array() + kMaskFloor;
  const auto s2 = (r1 + r2).square();
  const Matrix diff = (g1 - g2);
  Matrix delta(2 * net.bins, x.cols());
  delta.topRows(net.bins) = (diff.array() * r2 / s2).matrix();
  delta.bottomRows(net.bins) = (-diff.array() * r1 / s2).matrix();

  *grad = zero_gradients(net);
  const std::size_t nb = net.branches.size();
  for (std::size_t l = net.trunk.size(); l-- > 0;) {
    const auto& layer = net.trunk[l];
    const Matrix& z = c.pre[nb + l];
    delta = activation_backward(delta, z, layer.activation);
    grad->weights[nb + l] = delta * c.inputs[nb + l].transpose();
    grad->bias[nb + l] = delta.rowwise().sum();
    delta = layer.weights.transpose() * delta;
  }
  Eigen::Index at = 0;
  for (std::size_t j = 0; j < nb; ++j) {
    const auto& layer = net.branches[j];
    Matrix d = delta.middleRows(at, layer.out());
    at += layer.out();
    d = activation_backward(d, c.pre[j], layer.activation);
    grad->weights[j] = d * c.inputs[j].transpose();
    grad->bias[j] = d.rowwise().sum();
  }
  return loss;
}

inline double evaluate_loss(const MaskNetwork& net, const TrainingSet& data) {
  std::vector<Eigen::Index> all(static_cast<std::size_t>(data.size()));
  std::iota(all.begin(), all.end(), Eigen::Index{0});
  return loss_and_gradient(net, data, all, nullptr);
}

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  int batch_size = 128;
  int epochs = 50;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(learning_rate >= 0.0)) throw Error("train: learning rate must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw Error("train: momentum must be in [0, 1)");
    if (batch_size < 1) throw Error("train: batch size must be >= 1");
    if (epochs < 0) throw Error("train: epochs must be >= 0");
  }
};

struct TrainResult {
  MaskNetwork net;
  std::vector<double> epoch_loss;  // mean batch loss per epoch
  double initial_loss = 0.0;       // full-set loss before training
  double final_loss = 0.0;         // full-set loss after training
};

/// Mini-batch SGD with momentum: v <- mu v - lr g; w <- w + v.
inline TrainResult train(MaskNetwork net, const TrainingSet& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.size() == 0) throw Error("train: empty dataset");
  if (data.inputs.rows() != net.input_width()) throw Error("train: input width does not match the network");
  TrainResult out;
  out.initial_loss = evaluate_loss(net, data);
  if (!std::isfinite(out.initial_loss)) throw Error("train: non-finite initial loss");

  Gradients velocity = zero_gradients(net);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::mt19937_64 rng(cfg.seed);
  const auto bs = static_cast<std::size_t>(cfg.batch_size);

  for (int e = 0; e < cfg.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::vector<Eigen::Index> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                            order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + bs)));
      Gradients g;
      const double loss = loss_and_gradient(net, data, batch, &g);
      if (!std::isfinite(loss)) {
        throw Error("train: non-finite loss at epoch " + std::to_string(e) + ", batch starting " + std::to_string(start));
      }
      total += loss * static_cast<double>(batch.size());
      auto layers = net.all_layers();
      for (std::size_t l = 0; l < layers.size(); ++l) {
        velocity.weights[l] = cfg.momentum * velocity.weights[l] - cfg.learning_rate * g.weights[l];
        velocity.bias[l] = cfg.momentum * velocity.bias[l] - cfg.learning_rate * g.bias[l];
        layers[l]->weights += velocity.weights[l];
        layers[l]->bias += velocity.bias[l];
      }
    }
    out.epoch_loss.push_back(total / static_cast<double>(order.size()));
  }
  out.final_loss = evaluate_loss(net, data);
  out.net = std::move(net);
  return out;
}

// ---------------------------------------------------------------------------
// Inputs from layer-1 features. Every frame is scaled by sqrt(m) / ||Y_t||
// so inputs have unit RMS; feature-mode targets use the same scale.

inline Vector input_scales(const Matrix& layer1) {
  Vector s(layer1.cols());
  const double root_m = std::sqrt(static_cast<double>(layer1.rows()));
  for (Eigen::Index t = 0; t < layer1.cols(); ++t) s(t) = root_m / (layer1.col(t).norm() + 1e-12);
  return s;
}

/// Centred moving average over 2^j frames (edges mirrored), j = 0..J2.
inline std::vector<Matrix> resolution_stack(const Matrix& values, int j2) {
  std::vector<Matrix> out;
  const auto n = static_cast<std::ptrdiff_t>(values.cols());
  for (int j = 0; j <= j2; ++j) {
    const std::ptrdiff_t w = std::ptrdiff_t{1} << j;
    Matrix p = Matrix::Zero(values.rows(), values.cols());
    for (std::ptrdiff_t t = 0; t < n; ++t) {
      for (std::ptrdiff_t k = t - w / 2; k < t - w / 2 + w; ++k) p.col(t) += values.col(reflect_index(k, n));
    }
    out.push_back(p / static_cast<double>(w));
  }
  return out;
}

/// Network inputs for `arch` from layer-1 magnitudes (and Haar rows for dnn-multi).
inline Matrix build_inputs(const std::string& arch, const Matrix& layer1, const Matrix* haar, int j2) {
  const Vector s = input_scales(layer1);
  const Eigen::Index m = layer1.rows();
  const auto n = static_cast<std::ptrdiff_t>(layer1.cols());
  if (arch == "cqt-dnn") return layer1 * s.asDiagonal();
  if (arch == "cqt-dnn-5") {
    Matrix x(5 * m, layer1.cols());
    for (std::ptrdiff_t t = 0; t < n; ++t) {
      for (int k = -2; k <= 2; ++k) x.block((k + 2) * m, t, m, 1) = layer1.col(reflect_index(t + k, n)) * s(t);
    }
    return x;
  }
  if (arch == "dnn-multi") {
    if (!haar || haar->cols() != layer1.cols() || haar->rows() != m * (j2 + 1)) {
      throw Error("network: dnn-multi needs Haar features on the layer-1 grid");
    }
    return *haar * s.asDiagonal();
  }
  if (arch == "cnn-multi") {
    const auto res = resolution_stack(layer1, j2);
    Matrix x(3 * m * (j2 + 1), layer1.cols());
    for (int j = 0; j <= j2; ++j) {
      const std::ptrdiff_t w = std::ptrdiff_t{1} << j;
      for (std::ptrdiff_t t = 0; t < n; ++t) {
        for (int k = -1; k <= 1; ++k) {
          x.block((3 * j + k + 1) * m, t, m, 1) =
              res[static_cast<std::size_t>(j)].col(reflect_index(t + k * w, n)) * s(t);
        }
      }
    }
    return x;
  }
  throw Error("network: unknown architecture '" + arch + "'");
}

// ---------------------------------------------------------------------------
// Network files: text header terminated by `data`, then per layer the weight
// matrix (row-major) followed by the bias, all little-endian float32.
//
//   SCATSEP-NET 1
//   arch <name>
//   bins <m>
//   j2 <int>
//   branches <count>
//   trunk <count>
//   layer <in> <out> <activation> <offset>   (branches first, then trunk)
//   data

inline void write_network(std::ostream& out, const MaskNetwork& net) {
  net.validate();
  out << "SCATSEP-NET 1\n"
      << "arch " << net.arch << "\n"
      << "bins " << net.bins << "\n"
      << "j2 " << net.j2 << "\n"
      << "branches " << net.branches.size() << "\n"
      << "trunk " << net.trunk.size() << "\n";
  for (const auto* l : net.all_layers()) {
    out << "layer " << l->in() << " " << l->out() << " " << activation_name(l->activation) << " " << l->offset << "\n";
  }
  out << "data\n";
  for (const auto* l : net.all_layers()) {
    detail::write_floats_row_major(out, l->weights);
    detail::write_floats_row_major(out, l->bias.transpose());
  }
}

inline MaskNetwork read_network(std::istream& in) {
  detail::expect_line(in, "SCATSEP-NET 1");
  MaskNetwork net;
  net.arch = detail::expect_field<std::string>(in, "arch");
  net.bins = detail::expect_field<Eigen::Index>(in, "bins");
  net.j2 = detail::expect_field<int>(in, "j2");
  const auto nb = detail::expect_field<std::size_t>(in, "branches");
  const auto nt = detail::expect_field<std::size_t>(in, "trunk");
  if (nt == 0 || nb > 64 || nt > 64) throw Error("network file: bad layer counts");
  std::vector<DenseLayer> layers(nb + nt);
  for (auto& l : layers) {
    std::string line, tag, act;
    if (!std::getline(in, line)) throw Error("network file: truncated layer table");
    std::istringstream ss(line);
    Eigen::Index i = 0, o = 0;
    if (!(ss >> tag >> i >> o >> act >> l.offset) || tag != "layer" || i < 1 || o < 1) {
      throw Error("network file: bad layer line '" + line + "'");
    }
    l.activation = parse_activation(act);
    l.weights.resize(o, i);
    l.bias.resize(o);
  }
  detail::expect_line(in, "data");
  for (auto& l : layers) {
    l.weights = detail::read_floats_row_major(in, l.out(), l.in());
    l.bias = detail::read_floats_row_major(in, 1, l.out()).transpose();
  }
  net.branches.assign(layers.begin(), layers.begin() + static_cast<std::ptrdiff_t>(nb));
  net.trunk.assign(layers.begin() + static_cast<std::ptrdiff_t>(nb), layers.end());
  net.validate();
  return net;
}

inline void save_network(const std::filesystem::path& path, const MaskNetwork& net) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("network file: cannot write " + path.string());
  write_network(out, net);
}

inline MaskNetwork load_network(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("network file: cannot open " + path.string());
  return read_network(in);
}

inline void write_loss_csv(std::ostream& out, const std::vector<double>& loss) {
  out << "epoch,loss\n";
  char buf[64];
  for (std::size_t e = 0; e < loss.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g\n", e + 1, loss[e]);
    out << buf;
  }
}

}  // namespace scatsep
