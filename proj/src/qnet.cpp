#include "c2f/qnet.hpp"

#include <cmath>

namespace c2f {

using nn::Array;
using nn::Index;
using nn::Shape;
using nn::Tape;
using nn::Tensor;
using nn::Var;

namespace {

constexpr int kEncoderBlocks = 3;
constexpr int kDecoderStages = 3;
constexpr int kPoolFactor = 2;

}  // namespace

template <typename T>
Index QNetwork<T>::add_uniform(const std::string& name, Shape shape, double fan_in,
                               std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> value(std::move(shape));
  for (Index i = 0; i < value.size(); ++i) value.values[i] = static_cast<T>(dist(rng));
  return params_.add(name, std::move(value));
}

template <typename T>
typename QNetwork<T>::BlockIndex QNetwork<T>::add_block(const std::string& name, int in_channels,
                                                        std::mt19937_64& rng) {
  const Index pointwise = config_.width / 2;
  const Index spatial = config_.width - pointwise;
  const Index cin = in_channels;
  BlockIndex b{};
  b.w1 = add_uniform(name + "/conv1/weight", {1, 1, 1, cin, pointwise}, double(cin), rng);
  b.b1 = add_uniform(name + "/conv1/bias", {pointwise}, double(cin), rng);
  b.w3 = add_uniform(name + "/conv3/weight", {3, 3, 3, cin, spatial}, 27.0 * cin, rng);
  b.b3 = add_uniform(name + "/conv3/bias", {spatial}, 27.0 * cin, rng);
  return b;
}

template <typename T>
QNetwork<T>::QNetwork(const QNetworkConfig& config, std::uint64_t seed) : config_(config) {
  if (config.width < 2 || config.in_channels < 1 || config.proprio_dim < 0) {
    throw ConfigError("QNetwork needs width >= 2 and positive input channels");
  }
  if (config.has_head && (config.rotation_bins < 1 || config.head_hidden < 1)) {
    throw ConfigError("QNetwork head needs positive rotation bins and hidden width");
  }
  std::mt19937_64 rng(seed);
  const int w = config.width;
  blocks_.push_back(add_block("enc1", config.in_channels, rng));
  blocks_.push_back(add_block("enc2", w, rng));
  blocks_.push_back(add_block("enc3", w, rng));
  for (int s = 1; s <= kDecoderStages; ++s) {
    blocks_.push_back(add_block("dec" + std::to_string(s) + "a", w, rng));
    blocks_.push_back(add_block("dec" + std::to_string(s) + "b", 2 * w, rng));
  }
  head_w_ = add_uniform("qhead/weight", {1, 1, 1, w, 1}, double(w), rng);
  head_b_ = add_uniform("qhead/bias", {1}, double(w), rng);
  if (config.has_head) {
    const double f = bottleneck_size();
    const Index hidden = config.head_hidden;
    fc1_w_ = add_uniform("head/fc1/weight", {Index(f), hidden}, f, rng);
    fc1_b_ = add_uniform("head/fc1/bias", {hidden}, f, rng);
    fc2_w_ = add_uniform("head/fc2/weight", {hidden, hidden}, double(hidden), rng);
    fc2_b_ = add_uniform("head/fc2/bias", {hidden}, double(hidden), rng);
    rot_w_ = add_uniform("head/rotation/weight", {hidden, 3 * Index(config.rotation_bins)},
                         double(hidden), rng);
    rot_b_ = add_uniform("head/rotation/bias", {3 * Index(config.rotation_bins)}, double(hidden), rng);
    grip_w_ = add_uniform("head/gripper/weight", {hidden, 2}, double(hidden), rng);
    grip_b_ = add_uniform("head/gripper/bias", {2}, double(hidden), rng);
  }
}

template <typename T>
int QNetwork<T>::bottleneck_size() const {
  // global max (W) + soft-argmax (3W) per decoder stage
  return kDecoderStages * 4 * config_.width + config_.proprio_dim;
}

template <typename T>
Var QNetwork<T>::param(Tape<T>& tape, Index i, bool trainable) {
  return trainable ? tape.parameter(params_[i]) : tape.constant(params_[i].value);
}

template <typename T>
Var QNetwork<T>::block(Tape<T>& tape, const BlockIndex& b, Var x, bool trainable) {
  const T slope = static_cast<T>(config_.leaky_slope);
  const Var p = nn::leaky_relu(
      tape, nn::conv3d(tape, x, param(tape, b.w1, trainable), param(tape, b.b1, trainable), {1, 1, 0}),
      slope);
  const Var s = nn::leaky_relu(
      tape, nn::conv3d(tape, x, param(tape, b.w3, trainable), param(tape, b.b3, trainable), {3, 1, 1}),
      slope);
  return nn::concat_last(tape, p, s);
}

template <typename T>
QOutputVars QNetwork<T>::forward(Tape<T>& tape, Var grids, Var proprio, bool trainable) {
  const Shape xs = tape.shape(grids);
  if (xs.size() != 5 || xs[4] != config_.in_channels) {
    throw StructuralError("QNetwork expects [B,g,g,g," + std::to_string(config_.in_channels) +
                          "] input, got " + nn::shape_string(xs));
  }
  constexpr Index divisor = 8;  // pool factor ^ encoder blocks
  for (int a = 1; a <= 3; ++a) {
    if (xs[static_cast<std::size_t>(a)] % divisor != 0) {
      throw StructuralError("QNetwork grid size must be divisible by 8, got " + nn::shape_string(xs));
    }
  }
  const Index batch = xs[0];
  const T slope = static_cast<T>(config_.leaky_slope);

  std::vector<Var> skips;
  Var x = grids;
  for (int e = 0; e < kEncoderBlocks; ++e) {
    const Var features = block(tape, blocks_[static_cast<std::size_t>(e)], x, trainable);
    skips.push_back(features);
    x = nn::max_pool3d(tape, features, kPoolFactor);
  }
  std::vector<Var> stages;
  for (int s = 0; s < kDecoderStages; ++s) {
    const auto& first = blocks_[static_cast<std::size_t>(kEncoderBlocks + 2 * s)];
    const auto& second = blocks_[static_cast<std::size_t>(kEncoderBlocks + 2 * s + 1)];
    const Var up = nn::upsample3d(tape, block(tape, first, x, trainable), kPoolFactor);
    const Var merged = nn::concat_last(tape, up, skips[static_cast<std::size_t>(kEncoderBlocks - 1 - s)]);
    x = block(tape, second, merged, trainable);
    stages.push_back(x);
  }

  QOutputVars out;
  const Var q = nn::conv3d(tape, x, param(tape, head_w_, trainable), param(tape, head_b_, trainable),
                           {1, 1, 0});
  out.voxel_q = nn::reshape(tape, q, {batch, xs[1] * xs[2] * xs[3]});

  if (config_.has_head) {
    std::vector<Var> parts;
    for (Var stage : stages) {
      parts.push_back(nn::global_max_pool3d(tape, stage));
      parts.push_back(nn::soft_argmax3d(tape, stage));
    }
    const Shape ps = tape.shape(proprio);
    if (ps != Shape{batch, config_.proprio_dim}) {
      throw StructuralError("proprio must be [" + std::to_string(batch) + "," +
                            std::to_string(config_.proprio_dim) + "], got " + nn::shape_string(ps));
    }
    if (config_.proprio_dim > 0) parts.push_back(proprio);
    out.bottleneck = nn::concat_last(tape, std::span<const Var>(parts));
    Var h = nn::leaky_relu(tape,
                           nn::linear(tape, out.bottleneck, param(tape, fc1_w_, trainable),
                                      param(tape, fc1_b_, trainable)),
                           slope);
    h = nn::leaky_relu(
        tape, nn::linear(tape, h, param(tape, fc2_w_, trainable), param(tape, fc2_b_, trainable)),
        slope);
    out.rotation_q =
        nn::linear(tape, h, param(tape, rot_w_, trainable), param(tape, rot_b_, trainable));
    out.gripper_q =
        nn::linear(tape, h, param(tape, grip_w_, trainable), param(tape, grip_b_, trainable));
  }
  return out;
}

template <typename T>
template <typename U>
QNetwork<U> QNetwork<T>::cast() const {
  QNetwork<U> other;
  other.config_ = config_;
  for (const auto& p : params_) other.params_.add(p.name, p.value.template cast<U>());
  for (const auto& b : blocks_) other.blocks_.push_back({b.w1, b.b1, b.w3, b.b3});
  other.head_w_ = head_w_;
  other.head_b_ = head_b_;
  other.fc1_w_ = fc1_w_;
  other.fc1_b_ = fc1_b_;
  other.fc2_w_ = fc2_w_;
  other.fc2_b_ = fc2_b_;
  other.rot_w_ = rot_w_;
  other.rot_b_ = rot_b_;
  other.grip_w_ = grip_w_;
  other.grip_b_ = grip_b_;
  return other;
}

template <typename T>
Tensor<T> stack_grids(std::span<const VoxelGrid* const> grids) {
  if (grids.empty()) throw StructuralError("stack_grids: empty batch");
  const VoxelGrid& first = *grids.front();
  const Index g = first.geometry.grid_size;
  const Index c = first.channels();
  Tensor<T> out({Index(grids.size()), g, g, g, c});
  const Index per = g * g * g * c;
  for (std::size_t b = 0; b < grids.size(); ++b) {
    const VoxelGrid& grid = *grids[b];
    if (grid.geometry.grid_size != g || grid.channels() != c) {
      throw StructuralError("stack_grids: grid " + std::to_string(b) + " has a different shape");
    }
    out.values.segment(Index(b) * per, per) = grid.data.template cast<T>().array();
  }
  return out;
}

template <typename T>
Tensor<T> stack_proprio(std::span<const Eigen::VectorXf* const> proprio, int dim) {
  Tensor<T> out({Index(proprio.size()), Index(dim)});
  for (std::size_t b = 0; b < proprio.size(); ++b) {
    if (proprio[b]->size() != dim) {
      throw StructuralError("proprio vector " + std::to_string(b) + " has size " +
                            std::to_string(proprio[b]->size()) + ", expected " + std::to_string(dim));
    }
    out.values.segment(Index(b) * dim, dim) = proprio[b]->template cast<T>().array();
  }
  return out;
}

template <typename T>
QOutput<T> q_forward(std::span<const VoxelGrid* const> grids,
                     std::span<const Eigen::VectorXf* const> proprio, QNetwork<T>& net) {
  Tape<T> tape;
  const Var x = tape.constant(stack_grids<T>(grids));
  const Var z = tape.constant(stack_proprio<T>(proprio, net.config().proprio_dim));
  const QOutputVars vars = net.forward(tape, x, z, false);
  const Index batch = Index(grids.size());
  const Index g = grids.front()->geometry.grid_size;
  QOutput<T> out;
  out.voxel_q = Tensor<T>({batch, g, g, g}, tape.value(vars.voxel_q).values);
  if (vars.rotation_q.defined()) {
    out.bottleneck = tape.value(vars.bottleneck);
    out.rotation_q =
        Tensor<T>({batch, 3, Index(net.config().rotation_bins)}, tape.value(vars.rotation_q).values);
    out.gripper_q = tape.value(vars.gripper_q);
  }
  return out;
}

template <typename T>
QOutput<T> q_forward(const VoxelGrid& grid, const Eigen::VectorXf& proprio, QNetwork<T>& net) {
  const VoxelGrid* grids[] = {&grid};
  const Eigen::VectorXf* props[] = {&proprio};
  return q_forward<T>(std::span<const VoxelGrid* const>(grids),
                      std::span<const Eigen::VectorXf* const>(props), net);
}

template <typename T>
Optimizer<T>::Optimizer(const OptimizerConfig& config, const nn::ParamSet<T>& params)
    : config_(config) {
  if (!(config.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  for (const auto& p : params) {
    m_.push_back(Array<T>::Zero(p.value.size()));
    v_.push_back(Array<T>::Zero(p.value.size()));
  }
}

template <typename T>
void Optimizer<T>::step(nn::ParamSet<T>& params) {
  if (params.size() != m_.size()) {
    throw StructuralError("optimizer state covers " + std::to_string(m_.size()) +
                          " parameters, got " + std::to_string(params.size()));
  }
  for (const auto& p : params) {
    if (p.grad.size() != p.value.size()) {
      throw StructuralError("gradient of " + p.name + " is not congruent with its value");
    }
    if (!p.grad.allFinite()) {
      throw TrainingDivergedError("non-finite gradient in parameter " + p.name);
    }
  }
  ++steps_;
  const T lr = static_cast<T>(config_.learning_rate);
  if (config_.kind == OptimizerConfig::Kind::kSgd) {
    for (auto& p : params) p.value.values -= lr * p.grad;
    return;
  }
  const T b1 = static_cast<T>(config_.beta1);
  const T b2 = static_cast<T>(config_.beta2);
  const T eps = static_cast<T>(config_.epsilon);
  const T c1 = T(1) - static_cast<T>(std::pow(config_.beta1, double(steps_)));
  const T c2 = T(1) - static_cast<T>(std::pow(config_.beta2, double(steps_)));
  std::size_t i = 0;
  for (auto& p : params) {
    auto& m = m_[i];
    auto& v = v_[i];
    m = b1 * m + (T(1) - b1) * p.grad;
    v = b2 * v + (T(1) - b2) * p.grad.square();
    p.value.values -= lr * (m / c1) / ((v / c2).sqrt() + eps);
    ++i;
  }
}

template <typename T>
void soft_update(const nn::ParamSet<T>& online, nn::ParamSet<T>& target, double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("tau must be in (0, 1]");
  online.check_congruent(target);
  const T t = static_cast<T>(tau);
  for (std::size_t i = 0; i < online.size(); ++i) {
    auto& dst = target[Index(i)].value.values;
    if (tau == 1.0) {
      dst = online[Index(i)].value.values;
    } else {
      dst = t * online[Index(i)].value.values + (T(1) - t) * dst;
    }
  }
}

template <typename T>
double gradient_norm(const nn::ParamSet<T>& params) {
  double total = 0.0;
  for (const auto& p : params) total += p.grad.template cast<double>().square().sum();
  return std::sqrt(total);
}

#define C2F_INSTANTIATE_QNET(T)                                                               \
  template class QNetwork<T>;                                                                 \
  template class Optimizer<T>;                                                                \
  template Tensor<T> stack_grids<T>(std::span<const VoxelGrid* const>);                       \
  template Tensor<T> stack_proprio<T>(std::span<const Eigen::VectorXf* const>, int);          \
  template QOutput<T> q_forward<T>(const VoxelGrid&, const Eigen::VectorXf&, QNetwork<T>&);   \
  template QOutput<T> q_forward<T>(std::span<const VoxelGrid* const>,                         \
                                   std::span<const Eigen::VectorXf* const>, QNetwork<T>&);    \
  template void soft_update<T>(const nn::ParamSet<T>&, nn::ParamSet<T>&, double);             \
  template double gradient_norm<T>(const nn::ParamSet<T>&);

C2F_INSTANTIATE_QNET(float)
C2F_INSTANTIATE_QNET(double)

template QNetwork<double> QNetwork<float>::cast<double>() const;
template QNetwork<float> QNetwork<double>::cast<float>() const;
template QNetwork<float> QNetwork<float>::cast<float>() const;

}  // namespace c2f
