#include "c2f/learner.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace c2f {

using nn::Index;

void LearnerConfig::validate() const {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must be in [0, 1)");
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("tau must be in (0, 1]");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(reg_weight >= 0.0)) throw ConfigError("reg_weight must be >= 0");
  if (!(demo_fraction >= 0.0 && demo_fraction <= 1.0)) {
    throw ConfigError("demo_fraction must be in [0, 1]");
  }
  if (buffer_capacity < 1) throw ConfigError("buffer_capacity must be >= 1");
  if (train_steps_per_env_step < 0) throw ConfigError("train_steps_per_env_step must be >= 0");
  if (demo_stride < 1) throw ConfigError("demo_stride must be >= 1");
  if (!(stillness_threshold > 0.0)) throw ConfigError("stillness_threshold must be positive");
}

// ---------------------------------------------------------------------------
// Replay buffer

ReplayBuffer::ReplayBuffer(std::size_t capacity, double demo_fraction, std::uint64_t seed)
    : capacity_(capacity), demo_fraction_(demo_fraction), rng_(seed) {
  if (capacity == 0) throw ConfigError("replay capacity must be positive");
  if (!(demo_fraction >= 0.0 && demo_fraction <= 1.0)) {
    throw ConfigError("demo_fraction must be in [0, 1]");
  }
}

void ReplayBuffer::add(Transition transition) {
  std::lock_guard lock(mutex_);
  if (demos_.size() + online_.size() >= capacity_) {
    if (!online_.empty()) {
      online_.pop_front();
    } else {
      demos_.pop_front();
    }
  }
  if (transition.is_demo) {
    demos_.push_back(std::move(transition));
  } else {
    online_.push_back(std::move(transition));
  }
}

void ReplayBuffer::add(std::span<const Transition> transitions) {
  for (const auto& t : transitions) add(t);
}

std::size_t ReplayBuffer::size() const {
  std::lock_guard lock(mutex_);
  return demos_.size() + online_.size();
}

std::size_t ReplayBuffer::demo_count() const {
  std::lock_guard lock(mutex_);
  return demos_.size();
}

std::size_t ReplayBuffer::online_count() const {
  std::lock_guard lock(mutex_);
  return online_.size();
}

std::vector<Transition> ReplayBuffer::sample(std::size_t batch_size) {
  std::lock_guard lock(mutex_);
  std::vector<Transition> batch;
  if (batch_size == 0 || demos_.size() + online_.size() == 0) return batch;
  std::size_t from_demo = 0;
  if (online_.empty()) {
    from_demo = batch_size;
  } else if (!demos_.empty()) {
    from_demo = static_cast<std::size_t>(std::lround(demo_fraction_ * double(batch_size)));
  }
  batch.reserve(batch_size);
  auto draw = [&](const std::deque<Transition>& pool, std::size_t n) {
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    for (std::size_t i = 0; i < n; ++i) batch.push_back(pool[pick(rng_)]);
  };
  draw(demos_, from_demo);
  if (batch_size > from_demo) draw(online_, batch_size - from_demo);
  return batch;
}

std::vector<Transition> ReplayBuffer::snapshot() const {
  std::lock_guard lock(mutex_);
  std::vector<Transition> all(demos_.begin(), demos_.end());
  all.insert(all.end(), online_.begin(), online_.end());
  return all;
}

// ---------------------------------------------------------------------------
// Demonstration processing

std::vector<int> keyframe_discovery(const Trajectory& trajectory, double stillness_threshold) {
  const int T = static_cast<int>(trajectory.size());
  if (T < 2) throw ArgumentError("keyframe discovery needs at least 2 frames, got " + std::to_string(T));
  auto displacement = [&](int t) {
    return t == 0 ? 0.0
                  : (trajectory[static_cast<std::size_t>(t)].pose.translation -
                     trajectory[static_cast<std::size_t>(t) - 1].pose.translation)
                        .norm();
  };
  std::vector<int> keys;
  auto push = [&](int t) {
    if (!keys.empty() && keys.back() == t - 1 && displacement(t) < stillness_threshold) {
      keys.back() = t;
    } else {
      keys.push_back(t);
    }
  };
  for (int t = 1; t < T; ++t) {
    const bool gripper_changed = trajectory[static_cast<std::size_t>(t)].pose.gripper !=
                                 trajectory[static_cast<std::size_t>(t) - 1].pose.gripper;
    const bool came_to_rest =
        displacement(t) < stillness_threshold && displacement(t - 1) >= stillness_threshold;
    if (gripper_changed || came_to_rest || t == T - 1) push(t);
  }
  return keys;
}

std::vector<Transition> demo_augmentation(const Trajectory& trajectory, std::span<const int> keyframes,
                                          int stride, const AgentConfig& config, bool success) {
  if (stride < 1) throw ConfigError("demo augmentation stride must be >= 1");
  if (keyframes.empty()) throw ArgumentError("demo augmentation needs at least one keyframe");
  if (!std::is_sorted(keyframes.begin(), keyframes.end())) {
    throw ArgumentError("keyframes must be sorted");
  }
  const int T = static_cast<int>(trajectory.size());
  const int last = T - 1;
  std::vector<Transition> out;
  for (int t = 0; t < T; ++t) {
    const bool is_key = std::find(keyframes.begin(), keyframes.end(), t) != keyframes.end();
    if (t % stride != 0 && !is_key) continue;
    const auto next = std::upper_bound(keyframes.begin(), keyframes.end(), t);
    if (next == keyframes.end()) continue;
    const int k = *next;
    const auto& target = trajectory[static_cast<std::size_t>(k)];
    Transition tr;
    tr.obs = trajectory[static_cast<std::size_t>(t)].obs;
    tr.next_obs = target.obs;
    tr.action = encode_demo_action(target.pose, config);
    tr.terminal = success && k == last;
    tr.reward = tr.terminal ? kRewardSuccess : kRewardNone;
    tr.is_demo = true;
    out.push_back(std::move(tr));
  }
  return out;
}

// ---------------------------------------------------------------------------
// TD loss

namespace {

template <typename T>
struct GridBatch {
  std::vector<VoxelGrid> grids;
  std::vector<const VoxelGrid*> grid_ptrs;
  std::vector<const Eigen::VectorXf*> proprio_ptrs;

  void finalize() {
    for (const auto& g : grids) grid_ptrs.push_back(&g);
  }
};

template <typename T>
T max_of(const T* values, Index n) {
  return *std::max_element(values, values + n);
}

}  // namespace

template <typename T>
TdLoss<T> td_loss(std::span<const Transition> batch, QAttentionModel<T>& model,
                  const AgentConfig& agent, const LearnerConfig& config, bool with_gradients) {
  const int depth = agent.depth();
  if (batch.empty()) throw DataError("td_loss: empty batch");
  if (model.depth() != depth) {
    throw StructuralError("td_loss: model depth " + std::to_string(model.depth()) +
                          " does not match config depth " + std::to_string(depth));
  }
  const std::size_t B = batch.size();
  for (std::size_t b = 0; b < B; ++b) {
    const Transition& tr = batch[b];
    if (static_cast<int>(tr.action.voxel_indices.size()) != depth) {
      throw DataError("transition " + std::to_string(b) + " carries " +
                      std::to_string(tr.action.voxel_indices.size()) + " coords, expected " +
                      std::to_string(depth));
    }
    if (!tr.obs || (!tr.terminal && !tr.next_obs)) {
      throw DataError("transition " + std::to_string(b) + " is missing an observation");
    }
  }
  const int bins = agent.codec().bin_count();
  const T gamma = static_cast<T>(config.gamma);

  // Bootstrap maxima from the target networks on s_{t+1}.
  std::vector<std::vector<T>> next_voxel_max(static_cast<std::size_t>(depth), std::vector<T>(B, T(0)));
  std::vector<std::array<T, 3>> next_rot_max(B, {T(0), T(0), T(0)});
  std::vector<T> next_grip_max(B, T(0));
  std::vector<std::size_t> live;
  for (std::size_t b = 0; b < B; ++b) {
    if (!batch[b].terminal) live.push_back(b);
  }
  if (!live.empty()) {
    std::vector<GridGeometry> geometry(live.size(), agent.root_geometry());
    for (int n = 0; n < depth; ++n) {
      GridBatch<T> gb;
      gb.grids.reserve(live.size());
      for (std::size_t i = 0; i < live.size(); ++i) {
        gb.grids.push_back(voxelize(*batch[live[i]].next_obs, geometry[i], n));
        gb.proprio_ptrs.push_back(&batch[live[i]].next_obs->proprio);
      }
      gb.finalize();
      const QOutput<T> target_q =
          q_forward<T>(gb.grid_ptrs, gb.proprio_ptrs, model.target[static_cast<std::size_t>(n)]);
      const Index V = geometry.front().voxel_count();
      for (std::size_t i = 0; i < live.size(); ++i) {
        next_voxel_max[static_cast<std::size_t>(n)][live[i]] =
            max_of(target_q.voxel_q.data() + Index(i) * V, V);
      }
      if (n == depth - 1) {
        for (std::size_t i = 0; i < live.size(); ++i) {
          for (int a = 0; a < 3; ++a) {
            next_rot_max[live[i]][static_cast<std::size_t>(a)] =
                max_of(target_q.rotation_q->data() + (Index(i) * 3 + a) * bins, Index(bins));
          }
          next_grip_max[live[i]] = max_of(target_q.gripper_q->data() + Index(i) * 2, Index(2));
        }
        break;
      }
      QOutput<T> online_q;
      const QOutput<T>* chooser = &target_q;
      if (config.next_state_descent == LearnerConfig::NextStateDescent::kOnline) {
        online_q =
            q_forward<T>(gb.grid_ptrs, gb.proprio_ptrs, model.online[static_cast<std::size_t>(n)]);
        chooser = &online_q;
      }
      for (std::size_t i = 0; i < live.size(); ++i) {
        const VoxelIndex idx = argmax3d<T>(
            std::span<const T>(chooser->voxel_q.data() + Index(i) * V, static_cast<std::size_t>(V)),
            geometry[i].grid_size);
        geometry[i] = child_geometry(geometry[i], idx, agent.grid_sizes[static_cast<std::size_t>(n) + 1],
                                     agent.zoom_overlap);
      }
    }
  }

  if (with_gradients) {
    for (auto& net : model.online) net.params().zero_grad();
  }

  std::vector<std::vector<GridGeometry>> chains;
  chains.reserve(B);
  for (const auto& tr : batch) chains.push_back(geometry_chain(tr.action.voxel_indices, agent));

  TdLoss<T> result;
  for (int n = 0; n < depth; ++n) {
    GridBatch<T> gb;
    gb.grids.reserve(B);
    std::vector<Index> columns(B);
    nn::Array<T> targets(static_cast<Index>(B));
    for (std::size_t b = 0; b < B; ++b) {
      const Transition& tr = batch[b];
      const GridGeometry& geometry = chains[b][static_cast<std::size_t>(n)];
      const VoxelIndex& idx = tr.action.voxel_indices[static_cast<std::size_t>(n)];
      if (!geometry.contains(idx)) {
        throw DataError("transition " + std::to_string(b) + " has an out-of-range index at depth " +
                        std::to_string(n));
      }
      gb.grids.push_back(voxelize(*tr.obs, geometry, n));
      gb.proprio_ptrs.push_back(&tr.obs->proprio);
      columns[b] = geometry.linear(idx);
      const T bootstrap = tr.terminal ? T(0) : gamma * next_voxel_max[static_cast<std::size_t>(n)][b];
      targets[Index(b)] = static_cast<T>(tr.reward) + bootstrap;
    }
    gb.finalize();

    nn::Tape<T> tape;
    auto& net = model.online[static_cast<std::size_t>(n)];
    const nn::Var x = tape.constant(stack_grids<T>(gb.grid_ptrs));
    const nn::Var z = tape.constant(stack_proprio<T>(gb.proprio_ptrs, net.config().proprio_dim));
    const QOutputVars out = net.forward(tape, x, z, with_gradients);
    nn::Var loss = nn::mean_squared_error(tape, nn::gather_rows(tape, out.voxel_q, columns), targets);
    if (config.reg_weight > 0.0) {
      loss = nn::add(tape, loss,
                     nn::scale(tape, nn::mean_square(tape, out.voxel_q), static_cast<T>(config.reg_weight)));
    }
    if (n == depth - 1) {
      std::vector<nn::Var> head_terms;
      for (int a = 0; a < 3; ++a) {
        std::vector<Index> cols(B);
        nn::Array<T> y(static_cast<Index>(B));
        for (std::size_t b = 0; b < B; ++b) {
          const Transition& tr = batch[b];
          const int bin = tr.action.rotation_bins[static_cast<std::size_t>(a)];
          if (bin < 0 || bin >= bins) throw DataError("rotation bin out of range");
          cols[b] = Index(a) * bins + bin;
          y[Index(b)] = static_cast<T>(tr.reward) +
                        (tr.terminal ? T(0) : gamma * next_rot_max[b][static_cast<std::size_t>(a)]);
        }
        head_terms.push_back(
            nn::mean_squared_error(tape, nn::gather_rows(tape, out.rotation_q, cols), y));
      }
      std::vector<Index> cols(B);
      nn::Array<T> y(static_cast<Index>(B));
      for (std::size_t b = 0; b < B; ++b) {
        const Transition& tr = batch[b];
        if (tr.action.gripper_bin != 0 && tr.action.gripper_bin != 1) {
          throw DataError("gripper bin out of range");
        }
        cols[b] = tr.action.gripper_bin;
        y[Index(b)] = static_cast<T>(tr.reward) + (tr.terminal ? T(0) : gamma * next_grip_max[b]);
      }
      head_terms.push_back(nn::mean_squared_error(tape, nn::gather_rows(tape, out.gripper_q, cols), y));
      nn::Var head = head_terms.front();
      for (std::size_t h = 1; h < head_terms.size(); ++h) head = nn::add(tape, head, head_terms[h]);
      result.head = tape.value(head).values[0];
      loss = nn::add(tape, loss, head);
    }
    const T value = tape.value(loss).values[0];
    if (!std::isfinite(static_cast<double>(value))) {
      throw TrainingDivergedError("non-finite TD loss at depth " + std::to_string(n));
    }
    result.per_depth.push_back(value);
    result.total += value;
    if (with_gradients) tape.backward(loss);
  }
  return result;
}

template TdLoss<float> td_loss<float>(std::span<const Transition>, QAttentionModel<float>&,
                                      const AgentConfig&, const LearnerConfig&, bool);
template TdLoss<double> td_loss<double>(std::span<const Transition>, QAttentionModel<double>&,
                                        const AgentConfig&, const LearnerConfig&, bool);

// ---------------------------------------------------------------------------
// Learner

Learner::Learner(const AgentConfig& agent, const LearnerConfig& config, std::uint64_t seed)
    : agent_(agent), config_(config), model_(QAttentionModel<float>::create(agent, seed)) {
  config.validate();
  OptimizerConfig opt;
  opt.kind = config.optimizer;
  opt.learning_rate = config.learning_rate;
  for (const auto& net : model_.online) optimizers_.emplace_back(opt, net.params());
}

TrainMetrics Learner::update(std::span<const Transition> batch) {
  TrainMetrics metrics;
  const TdLoss<float> loss = td_loss<float>(batch, model_, agent_, config_, true);
  for (std::size_t n = 0; n < model_.online.size(); ++n) {
    metrics.grad_norms.push_back(gradient_norm(model_.online[n].params()));
    optimizers_[n].step(model_.online[n].params());
    soft_update(model_.online[n].params(), model_.target[n].params(), config_.tau);
  }
  ++steps_;
  metrics.ready = true;
  metrics.loss_total = loss.total;
  metrics.head_loss = loss.head;
  for (float l : loss.per_depth) metrics.loss_per_depth.push_back(l);
  for (const auto& t : batch) metrics.batch_demos += t.is_demo ? 1 : 0;
  return metrics;
}

TrainMetrics Learner::train_step(ReplayBuffer& buffer) {
  const auto batch_size = static_cast<std::size_t>(config_.batch_size);
  if (!buffer.ready(batch_size)) {
    TrainMetrics metrics;
    metrics.buffer_size = buffer.size();
    metrics.demo_count = buffer.demo_count();
    return metrics;
  }
  const std::vector<Transition> batch = buffer.sample(batch_size);
  TrainMetrics metrics = update(batch);
  metrics.buffer_size = buffer.size();
  metrics.demo_count = buffer.demo_count();
  return metrics;
}

}  // namespace c2f
