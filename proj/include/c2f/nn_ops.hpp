#pragma once

// Differentiable ops on channels-last tensors.
//
// Volumes are 5-D [batch, d0, d1, d2, channels]; feature vectors are 2-D
// [batch, features]. Instantiated for float and double.

#include <span>
#include <vector>

#include "c2f/tensor.hpp"

namespace c2f::nn {

struct Conv3dOptions {
  int kernel = 3;
  int stride = 1;
  int padding = 1;
};

// Cross-correlation. `weight` is [k, k, k, c_in, c_out], `bias` is [c_out].
template <typename T>
Var conv3d(Tape<T>& tape, Var input, Var weight, Var bias, const Conv3dOptions& options);

template <typename T>
Var leaky_relu(Tape<T>& tape, Var input, T slope);

// Concatenates two tensors along the last axis; leading axes must agree.
template <typename T>
Var concat_last(Tape<T>& tape, Var a, Var b);
template <typename T>
Var concat_last(Tape<T>& tape, std::span<const Var> parts);

// Non-overlapping factor^3 max pooling; the gradient flows to each window's argmax.
template <typename T>
Var max_pool3d(Tape<T>& tape, Var input, int factor);

// Nearest-neighbour upsampling by `factor` along each spatial axis.
template <typename T>
Var upsample3d(Tape<T>& tape, Var input, int factor);

// Per-channel maximum over all voxels: [B, d0, d1, d2, C] -> [B, C].
template <typename T>
Var global_max_pool3d(Tape<T>& tape, Var input);

// Per-channel spatial softmax followed by the expected normalized voxel
// centre ((index + 0.5) / size per axis): [B, d0, d1, d2, C] -> [B, 3C],
// laid out as (c0.x, c0.y, c0.z, c1.x, ...).
template <typename T>
Var soft_argmax3d(Tape<T>& tape, Var input);

// Fully connected layer: [B, F] x [F, O] + [O] -> [B, O].
template <typename T>
Var linear(Tape<T>& tape, Var input, Var weight, Var bias);

template <typename T>
Var reshape(Tape<T>& tape, Var input, Shape shape);

// out[b] = input[b, columns[b]] for a [B, K] input.
template <typename T>
Var gather_rows(Tape<T>& tape, Var input, std::span<const Index> columns);

// mean_b (input[b] - target[b])^2 for a [B] input and constant targets.
template <typename T>
Var mean_squared_error(Tape<T>& tape, Var input, const Array<T>& targets);

// mean of input^2 over every element.
template <typename T>
Var mean_square(Tape<T>& tape, Var input);

template <typename T>
Var sum(Tape<T>& tape, Var input);

template <typename T>
Var add(Tape<T>& tape, Var a, Var b);

template <typename T>
Var scale(Tape<T>& tape, Var input, T factor);

}  // namespace c2f::nn
