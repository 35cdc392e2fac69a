#include "c2f/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace c2f::nn {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void require(bool condition, const std::string& message) {
  if (!condition) throw StructuralError(message);
}

void require_volume(const Shape& s, const char* op) {
  require(s.size() == 5, std::string(op) + " expects a [B,d0,d1,d2,C] tensor, got " + shape_string(s));
}

struct ConvGeometry {
  Index batch, in[3], cin, out[3], cout, kernel, stride, padding;

  Index in_voxels() const { return in[0] * in[1] * in[2]; }
  Index out_voxels() const { return out[0] * out[1] * out[2]; }
  Index taps() const { return kernel * kernel * kernel; }
  bool pointwise() const { return kernel == 1 && stride == 1 && padding == 0; }
};

// cols[r, tap * cin + ci] = x[source voxel of output r at tap, ci], zero in the padding.
template <typename T>
void im2col(const T* x, const ConvGeometry& g, RowMatrix<T>& cols) {
  cols.setZero(g.out_voxels(), g.taps() * g.cin);
  Index row = 0;
  for (Index o0 = 0; o0 < g.out[0]; ++o0) {
    for (Index o1 = 0; o1 < g.out[1]; ++o1) {
      for (Index o2 = 0; o2 < g.out[2]; ++o2, ++row) {
        T* dst = cols.data() + row * cols.cols();
        Index tap = 0;
        for (Index a = 0; a < g.kernel; ++a) {
          const Index s0 = o0 * g.stride - g.padding + a;
          for (Index b = 0; b < g.kernel; ++b) {
            const Index s1 = o1 * g.stride - g.padding + b;
            for (Index c = 0; c < g.kernel; ++c, ++tap) {
              const Index s2 = o2 * g.stride - g.padding + c;
              if (s0 < 0 || s1 < 0 || s2 < 0 || s0 >= g.in[0] || s1 >= g.in[1] || s2 >= g.in[2]) {
                continue;
              }
              const T* src = x + ((s0 * g.in[1] + s1) * g.in[2] + s2) * g.cin;
              std::copy_n(src, g.cin, dst + tap * g.cin);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const RowMatrix<T>& cols, const ConvGeometry& g, T* dx) {
  Index row = 0;
  for (Index o0 = 0; o0 < g.out[0]; ++o0) {
    for (Index o1 = 0; o1 < g.out[1]; ++o1) {
      for (Index o2 = 0; o2 < g.out[2]; ++o2, ++row) {
        const T* src = cols.data() + row * cols.cols();
        Index tap = 0;
        for (Index a = 0; a < g.kernel; ++a) {
          const Index s0 = o0 * g.stride - g.padding + a;
          for (Index b = 0; b < g.kernel; ++b) {
            const Index s1 = o1 * g.stride - g.padding + b;
            for (Index c = 0; c < g.kernel; ++c, ++tap) {
              const Index s2 = o2 * g.stride - g.padding + c;
              if (s0 < 0 || s1 < 0 || s2 < 0 || s0 >= g.in[0] || s1 >= g.in[1] || s2 >= g.in[2]) {
                continue;
              }
              T* dst = dx + ((s0 * g.in[1] + s1) * g.in[2] + s2) * g.cin;
              const T* part = src + tap * g.cin;
              for (Index ci = 0; ci < g.cin; ++ci) dst[ci] += part[ci];
            }
          }
        }
      }
    }
  }
}

template <typename T>
using ConstRowMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using RowMap = Eigen::Map<RowMatrix<T>>;

}  // namespace

template <typename T>
Var conv3d(Tape<T>& tape, Var input, Var weight, Var bias, const Conv3dOptions& options) {
  const Shape xs = tape.shape(input);
  const Shape ws = tape.shape(weight);
  require_volume(xs, "conv3d");
  require(options.kernel >= 1 && options.stride >= 1 && options.padding >= 0,
          "conv3d: invalid kernel/stride/padding");
  const Index k = options.kernel;
  require(ws.size() == 5 && ws[0] == k && ws[1] == k && ws[2] == k && ws[3] == xs[4],
          "conv3d: weight shape " + shape_string(ws) + " incompatible with input " + shape_string(xs) +
              " and kernel " + std::to_string(k));
  require(tape.shape(bias) == Shape{ws[4]}, "conv3d: bias shape must be [c_out]");

  ConvGeometry g{};
  g.batch = xs[0];
  g.cin = xs[4];
  g.cout = ws[4];
  g.kernel = k;
  g.stride = options.stride;
  g.padding = options.padding;
  for (int a = 0; a < 3; ++a) {
    g.in[a] = xs[static_cast<std::size_t>(a) + 1];
    const Index span = g.in[a] + 2 * g.padding - k;
    require(span >= 0, "conv3d: kernel larger than padded input " + shape_string(xs));
    g.out[a] = span / g.stride + 1;
  }

  Tensor<T> out({g.batch, g.out[0], g.out[1], g.out[2], g.cout});
  {
    const ConstRowMap<T> w(tape.value(weight).data(), g.taps() * g.cin, g.cout);
    const auto b = tape.value(bias).values.matrix().transpose();
    const T* x = tape.value(input).data();
    RowMatrix<T> cols;
    for (Index n = 0; n < g.batch; ++n) {
      RowMap<T> y(out.data() + n * g.out_voxels() * g.cout, g.out_voxels(), g.cout);
      if (g.pointwise()) {
        y.noalias() = ConstRowMap<T>(x + n * g.in_voxels() * g.cin, g.in_voxels(), g.cin) * w;
      } else {
        im2col(x + n * g.in_voxels() * g.cin, g, cols);
        y.noalias() = cols * w;
      }
      y.rowwise() += b;
    }
  }

  return tape.record(std::move(out), {input, weight, bias}, [=](Tape<T>& t, Var self) {
    const Array<T>& dy_all = t.grad(self);
    const T* x = t.value(input).data();
    const ConstRowMap<T> w(t.value(weight).data(), g.taps() * g.cin, g.cout);
    const bool want_w = t.needs_grad(weight);
    const bool want_b = t.needs_grad(bias);
    const bool want_x = t.needs_grad(input);
    T* dw_data = want_w ? t.grad(weight).data() : nullptr;
    T* db_data = want_b ? t.grad(bias).data() : nullptr;
    T* dx_data = want_x ? t.grad(input).data() : nullptr;
    RowMatrix<T> cols;
    RowMatrix<T> dcols;
    for (Index n = 0; n < g.batch; ++n) {
      const ConstRowMap<T> dy(dy_all.data() + n * g.out_voxels() * g.cout, g.out_voxels(), g.cout);
      if (want_b) {
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(db_data, g.cout) += dy.colwise().sum();
      }
      if (g.pointwise()) {
        const ConstRowMap<T> xn(x + n * g.in_voxels() * g.cin, g.in_voxels(), g.cin);
        if (want_w) RowMap<T>(dw_data, g.cin, g.cout).noalias() += xn.transpose() * dy;
        if (want_x) {
          RowMap<T>(dx_data + n * g.in_voxels() * g.cin, g.in_voxels(), g.cin).noalias() +=
              dy * w.transpose();
        }
        continue;
      }
      if (want_w) {
        im2col(x + n * g.in_voxels() * g.cin, g, cols);
        RowMap<T>(dw_data, g.taps() * g.cin, g.cout).noalias() += cols.transpose() * dy;
      }
      if (want_x) {
        dcols.noalias() = dy * w.transpose();
        col2im_add(dcols, g, dx_data + n * g.in_voxels() * g.cin);
      }
    }
  });
}

template <typename T>
Var leaky_relu(Tape<T>& tape, Var input, T slope) {
  const Tensor<T>& x = tape.value(input);
  Tensor<T> out(x.shape, (x.values > T(0)).select(x.values, slope * x.values));
  return tape.record(std::move(out), {input}, [=](Tape<T>& t, Var self) {
    const Array<T>& xv = t.value(input).values;
    const Array<T>& dy = t.grad(self);
    t.grad(input) += (xv > T(0)).select(dy, slope * dy);
  });
}

template <typename T>
Var concat_last(Tape<T>& tape, std::span<const Var> parts) {
  require(!parts.empty(), "concat_last: no inputs");
  const Shape first = tape.shape(parts[0]);
  std::vector<Index> widths;
  Index total = 0;
  for (Var p : parts) {
    const Shape& s = tape.shape(p);
    require(s.size() == first.size() && std::equal(s.begin(), s.end() - 1, first.begin()),
            "concat_last: leading axes differ: " + shape_string(s) + " vs " + shape_string(first));
    widths.push_back(s.back());
    total += s.back();
  }
  const Index rows = numel(first) / first.back();
  Shape out_shape = first;
  out_shape.back() = total;
  Tensor<T> out(out_shape);
  Index offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const T* src = tape.value(parts[p]).data();
    for (Index r = 0; r < rows; ++r) {
      std::copy_n(src + r * widths[p], widths[p], out.data() + r * total + offset);
    }
    offset += widths[p];
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape.record(std::move(out), inputs, [=](Tape<T>& t, Var self) {
    const Array<T>& dy = t.grad(self);
    Index off = 0;
    for (std::size_t p = 0; p < inputs.size(); ++p) {
      if (t.needs_grad(inputs[p])) {
        Array<T>& dx = t.grad(inputs[p]);
        for (Index r = 0; r < rows; ++r) {
          for (Index c = 0; c < widths[p]; ++c) dx[r * widths[p] + c] += dy[r * total + off + c];
        }
      }
      off += widths[p];
    }
  });
}

template <typename T>
Var concat_last(Tape<T>& tape, Var a, Var b) {
  const Var parts[] = {a, b};
  return concat_last(tape, std::span<const Var>(parts));
}

template <typename T>
Var max_pool3d(Tape<T>& tape, Var input, int factor) {
  const Shape xs = tape.shape(input);
  require_volume(xs, "max_pool3d");
  require(factor >= 1, "max_pool3d: factor must be >= 1");
  for (int a = 1; a <= 3; ++a) {
    require(xs[static_cast<std::size_t>(a)] % factor == 0,
            "max_pool3d: spatial dims " + shape_string(xs) + " not divisible by " +
                std::to_string(factor));
  }
  const Index f = factor;
  const Index B = xs[0], C = xs[4];
  const Index o0 = xs[1] / f, o1 = xs[2] / f, o2 = xs[3] / f;
  Tensor<T> out({B, o0, o1, o2, C});
  std::vector<Index> argmax(static_cast<std::size_t>(out.size()));
  const T* x = tape.value(input).data();
  Index oi = 0;
  for (Index b = 0; b < B; ++b) {
    for (Index i = 0; i < o0; ++i) {
      for (Index j = 0; j < o1; ++j) {
        for (Index k = 0; k < o2; ++k) {
          for (Index c = 0; c < C; ++c, ++oi) {
            T best = -std::numeric_limits<T>::infinity();
            Index best_at = -1;
            for (Index a = 0; a < f; ++a) {
              for (Index bb = 0; bb < f; ++bb) {
                for (Index cc = 0; cc < f; ++cc) {
                  const Index src =
                      ((((b * xs[1]) + i * f + a) * xs[2] + j * f + bb) * xs[3] + k * f + cc) * C + c;
                  if (best_at < 0 || x[src] > best) {
                    best = x[src];
                    best_at = src;
                  }
                }
              }
            }
            out.values[oi] = best;
            argmax[static_cast<std::size_t>(oi)] = best_at;
          }
        }
      }
    }
  }
  return tape.record(std::move(out), {input}, [input, argmax = std::move(argmax)](Tape<T>& t, Var self) {
    const Array<T>& dy = t.grad(self);
    Array<T>& dx = t.grad(input);
    for (std::size_t o = 0; o < argmax.size(); ++o) dx[argmax[o]] += dy[static_cast<Index>(o)];
  });
}

template <typename T>
Var upsample3d(Tape<T>& tape, Var input, int factor) {
  const Shape xs = tape.shape(input);
  require_volume(xs, "upsample3d");
  require(factor >= 1, "upsample3d: factor must be >= 1");
  const Index f = factor;
  const Index B = xs[0], C = xs[4];
  const Shape os{B, xs[1] * f, xs[2] * f, xs[3] * f, C};
  Tensor<T> out(os);
  const T* x = tape.value(input).data();
  // source offset of every output voxel
  std::vector<Index> source(static_cast<std::size_t>(B * os[1] * os[2] * os[3]));
  Index v = 0;
  for (Index b = 0; b < B; ++b) {
    for (Index i = 0; i < os[1]; ++i) {
      for (Index j = 0; j < os[2]; ++j) {
        for (Index k = 0; k < os[3]; ++k, ++v) {
          const Index src = (((b * xs[1] + i / f) * xs[2] + j / f) * xs[3] + k / f) * C;
          source[static_cast<std::size_t>(v)] = src;
          std::copy_n(x + src, C, out.data() + v * C);
        }
      }
    }
  }
  return tape.record(std::move(out), {input}, [input, C, source = std::move(source)](Tape<T>& t, Var self) {
    const Array<T>& dy = t.grad(self);
    Array<T>& dx = t.grad(input);
    for (std::size_t o = 0; o < source.size(); ++o) {
      for (Index c = 0; c < C; ++c) dx[source[o] + c] += dy[static_cast<Index>(o) * C + c];
    }
  });
}

template <typename T>
Var global_max_pool3d(Tape<T>& tape, Var input) {
  const Shape xs = tape.shape(input);
  require_volume(xs, "global_max_pool3d");
  const Index B = xs[0], C = xs[4], V = xs[1] * xs[2] * xs[3];
  Tensor<T> out({B, C});
  std::vector<Index> argmax(static_cast<std::size_t>(B * C));
  const T* x = tape.value(input).data();
  for (Index b = 0; b < B; ++b) {
    for (Index c = 0; c < C; ++c) {
      Index best = (b * V) * C + c;
      for (Index v = 1; v < V; ++v) {
        const Index at = (b * V + v) * C + c;
        if (x[at] > x[best]) best = at;
      }
      out.values[b * C + c] = x[best];
      argmax[static_cast<std::size_t>(b * C + c)] = best;
    }
  }
  return tape.record(std::move(out), {input}, [input, argmax = std::move(argmax)](Tape<T>& t, Var self) {
    const Array<T>& dy = t.grad(self);
    Array<T>& dx = t.grad(input);
    for (std::size_t o = 0; o < argmax.size(); ++o) dx[argmax[o]] += dy[static_cast<Index>(o)];
  });
}

namespace {

// Softmax weights of channel c for sample b, written into `weights` (size V).
template <typename T>
void channel_softmax(const T* x, Index b, Index c, Index V, Index C, Array<T>& weights) {
  T peak = -std::numeric_limits<T>::infinity();
  for (Index v = 0; v < V; ++v) peak = std::max(peak, x[(b * V + v) * C + c]);
  for (Index v = 0; v < V; ++v) weights[v] = std::exp(x[(b * V + v) * C + c] - peak);
  weights /= weights.sum();
}

}  // namespace

template <typename T>
Var soft_argmax3d(Tape<T>& tape, Var input) {
  const Shape xs = tape.shape(input);
  require_volume(xs, "soft_argmax3d");
  const Index B = xs[0], C = xs[4], V = xs[1] * xs[2] * xs[3];
  // normalized voxel centres, [V, 3]
  RowMatrix<T> centres(V, 3);
  Index v = 0;
  for (Index i = 0; i < xs[1]; ++i) {
    for (Index j = 0; j < xs[2]; ++j) {
      for (Index k = 0; k < xs[3]; ++k, ++v) {
        centres(v, 0) = (T(i) + T(0.5)) / T(xs[1]);
        centres(v, 1) = (T(j) + T(0.5)) / T(xs[2]);
        centres(v, 2) = (T(k) + T(0.5)) / T(xs[3]);
      }
    }
  }
  Tensor<T> out({B, 3 * C});
  const T* x = tape.value(input).data();
  Array<T> weights(V);
  for (Index b = 0; b < B; ++b) {
    for (Index c = 0; c < C; ++c) {
      channel_softmax(x, b, c, V, C, weights);
      const auto expected = (centres.transpose() * weights.matrix()).eval();
      for (int a = 0; a < 3; ++a) out.values[b * 3 * C + 3 * c + a] = expected[a];
    }
  }
  return tape.record(std::move(out), {input}, [=](Tape<T>& t, Var self) {
    const Array<T>& dy = t.grad(self);
    const Array<T>& y = t.value(self).values;
    const T* xv = t.value(input).data();
    Array<T>& dx = t.grad(input);
    Array<T> w(V);
    for (Index b = 0; b < B; ++b) {
      for (Index c = 0; c < C; ++c) {
        channel_softmax(xv, b, c, V, C, w);
        const Eigen::Matrix<T, 3, 1> g(dy[b * 3 * C + 3 * c], dy[b * 3 * C + 3 * c + 1],
                                       dy[b * 3 * C + 3 * c + 2]);
        const Eigen::Matrix<T, 3, 1> mean(y[b * 3 * C + 3 * c], y[b * 3 * C + 3 * c + 1],
                                          y[b * 3 * C + 3 * c + 2]);
        const T baseline = mean.dot(g);
        for (Index vv = 0; vv < V; ++vv) {
          dx[(b * V + vv) * C + c] += w[vv] * (centres.row(vv).dot(g.transpose()) - baseline);
        }
      }
    }
  });
}

template <typename T>
Var linear(Tape<T>& tape, Var input, Var weight, Var bias) {
  const Shape xs = tape.shape(input);
  const Shape ws = tape.shape(weight);
  require(xs.size() == 2 && ws.size() == 2 && ws[0] == xs[1],
          "linear: input " + shape_string(xs) + " incompatible with weight " + shape_string(ws));
  require(tape.shape(bias) == Shape{ws[1]}, "linear: bias shape must be [out]");
  const Index B = xs[0], F = xs[1], O = ws[1];
  Tensor<T> out({B, O});
  RowMap<T> y(out.data(), B, O);
  y.noalias() = ConstRowMap<T>(tape.value(input).data(), B, F) *
                ConstRowMap<T>(tape.value(weight).data(), F, O);
  y.rowwise() += tape.value(bias).values.matrix().transpose();
  return tape.record(std::move(out), {input, weight, bias}, [=](Tape<T>& t, Var self) {
    const ConstRowMap<T> dy(t.grad(self).data(), B, O);
    if (t.needs_grad(weight)) {
      RowMap<T>(t.grad(weight).data(), F, O).noalias() +=
          ConstRowMap<T>(t.value(input).data(), B, F).transpose() * dy;
    }
    if (t.needs_grad(bias)) {
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(t.grad(bias).data(), O) += dy.colwise().sum();
    }
    if (t.needs_grad(input)) {
      RowMap<T>(t.grad(input).data(), B, F).noalias() +=
          dy * ConstRowMap<T>(t.value(weight).data(), F, O).transpose();
    }
  });
}

template <typename T>
Var reshape(Tape<T>& tape, Var input, Shape shape) {
  require(numel(shape) == tape.value(input).size(),
          "reshape: cannot view " + shape_string(tape.shape(input)) + " as " + shape_string(shape));
  Tensor<T> out(std::move(shape), tape.value(input).values);
  return tape.record(std::move(out), {input}, [input](Tape<T>& t, Var self) {
    t.grad(input) += t.grad(self);
  });
}

template <typename T>
Var gather_rows(Tape<T>& tape, Var input, std::span<const Index> columns) {
  const Shape xs = tape.shape(input);
  require(xs.size() == 2 && static_cast<Index>(columns.size()) == xs[0],
          "gather_rows: need one column per row of " + shape_string(xs));
  const Index B = xs[0], K = xs[1];
  std::vector<Index> flat(columns.size());
  Tensor<T> out({B});
  for (Index b = 0; b < B; ++b) {
    const Index col = columns[static_cast<std::size_t>(b)];
    if (col < 0 || col >= K) {
      throw IndexError("gather_rows: column " + std::to_string(col) + " outside [0, " +
                       std::to_string(K) + ")");
    }
    flat[static_cast<std::size_t>(b)] = b * K + col;
    out.values[b] = tape.value(input).values[b * K + col];
  }
  return tape.record(std::move(out), {input}, [input, flat = std::move(flat)](Tape<T>& t, Var self) {
    const Array<T>& dy = t.grad(self);
    Array<T>& dx = t.grad(input);
    for (std::size_t b = 0; b < flat.size(); ++b) dx[flat[b]] += dy[static_cast<Index>(b)];
  });
}

template <typename T>
Var mean_squared_error(Tape<T>& tape, Var input, const Array<T>& targets) {
  const Array<T>& x = tape.value(input).values;
  require(x.size() == targets.size() && x.size() > 0, "mean_squared_error: size mismatch");
  const T n = T(x.size());
  Tensor<T> out({1});
  out.values[0] = (x - targets).square().sum() / n;
  return tape.record(std::move(out), {input}, [input, targets, n](Tape<T>& t, Var self) {
    const T g = t.grad(self)[0];
    t.grad(input) += (T(2) * g / n) * (t.value(input).values - targets);
  });
}

template <typename T>
Var mean_square(Tape<T>& tape, Var input) {
  const Array<T>& x = tape.value(input).values;
  require(x.size() > 0, "mean_square: empty input");
  const T n = T(x.size());
  Tensor<T> out({1});
  out.values[0] = x.square().sum() / n;
  return tape.record(std::move(out), {input}, [input, n](Tape<T>& t, Var self) {
    const T g = t.grad(self)[0];
    t.grad(input) += (T(2) * g / n) * t.value(input).values;
  });
}

template <typename T>
Var sum(Tape<T>& tape, Var input) {
  Tensor<T> out({1});
  out.values[0] = tape.value(input).values.sum();
  return tape.record(std::move(out), {input}, [input](Tape<T>& t, Var self) {
    t.grad(input) += t.grad(self)[0];
  });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  require(tape.shape(a) == tape.shape(b), "add: shape mismatch " + shape_string(tape.shape(a)) +
                                              " vs " + shape_string(tape.shape(b)));
  Tensor<T> out(tape.shape(a), tape.value(a).values + tape.value(b).values);
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, Var self) {
    if (t.needs_grad(a)) t.grad(a) += t.grad(self);
    if (t.needs_grad(b)) t.grad(b) += t.grad(self);
  });
}

template <typename T>
Var scale(Tape<T>& tape, Var input, T factor) {
  Tensor<T> out(tape.shape(input), tape.value(input).values * factor);
  return tape.record(std::move(out), {input}, [input, factor](Tape<T>& t, Var self) {
    t.grad(input) += factor * t.grad(self);
  });
}

#define C2F_INSTANTIATE_OPS(T)                                                                \
  template Var conv3d<T>(Tape<T>&, Var, Var, Var, const Conv3dOptions&);                      \
  template Var leaky_relu<T>(Tape<T>&, Var, T);                                               \
  template Var concat_last<T>(Tape<T>&, Var, Var);                                            \
  template Var concat_last<T>(Tape<T>&, std::span<const Var>);                                \
  template Var max_pool3d<T>(Tape<T>&, Var, int);                                             \
  template Var upsample3d<T>(Tape<T>&, Var, int);                                             \
  template Var global_max_pool3d<T>(Tape<T>&, Var);                                           \
  template Var soft_argmax3d<T>(Tape<T>&, Var);                                               \
  template Var linear<T>(Tape<T>&, Var, Var, Var);                                            \
  template Var reshape<T>(Tape<T>&, Var, Shape);                                              \
  template Var gather_rows<T>(Tape<T>&, Var, std::span<const Index>);                         \
  template Var mean_squared_error<T>(Tape<T>&, Var, const Array<T>&);                         \
  template Var mean_square<T>(Tape<T>&, Var);                                                 \
  template Var sum<T>(Tape<T>&, Var);                                                         \
  template Var add<T>(Tape<T>&, Var, Var);                                                    \
  template Var scale<T>(Tape<T>&, Var, T);

C2F_INSTANTIATE_OPS(float)
C2F_INSTANTIATE_OPS(double)

}  // namespace c2f::nn
