#include "drivesim/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>

namespace drivesim::ad {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

std::string Shape::str() const {
  std::string s = "[";
  for (size_t i = 0; i < dims.size(); ++i) s += strf(i ? ",%d" : "%d", dims[i]);
  return s + "]";
}

int Tape::emplace(Shape shape, std::vector<double> val) {
  Node n;
  n.shape = std::move(shape);
  n.grad.assign(val.size(), 0.0);
  n.val = std::move(val);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::backward(int root) {
  if (nodes_[root].val.size() != 1)
    throw ShapeError(strf("backward root must be scalar, got %s", nodes_[root].shape.str().c_str()));
  nodes_[root].grad[0] = 1.0;
  for (int i = root; i >= 0; --i)
    if (nodes_[i].backward) nodes_[i].backward();
}

namespace {

Tape& tape_of(const Tensor& a, const char* op) {
  if (a.tape == nullptr || a.id < 0) throw Error(strf("%s: unbound tensor", op));
  return *a.tape;
}

void want_same_tape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.tape != b.tape) throw Error(strf("%s: operands on different tapes", op));
}

void want_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape)
    throw ShapeError(
        strf("%s: shape %s vs %s", op, a.shape.str().c_str(), b.shape.str().c_str()));
}

Tensor wrap(Tape& t, int id, Shape shape) { return Tensor{&t, id, std::move(shape)}; }

// outer x axis x inner decomposition for axis-wise ops
void axis_split(const Shape& s, int axis, int& outer, int& inner) {
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (int i = axis + 1; i < s.ndim(); ++i) inner *= s[i];
}

}  // namespace

Tensor constant(Tape& t, Shape shape, std::vector<double> data) {
  if (static_cast<int>(data.size()) != shape.numel())
    throw ShapeError(strf("constant: %zu values for shape %s", data.size(), shape.str().c_str()));
  int id = t.emplace(shape, std::move(data));
  return wrap(t, id, t.node(id).shape);
}

Tensor zeros(Tape& t, Shape shape) {
  std::vector<double> v(shape.numel(), 0.0);
  return constant(t, std::move(shape), std::move(v));
}

Tensor add(Tensor a, Tensor b) {
  want_same_tape(a, b, "add");
  want_same_shape(a, b, "add");
  Tape& t = tape_of(a, "add");
  std::vector<double> v(a.val().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.val()[i] + b.val()[i];
  int out = t.emplace(a.shape, std::move(v));
  Tape* tp = &t;
  int ia = a.id, ib = b.id;
  t.node(out).backward = [tp, ia, ib, out] {
    const auto& g = tp->node(out).grad;
    auto& ga = tp->node(ia).grad;
    auto& gb = tp->node(ib).grad;
    for (size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] += g[i];
    }
  };
  return wrap(t, out, a.shape);
}

Tensor mul(Tensor a, Tensor b) {
  want_same_tape(a, b, "mul");
  want_same_shape(a, b, "mul");
  Tape& t = tape_of(a, "mul");
  std::vector<double> v(a.val().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.val()[i] * b.val()[i];
  int out = t.emplace(a.shape, std::move(v));
  Tape* tp = &t;
  int ia = a.id, ib = b.id;
  t.node(out).backward = [tp, ia, ib, out] {
    const auto& g = tp->node(out).grad;
    const auto& va = tp->node(ia).val;
    const auto& vb = tp->node(ib).val;
    auto& ga = tp->node(ia).grad;
    auto& gb = tp->node(ib).grad;
    for (size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i] * vb[i];
      gb[i] += g[i] * va[i];
    }
  };
  return wrap(t, out, a.shape);
}

Tensor scale(Tensor a, double k) {
  Tape& t = tape_of(a, "scale");
  std::vector<double> v(a.val().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = k * a.val()[i];
  int out = t.emplace(a.shape, std::move(v));
  Tape* tp = &t;
  int ia = a.id;
  t.node(out).backward = [tp, ia, out, k] {
    const auto& g = tp->node(out).grad;
    auto& ga = tp->node(ia).grad;
    for (size_t i = 0; i < g.size(); ++i) ga[i] += k * g[i];
  };
  return wrap(t, out, a.shape);
}

Tensor relu(Tensor x) {
  Tape& t = tape_of(x, "relu");
  std::vector<double> v(x.val().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = x.val()[i] > 0 ? x.val()[i] : 0.0;
  int out = t.emplace(x.shape, std::move(v));
  Tape* tp = &t;
  int ix = x.id;
  t.node(out).backward = [tp, ix, out] {
    const auto& g = tp->node(out).grad;
    const auto& vx = tp->node(ix).val;
    auto& gx = tp->node(ix).grad;
    for (size_t i = 0; i < g.size(); ++i)
      if (vx[i] > 0) gx[i] += g[i];
  };
  return wrap(t, out, x.shape);
}

Tensor tanh(Tensor x) {
  Tape& t = tape_of(x, "tanh");
  std::vector<double> v(x.val().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = std::tanh(x.val()[i]);
  int out = t.emplace(x.shape, std::move(v));
  Tape* tp = &t;
  int ix = x.id;
  t.node(out).backward = [tp, ix, out] {
    const auto& g = tp->node(out).grad;
    const auto& vo = tp->node(out).val;
    auto& gx = tp->node(ix).grad;
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - vo[i] * vo[i]);
  };
  return wrap(t, out, x.shape);
}

Tensor sigmoid(Tensor x) {
  Tape& t = tape_of(x, "sigmoid");
  std::vector<double> v(x.val().size());
  for (size_t i = 0; i < v.size(); ++i) {
    double z = x.val()[i];
    v[i] = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  }
  int out = t.emplace(x.shape, std::move(v));
  Tape* tp = &t;
  int ix = x.id;
  t.node(out).backward = [tp, ix, out] {
    const auto& g = tp->node(out).grad;
    const auto& vo = tp->node(out).val;
    auto& gx = tp->node(ix).grad;
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * vo[i] * (1.0 - vo[i]);
  };
  return wrap(t, out, x.shape);
}

Tensor matmul(Tensor a, Tensor b) {
  want_same_tape(a, b, "matmul");
  if (a.shape.ndim() != 2 || b.shape.ndim() != 2 || a.shape[1] != b.shape[0])
    throw ShapeError(strf("matmul: incompatible %s x %s", a.shape.str().c_str(),
                          b.shape.str().c_str()));
  Tape& t = tape_of(a, "matmul");
  int m = a.shape[0], k = a.shape[1], n = b.shape[1];
  std::vector<double> v(static_cast<size_t>(m) * n);
  {
    CMapMat A(a.val().data(), m, k);
    CMapMat B(b.val().data(), k, n);
    MapMat C(v.data(), m, n);
    C.noalias() = A * B;
  }
  int out = t.emplace(Shape{m, n}, std::move(v));
  Tape* tp = &t;
  int ia = a.id, ib = b.id;
  t.node(out).backward = [tp, ia, ib, out, m, k, n] {
    CMapMat G(tp->node(out).grad.data(), m, n);
    CMapMat A(tp->node(ia).val.data(), m, k);
    CMapMat B(tp->node(ib).val.data(), k, n);
    MapMat GA(tp->node(ia).grad.data(), m, k);
    MapMat GB(tp->node(ib).grad.data(), k, n);
    GA.noalias() += G * B.transpose();
    GB.noalias() += A.transpose() * G;
  };
  return wrap(t, out, Shape{m, n});
}

Tensor affine(Tensor x, Tensor w, Tensor b) {
  want_same_tape(x, w, "affine");
  want_same_tape(x, b, "affine");
  if (x.shape.ndim() != 2 || w.shape.ndim() != 2 || b.shape.ndim() != 1 ||
      x.shape[1] != w.shape[0] || w.shape[1] != b.shape[0])
    throw ShapeError(strf("affine: incompatible %s * %s + %s", x.shape.str().c_str(),
                          w.shape.str().c_str(), b.shape.str().c_str()));
  Tape& t = tape_of(x, "affine");
  int m = x.shape[0], k = x.shape[1], n = w.shape[1];
  std::vector<double> v(static_cast<size_t>(m) * n);
  {
    CMapMat X(x.val().data(), m, k);
    CMapMat W(w.val().data(), k, n);
    MapMat Y(v.data(), m, n);
    Y.noalias() = X * W;
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < n; ++c) v[static_cast<size_t>(r) * n + c] += b.val()[c];
  }
  int out = t.emplace(Shape{m, n}, std::move(v));
  Tape* tp = &t;
  int ix = x.id, iw = w.id, ibias = b.id;
  t.node(out).backward = [tp, ix, iw, ibias, out, m, k, n] {
    CMapMat G(tp->node(out).grad.data(), m, n);
    CMapMat X(tp->node(ix).val.data(), m, k);
    CMapMat W(tp->node(iw).val.data(), k, n);
    MapMat GX(tp->node(ix).grad.data(), m, k);
    MapMat GW(tp->node(iw).grad.data(), k, n);
    auto& gb = tp->node(ibias).grad;
    GX.noalias() += G * W.transpose();
    GW.noalias() += X.transpose() * G;
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < n; ++c) gb[c] += G(r, c);
  };
  return wrap(t, out, Shape{m, n});
}

Tensor conv2d(Tensor x, Tensor kernel, Tensor bias, int stride, int padding) {
  want_same_tape(x, kernel, "conv2d");
  want_same_tape(x, bias, "conv2d");
  if (x.shape.ndim() != 4 || kernel.shape.ndim() != 4 || bias.shape.ndim() != 1 ||
      kernel.shape[1] != x.shape[1] || bias.shape[0] != kernel.shape[0])
    throw ShapeError(strf("conv2d: incompatible input %s kernel %s bias %s",
                          x.shape.str().c_str(), kernel.shape.str().c_str(),
                          bias.shape.str().c_str()));
  if (stride < 1 || padding < 0) throw ShapeError("conv2d: bad stride/padding");
  const int N = x.shape[0], Ci = x.shape[1], H = x.shape[2], W = x.shape[3];
  const int Co = kernel.shape[0], kh = kernel.shape[2], kw = kernel.shape[3];
  const int Ho = (H + 2 * padding - kh) / stride + 1;
  const int Wo = (W + 2 * padding - kw) / stride + 1;
  if (Ho < 1 || Wo < 1)
    throw ShapeError(strf("conv2d: kernel %s larger than padded input %s",
                          kernel.shape.str().c_str(), x.shape.str().c_str()));
  Tape& t = tape_of(x, "conv2d");
  const int krows = Ci * kh * kw;
  const int cols = Ho * Wo;

  // im2col per sample, kept for the backward pass.
  auto colbuf = std::make_shared<std::vector<double>>(
      static_cast<size_t>(N) * krows * cols, 0.0);
  std::vector<double> v(static_cast<size_t>(N) * Co * cols);
  for (int nidx = 0; nidx < N; ++nidx) {
    double* col = colbuf->data() + static_cast<size_t>(nidx) * krows * cols;
    const double* img = x.val().data() + static_cast<size_t>(nidx) * Ci * H * W;
    for (int c = 0; c < Ci; ++c)
      for (int ky = 0; ky < kh; ++ky)
        for (int kx = 0; kx < kw; ++kx) {
          int row = (c * kh + ky) * kw + kx;
          double* dst = col + static_cast<size_t>(row) * cols;
          for (int oy = 0; oy < Ho; ++oy) {
            int iy = oy * stride + ky - padding;
            for (int ox = 0; ox < Wo; ++ox) {
              int ix = ox * stride + kx - padding;
              dst[oy * Wo + ox] = (iy >= 0 && iy < H && ix >= 0 && ix < W)
                                      ? img[(c * H + iy) * W + ix]
                                      : 0.0;
            }
          }
        }
    CMapMat K(kernel.val().data(), Co, krows);
    CMapMat Col(col, krows, cols);
    MapMat Out(v.data() + static_cast<size_t>(nidx) * Co * cols, Co, cols);
    Out.noalias() = K * Col;
    for (int co = 0; co < Co; ++co) Out.row(co).array() += bias.val()[co];
  }

  int out = t.emplace(Shape{N, Co, Ho, Wo}, std::move(v));
  Tape* tp = &t;
  int ix = x.id, ik = kernel.id, ibias = bias.id;
  t.node(out).backward = [tp, ix, ik, ibias, out, colbuf, N, Ci, H, W, Co, kh, kw, Ho,
                          Wo, stride, padding, krows, cols] {
    MapMat GK(tp->node(ik).grad.data(), Co, krows);
    auto& gb = tp->node(ibias).grad;
    CMapMat K(tp->node(ik).val.data(), Co, krows);
    RowMat gcol(krows, cols);
    for (int nidx = 0; nidx < N; ++nidx) {
      CMapMat G(tp->node(out).grad.data() + static_cast<size_t>(nidx) * Co * cols, Co,
                cols);
      CMapMat Col(colbuf->data() + static_cast<size_t>(nidx) * krows * cols, krows, cols);
      GK.noalias() += G * Col.transpose();
      for (int co = 0; co < Co; ++co) gb[co] += G.row(co).sum();
      gcol.noalias() = K.transpose() * G;
      double* gimg = tp->node(ix).grad.data() + static_cast<size_t>(nidx) * Ci * H * W;
      for (int c = 0; c < Ci; ++c)
        for (int ky = 0; ky < kh; ++ky)
          for (int kx = 0; kx < kw; ++kx) {
            int row = (c * kh + ky) * kw + kx;
            for (int oy = 0; oy < Ho; ++oy) {
              int iy = oy * stride + ky - padding;
              if (iy < 0 || iy >= H) continue;
              for (int ox = 0; ox < Wo; ++ox) {
                int ixp = ox * stride + kx - padding;
                if (ixp < 0 || ixp >= W) continue;
                gimg[(c * H + iy) * W + ixp] += gcol(row, oy * Wo + ox);
              }
            }
          }
    }
  };
  return wrap(t, out, Shape{N, Co, Ho, Wo});
}

Tensor max_pool2(Tensor x) {
  if (x.shape.ndim() != 4 || x.shape[2] % 2 != 0 || x.shape[3] % 2 != 0)
    throw ShapeError(strf("max_pool2: need even H,W in NCHW, got %s", x.shape.str().c_str()));
  Tape& t = tape_of(x, "max_pool2");
  const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const int Ho = H / 2, Wo = W / 2;
  std::vector<double> v(static_cast<size_t>(N) * C * Ho * Wo);
  auto argmax = std::make_shared<std::vector<int>>(v.size());
  const double* in = x.val().data();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double* plane = in + (static_cast<size_t>(n) * C + c) * H * W;
      size_t base_out = (static_cast<size_t>(n) * C + c) * Ho * Wo;
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          int best_idx = (2 * oy) * W + 2 * ox;
          double best = plane[best_idx];
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              int idx = (2 * oy + dy) * W + (2 * ox + dx);
              if (plane[idx] > best) {
                best = plane[idx];
                best_idx = idx;
              }
            }
          v[base_out + oy * Wo + ox] = best;
          (*argmax)[base_out + oy * Wo + ox] =
              static_cast<int>((static_cast<size_t>(n) * C + c) * H * W) + best_idx;
        }
    }
  int out = t.emplace(Shape{N, C, Ho, Wo}, std::move(v));
  Tape* tp = &t;
  int ix = x.id;
  t.node(out).backward = [tp, ix, out, argmax] {
    const auto& g = tp->node(out).grad;
    auto& gx = tp->node(ix).grad;
    for (size_t i = 0; i < g.size(); ++i) gx[(*argmax)[i]] += g[i];
  };
  return wrap(t, out, Shape{N, C, Ho, Wo});
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  const Shape& s0 = parts[0].shape;
  if (axis < 0 || axis >= s0.ndim()) throw ShapeError(strf("concat: bad axis %d", axis));
  int total_axis = 0;
  for (const auto& p : parts) {
    want_same_tape(parts[0], p, "concat");
    if (p.shape.ndim() != s0.ndim())
      throw ShapeError(strf("concat: rank mismatch %s vs %s", s0.str().c_str(),
                            p.shape.str().c_str()));
    for (int d = 0; d < s0.ndim(); ++d)
      if (d != axis && p.shape[d] != s0[d])
        throw ShapeError(strf("concat: shape %s vs %s on axis %d", s0.str().c_str(),
                              p.shape.str().c_str(), d));
    total_axis += p.shape[axis];
  }
  Shape out_shape = s0;
  out_shape.dims[axis] = total_axis;
  Tape& t = tape_of(parts[0], "concat");
  int outer, inner;
  axis_split(out_shape, axis, outer, inner);
  std::vector<double> v(out_shape.numel());
  int offset = 0;
  for (const auto& p : parts) {
    int len = p.shape[axis];
    for (int o = 0; o < outer; ++o)
      std::memcpy(v.data() + (static_cast<size_t>(o) * total_axis + offset) * inner,
                  p.val().data() + static_cast<size_t>(o) * len * inner,
                  sizeof(double) * len * inner);
    offset += len;
  }
  int out = t.emplace(out_shape, std::move(v));
  Tape* tp = &t;
  std::vector<int> ids;
  std::vector<int> lens;
  for (const auto& p : parts) {
    ids.push_back(p.id);
    lens.push_back(p.shape[axis]);
  }
  t.node(out).backward = [tp, out, ids, lens, outer, inner, total_axis] {
    const auto& g = tp->node(out).grad;
    int offset = 0;
    for (size_t pi = 0; pi < ids.size(); ++pi) {
      auto& gp = tp->node(ids[pi]).grad;
      int len = lens[pi];
      for (int o = 0; o < outer; ++o) {
        const double* src = g.data() + (static_cast<size_t>(o) * total_axis + offset) * inner;
        double* dst = gp.data() + static_cast<size_t>(o) * len * inner;
        for (int i = 0; i < len * inner; ++i) dst[i] += src[i];
      }
      offset += len;
    }
  };
  return wrap(t, out, out_shape);
}

Tensor slice(Tensor x, int axis, int start, int len) {
  if (axis < 0 || axis >= x.shape.ndim() || start < 0 || len < 1 ||
      start + len > x.shape[axis])
    throw ShapeError(strf("slice: [%d,%d) on axis %d of %s", start, start + len, axis,
                          x.shape.str().c_str()));
  Tape& t = tape_of(x, "slice");
  Shape out_shape = x.shape;
  out_shape.dims[axis] = len;
  int outer, inner;
  axis_split(x.shape, axis, outer, inner);
  int full = x.shape[axis];
  std::vector<double> v(out_shape.numel());
  for (int o = 0; o < outer; ++o)
    std::memcpy(v.data() + static_cast<size_t>(o) * len * inner,
                x.val().data() + (static_cast<size_t>(o) * full + start) * inner,
                sizeof(double) * len * inner);
  int out = t.emplace(out_shape, std::move(v));
  Tape* tp = &t;
  int ix = x.id;
  t.node(out).backward = [tp, ix, out, outer, inner, full, start, len] {
    const auto& g = tp->node(out).grad;
    auto& gx = tp->node(ix).grad;
    for (int o = 0; o < outer; ++o) {
      const double* src = g.data() + static_cast<size_t>(o) * len * inner;
      double* dst = gx.data() + (static_cast<size_t>(o) * full + start) * inner;
      for (int i = 0; i < len * inner; ++i) dst[i] += src[i];
    }
  };
  return wrap(t, out, out_shape);
}

Tensor reshape(Tensor x, Shape shape) {
  if (shape.numel() != x.shape.numel())
    throw ShapeError(strf("reshape: %s to %s", x.shape.str().c_str(), shape.str().c_str()));
  Tape& t = tape_of(x, "reshape");
  std::vector<double> v = x.val();
  int out = t.emplace(shape, std::move(v));
  Tape* tp = &t;
  int ix = x.id;
  t.node(out).backward = [tp, ix, out] {
    const auto& g = tp->node(out).grad;
    auto& gx = tp->node(ix).grad;
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  };
  return wrap(t, out, shape);
}

Tensor mse(Tensor pred, Tensor target) {
  want_same_tape(pred, target, "mse");
  want_same_shape(pred, target, "mse");
  Tape& t = tape_of(pred, "mse");
  const size_t n = pred.val().size();
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double d = pred.val()[i] - target.val()[i];
    acc += d * d;
  }
  int out = t.emplace(Shape{1}, {acc / static_cast<double>(n)});
  Tape* tp = &t;
  int ip = pred.id, itg = target.id;
  t.node(out).backward = [tp, ip, itg, out, n] {
    double g = tp->node(out).grad[0] * 2.0 / static_cast<double>(n);
    const auto& vp = tp->node(ip).val;
    const auto& vt = tp->node(itg).val;
    auto& gp = tp->node(ip).grad;
    auto& gt = tp->node(itg).grad;
    for (size_t i = 0; i < n; ++i) {
      double d = vp[i] - vt[i];
      gp[i] += g * d;
      gt[i] -= g * d;
    }
  };
  return wrap(t, out, Shape{1});
}

std::pair<Tensor, Tensor> lstm_step(Tensor x, Tensor h, Tensor c,
                                    const LstmLayerRefs& w) {
  if (x.shape.ndim() != 2 || h.shape.ndim() != 2 || c.shape.ndim() != 2)
    throw ShapeError("lstm_step: x, h, c must be rank 2");
  int hidden = h.shape[1];
  if (w.wx.shape != Shape{x.shape[1], 4 * hidden} ||
      w.wh.shape != Shape{hidden, 4 * hidden} || w.b.shape != Shape{4 * hidden} ||
      c.shape != h.shape || x.shape[0] != h.shape[0])
    throw ShapeError(strf("lstm_step: inconsistent shapes x=%s h=%s c=%s wx=%s",
                          x.shape.str().c_str(), h.shape.str().c_str(),
                          c.shape.str().c_str(), w.wx.shape.str().c_str()));
  Tensor z = add(affine(x, w.wx, w.b), matmul(h, w.wh));
  Tensor i = sigmoid(slice(z, 1, 0, hidden));
  Tensor f = sigmoid(slice(z, 1, hidden, hidden));
  Tensor g = tanh(slice(z, 1, 2 * hidden, hidden));
  Tensor o = sigmoid(slice(z, 1, 3 * hidden, hidden));
  Tensor c_next = add(mul(f, c), mul(i, g));
  Tensor h_next = mul(o, tanh(c_next));
  return {h_next, c_next};
}

Param& ParamStore::add(const std::string& name, Shape shape, std::vector<double> init) {
  if (index_.count(name)) throw Error(strf("duplicate parameter '%s'", name.c_str()));
  if (static_cast<int>(init.size()) != shape.numel())
    throw ShapeError(strf("param '%s': %zu values for shape %s", name.c_str(), init.size(),
                          shape.str().c_str()));
  Param p;
  p.name = name;
  p.shape = std::move(shape);
  p.value = std::move(init);
  p.grad.assign(p.value.size(), 0.0);
  p.adam_m.assign(p.value.size(), 0.0);
  p.adam_v.assign(p.value.size(), 0.0);
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return params_.back();
}

Param& ParamStore::add_uniform(const std::string& name, Shape shape, Rng& rng,
                               double bound) {
  std::vector<double> init(shape.numel());
  for (auto& v : init) v = rng.uniform(-bound, bound);
  return add(name, std::move(shape), std::move(init));
}

Param& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(strf("unknown parameter '%s'", name.c_str()));
  return params_[it->second];
}

const Param& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(strf("unknown parameter '%s'", name.c_str()));
  return params_[it->second];
}

size_t ParamStore::total_size() const {
  size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

Tensor ParamStore::leaf(Tape& t, const std::string& name) {
  size_t idx = index_.at(name);
  Param& p = params_[idx];
  int id = t.emplace(p.shape, p.value);
  Tape* tp = &t;
  ParamStore* ps = this;
  t.node(id).backward = [tp, ps, idx, id] {
    const auto& g = tp->node(id).grad;
    auto& pg = ps->params_[idx].grad;
    for (size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
  };
  return Tensor{&t, id, p.shape};
}

void ParamStore::zero_grads() {
  for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
}

void ParamStore::adam_step(double lr, double beta1, double beta2, double eps) {
  ++adam_t_;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(adam_t_));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(adam_t_));
  for (auto& p : params_) {
    for (size_t i = 0; i < p.value.size(); ++i) {
      double g = p.grad[i];
      p.adam_m[i] = beta1 * p.adam_m[i] + (1.0 - beta1) * g;
      p.adam_v[i] = beta2 * p.adam_v[i] + (1.0 - beta2) * g * g;
      double mhat = p.adam_m[i] / bc1;
      double vhat = p.adam_v[i] / bc2;
      p.value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

namespace {
constexpr char kCkptMagic[8] = {'D', 'S', 'P', 'R', 'M', 'S', '0', '1'};
}

void ParamStore::save(const std::string& path) const {
  std::string out;
  out.append(kCkptMagic, sizeof(kCkptMagic));
  auto put_u32 = [&out](uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  put_u32(static_cast<uint32_t>(params_.size()));
  for (const auto& p : params_) {
    put_u32(static_cast<uint32_t>(p.name.size()));
    out += p.name;
    put_u32(static_cast<uint32_t>(p.shape.ndim()));
    for (int d : p.shape.dims) put_u32(static_cast<uint32_t>(d));
    out.append(reinterpret_cast<const char*>(p.value.data()),
               p.value.size() * sizeof(double));
  }
  write_file(path, out);
}

ParamStore ParamStore::load(const std::string& path) {
  std::string in = read_file(path);
  size_t pos = 0;
  auto need = [&](size_t n) {
    if (pos + n > in.size()) throw Error(strf("truncated checkpoint '%s'", path.c_str()));
  };
  need(sizeof(kCkptMagic));
  if (std::memcmp(in.data(), kCkptMagic, sizeof(kCkptMagic)) != 0)
    throw Error(strf("'%s' is not a parameter checkpoint", path.c_str()));
  pos = sizeof(kCkptMagic);
  auto get_u32 = [&]() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    pos += 4;
    return v;
  };
  ParamStore ps;
  uint32_t count = get_u32();
  for (uint32_t pi = 0; pi < count; ++pi) {
    uint32_t name_len = get_u32();
    need(name_len);
    std::string name = in.substr(pos, name_len);
    pos += name_len;
    uint32_t ndim = get_u32();
    Shape shape;
    for (uint32_t d = 0; d < ndim; ++d) shape.dims.push_back(static_cast<int>(get_u32()));
    size_t bytes = static_cast<size_t>(shape.numel()) * sizeof(double);
    need(bytes);
    std::vector<double> value(shape.numel());
    std::memcpy(value.data(), in.data() + pos, bytes);
    pos += bytes;
    ps.add(name, std::move(shape), std::move(value));
  }
  return ps;
}

double glorot_bound(int fan_in, int fan_out) {
  return std::sqrt(6.0 / (fan_in + fan_out));
}

}  // namespace drivesim::ad
