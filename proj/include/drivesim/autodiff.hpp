#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "drivesim/common.hpp"

namespace drivesim::ad {

class ShapeError : public Error {
 public:
  using Error::Error;
};

struct Shape {
  std::vector<int> dims;

  Shape() = default;
  Shape(std::initializer_list<int> d) : dims(d) {}
  explicit Shape(std::vector<int> d) : dims(std::move(d)) {}

  int numel() const {
    int n = 1;
    for (int d : dims) n *= d;
    return n;
  }
  int ndim() const { return static_cast<int>(dims.size()); }
  int operator[](int i) const { return dims[i]; }
  bool operator==(const Shape& o) const { return dims == o.dims; }
  bool operator!=(const Shape& o) const { return dims != o.dims; }
  std::string str() const;
};

/// One recorded operation. Values and gradients are owned by the tape so
/// backward can accumulate into parents without aliasing issues.
struct Node {
  Shape shape;
  std::vector<double> val;
  std::vector<double> grad;
  std::function<void()> backward;  // empty for leaves/constants
};

/// Record of a forward computation; replayed in reverse for gradients.
class Tape {
 public:
  /// Append a node; the caller wires node(id).backward afterwards.
  int emplace(Shape shape, std::vector<double> val);
  Node& node(int id) { return nodes_[id]; }
  const Node& node(int id) const { return nodes_[id]; }
  size_t size() const { return nodes_.size(); }

  /// Seed d(root)/d(root)=1 and sweep the tape in reverse creation order.
  void backward(int root);

  void clear() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
};

/// Lightweight handle: tape id + shape.
struct Tensor {
  Tape* tape = nullptr;
  int id = -1;
  Shape shape;

  const std::vector<double>& val() const { return tape->node(id).val; }
  const std::vector<double>& grad() const { return tape->node(id).grad; }
};

Tensor constant(Tape& t, Shape shape, std::vector<double> data);
Tensor zeros(Tape& t, Shape shape);

// ------------------------------------------------------------- primitives

Tensor add(Tensor a, Tensor b);
Tensor mul(Tensor a, Tensor b);
Tensor scale(Tensor a, double k);
Tensor relu(Tensor x);
Tensor tanh(Tensor x);
Tensor sigmoid(Tensor x);
/// [m,k] x [k,n] -> [m,n], row-major.
Tensor matmul(Tensor a, Tensor b);
/// x [m,k], w [k,n], b [n] -> x*w + b per row.
Tensor affine(Tensor x, Tensor w, Tensor b);
/// x [N,C,H,W], kernel [Co,Ci,kh,kw], bias [Co] -> [N,Co,Ho,Wo].
Tensor conv2d(Tensor x, Tensor kernel, Tensor bias, int stride, int padding);
/// 2x2 max pooling, stride 2; H and W must be even.
Tensor max_pool2(Tensor x);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(Tensor x, int axis, int start, int len);
Tensor reshape(Tensor x, Shape shape);
/// Mean of squared differences over all elements -> scalar.
Tensor mse(Tensor pred, Tensor target);

/// Stacked-LSTM weights for one layer.
struct LstmLayerRefs {
  Tensor wx;  // [in, 4H], gate order i,f,g,o
  Tensor wh;  // [H, 4H]
  Tensor b;   // [4H]
};

/// One LSTM cell step for a batch: x [N,in], h,c [N,H] -> (h',c').
std::pair<Tensor, Tensor> lstm_step(Tensor x, Tensor h, Tensor c,
                                    const LstmLayerRefs& w);

// ------------------------------------------------------------- parameters

struct Param {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  std::vector<double> adam_m;
  std::vector<double> adam_v;
};

/// Named trainable parameters plus Adam state. Insertion order is the
/// canonical manifest order used by checkpoints.
class ParamStore {
 public:
  Param& add(const std::string& name, Shape shape, std::vector<double> init);
  Param& add_uniform(const std::string& name, Shape shape, Rng& rng, double bound);
  bool has(const std::string& name) const { return index_.count(name) > 0; }
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;
  std::vector<Param>& all() { return params_; }
  const std::vector<Param>& all() const { return params_; }
  size_t total_size() const;

  /// Trainable leaf: forward copies the value in, backward accumulates into
  /// the parameter's grad buffer.
  Tensor leaf(Tape& t, const std::string& name);

  void zero_grads();
  /// Bias-corrected Adam over every parameter; increments the step count.
  void adam_step(double lr, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8);
  int64_t adam_steps() const { return adam_t_; }

  void save(const std::string& path) const;
  static ParamStore load(const std::string& path);

 private:
  std::vector<Param> params_;
  std::map<std::string, size_t> index_;
  int64_t adam_t_ = 0;
};

/// Uniform bound sqrt(6/(fan_in+fan_out)) for affine/conv weights.
double glorot_bound(int fan_in, int fan_out);

}  // namespace drivesim::ad
