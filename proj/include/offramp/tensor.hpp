#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "offramp/rng.hpp"

namespace offramp {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool on_tape = false;  // true once an op recorded this node as its output
};

}  // namespace detail

// Dense row-major tensor of 64-bit floats. Copying a Tensor copies the
// handle, not the storage; ops always allocate fresh output nodes, so the
// aliasing is only observable for deliberately shared parameters.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);

  static Tensor from_data(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->values.size(); }
  std::size_t rank() const { return node_->shape.size(); }

  std::vector<double>& data() { return node_->values; }
  const std::vector<double>& data() const { return node_->values; }

  // Scalar value; throws if the tensor is not a single element.
  double value() const;

  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  bool has_grad() const { return !node_->grad.empty(); }
  // Gradient array, allocated (zero-filled) on first access.
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  void zero_grad();
  // Releases the gradient storage entirely (has_grad() becomes false).
  void clear_grad() { node_->grad.clear(); }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }
  bool all_finite() const;

  std::shared_ptr<detail::TensorNode> node() const { return node_; }

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

// Reverse-mode tape. Ops executed while a Tape::Scope is active append their
// backward rules in execution order, which is by construction a topological
// order of the graph; backward() replays the records exactly once in reverse.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return records_.size(); }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape backwards, accumulating
  // into .grad of every requires_grad tensor reachable from loss. Calling
  // again without zeroing grads accumulates on top of the previous sweep.
  void backward(const Tensor& loss);

  void record(std::shared_ptr<detail::TensorNode> out, std::function<void()> pull);

  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  static Tape* active();

 private:
  struct Record {
    std::shared_ptr<detail::TensorNode> out;
    std::function<void()> pull;
  };
  std::vector<Record> records_;
};

// ---- differentiable operations ----
// Every op validates shapes up front and records its backward rule on the
// active tape when any input requires a gradient.

Tensor add(const Tensor& a, const Tensor& b);              // same shape
Tensor add_bias(const Tensor& x, const Tensor& bias);      // bias over last axis
Tensor mul(const Tensor& a, const Tensor& b);              // elementwise
Tensor scale(const Tensor& x, double factor);
Tensor matmul(const Tensor& a, const Tensor& b);           // [m,k]x[k,p]
Tensor bmm(const Tensor& a, const Tensor& b);              // [B,m,k]x[B,k,p]
Tensor transpose(const Tensor& x);                         // rank 2
Tensor transpose_last2(const Tensor& x);                   // rank 3
Tensor reshape(const Tensor& x, Shape shape);
Tensor slice_last(const Tensor& x, std::size_t start, std::size_t length);
Tensor concat_last(const std::vector<Tensor>& parts);
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double epsilon = 1e-5);
Tensor gelu(const Tensor& x);
Tensor dropout(const Tensor& x, double rate, Rng& rng);
Tensor embedding_gather(const Tensor& table, const std::vector<int>& ids);
Tensor select_token(const Tensor& x, std::size_t token_index);  // [B,T,H] -> [B,H]
// Adds -1e9 to scores[b,q,k] wherever mask[b*Tk+k] == 0. Mask is constant.
Tensor attention_mask_add(const Tensor& scores, const std::vector<int>& mask);
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

std::vector<int> argmax_rows(const Tensor& x);  // rank 2, non-differentiable

}  // namespace offramp
