#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "driftbench/errors.hpp"

namespace driftbench {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& s);

struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // same length as values iff requires_grad
  bool requires_grad = false;
};

// Value-semantic handle to a tensor node. Copies alias the same storage;
// deep copies go through copy(). Grad buffers accumulate additively until
// zero_grad(), mirroring the usual zero-before-backward discipline.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->values.size(); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::vector<double>& values() { return node_->values; }
  const std::vector<double>& values() const { return node_->values; }
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  bool requires_grad() const { return node_ != nullptr && node_->requires_grad; }

  double at(std::size_t i) const { return node_->values[i]; }
  double at(std::size_t r, std::size_t c) const;
  double scalar_value() const;

  void zero_grad();
  Tensor copy(bool requires_grad) const;

  TensorNode* node() const { return node_.get(); }
  std::shared_ptr<TensorNode> shared_node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
  std::shared_ptr<TensorNode> node_;
};

// Define-by-run tape, one per thread. Ops append a backward step whenever an
// input requires grad; backward() replays the recorded steps once in reverse.
// The tape is rebuilt per forward pass: clear() before building a new loss.
class Tape {
 public:
  static Tape& active();

  void record(std::function<void()> step) { steps_.push_back(std::move(step)); }
  void backward(const Tensor& loss);
  void clear() { steps_.clear(); }
  std::size_t size() const { return steps_.size(); }

 private:
  std::vector<std::function<void()>> steps_;
};

// Primitive differentiable operations. All of them validate shapes and
// record their gradient rule on the active tape when needed.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor add_rowvec(const Tensor& a, const Tensor& bias);  // [n x d] + [d]
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double c);
Tensor add_const(const Tensor& a, double c);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);
Tensor sum(const Tensor& x);      // -> scalar
Tensor mean(const Tensor& x);     // -> scalar
Tensor rowsum(const Tensor& x);   // [n x m] -> [n]
Tensor log_softmax(const Tensor& x);        // row-wise, max-subtracted
Tensor l2_normalize_rows(const Tensor& x);  // rows divided by max(norm, 1e-12)
Tensor pairwise_distances(const Tensor& x); // [n x c] -> [n(n-1)/2], pairs i<j
Tensor nll_from_log_probs(const Tensor& log_probs, const std::vector<int>& labels);
Tensor detach(const Tensor& x);  // constant copy, cuts the gradient path

// SGD with optional momentum. step() applies theta -= lr * v with
// v = momentum * v + grad, then zeroes the grads of the passed parameters.
// Frozen model parts are simply not passed in.
class SgdOptimizer {
 public:
  explicit SgdOptimizer(double learning_rate, double momentum = 0.0);

  void step(const std::vector<Tensor>& params);
  double learning_rate() const { return learning_rate_; }
  double momentum() const { return momentum_; }

 private:
  double learning_rate_;
  double momentum_;
  std::unordered_map<const TensorNode*, std::vector<double>> velocity_;
};

// Compares the autodiff gradient of build_loss() against central finite
// differences over every coordinate of `inputs`. Returns the max over
// coordinates of |ad - fd| / max(1, |ad|). build_loss must re-read the input
// values on every call; branches behind detach() are differentiated as the
// autodiff sees them (the caller freezes such targets when composing f).
double finite_diff_check(const std::function<Tensor()>& build_loss,
                         const std::vector<Tensor>& inputs, double step = 1e-5);

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double step = 1e-5);

}  // namespace driftbench
