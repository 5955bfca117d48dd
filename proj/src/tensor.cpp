#include "driftbench/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <utility>

namespace driftbench {

namespace {

constexpr double kNormalizeEps = 1e-12;

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a rank-2 tensor, got shape " +
                     shape_to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                     " vs " + shape_to_string(b.shape()));
  }
}

}  // namespace

std::string shape_to_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i > 0) out += "x";
    out += std::to_string(s[i]);
  }
  out += "]";
  return out;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto node = std::make_shared<TensorNode>();
  std::size_t n = shape_numel(shape);
  node->shape = std::move(shape);
  node->values.assign(n, 0.0);
  node->requires_grad = requires_grad;
  if (requires_grad) node->grad.assign(n, 0.0);
  return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor: " + std::to_string(values.size()) +
                     " values do not fill shape " + shape_to_string(shape));
  }
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  if (requires_grad) node->grad.assign(node->values.size(), 0.0);
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

std::size_t Tensor::rows() const {
  require_rank2(*this, "rows");
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  require_rank2(*this, "cols");
  return node_->shape[1];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return node_->values[r * cols() + c];
}

double Tensor::scalar_value() const {
  if (size() != 1) {
    throw ShapeError("scalar_value: tensor has shape " + shape_to_string(shape()));
  }
  return node_->values[0];
}

std::vector<double>& Tensor::grad() {
  if (!requires_grad()) throw StateError("grad: tensor does not require grad");
  return node_->grad;
}

const std::vector<double>& Tensor::grad() const {
  if (!requires_grad()) throw StateError("grad: tensor does not require grad");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (requires_grad()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::copy(bool requires_grad) const {
  return Tensor::from(shape(), values(), requires_grad);
}

Tape& Tape::active() {
  thread_local Tape tape;
  return tape;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     (loss.defined() ? shape_to_string(loss.shape()) : std::string("<empty>")));
  }
  if (loss.requires_grad()) loss.node()->grad[0] += 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

namespace {

// Creates the output tensor of an op: it carries grad iff any input does.
Tensor make_output(Shape shape, bool requires_grad) {
  return Tensor::zeros(std::move(shape), requires_grad);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner extents differ, " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = make_output({m, n}, a.requires_grad() || b.requires_grad());
  {
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = av[i * k + p];
        if (aip == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) ov[i * n + j] += aip * bv[p * n + j];
      }
    }
  }
  if (out.requires_grad()) {
    auto an = a.shared_node(), bn = b.shared_node(), on = out.shared_node();
    Tape::active().record([an, bn, on, m, k, n] {
      const auto& go = on->grad;
      if (an->requires_grad) {
        auto& ga = an->grad;
        const auto& bv = bn->values;
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += go[i * n + j] * bv[p * n + j];
            ga[i * k + p] += acc;
          }
      }
      if (bn->requires_grad) {
        auto& gb = bn->grad;
        const auto& av = an->values;
        for (std::size_t p = 0; p < k; ++p)
          for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < m; ++i) acc += av[i * k + p] * go[i * n + j];
            gb[p * n + j] += acc;
          }
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = make_output({n, m}, a.requires_grad());
  {
    const auto& av = a.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ov[j * m + i] = av[i * n + j];
  }
  if (out.requires_grad()) {
    auto an = a.shared_node(), on = out.shared_node();
    Tape::active().record([an, on, m, n] {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) an->grad[i * n + j] += on->grad[j * m + i];
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = make_output(a.shape(), a.requires_grad() || b.requires_grad());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] + b.values()[i];
  if (out.requires_grad()) {
    auto an = a.shared_node(), bn = b.shared_node(), on = out.shared_node();
    Tape::active().record([an, bn, on, n] {
      if (an->requires_grad)
        for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
      if (bn->requires_grad)
        for (std::size_t i = 0; i < n; ++i) bn->grad[i] += on->grad[i];
    });
  }
  return out;
}

Tensor add_rowvec(const Tensor& a, const Tensor& bias) {
  require_rank2(a, "add_rowvec");
  if (bias.rank() != 1 || bias.size() != a.cols()) {
    throw ShapeError("add_rowvec: bias shape " + shape_to_string(bias.shape()) +
                     " does not match row width of " + shape_to_string(a.shape()));
  }
  const std::size_t n = a.rows(), d = a.cols();
  Tensor out = make_output({n, d}, a.requires_grad() || bias.requires_grad());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      out.values()[i * d + j] = a.values()[i * d + j] + bias.values()[j];
  if (out.requires_grad()) {
    auto an = a.shared_node(), bn = bias.shared_node(), on = out.shared_node();
    Tape::active().record([an, bn, on, n, d] {
      if (an->requires_grad)
        for (std::size_t i = 0; i < n * d; ++i) an->grad[i] += on->grad[i];
      if (bn->requires_grad)
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) bn->grad[j] += on->grad[i * d + j];
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = make_output(a.shape(), a.requires_grad() || b.requires_grad());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] - b.values()[i];
  if (out.requires_grad()) {
    auto an = a.shared_node(), bn = b.shared_node(), on = out.shared_node();
    Tape::active().record([an, bn, on, n] {
      if (an->requires_grad)
        for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
      if (bn->requires_grad)
        for (std::size_t i = 0; i < n; ++i) bn->grad[i] -= on->grad[i];
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = make_output(a.shape(), a.requires_grad() || b.requires_grad());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] * b.values()[i];
  if (out.requires_grad()) {
    auto an = a.shared_node(), bn = b.shared_node(), on = out.shared_node();
    Tape::active().record([an, bn, on, n] {
      if (an->requires_grad)
        for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i] * bn->values[i];
      if (bn->requires_grad)
        for (std::size_t i = 0; i < n; ++i) bn->grad[i] += on->grad[i] * an->values[i];
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = make_output(a.shape(), a.requires_grad());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] * c;
  if (out.requires_grad()) {
    auto an = a.shared_node(), on = out.shared_node();
    Tape::active().record([an, on, n, c] {
      for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i] * c;
    });
  }
  return out;
}

Tensor add_const(const Tensor& a, double c) {
  Tensor out = make_output(a.shape(), a.requires_grad());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] + c;
  if (out.requires_grad()) {
    auto an = a.shared_node(), on = out.shared_node();
    Tape::active().record([an, on, n] {
      for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = make_output(x.shape(), x.requires_grad());
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = x.values()[i] > 0.0 ? x.values()[i] : 0.0;
  if (out.requires_grad()) {
    auto xn = x.shared_node(), on = out.shared_node();
    // Subgradient at 0 is 0.
    Tape::active().record([xn, on, n] {
      for (std::size_t i = 0; i < n; ++i)
        if (xn->values[i] > 0.0) xn->grad[i] += on->grad[i];
    });
  }
  return out;
}

Tensor exp(const Tensor& x) {
  Tensor out = make_output(x.shape(), x.requires_grad());
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = std::exp(x.values()[i]);
  if (out.requires_grad()) {
    auto xn = x.shared_node(), on = out.shared_node();
    Tape::active().record([xn, on, n] {
      for (std::size_t i = 0; i < n; ++i) xn->grad[i] += on->grad[i] * on->values[i];
    });
  }
  return out;
}

Tensor log(const Tensor& x) {
  Tensor out = make_output(x.shape(), x.requires_grad());
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = std::log(x.values()[i]);
  if (out.requires_grad()) {
    auto xn = x.shared_node(), on = out.shared_node();
    Tape::active().record([xn, on, n] {
      for (std::size_t i = 0; i < n; ++i) xn->grad[i] += on->grad[i] / xn->values[i];
    });
  }
  return out;
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (!(lo <= hi)) throw ValueError("clamp: lo must not exceed hi");
  Tensor out = make_output(x.shape(), x.requires_grad());
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = std::min(std::max(x.values()[i], lo), hi);
  if (out.requires_grad()) {
    auto xn = x.shared_node(), on = out.shared_node();
    Tape::active().record([xn, on, n, lo, hi] {
      for (std::size_t i = 0; i < n; ++i)
        if (xn->values[i] >= lo && xn->values[i] <= hi) xn->grad[i] += on->grad[i];
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  Tensor out = make_output({1}, x.requires_grad());
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  out.values()[0] = acc;
  if (out.requires_grad()) {
    auto xn = x.shared_node(), on = out.shared_node();
    const std::size_t n = x.size();
    Tape::active().record([xn, on, n] {
      for (std::size_t i = 0; i < n; ++i) xn->grad[i] += on->grad[0];
    });
  }
  return out;
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw ValueError("mean: empty tensor");
  Tensor out = make_output({1}, x.requires_grad());
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  const std::size_t n = x.size();
  out.values()[0] = acc / static_cast<double>(n);
  if (out.requires_grad()) {
    auto xn = x.shared_node(), on = out.shared_node();
    Tape::active().record([xn, on, n] {
      const double g = on->grad[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) xn->grad[i] += g;
    });
  }
  return out;
}

Tensor rowsum(const Tensor& x) {
  require_rank2(x, "rowsum");
  const std::size_t n = x.rows(), m = x.cols();
  Tensor out = make_output({n}, x.requires_grad());
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < m; ++j) acc += x.values()[i * m + j];
    out.values()[i] = acc;
  }
  if (out.requires_grad()) {
    auto xn = x.shared_node(), on = out.shared_node();
    Tape::active().record([xn, on, n, m] {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) xn->grad[i * m + j] += on->grad[i];
    });
  }
  return out;
}

Tensor log_softmax(const Tensor& x) {
  require_rank2(x, "log_softmax");
  if (x.cols() < 1) throw ShapeError("log_softmax: needs at least one column");
  const std::size_t n = x.rows(), c = x.cols();
  Tensor out = make_output({n, c}, x.requires_grad());
  for (std::size_t i = 0; i < n; ++i) {
    double mx = x.values()[i * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x.values()[i * c + j]);
    double lse = 0.0;
    for (std::size_t j = 0; j < c; ++j) lse += std::exp(x.values()[i * c + j] - mx);
    lse = mx + std::log(lse);
    for (std::size_t j = 0; j < c; ++j) out.values()[i * c + j] = x.values()[i * c + j] - lse;
  }
  if (out.requires_grad()) {
    auto xn = x.shared_node(), on = out.shared_node();
    Tape::active().record([xn, on, n, c] {
      for (std::size_t i = 0; i < n; ++i) {
        double gsum = 0.0;
        for (std::size_t j = 0; j < c; ++j) gsum += on->grad[i * c + j];
        for (std::size_t j = 0; j < c; ++j) {
          const double soft = std::exp(on->values[i * c + j]);
          xn->grad[i * c + j] += on->grad[i * c + j] - soft * gsum;
        }
      }
    });
  }
  return out;
}

Tensor l2_normalize_rows(const Tensor& x) {
  require_rank2(x, "l2_normalize_rows");
  const std::size_t n = x.rows(), c = x.cols();
  Tensor out = make_output({n, c}, x.requires_grad());
  std::vector<double> norms(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < c; ++j) sq += x.values()[i * c + j] * x.values()[i * c + j];
    norms[i] = std::max(std::sqrt(sq), kNormalizeEps);
    for (std::size_t j = 0; j < c; ++j) out.values()[i * c + j] = x.values()[i * c + j] / norms[i];
  }
  if (out.requires_grad()) {
    auto xn = x.shared_node(), on = out.shared_node();
    Tape::active().record([xn, on, n, c, norms = std::move(norms)] {
      for (std::size_t i = 0; i < n; ++i) {
        const double r = norms[i];
        if (r <= kNormalizeEps) {
          // Below the guard the op is x / eps: a plain linear map.
          for (std::size_t j = 0; j < c; ++j) xn->grad[i * c + j] += on->grad[i * c + j] / r;
          continue;
        }
        double ydotg = 0.0;
        for (std::size_t j = 0; j < c; ++j) ydotg += on->values[i * c + j] * on->grad[i * c + j];
        for (std::size_t j = 0; j < c; ++j)
          xn->grad[i * c + j] += (on->grad[i * c + j] - on->values[i * c + j] * ydotg) / r;
      }
    });
  }
  return out;
}

Tensor pairwise_distances(const Tensor& x) {
  require_rank2(x, "pairwise_distances");
  const std::size_t n = x.rows(), c = x.cols();
  if (n < 2) {
    throw ValueError("pairwise_distances: batch too small, need at least 2 rows, got " +
                     std::to_string(n));
  }
  const std::size_t num_pairs = n * (n - 1) / 2;
  Tensor out = make_output({num_pairs}, x.requires_grad());
  std::size_t p = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j, ++p) {
      double sq = 0.0;
      for (std::size_t k = 0; k < c; ++k) {
        const double d = x.values()[i * c + k] - x.values()[j * c + k];
        sq += d * d;
      }
      out.values()[p] = std::sqrt(sq);
    }
  if (out.requires_grad()) {
    auto xn = x.shared_node(), on = out.shared_node();
    // Coincident pairs (distance exactly 0) get zero gradient.
    Tape::active().record([xn, on, n, c] {
      std::size_t p = 0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j, ++p) {
          const double d = on->values[p];
          if (d == 0.0) continue;
          const double coef = on->grad[p] / d;
          for (std::size_t k = 0; k < c; ++k) {
            const double diff = xn->values[i * c + k] - xn->values[j * c + k];
            xn->grad[i * c + k] += coef * diff;
            xn->grad[j * c + k] -= coef * diff;
          }
        }
    });
  }
  return out;
}

Tensor nll_from_log_probs(const Tensor& log_probs, const std::vector<int>& labels) {
  require_rank2(log_probs, "nll_from_log_probs");
  const std::size_t n = log_probs.rows(), c = log_probs.cols();
  if (labels.size() != n) {
    throw ShapeError("nll_from_log_probs: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw ValueError("nll_from_log_probs: label " + std::to_string(labels[i]) +
                       " out of range [0, " + std::to_string(c) + ") at row " + std::to_string(i));
    }
  }
  Tensor out = make_output({1}, log_probs.requires_grad());
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    acc -= log_probs.values()[i * c + static_cast<std::size_t>(labels[i])];
  out.values()[0] = acc / static_cast<double>(n);
  if (out.requires_grad()) {
    auto ln = log_probs.shared_node(), on = out.shared_node();
    Tape::active().record([ln, on, n, c, labels] {
      const double g = on->grad[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i)
        ln->grad[i * c + static_cast<std::size_t>(labels[i])] -= g;
    });
  }
  return out;
}

Tensor detach(const Tensor& x) {
  return Tensor::from(x.shape(), x.values(), false);
}

SgdOptimizer::SgdOptimizer(double learning_rate, double momentum)
    : learning_rate_(learning_rate), momentum_(momentum) {
  if (!(learning_rate > 0.0)) throw ValueError("sgd: learning rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ValueError("sgd: momentum must be in [0, 1)");
}

void SgdOptimizer::step(const std::vector<Tensor>& params) {
  for (const Tensor& p : params) {
    if (!p.requires_grad()) throw StateError("sgd_step: parameter has no grad buffer");
  }
  for (const Tensor& p : params) {
    TensorNode* node = p.node();
    auto& vals = node->values;
    auto& grads = node->grad;
    if (momentum_ != 0.0) {
      auto& vel = velocity_[node];
      if (vel.empty()) vel.assign(vals.size(), 0.0);
      for (std::size_t i = 0; i < vals.size(); ++i) {
        vel[i] = momentum_ * vel[i] + grads[i];
        vals[i] -= learning_rate_ * vel[i];
      }
    } else {
      for (std::size_t i = 0; i < vals.size(); ++i) vals[i] -= learning_rate_ * grads[i];
    }
    std::fill(grads.begin(), grads.end(), 0.0);
  }
}

double finite_diff_check(const std::function<Tensor()>& build_loss,
                         const std::vector<Tensor>& inputs, double step) {
  if (!(step > 0.0)) throw ValueError("finite_diff_check: step must be positive");
  Tape& tape = Tape::active();
  for (const Tensor& t : inputs) const_cast<Tensor&>(t).zero_grad();
  tape.clear();
  Tensor loss = build_loss();
  if (loss.size() != 1) throw ShapeError("finite_diff_check: loss must be scalar");
  if (!std::isfinite(loss.scalar_value()))
    throw NumericError("finite_diff_check: loss is not finite");
  tape.backward(loss);
  std::vector<std::vector<double>> autodiff;
  autodiff.reserve(inputs.size());
  for (const Tensor& t : inputs) {
    if (t.requires_grad())
      autodiff.push_back(t.grad());
    else
      autodiff.emplace_back(t.size(), 0.0);
  }
  tape.clear();

  auto eval = [&]() {
    tape.clear();
    Tensor v = build_loss();
    tape.clear();
    const double s = v.scalar_value();
    if (!std::isfinite(s)) throw NumericError("finite_diff_check: perturbed loss is not finite");
    return s;
  };

  double worst = 0.0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto& vals = const_cast<Tensor&>(inputs[t]).values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double keep = vals[i];
      vals[i] = keep + step;
      const double fp = eval();
      vals[i] = keep - step;
      const double fm = eval();
      vals[i] = keep;
      const double fd = (fp - fm) / (2.0 * step);
      const double ad = autodiff[t][i];
      const double err = std::abs(ad - fd) / std::max(1.0, std::abs(ad));
      worst = std::max(worst, err);
    }
  }
  for (const Tensor& t : inputs) const_cast<Tensor&>(t).zero_grad();
  return worst;
}

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double step) {
  return finite_diff_check([&]() { return f(x); }, std::vector<Tensor>{x}, step);
}

}  // namespace driftbench
