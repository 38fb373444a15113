#include "offramp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <utility>

namespace offramp {

namespace {

constexpr double kMaskPenalty = 1e9;

std::size_t shape_product(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

void check_positive_dims(const Shape& shape) {
  for (std::size_t d : shape) {
    if (d == 0) throw std::invalid_argument("tensor: zero-sized dimension in " + shape_to_string(shape));
  }
}

thread_local Tape* g_active_tape = nullptr;

// True when the active tape should record an op over the given inputs.
bool taping(std::initializer_list<const Tensor*> inputs) {
  if (g_active_tape == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

void accumulate(const std::shared_ptr<detail::TensorNode>& node, std::size_t index, double value) {
  if (node->grad.empty()) node->grad.assign(node->values.size(), 0.0);
  node->grad[index] += value;
}

std::vector<double>& grad_of(const std::shared_ptr<detail::TensorNode>& node) {
  if (node->grad.empty()) node->grad.assign(node->values.size(), 0.0);
  return node->grad;
}

}  // namespace

std::string shape_to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += " x ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, double fill, bool requires_grad) {
  check_positive_dims(shape);
  node_ = std::make_shared<detail::TensorNode>();
  node_->values.assign(shape_product(shape), fill);
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
  check_positive_dims(shape);
  if (shape_product(shape) != values.size()) {
    throw std::invalid_argument("tensor: shape " + shape_to_string(shape) + " does not match " +
                                std::to_string(values.size()) + " values");
  }
  Tensor t;
  t.node_ = std::make_shared<detail::TensorNode>();
  t.node_->shape = std::move(shape);
  t.node_->values = std::move(values);
  t.node_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  Tensor t(std::move(shape), 0.0, requires_grad);
  for (double& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}

double Tensor::value() const {
  if (size() != 1) {
    throw std::invalid_argument("tensor: value() on non-scalar shape " + shape_to_string(shape()));
  }
  return node_->values[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const Shape& s = node_->shape;
  if (index.size() != s.size()) throw std::invalid_argument("tensor: at() rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= s[axis]) throw std::out_of_range("tensor: at() index out of range");
    flat = flat * s[axis] + i;
    ++axis;
  }
  return node_->values[flat];
}

std::vector<double>& Tensor::grad() { return grad_of(node_); }

const std::vector<double>& Tensor::grad() const {
  if (node_->grad.empty()) throw std::logic_error("tensor: gradient not populated");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

bool Tensor::all_finite() const {
  for (double v : node_->values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

// ---- Tape ----

Tape::Scope::Scope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
Tape::Scope::~Scope() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::shared_ptr<detail::TensorNode> out, std::function<void()> pull) {
  out->on_tape = true;
  records_.push_back(Record{std::move(out), std::move(pull)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                (loss.defined() ? shape_to_string(loss.shape()) : std::string("<empty>")));
  }
  if (!loss.node()->on_tape) {
    throw std::invalid_argument("backward: loss was not produced through this tape");
  }
  // Interior gradients are scratch state owned by the sweep; resetting them
  // here makes repeated backward calls accumulate exactly one d(loss)/d(leaf)
  // per call into the leaves.
  for (Record& r : records_) r.out->grad.clear();
  accumulate(loss.node(), 0, 1.0);
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (it->out->grad.empty()) continue;  // output never contributed to the loss
    it->pull();
  }
}

// ---- op machinery ----

namespace {

// Creates the output tensor for an op and, when taping, registers the pull
// closure. The closure reads out->grad and accumulates into the inputs.
Tensor make_op_output(Shape shape, std::vector<double> values,
                      std::initializer_list<const Tensor*> inputs,
                      const std::function<std::function<void()>(std::shared_ptr<detail::TensorNode>)>& make_pull) {
  Tensor out = Tensor::from_data(std::move(shape), std::move(values));
  if (taping(inputs)) {
    out.set_requires_grad(true);
    g_active_tape->record(out.node(), make_pull(out.node()));
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("add: shape mismatch " + shape_to_string(a.shape()) + " vs " +
                                shape_to_string(b.shape()));
  }
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto an = a.node();
  auto bn = b.node();
  return make_op_output(a.shape(), std::move(out), {&a, &b}, [an, bn](auto on) {
    return [an, bn, on]() {
      const auto& g = on->grad;
      if (an->requires_grad) {
        auto& ga = grad_of(an);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bn->requires_grad) {
        auto& gb = grad_of(bn);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    };
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1 || x.rank() < 1 || x.shape().back() != bias.shape()[0]) {
    throw std::invalid_argument("add_bias: bias " + shape_to_string(bias.shape()) +
                                " does not match last axis of " + shape_to_string(x.shape()));
  }
  const std::size_t width = bias.size();
  const std::size_t rows = x.size() / width;
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < width; ++c) out[r * width + c] = x.data()[r * width + c] + bias.data()[c];
  }
  auto xn = x.node();
  auto bn = bias.node();
  return make_op_output(x.shape(), std::move(out), {&x, &bias}, [xn, bn, rows, width](auto on) {
    return [xn, bn, on, rows, width]() {
      const auto& g = on->grad;
      if (xn->requires_grad) {
        auto& gx = grad_of(xn);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (bn->requires_grad) {
        auto& gb = grad_of(bn);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < width; ++c) gb[c] += g[r * width + c];
        }
      }
    };
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("mul: shape mismatch " + shape_to_string(a.shape()) + " vs " +
                                shape_to_string(b.shape()));
  }
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto an = a.node();
  auto bn = b.node();
  return make_op_output(a.shape(), std::move(out), {&a, &b}, [an, bn](auto on) {
    return [an, bn, on]() {
      const auto& g = on->grad;
      if (an->requires_grad) {
        auto& ga = grad_of(an);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bn->values[i];
      }
      if (bn->requires_grad) {
        auto& gb = grad_of(bn);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * an->values[i];
      }
    };
  });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * factor;
  auto xn = x.node();
  return make_op_output(x.shape(), std::move(out), {&x}, [xn, factor](auto on) {
    return [xn, on, factor]() {
      auto& gx = grad_of(xn);
      const auto& g = on->grad;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
    };
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw std::invalid_argument("matmul: inner dimensions disagree: " + shape_to_string(a.shape()) +
                                " vs " + shape_to_string(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], p = b.shape()[1];
  std::vector<double> out(m * p, 0.0);
  const double* av = a.data().data();
  const double* bv = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t l = 0; l < k; ++l) {
      const double ail = av[i * k + l];
      const double* brow = bv + l * p;
      double* orow = out.data() + i * p;
      for (std::size_t j = 0; j < p; ++j) orow[j] += ail * brow[j];
    }
  }
  auto an = a.node();
  auto bn = b.node();
  return make_op_output({m, p}, std::move(out), {&a, &b}, [an, bn, m, k, p](auto on) {
    return [an, bn, on, m, k, p]() {
      const auto& g = on->grad;
      if (an->requires_grad) {
        auto& ga = grad_of(an);  // dA = G . B^T
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t l = 0; l < k; ++l) {
            double acc = 0.0;
            const double* grow = g.data() + i * p;
            const double* brow = bn->values.data() + l * p;
            for (std::size_t j = 0; j < p; ++j) acc += grow[j] * brow[j];
            ga[i * k + l] += acc;
          }
        }
      }
      if (bn->requires_grad) {
        auto& gb = grad_of(bn);  // dB = A^T . G
        for (std::size_t i = 0; i < m; ++i) {
          const double* arow = an->values.data() + i * k;
          const double* grow = g.data() + i * p;
          for (std::size_t l = 0; l < k; ++l) {
            const double ail = arow[l];
            double* gbrow = gb.data() + l * p;
            for (std::size_t j = 0; j < p; ++j) gbrow[j] += ail * grow[j];
          }
        }
      }
    };
  });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.shape()[0] != b.shape()[0] || a.shape()[2] != b.shape()[1]) {
    throw std::invalid_argument("bmm: incompatible shapes " + shape_to_string(a.shape()) + " vs " +
                                shape_to_string(b.shape()));
  }
  const std::size_t batch = a.shape()[0], m = a.shape()[1], k = a.shape()[2], p = b.shape()[2];
  std::vector<double> out(batch * m * p, 0.0);
  for (std::size_t s = 0; s < batch; ++s) {
    const double* av = a.data().data() + s * m * k;
    const double* bv = b.data().data() + s * k * p;
    double* ov = out.data() + s * m * p;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t l = 0; l < k; ++l) {
        const double ail = av[i * k + l];
        const double* brow = bv + l * p;
        double* orow = ov + i * p;
        for (std::size_t j = 0; j < p; ++j) orow[j] += ail * brow[j];
      }
    }
  }
  auto an = a.node();
  auto bn = b.node();
  return make_op_output({batch, m, p}, std::move(out), {&a, &b}, [an, bn, batch, m, k, p](auto on) {
    return [an, bn, on, batch, m, k, p]() {
      const auto& g = on->grad;
      for (std::size_t s = 0; s < batch; ++s) {
        const double* gv = g.data() + s * m * p;
        if (an->requires_grad) {
          auto& ga = grad_of(an);
          const double* bv = bn->values.data() + s * k * p;
          double* gav = ga.data() + s * m * k;
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t l = 0; l < k; ++l) {
              double acc = 0.0;
              for (std::size_t j = 0; j < p; ++j) acc += gv[i * p + j] * bv[l * p + j];
              gav[i * k + l] += acc;
            }
          }
        }
        if (bn->requires_grad) {
          auto& gb = grad_of(bn);
          const double* av = an->values.data() + s * m * k;
          double* gbv = gb.data() + s * k * p;
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t l = 0; l < k; ++l) {
              const double ail = av[i * k + l];
              for (std::size_t j = 0; j < p; ++j) gbv[l * p + j] += ail * gv[i * p + j];
            }
          }
        }
      }
    };
  });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw std::invalid_argument("transpose: expected rank 2, got " + shape_to_string(x.shape()));
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x.data()[i * n + j];
  }
  auto xn = x.node();
  return make_op_output({n, m}, std::move(out), {&x}, [xn, m, n](auto on) {
    return [xn, on, m, n]() {
      auto& gx = grad_of(xn);
      const auto& g = on->grad;
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[j * m + i];
      }
    };
  });
}

Tensor transpose_last2(const Tensor& x) {
  if (x.rank() != 3) throw std::invalid_argument("transpose_last2: expected rank 3, got " + shape_to_string(x.shape()));
  const std::size_t batch = x.shape()[0], m = x.shape()[1], n = x.shape()[2];
  std::vector<double> out(x.size());
  for (std::size_t s = 0; s < batch; ++s) {
    const double* xv = x.data().data() + s * m * n;
    double* ov = out.data() + s * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) ov[j * m + i] = xv[i * n + j];
    }
  }
  auto xn = x.node();
  return make_op_output({batch, n, m}, std::move(out), {&x}, [xn, batch, m, n](auto on) {
    return [xn, on, batch, m, n]() {
      auto& gx = grad_of(xn);
      const auto& g = on->grad;
      for (std::size_t s = 0; s < batch; ++s) {
        const double* gv = g.data() + s * m * n;
        double* gxv = gx.data() + s * m * n;
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) gxv[i * n + j] += gv[j * m + i];
        }
      }
    };
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  check_positive_dims(shape);
  if (shape_product(shape) != x.size()) {
    throw std::invalid_argument("reshape: cannot view " + shape_to_string(x.shape()) + " as " +
                                shape_to_string(shape));
  }
  std::vector<double> out = x.data();
  auto xn = x.node();
  return make_op_output(std::move(shape), std::move(out), {&x}, [xn](auto on) {
    return [xn, on]() {
      auto& gx = grad_of(xn);
      const auto& g = on->grad;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    };
  });
}

Tensor slice_last(const Tensor& x, std::size_t start, std::size_t length) {
  const std::size_t width = x.shape().back();
  if (length == 0 || start + length > width) {
    throw std::invalid_argument("slice_last: range [" + std::to_string(start) + ", " +
                                std::to_string(start + length) + ") out of axis size " + std::to_string(width));
  }
  const std::size_t rows = x.size() / width;
  Shape out_shape = x.shape();
  out_shape.back() = length;
  std::vector<double> out(rows * length);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = x.data().data() + r * width + start;
    std::copy(src, src + length, out.data() + r * length);
  }
  auto xn = x.node();
  return make_op_output(std::move(out_shape), std::move(out), {&x}, [xn, rows, width, start, length](auto on) {
    return [xn, on, rows, width, start, length]() {
      auto& gx = grad_of(xn);
      const auto& g = on->grad;
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < length; ++c) gx[r * width + start + c] += g[r * length + c];
      }
    };
  });
}

Tensor concat_last(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_last: no inputs");
  Shape lead = parts[0].shape();
  lead.pop_back();
  std::size_t total_width = 0;
  for (const Tensor& p : parts) {
    Shape plead = p.shape();
    std::size_t w = plead.back();
    plead.pop_back();
    if (plead != lead) {
      throw std::invalid_argument("concat_last: leading dimensions disagree: " +
                                  shape_to_string(parts[0].shape()) + " vs " + shape_to_string(p.shape()));
    }
    total_width += w;
  }
  const std::size_t rows = parts[0].size() / parts[0].shape().back();
  Shape out_shape = parts[0].shape();
  out_shape.back() = total_width;
  std::vector<double> out(rows * total_width);
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t w = p.shape().back();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(p.data().data() + r * w, p.data().data() + r * w + w, out.data() + r * total_width + offset);
    }
    offset += w;
  }
  std::vector<std::shared_ptr<detail::TensorNode>> nodes;
  std::vector<std::size_t> widths;
  bool any_grad = false;
  for (const Tensor& p : parts) {
    nodes.push_back(p.node());
    widths.push_back(p.shape().back());
    any_grad = any_grad || p.requires_grad();
  }
  Tensor result = Tensor::from_data(std::move(out_shape), std::move(out));
  if (g_active_tape != nullptr && any_grad) {
    result.set_requires_grad(true);
    auto on = result.node();
    g_active_tape->record(on, [nodes, widths, on, rows, total_width]() {
      const auto& g = on->grad;
      std::size_t off = 0;
      for (std::size_t p = 0; p < nodes.size(); ++p) {
        const std::size_t w = widths[p];
        if (nodes[p]->requires_grad) {
          auto& gx = grad_of(nodes[p]);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < w; ++c) gx[r * w + c] += g[r * total_width + off + c];
          }
        }
        off += w;
      }
    });
  }
  return result;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw std::invalid_argument("softmax: axis " + std::to_string(axis) + " invalid for shape " +
                                shape_to_string(x.shape()));
  }
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t k = s[axis];

  std::vector<double> out(x.size());
  const double* xv = x.data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * k * inner + in;
      double max_v = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < k; ++j) max_v = std::max(max_v, xv[base + j * inner]);
      double denom = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        const double e = std::exp(xv[base + j * inner] - max_v);
        out[base + j * inner] = e;
        denom += e;
      }
      const double inv = 1.0 / denom;
      for (std::size_t j = 0; j < k; ++j) out[base + j * inner] *= inv;
    }
  }
  auto xn = x.node();
  return make_op_output(x.shape(), std::move(out), {&x}, [xn, outer, inner, k](auto on) {
    return [xn, on, outer, inner, k]() {
      auto& gx = grad_of(xn);
      const auto& g = on->grad;
      const auto& y = on->values;
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * k * inner + in;
          double dot = 0.0;
          for (std::size_t j = 0; j < k; ++j) dot += g[base + j * inner] * y[base + j * inner];
          for (std::size_t j = 0; j < k; ++j) {
            gx[base + j * inner] += y[base + j * inner] * (g[base + j * inner] - dot);
          }
        }
      }
    };
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double epsilon) {
  const std::size_t width = x.shape().back();
  if (gain.rank() != 1 || gain.size() != width || bias.rank() != 1 || bias.size() != width) {
    throw std::invalid_argument("layer_norm: gain " + shape_to_string(gain.shape()) + " / bias " +
                                shape_to_string(bias.shape()) + " do not match last axis of " +
                                shape_to_string(x.shape()));
  }
  const std::size_t rows = x.size() / width;
  std::vector<double> out(x.size());
  std::vector<double> means(rows), inv_stds(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * width;
    double mean = 0.0;
    for (std::size_t c = 0; c < width; ++c) mean += xr[c];
    mean /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t c = 0; c < width; ++c) {
      const double d = xr[c] - mean;
      var += d * d;
    }
    var /= static_cast<double>(width);
    const double inv_std = 1.0 / std::sqrt(var + epsilon);
    means[r] = mean;
    inv_stds[r] = inv_std;
    for (std::size_t c = 0; c < width; ++c) {
      out[r * width + c] = (xr[c] - mean) * inv_std * gain.data()[c] + bias.data()[c];
    }
  }
  auto xn = x.node();
  auto gn = gain.node();
  auto bn = bias.node();
  return make_op_output(x.shape(), std::move(out), {&x, &gain, &bias},
                        [xn, gn, bn, rows, width, means, inv_stds](auto on) {
    return [xn, gn, bn, on, rows, width, means, inv_stds]() {
      const auto& g = on->grad;
      const double w = static_cast<double>(width);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xn->values.data() + r * width;
        const double* gr = g.data() + r * width;
        const double mean = means[r];
        const double inv_std = inv_stds[r];
        if (gn->requires_grad) {
          auto& gg = grad_of(gn);
          for (std::size_t c = 0; c < width; ++c) gg[c] += gr[c] * (xr[c] - mean) * inv_std;
        }
        if (bn->requires_grad) {
          auto& gb = grad_of(bn);
          for (std::size_t c = 0; c < width; ++c) gb[c] += gr[c];
        }
        if (xn->requires_grad) {
          auto& gx = grad_of(xn);
          // d(xhat) = g * gain; fold the mean/variance terms per row.
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (std::size_t c = 0; c < width; ++c) {
            const double dxhat = gr[c] * gn->values[c];
            const double xhat = (xr[c] - mean) * inv_std;
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
          }
          for (std::size_t c = 0; c < width; ++c) {
            const double dxhat = gr[c] * gn->values[c];
            const double xhat = (xr[c] - mean) * inv_std;
            gx[r * width + c] += inv_std * (dxhat - sum_dxhat / w - xhat * sum_dxhat_xhat / w);
          }
        }
      }
    };
  });
}

Tensor gelu(const Tensor& x) {
  constexpr double kAlpha = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kCubic = 0.044715;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.data()[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kAlpha * (v + kCubic * v * v * v)));
  }
  auto xn = x.node();
  return make_op_output(x.shape(), std::move(out), {&x}, [xn](auto on) {
    return [xn, on]() {
      auto& gx = grad_of(xn);
      const auto& g = on->grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = xn->values[i];
        const double t = std::tanh(kAlpha * (v + kCubic * v * v * v));
        const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kAlpha * (1.0 + 3.0 * kCubic * v * v);
        gx[i] += g[i] * d;
      }
    };
  });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw std::invalid_argument("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  }
  if (rate == 0.0) return x;  // identity, nothing recorded
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.size());
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = rng.uniform() >= rate ? keep_scale : 0.0;
    out[i] = x.data()[i] * mask[i];
  }
  auto xn = x.node();
  return make_op_output(x.shape(), std::move(out), {&x}, [xn, mask = std::move(mask)](auto on) {
    return [xn, on, mask]() {
      auto& gx = grad_of(xn);
      const auto& g = on->grad;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
    };
  });
}

Tensor embedding_gather(const Tensor& table, const std::vector<int>& ids) {
  if (table.rank() != 2) {
    throw std::invalid_argument("embedding_gather: table must be rank 2, got " + shape_to_string(table.shape()));
  }
  if (ids.empty()) throw std::invalid_argument("embedding_gather: empty id list");
  const std::size_t vocab = table.shape()[0], width = table.shape()[1];
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw std::out_of_range("embedding_gather: id " + std::to_string(id) + " out of range [0, " +
                              std::to_string(vocab) + ")");
    }
  }
  std::vector<double> out(ids.size() * width);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const double* src = table.data().data() + static_cast<std::size_t>(ids[r]) * width;
    std::copy(src, src + width, out.data() + r * width);
  }
  auto tn = table.node();
  return make_op_output({ids.size(), width}, std::move(out), {&table}, [tn, ids, width](auto on) {
    return [tn, on, ids, width]() {
      auto& gt = grad_of(tn);
      const auto& g = on->grad;
      for (std::size_t r = 0; r < ids.size(); ++r) {
        double* dst = gt.data() + static_cast<std::size_t>(ids[r]) * width;
        const double* src = g.data() + r * width;
        for (std::size_t c = 0; c < width; ++c) dst[c] += src[c];
      }
    };
  });
}

Tensor select_token(const Tensor& x, std::size_t token_index) {
  if (x.rank() != 3) throw std::invalid_argument("select_token: expected rank 3, got " + shape_to_string(x.shape()));
  const std::size_t batch = x.shape()[0], seq = x.shape()[1], width = x.shape()[2];
  if (token_index >= seq) {
    throw std::out_of_range("select_token: position " + std::to_string(token_index) + " out of sequence length " +
                            std::to_string(seq));
  }
  std::vector<double> out(batch * width);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* src = x.data().data() + (b * seq + token_index) * width;
    std::copy(src, src + width, out.data() + b * width);
  }
  auto xn = x.node();
  return make_op_output({batch, width}, std::move(out), {&x}, [xn, batch, seq, width, token_index](auto on) {
    return [xn, on, batch, seq, width, token_index]() {
      auto& gx = grad_of(xn);
      const auto& g = on->grad;
      for (std::size_t b = 0; b < batch; ++b) {
        double* dst = gx.data() + (b * seq + token_index) * width;
        const double* src = g.data() + b * width;
        for (std::size_t c = 0; c < width; ++c) dst[c] += src[c];
      }
    };
  });
}

Tensor attention_mask_add(const Tensor& scores, const std::vector<int>& mask) {
  if (scores.rank() != 3) {
    throw std::invalid_argument("attention_mask_add: expected rank 3 scores, got " + shape_to_string(scores.shape()));
  }
  const std::size_t batch = scores.shape()[0], q = scores.shape()[1], k = scores.shape()[2];
  if (mask.size() != batch * k) {
    throw std::invalid_argument("attention_mask_add: mask size " + std::to_string(mask.size()) +
                                " does not match " + std::to_string(batch * k) + " key positions");
  }
  std::vector<double> out(scores.size());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < q; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t idx = (b * q + i) * k + j;
        out[idx] = scores.data()[idx] + (mask[b * k + j] != 0 ? 0.0 : -kMaskPenalty);
      }
    }
  }
  auto sn = scores.node();
  return make_op_output(scores.shape(), std::move(out), {&scores}, [sn](auto on) {
    return [sn, on]() {
      auto& gs = grad_of(sn);
      const auto& g = on->grad;
      for (std::size_t i = 0; i < g.size(); ++i) gs[i] += g[i];
    };
  });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) {
    throw std::invalid_argument("cross_entropy: logits must be rank 2, got " + shape_to_string(logits.shape()));
  }
  const std::size_t batch = logits.shape()[0], classes = logits.shape()[1];
  if (labels.size() != batch) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                                std::to_string(batch));
  }
  if (batch == 0) throw std::invalid_argument("cross_entropy: empty batch");
  for (std::size_t r = 0; r < batch; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= classes) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(labels[r]) + " out of range [0, " +
                              std::to_string(classes) + ") at row " + std::to_string(r));
    }
  }
  // Mean over the batch of log-sum-exp(logits) - logits[label].
  std::vector<double> probs(batch * classes);
  double total = 0.0;
  for (std::size_t r = 0; r < batch; ++r) {
    const double* row = logits.data().data() + r * classes;
    double max_v = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < classes; ++c) max_v = std::max(max_v, row[c]);
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      const double e = std::exp(row[c] - max_v);
      probs[r * classes + c] = e;
      denom += e;
    }
    const double inv = 1.0 / denom;
    for (std::size_t c = 0; c < classes; ++c) probs[r * classes + c] *= inv;
    total += (max_v + std::log(denom)) - row[static_cast<std::size_t>(labels[r])];
  }
  const double loss = total / static_cast<double>(batch);
  auto ln = logits.node();
  return make_op_output({1}, {loss}, {&logits}, [ln, labels, batch, classes, probs = std::move(probs)](auto on) {
    return [ln, on, labels, batch, classes, probs]() {
      auto& gl = grad_of(ln);
      const double g = on->grad[0] / static_cast<double>(batch);
      for (std::size_t r = 0; r < batch; ++r) {
        for (std::size_t c = 0; c < classes; ++c) {
          const double indicator = (static_cast<std::size_t>(labels[r]) == c) ? 1.0 : 0.0;
          gl[r * classes + c] += g * (probs[r * classes + c] - indicator);
        }
      }
    };
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  auto xn = x.node();
  return make_op_output({1}, {total}, {&x}, [xn](auto on) {
    return [xn, on]() {
      auto& gx = grad_of(xn);
      const double g = on->grad[0];
      for (double& v : gx) v += g;
    };
  });
}

Tensor mean(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  const double n = static_cast<double>(x.size());
  auto xn = x.node();
  return make_op_output({1}, {total / n}, {&x}, [xn, n](auto on) {
    return [xn, on, n]() {
      auto& gx = grad_of(xn);
      const double g = on->grad[0] / n;
      for (double& v : gx) v += g;
    };
  });
}

std::vector<int> argmax_rows(const Tensor& x) {
  if (x.rank() != 2) throw std::invalid_argument("argmax_rows: expected rank 2, got " + shape_to_string(x.shape()));
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  std::vector<int> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = x.data().data() + r * cols;
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c) {
      if (row[c] > row[best]) best = c;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

}  // namespace offramp
