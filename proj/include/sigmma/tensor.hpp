#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "sigmma/rng.hpp"

namespace sigmma {

// Reverse-mode autodiff over dense row-major 2-D tensors of 64-bit floats.
// Scalars are [1 x 1]. Every op validates shapes up front and throws
// std::invalid_argument naming the op and the offending shapes. Ops record
// themselves on the tape (parent links + a backward closure) only when an
// input requires gradients; constant subgraphs stay plain data.

struct TensorNode {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> value;
  std::vector<double> grad;  // allocated lazily, same length as value
  bool requires_grad = false;
  bool is_param = false;  // registered trainable leaf (see ParamGradMap)
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  std::size_t numel() const { return rows * cols; }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

// Leaf gradients can be diverted into an external map keyed by node; the
// parallel trainer uses this to give each tile its own accumulation buffer
// while interior node grads stay on the (tile-local) tape.
using ParamGradMap = std::unordered_map<TensorNode*, std::vector<double>>;

namespace detail {
inline thread_local ParamGradMap* t_param_sink = nullptr;

inline double* grad_buffer(TensorNode& n) {
  if (t_param_sink != nullptr && n.is_param) {
    auto& buf = (*t_param_sink)[&n];
    if (buf.size() != n.value.size()) buf.assign(n.value.size(), 0.0);
    return buf.data();
  }
  n.ensure_grad();
  return n.grad.data();
}

inline std::string shape_str(std::size_t r, std::size_t c) {
  return "[" + std::to_string(r) + " x " + std::to_string(c) + "]";
}
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  Tensor(std::size_t rows, std::size_t cols, bool requires_grad = false) {
    node_ = std::make_shared<TensorNode>();
    node_->rows = rows;
    node_->cols = cols;
    node_->value.assign(rows * cols, 0.0);
    node_->requires_grad = requires_grad;
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    Tensor t(1, 1, requires_grad);
    t.data()[0] = v;
    return t;
  }

  static Tensor from(std::size_t rows, std::size_t cols,
                     std::vector<double> values, bool requires_grad = false) {
    if (values.size() != rows * cols)
      throw std::invalid_argument(
          "Tensor::from: data length " + std::to_string(values.size()) +
          " does not match shape " + detail::shape_str(rows, cols));
    Tensor t;
    t.node_ = std::make_shared<TensorNode>();
    t.node_->rows = rows;
    t.node_->cols = cols;
    t.node_->value = std::move(values);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor row(std::vector<double> values, bool requires_grad = false) {
    const std::size_t n = values.size();
    return from(1, n, std::move(values), requires_grad);
  }

  static Tensor column(std::vector<double> values, bool requires_grad = false) {
    const std::size_t n = values.size();
    return from(n, 1, std::move(values), requires_grad);
  }

  static Tensor full(std::size_t rows, std::size_t cols, double v,
                     bool requires_grad = false) {
    Tensor t(rows, cols, requires_grad);
    std::fill(t.data().begin(), t.data().end(), v);
    return t;
  }

  static Tensor randn(std::size_t rows, std::size_t cols, Rng& rng,
                      double stdev = 1.0, bool requires_grad = false) {
    Tensor t(rows, cols, requires_grad);
    for (auto& v : t.data()) v = rng.normal() * stdev;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  std::size_t rows() const { return node_->rows; }
  std::size_t cols() const { return node_->cols; }
  std::size_t numel() const { return node_->numel(); }

  std::vector<double>& data() { return node_->value; }
  const std::vector<double>& data() const { return node_->value; }

  double& at(std::size_t r, std::size_t c) {
    return node_->value[r * node_->cols + c];
  }
  double at(std::size_t r, std::size_t c) const {
    return node_->value[r * node_->cols + c];
  }

  double item() const {
    if (numel() != 1)
      throw std::invalid_argument("Tensor::item: tensor has " +
                                  std::to_string(numel()) + " elements");
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }

  std::vector<double>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const std::vector<double>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }

  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

  std::shared_ptr<TensorNode> node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

namespace detail {

inline Tensor make_op(std::size_t rows, std::size_t cols,
                      std::vector<double> value,
                      std::initializer_list<Tensor> parents,
                      std::function<void(TensorNode&)> backward_fn) {
  Tensor out = Tensor::from(rows, cols, std::move(value));
  bool rg = false;
  for (const auto& p : parents) rg = rg || p.requires_grad();
  if (rg) {
    out.node()->requires_grad = true;
    for (const auto& p : parents) out.node()->parents.push_back(p.node());
    out.node()->backward_fn = std::move(backward_fn);
  }
  return out;
}

[[noreturn]] inline void shape_error(const std::string& op, const Tensor& a,
                                     const Tensor& b) {
  throw std::invalid_argument(op + ": shape mismatch " +
                              shape_str(a.rows(), a.cols()) + " vs " +
                              shape_str(b.rows(), b.cols()));
}

[[noreturn]] inline void shape_error(const std::string& op, const Tensor& a) {
  throw std::invalid_argument(op + ": bad shape " +
                              shape_str(a.rows(), a.cols()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    detail::shape_error("add", a, b);
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + b.data()[i];
  TensorNode* an = a.node().get();
  TensorNode* bn = b.node().get();
  return detail::make_op(a.rows(), a.cols(), std::move(v), {a, b},
                         [an, bn](TensorNode& self) {
                           const double* g = self.grad.data();
                           if (an->requires_grad) {
                             double* ga = detail::grad_buffer(*an);
                             for (std::size_t i = 0; i < self.numel(); ++i)
                               ga[i] += g[i];
                           }
                           if (bn->requires_grad) {
                             double* gb = detail::grad_buffer(*bn);
                             for (std::size_t i = 0; i < self.numel(); ++i)
                               gb[i] += g[i];
                           }
                         });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    detail::shape_error("sub", a, b);
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] - b.data()[i];
  TensorNode* an = a.node().get();
  TensorNode* bn = b.node().get();
  return detail::make_op(a.rows(), a.cols(), std::move(v), {a, b},
                         [an, bn](TensorNode& self) {
                           const double* g = self.grad.data();
                           if (an->requires_grad) {
                             double* ga = detail::grad_buffer(*an);
                             for (std::size_t i = 0; i < self.numel(); ++i)
                               ga[i] += g[i];
                           }
                           if (bn->requires_grad) {
                             double* gb = detail::grad_buffer(*bn);
                             for (std::size_t i = 0; i < self.numel(); ++i)
                               gb[i] -= g[i];
                           }
                         });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    detail::shape_error("mul", a, b);
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * b.data()[i];
  TensorNode* an = a.node().get();
  TensorNode* bn = b.node().get();
  return detail::make_op(a.rows(), a.cols(), std::move(v), {a, b},
                         [an, bn](TensorNode& self) {
                           const double* g = self.grad.data();
                           if (an->requires_grad) {
                             double* ga = detail::grad_buffer(*an);
                             for (std::size_t i = 0; i < self.numel(); ++i)
                               ga[i] += g[i] * bn->value[i];
                           }
                           if (bn->requires_grad) {
                             double* gb = detail::grad_buffer(*bn);
                             for (std::size_t i = 0; i < self.numel(); ++i)
                               gb[i] += g[i] * an->value[i];
                           }
                         });
}

inline Tensor mul_scalar(const Tensor& a, double c) {
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * c;
  TensorNode* an = a.node().get();
  return detail::make_op(a.rows(), a.cols(), std::move(v), {a},
                         [an, c](TensorNode& self) {
                           double* ga = detail::grad_buffer(*an);
                           const double* g = self.grad.data();
                           for (std::size_t i = 0; i < self.numel(); ++i)
                             ga[i] += g[i] * c;
                         });
}

inline Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + c;
  TensorNode* an = a.node().get();
  return detail::make_op(a.rows(), a.cols(), std::move(v), {a},
                         [an](TensorNode& self) {
                           double* ga = detail::grad_buffer(*an);
                           const double* g = self.grad.data();
                           for (std::size_t i = 0; i < self.numel(); ++i)
                             ga[i] += g[i];
                         });
}

inline Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

inline Tensor relu(const Tensor& a) {
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
  TensorNode* an = a.node().get();
  return detail::make_op(a.rows(), a.cols(), std::move(v), {a},
                         [an](TensorNode& self) {
                           double* ga = detail::grad_buffer(*an);
                           const double* g = self.grad.data();
                           for (std::size_t i = 0; i < self.numel(); ++i)
                             if (an->value[i] > 0.0) ga[i] += g[i];
                         });
}

inline Tensor sigmoid(const Tensor& a) {
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double x = a.data()[i];
    v[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                    : std::exp(x) / (1.0 + std::exp(x));
  }
  TensorNode* an = a.node().get();
  return detail::make_op(a.rows(), a.cols(), std::move(v), {a},
                         [an](TensorNode& self) {
                           double* ga = detail::grad_buffer(*an);
                           const double* g = self.grad.data();
                           for (std::size_t i = 0; i < self.numel(); ++i) {
                             const double s = self.value[i];
                             ga[i] += g[i] * s * (1.0 - s);
                           }
                         });
}

inline Tensor exp(const Tensor& a) {
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::exp(a.data()[i]);
  TensorNode* an = a.node().get();
  return detail::make_op(a.rows(), a.cols(), std::move(v), {a},
                         [an](TensorNode& self) {
                           double* ga = detail::grad_buffer(*an);
                           const double* g = self.grad.data();
                           for (std::size_t i = 0; i < self.numel(); ++i)
                             ga[i] += g[i] * self.value[i];
                         });
}

inline Tensor log(const Tensor& a) {
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (a.data()[i] <= 0.0)
      throw std::invalid_argument("log: non-positive input " +
                                  std::to_string(a.data()[i]));
    v[i] = std::log(a.data()[i]);
  }
  TensorNode* an = a.node().get();
  return detail::make_op(a.rows(), a.cols(), std::move(v), {a},
                         [an](TensorNode& self) {
                           double* ga = detail::grad_buffer(*an);
                           const double* g = self.grad.data();
                           for (std::size_t i = 0; i < self.numel(); ++i)
                             ga[i] += g[i] / an->value[i];
                         });
}

// log(x / (1-x)) for x strictly inside (0,1)
inline Tensor logit(const Tensor& a) {
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double x = a.data()[i];
    if (x <= 0.0 || x >= 1.0)
      throw std::invalid_argument("logit: input outside (0,1): " +
                                  std::to_string(x));
    v[i] = std::log(x / (1.0 - x));
  }
  TensorNode* an = a.node().get();
  return detail::make_op(a.rows(), a.cols(), std::move(v), {a},
                         [an](TensorNode& self) {
                           double* ga = detail::grad_buffer(*an);
                           const double* g = self.grad.data();
                           for (std::size_t i = 0; i < self.numel(); ++i) {
                             const double x = an->value[i];
                             ga[i] += g[i] / (x * (1.0 - x));
                           }
                         });
}

// ---------------------------------------------------------------------------
// linear algebra / structure
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) detail::shape_error("matmul", a, b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> v(m * n, 0.0);
  {
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = pa[i * k + p];
        if (aip == 0.0) continue;
        const double* brow = pb + p * n;
        double* vrow = v.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) vrow[j] += aip * brow[j];
      }
  }
  TensorNode* an = a.node().get();
  TensorNode* bn = b.node().get();
  return detail::make_op(
      m, n, std::move(v), {a, b}, [an, bn, m, k, n](TensorNode& self) {
        const double* g = self.grad.data();
        if (an->requires_grad) {
          // dA = G * B^T
          double* ga = detail::grad_buffer(*an);
          const double* pb = bn->value.data();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              const double* grow = g + i * n;
              const double* brow = pb + p * n;
              for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
              ga[i * k + p] += acc;
            }
        }
        if (bn->requires_grad) {
          // dB = A^T * G
          double* gb = detail::grad_buffer(*bn);
          const double* pa = an->value.data();
          for (std::size_t i = 0; i < m; ++i) {
            const double* grow = g + i * n;
            for (std::size_t p = 0; p < k; ++p) {
              const double aip = pa[i * k + p];
              if (aip == 0.0) continue;
              double* gbrow = gb + p * n;
              for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
            }
          }
        }
      });
}

inline Tensor transpose(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> v(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) v[j * m + i] = a.data()[i * n + j];
  TensorNode* an = a.node().get();
  return detail::make_op(n, m, std::move(v), {a},
                         [an, m, n](TensorNode& self) {
                           double* ga = detail::grad_buffer(*an);
                           const double* g = self.grad.data();
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < n; ++j)
                               ga[i * n + j] += g[j * m + i];
                         });
}

// X [m x n] + b [1 x n], broadcast over rows
inline Tensor add_row_bias(const Tensor& x, const Tensor& b) {
  if (b.rows() != 1 || b.cols() != x.cols())
    detail::shape_error("add_row_bias", x, b);
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> v(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      v[i * n + j] = x.data()[i * n + j] + b.data()[j];
  TensorNode* xn = x.node().get();
  TensorNode* bn = b.node().get();
  return detail::make_op(m, n, std::move(v), {x, b},
                         [xn, bn, m, n](TensorNode& self) {
                           const double* g = self.grad.data();
                           if (xn->requires_grad) {
                             double* gx = detail::grad_buffer(*xn);
                             for (std::size_t i = 0; i < m * n; ++i)
                               gx[i] += g[i];
                           }
                           if (bn->requires_grad) {
                             double* gb = detail::grad_buffer(*bn);
                             for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t j = 0; j < n; ++j)
                                 gb[j] += g[i * n + j];
                           }
                         });
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) detail::shape_error("concat_cols", a, b);
  const std::size_t m = a.rows(), ca = a.cols(), cb = b.cols();
  std::vector<double> v(m * (ca + cb));
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(a.data().data() + i * ca, ca, v.data() + i * (ca + cb));
    std::copy_n(b.data().data() + i * cb, cb, v.data() + i * (ca + cb) + ca);
  }
  TensorNode* an = a.node().get();
  TensorNode* bn = b.node().get();
  return detail::make_op(
      m, ca + cb, std::move(v), {a, b}, [an, bn, m, ca, cb](TensorNode& self) {
        const double* g = self.grad.data();
        if (an->requires_grad) {
          double* ga = detail::grad_buffer(*an);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < ca; ++j)
              ga[i * ca + j] += g[i * (ca + cb) + j];
        }
        if (bn->requires_grad) {
          double* gb = detail::grad_buffer(*bn);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < cb; ++j)
              gb[i * cb + j] += g[i * (ca + cb) + ca + j];
        }
      });
}

// Stack tensors with equal column counts on top of each other.
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty())
    throw std::invalid_argument("concat_rows: empty input list");
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    if (p.cols() != n) detail::shape_error("concat_rows", parts[0], p);
    m += p.rows();
  }
  std::vector<double> v;
  v.reserve(m * n);
  for (const auto& p : parts)
    v.insert(v.end(), p.data().begin(), p.data().end());

  Tensor out = Tensor::from(m, n, std::move(v));
  bool rg = false;
  for (const auto& p : parts) rg = rg || p.requires_grad();
  if (rg) {
    out.node()->requires_grad = true;
    std::vector<TensorNode*> raw;
    raw.reserve(parts.size());
    for (const auto& p : parts) {
      out.node()->parents.push_back(p.node());
      raw.push_back(p.node().get());
    }
    out.node()->backward_fn = [raw, n](TensorNode& self) {
      const double* g = self.grad.data();
      std::size_t row = 0;
      for (TensorNode* p : raw) {
        if (p->requires_grad) {
          double* gp = detail::grad_buffer(*p);
          for (std::size_t i = 0; i < p->numel(); ++i)
            gp[i] += g[row * n + i];
        }
        row += p->rows;
      }
    };
  }
  return out;
}

// out[i] = idx[i] < 0 ? 0 : x.flat[idx[i]]; the workhorse behind im2col and
// row gathers. Indices are shared (typically a cached plan).
inline Tensor gather_pad(const Tensor& x,
                         std::shared_ptr<const std::vector<std::int64_t>> idx,
                         std::size_t out_rows, std::size_t out_cols) {
  if (!idx || idx->size() != out_rows * out_cols)
    throw std::invalid_argument("gather_pad: index length does not match output shape");
  std::vector<double> v(out_rows * out_cols);
  const std::int64_t limit = static_cast<std::int64_t>(x.numel());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::int64_t j = (*idx)[i];
    if (j >= limit)
      throw std::invalid_argument("gather_pad: index " + std::to_string(j) +
                                  " out of range for " +
                                  detail::shape_str(x.rows(), x.cols()));
    v[i] = j < 0 ? 0.0 : x.data()[static_cast<std::size_t>(j)];
  }
  TensorNode* xn = x.node().get();
  return detail::make_op(out_rows, out_cols, std::move(v), {x},
                         [xn, idx](TensorNode& self) {
                           double* gx = detail::grad_buffer(*xn);
                           const double* g = self.grad.data();
                           for (std::size_t i = 0; i < self.numel(); ++i) {
                             const std::int64_t j = (*idx)[i];
                             if (j >= 0) gx[static_cast<std::size_t>(j)] += g[i];
                           }
                         });
}

inline Tensor gather_rows(const Tensor& x, const std::vector<int>& rows) {
  const std::size_t n = x.cols();
  auto idx = std::make_shared<std::vector<std::int64_t>>();
  idx->reserve(rows.size() * n);
  for (int r : rows) {
    if (r < 0 || static_cast<std::size_t>(r) >= x.rows())
      throw std::invalid_argument("gather_rows: row " + std::to_string(r) +
                                  " out of range for " +
                                  detail::shape_str(x.rows(), x.cols()));
    for (std::size_t j = 0; j < n; ++j)
      idx->push_back(static_cast<std::int64_t>(r) * n + j);
  }
  return gather_pad(x, idx, rows.size(), n);
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

inline Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x;
  TensorNode* an = a.node().get();
  return detail::make_op(1, 1, {s}, {a}, [an](TensorNode& self) {
    double* ga = detail::grad_buffer(*an);
    const double g = self.grad[0];
    for (std::size_t i = 0; i < an->numel(); ++i) ga[i] += g;
  });
}

inline Tensor mean_all(const Tensor& a) {
  if (a.numel() == 0) detail::shape_error("mean_all", a);
  double s = 0.0;
  for (double x : a.data()) s += x;
  const double inv = 1.0 / static_cast<double>(a.numel());
  TensorNode* an = a.node().get();
  return detail::make_op(1, 1, {s * inv}, {a}, [an, inv](TensorNode& self) {
    double* ga = detail::grad_buffer(*an);
    const double g = self.grad[0] * inv;
    for (std::size_t i = 0; i < an->numel(); ++i) ga[i] += g;
  });
}

// column means: [m x n] -> [1 x n]
inline Tensor mean_rows(const Tensor& a) {
  if (a.rows() == 0) detail::shape_error("mean_rows", a);
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> v(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) v[j] += a.data()[i * n + j];
  const double inv = 1.0 / static_cast<double>(m);
  for (auto& x : v) x *= inv;
  TensorNode* an = a.node().get();
  return detail::make_op(1, n, std::move(v), {a},
                         [an, m, n, inv](TensorNode& self) {
                           double* ga = detail::grad_buffer(*an);
                           const double* g = self.grad.data();
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < n; ++j)
                               ga[i * n + j] += g[j] * inv;
                         });
}

inline Tensor diag(const Tensor& a) {
  if (a.rows() != a.cols()) detail::shape_error("diag", a);
  const std::size_t n = a.rows();
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = a.data()[i * n + i];
  TensorNode* an = a.node().get();
  return detail::make_op(n, 1, std::move(v), {a},
                         [an, n](TensorNode& self) {
                           double* ga = detail::grad_buffer(*an);
                           const double* g = self.grad.data();
                           for (std::size_t i = 0; i < n; ++i)
                             ga[i * n + i] += g[i];
                         });
}

// ---------------------------------------------------------------------------
// row-wise normalizations
// ---------------------------------------------------------------------------

inline Tensor softmax_rows(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  if (n == 0) detail::shape_error("softmax_rows", a);
  std::vector<double> v(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = a.data().data() + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      v[i * n + j] = std::exp(row[j] - mx);
      z += v[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) v[i * n + j] /= z;
  }
  TensorNode* an = a.node().get();
  return detail::make_op(m, n, std::move(v), {a},
                         [an, m, n](TensorNode& self) {
                           double* ga = detail::grad_buffer(*an);
                           const double* g = self.grad.data();
                           const double* s = self.value.data();
                           for (std::size_t i = 0; i < m; ++i) {
                             double dot = 0.0;
                             for (std::size_t j = 0; j < n; ++j)
                               dot += g[i * n + j] * s[i * n + j];
                             for (std::size_t j = 0; j < n; ++j)
                               ga[i * n + j] +=
                                   s[i * n + j] * (g[i * n + j] - dot);
                           }
                         });
}

inline Tensor log_softmax_rows(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  if (n == 0) detail::shape_error("log_softmax_rows", a);
  std::vector<double> v(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = a.data().data() + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) v[i * n + j] = row[j] - lz;
  }
  TensorNode* an = a.node().get();
  return detail::make_op(m, n, std::move(v), {a},
                         [an, m, n](TensorNode& self) {
                           double* ga = detail::grad_buffer(*an);
                           const double* g = self.grad.data();
                           const double* ls = self.value.data();
                           for (std::size_t i = 0; i < m; ++i) {
                             double gsum = 0.0;
                             for (std::size_t j = 0; j < n; ++j)
                               gsum += g[i * n + j];
                             for (std::size_t j = 0; j < n; ++j)
                               ga[i * n + j] +=
                                   g[i * n + j] -
                                   std::exp(ls[i * n + j]) * gsum;
                           }
                         });
}

inline constexpr double kNormEps = 1e-12;

inline Tensor l2_normalize_rows(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> v(m * n);
  std::vector<double> norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += a.data()[i * n + j] * a.data()[i * n + j];
    const double norm = std::sqrt(s);
    if (norm < kNormEps)
      throw std::invalid_argument(
          "l2_normalize_rows: row " + std::to_string(i) +
          " has near-zero norm " + std::to_string(norm));
    norms[i] = norm;
    for (std::size_t j = 0; j < n; ++j) v[i * n + j] = a.data()[i * n + j] / norm;
  }
  TensorNode* an = a.node().get();
  return detail::make_op(
      m, n, std::move(v), {a}, [an, m, n, norms](TensorNode& self) {
        double* ga = detail::grad_buffer(*an);
        const double* g = self.grad.data();
        const double* u = self.value.data();  // normalized rows
        for (std::size_t i = 0; i < m; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * u[i * n + j];
          for (std::size_t j = 0; j < n; ++j)
            ga[i * n + j] += (g[i * n + j] - u[i * n + j] * dot) / norms[i];
        }
      });
}

// ---------------------------------------------------------------------------
// graph aggregation
// ---------------------------------------------------------------------------

// Directed edge u -> v contributes h[u] with weight w to node v's aggregate:
//   out[v] = sum_u w_uv h[u] / sum_u w_uv   (zero vector if total weight < eps)
// weight_index[e] picks the weight from edge_weights' flat data; -1 means a
// constant weight of 1. edge_weights may be an undefined Tensor when every
// index is -1.
inline constexpr double kNeighborWeightEps = 1e-12;

inline Tensor neighbor_mean(const Tensor& h,
                            const std::vector<std::pair<int, int>>& directed,
                            const Tensor& edge_weights,
                            const std::vector<int>& weight_index) {
  const std::size_t n = h.rows(), d = h.cols();
  if (weight_index.size() != directed.size())
    throw std::invalid_argument(
        "neighbor_mean: weight_index size does not match edge count");
  for (const auto& [u, v] : directed)
    if (u < 0 || v < 0 || static_cast<std::size_t>(u) >= n ||
        static_cast<std::size_t>(v) >= n)
      throw std::invalid_argument("neighbor_mean: edge endpoint out of range");

  const double* w_data = edge_weights.defined() ? edge_weights.data().data() : nullptr;
  auto weight_of = [&](std::size_t e) {
    const int wi = weight_index[e];
    return wi < 0 ? 1.0 : w_data[wi];
  };

  std::vector<double> out(n * d, 0.0);
  auto total_w = std::make_shared<std::vector<double>>(n, 0.0);
  for (std::size_t e = 0; e < directed.size(); ++e) {
    const auto [u, v] = directed[e];
    const double w = weight_of(e);
    (*total_w)[v] += w;
    const double* hu = h.data().data() + static_cast<std::size_t>(u) * d;
    double* ov = out.data() + static_cast<std::size_t>(v) * d;
    for (std::size_t k = 0; k < d; ++k) ov[k] += w * hu[k];
  }
  for (std::size_t v = 0; v < n; ++v) {
    if ((*total_w)[v] < kNeighborWeightEps) {
      std::fill_n(out.data() + v * d, d, 0.0);
    } else {
      const double inv = 1.0 / (*total_w)[v];
      for (std::size_t k = 0; k < d; ++k) out[v * d + k] *= inv;
    }
  }

  TensorNode* hn = h.node().get();
  TensorNode* wn = edge_weights.defined() ? edge_weights.node().get() : nullptr;
  auto edges = std::make_shared<std::vector<std::pair<int, int>>>(directed);
  auto widx = std::make_shared<std::vector<int>>(weight_index);

  Tensor out_t = Tensor::from(n, d, std::move(out));
  const bool rg = h.requires_grad() ||
                  (edge_weights.defined() && edge_weights.requires_grad());
  if (!rg) return out_t;

  out_t.node()->requires_grad = true;
  out_t.node()->parents.push_back(h.node());
  if (edge_weights.defined()) out_t.node()->parents.push_back(edge_weights.node());
  out_t.node()->backward_fn = [hn, wn, edges, widx, total_w, n,
                               d](TensorNode& self) {
    const double* g = self.grad.data();
    const double* out_v = self.value.data();
    double* gh = hn->requires_grad ? detail::grad_buffer(*hn) : nullptr;
    double* gw = (wn != nullptr && wn->requires_grad) ? detail::grad_buffer(*wn)
                                                      : nullptr;
    for (std::size_t e = 0; e < edges->size(); ++e) {
      const auto [u, v] = (*edges)[e];
      const double tw = (*total_w)[v];
      if (tw < kNeighborWeightEps) continue;
      const int wi = (*widx)[e];
      const double w = wi < 0 ? 1.0 : wn->value[wi];
      const double* gv = g + static_cast<std::size_t>(v) * d;
      if (gh != nullptr) {
        double* ghu = gh + static_cast<std::size_t>(u) * d;
        const double scale = w / tw;
        for (std::size_t k = 0; k < d; ++k) ghu[k] += scale * gv[k];
      }
      if (gw != nullptr && wi >= 0) {
        const double* hu = hn->value.data() + static_cast<std::size_t>(u) * d;
        const double* ov = out_v + static_cast<std::size_t>(v) * d;
        double acc = 0.0;
        for (std::size_t k = 0; k < d; ++k) acc += gv[k] * (hu[k] - ov[k]);
        gw[wi] += acc / tw;
      }
    }
  };
  return out_t;
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<TensorNode*> topo_order(TensorNode* root) {
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second)
        stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;  // parents before children
}

}  // namespace detail

// Propagates `seed` (dL/droot) through the tape. Leaf gradients accumulate
// additively across calls; interior gradients are scratch and reset per call.
inline void backward_seeded(const Tensor& root, const std::vector<double>& seed,
                            ParamGradMap* param_sink = nullptr) {
  if (!root.requires_grad())
    throw std::invalid_argument(
        "backward: root does not require gradients (no tape recorded)");
  if (seed.size() != root.numel())
    throw std::invalid_argument("backward: seed size does not match root");

  auto order = detail::topo_order(root.node().get());
  // interior (non-leaf) grads are cleared so repeated calls do not leak
  // contributions from prior passes
  for (TensorNode* n : order)
    if (!n->parents.empty() || n == root.node().get()) {
      n->ensure_grad();
      if (!n->parents.empty()) std::fill(n->grad.begin(), n->grad.end(), 0.0);
    }

  detail::t_param_sink = param_sink;
  {
    double* gr = detail::grad_buffer(*root.node());
    for (std::size_t i = 0; i < seed.size(); ++i) gr[i] += seed[i];
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
  detail::t_param_sink = nullptr;
}

inline void backward(const Tensor& loss, ParamGradMap* param_sink = nullptr) {
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                detail::shape_str(loss.rows(), loss.cols()));
  backward_seeded(loss, {1.0}, param_sink);
}

// ---------------------------------------------------------------------------
// sampling
// ---------------------------------------------------------------------------

// n i.i.d. standard Gumbel draws as an [n x 1] constant tensor.
inline Tensor gumbel_sample(Rng& rng, std::size_t n) {
  if (n == 0) throw std::invalid_argument("gumbel_sample: n must be >= 1");
  Tensor t(n, 1);
  for (auto& v : t.data()) v = rng.gumbel();
  return t;
}

}  // namespace sigmma
