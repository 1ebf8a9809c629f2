#include "handlift/autodiff.hpp"

#include "handlift/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace handlift::ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using Index = Eigen::Index;

thread_local GradTape* g_active_tape = nullptr;

using NodePtr = std::shared_ptr<detail::Node>;

Index idx(std::size_t n) { return static_cast<Index>(n); }

ConstMatrixMap cmap(const double* data, std::size_t rows, std::size_t cols) {
  return ConstMatrixMap(data, idx(rows), idx(cols));
}
MatrixMap mmap(double* data, std::size_t rows, std::size_t cols) { return MatrixMap(data, idx(rows), idx(cols)); }

bool is_suffix(const Shape& small, const Shape& large) {
  if (small.size() > large.size()) return false;
  return std::equal(small.rbegin(), small.rend(), large.rbegin());
}

// Records `fn(out_node)` when a tape is active and some input needs a gradient.
template <class Fn>
void record(const Tensor& out, std::initializer_list<const Tensor*> inputs, Fn&& fn) {
  GradTape* tape = g_active_tape;
  if (tape == nullptr) return;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor* t) { return t->defined() && t->requires_grad(); });
  if (!any) return;
  out.node()->requires_grad = true;
  tape->record([o = out.node(), f = std::forward<Fn>(fn)]() {
    if (o->grad.empty()) return;
    f(*o);
  });
}

// Eigen's GEMM routes rows through different micro-kernels depending on their
// position, so a row's result can change in the last bits with the batch it
// sits in. Rows are fed in whole blocks (the tail via a zero-padded copy) so
// every row takes the same path and equal rows give equal results.
constexpr std::size_t kRowBlock = 48;

template <class Rhs>
void row_stable_product(double* out, const double* a, std::size_t rows, std::size_t k, std::size_t n,
                        const Rhs& rhs) {
  const std::size_t main = rows - rows % kRowBlock;
  if (main > 0) mmap(out, main, n).noalias() = cmap(a, main, k) * rhs;
  if (const std::size_t rest = rows - main; rest > 0) {
    RowMatrix pad = RowMatrix::Zero(idx(kRowBlock), idx(k));
    pad.topRows(idx(rest)) = cmap(a + main * k, rest, k);
    const RowMatrix prod = pad * rhs;
    mmap(out + main * n, rest, n) = prod.topRows(idx(rest));
  }
}

// Vectorised exp applies one algorithm per lane but falls back to std::exp for
// a ragged tail; padding every chunk to whole packets keeps the result of an
// entry independent of where it sits in the buffer.
constexpr std::size_t kChunk = 2048;
using ChunkArray = Eigen::Array<double, Eigen::Dynamic, 1, 0, kChunk, 1>;

Index padded(std::size_t len) {
  constexpr std::size_t packet = 16;
  return idx((len + packet - 1) / packet * packet);
}

void exp_inplace(std::span<double> v) {
  ChunkArray buf;
  for (std::size_t s = 0; s < v.size(); s += kChunk) {
    const std::size_t len = std::min(kChunk, v.size() - s);
    buf.setZero(padded(len));
    buf.head(idx(len)) = Eigen::Map<const Eigen::ArrayXd>(v.data() + s, idx(len));
    buf = buf.exp();
    Eigen::Map<Eigen::ArrayXd>(v.data() + s, idx(len)) = buf.head(idx(len));
  }
}

// Gradient buffer of an input, or an empty span when it is not tracked.
std::span<double> accum(const NodePtr& n) {
  if (!n || !n->requires_grad) return {};
  return n->grad_buffer();
}

}  // namespace

Tensor make_result(Shape shape, std::vector<double> values) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return Tensor(std::move(node));
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::span<double> detail::Node::grad_buffer() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

// ---------------------------------------------------------------- Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from_values(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor: shape " + shape_string(shape) + " does not hold " + std::to_string(values.size()) +
                     " values");
  }
  Tensor t = make_result(std::move(shape), std::move(values));
  t.node_->requires_grad = requires_grad;
  if (requires_grad) t.node_->grad_buffer();
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from_values({}, {value}, requires_grad); }

std::size_t Tensor::dim(int axis) const {
  const auto r = static_cast<int>(rank());
  const int a = axis < 0 ? r + axis : axis;
  if (a < 0 || a >= r) throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for " + shape_string(shape()));
  return node_->shape[static_cast<std::size_t>(a)];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_string(shape()) + " is not a scalar");
  return node_->value[0];
}

void Tensor::zero_grad() {
  if (node_->requires_grad) {
    node_->grad.assign(node_->value.size(), 0.0);
  } else {
    node_->grad.clear();
  }
}

Tensor Tensor::detach() const { return make_result(node_->shape, node_->value); }

// ---------------------------------------------------------------- tape

void GradTape::record(std::function<void()> backward_fn) {
  if (consumed_) throw std::logic_error("grad tape: recording onto a tape that was already replayed; call reset()");
  entries_.push_back(std::move(backward_fn));
}

void GradTape::backward(const Tensor& loss) {
  if (consumed_) throw std::logic_error("backward: tape already replayed; call reset() before a second backward");
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + (loss.defined() ? shape_string(loss.shape()) : "undefined"));
  }
  if (!loss.requires_grad()) throw std::logic_error("backward: loss is not connected to any recorded operation");
  loss.node()->grad_buffer()[0] = 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  consumed_ = true;
}

void GradTape::reset() {
  entries_.clear();
  consumed_ = false;
}

TapeScope::TapeScope(GradTape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

GradTape* active_tape() { return g_active_tape; }

// ---------------------------------------------------------------- elementwise

namespace {

struct Broadcast {
  const Tensor* big;
  const Tensor* small;
  bool swapped;
};

Broadcast broadcast_pair(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return {&a, &b, false};
  if (is_suffix(b.shape(), a.shape())) return {&a, &b, false};
  if (is_suffix(a.shape(), b.shape())) return {&b, &a, true};
  throw ShapeError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) +
                   " are not broadcast-compatible");
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const auto bc = broadcast_pair(a, b, "add");
  const auto& big = bc.big->values();
  const auto& small = bc.small->values();
  const std::size_t n = big.size(), m = small.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; i += m) {
    for (std::size_t j = 0; j < m; ++j) out[i + j] = big[i + j] + small[j];
  }
  Tensor r = make_result(bc.big->shape(), std::move(out));
  record(r, {&a, &b}, [bn = bc.big->node(), sn = bc.small->node(), n, m](detail::Node& o) {
    if (auto g = accum(bn); !g.empty()) {
      for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[i];
    }
    if (auto g = accum(sn); !g.empty()) {
      for (std::size_t i = 0; i < n; i += m) {
        for (std::size_t j = 0; j < m; ++j) g[j] += o.grad[i + j];
      }
    }
  });
  return r;
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
  const auto bc = broadcast_pair(a, b, "mul");
  const auto& big = bc.big->values();
  const auto& small = bc.small->values();
  const std::size_t n = big.size(), m = small.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; i += m) {
    for (std::size_t j = 0; j < m; ++j) out[i + j] = big[i + j] * small[j];
  }
  Tensor r = make_result(bc.big->shape(), std::move(out));
  record(r, {&a, &b}, [bn = bc.big->node(), sn = bc.small->node(), n, m](detail::Node& o) {
    if (auto g = accum(bn); !g.empty()) {
      for (std::size_t i = 0; i < n; i += m) {
        for (std::size_t j = 0; j < m; ++j) g[i + j] += o.grad[i + j] * sn->value[j];
      }
    }
    if (auto g = accum(sn); !g.empty()) {
      for (std::size_t i = 0; i < n; i += m) {
        for (std::size_t j = 0; j < m; ++j) g[j] += o.grad[i + j] * bn->value[i + j];
      }
    }
  });
  return r;
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (auto& v : out) v *= factor;
  Tensor r = make_result(x.shape(), std::move(out));
  record(r, {&x}, [xn = x.node(), factor](detail::Node& o) {
    auto g = accum(xn);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * o.grad[i];
  });
  return r;
}

// ---------------------------------------------------------------- matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError("matmul: operands must have rank >= 2, got " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  const std::size_t m = a.dim(-2), k = a.dim(-1), k2 = b.dim(-2), n = b.dim(-1);
  const Shape lead_a(a.shape().begin(), a.shape().end() - 2);
  const Shape lead_b(b.shape().begin(), b.shape().end() - 2);
  if (k != k2 || (!lead_a.empty() && !lead_b.empty() && lead_a != lead_b)) {
    throw ShapeError("matmul: incompatible shapes " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Shape out_shape = lead_a.empty() ? lead_b : lead_a;
  const std::size_t batch = shape_numel(out_shape);
  out_shape.push_back(m);
  out_shape.push_back(n);
  const std::size_t sa = lead_a.empty() ? 0 : m * k;
  const std::size_t sb = lead_b.empty() ? 0 : k * n;

  std::vector<double> out(batch * m * n);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  if (sb == 0) {
    // Fold the batch into the row dimension: one large product.
    const std::size_t rows = (sa == 0 ? 1 : batch) * m;
    row_stable_product(out.data(), av, rows, k, n, cmap(bv, k, n));
    if (sa == 0) {
      for (std::size_t i = 1; i < batch; ++i) std::copy_n(out.data(), m * n, out.data() + i * m * n);
    }
  } else {
    for (std::size_t i = 0; i < batch; ++i) {
      mmap(out.data() + i * m * n, m, n).noalias() = cmap(av + i * sa, m, k) * cmap(bv + i * sb, k, n);
    }
  }
  Tensor r = make_result(std::move(out_shape), std::move(out));
  record(r, {&a, &b}, [an = a.node(), bn = b.node(), batch, m, k, n, sa, sb](detail::Node& o) {
    const double* dc = o.grad.data();
    if (auto ga = accum(an); !ga.empty()) {
      if (sb == 0 && sa != 0) {
        mmap(ga.data(), batch * m, k).noalias() += cmap(dc, batch * m, n) * cmap(bn->value.data(), k, n).transpose();
      } else {
        for (std::size_t i = 0; i < batch; ++i) {
          mmap(ga.data() + i * sa, m, k).noalias() +=
              cmap(dc + i * m * n, m, n) * cmap(bn->value.data() + i * sb, k, n).transpose();
        }
      }
    }
    if (auto gb = accum(bn); !gb.empty()) {
      if (sb == 0 && sa != 0) {
        mmap(gb.data(), k, n).noalias() += cmap(an->value.data(), batch * m, k).transpose() * cmap(dc, batch * m, n);
      } else {
        for (std::size_t i = 0; i < batch; ++i) {
          mmap(gb.data() + i * sb, k, n).noalias() +=
              cmap(an->value.data() + i * sa, m, k).transpose() * cmap(dc + i * m * n, m, n);
        }
      }
    }
  });
  return r;
}

Tensor transpose_last2(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("transpose_last2: rank < 2 for " + shape_string(x.shape()));
  const std::size_t m = x.dim(-2), n = x.dim(-1), batch = x.numel() / std::max<std::size_t>(m * n, 1);
  Shape shape = x.shape();
  std::swap(shape[shape.size() - 2], shape[shape.size() - 1]);
  std::vector<double> out(x.numel());
  for (std::size_t b = 0; b < batch; ++b) {
    mmap(out.data() + b * m * n, n, m) = cmap(x.values().data() + b * m * n, m, n).transpose();
  }
  Tensor r = make_result(std::move(shape), std::move(out));
  record(r, {&x}, [xn = x.node(), batch, m, n](detail::Node& o) {
    auto g = accum(xn);
    for (std::size_t b = 0; b < batch; ++b) {
      mmap(g.data() + b * m * n, m, n) += cmap(o.grad.data() + b * m * n, n, m).transpose();
    }
  });
  return r;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2 || x.rank() < 1 || x.dim(-1) != weight.dim(1)) {
    throw ShapeError("linear: input " + shape_string(x.shape()) + " incompatible with weight " +
                     shape_string(weight.shape()));
  }
  const std::size_t in = weight.dim(1), outf = weight.dim(0), rows = x.numel() / in;
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != outf)) {
    throw ShapeError("linear: bias " + shape_string(bias.shape()) + " does not match weight " +
                     shape_string(weight.shape()));
  }
  Shape shape = x.shape();
  shape.back() = outf;
  std::vector<double> out(rows * outf);
  row_stable_product(out.data(), x.values().data(), rows, in, outf,
                     cmap(weight.values().data(), outf, in).transpose());
  auto y = mmap(out.data(), rows, outf);
  if (bias.defined()) {
    y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.values().data(), idx(outf));
  }
  Tensor r = make_result(std::move(shape), std::move(out));
  record(r, {&x, &weight, &bias},
         [xn = x.node(), wn = weight.node(), bn = bias.node(), rows, in, outf](detail::Node& o) {
           const auto dy = cmap(o.grad.data(), rows, outf);
           if (auto g = accum(xn); !g.empty()) {
             mmap(g.data(), rows, in).noalias() += dy * cmap(wn->value.data(), outf, in);
           }
           if (auto g = accum(wn); !g.empty()) {
             mmap(g.data(), outf, in).noalias() += dy.transpose() * cmap(xn->value.data(), rows, in);
           }
           if (auto g = accum(bn); !g.empty()) {
             // Rows are summed in order; Eigen's column reduction regroups
             // terms with the buffer's alignment.
             std::vector<double> total(outf, 0.0);
             const double* d = o.grad.data();
             for (std::size_t r = 0; r < rows; ++r)
               for (std::size_t j = 0; j < outf; ++j) total[j] += d[r * outf + j];
             for (std::size_t j = 0; j < outf; ++j) g[j] += total[j];
           }
         });
  return r;
}

// ---------------------------------------------------------------- softmax / masks

namespace {

void check_mask(const Tensor& x, const Mask& mask, const char* op) {
  if (!is_suffix(mask.shape, x.shape()) || shape_numel(mask.shape) != mask.keep.size() || mask.keep.empty()) {
    throw ShapeError(std::string(op) + ": mask " + shape_string(mask.shape) + " does not broadcast to " +
                     shape_string(x.shape()));
  }
}

}  // namespace

Tensor softmax_lastdim(const Tensor& x, const Mask* mask) {
  if (x.rank() < 1) throw ShapeError("softmax_lastdim: scalar input");
  if (mask) check_mask(x, *mask, "softmax_lastdim");
  const std::size_t n = x.dim(-1), rows = x.numel() / n;
  const std::size_t mn = mask ? mask->keep.size() : 0;
  const auto& xv = x.values();
  // Shift every row by its (unmasked) maximum, exponentiate in one pass, then
  // zero the masked entries and normalise.
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * n;
    const std::uint8_t* keep = mask ? mask->keep.data() + (base % mn) : nullptr;
    double mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) {
      if (!keep || keep[j]) mx = std::max(mx, xv[base + j]);
    }
    if (mx == -INFINITY) {
      throw std::invalid_argument("softmax_lastdim: row " + std::to_string(r) + " is fully masked");
    }
    for (std::size_t j = 0; j < n; ++j) out[base + j] = (!keep || keep[j]) ? xv[base + j] - mx : 0.0;
  }
  exp_inplace(out);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * n;
    const std::uint8_t* keep = mask ? mask->keep.data() + (base % mn) : nullptr;
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (keep && !keep[j]) {
        out[base + j] = 0.0;
      } else {
        total += out[base + j];
      }
    }
    const double inv = 1.0 / total;
    for (std::size_t j = 0; j < n; ++j) out[base + j] *= inv;
  }
  Tensor r = make_result(x.shape(), std::move(out));
  record(r, {&x}, [xn = x.node(), rows, n](detail::Node& o) {
    auto g = accum(xn);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = o.value.data() + r * n;
      const double* dy = o.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += y[j] * dy[j];
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += y[j] * (dy[j] - dot);
    }
  });
  return r;
}

Tensor masked_fill(const Tensor& x, const Mask& mask, double value) {
  check_mask(x, mask, "masked_fill");
  const std::size_t mn = mask.keep.size();
  std::vector<double> out(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!mask.keep[i % mn]) out[i] = value;
  }
  Tensor r = make_result(x.shape(), std::move(out));
  record(r, {&x}, [xn = x.node(), keep = mask.keep](detail::Node& o) {
    auto g = accum(xn);
    const std::size_t mn = keep.size();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (keep[i % mn]) g[i] += o.grad[i];
    }
  });
  return r;
}

// ---------------------------------------------------------------- layer norm

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t d = x.dim(-1);
  if (gain.numel() != d || bias.numel() != d) {
    throw ShapeError("layer_norm: gain/bias " + shape_string(gain.shape()) + "/" + shape_string(bias.shape()) +
                     " do not match last dim of " + shape_string(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  const auto& xv = x.values();
  const auto& gv = gain.values();
  const auto& bv = bias.values();
  std::vector<double> out(x.numel());
  // Normalised input and inverse std are kept for the backward pass.
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * inv;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  Tensor r = make_result(x.shape(), std::move(out));
  record(r, {&x, &gain, &bias}, [xn = x.node(), gn = gain.node(), bn = bias.node(), xhat, rstd, rows, d](detail::Node& o) {
    auto gx = accum(xn);
    auto gg = accum(gn);
    auto gb = accum(bn);
    const double inv_d = 1.0 / static_cast<double>(d);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* dy = o.grad.data() + r * d;
      const double* h = xhat->data() + r * d;
      if (!gg.empty()) {
        for (std::size_t j = 0; j < d; ++j) gg[j] += dy[j] * h[j];
      }
      if (!gb.empty()) {
        for (std::size_t j = 0; j < d; ++j) gb[j] += dy[j];
      }
      if (!gx.empty()) {
        double mean_dh = 0.0, mean_dh_h = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double dh = dy[j] * gn->value[j];
          mean_dh += dh;
          mean_dh_h += dh * h[j];
        }
        mean_dh *= inv_d;
        mean_dh_h *= inv_d;
        for (std::size_t j = 0; j < d; ++j) {
          const double dh = dy[j] * gn->value[j];
          gx[r * d + j] += (*rstd)[r] * (dh - mean_dh - h[j] * mean_dh_h);
        }
      }
    }
  });
  return r;
}

// ---------------------------------------------------------------- activations

namespace {

constexpr double kGeluC = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);

template <class F, class DF>
Tensor unary(const Tensor& x, F f, DF df) {
  std::vector<double> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  Tensor r = make_result(x.shape(), std::move(out));
  record(r, {&x}, [xn = x.node(), df](detail::Node& o) {
    auto g = accum(xn);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * df(xn->value[i]);
  });
  return r;
}

}  // namespace

Tensor gelu(const Tensor& x) {
  // tanh(u) is formed from e = exp(-2|u|) so the pass vectorises; chunks keep
  // the temporaries in cache and are padded like exp_inplace.
  const std::size_t n = x.numel();
  auto t = std::make_shared<std::vector<double>>(n);
  std::vector<double> out(n);
  ChunkArray xin, u, e, tv;
  for (std::size_t s = 0; s < n; s += kChunk) {
    const std::size_t len = std::min(kChunk, n - s);
    xin.setZero(padded(len));
    xin.head(idx(len)) = Eigen::Map<const Eigen::ArrayXd>(x.values().data() + s, idx(len));
    u = kSqrt2OverPi * (xin + kGeluC * xin.cube());
    e = (-2.0 * u.abs()).exp();
    tv = ((1.0 - e) / (1.0 + e)) * u.sign();
    Eigen::Map<Eigen::ArrayXd>(t->data() + s, idx(len)) = tv.head(idx(len));
    Eigen::Map<Eigen::ArrayXd>(out.data() + s, idx(len)) = (0.5 * xin * (1.0 + tv)).head(idx(len));
  }
  Tensor r = make_result(x.shape(), std::move(out));
  record(r, {&x}, [xn = x.node(), t, n](detail::Node& o) {
    auto g = accum(xn);
    const auto xv = Eigen::Map<const Eigen::ArrayXd>(xn->value.data(), idx(n));
    const auto tv = Eigen::Map<const Eigen::ArrayXd>(t->data(), idx(n));
    const auto dy = Eigen::Map<const Eigen::ArrayXd>(o.grad.data(), idx(n));
    Eigen::Map<Eigen::ArrayXd>(g.data(), idx(n)) +=
        dy * (0.5 * (1.0 + tv) + 0.5 * xv * (1.0 - tv * tv) * kSqrt2OverPi * (1.0 + 3.0 * kGeluC * xv.square()));
  });
  return r;
}

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, [](double v) { return std::fabs(v); },
      [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor dropout(const Tensor& x, double p, bool training, CounterRng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout: rate must lie in [0, 1)");
  if (!training || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  // Each 64-bit draw decides two entries: an entry is dropped when its 32-bit
  // half falls below p * 2^32.
  const auto threshold = static_cast<std::uint64_t>(std::ldexp(p, 32));
  const std::size_t n = x.numel();
  std::vector<std::uint64_t> bits((n + 1) / 2);
  rng.fill(bits);
  auto factor = std::make_shared<std::vector<double>>(n);
  std::vector<double> out(n);
  const double* xv = x.values().data();
  double* f = factor->data();
  double* o = out.data();
  for (std::size_t k = 0; k < n / 2; ++k) {
    f[2 * k] = (bits[k] & 0xFFFFFFFFu) < threshold ? 0.0 : keep_scale;
    f[2 * k + 1] = (bits[k] >> 32) < threshold ? 0.0 : keep_scale;
  }
  if (n % 2) f[n - 1] = (bits[n / 2] & 0xFFFFFFFFu) < threshold ? 0.0 : keep_scale;
  for (std::size_t i = 0; i < n; ++i) o[i] = xv[i] * f[i];
  Tensor r = make_result(x.shape(), std::move(out));
  record(r, {&x}, [xn = x.node(), factor](detail::Node& o) {
    auto g = accum(xn);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * (*factor)[i];
  });
  return r;
}

// ---------------------------------------------------------------- reductions / layout

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  Tensor r = make_result({}, {total});
  record(r, {&x}, [xn = x.node()](detail::Node& o) {
    auto g = accum(xn);
    for (auto& v : g) v += o.grad[0];
  });
  return r;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  Tensor r = make_result(std::move(shape), std::vector<double>(x.values().begin(), x.values().end()));
  record(r, {&x}, [xn = x.node()](detail::Node& o) {
    auto g = accum(xn);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
  return r;
}

Tensor split_heads(const Tensor& x, std::size_t heads) {
  if (x.rank() < 2 || heads == 0 || x.dim(-1) % heads != 0) {
    throw ShapeError("split_heads: " + shape_string(x.shape()) + " not divisible into " + std::to_string(heads) +
                     " heads");
  }
  const std::size_t j = x.dim(-2), d = x.dim(-1), dk = d / heads, batch = x.numel() / (j * d);
  Shape shape(x.shape().begin(), x.shape().end() - 2);
  shape.insert(shape.end(), {heads, j, dk});
  std::vector<double> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < j; ++t)
      for (std::size_t h = 0; h < heads; ++h)
        std::copy_n(xv.data() + (b * j + t) * d + h * dk, dk, out.data() + ((b * heads + h) * j + t) * dk);
  Tensor r = make_result(std::move(shape), std::move(out));
  record(r, {&x}, [xn = x.node(), batch, j, d, dk, heads](detail::Node& o) {
    auto g = accum(xn);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t t = 0; t < j; ++t)
        for (std::size_t h = 0; h < heads; ++h) {
          const double* src = o.grad.data() + ((b * heads + h) * j + t) * dk;
          double* dst = g.data() + (b * j + t) * d + h * dk;
          for (std::size_t c = 0; c < dk; ++c) dst[c] += src[c];
        }
  });
  return r;
}

Tensor merge_heads(const Tensor& x) {
  if (x.rank() < 3) throw ShapeError("merge_heads: expected [.., H, J, dk], got " + shape_string(x.shape()));
  const std::size_t heads = x.dim(-3), j = x.dim(-2), dk = x.dim(-1), d = heads * dk;
  const std::size_t batch = x.numel() / (heads * j * dk);
  Shape shape(x.shape().begin(), x.shape().end() - 3);
  shape.insert(shape.end(), {j, d});
  std::vector<double> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < j; ++t)
        std::copy_n(xv.data() + ((b * heads + h) * j + t) * dk, dk, out.data() + (b * j + t) * d + h * dk);
  Tensor r = make_result(std::move(shape), std::move(out));
  record(r, {&x}, [xn = x.node(), batch, j, d, dk, heads](detail::Node& o) {
    auto g = accum(xn);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t t = 0; t < j; ++t) {
          const double* src = o.grad.data() + (b * j + t) * d + h * dk;
          double* dst = g.data() + ((b * heads + h) * j + t) * dk;
          for (std::size_t c = 0; c < dk; ++c) dst[c] += src[c];
        }
  });
  return r;
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> index) {
  if (table.rank() != 2) throw ShapeError("gather_rows: table must be 2-D, got " + shape_string(table.shape()));
  const std::size_t k = table.dim(0), d = table.dim(1);
  std::vector<double> out(index.size() * d);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= k) throw std::out_of_range("gather_rows: index " + std::to_string(index[i]) + " >= " + std::to_string(k));
    std::copy_n(table.values().data() + index[i] * d, d, out.data() + i * d);
  }
  Tensor r = make_result({index.size(), d}, std::move(out));
  record(r, {&table}, [tn = table.node(), idxs = std::vector<std::size_t>(index.begin(), index.end()), d](detail::Node& o) {
    auto g = accum(tn);
    for (std::size_t i = 0; i < idxs.size(); ++i)
      for (std::size_t c = 0; c < d; ++c) g[idxs[i] * d + c] += o.grad[i * d + c];
  });
  return r;
}

}  // namespace handlift::ad
