#pragma once

// Dense f64 tensors with tape-based reverse-mode differentiation.
//
// Operations record a backward closure on the thread's active GradTape when
// at least one input requires a gradient. With no active tape the same calls
// run as plain inference and nothing is retained.
//
//   GradTape tape;
//   Tensor loss;
//   {
//     TapeScope scope(tape);
//     loss = mean(abs(sub(model(x), y)));
//   }
//   tape.backward(loss);

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace handlift {
class CounterRng;
}

namespace handlift::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something is accumulated
  bool requires_grad = false;

  // Zero-initialised on first use.
  std::span<double> grad_buffer();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  // Negative indices count from the back.
  std::size_t dim(int axis) const;
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  double item() const;
  double operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  // Empty span when no gradient has been accumulated and none was allocated.
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad();

  // Same values, no gradient tracking.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend Tensor make_result(Shape shape, std::vector<double> values);

  std::shared_ptr<detail::Node> node_;
};

// Boolean mask broadcast over the leading dimensions of the tensor it is
// applied to; `shape` must be a suffix of that tensor's shape.
struct Mask {
  Shape shape;
  std::vector<std::uint8_t> keep;  // nonzero = position participates
};

class GradTape {
 public:
  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Throws on a
  // non-scalar loss, a loss not connected to this tape, or a second call
  // before reset().
  void backward(const Tensor& loss);

  // Drops recorded operations. Leaf gradients are left untouched.
  void reset();

  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

  void record(std::function<void()> backward_fn);

 private:
  std::vector<std::function<void()>> entries_;
  bool consumed_ = false;
};

// Makes `tape` the active tape of the current thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(GradTape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradTape* previous_;
};

GradTape* active_tape();

// Elementwise; the smaller operand's shape must be a suffix of the larger's.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

// [.., m, k] x [.., k, n]. Leading dims must match or one side must be 2-D.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose_last2(const Tensor& x);

// x [.., in] * weight[out, in]^T + bias[out]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Softmax over the last axis, max-subtracted. Masked-out entries are exactly
// zero and receive zero gradient. A row with every entry masked throws.
Tensor softmax_lastdim(const Tensor& x, const Mask* mask = nullptr);

// Positions where mask.keep == 0 are replaced by `value`.
Tensor masked_fill(const Tensor& x, const Mask& mask, double value);

inline constexpr double kLayerNormEps = 1e-5;
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = kLayerNormEps);

// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor abs(const Tensor& x);

// Inverted dropout. Identity when !training or p == 0. Requires 0 <= p < 1.
Tensor dropout(const Tensor& x, double p, bool training, CounterRng& rng);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);

// [.., J, D] -> [.., H, J, D/H] and back.
Tensor split_heads(const Tensor& x, std::size_t heads);
Tensor merge_heads(const Tensor& x);

// rows[i] = table[index[i]]; table is [K, D].
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> index);

}  // namespace handlift::ad
