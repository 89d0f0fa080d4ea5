#ifndef RATEATTACK_TENSOR_H_
#define RATEATTACK_TENSOR_H_

// Dense tensors with a tape-based reverse-mode differentiator. Only the
// primitives needed by the DCT-Net rate loss are provided; anything heavier
// is registered by its owning module through Tape::Record.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rateattack {

using Shape = std::vector<std::size_t>;

std::size_t NumElements(const Shape& shape);
std::string ShapeString(const Shape& shape);

// Contiguous row-major storage. Rank 0 (empty shape) holds a single scalar.
class Tensor {
 public:
  Tensor() : shape_{0} {}
  Tensor(Shape shape, std::vector<double> data);

  static Tensor Zeros(Shape shape);
  static Tensor Full(Shape shape, double value);
  static Tensor Scalar(double value);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::span<const double> data() const { return data_; }
  std::span<double> mutable_data() { return data_; }
  std::vector<double>&& release() && { return std::move(data_); }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  // Convenience for rank-0 / single-element tensors.
  double item() const;

  Tensor Reshaped(Shape shape) const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape
// is alive.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Given the upstream gradient of a node's output, returns one gradient per
// input (same order as recorded). Entries for inputs that do not require a
// gradient may be left empty (size 0).
using BackwardFn = std::function<std::vector<Tensor>(const Tensor& upstream)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var Leaf(Tensor value, bool requires_grad = true);
  Var Constant(Tensor value) { return Leaf(std::move(value), false); }

  // Appends an op node. `op` names the primitive in error messages. The
  // forward value is checked for finiteness here, so every op reports NaN/Inf
  // at the point it is produced.
  Var Record(std::string_view op, Tensor value, std::vector<Var> inputs,
             BackwardFn backward);

  // Reverse sweep from a single-element output. Returns the number of op
  // nodes whose backward function ran.
  std::size_t Backward(Var output);

  const Tensor& value(Var v) const;
  // Gradient accumulated by the last Backward(); zeros if `v` was not reached.
  Tensor grad(Var v) const;
  bool requires_grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::string op;
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  Var Push(Node node);

  std::vector<Node> nodes_;
};

// Elementwise binary ops broadcast numpy-style (trailing alignment, size-1
// dimensions expand).
Var Add(Var a, Var b);
Var Sub(Var a, Var b);
Var Mul(Var a, Var b);
Var Div(Var a, Var b);
Var MatMul(Var a, Var b);  // [m,k] x [k,n]
Var Sum(Var a);
Var Mean(Var a);
Var Neg(Var a);
Var Log2(Var a);
Var Tanh(Var a);
Var Sigmoid(Var a);
Var Softplus(Var a);
Var Abs(Var a);
// Zero gradient where the floor is active (a < floor).
Var ClampMin(Var a, double floor);
Var AddScalar(Var a, double s);
Var MulScalar(Var a, double s);
Var Reshape(Var a, Shape shape);

// Round half away from zero forward, identity backward.
Var RoundSte(Var a);
// a + u with u ~ U(-1/2, 1/2) drawn from `seed`; identity backward.
Var AddUniformNoise(Var a, std::uint64_t seed);

inline Var operator+(Var a, Var b) { return Add(a, b); }
inline Var operator-(Var a, Var b) { return Sub(a, b); }
inline Var operator*(Var a, Var b) { return Mul(a, b); }
inline Var operator/(Var a, Var b) { return Div(a, b); }
inline Var operator-(Var a) { return Neg(a); }

// Element-wise round half away from zero (std::round semantics).
double RoundHalfAway(double x);

// Deterministic U(-1/2, 1/2) samples; open interval on both ends.
std::vector<double> UniformNoise(std::size_t n, std::uint64_t seed);

using ScalarFunction = std::function<Var(Var)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  Tensor analytic;
  Tensor numeric;
};

// Compares the tape gradient of f at x with central differences of step h.
// Error per element is |a - n| / max(|a|, |n|, 1e-8).
GradCheckResult GradCheck(const ScalarFunction& f, const Tensor& x, double h);

}  // namespace rateattack

#endif  // RATEATTACK_TENSOR_H_
