#include "rateattack/tensor.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <utility>

#include "rateattack/error.h"

namespace rateattack {

std::size_t NumElements(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string ShapeString(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (NumElements(shape_) != data_.size()) {
    throw Error(ErrorCode::kShapeMismatch,
                "shape " + ShapeString(shape_) + " needs " +
                    std::to_string(NumElements(shape_)) + " values, got " +
                    std::to_string(data_.size()));
  }
}

Tensor Tensor::Zeros(Shape shape) { return Full(std::move(shape), 0.0); }

Tensor Tensor::Full(Shape shape, double value) {
  const std::size_t n = NumElements(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::Scalar(double value) { return Tensor({}, {value}); }

double Tensor::item() const {
  if (data_.size() != 1) {
    throw Error(ErrorCode::kShapeMismatch,
                "item() on tensor of shape " + ShapeString(shape_));
  }
  return data_[0];
}

Tensor Tensor::Reshaped(Shape shape) const {
  if (NumElements(shape) != data_.size()) {
    throw Error(ErrorCode::kShapeMismatch, "cannot reshape " +
                                               ShapeString(shape_) + " to " +
                                               ShapeString(shape));
  }
  return Tensor(std::move(shape), data_);
}

const Tensor& Var::value() const { return tape->value(*this); }

// ---------------------------------------------------------------------------
// Tape

Var Tape::Push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::Leaf(Tensor value, bool requires_grad) {
  Node node;
  node.op = "leaf";
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  return Push(std::move(node));
}

Var Tape::Record(std::string_view op, Tensor value, std::vector<Var> inputs,
                 BackwardFn backward) {
  for (double v : value.data()) {
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::kNonFinite,
                  "op '" + std::string(op) + "' produced a non-finite value");
    }
  }
  Node node;
  node.op = std::string(op);
  node.value = std::move(value);
  for (const Var& in : inputs) {
    if (in.tape != this) {
      throw Error(ErrorCode::kInvalidArgument,
                  "op '" + node.op + "' mixes variables from different tapes");
    }
    node.inputs.push_back(in.id);
    node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  return Push(std::move(node));
}

const Tensor& Tape::value(Var v) const { return nodes_.at(v.id).value; }

bool Tape::requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

Tensor Tape::grad(Var v) const {
  const Node& node = nodes_.at(v.id);
  if (node.has_grad) return node.grad;
  return Tensor::Zeros(node.value.shape());
}

std::size_t Tape::Backward(Var output) {
  if (output.tape != this) {
    throw Error(ErrorCode::kInvalidArgument, "Backward on a foreign variable");
  }
  for (Node& node : nodes_) {
    node.has_grad = false;
    node.grad = Tensor();
  }
  Node& root = nodes_.at(output.id);
  if (root.value.size() != 1) {
    throw Error(ErrorCode::kShapeMismatch,
                "Backward needs a single-element output, got " +
                    ShapeString(root.value.shape()));
  }
  root.grad = Tensor::Full(root.value.shape(), 1.0);
  root.has_grad = true;

  std::size_t visited = 0;
  for (std::size_t i = output.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.has_grad || !node.backward) continue;
    std::vector<Tensor> input_grads = node.backward(node.grad);
    ++visited;
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      if (k >= input_grads.size() || input_grads[k].size() == 0) continue;
      Node& in = nodes_[node.inputs[k]];
      if (!in.requires_grad) continue;
      if (input_grads[k].shape() != in.value.shape()) {
        throw Error(ErrorCode::kShapeMismatch,
                    "backward of '" + node.op + "' returned gradient " +
                        ShapeString(input_grads[k].shape()) + " for input " +
                        ShapeString(in.value.shape()));
      }
      if (!in.has_grad) {
        in.grad = std::move(input_grads[k]);
        in.has_grad = true;
      } else {
        auto dst = in.grad.mutable_data();
        auto src = input_grads[k].data();
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
      }
    }
  }
  return visited;
}

// ---------------------------------------------------------------------------
// Broadcasting helpers

namespace {

Shape BroadcastShape(std::string_view op, const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw Error(ErrorCode::kShapeMismatch,
                  std::string(op) + ": incompatible shapes " + ShapeString(a) +
                      " and " + ShapeString(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Strides of `in` when read through the broadcast output shape `out`.
std::vector<std::size_t> BroadcastStrides(const Shape& in, const Shape& out) {
  const std::size_t rank = out.size();
  std::vector<std::size_t> strides(rank, 0);
  std::size_t stride = 1;
  for (std::size_t i = rank; i-- > 0;) {
    const std::size_t offset = rank - in.size();
    if (i < offset) continue;
    const std::size_t d = in[i - offset];
    strides[i] = d == 1 ? 0 : stride;
    stride *= d;
  }
  return strides;
}

// Calls fn(out_index, a_index, b_index) over the broadcast iteration space.
template <typename Fn>
void ForEachBroadcast(const Shape& out, const Shape& a, const Shape& b,
                      Fn&& fn) {
  const std::size_t n = NumElements(out);
  if (a == out && b == out) {
    for (std::size_t i = 0; i < n; ++i) fn(i, i, i);
    return;
  }
  const auto sa = BroadcastStrides(a, out);
  const auto sb = BroadcastStrides(b, out);
  std::vector<std::size_t> idx(out.size(), 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    fn(i, ia, ib);
    for (std::size_t d = out.size(); d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

// Sums a gradient of the broadcast shape back down to `target`.
Tensor ReduceTo(const Tensor& grad, const Shape& target) {
  if (grad.shape() == target) return grad;
  Tensor out = Tensor::Zeros(target);
  auto dst = out.mutable_data();
  auto src = grad.data();
  ForEachBroadcast(grad.shape(), target, target,
                   [&](std::size_t i, std::size_t t, std::size_t) {
                     dst[t] += src[i];
                   });
  return out;
}

template <typename Fn>
Tensor MapUnary(const Tensor& a, Fn&& fn) {
  std::vector<double> out(a.size());
  auto src = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(src[i]);
  return Tensor(a.shape(), std::move(out));
}

// Unary op whose derivative depends on input x and output y.
template <typename Forward, typename Derivative>
Var UnaryOp(std::string_view name, Var a, Forward&& forward,
            Derivative&& derivative) {
  Tensor y = MapUnary(a.value(), forward);
  Tape* tape = a.tape;
  const std::size_t a_id = a.id;
  const std::size_t y_id = tape->size();
  return tape->Record(
      name, std::move(y), {a},
      [tape, a_id, y_id, derivative](const Tensor& up) {
        const auto x = tape->value(Var{tape, a_id}).data();
        const auto y = tape->value(Var{tape, y_id}).data();
        std::vector<double> g(up.size());
        auto u = up.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
          g[i] = u[i] * derivative(x[i], y[i]);
        }
        return std::vector<Tensor>{Tensor(up.shape(), std::move(g))};
      });
}

template <typename Forward, typename Backward>
Var BinaryOp(std::string_view name, Var a, Var b, Forward&& forward,
             Backward&& backward) {
  if (a.tape != b.tape) {
    throw Error(ErrorCode::kInvalidArgument,
                std::string(name) + ": operands on different tapes");
  }
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  Shape out_shape = BroadcastShape(name, sa, sb);
  std::vector<double> out(NumElements(out_shape));
  {
    auto da = a.value().data();
    auto db = b.value().data();
    ForEachBroadcast(out_shape, sa, sb,
                     [&](std::size_t i, std::size_t ia, std::size_t ib) {
                       out[i] = forward(da[ia], db[ib]);
                     });
  }
  Tape* tape = a.tape;
  const std::size_t a_id = a.id, b_id = b.id;
  return tape->Record(
      name, Tensor(out_shape, std::move(out)), {a, b},
      [tape, a_id, b_id, out_shape, backward](const Tensor& up) {
        const Tensor& ta = tape->value(Var{tape, a_id});
        const Tensor& tb = tape->value(Var{tape, b_id});
        Tensor ga = Tensor::Zeros(out_shape);
        Tensor gb = Tensor::Zeros(out_shape);
        auto da = ta.data();
        auto db = tb.data();
        auto u = up.data();
        auto pa = ga.mutable_data();
        auto pb = gb.mutable_data();
        ForEachBroadcast(out_shape, ta.shape(), tb.shape(),
                         [&](std::size_t i, std::size_t ia, std::size_t ib) {
                           double dfa = 0.0, dfb = 0.0;
                           backward(da[ia], db[ib], dfa, dfb);
                           pa[i] = u[i] * dfa;
                           pb[i] = u[i] * dfb;
                         });
        return std::vector<Tensor>{ReduceTo(ga, ta.shape()),
                                   ReduceTo(gb, tb.shape())};
      });
}

double StableSigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double StableSoftplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace

// ---------------------------------------------------------------------------
// Primitives

Var Add(Var a, Var b) {
  return BinaryOp(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double& da, double& db) { da = 1.0, db = 1.0; });
}

Var Sub(Var a, Var b) {
  return BinaryOp(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double& da, double& db) { da = 1.0, db = -1.0; });
}

Var Mul(Var a, Var b) {
  return BinaryOp(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double& da, double& db) { da = y, db = x; });
}

Var Div(Var a, Var b) {
  return BinaryOp(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double x, double y, double& da, double& db) {
        da = 1.0 / y;
        db = -x / (y * y);
      });
}

Var MatMul(Var a, Var b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
    throw Error(ErrorCode::kShapeMismatch,
                "matmul: incompatible shapes " + ShapeString(sa) + " and " +
                    ShapeString(sb));
  }
  const std::size_t m = sa[0], k = sa[1], n = sb[1];
  auto Product = [](std::span<const double> x, std::span<const double> y,
                    std::size_t m, std::size_t k, std::size_t n, bool tx,
                    bool ty) {
    // (tx ? x^T : x) [m,k] times (ty ? y^T : y) [k,n]
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double xv = tx ? x[p * m + i] : x[i * k + p];
        if (xv == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) {
          out[i * n + j] += xv * (ty ? y[j * k + p] : y[p * n + j]);
        }
      }
    }
    return out;
  };
  Tensor out({m, n},
             Product(a.value().data(), b.value().data(), m, k, n, false, false));
  Tape* tape = a.tape;
  const std::size_t a_id = a.id, b_id = b.id;
  return tape->Record(
      "matmul", std::move(out), {a, b},
      [tape, a_id, b_id, m, k, n, Product](const Tensor& up) {
        auto av = tape->value(Var{tape, a_id}).data();
        auto bv = tape->value(Var{tape, b_id}).data();
        // dA = G B^T : [m,n]x[n,k];  dB = A^T G : [k,m]x[m,n]
        Tensor ga({m, k}, Product(up.data(), bv, m, n, k, false, true));
        Tensor gb({k, n}, Product(av, up.data(), k, m, n, true, false));
        return std::vector<Tensor>{std::move(ga), std::move(gb)};
      });
}

Var Sum(Var a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  const Shape shape = a.shape();
  return a.tape->Record("sum", Tensor::Scalar(total), {a},
                        [shape](const Tensor& up) {
                          return std::vector<Tensor>{
                              Tensor::Full(shape, up.item())};
                        });
}

Var Mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "mean of empty tensor");
  return MulScalar(Sum(a), 1.0 / static_cast<double>(n));
}

Var Neg(Var a) {
  return UnaryOp(
      "neg", a, [](double x) { return -x; },
      [](double, double) { return -1.0; });
}

Var Log2(Var a) {
  return UnaryOp(
      "log2", a, [](double x) { return std::log2(x); },
      [](double x, double) { return 1.0 / (x * std::numbers::ln2); });
}

Var Tanh(Var a) {
  return UnaryOp(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Var Sigmoid(Var a) {
  return UnaryOp("sigmoid", a, StableSigmoid,
                 [](double, double y) { return y * (1.0 - y); });
}

Var Softplus(Var a) {
  return UnaryOp("softplus", a, StableSoftplus,
                 [](double x, double) { return StableSigmoid(x); });
}

Var Abs(Var a) {
  return UnaryOp(
      "abs", a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Var ClampMin(Var a, double floor) {
  return UnaryOp(
      "clamp_min", a, [floor](double x) { return std::max(x, floor); },
      [floor](double x, double) { return x < floor ? 0.0 : 1.0; });
}

Var AddScalar(Var a, double s) {
  return UnaryOp(
      "add_scalar", a, [s](double x) { return x + s; },
      [](double, double) { return 1.0; });
}

Var MulScalar(Var a, double s) {
  return UnaryOp(
      "mul_scalar", a, [s](double x) { return x * s; },
      [s](double, double) { return s; });
}

Var Reshape(Var a, Shape shape) {
  Tensor out = a.value().Reshaped(std::move(shape));
  const Shape original = a.shape();
  return a.tape->Record("reshape", std::move(out), {a},
                        [original](const Tensor& up) {
                          return std::vector<Tensor>{up.Reshaped(original)};
                        });
}

double RoundHalfAway(double x) { return std::round(x); }

Var RoundSte(Var a) {
  return UnaryOp("round_ste", a, RoundHalfAway,
                 [](double, double) { return 1.0; });
}

std::vector<double> UniformNoise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> u(n);
  constexpr double kUnit = 1.0 / 9007199254740992.0;  // 2^-53
  for (double& v : u) {
    const std::uint64_t k = rng() >> 11;
    v = (static_cast<double>(k) + 0.5) * kUnit - 0.5;
  }
  return u;
}

Var AddUniformNoise(Var a, std::uint64_t seed) {
  const std::vector<double> u = UniformNoise(a.value().size(), seed);
  std::vector<double> out(u.size());
  auto x = a.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + u[i];
  return a.tape->Record("add_uniform_noise", Tensor(a.shape(), std::move(out)),
                        {a}, [](const Tensor& up) {
                          return std::vector<Tensor>{up};
                        });
}

GradCheckResult GradCheck(const ScalarFunction& f, const Tensor& x, double h) {
  if (!(h > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "grad_check step must be > 0");
  }
  GradCheckResult result;
  {
    Tape tape;
    Var in = tape.Leaf(x, true);
    Var out = f(in);
    tape.Backward(out);
    result.analytic = tape.grad(in);
  }
  auto Evaluate = [&f](const Tensor& point) {
    Tape tape;
    Var in = tape.Leaf(point, false);
    return f(in).value().item();
  };
  std::vector<double> numeric(x.size());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = Evaluate(probe);
    probe[i] = orig - h;
    const double down = Evaluate(probe);
    probe[i] = orig;
    numeric[i] = (up - down) / (2.0 * h);
    if (!std::isfinite(numeric[i])) {
      throw Error(ErrorCode::kNonFinite, "grad_check central difference");
    }
    const double a = result.analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric[i]), 1e-8});
    result.max_rel_error =
        std::max(result.max_rel_error, std::abs(a - numeric[i]) / denom);
  }
  result.numeric = Tensor(x.shape(), std::move(numeric));
  return result;
}

}  // namespace rateattack
