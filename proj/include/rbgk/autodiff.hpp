#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rbgk/common.hpp"

namespace rbgk {

class Tape;

/// Scalar on a recording tape. Carries the forward value, one tangent per
/// trace input (exact first derivatives w.r.t. the inputs), and the node
/// handle the reverse sweep uses.
struct TracedScalar {
  Tape* tape = nullptr;
  int node = -1;

  double value() const;
  double tangent(int d) const;
};

using GradMap = std::map<std::string, std::vector<double>>;

/// Recording tape for one forward evaluation.
///
/// Every record stores the local partials implicitly through its operands;
/// tangents are propagated eagerly at record time (forward mode over the
/// trace inputs), and grad() runs one reverse sweep over the augmented
/// forward-over-forward graph, so gradients of expressions that contain
/// input-derivatives (via tangent_of) are exact. Second derivatives with
/// respect to the inputs are out of scope: tangent_of yields a node whose
/// own tangents are zero.
class Tape {
 public:
  enum class Op : std::uint8_t {
    Input, Const, Param,
    Add, Sub, Mul, Div,
    AddC, CSub, MulC, CDiv,
    Neg, Exp, Log, Sin, Cos, Tanh, Square, Sqrt,
    ClampSym, TangentOf, Detach,
  };

  explicit Tape(int n_inputs = 0) : n_inputs_(n_inputs) {
    if (n_inputs < 0) throw usage_error("Tape: negative input count");
  }

  int n_inputs() const { return n_inputs_; }
  std::size_t size() const { return recs_.size(); }

  /// Seed the trace inputs: input d receives the unit tangent e_d.
  /// Repeated calls append further input groups sharing the same tangent
  /// slots; the size must match the tape's declared input count.
  std::vector<TracedScalar> trace_begin(std::span<const double> inputs) {
    if (static_cast<int>(inputs.size()) != n_inputs_)
      throw usage_error("trace_begin: expected " + std::to_string(n_inputs_) +
                        " inputs, got " + std::to_string(inputs.size()));
    std::vector<TracedScalar> out;
    out.reserve(inputs.size());
    for (int d = 0; d < n_inputs_; ++d) {
      int id = push(Op::Input, -1, -1, 0.0, inputs[d]);
      for (int e = 0; e < n_inputs_; ++e) tan_[static_cast<std::size_t>(id) * n_inputs_ + e] = (e == d) ? 1.0 : 0.0;
      out.push_back({this, id});
    }
    return out;
  }

  TracedScalar constant(double c) { return {this, push(Op::Const, -1, -1, c, c)}; }

  /// Register a named block of trainable values. Gradients come back under
  /// the same name, aligned with the block order.
  std::vector<TracedScalar> register_params(const std::string& id,
                                            std::span<const double> values) {
    ParamBlock blk{id, static_cast<int>(recs_.size()), static_cast<int>(values.size())};
    std::vector<TracedScalar> out;
    out.reserve(values.size());
    for (double v : values) out.push_back({this, push(Op::Param, -1, -1, 0.0, v)});
    params_.push_back(std::move(blk));
    return out;
  }

  double value(int node) const { return val_[node]; }
  double tangent(int node, int d) const {
    return n_inputs_ == 0 ? 0.0 : tan_[static_cast<std::size_t>(node) * n_inputs_ + d];
  }

  /// Exact reverse-mode gradients of a scalar with respect to every
  /// registered parameter block. Unreachable parameters get zero.
  GradMap grad(TracedScalar loss) const {
    if (loss.tape != this) throw usage_error("grad: loss lives on another tape");
    const std::size_t n = recs_.size();
    const int D = n_inputs_;
    std::vector<double> av(n, 0.0);         // adjoints of values
    std::vector<double> at(n * D, 0.0);     // adjoints of tangent slots
    av[loss.node] = 1.0;

    for (std::size_t i = n; i-- > 0;) {
      const Rec& r = recs_[i];
      const double cv = av[i];
      const double* ct = at.data() + i * D;
      const int a = r.a, b = r.b;
      switch (r.op) {
        case Op::Input:
        case Op::Const:
        case Op::Param:
          break;
        case Op::Add:
          av[a] += cv; av[b] += cv;
          for (int d = 0; d < D; ++d) { at[a * D + d] += ct[d]; at[b * D + d] += ct[d]; }
          break;
        case Op::Sub:
          av[a] += cv; av[b] -= cv;
          for (int d = 0; d < D; ++d) { at[a * D + d] += ct[d]; at[b * D + d] -= ct[d]; }
          break;
        case Op::Mul: {
          const double avv = val_[a], bvv = val_[b];
          av[a] += cv * bvv;
          av[b] += cv * avv;
          for (int d = 0; d < D; ++d) {
            const double atd = tan(a, d), btd = tan(b, d);
            av[a] += ct[d] * btd;
            av[b] += ct[d] * atd;
            at[a * D + d] += ct[d] * bvv;
            at[b * D + d] += ct[d] * avv;
          }
          break;
        }
        case Op::Div: {
          const double ib = 1.0 / val_[b];
          const double cvv = val_[i];
          av[a] += cv * ib;
          av[b] -= cv * cvv * ib;
          for (int d = 0; d < D; ++d) {
            const double atd = tan(a, d), btd = tan(b, d);
            av[a] -= ct[d] * btd * ib * ib;
            av[b] += ct[d] * (2.0 * cvv * btd - atd) * ib * ib;
            at[a * D + d] += ct[d] * ib;
            at[b * D + d] -= ct[d] * cvv * ib;
          }
          break;
        }
        case Op::AddC:
          av[a] += cv;
          for (int d = 0; d < D; ++d) at[a * D + d] += ct[d];
          break;
        case Op::CSub:
          av[a] -= cv;
          for (int d = 0; d < D; ++d) at[a * D + d] -= ct[d];
          break;
        case Op::MulC:
          av[a] += cv * r.c;
          for (int d = 0; d < D; ++d) at[a * D + d] += ct[d] * r.c;
          break;
        case Op::CDiv: {
          const double ia = 1.0 / val_[a];
          const double cvv = val_[i];
          av[a] -= cv * cvv * ia;
          for (int d = 0; d < D; ++d) {
            av[a] += ct[d] * 2.0 * cvv * tan(a, d) * ia * ia;
            at[a * D + d] -= ct[d] * cvv * ia;
          }
          break;
        }
        case Op::TangentOf: {
          const int d0 = static_cast<int>(r.c);
          at[a * D + d0] += cv;
          break;
        }
        case Op::Detach:
          av[a] += cv;
          break;
        default: {  // unary chain with second-derivative term
          double d1 = 0.0, d2 = 0.0;
          unary_partials(r, d1, d2);
          av[a] += cv * d1;
          for (int d = 0; d < D; ++d) {
            av[a] += ct[d] * d2 * tan(a, d);
            at[a * D + d] += ct[d] * d1;
          }
          break;
        }
      }
    }

    GradMap out;
    for (const auto& blk : params_) {
      std::vector<double> g(blk.count);
      for (int j = 0; j < blk.count; ++j) g[j] = av[blk.first + j];
      out.emplace(blk.id, std::move(g));
    }
    return out;
  }

  void clear() {
    recs_.clear();
    val_.clear();
    tan_.clear();
    params_.clear();
  }

  // --- record creation (used by the TracedScalar operators) ---

  TracedScalar binary(Op op, TracedScalar x, TracedScalar y) {
    if (x.tape != this || y.tape != this)
      throw usage_error("arithmetic: operands live on different tapes");
    const double a = val_[x.node], b = val_[y.node];
    double v = 0.0;
    switch (op) {
      case Op::Add: v = a + b; break;
      case Op::Sub: v = a - b; break;
      case Op::Mul: v = a * b; break;
      case Op::Div:
        if (b == 0.0) throw numeric_error("division by zero at tape record " + std::to_string(recs_.size()));
        v = a / b;
        break;
      default: throw usage_error("binary: bad op");
    }
    int id = push(op, x.node, y.node, 0.0, v);
    const int D = n_inputs_;
    for (int d = 0; d < D; ++d) {
      const double atd = tan(x.node, d), btd = tan(y.node, d);
      double t = 0.0;
      switch (op) {
        case Op::Add: t = atd + btd; break;
        case Op::Sub: t = atd - btd; break;
        case Op::Mul: t = atd * b + a * btd; break;
        case Op::Div: t = (atd - v * btd) / b; break;
        default: break;
      }
      tan_[static_cast<std::size_t>(id) * D + d] = t;
    }
    return {this, id};
  }

  TracedScalar binary_const(Op op, TracedScalar x, double c) {
    if (x.tape != this) throw usage_error("arithmetic: operand on another tape");
    const double a = val_[x.node];
    double v = 0.0, slope = 0.0;
    switch (op) {
      case Op::AddC: v = a + c; slope = 1.0; break;
      case Op::CSub: v = c - a; slope = -1.0; break;
      case Op::MulC: v = a * c; slope = c; break;
      case Op::CDiv:
        if (a == 0.0) throw numeric_error("division by zero at tape record " + std::to_string(recs_.size()));
        v = c / a;
        slope = -v / a;
        break;
      default: throw usage_error("binary_const: bad op");
    }
    int id = push(op, x.node, -1, c, v);
    for (int d = 0; d < n_inputs_; ++d)
      tan_[static_cast<std::size_t>(id) * n_inputs_ + d] = slope * tan(x.node, d);
    return {this, id};
  }

  TracedScalar unary(Op op, TracedScalar x, double aux = 0.0) {
    if (x.tape != this) throw usage_error("arithmetic: operand on another tape");
    const double a = val_[x.node];
    double v = 0.0;
    switch (op) {
      case Op::Neg: v = -a; break;
      case Op::Exp: v = std::exp(a); break;
      case Op::Log:
        if (!(a > 0.0)) throw numeric_error("log of nonpositive value at tape record " + std::to_string(recs_.size()));
        v = std::log(a);
        break;
      case Op::Sin: v = std::sin(a); break;
      case Op::Cos: v = std::cos(a); break;
      case Op::Tanh: v = std::tanh(a); break;
      case Op::Square: v = a * a; break;
      case Op::Sqrt:
        if (a < 0.0) throw numeric_error("sqrt of negative value at tape record " + std::to_string(recs_.size()));
        v = std::sqrt(a);
        break;
      case Op::ClampSym: v = a < -aux ? -aux : (a > aux ? aux : a); break;
      default: throw usage_error("unary: bad op");
    }
    int id = push(op, x.node, -1, aux, v);
    double d1 = 0.0, d2 = 0.0;
    unary_partials(recs_[id], d1, d2);
    for (int d = 0; d < n_inputs_; ++d)
      tan_[static_cast<std::size_t>(id) * n_inputs_ + d] = d1 * tan(x.node, d);
    return {this, id};
  }

  /// The input-derivative d(x)/d(input d0) as a first-class node.
  TracedScalar tangent_node(TracedScalar x, int d0) {
    if (x.tape != this) throw usage_error("tangent_of: operand on another tape");
    if (d0 < 0 || d0 >= n_inputs_) throw usage_error("tangent_of: bad input index");
    int id = push(Op::TangentOf, x.node, -1, static_cast<double>(d0), tan(x.node, d0));
    return {this, id};
  }

  /// Same value and parameter gradient, zero input tangents. Used where a
  /// quantity is a functional of the whole sample set (e.g. the mass
  /// normalization) and must not contribute spatial derivatives.
  TracedScalar detach_tangents(TracedScalar x) {
    if (x.tape != this) throw usage_error("detach_tangents: operand on another tape");
    return {this, push(Op::Detach, x.node, -1, 0.0, val_[x.node])};
  }

 private:
  struct Rec {
    Op op;
    int a = -1;
    int b = -1;
    double c = 0.0;
  };
  struct ParamBlock {
    std::string id;
    int first = 0;
    int count = 0;
  };

  double tan(int node, int d) const { return tan_[static_cast<std::size_t>(node) * n_inputs_ + d]; }

  int push(Op op, int a, int b, double c, double v) {
    recs_.push_back({op, a, b, c});
    val_.push_back(v);
    tan_.resize(tan_.size() + n_inputs_, 0.0);
    return static_cast<int>(recs_.size()) - 1;
  }

  void unary_partials(const Rec& r, double& d1, double& d2) const {
    const double a = val_[r.a];
    const std::size_t i = static_cast<std::size_t>(&r - recs_.data());
    const double v = val_[i];
    switch (r.op) {
      case Op::Neg: d1 = -1.0; d2 = 0.0; break;
      case Op::Exp: d1 = v; d2 = v; break;
      case Op::Log: d1 = 1.0 / a; d2 = -1.0 / (a * a); break;
      case Op::Sin: d1 = std::cos(a); d2 = -v; break;
      case Op::Cos: d1 = -std::sin(a); d2 = -v; break;
      case Op::Tanh: d1 = 1.0 - v * v; d2 = -2.0 * v * d1; break;
      case Op::Square: d1 = 2.0 * a; d2 = 2.0; break;
      case Op::Sqrt: d1 = 0.5 / v; d2 = -0.25 / (v * v * v); break;
      case Op::ClampSym: d1 = (a >= -r.c && a <= r.c) ? 1.0 : 0.0; d2 = 0.0; break;
      default: d1 = d2 = 0.0; break;
    }
  }

  std::vector<Rec> recs_;
  std::vector<double> val_;
  std::vector<double> tan_;
  std::vector<ParamBlock> params_;
  int n_inputs_ = 0;
};

inline double TracedScalar::value() const { return tape->value(node); }
inline double TracedScalar::tangent(int d) const { return tape->tangent(node, d); }

inline double value_of(TracedScalar x) { return x.value(); }

// arithmetic surface

inline TracedScalar operator+(TracedScalar a, TracedScalar b) { return a.tape->binary(Tape::Op::Add, a, b); }
inline TracedScalar operator-(TracedScalar a, TracedScalar b) { return a.tape->binary(Tape::Op::Sub, a, b); }
inline TracedScalar operator*(TracedScalar a, TracedScalar b) { return a.tape->binary(Tape::Op::Mul, a, b); }
inline TracedScalar operator/(TracedScalar a, TracedScalar b) { return a.tape->binary(Tape::Op::Div, a, b); }

inline TracedScalar operator+(TracedScalar a, double c) { return a.tape->binary_const(Tape::Op::AddC, a, c); }
inline TracedScalar operator+(double c, TracedScalar a) { return a + c; }
inline TracedScalar operator-(TracedScalar a, double c) { return a + (-c); }
inline TracedScalar operator-(double c, TracedScalar a) { return a.tape->binary_const(Tape::Op::CSub, a, c); }
inline TracedScalar operator*(TracedScalar a, double c) { return a.tape->binary_const(Tape::Op::MulC, a, c); }
inline TracedScalar operator*(double c, TracedScalar a) { return a * c; }
inline TracedScalar operator/(TracedScalar a, double c) { return a * (1.0 / c); }
inline TracedScalar operator/(double c, TracedScalar a) { return a.tape->binary_const(Tape::Op::CDiv, a, c); }
inline TracedScalar operator-(TracedScalar a) { return a.tape->unary(Tape::Op::Neg, a); }

inline TracedScalar exp(TracedScalar a) { return a.tape->unary(Tape::Op::Exp, a); }
inline TracedScalar log(TracedScalar a) { return a.tape->unary(Tape::Op::Log, a); }
inline TracedScalar sin(TracedScalar a) { return a.tape->unary(Tape::Op::Sin, a); }
inline TracedScalar cos(TracedScalar a) { return a.tape->unary(Tape::Op::Cos, a); }
inline TracedScalar tanh(TracedScalar a) { return a.tape->unary(Tape::Op::Tanh, a); }
inline TracedScalar square(TracedScalar a) { return a.tape->unary(Tape::Op::Square, a); }
inline TracedScalar sqrt(TracedScalar a) { return a.tape->unary(Tape::Op::Sqrt, a); }
inline TracedScalar clamp_sym(TracedScalar a, double bound) { return a.tape->unary(Tape::Op::ClampSym, a, bound); }
inline TracedScalar tangent_of(TracedScalar a, int d) { return a.tape->tangent_node(a, d); }
inline TracedScalar detach_tangents(TracedScalar a) { return a.tape->detach_tangents(a); }

}  // namespace rbgk
