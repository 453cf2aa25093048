#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "crnn/matrix.hpp"

namespace crnn {

/// A learnable matrix with its accumulated gradient.
template <class T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;

  Parameter() = default;
  Parameter(std::string n, Matrix<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}

  void zero_grad() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols())
      grad = Matrix<T>(value.rows(), value.cols());
    else
      grad.fill(T{0});
  }
};

template <class T>
class Tape;

/// Handle to a node recorded on a Tape.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Matrix<T>& value() const { return tape->value(id); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Reverse-mode gradient tape. Nodes are appended in evaluation order, so
/// walking the node list backwards visits each node after all of its
/// consumers. One tape belongs to one thread.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Matrix<T> value) { return push(std::move(value), false, nullptr); }

  /// Leaf bound to a parameter. Repeated calls for the same parameter return
  /// the same node, so every use shares one gradient accumulator.
  Var<T> param(Parameter<T>& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return {this, it->second};
    Var<T> v = push(p.value, true, nullptr);
    nodes_[v.id].param = &p;
    param_nodes_.emplace(&p, v.id);
    return v;
  }

  Var<T> push(Matrix<T> value, bool requires_grad, BackwardFn backward) {
    nodes_.push_back(Node{std::move(value), Matrix<T>{}, std::move(backward), nullptr,
                          requires_grad});
    return {this, nodes_.size() - 1};
  }

  const Matrix<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer of a node, allocated as zeros on first use.
  Matrix<T>& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.rows() != n.value.rows() || n.grad.cols() != n.value.cols())
      n.grad = Matrix<T>(n.value.rows(), n.value.cols());
    return n.grad;
  }

  /// Propagates d(loss)/d(node) to every node and adds the result into the
  /// grad of each bound Parameter. Parameters never touched keep their grad.
  void backward(Var<T> loss) {
    if (loss.tape != this) throw ContractError("backward: loss belongs to another tape");
    const Matrix<T>& lv = value(loss.id);
    if (lv.rows() != 1 || lv.cols() != 1)
      throw DimensionError("backward: loss must be 1x1, got " + lv.shape_string());
    grad(loss.id)(0, 0) = T{1};
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, id);
      if (n.param != nullptr) {
        Parameter<T>& p = *n.param;
        if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) p.zero_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad.data()[i] += n.grad.data()[i];
      }
    }
  }

  void clear() {
    nodes_.clear();
    param_nodes_.clear();
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    BackwardFn backward;
    Parameter<T>* param;
    bool requires_grad;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::size_t> param_nodes_;
};

namespace detail {

template <class T>
Tape<T>& same_tape(const Var<T>& a, const Var<T>& b) {
  if (a.tape != b.tape || a.tape == nullptr)
    throw ContractError("operands recorded on different tapes");
  return *a.tape;
}

template <class T>
void add_into(Matrix<T>& dst, const Matrix<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst.data()[i] += src.data()[i];
}

// Gradient of an operand that may have been broadcast from 1x1.
template <class T>
void add_broadcast_grad(Tape<T>& t, std::size_t operand, const Matrix<T>& g) {
  Matrix<T>& dst = t.grad(operand);
  if (dst.size() == 1 && g.size() != 1)
    dst(0, 0) += sum(g);
  else
    add_into(dst, g);
}

}  // namespace detail

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& t = detail::same_tape(a, b);
  Matrix<T> out = matmul(a.value(), b.value());
  const bool rg = t.requires_grad(a.id) || t.requires_grad(b.id);
  return t.push(std::move(out), rg, [ia = a.id, ib = b.id](Tape<T>& tp, std::size_t self) {
    const Matrix<T>& g = tp.grad(self);
    if (tp.requires_grad(ia)) {
      const Matrix<T>& bv = tp.value(ib);
      Matrix<T> bt = transpose(bv);
      Matrix<T>& ga = tp.grad(ia);
      detail::gemm_acc(g.data(), bt.data(), ga.data(), g.rows(), g.cols(), bt.cols());
    }
    if (tp.requires_grad(ib)) {
      const Matrix<T>& av = tp.value(ia);
      Matrix<T>& gb = tp.grad(ib);
      detail::gemm_tn_acc(av.data(), g.data(), gb.data(), av.rows(), av.cols(), g.cols());
    }
  });
}

/// a * b^T.
template <class T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  Tape<T>& t = detail::same_tape(a, b);
  Matrix<T> out = matmul_nt(a.value(), b.value());
  const bool rg = t.requires_grad(a.id) || t.requires_grad(b.id);
  return t.push(std::move(out), rg, [ia = a.id, ib = b.id](Tape<T>& tp, std::size_t self) {
    const Matrix<T>& g = tp.grad(self);
    if (tp.requires_grad(ia)) {
      const Matrix<T>& bv = tp.value(ib);
      Matrix<T>& ga = tp.grad(ia);
      detail::gemm_acc(g.data(), bv.data(), ga.data(), g.rows(), g.cols(), bv.cols());
    }
    if (tp.requires_grad(ib)) {
      const Matrix<T>& av = tp.value(ia);
      Matrix<T>& gb = tp.grad(ib);
      detail::gemm_tn_acc(g.data(), av.data(), gb.data(), g.rows(), g.cols(), av.cols());
    }
  });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& t = detail::same_tape(a, b);
  Matrix<T> out = add(a.value(), b.value());
  const bool rg = t.requires_grad(a.id) || t.requires_grad(b.id);
  return t.push(std::move(out), rg, [ia = a.id, ib = b.id](Tape<T>& tp, std::size_t self) {
    const Matrix<T>& g = tp.grad(self);
    if (tp.requires_grad(ia)) detail::add_broadcast_grad(tp, ia, g);
    if (tp.requires_grad(ib)) detail::add_broadcast_grad(tp, ib, g);
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  Tape<T>& t = detail::same_tape(a, b);
  Matrix<T> out = sub(a.value(), b.value());
  const bool rg = t.requires_grad(a.id) || t.requires_grad(b.id);
  return t.push(std::move(out), rg, [ia = a.id, ib = b.id](Tape<T>& tp, std::size_t self) {
    const Matrix<T>& g = tp.grad(self);
    if (tp.requires_grad(ia)) detail::add_broadcast_grad(tp, ia, g);
    if (tp.requires_grad(ib)) detail::add_broadcast_grad(tp, ib, scale(g, T{-1}));
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  Tape<T>& t = detail::same_tape(a, b);
  Matrix<T> out = mul(a.value(), b.value());
  const bool rg = t.requires_grad(a.id) || t.requires_grad(b.id);
  return t.push(std::move(out), rg, [ia = a.id, ib = b.id](Tape<T>& tp, std::size_t self) {
    const Matrix<T>& g = tp.grad(self);
    if (tp.requires_grad(ia)) detail::add_broadcast_grad(tp, ia, mul(g, tp.value(ib)));
    if (tp.requires_grad(ib)) detail::add_broadcast_grad(tp, ib, mul(g, tp.value(ia)));
  });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  Tape<T>& t = *a.tape;
  return t.push(scale(a.value(), s), t.requires_grad(a.id),
                [ia = a.id, s](Tape<T>& tp, std::size_t self) {
                  const Matrix<T>& g = tp.grad(self);
                  Matrix<T>& ga = tp.grad(ia);
                  for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += s * g.data()[i];
                });
}

template <class T>
Var<T> one_minus(Var<T> a) {
  Tape<T>& t = *a.tape;
  return t.push(one_minus(a.value()), t.requires_grad(a.id),
                [ia = a.id](Tape<T>& tp, std::size_t self) {
                  const Matrix<T>& g = tp.grad(self);
                  Matrix<T>& ga = tp.grad(ia);
                  for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] -= g.data()[i];
                });
}

template <class T>
Var<T> sigmoid(Var<T> a) {
  Tape<T>& t = *a.tape;
  return t.push(sigmoid(a.value()), t.requires_grad(a.id),
                [ia = a.id](Tape<T>& tp, std::size_t self) {
                  const Matrix<T>& g = tp.grad(self);
                  const Matrix<T>& y = tp.value(self);
                  Matrix<T>& ga = tp.grad(ia);
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    const T yi = y.data()[i];
                    ga.data()[i] += g.data()[i] * yi * (T{1} - yi);
                  }
                });
}

template <class T>
Var<T> tanh(Var<T> a) {
  Tape<T>& t = *a.tape;
  return t.push(tanh(a.value()), t.requires_grad(a.id),
                [ia = a.id](Tape<T>& tp, std::size_t self) {
                  const Matrix<T>& g = tp.grad(self);
                  const Matrix<T>& y = tp.value(self);
                  Matrix<T>& ga = tp.grad(ia);
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    const T yi = y.data()[i];
                    ga.data()[i] += g.data()[i] * (T{1} - yi * yi);
                  }
                });
}

template <class T>
Var<T> add_row(Var<T> a, Var<T> bias) {
  Tape<T>& t = detail::same_tape(a, bias);
  Matrix<T> out = add_row(a.value(), bias.value());
  const bool rg = t.requires_grad(a.id) || t.requires_grad(bias.id);
  return t.push(std::move(out), rg, [ia = a.id, ib = bias.id](Tape<T>& tp, std::size_t self) {
    const Matrix<T>& g = tp.grad(self);
    if (tp.requires_grad(ia)) detail::add_into(tp.grad(ia), g);
    if (tp.requires_grad(ib)) {
      Matrix<T>& gb = tp.grad(ib);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gb(0, c) += g(r, c);
    }
  });
}

template <class T>
Var<T> concat_cols(Var<T> a, Var<T> b) {
  Tape<T>& t = detail::same_tape(a, b);
  Matrix<T> out = concat_cols(a.value(), b.value());
  const bool rg = t.requires_grad(a.id) || t.requires_grad(b.id);
  return t.push(std::move(out), rg, [ia = a.id, ib = b.id](Tape<T>& tp, std::size_t self) {
    const Matrix<T>& g = tp.grad(self);
    const std::size_t ca = tp.value(ia).cols();
    if (tp.requires_grad(ia)) {
      Matrix<T>& ga = tp.grad(ia);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < ca; ++c) ga(r, c) += g(r, c);
    }
    if (tp.requires_grad(ib)) {
      Matrix<T>& gb = tp.grad(ib);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < gb.cols(); ++c) gb(r, c) += g(r, ca + c);
    }
  });
}

template <class T>
Var<T> gather_rows(Var<T> m, std::span<const std::size_t> ids) {
  Tape<T>& t = *m.tape;
  Matrix<T> out = gather_rows(m.value(), ids);
  return t.push(std::move(out), t.requires_grad(m.id),
                [im = m.id, idv = std::vector<std::size_t>(ids.begin(), ids.end())](
                    Tape<T>& tp, std::size_t self) {
                  const Matrix<T>& g = tp.grad(self);
                  Matrix<T>& gm = tp.grad(im);
                  for (std::size_t i = 0; i < idv.size(); ++i) {
                    auto src = g.row(i);
                    auto dst = gm.row(idv[i]);
                    for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
                  }
                });
}

template <class T>
Var<T> top_rows(Var<T> m, std::size_t n) {
  Tape<T>& t = *m.tape;
  Matrix<T> out = top_rows(m.value(), n);
  return t.push(std::move(out), t.requires_grad(m.id), [im = m.id](Tape<T>& tp, std::size_t self) {
    const Matrix<T>& g = tp.grad(self);
    T* dst = tp.grad(im).data();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g.data()[i];
  });
}

template <class T>
Var<T> sum_rows_at(Var<T> m, std::span<const std::size_t> ids, std::size_t per_row) {
  Tape<T>& t = *m.tape;
  Matrix<T> out = sum_rows_at(m.value(), ids, per_row);
  return t.push(std::move(out), t.requires_grad(m.id),
                [im = m.id, per_row, idv = std::vector<std::size_t>(ids.begin(), ids.end())](
                    Tape<T>& tp, std::size_t self) {
                  const Matrix<T>& g = tp.grad(self);
                  Matrix<T>& gm = tp.grad(im);
                  for (std::size_t i = 0; i < idv.size(); ++i) {
                    auto src = g.row(i / per_row);
                    auto dst = gm.row(idv[i]);
                    for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
                  }
                });
}

/// 1x1 sum of all entries.
template <class T>
Var<T> sum(Var<T> a) {
  Tape<T>& t = *a.tape;
  return t.push(Matrix<T>(1, 1, sum(a.value())), t.requires_grad(a.id),
                [ia = a.id](Tape<T>& tp, std::size_t self) {
                  const T g = tp.grad(self)(0, 0);
                  Matrix<T>& ga = tp.grad(ia);
                  for (T& v : ga.values()) v += g;
                });
}

/// 1x1 masked softmax cross-entropy sum; softmax and log are fused.
template <class T>
Var<T> masked_nll(Var<T> logits, std::span<const std::size_t> targets, std::span<const T> mask) {
  Tape<T>& t = *logits.tape;
  const T loss = masked_nll(logits.value(), targets, mask);
  return t.push(Matrix<T>(1, 1, loss), t.requires_grad(logits.id),
                [il = logits.id, tg = std::vector<std::size_t>(targets.begin(), targets.end()),
                 mk = std::vector<T>(mask.begin(), mask.end())](Tape<T>& tp, std::size_t self) {
                  const T g = tp.grad(self)(0, 0);
                  const Matrix<T>& lv = tp.value(il);
                  Matrix<T>& gl = tp.grad(il);
                  const auto lse = logsumexp_rows(lv);
                  for (std::size_t r = 0; r < lv.rows(); ++r) {
                    if (mk[r] == T{0}) continue;
                    const T w = g * mk[r];
                    auto src = lv.row(r);
                    auto dst = gl.row(r);
                    for (std::size_t c = 0; c < src.size(); ++c)
                      dst[c] += w * std::exp(src[c] - lse[r]);
                    dst[tg[r]] -= w;
                  }
                });
}

}  // namespace crnn
