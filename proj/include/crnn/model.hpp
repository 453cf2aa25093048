#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "crnn/context.hpp"
#include "crnn/errors.hpp"
#include "crnn/matrix.hpp"
#include "crnn/rng.hpp"
#include "crnn/tape.hpp"

namespace crnn {

enum class CellKind { covisit, bag_of_items, gru, context_wrapper_gru };

/// How context enters the item embedding (input side) or the hidden state
/// (output side).
enum class IntegrationKind { none, concat, mult, concat_mult };

inline std::string_view to_string(CellKind k) {
  switch (k) {
    case CellKind::covisit: return "covisit";
    case CellKind::bag_of_items: return "bag-of-items";
    case CellKind::gru: return "gru";
    case CellKind::context_wrapper_gru: return "context-wrapper-gru";
  }
  return "?";
}

inline std::string_view to_string(IntegrationKind k) {
  switch (k) {
    case IntegrationKind::none: return "none";
    case IntegrationKind::concat: return "concat";
    case IntegrationKind::mult: return "mult";
    case IntegrationKind::concat_mult: return "concat-mult";
  }
  return "?";
}

inline std::optional<CellKind> parse_cell_kind(std::string_view s) {
  for (auto k : {CellKind::covisit, CellKind::bag_of_items, CellKind::gru,
                 CellKind::context_wrapper_gru})
    if (s == to_string(k)) return k;
  return std::nullopt;
}

inline std::optional<IntegrationKind> parse_integration_kind(std::string_view s) {
  for (auto k : {IntegrationKind::none, IntegrationKind::concat, IntegrationKind::mult,
                 IntegrationKind::concat_mult})
    if (s == to_string(k)) return k;
  return std::nullopt;
}

inline bool uses_concat(IntegrationKind k) {
  return k == IntegrationKind::concat || k == IntegrationKind::concat_mult;
}
inline bool uses_mult(IntegrationKind k) {
  return k == IntegrationKind::mult || k == IntegrationKind::concat_mult;
}

struct ModelConfig {
  CellKind cell = CellKind::gru;
  IntegrationKind input = IntegrationKind::none;
  IntegrationKind output = IntegrationKind::none;
  std::size_t n_items = 0;
  std::size_t embed_dim = 100;
  std::size_t hidden_dim = 100;
  std::size_t context_dim = 0;     // V_c
  std::size_t context_active = 0;  // active indices per context vector
  // Use C_in for the output side too.
  bool share_context_projection = false;

  bool is_recurrent() const {
    return cell == CellKind::gru || cell == CellKind::context_wrapper_gru;
  }
  bool uses_context() const {
    return input != IntegrationKind::none || output != IntegrationKind::none ||
           cell == CellKind::context_wrapper_gru;
  }

  /// Width of x_t^c.
  std::size_t integrated_input_dim() const {
    return embed_dim + (uses_concat(input) ? context_dim : 0);
  }

  void validate() const {
    if (n_items == 0) throw ConfigError("model: n_items must be positive");
    if (embed_dim == 0 || hidden_dim == 0) throw ConfigError("model: dimensions must be positive");
    // V serves as both input embedding and output projection of h.
    if (embed_dim != hidden_dim)
      throw ConfigError("model: tied embeddings need embed_dim == hidden_dim (got " +
                        std::to_string(embed_dim) + " and " + std::to_string(hidden_dim) + ")");
    if (uses_context() && (context_dim == 0 || context_active == 0))
      throw ConfigError("model: context integration requested but context is empty");
    if (context_active > context_dim)
      throw ConfigError("model: more active context indices than context dimensions");
    if (!is_recurrent() && input != IntegrationKind::none && input != IntegrationKind::mult)
      throw ConfigError(std::string("model: ") + std::string(to_string(cell)) +
                        " keeps the embedding as state and cannot take input integration " +
                        std::string(to_string(input)));
    if (share_context_projection && !(uses_mult(input) && uses_mult(output)))
      throw ConfigError("model: share_context_projection needs mult integration on both sides");
  }
};

/// All learnable matrices. Vectors are 1 x n rows; gate matrices map a
/// row [x; h] to k columns.
template <class T>
struct ModelParams {
  Parameter<T> V;                       // n_items x N_x, tied input/output embedding
  std::optional<Parameter<T>> C_in;     // V_c x N_x
  std::optional<Parameter<T>> C_out;    // V_c x k
  std::optional<Parameter<T>> D_out;    // V_c x n_items, context block of the output projection
  std::optional<Parameter<T>> W_u, W_r, W_h;  // (in + k) x k
  std::optional<Parameter<T>> b_u, b_r, b_h;  // 1 x k
  std::optional<Parameter<T>> U_u, U_r, U_h;  // V_c x k

  /// Present parameters in a fixed order.
  std::vector<Parameter<T>*> list() {
    std::vector<Parameter<T>*> out{&V};
    for (auto* o : {&C_in, &C_out, &D_out, &W_u, &W_r, &W_h, &b_u, &b_r, &b_h, &U_u, &U_r, &U_h})
      if (o->has_value()) out.push_back(&**o);
    return out;
  }
  std::vector<const Parameter<T>*> list() const {
    std::vector<const Parameter<T>*> out;
    for (auto* p : const_cast<ModelParams*>(this)->list()) out.push_back(p);
    return out;
  }

  Parameter<T>* find(std::string_view name) {
    for (auto* p : list())
      if (p->name == name) return p;
    return nullptr;
  }

  const Parameter<T>& context_out() const { return C_out ? *C_out : *C_in; }
  Parameter<T>& context_out() { return C_out ? *C_out : *C_in; }

  void zero_grad() {
    for (auto* p : list()) p->zero_grad();
  }
};

namespace detail {

template <class T>
Matrix<T> glorot(std::size_t rows, std::size_t cols, std::size_t fan_in, std::size_t fan_out,
                 Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix<T> m(rows, cols);
  for (T& v : m.values()) v = static_cast<T>(rng.uniform(-a, a));
  return m;
}

// Context projection whose product with any valid context vector is close to
// ones: each entry is 1/active plus Glorot-scaled noise of the same scale.
template <class T>
Matrix<T> near_unit_projection(std::size_t context_dim, std::size_t cols, std::size_t active,
                               Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(context_dim + cols));
  Matrix<T> m(context_dim, cols);
  for (T& v : m.values()) v = static_cast<T>((1.0 + rng.uniform(-a, a)) / active);
  return m;
}

}  // namespace detail

template <class T>
ModelParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ModelParams<T> p;
  const std::size_t nx = cfg.embed_dim, k = cfg.hidden_dim, vc = cfg.context_dim;
  p.V = Parameter<T>("V", detail::glorot<T>(cfg.n_items, nx, cfg.n_items, nx, rng));
  if (uses_mult(cfg.input))
    p.C_in = Parameter<T>("C_in", detail::near_unit_projection<T>(vc, nx, cfg.context_active, rng));
  if (uses_mult(cfg.output) && !cfg.share_context_projection)
    p.C_out = Parameter<T>("C_out", detail::near_unit_projection<T>(vc, k, cfg.context_active, rng));
  if (uses_concat(cfg.output))
    p.D_out = Parameter<T>("D_out", detail::glorot<T>(vc, cfg.n_items, vc, cfg.n_items, rng));
  if (cfg.is_recurrent()) {
    const std::size_t in = cfg.integrated_input_dim() + k;
    p.W_u = Parameter<T>("W_u", detail::glorot<T>(in, k, in, k, rng));
    p.W_r = Parameter<T>("W_r", detail::glorot<T>(in, k, in, k, rng));
    p.W_h = Parameter<T>("W_h", detail::glorot<T>(in, k, in, k, rng));
    p.b_u = Parameter<T>("b_u", Matrix<T>(1, k));
    p.b_r = Parameter<T>("b_r", Matrix<T>(1, k));
    p.b_h = Parameter<T>("b_h", Matrix<T>(1, k));
  }
  if (cfg.cell == CellKind::context_wrapper_gru) {
    p.U_u = Parameter<T>("U_u", detail::near_unit_projection<T>(vc, k, cfg.context_active, rng));
    p.U_r = Parameter<T>("U_r", detail::near_unit_projection<T>(vc, k, cfg.context_active, rng));
    p.U_h = Parameter<T>("U_h", detail::near_unit_projection<T>(vc, k, cfg.context_active, rng));
  }
  return p;
}

/// Checks that params has exactly the matrices cfg needs, with the right shapes.
template <class T>
void check_params(const ModelConfig& cfg, const ModelParams<T>& p) {
  cfg.validate();
  auto expect = [](const std::optional<Parameter<T>>& o, bool present, std::size_t r,
                   std::size_t c, const char* name) {
    if (o.has_value() != present)
      throw ConfigError(std::string("parameter ") + name + (present ? " missing" : " unexpected"));
    if (present && (o->value.rows() != r || o->value.cols() != c))
      throw DimensionError(std::string("parameter ") + name + " has shape " +
                           o->value.shape_string() + ", expected " + std::to_string(r) + "x" +
                           std::to_string(c));
  };
  const std::size_t nx = cfg.embed_dim, k = cfg.hidden_dim, vc = cfg.context_dim;
  if (p.V.value.rows() != cfg.n_items || p.V.value.cols() != nx)
    throw DimensionError("parameter V has shape " + p.V.value.shape_string());
  expect(p.C_in, uses_mult(cfg.input), vc, nx, "C_in");
  expect(p.C_out, uses_mult(cfg.output) && !cfg.share_context_projection, vc, k, "C_out");
  expect(p.D_out, uses_concat(cfg.output), vc, cfg.n_items, "D_out");
  const bool rec = cfg.is_recurrent();
  const std::size_t in = cfg.integrated_input_dim() + k;
  expect(p.W_u, rec, in, k, "W_u");
  expect(p.W_r, rec, in, k, "W_r");
  expect(p.W_h, rec, in, k, "W_h");
  expect(p.b_u, rec, 1, k, "b_u");
  expect(p.b_r, rec, 1, k, "b_r");
  expect(p.b_h, rec, 1, k, "b_h");
  const bool cw = cfg.cell == CellKind::context_wrapper_gru;
  expect(p.U_u, cw, vc, k, "U_u");
  expect(p.U_r, cw, vc, k, "U_r");
  expect(p.U_h, cw, vc, k, "U_h");
}

// ---------------------------------------------------------------------------
// Evaluation backends. Model equations below are written once against an
// Ops type: EagerOps computes plain matrices, TapeOps records on a Tape.

template <class T>
struct EagerOps {
  using Scalar = T;
  using Value = Matrix<T>;
  const Matrix<T>& param(const Parameter<T>& p) const { return p.value; }
  Matrix<T> constant(Matrix<T> m) const { return m; }
  Matrix<T> nll(const Matrix<T>& logits, std::span<const std::size_t> targets,
                std::span<const T> mask) const {
    return Matrix<T>(1, 1, masked_nll(logits, targets, mask));
  }
};

template <class T>
struct TapeOps {
  using Scalar = T;
  using Value = Var<T>;
  Tape<T>& tape;
  Var<T> param(Parameter<T>& p) const { return tape.param(p); }
  Var<T> constant(Matrix<T> m) const { return tape.constant(std::move(m)); }
  Var<T> nll(const Var<T>& logits, std::span<const std::size_t> targets,
             std::span<const T> mask) const {
    return masked_nll(logits, targets, mask);
  }
};

/// Active context indices for a batch: rows x active, row-major.
struct ContextRows {
  std::span<const std::size_t> ids;
  std::size_t active = 0;
  std::size_t dim = 0;

  std::size_t rows() const { return active == 0 ? 0 : ids.size() / active; }
};

template <class Ops, class P>
auto context_projection(const Ops& ops, P& proj, const ContextRows& c) {
  return sum_rows_at(ops.param(proj), c.ids, c.active);
}

template <class Ops>
auto dense_context(const Ops& ops, const ContextRows& c) {
  return ops.constant(one_hot_rows<typename Ops::Scalar>(c.ids, c.active, c.dim));
}

/// Row ids of V for the given items (x_t^embed = V x_t).
template <class Ops, class PS>
auto embed_items(const Ops& ops, PS& params, std::span<const std::size_t> items) {
  for (std::size_t id : items)
    if (id >= params.V.value.rows())
      throw VocabularyError("item index " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(params.V.value.rows()));
  return gather_rows(ops.param(params.V), items);
}

/// x_t^c from the embedding and the input event's context.
template <class Ops, class PS, class X>
X integrate_input(const Ops& ops, PS& params, IntegrationKind kind, const X& x,
                  const ContextRows& c) {
  switch (kind) {
    case IntegrationKind::none: return x;
    case IntegrationKind::concat: return concat_cols(x, dense_context(ops, c));
    case IntegrationKind::mult:
      if (!params.C_in) throw ConfigError("integrate_input: mult needs C_in");
      return mul(x, context_projection(ops, *params.C_in, c));
    case IntegrationKind::concat_mult:
      if (!params.C_in) throw ConfigError("integrate_input: concat-mult needs C_in");
      return concat_cols(mul(x, context_projection(ops, *params.C_in, c)), dense_context(ops, c));
  }
  throw ConfigError("integrate_input: unknown integration kind");
}

/// Logits o_t over items from h_t and the target event's context.
/// Concat kinds add a learned context block D c to the V-based logits.
template <class Ops, class PS, class X>
X output_logits(const Ops& ops, PS& params, IntegrationKind kind, const X& h,
                const ContextRows& c_next) {
  const auto& V = ops.param(params.V);
  auto scaled = [&]() {
    if (!params.C_out && !params.C_in) throw ConfigError("output_logits: mult needs C_out");
    return mul(h, context_projection(ops, params.context_out(), c_next));
  };
  auto context_block = [&]() {
    if (!params.D_out) throw ConfigError("output_logits: concat needs D_out");
    return context_projection(ops, *params.D_out, c_next);
  };
  switch (kind) {
    case IntegrationKind::none: return matmul_nt(h, V);
    case IntegrationKind::mult: return matmul_nt(scaled(), V);
    case IntegrationKind::concat: return add(matmul_nt(h, V), context_block());
    case IntegrationKind::concat_mult: return add(matmul_nt(scaled(), V), context_block());
  }
  throw ConfigError("output_logits: unknown integration kind");
}

/// Standard GRU:
///   u = sigmoid(W_u [x; h] + b_u), r = sigmoid(W_r [x; h] + b_r),
///   g = tanh(W_h [x; h*r] + b_h),  h' = (1 - u) * h + u * g.
template <class Ops, class PS, class X>
X gru_step(const Ops& ops, PS& params, const X& x, const X& h) {
  if (!params.W_u) throw ConfigError("gru_step: gate parameters missing");
  const X xh = concat_cols(x, h);
  const X u = sigmoid(add_row(matmul(xh, ops.param(*params.W_u)), ops.param(*params.b_u)));
  const X r = sigmoid(add_row(matmul(xh, ops.param(*params.W_r)), ops.param(*params.b_r)));
  const X g = tanh(add_row(matmul(concat_cols(x, mul(h, r)), ops.param(*params.W_h)),
                           ops.param(*params.b_h)));
  return add(mul(one_minus(u), h), mul(u, g));
}

/// GRU whose gate pre-activations are rescaled elementwise by a projection
/// of the input event's context before the bias is added:
///   u = sigmoid(W_u [x; h] * U_u c + b_u), likewise r, and
///   g = tanh(W_h [x; h*r] * U_h c + b_h).
template <class Ops, class PS, class X>
X context_wrapper_gru_step(const Ops& ops, PS& params, const X& x, const X& h,
                           const ContextRows& c) {
  if (!params.W_u) throw ConfigError("context_wrapper_gru_step: gate parameters missing");
  if (!params.U_u) throw ConfigError("context_wrapper_gru_step: U_u, U_r, U_h missing");
  const X xh = concat_cols(x, h);
  const X su = context_projection(ops, *params.U_u, c);
  const X sr = context_projection(ops, *params.U_r, c);
  const X sh = context_projection(ops, *params.U_h, c);
  const X u = sigmoid(add_row(mul(matmul(xh, ops.param(*params.W_u)), su), ops.param(*params.b_u)));
  const X r = sigmoid(add_row(mul(matmul(xh, ops.param(*params.W_r)), sr), ops.param(*params.b_r)));
  const X g = tanh(add_row(mul(matmul(concat_cols(x, mul(h, r)), ops.param(*params.W_h)), sh),
                           ops.param(*params.b_h)));
  return add(mul(one_minus(u), h), mul(u, g));
}

/// Non-sequential baselines: covisit keeps only the last embedding,
/// bag-of-items sums all embeddings so far.
template <class X>
X baseline_step(CellKind kind, const X& x, const X& h) {
  switch (kind) {
    case CellKind::covisit: return x;
    case CellKind::bag_of_items: return add(h, x);
    default: throw ConfigError("baseline_step: not a baseline cell");
  }
}

/// Input module plus recurrent module for one step.
template <class Ops, class PS, class X>
X advance(const Ops& ops, PS& params, const ModelConfig& cfg, std::span<const std::size_t> items,
          const ContextRows& c, const X& h) {
  const X x = integrate_input(ops, params, cfg.input, embed_items(ops, params, items), c);
  switch (cfg.cell) {
    case CellKind::gru: return gru_step(ops, params, x, h);
    case CellKind::context_wrapper_gru: return context_wrapper_gru_step(ops, params, x, h, c);
    default: return baseline_step(cfg.cell, x, h);
  }
}

// ---------------------------------------------------------------------------
// Batched sequences

/// Padded mini-batch in step-major layout. Position t of sequence b is
/// items[t * size + b]; contexts hold `active` indices per position. mask is
/// 1 where position t is a prediction target (t >= 1 and within the
/// sequence), 0 elsewhere. Rows are sorted by descending length and
/// order[b] is the caller's index of row b, so the rows still inside their
/// sequence at any step form a prefix.
template <class T>
struct Batch {
  std::size_t size = 0;
  std::size_t steps = 0;
  std::size_t active = 0;
  std::size_t context_dim = 0;
  std::vector<std::size_t> items;
  std::vector<std::size_t> contexts;
  std::vector<T> mask;
  std::vector<std::size_t> lengths;
  std::vector<std::size_t> order;

  std::span<const std::size_t> items_at(std::size_t t, std::size_t rows) const {
    return {items.data() + t * size, rows};
  }
  std::span<const std::size_t> items_at(std::size_t t) const { return items_at(t, size); }
  std::span<const T> mask_at(std::size_t t, std::size_t rows) const {
    return {mask.data() + t * size, rows};
  }
  std::span<const T> mask_at(std::size_t t) const { return mask_at(t, size); }
  ContextRows contexts_at(std::size_t t, std::size_t rows) const {
    return {{contexts.data() + t * size * active, rows * active}, active, context_dim};
  }
  ContextRows contexts_at(std::size_t t) const { return contexts_at(t, size); }
  /// Rows whose sequence still has a position t.
  std::size_t live_rows(std::size_t t) const {
    std::size_t n = 0;
    while (n < size && lengths[n] > t) ++n;
    return n;
  }
  T mask_count() const {
    T c{0};
    for (T m : mask) c += m;
    return c;
  }
};

/// Builds a Batch from sessions with precomputed contexts. Padding repeats
/// the last real position's item and context.
template <class T, class SessionT>
Batch<T> make_batch(std::span<const SessionT* const> sessions,
                    std::span<const std::vector<ContextVector>* const> contexts,
                    std::size_t active, std::size_t context_dim) {
  Batch<T> b;
  b.size = sessions.size();
  b.active = active;
  b.context_dim = context_dim;
  for (const auto* s : sessions) b.steps = std::max(b.steps, s->events.size());
  b.order.resize(b.size);
  for (std::size_t i = 0; i < b.size; ++i) b.order[i] = i;
  std::stable_sort(b.order.begin(), b.order.end(), [&](std::size_t x, std::size_t y) {
    return sessions[x]->events.size() > sessions[y]->events.size();
  });
  b.items.assign(b.steps * b.size, 0);
  b.contexts.assign(b.steps * b.size * active, 0);
  b.mask.assign(b.steps * b.size, T{0});
  for (std::size_t i = 0; i < b.size; ++i) {
    const auto& ev = sessions[b.order[i]]->events;
    const auto& cv = *contexts[b.order[i]];
    if (ev.empty()) throw ContractError("make_batch: empty session");
    if (cv.size() != ev.size()) throw DimensionError("make_batch: context count mismatch");
    b.lengths.push_back(ev.size());
    for (std::size_t t = 0; t < b.steps; ++t) {
      const std::size_t src = std::min(t, ev.size() - 1);
      b.items[t * b.size + i] = ev[src].item;
      if (cv[src].active.size() != active)
        throw DimensionError("make_batch: context has " + std::to_string(cv[src].active.size()) +
                             " active indices, expected " + std::to_string(active));
      std::copy(cv[src].active.begin(), cv[src].active.end(),
                b.contexts.begin() + static_cast<std::ptrdiff_t>((t * b.size + i) * active));
      b.mask[t * b.size + i] = (t >= 1 && t < ev.size()) ? T{1} : T{0};
    }
  }
  return b;
}

/// Runs the model over a batch. For each step t >= 1, the state after
/// consuming positions < t is combined with the context of position t to
/// produce logits for the item at t. Rows whose sequence has ended are
/// dropped from the computation, which leaves the result unchanged since
/// they are masked. Calls on_step(t, logits) where logits holds the
/// batch.live_rows(t) leading rows, and returns the masked NLL sum.
template <class Ops, class PS, class OnStep>
typename Ops::Value run_batch(const Ops& ops, PS& params, const ModelConfig& cfg,
                              const Batch<typename Ops::Scalar>& batch, OnStep&& on_step) {
  using X = typename Ops::Value;
  using T = typename Ops::Scalar;
  X h = ops.constant(Matrix<T>(batch.size, cfg.hidden_dim));
  std::optional<X> total;
  for (std::size_t t = 1; t < batch.steps; ++t) {
    const std::size_t n = batch.live_rows(t);
    if (n < h.rows()) h = top_rows(h, n);
    h = advance(ops, params, cfg, batch.items_at(t - 1, n), batch.contexts_at(t - 1, n), h);
    X logits = output_logits(ops, params, cfg.output, h, batch.contexts_at(t, n));
    on_step(t, static_cast<const X&>(logits));
    X step_loss = ops.nll(logits, batch.items_at(t, n), batch.mask_at(t, n));
    total = total ? add(*total, step_loss) : step_loss;
  }
  if (!total) throw ContractError("run_batch: sequences need at least two events");
  return *total;
}

/// Records the batch on a tape and returns the mean NLL over masked
/// positions (a 1x1 node) together with the masked sum.
template <class T>
struct TapedLoss {
  Var<T> mean;
  T sum;
  T count;
};

template <class T>
TapedLoss<T> taped_batch_loss(Tape<T>& tape, ModelParams<T>& params, const ModelConfig& cfg,
                              const Batch<T>& batch) {
  TapeOps<T> ops{tape};
  Var<T> total = run_batch(ops, params, cfg, batch, [](std::size_t, const Var<T>&) {});
  const T count = batch.mask_count();
  if (count == T{0}) throw ContractError("taped_batch_loss: batch has no prediction targets");
  const T sum = total.value()(0, 0);
  return {scale(total, T{1} / count), sum, count};
}

/// Per-step logits and total NLL of one session, computed without a tape.
template <class T>
struct SequenceOutput {
  std::vector<Matrix<T>> logits;  // logits[i] predicts event i + 1
  T nll{0};
};

template <class T>
SequenceOutput<T> forward_sequence(const ModelParams<T>& params, const ModelConfig& cfg,
                                   std::span<const std::size_t> items,
                                   std::span<const ContextVector> contexts) {
  if (items.size() < 2)
    throw ContractError("forward_sequence: session needs at least two events");
  if (contexts.size() != items.size())
    throw DimensionError("forward_sequence: " + std::to_string(contexts.size()) +
                         " contexts for " + std::to_string(items.size()) + " items");
  EagerOps<T> ops;
  SequenceOutput<T> out;
  Matrix<T> h(1, cfg.hidden_dim);
  const T one{1};
  for (std::size_t t = 1; t < items.size(); ++t) {
    const ContextRows c_prev{contexts[t - 1].active, contexts[t - 1].active.size(), cfg.context_dim};
    const ContextRows c_next{contexts[t].active, contexts[t].active.size(), cfg.context_dim};
    h = advance(ops, params, cfg, items.subspan(t - 1, 1), c_prev, h);
    Matrix<T> logits = output_logits(ops, params, cfg.output, h, c_next);
    out.nll += masked_nll(logits, items.subspan(t, 1), std::span<const T>(&one, 1));
    out.logits.push_back(std::move(logits));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ranking

/// Number of items ranked ahead of target: strictly larger logit, or equal
/// logit with a smaller id. target is in the top K iff rank < K.
template <class T>
std::size_t rank_of(std::span<const T> logits, std::size_t target) {
  const T v = logits[target];
  std::size_t rank = 0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (logits[i] > v || (logits[i] == v && i < target)) ++rank;
  return rank;
}

/// Top-k item ids by descending score, ties by ascending id.
template <class T>
std::vector<std::size_t> predict_topk(std::span<const T> logits, std::size_t k) {
  if (k > logits.size())
    throw ContractError("predict_topk: k=" + std::to_string(k) + " exceeds " +
                        std::to_string(logits.size()) + " items");
  std::vector<std::size_t> idx(logits.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (logits[a] != logits[b]) return logits[a] > logits[b];
                      return a < b;
                    });
  idx.resize(k);
  return idx;
}

}  // namespace crnn
