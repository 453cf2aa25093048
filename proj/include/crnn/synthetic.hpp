#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crnn/corpus.hpp"
#include "crnn/errors.hpp"
#include "crnn/rng.hpp"

namespace crnn {

/// Context-conditioned Markov process over items. The first event draws its
/// item from `start` and its type from `type_marginal`. Each later event
/// draws a type from `type_marginal`, then an item from the row for
/// (previous item, that type), then a time gap from an exponential whose
/// mean belongs to the same row.
struct SyntheticSpec {
  std::size_t n_items = 0;
  std::vector<std::string> event_types;
  std::vector<double> type_marginal;
  std::vector<double> start;
  // Row (prev * n_types + type) holds the next-item distribution.
  std::vector<double> transitions;
  std::vector<double> mean_gap_seconds;  // one per row
  // length_weights[L] = probability of a session with L events.
  std::vector<double> length_weights;
  std::int64_t start_time_seconds = 1396310400;  // 2014-04-01
  std::int64_t start_window_seconds = 183 * 86400;
  std::size_t n_sessions = 0;
  std::uint64_t seed = 0;
  // Required mean KL divergence between transition rows of different event
  // types that share a previous item. 0 disables the check.
  double min_context_kl = 0.0;

  std::size_t n_types() const { return event_types.size(); }
  std::size_t row_index(std::size_t prev, std::size_t type) const {
    return prev * n_types() + type;
  }
  std::span<const double> row(std::size_t prev, std::size_t type) const {
    return std::span<const double>(transitions).subspan(row_index(prev, type) * n_items, n_items);
  }
};

namespace detail {

inline void check_distribution(std::span<const double> p, const std::string& what) {
  double s = 0.0;
  for (double v : p) {
    if (!std::isfinite(v) || v < 0.0) throw InputError("synthetic spec: " + what + " has a negative or non-finite entry");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-9)
    throw InputError("synthetic spec: " + what + " sums to " + std::to_string(s));
}

inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) return std::numeric_limits<double>::infinity();
    d += p[i] * std::log(p[i] / q[i]);
  }
  return d;
}

}  // namespace detail

/// Mean KL(row(p, a) || row(p, b)) over previous items p and type pairs a != b.
inline double context_informativeness(const SyntheticSpec& s) {
  const std::size_t e = s.n_types();
  if (e < 2) return 0.0;
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < s.n_items; ++p)
    for (std::size_t a = 0; a < e; ++a)
      for (std::size_t b = 0; b < e; ++b) {
        if (a == b) continue;
        total += detail::kl_divergence(s.row(p, a), s.row(p, b));
        ++n;
      }
  return total / static_cast<double>(n);
}

inline void validate(const SyntheticSpec& s) {
  if (s.n_items == 0) throw InputError("synthetic spec: n_items must be positive");
  if (s.event_types.empty()) throw InputError("synthetic spec: no event types");
  const std::size_t rows = s.n_items * s.n_types();
  if (s.type_marginal.size() != s.n_types())
    throw InputError("synthetic spec: type_marginal has wrong size");
  if (s.start.size() != s.n_items) throw InputError("synthetic spec: start has wrong size");
  if (s.transitions.size() != rows * s.n_items)
    throw InputError("synthetic spec: transitions has wrong size");
  if (s.mean_gap_seconds.size() != rows)
    throw InputError("synthetic spec: mean_gap_seconds has wrong size");
  if (s.length_weights.size() < 3) throw InputError("synthetic spec: no session length >= 2");
  if (s.length_weights[0] != 0.0 || s.length_weights[1] != 0.0)
    throw InputError("synthetic spec: sessions need at least two events");
  if (s.start_window_seconds < 0) throw InputError("synthetic spec: negative start window");
  detail::check_distribution(s.type_marginal, "type_marginal");
  detail::check_distribution(s.start, "start");
  detail::check_distribution(s.length_weights, "length_weights");
  for (std::size_t p = 0; p < s.n_items; ++p)
    for (std::size_t t = 0; t < s.n_types(); ++t)
      detail::check_distribution(s.row(p, t), "transition row (" + std::to_string(p) + ", " +
                                                  s.event_types[t] + ")");
  for (double g : s.mean_gap_seconds)
    if (!std::isfinite(g) || g <= 0.0) throw InputError("synthetic spec: mean gaps must be positive");
  if (s.min_context_kl > 0.0) {
    const double kl = context_informativeness(s);
    if (!(kl > s.min_context_kl))
      throw InputError("synthetic spec: context informativeness " + std::to_string(kl) +
                       " not above threshold " + std::to_string(s.min_context_kl));
  }
}

/// Parameters for drawing a random context-informative spec.
struct SyntheticRecipe {
  std::size_t n_items = 100;
  std::vector<std::string> event_types{"view", "cart", "sale"};
  std::vector<double> type_marginal;  // empty = uniform
  std::size_t support = 6;            // items carrying the sparse mass of each row
  double sparse_mass = 0.8;           // remainder spread uniformly over all items
  std::size_t min_length = 2;
  std::size_t max_length = 20;
  double length_decay = 0.8;  // P(L) proportional to decay^(L - min_length)
  double min_gap_seconds = 5.0;
  double max_gap_seconds = 3600.0;
  std::size_t n_sessions = 1000;
  std::uint64_t seed = 0;
  double min_context_kl = 0.1;
};

inline SyntheticSpec make_spec(const SyntheticRecipe& r) {
  if (r.n_items == 0 || r.event_types.empty()) throw InputError("synthetic recipe: empty vocabulary");
  if (r.support == 0 || r.support > r.n_items)
    throw InputError("synthetic recipe: support must be in [1, n_items]");
  if (!(r.sparse_mass >= 0.0 && r.sparse_mass <= 1.0))
    throw InputError("synthetic recipe: sparse_mass must be in [0, 1]");
  if (r.min_length < 2 || r.max_length < r.min_length)
    throw InputError("synthetic recipe: need 2 <= min_length <= max_length");
  if (!(r.length_decay > 0.0)) throw InputError("synthetic recipe: length_decay must be positive");
  if (!(r.min_gap_seconds > 0.0 && r.max_gap_seconds >= r.min_gap_seconds))
    throw InputError("synthetic recipe: need 0 < min_gap_seconds <= max_gap_seconds");

  SyntheticSpec s;
  s.n_items = r.n_items;
  s.event_types = r.event_types;
  s.n_sessions = r.n_sessions;
  s.seed = r.seed;
  s.min_context_kl = r.min_context_kl;
  const std::size_t e = r.event_types.size(), v = r.n_items;
  s.type_marginal = r.type_marginal.empty() ? std::vector<double>(e, 1.0 / static_cast<double>(e))
                                            : r.type_marginal;
  s.start.assign(v, 1.0 / static_cast<double>(v));

  Rng rng(r.seed ^ 0x9e3779b97f4a7c15ull);
  s.transitions.assign(v * e * v, (1.0 - r.sparse_mass) / static_cast<double>(v));
  s.mean_gap_seconds.resize(v * e);
  std::vector<std::size_t> items(v);
  const double log_lo = std::log(r.min_gap_seconds), log_hi = std::log(r.max_gap_seconds);
  for (std::size_t row = 0; row < v * e; ++row) {
    std::iota(items.begin(), items.end(), std::size_t{0});
    rng.shuffle(items);
    std::vector<double> w(r.support);
    double total = 0.0;
    for (double& x : w) total += (x = 0.2 + rng.uniform());
    double* dst = &s.transitions[row * v];
    for (std::size_t j = 0; j < r.support; ++j) dst[items[j]] += r.sparse_mass * w[j] / total;
    // Renormalize away rounding so rows sum to one within a few ulps.
    double sum = 0.0;
    for (std::size_t j = 0; j < v; ++j) sum += dst[j];
    for (std::size_t j = 0; j < v; ++j) dst[j] /= sum;
    s.mean_gap_seconds[row] = std::exp(rng.uniform(log_lo, log_hi));
  }

  s.length_weights.assign(r.max_length + 1, 0.0);
  double total = 0.0;
  for (std::size_t L = r.min_length; L <= r.max_length; ++L)
    total += (s.length_weights[L] = std::pow(r.length_decay, static_cast<double>(L - r.min_length)));
  for (double& w : s.length_weights) w /= total;
  validate(s);
  return s;
}

/// Draws spec.n_sessions sessions. Session ids are "s<n>", item and event
/// type indices are dense.
inline std::vector<Session> generate_synthetic(const SyntheticSpec& spec) {
  validate(spec);
  Rng rng(spec.seed);
  std::vector<Session> out;
  out.reserve(spec.n_sessions);
  for (std::size_t n = 0; n < spec.n_sessions; ++n) {
    Session s;
    s.id = "s" + std::to_string(n);
    const std::size_t len = rng.categorical(spec.length_weights);
    const auto offset = static_cast<std::int64_t>(
        rng.below(static_cast<std::uint64_t>(spec.start_window_seconds) + 1));
    std::int64_t ts_ms = (spec.start_time_seconds + offset) * 1000;
    std::size_t item = rng.categorical(spec.start);
    std::size_t type = rng.categorical(spec.type_marginal);
    s.events.push_back({ts_ms, item, type});
    for (std::size_t i = 1; i < len; ++i) {
      type = rng.categorical(spec.type_marginal);
      const std::size_t row = spec.row_index(item, type);
      item = rng.categorical(spec.row(s.events.back().item, type));
      const double gap = -std::log(1.0 - rng.uniform()) * spec.mean_gap_seconds[row];
      ts_ms += static_cast<std::int64_t>(std::floor(gap * 1000.0));
      s.events.push_back({ts_ms, item, type});
    }
    out.push_back(std::move(s));
  }
  return out;
}

/// Vocabulary matching generate_synthetic: item ids "0".."n-1", no OOV slot.
inline CorpusVocab synthetic_vocab(const SyntheticSpec& spec) {
  std::vector<std::string> ids(spec.n_items);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = std::to_string(i);
  return CorpusVocab{ItemVocab(std::move(ids), false), EventTypeVocab(spec.event_types)};
}

/// Sum of the k largest entries.
inline double top_k_mass(std::span<const double> p, std::size_t k) {
  std::vector<double> v(p.begin(), p.end());
  k = std::min(k, v.size());
  std::partial_sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end(),
                    std::greater<>());
  return std::accumulate(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), 0.0);
}

/// Best achievable event-weighted Recall@k for a predictor that knows the
/// spec, the previous item and the target's event type. Gaps and calendar
/// fields are independent of the next item given those, so they add nothing.
inline double bayes_recall_at_k(const SyntheticSpec& spec, std::size_t k) {
  validate(spec);
  const std::size_t v = spec.n_items, e = spec.n_types();
  // Per previous item: expected top-k mass over the target's type.
  std::vector<double> best(v, 0.0);
  // Marginal next-item kernel, averaging out the type.
  std::vector<double> kernel(v * v, 0.0);
  for (std::size_t p = 0; p < v; ++p)
    for (std::size_t t = 0; t < e; ++t) {
      best[p] += spec.type_marginal[t] * top_k_mass(spec.row(p, t), k);
      const auto r = spec.row(p, t);
      for (std::size_t j = 0; j < v; ++j) kernel[p * v + j] += spec.type_marginal[t] * r[j];
    }
  // Expected prediction events at position i (1-based target index) is
  // P(L > i); the previous item there has marginal pi_{i-1}.
  std::vector<double> pi = spec.start;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 1; i < spec.length_weights.size(); ++i) {
    double weight = 0.0;
    for (std::size_t L = i + 1; L < spec.length_weights.size(); ++L) weight += spec.length_weights[L];
    if (weight == 0.0) break;
    double r = 0.0;
    for (std::size_t p = 0; p < v; ++p) r += pi[p] * best[p];
    num += weight * r;
    den += weight;
    std::vector<double> next(v, 0.0);
    for (std::size_t p = 0; p < v; ++p)
      for (std::size_t j = 0; j < v; ++j) next[j] += pi[p] * kernel[p * v + j];
    pi = std::move(next);
  }
  return num / den;
}

inline nlohmann::json to_json(const SyntheticSpec& s) {
  return nlohmann::json{{"format", "crnn-synthetic-spec"},
                        {"version", 1},
                        {"n_items", s.n_items},
                        {"event_types", s.event_types},
                        {"type_marginal", s.type_marginal},
                        {"start", s.start},
                        {"transitions", s.transitions},
                        {"mean_gap_seconds", s.mean_gap_seconds},
                        {"length_weights", s.length_weights},
                        {"start_time_seconds", s.start_time_seconds},
                        {"start_window_seconds", s.start_window_seconds},
                        {"n_sessions", s.n_sessions},
                        {"seed", s.seed},
                        {"min_context_kl", s.min_context_kl}};
}

inline SyntheticSpec spec_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "crnn-synthetic-spec") throw InputError("not a synthetic spec");
    SyntheticSpec s;
    s.n_items = j.at("n_items").get<std::size_t>();
    s.event_types = j.at("event_types").get<std::vector<std::string>>();
    s.type_marginal = j.at("type_marginal").get<std::vector<double>>();
    s.start = j.at("start").get<std::vector<double>>();
    s.transitions = j.at("transitions").get<std::vector<double>>();
    s.mean_gap_seconds = j.at("mean_gap_seconds").get<std::vector<double>>();
    s.length_weights = j.at("length_weights").get<std::vector<double>>();
    s.start_time_seconds = j.at("start_time_seconds").get<std::int64_t>();
    s.start_window_seconds = j.at("start_window_seconds").get<std::int64_t>();
    s.n_sessions = j.at("n_sessions").get<std::size_t>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.min_context_kl = j.at("min_context_kl").get<double>();
    validate(s);
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed synthetic spec: ") + e.what());
  }
}

}  // namespace crnn
