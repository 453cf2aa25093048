#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crnn/context.hpp"
#include "crnn/model.hpp"
#include "crnn/rng.hpp"
#include "crnn/training.hpp"

namespace crnn {

/// One next-item prediction and the labels used to slice results.
struct PredictionRecord {
  std::size_t session = 0;  // index of the session in the scored corpus
  std::size_t step = 0;     // position of the target event, >= 1
  std::size_t target = 0;
  std::size_t rank = 0;  // items ranked ahead of the target
  std::size_t event_type = 0;
  bool is_new = false;  // target absent from the session's earlier events
  std::size_t time_delta_bucket = 0;
  std::size_t prefix_length = 0;

  bool hit(std::size_t k) const { return rank < k; }

  friend bool operator==(const PredictionRecord&, const PredictionRecord&) = default;
};

/// Scores every prediction position of a corpus with the eager forward
/// path, `batch_size` sessions at a time.
template <class T>
std::vector<PredictionRecord> score_corpus(const ModelParams<T>& params, const ModelConfig& cfg,
                                           const EncodedCorpus& corpus,
                                           std::size_t batch_size = 256) {
  check_params(cfg, params);
  std::vector<PredictionRecord> out;
  out.reserve(corpus.prediction_count());
  EagerOps<T> ops;
  for (std::size_t start = 0; start < corpus.sessions.size(); start += batch_size) {
    const std::size_t end = std::min(corpus.sessions.size(), start + batch_size);
    std::vector<const Session*> ss;
    std::vector<const std::vector<ContextVector>*> cs;
    for (std::size_t i = start; i < end; ++i) {
      if (corpus.sessions[i].events.size() < 2)
        throw EvaluationError("session " + corpus.sessions[i].id + " has fewer than two events");
      ss.push_back(&corpus.sessions[i]);
      cs.push_back(&corpus.contexts[i]);
    }
    const Batch<T> batch =
        make_batch<T, Session>(ss, cs, corpus.context_active, corpus.context_dim);
    std::vector<std::vector<PredictionRecord>> per_session(ss.size());
    run_batch(ops, params, cfg, batch, [&](std::size_t t, const Matrix<T>& logits) {
      for (std::size_t row = 0; row < logits.rows(); ++row) {
        const std::size_t b = batch.order[row];
        const auto& ev = ss[b]->events;
        if (t >= ev.size()) continue;
        PredictionRecord r;
        r.session = start + b;
        r.step = t;
        r.target = ev[t].item;
        r.rank = rank_of<T>(logits.row(row), ev[t].item);
        r.event_type = ev[t].event_type;
        r.is_new = std::none_of(ev.begin(), ev.begin() + static_cast<std::ptrdiff_t>(t),
                                [&](const Event& e) { return e.item == ev[t].item; });
        r.time_delta_bucket =
            bucket_time_delta(std::max<std::int64_t>(0, ev[t].seconds() - ev[t - 1].seconds()));
        r.prefix_length = t;
        per_session[b].push_back(r);
      }
    });
    for (auto& v : per_session) out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

/// Fraction of records whose target is in the top k, averaged over events.
inline double recall_at_k(const std::vector<PredictionRecord>& records, std::size_t k) {
  if (records.empty()) throw EvaluationError("recall_at_k: no prediction records");
  std::size_t hits = 0;
  for (const auto& r : records) hits += r.hit(k) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

struct Interval {
  double low = 0.0;
  double high = 0.0;

  bool contains(double x) const { return low <= x && x <= high; }
  bool excludes_zero() const { return low > 0.0 || high < 0.0; }
};

/// Linear-interpolation quantile of sorted values, q in [0, 1].
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw EvaluationError("quantile of empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline Interval percentile_interval(std::vector<double> values, double level) {
  std::sort(values.begin(), values.end());
  const double tail = (1.0 - level) / 2.0;
  return {quantile_sorted(values, tail), quantile_sorted(values, 1.0 - tail)};
}

struct BootstrapOptions {
  std::size_t resamples = 30;
  double level = 0.95;
  std::uint64_t seed = 0;
};

enum class ProjectionAxis { event_type, new_historical, time_gap, seq_length };

inline std::string_view to_string(ProjectionAxis a) {
  switch (a) {
    case ProjectionAxis::event_type: return "event-type";
    case ProjectionAxis::new_historical: return "new-historical";
    case ProjectionAxis::time_gap: return "time-gap";
    case ProjectionAxis::seq_length: return "seq-length";
  }
  return "?";
}

inline std::optional<ProjectionAxis> parse_projection_axis(std::string_view s) {
  for (auto a : {ProjectionAxis::event_type, ProjectionAxis::new_historical,
                 ProjectionAxis::time_gap, ProjectionAxis::seq_length})
    if (s == to_string(a)) return a;
  return std::nullopt;
}

inline const std::vector<ProjectionAxis>& all_projection_axes() {
  static const std::vector<ProjectionAxis> axes{
      ProjectionAxis::event_type, ProjectionAxis::new_historical, ProjectionAxis::time_gap,
      ProjectionAxis::seq_length};
  return axes;
}

/// Bucket labelling for projections. Sequence-length buckets are given by
/// ascending lower edges; bucket i covers [edge_i, edge_{i+1}).
struct ProjectionOptions {
  std::vector<std::size_t> length_edges{1, 2, 3, 4, 5, 10, 20};
  std::vector<std::string> event_type_names;
};

/// Bucket key of a record on an axis; keys order the buckets.
inline std::size_t bucket_key(const PredictionRecord& r, ProjectionAxis axis,
                              const ProjectionOptions& opt) {
  switch (axis) {
    case ProjectionAxis::event_type: return r.event_type;
    case ProjectionAxis::new_historical: return r.is_new ? 0 : 1;
    case ProjectionAxis::time_gap: return r.time_delta_bucket;
    case ProjectionAxis::seq_length: {
      const auto& e = opt.length_edges;
      std::size_t b = 0;
      while (b + 1 < e.size() && r.prefix_length >= e[b + 1]) ++b;
      if (!e.empty() && r.prefix_length >= e.back()) b = e.size() - 1;
      return b;
    }
  }
  return 0;
}

inline std::string bucket_label(std::size_t key, ProjectionAxis axis, const ProjectionOptions& opt) {
  switch (axis) {
    case ProjectionAxis::event_type:
      if (key < opt.event_type_names.size()) return opt.event_type_names[key];
      return key == opt.event_type_names.size() && !opt.event_type_names.empty()
                 ? std::string("<oov>")
                 : std::to_string(key);
    case ProjectionAxis::new_historical: return key == 0 ? "new" : "historical";
    case ProjectionAxis::time_gap: return std::to_string(key);
    case ProjectionAxis::seq_length: {
      const auto& e = opt.length_edges;
      if (key + 1 >= e.size()) return std::to_string(e.back()) + "+";
      if (e[key + 1] == e[key] + 1) return std::to_string(e[key]);
      return std::to_string(e[key]) + "-" + std::to_string(e[key + 1] - 1);
    }
  }
  return "?";
}

namespace detail {

// Per-session hit and event tallies for one subset of records.
struct SessionTally {
  std::vector<double> hits;
  std::vector<double> count;
};

inline std::vector<std::size_t> session_ids(const std::vector<PredictionRecord>& records) {
  std::vector<std::size_t> ids;
  for (const auto& r : records) ids.push_back(r.session);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

template <class Pred>
SessionTally tally(const std::vector<PredictionRecord>& records,
                   const std::vector<std::size_t>& sessions, std::size_t k, Pred include) {
  SessionTally t;
  t.hits.assign(sessions.size(), 0.0);
  t.count.assign(sessions.size(), 0.0);
  for (const auto& r : records) {
    if (!include(r)) continue;
    const auto pos = static_cast<std::size_t>(
        std::lower_bound(sessions.begin(), sessions.end(), r.session) - sessions.begin());
    t.hits[pos] += r.hit(k) ? 1.0 : 0.0;
    t.count[pos] += 1.0;
  }
  return t;
}

// Seeded session resamples shared by all statistics of one evaluation.
inline std::vector<std::vector<std::size_t>> draw_resamples(std::size_t n_sessions,
                                                            const BootstrapOptions& opt) {
  Rng rng(opt.seed);
  std::vector<std::vector<std::size_t>> out(opt.resamples);
  for (auto& draw : out) {
    draw.resize(n_sessions);
    for (auto& d : draw) d = static_cast<std::size_t>(rng.below(n_sessions));
  }
  return out;
}

// Recall of a tally under each resample; resamples with no events are skipped.
inline std::vector<double> resampled_recalls(const SessionTally& t,
                                             const std::vector<std::vector<std::size_t>>& draws) {
  std::vector<double> out;
  for (const auto& draw : draws) {
    double h = 0.0, c = 0.0;
    for (std::size_t s : draw) {
      h += t.hits[s];
      c += t.count[s];
    }
    if (c > 0.0) out.push_back(h / c);
  }
  return out;
}

}  // namespace detail

/// Percentile bootstrap interval for Recall@k, resampling whole sessions.
inline Interval bootstrap_ci(const std::vector<PredictionRecord>& records, std::size_t k,
                             const BootstrapOptions& opt = {}) {
  if (records.empty()) throw EvaluationError("bootstrap_ci: no prediction records");
  if (opt.resamples == 0) throw EvaluationError("bootstrap_ci: need at least one resample");
  const auto sessions = detail::session_ids(records);
  const auto t = detail::tally(records, sessions, k, [](const PredictionRecord&) { return true; });
  const auto draws = detail::draw_resamples(sessions.size(), opt);
  return percentile_interval(detail::resampled_recalls(t, draws), opt.level);
}

struct BucketRow {
  std::string label;
  std::size_t key = 0;
  std::size_t count = 0;
  double volume = 0.0;  // count / total events
  double recall = 0.0;
  Interval ci;
};

/// Exhaustive, disjoint partition of records along an axis with per-bucket
/// recall, bootstrap interval and relative volume.
inline std::vector<BucketRow> project(const std::vector<PredictionRecord>& records,
                                      ProjectionAxis axis, std::size_t k,
                                      const ProjectionOptions& popt = {},
                                      const BootstrapOptions& bopt = {}) {
  if (records.empty()) return {};
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> counts;  // key -> (events, hits)
  for (const auto& r : records) {
    auto& c = counts[bucket_key(r, axis, popt)];
    ++c.first;
    c.second += r.hit(k) ? 1 : 0;
  }
  const auto sessions = detail::session_ids(records);
  const auto draws = detail::draw_resamples(sessions.size(), bopt);
  std::vector<BucketRow> rows;
  for (const auto& [key, c] : counts) {
    BucketRow row;
    row.key = key;
    row.label = bucket_label(key, axis, popt);
    row.count = c.first;
    row.volume = static_cast<double>(c.first) / static_cast<double>(records.size());
    row.recall = static_cast<double>(c.second) / static_cast<double>(c.first);
    const auto t = detail::tally(records, sessions, k, [&, key = key](const PredictionRecord& r) {
      return bucket_key(r, axis, popt) == key;
    });
    if (bopt.resamples > 0) {
      auto vals = detail::resampled_recalls(t, draws);
      row.ci = vals.empty() ? Interval{row.recall, row.recall} : percentile_interval(vals, bopt.level);
    }
    rows.push_back(row);
  }
  return rows;
}

struct EvalReport {
  std::string model;
  std::size_t k = 10;
  std::size_t events = 0;
  std::size_t sessions = 0;
  double recall = 0.0;
  Interval ci;
  std::string fingerprint;  // identifies the scored test set
  std::vector<std::pair<ProjectionAxis, std::vector<BucketRow>>> projections;
};

/// FNV-1a over (session id, step, target) of every record.
inline std::string records_fingerprint(const std::vector<PredictionRecord>& records) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xffu;
      h *= 1099511628211ull;
    }
  };
  for (const auto& r : records) {
    mix(r.session);
    mix(r.step);
    mix(r.target);
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline EvalReport make_report(const std::vector<PredictionRecord>& records, std::size_t k,
                              const std::vector<ProjectionAxis>& axes,
                              const ProjectionOptions& popt = {},
                              const BootstrapOptions& bopt = {}, std::string model = {}) {
  EvalReport rep;
  rep.model = std::move(model);
  rep.k = k;
  rep.events = records.size();
  rep.sessions = detail::session_ids(records).size();
  rep.recall = recall_at_k(records, k);
  rep.ci = bootstrap_ci(records, k, bopt);
  rep.fingerprint = records_fingerprint(records);
  for (auto axis : axes) rep.projections.emplace_back(axis, project(records, axis, k, popt, bopt));
  return rep;
}

/// 100 * (a - b) / b.
inline double uplift_percent(double a, double b) {
  if (b == 0.0) throw EvaluationError("uplift: baseline value is zero");
  return 100.0 * (a - b) / b;
}

struct UpliftCell {
  std::string axis;  // "overall" or a projection axis
  std::string bucket;
  double a = 0.0;
  double b = 0.0;
  double uplift = 0.0;  // percent; NaN when the baseline is zero
  Interval diff_ci;     // bootstrap interval of a - b
  bool significant = false;
};

/// Paired comparison of two scorings of the same test set. Both record
/// lists are resampled with the same session draws; a cell is significant
/// when the interval of the recall difference excludes zero.
inline std::vector<UpliftCell> uplift(const std::vector<PredictionRecord>& a,
                                      const std::vector<PredictionRecord>& b, std::size_t k,
                                      const std::vector<ProjectionAxis>& axes,
                                      const ProjectionOptions& popt = {},
                                      const BootstrapOptions& bopt = {}) {
  if (a.size() != b.size() || records_fingerprint(a) != records_fingerprint(b))
    throw EvaluationError("uplift: reports were computed on different test sets");
  if (a.empty()) throw EvaluationError("uplift: no prediction records");
  const auto sessions = detail::session_ids(a);
  const auto draws = detail::draw_resamples(sessions.size(), bopt);

  auto cell = [&](std::string axis, std::string bucket, auto include) {
    const auto ta = detail::tally(a, sessions, k, include);
    const auto tb = detail::tally(b, sessions, k, include);
    double ha = 0, hb = 0, c = 0;
    for (std::size_t i = 0; i < sessions.size(); ++i) {
      ha += ta.hits[i];
      hb += tb.hits[i];
      c += ta.count[i];
    }
    UpliftCell u;
    u.axis = std::move(axis);
    u.bucket = std::move(bucket);
    u.a = ha / c;
    u.b = hb / c;
    u.uplift = u.b == 0.0 ? std::numeric_limits<double>::quiet_NaN() : uplift_percent(u.a, u.b);
    std::vector<double> diffs;
    for (const auto& draw : draws) {
      double da = 0, db = 0, dc = 0;
      for (std::size_t s : draw) {
        da += ta.hits[s];
        db += tb.hits[s];
        dc += ta.count[s];
      }
      if (dc > 0) diffs.push_back((da - db) / dc);
    }
    if (!diffs.empty()) {
      u.diff_ci = percentile_interval(diffs, bopt.level);
      u.significant = u.diff_ci.excludes_zero();
    }
    return u;
  };

  std::vector<UpliftCell> out;
  out.push_back(cell("overall", "all", [](const PredictionRecord&) { return true; }));
  for (auto axis : axes) {
    std::map<std::size_t, bool> keys;
    for (const auto& r : a) keys[bucket_key(r, axis, popt)] = true;
    for (const auto& [key, unused] : keys) {
      (void)unused;
      out.push_back(cell(std::string(to_string(axis)), bucket_label(key, axis, popt),
                         [&, key = key](const PredictionRecord& r) {
                           return bucket_key(r, axis, popt) == key;
                         }));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report files

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j{{"format", "crnn-eval-report"},
                   {"version", 1},
                   {"model", r.model},
                   {"k", r.k},
                   {"events", r.events},
                   {"sessions", r.sessions},
                   {"recall", r.recall},
                   {"ci", {r.ci.low, r.ci.high}},
                   {"fingerprint", r.fingerprint}};
  nlohmann::json proj = nlohmann::json::object();
  for (const auto& [axis, rows] : r.projections) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& row : rows)
      arr.push_back({{"bucket", row.label},
                     {"count", row.count},
                     {"volume", row.volume},
                     {"recall", row.recall},
                     {"ci", {row.ci.low, row.ci.high}}});
    proj[std::string(to_string(axis))] = arr;
  }
  j["projections"] = proj;
  return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "crnn-eval-report") throw EvaluationError("not an evaluation report");
    EvalReport r;
    r.model = j.at("model").get<std::string>();
    r.k = j.at("k").get<std::size_t>();
    r.events = j.at("events").get<std::size_t>();
    r.sessions = j.at("sessions").get<std::size_t>();
    r.recall = j.at("recall").get<double>();
    r.ci = {j.at("ci").at(0).get<double>(), j.at("ci").at(1).get<double>()};
    r.fingerprint = j.at("fingerprint").get<std::string>();
    for (const auto& [name, arr] : j.at("projections").items()) {
      const auto axis = parse_projection_axis(name);
      if (!axis) throw EvaluationError("unknown projection axis " + name);
      std::vector<BucketRow> rows;
      std::size_t key = 0;
      for (const auto& e : arr) {
        BucketRow row;
        row.key = key++;
        row.label = e.at("bucket").get<std::string>();
        row.count = e.at("count").get<std::size_t>();
        row.volume = e.at("volume").get<double>();
        row.recall = e.at("recall").get<double>();
        row.ci = {e.at("ci").at(0).get<double>(), e.at("ci").at(1).get<double>()};
        rows.push_back(std::move(row));
      }
      r.projections.emplace_back(*axis, std::move(rows));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw EvaluationError(std::string("malformed report: ") + e.what());
  }
}

/// Aligned plain-text table: overall recall, then one block per projection.
inline std::string format_report_table(const EvalReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "model: " << (r.model.empty() ? "-" : r.model) << "\n";
  os << "Recall@" << r.k << " = " << r.recall << "  [" << r.ci.low << ", " << r.ci.high
     << "]  (" << r.events << " events, " << r.sessions << " sessions)\n";
  for (const auto& [axis, rows] : r.projections) {
    os << "\n" << to_string(axis) << "\n";
    os << "  " << std::left << std::setw(12) << "bucket" << std::right << std::setw(9) << "events"
       << std::setw(9) << "volume" << std::setw(9) << "recall" << std::setw(20) << "95% CI" << "\n";
    for (const auto& row : rows) {
      std::ostringstream ci;
      ci << std::fixed << std::setprecision(4) << "[" << row.ci.low << ", " << row.ci.high << "]";
      os << "  " << std::left << std::setw(12) << row.label << std::right << std::setw(9)
         << row.count << std::setw(9) << row.volume << std::setw(9) << row.recall << std::setw(20)
         << ci.str() << "\n";
    }
  }
  return os.str();
}

inline std::string format_uplift_table(const std::vector<UpliftCell>& cells,
                                       const std::string& name_a, const std::string& name_b) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "uplift of " << name_a << " over " << name_b << "\n";
  os << "  " << std::left << std::setw(16) << "axis" << std::setw(12) << "bucket" << std::right
     << std::setw(9) << "model" << std::setw(9) << "base" << std::setw(10) << "uplift"
     << std::setw(24) << "diff 95% CI" << "  sig\n";
  for (const auto& c : cells) {
    std::ostringstream up, ci;
    if (std::isnan(c.uplift))
      up << "n/a";
    else
      up << std::fixed << std::setprecision(1) << std::showpos << c.uplift << "%";
    ci << std::fixed << std::setprecision(4) << "[" << c.diff_ci.low << ", " << c.diff_ci.high << "]";
    os << "  " << std::left << std::setw(16) << c.axis << std::setw(12) << c.bucket << std::right
       << std::setw(9) << c.a << std::setw(9) << c.b << std::setw(10) << up.str() << std::setw(24)
       << ci.str() << "  " << (c.significant ? "*" : "") << "\n";
  }
  return os.str();
}

inline nlohmann::json to_json(const std::vector<UpliftCell>& cells) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : cells)
    arr.push_back({{"axis", c.axis},
                   {"bucket", c.bucket},
                   {"a", c.a},
                   {"b", c.b},
                   {"uplift_percent", c.uplift},
                   {"diff_ci", {c.diff_ci.low, c.diff_ci.high}},
                   {"significant", c.significant}});
  return arr;
}

/// Tab-separated records: session step target rank event_type is_new
/// time_delta_bucket prefix_length.
inline void write_records(const std::string& path, const std::vector<PredictionRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw EvaluationError("cannot write " + path);
  out << "#session\tstep\ttarget\trank\tevent_type\tis_new\ttime_delta_bucket\tprefix_length\n";
  for (const auto& r : records)
    out << r.session << '\t' << r.step << '\t' << r.target << '\t' << r.rank << '\t'
        << r.event_type << '\t' << (r.is_new ? 1 : 0) << '\t' << r.time_delta_bucket << '\t'
        << r.prefix_length << '\n';
}

inline std::vector<PredictionRecord> read_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw EvaluationError("cannot open " + path);
  std::vector<PredictionRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    PredictionRecord r;
    int is_new = 0;
    if (!(is >> r.session >> r.step >> r.target >> r.rank >> r.event_type >> is_new >>
          r.time_delta_bucket >> r.prefix_length))
      throw EvaluationError("malformed record line in " + path);
    r.is_new = is_new != 0;
    out.push_back(r);
  }
  return out;
}

/// Plot data for one projection: x, y, ci_low, ci_high, volume.
inline void write_plot_data(const std::string& path, const std::vector<BucketRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw EvaluationError("cannot write " + path);
  out << "x\ty\tci_low\tci_high\tvolume\n";
  out << std::setprecision(10);
  for (const auto& r : rows)
    out << r.label << '\t' << r.recall << '\t' << r.ci.low << '\t' << r.ci.high << '\t'
        << r.volume << '\n';
}

}  // namespace crnn
