#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "crnn/context.hpp"
#include "crnn/errors.hpp"
#include "crnn/rng.hpp"

namespace crnn {

inline constexpr std::string_view kOovToken = "<oov>";

/// One interaction as read from a raw log, before vocabulary encoding.
struct RawEvent {
  std::string session_id;
  std::int64_t timestamp_ms = 0;
  std::string item;
  std::string event_type;

  friend bool operator==(const RawEvent&, const RawEvent&) = default;
};

struct RawSession {
  std::string id;
  std::vector<RawEvent> events;

  friend bool operator==(const RawSession&, const RawSession&) = default;
};

/// Vocabulary-encoded event.
struct Event {
  std::int64_t timestamp_ms = 0;
  std::size_t item = 0;
  std::size_t event_type = 0;

  std::int64_t seconds() const {
    return timestamp_ms >= 0 ? timestamp_ms / 1000 : -((-timestamp_ms + 999) / 1000);
  }

  friend bool operator==(const Event&, const Event&) = default;
};

struct Session {
  std::string id;
  std::vector<Event> events;

  friend bool operator==(const Session&, const Session&) = default;
};

/// External item id <-> dense index. Retained ids occupy [0, retained());
/// when an OOV slot is reserved it is the last index.
class ItemVocab {
 public:
  ItemVocab() = default;
  ItemVocab(std::vector<std::string> ids, bool reserve_oov, std::size_t min_count = 1)
      : ids_(std::move(ids)), has_oov_(reserve_oov), min_count_(min_count) {
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      if (ids_[i] == kOovToken) throw VocabularyError("item id collides with OOV token");
      if (!index_.emplace(ids_[i], i).second)
        throw VocabularyError("duplicate item id '" + ids_[i] + "'");
    }
  }

  std::size_t size() const noexcept { return ids_.size() + (has_oov_ ? 1 : 0); }
  std::size_t retained() const noexcept { return ids_.size(); }
  bool has_oov() const noexcept { return has_oov_; }
  std::size_t min_count() const noexcept { return min_count_; }
  const std::vector<std::string>& ids() const noexcept { return ids_; }

  std::size_t oov_index() const {
    if (!has_oov_) throw VocabularyError("vocabulary has no OOV slot");
    return ids_.size();
  }

  std::optional<std::size_t> find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  /// Dense index; unknown ids go to the OOV slot when one exists.
  std::size_t encode(std::string_view id) const {
    if (auto i = find(id)) return *i;
    if (has_oov_) return oov_index();
    throw VocabularyError("unknown item id '" + std::string(id) + "'");
  }

  std::string decode(std::size_t index) const {
    if (index < ids_.size()) return ids_[index];
    if (has_oov_ && index == ids_.size()) return std::string(kOovToken);
    throw VocabularyError("item index " + std::to_string(index) + " outside vocabulary of " +
                          std::to_string(size()));
  }

  friend bool operator==(const ItemVocab& a, const ItemVocab& b) {
    return a.ids_ == b.ids_ && a.has_oov_ == b.has_oov_ && a.min_count_ == b.min_count_;
  }

 private:
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::size_t> index_;
  bool has_oov_ = true;
  std::size_t min_count_ = 1;
};

// ---------------------------------------------------------------------------
// YooChoose ingestion

/// Milliseconds since the epoch for "YYYY-MM-DDTHH:MM:SS[.fff][Z]".
inline std::optional<std::int64_t> parse_iso8601_ms(std::string_view s) {
  auto num = [&](std::size_t pos, std::size_t len, int& out) {
    if (pos + len > s.size()) return false;
    const char* b = s.data() + pos;
    auto [p, ec] = std::from_chars(b, b + len, out);
    return ec == std::errc{} && p == b + len;
  };
  int y, mo, d, h, mi, sec;
  if (s.size() < 19 || s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != ' ') ||
      s[13] != ':' || s[16] != ':')
    return std::nullopt;
  if (!num(0, 4, y) || !num(5, 2, mo) || !num(8, 2, d) || !num(11, 2, h) || !num(14, 2, mi) ||
      !num(17, 2, sec))
    return std::nullopt;
  std::size_t pos = 19;
  int ms = 0;
  if (pos < s.size() && s[pos] == '.') {
    ++pos;
    int digits = 0;
    while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
      if (digits < 3) ms = ms * 10 + (s[pos] - '0');
      ++digits;
      ++pos;
    }
    if (digits == 0) return std::nullopt;
    for (int i = digits; i < 3; ++i) ms *= 10;
  }
  if (pos < s.size() && s[pos] == 'Z') ++pos;
  if (pos != s.size()) return std::nullopt;
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || sec > 60) return std::nullopt;
  const std::int64_t days_since = sys_days{ymd}.time_since_epoch().count();
  return ((days_since * 24 + h) * 60 + mi) * 60000 + std::int64_t{sec} * 1000 + ms;
}

struct LoadReport {
  std::size_t click_rows = 0;
  std::size_t click_malformed = 0;
  std::size_t buy_rows = 0;
  std::size_t buy_malformed = 0;

  double malformed_fraction() const {
    const std::size_t rows = click_rows + buy_rows;
    return rows == 0 ? 0.0 : static_cast<double>(click_malformed + buy_malformed) / rows;
  }
};

struct LoadedCorpus {
  std::vector<RawSession> sessions;
  LoadReport report;
};

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t p = line.find(sep, start);
    if (p == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, p - start));
    start = p + 1;
  }
}

inline std::string_view trim_cr(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.remove_suffix(1);
  return s;
}

inline bool looks_like_header(std::string_view line) {
  return !line.empty() && !(line[0] >= '0' && line[0] <= '9');
}

// Reads clicks (session,timestamp,item[,category]) or buys
// (session,timestamp,item,price,quantity) rows.
inline void read_yoochoose_file(const std::string& path, bool buys, std::vector<RawEvent>& out,
                                std::size_t& rows, std::size_t& malformed) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    const std::string_view l = trim_cr(line);
    if (l.empty()) continue;
    if (first && looks_like_header(l)) {
      first = false;
      continue;
    }
    first = false;
    ++rows;
    const auto f = split_fields(l, ',');
    const bool arity_ok = buys ? f.size() == 5 : (f.size() == 3 || f.size() == 4);
    if (!arity_ok || f[0].empty() || f[2].empty()) {
      ++malformed;
      continue;
    }
    const auto ts = parse_iso8601_ms(f[1]);
    if (!ts) {
      ++malformed;
      continue;
    }
    out.push_back(RawEvent{std::string(f[0]), *ts, std::string(f[2]), buys ? "sale" : "view"});
  }
}

}  // namespace detail

/// Merges clicks and buys per session, ordered by time. At equal timestamps
/// a view sorts before a sale; otherwise file order is kept. Sessions appear
/// in order of first occurrence.
inline LoadedCorpus load_yoochoose(const std::string& clicks_path, const std::string& buys_path,
                                   double max_malformed_fraction = 0.01) {
  LoadedCorpus out;
  std::vector<RawEvent> events;
  detail::read_yoochoose_file(clicks_path, false, events, out.report.click_rows,
                              out.report.click_malformed);
  detail::read_yoochoose_file(buys_path, true, events, out.report.buy_rows,
                              out.report.buy_malformed);
  if (out.report.malformed_fraction() > max_malformed_fraction) {
    std::ostringstream msg;
    msg << "load_yoochoose: " << (out.report.click_malformed + out.report.buy_malformed)
        << " malformed rows out of " << (out.report.click_rows + out.report.buy_rows)
        << " exceeds the allowed fraction";
    throw InputError(msg.str());
  }
  std::unordered_map<std::string, std::size_t> slot;
  for (auto& e : events) {
    auto [it, inserted] = slot.emplace(e.session_id, out.sessions.size());
    if (inserted) out.sessions.push_back(RawSession{e.session_id, {}});
    out.sessions[it->second].events.push_back(std::move(e));
  }
  for (auto& s : out.sessions)
    std::stable_sort(s.events.begin(), s.events.end(), [](const RawEvent& a, const RawEvent& b) {
      if (a.timestamp_ms != b.timestamp_ms) return a.timestamp_ms < b.timestamp_ms;
      return a.event_type == "view" && b.event_type == "sale";
    });
  return out;
}

// ---------------------------------------------------------------------------
// Preprocessing

/// Keeps the max_len most recent events of each session and drops sessions
/// shorter than two events.
inline std::vector<RawSession> truncate_and_filter(std::vector<RawSession> sessions,
                                                   std::size_t max_len = 20) {
  std::vector<RawSession> out;
  out.reserve(sessions.size());
  for (auto& s : sessions) {
    if (s.events.size() > max_len)
      s.events.erase(s.events.begin(), s.events.end() - static_cast<std::ptrdiff_t>(max_len));
    if (s.events.size() >= 2) out.push_back(std::move(s));
  }
  return out;
}

/// Items occurring at least min_count times, in order of first occurrence.
/// The OOV token itself is never retained.
inline ItemVocab build_item_vocab(const std::vector<RawSession>& sessions, std::size_t min_count,
                                  bool reserve_oov = true) {
  std::unordered_map<std::string, std::size_t> counts;
  std::vector<std::string> order;
  for (const auto& s : sessions)
    for (const auto& e : s.events) {
      if (e.item == kOovToken) continue;
      if (counts[e.item]++ == 0) order.push_back(e.item);
    }
  std::vector<std::string> kept;
  for (auto& id : order)
    if (counts[id] >= min_count) kept.push_back(std::move(id));
  return ItemVocab(std::move(kept), reserve_oov, min_count);
}

struct Preprocessed {
  std::vector<RawSession> sessions;
  ItemVocab vocab;
};

/// Truncate, drop short sessions, then replace items seen fewer than
/// min_count times with the OOV token. Idempotent.
inline Preprocessed preprocess(std::vector<RawSession> sessions, std::size_t min_count = 5,
                               std::size_t max_len = 20) {
  Preprocessed out;
  out.sessions = truncate_and_filter(std::move(sessions), max_len);
  if (out.sessions.empty()) throw InputError("preprocess: no sessions with at least two events");
  out.vocab = build_item_vocab(out.sessions, min_count);
  for (auto& s : out.sessions)
    for (auto& e : s.events)
      if (!out.vocab.find(e.item)) e.item = std::string(kOovToken);
  return out;
}

inline std::vector<Session> encode_sessions(const std::vector<RawSession>& raw,
                                            const ItemVocab& items, EventTypeVocab& event_types,
                                            bool grow_event_types) {
  std::vector<Session> out;
  out.reserve(raw.size());
  for (const auto& rs : raw) {
    Session s{rs.id, {}};
    s.events.reserve(rs.events.size());
    for (const auto& e : rs.events) {
      const std::size_t et =
          grow_event_types ? event_types.add(e.event_type) : event_types.index(e.event_type);
      s.events.push_back(Event{e.timestamp_ms, items.encode(e.item), et});
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splitting

struct TimeHoldout {
  std::int64_t valid_seconds = 7 * 86400;
  std::int64_t test_seconds = 7 * 86400;
};

struct RandomHoldout {
  double valid_fraction = 0.2;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
};

template <class S>
struct CorpusSplit {
  std::vector<S> train;
  std::vector<S> valid;
  std::vector<S> test;
};

namespace detail {

template <class S>
std::int64_t start_ms(const S& s) {
  return s.events.front().timestamp_ms;
}

template <class S>
void require_nonempty(const CorpusSplit<S>& sp) {
  if (sp.train.empty() || sp.valid.empty() || sp.test.empty())
    throw InputError("split: empty partition (train " + std::to_string(sp.train.size()) +
                     ", valid " + std::to_string(sp.valid.size()) + ", test " +
                     std::to_string(sp.test.size()) + ")");
}

}  // namespace detail

/// Consecutive periods by session start time, measured back from the last
/// event in the corpus: [.., end-test-valid) train, then valid, then test.
template <class S>
CorpusSplit<S> split_by_time(const std::vector<S>& sessions, const TimeHoldout& h) {
  if (h.valid_seconds <= 0 || h.test_seconds <= 0)
    throw InputError("split: holdout durations must be positive");
  std::int64_t end = std::numeric_limits<std::int64_t>::min();
  for (const auto& s : sessions)
    for (const auto& e : s.events) end = std::max(end, e.timestamp_ms);
  const std::int64_t test_start = end - h.test_seconds * 1000;
  const std::int64_t valid_start = test_start - h.valid_seconds * 1000;
  CorpusSplit<S> out;
  for (const auto& s : sessions) {
    if (s.events.empty()) continue;
    const std::int64_t t = detail::start_ms(s);
    if (t >= test_start)
      out.test.push_back(s);
    else if (t >= valid_start)
      out.valid.push_back(s);
    else
      out.train.push_back(s);
  }
  detail::require_nonempty(out);
  return out;
}

/// Seeded random disjoint id sets; each session id is one holdout unit.
template <class S>
CorpusSplit<S> split_random(const std::vector<S>& sessions, const RandomHoldout& h) {
  if (h.valid_fraction < 0 || h.test_fraction < 0 || h.valid_fraction + h.test_fraction >= 1.0)
    throw InputError("split: holdout fractions must be nonnegative and sum below 1");
  const std::size_t n = sessions.size();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(h.seed);
  rng.shuffle(idx);
  const auto n_valid = static_cast<std::size_t>(std::llround(h.valid_fraction * n));
  const auto n_test = static_cast<std::size_t>(std::llround(h.test_fraction * n));
  std::vector<int> part(n, 0);
  for (std::size_t i = 0; i < n_valid && i < n; ++i) part[idx[i]] = 1;
  for (std::size_t i = n_valid; i < n_valid + n_test && i < n; ++i) part[idx[i]] = 2;
  CorpusSplit<S> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (part[i] == 0) out.train.push_back(sessions[i]);
    if (part[i] == 1) out.valid.push_back(sessions[i]);
    if (part[i] == 2) out.test.push_back(sessions[i]);
  }
  detail::require_nonempty(out);
  return out;
}

// ---------------------------------------------------------------------------
// Canonical corpus files

/// "<seconds>.<milliseconds>" with exactly three fraction digits.
inline std::string format_timestamp_ms(std::int64_t ms) {
  const bool neg = ms < 0;
  const std::uint64_t a = neg ? static_cast<std::uint64_t>(-(ms + 1)) + 1 : static_cast<std::uint64_t>(ms);
  char frac[4];
  std::snprintf(frac, sizeof frac, "%03u", static_cast<unsigned>(a % 1000));
  return (neg ? "-" : "") + std::to_string(a / 1000) + "." + frac;
}

inline std::optional<std::int64_t> parse_timestamp_ms(std::string_view s) {
  bool neg = false;
  if (!s.empty() && s[0] == '-') {
    neg = true;
    s.remove_prefix(1);
  }
  const auto dot = s.find('.');
  const std::string_view whole = s.substr(0, dot);
  std::int64_t sec = 0;
  auto [p, ec] = std::from_chars(whole.data(), whole.data() + whole.size(), sec);
  if (ec != std::errc{} || p != whole.data() + whole.size() || whole.empty()) return std::nullopt;
  std::int64_t ms = 0;
  if (dot != std::string_view::npos) {
    const std::string_view frac = s.substr(dot + 1);
    if (frac.empty() || frac.size() > 3) return std::nullopt;
    for (char c : frac) {
      if (c < '0' || c > '9') return std::nullopt;
      ms = ms * 10 + (c - '0');
    }
    for (std::size_t i = frac.size(); i < 3; ++i) ms *= 10;
  }
  const std::int64_t v = sec * 1000 + ms;
  return neg ? -v : v;
}

/// One line per event: session_id TAB timestamp TAB item_index TAB event_type_index.
inline void write_corpus(const std::string& path, const std::vector<Session>& sessions) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  for (const auto& s : sessions)
    for (const auto& e : s.events)
      out << s.id << '\t' << format_timestamp_ms(e.timestamp_ms) << '\t' << e.item << '\t'
          << e.event_type << '\n';
  if (!out) throw InputError("write failed for " + path);
}

/// Consecutive lines with the same session id form one session.
inline std::vector<Session> read_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  std::vector<Session> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view l = detail::trim_cr(line);
    if (l.empty() || l[0] == '#') continue;
    const auto f = detail::split_fields(l, '\t');
    auto bad = [&](const char* what) {
      return InputError(path + ":" + std::to_string(lineno) + ": " + what);
    };
    if (f.size() != 4) throw bad("expected 4 tab-separated fields");
    const auto ts = parse_timestamp_ms(f[1]);
    if (!ts) throw bad("bad timestamp");
    std::size_t item = 0, et = 0;
    if (std::from_chars(f[2].data(), f[2].data() + f[2].size(), item).ec != std::errc{})
      throw bad("bad item index");
    if (std::from_chars(f[3].data(), f[3].data() + f[3].size(), et).ec != std::errc{})
      throw bad("bad event type index");
    if (out.empty() || out.back().id != f[0]) out.push_back(Session{std::string(f[0]), {}});
    out.back().events.push_back(Event{*ts, item, et});
  }
  return out;
}

struct CorpusVocab {
  ItemVocab items;
  EventTypeVocab event_types;
};

inline nlohmann::json vocab_to_json(const CorpusVocab& v) {
  return nlohmann::json{{"format", "crnn-vocab"},
                        {"version", 1},
                        {"items", v.items.ids()},
                        {"oov", v.items.has_oov()},
                        {"min_count", v.items.min_count()},
                        {"event_types", v.event_types.names()}};
}

inline CorpusVocab vocab_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "crnn-vocab") throw InputError("not a crnn vocabulary");
    return CorpusVocab{ItemVocab(j.at("items").get<std::vector<std::string>>(),
                                 j.at("oov").get<bool>(), j.at("min_count").get<std::size_t>()),
                       EventTypeVocab(j.at("event_types").get<std::vector<std::string>>())};
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed vocabulary: ") + e.what());
  }
}

inline void write_vocab(const std::string& path, const CorpusVocab& v) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  out << vocab_to_json(v).dump(1) << '\n';
}

inline CorpusVocab read_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path + ": " + e.what());
  }
  return vocab_from_json(j);
}

/// Checks every index in sessions fits the vocabularies.
inline void validate_corpus(const std::vector<Session>& sessions, const CorpusVocab& v) {
  for (const auto& s : sessions)
    for (const auto& e : s.events) {
      if (e.item >= v.items.size())
        throw InputError("session " + s.id + ": item index " + std::to_string(e.item) +
                         " outside vocabulary of " + std::to_string(v.items.size()));
      if (e.event_type > v.event_types.size())
        throw InputError("session " + s.id + ": event type index " +
                         std::to_string(e.event_type) + " outside vocabulary");
    }
}

/// Context vectors for every event of a session, in order.
inline std::vector<ContextVector> session_contexts(const Session& s, const ContextSchema& schema) {
  std::vector<ContextVector> out;
  out.reserve(s.events.size());
  std::optional<std::int64_t> prev;
  for (const auto& e : s.events) {
    out.push_back(build_context(EventAttributes{e.seconds(), e.event_type}, prev, schema));
    prev = e.seconds();
  }
  return out;
}

}  // namespace crnn
