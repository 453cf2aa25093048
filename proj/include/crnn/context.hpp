#pragma once

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "crnn/errors.hpp"

namespace crnn {

inline constexpr std::size_t kMonthCardinality = 12;
inline constexpr std::size_t kHourCardinality = 24;
inline constexpr std::size_t kDayOfWeekCardinality = 7;
inline constexpr std::size_t kMaxTimeDeltaBucket = 20;

// Calendar range accepted by encode_time: 0001-01-01T00:00:00 .. 9999-12-31T23:59:59.
inline constexpr std::int64_t kMinTimestamp = -62135596800;
inline constexpr std::int64_t kMaxTimestamp = 253402300799;

/// floor(log2(delta + 1)) capped at 20. Computed on integers, so exact.
inline std::size_t bucket_time_delta(std::int64_t delta_seconds) {
  if (delta_seconds < 0)
    throw ContractError("bucket_time_delta: negative delta " + std::to_string(delta_seconds));
  // 2^21 - 1 is the smallest delta with floor(log2(delta+1)) = 21.
  if (delta_seconds >= (std::int64_t{1} << (kMaxTimeDeltaBucket + 1)) - 1) return kMaxTimeDeltaBucket;
  const auto v = static_cast<std::uint64_t>(delta_seconds) + 1;
  return static_cast<std::size_t>(std::bit_width(v) - 1);
}

struct CalendarFields {
  std::size_t month = 0;        // 0 = January
  std::size_t hour = 0;         // 0..23
  std::size_t day_of_week = 0;  // 0 = Monday

  friend bool operator==(const CalendarFields&, const CalendarFields&) = default;
};

/// Month, hour and weekday of a timestamp shifted by a fixed UTC offset.
inline CalendarFields encode_time(std::int64_t timestamp, std::int64_t utc_offset_seconds = 0) {
  const std::int64_t local = timestamp + utc_offset_seconds;
  if (local < kMinTimestamp || local > kMaxTimestamp)
    throw InputError("encode_time: timestamp " + std::to_string(timestamp) +
                     " outside supported calendar range");
  using namespace std::chrono;
  const sys_seconds tp{seconds{local}};
  const sys_days day = floor<days>(tp);
  const year_month_day ymd{day};
  const auto secs_of_day = (tp - day).count();
  CalendarFields out;
  out.month = static_cast<unsigned>(ymd.month()) - 1;
  out.hour = static_cast<std::size_t>(secs_of_day / 3600);
  out.day_of_week = weekday{day}.iso_encoding() - 1;
  return out;
}

/// Event-type names to dense indices. Unknown names map to the reserved
/// out-of-vocabulary index, which equals size().
class EventTypeVocab {
 public:
  EventTypeVocab() = default;
  explicit EventTypeVocab(std::vector<std::string> names) : names_(std::move(names)) {}

  std::size_t size() const noexcept { return names_.size(); }
  std::size_t oov_index() const noexcept { return names_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }

  std::size_t index(std::string_view name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return i;
    return oov_index();
  }

  /// Index of name, appending it when absent.
  std::size_t add(std::string_view name) {
    const std::size_t i = index(name);
    if (i == oov_index()) names_.emplace_back(name);
    return i;
  }

  std::string name(std::size_t index) const {
    return index < names_.size() ? names_[index] : std::string("<oov>");
  }

  friend bool operator==(const EventTypeVocab&, const EventTypeVocab&) = default;

 private:
  std::vector<std::string> names_;
};

inline std::size_t encode_event_type(std::string_view type, const EventTypeVocab& vocab) {
  return vocab.index(type);
}

enum class FeatureKind { month, hour, day_of_week, time_delta, event_type };

inline std::string_view to_string(FeatureKind k) {
  switch (k) {
    case FeatureKind::month: return "month";
    case FeatureKind::hour: return "hour";
    case FeatureKind::day_of_week: return "day_of_week";
    case FeatureKind::time_delta: return "time_delta";
    case FeatureKind::event_type: return "event_type";
  }
  return "?";
}

struct FeatureBlock {
  FeatureKind kind;
  std::size_t offset;
  std::size_t cardinality;
};

/// Which one-hot blocks make up c_t, in a fixed order:
/// month, hour, day_of_week, time_delta, event_type.
struct ContextSchema {
  bool month = true;
  bool hour = true;
  bool day_of_week = true;
  bool time_delta = true;
  bool event_type = true;
  // Give the first event of a session its own time-delta bucket (index 21)
  // instead of bucket 0.
  bool first_event_bucket = false;
  std::int64_t utc_offset_seconds = 0;
  EventTypeVocab event_types;

  std::size_t time_delta_cardinality() const {
    return kMaxTimeDeltaBucket + 1 + (first_event_bucket ? 1 : 0);
  }

  // The reserved out-of-vocabulary slot is part of the event-type block.
  std::size_t event_type_cardinality() const { return event_types.size() + 1; }

  std::vector<FeatureBlock> blocks() const {
    std::vector<FeatureBlock> out;
    std::size_t offset = 0;
    auto push = [&](bool on, FeatureKind k, std::size_t card) {
      if (!on) return;
      out.push_back({k, offset, card});
      offset += card;
    };
    push(month, FeatureKind::month, kMonthCardinality);
    push(hour, FeatureKind::hour, kHourCardinality);
    push(day_of_week, FeatureKind::day_of_week, kDayOfWeekCardinality);
    push(time_delta, FeatureKind::time_delta, time_delta_cardinality());
    push(event_type, FeatureKind::event_type, event_type_cardinality());
    return out;
  }

  std::size_t dim() const {
    std::size_t d = 0;
    for (const auto& b : blocks()) d += b.cardinality;
    return d;
  }

  std::size_t active_count() const { return blocks().size(); }

  friend bool operator==(const ContextSchema&, const ContextSchema&) = default;
};

/// Sparse one-hot context: one global index per enabled block, in schema order.
struct ContextVector {
  std::vector<std::size_t> active;

  friend bool operator==(const ContextVector&, const ContextVector&) = default;
};

/// The attributes of one event that the context is built from.
struct EventAttributes {
  std::int64_t timestamp = 0;
  std::size_t event_type = 0;
};

inline ContextVector build_context(const EventAttributes& event,
                                   std::optional<std::int64_t> prev_timestamp,
                                   const ContextSchema& schema) {
  ContextVector cv;
  const auto blocks = schema.blocks();
  cv.active.reserve(blocks.size());
  std::optional<CalendarFields> cal;
  if (schema.month || schema.hour || schema.day_of_week)
    cal = encode_time(event.timestamp, schema.utc_offset_seconds);
  for (const auto& b : blocks) {
    std::size_t local = 0;
    switch (b.kind) {
      case FeatureKind::month: local = cal->month; break;
      case FeatureKind::hour: local = cal->hour; break;
      case FeatureKind::day_of_week: local = cal->day_of_week; break;
      case FeatureKind::time_delta:
        if (!prev_timestamp)
          local = schema.first_event_bucket ? kMaxTimeDeltaBucket + 1 : 0;
        else
          local = bucket_time_delta(std::max<std::int64_t>(0, event.timestamp - *prev_timestamp));
        break;
      case FeatureKind::event_type:
        local = std::min(event.event_type, schema.event_types.oov_index());
        break;
    }
    cv.active.push_back(b.offset + local);
  }
  return cv;
}

/// Per-block local indices recovered from a ContextVector; disabled blocks
/// are empty.
struct DecodedContext {
  std::optional<std::size_t> month;
  std::optional<std::size_t> hour;
  std::optional<std::size_t> day_of_week;
  std::optional<std::size_t> time_delta_bucket;
  std::optional<std::size_t> event_type;

  friend bool operator==(const DecodedContext&, const DecodedContext&) = default;
};

inline DecodedContext decode_context(const ContextVector& cv, const ContextSchema& schema) {
  const auto blocks = schema.blocks();
  if (cv.active.size() != blocks.size())
    throw DimensionError("decode_context: " + std::to_string(cv.active.size()) +
                         " active indices for " + std::to_string(blocks.size()) + " blocks");
  DecodedContext out;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    const std::size_t idx = cv.active[i];
    if (idx < b.offset || idx >= b.offset + b.cardinality)
      throw DimensionError("decode_context: index " + std::to_string(idx) + " outside block " +
                           std::string(to_string(b.kind)));
    const std::size_t local = idx - b.offset;
    switch (b.kind) {
      case FeatureKind::month: out.month = local; break;
      case FeatureKind::hour: out.hour = local; break;
      case FeatureKind::day_of_week: out.day_of_week = local; break;
      case FeatureKind::time_delta: out.time_delta_bucket = local; break;
      case FeatureKind::event_type: out.event_type = local; break;
    }
  }
  return out;
}

}  // namespace crnn
