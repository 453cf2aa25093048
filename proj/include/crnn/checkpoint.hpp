#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <type_traits>

#include <nlohmann/json.hpp>

#include "crnn/context.hpp"
#include "crnn/corpus.hpp"
#include "crnn/model.hpp"

namespace crnn {

inline constexpr char kCheckpointMagic[8] = {'C', 'R', 'N', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything needed to rebuild a model and encode new data the same way it
/// was trained: model shape, vocabularies, context layout and weights.
template <class T>
struct Checkpoint {
  ModelConfig model;
  CorpusVocab vocab;
  ContextSchema schema;
  ModelParams<T> params;
  nlohmann::json metadata = nlohmann::json::object();  // e.g. the effective run config
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"cell", to_string(c.cell)},
          {"input", to_string(c.input)},
          {"output", to_string(c.output)},
          {"n_items", c.n_items},
          {"embed_dim", c.embed_dim},
          {"hidden_dim", c.hidden_dim},
          {"context_dim", c.context_dim},
          {"context_active", c.context_active},
          {"share_context_projection", c.share_context_projection}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  const auto cell = parse_cell_kind(j.at("cell").get<std::string>());
  const auto in = parse_integration_kind(j.at("input").get<std::string>());
  const auto out = parse_integration_kind(j.at("output").get<std::string>());
  if (!cell || !in || !out) throw ConfigError("checkpoint: unknown cell or integration kind");
  c.cell = *cell;
  c.input = *in;
  c.output = *out;
  c.n_items = j.at("n_items").get<std::size_t>();
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.context_dim = j.at("context_dim").get<std::size_t>();
  c.context_active = j.at("context_active").get<std::size_t>();
  c.share_context_projection = j.at("share_context_projection").get<bool>();
  return c;
}

inline nlohmann::json to_json(const ContextSchema& s) {
  return {{"month", s.month},
          {"hour", s.hour},
          {"day_of_week", s.day_of_week},
          {"time_delta", s.time_delta},
          {"event_type", s.event_type},
          {"first_event_bucket", s.first_event_bucket},
          {"utc_offset_seconds", s.utc_offset_seconds},
          {"event_types", s.event_types.names()}};
}

inline ContextSchema schema_from_json(const nlohmann::json& j) {
  ContextSchema s;
  s.month = j.at("month").get<bool>();
  s.hour = j.at("hour").get<bool>();
  s.day_of_week = j.at("day_of_week").get<bool>();
  s.time_delta = j.at("time_delta").get<bool>();
  s.event_type = j.at("event_type").get<bool>();
  s.first_event_bucket = j.at("first_event_bucket").get<bool>();
  s.utc_offset_seconds = j.at("utc_offset_seconds").get<std::int64_t>();
  s.event_types = EventTypeVocab(j.at("event_types").get<std::vector<std::string>>());
  return s;
}

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <class U>
void put(std::ostream& out, U v) {
  static_assert(std::is_trivially_copyable_v<U>);
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class U>
U get(std::istream& in, const std::string& what) {
  U v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
    throw InputError("checkpoint truncated while reading " + what);
  return v;
}

}  // namespace detail

/// Binary layout: magic, u32 version, u32 scalar width, u64 header length,
/// JSON header, u32 parameter count, then per parameter a u32-prefixed
/// name, u64 rows, u64 cols and the row-major values.
template <class T>
void write_checkpoint(std::ostream& out, const Checkpoint<T>& ck) {
  check_params(ck.model, ck.params);
  nlohmann::json header{{"model", to_json(ck.model)},
                        {"vocab", vocab_to_json(ck.vocab)},
                        {"schema", to_json(ck.schema)},
                        {"metadata", ck.metadata}};
  const std::string h = header.dump();
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put<std::uint32_t>(out, sizeof(T));
  detail::put<std::uint64_t>(out, h.size());
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  const auto params = ck.params.list();
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    detail::put<std::uint64_t>(out, p->value.rows());
    detail::put<std::uint64_t>(out, p->value.cols());
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(p->value.size() * sizeof(T)));
  }
}

template <class T>
Checkpoint<T> read_checkpoint(std::istream& in) {
  char magic[sizeof kCheckpointMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw InputError("not a crnn checkpoint");
  const auto version = detail::get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion)
    throw InputError("unsupported checkpoint version " + std::to_string(version));
  const auto width = detail::get<std::uint32_t>(in, "scalar width");
  if (width != sizeof(T))
    throw InputError("checkpoint stores " + std::to_string(8 * width) + "-bit values, expected " +
                     std::to_string(8 * sizeof(T)));
  const auto hlen = detail::get<std::uint64_t>(in, "header length");
  std::string h(hlen, '\0');
  if (!in.read(h.data(), static_cast<std::streamsize>(hlen))) throw InputError("checkpoint truncated in header");

  Checkpoint<T> ck;
  try {
    const auto header = nlohmann::json::parse(h);
    ck.model = model_config_from_json(header.at("model"));
    ck.vocab = vocab_from_json(header.at("vocab"));
    ck.schema = schema_from_json(header.at("schema"));
    ck.metadata = header.at("metadata");
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed checkpoint header: ") + e.what());
  }

  // Build the expected parameter set, then overwrite every value.
  ck.params = init_params<T>(ck.model, 0);
  auto params = ck.params.list();
  const auto count = detail::get<std::uint32_t>(in, "parameter count");
  if (count != params.size())
    throw InputError("checkpoint holds " + std::to_string(count) + " parameters, model needs " +
                     std::to_string(params.size()));
  for (auto* p : params) {
    const auto nlen = detail::get<std::uint32_t>(in, "parameter name");
    std::string name(nlen, '\0');
    if (!in.read(name.data(), nlen)) throw InputError("checkpoint truncated in parameter name");
    if (name != p->name)
      throw InputError("checkpoint parameter '" + name + "' where '" + p->name + "' was expected");
    const auto rows = detail::get<std::uint64_t>(in, name + " rows");
    const auto cols = detail::get<std::uint64_t>(in, name + " cols");
    if (rows != p->value.rows() || cols != p->value.cols())
      throw DimensionError("checkpoint parameter " + name + " has shape " + std::to_string(rows) +
                           "x" + std::to_string(cols) + ", expected " + p->value.shape_string());
    if (!in.read(reinterpret_cast<char*>(p->value.data()),
                 static_cast<std::streamsize>(p->value.size() * sizeof(T))))
      throw InputError("checkpoint truncated in values of " + name);
    p->zero_grad();
  }
  return ck;
}

/// Bytes per stored value, read from the header without loading weights.
inline std::uint32_t checkpoint_scalar_width(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  char magic[sizeof kCheckpointMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw InputError(path + ": not a crnn checkpoint");
  detail::get<std::uint32_t>(in, "version");
  return detail::get<std::uint32_t>(in, "scalar width");
}

template <class T>
void save_checkpoint(const std::string& path, const Checkpoint<T>& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  write_checkpoint(out, ck);
  if (!out) throw InputError("error writing " + path);
}

template <class T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  return read_checkpoint<T>(in);
}

}  // namespace crnn
