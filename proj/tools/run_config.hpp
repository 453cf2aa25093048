#pragma once

// Experiment configuration: one YAML file, strict keys, line-precise errors.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <yaml-cpp/yaml.h>

#include "crnn/crnn.hpp"

namespace crnn::cli {

namespace fs = std::filesystem;

struct DataPaths {
  std::string train, valid, test, vocab;
};

struct EvalSettings {
  std::size_t k = 10;
  std::vector<ProjectionAxis> projections = all_projection_axes();
  std::size_t resamples = 30;
  double level = 0.95;
  std::vector<std::size_t> length_edges{1, 2, 3, 4, 5, 10, 20};
  std::size_t batch_size = 256;
};

struct SyntheticSettings {
  SyntheticRecipe recipe;
  std::size_t train_sessions = 20000;
  std::size_t valid_sessions = 2000;
  std::size_t test_sessions = 2000;
  std::vector<std::size_t> bayes_k{1, 5, 10, 20};
  std::string out;
};

struct PrepareSettings {
  std::string clicks, buys, out;
  std::size_t min_count = 5;
  std::size_t max_len = 20;
  double max_malformed_fraction = 0.01;
  std::string split = "time";  // time | random
  double valid_days = 7;
  double test_days = 7;
  double valid_fraction = 0.1;
  double test_fraction = 0.1;
  std::size_t max_sessions = 0;  // 0 keeps all
};

struct RunConfig {
  std::string source;  // file the config came from
  std::string name;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string precision = "float64";
  std::string run_dir;
  DataPaths data;
  ContextSchema context;
  ModelConfig model;
  TrainConfig train;
  std::size_t log_every = 100;
  EvalSettings evaluate;
  SyntheticSettings synthetic;
  PrepareSettings prepare;
};

namespace detail {

inline std::string where(const std::string& file, const YAML::Node& n) {
  const auto m = n.Mark();
  if (m.is_null() || m.line < 0) return file + ": ";
  return file + ":" + std::to_string(m.line + 1) + ":" + std::to_string(m.column + 1) + ": ";
}

/// One mapping of the config. Reads keys by name and remembers them, so
/// leftovers can be reported as unknown.
class Section {
 public:
  Section(std::string file, YAML::Node node, std::string path)
      : file_(std::move(file)), node_(std::move(node)), path_(std::move(path)) {
    if (node_ && !node_.IsNull() && !node_.IsMap())
      throw ConfigError(where(file_, node_) + "'" + path_ + "' must be a mapping");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return node_ && node_.IsMap() && node_[key] && !node_[key].IsNull();
  }

  std::string field(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  template <class V>
  void read(const std::string& key, V& out, const char* expects) {
    if (!has(key)) return;
    const YAML::Node n = node_[key];
    try {
      out = n.as<V>();
    } catch (const YAML::Exception&) {
      throw ConfigError(where(file_, n) + "field '" + field(key) + "' expects " + expects);
    }
  }

  void read(const std::string& key, std::size_t& out) {
    if (!has(key)) return;
    const YAML::Node n = node_[key];
    long long v = 0;
    try {
      v = n.as<long long>();
    } catch (const YAML::Exception&) {
      throw ConfigError(where(file_, n) + "field '" + field(key) + "' expects an integer");
    }
    if (v < 0) throw ConfigError(where(file_, n) + "field '" + field(key) + "' must be >= 0");
    out = static_cast<std::size_t>(v);
  }

  void read(const std::string& key, double& out) { read<double>(key, out, "a number"); }
  void read(const std::string& key, bool& out) { read<bool>(key, out, "true or false"); }
  void read(const std::string& key, std::string& out) { read<std::string>(key, out, "a string"); }

  void read_path(const std::string& key, std::string& out, const fs::path& base) {
    std::string raw;
    read(key, raw);
    if (!raw.empty()) out = resolve(raw, base);
  }

  template <class E>
  void read_list(const std::string& key, std::vector<E>& out, const char* expects) {
    if (!has(key)) return;
    const YAML::Node n = node_[key];
    if (!n.IsSequence())
      throw ConfigError(where(file_, n) + "field '" + field(key) + "' expects a list of " + expects);
    try {
      out = n.as<std::vector<E>>();
    } catch (const YAML::Exception&) {
      throw ConfigError(where(file_, n) + "field '" + field(key) + "' expects a list of " + expects);
    }
  }

  template <class Parse>
  void read_enum(const std::string& key, Parse parse, const char* choices) {
    if (!has(key)) return;
    const YAML::Node n = node_[key];
    std::string s;
    try {
      s = n.as<std::string>();
    } catch (const YAML::Exception&) {
      s.clear();
    }
    if (!parse(s))
      throw ConfigError(where(file_, n) + "field '" + field(key) + "' must be one of " + choices +
                        " (got '" + s + "')");
  }

  Section sub(const std::string& key) {
    seen_.insert(key);
    return Section(file_, node_ && node_.IsMap() ? node_[key] : YAML::Node(), field(key));
  }

  YAML::Node node(const std::string& key) const { return node_[key]; }

  void require(const std::string& key) {
    if (!has(key)) throw ConfigError(file_ + ": missing required field '" + field(key) + "'");
  }

  /// Rejects keys nobody asked for.
  void finish() const {
    if (!node_ || !node_.IsMap()) return;
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!seen_.count(key))
        throw ConfigError(where(file_, kv.first) + "unknown field '" + field(key) + "'");
    }
  }

  static std::string resolve(const std::string& raw, const fs::path& base) {
    fs::path p(raw);
    if (p.is_relative()) p = base / p;
    return fs::absolute(p).lexically_normal().string();
  }

 private:
  std::string file_;
  YAML::Node node_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

/// Applies "a.b.c=value" edits to a YAML tree; the value is parsed as YAML.
inline void apply_override(YAML::Node& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  const std::string key = assignment.substr(0, eq);
  YAML::Node value;
  try {
    value = YAML::Load(assignment.substr(eq + 1));
  } catch (const YAML::Exception& e) {
    throw ConfigError("override '" + assignment + "': " + e.msg);
  }
  std::vector<std::string> parts;
  for (std::size_t start = 0;;) {
    const auto dot = key.find('.', start);
    parts.push_back(key.substr(start, dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  auto set = [&](auto& self, YAML::Node node, std::size_t i) -> void {
    if (i + 1 == parts.size()) {
      node[parts[i]] = value;
      return;
    }
    if (!node[parts[i]] || !node[parts[i]].IsMap()) node[parts[i]] = YAML::Node(YAML::NodeType::Map);
    self(self, node[parts[i]], i + 1);
  };
  if (!root || !root.IsMap()) root = YAML::Node(YAML::NodeType::Map);
  set(set, root, 0);
}

inline YAML::Node load_yaml(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path);
  try {
    YAML::Node n = YAML::LoadFile(path);
    if (n.IsNull()) return YAML::Node(YAML::NodeType::Map);
    if (!n.IsMap()) throw ConfigError(path + ": top level must be a mapping");
    return n;
  } catch (const YAML::ParserException& e) {
    throw ConfigError(path + ":" + std::to_string(e.mark.line + 1) + ":" +
                      std::to_string(e.mark.column + 1) + ": " + e.msg);
  } catch (const YAML::Exception& e) {
    throw ConfigError(path + ": " + e.msg);
  }
}

/// Builds a RunConfig with defaults for everything absent. Relative paths
/// resolve against the config file's directory.
inline RunConfig parse_config(const YAML::Node& root, const std::string& file) {
  using detail::Section;
  RunConfig c;
  c.source = file;
  const fs::path base = fs::absolute(fs::path(file)).parent_path();
  Section top(file, root, "");
  top.read("name", c.name);
  top.read("seed", c.seed);
  top.read("threads", c.threads);
  top.read_enum("precision", [&](const std::string& s) {
    c.precision = s;
    return s == "float64" || s == "float32";
  }, "float64, float32");
  top.read_path("run_dir", c.run_dir, base);

  {
    Section d = top.sub("data");
    d.read_path("train", c.data.train, base);
    d.read_path("valid", c.data.valid, base);
    d.read_path("test", c.data.test, base);
    d.read_path("vocab", c.data.vocab, base);
    d.finish();
  }
  {
    Section s = top.sub("context");
    s.read("month", c.context.month);
    s.read("hour", c.context.hour);
    s.read("day_of_week", c.context.day_of_week);
    s.read("time_delta", c.context.time_delta);
    s.read("event_type", c.context.event_type);
    s.read("first_event_bucket", c.context.first_event_bucket);
    long long off = c.context.utc_offset_seconds;
    s.read<long long>("utc_offset_seconds", off, "an integer");
    c.context.utc_offset_seconds = off;
    s.finish();
  }
  {
    Section m = top.sub("model");
    m.read_enum("cell", [&](const std::string& v) {
      auto k = parse_cell_kind(v);
      if (k) c.model.cell = *k;
      return k.has_value();
    }, "gru, context-wrapper-gru, bag-of-items, covisit");
    auto integration = [&](const std::string& key, IntegrationKind& out) {
      m.read_enum(key, [&](const std::string& v) {
        auto k = parse_integration_kind(v);
        if (k) out = *k;
        return k.has_value();
      }, "none, concat, mult, concat-mult");
    };
    integration("input", c.model.input);
    integration("output", c.model.output);
    std::size_t dim = 0;
    m.read("dim", dim);
    if (dim) c.model.embed_dim = c.model.hidden_dim = dim;
    m.read("embed_dim", c.model.embed_dim);
    m.read("hidden_dim", c.model.hidden_dim);
    m.read("share_context_projection", c.model.share_context_projection);
    m.finish();
  }
  {
    Section t = top.sub("train");
    c.train.seed = c.seed;
    t.read("batch_size", c.train.batch_size);
    t.read("iterations", c.train.iterations);
    t.read("lr_start", c.train.lr_start);
    t.read("lr_end", c.train.lr_end);
    t.read("clip_norm", c.train.clip_norm);
    t.read("valid_every", c.train.valid_every);
    t.read("log_every", c.log_every);
    Section a = t.sub("adam");
    a.read("beta1", c.train.adam.beta1);
    a.read("beta2", c.train.adam.beta2);
    a.read("epsilon", c.train.adam.epsilon);
    a.finish();
    t.finish();
  }
  {
    Section e = top.sub("evaluate");
    e.read("k", c.evaluate.k);
    if (e.has("projections")) {
      std::vector<std::string> names;
      e.read_list("projections", names, "projection names");
      c.evaluate.projections.clear();
      for (const auto& n : names) {
        auto axis = parse_projection_axis(n);
        if (!axis)
          throw ConfigError(detail::where(file, e.node("projections")) + "unknown projection '" +
                            n + "' in 'evaluate.projections'");
        c.evaluate.projections.push_back(*axis);
      }
    }
    e.read("resamples", c.evaluate.resamples);
    e.read("level", c.evaluate.level);
    e.read_list("length_edges", c.evaluate.length_edges, "integers");
    e.read("batch_size", c.evaluate.batch_size);
    e.finish();
  }
  {
    Section s = top.sub("synthetic");
    auto& r = c.synthetic.recipe;
    r.seed = c.seed;
    s.read("n_items", r.n_items);
    s.read_list("event_types", r.event_types, "strings");
    s.read_list("type_marginal", r.type_marginal, "numbers");
    s.read("support", r.support);
    s.read("sparse_mass", r.sparse_mass);
    s.read("min_length", r.min_length);
    s.read("max_length", r.max_length);
    s.read("length_decay", r.length_decay);
    s.read("min_gap_seconds", r.min_gap_seconds);
    s.read("max_gap_seconds", r.max_gap_seconds);
    s.read("min_context_kl", r.min_context_kl);
    s.read("seed", r.seed);
    s.read("train_sessions", c.synthetic.train_sessions);
    s.read("valid_sessions", c.synthetic.valid_sessions);
    s.read("test_sessions", c.synthetic.test_sessions);
    s.read_list("bayes_k", c.synthetic.bayes_k, "integers");
    s.read_path("out", c.synthetic.out, base);
    s.finish();
  }
  {
    Section p = top.sub("prepare");
    auto& q = c.prepare;
    p.read_path("clicks", q.clicks, base);
    p.read_path("buys", q.buys, base);
    p.read_path("out", q.out, base);
    p.read("min_count", q.min_count);
    p.read("max_len", q.max_len);
    p.read("max_malformed_fraction", q.max_malformed_fraction);
    p.read_enum("split", [&](const std::string& v) {
      q.split = v;
      return v == "time" || v == "random";
    }, "time, random");
    p.read("valid_days", q.valid_days);
    p.read("test_days", q.test_days);
    p.read("valid_fraction", q.valid_fraction);
    p.read("test_fraction", q.test_fraction);
    p.read("max_sessions", q.max_sessions);
    p.finish();
  }
  top.finish();
  if (c.threads != 1)
    throw ConfigError(file + ": threads = " + std::to_string(c.threads) +
                      " requested; only single-threaded execution is supported");
  return c;
}

/// Fails naming the first absent field among `fields` ("section.key").
inline void require_fields(const YAML::Node& root, const std::string& file,
                           std::initializer_list<const char*> fields) {
  for (const char* f : fields) {
    const std::string s(f);
    const auto dot = s.find('.');
    const YAML::Node head = root[s.substr(0, dot)];
    bool present = head && !head.IsNull();
    if (present && dot != std::string::npos) {
      present = head.IsMap();
      if (present) {
        const YAML::Node leaf = head[s.substr(dot + 1)];
        present = leaf && !leaf.IsNull();
      }
    }
    if (!present) throw ConfigError(file + ": missing required field '" + s + "'");
  }
}

// ---------------------------------------------------------------------------
// Effective config

inline nlohmann::json effective_json(const RunConfig& c) {
  using nlohmann::json;
  json axes = json::array();
  for (auto a : c.evaluate.projections) axes.push_back(std::string(to_string(a)));
  json j;
  j["name"] = c.name;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["precision"] = c.precision;
  j["run_dir"] = c.run_dir;
  j["data"] = {{"train", c.data.train}, {"valid", c.data.valid}, {"test", c.data.test},
               {"vocab", c.data.vocab}};
  j["context"] = {{"month", c.context.month},
                  {"hour", c.context.hour},
                  {"day_of_week", c.context.day_of_week},
                  {"time_delta", c.context.time_delta},
                  {"event_type", c.context.event_type},
                  {"first_event_bucket", c.context.first_event_bucket},
                  {"utc_offset_seconds", c.context.utc_offset_seconds}};
  j["model"] = {{"cell", std::string(to_string(c.model.cell))},
                {"input", std::string(to_string(c.model.input))},
                {"output", std::string(to_string(c.model.output))},
                {"embed_dim", c.model.embed_dim},
                {"hidden_dim", c.model.hidden_dim},
                {"share_context_projection", c.model.share_context_projection}};
  j["train"] = {{"batch_size", c.train.batch_size},
                {"iterations", c.train.iterations},
                {"lr_start", c.train.lr_start},
                {"lr_end", c.train.lr_end},
                {"clip_norm", c.train.clip_norm},
                {"valid_every", c.train.valid_every},
                {"log_every", c.log_every},
                {"adam", {{"beta1", c.train.adam.beta1},
                          {"beta2", c.train.adam.beta2},
                          {"epsilon", c.train.adam.epsilon}}}};
  j["evaluate"] = {{"k", c.evaluate.k},
                   {"projections", axes},
                   {"resamples", c.evaluate.resamples},
                   {"level", c.evaluate.level},
                   {"length_edges", c.evaluate.length_edges},
                   {"batch_size", c.evaluate.batch_size}};
  return j;
}

namespace detail {

inline void emit(YAML::Emitter& out, const nlohmann::json& j) {
  if (j.is_object()) {
    out << YAML::BeginMap;
    for (auto it = j.begin(); it != j.end(); ++it) {
      out << YAML::Key << it.key() << YAML::Value;
      emit(out, it.value());
    }
    out << YAML::EndMap;
  } else if (j.is_array()) {
    out << YAML::Flow << YAML::BeginSeq;
    for (const auto& v : j) emit(out, v);
    out << YAML::EndSeq;
  } else if (j.is_boolean()) {
    out << j.get<bool>();
  } else if (j.is_number_unsigned()) {
    out << j.get<std::uint64_t>();
  } else if (j.is_number_integer()) {
    out << j.get<std::int64_t>();
  } else if (j.is_number_float()) {
    out << j.get<double>();
  } else if (j.is_string()) {
    out << YAML::DoubleQuoted << j.get<std::string>();
  } else {
    out << YAML::Null;
  }
}

}  // namespace detail

inline std::string to_yaml(const nlohmann::json& j) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  detail::emit(out, j);
  return std::string(out.c_str()) + "\n";
}

}  // namespace crnn::cli
