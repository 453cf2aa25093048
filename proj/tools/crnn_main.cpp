// crnn: train, evaluate, predict, generate-synthetic, prepare.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "run_config.hpp"

namespace crnn::cli {
namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

struct ConfigArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
};

void add_config_args(CLI::App& cmd, ConfigArgs& a, bool required) {
  auto* opt = cmd.add_option("-c,--config", a.config, "YAML experiment config");
  if (required) opt->required();
  cmd.add_option("--set", a.overrides, "Override a config field, e.g. --set train.iterations=50")
      ->type_name("KEY=VALUE");
  cmd.add_option("--seed", a.seed, "Override the top-level seed");
  cmd.add_option("--threads", a.threads, "Worker threads (only 1 is supported)");
}

struct Loaded {
  YAML::Node root;
  RunConfig cfg;
};

Loaded load_config(const ConfigArgs& a, std::initializer_list<const char*> required = {}) {
  Loaded l;
  l.root = a.config.empty() ? YAML::Node(YAML::NodeType::Map) : load_yaml(a.config);
  for (const auto& o : a.overrides) apply_override(l.root, o);
  if (a.seed) apply_override(l.root, "seed=" + std::to_string(*a.seed));
  if (a.threads) apply_override(l.root, "threads=" + std::to_string(*a.threads));
  const std::string file = a.config.empty() ? std::string("<flags>") : a.config;
  require_fields(l.root, file, required);
  l.cfg = parse_config(l.root, a.config.empty() ? "./<flags>" : a.config);
  l.cfg.source = file;
  return l;
}

std::string resolve_run_dir(const RunConfig& c, const std::string& flag) {
  if (!flag.empty()) return fs::absolute(flag).lexically_normal().string();
  if (const char* env = std::getenv("CRNN_RUN_DIR"); env && *env)
    return fs::absolute(env).lexically_normal().string();
  if (!c.run_dir.empty()) return c.run_dir;
  return fs::absolute(fs::path("runs") / (c.name.empty() ? "default" : c.name)).string();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw InputError("cannot write " + p.string());
  out << text;
}

std::vector<Session> read_sessions(const std::string& path, const CorpusVocab& vocab) {
  auto s = read_corpus(path);
  validate_corpus(s, vocab);
  return s;
}

std::string format_prob(double p) {
  std::ostringstream os;
  os << std::setprecision(10) << p;
  return os.str();
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  ConfigArgs cfg;
  std::string run_dir;
  std::optional<std::size_t> iterations;
};

template <class T>
int train_with(const RunConfig& c, const std::string& run_dir, const CorpusVocab& vocab) {
  ContextSchema schema = c.context;
  schema.event_types = vocab.event_types;
  ModelConfig model = c.model;
  model.n_items = vocab.items.size();
  model.context_dim = schema.dim();
  model.context_active = schema.active_count();
  model.validate();

  const auto train_corpus = EncodedCorpus::build(read_sessions(c.data.train, vocab), schema);
  std::optional<EncodedCorpus> valid;
  if (!c.data.valid.empty())
    valid = EncodedCorpus::build(read_sessions(c.data.valid, vocab), schema);

  nlohmann::json eff = effective_json(c);
  eff["run_dir"] = run_dir;
  write_text(fs::path(run_dir) / "effective_config.yaml", to_yaml(eff));

  std::ofstream log(fs::path(run_dir) / "train_log.jsonl", std::ios::binary);
  if (!log) throw InputError("cannot write training log in " + run_dir);

  TrainHooks<T> hooks;
  hooks.on_log = [&](const TrainLogRecord& r) {
    nlohmann::json j{{"step", r.step},       {"lr", r.lr},
                     {"loss", r.loss},       {"grad_norm", r.grad_norm},
                     {"events", r.count},    {"wall_ms", r.wall_ms}};
    if (r.valid_recall) j["valid_recall"] = *r.valid_recall;
    log << j.dump() << '\n';
    const bool last = r.step + 1 == c.train.iterations;
    if (c.log_every > 0 && ((r.step + 1) % c.log_every == 0 || last || r.valid_recall)) {
      std::cout << "step " << r.step + 1 << "/" << c.train.iterations << "  lr "
                << std::setprecision(4) << r.lr << "  loss " << std::fixed << std::setprecision(4)
                << r.loss << std::defaultfloat;
      if (r.valid_recall)
        std::cout << "  valid Recall@" << c.evaluate.k << " " << std::fixed
                  << std::setprecision(4) << *r.valid_recall << std::defaultfloat;
      std::cout << '\n' << std::flush;
    }
  };
  if (valid && c.train.valid_every > 0)
    hooks.validate = [&](const ModelParams<T>& p) {
      return recall_at_k(score_corpus(p, model, *valid, c.evaluate.batch_size), c.evaluate.k);
    };

  auto result = train<T>(train_corpus, model, c.train, init_params<T>(model, c.seed), hooks);

  Checkpoint<T> ck{model, vocab, schema, std::move(result.params), eff};
  ck.metadata.erase("run_dir");
  const fs::path ck_path = fs::path(run_dir) / "checkpoint.bin";
  save_checkpoint(ck_path.string(), ck);

  nlohmann::json summary{{"steps", result.log.size()},
                         {"aborted", result.aborted},
                         {"checkpoint", ck_path.string()}};
  if (!result.log.empty()) summary["final_loss"] = result.log.back().loss;
  if (result.aborted) summary["diagnostic"] = result.diagnostic;
  write_text(fs::path(run_dir) / "summary.json", summary.dump(1) + "\n");

  if (result.aborted) {
    std::cerr << "crnn train: training aborted: " << result.diagnostic
              << "; last finite parameters saved to " << ck_path.string() << '\n';
    return kExitNumeric;
  }
  std::cout << "checkpoint written to " << ck_path.string() << '\n';
  return kExitOk;
}

int cmd_train(const TrainArgs& a) {
  auto [root, c] = load_config(a.cfg, {"data.train", "data.vocab", "model.cell"});
  if (a.iterations) {
    apply_override(root, "train.iterations=" + std::to_string(*a.iterations));
    c = parse_config(root, a.cfg.config);
  }
  c.run_dir = resolve_run_dir(c, a.run_dir);
  c.train.validate();
  fs::create_directories(c.run_dir);
  const CorpusVocab vocab = read_vocab(c.data.vocab);
  return c.precision == "float32" ? train_with<float>(c, c.run_dir, vocab)
                                  : train_with<double>(c, c.run_dir, vocab);
}

// ---------------------------------------------------------------------------
// evaluate

struct EvalArgs {
  ConfigArgs cfg;
  std::string checkpoint, corpus, vocab, out, baseline, name, projections;
  std::optional<std::size_t> k, resamples;
};

std::vector<ProjectionAxis> parse_axes(const std::string& list) {
  if (list == "all") return all_projection_axes();
  std::vector<ProjectionAxis> out;
  if (list == "none" || list.empty()) return out;
  std::stringstream ss(list);
  for (std::string tok; std::getline(ss, tok, ',');) {
    auto a = parse_projection_axis(tok);
    if (!a) throw ConfigError("unknown projection '" + tok + "'");
    out.push_back(*a);
  }
  return out;
}

std::vector<PredictionRecord> load_baseline(const std::string& path, std::string& name) {
  if (fs::path(path).extension() == ".json") {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open baseline report " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("baseline " + path + ": " + e.what());
    }
    name = j.value("model", std::string("baseline"));
    const fs::path rec = fs::path(path).parent_path() / j.value("records_file", "records.tsv");
    return read_records(rec.string());
  }
  name = fs::path(path).stem().string();
  return read_records(path);
}

template <class T>
int evaluate_with(const EvalArgs& a, const RunConfig& c, const std::string& ck_path,
                  const std::string& corpus_path, const std::string& vocab_path) {
  const auto ck = load_checkpoint<T>(ck_path);
  if (!vocab_path.empty()) {
    const auto v = read_vocab(vocab_path);
    if (!(v.items == ck.vocab.items) || !(v.event_types == ck.vocab.event_types))
      throw ConfigError("schema mismatch: vocabulary " + vocab_path +
                        " differs from the one stored in " + ck_path);
  }
  std::vector<Session> sessions = read_corpus(corpus_path);
  try {
    validate_corpus(sessions, ck.vocab);
  } catch (const InputError& e) {
    throw ConfigError(std::string("schema mismatch: ") + e.what());
  }
  const auto corpus = EncodedCorpus::build(std::move(sessions), ck.schema);
  if (corpus.context_dim != ck.model.context_dim && ck.model.uses_context())
    throw ConfigError("schema mismatch: context width differs from the checkpoint");

  const std::size_t k = a.k.value_or(c.evaluate.k);
  if (k == 0 || k > ck.model.n_items)
    throw ConfigError("k must be in [1, " + std::to_string(ck.model.n_items) + "]");
  const auto axes = a.projections.empty() ? c.evaluate.projections : parse_axes(a.projections);
  ProjectionOptions popt;
  popt.length_edges = c.evaluate.length_edges;
  popt.event_type_names = ck.vocab.event_types.names();
  BootstrapOptions bopt;
  bopt.resamples = a.resamples.value_or(c.evaluate.resamples);
  bopt.level = c.evaluate.level;
  bopt.seed = c.seed;

  std::string name = a.name;
  if (name.empty()) name = ck.metadata.value("name", std::string());
  if (name.empty()) name = std::string(to_string(ck.model.cell));

  const auto records = score_corpus(ck.params, ck.model, corpus, c.evaluate.batch_size);
  const auto report = make_report(records, k, axes, popt, bopt, name);

  const fs::path out = a.out.empty() ? fs::path(ck_path).parent_path() / "eval" : fs::path(a.out);
  fs::create_directories(out);
  auto j = to_json(report);
  j["records_file"] = "records.tsv";
  write_text(out / "report.json", j.dump(1) + "\n");
  write_records((out / "records.tsv").string(), records);
  const std::string table = format_report_table(report);
  write_text(out / "report.txt", table);
  for (const auto& [axis, rows] : report.projections)
    write_plot_data((out / ("plot_" + std::string(to_string(axis)) + ".tsv")).string(), rows);
  std::cout << table;

  if (!a.baseline.empty()) {
    std::string base_name;
    const auto base = load_baseline(a.baseline, base_name);
    std::vector<UpliftCell> cells;
    try {
      cells = uplift(records, base, k, axes, popt, bopt);
    } catch (const EvaluationError& e) {
      throw ConfigError(std::string("baseline ") + a.baseline + ": " + e.what());
    }
    const std::string ut = format_uplift_table(cells, name, base_name);
    write_text(out / "uplift.txt", ut);
    write_text(out / "uplift.json", to_json(cells).dump(1) + "\n");
    std::cout << '\n' << ut;
  }
  std::cout << "report written to " << out.string() << '\n';
  return kExitOk;
}

int cmd_evaluate(const EvalArgs& a) {
  const auto [root, c] = load_config(a.cfg);
  std::string ck_path = a.checkpoint;
  if (ck_path.empty() && !a.cfg.config.empty())
    ck_path = (fs::path(resolve_run_dir(c, "")) / "checkpoint.bin").string();
  if (ck_path.empty()) throw ConfigError("evaluate: --checkpoint is required without --config");
  const std::string corpus = a.corpus.empty() ? c.data.test : a.corpus;
  if (corpus.empty()) throw ConfigError("evaluate: no test corpus (--corpus or data.test)");
  const std::string vocab = a.vocab.empty() ? c.data.vocab : a.vocab;
  return checkpoint_scalar_width(ck_path) == sizeof(float)
             ? evaluate_with<float>(a, c, ck_path, corpus, vocab)
             : evaluate_with<double>(a, c, ck_path, corpus, vocab);
}

// ---------------------------------------------------------------------------
// predict

struct PredictArgs {
  std::string checkpoint;
  std::size_t k = 10;
  std::string next_type;
  std::optional<std::string> next_timestamp;
};

struct InputEvent {
  std::string session;
  std::int64_t timestamp_ms = 0;
  std::string item;
  std::string event_type;
};

/// Lines: "item", "timestamp item [event_type]" or
/// "session timestamp item event_type" (tab or space separated).
std::vector<InputEvent> read_events(std::istream& in, const EventTypeVocab& types) {
  std::vector<InputEvent> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream is(line);
    std::vector<std::string> f;
    for (std::string tok; is >> tok;) f.push_back(tok);
    if (f.empty() || f[0][0] == '#') continue;
    InputEvent e;
    e.event_type = types.size() ? types.name(0) : std::string();
    auto ts = [&](const std::string& s) {
      auto v = parse_timestamp_ms(s);
      if (!v) throw ConfigError("stdin:" + std::to_string(lineno) + ": bad timestamp '" + s + "'");
      return *v;
    };
    switch (f.size()) {
      case 1:
        e.item = f[0];
        e.timestamp_ms = out.empty() ? 0 : out.back().timestamp_ms;
        break;
      case 2:
      case 3:
        e.timestamp_ms = ts(f[0]);
        e.item = f[1];
        if (f.size() == 3) e.event_type = f[2];
        break;
      case 4:
        e.session = f[0];
        e.timestamp_ms = ts(f[1]);
        e.item = f[2];
        e.event_type = f[3];
        break;
      default:
        throw ConfigError("stdin:" + std::to_string(lineno) + ": expected 1 to 4 fields");
    }
    if (!out.empty() && e.session.empty()) e.session = out.back().session;
    out.push_back(std::move(e));
  }
  return out;
}

template <class T>
int predict_with(const PredictArgs& a) {
  const auto ck = load_checkpoint<T>(a.checkpoint);
  const auto& cfg = ck.model;
  if (a.k == 0 || a.k > cfg.n_items)
    throw ConfigError("k must be in [1, " + std::to_string(cfg.n_items) + "]");
  const auto events = read_events(std::cin, ck.vocab.event_types);
  if (events.empty()) throw ConfigError("predict: no events on standard input");

  EagerOps<T> ops;
  std::size_t begin = 0;
  while (begin < events.size()) {
    std::size_t end = begin;
    while (end < events.size() && events[end].session == events[begin].session) ++end;
    if (!events[begin].session.empty()) std::cout << "# session " << events[begin].session << '\n';

    Matrix<T> h(1, cfg.hidden_dim);
    std::optional<std::int64_t> prev;
    for (std::size_t i = begin; i < end; ++i) {
      const auto& e = events[i];
      std::size_t item;
      if (auto idx = ck.vocab.items.find(e.item)) {
        item = *idx;
      } else if (ck.vocab.items.has_oov()) {
        item = ck.vocab.items.oov_index();
        std::cerr << "warning: unknown item '" << e.item << "' mapped to " << kOovToken << '\n';
      } else {
        throw VocabularyError("unknown item '" + e.item + "' and the vocabulary has no OOV slot");
      }
      const std::int64_t sec = Event{e.timestamp_ms, 0, 0}.seconds();
      const auto cv = build_context({sec, ck.schema.event_types.index(e.event_type)}, prev, ck.schema);
      prev = sec;
      const std::size_t items[1] = {item};
      h = advance(ops, ck.params, cfg, std::span<const std::size_t>(items),
                  ContextRows{cv.active, cv.active.size(), cfg.context_dim}, h);
    }

    // Context of the event being predicted.
    const std::int64_t next_sec =
        a.next_timestamp ? [&] {
          auto v = parse_timestamp_ms(*a.next_timestamp);
          if (!v) throw ConfigError("bad --next-timestamp '" + *a.next_timestamp + "'");
          return Event{*v, 0, 0}.seconds();
        }()
                         : *prev;
    const std::string next_type =
        a.next_type.empty() ? ck.vocab.event_types.name(0) : a.next_type;
    const auto cn =
        build_context({next_sec, ck.schema.event_types.index(next_type)}, prev, ck.schema);
    const Matrix<T> logits = output_logits(ops, ck.params, cfg.output, h,
                                           ContextRows{cn.active, cn.active.size(), cfg.context_dim});
    const std::span<const T> row(logits.data(), logits.cols());
    double mx = -INFINITY;
    for (T v : row) mx = std::max(mx, static_cast<double>(v));
    double z = 0.0;
    for (T v : row) z += std::exp(static_cast<double>(v) - mx);
    std::size_t rank = 1;
    for (std::size_t id : predict_topk(row, a.k))
      std::cout << rank++ << '\t' << ck.vocab.items.decode(id) << '\t'
                << format_prob(std::exp(static_cast<double>(row[id]) - mx) / z) << '\n';
    begin = end;
  }
  return kExitOk;
}

int cmd_predict(const PredictArgs& a) {
  return checkpoint_scalar_width(a.checkpoint) == sizeof(float) ? predict_with<float>(a)
                                                                 : predict_with<double>(a);
}

// ---------------------------------------------------------------------------
// generate-synthetic

struct SynthArgs {
  ConfigArgs cfg;
  std::string out;
};

int cmd_generate(const SynthArgs& a) {
  const auto [root, c] = load_config(a.cfg);
  const auto& s = c.synthetic;
  const fs::path out = !a.out.empty() ? fs::path(a.out) : fs::path(s.out);
  if (out.empty()) throw ConfigError(c.source + ": missing required field 'synthetic.out'");
  if (s.train_sessions == 0 || s.test_sessions == 0)
    throw ConfigError("synthetic: train_sessions and test_sessions must be positive");

  SyntheticSpec spec = make_spec(s.recipe);
  spec.n_sessions = s.train_sessions + s.valid_sessions + s.test_sessions;
  const auto sessions = generate_synthetic(spec);
  const auto vocab = synthetic_vocab(spec);

  fs::create_directories(out);
  auto slice = [&](std::size_t from, std::size_t n) {
    return std::vector<Session>(sessions.begin() + static_cast<std::ptrdiff_t>(from),
                                sessions.begin() + static_cast<std::ptrdiff_t>(from + n));
  };
  write_corpus((out / "train.tsv").string(), slice(0, s.train_sessions));
  if (s.valid_sessions)
    write_corpus((out / "valid.tsv").string(), slice(s.train_sessions, s.valid_sessions));
  write_corpus((out / "test.tsv").string(),
               slice(s.train_sessions + s.valid_sessions, s.test_sessions));
  write_vocab((out / "vocab.json").string(), vocab);
  write_text(out / "spec.json", to_json(spec).dump() + "\n");

  const double kl = context_informativeness(spec);
  nlohmann::json bayes{{"context_informativeness", kl}, {"recall_at_k", nlohmann::json::array()}};
  std::cout << "wrote " << sessions.size() << " sessions to " << out.string() << '\n'
            << "context informativeness " << kl << '\n';
  for (std::size_t k : s.bayes_k) {
    if (k == 0 || k > spec.n_items) continue;
    const double r = bayes_recall_at_k(spec, k);
    bayes["recall_at_k"].push_back({{"k", k}, {"recall", r}});
    std::cout << "Bayes Recall@" << k << " " << r << '\n';
  }
  write_text(out / "bayes.json", bayes.dump(1) + "\n");
  return kExitOk;
}

// ---------------------------------------------------------------------------
// prepare

struct PrepareArgs {
  ConfigArgs cfg;
  std::string clicks, buys, out;
};

int cmd_prepare(const PrepareArgs& a) {
  auto [root, c] = load_config(a.cfg);
  auto p = c.prepare;
  if (!a.clicks.empty()) p.clicks = a.clicks;
  if (!a.buys.empty()) p.buys = a.buys;
  if (!a.out.empty()) p.out = a.out;
  for (auto [field, v] : {std::pair{"prepare.clicks", &p.clicks}, {"prepare.buys", &p.buys},
                          {"prepare.out", &p.out}})
    if (v->empty()) throw ConfigError(c.source + ": missing required field '" + field + "'");

  auto loaded = load_yoochoose(p.clicks, p.buys, p.max_malformed_fraction);
  std::cerr << "read " << loaded.report.click_rows << " clicks and " << loaded.report.buy_rows
            << " buys (" << loaded.report.click_malformed + loaded.report.buy_malformed
            << " malformed rows skipped)\n";
  auto sessions = truncate_and_filter(std::move(loaded.sessions), p.max_len);
  if (p.max_sessions > 0 && sessions.size() > p.max_sessions) {
    std::vector<std::size_t> idx(sessions.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(c.seed);
    rng.shuffle(idx);
    idx.resize(p.max_sessions);
    std::sort(idx.begin(), idx.end());
    std::vector<RawSession> kept;
    kept.reserve(idx.size());
    for (auto i : idx) kept.push_back(std::move(sessions[i]));
    sessions = std::move(kept);
  }

  CorpusSplit<RawSession> split;
  if (p.split == "time")
    split = split_by_time(sessions, TimeHoldout{static_cast<std::int64_t>(p.valid_days * 86400),
                                                static_cast<std::int64_t>(p.test_days * 86400)});
  else
    split = split_random(sessions, RandomHoldout{p.valid_fraction, p.test_fraction, c.seed});

  auto pre = preprocess(std::move(split.train), p.min_count, p.max_len);
  CorpusVocab vocab{pre.vocab, EventTypeVocab({"view", "sale"})};
  const auto train = encode_sessions(pre.sessions, vocab.items, vocab.event_types, true);
  const auto valid = encode_sessions(split.valid, vocab.items, vocab.event_types, false);
  const auto test = encode_sessions(split.test, vocab.items, vocab.event_types, false);

  const fs::path out(p.out);
  fs::create_directories(out);
  write_corpus((out / "train.tsv").string(), train);
  write_corpus((out / "valid.tsv").string(), valid);
  write_corpus((out / "test.tsv").string(), test);
  write_vocab((out / "vocab.json").string(), vocab);
  std::cout << "train " << train.size() << ", valid " << valid.size() << ", test " << test.size()
            << " sessions; " << vocab.items.retained() << " items kept (min_count "
            << p.min_count << ")\n";
  return kExitOk;
}

}  // namespace
}  // namespace crnn::cli

int main(int argc, char** argv) {
  using namespace crnn::cli;
  CLI::App app{"Context-aware recurrent session recommender"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model from a config");
  add_config_args(*train, ta.cfg, true);
  train->add_option("--run-dir", ta.run_dir, "Output directory (overrides CRNN_RUN_DIR)");
  train->add_option("--iterations", ta.iterations, "Override train.iterations");

  EvalArgs ea;
  auto* eval = app.add_subcommand("evaluate", "Score a checkpoint on a test corpus");
  add_config_args(*eval, ea.cfg, false);
  eval->add_option("--checkpoint", ea.checkpoint, "Checkpoint file");
  eval->add_option("--corpus", ea.corpus, "Canonical test corpus");
  eval->add_option("--vocab", ea.vocab, "Vocabulary the corpus was encoded with");
  eval->add_option("-k,--k", ea.k, "Cut-off of Recall@K");
  eval->add_option("--projections", ea.projections,
                   "Comma list of event-type,new-historical,time-gap,seq-length, or all/none");
  eval->add_option("--resamples", ea.resamples, "Bootstrap resamples");
  eval->add_option("--out", ea.out, "Report directory");
  eval->add_option("--baseline", ea.baseline, "Baseline report.json or records.tsv for uplift");
  eval->add_option("--name", ea.name, "Model label in reports");

  PredictArgs pa;
  auto* predict = app.add_subcommand("predict", "Top-K next items for sessions read from stdin");
  predict->add_option("--checkpoint", pa.checkpoint, "Checkpoint file")->required();
  predict->add_option("-k,--k", pa.k, "Number of items to list");
  predict->add_option("--next-type", pa.next_type, "Event type of the predicted event");
  predict->add_option("--next-timestamp", pa.next_timestamp,
                      "Timestamp of the predicted event (default: the last input event's)");

  SynthArgs sa;
  auto* synth = app.add_subcommand("generate-synthetic", "Draw a synthetic corpus");
  add_config_args(*synth, sa.cfg, true);
  synth->add_option("--out", sa.out, "Output directory (overrides synthetic.out)");

  PrepareArgs ra;
  auto* prep = app.add_subcommand("prepare", "Convert YooChoose logs to canonical splits");
  add_config_args(*prep, ra.cfg, false);
  prep->add_option("--clicks", ra.clicks, "yoochoose-clicks.dat");
  prep->add_option("--buys", ra.buys, "yoochoose-buys.dat");
  prep->add_option("--out", ra.out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*train) return cmd_train(ta);
    if (*eval) return cmd_evaluate(ea);
    if (*predict) return cmd_predict(pa);
    if (*synth) return cmd_generate(sa);
    if (*prep) return cmd_prepare(ra);
  } catch (const crnn::ConfigError& e) {
    std::cerr << "crnn: " << e.what() << '\n';
    return kExitUsage;
  } catch (const crnn::VocabularyError& e) {
    std::cerr << "crnn: " << e.what() << '\n';
    return kExitUsage;
  } catch (const crnn::NumericError& e) {
    std::cerr << "crnn: numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "crnn: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}
