#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "crnn/corpus.hpp"

namespace fs = std::filesystem;
using namespace crnn;

namespace {

struct Outcome {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("crnn_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()) +
            "_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    write_toy();
  }
  void TearDown() override { fs::remove_all(dir_); }

  Outcome run(const std::string& args, const std::string& stdin_text = {}) {
    const fs::path in = dir_ / "stdin.txt", out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    std::ofstream(in, std::ios::binary) << stdin_text;
    const std::string cmd = "cd '" + dir_.string() + "' && env -u CRNN_RUN_DIR '" CRNN_CLI_PATH "' " +
                            args + " < '" + in.string() + "' > '" + out.string() + "' 2> '" +
                            err.string() + "'";
    const int status = std::system(cmd.c_str());
    Outcome r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

  // Eight copies of one 12-event session over distinct items, plus a vocab
  // with an OOV slot.
  void write_toy() {
    std::vector<std::string> ids;
    for (int i = 0; i < 12; ++i) ids.push_back("item" + std::to_string(i));
    CorpusVocab v{ItemVocab(ids, true), EventTypeVocab({"view", "sale"})};
    std::vector<Session> sessions;
    for (int s = 0; s < 8; ++s) {
      Session ss{"t" + std::to_string(s), {}};
      for (std::size_t i = 0; i < ids.size(); ++i)
        ss.events.push_back(Event{(1396310400 + 86400 * s + 60 * static_cast<std::int64_t>(i)) * 1000, i, i % 2});
      sessions.push_back(ss);
    }
    fs::create_directories(dir_ / "data");
    write_corpus((dir_ / "data/train.tsv").string(), sessions);
    write_corpus((dir_ / "data/test.tsv").string(), {sessions.front()});
    write_vocab((dir_ / "data/vocab.json").string(), v);
    std::ofstream(dir_ / "toy.yaml") << R"(name: toy
seed: 5
run_dir: run
data:
  train: data/train.tsv
  test: data/test.tsv
  vocab: data/vocab.json
model:
  cell: context-wrapper-gru
  input: concat
  output: mult
  dim: 16
train:
  batch_size: 8
  iterations: 300
  lr_start: 0.05
  lr_end: 0.01
  log_every: 100
evaluate:
  k: 1
  resamples: 10
)";
  }

  double final_loss(const std::string& run_dir) {
    return nlohmann::json::parse(slurp(dir_ / run_dir / "summary.json")).at("final_loss").get<double>();
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, TrainWritesCheckpointLogAndEffectiveConfig) {
  const Outcome r = run("train -c toy.yaml");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir_ / "run/checkpoint.bin"));
  EXPECT_TRUE(fs::exists(dir_ / "run/effective_config.yaml"));
  EXPECT_LT(final_loss("run"), 0.1);
  std::ifstream log(dir_ / "run/train_log.jsonl");
  std::size_t lines = 0;
  for (std::string l; std::getline(log, l); ++lines) {
    const auto j = nlohmann::json::parse(l);
    ASSERT_EQ(j.at("step").get<std::size_t>(), lines);
    ASSERT_TRUE(j.contains("lr") && j.contains("loss") && j.contains("wall_ms"));
  }
  EXPECT_EQ(lines, 300u);
  EXPECT_NE(r.out.find("step 300/300"), std::string::npos);
}

TEST_F(Cli, RerunAndEffectiveConfigReproduceCheckpoint) {
  ASSERT_EQ(run("train -c toy.yaml --iterations 40").code, 0);
  ASSERT_EQ(run("train -c toy.yaml --iterations 40 --run-dir again").code, 0);
  ASSERT_EQ(run("train -c run/effective_config.yaml --run-dir echoed").code, 0);
  const auto a = slurp(dir_ / "run/checkpoint.bin");
  EXPECT_EQ(a, slurp(dir_ / "again/checkpoint.bin"));
  EXPECT_EQ(a, slurp(dir_ / "echoed/checkpoint.bin"));
  ASSERT_EQ(run("train -c toy.yaml --iterations 40 --seed 6 --run-dir other").code, 0);
  EXPECT_NE(a, slurp(dir_ / "other/checkpoint.bin"));
}

TEST_F(Cli, RunDirectoryFromEnvironment) {
  const std::string env = "CRNN_RUN_DIR='" + (dir_ / "from_env").string() + "' ";
  const std::string cmd = "cd '" + dir_.string() + "' && " + env + "'" CRNN_CLI_PATH "' train -c toy.yaml --iterations 5 > /dev/null";
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  EXPECT_TRUE(fs::exists(dir_ / "from_env/checkpoint.bin"));
  EXPECT_FALSE(fs::exists(dir_ / "run"));
}

TEST_F(Cli, ConfigErrorsExitTwo) {
  std::ofstream(dir_ / "missing.yaml") << "model:\n  cell: gru\ndata:\n  train: data/train.tsv\n";
  Outcome r = run("train -c missing.yaml");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("data.vocab"), std::string::npos) << r.err;

  std::ofstream(dir_ / "unknown.yaml") << slurp(dir_ / "toy.yaml") << "  flavour: sour\n";
  r = run("train -c unknown.yaml");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("unknown.yaml:22:3"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("evaluate.flavour"), std::string::npos) << r.err;

  r = run("train -c toy.yaml --set model.dim=wide");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("model.dim"), std::string::npos);

  EXPECT_EQ(run("train -c toy.yaml --threads 2").code, 2);
  EXPECT_EQ(run("train -c toy.yaml --set model.cell=lstm").code, 2);
  EXPECT_EQ(run("train -c nowhere.yaml").code, 2);
  EXPECT_EQ(run("train").code, 2);
  EXPECT_EQ(run("").code, 2);
}

TEST_F(Cli, DivergenceExitsThreeWithLastGoodCheckpoint) {
  const Outcome r = run("train -c toy.yaml --set train.lr_start=1e300 --set train.lr_end=1e299");
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_TRUE(fs::exists(dir_ / "run/checkpoint.bin"));
  EXPECT_TRUE(nlohmann::json::parse(slurp(dir_ / "run/summary.json")).at("aborted").get<bool>());
}

TEST_F(Cli, EvaluateMemorizedToyAndUplift) {
  ASSERT_EQ(run("train -c toy.yaml").code, 0);
  Outcome r = run("evaluate -c toy.yaml --out ev");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rep = nlohmann::json::parse(slurp(dir_ / "ev/report.json"));
  EXPECT_EQ(rep.at("k").get<std::size_t>(), 1u);
  EXPECT_DOUBLE_EQ(rep.at("recall").get<double>(), 1.0);
  EXPECT_EQ(rep.at("events").get<std::size_t>(), 11u);
  for (const char* f : {"records.tsv", "report.txt", "plot_event-type.tsv", "plot_seq-length.tsv",
                        "plot_time-gap.tsv", "plot_new-historical.tsv"})
    EXPECT_TRUE(fs::exists(dir_ / "ev" / f)) << f;

  ASSERT_EQ(run("train -c toy.yaml --iterations 1 --run-dir weak").code, 0);
  r = run("evaluate --checkpoint weak/checkpoint.bin --corpus data/test.tsv -k 1 --out evweak "
          "--baseline ev/report.json --projections event-type");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto cells = nlohmann::json::parse(slurp(dir_ / "evweak/uplift.json"));
  ASSERT_EQ(cells.size(), 3u);
  EXPECT_EQ(cells[0].at("axis"), "overall");
  EXPECT_DOUBLE_EQ(cells[0].at("b").get<double>(), 1.0);
  EXPECT_NE(r.out.find("uplift of"), std::string::npos);
}

TEST_F(Cli, EvaluateRejectsForeignSchema) {
  ASSERT_EQ(run("train -c toy.yaml --iterations 2").code, 0);
  CorpusVocab other{ItemVocab({"x", "y"}, true), EventTypeVocab({"view"})};
  write_vocab((dir_ / "other_vocab.json").string(), other);
  EXPECT_EQ(run("evaluate -c toy.yaml --vocab other_vocab.json").code, 2);
  std::ofstream(dir_ / "wide.tsv") << "s\t1.000\t0\t0\ns\t2.000\t99\t0\n";
  EXPECT_EQ(run("evaluate -c toy.yaml --corpus wide.tsv").code, 2);
}

TEST_F(Cli, PredictListsRankedProbabilities) {
  ASSERT_EQ(run("train -c toy.yaml").code, 0);
  EXPECT_EQ(run("predict --checkpoint run/checkpoint.bin", "").code, 2);

  Outcome r = run("predict --checkpoint run/checkpoint.bin -k 5", "1396310400 item0 view\n");
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream is(r.out);
  std::vector<std::pair<std::string, double>> rows;
  for (std::string line; std::getline(is, line);) {
    std::istringstream ls(line);
    int rank;
    std::string id;
    double p;
    ASSERT_TRUE(ls >> rank >> id >> p) << line;
    EXPECT_EQ(rank, static_cast<int>(rows.size()) + 1);
    rows.emplace_back(id, p);
  }
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0].first, "item1");
  double sum = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    sum += rows[i].second;
    if (i) {
      EXPECT_LE(rows[i].second, rows[i - 1].second);
    }
  }
  EXPECT_LE(sum, 1.0 + 1e-9);

  r = run("predict --checkpoint run/checkpoint.bin -k 3", "1396310400 item0 view\n1396310460 mystery sale\n");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.err.find("mystery"), std::string::npos);
}

TEST_F(Cli, GenerateSyntheticWritesSplitsAndBayesBound) {
  std::ofstream(dir_ / "synth.yaml") << "seed: 2\nsynthetic:\n  n_items: 20\n  train_sessions: 50\n"
                                         "  valid_sessions: 5\n  test_sessions: 10\n  out: syn\n";
  const Outcome r = run("generate-synthetic -c synth.yaml");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_corpus((dir_ / "syn/train.tsv").string()).size(), 50u);
  EXPECT_EQ(read_corpus((dir_ / "syn/valid.tsv").string()).size(), 5u);
  EXPECT_EQ(read_corpus((dir_ / "syn/test.tsv").string()).size(), 10u);
  EXPECT_EQ(read_vocab((dir_ / "syn/vocab.json").string()).items.size(), 20u);
  const auto bayes = nlohmann::json::parse(slurp(dir_ / "syn/bayes.json"));
  for (const auto& e : bayes.at("recall_at_k")) {
    EXPECT_GT(e.at("recall").get<double>(), 0.0);
    EXPECT_LE(e.at("recall").get<double>(), 1.0);
  }
  const auto first = slurp(dir_ / "syn/train.tsv");
  ASSERT_EQ(run("generate-synthetic -c synth.yaml --out syn2").code, 0);
  EXPECT_EQ(first, slurp(dir_ / "syn2/train.tsv"));
}

TEST_F(Cli, PrepareYoochooseFixture) {
  const std::string fx = CRNN_FIXTURE_DIR;
  const Outcome r = run("prepare --clicks " + fx + "/yoochoose-clicks.dat --buys " + fx +
                    "/yoochoose-buys.dat --out prep --set prepare.split=random --set prepare.min_count=1"
                    " --set prepare.valid_fraction=0.25 --set prepare.test_fraction=0.25");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto v = read_vocab((dir_ / "prep/vocab.json").string());
  EXPECT_EQ(v.event_types.names(), (std::vector<std::string>{"view", "sale"}));
  std::size_t sessions = 0;
  for (const char* f : {"train.tsv", "valid.tsv", "test.tsv"}) {
    const auto s = read_corpus((dir_ / "prep" / f).string());
    EXPECT_NO_THROW(validate_corpus(s, v));
    sessions += s.size();
  }
  EXPECT_EQ(sessions, 3u);
}

TEST_F(Cli, ShippedConfigsRun) {
  const std::string cfg = CRNN_CONFIG_DIR;
  Outcome r = run("generate-synthetic -c " + cfg + "/synthetic/generate.yaml --out syn"
                  " --set synthetic.train_sessions=200 --set synthetic.valid_sessions=20"
                  " --set synthetic.test_sessions=50");
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string data = " --set data.train=" + (dir_ / "syn/train.tsv").string() +
                           " --set data.valid=" + (dir_ / "syn/valid.tsv").string() +
                           " --set data.test=" + (dir_ / "syn/test.tsv").string() +
                           " --set data.vocab=" + (dir_ / "syn/vocab.json").string();
  for (const char* v : {"covisit", "bag-of-items", "gru", "concat-gru", "mult-gru", "concat-mult-gru",
                        "concat-mult-context"}) {
    r = run("train -c " + cfg + "/synthetic/" + v + ".yaml" + data + " --iterations 3 --run-dir r_" + v);
    EXPECT_EQ(r.code, 0) << v << ": " << r.err;
    r = run("evaluate -c " + cfg + "/synthetic/" + v + ".yaml" + data + " --checkpoint r_" + v +
            "/checkpoint.bin --out e_" + v + " --resamples 2");
    EXPECT_EQ(r.code, 0) << v << ": " << r.err;
  }
  for (const char* v : {"gru", "concat-gru", "mult-gru", "concat-mult-gru", "concat-mult-context"}) {
    r = run("train -c " + cfg + "/yoochoose/" + v + ".yaml" + data + " --iterations 2 --run-dir y_" + v +
            " --set model.dim=8");
    EXPECT_EQ(r.code, 0) << v << ": " << r.err;
  }
  const std::string fx = CRNN_FIXTURE_DIR;
  r = run("prepare -c " + cfg + "/yoochoose/prepare.yaml --clicks " + fx + "/yoochoose-clicks.dat --buys " +
          fx + "/yoochoose-buys.dat --out prep --set prepare.split=random --set prepare.min_count=1"
          " --set prepare.valid_fraction=0.25 --set prepare.test_fraction=0.25");
  EXPECT_EQ(r.code, 0) << r.err;
}
