#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "crnn/checkpoint.hpp"
#include "crnn/training.hpp"

using namespace crnn;

namespace {

Checkpoint<double> sample(CellKind cell, IntegrationKind in, IntegrationKind out) {
  Checkpoint<double> ck;
  ck.schema.event_types = EventTypeVocab({"view", "sale"});
  ck.schema.first_event_bucket = true;
  ck.schema.utc_offset_seconds = 3600;
  ck.vocab = CorpusVocab{ItemVocab({"10", "11", "12", "13"}, true, 5), ck.schema.event_types};
  ck.model.cell = cell;
  ck.model.input = in;
  ck.model.output = out;
  ck.model.n_items = ck.vocab.items.size();
  ck.model.embed_dim = ck.model.hidden_dim = 3;
  ck.model.context_dim = ck.schema.dim();
  ck.model.context_active = ck.schema.active_count();
  ck.params = init_params<double>(ck.model, 4);
  ck.metadata = {{"note", "test"}};
  return ck;
}

std::string bytes(const Checkpoint<double>& ck) {
  std::ostringstream os;
  write_checkpoint(os, ck);
  return os.str();
}

}  // namespace

TEST(Checkpoint, BitExactRoundTrip) {
  for (auto cell : {CellKind::gru, CellKind::context_wrapper_gru, CellKind::bag_of_items}) {
    const auto kind = cell == CellKind::bag_of_items ? IntegrationKind::mult : IntegrationKind::concat_mult;
    const auto ck = sample(cell, kind, kind);
    std::istringstream in(bytes(ck));
    const auto back = read_checkpoint<double>(in);
    EXPECT_EQ(to_json(back.model), to_json(ck.model));
    EXPECT_EQ(back.schema, ck.schema);
    EXPECT_EQ(back.vocab.items, ck.vocab.items);
    EXPECT_EQ(back.metadata, ck.metadata);
    const auto a = ck.params.list(), b = back.params.list();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i]->name, b[i]->name);
      EXPECT_EQ(std::memcmp(a[i]->value.data(), b[i]->value.data(), a[i]->value.size() * sizeof(double)), 0);
    }
    EXPECT_EQ(bytes(back), bytes(ck));
  }
}

TEST(Checkpoint, CorruptInputsRejected) {
  const auto good = bytes(sample(CellKind::gru, IntegrationKind::none, IntegrationKind::none));
  std::istringstream truncated(good.substr(0, good.size() - 5));
  EXPECT_THROW(read_checkpoint<double>(truncated), InputError);
  std::istringstream junk("not a checkpoint at all");
  EXPECT_THROW(read_checkpoint<double>(junk), InputError);
  std::istringstream wrong_width(good);
  EXPECT_THROW(read_checkpoint<float>(wrong_width), InputError);
  EXPECT_THROW(load_checkpoint<double>("/nonexistent/ck.bin"), InputError);
}

TEST(Checkpoint, SeededTrainingGivesIdenticalFiles) {
  ContextSchema schema;
  schema.event_types = EventTypeVocab({"view", "sale"});
  std::vector<Session> ss;
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    Session s{"s" + std::to_string(i), {}};
    for (int t = 0; t < 5; ++t)
      s.events.push_back({1'400'000'000'000 + t * 60'000, static_cast<std::size_t>(rng.below(6)),
                          static_cast<std::size_t>(rng.below(2))});
    ss.push_back(s);
  }
  const auto corpus = EncodedCorpus::build(ss, schema);
  auto run = [&] {
    Checkpoint<double> ck;
    ck.schema = schema;
    ck.vocab = CorpusVocab{ItemVocab({"a", "b", "c", "d", "e", "f"}, false), schema.event_types};
    ck.model.cell = CellKind::context_wrapper_gru;
    ck.model.input = ck.model.output = IntegrationKind::concat_mult;
    ck.model.n_items = 6;
    ck.model.embed_dim = ck.model.hidden_dim = 5;
    ck.model.context_dim = schema.dim();
    ck.model.context_active = schema.active_count();
    TrainConfig tc;
    tc.batch_size = 4;
    tc.iterations = 30;
    tc.seed = 8;
    ck.params = train<double>(corpus, ck.model, tc, init_params<double>(ck.model, 2)).params;
    return bytes(ck);
  };
  EXPECT_EQ(run(), run());
}
