#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "crnn/corpus.hpp"
#include "crnn/model.hpp"
#include "crnn/rng.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace crnn;
using Md = Matrix<double>;

namespace {

constexpr std::size_t kItems = 20, kDim = 6, kCtx = 7;

// Context vectors with one index in [0, 3) and one in [3, 7).
ContextVector random_context(Rng& rng) {
  return ContextVector{{static_cast<std::size_t>(rng.below(3)), 3 + static_cast<std::size_t>(rng.below(4))}};
}

ModelConfig tiny_config(CellKind cell, IntegrationKind in, IntegrationKind out) {
  ModelConfig c;
  c.cell = cell;
  c.input = in;
  c.output = out;
  c.n_items = kItems;
  c.embed_dim = c.hidden_dim = kDim;
  c.context_dim = kCtx;
  c.context_active = 2;
  return c;
}

struct TinyData {
  std::vector<Session> sessions;
  std::vector<std::vector<ContextVector>> contexts;

  Batch<double> batch() const {
    std::vector<const Session*> ss;
    std::vector<const std::vector<ContextVector>*> cs;
    for (std::size_t i = 0; i < sessions.size(); ++i) {
      ss.push_back(&sessions[i]);
      cs.push_back(&contexts[i]);
    }
    return make_batch<double, Session>(ss, cs, 2, kCtx);
  }
};

TinyData tiny_data(std::uint64_t seed, std::vector<std::size_t> lengths = {4, 3}) {
  Rng rng(seed);
  TinyData d;
  for (std::size_t n = 0; n < lengths.size(); ++n) {
    Session s{"s" + std::to_string(n), {}};
    std::vector<ContextVector> cs;
    for (std::size_t t = 0; t < lengths[n]; ++t) {
      s.events.push_back({static_cast<std::int64_t>(t) * 1000, static_cast<std::size_t>(rng.below(kItems)), 0});
      cs.push_back(random_context(rng));
    }
    d.sessions.push_back(std::move(s));
    d.contexts.push_back(std::move(cs));
  }
  return d;
}

// Randomizes every parameter, biases included. Multiplicative context
// projections stay positive so the gate scales sum to roughly one over the
// two active indices.
void randomize(ModelParams<double>& p, Rng& rng, double scale = 0.5) {
  for (auto* prm : p.list()) {
    const bool multiplicative = prm->name[0] == 'U' || prm->name[0] == 'C';
    for (double& v : prm->value.values())
      v = multiplicative ? rng.uniform(0.2, 0.8) : rng.uniform(-scale, scale);
  }
}

double eager_mean_loss(const ModelParams<double>& p, const ModelConfig& cfg, const Batch<double>& b) {
  EagerOps<double> ops;
  const Md total = run_batch(ops, p, cfg, b, [](std::size_t, const Md&) {});
  return total(0, 0) / b.mask_count();
}

test::Mat to_mat(const Md& m) {
  test::Mat out(m.rows(), test::Vec(m.cols()));
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  return out;
}

test::Vec row_vec(const Md& m, std::size_t r) { return test::Vec(m.row(r).begin(), m.row(r).end()); }

test::GateWeights gate_weights(const ModelParams<double>& p) {
  return {to_mat(p.W_u->value), to_mat(p.W_r->value), to_mat(p.W_h->value),
          row_vec(p.b_u->value, 0), row_vec(p.b_r->value, 0), row_vec(p.b_h->value, 0)};
}

Md random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Md m(r, c);
  for (double& v : m.values()) v = rng.uniform(-1.0, 1.0);
  return m;
}

}  // namespace

TEST(GruStep, MatchesScalarOracle) {
  const auto cfg = tiny_config(CellKind::gru, IntegrationKind::none, IntegrationKind::none);
  EagerOps<double> ops;
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    auto p = init_params<double>(cfg, trial);
    randomize(p, rng, 1.0);
    const Md x = random_matrix(1, kDim, rng), h = random_matrix(1, kDim, rng);
    const Md got = gru_step(ops, p, x, h);
    const auto want = test::gru_reference(row_vec(x, 0), row_vec(h, 0), gate_weights(p));
    for (std::size_t j = 0; j < kDim; ++j) ASSERT_NEAR(got(0, j), want[j], 1e-10);
  }
}

TEST(ContextWrapperGruStep, MatchesScalarOracle) {
  const auto cfg = tiny_config(CellKind::context_wrapper_gru, IntegrationKind::none, IntegrationKind::none);
  EagerOps<double> ops;
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    auto p = init_params<double>(cfg, trial);
    randomize(p, rng, 1.0);
    const Md x = random_matrix(1, kDim, rng), h = random_matrix(1, kDim, rng);
    const ContextVector c = random_context(rng);
    const ContextRows rows{c.active, 2, kCtx};
    const Md got = context_wrapper_gru_step(ops, p, x, h, rows);
    const auto su = test::project_context(to_mat(p.U_u->value), c.active);
    const auto sr = test::project_context(to_mat(p.U_r->value), c.active);
    const auto sh = test::project_context(to_mat(p.U_h->value), c.active);
    const auto want = test::gru_reference(row_vec(x, 0), row_vec(h, 0), gate_weights(p), &su, &sr, &sh);
    for (std::size_t j = 0; j < kDim; ++j) ASSERT_NEAR(got(0, j), want[j], 1e-10);
  }
}

TEST(ContextWrapperGruStep, UnitScalingEqualsPlainGru) {
  const auto cw = tiny_config(CellKind::context_wrapper_gru, IntegrationKind::none, IntegrationKind::none);
  EagerOps<double> ops;
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    auto p = init_params<double>(cw, trial);
    randomize(p, rng, 1.0);
    for (auto* u : {&*p.U_u, &*p.U_r, &*p.U_h}) u->value.fill(0.5);  // two active indices
    const Md x = random_matrix(4, kDim, rng), h = random_matrix(4, kDim, rng);
    std::vector<std::size_t> ids;
    for (int r = 0; r < 4; ++r) {
      const auto c = random_context(rng);
      ids.insert(ids.end(), c.active.begin(), c.active.end());
    }
    const Md a = context_wrapper_gru_step(ops, p, x, h, ContextRows{ids, 2, kCtx});
    const Md b = gru_step(ops, p, x, h);
    ASSERT_LE(max_abs_diff(a, b), 1e-12);
  }
}

TEST(GruStep, ZeroWeightsHalveState) {
  const auto cfg = tiny_config(CellKind::gru, IntegrationKind::none, IntegrationKind::none);
  auto p = init_params<double>(cfg, 1);
  for (auto* prm : p.list()) prm->value.fill(0.0);
  Rng rng(8);
  const Md x = random_matrix(3, kDim, rng), h = random_matrix(3, kDim, rng);
  const Md got = gru_step(EagerOps<double>{}, p, x, h);
  for (std::size_t i = 0; i < h.size(); ++i) ASSERT_EQ(got.data()[i], 0.5 * h.data()[i]);
}

TEST(OutputLogits, UniformLogitsGiveLogVocabularyNll) {
  const auto cfg = tiny_config(CellKind::gru, IntegrationKind::none, IntegrationKind::none);
  auto p = init_params<double>(cfg, 1);
  p.V.value.fill(0.0);
  const auto d = tiny_data(1, {5});
  const auto out = forward_sequence(p, cfg, std::vector<std::size_t>{1, 2, 3, 4, 5}, d.contexts[0]);
  EXPECT_NEAR(out.nll / 4.0, std::log(static_cast<double>(kItems)), 1e-12);
}

TEST(ModelConfig, ValidationErrors) {
  auto c = tiny_config(CellKind::gru, IntegrationKind::none, IntegrationKind::none);
  c.hidden_dim = 7;
  EXPECT_THROW(c.validate(), ConfigError);
  auto b = tiny_config(CellKind::bag_of_items, IntegrationKind::concat, IntegrationKind::none);
  EXPECT_THROW(b.validate(), ConfigError);
  auto s = tiny_config(CellKind::gru, IntegrationKind::concat, IntegrationKind::mult);
  s.share_context_projection = true;
  EXPECT_THROW(s.validate(), ConfigError);
  auto z = tiny_config(CellKind::gru, IntegrationKind::mult, IntegrationKind::none);
  z.context_dim = 0;
  EXPECT_THROW(z.validate(), ConfigError);
}

TEST(Params, ShapesFollowConfig) {
  auto cfg = tiny_config(CellKind::context_wrapper_gru, IntegrationKind::concat_mult, IntegrationKind::concat_mult);
  auto p = init_params<double>(cfg, 2);
  EXPECT_EQ(p.W_u->value.rows(), kDim + kCtx + kDim);
  EXPECT_EQ(p.D_out->value.rows(), kCtx);
  EXPECT_EQ(p.D_out->value.cols(), kItems);
  EXPECT_EQ(p.U_h->value.cols(), kDim);
  EXPECT_NO_THROW(check_params(cfg, p));
  p.C_out.reset();
  EXPECT_THROW(check_params(cfg, p), ConfigError);
}

TEST(Params, ContextProjectionsStartNearOne) {
  auto cfg = tiny_config(CellKind::context_wrapper_gru, IntegrationKind::mult, IntegrationKind::mult);
  const auto p = init_params<double>(cfg, 9);
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const auto c = random_context(rng);
    for (const auto* prm : {&*p.U_u, &*p.C_in, &*p.C_out}) {
      const auto s = test::project_context(to_mat(prm->value), c.active);
      for (double v : s) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(std::abs(v - 1.0), 1.0);
      }
    }
  }
}

TEST(TiedEmbedding, SingleMatrixServesInputAndOutput) {
  const auto cfg = tiny_config(CellKind::gru, IntegrationKind::none, IntegrationKind::none);
  auto p = init_params<double>(cfg, 3);
  std::size_t item_sized = 0;
  for (const auto* prm : p.list())
    if (prm->value.rows() == kItems && prm->value.cols() == kDim) ++item_sized;
  EXPECT_EQ(item_sized, 1u);

  // Changing one row of V moves both the input embedding and the logit of
  // that item.
  const std::vector<std::size_t> items{4, 9};
  const auto d = tiny_data(2, {2});
  const auto before = forward_sequence(p, cfg, items, d.contexts[0]);
  Rng rng(4);
  auto p2 = p;
  for (double& v : p2.V.value.row(4)) v += rng.uniform(0.1, 0.2);
  const auto after = forward_sequence(p2, cfg, items, d.contexts[0]);
  for (std::size_t j = 0; j < kItems; ++j)
    if (j != 4) {
      EXPECT_NE(before.logits[0](0, j), after.logits[0](0, j)) << "state unaffected";
    }

  // Both paths accumulate into one gradient buffer.
  Tape<double> tape;
  TapeOps<double> ops{tape};
  const Var<double> a = ops.param(p.V), b = ops.param(p.V);
  EXPECT_EQ(a.id, b.id);
}

namespace {

struct GradCase {
  CellKind cell;
  IntegrationKind in, out;
};

std::string case_name(const testing::TestParamInfo<GradCase>& i) {
  std::string s = std::string(to_string(i.param.cell)) + "_" + std::string(to_string(i.param.in)) +
                  "_" + std::string(to_string(i.param.out));
  std::replace(s.begin(), s.end(), '-', '_');
  return s;
}

class FullModelGradient : public testing::TestWithParam<GradCase> {};

}  // namespace

TEST_P(FullModelGradient, MatchesFiniteDifferences) {
  const auto gc = GetParam();
  const auto cfg = tiny_config(gc.cell, gc.in, gc.out);
  auto p = init_params<double>(cfg, 17);
  Rng rng(23);
  randomize(p, rng);
  const auto data = tiny_data(29);
  const auto batch = data.batch();

  Tape<double> tape;
  p.zero_grad();
  const auto loss = taped_batch_loss(tape, p, cfg, batch);
  tape.backward(loss.mean);
  EXPECT_NEAR(loss.mean.value()(0, 0), eager_mean_loss(p, cfg, batch), 1e-12);

  const auto rep = test::check_gradients(p.list(), [&] { return eager_mean_loss(p, cfg, batch); });
  EXPECT_LT(rep.max_rel_error, 1e-4) << "worst " << rep.worst_param << "[" << rep.worst_index
                                     << "] analytic " << rep.worst_analytic << " numeric "
                                     << rep.worst_numeric;
  EXPECT_GT(rep.checked, 0u);
}

INSTANTIATE_TEST_SUITE_P(
    AllConfigurations, FullModelGradient,
    testing::Values(GradCase{CellKind::gru, IntegrationKind::none, IntegrationKind::none},
                    GradCase{CellKind::gru, IntegrationKind::concat, IntegrationKind::concat},
                    GradCase{CellKind::gru, IntegrationKind::mult, IntegrationKind::mult},
                    GradCase{CellKind::gru, IntegrationKind::concat_mult, IntegrationKind::concat_mult},
                    GradCase{CellKind::context_wrapper_gru, IntegrationKind::none, IntegrationKind::none},
                    GradCase{CellKind::context_wrapper_gru, IntegrationKind::concat, IntegrationKind::concat},
                    GradCase{CellKind::context_wrapper_gru, IntegrationKind::mult, IntegrationKind::mult},
                    GradCase{CellKind::context_wrapper_gru, IntegrationKind::concat_mult, IntegrationKind::concat_mult},
                    GradCase{CellKind::gru, IntegrationKind::concat, IntegrationKind::mult},
                    GradCase{CellKind::covisit, IntegrationKind::none, IntegrationKind::none},
                    GradCase{CellKind::covisit, IntegrationKind::mult, IntegrationKind::concat_mult},
                    GradCase{CellKind::bag_of_items, IntegrationKind::none, IntegrationKind::none},
                    GradCase{CellKind::bag_of_items, IntegrationKind::mult, IntegrationKind::mult}),
    case_name);

TEST(SharedContextProjection, GradientAndSingleMatrix) {
  auto cfg = tiny_config(CellKind::gru, IntegrationKind::mult, IntegrationKind::mult);
  cfg.share_context_projection = true;
  auto p = init_params<double>(cfg, 4);
  EXPECT_FALSE(p.C_out.has_value());
  Rng rng(5);
  randomize(p, rng);
  const auto batch = tiny_data(6).batch();
  Tape<double> tape;
  p.zero_grad();
  tape.backward(taped_batch_loss(tape, p, cfg, batch).mean);
  const auto rep = test::check_gradients(p.list(), [&] { return eager_mean_loss(p, cfg, batch); });
  EXPECT_LT(rep.max_rel_error, 1e-4) << rep.worst_param;
}

TEST(Forward, BatchedLogitsEqualPerSequenceLogits) {
  const auto cfg = tiny_config(CellKind::context_wrapper_gru, IntegrationKind::concat_mult, IntegrationKind::concat_mult);
  auto p = init_params<double>(cfg, 8);
  const auto data = tiny_data(9, {3, 6, 2, 6});
  const auto batch = data.batch();
  EagerOps<double> ops;
  run_batch(ops, p, cfg, batch, [&](std::size_t t, const Md& logits) {
    for (std::size_t row = 0; row < logits.rows(); ++row) {
      const std::size_t b = batch.order[row];
      const auto& s = data.sessions[b];
      std::vector<std::size_t> items;
      for (const auto& e : s.events) items.push_back(e.item);
      const auto ref = forward_sequence(p, cfg, items, data.contexts[b]);
      for (std::size_t j = 0; j < kItems; ++j)
        ASSERT_NEAR(logits(row, j), ref.logits[t - 1](0, j), 1e-12);
    }
  });
}

TEST(Forward, ItemPermutationLeavesNllUnchanged) {
  const auto cfg = tiny_config(CellKind::gru, IntegrationKind::concat_mult, IntegrationKind::concat_mult);
  auto p = init_params<double>(cfg, 10);
  const auto data = tiny_data(11, {6});
  std::vector<std::size_t> items;
  for (const auto& e : data.sessions[0].events) items.push_back(e.item);

  std::vector<std::size_t> perm(kItems);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(12);
  rng.shuffle(perm);
  auto q = p;
  for (std::size_t i = 0; i < kItems; ++i) {
    std::copy(p.V.value.row(i).begin(), p.V.value.row(i).end(), q.V.value.row(perm[i]).begin());
    for (std::size_t c = 0; c < kCtx; ++c) q.D_out->value(c, perm[i]) = p.D_out->value(c, i);
  }
  std::vector<std::size_t> permuted;
  for (auto it : items) permuted.push_back(perm[it]);

  const auto a = forward_sequence(p, cfg, items, data.contexts[0]);
  const auto b = forward_sequence(q, cfg, permuted, data.contexts[0]);
  EXPECT_NEAR(a.nll, b.nll, 1e-12);
}

TEST(Forward, SoftmaxOfLogitsIsADistribution) {
  const auto cfg = tiny_config(CellKind::context_wrapper_gru, IntegrationKind::mult, IntegrationKind::concat);
  auto p = init_params<double>(cfg, 13);
  const auto data = tiny_data(14, {5});
  std::vector<std::size_t> items;
  for (const auto& e : data.sessions[0].events) items.push_back(e.item);
  for (const auto& l : forward_sequence(p, cfg, items, data.contexts[0]).logits)
    EXPECT_NEAR(sum(softmax_rows(l)), 1.0, 1e-12);
}

TEST(Forward, ItemOutsideVocabulary) {
  const auto cfg = tiny_config(CellKind::gru, IntegrationKind::none, IntegrationKind::none);
  auto p = init_params<double>(cfg, 1);
  const auto data = tiny_data(1, {2});
  EXPECT_THROW(forward_sequence(p, cfg, std::vector<std::size_t>{kItems, 1}, data.contexts[0]),
               VocabularyError);
}

TEST(Ranking, TopKExamplesAndTieBreak) {
  std::vector<double> l(10, 0.0);
  l[7] = 3.0;
  EXPECT_EQ(predict_topk<double>(l, 1), std::vector<std::size_t>{7});
  const std::vector<double> flat(5, 1.0);
  EXPECT_EQ(predict_topk<double>(flat, 3), (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(rank_of<double>(flat, 3), 3u);
  EXPECT_THROW(predict_topk<double>(flat, 6), ContractError);
}

TEST(Ranking, AgreesWithFullSort) {
  Rng rng(15);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> l(40);
    for (double& v : l) v = std::round(rng.uniform(-3, 3) * 4) / 4;  // plenty of ties
    std::vector<std::size_t> idx(l.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return l[a] > l[b]; });
    const auto top = predict_topk<double>(l, 10);
    EXPECT_EQ(top, std::vector<std::size_t>(idx.begin(), idx.begin() + 10));
    for (std::size_t r = 0; r < idx.size(); ++r) EXPECT_EQ(rank_of<double>(l, idx[r]), r);
  }
}
