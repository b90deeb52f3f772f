#include <doctest.h>

#include <cmath>

#include "magic/analysis.hpp"
#include "magic/error.hpp"
#include "magic/kendall.hpp"
#include "magic/sampler.hpp"

using namespace magic;

namespace {

SupernetConfig probe_net(int layers = 4, uint64_t seed = 1) {
  SupernetConfig cfg;
  cfg.num_layers = layers;
  cfg.d_model = 8;
  cfg.vocab = 12;
  cfg.seq_len = 6;
  cfg.init_seed = seed;
  cfg.candidates = {OperatorSpec::mha(2, 4), OperatorSpec::ffn(10), OperatorSpec::conv(3)};
  return cfg;
}

Task probe_task() {
  TaskSpec ts;
  ts.vocab = 12;
  ts.seq_len = 6;
  return Task(ts);
}

Path child_of(const InterferenceProbe& p, int i) {
  Path c = p.fixed;
  for (int d = 0; d < p.m; ++d)
    c[static_cast<size_t>(p.og_layer + 1 + d)] =
        p.perms[static_cast<size_t>(d)][static_cast<size_t>(i)];
  return c;
}

std::map<std::string, Array> snapshot(const Supernet& net) { return net.params(); }

bool same_params(const std::map<std::string, Array>& a, const Supernet& net) {
  if (a.size() != net.params().size()) return false;
  for (auto& [name, arr] : a)
    if (!(arr == net.params().at(name))) return false;
  return true;
}

}  // namespace

TEST_CASE("cosine similarity matches hand values") {
  CHECK(cosine_similarity({1, 0}, {0, 1}) == 0.0);
  CHECK(cosine_similarity({1, 0}, {2, 0}) == 1.0);
  CHECK(cosine_similarity({3, 0}, {-2, 0}) == -1.0);
  CHECK(cosine_similarity({1, 1}, {1, 0}) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
  CHECK(cosine_similarity({1, 2}, {2, 4}) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine_similarity({1, 2}, {2, 4}) <= 1.0);
}

TEST_CASE("cosine similarity flags zero vectors as degenerate") {
  bool degenerate = false;
  CHECK(cosine_similarity({0, 0, 0}, {1, 2, 3}, &degenerate) == 0.0);
  CHECK(degenerate);
  degenerate = true;
  CHECK(cosine_similarity({1, 2}, {3, 4}, &degenerate) > 0.0);
  CHECK_FALSE(degenerate);
  CHECK_THROWS_WITH_AS(cosine_similarity({1, 2}, {1, 2, 3}), doctest::Contains("length mismatch"),
                       Error);
  CHECK_THROWS_WITH_AS(cosine_similarity({}, {}), doctest::Contains("empty"), Error);
}

TEST_CASE("probe validation rejects malformed probes") {
  InterferenceProbe p;
  p.og_layer = 0;
  p.m = 1;
  p.fixed = {0, 1, 2, 0};
  p.perms = {{0, 1, 2}};
  CHECK_NOTHROW(p.validate(4, 3));
  CHECK(p.og_op() == 0);
  CHECK(p.differing_layers() == std::vector<int>{1});

  SUBCASE("m below 1") {
    p.m = 0;
    p.perms = {};
    CHECK_THROWS_WITH_AS(p.validate(4, 3), doctest::Contains("m >= 1"), Error);
  }
  SUBCASE("differing layers past the end") {
    p.og_layer = 3;
    CHECK_THROWS_WITH_AS(p.validate(4, 3), doctest::Contains("does not fit"), Error);
  }
  SUBCASE("fixed assignment length") {
    p.fixed = {0, 1, 2};
    CHECK_THROWS_WITH_AS(p.validate(4, 3), doctest::Contains("length mismatch"), Error);
  }
  SUBCASE("fixed op out of range") {
    p.fixed = {0, 3, 2, 0};
    CHECK_THROWS_WITH_AS(p.validate(4, 3), doctest::Contains("out of range"), Error);
  }
  SUBCASE("one map per differing layer") {
    p.m = 2;
    CHECK_THROWS_WITH_AS(p.validate(4, 3), doctest::Contains("per differing layer"), Error);
  }
  SUBCASE("map must be a permutation") {
    p.perms = {{0, 1, 1}};
    CHECK_THROWS_WITH_AS(p.validate(4, 3), doctest::Contains("permutation"), Error);
    p.perms = {{0, 1}};
    CHECK_THROWS_WITH_AS(p.validate(4, 3), doctest::Contains("cover all candidates"), Error);
  }
}

TEST_CASE("m=1 probes place candidate i at the single differing layer") {
  Rng rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    InterferenceProbe p = make_probe(6, 4, 2, 1, rng);
    CHECK(p.perms == std::vector<std::vector<int>>{{0, 1, 2, 3}});
    for (int i = 0; i < 4; ++i) CHECK(child_of(p, i)[3] == i);
  }
}

TEST_CASE("children of one probe differ in exactly m layers pairwise") {
  Rng rng(5);
  for (int m : {1, 2, 3}) {
    for (int rep = 0; rep < 10; ++rep) {
      InterferenceProbe p = make_probe(6, 4, 1, m, rng);
      p.validate(6, 4);
      for (int i = 0; i < 4; ++i) {
        for (int j = i + 1; j < 4; ++j) {
          CHECK(hamming(child_of(p, i), child_of(p, j)) == m);
        }
        // the probed operator itself is shared by every child
        CHECK(child_of(p, i)[1] == p.og_op());
      }
    }
  }
}

TEST_CASE("similarity matrix is symmetric with unit diagonal and leaves the net untouched") {
  Supernet net(probe_net());
  Task task = probe_task();
  Rng rng(21);
  InterferenceProbe p = make_probe(net.num_layers(), net.num_ops(), 0, 2, rng);
  Batch batch = task.gen_batch(4, rng);

  auto before = snapshot(net);
  SimilarityMatrix s = similarity_matrix(net, p, batch);
  CHECK(same_params(before, net));

  REQUIRE(s.dim() == 3);
  CHECK(s.labels == std::vector<std::string>{"mha2", "ffn10", "conv3"});
  CHECK_FALSE(s.had_zero_grad);
  for (int i = 0; i < 3; ++i) {
    CHECK(s.at(i, i) == 1.0);
    for (int j = 0; j < 3; ++j) {
      CHECK(s.at(i, j) == s.at(j, i));
      CHECK(s.at(i, j) >= -1.0);
      CHECK(s.at(i, j) <= 1.0);
    }
  }

  SimilarityMatrix again = similarity_matrix(net, p, batch);
  CHECK(again.values == s.values);
}

TEST_CASE("similarity entries equal cosines of independently recomputed gradients") {
  Supernet net(probe_net());
  Task task = probe_task();
  Rng rng(33);
  InterferenceProbe p = make_probe(net.num_layers(), net.num_ops(), 1, 1, rng);
  Batch batch = task.gen_batch(3, rng);
  SimilarityMatrix s = similarity_matrix(net, p, batch);

  auto og_names = net.slot_param_names(p.og_layer, p.og_op());
  std::vector<std::vector<double>> grads;
  for (int i = 0; i < net.num_ops(); ++i) {
    ChildGraph g = build_child(net, child_of(p, i), batch);
    g.g.forward();
    g.g.backward(g.loss);
    grads.push_back(flatten_named(g.g.param_grads(), og_names));
  }
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j)
      CHECK(s.at(i, j) == cosine_similarity(grads[static_cast<size_t>(i)],
                                            grads[static_cast<size_t>(j)]));
}

TEST_CASE("similarity matrix requires targets") {
  Supernet net(probe_net());
  Rng rng(2);
  InterferenceProbe p = make_probe(net.num_layers(), net.num_ops(), 0, 1, rng);
  Batch b;
  b.batch = 1;
  b.seq = net.config().seq_len;
  b.tokens.assign(static_cast<size_t>(b.seq), 0);
  CHECK_THROWS_WITH_AS(similarity_matrix(net, p, b), doctest::Contains("targets"), Error);
}

TEST_CASE("off-diagonal mean ignores the diagonal") {
  SimilarityMatrix s;
  s.labels = {"a", "b", "c"};
  s.values = {1.0, 0.5, 0.25, 0.5, 1.0, 0.75, 0.25, 0.75, 1.0};
  CHECK(off_diagonal_mean(s) == doctest::Approx(0.5).epsilon(1e-15));
  SimilarityMatrix one;
  one.labels = {"a"};
  one.values = {1.0};
  CHECK_THROWS_WITH_AS(off_diagonal_mean(one), doctest::Contains("2x2"), Error);
}

TEST_CASE("interference curve shape, averaging, and determinism") {
  Supernet net(probe_net());
  Task task = probe_task();

  Rng rng(77);
  MCurve c = interference_vs_m(net, task, 0, {1, 2, 3}, 3, 4, rng);
  CHECK(c.og_layer == 0);
  CHECK(c.m == std::vector<int>{1, 2, 3});
  REQUIRE(c.mean.size() == 3);
  REQUIRE(c.per_repeat.size() == 3);
  for (size_t k = 0; k < 3; ++k) {
    REQUIRE(c.per_repeat[k].size() == 3);
    double avg = (c.per_repeat[k][0] + c.per_repeat[k][1] + c.per_repeat[k][2]) / 3.0;
    CHECK(c.mean[k] == doctest::Approx(avg).epsilon(1e-15));
    for (double v : c.per_repeat[k]) {
      CHECK(v >= -1.0);
      CHECK(v <= 1.0);
    }
  }

  Rng rng2(77);
  MCurve d = interference_vs_m(net, task, 0, {1, 2, 3}, 3, 4, rng2);
  CHECK(d.mean == c.mean);
  CHECK(d.per_repeat == c.per_repeat);
}

TEST_CASE("a repeats=r curve is the average of r carried single-repeat draws") {
  Supernet net(probe_net());
  Task task = probe_task();

  Rng batched(13);
  MCurve c = interference_vs_m(net, task, 1, {2}, 4, 4, batched);

  Rng carried(13);
  std::vector<double> singles;
  for (int r = 0; r < 4; ++r)
    singles.push_back(interference_vs_m(net, task, 1, {2}, 1, 4, carried).per_repeat[0][0]);
  CHECK(c.per_repeat[0] == singles);
}

TEST_CASE("interference curve rejects bad arguments") {
  Supernet net(probe_net());
  Task task = probe_task();
  Rng rng(1);
  CHECK_THROWS_WITH_AS(interference_vs_m(net, task, 0, {1}, 0, 4, rng),
                       doctest::Contains("repeats"), Error);
  CHECK_THROWS_WITH_AS(interference_vs_m(net, task, 0, {}, 1, 4, rng),
                       doctest::Contains("no m values"), Error);
  CHECK_THROWS_WITH_AS(interference_vs_m(net, task, 0, {4}, 1, 4, rng),
                       doctest::Contains("does not fit"), Error);
  CHECK_THROWS_WITH_AS(interference_vs_m(net, task, 3, {1}, 1, 4, rng),
                       doctest::Contains("does not fit"), Error);
}

TEST_CASE("layer sweep probes each requested layer") {
  Supernet net(probe_net());
  Task task = probe_task();

  Rng rng(55);
  LayerSweep sweep = og_layer_sweep(net, task, {0, 1, 2}, 1, 2, 4, rng);
  CHECK(sweep.m == 1);
  CHECK(sweep.layer == std::vector<int>{0, 1, 2});
  REQUIRE(sweep.mean.size() == 3);
  REQUIRE(sweep.per_repeat.size() == 3);
  for (auto& row : sweep.per_repeat) CHECK(row.size() == 2);

  // single-layer sweep agrees with the curve primitive under the same stream
  Rng a(40), b(40);
  LayerSweep one = og_layer_sweep(net, task, {2}, 1, 3, 4, a);
  MCurve c = interference_vs_m(net, task, 2, {1}, 3, 4, b);
  CHECK(one.mean[0] == c.mean[0]);
  CHECK(one.per_repeat[0] == c.per_repeat[0]);

  LayerSweep empty = og_layer_sweep(net, task, {}, 1, 2, 4, rng);
  CHECK(empty.layer.empty());
  CHECK(empty.mean.empty());

  CHECK_THROWS_WITH_AS(og_layer_sweep(net, task, {3}, 1, 1, 4, rng),
                       doctest::Contains("no room"), Error);
}

TEST_CASE("rank experiment scores, trains, and correlates deterministically") {
  Supernet net(probe_net());
  Task task = probe_task();
  std::vector<Path> children = {{0, 0, 0, 0}, {1, 1, 1, 1}, {2, 0, 1, 2}};

  TrainConfig cfg;
  cfg.steps = 40;
  cfg.batch_size = 4;
  cfg.warmup_steps = 5;
  cfg.steps_per_epoch = 20;
  cfg.probe_pool = 2;
  cfg.val_batches = 1;
  cfg.seed = 9;

  auto before = snapshot(net);
  RankReport r = rank_experiment(net, children, task, cfg);
  CHECK(same_params(before, net));

  CHECK(r.children == children);
  REQUIRE(r.proxy.size() == 3);
  REQUIRE(r.truth.size() == 3);
  for (double p : r.proxy) CHECK(std::isfinite(p));
  for (double t : r.truth) {
    CHECK(t >= 0.0);
    CHECK(t <= 1.0);
  }
  CHECK(r.tau == kendall_tau(r.proxy, r.truth));

  RankReport again = rank_experiment(net, children, task, cfg);
  CHECK(again.proxy == r.proxy);
  CHECK(again.truth == r.truth);
  CHECK(again.tau == r.tau);
}

TEST_CASE("rank experiment rejects degenerate child lists") {
  Supernet net(probe_net());
  Task task = probe_task();
  TrainConfig cfg;
  CHECK_THROWS_WITH_AS(rank_experiment(net, {{0, 0, 0, 0}}, task, cfg),
                       doctest::Contains("at least 2"), Error);
  CHECK_THROWS_WITH_AS(
      rank_experiment(net, {{0, 0, 0, 0}, {1, 1, 1, 1}, {0, 0, 0, 0}}, task, cfg),
      doctest::Contains("duplicate child"), Error);
}

TEST_CASE("rank report survives a json round trip bit-exactly") {
  RankReport r;
  r.children = {{0, 2, 1}, {1, 1, 1}};
  r.proxy = {-1.2345678901234567, -0.9999999999999999};
  r.truth = {0.125, 1.0 / 3.0};
  r.tau = -1.0;

  nlohmann::ordered_json j = rank_report_json(r);
  RankReport back = rank_report_from_json(nlohmann::ordered_json::parse(j.dump()));
  CHECK(back.children == r.children);
  CHECK(back.proxy == r.proxy);
  CHECK(back.truth == r.truth);
  CHECK(back.tau == r.tau);

  nlohmann::ordered_json bad = j;
  bad["proxy"] = {1.0};
  CHECK_THROWS_WITH_AS(rank_report_from_json(bad), doctest::Contains("lengths disagree"), Error);
}
