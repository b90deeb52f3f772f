#include <doctest.h>

#include <cmath>
#include <cstring>
#include <set>
#include <sstream>

#include "magic/error.hpp"
#include "magic/search.hpp"

using namespace magic;

namespace {

SupernetConfig search_net(uint64_t seed = 1, int layers = 3) {
  SupernetConfig cfg;
  cfg.num_layers = layers;
  cfg.d_model = 8;
  cfg.vocab = 12;
  cfg.seq_len = 6;
  cfg.init_seed = seed;
  cfg.candidates = {OperatorSpec::mha(2, 4), OperatorSpec::ffn(10), OperatorSpec::conv(3)};
  return cfg;
}

Task search_task() {
  TaskSpec ts;
  ts.vocab = 12;
  ts.seq_len = 6;
  return Task(ts);
}

AliveMask single_path_mask(int layers, int ops, const Path& keep) {
  AliveMask m = AliveMask::all(layers, ops);
  for (int l = 0; l < layers; ++l)
    for (int op = 0; op < ops; ++op)
      if (op != keep[static_cast<size_t>(l)]) m.kill(l, op);
  return m;
}

}  // namespace

TEST_CASE("fresh shrink state and the scaled deletion budget") {
  ShrinkState s = ShrinkState::fresh(3, 4, 2);
  CHECK(s.alive.alive_count() == 12);
  CHECK(s.deletions_per_epoch == 2);
  CHECK(s.epoch == 0);
  CHECK(s.trace.empty());
  REQUIRE(s.scores.size() == 12);
  for (double v : s.scores) CHECK(v == kUnscored);
  CHECK_THROWS_WITH_AS(ShrinkState::fresh(3, 4, 0), doctest::Contains(">= 1"), Error);

  CHECK(default_deletions_per_epoch(26, 4) == 5);  // reference scale
  CHECK(default_deletions_per_epoch(6, 4) == 1);
  CHECK(default_deletions_per_epoch(4, 3) == 1);
  CHECK(default_deletions_per_epoch(12, 6) == 3);
  CHECK(default_deletions_per_epoch(1, 2) == 1);  // floor
}

TEST_CASE("slot scores in a single-path space equal that path's proxy") {
  Supernet net(search_net());
  Task task = search_task();
  auto val = make_val_batches(task, 1, 4);
  Path keep = {2, 0, 1};

  ShrinkState st = ShrinkState::fresh(3, 3, 1);
  st.alive = single_path_mask(3, 3, keep);

  Rng rng(4);
  std::vector<double> scores = score_slots(net, st, 5, val, rng);
  double expected = evaluate_proxy(net, keep, val);
  for (int l = 0; l < 3; ++l) {
    for (int op = 0; op < 3; ++op) {
      if (op == keep[static_cast<size_t>(l)])
        CHECK(scores[static_cast<size_t>(l * 3 + op)] == expected);
      else
        CHECK(scores[static_cast<size_t>(l * 3 + op)] == kUnscored);
    }
  }
}

TEST_CASE("one probe path scores exactly its own slots; coverage fixes the rest") {
  Supernet net(search_net());
  Task task = search_task();
  auto val = make_val_batches(task, 1, 4);
  ShrinkState st = ShrinkState::fresh(3, 3, 1);

  Rng rng(9);
  std::vector<double> scores = score_slots(net, st, 1, val, rng);
  int finite = 0;
  for (double v : scores) finite += (v != kUnscored);
  CHECK(finite == 3);  // one slot per layer

  int fixed = cover_unscored(net, st, scores, val, rng);
  CHECK(fixed == 6);
  for (double v : scores) CHECK(v != kUnscored);
  CHECK(cover_unscored(net, st, scores, val, rng) == 0);

  SUBCASE("dead slots stay sentinel") {
    st.alive.kill(0, 0);
    std::vector<double> s2 = score_slots(net, st, 2, val, rng);
    cover_unscored(net, st, s2, val, rng);
    CHECK(s2[0] == kUnscored);
  }
}

TEST_CASE("more probe paths stabilize the slot scores") {
  Supernet net(search_net());
  Task task = search_task();
  auto val = make_val_batches(task, 1, 4);
  ShrinkState st = ShrinkState::fresh(3, 3, 1);

  auto spread = [&](int probe_paths, uint64_t seed) {
    Rng a(seed), b(seed + 1000);
    std::vector<double> s1 = score_slots(net, st, probe_paths, val, a);
    std::vector<double> s2 = score_slots(net, st, probe_paths, val, b);
    cover_unscored(net, st, s1, val, a);
    cover_unscored(net, st, s2, val, b);
    double d2 = 0.0;
    for (size_t i = 0; i < s1.size(); ++i) d2 += (s1[i] - s2[i]) * (s1[i] - s2[i]);
    return d2 / static_cast<double>(s1.size());
  };
  CHECK(spread(200, 7) < spread(20, 7));
}

TEST_CASE("score_slots rejects bad arguments") {
  Supernet net(search_net());
  Task task = search_task();
  auto val = make_val_batches(task, 1, 4);
  ShrinkState st = ShrinkState::fresh(3, 3, 1);
  Rng rng(1);
  CHECK_THROWS_WITH_AS(score_slots(net, st, 0, val, rng), doctest::Contains("probe path"), Error);
  CHECK_THROWS_WITH_AS(score_slots(net, st, 4, {}, rng), doctest::Contains("validation batch"),
                       Error);
  ShrinkState wrong = ShrinkState::fresh(5, 3, 1);
  CHECK_THROWS_WITH_AS(score_slots(net, wrong, 4, val, rng),
                       doctest::Contains("does not match"), Error);
}

TEST_CASE("shrinking deletes ascending by score with layer/op tie-breaks") {
  ShrinkState st = ShrinkState::fresh(2, 3, 1);
  st.scores = {5, 5, 5, 5, 5, 5};

  // equal scores: deletion order is (0,0), (0,1), then layer 0 is pinned
  auto d1 = shrink_epoch(st);
  REQUIRE(d1.size() == 1);
  CHECK(d1[0].layer == 0);
  CHECK(d1[0].op == 0);
  CHECK(d1[0].epoch == 1);
  CHECK(d1[0].score == 5.0);

  st.scores = {kUnscored, 5, 5, 5, 5, 5};  // dead slot ignored
  auto d2 = shrink_epoch(st);
  CHECK(d2[0].layer == 0);
  CHECK(d2[0].op == 1);

  st.scores = {kUnscored, kUnscored, 5, 1, 5, 5};  // (1,0) is the worst
  auto d3 = shrink_epoch(st);
  CHECK(d3[0].layer == 1);
  CHECK(d3[0].op == 0);

  st.scores = {kUnscored, kUnscored, 1, kUnscored, 5, 5};  // layer 0 pinned despite worst score
  auto d4 = shrink_epoch(st);
  CHECK(d4[0].layer == 1);
  CHECK(d4[0].op == 1);

  CHECK(st.alive.unique_path() == Path{2, 2});
  CHECK(st.epoch == 4);
  CHECK(st.trace.size() == 4);  // exactly N(C-1) deletions reach one child
  CHECK_THROWS_WITH_AS(shrink_epoch(st), doctest::Contains("finished"), Error);
}

TEST_CASE("a single epoch with a large budget keeps one op per layer") {
  ShrinkState st = ShrinkState::fresh(2, 3, 10);
  st.scores = {3, 2, 1, 6, 4, 5};
  auto deleted = shrink_epoch(st);
  CHECK(deleted.size() == 4);
  CHECK(st.alive.unique_path() == Path{0, 0});  // survivors are the per-layer maxima
  for (int l = 0; l < 2; ++l) CHECK(st.alive.alive_in_layer(l) == 1);
}

TEST_CASE("shrinking refuses unscored alive slots") {
  ShrinkState st = ShrinkState::fresh(2, 3, 1);
  st.scores = {1, 2, 3, 4, 5, kUnscored};
  CHECK_THROWS_WITH_AS(shrink_epoch(st), doctest::Contains("unscored"), Error);
}

TEST_CASE("search interleaves training and shrinking down to one child") {
  Supernet net(search_net());
  Task task = search_task();
  TrainConfig cfg;
  cfg.method = TrainMethod::magic_t;
  cfg.steps = 12;
  cfg.batch_size = 4;
  cfg.warmup_steps = 3;
  cfg.steps_per_epoch = 5;
  cfg.probe_pool = 6;
  cfg.val_batches = 1;
  cfg.seed = 21;

  ShrinkState st = ShrinkState::fresh(3, 3, 1);
  std::ostringstream trace;
  SearchResult r = run_search(net, task, cfg, st, &trace);

  CHECK(r.shrink_epochs == 6);  // d=1: one deletion per epoch, N(C-1) total
  CHECK(st.trace.size() == 6);
  REQUIRE(r.child.size() == 3);
  CHECK(st.alive.path_alive(r.child));
  CHECK(st.alive.unique_path() == r.child);
  CHECK(std::isfinite(r.proxy));

  // the training budget is spent in steps_per_epoch segments: 5 + 5 + 2
  REQUIRE(r.log.steps.size() == 12);
  for (size_t i = 0; i < r.log.steps.size(); ++i)
    CHECK(r.log.steps[i].step == static_cast<int64_t>(i + 1));

  // replay the trace on a fresh mask: layers never empty, epochs count up
  AliveMask replay = AliveMask::all(3, 3);
  int last_epoch = 0;
  for (const SlotDeletion& d : st.trace) {
    CHECK(d.epoch >= last_epoch);
    last_epoch = d.epoch;
    CHECK(replay.get(d.layer, d.op));
    CHECK(replay.alive_in_layer(d.layer) >= 2);
    replay.kill(d.layer, d.op);
  }
  CHECK(replay.unique_path() == r.child);

  // one JSONL line per shrink epoch with scores only for live slots
  std::istringstream lines(trace.str());
  std::string line;
  int n_lines = 0, total_deleted = 0;
  while (std::getline(lines, line)) {
    nlohmann::ordered_json j = nlohmann::ordered_json::parse(line);
    ++n_lines;
    CHECK(j.at("epoch") == n_lines);
    total_deleted += static_cast<int>(j.at("deleted").size());
    CHECK(j.at("alive_count") == 9 - total_deleted);
    for (const auto& s : j.at("slot_scores")) {
      REQUIRE(s.size() == 3);
      CHECK(std::isfinite(s[2].get<double>()));
    }
  }
  CHECK(n_lines == 6);
  CHECK(total_deleted == 6);
}

TEST_CASE("search is deterministic end to end") {
  Task task = search_task();
  TrainConfig cfg;
  cfg.steps = 10;
  cfg.batch_size = 4;
  cfg.warmup_steps = 2;
  cfg.steps_per_epoch = 5;
  cfg.probe_pool = 5;
  cfg.val_batches = 1;
  cfg.seed = 33;

  auto once = [&]() {
    Supernet net(search_net(2));
    ShrinkState st = ShrinkState::fresh(3, 3, 2);
    std::ostringstream trace;
    SearchResult r = run_search(net, task, cfg, st, &trace);
    return std::make_tuple(r.child, r.proxy, trace.str());
  };
  auto a = once();
  auto b = once();
  CHECK(std::get<0>(a) == std::get<0>(b));
  CHECK(std::get<1>(a) == std::get<1>(b));
  CHECK(std::get<2>(a) == std::get<2>(b));
}

namespace {

// Plants an optimum: every op off the planted path is rewired to emit a fixed
// random constant (weights zeroed, output bias set), which only attenuates
// the trained signal. The planted path keeps the trained operators.
void plant_optimum(Supernet& net, const Path& planted, double strength, Rng& rng) {
  for (int l = 0; l < net.num_layers(); ++l) {
    for (int op = 0; op < net.num_ops(); ++op) {
      if (op == planted[static_cast<size_t>(l)]) continue;
      std::string out_bias;
      for (const std::string& name : net.slot_param_names(l, op)) {
        net.params().at(name).fill(0.0);
        for (const char* suffix : {".bo", ".b2", ".pw2b"})
          if (name.size() > std::strlen(suffix) &&
              name.compare(name.size() - std::strlen(suffix), std::string::npos, suffix) == 0)
            out_bias = name;
      }
      REQUIRE_FALSE(out_bias.empty());
      for (double& v : net.params().at(out_bias).data) v = strength * rng.normal();
    }
  }
}

}  // namespace

TEST_CASE("search recovers a planted optimum") {
  Task task = search_task();
  const Path planted = {2, 0, 1};
  int hits = 0;
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    Supernet net(search_net(seed));
    TrainConfig warm;
    warm.steps = 500;
    warm.batch_size = 8;
    warm.warmup_steps = 20;
    warm.steps_per_epoch = 250;
    warm.probe_pool = 2;
    warm.val_batches = 1;
    warm.seed = seed;
    train_supernet(net, task, warm);

    Rng prng(derive_seed(seed, 99));
    plant_optimum(net, planted, 2.5, prng);

    TrainConfig shrink = warm;
    shrink.steps = 0;  // frozen weights: pure score-and-shrink
    shrink.probe_pool = 48;
    shrink.val_batches = 2;
    ShrinkState st = ShrinkState::fresh(3, 3, 1);
    SearchResult r = run_search(net, task, shrink, st);
    hits += (r.child == planted);
  }
  CHECK(hits >= 2);
}

TEST_CASE("dead layers of a chain path are redrawn in place") {
  AliveMask mask = AliveMask::all(4, 3);
  mask.kill(1, 1);
  mask.kill(2, 0);
  mask.kill(2, 2);  // layer 2 pinned to op 1

  Rng rng(5);
  Path p = {0, 1, 0, 2};
  for (int rep = 0; rep < 50; ++rep) {
    Path fixed = resample_dead_layers(p, mask, rng);
    CHECK(fixed[0] == 0);  // alive layers untouched
    CHECK(fixed[3] == 2);
    CHECK(fixed[1] != 1);
    CHECK(fixed[2] == 1);
    CHECK(mask.path_alive(fixed));
  }

  // an alive path passes through unchanged without consuming randomness
  Rng before(7), after(7);
  Path alive = {0, 0, 1, 1};
  CHECK(resample_dead_layers(alive, mask, after) == alive);
  CHECK(before.serialize() == after.serialize());

  CHECK_THROWS_WITH_AS(resample_dead_layers({0, 1}, mask, rng),
                       doctest::Contains("does not match"), Error);
  CHECK_THROWS_WITH_AS(resample_dead_layers({0, 1, 0, 3}, mask, rng),
                       doctest::Contains("out of range"), Error);
}
