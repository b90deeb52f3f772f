#include <doctest.h>

#include <cmath>

#include "magic/error.hpp"
#include "magic/supernet.hpp"
#include "magic/tasks.hpp"

using namespace magic;

namespace {

SupernetConfig tiny_config(uint64_t seed = 1) {
  SupernetConfig cfg;
  cfg.num_layers = 3;
  cfg.d_model = 8;
  cfg.vocab = 12;
  cfg.seq_len = 6;
  cfg.init_seed = seed;
  cfg.candidates = {OperatorSpec::mha(2, 4), OperatorSpec::ffn(10), OperatorSpec::conv(3)};
  return cfg;
}

Batch tiny_batch(const SupernetConfig& cfg, uint64_t seed = 9) {
  TaskSpec ts;
  ts.vocab = cfg.vocab;
  ts.seq_len = cfg.seq_len;
  Task task(ts);
  Rng rng(seed);
  return task.gen_batch(2, rng);
}

}  // namespace

TEST_CASE("initialization is deterministic in the seed and slot-local") {
  Supernet a(tiny_config(5)), b(tiny_config(5)), c(tiny_config(6));
  CHECK(a.params().size() == b.params().size());
  bool all_eq = true;
  for (auto& [name, arr] : a.params()) all_eq = all_eq && (arr == b.params().at(name));
  CHECK(all_eq);
  CHECK(a.param("l00.o0.wq") != c.param("l00.o0.wq"));
  // distinct slots get distinct weights
  CHECK(a.param("l00.o0.wq") != a.param("l01.o0.wq"));
  // weights are clipped-normal with std 0.02; biases zero; LN gain one
  for (double v : a.param("l01.o1.w1").data) CHECK(std::fabs(v) <= 0.04 + 1e-12);
  CHECK(a.param("l01.o1.b1") == Array({10}));
  CHECK(a.param("l02.ln.gain") == Array::full({8}, 1.0));
}

TEST_CASE("slot and path parameter names") {
  Supernet net(tiny_config());
  auto mha = net.slot_param_names(0, 0);
  CHECK(mha.size() == 8);
  CHECK(mha.front() == "l00.o0.bk");
  auto ffn = net.slot_param_names(2, 1);
  CHECK(ffn == std::vector<std::string>{"l02.o1.b1", "l02.o1.b2", "l02.o1.w1", "l02.o1.w2"});

  auto path_names = net.path_param_names({0, 1, 2});
  // embeddings + head + 3 layer norms (2 each) + 8 + 4 + 6 slot tensors
  CHECK(path_names.size() == 4 + 6 + 8 + 4 + 6);
  CHECK(std::is_sorted(path_names.begin(), path_names.end()));
  for (auto& n : path_names) CHECK(net.params().count(n) == 1);

  CHECK_THROWS(net.slot_param_names(3, 0));
  CHECK_THROWS((void)net.path_param_names({0, 1}));     // wrong length
  CHECK_THROWS((void)net.path_param_names({0, 1, 3}));  // op out of range
}

TEST_CASE("child forward is deterministic and loss is finite") {
  SupernetConfig cfg = tiny_config();
  Supernet net(cfg);
  Batch batch = tiny_batch(cfg);
  ChildGraph c1 = build_child(net, {0, 1, 2}, batch);
  ChildGraph c2 = build_child(net, {0, 1, 2}, batch);
  c1.g.forward();
  c2.g.forward();
  CHECK(c1.g.value(c1.logits) == c2.g.value(c2.logits));
  CHECK(c1.g.shape_of(c1.logits) == Shape{2, cfg.seq_len, cfg.vocab});
  CHECK(c1.loss.valid());
  CHECK(std::isfinite(c1.g.scalar_value(c1.loss)));
  CHECK(c1.layer_outputs.size() == 3);

  // different path -> different logits
  ChildGraph c3 = build_child(net, {1, 1, 1}, batch);
  c3.g.forward();
  CHECK(max_abs_diff(c1.g.value(c1.logits), c3.g.value(c3.logits)) > 1e-9);
}

TEST_CASE("child graphs only carry the path's slots") {
  SupernetConfig cfg = tiny_config();
  Supernet net(cfg);
  Batch batch = tiny_batch(cfg);
  ChildGraph c = build_child(net, {2, 0, 1}, batch);
  CHECK(c.g.has_param("l00.o2.dw"));
  CHECK(!c.g.has_param("l00.o0.wq"));
  CHECK(!c.g.has_param("l00.o1.w1"));
  CHECK(c.g.has_param("embed.tok"));
  CHECK(c.g.has_param("head.w"));
}

TEST_CASE("child gradients flow into every path parameter") {
  SupernetConfig cfg = tiny_config();
  Supernet net(cfg);
  Batch batch = tiny_batch(cfg);
  ChildGraph c = build_child(net, {0, 1, 2}, batch);
  c.g.forward();
  c.g.backward(c.loss);
  auto grads = c.g.param_grads();
  int nonzero_tensors = 0;
  for (auto& [name, g] : grads) {
    double norm = 0.0;
    for (double v : g.data) norm += v * v;
    if (norm > 0.0) ++nonzero_tensors;
  }
  // everything except (possibly) pad/unused embedding rows receives signal;
  // tensor-level: all of them
  CHECK(nonzero_tensors == static_cast<int>(grads.size()));
}

TEST_CASE("masked accuracy scores only weighted positions") {
  Batch b;
  b.batch = 1;
  b.seq = 3;
  b.tokens = {5, kMaskId, kMaskId};
  b.targets = {-1, 4, 7};
  b.weights = {0.0, 1.0, 1.0};
  Array logits({1, 3, 8});
  logits.data[0 * 8 + 2] = 5.0;  // ignored (weight 0)
  logits.data[1 * 8 + 4] = 3.0;  // hit
  logits.data[2 * 8 + 6] = 2.0;  // miss (target 7)
  CHECK(masked_accuracy(logits, b) == doctest::Approx(0.5));
  CHECK(task_metric(logits, b) == doctest::Approx(0.5));

  Batch none = b;
  none.weights = {0.0, 0.0, 0.0};
  CHECK_THROWS(masked_accuracy(logits, none));
}

TEST_CASE("accuracy is invariant to logit scaling") {
  SupernetConfig cfg = tiny_config();
  Supernet net(cfg);
  Batch batch = tiny_batch(cfg);
  ChildGraph c = build_child(net, {0, 0, 0}, batch);
  c.g.forward();
  Array logits = c.g.value(c.logits);
  double a1 = masked_accuracy(logits, batch);
  for (auto& v : logits.data) v *= 17.0;
  CHECK(masked_accuracy(logits, batch) == a1);
}

TEST_CASE("flatten_named concatenates in the requested name order") {
  std::map<std::string, Array> t;
  t.emplace("b", Array({2}, {3, 4}));
  t.emplace("a", Array({1}, {1}));
  auto v = flatten_named(t, {"a", "b"});
  CHECK(v == std::vector<double>{1, 3, 4});
  CHECK_THROWS(flatten_named(t, {"a", "missing"}));
}

TEST_CASE("path string round trip") {
  Path p{0, 3, 1, 2};
  CHECK(path_str(p) == "0,3,1,2");
  CHECK(parse_path("0,3,1,2") == p);
  CHECK_THROWS(parse_path("0,x,1"));
  CHECK_THROWS(parse_path(""));
}
