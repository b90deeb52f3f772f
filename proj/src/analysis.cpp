#include "magic/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "magic/error.hpp"
#include "magic/kendall.hpp"

namespace magic {

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b,
                         bool* degenerate) {
  MAGIC_CHECK(a.size() == b.size(), "cosine_similarity: length mismatch ", a.size(), " vs ",
              b.size());
  MAGIC_CHECK(!a.empty(), "cosine_similarity of empty vectors");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (degenerate) *degenerate = false;
  if (na == 0.0 || nb == 0.0) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

std::vector<int> InterferenceProbe::differing_layers() const {
  std::vector<int> out(static_cast<size_t>(m));
  std::iota(out.begin(), out.end(), og_layer + 1);
  return out;
}

void InterferenceProbe::validate(int num_layers, int num_ops) const {
  MAGIC_CHECK(m >= 1, "probe needs m >= 1 differing layers");
  MAGIC_CHECK(og_layer >= 0 && og_layer + m <= num_layers - 1, "probe layer ", og_layer,
              " with m=", m, " does not fit ", num_layers, " layers");
  MAGIC_CHECK(static_cast<int>(fixed.size()) == num_layers, "fixed assignment length mismatch");
  for (int op : fixed) MAGIC_CHECK(op >= 0 && op < num_ops, "fixed op out of range");
  MAGIC_CHECK(static_cast<int>(perms.size()) == m, "need one child->op map per differing layer");
  for (const auto& p : perms) {
    MAGIC_CHECK(static_cast<int>(p.size()) == num_ops, "child->op map must cover all candidates");
    std::vector<uint8_t> seen(static_cast<size_t>(num_ops), 0);
    for (int op : p) {
      MAGIC_CHECK(op >= 0 && op < num_ops && !seen[static_cast<size_t>(op)],
                  "child->op map must be a permutation");
      seen[static_cast<size_t>(op)] = 1;
    }
  }
}

InterferenceProbe make_probe(int num_layers, int num_ops, int og_layer, int m, Rng& rng) {
  InterferenceProbe p;
  p.og_layer = og_layer;
  p.m = m;
  p.fixed.resize(static_cast<size_t>(num_layers));
  for (int& op : p.fixed) op = static_cast<int>(rng.below(num_ops));
  p.perms.assign(static_cast<size_t>(m), {});
  for (auto& perm : p.perms) {
    perm.resize(static_cast<size_t>(num_ops));
    std::iota(perm.begin(), perm.end(), 0);
    if (m >= 2) rng.shuffle(perm);
  }
  p.validate(num_layers, num_ops);
  return p;
}

namespace {

std::vector<double> og_gradient(const Supernet& net, const Path& child, const Batch& batch,
                                const std::vector<std::string>& og_names) {
  ChildGraph g = build_child(net, child, batch);
  g.g.forward();
  g.g.backward(g.loss);
  return flatten_named(g.g.param_grads(), og_names);
}

}  // namespace

SimilarityMatrix similarity_matrix(const Supernet& net, const InterferenceProbe& probe,
                                   const Batch& batch) {
  const int C = net.num_ops();
  probe.validate(net.num_layers(), C);
  MAGIC_CHECK(batch.has_targets(), "interference probes need a batch with targets");

  const std::vector<std::string> og_names = net.slot_param_names(probe.og_layer, probe.og_op());
  std::vector<std::vector<double>> grads;
  grads.reserve(static_cast<size_t>(C));
  for (int i = 0; i < C; ++i) {
    Path child = probe.fixed;
    for (int d = 0; d < probe.m; ++d)
      child[static_cast<size_t>(probe.og_layer + 1 + d)] =
          probe.perms[static_cast<size_t>(d)][static_cast<size_t>(i)];
    grads.push_back(og_gradient(net, child, batch, og_names));
  }

  SimilarityMatrix s;
  for (const OperatorSpec& op : net.config().candidates) s.labels.push_back(op.name);
  s.values.assign(static_cast<size_t>(C) * static_cast<size_t>(C), 1.0);
  for (int i = 0; i < C; ++i) {
    for (int j = i + 1; j < C; ++j) {
      bool degenerate = false;
      double c = cosine_similarity(grads[static_cast<size_t>(i)], grads[static_cast<size_t>(j)],
                                   &degenerate);
      s.had_zero_grad = s.had_zero_grad || degenerate;
      s.values[static_cast<size_t>(i * C + j)] = c;
      s.values[static_cast<size_t>(j * C + i)] = c;
    }
  }
  return s;
}

double off_diagonal_mean(const SimilarityMatrix& s) {
  const int C = s.dim();
  MAGIC_CHECK(C >= 2, "off-diagonal mean needs at least a 2x2 matrix");
  double sum = 0.0;
  for (int i = 0; i < C; ++i)
    for (int j = 0; j < C; ++j)
      if (i != j) sum += s.at(i, j);
  return sum / static_cast<double>(C * (C - 1));
}

MCurve interference_vs_m(const Supernet& net, const Task& task, int og_layer,
                         const std::vector<int>& m_values, int repeats, int batch_size,
                         Rng& rng) {
  MAGIC_CHECK(repeats >= 1, "repeats must be >= 1");
  MAGIC_CHECK(!m_values.empty(), "no m values requested");
  MCurve curve;
  curve.og_layer = og_layer;
  for (int m : m_values) {
    std::vector<double> vals;
    vals.reserve(static_cast<size_t>(repeats));
    for (int r = 0; r < repeats; ++r) {
      InterferenceProbe probe = make_probe(net.num_layers(), net.num_ops(), og_layer, m, rng);
      Batch batch = task.gen_batch(batch_size, rng);
      vals.push_back(off_diagonal_mean(similarity_matrix(net, probe, batch)));
    }
    curve.m.push_back(m);
    curve.mean.push_back(std::accumulate(vals.begin(), vals.end(), 0.0) /
                         static_cast<double>(vals.size()));
    curve.per_repeat.push_back(std::move(vals));
  }
  return curve;
}

LayerSweep og_layer_sweep(const Supernet& net, const Task& task, const std::vector<int>& layers,
                          int m, int repeats, int batch_size, Rng& rng) {
  LayerSweep sweep;
  sweep.m = m;
  for (int j : layers) {
    MAGIC_CHECK(j + m <= net.num_layers() - 1, "probed layer ", j,
                " leaves no room for ", m, " differing layers");
    MCurve c = interference_vs_m(net, task, j, {m}, repeats, batch_size, rng);
    sweep.layer.push_back(j);
    sweep.mean.push_back(c.mean.front());
    sweep.per_repeat.push_back(std::move(c.per_repeat.front()));
  }
  return sweep;
}

RankReport rank_experiment(const Supernet& net, const std::vector<Path>& children,
                           const Task& task, const TrainConfig& standalone_cfg) {
  MAGIC_CHECK(children.size() >= 2, "rank experiment needs at least 2 children, got ",
              children.size());
  for (size_t i = 0; i < children.size(); ++i) {
    net.validate_path(children[i]);
    for (size_t j = i + 1; j < children.size(); ++j)
      MAGIC_CHECK(children[i] != children[j], "duplicate child '", path_str(children[i]), "'");
  }
  const std::vector<Batch> val =
      make_val_batches(task, standalone_cfg.val_batches, standalone_cfg.batch_size);

  RankReport r;
  r.children = children;
  for (const Path& child : children) {
    r.proxy.push_back(evaluate_proxy(net, child, val));
    r.truth.push_back(train_standalone(net.config(), child, task, standalone_cfg).val_metric);
  }
  r.tau = kendall_tau(r.proxy, r.truth);
  return r;
}

nlohmann::ordered_json rank_report_json(const RankReport& r) {
  nlohmann::ordered_json j;
  j["children"] = nlohmann::ordered_json::array();
  for (const Path& c : r.children) j["children"].push_back(path_str(c));
  j["proxy"] = r.proxy;
  j["truth"] = r.truth;
  j["tau"] = r.tau;
  return j;
}

RankReport rank_report_from_json(const nlohmann::ordered_json& j) {
  RankReport r;
  for (const auto& c : j.at("children")) r.children.push_back(parse_path(c.get<std::string>()));
  r.proxy = j.at("proxy").get<std::vector<double>>();
  r.truth = j.at("truth").get<std::vector<double>>();
  r.tau = j.at("tau").get<double>();
  MAGIC_CHECK(r.children.size() == r.proxy.size() && r.proxy.size() == r.truth.size(),
              "rank report field lengths disagree");
  return r;
}

}  // namespace magic
