#include "magic/train.hpp"

#include <algorithm>
#include <cmath>

#include "magic/error.hpp"

namespace magic {

namespace {

constexpr uint64_t kStreamSampler = 10;
constexpr uint64_t kStreamProbe = 11;
constexpr uint64_t kStreamStandaloneInit = 12;

constexpr double kDivergenceLoss = 1e3;

}  // namespace

const char* train_method_name(TrainMethod m) {
  switch (m) {
    case TrainMethod::spos: return "spos";
    case TrainMethod::magic_t: return "magic_t";
    case TrainMethod::magic_a: return "magic_a";
    case TrainMethod::magic_at: return "magic_at";
  }
  throw Error("unknown train method");
}

TrainMethod parse_train_method(const std::string& s) {
  if (s == "spos") return TrainMethod::spos;
  if (s == "magic_t") return TrainMethod::magic_t;
  if (s == "magic_a") return TrainMethod::magic_a;
  if (s == "magic_at") return TrainMethod::magic_at;
  throw ConfigError(detail::cat("unknown train method '", s,
                                "' (expected spos|magic_t|magic_a|magic_at)"));
}

const char* anchor_metric_name(AnchorMetric m) {
  return m == AnchorMetric::accuracy ? "accuracy" : "neg_loss";
}

AnchorMetric parse_anchor_metric(const std::string& s) {
  if (s == "accuracy") return AnchorMetric::accuracy;
  if (s == "neg_loss") return AnchorMetric::neg_loss;
  throw ConfigError(detail::cat("unknown anchor metric '", s, "' (expected accuracy|neg_loss)"));
}

void OptimizerConfig::validate() const {
  MAGIC_CHECK(std::isfinite(lr) && lr > 0.0, "lr must be positive, got ", lr);
  if (kind == Kind::adam) {
    MAGIC_CHECK(beta1 >= 0.0 && beta1 < 1.0, "beta1 must be in [0,1)");
    MAGIC_CHECK(beta2 >= 0.0 && beta2 < 1.0, "beta2 must be in [0,1)");
    MAGIC_CHECK(eps > 0.0, "adam eps must be positive");
    MAGIC_CHECK(std::isfinite(weight_decay) && weight_decay >= 0.0,
                "weight_decay must be finite and >= 0");
  }
}

void TrainConfig::validate() const {
  // steps == 0 is an explicit no-op run, so the warmup bound only binds when
  // there is a schedule to run
  MAGIC_CHECK(steps >= 0, "steps must be >= 0");
  MAGIC_CHECK(batch_size > 0, "batch_size must be positive");
  MAGIC_CHECK(warmup_steps >= 0, "warmup_steps must be >= 0");
  if (steps > 0) MAGIC_CHECK(warmup_steps <= steps, "warmup_steps must not exceed steps");
  MAGIC_CHECK(steps_per_epoch > 0, "steps_per_epoch must be positive");
  MAGIC_CHECK(probe_pool > 0, "probe_pool must be positive");
  MAGIC_CHECK(val_batches > 0, "val_batches must be positive");
  optimizer.validate();
  align.validate();
  anchor_policy.validate();
}

double lr_at(int64_t step, const TrainConfig& cfg) {
  MAGIC_CHECK(step >= 0 && step <= cfg.steps, "step ", step, " outside [0,", cfg.steps, "]");
  const double peak = cfg.optimizer.lr;
  int64_t warmup = std::min(cfg.warmup_steps, cfg.steps);
  if (step < warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
  if (cfg.steps == warmup) return step == cfg.steps ? 0.0 : peak;
  return peak * static_cast<double>(cfg.steps - step) / static_cast<double>(cfg.steps - warmup);
}

namespace {

bool uses_chain(TrainMethod m) {
  return m == TrainMethod::magic_t || m == TrainMethod::magic_at;
}

bool uses_alignment(TrainMethod m) {
  return m == TrainMethod::magic_a || m == TrainMethod::magic_at;
}

void apply_updates(Supernet& net, const std::vector<std::string>& names,
                   const std::map<std::string, Array>& grads, TrainerState& state,
                   const OptimizerConfig& opt, double lr) {
  for (const std::string& name : names) {
    Array& p = net.param(name);
    const Array& g = grads.at(name);
    if (opt.kind == OptimizerConfig::Kind::sgd) {
      for (int64_t i = 0; i < p.size(); ++i) p.data[i] -= lr * g.data[i];
      continue;
    }
    AdamSlot& slot = state.opt[name];
    if (slot.t == 0) {
      slot.m = Array(p.shape);
      slot.v = Array(p.shape);
    }
    ++slot.t;
    const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(slot.t));
    const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(slot.t));
    const bool decay = opt.weight_decay > 0.0 && p.shape.size() >= 2;
    for (int64_t i = 0; i < p.size(); ++i) {
      double gi = g.data[i];
      slot.m.data[i] = opt.beta1 * slot.m.data[i] + (1.0 - opt.beta1) * gi;
      slot.v.data[i] = opt.beta2 * slot.v.data[i] + (1.0 - opt.beta2) * gi * gi;
      double mhat = slot.m.data[i] / c1;
      double vhat = slot.v.data[i] / c2;
      double upd = mhat / (std::sqrt(vhat) + opt.eps);
      if (decay) upd += opt.weight_decay * p.data[i];
      p.data[i] -= lr * upd;
    }
  }
}

HiddenTrace forward_trace(const Supernet& net, const Path& path, const Batch& batch) {
  ChildGraph g = build_child(net, path, batch);
  g.g.forward();
  HiddenTrace t;
  t.reserve(g.layer_outputs.size());
  for (NodeId id : g.layer_outputs) t.push_back(g.g.value(id));
  return t;
}

struct ProbeScore {
  Path path;
  double proxy = 0.0;   // negative mean prediction loss
  double metric = 0.0;  // masked accuracy
};

ProbeScore score_child(const Supernet& net, const Path& child, const std::vector<Batch>& val) {
  ProbeScore s;
  s.path = child;
  double loss_sum = 0.0, metric_sum = 0.0;
  for (const Batch& b : val) {
    ChildGraph g = build_child(net, child, b);
    g.g.forward();
    loss_sum += g.g.scalar_value(g.loss);
    metric_sum += masked_accuracy(g.g.value(g.logits), b);
  }
  s.proxy = -loss_sum / static_cast<double>(val.size());
  s.metric = metric_sum / static_cast<double>(val.size());
  return s;
}

void run_epoch_probes(Supernet& net, const TrainConfig& cfg, const AliveMask& mask,
                      const std::vector<Batch>& val, TrainerState& state, int epoch,
                      int64_t step, TrainLog& log) {
  std::vector<ProbeScore> pool;
  pool.reserve(static_cast<size_t>(cfg.probe_pool));
  for (int i = 0; i < cfg.probe_pool; ++i)
    pool.push_back(score_child(net, sample_uniform(mask, state.probe_rng), val));

  EpochRecord rec;
  rec.epoch = epoch;
  rec.step = step;
  double best = -std::numeric_limits<double>::infinity();
  for (const ProbeScore& s : pool) {
    rec.probe_mean_metric += s.metric;
    rec.probe_mean_proxy += s.proxy;
    best = std::max(best, s.metric);
  }
  rec.probe_mean_metric /= static_cast<double>(pool.size());
  rec.probe_mean_proxy /= static_cast<double>(pool.size());
  rec.probe_best_metric = best;

  if (uses_alignment(cfg.method) && !cfg.align.average_align) {
    auto val_of = [&](const ProbeScore& s) {
      return cfg.anchor_metric == AnchorMetric::accuracy ? s.metric : s.proxy;
    };
    Path before = state.anchor.has_anchor ? state.anchor.anchor : Path{};
    if (cfg.anchor_policy.kind == AnchorPolicy::Kind::best_so_far) {
      for (const ProbeScore& s : pool)
        state.anchor = maybe_replace_anchor(state.anchor, s.path, val_of(s), epoch);
    } else {
      std::vector<std::pair<Path, double>> scored;
      scored.reserve(pool.size());
      for (const ProbeScore& s : pool) scored.push_back({s.path, val_of(s)});
      state.anchor = select_anchor_top_p(scored, state.anchor, cfg.anchor_policy, epoch);
    }
    rec.anchor_active = state.anchor.has_anchor;
    rec.anchor = state.anchor.anchor;
    rec.anchor_val = state.anchor.val_score;
    rec.anchor_replaced = state.anchor.anchor != before;
  }
  log.epochs.push_back(std::move(rec));
}

}  // namespace

std::vector<Batch> make_val_batches(const Task& task, int n_batches, int batch_size) {
  MAGIC_CHECK(n_batches > 0 && batch_size > 0, "invalid validation set size");
  Rng stream = task.val_stream();
  std::vector<Batch> out;
  out.reserve(static_cast<size_t>(n_batches));
  for (int i = 0; i < n_batches; ++i) out.push_back(task.gen_batch(batch_size, stream));
  return out;
}

double evaluate_proxy(const Supernet& net, const Path& child, const std::vector<Batch>& val) {
  MAGIC_CHECK(!val.empty(), "empty validation set");
  double loss_sum = 0.0;
  for (const Batch& b : val) {
    ChildGraph g = build_child(net, child, b);
    g.g.forward();
    loss_sum += g.g.scalar_value(g.loss);
  }
  return -loss_sum / static_cast<double>(val.size());
}

double evaluate_metric(const Supernet& net, const Path& child, const std::vector<Batch>& val) {
  MAGIC_CHECK(!val.empty(), "empty validation set");
  double metric_sum = 0.0;
  for (const Batch& b : val) {
    ChildGraph g = build_child(net, child, b);
    g.g.forward();
    metric_sum += masked_accuracy(g.g.value(g.logits), b);
  }
  return metric_sum / static_cast<double>(val.size());
}

TrainLog train_supernet(Supernet& net, const Task& task, const TrainConfig& cfg,
                        const AliveMask* mask_in, TrainerState* state_in, int64_t until) {
  cfg.validate();
  if (until < 0) until = cfg.steps;
  MAGIC_CHECK(until <= cfg.steps, "until=", until, " exceeds cfg.steps=", cfg.steps);
  MAGIC_CHECK(task.spec().vocab == net.config().vocab && task.spec().seq_len == net.config().seq_len,
              "task and net disagree on vocab/seq_len");
  AliveMask mask = mask_in ? *mask_in : AliveMask::all(net.num_layers(), net.num_ops());
  MAGIC_CHECK(mask.layers == net.num_layers() && mask.ops == net.num_ops(),
              "alive mask does not match the net");
  for (int l = 0; l < mask.layers; ++l)
    MAGIC_CHECK(mask.alive_in_layer(l) >= 1, "layer ", l, " has no alive candidate");

  TrainerState local;
  TrainerState& state = state_in ? *state_in : local;
  if (!state.initialized) {
    state.data_rng = task.train_stream();
    state.sampler_rng = Rng(derive_seed(cfg.seed, kStreamSampler));
    state.probe_rng = Rng(derive_seed(cfg.seed, kStreamProbe));
    state.step = 0;
    state.initialized = true;
  }
  MAGIC_CHECK(state.step <= until, "state is already past the requested stop step");

  const std::vector<Batch> val = make_val_batches(task, cfg.val_batches, cfg.batch_size);

  SamplerConfig chain = cfg.sampler;
  chain.mode = SamplerConfig::Mode::magic_t;

  // alignment kicks in after the warm start; the average variant aligns every
  // layer, the anchor variant every block boundary
  AlignmentConfig acfg = cfg.align;
  if (acfg.average_align) acfg.block_size = 1;

  TrainLog log;
  log.steps.reserve(static_cast<size_t>(until - state.step));

  while (state.step < until) {
    const int64_t step = state.step + 1;
    const int epoch = static_cast<int>((step - 1) / cfg.steps_per_epoch);
    const double lr = lr_at(step, cfg);

    Batch batch = task.gen_batch(cfg.batch_size, state.data_rng);

    Path child;
    if (uses_chain(cfg.method)) {
      if (state.prev_child.empty()) {
        child = sample_uniform(mask, state.sampler_rng);
      } else {
        // ops deleted under the chain are redrawn in place; the walk continues
        if (!mask.path_alive(state.prev_child))
          state.prev_child = resample_dead_layers(state.prev_child, mask, state.sampler_rng);
        child = sample_magic_t(state.prev_child, mask, chain, state.sampler_rng);
      }
      state.prev_child = child;
    } else {
      child = sample_uniform(mask, state.sampler_rng);
    }

    const bool align_now =
        uses_alignment(cfg.method) && epoch >= acfg.warm_start_epochs && acfg.lambda > 0.0 &&
        (acfg.average_align ||
         (state.anchor.has_anchor && mask.path_alive(state.anchor.anchor)));

    auto diverge = [&](const std::string& what) -> DivergenceError {
      if (!cfg.divergence_stem.empty())
        save_checkpoint(cfg.divergence_stem, make_train_checkpoint(net, state, cfg));
      return DivergenceError(detail::cat("training diverged at step ", step, " (", what,
                                         "); checkpoint ",
                                         cfg.divergence_stem.empty() ? "not requested"
                                                                     : cfg.divergence_stem));
    };

    ChildGraph cg;
    NodeId objective{};
    NodeId align_node{};
    double pred_loss = 0.0, align_loss = 0.0, total = 0.0;
    try {
      cg = build_child(net, child, batch);
      // skip per-node finite checks; the loss-value check below still trips
      cg.g.set_check_finite(false);
      objective = cg.loss;
      if (align_now) {
        HiddenTrace target;
        if (acfg.average_align) {
          int n = acfg.average_children > 0 ? acfg.average_children : net.num_ops();
          std::vector<HiddenTrace> traces;
          traces.reserve(static_cast<size_t>(n));
          for (int i = 0; i < n; ++i)
            traces.push_back(forward_trace(net, sample_uniform(mask, state.sampler_rng), batch));
          target = average_trace(traces);
        } else {
          target = forward_trace(net, state.anchor.anchor, batch);
        }
        align_node = add_alignment_loss(cg, target, acfg);
        objective = cg.g.add(cg.loss, cg.g.scale(align_node, acfg.lambda));
      }
      cg.g.forward();
    } catch (const GraphError& e) {
      throw diverge(e.what());  // non-finite activations surface as graph errors
    }
    pred_loss = cg.g.scalar_value(cg.loss);
    align_loss = align_node.valid() ? cg.g.scalar_value(align_node) : 0.0;
    total = cg.g.scalar_value(objective);
    if (!std::isfinite(total) || total > kDivergenceLoss)
      throw diverge(detail::cat("loss ", total));

    cg.g.backward(objective);
    apply_updates(net, net.path_param_names(child), cg.g.param_grads(), state, cfg.optimizer, lr);
    state.step = step;

    StepRecord rec;
    rec.step = step;
    rec.child = child;
    rec.pred_loss = pred_loss;
    rec.align_loss = align_loss;
    rec.lr = lr;
    log.steps.push_back(std::move(rec));

    if (step % cfg.steps_per_epoch == 0)
      run_epoch_probes(net, cfg, mask, val, state, epoch, step, log);
  }
  return log;
}

StandaloneResult train_standalone(const SupernetConfig& net_cfg, const Path& child,
                                  const Task& task, const TrainConfig& cfg) {
  SupernetConfig fresh = net_cfg;
  fresh.init_seed = derive_seed(cfg.seed, kStreamStandaloneInit);
  StandaloneResult res{Supernet(fresh), 0.0, {}};
  res.net.validate_path(child);

  AliveMask mask = AliveMask::all(fresh.num_layers, static_cast<int>(fresh.candidates.size()));
  for (int l = 0; l < mask.layers; ++l)
    for (int c = 0; c < mask.ops; ++c)
      if (c != child[static_cast<size_t>(l)]) mask.kill(l, c);

  TrainConfig solo = cfg;
  solo.method = TrainMethod::spos;  // the one alive path is sampled every step
  res.log = train_supernet(res.net, task, solo, &mask);
  res.val_metric =
      evaluate_metric(res.net, child, make_val_batches(task, cfg.val_batches, cfg.batch_size));
  return res;
}

Checkpoint make_train_checkpoint(const Supernet& net, const TrainerState& state,
                                 const TrainConfig& cfg) {
  Checkpoint ck;
  for (const auto& [name, arr] : net.params()) ck.tensors.emplace(name, arr);
  nlohmann::ordered_json opt_t = nlohmann::ordered_json::object();
  for (const auto& [name, slot] : state.opt) {
    ck.tensors.emplace("opt.m." + name, slot.m);
    ck.tensors.emplace("opt.v." + name, slot.v);
    opt_t[name] = slot.t;
  }
  ck.meta["kind"] = "train-state";
  ck.meta["method"] = train_method_name(cfg.method);
  ck.meta["step"] = state.step;
  ck.meta["rng"] = {{"data", state.data_rng.serialize()},
                    {"sampler", state.sampler_rng.serialize()},
                    {"probe", state.probe_rng.serialize()}};
  ck.meta["prev_child"] = state.prev_child;
  ck.meta["opt_t"] = std::move(opt_t);
  nlohmann::ordered_json anchor;
  anchor["has"] = state.anchor.has_anchor;
  anchor["last_eval_epoch"] = state.anchor.last_eval_epoch;
  if (state.anchor.has_anchor) {
    anchor["path"] = state.anchor.anchor;
    anchor["val"] = state.anchor.val_score;
  }
  ck.meta["anchor"] = std::move(anchor);
  return ck;
}

void restore_train_checkpoint(const Checkpoint& ck, Supernet& net, TrainerState& state) {
  MAGIC_CHECK(ck.meta.value("kind", "") == "train-state", "checkpoint is not a train state");
  for (auto& [name, arr] : net.params()) {
    auto it = ck.tensors.find(name);
    MAGIC_CHECK(it != ck.tensors.end(), "checkpoint misses tensor '", name, "'");
    MAGIC_CHECK(it->second.shape == arr.shape, "checkpoint tensor '", name, "' shape mismatch");
    arr = it->second;
  }
  state = TrainerState{};
  state.initialized = true;
  state.step = ck.meta.at("step").get<int64_t>();
  state.data_rng = Rng::deserialize(ck.meta.at("rng").at("data").get<std::string>());
  state.sampler_rng = Rng::deserialize(ck.meta.at("rng").at("sampler").get<std::string>());
  state.probe_rng = Rng::deserialize(ck.meta.at("rng").at("probe").get<std::string>());
  state.prev_child = ck.meta.at("prev_child").get<Path>();
  for (const auto& [name, t] : ck.meta.at("opt_t").items()) {
    AdamSlot slot;
    slot.t = t.get<int64_t>();
    slot.m = ck.tensors.at("opt.m." + name);
    slot.v = ck.tensors.at("opt.v." + name);
    MAGIC_CHECK(net.params().count(name) == 1, "optimizer state for unknown tensor '", name, "'");
    state.opt.emplace(name, std::move(slot));
  }
  const auto& anchor = ck.meta.at("anchor");
  state.anchor.has_anchor = anchor.at("has").get<bool>();
  state.anchor.last_eval_epoch = anchor.at("last_eval_epoch").get<int>();
  if (state.anchor.has_anchor) {
    state.anchor.anchor = anchor.at("path").get<Path>();
    state.anchor.val_score = anchor.at("val").get<double>();
  }
}

}  // namespace magic
