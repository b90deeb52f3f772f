#include "magic/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "magic/error.hpp"

namespace magic {

namespace {

constexpr uint64_t kStreamAnalysis = 14;
constexpr uint64_t kStreamRankChildren = 15;

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, sep)) out.push_back(trim(tok));
  if (!s.empty() && s.back() == sep) out.push_back("");
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const char* expected) {
  throw ConfigError(detail::cat("config key '", key, "': cannot parse '", value, "' as ",
                                expected));
}

int64_t to_i64(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    int64_t out = std::stoll(v, &used);
    if (used != v.size()) bad_value(key, v, "an integer");
    return out;
  } catch (const std::logic_error&) {
    bad_value(key, v, "an integer");
  }
}

int to_int(const std::string& key, const std::string& v) {
  int64_t x = to_i64(key, v);
  if (x < INT32_MIN || x > INT32_MAX) bad_value(key, v, "a 32-bit integer");
  return static_cast<int>(x);
}

uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    uint64_t out = std::stoull(v, &used);
    if (used != v.size() || (!v.empty() && v[0] == '-')) bad_value(key, v, "an unsigned integer");
    return out;
  } catch (const std::logic_error&) {
    bad_value(key, v, "an unsigned integer");
  }
}

double to_dbl(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    double out = std::stod(v, &used);
    if (used != v.size()) bad_value(key, v, "a number");
    return out;
  } catch (const std::logic_error&) {
    bad_value(key, v, "a number");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "a boolean");
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  if (trim(v).empty()) return out;
  for (const std::string& tok : split(v, ',')) out.push_back(to_int(key, tok));
  return out;
}

std::string int_list_str(const std::vector<int>& xs) {
  std::string out;
  for (size_t i = 0; i < xs.size(); ++i)
    out += (i ? "," : "") + std::to_string(xs[static_cast<size_t>(i)]);
  return out;
}

std::string fmt_g(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return buf;
}

std::string fmt_4f(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", x);
  return buf;
}

struct KeyDef {
  const char* key;
  const char* doc;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

std::string B(bool b) { return b ? "true" : "false"; }

const std::vector<KeyDef>& config_schema() {
  using C = ExperimentConfig;
  static const std::vector<KeyDef> schema = {
      {"seed", "master seed for net init and training streams",
       [](C& c, const std::string& v) { c.seed = to_u64("seed", v); },
       [](const C& c) { return std::to_string(c.seed); }},
      {"out", "output directory (empty: $MAGICNAS_OUT, then ./out)",
       [](C& c, const std::string& v) { c.out = v; }, [](const C& c) { return c.out; }},
      {"checkpoint", "input checkpoint stem for analyze/rank",
       [](C& c, const std::string& v) { c.checkpoint = v; },
       [](const C& c) { return c.checkpoint; }},
      {"jobs", "worker-thread bound (execution is sequential)",
       [](C& c, const std::string& v) { c.jobs = to_int("jobs", v); },
       [](const C& c) { return std::to_string(c.jobs); }},
      {"space.layers", "super-net layers N",
       [](C& c, const std::string& v) { c.layers = to_int("space.layers", v); },
       [](const C& c) { return std::to_string(c.layers); }},
      {"space.d_model", "model width",
       [](C& c, const std::string& v) { c.d_model = to_int("space.d_model", v); },
       [](const C& c) { return std::to_string(c.d_model); }},
      {"space.ops", "candidate operators, e.g. mha4x16,ffn64,conv3",
       [](C& c, const std::string& v) { c.ops = v; }, [](const C& c) { return c.ops; }},
      {"task.kind", "markov2 | copy_shift",
       [](C& c, const std::string& v) { c.task.kind = parse_task_kind(v); },
       [](const C& c) { return task_kind_name(c.task.kind); }},
      {"task.vocab", "token vocabulary (includes pad/mask ids)",
       [](C& c, const std::string& v) { c.task.vocab = to_int("task.vocab", v); },
       [](const C& c) { return std::to_string(c.task.vocab); }},
      {"task.seq_len", "sequence length",
       [](C& c, const std::string& v) { c.task.seq_len = to_int("task.seq_len", v); },
       [](const C& c) { return std::to_string(c.task.seq_len); }},
      {"task.mask_rate", "fraction of masked positions",
       [](C& c, const std::string& v) { c.task.mask_rate = to_dbl("task.mask_rate", v); },
       [](const C& c) { return fmt_g(c.task.mask_rate); }},
      {"task.structure_seed", "fixes the markov2 transition table",
       [](C& c, const std::string& v) { c.task.structure_seed = to_u64("task.structure_seed", v); },
       [](const C& c) { return std::to_string(c.task.structure_seed); }},
      {"task.shift", "copy_shift offset",
       [](C& c, const std::string& v) { c.task.shift = to_int("task.shift", v); },
       [](const C& c) { return std::to_string(c.task.shift); }},
      {"task.train_seed", "training stream seed",
       [](C& c, const std::string& v) { c.task.train_seed = to_u64("task.train_seed", v); },
       [](const C& c) { return std::to_string(c.task.train_seed); }},
      {"task.val_seed", "validation stream seed",
       [](C& c, const std::string& v) { c.task.val_seed = to_u64("task.val_seed", v); },
       [](const C& c) { return std::to_string(c.task.val_seed); }},
      {"train.method", "spos | magic_t | magic_a | magic_at",
       [](C& c, const std::string& v) { c.train.method = parse_train_method(v); },
       [](const C& c) { return train_method_name(c.train.method); }},
      {"train.steps", "total optimizer steps",
       [](C& c, const std::string& v) { c.train.steps = to_i64("train.steps", v); },
       [](const C& c) { return std::to_string(c.train.steps); }},
      {"train.batch_size", "sequences per step",
       [](C& c, const std::string& v) { c.train.batch_size = to_int("train.batch_size", v); },
       [](const C& c) { return std::to_string(c.train.batch_size); }},
      {"train.warmup_steps", "linear LR ramp length",
       [](C& c, const std::string& v) { c.train.warmup_steps = to_i64("train.warmup_steps", v); },
       [](const C& c) { return std::to_string(c.train.warmup_steps); }},
      {"train.steps_per_epoch", "steps between probe/anchor evaluations",
       [](C& c, const std::string& v) {
         c.train.steps_per_epoch = to_i64("train.steps_per_epoch", v);
       },
       [](const C& c) { return std::to_string(c.train.steps_per_epoch); }},
      {"train.probe_pool", "children probed per epoch (also slot-score paths)",
       [](C& c, const std::string& v) { c.train.probe_pool = to_int("train.probe_pool", v); },
       [](const C& c) { return std::to_string(c.train.probe_pool); }},
      {"train.val_batches", "fixed held-out batches",
       [](C& c, const std::string& v) { c.train.val_batches = to_int("train.val_batches", v); },
       [](const C& c) { return std::to_string(c.train.val_batches); }},
      {"train.optimizer", "adam | sgd",
       [](C& c, const std::string& v) {
         if (v == "adam")
           c.train.optimizer.kind = OptimizerConfig::Kind::adam;
         else if (v == "sgd")
           c.train.optimizer.kind = OptimizerConfig::Kind::sgd;
         else
           bad_value("train.optimizer", v, "adam or sgd");
       },
       [](const C& c) {
         return std::string(c.train.optimizer.kind == OptimizerConfig::Kind::adam ? "adam"
                                                                                  : "sgd");
       }},
      {"train.lr", "peak learning rate",
       [](C& c, const std::string& v) { c.train.optimizer.lr = to_dbl("train.lr", v); },
       [](const C& c) { return fmt_g(c.train.optimizer.lr); }},
      {"train.beta1", "adam first-moment decay",
       [](C& c, const std::string& v) { c.train.optimizer.beta1 = to_dbl("train.beta1", v); },
       [](const C& c) { return fmt_g(c.train.optimizer.beta1); }},
      {"train.beta2", "adam second-moment decay",
       [](C& c, const std::string& v) { c.train.optimizer.beta2 = to_dbl("train.beta2", v); },
       [](const C& c) { return fmt_g(c.train.optimizer.beta2); }},
      {"train.eps", "adam denominator floor",
       [](C& c, const std::string& v) { c.train.optimizer.eps = to_dbl("train.eps", v); },
       [](const C& c) { return fmt_g(c.train.optimizer.eps); }},
      {"train.weight_decay", "decoupled decay on matrices",
       [](C& c, const std::string& v) {
         c.train.optimizer.weight_decay = to_dbl("train.weight_decay", v);
       },
       [](const C& c) { return fmt_g(c.train.optimizer.weight_decay); }},
      {"train.k", "layers substituted per gradual-modification step",
       [](C& c, const std::string& v) { c.train.sampler.k = to_int("train.k", v); },
       [](const C& c) { return std::to_string(c.train.sampler.k); }},
      {"train.lazy", "allow re-drawing the incumbent op (distance <= k)",
       [](C& c, const std::string& v) { c.train.sampler.lazy = to_bool("train.lazy", v); },
       [](const C& c) { return B(c.train.sampler.lazy); }},
      {"train.lambda", "alignment loss weight",
       [](C& c, const std::string& v) { c.train.align.lambda = to_dbl("train.lambda", v); },
       [](const C& c) { return fmt_g(c.train.align.lambda); }},
      {"train.block_size", "align at layers b, 2b, ...",
       [](C& c, const std::string& v) { c.train.align.block_size = to_int("train.block_size", v); },
       [](const C& c) { return std::to_string(c.train.align.block_size); }},
      {"train.warm_start_epochs", "epochs before alignment starts",
       [](C& c, const std::string& v) {
         c.train.align.warm_start_epochs = to_int("train.warm_start_epochs", v);
       },
       [](const C& c) { return std::to_string(c.train.align.warm_start_epochs); }},
      {"train.average_align", "align against the mean trace instead of an anchor",
       [](C& c, const std::string& v) {
         c.train.align.average_align = to_bool("train.average_align", v);
       },
       [](const C& c) { return B(c.train.align.average_align); }},
      {"train.average_children", "traces in the mean (0: one per candidate op)",
       [](C& c, const std::string& v) {
         c.train.align.average_children = to_int("train.average_children", v);
       },
       [](const C& c) { return std::to_string(c.train.align.average_children); }},
      {"train.anchor_policy", "best_so_far | top_p",
       [](C& c, const std::string& v) {
         if (v == "best_so_far")
           c.train.anchor_policy.kind = AnchorPolicy::Kind::best_so_far;
         else if (v == "top_p")
           c.train.anchor_policy.kind = AnchorPolicy::Kind::top_p;
         else
           bad_value("train.anchor_policy", v, "best_so_far or top_p");
       },
       [](const C& c) { return anchor_policy_name(c.train.anchor_policy.kind); }},
      {"train.anchor_p", "target percentile for top_p (0 = best)",
       [](C& c, const std::string& v) { c.train.anchor_policy.p = to_dbl("train.anchor_p", v); },
       [](const C& c) { return fmt_g(c.train.anchor_policy.p); }},
      {"train.anchor_r", "hysteresis half-width around anchor_p",
       [](C& c, const std::string& v) { c.train.anchor_policy.r = to_dbl("train.anchor_r", v); },
       [](const C& c) { return fmt_g(c.train.anchor_policy.r); }},
      {"train.anchor_metric", "accuracy | neg_loss",
       [](C& c, const std::string& v) { c.train.anchor_metric = parse_anchor_metric(v); },
       [](const C& c) { return anchor_metric_name(c.train.anchor_metric); }},
      {"analyze.og_layer", "probed layer (0-indexed)",
       [](C& c, const std::string& v) { c.og_layer = to_int("analyze.og_layer", v); },
       [](const C& c) { return std::to_string(c.og_layer); }},
      {"analyze.m", "differing-layer counts, e.g. 1,2,3,4",
       [](C& c, const std::string& v) { c.m_values = to_int_list("analyze.m", v); },
       [](const C& c) { return int_list_str(c.m_values); }},
      {"analyze.layers", "og-layer sweep positions (empty: skip)",
       [](C& c, const std::string& v) { c.sweep_layers = to_int_list("analyze.layers", v); },
       [](const C& c) { return int_list_str(c.sweep_layers); }},
      {"analyze.repeats", "fresh probe+batch draws per point",
       [](C& c, const std::string& v) { c.repeats = to_int("analyze.repeats", v); },
       [](const C& c) { return std::to_string(c.repeats); }},
      {"analyze.batch", "batch size per probe",
       [](C& c, const std::string& v) { c.analysis_batch = to_int("analyze.batch", v); },
       [](const C& c) { return std::to_string(c.analysis_batch); }},
      {"rank.children", "children compared in the rank experiment",
       [](C& c, const std::string& v) { c.rank_children = to_int("rank.children", v); },
       [](const C& c) { return std::to_string(c.rank_children); }},
      {"rank.steps", "standalone budget per child (0: train.steps)",
       [](C& c, const std::string& v) { c.rank_steps = to_i64("rank.steps", v); },
       [](const C& c) { return std::to_string(c.rank_steps); }},
      {"search.deletions", "slots removed per shrink epoch (0: scaled default)",
       [](C& c, const std::string& v) { c.deletions = to_int("search.deletions", v); },
       [](const C& c) { return std::to_string(c.deletions); }},
      {"search.standalone", "also train the final child standalone",
       [](C& c, const std::string& v) { c.search_standalone = to_bool("search.standalone", v); },
       [](const C& c) { return B(c.search_standalone); }},
      {"standalone.child", "path to train, e.g. 0,1,2,3,0,1",
       [](C& c, const std::string& v) { c.child = v; }, [](const C& c) { return c.child; }},
      {"mixing.layers", "walk dimension N",
       [](C& c, const std::string& v) { c.mixing_layers = to_int("mixing.layers", v); },
       [](const C& c) { return std::to_string(c.mixing_layers); }},
      {"mixing.ops", "candidates per layer C",
       [](C& c, const std::string& v) { c.mixing_ops = to_int("mixing.ops", v); },
       [](const C& c) { return std::to_string(c.mixing_ops); }},
      {"mixing.lazy", "lazy substitution walk",
       [](C& c, const std::string& v) { c.mixing_lazy = to_bool("mixing.lazy", v); },
       [](const C& c) { return B(c.mixing_lazy); }},
      {"mixing.eps", "target total-variation distance",
       [](C& c, const std::string& v) { c.mixing_eps = to_dbl("mixing.eps", v); },
       [](const C& c) { return fmt_g(c.mixing_eps); }},
      {"mixing.t_max", "steps recorded (0: N ln N + N ln 1/eps)",
       [](C& c, const std::string& v) { c.mixing_t_max = to_int("mixing.t_max", v); },
       [](const C& c) { return std::to_string(c.mixing_t_max); }},
      {"mixing.mode", "auto | full | lumped",
       [](C& c, const std::string& v) {
         if (v != "auto" && v != "full" && v != "lumped")
           bad_value("mixing.mode", v, "auto, full, or lumped");
         c.mixing_mode = v;
       },
       [](const C& c) { return c.mixing_mode; }},
  };
  return schema;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  MAGIC_CHECK(f.good(), "cannot open '", path, "' for writing");
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  MAGIC_CHECK(f.good(), "failed writing '", path, "'");
}

}  // namespace

SupernetConfig ExperimentConfig::space() const {
  SupernetConfig s;
  s.num_layers = layers;
  s.d_model = d_model;
  s.vocab = task.vocab;
  s.seq_len = task.seq_len;
  s.init_seed = seed;
  s.candidates = parse_operator_list(ops);
  return s;
}

Task ExperimentConfig::make_task() const { return Task(task); }

std::vector<OperatorSpec> parse_operator_list(const std::string& csv) {
  std::vector<OperatorSpec> out;
  for (const std::string& tok : split(csv, ',')) {
    if (tok.rfind("mha", 0) == 0) {
      std::string rest = tok.substr(3);
      size_t x = rest.find('x');
      if (x == std::string::npos || x == 0 || x + 1 == rest.size())
        throw ConfigError(detail::cat("operator '", tok, "': expected mha<heads>x<head_dim>"));
      out.push_back(OperatorSpec::mha(to_int("space.ops", rest.substr(0, x)),
                                      to_int("space.ops", rest.substr(x + 1))));
    } else if (tok.rfind("ffn", 0) == 0) {
      out.push_back(OperatorSpec::ffn(to_int("space.ops", tok.substr(3))));
    } else if (tok.rfind("conv", 0) == 0) {
      out.push_back(OperatorSpec::conv(to_int("space.ops", tok.substr(4))));
    } else {
      throw ConfigError(detail::cat("operator '", tok, "': expected mha<H>x<D>, ffn<I>, or conv<K>"));
    }
  }
  if (out.empty()) throw ConfigError("space.ops names no operators");
  return out;
}

void apply_config_kv(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  for (const KeyDef& def : config_schema()) {
    if (key == def.key) {
      def.set(cfg, value);
      return;
    }
  }
  throw ConfigError(detail::cat("unknown config key '", key, "'"));
}

ExperimentConfig parse_config_text(const std::string& text, ExperimentConfig base) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(detail::cat("config line ", lineno, ": expected key=value, got '", line,
                                    "'"));
    apply_config_kv(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

ExperimentConfig load_config_file(const std::string& path, ExperimentConfig base) {
  std::ifstream f(path, std::ios::binary);
  if (!f.good()) throw ConfigError(detail::cat("cannot read config file '", path, "'"));
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str(), std::move(base));
}

std::string config_reference() {
  const ExperimentConfig defaults;
  std::string out;
  for (const KeyDef& def : config_schema()) {
    std::string v = def.get(defaults);
    out += detail::cat(def.key, " = ", v.empty() ? "(empty)" : v, "\n    ", def.doc, "\n");
  }
  return out;
}

nlohmann::ordered_json config_json(const ExperimentConfig& cfg) {
  nlohmann::ordered_json j;
  for (const KeyDef& def : config_schema()) j[def.key] = def.get(cfg);
  return j;
}

std::string similarity_csv(const SimilarityMatrix& s) {
  std::string out = "op";
  for (const std::string& l : s.labels) out += "," + l;
  out += "\n";
  for (int i = 0; i < s.dim(); ++i) {
    out += s.labels[static_cast<size_t>(i)];
    for (int j = 0; j < s.dim(); ++j) out += "," + fmt_4f(s.at(i, j));
    out += "\n";
  }
  return out;
}

std::string mcurve_csv(const MCurve& c) {
  size_t repeats = c.per_repeat.empty() ? 0 : c.per_repeat.front().size();
  std::string out = "m,mean";
  for (size_t r = 0; r < repeats; ++r) out += ",rep" + std::to_string(r);
  out += "\n";
  for (size_t k = 0; k < c.m.size(); ++k) {
    out += std::to_string(c.m[k]) + "," + fmt_g(c.mean[k]);
    for (double v : c.per_repeat[k]) out += "," + fmt_g(v);
    out += "\n";
  }
  return out;
}

std::string sweep_csv(const LayerSweep& s) {
  size_t repeats = s.per_repeat.empty() ? 0 : s.per_repeat.front().size();
  std::string out = "layer,mean";
  for (size_t r = 0; r < repeats; ++r) out += ",rep" + std::to_string(r);
  out += "\n";
  for (size_t k = 0; k < s.layer.size(); ++k) {
    out += std::to_string(s.layer[k]) + "," + fmt_g(s.mean[k]);
    for (double v : s.per_repeat[k]) out += "," + fmt_g(v);
    out += "\n";
  }
  return out;
}

std::string mixing_csv(const MixingReport& r) {
  std::string out = "t,tv,coupling_bound,decay_envelope\n";
  for (size_t i = 0; i < r.t.size(); ++i)
    out += std::to_string(r.t[i]) + "," + fmt_g(r.tv[i]) + "," + fmt_g(r.coupling_bound[i]) +
           "," + fmt_g(r.decay_envelope[i]) + "\n";
  return out;
}

std::string trainlog_jsonl(const TrainLog& log) {
  std::string out;
  for (const StepRecord& r : log.steps) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    j["child"] = path_str(r.child);
    j["pred_loss"] = r.pred_loss;
    j["align_loss"] = r.align_loss;
    j["lr"] = r.lr;
    out += j.dump() + "\n";
  }
  return out;
}

std::string anchor_jsonl(const TrainLog& log, const TrainConfig& cfg) {
  const char* policy = cfg.align.average_align ? "average"
                                               : anchor_policy_name(cfg.anchor_policy.kind);
  std::string out;
  for (const EpochRecord& e : log.epochs) {
    nlohmann::ordered_json j;
    j["epoch"] = e.epoch;
    j["step"] = e.step;
    j["probe_mean_metric"] = e.probe_mean_metric;
    j["probe_best_metric"] = e.probe_best_metric;
    j["probe_mean_proxy"] = e.probe_mean_proxy;
    j["anchor_active"] = e.anchor_active;
    if (e.anchor_active) {
      j["anchor"] = path_str(e.anchor);
      j["anchor_val"] = e.anchor_val;
    } else {
      j["anchor"] = nullptr;
      j["anchor_val"] = nullptr;
    }
    j["replaced"] = e.anchor_replaced;
    j["policy"] = policy;
    out += j.dump() + "\n";
  }
  return out;
}

namespace {

void write_run_meta(const std::string& dir, const std::string& command,
                    const ExperimentConfig& cfg) {
  nlohmann::ordered_json meta;
  meta["command"] = command;
  meta["created_unix"] = static_cast<int64_t>(std::time(nullptr));  // only timestamp on disk
  meta["config"] = config_json(cfg);
  write_file(dir + "/run_meta.json", meta.dump(2) + "\n");
}

std::string out_dir(const ExperimentConfig& cfg) {
  std::string dir = cfg.out;
  if (dir.empty()) {
    const char* env = std::getenv("MAGICNAS_OUT");
    dir = (env && *env) ? env : "out";
  }
  std::filesystem::create_directories(dir);
  return dir;
}

// Rebuilds the net described by the config and loads the checkpoint's
// weights into it; name/shape disagreement is a config error.
Supernet net_from_checkpoint(ExperimentConfig& cfg, Checkpoint& ck) {
  if (cfg.checkpoint.empty())
    throw ConfigError("missing required field 'checkpoint' (stem of a saved training run)");
  try {
    ck = load_checkpoint(cfg.checkpoint);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  // checkpoints written by `train` carry their config; adopt the space and
  // task so downstream commands need not restate them
  if (ck.meta.contains("config"))
    for (const KeyDef& def : config_schema()) {
      std::string key = def.key;
      if (key.rfind("space.", 0) != 0 && key.rfind("task.", 0) != 0) continue;
      if (ck.meta["config"].contains(key))
        def.set(cfg, ck.meta["config"][key].get<std::string>());
    }
  Supernet net(cfg.space());
  for (auto& [name, arr] : net.params()) {
    auto it = ck.tensors.find(name);
    if (it == ck.tensors.end())
      throw ConfigError(detail::cat("checkpoint '", cfg.checkpoint,
                                    "' does not match the configured space: missing tensor '",
                                    name, "'"));
    if (it->second.shape != arr.shape)
      throw ConfigError(detail::cat("checkpoint '", cfg.checkpoint,
                                    "' does not match the configured space: tensor '", name,
                                    "' is ", shape_str(it->second.shape), ", expected ",
                                    shape_str(arr.shape)));
    arr = it->second;
  }
  return net;
}

ExperimentConfig prepared(ExperimentConfig cfg) {
  try {
    cfg.train.seed = cfg.seed;
    (void)cfg.space();  // validates operator list
    cfg.task.validate();
    return cfg;
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

int cmd_train(const ExperimentConfig& cfg) {
  const std::string dir = out_dir(cfg);
  Supernet net(cfg.space());
  Task task = cfg.make_task();
  TrainConfig tcfg = cfg.train;
  tcfg.divergence_stem = dir + "/diverged";
  try {
    tcfg.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }

  TrainerState state;
  TrainLog log = train_supernet(net, task, tcfg, nullptr, &state);
  Checkpoint ck = make_train_checkpoint(net, state, tcfg);
  nlohmann::ordered_json embedded = config_json(cfg);
  embedded.erase("out");  // keep checkpoints byte-identical across output dirs
  ck.meta["config"] = std::move(embedded);
  save_checkpoint(dir + "/checkpoint", ck);
  write_file(dir + "/trainlog.jsonl", trainlog_jsonl(log));
  write_file(dir + "/anchors.jsonl", anchor_jsonl(log, tcfg));
  write_run_meta(dir, "train", cfg);
  std::printf("trained %s for %lld steps -> %s/checkpoint\n", train_method_name(tcfg.method),
              static_cast<long long>(tcfg.steps), dir.c_str());
  return 0;
}

int cmd_analyze(ExperimentConfig cfg) {
  const std::string dir = out_dir(cfg);
  Checkpoint ck;
  Supernet net = net_from_checkpoint(cfg, ck);
  Task task = cfg.make_task();
  if (cfg.og_layer < 0 || cfg.m_values.empty() ||
      cfg.og_layer + *std::max_element(cfg.m_values.begin(), cfg.m_values.end()) >
          cfg.layers - 1)
    throw ConfigError(detail::cat("analyze.og_layer=", cfg.og_layer, " with analyze.m=",
                                  int_list_str(cfg.m_values), " does not fit ", cfg.layers,
                                  " layers"));
  for (int j : cfg.sweep_layers)
    if (j < 0 || j + cfg.m_values.front() > cfg.layers - 1)
      throw ConfigError(detail::cat("analyze.layers entry ", j, " out of range"));

  Rng rng(derive_seed(cfg.seed, kStreamAnalysis));
  InterferenceProbe probe =
      make_probe(net.num_layers(), net.num_ops(), cfg.og_layer, cfg.m_values.front(), rng);
  Batch batch = task.gen_batch(cfg.analysis_batch, rng);
  write_file(dir + "/similarity.csv", similarity_csv(similarity_matrix(net, probe, batch)));

  MCurve curve = interference_vs_m(net, task, cfg.og_layer, cfg.m_values, cfg.repeats,
                                   cfg.analysis_batch, rng);
  write_file(dir + "/mcurve.csv", mcurve_csv(curve));

  if (!cfg.sweep_layers.empty()) {
    LayerSweep sweep = og_layer_sweep(net, task, cfg.sweep_layers, cfg.m_values.front(),
                                      cfg.repeats, cfg.analysis_batch, rng);
    write_file(dir + "/sweep.csv", sweep_csv(sweep));
  }
  write_run_meta(dir, "analyze", cfg);
  std::printf("analysis artifacts -> %s\n", dir.c_str());
  return 0;
}

int cmd_rank(ExperimentConfig cfg) {
  const std::string dir = out_dir(cfg);
  Checkpoint ck;
  Supernet net = net_from_checkpoint(cfg, ck);
  Task task = cfg.make_task();
  if (cfg.rank_children < 2)
    throw ConfigError(detail::cat("rank.children=", cfg.rank_children, ": need at least 2"));
  double space_size = std::pow(static_cast<double>(net.num_ops()),
                               static_cast<double>(net.num_layers()));
  if (space_size < static_cast<double>(cfg.rank_children))
    throw ConfigError(detail::cat("rank.children=", cfg.rank_children, " exceeds the ",
                                  fmt_g(space_size), " children in the space"));

  Rng rng(derive_seed(cfg.seed, kStreamRankChildren));
  AliveMask all = AliveMask::all(net.num_layers(), net.num_ops());
  std::set<Path> seen;
  std::vector<Path> children;
  while (static_cast<int>(children.size()) < cfg.rank_children) {
    Path p = sample_uniform(all, rng);
    if (seen.insert(p).second) children.push_back(std::move(p));
  }

  TrainConfig solo = cfg.train;
  if (cfg.rank_steps > 0) {
    solo.steps = cfg.rank_steps;
    solo.warmup_steps = std::min(solo.warmup_steps, cfg.rank_steps / 10);
  }
  RankReport report = rank_experiment(net, children, task, solo);
  nlohmann::ordered_json j = rank_report_json(report);
  j["config"] = config_json(cfg);
  write_file(dir + "/rank.json", j.dump(2) + "\n");
  write_run_meta(dir, "rank", cfg);
  std::printf("kendall tau over %d children: %s -> %s/rank.json\n", cfg.rank_children,
              fmt_g(report.tau).c_str(), dir.c_str());
  return 0;
}

int cmd_mixing(const ExperimentConfig& cfg) {
  const std::string dir = out_dir(cfg);
  const int n = cfg.mixing_layers, c = cfg.mixing_ops;
  if (n < 1 || c < 2)
    throw ConfigError(detail::cat("mixing needs layers >= 1 and ops >= 2, got N=", n, " C=", c));
  if (c == 2 && !cfg.mixing_lazy)
    throw ConfigError(
        "mixing.ops=2 with strict substitution is periodic: every step flips the op, parity "
        "alternates forever and the walk never converges; set mixing.lazy=true");
  if (cfg.mixing_eps <= 0.0 || cfg.mixing_eps >= 1.0)
    throw ConfigError(detail::cat("mixing.eps=", fmt_g(cfg.mixing_eps), " outside (0, 1)"));

  int t_max = cfg.mixing_t_max > 0 ? cfg.mixing_t_max : mixing_steps_for(cfg.mixing_eps, n);
  bool full = cfg.mixing_mode == "full" ||
              (cfg.mixing_mode == "auto" && std::pow(double(c), double(n)) <= 1e5);
  if (cfg.mixing_mode == "full" && std::pow(double(c), double(n)) > 1e5)
    throw ConfigError(detail::cat("mixing.mode=full needs C^N <= 100000 states; ", c, "^", n,
                                  " is larger (use mixing.mode=lumped)"));
  MixingReport r = full ? exact_mixing_curve(n, c, cfg.mixing_lazy, t_max)
                        : lumped_mixing_curve(n, c, cfg.mixing_lazy, t_max);
  write_file(dir + "/mixing.csv", mixing_csv(r));
  write_run_meta(dir, "mixing", cfg);
  std::printf("mixing curve (%s, %d steps) -> %s/mixing.csv\n", full ? "full" : "lumped", t_max,
              dir.c_str());
  return 0;
}

int cmd_search(const ExperimentConfig& cfg) {
  const std::string dir = out_dir(cfg);
  Supernet net(cfg.space());
  Task task = cfg.make_task();
  TrainConfig tcfg = cfg.train;
  tcfg.divergence_stem = dir + "/diverged";
  try {
    if (tcfg.steps > 0) tcfg.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  int d = cfg.deletions > 0 ? cfg.deletions
                            : default_deletions_per_epoch(net.num_layers(), net.num_ops());
  ShrinkState state = ShrinkState::fresh(net.num_layers(), net.num_ops(), d);

  std::ofstream trace(dir + "/trace.jsonl", std::ios::binary);
  MAGIC_CHECK(trace.good(), "cannot open '", dir, "/trace.jsonl' for writing");
  SearchResult r = run_search(net, task, tcfg, state, &trace);
  trace.close();

  nlohmann::ordered_json j;
  j["child"] = path_str(r.child);
  j["proxy"] = r.proxy;
  j["shrink_epochs"] = r.shrink_epochs;
  j["deletions"] = state.trace.size();
  if (cfg.search_standalone) {
    StandaloneResult solo = train_standalone(cfg.space(), r.child, task, tcfg);
    j["standalone_metric"] = solo.val_metric;
  }
  write_file(dir + "/final_child.json", j.dump(2) + "\n");
  write_run_meta(dir, "search", cfg);
  std::printf("search finished: child %s proxy %s -> %s/final_child.json\n",
              path_str(r.child).c_str(), fmt_g(r.proxy).c_str(), dir.c_str());
  return 0;
}

int cmd_standalone(const ExperimentConfig& cfg) {
  const std::string dir = out_dir(cfg);
  if (cfg.child.empty())
    throw ConfigError("missing required field 'standalone.child' (path such as 0,1,2,0)");
  Path child;
  try {
    child = parse_path(cfg.child);
    Supernet probe(cfg.space());
    probe.validate_path(child);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  Task task = cfg.make_task();
  StandaloneResult res = train_standalone(cfg.space(), child, task, cfg.train);
  nlohmann::ordered_json j;
  j["child"] = path_str(child);
  j["val_metric"] = res.val_metric;
  j["steps"] = cfg.train.steps;
  write_file(dir + "/standalone.json", j.dump(2) + "\n");
  write_run_meta(dir, "standalone", cfg);
  std::printf("standalone %s: val metric %s -> %s/standalone.json\n", cfg.child.c_str(),
              fmt_g(res.val_metric).c_str(), dir.c_str());
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"desk-scale weight-sharing architecture search toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::vector<std::string> sets;
  std::string out_flag, checkpoint_flag, method_flag, child_flag;
  int64_t steps_flag = -1;
  int children_flag = -1, jobs_flag = -1;
  uint64_t seed_flag = 0;
  bool seed_given = false;

  app.add_option("--config", config_path, "key=value config file");
  app.add_option("--set", sets, "override one key, e.g. --set train.steps=500");
  app.add_option("--out", out_flag, "output directory");
  app.add_option("--seed", seed_flag, "master seed")->each([&](const std::string&) {
    seed_given = true;
  });
  app.add_option("--checkpoint", checkpoint_flag, "input checkpoint stem");
  app.add_option("--method", method_flag, "training method (spos|magic_t|magic_a|magic_at)");
  app.add_option("--steps", steps_flag, "training steps");
  app.add_option("--children", children_flag, "rank experiment children");
  app.add_option("--child", child_flag, "standalone child path");
  app.add_option("--jobs", jobs_flag, "worker-thread bound (execution is sequential)");
  app.add_flag_callback(
      "--config-reference",
      [] {
        std::fputs(config_reference().c_str(), stdout);
        throw CLI::Success{};
      },
      "print every config key and exit");

  CLI::App* sub_train = app.add_subcommand("train", "train a super-net and checkpoint it");
  CLI::App* sub_analyze =
      app.add_subcommand("analyze", "gradient-interference artifacts from a checkpoint");
  CLI::App* sub_rank = app.add_subcommand("rank", "proxy-vs-standalone rank correlation");
  CLI::App* sub_mixing = app.add_subcommand("mixing", "random-walk convergence curve");
  CLI::App* sub_search = app.add_subcommand("search", "progressive-shrinking search");
  CLI::App* sub_standalone = app.add_subcommand("standalone", "train one child from scratch");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    ExperimentConfig cfg;
    if (!config_path.empty()) cfg = load_config_file(config_path, std::move(cfg));
    for (const std::string& kv : sets) {
      size_t eq = kv.find('=');
      if (eq == std::string::npos)
        throw ConfigError(detail::cat("--set expects key=value, got '", kv, "'"));
      apply_config_kv(cfg, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }
    if (!out_flag.empty()) cfg.out = out_flag;
    if (seed_given) cfg.seed = seed_flag;
    if (!checkpoint_flag.empty()) cfg.checkpoint = checkpoint_flag;
    if (!method_flag.empty()) apply_config_kv(cfg, "train.method", method_flag);
    if (steps_flag >= 0) cfg.train.steps = steps_flag;
    if (children_flag >= 0) cfg.rank_children = children_flag;
    if (!child_flag.empty()) cfg.child = child_flag;
    if (jobs_flag >= 0) cfg.jobs = jobs_flag;
    if (cfg.jobs < 1) throw ConfigError(detail::cat("jobs=", cfg.jobs, " must be >= 1"));
    cfg = prepared(std::move(cfg));

    if (sub_train->parsed()) return cmd_train(cfg);
    if (sub_analyze->parsed()) return cmd_analyze(cfg);
    if (sub_rank->parsed()) return cmd_rank(cfg);
    if (sub_mixing->parsed()) return cmd_mixing(cfg);
    if (sub_search->parsed()) return cmd_search(cfg);
    if (sub_standalone->parsed()) return cmd_standalone(cfg);
    throw ConfigError("no subcommand selected");
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 3;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}

}  // namespace magic
