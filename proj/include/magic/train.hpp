#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "magic/align.hpp"
#include "magic/checkpoint.hpp"
#include "magic/sampler.hpp"
#include "magic/supernet.hpp"
#include "magic/tasks.hpp"

namespace magic {

enum class TrainMethod : uint8_t { spos, magic_t, magic_a, magic_at };

const char* train_method_name(TrainMethod m);
TrainMethod parse_train_method(const std::string& s);

struct OptimizerConfig {
  enum class Kind : uint8_t { adam, sgd };
  Kind kind = Kind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;  // decoupled, rank >= 2 tensors only; adam only

  void validate() const;
};

enum class AnchorMetric : uint8_t { accuracy, neg_loss };

const char* anchor_metric_name(AnchorMetric m);
AnchorMetric parse_anchor_metric(const std::string& s);

struct TrainConfig {
  TrainMethod method = TrainMethod::spos;
  int64_t steps = 20000;
  int batch_size = 32;
  int64_t warmup_steps = 1000;
  int64_t steps_per_epoch = 1000;  // epoch = fixed step count on streamed data
  int probe_pool = 64;             // children scored per epoch (val metric + anchor pool)
  int val_batches = 2;             // fixed held-out batches drawn once per run
  OptimizerConfig optimizer;
  SamplerConfig sampler;           // k / lazy for the gradual-modification chain
  AlignmentConfig align;
  AnchorPolicy anchor_policy;
  AnchorMetric anchor_metric = AnchorMetric::accuracy;
  uint64_t seed = 1;
  std::string divergence_stem;     // when set, a checkpoint lands here on divergence

  void validate() const;
};

// step is the 1-based index of the update being taken. Linear ramp from 0 to
// the peak over warmup, then linear anneal to 0 at the final step.
double lr_at(int64_t step, const TrainConfig& cfg);

struct StepRecord {
  int64_t step = 0;
  Path child;
  double pred_loss = 0.0;
  double align_loss = 0.0;
  double lr = 0.0;
};

struct EpochRecord {
  int epoch = 0;       // 0-based
  int64_t step = 0;    // last step of the epoch
  double probe_mean_metric = 0.0;
  double probe_best_metric = 0.0;
  double probe_mean_proxy = 0.0;
  bool anchor_active = false;
  Path anchor;
  double anchor_val = 0.0;
  bool anchor_replaced = false;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
};

// Per-tensor first/second moments with a lazily advanced step count, so
// bias correction tracks how often each block was actually updated.
struct AdamSlot {
  Array m;
  Array v;
  int64_t t = 0;
};

// Mutable cross-call state: resuming at an epoch boundary restores this
// struct plus the net parameters bit-exactly.
struct TrainerState {
  bool initialized = false;
  int64_t step = 0;
  Rng data_rng{0};
  Rng sampler_rng{0};
  Rng probe_rng{0};
  std::map<std::string, AdamSlot> opt;
  Path prev_child;  // empty until the first gradual-modification step
  AnchorState anchor;
};

// Trains `net` in place from state->step to cfg.steps. Passing nullptr for
// mask trains over the full space; state == nullptr uses a throwaway state.
// `until` >= 0 pauses the run at that step (schedules still follow
// cfg.steps), so callers can checkpoint at epoch boundaries or interleave
// training with search-space edits. Divergence (non-finite or > 1e3 training
// loss) saves cfg.divergence_stem (when set) and throws DivergenceError.
TrainLog train_supernet(Supernet& net, const Task& task, const TrainConfig& cfg,
                        const AliveMask* mask = nullptr, TrainerState* state = nullptr,
                        int64_t until = -1);

// Deterministic fixed validation set drawn from the task's held-out stream.
std::vector<Batch> make_val_batches(const Task& task, int n_batches, int batch_size);

// Negative mean prediction loss of `child` through the shared weights.
double evaluate_proxy(const Supernet& net, const Path& child, const std::vector<Batch>& val);

// Mean task metric (masked top-1 accuracy) of `child` through shared weights.
double evaluate_metric(const Supernet& net, const Path& child, const std::vector<Batch>& val);

struct StandaloneResult {
  Supernet net;
  double val_metric = 0.0;
  TrainLog log;
};

// From-scratch training of one extracted architecture (fresh weights, single
// alive path); the ground-truth side of rank-correlation studies.
StandaloneResult train_standalone(const SupernetConfig& net_cfg, const Path& child,
                                  const Task& task, const TrainConfig& cfg);

// Epoch-boundary persistence: net parameters, optimizer moments, RNG streams,
// chain position, and anchor state.
Checkpoint make_train_checkpoint(const Supernet& net, const TrainerState& state,
                                 const TrainConfig& cfg);
void restore_train_checkpoint(const Checkpoint& ck, Supernet& net, TrainerState& state);

}  // namespace magic
