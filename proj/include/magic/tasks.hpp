#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "magic/rng.hpp"
#include "magic/supernet.hpp"

namespace magic {

// Reserved token ids; generators emit ids >= 2.
constexpr int kPadId = 0;
constexpr int kMaskId = 1;

enum class TaskKind : uint8_t { markov2, copy_shift };

const char* task_kind_name(TaskKind k);
TaskKind parse_task_kind(const std::string& s);

struct TaskSpec {
  TaskKind kind = TaskKind::markov2;
  int vocab = 64;
  int seq_len = 32;
  double mask_rate = 0.15;
  uint64_t structure_seed = 7;  // fixes the markov2 transition table
  int shift = 5;                // copy_shift offset
  uint64_t train_seed = 101;    // data stream seeds; train/val disjoint
  uint64_t val_seed = 202;

  void validate() const;
};

// Seeded synthetic sequence task. Sequences are full length (no padding);
// masked-prediction batches replace chosen positions with kMaskId, set the
// loss weight there to 1 and keep the clean token as target.
class Task {
 public:
  explicit Task(TaskSpec spec);

  const TaskSpec& spec() const { return spec_; }

  // Clean sequence of seq_len ids in [2, vocab).
  std::vector<int> sample_sequence(Rng& rng) const;

  // Sampling + masking; every sequence gets at least one masked position.
  Batch gen_batch(int batch_size, Rng& rng) const;

  Rng train_stream() const { return Rng(derive_seed(spec_.train_seed, 0)); }
  Rng val_stream() const { return Rng(derive_seed(spec_.val_seed, 1)); }

  // markov2 internals, exposed for statistical tests
  int num_symbols() const { return spec_.vocab - 2; }
  int favored_next(int prev2, int prev1) const;  // symbol offsets in [0, num_symbols)
  double favored_prob() const { return 0.55; }
  double runner_prob() const { return 0.20; }

 private:
  TaskSpec spec_;
  std::vector<int> favored_;  // [S*S] markov2 top-1 next symbol
  std::vector<int> runner_;   // [S*S] second choice, != favored
};

// Masked top-1 accuracy (alias of masked_accuracy with the task-module name).
double task_metric(const Array& logits, const Batch& batch);

// Binary dump: one JSON header line {V, L, generator, seed, sequences}
// followed by little-endian uint16 tokens, sequence-major.
void dump_tokens(const std::string& path, const Task& task, int sequences, Rng& rng);
std::vector<std::vector<int>> load_token_dump(const std::string& path);

}  // namespace magic
