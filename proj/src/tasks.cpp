#include "magic/tasks.hpp"

#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "magic/error.hpp"

namespace magic {

const char* task_kind_name(TaskKind k) {
  switch (k) {
    case TaskKind::markov2: return "markov2";
    case TaskKind::copy_shift: return "copy_shift";
  }
  return "?";
}

TaskKind parse_task_kind(const std::string& s) {
  if (s == "markov2") return TaskKind::markov2;
  if (s == "copy_shift") return TaskKind::copy_shift;
  throw ConfigError(detail::cat("unknown task '", s, "' (expected markov2|copy_shift)"));
}

void TaskSpec::validate() const {
  MAGIC_CHECK(vocab >= 4, "task vocab must be >= 4 (two ids are reserved), got ", vocab);
  MAGIC_CHECK(seq_len >= 3, "task seq_len must be >= 3, got ", seq_len);
  MAGIC_CHECK(mask_rate > 0.0 && mask_rate < 1.0, "mask_rate must be in (0,1), got ", mask_rate);
  if (kind == TaskKind::copy_shift)
    MAGIC_CHECK(shift > 0 && shift < seq_len, "copy_shift offset must be in (0, seq_len)");
}

Task::Task(TaskSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  if (spec_.kind == TaskKind::markov2) {
    const int S = num_symbols();
    favored_.resize(static_cast<size_t>(S) * S);
    runner_.resize(static_cast<size_t>(S) * S);
    Rng rng(derive_seed(spec_.structure_seed, 0xa5));
    for (int i = 0; i < S * S; ++i) {
      int f = static_cast<int>(rng.below(S));
      int r = static_cast<int>(rng.below(S - 1));
      if (r >= f) ++r;  // runner distinct from favored
      favored_[static_cast<size_t>(i)] = f;
      runner_[static_cast<size_t>(i)] = r;
    }
  }
}

int Task::favored_next(int prev2, int prev1) const {
  MAGIC_CHECK(spec_.kind == TaskKind::markov2, "favored_next is a markov2 accessor");
  return favored_[static_cast<size_t>(prev2) * num_symbols() + prev1];
}

std::vector<int> Task::sample_sequence(Rng& rng) const {
  const int S = num_symbols(), L = spec_.seq_len;
  std::vector<int> seq(static_cast<size_t>(L));
  switch (spec_.kind) {
    case TaskKind::markov2: {
      // first two symbols uniform, then a peaked order-2 chain
      seq[0] = static_cast<int>(rng.below(S));
      seq[1] = static_cast<int>(rng.below(S));
      for (int t = 2; t < L; ++t) {
        size_t ctx = static_cast<size_t>(seq[static_cast<size_t>(t - 2)]) * S +
                     seq[static_cast<size_t>(t - 1)];
        double u = rng.uniform();
        int next;
        if (u < favored_prob()) {
          next = favored_[ctx];
        } else if (u < favored_prob() + runner_prob()) {
          next = runner_[ctx];
        } else {
          // uniform over the remaining S-2 symbols
          int k = static_cast<int>(rng.below(S - 2));
          int lo = std::min(favored_[ctx], runner_[ctx]);
          int hi = std::max(favored_[ctx], runner_[ctx]);
          if (k >= lo) ++k;
          if (k >= hi) ++k;
          next = k;
        }
        seq[static_cast<size_t>(t)] = next;
      }
      break;
    }
    case TaskKind::copy_shift: {
      for (int t = 0; t < spec_.shift; ++t) seq[static_cast<size_t>(t)] = static_cast<int>(rng.below(S));
      for (int t = spec_.shift; t < L; ++t)
        seq[static_cast<size_t>(t)] = seq[static_cast<size_t>(t - spec_.shift)];
      break;
    }
  }
  for (auto& v : seq) v += 2;  // shift into the non-reserved id range
  return seq;
}

Batch Task::gen_batch(int batch_size, Rng& rng) const {
  MAGIC_CHECK(batch_size > 0, "gen_batch: batch_size must be positive");
  const int L = spec_.seq_len;
  Batch b;
  b.batch = batch_size;
  b.seq = L;
  b.tokens.resize(static_cast<size_t>(batch_size) * L);
  b.targets.assign(static_cast<size_t>(batch_size) * L, -1);
  b.weights.assign(static_cast<size_t>(batch_size) * L, 0.0);
  for (int i = 0; i < batch_size; ++i) {
    std::vector<int> clean = sample_sequence(rng);
    int64_t off = static_cast<int64_t>(i) * L;
    int masked = 0;
    for (int t = 0; t < L; ++t) {
      bool m = rng.uniform() < spec_.mask_rate;
      b.tokens[static_cast<size_t>(off + t)] = m ? kMaskId : clean[static_cast<size_t>(t)];
      if (m) {
        b.targets[static_cast<size_t>(off + t)] = clean[static_cast<size_t>(t)];
        b.weights[static_cast<size_t>(off + t)] = 1.0;
        ++masked;
      }
    }
    if (masked == 0) {  // force at least one masked position per sequence
      int t = static_cast<int>(rng.below(L));
      b.tokens[static_cast<size_t>(off + t)] = kMaskId;
      b.targets[static_cast<size_t>(off + t)] = clean[static_cast<size_t>(t)];
      b.weights[static_cast<size_t>(off + t)] = 1.0;
    }
  }
  return b;
}

double task_metric(const Array& logits, const Batch& batch) {
  return masked_accuracy(logits, batch);
}

void dump_tokens(const std::string& path, const Task& task, int sequences, Rng& rng) {
  MAGIC_CHECK(sequences > 0, "dump_tokens: need at least one sequence");
  std::ofstream f(path, std::ios::binary);
  MAGIC_CHECK(f.good(), "dump_tokens: cannot open '", path, "'");
  nlohmann::ordered_json header;
  header["V"] = task.spec().vocab;
  header["L"] = task.spec().seq_len;
  header["generator"] = task_kind_name(task.spec().kind);
  header["seed"] = task.spec().structure_seed;
  header["sequences"] = sequences;
  f << header.dump() << '\n';
  for (int i = 0; i < sequences; ++i) {
    std::vector<int> seq = task.sample_sequence(rng);
    for (int v : seq) {
      uint16_t u = static_cast<uint16_t>(v);
      unsigned char le[2] = {static_cast<unsigned char>(u & 0xff),
                             static_cast<unsigned char>(u >> 8)};
      f.write(reinterpret_cast<const char*>(le), 2);
    }
  }
  MAGIC_CHECK(f.good(), "dump_tokens: write failed for '", path, "'");
}

std::vector<std::vector<int>> load_token_dump(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  MAGIC_CHECK(f.good(), "load_token_dump: cannot open '", path, "'");
  std::string line;
  MAGIC_CHECK(static_cast<bool>(std::getline(f, line)), "load_token_dump: missing header");
  nlohmann::json header = nlohmann::json::parse(line);
  int L = header.at("L").get<int>();
  int n = header.at("sequences").get<int>();
  std::vector<std::vector<int>> out(static_cast<size_t>(n));
  for (auto& seq : out) {
    seq.resize(static_cast<size_t>(L));
    for (auto& v : seq) {
      unsigned char le[2];
      f.read(reinterpret_cast<char*>(le), 2);
      MAGIC_CHECK(f.good(), "load_token_dump: truncated payload in '", path, "'");
      v = le[0] | (le[1] << 8);
    }
  }
  return out;
}

}  // namespace magic
