#include "magic/supernet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "magic/error.hpp"
#include "magic/rng.hpp"

namespace magic {

namespace {

constexpr double kInitStd = 0.02;

// Distinct seeding streams for the non-slot parameter groups.
enum : uint64_t { kStreamEmbedTok = 1, kStreamEmbedPos = 2, kStreamHead = 3, kStreamSlots = 16 };

uint64_t slot_seed(uint64_t init_seed, int layer, int op) {
  return derive_seed(derive_seed(init_seed, kStreamSlots + static_cast<uint64_t>(layer)),
                     static_cast<uint64_t>(op));
}

Array init_weight(Shape shape, uint64_t seed) {
  Array a(std::move(shape));
  Rng rng(seed);
  for (auto& v : a.data) v = rng.truncated_normal(kInitStd);
  return a;
}

}  // namespace

std::string path_str(const Path& p) {
  std::string s;
  for (size_t i = 0; i < p.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(p[i]);
  }
  return s;
}

Path parse_path(const std::string& s) {
  Path p;
  size_t pos = 0;
  while (pos < s.size()) {
    size_t comma = s.find(',', pos);
    std::string tok = s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    try {
      size_t used = 0;
      int v = std::stoi(tok, &used);
      MAGIC_CHECK(used == tok.size(), "");
      p.push_back(v);
    } catch (...) {
      throw Error(detail::cat("bad path component '", tok, "' in '", s, "'"));
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  MAGIC_CHECK(!p.empty(), "empty path string");
  return p;
}

std::string layer_prefix(int layer) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "l%02d.", layer);
  return buf;
}

std::string slot_prefix(int layer, int op) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "l%02d.o%d.", layer, op);
  return buf;
}

SupernetConfig SupernetConfig::desk_default(uint64_t init_seed) {
  SupernetConfig cfg;
  cfg.num_layers = 6;
  cfg.d_model = 64;
  cfg.vocab = 64;
  cfg.seq_len = 32;
  cfg.init_seed = init_seed;
  cfg.candidates = {OperatorSpec::mha(4, 16), OperatorSpec::ffn(64), OperatorSpec::conv(3),
                    OperatorSpec::conv(5)};
  return cfg;
}

Supernet::Supernet(SupernetConfig cfg) : cfg_(std::move(cfg)) {
  MAGIC_CHECK(cfg_.num_layers > 0 && cfg_.d_model > 0 && cfg_.vocab > 0 && cfg_.seq_len > 0,
              "invalid supernet dimensions");
  MAGIC_CHECK(!cfg_.candidates.empty(), "supernet needs at least one candidate operator");
  const int d = cfg_.d_model;
  params_.emplace("embed.tok",
                  init_weight({cfg_.vocab, d}, derive_seed(cfg_.init_seed, kStreamEmbedTok)));
  params_.emplace("embed.pos",
                  init_weight({cfg_.seq_len, d}, derive_seed(cfg_.init_seed, kStreamEmbedPos)));
  params_.emplace("head.w", init_weight({d, cfg_.vocab}, derive_seed(cfg_.init_seed, kStreamHead)));
  params_.emplace("head.b", Array({cfg_.vocab}));
  for (int l = 0; l < cfg_.num_layers; ++l) {
    params_.emplace(layer_prefix(l) + "ln.gain", Array::full({d}, 1.0));
    params_.emplace(layer_prefix(l) + "ln.bias", Array({d}));
    for (int c = 0; c < cfg_.num_ops(); ++c) {
      uint64_t seed = slot_seed(cfg_.init_seed, l, c);
      Rng rng(seed);
      for (auto& [rel, shape] : op_param_shapes(cfg_.candidates[static_cast<size_t>(c)], d)) {
        Array a(shape);
        if (shape.size() >= 2)
          for (auto& v : a.data) v = rng.truncated_normal(kInitStd);
        // rank-1 tensors are biases: zero-initialized
        params_.emplace(slot_prefix(l, c) + rel, std::move(a));
      }
    }
  }
}

Array& Supernet::param(const std::string& name) {
  auto it = params_.find(name);
  MAGIC_CHECK(it != params_.end(), "no supernet param '", name, "'");
  return it->second;
}

std::vector<std::string> Supernet::slot_param_names(int layer, int op) const {
  MAGIC_CHECK(layer >= 0 && layer < cfg_.num_layers, "layer ", layer, " out of range");
  MAGIC_CHECK(op >= 0 && op < cfg_.num_ops(), "op ", op, " out of range");
  std::vector<std::string> out;
  for (auto& [rel, shape] : op_param_shapes(cfg_.candidates[static_cast<size_t>(op)], cfg_.d_model))
    out.push_back(slot_prefix(layer, op) + rel);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> Supernet::path_param_names(const Path& path) const {
  validate_path(path);
  std::vector<std::string> out{"embed.pos", "embed.tok", "head.b", "head.w"};
  for (int l = 0; l < cfg_.num_layers; ++l) {
    out.push_back(layer_prefix(l) + "ln.bias");
    out.push_back(layer_prefix(l) + "ln.gain");
    auto slot = slot_param_names(l, path[static_cast<size_t>(l)]);
    out.insert(out.end(), slot.begin(), slot.end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void Supernet::validate_path(const Path& p) const {
  MAGIC_CHECK(static_cast<int>(p.size()) == cfg_.num_layers, "path length ", p.size(),
              " != num_layers ", cfg_.num_layers);
  for (int v : p)
    MAGIC_CHECK(v >= 0 && v < cfg_.num_ops(), "path op ", v, " out of range [0,", cfg_.num_ops(),
                ")");
}

int64_t Supernet::total_param_count() const {
  int64_t n = 0;
  for (auto& [name, a] : params_) n += a.size();
  return n;
}

ChildGraph build_child(const Supernet& net, const Path& path, const Batch& batch) {
  const SupernetConfig& cfg = net.config();
  net.validate_path(path);
  const int B = batch.batch, L = batch.seq, d = cfg.d_model;
  MAGIC_CHECK(B > 0 && L > 0, "empty batch");
  MAGIC_CHECK(L <= cfg.seq_len, "batch seq ", L, " exceeds supernet seq_len ", cfg.seq_len);
  MAGIC_CHECK(static_cast<int64_t>(batch.tokens.size()) == static_cast<int64_t>(B) * L,
              "batch tokens size mismatch");
  if (batch.has_targets()) {
    MAGIC_CHECK(batch.targets.size() == batch.tokens.size(), "batch targets size mismatch");
    MAGIC_CHECK(batch.weights.size() == batch.tokens.size(), "batch weights size mismatch");
  }

  ChildGraph out;
  Graph& g = out.g;
  for (const std::string& name : net.path_param_names(path))
    g.param(name, net.params().at(name));

  NodeId tok = g.embedding(g.param_node("embed.tok"), batch.tokens, B, L);
  NodeId pos = g.param_node("embed.pos");
  if (L != cfg.seq_len) {
    // use the first L positional rows
    Array sliced({L, d});
    const Array& full = net.params().at("embed.pos");
    std::copy_n(full.ptr(), static_cast<int64_t>(L) * d, sliced.ptr());
    pos = g.constant(std::move(sliced));
  }
  NodeId x = g.add(tok, pos);

  out.layer_outputs.reserve(static_cast<size_t>(cfg.num_layers));
  for (int l = 0; l < cfg.num_layers; ++l) {
    const OperatorSpec& spec = cfg.candidates[static_cast<size_t>(path[static_cast<size_t>(l)])];
    NodeId sub = apply_operator(g, spec, slot_prefix(l, path[static_cast<size_t>(l)]), x);
    x = g.layer_norm(g.add(x, sub), g.param_node(layer_prefix(l) + "ln.gain"),
                     g.param_node(layer_prefix(l) + "ln.bias"));
    out.layer_outputs.push_back(x);
  }
  out.logits = g.linear(x, g.param_node("head.w"), g.param_node("head.b"));
  if (batch.has_targets()) out.loss = g.cross_entropy(out.logits, batch.targets, batch.weights);
  return out;
}

double masked_accuracy(const Array& logits, const Batch& batch) {
  MAGIC_CHECK(batch.has_targets(), "masked_accuracy needs batch targets");
  MAGIC_CHECK(logits.rank() == 3, "masked_accuracy expects [B,L,V] logits");
  int V = logits.dim(2);
  int64_t rows = static_cast<int64_t>(logits.dim(0)) * logits.dim(1);
  MAGIC_CHECK(rows == static_cast<int64_t>(batch.targets.size()), "logit/target row mismatch");
  int64_t hit = 0, total = 0;
  for (int64_t r = 0; r < rows; ++r) {
    if (batch.weights[static_cast<size_t>(r)] <= 0.0) continue;
    const double* z = logits.ptr() + r * V;
    int best = 0;
    for (int j = 1; j < V; ++j)
      if (z[j] > z[best]) best = j;
    ++total;
    if (best == batch.targets[static_cast<size_t>(r)]) ++hit;
  }
  MAGIC_CHECK(total > 0, "masked_accuracy: no weighted positions");
  return static_cast<double>(hit) / static_cast<double>(total);
}

std::vector<double> flatten_named(const std::map<std::string, Array>& tensors,
                                  const std::vector<std::string>& names) {
  std::vector<double> out;
  for (const std::string& n : names) {
    auto it = tensors.find(n);
    MAGIC_CHECK(it != tensors.end(), "flatten_named: missing tensor '", n, "'");
    out.insert(out.end(), it->second.data.begin(), it->second.data.end());
  }
  return out;
}

}  // namespace magic
