#include "magic/mixing.hpp"

#include <cmath>

#include "magic/error.hpp"

namespace magic {

namespace {

constexpr int64_t kMaxExactStates = 100000;

void fill_bounds(MixingReport& r) {
  double N = r.layers;
  for (int step : r.t) {
    r.coupling_bound.push_back(N * std::exp(-step / N));
    r.decay_envelope.push_back(std::exp(-step / N - std::log(N)));
  }
}

double tv_against_uniform(const std::vector<double>& p, double uniform_mass) {
  double s = 0.0;
  for (double v : p) s += std::fabs(v - uniform_mass);
  return 0.5 * s;
}

}  // namespace

int mixing_steps_for(double epsilon, int num_layers) {
  MAGIC_CHECK(epsilon > 0.0 && epsilon <= 1.0, "epsilon must be in (0,1], got ", epsilon);
  MAGIC_CHECK(num_layers > 0, "num_layers must be positive");
  double N = num_layers;
  return static_cast<int>(std::ceil(N * std::log(N) + N * std::log(1.0 / epsilon)));
}

MixingReport exact_mixing_curve(int num_layers, int num_ops, bool lazy, int t_max,
                                int64_t start_state) {
  MAGIC_CHECK(num_layers >= 1 && num_ops >= 2, "need N >= 1 layers and C >= 2 ops");
  MAGIC_CHECK(t_max >= 0, "t_max must be >= 0");
  int64_t states = 1;
  for (int l = 0; l < num_layers; ++l) {
    states *= num_ops;
    MAGIC_CHECK(states <= kMaxExactStates, "state space C^N exceeds ", kMaxExactStates,
                "; use lumped_mixing_curve (exact via agreement-count lumping)");
  }
  MAGIC_CHECK(start_state >= 0 && start_state < states, "start_state out of range");

  MixingReport r;
  r.layers = num_layers;
  r.ops = num_ops;
  r.lazy = lazy;
  r.non_ergodic = (num_ops == 2 && !lazy);

  const double uniform_mass = 1.0 / static_cast<double>(states);
  std::vector<double> p(static_cast<size_t>(states), 0.0), q(static_cast<size_t>(states));
  p[static_cast<size_t>(start_state)] = 1.0;

  // per-layer digit strides in the mixed-radix state index
  std::vector<int64_t> stride(static_cast<size_t>(num_layers));
  int64_t s = 1;
  for (int l = num_layers - 1; l >= 0; --l) {
    stride[static_cast<size_t>(l)] = s;
    s *= num_ops;
  }

  r.t.push_back(0);
  r.tv.push_back(tv_against_uniform(p, uniform_mass));

  const double layer_w = 1.0 / num_layers;
  const double op_w = lazy ? 1.0 / num_ops : 1.0 / (num_ops - 1);
  for (int step = 1; step <= t_max; ++step) {
    std::fill(q.begin(), q.end(), 0.0);
    for (int64_t st = 0; st < states; ++st) {
      double mass = p[static_cast<size_t>(st)];
      if (mass == 0.0) continue;
      for (int l = 0; l < num_layers; ++l) {
        int64_t digit = (st / stride[static_cast<size_t>(l)]) % num_ops;
        int64_t base = st - digit * stride[static_cast<size_t>(l)];
        for (int o = 0; o < num_ops; ++o) {
          if (!lazy && o == digit) continue;
          q[static_cast<size_t>(base + o * stride[static_cast<size_t>(l)])] +=
              mass * layer_w * op_w;
        }
      }
    }
    p.swap(q);
    r.t.push_back(step);
    r.tv.push_back(tv_against_uniform(p, uniform_mass));
  }
  fill_bounds(r);
  return r;
}

MixingReport lumped_mixing_curve(int num_layers, int num_ops, bool lazy, int t_max) {
  MAGIC_CHECK(num_layers >= 1 && num_ops >= 2, "need N >= 1 layers and C >= 2 ops");
  MAGIC_CHECK(t_max >= 0, "t_max must be >= 0");
  const int N = num_layers, C = num_ops;

  MixingReport r;
  r.layers = N;
  r.ops = C;
  r.lazy = lazy;
  r.non_ergodic = (C == 2 && !lazy);

  // q[a] = probability of agreeing with the start state on exactly a layers;
  // orbit sizes count(a) = C(N,a) * (C-1)^(N-a)
  std::vector<double> q(static_cast<size_t>(N) + 1, 0.0), nq(q);
  q[static_cast<size_t>(N)] = 1.0;

  std::vector<double> orbit(static_cast<size_t>(N) + 1);
  double total_states = std::pow(static_cast<double>(C), N);
  for (int a = 0; a <= N; ++a) {
    double binom = 1.0;
    for (int i = 0; i < a; ++i) binom = binom * (N - i) / (i + 1);
    orbit[static_cast<size_t>(a)] = binom * std::pow(static_cast<double>(C - 1), N - a);
  }

  auto record = [&](int step) {
    double s = 0.0;
    for (int a = 0; a <= N; ++a)
      s += std::fabs(q[static_cast<size_t>(a)] -
                     orbit[static_cast<size_t>(a)] / total_states);
    r.t.push_back(step);
    r.tv.push_back(0.5 * s);
  };
  record(0);

  for (int step = 1; step <= t_max; ++step) {
    std::fill(nq.begin(), nq.end(), 0.0);
    for (int a = 0; a <= N; ++a) {
      double mass = q[static_cast<size_t>(a)];
      if (mass == 0.0) continue;
      double p_agree_layer = static_cast<double>(a) / N;
      double p_dis_layer = static_cast<double>(N - a) / N;
      if (lazy) {
        // resample uniformly over C at the chosen layer
        double to_dis = p_agree_layer * (C - 1.0) / C;            // a -> a-1
        double to_agree = p_dis_layer * (1.0 / C);                // a -> a+1
        double stay = 1.0 - to_dis - to_agree;
        if (a > 0) nq[static_cast<size_t>(a - 1)] += mass * to_dis;
        if (a < N) nq[static_cast<size_t>(a + 1)] += mass * to_agree;
        nq[static_cast<size_t>(a)] += mass * stay;
      } else {
        // replacement always differs from the incumbent
        double to_dis = p_agree_layer;                            // agreeing layer breaks
        double to_agree = p_dis_layer * (1.0 / (C - 1.0));        // disagreeing layer lands home
        double stay = p_dis_layer * (C - 2.0) / (C - 1.0);
        if (a > 0) nq[static_cast<size_t>(a - 1)] += mass * to_dis;
        if (a < N) nq[static_cast<size_t>(a + 1)] += mass * to_agree;
        nq[static_cast<size_t>(a)] += mass * stay;
      }
    }
    q.swap(nq);
    record(step);
  }
  fill_bounds(r);
  return r;
}

}  // namespace magic
