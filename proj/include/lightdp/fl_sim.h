//
// Copyright 2026 The LightDP Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

// Federated training simulator: broadcast, local SGD, clipping, masking,
// straggler dropout and FedAvg aggregation on a SyntheticTask.

#ifndef LIGHTDP_FL_SIM_H_
#define LIGHTDP_FL_SIM_H_

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_cat.h"
#include "lightdp/masking.h"
#include "lightdp/noise.h"
#include "lightdp/planner.h"
#include "lightdp/status_macros.h"
#include "lightdp/task.h"

namespace lightdp {

struct TrainingConfig {
  int rounds = 100;  // T
  int epochs = 1;    // E
  double learning_rate = 0.05;
  int batch_size = 32;
  // Each client's parameter change is clipped to this L2 norm (Delta / 2).
  double clip_bound = 0.5;
  NoisePlan plan;  // per-round standard deviations
  ThreatModel threat;
  uint64_t seed = 1;
  bool record_masked = false;
  double divergence_factor = 1e6;

  absl::Status Validate() const {
    if (rounds < 1 || epochs < 1 || batch_size < 1) {
      return absl::InvalidArgumentError(
          "TrainingConfig: rounds, epochs and batch_size must be >= 1");
    }
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      return absl::InvalidArgumentError(
          "TrainingConfig: learning_rate must be finite and >= 0");
    }
    if (!(clip_bound > 0.0)) {
      return absl::InvalidArgumentError("TrainingConfig: clip_bound must be > 0");
    }
    LIGHTDP_RETURN_IF_ERROR(threat.Validate());
    return plan.Validate();
  }
};

// Minibatch order of client i in round t.
inline StreamEngine MinibatchEngine(const MasterSeed& master, int client,
                                    uint64_t round) {
  return StreamEngine(DeriveAuxiliarySeed(master, "minibatch", client), round);
}

// E epochs of minibatch SGD from `global`. Each epoch visits a fresh
// permutation of the client's rows in consecutive batches.
inline absl::StatusOr<ClientUpdate> LocalSgd(const SyntheticTask& task,
                                             std::span<const double> global,
                                             int client, int epochs,
                                             double learning_rate,
                                             int batch_size,
                                             StreamEngine& rng) {
  if (client < 0 || client >= task.num_clients()) {
    return absl::InvalidArgumentError(
        absl::StrCat("LocalSgd: unknown client ", client));
  }
  if (static_cast<int>(global.size()) != task.dim()) {
    return absl::InvalidArgumentError("LocalSgd: dimension mismatch");
  }
  const int m = task.samples_per_client();
  if (batch_size < 1 || batch_size > m) {
    return absl::InvalidArgumentError(absl::StrCat(
        "LocalSgd: batch size ", batch_size, " outside [1, ", m, "]"));
  }
  Eigen::VectorXd w =
      Eigen::Map<const Eigen::VectorXd>(global.data(), task.dim());
  std::vector<int> order(m);
  std::vector<int> batch;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    for (int k = m - 1; k > 0; --k) {
      std::swap(order[k], order[rng.UniformIndex(k + 1)]);
    }
    for (int start = 0, step = 0; start < m; start += batch_size, ++step) {
      batch.assign(order.begin() + start,
                   order.begin() + std::min(start + batch_size, m));
      std::sort(batch.begin(), batch.end());
      const Eigen::VectorXd g = task.BatchGradient(client, w, batch);
      if (!g.allFinite()) {
        return absl::AbortedError(absl::StrCat(
            "LocalSgd: non-finite gradient at client ", client, ", epoch ",
            epoch, ", step ", step, " (||w|| = ", w.norm(), ")"));
      }
      w -= learning_rate * g;
    }
  }
  return ClientUpdate{client, std::vector<double>(w.data(), w.data() + w.size())};
}

// Scales update - reference to L2 norm at most `bound`.
inline absl::StatusOr<ClientUpdate> ClipDelta(const ClientUpdate& update,
                                              std::span<const double> reference,
                                              double bound) {
  if (!(bound > 0.0)) {
    return absl::InvalidArgumentError("ClipDelta: bound must be > 0");
  }
  if (update.params.size() != reference.size()) {
    return absl::InvalidArgumentError("ClipDelta: dimension mismatch");
  }
  double norm2 = 0.0;
  for (size_t k = 0; k < reference.size(); ++k) {
    const double delta = update.params[k] - reference[k];
    norm2 += delta * delta;
  }
  const double norm = std::sqrt(norm2);
  if (norm <= bound) return update;
  const double scale = bound / norm;
  ClientUpdate out{update.client, update.params};
  for (size_t k = 0; k < reference.size(); ++k) {
    out.params[k] = reference[k] + scale * (update.params[k] - reference[k]);
  }
  return out;
}

// Straggler set of round t: S ~ g, then a uniform size-S subset.
inline std::vector<int> SampleStragglers(const MasterSeed& master,
                                         const ThreatModel& threat,
                                         uint64_t round) {
  StreamEngine engine(DeriveAuxiliarySeed(master, "stragglers"), round);
  const int count = threat.stragglers.Sample(engine);
  std::vector<int> pool(threat.num_clients);
  std::iota(pool.begin(), pool.end(), 0);
  for (int k = 0; k < count; ++k) {
    const int pick = k + static_cast<int>(engine.UniformIndex(
                             static_cast<uint64_t>(threat.num_clients - k)));
    std::swap(pool[k], pool[pick]);
  }
  std::vector<int> out(pool.begin(), pool.begin() + count);
  std::sort(out.begin(), out.end());
  return out;
}

class TrainingState {
 public:
  TrainingState(const SyntheticTask& task, const TrainingConfig& config)
      : task_(&task),
        master_(MasterSeed::FromU64(config.seed)),
        seeds_(config.threat.num_clients, master_),
        global_(task.dim(), 0.0) {}

  const SyntheticTask& task() const { return *task_; }
  const MasterSeed& master() const { return master_; }
  const SeedBook& seeds() const { return seeds_; }
  const std::vector<double>& global() const { return global_; }
  void set_global(std::vector<double> w) { global_ = std::move(w); }

 private:
  const SyntheticTask* task_;
  MasterSeed master_;
  SeedBook seeds_;
  std::vector<double> global_;
};

// One round: broadcast, local SGD, clip, mask, drop stragglers, aggregate.
// Rounds are numbered from 1.
inline absl::StatusOr<RoundTrace> RunRound(TrainingState& state,
                                           const TrainingConfig& config,
                                           uint64_t round) {
  const SyntheticTask& task = state.task();
  const int n = config.threat.num_clients;
  if (task.num_clients() != n) {
    return absl::InvalidArgumentError(absl::StrCat(
        "RunRound: task has ", task.num_clients(), " clients, threat model ",
        n));
  }
  RoundTrace trace;
  trace.round = round;
  trace.stragglers = SampleStragglers(state.master(), config.threat, round);
  const std::set<int> dropped(trace.stragglers.begin(), trace.stragglers.end());
  std::set<int> survivors;
  for (int i = 0; i < n; ++i) {
    if (!dropped.contains(i)) survivors.insert(i);
  }

  const std::vector<double>& global = state.global();
  const size_t dim = global.size();
  std::vector<MaskedUpdate> masked;
  masked.reserve(survivors.size());
  std::vector<double> clean_mean(dim, 0.0);
  for (int i : survivors) {
    StreamEngine rng = MinibatchEngine(state.master(), i, round);
    LIGHTDP_ASSIGN_OR_RETURN(
        ClientUpdate local,
        LocalSgd(task, global, i, config.epochs, config.learning_rate,
                 config.batch_size, rng));
    LIGHTDP_ASSIGN_OR_RETURN(local,
                             ClipDelta(local, global, config.clip_bound));
    for (size_t k = 0; k < dim; ++k) clean_mean[k] += local.params[k];
    LIGHTDP_ASSIGN_OR_RETURN(
        MaskedUpdate m, MaskUpdate(local, round, config.plan, state.seeds()));
    masked.push_back(std::move(m));
  }
  LIGHTDP_ASSIGN_OR_RETURN(trace.aggregate, Aggregate(masked, survivors));
  trace.global_noise.resize(dim);
  for (size_t k = 0; k < dim; ++k) {
    clean_mean[k] /= static_cast<double>(survivors.size());
    trace.global_noise[k] = trace.aggregate[k] - clean_mean[k];
  }
  if (config.record_masked) trace.masked = std::move(masked);
  state.set_global(trace.aggregate);
  return trace;
}

struct TrainingTrace {
  std::vector<RoundTrace> rounds;
  std::vector<double> loss_gap;        // [0] at the initial point, then per round
  std::vector<int> straggler_counts;   // per round
  std::vector<double> noise_norm;      // ||n_D|| per round

  double initial_gap() const { return loss_gap.front(); }
  double final_gap() const { return loss_gap.back(); }

  // Trajectory w^(0..T) for constant estimation.
  std::vector<Eigen::VectorXd> Trajectory(int dim) const {
    std::vector<Eigen::VectorXd> out;
    out.push_back(Eigen::VectorXd::Zero(dim));
    for (const RoundTrace& r : rounds) {
      out.push_back(Eigen::Map<const Eigen::VectorXd>(r.aggregate.data(),
                                                      r.aggregate.size()));
    }
    return out;
  }

  std::string ToCsv() const {
    std::ostringstream out;
    out.precision(17);
    out << "round,stragglers,loss_gap,noise_norm\n";
    out << 0 << "," << 0 << "," << loss_gap[0] << "," << 0 << "\n";
    for (size_t t = 0; t < rounds.size(); ++t) {
      out << rounds[t].round << "," << straggler_counts[t] << ","
          << loss_gap[t + 1] << "," << noise_norm[t] << "\n";
    }
    return out.str();
  }
};

// T rounds from w^(0) = 0. Aborts when the loss gap is non-finite or exceeds
// divergence_factor times the initial gap.
inline absl::StatusOr<TrainingTrace> RunTraining(const TrainingConfig& config,
                                                 const SyntheticTask& task) {
  LIGHTDP_RETURN_IF_ERROR(config.Validate());
  TrainingState state(task, config);
  TrainingTrace trace;
  const double initial =
      task.LossGap(Eigen::Map<const Eigen::VectorXd>(state.global().data(),
                                                     task.dim()));
  trace.loss_gap.push_back(initial);
  for (int t = 1; t <= config.rounds; ++t) {
    LIGHTDP_ASSIGN_OR_RETURN(RoundTrace round, RunRound(state, config, t));
    const double gap = task.LossGap(Eigen::Map<const Eigen::VectorXd>(
        round.aggregate.data(), task.dim()));
    if (!std::isfinite(gap) || gap > config.divergence_factor * initial) {
      return absl::AbortedError(absl::StrCat(
          "divergence at round ", t, ": loss gap ", gap, " exceeds ",
          config.divergence_factor, " x initial gap ", initial));
    }
    double norm2 = 0.0;
    for (double x : round.global_noise) norm2 += x * x;
    trace.loss_gap.push_back(gap);
    trace.straggler_counts.push_back(static_cast<int>(round.stragglers.size()));
    trace.noise_norm.push_back(std::sqrt(norm2));
    trace.rounds.push_back(std::move(round));
  }
  return trace;
}

// E||z|| / sigma for z ~ N(0, sigma^2 I_d).
inline double ChiMean(int dim) {
  return std::sqrt(2.0) *
         std::exp(std::lgamma(0.5 * (dim + 1)) - std::lgamma(0.5 * dim));
}

struct ConvergenceBound {
  double lambda0 = 0.0;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double contraction = 0.0;  // 1 + 2 l lambda2
  double log_bound = 0.0;    // natural log; the bound itself may overflow
  double bound = 0.0;
  double max_noise_base = 0.0;
  // No decay of the initial gap: contraction >= 1.
  bool vacuous = false;
  // Some per-round noise base exceeds 1, so its power t grows with t.
  bool noise_base_exceeds_one = false;

  bool Covers(double gap) const {
    return gap <= 0.0 || std::log(gap) <= log_bound;
  }
};

// bound = c^T gap0 + sum_t (lambda1 beta E||n_t|| + lambda0 E||n_t||^2)^t
//         c^(T-t), with c = 1 + 2 l lambda2 and n_t the aggregate noise of
// round t given its straggler count.
inline absl::StatusOr<ConvergenceBound> EvaluateConvergenceBound(
    const TaskConstants& constants, const NoisePlan& plan, int num_clients,
    std::span<const int> straggler_counts, int dim, double initial_gap) {
  for (double x : {constants.rho, constants.l, constants.beta,
                   constants.gradient_ratio, initial_gap}) {
    if (!std::isfinite(x) || x < 0.0) {
      return absl::InvalidArgumentError(
          "EvaluateConvergenceBound: constants must be finite and >= 0");
    }
  }
  if (dim < 1) {
    return absl::InvalidArgumentError("EvaluateConvergenceBound: dim < 1");
  }
  const double rho = constants.rho;
  const double b = constants.gradient_ratio;
  ConvergenceBound out;
  out.lambda0 = rho / 2.0;
  out.lambda1 = 1.0 + rho * b;
  out.lambda2 = -1.0 + rho * b + rho * b * b / 2.0;
  out.contraction = 1.0 + 2.0 * constants.l * out.lambda2;
  out.vacuous = out.contraction >= 1.0;
  const int rounds = static_cast<int>(straggler_counts.size());
  const double c = out.contraction;

  std::vector<double> bases;
  for (int s : straggler_counts) {
    LIGHTDP_ASSIGN_OR_RETURN(const double var,
                             GlobalNoiseVariance(num_clients, s, plan));
    const double sd = std::sqrt(var);
    const double base = out.lambda1 * constants.beta * sd * ChiMean(dim) +
                        out.lambda0 * dim * var;
    bases.push_back(base);
    out.max_noise_base = std::max(out.max_noise_base, base);
  }
  out.noise_base_exceeds_one = out.max_noise_base > 1.0;

  if (c <= 0.0) {
    double total = std::pow(c, rounds) * initial_gap;
    for (int t = 1; t <= rounds; ++t) {
      total += std::pow(bases[t - 1], t) * std::pow(c, rounds - t);
    }
    out.bound = total;
    out.log_bound = total > 0.0 ? std::log(total)
                                : -std::numeric_limits<double>::infinity();
    return out;
  }
  std::vector<double> logs;
  if (initial_gap > 0.0) logs.push_back(rounds * std::log(c) + std::log(initial_gap));
  for (int t = 1; t <= rounds; ++t) {
    if (bases[t - 1] <= 0.0) continue;
    logs.push_back(t * std::log(bases[t - 1]) + (rounds - t) * std::log(c));
  }
  if (logs.empty()) {
    out.log_bound = -std::numeric_limits<double>::infinity();
    out.bound = 0.0;
    return out;
  }
  const double top = *std::max_element(logs.begin(), logs.end());
  double acc = 0.0;
  for (double x : logs) acc += std::exp(x - top);
  out.log_bound = top + std::log(acc);
  out.bound = std::exp(out.log_bound);
  return out;
}

}  // namespace lightdp

#endif  // LIGHTDP_FL_SIM_H_
