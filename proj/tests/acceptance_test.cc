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

// Acceptance run: one PASS/FAIL line per criterion. Exits nonzero when a
// criterion fails that is not listed in --expect-fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "absl/strings/str_cat.h"
#include "lightdp/experiment.h"
#include "lightdp/fl_sim.h"
#include "lightdp/masking.h"
#include "lightdp/planner.h"
#include "lightdp/privacy_audit.h"
#include "oracles.h"

namespace lightdp {
namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

const MasterSeed kMaster = MasterSeed::FromU64(20260101);

// Random realization with at least two honest survivors.
struct Realization {
  int num_clients = 0;
  std::set<int> colluders;
  std::set<int> stragglers;
  NoisePlan plan;
  ClientPartition part;
};

Realization RandomRealization(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> sigma(0.2, 1.5);
  for (;;) {
    Realization r;
    r.num_clients = 3 + static_cast<int>(rng() % 6);
    const int c = static_cast<int>(rng() % (r.num_clients - 1));
    const int s = static_cast<int>(rng() % (r.num_clients - 1));
    while (static_cast<int>(r.colluders.size()) < c) {
      r.colluders.insert(static_cast<int>(rng() % r.num_clients));
    }
    while (static_cast<int>(r.stragglers.size()) < s) {
      r.stragglers.insert(static_cast<int>(rng() % r.num_clients));
    }
    r.plan.sigma_k = sigma(rng);
    r.plan.sigma_u = sigma(rng);
    r.part = *PartitionClients(r.num_clients, r.colluders, r.stragglers);
    if (r.part.honest_survivors.size() >= 2) return r;
  }
}

oracle::Matrix OracleCovariance(const Realization& r) {
  const double k = r.plan.sigma_k * r.plan.sigma_k;
  const double u = r.plan.sigma_u * r.plan.sigma_u;
  return oracle::Covariance(
      r.part.honest_survivors, r.part.honest_stragglers,
      [k](int, int) { return k; }, [u](int) { return u; });
}

// Unrevealed disturbance of every I1 client: the zero-update mask minus the
// pairwise terms shared with colluders.
std::vector<std::vector<double>> Disturbances(const Realization& r,
                                              uint64_t round, size_t dim) {
  std::vector<std::vector<double>> out;
  for (int i : r.part.honest_survivors) {
    auto m = MaskUpdate({i, std::vector<double>(dim, 0.0)}, round, r.plan,
                        r.num_clients, kMaster);
    std::vector<double> x = m->params;
    for (int c : r.colluders) {
      const PairKey pair = *PairKey::Create(i, c);
      auto noise = PairwiseNoise({DerivePairSeed(kMaster, pair), round, dim},
                                 r.plan.sigma_k);
      const double sign = i == pair.lo() ? 1.0 : -1.0;
      for (size_t k = 0; k < dim; ++k) x[k] -= sign * (*noise)[k];
    }
    out.push_back(std::move(x));
  }
  return out;
}

Outcome Criterion1() {
  std::mt19937_64 rng(1);
  constexpr int kClients = 50;
  constexpr size_t kDim = 32;
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int i = static_cast<int>(rng() % kClients);
    int j = static_cast<int>(rng() % (kClients - 1));
    if (j >= i) ++j;
    const uint64_t t = 1 + rng() % 1000;
    NoisePlan plan;
    plan.sigma_k = 0.0;
    plan.pair_sigma[*PairKey::Create(i, j)] = 1.7;
    auto mi = MaskUpdate({i, std::vector<double>(kDim, 0.0)}, t, plan,
                         kClients, kMaster);
    auto mj = MaskUpdate({j, std::vector<double>(kDim, 0.0)}, t, plan,
                         kClients, kMaster);
    for (size_t k = 0; k < kDim; ++k) {
      if (mi->params[k] != -mj->params[k] || mi->params[k] == 0.0) ++mismatches;
    }
  }
  // Cancellation with every client surviving.
  NoisePlan plan;
  plan.sigma_k = 2.0;
  plan.sigma_u = 0.3;
  constexpr size_t kWide = 256;
  double worst = 0.0;
  for (uint64_t t = 1; t <= 5; ++t) {
    std::vector<MaskedUpdate> masked;
    std::vector<double> expect(kWide, 0.0);
    std::set<int> all;
    for (int i = 0; i < kClients; ++i) {
      ClientUpdate u{i, std::vector<double>(kWide)};
      FillStandardNormal(DeriveAuxiliarySeed(kMaster, "c1", i), t, 0,
                         u.params);
      auto n = IndividualNoise(DeriveClientSeed(kMaster, i), t, kWide,
                               plan.sigma_u);
      for (size_t k = 0; k < kWide; ++k) {
        expect[k] += (u.params[k] + (*n)[k]) / kClients;
      }
      masked.push_back(*MaskUpdate(u, t, plan, kClients, kMaster));
      all.insert(i);
    }
    auto agg = Aggregate(masked, all);
    for (size_t k = 0; k < kWide; ++k) {
      worst = std::max(worst, std::abs((*agg)[k] - expect[k]));
    }
  }
  const double limit = 1e-9 * plan.sigma_k;
  return {mismatches == 0 && worst <= limit,
          absl::StrCat("1000 pairs, ", mismatches,
                       " non-identical coordinates; max residual ", worst,
                       " (limit ", limit, ")")};
}

Outcome Criterion2() {
  std::mt19937_64 rng(2);
  constexpr size_t kDim = 20000;
  constexpr int kRounds = 10;
  const double n = static_cast<double>(kDim) * kRounds;
  double worst = 0.0;
  int entries = 0, outside = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const Realization r = RandomRealization(rng);
    const oracle::Matrix c = OracleCovariance(r);
    const size_t n1 = c.size();
    std::vector<std::vector<double>> sum(n1, std::vector<double>(n1, 0.0));
    for (int t = 1; t <= kRounds; ++t) {
      const auto x = Disturbances(r, t, kDim);
      for (size_t a = 0; a < n1; ++a) {
        for (size_t b = a; b < n1; ++b) {
          double acc = 0.0;
          for (size_t k = 0; k < kDim; ++k) acc += x[a][k] * x[b][k];
          sum[a][b] += acc;
        }
      }
    }
    for (size_t a = 0; a < n1; ++a) {
      for (size_t b = a; b < n1; ++b) {
        const double se = std::sqrt((c[a][a] * c[b][b] + c[a][b] * c[a][b]) / n);
        const double z = std::abs(sum[a][b] / n - c[a][b]) / se;
        worst = std::max(worst, z);
        ++entries;
        if (z > 3.0) ++outside;
      }
    }
  }
  return {outside == 0,
          absl::StrCat(entries, " entries over 10 realizations at ", n,
                       " samples; worst ", worst, " SE; ", outside,
                       " beyond 3 SE")};
}

Outcome Criterion3() {
  constexpr size_t kSamples = 1000000;
  std::mt19937_64 rng(3);
  std::vector<Realization> cases;
  Realization base;
  base.num_clients = 3;
  base.stragglers = {2};
  base.plan.sigma_k = 1.0;
  base.plan.sigma_u = 1.0;
  base.part = *PartitionClients(3, {}, {2});
  cases.push_back(base);
  for (int k = 0; k < 5; ++k) cases.push_back(RandomRealization(rng));
  bool mean_ok = true, var_ok = true;
  std::ostringstream detail;
  detail.precision(4);
  for (size_t idx = 0; idx < cases.size(); ++idx) {
    const Realization& r = cases[idx];
    const oracle::Matrix c = OracleCovariance(r);
    const oracle::Matrix inv = oracle::Invert(c);
    const auto [spread, inv_ii] = oracle::LossVariances(c, 0);
    const auto x = Disturbances(r, 1, kSamples);
    double s1 = 0.0, s2 = 0.0;
    for (size_t k = 0; k < kSamples; ++k) {
      double l = 0.5 * inv_ii;
      for (size_t j = 0; j < c.size(); ++j) l += inv[0][j] * x[j][k];
      s1 += l;
      s2 += l * l;
    }
    const double mean = s1 / kSamples;
    const double var = s2 / kSamples - mean * mean;
    const double mean_err = std::abs(mean / (0.5 * inv_ii) - 1.0);
    const double var_err = std::abs(var / spread - 1.0);
    mean_ok = mean_ok && mean_err <= 0.01;
    var_ok = var_ok && var_err <= 0.01;
    detail << (idx ? "; " : "") << "n1=" << c.size()
           << " n2=" << r.part.honest_stragglers.size() << " mean "
           << mean << "/" << 0.5 * inv_ii << " var " << var << "/" << spread;
  }
  return {mean_ok && var_ok,
          absl::StrCat("means ", mean_ok ? "within" : "outside",
                       " 1%, variances ", var_ok ? "within" : "outside",
                       " 1%: ", detail.str())};
}

Outcome Criterion4() {
  const DpBudget loose{1.0, 0.05, 1.0, 1};
  auto planned =
      OptimalVariances({8, 2, StragglerDistribution::Uniform(2)}, loose);
  if (!planned.ok()) return {false, std::string(planned.status().message())};
  auto cov = DisturbanceCovariance::FromCounts(6, 0, planned->plan);
  auto tail = MonteCarloTailCheck(*cov, 0, loose, 100000, kMaster);
  if (!tail.ok()) return {false, std::string(tail.status().message())};

  const DpBudget strict{6.0, 1e-5, 1.0, 1};
  auto reference =
      OptimalVariances({50, 10, StragglerDistribution::Uniform(10)}, strict);
  auto audit = WorstCaseAudit(50, 10, 10, reference->plan, strict);
  double worst_tail = 0.0;
  for (const RealizationResult& r : audit->realizations) {
    auto c = DisturbanceCovariance::FromCounts(r.counts.n1, r.counts.n2,
                                               reference->plan);
    auto m = ComputePrivacyLossMoments(*c, 0, strict.sensitivity);
    worst_tail = std::max(
        worst_tail, TwoSidedTail(m->mean, std::sqrt(m->variance), strict.epsilon));
  }
  const bool ok = tail->within_delta && worst_tail <= strict.delta;
  return {ok, absl::StrCat("loose: empirical ", tail->empirical_tail,
                           " vs 0.05 + 3 SE ", 3 * tail->binomial_se,
                           "; strict: worst analytic tail ", worst_tail,
                           " over ", audit->realizations.size(),
                           " realizations vs 1e-05")};
}

Outcome Criterion5() {
  bool ok = true;
  std::ostringstream detail;
  detail.precision(6);
  for (double eps : {3.0, 6.0, 9.0}) {
    const DpBudget budget{eps, 1e-5, 1.0, 1};
    const ThreatModel threat{50, 10, StragglerDistribution::Uniform(10)};
    auto r = OptimalVariances(threat, budget);
    if (!r.ok()) return {false, std::string(r.status().message())};
    const double thr = eps * eps / (2.0 * std::log(2.0 / budget.delta));
    const std::vector<double> g(11, 1.0 / 11);
    constexpr int kGrid = 500;
    const double dk = 3 * r->plan.sigma_k / kGrid;
    const double du = 3 * r->plan.sigma_u / kGrid;
    double best = std::numeric_limits<double>::infinity(), step = 0.0;
    for (int a = 0; a <= kGrid; ++a) {
      for (int b = 1; b <= kGrid; ++b) {
        const double k = a * dk, u = b * du;
        const double v = oracle::Expected(g, 50, k * k, u * u);
        step = std::max(step, oracle::Expected(g, 50, (k + dk) * (k + dk),
                                               (u + du) * (u + du)) - v);
        if (oracle::BindingLhs(k * k, u * u, 40) <= thr) {
          best = std::min(best, v);
        }
      }
    }
    const double tight = oracle::BindingLhs(
        r->plan.sigma_k * r->plan.sigma_k, r->plan.sigma_u * r->plan.sigma_u,
        40);
    auto audit = WorstCaseAudit(50, 10, 10, r->plan, budget);
    const bool cell = r->objective <= best + step &&
                      std::abs(tight / thr - 1.0) <= 1e-6 && audit->passed &&
                      audit->min_margin >= 0.0;
    ok = ok && cell;
    detail << (eps > 3 ? "; " : "") << "eps=" << eps << " objective "
           << r->objective << " vs grid " << best << " (+" << step
           << "), constraint ratio " << tight / thr << ", audit margin "
           << audit->min_margin;
  }
  return {ok, detail.str()};
}

Outcome Criterion6() {
  auto plan = [](int c, int s, double eps) {
    return OptimalVariances({50, c, StragglerDistribution::Uniform(s)},
                            {eps, 1e-5, 1.0, 1})
        ->plan;
  };
  int violations = 0;
  for (double eps : {3.0, 6.0, 9.0}) {
    const std::vector<int> cs = {5, 10, 20, 30};
    for (size_t k = 1; k < cs.size(); ++k) {
      const NoisePlan lo = plan(cs[k - 1], 10, eps), hi = plan(cs[k], 10, eps);
      violations += !(hi.sigma_u > lo.sigma_u) + !(hi.sigma_k > lo.sigma_k);
    }
    const std::vector<int> ss = {0, 10, 20};
    for (size_t k = 1; k < ss.size(); ++k) {
      const NoisePlan lo = plan(10, ss[k - 1], eps), hi = plan(10, ss[k], eps);
      violations += !(hi.sigma_u > lo.sigma_u) + !(hi.sigma_k < lo.sigma_k);
    }
  }
  for (int c : {5, 10, 20, 30}) {
    for (int s : {0, 10, 20}) {
      const NoisePlan p3 = plan(c, s, 3), p6 = plan(c, s, 6), p9 = plan(c, s, 9);
      violations += !(p3.sigma_u > p6.sigma_u && p6.sigma_u > p9.sigma_u);
      violations += !(p3.sigma_k > p6.sigma_k && p6.sigma_k > p9.sigma_k);
    }
  }
  const NoisePlan ref = plan(10, 10, 6);
  return {violations == 0,
          absl::StrCat(violations, " ordering violations; reference sigma_k ",
                       ref.sigma_k, ", sigma_u ", ref.sigma_u)};
}

ExperimentConfig Reference(int seeds) {
  ExperimentConfig c;
  c.task.num_clients = c.threat.num_clients;
  c.training.num_seeds = seeds;
  return c;
}

double PooledSe(const CellResult& a, const CellResult& b) {
  return std::hypot(a.se_gap, b.se_gap);
}

Outcome Criterion7() {
  const ExperimentConfig c = Reference(5);
  auto task = SyntheticTask::Generate(c.task);
  auto run = [&](const std::string& scheme) {
    return RunCell(c, {scheme, 6.0, 10, 10}, *task, std::nullopt);
  };
  const CellResult light = run("lightdp");
  const CellResult vanilla = run("vanilla-ldp");
  const CellResult smpc = run("smpc-dp-worstcase");
  for (const CellResult* r : {&light, &vanilla, &smpc}) {
    if (r->status != "ok") return {false, r->cell.Id() + " " + r->status};
  }
  const bool beats_vanilla =
      vanilla.mean_gap - light.mean_gap > PooledSe(light, vanilla);
  const bool beats_smpc = smpc.mean_gap - light.mean_gap > PooledSe(light, smpc);
  return {beats_vanilla && beats_smpc,
          absl::StrCat("mean final gap lightdp ", light.mean_gap, " (SE ",
                       light.se_gap, "), vanilla-ldp ", vanilla.mean_gap,
                       " (SE ", vanilla.se_gap, "), smpc-dp-worstcase ",
                       smpc.mean_gap, " (SE ", smpc.se_gap, "); beats vanilla: ",
                       beats_vanilla ? "yes" : "no",
                       ", beats smpc: ", beats_smpc ? "yes" : "no")};
}

Outcome Criterion8() {
  const ExperimentConfig c = Reference(20);
  auto task = SyntheticTask::Generate(c.task);
  bool ok = true;
  std::ostringstream detail;
  detail.precision(4);
  auto row = [&](const std::string& name, double eps,
                 const std::vector<std::pair<int, int>>& axis) {
    std::vector<CellResult> cells;
    for (auto [cbar, sbar] : axis) {
      cells.push_back(RunCell(c, {"lightdp", eps, cbar, sbar}, *task,
                              std::nullopt));
    }
    int inversions = 0;
    bool row_ok = true;
    detail << (detail.tellp() > 0 ? "; " : "") << name << " eps=" << eps << ":";
    for (size_t k = 0; k < cells.size(); ++k) {
      detail << " " << cells[k].mean_gap;
      if (cells[k].status != "ok") row_ok = false;
      if (k == 0) continue;
      const double drop = cells[k - 1].mean_gap - cells[k].mean_gap;
      if (drop > 0) {
        ++inversions;
        if (drop > PooledSe(cells[k - 1], cells[k])) row_ok = false;
      }
    }
    row_ok = row_ok && inversions <= 1;
    ok = ok && row_ok;
  };
  for (double eps : {3.0, 6.0, 9.0}) {
    row("Cbar{10,20,30,40}|Sbar=10", eps, {{10, 10}, {20, 10}, {30, 10}, {40, 10}});
    row("Sbar{0,10,20,30}|Cbar=15", eps, {{15, 0}, {15, 10}, {15, 20}, {15, 30}});
  }
  return {ok, detail.str()};
}

Outcome Criterion9() {
  const ExperimentConfig c = Reference(20);
  auto task = SyntheticTask::Generate(c.task);
  auto planned = PlanCell(c, BaseCell(c));
  if (!planned.ok()) return {false, std::string(planned.status().message())};
  std::vector<TrainingTrace> traces;
  std::vector<Eigen::VectorXd> points;
  for (uint64_t seed : TrainingSeeds(c)) {
    TrainingConfig tc;
    tc.rounds = c.budget.rounds;
    tc.learning_rate = c.training.learning_rate;
    tc.batch_size = c.training.batch_size;
    tc.clip_bound = c.budget.sensitivity / 2.0;
    tc.plan = planned->composed;
    tc.threat = planned->threat;
    tc.seed = seed;
    auto trace = RunTraining(tc, *task);
    if (!trace.ok()) return {false, std::string(trace.status().message())};
    for (auto& w : trace->Trajectory(task->dim())) points.push_back(w);
    traces.push_back(*std::move(trace));
  }
  auto constants = task->Constants(points);
  if (!constants.ok()) return {false, std::string(constants.status().message())};
  const int rounds = c.budget.rounds;
  int exceed = 0;
  double tightest = std::numeric_limits<double>::infinity();
  bool vacuous = false;
  for (int t = 1; t <= rounds; ++t) {
    double mean_gap = 0.0;
    double log_bound = std::numeric_limits<double>::infinity();
    for (const TrainingTrace& tr : traces) {
      mean_gap += tr.loss_gap[t] / traces.size();
      auto b = EvaluateConvergenceBound(
          *constants, planned->composed, c.threat.num_clients,
          std::span<const int>(tr.straggler_counts.data(), t), task->dim(),
          tr.initial_gap());
      if (!b.ok()) return {false, std::string(b.status().message())};
      log_bound = std::min(log_bound, b->log_bound);
      vacuous = vacuous || b->vacuous;
    }
    if (mean_gap > 0 && std::log(mean_gap) > log_bound) ++exceed;
    tightest = std::min(tightest, log_bound - std::log(mean_gap));
  }
  return {exceed == 0,
          absl::StrCat("rho ", constants->rho, ", l ", constants->l, ", beta ",
                       constants->beta, ", B ", constants->gradient_ratio,
                       "; rounds exceeding the bound: ", exceed, " of ", rounds,
                       "; smallest log(bound / mean gap) ", tightest,
                       vacuous ? "; bound vacuous (contraction >= 1)" : "")};
}

struct Criterion {
  int id;
  double limit_seconds;
  std::function<Outcome()> run;
};

}  // namespace
}  // namespace lightdp

int main(int argc, char** argv) {
  using lightdp::Criterion;
  std::set<int> expected;
  for (int a = 1; a < argc; ++a) {
    const std::string arg = argv[a];
    const std::string prefix = "--expect-fail=";
    if (arg.rfind(prefix, 0) != 0) {
      std::cerr << "usage: acceptance_test [--expect-fail=3,7]\n";
      return 2;
    }
    std::stringstream list(arg.substr(prefix.size()));
    std::string item;
    while (std::getline(list, item, ',')) expected.insert(std::stoi(item));
  }
  const std::vector<Criterion> criteria = {
      {1, 10, lightdp::Criterion1},   {2, 120, lightdp::Criterion2},
      {3, 120, lightdp::Criterion3},  {4, 60, lightdp::Criterion4},
      {5, 180, lightdp::Criterion5},  {6, 30, lightdp::Criterion6},
      {7, 600, lightdp::Criterion7},  {8, 1800, lightdp::Criterion8},
      {9, 600, lightdp::Criterion9},
  };
  std::vector<int> unexpected_failures, unexpected_passes;
  for (const Criterion& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    lightdp::Outcome o = c.run();
    const double secs = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - start)
                            .count();
    if (secs > c.limit_seconds) {
      o.passed = false;
      o.detail += absl::StrCat("; over the ", c.limit_seconds, " s budget");
    }
    std::printf("criterion %d: %s (%.1f s) %s\n", c.id,
                o.passed ? "PASS" : "FAIL", secs, o.detail.c_str());
    std::fflush(stdout);
    if (!o.passed && !expected.contains(c.id)) {
      unexpected_failures.push_back(c.id);
    }
    if (o.passed && expected.contains(c.id)) unexpected_passes.push_back(c.id);
  }
  for (int id : unexpected_passes) {
    std::printf("note: criterion %d passed but is listed as an expected failure\n",
                id);
  }
  if (!unexpected_failures.empty()) {
    std::printf("unexpected failures: %d\n",
                static_cast<int>(unexpected_failures.size()));
    return 1;
  }
  return 0;
}
